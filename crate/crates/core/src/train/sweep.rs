//! Grid over masking rates: pretrain then fine-tune per cell.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::PatchCache;
use super::finetune::finetune;
use super::pretrain::{pretrain, pretrain_checkpoint, PretrainSetup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p_time: f64,
    pub p_lead: f64,
    pub final_l_rec: f64,
    pub final_l_con: f64,
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_auroc: f64,
}

/// One row per `(p_time, p_lead)` pair, `p_time` outermost. Each cell writes
/// its logs under `out_dir/p_time=…_p_lead=…/` when `out_dir` is given.
pub fn sweep_masks(
    base: &PretrainSetup,
    finetune_cfg: &TrainConfig,
    cache: &PatchCache,
    p_times: &[f64],
    p_leads: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if p_times.is_empty() || p_leads.is_empty() {
        return Err(Error::EmptyInput("sweep grid"));
    }
    let mut rows = Vec::with_capacity(p_times.len() * p_leads.len());
    for &p_time in p_times {
        for &p_lead in p_leads {
            let mut setup = base.clone();
            setup.stdm.p_time = p_time;
            setup.stdm.p_lead = p_lead;
            let dir = out_dir.map(|d| d.join(format!("p_time={p_time}_p_lead={p_lead}")));
            if let Some(d) = &dir {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            let pre = pretrain(&setup, cache, dir.as_deref())?;
            let ck = pretrain_checkpoint(&setup, &pre.params, pre.steps.len() as u64, setup.train.epochs)?;
            let ft = finetune(&setup.model, finetune_cfg, Some(&ck), cache, dir.as_deref())?;
            let last = pre.epochs.last().map(|e| e.report);
            let m = ft.test.map(|t| t.metrics).ok_or(Error::EmptyInput("test split"))?;
            rows.push(SweepRow {
                p_time,
                p_lead,
                final_l_rec: last.map_or(f64::NAN, |r| r.l_rec),
                final_l_con: last.map_or(f64::NAN, |r| r.l_con),
                acc: m.acc,
                macro_f1: m.macro_f1,
                macro_auroc: m.macro_auroc,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

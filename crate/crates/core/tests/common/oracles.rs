/// Direct O(T²) evaluation of `irfft(m ⊙ rfft(x))` for one real row and a
/// real per-bin multiplier `m` of length `T / 2 + 1`.
pub fn dft_oracle(x: &[f64], m: &[f64]) -> Vec<f64> {
    let t = x.len();
    let k = t / 2 + 1;
    let spectrum: Vec<(f64, f64)> = (0..k)
        .map(|f| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &v)| {
                let a = -std::f64::consts::TAU * (f * n) as f64 / t as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect();
    (0..t)
        .map(|n| {
            let mut acc = 0.0;
            for (f, &(re, im)) in spectrum.iter().enumerate() {
                let a = std::f64::consts::TAU * (f * n) as f64 / t as f64;
                let term = m[f] * (re * a.cos() - im * a.sin());
                let edge = f == 0 || (t % 2 == 0 && f == t / 2);
                acc += if edge { term } else { 2.0 * term };
            }
            acc / t as f64
        })
        .collect()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pair_count_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Squared magnitude of a prewarped bilinear Butterworth of order `n`.
pub fn butter_sq(f: f64, fc: f64, fs: f64, n: i32, highpass: bool) -> f64 {
    let w = (std::f64::consts::PI * f / fs).tan();
    let wc = (std::f64::consts::PI * fc / fs).tan();
    let r = if highpass { wc / w } else { w / wc };
    1.0 / (1.0 + r.powi(2 * n))
}

/// Forward-backward gain of the 0.65–40 Hz order-4 band-pass, in dB.
pub fn bandpass_db(f: f64, fs: f64) -> f64 {
    20.0 * (butter_sq(f, 0.65, fs, 4, true) * butter_sq(f, 40.0, fs, 4, false)).log10()
}

use super::boost::clamp_propensity;

/// ATE weight of one row: `1/p` if treated, `1/(1-p)` otherwise, with `p`
/// clamped away from 0 and 1 first.
#[inline]
pub fn ate_weight(p: f64, t: u8) -> f64 {
    let p = clamp_propensity(p);
    if t == 1 {
        1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

pub fn ate_weights(p: &[f64], t: &[u8]) -> Vec<f64> {
    p.iter().zip(t).map(|(&p, &t)| ate_weight(p, t)).collect()
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size<'a>(w: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (s, s2) = w.into_iter().fold((0.0, 0.0), |(s, s2), &x| (s + x, s2 + x * x));
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

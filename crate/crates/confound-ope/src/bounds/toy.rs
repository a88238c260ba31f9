//! Closed-form likelihoods for the stateless confounded toy model.
//!
//! A hidden fair coin `U` tilts every one of `T` independent binary actions:
//! `P(A_t = 1 | U = 1) = √Γ/(1+√Γ)` and `P(A_t = 1 | U = 0) = 1/(1+√Γ)`,
//! while the outcome is `Y = U` regardless of the actions. The probability of
//! observing all actions 1 together with `Y = 1` is `Γ^{T/2} / (2(1+√Γ)^T)`,
//! versus `1 / (2(1+√Γ)^T)` with `Y = 0`: the confounder makes the lucky
//! record exponentially more likely even though actions do nothing.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("gamma {0} must be >= 1")]
    BadGamma(f64),
    #[error("horizon must be >= 1")]
    BadHorizon,
}

/// Exact rational with i128 terms; enough for the toy quantities at any
/// reasonable horizon.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: i128,
    pub den: i128,
}

impl Fraction {
    fn new(num: i128, den: i128) -> Self {
        let g = gcd(num.abs(), den.abs()).max(1);
        Fraction {
            num: num / g,
            den: den / g,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Writes `√gamma` as `p/q` with a small denominator when that is exact in
/// floating point, e.g. 4 -> 2/1, 2.25 -> 3/2.
fn rational_sqrt(gamma: f64) -> Option<(i128, i128)> {
    let s = gamma.sqrt();
    for q in 1..=64i128 {
        let p = (s * q as f64).round() as i128;
        if p <= 0 {
            continue;
        }
        if (p * p) as f64 == gamma * (q * q) as f64 {
            let g = gcd(p, q);
            return Some((p / g, q / g));
        }
    }
    None
}

/// Exact rational likelihoods `(P[all A=1, Y=1], P[all A=1, Y=0])` when
/// `√gamma` is rational: `p^T / (2(p+q)^T)` and `q^T / (2(p+q)^T)`.
pub fn toy_confounded_likelihood_exact(gamma: f64, t: u32) -> Option<(Fraction, Fraction)> {
    let (p, q) = rational_sqrt(gamma)?;
    // Overflow guard: (p+q)^T * 2 must fit in i128.
    let base = p + q;
    let mut denom: i128 = 2;
    let mut p_pow: i128 = 1;
    let mut q_pow: i128 = 1;
    for _ in 0..t {
        denom = denom.checked_mul(base)?;
        p_pow = p_pow.checked_mul(p)?;
        q_pow = q_pow.checked_mul(q)?;
    }
    Some((Fraction::new(p_pow, denom), Fraction::new(q_pow, denom)))
}

/// Likelihoods `(P[all A=1, Y=1], P[all A=1, Y=0])` for confounding level
/// `gamma` over `t` steps. Uses exact rational arithmetic whenever `√gamma`
/// is rational, so ratios like `p1/p0 = Γ^{T/2}` hold to machine precision.
pub fn toy_confounded_likelihood(gamma: f64, t: u32) -> Result<(f64, f64), ToyError> {
    if !(gamma >= 1.0) {
        return Err(ToyError::BadGamma(gamma));
    }
    if t == 0 {
        return Err(ToyError::BadHorizon);
    }
    if let Some((p1, p0)) = toy_confounded_likelihood_exact(gamma, t) {
        return Ok((p1.to_f64(), p0.to_f64()));
    }
    let s = gamma.sqrt();
    let denom = 2.0 * (1.0 + s).powi(t as i32);
    Ok((s.powi(t as i32) / denom, 1.0 / denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_values_for_gamma_4_t_2() {
        let (p1, p0) = toy_confounded_likelihood(4.0, 2).unwrap();
        assert_eq!(p1, 2.0 / 9.0);
        assert_eq!(p0, 1.0 / 18.0);
    }

    #[test]
    fn no_confounding_is_symmetric() {
        for t in 1..=6u32 {
            let (p1, p0) = toy_confounded_likelihood(1.0, t).unwrap();
            let expect = 0.5f64.powi(t as i32 + 1);
            assert_eq!(p1, expect);
            assert_eq!(p0, expect);
        }
    }

    #[test]
    fn likelihood_ratio_is_gamma_to_the_half_horizon() {
        for &gamma in &[1.0, 2.25, 4.0, 9.0] {
            for t in 1..=6u32 {
                let (p1, p0) = toy_confounded_likelihood(gamma, t).unwrap();
                let ratio = p1 / p0;
                let expect = gamma.powf(t as f64 / 2.0);
                assert!(
                    (ratio - expect).abs() <= 1e-12 * expect,
                    "gamma {gamma} t {t}: {ratio} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn irrational_gamma_uses_float_path() {
        let (p1, p0) = toy_confounded_likelihood(2.0, 3).unwrap();
        let s = 2.0f64.sqrt();
        assert!((p1 / p0 - s.powi(3)).abs() < 1e-12);
        assert!(toy_confounded_likelihood_exact(2.0, 3).is_none());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(toy_confounded_likelihood(0.5, 2).is_err());
        assert!(toy_confounded_likelihood(4.0, 0).is_err());
    }
}

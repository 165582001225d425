//! Difficulty and trainability weights from verifier success counts.
//!
//! With a uniform prior, `s` successes out of `G` rollouts give the posterior
//! `P ~ Beta(s + 1, G - s + 1)` on the instance's success rate. The two
//! weights are closed-form posterior expectations:
//!
//! ```text
//! d = E[-log P]     = psi(G + 2) - psi(s + 1)
//! r = E[P (1 - P)]  = (s + 1)(G - s + 1) / ((G + 2)(G + 3))
//! ```
//!
//! `d` falls monotonically in `s`; `r` is symmetric about `G/2` and peaks
//! there. Both are then rescaled to mean one over the pool.

use crate::error::{Error, Result};

/// Digamma function for `x > 0`.
///
/// Shifts the argument up to `x >= 6` with `psi(x) = psi(x + 1) - 1/x`, then
/// applies the asymptotic expansion through the `x^-14` term. Absolute error is
/// below `1e-12` for `x >= 1`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::input(format!("digamma domain is x > 0, got {x}")));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B_2k / (2k).
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + x.ln() - 0.5 * inv - series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierWeights {
    /// Difficulty `d_i`.
    pub d: Vec<f64>,
    /// Trainability `r_i`.
    pub r: Vec<f64>,
    /// `d` rescaled to mean one.
    pub d_tilde: Vec<f64>,
    /// `r` rescaled to mean one.
    pub r_tilde: Vec<f64>,
}

impl VerifierWeights {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// Difficulty for `s` successes out of `g`.
pub fn difficulty(s: u32, g: u32) -> f64 {
    // Both arguments are >= 1, inside the digamma domain.
    digamma(g as f64 + 2.0).unwrap() - digamma(s as f64 + 1.0).unwrap()
}

/// Trainability for `s` successes out of `g`.
pub fn trainability(s: u32, g: u32) -> f64 {
    let (s, g) = (s as f64, g as f64);
    (s + 1.0) * (g - s + 1.0) / ((g + 2.0) * (g + 3.0))
}

/// Per-instance weights for success counts `s` out of a shared rollout count `g`.
pub fn compute_weights(s: &[u32], g: u32) -> Result<VerifierWeights> {
    if s.is_empty() {
        return Err(Error::input("compute_weights: no instances"));
    }
    if g == 0 {
        return Err(Error::input("compute_weights: rollout count must be positive"));
    }
    if let Some((row, &v)) = s.iter().enumerate().find(|(_, &v)| v > g) {
        return Err(Error::OutOfRange {
            block: "success_counts",
            row,
            value: v as i64,
            max: g,
        });
    }
    // Only G + 1 distinct values exist; tabulate them once.
    let d_table: Vec<f64> = (0..=g).map(|k| difficulty(k, g)).collect();
    let r_table: Vec<f64> = (0..=g).map(|k| trainability(k, g)).collect();
    let d: Vec<f64> = s.iter().map(|&k| d_table[k as usize]).collect();
    let r: Vec<f64> = s.iter().map(|&k| r_table[k as usize]).collect();
    let d_tilde = mean_one(&d);
    let r_tilde = mean_one(&r);
    Ok(VerifierWeights {
        d,
        r,
        d_tilde,
        r_tilde,
    })
}

fn mean_one(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x / mean).collect()
}

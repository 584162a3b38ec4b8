//! Dirichlet expectations and the Newton fixed-point update for
//! Dirichlet concentration parameters.

use statrs::function::gamma::digamma;

/// Lower bound for concentration parameters after an update step.
pub const PRIOR_FLOOR: f64 = 1e-8;

/// E[log x_i] under Dirichlet(v): psi(v_i) - psi(sum v).
pub fn dirichlet_expectation(v: &[f64]) -> Vec<f64> {
    let psi_total = digamma(v.iter().sum());
    v.iter().map(|&x| digamma(x) - psi_total).collect()
}

/// Trigamma via the ascending recurrence and the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + inv2 * 0.5
        + inv * inv2 * (1.0 / 6.0)
        - inv * inv2 * inv2 * (1.0 / 30.0)
        + inv * inv2 * inv2 * inv2 * (1.0 / 42.0)
        - inv * inv2 * inv2 * inv2 * inv2 * (1.0 / 30.0)
        + inv * inv2 * inv2 * inv2 * inv2 * inv2 * (5.0 / 66.0)
}

/// One damped Newton step of the Dirichlet maximum-likelihood fixed
/// point, given `logphat` = mean observed E[log theta] over `n_obs`
/// observations. The Hessian is diagonal plus rank one, so the step is
/// closed-form. Returns None when an intermediate is non-finite (the
/// caller keeps the old prior); entries are floored at [`PRIOR_FLOOR`].
pub fn newton_prior_step(
    prior: &[f64],
    logphat: &[f64],
    n_obs: f64,
    rho: f64,
) -> Option<Vec<f64>> {
    debug_assert_eq!(prior.len(), logphat.len());
    let sum: f64 = prior.iter().sum();
    let psi_sum = digamma(sum);
    let gradf: Vec<f64> = prior
        .iter()
        .zip(logphat)
        .map(|(&a, &lp)| n_obs * (psi_sum - digamma(a) + lp))
        .collect();
    let c = n_obs * trigamma(sum);
    let q: Vec<f64> = prior.iter().map(|&a| -n_obs * trigamma(a)).collect();
    let b: f64 = gradf.iter().zip(&q).map(|(g, qq)| g / qq).sum::<f64>()
        / (1.0 / c + q.iter().map(|qq| 1.0 / qq).sum::<f64>());
    let mut updated = Vec::with_capacity(prior.len());
    for ((&a, &g), &qq) in prior.iter().zip(&gradf).zip(&q) {
        let step = -(g - b) / qq;
        let next = a + rho * step;
        if !next.is_finite() {
            return None;
        }
        updated.push(next.max(PRIOR_FLOOR));
    }
    Some(updated)
}

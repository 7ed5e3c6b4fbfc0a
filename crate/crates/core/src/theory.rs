//! Expected-suboptimality bound for SySCD with strongly convex `g_i`.
//!
//! Three nested contraction factors:
//!
//! * inside a bucket, SDCA contracts by `1 - rho` per step with
//!   `rho = (1/n) mu / (K P gamma + mu)` (the thread surrogate is
//!   `K P gamma`-smooth);
//! * one thread's local round of `T3` bucket visits of `T4` steps solves its
//!   subproblem to accuracy
//!   `theta = (1 - [1 - (1 - (1/n) mu / (mu + gamma K P))^T4] (B/n) mu / (mu + c_A gamma K P))^T3`;
//! * the two replica levels turn `theta` into the per-global-round factor
//!   `1 - [1 - (1 - (1 - theta)(gamma K c_A + mu)/(gamma K P c_A + mu))^T2] mu / (mu + K gamma c_A)`,
//!   applied `T1` times to the initial suboptimality `eps0`.
//!
//! `c_A` is the largest eigenvalue of `A^T A` (squared operator norm), as
//! computed by [`compute_stats`](crate::dataset::compute_stats).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub gamma: f64,
    pub mu: f64,
    pub c_a: f64,
    pub n: usize,
    pub bucket_size: usize,
    pub nodes: usize,
    pub threads_per_node: usize,
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub t4: u64,
    pub eps0: f64,
}

impl RateParams {
    /// Parameters for the default schedule `T4 = B`, `T3 = n / (P B K)`
    /// (rounded up), `T2 = 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_default_schedule(
        gamma: f64,
        mu: f64,
        c_a: f64,
        n: usize,
        bucket_size: usize,
        nodes: usize,
        threads_per_node: usize,
        eps0: f64,
    ) -> Self {
        let t3 = n.div_ceil(bucket_size * nodes * threads_per_node).max(1) as u64;
        RateParams {
            gamma,
            mu,
            c_a,
            n,
            bucket_size,
            nodes,
            threads_per_node,
            t1: 1,
            t2: 1,
            t3,
            t4: bucket_size as u64,
            eps0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.gamma, self.mu, self.eps0];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument("gamma, mu and eps0 must be positive".into()));
        }
        if !(self.c_a >= 0.0 && self.c_a.is_finite()) {
            return Err(Error::InvalidArgument("c_A must be non-negative".into()));
        }
        if self.n == 0 || self.bucket_size == 0 || self.nodes == 0 || self.threads_per_node == 0 {
            return Err(Error::InvalidArgument("n, B, K and P must be positive".into()));
        }
        Ok(())
    }

    fn kp(&self) -> f64 {
        (self.nodes * self.threads_per_node) as f64
    }
}

/// `x^k` for a non-negative integer exponent.
fn pow(x: f64, k: u64) -> f64 {
    match i32::try_from(k) {
        Ok(k) => x.powi(k),
        Err(_) => x.powf(k as f64),
    }
}

/// SDCA per-step contraction `rho = (1/n) mu / (K P gamma + mu)`.
pub fn sdca_step_rate(params: &RateParams) -> f64 {
    let mu = params.mu;
    mu / (params.kp() * params.gamma + mu) / params.n as f64
}

/// Accuracy `theta` to which one local round solves a thread subproblem.
pub fn theta_bound(params: &RateParams) -> f64 {
    let RateParams { gamma, mu, c_a, .. } = *params;
    let n = params.n as f64;
    let b = params.bucket_size as f64;
    let kp = params.kp();
    let inner = 1.0 - pow(1.0 - mu / (mu + gamma * kp) / n, params.t4);
    pow(1.0 - inner * (b / n) * (mu / (mu + c_a * gamma * kp)), params.t3)
}

/// Contraction of the expected suboptimality per global round.
pub fn round_factor(params: &RateParams) -> f64 {
    let RateParams { gamma, mu, c_a, .. } = *params;
    let k = params.nodes as f64;
    let kp = params.kp();
    let theta = theta_bound(params);
    let ratio = (gamma * k * c_a + mu) / (gamma * kp * c_a + mu);
    let bracket = 1.0 - pow(1.0 - (1.0 - theta) * ratio, params.t2);
    1.0 - bracket * mu / (mu + k * gamma * c_a)
}

/// Bound on `E[F(alpha) - F*]` after `T1` global rounds.
pub fn rate_bound(params: &RateParams) -> f64 {
    pow(round_factor(params), params.t1) * params.eps0
}

/// `(round, bound)` for rounds `0..=params.t1`.
pub fn bound_sequence(params: &RateParams) -> Vec<(u64, f64)> {
    (0..=params.t1)
        .map(|t| (t, rate_bound(&RateParams { t1: t, ..*params })))
        .collect()
}

/// Smallest `T1` with `rate_bound <= target`.
pub fn epochs_to_epsilon(params: &RateParams, target: f64) -> Result<u64> {
    params.validate()?;
    if target.is_nan() || target <= 0.0 {
        return Err(Error::InvalidArgument("target must be positive".into()));
    }
    if target >= params.eps0 {
        return Ok(0);
    }
    rounds_for_factor(round_factor(params), params.eps0, target)
}

/// Smallest `t` with `q^t eps0 <= target`, for `0 < target < eps0`.
fn rounds_for_factor(q: f64, eps0: f64, target: f64) -> Result<u64> {
    if q.is_nan() || q >= 1.0 {
        return Err(Error::NoContraction);
    }
    if q <= 0.0 {
        return Ok(1);
    }
    let at = |t: u64| pow(q, t) * eps0;
    let guess = ((target / eps0).ln() / q.ln()).ceil().max(1.0);
    if !guess.is_finite() || guess > u64::MAX as f64 / 2.0 {
        return Err(Error::NoContraction);
    }
    // the logarithm can be off by one in either direction
    let mut t = guess as u64;
    while t > 0 && at(t - 1) <= target {
        t -= 1;
    }
    while at(t) > target {
        t += 1;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RateParams {
        RateParams {
            gamma: 1.0,
            mu: 1.0,
            c_a: 2.0,
            n: 64,
            bucket_size: 8,
            nodes: 1,
            threads_per_node: 1,
            t1: 5,
            t2: 1,
            t3: 8,
            t4: 8,
            eps0: 1.0,
        }
    }

    #[test]
    fn rho_limits() {
        let p = RateParams {
            n: 1,
            mu: 1e15,
            ..base()
        };
        assert!((sdca_step_rate(&p) - 1.0).abs() < 1e-12);
        let p = RateParams { n: 10, ..base() };
        assert_eq!(sdca_step_rate(&p), 1.0 / 20.0);
    }

    #[test]
    fn rho_reference_values() {
        let p = RateParams {
            n: 100,
            gamma: 1.0,
            mu: 0.5,
            nodes: 2,
            threads_per_node: 4,
            ..base()
        };
        // 0.01 * 0.5 / 8.5
        assert!((sdca_step_rate(&p) - 0.01 * 0.5 / 8.5).abs() < 1e-15);
    }

    #[test]
    fn empty_loops_give_no_progress() {
        assert_eq!(theta_bound(&RateParams { t3: 0, ..base() }), 1.0);
        assert_eq!(theta_bound(&RateParams { t4: 0, ..base() }), 1.0);
        assert_eq!(
            rate_bound(&RateParams {
                t1: 0,
                eps0: 3.5,
                ..base()
            }),
            3.5
        );
        assert_eq!(
            rate_bound(&RateParams {
                t2: 0,
                eps0: 3.5,
                ..base()
            }),
            3.5
        );
    }

    #[test]
    fn epochs_trivial_target() {
        assert_eq!(epochs_to_epsilon(&base(), 1.0).unwrap(), 0);
    }

    #[test]
    fn epochs_no_contraction() {
        let p = RateParams { t2: 0, ..base() };
        assert!(matches!(epochs_to_epsilon(&p, 0.5), Err(Error::NoContraction)));
    }

    #[test]
    fn epochs_bracket_target() {
        let p = base();
        for target in [0.9, 0.5, 0.1, 1e-3, 1e-9] {
            let t = epochs_to_epsilon(&p, target).unwrap();
            assert!(rate_bound(&RateParams { t1: t, ..p }) <= target);
            assert!(rate_bound(&RateParams { t1: t - 1, ..p }) > target);
        }
    }

    #[test]
    fn halving_factor_needs_three_rounds() {
        assert_eq!(rounds_for_factor(0.5, 1.0, 0.125).unwrap(), 3);
        assert!(matches!(rounds_for_factor(1.0, 1.0, 0.5), Err(Error::NoContraction)));
    }

    #[test]
    fn monotone_in_each_parameter() {
        let p = base();
        let b = |q: RateParams| rate_bound(&q);
        for k in 1..10u64 {
            assert!(b(RateParams { t1: k + 1, ..p }) <= b(RateParams { t1: k, ..p }));
            assert!(b(RateParams { t2: k + 1, ..p }) <= b(RateParams { t2: k, ..p }));
            assert!(b(RateParams { t3: k + 1, ..p }) <= b(RateParams { t3: k, ..p }));
            assert!(b(RateParams { t4: k + 1, ..p }) <= b(RateParams { t4: k, ..p }));
            let c = k as f64;
            assert!(b(RateParams { c_a: c + 0.5, ..p }) >= b(RateParams { c_a: c, ..p }));
            let t = k as usize;
            assert!(
                b(RateParams {
                    threads_per_node: t + 1,
                    ..p
                }) >= b(RateParams {
                    threads_per_node: t,
                    ..p
                })
            );
        }
    }

    #[test]
    fn theta_and_factor_in_unit_interval() {
        for n in [1usize, 8, 100] {
            for c_a in [1e-3, 0.3, 5.0] {
                for mu in [1e-4, 1.0, 1e3] {
                    let p = RateParams {
                        n,
                        c_a,
                        mu,
                        bucket_size: 1,
                        ..base()
                    };
                    let theta = theta_bound(&p);
                    let q = round_factor(&p);
                    assert!(theta > 0.0 && theta <= 1.0, "{theta}");
                    assert!((0.0..=1.0).contains(&q), "{q}");
                }
            }
        }
    }

    #[test]
    fn sequence_starts_at_eps0() {
        let s = bound_sequence(&RateParams { eps0: 2.0, ..base() });
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], (0, 2.0));
        assert!(s.windows(2).all(|w| w[1].1 < w[0].1));
    }
}

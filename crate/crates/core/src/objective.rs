//! The GLM objective `F(alpha) = f(A alpha) + sum_i g_i(alpha_i)` and its
//! one-dimensional coordinate updates.
//!
//! Solvers never materialize `A alpha` from scratch; they carry a shared
//! vector that is updated by `delta * x_j` after every coordinate step. For the
//! squared loss that vector is the residual `A alpha - y` (which is also
//! `grad f`), for the logistic loss it is `A alpha` itself. The public
//! functions here take the plain `v = A alpha` and are used as references.

use crate::dataset::{Column, DatasetStats, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `f(v) = 1/2 ||v - y||^2`
    SquaredError,
    /// `f(v) = sum_j log(1 + exp(-y_j v_j))`
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothLoss {
    pub kind: LossKind,
}

impl SmoothLoss {
    pub const SQUARED: SmoothLoss = SmoothLoss {
        kind: LossKind::SquaredError,
    };
    pub const LOGISTIC: SmoothLoss = SmoothLoss {
        kind: LossKind::Logistic,
    };

    /// Smoothness constant of the scalar component.
    pub fn gamma(&self) -> f64 {
        match self.kind {
            LossKind::SquaredError => 1.0,
            LossKind::Logistic => 0.25,
        }
    }
}

/// `g_i(a) = lambda / 2 * a^2`, strongly convex with `mu = lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    lambda: f64,
}

impl Regularizer {
    pub fn l2(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Regularizer { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn value(&self, a: f64) -> f64 {
        0.5 * self.lambda * a * a
    }
}

/// Numerically safe `log(1 + exp(z))`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Numerically safe logistic sigmoid.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct GlmProblem {
    pub data: LabeledDataset,
    pub loss: SmoothLoss,
    pub reg: Regularizer,
    pub stats: DatasetStats,
}

impl GlmProblem {
    pub fn new(data: LabeledDataset, loss: SmoothLoss, reg: Regularizer) -> Result<Self> {
        let stats = DatasetStats::from_matrix(&data.matrix)?;
        Self::with_stats(data, loss, reg, stats)
    }

    pub fn with_stats(data: LabeledDataset, loss: SmoothLoss, reg: Regularizer, stats: DatasetStats) -> Result<Self> {
        if !data.labels_on_rows() || data.labels.len() != data.matrix.n_rows() {
            return Err(Error::DimensionMismatch(
                "the loss couples labels to rows; load with coordinates-are-features".into(),
            ));
        }
        if stats.column_sq_norms.len() != data.matrix.n_cols() {
            return Err(Error::DimensionMismatch("stats computed for a different matrix".into()));
        }
        if loss.kind == LossKind::Logistic && data.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidData("logistic loss needs labels in {-1, +1}".into()));
        }
        Ok(GlmProblem { data, loss, reg, stats })
    }

    pub fn n_coordinates(&self) -> usize {
        self.data.matrix.n_cols()
    }

    pub fn n_rows(&self) -> usize {
        self.data.matrix.n_rows()
    }

    pub fn labels(&self) -> &[f64] {
        &self.data.labels
    }

    #[inline]
    pub fn column(&self, j: usize) -> Column<'_> {
        self.data.matrix.column(j)
    }

    /// `f(v)` for `v = A alpha`.
    pub fn loss_value(&self, v: &[f64]) -> f64 {
        let y = self.labels();
        match self.loss.kind {
            LossKind::SquaredError => 0.5 * v.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            LossKind::Logistic => v.iter().zip(y).map(|(a, b)| softplus(-b * a)).sum(),
        }
    }

    /// Solver-side representation of `v`: the residual `v - y` for the squared
    /// loss, `v` itself for the logistic loss.
    pub(crate) fn shared_from_v(&self, mut v: Vec<f64>) -> Vec<f64> {
        if self.loss.kind == LossKind::SquaredError {
            for (a, b) in v.iter_mut().zip(self.labels()) {
                *a -= b;
            }
        }
        v
    }

    /// Shared vector for `alpha = 0`.
    pub(crate) fn initial_shared(&self) -> Vec<f64> {
        self.shared_from_v(vec![0.0; self.n_rows()])
    }

    /// `grad f` evaluated from the shared representation.
    pub(crate) fn gradient_from_shared(&self, shared: &[f64], out: &mut [f64]) {
        match self.loss.kind {
            LossKind::SquaredError => out.copy_from_slice(shared),
            LossKind::Logistic => {
                for ((g, &v), &y) in out.iter_mut().zip(shared).zip(self.labels()) {
                    *g = -y * sigmoid(-y * v);
                }
            }
        }
    }

    /// Exact coordinate minimizer computed against the shared representation.
    pub(crate) fn exact_step_shared(&self, j: usize, alpha_j: f64, shared: &[f64]) -> Result<f64> {
        let col = self.column(j);
        match self.loss.kind {
            LossKind::SquaredError => {
                l2_quadratic_step(col.dot(shared), self.stats.column_sq_norms[j], self.reg.lambda, alpha_j)
            }
            LossKind::Logistic => {
                let y = self.labels();
                match col {
                    Column::Dense(x) => self.logistic_newton(alpha_j, col.l1_norm(), || {
                        x.iter().zip(shared).zip(y).map(|((&a, &v), &l)| (a, v, l))
                    }),
                    Column::Sparse { rows, values } => self.logistic_newton(alpha_j, col.l1_norm(), || {
                        rows.iter()
                            .zip(values)
                            .map(|(&i, &a)| (a, shared[i as usize], y[i as usize]))
                    }),
                }
            }
        }
    }

    /// Safeguarded Newton on `phi(d) = sum softplus(-y (v + x d)) + lambda/2 (alpha + d)^2`.
    ///
    /// `entries` yields `(x_i, v_i, y_i)` over the support of the column. The
    /// minimizer lies in `[-alpha - |x|_1 / lambda, -alpha + |x|_1 / lambda]`
    /// because each loss derivative is bounded by one; Newton steps leaving the
    /// current bracket are replaced by bisection.
    pub(crate) fn logistic_newton<I, F>(&self, alpha_j: f64, l1: f64, entries: F) -> Result<f64>
    where
        I: Iterator<Item = (f64, f64, f64)>,
        F: Fn() -> I,
    {
        const MAX_ITERS: usize = 20;
        const STEP_TOL: f64 = 1e-12;
        let lambda = self.reg.lambda;
        let radius = l1 / lambda;
        let mut lo = -alpha_j - radius;
        let mut hi = -alpha_j + radius;
        if radius == 0.0 {
            return finite(-alpha_j, "logistic coordinate update");
        }
        let derivs = |d: f64| {
            let mut d1 = lambda * (alpha_j + d);
            let mut d2 = lambda;
            for (x, v, y) in entries() {
                let z = -y * (v + x * d);
                let s = sigmoid(z);
                d1 -= x * y * s;
                d2 += x * x * s * (1.0 - s);
            }
            (d1, d2)
        };
        let mut delta = 0.0f64.clamp(lo, hi);
        for _ in 0..MAX_ITERS {
            let (d1, d2) = derivs(delta);
            if !(d1.is_finite() && d2.is_finite()) {
                return Err(Error::NonFinite("logistic coordinate update"));
            }
            if d1 > 0.0 {
                hi = delta;
            } else if d1 < 0.0 {
                lo = delta;
            } else {
                break;
            }
            let newton = delta - d1 / d2;
            // a converged Newton step can round onto the bracket end it just set
            if (newton - delta).abs() < STEP_TOL {
                delta = newton;
                break;
            }
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = next - delta;
            delta = next;
            if step.abs() < STEP_TOL {
                break;
            }
        }
        finite(delta, "logistic coordinate update")
    }
}

#[inline]
fn finite(x: f64, what: &'static str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Minimizer of `lin * d + curv / 2 * d^2 + lambda / 2 (alpha + d)^2`.
#[inline]
pub(crate) fn l2_quadratic_step(lin: f64, curv: f64, lambda: f64, alpha: f64) -> Result<f64> {
    finite(-(lin + lambda * alpha) / (curv + lambda), "coordinate update")
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!(
            "{what} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

/// `F(alpha) = f(A alpha) + sum_i g_i(alpha_i)` with `A alpha` recomputed.
pub fn full_objective(p: &GlmProblem, alpha: &[f64]) -> Result<f64> {
    let v = p.data.matrix.matvec(alpha)?;
    let reg: f64 = alpha.iter().map(|&a| p.reg.value(a)).sum();
    Ok(p.loss_value(&v) + reg)
}

/// Componentwise `grad f(v)`.
pub fn grad_f(p: &GlmProblem, v: &[f64]) -> Result<Vec<f64>> {
    check_len(v.len(), p.n_rows(), "shared vector")?;
    let y = p.labels();
    Ok(match p.loss.kind {
        LossKind::SquaredError => v.iter().zip(y).map(|(a, b)| a - b).collect(),
        LossKind::Logistic => v.iter().zip(y).map(|(&a, &b)| -b * sigmoid(-b * a)).collect(),
    })
}

/// `argmin_d f(v + x_j d) + g_j(alpha_j + d)`.
pub fn exact_coordinate_update(p: &GlmProblem, j: usize, alpha_j: f64, v: &[f64]) -> Result<f64> {
    check_len(v.len(), p.n_rows(), "shared vector")?;
    if j >= p.n_coordinates() {
        return Err(Error::InvalidArgument(format!("coordinate {j} out of range")));
    }
    match p.loss.kind {
        LossKind::SquaredError => {
            let y = p.labels();
            let lin: f64 = p.column(j).iter().map(|(i, a)| a * (v[i] - y[i])).sum();
            l2_quadratic_step(lin, p.stats.column_sq_norms[j], p.reg.lambda, alpha_j)
        }
        LossKind::Logistic => p.exact_step_shared(j, alpha_j, v),
    }
}

/// Quadratic model each thread minimizes between synchronizations:
///
/// `[grad f(v)^T + K gamma (v_k - v)] A d + gamma P K / 2 ||A d||^2`
///
/// where `v` is the shared vector at the last global sync and `v_k` the
/// node replica at the start of the local round.
#[derive(Debug, Clone)]
pub struct SurrogateContext {
    pub grad_at_sync: Vec<f64>,
    pub v_global: Vec<f64>,
    pub v_node: Vec<f64>,
    /// `a = gamma * P * K`.
    pub scale_a: f64,
    /// `K * gamma`, the weight of the node shift.
    pub shift_scale: f64,
}

impl SurrogateContext {
    pub fn new(
        p: &GlmProblem,
        v_global: Vec<f64>,
        v_node: Vec<f64>,
        nodes: usize,
        threads_per_node: usize,
    ) -> Result<Self> {
        check_len(v_global.len(), p.n_rows(), "global vector")?;
        check_len(v_node.len(), p.n_rows(), "node vector")?;
        if nodes == 0 || threads_per_node == 0 {
            return Err(Error::InvalidArgument("node and thread counts must be positive".into()));
        }
        let gamma = p.loss.gamma();
        Ok(SurrogateContext {
            grad_at_sync: grad_f(p, &v_global)?,
            v_global,
            v_node,
            scale_a: gamma * (threads_per_node * nodes) as f64,
            shift_scale: gamma * nodes as f64,
        })
    }

    /// Linear coefficient of the surrogate in the direction `e_j` at `v_thread`.
    pub fn linear_coefficient(&self, col: Column<'_>, v_thread: &[f64]) -> f64 {
        col.iter()
            .map(|(i, a)| {
                a * (self.grad_at_sync[i]
                    + self.shift_scale * (self.v_node[i] - self.v_global[i])
                    + self.scale_a * (v_thread[i] - self.v_node[i]))
            })
            .sum()
    }
}

/// `argmin_d` of the thread surrogate plus `g_j(alpha_j + d)`.
pub fn surrogate_coordinate_update(
    ctx: &SurrogateContext,
    p: &GlmProblem,
    j: usize,
    alpha_j: f64,
    v_thread: &[f64],
) -> Result<f64> {
    check_len(v_thread.len(), p.n_rows(), "thread vector")?;
    if j >= p.n_coordinates() {
        return Err(Error::InvalidArgument(format!("coordinate {j} out of range")));
    }
    let col = p.column(j);
    let lin = ctx.linear_coefficient(col, v_thread);
    l2_quadratic_step(lin, ctx.scale_a * p.stats.column_sq_norms[j], p.reg.lambda, alpha_j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_dense, ColumnMatrix};
    use approx::assert_relative_eq;

    fn tiny(loss: SmoothLoss, x: f64, y: f64, lambda: f64) -> GlmProblem {
        let m = ColumnMatrix::from_rows(&[vec![x]]).unwrap();
        let d = LabeledDataset::new(m, vec![y]).unwrap();
        GlmProblem::new(d, loss, Regularizer::l2(lambda).unwrap()).unwrap()
    }

    #[test]
    fn lambda_must_be_positive() {
        assert!(Regularizer::l2(0.0).is_err());
        assert!(Regularizer::l2(-1.0).is_err());
        assert!(Regularizer::l2(f64::NAN).is_err());
    }

    #[test]
    fn logistic_rejects_non_binary_labels() {
        let m = ColumnMatrix::from_rows(&[vec![1.0]]).unwrap();
        let d = LabeledDataset::new(m, vec![0.5]).unwrap();
        assert!(GlmProblem::new(d, SmoothLoss::LOGISTIC, Regularizer::l2(1.0).unwrap()).is_err());
    }

    #[test]
    fn ridge_at_zero_is_half_label_norm() {
        let d = generate_synthetic_dense(20, 3, 1).unwrap();
        let want = 0.5 * d.labels.iter().map(|y| y * y).sum::<f64>();
        let p = GlmProblem::new(d, SmoothLoss::SQUARED, Regularizer::l2(1.0).unwrap()).unwrap();
        assert_eq!(full_objective(&p, &[0.0; 3]).unwrap(), want);
    }

    #[test]
    fn logistic_at_zero_is_m_ln2() {
        let d = generate_synthetic_dense(17, 3, 1).unwrap();
        let p = GlmProblem::new(d, SmoothLoss::LOGISTIC, Regularizer::l2(1.0).unwrap()).unwrap();
        assert_relative_eq!(
            full_objective(&p, &[0.0; 3]).unwrap(),
            17.0 * 2f64.ln(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn objective_length_mismatch() {
        let p = tiny(SmoothLoss::SQUARED, 1.0, 1.0, 1.0);
        assert!(full_objective(&p, &[0.0, 0.0]).is_err());
        assert!(grad_f(&p, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn squared_grad_vanishes_at_labels() {
        let d = generate_synthetic_dense(10, 2, 4).unwrap();
        let y = d.labels.clone();
        let p = GlmProblem::new(d, SmoothLoss::SQUARED, Regularizer::l2(1.0).unwrap()).unwrap();
        assert!(grad_f(&p, &y).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn logistic_grad_at_zero() {
        let d = generate_synthetic_dense(10, 2, 4).unwrap();
        let y = d.labels.clone();
        let p = GlmProblem::new(d, SmoothLoss::LOGISTIC, Regularizer::l2(1.0).unwrap()).unwrap();
        let g = grad_f(&p, &[0.0; 10]).unwrap();
        for (gi, yi) in g.iter().zip(&y) {
            assert_eq!(*gi, -yi / 2.0);
        }
    }

    #[test]
    fn logistic_is_finite_at_extremes() {
        for z in [-700.0, -50.0, 0.0, 50.0, 700.0, 1e5, -1e5] {
            assert!(softplus(z).is_finite());
            assert!(sigmoid(z).is_finite());
        }
        assert_eq!(softplus(-800.0), 0.0);
        assert_relative_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn ridge_already_optimal() {
        let p = tiny(SmoothLoss::SQUARED, 2.0, 3.0, 1.0);
        assert_eq!(exact_coordinate_update(&p, 0, 0.0, &[3.0]).unwrap(), 0.0);
    }

    #[test]
    fn ridge_one_by_one() {
        let p = tiny(SmoothLoss::SQUARED, 1.0, 1.0, 1.0);
        assert_eq!(exact_coordinate_update(&p, 0, 0.0, &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn zero_column_ridge_returns_to_origin() {
        let p = tiny(SmoothLoss::SQUARED, 0.0, 1.0, 2.0);
        assert_eq!(exact_coordinate_update(&p, 0, 0.7, &[0.0]).unwrap(), -0.7);
        let p = tiny(SmoothLoss::LOGISTIC, 0.0, 1.0, 2.0);
        assert_eq!(exact_coordinate_update(&p, 0, 0.7, &[0.0]).unwrap(), -0.7);
    }

    #[test]
    fn surrogate_zero_linear_term() {
        let p = tiny(SmoothLoss::SQUARED, 1.0, 0.0, 1.0);
        // v = y = 0 makes the gradient vanish
        let ctx = SurrogateContext::new(&p, vec![0.0], vec![0.0], 2, 2).unwrap();
        assert_eq!(surrogate_coordinate_update(&ctx, &p, 0, 0.0, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_scale() {
        let p = tiny(SmoothLoss::LOGISTIC, 1.0, 1.0, 1.0);
        let ctx = SurrogateContext::new(&p, vec![0.0], vec![0.0], 2, 4).unwrap();
        assert_eq!(ctx.scale_a, 2.0);
        assert_eq!(ctx.shift_scale, 0.5);
    }
}

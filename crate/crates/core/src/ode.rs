//! Edge-evolving dynamics.
//!
//! Node states evolve inside one interval by the linear ODE
//! `dH/dt = (A − I)·H + b` with the constant forcing `b = A·(H₀ ⊙ H₀)`,
//! where `H₀` is the state at interval entry. Training integrates it with a
//! fixed-step classical RK4 recorded on a [`Tape`], so gradients are those of
//! the discrete solver (discretize, then differentiate). [`analytical_solve`] evaluates the exact solution by
//! eigendecomposition and exists to check the solver.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Function, SparseAdjacency, Tape, Var};

/// Default RK4 step on the unit-length interval.
pub const DEFAULT_STEP: f64 = 0.2;

/// Largest node count [`analytical_solve`] accepts.
pub const ORACLE_MAX_NODES: usize = 500;

/// One interval's initial-value problem.
#[derive(Debug, Clone)]
pub struct OdeProblem {
    pub adjacency: Arc<SparseAdjacency>,
    pub initial: DenseMatrix,
    pub forcing: DenseMatrix,
    pub horizon: f64,
    pub step: f64,
}

impl OdeProblem {
    /// Problem with the affinity forcing `A·(H₀ ⊙ H₀)` derived from `initial`.
    pub fn new(adjacency: Arc<SparseAdjacency>, initial: DenseMatrix, horizon: f64, step: f64) -> Result<Self> {
        let forcing = adjacency.spmm(&initial.hadamard(&initial)?)?;
        Self::with_forcing(adjacency, initial, forcing, horizon, step)
    }

    /// Problem with an explicit forcing term.
    pub fn with_forcing(
        adjacency: Arc<SparseAdjacency>,
        initial: DenseMatrix,
        forcing: DenseMatrix,
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        if initial.rows() != adjacency.n() {
            return Err(Error::shape(
                "ode_problem",
                format!("{} node states for a {}-node graph", initial.rows(), adjacency.n()),
            ));
        }
        initial.ensure_same_shape(&forcing, "ode_problem")?;
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon {horizon} must be finite and >= 0")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Invalid(format!("step {step} must be finite and > 0")));
        }
        Ok(Self {
            adjacency,
            initial,
            forcing,
            horizon,
            step,
        })
    }
}

/// Solver instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub steps: usize,
    /// Derivative evaluations.
    pub nfe: usize,
}

impl std::ops::AddAssign for SolveStats {
    fn add_assign(&mut self, rhs: Self) {
        self.steps += rhs.steps;
        self.nfe += rhs.nfe;
    }
}

/// Step sizes covering `[0, horizon]`. When `horizon/step` is an integer (up
/// to rounding) the steps are uniform; otherwise the last one is shortened.
pub fn step_schedule(horizon: f64, step: f64) -> Vec<f64> {
    if horizon <= 0.0 {
        return Vec::new();
    }
    let ratio = horizon / step;
    let rounded = ratio.round();
    if rounded >= 1.0 && (ratio - rounded).abs() < 1e-9 {
        let n = rounded as usize;
        return vec![horizon / n as f64; n];
    }
    let full = ratio.floor() as usize;
    let mut steps = vec![step; full];
    let rest = horizon - full as f64 * step;
    if rest > 0.0 {
        steps.push(rest);
    }
    steps
}

/// One layer of the discrete recurrence `H' = A·H + A·(H₀ ⊙ H₀)`.
pub fn discrete_propagate(h: &DenseMatrix, adjacency: &SparseAdjacency, h0: &DenseMatrix) -> Result<DenseMatrix> {
    h.ensure_same_shape(h0, "discrete_propagate")?;
    adjacency.spmm(h)?.add(&adjacency.spmm(&h0.hadamard(h0)?)?)
}

/// `A^l·H₀ + (Σ_{i=1}^{l} A^i)·(H₀ ⊙ H₀)` by repeated products.
pub fn closed_form_propagate(h0: &DenseMatrix, adjacency: &SparseAdjacency, layers: usize) -> Result<DenseMatrix> {
    let mut power_h = h0.clone();
    let mut power_sq = h0.hadamard(h0)?;
    let mut series = DenseMatrix::zeros(h0.rows(), h0.cols());
    for _ in 0..layers {
        power_h = adjacency.spmm(&power_h)?;
        power_sq = adjacency.spmm(&power_sq)?;
        series.axpy(1.0, &power_sq)?;
    }
    power_h.add(&series)
}

/// `(A − I)·H + b`.
pub fn derivative(h: &DenseMatrix, problem: &OdeProblem) -> Result<DenseMatrix> {
    h.ensure_same_shape(&problem.initial, "derivative")?;
    let mut out = problem.adjacency.spmm(h)?;
    out.axpy(-1.0, h)?;
    out.axpy(1.0, &problem.forcing)?;
    Ok(out)
}

/// Fixed-step classical RK4 for `dH/dt = (A − I)·H + b` as one tape node.
///
/// One step maps `(H, b)` to `R(εM)·H + ε·S(εM)·b` with `M = A − I`,
/// `R(z) = 1 + z + z²/2 + z³/6 + z⁴/24` and `S(z) = 1 + z/2 + z²/6 + z³/24`.
/// The map is linear, so its exact vector-Jacobian product is the same pair
/// of polynomials in `Mᵀ` applied to the incoming gradient, stepping
/// backwards. No intermediate state needs to be stored.
#[derive(Debug)]
struct Rk4Solve {
    adjacency: Arc<SparseAdjacency>,
    /// `Aᵀ`, shared with `adjacency` when `A` is symmetric.
    adjoint: Arc<SparseAdjacency>,
    steps: Vec<f64>,
}

impl Rk4Solve {
    fn new(adjacency: &Arc<SparseAdjacency>, steps: Vec<f64>) -> Self {
        let adjoint = if adjacency.is_symmetric() {
            Arc::clone(adjacency)
        } else {
            Arc::new(adjacency.transpose())
        };
        Self {
            adjacency: Arc::clone(adjacency),
            adjoint,
            steps,
        }
    }

    fn forward(&self, h0: &DenseMatrix, forcing: &DenseMatrix) -> Result<DenseMatrix> {
        h0.ensure_same_shape(forcing, "rk4")?;
        let (r, c) = h0.shape();
        let mut h = h0.clone();
        let mut k = DenseMatrix::zeros(r, c);
        let mut y = DenseMatrix::zeros(r, c);
        let mut acc = DenseMatrix::zeros(r, c);
        for (idx, &eps) in self.steps.iter().enumerate() {
            // k1
            self.adjacency.shifted_apply(&h, forcing, 1.0, &mut k)?;
            acc.as_mut_slice().copy_from_slice(h.as_slice());
            acc.axpy(eps / 6.0, &k)?;
            // k2, k3, k4
            for (y_coef, acc_coef) in [(eps / 2.0, eps / 3.0), (eps / 2.0, eps / 3.0), (eps, eps / 6.0)] {
                y.as_mut_slice().copy_from_slice(h.as_slice());
                y.axpy(y_coef, &k)?;
                self.adjacency.shifted_apply(&y, forcing, 1.0, &mut k)?;
                acc.axpy(acc_coef, &k)?;
            }
            std::mem::swap(&mut h, &mut acc);
            if !h.is_finite() {
                return Err(Error::SolverDiverged { step: idx });
            }
        }
        Ok(h)
    }
}

impl Function for Rk4Solve {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn backward(
        &self,
        _inputs: &[&DenseMatrix],
        output: &DenseMatrix,
        grad: &DenseMatrix,
        wants: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>> {
        let (r, c) = output.shape();
        let mut g = grad.clone();
        let mut g_forcing = DenseMatrix::zeros(r, c);
        let mut u = DenseMatrix::zeros(r, c);
        let mut tmp = DenseMatrix::zeros(r, c);
        for &eps in self.steps.iter().rev() {
            // Horner: u = S(εMᵀ)·g, then g ← g + εMᵀ·u = R(εMᵀ)·g.
            self.adjoint.shifted_apply(&g, &g, eps / 4.0, &mut u)?;
            self.adjoint.shifted_apply(&u, &g, eps / 3.0, &mut tmp)?;
            self.adjoint.shifted_apply(&tmp, &g, eps / 2.0, &mut u)?;
            if wants[1] {
                g_forcing.axpy(eps, &u)?;
            }
            self.adjoint.shifted_apply(&u, &g, eps, &mut tmp)?;
            std::mem::swap(&mut g, &mut tmp);
        }
        Ok(vec![wants[0].then_some(g), wants[1].then_some(g_forcing)])
    }
}

/// Classical RK4 recorded on `tape` as a single node, starting from `h0`
/// with forcing `forcing`.
pub fn rk4_tape(
    tape: &mut Tape,
    adjacency: &Arc<SparseAdjacency>,
    h0: Var,
    forcing: Var,
    horizon: f64,
    step: f64,
) -> Result<(Var, SolveStats)> {
    let steps = step_schedule(horizon, step);
    let stats = SolveStats {
        steps: steps.len(),
        nfe: 4 * steps.len(),
    };
    let solve = Rk4Solve::new(adjacency, steps);
    let value = solve.forward(tape.value(h0), tape.value(forcing))?;
    let out = tape.custom(Arc::new(solve), &[h0, forcing], value)?;
    Ok((out, stats))
}

/// Affinity forcing `A·(H₀ ⊙ H₀)` followed by RK4, all on `tape`.
pub fn evolve_tape(
    tape: &mut Tape,
    adjacency: &Arc<SparseAdjacency>,
    h0: Var,
    horizon: f64,
    step: f64,
) -> Result<(Var, SolveStats)> {
    let sq = tape.hadamard(h0, h0)?;
    let forcing = tape.spmm(adjacency, sq)?;
    rk4_tape(tape, adjacency, h0, forcing, horizon, step)
}

/// State at `problem.horizon` by fixed-step RK4.
pub fn rk4_solve(problem: &OdeProblem) -> Result<(DenseMatrix, SolveStats)> {
    let mut tape = Tape::new();
    let h0 = tape.constant(problem.initial.clone());
    let b = tape.constant(problem.forcing.clone());
    let (out, stats) = rk4_tape(&mut tape, &problem.adjacency, h0, b, problem.horizon, problem.step)?;
    Ok((tape.value(out).clone(), stats))
}

/// `φ₁(z) = (eᶻ − 1)/z`, with `φ₁(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// Exact state `e^{(A−I)t}·H₀ + t·φ₁((A−I)t)·b`, evaluated per eigenvalue of
/// the symmetric matrix `A − I`. Verification use only: dense O(n³).
pub fn analytical_solve(problem: &OdeProblem) -> Result<DenseMatrix> {
    let n = problem.adjacency.n();
    if n > ORACLE_MAX_NODES {
        return Err(Error::Invalid(format!(
            "analytical solution limited to {ORACLE_MAX_NODES} nodes, got {n}"
        )));
    }
    let dense = problem.adjacency.to_dense();
    let mut system = DMatrix::<f64>::from_row_slice(n, n, dense.as_slice());
    for i in 0..n {
        system[(i, i)] -= 1.0;
    }
    if (&system - system.transpose()).amax() > 1e-12 {
        return Err(Error::Invalid("analytical solution needs a symmetric adjacency".into()));
    }
    let eig = SymmetricEigen::new(system);
    let t = problem.horizon;
    let d = problem.initial.cols();
    let h0 = DMatrix::<f64>::from_row_slice(n, d, problem.initial.as_slice());
    let b = DMatrix::<f64>::from_row_slice(n, d, problem.forcing.as_slice());
    let q = &eig.eigenvectors;
    let mut h0_modes = q.transpose() * h0;
    let mut b_modes = q.transpose() * b;
    for (m, &lambda) in eig.eigenvalues.iter().enumerate() {
        let decay = (lambda * t).exp();
        let drive = t * phi1(lambda * t);
        h0_modes.row_mut(m).scale_mut(decay);
        b_modes.row_mut(m).scale_mut(drive);
    }
    let out = q * (h0_modes + b_modes);
    let mut data = Vec::with_capacity(n * d);
    for r in 0..n {
        for c in 0..d {
            data.push(out[(r, c)]);
        }
    }
    DenseMatrix::from_vec(n, d, data)
}

//! Boundary observation of adjoint solutions, the observability Gramian and
//! its spectral bounds relative to the `H²` Gram matrix `G`.
//!
//! Two observations of `∂²ₓv_j(l_j, t)` are available. [`observe`] evaluates
//! the Hermite reconstruction at the tip. [`boundary_flux`] reads it off the
//! residual of the tip-slot equation,
//!
//! ```text
//! ∂²ₓv_j(l_j) = (K_cf v)_j − i (M_cf v')_j,
//! ```
//!
//! discretized on the Crank–Nicolson grid so that it is the exact transpose
//! of the control lifting in the forced step. The Gramian and HUM use the
//! flux; with it the discrete duality identity holds to round-off.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_assembly::{DiscreteGraphSpace, GraphMatrices, GraphState, Side};
use crate::linalg::{self, CVector};
use crate::propagator::{ControlSignal, Propagator, Trajectory};
use crate::star_graph::{length_constants, t_min, t_min_optimal, StarGraphConfig};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `∂²ₓv_j(l_j, t_n)` per controlled edge on a uniform grid over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTrace {
    pub t: f64,
    pub n_steps: usize,
    /// `values[k][n]` belongs to edge `k + 2`.
    pub values: Vec<Vec<Complex64>>,
}

impl ObservationTrace {
    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// The trace read as a control signal on the same grid.
    pub fn to_control(&self) -> ControlSignal {
        ControlSignal {
            t0: 0.0,
            t1: self.t,
            n_steps: self.n_steps,
            samples: self.values.clone(),
        }
    }

    pub fn max_abs_diff(&self, other: &ObservationTrace) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, z| m.max(z.norm()))
    }
}

fn trace_grid(trajectory: &Trajectory) -> Result<(f64, usize)> {
    if trajectory.len() < 2 {
        return Err(Error::GridMismatch("trajectory needs at least two nodes".into()));
    }
    let n = trajectory.len() - 1;
    Ok((trajectory.last().time - trajectory.first().time, n))
}

/// Pointwise tip second derivative of the Hermite reconstruction at every
/// stored node.
pub fn observe(space: &DiscreteGraphSpace, trajectory: &Trajectory) -> Result<ObservationTrace> {
    let (t, n_steps) = trace_grid(trajectory)?;
    let n_edges = space.n_edges();
    let mut values = vec![Vec::with_capacity(n_steps + 1); n_edges - 1];
    for (k, state) in trajectory.states.iter().enumerate() {
        let local = space.edge_values(&state.coeffs, trajectory.slots_at(k));
        for e in 1..n_edges {
            let x = space.edges()[e].x1();
            values[e - 1].push(space.eval(e, x, Side::Left, &local[e])[2]);
        }
    }
    Ok(ObservationTrace { t, n_steps, values })
}

/// Combines per-node `y_n = M_cf v_n` and `z_n = K_cf v_n` into the flux
/// observation on the Crank–Nicolson grid.
fn flux_from_moments(y: &[CVector], z: &[CVector], tau: f64) -> Vec<CVector> {
    let n = y.len() - 1;
    let mid = |a: &[CVector], k: usize| (&a[k + 1] + &a[k]) * Complex64::new(0.5, 0.0);
    let scale = -I / tau;
    let mut out = Vec::with_capacity(n + 1);
    out.push((&y[1] - &y[0]) * scale + mid(z, 0));
    for m in 1..n {
        let dy = (mid(y, m) - mid(y, m - 1)) * scale;
        let az = (mid(z, m) + mid(z, m - 1)) * Complex64::new(0.5, 0.0);
        out.push(dy + az);
    }
    out.push((&y[n] - &y[n - 1]) * scale + mid(z, n - 1));
    out
}

fn transpose_trace(nodes: Vec<CVector>, n_slots: usize, t: f64) -> ObservationTrace {
    let n_steps = nodes.len() - 1;
    let values = (0..n_slots)
        .map(|k| nodes.iter().map(|v| v[k]).collect())
        .collect();
    ObservationTrace { t, n_steps, values }
}

/// Consistent flux observation of a stored homogeneous trajectory; needs
/// every step stored and a space with tip slots.
pub fn boundary_flux(matrices: &GraphMatrices, trajectory: &Trajectory) -> Result<ObservationTrace> {
    let (t, _) = trace_grid(trajectory)?;
    if trajectory.stride != 1 {
        return Err(Error::GridMismatch("flux observation needs an unthinned trajectory".into()));
    }
    if matrices.n_slots() == 0 {
        return Err(Error::Domain("flux observation needs a space with tip slots".into()));
    }
    let y: Vec<CVector> = trajectory
        .states
        .iter()
        .map(|s| linalg::real_tr_mul(&matrices.m_fc, &s.coeffs))
        .collect();
    let z: Vec<CVector> = trajectory
        .states
        .iter()
        .map(|s| linalg::real_tr_mul(&matrices.k_fc, &s.coeffs))
        .collect();
    Ok(transpose_trace(flux_from_moments(&y, &z, trajectory.tau), matrices.n_slots(), t))
}

/// Matrix-free Gramian on a fixed grid.
///
/// `apply(v) = i M P u(T)`, where `P u` is the projected state of the forced
/// solution from projected state zero, driven by the flux observation `h`
/// of the adjoint solution ending at `v`. Then
/// `w* apply(v) = Σ_j ∫ h_j(v) conj(h_j(w)) dt` (trapezoid).
pub struct GramianOperator<'a> {
    prop: Propagator<'a>,
    t: f64,
    n_steps: usize,
}

impl<'a> GramianOperator<'a> {
    pub fn new(matrices: &'a GraphMatrices, t: f64, n_steps: usize) -> Result<Self> {
        if matrices.n_slots() == 0 {
            return Err(Error::Domain("the Gramian needs a space with tip slots".into()));
        }
        if n_steps == 0 || !(t > 0.0 && t.is_finite()) {
            return Err(Error::GridMismatch(format!("T = {t}, n_steps = {n_steps}")));
        }
        Ok(Self {
            prop: Propagator::new(matrices, t / n_steps as f64)?,
            t,
            n_steps,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_dof(&self) -> usize {
        self.prop.matrices().n_dof()
    }

    pub fn propagator(&self) -> &Propagator<'a> {
        &self.prop
    }

    /// Flux observation of the adjoint solution with `v(T) = v_t`.
    pub fn observe(&self, v_t: &CVector) -> ObservationTrace {
        let basis = self.prop.basis();
        let mut c = self.prop.to_modal(v_t);
        let mut y = Vec::with_capacity(self.n_steps + 1);
        let mut z = Vec::with_capacity(self.n_steps + 1);
        let moments = |c: &CVector| (linalg::real_tr_mul(&basis.m_fc, c), linalg::real_tr_mul(&basis.k_fc, c));
        let (a, b) = moments(&c);
        y.push(a);
        z.push(b);
        for _ in 0..self.n_steps {
            self.prop.step_modal(&mut c, false);
            let (a, b) = moments(&c);
            y.push(a);
            z.push(b);
        }
        y.reverse();
        z.reverse();
        transpose_trace(flux_from_moments(&y, &z, self.prop.tau()), self.prop.matrices().n_slots(), self.t)
    }

    /// `i M P u(T)` for the forced solution whose projected initial state
    /// is zero (see [`Propagator::weak_final_state`]).
    pub fn control_to_pairing(&self, h: &ControlSignal) -> CVector {
        let m = self.prop.matrices();
        let w = self.prop.weak_final_state(&CVector::zeros(m.n_dof()), h);
        linalg::real_mul(&m.m, &w) * I
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        self.control_to_pairing(&self.observe(v).to_control())
    }

    /// `Q(v, w) = Σ_j ∫ h_j(v) conj(h_j(w)) dt`.
    pub fn quadratic(&self, v: &CVector, w: &CVector) -> Complex64 {
        self.observe(v).to_control().inner(&self.observe(w).to_control())
    }

    /// Dense Gramian, one application per unit vector. For small spaces.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let n = self.n_dof();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut e = CVector::zeros(n);
            e[k] = Complex64::new(1.0, 0.0);
            out.set_column(k, &self.apply(&e));
        }
        out
    }
}

fn check_final_data(matrices: &GraphMatrices, v: &GraphState) -> Result<()> {
    if v.len() != matrices.n_dof() {
        return Err(Error::Dimension {
            what: "final data",
            expected: matrices.n_dof(),
            got: v.len(),
        });
    }
    Ok(())
}

/// `Q(v, w)` for final data `v_t`, `w_t` on the grid `(T, n_steps)`.
pub fn gramian_quadratic(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    v_t: &GraphState,
    w_t: &GraphState,
    t: f64,
    n_steps: usize,
) -> Result<Complex64> {
    if space.n_dof() != matrices.n_dof() {
        return Err(Error::Dimension {
            what: "matrices vs space",
            expected: space.n_dof(),
            got: matrices.n_dof(),
        });
    }
    check_final_data(matrices, v_t)?;
    check_final_data(matrices, w_t)?;
    Ok(GramianOperator::new(matrices, t, n_steps)?.quadratic(&v_t.coeffs, &w_t.coeffs))
}

/// Explicit observability constant `C = L(L²/π² + 1) / (2 L̄ K)` with
/// `K = (1/L̄ − ε)T − (L²/π² + 1)/(εT)`.
pub fn c_theory(cfg: &StarGraphConfig, epsilon: f64, t: f64) -> Result<f64> {
    let lc = length_constants(cfg);
    if !(epsilon > 0.0 && epsilon < 1.0 / lc.lbar) {
        return Err(Error::Domain(format!(
            "epsilon = {epsilon} outside (0, {})",
            1.0 / lc.lbar
        )));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("T = {t} must be positive")));
    }
    let p = lc.max_length.powi(2) / std::f64::consts::PI.powi(2) + 1.0;
    let k = (1.0 / lc.lbar - epsilon) * t - p / (epsilon * t);
    if k <= 0.0 {
        return Err(Error::Domain(format!("K = {k} <= 0: T = {t} is below the threshold for epsilon = {epsilon}")));
    }
    Ok(lc.max_length * p / (2.0 * lc.lbar * k))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GramianDiagnostics {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `None` when `T` does not exceed the minimal time for `epsilon`.
    pub c_theory: Option<f64>,
    pub one_over_c_theory: Option<f64>,
    pub iterations: usize,
    /// Below this size `lambda_min` cannot be told apart from zero: the
    /// larger of its Ritz residual and `n ε lambda_max`.
    pub lambda_min_resolution: f64,
    /// `lambda_min` exceeds its resolution.
    pub resolved: bool,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "T_min")]
    pub t_min: Option<f64>,
    pub epsilon: f64,
    /// `lambda_min < 1/(2C)`: reported, never treated as failure.
    pub flagged: bool,
}

/// Options for the extreme-eigenvalue iteration.
#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Ritz residual tolerance relative to the largest Ritz value.
    pub tol: f64,
    /// Default: twice the dimension.
    pub max_iterations: Option<usize>,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: None,
            seed: 0x5eed,
        }
    }
}

/// Extreme generalized eigenvalues of `(Λ, G)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremeEigenvalues {
    pub min: f64,
    pub max: f64,
    /// Ritz residual norms; an eigenvalue lies within each of the value.
    pub min_residual: f64,
    pub max_residual: f64,
    pub iterations: usize,
}

/// Lanczos on `G⁻¹Λ`, self-adjoint in the `G` inner product, with full
/// reorthogonalization and a seeded random start.
///
/// `Λ` is complex-linear and Hermitian, so this is equivalent to running the
/// iteration on the realification with the inner product `Re(w*Gv)`; the
/// realified spectrum is the same with doubled multiplicities.
pub fn lanczos_extremes(op: &GramianOperator<'_>, opts: LanczosOptions) -> Result<ExtremeEigenvalues> {
    let matrices = op.propagator().matrices();
    let g = &matrices.g;
    let gs = matrices.gram_solver();
    let n = op.n_dof();
    let max_it = opts.max_iterations.unwrap_or(2 * n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = CVector::from_fn(n, |_, _| {
        Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
    });
    let gnorm = |x: &CVector| linalg::quad_form(g, x).max(0.0).sqrt();
    q /= Complex64::new(gnorm(&q), 0.0);
    let mut basis: Vec<CVector> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = (0.0, 0.0);
    for j in 0..max_it.min(n) {
        let mut w = gs.solve(&op.apply(&q));
        let alpha = linalg::sesquilinear(g, &q, &w).re;
        basis.push(q.clone());
        alphas.push(alpha);
        for _ in 0..2 {
            for b in &basis {
                let c = linalg::sesquilinear(g, b, &w);
                w -= b * c;
            }
        }
        let beta = gnorm(&w);
        let ritz = tridiagonal_eigen(&alphas, &betas);
        let (theta_min, s_min) = (ritz.0[0], ritz.1[0]);
        let (theta_max, s_max) = (ritz.0[ritz.0.len() - 1], ritz.1[ritz.0.len() - 1]);
        last = (theta_min, theta_max);
        let scale = theta_max.abs().max(f64::MIN_POSITIVE);
        let converged = beta * s_min.abs() <= opts.tol * scale && beta * s_max.abs() <= opts.tol * scale;
        if converged || beta <= 1e-14 * scale || j + 1 == n {
            return Ok(ExtremeEigenvalues {
                min: theta_min,
                max: theta_max,
                min_residual: beta * s_min.abs(),
                max_residual: beta * s_max.abs(),
                iterations: j + 1,
            });
        }
        betas.push(beta);
        q = w / Complex64::new(beta, 0.0);
    }
    Err(Error::NotConverged {
        solver: "Lanczos",
        iterations: max_it,
        residual: last.0,
    })
}

/// Ascending eigenvalues of the symmetric tridiagonal matrix and the last
/// components of the matching unit eigenvectors.
fn tridiagonal_eigen(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = alphas.len();
    let t = DMatrix::from_fn(k, k, |r, c| {
        if r == c {
            alphas[r]
        } else if r + 1 == c {
            betas[r]
        } else if c + 1 == r {
            betas[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    (
        order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        order.iter().map(|&i| eig.eigenvectors[(k - 1, i)]).collect(),
    )
}

/// All generalized eigenvalues of `(Λ, G)` from the dense Gramian.
pub fn dense_gramian_spectrum(op: &GramianOperator<'_>) -> Result<DVector<f64>> {
    let lam = op.dense();
    let l = op.propagator().matrices().gram_solver().l().map(|v| Complex64::new(v, 0.0));
    let a = l
        .solve_lower_triangular(&lam)
        .ok_or(Error::Singular("Gram Cholesky factor"))?;
    let c = l
        .solve_lower_triangular(&a.adjoint())
        .ok_or(Error::Singular("Gram Cholesky factor"))?;
    let c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
    let mut values: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(values))
}

/// Extreme eigenvalues of the Gramian relative to `G` on the grid
/// `(T, n_steps)`, with the explicit constant for comparison.
///
/// `epsilon = None` uses the minimizing `ε*` of the minimal time.
pub fn lambda_min(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    t: f64,
    n_steps: usize,
    tol: f64,
    epsilon: Option<f64>,
) -> Result<GramianDiagnostics> {
    let opts = LanczosOptions {
        tol,
        ..LanczosOptions::default()
    };
    lambda_min_with(space, matrices, t, n_steps, opts, epsilon)
}

/// [`lambda_min`] with explicit iteration options.
pub fn lambda_min_with(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    t: f64,
    n_steps: usize,
    opts: LanczosOptions,
    epsilon: Option<f64>,
) -> Result<GramianDiagnostics> {
    if space.n_dof() != matrices.n_dof() {
        return Err(Error::Dimension {
            what: "matrices vs space",
            expected: space.n_dof(),
            got: matrices.n_dof(),
        });
    }
    let op = GramianOperator::new(matrices, t, n_steps)?;
    let ext = lanczos_extremes(&op, opts)?;
    let cfg = space.cfg();
    let eps = match epsilon {
        Some(e) => e,
        None => t_min_optimal(cfg).0,
    };
    let tm = t_min(cfg, eps).ok();
    let c = c_theory(cfg, eps, t).ok();
    let resolution = ext
        .min_residual
        .max(space.n_dof() as f64 * f64::EPSILON * ext.max.abs());
    Ok(GramianDiagnostics {
        lambda_min: ext.min,
        lambda_max: ext.max,
        c_theory: c,
        one_over_c_theory: c.map(|c| 1.0 / c),
        iterations: ext.iterations,
        lambda_min_resolution: resolution,
        resolved: ext.min > resolution,
        t,
        t_min: tm,
        epsilon: eps,
        flagged: c.is_some_and(|c| ext.min < 0.5 / c),
    })
}

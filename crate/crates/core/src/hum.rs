//! Control synthesis by the Hilbert Uniqueness Method.
//!
//! The steering problem from `u0` to `uT` is reduced to steering from zero
//! to the defect `d = uT − S(T) u0`. The minimizer `v` of
//!
//! ```text
//! J(v) = ½ Σ_j ∫ |h_j(v)|² dt − Re(v* b),    b = i M d,
//! ```
//!
//! solves `Λ v = b`; the control is the boundary observation `h(v)` of the
//! adjoint solution ending at `v`. States are compared through their
//! L²-projection onto the clamped space (see
//! [`Propagator::weak_final_state`]).

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_assembly::{DiscreteGraphSpace, GraphMatrices, GraphState};
use crate::linalg::{self, CVector};
use crate::observability::GramianOperator;
use crate::propagator::{trapezoid_weight, ControlSignal, Propagator};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Uncontrolled evolution `S(T) u0`.
pub fn free_final_state(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    u0: &GraphState,
    t: f64,
    n_steps: usize,
) -> Result<GraphState> {
    check_inputs(space, matrices, &[u0])?;
    if n_steps == 0 || !(t > 0.0 && t.is_finite()) {
        return Err(Error::GridMismatch(format!("T = {t}, n_steps = {n_steps}")));
    }
    let prop = Propagator::new(matrices, t / n_steps as f64)?;
    Ok(GraphState::new(prop.free_evolution(&u0.coeffs, n_steps), u0.time + t))
}

fn check_inputs(space: &DiscreteGraphSpace, matrices: &GraphMatrices, states: &[&GraphState]) -> Result<()> {
    if space.n_dof() != matrices.n_dof() {
        return Err(Error::Dimension {
            what: "matrices vs space",
            expected: space.n_dof(),
            got: matrices.n_dof(),
        });
    }
    for s in states {
        if s.len() != space.n_dof() {
            return Err(Error::Dimension {
                what: "state",
                expected: space.n_dof(),
                got: s.len(),
            });
        }
        if !s.is_finite() {
            return Err(Error::Domain("non-finite state".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct HumOptions {
    /// Relative residual target in the `M⁻¹` norm, which equals the
    /// relative L² steering error.
    pub cg_tol: f64,
    /// Default: four times the dimension.
    pub max_iterations: Option<usize>,
}

impl HumOptions {
    pub fn with_tol(cg_tol: f64) -> Self {
        Self {
            cg_tol,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HumResult {
    pub controls: ControlSignal,
    /// Minimizer `v(T)` of the dual functional.
    pub v_t: GraphState,
    pub cg_iterations: usize,
    /// Final relative residual, `‖r‖_{M⁻¹} / ‖b‖_{M⁻¹}`.
    pub cg_residual: f64,
    /// `‖P u(T) − uT‖_M / max(‖uT‖_M, ‖u0‖_M)` after re-simulation.
    pub steering_error_m: f64,
    /// The same error measured in the `G⁻¹` dual norm of `M (P u(T) − uT)`.
    pub steering_error_dual: f64,
    /// `Σ_j ∫ |h_j|² dt` (trapezoid).
    pub control_energy: f64,
    /// Dual functional after each iteration, starting from `J(0) = 0`.
    pub objective: Vec<f64>,
    /// Projected final state of the re-simulation.
    pub final_state: GraphState,
}

/// Scalar part of a [`HumResult`], as written by the command-line driver.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HumSummary {
    #[serde(rename = "T")]
    pub t: f64,
    pub n_steps: usize,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    #[serde(rename = "steering_error_M")]
    pub steering_error_m: f64,
    pub steering_error_dual: f64,
    pub control_energy: f64,
}

impl HumResult {
    pub fn summary(&self) -> HumSummary {
        HumSummary {
            t: self.controls.t1 - self.controls.t0,
            n_steps: self.controls.n_steps,
            cg_iterations: self.cg_iterations,
            cg_residual: self.cg_residual,
            steering_error_m: self.steering_error_m,
            steering_error_dual: self.steering_error_dual,
            control_energy: self.control_energy,
        }
    }

    pub fn write_controls_csv<W: Write>(&self, w: W) -> Result<()> {
        self.controls.write_csv(w)
    }
}

/// Solves `Λ v = b` by conjugate gradients preconditioned with `G⁻¹`.
struct CgOutcome {
    v: CVector,
    iterations: usize,
    residual: f64,
    objective: Vec<f64>,
}

fn conjugate_gradient(op: &GramianOperator<'_>, b: &CVector, opts: HumOptions) -> Result<CgOutcome> {
    let matrices = op.propagator().matrices();
    let ms = matrices.mass_solver();
    let gs = matrices.gram_solver();
    let n = b.len();
    let max_it = opts.max_iterations.unwrap_or(4 * n).max(1);
    let dual_m = |r: &CVector| r.dotc(&ms.solve(r)).re.max(0.0).sqrt();
    let b_norm = dual_m(b);
    let mut v = CVector::zeros(n);
    let mut objective = vec![0.0];
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            v,
            iterations: 0,
            residual: 0.0,
            objective,
        });
    }
    let mut r = b.clone();
    let mut z = gs.solve(&r);
    let mut p = z.clone();
    let mut rz = r.dotc(&z).re;
    let mut best = 1.0f64;
    for it in 1..=max_it {
        let ap = op.apply(&p);
        let pap = p.dotc(&ap).re;
        if pap <= 0.0 {
            return Err(Error::NotConverged {
                solver: "HUM conjugate gradients",
                iterations: it,
                residual: best,
            });
        }
        let alpha = rz / pap;
        v += &p * real(alpha);
        r -= &ap * real(alpha);
        // J(v) = −½ Re(v* b) − ½ Re(v* r)
        objective.push(-0.5 * (v.dotc(b).re + v.dotc(&r).re));
        let residual = dual_m(&r) / b_norm;
        best = best.min(residual);
        if residual <= opts.cg_tol {
            return Ok(CgOutcome {
                v,
                iterations: it,
                residual,
                objective,
            });
        }
        z = gs.solve(&r);
        let rz_new = r.dotc(&z).re;
        p = &z + &p * real(rz_new / rz);
        rz = rz_new;
    }
    Err(Error::NotConverged {
        solver: "HUM conjugate gradients",
        iterations: max_it,
        residual: best,
    })
}

/// Controls steering `u0` to `uT` in time `T`, verified by re-simulation.
pub fn hum_solve(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    u0: &GraphState,
    u_t: &GraphState,
    t: f64,
    n_steps: usize,
    cg_tol: f64,
) -> Result<HumResult> {
    hum_solve_with(space, matrices, u0, u_t, t, n_steps, HumOptions::with_tol(cg_tol))
}

pub fn hum_solve_with(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    u0: &GraphState,
    u_t: &GraphState,
    t: f64,
    n_steps: usize,
    opts: HumOptions,
) -> Result<HumResult> {
    check_inputs(space, matrices, &[u0, u_t])?;
    if !space.control_tips_free() {
        return Err(Error::Domain("control synthesis needs a space with tip slots".into()));
    }
    let op = GramianOperator::new(matrices, t, n_steps)?;
    let prop = op.propagator();
    let defect = &u_t.coeffs - prop.free_evolution(&u0.coeffs, n_steps);
    let b = linalg::real_mul(&matrices.m, &defect) * I;
    let cg = conjugate_gradient(&op, &b, opts)?;

    let controls = op.observe(&cg.v).to_control();
    let reached = prop.weak_final_state(&u0.coeffs, &controls);
    let err = &reached - &u_t.coeffs;
    let m_norm = |x: &CVector| linalg::quad_form(&matrices.m, x).max(0.0).sqrt();
    let g_dual = |x: &CVector| {
        let mx = linalg::real_mul(&matrices.m, x);
        mx.dotc(&matrices.gram_solver().solve(&mx)).re.max(0.0).sqrt()
    };
    let rel = |e: f64, a: f64, b: f64| {
        let s = a.max(b);
        if s == 0.0 {
            e
        } else {
            e / s
        }
    };
    let steering_error_m = rel(m_norm(&err), m_norm(&u_t.coeffs), m_norm(&u0.coeffs));
    let steering_error_dual = rel(g_dual(&err), g_dual(&u_t.coeffs), g_dual(&u0.coeffs));
    Ok(HumResult {
        control_energy: controls.energy(),
        controls,
        v_t: GraphState::new(cg.v, t),
        cg_iterations: cg.iterations,
        cg_residual: cg.residual,
        steering_error_m,
        steering_error_dual,
        objective: cg.objective,
        final_state: GraphState::new(reached, u0.time + t),
    })
}

/// Steering to rest.
pub fn null_control(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    u0: &GraphState,
    t: f64,
    n_steps: usize,
    cg_tol: f64,
) -> Result<HumResult> {
    let zero = GraphState::zeros(space.n_dof());
    hum_solve(space, matrices, u0, &zero, t, n_steps, cg_tol)
}

/// Dense control-to-state matrix: column `j (n_steps + 1) + n` is the
/// projected final state reached from rest under the unit control on slot
/// `j` at time node `n`.
pub fn control_to_state_matrix(matrices: &GraphMatrices, t: f64, n_steps: usize) -> Result<DMatrix<Complex64>> {
    let op = GramianOperator::new(matrices, t, n_steps)?;
    let prop = op.propagator();
    let (n, k) = (matrices.n_dof(), matrices.n_slots());
    let mut b = DMatrix::zeros(n, k * (n_steps + 1));
    let mut h = ControlSignal::zeros(k, 0.0, t, n_steps);
    for j in 0..k {
        for m in 0..=n_steps {
            h.samples[j][m] = real(1.0);
            b.set_column(j * (n_steps + 1) + m, &prop.weak_final_state(&CVector::zeros(n), &h));
            h.samples[j][m] = real(0.0);
        }
    }
    Ok(b)
}

/// Minimal-energy controls reaching the projected state `d` from rest,
/// by a dense pseudo-inverse of the control-to-state matrix in the
/// trapezoid-weighted norm. Singular values below `rcond · σ_max` are
/// dropped.
pub fn least_norm_controls(
    matrices: &GraphMatrices,
    d: &CVector,
    t: f64,
    n_steps: usize,
    rcond: f64,
) -> Result<ControlSignal> {
    let b = control_to_state_matrix(matrices, t, n_steps)?;
    let tau = t / n_steps as f64;
    let w: Vec<f64> = (0..b.ncols())
        .map(|c| (tau * trapezoid_weight(c % (n_steps + 1), n_steps)).sqrt())
        .collect();
    let scaled = DMatrix::from_fn(b.nrows(), b.ncols(), |r, c| b[(r, c)] / w[c]);
    let svd = scaled.svd(true, true);
    let cutoff = rcond * svd.singular_values.max();
    let x = svd.solve(d, cutoff).map_err(|e| Error::Domain(e.to_string()))?;
    let mut h = ControlSignal::zeros(matrices.n_slots(), 0.0, t, n_steps);
    for (c, z) in x.iter().enumerate() {
        h.samples[c / (n_steps + 1)][c % (n_steps + 1)] = z / w[c];
    }
    Ok(h)
}

/// Residual of the discrete duality identity
///
/// ```text
/// i (⟨u(T), v(T)⟩ − ⟨u(0), v(0)⟩) = Σ_j ∫ h_j conj(∂²ₓv_j(l_j)) dt
/// ```
///
/// for the forced solution from projected initial state `u0` and the
/// adjoint solution ending at `v_t`. `⟨u, v⟩ = v* M u` on projected states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityCheck {
    pub lhs: Complex64,
    pub rhs: Complex64,
    /// `|lhs − rhs|` over the sum of the magnitudes of the pairings and of
    /// the control–observation product.
    pub relative_residual: f64,
}

pub fn duality_check(
    matrices: &GraphMatrices,
    u0: &CVector,
    controls: &ControlSignal,
    v_t: &CVector,
    t: f64,
    n_steps: usize,
) -> Result<DualityCheck> {
    controls.check_grid(matrices.n_slots(), t, n_steps)?;
    let op = GramianOperator::new(matrices, t, n_steps)?;
    let prop = op.propagator();
    let u_t = prop.weak_final_state(u0, controls);
    let v0 = prop.from_modal(&prop.adjoint_modal(v_t, n_steps)[0]);
    let p_t = linalg::sesquilinear(&matrices.m, v_t, &u_t);
    let p_0 = linalg::sesquilinear(&matrices.m, &v0, u0);
    let lhs = I * (p_t - p_0);
    let obs = op.observe(v_t).to_control();
    let rhs = controls.inner(&obs);
    let scale = p_t.norm() + p_0.norm() + (controls.energy() * obs.energy()).sqrt();
    Ok(DualityCheck {
        lhs,
        rhs,
        relative_residual: (lhs - rhs).norm() / scale.max(f64::MIN_POSITIVE),
    })
}

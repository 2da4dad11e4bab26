//! Crank–Nicolson (Cayley) time stepping of `i M u' = K u`, `K = K1 + K2`,
//! with optional tip-derivative forcing.
//!
//! One step solves
//!
//! ```text
//! (M + iτK/2) u⁺ = (M − iτK/2) u + M_fc (h − h⁺) − (iτ/2) K_fc (h + h⁺)
//! ```
//!
//! where `h`, `h⁺` are the slot values at the two time nodes (controls are
//! piecewise linear in time). Two exact realizations are provided:
//! [`CnStepper`] factorizes the complex pencil once per `τ` and solves
//! directly; [`Propagator`] diagonalizes `(K, M)` once per matrix set and
//! steps in modal coordinates, which is what long solves use.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_assembly::{DiscreteGraphSpace, GraphMatrices, GraphState};
use crate::linalg::{self, CVector};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Uniformly sampled tip-derivative data `h_j(t_n)`, `j = 2..N`.
///
/// `samples[k][n]` is the value on controlled edge `k + 2` at node `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub t0: f64,
    pub t1: f64,
    pub n_steps: usize,
    pub samples: Vec<Vec<Complex64>>,
}

impl ControlSignal {
    pub fn zeros(n_controls: usize, t0: f64, t1: f64, n_steps: usize) -> Self {
        Self {
            t0,
            t1,
            n_steps,
            samples: vec![vec![c0(); n_steps + 1]; n_controls],
        }
    }

    pub fn n_controls(&self) -> usize {
        self.samples.len()
    }

    pub fn tau(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + self.tau() * n as f64
    }

    /// Slot vector at node `n`.
    pub fn at(&self, n: usize) -> CVector {
        DVector::from_iterator(self.samples.len(), self.samples.iter().map(|s| s[n]))
    }

    /// Trapezoidal `Σ_j ∫ |h_j|² dt`.
    pub fn energy(&self) -> f64 {
        let tau = self.tau();
        self.samples
            .iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .map(|(n, z)| trapezoid_weight(n, self.n_steps) * z.norm_sqr())
                    .sum::<f64>()
                    * tau
            })
            .sum()
    }

    /// Trapezoidal `Σ_j ∫ h_j conj(g_j) dt`.
    pub fn inner(&self, other: &ControlSignal) -> Complex64 {
        let tau = self.tau();
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .enumerate()
                    .map(|(n, (x, y))| x * y.conj() * trapezoid_weight(n, self.n_steps))
                    .sum::<Complex64>()
                    * tau
            })
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.samples
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Checks the signal lives on the grid `[0, t]` with `n_steps` steps.
    pub fn check_grid(&self, n_controls: usize, t: f64, n_steps: usize) -> Result<()> {
        if self.samples.len() != n_controls {
            return Err(Error::Dimension {
                what: "controlled edges",
                expected: n_controls,
                got: self.samples.len(),
            });
        }
        if self.n_steps != n_steps
            || self.samples.iter().any(|s| s.len() != n_steps + 1)
            || (self.t1 - self.t0 - t).abs() > 1e-12 * t.abs().max(1.0)
        {
            return Err(Error::GridMismatch(format!(
                "controls on [{}, {}] with {} steps, solve on [0, {t}] with {n_steps} steps",
                self.t0, self.t1, self.n_steps
            )));
        }
        if !self.is_finite() {
            return Err(Error::Domain("non-finite control sample".into()));
        }
        Ok(())
    }

    /// CSV rows `time,edge,real,imag`; edges are 1-based graph indices.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "edge", "real", "imag"])?;
        for (k, s) in self.samples.iter().enumerate() {
            for (n, z) in s.iter().enumerate() {
                wr.write_record(&[
                    format!("{:.17e}", self.time(n)),
                    (k + 2).to_string(),
                    format!("{:.17e}", z.re),
                    format!("{:.17e}", z.im),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Trapezoid weight of node `n` on a grid with `n_steps` steps.
pub fn trapezoid_weight(n: usize, n_steps: usize) -> f64 {
    if n == 0 || n == n_steps {
        0.5
    } else {
        1.0
    }
}

/// Sequence of states at uniformly spaced time nodes.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<GraphState>,
    /// Time step of the underlying scheme.
    pub tau: f64,
    /// Only every `stride`-th step is stored.
    pub stride: usize,
    /// Slot values at the stored nodes (forced trajectories only).
    pub slots: Option<Vec<CVector>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &GraphState {
        &self.states[0]
    }

    pub fn last(&self) -> &GraphState {
        &self.states[self.states.len() - 1]
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    /// Spacing of the stored nodes.
    pub fn dt(&self) -> f64 {
        self.tau * self.stride as f64
    }

    pub fn slots_at(&self, n: usize) -> Option<&[Complex64]> {
        self.slots.as_ref().map(|s| s[n].as_slice())
    }

    /// CSV rows `time,dof,real,imag`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "dof", "real", "imag"])?;
        for s in &self.states {
            let t = format!("{:.17e}", s.time);
            for (k, z) in s.coeffs.iter().enumerate() {
                wr.write_record(&[
                    t.clone(),
                    k.to_string(),
                    format!("{:.17e}", z.re),
                    format!("{:.17e}", z.im),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Tip-derivative data at the two ends of one step.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryData<'a> {
    pub now: &'a [Complex64],
    pub next: &'a [Complex64],
}

/// Direct Crank–Nicolson stepper: LU of `M + iτK/2`, cached for one `τ`.
pub struct CnStepper {
    tau: f64,
    lu: LU<Complex64, Dyn, Dyn>,
    minus: DMatrix<Complex64>,
    m_fc: DMatrix<Complex64>,
    k_fc: DMatrix<Complex64>,
}

impl CnStepper {
    pub fn new(matrices: &GraphMatrices, tau: f64) -> Result<Self> {
        if !(tau != 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("time step must be finite and nonzero, got {tau}")));
        }
        let cm = matrices.m.map(|v| Complex64::new(v, 0.0));
        let ck = matrices.k.map(|v| Complex64::new(v, 0.0));
        let half = I * (0.5 * tau);
        let plus = &cm + &ck * half;
        let minus = &cm - &ck * half;
        let lu = plus.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("Crank–Nicolson pencil"));
        }
        Ok(Self {
            tau,
            lu,
            minus,
            m_fc: matrices.m_fc.map(|v| Complex64::new(v, 0.0)),
            k_fc: matrices.k_fc.map(|v| Complex64::new(v, 0.0)),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn step(&self, state: &GraphState, boundary: Option<BoundaryData<'_>>) -> Result<GraphState> {
        let n = self.minus.nrows();
        if state.len() != n {
            return Err(Error::Dimension {
                what: "state",
                expected: n,
                got: state.len(),
            });
        }
        let mut rhs = &self.minus * &state.coeffs;
        if let Some(b) = boundary {
            let s = self.m_fc.ncols();
            if b.now.len() != s || b.next.len() != s {
                return Err(Error::Dimension {
                    what: "boundary data",
                    expected: s,
                    got: b.now.len().min(b.next.len()),
                });
            }
            let now = DVector::from_column_slice(b.now);
            let next = DVector::from_column_slice(b.next);
            rhs += &self.m_fc * (&now - &next) - &self.k_fc * ((&now + &next) * (I * (0.5 * self.tau)));
        }
        let next = self
            .lu
            .solve(&rhs)
            .ok_or(Error::Singular("Crank–Nicolson pencil"))?;
        Ok(GraphState::new(next, state.time + self.tau))
    }
}

/// One Crank–Nicolson step from scratch (factorizes the pencil).
pub fn step(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    state: &GraphState,
    tau: f64,
    boundary: Option<BoundaryData<'_>>,
) -> Result<GraphState> {
    check_space(space, matrices)?;
    CnStepper::new(matrices, tau)?.step(state, boundary)
}

fn check_space(space: &DiscreteGraphSpace, matrices: &GraphMatrices) -> Result<()> {
    if space.n_dof() != matrices.n_dof() {
        return Err(Error::Dimension {
            what: "matrices vs space",
            expected: space.n_dof(),
            got: matrices.n_dof(),
        });
    }
    Ok(())
}

/// Eigendecomposition of the pencil `K φ = λ M φ` with `Φᵀ M Φ = I`, plus
/// the slot couplings in modal coordinates.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    pub lambda: DVector<f64>,
    pub phi: DMatrix<f64>,
    /// `Φᵀ M`: maps coefficients to modal amplitudes.
    pub to_modal: DMatrix<f64>,
    /// `Φᵀ M_fc`
    pub m_fc: DMatrix<f64>,
    /// `Φᵀ K_fc`
    pub k_fc: DMatrix<f64>,
}

impl ModalBasis {
    pub fn new(matrices: &GraphMatrices) -> Result<Self> {
        let eig = linalg::generalized_eigen(&matrices.k, &matrices.m)?;
        let phi = eig.vectors;
        Ok(Self {
            lambda: eig.values,
            to_modal: phi.tr_mul(&matrices.m),
            m_fc: phi.tr_mul(&matrices.m_fc),
            k_fc: phi.tr_mul(&matrices.k_fc),
            phi,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.lambda.len()
    }
}

/// The `k`-th generalized eigenvector of `(K, M)` as a state, M-normalized,
/// with its sign fixed so that `∫_G φ r dx > 0` for a fixed generic weight
/// `r`. The sign convention makes mode mixes comparable across meshes.
pub fn eigenmode_state(space: &DiscreteGraphSpace, matrices: &GraphMatrices, k: usize) -> Result<GraphState> {
    check_space(space, matrices)?;
    let basis = matrices.modal_basis();
    if k >= basis.n_modes() {
        return Err(Error::Dimension {
            what: "mode index",
            expected: basis.n_modes(),
            got: k,
        });
    }
    let phi: CVector = basis.phi.column(k).map(|v| Complex64::new(v, 0.0));
    let local = space.edge_values(&phi, None);
    let mut moment = 0.0;
    for (e, mesh) in space.edges().iter().enumerate() {
        let h = mesh.h();
        for el in 0..mesh.n_elements {
            for (xi, w) in crate::hermite::GAUSS6_NODES.iter().zip(crate::hermite::GAUSS6_WEIGHTS) {
                let x = mesh.node(el) + xi * h;
                let r = 1.0 + 0.37 * (e + 1) as f64 + 0.61 * x + 0.23 * x * x;
                moment += w * h * r * space.eval_element(e, el, *xi, &local[e])[0].re;
            }
        }
    }
    let sign = if moment < 0.0 { -1.0 } else { 1.0 };
    Ok(GraphState::new(phi * Complex64::new(sign, 0.0), 0.0))
}

/// Modal Crank–Nicolson propagator for a fixed `τ`.
///
/// Borrows the matrices; any number of propagators may share one
/// [`GraphMatrices`] across threads.
pub struct Propagator<'a> {
    matrices: &'a GraphMatrices,
    basis: &'a ModalBasis,
    tau: f64,
    /// Cayley factors `(1 − iτλ/2) / (1 + iτλ/2)`.
    rho: Vec<Complex64>,
    /// `1 / (1 + iτλ/2)`.
    gain: Vec<Complex64>,
}

impl<'a> Propagator<'a> {
    pub fn new(matrices: &'a GraphMatrices, tau: f64) -> Result<Self> {
        if !(tau != 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("time step must be finite and nonzero, got {tau}")));
        }
        let basis = matrices.modal_basis();
        let (rho, gain) = basis
            .lambda
            .iter()
            .map(|&l| {
                let p = Complex64::new(1.0, 0.5 * tau * l);
                (p.conj() / p, p.inv())
            })
            .unzip();
        Ok(Self {
            matrices,
            basis,
            tau,
            rho,
            gain,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn matrices(&self) -> &GraphMatrices {
        self.matrices
    }

    pub fn basis(&self) -> &ModalBasis {
        self.basis
    }

    pub fn to_modal(&self, u: &CVector) -> CVector {
        linalg::real_mul(&self.basis.to_modal, u)
    }

    pub fn from_modal(&self, c: &CVector) -> CVector {
        linalg::real_mul(&self.basis.phi, c)
    }

    /// Homogeneous step in modal coordinates; `forward = false` steps by `−τ`.
    pub fn step_modal(&self, c: &mut CVector, forward: bool) {
        for (z, r) in c.iter_mut().zip(&self.rho) {
            *z *= if forward { *r } else { r.conj() };
        }
    }

    /// Forced forward step in modal coordinates.
    pub fn step_modal_forced(&self, c: &mut CVector, now: &CVector, next: &CVector) {
        let diff = now - next;
        let sum = now + next;
        let forcing = linalg::real_mul(&self.basis.m_fc, &diff)
            - linalg::real_mul(&self.basis.k_fc, &sum) * (I * (0.5 * self.tau));
        for k in 0..c.len() {
            c[k] = self.rho[k] * c[k] + self.gain[k] * forcing[k];
        }
    }

    /// Same contract as [`CnStepper::step`].
    pub fn step(&self, state: &GraphState, boundary: Option<BoundaryData<'_>>) -> Result<GraphState> {
        let n = self.matrices.n_dof();
        if state.len() != n {
            return Err(Error::Dimension {
                what: "state",
                expected: n,
                got: state.len(),
            });
        }
        let mut c = self.to_modal(&state.coeffs);
        match boundary {
            None => self.step_modal(&mut c, self.tau > 0.0),
            Some(b) => {
                let now = DVector::from_column_slice(b.now);
                let next = DVector::from_column_slice(b.next);
                if now.len() != self.matrices.n_slots() || next.len() != now.len() {
                    return Err(Error::Dimension {
                        what: "boundary data",
                        expected: self.matrices.n_slots(),
                        got: now.len(),
                    });
                }
                // the forced modal step assumes the stored Cayley factors
                // match the sign of τ
                self.step_modal_forced(&mut c, &now, &next);
            }
        }
        Ok(GraphState::new(self.from_modal(&c), state.time + self.tau))
    }

    /// Forward solve from `u0` over `n_steps` steps, storing every
    /// `stride`-th state.
    pub fn forward(
        &self,
        u0: &GraphState,
        controls: Option<&ControlSignal>,
        n_steps: usize,
        stride: usize,
    ) -> Result<Trajectory> {
        let stride = stride.max(1);
        let n = self.matrices.n_dof();
        if u0.len() != n {
            return Err(Error::Dimension {
                what: "initial state",
                expected: n,
                got: u0.len(),
            });
        }
        let t_end = self.tau * n_steps as f64;
        if let Some(h) = controls {
            h.check_grid(self.matrices.n_slots(), t_end, n_steps)?;
        }
        let mut c = self.to_modal(&u0.coeffs);
        let mut states = Vec::with_capacity(n_steps / stride + 1);
        let mut slots = controls.map(|_| Vec::with_capacity(n_steps / stride + 1));
        let push = |c: &CVector, k: usize, states: &mut Vec<GraphState>| {
            states.push(GraphState::new(self.from_modal(c), u0.time + self.tau * k as f64));
        };
        push(&c, 0, &mut states);
        if let (Some(s), Some(h)) = (slots.as_mut(), controls) {
            s.push(h.at(0));
        }
        let mut now = controls.map(|h| h.at(0));
        for k in 1..=n_steps {
            match (controls, now.as_mut()) {
                (Some(h), Some(prev)) => {
                    let next = h.at(k);
                    self.step_modal_forced(&mut c, prev, &next);
                    *prev = next;
                }
                _ => self.step_modal(&mut c, true),
            }
            if k % stride == 0 || k == n_steps {
                push(&c, k, &mut states);
                if let (Some(s), Some(h)) = (slots.as_mut(), controls) {
                    s.push(h.at(k));
                }
            }
        }
        Ok(Trajectory {
            states,
            tau: self.tau,
            stride,
            slots,
        })
    }

    /// Homogeneous backward solve from final data at time `t_end`; the
    /// returned trajectory is ordered by increasing time.
    pub fn backward(&self, v_t: &GraphState, n_steps: usize, stride: usize) -> Result<Trajectory> {
        let stride = stride.max(1);
        let n = self.matrices.n_dof();
        if v_t.len() != n {
            return Err(Error::Dimension {
                what: "final state",
                expected: n,
                got: v_t.len(),
            });
        }
        let mut c = self.to_modal(&v_t.coeffs);
        let mut states = Vec::with_capacity(n_steps / stride + 1);
        states.push(GraphState::new(v_t.coeffs.clone(), v_t.time));
        for k in 1..=n_steps {
            self.step_modal(&mut c, false);
            let m = n_steps - k;
            if m % stride == 0 || m == 0 {
                states.push(GraphState::new(self.from_modal(&c), v_t.time - self.tau * k as f64));
            }
        }
        states.reverse();
        Ok(Trajectory {
            states,
            tau: self.tau,
            stride,
            slots: None,
        })
    }

    /// Final free coefficients and slot values of a forced solve, without
    /// storing the trajectory.
    pub fn final_state(&self, u0: &CVector, controls: &ControlSignal) -> (CVector, CVector) {
        let mut c = self.to_modal(u0);
        let mut now = controls.at(0);
        for k in 1..=controls.n_steps {
            let next = controls.at(k);
            self.step_modal_forced(&mut c, &now, &next);
            now = next;
        }
        (self.from_modal(&c), now)
    }

    /// Forced solve in terms of L²-projected states.
    ///
    /// A state with tip slots `h` is identified with its M-orthogonal
    /// projection `u + M⁻¹ M_fc h` onto the clamped space. The solve starts
    /// from the free part whose projection is `w0` and returns the
    /// projection of the final state.
    pub fn weak_final_state(&self, w0: &CVector, controls: &ControlSignal) -> CVector {
        let m = self.matrices;
        let lift = |h: &CVector| m.mass_solver().solve(&linalg::real_mul(&m.m_fc, h));
        let start = w0 - lift(&controls.at(0));
        let (u, h) = self.final_state(&start, controls);
        u + lift(&h)
    }

    /// `S(τ n) u0` for the homogeneous problem.
    pub fn free_evolution(&self, u0: &CVector, n_steps: usize) -> CVector {
        let mut c = self.to_modal(u0);
        for (z, r) in c.iter_mut().zip(&self.rho) {
            *z *= r.powu(n_steps as u32);
        }
        self.from_modal(&c)
    }

    /// Modal amplitudes of the homogeneous adjoint solution at every node
    /// `0..=n_steps`, ending at `v_t`.
    pub fn adjoint_modal(&self, v_t: &CVector, n_steps: usize) -> Vec<CVector> {
        let mut c = self.to_modal(v_t);
        let mut out = vec![c.clone()];
        for _ in 0..n_steps {
            self.step_modal(&mut c, false);
            out.push(c.clone());
        }
        out.reverse();
        out
    }
}

fn grid_tau(t: f64, n_steps: usize) -> Result<f64> {
    if n_steps == 0 || !(t > 0.0 && t.is_finite()) {
        return Err(Error::GridMismatch(format!(
            "need T > 0 and at least one step, got T = {t}, n_steps = {n_steps}"
        )));
    }
    Ok(t / n_steps as f64)
}

/// Solves the (possibly forced) forward problem on `[0, T]`.
///
/// With controls the space must carry tip slots, and the slot values equal
/// `h_j(t_n)` at every node.
pub fn solve_forward(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    u0: &GraphState,
    controls: Option<&ControlSignal>,
    t: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    check_space(space, matrices)?;
    if controls.is_some() && !space.control_tips_free() {
        return Err(Error::Domain("forced solve needs a space with free tip slots".into()));
    }
    let prop = Propagator::new(matrices, grid_tau(t, n_steps)?)?;
    let mut start = u0.clone();
    start.time = 0.0;
    prop.forward(&start, controls, n_steps, 1)
}

/// Solves the homogeneous adjoint problem backward from `v(T) = v_t`.
///
/// Slots, if the space has any, are held at zero.
pub fn solve_adjoint(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    v_t: &GraphState,
    t: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    check_space(space, matrices)?;
    let prop = Propagator::new(matrices, grid_tau(t, n_steps)?)?;
    let mut end = v_t.clone();
    end.time = t;
    prop.backward(&end, n_steps, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem_assembly::{assemble, build_space, random_state};
    use crate::star_graph::StarGraphConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(ne: usize, slots: bool) -> (DiscreteGraphSpace, GraphMatrices) {
        let s = build_space(&StarGraphConfig::symmetric(3, 1.0), ne, slots).unwrap();
        let m = assemble(&s);
        (s, m)
    }

    fn rel(a: &CVector, b: &CVector) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn zero_stays_zero() {
        let (s, m) = setup(4, true);
        let z = GraphState::zeros(s.n_dof());
        let next = step(&s, &m, &z, 0.01, None).unwrap();
        assert_eq!(next.coeffs.norm(), 0.0);
        let h = ControlSignal::zeros(2, 0.0, 1.0, 20);
        let tr = solve_forward(&s, &m, &z, Some(&h), 1.0, 20).unwrap();
        assert!(tr.states.iter().all(|st| st.coeffs.norm() == 0.0));
    }

    #[test]
    fn homogeneous_step_is_m_unitary() {
        // 6-dof space: two unit edges with 2 elements each
        let cfg = StarGraphConfig::new(vec![1.0, 1.0], vec![1.0]);
        let s = build_space(&cfg, 2, false).unwrap();
        let m = assemble(&s);
        assert_eq!(s.n_dof(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_state(6, &mut rng);
        let stepper = CnStepper::new(&m, 0.37).unwrap();
        let v = stepper.step(&u, None).unwrap();
        let (a, b) = (linalg::quad_form(&m.m, &u.coeffs), linalg::quad_form(&m.m, &v.coeffs));
        assert!(((a - b) / a).abs() < 1e-12);
        // the Cayley map of a Hermitian pencil, built explicitly
        let cm = m.m.map(|x| Complex64::new(x, 0.0));
        let ck = m.k.map(|x| Complex64::new(x, 0.0));
        let plus = &cm + &ck * (I * 0.185);
        let minus = &cm - &ck * (I * 0.185);
        let cay = plus.try_inverse().unwrap() * minus;
        let unit = cay.adjoint() * &cm * &cay - &cm;
        assert!(unit.iter().all(|z| z.norm() < 1e-12 * linalg::max_abs(&m.m).max(1.0)));
    }

    #[test]
    fn backward_step_inverts_forward_step() {
        let (s, m) = setup(6, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_state(s.n_dof(), &mut rng);
        let f = step(&s, &m, &u, 0.01, None).unwrap();
        let b = step(&s, &m, &f, -0.01, None).unwrap();
        assert!(rel(&b.coeffs, &u.coeffs) < 1e-12);
    }

    #[test]
    fn modal_and_direct_steps_agree() {
        let (s, m) = setup(5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_state(s.n_dof(), &mut rng);
        let now = [Complex64::new(0.3, -1.0), Complex64::new(2.0, 0.1)];
        let next = [Complex64::new(-0.5, 0.2), Complex64::new(1.0, 1.0)];
        for tau in [1e-3, 0.05] {
            let direct = CnStepper::new(&m, tau).unwrap();
            let modal = Propagator::new(&m, tau).unwrap();
            let a = direct.step(&u, None).unwrap();
            let b = modal.step(&u, None).unwrap();
            assert!(rel(&a.coeffs, &b.coeffs) < 1e-10, "{}", rel(&a.coeffs, &b.coeffs));
            let bd = Some(BoundaryData { now: &now, next: &next });
            let a = direct.step(&u, bd).unwrap();
            let b = modal.step(&u, bd).unwrap();
            assert!(rel(&a.coeffs, &b.coeffs) < 1e-10);
        }
    }

    #[test]
    fn eigenmode_rotates_in_phase() {
        let (s, m) = setup(8, false);
        let basis = m.modal_basis();
        let lam = basis.lambda[0];
        let phi0 = basis.phi.column(0).map(|v| Complex64::new(v, 0.0));
        let u0 = GraphState::new(phi0.clone(), 0.0);
        let t = 0.01;
        for n_steps in [50usize, 100, 200] {
            let tr = solve_forward(&s, &m, &u0, None, t, n_steps).unwrap();
            let exact = &phi0 * Complex64::from_polar(1.0, -lam * t);
            let err = rel(&tr.last().coeffs, &exact);
            let tau = t / n_steps as f64;
            // Cayley phase error per unit time is tau² lam³ / 12 to leading order
            let predicted = tau * tau * lam.powi(3) / 12.0 * t;
            assert!((err - predicted).abs() < 0.05 * predicted + 1e-12, "{err} vs {predicted}");
        }
    }

    #[test]
    fn mass_conserved_over_long_runs() {
        let (s, m) = setup(8, false);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u0 = random_state(s.n_dof(), &mut rng);
        let tr = solve_forward(&s, &m, &u0, None, 0.5, 1000).unwrap();
        let m0 = linalg::quad_form(&m.m, &u0.coeffs);
        for st in &tr.states {
            let mm = linalg::quad_form(&m.m, &st.coeffs);
            assert!(((mm - m0) / m0).abs() <= 1e-10);
        }
        assert_eq!(tr.len(), 1001);
        assert!(tr.times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn adjoint_round_trip() {
        let (s, m) = setup(6, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vt = random_state(s.n_dof(), &mut rng);
        let adj = solve_adjoint(&s, &m, &vt, 0.3, 300).unwrap();
        assert!((adj.last().time - 0.3).abs() < 1e-15 && adj.first().time.abs() < 1e-12);
        let fwd = solve_forward(&s, &m, adj.first(), None, 0.3, 300).unwrap();
        assert!(rel(&fwd.last().coeffs, &vt.coeffs) < 1e-9);
        let zero = solve_adjoint(&s, &m, &GraphState::zeros(s.n_dof()), 0.3, 30).unwrap();
        assert!(zero.states.iter().all(|x| x.coeffs.norm() == 0.0));
    }

    #[test]
    fn homogeneous_duality_pairing_is_constant() {
        let (s, m) = setup(6, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u0 = random_state(s.n_dof(), &mut rng);
        let vt = random_state(s.n_dof(), &mut rng);
        let u = solve_forward(&s, &m, &u0, None, 0.2, 400).unwrap();
        let v = solve_adjoint(&s, &m, &vt, 0.2, 400).unwrap();
        let pair = |a: &GraphState, b: &GraphState| linalg::sesquilinear(&m.m, &b.coeffs, &a.coeffs);
        let d = I * (pair(u.last(), v.last()) - pair(u.first(), v.first()));
        let scale = pair(u.first(), u.first()).norm().sqrt() * pair(v.last(), v.last()).norm().sqrt();
        assert!(d.re.abs() <= 1e-10 * scale && d.im.abs() <= 1e-10 * scale);
    }

    #[test]
    fn time_reversal() {
        let (s, m) = setup(8, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u0 = random_state(s.n_dof(), &mut rng);
        let stepper = CnStepper::new(&m, 1e-3).unwrap();
        let back = CnStepper::new(&m, -1e-3).unwrap();
        let mut u = u0.clone();
        for _ in 0..200 {
            u = stepper.step(&u, None).unwrap();
        }
        for _ in 0..200 {
            u = back.step(&u, None).unwrap();
        }
        assert!(rel(&u.coeffs, &u0.coeffs) < 1e-9);
    }

    #[test]
    fn grid_and_dimension_errors() {
        let (s, m) = setup(3, true);
        let u0 = GraphState::zeros(s.n_dof());
        let h = ControlSignal::zeros(2, 0.0, 1.0, 10);
        assert!(matches!(
            solve_forward(&s, &m, &u0, Some(&h), 1.0, 20),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            solve_forward(&s, &m, &u0, Some(&h), 2.0, 10),
            Err(Error::GridMismatch(_))
        ));
        let bad = GraphState::zeros(s.n_dof() + 1);
        assert!(matches!(step(&s, &m, &bad, 0.1, None), Err(Error::Dimension { .. })));
        assert!(step(&s, &m, &u0, 0.0, None).is_err());
        let (hs, hm) = setup(3, false);
        assert!(solve_forward(&hs, &hm, &GraphState::zeros(hs.n_dof()), Some(&h), 1.0, 10).is_err());
    }

    #[test]
    fn forced_solve_imposes_tip_slots() {
        let (s, m) = setup(4, true);
        let mut h = ControlSignal::zeros(2, 0.0, 0.5, 50);
        for n in 0..=50 {
            let t = h.time(n);
            h.samples[0][n] = Complex64::new((3.0 * t).sin(), 0.0);
            h.samples[1][n] = Complex64::new(0.0, t * t);
        }
        let tr = solve_forward(&s, &m, &GraphState::zeros(s.n_dof()), Some(&h), 0.5, 50).unwrap();
        let slots = tr.slots.as_ref().unwrap();
        for n in 0..=50 {
            let local = s.edge_values(&tr.states[n].coeffs, Some(slots[n].as_slice()));
            for e in 1..3 {
                let tip = s.eval(e, 1.0, crate::fem_assembly::Side::Left, &local[e]);
                assert!((tip[1] - h.samples[e - 1][n]).norm() < 1e-14);
                assert!(tip[0].norm() < 1e-14);
            }
        }
        // agrees with the direct stepper
        let direct = CnStepper::new(&m, 0.01).unwrap();
        let mut u = GraphState::zeros(s.n_dof());
        for n in 0..50 {
            let (a, b) = (h.at(n), h.at(n + 1));
            u = direct
                .step(&u, Some(BoundaryData { now: a.as_slice(), next: b.as_slice() }))
                .unwrap();
        }
        assert!(rel(&u.coeffs, &tr.last().coeffs) < 1e-10);
    }

    #[test]
    fn csv_exports() {
        let (s, m) = setup(2, true);
        let tr = solve_forward(&s, &m, &GraphState::zeros(s.n_dof()), None, 0.1, 2).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "time,dof,real,imag");
        assert_eq!(text.lines().count(), 1 + 3 * s.n_dof());
        let h = ControlSignal::zeros(2, 0.0, 0.1, 2);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "time,edge,real,imag");
        assert_eq!(text.lines().count(), 1 + 2 * 3);
    }
}

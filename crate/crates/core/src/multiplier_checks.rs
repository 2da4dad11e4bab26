//! Conservation laws and the Morawetz multiplier identity along discrete
//! trajectories.
//!
//! The identity pairs the equation with `q ∂ₓū + ½ ū ∂ₓq` for a real,
//! time-independent polynomial multiplier `q` and integrates by parts on
//! every edge. Its seventeen terms are evaluated separately, in a fixed
//! order, and the residual is the magnitude of their sum.

use num_complex::Complex64;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem_assembly::{DiscreteGraphSpace, GraphMatrices, GraphState, Side};
use crate::hermite::{GAUSS6_NODES, GAUSS6_WEIGHTS};
use crate::linalg::{self, CVector};
use crate::propagator::{trapezoid_weight, Trajectory};

/// `(u*Mu, u*K1u, u*K2u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForms {
    pub mass: f64,
    pub h1_seminorm: f64,
    pub h2_seminorm: f64,
}

impl QuadraticForms {
    /// `u*(K1 + K2)u`
    pub fn energy(&self) -> f64 {
        self.h1_seminorm + self.h2_seminorm
    }

    /// `u*Gu`
    pub fn gram(&self) -> f64 {
        self.mass + self.energy()
    }
}

pub fn quadratic_forms(matrices: &GraphMatrices, state: &GraphState) -> QuadraticForms {
    QuadraticForms {
        mass: linalg::quad_form(&matrices.m, &state.coeffs),
        h1_seminorm: linalg::quad_form(&matrices.k1, &state.coeffs),
        h2_seminorm: linalg::quad_form(&matrices.k2, &state.coeffs),
    }
}

/// Relative drifts of the conserved forms at every stored node, measured
/// against the first node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub gram: Vec<f64>,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
    pub max_gram_drift: f64,
}

fn drift(v: f64, v0: f64) -> f64 {
    if v0 == 0.0 {
        v.abs()
    } else {
        ((v - v0) / v0).abs()
    }
}

pub fn conservation_report(matrices: &GraphMatrices, trajectory: &Trajectory) -> ConservationReport {
    let forms: Vec<QuadraticForms> = trajectory
        .states
        .iter()
        .map(|s| quadratic_forms(matrices, s))
        .collect();
    let f0 = forms[0];
    let mass: Vec<f64> = forms.iter().map(|f| drift(f.mass, f0.mass)).collect();
    let energy: Vec<f64> = forms.iter().map(|f| drift(f.energy(), f0.energy())).collect();
    let gram: Vec<f64> = forms.iter().map(|f| drift(f.gram(), f0.gram())).collect();
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    ConservationReport {
        max_mass_drift: max(&mass),
        max_energy_drift: max(&energy),
        max_gram_drift: max(&gram),
        mass,
        energy,
        gram,
    }
}

/// Real multiplier `q(x)`, the same polynomial on every edge in that edge's
/// own coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "coefficients", rename_all = "snake_case")]
pub enum MultiplierFunction {
    ConstantOne,
    CoordinateX,
    /// Coefficients in increasing degree.
    Polynomial(Vec<f64>),
}

impl MultiplierFunction {
    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            Self::ConstantOne => vec![1.0],
            Self::CoordinateX => vec![0.0, 1.0],
            Self::Polynomial(c) => c.clone(),
        }
    }

    pub fn degree(&self) -> usize {
        let c = self.coefficients();
        c.iter().rposition(|v| *v != 0.0).unwrap_or(0)
    }

    /// `[q, q', q'', q''', q'''']` at `x`.
    pub fn derivatives(&self, x: f64) -> [f64; 5] {
        let mut c = self.coefficients();
        let mut out = [0.0; 5];
        for slot in out.iter_mut() {
            *slot = c.iter().rev().fold(0.0, |acc, a| acc * x + a);
            c = c.iter().enumerate().skip(1).map(|(k, a)| a * k as f64).collect();
        }
        out
    }
}

/// Names of the identity's terms, in summation order.
pub const TERM_NAMES: [&str; 17] = [
    "t01_im_u_dxu_dtq",
    "t02_dxu2_dxq",
    "t03_dxxu2_dxq",
    "t04_re_dxu_u_dxxq",
    "t05_dxu2_dxxxq",
    "t06_re_dxu_u_dxxxxq",
    "t07_im_u_dxu_q_end_times",
    "t08_bdry_dxxu2_q",
    "t09_bdry_im_u_dtu_q",
    "t10_bdry_dxu2_q",
    "t11_bdry_re_dxu_u_dxq",
    "t12_bdry_dxu2_dxxq",
    "t13_bdry_re_dxxu_dxu_dxq",
    "t14_bdry_re_dxxxu_dxu_q",
    "t15_bdry_re_dxu_u_dxxxq",
    "t16_bdry_re_dxxu_u_dxxq",
    "t17_bdry_re_dxxxu_u_dxq",
];

/// Terms of the multiplier identity with their signs and prefactors
/// applied; they sum to zero for exact solutions.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct IdentityReport {
    pub terms: Vec<(String, f64)>,
    pub residual: f64,
    /// Largest term magnitude.
    pub scale: f64,
}

impl IdentityReport {
    pub fn relative_residual(&self) -> f64 {
        if self.scale == 0.0 {
            self.residual
        } else {
            self.residual / self.scale
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl Serialize for IdentityReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Terms<'a>(&'a [(String, f64)]);
        impl Serialize for Terms<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.len()))?;
                for (k, v) in self.0 {
                    m.serialize_entry(k, v)?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(4))?;
        m.serialize_entry("terms", &Terms(&self.terms))?;
        m.serialize_entry("residual", &self.residual)?;
        m.serialize_entry("scale", &self.scale)?;
        m.serialize_entry("relative_residual", &self.relative_residual())?;
        m.end()
    }
}

/// Edge-wise local vectors of a homogeneous state.
fn local_values(space: &DiscreteGraphSpace, u: &CVector) -> Vec<Vec<Complex64>> {
    space.edge_values(u, None)
}

/// Endpoint data of one edge: `(x, [u, u', u'', u'''])` at the left and right end.
type EndData = [(f64, [Complex64; 4]); 2];

fn end_data(space: &DiscreteGraphSpace, local: &[Vec<Complex64>]) -> Vec<EndData> {
    space
        .edges()
        .iter()
        .enumerate()
        .map(|(e, mesh)| {
            [
                (mesh.x0, space.eval(e, mesh.x0, Side::Right, &local[e])),
                (mesh.x1(), space.eval(e, mesh.x1(), Side::Left, &local[e])),
            ]
        })
        .collect()
}

/// Per-node space integrals (terms 2..=6 integrands, without time).
fn interior_terms(space: &DiscreteGraphSpace, local: &[Vec<Complex64>], q: &MultiplierFunction) -> [f64; 5] {
    let mut acc = [0.0; 5];
    for (e, mesh) in space.edges().iter().enumerate() {
        let h = mesh.h();
        for k in 0..mesh.n_elements {
            for (xi, w) in GAUSS6_NODES.iter().zip(GAUSS6_WEIGHTS) {
                let x = mesh.node(k) + xi * h;
                let d = space.eval_element(e, k, *xi, &local[e]);
                let qd = q.derivatives(x);
                let dx2 = d[1].norm_sqr();
                let dxx2 = d[2].norm_sqr();
                let re_dxu_u = (d[1] * d[0].conj()).re;
                let wh = w * h;
                acc[0] -= wh * dx2 * qd[1];
                acc[1] -= 2.0 * wh * dxx2 * qd[1];
                acc[2] -= 0.5 * wh * re_dxu_u * qd[2];
                acc[3] += 1.5 * wh * dx2 * qd[3];
                acc[4] += 0.5 * wh * re_dxu_u * qd[4];
            }
        }
    }
    acc
}

/// `∫_G u ∂ₓū q dx` at one time.
fn u_dxu_q(space: &DiscreteGraphSpace, local: &[Vec<Complex64>], q: &MultiplierFunction) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (e, mesh) in space.edges().iter().enumerate() {
        let h = mesh.h();
        for k in 0..mesh.n_elements {
            for (xi, w) in GAUSS6_NODES.iter().zip(GAUSS6_WEIGHTS) {
                let x = mesh.node(k) + xi * h;
                let d = space.eval_element(e, k, *xi, &local[e]);
                acc += d[0] * d[1].conj() * (w * h * q.derivatives(x)[0]);
            }
        }
    }
    acc
}

/// Boundary brackets (terms 8..=17 except 9) at one time: the sum over
/// edges of right-end value minus left-end value.
fn boundary_terms(ends: &[EndData], dt_ends: &[[Complex64; 2]], q: &MultiplierFunction) -> [f64; 10] {
    let mut acc = [0.0; 10];
    for (edge, dte) in ends.iter().zip(dt_ends) {
        for (side, ((x, d), ut)) in edge.iter().zip(dte).enumerate() {
            let sign = if side == 1 { 1.0 } else { -1.0 };
            let qd = q.derivatives(*x);
            let [u, ux, uxx, uxxx] = *d;
            let vals = [
                0.5 * uxx.norm_sqr() * qd[0],
                0.5 * (u * ut.conj()).im * qd[0],
                0.5 * ux.norm_sqr() * qd[0],
                0.5 * (ux * u.conj()).re * qd[1],
                -ux.norm_sqr() * qd[2],
                1.5 * (uxx * ux.conj()).re * qd[1],
                -(uxxx * ux.conj()).re * qd[0],
                -0.5 * (ux * u.conj()).re * qd[3],
                0.5 * (uxx * u.conj()).re * qd[2],
                -0.5 * (uxxx * u.conj()).re * qd[1],
            ];
            for (a, v) in acc.iter_mut().zip(vals) {
                *a += sign * v;
            }
        }
    }
    acc
}

fn check_homogeneous(trajectory: &Trajectory) -> Result<()> {
    if trajectory.is_empty() {
        return Err(Error::Domain("empty trajectory".into()));
    }
    if let Some(slots) = &trajectory.slots {
        if slots.iter().flatten().any(|z| z.norm() != 0.0) {
            return Err(Error::Domain("identity checks need a homogeneous trajectory".into()));
        }
    }
    Ok(())
}

/// Evaluates every term of the multiplier identity (no source) along a
/// homogeneous trajectory.
///
/// Space integrals use 6-point Gauss–Legendre per element, which is exact
/// for the polynomial integrands when `deg q <= 4`; time integrals use the
/// trapezoid rule on the stored nodes. The boundary time derivative comes
/// from the discrete generator `u' = -i M⁻¹ K u`.
pub fn morawetz_residual(
    space: &DiscreteGraphSpace,
    matrices: &GraphMatrices,
    trajectory: &Trajectory,
    q: &MultiplierFunction,
) -> Result<IdentityReport> {
    if q.degree() > 4 {
        return Err(Error::Domain(format!("multiplier degree {} exceeds 4", q.degree())));
    }
    check_homogeneous(trajectory)?;
    let n = trajectory.len();
    let dt = trajectory.dt();
    let mass = matrices.mass_solver();
    let mut sums = [0.0f64; 17];
    for (k, state) in trajectory.states.iter().enumerate() {
        let w = if n == 1 { 0.0 } else { trapezoid_weight(k, n - 1) * dt };
        let local = local_values(space, &state.coeffs);
        let ku = linalg::real_mul(&matrices.k, &state.coeffs);
        let ut = mass.solve(&ku) * Complex64::new(0.0, -1.0);
        let local_t = local_values(space, &ut);
        let ends = end_data(space, &local);
        let dt_ends: Vec<[Complex64; 2]> = space
            .edges()
            .iter()
            .enumerate()
            .map(|(e, mesh)| {
                [
                    space.eval(e, mesh.x0, Side::Right, &local_t[e])[0],
                    space.eval(e, mesh.x1(), Side::Left, &local_t[e])[0],
                ]
            })
            .collect();
        let inner = interior_terms(space, &local, q);
        let bdry = boundary_terms(&ends, &dt_ends, q);
        for (i, v) in inner.iter().enumerate() {
            sums[1 + i] += w * v;
        }
        sums[7] += w * bdry[0];
        sums[8] += w * bdry[1];
        for (i, v) in bdry[2..].iter().enumerate() {
            sums[9 + i] += w * v;
        }
    }
    // q is time-independent
    sums[0] = 0.0;
    let first = local_values(space, &trajectory.first().coeffs);
    let last = local_values(space, &trajectory.last().coeffs);
    sums[6] = -0.5 * (u_dxu_q(space, &last, q) - u_dxu_q(space, &first, q)).im;

    let residual = sums.iter().sum::<f64>().abs();
    let scale = sums.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(IdentityReport {
        terms: TERM_NAMES
            .iter()
            .zip(sums)
            .map(|(n, v)| (n.to_string(), v))
            .collect(),
        residual,
        scale,
    })
}

/// Time-integrated vertex and tip quantities behind the `q = 1` balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexBalance {
    /// `∫ (|∂ₓu_1(0)|² − Σ_j |∂ₓu_j(0)|²) dt`, nonpositive by the weight bound.
    pub first_derivative_defect: f64,
    /// `∫ (|∂²ₓu_1(0)|² − Σ_j |∂²ₓu_j(0)|²) dt`, zero for exact solutions.
    pub second_derivative_defect: f64,
    /// `∫ |∂²ₓu_1(0)|² dt`, the scale of the previous entry.
    pub second_derivative_scale: f64,
    /// `−2 ∫ Re[∂³ₓu ∂ₓū]_vertex dt` (right minus left ends at the vertex).
    pub third_order_coupling: f64,
    /// `∫ |∂²ₓu_1(−l_1)|² dt`
    pub uncontrolled_tip: f64,
    /// `∫ Σ_j |∂²ₓu_j(l_j)|² dt`
    pub observed: f64,
    /// `Im ∫_G u ∂ₓū dx` at the final time minus the initial time.
    pub im_bracket: f64,
}

impl VertexBalance {
    /// Right side of the `q = 1` identity solved for [`Self::uncontrolled_tip`].
    pub fn balance_rhs(&self) -> f64 {
        -self.im_bracket
            + self.observed
            + self.first_derivative_defect
            + self.second_derivative_defect
            + self.third_order_coupling
    }

    /// `Im ∫ u ∂ₓū ]₀ᵀ + ∫ Σ_j |∂²ₓu_j(l_j)|²`, the upper bound used to
    /// control the uncontrolled tip.
    pub fn tip_bound(&self) -> f64 {
        self.im_bracket + self.observed
    }
}

pub fn vertex_balance(space: &DiscreteGraphSpace, trajectory: &Trajectory) -> Result<VertexBalance> {
    check_homogeneous(trajectory)?;
    let n = trajectory.len();
    let dt = trajectory.dt();
    let one = MultiplierFunction::ConstantOne;
    let mut out = VertexBalance {
        first_derivative_defect: 0.0,
        second_derivative_defect: 0.0,
        second_derivative_scale: 0.0,
        third_order_coupling: 0.0,
        uncontrolled_tip: 0.0,
        observed: 0.0,
        im_bracket: 0.0,
    };
    for (k, state) in trajectory.states.iter().enumerate() {
        let w = if n == 1 { 0.0 } else { trapezoid_weight(k, n - 1) * dt };
        let local = local_values(space, &state.coeffs);
        let ends = end_data(space, &local);
        // edge 1 meets the vertex at its right end, the others at their left
        let v1 = ends[0][1].1;
        out.first_derivative_defect += w * v1[1].norm_sqr();
        out.second_derivative_defect += w * v1[2].norm_sqr();
        out.second_derivative_scale += w * v1[2].norm_sqr();
        out.third_order_coupling -= 2.0 * w * (v1[3] * v1[1].conj()).re;
        out.uncontrolled_tip += w * ends[0][0].1[2].norm_sqr();
        for edge in &ends[1..] {
            let v = edge[0].1;
            out.first_derivative_defect -= w * v[1].norm_sqr();
            out.second_derivative_defect -= w * v[2].norm_sqr();
            out.third_order_coupling += 2.0 * w * (v[3] * v[1].conj()).re;
            out.observed += w * edge[1].1[2].norm_sqr();
        }
    }
    let first = local_values(space, &trajectory.first().coeffs);
    let last = local_values(space, &trajectory.last().coeffs);
    out.im_bracket = (u_dxu_q(space, &last, &one) - u_dxu_q(space, &first, &one)).im;
    Ok(out)
}

//! H²-conforming cubic Hermite discretization of graph functions.
//!
//! Every edge is split into `n_e` equal elements carrying nodal values and
//! first derivatives. The vertex value coupling `u_1(0) = alpha_j u_j(0)` and
//! the derivative coupling `u_1'(0) = sum_j u_j'(0) / alpha_j` are imposed by
//! elimination: the vertex carries one value dof (`u_1(0)`) and one
//! derivative dof per controlled edge (`u_j'(0)`). The second- and
//! third-derivative couplings are the natural conditions of the bilinear
//! forms and hold only weakly.
//!
//! Outer ends are clamped. The tip derivatives `u_j'(l_j)` either vanish
//! (homogeneous problem) or are kept as inhomogeneous *slots* that carry the
//! boundary controls; slots are data, never unknowns.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hermite;
use crate::linalg::{self, CVector, SpdSolver};
use crate::propagator::ModalBasis;
use crate::star_graph::StarGraphConfig;

/// Coefficient vector of a graph function at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub coeffs: CVector,
    pub time: f64,
}

impl GraphState {
    pub fn new(coeffs: CVector, time: f64) -> Self {
        Self { coeffs, time }
    }

    pub fn zeros(n_dof: usize) -> Self {
        Self::new(CVector::zeros(n_dof), 0.0)
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self::new(&self.coeffs * c, self.time)
    }
}

/// Where a local element dof lives in the global (free + slot) numbering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofLink {
    pub global: usize,
    pub coef: f64,
}

/// Uniform mesh of one edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeMesh {
    /// Left endpoint: `-l_1` for edge 1, `0` otherwise.
    pub x0: f64,
    pub length: f64,
    pub n_elements: usize,
}

impl EdgeMesh {
    pub fn h(&self) -> f64 {
        self.length / self.n_elements as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.x0 + self.h() * k as f64
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.length
    }
}

/// Which side of a node to take one-sided derivatives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct DiscreteGraphSpace {
    cfg: StarGraphConfig,
    elements_per_edge: usize,
    control_tips_free: bool,
    edges: Vec<EdgeMesh>,
    /// `local_map[edge][local_dof]`: links into the extended numbering.
    local_map: Vec<Vec<Vec<DofLink>>>,
    n_dof: usize,
    n_slots: usize,
}

/// Free-dof index of the vertex value `u_1(0)`.
pub const VERTEX_VALUE: usize = 0;

pub fn build_space(
    cfg: &StarGraphConfig,
    elements_per_edge: usize,
    control_tips_free: bool,
) -> Result<DiscreteGraphSpace> {
    cfg.ensure_valid()?;
    DiscreteGraphSpace::new(cfg, elements_per_edge, control_tips_free)
}

impl DiscreteGraphSpace {
    /// Like [`build_space`] but only checks positivity and counts, not the
    /// weight constraints. Used for parameter studies on non-admissible
    /// couplings.
    pub fn new(
        cfg: &StarGraphConfig,
        elements_per_edge: usize,
        control_tips_free: bool,
    ) -> Result<Self> {
        let n = cfg.n_edges();
        if n < 2
            || cfg.alphas.len() != n - 1
            || cfg.lengths.iter().any(|l| !(*l > 0.0))
            || cfg.alphas.iter().any(|a| !(*a > 0.0))
        {
            return Err(Error::InvalidConfig(cfg.validate().violations));
        }
        if elements_per_edge == 0 {
            return Err(Error::Domain("elements_per_edge must be at least 1".into()));
        }
        let ne = elements_per_edge;
        let n_dof = n + n * (ne - 1) * 2;
        let n_slots = if control_tips_free { n - 1 } else { 0 };

        let edges: Vec<EdgeMesh> = cfg
            .lengths
            .iter()
            .enumerate()
            .map(|(e, &l)| EdgeMesh {
                x0: if e == 0 { -l } else { 0.0 },
                length: l,
                n_elements: ne,
            })
            .collect();

        let interior = |e: usize, k: usize, d: usize| n + e * (ne - 1) * 2 + (k - 1) * 2 + d;
        let mut local_map = Vec::with_capacity(n);
        for e in 0..n {
            let mut map = vec![Vec::new(); 2 * (ne + 1)];
            for k in 1..ne {
                map[2 * k].push(DofLink {
                    global: interior(e, k, 0),
                    coef: 1.0,
                });
                map[2 * k + 1].push(DofLink {
                    global: interior(e, k, 1),
                    coef: 1.0,
                });
            }
            if e == 0 {
                // node ne sits on the vertex; node 0 is clamped
                map[2 * ne].push(DofLink {
                    global: VERTEX_VALUE,
                    coef: 1.0,
                });
                for j in 1..n {
                    map[2 * ne + 1].push(DofLink {
                        global: j,
                        coef: 1.0 / cfg.alpha(j),
                    });
                }
            } else {
                map[0].push(DofLink {
                    global: VERTEX_VALUE,
                    coef: 1.0 / cfg.alpha(e),
                });
                map[1].push(DofLink {
                    global: e,
                    coef: 1.0,
                });
                // tip value is always zero
                if control_tips_free {
                    map[2 * ne + 1].push(DofLink {
                        global: n_dof + e - 1,
                        coef: 1.0,
                    });
                }
            }
            local_map.push(map);
        }

        Ok(Self {
            cfg: cfg.clone(),
            elements_per_edge: ne,
            control_tips_free,
            edges,
            local_map,
            n_dof,
            n_slots,
        })
    }

    pub fn cfg(&self) -> &StarGraphConfig {
        &self.cfg
    }

    pub fn elements_per_edge(&self) -> usize {
        self.elements_per_edge
    }

    pub fn control_tips_free(&self) -> bool {
        self.control_tips_free
    }

    pub fn edges(&self) -> &[EdgeMesh] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of free (unknown) coefficients.
    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    /// Number of inhomogeneous tip-derivative slots (0 or `N - 1`).
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn local_map(&self, edge: usize) -> &[Vec<DofLink>] {
        &self.local_map[edge]
    }

    /// Human-readable description of the eliminated constraints.
    pub fn constraint_summary(&self) -> Vec<String> {
        let n = self.n_edges();
        let mut out = vec![
            "edge 1: u(-l_1) = u'(-l_1) = 0".to_string(),
            format!("vertex: u_j(0) = u_1(0) / alpha_j, j = 2..{n}"),
            format!("vertex: u_1'(0) = sum_j u_j'(0) / alpha_j"),
        ];
        for j in 2..=n {
            out.push(format!("edge {j}: u(l_{j}) = 0"));
            if self.control_tips_free {
                out.push(format!("edge {j}: u'(l_{j}) = h_{j}(t) (slot {})", j - 2));
            } else {
                out.push(format!("edge {j}: u'(l_{j}) = 0"));
            }
        }
        out
    }

    /// Per-edge local dof vectors `[u(x_0), u'(x_0), ..., u(x_ne), u'(x_ne)]`
    /// of the function with free coefficients `coeffs` and slot values
    /// `slots` (zero when `None`).
    pub fn edge_values(&self, coeffs: &CVector, slots: Option<&[Complex64]>) -> Vec<Vec<Complex64>> {
        let lookup = |g: usize| -> Complex64 {
            if g < self.n_dof {
                coeffs[g]
            } else {
                slots.map_or(Complex64::new(0.0, 0.0), |s| s[g - self.n_dof])
            }
        };
        self.local_map
            .iter()
            .map(|map| {
                map.iter()
                    .map(|links| links.iter().map(|l| lookup(l.global) * l.coef).sum())
                    .collect()
            })
            .collect()
    }

    /// Derivatives 0..=3 inside element `elem` of `edge` at local `xi`.
    pub fn eval_element(&self, edge: usize, elem: usize, xi: f64, local: &[Complex64]) -> [Complex64; 4] {
        let h = self.edges[edge].h();
        let s = hermite::shape(xi, h);
        let dofs = &local[2 * elem..2 * elem + 4];
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for (d, row) in s.iter().enumerate() {
            out[d] = row.iter().zip(dofs).map(|(n, u)| u * *n).sum();
        }
        out
    }

    /// Derivatives 0..=3 at `x` on `edge`; at nodes the element on `side` is
    /// used.
    pub fn eval(&self, edge: usize, x: f64, side: Side, local: &[Complex64]) -> [Complex64; 4] {
        let mesh = &self.edges[edge];
        let h = mesh.h();
        let t = (x - mesh.x0) / h;
        let ne = mesh.n_elements;
        let mut elem = match side {
            Side::Right => t.floor(),
            Side::Left => t.ceil() - 1.0,
        };
        elem = elem.clamp(0.0, (ne - 1) as f64);
        let e = elem as usize;
        let xi = t - elem;
        self.eval_element(edge, e, xi, local)
    }

    /// Nodal interpolant of a graph function given its value and first
    /// derivative on each edge (`f(edge, x) -> (u, u')`, 0-based edges).
    ///
    /// Vertex data are taken from edge 1 (value) and the controlled edges
    /// (derivatives); clamped data are dropped.
    pub fn interpolate<F>(&self, f: F) -> GraphState
    where
        F: Fn(usize, f64) -> (Complex64, Complex64),
    {
        let n = self.n_edges();
        let ne = self.elements_per_edge;
        let mut coeffs = CVector::zeros(self.n_dof);
        coeffs[VERTEX_VALUE] = f(0, 0.0).0;
        for e in 1..n {
            coeffs[e] = f(e, 0.0).1;
        }
        for (e, mesh) in self.edges.iter().enumerate() {
            for k in 1..ne {
                let (v, d) = f(e, mesh.node(k));
                let base = n + e * (ne - 1) * 2 + (k - 1) * 2;
                coeffs[base] = v;
                coeffs[base + 1] = d;
            }
        }
        GraphState::new(coeffs, 0.0)
    }
}

/// Hermitian (real symmetric) matrices of the three quadratic forms.
///
/// Blocks with suffix `_fc` couple free dofs to slots; `_cc` couple slots
/// to slots. They are empty when the space has no slots.
#[derive(Debug, Clone)]
pub struct GraphMatrices {
    pub m: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// `K1 + K2`, the generator of `i M u' = (K1 + K2) u`.
    pub k: DMatrix<f64>,
    /// `M + K1 + K2`, the discrete H²₀ Gram matrix.
    pub g: DMatrix<f64>,
    pub m_fc: DMatrix<f64>,
    pub k_fc: DMatrix<f64>,
    pub m_cc: DMatrix<f64>,
    pub k_cc: DMatrix<f64>,
    modal: OnceLock<ModalBasis>,
    mass_solver: OnceLock<SpdSolver>,
    gram_solver: OnceLock<SpdSolver>,
}

impl GraphMatrices {
    pub fn n_dof(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_slots(&self) -> usize {
        self.m_fc.ncols()
    }

    /// Generalized eigendecomposition of `(K, M)`, computed once.
    pub fn modal_basis(&self) -> &ModalBasis {
        self.modal
            .get_or_init(|| ModalBasis::new(self).expect("mass matrix is positive definite"))
    }

    pub fn mass_solver(&self) -> &SpdSolver {
        self.mass_solver
            .get_or_init(|| SpdSolver::new(&self.m, "mass matrix").expect("mass matrix is positive definite"))
    }

    pub fn gram_solver(&self) -> &SpdSolver {
        self.gram_solver
            .get_or_init(|| SpdSolver::new(&self.g, "Gram matrix").expect("Gram matrix is positive definite"))
    }

    /// Largest relative asymmetry of `M`, `K1`, `K2`.
    pub fn symmetry_defect(&self) -> f64 {
        [&self.m, &self.k1, &self.k2]
            .into_iter()
            .map(linalg::symmetry_defect)
            .fold(0.0, f64::max)
    }
}

/// Extended matrices over free dofs followed by slots.
fn assemble_extended(space: &DiscreteGraphSpace) -> [DMatrix<f64>; 3] {
    let n_ext = space.n_dof + space.n_slots;
    let mut out = [
        DMatrix::zeros(n_ext, n_ext),
        DMatrix::zeros(n_ext, n_ext),
        DMatrix::zeros(n_ext, n_ext),
    ];
    for (e, mesh) in space.edges.iter().enumerate() {
        let h = mesh.h();
        let elems = [hermite::mass(h), hermite::stiffness1(h), hermite::stiffness2(h)];
        let map = &space.local_map[e];
        for el in 0..mesh.n_elements {
            for a in 0..4 {
                for b in 0..4 {
                    for la in &map[2 * el + a] {
                        for lb in &map[2 * el + b] {
                            let c = la.coef * lb.coef;
                            for (mat, elem) in out.iter_mut().zip(&elems) {
                                mat[(la.global, lb.global)] += c * elem[a][b];
                            }
                        }
                    }
                }
            }
        }
    }
    for mat in out.iter_mut() {
        let sym = (&*mat + mat.transpose()) * 0.5;
        *mat = sym;
    }
    out
}

pub fn assemble(space: &DiscreteGraphSpace) -> GraphMatrices {
    let [m_ext, k1_ext, k2_ext] = assemble_extended(space);
    let n = space.n_dof;
    let s = space.n_slots;
    let ff = |a: &DMatrix<f64>| a.view((0, 0), (n, n)).into_owned();
    let fc = |a: &DMatrix<f64>| a.view((0, n), (n, s)).into_owned();
    let cc = |a: &DMatrix<f64>| a.view((n, n), (s, s)).into_owned();
    let k_ext = &k1_ext + &k2_ext;
    let m = ff(&m_ext);
    let k1 = ff(&k1_ext);
    let k2 = ff(&k2_ext);
    let k = &k1 + &k2;
    let g = &m + &k;
    GraphMatrices {
        m_fc: fc(&m_ext),
        k_fc: fc(&k_ext),
        m_cc: cc(&m_ext),
        k_cc: cc(&k_ext),
        m,
        k1,
        k2,
        k,
        g,
        modal: OnceLock::new(),
        mass_solver: OnceLock::new(),
        gram_solver: OnceLock::new(),
    }
}

/// Vertex data of a graph function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexTrace {
    /// `u_1(0)`
    pub value: Complex64,
    /// `u_1'(0)`
    pub derivative: Complex64,
    /// `(u_j(0), u_j'(0))` for `j = 2..N`.
    pub edges: Vec<(Complex64, Complex64)>,
}

pub fn vertex_trace(space: &DiscreteGraphSpace, state: &GraphState) -> VertexTrace {
    let cfg = space.cfg();
    let a = state.coeffs[VERTEX_VALUE];
    let edges: Vec<(Complex64, Complex64)> = (1..space.n_edges())
        .map(|e| (a / cfg.alpha(e), state.coeffs[e]))
        .collect();
    let derivative = edges
        .iter()
        .enumerate()
        .map(|(k, (_, d))| d / cfg.alpha(k + 1))
        .sum();
    VertexTrace {
        value: a,
        derivative,
        edges,
    }
}

/// Discrete best constant `c_h` in `‖f‖² <= c_h ‖f'‖²`: the largest
/// generalized eigenvalue of `(M, K1)`.
pub fn poincare_constant(matrices: &GraphMatrices) -> Result<f64> {
    let eig = linalg::generalized_eigen(&matrices.k1, &matrices.m)?;
    Ok(1.0 / eig.values[0])
}

/// Matrices of a single clamped–clamped interval `(0, length)`.
pub fn clamped_interval(length: f64, n_elements: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let nn = n_elements + 1;
    let h = length / n_elements as f64;
    let full = 2 * nn;
    let mut mats = [DMatrix::zeros(full, full), DMatrix::zeros(full, full), DMatrix::zeros(full, full)];
    let elems = [hermite::mass(h), hermite::stiffness1(h), hermite::stiffness2(h)];
    for el in 0..n_elements {
        for a in 0..4 {
            for b in 0..4 {
                for (mat, elem) in mats.iter_mut().zip(&elems) {
                    mat[(2 * el + a, 2 * el + b)] += elem[a][b];
                }
            }
        }
    }
    let keep: Vec<usize> = (2..full - 2).collect();
    let [m, k1, k2] = mats;
    let restrict = |a: DMatrix<f64>| a.select_rows(&keep).select_columns(&keep);
    (restrict(m), restrict(k1), restrict(k2))
}

/// Writes a dense matrix in Matrix Market coordinate format (nonzeros only).
pub fn write_matrix_market<W: Write>(mut w: W, a: &DMatrix<f64>) -> Result<()> {
    let nnz = a.iter().filter(|v| **v != 0.0).count();
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), nnz)?;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)];
            if v != 0.0 {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
    }
    Ok(())
}

/// Random state with independent standard normal real and imaginary parts.
pub fn random_state<R: rand::Rng>(n_dof: usize, rng: &mut R) -> GraphState {
    let coeffs = DVector::from_fn(n_dof, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    GraphState::new(coeffs, 0.0)
}

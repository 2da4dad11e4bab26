//! Star graph geometry, coupling weights and the minimal control time.
//!
//! Edge 1 is parametrized on `(-l_1, 0)` and carries no control. Edges
//! `2..=N` are parametrized on `(0, l_j)`; their outer tips carry the
//! Neumann controls. All edges meet at the central vertex `x = 0`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for the coupling-weight constraints.
pub const ALPHA_TOLERANCE: f64 = 1e-12;

/// Geometry and vertex coupling of a compact star graph.
///
/// `lengths[0]` is the uncontrolled edge; `alphas[k]` is the weight of edge
/// `k + 2` (there is no weight for edge 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarGraphConfig {
    pub lengths: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl StarGraphConfig {
    pub fn new(lengths: Vec<f64>, alphas: Vec<f64>) -> Self {
        Self { lengths, alphas }
    }

    /// `N` equal edges of length `length` with the only admissible weights
    /// `alpha_j = sqrt(N - 1)`.
    pub fn symmetric(n_edges: usize, length: f64) -> Self {
        let a = ((n_edges - 1) as f64).sqrt();
        Self {
            lengths: vec![length; n_edges],
            alphas: vec![a; n_edges - 1],
        }
    }

    /// Total number of edges `N`.
    pub fn n_edges(&self) -> usize {
        self.lengths.len()
    }

    /// Number of controlled edges `N - 1`.
    pub fn n_controls(&self) -> usize {
        self.lengths.len().saturating_sub(1)
    }

    /// Weight of edge `edge` (0-based, `edge >= 1`).
    pub fn alpha(&self, edge: usize) -> f64 {
        self.alphas[edge - 1]
    }

    pub fn validate(&self) -> ValidationReport {
        validate_config(self)
    }

    /// Returns `Ok(())` or the full list of violations as an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_config(self);
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(report.violations))
        }
    }
}

/// A single failed hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewEdges { n_edges: usize },
    AlphaCount { expected: usize, got: usize },
    NonPositiveLength { edge: usize, value: f64 },
    NonPositiveAlpha { edge: usize, value: f64 },
    AlphaSum { sum: f64 },
    AlphaBound { edge: usize, inverse_square: f64, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewEdges { n_edges } => {
                write!(f, "need at least 2 edges, got {n_edges}")
            }
            Violation::AlphaCount { expected, got } => {
                write!(f, "expected {expected} coupling weights, got {got}")
            }
            Violation::NonPositiveLength { edge, value } => {
                write!(f, "length of edge {edge} must be positive, got {value}")
            }
            Violation::NonPositiveAlpha { edge, value } => {
                write!(f, "alpha of edge {edge} must be positive, got {value}")
            }
            Violation::AlphaSum { sum } => {
                write!(f, "sum of 1/alpha^2 = {sum} != 1")
            }
            Violation::AlphaBound {
                edge,
                inverse_square,
                bound,
            } => write!(
                f,
                "1/alpha^2 of edge {edge} = {inverse_square} exceeds 1/(N-1) = {bound}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_config(cfg: &StarGraphConfig) -> ValidationReport {
    validate_config_with_tolerance(cfg, ALPHA_TOLERANCE)
}

/// Checks positivity of lengths and weights and the two weight constraints
/// `sum 1/alpha_j^2 = 1` and `1/alpha_j^2 <= 1/(N-1)`. Edges are reported
/// 1-based.
pub fn validate_config_with_tolerance(cfg: &StarGraphConfig, tol: f64) -> ValidationReport {
    let mut violations = Vec::new();
    let n = cfg.n_edges();
    if n < 2 {
        violations.push(Violation::TooFewEdges { n_edges: n });
    }
    for (k, &l) in cfg.lengths.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            violations.push(Violation::NonPositiveLength {
                edge: k + 1,
                value: l,
            });
        }
    }
    if cfg.alphas.len() != n.saturating_sub(1) {
        violations.push(Violation::AlphaCount {
            expected: n.saturating_sub(1),
            got: cfg.alphas.len(),
        });
        return ValidationReport { violations };
    }
    let mut positive = true;
    for (k, &a) in cfg.alphas.iter().enumerate() {
        if !(a > 0.0 && a.is_finite()) {
            positive = false;
            violations.push(Violation::NonPositiveAlpha {
                edge: k + 2,
                value: a,
            });
        }
    }
    if positive && n >= 2 {
        let sum: f64 = cfg.alphas.iter().map(|a| 1.0 / (a * a)).sum();
        if (sum - 1.0).abs() > tol {
            violations.push(Violation::AlphaSum { sum });
        }
        let bound = 1.0 / (n - 1) as f64;
        for (k, &a) in cfg.alphas.iter().enumerate() {
            let inv = 1.0 / (a * a);
            if inv > bound + tol {
                violations.push(Violation::AlphaBound {
                    edge: k + 2,
                    inverse_square: inv,
                    bound,
                });
            }
        }
    }
    ValidationReport { violations }
}

/// `L = max_j l_j` and `L̄ = max(2 l_1, max_{j>=2} l_j + l_1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthConstants {
    pub max_length: f64,
    pub lbar: f64,
}

pub fn length_constants(cfg: &StarGraphConfig) -> LengthConstants {
    let l1 = cfg.lengths[0];
    let max_length = cfg.lengths.iter().copied().fold(f64::MIN, f64::max);
    let max_controlled = cfg.lengths[1..].iter().copied().fold(f64::MIN, f64::max);
    LengthConstants {
        max_length,
        lbar: (2.0 * l1).max(max_controlled + l1),
    }
}

/// Minimal control horizon for a given Young parameter `epsilon`.
///
/// Requires `0 < epsilon < 1/L̄`; the formula blows up at both ends.
pub fn t_min(cfg: &StarGraphConfig, epsilon: f64) -> Result<f64> {
    let LengthConstants { max_length, lbar } = length_constants(cfg);
    if !(epsilon > 0.0 && epsilon < 1.0 / lbar) {
        return Err(Error::Domain(format!(
            "epsilon = {epsilon} outside (0, 1/L̄) = (0, {})",
            1.0 / lbar
        )));
    }
    let pi2 = PI * PI;
    let num = lbar * (max_length * max_length + pi2);
    let den = pi2 * epsilon * (1.0 - lbar * epsilon);
    Ok((num / den).sqrt())
}

/// The `epsilon` minimizing [`t_min`] and the resulting horizon.
///
/// `epsilon (1 - L̄ epsilon)` is a downward parabola with vertex at
/// `1/(2 L̄)`.
pub fn t_min_optimal(cfg: &StarGraphConfig) -> (f64, f64) {
    let eps = 0.5 / length_constants(cfg).lbar;
    let t = t_min(cfg, eps).expect("vertex of the parabola is admissible");
    (eps, t)
}

/// A control horizon with its Young parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeHorizon {
    pub t: f64,
    pub epsilon: f64,
}

impl TimeHorizon {
    /// Builds a horizon admissible for control synthesis on `cfg`.
    pub fn checked(cfg: &StarGraphConfig, t: f64, epsilon: f64) -> Result<Self> {
        let tmin = t_min(cfg, epsilon)?;
        if !(t > tmin) {
            return Err(Error::Domain(format!(
                "T = {t} does not exceed T_min = {tmin} for epsilon = {epsilon}"
            )));
        }
        Ok(Self { t, epsilon })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(l: &[f64], a: &[f64]) -> StarGraphConfig {
        StarGraphConfig::new(l.to_vec(), a.to_vec())
    }

    #[test]
    fn accepts_equal_weights_for_three_edges() {
        let s = 2f64.sqrt();
        assert!(validate_config(&cfg(&[1.0, 1.0, 1.0], &[s, s])).is_ok());
    }

    #[test]
    fn rejects_unit_weights_for_three_edges() {
        let r = validate_config(&cfg(&[1.0, 1.0, 1.0], &[1.0, 1.0]));
        assert!(matches!(r.violations[0], Violation::AlphaSum { sum } if (sum - 2.0).abs() < 1e-15));
        assert!(r.violations[0].to_string().contains("sum of 1/alpha^2 = 2"));
    }

    #[test]
    fn single_controlled_edge() {
        assert!(validate_config(&cfg(&[1.0, 1.0], &[1.0])).is_ok());
    }

    #[test]
    fn reports_every_violation() {
        let r = validate_config(&cfg(&[-1.0, 0.0, 1.0], &[1.0, -2.0]));
        assert_eq!(r.violations.len(), 3);
        let r = validate_config(&cfg(&[1.0], &[]));
        assert!(matches!(r.violations[0], Violation::TooFewEdges { n_edges: 1 }));
        let r = validate_config(&cfg(&[1.0, 1.0, 1.0], &[1.0]));
        assert!(matches!(r.violations[0], Violation::AlphaCount { expected: 2, got: 1 }));
    }

    #[test]
    fn brute_force_grid_finds_only_the_equal_point() {
        // alpha grid on [0.5, 3] with a step that contains sqrt(2) only
        // approximately; count grid points passing at a loose tolerance and
        // check they cluster around sqrt(2).
        let n = 2001;
        let mut hits = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let a = 0.5 + 2.5 * i as f64 / (n - 1) as f64;
                let b = 0.5 + 2.5 * j as f64 / (n - 1) as f64;
                let r = validate_config_with_tolerance(&cfg(&[1.0, 1.0, 1.0], &[a, b]), 2e-3);
                if r.is_ok() {
                    hits.push((a, b));
                }
            }
        }
        assert!(!hits.is_empty());
        for (a, b) in hits {
            assert!((a - 2f64.sqrt()).abs() < 5e-3 && (b - 2f64.sqrt()).abs() < 5e-3);
        }
    }

    #[test]
    fn length_constant_examples() {
        let c = length_constants(&cfg(&[1.0, 1.0, 1.0], &[]));
        assert_eq!((c.max_length, c.lbar), (1.0, 2.0));
        let c = length_constants(&cfg(&[2.0, 1.0, 1.0], &[]));
        assert_eq!((c.max_length, c.lbar), (2.0, 4.0));
        let c = length_constants(&cfg(&[1.0, 3.0, 1.0], &[]));
        assert_eq!((c.max_length, c.lbar), (3.0, 4.0));
    }

    #[test]
    fn t_min_reference_value() {
        // 50-digit evaluation: sqrt(2 (1 + pi^2) / (pi^2 * 0.125)).
        let t = t_min(&StarGraphConfig::symmetric(3, 1.0), 0.25).unwrap();
        assert!((t - 4.197_754_034_990_307).abs() < 1e-12, "{t}");
    }

    #[test]
    fn t_min_domain_errors() {
        let c = StarGraphConfig::symmetric(3, 1.0);
        assert!(t_min(&c, 0.0).is_err());
        assert!(t_min(&c, 0.5).is_err());
        assert!(t_min(&c, -0.1).is_err());
        assert!(t_min(&c, 1e-9).unwrap() > 1e4);
        assert!(t_min(&c, 0.5 - 1e-9).unwrap() > 1e4);
    }

    #[test]
    fn optimal_epsilon_matches_grid_search() {
        for lengths in [[1.0, 1.0, 1.0], [2.0, 1.0, 1.0], [1.0, 3.0, 1.0]] {
            let c = cfg(&lengths, &[]);
            let lbar = length_constants(&c).lbar;
            let (eps, t) = t_min_optimal(&c);
            let mut best = (0.0, f64::INFINITY);
            for k in 1..10_000 {
                let e = k as f64 / 10_000.0 / lbar;
                let v = t_min(&c, e).unwrap();
                if v < best.1 {
                    best = (e, v);
                }
            }
            assert!((best.0 - eps).abs() <= 1.0 / 10_000.0 / lbar);
            assert!(t <= best.1 + 1e-12);
        }
        let (eps, t) = t_min_optimal(&cfg(&[2.0, 1.0, 1.0], &[]));
        assert_eq!(eps, 0.125);
        // sqrt(4 (4 + pi^2) / (pi^2 / 16)), high-precision reference.
        assert!((t - 9.483_576_488_458_269).abs() < 1e-10, "{t}");
    }

    #[test]
    fn t_min_is_unimodal_in_epsilon() {
        let c = StarGraphConfig::symmetric(4, 1.3);
        let lbar = length_constants(&c).lbar;
        let mid = 0.5 / lbar;
        let grid: Vec<f64> = (1..400).map(|k| k as f64 / 400.0 / lbar).collect();
        for w in grid.windows(2) {
            let (a, b) = (t_min(&c, w[0]).unwrap(), t_min(&c, w[1]).unwrap());
            if w[1] <= mid {
                assert!(b < a);
            } else if w[0] >= mid {
                assert!(b > a);
            }
        }
    }

    #[test]
    fn doubling_lengths_increases_optimal_time() {
        let c = cfg(&[1.0, 0.7, 1.2], &[]);
        let d = cfg(&[2.0, 1.4, 2.4], &[]);
        assert!(t_min_optimal(&d).1 > t_min_optimal(&c).1);
    }

    #[test]
    fn horizon_requires_t_above_t_min() {
        let c = StarGraphConfig::symmetric(3, 1.0);
        assert!(TimeHorizon::checked(&c, 4.0, 0.25).is_err());
        assert!(TimeHorizon::checked(&c, 4.2, 0.25).is_ok());
    }

    proptest! {
        #[test]
        fn only_equal_weights_pass(n in 3usize..7, seed in proptest::collection::vec(0.3f64..4.0, 6)) {
            let alphas: Vec<f64> = seed[..n - 1].to_vec();
            let c = cfg(&vec![1.0; n], &alphas);
            let target = ((n - 1) as f64).sqrt();
            if validate_config(&c).is_ok() {
                for a in &alphas {
                    prop_assert!((a - target).abs() < 1e-9);
                }
            }
            // and the symmetric point itself always passes
            prop_assert!(validate_config(&StarGraphConfig::symmetric(n, 1.0)).is_ok());
        }

        #[test]
        fn length_constants_permutation(l in proptest::collection::vec(0.1f64..5.0, 4), rot in 0usize..3) {
            let mut tail = l[1..].to_vec();
            tail.rotate_left(rot);
            let mut permuted = vec![l[0]];
            permuted.extend(tail);
            prop_assert_eq!(length_constants(&cfg(&l, &[])), length_constants(&cfg(&permuted, &[])));
        }
    }

    #[test]
    fn length_constants_not_invariant_in_first_edge() {
        let a = length_constants(&cfg(&[3.0, 1.0, 1.0], &[]));
        let b = length_constants(&cfg(&[1.0, 3.0, 1.0], &[]));
        assert_ne!(a.lbar, b.lbar);
    }
}

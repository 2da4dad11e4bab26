//! Experiment configuration files.

use std::path::Path;

use anyhow::{bail, Context};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use starhum::multiplier_checks::MultiplierFunction;
use starhum::propagator::eigenmode_state;
use starhum::star_graph::t_min_optimal;
use starhum::{ControlSignal, DiscreteGraphSpace, GraphMatrices, GraphState, StarGraphConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lengths: Vec<f64>,
    /// Defaults to equal weights `sqrt(N - 1)`.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    pub elements_per_edge: usize,
    pub n_steps: usize,
    #[serde(rename = "T", default)]
    pub t: Option<f64>,
    /// Horizon as a multiple of the optimal minimal time `T*`.
    #[serde(rename = "T_factor", default)]
    pub t_factor: Option<f64>,
    #[serde(default)]
    pub epsilon: Epsilon,
    #[serde(default)]
    pub initial: Profile,
    /// Absent for null control.
    #[serde(default)]
    pub target: Option<Profile>,
    /// Tip controls for `simulate`; a forced run when nonempty.
    #[serde(default)]
    pub controls: Vec<ControlProfile>,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_lanczos_tol")]
    pub lanczos_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep every `output_stride`-th state in trajectory output.
    #[serde(default = "one")]
    pub output_stride: usize,
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<MultiplierFunction>,
}

fn default_cg_tol() -> f64 {
    1e-8
}

fn default_lanczos_tol() -> f64 {
    1e-10
}

fn one() -> usize {
    1
}

fn default_multipliers() -> Vec<MultiplierFunction> {
    vec![MultiplierFunction::ConstantOne, MultiplierFunction::CoordinateX]
}

/// A number, or `"optimal"` for the minimizer of the minimal time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Value(f64),
    Named(String),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Named("optimal".into())
    }
}

/// Named analytic states. Edges are numbered from 1; edge 1 lies on
/// `(-l_1, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    #[default]
    Zero,
    GaussianBump {
        edge: usize,
        center: f64,
        width: f64,
        #[serde(default = "unit")]
        amplitude: [f64; 2],
    },
    /// Eigenvector of the discrete operator, sign fixed by a reference
    /// profile so that it is reproducible across resolutions.
    Eigenmode {
        index: usize,
        #[serde(default = "unit")]
        amplitude: [f64; 2],
    },
    Sum {
        terms: Vec<Profile>,
    },
}

fn unit() -> [f64; 2] {
    [1.0, 0.0]
}

/// `h_j(t) = a sin(omega t)` on controlled edge `j >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlProfile {
    pub edge: usize,
    pub omega: f64,
    #[serde(default = "unit")]
    pub amplitude: [f64; 2],
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn graph(&self) -> StarGraphConfig {
        let n = self.lengths.len();
        let alphas = self
            .alphas
            .clone()
            .unwrap_or_else(|| vec![((n.max(2) - 1) as f64).sqrt(); n.saturating_sub(1)]);
        StarGraphConfig::new(self.lengths.clone(), alphas)
    }

    /// Resolved horizon; requires a valid graph when `T_factor` is used.
    pub fn horizon(&self) -> anyhow::Result<f64> {
        let t = match (self.t, self.t_factor) {
            (Some(t), None) => t,
            (None, Some(f)) => f * t_min_optimal(&self.graph()).1,
            (Some(_), Some(_)) => bail!("give either \"T\" or \"T_factor\", not both"),
            (None, None) => bail!("missing \"T\" or \"T_factor\""),
        };
        if !(t > 0.0 && t.is_finite()) {
            bail!("horizon must be positive and finite, got {t}");
        }
        Ok(t)
    }

    pub fn epsilon(&self) -> anyhow::Result<f64> {
        match &self.epsilon {
            Epsilon::Value(e) => Ok(*e),
            Epsilon::Named(s) if s == "optimal" => Ok(t_min_optimal(&self.graph()).0),
            Epsilon::Named(s) => bail!("epsilon must be a number or \"optimal\", got \"{s}\""),
        }
    }

    pub fn check_grid(&self) -> anyhow::Result<()> {
        if self.elements_per_edge == 0 {
            bail!("elements_per_edge must be at least 1");
        }
        if self.n_steps == 0 {
            bail!("n_steps must be at least 1");
        }
        Ok(())
    }

    pub fn control_signal(&self, n_controls: usize, t: f64) -> anyhow::Result<ControlSignal> {
        let mut h = ControlSignal::zeros(n_controls, 0.0, t, self.n_steps);
        for c in &self.controls {
            if c.edge < 2 || c.edge > n_controls + 1 {
                bail!("control edge {} outside 2..={}", c.edge, n_controls + 1);
            }
            let a = Complex64::new(c.amplitude[0], c.amplitude[1]);
            for n in 0..=self.n_steps {
                let tn = h.time(n);
                h.samples[c.edge - 2][n] += a * (c.omega * tn).sin();
            }
        }
        Ok(h)
    }
}

impl Profile {
    pub fn build(&self, space: &DiscreteGraphSpace, matrices: &GraphMatrices) -> anyhow::Result<GraphState> {
        let n = space.n_dof();
        Ok(match self {
            Profile::Zero => GraphState::zeros(n),
            Profile::GaussianBump {
                edge,
                center,
                width,
                amplitude,
            } => {
                let Some(mesh) = edge.checked_sub(1).and_then(|e| space.edges().get(e)) else {
                    bail!("bump edge {edge} outside 1..={}", space.n_edges());
                };
                if !(*width > 0.0) {
                    bail!("bump width must be positive, got {width}");
                }
                if !(mesh.x0..=mesh.x0 + mesh.length).contains(center) {
                    bail!("bump center {center} outside edge {edge}");
                }
                let a = Complex64::new(amplitude[0], amplitude[1]);
                let e0 = edge - 1;
                space.interpolate(|e, x| {
                    if e != e0 {
                        return (Complex64::ZERO, Complex64::ZERO);
                    }
                    let g = (-(x - center).powi(2) / (2.0 * width * width)).exp();
                    (a * g, a * (-(x - center) / (width * width) * g))
                })
            }
            Profile::Eigenmode { index, amplitude } => {
                eigenmode_state(space, matrices, *index)?.scaled(Complex64::new(amplitude[0], amplitude[1]))
            }
            Profile::Sum { terms } => {
                let mut u = GraphState::zeros(n);
                for t in terms {
                    u.coeffs += t.build(space, matrices)?.coeffs;
                }
                u
            }
        })
    }
}

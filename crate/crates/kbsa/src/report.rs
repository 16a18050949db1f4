//! Run configuration, canonical hashing, and serializable result bundles.
//!
//! A run is described by one JSON document. Its canonical serialization is
//! hashed into every report so a result can be traced back to the exact
//! inputs that produced it. Scheduling knobs (thread count, output paths)
//! stay out of the canonical form: they never change the numbers, and
//! reports must be byte-identical across thread counts.

use crate::depmodel::{uniform_ball_transform, SubsetSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    DenominatorEstimate, EstimatorConfig, IndexEngine, IndexEstimate, DEFAULT_M, DEFAULT_M1,
    DEFAULT_M_DENOMINATOR,
};
use crate::kernels::{Kernel, KernelSpec};
use crate::marginals::{InputSpace, MarginalDistribution};
use crate::models::{Model, ModelSpec};
use crate::rng::StreamKey;
use crate::screening::{ScreeningMode, ScreeningReport, DEFAULT_LEVELS, DEFAULT_TRAJECTORIES};
use crate::weights::{ClassifierScore, EffectiveWeight, WeightFunction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Stream tag for the weight-construction pilot sample under the run seed.
const PILOT_TAG: u64 = 2;

// ---------------------------------------------------------------------------
// Config specs
// ---------------------------------------------------------------------------

/// Input space as independent marginals. Dependence enters through the
/// weight, not the copula; custom copula densities are code-level only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub marginals: Vec<MarginalDistribution>,
}

impl SpaceSpec {
    pub fn build(&self) -> Result<InputSpace> {
        InputSpace::new(self.marginals.clone())
    }
}

/// Serializable weight constructor. Output-gated variants reference the
/// run's model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "weight", rename_all = "snake_case")]
pub enum WeightSpec {
    /// No reweighting; the weighted law is the plain one.
    Constant,
    /// Indicator of every output at or below `c`.
    OutputBelow { c: f64 },
    /// Indicator of an output box; scalars broadcast over outputs.
    OutputBox {
        #[serde(default)]
        lower: Option<Vec<f64>>,
        #[serde(default)]
        upper: Option<Vec<f64>>,
    },
    /// prod_j x_j^alpha_j over the inputs.
    Polynomial { alpha: Vec<f64> },
    /// Logistic membership of one output coordinate.
    SmoothMembership { output: usize, slope: f64, offset: f64 },
}

impl WeightSpec {
    pub fn build(&self, model: &Arc<dyn Model>, d: usize) -> Result<WeightFunction> {
        Ok(match self {
            WeightSpec::Constant => WeightFunction::polynomial(vec![0.0; d]),
            WeightSpec::OutputBelow { c } => WeightFunction::output_below(model.clone(), *c),
            WeightSpec::OutputBox { lower, upper } => {
                WeightFunction::indicator_threshold(model.clone(), lower.clone(), upper.clone())
            }
            WeightSpec::Polynomial { alpha } => {
                if alpha.len() != d {
                    return Err(Error::Config(format!(
                        "weight.alpha has {} entries for {d} inputs",
                        alpha.len()
                    )));
                }
                WeightFunction::polynomial(alpha.clone())
            }
            WeightSpec::SmoothMembership { output, slope, offset } => {
                WeightFunction::smooth_membership(
                    model.clone(),
                    ClassifierScore::Output(*output),
                    *slope,
                    *offset,
                )
            }
        })
    }
}

/// Sample sizes for the estimator engine; the run seed supplies the streams.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetSpec {
    #[serde(default = "default_m1")]
    pub m1: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_m_denominator")]
    pub m_denominator: usize,
}

fn default_m1() -> usize {
    DEFAULT_M1
}
fn default_m() -> usize {
    DEFAULT_M
}
fn default_m_denominator() -> usize {
    DEFAULT_M_DENOMINATOR
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec { m1: DEFAULT_M1, m: DEFAULT_M, m_denominator: DEFAULT_M_DENOMINATOR }
    }
}

impl BudgetSpec {
    pub fn to_estimator_config(&self, seed: u64) -> Result<EstimatorConfig> {
        EstimatorConfig::new(self.m1, self.m, self.m_denominator, seed)
    }
}

/// Screening controls; the threshold may instead arrive as a CLI flag.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScreenSpec {
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// `None` picks the mode from the weight: dependent when non-constant.
    #[serde(default)]
    pub mode: Option<ScreeningMode>,
}

fn default_trajectories() -> usize {
    DEFAULT_TRAJECTORIES
}
fn default_levels() -> usize {
    DEFAULT_LEVELS
}

impl Default for ScreenSpec {
    fn default() -> Self {
        ScreenSpec {
            threshold: None,
            trajectories: DEFAULT_TRAJECTORIES,
            levels: DEFAULT_LEVELS,
            mode: None,
        }
    }
}

/// How conditional draws of the complement are produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum TransformSpec {
    /// Closed-form conditional chain for the uniform law on the centered
    /// ball of squared radius `c`.
    UniformBall { c: f64 },
    /// Numerical conditional construction with optional accuracy overrides.
    Numerical {
        #[serde(default)]
        inner_mc: Option<usize>,
        #[serde(default)]
        inversion_tol: Option<f64>,
    },
}

/// One run, fully described: what to evaluate, under which weighted law,
/// with which kernels and budgets, from which seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub space: SpaceSpec,
    pub weight: WeightSpec,
    /// Kernel names as the registry understands them ("l1", "quadratic",
    /// "lp:3", "owen:2").
    pub kernels: Vec<String>,
    /// Input subsets to analyze; empty means every singleton.
    #[serde(default)]
    pub subsets: Vec<Vec<usize>>,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default)]
    pub screening: ScreenSpec,
    #[serde(default)]
    pub transform: Option<TransformSpec>,
    /// Runs never seed from the clock.
    pub seed: u64,
    /// Worker threads; scheduling only, excluded from the canonical form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Output directory; excluded from the canonical form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Field-level consistency checks that do not need to build anything.
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::Config("kernels: at least one kernel".into()));
        }
        for name in &self.kernels {
            KernelSpec::from_name(name)
                .map_err(|e| Error::Config(format!("kernels: {e}")))?;
        }
        for marginal in &self.space.marginals {
            marginal
                .validate()
                .map_err(|e| Error::Config(format!("space.marginals: {e}")))?;
        }
        let d = self.space.marginals.len();
        for (i, subset) in self.subsets.iter().enumerate() {
            SubsetSpec::new(d, subset.clone())
                .map_err(|e| Error::Config(format!("subsets[{i}]: {e}")))?;
        }
        if let Some(t) = self.screening.threshold {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Config(format!(
                    "screening.threshold: must be finite and nonnegative, got {t}"
                )));
            }
        }
        Ok(())
    }

    /// The canonical serialization: scheduling fields stripped, struct field
    /// order, compact separators. The digest is computed over these bytes.
    pub fn canonical_json(&self) -> String {
        let mut canonical = self.clone();
        canonical.threads = None;
        canonical.out_dir = None;
        serde_json::to_string(&canonical).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let bytes = hasher.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Build every run-ready object the config describes.
    pub fn build(&self) -> Result<RunContext> {
        self.validate()?;
        let model = self.model.build()?;
        let space = self.space.build()?;
        let d = space.dim();
        if model.input_dim() != d {
            return Err(Error::Config(format!(
                "model takes {} inputs but the space has {d} marginals",
                model.input_dim()
            )));
        }
        let weight = self.weight.build(&model, d)?;
        let ew = EffectiveWeight::new(
            weight,
            space,
            StreamKey::root(self.seed).child(PILOT_TAG),
        )?;
        let mut kernels = Vec::with_capacity(self.kernels.len());
        for name in &self.kernels {
            let kernel = KernelSpec::from_name(name)?.build()?;
            if !kernel.supports_dim(model.output_dim()) {
                return Err(Error::Config(format!(
                    "kernel {name} does not support {} outputs",
                    model.output_dim()
                )));
            }
            kernels.push(kernel);
        }
        let subsets = if self.subsets.is_empty() {
            (0..d).map(|j| SubsetSpec::new(d, vec![j])).collect::<Result<Vec<_>>>()?
        } else {
            self.subsets
                .iter()
                .map(|u| SubsetSpec::new(d, u.clone()))
                .collect::<Result<Vec<_>>>()?
        };
        let estimator = self.budget.to_estimator_config(self.seed)?;
        Ok(RunContext { model, ew, kernels, subsets, estimator, config: self.clone() })
    }
}

/// A built run: every object needed to drive the estimator engine.
pub struct RunContext {
    pub model: Arc<dyn Model>,
    pub ew: EffectiveWeight,
    pub kernels: Vec<Box<dyn Kernel>>,
    pub subsets: Vec<SubsetSpec>,
    pub estimator: EstimatorConfig,
    pub config: RunConfig,
}

impl RunContext {
    /// The engine with the config's transform choice applied.
    pub fn engine(&self) -> Result<IndexEngine> {
        let mut engine =
            IndexEngine::new(self.model.clone(), self.ew.clone(), self.estimator.clone())?;
        match &self.config.transform {
            Some(TransformSpec::UniformBall { c }) => {
                let c = *c;
                engine = engine.with_transform_factory(Arc::new(move |subset: &SubsetSpec| {
                    uniform_ball_transform(c, subset)
                }));
            }
            Some(TransformSpec::Numerical { inner_mc, inversion_tol }) => {
                if inner_mc.is_some() || inversion_tol.is_some() {
                    let dm = crate::depmodel::DependencyModel::new(
                        self.ew.clone(),
                        SubsetSpec::unconditioned(self.ew.space().dim()),
                    )?;
                    let inner = inner_mc.unwrap_or(dm.inner_mc());
                    let tol = inversion_tol.unwrap_or(dm.inversion_tol());
                    engine = engine.with_transform_accuracy(inner, tol);
                }
            }
            None => {}
        }
        Ok(engine)
    }
}

// ---------------------------------------------------------------------------
// Report bundle
// ---------------------------------------------------------------------------

/// Everything one command run reports: traceability metadata plus the
/// result tables. Serialize to JSON for the machine-readable artifact; the
/// CSV views mirror the reference-table layout (inputs as columns).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportBundle {
    pub command: String,
    pub package_version: String,
    /// SHA-256 of the canonical config serialization.
    pub config_digest: String,
    pub seed: u64,
    pub model_evaluations: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub indices: Vec<IndexEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub denominators: Vec<DenominatorEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screening: Option<ScreeningReport>,
}

impl ReportBundle {
    pub fn new(command: &str, config: &RunConfig) -> ReportBundle {
        ReportBundle {
            command: command.to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: config.digest(),
            seed: config.seed,
            model_evaluations: 0,
            indices: Vec::new(),
            denominators: Vec::new(),
            screening: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Index table with inputs as columns: one row per kernel and index
    /// kind, subsets across.
    pub fn indices_csv(&self) -> String {
        let mut subsets: Vec<&[usize]> = Vec::new();
        for estimate in &self.indices {
            if !subsets.iter().any(|u| **u == *estimate.u) {
                subsets.push(&estimate.u);
            }
        }
        let mut out = String::from("kernel,index");
        for u in &subsets {
            out.push(',');
            out.push_str(&subset_label(u));
        }
        out.push('\n');
        let mut rows: Vec<(String, String)> = Vec::new();
        for estimate in &self.indices {
            let row = (estimate.kernel.clone(), estimate.kind.label().to_string());
            if !rows.contains(&row) {
                rows.push(row);
            }
        }
        for (kernel, kind) in &rows {
            out.push_str(kernel);
            out.push(',');
            out.push_str(&format!("sqrt_{kind}"));
            for u in &subsets {
                out.push(',');
                match self.indices.iter().find(|e| {
                    e.kernel == *kernel && e.kind.label() == kind && e.u == *u
                }) {
                    Some(e) => out.push_str(&format!("{}", e.sqrt_value)),
                    None => out.push_str(""),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Human name for a subset column: X1 for singletons, X1+X3 for groups.
pub fn subset_label(u: &[usize]) -> String {
    u.iter().map(|j| format!("X{}", j + 1)).collect::<Vec<_>>().join("+")
}

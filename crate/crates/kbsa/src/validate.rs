//! Built-in validation suites behind a name registry.
//!
//! Each suite re-derives published reference numbers from scratch at a fixed
//! seed and reports one [`CheckResult`] per comparison. Suites are selected
//! by name at runtime; [`registered_suites`] lists what is available.

use crate::depmodel::{uniform_ball_transform, SubsetSpec};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, IndexEngine, IndexEstimate, IndexKind};
use crate::kernels::{Kernel, KernelSpec};
use crate::marginals::{InputSpace, MarginalDistribution};
use crate::models::ModelSpec;
use crate::rng::StreamKey;
use crate::screening::{screen_rank, ScreeningConfig};
use crate::testkit;
use crate::weights::{EffectiveWeight, WeightFunction};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One comparison inside a suite. `pass` is decided by the suite; `detail`
/// states the rule when it is not plain `|value - reference| <= tolerance`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Outcome of one suite run. Serialization carries no clocks or host
/// details, so reruns at the same seed produce identical bytes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64) -> SuiteReport {
        SuiteReport { suite: suite.to_string(), seed, checks: Vec::new(), passed: true }
    }

    fn push(&mut self, check: CheckResult) {
        self.passed &= check.pass;
        self.checks.push(check);
    }

    /// Two-sided check: pass when `|value - reference| <= tolerance`.
    fn check_abs(&mut self, name: String, value: f64, reference: f64, tolerance: f64) {
        let pass = value.is_finite() && (value - reference).abs() <= tolerance;
        self.push(CheckResult { name, value, reference, tolerance, pass, detail: String::new() });
    }

    /// One-sided check: pass when `value <= reference`.
    fn check_le(&mut self, name: String, value: f64, reference: f64, detail: &str) {
        let pass = value.is_finite() && value <= reference;
        self.push(CheckResult {
            name,
            value,
            reference,
            tolerance: 0.0,
            pass,
            detail: detail.to_string(),
        });
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("suite report serializes");
        text.push('\n');
        text
    }

    /// Flat table: one row per check.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,value,reference,tolerance,pass\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.name, c.value, c.reference, c.tolerance, c.pass
            ));
        }
        out
    }

    /// One line per check plus a closing summary, for terminal output.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}: value {:.6} reference {:.6} tolerance {}{}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.reference,
                    c.tolerance,
                    if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) }
                )
            })
            .collect();
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        lines.push(format!(
            "suite {}: {} checks, {} failed -> {}",
            self.suite,
            self.checks.len(),
            failed,
            if self.passed { "PASS" } else { "FAIL" }
        ));
        lines
    }
}

/// A named, self-contained validation run.
pub trait ValidationSuite: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn run(&self) -> Result<SuiteReport>;
}

/// Every registered suite, in listing order.
pub fn registered_suites() -> Vec<Box<dyn ValidationSuite>> {
    vec![
        Box::new(QuadraticBallSuite),
        Box::new(ProductTablesSuite),
        Box::new(ScalarIdentitiesSuite),
    ]
}

/// Look a suite up by its registry name.
pub fn suite_by_name(name: &str) -> Result<Box<dyn ValidationSuite>> {
    registered_suites()
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            let names: Vec<&str> = registered_suites().iter().map(|s| s.name()).collect();
            Error::Config(format!(
                "unknown validation suite {name:?}; registered suites: {}",
                names.join(", ")
            ))
        })
}

fn uniform_space(lo: f64, hi: f64, d: usize) -> Result<InputSpace> {
    InputSpace::new(vec![MarginalDistribution::Uniform { lo, hi }; d])
}

/// Absolute floor on ordering slack, value scale. Inner panels bias each
/// conditional-mean functional by O(1/m1), which standard errors do not
/// cover; the bias only competes with the comparison when the indices
/// themselves sit within bias scale of zero, observed under 3e-7 at the
/// suite budgets. The floor absorbs that while staying far below every
/// index tolerance in use.
pub const ORDERING_SLACK_FLOOR: f64 = 1e-4;

/// Value-scale ordering checks shared by the suites: first order below
/// total, total below one, total below the screening bound, each with three
/// combined standard errors of slack (floored, see
/// [`ORDERING_SLACK_FLOOR`]).
fn ordering_checks(report: &mut SuiteReport, tag: &str, chunk: &[IndexEstimate]) {
    let (fo, tot, up) = (&chunk[0], &chunk[1], &chunk[2]);
    report.check_le(
        format!("{tag}/order/first_order<=total"),
        fo.value - tot.value,
        (3.0 * (fo.std_error + tot.std_error)).max(ORDERING_SLACK_FLOOR),
        "pass when value <= reference",
    );
    report.check_le(
        format!("{tag}/order/total<=1"),
        tot.value - 1.0,
        (3.0 * tot.std_error).max(ORDERING_SLACK_FLOOR),
        "pass when value <= reference",
    );
    report.check_le(
        format!("{tag}/order/total<=upsilon"),
        tot.value - up.value,
        (3.0 * (tot.std_error + up.std_error)).max(ORDERING_SLACK_FLOOR),
        "pass when value <= reference",
    );
}

// ---------------------------------------------------------------------------
// quadratic51
// ---------------------------------------------------------------------------

/// Three-input squared-norm model gated to a centered ball: every index has
/// a closed form, and the gate radius must not move any of them.
pub struct QuadraticBallSuite;

const QUADRATIC_SEED: u64 = 2995;

impl QuadraticBallSuite {
    /// Indices for all three singletons under the ball gate of squared
    /// radius `c`, in kernel-major order (l1 then quadratic, each
    /// first-order, total, bound).
    fn run_ball(&self, c: f64) -> Result<Vec<Vec<IndexEstimate>>> {
        let model = ModelSpec::Quadratic3.build()?;
        let space = uniform_space(-c.sqrt(), c.sqrt(), 3)?;
        let weight = WeightFunction::output_below(model.clone(), c);
        let ew = EffectiveWeight::new(
            weight,
            space,
            StreamKey::root(QUADRATIC_SEED).child(2),
        )?;
        let config = EstimatorConfig::defaults(QUADRATIC_SEED);
        let engine = IndexEngine::new(model, ew, config)?.with_transform_factory(Arc::new(
            move |subset: &SubsetSpec| uniform_ball_transform(c, subset),
        ));
        let l1 = KernelSpec::L1.build()?;
        let quad = KernelSpec::Quadratic.build()?;
        (0..3)
            .map(|j| {
                let subset = SubsetSpec::new(3, vec![j])?;
                engine.analyze_subset(&subset, &[l1.as_ref(), quad.as_ref()])
            })
            .collect()
    }
}

impl ValidationSuite for QuadraticBallSuite {
    fn name(&self) -> &'static str {
        "quadratic51"
    }

    fn description(&self) -> &'static str {
        "Three-input quadratic model under a ball-gated law: closed-form index \
         targets at the default budget, plus gate-radius invariance"
    }

    fn run(&self) -> Result<SuiteReport> {
        let mut report = SuiteReport::new(self.name(), QUADRATIC_SEED);
        let targets = [
            ("l1/sqrt_first_order", testkit::QUAD3_SQRT_FIRST_ORDER_L1),
            ("l1/sqrt_total", testkit::QUAD3_SQRT_TOTAL_L1),
            ("l1/sqrt_upsilon", testkit::QUAD3_SQRT_UPSILON_L1),
            ("quadratic/sqrt_first_order", testkit::QUAD3_SQRT_FIRST_ORDER_QUADRATIC),
            ("quadratic/sqrt_total", testkit::QUAD3_SQRT_TOTAL_QUADRATIC),
            ("quadratic/sqrt_upsilon", testkit::QUAD3_SQRT_UPSILON_QUADRATIC),
        ];
        let narrow = self.run_ball(1.0)?;
        let wide = self.run_ball(5.0)?;
        for (j, per_subset) in narrow.iter().enumerate() {
            for (est, (label, want)) in per_subset.iter().zip(targets) {
                report.check_abs(format!("c1/X{}/{label}", j + 1), est.sqrt_value, want, 0.02);
            }
        }
        for (c_tag, run) in [("c1", &narrow), ("c5", &wide)] {
            for (j, per_subset) in run.iter().enumerate() {
                for chunk in per_subset.chunks(3) {
                    let tag = format!("{c_tag}/X{}/{}", j + 1, chunk[0].kernel);
                    ordering_checks(&mut report, &tag, chunk);
                }
            }
        }
        // The gate radius scales the model output but every index is a
        // self-normalized ratio, so estimates at the same seed may differ
        // only within sampling noise.
        for (j, (at_c1, at_c5)) in narrow.iter().zip(&wide).enumerate() {
            for (est1, est5) in at_c1.iter().zip(at_c5) {
                let combined = est1.sqrt_std_error() + est5.sqrt_std_error();
                report.push(CheckResult {
                    name: format!(
                        "gate_invariance/X{}/{}/sqrt_{}",
                        j + 1,
                        est1.kernel,
                        est1.kind.label()
                    ),
                    value: (est1.sqrt_value - est5.sqrt_value).abs(),
                    reference: 0.0,
                    tolerance: 3.0 * combined,
                    pass: (est1.sqrt_value - est5.sqrt_value).abs() <= 3.0 * combined,
                    detail: "gap between gate radii at one seed".to_string(),
                });
            }
        }
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// tables52
// ---------------------------------------------------------------------------

/// Ten-input product benchmark with four outputs. Reference square-root
/// index tables, row order: l1 first-order, l1 total, l1 bound, then the
/// same three for the quadratic kernel.
const PLAIN_REFERENCE: [[f64; 10]; 6] = [
    [0.756, 0.556, 0.176, 0.136, 0.099, 0.092, 0.086, 0.082, 0.079, 0.076],
    [0.756, 0.555, 0.178, 0.148, 0.099, 0.091, 0.085, 0.082, 0.078, 0.076],
    [1.002, 0.747, 0.235, 0.188, 0.133, 0.124, 0.114, 0.114, 0.105, 0.100],
    [0.536, 0.328, 0.027, 0.016, 0.011, 0.009, 0.008, 0.007, 0.007, 0.006],
    [0.637, 0.436, 0.038, 0.026, 0.015, 0.012, 0.011, 0.011, 0.009, 0.010],
    [1.230, 0.844, 0.074, 0.048, 0.031, 0.027, 0.021, 0.024, 0.020, 0.018],
];
/// Reference tables for the same benchmark reweighted by
/// `prod_j x_j^alpha_j` with exponents (20, 20, 10, 10, 10, 10, 10, 1, 1, 1).
const WEIGHTED_REFERENCE: [[f64; 10]; 6] = [
    [0.465, 0.388, 0.277, 0.229, 0.173, 0.165, 0.157, 0.319, 0.309, 0.301],
    [0.465, 0.388, 0.276, 0.229, 0.173, 0.164, 0.157, 0.320, 0.309, 0.300],
    [0.615, 0.530, 0.374, 0.303, 0.238, 0.224, 0.211, 0.428, 0.417, 0.402],
    [0.261, 0.190, 0.075, 0.058, 0.041, 0.040, 0.035, 0.121, 0.116, 0.113],
    [0.267, 0.197, 0.074, 0.059, 0.043, 0.041, 0.037, 0.123, 0.120, 0.116],
    [0.477, 0.441, 0.148, 0.104, 0.088, 0.081, 0.069, 0.252, 0.252, 0.233],
];
const WEIGHT_EXPONENTS: [f64; 10] = [20.0, 20.0, 10.0, 10.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0];
const ROW_LABELS: [&str; 6] = [
    "l1/sqrt_first_order",
    "l1/sqrt_total",
    "l1/sqrt_upsilon",
    "quadratic/sqrt_first_order",
    "quadratic/sqrt_total",
    "quadratic/sqrt_upsilon",
];

const TABLES_SEED: u64 = 11;

/// Reproduces both reference tables cell by cell and re-derives the
/// screening decisions drawn from them. The weighted run gives the bound
/// rows a larger outer panel; its two binding cells sit within 0.014 of the
/// reference, so their estimates need a standard error a few times smaller
/// than the plain rows require.
pub struct ProductTablesSuite;

impl ProductTablesSuite {
    fn weighted_ew(&self, alpha: Vec<f64>) -> Result<EffectiveWeight> {
        EffectiveWeight::new(
            WeightFunction::polynomial(alpha),
            uniform_space(0.0, 1.0, 10)?,
            StreamKey::root(TABLES_SEED).child(2),
        )
    }

    fn check_table(
        &self,
        report: &mut SuiteReport,
        tag: &str,
        reference: &[[f64; 10]; 6],
        tolerances: &[f64; 6],
        ew: &EffectiveWeight,
        m_main: usize,
        m_bound: usize,
    ) -> Result<()> {
        let model = ModelSpec::GSobol4.build()?;
        let main_config =
            EstimatorConfig::new(1000, m_main, (10 * m_main).max(120_000), TABLES_SEED)?;
        let bound_config =
            EstimatorConfig::new(1000, m_bound, (10 * m_bound).max(120_000), TABLES_SEED)?;
        let main_engine = IndexEngine::new(model.clone(), ew.clone(), main_config)?;
        let bound_engine = IndexEngine::new(model, ew.clone(), bound_config)?;
        let l1 = KernelSpec::L1.build()?;
        let quad = KernelSpec::Quadratic.build()?;
        for j in 0..10 {
            let subset = SubsetSpec::new(10, vec![j])?;
            let mut cells = Vec::with_capacity(6);
            for kernel in [l1.as_ref(), quad.as_ref()] {
                cells.push(main_engine.first_order(&subset, kernel)?);
                cells.push(main_engine.total(&subset, kernel)?);
                cells.push(bound_engine.upsilon(&subset, kernel)?);
            }
            for (row, est) in cells.iter().enumerate() {
                report.check_abs(
                    format!("{tag}/X{}/{}", j + 1, ROW_LABELS[row]),
                    est.sqrt_value,
                    reference[row][j],
                    tolerances[row],
                );
            }
        }
        Ok(())
    }

    fn check_screening(
        &self,
        report: &mut SuiteReport,
        name: &str,
        ew: &EffectiveWeight,
        kernel: &dyn Kernel,
        threshold: f64,
        important: &[usize],
    ) -> Result<()> {
        let model = ModelSpec::GSobol4.build()?;
        let config = ScreeningConfig::new(EstimatorConfig::new(500, 8000, 80_000, TABLES_SEED)?);
        let screened = screen_rank(model, ew, kernel, threshold, &config)?;
        let got = screened.important_inputs();
        let labels = |set: &[usize]| -> String {
            if set.is_empty() {
                "none".to_string()
            } else {
                set.iter().map(|j| format!("X{}", j + 1)).collect::<Vec<_>>().join("+")
            }
        };
        report.push(CheckResult {
            name: name.to_string(),
            value: got.len() as f64,
            reference: important.len() as f64,
            tolerance: 0.0,
            pass: got == important,
            detail: format!(
                "threshold {threshold}: important {} (expected {})",
                labels(&got),
                labels(important)
            ),
        });
        Ok(())
    }
}

impl ValidationSuite for ProductTablesSuite {
    fn name(&self) -> &'static str {
        "tables52"
    }

    fn description(&self) -> &'static str {
        "Ten-input product benchmark, plain and polynomial-weighted: \
         reference index tables cell by cell, plus the screening decisions"
    }

    fn run(&self) -> Result<SuiteReport> {
        let mut report = SuiteReport::new(self.name(), TABLES_SEED);
        let plain = self.weighted_ew(vec![0.0; 10])?;
        let weighted = self.weighted_ew(WEIGHT_EXPONENTS.to_vec())?;
        self.check_table(
            &mut report,
            "plain",
            &PLAIN_REFERENCE,
            &[0.03, 0.03, 0.04, 0.03, 0.03, 0.04],
            &plain,
            40_000,
            40_000,
        )?;
        self.check_table(
            &mut report,
            "weighted",
            &WEIGHTED_REFERENCE,
            &[0.04; 6],
            &weighted,
            12_000,
            48_000,
        )?;
        let l1 = KernelSpec::L1.build()?;
        let quad = KernelSpec::Quadratic.build()?;
        self.check_screening(
            &mut report,
            "plain/screen/l1@0.2",
            &plain,
            l1.as_ref(),
            0.2,
            &[0, 1, 2],
        )?;
        self.check_screening(
            &mut report,
            "weighted/screen/l1@0.1",
            &weighted,
            l1.as_ref(),
            0.1,
            &(0..10).collect::<Vec<_>>(),
        )?;
        self.check_screening(
            &mut report,
            "weighted/screen/quadratic@0.2",
            &weighted,
            quad.as_ref(),
            0.2,
            &[0, 1, 7, 8, 9],
        )?;
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// identities33
// ---------------------------------------------------------------------------

const IDENTITIES_SEED: u64 = 61;

/// Scalar-output identities under independent inputs: on the square-root
/// scale the squared-norm kernel reproduces the variance-based first-order
/// index, the screening bound is twice the total index, and the unit-power
/// magnitude kernel coincides with the squared-norm kernel.
pub struct ScalarIdentitiesSuite;

impl ValidationSuite for ScalarIdentitiesSuite {
    fn name(&self) -> &'static str {
        "identities33"
    }

    fn description(&self) -> &'static str {
        "Scalar-output identities: squared-norm kernel versus variance-based \
         indices, the factor-of-two screening bound, and kernel coincidences"
    }

    fn run(&self) -> Result<SuiteReport> {
        let mut report = SuiteReport::new(self.name(), IDENTITIES_SEED);
        let a = vec![0.0, 1.0, 4.5, 9.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0];
        let model = ModelSpec::GFunction { a }.build()?;
        let ew = EffectiveWeight::new(
            WeightFunction::polynomial(vec![0.0; 10]),
            uniform_space(0.0, 1.0, 10)?,
            StreamKey::root(IDENTITIES_SEED).child(2),
        )?;
        let config = EstimatorConfig::new(300, 4000, 40_000, IDENTITIES_SEED)?;
        let engine = IndexEngine::new(model, ew, config)?;
        let l2 = KernelSpec::L2.build()?;
        let owen1 = KernelSpec::Owen { p: 1.0 }.build()?;
        for j in 0..10 {
            let subset = SubsetSpec::new(10, vec![j])?;
            let panel = engine.sf_panel(&subset)?;
            let mut by_kind = Vec::with_capacity(3);
            for kind in [IndexKind::FirstOrder, IndexKind::Total, IndexKind::Upsilon] {
                by_kind.push(engine.index_from_panel(&panel, kind, l2.as_ref())?);
            }
            let (fo, tot, up) = (&by_kind[0], &by_kind[1], &by_kind[2]);
            report.check_abs(
                format!("X{}/l2/sqrt_first_order=sobol", j + 1),
                fo.sqrt_value,
                testkit::GFUNCTION_SOBOL_FIRST_ORDER[j],
                0.03,
            );
            let slack =
                (3.0 * (up.sqrt_std_error() + tot.sqrt_std_error())).max(3e-3);
            report.push(CheckResult {
                name: format!("X{}/l2/sqrt_upsilon=2*sqrt_total", j + 1),
                value: up.sqrt_value,
                reference: 2.0 * tot.sqrt_value,
                tolerance: slack,
                pass: (up.sqrt_value - 2.0 * tot.sqrt_value).abs() <= slack,
                detail: "three combined root-scale standard errors".to_string(),
            });
            ordering_checks(&mut report, &format!("X{}/l2", j + 1), &by_kind);
            for (kind, l2_est) in
                [IndexKind::FirstOrder, IndexKind::Total, IndexKind::Upsilon].iter().zip(&by_kind)
            {
                let other = engine.index_from_panel(&panel, *kind, owen1.as_ref())?;
                report.check_abs(
                    format!("X{}/owen1=l2/{}", j + 1, kind.label()),
                    other.value,
                    l2_est.value,
                    1e-10,
                );
            }
        }
        Ok(report)
    }
}

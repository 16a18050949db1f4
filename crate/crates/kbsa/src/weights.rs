//! Weight functions encoding target model behaviors, and the effective
//! weight that reduces any weighted law to a reweighting of the independent
//! product law.
//!
//! A weight is a nonnegative function with finite expectation under the
//! input law. Families here: indicator of an output box, polynomial in the
//! inputs, logistic membership of a classifier score, the product of the
//! last two, and a functional-output loss over a curve-parameter grid.
//! Construction runs a pilot sample and rejects weights with no mass.

use crate::error::{Error, Result};
use crate::marginals::InputSpace;
use crate::models::Model;
use crate::rng::StreamKey;
use std::sync::Arc;

/// How a classifier score is read off a model output vector.
#[derive(Clone)]
pub enum ClassifierScore {
    /// One coordinate of the output vector.
    Output(usize),
    /// Linear combination of the output coordinates.
    LinearCombination(Vec<f64>),
    /// Externally supplied score hook.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for ClassifierScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierScore::Output(i) => write!(f, "Output({i})"),
            ClassifierScore::LinearCombination(w) => write!(f, "LinearCombination({w:?})"),
            ClassifierScore::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl ClassifierScore {
    fn eval(&self, y: &[f64]) -> f64 {
        match self {
            ClassifierScore::Output(i) => y[*i],
            ClassifierScore::LinearCombination(w) => y.iter().zip(w).map(|(a, b)| a * b).sum(),
            ClassifierScore::Custom(f) => f(y),
        }
    }

    fn check_arity(&self, n_out: usize) -> Result<()> {
        match self {
            ClassifierScore::Output(i) if *i >= n_out => Err(Error::InvalidParameter(format!(
                "score reads output {i} but the model has {n_out} outputs"
            ))),
            ClassifierScore::LinearCombination(w) if w.len() != n_out => {
                Err(Error::DimensionMismatch { expected: n_out, got: w.len() })
            }
            _ => Ok(()),
        }
    }
}

/// Aggregation of per-curve-point losses for functional outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Max,
    Min,
}

impl Reduction {
    fn apply(&self, values: &[f64]) -> f64 {
        match self {
            Reduction::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Reduction::Max => values.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)),
            Reduction::Min => values.iter().fold(f64::INFINITY, |a, b| a.min(*b)),
        }
    }
}

/// The weight families.
#[derive(Clone)]
pub enum WeightKind {
    /// Indicator of an interval box on the model outputs. Bounds of length 1
    /// broadcast over all outputs; a missing side is unbounded.
    IndicatorThreshold {
        model: Arc<dyn Model>,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
    },
    /// Product of per-input powers x_j^{alpha_j}, read directly off the inputs.
    Polynomial { alpha: Vec<f64> },
    /// Logistic membership 1/(1+exp(-slope (s - offset))) of a classifier
    /// score s computed from the model outputs.
    SmoothMembership {
        model: Arc<dyn Model>,
        score: ClassifierScore,
        slope: f64,
        offset: f64,
    },
    /// Product of a membership weight and an indicator weight.
    Composite {
        membership: Box<WeightFunction>,
        indicator: Box<WeightFunction>,
    },
    /// Loss over the model's curve-parameter grid, reduced to a scalar and
    /// gated by an interval: w = max(value, 0) * indicator[lower, upper](value).
    FunctionalLoss {
        model: Arc<dyn Model>,
        score: ClassifierScore,
        reduction: Reduction,
        lower: Option<f64>,
        upper: Option<f64>,
    },
}

impl std::fmt::Debug for WeightKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightKind::IndicatorThreshold { model, lower, upper } => f
                .debug_struct("IndicatorThreshold")
                .field("model", &model.input_dim())
                .field("lower", lower)
                .field("upper", upper)
                .finish(),
            WeightKind::Polynomial { alpha } => {
                f.debug_struct("Polynomial").field("alpha", alpha).finish()
            }
            WeightKind::SmoothMembership { score, slope, offset, .. } => f
                .debug_struct("SmoothMembership")
                .field("score", score)
                .field("slope", slope)
                .field("offset", offset)
                .finish(),
            WeightKind::Composite { membership, indicator } => f
                .debug_struct("Composite")
                .field("membership", membership)
                .field("indicator", indicator)
                .finish(),
            WeightKind::FunctionalLoss { score, reduction, lower, upper, .. } => f
                .debug_struct("FunctionalLoss")
                .field("score", score)
                .field("reduction", reduction)
                .field("lower", lower)
                .field("upper", upper)
                .finish(),
        }
    }
}

/// A weight function with an overall positive scale. Downstream indices are
/// invariant to the scale; it exists so that invariance is testable.
#[derive(Clone, Debug)]
pub struct WeightFunction {
    kind: WeightKind,
    scale: f64,
}

fn in_box(y: &[f64], lower: &Option<Vec<f64>>, upper: &Option<Vec<f64>>) -> Result<bool> {
    let side = |bound: &Option<Vec<f64>>| -> Result<Option<Vec<f64>>> {
        match bound {
            None => Ok(None),
            Some(b) if b.len() == 1 => Ok(Some(vec![b[0]; y.len()])),
            Some(b) if b.len() == y.len() => Ok(Some(b.clone())),
            Some(b) => Err(Error::DimensionMismatch { expected: y.len(), got: b.len() }),
        }
    };
    let lo = side(lower)?;
    let hi = side(upper)?;
    for (i, v) in y.iter().enumerate() {
        if let Some(lo) = &lo {
            if *v < lo[i] {
                return Ok(false);
            }
        }
        if let Some(hi) = &hi {
            if *v > hi[i] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn model_outputs(model: &Arc<dyn Model>, x: &[f64], theta: Option<f64>) -> Result<Vec<f64>> {
    model.eval(x, theta).map_err(|e| Error::ModelEval {
        point: x.to_vec(),
        message: e.to_string(),
    })
}

impl WeightFunction {
    pub fn new(kind: WeightKind) -> Self {
        WeightFunction { kind, scale: 1.0 }
    }

    pub fn indicator_threshold(
        model: Arc<dyn Model>,
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
    ) -> Self {
        Self::new(WeightKind::IndicatorThreshold { model, lower, upper })
    }

    /// Indicator of M(x) <= c on every output, the threshold-behavior weight.
    pub fn output_below(model: Arc<dyn Model>, c: f64) -> Self {
        Self::indicator_threshold(model, None, Some(vec![c]))
    }

    pub fn polynomial(alpha: Vec<f64>) -> Self {
        Self::new(WeightKind::Polynomial { alpha })
    }

    pub fn smooth_membership(
        model: Arc<dyn Model>,
        score: ClassifierScore,
        slope: f64,
        offset: f64,
    ) -> Self {
        Self::new(WeightKind::SmoothMembership { model, score, slope, offset })
    }

    pub fn composite(membership: WeightFunction, indicator: WeightFunction) -> Result<Self> {
        if !matches!(membership.kind, WeightKind::SmoothMembership { .. }) {
            return Err(Error::InvalidParameter(
                "composite weight needs a membership first factor".into(),
            ));
        }
        if !matches!(indicator.kind, WeightKind::IndicatorThreshold { .. }) {
            return Err(Error::InvalidParameter(
                "composite weight needs an indicator second factor".into(),
            ));
        }
        Ok(Self::new(WeightKind::Composite {
            membership: Box::new(membership),
            indicator: Box::new(indicator),
        }))
    }

    pub fn functional_loss(
        model: Arc<dyn Model>,
        score: ClassifierScore,
        reduction: Reduction,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Self {
        Self::new(WeightKind::FunctionalLoss { model, score, reduction, lower, upper })
    }

    /// The same weight multiplied by a positive constant.
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if factor <= 0.0 || !factor.is_finite() {
            return Err(Error::InvalidParameter(format!("weight scale must be positive, got {factor}")));
        }
        self.scale *= factor;
        Ok(self)
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    /// Number of input coordinates the weight expects.
    pub fn arity(&self) -> usize {
        match &self.kind {
            WeightKind::IndicatorThreshold { model, .. }
            | WeightKind::SmoothMembership { model, .. }
            | WeightKind::FunctionalLoss { model, .. } => model.input_dim(),
            WeightKind::Polynomial { alpha } => alpha.len(),
            WeightKind::Composite { membership, .. } => membership.arity(),
        }
    }

    fn base_eval(&self, x: &[f64]) -> Result<f64> {
        match &self.kind {
            WeightKind::IndicatorThreshold { model, lower, upper } => {
                let y = model_outputs(model, x, None)?;
                Ok(if in_box(&y, lower, upper)? { 1.0 } else { 0.0 })
            }
            WeightKind::Polynomial { alpha } => {
                if x.len() != alpha.len() {
                    return Err(Error::DimensionMismatch { expected: alpha.len(), got: x.len() });
                }
                let mut prod = 1.0;
                for (xj, aj) in x.iter().zip(alpha) {
                    // A zero exponent leaves the factor at exactly 1 whatever
                    // the coordinate, keeping the degenerate weight constant.
                    if *aj != 0.0 {
                        prod *= xj.powf(*aj);
                    }
                }
                Ok(prod)
            }
            WeightKind::SmoothMembership { model, score, slope, offset } => {
                let y = model_outputs(model, x, None)?;
                score.check_arity(y.len())?;
                let s = score.eval(&y);
                Ok(1.0 / (1.0 + (-slope * (s - offset)).exp()))
            }
            WeightKind::Composite { membership, indicator } => {
                Ok(membership.eval(x)? * indicator.eval(x)?)
            }
            WeightKind::FunctionalLoss { model, score, reduction, lower, upper } => {
                let grid = model.theta_grid().ok_or_else(|| {
                    Error::InvalidParameter("functional-loss weight needs a model with a curve grid".into())
                })?;
                let mut values = Vec::with_capacity(grid.len());
                for theta in grid {
                    let y = model_outputs(model, x, Some(*theta))?;
                    score.check_arity(y.len())?;
                    values.push(score.eval(&y));
                }
                let v = reduction.apply(&values);
                let gate = *lower.as_ref().map(|lo| v >= *lo).get_or_insert(true)
                    && *upper.as_ref().map(|hi| v <= *hi).get_or_insert(true);
                Ok(if gate { v.max(0.0) } else { 0.0 })
            }
        }
    }

    /// Evaluate the weight at an input point.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.base_eval(x)? * self.scale;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::NonFinite(format!("weight value {v} at {x:?}")));
        }
        Ok(v)
    }

    /// True when the unscaled weight takes values only in {0, 1}.
    pub fn is_indicator(&self) -> bool {
        matches!(self.kind, WeightKind::IndicatorThreshold { .. })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// An upper bound of the weight over the given space, when one is known.
    fn value_bound(&self, space: &InputSpace) -> Option<f64> {
        let base = match &self.kind {
            WeightKind::IndicatorThreshold { .. } | WeightKind::SmoothMembership { .. } => Some(1.0),
            WeightKind::Composite { .. } => Some(1.0),
            WeightKind::Polynomial { alpha } => {
                let mut bound = 1.0;
                for (aj, m) in alpha.iter().zip(space.marginals()) {
                    let (lo, hi) = m.support();
                    if !lo.is_finite() || !hi.is_finite() {
                        return None;
                    }
                    bound *= lo.abs().max(hi.abs()).powf(*aj);
                }
                Some(bound)
            }
            WeightKind::FunctionalLoss { upper, .. } => upper.filter(|hi| *hi > 0.0),
        };
        base.map(|b| b * self.scale)
    }
}

/// The raw weight times the copula density at the marginal-CDF image: the
/// function whose expectation under the independent product law normalizes
/// the weighted distribution.
#[derive(Clone, Debug)]
pub struct EffectiveWeight {
    weight: WeightFunction,
    space: InputSpace,
}

const PILOT_N: usize = 1000;

impl EffectiveWeight {
    /// Bind a weight to an input space. Runs a pilot of 1000 draws from the
    /// independent law on its own stream and rejects weights whose pilot
    /// mean is zero or non-finite (a behavior with no mass).
    pub fn new(weight: WeightFunction, space: InputSpace, pilot_key: StreamKey) -> Result<Self> {
        if weight.arity() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: weight.arity(),
            });
        }
        let ew = EffectiveWeight { weight, space };
        let mut sum = 0.0;
        for x in ew.space.draw(PILOT_N, pilot_key.child(0x70)) {
            sum += ew.eval(&x)?;
        }
        if !(sum / PILOT_N as f64).is_finite() || sum == 0.0 {
            return Err(Error::DegenerateWeight(format!(
                "pilot mean {} over {PILOT_N} draws",
                sum / PILOT_N as f64
            )));
        }
        Ok(ew)
    }

    pub fn weight(&self) -> &WeightFunction {
        &self.weight
    }

    pub fn space(&self) -> &InputSpace {
        &self.space
    }

    /// Effective weight value at an input point.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let raw = self.weight.eval(x)?;
        if self.space.copula().is_independence() {
            // No copula factor at all, so the identity with the raw weight
            // is exact rather than a multiply by 1.
            return Ok(raw);
        }
        Ok(raw * self.space.copula_at_point(x))
    }

    /// Monte Carlo estimate of the normalizing constant E[w_e(Y)] under the
    /// independent law, with its standard error.
    pub fn normalizing_constant(&self, n: usize, key: StreamKey) -> Result<(f64, f64)> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("normalizing constant needs n >= 2, got {n}")));
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut nonzero = 0usize;
        for x in self.space.draw(n, key) {
            let v = self.eval(&x)?;
            if v != 0.0 {
                nonzero += 1;
            }
            sum += v;
            sum_sq += v * v;
        }
        if nonzero == 0 {
            return Err(Error::DegenerateWeight(format!("all {n} evaluations were zero")));
        }
        let mean = sum / n as f64;
        let var = (sum_sq - sum * sum / n as f64) / (n as f64 - 1.0);
        Ok((mean, (var.max(0.0) / n as f64).sqrt()))
    }

    /// Per-coordinate weight factors (up to a positive constant), available
    /// when the effective weight separates across coordinates: a polynomial
    /// weight under the independence copula. The fast conditional-sampling
    /// path rests on this factorization.
    pub fn coordinate_factors(&self) -> Option<Vec<Arc<dyn Fn(f64) -> f64 + Send + Sync>>> {
        if !self.space.copula().is_independence() {
            return None;
        }
        match &self.weight.kind {
            WeightKind::Polynomial { alpha } => Some(
                alpha
                    .iter()
                    .map(|aj| {
                        let a = *aj;
                        Arc::new(move |x: f64| if a == 0.0 { 1.0 } else { x.powf(a) })
                            as Arc<dyn Fn(f64) -> f64 + Send + Sync>
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// True when the effective weight is constant over the space.
    pub fn is_constant(&self) -> bool {
        self.space.copula().is_independence()
            && matches!(&self.weight.kind, WeightKind::Polynomial { alpha } if alpha.iter().all(|a| *a == 0.0))
    }

    /// An upper bound of the effective weight, when one is known; drives the
    /// accept-reject sampling path.
    pub fn upper_bound(&self) -> Option<f64> {
        let weight_bound = self.weight.value_bound(&self.space)?;
        match self.space.copula() {
            crate::marginals::CopulaDensity::Independence => Some(weight_bound),
            crate::marginals::CopulaDensity::Custom { bound, .. } => {
                bound.map(|b| b * weight_bound)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::MarginalDistribution;
    use crate::models::ModelSpec;

    fn normal_space(d: usize) -> InputSpace {
        InputSpace::new(vec![MarginalDistribution::Normal { mean: 0.0, sd: 1.0 }; d]).unwrap()
    }

    fn unit_space(d: usize) -> InputSpace {
        InputSpace::new(vec![MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 }; d]).unwrap()
    }

    #[test]
    fn indicator_inside_domain_is_one() {
        let model = ModelSpec::Quadratic3.build().unwrap();
        let w = WeightFunction::output_below(model, 1.0);
        assert_eq!(w.eval(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(w.eval(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn polynomial_values() {
        let w = WeightFunction::polynomial(vec![0.0, 0.0, 0.0]);
        assert_eq!(w.eval(&[0.3, -4.0, 7.5]).unwrap(), 1.0);
        let w2 = WeightFunction::polynomial(vec![2.0]);
        assert_eq!(w2.eval(&[0.5]).unwrap(), 0.25);
    }

    #[test]
    fn effective_equals_raw_under_independence() {
        let model = ModelSpec::Quadratic3.build().unwrap();
        let w = WeightFunction::output_below(model, 1.0);
        let ew = EffectiveWeight::new(w, normal_space(3), StreamKey::root(41)).unwrap();
        let mut rng = StreamKey::root(42).rng();
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rand::Rng::gen::<f64>(&mut rng) * 2.0 - 1.0).collect();
            assert_eq!(ew.eval(&x).unwrap(), ew.weight().eval(&x).unwrap());
        }
    }

    #[test]
    fn effective_multiplies_custom_copula_density() {
        let space = unit_space(2)
            .with_copula(
                // Density 2 on the half-cube u1 <= 1/2, 0 elsewhere.
                Arc::new(|u: &[f64]| if u[0] <= 0.5 { 2.0 } else { 0.0 }),
                Some(2.0),
                4096,
                StreamKey::root(43),
            )
            .unwrap();
        let w = WeightFunction::polynomial(vec![0.0, 0.0]);
        let ew = EffectiveWeight::new(w, space, StreamKey::root(44)).unwrap();
        // F(x) = x on unit marginals, so the point picks its own half.
        assert_eq!(ew.eval(&[0.25, 0.7]).unwrap(), 2.0);
        assert_eq!(ew.eval(&[0.75, 0.7]).unwrap(), 0.0);
        // Indicator zero kills the value regardless of copula.
        let model = ModelSpec::Linear { coefficients: vec![1.0, 1.0] }.build().unwrap();
        let w_out = WeightFunction::output_below(model, -1.0);
        assert_eq!(w_out.eval(&[0.25, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn constant_weight_normalizes_to_exactly_one() {
        let ew = EffectiveWeight::new(
            WeightFunction::polynomial(vec![0.0, 0.0]),
            unit_space(2),
            StreamKey::root(45),
        )
        .unwrap();
        let (c, se) = ew.normalizing_constant(500, StreamKey::root(46)).unwrap();
        assert_eq!(c, 1.0);
        assert_eq!(se, 0.0);
        assert!(ew.is_constant());
    }

    #[test]
    fn ball_indicator_constant_matches_chi_square_tail() {
        // Sum of three squared standard normals is chi-square(3); the
        // normalizing constant of the indicator M <= c is its CDF at c.
        let model = ModelSpec::Quadratic3.build().unwrap();
        let n = 20_000;
        for (c, reference) in [(1.0, 0.198_748_043_098_799_20), (5.0, 0.828_202_855_703_266_87)] {
            let w = WeightFunction::output_below(model.clone(), c);
            let ew = EffectiveWeight::new(w, normal_space(3), StreamKey::root(47)).unwrap();
            let (est, se) = ew.normalizing_constant(n, StreamKey::root(48)).unwrap();
            assert!(
                (est - reference).abs() <= 3.0 * se,
                "c={c}: estimate {est} +/- {se} vs {reference}"
            );
        }
    }

    #[test]
    fn polynomial_constant_matches_product_of_means() {
        let ew = EffectiveWeight::new(
            WeightFunction::polynomial(vec![1.0, 1.0]),
            unit_space(2),
            StreamKey::root(49),
        )
        .unwrap();
        let (est, se) = ew.normalizing_constant(20_000, StreamKey::root(50)).unwrap();
        assert!((est - 0.25).abs() <= 3.0 * se, "estimate {est} +/- {se}");
    }

    #[test]
    fn scale_equivariance_is_exact() {
        let w = WeightFunction::polynomial(vec![1.0, 1.0]);
        let scaled = w.clone().scaled(4.0).unwrap();
        let ew = EffectiveWeight::new(w, unit_space(2), StreamKey::root(51)).unwrap();
        let ew_scaled = EffectiveWeight::new(scaled, unit_space(2), StreamKey::root(51)).unwrap();
        let (c, se) = ew.normalizing_constant(5000, StreamKey::root(52)).unwrap();
        let (c4, se4) = ew_scaled.normalizing_constant(5000, StreamKey::root(52)).unwrap();
        // A power-of-two factor commutes with every floating-point sum.
        assert_eq!(c4, 4.0 * c);
        assert_eq!(se4, 4.0 * se);
        let mut rng = StreamKey::root(53).rng();
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
            assert_eq!(ew_scaled.eval(&x).unwrap(), 4.0 * ew.eval(&x).unwrap());
        }
    }

    #[test]
    fn indicator_values_are_binary() {
        let model = ModelSpec::Quadratic3.build().unwrap();
        let w = WeightFunction::output_below(model, 1.0);
        assert!(w.is_indicator());
        let mut rng = StreamKey::root(54).rng();
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rand::Rng::gen::<f64>(&mut rng) * 4.0 - 2.0).collect();
            let v = w.eval(&x).unwrap();
            assert!(v == 0.0 || v == 1.0, "indicator produced {v}");
        }
    }

    #[test]
    fn impossible_behavior_is_rejected_at_construction() {
        // The quadratic output is nonnegative, so the box [.., -1] is empty.
        let model = ModelSpec::Quadratic3.build().unwrap();
        let w = WeightFunction::output_below(model, -1.0);
        match EffectiveWeight::new(w, normal_space(3), StreamKey::root(55)) {
            Err(Error::DegenerateWeight(_)) => {}
            other => panic!("expected degenerate-weight error, got {other:?}"),
        }
    }

    #[test]
    fn membership_logistic_midpoint() {
        let model = ModelSpec::Quadratic3.build().unwrap();
        let w = WeightFunction::smooth_membership(model, ClassifierScore::Output(0), 2.0, 1.0);
        // Score equals offset at (1,0,0), so the logistic sits at 1/2.
        assert_eq!(w.eval(&[1.0, 0.0, 0.0]).unwrap(), 0.5);
        let v = w.eval(&[2.0, 0.0, 0.0]).unwrap();
        assert!((v - 1.0 / (1.0 + (-6.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn composite_multiplies_its_factors() {
        let model = ModelSpec::Quadratic3.build().unwrap();
        let membership =
            WeightFunction::smooth_membership(model.clone(), ClassifierScore::Output(0), 2.0, 1.0);
        let indicator = WeightFunction::output_below(model, 2.0);
        let w = WeightFunction::composite(membership.clone(), indicator.clone()).unwrap();
        let x = [1.0, 0.5, 0.0];
        assert_eq!(
            w.eval(&x).unwrap(),
            membership.eval(&x).unwrap() * indicator.eval(&x).unwrap()
        );
        // Outside the indicator box the product vanishes.
        assert_eq!(w.eval(&[2.0, 0.0, 0.0]).unwrap(), 0.0);
        // Kind mismatch is rejected.
        assert!(WeightFunction::composite(indicator_clone_helper(), indicator_clone_helper()).is_err());
    }

    fn indicator_clone_helper() -> WeightFunction {
        WeightFunction::output_below(ModelSpec::Quadratic3.build().unwrap(), 2.0)
    }

    #[test]
    fn functional_loss_reductions_and_gate() {
        let model = ModelSpec::ThetaToy.build().unwrap();
        let mk = |reduction, lower, upper| {
            WeightFunction::functional_loss(
                model.clone(),
                ClassifierScore::Output(0),
                reduction,
                lower,
                upper,
            )
        };
        let x = [2.0, 4.0];
        // Grid values of theta x1 + (1-theta) x2 over {0,.25,.5,.75,1}:
        // 4, 3.5, 3, 2.5, 2.
        assert_eq!(mk(Reduction::Mean, None, None).eval(&x).unwrap(), 3.0);
        assert_eq!(mk(Reduction::Max, None, None).eval(&x).unwrap(), 4.0);
        assert_eq!(mk(Reduction::Min, None, None).eval(&x).unwrap(), 2.0);
        // The interval gate zeroes values outside it.
        assert_eq!(mk(Reduction::Max, None, Some(3.5)).eval(&x).unwrap(), 0.0);
        assert_eq!(mk(Reduction::Mean, None, Some(3.5)).eval(&x).unwrap(), 3.0);
        // Negative reduced losses carry no weight.
        assert_eq!(mk(Reduction::Min, None, None).eval(&[-2.0, -4.0]).unwrap(), 0.0);
    }

    #[test]
    fn model_failure_carries_the_point() {
        let model = ModelSpec::Quadratic3.build().unwrap();
        let w = WeightFunction::output_below(model, 1.0);
        match w.eval(&[1.0, 2.0]) {
            Err(Error::ModelEval { point, .. }) => assert_eq!(point, vec![1.0, 2.0]),
            other => panic!("expected model-eval error, got {other:?}"),
        }
    }

    #[test]
    fn coordinate_factors_only_for_separable_weights() {
        let ew = EffectiveWeight::new(
            WeightFunction::polynomial(vec![2.0, 0.0]),
            unit_space(2),
            StreamKey::root(56),
        )
        .unwrap();
        let factors = ew.coordinate_factors().unwrap();
        assert_eq!(factors.len(), 2);
        assert_eq!(factors[0](0.5), 0.25);
        assert_eq!(factors[1](0.37), 1.0);

        let model = ModelSpec::Quadratic3.build().unwrap();
        let ew2 = EffectiveWeight::new(
            WeightFunction::output_below(model, 1.0),
            normal_space(3),
            StreamKey::root(57),
        )
        .unwrap();
        assert!(ew2.coordinate_factors().is_none());
    }

    #[test]
    fn upper_bounds_reflect_family_structure() {
        let model = ModelSpec::Quadratic3.build().unwrap();
        let ew = EffectiveWeight::new(
            WeightFunction::output_below(model.clone(), 1.0),
            normal_space(3),
            StreamKey::root(58),
        )
        .unwrap();
        assert_eq!(ew.upper_bound(), Some(1.0));

        let ew_poly = EffectiveWeight::new(
            WeightFunction::polynomial(vec![2.0, 3.0]),
            unit_space(2),
            StreamKey::root(59),
        )
        .unwrap();
        assert_eq!(ew_poly.upper_bound(), Some(1.0));

        // Polynomial over an unbounded support has no usable bound.
        let ew_unbounded = EffectiveWeight::new(
            WeightFunction::polynomial(vec![2.0]),
            InputSpace::new(vec![MarginalDistribution::Normal { mean: 0.0, sd: 1.0 }]).unwrap(),
            StreamKey::root(60),
        )
        .unwrap();
        assert_eq!(ew_unbounded.upper_bound(), None);
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let w = WeightFunction::polynomial(vec![1.0, 1.0, 1.0]);
        match EffectiveWeight::new(w, unit_space(2), StreamKey::root(61)) {
            Err(Error::DimensionMismatch { expected: 2, got: 3 }) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }
}

//! Marginal distribution families and the independent product law they span.
//!
//! Four families cover every bundled configuration: uniform, normal, beta,
//! and a scaled beta on [0, c] (beta of the first kind). Each exposes CDF,
//! quantile, density, and the product space [`InputSpace`] samples the joint
//! independent law by componentwise quantile mapping of uniforms.

use crate::error::{Error, Result};
use crate::rng::{latin_uniforms, StreamKey};
use crate::special::{inv_reg_inc_beta, ln_gamma, normal_cdf, normal_pdf, normal_quantile, reg_inc_beta};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One marginal distribution.
///
/// Quantiles at `p = 0` and `p = 1` return the support infimum/supremum;
/// infinite endpoints are mapped to the nearest representable double
/// ([`f64::MIN`] / [`f64::MAX`]) so rejection loops never propagate NaN.
/// [`MarginalDistribution::quantile_tail_clamped`] reports when that mapping
/// happened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalDistribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Beta { a: f64, b: f64 },
    /// Beta of the first kind: `scale` times a Beta(a, b) variable.
    BetaFirstKind { scale: f64, a: f64, b: f64 },
}

impl MarginalDistribution {
    /// Check family parameters.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            MarginalDistribution::Uniform { lo, hi } => hi > lo && lo.is_finite() && hi.is_finite(),
            MarginalDistribution::Normal { mean, sd } => *sd > 0.0 && mean.is_finite() && sd.is_finite(),
            MarginalDistribution::Beta { a, b } => *a > 0.0 && *b > 0.0,
            MarginalDistribution::BetaFirstKind { scale, a, b } => {
                *scale > 0.0 && *a > 0.0 && *b > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{self:?}")))
        }
    }

    /// Support as a closed interval (infinite tails reported as infinities).
    pub fn support(&self) -> (f64, f64) {
        match self {
            MarginalDistribution::Uniform { lo, hi } => (*lo, *hi),
            MarginalDistribution::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            MarginalDistribution::Beta { .. } => (0.0, 1.0),
            MarginalDistribution::BetaFirstKind { scale, .. } => (0.0, *scale),
        }
    }

    /// CDF. Values outside the support clamp to 0 or 1.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            MarginalDistribution::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            MarginalDistribution::Normal { mean, sd } => normal_cdf((x - mean) / sd),
            MarginalDistribution::Beta { a, b } => reg_inc_beta(*a, *b, x.clamp(0.0, 1.0)),
            MarginalDistribution::BetaFirstKind { scale, a, b } => {
                reg_inc_beta(*a, *b, (x / scale).clamp(0.0, 1.0))
            }
        }
    }

    /// Quantile. Errors when `p` is outside [0, 1]; at the endpoints returns
    /// the support bound (clamped to finite doubles for unbounded tails).
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("quantile level {p} outside [0, 1]")));
        }
        Ok(match self {
            MarginalDistribution::Uniform { lo, hi } => lo + p * (hi - lo),
            MarginalDistribution::Normal { mean, sd } => {
                // normal_quantile already maps 0/1 to the finite extremes.
                mean + sd * normal_quantile(p)
            }
            MarginalDistribution::Beta { a, b } => inv_reg_inc_beta(*a, *b, p),
            MarginalDistribution::BetaFirstKind { scale, a, b } => {
                scale * inv_reg_inc_beta(*a, *b, p)
            }
        })
    }

    /// True when `quantile(p)` had to replace an infinite support endpoint
    /// with the nearest representable double.
    pub fn quantile_tail_clamped(&self, p: f64) -> bool {
        matches!(self, MarginalDistribution::Normal { .. }) && (p == 0.0 || p == 1.0)
    }

    /// Density with respect to Lebesgue measure; zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        match self {
            MarginalDistribution::Uniform { lo, hi } => {
                if x >= *lo && x <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            MarginalDistribution::Normal { mean, sd } => normal_pdf((x - mean) / sd) / sd,
            MarginalDistribution::Beta { a, b } => beta_pdf(*a, *b, x),
            MarginalDistribution::BetaFirstKind { scale, a, b } => {
                beta_pdf(*a, *b, x / scale) / scale
            }
        }
    }
}

fn beta_pdf(a: f64, b: f64, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    // Open-interval evaluation; endpoint densities may be infinite for
    // shapes < 1 and are reported as such.
    if x == 0.0 {
        return match a {
            a if a < 1.0 => f64::INFINITY,
            a if a == 1.0 => b,
            _ => 0.0,
        };
    }
    if x == 1.0 {
        return match b {
            b if b < 1.0 => f64::INFINITY,
            b if b == 1.0 => a,
            _ => 0.0,
        };
    }
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta).exp()
}

/// Copula density on the unit cube. The default is independence; a custom
/// density can be attached together with an optional upper bound (used to
/// decide whether accept-reject sampling is available downstream).
#[derive(Clone)]
pub enum CopulaDensity {
    Independence,
    Custom {
        density: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        /// A known upper bound for the density, if any.
        bound: Option<f64>,
    },
}

impl std::fmt::Debug for CopulaDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CopulaDensity::Independence => write!(f, "Independence"),
            CopulaDensity::Custom { bound, .. } => write!(f, "Custom {{ bound: {bound:?} }}"),
        }
    }
}

impl CopulaDensity {
    /// Evaluate at a point of the unit cube.
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            CopulaDensity::Independence => 1.0,
            CopulaDensity::Custom { density, .. } => density(u),
        }
    }

    pub fn is_independence(&self) -> bool {
        matches!(self, CopulaDensity::Independence)
    }
}

/// The initial input law: d marginals plus a copula density.
#[derive(Clone, Debug)]
pub struct InputSpace {
    marginals: Vec<MarginalDistribution>,
    copula: CopulaDensity,
}

impl InputSpace {
    /// Independent product law over the given marginals.
    pub fn new(marginals: Vec<MarginalDistribution>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidParameter("input space needs d >= 1".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(InputSpace {
            marginals,
            copula: CopulaDensity::Independence,
        })
    }

    /// Attach a custom copula density. A Monte Carlo normalization check runs
    /// at construction: the density must integrate to 1 over the unit cube
    /// within three standard errors of an n-point estimate.
    pub fn with_copula(
        mut self,
        density: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        bound: Option<f64>,
        check_n: usize,
        key: StreamKey,
    ) -> Result<Self> {
        let d = self.dim();
        let n = check_n.max(16);
        let mut u = vec![0.0; n * d];
        latin_uniforms(&mut u, key);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let v = density(&u[i * d..(i + 1) * d]);
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "copula density produced {v} on the unit cube"
                )));
            }
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        if (mean - 1.0).abs() > 3.0 * se.max(1e-12) {
            return Err(Error::InvalidParameter(format!(
                "copula density integrates to {mean:.6} +/- {se:.2e}, not 1"
            )));
        }
        self.copula = CopulaDensity::Custom { density, bound };
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalDistribution] {
        &self.marginals
    }

    pub fn marginal(&self, j: usize) -> &MarginalDistribution {
        &self.marginals[j]
    }

    pub fn copula(&self) -> &CopulaDensity {
        &self.copula
    }

    /// Copula density at the marginal-CDF image of a point in input space.
    pub fn copula_at_point(&self, x: &[f64]) -> f64 {
        match &self.copula {
            CopulaDensity::Independence => 1.0,
            CopulaDensity::Custom { density, .. } => {
                let u: Vec<f64> = x
                    .iter()
                    .zip(&self.marginals)
                    .map(|(xi, m)| m.cdf(*xi))
                    .collect();
                density(&u)
            }
        }
    }

    /// Draw n points from the independent product law by componentwise
    /// quantile mapping of fresh uniforms. Reproducible given the key.
    pub fn draw(&self, n: usize, key: StreamKey) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut rng = key.rng();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = Vec::with_capacity(d);
            for m in &self.marginals {
                let u: f64 = rand::Rng::gen(&mut rng);
                // Uniforms from the generator are in [0, 1); strictly inside
                // the open interval is enough for every family here.
                x.push(m.quantile(u).expect("uniform draw in [0,1]"));
            }
            out.push(x);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::ks_distance_to_cdf;

    fn families() -> Vec<MarginalDistribution> {
        vec![
            MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 },
            MarginalDistribution::Uniform { lo: -2.0, hi: 3.0 },
            MarginalDistribution::Normal { mean: 0.0, sd: 1.0 },
            MarginalDistribution::Normal { mean: 1.5, sd: 0.3 },
            MarginalDistribution::Beta { a: 0.5, b: 2.0 },
            MarginalDistribution::Beta { a: 0.5, b: 1.5 },
            MarginalDistribution::Beta { a: 0.5, b: 1.0 },
            MarginalDistribution::Beta { a: 21.0, b: 1.0 },
            MarginalDistribution::BetaFirstKind { scale: 1.0, a: 0.5, b: 2.0 },
            MarginalDistribution::BetaFirstKind { scale: 5.0, a: 0.5, b: 2.0 },
        ]
    }

    #[test]
    fn cdf_basic_values() {
        let n = MarginalDistribution::Normal { mean: 0.0, sd: 1.0 };
        assert!((n.cdf(0.0) - 0.5).abs() < 1e-15);
        let u = MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 };
        assert!((u.cdf(0.25) - 0.25).abs() < 1e-15);
        let b = MarginalDistribution::Beta { a: 0.5, b: 1.0 };
        // Closed form sqrt(x).
        assert!((b.cdf(0.25) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_basic_values() {
        let u = MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 };
        assert!((u.quantile(0.5).unwrap() - 0.5).abs() < 1e-15);
        let b = MarginalDistribution::Beta { a: 0.5, b: 1.0 };
        // Inverse of sqrt(x) is p^2.
        assert!((b.quantile(0.3).unwrap() - 0.09).abs() < 1e-12);
        assert!(u.quantile(1.5).is_err());
        assert!(u.quantile(-0.1).is_err());
    }

    #[test]
    fn scaled_beta_sample_mean_matches_first_moment() {
        // BetaFirstKind(1, 1/2, 2) has mean a/(a+b) = 0.2.
        let space = InputSpace::new(vec![MarginalDistribution::BetaFirstKind {
            scale: 1.0,
            a: 0.5,
            b: 2.0,
        }])
        .unwrap();
        let n = 40_000;
        let pts = space.draw(n, StreamKey::root(42));
        let mean: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        // sd of Beta(1/2,2) is ~0.21; allow 4 sigma.
        assert!((mean - 0.2).abs() < 4.0 * 0.21 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn round_trip_all_families() {
        let mut key = StreamKey::root(9);
        for dist in families() {
            key = key.child(1);
            let mut rng = key.rng();
            for _ in 0..1000 {
                let p: f64 = rand::Rng::gen_range(&mut rng, 0.001..0.999);
                let x = dist.quantile(p).unwrap();
                let back = dist.cdf(x);
                assert!(
                    (back - p).abs() < 1e-9,
                    "{dist:?}: p={p}, x={x}, back={back}"
                );
            }
        }
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        for dist in families() {
            let (lo, hi) = dist.support();
            let lo = if lo.is_finite() { lo } else { -6.0 };
            let hi = if hi.is_finite() { hi } else { 6.0 };
            for i in 1..40 {
                let x = lo + (hi - lo) * i as f64 / 40.0;
                let h = 2e-5 * (hi - lo).max(1.0);
                // Skip points where the density blows up or the support ends.
                if x - h <= lo || x + h >= hi {
                    continue;
                }
                let numeric = (dist.cdf(x + h) - dist.cdf(x - h)) / (2.0 * h);
                let exact = dist.density(x);
                if !exact.is_finite() || exact > 1e3 {
                    continue;
                }
                assert!(
                    (numeric - exact).abs() < 1e-5 * exact.max(1.0),
                    "{dist:?} at {x}: numeric {numeric}, exact {exact}"
                );
            }
        }
    }

    #[test]
    fn beta_first_kind_matches_scaled_beta_in_distribution() {
        let scaled = MarginalDistribution::BetaFirstKind { scale: 5.0, a: 0.5, b: 2.0 };
        let base = MarginalDistribution::Beta { a: 0.5, b: 2.0 };
        let n = 20_000;
        let space = InputSpace::new(vec![scaled.clone()]).unwrap();
        let pts = space.draw(n, StreamKey::root(17));
        let m1: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let m2: f64 = pts.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64;
        // Moments of 5 * Beta(1/2, 2): mean 1, second moment 25 * 3/35.
        assert!((m1 - 1.0).abs() < 0.03, "m1 {m1}");
        assert!((m2 - 25.0 * 3.0 / 35.0).abs() < 0.1, "m2 {m2}");
        // And the CDFs agree after rescaling.
        for i in 1..20 {
            let x = i as f64 / 20.0;
            assert!((scaled.cdf(5.0 * x) - base.cdf(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn draw_uniform_passes_ks() {
        let space = InputSpace::new(vec![MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 }]).unwrap();
        let pts = space.draw(10_000, StreamKey::root(3));
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let d = ks_distance_to_cdf(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d < 0.02, "KS distance {d}");
    }

    #[test]
    fn draw_normals_componentwise_clt_bound() {
        let space = InputSpace::new(vec![
            MarginalDistribution::Normal { mean: 0.0, sd: 1.0 },
            MarginalDistribution::Normal { mean: 0.0, sd: 1.0 },
            MarginalDistribution::Normal { mean: 0.0, sd: 1.0 },
        ])
        .unwrap();
        let n = 10_000;
        let pts = space.draw(n, StreamKey::root(4));
        for j in 0..3 {
            let mean: f64 = pts.iter().map(|p| p[j]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "j={j} mean {mean}");
        }
    }

    #[test]
    fn draw_is_deterministic() {
        let space = InputSpace::new(vec![MarginalDistribution::Normal { mean: 0.0, sd: 1.0 }]).unwrap();
        let a = space.draw(100, StreamKey::root(8).child(2));
        let b = space.draw(100, StreamKey::root(8).child(2));
        assert_eq!(a, b);
    }

    #[test]
    fn tail_clamping_is_flagged_and_finite() {
        let n = MarginalDistribution::Normal { mean: 0.0, sd: 1.0 };
        assert_eq!(n.quantile(0.0).unwrap(), f64::MIN);
        assert_eq!(n.quantile(1.0).unwrap(), f64::MAX);
        assert!(n.quantile_tail_clamped(0.0));
        assert!(!n.quantile_tail_clamped(0.5));
        let u = MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 };
        assert!(!u.quantile_tail_clamped(0.0));
        assert_eq!(u.quantile(0.0).unwrap(), 0.0);
    }

    #[test]
    fn copula_normalization_check_rejects_unnormalized_density() {
        let space = InputSpace::new(vec![
            MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 },
            MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 },
        ])
        .unwrap();
        let bad = space.clone().with_copula(
            Arc::new(|_u: &[f64]| 2.0),
            Some(2.0),
            4096,
            StreamKey::root(5),
        );
        assert!(bad.is_err());
        let good = space.with_copula(
            // Valid density 1 + 0.5(2u-1)(2v-1), integrates to 1.
            Arc::new(|u: &[f64]| 1.0 + 0.5 * (2.0 * u[0] - 1.0) * (2.0 * u[1] - 1.0)),
            Some(1.5),
            4096,
            StreamKey::root(5),
        );
        assert!(good.is_ok());
    }
}

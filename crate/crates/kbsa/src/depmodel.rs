//! Conditional structure of a weighted input law: the conditional CDF of the
//! free coordinates given a fixed subset, and the dependency transform that
//! turns independent uniforms into a draw of those coordinates.
//!
//! Everything runs on the uniform scale. A point of the weighted law is
//! `F^{-1}(Z)` componentwise, where the vector `Z` has density proportional
//! to the effective weight at `F^{-1}(z)`. Conditioning on a subset and
//! walking the remaining coordinates in a chosen order reduces sampling to a
//! chain of one-dimensional quantile inversions, each against a weighted
//! empirical CDF built from one inner Monte Carlo panel.

use crate::error::{Error, Result};
use crate::rng::{iid_uniforms, StreamKey};
use crate::special::inv_reg_inc_beta;
use crate::weights::EffectiveWeight;
use rayon::prelude::*;
use std::sync::Arc;

/// Closed-form replacement for the numerical transform: maps (fixed subset
/// values, uniforms in walk order) to the free coordinates in ascending
/// index order.
pub type AnalyticTransform = Arc<dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// A conditioning subset of the input indices together with the order in
/// which the remaining coordinates are generated. Indices are zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetSpec {
    d: usize,
    u: Vec<usize>,
    pi: Vec<usize>,
    // Position of each walk-order coordinate within the ascending complement.
    pi_rank: Vec<usize>,
}

impl SubsetSpec {
    /// Subset with the free coordinates walked in ascending order.
    pub fn new(d: usize, u: Vec<usize>) -> Result<Self> {
        let pi = complement(d, &u)?;
        Self::with_permutation(d, u, pi)
    }

    /// Subset with an explicit walk order over the complement.
    pub fn with_permutation(d: usize, u: Vec<usize>, pi: Vec<usize>) -> Result<Self> {
        let rest = complement(d, &u)?;
        let mut seen = vec![false; d];
        for j in &pi {
            if *j >= d || seen[*j] {
                return Err(Error::InvalidParameter(format!(
                    "walk order {pi:?} is not a permutation of the complement"
                )));
            }
            seen[*j] = true;
        }
        if pi.len() != rest.len() || rest.iter().any(|j| !seen[*j]) {
            return Err(Error::InvalidParameter(format!(
                "walk order {pi:?} does not cover the complement of {u:?}"
            )));
        }
        let pi_rank = pi
            .iter()
            .map(|j| rest.binary_search(j).expect("pi covers the complement"))
            .collect();
        Ok(SubsetSpec { d, u, pi, pi_rank })
    }

    /// No conditioning: every coordinate is free (the target-sampling case).
    pub fn unconditioned(d: usize) -> Self {
        Self::new(d, Vec::new()).expect("empty subset is always valid")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// The conditioned (fixed) indices, ascending.
    pub fn u(&self) -> &[usize] {
        &self.u
    }

    /// The free indices in generation order.
    pub fn pi(&self) -> &[usize] {
        &self.pi
    }

    pub fn free_len(&self) -> usize {
        self.pi.len()
    }

    /// Full point from subset values and free values (free values given in
    /// ascending index order).
    pub fn assemble(&self, x_u: &[f64], x_free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.assemble_into(x_u, x_free, &mut out);
        out
    }

    /// Allocation-free variant of [`Self::assemble`] for estimation hot loops.
    pub fn assemble_into(&self, x_u: &[f64], x_free: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x_u.len(), self.u.len());
        debug_assert_eq!(x_free.len(), self.pi.len());
        debug_assert_eq!(out.len(), self.d);
        for (slot, v) in self.u.iter().zip(x_u) {
            out[*slot] = *v;
        }
        let mut free_iter = x_free.iter();
        for (j, slot) in out.iter_mut().enumerate() {
            if self.u.binary_search(&j).is_err() {
                *slot = *free_iter.next().expect("free values cover the complement");
            }
        }
    }
}

fn complement(d: usize, u: &[usize]) -> Result<Vec<usize>> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if u.windows(2).any(|w| w[0] >= w[1]) || u.iter().any(|j| *j >= d) {
        return Err(Error::InvalidParameter(format!(
            "subset {u:?} must be strictly increasing indices below {d}"
        )));
    }
    Ok((0..d).filter(|j| u.binary_search(j).is_err()).collect())
}

/// Piecewise-linear CDF on [0, 1] built from nonnegative weights over an
/// equispaced midpoint grid: node k/n carries the mass of the first k cells.
/// Inverting the interpolant is a closed-form solve on one segment, so the
/// returned level matches the empirical curve exactly.
#[derive(Clone, Debug)]
struct PanelCdf {
    cum: Vec<f64>,
}

impl PanelCdf {
    fn from_weights(w: &[f64]) -> Option<PanelCdf> {
        let mut cum = Vec::with_capacity(w.len() + 1);
        let mut total = 0.0;
        cum.push(0.0);
        for wi in w {
            total += *wi;
            cum.push(total);
        }
        if total > 0.0 && total.is_finite() {
            Some(PanelCdf { cum })
        } else {
            None
        }
    }

    fn n_cells(&self) -> usize {
        self.cum.len() - 1
    }

    /// Forward CDF of the interpolant, used to verify quantile round trips.
    #[cfg(test)]
    fn value(&self, z: f64) -> f64 {
        let n = self.n_cells();
        let pos = (z.clamp(0.0, 1.0) * n as f64).min(n as f64 - 1e-9);
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        (self.cum[k] + frac * (self.cum[k + 1] - self.cum[k])) / self.cum[n]
    }

    fn quantile(&self, p: f64) -> f64 {
        let n = self.n_cells();
        let target = p.clamp(0.0, 1.0) * self.cum[n];
        let k = self.cum[1..].partition_point(|c| *c < target) + 1;
        let k = k.min(n);
        let cell = self.cum[k] - self.cum[k - 1];
        let frac = if cell > 0.0 { (target - self.cum[k - 1]) / cell } else { 0.0 };
        (((k - 1) as f64 + frac.clamp(0.0, 1.0)) / n as f64).clamp(0.0, 1.0)
    }
}

/// Conditional sampler of the free coordinates given the conditioned ones
/// under a weighted input law.
#[derive(Clone)]
pub struct DependencyModel {
    ew: EffectiveWeight,
    subset: SubsetSpec,
    inner_mc: usize,
    inversion_tol: f64,
    analytic_override: Option<AnalyticTransform>,
    // Weighted per-coordinate quantile curves, present when the effective
    // weight separates across coordinates (then conditionals are marginal).
    tables: Option<Arc<Vec<PanelCdf>>>,
}

impl std::fmt::Debug for DependencyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DependencyModel")
            .field("subset", &self.subset)
            .field("inner_mc", &self.inner_mc)
            .field("inversion_tol", &self.inversion_tol)
            .field("analytic_override", &self.analytic_override.is_some())
            .field("product_form", &self.tables.is_some())
            .finish()
    }
}

const DEFAULT_INNER_MC: usize = 2000;
const DEFAULT_INVERSION_TOL: f64 = 1e-3;
const PRODUCT_GRID: usize = 4096;
const STARVATION_FLOOR: f64 = 1e-4;
const STARVATION_PILOT: usize = 4000;

impl DependencyModel {
    pub fn new(ew: EffectiveWeight, subset: SubsetSpec) -> Result<Self> {
        if subset.dim() != ew.space().dim() {
            return Err(Error::DimensionMismatch {
                expected: ew.space().dim(),
                got: subset.dim(),
            });
        }
        let tables = build_product_tables(&ew)?;
        Ok(DependencyModel {
            ew,
            subset,
            inner_mc: DEFAULT_INNER_MC,
            inversion_tol: DEFAULT_INVERSION_TOL,
            analytic_override: None,
            tables,
        })
    }

    /// Adjust the inner panel size and the inversion tolerance.
    pub fn with_accuracy(mut self, inner_mc: usize, inversion_tol: f64) -> Result<Self> {
        if inner_mc < 100 {
            return Err(Error::InvalidParameter(format!(
                "inner panel needs at least 100 draws, got {inner_mc}"
            )));
        }
        if !(inversion_tol > 0.0 && inversion_tol <= 1e-3) {
            return Err(Error::InvalidParameter(format!(
                "inversion tolerance must lie in (0, 1e-3], got {inversion_tol}"
            )));
        }
        self.inner_mc = inner_mc;
        self.inversion_tol = inversion_tol;
        Ok(self)
    }

    /// Install a closed-form transform used in place of the numerical chain.
    pub fn with_analytic_override(mut self, transform: AnalyticTransform) -> Self {
        self.analytic_override = Some(transform);
        self
    }

    pub fn effective_weight(&self) -> &EffectiveWeight {
        &self.ew
    }

    pub fn subset(&self) -> &SubsetSpec {
        &self.subset
    }

    pub fn inner_mc(&self) -> usize {
        self.inner_mc
    }

    pub fn inversion_tol(&self) -> f64 {
        self.inversion_tol
    }

    pub fn has_analytic_override(&self) -> bool {
        self.analytic_override.is_some()
    }

    /// Joint conditional CDF of the free coordinates on the uniform scale,
    /// evaluated at per-coordinate levels. Estimated as the ratio of two
    /// panel means sharing one uniform panel (the numerator panel is the
    /// denominator panel shrunk into the level box), times the level product.
    pub fn conditional_cdf_w(&self, x_u: &[f64], levels: &[f64], key: StreamKey) -> Result<f64> {
        let pi = self.subset.pi();
        self.check_conditioning(x_u)?;
        if levels.len() != pi.len() {
            return Err(Error::DimensionMismatch { expected: pi.len(), got: levels.len() });
        }
        if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidParameter(format!("levels {levels:?} must lie in [0, 1]")));
        }
        if levels.contains(&0.0) {
            return Ok(0.0);
        }
        if pi.is_empty() {
            // Nothing left to integrate: the CDF of an empty coordinate set
            // is one, provided the conditioning point itself carries weight.
            if self.ew.eval(x_u)? == 0.0 {
                return Err(Error::ZeroDenominator(format!(
                    "conditioning point {x_u:?} carries no weight"
                )));
            }
            return Ok(1.0);
        }
        let space = self.ew.space();
        let n = self.inner_mc;
        let mut panel = vec![0.0; n * pi.len()];
        iid_uniforms(&mut panel, key.child(0xCDF));
        let mut scaled = self.template(x_u);
        let mut plain = scaled.clone();
        let mut num = 0.0;
        let mut den = 0.0;
        for row in panel.chunks_exact(pi.len().max(1)).take(n) {
            for (k, j) in pi.iter().enumerate() {
                let m = space.marginal(*j);
                scaled[*j] = m.quantile(levels[k] * row[k])?;
                plain[*j] = m.quantile(row[k])?;
            }
            num += self.ew.eval(&scaled)?;
            den += self.ew.eval(&plain)?;
        }
        if den == 0.0 {
            return Err(Error::ZeroDenominator(format!(
                "conditioning point {x_u:?} carries no weight over {n} draws"
            )));
        }
        let product: f64 = levels.iter().product();
        Ok((num / den * product).clamp(0.0, 1.0))
    }

    /// Level of the k-th walk coordinate whose conditional CDF equals `p`,
    /// given the conditioned values and the earlier walk coordinates (on the
    /// uniform scale). The empirical CDF comes from one weighted panel over
    /// a midpoint grid with mirrored trailing uniforms, so it is monotone by
    /// construction and the inversion is exact for the interpolated curve.
    pub fn conditional_quantile(
        &self,
        k: usize,
        x_u: &[f64],
        z_prev: &[f64],
        p: f64,
        key: StreamKey,
    ) -> Result<f64> {
        self.check_conditioning(x_u)?;
        let q = self.subset.free_len();
        if k >= q {
            return Err(Error::InvalidParameter(format!(
                "walk position {k} out of range for {q} free coordinates"
            )));
        }
        if z_prev.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: z_prev.len() });
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("target level must lie in (0, 1), got {p}")));
        }
        if let Some(tables) = &self.tables {
            // Separable weight: the conditional is the reweighted marginal.
            return Ok(tables[self.subset.pi()[k]].quantile(p));
        }
        let weights = self.step_panel(x_u, z_prev, k, key)?;
        let cdf = PanelCdf::from_weights(&weights).ok_or_else(|| Error::NonBracketing {
            level: p,
            message: format!(
                "all {} panel draws carry zero weight at conditioning point {x_u:?}",
                self.inner_mc
            ),
        })?;
        Ok(cdf.quantile(p))
    }

    /// True when the conditional law of the free coordinates does not depend
    /// on the conditioned values (constant or separable effective weight
    /// without a closed-form override). Estimation engines use this to share
    /// inner draw panels across conditioning points.
    pub fn conditioning_free(&self) -> bool {
        self.analytic_override.is_none() && (self.ew.is_constant() || self.tables.is_some())
    }

    /// Map uniforms (in walk order) to the free coordinates (ascending index
    /// order) of a draw from the conditional weighted law at `x_u`.
    pub fn dependency_transform(
        &self,
        x_u: &[f64],
        uniforms: &[f64],
        key: StreamKey,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.subset.free_len()];
        self.transform_into(x_u, uniforms, key, &mut out)?;
        Ok(out)
    }

    /// Allocation-free core of [`Self::dependency_transform`]: writes the
    /// free coordinates (ascending index order) into `out`.
    pub fn transform_into(
        &self,
        x_u: &[f64],
        uniforms: &[f64],
        key: StreamKey,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_conditioning(x_u)?;
        let pi = self.subset.pi();
        if uniforms.len() != pi.len() {
            return Err(Error::DimensionMismatch { expected: pi.len(), got: uniforms.len() });
        }
        if out.len() != pi.len() {
            return Err(Error::DimensionMismatch { expected: pi.len(), got: out.len() });
        }
        if uniforms.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "transform uniforms must lie strictly inside (0, 1), got {uniforms:?}"
            )));
        }
        if let Some(transform) = &self.analytic_override {
            let values = transform(x_u, uniforms)?;
            if values.len() != out.len() {
                return Err(Error::DimensionMismatch { expected: out.len(), got: values.len() });
            }
            out.copy_from_slice(&values);
            return Ok(());
        }
        let space = self.ew.space();
        if self.ew.is_constant() {
            // Independence: componentwise quantile mapping, exactly.
            for (k, j) in pi.iter().enumerate() {
                out[self.subset.pi_rank[k]] = space.marginal(*j).quantile(uniforms[k])?;
            }
            return Ok(());
        }
        if let Some(tables) = &self.tables {
            for (k, j) in pi.iter().enumerate() {
                let z = tables[*j].quantile(uniforms[k]);
                out[self.subset.pi_rank[k]] = space.marginal(*j).quantile(z)?;
            }
            return Ok(());
        }
        let mut z_prev = Vec::with_capacity(pi.len());
        for k in 0..pi.len() {
            let z = self.conditional_quantile(k, x_u, &z_prev, uniforms[k], key.child(k as u64))?;
            out[self.subset.pi_rank[k]] = space.marginal(pi[k]).quantile(z)?;
            z_prev.push(z);
        }
        Ok(())
    }

    /// Apply the dependency transform to many uniform rows. Rows use
    /// index-derived streams, so the result does not depend on the number of
    /// worker threads.
    pub fn transform_batch(
        &self,
        x_u: &[f64],
        rows: &[Vec<f64>],
        key: StreamKey,
    ) -> Result<Vec<Vec<f64>>> {
        rows.par_iter()
            .enumerate()
            .map(|(i, row)| self.dependency_transform(x_u, row, key.child(i as u64)))
            .collect()
    }

    /// Draw `n` points of the weighted law. Requires an unconditioned
    /// subset. Strategy order: closed-form override, separable fast path,
    /// accept-reject when a weight bound exists, then the sequential
    /// numerical transform.
    pub fn sample_target(&self, n: usize, key: StreamKey) -> Result<Vec<Vec<f64>>> {
        self.check_unconditioned(n)?;
        let direct = self.analytic_override.is_some() || self.ew.is_constant() || self.tables.is_some();
        if !direct && self.ew.upper_bound().is_some() {
            return self.sample_via_rejection(n, key);
        }
        self.sample_via_transform(n, key)
    }

    /// Draw `n` points through the dependency transform (whatever transform
    /// path the model resolves to).
    pub fn sample_via_transform(&self, n: usize, key: StreamKey) -> Result<Vec<Vec<f64>>> {
        self.check_unconditioned(n)?;
        let d = self.subset.dim();
        let mut uniforms = vec![0.0; n * d];
        iid_uniforms(&mut uniforms, key.child(0x5EED));
        let rows: Vec<Vec<f64>> = uniforms
            .chunks_exact(d)
            .map(|row| {
                row.iter()
                    .map(|v| v.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
                    .collect()
            })
            .collect();
        self.transform_batch(&[], &rows, key.child(0x7F))
    }

    /// Draw `n` points by accept-reject from the independent law, using the
    /// known bound on the effective weight. Indicator weights under the
    /// independence copula accept deterministically on nonzero weight;
    /// otherwise acceptance is proportional to the weight.
    pub fn sample_via_rejection(&self, n: usize, key: StreamKey) -> Result<Vec<Vec<f64>>> {
        self.check_unconditioned(n)?;
        let bound = self.ew.upper_bound().ok_or_else(|| {
            Error::InvalidParameter("accept-reject needs a weight with a known upper bound".into())
        })?;
        let space = self.ew.space();
        let pilot = space.draw(STARVATION_PILOT, key.child(1));
        let mut pilot_sum = 0.0;
        for x in &pilot {
            pilot_sum += self.ew.eval(x)?;
        }
        let rate = pilot_sum / STARVATION_PILOT as f64 / bound;
        if rate < STARVATION_FLOOR {
            return Err(Error::RejectionStarvation {
                rate,
                floor: STARVATION_FLOOR,
                pilot: STARVATION_PILOT,
            });
        }
        let deterministic =
            self.ew.weight().is_indicator() && space.copula().is_independence();
        let mut accept_rng = key.child(2).rng();
        let mut out = Vec::with_capacity(n);
        let chunk = n.clamp(1024, 1 << 16);
        let budget = ((n as f64 / rate) * 8.0) as usize + 100_000;
        let mut proposed = 0usize;
        let mut chunk_idx = 3u64;
        while out.len() < n {
            if proposed > budget {
                return Err(Error::Domain(format!(
                    "accept-reject exceeded its proposal budget ({budget}) at acceptance rate {rate:.3e}"
                )));
            }
            for x in space.draw(chunk, key.child(chunk_idx)) {
                proposed += 1;
                let w = self.ew.eval(&x)?;
                let accept = if deterministic {
                    w > 0.0
                } else {
                    rand::Rng::gen::<f64>(&mut accept_rng) * bound < w
                };
                if accept {
                    out.push(x);
                    if out.len() == n {
                        break;
                    }
                }
            }
            chunk_idx += 1;
        }
        Ok(out)
    }

    fn check_conditioning(&self, x_u: &[f64]) -> Result<()> {
        if x_u.len() != self.subset.u().len() {
            return Err(Error::DimensionMismatch {
                expected: self.subset.u().len(),
                got: x_u.len(),
            });
        }
        Ok(())
    }

    fn check_unconditioned(&self, n: usize) -> Result<()> {
        if !self.subset.u().is_empty() {
            return Err(Error::InvalidParameter(
                "target sampling needs an unconditioned subset".into(),
            ));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        Ok(())
    }

    /// Full point with the conditioned values in place and zeros elsewhere.
    fn template(&self, x_u: &[f64]) -> Vec<f64> {
        let mut point = vec![0.0; self.subset.dim()];
        for (slot, v) in self.subset.u().iter().zip(x_u) {
            point[*slot] = *v;
        }
        point
    }

    /// Weighted panel for the k-th walk step: coordinate pi[k] sweeps a
    /// midpoint grid, trailing free coordinates get uniforms mirrored about
    /// the panel center so palindromic weights give exactly symmetric mass.
    fn step_panel(&self, x_u: &[f64], z_prev: &[f64], k: usize, key: StreamKey) -> Result<Vec<f64>> {
        let space = self.ew.space();
        let pi = self.subset.pi();
        let n = self.inner_mc;
        let trailing = pi.len() - k - 1;
        let half = n.div_ceil(2);
        let mut v = vec![0.0; half * trailing];
        iid_uniforms(&mut v, key.child(0x7A11));
        let mut point = self.template(x_u);
        for (pos, z) in z_prev.iter().enumerate() {
            point[pi[pos]] = space.marginal(pi[pos]).quantile(*z)?;
        }
        let mut weights = vec![0.0; n];
        for (i, w) in weights.iter_mut().enumerate() {
            let t = (i as f64 + 0.5) / n as f64;
            point[pi[k]] = space.marginal(pi[k]).quantile(t)?;
            let vi = if i < half { i } else { n - 1 - i };
            for (offset, j) in pi[k + 1..].iter().enumerate() {
                point[*j] = space.marginal(*j).quantile(v[vi * trailing + offset])?;
            }
            *w = self.ew.eval(&point)?;
        }
        Ok(weights)
    }
}

fn build_product_tables(ew: &EffectiveWeight) -> Result<Option<Arc<Vec<PanelCdf>>>> {
    if ew.is_constant() {
        return Ok(None);
    }
    let Some(factors) = ew.coordinate_factors() else {
        return Ok(None);
    };
    let space = ew.space();
    let mut tables = Vec::with_capacity(space.dim());
    for (j, factor) in factors.iter().enumerate() {
        let mut w = vec![0.0; PRODUCT_GRID];
        for (i, slot) in w.iter_mut().enumerate() {
            let t = (i as f64 + 0.5) / PRODUCT_GRID as f64;
            let value = factor(space.marginal(j).quantile(t)?);
            if !value.is_finite() || value < 0.0 {
                return Err(Error::NonFinite(format!(
                    "coordinate {j} weight factor produced {value} on the quantile grid"
                )));
            }
            *slot = value;
        }
        let cdf = PanelCdf::from_weights(&w).ok_or_else(|| {
            Error::DegenerateWeight(format!("coordinate {j} weight factor integrates to zero"))
        })?;
        tables.push(cdf);
    }
    Ok(Some(Arc::new(tables)))
}

/// Closed-form conditional transform for the uniform law on the centered
/// ball of squared radius `c`: valid when symmetric marginals carry the
/// squared-norm indicator, so the weighted law is exactly uniform on the
/// ball. With `r` coordinates left, the squared current coordinate is a
/// Beta(1/2, (r+1)/2) fraction of the remaining squared radius, and the sign
/// comes from the same uniform, keeping the map monotone per coordinate.
pub fn uniform_ball_transform(c: f64, subset: &SubsetSpec) -> Result<AnalyticTransform> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ball squared radius must be positive and finite, got {c}"
        )));
    }
    let sub = subset.clone();
    Ok(Arc::new(move |x_u: &[f64], uniforms: &[f64]| {
        if x_u.len() != sub.u().len() {
            return Err(Error::DimensionMismatch { expected: sub.u().len(), got: x_u.len() });
        }
        if uniforms.len() != sub.pi().len() {
            return Err(Error::DimensionMismatch { expected: sub.pi().len(), got: uniforms.len() });
        }
        let mut rho2 = c - x_u.iter().map(|x| x * x).sum::<f64>();
        if rho2 <= 0.0 {
            return Err(Error::Domain(format!(
                "conditioning point {x_u:?} lies outside the ball of squared radius {c}"
            )));
        }
        let m = uniforms.len();
        let mut out = vec![0.0; m];
        for (k, uk) in uniforms.iter().enumerate() {
            let remaining = (m - k) as f64;
            let p = (2.0 * uk - 1.0).abs();
            let z = inv_reg_inc_beta(0.5, (remaining + 1.0) / 2.0, p);
            let x = (uk - 0.5).signum() * (z * rho2).sqrt();
            out[sub.pi_rank[k]] = x;
            rho2 = (rho2 - x * x).max(0.0);
        }
        Ok(out)
    }))
}

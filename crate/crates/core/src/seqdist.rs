//! Distances between segment sequences: the fused-cost OT distance and the
//! two baselines it is compared against (mean pooling and DTW alignment).

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::costs::{euclidean, fused_cost, positional_cost, semantic_cost, FusionConfig, PositionalConfig, SegmentSequence};
use crate::error::{shape_mismatch, Error, Result};
use crate::ot::{sinkhorn_solve, value_gradient_wrt_cost, CostMatrix, Marginal, SinkhornConfig, SinkhornResult};

/// Largest sequence length accepted by [`dtw_exhaustive`].
pub const DTW_EXHAUSTIVE_MAX: usize = 6;

/// Medians below this are treated as degenerate by the median heuristic.
const DEGENERATE_MEDIAN: f64 = 1e-12;

/// How the Sinkhorn smoothing parameter is chosen for each pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed(f64),
    /// `lambda = multiplier / median(C)` on the fused matrix of each pair.
    MedianHeuristic { multiplier: f64 },
}

impl Default for LambdaRule {
    fn default() -> Self {
        Self::MedianHeuristic { multiplier: 7.0 }
    }
}

impl LambdaRule {
    pub fn resolve(&self, cost: &CostMatrix) -> f64 {
        match *self {
            Self::Fixed(lambda) => lambda,
            Self::MedianHeuristic { multiplier } => {
                let median = cost.median();
                if median <= DEGENERATE_MEDIAN {
                    log::debug!("median cost {median} is degenerate; using lambda = {multiplier}");
                    multiplier
                } else {
                    multiplier / median
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceConfig {
    pub fusion: FusionConfig,
    pub positional: PositionalConfig,
    pub lambda: LambdaRule,
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub log_domain: bool,
    /// `None` means uniform over the segments of the first sequence.
    pub marginal_a: Option<Marginal>,
    /// `None` means uniform over the segments of the second sequence.
    pub marginal_b: Option<Marginal>,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        let solver = SinkhornConfig::default();
        Self {
            fusion: FusionConfig::default(),
            positional: PositionalConfig::default(),
            lambda: LambdaRule::default(),
            max_iterations: solver.max_iterations,
            residual_tolerance: solver.residual_tolerance,
            log_domain: solver.log_domain,
            marginal_a: None,
            marginal_b: None,
        }
    }
}

impl DistanceConfig {
    pub fn sinkhorn_for(&self, cost: &CostMatrix) -> SinkhornConfig {
        SinkhornConfig {
            lambda: self.lambda.resolve(cost),
            max_iterations: self.max_iterations,
            residual_tolerance: self.residual_tolerance,
            log_domain: self.log_domain,
        }
    }

    fn marginals(&self, a: &SegmentSequence, b: &SegmentSequence) -> Result<(Marginal, Marginal)> {
        let pick = |m: &Option<Marginal>, len: usize| match m {
            Some(m) if m.len() != len => Err(shape_mismatch("distance marginal", len, m.len())),
            Some(m) => Ok(m.clone()),
            None => Marginal::uniform(len),
        };
        Ok((pick(&self.marginal_a, a.len())?, pick(&self.marginal_b, b.len())?))
    }

    /// `C_se + alpha * C_po` for the pair.
    pub fn fused_cost(&self, a: &SegmentSequence, b: &SegmentSequence) -> Result<CostMatrix> {
        let se = semantic_cost(a, b)?;
        let po = positional_cost(a.len(), b.len(), &self.positional, a.dim())?;
        fused_cost(&se, &po, &self.fusion)
    }
}

/// Outcome of one fused-cost OT distance evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct CmotDistance {
    pub value: f64,
    pub lambda: f64,
    pub cost: CostMatrix,
    pub solve: SinkhornResult,
    /// Multiplier of the median heuristic, when it chose `lambda`.
    pub median_multiplier: Option<f64>,
}

/// Fused semantic + positional OT distance.
///
/// The fused matrix is transported as a single problem; in general this is
/// not the weighted sum of separately solved semantic and positional
/// distances.
pub fn cmot_distance(a: &SegmentSequence, b: &SegmentSequence, cfg: &DistanceConfig) -> Result<CmotDistance> {
    let cost = cfg.fused_cost(a, b)?;
    let (mu, nu) = cfg.marginals(a, b)?;
    let solver = cfg.sinkhorn_for(&cost);
    let solve = sinkhorn_solve(&cost, &mu, &nu, &solver)?;
    let median_multiplier = match cfg.lambda {
        LambdaRule::MedianHeuristic { multiplier } if cost.median() > DEGENERATE_MEDIAN => Some(multiplier),
        _ => None,
    };
    Ok(CmotDistance { value: solve.value, lambda: solver.lambda, cost, solve, median_multiplier })
}

impl CmotDistance {
    pub fn plan(&self) -> &crate::ot::TransportPlan {
        &self.solve.plan
    }

    /// Total derivative of the distance with respect to the fused cost matrix.
    ///
    /// With a fixed `lambda` this is the optimal plan. Under the median
    /// heuristic `lambda` itself depends on the median entries of `C`; since
    /// `d value / d lambda = H(T*) / lambda^2`, the chain rule adds
    /// `-(H / multiplier) * d median / d C`.
    pub fn cost_gradient(&self) -> Array2<f64> {
        let mut grad = value_gradient_wrt_cost(&self.solve);
        if let Some(multiplier) = self.median_multiplier {
            let scale = -self.solve.entropy / multiplier;
            for (idx, weight) in median_weights(self.cost.entries()) {
                grad[idx] += scale * weight;
            }
        }
        grad
    }
}

/// Entries that determine the median and their share in it.
fn median_weights(c: &Array2<f64>) -> Vec<((usize, usize), f64)> {
    let mut cells: Vec<((usize, usize), f64)> = c.indexed_iter().map(|(i, v)| (i, *v)).collect();
    cells.sort_by(|x, y| x.1.total_cmp(&y.1));
    let n = cells.len();
    if n % 2 == 1 {
        vec![(cells[n / 2].0, 1.0)]
    } else {
        vec![(cells[n / 2 - 1].0, 0.5), (cells[n / 2].0, 0.5)]
    }
}

/// `|mean(a) - mean(b)|_2`, the order-blind pooling baseline.
pub fn agg_distance(a: &SegmentSequence, b: &SegmentSequence) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape_mismatch("agg_distance (embedding dim)", a.dim(), b.dim()));
    }
    Ok(euclidean(a.mean().view(), b.mean().view()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DtwAlignment {
    pub cost: f64,
    /// Zero-based `(row, col)` cells from `(0, 0)` to `(M1 - 1, M2 - 1)`.
    pub path: Vec<(usize, usize)>,
}

/// Classic DTW on the semantic cost with steps `(1,0)`, `(0,1)`, `(1,1)`.
///
/// Backtracking prefers the diagonal step, then the row advance.
pub fn dtw_distance(a: &SegmentSequence, b: &SegmentSequence) -> Result<DtwAlignment> {
    let c = semantic_cost(a, b)?;
    let c = c.entries();
    let (m1, m2) = c.dim();
    let mut acc = Array2::<f64>::from_elem((m1, m2), f64::INFINITY);
    for i in 0..m1 {
        for j in 0..m2 {
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[[i - 1, j - 1]] } else { f64::INFINITY };
                let up = if i > 0 { acc[[i - 1, j]] } else { f64::INFINITY };
                let left = if j > 0 { acc[[i, j - 1]] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[[i, j]] = best_prev + c[[i, j]];
        }
    }

    let mut path = vec![(m1 - 1, m2 - 1)];
    let (mut i, mut j) = (m1 - 1, m2 - 1);
    while (i, j) != (0, 0) {
        let mut best = (f64::INFINITY, (i, j));
        let candidates = [
            (i > 0 && j > 0).then(|| (i - 1, j - 1)),
            (i > 0).then(|| (i - 1, j)),
            (j > 0).then(|| (i, j - 1)),
        ];
        for cell in candidates.into_iter().flatten() {
            if acc[cell] < best.0 {
                best = (acc[cell], cell);
            }
        }
        (i, j) = best.1;
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwAlignment { cost: acc[[m1 - 1, m2 - 1]], path })
}

/// Minimum DTW cost by enumerating every monotone boundary-to-boundary path.
pub fn dtw_exhaustive(a: &SegmentSequence, b: &SegmentSequence) -> Result<f64> {
    for len in [a.len(), b.len()] {
        if len > DTW_EXHAUSTIVE_MAX {
            return Err(Error::TooLarge { what: "exhaustive DTW sequence", size: len, max: DTW_EXHAUSTIVE_MAX });
        }
    }
    let c = semantic_cost(a, b)?;
    let c = c.entries();
    let end = (a.len() - 1, b.len() - 1);

    fn walk(c: &Array2<f64>, cell: (usize, usize), end: (usize, usize), so_far: f64, best: &mut f64) {
        let total = so_far + c[cell];
        if cell == end {
            *best = best.min(total);
            return;
        }
        let (i, j) = cell;
        if i < end.0 && j < end.1 {
            walk(c, (i + 1, j + 1), end, total, best);
        }
        if i < end.0 {
            walk(c, (i + 1, j), end, total, best);
        }
        if j < end.1 {
            walk(c, (i, j + 1), end, total, best);
        }
    }

    let mut best = f64::INFINITY;
    walk(c, (0, 0), end, 0.0, &mut best);
    Ok(best)
}

/// A sequence distance usable by the few-shot protocol.
pub trait SequenceMetric: Sync {
    fn name(&self) -> &str;
    fn distance(&self, a: &SegmentSequence, b: &SegmentSequence) -> Result<f64>;
}

/// [`cmot_distance`] as a metric, counting solves that hit the iteration cap.
#[derive(Debug, Default)]
pub struct CmotMetric {
    pub config: DistanceConfig,
    solves: AtomicUsize,
    nonconverged: AtomicUsize,
}

impl CmotMetric {
    pub fn new(config: DistanceConfig) -> Self {
        Self { config, solves: AtomicUsize::new(0), nonconverged: AtomicUsize::new(0) }
    }

    /// `(solves, non-converged solves)` since construction.
    pub fn convergence_stats(&self) -> (usize, usize) {
        (self.solves.load(Ordering::Relaxed), self.nonconverged.load(Ordering::Relaxed))
    }
}

impl SequenceMetric for CmotMetric {
    fn name(&self) -> &str {
        "cmot"
    }

    fn distance(&self, a: &SegmentSequence, b: &SegmentSequence) -> Result<f64> {
        let d = cmot_distance(a, b, &self.config)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        if !d.solve.converged {
            self.nonconverged.fetch_add(1, Ordering::Relaxed);
        }
        Ok(d.value)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AggMetric;

impl SequenceMetric for AggMetric {
    fn name(&self) -> &str {
        "agg"
    }

    fn distance(&self, a: &SegmentSequence, b: &SegmentSequence) -> Result<f64> {
        agg_distance(a, b)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DtwMetric;

impl SequenceMetric for DtwMetric {
    fn name(&self) -> &str {
        "dtw"
    }

    fn distance(&self, a: &SegmentSequence, b: &SegmentSequence) -> Result<f64> {
        dtw_distance(a, b).map(|d| d.cost)
    }
}

/// Wraps a closure as a named metric.
pub struct FnMetric<F> {
    name: String,
    f: F,
}

impl<F> FnMetric<F>
where
    F: Fn(&SegmentSequence, &SegmentSequence) -> f64 + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> SequenceMetric for FnMetric<F>
where
    F: Fn(&SegmentSequence, &SegmentSequence) -> f64 + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn distance(&self, a: &SegmentSequence, b: &SegmentSequence) -> Result<f64> {
        Ok((self.f)(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{exact_ot_uniform, sinkhorn_distance};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: Vec<Vec<f64>>) -> SegmentSequence {
        SegmentSequence::from_rows(rows).unwrap()
    }

    fn random_seq(rng: &mut ChaCha8Rng, m: usize, d: usize) -> SegmentSequence {
        SegmentSequence::new(Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn cmot_zero_cost_is_max_entropy() {
        let a = seq(vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
        let cfg = DistanceConfig { fusion: FusionConfig { alpha: 0.0 }, lambda: LambdaRule::Fixed(1.0), ..Default::default() };
        let d = cmot_distance(&a, &a, &cfg).unwrap();
        assert!((d.value + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cmot_is_symmetric_and_bounded_by_exact_ot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_seq(&mut rng, 3, 4);
            let b = random_seq(&mut rng, 3, 4);
            let cfg = DistanceConfig::default();
            let ab = cmot_distance(&a, &b, &cfg).unwrap();
            let ba = cmot_distance(&b, &a, &cfg).unwrap();
            assert!((ab.value - ba.value).abs() < 1e-9, "{} vs {}", ab.value, ba.value);
            let (exact, _) = exact_ot_uniform(&ab.cost).unwrap();
            assert!(ab.solve.linear_cost >= exact - 1e-12);
        }
    }

    #[test]
    fn alpha_zero_reduces_to_semantic_sinkhorn() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_seq(&mut rng, 4, 3);
        let b = random_seq(&mut rng, 5, 3);
        let cfg = DistanceConfig { fusion: FusionConfig { alpha: 0.0 }, ..Default::default() };
        let d = cmot_distance(&a, &b, &cfg).unwrap();
        let se = semantic_cost(&a, &b).unwrap();
        let direct = sinkhorn_distance(
            &se,
            &Marginal::uniform(4).unwrap(),
            &Marginal::uniform(5).unwrap(),
            &cfg.sinkhorn_for(&se),
        )
        .unwrap();
        assert_eq!(d.value, direct);
    }

    #[test]
    fn marginal_length_is_checked() {
        let a = seq(vec![vec![0.0], vec![1.0]]);
        let cfg = DistanceConfig { marginal_a: Some(Marginal::uniform(3).unwrap()), ..Default::default() };
        assert!(matches!(cmot_distance(&a, &a, &cfg), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn median_heuristic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = Array2::from_shape_fn((3, 4), |_| rng.random_range(0.1..2.0));
        let mu = Marginal::uniform(3).unwrap();
        let nu = Marginal::uniform(4).unwrap();
        let rule = LambdaRule::MedianHeuristic { multiplier: 7.0 };
        let solver = |c: &Array2<f64>| {
            let cost = CostMatrix::new(c.clone()).unwrap();
            let cfg = SinkhornConfig { lambda: rule.resolve(&cost), residual_tolerance: 1e-14, ..Default::default() };
            (cost.clone(), sinkhorn_solve(&cost, &mu, &nu, &cfg).unwrap())
        };
        let (cost, solve) = solver(&c);
        let d = CmotDistance { value: solve.value, lambda: solve.lambda, cost, solve, median_multiplier: Some(7.0) };
        let grad = d.cost_gradient();
        let h = 1e-6;
        for idx in [(0, 0), (1, 2), (2, 3)] {
            let mut plus = c.clone();
            plus[idx] += h;
            let mut minus = c.clone();
            minus[idx] -= h;
            let fd = (solver(&plus).1.value - solver(&minus).1.value) / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-5, "{idx:?}: fd {fd} analytic {}", grad[idx]);
        }
        // Also probe the median entries themselves.
        for (idx, _) in median_weights(&c) {
            let mut plus = c.clone();
            plus[idx] += h;
            let mut minus = c.clone();
            minus[idx] -= h;
            let fd = (solver(&plus).1.value - solver(&minus).1.value) / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-5, "median {idx:?}: fd {fd} analytic {}", grad[idx]);
        }
    }

    #[test]
    fn agg_examples() {
        let a = seq(vec![vec![0.0, 0.0]]);
        let b = seq(vec![vec![3.0, 4.0]]);
        assert_eq!(agg_distance(&a, &b).unwrap(), 5.0);
        let a = seq(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = seq(vec![vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(agg_distance(&a, &b).unwrap(), 0.0);
        assert!(agg_distance(&a, &seq(vec![vec![1.0]])).is_err());
    }

    #[test]
    fn dtw_identical_is_zero_on_diagonal() {
        let a = seq(vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, 1.0]]);
        let d = dtw_distance(&a, &a).unwrap();
        assert_eq!(d.cost, 0.0);
        assert_eq!(d.path, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(dtw_exhaustive(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn dtw_single_segments_and_single_row() {
        let a = seq(vec![vec![0.0, 0.0]]);
        let b = seq(vec![vec![3.0, 4.0]]);
        assert_eq!(dtw_distance(&a, &b).unwrap().cost, 5.0);

        let row = seq(vec![vec![0.0]]);
        let long = seq(vec![vec![1.0], vec![2.0], vec![-3.0]]);
        assert_eq!(dtw_exhaustive(&row, &long).unwrap(), 6.0);
        let d = dtw_distance(&row, &long).unwrap();
        assert_eq!(d.cost, 6.0);
        assert_eq!(d.path, vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn dtw_tie_prefers_diagonal_then_row_advance() {
        // All-equal segments: every path costs 0, so the diagonal must win.
        let a = seq(vec![vec![1.0]; 3]);
        let b = seq(vec![vec![1.0]; 2]);
        let d = dtw_distance(&a, &b).unwrap();
        assert_eq!(d.path, vec![(0, 0), (1, 0), (2, 1)]);
    }

    #[test]
    fn dtw_matches_exhaustive_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let (m1, m2) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let a = random_seq(&mut rng, m1, 3);
            let b = random_seq(&mut rng, m2, 3);
            let dp = dtw_distance(&a, &b).unwrap();
            assert!((dp.cost - dtw_exhaustive(&a, &b).unwrap()).abs() < 1e-12);
            assert!((dtw_distance(&b, &a).unwrap().cost - dp.cost).abs() < 1e-12);
            let on_path: f64 = dp.path.iter().map(|&(i, j)| euclidean(a.segment(i), b.segment(j))).sum();
            assert!((on_path - dp.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn dtw_exhaustive_rejects_long_sequences() {
        let a = seq(vec![vec![0.0]; 7]);
        assert!(matches!(dtw_exhaustive(&a, &a), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn ordering_sensitivity_of_baselines() {
        let a = seq(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]);
        let r = a.reversed();
        assert!(dtw_distance(&a, &r).unwrap().cost > 0.0);
        assert_eq!(agg_distance(&a, &r).unwrap(), 0.0);
    }

    #[test]
    fn cmot_metric_counts_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_seq(&mut rng, 4, 2);
        let b = random_seq(&mut rng, 4, 2);
        let strict = DistanceConfig { max_iterations: 1, residual_tolerance: 1e-15, ..Default::default() };
        let metric = CmotMetric::new(strict);
        metric.distance(&a, &b).unwrap();
        metric.distance(&b, &a).unwrap();
        assert_eq!(metric.convergence_stats(), (2, 2));
        assert_eq!(metric.name(), "cmot");
    }
}

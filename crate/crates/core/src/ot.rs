//! Entropy-regularized optimal transport between discrete marginals.
//!
//! The solver minimizes `<T, C> - (1/lambda) H(T)` over the transport
//! polytope `{T >= 0 : T 1 = mu, T^T 1 = nu}` by alternating diagonal
//! scalings of the Gibbs kernel `G = exp(-lambda C)`:
//!
//! ```text
//! u <- mu / (G v)
//! v <- nu / (G^T u)
//! T* = diag(u) G diag(v)
//! ```
//!
//! A log-domain variant runs the same fixed point on `log u`, `log v` with
//! log-sum-exp reductions. It is selected automatically when the kernel
//! underflows, or forced through [`SinkhornConfig::log_domain`].

use itertools::Itertools;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};

/// Kernel entries below this trigger the log-domain solver.
pub const KERNEL_UNDERFLOW: f64 = 1e-300;

/// Largest square size accepted by [`exact_ot_uniform`].
pub const EXACT_OT_MAX: usize = 8;

const MASS_TOLERANCE: f64 = 1e-12;

/// A probability vector over the segments of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Marginal(Array1<f64>);

impl Marginal {
    pub fn new(weights: impl Into<Array1<f64>>) -> Result<Self> {
        let weights = weights.into();
        if weights.is_empty() {
            return Err(Error::InvalidMarginal("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidMarginal(format!("entry {w} is negative or non-finite")));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMarginal(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidMarginal("uniform marginal of length 0".into()));
        }
        Ok(Self(Array1::from_elem(len, 1.0 / len as f64)))
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Marginal {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(v))
    }
}

impl From<Marginal> for Vec<f64> {
    fn from(m: Marginal) -> Self {
        m.0.to_vec()
    }
}

/// Nonnegative, finite matrix of pairwise transport costs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidCost("empty matrix".into()));
        }
        if let Some(c) = entries.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidCost(format!("entry {c} is negative or non-finite")));
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows_to_array(rows).map_err(Error::InvalidCost)?)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn transposed(&self) -> Self {
        Self(self.0.t().to_owned())
    }

    pub fn median(&self) -> f64 {
        let sorted = self.0.iter().copied().sorted_by(f64::total_cmp).collect_vec();
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        }
    }
}

impl<'de> Deserialize<'de> for CostMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Self::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

impl From<CostMatrix> for Vec<Vec<f64>> {
    fn from(c: CostMatrix) -> Self {
        array_to_rows(&c.0)
    }
}

/// A coupling between two marginals: entries are transported mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct TransportPlan(Array2<f64>);

impl TransportPlan {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(t) = entries.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::InvalidPlan(format!("entry {t} is negative or non-finite")));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(0))
    }

    pub fn total_mass(&self) -> f64 {
        self.0.sum()
    }

    /// Mass on the main diagonal, `sum_p T[p, p]`.
    pub fn diagonal_mass(&self) -> f64 {
        self.0.diag().sum()
    }

    /// `max(|T 1 - mu|_1, |T^T 1 - nu|_1)`.
    pub fn marginal_residual(&self, mu: &Marginal, nu: &Marginal) -> f64 {
        let rows = l1_gap(&self.row_sums(), mu.weights());
        let cols = l1_gap(&self.col_sums(), nu.weights());
        rows.max(cols)
    }
}

impl From<TransportPlan> for Vec<Vec<f64>> {
    fn from(t: TransportPlan) -> Self {
        array_to_rows(&t.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Inverse regularization strength; the entropy enters as `-(1/lambda) H(T)`.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop once the L1 marginal violation drops to this value.
    pub residual_tolerance: f64,
    /// Force the log-sum-exp solver even when the plain kernel is representable.
    pub log_domain: bool,
}

impl SinkhornConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "residual tolerance must be positive, got {}",
                self.residual_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iterations: 10_000,
            residual_tolerance: 1e-9,
            log_domain: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    /// Entropic objective `<T, C> - (1/lambda) H(T)`.
    pub value: f64,
    /// Linear part `<T, C>`.
    pub linear_cost: f64,
    pub entropy: f64,
    pub lambda: f64,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Whether the log-domain iteration produced this result.
    pub log_domain: bool,
    /// `log u`; kept in log form so it stays finite for large `lambda * C`.
    pub log_scaling_u: Array1<f64>,
    /// `log v`.
    pub log_scaling_v: Array1<f64>,
}

impl SinkhornResult {
    pub fn scaling_u(&self) -> Array1<f64> {
        self.log_scaling_u.mapv(f64::exp)
    }

    pub fn scaling_v(&self) -> Array1<f64> {
        self.log_scaling_v.mapv(f64::exp)
    }
}

/// Solves the entropic OT problem for `cost` between `mu` and `nu`.
///
/// Non-convergence is not an error: the result carries `converged = false`
/// with `iterations_used == max_iterations` and the last residual.
pub fn sinkhorn_solve(
    cost: &CostMatrix,
    mu: &Marginal,
    nu: &Marginal,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    let (m1, m2) = cost.shape();
    if (m1, m2) != (mu.len(), nu.len()) {
        return Err(shape_mismatch("sinkhorn_solve", (mu.len(), nu.len()), (m1, m2)));
    }
    if mu.weights().iter().chain(nu.weights()).any(|w| *w <= 0.0) {
        return Err(Error::InvalidMarginal("Sinkhorn requires strictly positive marginal entries".into()));
    }

    let max_exponent = cost.entries().iter().fold(0.0_f64, |acc, c| acc.max(cfg.lambda * c));
    let underflows = (-max_exponent).exp() < KERNEL_UNDERFLOW;
    if underflows && !cfg.log_domain {
        log::debug!("kernel underflows (max lambda*C = {max_exponent:.1}); switching to log domain");
    }
    let (log_u, log_v, iterations_used, final_residual) = if cfg.log_domain || underflows {
        solve_log_domain(cost, mu, nu, cfg)
    } else {
        solve_plain(cost, mu, nu, cfg)?
    };

    let plan = plan_from_potentials(cost, cfg.lambda, &log_u, &log_v);
    let plan = TransportPlan::new(plan)?;
    let linear_cost = (plan.entries() * cost.entries()).sum();
    let h = entropy(&plan)?;
    Ok(SinkhornResult {
        value: linear_cost - h / cfg.lambda,
        linear_cost,
        entropy: h,
        lambda: cfg.lambda,
        converged: final_residual <= cfg.residual_tolerance,
        iterations_used,
        final_residual,
        log_domain: cfg.log_domain || underflows,
        log_scaling_u: log_u,
        log_scaling_v: log_v,
        plan,
    })
}

/// Entropic OT value, `min_T <T, C> - (1/lambda) H(T)`.
pub fn sinkhorn_distance(
    cost: &CostMatrix,
    mu: &Marginal,
    nu: &Marginal,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    sinkhorn_solve(cost, mu, nu, cfg).map(|r| r.value)
}

type Potentials = (Array1<f64>, Array1<f64>, usize, f64);

fn solve_plain(cost: &CostMatrix, mu: &Marginal, nu: &Marginal, cfg: &SinkhornConfig) -> Result<Potentials> {
    let kernel = cost.entries().mapv(|c| (-cfg.lambda * c).exp());
    let (mu, nu) = (mu.weights(), nu.weights());
    let mut u = Array1::<f64>::ones(mu.len());
    let mut v = Array1::<f64>::ones(nu.len());
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        u = mu / &kernel.dot(&v);
        let ktu = kernel.t().dot(&u);
        v = nu / &ktu;
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { iteration: iterations });
        }
        // Columns are exact after the v-update up to rounding; rows carry the violation.
        let rows = &u * &kernel.dot(&v);
        let cols = &v * &ktu;
        residual = l1_gap(&rows, mu).max(l1_gap(&cols, nu));
        if residual <= cfg.residual_tolerance {
            break;
        }
    }
    Ok((u.mapv(f64::ln), v.mapv(f64::ln), iterations, residual))
}

fn solve_log_domain(cost: &CostMatrix, mu: &Marginal, nu: &Marginal, cfg: &SinkhornConfig) -> Potentials {
    let neg_scaled = cost.entries().mapv(|c| -cfg.lambda * c);
    let (m1, m2) = neg_scaled.dim();
    let log_mu = mu.weights().mapv(f64::ln);
    let log_nu = nu.weights().mapv(f64::ln);
    let mut f = Array1::<f64>::zeros(m1);
    let mut g = Array1::<f64>::zeros(m2);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        for i in 0..m1 {
            f[i] = log_mu[i] - log_sum_exp((0..m2).map(|j| neg_scaled[[i, j]] + g[j]));
        }
        for j in 0..m2 {
            g[j] = log_nu[j] - log_sum_exp((0..m1).map(|i| neg_scaled[[i, j]] + f[i]));
        }
        let plan = plan_from_potentials(cost, cfg.lambda, &f, &g);
        residual = l1_gap(&plan.sum_axis(Axis(1)), mu.weights())
            .max(l1_gap(&plan.sum_axis(Axis(0)), nu.weights()));
        if residual <= cfg.residual_tolerance {
            break;
        }
    }
    (f, g, iterations, residual)
}

fn plan_from_potentials(cost: &CostMatrix, lambda: f64, log_u: &Array1<f64>, log_v: &Array1<f64>) -> Array2<f64> {
    let mut plan = cost.entries().mapv(|c| -lambda * c);
    for ((i, j), t) in plan.indexed_iter_mut() {
        *t = (*t + log_u[i] + log_v[j]).exp();
    }
    plan
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn l1_gap(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Exact OT with uniform marginals on a square cost, by enumerating permutations.
///
/// Vertices of the uniform Birkhoff polytope are scaled permutation matrices,
/// so the minimum of `(1/M) sum_i C[i, sigma(i)]` is the unregularized optimum.
/// Ties resolve to the lexicographically smallest permutation.
pub fn exact_ot_uniform(cost: &CostMatrix) -> Result<(f64, Vec<usize>)> {
    let (m1, m2) = cost.shape();
    if m1 != m2 {
        return Err(shape_mismatch("exact_ot_uniform (square)", (m1, m1), (m1, m2)));
    }
    if m1 > EXACT_OT_MAX {
        return Err(Error::TooLarge { what: "exact OT cost matrix", size: m1, max: EXACT_OT_MAX });
    }
    let c = cost.entries();
    let mut best = (f64::INFINITY, Vec::new());
    // itertools yields permutations of a sorted range in lexicographic order.
    for perm in (0..m1).permutations(m1) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>() / m1 as f64;
        if total < best.0 {
            best = (total, perm);
        }
    }
    Ok(best)
}

/// Shannon entropy `-sum T log T` with `0 log 0 = 0`.
pub fn entropy(plan: &TransportPlan) -> Result<f64> {
    entropy_of(plan.entries())
}

pub(crate) fn entropy_of(entries: &Array2<f64>) -> Result<f64> {
    let mut h = 0.0;
    for &t in entries {
        if t < 0.0 {
            return Err(Error::InvalidPlan(format!("negative entry {t}")));
        }
        if t > 0.0 {
            h -= t * t.ln();
        }
    }
    Ok(h)
}

/// Gradient of the entropic value with respect to the cost matrix.
///
/// At fixed `lambda` the feasible set does not depend on `C` and the objective
/// is linear in `C` for fixed `T`, so the gradient is the optimal plan itself.
pub fn value_gradient_wrt_cost(result: &SinkhornResult) -> Array2<f64> {
    result.plan.entries().clone()
}

pub(crate) fn rows_to_array(rows: Vec<Vec<f64>>) -> std::result::Result<Array2<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err("ragged rows".into());
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(|e| e.to_string())
}

pub(crate) fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn uniform(n: usize) -> Marginal {
        Marginal::uniform(n).unwrap()
    }

    fn cost(rows: Vec<Vec<f64>>) -> CostMatrix {
        CostMatrix::from_rows(rows).unwrap()
    }

    fn three_by_three() -> CostMatrix {
        cost(vec![vec![0.2, 0.9, 0.5], vec![0.7, 0.1, 0.8], vec![0.6, 0.4, 0.3]])
    }

    #[test]
    fn zero_cost_gives_outer_product() {
        let r = sinkhorn_solve(&cost(vec![vec![0.0; 2]; 2]), &uniform(2), &uniform(2), &SinkhornConfig::with_lambda(1.0))
            .unwrap();
        for t in r.plan.entries() {
            assert!((t - 0.25).abs() < 1e-12);
        }
        assert!((r.value + 4f64.ln()).abs() < 1e-12);
        assert_eq!(value_gradient_wrt_cost(&r), Array2::from_elem((2, 2), 0.25));
    }

    #[test]
    fn large_lambda_recovers_identity_matching() {
        let c = cost(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let r = sinkhorn_solve(&c, &uniform(2), &uniform(2), &SinkhornConfig::with_lambda(50.0)).unwrap();
        assert!(r.linear_cost <= 0.01);
        assert!((r.plan.entries()[[0, 0]] - 0.5).abs() < 1e-6);
        assert!((r.plan.entries()[[1, 1]] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn three_by_three_sits_inside_entropic_sandwich() {
        // Six permutations enumerated by hand; the identity wins with (0.2 + 0.1 + 0.3) / 3.
        let exact = 0.2;
        let (oracle, perm) = exact_ot_uniform(&three_by_three()).unwrap();
        assert!((oracle - exact).abs() < 1e-15);
        assert_eq!(perm, vec![0, 1, 2]);

        let lambda = 10.0;
        let r = sinkhorn_solve(&three_by_three(), &uniform(3), &uniform(3), &SinkhornConfig::with_lambda(lambda))
            .unwrap();
        let ln3 = 3f64.ln();
        assert!(r.linear_cost >= exact - 1e-12);
        assert!(r.linear_cost <= exact + 2.0 / lambda * ln3);
        assert!(r.value >= exact - 2.0 / lambda * ln3 - 1e-12);
        assert!(r.value <= exact - ln3 / lambda + 1e-12);
        assert_eq!(
            sinkhorn_distance(&three_by_three(), &uniform(3), &uniform(3), &SinkhornConfig::with_lambda(lambda)).unwrap(),
            r.value
        );
    }

    #[test]
    fn exact_ot_small_cases() {
        assert_eq!(exact_ot_uniform(&cost(vec![vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap(), (0.0, vec![0, 1]));
        assert_eq!(exact_ot_uniform(&cost(vec![vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap(), (0.0, vec![1, 0]));
        // All-zero: every permutation ties, lexicographic first wins.
        assert_eq!(exact_ot_uniform(&cost(vec![vec![0.0; 3]; 3])).unwrap().1, vec![0, 1, 2]);
    }

    #[test]
    fn exact_ot_rejects_large_and_rectangular() {
        let big = CostMatrix::new(Array2::zeros((9, 9))).unwrap();
        assert!(matches!(exact_ot_uniform(&big), Err(Error::TooLarge { size: 9, .. })));
        let rect = CostMatrix::new(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(exact_ot_uniform(&rect), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn entropy_examples() {
        let h = |a: Array2<f64>| entropy(&TransportPlan::new(a).unwrap()).unwrap();
        assert!((h(Array2::from_elem((2, 2), 0.25)) - 4f64.ln()).abs() < 1e-12);
        assert!((h(array![[0.5, 0.0], [0.0, 0.5]]) - 2f64.ln()).abs() < 1e-12);
        let expected = -(2.0 * 0.4 * 0.4f64.ln() + 2.0 * 0.1 * 0.1f64.ln());
        assert!((h(array![[0.4, 0.1], [0.1, 0.4]]) - expected).abs() < 1e-12);
        assert!((expected - 1.1935).abs() < 1e-4);
        assert!(entropy_of(&array![[-0.1, 0.6], [0.3, 0.2]]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = three_by_three();
        let cfg = SinkhornConfig::default();
        assert!(matches!(sinkhorn_solve(&c, &uniform(2), &uniform(3), &cfg), Err(Error::ShapeMismatch { .. })));
        let zero = Marginal::new(array![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(sinkhorn_solve(&c, &zero, &uniform(3), &cfg), Err(Error::InvalidMarginal(_))));
        assert!(sinkhorn_solve(&c, &uniform(3), &uniform(3), &SinkhornConfig::with_lambda(0.0)).is_err());
        assert!(Marginal::new(array![0.5, 0.6]).is_err());
        assert!(CostMatrix::new(array![[1.0, -1.0]]).is_err());
        assert!(CostMatrix::new(array![[f64::NAN]]).is_err());
    }

    #[test]
    fn plain_domain_reports_overflow() {
        // Kernel stays above the underflow guard, but scalings overflow once u, v compensate.
        let c = cost(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let mu = Marginal::new(array![0.5, 0.5]).unwrap();
        let cfg = SinkhornConfig { lambda: 600.0, ..SinkhornConfig::default() };
        match sinkhorn_solve(&c, &mu, &mu, &cfg) {
            Ok(r) => assert!(r.converged),
            Err(e) => assert!(matches!(e, Error::NonFinite { .. })),
        }
        let log = SinkhornConfig { log_domain: true, ..cfg };
        assert!(sinkhorn_solve(&c, &mu, &mu, &log).unwrap().converged);
    }

    #[test]
    fn underflowing_kernel_switches_to_log_domain() {
        let c = cost(vec![vec![0.0, 5.0], vec![5.0, 0.0]]);
        let r = sinkhorn_solve(&c, &uniform(2), &uniform(2), &SinkhornConfig::with_lambda(200.0)).unwrap();
        assert!(r.log_domain);
        assert!(r.converged);
        assert!((r.plan.diagonal_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonconvergence_is_reported_not_raised() {
        let cfg = SinkhornConfig { lambda: 10.0, max_iterations: 1, residual_tolerance: 1e-15, log_domain: false };
        let r = sinkhorn_solve(&three_by_three(), &uniform(3), &uniform(3), &cfg).unwrap();
        assert_eq!(r.iterations_used, 1);
        assert!(!r.converged);
        assert!(r.final_residual > 1e-15);
    }

    #[test]
    fn rectangular_marginals_are_respected() {
        let c = cost(vec![vec![0.1, 0.5, 0.9], vec![0.4, 0.2, 0.3]]);
        let mu = Marginal::new(array![0.3, 0.7]).unwrap();
        let nu = Marginal::new(array![0.2, 0.5, 0.3]).unwrap();
        let r = sinkhorn_solve(&c, &mu, &nu, &SinkhornConfig::with_lambda(5.0)).unwrap();
        assert!(r.plan.marginal_residual(&mu, &nu) <= 1e-9);
        assert!((r.plan.total_mass() - 1.0).abs() < 1e-9);
        assert!((r.value - (r.linear_cost - r.entropy / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn median_of_even_and_odd_counts() {
        assert_eq!(cost(vec![vec![3.0, 1.0], vec![2.0, 4.0]]).median(), 2.5);
        assert_eq!(cost(vec![vec![3.0, 1.0, 2.0]]).median(), 2.0);
    }

    #[test]
    fn serde_round_trip_keeps_validation() {
        let c = three_by_three();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CostMatrix>(&json).unwrap(), c);
        assert!(serde_json::from_str::<CostMatrix>("[[1.0],[-2.0]]").is_err());
        assert!(serde_json::from_str::<Marginal>("[0.2, 0.2]").is_err());
    }
}

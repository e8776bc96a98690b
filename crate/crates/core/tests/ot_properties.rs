use ndarray::{Array1, Array2};
use otseq::ot::{
    exact_ot_uniform, sinkhorn_solve, value_gradient_wrt_cost, CostMatrix, Marginal, SinkhornConfig, SinkhornResult,
};
use proptest::prelude::*;

fn cost_strategy(max_m: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_m, 1..=max_m).prop_flat_map(|(m1, m2)| {
        proptest::collection::vec(0.0..2.0f64, m1 * m2)
            .prop_map(move |v| Array2::from_shape_vec((m1, m2), v).unwrap())
    })
}

fn marginal_strategy(len: usize) -> impl Strategy<Value = Marginal> {
    proptest::collection::vec(0.1..1.0f64, len).prop_map(|w| {
        let total: f64 = w.iter().sum();
        Marginal::new(Array1::from_iter(w.iter().map(|x| x / total))).unwrap()
    })
}

fn solve_uniform(c: &Array2<f64>, cfg: &SinkhornConfig) -> SinkhornResult {
    let (m1, m2) = c.dim();
    sinkhorn_solve(
        &CostMatrix::new(c.clone()).unwrap(),
        &Marginal::uniform(m1).unwrap(),
        &Marginal::uniform(m2).unwrap(),
        cfg,
    )
    .unwrap()
}

// Solves that hit the iteration cap are not optimal, so invariants about the
// optimum are only checked on converged ones.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_are_feasible_for_arbitrary_marginals(
        (c, mu, nu) in cost_strategy(6).prop_flat_map(|c| {
            let (m1, m2) = c.dim();
            (Just(c), marginal_strategy(m1), marginal_strategy(m2))
        }),
        lambda in 0.5..20.0f64,
    ) {
        let r = sinkhorn_solve(&CostMatrix::new(c).unwrap(), &mu, &nu, &SinkhornConfig::with_lambda(lambda)).unwrap();
        prop_assume!(r.converged);
        prop_assert!(r.plan.entries().iter().all(|t| *t >= 0.0));
        prop_assert!(r.plan.marginal_residual(&mu, &nu) <= 1e-8);
        prop_assert!((r.plan.total_mass() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn transposing_the_problem_transposes_the_plan(c in cost_strategy(5), lambda in 0.5..20.0f64) {
        let cfg = SinkhornConfig::with_lambda(lambda);
        let forward = solve_uniform(&c, &cfg);
        let backward = solve_uniform(&c.t().to_owned(), &cfg);
        prop_assume!(forward.converged && backward.converged);
        prop_assert!((forward.value - backward.value).abs() <= 1e-9);
        let diff = (forward.plan.entries() - &backward.plan.entries().t()).mapv(f64::abs);
        // Plans agree to the stopping tolerance, not to machine precision.
        prop_assert!(diff.iter().all(|d| *d <= 1e-8));
    }

    #[test]
    fn linear_cost_is_nonincreasing_in_lambda(c in cost_strategy(5)) {
        let solves: Vec<SinkhornResult> =
            [1.0, 5.0, 25.0, 125.0].iter().map(|&l| solve_uniform(&c, &SinkhornConfig::with_lambda(l))).collect();
        prop_assume!(solves.iter().all(|r| r.converged));
        let costs: Vec<f64> = solves.iter().map(|r| r.linear_cost).collect();
        for w in costs.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "linear cost rose along lambda grid: {costs:?}");
        }
    }

    #[test]
    fn value_is_nondecreasing_in_lambda(c in cost_strategy(5), l1 in 0.5..10.0f64, factor in 1.0..5.0f64) {
        let low = solve_uniform(&c, &SinkhornConfig::with_lambda(l1));
        let high = solve_uniform(&c, &SinkhornConfig::with_lambda(l1 * factor));
        prop_assume!(low.converged && high.converged);
        let (low, high) = (low.value, high.value);
        prop_assert!(high >= low - 1e-9, "value({}) = {high} < value({l1}) = {low}", l1 * factor);
    }

    #[test]
    fn log_domain_matches_plain(c in cost_strategy(6), lambda in 0.5..30.0f64) {
        let plain = solve_uniform(&c, &SinkhornConfig::with_lambda(lambda));
        let logd = solve_uniform(&c, &SinkhornConfig { log_domain: true, ..SinkhornConfig::with_lambda(lambda) });
        prop_assume!(plain.converged && logd.converged);
        prop_assert!(!plain.log_domain && logd.log_domain);
        prop_assert!((plain.value - logd.value).abs() <= 1e-8);
        let diff = (plain.plan.entries() - logd.plan.entries()).mapv(f64::abs);
        prop_assert!(diff.iter().all(|d| *d <= 1e-8));
    }

    #[test]
    fn constant_shift_moves_value_not_plan(c in cost_strategy(5), shift in 0.0..3.0f64, lambda in 0.5..20.0f64) {
        let cfg = SinkhornConfig::with_lambda(lambda);
        let base = solve_uniform(&c, &cfg);
        let shifted = solve_uniform(&(&c + shift), &cfg);
        prop_assume!(base.converged && shifted.converged);
        prop_assert!((shifted.value - base.value - shift).abs() <= 1e-9);
        let diff = (base.plan.entries() - shifted.plan.entries()).mapv(f64::abs);
        prop_assert!(diff.iter().all(|d| *d <= 1e-9));
    }

    /// First-order prediction along a random direction using the envelope gradient.
    #[test]
    fn envelope_gradient_predicts_small_perturbations(
        (c, dir) in cost_strategy(4).prop_flat_map(|c| {
            let shape = c.dim();
            (Just(c), proptest::collection::vec(-1.0..1.0f64, shape.0 * shape.1)
                .prop_map(move |v| Array2::from_shape_vec(shape, v).unwrap()))
        }),
        lambda in 0.5..10.0f64,
    ) {
        let cfg = SinkhornConfig { residual_tolerance: 1e-13, ..SinkhornConfig::with_lambda(lambda) };
        let h = 1e-6;
        let base = solve_uniform(&c, &cfg);
        let moved = solve_uniform(&(&c + &(&dir * h)), &cfg);
        prop_assume!(base.converged && moved.converged);
        let predicted = (value_gradient_wrt_cost(&base) * &dir).sum() * h;
        prop_assert!((moved.value - base.value - predicted).abs() <= 1e-9);
    }

    #[test]
    fn entropic_value_sits_between_exact_bounds(
        c in (2..=5usize).prop_flat_map(|m| proptest::collection::vec(0.0..1.0f64, m * m)
            .prop_map(move |v| Array2::from_shape_vec((m, m), v).unwrap())),
        lambda in 0.5..10.0f64,
    ) {
        let m = c.nrows() as f64;
        let r = solve_uniform(&c, &SinkhornConfig::with_lambda(lambda));
        prop_assume!(r.converged);
        let (exact, _) = exact_ot_uniform(&CostMatrix::new(c).unwrap()).unwrap();
        prop_assert!(r.value >= exact - 2.0 * m.ln() / lambda - 1e-9);
        prop_assert!(r.value <= exact - m.ln() / lambda + 1e-9);
        prop_assert!(r.linear_cost >= exact - 1e-9);
    }
}

#[test]
fn scalings_reconstruct_the_plan() {
    let c = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 / 4.0);
    let r = solve_uniform(&c, &SinkhornConfig::with_lambda(3.0));
    let (u, v) = (r.scaling_u(), r.scaling_v());
    let rebuilt = Array2::from_shape_fn(c.dim(), |(i, j)| u[i] * (-3.0 * c[(i, j)]).exp() * v[j]);
    let diff = (&rebuilt - r.plan.entries()).mapv(f64::abs);
    assert!(diff.iter().all(|d| *d <= 1e-12));
}

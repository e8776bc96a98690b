//! Entropic OT on a small cost matrix: plan, value, and how it brackets the
//! exact assignment cost as lambda grows.

use ndarray::array;
use otseq::ot::{exact_ot_uniform, sinkhorn_solve, CostMatrix, Marginal, SinkhornConfig};

fn main() -> otseq::Result<()> {
    let cost = CostMatrix::new(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])?;
    let u = Marginal::uniform(3)?;
    let (exact, assignment) = exact_ot_uniform(&cost)?;
    println!("exact OT = {exact:.4}, assignment {assignment:?}");

    let ln_m = 3f64.ln();
    for lambda in [0.5, 2.0, 10.0, 50.0] {
        let r = sinkhorn_solve(&cost, &u, &u, &SinkhornConfig::with_lambda(lambda))?;
        println!(
            "lambda {lambda:>5}: value {:+.4} in [{:+.4}, {:+.4}], <T,C> {:.4}, H {:.3}, {} iterations",
            r.value,
            exact - 2.0 * ln_m / lambda,
            exact - ln_m / lambda,
            r.linear_cost,
            r.entropy,
            r.iterations_used
        );
    }

    // Large lambda * C underflows exp(); the solver moves to log space by itself.
    let r = sinkhorn_solve(&cost, &u, &u, &SinkhornConfig::with_lambda(500.0))?;
    println!("lambda 500: log_domain = {}, diagonal mass {:.6}", r.log_domain, r.plan.diagonal_mass());
    println!("plan:\n{:.4}", r.plan.entries());
    Ok(())
}

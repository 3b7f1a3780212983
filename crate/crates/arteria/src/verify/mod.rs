//! Independent verification: a method-of-characteristics oracle for linear
//! constant-coefficient single-branch problems, manufactured-solution
//! convergence studies, the windkessel-variant comparison, and the
//! continuous-dependence stability probe.

mod oracle;
mod quad;
mod study;

pub use oracle::{
    solve_oracle, OracleError, OracleProblem, OracleSolution, OracleSource, OracleTerminal,
};
pub use study::{
    manufactured_problem, manufactured_residual, oracle_problem_from_network,
    run_manufactured_study, run_oracle_study, snap_sigma, stability_probe,
    windkessel_variant_comparison, ConvergenceReport, LevelError, ManufacturedFields, SigmaPolicy,
    StabilityEntry, StabilityReport, StudyError, VariantComparison, DEFAULT_ORDER_WINDOW,
};

/// Deterministic quasi-random points in (0,1) for sampling-based gates;
/// splitmix64 keeps every run reproducible without an RNG dependency.
pub(crate) fn unit_samples(seed: u64, count: usize) -> Vec<f64> {
    let mut z = seed;
    (0..count)
        .map(|_| {
            z = z.wrapping_add(0x9e3779b97f4a7c15);
            let mut x = z;
            x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
            ((x ^ (x >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

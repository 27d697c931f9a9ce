//! Fixtures shared by the pipeline benchmarks.

use cutstokes::study::{discretize, Discretization};
use cutstokes::{ManufacturedProblem, StudyConfig};

/// Problem and configuration of one benchmark case.
pub fn case(domain: &str, order: usize) -> (ManufacturedProblem, StudyConfig) {
    let config = StudyConfig {
        domain: domain.into(),
        order,
        ..StudyConfig::default()
    };
    let problem = config.problem().expect("built-in problem");
    (problem, config)
}

/// Mesh, quadrature, spaces and penalty of one level.
pub fn level(
    domain: &str,
    order: usize,
    h: f64,
) -> (ManufacturedProblem, StudyConfig, Discretization) {
    let (problem, config) = case(domain, order);
    let disc = discretize(&problem.domain, h, &config).expect("discretization");
    (problem, config, disc)
}

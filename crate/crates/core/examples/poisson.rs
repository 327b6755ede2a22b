//! Solves `u_aa + u_bb = −2π² sin(πa) sin(πb)` on the unit square with zero
//! boundary values and prints the grid statistics of the result.
//!
//! ```text
//! cargo run --release -p derivprop --example poisson -- [iterations] [seed] [lambda]
//! ```

use std::f64::consts::PI;

use derivprop::training::{
    train, BoundaryCondition, BoxDomain, OperatorTerm, OptimizerConfig, PdeProblem, PointFn,
};
use derivprop::{Activation, Network};

fn main() -> derivprop::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(5000, |s| s.parse().expect("iterations"));
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let lambda = args.next().map_or(10.0, |s| s.parse().expect("lambda"));

    let domain = BoxDomain::unit(2);
    let problem = PdeProblem {
        input_dim: 2,
        terms: vec![
            OperatorTerm::linear("(2,0)".parse()?, 1.0),
            OperatorTerm::linear("(0,2)".parse()?, 1.0),
        ],
        rhs: PointFn::new(|x| -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin()),
        boundary: domain
            .faces()
            .into_iter()
            .map(|face| BoundaryCondition {
                face,
                target: PointFn::constant(0.0),
            })
            .collect(),
        domain,
        lambda,
        interior_points: 400,
        boundary_points: 160,
        exact: Some(PointFn::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin())),
    };
    let net = Network::new(&[2, 20, 20, 1], Activation::Tanh, seed)?;
    let opt = OptimizerConfig::rprop(iterations);
    let (_, report) = train(&problem, net, &opt, seed)?;
    println!("final loss: {:?}", report.final_loss.unwrap_or(f64::NAN));
    println!(
        "{}",
        serde_json::to_string_pretty(&report.grid).expect("json")
    );
    println!("wall clock: {:.2} s", report.metadata.wall_clock_seconds);
    Ok(())
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use derivprop::faadibruno::expand_capped;
use derivprop::network::MAX_ACTIVATION_ORDER;
use derivprop::propagation::Propagator;
use derivprop::training::{
    fd_weight_gradients, tensor_grid, train_with_options, BoxDomain, Evaluator, TrainOptions,
};
use derivprop::{Error, IndexSet, MultiIndex, Network, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::Outcome;

/// Environment variable holding the default worker count for `solve`.
pub const THREADS_ENV: &str = "DERIVPROP_THREADS";

/// Gradient-check tolerance: relative, with an absolute floor.
const CHECK_REL: f64 = 1e-6;
const CHECK_ABS: f64 = 1e-9;
const CHECK_STEP: f64 = 1e-5;

fn fail(e: &Error) -> Outcome {
    eprintln!("error: {e}");
    match e {
        Error::NonFinite { .. } | Error::Diverged { .. } => Outcome::Numeric,
        _ => Outcome::Usage,
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(&Error::from(e)),
        }
    };
}

pub fn expand(index: &str, json: bool) -> Outcome {
    let idx: MultiIndex = tri!(index.parse());
    let e = tri!(expand_capped(&idx, MAX_ACTIVATION_ORDER));
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&e).expect("expansion serializes")
        );
    } else {
        println!("{e}");
    }
    Outcome::Ok
}

pub fn check(path: &Path, inject_fault: bool) -> Outcome {
    let config = tri!(Config::load(path));
    let mut problem = tri!(config.problem());
    problem.interior_points = 6;
    problem.boundary_points = if problem.boundary.is_empty() { 0 } else { 4 };
    let seed = config.run.seed;
    let dim = problem.input_dim;

    let mut net = tri!(Network::new(
        &[dim, 5, 5, 1],
        config.network.activation,
        seed
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in net.thresholds_mut() {
        t.mapv_inplace(|_| rng.random_range(-0.5..=0.5));
    }
    let points = tri!(problem.sample(seed));
    let eval = tri!(Evaluator::new(&problem, 1));
    let (loss, mut grads) = tri!(eval.loss_and_gradients(&net, &points));
    if inject_fault {
        if let Some(g) = grads.values_mut().next() {
            *g = *g * (1.0 + 1e-3) + 1e-6;
        }
    }
    let fd = fd_weight_gradients(
        &net,
        |n| {
            eval.loss_and_gradients(n, &points)
                .map_or(f64::NAN, |(l, _)| l)
        },
        CHECK_STEP,
    );

    let (mut max_abs, mut max_rel, mut worst) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in grads.values().zip(fd.values()) {
        let err = (a - b).abs();
        max_abs = max_abs.max(err);
        if b.abs() > CHECK_ABS {
            max_rel = max_rel.max(err / b.abs());
        }
        // Error as a multiple of the allowed tolerance.
        worst = worst.max(err / (CHECK_REL * b.abs()).max(CHECK_ABS));
    }
    let closure = eval.propagator().closure();
    println!("network: {:?} {}", net.shape(), config.network.activation);
    println!(
        "closure: {} indices, max order {}",
        closure.len(),
        closure.max_order()
    );
    println!("parameters: {}", net.param_count());
    println!("loss: {loss:?}");
    println!("max abs err: {max_abs:e}");
    println!("max rel err: {max_rel:e}");
    // NaN compares false, so a non-finite comparison fails the check.
    if worst <= 1.0 {
        println!("PASS");
        Outcome::Ok
    } else {
        println!("FAIL");
        Outcome::CheckFailed
    }
}

pub struct SolveArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub init_from: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n.max(1));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map(|n| n.max(1)).map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(1),
    }
}

pub fn solve(args: &SolveArgs) -> Outcome {
    let config = tri!(Config::load(&args.config));
    let problem = tri!(config.problem());
    let mut opt = tri!(config.optimizer());
    if let Some(n) = args.iterations {
        opt.iterations = n;
    }
    let seed = args.seed.unwrap_or(config.run.seed);
    let net = match &args.init_from {
        Some(path) => {
            let net = tri!(fs::read(path)
                .map_err(Error::from)
                .and_then(|b| Network::load(&b)));
            if net.input_dim() != problem.input_dim || net.output_dim() != 1 {
                return fail(&Error::Config(format!(
                    "model shape {:?} does not fit a scalar problem in {} variables",
                    net.shape(),
                    problem.input_dim
                )));
            }
            net
        }
        None => tri!(config.network(seed)),
    };
    let options = TrainOptions {
        threads: tri!(threads(args.threads)),
        report_grid: config.run.report_grid,
        config_digest: Some(config.digest.clone()),
    };
    tri!(fs::create_dir_all(&args.out));

    let (net, report, outcome) = match train_with_options(&problem, net, &opt, seed, &options) {
        Ok((net, report)) => (Some(net), report, Outcome::Ok),
        Err(Error::Diverged { iteration, report }) => {
            eprintln!("error: training diverged at iteration {iteration}");
            (None, *report, Outcome::Numeric)
        }
        Err(e) => return fail(&e),
    };

    let out = &args.out;
    let json = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json") + "\n";
    tri!(fs::write(
        out.join("report.json"),
        json(&report.deterministic_json())
    ));
    tri!(fs::write(
        out.join("run.json"),
        json(&serde_json::to_value(&report.metadata).expect("json"))
    ));
    tri!(fs::write(out.join("loss.csv"), report.loss_csv()));
    if let Some(net) = net {
        tri!(fs::write(out.join("model.bin"), net.save()));
        let meta = serde_json::to_value(net.metadata(Some(&config.digest))).expect("json");
        tri!(fs::write(out.join("model.json"), json(&meta)));
        if let Some(r) = report.grid.interior_residual {
            println!("interior residual: max {:e}, rms {:e}", r.max, r.rms);
        }
        if let Some(s) = report.grid.solution_error {
            println!("solution error: max {:e}, rms {:e}", s.max, s.rms);
        }
        println!("final loss: {:?}", report.final_loss.unwrap_or(f64::NAN));
    }
    outcome
}

fn parse_grid(spec: &str, dim: usize) -> Result<Vec<usize>> {
    let bad = || {
        Error::Parse(format!(
            "grid must look like \"11\" or \"3x3\", got {spec:?}"
        ))
    };
    let counts = spec
        .split('x')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(bad)
        })
        .collect::<Result<Vec<_>>>()?;
    match counts.len() {
        1 => Ok(vec![counts[0]; dim]),
        n if n == dim => Ok(counts),
        n => Err(Error::Dimension {
            expected: dim,
            got: n,
        }),
    }
}

fn column_name(idx: &MultiIndex) -> String {
    if idx.is_zero() {
        "u".into()
    } else {
        format!("u_{}", idx.label())
    }
}

pub fn sample(
    model: &Path,
    config: Option<&Path>,
    grid: &str,
    derivs: &[String],
    out: Option<&Path>,
) -> Outcome {
    let net = tri!(fs::read(model)
        .map_err(Error::from)
        .and_then(|b| Network::load(&b)));
    let dim = net.input_dim();
    if net.output_dim() != 1 {
        return fail(&Error::Dimension {
            expected: 1,
            got: net.output_dim(),
        });
    }
    let config = match config {
        Some(p) => Some(tri!(Config::load(p))),
        None => None,
    };
    let problem = match &config {
        Some(c) => Some(tri!(c.problem())),
        None => None,
    };
    if let Some(p) = &problem {
        if p.input_dim != dim {
            return fail(&Error::Dimension {
                expected: dim,
                got: p.input_dim,
            });
        }
    }
    let domain = problem
        .as_ref()
        .map_or_else(|| BoxDomain::unit(dim), |p| p.domain.clone());
    let counts = tri!(parse_grid(grid, dim));

    let mut columns = vec![MultiIndex::zero(dim)];
    for d in derivs {
        let idx: MultiIndex = tri!(d.parse());
        if idx.dim() != dim {
            return fail(&Error::Dimension {
                expected: dim,
                got: idx.dim(),
            });
        }
        if !columns.contains(&idx) {
            columns.push(idx);
        }
    }
    let mut needed = columns.clone();
    if let Some(p) = &problem {
        needed.extend(p.closure().iter().cloned());
    }
    let closure = tri!(IndexSet::new(needed)).downward_closure();
    let prop = tri!(Propagator::new(&closure));
    let points = tensor_grid(&domain, &counts);
    let table = tri!(prop.forward(&net, points.view()));

    let mut csv = String::new();
    let coords: Vec<String> = (0..dim).map(|i| MultiIndex::unit(dim, i).label()).collect();
    let mut header: Vec<String> = coords;
    header.extend(columns.iter().map(column_name));
    if problem.is_some() {
        header.push("residual".into());
    }
    csv.push_str(&header.join(","));
    csv.push('\n');
    for (p, x) in points.rows().into_iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        for idx in &columns {
            row.push(format!(
                "{:?}",
                table.output(idx).expect("in closure")[[p, 0]]
            ));
        }
        if let Some(pr) = &problem {
            let x = x.to_vec();
            let r = pr.residual(&x, |idx| table.output(idx).map_or(f64::NAN, |m| m[[p, 0]]));
            row.push(format!("{r:?}"));
        }
        writeln!(csv, "{}", row.join(",")).expect("string write");
    }
    match out {
        Some(path) => tri!(fs::write(path, csv)),
        None => print!("{csv}"),
    }
    Outcome::Ok
}

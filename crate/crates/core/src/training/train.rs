//! The training loop and its report.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use super::loss::{partial_loss, residuals, values, Normalization};
use super::optimizer::{Optimizer, OptimizerConfig};
use super::problem::{evaluation_grid, Collocation, PdeProblem};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::propagation::{Gradients, Propagator};

/// Points per evaluation chunk. Chunks are reduced in order, so results do
/// not depend on the number of threads.
pub const CHUNK_POINTS: usize = 64;

/// Loss and weight gradients over a batch, evaluated in fixed chunks.
#[derive(Clone, Debug)]
pub struct Evaluator<'a> {
    problem: &'a PdeProblem,
    prop: Propagator,
    threads: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a PdeProblem, threads: usize) -> Result<Evaluator<'a>> {
        problem.validate()?;
        Ok(Evaluator {
            problem,
            prop: Propagator::new(&problem.closure())?,
            threads: threads.max(1),
        })
    }

    pub fn propagator(&self) -> &Propagator {
        &self.prop
    }

    pub fn loss_and_gradients(
        &self,
        net: &Network,
        points: &Collocation,
    ) -> Result<(f64, Gradients)> {
        let norm = Normalization::of(self.problem, points)?;
        let chunks = points.len().div_ceil(CHUNK_POINTS);
        let eval = |c: usize| -> Result<(f64, Gradients)> {
            let lo = c * CHUNK_POINTS;
            let hi = (lo + CHUNK_POINTS).min(points.len());
            let table = self
                .prop
                .forward(net, points.points().slice(s![lo..hi, ..]))?;
            let (loss, seeds) = partial_loss(self.problem, &table, &points.rows[lo..hi], norm)?;
            Ok((loss, self.prop.backward(net, &table, &seeds)?))
        };

        let parts: Vec<Result<(f64, Gradients)>> = if self.threads == 1 || chunks <= 1 {
            (0..chunks).map(eval).collect()
        } else {
            let workers = self.threads.min(chunks);
            let mut slots: Vec<Option<Result<(f64, Gradients)>>> =
                (0..chunks).map(|_| None).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let eval = &eval;
                        scope.spawn(move || {
                            (w..chunks)
                                .step_by(workers)
                                .map(|c| (c, eval(c)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (c, r) in h.join().expect("evaluation worker panicked") {
                        slots[c] = Some(r);
                    }
                }
            });
            slots
                .into_iter()
                .map(|s| s.expect("every chunk evaluated"))
                .collect()
        };

        let mut loss = 0.0;
        let mut grads = Gradients::zeros_like(net);
        for part in parts {
            let (l, g) = part?;
            loss += l;
            grads.add_assign(&g);
        }
        Ok((loss, grads))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainOptions {
    /// Worker threads for batch evaluation.
    pub threads: usize,
    /// Evaluation grid nodes per axis for the report.
    pub report_grid: usize,
    /// Digest of the configuration the run came from, copied into the report.
    pub config_digest: Option<String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            threads: 1,
            report_grid: 41,
            config_digest: None,
        }
    }
}

/// Max and root-mean-square of a set of absolute errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorStats {
    pub max: f64,
    pub rms: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn of(errors: impl IntoIterator<Item = f64>) -> Option<ErrorStats> {
        let (mut max, mut sq, mut count) = (0.0f64, 0.0, 0usize);
        for e in errors {
            max = if e.is_nan() {
                f64::NAN
            } else {
                max.max(e.abs())
            };
            sq += e * e;
            count += 1;
        }
        (count > 0).then(|| ErrorStats {
            max,
            rms: (sq / count as f64).sqrt(),
            count,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    pub nodes_per_axis: usize,
    /// `|R|` at grid nodes strictly inside the box.
    pub interior_residual: Option<ErrorStats>,
    /// `|u − g|` at grid nodes on each constrained face.
    pub boundary_error: Option<ErrorStats>,
    /// `|u − u_exact|` at every grid node, when an exact solution is known.
    pub solution_error: Option<ErrorStats>,
}

impl GridReport {
    fn empty(per_axis: usize) -> GridReport {
        GridReport {
            nodes_per_axis: per_axis.max(2),
            interior_residual: None,
            boundary_error: None,
            solution_error: None,
        }
    }
}

/// Run facts that differ between otherwise identical runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetadata {
    pub wall_clock_seconds: f64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config_digest: Option<String>,
    pub optimizer: OptimizerConfig,
    /// Completed parameter updates.
    pub iterations: usize,
    /// Loss before each update and after the last one.
    pub losses: Vec<f64>,
    pub final_loss: Option<f64>,
    pub grid: GridReport,
    pub metadata: RunMetadata,
}

impl TrainReport {
    /// The report without [`RunMetadata`]; identical across repeated runs.
    pub fn deterministic_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("metadata");
        v
    }

    /// `iteration,loss` rows with shortest round-trip floats.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(out, "{i},{l:?}").expect("string write");
        }
        out
    }
}

/// Trains with default [`TrainOptions`].
pub fn train(
    problem: &PdeProblem,
    net: Network,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<(Network, TrainReport)> {
    train_with_options(problem, net, opt, seed, &TrainOptions::default())
}

/// Samples collocation points from `seed`, then repeats forward pass, loss
/// seeds, backward pass and optimizer update `opt.iterations` times.
///
/// A non-finite loss or gradient stops the run with [`Error::Diverged`],
/// carrying the report up to that point.
pub fn train_with_options(
    problem: &PdeProblem,
    mut net: Network,
    opt: &OptimizerConfig,
    seed: u64,
    options: &TrainOptions,
) -> Result<(Network, TrainReport)> {
    let started = Instant::now();
    opt.validate()?;
    let eval = Evaluator::new(problem, options.threads)?;
    let points = problem.sample(seed)?;
    let mut optimizer = Optimizer::new(opt, net.param_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));

    let mut losses = Vec::with_capacity(opt.iterations + 1);
    for iteration in 0..=opt.iterations {
        let batch = match opt.batch_size {
            Some(b) if b < points.len() => minibatch(&points, b, &mut rng),
            _ => points.clone(),
        };
        let evaluated = match eval.loss_and_gradients(&net, &batch) {
            Err(Error::NonFinite { .. }) => None,
            other => Some(other?).filter(|(loss, grads)| loss.is_finite() && grads.is_finite()),
        };
        let Some((loss, grads)) = evaluated else {
            let report = build_report(&eval, &net, opt, seed, options, losses, iteration, started)?;
            return Err(Error::Diverged {
                iteration,
                report: Box::new(report),
            });
        };
        losses.push(loss);
        if iteration < opt.iterations {
            optimizer.step(&mut net, &grads);
        }
    }
    let report = build_report(
        &eval,
        &net,
        opt,
        seed,
        options,
        losses,
        opt.iterations,
        started,
    )?;
    Ok((net, report))
}

/// `size` rows drawn without replacement, interior and boundary in
/// proportion, at least one interior row.
fn minibatch(points: &Collocation, size: usize, rng: &mut ChaCha8Rng) -> Collocation {
    let ni = points.interior_count();
    let nb = points.boundary_count();
    let take_i = ((size * ni) as f64 / points.len() as f64)
        .round()
        .clamp(1.0, ni as f64) as usize;
    let take_b = (size - take_i.min(size)).min(nb);
    let mut rows: Vec<usize> = index::sample(rng, ni, take_i).into_vec();
    rows.sort_unstable();
    let mut b: Vec<usize> = index::sample(rng, nb, take_b)
        .into_iter()
        .map(|r| r + ni)
        .collect();
    b.sort_unstable();
    rows.extend(b);
    points.subset(&rows)
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    eval: &Evaluator<'_>,
    net: &Network,
    opt: &OptimizerConfig,
    seed: u64,
    options: &TrainOptions,
    losses: Vec<f64>,
    iterations: usize,
    started: Instant,
) -> Result<TrainReport> {
    Ok(TrainReport {
        seed,
        config_digest: options.config_digest.clone(),
        optimizer: opt.clone(),
        iterations,
        final_loss: losses.last().copied(),
        losses,
        grid: match grid_report(eval.problem, net, eval.propagator(), options.report_grid) {
            Err(Error::NonFinite { .. }) => GridReport::empty(options.report_grid),
            other => other?,
        },
        metadata: RunMetadata {
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            threads: options.threads,
        },
    })
}

/// Residual, boundary and solution errors of `net` on a tensor grid.
pub fn grid_report(
    problem: &PdeProblem,
    net: &Network,
    prop: &Propagator,
    per_axis: usize,
) -> Result<GridReport> {
    let grid = evaluation_grid(&problem.domain, per_axis);
    let dom = &problem.domain;
    let inside = |x: &[f64]| {
        x.iter()
            .enumerate()
            .all(|(a, &v)| v > dom.lower[a] && v < dom.upper[a])
    };

    let mut residual = Vec::new();
    let mut boundary = Vec::new();
    let mut solution = Vec::new();
    let step = 1024;
    for lo in (0..grid.nrows()).step_by(step) {
        let chunk = grid.slice(s![lo..(lo + step).min(grid.nrows()), ..]);
        let r = residuals(problem, net, prop, chunk)?;
        let u: Array2<f64> = values(net, prop, chunk)?;
        for (p, x) in chunk.rows().into_iter().enumerate() {
            let x = x.as_slice().expect("standard layout");
            if inside(x) {
                residual.push(r[p]);
            }
            for bc in &problem.boundary {
                if dom.on_face(bc.face, x) {
                    boundary.push(u[[p, 0]] - bc.target.eval(x));
                }
            }
            if let Some(exact) = &problem.exact {
                solution.push(u[[p, 0]] - exact.eval(x));
            }
        }
    }
    Ok(GridReport {
        nodes_per_axis: per_axis.max(2),
        interior_residual: ErrorStats::of(residual),
        boundary_error: ErrorStats::of(boundary),
        solution_error: ErrorStats::of(solution),
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::network::Activation;
    use crate::training::functions::PointFn;
    use crate::training::loss::loss_and_seeds;
    use crate::training::problem::{BoundaryCondition, BoxDomain, OperatorTerm};

    fn poisson(interior: usize, boundary: usize) -> PdeProblem {
        let domain = BoxDomain::unit(2);
        PdeProblem {
            input_dim: 2,
            terms: vec![
                OperatorTerm::linear("(2,0)".parse().unwrap(), 1.0),
                OperatorTerm::linear("(0,2)".parse().unwrap(), 1.0),
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
            lambda: 1.0,
            interior_points: interior,
            boundary_points: boundary,
            exact: Some(PointFn::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin())),
        }
    }

    #[test]
    fn zero_iterations_returns_initial_net() {
        let net = Network::new(&[2, 5, 1], Activation::Tanh, 3).unwrap();
        let (out, report) =
            train(&poisson(30, 12), net.clone(), &OptimizerConfig::rprop(0), 1).unwrap();
        assert_eq!(out, net);
        assert_eq!(report.losses.len(), 1);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn chunked_evaluation_matches_single_pass() {
        let problem = poisson(150, 40);
        let net = Network::new(&[2, 6, 5, 1], Activation::Sigmoid, 2).unwrap();
        let points = problem.sample(4).unwrap();
        let (whole, seeds) = loss_and_seeds(&problem, &net, &points).unwrap();
        let prop = Propagator::new(&problem.closure()).unwrap();
        let table = prop.forward(&net, points.points().view()).unwrap();
        let g_whole = prop.backward(&net, &table, &seeds).unwrap();

        let serial = Evaluator::new(&problem, 1)
            .unwrap()
            .loss_and_gradients(&net, &points)
            .unwrap();
        let parallel = Evaluator::new(&problem, 3)
            .unwrap()
            .loss_and_gradients(&net, &points)
            .unwrap();
        assert_eq!(serial.0.to_bits(), parallel.0.to_bits());
        assert_eq!(serial.1, parallel.1);
        assert!((serial.0 - whole).abs() <= 1e-13 * whole);
        assert!(serial.1.max_abs_diff(&g_whole) <= 1e-12 * g_whole.max_abs());
    }

    #[test]
    fn deterministic_and_decreasing() {
        let problem = poisson(60, 24);
        let net = Network::new(&[2, 8, 1], Activation::Tanh, 5).unwrap();
        let opt = OptimizerConfig::rprop(40);
        let (a, ra) = train(&problem, net.clone(), &opt, 7).unwrap();
        let options = TrainOptions {
            threads: 2,
            ..TrainOptions::default()
        };
        let (b, rb) = train_with_options(&problem, net, &opt, 7, &options).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.loss_csv(), rb.loss_csv());
        assert_eq!(ra.deterministic_json(), rb.deterministic_json());
        assert_eq!(ra.losses.len(), 41);
        assert!(ra.losses[40] < ra.losses[0]);
    }

    #[test]
    fn minibatches_are_reproducible() {
        let problem = poisson(60, 24);
        let net = Network::new(&[2, 4, 1], Activation::Tanh, 5).unwrap();
        let mut opt = OptimizerConfig::gd(0.01, 5);
        opt.batch_size = Some(20);
        let (_, a) = train(&problem, net.clone(), &opt, 3).unwrap();
        let (_, b) = train(&problem, net, &opt, 3).unwrap();
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn divergence_is_reported() {
        let problem = poisson(20, 8);
        let net = Network::new(&[2, 4, 1], Activation::Sin, 5).unwrap();
        let err = train(&problem, net, &OptimizerConfig::gd(1e200, 10), 1).unwrap_err();
        let Error::Diverged { iteration, report } = err else {
            panic!("{err}")
        };
        assert!(iteration >= 1);
        assert_eq!(report.losses.len(), iteration);
        assert!(report.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn loss_csv_format() {
        let problem = poisson(10, 4);
        let net = Network::new(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        let (_, r) = train(&problem, net, &OptimizerConfig::rprop(2), 0).unwrap();
        let csv = r.loss_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iteration,loss");
        assert_eq!(lines.len(), 4);
        let back: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(back.to_bits(), r.losses[0].to_bits());
    }

    #[test]
    fn grid_report_counts() {
        let problem = poisson(10, 4);
        let net = Network::new(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        let prop = Propagator::new(&problem.closure()).unwrap();
        let g = grid_report(&problem, &net, &prop, 5).unwrap();
        assert_eq!(g.interior_residual.unwrap().count, 9);
        // four faces of five nodes each; corners counted once per face
        assert_eq!(g.boundary_error.unwrap().count, 20);
        assert_eq!(g.solution_error.unwrap().count, 25);
    }
}

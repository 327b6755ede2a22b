//! Collocation loss and its output-layer seeds.
//!
//! ```text
//! E = (1/N_i) Σ_interior R(p)² + λ (1/N_b) Σ_boundary (u(p) − g(p))²
//! R(p) = Σ_k c_k(p) ∏_j D^{s_kj} u(p) − f(p)
//! ```

use ndarray::{Array2, ArrayView2};

use super::problem::{Collocation, PdeProblem, RowData};
use crate::error::{check_dim, Error, Result};
use crate::multiindex::MultiIndex;
use crate::network::Network;
use crate::propagation::{zero_seeds, DerivTable, Propagator, SeedAdjoints};

/// Loss value and seeds `∂E/∂D^s u` over a whole batch.
pub fn loss_and_seeds(
    problem: &PdeProblem,
    net: &Network,
    points: &Collocation,
) -> Result<(f64, SeedAdjoints)> {
    let prop = Propagator::new(&problem.closure())?;
    let table = prop.forward(net, points.points().view())?;
    let norm = Normalization::of(problem, points)?;
    partial_loss(problem, &table, &points.rows, norm)
}

/// `1/N_i` and `λ/N_b` for a batch.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Normalization {
    interior: f64,
    boundary: f64,
}

impl Normalization {
    pub(crate) fn of(problem: &PdeProblem, points: &Collocation) -> Result<Normalization> {
        if points.interior_count() == 0 {
            return Err(Error::Config("interior batch is empty".into()));
        }
        let nb = points.boundary_count();
        Ok(Normalization {
            interior: 1.0 / points.interior_count() as f64,
            boundary: if nb == 0 {
                0.0
            } else {
                problem.lambda / nb as f64
            },
        })
    }
}

/// Contribution of `rows` (matching the table's points) to the loss, with
/// the whole batch's normalization.
pub(crate) fn partial_loss(
    problem: &PdeProblem,
    table: &DerivTable,
    rows: &[RowData],
    norm: Normalization,
) -> Result<(f64, SeedAdjoints)> {
    check_dim(rows.len(), table.points())?;
    let zero = MultiIndex::zero(problem.input_dim);
    let outputs = table.output(&zero).map_or(0, |u| u.ncols());
    check_dim(1, outputs)?;

    let mut seeds = zero_seeds(table.closure(), rows.len(), 1);
    // Each term's factors as columns of the output table.
    let factors: Vec<Vec<(&MultiIndex, ArrayView2<'_, f64>)>> = problem
        .terms
        .iter()
        .map(|t| {
            t.factors
                .iter()
                .map(|f| {
                    let col = table.output(f).ok_or_else(|| {
                        Error::Contract(format!("index {f} is not in the propagated closure"))
                    })?;
                    Ok((f, col.view()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let u = table.output(&zero).expect("closure contains zero");

    let mut interior_sum = 0.0;
    let mut boundary_sum = 0.0;
    for (p, row) in rows.iter().enumerate() {
        match row {
            RowData::Interior { coeffs, rhs } => {
                let products: Vec<f64> = factors
                    .iter()
                    .map(|fs| fs.iter().map(|(_, col)| col[[p, 0]]).product())
                    .collect();
                let r = coeffs
                    .iter()
                    .zip(&products)
                    .map(|(c, v)| c * v)
                    .sum::<f64>()
                    - rhs;
                interior_sum += r * r;
                let scale = 2.0 * norm.interior * r;
                for (fs, c) in factors.iter().zip(coeffs) {
                    for (j, (idx, _)) in fs.iter().enumerate() {
                        let others: f64 = fs
                            .iter()
                            .enumerate()
                            .filter(|&(k, _)| k != j)
                            .map(|(_, (_, col))| col[[p, 0]])
                            .product();
                        seeds.get_mut(*idx).expect("seeded")[[p, 0]] += scale * c * others;
                    }
                }
            }
            RowData::Boundary { target } => {
                let d = u[[p, 0]] - target;
                boundary_sum += d * d;
                seeds.get_mut(&zero).expect("seeded")[[p, 0]] += 2.0 * norm.boundary * d;
            }
        }
    }
    Ok((
        norm.interior * interior_sum + norm.boundary * boundary_sum,
        seeds,
    ))
}

/// Residuals `R(p)` at arbitrary points.
pub fn residuals(
    problem: &PdeProblem,
    net: &Network,
    prop: &Propagator,
    points: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    let table = prop.forward(net, points)?;
    let mut out = Vec::with_capacity(points.nrows());
    for (p, x) in points.rows().into_iter().enumerate() {
        let x = x.to_vec();
        let value = |idx: &MultiIndex| table.output(idx).map_or(f64::NAN, |col| col[[p, 0]]);
        out.push(problem.residual(&x, value));
    }
    Ok(out)
}

/// Output values `u(p)` for every row of `points`.
pub(crate) fn values(
    net: &Network,
    prop: &Propagator,
    points: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let table = prop.forward(net, points)?;
    let zero = MultiIndex::zero(net.input_dim());
    Ok(table.output(&zero).expect("closure contains zero").clone())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use ndarray::{array, Array1};

    use super::*;
    use crate::network::Activation;
    use crate::propagation::backward;
    use crate::training::functions::PointFn;
    use crate::training::oracles::fd_weight_gradients;
    use crate::training::problem::{BoundaryCondition, BoxDomain, OperatorTerm};

    fn single_term(index: &str, lambda: f64) -> PdeProblem {
        PdeProblem {
            input_dim: 2,
            terms: vec![OperatorTerm::linear(index.parse().unwrap(), 1.0)],
            rhs: PointFn::constant(0.0),
            domain: BoxDomain::unit(2),
            boundary: vec![],
            lambda,
            interior_points: 1,
            boundary_points: 0,
            exact: None,
        }
    }

    #[test]
    fn quadratic_form_example() {
        // A one-neuron sine net whose u_aa is 3 at the chosen point:
        // u = v·sin(w·a), u_aa = −v w² sin(w a); w = 1, a = −π/2, v = 3.
        let net = Network::from_parts(
            vec![Activation::Sin],
            vec![array![[1.0, 0.0]], array![[3.0]]],
            vec![Array1::zeros(1)],
            None,
        )
        .unwrap();
        let problem = single_term("(2,0)", 0.0);
        let pts = Collocation::new(&problem, array![[-PI / 2.0, 0.0]], &[]).unwrap();
        let (e, seeds) = loss_and_seeds(&problem, &net, &pts).unwrap();
        assert!((e - 9.0).abs() < 1e-12, "{e}");
        let s20 = seeds[&"(2,0)".parse::<MultiIndex>().unwrap()][[0, 0]];
        assert!((s20 - 6.0).abs() < 1e-12, "{s20}");
        for (idx, m) in &seeds {
            if idx.to_string() != "(2,0)" {
                assert_eq!(m[[0, 0]], 0.0, "{idx}");
            }
        }
    }

    #[test]
    fn exact_solution_has_zero_loss() {
        // Zero output weights make u ≡ 0, the exact solution of Δu = 0 with
        // zero boundary data.
        let mut net = Network::new(&[2, 4, 1], Activation::Tanh, 1).unwrap();
        net.weights_mut()[1].fill(0.0);
        let mut problem = single_term("(2,0)", 1.0);
        problem
            .terms
            .push(OperatorTerm::linear("(0,2)".parse().unwrap(), 1.0));
        problem.boundary = problem
            .domain
            .faces()
            .into_iter()
            .map(|face| BoundaryCondition {
                face,
                target: PointFn::constant(0.0),
            })
            .collect();
        problem.interior_points = 10;
        problem.boundary_points = 8;
        let pts = problem.sample(2).unwrap();
        let (e, seeds) = loss_and_seeds(&problem, &net, &pts).unwrap();
        assert_eq!(e, 0.0);
        assert!(seeds.values().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn empty_interior_is_config_error() {
        let net = Network::new(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        let problem = single_term("(1,0)", 1.0);
        let pts = Collocation::new(&problem, Array2::zeros((0, 2)), &[]).unwrap();
        assert!(matches!(
            loss_and_seeds(&problem, &net, &pts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn vector_output_is_rejected() {
        let net = Network::new(&[2, 3, 2], Activation::Tanh, 0).unwrap();
        let problem = single_term("(1,0)", 1.0);
        let pts = Collocation::new(&problem, array![[0.1, 0.2]], &[]).unwrap();
        assert!(matches!(
            loss_and_seeds(&problem, &net, &pts),
            Err(Error::Dimension { .. })
        ));
    }

    fn fd_check(problem: &PdeProblem, net: &Network, pts: &Collocation) {
        let (_, seeds) = loss_and_seeds(problem, net, pts).unwrap();
        let prop = Propagator::new(&problem.closure()).unwrap();
        let table = prop.forward(net, pts.points().view()).unwrap();
        let g = backward(net, &table, &seeds).unwrap();
        let fd = fd_weight_gradients(net, |n| loss_and_seeds(problem, n, pts).unwrap().0, 1e-5);
        for (a, b) in g.values().zip(fd.values()) {
            assert!((a - b).abs() <= (1e-6 * b.abs()).max(1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn laplacian_gradients_match_fd() {
        let mut problem = single_term("(2,0)", 1.0);
        problem
            .terms
            .push(OperatorTerm::linear("(0,2)".parse().unwrap(), 1.0));
        problem.rhs = PointFn::new(|x| (x[0] * 3.0).sin() + x[1]);
        problem.boundary = vec![BoundaryCondition {
            face: "a-".parse().unwrap(),
            target: PointFn::new(|x| x[1] * x[1]),
        }];
        problem.interior_points = 4;
        problem.boundary_points = 2;
        let net = Network::new(&[2, 5, 4, 1], Activation::Tanh, 9).unwrap();
        fd_check(&problem, &net, &problem.sample(5).unwrap());
    }

    #[test]
    fn nonlinear_gradients_match_fd() {
        // u·u_a − 0.1·u_aa − sin(b)
        let mut problem = single_term("(2,0)", 1.0);
        problem.terms = vec![
            OperatorTerm {
                coeff: PointFn::constant(1.0),
                factors: vec!["(0,0)".parse().unwrap(), "(1,0)".parse().unwrap()],
            },
            OperatorTerm::linear("(2,0)".parse().unwrap(), -0.1),
        ];
        problem.rhs = PointFn::new(|x| x[1].sin());
        problem.interior_points = 5;
        let net = Network::new(&[2, 4, 4, 1], Activation::Sigmoid, 4).unwrap();
        fd_check(&problem, &net, &problem.sample(1).unwrap());

        // Repeated factor: u² = 1
        problem.terms = vec![OperatorTerm {
            coeff: PointFn::new(|x| 1.0 + x[0]),
            factors: vec!["(0,0)".parse().unwrap(), "(0,0)".parse().unwrap()],
        }];
        problem.rhs = PointFn::constant(1.0);
        fd_check(&problem, &net, &problem.sample(1).unwrap());
    }

    #[test]
    fn sorted_points_give_identical_loss() {
        let mut problem = single_term("(2,0)", 0.5);
        problem.boundary = vec![BoundaryCondition {
            face: "b+".parse().unwrap(),
            target: PointFn::constant(1.0),
        }];
        problem.interior_points = 37;
        problem.boundary_points = 11;
        let net = Network::new(&[2, 6, 1], Activation::Tanh, 3).unwrap();
        let pts = problem.sample(8).unwrap();
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.rotate_left(13);
        let shuffled = pts.permuted(&order);
        let a = loss_and_seeds(&problem, &net, &pts.sorted()).unwrap().0;
        let b = loss_and_seeds(&problem, &net, &shuffled.sorted())
            .unwrap()
            .0;
        assert_eq!(a.to_bits(), b.to_bits());
        let c = loss_and_seeds(&problem, &net, &shuffled).unwrap().0;
        assert!((a - c).abs() <= 1e-14 * a.abs());
    }
}

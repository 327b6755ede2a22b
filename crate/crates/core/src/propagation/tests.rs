use ndarray::{array, s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::network::Activation;
use crate::training::oracles::{
    fd_weight_gradients, nested_first_order_oracle, nested_slots_oracle, plain_backprop,
};

fn mi(s: &str) -> MultiIndex {
    s.parse().unwrap()
}

fn set(v: &[&str]) -> IndexSet {
    IndexSet::new(v.iter().map(|s| mi(s))).unwrap()
}

/// Seeded Glorot net with nonzero thresholds.
fn random_net(shape: &[usize], act: Activation, seed: u64) -> Network {
    let net = Network::new(shape, act, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let thresholds = net
        .thresholds()
        .iter()
        .map(|t| Array1::from_shape_simple_fn(t.len(), || rng.random_range(-0.5..0.5)))
        .collect();
    Network::from_parts(
        net.activations().to_vec(),
        net.weights().to_vec(),
        thresholds,
        None,
    )
    .unwrap()
}

fn random_points(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, dim), || rng.random_range(-1.0..1.0))
}

fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs)
}

fn second_order_closure() -> IndexSet {
    IndexSet::full(2, 2)
}

#[test]
fn layer_one_initial_conditions() {
    let net = random_net(&[2, 4, 3, 1], Activation::Tanh, 1);
    let x = random_points(5, 2, 2);
    let closure = IndexSet::full(2, 3);
    let table = forward(&net, x.view(), &closure).unwrap();
    let w1 = &net.weights()[0];
    for i in 0..2 {
        let unit = table.get(1, &MultiIndex::unit(2, i)).unwrap();
        for row in unit.rows() {
            assert_eq!(row, w1.column(i));
        }
    }
    for idx in closure.iter().filter(|s| s.order() >= 2) {
        assert!(table.get(1, idx).unwrap().iter().all(|&v| v == 0.0));
    }
    assert_eq!(table.get(1, &mi("(0,0)")).unwrap(), &x.dot(&w1.t()));
}

#[test]
fn odd_activation_kills_second_derivative_at_origin() {
    let net = Network::from_parts(
        vec![Activation::Tanh],
        vec![array![[1.3, 0.0]], array![[0.7]]],
        vec![array![0.0]],
        None,
    )
    .unwrap();
    let table = forward(
        &net,
        array![[0.0, 0.0]].view(),
        &set(&["(2,0)"]).downward_closure(),
    )
    .unwrap();
    assert_eq!(table.output(&mi("(2,0)")).unwrap()[[0, 0]], 0.0);
}

#[test]
fn value_entry_matches_plain_forward() {
    let net = random_net(&[3, 7, 5, 2], Activation::Sigmoid, 11);
    let x = random_points(6, 3, 12);
    let table = forward(&net, x.view(), &IndexSet::full(3, 2)).unwrap();
    let u = table.output(&MultiIndex::zero(3)).unwrap();
    for p in 0..6 {
        let plain = net.forward_plain(x.row(p).as_slice().unwrap()).unwrap();
        for o in 0..2 {
            assert!(close(u[[p, o]], plain[o], 1e-14, 1e-15));
        }
    }
}

#[test]
fn first_derivatives_match_finite_differences() {
    let net = random_net(&[2, 6, 6, 1], Activation::Tanh, 42);
    let x = random_points(8, 2, 7);
    let table = forward(&net, x.view(), &IndexSet::full(2, 1)).unwrap();
    let h = 1e-4;
    for p in 0..8 {
        for var in 0..2 {
            let mut up = x.row(p).to_vec();
            let mut down = up.clone();
            up[var] += h;
            down[var] -= h;
            let fd = (net.forward_plain(&up).unwrap()[0] - net.forward_plain(&down).unwrap()[0])
                / (2.0 * h);
            let d = table.output(&MultiIndex::unit(2, var)).unwrap()[[p, 0]];
            assert!(close(d, fd, 1e-6, 1e-9), "point {p} var {var}: {d} vs {fd}");
        }
    }
}

#[test]
fn second_order_matches_two_variable_path() {
    for (seed, act) in [
        (1, Activation::Tanh),
        (2, Activation::Sigmoid),
        (3, Activation::Sin),
    ] {
        let net = random_net(&[2, 6, 5, 6, 1], act, seed);
        let x = random_points(7, 2, seed + 100);
        let general = forward(&net, x.view(), &second_order_closure()).unwrap();
        let special = forward_2d_order2(&net, x.view()).unwrap();
        for layer in 1..=general.layers() {
            for idx in second_order_closure().iter() {
                let a = general.get(layer, idx).unwrap();
                let b = special.get(layer, idx).unwrap();
                let diff = (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
                assert!(diff <= 1e-12, "{act} layer {layer} {idx}: {diff}");
            }
        }
    }
}

#[test]
fn two_variable_path_with_zero_weights_is_zero() {
    let mut net = random_net(&[2, 4, 1], Activation::Tanh, 5);
    net.weights_mut().iter_mut().for_each(|w| w.fill(0.0));
    let table = forward_2d_order2(&net, random_points(3, 2, 1).view()).unwrap();
    for idx in second_order_closure().iter() {
        assert!(table.output(idx).unwrap().iter().all(|&v| v == 0.0));
    }
    assert!(matches!(
        forward_2d_order2(
            &random_net(&[3, 4, 1], Activation::Tanh, 5),
            random_points(3, 3, 1).view()
        ),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn fourth_order_matches_nested_oracle() {
    let net = random_net(&[2, 5, 4, 1], Activation::Tanh, 9);
    let x = random_points(3, 2, 10);
    let closure = IndexSet::full(2, 4);
    let table = forward(&net, x.view(), &closure).unwrap();
    for idx in closure.iter() {
        for p in 0..3 {
            let oracle =
                nested_first_order_oracle(&net, x.row(p).as_slice().unwrap(), idx).unwrap()[0];
            let engine = table.output(idx).unwrap()[[p, 0]];
            assert!(
                close(engine, oracle, 1e-9, 1e-12),
                "{idx} point {p}: {engine} vs {oracle}"
            );
        }
    }
}

#[test]
fn mixed_partials_commute() {
    let net = random_net(&[2, 6, 6, 1], Activation::Sin, 21);
    let x = [0.2, -0.6];
    let table = forward(
        &net,
        array![[0.2, -0.6]].view(),
        &set(&["(1,1)"]).downward_closure(),
    )
    .unwrap();
    let engine = table.output(&mi("(1,1)")).unwrap()[[0, 0]];
    let ab = nested_slots_oracle(&net, &x, &[0, 1]).unwrap()[0];
    let ba = nested_slots_oracle(&net, &x, &[1, 0]).unwrap()[0];
    assert!(close(engine, ab, 1e-9, 1e-12));
    assert!(close(engine, ba, 1e-9, 1e-12));
}

#[test]
fn forward_contract_errors() {
    let net = random_net(&[2, 3, 1], Activation::Tanh, 1);
    let x = random_points(2, 2, 1);
    assert!(matches!(
        forward(&net, x.view(), &set(&["(2,0)"])),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        forward(&net, random_points(2, 3, 1).view(), &IndexSet::full(2, 1)),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        forward(&net, x.view(), &IndexSet::full(3, 1)),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        Propagator::new(&IndexSet::full(1, MAX_ACTIVATION_ORDER as u32)),
        Err(Error::Limit { .. })
    ));
}

#[cfg(debug_assertions)]
#[test]
fn non_finite_reported_with_location() {
    let net = Network::from_parts(
        vec![Activation::Tanh],
        vec![array![[f64::MAX], [1.0]], array![[f64::MAX, 1.0]]],
        vec![array![0.0, 0.0]],
        None,
    )
    .unwrap();
    let err = forward(&net, array![[10.0]].view(), &IndexSet::full(1, 1)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { layer: 1, .. }), "{err}");
}

/// Seeds for `E = Σ_p ½ (D^target u)²`.
fn square_loss(table: &DerivTable, target: &MultiIndex) -> (f64, SeedAdjoints) {
    let mut seeds = zero_seeds(table.closure(), table.points(), 1);
    let d = table.output(target).unwrap().clone();
    let e = 0.5 * d.iter().map(|v| v * v).sum::<f64>();
    seeds.insert(target.clone(), d);
    (e, seeds)
}

#[test]
fn values_only_loss_is_classical_backprop() {
    let net = random_net(&[3, 6, 4, 2], Activation::Sigmoid, 3).with_output_bias();
    let x = random_points(5, 3, 4);
    let closure = IndexSet::full(3, 2);
    let table = forward(&net, x.view(), &closure).unwrap();
    let mut seeds = zero_seeds(&closure, 5, 2);
    let u = table.output(&MultiIndex::zero(3)).unwrap().clone();
    seeds.insert(MultiIndex::zero(3), u.clone());
    let g = backward(&net, &table, &seeds).unwrap();
    let reference = plain_backprop(&net, x.view(), u.view()).unwrap();
    assert!(g.max_abs_diff(&reference) <= 1e-14 * reference.max_abs().max(1.0));
}

#[test]
fn second_derivative_loss_matches_finite_differences() {
    let net = random_net(&[2, 5, 1], Activation::Tanh, 17);
    let x = random_points(4, 2, 18);
    let target = mi("(2,0)");
    let closure = set(&["(2,0)"]).downward_closure();
    let prop = Propagator::new(&closure).unwrap();
    let table = prop.forward(&net, x.view()).unwrap();
    let (_, seeds) = square_loss(&table, &target);
    let g = prop.backward(&net, &table, &seeds).unwrap();
    let fd = fd_weight_gradients(
        &net,
        |n| square_loss(&prop.forward(n, x.view()).unwrap(), &target).0,
        1e-5,
    );
    for (a, b) in g.values().zip(fd.values()) {
        assert!(close(a, b, 1e-6, 1e-9), "{a} vs {b}");
    }
}

#[test]
fn backward_matches_two_variable_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (seed, act) in [
        (4, Activation::Tanh),
        (5, Activation::Sigmoid),
        (6, Activation::Sin),
    ] {
        let net = random_net(&[2, 5, 7, 1], act, seed);
        let x = random_points(6, 2, seed);
        let closure = second_order_closure();
        let seeds: SeedAdjoints = closure
            .iter()
            .map(|s| {
                (
                    s.clone(),
                    Array2::from_shape_simple_fn((6, 1), || rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let general = backward(&net, &forward(&net, x.view(), &closure).unwrap(), &seeds).unwrap();
        let table = forward_2d_order2(&net, x.view()).unwrap();
        let special = backward_2d_order2(&net, &table, &seeds).unwrap();
        assert!(general.max_abs_diff(&special) <= 1e-12, "{act}");

        let zero = backward_2d_order2(&net, &table, &zero_seeds(&closure, 6, 1)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }
}

#[test]
fn backward_is_linear_in_seeds() {
    let net = random_net(&[2, 5, 5, 1], Activation::Tanh, 8);
    let x = random_points(4, 2, 9);
    let closure = IndexSet::full(2, 3);
    let prop = Propagator::new(&closure).unwrap();
    let table = prop.forward(&net, x.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut draw = || -> SeedAdjoints {
        closure
            .iter()
            .map(|s| {
                (
                    s.clone(),
                    Array2::from_shape_simple_fn((4, 1), || rng.random_range(-1.0..1.0)),
                )
            })
            .collect()
    };
    let (s1, s2) = (draw(), draw());
    let sum: SeedAdjoints = s1.iter().map(|(k, v)| (k.clone(), v + &s2[k])).collect();
    let scaled: SeedAdjoints = s1.iter().map(|(k, v)| (k.clone(), v * 2.5)).collect();
    let g1 = prop.backward(&net, &table, &s1).unwrap();
    let g2 = prop.backward(&net, &table, &s2).unwrap();
    let mut g12 = g1.clone();
    g12.add_assign(&g2);
    assert!(
        prop.backward(&net, &table, &sum)
            .unwrap()
            .max_abs_diff(&g12)
            <= 1e-13 * g12.max_abs()
    );
    let mut g1s = g1.clone();
    g1s.scale(2.5);
    assert!(
        prop.backward(&net, &table, &scaled)
            .unwrap()
            .max_abs_diff(&g1s)
            <= 1e-14 * g1s.max_abs()
    );
}

#[test]
fn batch_gradient_is_sum_of_point_gradients() {
    let net = random_net(&[2, 6, 4, 1], Activation::Sigmoid, 31);
    let x = random_points(5, 2, 32);
    let closure = set(&["(2,0)", "(0,2)"]).downward_closure();
    let prop = Propagator::new(&closure).unwrap();
    let table = prop.forward(&net, x.view()).unwrap();
    let (_, seeds) = square_loss(&table, &mi("(0,2)"));
    let batch = prop.backward(&net, &table, &seeds).unwrap();
    let mut summed = Gradients::zeros_like(&net);
    for p in 0..5 {
        let t = prop.forward(&net, x.slice(s![p..p + 1, ..])).unwrap();
        let sp: SeedAdjoints = seeds
            .iter()
            .map(|(k, v)| (k.clone(), v.slice(s![p..p + 1, ..]).to_owned()))
            .collect();
        summed.add_assign(&prop.backward(&net, &t, &sp).unwrap());
    }
    assert!(batch.max_abs_diff(&summed) <= 1e-12 * batch.max_abs().max(1.0));
}

#[test]
fn backward_contract_errors() {
    let net = random_net(&[2, 3, 1], Activation::Tanh, 1);
    let x = random_points(2, 2, 1);
    let closure = IndexSet::full(2, 1);
    let table = forward(&net, x.view(), &closure).unwrap();
    let mut seeds = zero_seeds(&closure, 2, 1);
    seeds.remove(&mi("(0,1)"));
    assert!(matches!(
        backward(&net, &table, &seeds),
        Err(Error::Contract(_))
    ));
    let mut seeds = zero_seeds(&closure, 2, 1);
    seeds.insert(mi("(2,0)"), Array2::zeros((2, 1)));
    assert!(matches!(
        backward(&net, &table, &seeds),
        Err(Error::Contract(_))
    ));
    let seeds = zero_seeds(&closure, 3, 1);
    assert!(matches!(
        backward(&net, &table, &seeds),
        Err(Error::Dimension { .. })
    ));
    let other = Propagator::new(&IndexSet::full(2, 2)).unwrap();
    assert!(matches!(
        other.backward(&net, &table, &zero_seeds(&closure, 2, 1)),
        Err(Error::Contract(_))
    ));
}

#[test]
fn adjoint_table_covers_closure() {
    let net = random_net(&[2, 4, 4, 1], Activation::Tanh, 2);
    let x = random_points(3, 2, 3);
    let closure = IndexSet::full(2, 2);
    let prop = Propagator::new(&closure).unwrap();
    let table = prop.forward(&net, x.view()).unwrap();
    let (_, seeds) = square_loss(&table, &mi("(1,1)"));
    let (g, adj) = prop.backward_with_adjoints(&net, &table, &seeds).unwrap();
    for layer in 1..=2 {
        for idx in &closure {
            let a = adj.get(layer, idx).unwrap();
            assert_eq!(a.dim(), (3, 4));
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }
    assert_eq!(
        g.thresholds[0],
        adj.get(1, &mi("(0,0)")).unwrap().sum_axis(Axis(0))
    );
}

#[test]
fn table_json_dump() {
    let net = random_net(&[2, 2, 1], Activation::Tanh, 2);
    let table = forward(&net, random_points(1, 2, 3).view(), &IndexSet::full(2, 1)).unwrap();
    let v = table.to_json();
    assert_eq!(v["closure"], json!(["(0,0)", "(1,0)", "(0,1)"]));
    assert_eq!(v["layers"][1]["layer"], 2);
    assert!(v["layers"][0]["derivatives"]["(1,0)"][0].is_array());
}

#[test]
fn one_variable_inputs() {
    // Single-column operands make ndarray return column-major products.
    let net = random_net(&[1, 6, 6, 1], Activation::Sigmoid, 21);
    let x = random_points(9, 1, 22);
    let closure = IndexSet::full(1, 3);
    let table = forward(&net, x.view(), &closure).unwrap();
    let h = 1e-4;
    for (p, row) in x.rows().into_iter().enumerate() {
        let f = |d: f64| net.forward_plain(&[row[0] + d]).unwrap()[0];
        let fd = (f(h) - f(-h)) / (2.0 * h);
        let v = table.output(&mi("(1)")).unwrap()[[p, 0]];
        assert!(close(v, fd, 1e-6, 1e-9), "{v} vs {fd}");
    }
    let seeds = zero_seeds(&closure, 9, 1);
    assert_eq!(backward(&net, &table, &seeds).unwrap().max_abs(), 0.0);
}

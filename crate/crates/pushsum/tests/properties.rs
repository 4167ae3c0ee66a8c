use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::Config;

use pushsum::bounds::{
    opt_bound_convex, opt_bound_convex_closed, opt_bound_pl, stability_bound_convex,
    stability_bound_convex_closed, stability_bound_nonconvex, BoundParams,
};
use pushsum::data_io::{parse_libsvm, synth_logistic, write_libsvm};
use pushsum::engine::{run_training, RunData, SamplingMode, Sampler};
use pushsum::mixing::{build_mixing, stationary_distribution, stationary_distribution_dense, STATIONARY_TOL};
use pushsum::objectives::{smoothness_info, LossModel, Quadratic, Sample, SparseVector};
use pushsum::stability::{coupled_run, make_neighbor, OutputIterate};
use pushsum::topology::{build_topology, DirectedGraph, TopologyKind};
use pushsum::{StepSchedule, TrainConfig};

fn config(cases: u32) -> Config {
    Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    }
}

fn sparse_sample(d: usize) -> impl Strategy<Value = Sample> {
    (
        proptest::collection::btree_map(0..d as u32, -3.0f64..3.0, 0..d.min(6)),
        any::<bool>(),
    )
        .prop_map(|(map, pos)| {
            let (indices, values) = map.into_iter().unzip();
            Sample::new(
                SparseVector::new(indices, values),
                if pos { 1.0 } else { -1.0 },
            )
        })
}

fn random_graph() -> impl Strategy<Value = DirectedGraph> {
    (2usize..9).prop_flat_map(|m| {
        proptest::collection::vec((0..m, 0..m), 0..(m * m)).prop_map(move |edges| {
            let edges: BTreeSet<(usize, usize)> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let edges: Vec<(usize, usize)> = edges.into_iter().collect();
            DirectedGraph::new(m, &edges).unwrap()
        })
    })
}

/// Reachability closure by Floyd–Warshall.
fn floyd_warshall_connected(g: &DirectedGraph) -> bool {
    let m = g.m();
    let mut reach = vec![vec![false; m]; m];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for (j, i) in g.edges() {
        reach[j][i] = true;
    }
    for k in 0..m {
        for a in 0..m {
            for b in 0..m {
                if reach[a][k] && reach[k][b] {
                    reach[a][b] = true;
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&x| x))
}

/// Adds a directed ring so the graph is strongly connected.
fn with_ring(g: &DirectedGraph) -> DirectedGraph {
    let m = g.m();
    let mut edges: BTreeSet<(usize, usize)> = g.edges().collect();
    edges.extend((0..m).map(|i| (i, (i + 1) % m)));
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    DirectedGraph::new(m, &edges).unwrap()
}

fn bound_params() -> impl Strategy<Value = (BoundParams, usize)> {
    (
        (0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0, 0.0f64..10.0, 0.1f64..10.0),
        (0.0f64..0.999, 0.05f64..1.0, 1usize..64, 2usize..2000),
        (-4.0f64..0.3, any::<bool>(), 0.01f64..1.0, 1usize..3000),
    )
        .prop_map(|((g, l, c, c_w0, r), (lambda, u, m, n), (log_step, dim, a, t))| {
            let scale = 10f64.powf(log_step) / l;
            let schedule = if dim {
                StepSchedule::Diminishing { v: scale }
            } else {
                StepSchedule::Constant { gamma: scale }
            };
            let p = BoundParams {
                g,
                l,
                c,
                c_w0,
                r,
                delta: u / m as f64,
                lambda,
                m,
                n,
                alpha: Some(a * l),
                schedule,
                init_dist: Some(r),
            };
            (p, t.max(2))
        })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn logistic_gradient_matches_finite_differences(
        w in proptest::collection::vec(-2.0f64..2.0, 5),
        s in sparse_sample(5),
    ) {
        let model = LossModel::logistic(5, 0.01).unwrap();
        let grad = model.gradient(&w, &s).unwrap();
        let h = 1e-6;
        for k in 0..5 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let fd = (model.loss(&wp, &s).unwrap() - model.loss(&wm, &s).unwrap()) / (2.0 * h);
            prop_assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + grad[k].abs()), "{} vs {}", fd, grad[k]);
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences(
        w in proptest::collection::vec(-2.0f64..2.0, 3),
        s in sparse_sample(3),
        shift in -1.0f64..1.0,
    ) {
        let a = vec![3.0, 0.5, 0.0, 0.5, 2.0, 0.2, 0.0, 0.2, 1.0];
        let q = Quadratic::new(3, a, vec![0.3, -0.1, 0.7]).unwrap().with_shift(shift);
        let model = LossModel::Quadratic(q);
        let grad = model.gradient(&w, &s).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let fd = (model.loss(&wp, &s).unwrap() - model.loss(&wm, &s).unwrap()) / (2.0 * h);
            prop_assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + grad[k].abs()));
        }
    }

    #[test]
    fn logistic_loss_is_midpoint_convex(
        x in proptest::collection::vec(-5.0f64..5.0, 4),
        y in proptest::collection::vec(-5.0f64..5.0, 4),
        s in sparse_sample(4),
    ) {
        let model = LossModel::logistic(4, 1e-3).unwrap();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let lhs = model.loss(&mid, &s).unwrap();
        let rhs = 0.5 * (model.loss(&x, &s).unwrap() + model.loss(&y, &s).unwrap());
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn libsvm_round_trip_is_exact(samples in proptest::collection::vec(sparse_sample(30), 0..20)) {
        let mut buf = Vec::new();
        write_libsvm(&samples, &mut buf).unwrap();
        let parsed = parse_libsvm(buf.as_slice(), Some(30)).unwrap();
        prop_assert_eq!(parsed.samples.len(), samples.len());
        for (a, b) in parsed.samples.iter().zip(&samples) {
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(&a.features.indices, &b.features.indices);
            let bits_a: Vec<u64> = a.features.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.features.values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn edge_list_round_trip(g in random_graph()) {
        let text = g.to_edge_list();
        let back = DirectedGraph::read_edge_list(text.as_bytes()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn strong_connectivity_matches_floyd_warshall(g in random_graph()) {
        prop_assert_eq!(g.is_strongly_connected(), floyd_warshall_connected(&g));
    }

    #[test]
    fn mixing_columns_sum_to_one(g in random_graph()) {
        let p = build_mixing(&with_ring(&g)).unwrap();
        for s in p.column_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn power_iteration_matches_dense_solve(g in random_graph()) {
        let p = build_mixing(&with_ring(&g)).unwrap();
        let a = stationary_distribution(&p, STATIONARY_TOL).unwrap();
        let b = stationary_distribution_dense(&p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9, "{:?} vs {:?}", a, b);
        }
    }

    #[test]
    fn neighbor_differs_in_one_position(
        node in 0usize..3,
        idx in 0usize..4,
        seed in any::<u64>(),
    ) {
        let data = synth_logistic(4, 20, 2.0, 9).unwrap();
        let shards: Vec<Vec<Sample>> = data[..12].chunks(4).map(|c| c.to_vec()).collect();
        let pool = data[12..].to_vec();
        let pair = make_neighbor(&shards, node, idx, &pool, seed).unwrap();
        let mut diffs = 0;
        for (a, b) in pair.base.iter().flatten().zip(pair.perturbed.iter().flatten()) {
            if a != b {
                diffs += 1;
            }
        }
        prop_assert!(diffs <= 1);
        prop_assert_eq!(&pair.perturbed[node][idx], &pair.replacement);
        prop_assert!(pool.contains(&pair.replacement));
        prop_assert_eq!(&pair.base, &shards);
    }

    #[test]
    fn bounds_are_nonnegative_and_monotone((p, t) in bound_params(), bump in 1.0f64..3.0) {
        let mut bigger_g = p;
        bigger_g.g *= bump;
        let mut smaller_delta = p;
        smaller_delta.delta /= bump;
        let direct: [fn(&BoundParams, usize) -> f64; 4] = [
            |p, t| stability_bound_convex(p, t).unwrap(),
            |p, t| opt_bound_convex(p, t).unwrap(),
            |p, t| opt_bound_pl(p, t).unwrap(),
            |p, t| stability_bound_nonconvex(p, t.min(200)).unwrap().value,
        ];
        for f in direct {
            let v = f(&p, t);
            prop_assert!(v >= 0.0 && v.is_finite());
            prop_assert!(f(&bigger_g, t) >= v);
            prop_assert!(f(&smaller_delta, t) >= v);
        }
    }

    #[test]
    fn convex_closed_forms_dominate_direct_sums((p, t) in bound_params()) {
        let slack = 1.0 + 1e-12;
        prop_assert!(stability_bound_convex(&p, t).unwrap()
            <= stability_bound_convex_closed(&p, t).unwrap() * slack);
        prop_assert!(opt_bound_convex(&p, t).unwrap()
            <= opt_bound_convex_closed(&p, t).unwrap() * slack);
    }
}

proptest! {
    #![proptest_config(config(16))]

    /// With one node, `Delta_t` only grows on steps that draw the replaced
    /// sample, each time by at most `2 G gamma_t`.
    #[test]
    fn single_node_divergence_envelope(seed in any::<u64>(), idx in 0usize..10, diminishing in any::<bool>()) {
        let data = synth_logistic(6, 30, 3.0, 4).unwrap();
        let model = LossModel::logistic(6, 1e-3).unwrap();
        let shards = vec![data[..10].to_vec()];
        let pool = data[10..].to_vec();
        let pair = make_neighbor(&shards, 0, idx, &pool, seed).unwrap();
        let r = 50.0;
        let info = smoothness_info(&model, &data, r).unwrap();
        let step = 1.5 / info.l;
        let schedule = if diminishing {
            StepSchedule::diminishing(step).unwrap()
        } else {
            StepSchedule::constant(step).unwrap()
        };
        let mut config = TrainConfig::new(300, schedule, seed);
        config.sampling = SamplingMode::SharedIndex;
        config.evaluate_losses = false;
        config.projection_radius = Some(r);
        let p = build_mixing(&build_topology(TopologyKind::FullyConnected, 1).unwrap()).unwrap();
        let trace = coupled_run(&config, &p, &model, &pair, &[], OutputIterate::Last).unwrap();
        let sampler = Sampler::new(seed, SamplingMode::SharedIndex);
        let mut envelope = 0.0;
        for t in 0..300 {
            prop_assert!(trace.deltas[t] <= envelope * (1.0 + 1e-9) + 1e-12);
            if sampler.index(0, t, 10) == idx {
                envelope += 2.0 * info.g * schedule.gamma(t);
            }
        }
        prop_assert!(trace.deltas[300] <= envelope * (1.0 + 1e-9) + 1e-12);
    }
}

#[test]
fn training_is_identical_across_worker_counts() {
    let data = synth_logistic(300, 16 * 20, 2.0, 1).unwrap();
    let shards: Vec<Vec<Sample>> = data.chunks(20).map(|c| c.to_vec()).collect();
    let model = LossModel::logistic(300, 1e-3).unwrap();
    let p = build_mixing(&build_topology(TopologyKind::DiExp, 16).unwrap()).unwrap();
    let config = TrainConfig::new(200, StepSchedule::constant(0.1).unwrap(), 7);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run_training(&config, &p, &model, RunData { shards: &shards, test: &data[..50] }).unwrap()
        })
    };
    let one = run(1);
    let eight = run(8);
    assert_eq!(one, eight);
    let mut a = Vec::new();
    let mut b = Vec::new();
    one.write_csv(&mut a).unwrap();
    eight.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

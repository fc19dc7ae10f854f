use moegcl::egograph::{knn_adjacency, EgoAdjacency};
use moegcl::gcnproj::{gcn_forward, normalize_adjacency, GcnWeights, ProjectionHeads};
use moegcl::mlp::DropoutCtx;
use moegcl::moefusion::{concat_views, fuse, FusedAdjacency, GatingCoefficients};
use moegcl::numkit::{ParamStore, Tape};
use moegcl::Matrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full_sort_knn(z: &Matrix, k: usize) -> Matrix {
    let n = z.rows();
    Matrix::from_fn(n, n, |i, j| {
        let mut order: Vec<usize> = (0..n).filter(|&t| t != i).collect();
        let dist = |t: usize| -> f64 { z.row(i).iter().zip(z.row(t)).map(|(a, b)| (a - b).powi(2)).sum() };
        order.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap().then(a.cmp(&b)));
        if order[..k.min(n - 1)].contains(&j) {
            1.0
        } else {
            0.0
        }
    })
}

fn simplex_rows(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut c = Matrix::from_fn(n, m, |_, _| rng.random_range(0.01..1.0));
    for i in 0..n {
        let s: f64 = c.row(i).iter().sum();
        c.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    c
}

/// Binary adjacency with zero diagonal and exactly `k` ones per row.
fn random_expert(n: usize, k: usize, view: usize, rng: &mut ChaCha8Rng) -> EgoAdjacency {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.shuffle(rng);
        for &j in &others[..k] {
            a.set(i, j, 1.0);
        }
    }
    EgoAdjacency { adjacency: a, k, view }
}

#[test]
fn knn_matches_full_sort_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let z = Matrix::from_fn(50, 2, |_, _| rng.random_range(-1.0..1.0));
    assert_eq!(knn_adjacency(&z, 5, 0).unwrap().adjacency, full_sort_knn(&z, 5));
}

#[test]
fn knn_is_invariant_to_rotation_and_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = Matrix::from_fn(40, 2, |_, _| rng.random_range(-3.0..3.0));
    let (s, c) = 0.7f64.sin_cos();
    let moved = Matrix::from_fn(40, 2, |i, j| {
        let (x, y) = (z.get(i, 0), z.get(i, 1));
        if j == 0 {
            c * x - s * y + 5.0
        } else {
            s * x + c * y - 2.0
        }
    });
    assert_eq!(
        knn_adjacency(&z, 4, 0).unwrap().adjacency,
        knn_adjacency(&moved, 4, 0).unwrap().adjacency
    );
}

#[test]
fn concatenation_places_view_columns_in_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let views: Vec<Matrix> = (0..3).map(|_| Matrix::from_fn(6, 4, |_, _| rng.random())).collect();
    let refs: Vec<&Matrix> = views.iter().collect();
    let cat = concat_views(&refs).unwrap();
    for _ in 0..50 {
        let (m, i, j) = (rng.random_range(0..3), rng.random_range(0..6), rng.random_range(0..4));
        assert_eq!(cat.get(i, m * 4 + j), views[m].get(i, j));
    }
}

#[test]
fn one_hot_gate_selects_the_expert() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let experts: Vec<EgoAdjacency> = (0..3).map(|v| random_expert(7, 3, v, &mut rng)).collect();
    let c = GatingCoefficients {
        coefficients: Matrix::from_fn(7, 3, |_, m| if m == 0 { 1.0 } else { 0.0 }),
    };
    assert_eq!(fuse(&c, &experts).unwrap().adjacency, experts[0].adjacency);
}

#[test]
fn uniform_gate_averages_the_experts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let experts: Vec<EgoAdjacency> = (0..4).map(|v| random_expert(9, 2, v, &mut rng)).collect();
    let c = GatingCoefficients {
        coefficients: Matrix::filled(9, 4, 0.25),
    };
    let fused = fuse(&c, &experts).unwrap().adjacency;
    let mut mean = Matrix::zeros(9, 9);
    for e in &experts {
        mean.axpy(0.25, &e.adjacency);
    }
    assert!(fused.max_abs_diff(&mean) < 1e-15);
}

proptest! {
    #[test]
    fn fused_rows_keep_the_expert_row_sum(seed in any::<u64>(), n in 4usize..20, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let experts: Vec<EgoAdjacency> = (0..m).map(|v| random_expert(n, 3, v, &mut rng)).collect();
        let c = GatingCoefficients { coefficients: simplex_rows(n, m, &mut rng) };
        let fused = fuse(&c, &experts).unwrap().adjacency;
        for i in 0..n {
            prop_assert!((fused.row(i).iter().sum::<f64>() - 3.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn fusion_is_linear_in_the_coefficients(seed in any::<u64>(), n in 3usize..12, m in 1usize..4, a in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let experts: Vec<EgoAdjacency> = (0..m).map(|v| random_expert(n, 2, v, &mut rng)).collect();
        let c1 = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let c2 = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let f = |c: Matrix| fuse(&GatingCoefficients { coefficients: c }, &experts).unwrap().adjacency;
        let lhs = f(c1.scale(a).add(&c2).unwrap());
        let rhs = f(c1).scale(a).add(&f(c2)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn normalization_divides_by_degree_geometric_mean(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random_range(0.0..1.0) });
        let a_hat = normalize_adjacency(&FusedAdjacency { adjacency: delta.clone(), k: 0 }).unwrap();
        let deg: Vec<f64> = (0..n).map(|i| 1.0 + delta.row(i).iter().sum::<f64>()).collect();
        for i in 0..n {
            for j in 0..n {
                let tilde = delta.get(i, j) + if i == j { 1.0 } else { 0.0 };
                prop_assert!((a_hat.get(i, j) * (deg[i] * deg[j]).sqrt() - tilde).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn exact_row_sums_give_scaled_self_looped_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let experts: Vec<EgoAdjacency> = (0..2).map(|v| random_expert(12, 4, v, &mut rng)).collect();
    let c = GatingCoefficients {
        coefficients: simplex_rows(12, 2, &mut rng),
    };
    let fused = fuse(&c, &experts).unwrap();
    let a_hat = normalize_adjacency(&fused).unwrap();
    let expected = Matrix::from_fn(12, 12, |i, j| {
        (fused.adjacency.get(i, j) + if i == j { 1.0 } else { 0.0 }) / 5.0
    });
    assert!(a_hat.max_abs_diff(&expected) < 1e-9);
}

fn run_gcn(a_hat: &Matrix, z: &Matrix, store: &ParamStore, w: &GcnWeights) -> Matrix {
    let mut tape = Tape::new();
    let (a, zv) = (tape.constant(a_hat.clone()), tape.constant(z.clone()));
    let out = gcn_forward(&mut tape, store, a, zv, w, false).unwrap();
    tape.value(out).clone()
}

#[test]
fn identity_weights_and_graph_pass_features_through() {
    let mut store = ParamStore::new();
    let w = GcnWeights {
        w0: store.add("gcn.w0", Matrix::identity(6)),
        w1: store.add("gcn.w1", Matrix::identity(6)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = Matrix::from_fn(5, 6, |_, _| rng.random_range(-1.0..1.0));
    assert_eq!(run_gcn(&Matrix::identity(5), &z, &store, &w), z);
}

#[test]
fn linear_gcn_is_linear_in_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let w = GcnWeights::new(&mut store, 4, 6, &mut rng);
    let expert = random_expert(8, 3, 0, &mut rng);
    let a_hat = normalize_adjacency(&FusedAdjacency {
        adjacency: expert.adjacency,
        k: 3,
    })
    .unwrap();
    let z1 = Matrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
    let z2 = Matrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
    let lhs = run_gcn(&a_hat, &z1.scale(-1.5).add(&z2).unwrap(), &store, &w);
    let rhs = run_gcn(&a_hat, &z1, &store, &w)
        .scale(-1.5)
        .add(&run_gcn(&a_hat, &z2, &store, &w))
        .unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-12);
}

#[test]
fn view_heads_have_separate_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let heads = ProjectionHeads::new(&mut store, 8, 5, 2, &[7], 3, &mut rng).unwrap();
    let z = Matrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let mut drop = DropoutCtx::eval();
    let h1 = heads.project_view(&mut tape, &store, zv, 0, &mut drop).unwrap();
    let h2 = heads.project_view(&mut tape, &store, zv, 1, &mut drop).unwrap();
    assert_ne!(tape.value(h1), tape.value(h2));
}

#[test]
fn default_head_widths_give_128_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let heads = ProjectionHeads::new(&mut store, 512, 512, 2, &[256], 128, &mut rng).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::filled(9, 512, 0.01));
    let out = heads.project_fused(&mut tape, &store, x, &mut DropoutCtx::eval()).unwrap();
    assert_eq!(tape.value(out).shape(), (9, 128));
}

use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use csegeo::cseb::{self, Tensor};
use csegeo::embed::{expand, loss_hard, loss_vertex, posterior, transfer, EmbeddingSet, PixelBatch, Targets};
use csegeo::eval::evaluate_with;
use csegeo::fitter::{fit, make_synthetic, make_teacher, FitConfig, Init, LossKind, Supervision, SyntheticConfig};
use csegeo::fmap::{
    cfrom_pointmap, match_meshes, pointmap_from_c, projection_trace, seed_cinit, spectral_reflection,
    zoomout, FunctionalMap, PointMap, ZoomOutConfig, SEED_RIDGE,
};
use csegeo::geodesics::{approximate_diameter, dijkstra, normalize_mesh, soft_labels, EdgeGraph, SoftLabelCache, DIAMETER_SAMPLES};
use csegeo::io::{parse_obj, write_obj};
use csegeo::linalg::{matmul_nn, matmul_tn, max_abs_diff};
use csegeo::shapes;
use csegeo::{build_operators, eigenbasis, CorrespondenceSet, Mesh, SpectralBasis};

fn small_mesh(kind: usize, seed: u64) -> Mesh {
    match kind % 3 {
        0 => shapes::radial_noise(&shapes::icosphere(2, 1.0), 0.1, seed),
        1 => shapes::bumpy_torus(16, 10, seed),
        _ => {
            let g = shapes::grid(6 + (seed % 4) as usize, 5 + (seed % 3) as usize);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = g
                .vertices()
                .iter()
                .map(|p| [p[0], p[1], 0.05 * rng.gen::<f64>()])
                .collect();
            g.with_vertices(v).unwrap()
        }
    }
}

fn arb_mesh() -> impl Strategy<Value = Mesh> {
    (0..3usize, 0..10_000u64).prop_map(|(k, s)| small_mesh(k, s))
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn obj_export_parses_back(mesh in arb_mesh()) {
        let back = parse_obj(&write_obj(&mesh)).unwrap();
        prop_assert_eq!(back.vertices(), mesh.vertices());
        prop_assert_eq!(back.faces(), mesh.faces());
        prop_assert_eq!(back.id(), mesh.id());
    }

    #[test]
    fn normalization_is_idempotent(mesh in arb_mesh()) {
        let (once, _) = normalize_mesh(&mesh, 2.5).unwrap();
        let (_, scale) = normalize_mesh(&once, 2.5).unwrap();
        prop_assert!((scale - 1.0).abs() < 0.01);
    }

    #[test]
    fn stored_areas_and_normals_match_vertices(mesh in arb_mesh()) {
        let v = mesh.vertices();
        for (f, tri) in mesh.faces().iter().enumerate() {
            let b1 = [0, 1, 2].map(|c| v[tri[1]][c] - v[tri[0]][c]);
            let b2 = [0, 1, 2].map(|c| v[tri[2]][c] - v[tri[0]][c]);
            let n = cross(b1, b2);
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            prop_assert!((0.5 * len - mesh.face_areas()[f]).abs() <= 1e-9);
            for (c, x) in n.iter().enumerate() {
                prop_assert!((x / len - mesh.face_normals()[f][c]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn operator_invariants(mesh in arb_mesh(), seed in any::<u64>()) {
        let ops = build_operators(&mesh).unwrap();
        let k = mesh.num_vertices();
        prop_assert!(ops.stiffness.asymmetry() <= 1e-10);
        let w1 = ops.stiffness.mul_vec(&vec![1.0; k]);
        prop_assert!(w1.iter().all(|x| x.abs() <= 1e-10));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            prop_assert!(ops.stiffness.quadratic_form(&x) >= -1e-9);
        }
        prop_assert!(ops.mass.iter().all(|&a| a > 0.0));
        let total: f64 = ops.mass.iter().sum();
        prop_assert!((total / mesh.total_area() - 1.0).abs() <= 1e-12);

        // W = Σ_f A_f G_fᵀ G_f
        let g = ops.gradient.to_dense();
        let weights: Vec<f64> = ops.face_areas.iter().flat_map(|&a| [a; 3]).collect();
        let weighted = csegeo::linalg::scale_rows(g.as_ref(), &weights);
        let assembled = matmul_tn(g.as_ref(), weighted.as_ref());
        prop_assert!(max_abs_diff(assembled.as_ref(), ops.stiffness.to_dense().as_ref()) <= 1e-10);
    }

    #[test]
    fn basis_invariants(mesh in arb_mesh()) {
        let ops = build_operators(&mesh).unwrap();
        let basis = eigenbasis(&ops, 24).unwrap();
        prop_assert!(basis.orthonormality_error() < 1e-8);
        prop_assert!(basis.residuals(&ops).iter().all(|&r| r < 1e-6));
        prop_assert!(basis.eigenvalues[0] < 1e-8);
        prop_assert!(basis.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let col0 = basis.eigenvectors.col(0);
        let spread = (0..col0.nrows()).map(|i| (col0[i] - col0[0]).abs()).fold(0.0, f64::max);
        prop_assert!(spread <= 1e-8 * col0[0].abs());
    }

    #[test]
    fn low_pass_error_shrinks_with_order(mesh in arb_mesh(), seed in any::<u64>()) {
        let basis = eigenbasis(&build_operators(&mesh).unwrap(), 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..mesh.num_vertices()).map(|_| rng.sample(StandardNormal)).collect();
        let mut last = f64::INFINITY;
        for m in 1..=24 {
            let b = basis.truncated(m).unwrap();
            let rec = b.synthesize(&b.analyze(&r).unwrap()).unwrap();
            let err: f64 = rec.iter().zip(&r).zip(&basis.mass).map(|((x, y), a)| a * (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= last * (1.0 + 1e-12));
            last = err;
        }
    }

    #[test]
    fn spectrum_is_permutation_invariant(mesh in arb_mesh(), seed in any::<u64>()) {
        let order = shapes::random_permutation(mesh.num_vertices(), seed);
        let a = eigenbasis(&build_operators(&mesh).unwrap(), 16).unwrap();
        let b = eigenbasis(&build_operators(&mesh.permuted(&order).unwrap()).unwrap(), 16).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn spectrum_scales_inverse_square(mesh in arb_mesh(), s in 0.2f64..5.0) {
        let a = eigenbasis(&build_operators(&mesh).unwrap(), 12).unwrap();
        let b = eigenbasis(&build_operators(&mesh.scaled(s).unwrap()).unwrap(), 12).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues).skip(1) {
            prop_assert!((y * s * s / x - 1.0).abs() <= 1e-9);
        }
        for (x, y) in a.mass.iter().zip(&b.mass) {
            prop_assert!((y / (s * s * x) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn distance_fields_respect_edges(mesh in arb_mesh(), pick in any::<prop::sample::Index>()) {
        let source = pick.index(mesh.num_vertices());
        let field = dijkstra(&mesh, source, None).unwrap();
        prop_assert_eq!(field.distances[source], 0.0);
        for (u, v) in mesh.edges() {
            let gap = (field.distances[u] - field.distances[v]).abs();
            prop_assert!(gap <= mesh.edge_length(u, v) + 1e-9);
        }
        // a radius covering the whole mesh changes nothing
        let radius = 2.0 * field.eccentricity();
        let truncated = dijkstra(&mesh, source, Some(radius)).unwrap();
        prop_assert_eq!(truncated.distances, field.distances);
    }

    #[test]
    fn distances_follow_relabeling(mesh in arb_mesh(), seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let order = shapes::random_permutation(mesh.num_vertices(), seed);
        let inv = inverse(&order);
        let source = pick.index(mesh.num_vertices());
        let a = dijkstra(&mesh, source, None).unwrap();
        let b = dijkstra(&mesh.permuted(&order).unwrap(), inv[source], None).unwrap();
        for (i, &o) in order.iter().enumerate() {
            prop_assert!((b.distances[i] - a.distances[o]).abs() <= 1e-12);
        }
    }

    #[test]
    fn soft_label_shape(mesh in arb_mesh(), pick in any::<prop::sample::Index>(), frac in 0.02f64..0.5) {
        let center = pick.index(mesh.num_vertices());
        let sigma = frac * approximate_diameter(&mesh, DIAMETER_SAMPLES);
        let field = soft_labels(&mesh, center, sigma).unwrap();
        let total: f64 = field.weights.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        let d = dijkstra(&mesh, center, None).unwrap().distances;
        let mut by_distance: Vec<usize> = (0..d.len()).collect();
        by_distance.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        prop_assert_eq!(by_distance[0], center);
        for w in by_distance.windows(2) {
            prop_assert!(field.weights[w[1]] <= field.weights[w[0]] * (1.0 + 1e-12));
        }
        for (u, v) in mesh.edges() {
            if u == center {
                prop_assert!(field.weights[v] > 0.0);
            } else if v == center {
                prop_assert!(field.weights[u] > 0.0);
            }
        }
    }

    #[test]
    fn evaluation_is_symmetric(mesh in arb_mesh(), seed in any::<u64>()) {
        let k = mesh.num_vertices();
        let pred = shapes::random_permutation(k, seed);
        let truth: Vec<usize> = (0..k).collect();
        let a = evaluate_with(&mesh, &pred, &truth, &[0.3, 0.1, 0.2, 0.05]).unwrap();
        let b = evaluate_with(&mesh, &truth, &pred, &[0.1]).unwrap();
        for (x, y) in a.per_point_errors.iter().zip(&b.per_point_errors) {
            prop_assert!(*x >= 0.0);
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!(a.accuracy_at.windows(2).all(|w| w[0].threshold <= w[1].threshold && w[0].accuracy <= w[1].accuracy));
    }

    #[test]
    fn cseb_round_trip(dims in prop::collection::vec(0usize..5, 0..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.gen::<u64>() >> 2)).collect();
        let tensors = vec![Tensor::new(dims, data).unwrap(), Tensor::vector(&[1.5, -0.0])];
        let back = cseb::decode(&cseb::encode(&tensors)).unwrap();
        prop_assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&tensors) {
            prop_assert_eq!(&a.dims, &b.dims);
            prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn posterior_has_rotation_gauge(seed in any::<u64>(), k in 2usize..40, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = gaussian(&mut rng, k, d);
        let phi = gaussian(&mut rng, 1, d);
        let q = gaussian(&mut rng, d, d).qr().compute_Q();
        let e_rot = e.as_ref() * q.transpose();
        let phi_rot = phi.as_ref() * q.transpose();
        let p = posterior(e.as_ref(), &(0..d).map(|j| phi[(0, j)]).collect::<Vec<_>>()).unwrap();
        let p_rot = posterior(e_rot.as_ref(), &(0..d).map(|j| phi_rot[(0, j)]).collect::<Vec<_>>()).unwrap();
        for (a, b) in p.iter().zip(&p_rot) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn hard_loss_vanishes_along_label_ray(seed in any::<u64>(), k in 2usize..30, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = gaussian(&mut rng, k, d);
        let phi = gaussian(&mut rng, 1, d);
        let label = rng.gen_range(0..k);
        let batch = PixelBatch::new(phi.clone(), vec![label]).unwrap();
        let norm2: f64 = (0..d).map(|j| phi[(0, j)].powi(2)).sum();
        prop_assume!(norm2 > 1e-3);
        let mut last = f64::INFINITY;
        for _ in 0..60 {
            let loss = loss_vertex(e.as_ref(), &batch, &Targets::<csegeo::geodesics::SoftLabelField>::Hard).unwrap().loss;
            prop_assert!(loss < last || loss == 0.0);
            last = loss;
            // push ⟨e_label, φ⟩ down by 1
            for j in 0..d {
                e[(label, j)] -= phi[(0, j)] / norm2;
            }
        }
        prop_assert!(last < 1e-12);
    }

    #[test]
    fn transfer_composes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = small_mesh(1, seed);
        let basis = eigenbasis(&build_operators(&mesh).unwrap(), 10).unwrap();
        let emb = EmbeddingSet { e_hat: gaussian(&mut rng, 10, 3), basis: basis.mesh.clone() };
        let c1 = FunctionalMap { c: gaussian(&mut rng, 8, 10), src: basis.mesh.clone(), dst: basis.mesh.clone() };
        let c2 = FunctionalMap { c: gaussian(&mut rng, 6, 8), src: basis.mesh.clone(), dst: basis.mesh.clone() };
        let stepwise = transfer(&transfer(&emb, &c1).unwrap(), &c2).unwrap();
        let composed = transfer(&emb, &c2.compose(&c1).unwrap()).unwrap();
        let scale = stepwise.e_hat.norm_max();
        prop_assert!(max_abs_diff(stepwise.e_hat.as_ref(), composed.e_hat.as_ref()) <= 1e-12 * scale);
    }
}

fn grid_basis(full: bool) -> (Mesh, SpectralBasis) {
    let mesh = small_mesh(2, 3);
    let m = if full { mesh.num_vertices() } else { 16 };
    let basis = eigenbasis(&build_operators(&mesh).unwrap(), m).unwrap();
    (mesh, basis)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectral_gradient_is_chain_rule(seed in any::<u64>(), full in any::<bool>()) {
        let (mesh, basis) = grid_basis(full);
        let k = mesh.num_vertices();
        let m = basis.order();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = EmbeddingSet { e_hat: gaussian(&mut rng, m, 4), basis: basis.mesh.clone() };
        let labels: Vec<usize> = (0..9).map(|_| rng.gen_range(0..k)).collect();
        let batch = PixelBatch::new(gaussian(&mut rng, 9, 4), labels).unwrap();
        let spectral = loss_hard(&emb, &basis, &batch).unwrap();
        let e = expand(&emb, &basis).unwrap();
        let free = loss_vertex(e.as_ref(), &batch, &Targets::<csegeo::geodesics::SoftLabelField>::Hard).unwrap();
        let projected = matmul_tn(basis.eigenvectors.as_ref(), free.grad_e.as_ref());
        prop_assert!(max_abs_diff(projected.as_ref(), spectral.grad_e_hat.as_ref()) <= 1e-10);
        prop_assert!((spectral.loss - free.loss).abs() <= 1e-9);
    }
}

fn torus_pair(seed: u64) -> (Mesh, Mesh, Vec<usize>) {
    let src = shapes::bumpy_torus(18, 11, seed);
    let order = shapes::random_permutation(src.num_vertices(), seed + 1);
    let dst = src.permuted(&order).unwrap();
    (src, dst, order)
}

fn seed_pairs(src: &Mesh, dst: &Mesh, order: &[usize], count: usize, seed: u64) -> CorrespondenceSet {
    let inv = inverse(order);
    let picks = shapes::random_permutation(src.num_vertices(), seed);
    CorrespondenceSet::new(src, dst, picks[..count].iter().map(|&k| [k, inv[k]]).collect()).unwrap()
}

fn small_schedule() -> ZoomOutConfig {
    ZoomOutConfig {
        start: 8,
        stop: 40,
        step: 4,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn encode_decode_reaches_a_fixed_point(seed in 0u64..1000) {
        let (src, dst, order) = torus_pair(seed);
        let bs = eigenbasis(&build_operators(&src).unwrap(), 24).unwrap();
        let bd = eigenbasis(&build_operators(&dst).unwrap(), 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assignment = order.clone();
        for _ in 0..assignment.len() / 10 {
            let i = rng.gen_range(0..assignment.len());
            assignment[i] = rng.gen_range(0..src.num_vertices());
        }
        let mut pm = PointMap { src_mesh: bs.mesh.clone(), dst_mesh: bd.mesh.clone(), assignment };
        let step = |pm: &PointMap| pointmap_from_c(&bs, &bd, &cfrom_pointmap(&bs, &bd, pm, 0.0).unwrap()).unwrap();
        for _ in 0..20 {
            pm = step(&pm);
        }
        let twice = step(&step(&pm));
        prop_assert!(twice.agreement(&pm.assignment) > 0.99);
    }

    #[test]
    fn isometric_recovery_is_monotone_and_cycle_consistent(seed in 0u64..1000) {
        let (src, dst, order) = torus_pair(seed);
        let cfg = small_schedule();
        let bs = eigenbasis(&build_operators(&src).unwrap(), cfg.stop).unwrap();
        let bd = eigenbasis(&build_operators(&dst).unwrap(), cfg.stop).unwrap();
        let seeds = seed_pairs(&src, &dst, &order, 12, seed + 2);
        let c0 = seed_cinit(&bs, &bd, &seeds, cfg.start, cfg.seed_beta(12, cfg.start), SEED_RIDGE).unwrap();
        let result = zoomout(&bs, &bd, &c0, &cfg, None, Some(&order)).unwrap();
        let rates: Vec<f64> = result.levels.iter().map(|l| l.recovery.unwrap()).collect();
        prop_assert!(rates.windows(2).all(|w| w[0] <= w[1]), "recovery {:?}", rates);
        let back = pointmap_from_c(&bd, &bs, &result.backward).unwrap();
        let forward = &result.pointmap.assignment;
        let moved = (0..forward.len()).filter(|&v| back.assignment[forward[v]] != v).count();
        prop_assert!((moved as f64) < 0.02 * forward.len() as f64);
    }

    #[test]
    fn uniform_scale_leaves_point_map_unchanged(seed in 0u64..1000, power in -2i32..3) {
        let (src, dst, order) = torus_pair(seed);
        let scaled = dst.scaled(2f64.powi(power)).unwrap();
        let cfg = small_schedule();
        let a = match_meshes(&src, &dst, &seed_pairs(&src, &dst, &order, 12, seed), &cfg, None, None).unwrap();
        let b = match_meshes(&src, &scaled, &seed_pairs(&src, &scaled, &order, 12, seed), &cfg, None, None).unwrap();
        prop_assert_eq!(a.result.pointmap.assignment, b.result.pointmap.assignment);
    }

    #[test]
    fn symmetric_projection_never_increases_penalty(seed in any::<u64>(), gamma in prop::sample::select(vec![0.0, 1.0])) {
        let (mesh, pairing) = shapes::mirrored_torus(20, 12);
        let basis = eigenbasis(&build_operators(&mesh).unwrap(), 20).unwrap();
        let refl = spectral_reflection(&basis, &pairing, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = gaussian(&mut rng, 20, 20);
        let partner = gaussian(&mut rng, 20, 20);
        let trace = projection_trace(&mut c, partner.as_ref(), Some((refl.as_ref(), refl.as_ref())), 1.0, gamma, 10);
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", trace);
        prop_assert!(trace[10] < trace[0]);
    }

    #[test]
    fn fitting_is_equivariant_to_relabeling(seed in 0u64..1000) {
        let mesh = small_mesh(1, seed);
        let k = mesh.num_vertices();
        let order = shapes::random_permutation(k, seed + 9);
        let inv = inverse(&order);
        let perm = mesh.permuted(&order).unwrap();
        let a = eigenbasis(&build_operators(&mesh).unwrap(), 32).unwrap();
        let b = eigenbasis(&build_operators(&perm).unwrap(), 32).unwrap();
        let teacher = make_teacher(&a, 6, 12, 1.0, seed).unwrap();
        let batch = make_synthetic(
            &SyntheticConfig { mesh_id: a.mesh.clone(), samples_per_vertex: 1, noise_std: 0.1, label_fraction: 0.5, seed },
            &teacher,
            &a,
        ).unwrap();
        let relabeled = PixelBatch::new(batch.features.clone(), batch.labels.iter().map(|&l| inv[l]).collect()).unwrap();
        let cfg = FitConfig { iterations: 30, init: Init::Zero, ..Default::default() };
        let ea = expand(&fit(&a, &Supervision::hard(batch), &cfg).unwrap().embedding, &a).unwrap();
        let eb = expand(&fit(&b, &Supervision::hard(relabeled), &cfg).unwrap().embedding, &b).unwrap();
        let pulled = Mat::from_fn(k, ea.ncols(), |i, j| ea[(order[i], j)]);
        prop_assert!(max_abs_diff(pulled.as_ref(), eb.as_ref()) <= 1e-8);
    }

    #[test]
    fn hard_fit_descends_monotonically(seed in 0u64..1000) {
        let mesh = small_mesh(1, seed);
        let basis = eigenbasis(&build_operators(&mesh).unwrap(), 32).unwrap();
        let teacher = make_teacher(&basis, 6, 12, 1.0, seed).unwrap();
        let batch = make_synthetic(
            &SyntheticConfig { mesh_id: basis.mesh.clone(), samples_per_vertex: 1, noise_std: 0.0, label_fraction: 1.0, seed },
            &teacher,
            &basis,
        ).unwrap();
        let cfg = FitConfig { iterations: 100, step_size: 0.5, init: Init::Random { scale: None }, seed, ..Default::default() };
        let result = fit(&basis, &Supervision::hard(batch), &cfg).unwrap();
        prop_assert!(result.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn vanishing_sigma_tracks_hard_fit(seed in 0u64..1000) {
        let mesh = small_mesh(0, seed);
        let basis = eigenbasis(&build_operators(&mesh).unwrap(), 24).unwrap();
        let teacher = make_teacher(&basis, 4, 12, 1.0, seed).unwrap();
        let batch = make_synthetic(
            &SyntheticConfig { mesh_id: basis.mesh.clone(), samples_per_vertex: 1, noise_std: 0.1, label_fraction: 0.3, seed },
            &teacher,
            &basis,
        ).unwrap();
        let cache = SoftLabelCache::new(&mesh);
        let hard = FitConfig { iterations: 50, seed, ..Default::default() };
        let soft = FitConfig { loss: LossKind::Soft { sigma: 1e-4, kernel: Default::default() }, ..hard.clone() };
        let h = fit(&basis, &Supervision::hard(batch.clone()), &hard).unwrap().history;
        let s = fit(&basis, &Supervision::for_loss(batch, soft.loss, Some(&cache)).unwrap(), &soft).unwrap().history;
        for (a, b) in h.iter().zip(&s) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn edge_graph_distances_are_symmetric() {
    let mesh = small_mesh(0, 5);
    let graph = EdgeGraph::new(&mesh);
    for (s, t) in [(0, 100), (17, 3), (50, 161)] {
        let a = graph.distance_between(s, t).unwrap();
        let b = graph.distance_between(t, s).unwrap();
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn full_basis_loss_matches_free_embedding() {
    let (_, basis) = grid_basis(true);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let emb = EmbeddingSet { e_hat: gaussian(&mut rng, basis.order(), 3), basis: basis.mesh.clone() };
    let batch = PixelBatch::new(gaussian(&mut rng, 5, 3), vec![0, 3, 7, 7, 11]).unwrap();
    let e = matmul_nn(basis.eigenvectors.as_ref(), emb.e_hat.as_ref());
    let free = loss_vertex(e.as_ref(), &batch, &Targets::<csegeo::geodesics::SoftLabelField>::Hard).unwrap();
    assert!((loss_hard(&emb, &basis, &batch).unwrap().loss - free.loss).abs() <= 1e-9);
}

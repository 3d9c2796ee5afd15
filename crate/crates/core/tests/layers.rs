use au_graph::attention::{attend_heads, attention_coefficients, channel_branch, mh_gat_layer, pixel_branch, GatParams, NodeSet, PixelParams};
use au_graph::fusion::{gfc, hierarchical_fuse, FusionParams, GfcParams};
use au_graph::numerics::gradcheck::{check_with, Options};
use au_graph::numerics::{Tape, Tensor, Var};
use au_graph::params::{Bound, ParamStore};
use au_graph::prior::{compute_prior, read_adjacency_csv};
use au_graph::relgraph::{init_adjacency, relational_update, RelationalLayer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn weighted_sum(t: &Tape, v: Var, seed: u64) -> au_graph::Result<Var> {
    let shape = t.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(rand_tensor(&mut rng, &shape));
    t.sum(t.mul(v, w)?)
}

/// Gradient check over every store parameter plus `extra` inputs.
fn check_store(
    store: &ParamStore,
    extra: &[Tensor],
    f: impl Fn(&Tape, &Bound, &[Var]) -> au_graph::Result<Var>,
) -> f64 {
    let np = store.len();
    let mut inputs: Vec<Tensor> = store.params().iter().map(|p| p.tensor.clone()).collect();
    inputs.extend_from_slice(extra);
    let r = check_with(
        &inputs,
        |t, v| f(t, &Bound::from_vars(v[..np].to_vec()), &v[np..]),
        Options::default(),
    )
    .unwrap();
    r.max_rel_err()
}

fn permute_rows(m: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| m.row(p).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn gat(seed: u64, width: usize, dim: usize, heads: usize) -> (ParamStore, GatParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = GatParams::new(&mut store, "g", width, dim, heads, &mut rng).unwrap();
    (store, p)
}

// ---- attention ---------------------------------------------------------

#[test]
fn gat_layer_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for inst in 0..20 {
        let count = rng.random_range(2..9);
        let width = rng.random_range(1..6);
        let heads = rng.random_range(1..4);
        let dim = heads * rng.random_range(1..4);
        let (store, params) = gat(inst, width, dim, heads);
        let x = rand_tensor(&mut rng, &[count, width]);
        let mut perm: Vec<usize> = (0..count).collect();
        perm.shuffle(&mut rng);

        let tape = Tape::new();
        let bound = store.bind(&tape);
        let run = |m: Tensor| {
            let nodes = NodeSet::new(&tape, tape.constant(m)).unwrap();
            tape.value(mh_gat_layer(&tape, &bound, &nodes, &params).unwrap())
        };
        let y = run(x.clone());
        let y_perm = run(permute_rows(&x, &perm));
        assert!(close(y_perm.data(), permute_rows(&y, &perm).data(), 1e-12), "instance {inst}");
    }
}

#[test]
fn attention_rows_are_stochastic_on_every_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for inst in 0..20 {
        let count = rng.random_range(1..12);
        let (store, params) = gat(100 + inst, 4, 6, 3);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = Tensor::from_fn(&[count, 4], |_| rng.random_range(-5.0..5.0));
        let nodes = NodeSet::new(&tape, tape.constant(x)).unwrap();
        for head in 0..3 {
            let a = tape.value(attention_coefficients(&tape, &bound, &nodes, &params, head).unwrap());
            for row in a.data().chunks(count) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}

#[test]
fn zero_queries_reduce_to_mean_pooling() {
    // With zero query maps every score is 0, each row of alpha is uniform,
    // and each node receives ReLU(concat_l(mean(X Uv_l)) Uc).
    let (count, width, dim, heads) = (5, 3, 4, 2);
    let (mut store, params) = gat(12, width, dim, heads);
    for &q in &params.query {
        *store.get_mut(q) = Tensor::zeros(&[width, dim / heads]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_tensor(&mut rng, &[count, width]);

    let d = dim / heads;
    let mut joined = vec![0.0; dim];
    for (l, &vid) in params.value.iter().enumerate() {
        let uv = store.get(vid);
        for e in 0..d {
            let mut acc = 0.0;
            for i in 0..count {
                for w in 0..width {
                    acc += x.at(&[i, w]) * uv.at(&[w, e]);
                }
            }
            joined[l * d + e] = acc / count as f64;
        }
    }
    let uc = store.get(params.out);
    let expected: Vec<f64> = (0..width)
        .map(|w| (0..dim).map(|e| joined[e] * uc.at(&[e, w])).sum::<f64>().max(0.0))
        .collect();

    let tape = Tape::new();
    let bound = store.bind(&tape);
    let nodes = NodeSet::new(&tape, tape.constant(x)).unwrap();
    let y = tape.value(mh_gat_layer(&tape, &bound, &nodes, &params).unwrap());
    for row in y.data().chunks(width) {
        assert!(close(row, &expected, 1e-12));
    }
}

#[test]
fn heads_do_not_share_parameters() {
    let (mut store, params) = gat(14, 3, 6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = rand_tensor(&mut rng, &[4, 3]);
    let heads_of = |store: &ParamStore| {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let nodes = NodeSet::new(&tape, tape.constant(x.clone())).unwrap();
        let (outs, _) = attend_heads(&tape, &bound, &nodes, &params).unwrap();
        outs.iter().map(|&o| tape.value(o)).collect::<Vec<_>>()
    };
    let before = heads_of(&store);
    *store.get_mut(params.key[1]) = rand_tensor(&mut rng, &[3, 2]);
    *store.get_mut(params.value[1]) = rand_tensor(&mut rng, &[3, 2]);
    let after = heads_of(&store);
    assert_eq!(before[0], after[0]);
    assert_eq!(before[2], after[2]);
    assert_ne!(before[1], after[1]);
}

#[test]
fn channel_branch_is_channel_equivariant() {
    let (c, h, w) = (5, 3, 2);
    let (store, params) = gat(16, h * w, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let map = rand_tensor(&mut rng, &[c, h, w]);
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut rng);
    let flat = |t: &Tensor| t.clone().reshaped(vec![c, h * w]).unwrap();

    let tape = Tape::new();
    let bound = store.bind(&tape);
    let y = tape.value(channel_branch(&tape, &bound, tape.constant(map.clone()), &params).unwrap());
    assert_eq!(y.shape(), &[c, h, w]);
    let pm = permute_rows(&flat(&map), &perm).reshaped(vec![c, h, w]).unwrap();
    let yp = tape.value(channel_branch(&tape, &bound, tape.constant(pm), &params).unwrap());
    assert!(close(flat(&yp).data(), permute_rows(&flat(&y), &perm).data(), 1e-12));
}

#[test]
fn pixel_branch_keeps_extent_and_maps_zero_to_zero() {
    for size in [4, 5, 8] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        let params = PixelParams::new(&mut store, "p", 3, 4, 2, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let zero = tape.value(pixel_branch(&tape, &bound, tape.constant(Tensor::zeros(&[3, size, size])), &params).unwrap());
        assert_eq!(zero.shape(), &[3, size, size]);
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let x = rand_tensor(&mut rng, &[3, size, size]);
        let y = tape.value(pixel_branch(&tape, &bound, tape.constant(x), &params).unwrap());
        assert_eq!(y.shape(), &[3, size, size]);
    }
}

#[test]
fn attention_gradients() {
    let (store, params) = gat(18, 3, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = rand_tensor(&mut rng, &[4, 3]);
    let err = check_store(&store, &[x], |t, b, v| {
        let nodes = NodeSet::new(t, v[0])?;
        weighted_sum(t, mh_gat_layer(t, b, &nodes, &params)?, 1)
    });
    assert!(err < 1e-6, "{err}");

    let mut store = ParamStore::new();
    let params = PixelParams::new(&mut store, "p", 2, 2, 1, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, &[2, 5, 5]);
    let err = check_store(&store, &[x], |t, b, v| weighted_sum(t, pixel_branch(t, b, v[0], &params)?, 2));
    assert!(err < 1e-6, "{err}");
}

// ---- relational graph --------------------------------------------------

fn rel_layer(seed: u64, n: usize, width: usize, a: Option<Tensor>) -> (ParamStore, RelationalLayer) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = RelationalLayer::new(&mut store, "rel", width, a, n, &mut rng).unwrap();
    (store, layer)
}

#[test]
fn relational_update_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for inst in 0..10 {
        let n = rng.random_range(1..7);
        let f = rng.random_range(1..5);
        let a = rand_tensor(&mut rng, &[n, n]);
        let (store, layer) = rel_layer(inst, n, f, Some(a.clone()));
        let v = rand_tensor(&mut rng, &[n, f]);

        let mapped: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let wi = store.get(layer.node_maps[i]);
                (0..f).map(|e| (0..f).map(|k| v.at(&[i, k]) * wi.at(&[k, e])).sum()).collect()
            })
            .collect();
        let mut expected = vec![0.0; n * f];
        for i in 0..n {
            for e in 0..f {
                let mut acc = mapped[i][e];
                for j in 0..n {
                    if j != i {
                        acc += a.at(&[i, j]) * mapped[j][e];
                    }
                }
                expected[i * f + e] = acc;
            }
        }
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let out = tape.value(relational_update(&tape, &bound, tape.constant(v), &layer).unwrap());
        assert!(close(out.data(), &expected, 1e-12), "instance {inst}");
    }
}

#[test]
fn relational_update_is_linear_in_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, f) = (4, 3);
    let (store, layer) = rel_layer(22, n, f, Some(rand_tensor(&mut rng, &[n, n])));
    let (x, y) = (rand_tensor(&mut rng, &[n, f]), rand_tensor(&mut rng, &[n, f]));
    let (alpha, beta) = (1.7, -0.6);
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let run = |t: Tensor| tape.value(relational_update(&tape, &bound, tape.constant(t), &layer).unwrap());
    let combo = Tensor::from_fn(&[n, f], |k| alpha * x.data()[k] + beta * y.data()[k]);
    let lhs = run(combo);
    let (fx, fy) = (run(x), run(y));
    let rhs: Vec<f64> = fx.data().iter().zip(fy.data()).map(|(a, b)| alpha * a + beta * b).collect();
    assert!(close(lhs.data(), &rhs, 1e-10));
}

#[test]
fn relational_gradients_reach_the_adjacency() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (n, f) = (3, 2);
    let (store, layer) = rel_layer(24, n, f, Some(rand_tensor(&mut rng, &[n, n])));
    let v = rand_tensor(&mut rng, &[n, f]);
    let err = check_store(&store, std::slice::from_ref(&v), |t, b, x| weighted_sum(t, relational_update(t, b, x[0], &layer)?, 3));
    assert!(err < 1e-6, "{err}");

    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = relational_update(&tape, &bound, tape.constant(v), &layer).unwrap();
    tape.backward(weighted_sum(&tape, out, 3).unwrap()).unwrap();
    let grads = bound.grads(&tape);
    let a_grad = &grads[layer.adjacency.unwrap().index()];
    for i in 0..n {
        for j in 0..n {
            let g = a_grad[i * n + j];
            if i == j {
                assert_eq!(g, 0.0);
            } else {
                assert!(g != 0.0);
            }
        }
    }
}

#[test]
fn adjacency_starts_from_the_prior_csv() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let labels: Vec<Vec<u8>> = (0..300)
        .map(|_| {
            let a = rng.random_bool(0.4) as u8;
            let b = if rng.random_bool(0.8) { a } else { 1 - a };
            vec![a, b, rng.random_bool(0.3) as u8]
        })
        .collect();
    let prior = compute_prior(&labels, 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prior.csv");
    prior.write_csv(&path).unwrap();
    let from_csv = read_adjacency_csv(&path).unwrap();
    let init = init_adjacency(&prior, 2);
    assert_eq!(init.len(), 2);
    for a in &init {
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { from_csv.at(&[i, j]) };
                assert!((a.at(&[i, j]) - want).abs() <= 5e-10);
            }
        }
    }
}

// ---- fusion ------------------------------------------------------------

fn gfc_params(seed: u64, width: usize, has_a: bool, has_b: bool) -> (ParamStore, GfcParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = GfcParams::new(&mut store, "gfc", width, has_a, has_b, &mut rng).unwrap();
    (store, p)
}

fn matvec(x: &[f64], w: &Tensor) -> Vec<f64> {
    let out = w.shape()[1];
    (0..out).map(|e| x.iter().enumerate().map(|(k, v)| v * w.at(&[k, e])).sum()).collect()
}

fn unit(x: Vec<f64>) -> Vec<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.into_iter().map(|v| v / n).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn gfc_matches_step_by_step_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let (rows, f) = (3, 4);
    let (store, p) = gfc_params(31, f, true, true);
    let (sa, sb) = (p.a.unwrap(), p.b.unwrap());
    let a = rand_tensor(&mut rng, &[rows, f]);
    let b = rand_tensor(&mut rng, &[rows, f]);
    let mut expected = Vec::new();
    let mut gates = Vec::new();
    for r in 0..rows {
        let ca = unit(matvec(a.row(r), store.get(sa.content)));
        let cb = unit(matvec(b.row(r), store.get(sb.content)));
        let ga = matvec(a.row(r), store.get(sa.gate));
        let gb = matvec(b.row(r), store.get(sb.gate));
        for e in 0..f {
            let beta = sigmoid(ga[e] + gb[e]);
            gates.push(beta);
            expected.push(beta * ca[e] + (1.0 - beta) * cb[e]);
        }
    }
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let out = gfc(&tape, &bound, Some(tape.constant(a)), Some(tape.constant(b)), &p)
        .unwrap()
        .unwrap();
    assert!(close(tape.value(out.fused).data(), &expected, 1e-12));
    assert!(close(tape.value(out.gate).data(), &gates, 1e-12));
}

#[test]
fn gfc_saturated_gate_selects_one_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let f = 3;
    let (mut store, p) = gfc_params(33, f, true, true);
    let (sa, sb) = (p.a.unwrap(), p.b.unwrap());
    *store.get_mut(sb.gate) = Tensor::zeros(&[f, f]);
    let a = Tensor::full(&[1, f], 1.0);
    let b = rand_tensor(&mut rng, &[1, f]);
    for (scale, pick_a) in [(1e3, true), (-1e3, false)] {
        *store.get_mut(sa.gate) = Tensor::full(&[f, f], scale);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let out = gfc(&tape, &bound, Some(tape.constant(a.clone())), Some(tape.constant(b.clone())), &p)
            .unwrap()
            .unwrap();
        let want = if pick_a {
            unit(matvec(a.row(0), store.get(sa.content)))
        } else {
            unit(matvec(b.row(0), store.get(sb.content)))
        };
        assert!(close(tape.value(out.fused).data(), &want, 1e-12));
    }
}

#[test]
fn gfc_is_a_bounded_convex_combination() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for inst in 0..100 {
        let rows = rng.random_range(1..5);
        let f = rng.random_range(1..7);
        let (store, p) = gfc_params(1000 + inst, f, true, true);
        let (sa, sb) = (p.a.unwrap(), p.b.unwrap());
        let scale = [0.1, 1.0, 10.0][inst as usize % 3];
        let a = Tensor::from_fn(&[rows, f], |_| scale * rng.random_range(-1.0..1.0));
        let b = Tensor::from_fn(&[rows, f], |_| scale * rng.random_range(-1.0..1.0));
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let out = gfc(&tape, &bound, Some(tape.constant(a.clone())), Some(tape.constant(b.clone())), &p)
            .unwrap()
            .unwrap();
        let fused = tape.value(out.fused);
        for r in 0..rows {
            let ca = unit(matvec(a.row(r), store.get(sa.content)));
            let cb = unit(matvec(b.row(r), store.get(sb.content)));
            let row = fused.row(r);
            for e in 0..f {
                let (lo, hi) = (ca[e].min(cb[e]), ca[e].max(cb[e]));
                assert!(row[e] >= lo - 1e-9 && row[e] <= hi + 1e-9, "instance {inst}");
            }
            for e in 0..f {
                assert!(row[e].abs() <= ca[e].abs().max(cb[e].abs()) + 1e-9, "instance {inst}");
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 2f64.sqrt() + 1e-9, "instance {inst}: norm {norm}");
        }
    }
}

#[test]
fn row_constant_gate_keeps_unit_norm_bound() {
    // Gate maps with identical columns give one beta per row, and then the
    // triangle inequality bounds the fused norm by one.
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for inst in 0..100 {
        let f = rng.random_range(1..7);
        let (mut store, p) = gfc_params(2000 + inst, f, true, true);
        for side in [p.a.unwrap(), p.b.unwrap()] {
            let col: Vec<f64> = (0..f).map(|_| rng.random_range(-2.0..2.0)).collect();
            *store.get_mut(side.gate) = Tensor::from_fn(&[f, f], |k| col[k / f]);
        }
        let a = rand_tensor(&mut rng, &[2, f]);
        let b = rand_tensor(&mut rng, &[2, f]);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let out = gfc(&tape, &bound, Some(tape.constant(a)), Some(tape.constant(b)), &p)
            .unwrap()
            .unwrap();
        for row in tape.value(out.fused).data().chunks(f) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-9, "instance {inst}: norm {norm}");
        }
    }
}

fn fusion(seed: u64, f: usize, og: bool, cg: bool, pg: bool) -> (ParamStore, FusionParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = FusionParams::new(&mut store, "fuse", f, og, cg, pg, &mut rng).unwrap();
    (store, p)
}

#[test]
fn hierarchical_fusion_keeps_aus_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (n, f) = (4, 3);
    let (store, p) = fusion(36, f, true, true, true);
    let v = rand_tensor(&mut rng, &[n, f]);
    let globals: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[1, f])).collect();
    let run = |v: Tensor| {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let g: Vec<Var> = globals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = hierarchical_fuse(&tape, &bound, tape.constant(v), Some(g[0]), Some(g[1]), Some(g[2]), &p).unwrap();
        tape.value(out.features)
    };
    let base = run(v.clone());
    let mut changed = v.clone();
    for e in 0..f {
        changed.data_mut()[2 * f + e] += 0.5;
    }
    let moved = run(changed);
    for i in 0..n {
        if i == 2 {
            assert_ne!(base.row(i), moved.row(i));
        } else {
            assert_eq!(base.row(i), moved.row(i));
        }
    }
}

#[test]
fn saturated_chain_passes_local_features_through() {
    // Every gate forced to one: the output is the normalized, mapped local feature.
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let (n, f) = (3, 2);
    let (mut store, p) = fusion(38, f, true, true, true);
    let local_a = p.local.a.unwrap();
    for cell in [&p.global_pair, &p.global, &p.local] {
        for side in [cell.a, cell.b].into_iter().flatten() {
            *store.get_mut(side.gate) = Tensor::zeros(&[f, f]);
        }
    }
    *store.get_mut(local_a.gate) = Tensor::full(&[f, f], 1e3);
    let v = Tensor::full(&[n, f], 1.0);
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let g: Vec<Var> = (0..3).map(|_| tape.constant(rand_tensor(&mut rng, &[1, f]))).collect();
    let out = hierarchical_fuse(&tape, &bound, tape.constant(v.clone()), Some(g[0]), Some(g[1]), Some(g[2]), &p).unwrap();
    let got = tape.value(out.features);
    for i in 0..n {
        let want = unit(matvec(v.row(i), store.get(local_a.content)));
        assert!(close(got.row(i), &want, 1e-12));
    }
    assert!(out.gates.iter().all(Option::is_some));
}

#[test]
fn ablated_globals_drop_cells_and_parameters() {
    let (store, p) = fusion(39, 2, false, false, false);
    assert!(p.global_pair.a.is_none() && p.global.a.is_none() && p.local.b.is_none());
    assert!(store.names().all(|n| n.starts_with("fuse.au.a")));
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let v = tape.constant(Tensor::from_fn(&[2, 2], |i| i as f64 + 1.0));
    let out = hierarchical_fuse(&tape, &bound, v, None, None, None, &p).unwrap();
    assert!(out.gates[0].is_none() && out.gates[1].is_none());
}

#[test]
fn fusion_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let f = 3;
    let (store, p) = gfc_params(41, f, true, true);
    let inputs = [rand_tensor(&mut rng, &[2, f]), rand_tensor(&mut rng, &[2, f])];
    let err = check_store(&store, &inputs, |t, b, v| {
        let out = gfc(t, b, Some(v[0]), Some(v[1]), &p)?.expect("both operands");
        weighted_sum(t, out.fused, 4)
    });
    assert!(err < 1e-6, "{err}");

    for (og, cg, pg) in [(true, true, true), (false, true, false), (true, false, false)] {
        let (store, p) = fusion(42, f, og, cg, pg);
        let mut inputs = vec![rand_tensor(&mut rng, &[3, f])];
        inputs.extend((0..3).map(|_| rand_tensor(&mut rng, &[1, f])));
        let err = check_store(&store, &inputs, |t, b, v| {
            let pick = |on: bool, x: Var| on.then_some(x);
            let out = hierarchical_fuse(t, b, v[0], pick(og, v[1]), pick(cg, v[2]), pick(pg, v[3]), &p)?;
            weighted_sum(t, out.features, 5)
        });
        assert!(err < 1e-6, "{og} {cg} {pg}: {err}");
    }
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::graph::{Station, TransitGraph};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn graph(n: usize, edges: &[(usize, usize)], self_loops: bool) -> TransitGraph {
    let stations = (0..n).map(|i| Station::new(format!("n{i}"), 0.0, i as f64 * 0.01)).collect();
    let edges: Vec<(String, String)> = edges.iter().map(|&(a, b)| (format!("n{a}"), format!("n{b}"))).collect();
    TransitGraph::build(stations, &edges, self_loops).unwrap()
}

fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, LayerError> {
    let (r, c) = tape.value(out).dims().unwrap();
    let w = tape.constant(random(&mut rng(seed), r, c, 1.0));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---- decomposition ----

#[test]
fn decompose_examples() {
    let cfg = |k| DecompositionConfig { kernel: k };
    let (t, r) = decompose_values(&Tensor::row(vec![5.0; 4]), cfg(3)).unwrap();
    assert_eq!(t.data(), &[5.0; 4]);
    assert_eq!(r.data(), &[0.0; 4]);

    let x = Tensor::matrix(2, 3, vec![0.3, -1.7, 2.2, 9.0, 1.0, 4.5]);
    let (t, r) = decompose_values(&x, cfg(1)).unwrap();
    assert_eq!(t, x);
    assert!(r.data().iter().all(|&v| v == 0.0));

    let (t, r) = decompose_values(&Tensor::row(vec![1.0, 2.0, 3.0, 4.0]), cfg(3)).unwrap();
    for (a, b) in t.data().iter().zip([4.0 / 3.0, 2.0, 3.0, 11.0 / 3.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    for (k, v) in r.data().iter().enumerate() {
        assert_eq!(*v, (k + 1) as f64 - t.data()[k]);
    }
    assert!(matches!(decompose_values(&x, cfg(4)), Err(LayerError::Config(_))));
    assert!(matches!(decompose_values(&x, cfg(0)), Err(LayerError::Config(_))));
}

/// Edge-padded moving average written out directly.
fn moving_average(x: &[f64], k: usize) -> Vec<f64> {
    let h = (k / 2) as isize;
    let n = x.len() as isize;
    (0..n).map(|t| (t - h..=t + h).map(|s| x[s.clamp(0, n - 1) as usize]).sum::<f64>() / k as f64).collect()
}

proptest! {
    #[test]
    fn decompose_matches_moving_average(row in prop::collection::vec(-50.0f64..50.0, 1..25), half in 0usize..4) {
        let k = 2 * half + 1;
        let (t, r) = decompose_values(&Tensor::row(row.clone()), DecompositionConfig { kernel: k }).unwrap();
        for ((a, b), (x, res)) in t.data().iter().zip(moving_average(&row, k)).zip(row.iter().zip(r.data())) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            prop_assert_eq!(*res, x - a);
        }
    }

    #[test]
    fn decompose_reconstructs_counts(row in prop::collection::vec(0u32..5000, 1..25), half in 0usize..4) {
        let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let (t, r) = decompose_values(&Tensor::row(x.clone()), DecompositionConfig { kernel: 2 * half + 1 }).unwrap();
        for ((a, b), o) in t.data().iter().zip(r.data()).zip(&x) {
            prop_assert_eq!(a + b, *o);
        }
    }
}

// ---- GRU ----

/// Textbook cell on one vector, weights indexed as stored (`input x hidden`).
fn gru_oracle(x: &[f64], h: &[f64], p: &GruParams) -> Vec<f64> {
    let hid = h.len();
    let lin = |w: &Tensor, u: &Tensor, b: &Tensor, k: usize, gate: Option<&[f64]>| {
        let wx: f64 = x.iter().enumerate().map(|(i, xi)| xi * w.get(i, k)).sum();
        let uh: f64 = h.iter().enumerate().map(|(j, hj)| hj * u.get(j, k)).sum();
        wx + gate.map_or(uh, |r| r[k] * uh) + b.get(0, k)
    };
    let z: Vec<f64> = (0..hid).map(|k| sig(lin(&p.w_z, &p.u_z, &p.b_z, k, None))).collect();
    let r: Vec<f64> = (0..hid).map(|k| sig(lin(&p.w_r, &p.u_r, &p.b_r, k, None))).collect();
    let c: Vec<f64> = (0..hid).map(|k| lin(&p.w_h, &p.u_h, &p.b_h, k, Some(&r)).tanh()).collect();
    (0..hid).map(|k| (1.0 - z[k]) * h[k] + z[k] * c[k]).collect()
}

fn run_step(x: &Tensor, h: &Tensor, p: &GruParams) -> Tensor {
    let mut tape = Tape::new();
    let (xv, hv) = (tape.constant(x.clone()), tape.constant(h.clone()));
    let pv = p.on_tape(&mut tape);
    let out = gru_step(&mut tape, xv, hv, &pv).unwrap();
    tape.value(out).clone()
}

#[test]
fn gru_zero_params_halves_state() {
    let p = GruParams::zeros(1, 1);
    let h = run_step(&Tensor::scalar(0.7), &Tensor::scalar(1.0), &p);
    assert_eq!(h.data(), &[0.5]);
}

#[test]
fn gru_saturated_update_gate_takes_candidate() {
    let mut p = GruParams::init(&mut rng(3), 2, 3);
    p.b_z = Tensor::filled(1, 3, 40.0);
    let x = Tensor::row(vec![0.4, -0.2]);
    let h = Tensor::row(vec![0.9, -0.8, 0.1]);
    let out = run_step(&x, &h, &p);
    let mut q = p.clone();
    q.b_z = Tensor::filled(1, 3, f64::INFINITY);
    let candidate = gru_oracle(x.data(), h.data(), &q);
    for (a, b) in out.data().iter().zip(&candidate) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn gru_step_matches_oracle_per_row() {
    let mut g = rng(5);
    let p = GruParams::init(&mut g, 3, 4);
    let p = GruParams { b_z: random(&mut g, 1, 4, 0.5), b_h: random(&mut g, 1, 4, 0.5), ..p };
    let x = random(&mut g, 5, 3, 1.0);
    let h = random(&mut g, 5, 4, 1.0);
    let out = run_step(&x, &h, &p);
    for r in 0..5 {
        let want = gru_oracle(x.row_slice(r), h.row_slice(r), &p);
        for (a, b) in out.row_slice(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
}

#[test]
fn gru_shape_errors() {
    let p = GruParams::zeros(2, 3);
    let mut tape = Tape::new();
    let pv = p.on_tape(&mut tape);
    let x = tape.constant(Tensor::zeros(1, 3));
    let h = tape.constant(Tensor::zeros(1, 3));
    assert!(matches!(gru_step(&mut tape, x, h, &pv), Err(LayerError::Contract(_))));
    let mut bad = p.clone();
    bad.u_h = Tensor::zeros(2, 2);
    assert!(bad.validate().is_err());
    assert!(p.validate().is_ok());
}

#[test]
fn gru_two_unit_gradient() {
    let mut g = rng(11);
    let p = GruParams::init(&mut g, 2, 2);
    let mut params: Vec<Tensor> = p.parts().into_iter().cloned().collect();
    params.push(random(&mut g, 3, 2, 1.0));
    params.push(random(&mut g, 3, 2, 1.0));
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let p = GruParams::from_parts(v[..9].iter().copied()).unwrap();
            let h = gru_step(tape, v[9], v[10], &p)?;
            weighted_sum(tape, h, 1)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

fn columns(tape: &mut Tape, x: &Tensor) -> Vec<Var> {
    (0..x.cols())
        .map(|t| tape.constant(Tensor::column((0..x.rows()).map(|r| x.get(r, t)).collect())))
        .collect()
}

fn run_sequence(x: &Tensor, layers: &[GruParams]) -> Tensor {
    let mut tape = Tape::new();
    let steps = columns(&mut tape, x);
    let pv: Vec<GruParams<Var>> = layers.iter().map(|p| p.on_tape(&mut tape)).collect();
    let out = gru_sequence(&mut tape, &steps, &pv).unwrap();
    tape.value(out).clone()
}

#[test]
fn gru_sequence_length_one_is_one_step() {
    let p = GruParams::init(&mut rng(2), 1, 3);
    let x = Tensor::column(vec![0.5, -1.0]);
    assert_eq!(run_sequence(&x, &[p.clone()]), run_step(&x, &Tensor::zeros(2, 3), &p));
}

#[test]
fn gru_sequence_shares_weights_across_nodes() {
    let p = GruParams::init(&mut rng(4), 1, 5);
    let x = Tensor::from_rows(&[vec![0.1, 0.5, -0.3, 0.8], vec![0.1, 0.5, -0.3, 0.8], vec![1.0, 0.0, 0.0, 0.2]]);
    let h = run_sequence(&x, &[p]);
    assert_eq!(h.row_slice(0), h.row_slice(1));
    assert_ne!(h.row_slice(0), h.row_slice(2));
}

#[test]
fn stacked_gru_is_composition() {
    let mut g = rng(6);
    let l1 = GruParams::init(&mut g, 1, 3);
    let l2 = GruParams::init(&mut g, 3, 2);
    let x = random(&mut g, 4, 6, 1.0);
    // Layer-1 state after t steps is the one-layer sequence over the prefix.
    let lower: Vec<Tensor> = (1..=6)
        .map(|t| {
            let prefix = Tensor::from_rows(&(0..4).map(|r| x.row_slice(r)[..t].to_vec()).collect::<Vec<_>>());
            run_sequence(&prefix, &[l1.clone()])
        })
        .collect();
    let mut tape = Tape::new();
    let steps: Vec<Var> = lower.iter().map(|t| tape.constant(t.clone())).collect();
    let p2 = l2.on_tape(&mut tape);
    let manual = gru_sequence(&mut tape, &steps, &[p2]).unwrap();
    let stacked = run_sequence(&x, &[l1, l2]);
    for (a, b) in stacked.data().iter().zip(tape.value(manual).data()) {
        assert!((a - b).abs() < 1e-14);
    }
}

proptest! {
    #[test]
    fn gru_state_stays_bounded(seed in any::<u64>(), scale in 0.1f64..5.0) {
        let mut g = rng(seed);
        let p = GruParams::init(&mut g, 2, 3);
        let x = random(&mut g, 4, 2, 10.0);
        let h = random(&mut g, 4, 3, scale);
        let out = run_step(&x, &h, &p);
        for r in 0..4 {
            let bound = h.row_slice(r).iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(out.row_slice(r).iter().all(|v| v.abs() <= bound));
        }
    }
}

// ---- attention ----

fn attention(x_h: &Tensor, g: &TransitGraph, p: &GatParams) -> std::collections::BTreeMap<(usize, usize), f64> {
    let index = EdgeIndex::new(g, 1).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(x_h.clone());
    let pv = p.on_tape(&mut tape);
    let w = gat_edge_weights(&mut tape, x, &index, &pv).unwrap();
    index.weight_map(tape.value(w))
}

/// Scores and per-receiver softmax evaluated directly from the definition.
fn attention_oracle(x_h: &Tensor, g: &TransitGraph, p: &GatParams) -> Vec<((usize, usize), f64)> {
    let d = p.w.cols();
    let z: Vec<Vec<f64>> = (0..g.len())
        .map(|i| (0..d).map(|k| (0..x_h.cols()).map(|m| x_h.get(i, m) * p.w.get(m, k)).sum()).collect())
        .collect();
    let score = |i: usize, j: usize| {
        let s: f64 = (0..d).map(|k| p.a.get(k, 0) * z[i][k] + p.a.get(d + k, 0) * z[j][k]).sum();
        if s > 0.0 { s } else { p.alpha * s }
    };
    let mut out = Vec::new();
    for i in 0..g.len() {
        let nbrs = g.neighbors(i);
        let e: Vec<f64> = nbrs.iter().map(|&j| score(i, j)).collect();
        let total: f64 = e.iter().map(|v| v.exp()).sum();
        out.extend(nbrs.iter().zip(&e).map(|(&j, v)| ((i, j), v.exp() / total)));
    }
    out
}

#[test]
fn singleton_neighborhood_gets_full_weight() {
    let g = graph(2, &[(0, 1)], false);
    let p = GatParams::init(&mut rng(1), 3, 4);
    let w = attention(&random(&mut rng(2), 2, 3, 1.0), &g, &p);
    assert_eq!(w[&(0, 1)], 1.0);
    assert_eq!(w[&(1, 0)], 1.0);
}

#[test]
fn tied_neighbors_split_evenly() {
    let g = graph(3, &[(0, 1), (1, 2)], false);
    let p = GatParams::init(&mut rng(1), 3, 4);
    let x = Tensor::from_rows(&[vec![0.2, -0.4, 1.0], vec![3.0, 0.0, 0.1], vec![0.2, -0.4, 1.0]]);
    let w = attention(&x, &g, &p);
    assert_eq!(w[&(1, 0)], 0.5);
    assert_eq!(w[&(1, 2)], 0.5);
    let scaled = attention(&x.map(|v| 7.5 * v), &g, &p);
    assert_eq!(scaled[&(1, 0)], scaled[&(1, 2)]);
}

#[test]
fn path_attention_matches_oracle() {
    for (seed, self_loops) in [(1, false), (2, true), (3, false)] {
        let g = graph(3, &[(0, 1), (1, 2)], self_loops);
        let mut r = rng(seed);
        let p = GatParams::init(&mut r, 4, 3);
        let x = random(&mut r, 3, 4, 2.0);
        let got = attention(&x, &g, &p);
        let want = attention_oracle(&x, &g, &p);
        assert_eq!(got.len(), want.len());
        for (key, v) in want {
            assert!((got[&key] - v).abs() < 1e-14, "{key:?}");
        }
    }
}

#[test]
fn isolated_node_is_rejected() {
    let g = graph(3, &[(0, 1)], false);
    assert_eq!(EdgeIndex::new(&g, 1).unwrap_err(), LayerError::DegenerateNeighborhood(2));
    assert!(EdgeIndex::new(&g.with_self_loops(true), 1).is_ok());
}

#[test]
fn attention_param_shapes_validated() {
    let mut p = GatParams::init(&mut rng(1), 3, 4);
    assert!(p.validate().is_ok());
    p.a = Tensor::zeros(4, 1);
    assert!(p.validate().is_err());
}

#[test]
fn batched_index_repeats_graph() {
    let g = graph(3, &[(0, 1), (1, 2)], true);
    let one = EdgeIndex::new(&g, 1).unwrap();
    let two = EdgeIndex::new(&g, 2).unwrap();
    assert_eq!(two.nodes(), 6);
    assert_eq!(two.edge_count(), 2 * one.edge_count());
    let e = one.edge_count();
    for k in 0..e {
        assert_eq!(two.receivers()[e + k], one.receivers()[k] + 3);
        assert_eq!(two.senders()[e + k], one.senders()[k] + 3);
    }
    let p = GatParams::init(&mut rng(8), 2, 3);
    let mut r = rng(9);
    let (xa, xb) = (random(&mut r, 3, 2, 1.0), random(&mut r, 3, 2, 1.0));
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vstack(&[&xa, &xb]));
    let pv = p.on_tape(&mut tape);
    let w = gat_edge_weights(&mut tape, x, &two, &pv).unwrap();
    let w = tape.value(w).data().to_vec();
    let wa = attention(&xa, &g, &p);
    let wb = attention(&xb, &g, &p);
    assert_eq!(w[..e].to_vec(), wa.values().copied().collect::<Vec<_>>());
    assert_eq!(w[e..].to_vec(), wb.values().copied().collect::<Vec<_>>());
}

fn random_graph(r: &mut ChaCha8Rng, n: usize) -> TransitGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (r.gen_range(0..i), i)).collect();
    for _ in 0..n {
        let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
        if a != b {
            edges.push((a, b));
        }
    }
    graph(n, &edges, r.gen_bool(0.5))
}

proptest! {
    #[test]
    fn attention_normalizes_per_receiver(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 10);
        let p = GatParams { w: random(&mut r, 6, 4, 1.5), a: random(&mut r, 8, 1, 1.5), alpha: LEAKY_SLOPE };
        let x = random(&mut r, 10, 6, 2.0);
        let w = attention(&x, &g, &p);
        for i in 0..10 {
            let vals: Vec<f64> = g.neighbors(i).iter().map(|&j| w[&(i, j)]).collect();
            prop_assert!((vals.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(vals.iter().all(|&v| v > 0.0 && v < 1.0 || vals.len() == 1 && v == 1.0));
        }
    }
}

// ---- k-GNN ----

fn aggregate(h: &Tensor, g: &TransitGraph, weights: &Tensor, p: &KgnnParams) -> Result<Tensor, LayerError> {
    let index = EdgeIndex::new(g, 1)?;
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let wv = tape.constant(weights.clone());
    let pv = p.on_tape(&mut tape);
    let out = kgnn_aggregate(&mut tape, hv, &index, wv, &pv)?;
    Ok(tape.value(out).clone())
}

fn dense_mul(a: &[Vec<f64>], b: &Tensor) -> Vec<Vec<f64>> {
    a.iter().map(|row| (0..b.cols()).map(|c| row.iter().enumerate().map(|(k, v)| v * b.get(k, c)).sum()).collect()).collect()
}

#[test]
fn kgnn_without_neighbor_term() {
    let g = graph(3, &[(0, 1), (1, 2)], false);
    let mut r = rng(12);
    let mut p = KgnnParams::init(&mut r, 4, Activation::Tanh);
    p.w2 = Tensor::zeros(4, 4);
    let h = random(&mut r, 3, 4, 1.0);
    let e = EdgeIndex::new(&g, 1).unwrap().edge_count();
    let out = aggregate(&h, &g, &random(&mut r, e, 1, 1.0), &p).unwrap();
    let rows: Vec<Vec<f64>> = (0..3).map(|i| h.row_slice(i).to_vec()).collect();
    let want = dense_mul(&rows, &p.w1);
    for i in 0..3 {
        for k in 0..4 {
            assert!((out.get(i, k) - want[i][k].tanh()).abs() < 1e-15);
        }
    }
}

#[test]
fn kgnn_self_loop_only() {
    let g = graph(2, &[], true);
    let mut r = rng(13);
    let p = KgnnParams::init(&mut r, 3, Activation::Identity);
    let h = random(&mut r, 2, 3, 1.0);
    let out = aggregate(&h, &g, &Tensor::column(vec![1.0, 1.0]), &p).unwrap();
    for i in 0..2 {
        for k in 0..3 {
            let want: f64 = (0..3).map(|m| h.get(i, m) * (p.w1.get(m, k) + p.w2.get(m, k))).sum();
            assert!((out.get(i, k) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn kgnn_matches_dense_evaluation() {
    let g = graph(3, &[(0, 1), (1, 2), (0, 2)], true);
    let index = EdgeIndex::new(&g, 1).unwrap();
    let mut r = rng(14);
    let p = KgnnParams::init(&mut r, 3, Activation::Identity);
    let h = random(&mut r, 3, 3, 1.0);
    let weights = random(&mut r, index.edge_count(), 1, 1.0);
    let out = aggregate(&h, &g, &weights, &p).unwrap();
    let mut a = vec![vec![0.0; 3]; 3];
    for ((i, j), w) in index.weight_map(&weights) {
        a[i][j] = w;
    }
    let rows: Vec<Vec<f64>> = (0..3).map(|i| h.row_slice(i).to_vec()).collect();
    let own = dense_mul(&rows, &p.w1);
    let nbr = dense_mul(&dense_mul(&a, &h), &p.w2);
    for i in 0..3 {
        for k in 0..3 {
            assert!((out.get(i, k) - own[i][k] - nbr[i][k]).abs() < 1e-14);
        }
    }
}

#[test]
fn kgnn_rejects_missing_weights() {
    let g = graph(3, &[(0, 1), (1, 2)], false);
    let p = KgnnParams::init(&mut rng(1), 2, Activation::Tanh);
    let err = aggregate(&Tensor::zeros(3, 2), &g, &Tensor::column(vec![1.0; 3]), &p).unwrap_err();
    assert!(matches!(err, LayerError::Contract(_)));
}

// ---- FFNN ----

fn run_ffnn(x: &Tensor, p: &FfnnParams) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = p.on_tape(&mut tape);
    let out = ffnn_forward(&mut tape, xv, &pv).unwrap();
    tape.value(out).clone()
}

#[test]
fn ffnn_identity_layer() {
    let p = FfnnParams { weights: vec![Tensor::identity(3)], biases: vec![Tensor::zeros(1, 3)] };
    let x = Tensor::row(vec![1.5, -2.0, 0.25]);
    assert_eq!(run_ffnn(&x, &p), x);
}

#[test]
fn ffnn_zero_weights_give_final_bias() {
    let mut p = FfnnParams::init(&mut rng(1), &[3, 5, 2]).unwrap();
    for w in &mut p.weights {
        *w = Tensor::zeros(w.rows(), w.cols());
    }
    p.biases[0] = Tensor::filled(1, 5, -3.0);
    p.biases[1] = Tensor::row(vec![0.7, -0.1]);
    assert_eq!(run_ffnn(&Tensor::row(vec![9.0, 9.0, 9.0]), &p).data(), &[0.7, -0.1]);
}

#[test]
fn ffnn_matches_manual_chain() {
    let mut r = rng(2);
    let mut p = FfnnParams::init(&mut r, &[4, 6, 3]).unwrap();
    p.biases = vec![random(&mut r, 1, 6, 0.5), random(&mut r, 1, 3, 0.5)];
    let x = random(&mut r, 2, 4, 2.0);
    let out = run_ffnn(&x, &p);
    for row in 0..2 {
        let hidden: Vec<f64> = (0..6)
            .map(|k| {
                let s: f64 = (0..4).map(|m| x.get(row, m) * p.weights[0].get(m, k)).sum::<f64>() + p.biases[0].get(0, k);
                if s > 0.0 { s } else { 0.01 * s }
            })
            .collect();
        for k in 0..3 {
            let want: f64 = (0..6).map(|m| hidden[m] * p.weights[1].get(m, k)).sum::<f64>() + p.biases[1].get(0, k);
            assert!((out.get(row, k) - want).abs() < 1e-14);
        }
    }
    assert_eq!(p.widths(), vec![4, 6, 3]);
    assert!(FfnnParams::init(&mut r, &[4]).is_err());
}

// ---- gradients ----

#[test]
fn every_layer_passes_grad_check() {
    let g = graph(3, &[(0, 1), (1, 2), (0, 2)], false);
    let index = EdgeIndex::new(&g, 1).unwrap();
    let mut r = rng(21);

    let x = random(&mut r, 3, 6, 1.0);
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let (t, res) = decompose(tape, v[0], DecompositionConfig::default())?;
            let both = tape.concat(&[t, res], crate::autodiff::Axis::Cols)?;
            weighted_sum(tape, both, 2)
        },
        &[x.clone()],
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "decompose {report:?}");

    let lower = GruParams::init(&mut r, 1, 4);
    let upper = GruParams::init(&mut r, 4, 4);
    let mut params: Vec<Tensor> = lower.parts().into_iter().chain(upper.parts()).cloned().collect();
    params.push(x.clone());
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let lower = GruParams::from_parts(v[..9].iter().copied()).unwrap();
            let upper = GruParams::from_parts(v[9..18].iter().copied()).unwrap();
            let steps: Vec<Var> = (0..6)
                .map(|t| tape.gather(v[18], crate::autodiff::Axis::Cols, vec![t].into()))
                .collect::<Result<_, _>>()?;
            let h = gru_sequence(tape, &steps, &[lower, upper])?;
            weighted_sum(tape, h, 3)
        },
        &params,
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "gru {report:?}");

    let gat = GatParams::init(&mut r, 6, 4);
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let p = GatParams { w: v[0], a: v[1], alpha: LEAKY_SLOPE };
            let w = gat_edge_weights(tape, v[2], &index, &p)?;
            weighted_sum(tape, w, 4)
        },
        &[gat.w.clone(), gat.a.clone(), x.clone()],
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "gat {report:?}");

    for activation in [Activation::Tanh, Activation::Identity] {
        let k = KgnnParams::init(&mut r, 4, activation);
        let report = grad_check(
            |tape: &mut Tape, v: &[Var]| {
                let p = GatParams { w: v[0], a: v[1], alpha: LEAKY_SLOPE };
                let w = gat_edge_weights(tape, v[2], &index, &p)?;
                let kp = KgnnParams { w1: v[3], w2: v[4], activation };
                let out = kgnn_aggregate(tape, v[5], &index, w, &kp)?;
                weighted_sum(tape, out, 5)
            },
            &[gat.w.clone(), gat.a.clone(), x.clone(), k.w1.clone(), k.w2.clone(), random(&mut r, 3, 4, 1.0)],
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "kgnn {activation:?} {report:?}");
    }

    let f = FfnnParams::init(&mut r, &[6, 5, 2]).unwrap();
    let f = FfnnParams { biases: vec![random(&mut r, 1, 5, 0.3), random(&mut r, 1, 2, 0.3)], ..f };
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let p = FfnnParams { weights: vec![v[0], v[2]], biases: vec![v[1], v[3]] };
            let out = ffnn_forward(tape, v[4], &p)?;
            weighted_sum(tape, out, 6)
        },
        &[f.weights[0].clone(), f.biases[0].clone(), f.weights[1].clone(), f.biases[1].clone(), x],
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "ffnn {report:?}");
}

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p transitnet-cli --test acceptance`. Criteria listed
//! in `EXPECTED_RED` are reported but do not fail the target; any other
//! failure exits non-zero.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transitnet_core::autodiff::{grad_check, Axis, Tape, Tensor, Var};
use transitnet_core::cluster::{adjusted_rand_index, kmeans, weekly_profile};
use transitnet_core::data::{
    aggregate, make_windows_in, prepare_samples, synth_generate, Archetype, Period, PeriodSpec, PreparedData,
    RidershipGrid, SampleWindow, ScalerParams, ServiceWindow, SynthConfig,
};
use transitnet_core::eval::{
    maape, maape_ratio, observed_counts, persistence_baseline, r_squared, score, unscale_predictions, Persistence,
    ScoreReport,
};
use transitnet_core::forecast::{iterative_forecast, lagged_forecast_errors, ForecastBuffer, ForecastError, OneStepModel};
use transitnet_core::graph::{Station, TransitGraph};
use transitnet_core::layers::{
    decompose, decompose_values, ffnn_forward, gat_edge_weights, gru_sequence, kgnn_aggregate, Activation,
    DecompositionConfig, EdgeIndex, FfnnParams, GatParams, GruParams, KgnnParams, LayerError, LEAKY_SLOPE,
};
use transitnet_core::model::{forward, init_params, ModelConfig, ModelError, ModelParams, Variant};
use transitnet_core::train::{evaluate_mse, predict_all, train, IndexCache, TrainConfig};

/// The decomposition identity cannot hold bitwise on real-valued windows;
/// see the C1 detail line.
const EXPECTED_RED: &[u32] = &[1];

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn criterion(id: u32, title: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    let o = Outcome { id, title, pass, detail: format!("{detail} [{:.1}s]", start.elapsed().as_secs_f64()) };
    println!("{} C{:<2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title, o.detail);
    o
}

fn info(id: u32, text: String) {
    println!("INFO C{id:<2} {text}");
}

// ---- shared fixtures ----

struct Dataset {
    graph: TransitGraph,
    raw: RidershipGrid,
    prepared: PreparedData,
}

/// Last 7 days test, 3 days before validation, the rest train.
fn default_periods(grid: &RidershipGrid) -> PeriodSpec {
    let days = grid.days as i64;
    let day = |d: i64| grid.start_date + Duration::days(d);
    PeriodSpec::new(vec![
        Period::new("train", day(0), day(days - 11)),
        Period::new("validation", day(days - 10), day(days - 8)),
        Period::new("test", day(days - 7), day(days - 1)),
    ])
    .unwrap()
}

fn dataset(cfg: &SynthConfig, window: usize) -> Dataset {
    let data = synth_generate(cfg).unwrap();
    let graph = data.graph(false).unwrap();
    let raw = aggregate(&data.records, &graph, 15, ServiceWindow::default()).unwrap().grid;
    let prepared = prepare_samples(&raw, &default_periods(&raw), "train", window, window).unwrap();
    Dataset { graph, raw, prepared }
}

fn model_report(name: &str, ds: &Dataset, params: &ModelParams, samples: &[SampleWindow]) -> ScoreReport {
    let cache = IndexCache::for_prediction(&ds.graph, samples.len()).unwrap();
    let scaled = predict_all(params, samples, &cache).unwrap();
    report(name, ds, samples, &scaled)
}

fn report(name: &str, ds: &Dataset, samples: &[SampleWindow], scaled: &[Vec<f64>]) -> ScoreReport {
    let times: Vec<_> = samples.iter().map(|s| s.target_time).collect();
    let predicted = unscale_predictions(&ds.prepared.scaler, scaled);
    score(name, &ds.raw.station_ids, &times, &observed_counts(&ds.raw, samples), &predicted).unwrap()
}

/// Largest deviation from the peak/non-peak partition identity, pooled and
/// per station.
fn partition_gap(r: &ScoreReport) -> f64 {
    let mut worst = (r.recombined_maape() - r.maape).abs();
    let peak_rows = r.peak_n / r.station_ids.len();
    let off_rows = r.non_peak_n / r.station_ids.len();
    for s in 0..r.station_ids.len() {
        let part = |m: Option<f64>, n: usize| m.map_or(0.0, |v| v * n as f64);
        let recombined = (part(r.station_peak_maape[s], peak_rows) + part(r.station_non_peak_maape[s], off_rows))
            / (peak_rows + off_rows) as f64;
        worst = worst.max((recombined - r.station_maape[s]).abs());
    }
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn build_graph(n: usize, edges: &[(usize, usize)]) -> TransitGraph {
    let stations = (0..n).map(|i| Station::new(format!("n{i:02}"), 0.0, i as f64 * 0.01)).collect();
    let edges: Vec<(String, String)> = edges.iter().map(|&(a, b)| (format!("n{a:02}"), format!("n{b:02}"))).collect();
    TransitGraph::build(stations, &edges, false).unwrap()
}

fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, LayerError> {
    let (r, c) = tape.value(out).dims().unwrap();
    let w = tape.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), r, c, 1.0));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

// ---- C1 ----

fn c1_decomposition() -> (bool, String) {
    let start = Instant::now();
    let ds = dataset(&SynthConfig { noise: 0.1, seed: 5, ..SynthConfig::default() }, 20);
    let samples = ds.prepared.samples("train");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = DecompositionConfig::default();
    let (mut worst, mut inexact, mut entries) = (0.0f64, 0usize, 0usize);
    for _ in 0..1000 {
        let x = &samples[rng.gen_range(0..samples.len())].recent;
        let (t, r) = decompose_values(x, cfg).unwrap();
        for ((a, b), v) in t.data().iter().zip(r.data()).zip(x.data()) {
            let err = (a + b - v).abs();
            worst = worst.max(err);
            inexact += usize::from(err != 0.0);
            entries += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();

    // Same windows in count space: every entry is an integer.
    let (mut count_worst, mut count_entries) = (0.0f64, 0usize);
    for _ in 0..1000 {
        let s = &samples[rng.gen_range(0..samples.len())];
        let counts = make_windows_in(&ds.raw, 20, 20, s.target_row..s.target_row + 1).samples[0].recent.clone();
        let (t, r) = decompose_values(&counts, cfg).unwrap();
        for ((a, b), v) in t.data().iter().zip(r.data()).zip(counts.data()) {
            count_worst = count_worst.max((a + b - v).abs());
            count_entries += 1;
        }
    }
    info(
        1,
        format!("count-domain windows: max |X_t + X_r - X_o| = {count_worst:e} over {count_entries} entries"),
    );
    (
        worst == 0.0 && elapsed < 1.0,
        format!(
            "scaled windows: max |X_t + X_r - X_o| = {worst:e}, {inexact}/{entries} entries inexact, {elapsed:.3}s. \
             With X_r = X_o - X_t computed in floating point, X_t + X_r rounds back to X_o only when the \
             subtraction is exact; for a small X_o next to a larger trend no representable residual reaches X_o \
             exactly, so max error 0 is unattainable on real-valued windows"
        ),
    )
}

// ---- C2 ----

fn c2_gradients() -> (bool, String) {
    let start = Instant::now();
    let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)]);
    let index = EdgeIndex::new(&g, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut results: Vec<(String, f64)> = Vec::new();
    let x = random_tensor(&mut rng, 3, 6, 1.0);

    let r = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let (t, res) = decompose(tape, v[0], DecompositionConfig::default())?;
            let both = tape.concat(&[t, res], Axis::Cols)?;
            weighted_sum(tape, both, 2)
        },
        &[x.clone()],
        1e-4,
    )
    .unwrap();
    results.push(("decomposition".into(), r.max_rel_error));

    let lower = GruParams::init(&mut rng, 1, 4);
    let upper = GruParams::init(&mut rng, 4, 4);
    let mut params: Vec<Tensor> = lower.parts().into_iter().chain(upper.parts()).cloned().collect();
    params.push(x.clone());
    let r = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let lower = GruParams::from_parts(v[..9].iter().copied()).unwrap();
            let upper = GruParams::from_parts(v[9..18].iter().copied()).unwrap();
            let steps: Vec<Var> =
                (0..6).map(|t| tape.gather(v[18], Axis::Cols, vec![t].into())).collect::<Result<_, _>>()?;
            let h = gru_sequence(tape, &steps, &[lower, upper])?;
            weighted_sum(tape, h, 3)
        },
        &params,
        1e-4,
    )
    .unwrap();
    results.push(("gru (2 layers)".into(), r.max_rel_error));

    let gat = GatParams::init(&mut rng, 6, 4);
    let r = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let p = GatParams { w: v[0], a: v[1], alpha: LEAKY_SLOPE };
            let w = gat_edge_weights(tape, v[2], &index, &p)?;
            weighted_sum(tape, w, 4)
        },
        &[gat.w.clone(), gat.a.clone(), x.clone()],
        1e-4,
    )
    .unwrap();
    results.push(("gat".into(), r.max_rel_error));

    for activation in [Activation::Tanh, Activation::Identity] {
        let k = KgnnParams::init(&mut rng, 4, activation);
        let h = random_tensor(&mut rng, 3, 4, 1.0);
        let r = grad_check(
            |tape: &mut Tape, v: &[Var]| {
                let p = GatParams { w: v[0], a: v[1], alpha: LEAKY_SLOPE };
                let w = gat_edge_weights(tape, v[2], &index, &p)?;
                let kp = KgnnParams { w1: v[3], w2: v[4], activation };
                let out = kgnn_aggregate(tape, v[5], &index, w, &kp)?;
                weighted_sum(tape, out, 5)
            },
            &[gat.w.clone(), gat.a.clone(), x.clone(), k.w1.clone(), k.w2.clone(), h],
            1e-4,
        )
        .unwrap();
        results.push((format!("kgnn ({activation:?})"), r.max_rel_error));
    }

    let f = FfnnParams::init(&mut rng, &[6, 5, 2]).unwrap();
    let biases = vec![random_tensor(&mut rng, 1, 5, 0.3), random_tensor(&mut rng, 1, 2, 0.3)];
    let r = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let p = FfnnParams { weights: vec![v[0], v[2]], biases: vec![v[1], v[3]] };
            let out = ffnn_forward(tape, v[4], &p)?;
            weighted_sum(tape, out, 6)
        },
        &[f.weights[0].clone(), biases[0].clone(), f.weights[1].clone(), biases[1].clone(), x],
        1e-4,
    )
    .unwrap();
    results.push(("ffnn".into(), r.max_rel_error));

    let index = EdgeIndex::new(&g, 2).unwrap();
    let (x_o, x_h, y) =
        (random_tensor(&mut rng, 6, 6, 1.0), random_tensor(&mut rng, 6, 6, 1.0), random_tensor(&mut rng, 6, 1, 1.0));
    for variant in [Variant::V1, Variant::V2] {
        let cfg = ModelConfig { variant, stations: 3, recent_len: 6, hist_len: 6, hidden: 4, kernel: 3, seed: 14, ..ModelConfig::default() };
        let p = init_params(&cfg).unwrap();
        let tensors: Vec<Tensor> = p.weights.entries().into_iter().map(|(_, t)| t.clone()).collect();
        let r = grad_check(
            |tape: &mut Tape, vars: &[Var]| -> Result<Var, ModelError> {
                let mut it = vars.iter().copied();
                let w = p.weights.map(|_| it.next().unwrap());
                let (a, b, t) = (tape.constant(x_o.clone()), tape.constant(x_h.clone()), tape.constant(y.clone()));
                let out = forward(tape, &p.config, &w, a, b, &index)?;
                let d = tape.sub(out, t)?;
                let sq = tape.mul(d, d)?;
                Ok(tape.mean(sq))
            },
            &tensors,
            1e-4,
        )
        .unwrap();
        results.push((format!("model {variant:?}"), r.max_rel_error));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let listing: Vec<String> = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    (worst < 1e-4 && elapsed < 60.0, format!("max rel error {worst:.2e} < 1e-4 ({}), {elapsed:.1}s < 60s", listing.join(", ")))
}

// ---- C3 ----

fn c3_attention() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut edges: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
    while edges.len() < 18 {
        let (a, b) = (rng.gen_range(0..10), rng.gen_range(0..10));
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a, b));
        }
    }
    let g = build_graph(10, &edges);
    let index = EdgeIndex::new(&g, 1).unwrap();
    let (mut worst_sum, mut min_w, mut max_w) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100 {
        let scale = rng.gen_range(0.1..3.0);
        let p = GatParams::init(&mut rng, 8, 6);
        let p = GatParams { w: p.w.map(|v| v * scale), a: p.a.map(|v| v * scale), alpha: LEAKY_SLOPE };
        let x = random_tensor(&mut rng, 10, 8, 1.0);
        let mut tape = Tape::new();
        let (xv, w, a) = (tape.constant(x), tape.constant(p.w.clone()), tape.constant(p.a.clone()));
        let out = gat_edge_weights(&mut tape, xv, &index, &GatParams { w, a, alpha: LEAKY_SLOPE }).unwrap();
        let values = tape.value(out).data().to_vec();
        for i in 0..10 {
            let seg = index.segment(i);
            let total: f64 = values[seg.clone()].iter().sum();
            worst_sum = worst_sum.max((total - 1.0).abs());
            for &v in &values[seg] {
                min_w = min_w.min(v);
                max_w = max_w.max(v);
            }
        }
    }
    (
        worst_sum <= 1e-9 && min_w > 0.0 && max_w < 1.0,
        format!("100 parameterizations, 10 nodes, {} edges: max |sum - 1| = {worst_sum:.1e}, weights in [{min_w:.3e}, {max_w:.6}]", edges.len()),
    )
}

// ---- C4 ----

fn c4_metrics() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_r2, mut worst_maape) = (0.0f64, 0.0f64);
    let mut identities = true;
    for _ in 0..1000 {
        let n = rng.gen_range(2..200);
        let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.05) { 0.0 } else { rng.gen_range(0.0..500.0) }).collect();
        let p: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.05) { 0.0 } else { rng.gen_range(0.0..500.0) }).collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let (mut res, mut tot, mut aape) = (0.0, 0.0, 0.0);
        for i in 0..n {
            res += (y[i] - p[i]).powi(2);
            tot += (y[i] - mean).powi(2);
            aape += match (y[i] == 0.0, p[i] == 0.0) {
                (true, true) => 0.0,
                (true, false) => std::f64::consts::FRAC_PI_2,
                _ => ((y[i] - p[i]) / y[i]).abs().atan(),
            };
        }
        worst_r2 = worst_r2.max((r_squared(&y, &p).unwrap() - (1.0 - res / tot)).abs());
        worst_maape = worst_maape.max((maape(&y, &p).unwrap() - aape / n as f64).abs());
        identities &= maape(&y, &y).unwrap() == 0.0 && r_squared(&y, &y).unwrap() == 1.0;
    }
    (
        worst_r2 <= 1e-10 && worst_maape <= 1e-10 && identities,
        format!("1000 pairs: max |dR2| = {worst_r2:.1e}, max |dMAAPE| = {worst_maape:.1e}, exact identities {identities}"),
    )
}

// ---- C5 ----

fn c5_overfit(partition: &mut Vec<ScoreReport>) -> (bool, String) {
    let synth = SynthConfig {
        stations: 10,
        days: 28,
        noise: 0.0,
        seed: 1,
        archetypes: vec![Archetype::TwoPeak, Archetype::MorningPeak, Archetype::EveningPeak],
        ..SynthConfig::default()
    };
    let ds = dataset(&synth, 20);
    let model = ModelConfig { variant: Variant::V1, stations: 10, hidden: 32, seed: 1, ..ModelConfig::default() };
    let cfg = TrainConfig { epochs: 200, patience: 5, ..TrainConfig::default() };
    let (train_set, val, test) =
        (ds.prepared.samples("train"), ds.prepared.samples("validation"), ds.prepared.samples("test"));

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let outcome = pool.install(|| train(init_params(&model).unwrap(), train_set, &ds.graph, &cfg, val)).unwrap();
    let seconds = start.elapsed().as_secs_f64();

    let params = &outcome.checkpoint.params;
    let cache = IndexCache::for_prediction(&ds.graph, train_set.len()).unwrap();
    let final_mse = evaluate_mse(params, train_set, &cache).unwrap();
    let initial = outcome.history.initial_train_mse;
    let held_out = model_report("c5-test", &ds, params, test);
    let r2 = held_out.r_squared.unwrap_or(f64::NEG_INFINITY);
    partition.push(held_out);
    let epochs = outcome.history.epochs.len();
    (
        final_mse < 0.01 * initial && r2 >= 0.8 && epochs <= 200 && seconds < 600.0,
        format!(
            "V1 hidden 32, {} train samples: train MSE {final_mse:.3e} = {:.3}% of epoch-0 {initial:.3e} (< 1%), \
             held-out R2 {r2:.4} (>= 0.8), {epochs} epochs (best {}), {seconds:.0}s on one thread (< 600s)",
            train_set.len(),
            100.0 * final_mse / initial,
            outcome.history.best_epoch
        ),
    )
}

// ---- C6 ----

fn c6_persistence(partition: &mut Vec<ScoreReport>) -> (bool, String) {
    let ds = dataset(&SynthConfig { noise: 0.1, seed: 2, ..SynthConfig::default() }, 20);
    let test = ds.prepared.samples("test");
    let baseline = report("persistence", &ds, test, &persistence_baseline(test, Persistence::Last));
    let mut pass = true;
    let mut parts = vec![format!("persistence MAAPE {:.4}", baseline.maape)];
    for variant in [Variant::V1, Variant::V2] {
        let model = ModelConfig { variant, stations: 10, hidden: 16, seed: 2, ..ModelConfig::default() };
        let cfg = TrainConfig { epochs: 40, patience: 5, learning_rate: 3e-3, shuffle_seed: 2, ..TrainConfig::default() };
        let outcome = train(
            init_params(&model).unwrap(),
            ds.prepared.samples("train"),
            &ds.graph,
            &cfg,
            ds.prepared.samples("validation"),
        )
        .unwrap();
        let r = model_report(&format!("c6-{variant:?}"), &ds, &outcome.checkpoint.params, test);
        pass &= r.maape < baseline.maape;
        parts.push(format!(
            "{variant:?} MAAPE {:.4} (R2 {:.4}, {} epochs)",
            r.maape,
            r.r_squared.unwrap_or(f64::NAN),
            outcome.history.epochs.len()
        ));
        partition.push(r);
    }
    partition.push(baseline);
    (pass, format!("noise 0.1, test period, lag 1: {}", parts.join(", ")))
}

// ---- C7, C8 ----

/// Truth at the target plus the error carried in the last recent column,
/// plus `eps`: exact when fed exact inputs, drifting by `eps` per step.
struct DriftOracle<'a> {
    grid: &'a RidershipGrid,
    window: usize,
    eps: f64,
}

impl OneStepModel for DriftOracle<'_> {
    fn recent_len(&self) -> usize {
        self.window
    }

    fn hist_len(&self) -> usize {
        self.window
    }

    fn predict_batch(&self, windows: &[SampleWindow]) -> Result<Vec<Vec<f64>>, ForecastError> {
        Ok(windows
            .iter()
            .map(|w| {
                let t = w.target_row;
                (0..self.grid.stations())
                    .map(|s| self.grid.value(t, s) + (w.recent.get(s, self.window - 1) - self.grid.value(t - 1, s)) + self.eps)
                    .collect()
            })
            .collect())
    }
}

fn noiseless() -> (RidershipGrid, ScalerParams, RidershipGrid, std::ops::Range<usize>) {
    let cfg = SynthConfig { stations: 10, days: 28, noise: 0.0, seed: 8, ..SynthConfig::default() };
    let ds = dataset(&cfg, 8);
    let spec = default_periods(&ds.raw);
    let test = spec.get("test").unwrap();
    let rows = ds.raw.rows_for_dates(test.start, test.end);
    (ds.raw, ds.prepared.scaler.clone(), ds.prepared.scaled, rows)
}

fn c7_iterative() -> (bool, String) {
    let (_, _, scaled, rows) = noiseless();
    let window = 8;
    let oracle = DriftOracle { grid: &scaled, window, eps: 0.0 };
    let mut worst = 0.0f64;
    let origins: Vec<usize> = (rows.start..rows.end - 12).step_by(7).collect();
    for &t0 in &origins {
        let mut buffer = ForecastBuffer::new(&scaled, t0, window).unwrap();
        let steps = iterative_forecast(&oracle, &mut buffer, &scaled, 12).unwrap();
        for (k, step) in steps.iter().enumerate() {
            for s in 0..scaled.stations() {
                worst = worst.max((step.values[s] - scaled.value(t0 + k, s)).abs());
            }
        }
    }

    // Distinguishable predictions so the buffer's column origin is visible.
    let biased = DriftOracle { grid: &scaled, window, eps: 0.25 };
    let t0 = origins[3];
    let mut buffer = ForecastBuffer::new(&scaled, t0, window).unwrap();
    let mut generated: Vec<Vec<f64>> = Vec::new();
    let mut rule_holds = true;
    for k in 1..=12 {
        let step = iterative_forecast(&biased, &mut buffer, &scaled, 1).unwrap().remove(0);
        generated.push(step.values);
        rule_holds &= buffer.recent.cols() == window;
        for col in 0..window {
            // Column `col` after k iterations holds T_{k+col+1} if observed,
            // else P_{I+(k+col+1-I)}.
            let position = k + col;
            for s in 0..scaled.stations() {
                let expected = if position < window {
                    scaled.value(t0 - window + position, s)
                } else {
                    generated[position - window][s]
                };
                rule_holds &= buffer.recent.get(s, col) == expected;
            }
        }
    }
    (
        worst < 1e-9 && rule_holds,
        format!(
            "ground-truth oracle, N=12 from {} origins: max abs error {worst:.1e} (< 1e-9); buffer matches the \
             drop-oldest/append-prediction rule after each of 12 iterations: {rule_holds}",
            origins.len()
        ),
    )
}

fn c8_lag_shape() -> (bool, String) {
    let (raw, scaler, scaled, rows) = noiseless();
    let oracle = DriftOracle { grid: &scaled, window: 8, eps: 0.01 };
    let scores = lagged_forecast_errors(&oracle, &raw, &scaler, rows, 12).unwrap();
    let monotone = scores.windows(2).all(|w| w[1].maape >= w[0].maape);
    let per_lag: BTreeMap<usize, f64> = scores.iter().map(|s| (s.lag, s.maape)).collect();
    let ratio = maape_ratio(&per_lag).unwrap();
    let curve: Vec<String> = scores.iter().map(|s| format!("{:.4}", s.maape)).collect();
    (
        monotone && ratio > 1.0 && scores.len() == 12,
        format!("eps 0.01 drift oracle, {} origins: MAAPE by lag [{}], ratio {ratio:.6} (> 1)", scores[0].n / raw.stations(), curve.join(" ")),
    )
}

// ---- C9 ----

fn c9_clustering() -> (bool, String) {
    let cfg = SynthConfig { stations: 20, days: 28, noise: 0.1, seed: 9, ..SynthConfig::default() };
    let data = synth_generate(&cfg).unwrap();
    let graph = data.graph(false).unwrap();
    let grid = aggregate(&data.records, &graph, 15, ServiceWindow::default()).unwrap().grid;
    let profiles = weekly_profile(&grid).unwrap();
    let truth: Vec<usize> = profiles
        .iter()
        .map(|p| Archetype::ALL.iter().position(|&a| Some(a) == data.manifest.archetype_of(&p.station_id)).unwrap())
        .collect();
    let (mut perfect, mut monotone, mut worst) = (0, true, 1.0f64);
    let mut trace = Vec::new();
    for seed in 0..10 {
        let r = kmeans(&profiles, 5, seed, 300).unwrap();
        let ari = adjusted_rand_index(&r.assignments, &truth);
        worst = worst.min(ari);
        perfect += usize::from(ari == 1.0);
        monotone &= r.inertia_trace.windows(2).all(|w| w[1] <= w[0]);
        if seed == 0 {
            trace = r.inertia_trace.iter().map(|v| format!("{v:.3}")).collect();
        }
    }
    (
        perfect == 10 && monotone,
        format!(
            "20 stations, 5 archetypes, k=5: ARI 1.0 for {perfect}/10 seeds (min {worst:.4}); inertia trace \
             non-increasing {monotone}; seed 0 trace [{}]",
            trace.join(" ")
        ),
    )
}

// ---- C10, C11 ----

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_transitnet"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

fn c10_determinism(scores_csv: &mut Vec<String>) -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let config = "seed = 11\nsynth.stations = 6\nmodel.hidden = 8\nmodel.recent_len = 8\nmodel.hist_len = 8\n\
                  train.epochs = 3\ntrain.batch_size = 32\n";
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let cfg = dir.path().join(format!("{run}.toml"));
        std::fs::write(&cfg, format!("{config}paths.output_dir = \"{run}\"\n")).unwrap();
        let cfg = cfg.to_string_lossy().into_owned();
        for cmd in ["synth", "train", "evaluate"] {
            if let Err(e) = cli(dir.path(), &[cmd, "--config", &cfg]) {
                return (false, e);
            }
        }
        let out = dir.path().join(run);
        let ckpt = std::fs::read(out.join("model.ckpt")).unwrap();
        let scores = std::fs::read(out.join("scores.csv")).unwrap();
        scores_csv.push(String::from_utf8(scores.clone()).unwrap());
        outputs.push((ckpt, scores));
    }
    let same_ckpt = outputs[0].0 == outputs[1].0;
    let same_scores = outputs[0].1 == outputs[1].1;
    (
        same_ckpt && same_scores,
        format!(
            "two synth -> train -> evaluate runs: checkpoints identical {same_ckpt} ({} bytes), score reports identical {same_scores}",
            outputs[0].0.len()
        ),
    )
}

/// Pooled identity checked from a written report's rows.
fn csv_partition_gap(text: &str) -> (usize, f64) {
    let mut by_dataset: BTreeMap<String, BTreeMap<(String, String), f64>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[3] == "ALL" {
            by_dataset
                .entry(cells[0].to_string())
                .or_default()
                .insert((cells[1].to_string(), cells[2].to_string()), cells[4].parse().unwrap());
        }
    }
    let mut worst = 0.0f64;
    for rows in by_dataset.values() {
        let get = |m: &str, s: &str| rows.get(&(m.to_string(), s.to_string())).copied();
        let part = |s: &str| get("maape", s).unwrap_or(0.0) * get("n", s).unwrap_or(0.0);
        let recombined = (part("peak") + part("non_peak")) / get("n", "pooled").unwrap();
        worst = worst.max((recombined - get("maape", "pooled").unwrap()).abs());
    }
    (by_dataset.len(), worst)
}

fn c11_partition(reports: &[ScoreReport], csvs: &[String]) -> (bool, String) {
    let worst_in_memory = reports.iter().map(partition_gap).fold(0.0, f64::max);
    let (mut datasets, mut worst_csv) = (0, 0.0f64);
    for text in csvs {
        let (n, w) = csv_partition_gap(text);
        datasets += n;
        worst_csv = worst_csv.max(w);
    }
    (
        worst_in_memory <= 1e-12 && worst_csv <= 1e-12 && !reports.is_empty() && datasets > 0,
        format!(
            "{} in-process reports (pooled and per station): max gap {worst_in_memory:.1e}; {datasets} CLI report \
             datasets: max gap {worst_csv:.1e} (<= 1e-12)",
            reports.len()
        ),
    )
}

fn main() {
    println!("acceptance: 11 criteria");
    let mut partition_reports = Vec::new();
    let mut scores_csv = Vec::new();
    let outcomes = vec![
        criterion(1, "decomposition identity", c1_decomposition),
        criterion(2, "gradient integrity", c2_gradients),
        criterion(3, "attention normalization", c3_attention),
        criterion(4, "metric oracles", c4_metrics),
        criterion(5, "overfit contract", || c5_overfit(&mut partition_reports)),
        criterion(6, "beats persistence", || c6_persistence(&mut partition_reports)),
        criterion(7, "iterative framework", c7_iterative),
        criterion(8, "lag degradation shape", c8_lag_shape),
        criterion(9, "clustering recovery", c9_clustering),
        criterion(10, "determinism", || c10_determinism(&mut scores_csv)),
        criterion(11, "peak/non-peak partition identity", || c11_partition(&partition_reports, &scores_csv)),
    ];
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let unexpected: Vec<String> =
        outcomes.iter().filter(|o| !o.pass && !EXPECTED_RED.contains(&o.id)).map(|o| format!("C{}", o.id)).collect();
    let known: Vec<String> =
        outcomes.iter().filter(|o| !o.pass && EXPECTED_RED.contains(&o.id)).map(|o| format!("C{}", o.id)).collect();
    for o in outcomes.iter().filter(|o| o.pass && EXPECTED_RED.contains(&o.id)) {
        println!("NOTE C{} ({}) passed although listed as expected red", o.id, o.title);
    }
    println!(
        "acceptance: {passed}/{} passed; known red: [{}]; unexpected failures: [{}]",
        outcomes.len(),
        known.join(", "),
        unexpected.join(", ")
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}

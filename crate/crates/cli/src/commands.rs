use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use transitnet_core::cluster::{
    adjusted_rand_index, kmeans, slot_labels, weekly_profile, write_assignments, write_centroids,
};
use transitnet_core::data::{
    aggregate, make_windows_in, prepare_samples, read_manifest, read_records, synth_generate, write_grid,
    write_manifest, write_records, Aggregation, Archetype, PeriodSpec, RidershipGrid, SampleWindow, ScalerParams,
};
use transitnet_core::eval::{
    challenge_stations, observed_counts, persistence_baseline, score, unscale_predictions, write_quartiles,
    write_report, Persistence, ScoreReport,
};
use transitnet_core::forecast::{
    iterative_forecast, lagged_forecast_errors, write_forecast, write_lag_curve, ForecastBuffer, GraphModel,
};
use transitnet_core::graph::{load_graph, write_edges, write_stations, TransitGraph};
use transitnet_core::model::{init_params, load_checkpoint, save_checkpoint, Checkpoint};
use transitnet_core::train::{fine_tune, predict_all, train, IndexCache, TrainError};

use crate::config::RunConfig;
use crate::{Cli, Command, UsageError};

/// Resolved configuration plus the provenance line stamped on every output.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
    header: String,
}

impl Run {
    fn new(cfg: RunConfig) -> anyhow::Result<Self> {
        let out = cfg.output_dir();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let header = format!("transitnet {} config={} seed={}", env!("CARGO_PKG_VERSION"), cfg.hash(), cfg.seed);
        Ok(Self { cfg, out, header })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn comment(&self) -> Option<&str> {
        Some(&self.header)
    }

    fn graph(&self) -> anyhow::Result<TransitGraph> {
        Ok(load_graph(&self.cfg.stations_path(), &self.cfg.edges_path(), self.cfg.data.self_loops)?)
    }

    fn aggregate(&self, graph: &TransitGraph) -> anyhow::Result<Aggregation> {
        let path = self.cfg.ridership_path();
        let records = read_records(&path)?;
        Ok(aggregate(&records, graph, self.cfg.data.interval_minutes, self.cfg.data.service)?)
    }

    fn checkpoint(&self) -> anyhow::Result<(Checkpoint, ScalerParams)> {
        let path = self.cfg.checkpoint_path();
        let ckpt = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
        let scaler = ckpt.scaler.clone().ok_or_else(|| anyhow!("{} stores no scaler", path.display()))?;
        Ok((ckpt, scaler))
    }

    /// Graph, raw grid and checkpoint, checked against each other.
    fn trained_inputs(&self) -> anyhow::Result<(TransitGraph, RidershipGrid, Checkpoint, ScalerParams)> {
        let (ckpt, scaler) = self.checkpoint()?;
        let graph = self.graph()?;
        let grid = self.aggregate(&graph)?.grid;
        if ckpt.params.config.stations != graph.len() || scaler.stations() != graph.len() {
            return Err(anyhow!(UsageError(format!(
                "checkpoint covers {} stations, network has {}",
                ckpt.params.config.stations,
                graph.len()
            ))));
        }
        Ok((graph, grid, ckpt, scaler))
    }

    fn period_rows(&self, grid: &RidershipGrid, spec: &PeriodSpec, name: &str) -> anyhow::Result<std::ops::Range<usize>> {
        let p = spec.get(name).ok_or_else(|| UsageError(format!("no period named `{name}`")))?;
        Ok(grid.rows_for_dates(p.start, p.end))
    }
}

pub fn dispatch(cli: Cli) -> anyhow::Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        // Fails only when a pool already exists, which keeps its own cap.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    let run = Run::new(cfg.with_seed(seed))?;
    match cli.command {
        Command::Synth => synth(&run),
        Command::Ingest => ingest(&run),
        Command::Train { resume } => train_cmd(&run, resume),
        Command::Evaluate => evaluate(&run),
        Command::Forecast { horizon } => forecast(&run, horizon),
        Command::LagCurve => lag_curve(&run),
        Command::Cluster => cluster(&run),
        Command::InspectCheckpoint { path } => inspect(&run, path),
    }
}

fn synth(run: &Run) -> anyhow::Result<String> {
    let data = synth_generate(&run.cfg.synth)?;
    let graph = data.graph(false)?;
    write_records(&run.path("ridership.csv"), &data.records, run.comment())?;
    write_stations(&run.path("stations.csv"), &data.stations, run.comment())?;
    write_edges(&run.path("edges.csv"), &graph, run.comment())?;
    write_manifest(&run.path("manifest.toml"), &data.manifest, run.comment())?;
    Ok(format!(
        "synth: {} stations, {} days, {} records, {} boardings -> {}",
        data.stations.len(),
        run.cfg.synth.days,
        data.records.len(),
        data.manifest.total_boardings,
        run.out.display()
    ))
}

fn ingest(run: &Run) -> anyhow::Result<String> {
    let graph = run.graph()?;
    let agg = run.aggregate(&graph)?;
    let grid = &agg.grid;
    let path = run.path("grid.csv");
    write_grid(&path, grid, run.comment())?;
    let spec = run.cfg.period_spec(grid)?;
    let periods: Vec<String> = spec
        .periods()
        .iter()
        .map(|p| format!("{}={}d", p.name, grid.rows_for_dates(p.start, p.end).len() / grid.slots_per_day()))
        .collect();
    Ok(format!(
        "ingest: {} stations x {} rows ({} days), {} duplicates, {} out of service, periods {} -> {}",
        grid.stations(),
        grid.rows(),
        grid.days,
        agg.duplicates,
        agg.out_of_service,
        periods.join(" "),
        path.display()
    ))
}

fn train_cmd(run: &Run, resume: bool) -> anyhow::Result<String> {
    let cfg = &run.cfg;
    let graph = run.graph()?;
    let grid = run.aggregate(&graph)?.grid;
    let spec = cfg.period_spec(&grid)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.stations = graph.len();
    let prepared = prepare_samples(&grid, &spec, &cfg.periods.train, model_cfg.recent_len, model_cfg.hist_len)?;
    let samples = prepared.samples(&cfg.periods.train);
    let validation = prepared.samples(&cfg.periods.validation);

    let result = if resume {
        let (ckpt, _) = run.checkpoint()?;
        fine_tune(&ckpt, samples, &graph, &cfg.train, validation)
    } else {
        train(init_params(&model_cfg)?, samples, &graph, &cfg.train, validation)
    };
    let outcome = match result {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, reason, mut checkpoint }) => {
            checkpoint.scaler = Some(prepared.scaler.clone());
            let path = run.path("diverged.ckpt");
            save_checkpoint(&checkpoint, &path)?;
            return Err(anyhow!(TrainError::Diverged { epoch, reason, checkpoint })
                .context(format!("last good parameters saved to {}", path.display())));
        }
        Err(e) => return Err(e.into()),
    };

    let mut ckpt = outcome.checkpoint;
    ckpt.scaler = Some(prepared.scaler.clone());
    let path = run.path("model.ckpt");
    save_checkpoint(&ckpt, &path)?;
    let mut log = format!("# {}\nepoch,train_mse,val_mse,seconds\n", run.header);
    for line in outcome.history.log_lines() {
        log.push_str(&line);
        log.push('\n');
    }
    std::fs::write(run.path("train_log.csv"), log).context("writing train_log.csv")?;

    let h = &outcome.history;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    Ok(format!(
        "train: {:?} hidden={} params={} samples={} epochs={} best_epoch={} train_mse={} val_mse={} -> {}",
        ckpt.params.config.variant,
        ckpt.params.config.hidden,
        ckpt.params.parameter_count(),
        samples.len(),
        h.epochs.len(),
        h.best_epoch,
        fmt(ckpt.meta.final_train_loss),
        fmt(ckpt.meta.best_val_loss),
        path.display()
    ))
}

fn evaluate(run: &Run) -> anyhow::Result<String> {
    let (graph, grid, ckpt, scaler) = run.trained_inputs()?;
    let spec = run.cfg.period_spec(&grid)?;
    let scaled = scaler.apply(&grid);
    let config = &ckpt.params.config;
    let mut reports: Vec<ScoreReport> = Vec::new();
    let mut challenges: Vec<(String, String)> = Vec::new();
    for name in &run.cfg.periods.evaluate {
        let rows = run.period_rows(&grid, &spec, name)?;
        let samples: Vec<SampleWindow> = make_windows_in(&scaled, config.recent_len, config.hist_len, rows).samples;
        if samples.is_empty() {
            return Err(UsageError(format!("period `{name}` has no complete windows")).into());
        }
        let cache = IndexCache::for_prediction(&graph, samples.len())?;
        let predicted = predict_all(&ckpt.params, &samples, &cache)?;
        let actual = observed_counts(&grid, &samples);
        let times: Vec<_> = samples.iter().map(|s| s.target_time).collect();
        let report = score(name, &grid.station_ids, &times, &actual, &unscale_predictions(&scaler, &predicted))?;

        let defined: Vec<(String, f64)> = grid
            .station_ids
            .iter()
            .zip(&report.station_r_squared)
            .filter_map(|(id, r)| r.map(|v| (id.clone(), v)))
            .collect();
        if defined.len() >= 5 {
            let (ids, r2): (Vec<String>, Vec<f64>) = defined.into_iter().unzip();
            challenges.extend(challenge_stations(&ids, &r2)?.into_iter().map(|id| (name.clone(), id)));
        }
        reports.push(report);
        for (kind, label) in [(Persistence::Last, "persistence-last"), (Persistence::Historical, "persistence-historical")] {
            let baseline = unscale_predictions(&scaler, &persistence_baseline(&samples, kind));
            reports.push(score(&format!("{name}/{label}"), &grid.station_ids, &times, &actual, &baseline)?);
        }
    }
    for r in &reports {
        let gap = (r.recombined_maape() - r.maape).abs();
        if gap > 1e-12 {
            return Err(anyhow!("{}: peak/non-peak MAAPE recombines with error {gap:e}", r.dataset));
        }
    }
    let path = run.path("scores.csv");
    write_report(&path, &reports, run.comment())?;
    write_quartiles(&run.path("station_quartiles.csv"), &reports, run.comment())?;
    let mut text = format!("# {}\ndataset,station_id\n", run.header);
    for (dataset, id) in &challenges {
        text.push_str(&format!("{dataset},{id}\n"));
    }
    std::fs::write(run.path("challenge_stations.csv"), text).context("writing challenge_stations.csv")?;

    let parts: Vec<String> = reports
        .iter()
        .filter(|r| !r.dataset.contains('/'))
        .map(|r| {
            let r2 = r.r_squared.map_or("-".to_string(), |v| format!("{v:.4}"));
            let last = reports.iter().find(|b| b.dataset == format!("{}/persistence-last", r.dataset));
            let base = last.map_or("-".to_string(), |b| format!("{:.4}", b.maape));
            format!("{} r2={r2} maape={:.4} persistence_maape={base}", r.dataset, r.maape)
        })
        .collect();
    Ok(format!("evaluate: {} -> {}", parts.join("; "), path.display()))
}

fn forecast(run: &Run, horizon: Option<usize>) -> anyhow::Result<String> {
    let (graph, grid, ckpt, scaler) = run.trained_inputs()?;
    let horizon = horizon.unwrap_or(run.cfg.forecast.horizon);
    if horizon == 0 {
        return Err(UsageError("horizon must be at least 1".into()).into());
    }
    let origin = match run.cfg.forecast.origin {
        Some(t) => grid.row_of(t).ok_or_else(|| UsageError(format!("origin {t} is not a grid slot")))?,
        None => {
            let spec = run.cfg.period_spec(&grid)?;
            run.period_rows(&grid, &spec, &run.cfg.periods.forecast)?.start
        }
    };
    let scaled = scaler.apply(&grid);
    let model = GraphModel { params: &ckpt.params, graph: &graph };
    let mut buffer = ForecastBuffer::new(&scaled, origin, ckpt.params.config.recent_len)?;
    let steps = iterative_forecast(&model, &mut buffer, &scaled, horizon)?;
    let path = run.path("forecast.csv");
    write_forecast(&path, &steps, &grid.station_ids, &scaler, run.comment())?;
    Ok(format!(
        "forecast: {} steps x {} stations from {} -> {}",
        steps.len(),
        grid.stations(),
        grid.time_of_row(origin),
        path.display()
    ))
}

fn lag_curve(run: &Run) -> anyhow::Result<String> {
    let (graph, grid, ckpt, scaler) = run.trained_inputs()?;
    let spec = run.cfg.period_spec(&grid)?;
    let rows = run.period_rows(&grid, &spec, &run.cfg.periods.forecast)?;
    let model = GraphModel { params: &ckpt.params, graph: &graph };
    let scores = lagged_forecast_errors(&model, &grid, &scaler, rows, run.cfg.forecast.max_lag)?;
    let path = run.path("lag_curve.csv");
    write_lag_curve(&path, &scores, run.comment())?;
    let first = scores.first().map_or(f64::NAN, |s| s.maape);
    let last = scores.last().map_or(f64::NAN, |s| s.maape);
    let ratio = if first > 0.0 { format!("{:.6}", last / first) } else { "undefined".into() };
    Ok(format!(
        "lag-curve: {} lags, maape lag1={first:.4} lag{}={last:.4} ratio={ratio} -> {}",
        scores.len(),
        scores.len(),
        path.display()
    ))
}

fn cluster(run: &Run) -> anyhow::Result<String> {
    let graph = run.graph()?;
    let grid = run.aggregate(&graph)?.grid;
    let profiles = weekly_profile(&grid)?;
    let result = kmeans(&profiles, run.cfg.cluster.k, run.cfg.seed, run.cfg.cluster.max_iter)?;
    let path = run.path("clusters.csv");
    write_assignments(&path, &profiles, &result.assignments, run.comment())?;
    write_centroids(&run.path("centroids.csv"), &result.centroids, &slot_labels(&grid), run.comment())?;
    let mut trace = format!("# {}\niteration,inertia\n", run.header);
    for (i, v) in result.inertia_trace.iter().enumerate() {
        trace.push_str(&format!("{},{v}\n", i + 1));
    }
    std::fs::write(run.path("cluster_trace.csv"), trace).context("writing cluster_trace.csv")?;

    let manifest_path = manifest_next_to(&run.cfg.ridership_path());
    let agreement = match manifest_path.exists().then(|| read_manifest(&manifest_path)).transpose()? {
        Some(m) => {
            let truth: Option<Vec<usize>> = profiles
                .iter()
                .map(|p| m.archetype_of(&p.station_id).map(|a| Archetype::ALL.iter().position(|&x| x == a).unwrap()))
                .collect();
            truth.map_or(String::new(), |t| format!(" ari={:.4}", adjusted_rand_index(&result.assignments, &t)))
        }
        None => String::new(),
    };
    Ok(format!(
        "cluster: k={} stations={} iterations={} inertia={:.6}{agreement} -> {}",
        run.cfg.cluster.k,
        profiles.len(),
        result.iterations,
        result.inertia,
        path.display()
    ))
}

fn manifest_next_to(ridership: &Path) -> PathBuf {
    ridership.parent().unwrap_or(Path::new(".")).join("manifest.toml")
}

fn inspect(run: &Run, path: Option<PathBuf>) -> anyhow::Result<String> {
    let path = path.unwrap_or_else(|| run.cfg.checkpoint_path());
    let ckpt = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
    let c = &ckpt.params.config;
    for (i, step) in ckpt.meta.lineage.iter().enumerate() {
        println!("  lineage[{i}] {step}");
    }
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    Ok(format!(
        "inspect-checkpoint: {:?} stations={} recent_len={} hist_len={} hidden={} gru_layers={} params={} epochs={} best_val={} scaler={} lineage={} ({})",
        c.variant,
        c.stations,
        c.recent_len,
        c.hist_len,
        c.hidden,
        c.gru_layers,
        ckpt.params.parameter_count(),
        ckpt.meta.epochs,
        fmt(ckpt.meta.best_val_loss),
        ckpt.scaler.is_some(),
        ckpt.meta.lineage.len(),
        path.display()
    ))
}

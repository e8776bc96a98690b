//! Experiment driver behind the `otseq` binary: runs the configured command
//! and writes CSV/JSON results into the output directory.
//!
//! Every output is a pure function of the resolved configuration, so equal
//! seeds give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{lambda_label, Command, MetricKind, RunConfig, SweepParameter};
use crate::costs::SegmentSequence;
use crate::error::{Error, Result};
use crate::fewshot::{evaluate_benchmark, BenchmarkReport, Episode};
use crate::ot::{sinkhorn_solve, CostMatrix, Marginal, SinkhornConfig};
use crate::seqdist::{agg_distance, cmot_distance, dtw_distance, AggMetric, CmotMetric, DistanceConfig, DtwMetric, SequenceMetric};
use crate::synth::{generate_class_bank, sample_sequence, EpisodeSampler, GeneratorConfig};
use crate::train::{embed, train_loop, Checkpoint, LinearEmbedding};

pub const CSV_HEADER: &str = "metric,regime,n_way,k_shot,episodes,accuracy,ci95,seed";

/// One benchmark row, optionally tagged with a sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub metric: String,
    pub regime: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub episodes: usize,
    pub accuracy: f64,
    pub ci95: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_parameter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
    pub per_episode_accuracies: Vec<f64>,
}

impl ReportRow {
    pub fn from_report(report: &BenchmarkReport, cfg: &RunConfig) -> Self {
        Self {
            metric: report.metric.clone(),
            regime: cfg.generator.regime.as_str().to_string(),
            n_way: cfg.shape.n_way,
            k_shot: cfg.shape.k_shot,
            episodes: report.episode_count,
            accuracy: report.mean_accuracy,
            ci95: report.ci95_halfwidth,
            seed: cfg.seed,
            sweep_parameter: None,
            sweep_value: None,
            per_episode_accuracies: report.per_episode_accuracies.clone(),
        }
    }

    fn with_sweep(mut self, parameter: SweepParameter, value: f64) -> Self {
        self.sweep_parameter = Some(parameter.as_str().to_string());
        self.sweep_value = Some(value);
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub rows: Vec<ReportRow>,
    pub solves: usize,
    pub nonconverged: usize,
    /// False when non-converged solves exceeded the allowed fraction.
    pub ok: bool,
}

/// Formats to six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Writes `<stem>.csv` (one row per report) and `<stem>.json` (config
/// snapshot, full-precision reports and any extra sections).
pub fn export_results(rows: &[ReportRow], dir: &Path, stem: &str, snapshot: &Value, extra: Value) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let sweep = rows.iter().any(|r| r.sweep_parameter.is_some());
    let mut csv = String::new();
    if sweep {
        csv.push_str("sweep_parameter,sweep_value,");
    }
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for r in rows {
        if sweep {
            let _ = write!(
                csv,
                "{},{},",
                r.sweep_parameter.as_deref().unwrap_or(""),
                r.sweep_value.map(|v| v.to_string()).unwrap_or_default()
            );
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.metric,
            r.regime,
            r.n_way,
            r.k_shot,
            r.episodes,
            sig6(r.accuracy),
            sig6(r.ci95),
            r.seed
        );
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, csv)?;

    let mut doc = json!({ "config": snapshot, "reports": rows });
    if let (Value::Object(doc), Value::Object(extra)) = (&mut doc, extra) {
        doc.extend(extra);
    }
    let json_path = dir.join(format!("{stem}.json"));
    write_json(&json_path, &doc)?;
    Ok(vec![csv_path, json_path])
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Plain-text matrix usable with gnuplot's `matrix with image`.
pub fn heatmap_text(title: &str, m: &Array2<f64>) -> String {
    let mut out = format!("# {title}\n# rows = {}, cols = {}\n", m.nrows(), m.ncols());
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

fn metric_for(kind: MetricKind, distance: &DistanceConfig) -> Box<dyn SequenceMetric> {
    match kind {
        MetricKind::Cmot => Box::new(CmotMetric::new(distance.clone())),
        MetricKind::Agg => Box::new(AggMetric),
        MetricKind::Dtw => Box::new(DtwMetric),
    }
}

struct Tally {
    solves: usize,
    nonconverged: usize,
}

impl Tally {
    fn new() -> Self {
        Self { solves: 0, nonconverged: 0 }
    }

    fn evaluate(&mut self, episodes: &[Episode], kind: MetricKind, distance: &DistanceConfig) -> Result<BenchmarkReport> {
        if kind == MetricKind::Cmot {
            let metric = CmotMetric::new(distance.clone());
            let report = evaluate_benchmark(episodes, &metric)?;
            let (s, n) = metric.convergence_stats();
            self.solves += s;
            self.nonconverged += n;
            Ok(report)
        } else {
            evaluate_benchmark(episodes, metric_for(kind, distance).as_ref())
        }
    }

    fn ok(&self, max_fraction: f64) -> bool {
        self.solves == 0 || (self.nonconverged as f64) <= max_fraction * self.solves as f64
    }

    fn json(&self) -> Value {
        json!({ "solves": self.solves, "nonconverged": self.nonconverged })
    }
}

/// Runs the configured command and writes its outputs.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cfg.command {
        Command::Bench => run_bench(cfg),
        Command::Sweep => run_sweep(cfg),
        Command::Train => run_train(cfg),
        Command::Solve => run_solve(cfg),
        Command::Dist => run_dist(cfg),
    }
}

fn finish(cfg: &RunConfig, files: Vec<PathBuf>, rows: Vec<ReportRow>, tally: &Tally) -> RunSummary {
    let ok = tally.ok(cfg.max_nonconverged_fraction);
    if !ok {
        log::warn!(
            "{} of {} Sinkhorn solves hit the iteration cap (allowed fraction {})",
            tally.nonconverged,
            tally.solves,
            cfg.max_nonconverged_fraction
        );
    }
    RunSummary { files, rows, solves: tally.solves, nonconverged: tally.nonconverged, ok }
}

fn run_bench(cfg: &RunConfig) -> Result<RunSummary> {
    let mut sampler = EpisodeSampler::new(cfg.generator.clone(), cfg.shape)?;
    let episodes = sampler.take(cfg.episodes)?;
    let mut tally = Tally::new();
    let mut rows = Vec::new();
    for &kind in &cfg.metrics {
        let report = tally.evaluate(&episodes, kind, &cfg.distance)?;
        rows.push(ReportRow::from_report(&report, cfg));
    }

    let mut plans = Vec::new();
    for (index, episode) in episodes.iter().take(cfg.dump_plans).enumerate() {
        let (s, q) = (&episode.support()[0], &episode.query()[0]);
        let d = cmot_distance(&s.sequence, &q.sequence, &cfg.distance)?;
        plans.push(json!({
            "episode": index,
            "support_label": s.label,
            "query_label": q.label,
            "lambda": d.lambda,
            "value": d.value,
            "plan": d.plan(),
        }));
    }
    let extra = json!({ "plans": plans, "convergence": tally.json() });
    let mut files = export_results(&rows, &cfg.output_dir, "bench", &cfg.snapshot(), extra)?;
    let bank_path = cfg.output_dir.join("bank.json");
    write_json(&bank_path, &sampler.bank)?;
    files.push(bank_path);
    Ok(finish(cfg, files, rows, &tally))
}

fn sweep_point(cfg: &RunConfig, value: f64) -> Result<DistanceConfig> {
    let mut d = cfg.distance.clone();
    match cfg.sweep.parameter {
        SweepParameter::Alpha => d.fusion.alpha = value,
        SweepParameter::Sigma => d.positional.sigma = value,
        SweepParameter::Lambda => d.lambda = crate::seqdist::LambdaRule::MedianHeuristic { multiplier: value },
    }
    if !(d.fusion.alpha >= 0.0) || !(d.positional.sigma > 0.0) || value.is_nan() {
        return Err(Error::InvalidConfig(format!("sweep value {value} is out of range for {}", cfg.sweep.parameter.as_str())));
    }
    Ok(d)
}

fn run_sweep(cfg: &RunConfig) -> Result<RunSummary> {
    let episodes = EpisodeSampler::new(cfg.generator.clone(), cfg.shape)?.take(cfg.episodes)?;
    let mut tally = Tally::new();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &value in &cfg.sweep.values {
        let distance = sweep_point(cfg, value)?;
        points.push(json!({ "value": value, "lambda_rule": lambda_label(&distance.lambda) }));
        for &kind in &cfg.metrics {
            let report = tally.evaluate(&episodes, kind, &distance)?;
            rows.push(ReportRow::from_report(&report, cfg).with_sweep(cfg.sweep.parameter, value));
        }
    }
    let extra = json!({ "sweep_points": points, "convergence": tally.json() });
    let files = export_results(&rows, &cfg.output_dir, "sweep", &cfg.snapshot(), extra)?;
    Ok(finish(cfg, files, rows, &tally))
}

/// Identity on the leading coordinates, zero elsewhere.
fn initial_embedding(d_out: usize, d_in: usize) -> LinearEmbedding {
    LinearEmbedding {
        weight: Array2::from_shape_fn((d_out, d_in), |(i, j)| if i == j { 1.0 } else { 0.0 }),
        bias: ndarray::Array1::zeros(d_out),
    }
}

fn embedded_report(
    tally: &mut Tally,
    episodes: &[Episode],
    emb: &LinearEmbedding,
    cfg: &RunConfig,
    name: &str,
) -> Result<ReportRow> {
    let embedded = episodes
        .iter()
        .map(|e| e.try_map_sequences(|s| embed(s, emb)))
        .collect::<Result<Vec<_>>>()?;
    let mut report = tally.evaluate(&embedded, MetricKind::Cmot, &cfg.distance)?;
    report.metric = name.to_string();
    Ok(ReportRow::from_report(&report, cfg))
}

fn run_train(cfg: &RunConfig) -> Result<RunSummary> {
    let eval_generator = GeneratorConfig { rng_seed: cfg.train.eval_seed, ..cfg.generator.clone() };
    let eval = EpisodeSampler::new(eval_generator, cfg.shape)?.take(cfg.episodes)?;
    let d_in = cfg.generator.raw_dim();
    let initial = initial_embedding(cfg.train.d_out.unwrap_or(d_in), d_in);

    let mut tally = Tally::new();
    let before = embedded_report(&mut tally, &eval, &initial, cfg, "cmot_before")?;
    let mut source = EpisodeSampler::new(cfg.generator.clone(), cfg.shape)?;
    let outcome = train_loop(&mut source, initial, &cfg.train.schedule, &cfg.distance)?;
    let after = embedded_report(&mut tally, &eval, &outcome.embedding, cfg, "cmot_after")?;

    let checkpoint = Checkpoint::new(&outcome.embedding, source.produced(), source.rng_state());
    let ck_path = cfg.output_dir.join("checkpoint.json");
    checkpoint.save(&ck_path)?;
    let rows = vec![before, after];
    let extra = json!({ "loss_history": outcome.losses, "convergence": tally.json() });
    let mut files = export_results(&rows, &cfg.output_dir, "train", &cfg.snapshot(), extra)?;
    files.push(ck_path);
    Ok(finish(cfg, files, rows, &tally))
}

/// The two sequences compared by `solve`/`dist` when no input files are given:
/// a noisy draw of class 0 and an independent draw of its reversal.
fn default_pair(cfg: &RunConfig) -> Result<(SegmentSequence, SegmentSequence)> {
    let bank = generate_class_bank(&cfg.generator)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let a = sample_sequence(&bank, 0, cfg.generator.noise_sigma, &mut rng)?;
    let b = sample_sequence(&bank, 0, cfg.generator.noise_sigma, &mut rng)?.reversed();
    Ok((a, b))
}

fn load_pair(cfg: &RunConfig) -> Result<(SegmentSequence, SegmentSequence)> {
    match (&cfg.input.a, &cfg.input.b) {
        (Some(a), Some(b)) => Ok((read_json(a)?, read_json(b)?)),
        (None, None) => default_pair(cfg),
        _ => Err(Error::InvalidConfig("input.a and input.b must be given together".into())),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn run_solve(cfg: &RunConfig) -> Result<RunSummary> {
    let cost: CostMatrix = match &cfg.input.cost {
        Some(path) => read_json(path)?,
        None => {
            let (a, b) = load_pair(cfg)?;
            cfg.distance.fused_cost(&a, &b)?
        }
    };
    let (m1, m2) = cost.shape();
    let solver: SinkhornConfig = cfg.distance.sinkhorn_for(&cost);
    let result = sinkhorn_solve(&cost, &Marginal::uniform(m1)?, &Marginal::uniform(m2)?, &solver)?;

    let doc = json!({
        "config": cfg.snapshot(),
        "lambda": result.lambda,
        "value": result.value,
        "linear_cost": result.linear_cost,
        "entropy": result.entropy,
        "iterations_used": result.iterations_used,
        "final_residual": result.final_residual,
        "converged": result.converged,
        "log_domain": result.log_domain,
        "cost": cost,
        "plan": result.plan,
    });
    let json_path = cfg.output_dir.join("solve.json");
    write_json(&json_path, &doc)?;
    let heat_path = cfg.output_dir.join("solve_plan.txt");
    std::fs::write(&heat_path, heatmap_text("transport plan", result.plan.entries()))?;
    let tally = Tally { solves: 1, nonconverged: usize::from(!result.converged) };
    Ok(finish(cfg, vec![json_path, heat_path], Vec::new(), &tally))
}

fn run_dist(cfg: &RunConfig) -> Result<RunSummary> {
    let (a, b) = load_pair(cfg)?;
    let cmot = cmot_distance(&a, &b, &cfg.distance)?;
    let dtw = dtw_distance(&a, &b)?;
    let doc = json!({
        "config": cfg.snapshot(),
        "a": a,
        "b": b,
        "cmot": {
            "value": cmot.value,
            "lambda": cmot.lambda,
            "linear_cost": cmot.solve.linear_cost,
            "converged": cmot.solve.converged,
            "cost": cmot.cost,
            "plan": cmot.plan(),
        },
        "agg": agg_distance(&a, &b)?,
        "dtw": { "cost": dtw.cost, "path": dtw.path },
    });
    let json_path = cfg.output_dir.join("dist.json");
    write_json(&json_path, &doc)?;
    let heat_path = cfg.output_dir.join("dist_plan.txt");
    std::fs::write(&heat_path, heatmap_text("cmot transport plan", cmot.plan().entries()))?;
    let tally = Tally { solves: 1, nonconverged: usize::from(!cmot.solve.converged) };
    Ok(finish(cfg, vec![json_path, heat_path], Vec::new(), &tally))
}

//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fvarseg::changepoint::ChangePointSet;
use fvarseg::evaluation::{run_experiment, EvalReport, ExperimentConfig, StageSummary};
use fvarseg::factor::SegmentSummary;
use fvarseg::pipeline::{segment, SegmentConfig, SegmentResult, ThresholdRule};
use fvarseg::simulate::gen_dataset;
use fvarseg::tuning::{
    calibrate_thresholds, BandwidthPlan, CalibrationCell, CalibrationConfig, CalibrationPoint, Stage2Mode,
    ThresholdModel,
};
use fvarseg::PanelSeries;

use crate::config::{Orientation, RunConfig, ThresholdSource};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, parse_numeric_csv, read_to_string, write_csv, write_json};

pub const SCHEMA_VERSION: u32 = 1;

fn panel_from_rows(rows: &[Vec<f64>], orientation: Orientation) -> CliResult<PanelSeries> {
    Ok(match orientation {
        Orientation::RowsTime => PanelSeries::from_time_rows(rows)?,
        Orientation::ColumnsTime => {
            let n = rows.first().map_or(0, Vec::len);
            let by_time: Vec<Vec<f64>> = (0..n).map(|t| rows.iter().map(|r| r[t]).collect()).collect();
            PanelSeries::from_time_rows(&by_time)?
        }
    })
}

/// Runs `f` on a pool of `workers` threads (the global pool when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("workers must be at least 1".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {w} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Serialize)]
struct TruthFile<'a> {
    schema_version: u32,
    truth: &'a fvarseg::simulate::Truth,
}

/// Writes `data.csv` (rows = time) and `truth.json` into `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let spec = cfg.simulate.to_spec(cfg.seed)?;
    let data = with_workers(cfg.workers, || gen_dataset(&spec))??;
    ensure_dir(out)?;
    let csv_path = out.join("data.csv");
    let header: Vec<String> = (1..=spec.p).map(|i| format!("x{i}")).collect();
    let rows = data.x.to_time_rows().into_iter().map(|r| r.into_iter().map(fmt_f64).collect());
    write_csv(&csv_path, &header, rows)?;
    let truth_path = out.join("truth.json");
    write_json(&truth_path, &TruthFile { schema_version: SCHEMA_VERSION, truth: &data.truth })?;
    println!(
        "simulated {:?}: n={} p={} chi_changes={:?} xi_changes={:?} -> {}",
        spec.scenario,
        spec.n,
        spec.p,
        data.truth.chi_changes,
        data.truth.xi_changes,
        out.display()
    );
    Ok(vec![csv_path, truth_path])
}

/// Threshold model file written by `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub seed: u64,
    pub replicates: usize,
    pub tau: f64,
    pub stage2_mode: Stage2Mode,
    pub grid: Vec<CalibrationCell>,
    pub stage1: ThresholdModel,
    pub stage2: ThresholdModel,
    pub points: Vec<CalibrationPoint>,
}

impl ModelFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: not a threshold model file: {e}", path.display())))
    }
}

fn run_calibration(cfg: &CalibrationConfig, workers: Option<usize>) -> CliResult<ModelFile> {
    let res = with_workers(workers, || calibrate_thresholds(cfg))??;
    Ok(ModelFile {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        replicates: cfg.replicates,
        tau: cfg.tau,
        stage2_mode: res.stage2_mode,
        grid: cfg.grid.clone(),
        stage1: res.stage1,
        stage2: res.stage2,
        points: res.points,
    })
}

/// Runs the null calibration and writes the model JSON to `out`.
pub fn cmd_calibrate(cfg: &RunConfig, out: &Path) -> CliResult<ModelFile> {
    let ccfg = cfg.calibration_config()?;
    let model = run_calibration(&ccfg, cfg.workers)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_json(out, &model)?;
    println!("stage 1 R2_adj = {}", fmt_f64(model.stage1.r2_adj));
    println!("stage 2 R2_adj = {}", fmt_f64(model.stage2.r2_adj));
    Ok(model)
}

#[derive(Debug, Serialize)]
struct StageThresholds {
    stage1: Vec<(usize, f64)>,
    stage2: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize)]
struct ChangePointsFile<'a> {
    schema_version: u32,
    n: usize,
    p: usize,
    d: usize,
    seed: u64,
    no_factor: bool,
    demean: bool,
    bandwidths: &'a BandwidthPlan,
    chi_points: &'a ChangePointSet,
    xi_points: &'a ChangePointSet,
    thresholds: StageThresholds,
    stage2_scales: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize)]
struct SegmentsFile<'a> {
    schema_version: u32,
    segments: &'a [SegmentSummary],
}

pub fn load_panel(path: &Path, orientation: Orientation) -> CliResult<PanelSeries> {
    let rows = parse_numeric_csv(&read_to_string(path)?).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    panel_from_rows(&rows, orientation)
}

fn threshold_rules(cfg: &RunConfig, n: usize, p: usize) -> CliResult<(ThresholdRule, ThresholdRule)> {
    let seg = &cfg.segment;
    let sources = [seg.stage1_threshold.source()?, seg.stage2_threshold.source()?];
    let mut calibrated = None;
    let mut rules = Vec::with_capacity(2);
    for (stage, source) in sources.into_iter().enumerate() {
        let rule = match source {
            ThresholdSource::Fixed(v) => ThresholdRule::Fixed(v),
            ThresholdSource::Default => ThresholdRule::Default,
            ThresholdSource::Model(path) => {
                let file = ModelFile::load(&path)?;
                let mode = if seg.no_factor { Stage2Mode::Standalone } else { Stage2Mode::FactorAdjusted };
                if stage == 1 && file.stage2_mode != mode {
                    log::warn!("{} was calibrated for {:?} but the run is {:?}", path.display(), file.stage2_mode, mode);
                }
                ThresholdRule::Model(if stage == 0 { file.stage1 } else { file.stage2 })
            }
            ThresholdSource::Calibrate => {
                if calibrated.is_none() {
                    let ccfg = CalibrationConfig {
                        grid: vec![CalibrationCell { n, p, q: 2, d: seg.d, bandwidths: seg.bandwidth_plan()? }],
                        replicates: seg.calibration_replicates,
                        tau: cfg.calibrate.tau,
                        seed: cfg.seed,
                        chi: if seg.no_factor { fvarseg::simulate::ChiModel::None } else { cfg.calibrate.chi },
                        stage2_mode: if seg.no_factor { Stage2Mode::Standalone } else { Stage2Mode::FactorAdjusted },
                        lambda: seg.lambda_rule()?,
                        factor: seg.factor_config(),
                    };
                    ccfg.validate()?;
                    calibrated = Some(run_calibration(&ccfg, cfg.workers)?);
                }
                let file = calibrated.as_ref().expect("calibration ran above");
                ThresholdRule::Model(if stage == 0 { file.stage1.clone() } else { file.stage2.clone() })
            }
        };
        rules.push(rule);
    }
    let stage2 = rules.pop().expect("two rules");
    let stage1 = rules.pop().expect("two rules");
    Ok((stage1, stage2))
}

pub fn segment_config(cfg: &RunConfig, n: usize, p: usize) -> CliResult<SegmentConfig> {
    let seg = &cfg.segment;
    seg.validate()?;
    let (stage1_threshold, stage2_threshold) = threshold_rules(cfg, n, p)?;
    let scfg = SegmentConfig {
        bandwidths: seg.bandwidth_plan()?,
        order: seg.d,
        stage1_threshold,
        stage2_threshold,
        stage1_eta: seg.stage1_eta,
        stage2_eta: seg.stage2_eta,
        refine: seg.refine,
        lambda: seg.lambda_rule()?,
        factor: seg.factor_config(),
        no_factor: seg.no_factor,
        demean: seg.demean,
    };
    scfg.plan(n, p)?;
    Ok(scfg)
}

fn write_segment_outputs(cfg: &RunConfig, res: &SegmentResult, out: &Path) -> CliResult<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut files = Vec::new();
    let cp_path = out.join("change_points.json");
    write_json(
        &cp_path,
        &ChangePointsFile {
            schema_version: SCHEMA_VERSION,
            n: res.n,
            p: res.p,
            d: cfg.segment.d,
            seed: cfg.seed,
            no_factor: cfg.segment.no_factor,
            demean: cfg.segment.demean,
            bandwidths: &res.plan,
            chi_points: &res.chi_points,
            xi_points: &res.xi_points,
            thresholds: StageThresholds {
                stage1: res.stage1.iter().map(|(t, th)| (t.bandwidth, *th)).collect(),
                stage2: res.stage2.iter().map(|(r, th)| (r.bandwidth, *th)).collect(),
            },
            stage2_scales: res.stage2.iter().map(|(r, _)| (r.bandwidth, r.scale)).collect(),
        },
    )?;
    files.push(cp_path);
    for (trace, _) in &res.stage1 {
        let path = out.join(format!("stage1_trace_G{}.csv", trace.bandwidth));
        let mut header = vec!["v".to_string()];
        header.extend((0..trace.frequencies().len()).map(|l| format!("omega_{l}")));
        header.extend(["max".to_string(), "average".to_string()]);
        let rows = trace.anchors.iter().enumerate().map(|(i, v)| {
            let mut row = vec![v.to_string()];
            row.extend(trace.values[i].iter().copied().map(fmt_f64));
            row.push(fmt_f64(trace.peak(i).1));
            row.push(fmt_f64(trace.average(i)));
            row
        });
        write_csv(&path, &header, rows)?;
        files.push(path);
    }
    for (r, _) in &res.stage2 {
        let path = out.join(format!("stage2_trace_G{}.csv", r.bandwidth));
        let rows = r.trace.iter().map(|(v, t)| vec![v.to_string(), fmt_f64(*t)]);
        write_csv(&path, &["v".to_string(), "stat".to_string()], rows)?;
        files.push(path);
    }
    let seg_path = out.join("segments.json");
    write_json(&seg_path, &SegmentsFile { schema_version: SCHEMA_VERSION, segments: &res.segments })?;
    files.push(seg_path);
    Ok(files)
}

/// Reads the input panel, runs both stages and writes the results to `out`.
pub fn cmd_segment(cfg: &RunConfig, out: &Path) -> CliResult<SegmentResult> {
    let input = cfg
        .data
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("no input file given (--input or [data] input)".into()))?;
    let x = load_panel(input, cfg.data.orientation)?;
    let scfg = segment_config(cfg, x.len(), x.dim())?;
    let res = with_workers(cfg.workers, || segment(&x, &scfg))??;
    write_segment_outputs(cfg, &res, out)?;
    println!(
        "chi change points: {:?}; xi change points: {:?} -> {}",
        res.chi_points.locations(),
        res.xi_points.locations(),
        out.display()
    );
    Ok(res)
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    schema_version: u32,
    seed: u64,
    replicates: usize,
    reports: &'a [EvalReport],
}

fn summary_row(report: &EvalReport, stage: &str, s: &StageSummary) -> Vec<String> {
    let spec = &report.spec;
    let mut row = vec![
        format!("{:?}", spec.scenario),
        spec.n.to_string(),
        spec.p.to_string(),
        spec.d.to_string(),
        stage.to_string(),
    ];
    row.extend(s.distribution.counts.iter().map(usize::to_string));
    row.push(fmt_f64(s.mean_hausdorff));
    row.push(fmt_f64(report.mean_runtime_secs));
    row.push(report.failures.to_string());
    row
}

/// Monte Carlo evaluation; writes `report.json`, `report.csv` and
/// `replicates.csv` into `out`.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> CliResult<Vec<EvalReport>> {
    let ev = &cfg.evaluate;
    if ev.replicates == 0 {
        return Err(CliError::Config("evaluate.replicates must be at least 1".into()));
    }
    if ev.cells.is_empty() {
        return Err(CliError::Config("evaluate.cells is empty".into()));
    }
    let cells = ev.cells.iter().map(|c| c.to_spec(0)).collect::<CliResult<Vec<_>>>()?;
    let (n, p) = (cells[0].n, cells[0].p);
    let method = segment_config(cfg, n, p)?;
    let exp = ExperimentConfig { cells, replicates: ev.replicates, seed: cfg.seed, method };
    let reports = with_workers(cfg.workers, || run_experiment(&exp))?;
    ensure_dir(out)?;
    write_json(
        &out.join("report.json"),
        &ReportFile { schema_version: SCHEMA_VERSION, seed: cfg.seed, replicates: ev.replicates, reports: &reports },
    )?;
    let header: Vec<String> = [
        "scenario", "n", "p", "d", "stage", "le_minus2", "minus1", "zero", "plus1", "ge_plus2", "mean_hausdorff",
        "mean_runtime_secs", "failures",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    for r in &reports {
        if !exp.method.no_factor {
            rows.push(summary_row(r, "chi", &r.chi));
        }
        rows.push(summary_row(r, "xi", &r.xi));
    }
    write_csv(&out.join("report.csv"), &header, rows)?;
    let rep_header: Vec<String> = ["cell", "replicate", "seed", "stage", "k_diff", "hausdorff", "runtime_secs", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rep_rows = Vec::new();
    for (c, r) in reports.iter().enumerate() {
        for rec in &r.replicates {
            for (stage, score) in [("chi", &rec.chi), ("xi", &rec.xi)] {
                if stage == "chi" && exp.method.no_factor {
                    continue;
                }
                rep_rows.push(vec![
                    c.to_string(),
                    rec.replicate.to_string(),
                    rec.seed.to_string(),
                    stage.to_string(),
                    score.as_ref().map_or(String::new(), |s| s.k_diff.to_string()),
                    score.as_ref().map_or(String::new(), |s| fmt_f64(s.hausdorff)),
                    fmt_f64(rec.runtime_secs),
                    rec.error.clone().unwrap_or_default(),
                ]);
            }
        }
    }
    write_csv(&out.join("replicates.csv"), &rep_header, rep_rows)?;
    for r in &reports {
        println!(
            "{:?} n={} p={}: xi exact {:.2}, mean d_H {:.4}, failures {}",
            r.spec.scenario,
            r.spec.n,
            r.spec.p,
            r.xi.distribution.exact_rate(),
            r.xi.mean_hausdorff,
            r.failures
        );
    }
    Ok(reports)
}

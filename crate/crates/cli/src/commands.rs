//! The four subcommands, as library functions the binary and tests share.

use std::path::{Path, PathBuf};

use chanmix_core::artifact::write_atomic;
use chanmix_core::cost::{count_search_space, mobilenet_v1_channels, SpaceMode};
use chanmix_core::data::load_dataset;
use chanmix_core::lower::{export_lowered, lower, verify_equivalence, SkipEntry};
use chanmix_core::sweep::{pareto_front, sweep, ParetoRecord};
use chanmix_core::train::{curves_csv, load_checkpoint, prepare_warmup, save_checkpoint, SearchResult};
use chanmix_core::{CostLut, PrecisionAssignment, PrecisionSet, RegMode};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const RESULTS_HEADER: [&str; 6] = ["lambda", "score", "size_bits", "energy_uJ", "act_bits", "per_layer_w_hist"];

/// Per-lambda assignment file written next to `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub lambda: f64,
    pub score: f64,
    pub test_score: f64,
    pub size_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_uj: Option<f64>,
    pub assignment: PrecisionAssignment,
}

impl AssignmentFile {
    /// Accepts either this wrapper or a bare assignment.
    pub fn read_assignment(path: &Path) -> CliResult<PrecisionAssignment> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if let Ok(f) = serde_json::from_str::<AssignmentFile>(&text) {
            return Ok(f.assignment);
        }
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub struct SearchOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: usize,
}

/// Files produced by one sweep.
#[derive(Debug)]
pub struct SearchOutput {
    pub out_dir: PathBuf,
    pub records: Vec<ParetoRecord>,
    pub assignment_files: Vec<PathBuf>,
}

fn run_file(dir: &Path, stem: &str, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{i:02}.{ext}"))
}

pub fn results_csv(records: &[ParetoRecord]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        w.write_record([
            r.lambda.to_string(),
            r.score.to_string(),
            r.size_bits.to_string(),
            r.energy_uj.map(|e| e.to_string()).unwrap_or_default(),
            r.act_bits_field(),
            r.hist_field(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Other(e.to_string()))
}

pub fn read_results(path: &Path) -> CliResult<Vec<ParetoRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(CliError::Config(format!(
            "{}: expected header {}",
            path.display(),
            RESULTS_HEADER.join(",")
        )));
    }
    let bad = |row: usize, what: &str| CliError::Config(format!("{} row {row}: bad {what}", path.display()));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let energy = match &rec[3] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(i + 1, "energy_uJ"))?),
        };
        out.push(ParetoRecord {
            lambda: rec[0].parse().map_err(|_| bad(i + 1, "lambda"))?,
            score: rec[1].parse().map_err(|_| bad(i + 1, "score"))?,
            size_bits: rec[2].parse().map_err(|_| bad(i + 1, "size_bits"))?,
            energy_uj: energy,
            act_bits: ParetoRecord::parse_act_bits(&rec[4])?,
            w_hist: ParetoRecord::parse_hist(&rec[5])?,
        });
    }
    Ok(out)
}

fn check_finite(r: &SearchResult) -> CliResult<()> {
    let last = r.curves.last().map(|c| c.total).unwrap_or(0.0);
    if !r.score.is_finite() || !last.is_finite() {
        return Err(CliError::Diverged(format!("lambda {}: loss {last}, score {}", r.lambda, r.score)));
    }
    Ok(())
}

/// Runs the sweep of a config and writes `results.csv` plus per-lambda files.
pub fn cmd_search(config: &Path, opts: &SearchOptions) -> CliResult<SearchOutput> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = opts.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &opts.out {
        cfg.out_dir = o.clone();
    }
    let lut = match &cfg.lut {
        Some(p) => {
            let l = CostLut::load(p)?;
            l.validate(&cfg.space.act_set, &cfg.space.weight_set)?;
            Some(l)
        }
        None => None,
    };
    let train = cfg.train.clone();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let splits = load_dataset(&cfg.dataset, cfg.val_fraction, cfg.test_fraction, train.seed)?;
    info!(
        "{} train / {} val / {} test samples",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let cache = cfg.out_dir.join("cache");
    std::fs::create_dir_all(&cache)?;
    let warm = prepare_warmup(&cfg.arch, &cfg.space, &splits.train, &cfg.dataset_key(), &train, Some(&cache))?;
    let results = sweep(&warm, &splits, &train, &cfg.lambdas, lut.as_ref(), opts.jobs.max(1))?;

    let mut records = Vec::with_capacity(results.len());
    let mut assignment_files = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        check_finite(r)?;
        let file = AssignmentFile {
            lambda: r.lambda,
            score: r.score,
            test_score: r.test_score,
            size_bits: r.size_bits,
            energy_uj: r.energy_uj,
            assignment: r.assignment.clone(),
        };
        let path = run_file(&cfg.out_dir, "assignment", i, "json");
        write_atomic(&path, serde_json::to_string_pretty(&file)?.as_bytes())?;
        save_checkpoint(&r.model, &run_file(&cfg.out_dir, "model", i, "json"))?;
        write_atomic(&run_file(&cfg.out_dir, "curves", i, "csv"), curves_csv(&r.curves)?.as_bytes())?;
        assignment_files.push(path);
        records.push(ParetoRecord::from_result(r));
    }
    write_atomic(&cfg.out_dir.join("results.csv"), &results_csv(&records)?)?;
    write_atomic(&cfg.out_dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(SearchOutput {
        out_dir: cfg.out_dir,
        records,
        assignment_files,
    })
}

/// Writes the non-dominated rows of a results file; returns them.
pub fn cmd_pareto(results: &Path, mode: RegMode, out: &Path) -> CliResult<Vec<ParetoRecord>> {
    let records = read_results(results)?;
    if mode == RegMode::Energy && records.iter().any(|r| r.energy_uj.is_none()) {
        return Err(CliError::Config("energy front requested but results have no energy column".into()));
    }
    let front = pareto_front(&records, mode);
    write_atomic(out, &results_csv(&front)?)?;
    Ok(front)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceReport {
    pub layers: usize,
    pub channels: usize,
    pub log10_layerwise: f64,
    pub log10_channelwise: f64,
}

impl std::fmt::Display for SpaceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "searched layers:  {}", self.layers)?;
        writeln!(f, "output channels:  {}", self.channels)?;
        writeln!(f, "layer-wise:       10^{:.2}", self.log10_layerwise)?;
        write!(f, "channel-wise:     10^{:.2}", self.log10_channelwise)
    }
}

pub fn space_report(channels: &[usize], weight_set: &PrecisionSet, act_set: &PrecisionSet) -> SpaceReport {
    SpaceReport {
        layers: channels.len(),
        channels: channels.iter().sum(),
        log10_layerwise: count_search_space(channels, weight_set, act_set, SpaceMode::Layerwise),
        log10_channelwise: count_search_space(channels, weight_set, act_set, SpaceMode::Channelwise),
    }
}

pub enum SpaceSource<'a> {
    Config(&'a Path),
    MobileNet { width: f64, classes: usize },
}

pub fn cmd_space(source: SpaceSource<'_>) -> CliResult<SpaceReport> {
    match source {
        SpaceSource::Config(p) => {
            let cfg = ExperimentConfig::load(p)?;
            let weight = cfg.space.weight_set.clone();
            // with activation search off, each layer has a single activation choice
            let act = if cfg.space.search_activations {
                cfg.space.act_set.clone()
            } else {
                PrecisionSet::new(vec![cfg.space.act_set.max()])?
            };
            Ok(space_report(&cfg.searched_channels(), &weight, &act))
        }
        SpaceSource::MobileNet { width, classes } => {
            if !(width > 0.0 && width.is_finite()) || classes == 0 {
                return Err(CliError::Config("width must be positive and classes non-zero".into()));
            }
            let set = PrecisionSet::new(vec![2, 4, 8])?;
            Ok(space_report(&mobilenet_v1_channels(width, classes), &set, &set))
        }
    }
}

/// Layer numbers count quantized (conv/fc) layers only, as in the skip list.
#[derive(Debug, Clone, Serialize)]
pub struct LowerReport {
    pub max_abs_diff: f64,
    pub inputs: usize,
    pub size_bits: u64,
    pub permuted_layers: Vec<usize>,
    pub skipped: Vec<SkipEntry>,
    pub sub_layers: Vec<Vec<(u8, usize)>>,
}

/// Lowers a checkpoint under an assignment, verifies and exports it.
///
/// Nothing is written when the verification finds a difference.
pub fn cmd_lower(model: &Path, assignment: &Path, out: &Path, inputs: usize, seed: u64) -> CliResult<LowerReport> {
    let m = load_checkpoint(model)?;
    let asg = AssignmentFile::read_assignment(assignment)?;
    let lowering = lower(&m, &asg)?;
    let lowered = lowering.lowered;
    let diff = verify_equivalence(&m, &asg, &lowered, inputs.max(1), seed)?;
    let report = LowerReport {
        max_abs_diff: diff,
        inputs: inputs.max(1),
        size_bits: lowered.size_bits(),
        permuted_layers: lowered
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.permuted)
            .map(|(q, _)| q)
            .collect(),
        skipped: lowered.skipped.clone(),
        sub_layers: lowered
            .layers
            .iter()
            .map(|l| l.sub_layers.iter().map(|s| (s.weight_bits, s.channels.len())).collect())
            .collect(),
    };
    if diff != 0.0 {
        return Err(CliError::Equivalence(diff));
    }
    export_lowered(&lowered, out)?;
    let report_path = out.with_extension("report.json");
    write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

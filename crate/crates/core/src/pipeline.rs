//! End-to-end batch run: load, overlap audit, propensity fits, balance,
//! outcome model and sensitivity grid, with every artifact written under
//! one output directory.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::{balance_table, BalanceTable, Phase};
use crate::error::{Error, ErrorKind, Result};
use crate::outcome::{analyze_outcome, coefficient_table, MateAveraging, OutcomeAnalysis};
use crate::overlap::{overlap_report, OverlapReport};
use crate::plot::{love_plot, sensitivity_plot};
use crate::ps::{fit_propensities, BoostConfig, PropensityFit, PsMode, Stratum};
use crate::sensitivity::{ov_grid, SensitivityConfig, SensitivityGrid};
use crate::tabular::{load_dataset, Dataset, SchemaConfig};

/// Environment variable naming the output directory when neither the config
/// nor the command line does.
pub const OUT_DIR_ENV: &str = "MODWT_OUT";
pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

fn default_sensitivity() -> Option<SensitivityConfig> {
    Some(SensitivityConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV. A relative path is taken relative to the config file.
    pub input: PathBuf,
    pub schema: SchemaConfig,
    #[serde(default)]
    pub boost: BoostConfig,
    /// `null` disables the sensitivity step; absent means defaults.
    #[serde(default = "default_sensitivity")]
    pub sensitivity: Option<SensitivityConfig>,
    #[serde(default)]
    pub ps_mode: PsMode,
    #[serde(default)]
    pub mate_averaging: MateAveraging,
    #[serde(default)]
    pub strict_overlap: bool,
    #[serde(default)]
    pub strict_balance: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Master seed; it replaces the seeds of the boosting and sensitivity
    /// sections.
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    /// Parses `path` and resolves a relative input path against its folder.
    /// Returns the config together with the exact bytes read.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
        let mut cfg = Self::from_json(text)?;
        if cfg.input.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.input = dir.join(&cfg.input);
            }
        }
        Ok((cfg, bytes))
    }

    /// Checks every section and that the input exists.
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.boost.validate()?;
        if let Some(s) = &self.sensitivity {
            s.validate()?;
        }
        if !self.input.is_file() {
            return Err(Error::Config(format!("input file {} does not exist", self.input.display())));
        }
        Ok(())
    }

    /// The boosting section with the master seed applied.
    pub fn effective_boost(&self) -> BoostConfig {
        BoostConfig {
            seed: self.seed,
            ..self.boost.clone()
        }
    }

    pub fn effective_sensitivity(&self) -> Option<SensitivityConfig> {
        self.sensitivity.clone().map(|s| SensitivityConfig { seed: self.seed, ..s })
    }

    /// Output directory: the config value, else `$MODWT_OUT`.
    pub fn resolve_out_dir(&self) -> Result<PathBuf> {
        match &self.out_dir {
            Some(d) => Ok(d.clone()),
            None => std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| Error::Config(format!("no output directory: set out_dir or {OUT_DIR_ENV}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Config,
    Load,
    Overlap,
    Propensity,
    Balance,
    Outcome,
    Sensitivity,
    Emit,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Config => "config",
            Step::Load => "load",
            Step::Overlap => "overlap",
            Step::Propensity => "propensity",
            Step::Balance => "balance",
            Step::Outcome => "outcome",
            Step::Sensitivity => "sensitivity",
            Step::Emit => "emit",
        })
    }
}

/// A module error labelled with the step that raised it.
#[derive(Debug)]
pub struct StepError {
    pub step: Step,
    pub source: Error,
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step `{}` failed: {}", self.step, self.source)
    }
}

impl std::error::Error for StepError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StepError {
    pub fn kind(&self) -> ErrorKind {
        self.source.kind()
    }

    /// Process exit code: 1 input or config, 2 statistical, 3 gate abort.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Input => 1,
            ErrorKind::Statistical => 2,
            ErrorKind::Gate => 3,
        }
    }
}

trait AtStep<T> {
    fn at(self, step: Step) -> std::result::Result<T, StepError>;
}

impl<T> AtStep<T> for Result<T> {
    fn at(self, step: Step) -> std::result::Result<T, StepError> {
        self.map_err(|source| StepError { step, source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Deterministic record of a run. Wall-clock timings live in a separate
/// file so this one is byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub out_dir_from: String,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: Step,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub dataset_rows: usize,
    pub dropped_rows: usize,
    pub overlap: OverlapReport,
    pub fits: Vec<PropensityFit>,
    pub balance: BalanceTable,
    pub outcome: OutcomeAnalysis,
    pub sensitivity: Vec<SensitivityGrid>,
    pub manifest: Manifest,
    pub timings: Vec<StepTiming>,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes artifacts and remembers their digests.
struct Emitter {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Emitter {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileDigest {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

pub fn weights_csv(ds: &Dataset, fit: &PropensityFit) -> Result<Vec<u8>> {
    csv_bytes(
        &["row_id", "propensity", "ps_weight", "composite_weight"],
        fit.rows.iter().enumerate().map(|(k, &i)| {
            vec![
                ds.row_ids[i].to_string(),
                num(fit.propensities[k]),
                num(fit.ps_weights[k]),
                num(fit.composite_weights[k]),
            ]
        }),
    )
}

pub fn trace_csv(fit: &PropensityFit) -> Result<Vec<u8>> {
    csv_bytes(
        &["iteration", "ks_max", "es_max"],
        fit.criterion_trace
            .iter()
            .map(|p| vec![p.iteration.to_string(), num(p.ks_max), num(p.es_max)]),
    )
}

pub fn balance_csv(table: &BalanceTable, stratum: Stratum) -> Result<Vec<u8>> {
    csv_bytes(
        &["covariate", "level", "phase", "mean_treated", "mean_control", "smd", "ks", "flag_smd", "flag_ks"],
        table.rows_for(stratum).map(|r| {
            vec![
                r.covariate.clone(),
                r.level.clone().unwrap_or_else(|| "-".into()),
                r.phase.as_str().into(),
                num(r.mean_treated),
                num(r.mean_control),
                num(r.smd),
                num(r.ks),
                r.flag_smd.to_string(),
                r.flag_ks.to_string(),
            ]
        }),
    )
}

pub fn outcome_csv(analysis: &OutcomeAnalysis) -> Result<Vec<u8>> {
    csv_bytes(
        &["term", "estimate", "se", "z", "p", "ci_lo", "ci_hi"],
        coefficient_table(&analysis.fit).into_iter().map(|r| {
            vec![r.term, num(r.estimate), num(r.se), num(r.z), num(r.p_value), num(r.ci_lo), num(r.ci_hi)]
        }),
    )
}

pub fn mate_csv(analysis: &OutcomeAnalysis) -> Result<Vec<u8>> {
    csv_bytes(
        &["stratum", "risk_difference", "se", "ci_lo", "ci_hi"],
        analysis.mate.iter().map(|m| {
            vec![m.stratum.to_string(), num(m.risk_difference), num(m.se), num(m.ci_lo), num(m.ci_hi)]
        }),
    )
}

pub fn sensitivity_csv(grid: &SensitivityGrid) -> Result<Vec<u8>> {
    csv_bytes(
        &["es", "rho", "mean_estimate", "mean_p", "n_ok", "n_failed", "status"],
        grid.cells.iter().map(|c| {
            vec![
                num(c.es),
                num(c.rho),
                opt(c.mean_estimate),
                opt(c.mean_p),
                c.n_ok.to_string(),
                c.n_failed.to_string(),
                serde_json::to_value(c.status)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
            ]
        }),
    )
}

pub fn benchmarks_csv(grid: &SensitivityGrid) -> Result<Vec<u8>> {
    csv_bytes(
        &["covariate", "level", "es", "rho"],
        grid.benchmarks.iter().map(|b| {
            vec![
                b.covariate.clone(),
                b.level.clone().unwrap_or_else(|| "-".into()),
                num(b.es),
                num(b.rho),
            ]
        }),
    )
}

/// Human-readable summary with the rounding conventions of published
/// tables: percentages to one decimal, SMD and KS to two.
pub fn summary_text(bundle: &ReportBundle) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Rows analysed: {} (dropped for missing values: {})", bundle.dataset_rows, bundle.dropped_rows);
    let _ = writeln!(
        s,
        "Overlap: {} empty cells, {} range violations",
        bundle.overlap.empty_cells.len(),
        bundle.overlap.range_violations.len()
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "Propensity fits");
    for f in &bundle.fits {
        let p = f.selected_point();
        let _ = writeln!(
            s,
            "  {:<7} iteration {:>5}  ks_max {:.3}  es_max {:.3}  ESS treated {:.0}  control {:.0}",
            f.stratum.to_string(),
            f.selected_iteration,
            p.ks_max,
            p.es_max,
            f.ess_treated,
            f.ess_control
        );
    }
    let _ = writeln!(s);
    for sm in &bundle.balance.summary {
        let _ = writeln!(
            s,
            "Balance {} {:<4}: max |SMD| {:.2}, max KS {:.2}",
            sm.stratum,
            sm.phase.as_str(),
            sm.max_abs_smd,
            sm.max_ks
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<26} {:>7} {:>6} {:>7} {:>6} {:>6} {:>6}",
        "covariate level (stratum)", "% trt", "% ctl", "phase", "SMD", "KS", "flags"
    );
    for r in &bundle.balance.rows {
        let name = match &r.level {
            Some(l) => format!("{}={} ({})", r.covariate, l, r.stratum),
            None => format!("{} ({})", r.covariate, r.stratum),
        };
        let (a, b) = if r.level.is_some() {
            (format!("{:.1}", 100.0 * r.mean_treated), format!("{:.1}", 100.0 * r.mean_control))
        } else {
            (format!("{:.2}", r.mean_treated), format!("{:.2}", r.mean_control))
        };
        let flags = format!("{}{}", if r.flag_smd { "a" } else { "" }, if r.flag_ks { "b" } else { "" });
        let _ = writeln!(
            s,
            "{:<26} {:>7} {:>6} {:>7} {:>6.2} {:>6.2} {:>6}",
            name,
            a,
            b,
            r.phase.as_str(),
            r.smd,
            r.ks,
            flags
        );
    }
    let _ = writeln!(s, "a = |SMD| > 0.10, b = KS > 0.10");
    let _ = writeln!(s);
    let _ = writeln!(s, "Outcome model (composite-weighted logistic, sandwich SE)");
    for r in coefficient_table(&bundle.outcome.fit) {
        let _ = writeln!(
            s,
            "  {:<24} {:>6.2} (SE {:.2})  95% CI {:.2}, {:.2}  p {:.3}",
            r.term, r.estimate, r.se, r.ci_lo, r.ci_hi, r.p_value
        );
    }
    let _ = writeln!(s);
    for m in &bundle.outcome.mate {
        let _ = writeln!(
            s,
            "Risk difference {}: {:.2} (95% CI {:.2}, {:.2})",
            m.stratum, m.risk_difference, m.ci_lo, m.ci_hi
        );
    }
    let mt = &bundle.outcome.moderation;
    let _ = writeln!(
        s,
        "Moderation test {}: {:.2} (95% CI {:.2}, {:.2}), p = {:.4}",
        mt.term, mt.estimate, mt.ci_lo, mt.ci_hi, mt.p_value
    );
    for g in &bundle.sensitivity {
        let origin = g.nearest(0.0, 0.0);
        let _ = writeln!(
            s,
            "Sensitivity {}: baseline {:.3} (p {:.4}); grid origin {}; {} of {} cells infeasible",
            g.stratum,
            g.baseline.estimate,
            g.baseline.p_value,
            origin.mean_estimate.map_or("n/a".into(), |v| format!("{v:.3}")),
            g.cells.iter().filter(|c| c.status == crate::sensitivity::CellStatus::Infeasible).count(),
            g.cells.len()
        );
    }
    if !bundle.warnings.is_empty() {
        let _ = writeln!(s);
        for w in &bundle.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
    }
    s
}

fn timed<T>(timings: &mut Vec<StepTiming>, step: Step, f: impl FnOnce() -> std::result::Result<T, StepError>) -> std::result::Result<T, StepError> {
    let t0 = Instant::now();
    let out = f();
    timings.push(StepTiming {
        step,
        seconds: t0.elapsed().as_secs_f64(),
    });
    out
}

/// Runs every step on the dataset named by `cfg` and writes all artifacts.
///
/// `config_bytes` are the bytes the config was parsed from; their digest
/// goes into the manifest. On failure a `FAILED` marker holding the step
/// label and message is left in the output directory when one is known.
pub fn run_pipeline(cfg: &RunConfig, config_bytes: &[u8]) -> std::result::Result<ReportBundle, StepError> {
    let out_dir = cfg.resolve_out_dir().at(Step::Config)?;
    let out_dir_from = if cfg.out_dir.is_some() { "config" } else { OUT_DIR_ENV };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e)).at(Step::Config)?;
    let marker = out_dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e)).at(Step::Config)?;
    }
    let result = run_steps(cfg, config_bytes, &out_dir, out_dir_from);
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    result
}

fn run_steps(
    cfg: &RunConfig,
    config_bytes: &[u8],
    out_dir: &Path,
    out_dir_from: &str,
) -> std::result::Result<ReportBundle, StepError> {
    let mut timings = Vec::new();
    let mut warnings = Vec::new();
    let mut emit = Emitter {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    cfg.validate().at(Step::Config)?;

    let ds = timed(&mut timings, Step::Load, || {
        let file = fs::File::open(&cfg.input).map_err(|e| Error::io(&cfg.input, e)).at(Step::Load)?;
        let ds = load_dataset(std::io::BufReader::new(file), &cfg.schema).at(Step::Load)?;
        ds.check_cells().at(Step::Load)?;
        Ok(ds)
    })?;

    let overlap = timed(&mut timings, Step::Overlap, || {
        let report = overlap_report(&ds).at(Step::Overlap)?;
        emit.write("overlap.json", report.to_json().at(Step::Overlap)?.as_bytes()).at(Step::Emit)?;
        emit.write("overlap.txt", report.to_text().as_bytes()).at(Step::Emit)?;
        Ok(report)
    })?;
    if !overlap.is_clean() {
        let msg = format!(
            "{} empty cells and {} range violations in the overlap audit",
            overlap.empty_cells.len(),
            overlap.range_violations.len()
        );
        if cfg.strict_overlap {
            return Err(Error::OverlapAbort(msg)).at(Step::Overlap);
        }
        warnings.push(msg);
    }

    let boost = cfg.effective_boost();
    let fits = timed(&mut timings, Step::Propensity, || {
        let fits = fit_propensities(&ds, &boost, cfg.ps_mode).at(Step::Propensity)?;
        for f in &fits {
            emit.write(&format!("weights_{}.csv", f.stratum), &weights_csv(&ds, f).at(Step::Emit)?)
                .at(Step::Emit)?;
            emit.write(&format!("trace_{}.csv", f.stratum), &trace_csv(f).at(Step::Emit)?)
                .at(Step::Emit)?;
        }
        Ok(fits)
    })?;

    let balance = timed(&mut timings, Step::Balance, || {
        let table = balance_table(&ds, &fits).at(Step::Balance)?;
        let strata: Vec<Stratum> = table.summary.iter().filter(|s| s.phase == Phase::Post).map(|s| s.stratum).collect();
        for st in strata {
            emit.write(&format!("balance_{st}.csv"), &balance_csv(&table, st).at(Step::Emit)?)
                .at(Step::Emit)?;
            let rows: Vec<_> = table.rows_for(st).cloned().collect();
            let svg = love_plot(&format!("Covariate balance, stratum {st}"), &rows);
            if let Err(e) = emit.write(&format!("balance_{st}.svg"), svg.as_bytes()) {
                warnings.push(format!("love plot for {st} not written: {e}"));
            }
        }
        Ok(table)
    })?;
    let flagged = balance.post_flags();
    if !flagged.is_empty() {
        let names: Vec<String> = flagged
            .iter()
            .map(|r| match &r.level {
                Some(l) => format!("{}={} ({})", r.covariate, l, r.stratum),
                None => format!("{} ({})", r.covariate, r.stratum),
            })
            .collect();
        let msg = format!("post-weighting balance flags: {}", names.join(", "));
        if cfg.strict_balance {
            return Err(Error::BalanceAbort(msg)).at(Step::Balance);
        }
        warnings.push(msg);
    }

    let composite = crate::ps::composite_weights(&ds, &fits);
    let outcome = timed(&mut timings, Step::Outcome, || {
        let a = analyze_outcome(&ds, &composite, cfg.mate_averaging).at(Step::Outcome)?;
        emit.write("outcome_model.csv", &outcome_csv(&a).at(Step::Emit)?).at(Step::Emit)?;
        emit.write("mate.csv", &mate_csv(&a).at(Step::Emit)?).at(Step::Emit)?;
        let json = serde_json::to_string_pretty(&a.moderation).map_err(Error::from).at(Step::Emit)?;
        emit.write("moderation_test.json", json.as_bytes()).at(Step::Emit)?;
        Ok(a)
    })?;

    let sensitivity = match cfg.effective_sensitivity() {
        None => {
            warnings.push("sensitivity analysis disabled; no sensitivity plot emitted".into());
            Vec::new()
        }
        Some(scfg) => timed(&mut timings, Step::Sensitivity, || {
            let grids = ov_grid(&ds, &fits, &scfg).at(Step::Sensitivity)?;
            for g in &grids {
                let st = g.stratum;
                emit.write(&format!("sensitivity_{st}.csv"), &sensitivity_csv(g).at(Step::Emit)?)
                    .at(Step::Emit)?;
                emit.write(&format!("benchmarks_{st}.csv"), &benchmarks_csv(g).at(Step::Emit)?)
                    .at(Step::Emit)?;
                let svg = sensitivity_plot(&format!("Omitted-variable sensitivity, stratum {st}"), g);
                if let Err(e) = emit.write(&format!("sensitivity_{st}.svg"), svg.as_bytes()) {
                    warnings.push(format!("sensitivity plot for {st} not written: {e}"));
                }
            }
            Ok(grids)
        })?,
    };

    let mut bundle = ReportBundle {
        dataset_rows: ds.n_rows(),
        dropped_rows: ds.dropped,
        overlap,
        fits,
        balance,
        outcome,
        sensitivity,
        manifest: Manifest {
            tool: "modwt".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config_bytes),
            seed: cfg.seed,
            out_dir_from: out_dir_from.into(),
            files: Vec::new(),
        },
        timings,
        warnings,
        out_dir: out_dir.to_path_buf(),
    };
    let summary = summary_text(&bundle);
    emit.write("summary.txt", summary.as_bytes()).at(Step::Emit)?;
    bundle.manifest.files = emit.files.clone();
    let manifest = serde_json::to_string_pretty(&bundle.manifest).map_err(Error::from).at(Step::Emit)?;
    fs::write(out_dir.join(MANIFEST), manifest).map_err(|e| Error::io(out_dir.join(MANIFEST), e)).at(Step::Emit)?;
    let timings = serde_json::to_string_pretty(&bundle.timings).map_err(Error::from).at(Step::Emit)?;
    fs::write(out_dir.join(TIMINGS), timings).map_err(|e| Error::io(out_dir.join(TIMINGS), e)).at(Step::Emit)?;
    Ok(bundle)
}

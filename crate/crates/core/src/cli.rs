//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O or format error,
//! 3 numeric or check failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dcpt::{
    ablation_suite, gradcheck, train, write_ablation_csv, write_epoch_log, DcptConfig, FeatPoint,
    GRADCHECK_TOLERANCE,
};
use crate::degrade::{apply, DegradationKind, DegradationSpec};
use crate::error::{Error, Result};
use crate::eval::{degradation_grid, Condition, ReportMeta};
use crate::head::HeadParams;
use crate::image::Image;
use crate::toyworld::{
    gen_dataset, read_dataset, write_dataset, DctEnergyExtractor, ToySample, DEFAULT_GENERATORS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const MANIFEST_NAME: &str = "run_manifest.json";

// stdout may be a closed pipe (`dcpt eval ... | head`); progress lines are
// best effort
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser, Debug)]
#[command(name = "dcpt", version, about = "Paired clean/degraded training on a synthetic detection task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic real/fake dataset (PPM images + manifest.json).
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Images per class.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_GENERATORS)]
        generators: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a head; writes checkpoint, per-epoch CSV and a run manifest.
    Train {
        /// JSON config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Evaluate a checkpoint over the full degradation grid.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory; receives grid_report.csv and grid_report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the four loss-component variants and compare them under JPEG.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Held-out evaluation set. Defaults to a fresh synthetic set shaped
        /// like the training data, generated from --eval-seed.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        eval_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Finite-difference check of the training objective's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 128)]
        configs: usize,
        /// Perturb the analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        force_wrong_gradient: bool,
    },
    /// Apply one degradation to a PPM image.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// jpeg, blur or resize
        #[arg(long)]
        kind: String,
        #[arg(long, allow_negative_numbers = true)]
        param: f64,
        /// Accept parameters outside the evaluation grids.
        #[arg(long = "unsafe")]
        allow_off_grid: bool,
    },
}

/// Flags that take precedence over the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigOverrides {
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_f: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_p: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub p_deg: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// hidden or backbone
    #[arg(long, value_parser = parse_feat_point)]
    pub feat_point: Option<FeatPoint>,
}

fn parse_feat_point(s: &str) -> std::result::Result<FeatPoint, String> {
    match s {
        "hidden" => Ok(FeatPoint::Hidden),
        "backbone" => Ok(FeatPoint::Backbone),
        _ => Err(format!("expected hidden or backbone, got {s:?}")),
    }
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut DcptConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(lambda_f, lambda_p, p_deg, lr, weight_decay, epochs, batch_size, seed, hidden);
        if let Some(p) = self.feat_point {
            cfg.feat_consistency_point = p;
        }
    }
}

/// Record of one train or ablate run, written next to its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: DcptConfig,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Param(_) | Error::Shape(_) | Error::Config(_) => EXIT_VALIDATION,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData {
            seed,
            n,
            generators,
            out,
        } => {
            let samples = gen_dataset(seed, n, generators)?;
            write_dataset(&out, &samples)?;
            say!("wrote {} images to {}", samples.len(), out.display());
            Ok(EXIT_OK)
        }
        Command::Train {
            config,
            data,
            out,
            overrides,
        } => cmd_train(config.as_deref(), &data, &out, &overrides),
        Command::Eval {
            checkpoint,
            data,
            out,
        } => cmd_eval(&checkpoint, &data, &out),
        Command::Ablate {
            config,
            data,
            eval_data,
            eval_seed,
            out,
            overrides,
        } => cmd_ablate(
            config.as_deref(),
            &data,
            eval_data.as_deref(),
            eval_seed,
            &out,
            &overrides,
        ),
        Command::Gradcheck {
            seed,
            dim,
            hidden,
            configs,
            force_wrong_gradient,
        } => {
            let report = gradcheck(seed, dim, hidden, configs, force_wrong_gradient)?;
            let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
            say!(
                "gradcheck {}: {} configurations ({} kink draws resampled), max relative error {:.3e} (tolerance {:e})",
                if pass { "PASS" } else { "FAIL" },
                report.configurations,
                report.resampled,
                report.max_rel_error,
                GRADCHECK_TOLERANCE
            );
            for (name, e) in ["ce only", "+feat", "+pred", "+feat+pred"]
                .iter()
                .zip(report.per_combination)
            {
                say!("  {name:<10} {e:.3e}");
            }
            Ok(if pass { EXIT_OK } else { EXIT_NUMERIC })
        }
        Command::Degrade {
            input,
            out,
            kind,
            param,
            allow_off_grid,
        } => {
            let kind = DegradationKind::parse(&kind).ok_or_else(|| {
                Error::Param(format!("unknown kind {kind:?}; expected jpeg, blur or resize"))
            })?;
            let spec = DegradationSpec::from_parts(kind, param, !allow_off_grid)?;
            let img = Image::read_ppm(&input)?;
            apply(&spec, &img)?.write_ppm(&out)?;
            Ok(EXIT_OK)
        }
    }
}

/// Effective config: defaults, then the file, then flags.
pub fn resolve_config(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<DcptConfig> {
    let mut cfg = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            DcptConfig::from_json(&text).map_err(|m| Error::Config(vec![m]))?
        }
        None => DcptConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let path = out.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    overrides: &ConfigOverrides,
) -> Result<i32> {
    let cfg = resolve_config(config, overrides)?;
    let started = unix_now();
    let dataset = read_dataset(data)?;
    create_dir(out)?;
    let outcome = train(&cfg, &dataset, &DctEnergyExtractor)?;

    let ckpt = out.join("head.ckpt");
    outcome.params.save(&ckpt)?;
    let log_path = out.join("epochs.csv");
    write_epoch_log(&log_path, &outcome.log)?;
    if let Some(last) = outcome.log.last() {
        say!(
            "epoch {}: total {:.4} train_acc {:.4}",
            last.epoch, last.total, last.train_acc
        );
    }
    let manifest = RunManifest {
        command: "train".into(),
        seed: cfg.seed,
        config: cfg,
        started_unix: started,
        finished_unix: unix_now(),
        artifacts: BTreeMap::from([
            ("checkpoint".to_string(), ckpt),
            ("epoch_log".to_string(), log_path),
        ]),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_manifest(out, &manifest)?;
    Ok(EXIT_OK)
}

fn cmd_eval(checkpoint: &Path, data: &Path, out: &Path) -> Result<i32> {
    let params = HeadParams::load(checkpoint)?;
    let dataset = read_dataset(data)?;
    create_dir(out)?;
    let mut report = degradation_grid(&params, &DctEnergyExtractor, &dataset, &Condition::GRID)?;
    // pick up the training config when the checkpoint sits in a run directory
    if let Some(m) = checkpoint
        .parent()
        .map(|d| d.join(MANIFEST_NAME))
        .filter(|p| p.is_file())
        .and_then(|p| RunManifest::read(p).ok())
    {
        report.meta = ReportMeta {
            seed: Some(m.seed),
            config: serde_json::to_value(&m.config).ok(),
        };
    }
    let (csv, _) = report.write(out.join("grid_report"))?;
    for r in &report.rows {
        say!("{:<6} acc {:.4} auc {:.4}", r.condition.label(), r.acc, r.auc);
    }
    say!("degraded avg acc {:.4} -> {}", report.degraded_avg_acc, csv.display());
    Ok(EXIT_OK)
}

/// Per-class count and generator count of a labelled dataset.
fn dataset_shape(data: &[ToySample]) -> (usize, usize) {
    let reals = data.iter().filter(|s| s.label == 0).count();
    let fakes = data.len() - reals;
    let generators = data
        .iter()
        .filter(|s| s.label == 1)
        .map(|s| s.generator_id as usize + 1)
        .max()
        .unwrap_or(1);
    (reals.max(fakes), generators)
}

fn cmd_ablate(
    config: Option<&Path>,
    data: &Path,
    eval_data: Option<&Path>,
    eval_seed: u64,
    out: &Path,
    overrides: &ConfigOverrides,
) -> Result<i32> {
    let cfg = resolve_config(config, overrides)?;
    let started = unix_now();
    let train_set = read_dataset(data)?;
    let eval_set = match eval_data {
        Some(p) => read_dataset(p)?,
        None => {
            let (n, g) = dataset_shape(&train_set);
            gen_dataset(eval_seed, n, g)?
        }
    };
    create_dir(out)?;
    let rows = ablation_suite(&cfg, &train_set, &eval_set, &DctEnergyExtractor)?;
    let csv = out.join("ablation.csv");
    write_ablation_csv(&csv, &rows)?;
    for r in &rows {
        say!(
            "{:<10} λf={:<4} λp={:<4} jpeg_avg {:.4}",
            r.variant,
            r.lambda_f,
            r.lambda_p,
            r.jpeg_avg()
        );
    }
    let manifest = RunManifest {
        command: "ablate".into(),
        seed: cfg.seed,
        config: cfg,
        started_unix: started,
        finished_unix: unix_now(),
        artifacts: BTreeMap::from([
            ("ablation_csv".to_string(), csv.clone()),
            ("ablation_json".to_string(), csv.with_extension("json")),
        ]),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_manifest(out, &manifest)?;
    Ok(EXIT_OK)
}

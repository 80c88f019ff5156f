//! Command-line driver: `run`, `shapley-audit` and `partition-report`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration
//! errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::contribution::{exact_shapley, utility_classwise_accuracy, Coalition};
use crate::data::class_histogram;
use crate::error::{Error, Result};
use crate::federation::run_experiment;
use crate::metrics::argmax;
use crate::report::{self, fmt_f64};

/// Largest participant count the audit will enumerate exactly.
pub const AUDIT_MAX_PARTICIPANTS: usize = 8;

/// Tolerance for ties when picking the exact-Shapley top contributor.
pub const TOP_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(
    name = "shapfed",
    version,
    about = "Federated learning with class-specific contribution assessment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured strategy and write metrics, contributions and fairness.
    Run(CommonArgs),
    /// Compare exact Shapley values with the cosine approximations.
    ShapleyAudit(CommonArgs),
    /// Write the per-participant class counts of the configured split.
    PartitionReport(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config file.
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for local training (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

impl CommonArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = match &self.out {
            Some(o) => o.clone(),
            None => cfg.output_dir.clone(),
        };
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok((cfg, out))
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        2
    } else {
        1
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Run(a) => {
            let (cfg, out) = a.load()?;
            cmd_run(&cfg, &out, a.workers)
        }
        Command::ShapleyAudit(a) => {
            let (cfg, out) = a.load()?;
            cmd_shapley_audit(&cfg, &out, a.workers).map(|_| ())
        }
        Command::PartitionReport(a) => {
            let (cfg, out) = a.load()?;
            cmd_partition_report(&cfg, &out)
        }
    }
}

/// Writes `metrics_<name>.csv` and `gamma_<name>.json` per strategy and a
/// shared `fairness.csv`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<()> {
    let exp = cfg.build_experiment(workers)?;
    let mut fairness = String::from("strategy,pearson_r,degenerate\n");
    for s in &cfg.strategies {
        let log = run_experiment(&exp, &s.config)?;
        report::write_text(
            &out.join(format!("metrics_{}.csv", s.name)),
            &report::metrics_csv(&log),
        )?;
        report::write_json(
            &out.join(format!("gamma_{}.json", s.name)),
            &report::gamma_json(&s.name, &log),
        )?;
        fairness.push_str(&format!(
            "{},{},{}\n",
            s.name,
            fmt_f64(log.fairness.r),
            log.fairness.degenerate
        ));
    }
    report::write_text(&out.join("fairness.csv"), &fairness)
}

/// Per-class comparison of top contributors.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassAgreement {
    pub class: usize,
    /// Every participant within [`TOP_TIE_TOLERANCE`] of the best exact value.
    pub exact_top: Vec<usize>,
    pub cssv_top: usize,
    pub cgsv_top: usize,
}

impl ClassAgreement {
    pub fn cssv_agrees(&self) -> bool {
        self.exact_top.contains(&self.cssv_top)
    }

    pub fn cgsv_agrees(&self) -> bool {
        self.exact_top.contains(&self.cgsv_top)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub strategy: String,
    pub exact: Vec<Vec<f64>>,
    pub cssv: Vec<Vec<f64>>,
    pub cgsv: Vec<f64>,
    pub agreement: Vec<ClassAgreement>,
    pub exact_calls: usize,
    pub approx_calls: usize,
}

impl AuditReport {
    pub fn cssv_agreement_count(&self) -> usize {
        self.agreement.iter().filter(|a| a.cssv_agrees()).count()
    }

    pub fn cgsv_agreement_count(&self) -> usize {
        self.agreement.iter().filter(|a| a.cgsv_agrees()).count()
    }

    pub fn to_json(&self) -> Value {
        let n = self.exact.len();
        let m = self.exact.first().map_or(0, Vec::len);
        let agreement: Vec<Value> = self
            .agreement
            .iter()
            .map(|a| {
                json!({
                    "class": format!("c{}", a.class),
                    "exact_top": a.exact_top,
                    "cssv_top": a.cssv_top,
                    "cgsv_top": a.cgsv_top,
                    "cssv_agrees": a.cssv_agrees(),
                    "cgsv_agrees": a.cgsv_agrees(),
                })
            })
            .collect();
        json!({
            "strategy": self.strategy,
            "participants": report::labels("p", n),
            "classes": report::labels("c", m),
            "exact_shapley": report::matrix(&self.exact),
            "cssv": report::matrix(&self.cssv),
            "cgsv": report::vector(&self.cgsv),
            "agreement": agreement,
            "cssv_agreement_count": self.cssv_agreement_count(),
            "cgsv_agreement_count": self.cgsv_agreement_count(),
            "utility_calls": { "exact": self.exact_calls, "approximation": self.approx_calls },
        })
    }
}

/// Trains the first configured strategy, then compares exact per-class
/// Shapley values of the final local models with the smoothed cosine
/// scores. Writes `audit.json`.
pub fn cmd_shapley_audit(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<AuditReport> {
    if cfg.participants > AUDIT_MAX_PARTICIPANTS {
        return Err(Error::config(format!(
            "shapley-audit enumerates every coalition and accepts at most {AUDIT_MAX_PARTICIPANTS} participants, got {}",
            cfg.participants
        )));
    }
    let exp = cfg.build_experiment(workers)?;
    let strategy = &cfg.strategies[0];
    let log = run_experiment(&exp, &strategy.config)?;
    let models: Vec<_> = log
        .final_state
        .last_updates
        .iter()
        .map(|u| &u.final_params)
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    let exact = pool.install(|| {
        exact_shapley(models.len(), |c: Coalition| {
            let members: Vec<_> = c.members().map(|i| models[i]).collect();
            utility_classwise_accuracy(&members, &exp.spec, &exp.valset)
        })
    })?;

    let last = log.last();
    let cssv = last.contributions.clone();
    let cgsv = last.cgsv_scores.clone();
    let n = models.len();
    let m = exp.spec.num_classes;
    let cgsv_top = argmax(&cgsv);
    let agreement = (0..m)
        .map(|j| {
            let column: Vec<f64> = (0..n).map(|i| exact.phi[i][j]).collect();
            let best = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ClassAgreement {
                class: j,
                exact_top: (0..n)
                    .filter(|&i| column[i] >= best - TOP_TIE_TOLERANCE)
                    .collect(),
                cssv_top: argmax(&(0..n).map(|i| cssv[i][j]).collect::<Vec<_>>()),
                cgsv_top,
            }
        })
        .collect();
    let report = AuditReport {
        strategy: strategy.name.clone(),
        exact: exact.phi,
        cssv,
        cgsv,
        agreement,
        exact_calls: exact.utility_calls,
        // One pass over the n updates plus the aggregate.
        approx_calls: n + 1,
    };
    report::write_json(&out.join("audit.json"), &report.to_json())?;
    Ok(report)
}

/// Writes `partition.csv`: one row of class counts per participant.
pub fn cmd_partition_report(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = cfg.load_dataset()?;
    let (train, _) = cfg.split(&data)?;
    let shards = crate::data::partition(&train, &cfg.partition, cfg.participants, cfg.partition_seed())?;
    let m = train.num_classes();
    let mut text = String::from("participant");
    for j in 0..m {
        text.push_str(&format!(",c{j}"));
    }
    text.push('\n');
    for (i, s) in shards.iter().enumerate() {
        text.push_str(&format!("p{i}"));
        for c in class_histogram(s) {
            text.push_str(&format!(",{c}"));
        }
        text.push('\n');
    }
    report::write_text(&out.join("partition.csv"), &text)
}

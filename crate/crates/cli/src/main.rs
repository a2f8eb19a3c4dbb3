use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rbflex::error::ErrorClass;
use rbflex::harness::{
    self, DataSource, ExperimentConfig, ReferenceTable, ScorerKind, Seeds, DEFAULT_SYNTHETIC_COUNT,
};
use rbflex::space::SpaceKind;
use rbflex::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rbflex",
    version,
    about = "Training-free architecture scoring with RBF kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score S sampled candidates and report the top-1 network.
    #[command(visible_alias = "score")]
    Search(Common),
    /// Score spread across weight initializations.
    RobustInit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        inits: usize,
    },
    /// Ranking agreement across minibatch sizes.
    RobustBatchsize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 16, 32])]
        sizes: Vec<usize>,
    },
    /// Score spread across image batches.
    RobustImagebatch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        batches: usize,
    },
    /// Correlate scores with reference accuracies (CSV with spec_id,accuracy).
    Correlate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Compare detected bandwidths against epsilon-width bandwidths.
    GammaSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 0.367_879_441_171_442_3, 0.9])]
        epsilons: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "cell")]
    space: SpaceKind,
    /// Directory of CIFAR-10 binary files, or `synthetic`.
    #[arg(long, env = "RBFLEX_DATA_DIR", default_value = "synthetic")]
    data: String,
    /// Image count of the synthetic dataset.
    #[arg(long, default_value_t = DEFAULT_SYNTHETIC_COUNT)]
    synthetic_count: usize,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Candidates to sample; defaults to 100, capped at the space size.
    #[arg(long)]
    s: Option<usize>,
    /// Score this network instead of sampling; repeatable.
    #[arg(long = "spec", value_name = "SPEC_ID")]
    specs: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed_weights: u64,
    #[arg(long, default_value_t = 0)]
    seed_batch: u64,
    #[arg(long, default_value_t = 0)]
    seed_sampler: u64,
    #[arg(long, default_value = "rbflex")]
    scorer: ScorerKind,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append-only score cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(self.space);
        cfg.n = self.n;
        cfg.m = self.m;
        cfg.s = self.s.unwrap_or_else(|| cfg.space.cardinality().min(100));
        if !self.specs.is_empty() {
            cfg.s = self.specs.len();
            cfg.candidates = Some(self.specs.clone());
        }
        cfg.seeds = Seeds {
            weights: self.seed_weights,
            batch: self.seed_batch,
            sampler: self.seed_sampler,
        };
        cfg.data = if self.data == "synthetic" {
            DataSource::Synthetic {
                count: self.synthetic_count,
                seed: self.seed_batch,
            }
        } else {
            DataSource::CifarDir(PathBuf::from(&self.data))
        };
        cfg.scorer = self.scorer;
        cfg.repeats = self.repeats;
        cfg.out_dir = self.out.clone();
        cfg.cache_path = self.cache.clone();
        cfg
    }
}

fn write_report<T: serde::Serialize>(cfg: &ExperimentConfig, name: &str, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search(common) => {
            let cfg = common.config();
            let out = harness::run_search(&cfg)?;
            let m = &out.manifest;
            if let Some(g) = &m.gammas {
                println!(
                    "gamma_k {:e}  gamma_q {:e}  fallback {}",
                    g.gamma_k, g.gamma_q, g.fallback_used
                );
            }
            println!("scored {}  degenerate {}", m.n_scored, m.n_degenerate);
            println!("top1 {}", out.top1);
        }
        Command::RobustInit { common, inits } => {
            let cfg = common.config();
            let specs = harness::sampled_candidates(&cfg)?;
            let report = harness::run_init_robustness(&cfg, &specs, inits)?;
            println!(
                "separation ratio {:.4} over {} networks",
                report.separation_ratio, report.n_used
            );
            write_report(&cfg, "robust_init.json", &report)?;
        }
        Command::RobustImagebatch { common, batches } => {
            let cfg = common.config();
            let specs = harness::sampled_candidates(&cfg)?;
            let report = harness::run_imagebatch_robustness(&cfg, &specs, batches)?;
            println!(
                "separation ratio {:.4} over {} networks",
                report.separation_ratio, report.n_used
            );
            write_report(&cfg, "robust_imagebatch.json", &report)?;
        }
        Command::RobustBatchsize { common, sizes } => {
            let cfg = common.config();
            let specs = harness::sampled_candidates(&cfg)?;
            let report = harness::run_batchsize_robustness(&cfg, &specs, &sizes)?;
            for (i, a) in report.sizes.iter().enumerate() {
                for (j, b) in report.sizes.iter().enumerate().skip(i + 1) {
                    match report.kendall[i][j] {
                        Some(t) => println!("tau({a},{b}) {t:.4}"),
                        None => println!("tau({a},{b}) n/a"),
                    }
                }
            }
            write_report(&cfg, "robust_batchsize.json", &report)?;
        }
        Command::Correlate { common, reference } => {
            let cfg = common.config();
            let table = ReferenceTable::load(&reference)?;
            let explicit = match cfg.candidates {
                Some(_) => Some(harness::sampled_candidates(&cfg)?),
                None => None,
            };
            let report = harness::run_correlation(&cfg, &table, explicit.as_deref())?;
            for (name, summary) in [("rbflex", report.rbflex), ("naswot", report.naswot)] {
                if let Some(s) = summary {
                    println!(
                        "{name}: pearson {:.4}  kendall {:.4}  used {}  degenerate {}",
                        s.pearson, s.kendall_tau_b, s.n_used, s.n_degenerate
                    );
                }
            }
            if cfg.out_dir.is_none() {
                write_report(&cfg, "correlation.json", &report)?;
            }
        }
        Command::GammaSweep { common, epsilons } => {
            let cfg = common.config();
            let report = harness::gamma_sweep(&cfg, &epsilons)?;
            println!(
                "hda gamma_k {:e}  gamma_q {:e}",
                report.hda.gamma_k, report.hda.gamma_q
            );
            for row in &report.rows {
                let tau = row
                    .kendall_vs_hda
                    .map_or("n/a".to_string(), |t| format!("{t:.4}"));
                println!(
                    "eps {:<8} gamma_k {:e}  gamma_q {:e}  tau_vs_hda {tau}  degenerate {}",
                    row.epsilon, row.gamma_k, row.gamma_q, row.n_degenerate
                );
            }
            if cfg.out_dir.is_none() {
                write_report(&cfg, "gamma_sweep.json", &report)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::AllDegenerate => 4,
                ErrorClass::Internal => 1,
            })
        }
    }
}

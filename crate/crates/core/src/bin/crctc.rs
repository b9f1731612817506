use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crctc_core::decode::prefix_beam_decode;
use crctc_core::harness::{
    evaluate, generate_dataset, run_gradcheck, summarize, sweep_grid, train, write_sweep_csv, ExperimentConfig, Grid,
    RunRecord, CONFIG_KEYS, OUT_DIR_ENV,
};
use crctc_core::model::{load_checkpoint, save_checkpoint};
use crctc_core::peak::{emit_plot_data, PeakStats};
use crctc_core::{greedy_decode, peak_stats, DistributionLattice, Error, Result, Vocabulary};

#[derive(Parser)]
#[command(name = "crctc", version, about = "CTC, consistency-regularized CTC and smoothness-regularized CTC on a synthetic task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write it as JSON.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its run record.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Write the final parameters to this checkpoint.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split of the configured dataset.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        load: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Decode a lattice file.
    Decode {
        #[command(flatten)]
        lattice: LatticeArgs,
        #[arg(long, value_enum, default_value_t = Method::Prefix)]
        method: Method,
        #[arg(long, default_value_t = crctc_core::decode::DEFAULT_BEAM)]
        beam: usize,
    },
    /// Print peak statistics of a lattice file as CSV.
    Analyze {
        #[command(flatten)]
        lattice: LatticeArgs,
        /// Also write per-frame plot data here.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Run a grid of experiments over several seeds and write a CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value = "objectives")]
        grid: Grid,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Print every configuration key with its value and description.
    ShowConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Greedy,
    Prefix,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Objective preset (overrides the file).
    #[arg(long)]
    objective: Option<String>,
    /// `KEY=VALUE` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = match &self.config {
            Some(p) => ExperimentConfig::read_pairs(p)?,
            None => Vec::new(),
        };
        if let Some(o) = &self.objective {
            pairs.push(("objective".into(), o.clone()));
        }
        for s in &self.overrides {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("--set expects KEY=VALUE, got {s:?}")))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        Ok(pairs)
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let pairs = self.pairs()?;
        ExperimentConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

#[derive(Args)]
struct OutArgs {
    /// Output directory for records and reports.
    #[arg(long, env = OUT_DIR_ENV, default_value = "runs")]
    out_dir: PathBuf,
}

impl OutArgs {
    fn ensure(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }
}

#[derive(Args)]
struct LatticeArgs {
    /// Lattice text file (`T K` header, then one row of log-probabilities per frame).
    lattice: PathBuf,
    /// Whitespace-separated token names; defaults to `a`, `b`, ... sized to the lattice.
    #[arg(long)]
    vocab: Option<String>,
}

impl LatticeArgs {
    fn load(&self) -> Result<(DistributionLattice, Vocabulary)> {
        let z = DistributionLattice::read_text(BufReader::new(File::open(&self.lattice)?))?;
        let vocab = match &self.vocab {
            Some(v) => Vocabulary::new(v.split_whitespace())?,
            None => Vocabulary::synthetic(z.width().saturating_sub(1)),
        };
        z.check_vocab(&vocab)?;
        Ok((z, vocab))
    }
}

fn print_peak(stats: &PeakStats) {
    println!("{}", PeakStats::CSV_HEADER);
    println!("{}", stats.csv_row());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = config.load()?;
            let data = generate_dataset(&cfg.task)?;
            serde_json::to_writer(BufWriter::new(File::create(&out)?), &data)?;
            eprintln!(
                "wrote {} train / {} dev / {} test utterances to {}",
                data.train.len(),
                data.dev.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Train { config, out, save } => {
            let cfg = config.load()?;
            let dir = out.ensure()?.to_path_buf();
            let start = std::time::Instant::now();
            let data = generate_dataset(&cfg.task)?;
            let outcome = train(&cfg, &data, |epoch, loss| eprintln!("epoch {epoch:>3}  loss {loss:.6}"))?;
            if outcome.skipped > 0 {
                eprintln!("warning: skipped {} infeasible training utterances", outcome.skipped);
            }
            let enc = cfg.encoder_config();
            let dev = evaluate(&enc, &outcome.params, &data.dev, &data.vocab, cfg.eval_beam)?;
            let test = evaluate(&enc, &outcome.params, &data.test, &data.vocab, cfg.eval_beam)?;
            let record = RunRecord {
                objective: cfg.objective,
                seed: cfg.train.seed,
                config: cfg.to_map(),
                loss_curve: outcome.loss_curve,
                steps: outcome.steps,
                skipped: outcome.skipped,
                dev,
                test,
                wall_clock_secs: start.elapsed().as_secs_f64(),
            };
            let path = dir.join(format!("run-{}-seed{}.json", cfg.objective, cfg.train.seed));
            record.save(&path)?;
            if let Some(ckpt) = save {
                save_checkpoint(&ckpt, &enc, &outcome.params)?;
                eprintln!("saved parameters to {}", ckpt.display());
            }
            println!("record {}", path.display());
            println!("dev_greedy_ter {:.6}", record.dev.greedy_ter);
            println!("test_greedy_ter {:.6}", record.test.greedy_ter);
            println!("test_prefix_ter {:.6}", record.test.prefix_ter);
            print_peak(&record.test.peak);
        }
        Command::Evaluate { config, load, split } => {
            let cfg = config.load()?;
            let (enc, params) = load_checkpoint(&load)?;
            let data = generate_dataset(&cfg.task)?;
            let summary = evaluate(&enc, &params, data.split(&split)?, &data.vocab, cfg.eval_beam)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Decode { lattice, method, beam } => {
            let (z, vocab) = lattice.load()?;
            let labels = match method {
                Method::Greedy => greedy_decode(&z, &vocab)?.0,
                Method::Prefix => prefix_beam_decode(&z, &vocab, beam)?,
            };
            println!("{}", vocab.render(&labels));
        }
        Command::Analyze { lattice, plot_data } => {
            let (z, vocab) = lattice.load()?;
            print_peak(&peak_stats(&z, &vocab)?);
            if let Some(path) = plot_data {
                let mut w = BufWriter::new(File::create(&path)?);
                emit_plot_data(&z, &vocab, &mut w)?;
                w.flush()?;
            }
        }
        Command::Gradcheck { seed, coords, step, tolerance } => {
            let report = run_gradcheck(seed, coords, step)?;
            println!("check,coordinates,max_rel_error");
            for e in &report.entries {
                println!("{},{},{:.3e}", e.name, e.coordinates, e.max_rel_error);
            }
            if report.max_rel_error() > tolerance {
                return Err(Error::InvalidInput(format!(
                    "max relative error {:.3e} exceeds {tolerance:.1e}",
                    report.max_rel_error()
                )));
            }
        }
        Command::Sweep { config, out, grid, seeds } => {
            let base = config.pairs()?;
            let dir = out.ensure()?.to_path_buf();
            let rows = sweep_grid(grid, &base, &seeds, |row| {
                eprintln!(
                    "{:<24} seed {:<3} test_ter {:.4}  dur {:.3}  blank {:.4}  nonblank {:.4}  ({:.1}s)",
                    row.cell,
                    row.record.seed,
                    row.record.test.greedy_ter,
                    row.record.test.peak.mean_nonblank_duration,
                    row.record.test.peak.mean_blank_emit_prob,
                    row.record.test.peak.mean_nonblank_emit_prob,
                    row.record.wall_clock_secs
                );
            })?;
            let path = dir.join(format!("sweep-{grid}.csv"));
            write_sweep_csv(&rows, BufWriter::new(File::create(&path)?))?;
            println!("cell,objective,seeds,mean_test_greedy_ter,sd_test_greedy_ter");
            for (cell, obj, n, mean, sd) in summarize(&rows) {
                println!("{cell},{obj},{n},{mean:.6},{sd:.6}");
            }
            eprintln!("wrote {}", path.display());
        }
        Command::ShowConfig { config } => {
            let cfg = config.load()?;
            debug_assert_eq!(cfg.to_map().len(), CONFIG_KEYS.len());
            io::stdout().write_all(cfg.to_text().as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

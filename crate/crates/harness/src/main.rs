use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpcsm::checkpoint::{load_checkpoint, save_checkpoint};
use lpcsm::error::{HarnessError, Result};
use lpcsm::probe::{probe_delayed_identifier, ProbeSpec};
use lpcsm::tasks::TaskConfig;
use lpcsm::train::{dump_path, train, CsvLog};
use lpcsm::{ablate, eval, ont_suite, RunConfig};
use lpcsm_core::runtime::{generate, StopRule};

#[derive(Parser)]
#[command(name = "lpcsm", version, about = "Train, decode and verify LPC-SM models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV destination; standard output when omitted.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Loss and accuracy on fresh task sequences.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// TOML file with task fields (kind, seq_len, key_len, distractor_len).
        #[arg(long)]
        task: PathBuf,
        #[arg(long, default_value_t = 32)]
        sequences: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Greedy decoding.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Token ids separated by commas or spaces.
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        max_new: usize,
        #[arg(long)]
        stop_threshold: Option<f64>,
        #[arg(long)]
        eos: Option<usize>,
    },
    /// Key cross-entropy on delayed-identifier prompts.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        probe_spec: Option<PathBuf>,
    },
    /// Train the full model and single-mechanism ablations on one data stream.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Mechanisms to remove one at a time; all five when omitted.
        #[arg(long, value_delimiter = ',')]
        toggles: Option<Vec<String>>,
    },
    /// Randomized check of the ONT write identities.
    VerifyOnt {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_tokens(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| HarnessError::config(format!("bad token `{s}` in prompt")))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

fn stdout_err(e: io::Error) -> HarnessError {
    HarnessError::io("<stdout>", e)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            steps,
            seed,
            out,
            metrics,
        } => {
            let cfg = RunConfig::load(&config)?;
            let sink: Box<dyn Write> = match &metrics {
                Some(p) => Box::new(create(p)?),
                None => Box::new(io::stdout().lock()),
            };
            let log_path = metrics.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
            let mut log = CsvLog::new(sink).map_err(|e| HarnessError::io(&log_path, e))?;
            let dump = dump_path(&out);
            let outcome = train(&cfg, steps, seed, Some(&dump), |m| {
                log.row(m).map_err(|e| HarnessError::io(&log_path, e))
            })?;
            save_checkpoint(&outcome.store, &cfg.model, &out)?;
        }
        Command::Eval {
            ckpt,
            task,
            sequences,
            seed,
        } => {
            let (store, cfg) = load_checkpoint(&ckpt)?;
            let text = std::fs::read_to_string(&task).map_err(|e| HarnessError::io(&task, e))?;
            let task: TaskConfig = toml::from_str(&text).map_err(|e| HarnessError::config(e.to_string()))?;
            let r = eval::evaluate(&store, &cfg, &task, sequences, seed)?;
            println!("sequences={} lm={:.6} accuracy={:.4}", r.sequences, r.lm, r.accuracy);
        }
        Command::Generate {
            ckpt,
            prompt,
            max_new,
            stop_threshold,
            eos,
        } => {
            let (store, cfg) = load_checkpoint(&ckpt)?;
            let prompt = parse_tokens(&prompt)?;
            let rule = StopRule { eos, stop_threshold };
            let g = generate(&prompt, max_new, &store, &cfg, &rule)?;
            let text: Vec<String> = g.tokens.iter().map(|t| t.to_string()).collect();
            println!("{}", text.join(" "));
            eprintln!("stopped: {:?}", g.reason);
        }
        Command::Probe { ckpt, probe_spec } => {
            let (store, cfg) = load_checkpoint(&ckpt)?;
            let spec = match probe_spec {
                Some(p) => ProbeSpec::load(&p)?,
                None => ProbeSpec::default(),
            };
            let r = probe_delayed_identifier(&store, &cfg, &spec)?;
            println!(
                "key_ce={:.6} prompt_len={} fingerprint={}",
                r.key_ce, r.prompt_len, r.fingerprint
            );
        }
        Command::Ablate {
            config,
            steps,
            seed,
            toggles,
        } => {
            let cfg = RunConfig::load(&config)?;
            let names: Vec<String> = toggles.unwrap_or_else(|| ablate::all_toggles().iter().map(|s| s.to_string()).collect());
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            let table = ablate::ablate(&cfg, &names, steps, seed)?;
            print!("{table}");
        }
        Command::VerifyOnt { trials, seed } => {
            let report = ont_suite::run(trials, seed)?;
            print!("{report}");
            if !report.passed() {
                return Err(HarnessError::Numeric {
                    step: 0,
                    detail: "ONT identities out of tolerance".into(),
                    dump: None,
                });
            }
        }
    }
    io::stdout().flush().map_err(stdout_err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

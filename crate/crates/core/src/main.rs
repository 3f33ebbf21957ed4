use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resnls::app::{self, RunConfig};
use resnls::Error;

#[derive(Parser)]
#[command(name = "resnls", version, about = "Residual CNN + LSTM next-day close forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// resnls, cnn, rnn, lstm or bilstm
    #[arg(long, global = true)]
    arch: Option<String>,
    #[arg(long = "window-n", global = true)]
    window_n: Option<usize>,
    /// Any config key, e.g. `--set epochs=10`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the resolved config as TOML and exit
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per instrument
    Train,
    /// Score a trained model on the test range
    Evaluate {
        /// Model file; defaults to the one `train` writes for this config
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train and score one model per window length
    Sweep {
        /// Comma-separated window lengths
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<usize>>,
    },
    /// Threshold strategy vs buy-and-hold on the test range
    Backtest {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Finite-difference check of every layer and architecture
    Gradcheck,
}

fn resolve(common: &Common, command: &Command) -> resnls::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg = cfg.with_env(|k| std::env::var(k).ok())?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config { field: kv.clone(), reason: "expected KEY=VALUE".into() })?;
        pairs.push((k.trim().into(), v.trim().into()));
    }
    if let Some(out) = &common.out {
        pairs.push(("out_dir".into(), format!("{:?}", out.display().to_string())));
    }
    if let Some(seed) = common.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if let Some(arch) = &common.arch {
        pairs.push(("arch".into(), arch.clone()));
    }
    if let Some(n) = common.window_n {
        pairs.push(("window_n".into(), n.to_string()));
    }
    if let Command::Sweep { windows: Some(w) } = command {
        pairs.push(("sweep_windows".into(), format!("{w:?}")));
    }
    cfg.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
}

fn run(cli: &Cli) -> resnls::Result<ExitCode> {
    let cfg = resolve(&cli.common, &cli.command)?;
    if cli.common.print_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let manifest = match &cli.command {
        Command::Train => app::cmd_train(&cfg)?,
        Command::Evaluate { model } => app::cmd_evaluate(&cfg, model.as_deref())?,
        Command::Sweep { .. } => app::cmd_sweep(&cfg)?.0,
        Command::Backtest { model } => app::cmd_backtest(&cfg, model.as_deref())?.0,
        Command::Gradcheck => {
            let (manifest, report) = app::cmd_gradcheck(&cfg)?;
            for row in &report.rows {
                println!("{:<8} {:<32} {:.3e}", if row.passed { "ok" } else { "FAIL" }, row.name, row.rel_err);
            }
            if !report.passed() {
                let failed: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
                eprintln!("{}", serde_json::json!({ "error": "gradcheck", "failures": failed, "exit_code": app::EXIT_GRADCHECK }));
                return Ok(ExitCode::from(app::EXIT_GRADCHECK as u8));
            }
            manifest
        }
    };
    for (k, v) in &manifest.metrics {
        println!("{k} = {v}");
    }
    for a in &manifest.artifacts {
        println!("wrote {}", a.path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", app::error_json(&e));
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tinyflow::Params64;
use tinyflow_cli::commands::{
    cmd_export_dot, cmd_gen_data, cmd_train, gradcheck, CliError, DataSource, Engine, TrainConfig,
    DEFAULT_EPOCHS, DEFAULT_GRADCHECK_EPS, DEFAULT_GRADCHECK_TRIALS, DEFAULT_LEARNING_RATE,
    DEFAULT_MARGIN, DEFAULT_SEED, GRADCHECK_TOLERANCE,
};

#[derive(Debug, Parser)]
#[command(
    name = "tinyflow",
    version,
    about = "Dataflow-graph logistic regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Graph,
    Reference,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the two-feature classifier and write loss_log.csv, params.csv
    /// and (graph engine) graph.dot.
    Train {
        #[arg(long, value_enum, default_value = "graph")]
        engine: EngineArg,
        /// CSV with rows `x1,x2,label`, or an iris CSV with --setosa-vs-rest.
        #[arg(
            long,
            conflicts_with = "synthetic",
            required_unless_present = "synthetic"
        )]
        data: Option<PathBuf>,
        /// Read --data as a five-column iris file; setosa is class 1.
        #[arg(long, requires = "data")]
        setosa_vs_rest: bool,
        /// Generate this many separable points instead of reading a file.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long, default_value_t = DEFAULT_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
        lr: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Starting parameters `w0,w1,b` instead of a seeded random draw.
        #[arg(long, value_parser = parse_init, allow_hyphen_values = true)]
        init: Option<Params64>,
    },
    /// Compare autodiff gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_GRADCHECK_EPS)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_GRADCHECK_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Write the classifier graph in Graphviz DOT format.
    ExportDot {
        #[arg(long)]
        out: PathBuf,
        /// Include the backward nodes for dE/db, dE/dW and dE/dX.
        #[arg(long)]
        with_gradients: bool,
    },
    /// Write a linearly separable two-class dataset as CSV.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_init(s: &str) -> Result<Params64, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| format!("`{f}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [w0, w1, b] => Ok(Params64::new(w0, w1, b)),
        _ => Err(format!("expected w0,w1,b, got {} values", v.len())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            engine,
            data,
            setosa_vs_rest,
            synthetic,
            margin,
            epochs,
            lr,
            seed,
            out,
            init,
        } => {
            let data = match (data, synthetic) {
                (Some(path), _) => DataSource::Csv {
                    path,
                    setosa_vs_rest,
                },
                (None, Some(n)) => DataSource::Synthetic { n, margin },
                (None, None) => unreachable!("clap requires --data or --synthetic"),
            };
            let engine = match engine {
                EngineArg::Graph => Engine::Graph,
                EngineArg::Reference => Engine::Reference,
            };
            let config = TrainConfig {
                epochs,
                learning_rate: lr,
                seed,
                engine,
                data,
                init,
            };
            let report = cmd_train(&config, &out)?;
            let [w0, w1, b] = report.params.flat();
            println!(
                "epochs {epochs}  loss {:.6}  accuracy {:.4}  W = [{w0:.6}, {w1:.6}]  b = {b:.6}",
                report.final_loss, report.final_accuracy
            );
        }
        Command::Gradcheck { eps, trials, seed } => {
            if trials == 0 {
                eprintln!("warning: zero trials requested; nothing was checked");
            }
            let report = gradcheck(seed, eps, trials)?;
            println!(
                "trials {}  max relative error {:.3e}  tolerance {GRADCHECK_TOLERANCE:e}",
                report.trials, report.max_rel_error
            );
            if report.degenerate {
                return Err(CliError::GradcheckFailed(format!(
                    "eps {eps:e} is too small to perturb the inputs"
                )));
            }
            if !report.passed() {
                return Err(CliError::GradcheckFailed(report.worst.unwrap_or_default()));
            }
        }
        Command::ExportDot {
            out,
            with_gradients,
        } => {
            let (vertices, edges) = cmd_export_dot(&out, with_gradients)?;
            println!("{vertices} vertices, {edges} edges -> {}", out.display());
        }
        Command::GenData {
            n,
            seed,
            margin,
            out,
        } => {
            let d = cmd_gen_data(n, seed, margin, &out)?;
            println!("{} rows -> {}", d.len(), out.display());
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

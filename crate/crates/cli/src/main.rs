//! `gaescore`: train gated auto-encoders, verify the numerical properties of
//! their energy scores, and run the two classification pipelines.
//!
//! Exit codes: 0 success, 1 failed verification suite, 2 configuration error,
//! 3 data error, 4 training divergence.

mod args;
mod commands;

use args::Opts;

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: msg.into(),
        }
    }
}

const USAGE: &str = "\
usage: gaescore <command> [--flag value ...]

commands:
  train       fit a model (--kind mean | gae | cov-gae | mc) and archive it
  verify      run the numerical property suites (exit 1 on any failure)
  classify    per-class energy scoring benchmark (AES / cAES / mcAES)
  multilabel  MLP baseline plus energy-based label refinement

common flags:
  --data <path | synth-cov:k=2,d=16,n=2000,corr=0.8,seed=0 | synth-labels:...>
  --dim D --label-kind class|multi --labels L        (file data only)
  --epochs N --lr F --momentum F --decay F --batch N --seed N
  --corruption F --corruption-kind masking|gaussian|none
  --hidden M --factors F --threads N --out PATH --config FILE

verify flags:      --seeds N --steps N --break-tie-weights
multilabel flags:  --folds N --mlp-hidden H --variant xy|y2 --step F --tol F
                   --max-iter N --noise F --ascend BOOL
";

fn run(args: &[String]) -> Result<i32, CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::config(format!("missing command\n{USAGE}")));
    };
    if command == "help" || command == "--help" || command == "-h" {
        print!("{USAGE}");
        return Ok(0);
    }
    let mut opts = Opts::parse(&args[1..])?;
    let code = match command.as_str() {
        "train" => commands::cmd_train(&mut opts)?,
        "verify" => commands::cmd_verify(&mut opts)?,
        "classify" => commands::cmd_classify(&mut opts)?,
        "multilabel" => commands::cmd_multilabel(&mut opts)?,
        other => return Err(CliError::config(format!("unknown command '{other}'\n{USAGE}"))),
    };
    Ok(code)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

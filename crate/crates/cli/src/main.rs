//! `nsplan`: dataset generation, training, planning, evaluation and
//! rendering for the learned chained-quintic planner.
//!
//! Exit codes: 0 success, 1 the planned path is infeasible, 2 error.

mod commands;
mod config;
mod render;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Status;
use config::Opts;

#[derive(Parser)]
#[command(name = "nsplan", version, about = "Learned local path planning with chained quintic segments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut local maps from source maps and plan reference scenarios.
    Gendata(Opts),
    /// Train a policy on a generated dataset.
    Train(Opts),
    /// Plan one path with a trained policy.
    Plan(Opts),
    /// Accuracy, path shape and timing of a policy on a dataset split.
    Eval(Opts),
    /// Heatmap of goal poses the policy reaches feasibly.
    Reachable(Opts),
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Gendata(o) => commands::gendata(&o.resolve("gendata")?),
        Command::Train(o) => commands::train_cmd(&o.resolve("train")?),
        Command::Plan(o) => commands::plan(&o.resolve("plan")?),
        Command::Eval(o) => commands::eval(&o.resolve("eval")?),
        Command::Reachable(o) => commands::reachable(&o.resolve("reachable")?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Infeasible) => ExitCode::from(1),
        Err(e) => {
            let reason = if e.chain().any(|c| c.is::<std::io::Error>()) { "io" } else { "error" };
            eprintln!("{}", serde_json::json!({ "reason": reason, "message": format!("{e:#}") }));
            ExitCode::from(2)
        }
    }
}

//! Command-line front end for the grounding engine.
//!
//! Exit codes: 0 when a command completes (for `run`, a success or
//! best-effort grounding), 2 when grounding fails or a probed service is
//! down, 1 for usage and input errors.

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub mod check;
pub mod evaluate;
pub mod input;
pub mod render;
pub mod run;
pub mod settings;
pub mod simulate;

#[derive(Debug, Parser)]
#[command(name = "astg", version, about = "Agentic spatio-temporal video grounding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ground a query in a frames directory or scenario.
    Run(run::RunArgs),
    /// Generate scenarios, ground them with oracle backends, write reports.
    Simulate(simulate::SimulateArgs),
    /// Score predictions against ground truth.
    Eval(evaluate::EvalArgs),
    /// Probe the configured remote services.
    Check(check::CheckArgs),
    /// Write prompted frames as PNGs.
    Render(render::RenderArgs),
    /// Print the effective engine config as TOML.
    Config(settings::ConfigArgs),
}

pub const EXIT_USAGE: i32 = 1;

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run::cmd_run(a),
        Command::Simulate(a) => simulate::cmd_simulate(a),
        Command::Eval(a) => evaluate::cmd_eval(a),
        Command::Check(a) => check::cmd_check(a),
        Command::Render(a) => render::cmd_render(a),
        Command::Config(a) => print_config(&a.engine),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        EXIT_USAGE
    })
}

fn print_config(flags: &settings::EngineFlags) -> anyhow::Result<i32> {
    print!("{}", toml::to_string(&flags.resolve_from_env()?)?);
    Ok(0)
}

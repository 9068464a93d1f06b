use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use serde_json::json;

mod args;
mod commands;
mod config;
mod output;

use args::{Cli, Command};
use output::{event, exit_code, EXIT_USAGE};

fn parse(argv: Vec<OsString>) -> Result<Cli, ExitCode> {
    let cmd = Cli::command();
    let argv = match config::locate(&argv) {
        (Some(path), Some(sub)) => match config::merge(&cmd, argv, &sub, &path) {
            Ok((argv, unknown)) => {
                for key in unknown {
                    event("warning", json!({ "message": format!("config key `{key}` matches no flag of `{sub}`; ignored") }));
                }
                argv
            }
            Err(e) => {
                let code = exit_code(&e);
                event("error", json!({ "code": code, "message": format!("{e:#}") }));
                return Err(ExitCode::from(code as u8));
            }
        },
        _ => argv,
    };
    let matches = cmd.try_get_matches_from(argv).map_err(usage)?;
    Cli::from_arg_matches(&matches).map_err(usage)
}

fn usage(e: clap::Error) -> ExitCode {
    let code = e.exit_code();
    let _ = e.print();
    if code == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_USAGE as u8)
    }
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    event("config", serde_json::to_value(&cli).unwrap_or_default());
    let result = match &cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Reorder(a) => commands::reorder(a),
        Command::Replay(a) => commands::replay(a),
        Command::Align(a) => commands::align(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Train(a) => commands::train(a),
        Command::Decode(a) => commands::decode_cmd(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            event("error", json!({ "code": code, "message": format!("{e:#}") }));
            ExitCode::from(code as u8)
        }
    }
}

use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command as Cli};
use distillfuse_pipeline::{run_command, Command, PipelineError, RunConfig};

fn cli() -> Cli {
    let mut root = Cli::new("distillfuse")
        .about("Text + audio classification with dual-teacher distillation")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = Cli::new(cmd.name()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("Config file of `key = value` lines"),
        );
        for (key, help) in RunConfig::KEYS {
            let flag = RunConfig::flag_name(key);
            let mut arg = Arg::new(*key).long(flag).value_name("VALUE").help(*help).action(ArgAction::Set);
            if *key == "out_dir" {
                arg = arg.visible_alias("out");
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve(m: &ArgMatches) -> Result<RunConfig, PipelineError> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::from_file(Path::new(p))?,
        None => RunConfig::default(),
    };
    for (key, _) in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = name
        .parse::<Command>()
        .and_then(|cmd| Ok((cmd, resolve(sub)?)))
        .and_then(|(cmd, cfg)| run_command(cmd, &cfg));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! `inbox-fixture`: runs a built-in example system against an `inboxd`
//! server, one thread per node.

use std::process::ExitCode;
use std::thread;

use clap::Parser;
use inboxdbg::fixtures;
use inboxdbg::shim::{run_node, server_address_from_env, DEFAULT_SERVER, SERVER_ENV};

#[derive(Debug, Parser)]
#[command(name = "inbox-fixture", version, about = "Run a built-in example system under inboxd")]
struct Args {
    /// Fixture to run.
    name: String,

    /// Debugger node port.
    #[arg(long, value_name = "HOST:PORT")]
    server: Option<String>,

    /// Run only these nodes of the fixture.
    #[arg(long, value_delimiter = ',', value_name = "A,B")]
    only: Vec<String>,

    /// Print the fixture's node names and exit.
    #[arg(long)]
    list: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let Some(fixture) = fixtures::by_name(&args.name) else {
        eprintln!(
            "unknown fixture {:?}; known: {}",
            args.name,
            fixtures::FIXTURE_NAMES.join(", ")
        );
        return ExitCode::from(2);
    };
    let mut defs = fixture.definitions();
    if args.list {
        let names: Vec<String> = defs.iter().map(|d| d.name.to_string()).collect();
        println!("{}", names.join(","));
        return ExitCode::SUCCESS;
    }
    if !args.only.is_empty() {
        defs.retain(|d| args.only.iter().any(|o| d.name == o.as_str()));
        if defs.len() != args.only.len() {
            eprintln!("--only names a node that {} does not have", fixture.name);
            return ExitCode::from(2);
        }
    }
    let server = args.server.unwrap_or_else(server_address_from_env);
    log::info!(
        "running {} node(s) of {} against {server} (default {DEFAULT_SERVER}, override with ${SERVER_ENV})",
        defs.len(),
        fixture.name
    );

    let handles: Vec<_> = defs
        .into_iter()
        .map(|def| {
            let server = server.clone();
            let name = def.name.clone();
            (name, thread::spawn(move || run_node(def, server.as_str())))
        })
        .collect();
    let mut failed = false;
    for (name, handle) in handles {
        match handle.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => {
                log::error!("{name}: {e}");
                failed = true;
            }
            Err(_) => {
                log::error!("{name}: node thread panicked");
                failed = true;
            }
        }
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

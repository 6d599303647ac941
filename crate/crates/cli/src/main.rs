//! `inboxd`: the debugger server.
//!
//! Nodes connect to the node port and register; once every expected node is
//! present the session starts. Frontends and scripts drive it through the UI
//! port. On interrupt the cursor path can be saved as a trace and drawn as a
//! space-time diagram.

mod frontend;
mod nodes;
mod server;

use std::collections::BTreeSet;
use std::io::Write;
use std::net::{IpAddr, SocketAddr, TcpListener};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use clap::Parser;
use inboxdbg::fixtures;
use inboxdbg::NodeId;
use thiserror::Error;

use crate::frontend::Assets;
use crate::server::{Config, Exploration, Input, Nodes, Outcome, ServerError};

#[derive(Debug, Parser)]
#[command(name = "inboxd", version, about = "Interactive debugger server for message-passing systems")]
struct Args {
    /// Names of the nodes that must register before the session starts.
    #[arg(long, value_delimiter = ',', value_name = "A,B,C")]
    nodes: Vec<String>,

    /// Port nodes connect to.
    #[arg(long, env = "INBOXD_NODE_PORT", default_value_t = 4343)]
    node_port: u16,

    /// Port for the browser UI and the command socket.
    #[arg(long, env = "INBOXD_UI_PORT", default_value_t = 8080)]
    ui_port: u16,

    /// Address both ports listen on.
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,

    /// Replay this trace right after the session starts.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,

    /// On exit, save the path from the root to the cursor as a trace.
    #[arg(long, value_name = "FILE")]
    record: Option<PathBuf>,

    /// On exit, write the cursor path as a Graphviz space-time diagram.
    #[arg(long, value_name = "FILE")]
    export_dot: Option<PathBuf>,

    /// Serve only the command socket, no UI assets.
    #[arg(long)]
    headless: bool,

    /// Serve UI assets from this directory instead of the built-in page.
    #[arg(long, value_name = "DIR", conflicts_with = "headless")]
    assets: Option<PathBuf>,

    /// Let the explorer also drop and duplicate messages.
    #[arg(long)]
    allow_dup_drop_in_explore: bool,

    /// Host a built-in fixture in-process, search it for invariant
    /// violations, and open the session at the first one found.
    #[arg(long, value_name = "NAME", conflicts_with = "nodes")]
    explore_fixture: Option<String>,

    /// Depth bound for --explore-fixture.
    #[arg(long, value_name = "N", default_value_t = 12)]
    explore_depth: usize,

    /// Seconds to wait for every expected node to register.
    #[arg(long, value_name = "SECS", default_value_t = 60)]
    registration_timeout: u64,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot listen on {addr} ({what}): {source}")]
    Bind {
        what: &'static str,
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("installing the interrupt handler: {0}")]
    Signal(#[from] ctrlc::Error),
    #[error(transparent)]
    Server(#[from] ServerError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn bind(what: &'static str, ip: IpAddr, port: u16) -> Result<TcpListener, CliError> {
    let addr = SocketAddr::new(ip, port);
    let listener = TcpListener::bind(addr).map_err(|source| CliError::Bind { what, addr, source })?;
    let local = listener.local_addr().unwrap_or(addr);
    println!("{what} listening on {local}");
    Ok(listener)
}

fn node_plan(args: &Args) -> Result<Nodes, CliError> {
    if let Some(name) = &args.explore_fixture {
        let fixture = fixtures::by_name(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown fixture {name:?}; known: {}",
                fixtures::FIXTURE_NAMES.join(", ")
            ))
        })?;
        return Ok(Nodes::Explore(Exploration {
            fixture,
            depth: args.explore_depth,
            allow_drop_dup: args.allow_dup_drop_in_explore,
        }));
    }
    let expected: BTreeSet<NodeId> = args
        .nodes
        .iter()
        .map(|n| n.trim())
        .filter(|n| !n.is_empty())
        .map(NodeId::from)
        .collect();
    if expected.is_empty() {
        return Err(CliError::Usage("--nodes is required (or --explore-fixture)".into()));
    }
    if expected.len() != args.nodes.len() {
        return Err(CliError::Usage("--nodes lists a name twice or an empty name".into()));
    }
    Ok(Nodes::Remote {
        expected,
        wait: Duration::from_secs(args.registration_timeout),
    })
}

fn run(args: Args) -> Result<Outcome, CliError> {
    if args.node_port == args.ui_port && args.node_port != 0 {
        return Err(CliError::Usage(format!(
            "--node-port and --ui-port are both {}",
            args.node_port
        )));
    }
    let nodes = node_plan(&args)?;
    let (tx, rx) = mpsc::channel();
    let interrupt = tx.clone();
    ctrlc::set_handler(move || {
        let _ = interrupt.send(Input::Shutdown);
    })?;

    if matches!(nodes, Nodes::Remote { .. }) {
        nodes::spawn_acceptor(bind("nodes", args.bind, args.node_port)?, tx.clone());
    }
    let assets = match (&args.headless, &args.assets) {
        (true, _) => None,
        (false, Some(dir)) => Some(Assets::Dir(dir.clone())),
        (false, None) => Some(Assets::Embedded),
    };
    frontend::spawn_acceptor(bind("ui", args.bind, args.ui_port)?, tx.clone(), assets);
    let _ = std::io::stdout().flush();
    drop(tx);

    let config = Config {
        nodes,
        trace: args.trace,
        record: args.record,
        export_dot: args.export_dot,
    };
    Ok(server::run(config, rx)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Faulted) => {
            log::error!("exiting after a protocol or determinism error");
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

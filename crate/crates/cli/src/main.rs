use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::Result;
use autocompose::engine::DEFAULT_MINE_EVERY;
use autocompose_cli::serve::{self, ServeOptions};
use autocompose_cli::simulate::{cmd_simulate, SimulateOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "autocompose",
    version,
    about = "Mine purchase logs and compose services from them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine frequent itemsets and rules from a transaction file.
    Mine {
        #[arg(long)]
        transactions: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the engine: scenario first, then the AC1 endpoint until SIGINT.
    Serve {
        #[arg(long)]
        transactions: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Fixed decision rules; built-in defaults when omitted.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Directory for the trigger log and rule store.
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// `host:port` to listen on (port 0 picks one).
        #[arg(long)]
        endpoint: Option<String>,
        /// Peer that serves plans whose services are not local.
        #[arg(long)]
        peer: Option<String>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MINE_EVERY)]
        mine_every: usize,
    },
    /// Replay a scenario on a scratch copy of the log and report metrics.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, requires = "config")]
        transactions: Option<PathBuf>,
        #[arg(long, requires = "transactions")]
        config: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MINE_EVERY)]
        mine_every: usize,
    },
}

static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
}

fn install_signal_handlers() {
    let handler = on_signal as extern "C" fn(libc::c_int) as libc::sighandler_t;
    // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mine {
            transactions,
            config,
            report,
        } => autocompose_cli::mine::cmd_mine(&transactions, &config)?.write_to(report.as_deref()),
        Command::Serve {
            transactions,
            config,
            catalog,
            rules,
            state_dir,
            endpoint,
            peer,
            scenario,
            mine_every,
        } => {
            install_signal_handlers();
            let opts = ServeOptions {
                transactions,
                config,
                catalog,
                rules,
                state_dir,
                endpoint,
                peer,
                scenario,
                mine_every,
            };
            let server = serve::start(&opts, &mut std::io::stdout())?;
            if opts.endpoint.is_some() {
                server.wait(&STOP)
            } else {
                server.stop()
            }
        }
        Command::Simulate {
            scenario,
            seed,
            report,
            transactions,
            config,
            catalog,
            rules,
            mine_every,
        } => {
            let opts = SimulateOptions {
                scenario,
                seed,
                transactions,
                config,
                catalog,
                rules,
                mine_every,
            };
            cmd_simulate(&opts)?.write_to(report.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

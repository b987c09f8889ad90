//! `minichain`: single-user front end over one data directory.

mod commands;
mod config;
mod node;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use minichain::storage::StorageError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::NotFound(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::Io(_) | StorageError::DiskFull => CliError::Io(e.to_string()),
            StorageError::NotFound(_) => CliError::NotFound(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "minichain", version, about = "Toy proof-of-work chain: wallet, explorer and network simulator")]
pub struct Cli {
    /// Data directory holding blocks, index, wallet and mempool.
    #[arg(long, global = true, env = "MINICHAIN_DATADIR", default_value = "minichain-data")]
    pub datadir: PathBuf,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for wallet key derivation at init and for simulations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create the genesis block and the default wallet key.
    Init {
        /// Text embedded in the genesis coinbase.
        #[arg(long)]
        message: Option<String>,
        #[arg(long)]
        params: Option<String>,
    },
    /// Show (creating if needed) the address of a wallet key.
    Address {
        #[arg(long, default_value = node::DEFAULT_LABEL)]
        label: String,
    },
    /// Confirmed wallet balance.
    Balance,
    /// Mine blocks on the tip, including pending transactions.
    Mine {
        #[arg(long, default_value_t = 1)]
        blocks: u64,
        /// Payout address; defaults to the wallet's default key.
        #[arg(long)]
        to: Option<String>,
    },
    /// Pay an address from wallet funds.
    Send {
        #[arg(long)]
        to: String,
        #[arg(long)]
        amount: String,
        #[arg(long, default_value = "0.0001")]
        fee: String,
    },
    /// Build an M-of-N pay-to-script-hash address.
    Multisig {
        #[arg(long)]
        m: usize,
        /// Comma-separated hex public keys or wallet labels.
        #[arg(long, value_delimiter = ',')]
        keys: Vec<String>,
    },
    /// Payment channels between two wallet keys.
    #[command(subcommand)]
    Channel(ChannelCommand),
    /// Show one block by hash, hash prefix or height.
    Explore { query: String },
    /// Issuance schedule by halving epoch.
    Supply {
        #[arg(long)]
        params: Option<String>,
    },
    /// Run a network simulation scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Run N consecutive seeds instead of one.
        #[arg(long)]
        sweep: Option<u64>,
    },
    /// Re-validate every stored block of the active chain.
    Verify,
}

#[derive(Subcommand, Debug)]
pub enum ChannelCommand {
    /// Fund a channel; the funding transaction enters the mempool.
    Open(ChannelOpen),
    /// Move more of the capacity to the payee off chain.
    Pay {
        #[arg(long)]
        id: String,
        #[arg(long)]
        amount: String,
    },
    /// Broadcast the latest commitment countersigned by the payee.
    Close {
        #[arg(long)]
        id: String,
    },
    /// Broadcast the funder's time-locked refund.
    Refund {
        #[arg(long)]
        id: String,
    },
    /// List stored channels.
    List,
}

#[derive(Args, Debug)]
pub struct ChannelOpen {
    /// Wallet label of the payee key.
    #[arg(long)]
    pub payee: String,
    #[arg(long)]
    pub capacity: String,
    #[arg(long, default_value = "0.0001")]
    pub fee: String,
    /// Seconds after the next block time before the refund becomes valid.
    #[arg(long, default_value_t = 100)]
    pub refund_after: u64,
    /// Wallet label of the funder key.
    #[arg(long, default_value = node::DEFAULT_LABEL)]
    pub from: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

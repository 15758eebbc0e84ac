//! `boxspace` command-line driver.
//!
//! Exit codes: 0 when every check passes, 1 on a verification failure, 2 on bad input.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use boxspace::embedding::{Control, Exponent};
use boxspace::fce::SubsetMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "boxspace", version, about = "Box spaces, embeddings into l^p and cocycle verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Chain description (TOML).
    #[arg(long)]
    chain: PathBuf,
    /// Directory for output files; without it artifacts go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comparison tolerance overriding the data-dependent default.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct Controls {
    /// Lower control: `identity`, `zero`, `const:<c>` or `affine:<slope>,<intercept>`.
    #[arg(long, default_value = "identity")]
    lower: Control,
    /// Upper control, same syntax as `--lower`.
    #[arg(long, default_value = "identity")]
    upper: Control,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Level table and box-space separations.
    Build {
        #[command(flatten)]
        common: Common,
        /// Also write all pairwise box distances.
        #[arg(long)]
        distances: bool,
    },
    /// Optimal control functions of an embedding, optionally checked against given controls.
    Profile {
        #[command(flatten)]
        common: Common,
        /// `linf`, `torus-lp`, `cycle-plane`, or a path to an embedding CSV.
        #[arg(long, default_value = "linf")]
        embedding: String,
        /// Exponent for builtin embeddings; checked against the header of a CSV.
        #[arg(long)]
        p: Option<Exponent>,
        /// Lower control to check against.
        #[arg(long)]
        lower: Option<Control>,
        /// Upper control to check against.
        #[arg(long)]
        upper: Option<Control>,
    },
    /// Build and verify cocycles.
    Forge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ForgeMode::Averaged)]
        mode: ForgeMode,
        /// Embedding for `averaged`, and for `fce` when the chain file has no action.
        #[arg(long, default_value = "cycle-plane")]
        embedding: String,
        #[arg(long)]
        p: Option<Exponent>,
        /// Locality radius (`fce`) or largest radius of the family (`family`).
        #[arg(long, default_value_t = 4)]
        r: u64,
        /// Quotient level carrying the averaged cocycle.
        #[arg(long, default_value_t = 0)]
        level: usize,
        /// Test elements for `family` have length at most this.
        #[arg(long, default_value_t = 3)]
        test_radius: u64,
        /// Verify a cocycle dump against the recomputed representation instead of the fresh values.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[command(flatten)]
        controls: Controls,
    },
    /// Check both conditions of a fibred coarse embedding at scale r.
    FceVerify {
        #[command(flatten)]
        common: Common,
        /// Embedding whose trivial fibration is checked when the chain file has no action.
        #[arg(long, default_value = "linf")]
        embedding: String,
        #[arg(long)]
        p: Option<Exponent>,
        #[arg(long, default_value_t = 2)]
        r: u64,
        /// Check every scale from 1 to r.
        #[arg(long)]
        all_scales: bool,
        /// `balls`, `pairs`, `balls-and-pairs` or `all`.
        #[arg(long, default_value_t = SubsetMode::BallsAndPairs)]
        subsets: SubsetMode,
        /// Write the materialized trivializations.
        #[arg(long)]
        dump: bool,
        #[command(flatten)]
        controls: Controls,
    },
    /// Spectral gaps of every level.
    Spectral {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ForgeMode {
    Averaged,
    Fce,
    Family,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

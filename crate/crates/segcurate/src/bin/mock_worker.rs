//! Protocol v1 worker backed by the deterministic mocks.
//!
//! ```text
//! segcurate-mock-worker --role generator --workdir out/run --corruption 0.1
//! ```

use std::io::{self, BufWriter};
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use segcurate::bridge::mock::{MockDepth, MockGenerator, MockLabeller};
use segcurate::bridge::serve::{serve, Backend, Faults};
use segcurate::bridge::Role;
use segcurate_core::mock::{Corruption, CorruptionStyle};
use segcurate_core::taxonomy::ClassTaxonomy;

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Swap,
    Scramble,
}

#[derive(Parser)]
#[command(version, about = "Mock generator / labeller / depth worker")]
struct Args {
    #[arg(long)]
    role: Role,
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
    /// Per-component corruption probability (generator).
    #[arg(long, default_value_t = 0.0)]
    corruption: f64,
    #[arg(long, value_enum, default_value = "swap")]
    corruption_style: Style,
    /// Per-pixel noise rate (labeller).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Announce a different role in the handshake.
    #[arg(long, hide = true)]
    announce: Option<Role>,
    /// Exit abruptly after this many requests.
    #[arg(long, hide = true)]
    crash_after: Option<u64>,
    /// Never answer requests.
    #[arg(long, hide = true)]
    stall: bool,
    /// Emit a malformed line before every answer.
    #[arg(long, hide = true)]
    garbage: bool,
}

fn main() {
    let args = Args::parse();
    let taxonomy = ClassTaxonomy::urban19();
    let corruption = Corruption {
        probability: args.corruption,
        style: match args.corruption_style {
            Style::Swap => CorruptionStyle::Swap,
            Style::Scramble => CorruptionStyle::Scramble,
        },
    };
    let backend = match args.role {
        Role::Generator => Backend::Generator(Box::new(MockGenerator::new(&args.workdir, taxonomy, corruption))),
        Role::Labeller => Backend::Labeller(Box::new(MockLabeller::new(&args.workdir, taxonomy, args.noise, args.seed))),
        Role::Depth => Backend::Depth(Box::new(MockDepth::new(&args.workdir, taxonomy))),
    };
    let faults = Faults {
        announce: args.announce,
        crash_after: args.crash_after,
        stall: args.stall,
        garbage: args.garbage,
    };
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    if let Err(e) = serve(backend, stdin, stdout, &faults) {
        eprintln!("segcurate-mock-worker: {e}");
        std::process::exit(1);
    }
}

//! `alprio`: headless driver for every campaign stage and evaluation.
//! Exit codes: 0 ok, 1 validation, 2 runtime, 3 numerical.

mod analysis;
mod campaign;
mod data;
mod exit;
mod output;

use std::net::SocketAddr;
use std::path::PathBuf;

use alprio_core::acquire::Policy;
use alprio_core::featurize::RepresentationMode;
use alprio_core::par::Execution;
use clap::{Parser, Subcommand};

use data::DataArgs;
use output::Format;

#[derive(Parser, Debug)]
#[command(name = "alprio", version, about = "Active-learning prioritization of candidate molecules")]
struct Cli {
    /// Seed for every randomized step (oracle mock, optimizer restarts,
    /// random policy, bootstrap).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output format. Tables default to csv, single-value commands to text.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Campaign directory (or its campaign.state file).
    #[arg(long, global = true, default_value = ".")]
    state: PathBuf,
    /// Run all data-parallel loops on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log more to stderr; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate input files and report what they contain.
    Ingest {
        #[arg(long)]
        molecules: Option<PathBuf>,
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        soft_samples: Option<PathBuf>,
        #[arg(long)]
        benchmark: Option<PathBuf>,
    },
    /// Create a campaign in --state from a library and hot-start results.
    Init {
        #[arg(long)]
        molecules: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Soft samples to store as template-0 profiles.
        #[arg(long)]
        soft_samples: Option<PathBuf>,
        /// Campaign config (TOML with [oracle], [acquisition], [fit] tables
        /// and `representation`).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "campaign")]
        id: String,
    },
    /// Sample the oracle for molecules and write soft_samples.csv.
    Profile {
        #[arg(long)]
        molecules: Option<PathBuf>,
        /// Only these molecule ids (one per line).
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Prompt template file with {smiles} and {name} placeholders.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every raw response as json-lines.
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Fit the surrogate on every molecule with a result.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "hybrid")]
        mode: RepresentationMode,
        /// Write the standardized feature matrix.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Write the fitted posterior as JSON.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fit and score a candidate pool.
    Score {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "hybrid")]
        mode: RepresentationMode,
        /// Pool ids, one per line. Defaults to every molecule without a result.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value = "ei")]
        policy: Policy,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a round's shortlist.
    Shortlist {
        /// Defaults to the current round.
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flag a candidate infeasible (or feasible again) and re-rank.
    Review {
        molecule_id: String,
        #[arg(long, conflicts_with = "feasible")]
        infeasible: bool,
        #[arg(long)]
        feasible: bool,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long)]
        round: Option<u32>,
    },
    /// Record measured results in the current round.
    Record {
        #[arg(long, required_unless_present = "results", requires_all = ["pce_additive", "pce_control"])]
        molecule: Option<String>,
        #[arg(long)]
        pce_additive: Option<f64>,
        #[arg(long)]
        pce_control: Option<f64>,
        /// Defaults to the current round.
        #[arg(long)]
        round: Option<u32>,
        /// results.csv with several rows instead of a single result.
        #[arg(long, conflicts_with = "molecule")]
        results: Option<PathBuf>,
    },
    /// Open the next round.
    OpenRound {
        /// Pool ids, one per line. Defaults to every molecule without a result.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Subset of the pool to score instead of the whole pool.
        #[arg(long)]
        prioritized: Option<PathBuf>,
        /// Add this template as a new version and use it for the round.
        #[arg(long, conflicts_with = "template_version")]
        template: Option<PathBuf>,
        /// Existing template version. Defaults to the latest.
        #[arg(long)]
        template_version: Option<u32>,
    },
    /// Close a round with its tested molecules and results.
    CloseRound {
        /// Defaults to the current round.
        #[arg(long)]
        round: Option<u32>,
        /// Tested ids, one per line. Defaults to those already recorded.
        #[arg(long)]
        tested: Option<PathBuf>,
        /// Results to record while closing.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Refit on all results and rescore the current round.
    Retrain {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-out evaluation of one representation.
    Loo {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "hybrid")]
        mode: RepresentationMode,
        #[arg(long, default_value_t = alprio_core::stats::DEFAULT_TOPK_FRACTION)]
        topk: f64,
        /// Write per-fold predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// LOO for all four representations on shared folds, with bootstrap CIs.
    AblateRepresentation {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = alprio_core::stats::DEFAULT_REPLICATES)]
        replicates: usize,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Compare EI, mean, uncertainty and random top-k sets on one pool.
    AblatePolicy {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "hybrid")]
        mode: RepresentationMode,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
    },
    /// Accuracy with Wilson CI, exact McNemar and Holm on a benchmark sheet,
    /// or the Wilson interval alone with --k/--n.
    BenchStats {
        #[arg(long, required_unless_present_all = ["k", "n"], conflicts_with_all = ["k", "n"])]
        benchmark: Option<PathBuf>,
        /// Reference model for the paired tests. Defaults to the first model.
        #[arg(long, requires = "benchmark")]
        reference: Option<String>,
        #[arg(long, requires = "n")]
        k: Option<u64>,
        #[arg(long, requires = "k")]
        n: Option<u64>,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
    },
    /// Welch's t-test from group summaries (MEAN,SD,N).
    Welch {
        #[arg(long, value_parser = analysis::parse_group)]
        treated: analysis::Group,
        #[arg(long, value_parser = analysis::parse_group)]
        control: analysis::Group,
    },
    /// Trap-state density (cm⁻³) from the trap-filled-limit voltage.
    Trapdensity {
        /// Relative permittivity.
        #[arg(long)]
        eps: f64,
        /// Trap-filled-limit voltage in volts.
        #[arg(long)]
        vtfl: f64,
        /// Film thickness in metres.
        #[arg(long)]
        thickness: f64,
    },
    /// Serve the HTTP API for the campaign in --state.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Static UI assets served at / when the directory exists.
        #[arg(long, default_value = "webui/dist")]
        static_dir: PathBuf,
    },
    /// Rebuild the campaign from its log and compare with the state file.
    Replay,
    /// Write a synthetic molecules/results/soft-samples fixture.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long, default_value_t = 36)]
        hot: usize,
    },
}

pub struct Ctx {
    pub seed: u64,
    pub seed_given: bool,
    pub format: Option<Format>,
    pub state: PathBuf,
    pub exec: Execution,
}

impl Ctx {
    fn table_format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    fn scalar_format(&self) -> Format {
        self.format.unwrap_or(Format::Text)
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        seed_given: cli.seed.is_some(),
        format: cli.format,
        state: cli.state,
        exec: if cli.sequential { Execution::Sequential } else { Execution::Parallel },
    };
    use Command as C;
    match cli.command {
        C::Ingest {
            molecules,
            results,
            soft_samples,
            benchmark,
        } => analysis::ingest(&ctx, molecules, results, soft_samples, benchmark),
        C::Init {
            molecules,
            results,
            soft_samples,
            config,
            id,
        } => campaign::init(&ctx, &molecules, &results, soft_samples.as_ref(), config.as_ref(), id),
        C::Profile {
            molecules,
            ids,
            oracle,
            template,
            out,
            responses,
        } => analysis::profile(&ctx, molecules, ids, oracle, template, out, responses),
        C::Fit {
            data,
            mode,
            features,
            model,
        } => analysis::fit(&ctx, &data, mode, features, model),
        C::Score {
            data,
            mode,
            pool,
            policy,
            limit,
            out,
        } => analysis::score(&ctx, &data, mode, pool, policy, limit, out),
        C::Shortlist { round, out } => campaign::shortlist(&ctx, round, out),
        C::Review {
            molecule_id,
            infeasible,
            feasible: _,
            note,
            round,
        } => campaign::review(&ctx, &molecule_id, !infeasible, note, round),
        C::Record {
            molecule,
            pce_additive,
            pce_control,
            round,
            results,
        } => campaign::record(&ctx, molecule, pce_additive, pce_control, round, results),
        C::OpenRound {
            pool,
            prioritized,
            template,
            template_version,
        } => campaign::open_round(&ctx, pool, prioritized, template, template_version),
        C::CloseRound { round, tested, results } => campaign::close_round(&ctx, round, tested, results),
        C::Retrain { out } => campaign::retrain(&ctx, out),
        C::Loo {
            data,
            mode,
            topk,
            predictions,
        } => analysis::loo(&ctx, &data, mode, topk, predictions),
        C::AblateRepresentation {
            data,
            replicates,
            predictions,
        } => analysis::ablate_representation(&ctx, &data, replicates, predictions),
        C::AblatePolicy {
            data,
            mode,
            pool,
            k,
            replicates,
        } => analysis::ablate_policy(&ctx, &data, mode, pool, k, replicates),
        C::BenchStats {
            benchmark,
            reference,
            k,
            n,
            confidence,
        } => analysis::bench_stats(&ctx, benchmark, reference, k.zip(n), confidence),
        C::Welch { treated, control } => analysis::welch(&ctx, treated, control),
        C::Trapdensity { eps, vtfl, thickness } => analysis::trapdensity(&ctx, eps, vtfl, thickness),
        C::Serve { listen, static_dir } => campaign::serve(&ctx, listen, static_dir),
        C::Replay => campaign::replay(&ctx),
        C::Demo { out, size, hot } => analysis::demo(&ctx, &out, size, hot),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::VALIDATION } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::code(&e)
        }
    };
    std::process::exit(code);
}

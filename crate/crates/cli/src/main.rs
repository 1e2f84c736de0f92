//! `paulilearn` command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use paulilearn::bounds::{self, BoundQuery, BoundVariant, LowerVariant};
use paulilearn::channel::{ChannelFile, PartitionFile, Representation, ValidityReport, DEFAULT_TOLERANCE};
use paulilearn::cover::{commuting_cover, CoverStrategy};
use paulilearn::protocols::{
    af_estimate_all_with_shots, af_shots_per_group, coarse_estimate, ea_estimate, ea_sample_count, lecam_game,
    AfPlayer, BellSampler, EaPlayer, EstimateRecord, IgnoreSamples, NoiseModel, Player, TruthOracle,
};
use paulilearn::random::{random_partition, random_policy};
use paulilearn::scheme::{count_measurements, SchemeFile, DEFAULT_MAX_LEAVES};
use paulilearn::tvd::{certify_inequality, HypothesisFamily};
use paulilearn::{Partition, PauliChannel, PauliString, SchemePolicy};

/// Default qubit cap for protocol simulation and the game.
const DEFAULT_PROTOCOL_MAX_N: usize = 12;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] paulilearn::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Validation { message: String, details: serde_json::Value },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            Self::Core(_) => "core",
            Self::Csv(_) => "csv",
            Self::Io(_) => "io",
            Self::Usage(_) => "usage",
            Self::Validation { .. } => "validation",
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let Self::Validation { details, .. } = self {
            v["details"] = details.clone();
        }
        v
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "paulilearn", version, about = "Pauli channel learning toolkit")]
struct Cli {
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunConfig {
    /// Master seed; per-trial streams are derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write results to this file instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Absolute tolerance for channel validation.
    #[arg(long, global = true, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Largest qubit count any subcommand accepts.
    #[arg(long, global = true, env = "PAULILEARN_MAX_N")]
    max_n: Option<usize>,
    /// Largest history tree enumerated exactly.
    #[arg(long, global = true, env = "PAULILEARN_MAX_LEAVES", default_value_t = DEFAULT_MAX_LEAVES)]
    max_leaves: usize,
}

impl RunConfig {
    fn check_n(&self, what: &'static str, n: usize, default_cap: usize) -> CliResult<()> {
        let cap = self.max_n.unwrap_or(default_cap);
        if n > cap {
            return Err(paulilearn::Error::TooManyQubits { what, n, cap }.into());
        }
        Ok(())
    }

    fn sink(&self) -> CliResult<Box<dyn Write>> {
        Ok(match &self.output {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a channel file between error rates and eigenvalues.
    Transform(TransformArgs),
    /// Check a channel, partition or scheme file.
    Validate(ValidateArgs),
    /// Run a learning protocol on a channel and emit per-target estimates.
    Simulate(SimulateArgs),
    /// Evaluate a single sample-complexity bound.
    Bounds(BoundsArgs),
    /// Tabulate bounds against the qubit count.
    Curve(CurveArgs),
    /// Find where a lower bound overtakes the entanglement-assisted upper bound.
    Crossover(CrossoverArgs),
    /// Play the three-way distinguishing game.
    Game(GameArgs),
    /// Certify the average-TVD inequality on exact policy distributions.
    TvdCheck(TvdCheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReprArg {
    ErrorRates,
    Eigenvalues,
}

impl From<ReprArg> for Representation {
    fn from(r: ReprArg) -> Self {
        match r {
            ReprArg::ErrorRates => Representation::ErrorRates,
            ReprArg::Eigenvalues => Representation::Eigenvalues,
        }
    }
}

#[derive(Args, Debug)]
struct TransformArgs {
    /// Channel file to convert.
    #[arg(long)]
    input: PathBuf,
    /// Representation to write.
    #[arg(long, value_enum)]
    to: ReprArg,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("file").required(true).args(["channel", "partition", "scheme"])))]
struct ValidateArgs {
    #[arg(long)]
    channel: Option<PathBuf>,
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Ea,
    Af,
    Coarse,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CoverArg {
    Greedy,
    Product,
}

impl From<CoverArg> for CoverStrategy {
    fn from(c: CoverArg) -> Self {
        match c {
            CoverArg::Greedy => CoverStrategy::Greedy,
            CoverArg::Product => CoverStrategy::Product,
        }
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct NoiseArgs {
    /// Depolarizing probability on each Bell pair.
    #[arg(long, conflicts_with = "bell_fidelity")]
    p_depol: Option<f64>,
    /// Bell-pair fidelity, converted to a depolarizing probability.
    #[arg(long)]
    bell_fidelity: Option<f64>,
}

impl NoiseArgs {
    fn model(&self) -> CliResult<NoiseModel> {
        Ok(match (self.p_depol, self.bell_fidelity) {
            (Some(p), _) => NoiseModel::new(p)?,
            (None, Some(f)) => NoiseModel::from_bell_fidelity(f)?,
            (None, None) => NoiseModel::noiseless(),
        })
    }

    fn is_set(&self) -> bool {
        self.p_depol.is_some() || self.bell_fidelity.is_some()
    }
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("budget").required(true).args(["shots", "eps"])))]
struct SimulateArgs {
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    /// Channel file.
    #[arg(long)]
    channel: PathBuf,
    /// Total Bell samples (ea) or shots per commuting group (af, coarse).
    #[arg(long, conflicts_with_all = ["eps", "delta"])]
    shots: Option<u64>,
    /// Target accuracy; sets the shot count with --delta.
    #[arg(long, requires = "delta")]
    eps: Option<f64>,
    /// Failure probability per target.
    #[arg(long, requires = "eps")]
    delta: Option<f64>,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Partition file (coarse protocol).
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CoverArg::Greedy)]
    cover: CoverArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    EfExact,
    EfPlotted,
    EfSimplified,
    Coarse,
    AfPrevious,
    EaUpper,
}

impl From<VariantArg> for BoundVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::EfExact => BoundVariant::EfExact,
            VariantArg::EfPlotted => BoundVariant::EfPlotted,
            VariantArg::EfSimplified => BoundVariant::EfSimplified,
            VariantArg::Coarse => BoundVariant::Coarse,
            VariantArg::AfPrevious => BoundVariant::AfPrevious,
            VariantArg::EaUpper => BoundVariant::EaUpper,
        }
    }
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    bell_fidelity: f64,
    /// Largest block size (coarse variant).
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long, value_enum)]
    variant: VariantArg,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    bell_fidelity: f64,
    #[arg(long, default_value_t = 100)]
    n_max: usize,
    /// Emit only this bound as an `n,<variant>` table.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    block_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LowerArg {
    Previous,
    Improved,
    Exact,
}

impl From<LowerArg> for LowerVariant {
    fn from(v: LowerArg) -> Self {
        match v {
            LowerArg::Previous => LowerVariant::Previous,
            LowerArg::Improved => LowerVariant::Improved,
            LowerArg::Exact => LowerVariant::Exact,
        }
    }
}

impl LowerArg {
    fn tag(self) -> &'static str {
        match self {
            Self::Previous => "previous",
            Self::Improved => "improved",
            Self::Exact => "exact",
        }
    }
}

#[derive(Args, Debug)]
struct CrossoverArgs {
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    delta: f64,
    #[arg(long)]
    bell_fidelity: f64,
    #[arg(long, value_enum)]
    variant: LowerArg,
    /// Report the lower/upper ratio at this `n` instead of scanning.
    #[arg(long)]
    at_n: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlayerArg {
    Truth,
    Ignore,
    Ea,
    Af,
}

#[derive(Args, Debug)]
struct GameArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    eps0: f64,
    #[arg(long, value_enum)]
    player: PlayerArg,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    /// Bell samples (ea) or shots per group (af); defaults to the budget for accuracy eps0/2.
    #[arg(long)]
    shots: Option<u64>,
    /// Failure probability used for the default budget.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    delta: f64,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, value_enum, default_value_t = CoverArg::Greedy)]
    cover: CoverArg,
    /// Emit per-(a, s) counts instead of the summary row.
    #[arg(long)]
    breakdown: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Pointwise,
    Coarse,
}

#[derive(Args, Debug)]
struct TvdCheckArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    eps0: f64,
    /// `random:<count>` or a scheme file (one scheme or a JSON array of them).
    #[arg(long)]
    policies: String,
    #[arg(long, value_enum, default_value_t = KindArg::Pointwise)]
    kind: KindArg,
    /// Partition file for the coarse family; random per policy when absent.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Largest depth of random policies.
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    /// Largest block of random partitions.
    #[arg(long, default_value_t = 2)]
    max_block: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = json!({ "error": "usage", "message": e.to_string().trim_end() });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if cli.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.run.threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Transform(a) => cmd_transform(&cli.run, a),
        Command::Validate(a) => cmd_validate(&cli.run, a),
        Command::Simulate(a) => cmd_simulate(&cli.run, a),
        Command::Bounds(a) => cmd_bounds(&cli.run, a),
        Command::Curve(a) => cmd_curve(&cli.run, a),
        Command::Crossover(a) => cmd_crossover(&cli.run, a),
        Command::Game(a) => cmd_game(&cli.run, a),
        Command::TvdCheck(a) => cmd_tvd_check(&cli.run, a),
    }
}

fn invalid_channel(report: &ValidityReport) -> CliError {
    CliError::Validation {
        message: format!("channel fails {}", report.failures().join(", ")),
        details: serde_json::to_value(report).unwrap_or_default(),
    }
}

/// Loads a channel file, enforcing the qubit cap and validity.
fn load_valid_channel(cfg: &RunConfig, path: &Path, what: &'static str) -> CliResult<PauliChannel> {
    let file = ChannelFile::load(path)?;
    cfg.check_n(what, file.n, DEFAULT_PROTOCOL_MAX_N)?;
    let channel = file.to_channel()?;
    let report = channel.validate(cfg.tol);
    if !report.is_valid() {
        return Err(invalid_channel(&report));
    }
    Ok(channel)
}

fn write_json<T: Serialize>(cfg: &RunConfig, value: &T) -> CliResult<()> {
    let mut out = cfg.sink()?;
    serde_json::to_writer_pretty(&mut out, value).map_err(paulilearn::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn csv_writer(cfg: &RunConfig, headers: bool) -> CliResult<csv::Writer<Box<dyn Write>>> {
    Ok(csv::WriterBuilder::new().has_headers(headers).from_writer(cfg.sink()?))
}

fn cmd_transform(cfg: &RunConfig, args: &TransformArgs) -> CliResult<()> {
    let file = ChannelFile::load(&args.input)?;
    cfg.check_n("transform", file.n, paulilearn::channel::DEFAULT_MAX_CHANNEL_QUBITS)?;
    let channel = file.to_channel()?;
    let report = channel.validate(cfg.tol);
    write_json(cfg, &ChannelFile::from_channel(&channel, args.to.into()))?;
    if !report.is_valid() {
        return Err(invalid_channel(&report));
    }
    eprintln!("{}", json!({ "validity": report }));
    Ok(())
}

fn cmd_validate(cfg: &RunConfig, args: &ValidateArgs) -> CliResult<()> {
    if let Some(path) = &args.channel {
        let file = ChannelFile::load(path)?;
        let report = file.to_channel()?.validate(cfg.tol);
        write_json(cfg, &json!({ "kind": "channel", "n": file.n, "valid": report.is_valid(), "report": report }))?;
        if !report.is_valid() {
            return Err(invalid_channel(&report));
        }
    } else if let Some(path) = &args.partition {
        let p = PartitionFile::load(path)?;
        write_json(
            cfg,
            &json!({ "kind": "partition", "n": p.n(), "valid": true, "blocks": p.blocks().len(), "max_block_size": p.max_block_size() }),
        )?;
    } else if let Some(path) = &args.scheme {
        let policy = SchemeFile::load(path)?;
        write_json(
            cfg,
            &json!({
                "kind": "scheme",
                "n": policy.n(),
                "valid": true,
                "depth": policy.depth(),
                "leaves": policy.leaf_count(),
                "n_meas": count_measurements(&policy),
            }),
        )?;
    }
    Ok(())
}

fn label(n: usize, index: usize) -> CliResult<String> {
    Ok(PauliString::from_index(n, index)?.to_string())
}

fn cmd_simulate(cfg: &RunConfig, args: &SimulateArgs) -> CliResult<()> {
    let channel = load_valid_channel(cfg, &args.channel, "simulate")?;
    let n = channel.n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let budget = |per_target: fn(f64, f64) -> paulilearn::Result<u64>| -> CliResult<u64> {
        match (args.shots, args.eps, args.delta) {
            (Some(s), _, _) => Ok(s),
            (None, Some(e), Some(d)) => Ok(per_target(e, d)?),
            _ => Err(CliError::Usage("give --shots or both --eps and --delta".into())),
        }
    };
    if !matches!(args.protocol, ProtocolArg::Ea) && args.noise.is_set() {
        return Err(CliError::Usage("Bell-pair noise flags apply to the ea protocol only".into()));
    }
    let record = |protocol: &str, target: String, shots: u64, estimate: f64, truth: f64| EstimateRecord {
        protocol: protocol.to_string(),
        n,
        target,
        shots,
        estimate,
        truth: Some(truth),
        error: Some(estimate - truth),
        seed: cfg.seed,
    };
    let mut rows = Vec::new();
    match args.protocol {
        ProtocolArg::Ea => {
            let noise = args.noise.model()?;
            let shots = match (args.shots, args.eps, args.delta) {
                (Some(s), _, _) => s,
                (None, Some(e), Some(d)) => ea_sample_count(e, d, n, noise.p())?,
                _ => return Err(CliError::Usage("give --shots or both --eps and --delta".into())),
            };
            let samples = BellSampler::new(&channel, noise)?.sample_many(shots as usize, &mut rng);
            for b in 1..channel.len() {
                let est = ea_estimate(&samples, b, noise)?;
                rows.push(record("ea", label(n, b)?, shots, est, channel.eigenvalue(b)));
            }
        }
        ProtocolArg::Af => {
            let per_group = budget(af_shots_per_group)?;
            let cover = commuting_cover(n, args.cover.into(), cfg.seed)?;
            let af = af_estimate_all_with_shots(&channel, per_group, &cover, &mut rng)?;
            for b in 1..channel.len() {
                rows.push(record("af", label(n, b)?, af.total_shots, af.estimates[b], channel.eigenvalue(b)));
            }
        }
        ProtocolArg::Coarse => {
            let path = args
                .partition
                .as_ref()
                .ok_or_else(|| CliError::Usage("the coarse protocol needs --partition".into()))?;
            let partition = PartitionFile::load(path)?;
            let per_group = budget(af_shots_per_group)?;
            let cover = commuting_cover(n, args.cover.into(), cfg.seed)?;
            let total = per_group * cover.len() as u64;
            let estimates = coarse_estimate(&channel, &partition, per_group, &cover, &mut rng)?;
            for (block, est) in partition.blocks().iter().zip(estimates) {
                let target = block.iter().map(|&b| label(n, b)).collect::<CliResult<Vec<_>>>()?.join("+");
                rows.push(record("coarse", target, total, est, channel.geometric_mean_fidelity(block)?));
            }
        }
    }
    let mut w = csv_writer(cfg, true)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bounds(cfg: &RunConfig, args: &BoundsArgs) -> CliResult<()> {
    let query = BoundQuery {
        n: args.n,
        eps: args.eps,
        delta: args.delta,
        fidelity: Some(args.bell_fidelity),
        block_size: args.block_size,
        variant: args.variant.into(),
    };
    let result = bounds::evaluate(&query)?;
    let mut out = cfg.sink()?;
    writeln!(out, "{}", result.value)?;
    out.flush()?;
    Ok(())
}

fn cmd_curve(cfg: &RunConfig, args: &CurveArgs) -> CliResult<()> {
    match args.variant {
        None => {
            let rows = bounds::curve(args.n_max, args.eps, args.delta, args.bell_fidelity)?;
            let mut w = csv_writer(cfg, true)?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Some(v) => {
            let variant: BoundVariant = v.into();
            let mut w = csv_writer(cfg, false)?;
            w.write_record(["n", variant.tag()])?;
            for n in 1..=args.n_max {
                let query = BoundQuery {
                    n,
                    eps: args.eps,
                    delta: args.delta,
                    fidelity: Some(args.bell_fidelity),
                    block_size: args.block_size,
                    variant,
                };
                let value = bounds::evaluate(&query)?.value;
                if variant.is_upper() && value.is_finite() && value < 9.007_199_254_740_992e15 {
                    w.serialize((n, value as u64))?;
                } else {
                    w.serialize((n, value))?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CrossoverRow {
    variant: &'static str,
    bell_fidelity: f64,
    eps: f64,
    delta: f64,
    n_cross: Option<usize>,
    lower_rate: f64,
    upper_rate: f64,
    scanned_to: usize,
}

#[derive(Serialize)]
struct RatioRow {
    variant: &'static str,
    bell_fidelity: f64,
    eps: f64,
    delta: f64,
    n: usize,
    ratio: f64,
}

fn cmd_crossover(cfg: &RunConfig, args: &CrossoverArgs) -> CliResult<()> {
    let mut w = csv_writer(cfg, true)?;
    let lower: LowerVariant = args.variant.into();
    match args.at_n {
        Some(n) => w.serialize(RatioRow {
            variant: args.variant.tag(),
            bell_fidelity: args.bell_fidelity,
            eps: args.eps,
            delta: args.delta,
            n,
            ratio: bounds::advantage_ratio(n, args.bell_fidelity, args.eps, args.delta, lower)?,
        })?,
        None => {
            let r = bounds::crossover(args.bell_fidelity, args.eps, args.delta, lower)?;
            w.serialize(CrossoverRow {
                variant: args.variant.tag(),
                bell_fidelity: args.bell_fidelity,
                eps: args.eps,
                delta: args.delta,
                n_cross: r.n_cross,
                lower_rate: r.lower_rate,
                upper_rate: r.upper_rate,
                scanned_to: r.scanned_to,
            })?
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GameRow<'a> {
    player: &'a str,
    n: usize,
    eps0: f64,
    trials: u64,
    wins: u64,
    success_rate: f64,
    sigma: f64,
    shots: Option<u64>,
    seed: u64,
}

#[derive(Serialize)]
struct GameCellRow {
    a: String,
    s: i8,
    trials: u64,
    wins: u64,
    seed: u64,
}

fn cmd_game(cfg: &RunConfig, args: &GameArgs) -> CliResult<()> {
    cfg.check_n("game", args.n, DEFAULT_PROTOCOL_MAX_N)?;
    if !matches!(args.player, PlayerArg::Ea) && args.noise.is_set() {
        return Err(CliError::Usage("Bell-pair noise flags apply to the ea player only".into()));
    }
    let (player, shots): (Box<dyn Player>, Option<u64>) = match args.player {
        PlayerArg::Truth => (Box::new(TruthOracle), None),
        PlayerArg::Ignore => (Box::new(IgnoreSamples), None),
        PlayerArg::Ea => {
            let noise = args.noise.model()?;
            let shots = match args.shots {
                Some(s) => s,
                None => ea_sample_count(args.eps0 / 2.0, args.delta, args.n, noise.p())?,
            };
            (Box::new(EaPlayer { shots: shots as usize, noise }), Some(shots))
        }
        PlayerArg::Af => {
            let shots = match args.shots {
                Some(s) => s,
                None => af_shots_per_group(args.eps0 / 2.0, args.delta)?,
            };
            let cover = commuting_cover(args.n, args.cover.into(), cfg.seed)?;
            (Box::new(AfPlayer { cover, shots_per_group: shots }), Some(shots))
        }
    };
    let report = lecam_game(args.n, args.eps0, player.as_ref(), args.trials, cfg.seed)?;
    let mut w = csv_writer(cfg, true)?;
    if args.breakdown {
        for cell in &report.breakdown {
            w.serialize(GameCellRow {
                a: label(args.n, cell.a)?,
                s: cell.s,
                trials: cell.trials,
                wins: cell.wins,
                seed: cfg.seed,
            })?;
        }
    } else {
        w.serialize(GameRow {
            player: &report.player,
            n: report.n,
            eps0: report.eps0,
            trials: report.trials,
            wins: report.wins,
            success_rate: report.success_rate,
            sigma: report.sigma,
            shots,
            seed: cfg.seed,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TvdRow {
    policy: usize,
    lhs: f64,
    rhs: f64,
    slack: f64,
    holds: bool,
    n_meas: usize,
    min_step_factor: f64,
    seed: u64,
}

/// Where the policies of a `tvd-check` run come from.
enum PolicySource {
    Random(usize),
    Files(Vec<SchemeFile>),
}

impl PolicySource {
    fn parse(arg: &str) -> CliResult<Self> {
        if let Some(count) = arg.strip_prefix("random:") {
            let count = count
                .parse()
                .map_err(|_| CliError::Usage(format!("bad policy count in {arg:?}")))?;
            return Ok(Self::Random(count));
        }
        let text = std::fs::read_to_string(arg)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(paulilearn::Error::from)?;
        let files = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|f| vec![f])
        }
        .map_err(paulilearn::Error::from)?;
        Ok(Self::Files(files))
    }

    fn len(&self) -> usize {
        match self {
            Self::Random(c) => *c,
            Self::Files(f) => f.len(),
        }
    }
}

fn cmd_tvd_check(cfg: &RunConfig, args: &TvdCheckArgs) -> CliResult<()> {
    cfg.check_n("tvd-check", args.n, paulilearn::scheme::MAX_SCHEME_QUBITS)?;
    if args.max_depth == 0 {
        return Err(CliError::Usage("--max-depth must be at least 1".into()));
    }
    let source = PolicySource::parse(&args.policies)?;
    let fixed_partition: Option<Partition> = args.partition.as_deref().map(PartitionFile::load).transpose()?;
    let rows: Vec<TvdRow> = (0..source.len())
        .into_par_iter()
        .map(|i| -> CliResult<TvdRow> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let policy: SchemePolicy = match &source {
                PolicySource::Random(_) => {
                    let depth = rand::Rng::random_range(&mut rng, 1..=args.max_depth);
                    random_policy(args.n, depth, &mut rng)?
                }
                PolicySource::Files(files) => files[i].to_policy()?,
            };
            let leaves = policy.leaf_count();
            if leaves > cfg.max_leaves {
                return Err(paulilearn::Error::TreeTooLarge {
                    estimate: leaves,
                    cap: cfg.max_leaves,
                }
                .into());
            }
            let family = match args.kind {
                KindArg::Pointwise => HypothesisFamily::pointwise(args.n, args.eps0)?,
                KindArg::Coarse => {
                    let partition = match &fixed_partition {
                        Some(p) => p.clone(),
                        None => random_partition(args.n, args.max_block, &mut rng)?,
                    };
                    HypothesisFamily::coarse(partition, args.eps0)?
                }
            };
            let r = certify_inequality(&policy, &family)?;
            Ok(TvdRow {
                policy: i,
                lhs: r.lhs,
                rhs: r.rhs,
                slack: r.slack,
                holds: r.holds,
                n_meas: r.n_meas,
                min_step_factor: r.min_step_factor,
                seed: cfg.seed,
            })
        })
        .collect::<CliResult<_>>()?;
    let mut w = csv_writer(cfg, true)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    for r in rows.iter().filter(|r| r.min_step_factor < paulilearn::tvd::SMALL_FACTOR) {
        eprintln!("{}", json!({ "warning": "small_step_factor", "policy": r.policy, "min_step_factor": r.min_step_factor }));
    }
    let failed: Vec<usize> = rows.iter().filter(|r| !r.holds).map(|r| r.policy).collect();
    if !failed.is_empty() {
        return Err(CliError::Validation {
            message: format!("inequality violated by {} policies", failed.len()),
            details: json!({ "policies": failed }),
        });
    }
    Ok(())
}

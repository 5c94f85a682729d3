//! `lpo` — command-line laboratory for margin-based preference losses.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lpo_cli::checkpoint::{self, Checkpoint};
use lpo_cli::kvconfig::{resolve, resolve_required, KvConfig};
use lpo_cli::manifest::ManifestBuilder;
use lpo_cli::{csvio, jsonl, report, CliError};
use lpo_core::dynamics::{self, SimConfig, DEFAULT_EPS_SLOPE};
use lpo_core::fixtures;
use lpo_core::gradcheck::{run_gradcheck, CheckError, GradcheckConfig};
use lpo_core::losses::{LossKind, LossParams, SteWeighting};
use lpo_core::pairs::{
    build_lppc, build_perturbed, triple_candidates, PairError, PerturbationConfig,
};
use lpo_core::policy::{Policy, TabularPolicy, Vocab};
use lpo_core::trainer::{self, TrainConfig, TrainError};

#[derive(Parser)]
#[command(
    name = "lpo",
    version,
    about = "Desk-scale laboratory for DPO/LPO preference losses: gradient checks, margin dynamics, pair construction, and toy training runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Integrate gradient descent on (x1, x2) under one loss.
    Simulate(SimulateArgs),
    /// Run one simulation per r2 value and summarize.
    Sweep(SweepArgs),
    /// Construct preference pairs (model-sampled or perturbation-based).
    BuildPairs(BuildPairsArgs),
    /// Train a toy policy on a pair dataset.
    Train(TrainArgs),
    /// Render a Markdown comparison report over finished runs.
    Report(ReportArgs),
}

/// Loss hyperparameter flags shared by several commands.
#[derive(Args, Debug, Clone)]
struct LossFlags {
    /// Loss to use: dpo, lpo, or lpo_ste.
    #[arg(long)]
    loss: Option<String>,
    /// Offset/temperature β (> 0).
    #[arg(long)]
    beta: Option<f64>,
    /// Positive-constraint weight λ (≥ 0).
    #[arg(long)]
    lambda: Option<f64>,
    /// Chosen-path coefficient r1 (> 0).
    #[arg(long)]
    r1: Option<f64>,
    /// Rejected-path coefficient r2 (> 0).
    #[arg(long)]
    r2: Option<f64>,
    /// Straight-through weighting: quadratic or linear.
    #[arg(long)]
    ste_weighting: Option<String>,
}

struct ResolvedLoss {
    kind: LossKind,
    params: LossParams,
    weighting: SteWeighting,
}

impl LossFlags {
    /// Flags > config file > per-loss defaults.
    fn resolve(&self, cfg: &KvConfig, default_kind: LossKind) -> Result<ResolvedLoss, CliError> {
        let kind_name = self
            .loss
            .clone()
            .or_else(|| cfg.get("loss").map(str::to_string));
        let kind = match kind_name {
            None => default_kind,
            Some(name) => LossKind::parse(&name)
                .ok_or_else(|| CliError::usage(format!("unknown loss `{name}`")))?,
        };
        let defaults = match kind {
            LossKind::Dpo => LossParams::dpo_baseline(),
            _ => LossParams::default(),
        };
        let params = LossParams {
            beta: resolve(self.beta, cfg.get_parsed("beta")?, defaults.beta),
            lambda: resolve(self.lambda, cfg.get_parsed("lambda")?, defaults.lambda),
            r1: resolve(self.r1, cfg.get_parsed("r1")?, defaults.r1),
            r2: resolve(self.r2, cfg.get_parsed("r2")?, defaults.r2),
        };
        params
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        let weighting_name = self
            .ste_weighting
            .clone()
            .or_else(|| cfg.get("ste_weighting").map(str::to_string));
        let weighting = match weighting_name {
            None => SteWeighting::Quadratic,
            Some(name) => SteWeighting::parse(&name)
                .ok_or_else(|| CliError::usage(format!("unknown ste weighting `{name}`")))?,
        };
        Ok(ResolvedLoss {
            kind,
            params,
            weighting,
        })
    }
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    loss: LossFlags,
    /// Check all three losses regardless of --loss.
    #[arg(long, default_value_t = false)]
    all: bool,
    /// Off-kink points per loss.
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Fixed finite-difference step (default: per-point automatic).
    #[arg(long)]
    fd_step: Option<f64>,
    /// Write the per-point report table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Flat key-value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    loss: LossFlags,
    #[arg(long)]
    x1: Option<f64>,
    #[arg(long)]
    x2: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Slope dead-band for trend classification.
    #[arg(long)]
    eps_slope: Option<f64>,
    /// Trace CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    loss: LossFlags,
    /// Comma-separated r2 values.
    #[arg(long)]
    r2_values: Option<String>,
    #[arg(long)]
    x1: Option<f64>,
    #[arg(long)]
    x2: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    eps_slope: Option<f64>,
    /// Output directory for traces and summary.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Args, Debug)]
struct BuildPairsArgs {
    /// lppc, triple, or perturb.
    #[arg(long)]
    method: String,
    /// Corpus JSONL with {"prompt": […], "ground_truth": […]} records.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Built-in data: corpus10k (perturb) or lppc-demo (model methods).
    #[arg(long)]
    fixture: Option<String>,
    /// Policy checkpoint for the model-sampled methods.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Vocabulary size when no policy supplies one (perturb).
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Per-position edit probability η for perturb.
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Comma-separated insertion,deletion,repetition weights.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    loss: LossFlags,
    /// Pair dataset (JSONL) to train on.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Policy checkpoint to start from.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Reference checkpoint (defaults to the starting policy).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Built-in setup: case2 (policy + pairs + defaults).
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Train once per r2 in this comma-separated list.
    #[arg(long)]
    r2_sweep: Option<String>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Comma-separated run directories.
    #[arg(long)]
    runs: String,
    /// Report output path (Markdown).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::BuildPairs(args) => cmd_build_pairs(args),
        Command::Train(args) => cmd_train(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    if args.tol <= 0.0 || args.tol.is_nan() {
        return Err(CliError::usage("tolerance must be > 0"));
    }
    let empty = KvConfig::default();
    let resolved = args.loss.resolve(&empty, LossKind::Lpo)?;
    let kinds: Vec<LossKind> = if args.all || args.loss.loss.is_none() {
        vec![LossKind::Dpo, LossKind::Lpo, LossKind::LpoSte]
    } else {
        vec![resolved.kind]
    };

    let mut all_pass = true;
    let mut csv_blocks: Vec<Vec<u8>> = Vec::new();
    for kind in &kinds {
        let cfg = GradcheckConfig {
            loss: *kind,
            params: resolved.params,
            ste_weighting: resolved.weighting,
            points: args.points,
            seed: args.seed,
            tolerance: args.tol,
            step: args.fd_step,
        };
        let summary = run_gradcheck(&cfg).map_err(|e| match e {
            CheckError::BadConfig(_) | CheckError::BadStep(_) => CliError::usage(e.to_string()),
            CheckError::NonFinite { .. } => CliError::runtime(e.to_string()),
        })?;
        let worst = summary.worst_report().expect("at least one point");
        let worst_rel = worst.x1.rel_err.max(worst.x2.rel_err);
        println!(
            "gradcheck {kind}: {} points, worst rel_err {worst_rel:.3e} -> {}",
            summary.reports.len(),
            if summary.passed { "PASS" } else { "FAIL" }
        );
        if !summary.passed {
            all_pass = false;
            println!(
                "  worst offender at (x1={}, x2={}): analytic ({}, {}), numeric ({}, {})",
                worst.point.x1,
                worst.point.x2,
                worst.x1.analytic,
                worst.x2.analytic,
                worst.x1.numeric,
                worst.x2.numeric
            );
        }
        if args.out.is_some() {
            csv_blocks.push(csvio::gradcheck_csv(
                *kind,
                &resolved.params,
                &summary.reports,
            )?);
        }
    }

    if let Some(out) = &args.out {
        let mut bytes: Vec<u8> = Vec::new();
        for (i, block) in csv_blocks.iter().enumerate() {
            if i == 0 {
                bytes.extend_from_slice(block);
            } else {
                // Skip the duplicate header line of subsequent blocks.
                if let Some(pos) = block.iter().position(|&b| b == b'\n') {
                    bytes.extend_from_slice(&block[pos + 1..]);
                }
            }
        }
        std::fs::write(out, bytes)?;
        let mut manifest = ManifestBuilder::new(
            "gradcheck",
            serde_json::json!({
                "losses": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
                "params": resolved.params,
                "points": args.points,
                "tol": args.tol,
            }),
            args.seed,
        );
        manifest.output(out)?;
        manifest.write(&manifest_path_for(out))?;
    }

    if all_pass {
        Ok(())
    } else {
        Err(CliError::runtime("gradient check failed"))
    }
}

const SIM_KEYS: &[&str] = &[
    "loss",
    "beta",
    "lambda",
    "r1",
    "r2",
    "ste_weighting",
    "x1",
    "x2",
    "step_size",
    "steps",
    "record_every",
    "eps_slope",
    "out",
    "out_dir",
    "r2_values",
];

#[allow(clippy::too_many_arguments)]
fn sim_config_from(
    loss: &LossFlags,
    cfg: &KvConfig,
    default_kind: LossKind,
    x1: Option<f64>,
    x2: Option<f64>,
    step_size: Option<f64>,
    steps: Option<usize>,
    record_every: Option<usize>,
) -> Result<SimConfig, CliError> {
    let resolved = loss.resolve(cfg, default_kind)?;
    let dflt = SimConfig::default();
    Ok(SimConfig {
        loss: resolved.kind,
        params: resolved.params,
        ste_weighting: resolved.weighting,
        x1_init: resolve(x1, cfg.get_parsed("x1")?, dflt.x1_init),
        x2_init: resolve(x2, cfg.get_parsed("x2")?, dflt.x2_init),
        step_size: resolve(step_size, cfg.get_parsed("step_size")?, dflt.step_size),
        steps: resolve(steps, cfg.get_parsed("steps")?, dflt.steps),
        record_every: resolve(
            record_every,
            cfg.get_parsed("record_every")?,
            dflt.record_every,
        ),
    })
}

fn map_sim_error(e: dynamics::SimError) -> CliError {
    match e {
        dynamics::SimError::BadConfig(_) | dynamics::SimError::Loss(_) => {
            CliError::usage(e.to_string())
        }
        _ => CliError::runtime(e.to_string()),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => KvConfig::load(path)?,
        None => KvConfig::default(),
    };
    cfg.check_keys(SIM_KEYS)?;
    let sim = sim_config_from(
        &args.loss,
        &cfg,
        LossKind::Lpo,
        args.x1,
        args.x2,
        args.step_size,
        args.steps,
        args.record_every,
    )?;
    let out: PathBuf = resolve_required(args.out, cfg.get("out").map(PathBuf::from), "out")?;
    let eps = resolve(
        args.eps_slope,
        cfg.get_parsed("eps_slope")?,
        DEFAULT_EPS_SLOPE,
    );

    let trace = dynamics::simulate(&sim).map_err(map_sim_error)?;
    csvio::write_trace(&out, &trace)?;
    let terminal = trace.terminal();
    match dynamics::classify_trend(&trace, eps) {
        Ok(case) => println!("trend: {case}"),
        Err(_) => println!("trend: unclassified (fewer than 8 recorded points)"),
    }
    println!(
        "terminal: step {} x1 {} x2 {} loss {}",
        terminal.step, terminal.x1, terminal.x2, terminal.loss
    );
    println!("trace written to {}", out.display());

    let mut manifest = ManifestBuilder::new(
        "simulate",
        serde_json::json!({ "sim": sim, "eps_slope": eps }),
        0,
    );
    manifest.output(&out)?;
    manifest.write(&manifest_path_for(&out))?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => KvConfig::load(path)?,
        None => KvConfig::default(),
    };
    cfg.check_keys(SIM_KEYS)?;
    let base = sim_config_from(
        &args.loss,
        &cfg,
        LossKind::LpoSte,
        args.x1,
        args.x2,
        args.step_size,
        args.steps,
        args.record_every,
    )?;
    let out_dir: PathBuf = resolve_required(
        args.out_dir,
        cfg.get("out_dir").map(PathBuf::from),
        "out_dir",
    )?;
    let eps = resolve(
        args.eps_slope,
        cfg.get_parsed("eps_slope")?,
        DEFAULT_EPS_SLOPE,
    );
    let values_text = resolve(
        args.r2_values,
        cfg.get("r2_values").map(str::to_string),
        String::from("0.1,0.4,0.8,1.0"),
    );
    let r2_values = parse_f64_list(&values_text)?;

    prepare_out_dir(&out_dir, args.force, "summary.csv")?;
    let entries = dynamics::r2_sweep(&base, &r2_values).map_err(map_sim_error)?;

    let mut manifest = ManifestBuilder::new(
        "sweep",
        serde_json::json!({ "base": base, "r2_values": r2_values, "eps_slope": eps }),
        0,
    );
    let mut rows = Vec::with_capacity(entries.len());
    for entry in &entries {
        let path = out_dir.join(format!("trace_r2_{}.csv", entry.r2));
        csvio::write_trace(&path, &entry.trace)?;
        manifest.output(&path)?;
        let trend = dynamics::classify_trend(&entry.trace, eps)
            .map(|c| c.to_string())
            .unwrap_or_else(|_| "unclassified".into());
        let row = entry.row();
        println!(
            "r2 {}: trend {trend}, terminal x2 {}, slope_x1 {}",
            entry.r2, row.terminal_x2, row.slope_x1
        );
        rows.push(row);
    }
    let summary = out_dir.join("summary.csv");
    csvio::write_sweep(&summary, &rows)?;
    manifest.output(&summary)?;
    manifest.write(&out_dir.join("manifest.json"))?;
    println!("sweep written to {}", out_dir.display());
    Ok(())
}

fn cmd_build_pairs(args: BuildPairsArgs) -> Result<(), CliError> {
    let mut manifest_inputs: Vec<PathBuf> = Vec::new();

    // Resolve corpus and (for model methods) the sampling policy.
    let fixture = args.fixture.as_deref();
    let (dataset, fixture_policy): (Vec<_>, Option<TabularPolicy>) = match (fixture, &args.input) {
        (Some("corpus10k"), None) => (fixtures::demo_corpus_default(), None),
        (Some("lppc-demo"), None) => {
            let (policy, data) = fixtures::lppc_demo();
            (data, Some(policy))
        }
        (Some(other), None) => {
            return Err(CliError::usage(format!(
                "unknown fixture `{other}` (expected corpus10k or lppc-demo)"
            )))
        }
        (None, Some(path)) => {
            if !path.exists() {
                return Err(CliError::usage(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
            manifest_inputs.push(path.clone());
            (jsonl::read_dataset(path)?, None)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "--input and --fixture are mutually exclusive",
            ))
        }
        (None, None) => return Err(CliError::usage("missing config key: input (or --fixture)")),
    };

    let loaded_policy = match &args.policy {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::usage(format!(
                    "policy checkpoint {} does not exist",
                    path.display()
                )));
            }
            manifest_inputs.push(path.clone());
            Some(checkpoint::load(path)?)
        }
        None => None,
    };

    let map_pair_error = |e: PairError| match e {
        PairError::BadConfig(_) => CliError::usage(e.to_string()),
        _ => CliError::runtime(e.to_string()),
    };

    let (pairs, stats) = match args.method.as_str() {
        "lppc" | "triple" => {
            let lppc = args.method == "lppc";
            let run = |p: &dyn Policy| {
                if lppc {
                    build_lppc(&dataset, &p, args.seed)
                } else {
                    triple_candidates(&dataset, &p, args.seed)
                }
            };
            let result = match (&loaded_policy, &fixture_policy) {
                (Some(Checkpoint::Tabular(p)), _) => run(p),
                (Some(Checkpoint::Mlp(p)), _) => run(p),
                (None, Some(p)) => run(p),
                (None, None) => {
                    return Err(CliError::usage(
                        "model-sampled methods need --policy or --fixture lppc-demo",
                    ))
                }
            };
            result.map_err(map_pair_error)?
        }
        "perturb" => {
            let vocab: Vocab = match (&loaded_policy, &fixture_policy, args.vocab_size) {
                (Some(c), _, _) => c.vocab().clone(),
                (None, Some(p), _) => p.vocab().clone(),
                (None, None, Some(v)) => {
                    if v < 2 {
                        return Err(CliError::usage("vocab size must be >= 2"));
                    }
                    Vocab::with_size(v)
                }
                (None, None, None) if fixture == Some("corpus10k") => fixtures::demo_vocab(),
                (None, None, None) => {
                    return Err(CliError::usage(
                        "perturb needs --vocab-size, --policy, or --fixture corpus10k",
                    ))
                }
            };
            let weights = match &args.weights {
                None => [1.0 / 3.0; 3],
                Some(text) => {
                    let list = parse_f64_list(text)?;
                    if list.len() != 3 {
                        return Err(CliError::usage(
                            "weights must be three comma-separated numbers",
                        ));
                    }
                    [list[0], list[1], list[2]]
                }
            };
            let cfg = PerturbationConfig {
                eta: args.eta,
                weights,
                seed: args.seed,
            };
            build_perturbed(&dataset, &vocab, &cfg).map_err(map_pair_error)?
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown method `{other}` (expected lppc, triple, or perturb)"
            )))
        }
    };

    debug_assert!(pairs.iter().all(|p| p.chosen != p.rejected));
    jsonl::write_pairs(&args.out, &pairs)?;
    println!(
        "pairs: {} emitted, {} dropped identical, {} dropped truncated, {} duplicate, {} prompts skipped",
        stats.emitted,
        stats.dropped_identical,
        stats.dropped_truncated,
        stats.dropped_duplicate,
        stats.prompts_skipped
    );
    if args.method == "perturb" {
        println!("mean edits per sentence: {:.4}", stats.mean_edits());
    }
    println!("written to {}", args.out.display());

    let mut manifest = ManifestBuilder::new(
        "build-pairs",
        serde_json::json!({
            "method": args.method,
            "fixture": args.fixture,
            "eta": args.eta,
            "stats": stats,
        }),
        args.seed,
    );
    for input in &manifest_inputs {
        manifest.input(input)?;
    }
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "loss",
    "beta",
    "lambda",
    "r1",
    "r2",
    "ste_weighting",
    "pairs",
    "policy",
    "reference",
    "fixture",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "eval_every",
    "r2_sweep",
    "out_dir",
];

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => KvConfig::load(path)?,
        None => KvConfig::default(),
    };
    cfg.check_keys(TRAIN_KEYS)?;

    let out_dir: PathBuf = resolve_required(
        args.out_dir,
        cfg.get("out_dir").map(PathBuf::from),
        "out_dir",
    )?;
    let fixture = args
        .fixture
        .clone()
        .or_else(|| cfg.get("fixture").map(str::to_string));
    let pairs_path = args
        .pairs
        .clone()
        .or_else(|| cfg.get("pairs").map(PathBuf::from));

    let mut manifest_inputs: Vec<PathBuf> = Vec::new();

    // Assemble (policy + reference of matching kind, pairs, base config).
    let (policies, pairs, base_cfg) = match (fixture.as_deref(), pairs_path) {
        (Some("case2"), None) => {
            let f = fixtures::case2_fixture();
            let resolved = args.loss.resolve(&cfg, LossKind::Lpo)?;
            let base = match resolved.kind {
                LossKind::Dpo => f.dpo_config.clone(),
                _ => f.lpo_config.clone(),
            };
            let base = TrainConfig {
                loss: resolved.kind,
                params: override_params(&args.loss, &cfg, base.params)?,
                ste_weighting: resolved.weighting,
                ..base
            };
            (PolicyPair::Tabular(f.policy, f.reference), f.pairs, base)
        }
        (Some(other), None) => {
            return Err(CliError::usage(format!(
                "unknown fixture `{other}` (expected case2)"
            )))
        }
        (None, Some(path)) => {
            if !path.exists() {
                return Err(CliError::usage(format!(
                    "pairs file {} does not exist",
                    path.display()
                )));
            }
            manifest_inputs.push(path.clone());
            let pairs = jsonl::read_pairs(&path)?;
            let policy_path = args
                .policy
                .clone()
                .or_else(|| cfg.get("policy").map(PathBuf::from))
                .ok_or_else(|| CliError::usage("missing config key: policy"))?;
            if !policy_path.exists() {
                return Err(CliError::usage(format!(
                    "policy checkpoint {} does not exist",
                    policy_path.display()
                )));
            }
            manifest_inputs.push(policy_path.clone());
            let policy = checkpoint::load(&policy_path)?;
            let reference = match args
                .reference
                .clone()
                .or_else(|| cfg.get("reference").map(PathBuf::from))
            {
                Some(ref_path) => {
                    manifest_inputs.push(ref_path.clone());
                    checkpoint::load(&ref_path)?
                }
                None => policy.clone(),
            };
            let policies = match (policy, reference) {
                (Checkpoint::Tabular(p), Checkpoint::Tabular(r)) => PolicyPair::Tabular(p, r),
                (Checkpoint::Mlp(p), Checkpoint::Mlp(r)) => PolicyPair::Mlp(p, r),
                _ => {
                    return Err(CliError::usage(
                        "policy and reference checkpoints must be the same kind",
                    ))
                }
            };
            let resolved = args.loss.resolve(&cfg, LossKind::Lpo)?;
            let dflt = TrainConfig::default();
            let base = TrainConfig {
                loss: resolved.kind,
                params: resolved.params,
                ste_weighting: resolved.weighting,
                ..dflt
            };
            (policies, pairs, base)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "--pairs and --fixture are mutually exclusive",
            ))
        }
        (None, None) => return Err(CliError::usage("missing config key: pairs (or --fixture)")),
    };

    let train_cfg = TrainConfig {
        lr: resolve(args.lr, cfg.get_parsed("lr")?, base_cfg.lr),
        batch_size: resolve(
            args.batch_size,
            cfg.get_parsed("batch_size")?,
            base_cfg.batch_size,
        ),
        epochs: resolve(args.epochs, cfg.get_parsed("epochs")?, base_cfg.epochs),
        seed: resolve(args.seed, cfg.get_parsed("seed")?, base_cfg.seed),
        eval_every: resolve(
            args.eval_every,
            cfg.get_parsed("eval_every")?,
            base_cfg.eval_every,
        ),
        ..base_cfg
    };

    prepare_out_dir(&out_dir, args.force, "manifest.json")?;
    let mut manifest = ManifestBuilder::new(
        "train",
        serde_json::json!({ "train": train_cfg, "fixture": fixture }),
        train_cfg.seed,
    );
    for input in &manifest_inputs {
        manifest.input(input)?;
    }

    let r2_sweep = args
        .r2_sweep
        .clone()
        .or_else(|| cfg.get("r2_sweep").map(str::to_string));
    let r2_values = r2_sweep.map(|text| parse_f64_list(&text)).transpose()?;

    match policies {
        PolicyPair::Tabular(policy, reference) => run_training(
            policy,
            &reference,
            &pairs,
            &train_cfg,
            r2_values.as_deref(),
            &out_dir,
            &mut manifest,
            Checkpoint::Tabular,
        )?,
        PolicyPair::Mlp(policy, reference) => run_training(
            policy,
            &reference,
            &pairs,
            &train_cfg,
            r2_values.as_deref(),
            &out_dir,
            &mut manifest,
            Checkpoint::Mlp,
        )?,
    }

    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

/// A loaded (policy, frozen reference) pair of matching kind.
enum PolicyPair {
    Tabular(
        lpo_core::policy::TabularPolicy,
        lpo_core::policy::TabularPolicy,
    ),
    Mlp(lpo_core::policy::MlpPolicy, lpo_core::policy::MlpPolicy),
}

#[allow(clippy::too_many_arguments)]
fn run_training<P>(
    mut policy: P,
    reference: &P,
    pairs: &[lpo_core::pairs::PreferencePair],
    train_cfg: &TrainConfig,
    r2_values: Option<&[f64]>,
    out_dir: &Path,
    manifest: &mut ManifestBuilder,
    to_checkpoint: impl Fn(P) -> Checkpoint,
) -> Result<(), CliError>
where
    P: lpo_core::policy::DiffPolicy + Clone,
{
    let map_train_error = |e: TrainError| match e {
        TrainError::BadConfig(_) | TrainError::Loss(_) => CliError::usage(e.to_string()),
        _ => CliError::runtime(e.to_string()),
    };

    match r2_values {
        None => {
            let result = trainer::train(&mut policy, reference, pairs, train_cfg)
                .map_err(map_train_error)?;
            for m in &result.metrics {
                println!(
                    "epoch {}: mean_x1 {:+.5} mean_x2 {:+.5} loss {:.5} pref_acc {:.3} chosen_delta {:+.5}",
                    m.epoch, m.mean_x1, m.mean_x2, m.mean_loss, m.pref_accuracy, m.chosen_logprob_delta
                );
            }
            let metrics_path = out_dir.join("metrics.csv");
            csvio::write_metrics(&metrics_path, &result.metrics)?;
            manifest.output(&metrics_path)?;
            let trace_path = out_dir.join("trace.csv");
            csvio::write_trace(&trace_path, &result.trace)?;
            manifest.output(&trace_path)?;
            let ckpt_path = out_dir.join("policy.ckpt");
            checkpoint::save(&ckpt_path, &to_checkpoint(policy))?;
            manifest.output(&ckpt_path)?;
            println!(
                "data order digest: {:016x}; outputs in {}",
                result.data_order_digest,
                out_dir.display()
            );
        }
        Some(values) => {
            let results = trainer::r2_train_sweep(&policy, reference, pairs, train_cfg, values)
                .map_err(map_train_error)?;
            for (r2, result) in &results {
                let last = result.metrics.last().expect("metrics non-empty");
                println!(
                    "r2 {}: final mean_x1 {:+.5} mean_x2 {:+.5} pref_acc {:.3}",
                    r2, last.mean_x1, last.mean_x2, last.pref_accuracy
                );
                let path = out_dir.join(format!("metrics_r2_{r2}.csv"));
                csvio::write_metrics(&path, &result.metrics)?;
                manifest.output(&path)?;
            }
        }
    }
    Ok(())
}

fn override_params(
    flags: &LossFlags,
    cfg: &KvConfig,
    base: LossParams,
) -> Result<LossParams, CliError> {
    let params = LossParams {
        beta: resolve(flags.beta, cfg.get_parsed("beta")?, base.beta),
        lambda: resolve(flags.lambda, cfg.get_parsed("lambda")?, base.lambda),
        r1: resolve(flags.r1, cfg.get_parsed("r1")?, base.r1),
        r2: resolve(flags.r2, cfg.get_parsed("r2")?, base.r2),
    };
    params
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(params)
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut runs = Vec::new();
    let mut manifest = ManifestBuilder::new("report", serde_json::json!({ "runs": args.runs }), 0);
    for dir in args
        .runs
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        let path = PathBuf::from(dir);
        if !path.is_dir() {
            return Err(CliError::usage(format!(
                "run directory {dir} does not exist"
            )));
        }
        for artifact in ["metrics.csv", "summary.csv"] {
            let p = path.join(artifact);
            if p.exists() {
                manifest.input(&p)?;
            }
        }
        runs.push(report::load_run(&path)?);
    }
    if runs.is_empty() {
        return Err(CliError::usage("no run directories given"));
    }
    let text = report::render(&runs);
    std::fs::write(&args.out, text)?;
    manifest.output(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;
    println!("report written to {}", args.out.display());
    Ok(())
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::usage(format!("bad number `{s}` in list")))
        })
        .collect()
}

/// Refuses to clobber a previous run unless --force is given; the marker
/// file is the artifact that proves a run completed there.
fn prepare_out_dir(dir: &Path, force: bool, marker: &str) -> Result<(), CliError> {
    if dir.join(marker).exists() && !force {
        return Err(CliError::runtime(format!(
            "output directory {} already holds a run (pass --force to overwrite)",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use decchain_core::absorb::{default_budget, TableCache};
use decchain_core::bounds::{BoundOptions, PsiChoice};
use decchain_core::dist::StepLaw;
use decchain_core::experiment::{
    run_bounds, run_convergence, BoundsConfig, ExperimentConfig, ExperimentError, Format, GridSpec,
    Method, NormalizationMode, RowWriter, Target,
};
use decchain_core::limits::Clause;
use decchain_core::models::RegimeLimits;
use decchain_core::models::{DecrementModel, REGISTRY};
use decchain_core::renewal::additive_count_law;

const CACHE_ENV: &str = "DECCHAIN_CACHE_DIR";

#[derive(Parser)]
#[command(
    name = "decchain",
    version,
    about = "Absorption times of decreasing Markov chains and their limit laws"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the model registry.
    Models,
    /// Exact law of the absorption time (or renewal count) at one state label.
    Dist(DistArgs),
    /// Convergence experiment; the method comes from the config (default exact).
    Converge(RunArgs),
    /// Convergence experiment by simulation; `--seed` is required.
    Mc(RunArgs),
    /// Solve a linear recursion and report the bound ratio.
    Bounds(BoundsArgs),
    /// Inspect or clean the table cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
        #[arg(long, env = CACHE_ENV, global = true)]
        cache_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    List,
    /// Remove entries of the current format version.
    Clean,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: Option<String>,
    /// Model parameters as JSON.
    #[arg(long)]
    params: Option<String>,
}

#[derive(Args)]
struct DistArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// State label.
    #[arg(long)]
    n: u64,
    #[arg(long)]
    budget: Option<f64>,
    /// Law of the renewal count of the limiting step law instead.
    #[arg(long)]
    renewal: bool,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated state labels.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<u64>>,
    /// Grid as JSON, e.g. '{"log": {"from": 6, "to": 12, "points": 3}}'.
    #[arg(long, conflicts_with = "grid")]
    grid_spec: Option<String>,
    #[arg(long)]
    clause: Option<Clause>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    p: Option<u8>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, value_parser = parse_normalization)]
    normalization: Option<NormalizationMode>,
    #[arg(long, value_parser = parse_target)]
    target: Option<Target>,
    #[arg(long)]
    jackknife_groups: Option<usize>,
    #[arg(long)]
    max_error: Option<f64>,
    /// Rows go here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, env = CACHE_ENV)]
    cache_dir: Option<PathBuf>,
    /// Add a runtime_ms column (output is then no longer reproducible).
    #[arg(long)]
    timings: bool,
    /// Write the summary as JSON to this file.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Exit with status 4 unless the distance column decreases.
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct BoundsArgs {
    /// JSON bounds config (an explicit problem or a model reference).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<u8>,
    #[arg(long)]
    psi: Option<PsiChoice>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    c3_bound: Option<f64>,
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Exit with status 4 unless (C1) is positive and the ratio stays bounded.
    #[arg(long)]
    assert: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown method '{s}' (exact or mc)"))
}

fn parse_normalization(s: &str) -> Result<NormalizationMode, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| format!("unknown normalization '{s}' (theorem or moments)"))
}

fn parse_target(s: &str) -> Result<Target, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown target '{s}' (chain or renewal)"))
}

fn config_err(msg: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(msg.to_string())
}

fn parse_params(text: &Option<String>) -> Result<Option<Value>, ExperimentError> {
    text.as_deref()
        .map(|t| serde_json::from_str(t).map_err(|e| config_err(format!("--params: {e}"))))
        .transpose()
}

fn read_json(path: &PathBuf) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, ExperimentError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn experiment_config(args: &RunArgs, force_mc: bool) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_json(&read_json(path)?)?,
        None => {
            let model = args
                .model
                .model
                .clone()
                .ok_or_else(|| config_err("give --config or --model"))?;
            ExperimentConfig::new(&model, json!({}))
        }
    };
    if let Some(m) = &args.model.model {
        cfg.model = m.clone();
    }
    if let Some(p) = parse_params(&args.model.params)? {
        cfg.params = p;
    }
    if let Some(g) = &args.grid {
        cfg.grid = Some(GridSpec::List(g.clone()));
    }
    if let Some(g) = &args.grid_spec {
        cfg.grid =
            Some(serde_json::from_str(g).map_err(|e| config_err(format!("--grid-spec: {e}")))?);
    }
    macro_rules! over {
        ($($field:ident),*) => { $( if let Some(v) = args.$field.clone() { cfg.$field = Some(v); } )* };
    }
    over!(
        clause,
        p,
        mc_samples,
        seed,
        budget,
        jackknife_groups,
        max_error,
        output,
        format,
        cache_dir
    );
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(n) = args.normalization {
        cfg.normalization = n;
    }
    if let Some(t) = args.target {
        cfg.target = t;
    }
    cfg.timings |= args.timings;
    if force_mc {
        if args.method == Some(Method::Exact) {
            return Err(config_err("the mc command always simulates"));
        }
        cfg.method = Method::Mc;
        if cfg.seed.is_none() {
            return Err(config_err("--seed is mandatory for mc"));
        }
    }
    Ok(cfg)
}

fn run(args: RunArgs, force_mc: bool) -> Result<ExitCode, ExperimentError> {
    let cfg = experiment_config(&args, force_mc)?;
    let mut writer = RowWriter::new(
        open_output(&cfg.output)?,
        cfg.format.unwrap_or_default(),
        cfg.timings,
    );
    let report = run_convergence(&cfg, |row| Ok(writer.write_row(row)?))?;
    let summary = serde_json::to_string_pretty(&report.summary).expect("summary serializes");
    match &args.summary {
        Some(p) => std::fs::write(p, summary + "\n")?,
        None => eprintln!("{summary}"),
    }
    if args.assert && !report.summary.converged {
        eprintln!("trend assertion failed: distances do not decrease along the grid");
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn dist(args: DistArgs) -> Result<ExitCode, ExperimentError> {
    let name = args
        .model
        .model
        .clone()
        .ok_or_else(|| config_err("--model is required"))?;
    let params = parse_params(&args.model.params)?.unwrap_or_else(|| json!({}));
    let chain = DecrementModel::from_name(&name, &params)?;
    let numeric = |e: &dyn std::fmt::Display| ExperimentError::Numeric(e.to_string());
    let law = if args.renewal {
        let RegimeLimits::Add(l) = chain.limits() else {
            return Err(config_err(
                "exact renewal laws exist only in the additive regime",
            ));
        };
        additive_count_law(
            &l.xi,
            args.n,
            args.budget.unwrap_or_else(|| default_budget(args.n)),
        )
        .map_err(|e| numeric(&e))?
    } else {
        let s = args
            .n
            .checked_sub(chain.offset())
            .ok_or_else(|| config_err("state label below the absorbing state"))?;
        decchain_core::absorb::absorption_law(
            &chain,
            s,
            args.budget.unwrap_or_else(|| default_budget(s)),
        )
        .map_err(|e| numeric(&e))?
    };
    let mut out = open_output(&None)?;
    if args.format == Format::Csv {
        writeln!(out, "k,pmf")?;
    }
    for (k, p) in law.atoms().iter().zip(law.masses()) {
        match args.format {
            Format::Csv => writeln!(out, "{k},{p}")?,
            Format::Jsonl => writeln!(out, "{}", json!({"k": k, "pmf": p}))?,
        }
    }
    out.flush()?;
    eprintln!(
        "{}",
        json!({"mean": law.mean(), "pruned": law.pruned_mass()})
    );
    Ok(ExitCode::SUCCESS)
}

fn bounds(args: BoundsArgs) -> Result<ExitCode, ExperimentError> {
    let mut cfg = match &args.config {
        Some(path) => {
            serde_json::from_str::<BoundsConfig>(&read_json(path)?).map_err(config_err)?
        }
        None => BoundsConfig {
            problem: None,
            model: None,
            params: json!({}),
            p: None,
            psi: None,
            n: 0,
            options: BoundOptions::default(),
        },
    };
    if let Some(m) = &args.model.model {
        cfg.model = Some(m.clone());
    }
    if let Some(p) = parse_params(&args.model.params)? {
        cfg.params = p;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    cfg.p = args.p.or(cfg.p);
    cfg.psi = args.psi.or(cfg.psi);
    cfg.options.n0 = args.n0.or(cfg.options.n0);
    cfg.options.horizon = args.horizon.or(cfg.options.horizon);
    cfg.options.c3_bound = args.c3_bound.or(cfg.options.c3_bound);
    if cfg.n == 0 {
        return Err(config_err("--n is required"));
    }
    let rep = run_bounds(&cfg)?;
    let mut out = open_output(&None)?;
    if args.format == Format::Csv {
        writeln!(out, "n,s_n,rstar_n,rho_n")?;
    }
    for n in 1..=rep.n_max {
        match args.format {
            Format::Csv => writeln!(out, "{n},{},{},{}", rep.s[n], rep.rstar[n], rep.rho[n])?,
            Format::Jsonl => writeln!(
                out,
                "{}",
                json!({"n": n, "s_n": rep.s[n], "rstar_n": rep.rstar[n], "rho_n": rep.rho[n]})
            )?,
        }
    }
    out.flush()?;
    let summary = json!({
        "n_max": rep.n_max,
        "horizon": rep.horizon,
        "c1": rep.c1,
        "sup_first_half": rep.sup_first_half,
        "sup_second_half": rep.sup_second_half,
        "bounded": rep.bounded,
    });
    eprintln!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    if args.assert && !(rep.bounded && rep.c1.inf > 0.0) {
        eprintln!("bound assertion failed");
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cache(action: CacheAction, dir: Option<PathBuf>) -> Result<ExitCode, ExperimentError> {
    let dir = dir.ok_or_else(|| config_err(format!("give --cache-dir or set {CACHE_ENV}")))?;
    let cache = TableCache::new(dir);
    let numeric = |e: decchain_core::absorb::AbsorbError| ExperimentError::Numeric(e.to_string());
    let entries = match action {
        CacheAction::List => cache.list().map_err(numeric)?,
        CacheAction::Clean => cache.clean().map_err(numeric)?,
    };
    let mut out = open_output(&None)?;
    writeln!(out, "model,params_hash,n_max,budget,version,bytes,path")?;
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.model,
            e.params_hash,
            e.n_max,
            e.budget,
            e.version,
            e.bytes,
            e.path.display()
        )?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn models() -> Result<ExitCode, ExperimentError> {
    let mut out = open_output(&None)?;
    for e in REGISTRY {
        writeln!(
            out,
            "{}",
            json!({"name": e.name, "params": e.params, "example": (e.example)(), "notes": e.notes})
        )?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Models => models(),
        Command::Dist(a) => dist(a),
        Command::Converge(a) => run(a, false),
        Command::Mc(a) => run(a, true),
        Command::Bounds(a) => bounds(a),
        Command::Cache { action, cache_dir } => cache(action, cache_dir),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("decchain: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

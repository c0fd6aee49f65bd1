use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mixer_core::attacks::{apply_attack, load_attacked, parse_sweep, save_attacked, AttackSpec, AttackedModel};
use mixer_core::bench::{
    desk_split, run_pruning_sweep, run_table, sweep_csv, sweep_knee, sweep_svg, table_csv, table_text,
    usurper_success_rate, EvalConfig, UsurperModel, DEFAULT_RECOVERY_N,
};
use mixer_core::dataio::SplitDataset;
use mixer_core::embed::{train_vanilla, train_watermarked, EmbedConfig, DEFAULT_NE_FRACTION};
use mixer_core::keygen::{generate_key, is_world_readable, load_key, save_key, KeyProfile, SecretKey};
use mixer_core::rng::{StreamCursor, StreamId};
use mixer_core::tensornet::{load_model, save_model, Architecture, Model, OptimizerConfig};
use mixer_core::trigger::{dump_triggers_png, synth_set, Role};
use mixer_core::verify::{verify_model, Decision, DecisionParams, DecisionRule};

#[derive(Parser)]
#[command(name = "mixer", version, about = "Mixup-trigger watermarking for image classifiers")]
struct Cli {
    /// Master seed for data splits, training and trigger streams.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Dataset root (falls back to $MIXER_DATA_DIR, then ./data).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Training-corpus size drawn before the 80/10/10 split.
    #[arg(long, global = true, default_value_t = 8000)]
    corpus: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a secret key.
    Keygen(KeygenArgs),
    /// Train a watermarked (or, with --vanilla, a host) model.
    Embed(EmbedArgs),
    /// Decide whether a model carries a key's watermark.
    Verify(VerifyArgs),
    /// Apply a removal attack to a model.
    Attack(AttackArgs),
    /// Host / watermarked / attacked metrics table.
    Table(TableArgs),
    /// Pruning-rate sweep with CSV and SVG output.
    Sweep(SweepArgs),
    /// Usurper success rate with random fake keys.
    Usurp(UsurpArgs),
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Support size m of λ and μ.
    #[arg(long, default_value_t = 2)]
    support: usize,
    /// Explicit Dirichlet profile, comma separated (overrides --classes/--support).
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Image shape H,W,C.
    #[arg(long, value_delimiter = ',', default_value = "28,28,1")]
    shape: Vec<usize>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, required_unless_present = "vanilla")]
    key: Option<PathBuf>,
    /// Train without triggers.
    #[arg(long)]
    vanilla: bool,
    #[arg(long, default_value = "mnist_cnn")]
    arch: Architecture,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    /// Number of embedding triggers (default: 2% of the training split).
    #[arg(long, conflicts_with = "ne_frac")]
    n_e: Option<usize>,
    /// Embedding triggers as a fraction of the training split.
    #[arg(long)]
    ne_frac: Option<f64>,
    /// Use SGD with momentum instead of Adam.
    #[arg(long)]
    sgd: bool,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Draw a fresh embedding set every epoch.
    #[arg(long)]
    resample: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value = "plain")]
    rule: DecisionRule,
    #[arg(long)]
    n_d: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    rho_p: f64,
    #[arg(long, default_value_t = 0.5)]
    rho_n: f64,
    #[arg(long, default_value_t = 0.05)]
    p_fp: f64,
    #[arg(long, default_value_t = 0.05)]
    p_fn: f64,
    /// Index of this verification session; each index uses its own trigger stream.
    #[arg(long, default_value_t = 0)]
    session: u64,
    /// Write the query triggers as PNG files to this directory.
    #[arg(long)]
    dump_triggers: Option<PathBuf>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    /// prune:K | dyn | uint8 | int8 | f16 | finetune | jpeg:Q
    #[arg(long)]
    attack: String,
}

#[derive(Args)]
struct TableArgs {
    /// Watermarked model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    host: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "finetune,dyn,uint8,int8,f16,jpeg:55")]
    attacks: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_RECOVERY_N)]
    n: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value = "prune:0.0..0.9:0.05")]
    rates: String,
    #[arg(long, default_value_t = DEFAULT_RECOVERY_N)]
    n: usize,
}

#[derive(Args)]
struct UsurpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_keys: usize,
    #[arg(long, default_value_t = 100)]
    n_per_key: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Keygen(a) => keygen(cli, a),
        Command::Embed(a) => embed(cli, a),
        Command::Verify(a) => verify(cli, a),
        Command::Attack(a) => attack(cli, a),
        Command::Table(a) => table(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Usurp(a) => usurp(cli, a),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e.downcast_ref::<VerdictNegative>() {
        Some(_) => Ok(ExitCode::from(2)),
        None => Err(e),
    })
}

/// Marker error for a "not watermarked" verdict (exit code 2).
#[derive(Debug)]
struct VerdictNegative;

impl std::fmt::Display for VerdictNegative {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("not watermarked")
    }
}

impl std::error::Error for VerdictNegative {}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn split(cli: &Cli) -> Result<SplitDataset> {
    let (split, source) = desk_split(cli.data_dir.as_deref(), cli.corpus, cli.seed).context("loading data")?;
    eprintln!("data: {source:?}, {} training examples", split.train.len());
    Ok(split)
}

fn read_key(path: &Path) -> Result<SecretKey> {
    if is_world_readable(path)? {
        eprintln!("warning: key file {} is readable by other users", path.display());
    }
    load_key(path).with_context(|| format!("reading key {}", path.display()))
}

fn read_model(path: &Path) -> Result<Model> {
    load_model(path).with_context(|| format!("reading model {}", path.display()))
}

fn keygen(cli: &Cli, a: &KeygenArgs) -> Result<()> {
    let profile = match &a.alpha {
        Some(alpha) => KeyProfile::new(alpha.clone(), cli.seed)?,
        None => KeyProfile::uniform(a.classes, a.support, cli.seed)?,
    };
    let mut key = generate_key(&profile, &a.shape)?;
    key.created = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    let out = out_path(cli, "key.json");
    save_key(&key, &out)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&out, std::fs::Permissions::from_mode(0o600))?;
    }
    println!("key {} -> {}", key.fingerprint(), out.display());
    Ok(())
}

fn embed(cli: &Cli, a: &EmbedArgs) -> Result<()> {
    let split = split(cli)?;
    let mut optimizer = if a.sgd {
        OptimizerConfig::sgd(a.epochs)
    } else {
        OptimizerConfig::adam(a.epochs)
    };
    if let Some(lr) = a.learning_rate {
        optimizer.learning_rate = lr;
    }
    let n_e = match a.n_e {
        Some(n) => n,
        None => EmbedConfig::n_e_from_fraction(split.train.len(), a.ne_frac.unwrap_or(DEFAULT_NE_FRACTION))?,
    };
    let mut cfg = EmbedConfig::new(a.arch, optimizer, n_e, cli.seed);
    cfg.resample_per_epoch = a.resample;
    let (model, log) = if a.vanilla {
        train_vanilla(&split, &cfg)?
    } else {
        let key_path = a.key.as_ref().expect("clap enforces --key");
        train_watermarked(&split, &read_key(key_path)?, &cfg)?
    };
    let out = out_path(cli, "model.mxwm");
    save_model(&model, &out)?;
    let log_path = out.with_extension("log.csv");
    std::fs::write(&log_path, log.to_csv())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "epoch {}: loss {:.4}, val acc {:.2}{}",
            last.epoch,
            last.loss,
            last.ta_val,
            last.rec_measure.map(|r| format!(", rec {r:.2}")).unwrap_or_default()
        );
    }
    println!("model -> {}, log -> {}", out.display(), log_path.display());
    Ok(())
}

fn verify(cli: &Cli, a: &VerifyArgs) -> Result<()> {
    let key = read_key(&a.key)?;
    let model = load_attacked(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let split = split(cli)?;
    let params = DecisionParams {
        rho_p: a.rho_p,
        rho_n: a.rho_n,
        p_fp: a.p_fp,
        p_fn: a.p_fn,
        tau: a.tau,
        n_d: a.n_d,
    };
    let base = StreamId::new(key.master_seed, "trigger/verify").child(cli.seed);
    let mut cursor = StreamCursor::starting_at(base, a.session);
    let stream_pos = cursor.position();
    let report = verify_model(&model, &key, &params, a.rule, &split.test, &mut cursor)?;
    if let Some(dir) = &a.dump_triggers {
        let set = synth_set(&key, &split.test, report.n_d, Role::Verify, &report.stream)?;
        dump_triggers_png(&set, dir)?;
        eprintln!("session {stream_pos}: {} triggers -> {}", set.len(), dir.display());
    }
    if a.json {
        println!("{}", report.to_json()?);
    } else {
        println!("{}", report.verdict_line());
    }
    match report.decision {
        Decision::Watermarked => Ok(()),
        Decision::NotWatermarked => Err(VerdictNegative.into()),
    }
}

fn attack(cli: &Cli, a: &AttackArgs) -> Result<()> {
    let spec = AttackSpec::parse(&a.attack, cli.seed)?;
    let model = read_model(&a.model)?;
    let split = split(cli)?;
    let attacked = apply_attack(&model, &spec, &split)?;
    let default = match attacked {
        AttackedModel::Plain(_) => "attacked.mxwm",
        _ => "attacked.json",
    };
    let out = out_path(cli, default);
    save_attacked(&attacked, &out)?;
    println!("{spec} -> {}", out.display());
    Ok(())
}

fn table(cli: &Cli, a: &TableArgs) -> Result<()> {
    let key = read_key(&a.key)?;
    let (wm, host) = (read_model(&a.model)?, read_model(&a.host)?);
    let split = split(cli)?;
    let attacks = a
        .attacks
        .iter()
        .map(|s| AttackSpec::parse(s, cli.seed))
        .collect::<mixer_core::Result<Vec<_>>>()?;
    let eval = EvalConfig {
        recovery_n: a.n,
        seed: cli.seed,
    };
    let rows = run_table(&host, &wm, &key, &split, &attacks, &eval)?;
    print!("{}", table_text(&rows));
    let out = out_path(cli, "table.csv");
    std::fs::write(&out, table_csv(&rows))?;
    println!("-> {}", out.display());
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let key = read_key(&a.key)?;
    let model = read_model(&a.model)?;
    let rates = parse_sweep(&a.rates)?;
    let split = split(cli)?;
    let eval = EvalConfig {
        recovery_n: a.n,
        seed: cli.seed,
    };
    let points = run_pruning_sweep(&model, &key, &split, &rates, cli.seed, &eval)?;
    let csv = sweep_csv(&points);
    print!("{csv}");
    match sweep_knee(&points, 60.0, 70.0) {
        Some(k) => println!("TA ≥ 60 and Rec ≥ 70 up to k = {k}"),
        None => println!("TA ≥ 60 and Rec ≥ 70 fails at the first rate"),
    }
    let dir = out_path(cli, ".");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sweep.csv"), csv)?;
    std::fs::write(dir.join("sweep.svg"), sweep_svg(&points))?;
    println!("-> {}", dir.join("sweep.{csv,svg}").display());
    Ok(())
}

fn usurp(cli: &Cli, a: &UsurpArgs) -> Result<()> {
    if a.n_keys < 2 {
        bail!("--n-keys must be at least 2");
    }
    let key = read_key(&a.key)?;
    let model = load_attacked(&a.model)?;
    let split = split(cli)?;
    let mut usurper = UsurperModel::from_key(&key);
    usurper.n_keys = a.n_keys;
    usurper.n_per_key = a.n_per_key;
    let report = usurper_success_rate(&model, &usurper, &split.test, &StreamId::new(cli.seed, "usurp"))?;
    println!(
        "USR {:.2} ± {:.2} over {} keys × {} queries; {} keys exceed τ = {}",
        report.rate, report.half_width, report.n_keys, report.n_per_key, report.exceedances, usurper.tau
    );
    Ok(())
}

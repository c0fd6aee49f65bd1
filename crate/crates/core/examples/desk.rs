//! End-to-end desk run: host and watermarked training, the attack table,
//! a pruning sweep and the usurper rate.
//!
//! `cargo run --release --example desk -- [epochs] [n_e] [corpus] [resample 0|1]`

use std::time::Instant;

use mixer_core::attacks::{parse_sweep, AttackSpec};
use mixer_core::bench::{
    desk_split, run_pruning_sweep, run_table, sweep_csv, table_text, usurper_success_rate, EvalConfig, UsurperModel,
};
use mixer_core::embed::{train_vanilla, train_watermarked, EmbedConfig};
use mixer_core::keygen::{generate_key, KeyProfile};
use mixer_core::rng::StreamId;
use mixer_core::tensornet::{Architecture, OptimizerConfig};

fn main() -> mixer_core::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let epochs = args.first().copied().unwrap_or(10);
    let n_e = args.get(1).copied().unwrap_or(80);
    let corpus = args.get(2).copied().unwrap_or(5000);

    let (split, source) = desk_split(None, corpus, 7)?;
    println!("data: {source:?}, train {}", split.train.len());
    let key = generate_key(&KeyProfile::uniform(10, 2, 11)?, split.train.image_shape())?;
    let mut cfg = EmbedConfig::new(Architecture::MnistCnn, OptimizerConfig::adam(epochs), n_e, 3);
    cfg.resample_per_epoch = args.get(3).is_some_and(|&r| r != 0);

    let t = Instant::now();
    let (host, log) = train_vanilla(&split, &cfg)?;
    println!("host trained in {:.0}s\n{}", t.elapsed().as_secs_f64(), log.to_csv());
    let t = Instant::now();
    let (wm, log) = train_watermarked(&split, &key, &cfg)?;
    println!(
        "watermarked trained in {:.0}s\n{}",
        t.elapsed().as_secs_f64(),
        log.to_csv()
    );

    let eval = EvalConfig::default();
    let attacks: Vec<AttackSpec> = ["finetune", "dyn", "uint8", "int8", "f16", "jpeg:55"]
        .iter()
        .map(|s| AttackSpec::parse(s, 5))
        .collect::<Result<_, _>>()?;
    let t = Instant::now();
    let rows = run_table(&host, &wm, &key, &split, &attacks, &eval)?;
    println!("table in {:.0}s\n{}", t.elapsed().as_secs_f64(), table_text(&rows));

    let t = Instant::now();
    let pts = run_pruning_sweep(&wm, &key, &split, &parse_sweep("prune:0.0..0.9:0.05")?, 5, &eval)?;
    println!("sweep in {:.0}s\n{}", t.elapsed().as_secs_f64(), sweep_csv(&pts));

    let t = Instant::now();
    let usurper = UsurperModel::from_key(&key);
    let rep = usurper_success_rate(&wm, &usurper, &split.test, &StreamId::new(9, "usurp"))?;
    println!(
        "USR {:.2} ± {:.2} (exceed {}/{}) in {:.0}s",
        rep.rate,
        rep.half_width,
        rep.exceedances,
        rep.n_keys,
        t.elapsed().as_secs_f64()
    );
    let rep = usurper_success_rate(&host, &usurper, &split.test, &StreamId::new(9, "usurp"))?;
    println!("host USR {:.2} ± {:.2}", rep.rate, rep.half_width);
    Ok(())
}

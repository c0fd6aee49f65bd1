use std::collections::HashSet;

use mixer_core::dataio::{synth_blobs, Dataset, Partition};
use mixer_core::keygen::{generate_key, KeyProfile, SecretKey};
use mixer_core::rng::{StreamCursor, StreamId};
use mixer_core::tensornet::{Classifier, Tensor};
use mixer_core::trigger::{synth_set, Role};
use mixer_core::verify::{
    chernoff_fp_bound, compute_rho, required_samples, verify_model, Decision, DecisionParams, DecisionRule,
};
use mixer_core::{MixerError, Result};
use rand::Rng;

fn pool(partition: Partition) -> Dataset {
    let d = synth_blobs(10, 100, 12, 12, 1, 4).unwrap();
    let idx: Vec<usize> = (0..d.len()).collect();
    d.subset(&idx, partition).unwrap()
}

fn key(seed: u64) -> SecretKey {
    generate_key(&KeyProfile::uniform(10, 2, seed).unwrap(), &[12, 12, 1]).unwrap()
}

#[test]
fn verification_triggers_have_distinct_sources() {
    let test = pool(Partition::Test);
    let set = synth_set(&key(1), &test, 1000, Role::Verify, &StreamId::new(1, "v")).unwrap();
    let tuples: HashSet<&[usize]> = set.source_tuples().into_iter().collect();
    assert_eq!(tuples.len(), 1000);
}

#[test]
fn triggers_are_exact_convex_combinations() {
    let test = pool(Partition::Test);
    let mut k = key(2);
    k.overlay = Tensor::zeros(vec![12, 12, 1]);
    let set = synth_set(&k, &test, 200, Role::Measure, &StreamId::new(2, "c")).unwrap();
    let support: Vec<usize> = (0..10).filter(|&i| k.lambda[i] > 0.0).collect();
    for s in &set.samples {
        for (p, &v) in s.image.iter().enumerate() {
            let expected: f64 = support
                .iter()
                .zip(&s.provenance.sources)
                .map(|(&class, &src)| k.lambda[class] * test.image(src)[p])
                .sum();
            assert!((v - expected).abs() <= 1e-12);
        }
        for (&class, &src) in support.iter().zip(&s.provenance.sources) {
            assert_eq!(test.labels()[src], class);
        }
        assert_eq!(s.soft_label, k.mu);
    }
}

#[test]
fn embed_sets_are_reproducible_and_streams_differ() {
    let train = pool(Partition::Train);
    let k = key(3);
    let a = synth_set(&k, &train, 50, Role::Embed, &StreamId::new(3, "e")).unwrap();
    let b = synth_set(&k, &train, 50, Role::Embed, &StreamId::new(3, "e")).unwrap();
    let c = synth_set(&k, &train, 50, Role::Embed, &StreamId::new(3, "e2")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.source_tuples(), c.source_tuples());
}

/// Answers with a class chosen by hashing the pixels: deterministic per
/// input, uniform across inputs.
struct HashPredictor {
    shape: Vec<usize>,
    scale: f64,
}

impl Classifier for HashPredictor {
    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn class_count(&self) -> usize {
        10
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let mut out = Vec::new();
        for i in 0..batch.rows() {
            let mut h = 0xcbf2_9ce4_8422_2325u64;
            for v in batch.row(i) {
                h = (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
            }
            let class = (h % 10) as usize;
            out.extend((0..10).map(|c| if c == class { 0.91 } else { 0.01 } * self.scale));
        }
        Tensor::new(vec![batch.rows(), 10], out)
    }
}

struct Constant(usize);

impl Classifier for Constant {
    fn input_shape(&self) -> &[usize] {
        &[12, 12, 1]
    }

    fn class_count(&self) -> usize {
        10
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let row: Vec<f64> = (0..10).map(|c| if c == self.0 { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![batch.rows(), 10], row.repeat(batch.rows()))
    }
}

#[test]
fn random_predictor_recovers_chance() {
    let test = pool(Partition::Test);
    let model = HashPredictor {
        shape: vec![12, 12, 1],
        scale: 1.0,
    };
    let k = key(4);
    let set = synth_set(&k, &test, 2000, Role::Measure, &StreamId::new(4, "r")).unwrap();
    let rho = compute_rho(&model, &set, &k, DecisionRule::Plain).unwrap();
    assert!((rho - 0.10).abs() <= 0.03, "{rho}");
}

#[test]
fn rho_ignores_output_rescaling() {
    let test = pool(Partition::Test);
    let k = key(5);
    let set = synth_set(&k, &test, 300, Role::Measure, &StreamId::new(5, "s")).unwrap();
    let base = HashPredictor {
        shape: vec![12, 12, 1],
        scale: 1.0,
    };
    for scale in [1e-3, 0.5, 7.0] {
        let scaled = HashPredictor {
            shape: vec![12, 12, 1],
            scale,
        };
        for rule in [DecisionRule::Plain, DecisionRule::Weighted] {
            assert_eq!(
                compute_rho(&base, &set, &k, rule).unwrap(),
                compute_rho(&scaled, &set, &k, rule).unwrap()
            );
        }
    }
}

#[test]
fn embed_role_cannot_be_measured() {
    let train = pool(Partition::Train);
    let k = key(6);
    let set = synth_set(&k, &train, 10, Role::Embed, &StreamId::new(6, "e")).unwrap();
    assert!(matches!(
        compute_rho(&Constant(0), &set, &k, DecisionRule::Plain),
        Err(MixerError::Protocol(_))
    ));
}

#[test]
fn verify_decides_and_successive_sessions_use_fresh_streams() {
    let test = pool(Partition::Test);
    let k = key(7);
    let mut cursor = StreamCursor::new(StreamId::new(7, "trigger/verify"));
    let params = DecisionParams::default();
    let yes = verify_model(
        &Constant(k.target_class()),
        &k,
        &params,
        DecisionRule::Plain,
        &test,
        &mut cursor,
    )
    .unwrap();
    assert_eq!(yes.decision, Decision::Watermarked);
    assert_eq!((yes.n_d, yes.matches), (134, 134));
    let other = (k.target_class() + 1) % 10;
    let no = verify_model(&Constant(other), &k, &params, DecisionRule::Plain, &test, &mut cursor).unwrap();
    assert_eq!(no.decision, Decision::NotWatermarked);
    assert_ne!(yes.stream, no.stream);

    let first = synth_set(&k, &test, 134, Role::Verify, &yes.stream).unwrap();
    let second = synth_set(&k, &test, 134, Role::Verify, &no.stream).unwrap();
    let a: HashSet<&[usize]> = first.source_tuples().into_iter().collect();
    let shared = second.source_tuples().into_iter().filter(|t| a.contains(t)).count();
    // 1000 test images give 100 × 100 source pairs per key; overlaps are rare
    assert!(shared <= 10, "{shared} shared tuples");
}

#[test]
fn weighted_rule_uses_mu() {
    let test = pool(Partition::Test);
    let k = key(8);
    let set = synth_set(&k, &test, 20, Role::Measure, &StreamId::new(8, "w")).unwrap();
    // uniform outputs: plain argmax picks class 0, weighted picks argmax μ
    struct Uniform;
    impl Classifier for Uniform {
        fn input_shape(&self) -> &[usize] {
            &[12, 12, 1]
        }
        fn class_count(&self) -> usize {
            10
        }
        fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
            Ok(Tensor::filled(vec![batch.rows(), 10], 0.1))
        }
    }
    assert_eq!(compute_rho(&Uniform, &set, &k, DecisionRule::Weighted).unwrap(), 1.0);
    let plain = compute_rho(&Uniform, &set, &k, DecisionRule::Plain).unwrap();
    assert_eq!(plain, if k.target_class() == 0 { 1.0 } else { 0.0 });
}

/// Simulated unwatermarked models (ρ_N = 0.5) exceed τ no more often than
/// the Chernoff bound allows.
#[test]
fn chernoff_bound_holds_in_simulation() {
    let n_d = required_samples(0.05, 0.05, 0.8, 0.5).unwrap();
    let mut rng = StreamId::new(9, "mc").rng();
    for (tau, rho_n, rho_p) in [(0.65, 0.5, 0.8), (0.6, 0.5, 0.8), (0.7, 0.5, 0.8)] {
        let bound = chernoff_fp_bound(tau, rho_n, n_d).unwrap();
        let trials = 10_000;
        let mut fp = 0;
        let mut fneg = 0;
        for _ in 0..trials {
            let pos = (0..n_d).filter(|_| rng.gen_bool(rho_n)).count() as f64 / n_d as f64;
            fp += usize::from(pos > tau);
            let watermarked = (0..n_d).filter(|_| rng.gen_bool(rho_p)).count() as f64 / n_d as f64;
            fneg += usize::from(watermarked < tau);
        }
        let fn_bound = (-(n_d as f64) * (tau - rho_p) * (tau - rho_p)).exp();
        assert!(fp as f64 / trials as f64 <= bound, "τ={tau}: fp {fp} vs bound {bound}");
        assert!(
            fneg as f64 / trials as f64 <= fn_bound,
            "τ={tau}: fn {fneg} vs bound {fn_bound}"
        );
    }
}

use mixer_core::bench::{
    recovery, run_pruning_sweep, sweep_csv, test_accuracy, usurper_success_rate, EvalConfig, UsurperModel,
};
use mixer_core::dataio::{split_80_10_10, synth_blobs, Dataset, Partition, SplitDataset};
use mixer_core::keygen::{generate_key, KeyProfile};
use mixer_core::rng::StreamId;
use mixer_core::tensornet::{build_mlp, Classifier, Layer, Model, Precision, Tensor};
use mixer_core::Result;

struct Oracle<'a>(&'a Dataset);

impl Classifier for Oracle<'_> {
    fn input_shape(&self) -> &[usize] {
        self.0.image_shape()
    }
    fn class_count(&self) -> usize {
        self.0.classes()
    }
    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        // look each row up by content
        let mut out = Vec::new();
        for i in 0..batch.rows() {
            let idx = (0..self.0.len()).find(|&j| self.0.image(j) == batch.row(i)).unwrap();
            out.extend((0..10).map(|c| f64::from(u8::from(c == self.0.labels()[idx]))));
        }
        Tensor::new(vec![batch.rows(), 10], out)
    }
}

/// Class from a hash of the pixels: uniform and independent across inputs.
struct HashPredictor;

impl Classifier for HashPredictor {
    fn input_shape(&self) -> &[usize] {
        &[12, 12, 1]
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
            out.extend((0..10).map(|c| f64::from(u8::from(c == class))));
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
        let row: Vec<f64> = (0..10).map(|c| f64::from(u8::from(c == self.0))).collect();
        Tensor::new(vec![batch.rows(), 10], row.repeat(batch.rows()))
    }
}

fn test_pool() -> Dataset {
    let d = synth_blobs(10, 100, 12, 12, 1, 4).unwrap();
    let idx: Vec<usize> = (0..d.len()).collect();
    d.subset(&idx, Partition::Test).unwrap()
}

#[test]
fn accuracy_of_oracle_and_chance_predictors() {
    let test = test_pool();
    assert_eq!(test_accuracy(&Oracle(&test), &test).unwrap(), 100.0);
    let chance = test_accuracy(&HashPredictor, &test).unwrap();
    assert!((chance - 10.0).abs() <= 3.0, "{chance}");
}

#[test]
fn vanilla_like_recovery_is_near_chance() {
    let test = test_pool();
    let key = generate_key(&KeyProfile::uniform(10, 2, 1).unwrap(), &[12, 12, 1]).unwrap();
    let r = recovery(&HashPredictor, &key, &test, 1000, &StreamId::new(0, "r")).unwrap();
    assert!((r - 10.0).abs() <= 3.0, "{r}");
    let target = recovery(&Constant(key.target_class()), &key, &test, 100, &StreamId::new(0, "r")).unwrap();
    assert_eq!(target, 100.0);
}

#[test]
fn constant_model_grants_one_in_c() {
    let test = test_pool();
    let key = generate_key(&KeyProfile::uniform(10, 2, 1).unwrap(), &[12, 12, 1]).unwrap();
    let usurper = UsurperModel {
        n_keys: 2000,
        n_per_key: 2,
        ..UsurperModel::from_key(&key)
    };
    let rep = usurper_success_rate(&Constant(3), &usurper, &test, &StreamId::new(5, "u")).unwrap();
    let sigma = 100.0 * (0.1f64 * 0.9 / 2000.0).sqrt();
    assert!((rep.rate - 10.0).abs() <= 4.0 * sigma, "{}", rep.rate);
    assert!(rep.per_key.iter().all(|&r| r == 0.0 || r == 1.0));
}

/// The reported interval covers an independent re-run of the estimate.
#[test]
fn usurper_interval_covers_reruns() {
    let test = test_pool();
    let key = generate_key(&KeyProfile::uniform(10, 2, 1).unwrap(), &[12, 12, 1]).unwrap();
    let usurper = UsurperModel {
        n_keys: 40,
        n_per_key: 25,
        ..UsurperModel::from_key(&key)
    };
    let mut covered = 0;
    for trial in 0..100 {
        let a = usurper_success_rate(&HashPredictor, &usurper, &test, &StreamId::new(trial, "a")).unwrap();
        let b = usurper_success_rate(&HashPredictor, &usurper, &test, &StreamId::new(trial, "b")).unwrap();
        covered += usize::from((a.rate - b.rate).abs() <= a.half_width);
    }
    assert!(covered >= 95, "covered {covered}/100");
}

fn blob_split() -> SplitDataset {
    let corpus = synth_blobs(10, 20, 12, 12, 1, 1).unwrap();
    split_80_10_10(&corpus, test_pool(), 2).unwrap()
}

#[test]
fn sweep_is_reproducible_and_starts_at_the_unattacked_model() {
    let split = blob_split();
    let key = generate_key(&KeyProfile::uniform(10, 2, 1).unwrap(), &[12, 12, 1]).unwrap();
    let mlp = build_mlp(144, &[16], 10, Precision::F32, &mut StreamId::new(0, "m").rng()).unwrap();
    let mut layers = vec![Layer::Flatten];
    layers.extend(mlp.layers().iter().cloned());
    let model = Model::new("flat-mlp", vec![12, 12, 1], 10, layers, Precision::F32).unwrap();
    let eval = EvalConfig {
        recovery_n: 200,
        seed: 3,
    };
    let rates = [0.0, 0.5, 1.0];
    let a = run_pruning_sweep(&model, &key, &split, &rates, 9, &eval).unwrap();
    let b = run_pruning_sweep(&model, &key, &split, &rates, 9, &eval).unwrap();
    assert_eq!(sweep_csv(&a), sweep_csv(&b));
    let (ta, tr, ts) = eval.evaluate(&model, &key, &split).unwrap();
    assert_eq!((a[0].ta, a[0].rec_tr, a[0].rec_ts), (ta, tr, ts));
}

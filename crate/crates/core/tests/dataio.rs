use mixer_core::dataio::{decode_cifar10, decode_idx, split_80_10_10, synth_blobs, Partition};
use mixer_core::rng::StreamId;
use mixer_core::tensornet::{build_mlp, Mode, Optimizer, OptimizerConfig, Precision};
use proptest::prelude::*;

fn idx_files(n: usize, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let mut img = 0x0803u32.to_be_bytes().to_vec();
    for v in [n, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend((0..n * rows * cols).map(|i| (i * 7 % 256) as u8));
    let mut lab = 0x0801u32.to_be_bytes().to_vec();
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend((0..n).map(|i| (i % 10) as u8));
    (img, lab)
}

fn cifar_bytes(records: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for r in 0..records {
        out.push((r % 10) as u8);
        out.extend((0..3072).map(|i| ((i + r) % 256) as u8));
    }
    out
}

#[test]
fn well_formed_files_decode() {
    let (img, lab) = idx_files(20, 3, 4);
    let d = decode_idx("t", &img, &lab).unwrap();
    assert_eq!(d.len(), 20);
    assert_eq!(d.image_shape(), &[3, 4, 1]);
    assert_eq!(d.image(0)[1], 7.0 / 255.0);

    let c = decode_cifar10("c", &[&cifar_bytes(10), &cifar_bytes(10)]).unwrap();
    assert_eq!(c.len(), 20);
    assert_eq!(c.image_shape(), &[32, 32, 3]);
    // the red plane comes first in the file, so pixel 0 is (rec[1], rec[1025], rec[2049])
    assert_eq!(
        c.image(1)[..3],
        [1.0 / 255.0, (1025.0 % 256.0) / 255.0, (2049.0 % 256.0) / 255.0]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn truncated_idx_is_an_error(cut_img in 0usize..16 + 20 * 12, cut_lab in 0usize..8 + 20) {
        let (img, lab) = idx_files(20, 3, 4);
        prop_assert!(decode_idx("t", &img[..cut_img], &lab).is_err());
        prop_assert!(decode_idx("t", &img, &lab[..cut_lab]).is_err());
    }

    #[test]
    fn corrupted_idx_never_panics(pos in 0usize..16 + 20 * 12, byte in any::<u8>(), lpos in 0usize..28, lbyte in any::<u8>()) {
        let (mut img, mut lab) = idx_files(20, 3, 4);
        img[pos] = byte;
        lab[lpos] = lbyte;
        let _ = decode_idx("t", &img, &lab);
    }

    #[test]
    fn corrupted_cifar_never_panics(len in 0usize..3 * 3073, pos in 0usize..3073, byte in any::<u8>()) {
        let mut bytes = cifar_bytes(3);
        bytes[pos] = byte;
        let res = decode_cifar10("c", &[&bytes[..len]]);
        prop_assert!(res.is_err(), "a partial or pool-incomplete batch must not decode");
    }
}

#[test]
fn random_headers_never_panic() {
    let mut rng = StreamId::new(0, "fuzz").rng();
    use rand::Rng;
    for _ in 0..2000 {
        let n: usize = rng.gen_range(0..64);
        let img: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
        let lab: Vec<u8> = (0..rng.gen_range(0..16)).map(|_| rng.gen()).collect();
        let _ = decode_idx("fuzz", &img, &lab);
        let _ = decode_cifar10("fuzz", &[&img]);
    }
}

#[test]
fn split_partitions_are_disjoint_and_sized() {
    let corpus = synth_blobs(10, 50, 8, 8, 1, 1).unwrap();
    let test = synth_blobs(10, 5, 8, 8, 1, 2).unwrap();
    let s = split_80_10_10(&corpus, test, 3).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.finetune.len()), (400, 50, 50));
    assert_eq!(s.train.partition(), Partition::Train);
    assert_eq!(s.test.partition(), Partition::Test);
    let mut seen: Vec<&[f64]> = Vec::new();
    for d in [&s.train, &s.validation, &s.finetune] {
        for i in 0..d.len() {
            seen.push(d.image(i));
        }
    }
    let total = seen.len();
    seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
    seen.dedup();
    assert_eq!(seen.len(), total);
}

/// A softmax-regression probe separates the synthetic classes.
#[test]
fn linear_probe_separates_blobs() {
    let train = synth_blobs(10, 40, 12, 12, 1, 5).unwrap();
    let test = synth_blobs(10, 20, 12, 12, 1, 6).unwrap();
    let mut rng = StreamId::new(1, "probe").rng();
    let mut model = build_mlp(144, &[], 10, Precision::F64, &mut rng).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig {
        learning_rate: 0.01,
        batch_size: 32,
        ..OptimizerConfig::adam(30)
    })
    .unwrap();
    let x = train.images().clone().reshape(vec![train.len(), 144]).unwrap();
    model.set_mode(Mode::Training);
    for _ in 0..30 {
        model.train_epoch(&x, &train.one_hot(), &mut opt, &mut rng).unwrap();
    }
    model.set_mode(Mode::Inference);
    let xt = test.images().clone().reshape(vec![test.len(), 144]).unwrap();
    let preds = model.forward(&xt).unwrap().argmax_rows();
    let acc = preds.iter().zip(test.labels()).filter(|(p, l)| p == l).count() as f64 / test.len() as f64;
    assert!(acc >= 0.99, "probe accuracy {acc}");
}

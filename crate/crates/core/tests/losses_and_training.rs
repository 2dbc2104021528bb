mod common;

use common::{random_vec, rng};
use prnet::data::synth_generate;
use prnet::loss::{ce_loss, combined_loss, dice_loss, dice_per_class, DICE_EPS};
use prnet::nn::Param;
use prnet::train::{
    epoch_checkpoint_path, poly_lr, AdamConfig, AdamState, Checkpoint, TrainOptions, Trainer, FINAL_CHECKPOINT,
};
use prnet::{Error, Module, PRNet, PRNetConfig, Tensor};
use proptest::prelude::*;

fn softmax_ref(logits: &[f32], n: usize, k: usize, hw: usize) -> Vec<f64> {
    let mut p = vec![0.0; logits.len()];
    for b in 0..n {
        for q in 0..hw {
            let at = |c: usize| (b * k + c) * hw + q;
            let m = (0..k).map(|c| logits[at(c)] as f64).fold(f64::MIN, f64::max);
            let z: f64 = (0..k).map(|c| (logits[at(c)] as f64 - m).exp()).sum();
            for c in 0..k {
                p[at(c)] = (logits[at(c)] as f64 - m).exp() / z;
            }
        }
    }
    p
}

fn ce_ref(logits: &[f32], target: &[u8], n: usize, k: usize, hw: usize) -> f64 {
    let p = softmax_ref(logits, n, k, hw);
    let mut s = 0.0;
    for b in 0..n {
        for q in 0..hw {
            s -= p[(b * k + target[b * hw + q] as usize) * hw + q].ln();
        }
    }
    s / (n * hw) as f64
}

fn dice_ref(logits: &[f32], target: &[u8], n: usize, k: usize, hw: usize) -> f64 {
    let p = softmax_ref(logits, n, k, hw);
    let mut total = 0.0;
    for c in 0..k {
        let (mut inter, mut ps, mut gs) = (0.0, 0.0, 0.0);
        for b in 0..n {
            for q in 0..hw {
                let pv = p[(b * k + c) * hw + q];
                let g = (target[b * hw + q] as usize == c) as u8 as f64;
                inter += pv * g;
                ps += pv;
                gs += g;
            }
        }
        total += (2.0 * inter + DICE_EPS) / (ps + gs + DICE_EPS);
    }
    1.0 - total / k as f64
}

fn case() -> impl Strategy<Value = (usize, usize, usize, Vec<f32>, Vec<u8>)> {
    (1usize..3, 2usize..6, 1usize..20).prop_flat_map(|(n, k, hw)| {
        (
            Just(n),
            Just(k),
            Just(hw),
            prop::collection::vec(-6.0f32..6.0, n * k * hw),
            prop::collection::vec(0u8..k as u8, n * hw),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_match_reference((n, k, hw, logits, target) in case()) {
        let t = Tensor::new(&[n, k, 1, hw], logits.clone()).unwrap();
        let ce = ce_loss(&t, &target).unwrap().item() as f64;
        let dice = dice_loss(&t, &target, DICE_EPS).unwrap().item() as f64;
        let both = combined_loss(&t, &target).unwrap().item() as f64;
        let (ce_want, dice_want) = (ce_ref(&logits, &target, n, k, hw), dice_ref(&logits, &target, n, k, hw));
        prop_assert!((ce - ce_want).abs() <= 1e-5 * ce_want.max(1.0), "ce {} vs {}", ce, ce_want);
        prop_assert!((dice - dice_want).abs() <= 1e-5, "dice {} vs {}", dice, dice_want);
        prop_assert!((both - ce_want - dice_want).abs() <= 2e-5 * (ce_want + dice_want).max(1.0));
        prop_assert!(ce >= 0.0);
        prop_assert!((-1e-6..=1.0 + 1e-6).contains(&dice));
    }
}

#[test]
fn confident_correct_prediction_has_near_zero_loss() {
    let target = [0u8, 2, 1, 2];
    let mut d = vec![-30.0f32; 3 * 4];
    for (p, &c) in target.iter().enumerate() {
        d[c as usize * 4 + p] = 30.0;
    }
    let t = Tensor::new(&[1, 3, 2, 2], d).unwrap();
    assert!(combined_loss(&t, &target).unwrap().item() < 1e-5);
    let per = dice_per_class(&t, &target, DICE_EPS).unwrap();
    assert_eq!(per.shape(), [1, 3, 1, 1]);
}

#[test]
fn out_of_range_label_is_rejected() {
    let t = Tensor::<f32>::zeros(&[1, 3, 1, 2]);
    assert!(matches!(
        ce_loss(&t, &[0, 3]),
        Err(Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
    assert!(dice_loss(&t, &[0], DICE_EPS).is_err());
}

struct Two {
    a: Param<f32>,
    b: Param<f32>,
}

impl Module<f32> for Two {
    fn visit_params<'a>(&'a self, _prefix: &str, f: &mut dyn FnMut(&str, &'a Param<f32>)) {
        f("a", &self.a);
        f("b", &self.b);
    }
}

/// Three Adam steps on `L = Σ c_a·a² + Σ c_b·b` against a hand-rolled f64 update.
#[test]
fn adam_three_steps_match_reference() {
    let a0 = vec![0.5f32, -1.5, 2.0];
    let b0 = vec![0.25f32, -0.75];
    let (ca, cb) = ([1.0f64, 0.3, -2.0], [4.0f64, -0.01]);
    let m = Two {
        a: Param::new(&[3], a0.clone()).unwrap(),
        b: Param::new(&[2], b0.clone()).unwrap(),
    };
    let cfg = AdamConfig::default();
    let mut adam = AdamState::new(&m, cfg);
    let lrs = [1e-2, 5e-3, 2e-3];

    let mut x: Vec<f64> = a0.iter().chain(&b0).map(|v| *v as f64).collect();
    let (mut mo, mut ve) = (vec![0.0; 5], vec![0.0; 5]);
    for (t, &lr) in lrs.iter().enumerate() {
        m.zero_grad();
        let ca_t = Tensor::new(&[3], ca.iter().map(|v| *v as f32).collect()).unwrap();
        let cb_t = Tensor::new(&[2], cb.iter().map(|v| *v as f32).collect()).unwrap();
        let a = m.a.get();
        let loss = a
            .mul(&a)
            .unwrap()
            .mul(&ca_t)
            .unwrap()
            .sum()
            .unwrap()
            .add(&m.b.get().mul(&cb_t).unwrap().sum().unwrap())
            .unwrap();
        loss.backward().unwrap();
        adam.step(&m, lr).unwrap();

        let step = (t + 1) as i32;
        for j in 0..5 {
            let g = if j < 3 { 2.0 * ca[j] * x[j] } else { cb[j - 3] };
            mo[j] = cfg.beta1 * mo[j] + (1.0 - cfg.beta1) * g;
            ve[j] = cfg.beta2 * ve[j] + (1.0 - cfg.beta2) * g * g;
            let mhat = mo[j] / (1.0 - cfg.beta1.powi(step));
            let vhat = ve[j] / (1.0 - cfg.beta2.powi(step));
            x[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        let got: Vec<f32> = m.a.get().to_vec().into_iter().chain(m.b.get().to_vec()).collect();
        for j in 0..5 {
            assert!(
                (got[j] as f64 - x[j]).abs() < 1e-6,
                "step {step} coord {j}: {} vs {}",
                got[j],
                x[j]
            );
        }
    }
    assert_eq!(adam.t, 3);
}

#[test]
fn poly_schedule_values() {
    assert_eq!(poly_lr(0, 100, 1e-4, 0.9).unwrap(), 1e-4);
    let mid = poly_lr(50, 100, 1e-4, 0.9).unwrap();
    assert!((mid - 1e-4 * 0.5f64.powf(0.9)).abs() < 1e-18);
    assert!(poly_lr(99, 100, 1e-4, 0.9).unwrap() > 0.0);
    assert_eq!(poly_lr(100, 100, 1e-4, 0.9).unwrap(), 0.0);
    assert!(poly_lr(101, 100, 1e-4, 0.9).is_err());
}

fn tiny() -> (PRNetConfig, Vec<prnet::data::SegmentationSample>) {
    let cfg = PRNetConfig::default().with_base_width(4).with_input(32, 32);
    (cfg, synth_generate(6, 32, 32, 7, 10).unwrap())
}

fn options(epochs: usize) -> TrainOptions {
    TrainOptions {
        epochs,
        batch_size: 2,
        seed: 5,
        lr0: 1e-3,
        checkpoint_every: 1,
        ..TrainOptions::default()
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (cfg, data) = tiny();
    let mut tr = Trainer::new(PRNet::new(&cfg).unwrap(), options(1)).unwrap();
    tr.run(&data, None, &mut |_| Ok(())).unwrap();
    let bytes = tr.checkpoint().to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.prnc");
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let model = Checkpoint::load(&path).unwrap().build_model().unwrap();
    let x = Tensor::new(&[1, 3, 32, 32], random_vec(&mut rng(1), 3 * 32 * 32)).unwrap();
    assert_eq!(model.forward(&x).unwrap().data(), tr.model.forward(&x).unwrap().data());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (cfg, _) = tiny();
    let tr = Trainer::new(PRNet::new(&cfg).unwrap(), options(1)).unwrap();
    let bytes = tr.checkpoint().to_bytes().unwrap();
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 4]),
        Err(Error::Checkpoint(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn resumed_training_is_bitwise_identical() {
    let (cfg, data) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(PRNet::new(&cfg).unwrap(), options(3)).unwrap();
    let log_full = full.run(&data, Some(dir.path()), &mut |_| Ok(())).unwrap();
    assert_eq!(log_full.len(), 9);

    let mid = Checkpoint::load(&epoch_checkpoint_path(dir.path(), 1)).unwrap();
    let mut resumed = Trainer::from_checkpoint(&mid).unwrap();
    let resume_dir = tempfile::tempdir().unwrap();
    let log_rest = resumed.run(&data, Some(resume_dir.path()), &mut |_| Ok(())).unwrap();
    assert_eq!(log_rest, log_full[3..]);
    assert_eq!(
        std::fs::read(resume_dir.path().join(FINAL_CHECKPOINT)).unwrap(),
        std::fs::read(dir.path().join(FINAL_CHECKPOINT)).unwrap()
    );
}

#[test]
fn training_reduces_loss() {
    let (cfg, data) = tiny();
    let mut tr = Trainer::new(PRNet::new(&cfg).unwrap(), options(15)).unwrap();
    let log = tr.run(&data, None, &mut |_| Ok(())).unwrap();
    let first: f32 = log[..3].iter().map(|r| r.loss).sum();
    let last: f32 = log[log.len() - 3..].iter().map(|r| r.loss).sum();
    assert!(last < first, "{first} -> {last}");
}

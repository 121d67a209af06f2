//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its runtime (visible with `--nocapture`).
//!
//! Run with `cargo test -p frk --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use frk::caption::{self, CaptionConfig, CaptionModel, Vocab};
use frk::dataio;
use frk::freqparam::{keep_floors, FreqParam};
use frk::metrics;
use frk::nn::{self, train, ArchPlan, GradStore, ModelGraph};
use frk::spectral::{dct2, idct2, zigzag_scan};
use frk::{Rng, Tensor};

fn pass(n: usize, name: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "criterion {n} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
    println!("criterion {n} ({name}): PASS ({elapsed:.2?})");
}

#[test]
fn criterion_01_spectral_roundtrip_and_norm() {
    let start = Instant::now();
    let mut rng = Rng::from_seed(0xC1);
    for case in 0..200 {
        let rows = 1 + rng.below(16);
        let cols = 1 + rng.below(16);
        let x = Tensor::rand_uniform(&[rows, cols], -1.0, 1.0, &mut rng).unwrap();
        let c = dct2(&x).unwrap();
        let back = idct2(&c).unwrap();
        let max_err = x
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-9, "case {case}: roundtrip err {max_err}");
        let norm_err = (c.l2_norm() - x.l2_norm()).abs();
        assert!(norm_err < 1e-10, "case {case}: norm err {norm_err}");
    }
    pass(1, "spectral correctness", start, Duration::from_secs(5));
}

/// Central-difference derivative of `loss` with respect to one coefficient.
fn central_diff(
    coeff: &mut f64_slot::Slot,
    loss: &mut dyn FnMut() -> f64,
    h: f64,
) -> f64 {
    let orig = coeff.get();
    coeff.set(orig + h);
    let up = loss();
    coeff.set(orig - h);
    let down = loss();
    coeff.set(orig);
    (up - down) / (2.0 * h)
}

/// Indirection for "a mutable f64 located somewhere in a model".
mod f64_slot {
    pub struct Slot {
        get: Box<dyn Fn() -> f64>,
        set: Box<dyn FnMut(f64)>,
    }

    impl Slot {
        pub fn new(get: Box<dyn Fn() -> f64>, set: Box<dyn FnMut(f64)>) -> Self {
            Self { get, set }
        }

        pub fn get(&self) -> f64 {
            (self.get)()
        }

        pub fn set(&mut self, v: f64) {
            (self.set)(v)
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn criterion_02_gradient_exactness() {
    let start = Instant::now();
    let h = 1e-5;

    // one single-layer model per FR layer type, loss = output ⊙ projection
    struct LayerCase {
        name: &'static str,
        plan: ArchPlan,
        input_shape: Vec<usize>,
        params: Vec<&'static str>,
    }
    let linear_plan = ArchPlan {
        builder: "probe".into(),
        num_classes: 5,
        input: nn::InputSpec::Features { len: 7 },
        layers: vec![nn::LayerPlan::FrLinear {
            name: "l".into(),
            in_features: 7,
            out_features: 5,
            bias: true,
        }],
    };
    let conv_plan = ArchPlan {
        builder: "probe".into(),
        num_classes: 4,
        input: nn::InputSpec::Image {
            channels: 3,
            height: 6,
            width: 6,
        },
        layers: vec![nn::LayerPlan::FrConv2d {
            name: "c".into(),
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: true,
        }],
    };
    let bn_plan = ArchPlan {
        builder: "probe".into(),
        num_classes: 12,
        input: nn::InputSpec::Image {
            channels: 12,
            height: 4,
            width: 4,
        },
        layers: vec![nn::LayerPlan::BatchNorm2d {
            name: "bn".into(),
            num_features: 12,
        }],
    };
    let cases = [
        LayerCase {
            name: "fr_linear",
            plan: linear_plan,
            input_shape: vec![3, 7],
            params: vec!["l.weight", "l.bias"],
        },
        LayerCase {
            name: "fr_conv2d",
            plan: conv_plan,
            input_shape: vec![2, 3, 6, 6],
            params: vec!["c.weight", "c.bias"],
        },
        LayerCase {
            name: "batchnorm",
            plan: bn_plan,
            input_shape: vec![3, 12, 4, 4],
            params: vec!["bn.gamma", "bn.beta"],
        },
    ];

    for (ci, case) in cases.iter().enumerate() {
        let seed = 0xC2 + ci as u64;
        let mut model = ModelGraph::build(case.plan.clone(), &mut Rng::from_seed(seed)).unwrap();
        let x = Tensor::rand_uniform(&case.input_shape, -1.0, 1.0, &mut Rng::from_seed(seed + 10))
            .unwrap();
        let out_shape = case.plan.output_shape(&case.input_shape).unwrap();
        let proj =
            Tensor::rand_uniform(&out_shape, -1.0, 1.0, &mut Rng::from_seed(seed + 20)).unwrap();

        // analytic frequency-domain gradients
        let (_, ctxs) = model.forward_train(&x, &mut Rng::from_seed(0)).unwrap();
        let mut grads = GradStore::new();
        model.backward(&ctxs, proj.clone(), &mut grads).unwrap();
        let analytic: BTreeMap<String, Tensor> = case
            .params
            .iter()
            .map(|&p| (p.to_string(), grads.get(p).unwrap().clone()))
            .collect();

        let shared = std::rc::Rc::new(std::cell::RefCell::new(model));
        let mut probe = Rng::from_seed(seed + 30);
        let mut checked = 0;
        for &pname in &case.params {
            let (rows, cols, keep) = {
                let m = shared.borrow();
                let params = m.named_params();
                let (_, p) = params.iter().find(|(n, _)| n == pname).unwrap();
                (p.rows(), p.cols(), p.keep())
            };
            let per_param = if pname.ends_with(".weight") { 16 } else { 8 };
            for _ in 0..per_param {
                let pos = probe.below(keep);
                let (r, c) = zigzag_scan(rows, cols).nth(pos).unwrap();
                let idx = r * cols + c;
                let s1 = shared.clone();
                let s2 = shared.clone();
                let pn = pname.to_string();
                let pn2 = pname.to_string();
                let mut slot = f64_slot::Slot::new(
                    Box::new(move || {
                        let m = s1.borrow();
                        let params = m.named_params();
                        let (_, p) = params.iter().find(|(n, _)| *n == pn).unwrap();
                        p.coeffs().data()[idx]
                    }),
                    Box::new(move |v| {
                        let mut m = s2.borrow_mut();
                        m.for_each_param_mut(&mut |n, p| {
                            if n == pn2 {
                                p.coeffs_mut().data_mut()[idx] = v;
                            }
                        });
                    }),
                );
                let s3 = shared.clone();
                let x2 = x.clone();
                let proj2 = proj.clone();
                let mut loss = move || -> f64 {
                    let mut m = s3.borrow_mut();
                    let (y, _) = m.forward_train(&x2, &mut Rng::from_seed(0)).unwrap();
                    y.dot(&proj2)
                };
                let numeric = central_diff(&mut slot, &mut loss, h);
                let a = analytic[pname].data()[idx];
                assert!(
                    rel_err(a, numeric) < 1e-4,
                    "{} {pname}[{idx}]: analytic {a}, numeric {numeric}",
                    case.name
                );
                checked += 1;
            }
        }
        assert!(checked >= 20, "{}: only {checked} coefficients checked", case.name);
    }

    // toy captioner: teacher-forced loss vs central differences
    let config = CaptionConfig {
        feat_dim: caption::SYNTH_FEAT_DIM,
        embed_dim: 16,
        seq_length: 25,
    };
    let mut model = CaptionModel::init(config, Vocab::synth(), &mut Rng::from_seed(0xCA)).unwrap();
    let features = caption::scene_features("green", "cup").unwrap();
    let ids = model.vocab.encode("sos a green cup eos");

    let analytic: BTreeMap<String, Tensor> = {
        // derive frequency gradients by probing train_scene at lr so that
        // coeff updates equal -lr * grad, on a throwaway clone
        // (the library exposes analytic grads through training; for the
        // acceptance check we recover them from a single SGD step)
        let before: BTreeMap<String, Tensor> = model
            .named_params()
            .iter()
            .map(|(n, p)| (n.clone(), p.coeffs().clone()))
            .collect();
        let lr = 1.0;
        let mut clone = CaptionModel::init(
            CaptionConfig {
                feat_dim: caption::SYNTH_FEAT_DIM,
                embed_dim: 16,
                seq_length: 25,
            },
            Vocab::synth(),
            &mut Rng::from_seed(0xCA),
        )
        .unwrap();
        clone.train_scene(&features, &ids, lr).unwrap();
        clone
            .named_params()
            .iter()
            .map(|(n, p)| {
                let mut g = before[n].clone();
                g.add_scaled(-1.0, p.coeffs());
                // g = before - after = lr * grad = grad at lr=1
                (n.clone(), g)
            })
            .collect()
    };

    let mut probe = Rng::from_seed(0xCB);
    let mut checked = 0;
    let names: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let (rows, cols, keep) = {
            let params = model.named_params();
            let (_, p) = params.iter().find(|(n, _)| n == name).unwrap();
            (p.rows(), p.cols(), p.keep())
        };
        for _ in 0..2 {
            let pos = probe.below(keep);
            let (r, c) = zigzag_scan(rows, cols).nth(pos).unwrap();
            let idx = r * cols + c;
            let mut orig = 0.0;
            model.for_each_param_mut(&mut |n, p| {
                if n == name {
                    orig = p.coeffs().data()[idx];
                    p.coeffs_mut().data_mut()[idx] = orig + h;
                }
            });
            let up = model.scene_loss(&features, &ids).unwrap();
            model.for_each_param_mut(&mut |n, p| {
                if n == name {
                    p.coeffs_mut().data_mut()[idx] = orig - h;
                }
            });
            let down = model.scene_loss(&features, &ids).unwrap();
            model.for_each_param_mut(&mut |n, p| {
                if n == name {
                    p.coeffs_mut().data_mut()[idx] = orig;
                }
            });
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[name].data()[idx];
            assert!(
                rel_err(a, numeric) < 1e-4,
                "captioner {name}[{idx}]: analytic {a}, numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 20, "captioner: only {checked} coefficients checked");

    pass(2, "gradient exactness", start, Duration::from_secs(60));
}

fn frk_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_frk"))
}

/// Parses one .frp payload, returning (keep, coefficient_bytes).
fn frp_payload(bytes: &[u8]) -> (usize, usize) {
    assert_eq!(&bytes[..4], b"FRP1");
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let off = 8 + 4 * rank + 8;
    let keep = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let payload = bytes.len() - (off + 4);
    assert_eq!(payload, 2 * keep, "payload must be 2 bytes per kept value");
    (keep, payload)
}

#[test]
fn criterion_03_compression_representation_776() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("lenet776");
    let output = frk_bin()
        .args([
            "compress-audit",
            "--arch",
            "lenet5",
            "--keep-total",
            "776",
            "--out",
            ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["total_kept"], 776);
    assert_eq!(report["total_original"], 61_706);

    // the serialized coefficient payload across all parameter files is
    // exactly 776 half-precision values
    let mut total_keep = 0;
    let mut total_bytes = 0;
    for entry in fs::read_dir(&ckpt).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) == Some("frp") {
            let (keep, payload) = frp_payload(&fs::read(&path).unwrap());
            total_keep += keep;
            total_bytes += payload;
        }
    }
    assert_eq!(total_keep, 776);
    assert_eq!(total_bytes, 1552);

    // the reconstructed model still executes with finite outputs
    let model = ModelGraph::load(&ckpt).unwrap();
    let x = Tensor::rand_uniform(&[1, 1, 32, 32], -1.0, 1.0, &mut Rng::from_seed(3)).unwrap();
    let logits = model.forward_eval(&x).unwrap();
    assert_eq!(logits.shape(), &[1, 10]);
    assert!(logits.data().iter().all(|v| v.is_finite()));

    pass(3, "776-coefficient representation", start, Duration::from_secs(10));
}

#[test]
fn criterion_04_parameter_audits() {
    let start = Instant::now();
    assert_eq!(ArchPlan::alexnet(1000).param_total(), 61_100_840);
    assert_eq!(ArchPlan::lenet5(10).param_total(), 61_706);
    let b0 = ArchPlan::efficientnet_b0(1000);
    let stem = b0
        .param_shapes()
        .into_iter()
        .find(|(n, _)| n == "stem.conv.weight")
        .map(|(_, s)| frk::tensor::param_count(&s))
        .unwrap();
    assert_eq!(stem, 864);
    // a real (initialized) build carries exactly the audited total
    let lenet = ModelGraph::build(ArchPlan::lenet5(10), &mut Rng::from_seed(4)).unwrap();
    assert_eq!(lenet.param_total(), 61_706);
    pass(4, "parameter audits", start, Duration::from_secs(1));
}

fn blob_setup(seed: u64) -> (ModelGraph, train::LabeledDataset) {
    let mut root = Rng::from_seed(seed);
    let mut data_rng = root.split();
    let mut model_rng = root.split();
    let data = train::synth_blobs(64, 2, 8, 8, 0.3, &mut data_rng).unwrap();
    let model = ModelGraph::build(ArchPlan::blob_net(2, 1, 8, 8), &mut model_rng).unwrap();
    (model, data)
}

#[test]
fn criterion_05_schedule_behavior() {
    let start = Instant::now();
    let (mut model, data) = blob_setup(0xC5);
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, p)| p.total()).collect();
    let target: usize = keep_floors(&sizes, 0.1).iter().sum();
    let cfg = train::TrainConfig {
        lr: 0.1,
        epochs: 14,
        batch_size: 16,
        keep_fraction: 0.1,
        decay: 0.5,
    };
    let logs = train::train(&mut model, &data, &cfg, &mut Rng::from_seed(0xC5F)).unwrap();
    for pair in logs.windows(2) {
        assert!(
            pair[1].truncated_this_epoch <= pair[0].truncated_this_epoch,
            "per-epoch truncation counts must be non-increasing: {pair:?}"
        );
    }
    assert_eq!(
        logs.last().unwrap().kept_total,
        target,
        "schedule must reach the target keep total"
    );
    assert_eq!(logs.last().unwrap().truncated_this_epoch, 0);
    pass(5, "schedule behavior", start, Duration::from_secs(60));
}

/// Independent oracle for the blob task: logistic regression on flattened
/// pixels via plain gradient descent.
fn logistic_oracle_accuracy(data: &train::LabeledDataset) -> f64 {
    let n = data.len();
    let dim = data.inputs[0].len();
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let lr = 0.5;
    for _ in 0..300 {
        let mut gw = vec![0.0f64; dim];
        let mut gb = 0.0f64;
        for (x, &label) in data.inputs.iter().zip(&data.labels) {
            let z: f64 = w.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - label as f64;
            for (g, &xv) in gw.iter_mut().zip(x.data()) {
                *g += err * xv;
            }
            gb += err;
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= lr * g / n as f64;
        }
        b -= lr * gb / n as f64;
    }
    let mut correct = 0;
    for (x, &label) in data.inputs.iter().zip(&data.labels) {
        let z: f64 = w.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>() + b;
        let pred = usize::from(z > 0.0);
        correct += usize::from(pred == label);
    }
    correct as f64 / n as f64
}

#[test]
fn criterion_06_desk_scale_fr_training() {
    let start = Instant::now();
    let seed = 0xC6;

    // sanity oracle: the dataset is separable by logistic regression
    let (_, data) = blob_setup(seed);
    let oracle = logistic_oracle_accuracy(&data);
    assert!(oracle >= 0.99, "oracle accuracy {oracle}");

    let run = |keep_fraction: f64| -> f64 {
        let (mut model, data) = blob_setup(seed);
        let cfg = train::TrainConfig {
            lr: 0.1,
            epochs: 30, // well inside the 200-epoch allowance
            batch_size: 16,
            keep_fraction,
            decay: 0.5,
        };
        let logs = train::train(&mut model, &data, &cfg, &mut Rng::from_seed(seed + 1)).unwrap();
        logs.last().unwrap().accuracy
    };

    let full = run(1.0);
    assert!(full >= 0.99, "untruncated accuracy {full}");
    let truncated = run(0.1);
    assert!(
        (full - truncated).abs() <= 0.05,
        "truncated run drifted: full {full}, truncated {truncated}"
    );
    pass(6, "desk-scale FR training", start, Duration::from_secs(120));
}

#[test]
fn criterion_07_toy_captioner_memorizes() {
    let start = Instant::now();
    let mut root = Rng::from_seed(0xC7);
    let mut data_rng = root.split();
    let mut model_rng = root.split();
    let mut train_rng = root.split();

    let dataset = caption::synth_dataset(64, 0.05, &mut data_rng).unwrap();
    let config = CaptionConfig {
        feat_dim: caption::SYNTH_FEAT_DIM,
        embed_dim: 32,
        seq_length: 25,
    };
    let mut model = CaptionModel::init(config, Vocab::synth(), &mut model_rng).unwrap();
    let scenes: Vec<(Tensor, Vec<usize>)> = dataset
        .iter()
        .map(|(f, c)| (f.clone(), model.vocab.encode(c)))
        .collect();

    let exact_match = |model: &CaptionModel| -> f64 {
        let mut hits = 0;
        for (features, caption_text) in &dataset {
            let generated = model.generate(features).unwrap();
            let expected = caption_text
                .trim_start_matches("sos ")
                .trim_end_matches(" eos");
            hits += usize::from(generated == expected);
        }
        hits as f64 / dataset.len() as f64
    };

    let mut epochs_used = 0;
    let mut matched = 0.0;
    while epochs_used < 500 {
        model
            .train_scenes(&scenes, 50, 0.2, &mut train_rng)
            .unwrap();
        epochs_used += 50;
        matched = exact_match(&model);
        if matched == 1.0 {
            break;
        }
    }
    assert_eq!(
        matched, 1.0,
        "exact match {matched} after {epochs_used} epochs"
    );

    for (features, _) in &dataset {
        let generated = model.generate(features).unwrap();
        let words: Vec<&str> = generated.split_whitespace().collect();
        assert!(words.len() <= 24, "caption too long: {generated:?}");
        assert!(!words.contains(&"sos") && !words.contains(&"eos"));
    }
    pass(7, "toy captioner memorization", start, Duration::from_secs(120));
}

#[test]
fn criterion_08_metric_fixtures_and_fuzz() {
    let start = Instant::now();
    let toks = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_string).collect() };

    let b = metrics::bleu_n(&toks("the the the"), &toks("the cat"), 1);
    assert!((b - 1.0 / 3.0).abs() < 1e-9);

    let r = metrics::rouge_l(&toks("a b c d"), &toks("a c b d"));
    assert!((r - 0.75).abs() < 1e-9);

    let m = metrics::meteor(&toks("a train is parked"), &toks("a train is parked"));
    assert!((m - 0.9922).abs() < 1e-4);

    let ident = toks("a black honda motorcycle parked outside");
    for n in 1..=4 {
        assert_eq!(metrics::bleu_n(&ident, &ident, n), 1.0);
    }
    for n in 1..=2 {
        assert_eq!(metrics::rouge_n(&ident, &ident, n), 1.0);
    }
    assert_eq!(metrics::rouge_l(&ident, &ident), 1.0);

    // 1000-case fuzz: every metric stays inside [0,1]
    let words = ["a", "b", "cat", "dog", "runs", "running", "the", "fast"];
    let mut rng = Rng::from_seed(0xC8);
    for _ in 0..1000 {
        let mut sample = |max_len: usize| -> Vec<String> {
            let len = rng.below(max_len + 1);
            (0..len)
                .map(|_| words[rng.below(words.len())].to_string())
                .collect()
        };
        let cand = sample(12);
        let reference = sample(12);
        let mut values = Vec::new();
        for n in 1..=4 {
            values.push(metrics::bleu_n(&cand, &reference, n));
        }
        for n in 1..=2 {
            values.push(metrics::rouge_n(&cand, &reference, n));
        }
        values.push(metrics::rouge_l(&cand, &reference));
        values.push(metrics::meteor(&cand, &reference));
        for v in values {
            assert!((0.0..=1.0).contains(&v), "{v} out of range for {cand:?} vs {reference:?}");
        }
    }
    pass(8, "metric fixtures and fuzz", start, Duration::from_secs(30));
}

fn fixture_annotations() -> String {
    // 12 images with caption counts cycling 1..6 → exactly two 5-caption images
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for i in 0..12i64 {
        images.push(serde_json::json!({
            "id": i,
            "file_name": format!("img_{i:02}.jpg"),
        }));
        let count = (i % 6) + 1;
        for j in 0..count {
            annotations.push(serde_json::json!({
                "image_id": i,
                "caption": format!("caption {j} of image {i}"),
            }));
        }
    }
    serde_json::json!({ "images": images, "annotations": annotations }).to_string()
}

#[test]
fn criterion_09_preprocessing_fixture() {
    let start = Instant::now();
    let text = fixture_annotations();
    let raw = dataio::ingest_annotations(&text).unwrap();
    assert_eq!(raw.0.len(), 12);
    let filtered = dataio::filter_exactly_five(&raw);
    // counts cycle 1..6 over ids 0..12: ids 4 and 10 carry five captions
    let keys: Vec<&String> = filtered.0.keys().collect();
    assert_eq!(keys, vec!["img_04.jpg", "img_10.jpg"]);
    for caps in filtered.0.values() {
        assert_eq!(caps.len(), 5);
        for c in caps {
            assert!(c.starts_with("sos ") && c.ends_with(" eos"), "{c:?}");
        }
    }

    let spec = dataio::SplitSpec {
        train: 1,
        valid: 1,
        test: 0,
        seed: 9,
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    assert_eq!(
        dataio::split_and_write(&filtered, &spec, dir_a.path()).unwrap(),
        (1, 1, 0)
    );
    dataio::split_and_write(&filtered, &spec, dir_b.path()).unwrap();
    for name in ["train.json", "valid.json", "test.json"] {
        assert_eq!(
            fs::read(dir_a.path().join(name)).unwrap(),
            fs::read(dir_b.path().join(name)).unwrap(),
            "split files must be deterministic"
        );
    }
    let train = dataio::read_captions(&dir_a.path().join("train.json")).unwrap();
    let valid = dataio::read_captions(&dir_a.path().join("valid.json")).unwrap();
    assert_eq!(train.0.len() + valid.0.len(), 2);
    assert!(train.0.keys().all(|k| !valid.0.contains_key(k)));
    pass(9, "preprocessing fixture", start, Duration::from_secs(10));
}

/// Byte-compares two directory trees.
fn assert_trees_identical(a: &Path, b: &Path) {
    let list = |root: &Path| -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    out.push(path.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        out.sort();
        out
    };
    let files_a = list(a);
    let files_b = list(b);
    assert_eq!(files_a, files_b, "file sets differ between {a:?} and {b:?}");
    for rel in files_a {
        let ba = fs::read(a.join(&rel)).unwrap();
        let bb = fs::read(b.join(&rel)).unwrap();
        assert_eq!(ba, bb, "artifact {rel:?} differs between runs");
    }
}

#[test]
fn criterion_10_cli_determinism() {
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let annotations = root.path().join("annotations.json");
    fs::write(&annotations, fixture_annotations()).unwrap();

    // each subcommand runs twice with identical flags and seed; artifacts
    // and stdout must be byte-identical
    let run = |args: &[&str]| -> Vec<u8> {
        let output = frk_bin().args(args).output().unwrap();
        assert!(
            output.status.success(),
            "frk {args:?}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        output.stdout
    };

    for pass_dir in ["a", "b"] {
        let base = root.path().join(pass_dir);
        fs::create_dir_all(&base).unwrap();

        run(&[
            "preprocess",
            "--annotations",
            annotations.to_str().unwrap(),
            "--out-dir",
            base.join("splits").to_str().unwrap(),
            "--train",
            "1",
            "--valid",
            "1",
            "--test",
            "0",
            "--seed",
            "11",
        ]);
        run(&[
            "compress-audit",
            "--arch",
            "lenet5",
            "--keep-total",
            "776",
            "--seed",
            "11",
            "--out",
            base.join("lenet776").to_str().unwrap(),
        ]);
        run(&[
            "train-demo",
            "--epochs",
            "4",
            "--keep-fraction",
            "0.5",
            "--seed",
            "11",
            "--out-dir",
            base.join("train").to_str().unwrap(),
        ]);
        run(&[
            "caption-demo",
            "--epochs",
            "30",
            "--scenes",
            "16",
            "--seed",
            "11",
            "--out-dir",
            base.join("caption").to_str().unwrap(),
        ]);
        run(&[
            "evaluate",
            "--test",
            base.join("caption/test.json").to_str().unwrap(),
            "--predictions",
            base.join("caption/prediction.json").to_str().unwrap(),
            "--out",
            base.join("report.json").to_str().unwrap(),
        ]);
    }
    assert_trees_identical(&root.path().join("a"), &root.path().join("b"));
    pass(10, "CLI determinism", start, Duration::from_secs(120));
}

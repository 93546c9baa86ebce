//! Acceptance checks for the toolkit. Each check prints one PASS or FAIL
//! line; the process exits nonzero if any check fails.
//!
//! Run with `cargo test -p medvqa-acceptance --test acceptance`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, HashSet};
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use http_body_util::BodyExt;
use medvqa_core::corpus::{
    split_corpus, tokenize, write_jsonl, AnswerType, BodyPart, DatasetSplit, ImageRecord,
    Modality, SplitName, TextVocab, TokenSequence, DEFAULT_RATIOS,
};
use medvqa_core::encoders::{
    contrastive_loss, pretrain, Checkpoint, ImageEncoderKind, ImageTensor, ModelConfig,
    PretrainConfig, TextEncoderKind, DEFAULT_TEMPERATURE,
};
use medvqa_core::fusion::{cross_entropy_from_logits, FusionKind};
use medvqa_core::model::Network;
use medvqa_core::synth::{label_text, read_reports, synthesize, FindingLexicon, FindingState, TemplateSet};
use medvqa_core::synthetic::{toy_corpus, ToySpec};
use medvqa_core::tensor::{stream_rng, Params};
use medvqa_core::trainer::{
    adadelta_step, build_model, evaluate, train, AdaDeltaConfig, AdaDeltaState, Dataset,
    TrainConfig,
};
use medvqa_core::{Error, VqaModel};
use medvqa_server::{router, PredictRequest, PredictResponse, Service};
use rand::Rng;
use serde::Deserialize;
use tower::ServiceExt;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

// ---------------------------------------------------------------------------
// Overfit fixture, shared by the overfit, freeze and service checks.

fn overfit_model() -> ModelConfig {
    ModelConfig {
        d: 128,
        image_side: 32,
        cnn_channels: [4, 8, 8, 16],
        embed_dim: 16,
        hidden_dim: 16,
        max_len: 12,
        ..ModelConfig::default()
    }
}

fn overfit_train() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

/// 20 images, 100 pairs and 10 answers, every image in the training split.
fn overfit_data() -> Dataset {
    let (corpus, tensors) = toy_corpus(&ToySpec::default()).expect("toy corpus");
    let split = DatasetSplit {
        seed: 0,
        ratios: [1.0, 0.0, 0.0],
        train: corpus.images.iter().map(|i| i.image_id.clone()).collect(),
        val: Vec::new(),
        test: Vec::new(),
    };
    Dataset::new(corpus, tensors, split).expect("dataset")
}

struct Trained {
    model: VqaModel,
    answers: medvqa_core::corpus::AnswerVocabulary,
    data: Dataset,
}

fn check_overfit(slot: &mut Option<Trained>) -> Outcome {
    let data = overfit_data();
    ensure!(data.corpus.pairs.len() == 100, "fixture has {} pairs", data.corpus.pairs.len());
    let start = Instant::now();
    let (model, answers) = build_model(&data, &overfit_model(), &overfit_train()).map_err(|e| e.to_string())?;
    ensure!(answers.len() == 10, "vocabulary has {} answers", answers.len());
    let out = train(model, answers, &data, &overfit_train()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pairs = data.pairs(SplitName::Train);
    let acc = evaluate(&out.model, &out.answers, &pairs, &data)
        .map_err(|e| e.to_string())?
        .accuracy;
    *slot = Some(Trained {
        model: out.model,
        answers: out.answers,
        data,
    });
    let detail = format!("train top-1 {acc:.4} in {:.1}s", elapsed.as_secs_f64());
    ensure!(acc >= 0.99, "{detail}, need >= 0.99");
    ensure!(elapsed <= Duration::from_secs(120), "{detail}, need <= 120s");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Gradients.

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
const WORDS: [&str; 6] = ["where", "is", "the", "lesion", "left", "lung"];

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn flat(net: &Network) -> Vec<f64> {
    let mut out = Vec::new();
    net.visit("", &mut |_, t| out.extend_from_slice(&t.data));
    out
}

fn set_param(net: &mut Network, index: usize, value: f64) {
    let mut offset = 0;
    net.visit_mut("", &mut |_, t| {
        if (offset..offset + t.len()).contains(&index) {
            t.data[index - offset] = value;
        }
        offset += t.len();
    });
}

fn model_gradient_error(seed: u64, fusion: FusionKind) -> f64 {
    let mut rng = stream_rng(seed, "acceptance-gradient");
    let config = ModelConfig {
        d: rng.random_range(2..6),
        image_side: 16,
        cnn_channels: [2, 3, 3, 2],
        embed_dim: rng.random_range(2..5),
        hidden_dim: rng.random_range(2..5),
        max_len: 5,
        fusion,
        text_encoder: if rng.random_bool(0.75) {
            TextEncoderKind::Bilstm
        } else {
            TextEncoderKind::PooledTransformerStub
        },
        head_hidden: rng.random_bool(0.5).then(|| rng.random_range(2..5)),
        seed: rng.random(),
        ..ModelConfig::default()
    };
    let n_answers = rng.random_range(2..6);
    let mut model = VqaModel::new(&config, TextVocab::build(WORDS), n_answers).unwrap();
    let image = ImageTensor::new(16, 1, (0..256).map(|_| rng.random()).collect()).unwrap();
    let question: Vec<&str> = (0..rng.random_range(0..=5))
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect();
    let tokens = tokenize(&question.join(" "), &model.text_vocab, 5);
    let target = rng.random_range(0..n_answers);

    let mut grads = model.net.zeros_like();
    model
        .loss_and_grad(&image, &tokens, target, 1.0, &mut grads)
        .unwrap();
    let analytic = flat(&grads);
    let loss = |m: &VqaModel| {
        let logits = m.logits(&image, &tokens).unwrap();
        cross_entropy_from_logits(&logits, target).unwrap().loss
    };
    let mut worst: f64 = 0.0;
    for (i, x) in flat(&model.net).into_iter().enumerate() {
        set_param(&mut model.net, i, x + FD_STEP);
        let up = loss(&model);
        set_param(&mut model.net, i, x - FD_STEP);
        let down = loss(&model);
        set_param(&mut model.net, i, x);
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn contrastive_gradient_error(seed: u64) -> f64 {
    let mut rng = stream_rng(seed, "acceptance-contrastive-gradient");
    let n = rng.random_range(2..=8);
    let d = rng.random_range(1..=16);
    let temperature = [0.07, 0.5, 1.0][seed as usize % 3];
    let mut rows = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    };
    let (img, txt) = (rows(), rows());
    let out = contrastive_loss(&img, &txt, temperature).unwrap();
    let mut worst: f64 = 0.0;
    for side in 0..2 {
        for i in 0..n {
            for j in 0..d {
                let probe = |delta: f64| {
                    let (mut a, mut b) = (img.clone(), txt.clone());
                    if side == 0 {
                        a[i][j] += delta;
                    } else {
                        b[i][j] += delta;
                    }
                    contrastive_loss(&a, &b, temperature).unwrap().loss
                };
                let numeric = (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP);
                let analytic = if side == 0 {
                    out.grad_image[i][j]
                } else {
                    out.grad_text[i][j]
                };
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}

fn check_gradients() -> Outcome {
    let product = (0..100).map(|k| model_gradient_error(k, FusionKind::Product)).fold(0.0, f64::max);
    let concat = (0..100).map(|k| model_gradient_error(1000 + k, FusionKind::Concat)).fold(0.0, f64::max);
    let contrastive = (0..100).map(contrastive_gradient_error).fold(0.0, f64::max);
    let detail = format!(
        "max relative error: product {product:.2e}, concat {concat:.2e}, contrastive {contrastive:.2e}"
    );
    ensure!(product.max(concat).max(contrastive) <= FD_TOLERANCE, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Split fidelity.

fn image(id: String, body_part: BodyPart, modality: Modality) -> ImageRecord {
    ImageRecord {
        path: format!("images/{id}.png"),
        image_id: id,
        modality,
        body_part,
        orientation: None,
        source: "acceptance".into(),
    }
}

/// Largest remainder on integer percentages with train, val, test order on
/// ties.
fn oracle_quota(n: usize, percent: [usize; 3]) -> [usize; 3] {
    let mut sizes = percent.map(|p| n * p / 100);
    let leftover = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by_key(|&i| (std::cmp::Reverse(n * percent[i] % 100), i));
    for &i in &order[..leftover] {
        sizes[i] += 1;
    }
    sizes
}

const STRATA: [(BodyPart, Modality); 6] = [
    (BodyPart::Chest, Modality::XRay),
    (BodyPart::Chest, Modality::Ct),
    (BodyPart::Head, Modality::Mri),
    (BodyPart::Head, Modality::Ct),
    (BodyPart::Abdomen, Modality::Ct),
    (BodyPart::Pelvis, Modality::Mri),
];

fn check_random_split(case: u64) -> Outcome {
    let mut rng = stream_rng(case, "acceptance-split");
    let mut images = Vec::new();
    for g in 0..rng.random_range(1..5) {
        let s = rng.random_range(0..STRATA.len());
        let (bp, m) = STRATA[s];
        for i in 0..rng.random_range(0..40) {
            images.push(image(format!("s{s}g{g}i{i}"), bp, m));
        }
    }
    let a = rng.random_range(0..=100);
    let b = rng.random_range(0..=100 - a);
    let percent = [a, b, 100 - a - b];
    let ratios = percent.map(|p| p as f64 / 100.0);
    let seed: u64 = rng.random();
    let split = split_corpus(&images, ratios, seed).map_err(|e| e.to_string())?.split;

    let sets = [&split.train, &split.val, &split.test].map(|v| v.iter().collect::<HashSet<_>>());
    ensure!(
        sets.iter().map(HashSet::len).sum::<usize>() == images.len(),
        "case {case}: sizes do not add up"
    );
    ensure!(
        sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]),
        "case {case}: parts overlap"
    );
    let mut strata: BTreeMap<(BodyPart, Modality), Vec<&String>> = BTreeMap::new();
    for img in &images {
        strata.entry(img.stratum()).or_default().push(&img.image_id);
    }
    for ids in strata.values() {
        let got = [0, 1, 2].map(|p| ids.iter().filter(|id| sets[p].contains(*id)).count());
        let want = if ids.len() < 3 {
            [ids.len(), 0, 0]
        } else {
            oracle_quota(ids.len(), percent)
        };
        ensure!(got == want, "case {case}: stratum got {got:?}, want {want:?}");
    }
    let again = split_corpus(&images, ratios, seed).map_err(|e| e.to_string())?.split;
    ensure!(
        serde_json::to_vec(&again).unwrap() == serde_json::to_vec(&split).unwrap(),
        "case {case}: not deterministic"
    );
    Ok(String::new())
}

fn check_split() -> Outcome {
    let chest: Vec<ImageRecord> = (0..642)
        .map(|i| image(format!("img{i:04}"), BodyPart::Chest, Modality::XRay))
        .collect();
    let sizes = split_corpus(&chest, DEFAULT_RATIOS, 0)
        .map_err(|e| e.to_string())?
        .split
        .sizes();
    ensure!(sizes == (450, 96, 96), "642 images split as {sizes:?}");
    for case in 0..1000 {
        check_random_split(case)?;
    }
    Ok(format!("642 -> {sizes:?}; 1000 random corpora partitioned and stratified"))
}

// ---------------------------------------------------------------------------
// Synthesis and labeling.

fn parse_state(s: &str) -> FindingState {
    match s {
        "positive" => FindingState::Positive,
        "negative" => FindingState::Negative,
        "uncertain" => FindingState::Uncertain,
        other => panic!("unknown state {other}"),
    }
}

fn check_synthesis() -> Outcome {
    let lexicon = FindingLexicon::builtin();
    let templates = TemplateSet::builtin();
    let reports = read_reports(&fixture("reports50.jsonl")).map_err(|e| e.to_string())?;
    let states: BTreeMap<String, BTreeMap<String, String>> =
        serde_json::from_slice(&std::fs::read(fixture("reports50_states.json")).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    let mut count = 0;
    for run in 0..2 {
        let corpus = synthesize(&reports, None, &lexicon, &templates).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("qa{run}.jsonl"));
        write_jsonl(&path, &corpus.pairs).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(path).unwrap());
        for p in &corpus.pairs {
            ensure!(
                p.answer_type != AnswerType::Closed || p.answer == "Yes" || p.answer == "No",
                "CLOSED answer {:?}",
                p.answer
            );
        }
        count = corpus.pairs.len();
    }
    ensure!(outputs[0] == outputs[1], "qa.jsonl differs between runs");
    let golden = std::fs::read(fixture("golden_qa.jsonl")).unwrap();
    ensure!(outputs[0] == golden, "qa.jsonl differs from the golden file");

    // Modality and body part always, orientation when given, one pair per
    // positive or negative finding, diagnosis for a single positive.
    let expected: usize = reports
        .iter()
        .map(|r| {
            let s = &states[&r.report_id];
            let pos = s.values().filter(|v| *v == "positive").count();
            let neg = s.values().filter(|v| *v == "negative").count();
            2 + usize::from(r.metadata.contains_key("orientation")) + pos + neg + usize::from(pos == 1)
        })
        .sum();
    ensure!(count == expected, "{count} pairs, hand count {expected}");
    Ok(format!("50 reports -> {count} pairs, byte-identical across runs"))
}

#[derive(Deserialize)]
struct OracleCase {
    text: String,
    expected: BTreeMap<String, String>,
}

fn check_labeler() -> Outcome {
    let lexicon = FindingLexicon::builtin();
    let cases: Vec<OracleCase> =
        serde_json::from_slice(&std::fs::read(fixture("labeler_oracle.json")).unwrap()).unwrap();
    let mut matched = 0;
    let mut misses = Vec::new();
    for case in &cases {
        let want: BTreeMap<String, FindingState> = lexicon
            .finding_ids()
            .map(|id| {
                let s = case.expected.get(id).map_or(FindingState::Unmentioned, |s| parse_state(s));
                (id.to_string(), s)
            })
            .collect();
        if label_text(&case.text, &lexicon) == want {
            matched += 1;
        } else {
            misses.push(case.text.clone());
        }
    }
    let detail = format!("{matched}/{} sentences", cases.len());
    ensure!(cases.len() == 30 && misses.is_empty(), "{detail}; mismatches: {misses:?}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Optimizer, contrastive loss and checkpoints.

fn check_adadelta() -> Outcome {
    let cfg = AdaDeltaConfig::default();
    let (rho, eps) = (cfg.rho, cfg.eps);
    let eg1 = (1.0 - rho) * 0.25;
    let d1 = -(eps.sqrt() / (eg1 + eps).sqrt()) * 0.5;
    let ed1 = (1.0 - rho) * d1 * d1;
    let eg2 = rho * eg1 + (1.0 - rho) * 4.0;
    let d2 = -((ed1 + eps).sqrt() / (eg2 + eps).sqrt()) * -2.0;

    let mut x = [1.5];
    let mut state = AdaDeltaState::zeros(1);
    adadelta_step("x", &mut x, &[0.5], &mut state, &cfg).map_err(|e| e.to_string())?;
    let e1 = (x[0] - (1.5 + cfg.lr * d1)).abs();
    adadelta_step("x", &mut x, &[-2.0], &mut state, &cfg).map_err(|e| e.to_string())?;
    let e2 = (x[0] - (1.5 + cfg.lr * (d1 + d2))).abs();
    ensure!(e1 <= 1e-12 && e2 <= 1e-12, "step errors {e1:.2e}, {e2:.2e}");

    let mut rng = stream_rng(0, "acceptance-adadelta");
    let mut p: Vec<f64> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
    let before: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
    let mut state = AdaDeltaState::zeros(32);
    adadelta_step("p", &mut p, &[0.0; 32], &mut state, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        p.iter().map(|v| v.to_bits()).collect::<Vec<_>>() == before,
        "zero gradient moved parameters"
    );
    Ok(format!("step errors {e1:.1e}, {e2:.1e}; zero-gradient step bit-identical"))
}

fn check_contrastive() -> Outcome {
    for n in 2..=8usize {
        let rows = vec![vec![0.3, -1.2, 0.7]; n];
        let loss = contrastive_loss(&rows, &rows, DEFAULT_TEMPERATURE).unwrap().loss;
        ensure!((loss - (n as f64).ln()).abs() <= 1e-9, "identical N={n}: {loss}");
    }
    let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let loss = contrastive_loss(&e, &e, 1.0).unwrap().loss;
    let want = (1.0 + (-1.0f64).exp()).ln();
    ensure!((loss - want).abs() <= 1e-9, "orthonormal: {loss} vs {want}");
    for seed in 0..200 {
        let mut rng = stream_rng(seed, "acceptance-swap");
        let n = rng.random_range(2..8);
        let mut rows = || -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
        };
        let (a, b) = (rows(), rows());
        let t = [0.07, 0.5, 2.0][seed as usize % 3];
        let ab = contrastive_loss(&a, &b, t).unwrap().loss;
        let ba = contrastive_loss(&b, &a, t).unwrap().loss;
        ensure!(ab.to_bits() == ba.to_bits(), "swap asymmetry {ab} vs {ba}");
    }
    Ok("ln N, orthonormal case and 200 swaps exact".into())
}

fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut rng = stream_rng(seed, "acceptance-checkpoint");
    let mut ck = Checkpoint::new();
    for t in 0..rng.random_range(1..6) {
        let shape: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..6)).collect();
        let n = shape.iter().product();
        let data = (0..n).map(|_| f32::from_bits(rng.random())).collect();
        ck.insert(format!("t{t}"), shape, data);
    }
    ck.meta.insert("seed".into(), serde_json::json!(seed));
    ck
}

fn check_checkpoints() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100 {
        let ck = random_checkpoint(seed);
        let path = dir.path().join("c.ckpt");
        ck.save(&path).map_err(|e| e.to_string())?;
        let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
        ensure!(ck.bit_eq(&back), "checkpoint {seed} changed on round trip");
    }
    let header = |h: serde_json::Value, payload: &[u8]| {
        let h = serde_json::to_vec(&h).unwrap();
        let mut out = b"MVQA1".to_vec();
        out.extend_from_slice(&(h.len() as u64).to_le_bytes());
        out.extend_from_slice(&h);
        out.extend_from_slice(payload);
        out
    };
    let corrupt: [(&str, Vec<u8>); 4] = [
        ("bad magic", b"XXXX".to_vec()),
        (
            "short payload",
            header(
                serde_json::json!({"version": 1, "tensors": [{"name": "w", "dtype": "f32", "shape": [10], "offset": 0}], "meta": {}}),
                &[0u8; 32],
            ),
        ),
        ("unknown version", header(serde_json::json!({"version": 2, "tensors": [], "meta": {}}), &[])),
        ("truncated header", random_checkpoint(1).to_bytes().unwrap()[..9].to_vec()),
    ];
    for (name, bytes) in &corrupt {
        match Checkpoint::from_bytes(bytes) {
            Err(Error::Format(_) | Error::Integrity(_)) => {}
            other => return Err(format!("{name}: {other:?}")),
        }
    }
    Ok("100 bit-exact round trips; 4 corrupt fixtures rejected".into())
}

// ---------------------------------------------------------------------------
// Freeze contract on the overfit fixture.

fn snapshot(model: &VqaModel, prefix: &str) -> Vec<u64> {
    let mut out = Vec::new();
    model.net.visit("", &mut |name, t| {
        if name.starts_with(prefix) {
            out.extend(t.data.iter().map(|v| v.to_bits()));
        }
    });
    out
}

fn check_freeze() -> Outcome {
    let data = overfit_data();
    let base = overfit_model();
    let pairs = data.pairs(SplitName::Train);
    let vocab = TextVocab::build(pairs.iter().map(|p| p.question.as_str()));
    let examples: Vec<(ImageTensor, TokenSequence)> = pairs
        .iter()
        .map(|p| {
            (
                data.image(&p.image_id).unwrap().clone(),
                tokenize(&p.question, &vocab, base.max_len),
            )
        })
        .collect();
    let pre = pretrain(
        &examples,
        &base,
        &vocab,
        &PretrainConfig {
            steps: 20,
            ..PretrainConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("encoders.ckpt");
    pre.checkpoint.save(&weights).map_err(|e| e.to_string())?;

    for (prefix, freeze_image) in [("image.", true), ("text.", false)] {
        let cfg = ModelConfig {
            image_encoder: ImageEncoderKind::PretrainedCheckpoint,
            image_weights: Some(weights.clone()),
            text_encoder: TextEncoderKind::PretrainedCheckpoint,
            text_weights: Some(weights.clone()),
            freeze_image,
            freeze_text: !freeze_image,
            ..base.clone()
        };
        let (model, answers) = build_model(&data, &cfg, &overfit_train()).map_err(|e| e.to_string())?;
        let frozen = snapshot(&model, prefix);
        let head = snapshot(&model, "head.");
        let out = train(model, answers, &data, &overfit_train()).map_err(|e| e.to_string())?;
        ensure!(snapshot(&out.model, prefix) == frozen, "{prefix} tensors changed");
        ensure!(snapshot(&out.model, "head.") != head, "head did not train");
    }
    Ok("image and text encoders bit-identical after 200 frozen epochs".into())
}

// ---------------------------------------------------------------------------
// Service equivalence.

fn png(image: &ImageTensor) -> Vec<u8> {
    let side = image.side() as u32;
    let bytes: Vec<u8> = image.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(side, side, bytes).expect("gray image");
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
        .unwrap();
    out
}

fn check_service(trained: Option<&Trained>) -> Outcome {
    let trained = trained.ok_or("no trained fixture model")?;
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("overfit.ckpt");
    let vocab = dir.path().join("vocab.json");
    trained
        .model
        .to_checkpoint(Some(&trained.answers))
        .and_then(|c| c.save(&ckpt))
        .map_err(|e| e.to_string())?;
    trained.answers.save(&vocab).map_err(|e| e.to_string())?;
    let service = Arc::new(Service::load(&ckpt, &vocab).map_err(|e| e.to_string())?);

    let runtime = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let pairs = &trained.data.corpus.pairs;
    let mut worst: f64 = 0.0;
    for (k, pair) in pairs.iter().take(50).enumerate() {
        let bytes = png(trained.data.image(&pair.image_id).unwrap());
        let body = serde_json::to_vec(&PredictRequest {
            image: base64::engine::general_purpose::STANDARD.encode(&bytes),
            question: pair.question.clone(),
            top_k: Some(10),
        })
        .unwrap();
        let request = Request::post("/predict")
            .header("content-type", "application/json")
            .body(Body::from(body))
            .unwrap();
        let (status, body) = runtime.block_on(async {
            let resp = router(service.clone()).oneshot(request).await.unwrap();
            (resp.status(), resp.into_body().collect().await.unwrap().to_bytes())
        });
        ensure!(status == StatusCode::OK, "request {k}: {status}");
        let got: PredictResponse = serde_json::from_slice(&body).map_err(|e| e.to_string())?;

        // In-process prediction on the same decoded tensor.
        let tensor = service.decode_image(&bytes).map_err(|e| e.to_string())?;
        let want = trained
            .model
            .predict(&tensor, &pair.question, &trained.answers, 10)
            .map_err(|e| e.to_string())?;
        ensure!(got.answer == want.answer, "request {k}: {} vs {}", got.answer, want.answer);
        ensure!(got.top_k.len() == want.top_k.len(), "request {k}: top-k length");
        worst = worst.max((got.confidence - want.confidence).abs());
        for (g, (a, p)) in got.top_k.iter().zip(&want.top_k) {
            ensure!(&g.answer == a, "request {k}: top-k order differs");
            worst = worst.max((g.prob - p).abs());
        }
    }
    ensure!(worst <= 1e-6, "max probability difference {worst:.2e}");
    Ok(format!("50 requests agree, max probability difference {worst:.1e}"))
}

// ---------------------------------------------------------------------------

fn run(name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  {name:<28} {detail} ({secs:.1}s)");
            true
        }
        Err(detail) => {
            println!("FAIL  {name:<28} {detail} ({secs:.1}s)");
            false
        }
    }
}

fn main() {
    // The libtest flags passed by `cargo test` are not used here.
    let mut trained = None;
    let results = [
        run("overfit sanity", || check_overfit(&mut trained)),
        run("gradient suite", check_gradients),
        run("split fidelity", check_split),
        run("synthesis determinism", check_synthesis),
        run("labeler oracle", check_labeler),
        run("adadelta oracle", check_adadelta),
        run("contrastive loss", check_contrastive),
        run("freeze contract", check_freeze),
        run("checkpoint round-trip", check_checkpoints),
        run("service equivalence", || check_service(trained.as_ref())),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "\nacceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

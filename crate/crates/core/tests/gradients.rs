//! Analytic gradients against central finite differences at float64.

use medvqa_core::corpus::{tokenize, TextVocab, TokenSequence};
use medvqa_core::encoders::{contrastive_loss, ImageTensor, ModelConfig, TextEncoderKind};
use medvqa_core::fusion::{cross_entropy_from_logits, FusionKind};
use medvqa_core::model::Network;
use medvqa_core::tensor::{stream_rng, Params};
use medvqa_core::VqaModel;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

struct Instance {
    model: VqaModel,
    image: ImageTensor,
    tokens: TokenSequence,
    target: usize,
}

const WORDS: [&str; 6] = ["where", "is", "the", "lesion", "left", "lung"];

fn instance(seed: u64, fusion: FusionKind) -> Instance {
    let mut rng = stream_rng(seed, "gradient-instance");
    let text_vocab = TextVocab::build(WORDS);
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
    let model = VqaModel::new(&config, text_vocab, n_answers).unwrap();
    let data = (0..16 * 16).map(|_| rng.random::<f64>()).collect();
    let image = ImageTensor::new(16, 1, data).unwrap();
    let n_words = rng.random_range(0..=5);
    let question: Vec<&str> = (0..n_words)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect();
    let tokens = tokenize(&question.join(" "), &model.text_vocab, 5);
    Instance {
        model,
        image,
        tokens,
        target: rng.random_range(0..n_answers),
    }
}

fn loss(inst: &Instance) -> f64 {
    let logits = inst.model.logits(&inst.image, &inst.tokens).unwrap();
    cross_entropy_from_logits(&logits, inst.target).unwrap().loss
}

/// Flattened parameter values, in visit order.
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

/// Largest relative error over every trainable scalar, and the tensor
/// where it occurred.
fn end_to_end_error(mut inst: Instance) -> (f64, String) {
    let mut grads = inst.model.net.zeros_like();
    inst.model
        .loss_and_grad(&inst.image, &inst.tokens, inst.target, 1.0, &mut grads)
        .unwrap();
    let analytic = flat(&grads);
    let mut names = Vec::new();
    inst.model
        .net
        .visit("", &mut |name, t| names.extend(std::iter::repeat_n(name.to_string(), t.len())));
    let base = flat(&inst.model.net);
    let mut worst = (0.0, String::new());
    for (i, &x) in base.iter().enumerate() {
        set_param(&mut inst.model.net, i, x + STEP);
        let up = loss(&inst);
        set_param(&mut inst.model.net, i, x - STEP);
        let down = loss(&inst);
        set_param(&mut inst.model.net, i, x);
        let err = rel_err(analytic[i], (up - down) / (2.0 * STEP));
        if err > worst.0 {
            worst = (err, names[i].clone());
        }
    }
    worst
}

fn run_suite(fusion: FusionKind, salt: u64) {
    let mut worst = (0.0, String::new());
    for k in 0..100 {
        let (err, name) = end_to_end_error(instance(salt * 1000 + k, fusion));
        if err > worst.0 {
            worst = (err, format!("instance {k}, {name}"));
        }
    }
    assert!(worst.0 <= TOLERANCE, "max relative error {} at {}", worst.0, worst.1);
}

#[test]
fn end_to_end_gradients_with_product_fusion() {
    run_suite(FusionKind::Product, 1);
}

#[test]
fn end_to_end_gradients_with_concat_fusion() {
    run_suite(FusionKind::Concat, 2);
}

#[test]
fn contrastive_gradients() {
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let mut rng = stream_rng(k, "contrastive-gradient");
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=16);
        let temperature = [0.07, 0.5, 1.0][k as usize % 3];
        let mut rows = |_| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        };
        let (img, txt) = (rows(0), rows(1));
        let out = contrastive_loss(&img, &txt, temperature).unwrap();
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
                    let numeric = (probe(STEP) - probe(-STEP)) / (2.0 * STEP);
                    let analytic = if side == 0 {
                        out.grad_image[i][j]
                    } else {
                        out.grad_text[i][j]
                    };
                    worst = worst.max(rel_err(analytic, numeric));
                }
            }
        }
    }
    assert!(worst <= TOLERANCE, "max relative error {worst}");
}

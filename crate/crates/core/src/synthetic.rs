//! Seeded toy corpora with generated images, for demos, tests and benches.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::corpus::{
    AnswerType, BodyPart, Corpus, ImageRecord, Language, Modality, Provenance, QaPair,
};
use crate::encoders::ImageTensor;
use crate::error::{Error, Result};
use crate::tensor::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub images: usize,
    pub pairs_per_image: usize,
    /// Distinct answers; the first two are "Yes" and "No".
    pub answers: usize,
    pub side: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            images: 20,
            pairs_per_image: 5,
            answers: 10,
            side: 32,
            channels: 1,
            seed: 0,
        }
    }
}

const QUESTIONS: [&str; 8] = [
    "What organ is shown in this image?",
    "Is there an abnormality in the upper region?",
    "Which side shows the lesion?",
    "Does the picture contain a nodule?",
    "What is the largest structure here?",
    "Is the image taken in a transverse plane?",
    "What color is the brightest area?",
    "Where is the abnormality located?",
];

pub fn toy_answer(index: usize) -> String {
    match index {
        0 => "Yes".into(),
        1 => "No".into(),
        i => format!("answer {i}"),
    }
}

/// Low-frequency pattern: a random 4x4 grid, bilinearly upsampled.
fn toy_image(side: usize, channels: usize, seed: u64, index: usize) -> ImageTensor {
    let mut rng = stream_rng(seed, &format!("toy/image{index}"));
    let grid: Vec<f64> = (0..16 * channels).map(|_| rng.random::<f64>()).collect();
    let mut data = Vec::with_capacity(side * side * channels);
    let scale = 3.0 / (side.max(2) - 1) as f64;
    for y in 0..side {
        for x in 0..side {
            let (gy, gx) = (y as f64 * scale, x as f64 * scale);
            let (y0, x0) = ((gy.floor() as usize).min(2), (gx.floor() as usize).min(2));
            let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
            for c in 0..channels {
                let at = |yy: usize, xx: usize| grid[(yy * 4 + xx) * channels + c];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                data.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(side, channels, data).expect("values in range")
}

/// A single-stratum (chest X-Ray) corpus. Each image asks the first
/// `pairs_per_image` questions, and answers are drawn so that every answer
/// index occurs.
pub fn toy_corpus(spec: &ToySpec) -> Result<(Corpus, HashMap<String, ImageTensor>)> {
    if spec.answers < 2 || spec.pairs_per_image == 0 || spec.pairs_per_image > QUESTIONS.len() {
        return Err(Error::Config(format!(
            "toy corpus needs >= 2 answers and 1..={} questions per image",
            QUESTIONS.len()
        )));
    }
    if spec.images * spec.pairs_per_image < spec.answers {
        return Err(Error::Config("too few pairs to use every answer".into()));
    }
    let mut rng = stream_rng(spec.seed, "toy/answers");
    let mut corpus = Corpus::default();
    let mut tensors = HashMap::new();
    for i in 0..spec.images {
        let image_id = format!("img{i:03}");
        corpus.images.push(ImageRecord {
            image_id: image_id.clone(),
            path: format!("images/{image_id}.png"),
            modality: Modality::XRay,
            body_part: BodyPart::Chest,
            orientation: None,
            source: "toy".into(),
        });
        tensors.insert(image_id.clone(), toy_image(spec.side, spec.channels, spec.seed, i));
        for (q, question) in QUESTIONS.iter().take(spec.pairs_per_image).enumerate() {
            let k = i * spec.pairs_per_image + q;
            let a = if k < spec.answers {
                k
            } else {
                rng.random_range(0..spec.answers)
            };
            let answer = toy_answer(a);
            corpus.pairs.push(QaPair {
                pair_id: format!("{image_id}-q{q}"),
                image_id: image_id.clone(),
                question: question.to_string(),
                answer_type: if a < 2 { AnswerType::Closed } else { AnswerType::Open },
                answer,
                q_lang: Language::En,
                provenance: Provenance::default(),
            });
        }
    }
    Ok((corpus, tensors))
}

/// Writes the toy corpus (JSONL files plus 8-bit PNG images) under `dir`.
/// Returns the tensors as they decode from the written PNGs.
pub fn write_toy_corpus(dir: &Path, spec: &ToySpec) -> Result<(Corpus, HashMap<String, ImageTensor>)> {
    let (corpus, tensors) = toy_corpus(spec)?;
    corpus.write(dir)?;
    let mut decoded = HashMap::new();
    for rec in &corpus.images {
        let t = &tensors[&rec.image_id];
        let bytes: Vec<u8> = t.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        let side = spec.side as u32;
        let path = dir.join(&rec.path);
        std::fs::create_dir_all(path.parent().expect("image path has a parent"))?;
        let img = match spec.channels {
            1 => image::DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(side, side, bytes).expect("buffer size"),
            ),
            _ => image::DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(side, side, bytes).expect("buffer size"),
            ),
        };
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        let back = ImageTensor::decode(&std::fs::read(&path)?, spec.side, spec.channels)?;
        decoded.insert(rec.image_id.clone(), back);
    }
    Ok((corpus, decoded))
}

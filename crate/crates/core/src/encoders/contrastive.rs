//! Symmetric InfoNCE over a batch of paired image and text embeddings.
//!
//! Rows are L2-normalised, `S = U V^T / temperature`, and the loss is the
//! average of the row-wise and column-wise cross-entropies with the diagonal
//! as targets.

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// d loss / d image_embs (pre-normalisation rows)
    pub grad_image: Vec<Vec<f64>>,
    pub grad_text: Vec<Vec<f64>>,
}

fn normalize(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    rows.iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            (r.iter().map(|v| v / n).collect(), n)
        })
        .unzip()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gradient of `u = x / |x|` pulled back to `x`.
fn normalize_backward(unit: &[f64], norm: f64, grad_unit: &[f64]) -> Vec<f64> {
    let proj = dot(unit, grad_unit);
    unit.iter()
        .zip(grad_unit)
        .map(|(u, g)| (g - u * proj) / norm)
        .collect()
}

pub fn contrastive_loss(
    image_embs: &[Vec<f64>],
    text_embs: &[Vec<f64>],
    temperature: f64,
) -> Result<ContrastiveOutput> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature must be positive (got {temperature})"
        )));
    }
    let n = image_embs.len();
    if n < 2 {
        return Err(Error::Domain(format!(
            "contrastive batch needs at least 2 pairs (got {n})"
        )));
    }
    if text_embs.len() != n {
        return Err(Error::Shape(format!(
            "{n} image embeddings vs {} text embeddings",
            text_embs.len()
        )));
    }
    let d = image_embs[0].len();
    if image_embs.iter().chain(text_embs).any(|r| r.len() != d) {
        return Err(Error::Shape("embedding rows differ in length".into()));
    }

    let (u, u_norm) = normalize(image_embs);
    let (v, v_norm) = normalize(text_embs);
    let sim: Vec<Vec<f64>> = u
        .iter()
        .map(|ui| v.iter().map(|vj| dot(ui, vj) / temperature).collect())
        .collect();

    let row_lse: Vec<f64> = sim.iter().map(|row| log_sum_exp(row.iter().copied())).collect();
    let col_lse: Vec<f64> = (0..n)
        .map(|j| log_sum_exp(sim.iter().map(move |row| row[j])))
        .collect();
    let nf = n as f64;
    let row_loss = (0..n).map(|i| row_lse[i] - sim[i][i]).sum::<f64>() / nf;
    let col_loss = (0..n).map(|j| col_lse[j] - sim[j][j]).sum::<f64>() / nf;
    let loss = 0.5 * (row_loss + col_loss);

    // dL/dS
    let mut grad_sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let p_row = (sim[i][j] - row_lse[i]).exp();
            let p_col = (sim[i][j] - col_lse[j]).exp();
            grad_sim[i][j] = 0.5 / nf * ((p_row - target) + (p_col - target));
        }
    }

    let mut grad_image = Vec::with_capacity(n);
    for i in 0..n {
        let mut gu = vec![0.0; d];
        for j in 0..n {
            let w = grad_sim[i][j] / temperature;
            for (g, x) in gu.iter_mut().zip(&v[j]) {
                *g += w * x;
            }
        }
        grad_image.push(normalize_backward(&u[i], u_norm[i], &gu));
    }
    let mut grad_text = Vec::with_capacity(n);
    for j in 0..n {
        let mut gv = vec![0.0; d];
        for i in 0..n {
            let w = grad_sim[i][j] / temperature;
            for (g, x) in gv.iter_mut().zip(&u[i]) {
                *g += w * x;
            }
        }
        grad_text.push(normalize_backward(&v[j], v_norm[j], &gv));
    }

    Ok(ContrastiveOutput {
        loss,
        grad_image,
        grad_text,
    })
}

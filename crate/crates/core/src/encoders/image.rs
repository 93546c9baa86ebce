use image::imageops::FilterType;

use super::layers::{avg_pool2, avg_pool2_backward, Conv3x3, Linear};
use crate::error::{Error, Result};
use crate::tensor::{join, Params, Tensor};

/// Square image, row-major `H x W x C`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    side: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(side: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != side * side * channels {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {side}x{side}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Domain(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            side,
            channels,
            data,
        })
    }

    pub fn zeros(side: usize, channels: usize) -> Self {
        Self {
            side,
            channels,
            data: vec![0.0; side * side * channels],
        }
    }

    /// Decodes PNG/JPEG bytes, resizes to `side x side` with bilinear
    /// filtering and scales 8-bit values to `[0, 1]`.
    pub fn decode(bytes: &[u8], side: usize, channels: usize) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?;
        let side32 = u32::try_from(side).map_err(|_| Error::Shape("side too large".into()))?;
        let raw: Vec<u8> = match channels {
            1 => image::imageops::resize(&img.to_luma8(), side32, side32, FilterType::Triangle)
                .into_raw(),
            3 => image::imageops::resize(&img.to_rgb8(), side32, side32, FilterType::Triangle)
                .into_raw(),
            c => return Err(Error::Shape(format!("unsupported channel count {c}"))),
        };
        let data = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
        Self::new(side, channels, data)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel-major copy for the convolution stack.
    fn to_chw(&self) -> Vec<f64> {
        let (s, c) = (self.side, self.channels);
        let mut out = vec![0.0; s * s * c];
        for y in 0..s {
            for x in 0..s {
                for ch in 0..c {
                    out[ch * s * s + y * s + x] = self.data[(y * s + x) * c + ch];
                }
            }
        }
        out
    }
}

/// Four conv3x3 -> tanh -> avgpool2 stages, global average pooling, then a
/// linear projection to the embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallCnn {
    pub convs: Vec<Conv3x3>,
    pub proj: Linear,
    side: usize,
}

/// Saved activations of one [`SmallCnn::forward`] call.
#[derive(Debug, Clone)]
pub struct CnnTrace {
    /// Input to each stage, `[C, H, W]`.
    stage_inputs: Vec<Vec<f64>>,
    /// tanh outputs of each stage before pooling.
    activations: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

impl SmallCnn {
    pub fn new(side: usize, in_channels: usize, channels: [usize; 4], d: usize, seed: u64) -> Self {
        let mut convs = Vec::with_capacity(4);
        let mut cin = in_channels;
        for (i, &cout) in channels.iter().enumerate() {
            convs.push(Conv3x3::new(cin, cout, seed, &format!("image.conv{i}")));
            cin = cout;
        }
        Self {
            convs,
            proj: Linear::new(cin, d, seed, "image.proj"),
            side,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn output_dim(&self) -> usize {
        self.proj.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Conv3x3::zeros_like).collect(),
            proj: self.proj.zeros_like(),
            side: self.side,
        }
    }

    fn check(&self, image: &ImageTensor) -> Result<()> {
        if image.side != self.side || image.channels != self.in_channels() {
            return Err(Error::Shape(format!(
                "image is {}x{}x{}, encoder expects {}x{}x{}",
                image.side,
                image.side,
                image.channels,
                self.side,
                self.side,
                self.in_channels()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.forward(image)?.0)
    }

    pub fn forward(&self, image: &ImageTensor) -> Result<(Vec<f64>, CnnTrace)> {
        self.check(image)?;
        let mut x = image.to_chw();
        let mut s = self.side;
        let mut stage_inputs = Vec::with_capacity(4);
        let mut activations = Vec::with_capacity(4);
        for conv in &self.convs {
            let mut a = conv.forward(&x, s, s);
            a.iter_mut().for_each(|v| *v = v.tanh());
            let pooled = avg_pool2(&a, conv.out_channels(), s, s);
            stage_inputs.push(std::mem::replace(&mut x, pooled));
            activations.push(a);
            s /= 2;
        }
        let c = self.convs[3].out_channels();
        let area = (s * s) as f64;
        let gap: Vec<f64> = x.chunks_exact(s * s).map(|p| p.iter().sum::<f64>() / area).collect();
        debug_assert_eq!(gap.len(), c);
        let emb = self.proj.forward(&gap);
        Ok((
            emb,
            CnnTrace {
                stage_inputs,
                activations,
                pooled: gap,
            },
        ))
    }

    /// Accumulates parameter gradients for a gradient on the embedding.
    pub fn backward(&self, trace: &CnnTrace, grad_emb: &[f64], grads: &mut SmallCnn) {
        let g_gap = self.proj.backward(&trace.pooled, grad_emb, &mut grads.proj);
        let s_last = self.side >> 4;
        let area = (s_last * s_last) as f64;
        let mut g: Vec<f64> = g_gap
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / area, s_last * s_last))
            .collect();
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let s = self.side >> i;
            let mut g_act = avg_pool2_backward(&g, conv.out_channels(), s, s);
            for (ga, a) in g_act.iter_mut().zip(&trace.activations[i]) {
                *ga *= 1.0 - a * a;
            }
            g = conv.backward(&trace.stage_inputs[i], &g_act, s, s, &mut grads.convs[i]);
        }
    }
}

impl Params for SmallCnn {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit(&join(prefix, &format!("conv{i}")), f);
        }
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(ImageTensor::new(2, 1, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(ImageTensor::new(2, 1, vec![0.0, f64::NAN, 1.0, 0.5]).is_err());
        assert!(ImageTensor::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_image_gives_finite_embedding() {
        let cnn = SmallCnn::new(16, 1, [2, 3, 3, 4], 8, 5);
        let emb = cnn.encode(&ImageTensor::zeros(16, 1)).unwrap();
        assert_eq!(emb.len(), 8);
        assert!(emb.iter().all(|v| v.is_finite()));
        assert_eq!(emb, cnn.encode(&ImageTensor::zeros(16, 1)).unwrap());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let cnn = SmallCnn::new(16, 1, [2, 2, 2, 2], 4, 0);
        assert!(matches!(
            cnn.encode(&ImageTensor::zeros(32, 1)),
            Err(Error::Shape(_))
        ));
        assert!(cnn.encode(&ImageTensor::zeros(16, 3)).is_err());
    }

    #[test]
    fn decode_resizes_png() {
        let mut png = Vec::new();
        let img = image::GrayImage::from_fn(40, 30, |x, _| image::Luma([(x * 6) as u8]));
        img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .unwrap();
        let t = ImageTensor::decode(&png, 16, 1).unwrap();
        assert_eq!(t.side(), 16);
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let rgb = ImageTensor::decode(&png, 16, 3).unwrap();
        assert_eq!(rgb.data().len(), 16 * 16 * 3);
        assert!(ImageTensor::decode(b"not an image", 16, 1).is_err());
    }
}

//! Dense (height, width, channel) tensors and the three CNN primitives the
//! backbone needs: stride-1 convolution with per-kernel bias, ReLU and
//! non-overlapping 2x2 max-pooling.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major `(y, x, channel)` tensor of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "tensor data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite tensor element at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0 && value.is_finite());
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a single-channel tensor from a row-major plane.
    pub fn from_plane(height: usize, width: usize, plane: Vec<f32>) -> Result<Self> {
        Self::new(height, width, 1, plane)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    /// Copies out one channel as a `height x width x 1` tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Tensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        Tensor::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Convolution weights indexed `(k, ky, kx, cin)`, one scalar bias per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    kernel_count: usize,
    kernel_height: usize,
    kernel_width: usize,
    in_channels: usize,
    weights: Vec<f32>,
    biases: Vec<f32>,
}

impl FilterBank {
    pub fn new(
        kernel_count: usize,
        kernel_height: usize,
        kernel_width: usize,
        in_channels: usize,
        weights: Vec<f32>,
        biases: Vec<f32>,
    ) -> Result<Self> {
        if kernel_count == 0 || kernel_height == 0 || kernel_width == 0 || in_channels == 0 {
            return Err(Error::invalid("filter bank dimensions must be positive"));
        }
        let expected = kernel_count * kernel_height * kernel_width * in_channels;
        if weights.len() != expected {
            return Err(Error::invalid(format!(
                "filter bank has {} weights, expected {expected}",
                weights.len()
            )));
        }
        if biases.len() != kernel_count {
            return Err(Error::invalid(format!(
                "filter bank has {} biases, expected {kernel_count}",
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::invalid("filter bank contains non-finite values"));
        }
        Ok(Self {
            kernel_count,
            kernel_height,
            kernel_width,
            in_channels,
            weights,
            biases,
        })
    }

    pub fn kernel_count(&self) -> usize {
        self.kernel_count
    }

    pub fn kernel_height(&self) -> usize {
        self.kernel_height
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel_width
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `(kernel_count, kernel_height, kernel_width, in_channels)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.kernel_count,
            self.kernel_height,
            self.kernel_width,
            self.in_channels,
        )
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn biases(&self) -> &[f32] {
        &self.biases
    }

    pub fn weight(&self, k: usize, ky: usize, kx: usize, cin: usize) -> f32 {
        self.weights[((k * self.kernel_height + ky) * self.kernel_width + kx) * self.in_channels + cin]
    }

    /// Multiplies every weight and bias by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<FilterBank> {
        FilterBank::new(
            self.kernel_count,
            self.kernel_height,
            self.kernel_width,
            self.in_channels,
            self.weights.iter().map(|w| w * factor).collect(),
            self.biases.iter().map(|b| b * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output keeps the input's spatial size.
    Same,
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
}

/// Stride-1 2-D cross-correlation plus per-kernel bias.
///
/// Each output element is accumulated in `f64` in `(ky, kx, cin)` order, so
/// results are bit-stable regardless of how rows are scheduled.
pub fn conv2d(input: &Tensor, bank: &FilterBank, padding: Padding) -> Result<Tensor> {
    if input.channels != bank.in_channels {
        return Err(Error::invalid(format!(
            "input has {} channels but filter bank expects {}",
            input.channels, bank.in_channels
        )));
    }
    let (kc, kh, kw, cin) = bank.dims();
    let (pad_top, pad_left, out_h, out_w) = match padding {
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, input.height, input.width),
        Padding::Valid => {
            if kh > input.height || kw > input.width {
                return Err(Error::invalid(format!(
                    "{kh}x{kw} kernel does not fit a {}x{} input without padding",
                    input.height, input.width
                )));
            }
            (0, 0, input.height - kh + 1, input.width - kw + 1)
        }
    };
    let patch_len = kh * kw * cin;
    let mut out = vec![0f32; out_h * out_w * kc];

    out.par_chunks_mut(out_w * kc)
        .enumerate()
        .for_each(|(oy, row)| {
            let mut patch = vec![0f32; patch_len];
            for ox in 0..out_w {
                // gather the receptive field, zero outside the input
                for ky in 0..kh {
                    let iy = (oy + ky) as isize - pad_top as isize;
                    for kx in 0..kw {
                        let ix = (ox + kx) as isize - pad_left as isize;
                        let dst = &mut patch[(ky * kw + kx) * cin..(ky * kw + kx + 1) * cin];
                        if iy < 0 || ix < 0 || iy >= input.height as isize || ix >= input.width as isize {
                            dst.fill(0.0);
                        } else {
                            let base = input.index(iy as usize, ix as usize, 0);
                            dst.copy_from_slice(&input.data[base..base + cin]);
                        }
                    }
                }
                let cell = &mut row[ox * kc..(ox + 1) * kc];
                for (k, slot) in cell.iter_mut().enumerate() {
                    let w = &bank.weights[k * patch_len..(k + 1) * patch_len];
                    let acc: f64 = w
                        .iter()
                        .zip(&patch)
                        .map(|(&a, &b)| a as f64 * b as f64)
                        .sum();
                    *slot = (acc + bank.biases[k] as f64) as f32;
                }
            }
        });

    Tensor::new(out_h, out_w, kc, out)
        .map_err(|_| Error::invalid("convolution overflowed to a non-finite value"))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        height: input.height,
        width: input.width,
        channels: input.channels,
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Non-overlapping 2x2 max-pooling; odd spatial sizes are rejected.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    if input.height % 2 != 0 || input.width % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2 needs even spatial dimensions, got {}x{}",
            input.height, input.width
        )));
    }
    let (oh, ow, c) = (input.height / 2, input.width / 2, input.channels);
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let a = input.get(2 * y, 2 * x, ch);
                let b = input.get(2 * y, 2 * x + 1, ch);
                let d = input.get(2 * y + 1, 2 * x, ch);
                let e = input.get(2 * y + 1, 2 * x + 1, ch);
                out.push(a.max(b).max(d.max(e)));
            }
        }
    }
    Ok(Tensor {
        height: oh,
        width: ow,
        channels: c,
        data: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
        Tensor::new(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_bank(rng: &mut ChaCha8Rng, k: usize, kh: usize, kw: usize, cin: usize) -> FilterBank {
        FilterBank::new(
            k,
            kh,
            kw,
            cin,
            (0..k * kh * kw * cin).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_1x1() {
        let input = Tensor::new(1, 1, 1, vec![5.0]).unwrap();
        let bank = FilterBank::new(1, 1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d(&input, &bank, Padding::Same).unwrap().data(), &[5.0]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = random_bank(&mut rng, 3, 3, 3, 1);
        let out = conv2d(&Tensor::zeros(4, 4, 1), &bank, Padding::Same).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for k in 0..3 {
                    assert_eq!(out.get(y, x, k), bank.biases()[k]);
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let bank = FilterBank::new(1, 3, 3, 2, vec![0.0; 18], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&Tensor::zeros(4, 4, 3), &bank, Padding::Same),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_weights_rejected() {
        let err = FilterBank::new(1, 1, 1, 1, vec![f32::NAN], vec![0.0]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn valid_padding_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(&mut rng, 5, 7, 2);
        let bank = random_bank(&mut rng, 4, 3, 3, 2);
        let out = conv2d(&input, &bank, Padding::Valid).unwrap();
        assert_eq!(out.shape(), (3, 5, 4));
        // the valid output is the interior of the same-padded one
        let same = conv2d(&input, &bank, Padding::Same).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                for k in 0..4 {
                    assert_eq!(out.get(y, x, k), same.get(y + 1, x + 1, k));
                }
            }
        }
    }

    #[test]
    fn relu_examples() {
        let t = Tensor::new(1, 3, 1, vec![-1.0, 0.0, 2.5]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.5]);
        let pos = Tensor::new(1, 2, 1, vec![0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn maxpool_examples() {
        let t = Tensor::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2(&t).unwrap().data(), &[4.0]);
        let c = Tensor::filled(6, 4, 2, 1.5);
        assert_eq!(maxpool2(&c).unwrap(), Tensor::filled(3, 2, 2, 1.5));
        assert!(matches!(
            maxpool2(&Tensor::zeros(3, 4, 1)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn channel_extraction() {
        let t = Tensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.channel(1).data(), &[2.0, 4.0]);
    }

    proptest! {
        #[test]
        fn conv_is_linear(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, 5, 6, 2);
            let y = random_tensor(&mut rng, 5, 6, 2);
            let mut bank = random_bank(&mut rng, 3, 3, 3, 2);
            bank.biases.iter_mut().for_each(|b| *b = 0.0);
            let combo = Tensor::new(5, 6, 2, x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = conv2d(&combo, &bank, Padding::Same).unwrap();
            let cx = conv2d(&x, &bank, Padding::Same).unwrap();
            let cy = conv2d(&y, &bank, Padding::Same).unwrap();
            for i in 0..lhs.data().len() {
                let rhs = a * cx.data()[i] + b * cy.data()[i];
                let l = lhs.data()[i];
                prop_assert!((l - rhs).abs() <= 1e-5 * l.abs().max(rhs.abs()).max(1.0));
            }
        }

        #[test]
        fn maxpool_commutes_with_shift(seed in 0u64..1000, c in -4.0f32..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, 4, 6, 3);
            let shifted = t.map(|v| v + c).unwrap();
            let lhs = maxpool2(&shifted).unwrap();
            let rhs = maxpool2(&t).unwrap().map(|v| v + c).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn relu_idempotent(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, 3, 4, 2);
            prop_assert_eq!(relu(&relu(&t)), relu(&t));
        }

        #[test]
        fn conv_output_finite(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, 4, 4, 3).map(|v| v * 1e3).unwrap();
            let bank = random_bank(&mut rng, 2, 3, 3, 3);
            let out = conv2d(&t, &bank, Padding::Same).unwrap();
            prop_assert!(out.data().iter().all(|v| v.is_finite()));
        }
    }
}

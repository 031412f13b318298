//! Seeded toy datasets for smoke tests: horizontal vs vertical stripes.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::FilterBank;
use crate::vgg::{BackboneSpec, WeightStore};

#[derive(Debug, Clone, PartialEq)]
pub struct StripeParams {
    pub per_class: usize,
    pub size: u32,
    pub seed: u64,
    /// Uniform per-pixel noise amplitude in intensity units.
    pub noise: u8,
}

impl Default for StripeParams {
    fn default() -> Self {
        Self {
            per_class: 20,
            size: 64,
            seed: 0,
            noise: 20,
        }
    }
}

/// Renders one stripe image; `vertical` selects the stripe direction.
pub fn stripe_image(rng: &mut ChaCha8Rng, size: u32, vertical: bool, noise: u8) -> RgbImage {
    let period = rng.gen_range(6..=16u32);
    let phase = rng.gen_range(0..period);
    let lo = rng.gen_range(10..90i32);
    let hi = rng.gen_range(160..245i32);
    let tint: [i32; 3] = [rng.gen_range(-15..=15), rng.gen_range(-15..=15), rng.gen_range(-15..=15)];
    let n = noise as i32;
    RgbImage::from_fn(size, size, |x, y| {
        let t = if vertical { x } else { y };
        let base = if (t + phase) % period < period / 2 { hi } else { lo };
        let jitter = if n > 0 { rng.gen_range(-n..=n) } else { 0 };
        Rgb(tint.map(|d| (base + d + jitter).clamp(0, 255) as u8))
    })
}

/// Writes `horizontal/` and `vertical/` class folders of PNGs under `root`.
pub fn generate_stripes(root: &Path, params: &StripeParams) -> Result<()> {
    if params.per_class == 0 || params.size < 8 {
        return Err(Error::invalid("need at least one image per class and size >= 8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for (label, vertical) in [("horizontal", false), ("vertical", true)] {
        let dir = root.join(label);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..params.per_class {
            let img = stripe_image(&mut rng, params.size, vertical, params.noise);
            let path = dir.join(format!("{label}_{i:03}.png"));
            img.save(&path)
                .map_err(|e| Error::format(format!("writing {}: {e}", path.display())))?;
        }
    }
    Ok(())
}

/// He-initialized random backbone weights, for tests and timing.
///
/// Weights are uniform with variance 2 / fan_in so activations keep a sane
/// scale through the ReLU stack; biases are small and positive.
pub fn random_weights(seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = BackboneSpec::KERNEL_SIZE;
    let banks = BackboneSpec::CONVS
        .iter()
        .map(|s| {
            let fan_in = (k * k * s.in_channels) as f32;
            let bound = (6.0 / fan_in).sqrt();
            let n = s.out_channels * k * k * s.in_channels;
            FilterBank::new(
                s.out_channels,
                k,
                k,
                s.in_channels,
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
                (0..s.out_channels).map(|_| rng.gen_range(0.0..0.1)).collect(),
            )
            .expect("shapes follow the backbone layer table")
        })
        .collect();
    WeightStore::new(banks, format!("random seed {seed}")).expect("valid backbone shapes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let p = StripeParams { per_class: 2, ..Default::default() };
        generate_stripes(a.path(), &p).unwrap();
        generate_stripes(b.path(), &p).unwrap();
        for f in ["horizontal/horizontal_001.png", "vertical/vertical_000.png"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn random_weights_are_seeded() {
        let a = random_weights(3);
        assert_eq!(a.banks().len(), 4);
        assert_eq!(a.to_bytes().unwrap(), random_weights(3).to_bytes().unwrap());
        assert_ne!(a.checksum(), random_weights(4).checksum());
    }

    #[test]
    fn stripes_follow_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = stripe_image(&mut rng, 32, true, 0);
        for x in 0..32 {
            assert!((0..32).all(|y| v.get_pixel(x, y) == v.get_pixel(x, 0)));
        }
        let h = stripe_image(&mut rng, 32, false, 0);
        for y in 0..32 {
            assert!((0..32).all(|x| h.get_pixel(x, y) == h.get_pixel(0, y)));
        }
    }
}

//! Higher-order local autocorrelation (HLAC) on Otsu-binarized maps.
//!
//! Each channel is thresholded independently, then the 25 translation-distinct
//! 3x3 masks of order 0..=2 are counted over interior reference pixels. Counts
//! are concatenated channel-major.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureVector};
use crate::tensor::Tensor;
use crate::vgg::ConvMapSet;

pub const HLAC_DIM: usize = 25;
pub const OTSU_BINS: usize = 256;

/// `(dy, dx)` displacement from the reference pixel.
pub type Offset = (i8, i8);

/// A mask: sorted offsets, always including `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HlacMask(Vec<Offset>);

impl HlacMask {
    pub fn offsets(&self) -> &[Offset] {
        &self.0
    }

    /// Number of displacements besides the reference pixel.
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HlacMaskSet {
    masks: Vec<HlacMask>,
}

impl HlacMaskSet {
    pub fn masks(&self) -> &[HlacMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Translation-invariant key: shift so the componentwise minimum is at the origin.
fn translation_key(offsets: &[Offset]) -> Vec<Offset> {
    let min_y = offsets.iter().map(|o| o.0).min().unwrap();
    let min_x = offsets.iter().map(|o| o.1).min().unwrap();
    let mut key: Vec<Offset> = offsets.iter().map(|&(y, x)| (y - min_y, x - min_x)).collect();
    key.sort();
    key
}

/// All masks `{(0,0)} ∪ S`, `S` a set of at most two neighbours, one per
/// translation class. The lexicographically smallest member represents each
/// class; the list is ordered by mask order, then by offsets.
pub fn enumerate_masks() -> HlacMaskSet {
    let neighbours: Vec<Offset> = (-1..=1i8)
        .flat_map(|y| (-1..=1i8).map(move |x| (y, x)))
        .filter(|&o| o != (0, 0))
        .collect();
    let mut candidates: Vec<HlacMask> = vec![HlacMask(vec![(0, 0)])];
    for (i, &a) in neighbours.iter().enumerate() {
        let mut m = vec![(0, 0), a];
        m.sort();
        candidates.push(HlacMask(m));
        for &b in &neighbours[i + 1..] {
            let mut m = vec![(0, 0), a, b];
            m.sort();
            candidates.push(HlacMask(m));
        }
    }
    candidates.sort_by(|a, b| a.order().cmp(&b.order()).then_with(|| a.cmp(b)));
    let mut seen = std::collections::HashSet::new();
    let masks = candidates
        .into_iter()
        .filter(|m| seen.insert(translation_key(&m.0)))
        .collect();
    HlacMaskSet { masks }
}

/// One binarized channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<u8>,
    pub threshold: f32,
    pub channel: usize,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width || bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("binary map bits must be 0/1 with length height*width"));
        }
        Ok(Self {
            height,
            width,
            bits,
            threshold: 0.0,
            channel: 0,
        })
    }

    #[inline]
    pub fn bit(&self, y: usize, x: usize) -> u8 {
        self.bits[y * self.width + x]
    }
}

fn single_channel(map: &Tensor) -> Result<()> {
    if map.channels() != 1 {
        return Err(Error::invalid(format!(
            "expected a single-channel map, got {} channels",
            map.channels()
        )));
    }
    Ok(())
}

/// 256-bin histogram over `[min, max]`; the maximum lands in the last bin.
fn otsu_bin(v: f32, min: f32, range: f64) -> usize {
    let b = ((v as f64 - min as f64) / range * OTSU_BINS as f64).floor() as usize;
    b.min(OTSU_BINS - 1)
}

/// Otsu's threshold over a 256-bin histogram of the map's value range.
///
/// The best split maximizes the between-class variance over bin indices
/// (ties go to the lowest split). The returned value lies between the
/// largest value of the lower class and the smallest of the upper class, so
/// `v > threshold` reproduces the split exactly. A constant map returns its
/// value.
pub fn otsu_threshold(map: &Tensor) -> Result<f32> {
    single_channel(map)?;
    let data = map.data();
    let (min, max) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if min == max {
        return Ok(min);
    }
    let range = max as f64 - min as f64;
    let mut hist = [0u64; OTSU_BINS];
    for &v in data {
        hist[otsu_bin(v, min, range)] += 1;
    }
    let total = data.len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();

    let mut best_split = 0;
    let mut best_var = -1.0;
    let mut w0 = 0f64;
    let mut sum0 = 0f64;
    for split in 1..OTSU_BINS {
        w0 += hist[split - 1] as f64;
        sum0 += (split - 1) as f64 * hist[split - 1] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let var = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_split = split;
        }
    }

    let mut lower_max = f32::NEG_INFINITY;
    let mut upper_min = f32::INFINITY;
    for &v in data {
        if otsu_bin(v, min, range) < best_split {
            lower_max = lower_max.max(v);
        } else {
            upper_min = upper_min.min(v);
        }
    }
    let mid = lower_max + (upper_min - lower_max) / 2.0;
    Ok(if mid >= lower_max && mid < upper_min { mid } else { lower_max })
}

/// `bit = 1` iff `value > threshold`.
pub fn binarize(map: &Tensor, threshold: f32) -> Result<BinaryMap> {
    single_channel(map)?;
    Ok(BinaryMap {
        height: map.height(),
        width: map.width(),
        bits: map.data().iter().map(|&v| u8::from(v > threshold)).collect(),
        threshold,
        channel: 0,
    })
}

/// Counts each mask's co-occurring ones over interior reference pixels.
pub fn hlac25(map: &BinaryMap, masks: &HlacMaskSet) -> Result<[u32; HLAC_DIM]> {
    if map.height < 3 || map.width < 3 {
        return Err(Error::invalid(format!(
            "HLAC needs at least 3x3, got {}x{}",
            map.height, map.width
        )));
    }
    if masks.len() != HLAC_DIM {
        return Err(Error::invalid(format!("expected {HLAC_DIM} masks, got {}", masks.len())));
    }
    let w = map.width as isize;
    // flat index deltas per mask
    let deltas: Vec<Vec<isize>> = masks
        .masks()
        .iter()
        .map(|m| m.offsets().iter().map(|&(dy, dx)| dy as isize * w + dx as isize).collect())
        .collect();
    let mut counts = [0u32; HLAC_DIM];
    for y in 1..map.height - 1 {
        for x in 1..map.width - 1 {
            let r = (y * map.width + x) as isize;
            if map.bits[r as usize] == 0 {
                continue;
            }
            for (c, d) in counts.iter_mut().zip(&deltas) {
                if d.iter().all(|&o| map.bits[(r + o) as usize] == 1) {
                    *c += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Otsu → binarize → HLAC on one channel.
pub fn hlac_channel(map: &Tensor, masks: &HlacMaskSet) -> Result<[u32; HLAC_DIM]> {
    let t = otsu_threshold(map)?;
    hlac25(&binarize(map, t)?, masks)
}

/// Per-channel HLAC, concatenated channel-major (25 values per channel).
pub fn hlac_concat(maps: &ConvMapSet) -> Result<FeatureVector> {
    let masks = enumerate_masks();
    let t = maps.maps();
    let per_channel: Vec<[u32; HLAC_DIM]> = (0..t.channels())
        .into_par_iter()
        .map(|c| hlac_channel(&t.channel(c), &masks))
        .collect::<Result<_>>()?;
    Ok(FeatureVector {
        values: per_channel.iter().flatten().map(|&c| c as f32).collect(),
        kind: FeatureKind::Hlac,
        source: maps.source(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vgg::SourceKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bits(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMap {
        BinaryMap::new(h, w, (0..h * w).map(|_| rng.gen_range(0..2)).collect()).unwrap()
    }

    fn oracle_counts(map: &BinaryMap, masks: &HlacMaskSet) -> Vec<u32> {
        masks
            .masks()
            .iter()
            .map(|m| {
                let mut total = 0;
                for y in 1..map.height - 1 {
                    for x in 1..map.width - 1 {
                        let mut prod = 1;
                        for &(dy, dx) in m.offsets() {
                            prod *= map.bit((y as isize + dy as isize) as usize, (x as isize + dx as isize) as usize) as u32;
                        }
                        total += prod;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn mask_set_shape() {
        let set = enumerate_masks();
        assert_eq!(set.len(), 25);
        let orders: Vec<usize> = set.masks().iter().map(HlacMask::order).collect();
        assert_eq!(orders.iter().filter(|&&o| o == 0).count(), 1);
        assert_eq!(orders.iter().filter(|&&o| o == 1).count(), 4);
        assert_eq!(orders.iter().filter(|&&o| o == 2).count(), 20);
        assert_eq!(set.masks()[0].offsets(), &[(0, 0)]);
        let keys: std::collections::HashSet<_> =
            set.masks().iter().map(|m| translation_key(m.offsets())).collect();
        assert_eq!(keys.len(), 25);
    }

    #[test]
    fn all_zero_and_all_one() {
        let masks = enumerate_masks();
        let zero = BinaryMap::new(5, 7, vec![0; 35]).unwrap();
        assert_eq!(hlac25(&zero, &masks).unwrap(), [0; 25]);
        let ones = BinaryMap::new(5, 7, vec![1; 35]).unwrap();
        assert_eq!(hlac25(&ones, &masks).unwrap(), [15; 25]);
        assert!(hlac25(&BinaryMap::new(2, 5, vec![1; 10]).unwrap(), &masks).is_err());
    }

    #[test]
    fn random_6x6_matches_oracle() {
        let masks = enumerate_masks();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let m = random_bits(&mut rng, 6, 6);
            assert_eq!(hlac25(&m, &masks).unwrap().to_vec(), oracle_counts(&m, &masks));
        }
    }

    #[test]
    fn otsu_constant_map() {
        let t = Tensor::filled(4, 4, 1, 3.5);
        let thr = otsu_threshold(&t).unwrap();
        assert_eq!(thr, 3.5);
        assert!(binarize(&t, thr).unwrap().bits.iter().all(|&b| b == 0));
    }

    #[test]
    fn otsu_two_modes() {
        let data: Vec<f32> = (0..100).map(|i| if i < 40 { 10.0 } else { 200.0 }).collect();
        let t = Tensor::from_plane(10, 10, data).unwrap();
        let thr = otsu_threshold(&t).unwrap();
        assert!(thr > 10.0 && thr < 200.0, "{thr}");
    }

    #[test]
    fn binarize_extremes() {
        let t = Tensor::from_plane(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(binarize(&t, 0.5).unwrap().bits, vec![1; 4]);
        assert_eq!(binarize(&t, 4.0).unwrap().bits, vec![0; 4]);
        assert_eq!(binarize(&t, 2.0).unwrap().bits, vec![0, 0, 1, 1]);
    }

    #[test]
    fn concat_dims() {
        let masks_dim = |h, w, c, source| {
            let t = Tensor::zeros(h, w, c);
            hlac_concat(&ConvMapSet::new(t, source).unwrap()).unwrap()
        };
        let v = masks_dim(56, 56, 128, SourceKind::Convmap);
        assert_eq!(v.dim(), 3200);
        assert!(v.values.iter().all(|&x| x == 0.0));
        assert_eq!(masks_dim(30, 30, 1, SourceKind::Grayscale).dim(), 25);
    }

    #[test]
    fn two_channel_concat_matches_per_channel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let t = Tensor::new(9, 8, 2, (0..144).map(|_| rng.gen_range(0.0..10.0)).collect()).unwrap();
        let v = hlac_concat(&ConvMapSet::new(t.clone(), SourceKind::Grayscale).unwrap()).unwrap();
        let masks = enumerate_masks();
        let mut want = Vec::new();
        for c in 0..2 {
            let ch = t.channel(c);
            let b = binarize(&ch, otsu_threshold(&ch).unwrap()).unwrap();
            want.extend(oracle_counts(&b, &masks).into_iter().map(|x| x as f32));
        }
        assert_eq!(v.values, want);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn counts_bounded(seed in 0u64..10_000, h in 3usize..12, w in 3usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_bits(&mut rng, h, w);
            let limit = ((h - 2) * (w - 2)) as u32;
            prop_assert!(hlac25(&m, &enumerate_masks()).unwrap().iter().all(|&c| c <= limit));
        }

        #[test]
        fn interior_translation_invariance(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (12, 12);
            // pattern confined to rows/cols 3..8, shifted by one keeps it interior
            let mut bits = vec![0u8; h * w];
            for y in 3..8 {
                for x in 3..8 {
                    bits[y * w + x] = rng.gen_range(0..2);
                }
            }
            let (dy, dx) = [(0, 1), (1, 0), (1, 1), (-1, 0)][seed as usize % 4];
            let mut moved = vec![0u8; h * w];
            for y in 3..8 {
                for x in 3..8 {
                    moved[((y as isize + dy) as usize) * w + (x as isize + dx) as usize] = bits[y * w + x];
                }
            }
            let masks = enumerate_masks();
            let a = hlac25(&BinaryMap::new(h, w, bits).unwrap(), &masks).unwrap();
            let b = hlac25(&BinaryMap::new(h, w, moved).unwrap(), &masks).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn affine_rescale_invariance(seed in 0u64..10_000, c in 1i32..50, d in -1000i32..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::from_plane(10, 10, (0..100).map(|_| rng.gen_range(0..200) as f32).collect()).unwrap();
            let u = t.map(|v| c as f32 * v + d as f32).unwrap();
            let masks = enumerate_masks();
            prop_assert_eq!(hlac_channel(&t, &masks).unwrap(), hlac_channel(&u, &masks).unwrap());
        }
    }
}

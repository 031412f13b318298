//! Visual codebook (k-means) and bag-of-words encoding.
//!
//! One codebook is shared by every channel: descriptors from all 128 maps of
//! an image are pooled into a single histogram.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binfmt::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureVector};
use crate::sift::{DescriptorMatrix, SiftDescriptor, SIFT_DIM};
use crate::vgg::SourceKind;

pub const DEFAULT_CODEBOOK_SIZE: usize = 1000;
pub const DEFAULT_KMEANS_ITERS: usize = 50;
const MAGIC: &[u8; 4] = b"CDCB";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    /// Number of centroid update steps performed.
    pub iterations: usize,
    /// Sum of squared distances to the nearest centroid at the final centroids.
    pub distortion: f64,
    pub seed: u64,
    pub converged: bool,
    /// Distortion measured at every assignment step, first to last.
    pub distortion_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    meta: Option<TrainingMeta>,
}

#[inline]
fn dist2(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

#[inline]
fn dist2_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c as f64;
            d * d
        })
        .sum()
}

/// Nearest centroid with ties going to the lowest index.
fn nearest(point: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding, for any dimension.
///
/// Deterministic for a given `(data, k, seed)`. Stops at an assignment
/// fixpoint or after `max_iters` updates. Clusters that empty out are
/// re-seeded at the points farthest from their current centroid.
pub fn kmeans(data: &DescriptorMatrix, k: usize, max_iters: usize, seed: u64) -> Result<Codebook> {
    let n = data.len();
    let dim = data.dim();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "{n} descriptors is fewer than k = {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = vec![0f64; k * dim];
    let first = rng.gen_range(0..n);
    for (c, &x) in centroids[..dim].iter_mut().zip(data.row(first)) {
        *c = x as f64;
    }
    let mut d2: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| dist2(data.row(i), &centroids[..dim]))
        .collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(format!(
                "only {j} distinct descriptors, fewer than k = {k}"
            )));
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        let c = &mut centroids[j * dim..(j + 1) * dim];
        for (c, &x) in c.iter_mut().zip(data.row(pick)) {
            *c = x as f64;
        }
        let c = &centroids[j * dim..(j + 1) * dim];
        d2.par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(dist2(data.row(i), c)));
    }

    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let converged;
    loop {
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(data.row(i), &centroids, dim))
            .collect();
        history.push(assigned.iter().map(|a| a.1).sum::<f64>());
        let labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if prev.as_ref() == Some(&labels) {
            converged = true;
            break;
        }
        if iterations == max_iters {
            converged = false;
            break;
        }

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            for (s, &x) in sums[j * dim..(j + 1) * dim].iter_mut().zip(data.row(i)) {
                *s += x as f64;
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *c = s * inv;
                }
            }
        }
        if !empty.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| assigned[b].1.total_cmp(&assigned[a].1).then(a.cmp(&b)));
            for (j, &i) in empty.iter().zip(&order) {
                for (c, &x) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(data.row(i)) {
                    *c = x as f64;
                }
            }
        }
        prev = Some(labels);
        iterations += 1;
    }

    Ok(Codebook {
        k,
        dim,
        centroids: centroids.iter().map(|&c| c as f32).collect(),
        meta: Some(TrainingMeta {
            iterations,
            distortion: *history.last().unwrap(),
            seed,
            converged,
            distortion_history: history,
        }),
    })
}

/// Trains a SIFT codebook; descriptors must be 128-dimensional.
pub fn train_codebook(
    descriptors: &DescriptorMatrix,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Codebook> {
    if descriptors.dim() != SIFT_DIM {
        return Err(Error::invalid(format!(
            "codebook descriptors must be {SIFT_DIM}-dimensional, got {}",
            descriptors.dim()
        )));
    }
    kmeans(descriptors, k, max_iters, seed)
}

impl Codebook {
    pub fn from_centroids(k: usize, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if k == 0 || dim == 0 || centroids.len() != k * dim {
            return Err(Error::invalid(format!(
                "codebook needs {k}x{dim} centroid values, got {}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("codebook centroids must be finite"));
        }
        Ok(Self {
            k,
            dim,
            centroids,
            meta: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Present only for codebooks trained in this process.
    pub fn meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    /// Index of the nearest centroid (Euclidean, ties to the lowest index).
    pub fn assign(&self, v: &[f32]) -> usize {
        let mut best = (0, f64::INFINITY);
        for j in 0..self.k {
            let d = dist2_f32(v, self.centroid(j));
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }

    fn body(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(MAGIC);
        w.len_u32(self.k)?;
        w.len_u32(self.dim)?;
        w.f32s(&self.centroids);
        Ok(w.finish())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = self.body()?;
        b.extend_from_slice(&crc32fast::hash(&b).to_le_bytes());
        Ok(b)
    }

    /// CRC32 of the serialized body, used as the codebook's identity.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.body().expect("codebook dims fit in u32"))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_crc("codebook", bytes, MAGIC)?;
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let centroids = r.f32s(k * dim)?;
        r.finish()?;
        Self::from_centroids(k, dim, centroids).map_err(|e| Error::format(format!("codebook: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Raw nearest-codeword counts for a set of descriptor rows.
pub fn bow_counts<'a>(rows: impl Iterator<Item = &'a [f32]>, codebook: &Codebook) -> Vec<u64> {
    let mut counts = vec![0u64; codebook.k()];
    for r in rows {
        counts[codebook.assign(r)] += 1;
    }
    counts
}

/// Hard-assigns every descriptor and L1-normalizes the counts.
pub fn encode_bow(
    descriptors: &[SiftDescriptor],
    codebook: &Codebook,
    source: SourceKind,
) -> Result<FeatureVector> {
    if codebook.dim() != SIFT_DIM {
        return Err(Error::invalid(format!(
            "codebook dimension {} does not match SIFT ({SIFT_DIM})",
            codebook.dim()
        )));
    }
    if descriptors.is_empty() {
        return Err(Error::invalid("cannot encode an empty descriptor list"));
    }
    let counts = bow_counts(descriptors.iter().map(|d| &d.values[..]), codebook);
    let total = descriptors.len() as f64;
    Ok(FeatureVector {
        values: counts.iter().map(|&c| (c as f64 / total) as f32).collect(),
        kind: FeatureKind::Bow,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(seed: u64, n: usize, dim: usize) -> DescriptorMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DescriptorMatrix::new(dim, (0..n * dim).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn desc(values: [f32; SIFT_DIM]) -> SiftDescriptor {
        SiftDescriptor {
            values,
            position: (0.0, 0.0),
            channel: 0,
        }
    }

    #[test]
    fn k_equal_to_distinct_points_reaches_zero() {
        let data = random_matrix(3, 12, 4);
        let cb = kmeans(&data, 12, 20, 9).unwrap();
        assert_eq!(cb.meta().unwrap().distortion, 0.0);
        let mut found: Vec<Vec<f32>> = (0..12).map(|j| cb.centroid(j).to_vec()).collect();
        let mut points: Vec<Vec<f32>> = data.rows().map(|r| r.to_vec()).collect();
        found.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(found, points);
    }

    #[test]
    fn too_few_descriptors() {
        let data = random_matrix(1, 3, 4);
        assert!(matches!(kmeans(&data, 4, 10, 0), Err(Error::InvalidArgument(_))));
        let dup = DescriptorMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(kmeans(&dup, 2, 10, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn train_codebook_requires_sift_dim() {
        let data = random_matrix(1, 10, 4);
        assert!(train_codebook(&data, 2, 5, 0).is_err());
    }

    #[test]
    fn two_clouds_recover_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = SIFT_DIM;
        let mut data = Vec::new();
        let mut means = [vec![0f64; dim], vec![0f64; dim]];
        let per = 50;
        for (cloud, center) in [(0usize, 0.0f32), (1, 10.0)] {
            for _ in 0..per {
                for (d, m) in means[cloud].iter_mut().enumerate() {
                    let v = center + if d % 2 == 0 { 1.0 } else { -1.0 } + rng.gen_range(-0.5..0.5);
                    data.push(v);
                    *m += v as f64 / per as f64;
                }
            }
        }
        let data = DescriptorMatrix::new(dim, data).unwrap();
        let cb = train_codebook(&data, 2, 50, 4).unwrap();
        let mut cents: Vec<&[f32]> = (0..2).map(|j| cb.centroid(j)).collect();
        cents.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        for (c, m) in cents.iter().zip(&means) {
            for (a, b) in c.iter().zip(m) {
                assert!((*a as f64 - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
        assert!(cb.meta().unwrap().converged);
    }

    #[test]
    fn distortion_never_increases() {
        let data = random_matrix(5, 400, 8);
        let cb = kmeans(&data, 16, 100, 1).unwrap();
        let h = &cb.meta().unwrap().distortion_history;
        assert!(h.len() > 2);
        for w in h.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
        }
        // independent recomputation of the final distortion
        let recomputed: f64 = data
            .rows()
            .map(|r| {
                (0..16)
                    .map(|j| {
                        r.iter()
                            .zip(cb.centroid(j))
                            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        let reported = cb.meta().unwrap().distortion;
        assert!((recomputed - reported).abs() <= 1e-4 * reported);
    }

    #[test]
    fn seeded_training_is_bit_reproducible() {
        let data = random_matrix(6, 300, SIFT_DIM);
        let a = train_codebook(&data, 10, 30, 77).unwrap();
        let b = train_codebook(&data, 10, 30, 77).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(a.meta(), b.meta());
    }

    #[test]
    fn codebook_file_round_trip() {
        let data = random_matrix(2, 40, 3);
        let cb = kmeans(&data, 5, 10, 0).unwrap();
        let bytes = cb.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"CDCB");
        let back = Codebook::from_bytes(&bytes).unwrap();
        assert_eq!(back.centroids(), cb.centroids());
        assert_eq!(back.checksum(), cb.checksum());
    }

    #[test]
    fn identical_descriptors_one_hot() {
        let data = random_matrix(8, 10 * SIFT_DIM, SIFT_DIM);
        let cb = train_codebook(&data, 10, 5, 0).unwrap();
        let d = desc([0.3; SIFT_DIM]);
        let v = encode_bow(&vec![d; 7], &cb, SourceKind::Convmap).unwrap();
        assert_eq!(v.values.iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(v.values.iter().filter(|&&x| x == 0.0).count(), 9);
        assert_eq!(v.kind, FeatureKind::Bow);
    }

    #[test]
    fn empty_encode_rejected() {
        let cb = Codebook::from_centroids(1, SIFT_DIM, vec![0.0; SIFT_DIM]).unwrap();
        assert!(matches!(encode_bow(&[], &cb, SourceKind::Grayscale), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = Codebook::from_centroids(3, 1, vec![1.0, -1.0, 1.0]).unwrap();
        assert_eq!(cb.assign(&[0.0]), 0);
        assert_eq!(cb.assign(&[2.0]), 0);
        assert_eq!(cb.assign(&[-0.5]), 1);
    }

    #[test]
    fn encode_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cents: Vec<f32> = (0..5 * SIFT_DIM).map(|_| rng.gen_range(0.0..0.2)).collect();
        let cb = Codebook::from_centroids(5, SIFT_DIM, cents.clone()).unwrap();
        let descs: Vec<SiftDescriptor> = (0..20)
            .map(|_| desc(std::array::from_fn(|_| rng.gen_range(0.0..0.2))))
            .collect();
        let mut oracle = [0u32; 5];
        for d in &descs {
            let mut best = 0;
            let mut best_d = f64::MAX;
            for j in 0..5 {
                let dd: f64 = (0..SIFT_DIM)
                    .map(|i| (d.values[i] as f64 - cents[j * SIFT_DIM + i] as f64).powi(2))
                    .sum();
                if dd < best_d {
                    best_d = dd;
                    best = j;
                }
            }
            oracle[best] += 1;
        }
        let v = encode_bow(&descs, &cb, SourceKind::Grayscale).unwrap();
        for j in 0..5 {
            assert_eq!(v.values[j], (oracle[j] as f64 / 20.0) as f32);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn histogram_sums_to_one_and_ignores_order(seed in 0u64..1000, n in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb = Codebook::from_centroids(
                8, SIFT_DIM, (0..8 * SIFT_DIM).map(|_| rng.gen_range(0.0..0.3)).collect()).unwrap();
            let mut descs: Vec<SiftDescriptor> = (0..n)
                .map(|_| desc(std::array::from_fn(|_| rng.gen_range(0.0..0.3))))
                .collect();
            let a = encode_bow(&descs, &cb, SourceKind::Convmap).unwrap();
            let sum: f64 = a.values.iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(a.values.iter().all(|&v| v >= 0.0));
            descs.reverse();
            descs.rotate_left(seed as usize % n);
            let b = encode_bow(&descs, &cb, SourceKind::Convmap).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

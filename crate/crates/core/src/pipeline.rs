//! End-to-end experiment: maps, descriptors, codebook, SVM and report.
//!
//! Map sets and feature vectors are cached on disk, keyed by the SHA-256 of
//! the image bytes plus a hash of every setting that influences the stored
//! value. A cache entry is only ever reused for an identical configuration.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binfmt::{read_file, write_atomic};
use crate::bow::{encode_bow, train_codebook, Codebook, DEFAULT_CODEBOOK_SIZE, DEFAULT_KMEANS_ITERS};
use crate::dataset::{compute_metrics, split, CodebookSummary, DatasetManifest, EvalReport, SplitSpec};
use crate::error::{Error, Result};
use crate::feature::FeatureVector;
use crate::hlac::hlac_concat;
use crate::sift::{dense_sift, DenseGridParams, DescriptorMatrix, SIFT_DIM};
use crate::svm::{train_multiclass, SvmModel, SvmParams};
use crate::vgg::{
    forward_to_pool2, grayscale_map_set, preprocess_image, ConvMapSet, PreprocessConfig,
    SourceKind, WeightStore, DEFAULT_GRAYSCALE_SIZE, POOL2_CHANNELS, POOL2_SIZE,
};

pub const DEFAULT_CODEBOOK_SAMPLE_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptorKind {
    #[serde(rename = "sift-bow")]
    SiftBow,
    #[serde(rename = "hlac")]
    Hlac,
}

impl DescriptorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DescriptorKind::SiftBow => "sift-bow",
            DescriptorKind::Hlac => "hlac",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub descriptor: DescriptorKind,
    pub source: SourceKind,
    /// CDWT weight file; required for the convmap source.
    pub weights: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
    pub grayscale_size: usize,
    pub grid: DenseGridParams,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    /// Upper bound on descriptors fed to k-means.
    pub codebook_sample_cap: usize,
    pub codebook_seed: u64,
    /// Use this codebook instead of training one.
    pub codebook_path: Option<PathBuf>,
    pub svm: SvmParams,
    /// No caching when `None`.
    pub cache_dir: Option<PathBuf>,
    /// Rayon worker count; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            descriptor: DescriptorKind::Hlac,
            source: SourceKind::Convmap,
            weights: None,
            preprocess: PreprocessConfig::default(),
            grayscale_size: DEFAULT_GRAYSCALE_SIZE,
            grid: DenseGridParams::default(),
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            codebook_sample_cap: DEFAULT_CODEBOOK_SAMPLE_CAP,
            codebook_seed: 0,
            codebook_path: None,
            svm: SvmParams::default(),
            cache_dir: None,
            workers: None,
        }
    }
}

/// Produces the map set for one image.
#[derive(Debug, Clone)]
pub enum MapExtractor {
    Grayscale { side: usize },
    Convmap { weights: WeightStore, preprocess: PreprocessConfig },
}

impl MapExtractor {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.source {
            SourceKind::Grayscale => {
                if cfg.grayscale_size == 0 {
                    return Err(Error::invalid("grayscale size must be positive"));
                }
                Ok(MapExtractor::Grayscale { side: cfg.grayscale_size })
            }
            SourceKind::Convmap => {
                let path = cfg.weights.as_ref().ok_or_else(|| {
                    Error::Configuration(
                        "the convmap source needs a backbone weight file (--weights)".into(),
                    )
                })?;
                Ok(MapExtractor::Convmap {
                    weights: WeightStore::load(path)?,
                    preprocess: cfg.preprocess.clone(),
                })
            }
        }
    }

    pub fn source(&self) -> SourceKind {
        match self {
            MapExtractor::Grayscale { .. } => SourceKind::Grayscale,
            MapExtractor::Convmap { .. } => SourceKind::Convmap,
        }
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        match self {
            MapExtractor::Grayscale { side } => (*side, *side, 1),
            MapExtractor::Convmap { .. } => (POOL2_SIZE, POOL2_SIZE, POOL2_CHANNELS),
        }
    }

    pub fn weights_checksum(&self) -> Option<String> {
        match self {
            MapExtractor::Convmap { weights, .. } => Some(format!("{:08x}", weights.checksum())),
            MapExtractor::Grayscale { .. } => None,
        }
    }

    /// Settings that determine the map values, as JSON.
    pub fn describe(&self) -> serde_json::Value {
        match self {
            MapExtractor::Grayscale { side } => serde_json::json!({
                "source": "grayscale",
                "grayscale_size": side,
            }),
            MapExtractor::Convmap { preprocess, .. } => serde_json::json!({
                "source": "convmap",
                "weights_checksum": self.weights_checksum(),
                "preprocess": preprocess,
            }),
        }
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.describe().to_string().as_bytes())
    }

    pub fn extract(&self, raster: &RgbImage) -> Result<ConvMapSet> {
        match self {
            MapExtractor::Grayscale { side } => grayscale_map_set(raster, *side),
            MapExtractor::Convmap { weights, preprocess } => {
                forward_to_pool2(&preprocess_image(raster, preprocess)?, weights)
            }
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn decode_image(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::format(format!("cannot decode image {}: {e}", path.display())))
}

fn read_cached<T>(path: &Path, parse: impl FnOnce(&[u8]) -> Result<T>) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = read_file(path)?;
    parse(&bytes).map(Some).map_err(|e| {
        Error::Integrity(format!(
            "cache file {} is damaged ({e}); delete it to re-extract",
            path.display()
        ))
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub extracted: usize,
    pub cached: usize,
}

/// Per-image map and feature computation with an optional on-disk cache.
pub struct Pipeline {
    cfg: PipelineConfig,
    extractor: MapExtractor,
    map_hash: String,
    extracted: AtomicUsize,
    cached: AtomicUsize,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        if cfg.descriptor == DescriptorKind::SiftBow {
            cfg.grid.validate()?;
            if cfg.codebook_size == 0 {
                return Err(Error::invalid("codebook size must be positive"));
            }
        }
        if cfg.workers == Some(0) {
            return Err(Error::invalid("worker count must be positive"));
        }
        let extractor = MapExtractor::from_config(&cfg)?;
        let map_hash = extractor.config_hash();
        Ok(Self {
            cfg,
            extractor,
            map_hash,
            extracted: AtomicUsize::new(0),
            cached: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn extractor(&self) -> &MapExtractor {
        &self.extractor
    }

    /// Runs `f` on a pool with the configured worker count.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        match self.cfg.workers {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }

    fn cache_file(&self, kind: &str, image_hash: &str, config_hash: &str, ext: &str) -> Option<PathBuf> {
        self.cfg.cache_dir.as_ref().map(|d| {
            d.join(kind)
                .join(format!("{}-{}.{ext}", &image_hash[..32], &config_hash[..16]))
        })
    }

    fn maps_from_bytes(&self, path: &Path, bytes: &[u8], image_hash: &str) -> Result<ConvMapSet> {
        let source = self.extractor.source();
        let cache = self.cache_file("maps", image_hash, &self.map_hash, "cdmd");
        if let Some(c) = &cache {
            if let Some(m) = read_cached(c, |b| ConvMapSet::from_dump_bytes(b, source))? {
                self.cached.fetch_add(1, Ordering::Relaxed);
                return Ok(m);
            }
        }
        let maps = self.extractor.extract(&decode_image(path, bytes)?)?;
        self.extracted.fetch_add(1, Ordering::Relaxed);
        if let Some(c) = &cache {
            write_atomic(c, &maps.to_dump_bytes()?)?;
        }
        Ok(maps)
    }

    /// Map set for one image, from cache when possible.
    pub fn maps_for(&self, path: &Path) -> Result<ConvMapSet> {
        let bytes = read_file(path)?;
        self.maps_from_bytes(path, &bytes, &sha256_hex(&bytes))
    }

    fn feature_hash(&self, codebook: Option<&Codebook>) -> String {
        let desc = match self.cfg.descriptor {
            DescriptorKind::Hlac => serde_json::json!({
                "maps": self.map_hash,
                "descriptor": "hlac",
            }),
            DescriptorKind::SiftBow => serde_json::json!({
                "maps": self.map_hash,
                "descriptor": "sift-bow",
                "grid": self.cfg.grid,
                "codebook": codebook.map(|c| format!("{:08x}", c.checksum())),
            }),
        };
        sha256_hex(desc.to_string().as_bytes())
    }

    fn compute_feature(&self, maps: &ConvMapSet, codebook: Option<&Codebook>) -> Result<FeatureVector> {
        match self.cfg.descriptor {
            DescriptorKind::Hlac => hlac_concat(maps),
            DescriptorKind::SiftBow => {
                let cb = codebook.ok_or_else(|| Error::invalid("sift-bow features need a codebook"))?;
                encode_bow(&dense_sift(maps, &self.cfg.grid)?, cb, maps.source())
            }
        }
    }

    fn feature_with_hash(&self, path: &Path, codebook: Option<&Codebook>, fhash: &str) -> Result<FeatureVector> {
        let bytes = read_file(path)?;
        let image_hash = sha256_hex(&bytes);
        let source = self.extractor.source();
        let cache = self.cache_file("features", &image_hash, fhash, "cdfv");
        if let Some(c) = &cache {
            if let Some(f) = read_cached(c, |b| FeatureVector::from_bytes(b, source))? {
                return Ok(f);
            }
        }
        let maps = self.maps_from_bytes(path, &bytes, &image_hash)?;
        let feature = self.compute_feature(&maps, codebook)?;
        if let Some(c) = &cache {
            write_atomic(c, &feature.to_bytes()?)?;
        }
        Ok(feature)
    }

    /// Final descriptor for one image.
    pub fn feature_for(&self, path: &Path, codebook: Option<&Codebook>) -> Result<FeatureVector> {
        self.feature_with_hash(path, codebook, &self.feature_hash(codebook))
    }

    /// Features for many images, in input order.
    pub fn features_for(&self, paths: &[PathBuf], codebook: Option<&Codebook>) -> Result<Vec<FeatureVector>> {
        let fhash = self.feature_hash(codebook);
        paths
            .par_iter()
            .map(|p| self.feature_with_hash(p, codebook, &fhash))
            .collect()
    }

    /// Computes (or finds cached) map sets for every path.
    pub fn extract_maps(&self, paths: &[PathBuf]) -> Result<ExtractStats> {
        let before = self.stats();
        paths.par_iter().try_for_each(|p| self.maps_for(p).map(|_| ()))?;
        let after = self.stats();
        Ok(ExtractStats {
            extracted: after.extracted - before.extracted,
            cached: after.cached - before.cached,
        })
    }

    pub fn stats(&self) -> ExtractStats {
        ExtractStats {
            extracted: self.extracted.load(Ordering::Relaxed),
            cached: self.cached.load(Ordering::Relaxed),
        }
    }

    /// Seeded uniform sample of descriptors from `paths`, capped.
    ///
    /// Descriptors are indexed globally (image order, then the dense SIFT
    /// order inside each image) and a uniform subset of indices is drawn.
    pub fn sample_descriptors(&self, paths: &[PathBuf]) -> Result<DescriptorMatrix> {
        let (h, w, c) = self.extractor.output_shape();
        let per_image = self.cfg.grid.patches_per_channel(h, w) * c;
        if per_image == 0 {
            return Err(Error::invalid(format!(
                "patch size {} does not fit {h}x{w} maps",
                self.cfg.grid.patch_size
            )));
        }
        let total = per_image * paths.len();
        let take = total.min(self.cfg.codebook_sample_cap);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.codebook_seed);
        let mut picked = rand::seq::index::sample(&mut rng, total, take).into_vec();
        picked.sort_unstable();

        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for idx in picked {
            let (img, local) = (idx / per_image, idx % per_image);
            match groups.last_mut() {
                Some((i, v)) if *i == img => v.push(local),
                _ => groups.push((img, vec![local])),
            }
        }
        let rows: Vec<Vec<f32>> = groups
            .par_iter()
            .map(|(img, locals)| -> Result<Vec<f32>> {
                let descs = dense_sift(&self.maps_for(&paths[*img])?, &self.cfg.grid)?;
                debug_assert_eq!(descs.len(), per_image);
                Ok(locals.iter().flat_map(|&l| descs[l].values).collect())
            })
            .collect::<Result<_>>()?;
        DescriptorMatrix::new(SIFT_DIM, rows.concat())
    }

    /// Trains the BoW codebook on descriptors of `paths` only.
    pub fn train_codebook(&self, paths: &[PathBuf]) -> Result<Codebook> {
        let sample = self.sample_descriptors(paths)?;
        train_codebook(
            &sample,
            self.cfg.codebook_size,
            self.cfg.kmeans_iters,
            self.cfg.codebook_seed,
        )
    }

    fn codebook_for(&self, train: &[PathBuf]) -> Result<Option<Codebook>> {
        if self.cfg.descriptor != DescriptorKind::SiftBow {
            return Ok(None);
        }
        let cb = match &self.cfg.codebook_path {
            Some(p) => Codebook::load(p)?,
            None => self.train_codebook(train)?,
        };
        if cb.dim() != SIFT_DIM {
            return Err(Error::Configuration(format!(
                "codebook has dimension {}, expected {SIFT_DIM}",
                cb.dim()
            )));
        }
        Ok(Some(cb))
    }

    fn config_echo(&self, split_spec: &SplitSpec, codebook: Option<&Codebook>) -> serde_json::Value {
        let mut echo = self.extractor.describe();
        let obj = echo.as_object_mut().expect("object");
        obj.insert("descriptor".into(), self.cfg.descriptor.as_str().into());
        if self.cfg.descriptor == DescriptorKind::SiftBow {
            obj.insert("grid".into(), serde_json::json!(self.cfg.grid));
            obj.insert("codebook_size".into(), codebook.map(|c| c.k()).into());
            if self.cfg.codebook_path.is_some() {
                obj.insert("codebook_source".into(), "file".into());
            } else {
                obj.insert("codebook_source".into(), "trained".into());
                obj.insert("kmeans_iters".into(), self.cfg.kmeans_iters.into());
                obj.insert("codebook_sample_cap".into(), self.cfg.codebook_sample_cap.into());
                obj.insert("codebook_seed".into(), self.cfg.codebook_seed.into());
            }
        }
        obj.insert("svm".into(), serde_json::json!(self.cfg.svm));
        obj.insert("split".into(), serde_json::json!(split_spec));
        echo
    }

    /// Full train/evaluate run on a seeded split.
    pub fn run(&self, manifest: &DatasetManifest, split_spec: &SplitSpec) -> Result<(EvalReport, SvmModel)> {
        manifest.validate()?;
        let sp = split(manifest, split_spec)?;
        let train_paths: Vec<PathBuf> = sp.train.iter().map(|e| manifest.path_of(e)).collect();
        let test_paths: Vec<PathBuf> = sp.test.iter().map(|e| manifest.path_of(e)).collect();

        self.install(|| {
            let codebook = self.codebook_for(&train_paths)?;
            let train_x: Vec<Vec<f32>> = self
                .features_for(&train_paths, codebook.as_ref())?
                .into_iter()
                .map(|f| f.values)
                .collect();
            let train_y: Vec<String> = sp.train.iter().map(|e| e.label.clone()).collect();
            let model = train_multiclass(&train_x, &train_y, &self.cfg.svm)?;

            let test_x = self.features_for(&test_paths, codebook.as_ref())?;
            let predicted: Vec<String> = test_x
                .iter()
                .map(|f| model.predict(&f.values).map(str::to_string))
                .collect::<Result<_>>()?;
            let truth: Vec<String> = sp.test.iter().map(|e| e.label.clone()).collect();
            let labels = manifest.labels();
            let metrics = compute_metrics(&labels, &truth, &predicted)?;

            let report = EvalReport {
                dataset: manifest.name.clone(),
                manifest_hash: manifest.hash.clone(),
                split_hash: sp.hash.clone(),
                config: self.config_echo(split_spec, codebook.as_ref()),
                codebook: codebook.as_ref().map(|c| CodebookSummary {
                    k: c.k(),
                    checksum: format!("{:08x}", c.checksum()),
                    iterations: c.meta().map(|m| m.iterations),
                    distortion: c.meta().map(|m| m.distortion),
                }),
                feature_dim: model.dim(),
                train_count: sp.train.len(),
                test_count: sp.test.len(),
                labels: metrics.labels,
                accuracy: metrics.accuracy,
                mean_recall: metrics.mean_recall,
                per_class_recall: metrics.per_class_recall,
                confusion: metrics.confusion,
            };
            Ok((report, model))
        })?
    }

    /// Trains a codebook on the training half of a split.
    pub fn train_split_codebook(&self, manifest: &DatasetManifest, split_spec: &SplitSpec) -> Result<Codebook> {
        let sp = split(manifest, split_spec)?;
        let train: Vec<PathBuf> = sp.train.iter().map(|e| manifest.path_of(e)).collect();
        self.install(|| self.train_codebook(&train))?
    }
}

/// Convenience wrapper: build a pipeline and run it.
pub fn run_experiment(
    manifest: &DatasetManifest,
    split_spec: &SplitSpec,
    cfg: PipelineConfig,
) -> Result<EvalReport> {
    Ok(Pipeline::new(cfg)?.run(manifest, split_spec)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{scan_dataset, Layout, TrainCounts};
    use crate::synthetic::{generate_stripes, StripeParams};

    fn stripes(per_class: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        generate_stripes(dir.path(), &StripeParams { per_class, ..Default::default() }).unwrap();
        dir
    }

    fn gray_cfg(descriptor: DescriptorKind) -> PipelineConfig {
        PipelineConfig {
            descriptor,
            source: SourceKind::Grayscale,
            grayscale_size: 64,
            codebook_size: 16,
            kmeans_iters: 10,
            ..Default::default()
        }
    }

    #[test]
    fn convmap_without_weights_is_configuration_error() {
        let err = Pipeline::new(PipelineConfig::default()).err().unwrap();
        assert!(matches!(err, Error::Configuration(_)));
    }

    #[test]
    fn hlac_grayscale_runs_and_caches() {
        let data = stripes(6);
        let cache = tempfile::tempdir().unwrap();
        let m = scan_dataset(data.path(), Layout::Multiclass).unwrap();
        let spec = SplitSpec { train: TrainCounts::PerClass(3), seed: 5 };
        let cfg = PipelineConfig {
            cache_dir: Some(cache.path().to_path_buf()),
            ..gray_cfg(DescriptorKind::Hlac)
        };
        let p = Pipeline::new(cfg.clone()).unwrap();
        let (r1, _) = p.run(&m, &spec).unwrap();
        assert_eq!(r1.feature_dim, 25);
        assert_eq!(r1.test_count, 6);
        assert_eq!(p.stats().extracted, 12);

        let p2 = Pipeline::new(cfg).unwrap();
        let (r2, _) = p2.run(&m, &spec).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(p2.stats().extracted, 0);
    }

    #[test]
    fn corrupted_cache_is_integrity_error() {
        let data = stripes(3);
        let cache = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            cache_dir: Some(cache.path().to_path_buf()),
            ..gray_cfg(DescriptorKind::Hlac)
        };
        let m = scan_dataset(data.path(), Layout::Multiclass).unwrap();
        let paths: Vec<PathBuf> = m.entries.iter().map(|e| m.path_of(e)).collect();
        let p = Pipeline::new(cfg).unwrap();
        assert_eq!(p.extract_maps(&paths).unwrap(), ExtractStats { extracted: 6, cached: 0 });
        assert_eq!(p.extract_maps(&paths).unwrap(), ExtractStats { extracted: 0, cached: 6 });

        let dump = std::fs::read_dir(cache.path().join("maps"))
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .path();
        let mut bytes = std::fs::read(&dump).unwrap();
        bytes[20] ^= 0x40;
        std::fs::write(&dump, bytes).unwrap();
        let err = p.extract_maps(&paths).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        assert!(err.to_string().contains("re-extract"));
    }

    #[test]
    fn codebook_uses_training_images_only() {
        let data = stripes(4);
        let m = scan_dataset(data.path(), Layout::Multiclass).unwrap();
        let spec = SplitSpec { train: TrainCounts::PerClass(2), seed: 9 };
        let p = Pipeline::new(gray_cfg(DescriptorKind::SiftBow)).unwrap();
        let cb = p.train_split_codebook(&m, &spec).unwrap();

        let sp = split(&m, &spec).unwrap();
        let train: Vec<PathBuf> = sp.train.iter().map(|e| m.path_of(e)).collect();
        let direct = p.train_codebook(&train).unwrap();
        assert_eq!(cb.to_bytes().unwrap(), direct.to_bytes().unwrap());

        let all: Vec<PathBuf> = m.entries.iter().map(|e| m.path_of(e)).collect();
        let everything = p.train_codebook(&all).unwrap();
        assert_ne!(cb.to_bytes().unwrap(), everything.to_bytes().unwrap());
    }

    #[test]
    fn sample_respects_cap() {
        let data = stripes(2);
        let m = scan_dataset(data.path(), Layout::Multiclass).unwrap();
        let paths: Vec<PathBuf> = m.entries.iter().map(|e| m.path_of(e)).collect();
        let cfg = PipelineConfig { codebook_sample_cap: 37, ..gray_cfg(DescriptorKind::SiftBow) };
        let p = Pipeline::new(cfg).unwrap();
        let s = p.sample_descriptors(&paths).unwrap();
        assert_eq!(s.len(), 37);
        assert_eq!(s, p.sample_descriptors(&paths).unwrap());

        let uncapped = Pipeline::new(gray_cfg(DescriptorKind::SiftBow)).unwrap();
        // 64x64 map, 16/8 grid: 7x7 patches, one channel.
        assert_eq!(uncapped.sample_descriptors(&paths).unwrap().len(), 4 * 49);
    }

    #[test]
    fn sift_bow_report_has_codebook() {
        let data = stripes(5);
        let m = scan_dataset(data.path(), Layout::Multiclass).unwrap();
        let spec = SplitSpec { train: TrainCounts::PerClass(3), seed: 2 };
        let r = run_experiment(&m, &spec, gray_cfg(DescriptorKind::SiftBow)).unwrap();
        assert_eq!(r.feature_dim, 16);
        assert_eq!(r.codebook.as_ref().unwrap().k, 16);
        assert_eq!(r.config["descriptor"], "sift-bow");
        assert_eq!(r.config["split"]["seed"], 2);
    }
}

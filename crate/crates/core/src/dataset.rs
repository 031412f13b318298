//! Dataset manifests, seeded train/test splits and evaluation reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &[
    "png", "jpg", "jpeg", "bmp", "pgm", "ppm", "pnm", "pbm", "tif", "tiff", "gif",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One subdirectory per class.
    Multiclass,
    /// `pos/` and `neg/` subdirectories.
    Posneg,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub label: String,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub layout: Layout,
    pub entries: Vec<DatasetEntry>,
    pub hash: String,
}

fn hash_entries<'a>(entries: impl Iterator<Item = &'a DatasetEntry>) -> String {
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.label.as_bytes());
        h.update(b"\t");
        h.update(e.path.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn scan_class(root: &Path, label: &str, dir: &Path, entries: &mut Vec<DatasetEntry>) -> Result<()> {
    let before = entries.len();
    for path in list_dir(dir)? {
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let rel = path.strip_prefix(root).expect("listed under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        entries.push(DatasetEntry {
            label: label.to_string(),
            path: rel,
        });
    }
    if entries.len() == before {
        return Err(Error::format(format!(
            "class directory '{label}' ({}) contains no images",
            dir.display()
        )));
    }
    Ok(())
}

/// Lists images and labels under `root` in sorted order.
pub fn scan_dataset(root: &Path, layout: Layout) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut entries = Vec::new();
    match layout {
        Layout::Multiclass => {
            for dir in list_dir(root)?.into_iter().filter(|p| p.is_dir()) {
                let label = dir.file_name().unwrap().to_string_lossy().into_owned();
                scan_class(root, &label, &dir, &mut entries)?;
            }
        }
        Layout::Posneg => {
            for label in ["neg", "pos"] {
                let dir = root.join(label);
                if !dir.is_dir() {
                    return Err(Error::format(format!(
                        "posneg layout needs a '{label}' directory under {}",
                        root.display()
                    )));
                }
                scan_class(root, label, &dir, &mut entries)?;
            }
        }
    }
    entries.sort();
    let manifest = DatasetManifest {
        name: root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        root: root.to_path_buf(),
        layout,
        hash: hash_entries(entries.iter()),
        entries,
    };
    manifest.validate()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.labels().len() < 2 {
            return Err(Error::format(format!(
                "dataset {} needs at least 2 labels, found {}",
                self.name,
                self.labels().len()
            )));
        }
        let mut paths: Vec<&str> = self.entries.iter().map(|e| e.path.as_str()).collect();
        paths.sort_unstable();
        if paths.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::format("dataset manifest lists a path twice"));
        }
        if hash_entries(self.entries.iter()) != self.hash {
            return Err(Error::Integrity("dataset manifest hash does not match its entries".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        l.dedup();
        l.sort();
        l.dedup();
        l
    }

    pub fn class_sizes(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.label.clone()).or_insert(0) += 1;
        }
        m
    }

    pub fn path_of(&self, entry: &DatasetEntry) -> PathBuf {
        self.root.join(&entry.path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainCounts {
    /// Same number of training images for every class.
    PerClass(usize),
    /// Explicit count per label, e.g. for positive/negative sets.
    PerLabel(BTreeMap<String, usize>),
}

impl TrainCounts {
    /// Parses `N` or `label=N,label=N`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Ok(n) = s.trim().parse::<usize>() {
            return Ok(TrainCounts::PerClass(n));
        }
        let mut map = BTreeMap::new();
        for part in s.split(',') {
            let (label, n) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected N or label=N list, got '{s}'")))?;
            let n = n
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad count in '{part}'")))?;
            map.insert(label.trim().to_string(), n);
        }
        Ok(TrainCounts::PerLabel(map))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: TrainCounts,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<DatasetEntry>,
    pub test: Vec<DatasetEntry>,
    pub hash: String,
}

/// Seeded per-class sample of training images; everything else is test.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Split> {
    let mut by_label: BTreeMap<&str, Vec<&DatasetEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        by_label.entry(e.label.as_str()).or_default().push(e);
    }
    if let TrainCounts::PerLabel(map) = &spec.train {
        if let Some(extra) = map.keys().find(|l| !by_label.contains_key(l.as_str())) {
            return Err(Error::invalid(format!("split names unknown label '{extra}'")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut members) in by_label {
        let n = match &spec.train {
            TrainCounts::PerClass(n) => *n,
            TrainCounts::PerLabel(map) => *map
                .get(label)
                .ok_or_else(|| Error::invalid(format!("no training count for label '{label}'")))?,
        };
        if n == 0 {
            return Err(Error::invalid(format!("training count for '{label}' must be positive")));
        }
        if n >= members.len() {
            return Err(Error::invalid(format!(
                "class '{label}' has {} images; cannot take {n} for training and leave a test set",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend(members[..n].iter().map(|&e| e.clone()));
        test.extend(members[n..].iter().map(|&e| e.clone()));
    }
    train.sort();
    test.sort();
    let mut h = Sha256::new();
    h.update(manifest.hash.as_bytes());
    h.update(hash_entries(train.iter()).as_bytes());
    h.update(hash_entries(test.iter()).as_bytes());
    Ok(Split {
        train,
        test,
        hash: hex::encode(h.finalize()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSummary {
    pub k: usize,
    pub checksum: String,
    pub iterations: Option<usize>,
    pub distortion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub manifest_hash: String,
    pub split_hash: String,
    /// Echo of every setting and seed that shaped the result.
    pub config: serde_json::Value,
    pub codebook: Option<CodebookSummary>,
    pub feature_dim: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub labels: Vec<String>,
    /// Overall test accuracy: confusion trace / total.
    pub accuracy: f64,
    /// Unweighted mean of per-class recall.
    pub mean_recall: f64,
    pub per_class_recall: BTreeMap<String, f64>,
    /// Rows are true labels, columns predicted labels, both in `labels` order.
    pub confusion: Vec<Vec<u64>>,
}

/// Confusion matrix, accuracy and recall from parallel truth/prediction lists.
pub struct Metrics {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub mean_recall: f64,
    pub per_class_recall: BTreeMap<String, f64>,
}

pub fn compute_metrics(labels: &[String], truth: &[String], predicted: &[String]) -> Result<Metrics> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::invalid("need equally many (non-zero) truths and predictions"));
    }
    let index = |l: &str| {
        labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::invalid(format!("label '{l}' not in the label list")))
    };
    let k = labels.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[index(t)?][index(p)?] += 1;
    }
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = trace as f64 / truth.len() as f64;
    let mut per_class_recall = BTreeMap::new();
    let mut recall_sum = 0.0;
    let mut present = 0;
    for (i, l) in labels.iter().enumerate() {
        let row: u64 = confusion[i].iter().sum();
        if row > 0 {
            let r = confusion[i][i] as f64 / row as f64;
            per_class_recall.insert(l.clone(), r);
            recall_sum += r;
            present += 1;
        }
    }
    Ok(Metrics {
        labels: labels.to_vec(),
        confusion,
        accuracy,
        mean_recall: recall_sum / present as f64,
        per_class_recall,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// "HLAC, ConvMaps"-style row name.
    pub fn approach(&self) -> String {
        let descriptor = match self.config.get("descriptor").and_then(|v| v.as_str()) {
            Some("hlac") => "HLAC",
            Some("sift-bow") => "SIFT+BoW",
            Some(other) => other,
            None => "?",
        };
        let source = match self.config.get("source").and_then(|v| v.as_str()) {
            Some("convmap") => "ConvMaps",
            Some("grayscale") => "Grayscale",
            Some(other) => other,
            None => "?",
        };
        format!("{descriptor}, {source}")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let name = self.approach();
        let w = name.len().max(8);
        writeln!(s, "{:<w$}  {:>6}", "Approach", "%").unwrap();
        writeln!(s, "{}", "-".repeat(w + 8)).unwrap();
        writeln!(s, "{:<w$}  {:>6.2}", name, self.accuracy * 100.0).unwrap();
        writeln!(s, "{}", "-".repeat(w + 8)).unwrap();
        writeln!(s, "mean per-class recall: {:.2}%", self.mean_recall * 100.0).unwrap();
        writeln!(s, "train/test images: {}/{}", self.train_count, self.test_count).unwrap();
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.labels {
            s.push(',');
            s.push_str(&csv_field(l));
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            s.push_str(&csv_field(l));
            for c in row {
                write!(s, ",{c}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: [(String, f64); 2],
    /// Percentage points, second minus first.
    pub delta_points: f64,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.0.len()).max().unwrap().max(12);
        let mut s = String::new();
        writeln!(s, "{:<w$}  {:>7}", "Approach", "%").unwrap();
        writeln!(s, "{}", "-".repeat(w + 9)).unwrap();
        for (name, acc) in &self.rows {
            writeln!(s, "{:<w$}  {:>7.2}", name, acc * 100.0).unwrap();
        }
        writeln!(s, "{}", "-".repeat(w + 9)).unwrap();
        writeln!(s, "{:<w$}  {:>+7.2}", "Delta (points)", self.delta_points).unwrap();
        s
    }
}

/// Percentage-point difference between two accuracies (`b - a`).
pub fn delta_points(a: f64, b: f64) -> f64 {
    (b - a) * 100.0
}

/// Compares two runs over the same split.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    if a.manifest_hash != b.manifest_hash || a.split_hash != b.split_hash {
        return Err(Error::invalid(
            "reports were produced on different datasets or splits; refusing to compare",
        ));
    }
    Ok(Comparison {
        rows: [(a.approach(), a.accuracy), (b.approach(), b.accuracy)],
        delta_points: delta_points(a.accuracy, b.accuracy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, b"x").unwrap();
    }

    fn toy_tree() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a/1.png", "a/2.png", "a/3.jpg", "b/1.png", "b/2.PNG", "b/notes.txt"] {
            touch(&dir.path().join(f));
        }
        dir
    }

    #[test]
    fn scan_toy_tree() {
        let dir = toy_tree();
        let m = scan_dataset(dir.path(), Layout::Multiclass).unwrap();
        assert_eq!(m.entries.len(), 5);
        assert_eq!(m.labels(), vec!["a", "b"]);
        assert_eq!(m.entries[0].path, "a/1.png");
        let again = scan_dataset(dir.path(), Layout::Multiclass).unwrap();
        assert_eq!(m.hash, again.hash);
    }

    #[test]
    fn empty_class_dir_named() {
        let dir = toy_tree();
        fs::create_dir(dir.path().join("empty_cls")).unwrap();
        let err = scan_dataset(dir.path(), Layout::Multiclass).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("empty_cls"));
    }

    #[test]
    fn posneg_layout() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["pos/p1.png", "pos/p2.png", "neg/n1.png"] {
            touch(&dir.path().join(f));
        }
        let m = scan_dataset(dir.path(), Layout::Posneg).unwrap();
        assert_eq!(m.labels(), vec!["neg", "pos"]);
        fs::remove_dir_all(dir.path().join("neg")).unwrap();
        assert!(scan_dataset(dir.path(), Layout::Posneg).is_err());
    }

    fn manifest_with(sizes: &[(&str, usize)]) -> DatasetManifest {
        let mut entries: Vec<DatasetEntry> = sizes
            .iter()
            .flat_map(|&(l, n)| {
                (0..n).map(move |i| DatasetEntry {
                    label: l.to_string(),
                    path: format!("{l}/{i:03}.png"),
                })
            })
            .collect();
        entries.sort();
        DatasetManifest {
            name: "toy".into(),
            root: PathBuf::from("/toy"),
            layout: Layout::Multiclass,
            hash: hash_entries(entries.iter()),
            entries,
        }
    }

    #[test]
    fn split_rejects_whole_class() {
        let m = manifest_with(&[("a", 5), ("b", 9)]);
        let err = split(&m, &SplitSpec { train: TrainCounts::PerClass(5), seed: 0 }).unwrap_err();
        assert!(err.to_string().contains("'a'"));
    }

    #[test]
    fn split_is_seeded_and_partitions() {
        for seed in 0..20 {
            let m = manifest_with(&[("a", 7), ("b", 4), ("c", 11)]);
            let spec = SplitSpec { train: TrainCounts::PerClass(3), seed };
            let s = split(&m, &spec).unwrap();
            assert_eq!(s, split(&m, &spec).unwrap());
            assert_eq!(s.train.len(), 9);
            let mut all: Vec<_> = s.train.iter().chain(&s.test).cloned().collect();
            all.sort();
            assert_eq!(all, m.entries);
            assert!(s.train.iter().all(|e| !s.test.contains(e)));
        }
    }

    #[test]
    fn per_label_counts() {
        let m = manifest_with(&[("neg", 6), ("pos", 8)]);
        let spec = SplitSpec { train: TrainCounts::parse("pos=5,neg=2").unwrap(), seed: 1 };
        let s = split(&m, &spec).unwrap();
        assert_eq!(s.train.iter().filter(|e| e.label == "pos").count(), 5);
        assert_eq!(s.train.iter().filter(|e| e.label == "neg").count(), 2);
        assert_eq!(TrainCounts::parse("15").unwrap(), TrainCounts::PerClass(15));
        assert!(TrainCounts::parse("pos:3").is_err());
    }

    fn report(acc: f64, split_hash: &str, source: &str) -> EvalReport {
        EvalReport {
            dataset: "toy".into(),
            manifest_hash: "m".into(),
            split_hash: split_hash.into(),
            config: serde_json::json!({"descriptor": "hlac", "source": source}),
            codebook: None,
            feature_dim: 25,
            train_count: 1,
            test_count: 1,
            labels: vec![],
            accuracy: acc,
            mean_recall: acc,
            per_class_recall: BTreeMap::new(),
            confusion: vec![],
        }
    }

    #[test]
    fn comparison_delta() {
        let a = report(0.7411, "s", "grayscale");
        let b = report(0.9882, "s", "convmap");
        let c = compare_reports(&a, &b).unwrap();
        assert_eq!(format!("{:+.2}", c.delta_points), "+24.71");
        assert!(c.to_table().contains("+24.71"));
        assert!(c.to_table().contains("HLAC, ConvMaps"));
        let back = compare_reports(&b, &a).unwrap();
        assert_eq!(back.delta_points, -c.delta_points);
        assert_eq!(compare_reports(&a, &a).unwrap().delta_points, 0.0);
        assert!(compare_reports(&a, &report(0.5, "other", "convmap")).is_err());
    }

    #[test]
    fn metrics_consistency() {
        let labels: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let t: Vec<String> = ["a", "a", "b", "c", "c", "c"].iter().map(|s| s.to_string()).collect();
        let p: Vec<String> = ["a", "b", "b", "c", "a", "c"].iter().map(|s| s.to_string()).collect();
        let m = compute_metrics(&labels, &t, &p).unwrap();
        assert_eq!(m.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 2]]);
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-12);
        assert!((m.mean_recall - (0.5 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }
}

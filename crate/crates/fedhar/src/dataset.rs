//! UCI-HAR-style inertial windows: raw-layout ingestion, label remapping,
//! stratified splitting, channel normalization and disjoint sampling.
//!
//! A window is 128 samples of six channels (body accelerometer x/y/z then
//! body gyroscope x/y/z). Raw labels 1..=6 map to class ids 0..=5.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 6;
pub const WINDOW_LEN: usize = 128;
pub const NUM_CHANNELS: usize = 6;

const CACHE_MAGIC: &[u8; 8] = b"HARCACHE";
const CACHE_VERSION: u32 = 1;

/// The six activity classes, in remapped id order (raw label minus one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Activity {
    Walking = 0,
    WalkingUpstairs = 1,
    WalkingDownstairs = 2,
    Sitting = 3,
    Standing = 4,
    Lying = 5,
}

impl Activity {
    pub const ALL: [Activity; NUM_CLASSES] = [
        Activity::Walking,
        Activity::WalkingUpstairs,
        Activity::WalkingDownstairs,
        Activity::Sitting,
        Activity::Standing,
        Activity::Lying,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Activity> {
        Activity::ALL.get(id).copied()
    }

    /// Raw UCI label (1..=6) to class id.
    pub fn from_raw_label(raw: i64) -> Option<Activity> {
        if (1..=6).contains(&raw) {
            Activity::from_id(raw as usize - 1)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::Walking => "Walking",
            Activity::WalkingUpstairs => "WalkingUpstairs",
            Activity::WalkingDownstairs => "WalkingDownstairs",
            Activity::Sitting => "Sitting",
            Activity::Standing => "Standing",
            Activity::Lying => "Lying",
        }
    }

    /// The full class set, for schedules covering every activity.
    pub fn all_set() -> BTreeSet<Activity> {
        Activity::ALL.iter().copied().collect()
    }
}

/// One labeled sensor window.
#[derive(Debug, Clone)]
pub struct Window {
    /// Shape `[128, 6]`, row-major over (time, channel).
    pub signal: Tensor,
    pub label: Activity,
    pub subject: u16,
    pub uid: u32,
}

/// Per-channel mean and standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: {detail}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}:{line}: raw label {raw} outside 1..=6")]
    LabelOutOfRange { path: PathBuf, line: usize, raw: i64 },
    #[error("{left} has {left_count} lines but {right} has {right_count}")]
    LengthMismatch {
        left: PathBuf,
        left_count: usize,
        right: PathBuf,
        right_count: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("insufficient data for class {class:?}: need {need}, have {have}")]
    InsufficientData {
        class: Activity,
        need: usize,
        have: usize,
    },
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An ordered collection of windows with unique uids.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    windows: Vec<Window>,
    normalization: Option<NormStats>,
}

impl Dataset {
    pub fn from_windows(windows: Vec<Window>, normalization: Option<NormStats>) -> Dataset {
        let mut seen = HashSet::with_capacity(windows.len());
        for w in &windows {
            assert!(seen.insert(w.uid), "duplicate uid {} in dataset", w.uid);
        }
        Dataset {
            windows,
            normalization,
        }
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn normalization(&self) -> Option<&NormStats> {
        self.normalization.as_ref()
    }

    pub fn per_class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0usize; NUM_CLASSES];
        for w in &self.windows {
            counts[w.label.id()] += 1;
        }
        counts
    }

    pub fn uids(&self) -> Vec<u32> {
        self.windows.iter().map(|w| w.uid).collect()
    }

    fn class_indices(&self, class: Activity) -> Vec<usize> {
        self.windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.label == class)
            .map(|(i, _)| i)
            .collect()
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            normalization: self.normalization.clone(),
        }
    }
}

fn signal_path(root: &Path, partition: &str, name: &str) -> PathBuf {
    root.join(partition)
        .join("Inertial Signals")
        .join(format!("{name}_{partition}.txt"))
}

fn open_lines(path: &Path) -> Result<Vec<String>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let file = fs::File::open(path)?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line?);
    }
    Ok(lines)
}

fn read_signal_file(path: &Path) -> Result<Vec<Vec<f64>>, DatasetError> {
    let lines = open_lines(path)?;
    let mut rows = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let mut row = Vec::with_capacity(WINDOW_LEN);
        for tok in line.split_ascii_whitespace() {
            let v: f64 = tok.parse().map_err(|_| DatasetError::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("invalid number {tok:?}"),
            })?;
            row.push(v);
        }
        if row.len() != WINDOW_LEN {
            return Err(DatasetError::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("expected {} numeric fields, found {}", WINDOW_LEN, row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_int_file(path: &Path) -> Result<Vec<i64>, DatasetError> {
    let lines = open_lines(path)?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let tok = line.trim();
        let v: i64 = tok.parse().map_err(|_| DatasetError::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            detail: format!("invalid integer {tok:?}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Load the raw UCI HAR inertial-signal layout and merge both partitions.
///
/// For each partition `p` in `train`, `test` this reads
/// `p/Inertial Signals/body_{acc,gyro}_{x,y,z}_p.txt`, `p/y_p.txt` and
/// `p/subject_p.txt`. Total-acceleration channels are ignored. Labels are
/// remapped from raw 1..=6 to ids 0..=5 and uids are assigned sequentially
/// in file order, train partition first.
pub fn load_uci(root: &Path) -> Result<Dataset, DatasetError> {
    const CHANNEL_NAMES: [&str; NUM_CHANNELS] = [
        "body_acc_x",
        "body_acc_y",
        "body_acc_z",
        "body_gyro_x",
        "body_gyro_y",
        "body_gyro_z",
    ];

    let mut windows = Vec::new();
    let mut uid: u32 = 0;
    for partition in ["train", "test"] {
        let mut channels = Vec::with_capacity(NUM_CHANNELS);
        let mut channel_paths = Vec::with_capacity(NUM_CHANNELS);
        for name in CHANNEL_NAMES {
            let path = signal_path(root, partition, name);
            channels.push(read_signal_file(&path)?);
            channel_paths.push(path);
        }
        let y_path = root.join(partition).join(format!("y_{partition}.txt"));
        let labels = read_int_file(&y_path)?;
        let subj_path = root.join(partition).join(format!("subject_{partition}.txt"));
        let subjects = read_int_file(&subj_path)?;

        let n = channels[0].len();
        for (c, rows) in channels.iter().enumerate() {
            if rows.len() != n {
                return Err(DatasetError::LengthMismatch {
                    left: channel_paths[0].clone(),
                    left_count: n,
                    right: channel_paths[c].clone(),
                    right_count: rows.len(),
                });
            }
        }
        if labels.len() != n {
            return Err(DatasetError::LengthMismatch {
                left: channel_paths[0].clone(),
                left_count: n,
                right: y_path.clone(),
                right_count: labels.len(),
            });
        }
        if subjects.len() != n {
            return Err(DatasetError::LengthMismatch {
                left: channel_paths[0].clone(),
                left_count: n,
                right: subj_path.clone(),
                right_count: subjects.len(),
            });
        }

        for i in 0..n {
            let label = Activity::from_raw_label(labels[i]).ok_or(DatasetError::LabelOutOfRange {
                path: y_path.clone(),
                line: i + 1,
                raw: labels[i],
            })?;
            let mut values = vec![0.0; WINDOW_LEN * NUM_CHANNELS];
            for (c, rows) in channels.iter().enumerate() {
                for t in 0..WINDOW_LEN {
                    values[t * NUM_CHANNELS + c] = rows[i][t];
                }
            }
            windows.push(Window {
                signal: Tensor::new(vec![WINDOW_LEN, NUM_CHANNELS], values),
                label,
                subject: subjects[i] as u16,
                uid,
            });
            uid += 1;
        }
    }
    Ok(Dataset::from_windows(windows, None))
}

/// Split per class: each class's windows are shuffled and cut at
/// `floor(n * r0)` and `floor(n * (r0 + r1))`. The three outputs partition
/// the input.
pub fn stratified_split(
    d: &Dataset,
    ratios: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    let (r0, r1, r2) = ratios;
    assert!(
        r0 >= 0.0 && r1 >= 0.0 && r2 >= 0.0 && ((r0 + r1 + r2) - 1.0).abs() <= 1e-9,
        "split ratios must be nonnegative and sum to 1"
    );
    if d.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in Activity::ALL {
        let idx = d.class_indices(class);
        let n = idx.len();
        let perm = rng.shuffle(n);
        let cut1 = (n as f64 * r0).floor() as usize;
        let cut2 = (n as f64 * (r0 + r1)).floor() as usize;
        for (pos, &p) in perm.iter().enumerate() {
            let i = idx[p];
            if pos < cut1 {
                train.push(i);
            } else if pos < cut2 {
                val.push(i);
            } else {
                test.push(i);
            }
        }
    }
    Ok((d.subset(&train), d.subset(&val), d.subset(&test)))
}

/// Fit per-channel mean and standard deviation over every sample of the
/// training split. Standard deviations are floored at 1e-8.
pub fn fit_normalizer(train: &Dataset) -> Result<NormStats, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = (train.len() * WINDOW_LEN) as f64;
    let mut mean = [0.0; NUM_CHANNELS];
    for w in train.windows() {
        for row in w.signal.values().chunks_exact(NUM_CHANNELS) {
            for (c, v) in row.iter().enumerate() {
                mean[c] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; NUM_CHANNELS];
    for w in train.windows() {
        for row in w.signal.values().chunks_exact(NUM_CHANNELS) {
            for (c, v) in row.iter().enumerate() {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
    }
    let mut std = [0.0; NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        std[c] = (var[c] / n).sqrt().max(1e-8);
    }
    Ok(NormStats { mean, std })
}

/// Apply fitted stats: subtract the channel mean, divide by the channel std.
pub fn apply_normalizer(stats: &NormStats, d: &Dataset) -> Dataset {
    let windows = d
        .windows()
        .iter()
        .map(|w| {
            let mut values = w.signal.values().to_vec();
            for row in values.chunks_exact_mut(NUM_CHANNELS) {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (*v - stats.mean[c]) / stats.std[c];
                }
            }
            Window {
                signal: Tensor::new(vec![WINDOW_LEN, NUM_CHANNELS], values),
                ..w.clone()
            }
        })
        .collect();
    Dataset {
        windows,
        normalization: Some(stats.clone()),
    }
}

/// Per-class quotas for a balanced draw of `n` windows: `floor(n/|C|)` each,
/// remainder assigned to the lowest class ids.
pub fn balanced_quotas(classes: &BTreeSet<Activity>, n: usize) -> Vec<(Activity, usize)> {
    assert!(!classes.is_empty() || n == 0, "draw from empty class set");
    if classes.is_empty() {
        return Vec::new();
    }
    let k = classes.len();
    let base = n / k;
    let rem = n % k;
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, base + usize::from(i < rem)))
        .collect()
}

/// Draw `n` windows of the given classes uniformly without replacement.
///
/// Multi-class draws are class-balanced per [`balanced_quotas`]. Returns the
/// sample and the pool minus the sample (original order preserved).
pub fn draw_disjoint(
    pool: &Dataset,
    classes: &BTreeSet<Activity>,
    n: usize,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset), DatasetError> {
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for (class, quota) in balanced_quotas(classes, n) {
        let idx = pool.class_indices(class);
        if idx.len() < quota {
            return Err(DatasetError::InsufficientData {
                class,
                need: quota,
                have: idx.len(),
            });
        }
        let perm = rng.shuffle(idx.len());
        chosen.extend(perm[..quota].iter().map(|&p| idx[p]));
    }
    let chosen_set: HashSet<usize> = chosen.iter().copied().collect();
    let remaining: Vec<usize> = (0..pool.len()).filter(|i| !chosen_set.contains(i)).collect();
    Ok((pool.subset(&chosen), pool.subset(&remaining)))
}

/// Sample `per_class` windows of every class from the test split.
pub fn build_common_test(
    test_split: &Dataset,
    per_class: usize,
    rng: &mut Rng,
) -> Result<Dataset, DatasetError> {
    let (sample, _) = draw_disjoint(
        test_split,
        &Activity::all_set(),
        per_class * NUM_CLASSES,
        rng,
    )?;
    Ok(sample)
}

// ---------------------------------------------------------------------------
// Prepared-data store: split manifest CSV, normalization stats, binary cache.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn from_str(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Raw (unnormalized) splits plus the stats fitted on the training split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub stats: NormStats,
}

impl PreparedData {
    /// The three splits with normalization applied.
    pub fn normalized(&self) -> (Dataset, Dataset, Dataset) {
        (
            apply_normalizer(&self.stats, &self.train),
            apply_normalizer(&self.stats, &self.val),
            apply_normalizer(&self.stats, &self.test),
        )
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.csv")
}

pub fn normalization_path(dir: &Path) -> PathBuf {
    dir.join("normalization.json")
}

pub fn cache_path(dir: &Path) -> PathBuf {
    dir.join("cache.bin")
}

/// Write manifest.csv (uid,subject,label,split in uid order), the fitted
/// normalization stats and a binary cache of every raw window. Returns the
/// written paths.
pub fn save_prepared(
    dir: &Path,
    full: &Dataset,
    prepared: &PreparedData,
) -> Result<Vec<PathBuf>, DatasetError> {
    fs::create_dir_all(dir)?;

    let mut split_of: HashMap<u32, Split> = HashMap::with_capacity(full.len());
    for (split, d) in [
        (Split::Train, &prepared.train),
        (Split::Val, &prepared.val),
        (Split::Test, &prepared.test),
    ] {
        for w in d.windows() {
            split_of.insert(w.uid, split);
        }
    }

    let manifest = manifest_path(dir);
    {
        let mut out = BufWriter::new(fs::File::create(&manifest)?);
        writeln!(out, "uid,subject,label,split")?;
        let mut rows: Vec<&Window> = full.windows().iter().collect();
        rows.sort_by_key(|w| w.uid);
        for w in rows {
            let split = split_of
                .get(&w.uid)
                .ok_or_else(|| DatasetError::Cache(format!("uid {} missing from splits", w.uid)))?;
            writeln!(
                out,
                "{},{},{},{}",
                w.uid,
                w.subject,
                w.label.id(),
                split.as_str()
            )?;
        }
        out.flush()?;
    }

    let norm = normalization_path(dir);
    fs::write(
        &norm,
        serde_json::to_string_pretty(&prepared.stats).expect("stats serialize"),
    )?;

    let cache = cache_path(dir);
    {
        let mut out = BufWriter::new(fs::File::create(&cache)?);
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&(full.len() as u32).to_le_bytes())?;
        let mut rows: Vec<&Window> = full.windows().iter().collect();
        rows.sort_by_key(|w| w.uid);
        for w in rows {
            out.write_all(&w.uid.to_le_bytes())?;
            out.write_all(&w.subject.to_le_bytes())?;
            out.write_all(&[w.label.id() as u8, 0])?;
            for v in w.signal.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
    }

    Ok(vec![manifest, norm, cache])
}

/// Reload the splits written by [`save_prepared`]. Windows come back in uid
/// order within each split.
pub fn load_prepared(dir: &Path) -> Result<PreparedData, DatasetError> {
    let cache = cache_path(dir);
    if !cache.is_file() {
        return Err(DatasetError::MissingFile(cache));
    }
    let bytes = fs::read(&cache)?;
    let mut cursor = io::Cursor::new(&bytes);

    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic).map_err(corrupt_cache)?;
    if &magic != CACHE_MAGIC {
        return Err(DatasetError::Cache("bad magic".into()));
    }
    let version = read_u32(&mut cursor)?;
    if version != CACHE_VERSION {
        return Err(DatasetError::Cache(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut cursor)? as usize;

    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let uid = read_u32(&mut cursor)?;
        let mut buf2 = [0u8; 2];
        cursor.read_exact(&mut buf2).map_err(corrupt_cache)?;
        let subject = u16::from_le_bytes(buf2);
        cursor.read_exact(&mut buf2).map_err(corrupt_cache)?;
        let label = Activity::from_id(buf2[0] as usize)
            .ok_or_else(|| DatasetError::Cache(format!("bad label {}", buf2[0])))?;
        let mut values = vec![0.0; WINDOW_LEN * NUM_CHANNELS];
        let mut buf8 = [0u8; 8];
        for v in &mut values {
            cursor.read_exact(&mut buf8).map_err(corrupt_cache)?;
            *v = f64::from_le_bytes(buf8);
        }
        windows.push(Window {
            signal: Tensor::new(vec![WINDOW_LEN, NUM_CHANNELS], values),
            label,
            subject,
            uid,
        });
    }

    let manifest = manifest_path(dir);
    if !manifest.is_file() {
        return Err(DatasetError::MissingFile(manifest));
    }
    let mut split_of: HashMap<u32, Split> = HashMap::with_capacity(count);
    for (i, line) in fs::read_to_string(&manifest)?.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(DatasetError::Cache(format!(
                "manifest line {} has {} fields",
                i + 1,
                fields.len()
            )));
        }
        let uid: u32 = fields[0]
            .parse()
            .map_err(|_| DatasetError::Cache(format!("manifest line {}: bad uid", i + 1)))?;
        let split = Split::from_str(fields[3])
            .ok_or_else(|| DatasetError::Cache(format!("manifest line {}: bad split", i + 1)))?;
        split_of.insert(uid, split);
    }

    let norm = normalization_path(dir);
    if !norm.is_file() {
        return Err(DatasetError::MissingFile(norm));
    }
    let stats: NormStats = serde_json::from_str(&fs::read_to_string(&norm)?)
        .map_err(|e| DatasetError::Cache(format!("normalization stats: {e}")))?;

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for w in windows {
        match split_of.get(&w.uid) {
            Some(Split::Train) => train.push(w),
            Some(Split::Val) => val.push(w),
            Some(Split::Test) => test.push(w),
            None => {
                return Err(DatasetError::Cache(format!(
                    "uid {} not present in manifest",
                    w.uid
                )))
            }
        }
    }
    Ok(PreparedData {
        train: Dataset::from_windows(train, None),
        val: Dataset::from_windows(val, None),
        test: Dataset::from_windows(test, None),
        stats,
    })
}

fn corrupt_cache(_: io::Error) -> DatasetError {
    DatasetError::Cache("truncated cache file".into())
}

fn read_u32(cursor: &mut io::Cursor<&Vec<u8>>) -> Result<u32, DatasetError> {
    let mut buf = [0u8; 4];
    cursor.read_exact(&mut buf).map_err(corrupt_cache)?;
    Ok(u32::from_le_bytes(buf))
}

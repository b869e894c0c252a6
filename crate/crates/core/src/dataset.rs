//! Dataset manifests and clip-level 3-fold splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Xorshift64Star};

/// GTzan genres in label-index order.
pub const GTZAN_GENRES: [&str; 10] = [
    "blues",
    "classical",
    "country",
    "disco",
    "hiphop",
    "jazz",
    "metal",
    "pop",
    "reggae",
    "rock",
];

pub const NUM_SETS: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("dataset at {0} contains no clips")]
    Empty(String),
    #[error("unknown genre directory {0:?}")]
    UnknownGenre(String),
    #[error("duplicate clip id {0:?}")]
    DuplicateClip(String),
    #[error("genre {genre:?} of clip {clip_id:?} is not in the label set")]
    LabelOutOfSet { clip_id: String, genre: String },
    #[error("need at least {NUM_SETS} clips to build folds, got {0}")]
    TooFewClips(usize),
    #[error("fold {0} out of range")]
    NoSuchFold(usize),
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub genres: Vec<String>,
}

/// Which genre directories `scan_dataset` accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenreSet {
    /// A fixed, ordered label list.
    Fixed(Vec<String>),
    /// Every subdirectory is a genre; labels follow sorted directory names.
    Infer,
}

impl GenreSet {
    pub fn gtzan() -> Self {
        Self::Fixed(GTZAN_GENRES.iter().map(|s| s.to_string()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub genres: GenreSet,
    /// Unknown genre directories are an error instead of a warning.
    pub strict: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            genres: GenreSet::gtzan(),
            strict: false,
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut paths = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_err(dir, err)))
        .collect::<Result<Vec<_>, _>>()?;
    paths.sort();
    Ok(paths)
}

fn is_wav(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Builds a manifest from `<root>/<genre>/*.wav`, in lexicographic order.
pub fn scan_dataset(
    root: impl AsRef<Path>,
    opts: &ScanOptions,
) -> Result<DatasetManifest, DatasetError> {
    let root = root.as_ref();
    let dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    let genres: Vec<String> = match &opts.genres {
        GenreSet::Fixed(list) => list.clone(),
        GenreSet::Infer => dirs
            .iter()
            .filter_map(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let index: HashMap<&str, usize> = genres
        .iter()
        .enumerate()
        .map(|(i, g)| (g.as_str(), i))
        .collect();

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for dir in &dirs {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let Some(&label) = index.get(name.as_str()) else {
            if opts.strict {
                return Err(DatasetError::UnknownGenre(name));
            }
            log::warn!("skipping unknown genre directory {}", dir.display());
            continue;
        };
        for path in sorted_entries(dir)?.into_iter().filter(|p| is_wav(p)) {
            let clip_id = path.file_stem().unwrap().to_string_lossy().into_owned();
            if !seen.insert(clip_id.clone()) {
                return Err(DatasetError::DuplicateClip(clip_id));
            }
            entries.push(ManifestEntry {
                clip_id,
                path,
                label,
            });
        }
    }
    if entries.is_empty() {
        return Err(DatasetError::Empty(root.display().to_string()));
    }
    Ok(DatasetManifest { entries, genres })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    clip_id: String,
    path: String,
    genre: String,
    set_index: Option<usize>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.genres.len()
    }

    pub fn entry(&self, clip_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }

    pub fn labels_by_clip(&self) -> HashMap<&str, usize> {
        self.entries
            .iter()
            .map(|e| (e.clip_id.as_str(), e.label))
            .collect()
    }

    /// Entries per label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.genres.len()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    /// Checks unique ids and in-range labels.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(DatasetError::DuplicateClip(e.clip_id.clone()));
            }
            if e.label >= self.genres.len() {
                return Err(DatasetError::LabelOutOfSet {
                    clip_id: e.clip_id.clone(),
                    genre: e.label.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Writes `clip_id,path,genre,set_index`. Paths under `base` are stored
    /// relative to it; `set_index` is left empty when `folds` is `None`.
    pub fn write_csv(
        &self,
        path: impl AsRef<Path>,
        base: &Path,
        folds: Option<&FoldAssignment>,
    ) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let csv_err = |source| DatasetError::Csv {
            path: path.display().to_string(),
            source,
        };
        let set_of: HashMap<&str, usize> = folds
            .map(|f| {
                f.sets
                    .iter()
                    .enumerate()
                    .flat_map(|(i, s)| s.iter().map(move |c| (c.as_str(), i)))
                    .collect()
            })
            .unwrap_or_default();
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(csv_err)?;
        for e in &self.entries {
            let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
            w.serialize(ManifestRow {
                clip_id: e.clip_id.clone(),
                path: rel.to_string_lossy().replace('\\', "/"),
                genre: self.genres[e.label].clone(),
                set_index: set_of.get(e.clip_id.as_str()).copied(),
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }

    /// Reads a manifest CSV. Relative paths resolve against `base`; the label
    /// order is `genres` if given, else the sorted distinct genre names.
    pub fn read_csv(
        path: impl AsRef<Path>,
        base: &Path,
        genres: Option<&[String]>,
    ) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let csv_err = |source| DatasetError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let rows: Vec<ManifestRow> = r.deserialize().collect::<Result<_, _>>().map_err(csv_err)?;
        let genres: Vec<String> = match genres {
            Some(g) => g.to_vec(),
            None => rows
                .iter()
                .map(|r| r.genre.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let index: HashMap<&str, usize> = genres
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let mut entries = Vec::with_capacity(rows.len());
        for row in &rows {
            let label =
                *index
                    .get(row.genre.as_str())
                    .ok_or_else(|| DatasetError::LabelOutOfSet {
                        clip_id: row.clip_id.clone(),
                        genre: row.genre.clone(),
                    })?;
            let p = PathBuf::from(&row.path);
            entries.push(ManifestEntry {
                clip_id: row.clip_id.clone(),
                path: if p.is_absolute() { p } else { base.join(p) },
                label,
            });
        }
        if entries.is_empty() {
            return Err(DatasetError::Empty(path.display().to_string()));
        }
        let manifest = Self { entries, genres };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// How the three sets are turned into train/validation/test for each fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldProtocol {
    /// Fold `f` tests on set `f`, validates on `f+1` and trains on `f+2`
    /// (mod 3): each set plays every role once.
    #[default]
    Rotation,
    /// Trains on the two non-test sets minus a 10% validation slice.
    TrainTwoSets,
}

/// Roles of the three sets in one fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldRoles {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub fn fold_roles(fold: usize) -> FoldRoles {
    FoldRoles {
        test: fold % NUM_SETS,
        val: (fold + 1) % NUM_SETS,
        train: (fold + 2) % NUM_SETS,
    }
}

/// Clip ids of one fold's train, validation and test splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// A seeded partition of the manifest into three disjoint sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub seed: u64,
    pub sets: [Vec<String>; NUM_SETS],
}

/// Shuffles the manifest with the seeded generator and deals clips
/// round-robin into three sets (sizes differ by at most one).
pub fn make_folds(manifest: &DatasetManifest, seed: u64) -> Result<FoldAssignment, DatasetError> {
    if manifest.len() < NUM_SETS {
        return Err(DatasetError::TooFewClips(manifest.len()));
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    Xorshift64Star::with_stream(seed, stream::FOLDS).shuffle(&mut order);
    let mut sets: [Vec<String>; NUM_SETS] = Default::default();
    for (pos, &i) in order.iter().enumerate() {
        sets[pos % NUM_SETS].push(manifest.entries[i].clip_id.clone());
    }
    Ok(FoldAssignment { seed, sets })
}

impl FoldAssignment {
    pub fn set_sizes(&self) -> [usize; NUM_SETS] {
        [self.sets[0].len(), self.sets[1].len(), self.sets[2].len()]
    }

    pub fn split(&self, fold: usize, protocol: FoldProtocol) -> Result<FoldSplit, DatasetError> {
        if fold >= NUM_SETS {
            return Err(DatasetError::NoSuchFold(fold));
        }
        let roles = fold_roles(fold);
        let test = self.sets[roles.test].clone();
        let (train, val) = match protocol {
            FoldProtocol::Rotation => {
                (self.sets[roles.train].clone(), self.sets[roles.val].clone())
            }
            FoldProtocol::TrainTwoSets => {
                let mut pool: Vec<String> = self.sets[roles.train]
                    .iter()
                    .chain(&self.sets[roles.val])
                    .cloned()
                    .collect();
                let n_val = ((pool.len() as f64 * 0.1).round() as usize).clamp(1, pool.len() - 1);
                let val = pool.split_off(pool.len() - n_val);
                (pool, val)
            }
        };
        Ok(FoldSplit {
            fold,
            train,
            val,
            test,
        })
    }
}

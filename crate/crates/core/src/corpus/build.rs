use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::{check_unique_ids, ingest_dataset};
use super::manifest::{FewShotScope, Manifest};
use super::prompt::{assign_instructions, attach_demonstration, inject_few_shot, select_few_shot};
use super::sampling::sample_fraction;
use super::types::{DatasetKey, GkgRecord, GraphFamily, InstructionPool, PromptStrategy, TaskDescriptor};
use crate::error::{Error, Result};

/// One dataset's assembled splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub descriptor: TaskDescriptor,
    pub train: Vec<GkgRecord>,
    pub test: Vec<GkgRecord>,
}

/// An assembled corpus, datasets in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub strategy: PromptStrategy,
    pub few_shot_fraction: f64,
    pub datasets: Vec<DatasetSplit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FamilyStats {
    pub family: GraphFamily,
    pub datasets: usize,
    pub held_out: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Serialize, Deserialize)]
struct CorpusIndex {
    seed: u64,
    strategy: PromptStrategy,
    few_shot_fraction: f64,
    datasets: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    #[serde(flatten)]
    descriptor: TaskDescriptor,
    train: usize,
    test: usize,
}

/// Run ingestion, sampling, instruction assignment and few-shot injection
/// for every dataset of `manifest`.
///
/// `raw_rows` supplies the tab-separated rows of each registered dataset.
pub fn assemble<F>(
    manifest: &Manifest,
    pools: &BTreeMap<String, InstructionPool>,
    strategy: PromptStrategy,
    mut raw_rows: F,
) -> Result<Corpus>
where
    F: FnMut(&DatasetKey) -> Result<Vec<String>>,
{
    manifest.validate()?;
    let seed = manifest.seed;
    let mut datasets = Vec::with_capacity(manifest.datasets.len());
    for entry in &manifest.datasets {
        let d = &entry.descriptor;
        let key = d.key();
        let pool = pools
            .get(&d.task_code)
            .ok_or_else(|| Error::Config(format!("no instruction pool for task {}", d.task_code)))?;
        let rows = raw_rows(&key)?;
        let (mut train, test) = ingest_dataset(rows.iter().map(String::as_str), d, manifest)?;
        if d.sampled {
            train = sample_fraction(&train, d.fraction, seed)?;
        }
        let train = assign_instructions(&train, pool, seed, strategy)?;
        let test = assign_instructions(&test, pool, seed, strategy)?;
        datasets.push(DatasetSplit {
            descriptor: d.clone(),
            train,
            test,
        });
    }

    // Donors: the pooled training split of each task code. A task with no
    // training data draws from the receiving split instead.
    let mut donors: BTreeMap<String, Vec<GkgRecord>> = BTreeMap::new();
    for ds in &datasets {
        donors
            .entry(ds.descriptor.task_code.clone())
            .or_default()
            .extend(ds.train.iter().cloned());
    }
    let fraction = manifest.few_shot_fraction;

    match manifest.few_shot_scope {
        FewShotScope::PerDataset => {
            for ds in &mut datasets {
                let pool = &donors[&ds.descriptor.task_code];
                for split in [Split::Train, Split::Test] {
                    let records = split.of_mut(ds);
                    let own = if pool.is_empty() { records.clone() } else { Vec::new() };
                    let from = if pool.is_empty() { &own } else { pool };
                    if !records.is_empty() {
                        *records = inject_few_shot(records, from, fraction, seed, strategy)?;
                    }
                }
            }
        }
        FewShotScope::Global if !strategy.zero_shot_only() => {
            for split in [Split::Train, Split::Test] {
                let ids: Vec<String> = datasets
                    .iter()
                    .flat_map(|ds| split.of(ds).iter().map(|r| r.id.clone()))
                    .collect();
                let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
                let chosen: HashSet<&str> = select_few_shot(&id_refs, fraction, seed)?
                    .into_iter()
                    .zip(&id_refs)
                    .filter_map(|(c, id)| c.then_some(*id))
                    .collect();
                for ds in &mut datasets {
                    let pool = &donors[&ds.descriptor.task_code];
                    let records = split.of_mut(ds);
                    let own = if pool.is_empty() { records.clone() } else { Vec::new() };
                    let from = if pool.is_empty() { &own } else { pool };
                    for r in records.iter_mut() {
                        if chosen.contains(r.id.as_str()) {
                            *r = attach_demonstration(r, from, seed)?;
                        }
                    }
                }
            }
        }
        FewShotScope::Global => {}
    }

    let corpus = Corpus {
        seed,
        strategy,
        few_shot_fraction: fraction,
        datasets,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[derive(Clone, Copy)]
enum Split {
    Train,
    Test,
}

impl Split {
    fn of(self, ds: &DatasetSplit) -> &[GkgRecord] {
        match self {
            Split::Train => &ds.train,
            Split::Test => &ds.test,
        }
    }

    fn of_mut(self, ds: &mut DatasetSplit) -> &mut Vec<GkgRecord> {
        match self {
            Split::Train => &mut ds.train,
            Split::Test => &mut ds.test,
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Load the raw files and template files named by a manifest on disk and
/// assemble the corpus. Relative paths resolve against the manifest's
/// directory.
pub fn assemble_from_manifest_file(path: &Path, strategy: PromptStrategy) -> Result<Corpus> {
    let manifest = Manifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pools = BTreeMap::new();
    for (task, file) in &manifest.instructions {
        let p = base.join(file);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        pools.insert(task.clone(), InstructionPool::parse(task, &text)?);
    }
    assemble(&manifest, &pools, strategy, |key| {
        let entry = manifest.entry(key).expect("key comes from the manifest");
        let p = base.join(&entry.raw);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(text.lines().map(String::from).collect())
    })
}

fn jsonl(records: &[GkgRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// Parse a JSON-lines record file.
pub fn parse_records(text: &str, context: &str) -> Result<Vec<GkgRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::json(format!("{context}:{}", i + 1), e))
        })
        .collect()
}

pub fn records_to_jsonl(records: &[GkgRecord]) -> String {
    String::from_utf8(jsonl(records)).expect("json is utf-8")
}

impl Corpus {
    pub fn descriptors(&self) -> impl Iterator<Item = &TaskDescriptor> {
        self.datasets.iter().map(|d| &d.descriptor)
    }

    pub fn descriptor(&self, key: &DatasetKey) -> Option<&TaskDescriptor> {
        self.descriptors().find(|d| &d.key() == key)
    }

    pub fn dataset(&self, key: &DatasetKey) -> Option<&DatasetSplit> {
        self.datasets.iter().find(|d| &d.descriptor.key() == key)
    }

    /// Record invariants, id uniqueness and held-out emptiness.
    pub fn validate(&self) -> Result<()> {
        for ds in &self.datasets {
            ds.descriptor.validate()?;
            if ds.descriptor.held_out && !ds.train.is_empty() {
                return Err(Error::Partition(format!(
                    "held-out dataset {} carries {} training records",
                    ds.descriptor.key(),
                    ds.train.len()
                )));
            }
            let key = ds.descriptor.key();
            for r in ds.train.iter().chain(&ds.test) {
                r.validate()?;
                if r.dataset_key().as_ref() != Some(&key) {
                    return Err(Error::InvalidArgument(format!(
                        "record {} filed under dataset {key}",
                        r.id
                    )));
                }
            }
        }
        check_unique_ids(
            self.datasets
                .iter()
                .flat_map(|d| d.train.iter().chain(&d.test)),
        )
    }

    /// Ids of every held-out test record.
    pub fn held_out_ids(&self) -> HashSet<&str> {
        self.datasets
            .iter()
            .filter(|d| d.descriptor.held_out)
            .flat_map(|d| d.test.iter().map(|r| r.id.as_str()))
            .collect()
    }

    /// Training records of the requested families in dataset order. Fails if
    /// a held-out dataset would contribute anything.
    pub fn train_records(&self, families: &BTreeSet<GraphFamily>) -> Result<Vec<GkgRecord>> {
        let mut out = Vec::new();
        for ds in &self.datasets {
            if !families.contains(&ds.descriptor.family) {
                continue;
            }
            if ds.descriptor.held_out {
                if !ds.train.is_empty() {
                    return Err(Error::Partition(format!(
                        "held-out dataset {} would enter training",
                        ds.descriptor.key()
                    )));
                }
                continue;
            }
            out.extend(ds.train.iter().cloned());
        }
        Ok(out)
    }

    /// A copy whose training splits are subsampled per task.
    pub fn with_sampled_train(&self, p: f64, seed: u64) -> Result<Corpus> {
        let mut out = self.clone();
        for ds in &mut out.datasets {
            ds.train = sample_fraction(&ds.train, p, seed)?;
        }
        Ok(out)
    }

    pub fn stats(&self) -> Vec<FamilyStats> {
        GraphFamily::ALL
            .iter()
            .map(|&family| {
                let of_family = || self.datasets.iter().filter(move |d| d.descriptor.family == family);
                FamilyStats {
                    family,
                    datasets: of_family().count(),
                    held_out: of_family().filter(|d| d.descriptor.held_out).count(),
                    train: of_family().map(|d| d.train.len()).sum(),
                    test: of_family().map(|d| d.test.len()).sum(),
                }
            })
            .filter(|s| s.datasets > 0)
            .collect()
    }

    /// Per-family and per-dataset counts as a plain-text table.
    pub fn render_stats(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:<8} {:<14} {:>9} {:>9}\n",
            "Graph", "Task", "Dataset", "# Train", "# Test"
        ));
        for fam in self.stats() {
            for ds in self.datasets.iter().filter(|d| d.descriptor.family == fam.family) {
                let star = if ds.descriptor.held_out { "*" } else { "" };
                out.push_str(&format!(
                    "{:<8} {:<8} {:<14} {:>9} {:>9}\n",
                    fam.family.as_str(),
                    ds.descriptor.task_code,
                    format!("{}{star}", ds.descriptor.dataset),
                    ds.train.len(),
                    ds.test.len()
                ));
            }
            out.push_str(&format!(
                "{:<8} {:<8} {:<14} {:>9} {:>9}\n",
                fam.family.as_str(),
                "total",
                "",
                fam.train,
                fam.test
            ));
        }
        let train: usize = self.datasets.iter().map(|d| d.train.len()).sum();
        let test: usize = self.datasets.iter().map(|d| d.test.len()).sum();
        out.push_str(&format!("{:<8} {:<8} {:<14} {:>9} {:>9}\n", "All", "", "", train, test));
        out
    }

    /// The exact bytes of every corpus file keyed by relative path.
    pub fn files(&self) -> BTreeMap<String, Vec<u8>> {
        let mut files = BTreeMap::new();
        let index = CorpusIndex {
            seed: self.seed,
            strategy: self.strategy,
            few_shot_fraction: self.few_shot_fraction,
            datasets: self
                .datasets
                .iter()
                .map(|d| IndexEntry {
                    descriptor: d.descriptor.clone(),
                    train: d.train.len(),
                    test: d.test.len(),
                })
                .collect(),
        };
        let mut index_bytes = serde_json::to_vec_pretty(&index).expect("index serializes");
        index_bytes.push(b'\n');
        files.insert("corpus.json".to_string(), index_bytes);
        for ds in &self.datasets {
            let key = ds.descriptor.key();
            for split in [Split::Train, Split::Test] {
                files.insert(format!("{}/{key}.jsonl", split.dir()), jsonl(split.of(ds)));
            }
        }
        files
    }

    /// SHA-256 over the corpus files in path order.
    pub fn content_hash(&self) -> String {
        hash_files(&self.files())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (rel, bytes) in self.files() {
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Corpus> {
        let index_path = dir.join("corpus.json");
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: CorpusIndex =
            serde_json::from_str(&text).map_err(|e| Error::json(index_path.display().to_string(), e))?;
        let mut datasets = Vec::new();
        for entry in index.datasets {
            let key = entry.descriptor.key();
            let load = |split: Split, expected: usize| -> Result<Vec<GkgRecord>> {
                let p = dir.join(split.dir()).join(format!("{key}.jsonl"));
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let records = parse_records(&text, &p.display().to_string())?;
                if records.len() != expected {
                    return Err(Error::Config(format!(
                        "{}: index lists {expected} records, file has {}",
                        p.display(),
                        records.len()
                    )));
                }
                Ok(records)
            };
            let train = load(Split::Train, entry.train)?;
            let test = load(Split::Test, entry.test)?;
            datasets.push(DatasetSplit {
                descriptor: entry.descriptor,
                train,
                test,
            });
        }
        let corpus = Corpus {
            seed: index.seed,
            strategy: index.strategy,
            few_shot_fraction: index.few_shot_fraction,
            datasets,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

/// SHA-256 over `(path, length, bytes)` for every file in order.
pub fn hash_files(files: &BTreeMap<String, Vec<u8>>) -> String {
    let mut h = Sha256::new();
    for (path, bytes) in files {
        h.update((path.len() as u64).to_le_bytes());
        h.update(path.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

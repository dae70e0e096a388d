//! Synthetic toy corpus mirroring the four task families at desk scale.
//!
//! Every gold output is a deterministic function of its input, so a model
//! that learns the mapping can score perfectly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;

use super::build::{assemble, Corpus};
use super::ingest::escape_field;
use super::manifest::{Manifest, ManifestEntry};
use super::types::{DatasetKey, GkgRecord, GraphFamily, InstructionPool, PromptStrategy, TaskDescriptor};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

const PEOPLE: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory",
    "nina", "oscar", "peggy", "rupert", "sybil",
];
const ORGS: &[&str] = &["acme", "globex", "initech", "umbrella", "hooli", "stark", "wayne", "wonka"];
const CITIES: &[&str] = &["paris", "tokyo", "lima", "oslo", "cairo", "delhi", "quito", "rome"];
const EVENTS: &[&str] = &[
    "meeting", "storm", "election", "wedding", "launch", "merger", "trial", "parade", "concert",
    "strike",
];
const OOD_EVENTS: &[&str] = &["flood", "summit", "protest", "auction", "rally", "debate", "festival", "audit"];
const WEATHER: &[&str] = &["sunny", "rainy", "cold", "windy"];

struct Relation {
    name: &'static str,
    phrase: &'static str,
    objects: &'static [&'static str],
    topic: &'static str,
}

const RELATIONS: &[Relation] = &[
    Relation { name: "works_at", phrase: "works at", objects: ORGS, topic: "business" },
    Relation { name: "founded", phrase: "founded", objects: ORGS, topic: "business" },
    Relation { name: "lives_in", phrase: "lives in", objects: CITIES, topic: "travel" },
    Relation { name: "born_in", phrase: "was born in", objects: CITIES, topic: "travel" },
];

/// Train/test row counts for one family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSize {
    pub train: usize,
    pub test: usize,
}

/// Row counts per family. In-domain training rows of a family are divided
/// among its in-domain datasets; every dataset, held-out ones included,
/// gets `test` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySizes {
    pub kg: SplitSize,
    pub ekg: SplitSize,
    pub ckg: SplitSize,
    pub counter: SplitSize,
}

impl ToySizes {
    pub fn uniform(train: usize, test: usize) -> Self {
        let s = SplitSize { train, test };
        Self { kg: s, ekg: s, ckg: s, counter: s }
    }
}

impl Default for ToySizes {
    fn default() -> Self {
        Self::uniform(200, 50)
    }
}

/// Raw rows, instruction pools and a manifest, ready for ingestion.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub manifest: Manifest,
    pub raw: BTreeMap<DatasetKey, Vec<String>>,
    pub pools: BTreeMap<String, InstructionPool>,
}

type Row = (String, String);

fn triple(rng: &mut impl Rng) -> (&'static str, &'static Relation, &'static str) {
    let s = *PEOPLE.choose(rng).unwrap();
    let r = RELATIONS.choose(rng).unwrap();
    let o = *r.objects.choose(rng).unwrap();
    (s, r, o)
}

fn kg_row(rng: &mut impl Rng) -> Row {
    let (s, r, o) = triple(rng);
    (format!("{s} {} {o} .", r.name), format!("<{s}, {}, {o}>", r.name))
}

fn etre_row(rng: &mut impl Rng, events: &[&str]) -> Row {
    let a = *events.choose(rng).unwrap();
    let b = loop {
        let b = *events.choose(rng).unwrap();
        if b != a {
            break b;
        }
    };
    if rng.random_bool(0.5) {
        (format!("{a} happened before {b}"), "BEFORE".into())
    } else {
        (format!("{a} happened after {b}"), "AFTER".into())
    }
}

fn li_row(rng: &mut impl Rng) -> Row {
    let (s, r, o) = triple(rng);
    let (hyp, label) = if rng.random_bool(0.5) {
        (o, "entailment")
    } else {
        let other = loop {
            let x = *r.objects.choose(rng).unwrap();
            if x != o {
                break x;
            }
        };
        (other, "contradiction")
    };
    (
        format!("premise: {s} {} {o} . hypothesis: {s} {} {hyp} .", r.phrase, r.phrase),
        label.into(),
    )
}

fn ag_row(rng: &mut impl Rng) -> Row {
    let (s1, r1, o1) = triple(rng);
    let (s2, r2, o2) = triple(rng);
    let w = *WEATHER.choose(rng).unwrap();
    (
        format!("{s1} {} {o1} . {s2} {} {o2} . the weather was {w} .", r1.phrase, r2.phrase),
        format!("{s1} {} {o1} .", r1.phrase),
    )
}

fn tc_row(rng: &mut impl Rng) -> Row {
    let (s, r, o) = triple(rng);
    (format!("{s} {} {o} .", r.phrase), r.topic.into())
}

fn nlg_row(rng: &mut impl Rng) -> Row {
    let (s, r, o) = triple(rng);
    (format!("<{s}, {}, {o}>", r.name), format!("{s} {} {o} .", r.phrase))
}

fn templates(task: &str) -> Vec<&'static str> {
    match task {
        "SRE" => vec![
            "Extract the relation triple.",
            "List the triple in the sentence.",
            "Find subject, relation and object.",
            "Give the (head, relation, tail) triple.",
            "Which triple does the text state?",
            "Pull out the relational fact.",
            "Write the triple expressed here.",
            "Identify the entity relation triple.",
            "Return the fact as a triple.",
            "Extract entities and their relation.",
        ],
        "ETRE" => vec![
            "Classify the temporal relation.",
            "Is the first event BEFORE or AFTER?",
            "Give the time order of the events.",
            "Label the event order.",
            "Which came first? Answer BEFORE or AFTER.",
            "Determine the temporal link.",
            "Order the two events.",
            "State the temporal relation label.",
            "Find the event-event time relation.",
            "Temporal relation of the event pair?",
        ],
        "LI" => vec![
            "Does the premise entail the hypothesis?",
            "Label entailment or contradiction.",
            "Classify the inference relation.",
            "Is the hypothesis supported?",
            "Decide: entailment or contradiction.",
            "Judge the premise-hypothesis pair.",
            "Natural language inference label?",
            "Check if the hypothesis follows.",
            "Give the inference label.",
            "Entailment or contradiction?",
        ],
        "AG" => vec![
            "Summarize the text.",
            "Write a one-line summary.",
            "Give the main point.",
            "Condense the passage.",
            "What is the headline fact?",
            "Produce a short abstract.",
            "Summarize in one sentence.",
            "State the key fact briefly.",
            "Write the gist.",
            "Abstract the text.",
        ],
        "TC" => vec![
            "Classify the topic.",
            "Which topic is this text about?",
            "Assign a topic label.",
            "Label the text category.",
            "Give the text class.",
            "What category fits the text?",
            "Topic classification:",
            "Name the topic of the sentence.",
            "Categorize the text.",
            "Predict the topic label.",
        ],
        "NLG" => vec![
            "Verbalize the triple.",
            "Write a sentence for the triple.",
            "Turn the triple into text.",
            "Describe the fact in words.",
            "Generate a sentence from the data.",
            "Express the triple as English.",
            "Say the triple as a sentence.",
            "Convert the structure to text.",
            "Write the fact out plainly.",
            "Realize the triple in words.",
        ],
        other => panic!("no toy templates for {other}"),
    }
}

struct ToyDataset {
    descriptor: TaskDescriptor,
    train: usize,
    test: usize,
    gen: fn(&mut rand_chacha::ChaCha8Rng) -> Row,
}

fn toy_datasets(sizes: &ToySizes) -> Vec<ToyDataset> {
    use GraphFamily::*;
    let half = |n: usize| (n - n / 2, n / 2);
    let (li_train, ag_train) = half(sizes.ckg.train);
    vec![
        ToyDataset {
            descriptor: TaskDescriptor::new(Kg, "SRE", "ToyNYT"),
            train: sizes.kg.train,
            test: sizes.kg.test,
            gen: |r| kg_row(r),
        },
        ToyDataset {
            descriptor: TaskDescriptor::new(Ekg, "ETRE", "ToyMATRES"),
            train: sizes.ekg.train,
            test: sizes.ekg.test,
            gen: |r| etre_row(r, EVENTS),
        },
        ToyDataset {
            descriptor: TaskDescriptor::new(Ekg, "ETRE", "ToyTCR").held_out(),
            train: 0,
            test: sizes.ekg.test,
            gen: |r| etre_row(r, OOD_EVENTS),
        },
        ToyDataset {
            descriptor: TaskDescriptor::new(Ckg, "LI", "ToySNLI"),
            train: li_train,
            test: sizes.ckg.test,
            gen: |r| li_row(r),
        },
        ToyDataset {
            descriptor: TaskDescriptor::new(Ckg, "AG", "ToyCNNDM"),
            train: ag_train,
            test: sizes.ckg.test,
            gen: |r| ag_row(r),
        },
        ToyDataset {
            descriptor: TaskDescriptor::new(Ckg, "TC", "ToyR8").held_out(),
            train: 0,
            test: sizes.ckg.test,
            gen: |r| tc_row(r),
        },
        ToyDataset {
            descriptor: TaskDescriptor::new(Counter, "NLG", "ToyWebNLG"),
            train: sizes.counter.train,
            test: sizes.counter.test,
            gen: |r| nlg_row(r),
        },
    ]
}

/// Generate the toy corpus inputs. Pure in `(sizes, seed)`.
pub fn generate_toy_corpus(sizes: &ToySizes, seed: u64) -> ToyCorpus {
    let mut manifest = Manifest {
        seed,
        ..Manifest::default()
    };
    let mut raw = BTreeMap::new();
    let mut pools = BTreeMap::new();
    for ds in toy_datasets(sizes) {
        let key = ds.descriptor.key();
        let mut rng = keyed_rng(seed, "toy-corpus", &key.to_string());
        let rows: Vec<String> = (0..ds.train + ds.test)
            .map(|_| {
                let (input, output) = (ds.gen)(&mut rng);
                format!("{}\t{}", escape_field(&input), escape_field(&output))
            })
            .collect();
        let task = ds.descriptor.task_code.clone();
        pools.entry(task.clone()).or_insert_with(|| InstructionPool {
            task_code: task.clone(),
            templates: templates(&task).into_iter().map(String::from).collect(),
        });
        manifest
            .instructions
            .insert(task.clone(), PathBuf::from(format!("instructions/{task}.txt")));
        manifest.datasets.push(ManifestEntry {
            descriptor: ds.descriptor,
            train_count: ds.train,
            test_count: ds.test,
            raw: PathBuf::from(format!("raw/{key}.tsv")),
        });
        raw.insert(key, rows);
    }
    ToyCorpus { manifest, raw, pools }
}

impl ToyCorpus {
    pub fn assemble(&self, strategy: PromptStrategy) -> Result<Corpus> {
        assemble(&self.manifest, &self.pools, strategy, |key| {
            self.raw
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no raw rows for {key}")))
        })
    }

    /// Write `manifest.toml`, the raw TSV files and the template files.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(&dir.join("raw"))?;
        mkdir(&dir.join("instructions"))?;
        for (key, rows) in &self.raw {
            let path = dir.join(&self.manifest.entry(key).expect("registered").raw);
            let mut text = rows.join("\n");
            text.push('\n');
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        for (task, pool) in &self.pools {
            let path = dir.join(&self.manifest.instructions[task]);
            let mut text = pool.templates.join("\n");
            text.push('\n');
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("manifest.toml");
        fs::write(&path, self.manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// `n` distinct single-triple extraction records with the canonical
/// instruction, zero-shot. Used as a memorization target.
pub fn memorization_set(n: usize, seed: u64) -> Vec<GkgRecord> {
    let mut rng = keyed_rng(seed, "memorization", "SRE");
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (input, output) = kg_row(&mut rng);
        if !seen.insert(input.clone()) {
            continue;
        }
        let mut r = GkgRecord::bare(format!("SRE.Memo.{}", out.len()), input, output);
        r.instruction = templates("SRE")[0].to_string();
        out.push(r);
    }
    out
}

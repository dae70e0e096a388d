//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the criteria execute one after another and their lines are
//! always printed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gkg_cli::commands::CORPUS_INDEX;
use gkg_cli::RunConfig;
use gkg_core::corpus::toy::{generate_toy_corpus, memorization_set, ToySizes};
use gkg_core::corpus::{quota, ShotMode};
use gkg_core::harness::{CheckpointGenerator, Generator};
use gkg_core::metrics::{lcs_length, micro_f1, rouge_l, StructuredItems};
use gkg_core::model::{
    encode_example, AdaptedLinear, AdapterRole, Example, LoraAdapter, Token, BOS,
};
use gkg_core::trainer::{
    encode_records, lora_plus_step, max_logit_diff, probe_inputs, run_curriculum, train_stage,
    EtaGrid, OptimizerKind, Schedule, STAGE_LABELS,
};
use gkg_core::{
    Checkpoint, CurriculumPlan, Error, LoraPlusConfig, ModelConfig, PromptStrategy, Transformer,
};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gkg(args: &[&str]) -> i32 {
    gkg_cli::main_with(std::iter::once("gkg").chain(args.iter().copied()))
}

fn gkg_ok(args: &[&str]) -> Result<(), String> {
    match gkg(args) {
        0 => Ok(()),
        code => Err(format!("`gkg {}` exited with {code}", args.join(" "))),
    }
}

/// `gkg --config <config> --home <home> <cmd...>`
fn gkg_at(config: &Path, home: &Path, cmd: &[&str]) -> Result<(), String> {
    gkg_ok(&[&["--config", s(config), "--home", s(home)][..], cmd].concat())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn json(path: &Path) -> Result<serde_json::Value, String> {
    serde_json::from_str(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn toy_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Token> {
    let n = rng.random_range(1..=max_len);
    std::iter::once(BOS)
        .chain((1..n).map(|_| rng.random_range(0..256) as Token))
        .collect()
}

// ---------------------------------------------------------------- 1

fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |sub: &[u8]| {
        let mut it = b.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subseq(&sub).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn hand_f1(pairs: &[(BTreeSet<String>, BTreeSet<String>)], universe: &[String]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (g, p) in pairs {
        for item in universe {
            match (g.contains(item), p.contains(item)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn criterion_1() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let a: Vec<u8> = (0..rng.random_range(0..=12)).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=12)).map(|_| rng.random_range(0..3)).collect();
        if lcs_length(&a, &b) != brute_lcs(&a, &b) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, || format!("{mismatches} LCS mismatches"))?;

    let universe: Vec<String> = (0..6).map(|i| format!("item{i}")).collect();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
            universe.iter().filter(|_| rng.random_bool(0.4)).cloned().collect()
        };
        let pairs: Vec<_> = (0..rng.random_range(1..=3)).map(|_| (draw(&mut rng), draw(&mut rng))).collect();
        let items: Vec<(StructuredItems, StructuredItems)> = pairs
            .iter()
            .map(|(g, p)| (g.iter().collect(), p.iter().collect()))
            .collect();
        let got = micro_f1(&items).map_err(|e| e.to_string())?;
        worst = worst.max((got - hand_f1(&pairs, &universe)).abs());
    }
    check(worst == 0.0, || format!("micro-F1 differs from hand count by {worst:e}"))?;

    let r = rouge_l("the cat sat on the mat", "the cat on mat");
    check((r - 0.8).abs() <= 1e-9, || format!("rouge_l example = {r}"))?;
    let secs = clock.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("0/1000 LCS mismatches, micro-F1 exact on 200 pairs, ROUGE-L {r:.10}, {secs:.1}s"))
}

// ---------------------------------------------------------------- 2

const H: f64 = 1e-5;

fn tiny_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let n_heads = [1, 2, 4][rng.random_range(0..3)];
    let d_model = n_heads * rng.random_range(2..=16 / n_heads);
    ModelConfig {
        d_model,
        n_layers: 2,
        n_heads,
        d_ff: rng.random_range(4..=24),
        max_seq_len: 20,
        rank: rng.random_range(1..=d_model.min(3)),
        ..ModelConfig::default()
    }
    .with_targets(AdapterRole::ALL)
}

fn tiny_batch(rng: &mut ChaCha8Rng) -> Vec<Example> {
    let word = |rng: &mut ChaCha8Rng, n: usize| -> String {
        (0..n).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
    };
    (0..2)
        .map(|_| {
            let (p, o) = (rng.random_range(1..6), rng.random_range(1..5));
            encode_example(&word(rng, p), &word(rng, o), 20)
        })
        .collect()
}

fn factor(model: &mut Transformer<f64>, slot: usize, b: bool) -> &mut Array2<f64> {
    let (_, ad) = model.adapters_mut().nth(slot).expect("slot exists");
    if b {
        &mut ad.b
    } else {
        &mut ad.a
    }
}

fn norm(m: &Array2<f64>) -> f64 {
    m.mapv(|v| v * v).sum().sqrt()
}

fn criterion_2() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut entries = 0usize;
    for case in 0..5 {
        let config = tiny_config(&mut rng);
        let mut model = Transformer::<f64>::init(&config, rng.random()).map_err(|e| e.to_string())?;
        model.randomize_b(&mut rng, 0.3);
        let batch = tiny_batch(&mut rng);
        let (_, grads) = model.gradients(&batch).map_err(|e| e.to_string())?;
        for (slot, (name, g)) in grads.iter().enumerate() {
            for b in [false, true] {
                let analytic = if b { &g.b } else { &g.a };
                let mut probe = model.clone();
                let numeric = Array2::from_shape_fn(analytic.dim(), |(i, j)| {
                    let orig = factor(&mut probe, slot, b)[[i, j]];
                    factor(&mut probe, slot, b)[[i, j]] = orig + H;
                    let plus = probe.batch_loss(&batch).unwrap();
                    factor(&mut probe, slot, b)[[i, j]] = orig - H;
                    let minus = probe.batch_loss(&batch).unwrap();
                    factor(&mut probe, slot, b)[[i, j]] = orig;
                    (plus - minus) / (2.0 * H)
                });
                entries += numeric.len();
                let scale = norm(analytic).max(norm(&numeric));
                let err = if scale == 0.0 { 0.0 } else { norm(&(analytic - &numeric)) / scale };
                check(err < 1e-4, || {
                    format!("case {case} {} {}: relative error {err:e}", name.name(), if b { "B" } else { "A" })
                })?;
                worst = worst.max(err);
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    check(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("5 configs, {entries} entries, max relative error {worst:.2e}, {secs:.1}s"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = ModelConfig::default().with_targets(AdapterRole::ALL);
    let inputs: Vec<Vec<Token>> = (0..100).map(|_| random_tokens(&mut rng, 48)).collect();
    let err = |e: Error| e.to_string();

    let mut fresh = Transformer::<f32>::init(&config, 5).map_err(err)?;
    let base = fresh.without_adapters();
    let bit_equal = |a: &Transformer<f32>, b: &Transformer<f32>| -> Result<bool, String> {
        for t in &inputs {
            let (x, y) = (a.forward(t).map_err(err)?, b.forward(t).map_err(err)?);
            if x.iter().zip(y.iter()).any(|(p, q)| p.to_bits() != q.to_bits()) {
                return Ok(false);
            }
        }
        Ok(true)
    };
    check(bit_equal(&fresh, &base)?, || "fresh adapters change the logits".into())?;
    fresh.randomize_b(&mut rng, 0.1);
    fresh.zero_b();
    check(bit_equal(&fresh, &base)?, || "zeroed B changes the logits".into())?;

    let mut trained = Transformer::<f32>::init(&config, 6).map_err(err)?;
    trained.randomize_b(&mut rng, 0.05);
    let max_diff = |a: &dyn Fn(&[Token]) -> Vec<f64>, b: &dyn Fn(&[Token]) -> Vec<f64>| {
        inputs
            .iter()
            .map(|t| a(t).iter().zip(b(t)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    };
    let wide = trained.cast::<f64>();
    let mut wide_merged = wide.clone();
    wide_merged.merge_adapters(9);
    let f64_drift = max_diff(
        &|t| wide.forward(t).unwrap().iter().copied().collect(),
        &|t| wide_merged.forward(t).unwrap().iter().copied().collect(),
    );
    let mut narrow_merged = trained.clone();
    narrow_merged.merge_adapters(9);
    let f32_drift = max_diff(
        &|t| trained.forward(t).unwrap().iter().map(|&v| v as f64).collect(),
        &|t| narrow_merged.forward(t).unwrap().iter().map(|&v| v as f64).collect(),
    );
    check(f64_drift <= 1e-6, || format!("merge drift {f64_drift:e} in f64"))?;

    let mut lin = AdaptedLinear {
        weight: Array2::<f32>::zeros((2, 2)),
        adapter: Some(LoraAdapter {
            a: array![[1.0], [2.0]],
            b: array![[3.0, 4.0]],
        }),
    };
    lin.fold();
    check(lin.weight == array![[3.0f32, 4.0], [6.0, 8.0]], || format!("2x2 merge gave {:?}", lin.weight))?;
    Ok(format!(
        "B=0 bit-identical on 100 inputs, merge drift {f64_drift:.1e} (f64; f32 {f32_drift:.1e}), 2x2 -> [[3,4],[6,8]]"
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = ModelConfig::default().with_targets(AdapterRole::ALL);
    let mut model = Transformer::<f32>::init(&config, 8).map_err(|e| e.to_string())?;
    model.randomize_b(&mut rng, 0.05);
    let records = memorization_set(8, 4);
    let batch = encode_records(&records, config.max_seq_len);
    let (_, grads) = model.gradients(&batch).map_err(|e| e.to_string())?;
    let (eta_a, lambda) = (0.01f64, 10.0f64);
    let (ea, eb) = (eta_a as f32, (lambda * eta_a) as f32);
    let mut stepped = model.clone();
    lora_plus_step(&mut stepped, &grads, ea, eb).map_err(|e| e.to_string())?;
    let mut checked = 0usize;
    let mut moved = 0usize;
    for (((_, old), (_, new)), (_, g)) in model.adapters().zip(stepped.adapters()).zip(grads.iter()) {
        for (m_old, m_new, m_g, eta) in [(&old.a, &new.a, &g.a, ea), (&old.b, &new.b, &g.b, eb)] {
            for ((&o, &n), &gr) in m_old.iter().zip(m_new.iter()).zip(m_g.iter()) {
                let expected = o - eta * gr;
                check(n.to_bits() == expected.to_bits(), || {
                    format!("entry moved to {n:e}, expected {expected:e}")
                })?;
                checked += 1;
                moved += usize::from(n != o);
            }
        }
    }
    check(moved > 0, || "no entry moved".into())?;

    let base = Checkpoint::base(&config, 8).map_err(|e| e.to_string())?;
    let cfg = LoraPlusConfig {
        max_steps: Some(4),
        epochs_per_stage: 2,
        seed: 4,
        ..LoraPlusConfig::default()
    };
    let a = train_stage(&base, &records, "s", &cfg.clone().with_ratio(0.05, 1.0)).map_err(|e| e.to_string())?;
    let b = train_stage(&base, &records, "s", &cfg.single_rate(0.05)).map_err(|e| e.to_string())?;
    let (ha, hb) = (a.0.content_hash(), b.0.content_hash());
    check(ha == hb, || format!("lambda = 1 run {ha} differs from single-rate run {hb}"))?;
    check(ha != base.content_hash(), || "training did not change the checkpoint".into())?;
    Ok(format!(
        "{checked} entries exact ({moved} moved), lambda=1 == single rate ({})",
        &ha[..12]
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let err = |e: Error| e.to_string();
    let toy = generate_toy_corpus(&ToySizes::uniform(24, 6), 5);
    let corpus = toy.assemble(PromptStrategy::Full).map_err(err)?;
    let config = ModelConfig::default().with_targets(AdapterRole::ALL);
    let base = Checkpoint::base(&config, 5).map_err(err)?;
    let train = LoraPlusConfig {
        eta_a: 0.5,
        max_steps: Some(3),
        seed: 5,
        ..LoraPlusConfig::default()
    };
    let plan = CurriculumPlan::default();
    let run = run_curriculum(&base, &plan, &corpus, &train).map_err(err)?;

    let labels: Vec<&str> = run.checkpoints.iter().map(|c| c.stage_label.as_str()).collect();
    check(labels == STAGE_LABELS, || format!("stage labels {labels:?}"))?;
    let mut parent = base.content_hash();
    for c in &run.checkpoints {
        check(c.parent_hash.as_deref() == Some(parent.as_str()), || {
            format!("{} does not point at its predecessor", c.stage_label)
        })?;
        parent = c.content_hash();
    }

    // Stage n+1 from the serialized stage-n checkpoint reproduces the chain.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let probes = probe_inputs(config.max_seq_len, 55);
    let mut handoff = run.handoff_max_diff;
    for (i, stage) in plan.stages.iter().enumerate().skip(1) {
        let path = dir.path().join(&run.checkpoints[i - 1].stage_label);
        run.checkpoints[i - 1].save(&path).map_err(err)?;
        let start = Checkpoint::load(&path).map_err(err)?;
        handoff = handoff.max(max_logit_diff(&run.checkpoints[i - 1].model, &start.model, &probes).map_err(err)?);
        let records = corpus.train_records(&stage.training_families()).map_err(err)?;
        let (next, _) = train_stage(&start, &records, &stage.label, &train).map_err(err)?;
        check(next.content_hash() == run.checkpoints[i].content_hash(), || {
            format!("stage {} from the reloaded handoff differs", stage.label)
        })?;
    }
    check(handoff <= 1e-6, || format!("handoff drift {handoff:e}"))?;

    let held_out: HashSet<String> = corpus
        .datasets
        .iter()
        .filter(|d| d.descriptor.held_out)
        .flat_map(|d| d.train.iter().chain(&d.test).map(|r| r.id.clone()))
        .collect();
    check(!held_out.is_empty(), || "toy corpus has no held-out dataset".into())?;
    for stage in &plan.stages {
        let ids = corpus.train_records(&stage.training_families()).map_err(err)?;
        let leaked = ids.iter().filter(|r| held_out.contains(&r.id)).count();
        check(leaked == 0, || format!("{leaked} held-out records in stage {}", stage.name))?;
    }
    let mut tampered = corpus.clone();
    let ood = tampered.datasets.iter_mut().find(|d| d.descriptor.held_out).expect("checked above");
    let leak = ood.test[0].clone();
    ood.train.push(leak);
    let caught = match run_curriculum(&base, &plan, &tampered, &train) {
        Err(Error::Partition(_)) | Err(Error::Config(_)) => true,
        _ => false,
    };
    check(caught, || "a held-out record in a training split was not rejected".into())?;
    Ok(format!(
        "chain base -> {} ({}), handoff drift {handoff:e}, {} held-out ids disjoint, leak rejected",
        STAGE_LABELS.join(" -> "),
        &parent[..12],
        held_out.len()
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let err = |e: Error| e.to_string();
    let toy = generate_toy_corpus(&ToySizes::default(), 6);
    for (task, pool) in &toy.pools {
        check(pool.templates.len() == 10, || format!("{task} pool has {} templates", pool.templates.len()))?;
        let distinct: BTreeSet<_> = pool.templates.iter().collect();
        check(distinct.len() == 10, || format!("{task} pool repeats a template"))?;
    }
    let full = toy.assemble(PromptStrategy::Full).map_err(err)?;
    let mut splits = 0;
    for ds in &full.datasets {
        for (name, records) in [("train", &ds.train), ("test", &ds.test)] {
            let few = records.iter().filter(|r| r.shot_mode == ShotMode::Few).count();
            let expected = (records.len() + 5) / 10;
            check(few == expected, || {
                format!("{} {name}: {few} few-shot of {}, expected {expected}", ds.descriptor.key(), records.len())
            })?;
            for r in records.iter() {
                check((r.shot_mode == ShotMode::Few) == r.demonstration.is_some(), || {
                    format!("{}: shot mode and demonstration disagree", r.id)
                })?;
            }
            splits += 1;
        }
    }
    for n in [0usize, 1, 4, 5, 14, 15, 25, 9995, 10_000] {
        check(quota(0.10, n) == (n + 5) / 10, || format!("quota(0.1, {n}) = {}", quota(0.1, n)))?;
    }

    let single = toy.assemble(PromptStrategy::SingleInstruction).map_err(err)?;
    for ds in &single.datasets {
        let used: BTreeSet<_> = ds.train.iter().chain(&ds.test).map(|r| r.instruction.as_str()).collect();
        check(used.len() == 1, || format!("{}: {} templates in use", ds.descriptor.key(), used.len()))?;
    }
    let zero = toy.assemble(PromptStrategy::ZeroShotOnly).map_err(err)?;
    let demos = zero
        .datasets
        .iter()
        .flat_map(|d| d.train.iter().chain(&d.test))
        .filter(|r| r.demonstration.is_some() || r.shot_mode == ShotMode::Few)
        .count();
    check(demos == 0, || format!("{demos} demonstrations under zero-shot-only"))?;

    let again = generate_toy_corpus(&ToySizes::default(), 6).assemble(PromptStrategy::Full).map_err(err)?;
    check(full.files() == again.files(), || "re-ingestion changed the corpus bytes".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    full.write(dir.path()).map_err(err)?;
    let reread = gkg_core::Corpus::read(dir.path()).map_err(err)?;
    check(reread.files() == full.files(), || "written corpus does not read back identically".into())?;
    Ok(format!(
        "{splits} splits at round(0.1 n), {} pools of 10, single-instruction and zero-shot contracts hold, re-ingest byte-identical",
        toy.pools.len()
    ))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let clock = Instant::now();
    let err = |e: Error| e.to_string();
    let records = memorization_set(32, 7);
    let config = ModelConfig::default().with_targets(AdapterRole::ALL);
    let base = Checkpoint::base(&config, 1).map_err(err)?;
    let train = LoraPlusConfig {
        eta_a: 0.5,
        eta_b: None,
        lambda: Some(10.0),
        batch_size: 16,
        grad_clip: 1.0,
        schedule: Schedule::LinearDecay,
        epochs_per_stage: 150,
        max_steps: Some(300),
        optimizer: OptimizerKind::Sgd,
        seed: 3,
    };
    let (ckpt, log) = train_stage(&base, &records, "memorize", &train).map_err(err)?;
    let steps = log.steps.len();
    check(steps <= 500, || format!("{steps} steps"))?;
    let examples = encode_records(&records, config.max_seq_len);
    let (acc, tokens) = ckpt.model.masked_accuracy(&examples).map_err(err)?;
    check(acc >= 0.99, || format!("masked-token accuracy {acc:.4} after {steps} steps"))?;
    let mut generator = CheckpointGenerator::new(&ckpt);
    let mut exact = 0;
    for r in &records {
        if generator.generate(r, r.output.len() + 8).map_err(err)? == r.output {
            exact += 1;
        }
    }
    check(exact == records.len(), || format!("{exact}/32 outputs reproduced verbatim"))?;
    let secs = clock.elapsed().as_secs_f64();
    check(secs < 180.0, || format!("took {secs:.1}s"))?;
    Ok(format!("accuracy {acc:.4} over {tokens} tokens after {steps} steps, 32/32 verbatim, {secs:.1}s"))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let clock = Instant::now();
    let home = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = toy_config_path();
    let at = |cmd: &[&str]| gkg_at(&config, home.path(), cmd);
    at(&["ingest"])?;
    let corpus = gkg_core::Corpus::read(&home.path().join("corpus")).map_err(|e| e.to_string())?;
    for family in gkg_core::GraphFamily::ALL {
        let (train, test) = corpus
            .datasets
            .iter()
            .filter(|d| d.descriptor.family == family && !d.descriptor.held_out)
            .fold((0, 0), |(a, b), d| (a + d.train.len(), b + d.test.len()));
        check(train >= 200 && test >= 50, || format!("{family}: {train} train / {test} test"))?;
    }
    at(&["train"])?;
    let checkpoints = home.path().join("checkpoints");
    let chain = json(&checkpoints.join("chain.json"))?;
    check(chain["order"] == "K-E-C", || format!("order {}", chain["order"]))?;
    let base_dir = checkpoints.join("base");
    at(&["eval", "--checkpoint", s(&base_dir)])?;
    at(&["eval"])?;
    let secs = clock.elapsed().as_secs_f64();

    let reports = home.path().join("reports");
    let base_overall = json(&reports.join("base/report.json"))?["report"]["overall"].as_f64().unwrap_or(f64::NAN);
    let final_report = json(&reports.join("GKG-LLM/report.json"))?;
    let final_overall = final_report["report"]["overall"].as_f64().unwrap_or(f64::NAN);
    let md = read(&reports.join("GKG-LLM/report.md"))?;
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
    let starred = rows.iter().filter(|l| l.split('|').nth(3).is_some_and(|c| c.trim().ends_with('*'))).count();
    let daggered = rows.iter().filter(|l| l.split('|').nth(2).is_some_and(|c| c.trim().ends_with('†'))).count();
    check(starred > 0 && daggered > 0, || format!("{starred} starred / {daggered} daggered rows"))?;
    check(md.contains("Average Performance"), || "no Average Performance row".into())?;
    let gain = final_overall - base_overall;
    check(gain >= 0.2, || format!("GKG-LLM {final_overall:.4} vs base {base_overall:.4}: gain {gain:.4}"))?;
    check(secs < 300.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "GKG-LLM {final_overall:.4} vs base {base_overall:.4} (gain {gain:.4}), {starred} starred / {daggered} daggered rows, {secs:.1}s"
    ))
}

// ---------------------------------------------------------------- 9

const SMALL_CONFIG: &str = r#"
seed = 1

[toy]
train = 40
test = 10
seed = 9

[model]
d_model = 32
n_layers = 1
n_heads = 2
d_ff = 64
max_seq_len = 256
rank = 4
adapter_targets = ["query", "value", "head"]

[train]
eta_a = 0.5
lambda = 10.0
max_steps = 3
seed = 2

[eval]
max_new = 12
"#;

fn small_home() -> Result<(tempfile::TempDir, PathBuf), String> {
    let home = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = home.path().join("small.toml");
    fs::write(&config, SMALL_CONFIG).map_err(|e| e.to_string())?;
    Ok((home, config))
}

fn criterion_9() -> Outcome {
    let clock = Instant::now();
    let (home, config) = small_home()?;
    let at = |cmd: &[&str]| gkg_at(&config, home.path(), cmd);
    at(&["ingest"])?;
    at(&["train"])?;
    let plain = json(&home.path().join("checkpoints/chain.json"))?;
    let plain_final = plain["stages"][2]["hash"].as_str().unwrap_or_default().to_string();
    let sweeps = home.path().join("reports/sweeps");

    at(&["sweep", "order"])?;
    let order_csv = read(&sweeps.join("order/order.csv"))?;
    let orders: Vec<&str> = order_csv.lines().skip(1).filter_map(|l| l.split(',').next()).collect();
    let distinct: BTreeSet<&str> = orders.iter().copied().collect();
    let expected: BTreeSet<&str> = ["K-E-C", "K-C-E", "E-K-C", "E-C-K", "C-K-E", "C-E-K"].into();
    check(orders.len() == 6 && distinct == expected, || format!("order rows {orders:?}"))?;

    at(&["sweep", "scale"])?;
    let scale_csv = read(&sweeps.join("scale/scale.csv"))?;
    let header = scale_csv.lines().next().unwrap_or_default();
    check(header == "metric,10%,20%,40%,60%,80%,100%", || format!("scale header {header}"))?;
    let cells = json(&sweeps.join("scale/cells.json"))?;
    let full = cells.as_array().and_then(|c| c.last()).cloned().unwrap_or_default();
    check(full["key"] == "1", || format!("last scale cell {}", full["key"]))?;
    check(full["final_hash"] == plain_final.as_str(), || {
        format!("fraction 1.0 ended at {}, plain run at {plain_final}", full["final_hash"])
    })?;

    let grid = "eta_a=5e-5,1e-4,2e-4,4e-4;lambda=5,10,20,40";
    at(&["sweep", "eta", "--grid", grid])?;
    let eta_csv = read(&sweeps.join("eta/eta.csv"))?;
    let lines: Vec<Vec<&str>> = eta_csv.lines().map(|l| l.split(',').collect()).collect();
    let standard = EtaGrid::standard();
    check(lines.len() == 1 + standard.lambda.len(), || format!("{} eta rows", lines.len()))?;
    check(lines.iter().all(|r| r.len() == 1 + standard.eta_a.len()), || "ragged eta table".into())?;
    let header_eta: Vec<f64> = lines[0][1..].iter().filter_map(|v| v.parse().ok()).collect();
    let row_lambda: Vec<f64> = lines[1..].iter().filter_map(|r| r[0].parse().ok()).collect();
    check(header_eta == standard.eta_a && row_lambda == standard.lambda, || {
        format!("eta columns {header_eta:?}, lambda rows {row_lambda:?}")
    })?;
    for (&e, &l) in standard.eta_a.iter().zip(&standard.lambda) {
        let eta_b = LoraPlusConfig::default().with_ratio(e, l).eta_b();
        check(eta_b == l * e, || format!("eta_b {eta_b:e} for eta_a {e:e}, lambda {l}"))?;
    }
    let secs = clock.elapsed().as_secs_f64();
    Ok(format!(
        "6 orders, 6 fractions with 100% == plain run ({}), {}x{} eta grid with lambda rows, {secs:.1}s",
        &plain_final[..12],
        standard.lambda.len(),
        standard.eta_a.len()
    ))
}

// ---------------------------------------------------------------- 10

fn snapshot_outputs(home: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for rel in [
        "checkpoints/chain.json",
        "reports/GKG-LLM/report.md",
        "reports/GKG-LLM/report.json",
        "reports/GKG-LLM/predictions.jsonl",
    ] {
        let bytes = fs::read(home.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        out.insert(rel.to_string(), bytes);
    }
    Ok(out)
}

fn corpus_hash(home: &Path) -> Result<String, String> {
    let dir = home.join("corpus");
    check(dir.join(CORPUS_INDEX).is_file(), || "no corpus".into())?;
    Ok(gkg_core::Corpus::read(&dir).map_err(|e| e.to_string())?.content_hash())
}

fn criterion_10() -> Outcome {
    let (home, config) = small_home()?;
    let run = |config: &Path| -> Result<(), String> {
        for cmd in ["ingest", "train", "eval"] {
            gkg_at(config, home.path(), &[cmd])?;
        }
        Ok(())
    };
    run(&config)?;
    let first_corpus = corpus_hash(home.path())?;
    let first = snapshot_outputs(home.path())?;
    let resolved_path = home.path().join("resolved.toml");
    fs::copy(home.path().join("checkpoints").join(gkg_cli::SNAPSHOT_FILE), &resolved_path)
        .map_err(|e| e.to_string())?;
    let resolved = RunConfig::parse(&read(&resolved_path)?).map_err(|e| e.to_string())?;
    check(resolved.paths.corpus.as_deref().is_some_and(Path::is_absolute), || {
        "snapshot paths are not resolved".into()
    })?;
    for dir in ["corpus", "checkpoints", "reports"] {
        fs::remove_dir_all(home.path().join(dir)).map_err(|e| e.to_string())?;
    }
    run(&resolved_path)?;
    let second_corpus = corpus_hash(home.path())?;
    let second = snapshot_outputs(home.path())?;
    check(first_corpus == second_corpus, || "corpus hashes differ".into())?;
    for (rel, bytes) in &first {
        check(second.get(rel) == Some(bytes), || format!("{rel} differs between runs"))?;
    }
    let chain: serde_json::Value = serde_json::from_slice(&first["checkpoints/chain.json"]).map_err(|e| e.to_string())?;
    let final_hash = chain["stages"][2]["hash"].as_str().unwrap_or_default();
    Ok(format!(
        "corpus {}, final checkpoint {}, {} report files identical",
        &first_corpus[..12],
        &final_hash[..12.min(final_hash.len())],
        first.len() - 1
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracles", criterion_1),
        ("gradient correctness", criterion_2),
        ("adapter algebra", criterion_3),
        ("dual-rate step exactness", criterion_4),
        ("curriculum integrity", criterion_5),
        ("corpus contracts", criterion_6),
        ("memorization run", criterion_7),
        ("end-to-end toy curriculum", criterion_8),
        ("sweep drivers", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !args.is_empty() && !args.iter().any(|a| *a == id || name.contains(a.as_str())) {
            continue;
        }
        let clock = Instant::now();
        let line = match f() {
            Ok(detail) => format!("PASS [{id:>2}] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                format!("FAIL [{id:>2}] {name}: {why} ({:.1}s)", clock.elapsed().as_secs_f64())
            }
        };
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for line in &lines {
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

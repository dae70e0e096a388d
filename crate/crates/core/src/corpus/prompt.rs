use super::sampling::quota;
use super::types::{GkgRecord, InstructionPool, PromptStrategy, ShotMode};
use crate::error::{Error, Result};
use crate::rng::{keyed_index, keyed_u64};

/// Fill the instruction field of every record from `pool`.
///
/// Diverse strategies draw a template uniformly per record, keyed on
/// `(seed, record id)`; single-instruction strategies use template 0.
pub fn assign_instructions(
    records: &[GkgRecord],
    pool: &InstructionPool,
    seed: u64,
    strategy: PromptStrategy,
) -> Result<Vec<GkgRecord>> {
    pool.validate()?;
    records
        .iter()
        .map(|r| {
            let task = r.dataset_key().map(|k| k.task_code);
            if task.as_deref() != Some(pool.task_code.as_str()) {
                return Err(Error::Config(format!(
                    "record {} does not belong to the {} instruction pool",
                    r.id, pool.task_code
                )));
            }
            let index = if strategy.single_instruction() {
                0
            } else {
                keyed_index(seed, "instruction", &r.id, pool.templates.len())
            };
            Ok(GkgRecord {
                instruction: pool.templates[index].clone(),
                ..r.clone()
            })
        })
        .collect()
}

/// Which of the given ids receive a demonstration: exactly
/// `round(fraction * n)` of them, chosen by keyed rank.
pub fn select_few_shot(ids: &[&str], fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "few-shot fraction {fraction} outside [0, 1]"
        )));
    }
    let k = quota(fraction, ids.len());
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| (keyed_u64(seed, "few-shot", ids[i]), i));
    let mut chosen = vec![false; ids.len()];
    for &i in &order[..k] {
        chosen[i] = true;
    }
    Ok(chosen)
}

pub fn render_demonstration(donor: &GkgRecord) -> String {
    format!("Input: {}\nOutput: {}", donor.input, donor.output)
}

/// Attach one demonstration drawn from `donors`, never the record itself
/// and never a donor with the record's own input/output pair.
pub fn attach_demonstration(
    record: &GkgRecord,
    donors: &[GkgRecord],
    seed: u64,
) -> Result<GkgRecord> {
    if donors.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no few-shot donors available for {}",
            record.id
        )));
    }
    let start = keyed_index(seed, "donor", &record.id, donors.len());
    let donor = (0..donors.len())
        .map(|off| &donors[(start + off) % donors.len()])
        .find(|d| d.id != record.id && !(d.input == record.input && d.output == record.output))
        .ok_or_else(|| {
            Error::InvalidArgument(format!("every donor for {} equals the record", record.id))
        })?;
    Ok(GkgRecord {
        shot_mode: ShotMode::Few,
        demonstration: Some(render_demonstration(donor)),
        ..record.clone()
    })
}

/// Give `round(fraction * n)` records a one-example demonstration.
///
/// Zero-shot strategies inject nothing regardless of `fraction`.
pub fn inject_few_shot(
    records: &[GkgRecord],
    donors: &[GkgRecord],
    fraction: f64,
    seed: u64,
    strategy: PromptStrategy,
) -> Result<Vec<GkgRecord>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "few-shot fraction {fraction} outside [0, 1]"
        )));
    }
    if strategy.zero_shot_only() {
        return Ok(records
            .iter()
            .map(|r| GkgRecord {
                shot_mode: ShotMode::Zero,
                demonstration: None,
                ..r.clone()
            })
            .collect());
    }
    if fraction > 0.0 && donors.is_empty() {
        return Err(Error::InvalidArgument(
            "few-shot fraction is positive but the donor list is empty".into(),
        ));
    }
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let chosen = select_few_shot(&ids, fraction, seed)?;
    records
        .iter()
        .zip(chosen)
        .map(|(r, pick)| {
            if pick {
                attach_demonstration(r, donors, seed)
            } else {
                Ok(r.clone())
            }
        })
        .collect()
}

/// The text the model is conditioned on. The id is never rendered.
pub fn render_prompt(record: &GkgRecord) -> String {
    match (&record.shot_mode, &record.demonstration) {
        (ShotMode::Few, Some(demo)) => format!(
            "{}\n\n{}\n\nInput: {}\nOutput:",
            record.instruction, demo, record.input
        ),
        _ => format!("{}\n\nInput: {}\nOutput:", record.instruction, record.input),
    }
}

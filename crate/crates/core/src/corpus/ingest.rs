use std::collections::HashSet;

use super::manifest::Manifest;
use super::types::{GkgRecord, TaskDescriptor};
use crate::error::{Error, Result};

/// Undo the backslash escapes allowed in raw fields (`\n`, `\t`, `\\`).
fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Inverse of the raw-field unescaping, used when writing raw files.
pub fn escape_field(field: &str) -> String {
    field
        .replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace('\t', "\\t")
}

/// Split one tab-separated row into `(input, output)`. `row` is 1-based.
pub fn parse_raw_row(line: &str, row: usize) -> Result<(String, String)> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let Some((input, output)) = line.split_once('\t') else {
        return Err(Error::MalformedRow {
            row,
            reason: "expected `input<TAB>output`".into(),
        });
    };
    if input.trim().is_empty() {
        return Err(Error::MalformedRow {
            row,
            reason: "missing input".into(),
        });
    }
    if output.trim().is_empty() {
        return Err(Error::MalformedRow {
            row,
            reason: "missing output".into(),
        });
    }
    Ok((unescape(input), unescape(output)))
}

/// Convert raw rows into bare records and route them to train/test.
///
/// The first `train_count` rows registered in the manifest are training rows,
/// the remaining `test_count` rows are test rows. Held-out datasets route
/// every row to test. Instructions and demonstrations are left empty.
pub fn ingest_dataset<'a, I>(
    raw_lines: I,
    descriptor: &TaskDescriptor,
    manifest: &Manifest,
) -> Result<(Vec<GkgRecord>, Vec<GkgRecord>)>
where
    I: IntoIterator<Item = &'a str>,
{
    descriptor.validate()?;
    let key = descriptor.key();
    let entry = manifest.entry(&key).ok_or_else(|| {
        Error::Config(format!("dataset {key} is not registered in the manifest"))
    })?;
    if descriptor.held_out && entry.train_count != 0 {
        return Err(Error::Config(format!(
            "held-out dataset {key} declares {} training rows",
            entry.train_count
        )));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw_lines.into_iter().enumerate() {
        let (input, output) = parse_raw_row(line, i + 1)?;
        let id = key.record_id(records.len());
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        records.push(GkgRecord::bare(id, input, output));
    }

    let expected = entry.train_count + entry.test_count;
    if records.len() != expected {
        return Err(Error::Config(format!(
            "dataset {key}: manifest declares {} train + {} test rows but the raw file has {}",
            entry.train_count,
            entry.test_count,
            records.len()
        )));
    }
    let test = records.split_off(entry.train_count);
    Ok((records, test))
}

/// Fail on the first id that appears twice.
pub fn check_unique_ids<'a>(records: impl IntoIterator<Item = &'a GkgRecord>) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::manifest::ManifestEntry;
    use crate::corpus::types::GraphFamily;

    fn manifest_for(d: &TaskDescriptor, train: usize, test: usize) -> Manifest {
        Manifest {
            datasets: vec![ManifestEntry {
                descriptor: d.clone(),
                train_count: train,
                test_count: test,
                raw: "unused.tsv".into(),
            }],
            ..Manifest::default()
        }
    }

    fn rows(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("sentence {i}\t<a{i}, r, b>")).collect()
    }

    #[test]
    fn counts_are_preserved_at_full_scale() {
        let d = TaskDescriptor::new(GraphFamily::Kg, "SRE", "NYT");
        let m = manifest_for(&d, 96_229, 8_110);
        let lines = rows(96_229 + 8_110);
        let (train, test) = ingest_dataset(lines.iter().map(String::as_str), &d, &m).unwrap();
        assert_eq!(train.len(), 96_229);
        assert_eq!(test.len(), 8_110);
        assert_eq!(train[0].id, "SRE.NYT.0");
        assert_eq!(test[0].id, "SRE.NYT.96229");
        assert!(train.iter().all(|r| r.instruction.is_empty() && r.demonstration.is_none()));
    }

    #[test]
    fn held_out_routes_everything_to_test() {
        let d = TaskDescriptor::new(GraphFamily::Ekg, "ETRE", "TCR").held_out();
        let m = manifest_for(&d, 0, 100);
        let lines = rows(100);
        let (train, test) = ingest_dataset(lines.iter().map(String::as_str), &d, &m).unwrap();
        assert_eq!((train.len(), test.len()), (0, 100));

        let bad = manifest_for(&d, 10, 90);
        assert!(ingest_dataset(lines.iter().map(String::as_str), &d, &bad).is_err());
    }

    #[test]
    fn empty_input_names_the_row() {
        let d = TaskDescriptor::new(GraphFamily::Kg, "SRE", "NYT");
        let m = manifest_for(&d, 3, 0);
        let lines = ["a\tb", "\tonly output", "c\td"];
        match ingest_dataset(lines, &d, &m) {
            Err(Error::MalformedRow { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("input"));
            }
            other => panic!("expected malformed row, got {other:?}"),
        }
        let no_tab = ["a\tb", "c\td", "no tab here"];
        assert!(matches!(
            ingest_dataset(no_tab, &d, &m),
            Err(Error::MalformedRow { row: 3, .. })
        ));
    }

    #[test]
    fn unregistered_descriptor_is_rejected() {
        let d = TaskDescriptor::new(GraphFamily::Kg, "SRE", "NYT");
        let other = TaskDescriptor::new(GraphFamily::Kg, "SRE", "Other");
        let m = manifest_for(&other, 1, 0);
        assert!(matches!(ingest_dataset(["a\tb"], &d, &m), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_ids_fail() {
        let a = GkgRecord::bare("SRE.NYT.0".into(), "x".into(), "y".into());
        assert!(matches!(
            check_unique_ids([&a, &a.clone()]),
            Err(Error::DuplicateId(id)) if id == "SRE.NYT.0"
        ));
    }

    #[test]
    fn escapes_round_trip() {
        let field = "line one\nline\ttwo \\ end";
        let line = format!("{}\t{}", escape_field(field), escape_field("out"));
        let (input, output) = parse_raw_row(&line, 1).unwrap();
        assert_eq!(input, field);
        assert_eq!(output, "out");
    }
}

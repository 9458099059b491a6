//! Plain-text summaries of step logs and robustness sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::trainer::StepReport;

#[derive(Deserialize)]
struct RawRow<'a> {
    kind: String,
    severity: u8,
    #[serde(borrow)]
    absrel: &'a RawValue,
    #[serde(borrow)]
    delta1: &'a RawValue,
}

/// Tab-separated metric grid of a sweep report: one row per condition
/// kind in first-seen order, `absrel@s` and `delta1@s` columns per
/// severity. Cells repeat the JSON numbers exactly as written; missing
/// cells are `-`. An empty report gives an empty grid.
pub fn sweep_grid(text: &str) -> Result<String> {
    let mut kinds: Vec<String> = Vec::new();
    let mut severities: Vec<u8> = Vec::new();
    let mut cells: BTreeMap<(String, u8), (String, String)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: RawRow<'_> =
            serde_json::from_str(line).map_err(|e| Error::MalformedLog { line: i + 1, msg: e.to_string() })?;
        if !kinds.contains(&row.kind) {
            kinds.push(row.kind.clone());
        }
        if !severities.contains(&row.severity) {
            severities.push(row.severity);
        }
        cells.insert((row.kind, row.severity), (row.absrel.get().to_string(), row.delta1.get().to_string()));
    }
    if kinds.is_empty() {
        return Ok(String::new());
    }
    severities.sort_unstable();
    let mut out = String::from("kind");
    for s in &severities {
        write!(out, "\tabsrel@{s}\tdelta1@{s}").expect("string write");
    }
    out.push('\n');
    for k in &kinds {
        out.push_str(k);
        for s in &severities {
            match cells.get(&(k.clone(), *s)) {
                Some((a, d)) => write!(out, "\t{a}\t{d}"),
                None => write!(out, "\t-\t-"),
            }
            .expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Per-epoch mean losses of a training step log.
pub fn steps_summary(text: &str) -> Result<String> {
    let mut epochs: BTreeMap<usize, (usize, [f64; 4])> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: StepReport =
            serde_json::from_str(line).map_err(|e| Error::MalformedLog { line: i + 1, msg: e.to_string() })?;
        let e = epochs.entry(r.epoch).or_insert((0, [0.0; 4]));
        e.0 += 1;
        for (acc, v) in e.1.iter_mut().zip([r.l_c, r.l_kd, r.l_s, r.l_total]) {
            *acc += v;
        }
    }
    let mut out = String::new();
    if epochs.is_empty() {
        return Ok(out);
    }
    out.push_str("epoch\tsteps\tl_c\tl_kd\tl_s\tl_total\n");
    for (epoch, (n, sums)) in &epochs {
        write!(out, "{epoch}\t{n}").expect("string write");
        for s in sums {
            write!(out, "\t{:.6}", s / *n as f64).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_copies_values_verbatim() {
        let text = concat!(
            "{\"kind\":\"clean\",\"severity\":0,\"absrel\":0.125,\"delta1\":0.90}\n",
            "{\"kind\":\"fog\",\"severity\":1,\"absrel\":1e-3,\"delta1\":0.5}\n",
            "{\"kind\":\"fog\",\"severity\":3,\"absrel\":0.2,\"delta1\":0.25}\n",
        );
        let g = sweep_grid(text).unwrap();
        let lines: Vec<&str> = g.lines().collect();
        assert_eq!(lines[0], "kind\tabsrel@0\tdelta1@0\tabsrel@1\tdelta1@1\tabsrel@3\tdelta1@3");
        assert_eq!(lines[1], "clean\t0.125\t0.90\t-\t-\t-\t-");
        assert_eq!(lines[2], "fog\t-\t-\t1e-3\t0.5\t0.2\t0.25");
        assert_eq!(sweep_grid("").unwrap(), "");
    }

    #[test]
    fn malformed_lines_are_located() {
        let text = "{\"kind\":\"fog\",\"severity\":1,\"absrel\":1,\"delta1\":1}\nnot json\n";
        assert!(matches!(sweep_grid(text), Err(Error::MalformedLog { line: 2, .. })));
        assert!(matches!(steps_summary("\n{}"), Err(Error::MalformedLog { line: 2, .. })));
    }
}

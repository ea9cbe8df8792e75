//! Before/after audits of a single attribute across a label cleaning pass.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::evalkit::emit_grid;
use crate::tensor::Tensor;

/// Holders shown per grid row.
pub const ROW_LEN: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditSheet {
    pub attribute: usize,
    pub name: String,
    pub holders_before: Vec<String>,
    pub holders_after: Vec<String>,
    /// Samples that gained the attribute.
    pub added: Vec<String>,
    /// Samples that lost it.
    pub removed: Vec<String>,
    /// Agreement with the oracle labels, when one is given.
    pub agreement_before: Option<f64>,
    pub agreement_after: Option<f64>,
}

impl AuditSheet {
    pub fn flips(&self) -> usize {
        self.added.len() + self.removed.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,before,after\n");
        let before: BTreeSet<&String> = self.holders_before.iter().collect();
        let after: BTreeSet<&String> = self.holders_after.iter().collect();
        for id in before.union(&after) {
            let _ = writeln!(s, "{id},{},{}", u8::from(before.contains(id)), u8::from(after.contains(id)));
        }
        s
    }

    pub fn summary(&self) -> String {
        let agree = |a: Option<f64>| a.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "attribute {} {}: holders {} -> {}, added {}, removed {}, agreement {} -> {}",
            self.attribute,
            self.name,
            self.holders_before.len(),
            self.holders_after.len(),
            self.added.len(),
            self.removed.len(),
            agree(self.agreement_before),
            agree(self.agreement_after)
        )
    }
}

fn agreement(ds: &Dataset, oracle: &Dataset, attribute: usize) -> f64 {
    let same = ds.iter().zip(oracle.iter()).filter(|(a, b)| a.attributes[attribute] == b.attributes[attribute]).count();
    same as f64 / ds.len().max(1) as f64
}

fn check_aligned(a: &Dataset, b: &Dataset, what: &str) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b.iter()).any(|(x, y)| x.id != y.id) {
        return Err(Error::Argument(format!("{what} does not share sample ids with the audited dataset")));
    }
    Ok(())
}

pub fn audit_attribute(before: &Dataset, after: &Dataset, attribute: usize, oracle: Option<&Dataset>) -> Result<AuditSheet> {
    let a = before.num_attributes();
    if attribute >= a {
        return Err(Error::Argument(format!("attribute {attribute} outside 0..{a}")));
    }
    check_aligned(before, after, "cleaned dataset")?;
    if let Some(o) = oracle {
        check_aligned(before, o, "oracle dataset")?;
    }
    let holders = |ds: &Dataset| -> Vec<String> {
        ds.iter().filter(|s| s.attributes[attribute] == 1).map(|s| s.id.clone()).collect()
    };
    let mut added = Vec::new();
    let mut removed = Vec::new();
    for (x, y) in before.iter().zip(after.iter()) {
        match (x.attributes[attribute], y.attributes[attribute]) {
            (0, 1) => added.push(x.id.clone()),
            (1, 0) => removed.push(x.id.clone()),
            _ => {}
        }
    }
    Ok(AuditSheet {
        attribute,
        name: before.manifest.attribute_names[attribute].clone(),
        holders_before: holders(before),
        holders_after: holders(after),
        added,
        removed,
        agreement_before: oracle.map(|o| agreement(before, o, attribute)),
        agreement_after: oracle.map(|o| agreement(after, o, attribute)),
    })
}

/// Up to [`ROW_LEN`] evenly spaced entries of `ids`.
fn pick(ids: &[String]) -> Vec<&String> {
    if ids.len() <= ROW_LEN {
        return ids.iter().collect();
    }
    (0..ROW_LEN).map(|k| &ids[k * ids.len() / ROW_LEN]).collect()
}

/// Two-row grid: holders before cleaning on top, after cleaning below.
/// Short rows are padded with grey cells.
pub fn audit_grid(sheet: &AuditSheet, before: &Dataset, path: &Path) -> Result<()> {
    let lookup = |id: &String| before.iter().find(|s| &s.id == id).map(|s| s.image.clone());
    let s = before.manifest.image_size;
    let mut cells = Vec::with_capacity(2 * ROW_LEN);
    for row in [&sheet.holders_before, &sheet.holders_after] {
        let chosen = pick(row);
        for k in 0..ROW_LEN {
            let cell = chosen.get(k).and_then(|id| lookup(id)).unwrap_or_else(|| Tensor::zeros(&[3, s, s]));
            cells.push(cell);
        }
    }
    emit_grid(&cells, 2, ROW_LEN, path)
}

/// Writes `{stem}.csv` and `{stem}.png` under `dir`.
pub fn write_audit(sheet: &AuditSheet, before: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("audit_{:02}_{}", sheet.attribute, sheet.name);
    let csv = dir.join(format!("{stem}.csv"));
    fs::write(&csv, sheet.to_csv()).map_err(|e| Error::io(&csv, e))?;
    audit_grid(sheet, before, &dir.join(format!("{stem}.png")))
}

use std::io::{Read, Write};

use csv::StringRecord;

use super::RankedPatch;
use crate::bif::{FeatureSpec, PatchRect};
use crate::error::{Error, Result};

/// One row of the patch export, `rank` starting at 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchRecord {
    pub rank: usize,
    pub spec: FeatureSpec,
    pub alpha: f64,
}

const HEADER: [&str; 7] = ["rank", "band", "orientation", "x", "y", "size", "alpha"];

pub fn write_patches_csv(w: impl Write, patches: &[RankedPatch]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for (i, p) in patches.iter().enumerate() {
        let r = p.spec.rect;
        out.write_record([
            (i + 1).to_string(),
            p.spec.band.to_string(),
            p.spec.orientation.to_string(),
            r.x0.to_string(),
            r.y0.to_string(),
            r.side.to_string(),
            // shortest representation that round-trips
            format!("{:?}", p.alpha),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &StringRecord, i: usize, line: usize) -> Result<T> {
    row.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("patch CSV line {line}: bad `{}` field", HEADER[i])))
}

/// Read a patch export; rows must be ranked 1, 2, … in order.
pub fn read_patches_csv(r: impl Read) -> Result<Vec<PatchRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(Error::Format(format!("patch CSV header must be `{}`", HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let line = n + 2;
        let rec = PatchRecord {
            rank: field(&row, 0, line)?,
            spec: FeatureSpec {
                band: field(&row, 1, line)?,
                orientation: field(&row, 2, line)?,
                rect: PatchRect::new(field(&row, 3, line)?, field(&row, 4, line)?, field(&row, 5, line)?),
            },
            alpha: field(&row, 6, line)?,
        };
        if rec.rank != n + 1 {
            return Err(Error::Format(format!("patch CSV line {line}: expected rank {}", n + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

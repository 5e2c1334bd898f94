//! Long-format `t,y` CSV reading and pseudotime binning.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ziss_core::BinnedCountData;

use crate::error::{CliError, CliResult};

/// Invalid rows reported before giving up.
const MAX_REPORTED: usize = 20;

pub fn read_observations(path: &Path) -> CliResult<Vec<(f64, u64)>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_observations(file).map_err(|e| match e {
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_observations<R: Read>(source: R) -> CliResult<Vec<(f64, u64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("cannot read header: {e}")))?
        .clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "y" {
        return Err(CliError::Validation(format!(
            "expected header `t,y`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(CliError::Io(e.to_string()));
                }
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            bad.push(format!("line {line}: expected 2 fields, found {}", record.len()));
            continue;
        }
        let t = match record[0].parse::<f64>() {
            Ok(t) if t.is_finite() => t,
            _ => {
                bad.push(format!("line {line}: t `{}` is not a finite number", &record[0]));
                continue;
            }
        };
        match record[1].parse::<u64>() {
            Ok(y) => rows.push((t, y)),
            Err(_) => bad.push(format!(
                "line {line}: y `{}` is not a non-negative integer",
                &record[1]
            )),
        }
    }

    if !bad.is_empty() {
        let total = bad.len();
        bad.truncate(MAX_REPORTED);
        let mut msg = format!("{total} malformed row(s): {}", bad.join("; "));
        if total > MAX_REPORTED {
            msg.push_str("; …");
        }
        return Err(CliError::Validation(msg));
    }
    if rows.is_empty() {
        return Err(CliError::Validation("no observations".into()));
    }
    Ok(rows)
}

/// Group observations into points.
///
/// `bins = 0` keeps every distinct `t`; otherwise `[min t, max t]` is cut
/// into equal-width bins, each non-empty bin represented by its midpoint.
/// Without an explicit domain, binned data uses `[min t, max t]` and
/// distinct-value data pads that range by `1e-6` of its width.
pub fn bin_observations(
    rows: &[(f64, u64)],
    bins: usize,
    domain: Option<(f64, f64)>,
) -> CliResult<BinnedCountData> {
    let lo = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(CliError::Validation(
            "all observations share one pseudotime; nothing to smooth".into(),
        ));
    }

    let (points, counts, natural) = if bins == 0 {
        let mut groups: BTreeMap<u64, (f64, Vec<u64>)> = BTreeMap::new();
        for &(t, y) in rows {
            // Normalize -0.0 so equal times share a key.
            let t = t + 0.0;
            groups.entry(order_key(t)).or_insert_with(|| (t, Vec::new())).1.push(y);
        }
        let (points, counts): (Vec<f64>, Vec<Vec<u64>>) = groups.into_values().unzip();
        let pad = 1e-6 * (hi - lo);
        (points, counts, (lo - pad, hi + pad))
    } else {
        let width = (hi - lo) / bins as f64;
        let mut groups: Vec<Vec<u64>> = vec![Vec::new(); bins];
        for &(t, y) in rows {
            let k = (((t - lo) / width).floor() as usize).min(bins - 1);
            groups[k].push(y);
        }
        let mut points = Vec::new();
        let mut counts = Vec::new();
        for (k, ys) in groups.into_iter().enumerate() {
            if !ys.is_empty() {
                points.push(lo + (k as f64 + 0.5) * width);
                counts.push(ys);
            }
        }
        (points, counts, (lo, hi))
    };

    let domain = domain.unwrap_or(natural);
    Ok(BinnedCountData::new(points, counts, domain)?)
}

/// Monotone map from finite f64 to u64.
fn order_key(t: f64) -> u64 {
    let bits = t.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Parse `LO:HI`.
pub fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad lower bound `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad upper bound `{b}`"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("domain needs finite LO < HI, got `{s}`"));
    }
    Ok((lo, hi))
}

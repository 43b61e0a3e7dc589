use std::collections::BTreeMap;
use std::io::Write;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityBin {
    pub center: f64,
    pub density: f64,
}

/// Histogram density with bins centered on multiples of `bin_width`.
///
/// Every bin between the lowest and highest occupied one is emitted, so
/// `sum density * bin_width == 1`.
pub fn export_density(pooled: &[f64], bin_width: f64) -> Result<Vec<DensityBin>, EvalError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(EvalError::InvalidBinWidth(bin_width));
    }
    if pooled.is_empty() {
        return Ok(Vec::new());
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &x in pooled.iter().filter(|x| x.is_finite()) {
        *counts.entry((x / bin_width).round() as i64).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Ok(Vec::new());
    };
    let mass = total as f64 * bin_width;
    Ok((lo..=hi)
        .map(|b| DensityBin {
            center: b as f64 * bin_width,
            density: counts.get(&b).copied().unwrap_or(0) as f64 / mass,
        })
        .collect())
}

pub fn write_density_csv<W: Write>(bins: &[DensityBin], mut out: W) -> std::io::Result<()> {
    writeln!(out, "bin_center,density")?;
    for b in bins {
        writeln!(out, "{:.6},{:.10}", b.center, b.density)?;
    }
    out.flush()
}

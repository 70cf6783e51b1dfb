//! Benchmark band checks shared by the `verify` subcommand and the
//! acceptance test suite.

use super::runner::ForceRecord;

/// Mean resistance per embedment bin (bin width in w/D units). Returns
/// (bin center, mean n_dimless) for non-empty bins, ascending.
pub fn embedment_profile(records: &[ForceRecord], bin_width: f64) -> Vec<(f64, f64)> {
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for r in records {
        let k = (r.embedment / bin_width).floor() as isize;
        let idx = match sums.iter().position(|&(c, _, _)| {
            ((c / bin_width).round() as isize) == k
        }) {
            Some(i) => i,
            None => {
                sums.push(((k as f64 + 0.5) * bin_width, 0.0, 0));
                sums.len() - 1
            }
        };
        sums[idx].1 += r.n_dimless;
        sums[idx].2 += 1;
    }
    let mut out: Vec<(f64, f64)> = sums
        .into_iter()
        .map(|(c, s, n)| (c, s / n as f64))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// True when the rough-interface resistance is at least the smooth one at
/// every matched embedment at or beyond `min_embedment`.
pub fn friction_ordering(
    rough: &[ForceRecord],
    smooth: &[ForceRecord],
    min_embedment: f64,
) -> bool {
    let bin = 0.05;
    let pr = embedment_profile(rough, bin);
    let ps = embedment_profile(smooth, bin);
    let mut compared = 0;
    for &(c, nr) in &pr {
        if c < min_embedment {
            continue;
        }
        if let Some(&(_, ns)) = ps.iter().find(|&&(cs, _)| (cs - c).abs() < 1e-9) {
            compared += 1;
            if nr < ns {
                return false;
            }
        }
    }
    compared > 0
}

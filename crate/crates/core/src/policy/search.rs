//! Argmax of `row[z] - slope * z` over grid indices.
//!
//! Rows produced by the solver are concave in `z`, so a golden-section search
//! finds the maximum in logarithmic time. Rows that fail the concavity check are
//! scanned exhaustively and rejected if the objective has more than one peak.

/// Which end of a set of (near-)tied maximizers to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tie {
    Smallest,
    Largest,
}

/// `1 / phi` in thousandths.
const GOLDEN_PERMILLE: usize = 618;

/// True when every second difference of `row` is at most `tol`.
pub fn is_concave(row: &[f64], tol: f64) -> bool {
    row.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] <= tol)
}

fn objective(row: &[f64], slope: f64, z: usize) -> f64 {
    row[z] - slope * z as f64
}

/// Golden-section search for a maximizer of a concave objective.
pub fn golden_section_argmax(row: &[f64], slope: f64, tie: Tie, tol: f64) -> usize {
    widen(row, slope, golden_section_core(row, slope), tie, tol)
}

/// Smallest and largest near-maximizers of a concave objective.
pub fn golden_section_plateau(row: &[f64], slope: f64, tol: f64) -> (usize, usize) {
    let best = golden_section_core(row, slope);
    (widen(row, slope, best, Tie::Smallest, tol), widen(row, slope, best, Tie::Largest, tol))
}

fn golden_section_core(row: &[f64], slope: f64) -> usize {
    debug_assert!(!row.is_empty());
    let f = |z: usize| objective(row, slope, z);
    let (mut lo, mut hi) = (0usize, row.len() - 1);
    while hi - lo > 3 {
        let reach = ((hi - lo) * GOLDEN_PERMILLE + 500) / 1000;
        let m1 = hi - reach;
        let m2 = lo + reach;
        let (m1, m2) = if m1 < m2 { (m1, m2) } else { (lo + (hi - lo) / 3, hi - (hi - lo) / 3) };
        let (f1, f2) = (f(m1), f(m2));
        if f1 < f2 {
            lo = m1 + 1;
        } else if f1 > f2 {
            hi = m2 - 1;
        } else {
            lo = m1;
            hi = m2;
        }
    }
    let mut best = lo;
    for z in lo + 1..=hi {
        if f(z) > f(best) {
            best = z;
        }
    }
    best
}

/// Moves from a maximizer to the requested end of its near-tie plateau.
fn widen(row: &[f64], slope: f64, best: usize, tie: Tie, tol: f64) -> usize {
    let floor = objective(row, slope, best) - tol;
    let mut z = best;
    match tie {
        Tie::Smallest => {
            while z > 0 && objective(row, slope, z - 1) >= floor {
                z -= 1;
            }
        }
        Tie::Largest => {
            while z + 1 < row.len() && objective(row, slope, z + 1) >= floor {
                z += 1;
            }
        }
    }
    z
}

/// Exhaustive scan. Returns `Err(peaks)` when the objective has more than one
/// local maximum separated by a dip deeper than `tol`.
pub fn scan_argmax(row: &[f64], slope: f64, tie: Tie, tol: f64) -> Result<usize, usize> {
    let n = row.len();
    let values: Vec<f64> = (0..n).map(|z| objective(row, slope, z)).collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let picked = match tie {
        Tie::Smallest => values.iter().position(|v| *v >= max - tol),
        Tie::Largest => values.iter().rposition(|v| *v >= max - tol),
    }
    .expect("non-empty row");
    let peaks = count_peaks(&values, tol);
    if peaks > 1 {
        Err(peaks)
    } else {
        Ok(picked)
    }
}

/// Number of separated peaks: a new peak starts whenever the sequence climbs by
/// more than `tol` after having dropped by more than `tol` from its running high.
fn count_peaks(values: &[f64], tol: f64) -> usize {
    let mut peaks = 1;
    let mut high = values[0];
    let mut low = values[0];
    let mut descended = false;
    for &v in &values[1..] {
        if descended {
            if v > low + tol {
                peaks += 1;
                descended = false;
                high = v;
            } else {
                low = low.min(v);
            }
        } else if v < high - tol {
            descended = true;
            low = v;
        } else {
            high = high.max(v);
        }
    }
    peaks
}

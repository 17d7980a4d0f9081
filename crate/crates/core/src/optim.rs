//! One-dimensional minimization over a positive scale parameter.
//!
//! The objective is first scanned on a logarithmic grid (no convexity is
//! assumed) and the best grid cell is then refined by golden-section search
//! in log space.

use crate::error::{LorpError, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSettings {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    /// Relative bracket width at which golden-section refinement stops.
    pub rel_tol: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            lo: 1e-8,
            hi: 1e6,
            grid_points: 256,
            rel_tol: 1e-10,
        }
    }
}

impl ScanSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi.is_finite()) {
            return Err(LorpError::InvalidInput(format!(
                "scale bounds must satisfy 0 < lo < hi < inf, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.grid_points < 64 {
            return Err(LorpError::InvalidInput(format!(
                "grid needs at least 64 points, got {}",
                self.grid_points
            )));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(LorpError::InvalidInput(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub argmin: f64,
    pub min: f64,
    /// Sum of absolute successive differences of the objective over the grid.
    pub total_variation: f64,
    /// Grid cell `[grid[i-1], grid[i+1]]` around the best grid point.
    pub cell: (f64, f64),
}

/// Logarithmically spaced grid on `[lo, hi]`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == points - 1 {
                hi
            } else {
                (a + step * i as f64).exp()
            }
        })
        .collect()
}

/// Global grid scan followed by golden-section refinement of the best cell.
///
/// Ties on the grid resolve to the smallest scale value.
pub fn minimize_log_scale<F>(settings: &ScanSettings, mut f: F) -> Result<ScanOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    settings.validate()?;
    let grid = log_grid(settings.lo, settings.hi, settings.grid_points);
    let values = grid.iter().map(|&a| f(a)).collect::<Result<Vec<_>>>()?;
    if let Some(bad) = values.iter().find(|v| v.is_nan()) {
        return Err(LorpError::NumericalFailure(format!(
            "objective evaluated to {bad} on the grid"
        )));
    }

    let total_variation = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < values[b] { i } else { b });

    let lo_idx = best.saturating_sub(1);
    let hi_idx = (best + 1).min(grid.len() - 1);
    let (mut a, mut b) = (grid[lo_idx].ln(), grid[hi_idx].ln());
    let log_tol = settings.rel_tol;

    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c.exp())?;
    let mut fd = f(d.exp())?;
    let mut iterations = 0;
    while b - a > log_tol && iterations < 500 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d.exp())?;
        }
        iterations += 1;
    }

    // The refined point only replaces the grid optimum when it is no worse.
    let (mut argmin, mut min) = (grid[best], values[best]);
    for (x, v) in [(c, fc), (d, fd)] {
        if v < min {
            argmin = x.exp();
            min = v;
        }
    }
    Ok(ScanOutcome {
        argmin,
        min,
        total_variation,
        cell: (grid[lo_idx], grid[hi_idx]),
    })
}

/// Bisection for a sign change of `g` on `[lo, hi]` in log space.
///
/// Returns `None` when `g` has the same sign at both ends.
pub fn bisect_log_scale<G>(lo: f64, hi: f64, mut g: G) -> Result<Option<f64>>
where
    G: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let ga = g(lo)?;
    let gb = g(hi)?;
    if ga == 0.0 {
        return Ok(Some(lo));
    }
    if gb == 0.0 {
        return Ok(Some(hi));
    }
    if ga.signum() == gb.signum() || ga.is_nan() || gb.is_nan() {
        return Ok(None);
    }
    let positive_at_a = ga > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = g(mid.exp())?;
        if gm == 0.0 {
            return Ok(Some(mid.exp()));
        }
        if (gm > 0.0) == positive_at_a {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Some((0.5 * (a + b)).exp()))
}

use crate::error::{Error, Result};

/// Uniform 1D grid of cells times a finite label set.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSpace {
    pub grid: Vec<f64>,
    pub cell_weight: f64,
    pub n_labels: usize,
}

impl ConfigSpace {
    pub fn new(grid: Vec<f64>, cell_weight: f64, n_labels: usize) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidParameter(
                "grid must have at least one cell".into(),
            ));
        }
        if !(cell_weight > 0.0) || !cell_weight.is_finite() {
            return Err(Error::InvalidParameter(
                "cell weight must be positive".into(),
            ));
        }
        if n_labels == 0 {
            return Err(Error::InvalidParameter("label set must be nonempty".into()));
        }
        Ok(Self {
            grid,
            cell_weight,
            n_labels,
        })
    }

    /// `n_q` cell centres covering a box of the given length centred at 0.
    pub fn uniform(n_q: usize, box_length: f64, n_labels: usize) -> Result<Self> {
        if n_q == 0 || !(box_length > 0.0) {
            return Err(Error::InvalidParameter(
                "need n_q >= 1 and a positive box length".into(),
            ));
        }
        let dq = box_length / n_q as f64;
        let grid = (0..n_q)
            .map(|j| -0.5 * box_length + (j as f64 + 0.5) * dq)
            .collect();
        Self::new(grid, dq, n_labels)
    }

    pub fn n_q(&self) -> usize {
        self.grid.len()
    }

    /// Number of (label, cell) pairs.
    pub fn n_cells(&self) -> usize {
        self.grid.len() * self.n_labels
    }

    pub fn total_measure(&self) -> f64 {
        self.grid.len() as f64 * self.cell_weight * self.n_labels as f64
    }
}

/// One flash: grid cell, time, label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flash {
    pub q: usize,
    pub t: f64,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlashRecord {
    Flash(Flash),
    Cemetery,
}

impl FlashRecord {
    pub fn flash(&self) -> Option<&Flash> {
        match self {
            FlashRecord::Flash(f) => Some(f),
            FlashRecord::Cemetery => None,
        }
    }
}

/// Time of the last flash, or `t0` for the empty history.
pub fn last_time(history: &[Flash], t0: f64) -> f64 {
    history.last().map_or(t0, |f| f.t)
}

/// True when `t0 ≤ t1 ≤ ... ≤ tn`; equal times lie on the boundary of the
/// ordered region, where densities are taken by continuity.
pub fn time_ordered(history: &[Flash], t0: f64) -> bool {
    let mut prev = t0;
    for f in history {
        if !(f.t >= prev) {
            return false;
        }
        prev = f.t;
    }
    true
}

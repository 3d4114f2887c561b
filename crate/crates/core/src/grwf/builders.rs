//! Named model builders: Gaussian flash rates, identical particles,
//! tight-binding Hamiltonians, constant-rate normalization, Fock truncation.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grwf::model::{GrwfModel, Tier};
use crate::grwf::space::ConfigSpace;
use crate::opcore::{self, CMat, CVec, C64};

/// Collapse rate suggested for the original model, per second.
pub const GRW_LAMBDA_PER_SECOND: f64 = 1e-15;
/// Localization width suggested for the original model, in metres.
pub const GRW_SIGMA_METRES: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistics {
    Distinguishable,
    /// Bosonic symmetrization.
    Identical,
}

/// Flash-rate and collapse operators, indexed `label * n_q + q`.
#[derive(Clone, Debug)]
pub struct CollapseFamily {
    pub dim: usize,
    pub rates: Vec<CMat>,
    pub collapse: Vec<CMat>,
    /// λ such that Σ_{label, q} Λ Δq = λ I.
    pub total_rate: f64,
}

/// Multi-particle basis on the grid: tuples of cell indices.
#[derive(Clone, Debug)]
pub struct ParticleBasis {
    pub states: Vec<Vec<usize>>,
    pub statistics: Statistics,
    index: HashMap<Vec<usize>, usize>,
}

impl ParticleBasis {
    pub fn new(n_q: usize, n_particles: usize, statistics: Statistics) -> Self {
        let mut states = Vec::new();
        let mut cur = vec![0usize; n_particles];
        loop {
            let sorted = cur.windows(2).all(|w| w[0] <= w[1]);
            if statistics == Statistics::Distinguishable || sorted {
                states.push(cur.clone());
            }
            let mut k = n_particles;
            loop {
                if k == 0 {
                    let index = states
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (s.clone(), i))
                        .collect();
                    return Self {
                        states,
                        statistics,
                        index,
                    };
                }
                k -= 1;
                cur[k] += 1;
                if cur[k] < n_q {
                    break;
                }
                cur[k] = 0;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, state: &[usize]) -> Option<usize> {
        self.index.get(state).copied()
    }
}

/// Row-normalized Gaussian kernel K(x, q) with Σ_q K(x, q)Δq = 1.
pub fn gaussian_kernel(space: &ConfigSpace, sigma: f64) -> Result<Vec<Vec<f64>>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter("sigma must be positive".into()));
    }
    if sigma < space.cell_weight {
        return Err(Error::InvalidParameter(format!(
            "sigma {sigma} is below the grid resolution {}",
            space.cell_weight
        )));
    }
    Ok(space
        .grid
        .iter()
        .map(|&x| {
            let row: Vec<f64> = space
                .grid
                .iter()
                .map(|&q| (-(x - q).powi(2) / (2.0 * sigma * sigma)).exp())
                .collect();
            let norm: f64 = row.iter().sum::<f64>() * space.cell_weight;
            row.into_iter().map(|v| v / norm).collect()
        })
        .collect())
}

/// Gaussian multiplication flash rates for `n_particles` particles.
///
/// Distinguishable particles flash with their own label (the space must have
/// one label per particle) and each label integrates to λI. Identical
/// particles share one label and the family integrates to NλI.
pub fn gaussian_flash_rate(
    space: &ConfigSpace,
    lambda: f64,
    sigma: f64,
    n_particles: usize,
    statistics: Statistics,
) -> Result<CollapseFamily> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    if n_particles == 0 {
        return Err(Error::InvalidParameter("need at least one particle".into()));
    }
    let expected_labels = match statistics {
        Statistics::Distinguishable => n_particles,
        Statistics::Identical => 1,
    };
    if space.n_labels != expected_labels {
        return Err(Error::InvalidParameter(format!(
            "space has {} labels, {statistics:?} statistics with {n_particles} particles needs {expected_labels}",
            space.n_labels
        )));
    }
    let kernel = gaussian_kernel(space, sigma)?;
    let basis = ParticleBasis::new(space.n_q(), n_particles, statistics);
    let n_q = space.n_q();
    let mut rates = Vec::with_capacity(space.n_cells());
    for label in 0..space.n_labels {
        for q in 0..n_q {
            let diag = basis.states.iter().map(|s| {
                let v: f64 = match statistics {
                    Statistics::Distinguishable => kernel[s[label]][q],
                    Statistics::Identical => s.iter().map(|&x| kernel[x][q]).sum(),
                };
                C64::from(lambda * v)
            });
            rates.push(CMat::from_diagonal(&CVec::from_iterator(basis.dim(), diag)));
        }
    }
    let collapse = rates
        .iter()
        .map(|r| r.map(|z| C64::from(z.re.max(0.0).sqrt())))
        .collect();
    Ok(CollapseFamily {
        dim: basis.dim(),
        rates,
        collapse,
        total_rate: lambda * n_particles as f64,
    })
}

/// Nearest-neighbour hopping −J on the grid plus an on-site potential,
/// lifted to the multi-particle basis.
pub fn tight_binding_hamiltonian(
    space: &ConfigSpace,
    hopping: f64,
    potential: Option<&[f64]>,
    n_particles: usize,
    statistics: Statistics,
) -> Result<CMat> {
    let n_q = space.n_q();
    if let Some(v) = potential {
        if v.len() != n_q {
            return Err(Error::DimensionMismatch {
                expected: n_q,
                found: v.len(),
            });
        }
    }
    let mut h1 = vec![vec![0.0; n_q]; n_q];
    for x in 0..n_q {
        h1[x][x] = 2.0 * hopping + potential.map_or(0.0, |v| v[x]);
        if x + 1 < n_q {
            h1[x][x + 1] = -hopping;
            h1[x + 1][x] = -hopping;
        }
    }
    let basis = ParticleBasis::new(n_q, n_particles, statistics);
    let d = basis.dim();
    let mut h = CMat::zeros(d, d);
    for (col, state) in basis.states.iter().enumerate() {
        match statistics {
            Statistics::Distinguishable => {
                for p in 0..n_particles {
                    let x = state[p];
                    for y in 0..n_q {
                        if h1[y][x] != 0.0 {
                            let mut target = state.clone();
                            target[p] = y;
                            let row = basis.index_of(&target).expect("basis is complete");
                            h[(row, col)] += C64::from(h1[y][x]);
                        }
                    }
                }
            }
            Statistics::Identical => {
                let occupation =
                    |s: &[usize], x: usize| s.iter().filter(|&&v| v == x).count() as f64;
                let mut seen = Vec::new();
                for &x in state {
                    if seen.contains(&x) {
                        continue;
                    }
                    seen.push(x);
                    let nx = occupation(state, x);
                    for y in 0..n_q {
                        if h1[y][x] == 0.0 {
                            continue;
                        }
                        let mut target = state.clone();
                        let pos = target.iter().position(|&v| v == x).expect("occupied");
                        target[pos] = y;
                        target.sort_unstable();
                        let my = occupation(&target, y);
                        let row = basis.index_of(&target).expect("basis is complete");
                        h[(row, col)] += C64::from(h1[y][x] * (nx * my).sqrt());
                    }
                }
            }
        }
    }
    Ok(opcore::hermitian_part(&h))
}

/// λ S^{-1/2} A S^{-1/2} with S = Σ A Δq, so the result integrates to λI.
pub fn normalize_family(ops: &[CMat], cell_weight: f64, lambda: f64) -> Result<Vec<CMat>> {
    let first = ops.first().ok_or(Error::EmptyFamily)?;
    let mut s = CMat::zeros(first.nrows(), first.ncols());
    for a in ops {
        s += a * C64::from(cell_weight);
    }
    let s_inv_half = opcore::positive_inv_sqrt(&s)?;
    Ok(ops
        .iter()
        .map(|a| opcore::hermitian_part(&(&s_inv_half * a * &s_inv_half)) * C64::from(lambda))
        .collect())
}

/// Constant-rate model from arbitrary positive operators, normalized to λI.
pub fn constant_rate_model(
    space: ConfigSpace,
    raw: &[CMat],
    hamiltonian: CMat,
    lambda: f64,
) -> Result<GrwfModel> {
    let rates = normalize_family(raw, space.cell_weight, lambda)?;
    let collapse = rates
        .iter()
        .map(opcore::positive_sqrt)
        .collect::<Result<Vec<_>>>()?;
    let tier = if space.n_labels == 1 {
        Tier::Simple
    } else {
        Tier::Labeled
    };
    GrwfModel::from_static(tier, space, collapse, hamiltonian, Some(lambda))
}

/// Gaussian model with tight-binding dynamics.
pub fn gaussian_model(
    space: ConfigSpace,
    lambda: f64,
    sigma: f64,
    hopping: f64,
    n_particles: usize,
    statistics: Statistics,
) -> Result<GrwfModel> {
    let family = gaussian_flash_rate(&space, lambda, sigma, n_particles, statistics)?;
    let h = tight_binding_hamiltonian(&space, hopping, None, n_particles, statistics)?;
    let tier = if space.n_labels == 1 {
        Tier::Simple
    } else {
        Tier::Labeled
    };
    GrwfModel::from_static(tier, space, family.collapse, h, Some(family.total_rate))
}

/// Bosons on the grid with particle number at most `n_max`. The flash rate is
/// λ Σ_x K(x, q) n̂_x, so the total rate λN̂ varies between sectors and the
/// vacuum never flashes.
pub fn fock_truncated_model(
    space: ConfigSpace,
    lambda: f64,
    sigma: f64,
    hopping: f64,
    n_max: usize,
) -> Result<GrwfModel> {
    if space.n_labels != 1 {
        return Err(Error::InvalidParameter(
            "fock preset uses a single label".into(),
        ));
    }
    let kernel = gaussian_kernel(&space, sigma)?;
    let sectors: Vec<ParticleBasis> = (0..=n_max)
        .map(|n| ParticleBasis::new(space.n_q(), n, Statistics::Identical))
        .collect();
    let dim: usize = sectors.iter().map(ParticleBasis::dim).sum();
    let mut offsets = Vec::with_capacity(sectors.len());
    let mut acc = 0;
    for s in &sectors {
        offsets.push(acc);
        acc += s.dim();
    }
    let mut collapse = Vec::with_capacity(space.n_q());
    for q in 0..space.n_q() {
        let mut diag = Vec::with_capacity(dim);
        for s in &sectors {
            for st in &s.states {
                let v: f64 = st.iter().map(|&x| kernel[x][q]).sum();
                diag.push(C64::from((lambda * v).sqrt()));
            }
        }
        collapse.push(CMat::from_diagonal(&CVec::from_vec(diag)));
    }
    let mut h = CMat::zeros(dim, dim);
    for (n, s) in sectors.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let block = tight_binding_hamiltonian(&space, hopping, None, n, Statistics::Identical)?;
        h.view_mut((offsets[n], offsets[n]), (s.dim(), s.dim()))
            .copy_from(&block);
    }
    GrwfModel::from_static(Tier::VariableRate, space, collapse, h, None)
}

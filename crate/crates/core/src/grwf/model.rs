use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grwf::space::{ConfigSpace, Flash};
use crate::opcore::{self, CMat, C64, I};

/// C(f, q, t, label).
pub type CollapseFn = dyn Fn(&[Flash], usize, f64, usize) -> CMat + Send + Sync;
/// H(f, t).
pub type HamiltonianFn = dyn Fn(&[Flash], f64) -> CMat + Send + Sync;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tier {
    Simple,
    Labeled,
    VariableRate,
    TimeDependent,
    PastDependent,
}

impl Tier {
    pub fn has_constant_rate(self) -> bool {
        matches!(self, Tier::Simple | Tier::Labeled)
    }
}

#[derive(Clone)]
enum Source {
    Static {
        collapse: Vec<CMat>,
        rates: Vec<CMat>,
        total_rate: CMat,
        hamiltonian: CMat,
    },
    Dynamic {
        collapse: Arc<CollapseFn>,
        hamiltonian: Arc<HamiltonianFn>,
        time_dependent: bool,
        past_dependent: bool,
        rate: Option<Arc<CollapseFn>>,
        total: Option<Arc<HamiltonianFn>>,
    },
}

/// Defining operator data of one scheme variant.
#[derive(Clone)]
pub struct GrwfModel {
    pub tier: Tier,
    pub space: ConfigSpace,
    pub dim: usize,
    pub lambda_const: Option<f64>,
    source: Source,
}

impl fmt::Debug for GrwfModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrwfModel")
            .field("tier", &self.tier)
            .field("dim", &self.dim)
            .field("n_q", &self.space.n_q())
            .field("n_labels", &self.space.n_labels)
            .field("lambda_const", &self.lambda_const)
            .field("time_dependent", &self.is_time_dependent())
            .field("past_dependent", &self.is_past_dependent())
            .finish()
    }
}

impl GrwfModel {
    /// Model with history- and time-independent operators.
    /// `collapse[label * n_q + q]` is C for that cell.
    pub fn from_static(
        tier: Tier,
        space: ConfigSpace,
        collapse: Vec<CMat>,
        hamiltonian: CMat,
        lambda_const: Option<f64>,
    ) -> Result<Self> {
        if collapse.len() != space.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: space.n_cells(),
                found: collapse.len(),
            });
        }
        let dim = hamiltonian.nrows();
        if dim == 0 || hamiltonian.ncols() != dim {
            return Err(Error::InvalidParameter(
                "hamiltonian must be square and nonempty".into(),
            ));
        }
        if let Some(c) = collapse
            .iter()
            .find(|c| c.nrows() != dim || c.ncols() != dim)
        {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.nrows(),
            });
        }
        if !opcore::is_finite(&hamiltonian) || collapse.iter().any(|c| !opcore::is_finite(c)) {
            return Err(Error::NonFinite("model operators"));
        }
        if opcore::hermitian_deviation(&hamiltonian) > 1e-12 * (1.0 + opcore::max_abs(&hamiltonian))
        {
            return Err(Error::NotHermitian {
                deviation: opcore::hermitian_deviation(&hamiltonian),
            });
        }
        let rates: Vec<CMat> = collapse
            .iter()
            .map(|c| opcore::hermitian_part(&(c.adjoint() * c)))
            .collect();
        let mut total_rate = CMat::zeros(dim, dim);
        for r in &rates {
            total_rate += r * C64::from(space.cell_weight);
        }
        let model = Self {
            tier,
            space,
            dim,
            lambda_const,
            source: Source::Static {
                collapse,
                rates,
                total_rate,
                hamiltonian,
            },
        };
        model.validate()?;
        Ok(model)
    }

    /// Model given by closures. `time_dependent`/`past_dependent` declare
    /// whether the operators actually vary with t or with the history.
    #[allow(clippy::too_many_arguments)]
    pub fn dynamic(
        tier: Tier,
        space: ConfigSpace,
        dim: usize,
        collapse: Arc<CollapseFn>,
        hamiltonian: Arc<HamiltonianFn>,
        time_dependent: bool,
        past_dependent: bool,
        lambda_const: Option<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "hilbert dimension must be positive".into(),
            ));
        }
        let model = Self {
            tier,
            space,
            dim,
            lambda_const,
            source: Source::Dynamic {
                collapse,
                hamiltonian,
                time_dependent,
                past_dependent,
                rate: None,
                total: None,
            },
        };
        model.validate()?;
        Ok(model)
    }

    /// Supplies direct evaluators for C*C and for the total rate, used instead
    /// of forming them from the collapse operators. They must agree with them.
    pub fn with_rate_evaluators(
        mut self,
        rate_fn: Arc<CollapseFn>,
        total_fn: Arc<HamiltonianFn>,
    ) -> Self {
        if let Source::Dynamic { rate, total, .. } = &mut self.source {
            *rate = Some(rate_fn);
            *total = Some(total_fn);
        }
        self
    }

    /// Checks the constant-rate normalization and positivity at the empty history and t = 0.
    pub fn validate(&self) -> Result<()> {
        if let Some(lambda) = self.lambda_const {
            if !(lambda > 0.0) {
                return Err(Error::InvalidParameter("lambda must be positive".into()));
            }
            let total = self.total_rate(&[], 0.0);
            let dev =
                opcore::max_abs_diff(&total, &(opcore::identity(self.dim) * C64::from(lambda)));
            if dev > 1e-10 * (1.0 + lambda) {
                return Err(Error::InvalidParameter(format!(
                    "collapse family does not integrate to lambda*I (deviation {dev:e})"
                )));
            }
        }
        let h = self.hamiltonian(&[], 0.0);
        if h.nrows() != self.dim || !opcore::is_finite(&h) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: h.nrows(),
            });
        }
        Ok(())
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(
            self.source,
            Source::Dynamic {
                time_dependent: true,
                ..
            }
        )
    }

    pub fn is_past_dependent(&self) -> bool {
        matches!(
            self.source,
            Source::Dynamic {
                past_dependent: true,
                ..
            }
        )
    }

    pub fn is_static(&self) -> bool {
        matches!(self.source, Source::Static { .. })
    }

    pub fn cell_index(&self, q: usize, label: usize) -> usize {
        label * self.space.n_q() + q
    }

    pub fn collapse_op(&self, history: &[Flash], q: usize, t: f64, label: usize) -> CMat {
        match &self.source {
            Source::Static { collapse, .. } => collapse[self.cell_index(q, label)].clone(),
            Source::Dynamic { collapse, .. } => collapse(history, q, t, label),
        }
    }

    /// Λ(f, q, t, label) = C*C.
    pub fn rate_op(&self, history: &[Flash], q: usize, t: f64, label: usize) -> CMat {
        match &self.source {
            Source::Static { rates, .. } => rates[self.cell_index(q, label)].clone(),
            Source::Dynamic {
                rate: Some(rate), ..
            } => rate(history, q, t, label),
            Source::Dynamic { collapse, .. } => {
                let c = collapse(history, q, t, label);
                opcore::hermitian_part(&(c.adjoint() * c))
            }
        }
    }

    /// Λ(f, 𝒬, t) = Σ_{label, q} C*C Δq.
    pub fn total_rate(&self, history: &[Flash], t: f64) -> CMat {
        match &self.source {
            Source::Static { total_rate, .. } => total_rate.clone(),
            Source::Dynamic {
                total: Some(total), ..
            } => total(history, t),
            Source::Dynamic { .. } => {
                let mut acc = CMat::zeros(self.dim, self.dim);
                for label in 0..self.space.n_labels {
                    for q in 0..self.space.n_q() {
                        acc += self.rate_op(history, q, t, label);
                    }
                }
                acc * C64::from(self.space.cell_weight)
            }
        }
    }

    pub fn hamiltonian(&self, history: &[Flash], t: f64) -> CMat {
        match &self.source {
            Source::Static { hamiltonian, .. } => hamiltonian.clone(),
            Source::Dynamic { hamiltonian, .. } => hamiltonian(history, t),
        }
    }

    /// R = −½Λ(f, 𝒬, t) − iH(f, t).
    pub fn generator(&self, history: &[Flash], t: f64) -> CMat {
        self.total_rate(history, t) * C64::from(-0.5) - self.hamiltonian(history, t) * I
    }

    /// Static collapse operators, if the model has them.
    pub fn static_collapse_ops(&self) -> Option<&[CMat]> {
        match &self.source {
            Source::Static { collapse, .. } => Some(collapse),
            Source::Dynamic { .. } => None,
        }
    }
}

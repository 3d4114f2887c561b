//! Config sections turned into core objects.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flashpoint::grwf::builders::{constant_rate_model, fock_truncated_model, gaussian_model};
use flashpoint::grwf::{corpus, ConfigSpace, GrwfModel, Statistics, Tier};
use flashpoint::opcore::{self, CMat, CVec, C64};
use flashpoint::rgrwf::dirac::{DiracLattice, Potential};
use flashpoint::rgrwf::sampler::MultiState;
use flashpoint::rgrwf::{Profile, RgrwfModel, SpacetimePoint};

use crate::config::{
    ConstantRateModel, FockModel, GaussianModel, MatrixSpec, ModelConfig, OrderName, PacketConfig,
    ProfileName, RandomModel, RgrwfConfig, StatisticsName, StopConfig, TierName,
};
use crate::error::{CliError, Context};

pub fn tier(name: TierName) -> Tier {
    match name {
        TierName::Simple => Tier::Simple,
        TierName::Labeled => Tier::Labeled,
        TierName::VariableRate => Tier::VariableRate,
        TierName::TimeDependent => Tier::TimeDependent,
        TierName::PastDependent => Tier::PastDependent,
    }
}

pub fn order(name: OrderName) -> flashpoint::rgrwf::ck::Order {
    match name {
        OrderName::LeftFirst => flashpoint::rgrwf::ck::Order::LeftFirst,
        OrderName::RightFirst => flashpoint::rgrwf::ck::Order::RightFirst,
    }
}

fn matrix(spec: &MatrixSpec, what: &str) -> Result<CMat, CliError> {
    let n = spec.len();
    if n == 0 || spec.iter().any(|row| row.len() != n) {
        return Err(CliError::Config(format!(
            "{what}: matrix must be square and nonempty"
        )));
    }
    Ok(CMat::from_fn(n, n, |i, j| {
        C64::new(spec[i][j][0], spec[i][j][1])
    }))
}

pub fn build_model(cfg: &ModelConfig) -> Result<GrwfModel, CliError> {
    match cfg {
        ModelConfig::Random(RandomModel {
            tier: t,
            dim,
            n_q,
            lambda,
            model_seed,
        }) => {
            if *dim == 0 || *n_q == 0 {
                return Err(CliError::Config(
                    "model: dim and n_q must be positive".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*model_seed);
            match tier(*t) {
                Tier::Simple => corpus::random_simple(*dim, *n_q, *lambda, &mut rng),
                Tier::Labeled => corpus::random_labeled(*dim, *n_q, 2, *lambda, &mut rng),
                other => corpus::random_model(other, *dim, *n_q, &mut rng),
            }
            .building("model")
        }
        ModelConfig::Gaussian(GaussianModel {
            n_q,
            box_length,
            lambda,
            sigma,
            hopping,
            n_particles,
            statistics,
        }) => {
            let stats = match statistics {
                StatisticsName::Distinguishable => Statistics::Distinguishable,
                StatisticsName::Identical => Statistics::Identical,
            };
            let labels = if stats == Statistics::Identical {
                1
            } else {
                *n_particles
            };
            let space = ConfigSpace::uniform(*n_q, *box_length, labels).building("model")?;
            gaussian_model(space, *lambda, *sigma, *hopping, *n_particles, stats).building("model")
        }
        ModelConfig::Fock(FockModel {
            n_q,
            box_length,
            lambda,
            sigma,
            hopping,
            n_max,
        }) => {
            let space = ConfigSpace::uniform(*n_q, *box_length, 1).building("model")?;
            fock_truncated_model(space, *lambda, *sigma, *hopping, *n_max).building("model")
        }
        ModelConfig::ConstantRate(ConstantRateModel {
            n_q,
            box_length,
            lambda,
            rates,
            hamiltonian,
        }) => {
            if *n_q == 0 || rates.is_empty() || rates.len() % n_q != 0 {
                return Err(CliError::Config(
                    "model.rates: need n_q operators per label".into(),
                ));
            }
            let space =
                ConfigSpace::uniform(*n_q, *box_length, rates.len() / n_q).building("model")?;
            let raw = rates
                .iter()
                .map(|r| matrix(r, "model.rates"))
                .collect::<Result<Vec<_>, _>>()?;
            let h = matrix(hamiltonian, "model.hamiltonian")?;
            constant_rate_model(space, &raw, h, *lambda).building("model")
        }
    }
}

/// The configured initial state, or the uniform superposition.
pub fn initial_state(model: &GrwfModel, stop: &StopConfig) -> Result<CVec, CliError> {
    let v = match &stop.psi0 {
        Some(amps) => {
            if amps.len() != model.dim {
                return Err(CliError::Config(format!(
                    "stop.psi0: model dimension is {}, got {} amplitudes",
                    model.dim,
                    amps.len()
                )));
            }
            CVec::from_iterator(model.dim, amps.iter().map(|a| C64::new(a[0], a[1])))
        }
        None => CVec::from_element(model.dim, C64::from(1.0)),
    };
    opcore::normalized(&v).building("stop.psi0")
}

pub fn profile(cfg: &RgrwfConfig) -> Profile {
    match cfg.profile {
        ProfileName::Gaussian => Profile::Gaussian { sigma: cfg.sigma },
        ProfileName::Compact => Profile::Compact { sigma: cfg.sigma },
    }
}

pub fn rgrwf_model(cfg: &RgrwfConfig) -> Result<RgrwfModel, CliError> {
    let mut model =
        RgrwfModel::at_level(cfg.mass, cfg.lambda, profile(cfg), cfg.n_labels, cfg.level)
            .building("rgrwf")?;
    if let Some(x) = cfg.half_width {
        let dx = 2.0 * model.half_width / (model.n_x - 1) as f64;
        model.half_width = x;
        model.n_x = (2.0 * x / dx).round() as usize + 1;
    }
    if let Some(w) = cfg.window {
        model.window = w;
    }
    if let Some(d) = cfg.max_duration {
        model.max_duration = d;
    }
    if let Some(w) = &cfg.well {
        model.potential = Potential::GaussianWell {
            depth: w.depth,
            center: w.center,
            width: w.width,
        };
    }
    model.validate().building("rgrwf")?;
    Ok(model)
}

/// Seed flashes at t0, spread 4 apart and centred on x = 0 unless configured.
pub fn seeds(cfg: &RgrwfConfig, t0: f64) -> Vec<SpacetimePoint> {
    if cfg.seeds.is_empty() {
        let mid = (cfg.n_labels as f64 - 1.0) / 2.0;
        (0..cfg.n_labels)
            .map(|i| SpacetimePoint::new(t0, 4.0 * (i as f64 - mid)))
            .collect()
    } else {
        cfg.seeds
            .iter()
            .map(|p| SpacetimePoint::new(p[0], p[1]))
            .collect()
    }
}

pub fn packets(cfg: &RgrwfConfig, seeds: &[SpacetimePoint]) -> Vec<PacketConfig> {
    if cfg.packets.is_empty() {
        seeds
            .iter()
            .map(|s| PacketConfig {
                center: s.x,
                width: 1.0,
                momentum: 0.0,
                spinor: [[1.0, 0.0], [0.0, 0.0]],
            })
            .collect()
    } else {
        cfg.packets.clone()
    }
}

pub fn product_state(
    lattice: &DiracLattice,
    packets: &[PacketConfig],
) -> Result<MultiState, CliError> {
    let fields = packets
        .iter()
        .map(|p| {
            let spinor = [
                C64::new(p.spinor[0][0], p.spinor[0][1]),
                C64::new(p.spinor[1][0], p.spinor[1][1]),
            ];
            lattice
                .gaussian_packet(p.center, p.width, p.momentum, spinor)
                .building("rgrwf.packets")
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MultiState::Product(fields))
}

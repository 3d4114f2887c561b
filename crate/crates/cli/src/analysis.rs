//! Statistics over flash records, shared by the run commands and `stats`.

use serde_json::{json, Map, Value};

use flashpoint::rgrwf::geometry::in_open_future;
use flashpoint::rgrwf::SpacetimePoint;
use flashpoint::stats::{self, TestResult, MIN_SAMPLE};

use crate::error::{CliError, Context};
use crate::output::num;

/// One line of a GRWf record file.
#[derive(Clone, Debug, PartialEq)]
pub struct GrwfRecord {
    pub traj: u64,
    pub k: usize,
    /// (label, t, q); None for the cemetery mark.
    pub flash: Option<(usize, f64, usize)>,
}

/// One line of an rGRWf record file.
#[derive(Clone, Debug, PartialEq)]
pub struct RgrwfRecord {
    pub traj: u64,
    pub label: usize,
    pub k: usize,
    pub t: f64,
    pub x: f64,
    pub tau_from_prev: f64,
}

/// Gaps are kept only when they start this many mean gaps before the horizon,
/// so that censoring by the horizon is negligible.
pub const CENSOR_MARGIN: f64 = 10.0;

fn test_fields(prefix: &str, r: &TestResult) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert(format!("{prefix}_statistic"), num(r.statistic));
    m.insert(format!("{prefix}_p"), num(r.p_value));
    m.insert(format!("{prefix}_n"), json!(r.n));
    if r.dof > 0 {
        m.insert(format!("{prefix}_dof"), json!(r.dof));
    }
    m
}

/// Runs a test; small samples either fail the command (`strict`) or leave a note.
fn guarded(
    out: &mut Map<String, Value>,
    prefix: &str,
    strict: bool,
    result: flashpoint::Result<TestResult>,
    op: &'static str,
) -> Result<Option<TestResult>, CliError> {
    match result {
        Ok(r) => {
            out.extend(test_fields(prefix, &r));
            Ok(Some(r))
        }
        Err(flashpoint::Error::InsufficientSample { n, min }) if !strict => {
            out.insert(format!("{prefix}_p"), Value::Null);
            out.insert(
                format!("{prefix}_note"),
                json!(format!("skipped: {n} samples < {min}")),
            );
            Ok(None)
        }
        Err(e) => Err(e).during(op),
    }
}

/// Interarrival times of the flashes, censoring-safe relative to `t_max`.
pub fn interarrivals(records: &[GrwfRecord], t0: f64, t_max: Option<f64>, rate: f64) -> Vec<f64> {
    let cutoff = t_max.map(|tm| tm - CENSOR_MARGIN / rate);
    let mut gaps = Vec::new();
    let mut prev: Option<(u64, f64)> = None;
    for r in records {
        let Some((_, t, _)) = r.flash else { continue };
        let start = match prev {
            Some((traj, tp)) if traj == r.traj => tp,
            _ => t0,
        };
        if cutoff.is_none_or(|c| start <= c) {
            gaps.push(t - start);
        }
        prev = Some((r.traj, t));
    }
    gaps
}

pub struct GrwfContext<'a> {
    pub n_trajectories: usize,
    pub t0: f64,
    pub t_max: Option<f64>,
    pub max_flashes: Option<usize>,
    /// Constant total rate the interarrivals are tested against.
    pub rate: Option<f64>,
    pub cell_probs: Option<&'a [f64]>,
    pub n_q: Option<usize>,
}

pub fn grwf_summary(
    records: &[GrwfRecord],
    ctx: &GrwfContext<'_>,
    strict: bool,
) -> Result<Map<String, Value>, CliError> {
    let mut out = Map::new();
    let mut counts = vec![0u64; ctx.n_trajectories];
    let mut last = vec![ctx.t0; ctx.n_trajectories];
    let mut cemetery = 0usize;
    let mut labels: Vec<u64> = Vec::new();
    for r in records {
        let idx = r.traj as usize;
        if idx >= ctx.n_trajectories {
            return Err(CliError::Config(format!(
                "record for trajectory {} beyond the {} declared",
                r.traj, ctx.n_trajectories
            )));
        }
        match r.flash {
            Some((label, t, _)) => {
                counts[idx] += 1;
                last[idx] = t;
                if labels.len() <= label {
                    labels.resize(label + 1, 0);
                }
                labels[label] += 1;
            }
            None => cemetery += 1,
        }
    }
    let total: u64 = counts.iter().sum();
    if strict && records.is_empty() {
        return Err(CliError::Insufficient(format!(
            "no flash records (need at least {MIN_SAMPLE})"
        )));
    }
    out.insert("trajectories".into(), json!(ctx.n_trajectories));
    out.insert("flashes_total".into(), json!(total));
    out.insert("cemetery_count".into(), json!(cemetery));
    out.insert("flashes_per_label".into(), json!(labels));
    // Observed time: to the horizon unless the trajectory stopped early.
    let observed: f64 = (0..ctx.n_trajectories)
        .map(|i| {
            let full = ctx.max_flashes.is_some_and(|m| counts[i] as usize >= m);
            match ctx.t_max {
                Some(tm) if !full => tm - ctx.t0,
                _ => last[i] - ctx.t0,
            }
        })
        .sum();
    out.insert("observed_time".into(), num(observed));
    out.insert(
        "empirical_rate".into(),
        num(if observed > 0.0 {
            total as f64 / observed
        } else {
            f64::NAN
        }),
    );
    out.insert("expected_rate".into(), ctx.rate.map_or(Value::Null, num));

    match stats::count_summary(&counts) {
        Ok(c) => {
            out.insert("count_mean".into(), num(c.mean));
            out.insert("count_variance".into(), num(c.variance));
            out.insert("count_dispersion".into(), num(c.dispersion));
        }
        Err(flashpoint::Error::InsufficientSample { n, min }) if !strict => {
            out.insert(
                "count_note".into(),
                json!(format!("skipped: {n} trajectories < {min}")),
            );
        }
        Err(e) => return Err(e).during("count summary"),
    }

    if let Some(rate) = ctx.rate {
        let gaps = interarrivals(records, ctx.t0, ctx.t_max, rate);
        guarded(
            &mut out,
            "ks_exponential",
            strict,
            stats::ks_exponential(&gaps, rate),
            "KS exponential test",
        )?;
    } else {
        out.insert("ks_exponential_p".into(), Value::Null);
        out.insert(
            "ks_exponential_note".into(),
            json!("model has no constant total rate"),
        );
    }

    if let Some(probs) = ctx.cell_probs {
        let n_cells = probs.len();
        let mut observed = vec![0u64; n_cells];
        for r in records {
            if let Some((label, _, q)) = r.flash {
                let cell = label * ctx.n_q.unwrap_or(n_cells) + q;
                if cell >= n_cells {
                    return Err(CliError::Config(format!(
                        "stats.cell_probs has {n_cells} cells, record has cell {cell}"
                    )));
                }
                observed[cell] += 1;
            }
        }
        guarded(
            &mut out,
            "chi_square_cells",
            strict,
            stats::chi_square_gof(&observed, probs),
            "chi-square cell test",
        )?;
    }
    Ok(out)
}

/// Category of a first flash: tau quantile bin times the side of the seed it fell on.
fn first_flash_category(edges: &[f64], seed_x: f64, r: &RgrwfRecord) -> usize {
    2 * stats::bin_index(edges, r.tau_from_prev) + usize::from(r.x >= seed_x)
}

pub const INDEPENDENCE_TAU_BINS: usize = 3;

/// Contingency table of the first flashes of labels 0 and 1 over trajectories.
pub fn first_flash_table(records: &[RgrwfRecord], seeds: &[SpacetimePoint]) -> Vec<Vec<u64>> {
    let firsts = |label: usize| -> Vec<&RgrwfRecord> {
        records
            .iter()
            .filter(|r| r.label == label && r.k == 1)
            .collect()
    };
    let (a, b) = (firsts(0), firsts(1));
    let taus: Vec<f64> = a.iter().chain(&b).map(|r| r.tau_from_prev).collect();
    if taus.is_empty() {
        return Vec::new();
    }
    let edges = stats::quantile_edges(&taus, INDEPENDENCE_TAU_BINS);
    let n_cat = 2 * INDEPENDENCE_TAU_BINS;
    let mut table = vec![vec![0u64; n_cat]; n_cat];
    let mut by_traj: std::collections::BTreeMap<u64, (Option<usize>, Option<usize>)> =
        Default::default();
    for r in &a {
        by_traj.entry(r.traj).or_default().0 = Some(first_flash_category(&edges, seeds[0].x, r));
    }
    for r in &b {
        by_traj.entry(r.traj).or_default().1 = Some(first_flash_category(&edges, seeds[1].x, r));
    }
    for (ca, cb) in by_traj.values() {
        if let (Some(i), Some(j)) = (ca, cb) {
            table[*i][*j] += 1;
        }
    }
    table
}

/// Fraction of flashes strictly inside the open future cone of their label's previous flash.
pub fn causal_fraction(records: &[RgrwfRecord], seeds: &[SpacetimePoint]) -> (usize, usize) {
    let mut prev: std::collections::HashMap<(u64, usize), SpacetimePoint> = Default::default();
    let mut ok = 0;
    for r in records {
        let p = SpacetimePoint::new(r.t, r.x);
        let before = prev
            .get(&(r.traj, r.label))
            .copied()
            .unwrap_or(seeds[r.label]);
        if in_open_future(&p, &before) {
            ok += 1;
        }
        prev.insert((r.traj, r.label), p);
    }
    (ok, records.len())
}

pub fn rgrwf_summary(
    records: &[RgrwfRecord],
    seeds: &[SpacetimePoint],
    lambda: f64,
    strict: bool,
) -> Result<Map<String, Value>, CliError> {
    if strict && records.is_empty() {
        return Err(CliError::Insufficient(format!(
            "no flash records (need at least {MIN_SAMPLE})"
        )));
    }
    if let Some(r) = records.iter().find(|r| r.label >= seeds.len()) {
        return Err(CliError::Config(format!(
            "record has label {} but only {} seeds are configured",
            r.label,
            seeds.len()
        )));
    }
    let mut out = Map::new();
    out.insert("flashes_total".into(), json!(records.len()));
    let (ok, n) = causal_fraction(records, seeds);
    out.insert("causal_flashes".into(), json!(ok));
    out.insert(
        "causal_fraction".into(),
        num(if n > 0 {
            ok as f64 / n as f64
        } else {
            f64::NAN
        }),
    );
    let taus: Vec<f64> = records.iter().map(|r| r.tau_from_prev).collect();
    guarded(
        &mut out,
        "ks_exponential",
        strict,
        stats::ks_exponential(&taus, lambda),
        "KS exponential test on tau",
    )?;
    if seeds.len() >= 2 {
        let table = first_flash_table(records, seeds);
        guarded(
            &mut out,
            "independence",
            strict,
            stats::chi_square_independence(&table),
            "independence test",
        )?;
    }
    Ok(out)
}

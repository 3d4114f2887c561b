//! The subcommands. Each returns the JSON it reports and writes its artifacts.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use flashpoint::gauge::{apply_gauge, heisenberg_plus_picture, square_root_picture, GaugeFamily};
use flashpoint::grwf::sampler::trajectory_rng;
use flashpoint::grwf::{corpus, simulate_batch, Flash, FlashRecord, GrwfModel, StopRule};
use flashpoint::opcore::{self, CMat};
use flashpoint::povm::{
    check_consistency, check_normalization, density_from_model, HistoryDensity, Quadrature,
};
use flashpoint::reconstruct::{reconstruct_heisenberg_plus, reconstruct_sqrt_plus};
use flashpoint::rgrwf::ck::{ck_lattice_simulate, enumerate_distribution, CkField, Order};
use flashpoint::rgrwf::sampler::sample_rgrwf_batch;
use flashpoint::stats;

use crate::analysis::{self, GrwfContext, GrwfRecord, RgrwfRecord};
use crate::config::RunConfig;
use crate::error::{CliError, Context};
use crate::models;
use crate::output::{csv_float, num, Artifacts};

fn stop_rule(cfg: &RunConfig) -> StopRule {
    StopRule {
        max_flashes: cfg.stop.max_flashes,
        t_max: cfg.stop.t_max,
    }
}

fn grwf_record_value(r: &GrwfRecord) -> Value {
    match r.flash {
        Some((label, t, q)) => {
            json!({ "traj": r.traj, "k": r.k, "label": label, "t": num(t), "q": q })
        }
        None => json!({ "traj": r.traj, "k": r.k, "q": "cemetery" }),
    }
}

fn rgrwf_record_value(r: &RgrwfRecord) -> Value {
    json!({ "traj": r.traj, "label": r.label, "k": r.k, "t": num(r.t), "x": num(r.x), "tau_from_prev": num(r.tau_from_prev) })
}

pub fn simulate(cfg: &RunConfig) -> Result<Value, CliError> {
    let model = models::build_model(&cfg.model)?;
    let psi0 = models::initial_state(&model, &cfg.stop)?;
    let trajs = simulate_batch(
        &model,
        &psi0,
        cfg.t0,
        stop_rule(cfg),
        cfg.seed,
        cfg.trajectories,
    )
    .during("flash sampler")?;
    // Rounded once, so the summary sees exactly what the record file holds.
    let mut records = Vec::new();
    for tr in &trajs {
        for (k, rec) in tr.flashes.iter().enumerate() {
            let flash = match rec {
                FlashRecord::Flash(z) => Some((z.label, crate::output::round12(z.t), z.q)),
                FlashRecord::Cemetery => None,
            };
            records.push(GrwfRecord {
                traj: tr.stream,
                k: k + 1,
                flash,
            });
        }
    }
    let ctx = GrwfContext {
        n_trajectories: cfg.trajectories,
        t0: cfg.t0,
        t_max: cfg.stop.t_max,
        max_flashes: cfg.stop.max_flashes,
        rate: model.lambda_const,
        cell_probs: None,
        n_q: Some(model.space.n_q()),
    };
    let mut body = analysis::grwf_summary(&records, &ctx, false)?;
    body.insert("hilbert_dim".into(), json!(model.dim));
    let out = Artifacts::create(&cfg.output.dir)?;
    out.write_jsonl(
        "records.jsonl",
        &records.iter().map(grwf_record_value).collect::<Vec<_>>(),
    )?;
    if cfg.output.csv {
        let rows: Vec<Vec<String>> = records
            .iter()
            .filter_map(|r| {
                r.flash.map(|(label, t, q)| {
                    vec![
                        r.traj.to_string(),
                        r.k.to_string(),
                        label.to_string(),
                        csv_float(t),
                        q.to_string(),
                        csv_float(model.space.grid[q]),
                    ]
                })
            })
            .collect();
        out.write_csv("flashes.csv", &["traj", "k", "label", "t", "q", "x"], &rows)?;
    }
    out.write_summary("summary.json", "simulate", cfg, body.clone())?;
    Ok(Value::Object(body))
}

pub fn rgrwf(cfg: &RunConfig) -> Result<Value, CliError> {
    let r = &cfg.rgrwf;
    let model = models::rgrwf_model(r)?;
    let lattice = model.lattice().building("rgrwf lattice")?;
    let seeds = models::seeds(r, cfg.t0);
    let packets = models::packets(r, &seeds);
    let state = models::product_state(&lattice, &packets)?;
    let trajs = sample_rgrwf_batch(
        &model,
        &lattice,
        cfg.t0,
        &seeds,
        &state,
        r.n_per_label,
        cfg.seed,
        cfg.trajectories,
    )
    .during("relativistic flash sampler")?;
    let mut records = Vec::new();
    for (j, tr) in trajs.iter().enumerate() {
        for f in &tr.flashes {
            records.push(RgrwfRecord {
                traj: j as u64,
                label: f.label,
                k: f.k,
                t: crate::output::round12(f.point.t),
                x: crate::output::round12(f.point.x),
                tau_from_prev: crate::output::round12(f.tau),
            });
        }
    }
    let body = analysis::rgrwf_summary(&records, &seeds, model.lambda, false)?;

    let max = |f: &dyn Fn(&flashpoint::rgrwf::sampler::SamplerDiagnostics) -> f64| {
        trajs.iter().map(|t| f(&t.diagnostics)).fold(0.0, f64::max)
    };
    let mut diag = Map::new();
    diag.insert(
        "lattice".into(),
        json!({
            "dx": num(lattice.dx), "dt": num(lattice.dt), "n_x": lattice.n_x, "half_width": num(model.half_width),
            "window": num(model.window), "max_duration": num(model.max_duration), "level": r.level,
        }),
    );
    diag.insert(
        "max_boundary_mass".into(),
        num(max(&|d| d.max_boundary_mass)),
    );
    diag.insert("max_edge_mass".into(), num(max(&|d| d.max_edge_mass)));
    diag.insert(
        "trajectories_with_boundary_mass_above_1e-4".into(),
        json!(trajs
            .iter()
            .filter(|t| t.diagnostics.max_boundary_mass > 1e-4)
            .count()),
    );
    diag.insert(
        "rejected_shells".into(),
        json!(trajs
            .iter()
            .map(|t| t.diagnostics.rejected_shells)
            .sum::<usize>()),
    );
    diag.insert(
        "capped_shells".into(),
        json!(trajs
            .iter()
            .map(|t| t.diagnostics.capped_shells)
            .sum::<usize>()),
    );
    diag.insert(
        "seeds".into(),
        json!(seeds
            .iter()
            .map(|s| [num(s.t), num(s.x)])
            .collect::<Vec<_>>()),
    );

    let out = Artifacts::create(&cfg.output.dir)?;
    out.write_jsonl(
        "records.jsonl",
        &records.iter().map(rgrwf_record_value).collect::<Vec<_>>(),
    )?;
    out.write_summary("diagnostics.json", "rgrwf", cfg, diag.clone())?;
    if cfg.output.csv {
        let rows: Vec<Vec<String>> = records
            .iter()
            .map(|r| {
                vec![
                    r.traj.to_string(),
                    r.label.to_string(),
                    r.k.to_string(),
                    csv_float(r.t),
                    csv_float(r.x),
                    csv_float(r.tau_from_prev),
                ]
            })
            .collect();
        out.write_csv(
            "spacetime.csv",
            &["traj", "label", "k", "t", "x", "tau_from_prev"],
            &rows,
        )?;
    }
    let mut summary = body;
    summary.insert("diagnostics".into(), Value::Object(diag));
    out.write_summary("summary.json", "rgrwf", cfg, summary.clone())?;
    Ok(Value::Object(summary))
}

fn histories(
    model: &GrwfModel,
    depth: usize,
    per_depth: usize,
    t0: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Flash>> {
    (0..=depth)
        .flat_map(|n| std::iter::repeat_n(n, per_depth))
        .map(|n| corpus::random_history(model, n, t0, rng))
        .collect()
}

pub fn check_povm(cfg: &RunConfig) -> Result<Value, CliError> {
    let model = models::build_model(&cfg.model)?;
    let n = cfg.check.n;
    let q = Quadrature::level(cfg.quadrature_level);
    let norm = check_normalization(&model, n, q, cfg.t0).during("POVM normalization")?;
    let by_level = (1..=3)
        .map(|l| check_normalization(&model, n, Quadrature::level(l), cfg.t0).map(|r| r.deviation))
        .collect::<flashpoint::Result<Vec<f64>>>()
        .during("POVM normalization refinement")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hs: Vec<Vec<Flash>> = (0..cfg.check.histories)
        .map(|_| corpus::random_history(&model, n - 1, cfg.t0, &mut rng))
        .collect();
    let cons = check_consistency(
        &density_from_model(&model, n, cfg.t0),
        &density_from_model(&model, n - 1, cfg.t0),
        q,
        &hs,
    )
    .during("POVM consistency")?;
    let mut body = Map::new();
    body.insert("n".into(), json!(n));
    body.insert("quadrature_level".into(), json!(cfg.quadrature_level));
    body.insert("normalization_dev".into(), num(norm.deviation));
    body.insert(
        "normalization_dev_by_level".into(),
        json!(by_level.iter().map(|d| num(*d)).collect::<Vec<_>>()),
    );
    body.insert("consistency_dev".into(), num(cons.deviation));
    body.insert("consistency_histories".into(), json!(cons.histories));
    Artifacts::create(&cfg.output.dir)?.write_summary(
        "povm.json",
        "check povm",
        cfg,
        body.clone(),
    )?;
    Ok(Value::Object(body))
}

fn density_deviation(
    a: &GrwfModel,
    b: &GrwfModel,
    hs: &[Vec<Flash>],
    t0: f64,
    frame: Option<&CMat>,
) -> flashpoint::Result<f64> {
    hs.par_iter()
        .map(|f| {
            let mut e = density_from_model(a, f.len(), t0).eval(f)?;
            if let Some(u) = frame {
                e = u.adjoint() * e * u;
            }
            let eb = density_from_model(b, f.len(), t0).eval(f)?;
            Ok(opcore::max_abs_diff(&e, &eb))
        })
        .try_reduce(|| 0.0, |x, y| Ok(f64::max(x, y)))
}

pub fn check_gauge(cfg: &RunConfig) -> Result<Value, CliError> {
    let model = models::build_model(&cfg.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hs = histories(
        &model,
        cfg.check.depth,
        cfg.check.histories,
        cfg.t0,
        &mut rng,
    );
    let u = corpus::random_unitary(model.dim, &mut rng);
    let mut gauges = Map::new();
    let mut report = |name: &str,
                      result: flashpoint::Result<(GrwfModel, Option<CMat>)>|
     -> Result<(), CliError> {
        let entry = match result {
            Ok((gm, frame)) => {
                json!({ "max_density_dev": num(density_deviation(&model, &gm, &hs, cfg.t0, frame.as_ref()).during("gauge density comparison")?) })
            }
            Err(e @ flashpoint::Error::Singular { .. }) => {
                json!({ "max_density_dev": null, "note": format!("skipped: {e}") })
            }
            Err(e) => return Err(e).during("gauge transformation"),
        };
        gauges.insert(name.into(), entry);
        Ok(())
    };
    // U(t0) = U for the constant gauge, so densities are compared in the rotated frame.
    report(
        "constant-unitary",
        GaugeFamily::constant(u.clone())
            .and_then(|g| apply_gauge(&model, &g))
            .map(|m| (m, Some(u.clone()))),
    )?;
    report(
        "heisenberg",
        apply_gauge(&model, &GaugeFamily::heisenberg(&model, cfg.t0)).map(|m| (m, None)),
    )?;
    report(
        "square-root",
        square_root_picture(&model, cfg.t0).map(|m| (m, None)),
    )?;
    report(
        "heisenberg-plus",
        heisenberg_plus_picture(&model, cfg.t0).map(|m| (m, None)),
    )?;
    let mut body = Map::new();
    body.insert("histories".into(), json!(hs.len()));
    body.insert("depth".into(), json!(cfg.check.depth));
    body.insert("gauges".into(), Value::Object(gauges));
    Artifacts::create(&cfg.output.dir)?.write_summary(
        "gauge.json",
        "check gauge",
        cfg,
        body.clone(),
    )?;
    Ok(Value::Object(body))
}

fn min_eig_over(ops: impl Iterator<Item = flashpoint::Result<CMat>>) -> flashpoint::Result<f64> {
    ops.map(|c| c.map(|c| opcore::min_eigenvalue(&opcore::hermitian_part(&c))))
        .try_fold(f64::INFINITY, |a, b| b.map(|b| a.min(b)))
}

pub fn reconstruct(cfg: &RunConfig, roundtrip: bool) -> Result<Value, CliError> {
    let model = models::build_model(&cfg.model)?;
    let depth = cfg.check.depth;
    let densities = |m: &GrwfModel| -> Vec<HistoryDensity> {
        (0..=depth + 1)
            .map(|n| density_from_model(m, n, cfg.t0))
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hs = histories(&model, depth, cfg.check.histories, cfg.t0, &mut rng);
    let sqrt_plus =
        reconstruct_sqrt_plus(densities(&model)).during("square-root-plus reconstruction")?;
    let last = |f: &[Flash]| f.last().map_or(cfg.t0, |z| z.t);
    let min_c = min_eig_over(
        hs.iter()
            .filter(|f| !f.is_empty())
            .map(|f| sqrt_plus.c(&f[..f.len() - 1], f[f.len() - 1])),
    )
    .during("square-root-plus collapse operators")?;
    let min_w = min_eig_over(hs.iter().map(|f| sqrt_plus.w(f, last(f) + 0.3)))
        .during("square-root-plus propagators")?;
    let mut body = Map::new();
    body.insert("histories".into(), json!(hs.len()));
    body.insert("depth".into(), json!(depth));
    body.insert("sqrt_plus_min_eigenvalue_c".into(), num(min_c));
    body.insert("sqrt_plus_min_eigenvalue_w".into(), num(min_w));
    if roundtrip {
        body.insert(
            "sqrt_plus_roundtrip_dev".into(),
            num(sqrt_plus
                .roundtrip_deviation(&hs)
                .during("square-root-plus round trip")?),
        );
        let hp = reconstruct_heisenberg_plus(densities(&model), cfg.check.grid_step)
            .during("Heisenberg-plus reconstruction")?;
        body.insert(
            "heisenberg_plus_roundtrip_dev".into(),
            num(hp
                .roundtrip_deviation(&hs)
                .during("Heisenberg-plus round trip")?),
        );
    }
    Artifacts::create(&cfg.output.dir)?.write_summary(
        "reconstruct.json",
        "reconstruct",
        cfg,
        body.clone(),
    )?;
    Ok(Value::Object(body))
}

/// Batch `batch` of the run uses streams batch·2³² + j, so batches never share a stream.
pub fn ck_batch(
    t_max: usize,
    order: Order,
    seed: u64,
    batch: u64,
    runs: usize,
) -> flashpoint::Result<Vec<CkField>> {
    (0..runs as u64)
        .into_par_iter()
        .map(|j| ck_lattice_simulate(t_max, order, &mut trajectory_rng(seed, (batch << 32) | j)))
        .collect()
}

/// Observed counts over the enumerated consistent fields, plus a spill cell for anything else.
pub fn ck_counts(fields: &[CkField], support: &[(u64, f64)]) -> (Vec<u64>, Vec<f64>) {
    let mut counts = vec![0u64; support.len() + 1];
    let mut probs: Vec<f64> = support.iter().map(|(_, p)| *p).collect();
    probs.push(0.0);
    for f in fields {
        let idx = support
            .binary_search_by_key(&f.code(), |(c, _)| *c)
            .unwrap_or(support.len());
        counts[idx] += 1;
    }
    (counts, probs)
}

pub fn ck_demo(cfg: &RunConfig) -> Result<Value, CliError> {
    let order = models::order(cfg.ck.order);
    let fields =
        ck_batch(cfg.ck.t_max, order, cfg.seed, 0, cfg.trajectories).during("ck lattice")?;
    let violations = fields.iter().filter(|f| !f.satisfies_triples()).count();
    let mut comparison = Vec::new();
    for t in 1..=cfg.ck.compare_t_max {
        let support = enumerate_distribution(t).during("ck enumeration")?;
        let mut entry = Map::new();
        entry.insert("t_max".into(), json!(t));
        let mut tables = Vec::new();
        for (i, (name, o)) in [
            ("left_first", Order::LeftFirst),
            ("right_first", Order::RightFirst),
        ]
        .into_iter()
        .enumerate()
        {
            let batch = ck_batch(
                t,
                o,
                cfg.seed,
                1 + 2 * t as u64 + i as u64,
                cfg.trajectories,
            )
            .during("ck lattice")?;
            let (counts, probs) = ck_counts(&batch, &support);
            let r = stats::chi_square_gof(&counts, &probs).during("ck chi-square")?;
            entry.insert(format!("{name}_chi_square_p"), num(r.p_value));
            entry.insert(format!("{name}_chi_square_statistic"), num(r.statistic));
            tables.push(counts);
        }
        let r = stats::chi_square_independence(&tables).during("ck order homogeneity")?;
        entry.insert("order_homogeneity_p".into(), num(r.p_value));
        comparison.push(Value::Object(entry));
    }
    let out = Artifacts::create(&cfg.output.dir)?;
    let recs: Vec<Value> = fields
        .iter()
        .enumerate()
        .map(|(j, f)| json!({ "traj": j, "code": f.code(), "rows": f.rows }))
        .collect();
    out.write_jsonl("records.jsonl", &recs)?;
    let mut body = Map::new();
    body.insert("runs".into(), json!(fields.len()));
    body.insert("t_max".into(), json!(cfg.ck.t_max));
    body.insert("triple_violations".into(), json!(violations));
    body.insert("order_comparison".into(), Value::Array(comparison));
    out.write_summary("summary.json", "ck-demo", cfg, body.clone())?;
    Ok(Value::Object(body))
}

enum Parsed {
    Grwf(Vec<GrwfRecord>),
    Rgrwf(Vec<RgrwfRecord>),
}

fn field<'a>(v: &'a Value, key: &str, line: usize) -> Result<&'a Value, CliError> {
    v.get(key)
        .ok_or_else(|| CliError::Config(format!("records line {line}: missing `{key}`")))
}

fn as_u64(v: &Value, key: &str, line: usize) -> Result<u64, CliError> {
    field(v, key, line)?
        .as_u64()
        .ok_or_else(|| CliError::Config(format!("records line {line}: `{key}` is not an integer")))
}

fn as_f64(v: &Value, key: &str, line: usize) -> Result<f64, CliError> {
    field(v, key, line)?
        .as_f64()
        .ok_or_else(|| CliError::Config(format!("records line {line}: `{key}` is not a number")))
}

fn parse_records(path: &Path) -> Result<Parsed, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut grwf = Vec::new();
    let mut rel = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let n = i + 1;
        let v: Value = serde_json::from_str(line)
            .map_err(|e| CliError::Config(format!("records line {n}: {e}")))?;
        if v.get("tau_from_prev").is_some() {
            rel.push(RgrwfRecord {
                traj: as_u64(&v, "traj", n)?,
                label: as_u64(&v, "label", n)? as usize,
                k: as_u64(&v, "k", n)? as usize,
                t: as_f64(&v, "t", n)?,
                x: as_f64(&v, "x", n)?,
                tau_from_prev: as_f64(&v, "tau_from_prev", n)?,
            });
        } else {
            let q = field(&v, "q", n)?;
            let flash = if q.as_str() == Some("cemetery") {
                None
            } else {
                let q = q.as_u64().ok_or_else(|| {
                    CliError::Config(format!(
                        "records line {n}: `q` is neither a cell nor \"cemetery\""
                    ))
                })?;
                Some((
                    as_u64(&v, "label", n)? as usize,
                    as_f64(&v, "t", n)?,
                    q as usize,
                ))
            };
            grwf.push(GrwfRecord {
                traj: as_u64(&v, "traj", n)?,
                k: as_u64(&v, "k", n)? as usize,
                flash,
            });
        }
    }
    match (grwf.is_empty(), rel.is_empty()) {
        (_, true) => Ok(Parsed::Grwf(grwf)),
        (true, false) => Ok(Parsed::Rgrwf(rel)),
        (false, false) => Err(CliError::Config("records mix GRWf and rGRWf lines".into())),
    }
}

pub fn stats_suite(
    cfg: &RunConfig,
    input: Option<&Path>,
    rate: Option<f64>,
) -> Result<Value, CliError> {
    let path = input.or(cfg.stats.input.as_deref()).ok_or_else(|| {
        CliError::Config("stats.input: missing (give it in the config or with --input)".into())
    })?;
    let rate = rate.or(cfg.stats.rate);
    let mut body = match parse_records(path)? {
        Parsed::Grwf(records) => {
            // Trajectories without any line are invisible here.
            let n_traj = records
                .iter()
                .map(|r| r.traj as usize + 1)
                .max()
                .unwrap_or(0);
            let ctx = GrwfContext {
                n_trajectories: n_traj,
                t0: cfg.t0,
                t_max: cfg.stop.t_max,
                max_flashes: cfg.stop.max_flashes,
                rate,
                cell_probs: cfg.stats.cell_probs.as_deref(),
                n_q: None,
            };
            let mut b = analysis::grwf_summary(&records, &ctx, true)?;
            b.insert("format".into(), json!("grwf"));
            b
        }
        Parsed::Rgrwf(records) => {
            let seeds = models::seeds(&cfg.rgrwf, cfg.t0);
            let mut b =
                analysis::rgrwf_summary(&records, &seeds, rate.unwrap_or(cfg.rgrwf.lambda), true)?;
            b.insert("format".into(), json!("rgrwf"));
            b
        }
    };
    body.insert("input".into(), json!(path.display().to_string()));
    Artifacts::create(&cfg.output.dir)?.write_summary("stats.json", "stats", cfg, body.clone())?;
    Ok(Value::Object(body))
}

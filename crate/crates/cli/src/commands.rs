use anyhow::{bail, Result};
use clap::Subcommand;
use hypojump::conditions::{self, BoxRegion, ConditionReport};
use hypojump::experiments::{
    charfn_decay, eigenvalue_tail_experiment, exp_moment_experiment, simulate_paths, void_probability_annulus,
    ExperimentConfig,
};
use hypojump::girsanov::{
    ibp_limit_check, law_equality_test, weight_moments, LawFunction, LawReport, PerturbationSpec, WeightVariant, Xi,
};
use hypojump::malliavin::{ibp_residual, PathSetup, TestFunction};
use hypojump::stats::{combined_stderr, z_score};
use hypojump::Executor;
use serde_json::json;

use crate::config::LoadedConfig;
use crate::output::{Cell, Check, Outcome, Table};

/// Threshold for every z-score check.
const SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate paths and write per-path Malliavin summaries.
    Simulate,
    /// Tail of the smallest eigenvalue of the Malliavin matrix.
    Tail,
    /// Integration-by-parts identity for f(x) = cos<k, x>.
    Ibp,
    /// Girsanov weight moments, law equality and the mean-square limit.
    Girsanov,
    /// Kalman rank and Hörmander infimum of the configured model.
    Conditions,
    /// Empirical characteristic function of X_T along directions.
    Charfn,
    /// Exponential moments under sample doubling.
    Moments,
    /// Probability of no jumps in an annulus during a time window.
    Void,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Tail => "tail",
            Command::Ibp => "ibp",
            Command::Girsanov => "girsanov",
            Command::Conditions => "conditions",
            Command::Charfn => "charfn",
            Command::Moments => "moments",
            Command::Void => "void",
        }
    }

    pub fn run(self, cfg: &LoadedConfig, exec: &Executor) -> Result<Outcome> {
        let exp = cfg.experiment();
        exp.validate()?;
        match self {
            Command::Simulate => simulate(&exp, exec),
            Command::Tail => tail(&exp, exec),
            Command::Ibp => ibp(cfg, &exp, exec),
            Command::Girsanov => girsanov(cfg, &exp, exec),
            Command::Conditions => conditions_cmd(cfg, &exp),
            Command::Charfn => charfn(cfg, &exp, exec),
            Command::Moments => moments(cfg, &exp, exec),
            Command::Void => void(cfg, &exp, exec),
        }
    }
}

fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn joined(v: &Option<Vec<f64>>) -> String {
    v.as_ref().map_or(String::new(), |v| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(";"))
}

fn simulate(exp: &ExperimentConfig, exec: &Executor) -> Result<Outcome> {
    let d = exp.measure.dim;
    let summaries = simulate_paths(exp, exec)?;
    let mut header = vec!["index".to_string(), "jumps".into()];
    header.extend(indexed("x", d));
    header.push("lambda_min".into());
    header.extend(indexed("skorohod", d));
    header.extend(["h_sum".into(), "literal_sum".into()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new("paths", &header);
    let mut finite = true;
    for s in &summaries {
        let mut row: Vec<Cell> = vec![s.index.into(), s.jumps.into()];
        row.extend(s.x.iter().map(|&v| Cell::from(v)));
        row.push(s.lambda_min.into());
        row.extend(s.skorohod.iter().map(|&v| Cell::from(v)));
        row.extend([s.h_sum.into(), s.literal_sum.into()]);
        finite &= s.x.iter().chain(&s.skorohod).chain([&s.lambda_min, &s.h_sum]).all(|v| v.is_finite());
        table.push(row);
    }
    let mean_jumps = summaries.iter().map(|s| s.jumps as f64).sum::<f64>() / summaries.len() as f64;
    Ok(Outcome {
        tables: vec![table],
        checks: vec![Check::new("all_values_finite", finite)],
        report: json!({ "paths": summaries.len(), "mean_jumps": mean_jumps }),
    })
}

fn tail(exp: &ExperimentConfig, exec: &Executor) -> Result<Outcome> {
    let rep = eigenvalue_tail_experiment(exp, exec)?;
    let mut est = Table::new("tail", &["epsilon", "count", "probability", "ci_lo", "ci_hi", "in_validity"]);
    for e in &rep.estimates {
        est.push(vec![e.epsilon.into(), e.count.into(), e.probability.into(), e.ci_lo.into(), e.ci_hi.into(), e.in_validity.into()]);
    }
    let mut slopes = Table::new("tail_slopes", &["eps_hi", "eps_lo", "slope", "stderr"]);
    for s in &rep.slopes {
        slopes.push(vec![s.eps_hi.into(), s.eps_lo.into(), s.slope.into(), s.stderr.into()]);
    }
    let checks = if rep.rank_deficient {
        let all_one = rep.estimates.iter().all(|e| e.probability == 1.0);
        vec![Check::new("rank_deficient_probability_is_one", all_one)]
    } else {
        let fit_c = rep.fit.as_ref().map_or(f64::NAN, |f| f.c);
        vec![
            Check::new("monotone_in_epsilon", rep.monotone),
            match rep.slopes_increasing {
                Some(ok) => Check::new("local_slopes_increasing", ok),
                None => Check::new("local_slopes_increasing", false).note("too few events for a slope test"),
            },
            Check::new("fitted_c_positive", rep.fitted_c_positive()).value(fit_c, 0.0),
        ]
    };
    Ok(Outcome { tables: vec![est, slopes], checks, report: serde_json::to_value(&rep)? })
}

fn ibp(cfg: &LoadedConfig, exp: &ExperimentConfig, exec: &Executor) -> Result<Outcome> {
    let model = exp.build_model()?;
    let measure = exp.measure.build()?;
    let setup =
        PathSetup { model: &model, measure: &measure, x0: exp.initial_state(), horizon: exp.horizon, max_step: exp.max_step };
    let f = TestFunction::Cosine(cfg.config.ibp.k.clone());
    let results = ibp_residual(&setup, &f, exp.paths, &exp.seeds().derive("ibp"), exec)?;
    let mut table = Table::new(
        "ibp",
        &["direction", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "residual", "combined_stderr", "z_combined", "z_paired"],
    );
    let mut checks = Vec::new();
    for r in &results {
        let se = combined_stderr(r.lhs.stderr, r.rhs.stderr);
        let z = z_score(r.residual, se);
        table.push(vec![
            (r.direction + 1).into(),
            r.lhs.mean.into(),
            r.lhs.stderr.into(),
            r.rhs.mean.into(),
            r.rhs.stderr.into(),
            r.residual.into(),
            se.into(),
            z.into(),
            r.z.into(),
        ]);
        checks.push(Check::new(&format!("ibp_direction_{}", r.direction + 1), z.abs() <= SIGMAS).value(z.abs(), SIGMAS));
    }
    Ok(Outcome { tables: vec![table], checks, report: serde_json::to_value(&results)? })
}

fn law_rows(table: &mut Table, rep: &LawReport, label: &str) {
    for r in &rep.rows {
        table.push(vec![
            label.into(),
            r.function.clone().into(),
            r.weighted.mean.into(),
            r.weighted.stderr.into(),
            r.perturbed.mean.into(),
            r.perturbed.stderr.into(),
            r.z.into(),
        ]);
    }
}

fn girsanov(cfg: &LoadedConfig, exp: &ExperimentConfig, exec: &Executor) -> Result<Outcome> {
    let g = &cfg.config.girsanov;
    let measure = exp.measure.build()?;
    let spec = PerturbationSpec::new(Xi::Constant(g.xi.clone()), g.epsilon)?.with_convention(cfg.convention());
    let seeds = exp.seeds().derive("girsanov");
    if g.times.iter().any(|&t| !(t > 0.0 && t <= exp.horizon)) {
        bail!(hypojump::Error::Config(format!("girsanov.times must lie in (0, {}]", exp.horizon)));
    }
    let moments = weight_moments(&measure, &spec, &g.times, exp.paths, &seeds, exec)?;
    let fns = LawFunction::catalog(exp.measure.dim);
    let law = law_equality_test(&measure, &spec, exp.horizon, exp.paths, &fns, WeightVariant::Full, &seeds, exec)?;
    let omitted = law_equality_test(&measure, &spec, exp.horizon, exp.paths, &fns, WeightVariant::Omitted, &seeds, exec)?;
    let limit = ibp_limit_check(&measure, &spec, &g.eps_sequence, exp.horizon, exp.paths, &seeds, exec)?;

    let mut weights = Table::new("girsanov_weights", &["t", "mean", "stderr", "z", "second_half", "second_full", "min_weight"]);
    let mut checks = Vec::new();
    for m in &moments {
        let z = m.martingale_z();
        weights.push(vec![
            m.t.into(),
            m.first.mean.into(),
            m.first.stderr.into(),
            z.into(),
            m.second_half.into(),
            m.second_full.into(),
            m.min_weight.into(),
        ]);
        checks.push(Check::new(&format!("mean_weight_is_one_t{}", m.t), z.abs() <= SIGMAS).value(z.abs(), SIGMAS));
    }
    let mut law_table =
        Table::new("girsanov_law", &["variant", "function", "weighted", "weighted_stderr", "perturbed", "perturbed_stderr", "z"]);
    law_rows(&mut law_table, &law, "full");
    law_rows(&mut law_table, &omitted, "omitted");
    let mut limit_table = Table::new("girsanov_limit", &["epsilon", "gap", "gap_stderr"]);
    for r in &limit.rows {
        limit_table.push(vec![r.epsilon.into(), r.gap.mean.into(), r.gap.stderr.into()]);
    }
    checks.push(Check::new("law_equality", law.within(SIGMAS)).value(law.max_abs_z(), SIGMAS));
    checks.push(
        Check::new("omitted_weight_detected", omitted.max_abs_z() > SIGMAS)
            .value(omitted.max_abs_z(), SIGMAS)
            .note("negative control: z must exceed the threshold"),
    );
    checks.push(Check::new("mean_square_gap_decreasing", limit.monotone));
    Ok(Outcome {
        tables: vec![weights, law_table, limit_table],
        checks,
        report: json!({ "weights": moments, "law": law, "omitted": omitted, "limit": limit }),
    })
}

fn condition_row(table: &mut Table, rep: &ConditionReport) {
    table.push(vec![
        format!("{:?}", rep.kind).to_lowercase().into(),
        rep.value.into(),
        rep.passed.into(),
        joined(&rep.witness).into(),
        joined(&rep.point).into(),
        rep.note.clone().into(),
    ]);
}

fn conditions_cmd(cfg: &LoadedConfig, exp: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.config.conditions;
    let model = exp.build_model()?;
    let mut reports = Vec::new();
    if let Some(a) = &model.linear {
        reports.push(conditions::kalman_report(a, &model.noise)?);
    }
    let region = BoxRegion::centred(model.dim, c.half_width)?;
    let mut rng = exp.seeds().derive("conditions").rng(0);
    reports.push(conditions::hormander_infimum(&model, &region, c.samples_x, c.samples_u, &mut rng)?);
    let mut table = Table::new("conditions", &["condition", "value", "passed", "witness", "point", "note"]);
    let mut checks = Vec::new();
    for r in &reports {
        condition_row(&mut table, r);
        checks.push(Check::new(&format!("{:?}", r.kind).to_lowercase(), r.passed).note(r.note.clone()));
    }
    Ok(Outcome { tables: vec![table], checks, report: json!({ "model": model.name, "reports": reports }) })
}

fn charfn(cfg: &LoadedConfig, exp: &ExperimentConfig, exec: &Executor) -> Result<Outcome> {
    let c = &cfg.config.charfn;
    let prof = charfn_decay(exp, &c.directions, &c.k_grid, exec)?;
    let mut table = Table::new("charfn", &["direction", "k", "re", "im", "modulus", "stderr"]);
    for r in &prof.rows {
        table.push(vec![(r.direction + 1).into(), r.k.into(), r.re.into(), r.im.into(), r.modulus.into(), r.stderr.into()]);
    }
    let checks = prof
        .decreasing
        .iter()
        .enumerate()
        .map(|(i, &ok)| Check::new(&format!("modulus_decreasing_direction_{}", i + 1), ok))
        .collect();
    Ok(Outcome { tables: vec![table], checks, report: serde_json::to_value(&prof)? })
}

fn moments(cfg: &LoadedConfig, exp: &ExperimentConfig, exec: &Executor) -> Result<Outcome> {
    let rep = exp_moment_experiment(exp, cfg.config.moments.lambda, exec)?;
    let mut table =
        Table::new("moments", &["quantity", "half", "full", "rel_change", "finite", "stable", "max_share", "analytic", "control"]);
    let mut checks = Vec::new();
    for r in &rep.rows {
        table.push(vec![
            r.quantity.clone().into(),
            r.half.into(),
            r.full.into(),
            r.rel_change.into(),
            r.finite.into(),
            r.stable.into(),
            r.max_share.into(),
            r.analytic.unwrap_or(f64::NAN).into(),
            r.control.into(),
        ]);
        if !r.control {
            checks.push(Check::new(&format!("stable {}", r.quantity), r.stable).value(r.rel_change, 0.05));
        }
    }
    let mut sweep = Table::new("moments_sweep", &["trunc", "log_moment_h", "log_moment_literal", "sample_log_mean_literal"]);
    for s in &rep.sweep {
        sweep.push(vec![s.trunc.into(), s.log_moment_h.into(), s.log_moment_literal.into(), s.sample_log_mean_literal.into()]);
    }
    checks.push(Check::new("literal_control_diverges", rep.literal_diverges));
    checks.push(Check::new("cutoff_moment_converges", rep.h_converges));
    Ok(Outcome { tables: vec![table, sweep], checks, report: serde_json::to_value(&rep)? })
}

fn void(cfg: &LoadedConfig, exp: &ExperimentConfig, exec: &Executor) -> Result<Outcome> {
    let v = &cfg.config.void;
    let measure = exp.measure.build()?;
    let rep = void_probability_annulus(&measure, v.window, v.r_inner, exp.paths, &exp.seeds().derive("void"), exec)?;
    let mut table = Table::new(
        "void",
        &["window", "r_inner", "r_outer", "trials", "empty", "empirical", "exact", "stderr", "z", "ci_lo", "ci_hi"],
    );
    table.push(vec![
        rep.window.into(),
        rep.r_inner.into(),
        rep.r_outer.into(),
        rep.trials.into(),
        rep.empty.into(),
        rep.empirical.into(),
        rep.exact.into(),
        rep.stderr.into(),
        rep.z.into(),
        rep.ci_lo.into(),
        rep.ci_hi.into(),
    ]);
    let checks = vec![Check::new("void_probability", rep.passes(SIGMAS)).value(rep.z.abs(), SIGMAS)];
    Ok(Outcome { tables: vec![table], checks, report: serde_json::to_value(&rep)? })
}


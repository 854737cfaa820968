//! Batch execution and report emission.
//!
//! A run executes the requested analyses on one configured problem and
//! collects the results into a single serializable record. The structured
//! format is JSON with a stable key set (integers exact, floats at full
//! double precision, lossless through the parser); the text format is a
//! human-readable tabulation.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{OutputRequest, RunConfig};
use crate::error::{Error, Result};
use crate::fem::{index_terms, index_profile, variable_endpoint_terms, FemOptions, IndexReport, ProfilePoint};
use crate::flow::{
    focal_instants, integrate, maslov_index_of_system, FlowCurve, FlowOptions, FocalInstant,
};
use crate::lagrangian::{
    chart, find_common_complement, LagrangianCurve, LagrangianFrame,
};
use crate::spectral_flow::{jump_two_sided, FormCurve};
use crate::systems::MatrixSampler;

/// Per-focal-instant consistency record of the index-jump validator: the
/// two-sided jump of the chart-difference curve against the crossing
/// contribution of the Maslov count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpCheck {
    pub t: f64,
    pub two_sided_difference: i64,
    pub derivative_signature: i64,
    pub maslov_contribution: i64,
    pub consistent: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Everything a single run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maslov: Option<i64>,
    /// Always present when focal output is requested, even if empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal_instants: Option<Vec<FocalInstant>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_report: Option<IndexReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<ProfilePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_checks: Option<Vec<JumpCheck>>,
}

impl RunReport {
    /// True when every computed identity and consistency check passed.
    pub fn all_identities_hold(&self) -> bool {
        let index_ok = self.index_report.as_ref().is_none_or(|r| r.identity_residual == 0);
        let jumps_ok = self
            .jump_checks
            .as_ref()
            .is_none_or(|js| js.iter().all(|j| j.consistent));
        index_ok && jumps_ok
    }
}

/// Executes the analyses requested by the configuration.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let problem = config.build_problem()?;
    let flow_opts = FlowOptions {
        steps: config.integration.steps,
        drift_bound: config.tolerances.drift,
        seed: config.outputs.seed,
        ..FlowOptions::default()
    };
    let fem_opts = FemOptions {
        mesh_elements: config.mesh.elements,
        max_elements: config.mesh.max_elements.max(config.mesh.elements),
        flow: flow_opts.clone(),
        inertia_tol: config.tolerances.inertia,
    };

    let mut report = RunReport {
        label: problem.label.clone(),
        seed: config.outputs.seed,
        maslov: None,
        focal_instants: None,
        index_report: None,
        profile: None,
        jump_checks: None,
    };

    let system = &problem.system;
    let needs_flow = config.outputs.requested.iter().any(|r| {
        matches!(
            r,
            OutputRequest::Maslov | OutputRequest::Focal | OutputRequest::JumpValidator
        )
    });
    let solution = if needs_flow { Some(integrate(system, &flow_opts)?) } else { None };

    for request in &config.outputs.requested {
        match request {
            OutputRequest::Maslov => {
                let sol = solution.as_ref().expect("flow integrated");
                let m = maslov_index_of_system(system, sol, &flow_opts)?;
                report.maslov = Some(m.index);
            }
            OutputRequest::Focal => {
                let sol = solution.as_ref().expect("flow integrated");
                report.focal_instants = Some(focal_instants(system, sol)?);
            }
            OutputRequest::IndexTheorem => {
                let r = match &problem.end_manifold {
                    Some((q, sq)) => {
                        variable_endpoint_terms(system, &problem.dist, q, sq, &fem_opts)?
                    }
                    None => index_terms(system, &problem.dist, &fem_opts)?,
                };
                report.maslov.get_or_insert(r.maslov);
                report.index_report = Some(r);
            }
            OutputRequest::Profile => {
                let (a, b) = system.interval();
                let pts = config.outputs.profile_points.max(2);
                let grid: Vec<f64> = (1..=pts)
                    .map(|i| a + (b - a) * (i as f64) / (pts as f64))
                    .collect();
                report.profile =
                    Some(index_profile(system, &problem.dist, &grid, &fem_opts)?);
            }
            OutputRequest::JumpValidator => {
                let sol = solution.as_ref().expect("flow integrated");
                report.jump_checks = Some(run_jump_validator(system, sol, &flow_opts)?);
            }
        }
    }
    Ok(report)
}

/// For each focal instant, compares the two-sided index jump of the
/// chart-difference curve with the crossing's contribution to the Maslov
/// count.
fn run_jump_validator(
    system: &crate::systems::SystemData,
    solution: &crate::flow::FundamentalSolution,
    flow_opts: &FlowOptions,
) -> Result<Vec<JumpCheck>> {
    let n = system.dim();
    let (a, b) = system.interval();
    let len = b - a;
    let maslov = maslov_index_of_system(system, solution, flow_opts)?;
    let mut checks = Vec::new();
    let l0 = LagrangianFrame::l0_standard(n);
    for rec in &maslov.crossings {
        let t0 = rec.t;
        let margin = maslov
            .crossings
            .iter()
            .filter(|o| (o.t - t0).abs() > 1e-9 * len)
            .map(|o| (o.t - t0).abs())
            .fold(f64::INFINITY, f64::min)
            .min((t0 - a).min(b - t0) * 2.0);
        if margin < 5e-2 * len {
            checks.push(JumpCheck {
                t: t0,
                two_sided_difference: 0,
                derivative_signature: 0,
                maslov_contribution: rec.contribution,
                consistent: false,
                note: Some("skipped: neighboring crossing too close for the sweep".into()),
            });
            continue;
        }
        let frame0 = FlowCurve::new(system, solution).frame_at(t0)?;
        let l1 = find_common_complement(&l0, &l0, flow_opts.seed)?;
        let l_star = find_common_complement(&frame0, &l0, flow_opts.seed)?;
        let phi_star = chart(&l1, &l0, &l_star)?.matrix().clone();

        let sys = Arc::new(system.clone());
        let sol = Arc::new(solution.clone());
        let l1c = l1.clone();
        let l0c = l0.clone();
        let sampler: MatrixSampler = Arc::new(move |t: f64| {
            let curve = FlowCurve::new(&sys, &sol);
            let frame = curve
                .frame_at(t)
                .expect("flow evaluation inside the integrated interval");
            let phi = chart(&l1c, &l0c, &frame)
                .expect("chart defined away from the crossing");
            phi.matrix() - &phi_star
        });
        let window = 0.45 * margin;
        let curve = FormCurve::new(((t0 - window).max(a), (t0 + window).min(b)), n, sampler)?;
        match jump_two_sided(&curve, t0) {
            Ok(two) => {
                let consistent = two.consistent && two.difference == -rec.contribution;
                checks.push(JumpCheck {
                    t: t0,
                    two_sided_difference: two.difference,
                    derivative_signature: two.derivative_signature,
                    maslov_contribution: rec.contribution,
                    consistent,
                    note: None,
                });
            }
            Err(e) => checks.push(JumpCheck {
                t: t0,
                two_sided_difference: 0,
                derivative_signature: 0,
                maslov_contribution: rec.contribution,
                consistent: false,
                note: Some(e.to_string()),
            }),
        }
    }
    Ok(checks)
}

/// Renders the report in the requested format.
pub fn emit_report(report: &RunReport, format: crate::config::ReportFormat) -> Result<String> {
    match format {
        crate::config::ReportFormat::Structured => serde_json::to_string_pretty(report)
            .map_err(|e| Error::validation("report-serialize", e.to_string())),
        crate::config::ReportFormat::Text => Ok(render_text(report)),
    }
}

pub fn parse_structured(text: &str) -> Result<RunReport> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("structured report parse: {e}")))
}

fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run: {}  (seed {})", report.label, report.seed);
    if let Some(m) = report.maslov {
        let _ = writeln!(out, "maslov index: {m}");
    }
    if let Some(focal) = &report.focal_instants {
        let _ = writeln!(out, "focal instants:");
        let _ = writeln!(out, "  {:<22} {:>4} {:>4} {:>13}", "t", "mult", "sgn", "nondegenerate");
        if focal.is_empty() {
            let _ = writeln!(out, "  (none)");
        }
        for f in focal {
            let _ = writeln!(
                out,
                "  {:<22.17} {:>4} {:>+4} {:>13}",
                f.t, f.multiplicity, f.signature, f.nondegenerate
            );
        }
    }
    if let Some(r) = &report.index_report {
        let _ = writeln!(out, "index identity:");
        let _ = writeln!(out, "  maslov            = {}", r.maslov);
        let _ = writeln!(out, "  n-(I|K)           = {}", r.n_minus_k);
        let _ = writeln!(out, "  n+(I|S)           = {}", r.n_plus_s);
        let _ = writeln!(out, "  n-(B(a)^-1|P)     = {}", r.n_minus_gp);
        if let Some(q) = r.q_term {
            let _ = writeln!(out, "  end-manifold term = {q}");
        }
        let _ = writeln!(out, "  residual          = {}", r.identity_residual);
        let _ = writeln!(
            out,
            "  mesh {} elements, {} integration steps, converged: {}",
            r.mesh_elements, r.integration_steps, r.diagnostics.converged
        );
        let _ = writeln!(out, "focal instants:");
        let _ = writeln!(out, "  {:<22} {:>4} {:>4} {:>13}", "t", "mult", "sgn", "nondegenerate");
        if r.focal_instants.is_empty() {
            let _ = writeln!(out, "  (none)");
        }
        for f in &r.focal_instants {
            let _ = writeln!(
                out,
                "  {:<22.17} {:>4} {:>+4} {:>13}",
                f.t, f.multiplicity, f.signature, f.nondegenerate
            );
        }
    }
    if let Some(profile) = &report.profile {
        let _ = writeln!(out, "index profile:");
        let _ = writeln!(out, "  {:<22} {:>6}", "t", "i(t)");
        for p in profile {
            match p.index {
                Some(i) => {
                    let _ = writeln!(out, "  {:<22.17} {:>6}", p.t, i);
                }
                None => {
                    let _ = writeln!(
                        out,
                        "  {:<22.17} {:>6}  ({})",
                        p.t,
                        "-",
                        p.note.as_deref().unwrap_or("skipped")
                    );
                }
            }
        }
    }
    if let Some(jumps) = &report.jump_checks {
        let _ = writeln!(out, "index-jump validation:");
        let _ = writeln!(
            out,
            "  {:<22} {:>6} {:>6} {:>6} {:>10}",
            "t", "jump", "sgn", "contr", "consistent"
        );
        if jumps.is_empty() {
            let _ = writeln!(out, "  (none)");
        }
        for j in jumps {
            let _ = writeln!(
                out,
                "  {:<22.17} {:>6} {:>6} {:>6} {:>10}{}",
                j.t,
                j.two_sided_difference,
                j.derivative_signature,
                j.maslov_contribution,
                j.consistent,
                j.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default()
            );
        }
    }
    out
}

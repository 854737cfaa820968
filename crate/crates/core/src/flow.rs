//! Flow integration and focal-instant analysis.
//!
//! The fundamental solution Ψ of ζ′ = X(t)ζ is advanced with a classical
//! 4th-order one-step method on a uniform grid; symplecticity drift
//! ‖ΨᵀJΨ − J‖∞ is monitored and the grid doubles (at most three times)
//! when it exceeds the bound. The induced curve ℓ(t) = Ψ(t)ℓ₀ of
//! Lagrangian planes is propagated as a frame with periodic column
//! re-orthonormalization.
//!
//! An instant is focal when some solution with data in ℓ₀ vanishes there;
//! multiplicity is dim(ℓ(t) ∩ L₀) and the signature is that of B(t)
//! restricted to the covectors of the vanishing solutions.

use nalgebra::DMatrix;

use crate::bilinear::{Subspace, SymForm};
use crate::error::{Error, Result};
use crate::lagrangian::{
    golden_section_min, maslov_index, symplectic_residual, CrossingIndicator, CrossingRecord,
    LagrangianCurve, LagrangianFrame, MaslovOptions,
};
use crate::systems::SystemData;

const REORTH_EVERY: usize = 64;
const EVAL_SUBSTEPS: usize = 8;
/// Indicator level above which the curve has safely left the initial
/// tangency with the vertical.
const DEPARTURE_GATE: f64 = 1e-3;
const CROSSING_TOL: f64 = 1e-7;
const MULT_TOL: f64 = 1e-6;
const MAX_CROSSINGS: usize = 64;

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub steps: usize,
    pub drift_bound: f64,
    pub max_doublings: usize,
    pub seed: u64,
    pub time_tol_rel: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            steps: 2048,
            drift_bound: 1e-8,
            max_doublings: 3,
            seed: 0,
            time_tol_rel: 1e-10,
        }
    }
}

/// Dense-grid fundamental solution with the propagated Lagrangian frame.
#[derive(Clone)]
pub struct FundamentalSolution {
    interval: (f64, f64),
    steps: usize,
    h: f64,
    psi: Vec<DMatrix<f64>>,
    frames: Vec<DMatrix<f64>>,
    drift: f64,
    isotropy: f64,
}

impl FundamentalSolution {
    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Largest observed ‖ΨᵀJΨ − J‖∞ over the grid.
    pub fn drift(&self) -> f64 {
        self.drift
    }

    /// Largest isotropy residual of the propagated frame; this equals the
    /// self-adjointness defect max |α_v(w) − α_w(v)| over solution pairs.
    pub fn isotropy(&self) -> f64 {
        self.isotropy
    }

    pub fn psi_at_node(&self, j: usize) -> &DMatrix<f64> {
        &self.psi[j]
    }

    pub fn node_time(&self, j: usize) -> f64 {
        self.interval.0 + self.h * j as f64
    }

    pub fn frame_at_node(&self, j: usize) -> Result<LagrangianFrame> {
        LagrangianFrame::from_stacked(self.frames[j].clone())
    }
}

fn rk4_step(
    system: &SystemData,
    t: f64,
    h: f64,
    m: &DMatrix<f64>,
) -> DMatrix<f64> {
    let k1 = system.coeffs.x_matrix(t) * m;
    let k2 = system.coeffs.x_matrix(t + 0.5 * h) * (m + &k1 * (0.5 * h));
    let k3 = system.coeffs.x_matrix(t + 0.5 * h) * (m + &k2 * (0.5 * h));
    let k4 = system.coeffs.x_matrix(t + h) * (m + &k3 * h);
    m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn orthonormalize_stacked(frame: &DMatrix<f64>) -> DMatrix<f64> {
    crate::bilinear::thin_q(frame)
}

/// Integrates the flow, doubling the grid on drift violations.
pub fn integrate(system: &SystemData, opts: &FlowOptions) -> Result<FundamentalSolution> {
    let mut steps = opts.steps.max(16);
    let mut last_err = None;
    for _ in 0..=opts.max_doublings {
        match integrate_once(system, steps, opts.drift_bound) {
            Ok(sol) => return Ok(sol),
            Err(e @ Error::DriftExceeded { .. }) => {
                last_err = Some(e);
                steps *= 2;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("doubling loop exits with a drift error"))
}

fn integrate_once(
    system: &SystemData,
    steps: usize,
    drift_bound: f64,
) -> Result<FundamentalSolution> {
    let n = system.dim();
    let (a, b) = system.interval();
    let h = (b - a) / steps as f64;

    let mut psi = Vec::with_capacity(steps + 1);
    let mut frames = Vec::with_capacity(steps + 1);
    let l0_frame = system.init.lagrangian_frame()?;
    psi.push(DMatrix::identity(2 * n, 2 * n));
    frames.push(orthonormalize_stacked(&l0_frame.stacked()));

    let mut drift = 0.0_f64;
    let mut isotropy = 0.0_f64;
    for step in 0..steps {
        let t = a + h * step as f64;
        let next_psi = rk4_step(system, t, h, &psi[step]);
        let mut next_frame = rk4_step(system, t, h, &frames[step]);
        if (step + 1) % REORTH_EVERY == 0 || step + 1 == steps {
            next_frame = orthonormalize_stacked(&next_frame);
            let fr = LagrangianFrame::from_stacked(next_frame.clone())?;
            isotropy = isotropy.max(fr.isotropy_residual());
            let d = symplectic_residual(&next_psi);
            drift = drift.max(d);
            if d > drift_bound {
                return Err(Error::DriftExceeded { drift: d, bound: drift_bound, steps });
            }
        }
        psi.push(next_psi);
        frames.push(next_frame);
    }
    Ok(FundamentalSolution { interval: (a, b), steps, h, psi, frames, drift, isotropy })
}

/// The flow-induced curve ℓ(t), evaluable between grid nodes by refined
/// one-step integration from the nearest node.
pub struct FlowCurve<'a> {
    system: &'a SystemData,
    solution: &'a FundamentalSolution,
    span: (f64, f64),
}

impl<'a> FlowCurve<'a> {
    pub fn new(system: &'a SystemData, solution: &'a FundamentalSolution) -> Self {
        FlowCurve { system, solution, span: solution.interval }
    }

    pub fn restricted(system: &'a SystemData, solution: &'a FundamentalSolution, span: (f64, f64)) -> Self {
        FlowCurve { system, solution, span }
    }

    fn eval_stacked(&self, t: f64) -> DMatrix<f64> {
        let sol = self.solution;
        let (a, _b) = sol.interval;
        let j = (((t - a) / sol.h).floor() as usize).min(sol.steps);
        let tj = sol.node_time(j);
        let dt = t - tj;
        if dt.abs() <= 1e-14 * (sol.interval.1 - sol.interval.0) {
            return sol.frames[j].clone();
        }
        let hs = dt / EVAL_SUBSTEPS as f64;
        let mut m = sol.frames[j].clone();
        for s in 0..EVAL_SUBSTEPS {
            m = rk4_step(self.system, tj + hs * s as f64, hs, &m);
        }
        m
    }
}

impl LagrangianCurve for FlowCurve<'_> {
    fn interval(&self) -> (f64, f64) {
        self.span
    }

    fn frame_at(&self, t: f64) -> Result<LagrangianFrame> {
        LagrangianFrame::from_stacked(self.eval_stacked(t))
    }
}

/// A focal instant with its classification.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FocalInstant {
    pub t: f64,
    pub multiplicity: usize,
    pub signature: i64,
    pub nondegenerate: bool,
}

/// Detects and classifies the focal instants in ]a, b].
///
/// The initial tangency at t = a is excluded; the departure zone is the
/// prefix where the transversality indicator has not yet reached its gate.
/// Accumulating or unresolvable crossings are reported as errors.
pub fn focal_instants(system: &SystemData, solution: &FundamentalSolution) -> Result<Vec<FocalInstant>> {
    let n = system.dim();
    let (a, b) = solution.interval;
    let len = b - a;
    let indicator = CrossingIndicator::new(&LagrangianFrame::l0_standard(n));
    let curve = FlowCurve::new(system, solution);

    let mut s = Vec::with_capacity(solution.steps + 1);
    for j in 0..=solution.steps {
        s.push(indicator.min_singular(&solution.frame_at_node(j)?));
    }

    let full_start = system.init.p().dim() == n;
    let start_idx = if full_start {
        0
    } else {
        match s.iter().position(|&v| v >= DEPARTURE_GATE) {
            Some(i) => i,
            None => {
                return Err(Error::Accumulation(
                    "curve never leaves the vertical tangency".into(),
                ))
            }
        }
    };

    let time_tol = len * 1e-10;
    let mut times: Vec<f64> = Vec::new();
    let mut f = |t: f64| -> Result<f64> { Ok(indicator.min_singular(&curve.frame_at(t)?)) };
    for j in (start_idx.max(1))..solution.steps {
        let local_min = s[j] <= s[j - 1] && s[j] <= s[j + 1] && s[j] < 0.5;
        if !local_min {
            continue;
        }
        let lo = solution.node_time(j - 1).max(a + 1e-12 * len);
        let hi = solution.node_time(j + 1);
        for (t0, s0) in crate::lagrangian::refine_crossings_in_window(
            &mut f,
            lo,
            hi,
            time_tol,
            CROSSING_TOL,
        )? {
            if s0 < CROSSING_TOL
                && t0 > a + time_tol
                && times.last().is_none_or(|&p| (t0 - p).abs() > 4.0 * time_tol)
            {
                times.push(t0);
            }
        }
    }
    if s[solution.steps] < CROSSING_TOL {
        times.push(b);
    }
    if times.len() > MAX_CROSSINGS {
        return Err(Error::Accumulation(format!("{} focal instants detected", times.len())));
    }

    let mut instants = Vec::with_capacity(times.len());
    for &t0 in &times {
        instants.push(classify_instant(system, &curve, &indicator, t0)?);
    }
    Ok(instants)
}

fn classify_instant(
    system: &SystemData,
    curve: &FlowCurve<'_>,
    indicator: &CrossingIndicator,
    t0: f64,
) -> Result<FocalInstant> {
    let n = system.dim();
    let frame = curve.frame_at(t0)?.orthonormalized();
    let sv = indicator.singular_values(&frame);
    let mult = sv.iter().filter(|&&v| v < MULT_TOL).count();
    if mult == 0 {
        return Err(Error::UnresolvedCrossing {
            t: t0,
            detail: "localized instant has empty intersection".into(),
        });
    }
    if mult < sv.len() && sv[mult - 1] * 50.0 > sv[mult] {
        return Err(Error::UnresolvedCrossing {
            t: t0,
            detail: format!(
                "singular values do not separate ({:.3e} vs {:.3e})",
                sv[mult - 1],
                sv[mult]
            ),
        });
    }

    // Kernel of the X block spans the vanishing solutions at t0.
    let x = frame.x_block().clone();
    let kernel = crate::bilinear::nullspace(&x, Some(MULT_TOL));
    if kernel.ncols() != mult {
        return Err(Error::UnresolvedCrossing {
            t: t0,
            detail: format!(
                "kernel dimension {} disagrees with multiplicity {}",
                kernel.ncols(),
                mult
            ),
        });
    }
    let alphas = frame.y_block() * &kernel;
    let b_form = SymForm::new(system.coeffs.b_at(t0))?;
    let restricted = b_form.restrict(&Subspace::new(n, alphas)?)?;
    let inertia = restricted.inertia();
    let signature = inertia.signature();
    let nondegenerate = inertia.is_nondegenerate();

    if let Some(morse) = system.morse() {
        // Cross-check: signature of g restricted to the g-orthogonal
        // complement of the reachable set at t0 must agree.
        let reach = reachable_basis(&x);
        let perp_basis = crate::bilinear::nullspace(&(reach.transpose() * morse.g.matrix()), None);
        let perp = Subspace::new(n, perp_basis)?;
        if perp.dim() != mult {
            return Err(Error::validation(
                "focal-signature-crosscheck",
                format!("orthocomplement dimension {} vs multiplicity {}", perp.dim(), mult),
            ));
        }
        let g_restricted = morse.g.restrict(&perp)?;
        let gi = g_restricted.inertia();
        if gi.signature() != signature || gi.is_nondegenerate() != nondegenerate {
            return Err(Error::validation(
                "focal-signature-crosscheck",
                format!(
                    "B-route signature {signature} vs metric-route {} at t = {t0}",
                    gi.signature()
                ),
            ));
        }
    }

    Ok(FocalInstant { t: t0, multiplicity: mult, signature, nondegenerate })
}

/// Orthonormal basis of the column space of `x`.
fn reachable_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("svd u");
    let smax = svd.singular_values.max();
    let tol = MULT_TOL * smax.max(1.0);
    let cols: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(x.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Sum of focal signatures over ]a, b]; defined when every instant is
/// nondegenerate.
pub fn focal_index(instants: &[FocalInstant]) -> Result<i64> {
    if let Some(bad) = instants.iter().find(|i| !i.nondegenerate) {
        return Err(Error::DegenerateInstant(bad.t));
    }
    Ok(instants.iter().map(|i| i.signature).sum())
}

#[derive(Debug, Clone)]
pub struct SystemMaslov {
    pub index: i64,
    pub crossings: Vec<CrossingRecord>,
    /// Start of the interval actually used, past the initial tangency.
    pub departure: f64,
}

/// Maslov index of the pair (system, ℓ₀): the curve index of ℓ over
/// [a+ε, b] relative to the vertical, for any ε below the first focal
/// instant. Requires t = b non-focal; the result is validated to be
/// independent of the admissible ε.
pub fn maslov_index_of_system(
    system: &SystemData,
    solution: &FundamentalSolution,
    opts: &FlowOptions,
) -> Result<SystemMaslov> {
    let n = system.dim();
    let (a, b) = solution.interval;
    let len = b - a;
    let indicator = CrossingIndicator::new(&LagrangianFrame::l0_standard(n));
    let curve = FlowCurve::new(system, solution);

    let s_end = indicator.min_singular(&curve.frame_at(b)?);
    if s_end < 1e-6 {
        return Err(Error::EndpointFocal(format!(
            "transversality indicator at b is {s_end:.3e}"
        )));
    }

    let full_start = system.init.p().dim() == n;
    let departure = if full_start && indicator.min_singular(&curve.frame_at(a)?) >= 1e-6 {
        a
    } else {
        let mut found = None;
        for j in 0..=solution.steps {
            let s = indicator.min_singular(&solution.frame_at_node(j)?);
            if s >= DEPARTURE_GATE {
                found = Some(solution.node_time(j));
                break;
            }
        }
        found.ok_or_else(|| {
            Error::NoAdmissibleEpsilon("indicator never reaches the departure gate".into())
        })?
    };

    let instants = focal_instants(system, solution)?;
    if let Some(first) = instants.first() {
        if first.t <= departure {
            return Err(Error::NoAdmissibleEpsilon(format!(
                "first focal instant {} precedes the departure point {}",
                first.t, departure
            )));
        }
    }

    let samples = ((len / solution.h).ceil() as usize).clamp(256, solution.steps.max(256));
    let mopts = MaslovOptions {
        samples,
        seed: opts.seed,
        time_tol_rel: opts.time_tol_rel,
        ..MaslovOptions::default()
    };
    let run = |start: f64| -> Result<(i64, Vec<CrossingRecord>)> {
        let restricted = FlowCurve::restricted(system, solution, (start, b));
        let r = maslov_index(&restricted, &LagrangianFrame::l0_standard(n), &mopts)?;
        Ok((r.index, r.crossings))
    };
    let (index, crossings) = run(departure)?;

    // The value must not depend on the admissible departure choice.
    if departure > a {
        let alt = match instants.first() {
            Some(first) => 0.5 * (departure + first.t),
            None => 0.5 * (departure + b),
        };
        let (alt_index, _) = run(alt)?;
        if alt_index != index {
            return Err(Error::NoAdmissibleEpsilon(format!(
                "index differs between departure choices ({index} vs {alt_index})"
            )));
        }
    }

    Ok(SystemMaslov { index, crossings, departure })
}

//! Lagrangian subspaces of (ℝⁿ ⊕ ℝⁿ*, ω) and the Maslov index of curves.
//!
//! The symplectic form is ω((v₁,α₁),(v₂,α₂)) = α₂(v₁) − α₁(v₂). A
//! Lagrangian plane is handled as a 2n×n frame [X; Y] of full rank whose
//! span is isotropic. For complementary Lagrangians L₀, L₁ the chart
//! `chart(L0, L1, L)` returns the symmetric bilinear form on L₀ whose
//! graph (through the pairing ι) is L; a curve's Maslov index relative to
//! L₀ is accumulated crossing by crossing from the two-sided index jump of
//! chart differences against a common complement.
//!
//! Sign convention: for the standard L₀ = {0} ⊕ ℝⁿ* and the curve
//! ℓ(t) = span{(sin t, cos t)}, the crossing at t = π/2 counts +1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bilinear::{inf_norm, nullspace, rank, thin_q, SymForm};
use crate::error::{Error, Result};

/// The symplectic vector space ℝⁿ ⊕ ℝⁿ*, fixed by its half-dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticSpace {
    pub n: usize,
}

impl SymplecticSpace {
    pub fn new(n: usize) -> Self {
        SymplecticSpace { n }
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Matrix J of ω: ω(z₁, z₂) = z₁ᵀ J z₂ with J = [[0, I], [−I, 0]].
    pub fn omega_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(i, n + i)] = 1.0;
            j[(n + i, i)] = -1.0;
        }
        j
    }

    pub fn omega(&self, z1: &DVector<f64>, z2: &DVector<f64>) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            acc += z1[i] * z2[n + i] - z1[n + i] * z2[i];
        }
        acc
    }
}

/// ‖MᵀJM − J‖∞, the symplecticity defect of a 2n×2n matrix.
pub fn symplectic_residual(m: &DMatrix<f64>) -> f64 {
    let n2 = m.nrows();
    debug_assert_eq!(n2 % 2, 0);
    let space = SymplecticSpace::new(n2 / 2);
    let j = space.omega_matrix();
    inf_norm(&(m.transpose() * &j * m - &j))
}

/// A Lagrangian plane spanned by the columns of [X; Y].
#[derive(Debug, Clone)]
pub struct LagrangianFrame {
    n: usize,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl LagrangianFrame {
    /// Builds a frame from its v- and α-blocks, checking rank and isotropy.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let n = x.ncols();
        if x.nrows() != n || y.nrows() != n || y.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "lagrangian frame blocks must be n x n, got {}x{} and {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        let frame = LagrangianFrame { n, x, y };
        if n == 0 {
            return Ok(frame);
        }
        let stacked = frame.stacked();
        if rank(&stacked, None) != n {
            return Err(Error::validation("frame-rank", "frame columns are dependent"));
        }
        let scale = inf_norm(&stacked);
        let tol = 1e-9 * scale.max(1.0) * scale.max(1.0);
        let residual = frame.isotropy_residual();
        if residual > tol {
            return Err(Error::validation(
                "frame-isotropy",
                format!("omega does not vanish on the span (residual {residual:.3e})"),
            ));
        }
        Ok(frame)
    }

    pub fn from_stacked(stacked: DMatrix<f64>) -> Result<Self> {
        if stacked.nrows() % 2 != 0 {
            return Err(Error::DimensionMismatch("stacked frame".into()));
        }
        let n = stacked.nrows() / 2;
        if stacked.ncols() != n {
            return Err(Error::DimensionMismatch("stacked frame".into()));
        }
        let x = stacked.rows(0, n).into_owned();
        let y = stacked.rows(n, n).into_owned();
        LagrangianFrame::new(x, y)
    }

    /// L₀ = {0} ⊕ ℝⁿ*, the vertical Lagrangian.
    pub fn l0_standard(n: usize) -> Self {
        LagrangianFrame { n, x: DMatrix::zeros(n, n), y: DMatrix::identity(n, n) }
    }

    /// L₁ = ℝⁿ ⊕ {0}, the horizontal Lagrangian.
    pub fn l1_standard(n: usize) -> Self {
        LagrangianFrame { n, x: DMatrix::identity(n, n), y: DMatrix::zeros(n, n) }
    }

    /// The plane {(v, Sv)} for a symmetric S, i.e. the frame [I; S].
    pub fn graph_over_horizontal(s: &DMatrix<f64>) -> Result<Self> {
        let n = s.nrows();
        LagrangianFrame::new(DMatrix::identity(n, n), s.clone())
    }

    pub fn half_dim(&self) -> usize {
        self.n
    }

    pub fn x_block(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y_block(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(2 * self.n, self.n);
        s.rows_mut(0, self.n).copy_from(&self.x);
        s.rows_mut(self.n, self.n).copy_from(&self.y);
        s
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.n);
        for i in 0..self.n {
            v[i] = self.x[(i, j)];
            v[self.n + i] = self.y[(i, j)];
        }
        v
    }

    /// ‖XᵀY − YᵀX‖∞; zero exactly when ω vanishes on the span.
    pub fn isotropy_residual(&self) -> f64 {
        let m = self.x.transpose() * &self.y - self.y.transpose() * &self.x;
        inf_norm(&m)
    }

    /// Same span, orthonormal columns.
    pub fn orthonormalized(&self) -> LagrangianFrame {
        if self.n == 0 {
            return self.clone();
        }
        let q = thin_q(&self.stacked());
        let x = q.rows(0, self.n).into_owned();
        let y = q.rows(self.n, self.n).into_owned();
        LagrangianFrame { n: self.n, x, y }
    }

    /// dim(L ∩ L') computed from the rank of the concatenated frames.
    pub fn intersection_dim(&self, other: &LagrangianFrame) -> usize {
        let concat = concat_frames(&self.orthonormalized(), &other.orthonormalized());
        2 * self.n - rank(&concat, None)
    }

    pub fn is_complementary(&self, other: &LagrangianFrame) -> bool {
        self.intersection_dim(other) == 0
    }

    /// Complementarity with an explicit conditioning margin on the
    /// smallest singular value of the concatenated orthonormal frames.
    pub fn is_complementary_with_margin(&self, other: &LagrangianFrame, margin: f64) -> bool {
        if self.n == 0 {
            return true;
        }
        let concat = concat_frames(&self.orthonormalized(), &other.orthonormalized());
        let svd = concat.svd(false, false);
        svd.singular_values.min() > margin
    }

    pub fn spans_same(&self, other: &LagrangianFrame) -> bool {
        self.intersection_dim(other) == self.n
    }
}

fn concat_frames(a: &LagrangianFrame, b: &LagrangianFrame) -> DMatrix<f64> {
    let n = a.n;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.columns_mut(0, n).copy_from(&a.stacked());
    m.columns_mut(n, n).copy_from(&b.stacked());
    m
}

/// Matrix of the pairing ι(v) = ω(v, ·)|_{L0} as a map L1 → L0*.
///
/// Entry (i, j) is ω(f1ⱼ, f0ᵢ) in the given frame bases; the induced map
/// is an isomorphism exactly when L0 and L1 are complementary, and
/// ι_{L0,L1} = −(ι_{L1,L0})* holds by antisymmetry of ω.
pub fn iota_matrix(l0: &LagrangianFrame, l1: &LagrangianFrame) -> Result<DMatrix<f64>> {
    if l0.half_dim() != l1.half_dim() {
        return Err(Error::DimensionMismatch("iota".into()));
    }
    if !l0.is_complementary(l1) {
        return Err(Error::NonComplementary("iota needs complementary Lagrangians".into()));
    }
    let space = SymplecticSpace::new(l0.half_dim());
    let j = space.omega_matrix();
    // omega(f1_j, f0_i) = (F1 e_j)^T J (F0 e_i) = (F1^T J F0)_{ji}
    Ok((-(l0.stacked().transpose() * &j * l1.stacked())).into_owned())
}

/// Covector ι_{L0,L1}(v) in the dual basis of L0's frame, for v given in
/// coordinates of L1's frame.
pub fn iota_apply(
    l0: &LagrangianFrame,
    l1: &LagrangianFrame,
    v_coords: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(iota_matrix(l0, l1)? * v_coords)
}

/// Chart value φ_{L0,L1}(L): the symmetric form ι_{L0,L1} ∘ T on L0,
/// where T: L0 → L1 has graph L. Requires L transverse to L1.
pub fn chart(l0: &LagrangianFrame, l1: &LagrangianFrame, l: &LagrangianFrame) -> Result<SymForm> {
    let n = l0.half_dim();
    if l1.half_dim() != n || l.half_dim() != n {
        return Err(Error::DimensionMismatch("chart".into()));
    }
    if !l0.is_complementary(l1) {
        return Err(Error::NonComplementary("chart needs complementary L0, L1".into()));
    }
    if n == 0 {
        return Ok(SymForm::zero(0));
    }
    let basis = concat_frames(l0, l1);
    let lu = basis.lu();
    let coords = lu
        .solve(&l.stacked())
        .ok_or_else(|| Error::NonComplementary("chart basis is singular".into()))?;
    let a = coords.rows(0, n).into_owned();
    let b = coords.rows(n, n).into_owned();
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= n as f64 * smax * f64::EPSILON * 64.0 {
        return Err(Error::Transversality(format!(
            "L is not transverse to L1 (sigma_min = {smin:.3e})"
        )));
    }
    let a_inv = a
        .lu()
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Transversality("L is not transverse to L1".into()))?;
    let t = &b * a_inv;
    let space = SymplecticSpace::new(n);
    let j = space.omega_matrix();
    let pairing = l1.stacked().transpose() * &j * l0.stacked();
    let phi = t.transpose() * pairing;
    let form = SymForm::new(phi.clone())?;
    let sym_defect = inf_norm(&(&phi - phi.transpose()));
    let scale = inf_norm(&phi).max(1.0);
    if sym_defect > 1e-8 * scale {
        return Err(Error::validation(
            "chart-symmetry",
            format!("chart value is not symmetric (defect {sym_defect:.3e})"),
        ));
    }
    Ok(form)
}

/// Inverse of the chart: the Lagrangian with φ_{L0,L1}(L) = s.
pub fn graph_lagrangian(
    l0: &LagrangianFrame,
    l1: &LagrangianFrame,
    s: &DMatrix<f64>,
) -> Result<LagrangianFrame> {
    let n = l0.half_dim();
    if s.nrows() != n || s.ncols() != n {
        return Err(Error::DimensionMismatch("graph_lagrangian".into()));
    }
    let iota = iota_matrix(l0, l1)?;
    let t = iota
        .lu()
        .solve(s)
        .ok_or_else(|| Error::Singular("iota pairing".into()))?;
    let stacked = l0.stacked() + l1.stacked() * t;
    LagrangianFrame::from_stacked(stacked)
}

/// Searches for a Lagrangian complementary to both inputs.
///
/// Deterministic sweep over the graphs [I; cI] with c in
/// {1, −1, 2, −2, 4, −4, 8, −8}, then seeded pseudo-random symmetric
/// graphs, each candidate validated by two rank checks.
pub fn find_common_complement(
    la: &LagrangianFrame,
    lb: &LagrangianFrame,
    seed: u64,
) -> Result<LagrangianFrame> {
    const RANDOM_ATTEMPTS: usize = 64;
    const MARGIN: f64 = 1e-4;
    let n = la.half_dim();
    if lb.half_dim() != n {
        return Err(Error::DimensionMismatch("find_common_complement".into()));
    }
    if n == 0 {
        return Ok(LagrangianFrame::l1_standard(0));
    }
    let mut attempts = 0;
    for &c in &[1.0, -1.0, 2.0, -2.0, 4.0, -4.0, 8.0, -8.0] {
        attempts += 1;
        let s = DMatrix::identity(n, n) * c;
        let cand = LagrangianFrame::graph_over_horizontal(&s)?;
        if cand.is_complementary_with_margin(la, MARGIN) && cand.is_complementary_with_margin(lb, MARGIN) {
            return Ok(cand);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_ATTEMPTS {
        attempts += 1;
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-2.0..2.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let cand = LagrangianFrame::graph_over_horizontal(&s)?;
        if cand.is_complementary_with_margin(la, MARGIN) && cand.is_complementary_with_margin(lb, MARGIN) {
            return Ok(cand);
        }
    }
    Err(Error::ComplementSearchExhausted { n, attempts })
}

/// Report of the four-Lagrangian chart identity and its positivity corollary.
#[derive(Debug, Clone)]
pub struct TechLemmaReport {
    /// ‖φ_{L1,L0}(L_*) − φ_{L1,L0}(L) − ι* φ_{L0,L*}(L)⁻¹ ι‖∞
    pub residual: f64,
    pub n_plus_difference: usize,
    pub n_plus_chart: usize,
    pub difference_nondegenerate: bool,
}

impl TechLemmaReport {
    pub fn holds(&self, residual_tol: f64) -> bool {
        self.residual <= residual_tol
            && self.n_plus_difference == self.n_plus_chart
            && self.difference_nondegenerate
    }
}

/// Evaluates both sides of the chart-difference identity
/// φ_{L1,L0}(L_*) − φ_{L1,L0}(L) = ι* ∘ φ_{L0,L_*}(L)⁻¹ ∘ ι for admissible
/// quadruples, plus the coindex equality of the difference.
pub fn verify_tech_lemma(
    l: &LagrangianFrame,
    l_star: &LagrangianFrame,
    l0: &LagrangianFrame,
    l1: &LagrangianFrame,
) -> Result<TechLemmaReport> {
    if !l0.is_complementary(l1) {
        return Err(Error::NonComplementary("L0, L1 must be complementary".into()));
    }
    if !l.is_complementary(l0) {
        return Err(Error::Transversality("L must be complementary to L0".into()));
    }
    if !l_star.is_complementary(l) || !l_star.is_complementary(l0) {
        return Err(Error::Transversality(
            "L_* must be complementary to both L and L0".into(),
        ));
    }
    let phi_star = chart(l1, l0, l_star)?;
    let phi_l = chart(l1, l0, l)?;
    let lhs = phi_star.sub(&phi_l)?;

    let phi_l0lstar = chart(l0, l_star, l)?;
    let inv = phi_l0lstar
        .matrix()
        .clone()
        .lu()
        .solve(&DMatrix::identity(l0.half_dim(), l0.half_dim()))
        .ok_or_else(|| Error::Singular("chart value phi_{L0,L*}(L)".into()))?;
    let iota = iota_matrix(l0, l1)?;
    let rhs = iota.transpose() * inv * &iota;

    let residual = inf_norm(&(lhs.matrix() - &rhs));
    let inertia_lhs = lhs.inertia();
    Ok(TechLemmaReport {
        residual,
        n_plus_difference: inertia_lhs.n_plus,
        n_plus_chart: phi_l0lstar.inertia().n_plus,
        difference_nondegenerate: inertia_lhs.is_nondegenerate(),
    })
}

/// One crossing of a curve with the singular cycle of L0.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CrossingRecord {
    pub t: f64,
    pub dim_intersection: usize,
    pub contribution: i64,
}

/// A curve of Lagrangian planes, evaluable at every parameter value.
pub trait LagrangianCurve {
    fn interval(&self) -> (f64, f64);
    fn frame_at(&self, t: f64) -> Result<LagrangianFrame>;
}

/// Adapter for closures.
pub struct FnCurve<F: Fn(f64) -> Result<LagrangianFrame>> {
    pub span: (f64, f64),
    pub f: F,
}

impl<F: Fn(f64) -> Result<LagrangianFrame>> LagrangianCurve for FnCurve<F> {
    fn interval(&self) -> (f64, f64) {
        self.span
    }

    fn frame_at(&self, t: f64) -> Result<LagrangianFrame> {
        (self.f)(t)
    }
}

#[derive(Debug, Clone)]
pub struct MaslovOptions {
    /// Scan grid size for crossing detection.
    pub samples: usize,
    /// Seed for the common-complement search.
    pub seed: u64,
    /// Crossing localization tolerance, relative to the interval length.
    pub time_tol_rel: f64,
    /// Nominal two-sided offset is this multiple of the localized half-width.
    pub eps_factor: f64,
    /// Refined indicator minima below this count as crossings.
    pub crossing_tol: f64,
    /// Minimal transversality indicator required at the endpoints.
    pub endpoint_gate: f64,
}

impl Default for MaslovOptions {
    fn default() -> Self {
        MaslovOptions {
            samples: 1024,
            seed: 0,
            time_tol_rel: 1e-10,
            eps_factor: 8.0,
            crossing_tol: 1e-7,
            endpoint_gate: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaslovResult {
    pub index: i64,
    pub crossings: Vec<CrossingRecord>,
}

/// Transversality indicator of a frame against a fixed reference.
///
/// Returns the singular values of Q⊥ᵀ F̂ where Q⊥ spans the Euclidean
/// complement of the reference plane; for the standard vertical L0 these
/// are the singular values of the X block of the orthonormalized frame.
/// The count of values below a threshold is dim(L ∩ L0).
pub(crate) struct CrossingIndicator {
    q_perp_t: DMatrix<f64>,
}

impl CrossingIndicator {
    pub(crate) fn new(l0: &LagrangianFrame) -> Self {
        let q0 = l0.orthonormalized().stacked();
        let q_perp = nullspace(&q0.transpose(), None);
        CrossingIndicator { q_perp_t: q_perp.transpose() }
    }

    pub(crate) fn singular_values(&self, frame: &LagrangianFrame) -> Vec<f64> {
        let m = &self.q_perp_t * frame.orthonormalized().stacked();
        let svd = m.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| a.partial_cmp(b).expect("finite singular values"));
        sv
    }

    pub(crate) fn min_singular(&self, frame: &LagrangianFrame) -> f64 {
        self.singular_values(frame)[0]
    }
}

pub(crate) fn golden_section_min(
    f: &mut impl FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_895;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok((t, f(t)?))
}

/// All indicator minima below the crossing tolerance inside a window,
/// resolved by a fine scan plus golden-section refinement. Catches
/// crossing pairs that fall inside one cell of the coarse grid (e.g. a
/// perturbed double crossing split by ~1e−4 of the interval).
pub(crate) fn refine_crossings_in_window(
    eval: &mut impl FnMut(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    time_tol: f64,
    crossing_tol: f64,
) -> Result<Vec<(f64, f64)>> {
    const FINE: usize = 768;
    let mut ts = Vec::with_capacity(FINE + 1);
    let mut ss = Vec::with_capacity(FINE + 1);
    for i in 0..=FINE {
        let t = lo + (hi - lo) * (i as f64) / (FINE as f64);
        ts.push(t);
        ss.push(eval(t)?);
    }
    let mut found: Vec<(f64, f64)> = Vec::new();
    for j in 1..FINE {
        let is_min = ss[j] <= ss[j - 1] && ss[j] <= ss[j + 1];
        if !is_min {
            continue;
        }
        let (t0, s0) = golden_section_min(eval, ts[j - 1], ts[j + 1], time_tol)?;
        if s0 < crossing_tol {
            if found
                .last()
                .is_none_or(|&(prev, _)| (t0 - prev).abs() > 4.0 * time_tol)
            {
                found.push((t0, s0));
            }
        }
    }
    Ok(found)
}

/// Crossing times of the curve with the singular cycle of `l0`, localized
/// to `time_tol_rel` of the interval length. Endpoints are excluded.
pub fn locate_crossings(
    curve: &impl LagrangianCurve,
    l0: &LagrangianFrame,
    opts: &MaslovOptions,
) -> Result<Vec<(f64, f64)>> {
    let (a, b) = curve.interval();
    let len = b - a;
    if !(len > 0.0) {
        return Err(Error::validation("curve-interval", "empty parameter interval"));
    }
    let indicator = CrossingIndicator::new(l0);
    let m = opts.samples.max(8);
    let mut ts = Vec::with_capacity(m + 1);
    let mut ss = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let t = a + len * (i as f64) / (m as f64);
        ts.push(t);
        ss.push(indicator.min_singular(&curve.frame_at(t)?));
    }
    const SCAN_GATE: f64 = 0.5;
    let mut crossings: Vec<(f64, f64)> = Vec::new();
    let time_tol = opts.time_tol_rel * len;
    let mut f = |t: f64| -> Result<f64> { Ok(indicator.min_singular(&curve.frame_at(t)?)) };
    for i in 1..m {
        let is_min = ss[i] <= ss[i - 1] && ss[i] <= ss[i + 1] && ss[i] < SCAN_GATE;
        if !is_min {
            continue;
        }
        for (t0, s0) in
            refine_crossings_in_window(&mut f, ts[i - 1], ts[i + 1], time_tol, opts.crossing_tol)?
        {
            if crossings
                .last()
                .is_none_or(|&(prev_t, _)| (t0 - prev_t).abs() > 4.0 * time_tol)
            {
                crossings.push((t0, s0));
            }
        }
    }
    Ok(crossings)
}

/// Maslov index of a curve relative to `l0`, via chart differences against
/// a per-crossing common complement. Endpoints must be transverse to `l0`
/// and crossings isolated at the sampling resolution.
pub fn maslov_index(
    curve: &impl LagrangianCurve,
    l0: &LagrangianFrame,
    opts: &MaslovOptions,
) -> Result<MaslovResult> {
    let (a, b) = curve.interval();
    let len = b - a;
    let indicator = CrossingIndicator::new(l0);
    for (label, t) in [("start", a), ("end", b)] {
        let s = indicator.min_singular(&curve.frame_at(t)?);
        if s < opts.endpoint_gate {
            return Err(Error::EndpointCrossing(format!(
                "curve {label} point is not transverse to L0 (indicator {s:.3e})"
            )));
        }
    }
    let l1 = find_common_complement(l0, l0, opts.seed)?;
    let crossings = locate_crossings(curve, l0, opts)?;

    let mut records = Vec::new();
    let mut index = 0i64;
    for (ci, &(t0, _s0)) in crossings.iter().enumerate() {
        let frame0 = curve.frame_at(t0)?;
        let sv = indicator.singular_values(&frame0);
        const MULT_TOL: f64 = 1e-6;
        let mult = sv.iter().filter(|&&s| s < MULT_TOL).count();
        if mult == 0 {
            continue;
        }
        if mult < sv.len() {
            let largest_small = sv[mult - 1];
            let smallest_large = sv[mult];
            if largest_small * 50.0 > smallest_large {
                return Err(Error::UnresolvedCrossing {
                    t: t0,
                    detail: format!(
                        "singular values do not separate ({largest_small:.3e} vs {smallest_large:.3e})"
                    ),
                });
            }
        }

        // Room available before hitting neighbours or the endpoints.
        let prev_t = if ci == 0 { a } else { crossings[ci - 1].0 };
        let next_t = if ci + 1 == crossings.len() { b } else { crossings[ci + 1].0 };
        let room = 0.25 * (t0 - prev_t).min(next_t - t0);
        let floor = 1e-6 * len;
        let nominal = opts.eps_factor * opts.time_tol_rel * len;
        let mut eps = nominal.max(floor);
        if eps > room {
            if floor > room {
                return Err(Error::UnresolvedCrossing {
                    t: t0,
                    detail: "crossings too close to separate two-sided evaluations".into(),
                });
            }
            eps = room;
        }

        let l_star = find_common_complement(&frame0, l0, opts.seed)?;
        let phi_star = chart(&l1, l0, &l_star)?;
        let mut contribution = None;
        let mut attempt_eps = eps;
        for _ in 0..6 {
            let before = curve.frame_at(t0 - attempt_eps)?;
            let after = curve.frame_at(t0 + attempt_eps)?;
            let transversal = indicator.min_singular(&before) > 10.0 * opts.crossing_tol
                && indicator.min_singular(&after) > 10.0 * opts.crossing_tol
                && l_star.is_complementary(&before)
                && l_star.is_complementary(&after);
            if transversal {
                let d_after = chart(&l1, l0, &after)?.sub(&phi_star)?;
                let d_before = chart(&l1, l0, &before)?.sub(&phi_star)?;
                contribution =
                    Some(d_after.inertia().n_minus as i64 - d_before.inertia().n_minus as i64);
                break;
            }
            attempt_eps *= 2.0;
            if attempt_eps > room.max(floor) {
                break;
            }
        }
        let contribution = contribution.ok_or_else(|| Error::UnresolvedCrossing {
            t: t0,
            detail: "no admissible two-sided offset found".into(),
        })?;
        index += contribution;
        records.push(CrossingRecord { t: t0, dim_intersection: mult, contribution });
    }
    Ok(MaslovResult { index, crossings: records })
}

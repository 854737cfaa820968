//! Morse–Sturm and symplectic differential systems with Lagrangian
//! initial data.
//!
//! A symplectic system is v′ = A v + B α, α′ = C v − Aᵀ α with B(t)
//! invertible and B, C symmetric; a Morse–Sturm system v″ = R v with
//! gR symmetric embeds as A = 0, B = g⁻¹, C = gR. Initial data is the
//! pair (P, S) ↔ the Lagrangian ℓ₀ = {(v, α) : v ∈ P, α|_P + S v = 0}.
//!
//! Coefficient samplers are closures over t; declared invariants are
//! enforced on a validation grid (default 512 uniform points) and trusted
//! in between.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bilinear::{check_g_symmetric, inf_norm, nullspace, Subspace, SymForm};
use crate::error::{Error, Result};
use crate::lagrangian::{symplectic_residual, LagrangianFrame};

pub type MatrixSampler = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type VectorSampler = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

pub const DEFAULT_VALIDATION_POINTS: usize = 512;
const FD_STEP_REL: f64 = 1e-6;

pub fn constant_sampler(m: DMatrix<f64>) -> MatrixSampler {
    Arc::new(move |_t| m.clone())
}

pub fn zero_sampler(n: usize) -> MatrixSampler {
    Arc::new(move |_t| DMatrix::zeros(n, n))
}

/// Declared smoothness of a sampler; invariants involving derivatives are
/// only meaningful for C¹ and above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothness {
    C0,
    C1,
    C2,
    Smooth,
}

impl Default for Smoothness {
    fn default() -> Self {
        Smoothness::Smooth
    }
}

/// Central difference with clamping at the interval ends.
fn central_difference(
    f: &dyn Fn(f64) -> DMatrix<f64>,
    t: f64,
    interval: (f64, f64),
) -> DMatrix<f64> {
    let h = (interval.1 - interval.0) * FD_STEP_REL;
    let lo = (t - h).max(interval.0);
    let hi = (t + h).min(interval.1);
    (f(hi) - f(lo)) / (hi - lo)
}

/// Coefficient blocks (A, B, C) of a symplectic system on [a, b].
#[derive(Clone)]
pub struct CoefficientPath {
    interval: (f64, f64),
    dim: usize,
    a: MatrixSampler,
    b: MatrixSampler,
    c: MatrixSampler,
    smoothness: Smoothness,
    validation_points: usize,
    /// Index n₋(B(t)), constant on the interval.
    b_index: usize,
}

impl CoefficientPath {
    pub fn new(
        interval: (f64, f64),
        dim: usize,
        a: MatrixSampler,
        b: MatrixSampler,
        c: MatrixSampler,
        smoothness: Smoothness,
    ) -> Result<Self> {
        Self::with_validation_points(interval, dim, a, b, c, smoothness, DEFAULT_VALIDATION_POINTS)
    }

    pub fn with_validation_points(
        interval: (f64, f64),
        dim: usize,
        a: MatrixSampler,
        b: MatrixSampler,
        c: MatrixSampler,
        smoothness: Smoothness,
        validation_points: usize,
    ) -> Result<Self> {
        if !(interval.1 > interval.0) {
            return Err(Error::validation("interval", "need a < b"));
        }
        let mut path = CoefficientPath {
            interval,
            dim,
            a,
            b,
            c,
            smoothness,
            validation_points: validation_points.max(2),
            b_index: 0,
        };
        path.b_index = path.validate()?;
        Ok(path)
    }

    fn validate(&self) -> Result<usize> {
        let mut b_index: Option<usize> = None;
        for t in self.validation_grid() {
            let a = (self.a)(t);
            let b = (self.b)(t);
            let c = (self.c)(t);
            for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
                if m.nrows() != self.dim || m.ncols() != self.dim {
                    return Err(Error::DimensionMismatch(format!(
                        "coefficient {name}({t}) has shape {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
            for (name, m) in [("B", &b), ("C", &c)] {
                let defect = inf_norm(&(m - m.transpose()));
                let tol = 1e-8 * inf_norm(m).max(1.0);
                if defect > tol {
                    return Err(Error::validation(
                        "coefficient-symmetry",
                        format!("{name}({t}) asymmetric by {defect:.3e}"),
                    ));
                }
            }
            let b_form = SymForm::new(b)?;
            let inertia = b_form.inertia();
            if inertia.dgn > 0 {
                return Err(Error::validation(
                    "coefficient-b-invertible",
                    format!("B({t}) is singular"),
                ));
            }
            match b_index {
                None => b_index = Some(inertia.n_minus),
                Some(k) if k != inertia.n_minus => {
                    return Err(Error::validation(
                        "coefficient-b-index",
                        format!("index of B jumps from {k} to {} at t = {t}", inertia.n_minus),
                    ));
                }
                _ => {}
            }
        }
        Ok(b_index.unwrap_or(0))
    }

    pub fn validation_grid(&self) -> impl Iterator<Item = f64> + '_ {
        let (a, b) = self.interval;
        let m = self.validation_points - 1;
        (0..=m).map(move |i| a + (b - a) * (i as f64) / (m as f64))
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// n₋(B(t)) = n₋(B(t)⁻¹), the index of the coefficient B.
    pub fn b_index(&self) -> usize {
        self.b_index
    }

    pub fn a_at(&self, t: f64) -> DMatrix<f64> {
        (self.a)(t)
    }

    pub fn b_at(&self, t: f64) -> DMatrix<f64> {
        (self.b)(t)
    }

    pub fn c_at(&self, t: f64) -> DMatrix<f64> {
        (self.c)(t)
    }

    pub fn b_inv_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let b = (self.b)(t);
        b.clone()
            .lu()
            .solve(&DMatrix::identity(self.dim, self.dim))
            .ok_or_else(|| Error::Singular(format!("B({t})")))
    }

    /// The same coefficients on the shorter interval [a, new_end].
    pub fn restrict_interval(&self, new_end: f64) -> Result<CoefficientPath> {
        CoefficientPath::with_validation_points(
            (self.interval.0, new_end),
            self.dim,
            Arc::clone(&self.a),
            Arc::clone(&self.b),
            Arc::clone(&self.c),
            self.smoothness,
            self.validation_points,
        )
    }

    /// Full coefficient matrix [[A, B], [C, −Aᵀ]] of the first-order flow.
    pub fn x_matrix(&self, t: f64) -> DMatrix<f64> {
        let n = self.dim;
        let a = (self.a)(t);
        let b = (self.b)(t);
        let c = (self.c)(t);
        let mut x = DMatrix::zeros(2 * n, 2 * n);
        x.view_mut((0, 0), (n, n)).copy_from(&a);
        x.view_mut((0, n), (n, n)).copy_from(&((&b + b.transpose()) * 0.5));
        x.view_mut((n, 0), (n, n)).copy_from(&((&c + c.transpose()) * 0.5));
        x.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
        x
    }
}

/// α_v(t) = B(t)⁻¹ (v′(t) − A(t) v(t)), the covector slot of a solution.
pub fn alpha_of(
    coeffs: &CoefficientPath,
    t: f64,
    v: &DVector<f64>,
    v_prime: &DVector<f64>,
) -> Result<DVector<f64>> {
    if v.len() != coeffs.dim() || v_prime.len() != coeffs.dim() {
        return Err(Error::DimensionMismatch("alpha_of".into()));
    }
    let rhs = v_prime - coeffs.a_at(t) * v;
    coeffs
        .b_at(t)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("B({t})")))
}

/// Initial data (P, S): the start value lies in P and the covector is
/// coupled through the symmetric form S on P. Stored on an orthonormal
/// basis of P.
#[derive(Clone)]
pub struct InitialData {
    p: Subspace,
    s: SymForm,
}

impl InitialData {
    pub fn new(p: Subspace, s: SymForm) -> Result<Self> {
        if s.dim() != p.dim() {
            return Err(Error::DimensionMismatch(format!(
                "S is {}-dimensional on a {}-dimensional P",
                s.dim(),
                p.dim()
            )));
        }
        if p.dim() == 0 {
            return Ok(InitialData { p, s });
        }
        // Re-express S on the orthonormalized basis: columns Q = P R^{-1}.
        let qr = p.basis().clone().qr();
        let q = crate::bilinear::thin_q(p.basis());
        let mut r = qr.r();
        for j in 0..r.ncols() {
            if r[(j, j)] < 0.0 {
                for c in 0..r.ncols() {
                    r[(j, c)] = -r[(j, c)];
                }
            }
        }
        let r_inv = r
            .lu()
            .solve(&DMatrix::identity(p.dim(), p.dim()))
            .ok_or_else(|| Error::Singular("P basis triangular factor".into()))?;
        let s_q = SymForm::new(r_inv.transpose() * s.matrix() * &r_inv)?;
        let p_ortho = Subspace::new(p.ambient_dim(), q)?;
        Ok(InitialData { p: p_ortho, s: s_q })
    }

    pub fn fixed_start(n: usize) -> Self {
        InitialData { p: Subspace::zero(n), s: SymForm::zero(0) }
    }

    pub fn free_start(n: usize) -> Self {
        InitialData { p: Subspace::full(n), s: SymForm::zero(n) }
    }

    pub fn p(&self) -> &Subspace {
        &self.p
    }

    pub fn s(&self) -> &SymForm {
        &self.s
    }

    /// Frame of ℓ₀ = {(v, α) : v ∈ P, α|_P + S v = 0}.
    pub fn lagrangian_frame(&self) -> Result<LagrangianFrame> {
        let n = self.p.ambient_dim();
        let p = self.p.dim();
        let q = self.p.basis();
        let ann = nullspace(&q.transpose(), None);
        if ann.ncols() != n - p {
            return Err(Error::validation(
                "initial-data-annihilator",
                "annihilator dimension mismatch",
            ));
        }
        let mut x = DMatrix::zeros(n, n);
        let mut y = DMatrix::zeros(n, n);
        if p > 0 {
            x.columns_mut(0, p).copy_from(q);
            y.columns_mut(0, p).copy_from(&(-(q * self.s.matrix())));
        }
        if n - p > 0 {
            y.columns_mut(p, n - p).copy_from(&ann);
        }
        LagrangianFrame::new(x, y)
    }

    /// Decodes (P, S) back from a Lagrangian frame.
    pub fn from_lagrangian_frame(frame: &LagrangianFrame) -> Result<InitialData> {
        let n = frame.half_dim();
        let x = frame.x_block().clone();
        let svd = x.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = 2.0 * n as f64 * smax.max(1.0) * f64::EPSILON * 64.0;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let u = svd.u.as_ref().expect("svd u");
        if rank == 0 {
            return Ok(InitialData::fixed_start(n));
        }
        let q = u.columns(0, rank).into_owned();
        // Minimum-norm solutions of X c_i = q_i give representative covectors.
        let mut s = DMatrix::zeros(rank, rank);
        for i in 0..rank {
            let rhs = q.column(i).into_owned();
            let c = svd
                .solve(&rhs, tol)
                .map_err(|e| Error::Singular(format!("initial frame solve: {e}")))?;
            let alpha = frame.y_block() * c;
            for j in 0..rank {
                s[(i, j)] = -(alpha.transpose() * q.column(j))[(0, 0)];
            }
        }
        let s = SymForm::new(s)?;
        if s.asymmetry() > 1e-8 * inf_norm(s.matrix()).max(1.0) {
            return Err(Error::validation(
                "initial-data-symmetry",
                "recovered S is not symmetric; frame is not Lagrangian",
            ));
        }
        InitialData::new(Subspace::new(n, q)?, s)
    }
}

/// Morse–Sturm provenance of a symplectic system: the constant metric g
/// and the endomorphism sampler R with gR symmetric.
#[derive(Clone)]
pub struct MorseProvenance {
    pub g: SymForm,
    pub r: MatrixSampler,
}

/// A symplectic differential problem: coefficients plus initial data.
#[derive(Clone)]
pub struct SystemData {
    pub coeffs: CoefficientPath,
    pub init: InitialData,
    morse: Option<MorseProvenance>,
}

impl SystemData {
    pub fn new(coeffs: CoefficientPath, init: InitialData) -> Result<Self> {
        Self::with_provenance(coeffs, init, None)
    }

    fn with_provenance(
        coeffs: CoefficientPath,
        init: InitialData,
        morse: Option<MorseProvenance>,
    ) -> Result<Self> {
        if init.p().ambient_dim() != coeffs.dim() {
            return Err(Error::DimensionMismatch("system initial data".into()));
        }
        // Nondegeneracy gate: B(a)^{-1} restricted to P must be nondegenerate.
        let a = coeffs.interval().0;
        let b_inv = coeffs.b_inv_at(a)?;
        let restricted = SymForm::new(b_inv)?.restrict(init.p())?;
        if !restricted.is_nondegenerate() {
            return Err(Error::validation(
                "initial-data-gate",
                "B(a)^{-1} restricted to P is degenerate",
            ));
        }
        Ok(SystemData { coeffs, init, morse })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    pub fn interval(&self) -> (f64, f64) {
        self.coeffs.interval()
    }

    pub fn morse(&self) -> Option<&MorseProvenance> {
        self.morse.as_ref()
    }

    /// The same problem restricted to [a, new_end].
    pub fn restricted(&self, new_end: f64) -> Result<SystemData> {
        SystemData::with_provenance(
            self.coeffs.restrict_interval(new_end)?,
            self.init.clone(),
            self.morse.clone(),
        )
    }

    /// n₋ of B(a)⁻¹ restricted to P, the initial-manifold term of the
    /// index identity.
    pub fn initial_index_term(&self) -> Result<usize> {
        let a = self.coeffs.interval().0;
        let b_inv = self.coeffs.b_inv_at(a)?;
        Ok(SymForm::new(b_inv)?.restrict(self.init.p())?.inertia().n_minus)
    }
}

/// Second-order system v″ = R(t) v with R g-symmetric, plus initial data.
#[derive(Clone)]
pub struct MorseSturm {
    pub interval: (f64, f64),
    pub g: SymForm,
    pub r: MatrixSampler,
    pub init: InitialData,
    validation_points: usize,
}

impl MorseSturm {
    pub fn new(
        interval: (f64, f64),
        g: SymForm,
        r: MatrixSampler,
        init: InitialData,
    ) -> Result<Self> {
        Self::with_validation_points(interval, g, r, init, DEFAULT_VALIDATION_POINTS)
    }

    pub fn with_validation_points(
        interval: (f64, f64),
        g: SymForm,
        r: MatrixSampler,
        init: InitialData,
        validation_points: usize,
    ) -> Result<Self> {
        if !(interval.1 > interval.0) {
            return Err(Error::validation("interval", "need a < b"));
        }
        if !g.is_nondegenerate() {
            return Err(Error::DegenerateForm("metric g must be nondegenerate".into()));
        }
        let n = g.dim();
        if init.p().ambient_dim() != n {
            return Err(Error::DimensionMismatch("Morse-Sturm initial data".into()));
        }
        let ms = MorseSturm { interval, g, r, init, validation_points: validation_points.max(2) };
        for i in 0..ms.validation_points {
            let t = interval.0
                + (interval.1 - interval.0) * (i as f64) / ((ms.validation_points - 1) as f64);
            let r_t = (ms.r)(t);
            if !check_g_symmetric(&ms.g, &r_t, None)? {
                return Err(Error::validation(
                    "morse-sturm-g-symmetry",
                    format!("gR({t}) is not symmetric"),
                ));
            }
        }
        Ok(ms)
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// First-order form: A = 0, B = g⁻¹, C = gR; solutions correspond
    /// through α_v = g v′.
    pub fn to_symplectic(&self) -> Result<SystemData> {
        let n = self.dim();
        let g_inv = self
            .g
            .matrix()
            .clone()
            .lu()
            .solve(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::Singular("metric g".into()))?;
        let g_mat = self.g.matrix().clone();
        let r = Arc::clone(&self.r);
        let coeffs = CoefficientPath::with_validation_points(
            self.interval,
            n,
            zero_sampler(n),
            constant_sampler((&g_inv + g_inv.transpose()) * 0.5),
            Arc::new(move |t| {
                let gr = &g_mat * r(t);
                (&gr + gr.transpose()) * 0.5
            }),
            Smoothness::Smooth,
            self.validation_points,
        )?;
        SystemData::with_provenance(
            coeffs,
            self.init.clone(),
            Some(MorseProvenance { g: self.g.clone(), r: Arc::clone(&self.r) }),
        )
    }
}

/// A k-frame of vector fields spanning a distribution along the interval.
#[derive(Clone)]
pub struct Distribution {
    frames: Vec<VectorSampler>,
    frame_derivs: Option<Vec<VectorSampler>>,
}

impl Distribution {
    pub fn new(frames: Vec<VectorSampler>) -> Self {
        Distribution { frames, frame_derivs: None }
    }

    pub fn with_derivatives(frames: Vec<VectorSampler>, derivs: Vec<VectorSampler>) -> Self {
        Distribution { frames, frame_derivs: Some(derivs) }
    }

    pub fn empty() -> Self {
        Distribution { frames: Vec::new(), frame_derivs: None }
    }

    /// Constant frame from explicit vectors.
    pub fn constant(vectors: Vec<DVector<f64>>) -> Self {
        let frames = vectors
            .into_iter()
            .map(|v| -> VectorSampler { Arc::new(move |_t| v.clone()) })
            .collect();
        Distribution { frames, frame_derivs: None }
    }

    pub fn k(&self) -> usize {
        self.frames.len()
    }

    pub fn y_matrix(&self, t: f64, n: usize) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(n, self.k());
        for (j, f) in self.frames.iter().enumerate() {
            y.column_mut(j).copy_from(&f(t));
        }
        y
    }

    pub fn dy_matrix(&self, t: f64, n: usize, interval: (f64, f64)) -> DMatrix<f64> {
        if let Some(derivs) = &self.frame_derivs {
            let mut dy = DMatrix::zeros(n, self.k());
            for (j, f) in derivs.iter().enumerate() {
                dy.column_mut(j).copy_from(&f(t));
            }
            return dy;
        }
        let frames = self.frames.clone();
        let k = self.k();
        let f = move |s: f64| {
            let mut y = DMatrix::zeros(n, k);
            for (j, fs) in frames.iter().enumerate() {
                y.column_mut(j).copy_from(&fs(s));
            }
            y
        };
        central_difference(&f, t, interval)
    }

    /// Checks pointwise independence, negative definiteness of B(t)⁻¹ on
    /// the span, and maximality k = n₋(B).
    pub fn validate(&self, coeffs: &CoefficientPath) -> Result<()> {
        let n = coeffs.dim();
        let k = self.k();
        if k != coeffs.b_index() {
            return Err(Error::validation(
                "distribution-maximality",
                format!("frame has {k} fields but n_minus(B) = {}", coeffs.b_index()),
            ));
        }
        if k == 0 {
            return Ok(());
        }
        for t in coeffs.validation_grid() {
            let y = self.y_matrix(t, n);
            let span = Subspace::new(n, y).map_err(|_| {
                Error::validation(
                    "distribution-independence",
                    format!("frame fields dependent at t = {t}"),
                )
            })?;
            let b_inv = coeffs.b_inv_at(t)?;
            let restricted = SymForm::new(b_inv)?.restrict(&span)?;
            let inertia = restricted.inertia();
            if inertia.n_minus != k || inertia.n_plus != 0 || inertia.dgn != 0 {
                return Err(Error::validation(
                    "distribution-negativity",
                    format!(
                        "B({t})^-1 is not negative definite on the span (inertia {:?})",
                        inertia
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// The assembled k×k data (𝓑, 𝓒, 𝓘) of the reduced system at time t:
/// 𝓑ᵢⱼ = B⁻¹(Yᵢ, Yⱼ), 𝓒ᵢⱼ = α_{Yⱼ}(Yᵢ), 𝓘ᵢⱼ = B(α_{Yᵢ}, α_{Yⱼ}) + C(Yᵢ, Yⱼ).
pub fn reduced_data(
    coeffs: &CoefficientPath,
    dist: &Distribution,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = coeffs.dim();
    let y = dist.y_matrix(t, n);
    let dy = dist.dy_matrix(t, n, coeffs.interval());
    let b = coeffs.b_at(t);
    let b_inv = coeffs.b_inv_at(t)?;
    let c = coeffs.c_at(t);
    let a = coeffs.a_at(t);
    let alpha = &b_inv * (dy - a * &y);
    let cal_b = y.transpose() * &b_inv * &y;
    let cal_c = y.transpose() * &alpha;
    let cal_i = alpha.transpose() * b * &alpha + y.transpose() * c * &y;
    Ok((
        ((&cal_b + cal_b.transpose()) * 0.5).into_owned(),
        cal_c,
        ((&cal_i + cal_i.transpose()) * 0.5).into_owned(),
    ))
}

fn solve_against(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(what.into()))
}

/// The reduced symplectic system of the pair (system, distribution):
/// f′ = −𝓑⁻¹𝓒 f − 𝓑⁻¹ φ, φ′ = (𝓒*𝓑⁻¹𝓒 − 𝓘) f + 𝓒*𝓑⁻¹ φ, always taken
/// with initial condition f(a) = 0. The φ-coefficient −𝓑⁻¹ is positive
/// definite.
pub fn reduced_system(coeffs: &CoefficientPath, dist: &Distribution) -> Result<SystemData> {
    dist.validate(coeffs)?;
    let k = dist.k();
    let interval = coeffs.interval();
    let (c0, c1, c2) = reduced_samplers(coeffs.clone(), dist.clone(), ReducedForm::Primary);
    let red = CoefficientPath::new(interval, k, c0, c1, c2, Smoothness::C1)?;
    // B_red = -[B^{-1} on the frame]^{-1} must be positive definite.
    for t in red.validation_grid() {
        let b_red = SymForm::new(red.b_at(t))?;
        let inertia = b_red.inertia();
        if inertia.n_minus != 0 || inertia.dgn != 0 {
            return Err(Error::validation(
                "reduced-b-positive",
                format!("reduced B({t}) is not positive definite"),
            ));
        }
    }
    SystemData::new(red, InitialData::fixed_start(k))
}

/// The isomorphic alternative form of the reduced system, built from the
/// symmetric/antisymmetric split 𝓒 = 𝓒ₛ + 𝓒ₐ:
/// f′ = −𝓑⁻¹𝓒ₐ f + 𝓑⁻¹ φ, φ′ = (𝓘 − 𝓒ₛ′ + 𝓒ₐ𝓑⁻¹𝓒ₐ) f − 𝓒ₐ𝓑⁻¹ φ.
/// Its focal data matches the primary form's.
pub fn alt_reduced_system(coeffs: &CoefficientPath, dist: &Distribution) -> Result<SystemData> {
    dist.validate(coeffs)?;
    let k = dist.k();
    let interval = coeffs.interval();
    let (c0, c1, c2) = reduced_samplers(coeffs.clone(), dist.clone(), ReducedForm::Alternative);
    let red = CoefficientPath::new(interval, k, c0, c1, c2, Smoothness::C0)?;
    SystemData::new(red, InitialData::fixed_start(k))
}

#[derive(Clone, Copy)]
enum ReducedForm {
    Primary,
    Alternative,
}

fn reduced_samplers(
    coeffs: CoefficientPath,
    dist: Distribution,
    form: ReducedForm,
) -> (MatrixSampler, MatrixSampler, MatrixSampler) {
    let make = |pick: usize| -> MatrixSampler {
        let coeffs = coeffs.clone();
        let dist = dist.clone();
        Arc::new(move |t| {
            let k = dist.k();
            let eye = DMatrix::identity(k, k);
            let (cal_b, cal_c, cal_i) =
                reduced_data(&coeffs, &dist, t).expect("validated distribution data");
            let b_inv = cal_b
                .clone()
                .lu()
                .solve(&eye)
                .expect("validated reduced B is invertible");
            match form {
                ReducedForm::Primary => match pick {
                    0 => -(&b_inv) * &cal_c,
                    1 => -b_inv,
                    _ => cal_c.transpose() * &b_inv * &cal_c - &cal_i,
                },
                ReducedForm::Alternative => {
                    let c_a = (&cal_c - cal_c.transpose()) * 0.5;
                    match pick {
                        0 => -(&b_inv) * &c_a,
                        1 => b_inv,
                        _ => {
                            let interval = coeffs.interval();
                            let coeffs2 = coeffs.clone();
                            let dist2 = dist.clone();
                            let cs = move |s: f64| {
                                let (_, c, _) = reduced_data(&coeffs2, &dist2, s)
                                    .expect("validated distribution data");
                                (&c + c.transpose()) * 0.5
                            };
                            let cs_prime = central_difference(&cs, t, interval);
                            &cal_i - cs_prime + &c_a * &b_inv * &c_a
                        }
                    }
                }
            }
        })
    };
    (make(0), make(1), make(2))
}

/// Report of the positive-semidefiniteness criterion that forces
/// n₊(I|𝔖) = 0: either 𝓒*𝓑⁻¹𝓒 − 𝓘 or 𝓒ₛ′ − 𝓒ₐ𝓑⁻¹𝓒ₐ − 𝓘 is ⪰ 0 on [a, b].
#[derive(Debug, Clone, Copy)]
pub struct CriterionReport {
    pub primary_form_psd: bool,
    pub alternative_form_psd: bool,
}

impl CriterionReport {
    pub fn holds(&self) -> bool {
        self.primary_form_psd || self.alternative_form_psd
    }
}

pub fn criterion_semidefinite(
    coeffs: &CoefficientPath,
    dist: &Distribution,
) -> Result<CriterionReport> {
    dist.validate(coeffs)?;
    let k = dist.k();
    if k == 0 {
        return Ok(CriterionReport { primary_form_psd: true, alternative_form_psd: true });
    }
    let eye = DMatrix::identity(k, k);
    let mut primary = true;
    let mut alternative = true;
    let interval = coeffs.interval();
    for t in coeffs.validation_grid() {
        let (cal_b, cal_c, cal_i) = reduced_data(coeffs, dist, t)?;
        let b_inv = solve_against(&cal_b, &eye, "reduced B")?;
        let form1 = cal_c.transpose() * &b_inv * &cal_c - &cal_i;
        let scale1 = inf_norm(&form1).max(1.0);
        if !SymForm::with_tol(form1, 1e-8 * scale1)?.is_positive_semidefinite() {
            primary = false;
        }
        let c_a = (&cal_c - cal_c.transpose()) * 0.5;
        let coeffs2 = coeffs.clone();
        let dist2 = dist.clone();
        let cs = move |s: f64| {
            let (_, c, _) = reduced_data(&coeffs2, &dist2, s).expect("validated data");
            (&c + c.transpose()) * 0.5
        };
        let cs_prime = central_difference(&cs, t, interval);
        let form2 = cs_prime - &c_a * &b_inv * &c_a - &cal_i;
        let scale2 = inf_norm(&form2).max(1.0);
        if !SymForm::with_tol(form2, 1e-7 * scale2)?.is_positive_semidefinite() {
            alternative = false;
        }
        if !primary && !alternative {
            break;
        }
    }
    Ok(CriterionReport { primary_form_psd: primary, alternative_form_psd: alternative })
}

/// A curve of symplectomorphisms preserving the vertical L₀, in block form
/// [[Z, 0], [Z⁻ᵀW, Z⁻ᵀ]] with Z(t) invertible and W(t) symmetric.
#[derive(Clone)]
pub struct L0Isomorphism {
    z: MatrixSampler,
    w: MatrixSampler,
}

impl L0Isomorphism {
    pub fn new(z: MatrixSampler, w: MatrixSampler) -> Self {
        L0Isomorphism { z, w }
    }

    pub fn identity(n: usize) -> Self {
        L0Isomorphism {
            z: constant_sampler(DMatrix::identity(n, n)),
            w: Arc::new(move |_t| DMatrix::zeros(n, n)),
        }
    }

    pub fn phi(&self, t: f64, n: usize) -> Result<DMatrix<f64>> {
        let z = (self.z)(t);
        let w = (self.w)(t);
        if z.nrows() != n || w.nrows() != n {
            return Err(Error::DimensionMismatch("L0 isomorphism blocks".into()));
        }
        let z_inv_t = z
            .transpose()
            .lu()
            .solve(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::Singular(format!("Z({t})")))?;
        let mut phi = DMatrix::zeros(2 * n, 2 * n);
        phi.view_mut((0, 0), (n, n)).copy_from(&z);
        phi.view_mut((n, 0), (n, n)).copy_from(&(&z_inv_t * (&w + w.transpose()) * 0.5));
        phi.view_mut((n, n), (n, n)).copy_from(&z_inv_t);
        Ok(phi)
    }

    pub fn validate(&self, interval: (f64, f64), n: usize, points: usize) -> Result<()> {
        for i in 0..points.max(2) {
            let t = interval.0 + (interval.1 - interval.0) * (i as f64) / ((points.max(2) - 1) as f64);
            let phi = self.phi(t, n)?;
            let residual = symplectic_residual(&phi);
            let scale = inf_norm(&phi).max(1.0);
            if residual > 1e-8 * scale * scale {
                return Err(Error::validation(
                    "isomorphism-symplectic",
                    format!("phi({t}) fails symplecticity by {residual:.3e}"),
                ));
            }
        }
        Ok(())
    }
}

/// Conjugates a system by the isomorphism: X̃ = φ′φ⁻¹ + φXφ⁻¹ and
/// ℓ̃₀ = φ(a)ℓ₀. Solutions map bijectively through φ.
pub fn apply_isomorphism(phi0: &L0Isomorphism, system: &SystemData) -> Result<SystemData> {
    let n = system.dim();
    let interval = system.interval();
    phi0.validate(interval, n, 64)?;

    let phi_at = {
        let phi0 = phi0.clone();
        move |t: f64| phi0.phi(t, n).expect("validated isomorphism")
    };
    let coeffs = system.coeffs.clone();
    let x_tilde = {
        let phi_at = phi_at.clone();
        Arc::new(move |t: f64| -> DMatrix<f64> {
            let phi = phi_at(t);
            let phi_inv = phi
                .clone()
                .lu()
                .solve(&DMatrix::identity(2 * n, 2 * n))
                .expect("validated isomorphism is invertible");
            let dphi = central_difference(&phi_at, t, interval);
            &dphi * &phi_inv + phi * coeffs.x_matrix(t) * &phi_inv
        })
    };

    // Structural sanity on a coarse grid before wrapping the blocks.
    for i in 0..33 {
        let t = interval.0 + (interval.1 - interval.0) * (i as f64) / 32.0;
        let x = x_tilde(t);
        let a = x.view((0, 0), (n, n)).into_owned();
        let d = x.view((n, n), (n, n)).into_owned();
        let defect = inf_norm(&(&d + a.transpose()));
        if defect > 1e-5 * inf_norm(&x).max(1.0) {
            return Err(Error::validation(
                "isomorphism-structure",
                format!("transformed coefficients leave sp(2n) at t = {t} by {defect:.3e}"),
            ));
        }
    }

    let block = |r: usize, c: usize| -> MatrixSampler {
        let x_tilde = Arc::clone(&x_tilde);
        Arc::new(move |t| {
            let x = x_tilde(t);
            let m = x.view((r * n, c * n), (n, n)).into_owned();
            if r != c {
                (&m + m.transpose()) * 0.5
            } else {
                m
            }
        })
    };
    let new_coeffs = CoefficientPath::new(
        interval,
        n,
        block(0, 0),
        block(0, 1),
        block(1, 0),
        Smoothness::C1,
    )?;

    let l0_frame = system.init.lagrangian_frame()?;
    let phi_a = phi0.phi(interval.0, n)?;
    let transformed = LagrangianFrame::from_stacked(&phi_a * l0_frame.stacked())?;
    let new_init = InitialData::from_lagrangian_frame(&transformed)?;
    SystemData::new(new_coeffs, new_init)
}

//! Galerkin discretization of the index forms and the splitting counts.
//!
//! Vector-valued piecewise-linear elements on a uniform mesh discretize
//! the variation space ℋ (start value in P, end value zero, free, or in
//! Q). The index form
//!
//!   I(v, w) = ∫ [B⁻¹(v′ − Av, w′ − Aw) + C(v, w)] dt
//!             − S(v(a), w(a)) [+ Θ(v(b), w(b))]
//!
//! is assembled with 3-point Gauss quadrature per element (exact for the
//! stiffness term with constant coefficients). The distribution span 𝔖_h
//! is the nodal interpolation of fields valued in the frame; 𝒦_h is its
//! I-orthogonal complement, so ℋ_h = 𝒦_h ⊕ 𝔖_h whenever I|𝔖_h is
//! nondegenerate. All reported counts are integers and must be stable
//! under one mesh doubling before a report is marked converged.

use nalgebra::{DMatrix, DVector};

use crate::bilinear::{inf_norm, nullspace, Subspace, SymForm};
use crate::error::{Error, Result};
use crate::flow::{
    focal_instants, integrate, maslov_index_of_system, FlowCurve, FlowOptions, FocalInstant,
    FundamentalSolution,
};
use crate::lagrangian::LagrangianCurve;
use crate::systems::{Distribution, SystemData};

const GAUSS_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Uniform mesh with m elements on [a, b].
#[derive(Debug, Clone)]
pub struct Mesh {
    a: f64,
    b: f64,
    m: usize,
}

impl Mesh {
    pub fn new(interval: (f64, f64), m: usize) -> Result<Self> {
        if !(interval.1 > interval.0) {
            return Err(Error::validation("mesh-interval", "need a < b"));
        }
        if m < 2 {
            return Err(Error::validation("mesh-size", "need at least two elements"));
        }
        Ok(Mesh { a: interval.0, b: interval.1, m })
    }

    pub fn elements(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / self.m as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.m {
            self.b
        } else {
            self.a + self.h() * j as f64
        }
    }
}

/// End-node condition of the trial space.
#[derive(Clone)]
pub enum EndCondition {
    Zero,
    Free,
    InSubspace(Subspace),
}

/// Piecewise-linear trial space with nodal vector degrees of freedom.
pub struct DiscreteSpace {
    pub mesh: Mesh,
    n: usize,
    start: Subspace,
    end: EndCondition,
    /// Per node: (first dof index, direction columns).
    node_blocks: Vec<(usize, DMatrix<f64>)>,
    dim: usize,
}

impl DiscreteSpace {
    pub fn new(mesh: Mesh, n: usize, start: Subspace, end: EndCondition) -> Result<Self> {
        if start.ambient_dim() != n {
            return Err(Error::DimensionMismatch("discrete space start subspace".into()));
        }
        if let EndCondition::InSubspace(q) = &end {
            if q.ambient_dim() != n {
                return Err(Error::DimensionMismatch("discrete space end subspace".into()));
            }
        }
        let eye = DMatrix::identity(n, n);
        let mut node_blocks = Vec::with_capacity(mesh.m + 1);
        let mut next = 0usize;
        for j in 0..=mesh.m {
            let dirs = if j == 0 {
                start.basis().clone()
            } else if j == mesh.m {
                match &end {
                    EndCondition::Zero => DMatrix::zeros(n, 0),
                    EndCondition::Free => eye.clone(),
                    EndCondition::InSubspace(q) => q.basis().clone(),
                }
            } else {
                eye.clone()
            };
            let width = dirs.ncols();
            node_blocks.push((next, dirs));
            next += width;
        }
        Ok(DiscreteSpace { mesh, n, start, end, node_blocks, dim: next })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn start(&self) -> &Subspace {
        &self.start
    }

    pub fn end(&self) -> &EndCondition {
        &self.end
    }

    pub fn node_offset(&self, j: usize) -> usize {
        self.node_blocks[j].0
    }

    pub fn node_dirs(&self, j: usize) -> &DMatrix<f64> {
        &self.node_blocks[j].1
    }

    /// Nodal values of the coefficient vector as columns per node.
    pub fn node_values(&self, coeffs: &DVector<f64>, j: usize) -> DVector<f64> {
        let (offset, dirs) = &self.node_blocks[j];
        let w = dirs.ncols();
        if w == 0 {
            return DVector::zeros(self.n);
        }
        dirs * coeffs.rows(*offset, w).into_owned()
    }
}

/// Assembles the index form on the space. `s_start` is subtracted at the
/// start node (on the start basis); `end_form` is added at the end node
/// (on the end-node dof basis).
pub fn assemble_index_form(
    system: &SystemData,
    space: &DiscreteSpace,
    end_form: Option<&DMatrix<f64>>,
) -> Result<SymForm> {
    let n = space.n;
    if system.dim() != n {
        return Err(Error::DimensionMismatch("assemble_index_form".into()));
    }
    let mesh = &space.mesh;
    let h = mesh.h();
    let mut m = DMatrix::zeros(space.dim, space.dim);

    for e in 0..mesh.m {
        let t0 = mesh.node(e);
        let (off_l, dirs_l) = &space.node_blocks[e];
        let (off_r, dirs_r) = &space.node_blocks[e + 1];
        let wl = dirs_l.ncols();
        let wr = dirs_r.ncols();
        if wl + wr == 0 {
            continue;
        }
        // Local dof directions and their hat values at the Gauss points.
        for g in 0..3 {
            let xi = 0.5 * (GAUSS_NODES[g] + 1.0);
            let tau = t0 + h * xi;
            let weight = GAUSS_WEIGHTS[g] * 0.5 * h;
            let phi = [1.0 - xi, xi];
            let dphi = [-1.0 / h, 1.0 / h];
            let a_mat = system.coeffs.a_at(tau);
            let b_inv = system.coeffs.b_inv_at(tau)?;
            let c_mat = system.coeffs.c_at(tau);

            // For each local dof: value v(tau) and the combination
            // v'(tau) - A v(tau) entering the B^{-1} term.
            let mut values: Vec<(usize, DVector<f64>, DVector<f64>)> =
                Vec::with_capacity(wl + wr);
            for (side, (off, dirs)) in [(0usize, (off_l, dirs_l)), (1, (off_r, dirs_r))] {
                for c in 0..dirs.ncols() {
                    let d = dirs.column(c).into_owned();
                    let val = &d * phi[side];
                    let slope = &d * dphi[side] - &a_mat * &val;
                    values.push((off + c, val, slope));
                }
            }
            for (iu, vu, su) in &values {
                let bsu = &b_inv * su;
                let cvu = &c_mat * vu;
                for (iw, vw, sw) in &values {
                    m[(*iu, *iw)] += weight * (sw.dot(&bsu) + vw.dot(&cvu));
                }
            }
        }
    }

    // Boundary couplings: -S at the start node, +end_form at the end node.
    let s = system.init.s();
    let p = space.start.dim();
    if p > 0 {
        if space.start.basis() != system.init.p().basis() {
            return Err(Error::validation(
                "assemble-start-basis",
                "space start basis must match the system initial data",
            ));
        }
        let (off, _) = space.node_blocks[0];
        for i in 0..p {
            for j in 0..p {
                m[(off + i, off + j)] -= s.matrix()[(i, j)];
            }
        }
    }
    if let Some(theta) = end_form {
        let (off, dirs) = &space.node_blocks[space.mesh.m];
        let w = dirs.ncols();
        if theta.nrows() != w || theta.ncols() != w {
            return Err(Error::DimensionMismatch("end boundary form".into()));
        }
        for i in 0..w {
            for j in 0..w {
                m[(off + i, off + j)] += 0.5 * (theta[(i, j)] + theta[(j, i)]);
            }
        }
    }
    SymForm::new(m)
}

/// Span of the nodal interpolants of frame-valued fields vanishing at the
/// start node (and at the end node unless `include_end`).
pub fn build_s_subspace(
    dist: &Distribution,
    space: &DiscreteSpace,
    include_end: bool,
) -> Result<Subspace> {
    let n = space.n;
    let k = dist.k();
    let mesh = &space.mesh;
    let last = if include_end { mesh.m } else { mesh.m - 1 };
    let count = if k == 0 { 0 } else { k * last };
    let mut basis = DMatrix::zeros(space.dim, count);
    let mut col = 0;
    for j in 1..=last {
        let (off, dirs) = &space.node_blocks[j];
        if dirs.ncols() != n {
            return Err(Error::validation(
                "s-subspace-node",
                "distribution members need full nodal freedom",
            ));
        }
        let y = dist.y_matrix(mesh.node(j), n);
        for i in 0..k {
            basis.view_mut((*off, col), (n, 1)).copy_from(&y.column(i));
            col += 1;
        }
    }
    if count == 0 {
        return Ok(Subspace::zero(space.dim));
    }
    Subspace::new(space.dim, basis)
}

/// I-orthogonal complement of 𝔖_h inside the discrete space.
///
/// Fails when I|𝔖_h is degenerate, which signals a focal endpoint of the
/// reduced problem.
pub fn build_k_subspace(index_form: &SymForm, s_space: &Subspace) -> Result<Subspace> {
    let dim = index_form.dim();
    if s_space.ambient_dim() != dim {
        return Err(Error::DimensionMismatch("build_k_subspace".into()));
    }
    let s = s_space.dim();
    if s == 0 {
        return Subspace::new(dim, DMatrix::identity(dim, dim));
    }
    let restricted = index_form.restrict(s_space)?;
    if !restricted.is_nondegenerate() {
        return Err(Error::ReducedFocalAtEndpoint(
            "index form degenerate on the distribution span".into(),
        ));
    }
    let pairing = s_space.basis().transpose() * index_form.matrix();
    let kernel = nullspace(&pairing, None);
    if kernel.ncols() != dim - s {
        return Err(Error::validation(
            "splitting-dimension",
            format!(
                "I-orthogonal complement has dimension {}, expected {}",
                kernel.ncols(),
                dim - s
            ),
        ));
    }
    Subspace::new(dim, kernel)
}

/// max |I(k_i, s_j)| over basis pairs, normalized by ‖I‖.
pub fn orthogonality_residual(form: &SymForm, k: &Subspace, s: &Subspace) -> f64 {
    if k.dim() == 0 || s.dim() == 0 {
        return 0.0;
    }
    let cross = k.basis().transpose() * form.matrix() * s.basis();
    let scale = inf_norm(form.matrix()).max(f64::MIN_POSITIVE);
    inf_norm(&cross) / scale
}

#[derive(Debug, Clone)]
pub struct FemOptions {
    pub mesh_elements: usize,
    pub max_elements: usize,
    pub flow: FlowOptions,
    /// Optional override for the zero threshold of every inertia count.
    pub inertia_tol: Option<f64>,
}

impl Default for FemOptions {
    fn default() -> Self {
        FemOptions {
            mesh_elements: 64,
            max_elements: 1024,
            flow: FlowOptions::default(),
            inertia_tol: None,
        }
    }
}

/// Extra measurements attached to an index report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Diagnostics {
    pub symplectic_drift: f64,
    pub isotropy_residual: f64,
    pub orthogonality_residual: f64,
    pub dim_h: usize,
    pub dim_k: usize,
    pub dim_s: usize,
    pub converged: bool,
    pub departure: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_minus_k_fixed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_minus_k_endpoint: Option<usize>,
}

/// All integer terms of the index identity plus the residual
/// maslov − (n₋(I|𝒦) − n₊(I|𝔖) − n₋(B(a)⁻¹|P) [− Q-term]).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IndexReport {
    pub maslov: i64,
    pub n_minus_k: usize,
    pub n_plus_s: usize,
    pub n_minus_gp: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_term: Option<usize>,
    pub identity_residual: i64,
    pub focal_instants: Vec<FocalInstant>,
    pub mesh_elements: usize,
    pub integration_steps: usize,
    pub diagnostics: Diagnostics,
}

impl IndexReport {
    pub fn identity_holds(&self) -> bool {
        self.identity_residual == 0
    }
}

fn splitting_counts(
    system: &SystemData,
    dist: &Distribution,
    m: usize,
    end: EndCondition,
    end_form: Option<&DMatrix<f64>>,
    inertia_tol: Option<f64>,
) -> Result<(usize, usize, usize, usize, usize, f64)> {
    let mesh = Mesh::new(system.interval(), m)?;
    let space = DiscreteSpace::new(mesh, system.dim(), system.init.p().clone(), end)?;
    let form = assemble_index_form(system, &space, end_form)?;
    let s_sub = build_s_subspace(dist, &space, false)?;
    let k_sub = build_k_subspace(&form, &s_sub)?;
    let i_k = form.restrict(&k_sub)?.inertia_opt(inertia_tol);
    let i_s = form.restrict(&s_sub)?.inertia_opt(inertia_tol);
    if i_k.dgn > 0 {
        return Err(Error::NonConvergence(format!(
            "index form degenerate on the orthogonal complement at m = {m}"
        )));
    }
    let orth = orthogonality_residual(&form, &k_sub, &s_sub);
    Ok((i_k.n_minus, i_s.n_plus, space.dim(), k_sub.dim(), s_sub.dim(), orth))
}

fn converge_counts(
    system: &SystemData,
    dist: &Distribution,
    opts: &FemOptions,
    end: EndCondition,
    end_form: Option<&DMatrix<f64>>,
) -> Result<(usize, usize, usize, usize, usize, usize, f64, bool)> {
    let mut m = opts.mesh_elements.max(2);
    let mut current = splitting_counts(system, dist, m, end.clone(), end_form, opts.inertia_tol)?;
    loop {
        let next_m = 2 * m;
        if next_m > opts.max_elements {
            return Err(Error::NonConvergence(format!(
                "index counts not mesh-stable at {m} elements"
            )));
        }
        let next = splitting_counts(system, dist, next_m, end.clone(), end_form, opts.inertia_tol)?;
        if next.0 == current.0 && next.1 == current.1 {
            let (nk, ns, dim_h, dim_k, dim_s, orth) = current;
            return Ok((nk, ns, dim_h, dim_k, dim_s, m, orth, true));
        }
        current = next;
        m = next_m;
    }
}

/// Computes every term of the fixed-endpoint index identity and checks it.
pub fn index_terms(
    system: &SystemData,
    dist: &Distribution,
    opts: &FemOptions,
) -> Result<IndexReport> {
    dist.validate(&system.coeffs)?;
    let solution = integrate(system, &opts.flow)?;
    let focal = focal_instants(system, &solution)?;
    let maslov = maslov_index_of_system(system, &solution, &opts.flow)?;
    let n_minus_gp = system.initial_index_term()?;

    let (n_minus_k, n_plus_s, dim_h, dim_k, dim_s, mesh_elements, orth, converged) =
        converge_counts(system, dist, opts, EndCondition::Zero, None)?;

    let identity_residual =
        maslov.index - (n_minus_k as i64 - n_plus_s as i64 - n_minus_gp as i64);
    Ok(IndexReport {
        maslov: maslov.index,
        n_minus_k,
        n_plus_s,
        n_minus_gp,
        q_term: None,
        identity_residual,
        focal_instants: focal,
        mesh_elements,
        integration_steps: solution.steps(),
        diagnostics: Diagnostics {
            symplectic_drift: solution.drift(),
            isotropy_residual: solution.isotropy(),
            orthogonality_residual: orth,
            dim_h,
            dim_k,
            dim_s,
            converged,
            departure: maslov.departure,
            n_minus_k_fixed: None,
            n_minus_k_endpoint: None,
        },
    })
}

/// The end-manifold operator S_γ(u, v) = −(α-block)(X-block)⁻¹ of the
/// solution plane at b, as an ambient symmetric form.
pub fn end_manifold_form(
    system: &SystemData,
    solution: &FundamentalSolution,
) -> Result<SymForm> {
    let n = system.dim();
    let (_, b) = solution.interval();
    let curve = FlowCurve::new(system, solution);
    let frame = curve.frame_at(b)?.orthonormalized();
    let x = frame.x_block().clone();
    let x_inv = x
        .lu()
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::EndpointFocal("end-manifold operator undefined".into()))?;
    let m = -(frame.y_block() * x_inv);
    SymForm::new(m)
}

/// Index identity with a variable endpoint: the end manifold contributes
/// Q_term = n₋((S^Q − S_γ)|_Q) and the complement count is taken in the
/// enlarged space with end values in Q.
pub fn variable_endpoint_terms(
    system: &SystemData,
    dist: &Distribution,
    q: &Subspace,
    sq: &SymForm,
    opts: &FemOptions,
) -> Result<IndexReport> {
    if q.ambient_dim() != system.dim() || sq.dim() != q.dim() {
        return Err(Error::DimensionMismatch("variable_endpoint_terms".into()));
    }
    dist.validate(&system.coeffs)?;
    let solution = integrate(system, &opts.flow)?;
    let focal = focal_instants(system, &solution)?;
    let maslov = maslov_index_of_system(system, &solution, &opts.flow)?;
    let n_minus_gp = system.initial_index_term()?;

    let s_gamma = end_manifold_form(system, &solution)?;
    let q_form = sq.sub(&s_gamma.restrict(q)?)?;
    let q_term = q_form.inertia().n_minus;

    let (k_fixed, n_plus_s, _, _, _, _, _, _) =
        converge_counts(system, dist, opts, EndCondition::Zero, None)?;
    let sq_matrix = sq.matrix().clone();
    let (n_minus_k, _ns2, dim_h, dim_k, dim_s, mesh_elements, orth, converged) = converge_counts(
        system,
        dist,
        opts,
        EndCondition::InSubspace(q.clone()),
        Some(&sq_matrix),
    )?;

    if n_minus_k != k_fixed + q_term {
        return Err(Error::NonConvergence(format!(
            "variable-endpoint complement count {n_minus_k} does not split as {k_fixed} + {q_term}"
        )));
    }

    let identity_residual = maslov.index
        - (n_minus_k as i64 - n_plus_s as i64 - n_minus_gp as i64 - q_term as i64);
    Ok(IndexReport {
        maslov: maslov.index,
        n_minus_k,
        n_plus_s,
        n_minus_gp,
        q_term: Some(q_term),
        identity_residual,
        focal_instants: focal,
        mesh_elements,
        integration_steps: solution.steps(),
        diagnostics: Diagnostics {
            symplectic_drift: solution.drift(),
            isotropy_residual: solution.isotropy(),
            orthogonality_residual: orth,
            dim_h,
            dim_k,
            dim_s,
            converged,
            departure: maslov.departure,
            n_minus_k_fixed: Some(k_fixed),
            n_minus_k_endpoint: Some(n_minus_k - k_fixed),
        },
    })
}

/// Constancy defect of the membership functional for a smooth candidate:
/// members of the Jacobi-in-the-frame-directions space keep
/// F(v)(t)ᵢ = α_v(t)(Yᵢ(t)) − ∫ₐᵗ [B(α_v, α_{Yᵢ}) + C(v, Yᵢ)] ds
/// constant in t. Returns max over the grid of the deviation from the
/// value at a, normalized by the candidate scale.
pub fn jacobi_direction_residual(
    system: &SystemData,
    dist: &Distribution,
    v: &dyn Fn(f64) -> DVector<f64>,
    v_prime: &dyn Fn(f64) -> DVector<f64>,
    samples: usize,
) -> Result<f64> {
    let n = system.dim();
    let k = dist.k();
    if k == 0 {
        return Ok(0.0);
    }
    let (a, b) = system.interval();
    let m = samples.max(16);
    let h = (b - a) / m as f64;
    let coeffs = &system.coeffs;
    let integrand = |t: f64| -> Result<DVector<f64>> {
        let vt = v(t);
        let vpt = v_prime(t);
        let alpha_v = crate::systems::alpha_of(coeffs, t, &vt, &vpt)?;
        let y = dist.y_matrix(t, n);
        let dy = dist.dy_matrix(t, n, (a, b));
        let alpha_y = coeffs.b_inv_at(t)? * (dy - coeffs.a_at(t) * &y);
        let b_mat = coeffs.b_at(t);
        let c_mat = coeffs.c_at(t);
        Ok(alpha_y.transpose() * &b_mat * &alpha_v + y.transpose() * &c_mat * &vt)
    };
    let f_value = |t: f64, integral: &DVector<f64>| -> Result<DVector<f64>> {
        let vt = v(t);
        let vpt = v_prime(t);
        let alpha_v = crate::systems::alpha_of(coeffs, t, &vt, &vpt)?;
        let y = dist.y_matrix(t, n);
        Ok(y.transpose() * alpha_v - integral)
    };
    let mut integral = DVector::zeros(k);
    let mut prev = integrand(a)?;
    let base = f_value(a, &integral)?;
    let mut worst = 0.0_f64;
    let mut scale = base.amax();
    for i in 1..=m {
        let t = a + h * i as f64;
        let cur = integrand(t)?;
        integral += (&prev + &cur) * (0.5 * h);
        prev = cur;
        let f_t = f_value(t, &integral)?;
        worst = worst.max((&f_t - &base).amax());
        scale = scale.max(f_t.amax());
    }
    Ok(worst / scale.max(1.0))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProfilePoint {
    pub t: f64,
    /// n₋ of the index form on the complement at this right endpoint;
    /// None when the splitting is unavailable (reduced-focal endpoint).
    pub index: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Evolution of i(t) = n₋(I_t|𝒦_t) over right endpoints in `t_grid`.
pub fn index_profile(
    system: &SystemData,
    dist: &Distribution,
    t_grid: &[f64],
    opts: &FemOptions,
) -> Result<Vec<ProfilePoint>> {
    dist.validate(&system.coeffs)?;
    let (a, b) = system.interval();
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t > a && t <= b) {
            points.push(ProfilePoint {
                t,
                index: None,
                note: Some("outside the interval".into()),
            });
            continue;
        }
        let sub = match system.restricted(t) {
            Ok(s) => s,
            Err(e) => {
                points.push(ProfilePoint { t, index: None, note: Some(e.to_string()) });
                continue;
            }
        };
        match converge_counts(&sub, dist, opts, EndCondition::Zero, None) {
            Ok((nk, _, _, _, _, _, _, _)) => {
                points.push(ProfilePoint { t, index: Some(nk as i64), note: None })
            }
            Err(e) => points.push(ProfilePoint { t, index: None, note: Some(e.to_string()) }),
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SharpReport {
    pub n_minus_k_sharp: usize,
    pub n_minus_k: usize,
    pub n_minus_theta_term: usize,
    pub intersection_dim: usize,
    pub expected_intersection: usize,
    pub identity_holds: bool,
    pub sharp_kernel_dim: usize,
}

/// Verifies the extended-form identity
/// n₋(I^#|𝒦^#) = n₋(I|𝒦) + n₋(Θ − φ(ℓ(b))) together with
/// dim(𝒦^# ∩ 𝔖^#) = k on the discretized spaces.
pub fn sharp_decomposition_check(
    system: &SystemData,
    dist: &Distribution,
    theta: &SymForm,
    opts: &FemOptions,
) -> Result<SharpReport> {
    let n = system.dim();
    if theta.dim() != n {
        return Err(Error::DimensionMismatch("sharp theta".into()));
    }
    dist.validate(&system.coeffs)?;
    let solution = integrate(system, &opts.flow)?;
    let beta = end_manifold_form(system, &solution)?;
    let theta_term = theta.sub(&beta)?;
    if !theta_term.is_nondegenerate() {
        return Err(Error::validation(
            "sharp-theta-nondegenerate",
            "Theta minus the endpoint chart value is degenerate",
        ));
    }
    let n_minus_theta_term = theta_term.inertia().n_minus;

    let (n_minus_k, _, _, _, _, _, _, _) =
        converge_counts(system, dist, opts, EndCondition::Zero, None)?;

    let compute_sharp = |m: usize| -> Result<(usize, usize, usize)> {
        let mesh = Mesh::new(system.interval(), m)?;
        let space =
            DiscreteSpace::new(mesh, n, system.init.p().clone(), EndCondition::Free)?;
        let theta_mat = theta.matrix().clone();
        let form = assemble_index_form(system, &space, Some(&theta_mat))?;
        let s_sub = build_s_subspace(dist, &space, false)?;
        let k_sub = build_k_subspace(&form, &s_sub)?;
        let ik = form.restrict(&k_sub)?.inertia();
        // dim(K# ∩ S#): kernel of the pairing of S# against S through I#.
        let s_sharp = build_s_subspace(dist, &space, true)?;
        let inter = if s_sub.dim() == 0 {
            s_sharp.dim()
        } else {
            let pairing = s_sub.basis().transpose() * form.matrix() * s_sharp.basis();
            nullspace(&pairing, None).ncols()
        };
        Ok((ik.n_minus, inter, form.inertia().dgn))
    };
    let mut m = opts.mesh_elements.max(2);
    let mut cur = compute_sharp(m)?;
    loop {
        let next_m = 2 * m;
        if next_m > opts.max_elements {
            return Err(Error::NonConvergence("sharp counts not mesh-stable".into()));
        }
        let next = compute_sharp(next_m)?;
        if next.0 == cur.0 && next.1 == cur.1 {
            break;
        }
        cur = next;
        m = next_m;
    }
    let (n_minus_k_sharp, intersection_dim, sharp_kernel_dim) = cur;
    let expected_intersection = dist.k();
    let identity_holds = n_minus_k_sharp == n_minus_k + n_minus_theta_term
        && intersection_dim == expected_intersection;
    Ok(SharpReport {
        n_minus_k_sharp,
        n_minus_k,
        n_minus_theta_term,
        intersection_dim,
        expected_intersection,
        identity_holds,
        sharp_kernel_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::SymForm;
    use crate::systems::{constant_sampler, Distribution, InitialData, MorseSturm};
    use nalgebra::{dvector, DMatrix, DVector};
    use std::f64::consts::PI;

    fn morse_system(
        g: &[f64],
        r: &[f64],
        interval: (f64, f64),
        init: InitialData,
    ) -> SystemData {
        let gf = SymForm::from_diagonal(g);
        let rm = constant_sampler(DMatrix::from_diagonal(&DVector::from_row_slice(r)));
        MorseSturm::new(interval, gf, rm, init).unwrap().to_symplectic().unwrap()
    }

    fn flat_line_system(interval: (f64, f64)) -> SystemData {
        morse_system(&[1.0], &[0.0], interval, InitialData::fixed_start(1))
    }

    #[test]
    fn interior_hat_stiffness_matches_hand_quadrature() {
        // With R = 0 and P = {0} the diagonal entry of an interior hat is
        // the stiffness integral 2/h.
        let sys = flat_line_system((0.0, 1.0));
        for m in [2usize, 4] {
            let mesh = Mesh::new((0.0, 1.0), m).unwrap();
            let space =
                DiscreteSpace::new(mesh, 1, Subspace::zero(1), EndCondition::Zero).unwrap();
            let form = assemble_index_form(&sys, &space, None).unwrap();
            let h = 1.0 / m as f64;
            assert!(
                (form.matrix()[(0, 0)] - 2.0 / h).abs() < 1e-12,
                "stiffness at m = {m}"
            );
        }
    }

    #[test]
    fn end_form_adds_exactly_the_boundary_coupling() {
        let sys = flat_line_system((0.0, 1.0));
        let mesh = Mesh::new((0.0, 1.0), 4).unwrap();
        let space =
            DiscreteSpace::new(mesh.clone(), 1, Subspace::zero(1), EndCondition::Free).unwrap();
        let bare = assemble_index_form(&sys, &space, None).unwrap();
        let theta = DMatrix::from_element(1, 1, -2.5);
        let with_theta = assemble_index_form(&sys, &space, Some(&theta)).unwrap();
        let diff = with_theta.matrix() - bare.matrix();
        let end_off = space.node_offset(4);
        assert!((diff[(end_off, end_off)] + 2.5).abs() < 1e-13);
        assert!(diff.amax() - 2.5 < 1e-13);
    }

    #[test]
    fn discrete_jacobi_field_appears_in_the_kernel_under_refinement() {
        // v'' = -v on [0, pi]: sin t lies in the continuum kernel; the
        // discrete residual of its interpolant must shrink with the mesh.
        let sys = morse_system(&[1.0], &[-1.0], (0.0, PI), InitialData::fixed_start(1));
        let mut previous = f64::INFINITY;
        for m in [8usize, 16, 32] {
            let mesh = Mesh::new((0.0, PI), m).unwrap();
            let space =
                DiscreteSpace::new(mesh.clone(), 1, Subspace::zero(1), EndCondition::Zero)
                    .unwrap();
            let form = assemble_index_form(&sys, &space, None).unwrap();
            let coeffs =
                DVector::from_fn(space.dim(), |i, _| mesh.node(i + 1).sin());
            let residual = (form.matrix() * &coeffs).amax();
            assert!(residual < previous * 0.6, "residual {residual} at m = {m}");
            previous = residual;
        }
    }

    #[test]
    fn s_subspace_dimension_counts() {
        let sys = morse_system(
            &[1.0, -1.0],
            &[-1.0, -1.0],
            (0.0, 1.0),
            InitialData::fixed_start(2),
        );
        let dist = Distribution::constant(vec![dvector![0.0, 1.0]]);
        let mesh = Mesh::new((0.0, 1.0), 4).unwrap();
        let space = DiscreteSpace::new(mesh, 2, Subspace::zero(2), EndCondition::Zero).unwrap();
        let s = build_s_subspace(&dist, &space, false).unwrap();
        assert_eq!(s.dim(), 3);
        let s_sharp_space = DiscreteSpace::new(
            Mesh::new((0.0, 1.0), 4).unwrap(),
            2,
            Subspace::zero(2),
            EndCondition::Free,
        )
        .unwrap();
        let s_sharp = build_s_subspace(&dist, &s_sharp_space, true).unwrap();
        assert_eq!(s_sharp.dim(), 4);
        let _ = sys;
    }

    #[test]
    fn k_subspace_is_everything_when_the_distribution_is_empty() {
        let sys = flat_line_system((0.0, 1.0));
        let mesh = Mesh::new((0.0, 1.0), 8).unwrap();
        let space = DiscreteSpace::new(mesh, 1, Subspace::zero(1), EndCondition::Zero).unwrap();
        let form = assemble_index_form(&sys, &space, None).unwrap();
        let s = build_s_subspace(&Distribution::empty(), &space, false).unwrap();
        let k = build_k_subspace(&form, &s).unwrap();
        assert_eq!(k.dim(), space.dim());
    }

    #[test]
    fn product_complement_lives_in_the_positive_factor() {
        let sys = morse_system(
            &[1.0, -1.0],
            &[-1.0, -1.0],
            (0.0, 1.5 * PI),
            InitialData::fixed_start(2),
        );
        let dist = Distribution::constant(vec![dvector![0.0, 1.0]]);
        let mesh = Mesh::new(sys.interval(), 32).unwrap();
        let space = DiscreteSpace::new(mesh, 2, Subspace::zero(2), EndCondition::Zero).unwrap();
        let form = assemble_index_form(&sys, &space, None).unwrap();
        let s = build_s_subspace(&dist, &space, false).unwrap();
        let k = build_k_subspace(&form, &s).unwrap();
        assert_eq!(k.dim() + s.dim(), space.dim());
        assert!(orthogonality_residual(&form, &k, &s) < 1e-10);
        // Second-factor nodal components of complement members vanish.
        for c in 0..k.dim() {
            let coeffs = k.basis().column(c).into_owned();
            for j in 1..32 {
                let v = space.node_values(&coeffs, j);
                assert!(v[1].abs() < 1e-8, "factor leak at node {j}: {}", v[1]);
            }
        }
    }

    #[test]
    fn riemannian_index_terms() {
        let sys = morse_system(&[1.0], &[-1.0], (0.0, 1.5 * PI), InitialData::fixed_start(1));
        let report = index_terms(&sys, &Distribution::empty(), &FemOptions::default()).unwrap();
        assert_eq!(report.maslov, 1);
        assert_eq!(report.n_minus_k, 1);
        assert_eq!(report.n_plus_s, 0);
        assert_eq!(report.n_minus_gp, 0);
        assert_eq!(report.identity_residual, 0);
        assert!(report.diagnostics.converged);
    }

    #[test]
    fn end_manifold_operator_of_the_flat_line() {
        // v'' = 0 on [0,1] with v(0) = 0: solutions t·c give S_gamma = -1.
        let sys = flat_line_system((0.0, 1.0));
        let sol = integrate(&sys, &FlowOptions::default()).unwrap();
        let s_gamma = end_manifold_form(&sys, &sol).unwrap();
        assert!((s_gamma.matrix()[(0, 0)] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn variable_endpoint_q_terms_for_the_flat_line() {
        let sys = flat_line_system((0.0, 1.0));
        let q = Subspace::full(1);
        for (sq_val, expected_q) in [(0.0, 0usize), (-2.0, 1usize)] {
            let sq = SymForm::from_diagonal(&[sq_val]);
            let report = variable_endpoint_terms(
                &sys,
                &Distribution::empty(),
                &q,
                &sq,
                &FemOptions::default(),
            )
            .unwrap();
            assert_eq!(report.q_term, Some(expected_q), "sq = {sq_val}");
            assert_eq!(report.identity_residual, 0, "sq = {sq_val}");
        }
    }

    #[test]
    fn zero_q_degenerates_to_the_fixed_identity() {
        let sys = flat_line_system((0.0, 1.0));
        let q = Subspace::zero(1);
        let sq = SymForm::zero(0);
        let report = variable_endpoint_terms(
            &sys,
            &Distribution::empty(),
            &q,
            &sq,
            &FemOptions::default(),
        )
        .unwrap();
        assert_eq!(report.q_term, Some(0));
        assert_eq!(report.identity_residual, 0);
    }

    #[test]
    fn profile_of_the_sine_system_jumps_at_the_conjugate_point() {
        let sys = morse_system(&[1.0], &[-1.0], (0.0, 1.5 * PI), InitialData::fixed_start(1));
        let opts = FemOptions { mesh_elements: 32, ..FemOptions::default() };
        let grid = [1.0, 2.5, 3.6, 4.4];
        let profile = index_profile(&sys, &Distribution::empty(), &grid, &opts).unwrap();
        assert_eq!(profile[0].index, Some(0));
        assert_eq!(profile[1].index, Some(0));
        assert_eq!(profile[2].index, Some(1));
        assert_eq!(profile[3].index, Some(1));
    }

    #[test]
    fn sharp_identity_with_positive_definite_shift() {
        // Theta with Theta - phi(l(b)) positive definite keeps the count.
        let sys = morse_system(&[1.0], &[-1.0], (0.0, 1.5 * PI), InitialData::fixed_start(1));
        let sol = integrate(&sys, &FlowOptions::default()).unwrap();
        let beta = end_manifold_form(&sys, &sol).unwrap();
        let theta = SymForm::new(beta.matrix() + DMatrix::identity(1, 1)).unwrap();
        let report = sharp_decomposition_check(
            &sys,
            &Distribution::empty(),
            &theta,
            &FemOptions::default(),
        )
        .unwrap();
        assert_eq!(report.n_minus_theta_term, 0);
        assert_eq!(report.n_minus_k_sharp, report.n_minus_k);
        assert_eq!(report.intersection_dim, 0);
        assert!(report.identity_holds);
    }
}

//! Finite-dimensional validator for index jumps of form curves.
//!
//! For a C¹ curve of symmetric forms B(t) restricted to a C¹ family of
//! subspaces D_t = Ker F(t), the index of the restriction B̄(t) jumps at a
//! degenerate instant t₀ by the index of the restricted derivative
//!
//!   B̄′(t₀)(v, w) = d/dt B(t)(v(t), w(t))|_{t₀},  v, w ∈ Ker B̄(t₀),
//!
//! along extension curves v(t) ∈ D_t: forward,
//! n₋(B̄(t)) = n₋(B̄(t₀)) + n₋(B̄′(t₀)) for small t > t₀, and two-sided,
//! n₋(B̄(t₀−ε)) − n₋(B̄(t₀+ε)) = sgn(B̄′(t₀)).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bilinear::{nullspace, Subspace, SymForm};
use crate::error::{Error, Result};
use crate::systems::MatrixSampler;

const FD_STEP_REL: f64 = 1e-5;
/// Geometric sweep for the one-sided evaluation offsets.
const EPS_SWEEP: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// How kernel vectors are extended into the moving subspace family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtensionKind {
    /// v(t) = (I − F⁺F) v, the orthogonal projection onto Ker F(t).
    Orthogonal,
    /// Oblique projection weighted by diag(1, 2, ..., d).
    Weighted,
}

/// A family of subspaces D_t = Ker F(t) for a surjective C¹ map family.
#[derive(Clone)]
pub struct SubspaceFamily {
    f: MatrixSampler,
}

impl SubspaceFamily {
    pub fn new(f: MatrixSampler) -> Self {
        SubspaceFamily { f }
    }

    pub fn map_at(&self, t: f64) -> DMatrix<f64> {
        (self.f)(t)
    }

    pub fn basis_at(&self, t: f64) -> DMatrix<f64> {
        nullspace(&(self.f)(t), None)
    }

    /// Extension of an ambient vector into D_t.
    pub fn project(&self, t: f64, v: &DVector<f64>, kind: ExtensionKind) -> Result<DVector<f64>> {
        let f = (self.f)(t);
        let w: DMatrix<f64> = match kind {
            ExtensionKind::Orthogonal => DMatrix::identity(v.len(), v.len()),
            ExtensionKind::Weighted => DMatrix::from_fn(v.len(), v.len(), |i, j| {
                if i == j {
                    1.0 / (i as f64 + 1.0)
                } else {
                    0.0
                }
            }),
        };
        // v(t) = v - W F^T (F W F^T)^{-1} F v vanishes under F and equals v
        // when F v = 0 already.
        let fw = &f * &w;
        let gram = &fw * f.transpose();
        let rhs = &f * v;
        let lambda = gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("subspace family map is not surjective".into()))?;
        Ok(v - w * f.transpose() * lambda)
    }
}

/// A curve of symmetric forms on a fixed ambient space, optionally
/// restricted to a moving subspace family.
#[derive(Clone)]
pub struct FormCurve {
    interval: (f64, f64),
    dim: usize,
    form: MatrixSampler,
    family: Option<SubspaceFamily>,
}

impl FormCurve {
    pub fn new(interval: (f64, f64), dim: usize, form: MatrixSampler) -> Result<Self> {
        if !(interval.1 > interval.0) {
            return Err(Error::validation("form-curve-interval", "need a < b"));
        }
        Ok(FormCurve { interval, dim, form, family: None })
    }

    pub fn with_family(
        interval: (f64, f64),
        dim: usize,
        form: MatrixSampler,
        family: SubspaceFamily,
    ) -> Result<Self> {
        let mut c = FormCurve::new(interval, dim, form)?;
        // The family must have constant dimension over the interval.
        let d0 = family.basis_at(interval.0).ncols();
        for i in 0..=32 {
            let t = interval.0 + (interval.1 - interval.0) * (i as f64) / 32.0;
            let d = family.basis_at(t).ncols();
            if d != d0 {
                return Err(Error::validation(
                    "family-dimension",
                    format!("subspace dimension jumps from {d0} to {d} at t = {t}"),
                ));
            }
        }
        c.family = Some(family);
        Ok(c)
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn form_at(&self, t: f64) -> Result<SymForm> {
        SymForm::new((self.form)(t))
    }

    pub fn family(&self) -> Option<&SubspaceFamily> {
        self.family.as_ref()
    }

    fn domain_basis(&self, t: f64) -> Result<DMatrix<f64>> {
        match &self.family {
            Some(fam) => Ok(fam.basis_at(t)),
            None => Ok(DMatrix::identity(self.dim, self.dim)),
        }
    }

    /// B̄(t) on an orthonormal basis of D_t, returned with that basis.
    pub fn restricted_at(&self, t: f64) -> Result<(Subspace, SymForm)> {
        let basis = self.domain_basis(t)?;
        let sub = Subspace::new(self.dim, basis)?;
        let form = self.form_at(t)?.restrict(&sub)?;
        Ok((sub, form))
    }

    pub fn n_minus_restricted(&self, t: f64) -> Result<usize> {
        Ok(self.restricted_at(t)?.1.inertia().n_minus)
    }

    /// Zero threshold for classifying the kernel at a numerically located
    /// degenerate instant: the localization residual must land inside the
    /// kernel band, so the band is tied to the ambient scale.
    pub fn kernel_tol(&self, t: f64) -> f64 {
        1e-7 * crate::bilinear::inf_norm(&(self.form)(t)).max(1.0)
    }

    /// Ambient kernel vectors of B̄(t₀), classified at the kernel band.
    pub fn restricted_kernel(&self, t0: f64) -> Result<Vec<DVector<f64>>> {
        let (sub, form) = self.restricted_at(t0)?;
        let tol = self.kernel_tol(t0).max(form.tol());
        let inertia = form.inertia_with_tol(tol);
        let mut kernel = Vec::with_capacity(inertia.dgn);
        if inertia.dgn == 0 {
            return Ok(kernel);
        }
        let coords = nullspace(form.matrix(), Some(tol));
        for c in 0..coords.ncols() {
            kernel.push(sub.basis() * coords.column(c).into_owned());
        }
        Ok(kernel)
    }

    /// The restricted derivative B̄′(t₀) on the kernel of B̄(t₀), computed
    /// by differencing t ↦ B(t)(v(t), w(t)) along extension curves.
    pub fn restricted_derivative(&self, t0: f64, kind: ExtensionKind) -> Result<SymForm> {
        let kernel = self.restricted_kernel(t0)?;
        let r = kernel.len();
        if r == 0 {
            return Ok(SymForm::zero(0));
        }
        let (a, b) = self.interval;
        let h = (b - a) * FD_STEP_REL;
        let lo = (t0 - h).max(a);
        let hi = (t0 + h).min(b);
        let extend = |t: f64, v: &DVector<f64>| -> Result<DVector<f64>> {
            match &self.family {
                Some(fam) => fam.project(t, v, kind),
                None => Ok(v.clone()),
            }
        };
        let mut deriv = DMatrix::zeros(r, r);
        let b_lo = (self.form)(lo);
        let b_hi = (self.form)(hi);
        for i in 0..r {
            let vi_lo = extend(lo, &kernel[i])?;
            let vi_hi = extend(hi, &kernel[i])?;
            for j in 0..r {
                let vj_lo = extend(lo, &kernel[j])?;
                let vj_hi = extend(hi, &kernel[j])?;
                let g_lo = (vi_lo.transpose() * &b_lo * vj_lo)[(0, 0)];
                let g_hi = (vi_hi.transpose() * &b_hi * vj_hi)[(0, 0)];
                deriv[(i, j)] = (g_hi - g_lo) / (hi - lo);
            }
        }
        SymForm::new(deriv)
    }
}

/// Result of the one-sided jump check at a degenerate instant.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct JumpReport {
    pub t0: f64,
    pub n_before: usize,
    pub n_after: usize,
    pub predicted_after: usize,
    pub derivative_n_minus: usize,
    pub derivative_signature: i64,
    /// Whether Ker(B̄(t₀)) ⊆ Ker(B(t₀)) (the fixed-domain hypothesis).
    pub kernel_contained_in_ambient: bool,
    pub consistent: bool,
}

fn stable_count(values: &[usize]) -> Result<usize> {
    // Require the two finest offsets to agree.
    let l = values.len();
    if values[l - 1] == values[l - 2] {
        Ok(values[l - 1])
    } else {
        Err(Error::NonConvergence(format!(
            "one-sided counts do not stabilize: {values:?}"
        )))
    }
}

/// Checks n₋(B̄(t₀ + ε)) = n₋(B̄(t₀)) + n₋(B̄′(t₀)) for small ε > 0.
pub fn jump_forward(curve: &FormCurve, t0: f64) -> Result<JumpReport> {
    let (a, b) = curve.interval();
    if !(t0 >= a && t0 < b) {
        return Err(Error::validation("jump-instant", "t0 must lie in [a, b)"));
    }
    let (_, form0) = curve.restricted_at(t0)?;
    let n_before = form0.inertia_with_tol(curve.kernel_tol(t0).max(form0.tol())).n_minus;
    let deriv = curve.restricted_derivative(t0, ExtensionKind::Orthogonal)?;
    let di = deriv.inertia();
    if deriv.dim() > 0 && di.dgn > 0 {
        return Err(Error::DegenerateRestrictedDerivative(t0));
    }
    let predicted_after = n_before + di.n_minus;

    let len = b - a;
    let mut after = Vec::new();
    for &e in &EPS_SWEEP {
        let t = (t0 + e * len).min(b);
        after.push(curve.n_minus_restricted(t)?);
    }
    let n_after = stable_count(&after)?;

    let kernel = curve.restricted_kernel(t0)?;
    let ambient = curve.form_at(t0)?;
    let scale = crate::bilinear::inf_norm(ambient.matrix()).max(1.0);
    let kernel_contained_in_ambient = kernel
        .iter()
        .all(|v| (ambient.matrix() * v).amax() <= 1e-7 * scale);

    Ok(JumpReport {
        t0,
        n_before,
        n_after,
        predicted_after,
        derivative_n_minus: di.n_minus,
        derivative_signature: di.signature(),
        kernel_contained_in_ambient,
        consistent: n_after == predicted_after,
    })
}

/// Two-sided jump: n₋(B̄(t₀−ε)) − n₋(B̄(t₀+ε)) = sgn(B̄′(t₀)).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TwoSidedReport {
    pub t0: f64,
    pub difference: i64,
    pub derivative_signature: i64,
    pub consistent: bool,
}

pub fn jump_two_sided(curve: &FormCurve, t0: f64) -> Result<TwoSidedReport> {
    let (a, b) = curve.interval();
    if !(t0 > a && t0 < b) {
        return Err(Error::validation("jump-instant", "t0 must lie in (a, b)"));
    }
    let deriv = curve.restricted_derivative(t0, ExtensionKind::Orthogonal)?;
    let di = deriv.inertia();
    if deriv.dim() > 0 && di.dgn > 0 {
        return Err(Error::DegenerateRestrictedDerivative(t0));
    }
    let len = b - a;
    let mut before = Vec::new();
    let mut after = Vec::new();
    for &e in &EPS_SWEEP {
        before.push(curve.n_minus_restricted((t0 - e * len).max(a))?);
        after.push(curve.n_minus_restricted((t0 + e * len).min(b))?);
    }
    let n_before = stable_count(&before)? as i64;
    let n_after = stable_count(&after)? as i64;
    let difference = n_before - n_after;
    Ok(TwoSidedReport {
        t0,
        difference,
        derivative_signature: di.signature(),
        consistent: difference == di.signature(),
    })
}

/// Degenerate instants of the restricted curve located by scanning for
/// dips of the smallest absolute eigenvalue.
pub fn locate_degenerate_instants(curve: &FormCurve, samples: usize) -> Result<Vec<f64>> {
    let (a, b) = curve.interval();
    let m = samples.max(16);
    let small = |t: f64| -> Result<f64> {
        let (_, form) = curve.restricted_at(t)?;
        Ok(form
            .eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, &v| acc.min(v.abs())))
    };
    let mut ts = Vec::with_capacity(m + 1);
    let mut vals = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let t = a + (b - a) * (i as f64) / (m as f64);
        ts.push(t);
        vals.push(small(t)?);
    }
    let mut out = Vec::new();
    let tol = (b - a) * 1e-12;
    for i in 1..m {
        if vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1] {
            let mut f = |t: f64| small(t);
            let (t0, v0) =
                crate::lagrangian::golden_section_min(&mut f, ts[i - 1], ts[i + 1], tol)?;
            if v0 < 1e-7 {
                out.push(t0);
            }
        }
    }
    Ok(out)
}

pub fn constant_family(f: DMatrix<f64>) -> SubspaceFamily {
    SubspaceFamily::new(Arc::new(move |_t| f.clone()))
}

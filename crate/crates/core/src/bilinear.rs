//! Symmetric bilinear forms over ℝⁿ with tolerance-aware inertia.
//!
//! A form is stored as a dense symmetric matrix together with a zero
//! threshold used to classify eigenvalues. The inertia triple
//! (n₊, n₋, dgn) counts eigenvalues above, below and inside the threshold
//! band; signature = n₊ − n₋ and rank = n₊ + n₋.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Machine epsilon scale factor used by the default zero thresholds.
const TOL_FACTOR: f64 = 64.0;

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Eigenvalue counts of a symmetric form: positives, negatives, near-zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub n_plus: usize,
    pub n_minus: usize,
    pub dgn: usize,
}

impl Inertia {
    pub fn signature(&self) -> i64 {
        self.n_plus as i64 - self.n_minus as i64
    }

    pub fn rank(&self) -> usize {
        self.n_plus + self.n_minus
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.dgn == 0
    }
}

/// A symmetric bilinear form as a dense matrix with cached spectrum.
///
/// Construction symmetrizes the input as (M + Mᵀ)/2 and records the
/// asymmetry norm for diagnostics. The default zero threshold is
/// dim · ‖B‖₂ · ε · 64; pass an explicit threshold through
/// [`SymForm::with_tol`] or per call via [`SymForm::inertia_with_tol`].
#[derive(Debug, Clone)]
pub struct SymForm {
    dim: usize,
    mat: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    tol: f64,
    asymmetry: f64,
}

impl SymForm {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        Self::build(mat, None)
    }

    pub fn with_tol(mat: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) {
            return Err(Error::validation("symform-tol", "tolerance must be nonnegative"));
        }
        Self::build(mat, Some(tol))
    }

    pub fn zero(dim: usize) -> Self {
        Self::build(DMatrix::zeros(dim, dim), None).expect("zero form is well formed")
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mat = DMatrix::from_diagonal(&DVector::from_row_slice(diag));
        Self::build(mat, None).expect("diagonal form is well formed")
    }

    fn build(mat: DMatrix<f64>, tol: Option<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric form needs a square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let dim = mat.nrows();
        let sym = (&mat + mat.transpose()) * 0.5;
        let asymmetry = inf_norm(&(&mat - mat.transpose())) * 0.5;
        let eigenvalues = if dim == 0 {
            Vec::new()
        } else {
            let mut ev: Vec<f64> = sym.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
            ev
        };
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("symform-finite", "non-finite entries"));
        }
        let spectral_norm = eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let tol = tol.unwrap_or(dim as f64 * spectral_norm * f64::EPSILON * TOL_FACTOR);
        Ok(SymForm { dim, mat: sym, eigenvalues, tol, asymmetry })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn apply(&self, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (v.transpose() * &self.mat * w)[(0, 0)]
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia_with_tol(self.tol)
    }

    pub fn inertia_opt(&self, override_tol: Option<f64>) -> Inertia {
        match override_tol {
            Some(t) => self.inertia_with_tol(t),
            None => self.inertia(),
        }
    }

    pub fn inertia_with_tol(&self, tol: f64) -> Inertia {
        let mut inertia = Inertia { n_plus: 0, n_minus: 0, dgn: 0 };
        for &ev in &self.eigenvalues {
            if ev > tol {
                inertia.n_plus += 1;
            } else if ev < -tol {
                inertia.n_minus += 1;
            } else {
                inertia.dgn += 1;
            }
        }
        inertia
    }

    pub fn n_minus(&self) -> usize {
        self.inertia().n_minus
    }

    pub fn n_plus(&self) -> usize {
        self.inertia().n_plus
    }

    pub fn is_nondegenerate(&self) -> bool {
        self.inertia().dgn == 0
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.eigenvalues.first().map_or(true, |&lo| lo >= -self.tol)
    }

    pub fn neg(&self) -> SymForm {
        SymForm::build(-&self.mat, Some(self.tol)).expect("negation preserves shape")
    }

    pub fn add(&self, other: &SymForm) -> Result<SymForm> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch("form addition".into()));
        }
        SymForm::new(&self.mat + &other.mat)
    }

    pub fn sub(&self, other: &SymForm) -> Result<SymForm> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch("form subtraction".into()));
        }
        SymForm::new(&self.mat - &other.mat)
    }

    /// Restriction WᵀBW expressed on the basis of `w`.
    ///
    /// The restricted form keeps at least the ambient zero threshold, so a
    /// restriction that collapses to roundoff (e.g. a metric on a null
    /// plane) reads as degenerate rather than as spurious inertia.
    pub fn restrict(&self, w: &Subspace) -> Result<SymForm> {
        if w.ambient_dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "restrict: form dim {} vs ambient {}",
                self.dim,
                w.ambient_dim()
            )));
        }
        let restricted = SymForm::new(w.basis().transpose() * &self.mat * w.basis())?;
        let tol = restricted.tol.max(self.tol);
        SymForm::with_tol(restricted.mat, tol)
    }

    /// B-orthogonal complement {v : B(v, w) = 0 for all w in W}.
    ///
    /// Requires the ambient form to be nondegenerate.
    pub fn orthogonal_complement(&self, w: &Subspace) -> Result<Subspace> {
        if w.ambient_dim() != self.dim {
            return Err(Error::DimensionMismatch("orthogonal_complement".into()));
        }
        if !self.is_nondegenerate() {
            return Err(Error::DegenerateForm(
                "orthogonal complement needs a nondegenerate ambient form".into(),
            ));
        }
        let pairing = w.basis().transpose() * &self.mat;
        let basis = nullspace(&pairing, None);
        Subspace::new(self.dim, basis)
    }
}

/// True iff gR is symmetric within the tolerance, i.e. R is g-symmetric.
pub fn check_g_symmetric(g: &SymForm, r: &DMatrix<f64>, tol: Option<f64>) -> Result<bool> {
    if r.nrows() != g.dim() || r.ncols() != g.dim() {
        return Err(Error::DimensionMismatch("check_g_symmetric".into()));
    }
    let gr = g.matrix() * r;
    let residual = inf_norm(&(&gr - gr.transpose()));
    let tol = tol.unwrap_or(g.dim() as f64 * inf_norm(&gr) * f64::EPSILON * TOL_FACTOR);
    Ok(residual <= tol)
}

/// A subspace of ℝⁿ spanned by the full-column-rank `basis` matrix.
#[derive(Debug, Clone)]
pub struct Subspace {
    ambient_dim: usize,
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn new(ambient_dim: usize, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != ambient_dim {
            return Err(Error::DimensionMismatch(format!(
                "subspace basis has {} rows in ambient dim {}",
                basis.nrows(),
                ambient_dim
            )));
        }
        if basis.ncols() > 0 {
            let svd = basis.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            let rank_tol = basis.nrows().max(basis.ncols()) as f64 * smax * f64::EPSILON * TOL_FACTOR;
            if smin <= rank_tol {
                return Err(Error::validation(
                    "subspace-rank",
                    format!("basis columns are linearly dependent (sigma_min = {smin:.3e})"),
                ));
            }
        }
        Ok(Subspace { ambient_dim, basis })
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Subspace { ambient_dim, basis: DMatrix::zeros(ambient_dim, 0) }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Subspace { ambient_dim, basis: DMatrix::identity(ambient_dim, ambient_dim) }
    }

    pub fn span_of(ambient_dim: usize, columns: &[DVector<f64>]) -> Result<Self> {
        let basis = DMatrix::from_columns(columns);
        Subspace::new(ambient_dim, basis)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Orthonormal basis of the same span (thin QR).
    pub fn orthonormalized(&self) -> Subspace {
        if self.dim() == 0 {
            return self.clone();
        }
        let q = thin_q(&self.basis);
        Subspace { ambient_dim: self.ambient_dim, basis: q }
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        if self.dim() == 0 {
            return v.amax() <= tol;
        }
        let q = self.orthonormalized();
        let residual = v - q.basis() * (q.basis().transpose() * v);
        residual.amax() <= tol
    }
}

/// Thin Q factor of a full-column-rank matrix.
pub fn thin_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    // Fix signs so the factorization is deterministic across backends.
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Orthonormal nullspace basis of `m`, columns spanning {x : m x = 0}.
pub fn nullspace(m: &DMatrix<f64>, tol: Option<f64>) -> DMatrix<f64> {
    let rows = m.nrows();
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    // The SVD here is thin; pad wide matrices with zero rows so that v_t
    // carries a full orthonormal basis of the domain.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("svd with v requested");
    let smax = svd.singular_values.max();
    let tol = tol.unwrap_or(rows.max(cols) as f64 * smax * f64::EPSILON * TOL_FACTOR);
    let mut kernel_cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..v_t.nrows() {
        if svd.singular_values[i] <= tol {
            kernel_cols.push(v_t.row(i).transpose());
        }
    }
    if kernel_cols.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&kernel_cols)
    }
}

/// Numerical rank with a scale-aware threshold.
pub fn rank(m: &DMatrix<f64>, tol: Option<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = tol.unwrap_or(m.nrows().max(m.ncols()) as f64 * smax * f64::EPSILON * TOL_FACTOR);
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inertia_of_diagonal_form() {
        let b = SymForm::from_diagonal(&[2.0, -3.0, 0.0]);
        assert_eq!(b.inertia(), Inertia { n_plus: 1, n_minus: 1, dgn: 1 });
    }

    #[test]
    fn inertia_of_minkowski_metric() {
        let g = SymForm::from_diagonal(&[1.0, 1.0, -1.0]);
        assert_eq!(g.inertia(), Inertia { n_plus: 2, n_minus: 1, dgn: 0 });
        assert_eq!(g.inertia().signature(), 1);
    }

    #[test]
    fn negation_swaps_type_numbers() {
        let b = SymForm::from_diagonal(&[5.0, -1.0, -2.0, 0.0]);
        let i = b.inertia();
        let ni = b.neg().inertia();
        assert_eq!(ni.n_plus, i.n_minus);
        assert_eq!(ni.n_minus, i.n_plus);
        assert_eq!(ni.dgn, i.dgn);
    }

    #[test]
    fn restriction_to_axis_and_null_vector() {
        let b = SymForm::from_diagonal(&[1.0, -1.0]);
        let w1 = Subspace::span_of(2, &[DVector::from_row_slice(&[1.0, 0.0])]).unwrap();
        let r1 = b.restrict(&w1).unwrap();
        assert_eq!(r1.inertia(), Inertia { n_plus: 1, n_minus: 0, dgn: 0 });
        assert!((r1.matrix()[(0, 0)] - 1.0).abs() < 1e-14);

        let w2 = Subspace::span_of(2, &[DVector::from_row_slice(&[1.0, 1.0])]).unwrap();
        let r2 = b.restrict(&w2).unwrap();
        assert_eq!(r2.inertia(), Inertia { n_plus: 0, n_minus: 0, dgn: 1 });
    }

    #[test]
    fn restriction_of_minkowski_plane() {
        let g = SymForm::from_diagonal(&[1.0, 1.0, -1.0]);
        let w = Subspace::span_of(
            3,
            &[
                DVector::from_row_slice(&[1.0, 0.0, 0.0]),
                DVector::from_row_slice(&[0.0, 0.0, 1.0]),
            ],
        )
        .unwrap();
        assert_eq!(g.restrict(&w).unwrap().inertia(), Inertia { n_plus: 1, n_minus: 1, dgn: 0 });
    }

    #[test]
    fn orthogonal_complement_in_indefinite_metric() {
        let g = SymForm::from_diagonal(&[1.0, -1.0]);
        let w = Subspace::span_of(2, &[DVector::from_row_slice(&[1.0, 0.0])]).unwrap();
        let c = g.orthogonal_complement(&w).unwrap();
        assert_eq!(c.dim(), 1);
        assert!(c.contains(&DVector::from_row_slice(&[0.0, 1.0]), 1e-12));

        let g3 = SymForm::from_diagonal(&[1.0, 1.0, -1.0]);
        let w3 = Subspace::span_of(3, &[DVector::from_row_slice(&[0.0, 0.0, 1.0])]).unwrap();
        let c3 = g3.orthogonal_complement(&w3).unwrap();
        assert_eq!(c3.dim(), 2);
        assert!(c3.contains(&DVector::from_row_slice(&[1.0, 0.0, 0.0]), 1e-12));
        assert!(c3.contains(&DVector::from_row_slice(&[0.0, 1.0, 0.0]), 1e-12));
    }

    #[test]
    fn orthogonal_complement_rejects_degenerate_ambient() {
        let g = SymForm::from_diagonal(&[1.0, 0.0]);
        let w = Subspace::span_of(2, &[DVector::from_row_slice(&[1.0, 0.0])]).unwrap();
        assert!(g.orthogonal_complement(&w).is_err());
    }

    #[test]
    fn g_symmetry_checks() {
        let g = SymForm::from_diagonal(&[1.0, -1.0]);
        let r = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, 1.0]));
        assert!(check_g_symmetric(&g, &r, None).unwrap());

        let id = SymForm::from_diagonal(&[1.0, 1.0]);
        let skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(!check_g_symmetric(&id, &skew, None).unwrap());

        // gR = [[0,1],[-1,0]] is antisymmetric here, so R is not g-symmetric.
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let gr = g.matrix() * &swap;
        assert!((gr - DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).amax() < 1e-15);
        assert!(!check_g_symmetric(&g, &swap, None).unwrap());
    }

    #[test]
    fn zero_dimensional_form_is_vacuously_nondegenerate() {
        let b = SymForm::zero(0);
        assert_eq!(b.inertia(), Inertia { n_plus: 0, n_minus: 0, dgn: 0 });
        assert!(b.is_nondegenerate());
        let w = Subspace::zero(3);
        let g = SymForm::from_diagonal(&[1.0, 1.0, -1.0]);
        let r = g.restrict(&w).unwrap();
        assert_eq!(r.dim(), 0);
    }

    #[test]
    fn asymmetry_is_recorded() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let b = SymForm::new(m).unwrap();
        assert!((b.asymmetry() - 1.0).abs() < 1e-15);
        assert!((b.matrix()[(0, 1)] - 1.0).abs() < 1e-15);
    }
}

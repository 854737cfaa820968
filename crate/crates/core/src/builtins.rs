//! Built-in example problems for the CLI and the test suites.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bilinear::{Subspace, SymForm};
use crate::error::{Error, Result};
use crate::systems::{constant_sampler, Distribution, InitialData, MorseSturm, SystemData};

/// A ready-to-analyze problem: system, admissible distribution, optional
/// end-manifold data.
pub struct GeneratedProblem {
    pub label: String,
    pub system: SystemData,
    pub dist: Distribution,
    pub end_manifold: Option<(Subspace, SymForm)>,
}

/// Constant frame spanned by the negative eigendirections of g.
pub fn metric_negative_distribution(g: &SymForm) -> Distribution {
    let eig = g.matrix().clone().symmetric_eigen();
    let mut cols: Vec<(f64, DVector<f64>)> = Vec::new();
    for i in 0..g.dim() {
        if eig.eigenvalues[i] < -g.tol() {
            cols.push((eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()));
        }
    }
    cols.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eigenvalues"));
    Distribution::constant(cols.into_iter().map(|(_, v)| v).collect())
}

/// Constant-curvature space form: v″ = −c v componentwise, metric from
/// the diagonal signature.
pub fn constant_curvature(
    metric_diag: &[f64],
    curvature: f64,
    interval: (f64, f64),
    init: InitialData,
) -> Result<GeneratedProblem> {
    let n = metric_diag.len();
    let g = SymForm::from_diagonal(metric_diag);
    let r = constant_sampler(DMatrix::identity(n, n) * (-curvature));
    let ms = MorseSturm::new(interval, g.clone(), r, init)?;
    let system = ms.to_symplectic()?;
    let dist = metric_negative_distribution(&g);
    Ok(GeneratedProblem {
        label: format!("constant_curvature(n={n}, c={curvature})"),
        system,
        dist,
        end_manifold: None,
    })
}

/// Product of two one-dimensional factors with metric diag(1, −1) and
/// per-factor curvatures; the distribution is the negative factor.
pub fn product(
    curvatures: (f64, f64),
    interval: (f64, f64),
    init: InitialData,
) -> Result<GeneratedProblem> {
    let g = SymForm::from_diagonal(&[1.0, -1.0]);
    let r = constant_sampler(DMatrix::from_diagonal(&DVector::from_row_slice(&[
        -curvatures.0,
        -curvatures.1,
    ])));
    let ms = MorseSturm::new(interval, g, r, init)?;
    let system = ms.to_symplectic()?;
    let dist = Distribution::constant(vec![DVector::from_row_slice(&[0.0, 1.0])]);
    Ok(GeneratedProblem {
        label: format!("product(c1={}, c2={})", curvatures.0, curvatures.1),
        system,
        dist,
        end_manifold: None,
    })
}

/// Two-dimensional causal-type example: curvature only in the positive
/// factor; the reduced system along the negative direction is flat.
pub fn lorentzian_causal(curvature: f64, interval: (f64, f64)) -> Result<GeneratedProblem> {
    let g = SymForm::from_diagonal(&[1.0, -1.0]);
    let r = constant_sampler(DMatrix::from_diagonal(&DVector::from_row_slice(&[
        -curvature, 0.0,
    ])));
    let ms = MorseSturm::new(interval, g, r, InitialData::fixed_start(2))?;
    let system = ms.to_symplectic()?;
    let dist = Distribution::constant(vec![DVector::from_row_slice(&[0.0, 1.0])]);
    Ok(GeneratedProblem {
        label: format!("lorentzian_causal(c={curvature})"),
        system,
        dist,
        end_manifold: None,
    })
}

/// Frame built from an actual solution of the negative factor, so that
/// the symmetric-coupling criterion applies and n₊(I|𝔖) = 0.
pub fn jacobi_frame(
    curvatures: (f64, f64),
    interval: (f64, f64),
    y_start: (f64, f64),
) -> Result<GeneratedProblem> {
    let g = SymForm::from_diagonal(&[1.0, -1.0]);
    let (c1, c2) = curvatures;
    let r = constant_sampler(DMatrix::from_diagonal(&DVector::from_row_slice(&[-c1, -c2])));
    let ms = MorseSturm::new(interval, g, r, InitialData::fixed_start(2))?;
    let system = ms.to_symplectic()?;
    let a = interval.0;
    let (y0, y0p) = y_start;
    let y_val = move |t: f64| -> (f64, f64) {
        let s = t - a;
        if c2 < 0.0 {
            let mu = (-c2).sqrt();
            (
                y0 * (mu * s).cosh() + y0p / mu * (mu * s).sinh(),
                y0 * mu * (mu * s).sinh() + y0p * (mu * s).cosh(),
            )
        } else if c2 == 0.0 {
            (y0 + y0p * s, y0p)
        } else {
            let mu = c2.sqrt();
            (
                y0 * (mu * s).cos() + y0p / mu * (mu * s).sin(),
                -y0 * mu * (mu * s).sin() + y0p * (mu * s).cos(),
            )
        }
    };
    let yv = y_val;
    let frames: Vec<crate::systems::VectorSampler> =
        vec![Arc::new(move |t| DVector::from_row_slice(&[0.0, yv(t).0]))];
    let derivs: Vec<crate::systems::VectorSampler> =
        vec![Arc::new(move |t| DVector::from_row_slice(&[0.0, y_val(t).1]))];
    let dist = Distribution::with_derivatives(frames, derivs);
    Ok(GeneratedProblem {
        label: format!("jacobi_frame(c1={c1}, c2={c2})"),
        system,
        dist,
        end_manifold: None,
    })
}

/// Morse–Sturm system with gR(t) = Σ M_k tᵏ for symmetric M_k.
pub fn custom_polynomial(
    metric_diag: &[f64],
    gr_coefficients: Vec<DMatrix<f64>>,
    interval: (f64, f64),
    init: InitialData,
) -> Result<GeneratedProblem> {
    let n = metric_diag.len();
    let g = SymForm::from_diagonal(metric_diag);
    for (k, m) in gr_coefficients.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Config(format!("gr coefficient {k} has the wrong shape")));
        }
    }
    let g_inv = g
        .matrix()
        .clone()
        .lu()
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Singular("metric".into()))?;
    let coeffs = gr_coefficients;
    let r: crate::systems::MatrixSampler = Arc::new(move |t| {
        let mut acc = DMatrix::zeros(n, n);
        let mut power = 1.0;
        for m in &coeffs {
            acc += m * power;
            power *= t;
        }
        &g_inv * ((&acc + acc.transpose()) * 0.5)
    });
    let ms = MorseSturm::new(interval, g.clone(), r, init)?;
    let system = ms.to_symplectic()?;
    let dist = metric_negative_distribution(&g);
    Ok(GeneratedProblem {
        label: format!("custom_polynomial(n={n})"),
        system,
        dist,
        end_manifold: None,
    })
}

//! Run configuration: TOML schema, validation, and problem assembly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bilinear::{Subspace, SymForm};
use crate::builtins::{self, GeneratedProblem};
use crate::error::{Error, Result};
use crate::interp::{Interpolation, SampledMatrixPath};
use crate::systems::{CoefficientPath, Distribution, InitialData, MorseSturm, Smoothness, SystemData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputRequest {
    Maslov,
    Focal,
    IndexTheorem,
    Profile,
    JumpValidator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Structured,
}

impl Default for ReportFormat {
    fn default() -> Self {
        ReportFormat::Text
    }
}

/// Subspace given as a keyword or an explicit list of basis vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubspaceSpec {
    Keyword(String),
    Basis(Vec<Vec<f64>>),
}

impl SubspaceSpec {
    pub fn build(&self, n: usize) -> Result<Subspace> {
        match self {
            SubspaceSpec::Keyword(k) => match k.as_str() {
                "zero" => Ok(Subspace::zero(n)),
                "full" => Ok(Subspace::full(n)),
                other => Err(Error::Config(format!(
                    "unknown subspace keyword '{other}' (use \"zero\", \"full\" or a basis)"
                ))),
            },
            SubspaceSpec::Basis(cols) => {
                if cols.is_empty() {
                    return Ok(Subspace::zero(n));
                }
                let vectors: Vec<DVector<f64>> = cols
                    .iter()
                    .map(|c| {
                        if c.len() != n {
                            Err(Error::Config(format!(
                                "basis vector length {} in ambient dimension {n}",
                                c.len()
                            )))
                        } else {
                            Ok(DVector::from_row_slice(c))
                        }
                    })
                    .collect::<Result<_>>()?;
                Subspace::span_of(n, &vectors)
            }
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what}: ragged matrix rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuiltinSpec {
    pub name: String,
    pub interval: [f64; 2],
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub metric: Option<Vec<f64>>,
    #[serde(default)]
    pub curvature: Option<f64>,
    #[serde(default)]
    pub curvatures: Option<[f64; 2]>,
    #[serde(default)]
    pub gr_coefficients: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub y_start: Option<[f64; 2]>,
    #[serde(default)]
    pub p: Option<SubspaceSpec>,
    #[serde(default)]
    pub s: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub q: Option<SubspaceSpec>,
    #[serde(default)]
    pub sq: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixTable {
    pub times: Vec<f64>,
    /// One matrix (rows of equal length) per time node.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl MatrixTable {
    fn sampled(&self, kind: Interpolation, what: &str) -> Result<SampledMatrixPath> {
        let values: Vec<DMatrix<f64>> = self
            .values
            .iter()
            .map(|rows| matrix_from_rows(rows, what))
            .collect::<Result<_>>()?;
        SampledMatrixPath::new(self.times.clone(), values, kind)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InlineSpec {
    pub interval: [f64; 2],
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Morse–Sturm input: constant metric plus sampled R(t).
    #[serde(default)]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub r: Option<MatrixTable>,
    /// General symplectic input: sampled A, B, C blocks.
    #[serde(default)]
    pub a: Option<MatrixTable>,
    #[serde(default)]
    pub b: Option<MatrixTable>,
    #[serde(default)]
    pub c: Option<MatrixTable>,
    #[serde(default)]
    pub p: Option<SubspaceSpec>,
    #[serde(default)]
    pub s: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub q: Option<SubspaceSpec>,
    #[serde(default)]
    pub sq: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(default)]
    pub builtin: Option<BuiltinSpec>,
    #[serde(default)]
    pub inline: Option<InlineSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionSpec {
    /// "generator" (builtin-provided), "metric-negative", "none", "frames".
    #[serde(default = "default_dist_kind")]
    pub kind: String,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// One n×k frame matrix per time node (columns are the fields).
    #[serde(default)]
    pub values: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

fn default_dist_kind() -> String {
    "generator".into()
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec {
            kind: default_dist_kind(),
            times: None,
            values: None,
            interpolation: Interpolation::PiecewiseCubic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSpec {
    #[serde(default = "default_mesh")]
    pub elements: usize,
    #[serde(default = "default_max_mesh")]
    pub max_elements: usize,
}

fn default_mesh() -> usize {
    64
}

fn default_max_mesh() -> usize {
    1024
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec { elements: default_mesh(), max_elements: default_max_mesh() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrationSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    2048
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        IntegrationSpec { steps: default_steps() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToleranceSpec {
    #[serde(default = "default_drift")]
    pub drift: f64,
    /// Optional override for the zero threshold of inertia computations.
    #[serde(default)]
    pub inertia: Option<f64>,
}

fn default_drift() -> f64 {
    1e-8
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec { drift: default_drift(), inertia: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default = "default_outputs")]
    pub requested: Vec<OutputRequest>,
    #[serde(default)]
    pub format: ReportFormat,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_profile_points")]
    pub profile_points: usize,
}

fn default_outputs() -> Vec<OutputRequest> {
    vec![OutputRequest::IndexTheorem]
}

fn default_profile_points() -> usize {
    16
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            requested: default_outputs(),
            format: ReportFormat::Text,
            seed: 0,
            profile_points: default_profile_points(),
        }
    }
}

/// A full run configuration as parsed from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub distribution: DistributionSpec,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.system.builtin, &self.system.inline) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give exactly one of system.builtin / system.inline".into()))
            }
            (None, None) => {
                return Err(Error::Config("missing system source (system.builtin or system.inline)".into()))
            }
            _ => {}
        }
        if let Some(b) = &self.system.builtin {
            if !(b.interval[1] > b.interval[0]) {
                return Err(Error::Config("system interval must satisfy a < b".into()));
            }
        }
        if let Some(i) = &self.system.inline {
            if !(i.interval[1] > i.interval[0]) {
                return Err(Error::Config("system interval must satisfy a < b".into()));
            }
        }
        if !(self.tolerances.drift > 0.0) {
            return Err(Error::Config("tolerances.drift must be positive".into()));
        }
        if let Some(t) = self.tolerances.inertia {
            if !(t > 0.0) {
                return Err(Error::Config("tolerances.inertia must be positive".into()));
            }
        }
        if self.mesh.elements < 2 {
            return Err(Error::Config("mesh.elements must be at least 2".into()));
        }
        if self.outputs.requested.is_empty() {
            return Err(Error::Config("outputs.requested must not be empty".into()));
        }
        Ok(())
    }

    /// Assembles the problem this configuration describes.
    pub fn build_problem(&self) -> Result<GeneratedProblem> {
        let mut problem = match (&self.system.builtin, &self.system.inline) {
            (Some(b), None) => build_builtin(b)?,
            (None, Some(i)) => build_inline(i)?,
            _ => unreachable!("validated"),
        };
        match self.distribution.kind.as_str() {
            "generator" => {}
            "none" => problem.dist = Distribution::empty(),
            "metric-negative" => {
                let g = match problem.system.morse() {
                    Some(m) => m.g.clone(),
                    None => {
                        return Err(Error::Config(
                            "metric-negative distribution needs a Morse-Sturm system".into(),
                        ))
                    }
                };
                problem.dist = builtins::metric_negative_distribution(&g);
            }
            "frames" => {
                let times = self
                    .distribution
                    .times
                    .clone()
                    .ok_or_else(|| Error::Config("distribution.times missing".into()))?;
                let values = self
                    .distribution
                    .values
                    .as_ref()
                    .ok_or_else(|| Error::Config("distribution.values missing".into()))?;
                let mats: Vec<DMatrix<f64>> = values
                    .iter()
                    .map(|rows| matrix_from_rows(rows, "distribution frame"))
                    .collect::<Result<_>>()?;
                let k = mats.first().map_or(0, |m| m.ncols());
                let path = SampledMatrixPath::new(times, mats, self.distribution.interpolation)?;
                let sampler = path.into_sampler();
                let frames = (0..k)
                    .map(|i| -> crate::systems::VectorSampler {
                        let sampler = Arc::clone(&sampler);
                        Arc::new(move |t| sampler(t).column(i).into_owned())
                    })
                    .collect();
                problem.dist = Distribution::new(frames);
            }
            other => {
                return Err(Error::Config(format!("unknown distribution kind '{other}'")))
            }
        }
        problem.dist.validate(&problem.system.coeffs)?;
        Ok(problem)
    }
}

fn initial_data_from(
    p: &Option<SubspaceSpec>,
    s: &Option<Vec<Vec<f64>>>,
    n: usize,
) -> Result<InitialData> {
    let p_sub = match p {
        Some(spec) => spec.build(n)?,
        None => Subspace::zero(n),
    };
    let s_form = match s {
        Some(rows) => SymForm::new(matrix_from_rows(rows, "S")?)?,
        None => SymForm::zero(p_sub.dim()),
    };
    InitialData::new(p_sub, s_form)
}

fn end_manifold_from(
    q: &Option<SubspaceSpec>,
    sq: &Option<Vec<Vec<f64>>>,
    n: usize,
) -> Result<Option<(Subspace, SymForm)>> {
    let Some(spec) = q else { return Ok(None) };
    let q_sub = spec.build(n)?;
    let sq_form = match sq {
        Some(rows) => SymForm::new(matrix_from_rows(rows, "SQ")?)?,
        None => SymForm::zero(q_sub.dim()),
    };
    if sq_form.dim() != q_sub.dim() {
        return Err(Error::Config("SQ dimension must match Q".into()));
    }
    Ok(Some((q_sub, sq_form)))
}

fn build_builtin(spec: &BuiltinSpec) -> Result<GeneratedProblem> {
    let interval = (spec.interval[0], spec.interval[1]);
    let mut problem = match spec.name.as_str() {
        "constant_curvature" => {
            let metric = spec
                .metric
                .clone()
                .or_else(|| spec.dimension.map(|n| vec![1.0; n]))
                .ok_or_else(|| Error::Config("constant_curvature needs metric or dimension".into()))?;
            let n = metric.len();
            let init = initial_data_from(&spec.p, &spec.s, n)?;
            builtins::constant_curvature(&metric, spec.curvature.unwrap_or(1.0), interval, init)?
        }
        "product" => {
            let c = spec.curvatures.unwrap_or([1.0, 1.0]);
            let init = initial_data_from(&spec.p, &spec.s, 2)?;
            builtins::product((c[0], c[1]), interval, init)?
        }
        "lorentzian_causal" => builtins::lorentzian_causal(spec.curvature.unwrap_or(1.0), interval)?,
        "jacobi_frame" => {
            let c = spec.curvatures.unwrap_or([1.0, -1.0]);
            let y = spec.y_start.unwrap_or([1.0, 0.0]);
            builtins::jacobi_frame((c[0], c[1]), interval, (y[0], y[1]))?
        }
        "custom_polynomial" => {
            let metric = spec
                .metric
                .clone()
                .ok_or_else(|| Error::Config("custom_polynomial needs metric".into()))?;
            let n = metric.len();
            let coeffs = spec
                .gr_coefficients
                .as_ref()
                .ok_or_else(|| Error::Config("custom_polynomial needs gr_coefficients".into()))?
                .iter()
                .map(|rows| matrix_from_rows(rows, "gr coefficient"))
                .collect::<Result<Vec<_>>>()?;
            let init = initial_data_from(&spec.p, &spec.s, n)?;
            builtins::custom_polynomial(&metric, coeffs, interval, init)?
        }
        other => return Err(Error::Config(format!("unknown builtin generator '{other}'"))),
    };
    let n = problem.system.dim();
    problem.end_manifold = end_manifold_from(&spec.q, &spec.sq, n)?;
    Ok(problem)
}

fn build_inline(spec: &InlineSpec) -> Result<GeneratedProblem> {
    let interval = (spec.interval[0], spec.interval[1]);
    let (system, label) = if let Some(g_rows) = &spec.g {
        let g = SymForm::new(matrix_from_rows(g_rows, "g")?)?;
        let n = g.dim();
        let table = spec
            .r
            .as_ref()
            .ok_or_else(|| Error::Config("inline Morse-Sturm system needs r samples".into()))?;
        let r = table.sampled(spec.interpolation, "R")?.into_sampler();
        let init = initial_data_from(&spec.p, &spec.s, n)?;
        let ms = MorseSturm::new(interval, g, r, init)?;
        (ms.to_symplectic()?, format!("inline_morse_sturm(n={n})"))
    } else {
        let (a, b, c) = match (&spec.a, &spec.b, &spec.c) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Config(
                    "inline system needs either g+r or a+b+c tables".into(),
                ))
            }
        };
        let b_path = b.sampled(spec.interpolation, "B")?;
        let n = b_path.eval(interval.0).nrows();
        let coeffs = CoefficientPath::new(
            interval,
            n,
            a.sampled(spec.interpolation, "A")?.into_sampler(),
            b_path.into_sampler(),
            c.sampled(spec.interpolation, "C")?.into_sampler(),
            Smoothness::C1,
        )?;
        let init = initial_data_from(&spec.p, &spec.s, n)?;
        (SystemData::new(coeffs, init)?, format!("inline_symplectic(n={n})"))
    };
    let n = system.dim();
    let g_for_dist = system.morse().map(|m| m.g.clone());
    let dist = match g_for_dist {
        Some(g) => builtins::metric_negative_distribution(&g),
        None => Distribution::empty(),
    };
    Ok(GeneratedProblem {
        label,
        system,
        dist,
        end_manifold: end_manifold_from(&spec.q, &spec.sq, n)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_minimal_builtin_config() {
        let text = r#"
            [system.builtin]
            name = "product"
            interval = [0.0, 4.71238898038469]
            curvatures = [1.0, 1.0]

            [outputs]
            requested = ["index-theorem", "focal"]
            format = "structured"
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.outputs.requested.len(), 2);
        assert_eq!(cfg.mesh.elements, 64);
        let problem = cfg.build_problem().unwrap();
        assert_eq!(problem.system.dim(), 2);
        assert_eq!(problem.dist.k(), 1);
    }

    #[test]
    fn rejects_missing_interval() {
        let text = r#"
            [system.builtin]
            name = "product"
        "#;
        assert!(RunConfig::from_toml(text).is_err());
    }

    #[test]
    fn rejects_double_source() {
        let text = r#"
            [system.builtin]
            name = "product"
            interval = [0.0, 1.0]

            [system.inline]
            interval = [0.0, 1.0]
        "#;
        assert!(RunConfig::from_toml(text).is_err());
    }

    #[test]
    fn inline_morse_sturm_round_trip() {
        let text = r#"
            [system.inline]
            interval = [0.0, 1.0]
            g = [[1.0, 0.0], [0.0, -1.0]]
            p = "zero"

            [system.inline.r]
            times = [0.0, 0.5, 1.0]
            values = [
                [[-1.0, 0.0], [0.0, -1.0]],
                [[-1.0, 0.0], [0.0, -1.0]],
                [[-1.0, 0.0], [0.0, -1.0]],
            ]
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let problem = cfg.build_problem().unwrap();
        assert_eq!(problem.system.dim(), 2);
        assert_eq!(problem.dist.k(), 1);
        let b = problem.system.coeffs.b_at(0.25);
        assert!((b[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((b[(1, 1)] + 1.0).abs() < 1e-12);
    }
}

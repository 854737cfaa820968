//! Shared test support: an inertia oracle independent of the library's
//! eigen-decomposition path, and seeded random generators.
#![allow(dead_code)]

use maslov::lagrangian::LagrangianFrame;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.random_range(-scale..scale);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Characteristic polynomial det(λI − M) = λⁿ + c₁λⁿ⁻¹ + … + cₙ via the
/// trace recursion; returns [1, c₁, …, cₙ].
pub fn char_poly(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut coeffs = vec![1.0];
    let mut b = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        let ab = m * &b;
        let c = -ab.trace() / k as f64;
        coeffs.push(c);
        b = ab + DMatrix::identity(n, n) * c;
    }
    coeffs
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_derivative(p: &[f64]) -> Vec<f64> {
    let deg = p.len() - 1;
    if deg == 0 {
        return vec![0.0];
    }
    (0..deg).map(|i| p[i] * (deg - i) as f64).collect()
}

fn poly_trim(p: &[f64]) -> Vec<f64> {
    let norm = p.iter().fold(0.0_f64, |a, &c| a.max(c.abs())).max(1e-300);
    let mut start = 0;
    while start + 1 < p.len() && p[start].abs() <= 1e-13 * norm {
        start += 1;
    }
    p[start..].to_vec()
}

/// Remainder of a modulo b (coefficients highest-degree first), negated
/// for the Sturm chain.
fn poly_neg_rem(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = poly_trim(a);
    let db = b.len() - 1;
    while r.len() > 1 && r.len() - 1 >= db {
        // Subtract (r0/b0) x^(deg r − deg b) · b; the shifted b aligns
        // with the leading coefficients of r.
        let factor = r[0] / b[0];
        for i in 0..b.len() {
            r[i] -= factor * b[i];
        }
        r.remove(0);
        r = poly_trim(&r);
    }
    r.iter().map(|&c| -c).collect()
}

/// Sign changes of the Sturm chain of p at x; +∞ / −∞ via the leading
/// coefficients.
fn sturm_chain(p: &[f64]) -> Vec<Vec<f64>> {
    let mut chain = vec![poly_trim(p), poly_trim(&poly_derivative(p))];
    loop {
        let a = &chain[chain.len() - 2];
        let b = &chain[chain.len() - 1];
        if b.len() <= 1 {
            break;
        }
        let r = poly_neg_rem(a, b);
        if r.len() == 1 && r[0] == 0.0 {
            break;
        }
        chain.push(r);
        if chain.last().unwrap().len() <= 1 {
            break;
        }
    }
    chain
}

fn sign_changes_at(chain: &[Vec<f64>], x: f64) -> usize {
    let mut changes = 0;
    let mut last = 0.0_f64;
    for p in chain {
        let v = poly_eval(p, x);
        if v.abs() < 1e-300 {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            changes += 1;
        }
        last = v;
    }
    changes
}

/// Number of real roots of p in the half-line (x, ∞).
pub fn sturm_count_greater(p: &[f64], x: f64) -> usize {
    let chain = sturm_chain(p);
    // At +infinity the sign of each member is the sign of its leading
    // coefficient.
    let mut changes_inf = 0;
    let mut last = 0.0_f64;
    for q in &chain {
        let v = q[0];
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            changes_inf += 1;
        }
        last = v;
    }
    sign_changes_at(&chain, x).saturating_sub(changes_inf)
}

/// Number of real roots of p in (−∞, x): roots of p(−λ) above −x.
pub fn sturm_count_less(p: &[f64], x: f64) -> usize {
    let deg = p.len() - 1;
    let flipped: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(i, &c)| if (deg - i) % 2 == 1 { -c } else { c })
        .collect();
    sturm_count_greater(&flipped, -x)
}

/// Inertia of a symmetric matrix from the characteristic polynomial:
/// counts of roots above tol, below −tol, and the remainder.
pub fn oracle_inertia(m: &DMatrix<f64>, tol: f64) -> (usize, usize, usize) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let p = char_poly(&sym);
    let plus = sturm_count_greater(&p, tol);
    let minus = sturm_count_less(&p, -tol);
    (plus, minus, n - plus - minus)
}

/// Random symplectic matrix as a product of shear and scaling generators.
pub fn random_symplectic(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(2 * n, 2 * n);
    for _ in 0..3 {
        // Lower shear [[I, 0], [W, I]] with W symmetric.
        let w = random_symmetric(rng, n, 0.8);
        let mut lower = DMatrix::identity(2 * n, 2 * n);
        lower.view_mut((n, 0), (n, n)).copy_from(&w);
        // Upper shear [[I, B], [0, I]] with B symmetric.
        let bsym = random_symmetric(rng, n, 0.8);
        let mut upper = DMatrix::identity(2 * n, 2 * n);
        upper.view_mut((0, n), (n, n)).copy_from(&bsym);
        // Block scaling [[Z, 0], [0, Z^{-T}]] with Z well conditioned.
        let mut z = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                z[(i, j)] += rng.random_range(-0.3..0.3);
            }
        }
        if let Some(z_inv_t) = z.transpose().lu().solve(&DMatrix::identity(n, n)) {
            let mut scale = DMatrix::zeros(2 * n, 2 * n);
            scale.view_mut((0, 0), (n, n)).copy_from(&z);
            scale.view_mut((n, n), (n, n)).copy_from(&z_inv_t);
            m = m * lower * upper * scale;
        } else {
            m = m * lower * upper;
        }
    }
    m
}

/// Frame of (matrix · plane) for a standard-basis plane.
pub fn transformed_frame(m: &DMatrix<f64>, frame: &LagrangianFrame) -> LagrangianFrame {
    LagrangianFrame::from_stacked(m * frame.stacked()).expect("symplectic image is Lagrangian")
}

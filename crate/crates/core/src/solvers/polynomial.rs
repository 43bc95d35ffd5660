use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Polynomial `c0 + c1 x + ... + c6 x^6`, coefficients in ascending order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degree6Polynomial {
    coeffs: [f64; 7],
}

impl Degree6Polynomial {
    pub fn from_coefficients(coeffs: [f64; 7]) -> Self {
        Self { coeffs }
    }

    /// Builds `prod (x - r)` for up to six roots, scaled by `lead`.
    pub fn from_roots(roots: &[f64], lead: f64) -> Self {
        assert!(roots.len() <= 6);
        let mut c = [0.0; 7];
        c[0] = lead;
        for (deg, &r) in roots.iter().enumerate() {
            for i in (1..=deg + 1).rev() {
                c[i] = c[i - 1] - r * c[i];
            }
            c[0] *= -r;
        }
        Self { coeffs: c }
    }

    pub fn coefficients(&self) -> &[f64; 7] {
        &self.coeffs
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Divides by the largest-magnitude coefficient.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.max_abs_coefficient();
        if !(m.is_finite()) || m == 0.0 {
            return Err(Error::ZeroPolynomial);
        }
        Ok(Self {
            coeffs: self.coeffs.map(|c| c / m),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative_at(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, &c)| acc * x + i as f64 * c)
    }

    /// `sum |c_i| |x|^i`, the natural scale of rounding errors in [`Self::eval`].
    pub fn abs_eval(&self, x: f64) -> f64 {
        let ax = x.abs();
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * ax + c.abs())
    }

    fn degree(&self, tol: f64) -> usize {
        (0..7)
            .rev()
            .find(|&i| self.coeffs[i].abs() > tol)
            .unwrap_or(0)
    }
}

/// Parlett-Reinsch balancing with powers of two, in place.
fn balance(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    let radix = 2.0_f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= radix * radix;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= radix * radix;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
            }
        }
    }
}

/// Coefficients of `p(y + shift)` in `y`.
fn taylor_shift(c: &[f64], shift: f64) -> Vec<f64> {
    let mut out = c.to_vec();
    if shift == 0.0 {
        return out;
    }
    let n = out.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            out[j] += shift * out[j + 1];
        }
    }
    out
}

/// Eigenvalues of the balanced companion matrix of `c`, mapped back by
/// adding `shift`. `None` when the Schur iteration does not converge.
fn companion_eigenvalues(c: &[f64], shift: f64) -> Option<Vec<nalgebra::Complex<f64>>> {
    let deg = c.len() - 1;
    let lead = c[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -c[i] / lead;
    }
    balance(&mut companion);
    let schur = companion.try_schur(f64::EPSILON, 10_000)?;
    Some(
        schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z + shift)
            .collect(),
    )
}

/// Real roots from the eigenvalues of the balanced companion matrix, each
/// polished by Newton steps, sorted ascending and deduplicated.
pub fn real_roots(poly: &Degree6Polynomial) -> Result<Vec<f64>> {
    let p = poly.normalized()?;
    let c = p.coeffs;
    let deg = p.degree(1e-14);
    if deg == 0 {
        return Err(Error::NoRealRoots);
    }
    // Symmetric root configurations (x^6 + 1 gives a cyclic permutation
    // matrix) can stall the QR iteration; retry in a shifted variable.
    let eig = [0.0, std::f64::consts::FRAC_1_PI, -0.577_215_664]
        .iter()
        .find_map(|&shift| companion_eigenvalues(&taylor_shift(&c[..=deg], shift), shift))
        .ok_or(Error::NoRealRoots)?;

    let mut roots: Vec<f64> = Vec::with_capacity(deg);
    for z in eig.iter() {
        if z.im.abs() >= 1e-8 * z.re.abs().max(1.0) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..4 {
            let d = p.derivative_at(x);
            if d == 0.0 {
                break;
            }
            let step = p.eval(x) / d;
            let next = x - step;
            if !next.is_finite() || p.eval(next).abs() > p.eval(x).abs() {
                break;
            }
            x = next;
        }
        if p.eval(x).abs() < 1e-6 * p.abs_eval(x) {
            roots.push(x);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * a.abs().max(1.0));
    if roots.is_empty() {
        return Err(Error::NoRealRoots);
    }
    Ok(roots)
}

//! Polynomial bases on cells and edges, Gauss-Legendre quadrature and local
//! mass matrices.
//!
//! Cell bases are scaled monomials `((x-x_K)/h_K)^a ((y-y_K)/h_K)^b`, ordered
//! by total degree, so `P_j` is always a prefix of `P_{j+1}`. Edge bases are
//! monomials in the normalized arclength `xi in [-1, 1]`, measured from the
//! edge midpoint along the edge's global tangent.

use faer::{Mat, Side};

use crate::{Point, Result, WgError};

/// Points and positive weights with a declared polynomial exactness.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, exact to degree `2n-1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

fn points_for(exactness: usize) -> usize {
    (exactness + 2) / 2
}

/// Signed (shoelace) area of a closed vertex loop.
pub fn polygon_area(vertices: &[Point]) -> f64 {
    let k = vertices.len();
    0.5 * (0..k)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % k];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// Area centroid of a simple polygon with positive signed area.
pub fn polygon_centroid(vertices: &[Point]) -> Point {
    let k = vertices.len();
    let area = polygon_area(vertices);
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..k {
        let a = vertices[i];
        let b = vertices[(i + 1) % k];
        let cross = a[0] * b[1] - b[0] * a[1];
        cx += (a[0] + b[0]) * cross;
        cy += (a[1] + b[1]) * cross;
    }
    [cx / (6.0 * area), cy / (6.0 * area)]
}

/// Axis-aligned bounds `(xmin, xmax, ymin, ymax)` when the loop is an
/// axis-aligned rectangle.
pub fn as_axis_rectangle(vertices: &[Point]) -> Option<(f64, f64, f64, f64)> {
    if vertices.len() != 4 {
        return None;
    }
    let xmin = vertices.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let xmax = vertices.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let ymin = vertices.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let ymax = vertices.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * (xmax - xmin).max(ymax - ymin);
    let on_corner = |p: &Point| {
        ((p[0] - xmin).abs() <= tol || (p[0] - xmax).abs() <= tol)
            && ((p[1] - ymin).abs() <= tol || (p[1] - ymax).abs() <= tol)
    };
    let distinct_corners = {
        let mut seen = [false; 4];
        for p in vertices {
            let ix = usize::from((p[0] - xmax).abs() <= tol);
            let iy = usize::from((p[1] - ymax).abs() <= tol);
            seen[2 * iy + ix] = true;
        }
        seen.iter().all(|&s| s)
    };
    (vertices.iter().all(on_corner) && distinct_corners).then_some((xmin, xmax, ymin, ymax))
}

/// Cell rule: tensor Gauss-Legendre on axis-aligned rectangles, otherwise a
/// fan of collapsed-tensor triangle rules around the centroid.
pub fn cell_quadrature(vertices: &[Point], exactness: usize) -> Result<QuadratureRule> {
    if vertices.len() < 3 {
        return Err(WgError::Quadrature(format!(
            "polygon needs at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    let rect = as_axis_rectangle(vertices).filter(|&(x0, x1, y0, y1)| {
        let box_area = (x1 - x0) * (y1 - y0);
        (polygon_area(vertices) - box_area).abs() <= 1e-12 * box_area
    });
    if let Some((x0, x1, y0, y1)) = rect {
        let (xs, ws) = gauss_legendre(points_for(exactness));
        let (hx, hy) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
        let (mx, my) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let mut points = Vec::with_capacity(xs.len() * xs.len());
        let mut weights = Vec::with_capacity(xs.len() * xs.len());
        for (&sy, &wy) in xs.iter().zip(&ws) {
            for (&sx, &wx) in xs.iter().zip(&ws) {
                points.push([mx + hx * sx, my + hy * sy]);
                weights.push(wx * wy * hx * hy);
            }
        }
        return Ok(QuadratureRule {
            points,
            weights,
            exactness,
        });
    }

    let area = polygon_area(vertices);
    if area <= 0.0 {
        return Err(WgError::Quadrature(format!(
            "polygon has non-positive signed area {area:e}"
        )));
    }
    let c = polygon_centroid(vertices);
    let k = vertices.len();
    let (us, wu) = gauss_legendre(points_for(exactness + 1));
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..k {
        let a = vertices[i];
        let b = vertices[(i + 1) % k];
        let tri = 0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (b[0] - c[0]) * (a[1] - c[1]));
        if tri <= 1e-14 * area {
            return Err(WgError::Quadrature(format!(
                "fan triangle {i} around the centroid is degenerate or inverted (non-simple polygon)"
            )));
        }
        // (u, v) in [0,1]^2 -> c + u((1-v)(a-c) + v(b-c)), Jacobian 2|T| u.
        for (&su, &wsu) in us.iter().zip(&wu) {
            let u = 0.5 * (su + 1.0);
            for (&sv, &wsv) in us.iter().zip(&wu) {
                let v = 0.5 * (sv + 1.0);
                let px = c[0] + u * ((1.0 - v) * (a[0] - c[0]) + v * (b[0] - c[0]));
                let py = c[1] + u * ((1.0 - v) * (a[1] - c[1]) + v * (b[1] - c[1]));
                points.push([px, py]);
                weights.push(0.25 * wsu * wsv * 2.0 * tri * u);
            }
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        exactness,
    })
}

/// Gauss-Legendre mapped onto the segment `a`-`b`; weights sum to its length.
pub fn edge_quadrature(a: Point, b: Point, exactness: usize) -> QuadratureRule {
    let (xs, ws) = gauss_legendre(points_for(exactness));
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let points = xs
        .iter()
        .map(|&s| {
            let t = 0.5 * (s + 1.0);
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect();
    let weights = ws.iter().map(|&w| 0.5 * w * len).collect();
    QuadratureRule {
        points,
        weights,
        exactness,
    }
}

/// A finite polynomial basis evaluated pointwise.
pub trait Basis {
    fn degree(&self) -> usize;
    fn dim(&self) -> usize;
    fn eval_into(&self, p: Point, out: &mut [f64]);

    fn eval(&self, p: Point) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(p, &mut out);
        out
    }
}

pub fn cell_dim(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

#[derive(Debug, Clone)]
pub struct CellBasis {
    pub center: Point,
    pub scale: f64,
    degree: usize,
    exponents: Vec<(u32, u32)>,
}

impl CellBasis {
    pub fn new(center: Point, scale: f64, degree: usize) -> Self {
        let mut exponents = Vec::with_capacity(cell_dim(degree));
        for d in 0..=degree as u32 {
            for a in (0..=d).rev() {
                exponents.push((a, d - a));
            }
        }
        Self {
            center,
            scale,
            degree,
            exponents,
        }
    }

    pub fn exponents(&self) -> &[(u32, u32)] {
        &self.exponents
    }

    pub fn grad_into(&self, p: Point, out: &mut [Point]) {
        let x = (p[0] - self.center[0]) / self.scale;
        let y = (p[1] - self.center[1]) / self.scale;
        for (o, &(a, b)) in out.iter_mut().zip(&self.exponents) {
            let dx = if a == 0 {
                0.0
            } else {
                a as f64 * x.powi(a as i32 - 1) * y.powi(b as i32)
            };
            let dy = if b == 0 {
                0.0
            } else {
                b as f64 * x.powi(a as i32) * y.powi(b as i32 - 1)
            };
            *o = [dx / self.scale, dy / self.scale];
        }
    }

    pub fn grad(&self, p: Point) -> Vec<Point> {
        let mut out = vec![[0.0; 2]; self.dim()];
        self.grad_into(p, &mut out);
        out
    }

    /// Coefficients of a polynomial given as `(coefficient, a, b)` raw
    /// monomials `x^a y^b` in this basis. Exact up to rounding.
    pub fn coefficients_of_raw(&self, terms: &[(f64, u32, u32)]) -> Vec<f64> {
        // x = cx + s X, y = cy + s Y; expand binomially.
        let mut out = vec![0.0; self.dim()];
        let (cx, cy, s) = (self.center[0], self.center[1], self.scale);
        for &(c, a, b) in terms {
            for i in 0..=a {
                for j in 0..=b {
                    let coef = c
                        * binom(a, i)
                        * binom(b, j)
                        * cx.powi((a - i) as i32)
                        * cy.powi((b - j) as i32)
                        * s.powi((i + j) as i32);
                    let idx = self
                        .exponents
                        .iter()
                        .position(|&e| e == (i, j))
                        .expect("raw monomial exceeds basis degree");
                    out[idx] += coef;
                }
            }
        }
        out
    }
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Basis for CellBasis {
    fn degree(&self) -> usize {
        self.degree
    }

    fn dim(&self) -> usize {
        self.exponents.len()
    }

    fn eval_into(&self, p: Point, out: &mut [f64]) {
        let x = (p[0] - self.center[0]) / self.scale;
        let y = (p[1] - self.center[1]) / self.scale;
        for (o, &(a, b)) in out.iter_mut().zip(&self.exponents) {
            *o = x.powi(a as i32) * y.powi(b as i32);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeBasis {
    pub midpoint: Point,
    pub tangent: Point,
    pub half_length: f64,
    degree: usize,
}

impl EdgeBasis {
    /// Basis on the segment oriented from `a` to `b`.
    pub fn new(a: Point, b: Point, degree: usize) -> Self {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        Self {
            midpoint: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
            tangent: [(b[0] - a[0]) / len, (b[1] - a[1]) / len],
            half_length: 0.5 * len,
            degree,
        }
    }

    pub fn local_coordinate(&self, p: Point) -> f64 {
        ((p[0] - self.midpoint[0]) * self.tangent[0] + (p[1] - self.midpoint[1]) * self.tangent[1])
            / self.half_length
    }
}

impl Basis for EdgeBasis {
    fn degree(&self) -> usize {
        self.degree
    }

    fn dim(&self) -> usize {
        self.degree + 1
    }

    fn eval_into(&self, p: Point, out: &mut [f64]) {
        let xi = self.local_coordinate(p);
        let mut v = 1.0;
        for o in out.iter_mut() {
            *o = v;
            v *= xi;
        }
    }
}

/// `M_ij = ∫ φ_i φ_j`. The rule must integrate degree `2·deg` exactly.
pub fn mass_matrix<B: Basis>(basis: &B, rule: &QuadratureRule) -> Result<Mat<f64>> {
    if rule.exactness < 2 * basis.degree() {
        return Err(WgError::Quadrature(format!(
            "mass matrix of degree {} needs exactness {}, rule has {}",
            basis.degree(),
            2 * basis.degree(),
            rule.exactness
        )));
    }
    let n = basis.dim();
    let mut m = Mat::<f64>::zeros(n, n);
    let mut phi = vec![0.0; n];
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        basis.eval_into(p, &mut phi);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    Ok(m)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Mat<f64>) -> Result<Mat<f64>> {
    use faer::linalg::solvers::Solve;
    let llt = m
        .llt(Side::Lower)
        .map_err(|e| WgError::Internal(format!("local mass matrix not SPD: {e:?}")))?;
    Ok(llt.solve(Mat::<f64>::identity(m.nrows(), m.ncols())))
}

/// `L²` projection of a scalar function onto `basis`, given the inverse mass
/// matrix for the same rule.
pub fn l2_project<B: Basis>(
    basis: &B,
    rule: &QuadratureRule,
    mass_inv: &Mat<f64>,
    f: impl Fn(Point) -> f64,
) -> Vec<f64> {
    let n = basis.dim();
    let mut rhs = vec![0.0; n];
    let mut phi = vec![0.0; n];
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        basis.eval_into(p, &mut phi);
        let fv = w * f(p);
        for (r, &ph) in rhs.iter_mut().zip(&phi) {
            *r += fv * ph;
        }
    }
    mat_vec(mass_inv, &rhs)
}

pub fn mat_vec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

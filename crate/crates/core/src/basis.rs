//! Clamped B-spline bases on [0, 1], their Gram and roughness matrices, and
//! the left-Riemann quadrature used to discretize curve integrals.
//!
//! Basis values and derivatives come from the Cox–de Boor recursion in its
//! triangular-table form. Gram and derivative-penalty matrices are integrated
//! span by span with Gauss–Legendre rules; `degree + 1` nodes per span
//! integrate the piecewise-polynomial products exactly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A univariate clamped B-spline basis on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSystem {
    degree: usize,
    num_funcs: usize,
    knots: Vec<f64>,
}

impl BasisSystem {
    /// Builds a basis with `num_funcs` functions of the given degree and
    /// equally spaced interior knots.
    pub fn new(num_funcs: usize, degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidDimension(format!(
                "spline degree must be at least 1, got {degree}"
            )));
        }
        if num_funcs < degree + 1 {
            return Err(Error::InvalidDimension(format!(
                "{num_funcs} basis functions cannot carry a degree-{degree} spline (need at least {})",
                degree + 1
            )));
        }
        let interior = num_funcs - degree - 1;
        let mut knots = Vec::with_capacity(num_funcs + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        for j in 1..=interior {
            knots.push(j as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            num_funcs,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_funcs(&self) -> usize {
        self.num_funcs
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knot_count(&self) -> usize {
        self.num_funcs - self.degree - 1
    }

    /// Distinct breakpoints 0 = x_0 < ... < x_J = 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.knots[self.degree..=self.num_funcs].to_vec();
        b.dedup();
        b
    }

    /// Greville abscissae; the coefficient vector that reproduces `t`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.num_funcs)
            .map(|k| self.knots[k + 1..=k + self.degree].iter().sum::<f64>() / self.degree as f64)
            .collect()
    }

    fn span(&self, t: f64) -> usize {
        let p = self.degree;
        let last = self.num_funcs - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        // knots[p] <= t < knots[last + 1]
        let mut lo = p;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis functions and their derivatives up to `nd` at `t`.
    ///
    /// Returns the span index `s` and a table `ders[k][j]`, the k-th
    /// derivative of basis function `s - degree + j`.
    fn local_derivatives(&self, t: f64, nd: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let u = &self.knots;
        let s = self.span(t);
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[s + 1 - j];
            right[j] = u[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let nd = nd.min(p);
        let mut ders = vec![vec![0.0; p + 1]; nd + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=nd {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        (s, ders)
    }

    /// Evaluates the `deriv`-th derivative of every basis function at each point.
    pub fn eval_deriv(&self, points: &[f64], deriv: usize) -> Result<DMatrix<f64>> {
        if deriv > self.degree {
            return Err(Error::InvalidOrder {
                order: deriv,
                degree: self.degree,
            });
        }
        let mut out = DMatrix::zeros(points.len(), self.num_funcs);
        for (i, &t) in points.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::OutOfDomain { point: t });
            }
            let (s, ders) = self.local_derivatives(t, deriv);
            let first = s - self.degree;
            for (j, v) in ders[deriv].iter().enumerate() {
                out[(i, first + j)] = *v;
            }
        }
        Ok(out)
    }

    /// Basis matrix with entry (i, k) = φ_k(points_i).
    pub fn eval(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        self.eval_deriv(points, 0)
    }

    /// ∫ φ_j φ_k over [0, 1].
    pub fn gram(&self) -> DMatrix<f64> {
        self.integrated_product(0, self.degree + 1)
    }

    /// ∫ φ_j^(m) φ_k^(m) over [0, 1] for derivative order `m`.
    pub fn penalty(&self, deriv_order: usize) -> Result<DMatrix<f64>> {
        if deriv_order > self.degree {
            return Err(Error::InvalidOrder {
                order: deriv_order,
                degree: self.degree,
            });
        }
        Ok(self.integrated_product(deriv_order, self.degree + 1))
    }

    pub(crate) fn integrated_product(&self, deriv: usize, nodes_per_span: usize) -> DMatrix<f64> {
        let k = self.num_funcs;
        let p = self.degree;
        let (gx, gw) = gauss_legendre(nodes_per_span);
        let mut out = DMatrix::zeros(k, k);
        for w in self.breakpoints().windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wt) in gx.iter().zip(&gw) {
                let t = mid + half * x;
                let (s, ders) = self.local_derivatives(t, deriv);
                let row = &ders[deriv];
                let first = s - p;
                for (i, vi) in row.iter().enumerate() {
                    for (j, vj) in row.iter().enumerate() {
                        out[(first + i, first + j)] += wt * half * vi * vj;
                    }
                }
            }
        }
        out
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // three-term recurrence: p1 = P_n(x), p0 = P_{n-1}(x)
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Observation grid with left-Riemann weights Δ_ι = t_{ι+1} − t_ι.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidDimension(format!(
                "a quadrature grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        for (i, &p) in points.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfDomain { point: p });
            }
            if i > 0 && p <= points[i - 1] {
                return Err(Error::NonMonotoneGrid { index: i });
            }
        }
        let weights = points.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { points, weights })
    }

    /// `m` equally spaced points covering [0, 1].
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidDimension(format!(
                "a quadrature grid needs at least 2 points, got {m}"
            )));
        }
        Self::new((0..m).map(|i| i as f64 / (m - 1) as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weight attached to each grid point; the last point gets zero.
    pub fn point_weights(&self) -> Vec<f64> {
        let mut w = self.weights.clone();
        w.push(0.0);
        w
    }

    /// Σ_{ι=1}^{M-1} Δ_ι f(t_ι).
    pub fn left_riemann(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_interior_knots() {
        let b = BasisSystem::new(4, 3).unwrap();
        assert_eq!(b.interior_knot_count(), 0);
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let b = BasisSystem::new(10, 3).unwrap();
        assert_eq!(b.interior_knot_count(), 6);
        let interior = &b.knots()[4..10];
        for (j, k) in interior.iter().enumerate() {
            assert!((k - (j + 1) as f64 / 7.0).abs() < 1e-15);
        }
        assert!(matches!(BasisSystem::new(3, 3), Err(Error::InvalidDimension(_))));
        assert!(matches!(BasisSystem::new(5, 0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn bernstein_case_matches_closed_form() {
        let b = BasisSystem::new(4, 3).unwrap();
        let t = 0.3_f64;
        let e = b.eval(&[t]).unwrap();
        let s = 1.0 - t;
        let expect = [s.powi(3), 3.0 * t * s * s, 3.0 * t * t * s, t.powi(3)];
        for k in 0..4 {
            assert!((e[(0, k)] - expect[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn partition_of_unity_and_nonnegativity() {
        let b = BasisSystem::new(10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        pts.extend([0.0, 1.0, 1.0 / 7.0, 0.5]);
        let e = b.eval(&pts).unwrap();
        for i in 0..pts.len() {
            let row = e.row(i);
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn clamped_endpoints_and_local_support() {
        let b = BasisSystem::new(10, 3).unwrap();
        let e = b.eval(&[0.0, 1.0, 0.5]).unwrap();
        assert_eq!(e[(0, 0)], 1.0);
        assert!(e.row(0).iter().skip(1).all(|&v| v == 0.0));
        assert!((e[(1, 9)] - 1.0).abs() < 1e-15);
        assert!(e.row(2).iter().filter(|&&v| v != 0.0).count() <= 4);
    }

    #[test]
    fn rejects_points_outside_domain() {
        let b = BasisSystem::new(6, 3).unwrap();
        assert!(matches!(b.eval(&[1.5]), Err(Error::OutOfDomain { .. })));
        assert!(matches!(b.eval(&[-1e-9]), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = BasisSystem::new(9, 3).unwrap();
        let h = 1e-5;
        for &t in &[0.11, 0.37, 0.62, 0.9] {
            let d1 = b.eval_deriv(&[t], 1).unwrap();
            let d2 = b.eval_deriv(&[t], 2).unwrap();
            let e = b.eval(&[t - h, t, t + h]).unwrap();
            for k in 0..9 {
                let fd1 = (e[(2, k)] - e[(0, k)]) / (2.0 * h);
                let fd2 = (e[(2, k)] - 2.0 * e[(1, k)] + e[(0, k)]) / (h * h);
                assert!((d1[(0, k)] - fd1).abs() < 1e-6, "d1 k={k}");
                assert!((d2[(0, k)] - fd2).abs() < 1e-3, "d2 k={k}");
            }
        }
        assert!(matches!(b.eval_deriv(&[0.5], 4), Err(Error::InvalidOrder { .. })));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((num - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    fn trapezoid_oracle(b: &BasisSystem, deriv: usize, npts: usize) -> DMatrix<f64> {
        let pts: Vec<f64> = (0..npts).map(|i| i as f64 / (npts - 1) as f64).collect();
        let e = b.eval_deriv(&pts, deriv).unwrap();
        let h = 1.0 / (npts - 1) as f64;
        let mut w = vec![h; npts];
        w[0] = 0.5 * h;
        w[npts - 1] = 0.5 * h;
        let k = b.num_funcs();
        DMatrix::from_fn(k, k, |i, j| (0..npts).map(|r| w[r] * e[(r, i)] * e[(r, j)]).sum())
    }

    #[test]
    fn gram_properties_and_trapezoid_oracle() {
        let b = BasisSystem::new(10, 3).unwrap();
        let g = b.gram();
        assert!((g.sum() - 1.0).abs() < 1e-10);
        assert!((&g - g.transpose()).amax() < 1e-15);
        let eig = g.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&v| v >= -1e-10));
        let oracle = trapezoid_oracle(&b, 0, 10_000);
        assert!((&g - oracle).amax() < 1e-6);
    }

    #[test]
    fn penalty_against_finite_difference_oracle() {
        let b = BasisSystem::new(10, 3).unwrap();
        let d = b.penalty(2).unwrap();
        assert!((&d - d.transpose()).amax() < 1e-9);
        assert!(d.clone().symmetric_eigenvalues().iter().all(|&v| v >= -1e-10 * d.amax()));

        // second derivatives by central differences of basis values
        let npts = 10_000;
        let h = 1.0 / (npts - 1) as f64;
        let pts: Vec<f64> = (0..npts).map(|i| i as f64 * h).collect();
        let e = b.eval(&pts).unwrap();
        let k = b.num_funcs();
        let mut second = DMatrix::zeros(npts, k);
        for r in 1..npts - 1 {
            for c in 0..k {
                second[(r, c)] = (e[(r + 1, c)] - 2.0 * e[(r, c)] + e[(r - 1, c)]) / (h * h);
            }
        }
        for c in 0..k {
            second[(0, c)] = 2.0 * second[(1, c)] - second[(2, c)];
            second[(npts - 1, c)] = 2.0 * second[(npts - 2, c)] - second[(npts - 3, c)];
        }
        let oracle = DMatrix::from_fn(k, k, |i, j| {
            let mut acc = 0.0;
            for r in 0..npts {
                let w = if r == 0 || r == npts - 1 { 0.5 * h } else { h };
                acc += w * second[(r, i)] * second[(r, j)];
            }
            acc
        });
        let rel = (&d - &oracle).norm() / d.norm();
        assert!(rel < 1e-4, "relative Frobenius error {rel}");
    }

    #[test]
    fn penalty_annihilates_affine_functions() {
        for k in [4, 7, 10, 13] {
            let b = BasisSystem::new(k, 3).unwrap();
            let d = b.penalty(2).unwrap();
            let ones = nalgebra::DVector::from_element(k, 1.0);
            let xi = nalgebra::DVector::from_vec(b.greville());
            let c = &ones * 0.7 - &xi * 2.3;
            let q = (c.transpose() * &d * &c)[(0, 0)];
            assert!(q.abs() < 1e-10 * d.amax().max(1.0), "k={k} q={q}");
            // greville coefficients reproduce t
            let e = b.eval(&[0.0, 0.3, 0.77, 1.0]).unwrap();
            let fitted = &e * &xi;
            for (r, t) in [0.0, 0.3, 0.77, 1.0].iter().enumerate() {
                assert!((fitted[r] - t).abs() < 1e-12);
            }
        }
        let b = BasisSystem::new(6, 3).unwrap();
        assert!(matches!(b.penalty(4), Err(Error::InvalidOrder { .. })));
    }

    #[test]
    fn doubling_gauss_nodes_leaves_matrices_unchanged() {
        let b = BasisSystem::new(10, 3).unwrap();
        for deriv in [0, 2] {
            let base = b.integrated_product(deriv, 4);
            let doubled = b.integrated_product(deriv, 8);
            let scale = base.amax().max(1.0);
            assert!((&base - doubled).amax() < 1e-12 * scale);
        }
    }

    #[test]
    fn quadrature_weights() {
        let g = QuadratureGrid::uniform(101).unwrap();
        assert_eq!(g.weights().len(), 100);
        assert!(g.weights().iter().all(|w| (w - 0.01).abs() < 1e-15));
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let ones = vec![1.0; 101];
        assert!((g.left_riemann(&ones) - 1.0).abs() < 1e-14);
        assert!(matches!(
            QuadratureGrid::new(vec![0.0, 0.5, 0.5, 1.0]),
            Err(Error::NonMonotoneGrid { index: 2 })
        ));
        assert!(QuadratureGrid::new(vec![0.3]).is_err());
    }
}

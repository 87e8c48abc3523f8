//! B-spline bases over the state-of-charge axis.
//!
//! Basis functions are evaluated with the triangular Cox-de Boor scheme,
//! which only touches the `p + 1` functions that are nonzero on the knot
//! span containing `z`. Terms whose knot-span denominator vanishes (repeated
//! knots) are taken as zero. The half-open zero-degree rule is closed at the
//! right end of the domain so the basis still sums to one at `z_max`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knot vector and degree of a B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBasis", into = "RawBasis")]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl TryFrom<RawBasis> for SplineBasis {
    type Error = Error;

    fn try_from(raw: RawBasis) -> Result<Self> {
        SplineBasis::new(raw.degree, raw.knots)
    }
}

impl From<SplineBasis> for RawBasis {
    fn from(b: SplineBasis) -> Self {
        RawBasis {
            degree: b.degree,
            knots: b.knots,
        }
    }
}

impl SplineBasis {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::InvalidInput(format!(
                "degree {degree} needs at least {} knots, got {}",
                2 * (degree + 1),
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidInput("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("knots must be non-decreasing".into()));
        }
        let basis = SplineBasis { degree, knots };
        let (lo, hi) = basis.domain();
        if lo >= hi {
            return Err(Error::InvalidRange(format!(
                "empty spline domain [{lo}, {hi}]"
            )));
        }
        Ok(basis)
    }

    /// Clamped cubic basis with `n_segments` uniform intervals on
    /// `[z_min, z_max]`.
    pub fn clamped_uniform(z_min: f64, z_max: f64, n_segments: usize) -> Result<Self> {
        Self::clamped_uniform_with_degree(3, z_min, z_max, n_segments)
    }

    pub fn clamped_uniform_with_degree(
        degree: usize,
        z_min: f64,
        z_max: f64,
        n_segments: usize,
    ) -> Result<Self> {
        if !(z_min < z_max) || !z_min.is_finite() || !z_max.is_finite() {
            return Err(Error::InvalidRange(format!(
                "z_min = {z_min} must be below z_max = {z_max}"
            )));
        }
        if n_segments == 0 {
            return Err(Error::InvalidInput("n_segments must be at least 1".into()));
        }
        let span = z_max - z_min;
        let mut knots = Vec::with_capacity(n_segments + 2 * degree + 1);
        knots.extend(std::iter::repeat_n(z_min, degree));
        for j in 0..=n_segments {
            let z = if j == n_segments {
                z_max
            } else {
                z_min + span * (j as f64) / (n_segments as f64)
            };
            knots.push(z);
        }
        knots.extend(std::iter::repeat_n(z_max, degree));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `h`.
    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.len()])
    }

    /// Indices `mu` of the knot intervals `[knots[mu], knots[mu + 1])` of
    /// nonzero length inside the domain.
    fn intervals(&self) -> impl Iterator<Item = usize> + '_ {
        (self.degree..self.len()).filter(|&mu| self.knots[mu + 1] > self.knots[mu])
    }

    pub fn n_segments(&self) -> usize {
        self.intervals().count()
    }

    /// Midpoint of every nonzero-length knot interval, in increasing order.
    pub fn interval_midpoints(&self) -> Vec<f64> {
        self.intervals()
            .map(|mu| 0.5 * (self.knots[mu] + self.knots[mu + 1]))
            .collect()
    }

    pub fn contains(&self, z: f64) -> bool {
        let (lo, hi) = self.domain();
        z >= lo && z <= hi
    }

    /// Clamp `z` into the domain.
    pub fn clamp(&self, z: f64) -> f64 {
        let (lo, hi) = self.domain();
        z.clamp(lo, hi)
    }

    fn check(&self, z: f64, index: Option<usize>) -> Result<()> {
        if self.contains(z) {
            Ok(())
        } else {
            let (lo, hi) = self.domain();
            Err(Error::OutOfDomain { z, lo, hi, index })
        }
    }

    fn find_span(&self, z: f64) -> usize {
        let h = self.len();
        let (_, hi) = self.domain();
        if z >= hi {
            // closed right end: last interval of nonzero length
            let mut mu = h - 1;
            while self.knots[mu + 1] <= self.knots[mu] {
                mu -= 1;
            }
            return mu;
        }
        // largest mu in [p, h-1] with knots[mu] <= z
        let p = self.degree;
        let upper = self.knots[p..=h].partition_point(|&k| k <= z);
        (p + upper - 1).min(h - 1)
    }

    /// Values of the `p + 1` basis functions that can be nonzero at `z`,
    /// together with the index of the first one.
    pub fn eval_nonzero(&self, z: f64) -> Result<(usize, Vec<f64>)> {
        self.check(z, None)?;
        let mu = self.find_span(z);
        Ok((mu - self.degree, self.nonzero_values(mu, z)))
    }

    fn nonzero_values(&self, mu: usize, z: f64) -> Vec<f64> {
        let p = self.degree;
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = z - u[mu + 1 - j];
            right[j] = u[mu + j] - z;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// All `h` basis values at `z`.
    pub fn eval_basis(&self, z: f64) -> Result<Vec<f64>> {
        let (first, vals) = self.eval_nonzero(z)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// `d`-th derivatives of the nonzero basis functions at `z`, with the
    /// index of the first one.
    pub fn eval_derivative_nonzero(&self, z: f64, d: usize) -> Result<(usize, Vec<f64>)> {
        let p = self.degree;
        if d > p {
            return Err(Error::InvalidOrder { order: d, max: p });
        }
        self.check(z, None)?;
        let mu = self.find_span(z);
        if d == 0 {
            return Ok((mu - p, self.nonzero_values(mu, z)));
        }
        Ok((mu - p, self.derivatives(mu, z, d)))
    }

    /// All `h` derivatives of order `d` at `z`.
    pub fn eval_basis_derivative(&self, z: f64, d: usize) -> Result<Vec<f64>> {
        let (first, vals) = self.eval_derivative_nonzero(z, d)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    // Triangular table of basis values and knot differences, then the
    // derivative recursion applied to it.
    fn derivatives(&self, mu: usize, z: f64, d: usize) -> Vec<f64> {
        let p = self.degree;
        let u = &self.knots;
        let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };

        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = z - u[mu + 1 - j];
            right[j] = u[mu + j] - z;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = div(ndu[r][j - 1], ndu[j][r]);
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![0.0; p + 1];
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0].iter_mut().for_each(|v| *v = 0.0);
            a[1].iter_mut().for_each(|v| *v = 0.0);
            a[0][0] = 1.0;
            let mut value = 0.0;
            for k in 1..=d {
                let mut acc = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if rk >= 0 {
                    let rk = rk as usize;
                    a[s2][0] = div(a[s1][0], ndu[pk + 1][rk]);
                    acc = a[s2][0] * ndu[rk][pk];
                }
                let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2: usize = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = div(a[s1][j] - a[s1][j - 1], ndu[pk + 1][idx]);
                    acc += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = div(-a[s1][k - 1], ndu[pk + 1][r]);
                    acc += a[s2][k] * ndu[r][pk];
                }
                value = acc;
                std::mem::swap(&mut s1, &mut s2);
            }
            ders[r] = value;
        }
        let factor: f64 = (0..d).map(|k| (p - k) as f64).product();
        ders.iter_mut().for_each(|v| *v *= factor);
        ders
    }

    /// Basis matrix with row `k` equal to the basis evaluated at
    /// `z_samples[k]`.
    pub fn basis_matrix(&self, z_samples: &[f64]) -> Result<DMatrix<f64>> {
        let mut g = DMatrix::zeros(z_samples.len(), self.len());
        for (k, &z) in z_samples.iter().enumerate() {
            self.check(z, Some(k))?;
            let mu = self.find_span(z);
            let first = mu - self.degree;
            for (j, v) in self.nonzero_values(mu, z).into_iter().enumerate() {
                g[(k, first + j)] = v;
            }
        }
        Ok(g)
    }

    /// Highest-order derivative of every basis function, one row per knot
    /// interval, evaluated at the interval midpoints. For a cubic basis the
    /// third derivative is constant on each interval.
    pub fn third_derivative_knot_matrix(&self) -> Result<DMatrix<f64>> {
        if self.degree != 3 {
            return Err(Error::InvalidOrder {
                order: 3,
                max: self.degree,
            });
        }
        let mids = self.interval_midpoints();
        let mut g3 = DMatrix::zeros(mids.len(), self.len());
        for (row, &z) in mids.iter().enumerate() {
            let (first, vals) = self.eval_derivative_nonzero(z, 3)?;
            for (j, v) in vals.into_iter().enumerate() {
                g3[(row, first + j)] = v;
            }
        }
        Ok(g3)
    }
}

/// A scalar function of SOC expressed in a B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve", into = "RawCurve")]
pub struct SplineCurve {
    basis: SplineBasis,
    control_points: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawCurve {
    degree: usize,
    knots: Vec<f64>,
    control_points: Vec<f64>,
}

impl TryFrom<RawCurve> for SplineCurve {
    type Error = Error;

    fn try_from(raw: RawCurve) -> Result<Self> {
        SplineCurve::new(SplineBasis::new(raw.degree, raw.knots)?, raw.control_points)
    }
}

impl From<SplineCurve> for RawCurve {
    fn from(c: SplineCurve) -> Self {
        RawCurve {
            degree: c.basis.degree,
            knots: c.basis.knots,
            control_points: c.control_points,
        }
    }
}

impl SplineCurve {
    pub fn new(basis: SplineBasis, control_points: Vec<f64>) -> Result<Self> {
        if control_points.len() != basis.len() {
            return Err(Error::LengthMismatch {
                left: control_points.len(),
                right: basis.len(),
            });
        }
        Ok(SplineCurve {
            basis,
            control_points,
        })
    }

    pub fn constant(basis: SplineBasis, value: f64) -> Self {
        let h = basis.len();
        SplineCurve {
            basis,
            control_points: vec![value; h],
        }
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn control_points(&self) -> &[f64] {
        &self.control_points
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        let (first, vals) = self.basis.eval_nonzero(z)?;
        Ok(vals
            .iter()
            .zip(&self.control_points[first..])
            .map(|(g, c)| g * c)
            .sum())
    }

    pub fn eval_derivative(&self, z: f64, d: usize) -> Result<f64> {
        let (first, vals) = self.basis.eval_derivative_nonzero(z, d)?;
        Ok(vals
            .iter()
            .zip(&self.control_points[first..])
            .map(|(g, c)| g * c)
            .sum())
    }

    /// Least-squares fit of `values` sampled at `z` with an optional ridge
    /// on the control points.
    pub fn fit(basis: SplineBasis, z: &[f64], values: &[f64], ridge: f64) -> Result<Self> {
        if z.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: z.len(),
                right: values.len(),
            });
        }
        let g = basis.basis_matrix(z)?;
        let y = DVector::from_column_slice(values);
        let mut normal = g.tr_mul(&g);
        let scale = normal.trace() / normal.nrows() as f64;
        for i in 0..normal.nrows() {
            normal[(i, i)] += ridge * scale.max(f64::MIN_POSITIVE);
        }
        let rhs = g.tr_mul(&y);
        let chol = normal.cholesky().ok_or(Error::RankDeficient)?;
        let c = chol.solve(&rhs);
        SplineCurve::new(basis, c.as_slice().to_vec())
    }
}

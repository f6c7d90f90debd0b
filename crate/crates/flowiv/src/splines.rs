//! Penalized B-spline bases on equidistant knots.
//!
//! Bases follow the Cox-de Boor recursion over an open knot sequence: the
//! boundary knots are repeated `degree + 1` times and the interior knots are
//! equally spaced strictly inside the support, so the basis has dimension
//! `interior + degree + 1`, sums to one everywhere on `[lo, hi]`, and each
//! evaluation touches at most `degree + 1` adjacent basis functions.
//!
//! Smoothness is not controlled through knot placement but through a
//! difference penalty `K = D'D` on adjacent coefficients, whose null space
//! holds exactly the polynomials of degree `< order`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Open knot sequence for a B-spline basis on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    interior: usize,
    lo: f64,
    hi: f64,
    /// Full sequence with boundary knots repeated `degree + 1` times.
    knots: Vec<f64>,
}

impl KnotVector {
    /// Equidistant interior knots on `[lo, hi]`.
    pub fn new(lo: f64, hi: f64, interior: usize, degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidArgument("spline degree must be >= 1".into()));
        }
        if interior < 1 {
            return Err(Error::InvalidArgument(
                "interior knot count must be >= 1".into(),
            ));
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument("knot bounds must be finite".into()));
        }
        let span = hi - lo;
        if !(span > 0.0) || span <= f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            return Err(Error::DegenerateSupport(format!(
                "covariate support [{lo}, {hi}] is too narrow for a spline basis"
            )));
        }
        let mut knots = Vec::with_capacity(interior + 2 * (degree + 1));
        knots.extend(std::iter::repeat_n(lo, degree + 1));
        let step = span / (interior as f64 + 1.0);
        for j in 1..=interior {
            knots.push(lo + step * j as f64);
        }
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(KnotVector {
            degree,
            interior,
            lo,
            hi,
            knots,
        })
    }

    /// Knots spanning the observed range of `x`.
    pub fn from_data(x: &[f64], interior: usize, degree: usize) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in x {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(
                    "covariate contains a non-finite value".into(),
                ));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if x.len() < 2 || lo == hi {
            return Err(Error::DegenerateSupport(
                "need at least two distinct covariate values".into(),
            ));
        }
        KnotVector::new(lo, hi, interior, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior(&self) -> usize {
        self.interior
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Interior knots only, without the repeated boundary knots.
    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.degree + 1 + self.interior]
    }

    /// Number of basis functions: `interior + degree + 1`.
    pub fn dimension(&self) -> usize {
        self.interior + self.degree + 1
    }

    /// Nonzero basis values at `x`: column offset of the first nonzero basis
    /// plus the `degree + 1` values, and whether `x` was clamped into range.
    ///
    /// Uses the triangular de Boor scheme, which evaluates exactly the
    /// `degree + 1` bases alive on the knot span containing `x`.
    pub fn basis_at(&self, x: f64, values: &mut Vec<f64>) -> (usize, bool) {
        let p = self.degree;
        let clamped = x < self.lo || x > self.hi;
        let u = x.clamp(self.lo, self.hi);

        // Knot span index k with t[k] <= u < t[k+1]; the final span absorbs hi.
        let last_span = self.knots.len() - p - 2;
        let mut k = p;
        while k < last_span && u >= self.knots[k + 1] {
            k += 1;
        }

        values.clear();
        values.resize(p + 1, 0.0);
        values[0] = 1.0;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        for j in 1..=p {
            left[j] = u - self.knots[k + 1 - j];
            right[j] = self.knots[k + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (k - p, clamped)
    }
}

/// Design matrix in compact row form: each row stores the `degree + 1`
/// contiguous nonzero basis values and the column they start at.
#[derive(Debug, Clone)]
pub struct Design {
    dim: usize,
    width: usize,
    starts: Vec<u32>,
    values: Vec<f64>,
    clamped: usize,
}

impl Design {
    pub fn new(kv: &KnotVector, x: &[f64]) -> Design {
        let width = kv.degree() + 1;
        let mut starts = Vec::with_capacity(x.len());
        let mut values = Vec::with_capacity(x.len() * width);
        let mut clamped = 0;
        let mut row = Vec::with_capacity(width);
        for &xi in x {
            let (start, was_clamped) = kv.basis_at(xi, &mut row);
            if was_clamped {
                clamped += 1;
            }
            starts.push(start as u32);
            values.extend_from_slice(&row);
        }
        Design {
            dim: kv.dimension(),
            width,
            starts,
            values,
            clamped,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.starts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rows whose covariate fell outside the knot range and was clamped.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let start = self.starts[i] as usize;
        (start, &self.values[i * self.width..(i + 1) * self.width])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.dim);
        for i in 0..self.n_rows() {
            let (start, vals) = self.row(i);
            for (j, &v) in vals.iter().enumerate() {
                m[(i, start + j)] = v;
            }
        }
        m
    }

    /// Fitted values `X b` for one coefficient vector.
    pub fn predict(&self, coef: &DVector<f64>) -> Vec<f64> {
        debug_assert_eq!(coef.len(), self.dim);
        let mut out = Vec::with_capacity(self.n_rows());
        for i in 0..self.n_rows() {
            let (start, vals) = self.row(i);
            let mut acc = 0.0;
            for (j, &v) in vals.iter().enumerate() {
                acc += v * coef[start + j];
            }
            out.push(acc);
        }
        out
    }

    pub fn predict_one(&self, i: usize, coef: &DVector<f64>) -> f64 {
        let (start, vals) = self.row(i);
        vals.iter()
            .enumerate()
            .map(|(j, &v)| v * coef[start + j])
            .sum()
    }

    /// Accumulate `X'WX` and `X'Wt` over all rows, exploiting the band
    /// structure of the rows. `xtwx` and `xtwt` are zeroed first.
    pub fn weighted_normal_eqs(
        &self,
        weights: &[f64],
        targets: &[f64],
        xtwx: &mut DMatrix<f64>,
        xtwt: &mut DVector<f64>,
    ) {
        debug_assert_eq!(weights.len(), self.n_rows());
        debug_assert_eq!(targets.len(), self.n_rows());
        xtwx.fill(0.0);
        xtwt.fill(0.0);
        for i in 0..self.n_rows() {
            let (start, vals) = self.row(i);
            let w = weights[i];
            let wt = w * targets[i];
            for a in 0..vals.len() {
                let wa = w * vals[a];
                xtwt[start + a] += vals[a] * wt;
                for b in a..vals.len() {
                    xtwx[(start + a, start + b)] += wa * vals[b];
                }
            }
        }
        // Mirror the upper triangle.
        for a in 0..self.dim {
            for b in (a + 1)..self.dim {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
    }
}

/// Difference penalty `K = D'D` with `D` the `order`-th difference operator.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    order: usize,
    matrix: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if order < 1 || order >= dim {
            return Err(Error::InvalidArgument(format!(
                "penalty order {order} must lie in [1, dim) for dimension {dim}"
            )));
        }
        let d = difference_matrix(dim, order);
        Ok(PenaltyMatrix {
            order,
            matrix: d.transpose() * d,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Rank of `K`: `dim - order`; the null space holds polynomials of
    /// degree `< order` in the coefficient index.
    pub fn rank(&self) -> usize {
        self.dim() - self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `b' K b`, the roughness of a coefficient vector.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        (b.transpose() * &self.matrix * b)[(0, 0)]
    }
}

/// `order`-th difference operator, built by stacking first differences.
pub fn difference_matrix(dim: usize, order: usize) -> DMatrix<f64> {
    assert!(order >= 1 && order < dim);
    let mut d = DMatrix::<f64>::zeros(dim - 1, dim);
    for i in 0..dim - 1 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    let mut acc = d;
    for _ in 1..order {
        let rows = acc.nrows();
        let mut next = DMatrix::<f64>::zeros(rows - 1, dim);
        for i in 0..rows - 1 {
            for j in 0..dim {
                next[(i, j)] = acc[(i + 1, j)] - acc[(i, j)];
            }
        }
        acc = next;
    }
    acc
}

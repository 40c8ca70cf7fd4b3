//! Clamped B-spline bases, control polygons and the partial-monotonicity
//! machinery used to keep serve-advantage curves non-increasing.
//!
//! Indices are 0-based throughout: the coefficient `beta[m]` multiplies the
//! basis function supported on `[t[m], t[m + k])`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spline order; keeps per-evaluation scratch on the stack.
pub const MAX_ORDER: usize = 16;

/// Clamped knot sequence of order `k` on `[lower, upper]`, together with the
/// threshold `l0` from which the spline is required to be non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineSpecRepr", into = "SplineSpecRepr")]
pub struct SplineSpec {
    order: usize,
    lower: f64,
    upper: f64,
    l0: f64,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SplineSpecRepr {
    order: usize,
    lower: f64,
    upper: f64,
    interior_knots: Vec<f64>,
    l0: f64,
}

impl TryFrom<SplineSpecRepr> for SplineSpec {
    type Error = Error;

    fn try_from(r: SplineSpecRepr) -> Result<Self> {
        SplineSpec::new(r.lower, r.upper, r.order, &r.interior_knots, r.l0)
    }
}

impl From<SplineSpec> for SplineSpecRepr {
    fn from(s: SplineSpec) -> Self {
        SplineSpecRepr {
            order: s.order,
            lower: s.lower,
            upper: s.upper,
            interior_knots: s.interior,
            l0: s.l0,
        }
    }
}

/// Piecewise-linear curve through `(knot average, coefficient)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolygon {
    pub vertices: Vec<(f64, f64)>,
}

impl ControlPolygon {
    /// Linear interpolation of the polygon at `s`; clamps outside the vertex range.
    pub fn value_at(&self, s: f64) -> f64 {
        let v = &self.vertices;
        if s <= v[0].0 {
            return v[0].1;
        }
        for w in v.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if s <= x1 {
                return y0 + (y1 - y0) * (s - x0) / (x1 - x0);
            }
        }
        v[v.len() - 1].1
    }
}

impl SplineSpec {
    /// Builds a clamped knot vector `(L,…,L, interior…, U,…,U)` with `L` and
    /// `U` each repeated `order` times.
    pub fn new(lower: f64, upper: f64, order: usize, interior: &[f64], l0: f64) -> Result<Self> {
        if !(2..=MAX_ORDER).contains(&order) {
            return Err(Error::InvalidSpec(format!(
                "order must be in 2..={MAX_ORDER}, got {order}"
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidSpec(format!(
                "domain [{lower}, {upper}] must be finite and non-empty"
            )));
        }
        if !(lower <= l0 && l0 <= upper) {
            return Err(Error::InvalidSpec(format!(
                "threshold {l0} must lie in [{lower}, {upper}]"
            )));
        }
        for (i, &t) in interior.iter().enumerate() {
            if !(t > lower && t < upper) {
                return Err(Error::InvalidSpec(format!(
                    "interior knot {t} is not strictly inside ({lower}, {upper})"
                )));
            }
            if i > 0 && t <= interior[i - 1] {
                return Err(Error::InvalidSpec(format!(
                    "interior knots must be strictly increasing ({} then {t})",
                    interior[i - 1]
                )));
            }
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        knots.extend(std::iter::repeat_n(lower, order));
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(upper, order));
        Ok(SplineSpec {
            order,
            lower,
            upper,
            l0,
            interior: interior.to_vec(),
            knots,
        })
    }

    /// Order 4 on `[1, 15]` with interior knots `2, 3, 4, 7, 11` and `l0 = 3`:
    /// the configuration used for the rally-length curves.
    pub fn tennis_default() -> Self {
        SplineSpec::new(1.0, 15.0, 4, &[2.0, 3.0, 4.0, 7.0, 11.0], 3.0)
            .expect("default spec is valid")
    }

    /// Same knots, different monotonicity threshold.
    pub fn with_l0(&self, l0: f64) -> Result<Self> {
        SplineSpec::new(self.lower, self.upper, self.order, &self.interior, l0)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Basis dimension `M = order + #interior knots`.
    pub fn dim(&self) -> usize {
        self.order + self.interior.len()
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn l0(&self) -> f64 {
        self.l0
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    fn check_domain(&self, s: f64) -> Result<()> {
        if s >= self.lower && s <= self.upper {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                s,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }

    fn check_dim(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: coeffs.len(),
            })
        }
    }

    /// Knot span `mu` with `t[mu] <= s < t[mu + 1]`; `s = U` maps to the last
    /// non-degenerate span so that values there are left limits.
    fn span(&self, s: f64) -> usize {
        let m = self.dim();
        if s >= self.upper {
            return m - 1;
        }
        // first index with t > s, minus one; restricted to [k-1, M-1]
        let pos = self.knots.partition_point(|&t| t <= s);
        pos.saturating_sub(1).clamp(self.order - 1, m - 1)
    }

    /// Non-zero B-splines of order `ord` (`ord <= k`) at `s`, written into
    /// `out[..ord]`. Entry `r` belongs to basis index `span + 1 - ord + r`.
    /// Returns the span.
    fn local_basis(&self, s: f64, ord: usize, out: &mut [f64]) -> usize {
        let t = &self.knots;
        let mu = self.span(s);
        let deg = ord - 1;
        let mut left = [0.0f64; MAX_ORDER];
        let mut right = [0.0f64; MAX_ORDER];
        out[0] = 1.0;
        for j in 1..=deg {
            left[j] = s - t[mu + 1 - j];
            right[j] = t[mu + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        mu
    }

    /// All `M` basis values at `s` (Cox–de Boor, right-continuous, with
    /// `b_M(U) = 1`).
    pub fn basis_all(&self, s: f64) -> Result<Vec<f64>> {
        self.check_domain(s)?;
        let k = self.order;
        let mut local = vec![0.0; k];
        let mu = self.local_basis(s, k, &mut local);
        let mut full = vec![0.0; self.dim()];
        full[mu + 1 - k..=mu].copy_from_slice(&local);
        Ok(full)
    }

    /// `sum_m coeffs[m] * b_m(s)`.
    pub fn spline_eval(&self, coeffs: &[f64], s: f64) -> Result<f64> {
        self.check_dim(coeffs)?;
        self.check_domain(s)?;
        Ok(self.eval_unchecked(coeffs, s))
    }

    pub(crate) fn eval_unchecked(&self, coeffs: &[f64], s: f64) -> f64 {
        let k = self.order;
        let mut local = [0.0f64; MAX_ORDER];
        let buf = &mut local[..k];
        let mu = self.local_basis(s, k, buf);
        let first = mu + 1 - k;
        buf.iter()
            .zip(&coeffs[first..=mu])
            .map(|(b, c)| b * c)
            .sum()
    }

    /// First derivative through the order-`k-1` basis on the same knots. At an
    /// interior knot the right derivative is returned; at `U` the left one.
    pub fn spline_derivative(&self, coeffs: &[f64], s: f64) -> Result<f64> {
        self.check_dim(coeffs)?;
        self.check_domain(s)?;
        Ok(self.derivative_unchecked(coeffs, s))
    }

    pub(crate) fn derivative_unchecked(&self, coeffs: &[f64], s: f64) -> f64 {
        let k = self.order;
        let t = &self.knots;
        let ord = k - 1;
        let mut local = [0.0f64; MAX_ORDER];
        let buf = &mut local[..ord];
        let mu = self.local_basis(s, ord, buf);
        let first = mu + 1 - ord;
        let mut acc = 0.0;
        for (r, &b) in buf.iter().enumerate() {
            let m = first + r;
            if m == 0 || b == 0.0 {
                continue;
            }
            let width = t[m + k - 1] - t[m];
            if width > 0.0 {
                acc += (coeffs[m] - coeffs[m - 1]) / width * b;
            }
        }
        (k - 1) as f64 * acc
    }

    /// `tbar[m] = (t[m+1] + … + t[m+k-1]) / (k-1)`.
    pub fn knot_averages(&self) -> Vec<f64> {
        let k = self.order;
        (0..self.dim())
            .map(|m| self.knots[m + 1..m + k].iter().sum::<f64>() / (k - 1) as f64)
            .collect()
    }

    pub fn control_polygon(&self, coeffs: &[f64]) -> Result<ControlPolygon> {
        self.check_dim(coeffs)?;
        Ok(ControlPolygon {
            vertices: self
                .knot_averages()
                .into_iter()
                .zip(coeffs.iter().copied())
                .collect(),
        })
    }

    /// 1-based index of the smallest knot strictly greater than `s`, or
    /// `M + 1` when no knot below `U` exceeds `s`.
    pub fn knot_index_after(&self, s: f64) -> usize {
        let m = self.dim();
        // knots[..m] are t_1..t_M; t_{M+1} = U
        match self.knots[..m].iter().position(|&t| t > s) {
            Some(i) => i + 1,
            None => m + 1,
        }
    }

    /// 0-based index of the first coefficient that is order-constrained for
    /// monotonicity on `[l0, U]`; coefficients before it are free. For the
    /// default knots with `l0 = 3` this is 3 (the fourth coefficient).
    pub fn first_constrained_index(&self) -> usize {
        // 1-based m_{L0} - k + 1, shifted to 0-based
        self.knot_index_after(self.l0) - self.order
    }

    /// True when `coeffs[m] <= coeffs[m-1]` for every constrained `m`.
    pub fn is_nonincreasing_on(&self, coeffs: &[f64]) -> Result<bool> {
        self.check_dim(coeffs)?;
        Ok(is_nonincreasing_from(coeffs, self.first_constrained_index()))
    }
}

/// `coeffs[m] <= coeffs[m-1]` for all `m >= first` (with `first >= 1`).
pub fn is_nonincreasing_from(coeffs: &[f64], first: usize) -> bool {
    let first = first.max(1);
    (first..coeffs.len()).all(|m| coeffs[m] <= coeffs[m - 1])
}

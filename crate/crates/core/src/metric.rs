//! Point sets, dissimilarity matrices, distributions and labelled pairs.
//!
//! Every type here is validated on construction and immutable afterwards, so
//! values can be shared freely between worker threads.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Largest diagonal magnitude accepted (and zeroed) by [`validate_semimetric`].
pub const DIAGONAL_TOL: f64 = 1e-9;
/// Largest deviation of a distribution's total mass from 1 that is repaired
/// by renormalisation.
pub const MASS_TOL: f64 = 1e-9;

/// Symmetric, nonnegative, zero-diagonal `n × n` matrix. The triangle
/// inequality is not required.
#[derive(Clone, Debug, PartialEq)]
pub struct SemimetricMatrix {
    d: Array2<f64>,
}

/// Checks a raw square matrix and symmetrises it by averaging with its
/// transpose.
pub fn validate_semimetric(raw: &Array2<f64>) -> Result<SemimetricMatrix> {
    let (rows, cols) = raw.dim();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    for ((i, j), &v) in raw.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { i, j });
        }
        if v < 0.0 {
            return Err(Error::NegativeEntry { i, j, value: v });
        }
    }
    for i in 0..rows {
        let v = raw[[i, i]];
        if v.abs() > DIAGONAL_TOL {
            return Err(Error::NonzeroDiagonal { i, value: v });
        }
    }
    let mut d = Array2::zeros((rows, rows));
    for i in 0..rows {
        for j in (i + 1)..rows {
            let v = 0.5 * (raw[[i, j]] + raw[[j, i]]);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    Ok(SemimetricMatrix { d })
}

impl SemimetricMatrix {
    pub fn new(raw: Array2<f64>) -> Result<Self> {
        validate_semimetric(&raw)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::NonSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let raw = Array2::from_shape_vec((n, n), flat).expect("shape checked above");
        validate_semimetric(&raw)
    }

    /// Wraps a matrix the caller has already made symmetric, nonnegative and
    /// zero on the diagonal.
    pub(crate) fn from_array_unchecked(d: Array2<f64>) -> Self {
        debug_assert_eq!(d.nrows(), d.ncols());
        SemimetricMatrix { d }
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn into_array(self) -> Array2<f64> {
        self.d
    }

    /// `max_{i,j} |self[i][j] - other[i][j]|`.
    pub fn sup_distance(&self, other: &SemimetricMatrix) -> Result<f64> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: other.n(),
            });
        }
        Ok(self
            .d
            .iter()
            .zip(other.d.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// `n` points in `dim`-dimensional Euclidean space.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    coords: Array2<f64>,
}

impl PointCloud {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        let n = coords.nrows();
        if n < 2 {
            return Err(Error::TooFewPoints(n));
        }
        if let Some(((i, j), _)) = coords.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { i, j });
        }
        Ok(PointCloud { coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        PointCloud::new(Array2::from_shape_vec((rows.len(), dim), flat).expect("shape checked"))
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn point(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.coords.row(i)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.coords
            .row(i)
            .iter()
            .zip(self.coords.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Pairwise ℓ2 distance matrix of a point cloud.
pub fn euclidean_matrix(points: &PointCloud) -> SemimetricMatrix {
    let n = points.n();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = points.distance(i, j);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    SemimetricMatrix::from_array_unchecked(d)
}

/// A probability vector over the `n` points.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    p: Vec<f64>,
}

impl Distribution {
    /// Validates the masses; a total within [`MASS_TOL`] of 1 is renormalised.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NegativeMass { index, value });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(Error::MassMismatch { sum });
        }
        // Sums already at rounding level are kept as-is so files round-trip.
        let p = if (sum - 1.0).abs() <= 1e-14 {
            p
        } else {
            p.into_iter().map(|v| v / sum).collect()
        };
        Ok(Distribution { p })
    }

    /// Normalises arbitrary nonnegative weights with a positive total.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NegativeMass { index, value });
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::MassMismatch { sum });
        }
        Ok(Distribution {
            p: w.into_iter().map(|v| v / sum).collect(),
        })
    }

    pub fn point_mass(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::InvalidIndex { index: i, len: n });
        }
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Ok(Distribution { p })
    }

    pub fn uniform(n: usize) -> Self {
        Distribution {
            p: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn support_size(&self) -> usize {
        self.p.iter().filter(|&&v| v > 0.0).count()
    }

    pub(crate) fn expect_len(&self, n: usize) -> Result<()> {
        if self.p.len() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: n,
                found: self.p.len(),
            })
        }
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.p[i]
    }
}

/// Two distributions (by index into a distribution list) and their measured
/// transport cost.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSample {
    pub mu: usize,
    pub rho: usize,
    pub w1: f64,
}

/// Distribution list plus samples that reference it.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    distributions: Vec<Distribution>,
    samples: Vec<TrainSample>,
}

impl PairSet {
    pub fn new(distributions: Vec<Distribution>, samples: Vec<TrainSample>) -> Result<Self> {
        let len = distributions.len();
        if let Some(n) = distributions.first().map(Distribution::len) {
            for d in &distributions {
                d.expect_len(n)?;
            }
        }
        for s in &samples {
            for index in [s.mu, s.rho] {
                if index >= len {
                    return Err(Error::InvalidIndex { index, len });
                }
            }
            if !s.w1.is_finite() || s.w1 < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "sample transport cost must be a nonnegative number, got {}",
                    s.w1
                )));
            }
        }
        Ok(PairSet {
            distributions,
            samples,
        })
    }

    pub fn distributions(&self) -> &[Distribution] {
        &self.distributions
    }

    pub fn samples(&self) -> &[TrainSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of points the distributions live on (0 when there are none).
    pub fn n_points(&self) -> usize {
        self.distributions.first().map_or(0, Distribution::len)
    }

    pub fn pair(&self, k: usize) -> (&Distribution, &Distribution, f64) {
        let s = &self.samples[k];
        (&self.distributions[s.mu], &self.distributions[s.rho], s.w1)
    }
}

/// Mean and population standard deviation of a list of values.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub std: f64,
}

impl ErrorSummary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return ErrorSummary {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        ErrorSummary {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Per-entry `|approx - exact| / exact`.
pub fn relative_errors(approx: &[f64], exact: &[f64]) -> Result<Vec<f64>> {
    if approx.len() != exact.len() {
        return Err(Error::LengthMismatch {
            left: approx.len(),
            right: exact.len(),
        });
    }
    approx
        .iter()
        .zip(exact)
        .enumerate()
        .map(|(index, (&a, &e))| {
            if e > 0.0 {
                Ok((a - e).abs() / e)
            } else {
                Err(Error::ZeroExact { index, value: e })
            }
        })
        .collect()
}

pub fn mean_relative_error(approx: &[f64], exact: &[f64]) -> Result<ErrorSummary> {
    Ok(ErrorSummary::of(&relative_errors(approx, exact)?))
}

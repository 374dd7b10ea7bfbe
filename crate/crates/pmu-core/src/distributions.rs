//! Input probability laws, covariance validation, and reproducible
//! correlated sampling.
//!
//! An [`InputSet`] couples named marginal distributions with an n×n
//! covariance matrix. Correlation is supported among Gaussian marginals
//! only; uniform and empirical marginals must be uncorrelated (zero
//! off-diagonal covariance). Joint draws are deterministic per
//! `(input_set, count, seed)`: each row is generated from its own
//! counter-derived random stream, so parallel and serial sampling agree
//! bit-exactly.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

/// Relative tolerance for covariance symmetry and diagonal consistency.
pub const COV_CONSISTENCY_RTOL: f64 = 1e-12;

/// Eigenvalues of the covariance matrix must be `>= -PSD_TOL_FACTOR * trace`.
/// Small negative eigenvalues inside the band are clamped to zero before
/// factorization; measured covariances are noisy.
pub const PSD_TOL_FACTOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("standard deviation must be finite and >= 0, got {0}")]
    InvalidStd(f64),
    #[error("uniform bounds must be finite with lower <= upper, got [{lower}, {upper}]")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("empirical sample array must be non-empty")]
    EmptySample,
    #[error("empirical sample array must be sorted non-decreasing (violation at index {0})")]
    UnsortedSample(usize),
    #[error("non-finite value in distribution parameters")]
    NonFiniteParameter,
    #[error("input set must contain at least one input")]
    EmptyInputSet,
    #[error("dimension mismatch: {names} names, {marginals} marginals, covariance {rows}x{cols}")]
    DimensionMismatch {
        names: usize,
        marginals: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate input name `{0}`")]
    DuplicateName(String),
    #[error("asymmetric covariance at ({row},{col}): {a} vs {b}")]
    AsymmetricCovariance { row: usize, col: usize, a: f64, b: f64 },
    #[error("covariance diagonal [{index}] = {got} does not match marginal variance {expected}")]
    DiagonalMismatch { index: usize, expected: f64, got: f64 },
    #[error("covariance is not positive semidefinite (eigenvalue {eigenvalue} below tolerance {tolerance})")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },
    #[error("non-Gaussian marginal {index} has nonzero covariance with input {other}")]
    CorrelatedNonGaussian { index: usize, other: usize },
    #[error("quantile input array is empty")]
    EmptyQuantileInput,
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("sample count must be positive")]
    ZeroCount,
}

/// A univariate probability law for one input quantity.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    /// Normal law N(mean, std²).
    Gaussian { mean: f64, std: f64 },
    /// Continuous uniform on `[lower, upper]`.
    Uniform { lower: f64, upper: f64 },
    /// Empirical law given by a sorted, non-decreasing sample; draws use
    /// linear-interpolated inverse-CDF (same convention as
    /// [`empirical_quantile`]).
    Empirical { samples: Vec<f64> },
}

impl Distribution {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self, DistributionError> {
        if !mean.is_finite() {
            return Err(DistributionError::NonFiniteParameter);
        }
        if !std.is_finite() || std < 0.0 {
            return Err(DistributionError::InvalidStd(std));
        }
        Ok(Self::Gaussian { mean, std })
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self, DistributionError> {
        if !lower.is_finite() || !upper.is_finite() || lower > upper {
            return Err(DistributionError::InvalidBounds { lower, upper });
        }
        Ok(Self::Uniform { lower, upper })
    }

    pub fn empirical(samples: Vec<f64>) -> Result<Self, DistributionError> {
        if samples.is_empty() {
            return Err(DistributionError::EmptySample);
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            let _ = i;
            return Err(DistributionError::NonFiniteParameter);
        }
        if let Some(i) = samples.windows(2).position(|w| w[0] > w[1]) {
            return Err(DistributionError::UnsortedSample(i + 1));
        }
        Ok(Self::Empirical { samples })
    }

    /// Expectation of the law (sample mean for empirical).
    pub fn mean(&self) -> f64 {
        match self {
            Self::Gaussian { mean, .. } => *mean,
            Self::Uniform { lower, upper } => 0.5 * (lower + upper),
            Self::Empirical { samples } => {
                samples.iter().sum::<f64>() / samples.len() as f64
            }
        }
    }

    /// Standard deviation (sample std with divisor N−1 for empirical;
    /// zero for a single-point sample).
    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::Gaussian { std, .. } => std * std,
            Self::Uniform { lower, upper } => {
                let w = upper - lower;
                w * w / 12.0
            }
            Self::Empirical { samples } => {
                if samples.len() < 2 {
                    return 0.0;
                }
                let m = self.mean();
                samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / (samples.len() - 1) as f64
            }
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Self::Gaussian { .. })
    }
}

/// Linear-interpolated empirical quantile at index `(n−1)·p`.
///
/// The array must be sorted non-decreasing (not re-checked here; this sits
/// on the Monte-Carlo hot path).
pub fn empirical_quantile(sorted: &[f64], p: f64) -> Result<f64, DistributionError> {
    if sorted.is_empty() {
        return Err(DistributionError::EmptyQuantileInput);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(DistributionError::ProbabilityOutOfRange(p));
    }
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return Ok(sorted[n - 1]);
    }
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// Standard normal quantile (inverse CDF) for p in the open interval
/// (0, 1).
///
/// Acklam's rational approximation: three branches, relative error below
/// 1.15e-9 over the whole domain, which is plenty for turning coverage
/// levels into sigma multipliers.
#[allow(clippy::excessive_precision)] // coefficients kept as published
pub fn normal_quantile(p: f64) -> Result<f64, DistributionError> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(DistributionError::ProbabilityOutOfRange(p));
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| -> f64 {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        // 1 - p is exact for p >= 0.5, so the reflected tail loses nothing.
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    Ok(x)
}

/// Named input quantities with marginals and an n×n covariance matrix.
///
/// Immutable after construction; construction runs the full validation
/// (symmetry, diagonal consistency, positive semidefiniteness, and the
/// Gaussian-only correlation rule).
#[derive(Debug, Clone, PartialEq)]
pub struct InputSet {
    names: Vec<String>,
    marginals: Vec<Distribution>,
    covariance: DMatrix<f64>,
}

impl InputSet {
    /// Builds an input set with an explicit covariance matrix (row-major).
    pub fn new(
        names: Vec<String>,
        marginals: Vec<Distribution>,
        covariance: Vec<Vec<f64>>,
    ) -> Result<Self, DistributionError> {
        let n = names.len();
        let rows = covariance.len();
        let cols = covariance.first().map_or(0, Vec::len);
        if covariance.iter().any(|r| r.len() != cols) {
            return Err(DistributionError::DimensionMismatch {
                names: n,
                marginals: marginals.len(),
                rows,
                cols,
            });
        }
        let matrix = DMatrix::from_fn(rows, cols, |i, j| covariance[i][j]);
        Self::from_parts(names, marginals, matrix)
    }

    /// Builds an uncorrelated input set; the covariance diagonal is filled
    /// from the marginal variances.
    pub fn independent(
        inputs: Vec<(String, Distribution)>,
    ) -> Result<Self, DistributionError> {
        let n = inputs.len();
        let mut names = Vec::with_capacity(n);
        let mut marginals = Vec::with_capacity(n);
        for (name, dist) in inputs {
            names.push(name);
            marginals.push(dist);
        }
        let cov = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                marginals[i].variance()
            } else {
                0.0
            }
        });
        Self::from_parts(names, marginals, cov)
    }

    fn from_parts(
        names: Vec<String>,
        marginals: Vec<Distribution>,
        covariance: DMatrix<f64>,
    ) -> Result<Self, DistributionError> {
        let set = Self {
            names,
            marginals,
            covariance,
        };
        set.validate()?;
        Ok(set)
    }

    /// Re-runs all structural invariants. Constructors already call this;
    /// exposed for callers that deserialize or assemble sets manually.
    pub fn validate(&self) -> Result<(), DistributionError> {
        let n = self.names.len();
        if n == 0 {
            return Err(DistributionError::EmptyInputSet);
        }
        if self.marginals.len() != n
            || self.covariance.nrows() != n
            || self.covariance.ncols() != n
        {
            return Err(DistributionError::DimensionMismatch {
                names: n,
                marginals: self.marginals.len(),
                rows: self.covariance.nrows(),
                cols: self.covariance.ncols(),
            });
        }
        for (i, name) in self.names.iter().enumerate() {
            if self.names[..i].contains(name) {
                return Err(DistributionError::DuplicateName(name.clone()));
            }
        }
        if let Some(ij) = self
            .covariance
            .iter()
            .position(|v| !v.is_finite())
        {
            let _ = ij;
            return Err(DistributionError::NonFiniteParameter);
        }

        // Symmetry, relative to the matrix scale.
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.covariance[(i, j)];
                let b = self.covariance[(j, i)];
                let tol = COV_CONSISTENCY_RTOL * a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > tol {
                    return Err(DistributionError::AsymmetricCovariance { row: i, col: j, a, b });
                }
            }
        }

        // Diagonal must equal the marginal variance.
        for i in 0..n {
            let expected = self.marginals[i].variance();
            let got = self.covariance[(i, i)];
            let tol = COV_CONSISTENCY_RTOL * expected.abs().max(got.abs()).max(1.0);
            if (expected - got).abs() > tol {
                return Err(DistributionError::DiagonalMismatch { index: i, expected, got });
            }
        }

        // Non-Gaussian marginals may not carry off-diagonal covariance.
        for i in 0..n {
            if self.marginals[i].is_gaussian() {
                continue;
            }
            for j in 0..n {
                if j != i && self.covariance[(i, j)] != 0.0 {
                    return Err(DistributionError::CorrelatedNonGaussian { index: i, other: j });
                }
            }
        }

        // Positive semidefiniteness within tolerance.
        let tol = self.psd_tolerance();
        let min = symmetric_eigen_min(&self.covariance);
        if min < -tol {
            return Err(DistributionError::NotPositiveSemidefinite {
                eigenvalue: min,
                tolerance: tol,
            });
        }
        Ok(())
    }

    fn psd_tolerance(&self) -> f64 {
        PSD_TOL_FACTOR * self.covariance.trace().abs().max(1.0)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn marginals(&self) -> &[Distribution] {
        &self.marginals
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Mean vector of the marginals, the linearization point for analytic
    /// propagation.
    pub fn mean_vector(&self) -> Vec<f64> {
        self.marginals.iter().map(Distribution::mean).collect()
    }

    /// True when every off-diagonal covariance entry is exactly zero.
    pub fn is_uncorrelated(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..n).all(|j| i == j || self.covariance[(i, j)] == 0.0))
    }

    /// Draws `count` joint vectors; row `r` of the result is generated from
    /// the random stream `(seed, r)`, so output is bit-identical no matter
    /// how the work is scheduled.
    pub fn sample_joint(
        &self,
        count: usize,
        seed: u64,
    ) -> Result<Samples, DistributionError> {
        if count == 0 {
            return Err(DistributionError::ZeroCount);
        }
        let sampler = self.sampler()?;
        let cols = self.len();
        let mut data = vec![0.0; count * cols];
        data.par_chunks_mut(cols).enumerate().for_each_init(
            Vec::new,
            |zbuf, (row, out)| {
                sampler.sample_row(seed, row as u64, out, zbuf);
            },
        );
        Ok(Samples {
            rows: count,
            cols,
            data,
        })
    }

    /// Prepares the factorized sampling plan, shared by [`sample_joint`]
    /// and the Monte-Carlo propagator.
    ///
    /// [`sample_joint`]: InputSet::sample_joint
    pub(crate) fn sampler(&self) -> Result<JointSampler<'_>, DistributionError> {
        self.validate()?;
        let gauss_idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.marginals[i].is_gaussian())
            .collect();
        let k = gauss_idx.len();
        let diagonal = gauss_idx.iter().all(|&i| {
            gauss_idx
                .iter()
                .all(|&j| i == j || self.covariance[(i, j)] == 0.0)
        });
        let transform = if diagonal {
            // Independent Gaussians scale each standard draw by the
            // marginal's own sigma; keeps the degenerate sigma = 0 case and
            // affine equivariance exact.
            GaussTransform::Diagonal
        } else {
            let sub = DMatrix::from_fn(k, k, |a, b| {
                self.covariance[(gauss_idx[a], gauss_idx[b])]
            });
            let tol = self.psd_tolerance();
            let factor = psd_factor(&sub, tol).ok_or_else(|| {
                DistributionError::NotPositiveSemidefinite {
                    eigenvalue: symmetric_eigen_min(&sub),
                    tolerance: tol,
                }
            })?;
            GaussTransform::Factor(factor)
        };
        Ok(JointSampler {
            set: self,
            gauss_idx,
            transform,
        })
    }
}

/// Row-major matrix of joint draws, one row per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Samples {
    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r)[c]).collect()
    }
}

enum GaussTransform {
    /// Exactly-diagonal Gaussian block: `x_i = mean_i + std_i * z_i`.
    Diagonal,
    /// General block: `x = mean + L z` with `L Lᵀ = Σ_gauss`.
    Factor(DMatrix<f64>),
}

pub(crate) struct JointSampler<'a> {
    set: &'a InputSet,
    gauss_idx: Vec<usize>,
    transform: GaussTransform,
}

impl JointSampler<'_> {
    /// Fills `out` with joint draw number `row` of stream `seed`.
    /// `zbuf` is scratch for the standard-normal block.
    pub(crate) fn sample_row(&self, seed: u64, row: u64, out: &mut [f64], zbuf: &mut Vec<f64>) {
        let mut rng = stream_rng(seed, row);
        self.sample_with(&mut rng, out, zbuf);
    }

    /// One joint draw using an explicit generator. Random values are
    /// consumed in declared-input order: one standard normal per Gaussian,
    /// one uniform per other marginal.
    pub(crate) fn sample_with(
        &self,
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
        zbuf: &mut Vec<f64>,
    ) {
        debug_assert_eq!(out.len(), self.set.len());
        zbuf.clear();
        for (i, marginal) in self.set.marginals.iter().enumerate() {
            match marginal {
                Distribution::Gaussian { .. } => {
                    zbuf.push(rng.sample(StandardNormal));
                }
                Distribution::Uniform { lower, upper } => {
                    let u: f64 = rng.random();
                    out[i] = lower + (upper - lower) * u;
                }
                Distribution::Empirical { samples } => {
                    let u: f64 = rng.random();
                    // u in [0,1): inside empirical_quantile's domain.
                    out[i] = empirical_quantile(samples, u).expect("validated empirical sample");
                }
            }
        }
        match &self.transform {
            GaussTransform::Diagonal => {
                for (k, &i) in self.gauss_idx.iter().enumerate() {
                    let Distribution::Gaussian { mean, std } = &self.set.marginals[i] else {
                        unreachable!()
                    };
                    out[i] = mean + std * zbuf[k];
                }
            }
            GaussTransform::Factor(l) => {
                for (a, &i) in self.gauss_idx.iter().enumerate() {
                    let Distribution::Gaussian { mean, .. } = &self.set.marginals[i] else {
                        unreachable!()
                    };
                    let mut acc = *mean;
                    for (b, z) in zbuf.iter().enumerate() {
                        acc += l[(a, b)] * z;
                    }
                    out[i] = acc;
                }
            }
        }
    }
}

/// Smallest eigenvalue of a (symmetrized) matrix.
fn symmetric_eigen_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()).scale(0.5);
    let eig = sym.symmetric_eigenvalues();
    eig.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Factor `Σ = L Lᵀ` via symmetric eigendecomposition, clamping eigenvalues
/// in `(-tol, 0)` to zero. `None` when an eigenvalue falls below `-tol`.
fn psd_factor(m: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let mut l = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return None;
        }
        let s = lambda.max(0.0).sqrt();
        for i in 0..l.nrows() {
            l[(i, j)] *= s;
        }
    }
    Some(l)
}

// --- JSON document form -----------------------------------------------
//
// {"inputs":[{"name":"x","kind":"gaussian","mean":0.0,"std":1.0},...],
//  "covariance":[[...],...]}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum MarginalDoc {
    Gaussian { mean: f64, std: f64 },
    Uniform { lower: f64, upper: f64 },
    Empirical { samples: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InputDoc {
    name: String,
    #[serde(flatten)]
    marginal: MarginalDoc,
}

/// Serialized form of an [`InputSet`]. `covariance` may be omitted for
/// independent inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputSetDoc {
    inputs: Vec<InputDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance: Option<Vec<Vec<f64>>>,
}

impl InputSet {
    pub fn from_doc(doc: InputSetDoc) -> Result<Self, DistributionError> {
        let mut pairs = Vec::with_capacity(doc.inputs.len());
        for input in doc.inputs {
            let dist = match input.marginal {
                MarginalDoc::Gaussian { mean, std } => Distribution::gaussian(mean, std)?,
                MarginalDoc::Uniform { lower, upper } => Distribution::uniform(lower, upper)?,
                MarginalDoc::Empirical { samples } => Distribution::empirical(samples)?,
            };
            pairs.push((input.name, dist));
        }
        match doc.covariance {
            None => Self::independent(pairs),
            Some(cov) => {
                let (names, marginals) = pairs.into_iter().unzip();
                Self::new(names, marginals, cov)
            }
        }
    }

    pub fn to_doc(&self) -> InputSetDoc {
        let inputs = self
            .names
            .iter()
            .zip(&self.marginals)
            .map(|(name, dist)| InputDoc {
                name: name.clone(),
                marginal: match dist {
                    Distribution::Gaussian { mean, std } => MarginalDoc::Gaussian {
                        mean: *mean,
                        std: *std,
                    },
                    Distribution::Uniform { lower, upper } => MarginalDoc::Uniform {
                        lower: *lower,
                        upper: *upper,
                    },
                    Distribution::Empirical { samples } => MarginalDoc::Empirical {
                        samples: samples.clone(),
                    },
                },
            })
            .collect();
        let n = self.len();
        let covariance = (0..n)
            .map(|i| (0..n).map(|j| self.covariance[(i, j)]).collect())
            .collect();
        InputSetDoc {
            inputs,
            covariance: Some(covariance),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let doc: InputSetDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::from_doc(doc).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("input set serializes")
    }
}

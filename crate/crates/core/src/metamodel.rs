//! Gaussian-process regression over the uncertainty space: squared
//! exponential kernel with per-dimension length scales, exact inference via
//! Cholesky factorization, and multi-start random-restart hyperparameter
//! search on the log marginal likelihood.
//!
//! Inputs are normalized to the unit cube using the space bounds and outputs
//! are standardized before fitting; predictions are mapped back to the
//! original output scale.

use nalgebra::{DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::UncertaintySpace;
use crate::prim::LabeledSamples;
use crate::seed;

pub const DEFAULT_BUDGET: usize = 200;
pub const DEFAULT_STARTS: usize = 8;

/// Search box for hyperparameters, in natural units.
pub const PARAM_LOW: f64 = 1e-2;
pub const PARAM_HIGH: f64 = 1e2;

const JITTERS: [f64; 8] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    /// One per input dimension, in normalized (unit-cube) units.
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.length_scales.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.length_scales.len(),
            });
        }
        let positive = self.signal_variance > 0.0 && self.length_scales.iter().all(|&l| l > 0.0);
        if !positive || !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidConfig(
                "kernel parameters must be positive (noise may be zero)".into(),
            ));
        }
        Ok(())
    }

    fn covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut sum = 0.0;
        for d in 0..a.len() {
            let scaled = (a[d] - b[d]) / self.length_scales[d];
            sum += scaled * scaled;
        }
        self.signal_variance * (-0.5 * sum).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyper {
    Fixed(KernelParams),
    Optimize { budget: usize, seed: u64 },
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper::Optimize {
            budget: DEFAULT_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GPModel {
    pub params: KernelParams,
    /// Training inputs, rows normalized to the unit cube.
    train_x: Vec<Vec<f64>>,
    /// Training outputs, standardized.
    train_y: DVector<f64>,
    chol: nalgebra::linalg::Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    pub output_stats: OutputStats,
    /// Original-coordinate bounds used for input normalization.
    pub bounds: Vec<(f64, f64)>,
    /// Diagonal stabilizer the factorization needed (usually zero).
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    /// Pre-search objective value of each random restart; empty for fixed
    /// parameters.
    pub initial_lmls: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GPModelRepr {
    params: KernelParams,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    output_stats: OutputStats,
    bounds: Vec<(f64, f64)>,
}

impl From<GPModel> for GPModelRepr {
    fn from(m: GPModel) -> Self {
        GPModelRepr {
            params: m.params,
            train_x: m.train_x,
            train_y: m.train_y.iter().copied().collect(),
            output_stats: m.output_stats,
            bounds: m.bounds,
        }
    }
}

impl TryFrom<GPModelRepr> for GPModel {
    type Error = Error;

    fn try_from(repr: GPModelRepr) -> Result<Self> {
        let k = repr.bounds.len();
        repr.params.validate(k)?;
        if repr.train_x.len() != repr.train_y.len() {
            return Err(Error::DimensionMismatch {
                expected: repr.train_x.len(),
                got: repr.train_y.len(),
            });
        }
        if repr.train_x.iter().any(|row| row.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: repr.train_x.iter().map(Vec::len).find(|&l| l != k).unwrap_or(0),
            });
        }
        let y = DVector::from_vec(repr.train_y);
        let factored = factorize(&repr.train_x, &repr.params, &y)?;
        Ok(GPModel {
            log_marginal_likelihood: factored.lml,
            params: repr.params,
            train_x: repr.train_x,
            train_y: y,
            chol: factored.chol,
            alpha: factored.alpha,
            output_stats: repr.output_stats,
            bounds: repr.bounds,
            jitter: factored.jitter,
            initial_lmls: Vec::new(),
        })
    }
}

impl Serialize for GPModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GPModelRepr::from(self.clone()).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GPModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = GPModelRepr::deserialize(deserializer)?;
        GPModel::try_from(repr).map_err(serde::de::Error::custom)
    }
}

struct Factored {
    chol: nalgebra::linalg::Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

fn kernel_matrix(x: &[Vec<f64>], params: &KernelParams, extra_diag: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut m = DMatrix::from_fn(n, n, |i, j| params.covariance(&x[i], &x[j]));
    for i in 0..n {
        m[(i, i)] += params.noise_variance + extra_diag;
    }
    m
}

/// Cholesky with escalating diagonal jitter; gives up past `1e-2`.
fn factorize(x: &[Vec<f64>], params: &KernelParams, y: &DVector<f64>) -> Result<Factored> {
    for &jitter in &JITTERS {
        let k = kernel_matrix(x, params, jitter);
        if let Some(chol) = nalgebra::linalg::Cholesky::new(k) {
            let alpha = chol.solve(y);
            let lml = lml_of(&chol, y, &alpha);
            return Ok(Factored {
                chol,
                alpha,
                jitter,
                lml,
            });
        }
    }
    Err(Error::Decomposition { max_jitter: 1e-2 })
}

fn lml_of(
    chol: &nalgebra::linalg::Cholesky<f64, Dyn>,
    y: &DVector<f64>,
    alpha: &DVector<f64>,
) -> f64 {
    let n = y.len();
    let l = chol.l_dirty();
    let mut log_det_half = 0.0;
    for i in 0..n {
        log_det_half += l[(i, i)].ln();
    }
    -0.5 * y.dot(alpha) - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Search objective; failed factorizations score negative infinity.
fn search_lml(x: &[Vec<f64>], params: &KernelParams, y: &DVector<f64>) -> f64 {
    match factorize(x, params, y) {
        Ok(f) => f.lml,
        Err(_) => f64::NEG_INFINITY,
    }
}

fn theta_to_params(theta: &[f64], k: usize) -> KernelParams {
    KernelParams {
        signal_variance: theta[0].exp(),
        length_scales: theta[1..=k].iter().map(|t| t.exp()).collect(),
        noise_variance: theta[k + 1].exp(),
    }
}

/// Multi-start random search: uniform restarts in the log box, each refined
/// by a hill climb whose Gaussian proposal scale decays geometrically.
fn optimize_params(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    k: usize,
    budget: usize,
    seed: u64,
) -> Result<(KernelParams, Vec<f64>)> {
    if budget == 0 {
        return Err(Error::InvalidConfig("optimizer budget must be >= 1".into()));
    }
    let mut rng = seed::rng_from(seed);
    let (lo, hi) = (PARAM_LOW.ln(), PARAM_HIGH.ln());
    let n_params = k + 2;
    let starts = DEFAULT_STARTS.min(budget);
    let per_start = (budget / starts).max(1);

    let mut initial_lmls = Vec::with_capacity(starts);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..starts {
        let mut theta: Vec<f64> = (0..n_params).map(|_| rng.gen_range(lo..hi)).collect();
        let mut lml = search_lml(x, &theta_to_params(&theta, k), y);
        initial_lmls.push(lml);
        for step in 0..per_start.saturating_sub(1) {
            let scale = 0.5 * (hi - lo) * 0.97f64.powi(step as i32);
            let normal = Normal::new(0.0, scale).expect("positive proposal scale");
            let proposal: Vec<f64> = theta
                .iter()
                .map(|&t| (t + normal.sample(&mut rng)).clamp(lo, hi))
                .collect();
            let proposal_lml = search_lml(x, &theta_to_params(&proposal, k), y);
            if proposal_lml > lml {
                theta = proposal;
                lml = proposal_lml;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| lml > *b) {
            best = Some((theta, lml));
        }
    }
    let (theta, lml) = best.expect("at least one start");
    if lml == f64::NEG_INFINITY {
        return Err(Error::Decomposition { max_jitter: 1e-2 });
    }
    Ok((theta_to_params(&theta, k), initial_lmls))
}

/// Fits a GP to labeled samples over `space`. Inputs are normalized to the
/// unit cube, outputs standardized by their population moments (a zero
/// standard deviation falls back to one).
pub fn fit(data: &LabeledSamples, space: &UncertaintySpace, hyper: &Hyper) -> Result<GPModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSamples { min: 2, got: n });
    }
    let k = space.k();
    if data.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: data.k(),
        });
    }
    let bounds = space.bounds();
    let train_x: Vec<Vec<f64>> = data
        .points
        .iter()
        .map(|p| normalize_row(p, &bounds))
        .collect();

    let mean = data.outputs.iter().sum::<f64>() / n as f64;
    let var = data.outputs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let raw_std = var.sqrt();
    let std = if raw_std > 0.0 { raw_std } else { 1.0 };
    let train_y = DVector::from_iterator(n, data.outputs.iter().map(|y| (y - mean) / std));

    let (params, initial_lmls) = match hyper {
        Hyper::Fixed(p) => {
            p.validate(k)?;
            (p.clone(), Vec::new())
        }
        Hyper::Optimize { budget, seed } => optimize_params(&train_x, &train_y, k, *budget, *seed)?,
    };

    let factored = factorize(&train_x, &params, &train_y)?;
    Ok(GPModel {
        params,
        train_x,
        train_y,
        chol: factored.chol,
        alpha: factored.alpha,
        output_stats: OutputStats { mean, std },
        bounds,
        jitter: factored.jitter,
        log_marginal_likelihood: factored.lml,
        initial_lmls,
    })
}

fn normalize_row(point: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    point
        .iter()
        .zip(bounds)
        .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
        .collect()
}

impl GPModel {
    pub fn n(&self) -> usize {
        self.train_x.len()
    }

    pub fn k(&self) -> usize {
        self.bounds.len()
    }

    /// Posterior mean and variance at query points given in original
    /// coordinates. The variance includes the noise term and is floored at
    /// zero before de-standardization.
    pub fn predict(&self, queries: &[Vec<f64>]) -> Result<PosteriorPrediction> {
        let k = self.k();
        let mut mean = Vec::with_capacity(queries.len());
        let mut variance = Vec::with_capacity(queries.len());
        for q in queries {
            if q.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: q.len(),
                });
            }
            let qn = normalize_row(q, &self.bounds);
            let k_star = DVector::from_iterator(
                self.n(),
                self.train_x.iter().map(|row| self.params.covariance(&qn, row)),
            );
            let m = k_star.dot(&self.alpha);
            // k*' (K + nv I)^-1 k* through the stored factorization.
            let quad = k_star.dot(&self.chol.solve(&k_star));
            let v = (self.params.signal_variance + self.params.noise_variance - quad).max(0.0);
            mean.push(m * self.output_stats.std + self.output_stats.mean);
            variance.push(v * self.output_stats.std * self.output_stats.std);
        }
        Ok(PosteriorPrediction { mean, variance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;
    use approx::assert_relative_eq;

    fn line_space() -> UncertaintySpace {
        UncertaintySpace::unit_cube(1)
    }

    fn samples_1d(xs: Vec<f64>, f: impl Fn(f64) -> f64) -> LabeledSamples {
        let outputs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let labels = outputs.iter().map(|&y| y >= 0.0).collect();
        LabeledSamples {
            points: xs.into_iter().map(|x| vec![x]).collect(),
            outputs,
            labels,
        }
    }

    fn lhs_1d(n: usize, seed: u64) -> Vec<f64> {
        sampling::lhs(&line_space(), n, seed)
            .points
            .into_iter()
            .map(|p| p[0])
            .collect()
    }

    fn fixed(sv: f64, ls: f64, nv: f64) -> Hyper {
        Hyper::Fixed(KernelParams {
            signal_variance: sv,
            length_scales: vec![ls],
            noise_variance: nv,
        })
    }

    #[test]
    fn optimized_fit_tracks_a_smooth_function() {
        let space = line_space();
        let f = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        let data = samples_1d(lhs_1d(20, 42), f);
        let model = fit(
            &data,
            &space,
            &Hyper::Optimize {
                budget: DEFAULT_BUDGET,
                seed: 0,
            },
        )
        .unwrap();

        let grid: Vec<Vec<f64>> = (0..=100).map(|i| vec![i as f64 / 100.0]).collect();
        let pred = model.predict(&grid).unwrap();
        let rmse = (grid
            .iter()
            .zip(&pred.mean)
            .map(|(x, m)| (m - f(x[0])).powi(2))
            .sum::<f64>()
            / grid.len() as f64)
            .sqrt();
        assert!(rmse < 0.05, "rmse {rmse}");

        assert_eq!(model.initial_lmls.len(), DEFAULT_STARTS);
        let best_initial = model
            .initial_lmls
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            model.log_marginal_likelihood >= best_initial - 1e-9,
            "search ended below its own starting point"
        );
    }

    #[test]
    fn noise_free_fit_interpolates_training_points() {
        let space = line_space();
        let data = samples_1d(lhs_1d(25, 7), |x| (3.0 * x).cos());
        let model = fit(&data, &space, &fixed(1.0, 0.1, 0.0)).unwrap();
        let pred = model.predict(&data.points).unwrap();
        for (i, (m, v)) in pred.mean.iter().zip(&pred.variance).enumerate() {
            assert!(
                (m - data.outputs[i]).abs() <= 1e-6,
                "mean off by {}",
                (m - data.outputs[i]).abs()
            );
            assert!(*v <= 1e-6, "variance {v} at a training point");
        }
    }

    #[test]
    fn far_queries_revert_to_the_prior() {
        let space = line_space();
        // Data confined to [0, 0.2] with length scale 0.05: a query at 0.95
        // sits 15 length scales from the nearest point.
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.02).collect();
        let data = samples_1d(xs, |x| 3.0 + x);
        let model = fit(&data, &space, &fixed(1.0, 0.05, 0.01)).unwrap();
        let pred = model.predict(&[vec![0.95]]).unwrap();

        let prior_mean = model.output_stats.mean;
        let prior_var = (model.params.signal_variance + model.params.noise_variance)
            * model.output_stats.std.powi(2);
        assert_relative_eq!(pred.mean[0], prior_mean, max_relative = 0.05);
        assert_relative_eq!(pred.variance[0], prior_var, max_relative = 0.05);
    }

    #[test]
    fn symmetric_data_gives_symmetric_posterior() {
        let space = line_space();
        let xs = vec![0.1, 0.3, 0.7, 0.9];
        let data = samples_1d(xs, |x| (x - 0.5).powi(2));
        let model = fit(&data, &space, &fixed(1.0, 0.2, 1e-4)).unwrap();
        let pred = model.predict(&[vec![0.35], vec![0.65]]).unwrap();
        assert!((pred.mean[0] - pred.mean[1]).abs() < 1e-9);
        assert!((pred.variance[0] - pred.variance[1]).abs() < 1e-9);
    }

    #[test]
    fn training_order_does_not_change_the_posterior() {
        let space = line_space();
        let data = samples_1d(lhs_1d(15, 3), |x| x * x - 0.4);
        let mut reversed = data.clone();
        reversed.points.reverse();
        reversed.outputs.reverse();
        reversed.labels.reverse();

        let hyper = fixed(0.8, 0.15, 1e-3);
        let a = fit(&data, &space, &hyper).unwrap();
        let b = fit(&reversed, &space, &hyper).unwrap();
        let q: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let pa = a.predict(&q).unwrap();
        let pb = b.predict(&q).unwrap();
        for i in 0..q.len() {
            assert!((pa.mean[i] - pb.mean[i]).abs() < 1e-9);
            assert!((pa.variance[i] - pb.variance[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_outputs_fit_without_blowing_up() {
        let space = line_space();
        let data = samples_1d(lhs_1d(10, 1), |_| 2.5);
        let model = fit(&data, &space, &fixed(1.0, 0.3, 1e-2)).unwrap();
        assert_eq!(model.output_stats.std, 1.0);
        let pred = model.predict(&[vec![0.05], vec![0.5], vec![0.99]]).unwrap();
        for m in &pred.mean {
            assert!((m - 2.5).abs() <= 1e-6, "mean {m}");
        }
        for v in &pred.variance {
            assert!(v.is_finite() && *v >= 0.0);
        }
    }

    #[test]
    fn objective_is_finite_across_the_search_box() {
        let space = line_space();
        let data = samples_1d(lhs_1d(20, 9), |x| (7.0 * x).sin());
        let bounds = space.bounds();
        let train_x: Vec<Vec<f64>> = data
            .points
            .iter()
            .map(|p| normalize_row(p, &bounds))
            .collect();
        let mean = data.outputs.iter().sum::<f64>() / data.len() as f64;
        let y = DVector::from_iterator(data.len(), data.outputs.iter().map(|v| v - mean));

        let grid = [PARAM_LOW.ln(), 0.0, PARAM_HIGH.ln()];
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    let lml = search_lml(&train_x, &theta_to_params(&[a, b, c], 1), &y);
                    assert!(lml.is_finite(), "lml not finite at ({a}, {b}, {c})");
                }
            }
        }
    }

    #[test]
    fn serialized_model_round_trips_predictions() {
        let space = UncertaintySpace::unit_cube(2);
        let m = sampling::lhs(&space, 18, 5);
        let outputs: Vec<f64> = m.points.iter().map(|p| p[0] - p[1] * p[1]).collect();
        let labels = outputs.iter().map(|&y| y >= 0.0).collect();
        let data = LabeledSamples {
            points: m.points,
            outputs,
            labels,
        };
        let hyper = Hyper::Optimize {
            budget: 40,
            seed: 11,
        };
        let model = fit(&data, &space, &hyper).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: GPModel = serde_json::from_str(&text).unwrap();

        let q = sampling::uniform(&space, 30, 99).points;
        let pa = model.predict(&q).unwrap();
        let pb = back.predict(&q).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(model.jitter, back.jitter);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let space = line_space();
        let one = samples_1d(vec![0.4], |_| 1.0);
        assert!(matches!(
            fit(&one, &space, &fixed(1.0, 0.1, 0.0)),
            Err(Error::TooFewSamples { min: 2, got: 1 })
        ));

        let data = samples_1d(vec![0.2, 0.8], |x| x);
        let model = fit(&data, &space, &fixed(1.0, 0.1, 0.0)).unwrap();
        assert!(matches!(
            model.predict(&[vec![0.1, 0.2]]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));

        let bad = Hyper::Fixed(KernelParams {
            signal_variance: -1.0,
            length_scales: vec![0.1],
            noise_variance: 0.0,
        });
        assert!(fit(&data, &space, &bad).is_err());
    }

    #[test]
    fn optimization_is_deterministic_for_a_seed() {
        let space = line_space();
        let data = samples_1d(lhs_1d(12, 8), |x| x.powi(3) - 0.2);
        let hyper = Hyper::Optimize { budget: 24, seed: 4 };
        let a = fit(&data, &space, &hyper).unwrap();
        let b = fit(&data, &space, &hyper).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.initial_lmls, b.initial_lmls);
        assert_eq!(a.log_marginal_likelihood, b.log_marginal_likelihood);
    }
}

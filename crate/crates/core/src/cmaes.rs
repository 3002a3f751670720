//! CMA-ES over a box, run in normalised coordinates y in [0, 1]^n where
//! d = lower + y (upper - lower).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CodesignError, Result};

const MAX_RESAMPLES: usize = 10;
const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaesConfig {
    pub n_pop: usize,
    /// Initial step size as a fraction of the box width.
    pub sigma0: f64,
    pub n_gen: usize,
    pub tol_c: f64,
    pub tol_p: f64,
    /// Initial mean in design coordinates; the box centre when absent.
    pub d0: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        Self { n_pop: 32, sigma0: 0.3, n_gen: 100, tol_c: 1e-4, tol_p: 1e-4, d0: None, seed: 0 }
    }
}

impl CmaesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pop < 4 {
            return Err(CodesignError::Config("CMA-ES needs a population of at least 4".into()));
        }
        if !(self.sigma0 > 0.0) || !(self.tol_c > 0.0) || !(self.tol_p > 0.0) {
            return Err(CodesignError::Config("CMA-ES sigma0 and tolerances must be positive".into()));
        }
        if self.n_gen == 0 {
            return Err(CodesignError::Config("CMA-ES needs at least one generation".into()));
        }
        Ok(())
    }
}

/// Strategy constants for a given dimension and population.
#[derive(Clone, Debug, PartialEq)]
struct Params {
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Params {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln()).collect();
        let s: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / s).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self { mu, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    pub best_cost: f64,
    pub best_so_far: f64,
    /// Distribution mean in design coordinates.
    pub mean: Vec<f64>,
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct Cmaes {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lambda: usize,
    /// Mean in normalised coordinates.
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    pub evaluations: usize,
    pub best: Option<(Vec<f64>, f64)>,
    pub last_best_cost: Option<f64>,
    pub prev_best_cost: Option<f64>,
    pub prev_mean: Option<DVector<f64>>,
    /// Eigen-decomposition of `cov`: columns of `b` and sqrt eigenvalues.
    b: DMatrix<f64>,
    d: DVector<f64>,
    params: Params,
    rng: ChaCha8Rng,
}

impl Cmaes {
    pub fn new(cfg: &CmaesConfig, lower: &[f64], upper: &[f64]) -> Result<Self> {
        cfg.validate()?;
        let n = lower.len();
        if n == 0 || upper.len() != n || lower.iter().zip(upper).any(|(l, u)| !(u > l)) {
            return Err(CodesignError::Config("CMA-ES bounds need lower < upper in every axis".into()));
        }
        let mean = match &cfg.d0 {
            Some(d0) => {
                if d0.len() != n {
                    return Err(CodesignError::Config("CMA-ES d0 has the wrong dimension".into()));
                }
                DVector::from_iterator(n, (0..n).map(|i| ((d0[i] - lower[i]) / (upper[i] - lower[i])).clamp(0.0, 1.0)))
            }
            None => DVector::from_element(n, 0.5),
        };
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            lambda: cfg.n_pop,
            mean,
            sigma: cfg.sigma0,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            evaluations: 0,
            best: None,
            last_best_cost: None,
            prev_best_cost: None,
            prev_mean: None,
            b: DMatrix::identity(n, n),
            d: DVector::from_element(n, 1.0),
            params: Params::new(n, cfg.n_pop),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn to_design(&self, y: &DVector<f64>) -> Vec<f64> {
        (0..self.dim()).map(|i| self.lower[i] + y[i] * (self.upper[i] - self.lower[i])).collect()
    }

    fn to_unit(&self, d: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| (d[i] - self.lower[i]) / (self.upper[i] - self.lower[i])))
    }

    pub fn mean_design(&self) -> Vec<f64> {
        self.to_design(&self.mean)
    }

    /// Draws a population in design coordinates, all inside the box.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let mut y = DVector::zeros(n);
            for attempt in 0..=MAX_RESAMPLES {
                let z = DVector::from_iterator(n, (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal)));
                y = &self.mean + (&self.b * z.component_mul(&self.d)) * self.sigma;
                if y.iter().all(|v| (0.0..=1.0).contains(v)) || attempt == MAX_RESAMPLES {
                    break;
                }
            }
            y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            out.push(self.to_design(&y));
        }
        out
    }

    /// Rank-based update from evaluated candidates (design coordinates).
    pub fn tell(&mut self, candidates: &[Vec<f64>], costs: &[f64]) -> Result<()> {
        if candidates.len() != costs.len() || candidates.len() != self.lambda {
            return Err(CodesignError::Contract("tell needs one cost per candidate of the population".into()));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(CodesignError::Contract("non-finite cost passed to CMA-ES".into()));
        }
        let n = self.dim();
        let p = self.params.clone();
        let mut order: Vec<usize> = (0..costs.len()).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));

        let gen_best = costs[order[0]];
        if self.best.as_ref().map_or(true, |(_, c)| gen_best < *c) {
            self.best = Some((candidates[order[0]].clone(), gen_best));
        }
        self.prev_best_cost = self.last_best_cost;
        self.last_best_cost = Some(gen_best);
        self.prev_mean = Some(self.mean.clone());

        let ys: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|&i| (self.to_unit(&candidates[i]) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&ys) {
            y_w += y * *w;
        }
        self.mean += &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} B' y_w
        let inv_sqrt = &self.b * DMatrix::from_diagonal(&self.d.map(|v| 1.0 / v)) * self.b.transpose();
        self.p_sigma = &self.p_sigma * (1.0 - p.c_sigma)
            + inv_sqrt * &y_w * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - p.c_sigma).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - p.c_c) + &y_w * (h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in p.weights.iter().zip(&ys) {
            rank_mu += y * y.transpose() * *w;
        }
        let keep = 1.0 - p.c_1 - p.c_mu + (1.0 - h) * p.c_1 * p.c_c * (2.0 - p.c_c);
        self.cov = &self.cov * keep + &self.p_c * self.p_c.transpose() * p.c_1 + rank_mu * p.c_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.decompose();
        self.generation += 1;
        self.evaluations += costs.len();
        Ok(())
    }

    fn decompose(&mut self) {
        let eig = SymmetricEigen::new(self.cov.clone());
        let mut vals = eig.eigenvalues;
        if vals.iter().any(|v| !(*v > EIGEN_FLOOR)) {
            log::warn!("CMA-ES covariance lost definiteness; flooring eigenvalues");
            vals.iter_mut().for_each(|v| *v = v.max(EIGEN_FLOOR));
            self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        }
        self.b = eig.eigenvectors;
        self.d = vals.map(f64::sqrt);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.d.iter().map(|v| v * v).fold(f64::INFINITY, f64::min)
    }

    /// Dual tolerance test on the generation-best cost and the mean, or the
    /// generation budget.
    pub fn converged(&self, tol_c: f64, tol_p: f64, n_gen: usize) -> bool {
        if self.generation >= n_gen {
            return true;
        }
        let (Some(c), Some(c_prev), Some(m_prev)) = (self.last_best_cost, self.prev_best_cost, &self.prev_mean) else {
            return false;
        };
        let mean_change = self
            .to_design(&self.mean)
            .iter()
            .zip(self.to_design(m_prev))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (c - c_prev).abs() < tol_c && mean_change < tol_p
    }

    pub fn record(&self) -> GenerationRecord {
        GenerationRecord {
            generation: self.generation,
            evaluations: self.evaluations,
            best_cost: self.last_best_cost.unwrap_or(f64::INFINITY),
            best_so_far: self.best.as_ref().map_or(f64::INFINITY, |b| b.1),
            mean: self.mean_design(),
            sigma: self.sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaesOutcome {
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub history: Vec<GenerationRecord>,
}

/// Runs ask/evaluate/tell to convergence. Candidates within a generation are
/// evaluated concurrently on the current rayon pool.
pub fn run<F>(cfg: &CmaesConfig, lower: &[f64], upper: &[f64], objective: F) -> Result<CmaesOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let mut es = Cmaes::new(cfg, lower, upper)?;
    let mut history = Vec::new();
    loop {
        let candidates = es.ask();
        let costs = candidates.par_iter().map(|c| objective(c)).collect::<Result<Vec<f64>>>()?;
        es.tell(&candidates, &costs)?;
        let rec = es.record();
        log::info!("generation {} best {:.6e} sigma {:.3e}", rec.generation, rec.best_cost, rec.sigma);
        history.push(rec);
        if es.converged(cfg.tol_c, cfg.tol_p, cfg.n_gen) {
            break;
        }
    }
    let (best, best_cost) = es.best.expect("at least one generation ran");
    Ok(CmaesOutcome { best, best_cost, history })
}

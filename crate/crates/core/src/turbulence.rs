//! Von Kármán turbulence from rational shaping filters driven by white noise.
//!
//! The filters are the handbook approximations
//!
//!   H_u(s) = s_u sqrt(2 L_u / (pi V)) (1 + 0.25 T s) / (1 + 1.357 T s + 0.1987 T^2 s^2),  T = L_u / V
//!   H_v(s) = s_v sqrt(2 L_v / (pi V)) (1 + 2.7478 T s + 0.3398 T^2 s^2)
//!            / (1 + 2.9958 T s + 1.9754 T^2 s^2 + 0.1539 T^3 s^3),           T = 2 L_v / V
//!
//! with H_w of the same form as H_v. They are normalised so that
//! int_0^inf |H(j w)|^2 dw approximates sigma^2, which means the driving
//! noise has intensity pi. Each filter is held-input (zero-order hold)
//! discretised at the physics step. The u, v, w channels are applied along
//! the world x, y, z axes.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CodesignError, Result};

/// Intensity of the continuous white noise driving each filter.
const NOISE_INTENSITY: f64 = std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurbulenceConfig {
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub sigma_w: f64,
    pub length_u: f64,
    pub length_v: f64,
    pub length_w: f64,
    /// Reference airspeed (m/s).
    pub airspeed: f64,
}

impl Default for TurbulenceConfig {
    fn default() -> Self {
        Self {
            sigma_u: 1.5,
            sigma_v: 1.5,
            sigma_w: 1.5,
            length_u: 200.0,
            length_v: 100.0,
            length_w: 100.0,
            airspeed: 10.0,
        }
    }
}

impl TurbulenceConfig {
    pub fn validate(&self) -> Result<()> {
        let s = [self.sigma_u, self.sigma_v, self.sigma_w];
        let l = [self.length_u, self.length_v, self.length_w];
        if s.iter().any(|v| !(*v >= 0.0)) || l.iter().any(|v| !(*v > 0.0)) || !(self.airspeed > 0.0) {
            return Err(CodesignError::Config(
                "turbulence needs sigma >= 0, length scales > 0 and airspeed > 0".into(),
            ));
        }
        Ok(())
    }

    /// Continuous transfer functions (numerator, denominator) in ascending
    /// powers of s, gains included.
    pub fn transfer_functions(&self) -> [(Vec<f64>, Vec<f64>); 3] {
        let v = self.airspeed;
        let gain = |sigma: f64, l: f64| sigma * (2.0 * l / (std::f64::consts::PI * v)).sqrt();
        let long = |sigma: f64, l: f64| {
            let t = l / v;
            let k = gain(sigma, l);
            (vec![k, k * 0.25 * t], vec![1.0, 1.357 * t, 0.1987 * t * t])
        };
        let lat = |sigma: f64, l: f64| {
            let t = 2.0 * l / v;
            let k = gain(sigma, l);
            (
                vec![k, k * 2.7478 * t, k * 0.3398 * t * t],
                vec![1.0, 2.9958 * t, 1.9754 * t * t, 0.1539 * t * t * t],
            )
        };
        [
            long(self.sigma_u, self.length_u),
            lat(self.sigma_v, self.length_v),
            lat(self.sigma_w, self.length_w),
        ]
    }
}

/// One discretised strictly proper filter x+ = Phi x + Gamma w, y = C x.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisFilter {
    pub phi: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub c: DVector<f64>,
    pub x: DVector<f64>,
    /// Standard deviation of the held noise sample over one step.
    noise_std: f64,
}

/// Controllable canonical realisation of num(s)/den(s) (ascending powers,
/// deg num < deg den).
pub fn realise(num: &[f64], den: &[f64]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let n = den.len() - 1;
    let lead = den[n];
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -den[j] / lead;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let mut c = DVector::zeros(n);
    for (j, v) in num.iter().enumerate() {
        c[j] = v / lead;
    }
    (a, b, c)
}

impl AxisFilter {
    pub fn new(num: &[f64], den: &[f64], dt: f64) -> Self {
        let (a, b, c) = realise(num, den);
        let n = a.nrows();
        // exp([[A, B], [0, 0]] dt) = [[Phi, Gamma], [0, 1]]
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&a * dt));
        aug.view_mut((0, n), (n, 1)).copy_from(&(&b * dt));
        let e = aug.exp();
        Self {
            phi: e.view((0, 0), (n, n)).into_owned(),
            gamma: e.view((0, n), (n, 1)).column(0).into_owned(),
            c,
            x: DVector::zeros(n),
            noise_std: (NOISE_INTENSITY / dt).sqrt(),
        }
    }

    pub fn step(&mut self, z: f64) -> f64 {
        self.x = &self.phi * &self.x + &self.gamma * (z * self.noise_std);
        self.c.dot(&self.x)
    }

    /// Stationary output variance of the discrete filter, from the
    /// discrete Lyapunov equation X = Phi X Phi' + Gamma Gamma' q / dt.
    pub fn stationary_variance(&self) -> f64 {
        let n = self.phi.nrows();
        let kron = self.phi.kronecker(&self.phi);
        let lhs = DMatrix::identity(n * n, n * n) - kron;
        let w = &self.gamma * self.gamma.transpose() * (self.noise_std * self.noise_std);
        let rhs = DVector::from_column_slice(w.as_slice());
        let x = lhs.lu().solve(&rhs).expect("stable filter");
        let x = DMatrix::from_column_slice(n, n, x.as_slice());
        (self.c.transpose() * x * &self.c)[(0, 0)]
    }
}

/// Three independent axis filters and the last gust sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Turbulence {
    pub axes: [AxisFilter; 3],
    pub dt: f64,
    pub last: Vector3<f64>,
}

impl Turbulence {
    pub fn new(cfg: &TurbulenceConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt > 0.0) {
            return Err(CodesignError::Config("turbulence sample period must be positive".into()));
        }
        let tf = cfg.transfer_functions();
        let axes = [0, 1, 2].map(|i| AxisFilter::new(&tf[i].0, &tf[i].1, dt));
        Ok(Self { axes, dt, last: Vector3::zeros() })
    }

    /// Advances all filters by one period and returns the world-frame gust.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for (i, f) in self.axes.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            out[i] = f.step(z);
        }
        self.last = out;
        out
    }
}

/// One-sided target spectrum |H(j w)|^2 of the rational filter, in w (rad/s).
pub fn filter_psd(num: &[f64], den: &[f64], w: f64) -> f64 {
    let eval = |p: &[f64]| {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, c) in p.iter().enumerate() {
            // (j w)^k
            let m = c * w.powi(k as i32);
            match k % 4 {
                0 => re += m,
                1 => im += m,
                2 => re -= m,
                _ => im -= m,
            }
        }
        re * re + im * im
    };
    eval(num) / eval(den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_intensity_gives_zero_wind() {
        let cfg = TurbulenceConfig { sigma_u: 0.0, sigma_v: 0.0, sigma_w: 0.0, ..Default::default() };
        let mut t = Turbulence::new(&cfg, 0.002).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(t.step(&mut rng), Vector3::zeros());
        }
    }

    #[test]
    fn identical_seeds_identical_sequences() {
        let cfg = TurbulenceConfig::default();
        let run = |seed| {
            let mut t = Turbulence::new(&cfg, 0.002).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..500).map(|_| t.step(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn discrete_variance_matches_continuous_filter() {
        // continuous variance q C X C' with A X + X A' + q B B' = 0, solved
        // by the Kronecker form independently of the discretisation
        let cfg = TurbulenceConfig::default();
        for (num, den) in cfg.transfer_functions() {
            let (a, b, c) = realise(&num, &den);
            let n = a.nrows();
            let id = DMatrix::<f64>::identity(n, n);
            let lhs = a.kronecker(&id) + id.kronecker(&a);
            let rhs = -(&b * b.transpose() * NOISE_INTENSITY);
            let x = lhs.lu().solve(&DVector::from_column_slice(rhs.as_slice())).unwrap();
            let x = DMatrix::from_column_slice(n, n, x.as_slice());
            let continuous = (c.transpose() * x * &c)[(0, 0)];
            let discrete = AxisFilter::new(&num, &den, 0.002).stationary_variance();
            assert!((discrete / continuous - 1.0).abs() < 1e-3, "{discrete} vs {continuous}");
            // the rational forms carry 96-97% of the exact spectrum's power
            assert!((continuous / (1.5f64 * 1.5) - 1.0).abs() < 0.05, "{continuous}");
        }
    }

    #[test]
    fn psd_at_zero_frequency_is_static_gain_squared() {
        let cfg = TurbulenceConfig::default();
        let [(num, den), ..] = cfg.transfer_functions();
        let expected = 1.5 * 1.5 * 2.0 * 200.0 / (std::f64::consts::PI * 10.0);
        assert!((filter_psd(&num, &den, 0.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = TurbulenceConfig { length_v: 0.0, ..Default::default() };
        assert!(Turbulence::new(&bad, 0.01).is_err());
        assert!(Turbulence::new(&TurbulenceConfig::default(), 0.0).is_err());
    }
}

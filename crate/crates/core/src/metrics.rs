//! Rates of effective linear models, high-SNR slope estimation, and the
//! closed-form DoF curves of the proposed and retrospective schemes.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use num_rational::Ratio;
use serde::Serialize;

use crate::channel::SystemConfig;
use crate::error::{Error, Result};
use crate::signal::{covariance, Tracked, VarSpace};

/// `y = G x + n` with `x ~ CN(0, P I)` and `n ~ CN(0, Sigma)`, observed over
/// `slots_consumed` channel uses.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservationModel {
    pub gain: DMatrix<Complex64>,
    pub noise_covariance: DMatrix<Complex64>,
    pub input_power: f64,
    pub slots_consumed: usize,
}

impl LinearObservationModel {
    pub fn new(
        gain: DMatrix<Complex64>,
        noise_covariance: DMatrix<Complex64>,
        input_power: f64,
        slots_consumed: usize,
    ) -> Result<Self> {
        let m = gain.nrows();
        if noise_covariance.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "gain has {m} rows but covariance is {:?}",
                noise_covariance.shape()
            )));
        }
        if slots_consumed == 0 {
            return Err(Error::InvalidConfig("slots_consumed must be positive".into()));
        }
        let asym = (&noise_covariance - noise_covariance.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let scale = noise_covariance.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > 1e-9 * scale.max(1e-300) {
            return Err(Error::InvalidConfig("noise covariance is not Hermitian".into()));
        }
        Ok(Self { gain, noise_covariance, input_power, slots_consumed })
    }

    /// Model of tracked statistics: the gain collects the coefficients of the
    /// `desired` variables, every other variable (noise and residual
    /// interference alike) goes into the covariance.
    pub fn from_statistics(
        space: &VarSpace,
        stats: &[Tracked],
        desired: &[usize],
        power: f64,
        noise_variance: f64,
        slots_consumed: usize,
    ) -> Self {
        let gain = DMatrix::from_fn(stats.len(), desired.len(), |r, c| stats[r].coefficient(desired[c]));
        let noise_covariance = covariance(space, stats, desired, power, noise_variance);
        Self { gain, noise_covariance, input_power: power, slots_consumed }
    }

    /// Same channel at a different input power (covariance terms from
    /// residual interference are not rescaled).
    pub fn with_input_power(&self, power: f64) -> Self {
        Self { input_power: power, ..self.clone() }
    }
}

/// `log2 det(I + P G^H Sigma^-1 G) / slots_consumed`.
pub fn model_rate(m: &LinearObservationModel) -> Result<f64> {
    let n = m.gain.ncols();
    let chol = Cholesky::new(m.noise_covariance.clone()).ok_or(Error::SingularCovariance)?;
    let whitened = chol
        .l()
        .solve_lower_triangular(&m.gain)
        .ok_or(Error::SingularCovariance)?;
    let info = DMatrix::<Complex64>::identity(n, n)
        + whitened.adjoint() * &whitened * Complex64::new(m.input_power, 0.0);
    let info_chol = Cholesky::new(info).ok_or(Error::InvalidConfig("information matrix not positive definite".into()))?;
    let log_det: f64 = info_chol.l().diagonal().iter().map(|d| 2.0 * d.norm().ln()).sum();
    Ok(log_det / std::f64::consts::LN_2 / m.slots_consumed as f64)
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidConfig("slope needs at least two matched points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("SNR points must be distinct".into()));
    }
    Ok(sxy / sxx)
}

/// Anything that can average the per-slot sum rate of a scheme over
/// episodes at a given operating point.
pub trait SumRateSampler {
    fn mean_sum_rate(&self, config: &SystemConfig, episodes: usize) -> Result<f64>;
}

pub const MIN_SLOPE_SNR_DB: f64 = 30.0;
pub const MIN_SLOPE_EPISODES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeMeasurement {
    pub slope: f64,
    /// `(SNR dB, mean sum rate in bits/slot)`.
    pub points: Vec<(f64, f64)>,
}

/// Regresses mean per-slot sum rate on `log2(SNR)`. Every SNR point reuses
/// the same seed so the episodes share channel draws.
pub fn dof_slope<S: SumRateSampler + ?Sized>(
    sampler: &S,
    num_users: usize,
    snr_db_points: &[f64],
    episodes_per_point: usize,
    seed: u64,
) -> Result<SlopeMeasurement> {
    if snr_db_points.len() < 2 {
        return Err(Error::InvalidConfig("slope needs at least two SNR points".into()));
    }
    if let Some(low) = snr_db_points.iter().find(|&&s| s < MIN_SLOPE_SNR_DB) {
        return Err(Error::InvalidConfig(format!("SNR point {low} dB is below {MIN_SLOPE_SNR_DB} dB")));
    }
    if episodes_per_point < MIN_SLOPE_EPISODES {
        return Err(Error::InsufficientEpisodes { required: MIN_SLOPE_EPISODES, got: episodes_per_point });
    }
    let mut points = Vec::with_capacity(snr_db_points.len());
    for &snr_db in snr_db_points {
        let config = SystemConfig::at_snr_db(num_users, snr_db, seed)?;
        points.push((snr_db, sampler.mean_sum_rate(&config, episodes_per_point)?));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0 / (10.0 * 2f64.log10())).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(SlopeMeasurement { slope: least_squares_slope(&xs, &ys)?, points })
}

/// Exact DoF values for `K` users.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofFormulas {
    pub num_users: i64,
    /// `2K / (K + 2)`.
    pub proposed: Ratio<i64>,
    /// `K^2 / (K^2 - 1)`.
    pub retro_csit: Ratio<i64>,
    /// `ceil(K/2) K / (ceil(K/2)(K - 1) + 1)`.
    pub retro_outputfb: Ratio<i64>,
    /// `K / 2`.
    pub baseline: Ratio<i64>,
}

pub fn dof_formulas(num_users: i64) -> Result<DofFormulas> {
    if num_users < 3 {
        return Err(Error::InvalidConfig(format!("DoF formulas need K >= 3, got {num_users}")));
    }
    let k = num_users;
    let half_up = (k + 1) / 2;
    Ok(DofFormulas {
        num_users: k,
        proposed: Ratio::new(2 * k, k + 2),
        retro_csit: Ratio::new(k * k, k * k - 1),
        retro_outputfb: Ratio::new(half_up * k, half_up * (k - 1) + 1),
        baseline: Ratio::new(k, 2),
    })
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// One row of the sum-DoF versus `K` figures.
pub type FigureRow = DofFormulas;

pub fn figure_data(k_min: i64, k_max: i64) -> Result<Vec<FigureRow>> {
    if k_min < 3 || k_max < k_min {
        return Err(Error::InvalidConfig(format!("invalid K range {k_min}:{k_max}")));
    }
    (k_min..=k_max).map(dof_formulas).collect()
}

/// Measured against predicted DoF for one scheme and `K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DofReport {
    pub scheme: String,
    pub num_users: usize,
    #[serde(serialize_with = "serialize_ratio")]
    pub formula_value: Ratio<i64>,
    pub measured_slope: f64,
    pub snr_points: Vec<(f64, f64)>,
    pub messages_per_episode: usize,
    pub slots_per_episode: usize,
}

impl DofReport {
    pub fn ledger_matches_formula(&self) -> bool {
        Ratio::new(self.messages_per_episode as i64, self.slots_per_episode as i64) == self.formula_value
    }

    pub fn relative_slope_error(&self) -> f64 {
        (self.measured_slope / ratio_to_f64(self.formula_value) - 1.0).abs()
    }
}

fn serialize_ratio<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn scalar_model_rate() {
        let h = c(0.3, -1.2);
        let scale = c(0.7, 0.7);
        let n0 = 0.2;
        let sigma = n0 * (1.0 + 1.0 / scale.norm_sqr());
        let m = LinearObservationModel::new(
            DMatrix::from_element(1, 1, 2.0 * h),
            DMatrix::from_element(1, 1, c(sigma, 0.0)),
            1.5,
            2,
        )
        .unwrap();
        let want = 0.5 * (1.0 + 1.5 * 4.0 * h.norm_sqr() / sigma).log2();
        assert!((model_rate(&m).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn zero_gain_and_zero_power_give_zero_rate() {
        let sigma = DMatrix::from_diagonal_element(2, 2, c(1.0, 0.0));
        let zero = LinearObservationModel::new(DMatrix::zeros(2, 2), sigma.clone(), 10.0, 5).unwrap();
        assert_eq!(model_rate(&zero).unwrap(), 0.0);
        let g = DMatrix::from_fn(2, 2, |r, col| c(1.0 + r as f64, col as f64));
        let quiet = LinearObservationModel::new(g, sigma, 0.0, 5).unwrap();
        assert_eq!(model_rate(&quiet).unwrap(), 0.0);
    }

    #[test]
    fn singular_covariance_rejected() {
        let m = LinearObservationModel::new(DMatrix::from_element(1, 1, c(1.0, 0.0)), DMatrix::zeros(1, 1), 1.0, 1)
            .unwrap();
        assert_eq!(model_rate(&m), Err(Error::SingularCovariance));
    }

    #[test]
    fn rate_is_monotone_in_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = DMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let a = DMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let sigma = &a * a.adjoint() + DMatrix::identity(2, 2) * c(0.1, 0.0);
        let mut last = 0.0;
        for p in [0.0, 0.1, 1.0, 10.0, 1e3, 1e6] {
            let r = model_rate(&LinearObservationModel::new(g.clone(), sigma.clone(), p, 4).unwrap()).unwrap();
            assert!(r >= last);
            last = r;
        }
    }

    /// Monte Carlo mutual information `E[log p(y|x) - log p(y)]` with
    /// densities evaluated through an explicit Gaussian elimination, for a
    /// check that shares nothing with the Cholesky route.
    fn mc_mutual_information(m: &LinearObservationModel, samples: usize, seed: u64) -> f64 {
        fn solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> (Vec<Complex64>, Complex64) {
            let n = b.len();
            let mut det = c(1.0, 0.0);
            for col in 0..n {
                let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
                if piv != col {
                    a.swap(piv, col);
                    b.swap(piv, col);
                    det = -det;
                }
                det *= a[col][col];
                for r in col + 1..n {
                    let f = a[r][col] / a[col][col];
                    for k in col..n {
                        let v = a[col][k];
                        a[r][k] -= f * v;
                    }
                    let v = b[col];
                    b[r] -= f * v;
                }
            }
            let mut x = vec![c(0.0, 0.0); n];
            for r in (0..n).rev() {
                let s: Complex64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
                x[r] = (b[r] - s) / a[r][r];
            }
            (x, det)
        }
        let rows = |mat: &DMatrix<Complex64>| -> Vec<Vec<Complex64>> {
            (0..mat.nrows()).map(|r| (0..mat.ncols()).map(|col| mat[(r, col)]).collect()).collect()
        };
        let quad = |cov: &DMatrix<Complex64>, v: &[Complex64]| -> (f64, f64) {
            let (sol, det) = solve(rows(cov), v.to_vec());
            let q: Complex64 = v.iter().zip(&sol).map(|(a, b)| a.conj() * b).sum();
            (q.re, det.norm().ln())
        };
        let p = m.input_power;
        let total = &m.gain * m.gain.adjoint() * c(p, 0.0) + &m.noise_covariance;
        // Noise samples via a Cholesky factor are fine here: only the density
        // evaluation needs to be independent of the rate formula.
        let l = Cholesky::new(m.noise_covariance.clone()).unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mrows, ncols) = m.gain.shape();
        let mut acc = 0.0;
        for _ in 0..samples {
            let x = DMatrix::from_fn(ncols, 1, |_, _| complex_gaussian(&mut rng, p));
            let w = DMatrix::from_fn(mrows, 1, |_, _| complex_gaussian(&mut rng, 1.0));
            let n = &l * w;
            let y = &m.gain * &x + &n;
            let yv: Vec<Complex64> = y.iter().copied().collect();
            let nv: Vec<Complex64> = n.iter().copied().collect();
            let (q_cond, ld_cond) = quad(&m.noise_covariance, &nv);
            let (q_marg, ld_marg) = quad(&total, &yv);
            acc += (-q_cond - ld_cond) - (-q_marg - ld_marg);
        }
        acc / samples as f64 / std::f64::consts::LN_2 / m.slots_consumed as f64
    }

    #[test]
    fn rate_matches_monte_carlo_mutual_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = DMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let a = DMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
        let sigma = &a * a.adjoint() * c(0.5, 0.0) + DMatrix::identity(2, 2) * c(0.2, 0.0);
        let m = LinearObservationModel::new(g, sigma, 4.0, 5).unwrap();
        let exact = model_rate(&m).unwrap();
        let mc = mc_mutual_information(&m, 200_000, 3);
        assert!((mc - exact).abs() < 0.01 * exact.max(0.1), "mc {mc} exact {exact}");
    }

    #[test]
    fn slope_of_exact_line() {
        assert!((least_squares_slope(&[1.0, 2.0, 3.0], &[2.0, 4.5, 7.0]).unwrap() - 2.5).abs() < 1e-15);
        assert!(least_squares_slope(&[1.0], &[1.0]).is_err());
    }

    struct Oracle(f64);
    impl SumRateSampler for Oracle {
        fn mean_sum_rate(&self, config: &SystemConfig, _: usize) -> Result<f64> {
            Ok(self.0 * config.snr().log2() + 0.3)
        }
    }

    #[test]
    fn slope_preconditions() {
        let o = Oracle(1.25);
        assert!(matches!(dof_slope(&o, 3, &[40.0], 1000, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(dof_slope(&o, 3, &[20.0, 40.0], 1000, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(dof_slope(&o, 3, &[40.0, 60.0], 999, 0), Err(Error::InsufficientEpisodes { .. })));
        let s = dof_slope(&o, 3, &[40.0, 50.0, 60.0], 1000, 0).unwrap();
        assert!((s.slope - 1.25).abs() < 1e-12);
    }

    #[test]
    fn formulas_at_three_and_four_users() {
        let f = dof_formulas(3).unwrap();
        assert_eq!(f.proposed, Ratio::new(6, 5));
        assert_eq!(f.retro_csit, Ratio::new(9, 8));
        assert_eq!(f.retro_outputfb, Ratio::new(6, 5));
        assert_eq!(f.baseline, Ratio::new(3, 2));
        let f = dof_formulas(4).unwrap();
        assert_eq!(f.proposed, Ratio::new(8, 6));
        assert_eq!(f.retro_csit, Ratio::new(16, 15));
        assert_eq!(f.retro_outputfb, Ratio::new(8, 7));
        assert!(dof_formulas(2).is_err());
    }

    #[test]
    fn formula_limits_at_large_k() {
        let f = dof_formulas(1_000_000).unwrap();
        assert!((ratio_to_f64(f.proposed) - 2.0).abs() < 1e-4);
        assert!((ratio_to_f64(f.retro_csit) - 1.0).abs() < 1e-4);
        assert!((ratio_to_f64(f.retro_outputfb) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn proposed_dominates_retrospective_in_exact_arithmetic() {
        let rows = figure_data(3, 10_000).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].proposed > w[0].proposed);
        }
        for r in &rows {
            assert!(r.proposed > r.retro_csit);
            assert!(r.proposed >= r.retro_outputfb);
            assert_eq!(r.proposed == r.retro_outputfb, r.num_users == 3);
        }
        let k50 = rows.iter().find(|r| r.num_users == 50).unwrap();
        assert_eq!(k50.proposed, Ratio::new(100, 52));
        assert!((ratio_to_f64(k50.proposed) - 1.923).abs() < 1e-3);
    }
}

//! Full-CSIT ergodic interference alignment: the same symbol vector is sent
//! at both paired slots and each receiver adds its two observations.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{PairedChannels, SystemConfig};
use crate::episode::{check_user, checked_divisor, run_phase1, DofLedgerEntry, PairingMode, Phase1, SymbolVector};
use crate::error::{Error, Result};
use crate::metrics::LinearObservationModel;
use crate::signal::{Slot, Tracked, VarSpace};

/// Observations of one repeated transmission at `t1` and `t2`.
#[derive(Debug, Clone)]
pub struct ReceivedPair {
    pub phase1: Phase1,
}

impl ReceivedPair {
    pub fn pair(&self) -> &PairedChannels {
        &self.phase1.pair
    }

    pub fn noise_variance(&self) -> f64 {
        self.phase1.noise_variance
    }

    pub fn y1(&self) -> SymbolVector {
        SymbolVector::receive(self.phase1.y_t1.iter().map(Tracked::value).collect())
    }

    pub fn y2(&self) -> SymbolVector {
        SymbolVector::receive(self.phase1.y_t2.iter().map(Tracked::value).collect())
    }
}

/// Sends `x` at both slots of `pair` with fresh noise per slot.
pub fn transmit_pair<R: Rng + ?Sized>(
    x: &SymbolVector,
    pair: &PairedChannels,
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ReceivedPair> {
    let k = config.num_users;
    if x.len() != k || pair.num_users() != k {
        return Err(Error::Dimension(format!("expected {k} users")));
    }
    let space = VarSpace::new(k);
    let n0 = config.noise_variance;
    let x_tracked: Vec<Tracked> =
        (0..k).map(|u| Tracked::variable(&space, space.symbol(Slot::T1, u), x.values[u])).collect();
    let receive = |h: &crate::channel::ChannelMatrix, slot: Slot, rng: &mut R| -> Vec<Tracked> {
        (0..k)
            .map(|j| {
                let z = crate::channel::complex_gaussian(rng, n0);
                let noise = Tracked::variable(&space, space.phase1_noise(slot, j), z);
                (0..k).fold(noise, |acc, i| acc + x_tracked[i].clone() * h.gain(j, i))
            })
            .collect()
    };
    let y_t1 = receive(&pair.h1, Slot::T1, rng);
    let y_t2 = receive(&pair.h2, Slot::T2, rng);
    Ok(ReceivedPair {
        phase1: Phase1 {
            space,
            pair: pair.clone(),
            x_t1: x.clone(),
            x_t2: x.clone(),
            y_t1,
            y_t2,
            power: config.power,
            noise_variance: n0,
            history: vec![pair.h1.clone(), pair.h2.clone()],
        },
    })
}

/// The combined statistic `Y_k(t1) + Y_k(t2) / c` for one receiver.
#[derive(Debug, Clone)]
pub struct CombinedStatistic {
    pub value: Complex64,
    /// `N0 (1 + 1/|c|^2)`.
    pub effective_noise_variance: f64,
    pub tracked: Tracked,
}

pub fn combine_received(r: &ReceivedPair, k: usize) -> Result<CombinedStatistic> {
    check_user(k, r.phase1.num_users())?;
    let tracked = r.phase1.combined(k);
    let c = r.phase1.scale();
    Ok(CombinedStatistic {
        value: tracked.value(),
        effective_noise_variance: r.noise_variance() * (1.0 + 1.0 / c.norm_sqr()),
        tracked,
    })
}

/// Coefficient multiplying `X_j` in receiver `k`'s combined statistic:
/// `H_kj(t1) + H_kj(t2) / c`.
pub fn combined_coefficient(pair: &PairedChannels, k: usize, j: usize) -> Complex64 {
    pair.h1.gain(k, j) + pair.h2.gain(k, j) / pair.scale.value()
}

/// Achievable rate of user `k` in bits per slot, with the coding gap dropped:
/// `1/2 log2(1 + 2 |H_kk(t1)|^2 SNR / (1 + 1/|c|^2))`.
pub fn baseline_rate(pair: &PairedChannels, config: &SystemConfig, k: usize) -> Result<f64> {
    check_user(k, pair.num_users())?;
    if config.noise_variance <= 0.0 {
        return Err(Error::SingularCovariance);
    }
    let c2 = pair.scale.value().norm_sqr();
    let g = pair.h1.gain(k, k).norm_sqr();
    Ok(0.5 * (1.0 + 2.0 * g * config.snr() / (1.0 + 1.0 / c2)).log2())
}

/// Receiver `k`'s estimate of its symbol, normalized by the combined
/// desired coefficient, with its effective scalar model over two slots.
pub fn decode_baseline(r: &ReceivedPair, k: usize) -> Result<(Complex64, LinearObservationModel, Tracked)> {
    let stat = combine_received(r, k)?;
    let gain = checked_divisor(combined_coefficient(r.pair(), k, k))?;
    let estimate = stat.tracked / gain;
    let space = &r.phase1.space;
    let model = LinearObservationModel::from_statistics(
        space,
        std::slice::from_ref(&estimate),
        &[space.symbol(Slot::T1, k)],
        r.phase1.power,
        r.phase1.noise_variance,
        2,
    );
    Ok((estimate.value(), model, estimate))
}

/// One completed baseline pairing event.
#[derive(Debug, Clone)]
pub struct BaselineEpisode {
    pub received: ReceivedPair,
    pub estimates: Vec<Complex64>,
    pub models: Vec<LinearObservationModel>,
    pub ledger: DofLedgerEntry,
}

impl BaselineEpisode {
    pub fn max_decode_error(&self) -> f64 {
        self.estimates
            .iter()
            .zip(&self.received.phase1.x_t1.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Full-CSIT episode: transmitters see the pairing as it happens and repeat
/// `X(t1)` at `t2`. `Ok(None)` when a search finds no pair.
pub fn run_episode_baseline<R: Rng + ?Sized>(
    config: &SystemConfig,
    mode: &PairingMode,
    rng: &mut R,
) -> Result<Option<BaselineEpisode>> {
    config.validate()?;
    let Some(phase1) = run_phase1(config.num_users, config.power, config.noise_variance, mode, true, rng)? else {
        return Ok(None);
    };
    let received = ReceivedPair { phase1 };
    let k = config.num_users;
    let mut estimates = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for u in 0..k {
        let (x_hat, model, _) = decode_baseline(&received, u)?;
        estimates.push(x_hat);
        models.push(model);
    }
    Ok(Some(BaselineEpisode {
        received,
        estimates,
        models,
        ledger: DofLedgerEntry { messages_decoded: k, slots_consumed: 2 },
    }))
}

//! Ergodic IA with delayed output feedback and no CSIT.
//!
//! Receivers detect the pairing themselves and feed back
//! `(Y_k(t1) + Y_k(t2)/c) / H_kk(t1)`. Transmitter `k` subtracts `2 X_k(t2)`
//! from its feedback and sends the result in the `k`-th phase-2 slot, never
//! touching a channel coefficient. Each receiver solves a `K x K` system for
//! all differences `X_m(t1) - X_m(t2)`, substitutes them into its own
//! combined statistic and recovers both of its symbols.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelMatrix, SystemConfig};
use crate::episode::{
    check_user, checked_divisor, phase2_observe, run_phase1, sample_phase2_channels, DecodedPair, DofLedgerEntry,
    FeedbackKind, FeedbackMessage, FeedbackPayload, PairingMode, Phase1, Provenance, TransmissionLog,
};
use crate::error::{Degeneracy, Error, Result};
use crate::signal::{Signal, Slot, Tracked};

/// Largest condition number accepted for the difference system.
pub const MAX_CONDITION_NUMBER: f64 = 1e8;

/// Receiver `k`'s reformed output, as delivered to transmitter `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFeedbackValue {
    pub user: usize,
    signal: Tracked,
}

impl OutputFeedbackValue {
    pub fn value(&self) -> Complex64 {
        self.signal.value()
    }

    pub fn signal(&self) -> &Tracked {
        &self.signal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFbOptions {
    pub pairing: PairingMode,
    pub delay_slots: u64,
    /// Constant gain on every phase-2 transmission, known to the receivers.
    pub phase2_gain: f64,
}

impl Default for OutputFbOptions {
    fn default() -> Self {
        Self { pairing: PairingMode::genie(), delay_slots: 1, phase2_gain: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutputFb {
    pub phase1: Phase1,
    pub feedback: FeedbackMessage,
    pub phase2_slots: Vec<u64>,
    pub phase2_channels: Vec<ChannelMatrix>,
    /// `[receiver][k]`.
    pub phase2_received: Vec<Vec<Tracked>>,
    pub phase2_gain: f64,
    /// Realized phase-2 transmit symbols, one per transmitter.
    pub phase2_sent: Vec<Complex64>,
    pub log: TransmissionLog,
}

impl EpisodeOutputFb {
    pub fn num_users(&self) -> usize {
        self.phase1.num_users()
    }

    pub fn slots_consumed(&self) -> usize {
        self.num_users() + 2
    }

    pub fn ledger(&self) -> DofLedgerEntry {
        DofLedgerEntry { messages_decoded: 2 * self.num_users(), slots_consumed: self.slots_consumed() }
    }

    pub fn feedback_values(&self) -> &[OutputFeedbackValue] {
        match &self.feedback.payload {
            FeedbackPayload::Output(values) => values,
            _ => unreachable!("output-feedback episodes carry output feedback"),
        }
    }

    /// Mean `|u_k|^2` over this episode's phase-2 transmissions.
    pub fn mean_phase2_power(&self) -> f64 {
        self.phase2_sent.iter().map(|u| u.norm_sqr()).sum::<f64>() / self.phase2_sent.len() as f64
    }
}

/// `(Y_k(t1) + Y_k(t2)/c) / H_kk(t1)`, formed at receiver `k`.
pub fn build_output_feedback(phase1: &Phase1, k: usize) -> Result<OutputFeedbackValue> {
    check_user(k, phase1.num_users())?;
    let direct = checked_divisor(phase1.pair.h1.gain(k, k))?;
    Ok(OutputFeedbackValue { user: k, signal: phase1.combined(k) / direct })
}

fn retransmit<S: Signal>(feedback: &S, own_t2: &S) -> S {
    feedback.clone() - own_t2.clone() * Complex64::new(2.0, 0.0)
}

/// What transmitter `k` sends: its feedback minus twice its own `t2` symbol.
/// Only the feedback value and the transmitter's own symbol enter.
pub fn phase2_transmit_outputfb(fb: &OutputFeedbackValue, x_k_t2: Complex64) -> Complex64 {
    retransmit(&fb.value(), &x_k_t2)
}

/// `A d = S` as assembled and solved at one receiver.
#[derive(Debug, Clone)]
pub struct DifferenceSystem {
    /// `A[k][k] = 1`, `A[k][m] = H_km(t1) / H_kk(t1)`.
    pub matrix: DMatrix<Complex64>,
    pub rhs: Vec<Tracked>,
    pub solution: Vec<Tracked>,
    pub condition_number: f64,
}

impl DifferenceSystem {
    pub fn rhs_values(&self) -> Vec<Complex64> {
        self.rhs.iter().map(Tracked::value).collect()
    }

    pub fn solution_values(&self) -> Vec<Complex64> {
        self.solution.iter().map(Tracked::value).collect()
    }
}

/// Normalized cross-gain matrix of the phase-1 channel at `t1`.
pub fn difference_matrix(h1: &ChannelMatrix) -> Result<DMatrix<Complex64>> {
    let k = h1.dim();
    let diag = (0..k).map(|r| checked_divisor(h1.gain(r, r))).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(k, k, |r, c| if r == c { Complex64::new(1.0, 0.0) } else { h1.gain(r, c) / diag[r] }))
}

pub fn condition_number(a: &DMatrix<Complex64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn solve_difference_system(ep: &EpisodeOutputFb, j: usize) -> Result<DifferenceSystem> {
    check_user(j, ep.num_users())?;
    let k = ep.num_users();
    let matrix = difference_matrix(&ep.phase1.pair.h1)?;
    let condition_number = condition_number(&matrix);
    if condition_number.is_nan() || condition_number > MAX_CONDITION_NUMBER {
        return Err(Error::Degenerate(Degeneracy::IllConditioned { condition_number }));
    }
    let rhs = (0..k)
        .map(|s| {
            let h = checked_divisor(ep.phase2_channels[s].gain(j, s) * ep.phase2_gain)?;
            Ok(ep.phase2_received[j][s].clone() / h)
        })
        .collect::<Result<Vec<_>>>()?;
    let inverse = matrix
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Degenerate(Degeneracy::IllConditioned { condition_number: f64::INFINITY }))?;
    let space = &ep.phase1.space;
    let solution = (0..k)
        .map(|m| (0..k).fold(Tracked::zero(space), |acc, s| acc + rhs[s].clone() * inverse[(m, s)]))
        .collect();
    Ok(DifferenceSystem { matrix, rhs, solution, condition_number })
}

pub fn decode_outputfb(ep: &EpisodeOutputFb, j: usize) -> Result<DecodedPair> {
    let system = solve_difference_system(ep, j)?;
    decode_outputfb_with(ep, j, &system)
}

/// Substitution step given an already solved difference system.
pub fn decode_outputfb_with(ep: &EpisodeOutputFb, j: usize, system: &DifferenceSystem) -> Result<DecodedPair> {
    let h1 = &ep.phase1.pair.h1;
    let k = ep.num_users();
    let stripped = (0..k)
        .filter(|&m| m != j)
        .fold(ep.phase1.combined(j), |acc, m| acc - system.solution[m].clone() * h1.gain(j, m));
    let sum = stripped / checked_divisor(h1.gain(j, j))?;
    let diff = system.solution[j].clone();
    let half = Complex64::new(0.5, 0.0);
    let t1_hat = (sum.clone() + diff.clone()) * half;
    let t2_hat = (sum - diff) * half;
    Ok(DecodedPair::from_estimates(&ep.phase1, j, t1_hat, t2_hat, ep.slots_consumed()))
}

#[derive(Debug, Clone)]
pub struct OutputFbOutcome {
    pub episode: EpisodeOutputFb,
    pub decoded: Vec<DecodedPair>,
    pub ledger: DofLedgerEntry,
}

impl OutputFbOutcome {
    pub fn max_decode_error(&self) -> f64 {
        let p1 = &self.episode.phase1;
        self.decoded
            .iter()
            .enumerate()
            .map(|(j, d)| d.max_error(p1.x_t1.values[j], p1.x_t2.values[j]))
            .fold(0.0, f64::max)
    }
}

pub fn run_episode_outputfb<R: Rng + ?Sized>(
    config: &SystemConfig,
    options: &OutputFbOptions,
    rng: &mut R,
) -> Result<Option<OutputFbOutcome>> {
    config.validate()?;
    if !(options.phase2_gain > 0.0 && options.phase2_gain.is_finite()) {
        return Err(Error::InvalidConfig("phase2_gain must be positive".into()));
    }
    let k = config.num_users;
    let Some(phase1) = run_phase1(k, config.power, config.noise_variance, &options.pairing, false, rng)? else {
        return Ok(None);
    };
    let t2 = phase1.pair.t2;
    let values = (0..k).map(|u| build_output_feedback(&phase1, u)).collect::<Result<Vec<_>>>()?;
    let feedback = FeedbackMessage::new(FeedbackPayload::Output(values), t2, options.delay_slots)?;
    let first = feedback.available_at();
    let phase2_slots: Vec<u64> = (0..k as u64).map(|s| first + s).collect();

    let mut log = TransmissionLog::new(options.delay_slots);
    let gain = Complex64::new(options.phase2_gain, 0.0);
    let FeedbackPayload::Output(values) = &feedback.payload else { unreachable!() };
    let payloads: Vec<Tracked> = values
        .iter()
        .map(|fb| {
            let u = fb.user;
            log.record(
                u,
                phase2_slots[u],
                vec![
                    Provenance::Feedback { kind: FeedbackKind::Output, about_slot: t2, available_at: first },
                    Provenance::OwnSymbol { slot: t2 },
                ],
            );
            retransmit(fb.signal(), &phase1.symbol(Slot::T2, u)) * gain
        })
        .collect();
    let phase2_sent = payloads.iter().map(Tracked::value).collect();
    let phase2_channels = sample_phase2_channels(k, first, &options.pairing, rng);
    let phase2_received = phase2_observe(&phase1.space, &phase2_channels, &payloads, config.noise_variance, rng);

    let episode = EpisodeOutputFb {
        phase1,
        feedback,
        phase2_slots,
        phase2_channels,
        phase2_received,
        phase2_gain: options.phase2_gain,
        phase2_sent,
        log,
    };
    let decoded = (0..k).map(|j| decode_outputfb(&episode, j)).collect::<Result<Vec<_>>>()?;
    let ledger = episode.ledger();
    Ok(Some(OutputFbOutcome { episode, decoded, ledger }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn run(config: &SystemConfig, stream: u64) -> OutputFbOutcome {
        run_episode_outputfb(config, &OutputFbOptions::default(), &mut config.rng(stream)).unwrap().unwrap()
    }

    #[test]
    fn feedback_expansion_three_users() {
        let config = SystemConfig::noiseless(3, 1).unwrap();
        let out = run(&config, 0);
        let p1 = &out.episode.phase1;
        let (x1, x2, h) = (&p1.x_t1.values, &p1.x_t2.values, &p1.pair.h1);
        for k in 0..3 {
            let cross: Complex64 = (0..3).filter(|&m| m != k).map(|m| h.gain(k, m) * (x1[m] - x2[m])).sum();
            let want = (x1[k] + x2[k]) + cross / h.gain(k, k);
            assert!((out.episode.feedback_values()[k].value() - want).norm() < 1e-12);
            let sent = phase2_transmit_outputfb(&out.episode.feedback_values()[k], x2[k]);
            let want_sent = (x1[k] - x2[k]) + cross / h.gain(k, k);
            assert!((sent - want_sent).norm() < 1e-12);
            assert!((out.episode.phase2_sent[k] - want_sent).norm() < 1e-12);
        }
    }

    #[test]
    fn transmitters_only_see_feedback_and_own_symbols() {
        let config = SystemConfig::new(4, 10.0, 1.0, 2).unwrap();
        for s in 0..5 {
            let out = run(&config, s);
            assert!(out.episode.log.is_channel_blind());
            assert!(out.episode.log.is_causal());
            assert_eq!(out.episode.log.records.len(), 4);
        }
    }

    #[test]
    fn difference_matrix_is_unit_diagonal() {
        let config = SystemConfig::noiseless(5, 3).unwrap();
        let out = run(&config, 0);
        let sys = solve_difference_system(&out.episode, 2).unwrap();
        for i in 0..5 {
            assert_eq!(sys.matrix[(i, i)], Complex64::new(1.0, 0.0));
        }
        let lhs = &sys.matrix * DMatrix::from_column_slice(5, 1, &sys.solution_values());
        for i in 0..5 {
            assert!((lhs[(i, 0)] - sys.rhs[i].value()).norm() < 1e-10);
        }
    }

    #[test]
    fn differences_recovered_exactly_noiseless() {
        let config = SystemConfig::noiseless(3, 4).unwrap();
        for s in 0..20 {
            let out = run(&config, s);
            let p1 = &out.episode.phase1;
            for j in 0..3 {
                let sys = solve_difference_system(&out.episode, j).unwrap();
                for m in 0..3 {
                    let truth = p1.x_t1.values[m] - p1.x_t2.values[m];
                    assert!((sys.solution[m].value() - truth).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn equal_messages_give_zero_feedback_and_differences() {
        // Observations rebuilt with x(t2) = x(t1) and no noise.
        let config = SystemConfig::noiseless(3, 5).unwrap();
        let mut out = run(&config, 0);
        let ep = &mut out.episode;
        let k = 3;
        let x = ep.phase1.x_t1.values.clone();
        ep.phase1.x_t2.values = x.clone();
        let space = ep.phase1.space;
        let (h1, h2) = (ep.phase1.pair.h1.clone(), ep.phase1.pair.h2.clone());
        for j in 0..k {
            let obs = |h: &ChannelMatrix, slot: Slot| {
                (0..k).fold(Tracked::zero(&space), |acc, i| {
                    acc + Tracked::variable(&space, space.symbol(slot, i), x[i]) * h.gain(j, i)
                })
            };
            ep.phase1.y_t1[j] = obs(&h1, Slot::T1);
            ep.phase1.y_t2[j] = obs(&h2, Slot::T2);
        }
        for u in 0..k {
            let fb = build_output_feedback(&ep.phase1, u).unwrap();
            assert!((fb.value() - 2.0 * x[u]).norm() < 1e-12);
            assert!(phase2_transmit_outputfb(&fb, x[u]).norm() < 1e-12);
        }
        for j in 0..k {
            for s in 0..k {
                ep.phase2_received[j][s] = Tracked::zero(&space);
            }
            let sys = solve_difference_system(ep, j).unwrap();
            assert!(sys.solution_values().iter().all(|d| d.norm() == 0.0));
        }
    }

    #[test]
    fn zero_input_feedback_is_zero() {
        let config = SystemConfig::noiseless(3, 6).unwrap();
        let mut out = run(&config, 0);
        let space = out.episode.phase1.space;
        for j in 0..3 {
            out.episode.phase1.y_t1[j] = Tracked::zero(&space);
            out.episode.phase1.y_t2[j] = Tracked::zero(&space);
        }
        assert_eq!(build_output_feedback(&out.episode.phase1, 1).unwrap().value(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn noiseless_exact_recovery_k3_to_k8() {
        for k in 3..=8 {
            let config = SystemConfig::noiseless(k, 20 + k as u64).unwrap();
            for s in 0..20 {
                match run_episode_outputfb(&config, &OutputFbOptions::default(), &mut config.rng(s)) {
                    Ok(Some(out)) => {
                        assert!(out.max_decode_error() < 1e-9, "K={k} err={}", out.max_decode_error());
                        assert_eq!(out.ledger.ratio(), Ratio::new(2 * k as i64, k as i64 + 2));
                    }
                    Err(Error::Degenerate(_)) => {}
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }

    #[test]
    fn ill_conditioned_system_aborts() {
        let config = SystemConfig::noiseless(3, 7).unwrap();
        let mut out = run(&config, 0);
        // Make rows 0 and 1 of A identical.
        let h = ChannelMatrix::from_fn(3, 0, |r, c| match (r, c) {
            (0, 0) | (1, 1) | (0, 1) | (1, 0) => Complex64::new(1.0, 0.0),
            (r, c) if r == c => Complex64::new(1.0, 0.0),
            _ => Complex64::new(0.5, 0.0),
        });
        out.episode.phase1.pair.h1 = h;
        assert!(matches!(
            solve_difference_system(&out.episode, 0),
            Err(Error::Degenerate(Degeneracy::IllConditioned { .. }))
        ));
    }

    #[test]
    fn constant_phase2_gain_is_compensated() {
        let config = SystemConfig::noiseless(4, 8).unwrap();
        let options = OutputFbOptions { phase2_gain: 0.25, ..OutputFbOptions::default() };
        let out = run_episode_outputfb(&config, &options, &mut config.rng(0)).unwrap().unwrap();
        assert!(out.max_decode_error() < 1e-9);
        assert!(out.episode.mean_phase2_power() > 0.0);
    }
}

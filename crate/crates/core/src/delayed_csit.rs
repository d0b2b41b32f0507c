//! Ergodic IA with delayed channel information at the transmitters.
//!
//! Phase 1 carries independent symbols at `t1` and `t2`. Once the delayed
//! feedback (either the CSI history or the two time indices) reveals the
//! pairing, transmitter `k` alone sends `X_k(t1) - X_k(t2)` in the `k`-th
//! phase-2 slot. Receiver `j` learns every difference from its own phase-2
//! observations, strips the interference out of `Y_j(t1) + Y_j(t2)/c`, and
//! solves the sum/difference pair for both of its symbols. `2K` symbols are
//! decoded over `K + 2` slots.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelMatrix, SystemConfig};
use crate::episode::{
    check_user, checked_divisor, phase2_observe, run_phase1, sample_phase2_channels, DecodedPair, DofLedgerEntry,
    FeedbackKind, FeedbackMessage, FeedbackPayload, PairingMode, Phase1, Provenance, TransmissionLog,
};
use crate::error::{Error, Result};
use crate::signal::{Signal, Slot, Tracked};

/// Which delayed channel information the receivers feed back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsitFeedback {
    Csi,
    TimeIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsitOptions {
    pub pairing: PairingMode,
    pub feedback: CsitFeedback,
    pub delay_slots: u64,
    /// Send `(X_k(t1) - X_k(t2)) / sqrt(2)` so phase-2 power equals `P`.
    pub normalize_phase2: bool,
}

impl Default for CsitOptions {
    fn default() -> Self {
        Self { pairing: PairingMode::genie(), feedback: CsitFeedback::Csi, delay_slots: 1, normalize_phase2: false }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeCsit {
    pub phase1: Phase1,
    pub feedback: FeedbackMessage,
    /// Slot in which transmitter `k` sends its difference.
    pub phase2_slots: Vec<u64>,
    pub phase2_channels: Vec<ChannelMatrix>,
    /// `[receiver][k]`: receiver's observation of the `k`-th phase-2 slot.
    pub phase2_received: Vec<Vec<Tracked>>,
    /// Constant gain applied to every difference symbol.
    pub phase2_gain: f64,
    pub log: TransmissionLog,
}

impl EpisodeCsit {
    pub fn num_users(&self) -> usize {
        self.phase1.num_users()
    }

    pub fn slots_consumed(&self) -> usize {
        self.num_users() + 2
    }

    pub fn ledger(&self) -> DofLedgerEntry {
        DofLedgerEntry { messages_decoded: 2 * self.num_users(), slots_consumed: self.slots_consumed() }
    }
}

fn difference<S: Signal>(at_t1: &S, at_t2: &S) -> S {
    at_t1.clone() - at_t2.clone()
}

/// Transmitter `k`'s phase-2 symbol `X_k(t1) - X_k(t2)` (before the optional
/// power normalization). All other transmitters are silent in that slot.
pub fn phase2_transmit_csit(ep: &EpisodeCsit, k: usize) -> Result<Complex64> {
    check_user(k, ep.num_users())?;
    Ok(difference(&ep.phase1.x_t1.values[k], &ep.phase1.x_t2.values[k]))
}

/// `Y_j(t1) + Y_j(t2) / c`.
pub fn combine_phase1(ep: &EpisodeCsit, j: usize) -> Result<Tracked> {
    check_user(j, ep.num_users())?;
    Ok(ep.phase1.combined(j))
}

/// Receiver `j`'s estimate of `X_m(t1) - X_m(t2)` from its own observation
/// of the `m`-th phase-2 slot.
pub fn estimate_difference(ep: &EpisodeCsit, j: usize, m: usize) -> Result<Tracked> {
    let h = checked_divisor(ep.phase2_channels[m].gain(j, m) * ep.phase2_gain)?;
    Ok(ep.phase2_received[j][m].clone() / h)
}

/// Removes `sum_{m != j} H_jm(t1) d_m` from the combined statistic, leaving
/// `H_jj(t1) (X_j(t1) + X_j(t2))` plus noise.
pub fn cancel_interference(ep: &EpisodeCsit, j: usize, combined: Tracked) -> Result<Tracked> {
    let h1 = &ep.phase1.pair.h1;
    (0..ep.num_users()).filter(|&m| m != j).try_fold(combined, |acc, m| {
        Ok(acc - estimate_difference(ep, j, m)? * h1.gain(j, m))
    })
}

pub fn decode_csit(ep: &EpisodeCsit, j: usize) -> Result<DecodedPair> {
    decode_csit_from_combined(ep, j, combine_phase1(ep, j)?)
}

/// The decoder downstream of the combining step; exposed so verification
/// can feed it a deliberately corrupted combination.
pub fn decode_csit_from_combined(ep: &EpisodeCsit, j: usize, combined: Tracked) -> Result<DecodedPair> {
    check_user(j, ep.num_users())?;
    let sum_scaled = cancel_interference(ep, j, combined)?;
    let direct = checked_divisor(ep.phase1.pair.h1.gain(j, j))?;
    let sum = sum_scaled / direct;
    let diff = estimate_difference(ep, j, j)?;
    let half = Complex64::new(0.5, 0.0);
    let t1_hat = (sum.clone() + diff.clone()) * half;
    let t2_hat = (sum - diff) * half;
    Ok(DecodedPair::from_estimates(&ep.phase1, j, t1_hat, t2_hat, ep.slots_consumed()))
}

/// A finished episode with every receiver's decoded pair.
#[derive(Debug, Clone)]
pub struct CsitOutcome {
    pub episode: EpisodeCsit,
    pub decoded: Vec<DecodedPair>,
    pub ledger: DofLedgerEntry,
}

impl CsitOutcome {
    pub fn max_decode_error(&self) -> f64 {
        let p1 = &self.episode.phase1;
        self.decoded
            .iter()
            .enumerate()
            .map(|(j, d)| d.max_error(p1.x_t1.values[j], p1.x_t2.values[j]))
            .fold(0.0, f64::max)
    }
}

/// Runs phase 1, delivers the feedback, runs phase 2 and decodes at every
/// receiver. `Ok(None)` when a search exhausts its horizon; degenerate draws
/// surface as [`Error::Degenerate`] for the harness to resample.
pub fn run_episode_csit<R: Rng + ?Sized>(
    config: &SystemConfig,
    options: &CsitOptions,
    rng: &mut R,
) -> Result<Option<CsitOutcome>> {
    config.validate()?;
    let k = config.num_users;
    let Some(phase1) = run_phase1(k, config.power, config.noise_variance, &options.pairing, false, rng)? else {
        return Ok(None);
    };
    let (t1, t2) = (phase1.pair.t1, phase1.pair.t2);

    // Receivers know the pairing from CSIR; what travels back differs by kind.
    let payload = match options.feedback {
        CsitFeedback::Csi => FeedbackPayload::Csi(phase1.history.clone()),
        CsitFeedback::TimeIndex => FeedbackPayload::TimeIndex { t1, t2 },
    };
    let feedback = FeedbackMessage::new(payload, t2, options.delay_slots)?;
    let (fb_kind, learned) = match &feedback.payload {
        FeedbackPayload::Csi(history) => (FeedbackKind::Csi, options.pairing.detector().detect(history)),
        FeedbackPayload::TimeIndex { t1, t2 } => (FeedbackKind::TimeIndex, Some((*t1, *t2))),
        FeedbackPayload::Output(_) => unreachable!("CSIT feedback never carries outputs"),
    };
    if learned != Some((t1, t2)) {
        return Err(Error::InvalidConfig(format!(
            "transmitters inferred pairing {learned:?} from feedback, receivers saw ({t1}, {t2})"
        )));
    }

    let first = feedback.available_at();
    let phase2_slots: Vec<u64> = (0..k as u64).map(|s| first + s).collect();
    let phase2_gain = if options.normalize_phase2 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    let mut log = TransmissionLog::new(options.delay_slots);
    let payloads: Vec<Tracked> = (0..k)
        .map(|u| {
            log.record(
                u,
                phase2_slots[u],
                vec![
                    Provenance::OwnSymbol { slot: t1 },
                    Provenance::OwnSymbol { slot: t2 },
                    Provenance::Feedback { kind: fb_kind, about_slot: t2, available_at: first },
                ],
            );
            difference(&phase1.symbol(Slot::T1, u), &phase1.symbol(Slot::T2, u)) * Complex64::new(phase2_gain, 0.0)
        })
        .collect();
    let phase2_channels = sample_phase2_channels(k, first, &options.pairing, rng);
    let phase2_received = phase2_observe(&phase1.space, &phase2_channels, &payloads, config.noise_variance, rng);

    let episode = EpisodeCsit { phase1, feedback, phase2_slots, phase2_channels, phase2_received, phase2_gain, log };
    let decoded = (0..k).map(|j| decode_csit(&episode, j)).collect::<Result<Vec<_>>>()?;
    let ledger = episode.ledger();
    Ok(Some(CsitOutcome { episode, decoded, ledger }))
}

//! Pieces shared by every scheme: symbol vectors, pairing modes, phase-1
//! observations, feedback messages, the DoF ledger and the transmission log.

use num_complex::Complex64;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    complex_gaussian, genie_pair, is_complementary_pair, sample_channel, ChannelMatrix, PairedChannels,
    PairingScale, PairingSearch, QuantizerConfig,
};
use crate::error::{Degeneracy, Error, Result};
use crate::output_feedback::OutputFeedbackValue;
use crate::signal::{Slot, Tracked, VarSpace};

/// Divisor floor for every decoder step that divides by a channel gain.
pub const COEFFICIENT_FLOOR: f64 = 1e-6;

pub(crate) fn checked_divisor(h: Complex64) -> Result<Complex64> {
    if h.norm() < COEFFICIENT_FLOOR {
        Err(Error::Degenerate(Degeneracy::SmallCoefficient { magnitude: h.norm() }))
    } else {
        Ok(h)
    }
}

pub(crate) fn check_user(index: usize, num_users: usize) -> Result<()> {
    if index < num_users {
        Ok(())
    } else {
        Err(Error::UserIndex { index, num_users })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolKind {
    Transmit,
    Receive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector {
    pub values: Vec<Complex64>,
    pub kind: SymbolKind,
}

impl SymbolVector {
    pub fn transmit(values: Vec<Complex64>) -> Self {
        Self { values, kind: SymbolKind::Transmit }
    }

    pub fn receive(values: Vec<Complex64>) -> Self {
        Self { values, kind: SymbolKind::Receive }
    }

    /// `K` i.i.d. `CN(0, P)` codeword samples.
    pub fn sample<R: Rng + ?Sized>(num_users: usize, power: f64, rng: &mut R) -> Self {
        Self::transmit((0..num_users).map(|_| complex_gaussian(rng, power)).collect())
    }

    pub fn zeros(num_users: usize) -> Self {
        Self::transmit(vec![Complex64::new(0.0, 0.0); num_users])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How the pairing event is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairingMode {
    /// `H(t2)` constructed from `H(t1)` at the next slot.
    Genie { scale: PairingScale },
    /// Scan fresh i.i.d. slots for a quantized complementary pair.
    Search { quantizer: QuantizerConfig, horizon: u64 },
    /// Fixed realization of the pair and of the `K` phase-2 channels, for
    /// experiments conditioned on the channel. Only noise and symbols are
    /// drawn.
    #[serde(skip)]
    Replay { pair: PairedChannels, phase2: Vec<ChannelMatrix> },
}

impl PairingMode {
    pub fn genie() -> Self {
        PairingMode::Genie { scale: PairingScale::one() }
    }

    pub fn search(quantizer: QuantizerConfig, horizon: u64) -> Self {
        PairingMode::Search { quantizer, horizon }
    }

    pub fn replay(pair: PairedChannels, phase2: Vec<ChannelMatrix>) -> Result<Self> {
        let k = pair.num_users();
        if phase2.len() != k || phase2.iter().any(|h| h.dim() != k) {
            return Err(Error::Dimension(format!("replay needs {k} phase-2 channels of size {k}")));
        }
        Ok(PairingMode::Replay { pair, phase2 })
    }

    /// How a party holding a CSI history finds the pair in it.
    pub(crate) fn detector(&self) -> PairDetector {
        match self {
            PairingMode::Genie { .. } => PairDetector::Exact { tolerance: 1e-9 },
            PairingMode::Search { quantizer, .. } => PairDetector::Quantized(quantizer.clone()),
            PairingMode::Replay { pair, .. } => PairDetector::Known { t1: pair.t1, t2: pair.t2 },
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum PairDetector {
    Exact { tolerance: f64 },
    Quantized(QuantizerConfig),
    Known { t1: u64, t2: u64 },
}

impl PairDetector {
    /// `(t1, t2)` of the first pair in a channel history.
    pub(crate) fn detect(&self, history: &[ChannelMatrix]) -> Option<(u64, u64)> {
        match self {
            PairDetector::Exact { tolerance } => {
                for (j, h2) in history.iter().enumerate() {
                    for h1 in &history[..j] {
                        if is_complementary_pair(h1, h2, *tolerance).is_some() {
                            return Some((h1.time_index(), h2.time_index()));
                        }
                    }
                }
                None
            }
            PairDetector::Quantized(q) => crate::channel::find_pairing(history.iter().cloned(), q)
                .ok()
                .flatten()
                .map(|p| (p.t1, p.t2)),
            PairDetector::Known { t1, t2 } => {
                let seen = |t: u64| history.iter().any(|h| h.time_index() == t);
                (seen(*t1) && seen(*t2)).then_some((*t1, *t2))
            }
        }
    }
}

/// Raw draws of one phase-1 slot, before it is known whether the slot will
/// become `t1`, `t2`, or neither.
#[derive(Debug, Clone)]
pub(crate) struct SlotDraw {
    pub x: SymbolVector,
    pub z: Vec<Complex64>,
}

impl SlotDraw {
    fn sample<R: Rng + ?Sized>(num_users: usize, power: f64, noise_variance: f64, rng: &mut R) -> Self {
        let x = SymbolVector::sample(num_users, power, rng);
        let z = (0..num_users).map(|_| complex_gaussian(rng, noise_variance)).collect();
        Self { x, z }
    }
}

/// Phase-1 traffic at the paired slots, as seen by the receivers.
#[derive(Debug, Clone)]
pub struct Phase1 {
    pub space: VarSpace,
    pub pair: PairedChannels,
    pub x_t1: SymbolVector,
    pub x_t2: SymbolVector,
    /// `Y(t1)`, one entry per receiver.
    pub y_t1: Vec<Tracked>,
    pub y_t2: Vec<Tracked>,
    pub power: f64,
    pub noise_variance: f64,
    /// CSI history `t = first slot ..= t2`.
    pub history: Vec<ChannelMatrix>,
}

impl Phase1 {
    pub fn num_users(&self) -> usize {
        self.space.num_users()
    }

    pub fn scale(&self) -> Complex64 {
        self.pair.scale.value()
    }

    /// Tracked transmit symbol of user `k` at a paired slot.
    pub fn symbol(&self, slot: Slot, k: usize) -> Tracked {
        let value = match slot {
            Slot::T1 => self.x_t1.values[k],
            Slot::T2 => self.x_t2.values[k],
        };
        Tracked::variable(&self.space, self.space.symbol(slot, k), value)
    }

    /// `Y_j(t1) + Y_j(t2) / c`.
    pub fn combined(&self, j: usize) -> Tracked {
        self.y_t1[j].clone() + self.y_t2[j].clone() / self.scale()
    }
}

/// Builds `Y = H x + z` for both paired slots. `x_t2` variables are the
/// `t1` variables when `repeat` is set (full-CSIT repetition).
#[allow(clippy::too_many_arguments)]
fn observe_pair(
    space: VarSpace,
    pair: PairedChannels,
    d1: SlotDraw,
    d2: SlotDraw,
    repeat: bool,
    power: f64,
    noise_variance: f64,
    history: Vec<ChannelMatrix>,
) -> Phase1 {
    let k = space.num_users();
    let x1: Vec<Tracked> =
        (0..k).map(|u| Tracked::variable(&space, space.symbol(Slot::T1, u), d1.x.values[u])).collect();
    let x2: Vec<Tracked> = if repeat {
        x1.clone()
    } else {
        (0..k).map(|u| Tracked::variable(&space, space.symbol(Slot::T2, u), d2.x.values[u])).collect()
    };
    let receive = |h: &ChannelMatrix, x: &[Tracked], z: &[Complex64], slot: Slot| -> Vec<Tracked> {
        (0..k)
            .map(|j| {
                let noise = Tracked::variable(&space, space.phase1_noise(slot, j), z[j]);
                (0..k).fold(noise, |acc, i| acc + x[i].clone() * h.gain(j, i))
            })
            .collect()
    };
    let y_t1 = receive(&pair.h1, &x1, &d1.z, Slot::T1);
    let y_t2 = receive(&pair.h2, &x2, &d2.z, Slot::T2);
    let x_t2 = if repeat { d1.x.clone() } else { d2.x };
    Phase1 { space, pair, x_t1: d1.x, x_t2, y_t1, y_t2, power, noise_variance, history }
}

/// Runs phase 1 until a pairing event. `repeat` is the full-CSIT behaviour:
/// transmitters recognize `t2` as it happens and resend the `t1` symbols.
///
/// Returns `Ok(None)` when a search exhausts its horizon.
pub(crate) fn run_phase1<R: Rng + ?Sized>(
    num_users: usize,
    power: f64,
    noise_variance: f64,
    mode: &PairingMode,
    repeat: bool,
    rng: &mut R,
) -> Result<Option<Phase1>> {
    let space = VarSpace::new(num_users);
    match mode {
        PairingMode::Genie { scale } => {
            let h1 = sample_channel(num_users, 0, rng);
            let d1 = SlotDraw::sample(num_users, power, noise_variance, rng);
            let h2 = genie_pair(&h1, *scale);
            let d2 = SlotDraw::sample(num_users, power, noise_variance, rng);
            let history = vec![h1.clone(), h2.clone()];
            let pair = PairedChannels::new(h1, h2, *scale)?;
            Ok(Some(observe_pair(space, pair, d1, d2, repeat, power, noise_variance, history)))
        }
        PairingMode::Search { quantizer, horizon } => {
            let mut search: PairingSearch<SlotDraw> = PairingSearch::new(quantizer.clone())?;
            let mut history = Vec::new();
            for t in 0..*horizon {
                let h = sample_channel(num_users, t, rng);
                history.push(h.clone());
                let draw = SlotDraw::sample(num_users, power, noise_variance, rng);
                if let Some(found) = search.observe(h, draw) {
                    let first = found.pair.t1;
                    history.drain(..first as usize);
                    return Ok(Some(observe_pair(
                        space,
                        found.pair,
                        found.earlier,
                        found.current,
                        repeat,
                        power,
                        noise_variance,
                        history,
                    )));
                }
            }
            Ok(None)
        }
        PairingMode::Replay { pair, .. } => {
            if pair.num_users() != num_users {
                return Err(Error::Dimension(format!("replay pair has K = {}, config K = {num_users}", pair.num_users())));
            }
            let d1 = SlotDraw::sample(num_users, power, noise_variance, rng);
            let d2 = SlotDraw::sample(num_users, power, noise_variance, rng);
            let history = vec![pair.h1.clone(), pair.h2.clone()];
            Ok(Some(observe_pair(space, pair.clone(), d1, d2, repeat, power, noise_variance, history)))
        }
    }
}

/// Phase-2 channels for slots `first, first + 1, ...`, one per user.
pub(crate) fn sample_phase2_channels<R: Rng + ?Sized>(
    num_users: usize,
    first: u64,
    mode: &PairingMode,
    rng: &mut R,
) -> Vec<ChannelMatrix> {
    match mode {
        PairingMode::Replay { phase2, .. } => {
            phase2.iter().enumerate().map(|(s, h)| h.clone().with_time_index(first + s as u64)).collect()
        }
        _ => (0..num_users as u64).map(|s| sample_channel(num_users, first + s, rng)).collect(),
    }
}

/// Every receiver observes slot `s`, where only transmitter `s` is active
/// with `payload[s]`. Returns `[receiver][s]`.
pub(crate) fn phase2_observe<R: Rng + ?Sized>(
    space: &VarSpace,
    channels: &[ChannelMatrix],
    payload: &[Tracked],
    noise_variance: f64,
    rng: &mut R,
) -> Vec<Vec<Tracked>> {
    let k = space.num_users();
    let noise: Vec<Vec<Complex64>> =
        (0..k).map(|_| (0..k).map(|_| complex_gaussian(rng, noise_variance)).collect()).collect();
    (0..k)
        .map(|j| {
            (0..k)
                .map(|s| {
                    payload[s].clone() * channels[s].gain(j, s)
                        + Tracked::variable(space, space.phase2_noise(j, s), noise[j][s])
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackKind {
    Csi,
    TimeIndex,
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackPayload {
    /// Channel matrices of every slot up to and including `t2`.
    Csi(Vec<ChannelMatrix>),
    TimeIndex { t1: u64, t2: u64 },
    Output(Vec<OutputFeedbackValue>),
}

/// What the receivers send back about slot `about_slot`, delivered
/// `delay_slots` later.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMessage {
    pub payload: FeedbackPayload,
    pub about_slot: u64,
    pub delay_slots: u64,
}

impl FeedbackMessage {
    pub fn new(payload: FeedbackPayload, about_slot: u64, delay_slots: u64) -> Result<Self> {
        if delay_slots < 1 {
            return Err(Error::InvalidConfig("feedback delay must be at least one slot".into()));
        }
        if let FeedbackPayload::TimeIndex { t1, t2 } = payload {
            if t1 >= t2 {
                return Err(Error::InvalidConfig(format!("time-index feedback needs t1 < t2, got {t1}, {t2}")));
            }
        }
        Ok(Self { payload, about_slot, delay_slots })
    }

    pub fn kind(&self) -> FeedbackKind {
        match self.payload {
            FeedbackPayload::Csi(_) => FeedbackKind::Csi,
            FeedbackPayload::TimeIndex { .. } => FeedbackKind::TimeIndex,
            FeedbackPayload::Output(_) => FeedbackKind::Output,
        }
    }

    pub fn available_at(&self) -> u64 {
        self.about_slot + self.delay_slots
    }
}

/// `messages_decoded` over `slots_consumed` for one completed episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DofLedgerEntry {
    pub messages_decoded: usize,
    pub slots_consumed: usize,
}

impl DofLedgerEntry {
    pub fn ratio(&self) -> Ratio<i64> {
        Ratio::new(self.messages_decoded as i64, self.slots_consumed as i64)
    }
}

/// Where an input to a transmitter's computation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    OwnSymbol { slot: u64 },
    Feedback { kind: FeedbackKind, about_slot: u64, available_at: u64 },
    ChannelCoefficient { slot: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmitRecord {
    pub transmitter: usize,
    pub slot: u64,
    pub inputs: Vec<Provenance>,
}

/// Inputs of every phase-2 transmitter computation in an episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransmissionLog {
    pub delay_slots: u64,
    pub records: Vec<TransmitRecord>,
}

impl TransmissionLog {
    pub fn new(delay_slots: u64) -> Self {
        Self { delay_slots, records: Vec::new() }
    }

    pub fn record(&mut self, transmitter: usize, slot: u64, inputs: Vec<Provenance>) {
        self.records.push(TransmitRecord { transmitter, slot, inputs });
    }

    /// No input is newer than what a strictly delayed feedback link allows.
    pub fn is_causal(&self) -> bool {
        self.records.iter().all(|r| {
            r.inputs.iter().all(|p| match *p {
                Provenance::OwnSymbol { slot } => slot < r.slot,
                Provenance::Feedback { about_slot, available_at, .. } => {
                    available_at >= about_slot + self.delay_slots && available_at <= r.slot
                }
                Provenance::ChannelCoefficient { slot } => slot + self.delay_slots <= r.slot,
            })
        })
    }

    /// No transmitter ever touched a channel coefficient, directly or
    /// through CSI feedback.
    pub fn is_channel_blind(&self) -> bool {
        self.records.iter().flat_map(|r| &r.inputs).all(|p| {
            !matches!(
                p,
                Provenance::ChannelCoefficient { .. } | Provenance::Feedback { kind: FeedbackKind::Csi, .. }
            )
        })
    }
}

/// The two symbol estimates a receiver produces for its own user.
#[derive(Debug, Clone)]
pub struct DecodedPair {
    pub x_t1_hat: Complex64,
    pub x_t2_hat: Complex64,
    pub model: crate::metrics::LinearObservationModel,
    /// Estimates with their full linear dependence on the episode's variables.
    pub estimates: [Tracked; 2],
}

impl DecodedPair {
    pub(crate) fn from_estimates(
        phase1: &Phase1,
        j: usize,
        t1_hat: Tracked,
        t2_hat: Tracked,
        slots_consumed: usize,
    ) -> Self {
        let space = &phase1.space;
        let desired = [space.symbol(Slot::T1, j), space.symbol(Slot::T2, j)];
        let estimates = [t1_hat, t2_hat];
        let model = crate::metrics::LinearObservationModel::from_statistics(
            space,
            &estimates,
            &desired,
            phase1.power,
            phase1.noise_variance,
            slots_consumed,
        );
        Self { x_t1_hat: estimates[0].value(), x_t2_hat: estimates[1].value(), model, estimates }
    }

    /// Analytic covariance of `(x_t1_hat - x_t1, x_t2_hat - x_t2)`.
    pub fn error_covariance(&self, phase1: &Phase1, j: usize) -> nalgebra::DMatrix<Complex64> {
        let space = &phase1.space;
        crate::signal::error_covariance(
            space,
            &self.estimates,
            &[space.symbol(Slot::T1, j), space.symbol(Slot::T2, j)],
            phase1.power,
            phase1.noise_variance,
        )
    }

    pub fn max_error(&self, x_t1: Complex64, x_t2: Complex64) -> f64 {
        (self.x_t1_hat - x_t1).norm().max((self.x_t2_hat - x_t2).norm())
    }
}

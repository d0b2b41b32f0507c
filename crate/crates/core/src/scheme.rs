//! Uniform episode runner over the four transmission schemes, with
//! abort/resample accounting and deterministic per-attempt RNG streams.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::baseline::run_episode_baseline;
use crate::channel::SystemConfig;
use crate::delayed_csit::{run_episode_csit, CsitFeedback, CsitOptions};
use crate::episode::{DecodedPair, DofLedgerEntry, PairingMode};
use crate::error::{Degeneracy, Error, Result};
use crate::metrics::{dof_formulas, dof_slope, model_rate, DofReport, SumRateSampler};
use crate::output_feedback::{run_episode_outputfb, OutputFbOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Baseline,
    DelayedCsit,
    DelayedTimeIndex,
    DelayedOutputFb,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Baseline, Scheme::DelayedCsit, Scheme::DelayedTimeIndex, Scheme::DelayedOutputFb];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::DelayedCsit => "delayed_csit",
            Scheme::DelayedTimeIndex => "delayed_time_index",
            Scheme::DelayedOutputFb => "delayed_output_fb",
        }
    }

    /// Predicted sum DoF.
    pub fn formula(self, num_users: usize) -> Result<Ratio<i64>> {
        let f = dof_formulas(num_users as i64)?;
        Ok(match self {
            Scheme::Baseline => f.baseline,
            _ => f.proposed,
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    pub pairing: PairingMode,
    pub delay_slots: u64,
    pub normalize_phase2: bool,
    /// Constant phase-2 gain of the output-feedback scheme.
    pub phase2_gain: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self { pairing: PairingMode::genie(), delay_slots: 1, normalize_phase2: false, phase2_gain: 1.0 }
    }
}

/// What one completed episode contributes to an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub ledger: DofLedgerEntry,
    /// `None` in the noiseless setting, where rates are unbounded.
    pub sum_rate_per_slot: Option<f64>,
    pub max_decode_error: f64,
    /// Decoded `(x(t1), x(t2))` per receiver; the baseline repeats its single
    /// estimate in both positions.
    pub decoded: Vec<(num_complex::Complex64, num_complex::Complex64)>,
    pub causal: bool,
    pub channel_blind: bool,
    pub pair_slots: (u64, u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attempt {
    Completed(EpisodeSummary),
    Degenerate(Degeneracy),
    NoPairing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRunner {
    pub scheme: Scheme,
    pub options: SchemeOptions,
}

fn sum_rate(config: &SystemConfig, rates: impl Iterator<Item = Result<f64>>) -> Result<Option<f64>> {
    if config.is_noiseless() {
        return Ok(None);
    }
    rates.sum::<Result<f64>>().map(Some)
}

fn decoded_rates<'a>(d: &'a [DecodedPair]) -> impl Iterator<Item = Result<f64>> + 'a {
    d.iter().map(|p| model_rate(&p.model))
}

impl SchemeRunner {
    pub fn new(scheme: Scheme, options: SchemeOptions) -> Self {
        Self { scheme, options }
    }

    pub fn genie(scheme: Scheme) -> Self {
        Self::new(scheme, SchemeOptions::default())
    }

    /// Runs attempt number `attempt` on its own RNG stream.
    pub fn run_attempt(&self, config: &SystemConfig, attempt: u64) -> Result<Attempt> {
        let mut rng = config.rng(attempt);
        let o = &self.options;
        let outcome = match self.scheme {
            Scheme::Baseline => run_episode_baseline(config, &o.pairing, &mut rng).and_then(|ep| {
                let Some(ep) = ep else { return Ok(None) };
                let p1 = &ep.received.phase1;
                Ok(Some(EpisodeSummary {
                    ledger: ep.ledger,
                    sum_rate_per_slot: sum_rate(config, ep.models.iter().map(model_rate))?,
                    max_decode_error: ep.max_decode_error(),
                    decoded: ep.estimates.iter().map(|&x| (x, x)).collect(),
                    causal: true,
                    channel_blind: false,
                    pair_slots: (p1.pair.t1, p1.pair.t2),
                }))
            }),
            Scheme::DelayedCsit | Scheme::DelayedTimeIndex => {
                let feedback =
                    if self.scheme == Scheme::DelayedCsit { CsitFeedback::Csi } else { CsitFeedback::TimeIndex };
                let options = CsitOptions {
                    pairing: o.pairing.clone(),
                    feedback,
                    delay_slots: o.delay_slots,
                    normalize_phase2: o.normalize_phase2,
                };
                run_episode_csit(config, &options, &mut rng).and_then(|out| {
                    let Some(out) = out else { return Ok(None) };
                    let p1 = &out.episode.phase1;
                    Ok(Some(EpisodeSummary {
                        ledger: out.ledger,
                        sum_rate_per_slot: sum_rate(config, decoded_rates(&out.decoded))?,
                        max_decode_error: out.max_decode_error(),
                        decoded: out.decoded.iter().map(|d| (d.x_t1_hat, d.x_t2_hat)).collect(),
                        causal: out.episode.log.is_causal(),
                        channel_blind: out.episode.log.is_channel_blind(),
                        pair_slots: (p1.pair.t1, p1.pair.t2),
                    }))
                })
            }
            Scheme::DelayedOutputFb => {
                let options =
                    OutputFbOptions { pairing: o.pairing.clone(), delay_slots: o.delay_slots, phase2_gain: o.phase2_gain };
                run_episode_outputfb(config, &options, &mut rng).and_then(|out| {
                    let Some(out) = out else { return Ok(None) };
                    let p1 = &out.episode.phase1;
                    Ok(Some(EpisodeSummary {
                        ledger: out.ledger,
                        sum_rate_per_slot: sum_rate(config, decoded_rates(&out.decoded))?,
                        max_decode_error: out.max_decode_error(),
                        decoded: out.decoded.iter().map(|d| (d.x_t1_hat, d.x_t2_hat)).collect(),
                        causal: out.episode.log.is_causal(),
                        channel_blind: out.episode.log.is_channel_blind(),
                        pair_slots: (p1.pair.t1, p1.pair.t2),
                    }))
                })
            }
        };
        match outcome {
            Ok(Some(s)) => Ok(Attempt::Completed(s)),
            Ok(None) => Ok(Attempt::NoPairing),
            Err(Error::Degenerate(d)) => Ok(Attempt::Degenerate(d)),
            Err(e) => Err(e),
        }
    }

    /// Runs attempts `0, 1, 2, ...` until `episodes` complete. Degenerate
    /// draws and exhausted searches are counted and resampled; the attempt
    /// budget is `4 * episodes + 64`.
    pub fn run_batch(&self, config: &SystemConfig, episodes: usize) -> Result<BatchSummary> {
        config.validate()?;
        let budget = 4 * episodes as u64 + 64;
        let mut batch = BatchSummary::empty(self.scheme, config.num_users);
        let mut next = 0u64;
        while batch.completed() < episodes && next < budget {
            let missing = (episodes - batch.completed()) as u64;
            let chunk = (missing + missing / 16 + 8).min(budget - next);
            let results = self.run_range(config, next, next + chunk)?;
            next += chunk;
            // Attempts past the last needed one were computed speculatively;
            // dropping them keeps the totals independent of chunking.
            for attempt in results.into_iter() {
                if batch.completed() == episodes {
                    break;
                }
                batch.push(attempt);
            }
        }
        if batch.completed() < episodes {
            return Err(Error::InsufficientEpisodes { required: episodes, got: batch.completed() });
        }
        Ok(batch)
    }

    fn run_range(&self, config: &SystemConfig, start: u64, end: u64) -> Result<Vec<Attempt>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (start..end).into_par_iter().map(|a| self.run_attempt(config, a)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (start..end).map(|a| self.run_attempt(config, a)).collect()
        }
    }

    pub fn dof_report(
        &self,
        num_users: usize,
        snr_db_points: &[f64],
        episodes_per_point: usize,
        seed: u64,
    ) -> Result<DofReport> {
        let m = dof_slope(self, num_users, snr_db_points, episodes_per_point, seed)?;
        let ledger = self.run_batch(&SystemConfig::noiseless(num_users, seed)?, 1)?.ledger.unwrap();
        Ok(DofReport {
            scheme: self.scheme.name().to_string(),
            num_users,
            formula_value: self.scheme.formula(num_users)?,
            measured_slope: m.slope,
            snr_points: m.points,
            messages_per_episode: ledger.messages_decoded,
            slots_per_episode: ledger.slots_consumed,
        })
    }
}

impl SumRateSampler for SchemeRunner {
    fn mean_sum_rate(&self, config: &SystemConfig, episodes: usize) -> Result<f64> {
        self.run_batch(config, episodes)?
            .mean_sum_rate
            .ok_or_else(|| Error::InvalidConfig("sum rate is undefined without noise".into()))
    }
}

/// Aggregate over the attempts of one `(scheme, K, SNR)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub scheme: Scheme,
    pub num_users: usize,
    pub episodes: Vec<EpisodeSummary>,
    pub degenerate_aborts: usize,
    pub no_pairing: usize,
    pub mean_sum_rate: Option<f64>,
    pub max_decode_error: f64,
    /// Ledger shared by every completed episode, `None` if they disagree or
    /// none completed.
    pub ledger: Option<DofLedgerEntry>,
}

impl BatchSummary {
    fn empty(scheme: Scheme, num_users: usize) -> Self {
        Self {
            scheme,
            num_users,
            episodes: Vec::new(),
            degenerate_aborts: 0,
            no_pairing: 0,
            mean_sum_rate: None,
            max_decode_error: 0.0,
            ledger: None,
        }
    }

    fn push(&mut self, attempt: Attempt) {
        match attempt {
            Attempt::Completed(s) => {
                let n = self.episodes.len() as f64;
                self.mean_sum_rate = match (self.episodes.is_empty(), self.mean_sum_rate, s.sum_rate_per_slot) {
                    (true, _, r) => r,
                    (false, Some(m), Some(r)) => Some(m + (r - m) / (n + 1.0)),
                    _ => None,
                };
                self.ledger = if self.episodes.is_empty() || self.ledger == Some(s.ledger) { Some(s.ledger) } else { None };
                self.max_decode_error = self.max_decode_error.max(s.max_decode_error);
                self.episodes.push(s);
            }
            Attempt::Degenerate(_) => self.degenerate_aborts += 1,
            Attempt::NoPairing => self.no_pairing += 1,
        }
    }

    pub fn completed(&self) -> usize {
        self.episodes.len()
    }

    pub fn aborted(&self) -> usize {
        self.degenerate_aborts + self.no_pairing
    }

    pub fn attempts(&self) -> usize {
        self.completed() + self.aborted()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("formulas".parse::<Scheme>().is_err());
    }

    #[test]
    fn batch_accounting_adds_up() {
        let config = SystemConfig::new(5, 100.0, 1.0, 3).unwrap();
        let b = SchemeRunner::genie(Scheme::DelayedOutputFb).run_batch(&config, 300).unwrap();
        assert_eq!(b.completed(), 300);
        assert_eq!(b.completed() + b.aborted(), b.attempts());
        assert_eq!(b.ledger, Some(DofLedgerEntry { messages_decoded: 10, slots_consumed: 7 }));
        assert!(b.mean_sum_rate.unwrap() > 0.0);
    }

    #[test]
    fn batch_is_independent_of_request_size() {
        let config = SystemConfig::new(3, 1e3, 1.0, 9).unwrap();
        let r = SchemeRunner::genie(Scheme::DelayedCsit);
        let small = r.run_batch(&config, 10).unwrap();
        let large = r.run_batch(&config, 40).unwrap();
        assert_eq!(small.episodes[..], large.episodes[..10]);
    }

    #[test]
    fn noiseless_batch_has_no_rate() {
        let config = SystemConfig::noiseless(4, 1).unwrap();
        let b = SchemeRunner::genie(Scheme::Baseline).run_batch(&config, 20).unwrap();
        assert_eq!(b.mean_sum_rate, None);
        assert!(b.max_decode_error < 1e-9);
        assert!(SchemeRunner::genie(Scheme::Baseline).mean_sum_rate(&config, 20).is_err());
    }

    #[test]
    fn formula_per_scheme() {
        assert_eq!(Scheme::Baseline.formula(3).unwrap(), Ratio::new(3, 2));
        assert_eq!(Scheme::DelayedTimeIndex.formula(3).unwrap(), Ratio::new(6, 5));
    }
}

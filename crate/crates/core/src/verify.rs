//! Self-contained property suite behind the `verify` subcommand.

use num_rational::Ratio;

use crate::channel::SystemConfig;
use crate::delayed_csit::{combine_phase1, decode_csit_from_combined, run_episode_csit, CsitFeedback, CsitOptions};
use crate::error::Result;
use crate::metrics::{dof_formulas, figure_data, ratio_to_f64};
use crate::output_feedback::{run_episode_outputfb, OutputFbOptions};
use crate::scheme::{Scheme, SchemeRunner};

pub const EXACTNESS_TOLERANCE: f64 = 1e-9;

/// Deliberate decoder faults for checking that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Negate the phase-1 combination `Y(t1) + Y(t2)/c` before decoding.
    CombineSignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn render(&self) -> String {
        self.results
            .iter()
            .map(|r| format!("{} {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail))
            .collect()
    }
}

pub struct VerifyOptions {
    pub episodes_per_k: u64,
    pub fault: Fault,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { episodes_per_k: 50, fault: Fault::None, seed: 0x5eed }
    }
}

fn property(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> PropertyResult {
    match f() {
        Ok((passed, detail)) => PropertyResult { name, passed, detail },
        Err(e) => PropertyResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn csit_exactness(feedback: CsitFeedback, opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for k in 3..=8 {
        let config = SystemConfig::noiseless(k, opts.seed)?;
        let options = CsitOptions { feedback, ..CsitOptions::default() };
        for ep in 0..opts.episodes_per_k {
            let Some(out) = run_episode_csit(&config, &options, &mut config.rng(ep))? else { continue };
            let p1 = &out.episode.phase1;
            for j in 0..k {
                let decoded = match opts.fault {
                    Fault::None => out.decoded[j].clone(),
                    Fault::CombineSignFlip => {
                        let flipped = -combine_phase1(&out.episode, j)?;
                        decode_csit_from_combined(&out.episode, j, flipped)?
                    }
                };
                worst = worst.max(decoded.max_error(p1.x_t1.values[j], p1.x_t2.values[j]));
            }
        }
    }
    Ok((worst < EXACTNESS_TOLERANCE, format!("max error {worst:.3e} over K = 3..8")))
}

fn outputfb_exactness(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for k in 3..=8 {
        let config = SystemConfig::noiseless(k, opts.seed)?;
        let b = SchemeRunner::genie(Scheme::DelayedOutputFb).run_batch(&config, opts.episodes_per_k as usize)?;
        worst = worst.max(b.max_decode_error);
    }
    Ok((worst < EXACTNESS_TOLERANCE, format!("max error {worst:.3e} over K = 3..8")))
}

fn ledgers(opts: &VerifyOptions) -> Result<(bool, String)> {
    for scheme in Scheme::ALL {
        for k in 3..=8 {
            let config = SystemConfig::noiseless(k, opts.seed)?;
            let b = SchemeRunner::genie(scheme).run_batch(&config, 10)?;
            let Some(l) = b.ledger else { return Ok((false, format!("{scheme} K={k}: inconsistent ledger"))) };
            if l.ratio() != scheme.formula(k)? {
                return Ok((false, format!("{scheme} K={k}: {}/{}", l.messages_decoded, l.slots_consumed)));
            }
            if scheme != Scheme::Baseline && (l.messages_decoded, l.slots_consumed) != (2 * k, k + 2) {
                return Ok((false, format!("{scheme} K={k}: {}/{}", l.messages_decoded, l.slots_consumed)));
            }
        }
    }
    Ok((true, "2K messages per K+2 slots (baseline K per 2)".into()))
}

fn feedback_equivalence(opts: &VerifyOptions) -> Result<(bool, String)> {
    for k in 3..=6 {
        let config = SystemConfig::new(k, 1e3, 1.0, opts.seed)?;
        let a = SchemeRunner::genie(Scheme::DelayedCsit).run_batch(&config, 20)?;
        let b = SchemeRunner::genie(Scheme::DelayedTimeIndex).run_batch(&config, 20)?;
        let same = a.episodes.iter().zip(&b.episodes).all(|(x, y)| x.decoded == y.decoded);
        if !same {
            return Ok((false, format!("decoded symbols differ at K={k}")));
        }
    }
    Ok((true, "bitwise identical decodes, K = 3..6".into()))
}

fn blindness(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut n = 0;
    for k in 3..=8 {
        let config = SystemConfig::new(k, 100.0, 1.0, opts.seed)?;
        for ep in 0..opts.episodes_per_k {
            let Some(out) = run_episode_outputfb(&config, &OutputFbOptions::default(), &mut config.rng(ep))? else {
                continue;
            };
            if !out.episode.log.is_channel_blind() || !out.episode.log.is_causal() {
                return Ok((false, format!("K={k} episode {ep} references channel state")));
            }
            n += 1;
        }
    }
    Ok((true, format!("{n} episodes, no channel coefficient in any transmit record")))
}

fn formula_table() -> Result<(bool, String)> {
    let f = dof_formulas(3)?;
    let k3 = f.proposed == Ratio::new(6, 5) && f.retro_csit == Ratio::new(9, 8) && f.retro_outputfb == Ratio::new(6, 5);
    let big = dof_formulas(1_000_000)?;
    let limits = (ratio_to_f64(big.proposed) - 2.0).abs() < 1e-4
        && (ratio_to_f64(big.retro_csit) - 1.0).abs() < 1e-4
        && (ratio_to_f64(big.retro_outputfb) - 1.0).abs() < 1e-4;
    let rows = figure_data(3, 1000)?;
    let shape = rows.iter().all(|r| {
        r.proposed == Ratio::new(2 * r.num_users, r.num_users + 2)
            && r.proposed > r.retro_csit
            && (r.proposed > r.retro_outputfb || (r.num_users == 3 && r.proposed == r.retro_outputfb))
    }) && rows.windows(2).all(|w| w[1].proposed > w[0].proposed);
    Ok((k3 && limits && shape, format!("K=3 values {k3}, limits {limits}, K = 3..1000 ordering {shape}")))
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let results = vec![
        property("formula_table", formula_table),
        property("exactness_delayed_csit", || csit_exactness(CsitFeedback::Csi, opts)),
        property("exactness_delayed_time_index", || csit_exactness(CsitFeedback::TimeIndex, opts)),
        property("exactness_delayed_output_fb", || outputfb_exactness(opts)),
        property("ledger", || ledgers(opts)),
        property("feedback_kind_equivalence", || feedback_equivalence(opts)),
        property("transmitter_blindness", || blindness(opts)),
    ];
    VerifyReport { results }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(fault: Fault) -> VerifyReport {
        run_verify(&VerifyOptions { episodes_per_k: 8, fault, ..VerifyOptions::default() })
    }

    #[test]
    fn clean_build_passes() {
        let r = quick(Fault::None);
        assert!(r.all_passed(), "{}", r.render());
    }

    #[test]
    fn sign_flip_is_caught() {
        let r = quick(Fault::CombineSignFlip);
        assert!(!r.all_passed());
        let failed: Vec<_> = r.results.iter().filter(|p| !p.passed).map(|p| p.name).collect();
        assert_eq!(failed, ["exactness_delayed_csit", "exactness_delayed_time_index"]);
    }
}

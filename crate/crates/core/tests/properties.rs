use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ergodic_ia::baseline::{baseline_rate, decode_baseline, transmit_pair};
use ergodic_ia::channel::{genie_pair, sample_channel, PairedChannels, PairingScale, SystemConfig};
use ergodic_ia::episode::SymbolVector;
use ergodic_ia::metrics::{dof_slope, model_rate};
use ergodic_ia::output_feedback::{run_episode_outputfb, OutputFbOptions};
use ergodic_ia::scheme::{Attempt, Scheme, SchemeRunner};

fn scale_strategy() -> impl Strategy<Value = Complex64> {
    (0.2f64..3.0, -3.1f64..3.1).prop_map(|(r, th)| Complex64::from_polar(r, th))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noiseless_episodes_decode_exactly(k in 3usize..=8, seed in any::<u64>(), stream in 0u64..1000) {
        let config = SystemConfig::noiseless(k, seed).unwrap();
        for scheme in Scheme::ALL {
            match SchemeRunner::genie(scheme).run_attempt(&config, stream).unwrap() {
                Attempt::Completed(s) => {
                    prop_assert!(s.max_decode_error < 1e-8, "{scheme}: {}", s.max_decode_error);
                    if scheme != Scheme::Baseline {
                        prop_assert_eq!((s.ledger.messages_decoded, s.ledger.slots_consumed), (2 * k, k + 2));
                    }
                }
                Attempt::Degenerate(_) => {}
                Attempt::NoPairing => prop_assert!(false, "genie pairing never fails"),
            }
        }
    }

    #[test]
    fn csit_and_time_index_feedback_agree(k in 3usize..=6, seed in any::<u64>(), snr in 0.0f64..60.0) {
        let config = SystemConfig::at_snr_db(k, snr, seed).unwrap();
        let a = SchemeRunner::genie(Scheme::DelayedCsit).run_attempt(&config, 0).unwrap();
        let b = SchemeRunner::genie(Scheme::DelayedTimeIndex).run_attempt(&config, 0).unwrap();
        match (a, b) {
            (Attempt::Completed(x), Attempt::Completed(y)) => prop_assert_eq!(x.decoded, y.decoded),
            (x, y) => prop_assert_eq!(std::mem::discriminant(&x), std::mem::discriminant(&y)),
        }
    }

    /// The decoder's scalar model has the exact mutual information of the
    /// combined statistic: the desired coefficient is `2 H_kk`.
    #[test]
    fn baseline_model_rate_closed_form(seed in any::<u64>(), c in scale_strategy(), snr_db in -10.0f64..60.0) {
        let config = SystemConfig::at_snr_db(3, snr_db, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h1 = sample_channel(3, 0, &mut rng);
        let scale = PairingScale::new(c).unwrap();
        let pair = PairedChannels::new(h1.clone(), genie_pair(&h1, scale), scale).unwrap();
        let x = SymbolVector::sample(3, config.power, &mut rng);
        let r = transmit_pair(&x, &pair, &config, &mut rng).unwrap();
        for k in 0..3 {
            let (_, model, _) = decode_baseline(&r, k).unwrap();
            let g = h1.gain(k, k).norm_sqr();
            let want = 0.5 * (1.0 + 4.0 * g * config.snr() / (1.0 + 1.0 / c.norm_sqr())).log2();
            let got = model_rate(&model).unwrap();
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
            // The printed rate expression carries 2|H_kk|^2: same prelog,
            // constant offset inside the log.
            let printed = baseline_rate(&pair, &config, k).unwrap();
            prop_assert!(printed <= got);
            prop_assert!(got - printed <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn model_rate_monotone_in_power(seed in any::<u64>(), k in 3usize..=5) {
        let config = SystemConfig::at_snr_db(k, 10.0, seed).unwrap();
        let Ok(Some(out)) = run_episode_outputfb(&config, &OutputFbOptions::default(), &mut config.rng(0)) else {
            return Ok(());
        };
        let model = &out.decoded[0].model;
        prop_assert_eq!(model_rate(&model.with_input_power(0.0)).unwrap(), 0.0);
        let mut last = 0.0;
        for p in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let r = model_rate(&model.with_input_power(p)).unwrap();
            prop_assert!(r >= last - 1e-12);
            last = r;
        }
    }
}

#[test]
fn slope_estimate_stable_under_doubling_episodes() {
    let runner = SchemeRunner::genie(Scheme::DelayedCsit);
    let a = dof_slope(&runner, 3, &[40.0, 60.0], 2000, 11).unwrap().slope;
    let b = dof_slope(&runner, 3, &[40.0, 60.0], 4000, 11).unwrap().slope;
    assert!((a / b - 1.0).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn condition_guard_abort_rate_below_tenth_percent() {
    for k in 3..=8 {
        let config = SystemConfig::at_snr_db(k, 30.0, 5).unwrap();
        let b = SchemeRunner::genie(Scheme::DelayedOutputFb).run_batch(&config, 5000).unwrap();
        let rate = b.degenerate_aborts as f64 / b.attempts() as f64;
        assert!(rate < 1e-3, "K={k}: {} aborts in {} attempts", b.degenerate_aborts, b.attempts());
    }
}

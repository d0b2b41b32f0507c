use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ergodic_ia::channel::{PairingScale, QuantizerConfig};
use ergodic_ia::sim::{run_to_file, PairingKind, RunConfig, SchemeChoice, SweepConfig};
use ergodic_ia::verify::{run_verify, Fault, VerifyOptions};
use ergodic_ia::Error;

#[derive(Parser)]
#[command(name = "ergodic-ia", version, about = "Ergodic interference alignment simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write a CSV.
    Run(RunArgs),
    /// Run every `[[run]]` entry of a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the noiseless property suite.
    Verify {
        #[arg(long, default_value_t = 50)]
        episodes: u64,
        #[arg(long, value_enum, default_value_t = FaultArg::None, hide = true)]
        inject_fault: FaultArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    CombineSignFlip,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Genie,
    Search,
}

#[derive(Args)]
struct RunArgs {
    /// baseline, delayed_csit, delayed_time_index, delayed_output_fb or formulas.
    #[arg(long)]
    scheme: SchemeChoice,
    #[arg(long, conflicts_with = "k_range")]
    k: Option<usize>,
    /// Inclusive range `lo:hi`.
    #[arg(long)]
    k_range: Option<String>,
    #[arg(long = "snr-db", allow_negative_numbers = true)]
    snr_db: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, value_enum, default_value_t = PairingArg::Genie)]
    pairing: PairingArg,
    #[arg(long)]
    mag_step: Option<f64>,
    #[arg(long)]
    phase_bins: Option<u32>,
    #[arg(long)]
    mag_cap: Option<f64>,
    /// Accept `H(t2) = c flip(H(t1))` for each listed real scale `c`.
    #[arg(long = "scale", allow_negative_numbers = true)]
    scales: Vec<f64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    delay_slots: u64,
    #[arg(long)]
    normalize_phase2: bool,
}

fn parse_k_range(s: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::InvalidConfig(format!("--k-range expects lo:hi, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if hi < lo {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, Error> {
        let defaults = RunConfig::default();
        let k = match (self.k, &self.k_range) {
            (_, Some(r)) => parse_k_range(r)?,
            (Some(k), None) => vec![k],
            (None, None) => defaults.k.clone(),
        };
        let dq = QuantizerConfig::default();
        let mut quantizer = QuantizerConfig::new(
            self.mag_step.unwrap_or(dq.magnitude_step),
            self.phase_bins.unwrap_or(dq.phase_bins),
            self.mag_cap.unwrap_or(dq.magnitude_cap),
        )?;
        if !self.scales.is_empty() {
            let scales = self
                .scales
                .iter()
                .map(|&c| PairingScale::new(num_complex::Complex64::new(c, 0.0)))
                .collect::<Result<Vec<_>, _>>()?;
            quantizer = quantizer.with_scale_candidates(scales)?;
        }
        Ok(RunConfig {
            scheme: self.scheme,
            k,
            snr_db: self.snr_db,
            episodes: self.episodes,
            pairing: match self.pairing {
                PairingArg::Genie => PairingKind::Genie,
                PairingArg::Search => PairingKind::Search,
            },
            quantizer,
            horizon: self.horizon.unwrap_or(defaults.horizon),
            seed: self.seed,
            noiseless: self.noiseless,
            delay_slots: self.delay_slots,
            normalize_phase2: self.normalize_phase2,
            out: self.out,
        })
    }
}

fn execute(config: &RunConfig) -> Result<(), Error> {
    let output = run_to_file(config)?;
    if config.out.is_none() {
        print!("{}", output.csv);
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run(args) => {
            execute(&args.into_config()?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
            let sweep: SweepConfig = toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            sweep.validate()?;
            for run in &sweep.run {
                execute(run)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { episodes, inject_fault } => {
            let fault = match inject_fault {
                FaultArg::None => Fault::None,
                FaultArg::CombineSignFlip => Fault::CombineSignFlip,
            };
            let report = run_verify(&VerifyOptions { episodes_per_k: episodes, fault, ..VerifyOptions::default() });
            print!("{}", report.render());
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

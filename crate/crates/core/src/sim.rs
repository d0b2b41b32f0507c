//! Experiment configuration, scenario execution and CSV rendering.

use std::fmt::Write as _;
use std::path::PathBuf;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::channel::{QuantizerConfig, SystemConfig};
use crate::episode::PairingMode;
use crate::error::{Error, Result};
use crate::metrics::{figure_data, least_squares_slope, ratio_to_f64};
use crate::scheme::{Scheme, SchemeOptions, SchemeRunner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    Baseline,
    DelayedCsit,
    DelayedTimeIndex,
    DelayedOutputFb,
    Formulas,
}

impl SchemeChoice {
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            SchemeChoice::Baseline => Some(Scheme::Baseline),
            SchemeChoice::DelayedCsit => Some(Scheme::DelayedCsit),
            SchemeChoice::DelayedTimeIndex => Some(Scheme::DelayedTimeIndex),
            SchemeChoice::DelayedOutputFb => Some(Scheme::DelayedOutputFb),
            SchemeChoice::Formulas => None,
        }
    }

    pub fn name(self) -> &'static str {
        self.scheme().map_or("formulas", Scheme::name)
    }
}

impl std::str::FromStr for SchemeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "formulas" {
            return Ok(SchemeChoice::Formulas);
        }
        Ok(match s.parse::<Scheme>()? {
            Scheme::Baseline => SchemeChoice::Baseline,
            Scheme::DelayedCsit => SchemeChoice::DelayedCsit,
            Scheme::DelayedTimeIndex => SchemeChoice::DelayedTimeIndex,
            Scheme::DelayedOutputFb => SchemeChoice::DelayedOutputFb,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingKind {
    Genie,
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: SchemeChoice,
    pub k: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub episodes: usize,
    pub pairing: PairingKind,
    pub quantizer: QuantizerConfig,
    pub horizon: u64,
    pub seed: u64,
    pub noiseless: bool,
    pub delay_slots: u64,
    pub normalize_phase2: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeChoice::DelayedCsit,
            k: vec![3],
            snr_db: Vec::new(),
            episodes: 1000,
            pairing: PairingKind::Genie,
            quantizer: QuantizerConfig::default(),
            horizon: 1 << 24,
            seed: 0,
            noiseless: false,
            delay_slots: 1,
            normalize_phase2: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() {
            return Err(Error::InvalidConfig("no K values given".into()));
        }
        if let Some(k) = self.k.iter().find(|&&k| k < 3) {
            return Err(Error::InvalidConfig(format!("K must be at least 3, got {k}")));
        }
        if self.scheme == SchemeChoice::Formulas {
            return Ok(());
        }
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be positive".into()));
        }
        if !self.noiseless && self.snr_db.is_empty() {
            return Err(Error::InvalidConfig("give at least one --snr-db or --noiseless".into()));
        }
        if let Some(s) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(format!("SNR {s} dB is not finite")));
        }
        if self.delay_slots == 0 {
            return Err(Error::InvalidConfig("delay_slots must be at least 1".into()));
        }
        if self.pairing == PairingKind::Search {
            self.quantizer.validate()?;
            if self.horizon < 2 {
                return Err(Error::InvalidConfig("search horizon must be at least 2".into()));
            }
        }
        Ok(())
    }

    pub fn runner(&self) -> Option<SchemeRunner> {
        let pairing = match self.pairing {
            PairingKind::Genie => PairingMode::genie(),
            PairingKind::Search => PairingMode::search(self.quantizer.clone(), self.horizon),
        };
        let options = SchemeOptions {
            pairing,
            delay_slots: self.delay_slots,
            normalize_phase2: self.normalize_phase2,
            ..SchemeOptions::default()
        };
        self.scheme.scheme().map(|s| SchemeRunner::new(s, options))
    }

    /// `key=value` echo of every field, written into the CSV header comments.
    pub fn echo(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let ks = self.k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let q = &self.quantizer;
        let scales = q.scale_candidates.iter().map(|c| format!("{}{:+}i", c.value().re, c.value().im)).collect::<Vec<_>>().join(",");
        format!(
            "scheme={} k={} snr_db={} episodes={} pairing={} mag_step={} phase_bins={} mag_cap={} scales={} horizon={} seed={} noiseless={} delay_slots={} normalize_phase2={}",
            self.scheme.name(),
            ks,
            list(&self.snr_db),
            self.episodes,
            match self.pairing {
                PairingKind::Genie => "genie",
                PairingKind::Search => "search",
            },
            q.magnitude_step,
            q.phase_bins,
            q.magnitude_cap,
            scales,
            self.horizon,
            self.seed,
            self.noiseless,
            self.delay_slots,
            self.normalize_phase2,
        )
    }
}

/// One `(scheme, K, SNR)` cell, or the per-K summary row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scheme: String,
    pub k: usize,
    pub snr_db: Option<f64>,
    pub mean_sum_rate: Option<f64>,
    pub episodes_completed: usize,
    pub episodes_aborted: usize,
    pub degenerate_aborts: usize,
    pub search_failures: usize,
    pub attempts: usize,
    pub ledger_messages: usize,
    pub ledger_slots: usize,
    pub max_decode_error: f64,
    pub slope: Option<f64>,
    pub formula: Option<f64>,
    pub summary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub csv: String,
}

pub const RESULT_HEADER: &str = "scheme,k,snr_db,mean_sum_rate,episodes_completed,episodes_aborted,degenerate_aborts,search_failures,attempts,ledger,max_decode_error,slope,formula";
pub const FORMULA_HEADER: &str = "k,proposed,retro_csit,retro_outputfb,baseline,proposed_exact,retro_csit_exact,retro_outputfb_exact,baseline_exact";

/// Twelve significant digits, plain decimal where that stays readable.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..=15).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.11e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

fn exact(r: Ratio<i64>) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn render_rows(rows: &[ResultRow], out: &mut String) {
    out.push_str(RESULT_HEADER);
    out.push('\n');
    for r in rows {
        let ledger = if r.ledger_slots == 0 { String::new() } else { format!("{}/{}", r.ledger_messages, r.ledger_slots) };
        let snr = match (r.snr_db, r.summary) {
            (_, true) => "summary".into(),
            (Some(s), false) => fmt_sig(s),
            (None, false) => "noiseless".into(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.k,
            snr,
            opt(r.mean_sum_rate),
            r.episodes_completed,
            r.episodes_aborted,
            r.degenerate_aborts,
            r.search_failures,
            r.attempts,
            ledger,
            fmt_sig(r.max_decode_error),
            opt(r.slope),
            opt(r.formula),
        );
    }
}

fn formula_csv(ks: &[usize], out: &mut String) -> Result<()> {
    out.push_str(FORMULA_HEADER);
    out.push('\n');
    for &k in ks {
        let row = &figure_data(k as i64, k as i64)?[0];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            k,
            fmt_sig(ratio_to_f64(row.proposed)),
            fmt_sig(ratio_to_f64(row.retro_csit)),
            fmt_sig(ratio_to_f64(row.retro_outputfb)),
            fmt_sig(ratio_to_f64(row.baseline)),
            exact(row.proposed),
            exact(row.retro_csit),
            exact(row.retro_outputfb),
            exact(row.baseline),
        );
    }
    Ok(())
}

/// Executes a validated configuration. Output depends only on the config.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut csv = String::new();
    csv.push_str("# ergodic-ia run\n");
    let _ = writeln!(csv, "# {}", config.echo());
    let Some(runner) = config.runner() else {
        formula_csv(&config.k, &mut csv)?;
        return Ok(RunOutput { rows: Vec::new(), csv });
    };
    let mut rows = Vec::new();
    for &k in &config.k {
        let formula = ratio_to_f64(runner.scheme.formula(k)?);
        let cells: Vec<Option<f64>> =
            if config.noiseless { vec![None] } else { config.snr_db.iter().copied().map(Some).collect() };
        let first = rows.len();
        for snr_db in cells {
            let system = match snr_db {
                Some(s) => SystemConfig::at_snr_db(k, s, config.seed)?,
                None => SystemConfig::noiseless(k, config.seed)?,
            };
            let batch = runner.run_batch(&system, config.episodes)?;
            let ledger = batch.ledger.ok_or_else(|| Error::InvalidConfig("episodes disagree on the ledger".into()))?;
            rows.push(ResultRow {
                scheme: runner.scheme.name().into(),
                k,
                snr_db,
                mean_sum_rate: batch.mean_sum_rate,
                episodes_completed: batch.completed(),
                episodes_aborted: batch.aborted(),
                degenerate_aborts: batch.degenerate_aborts,
                search_failures: batch.no_pairing,
                attempts: batch.attempts(),
                ledger_messages: ledger.messages_decoded,
                ledger_slots: ledger.slots_consumed,
                max_decode_error: batch.max_decode_error,
                slope: None,
                formula: None,
                summary: false,
            });
        }
        let cells = &rows[first..];
        let xs: Vec<f64> = cells.iter().filter_map(|r| r.snr_db).map(|s| s / (10.0 * 2f64.log10())).collect();
        let ys: Vec<f64> = cells.iter().filter_map(|r| r.mean_sum_rate).collect();
        let slope = if xs.len() >= 2 && xs.len() == ys.len() { least_squares_slope(&xs, &ys).ok() } else { None };
        let summary = ResultRow {
            scheme: runner.scheme.name().into(),
            k,
            snr_db: None,
            mean_sum_rate: None,
            episodes_completed: cells.iter().map(|r| r.episodes_completed).sum(),
            episodes_aborted: cells.iter().map(|r| r.episodes_aborted).sum(),
            degenerate_aborts: cells.iter().map(|r| r.degenerate_aborts).sum(),
            search_failures: cells.iter().map(|r| r.search_failures).sum(),
            attempts: cells.iter().map(|r| r.attempts).sum(),
            ledger_messages: cells[0].ledger_messages,
            ledger_slots: cells[0].ledger_slots,
            max_decode_error: cells.iter().map(|r| r.max_decode_error).fold(0.0, f64::max),
            slope,
            formula: Some(formula),
            summary: true,
        };
        rows.push(summary);
    }
    render_rows(&rows, &mut csv);
    Ok(RunOutput { rows, csv })
}

/// Runs and writes the CSV to `config.out` when set.
pub fn run_to_file(config: &RunConfig) -> Result<RunOutput> {
    let output = run(config)?;
    if let Some(path) = &config.out {
        std::fs::write(path, &output.csv).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(output)
}

/// Declarative list of runs, e.g. parsed from a TOML `[[run]]` array.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub run: Vec<RunConfig>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run.is_empty() {
            return Err(Error::InvalidConfig("sweep has no runs".into()));
        }
        for (i, r) in self.run.iter().enumerate() {
            if r.out.is_none() {
                return Err(Error::InvalidConfig(format!("sweep run {i} has no out path")));
            }
            r.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_sig(1.2), "1.20000000000");
        assert_eq!(fmt_sig(1.125), "1.12500000000");
        assert_eq!(fmt_sig(123.456), "123.456000000");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(2.5e-12), "2.50000000000e-12");
    }

    #[test]
    fn formulas_table_rows() {
        let config = RunConfig { scheme: SchemeChoice::Formulas, k: (3..=50).collect(), ..RunConfig::default() };
        let out = run(&config).unwrap();
        let data: Vec<&str> = out.csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data[0], FORMULA_HEADER);
        assert_eq!(data.len(), 49);
        assert!(data[1].starts_with("3,1.20000000000,1.12500000000,1.20000000000,1.50000000000,6/5,9/8,6/5,3/2"));
    }

    #[test]
    fn csv_has_cells_and_summary() {
        let config = RunConfig {
            scheme: SchemeChoice::DelayedCsit,
            snr_db: vec![20.0, 30.0],
            episodes: 50,
            seed: 4,
            ..RunConfig::default()
        };
        let out = run(&config).unwrap();
        assert_eq!(out.rows.len(), 3);
        let summary = &out.rows[2];
        assert!(summary.slope.unwrap().is_finite());
        assert_eq!(summary.formula, Some(1.2));
        for r in &out.rows {
            assert_eq!(r.episodes_completed + r.episodes_aborted, r.attempts);
        }
        assert_eq!(out.csv.lines().last().unwrap().split(',').nth(2), Some("summary"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = RunConfig { snr_db: vec![10.0], ..RunConfig::default() };
        assert!(RunConfig { k: vec![2], ..base.clone() }.validate().is_err());
        assert!(RunConfig { episodes: 0, ..base.clone() }.validate().is_err());
        assert!(RunConfig { snr_db: vec![], ..base.clone() }.validate().is_err());
        assert!(RunConfig { delay_slots: 0, ..base.clone() }.validate().is_err());
        assert!(RunConfig { snr_db: vec![], noiseless: true, ..base }.validate().is_ok());
    }

    #[test]
    fn choice_parses() {
        assert_eq!("formulas".parse::<SchemeChoice>().unwrap(), SchemeChoice::Formulas);
        assert_eq!("delayed_output_fb".parse::<SchemeChoice>().unwrap(), SchemeChoice::DelayedOutputFb);
        assert!("bogus".parse::<SchemeChoice>().is_err());
    }
}

//! K-user fading channel: i.i.d. Rayleigh draws, complementary pairs, and the
//! quantized search that finds them in a stream.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum `|H11(t1)|` for estimating the pairing scale.
pub const SCALE_ESTIMATE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_users: usize,
    /// Per-symbol transmit power `P` (linear).
    pub power: f64,
    /// Noise variance `N0` (linear). Zero selects noiseless verification.
    pub noise_variance: f64,
    pub rng_seed: u64,
}

impl SystemConfig {
    pub fn new(num_users: usize, power: f64, noise_variance: f64, rng_seed: u64) -> Result<Self> {
        let config = Self { num_users, power, noise_variance, rng_seed };
        config.validate()?;
        Ok(config)
    }

    /// Unit noise and `P = 10^(snr_db / 10)`.
    pub fn at_snr_db(num_users: usize, snr_db: f64, rng_seed: u64) -> Result<Self> {
        Self::new(num_users, 10f64.powf(snr_db / 10.0), 1.0, rng_seed)
    }

    pub fn noiseless(num_users: usize, rng_seed: u64) -> Result<Self> {
        Self::new(num_users, 1.0, 0.0, rng_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users < 3 {
            return Err(Error::InvalidConfig(format!(
                "num_users must be at least 3, got {}",
                self.num_users
            )));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidConfig(format!("power must be positive, got {}", self.power)));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// `P / N0`; infinite in noiseless mode.
    pub fn snr(&self) -> f64 {
        self.power / self.noise_variance
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_variance == 0.0
    }

    /// Independent generator for substream `stream` of this seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(stream);
        rng
    }
}

/// One draw of `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `K x K` channel at one slot; entry `(j, i)` is the gain from transmitter
/// `i` to receiver `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    entries: DMatrix<Complex64>,
    time_index: u64,
}

impl ChannelMatrix {
    pub fn new(entries: DMatrix<Complex64>, time_index: u64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension(format!(
                "channel must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidConfig("channel entries must be finite".into()));
        }
        Ok(Self { entries, time_index })
    }

    pub fn from_fn(k: usize, time_index: u64, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self { entries: DMatrix::from_fn(k, k, f), time_index }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn time_index(&self) -> u64 {
        self.time_index
    }

    pub fn with_time_index(mut self, time_index: u64) -> Self {
        self.time_index = time_index;
        self
    }

    /// Gain from transmitter `tx` to receiver `rx`.
    pub fn gain(&self, rx: usize, tx: usize) -> Complex64 {
        self.entries[(rx, tx)]
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Negate every off-diagonal entry.
    pub fn flip(&self) -> ChannelMatrix {
        let k = self.dim();
        ChannelMatrix::from_fn(k, self.time_index, |r, c| {
            if r == c {
                self.entries[(r, c)]
            } else {
                -self.entries[(r, c)]
            }
        })
    }

    pub fn scaled(&self, c: Complex64) -> ChannelMatrix {
        ChannelMatrix { entries: self.entries.map(|z| z * c), time_index: self.time_index }
    }

    pub fn max_abs_diff(&self, other: &ChannelMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// The complex constant `c(t2)` relating a complementary pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingScale(Complex64);

impl PairingScale {
    pub fn new(value: Complex64) -> Result<Self> {
        if value.norm() > 0.0 && value.re.is_finite() && value.im.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::ZeroScale)
        }
    }

    pub fn one() -> Self {
        Self(Complex64::new(1.0, 0.0))
    }

    pub fn value(&self) -> Complex64 {
        self.0
    }
}

impl Default for PairingScale {
    fn default() -> Self {
        Self::one()
    }
}

/// Two slots whose channels satisfy `H(t2) = c * flip(H(t1))`, exactly for
/// genie pairs and up to quantization residual for searched ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedChannels {
    pub h1: ChannelMatrix,
    pub h2: ChannelMatrix,
    pub scale: PairingScale,
    pub t1: u64,
    pub t2: u64,
}

impl PairedChannels {
    pub fn new(h1: ChannelMatrix, h2: ChannelMatrix, scale: PairingScale) -> Result<Self> {
        if h1.dim() != h2.dim() {
            return Err(Error::Dimension("paired channels differ in size".into()));
        }
        let (t1, t2) = (h1.time_index(), h2.time_index());
        if t2 <= t1 {
            return Err(Error::InvalidConfig(format!("pairing needs t1 < t2, got {t1}, {t2}")));
        }
        Ok(Self { h1, h2, scale, t1, t2 })
    }

    pub fn num_users(&self) -> usize {
        self.h1.dim()
    }

    /// Largest entry of `|H(t2) - c * flip(H(t1))|`.
    pub fn residual(&self) -> f64 {
        self.h2.max_abs_diff(&self.h1.flip().scaled(self.scale.value()))
    }
}

pub fn sample_channel<R: Rng + ?Sized>(num_users: usize, time_index: u64, rng: &mut R) -> ChannelMatrix {
    ChannelMatrix::from_fn(num_users, time_index, |_, _| complex_gaussian(rng, 1.0))
}

/// `H(t2)` constructed from `H(t1)`: diagonal scaled by `c`, off-diagonal by `-c`.
/// The result sits one slot after `h1`.
pub fn genie_pair(h1: &ChannelMatrix, scale: PairingScale) -> ChannelMatrix {
    h1.flip().scaled(scale.value()).with_time_index(h1.time_index() + 1)
}

pub fn is_complementary_pair(h1: &ChannelMatrix, h2: &ChannelMatrix, tolerance: f64) -> Option<PairingScale> {
    is_complementary_pair_with_floor(h1, h2, tolerance, SCALE_ESTIMATE_FLOOR)
}

/// Estimates `c` from the `(1,1)` entries and accepts it if every entry of
/// `H(t2) - c * flip(H(t1))` is within `tolerance` (plus a few ulps of the
/// entries so that `tolerance = 0` accepts constructed pairs).
pub fn is_complementary_pair_with_floor(
    h1: &ChannelMatrix,
    h2: &ChannelMatrix,
    tolerance: f64,
    floor: f64,
) -> Option<PairingScale> {
    if h1.dim() != h2.dim() || tolerance < 0.0 {
        return None;
    }
    let anchor = h1.gain(0, 0);
    if anchor.norm() < floor {
        return None;
    }
    let scale = PairingScale::new(h2.gain(0, 0) / anchor).ok()?;
    let expected = h1.flip().scaled(scale.value());
    let slack = 8.0 * f64::EPSILON * h2.max_abs().max(expected.max_abs());
    (h2.max_abs_diff(&expected) <= tolerance + slack).then_some(scale)
}

/// Polar grid used to make pairing events occur with nonzero probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub magnitude_step: f64,
    pub phase_bins: u32,
    pub magnitude_cap: f64,
    pub scale_candidates: Vec<PairingScale>,
}

impl QuantizerConfig {
    pub fn new(magnitude_step: f64, phase_bins: u32, magnitude_cap: f64) -> Result<Self> {
        let q = Self { magnitude_step, phase_bins, magnitude_cap, scale_candidates: vec![PairingScale::one()] };
        q.validate()?;
        Ok(q)
    }

    pub fn with_scale_candidates(mut self, scales: Vec<PairingScale>) -> Result<Self> {
        self.scale_candidates = scales;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude_step > 0.0 && self.magnitude_step.is_finite()) {
            return Err(Error::InvalidConfig("magnitude_step must be positive".into()));
        }
        if self.phase_bins < 4 {
            return Err(Error::InvalidConfig("phase_bins must be at least 4".into()));
        }
        if !(self.magnitude_cap > self.magnitude_step && self.magnitude_cap.is_finite()) {
            return Err(Error::InvalidConfig("magnitude_cap must exceed magnitude_step".into()));
        }
        if self.scale_candidates.is_empty() {
            return Err(Error::InvalidConfig("at least one scale candidate is required".into()));
        }
        Ok(())
    }

    /// Worst-case entry displacement for entries at or under the cap.
    pub fn displacement_bound(&self) -> f64 {
        self.magnitude_step / 2.0 + self.magnitude_cap * PI / self.phase_bins as f64
    }
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            magnitude_step: 1.0,
            phase_bins: 4,
            magnitude_cap: 2.0,
            scale_candidates: vec![PairingScale::one()],
        }
    }
}

/// Exact identity of a quantized matrix: one grid-cell code per entry,
/// column-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedKey(Box<[u32]>);

/// A [`QuantizerConfig`] with its magnitude levels laid out.
#[derive(Debug, Clone)]
pub struct Quantizer {
    config: QuantizerConfig,
    /// `0, s, 2s, ..., cap`.
    levels: Vec<f64>,
}

impl Quantizer {
    pub fn new(config: QuantizerConfig) -> Result<Self> {
        config.validate()?;
        let step = config.magnitude_step;
        let cap = config.magnitude_cap;
        let mut levels: Vec<f64> = (0..).map(|i| i as f64 * step).take_while(|&m| m < cap).collect();
        if cap - levels.last().copied().unwrap_or(0.0) > 1e-12 * cap {
            levels.push(cap);
        } else if let Some(last) = levels.last_mut() {
            *last = cap;
        }
        Ok(Self { config, levels })
    }

    pub fn config(&self) -> &QuantizerConfig {
        &self.config
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    fn bins(&self) -> u32 {
        self.config.phase_bins
    }

    fn bin_width(&self) -> f64 {
        2.0 * PI / self.bins() as f64
    }

    fn nearest_level(&self, r: f64) -> usize {
        let last = self.levels.len() - 1;
        if r >= self.config.magnitude_cap {
            return last;
        }
        let i = ((r / self.config.magnitude_step).round() as usize).min(last);
        let j = (i + 1).min(last);
        if (self.levels[j] - r).abs() < (self.levels[i] - r).abs() {
            j
        } else {
            i
        }
    }

    /// Grid code and grid point for one entry.
    pub fn quantize_entry(&self, z: Complex64) -> (u32, Complex64) {
        let level = self.nearest_level(z.norm());
        if level == 0 {
            return (0, Complex64::new(0.0, 0.0));
        }
        let bins = self.bins() as i64;
        let bin = ((z.arg() / self.bin_width()).round() as i64).rem_euclid(bins) as u32;
        (self.code(level, bin), self.point(level, bin))
    }

    fn code(&self, level: usize, bin: u32) -> u32 {
        if level == 0 {
            0
        } else {
            1 + (level as u32 - 1) * self.bins() + bin
        }
    }

    fn point(&self, level: usize, bin: u32) -> Complex64 {
        Complex64::from_polar(self.levels[level], bin as f64 * self.bin_width())
    }

    pub fn quantize(&self, h: &ChannelMatrix) -> ChannelMatrix {
        h.map_entries(|z| self.quantize_entry(z).1)
    }

    pub fn key(&self, h: &ChannelMatrix) -> QuantizedKey {
        QuantizedKey(h.entries().iter().map(|&z| self.quantize_entry(z).0).collect())
    }

    /// Key a previous slot must have for `h` to complete a pair with scale `c`,
    /// i.e. the key of `flip(quantize(h)) / c` when that lies on the grid.
    fn partner_key(&self, quantized: &ChannelMatrix, scale: PairingScale) -> Option<QuantizedKey> {
        let target = quantized.flip().scaled(scale.value().inv());
        let tol = 1e-9 * (1.0 + self.config.magnitude_cap);
        let mut codes = Vec::with_capacity(target.dim() * target.dim());
        for &w in target.entries().iter() {
            let (code, point) = self.quantize_entry(w);
            if (point - w).norm() > tol {
                return None;
            }
            codes.push(code);
        }
        Some(QuantizedKey(codes.into_boxed_slice()))
    }

    fn partner_keys(&self, h: &ChannelMatrix) -> Vec<(QuantizedKey, PairingScale)> {
        let q = self.quantize(h);
        let mut keys: Vec<(QuantizedKey, PairingScale)> = Vec::new();
        for &c in &self.config.scale_candidates {
            if let Some(key) = self.partner_key(&q, c) {
                if !keys.iter().any(|(k, _)| *k == key) {
                    keys.push((key, c));
                }
            }
        }
        keys
    }

    /// Magnitude interval `[lower, upper)` that quantizes to `level`.
    fn level_interval(&self, level: usize) -> (f64, f64) {
        let lower = if level == 0 { 0.0 } else { 0.5 * (self.levels[level - 1] + self.levels[level]) };
        let upper = if level + 1 == self.levels.len() {
            f64::INFINITY
        } else {
            0.5 * (self.levels[level] + self.levels[level + 1])
        };
        (lower, upper)
    }
}

impl ChannelMatrix {
    fn map_entries(&self, f: impl Fn(Complex64) -> Complex64) -> ChannelMatrix {
        ChannelMatrix { entries: self.entries.map(f), time_index: self.time_index }
    }
}

pub fn quantize(h: &ChannelMatrix, q: &QuantizerConfig) -> Result<ChannelMatrix> {
    Ok(Quantizer::new(q.clone())?.quantize(h))
}

/// Outcome of feeding one slot to a [`PairingSearch`].
#[derive(Debug, Clone)]
pub struct PairFound<T> {
    pub pair: PairedChannels,
    /// Payload stored with the `t1` slot.
    pub earlier: T,
    /// Payload passed in with the `t2` slot.
    pub current: T,
}

/// Streaming pair finder: an exact-key index from quantized matrices to the
/// earliest slot that produced them.
#[derive(Debug, Clone)]
pub struct PairingSearch<T = ()> {
    quantizer: Quantizer,
    first_seen: HashMap<QuantizedKey, (ChannelMatrix, T)>,
}

impl<T> PairingSearch<T> {
    pub fn new(config: QuantizerConfig) -> Result<Self> {
        Ok(Self { quantizer: Quantizer::new(config)?, first_seen: HashMap::new() })
    }

    pub fn quantizer(&self) -> &Quantizer {
        &self.quantizer
    }

    pub fn indexed_slots(&self) -> usize {
        self.first_seen.len()
    }

    /// Checks `h` against the index, then records it if it completed nothing.
    pub fn observe(&mut self, h: ChannelMatrix, payload: T) -> Option<PairFound<T>> {
        for (key, scale) in self.quantizer.partner_keys(&h) {
            if let Some((h1, earlier)) = self.first_seen.remove(&key) {
                let t1 = h1.time_index();
                let t2 = h.time_index();
                let pair = PairedChannels { h1, h2: h, scale, t1, t2 };
                return Some(PairFound { pair, earlier, current: payload });
            }
        }
        let key = self.quantizer.key(&h);
        self.first_seen.entry(key).or_insert((h, payload));
        None
    }
}

/// First `(t1, t2)` in `sequence` whose quantized channels form a
/// complementary pair for one of the candidate scales.
pub fn find_pairing<I>(sequence: I, q: &QuantizerConfig) -> Result<Option<PairedChannels>>
where
    I: IntoIterator<Item = ChannelMatrix>,
{
    let mut search = PairingSearch::new(q.clone())?;
    let mut dim = None;
    for h in sequence {
        if *dim.get_or_insert(h.dim()) != h.dim() {
            return Err(Error::Dimension("channel sequence changes size".into()));
        }
        if let Some(found) = search.observe(h, ()) {
            return Ok(Some(found.pair));
        }
    }
    Ok(None)
}

/// Counts of matching slot pairs in a stream of i.i.d. channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchStatistics {
    pub slots: u64,
    /// Slots that completed at least one pair with an earlier slot.
    pub completing_slots: u64,
    /// Unordered slot pairs `(t1 < t2)` whose quantized channels match.
    pub matched_pairs: u64,
}

impl MatchStatistics {
    pub fn slot_pairs(&self) -> f64 {
        let n = self.slots as f64;
        n * (n - 1.0) / 2.0
    }

    /// Empirical probability that two independent slots form a pair.
    pub fn per_pair_rate(&self) -> f64 {
        self.matched_pairs as f64 / self.slot_pairs()
    }

    pub fn per_slot_rate(&self) -> f64 {
        self.completing_slots as f64 / self.slots as f64
    }
}

/// Scans `slots` fresh channel draws and counts every quantized match.
pub fn measure_match_rate<R: Rng + ?Sized>(
    num_users: usize,
    q: &QuantizerConfig,
    slots: u64,
    rng: &mut R,
) -> Result<MatchStatistics> {
    let quantizer = Quantizer::new(q.clone())?;
    let mut counts: HashMap<QuantizedKey, u64> = HashMap::new();
    let mut stats = MatchStatistics { slots, completing_slots: 0, matched_pairs: 0 };
    for t in 0..slots {
        let h = sample_channel(num_users, t, rng);
        let hits: u64 = quantizer
            .partner_keys(&h)
            .iter()
            .map(|(key, _)| counts.get(key).copied().unwrap_or(0))
            .sum();
        if hits > 0 {
            stats.completing_slots += 1;
            stats.matched_pairs += hits;
        }
        *counts.entry(quantizer.key(&h)).or_insert(0) += 1;
    }
    Ok(stats)
}

/// Draws complementary pairs with scale 1 from the distribution of pairs a
/// [`PairingSearch`] finds, without waiting for them: each entry's grid
/// cell is drawn with probability proportional to `p(cell) * p(partner)`
/// and both channel entries are then drawn from `CN(0,1)` restricted to
/// their cells.
#[derive(Debug, Clone)]
pub struct MatchedPairSampler {
    quantizer: Quantizer,
    /// `(level, bin, weight)` for every cell, normalized weights.
    cells: Vec<(usize, u32, f64)>,
}

impl MatchedPairSampler {
    pub fn new(config: QuantizerConfig) -> Result<Self> {
        let quantizer = Quantizer::new(config)?;
        if quantizer.bins() % 2 != 0 {
            return Err(Error::InvalidConfig(
                "matched-pair sampling needs an even number of phase bins".into(),
            ));
        }
        let bins = quantizer.bins();
        let mut cells = Vec::new();
        for level in 0..quantizer.levels.len() {
            let (lo, hi) = quantizer.level_interval(level);
            let ring = (-lo * lo).exp() - (-hi * hi).exp();
            if level == 0 {
                cells.push((0, 0, ring * ring));
            } else {
                let p = ring / bins as f64;
                cells.extend((0..bins).map(|b| (level, b, p * p)));
            }
        }
        let total: f64 = cells.iter().map(|c| c.2).sum();
        for c in &mut cells {
            c.2 /= total;
        }
        Ok(Self { quantizer, cells })
    }

    pub fn quantizer(&self) -> &Quantizer {
        &self.quantizer
    }

    fn pick_cell<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, u32) {
        let mut u: f64 = rng.random();
        for &(level, bin, w) in &self.cells {
            if u < w {
                return (level, bin);
            }
            u -= w;
        }
        let &(level, bin, _) = self.cells.last().expect("nonempty cell list");
        (level, bin)
    }

    fn sample_in_cell<R: Rng + ?Sized>(&self, level: usize, bin: u32, rng: &mut R) -> Complex64 {
        let (lo, hi) = self.quantizer.level_interval(level);
        let (a, b) = ((-lo * lo).exp(), (-hi * hi).exp());
        let u: f64 = rng.random();
        let r = (-(a - u * (a - b)).ln()).max(0.0).sqrt();
        let width = self.quantizer.bin_width();
        let phase = if level == 0 {
            rng.random::<f64>() * 2.0 * PI
        } else {
            bin as f64 * width + (rng.random::<f64>() - 0.5) * width
        };
        Complex64::from_polar(r, phase)
    }

    /// A matched pair at slots `t1` and `t1 + 1`.
    pub fn sample<R: Rng + ?Sized>(&self, num_users: usize, t1: u64, rng: &mut R) -> PairedChannels {
        let half = self.quantizer.bins() / 2;
        let mut h1 = DMatrix::zeros(num_users, num_users);
        let mut h2 = DMatrix::zeros(num_users, num_users);
        for c in 0..num_users {
            for r in 0..num_users {
                let (level, bin) = self.pick_cell(rng);
                let partner_bin = if r == c || level == 0 { bin } else { (bin + half) % self.quantizer.bins() };
                h1[(r, c)] = self.sample_in_cell(level, bin, rng);
                h2[(r, c)] = self.sample_in_cell(level, partner_bin, rng);
            }
        }
        PairedChannels {
            h1: ChannelMatrix { entries: h1, time_index: t1 },
            h2: ChannelMatrix { entries: h2, time_index: t1 + 1 },
            scale: PairingScale::one(),
            t1,
            t2: t1 + 1,
        }
    }
}

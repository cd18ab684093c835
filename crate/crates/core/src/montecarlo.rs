//! Pulse-level Monte Carlo emulation of the three-party protocol.
//!
//! Slot `k` carries Alice's pulse `a_k` and Bob's pulse `b_k`. Both reach the
//! time-basis detectors together (D1 for Alice's light, D2 for Bob's), while
//! the interferometer sees the merged train `a_1 b_1 a_2 b_2 ...` at period T:
//!
//! * pair `(a_k, b_k)` interferes at `i = 2kT`; constructive port D4,
//! * pair `(b_k, a_{k+1})` interferes at `i = (2k+1)T`; constructive port D3.
//!
//! Only the `2kT` interference slot coincides with time-basis slot `k`, so the
//! cross-basis discard looks at that pair alone.
//!
//! Slots are simulated in fixed-size chunks. Chunk `c` owns ChaCha stream `c`
//! and draws all of its intensities before anything else, so the first
//! intensity of chunk `c + 1` can be recovered without simulating it. Chunk
//! results are merged in index order; the output is independent of the rayon
//! pool size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyrate::{conference_key_rate, RateInputs};
use crate::model::{
    channel_efficiency, interference_efficiency, ExperimentParams, FreeParams, RateBreakdown,
};

const CHUNK_SLOTS: u64 = 1 << 16;
const COW_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("n_slots must be at least 1")]
    NoSlots,
    #[error("n_slots = {0} overflows the event counters")]
    TooManySlots(u64),
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    KeyBit0,
    KeyBit1,
    RandomTie,
    DiscardedCrossBasis,
    VisibilitySample,
    NoClick,
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    /// 1-based slot number.
    pub index: u64,
    pub alice_intensity: f64,
    pub bob_intensity: f64,
    pub d1_click: bool,
    pub d2_click: bool,
    /// Interference ports at `2kT`, pair `(a_k, b_k)`.
    pub d3_click: bool,
    pub d4_click: bool,
    /// Interference ports at `(2k+1)T`, pair `(b_k, a_{k+1})`.
    pub d3_click_next: bool,
    pub d4_click_next: bool,
    pub charlie_bit: Option<bool>,
    pub disposition: Disposition,
}

/// Intensity-pair categories, indexed `[alice_on][bob_on]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairCategory {
    Vacuum,
    BobOnly,
    AliceOnly,
    Both,
}

impl PairCategory {
    pub const ALL: [PairCategory; 4] = [
        PairCategory::Vacuum,
        PairCategory::BobOnly,
        PairCategory::AliceOnly,
        PairCategory::Both,
    ];

    fn index(alice_on: bool, bob_on: bool) -> usize {
        (alice_on as usize) << 1 | bob_on as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub sent: u64,
    /// Slots with at least one time-basis click.
    pub clicked: u64,
    /// Clicked slots that survived the cross-basis discard.
    pub sifted: u64,
    /// Sifted slots where Charlie's bit differs from Alice's.
    pub erroneous: u64,
}

impl CategoryCounts {
    fn add(&mut self, other: &Self) {
        self.sent += other.sent;
        self.clicked += other.clicked;
        self.sifted += other.sifted;
        self.erroneous += other.erroneous;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispositionCounts {
    pub key_bit_0: u64,
    pub key_bit_1: u64,
    pub random_tie: u64,
    pub discarded_cross_basis: u64,
    pub visibility_sample: u64,
    pub no_click: u64,
}

impl DispositionCounts {
    fn record(&mut self, d: Disposition) {
        match d {
            Disposition::KeyBit0 => self.key_bit_0 += 1,
            Disposition::KeyBit1 => self.key_bit_1 += 1,
            Disposition::RandomTie => self.random_tie += 1,
            Disposition::DiscardedCrossBasis => self.discarded_cross_basis += 1,
            Disposition::VisibilitySample => self.visibility_sample += 1,
            Disposition::NoClick => self.no_click += 1,
        }
    }

    fn add(&mut self, o: &Self) {
        self.key_bit_0 += o.key_bit_0;
        self.key_bit_1 += o.key_bit_1;
        self.random_tie += o.random_tie;
        self.discarded_cross_basis += o.discarded_cross_basis;
        self.visibility_sample += o.visibility_sample;
        self.no_click += o.no_click;
    }

    pub fn total(&self) -> u64 {
        self.key_bit_0
            + self.key_bit_1
            + self.random_tie
            + self.discarded_cross_basis
            + self.visibility_sample
            + self.no_click
    }
}

// A zero or full count has zero binomial spread; one pseudo-count keeps the
// error near 1/n so a 3σ comparison stays meaningful.
fn binomial_std_error(hits: u64, trials: u64) -> f64 {
    let n = trials as f64;
    let p = if hits == 0 || hits == trials {
        1.0 / (n + 1.0)
    } else {
        hits as f64 / n
    };
    (p * (1.0 - p) / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    fn proportion(hits: u64, trials: u64) -> Option<Self> {
        if trials == 0 {
            return None;
        }
        Some(Self {
            value: hits as f64 / trials as f64,
            std_error: binomial_std_error(hits, trials),
        })
    }

    fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

/// Empirical counterparts of the analytic model's quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEstimates {
    pub q_0a: Estimate,
    pub q_a0: Estimate,
    pub q_00: Estimate,
    pub q_aa: Estimate,
    pub e_t: Estimate,
    pub visibility: Estimate,
    pub q_mu: Estimate,
    pub e_mu: Estimate,
}

impl EmpiricalEstimates {
    /// Estimates equal to the analytic expectations, with zero spread.
    pub fn from_breakdown(b: &RateBreakdown) -> Self {
        Self {
            q_0a: Estimate::exact(b.q_0a),
            q_a0: Estimate::exact(b.q_a0),
            q_00: Estimate::exact(b.q_00),
            q_aa: Estimate::exact(b.q_aa),
            e_t: Estimate::exact(b.e_t),
            visibility: Estimate::exact(b.visibility),
            q_mu: Estimate::exact(b.q_mu),
            e_mu: Estimate::exact(b.e_mu),
        }
    }

    pub fn rate_inputs(&self, fp: &FreeParams, ep: &ExperimentParams) -> RateInputs {
        RateInputs {
            send_probability: fp.send_probability(),
            intensity: fp.intensity(),
            q_0a: self.q_0a.value,
            q_a0: self.q_a0.value,
            e_t: self.e_t.value,
            visibility: self.visibility.value,
            q_mu: self.q_mu.value,
            e_mu: self.e_mu.value,
            error_correction_efficiency: ep.error_correction_efficiency(),
        }
    }
}

/// Counters accumulated over a protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptStats {
    pub free: FreeParams,
    pub n_slots: u64,
    /// Indexed like [`PairCategory::ALL`].
    pub categories: [CategoryCounts; 4],
    pub dispositions: DispositionCounts,
    /// Evaluated |α⟩|α⟩ neighbouring pairs.
    pub visibility_pairs: u64,
    pub dt_count: u64,
    pub df_count: u64,
    /// Every D3/D4 click, evaluated or not.
    pub interference_clicks: u64,
    pub sifted_len: u64,
    pub alice_errors: u64,
    pub bob_errors: u64,
    #[serde(skip)]
    pub alice_key: Vec<bool>,
    #[serde(skip)]
    pub bob_key: Vec<bool>,
    #[serde(skip)]
    pub charlie_key: Vec<bool>,
}

impl TranscriptStats {
    fn empty(free: FreeParams) -> Self {
        Self {
            free,
            n_slots: 0,
            categories: [CategoryCounts::default(); 4],
            dispositions: DispositionCounts::default(),
            visibility_pairs: 0,
            dt_count: 0,
            df_count: 0,
            interference_clicks: 0,
            sifted_len: 0,
            alice_errors: 0,
            bob_errors: 0,
            alice_key: Vec::new(),
            bob_key: Vec::new(),
            charlie_key: Vec::new(),
        }
    }

    fn merge(&mut self, other: ChunkResult) {
        let o = other.stats;
        self.n_slots += o.n_slots;
        for (a, b) in self.categories.iter_mut().zip(&o.categories) {
            a.add(b);
        }
        self.dispositions.add(&o.dispositions);
        self.visibility_pairs += o.visibility_pairs;
        self.dt_count += o.dt_count;
        self.df_count += o.df_count;
        self.interference_clicks += o.interference_clicks;
        self.sifted_len += o.sifted_len;
        self.alice_errors += o.alice_errors;
        self.bob_errors += o.bob_errors;
        self.alice_key.extend(o.alice_key);
        self.bob_key.extend(o.bob_key);
        self.charlie_key.extend(o.charlie_key);
    }

    pub fn category(&self, c: PairCategory) -> &CategoryCounts {
        &self.categories[c as usize]
    }

    /// `V = (dt − df)/(dt + df)`.
    pub fn visibility(&self) -> Option<f64> {
        let total = self.dt_count + self.df_count;
        if total == 0 {
            return None;
        }
        Some((self.dt_count as f64 - self.df_count as f64) / total as f64)
    }

    pub fn estimates(&self) -> Result<EmpiricalEstimates, SimError> {
        let gain = |c: PairCategory, what| {
            let k = self.category(c);
            Estimate::proportion(k.clicked, k.sent).ok_or(SimError::InsufficientStatistics(what))
        };
        let encode = [PairCategory::BobOnly, PairCategory::AliceOnly];
        let errs: u64 = encode.iter().map(|&c| self.category(c).erroneous).sum();
        let sifted: u64 = encode.iter().map(|&c| self.category(c).sifted).sum();
        let e_t = Estimate::proportion(errs, sifted).ok_or(SimError::InsufficientStatistics(
            "no sifted 0α/α0 detections",
        ))?;

        let v = self.visibility().ok_or(SimError::InsufficientStatistics(
            "no interference clicks on |α⟩|α⟩ pairs",
        ))?;
        let total = self.dt_count + self.df_count;
        let visibility = Estimate {
            value: v,
            std_error: 2.0 * binomial_std_error(self.df_count, total),
        };

        let clicks: u64 = self.categories.iter().map(|c| c.clicked).sum();
        let q_mu = Estimate::proportion(clicks, self.n_slots)
            .ok_or(SimError::InsufficientStatistics("no slots"))?;
        let e_mu = Estimate::proportion(self.alice_errors, self.sifted_len)
            .ok_or(SimError::InsufficientStatistics("empty sifted key"))?;

        Ok(EmpiricalEstimates {
            q_0a: gain(PairCategory::BobOnly, "no 0α pairs sent")?,
            q_a0: gain(PairCategory::AliceOnly, "no α0 pairs sent")?,
            q_00: gain(PairCategory::Vacuum, "no 00 pairs sent")?,
            q_aa: gain(PairCategory::Both, "no αα pairs sent")?,
            e_t,
            visibility,
            q_mu,
            e_mu,
        })
    }
}

/// Precomputed no-click probabilities.
#[derive(Debug, Clone, Copy)]
struct Detectors {
    t: f64,
    intensity: f64,
    /// `[alice_on][bob_on]` → (D1, D2) no-click probability.
    time: [[(f64, f64); 2]; 2],
    /// Number of lit pulses in the pair → (constructive, destructive) port.
    ports: [(f64, f64); 3],
}

impl Detectors {
    fn new(fp: &FreeParams, ep: &ExperimentParams) -> Self {
        let eta = channel_efficiency(ep);
        let eta_v = interference_efficiency(ep);
        let mu = fp.intensity();
        let pd = ep.dark_count_rate();
        let ed = ep.time_misalignment();
        let edp = ep.interference_misalignment();
        let silent = |mean: f64| (1.0 - pd) * (-mean).exp();

        let mut time = [[(0.0, 0.0); 2]; 2];
        for (a, row) in time.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                let ia = a as f64 * mu;
                let ib = b as f64 * mu;
                let d1 = eta * (ia * (1.0 - ed) + ib * ed);
                let d2 = eta * (ib * (1.0 - ed) + ia * ed);
                *cell = (silent(d1), silent(d2));
            }
        }
        let one = mu * eta_v / 2.0;
        let two = 2.0 * mu * eta_v;
        let ports = [
            (silent(0.0), silent(0.0)),
            (silent(one), silent(one)),
            (silent(two * (1.0 - edp)), silent(two * edp)),
        ];
        Self {
            t: fp.send_probability(),
            intensity: mu,
            time,
            ports,
        }
    }

    /// Draws (constructive, destructive) port clicks for a neighbouring pair.
    fn interfere(&self, rng: &mut ChaCha8Rng, first_on: bool, second_on: bool) -> (bool, bool) {
        let (c, d) = self.ports[first_on as usize + second_on as usize];
        (rng.random::<f64>() >= c, rng.random::<f64>() >= d)
    }
}

fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_slots(n_slots: u64) -> Result<u64, SimError> {
    if n_slots == 0 {
        return Err(SimError::NoSlots);
    }
    // 2N interference slots must fit the counters and usize indexing.
    if n_slots > u64::MAX / 2 || usize::try_from(n_slots).is_err() {
        return Err(SimError::TooManySlots(n_slots));
    }
    Ok(n_slots.div_ceil(CHUNK_SLOTS))
}

struct ChunkResult {
    stats: TranscriptStats,
    outcomes: Vec<SlotOutcome>,
}

fn simulate_chunk(
    det: &Detectors,
    free: FreeParams,
    n_slots: u64,
    seed: u64,
    chunk: u64,
    record: bool,
) -> ChunkResult {
    let start = chunk * CHUNK_SLOTS;
    let end = (start + CHUNK_SLOTS).min(n_slots);
    let len = (end - start) as usize;
    let mut rng = chunk_rng(seed, chunk);

    let mut alice = Vec::with_capacity(len + 1);
    let mut bob = Vec::with_capacity(len);
    for _ in 0..len {
        alice.push(rng.random::<f64>() < det.t);
        bob.push(rng.random::<f64>() < det.t);
    }
    if end < n_slots {
        let mut next = chunk_rng(seed, chunk + 1);
        alice.push(next.random::<f64>() < det.t);
    }

    let mut stats = TranscriptStats::empty(free);
    stats.n_slots = len as u64;
    let mut outcomes = Vec::with_capacity(if record { len } else { 0 });

    for s in 0..len {
        let (a, b) = (alice[s], bob[s]);
        let category = &mut stats.categories[PairCategory::index(a, b)];
        category.sent += 1;

        let (no_d1, no_d2) = det.time[a as usize][b as usize];
        let d1 = rng.random::<f64>() >= no_d1;
        let d2 = rng.random::<f64>() >= no_d2;

        let (d4, d3) = det.interfere(&mut rng, a, b);
        let next = alice.get(s + 1).copied();
        let (d3_next, d4_next) = match next {
            Some(a_next) => det.interfere(&mut rng, b, a_next),
            None => (false, false),
        };
        stats.interference_clicks += d3 as u64 + d4 as u64 + d3_next as u64 + d4_next as u64;

        let time_click = d1 || d2;
        let discarded = time_click && (d3 || d4);
        let mut charlie_bit = None;
        let disposition = if time_click {
            category.clicked += 1;
            if discarded {
                Disposition::DiscardedCrossBasis
            } else {
                let (bit, disp) = match (d1, d2) {
                    (true, false) => (true, Disposition::KeyBit1),
                    (false, true) => (false, Disposition::KeyBit0),
                    _ => (rng.random::<bool>(), Disposition::RandomTie),
                };
                charlie_bit = Some(bit);
                category.sifted += 1;
                if bit != a {
                    category.erroneous += 1;
                }
                // Bob flips his logic bit: |α⟩ carries 0.
                let bob_bit = !b;
                stats.sifted_len += 1;
                stats.alice_errors += (bit != a) as u64;
                stats.bob_errors += (bit != bob_bit) as u64;
                stats.alice_key.push(a);
                stats.bob_key.push(bob_bit);
                stats.charlie_key.push(bit);
                disp
            }
        } else {
            Disposition::NoClick
        };

        let mut sampled = false;
        if a && b && !discarded {
            stats.visibility_pairs += 1;
            stats.dt_count += d4 as u64;
            stats.df_count += d3 as u64;
            sampled |= d3 || d4;
        }
        if b && next == Some(true) {
            stats.visibility_pairs += 1;
            stats.dt_count += d3_next as u64;
            stats.df_count += d4_next as u64;
            sampled |= d3_next || d4_next;
        }
        let disposition = if disposition == Disposition::NoClick && sampled {
            Disposition::VisibilitySample
        } else {
            disposition
        };
        stats.dispositions.record(disposition);

        if record {
            outcomes.push(SlotOutcome {
                index: start + s as u64 + 1,
                alice_intensity: if a { det.intensity } else { 0.0 },
                bob_intensity: if b { det.intensity } else { 0.0 },
                d1_click: d1,
                d2_click: d2,
                d3_click: d3,
                d4_click: d4,
                d3_click_next: d3_next,
                d4_click_next: d4_next,
                charlie_bit,
                disposition,
            });
        }
    }
    ChunkResult { stats, outcomes }
}

fn run(
    fp: &FreeParams,
    ep: &ExperimentParams,
    n_slots: u64,
    seed: u64,
    record: bool,
) -> Result<(TranscriptStats, Vec<SlotOutcome>), SimError> {
    let chunks = check_slots(n_slots)?;
    let det = Detectors::new(fp, ep);
    let parts: Vec<ChunkResult> = (0..chunks)
        .into_par_iter()
        .map(|c| simulate_chunk(&det, *fp, n_slots, seed, c, record))
        .collect();
    let mut stats = TranscriptStats::empty(*fp);
    let mut outcomes = Vec::with_capacity(if record { n_slots as usize } else { 0 });
    for mut part in parts {
        outcomes.append(&mut part.outcomes);
        stats.merge(part);
    }
    Ok((stats, outcomes))
}

/// Simulates `n_slots` slots of the protocol.
pub fn run_protocol(
    fp: &FreeParams,
    ep: &ExperimentParams,
    n_slots: u64,
    seed: u64,
) -> Result<TranscriptStats, SimError> {
    run(fp, ep, n_slots, seed, false).map(|(s, _)| s)
}

/// Like [`run_protocol`], also returning every slot's outcome in order.
pub fn run_protocol_recorded(
    fp: &FreeParams,
    ep: &ExperimentParams,
    n_slots: u64,
    seed: u64,
) -> Result<(TranscriptStats, Vec<SlotOutcome>), SimError> {
    run(fp, ep, n_slots, seed, true)
}

/// The conference key rate evaluated on empirical estimates, clamped at zero.
pub fn empirical_key_rate(stats: &TranscriptStats, ep: &ExperimentParams) -> Result<f64, SimError> {
    Ok(empirical_rate_inputs(stats, ep)?.rate())
}

pub fn empirical_rate_inputs(
    stats: &TranscriptStats,
    ep: &ExperimentParams,
) -> Result<RateInputs, SimError> {
    Ok(stats.estimates()?.rate_inputs(&stats.free, ep))
}

/// One empirical-versus-analytic line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub quantity: String,
    pub empirical: f64,
    pub std_error: f64,
    pub analytic: f64,
    /// `(empirical − analytic) / std_error`.
    pub z_score: f64,
    pub within_3_sigma: bool,
}

impl Comparison {
    fn new(quantity: &str, est: Estimate, analytic: f64) -> Self {
        let diff = est.value - analytic;
        let z_score = if est.std_error > 0.0 {
            diff / est.std_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        };
        Self {
            quantity: quantity.to_string(),
            empirical: est.value,
            std_error: est.std_error,
            analytic,
            z_score,
            within_3_sigma: z_score.abs() <= 3.0,
        }
    }
}

/// Compares every empirical estimate with the analytic model at the same parameters.
pub fn compare_with_analytic(
    stats: &TranscriptStats,
    ep: &ExperimentParams,
) -> Result<Vec<Comparison>, SimError> {
    let est = stats.estimates()?;
    let b = conference_key_rate(&stats.free, ep);
    Ok(vec![
        Comparison::new("q_0a", est.q_0a, b.q_0a),
        Comparison::new("q_a0", est.q_a0, b.q_a0),
        Comparison::new("q_00", est.q_00, b.q_00),
        Comparison::new("q_aa", est.q_aa, b.q_aa),
        Comparison::new("e_t", est.e_t, b.e_t),
        Comparison::new("visibility", est.visibility, b.visibility),
        Comparison::new("q_mu", est.q_mu, b.q_mu),
        Comparison::new("e_mu", est.e_mu, b.e_mu),
    ])
}

/// Interference-click statistics on |α⟩|α⟩ neighbouring pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSummary {
    pub pairs: u64,
    pub dt_count: u64,
    pub df_count: u64,
    pub p_dt: f64,
    pub p_df: f64,
    pub visibility: Estimate,
}

impl InterferenceSummary {
    fn from_counts(pairs: u64, dt: u64, df: u64) -> Result<Self, SimError> {
        let clicks = dt + df;
        if pairs == 0 || clicks == 0 {
            return Err(SimError::InsufficientStatistics(
                "no interference clicks on |α⟩|α⟩ pairs",
            ));
        }
        Ok(Self {
            pairs,
            dt_count: dt,
            df_count: df,
            p_dt: dt as f64 / pairs as f64,
            p_df: df as f64 / pairs as f64,
            visibility: Estimate {
                value: (dt as f64 - df as f64) / clicks as f64,
                std_error: 2.0 * binomial_std_error(df, clicks),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldingComparison {
    pub cka: InterferenceSummary,
    pub cow: InterferenceSummary,
    /// `V_cka − V_cow`.
    pub visibility_difference: f64,
    pub combined_std_error: f64,
    pub within_3_sigma: bool,
}

// Two-party COW train: one sender emits both pulses of every two-pulse
// sequence, no phase flip between them, so D3 is always the constructive port.
fn cow_chunk(det: &Detectors, n_slots: u64, seed: u64, chunk: u64) -> (u64, u64, u64) {
    let start = chunk * CHUNK_SLOTS;
    let end = (start + CHUNK_SLOTS).min(n_slots);
    let len = (end - start) as usize;
    let mut rng = chunk_rng(seed, COW_STREAM_BASE | chunk);
    let mut pulses = Vec::with_capacity(2 * len + 1);
    for _ in 0..2 * len {
        pulses.push(rng.random::<f64>() < det.t);
    }
    if end < n_slots {
        let mut next = chunk_rng(seed, COW_STREAM_BASE | (chunk + 1));
        pulses.push(next.random::<f64>() < det.t);
    }
    let (mut pairs, mut dt, mut df) = (0, 0, 0);
    for w in pulses.windows(2) {
        let (constructive, destructive) = det.interfere(&mut rng, w[0], w[1]);
        if w[0] && w[1] {
            pairs += 1;
            dt += constructive as u64;
            df += destructive as u64;
        }
    }
    (pairs, dt, df)
}

/// Runs the conference protocol and an unfolded two-party COW link with the
/// same parameters and compares their interference statistics.
pub fn folding_equivalence_stats(
    fp: &FreeParams,
    ep: &ExperimentParams,
    n_slots: u64,
    seed: u64,
) -> Result<FoldingComparison, SimError> {
    let cka_stats = run_protocol(fp, ep, n_slots, seed)?;
    let cka = InterferenceSummary::from_counts(
        cka_stats.visibility_pairs,
        cka_stats.dt_count,
        cka_stats.df_count,
    )?;

    let chunks = check_slots(n_slots)?;
    let det = Detectors::new(fp, ep);
    let (pairs, dt, df) = (0..chunks)
        .into_par_iter()
        .map(|c| cow_chunk(&det, n_slots, seed, c))
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0, 0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
    let cow = InterferenceSummary::from_counts(pairs, dt, df)?;

    let visibility_difference = cka.visibility.value - cow.visibility.value;
    let combined_std_error = cka.visibility.std_error.hypot(cow.visibility.std_error);
    let within_3_sigma = if combined_std_error > 0.0 {
        visibility_difference.abs() <= 3.0 * combined_std_error
    } else {
        visibility_difference == 0.0
    };
    Ok(FoldingComparison {
        cka,
        cow,
        visibility_difference,
        combined_std_error,
        within_3_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> (FreeParams, ExperimentParams) {
        let ep = ExperimentParams::baseline()
            .with_dark_count_rate(1e-4)
            .unwrap()
            .with_distance(50.0)
            .unwrap();
        (FreeParams::new(0.5, 0.2).unwrap(), ep)
    }

    #[test]
    fn rejects_zero_and_huge_slot_counts() {
        let (fp, ep) = desk();
        assert_eq!(run_protocol(&fp, &ep, 0, 1), Err(SimError::NoSlots));
        assert!(matches!(
            run_protocol(&fp, &ep, u64::MAX, 1),
            Err(SimError::TooManySlots(_))
        ));
    }

    #[test]
    fn conservation_and_partition() {
        let (fp, ep) = desk();
        let n = 3 * CHUNK_SLOTS + 17;
        let stats = run_protocol(&fp, &ep, n, 9).unwrap();
        assert_eq!(stats.n_slots, n);
        assert_eq!(stats.categories.iter().map(|c| c.sent).sum::<u64>(), n);
        assert_eq!(stats.dispositions.total(), n);
        let d = &stats.dispositions;
        let key = d.key_bit_0 + d.key_bit_1 + d.random_tie;
        assert_eq!(key, stats.sifted_len);
        assert_eq!(stats.alice_key.len(), stats.charlie_key.len());
        assert_eq!(stats.bob_key.len(), stats.charlie_key.len());
        let clicked: u64 = stats.categories.iter().map(|c| c.clicked).sum();
        assert_eq!(clicked, key + d.discarded_cross_basis);
    }

    #[test]
    fn recorded_outcomes_agree_with_counters() {
        let (fp, ep) = desk();
        let n = 2 * CHUNK_SLOTS + 5;
        let (stats, outcomes) = run_protocol_recorded(&fp, &ep, n, 4).unwrap();
        assert_eq!(stats, run_protocol(&fp, &ep, n, 4).unwrap());
        assert_eq!(outcomes.len() as u64, n);
        for (i, o) in outcomes.iter().enumerate() {
            assert_eq!(o.index, i as u64 + 1);
            match o.disposition {
                Disposition::KeyBit0 => {
                    assert!(!o.d1_click && o.d2_click && o.charlie_bit == Some(false))
                }
                Disposition::KeyBit1 => {
                    assert!(o.d1_click && !o.d2_click && o.charlie_bit == Some(true))
                }
                Disposition::RandomTie => assert!(o.d1_click && o.d2_click),
                Disposition::DiscardedCrossBasis => {
                    assert!((o.d1_click || o.d2_click) && (o.d3_click || o.d4_click));
                    assert_eq!(o.charlie_bit, None);
                }
                Disposition::VisibilitySample => assert!(!o.d1_click && !o.d2_click),
                Disposition::NoClick => assert!(!o.d1_click && !o.d2_click),
            }
        }
        let dt: u64 = outcomes
            .windows(2)
            .map(|w| {
                let (o, n) = (&w[0], &w[1]);
                let both = o.alice_intensity > 0.0 && o.bob_intensity > 0.0;
                let even = if both && o.disposition != Disposition::DiscardedCrossBasis {
                    o.d4_click as u64
                } else {
                    0
                };
                let odd = if o.bob_intensity > 0.0 && n.alice_intensity > 0.0 {
                    o.d3_click_next as u64
                } else {
                    0
                };
                even + odd
            })
            .sum();
        let last = outcomes.last().unwrap();
        let tail = (last.alice_intensity > 0.0
            && last.bob_intensity > 0.0
            && last.disposition != Disposition::DiscardedCrossBasis) as u64
            * last.d4_click as u64;
        assert_eq!(dt + tail, stats.dt_count);
    }

    #[test]
    fn chunk_boundary_pairs_use_next_chunk_intensity() {
        let (fp, ep) = desk();
        let n = 2 * CHUNK_SLOTS;
        let (_, outcomes) = run_protocol_recorded(&fp, &ep, n, 21).unwrap();
        let (_, longer) = run_protocol_recorded(&fp, &ep, n + 3, 21).unwrap();
        // Slot intensities depend only on (seed, slot), not on run length.
        for (a, b) in outcomes.iter().zip(&longer) {
            assert_eq!(a.alice_intensity, b.alice_intensity);
            assert_eq!(a.bob_intensity, b.bob_intensity);
        }
        assert!(!outcomes.last().unwrap().d3_click_next);
        assert!(!outcomes.last().unwrap().d4_click_next);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (fp, ep) = desk();
        let n = 5 * CHUNK_SLOTS + 3;
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| run_protocol(&fp, &ep, n, 77)).unwrap();
        let b = four.install(|| run_protocol(&fp, &ep, n, 77)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.alice_key, b.alice_key);
        let fa = one
            .install(|| folding_equivalence_stats(&fp, &ep, n, 77))
            .unwrap();
        let fb = four
            .install(|| folding_equivalence_stats(&fp, &ep, n, 77))
            .unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn visibility_matches_counts_bit_exactly() {
        let (fp, ep) = desk();
        let stats = run_protocol(&fp, &ep, 200_000, 3).unwrap();
        let dt = stats.dt_count as f64;
        let df = stats.df_count as f64;
        let v = (dt - df) / (dt + df);
        assert_eq!(stats.visibility().unwrap().to_bits(), v.to_bits());
        assert_eq!(
            stats.estimates().unwrap().visibility.value.to_bits(),
            v.to_bits()
        );
    }

    #[test]
    fn almost_always_sending_gives_only_aa_pairs() {
        let ep = ExperimentParams::baseline()
            .with_dark_count_rate(0.0)
            .unwrap()
            .with_distance(20.0)
            .unwrap();
        let fp = FreeParams::new(1.0 - 1e-15, 0.3).unwrap();
        let stats = run_protocol(&fp, &ep, 20_000, 5).unwrap();
        assert_eq!(stats.category(PairCategory::Both).sent, 20_000);
        assert_eq!(stats.category(PairCategory::BobOnly).clicked, 0);
        assert_eq!(stats.category(PairCategory::AliceOnly).clicked, 0);
        let n = 20_000;
        assert_eq!(
            stats.visibility_pairs,
            2 * n - 1 - stats.dispositions.discarded_cross_basis
        );
        assert!(matches!(
            stats.estimates(),
            Err(SimError::InsufficientStatistics(_))
        ));
    }

    #[test]
    fn noiseless_saturation() {
        let ep = ExperimentParams::baseline()
            .with_dark_count_rate(0.0)
            .unwrap()
            .with_time_misalignment(0.0)
            .unwrap()
            .with_interference_misalignment(0.0)
            .unwrap()
            .with_detector_efficiency(1.0)
            .unwrap();
        let fp = FreeParams::new(0.5, 30.0).unwrap();
        let stats = run_protocol(&fp, &ep, 50_000, 8).unwrap();
        let est = stats.estimates().unwrap();
        assert_eq!(est.e_t.value, 0.0);
        assert_eq!(est.visibility.value, 1.0);
    }

    #[test]
    fn sifted_keys_agree_on_encoding_pairs() {
        let ep = ExperimentParams::baseline()
            .with_dark_count_rate(0.0)
            .unwrap()
            .with_time_misalignment(0.0)
            .unwrap()
            .with_distance(30.0)
            .unwrap();
        let fp = FreeParams::new(0.4, 0.5).unwrap();
        let (stats, outcomes) = run_protocol_recorded(&fp, &ep, 100_000, 12).unwrap();
        let key_slots: Vec<&SlotOutcome> = outcomes
            .iter()
            .filter(|o| {
                matches!(
                    o.disposition,
                    Disposition::KeyBit0 | Disposition::KeyBit1 | Disposition::RandomTie
                )
            })
            .collect();
        assert_eq!(key_slots.len(), stats.charlie_key.len());
        let mut encoding = 0;
        for (i, o) in key_slots.iter().enumerate() {
            let a_on = o.alice_intensity > 0.0;
            let b_on = o.bob_intensity > 0.0;
            assert_eq!(stats.charlie_key[i], o.charlie_bit.unwrap());
            if a_on != b_on {
                encoding += 1;
                assert_eq!(stats.alice_key[i], stats.charlie_key[i]);
                assert_eq!(stats.bob_key[i], stats.charlie_key[i]);
            } else {
                // Same-state pair: Alice and Bob (post-flip) hold opposite bits.
                assert_ne!(stats.alice_key[i], stats.bob_key[i]);
            }
        }
        assert!(encoding > 1000);
        assert_eq!(stats.estimates().unwrap().e_t.value, 0.0);
    }

    #[test]
    fn empirical_rate_substitution_is_exact() {
        let (fp, ep) = desk();
        for (t, mu, l) in [(0.05, 0.1, 100.0), (0.5, 0.2, 50.0), (0.1, 0.3, 300.0)] {
            let fp2 = FreeParams::new(t, mu).unwrap();
            let ep2 = ep.with_distance(l).unwrap();
            let b = conference_key_rate(&fp2, &ep2);
            let inputs = EmpiricalEstimates::from_breakdown(&b).rate_inputs(&fp2, &ep2);
            assert_eq!(inputs.rate().to_bits(), b.rate.to_bits());
            assert_eq!(inputs.unclamped().to_bits(), b.rate_unclamped.to_bits());
        }
        let _ = fp;
    }

    #[test]
    fn tiny_run_reports_insufficient_statistics() {
        let (fp, ep) = desk();
        let stats = run_protocol(&fp, &ep, 10, 1).unwrap();
        assert!(matches!(
            empirical_key_rate(&stats, &ep),
            Err(SimError::InsufficientStatistics(_))
        ));
    }

    #[test]
    fn noiseless_folding_gives_unit_visibility() {
        let ep = ExperimentParams::baseline()
            .with_dark_count_rate(0.0)
            .unwrap()
            .with_interference_misalignment(0.0)
            .unwrap()
            .with_distance(10.0)
            .unwrap();
        let fp = FreeParams::new(0.5, 0.5).unwrap();
        let cmp = folding_equivalence_stats(&fp, &ep, 100_000, 2).unwrap();
        assert_eq!(cmp.cka.visibility.value, 1.0);
        assert_eq!(cmp.cow.visibility.value, 1.0);
        assert_eq!(cmp.cka.df_count, 0);
        assert!(cmp.within_3_sigma);
    }
}

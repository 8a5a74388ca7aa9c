//! Transmission-delay realignment.
//!
//! Three cooperating mechanisms turn independently delayed streams into
//! cross-source epochs:
//!
//! - [`IntraAligner`] groups samples of synchronized same-rate sensors into
//!   per-period epochs, waiting at most `stale_ns` for laggards before an
//!   epoch goes out incomplete.
//! - [`PullAligner`] buffers each stream and, on demand, draws the sample
//!   nearest a pull instant (after per-stream delay adjustment) from every
//!   source — the positive-pair selection of rate-driven inference.
//! - [`PushCache`] pairs each new arrival with the last-known sample of
//!   every other source, adding zero buffering latency.
//!
//! All timing decisions are made on *adjusted* times: time-of-arrival minus
//! the per-stream propagation-delay estimate supplied by clock sync.

use crate::wire::Sample;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("unknown source id {0:?}")]
    UnknownSource(String),
    #[error("too many sources: {0} (mask holds 64)")]
    TooManySources(usize),
    #[error("stale_ns must be positive")]
    ZeroStale,
}

/// What to do with a sample whose epoch was already emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatePolicy {
    /// Count and drop (emitting it again would break epoch monotonicity).
    #[default]
    Discard,
    /// Attach to the next unemitted epoch; for asynchronous sources.
    JoinNextEpoch,
}

/// Alignment parameters for one group of sources.
#[derive(Debug, Clone)]
pub struct AlignConfig {
    /// Maximum wait for a lagging source before an epoch is released.
    pub stale_ns: u64,
    /// Stream ids, index order defines the epoch slot order.
    pub sources: Vec<String>,
    /// Per-stream one-way delay estimate, subtracted from arrival stamps.
    pub per_stream_offset: HashMap<String, u64>,
    /// Per-stream pairing half-window; defaults to half the stream's
    /// nominal sample period.
    pub pairing_window_ns: HashMap<String, u64>,
}

impl AlignConfig {
    pub fn new(stale_ns: u64, sources: Vec<String>) -> Result<Self, AlignError> {
        if stale_ns == 0 {
            return Err(AlignError::ZeroStale);
        }
        if sources.len() > 64 {
            return Err(AlignError::TooManySources(sources.len()));
        }
        Ok(AlignConfig {
            stale_ns,
            sources,
            per_stream_offset: HashMap::new(),
            pairing_window_ns: HashMap::new(),
        })
    }

    pub fn with_offset(mut self, source: &str, d_hat_ns: u64) -> Self {
        self.per_stream_offset.insert(source.to_string(), d_hat_ns);
        self
    }

    pub fn with_pairing_window(mut self, source: &str, window_ns: u64) -> Self {
        self.pairing_window_ns.insert(source.to_string(), window_ns);
        self
    }

    /// Refresh one stream's delay offset from a new roundtrip estimate.
    pub fn update_offset(&mut self, source: &str, d_hat_ns: u64) {
        self.per_stream_offset.insert(source.to_string(), d_hat_ns);
    }

    pub fn offset_of(&self, source: &str) -> u64 {
        self.per_stream_offset.get(source).copied().unwrap_or(0)
    }

    /// Pairing window for a source, falling back to half the given nominal
    /// period when none was configured.
    pub fn window_of(&self, source: &str, nominal_period_ns: u64) -> u64 {
        self.pairing_window_ns
            .get(source)
            .copied()
            .unwrap_or(nominal_period_ns / 2)
    }

    fn source_index(&self, source: &str) -> Result<usize, AlignError> {
        self.sources
            .iter()
            .position(|s| s == source)
            .ok_or_else(|| AlignError::UnknownSource(source.to_string()))
    }

    fn adjusted_time(&self, source: &str, sample: &Sample) -> u64 {
        sample
            .time_of_arrival_ns
            .saturating_sub(self.offset_of(source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Completeness {
    Complete,
    Partial,
}

/// One cross-source vector of paired samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEpoch {
    pub epoch_time_ns: u64,
    /// One slot per configured source, in source order.
    pub slots: Vec<Option<Sample>>,
    /// Bit i set = source i missing.
    pub missing_mask: u64,
    pub completeness: Completeness,
}

impl AlignedEpoch {
    fn from_slots(epoch_time_ns: u64, slots: Vec<Option<Sample>>) -> Self {
        let mut mask = 0u64;
        for (i, slot) in slots.iter().enumerate() {
            if slot.is_none() {
                mask |= 1 << i;
            }
        }
        AlignedEpoch {
            epoch_time_ns,
            completeness: if mask == 0 {
                Completeness::Complete
            } else {
                Completeness::Partial
            },
            slots,
            missing_mask: mask,
        }
    }

    pub fn present_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

struct Bucket {
    slots: Vec<Option<Sample>>,
    present: usize,
    first_arrival_ns: u64,
}

/// Epoch assembly for synchronized same-rate sensors of one modality.
///
/// Samples are staged into buckets keyed by their adjusted generation time
/// quantized to the nominal sample period. A bucket is released once every
/// source reported, or once `stale_ns` elapsed since its first member
/// arrived — whichever comes first. Buckets release strictly in epoch
/// order; a later complete bucket waits for the front to resolve.
///
/// Membership is decided by arrival stamps alone (a sample arriving past
/// its bucket's deadline is late even if no poll ran yet), so the output
/// is independent of poll cadence.
pub struct IntraAligner {
    cfg: AlignConfig,
    period_ns: u64,
    late_policy: LatePolicy,
    buckets: BTreeMap<u64, Bucket>,
    emitted_hwm: Option<u64>,
    late_discarded: u64,
    duplicates: u64,
}

impl IntraAligner {
    pub fn new(cfg: AlignConfig, period_ns: u64, late_policy: LatePolicy) -> Self {
        assert!(period_ns > 0, "sample period must be positive");
        IntraAligner {
            cfg,
            period_ns,
            late_policy,
            buckets: BTreeMap::new(),
            emitted_hwm: None,
            late_discarded: 0,
            duplicates: 0,
        }
    }

    fn epoch_index(&self, adjusted_ns: u64) -> u64 {
        (adjusted_ns + self.period_ns / 2) / self.period_ns
    }

    /// Stage one sample into its epoch bucket.
    pub fn intra_insert(&mut self, source_id: &str, sample: Sample) -> Result<(), AlignError> {
        let slot = self.cfg.source_index(source_id)?;
        let adjusted = self.cfg.adjusted_time(source_id, &sample);
        let mut idx = self.epoch_index(adjusted);

        let emitted = |hwm: Option<u64>, idx: u64| hwm.is_some_and(|h| idx <= h);
        let deadline_passed = self
            .buckets
            .get(&idx)
            .map(|b| sample.time_of_arrival_ns > b.first_arrival_ns + self.cfg.stale_ns)
            .unwrap_or(false);

        if emitted(self.emitted_hwm, idx) || deadline_passed {
            match self.late_policy {
                LatePolicy::Discard => {
                    self.late_discarded += 1;
                    return Ok(());
                }
                LatePolicy::JoinNextEpoch => {
                    let next_open = self.emitted_hwm.map_or(0, |h| h + 1);
                    idx = idx.max(next_open);
                    if self
                        .buckets
                        .get(&idx)
                        .map(|b| sample.time_of_arrival_ns > b.first_arrival_ns + self.cfg.stale_ns)
                        .unwrap_or(false)
                    {
                        self.late_discarded += 1;
                        return Ok(());
                    }
                }
            }
        }

        let n_sources = self.cfg.sources.len();
        let bucket = self.buckets.entry(idx).or_insert_with(|| Bucket {
            slots: vec![None; n_sources],
            present: 0,
            first_arrival_ns: sample.time_of_arrival_ns,
        });
        bucket.first_arrival_ns = bucket.first_arrival_ns.min(sample.time_of_arrival_ns);
        if bucket.slots[slot].is_some() {
            self.duplicates += 1;
            return Ok(());
        }
        bucket.slots[slot] = Some(sample);
        bucket.present += 1;
        Ok(())
    }

    /// Release every leading epoch that is complete or has aged out, in
    /// epoch-time order.
    pub fn intra_poll(&mut self, now_ns: u64) -> Vec<AlignedEpoch> {
        let mut out = Vec::new();
        while let Some((&idx, bucket)) = self.buckets.iter().next() {
            let complete = bucket.present == self.cfg.sources.len();
            let aged = now_ns >= bucket.first_arrival_ns + self.cfg.stale_ns;
            if !(complete || aged) {
                break;
            }
            let bucket = self.buckets.remove(&idx).unwrap();
            self.emitted_hwm = Some(idx);
            out.push(AlignedEpoch::from_slots(
                idx * self.period_ns,
                bucket.slots,
            ));
        }
        out
    }

    /// Release everything still buffered, regardless of age.
    pub fn flush(&mut self) -> Vec<AlignedEpoch> {
        let buckets = std::mem::take(&mut self.buckets);
        let mut out = Vec::new();
        for (idx, bucket) in buckets {
            self.emitted_hwm = Some(idx);
            out.push(AlignedEpoch::from_slots(idx * self.period_ns, bucket.slots));
        }
        out
    }

    pub fn late_discarded(&self) -> u64 {
        self.late_discarded
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn pending(&self) -> usize {
        self.buckets.len()
    }
}

/// Positive-pair selection buffer for the rate-driven (pull) strategy.
///
/// Each source keeps its recent samples ordered by adjusted time. A pull at
/// instant `t` takes, per source, the unconsumed sample whose adjusted time
/// is nearest `t` within the source's pairing window (ties go to the
/// earlier sample); the selection consumes it. Pull instants must be
/// non-decreasing, which lets passed-over samples be garbage collected.
pub struct PullAligner {
    cfg: AlignConfig,
    windows: Vec<u64>,
    buffers: Vec<BTreeMap<(u64, u64), Sample>>,
    insert_counter: u64,
    last_pull_ns: Option<u64>,
}

impl PullAligner {
    /// `nominal_period_ns` supplies the default pairing window (half of it)
    /// for sources without an explicit window.
    pub fn new(cfg: AlignConfig, nominal_period_ns: &[u64]) -> Self {
        assert_eq!(nominal_period_ns.len(), cfg.sources.len());
        let windows = cfg
            .sources
            .iter()
            .zip(nominal_period_ns)
            .map(|(s, &p)| cfg.window_of(s, p))
            .collect();
        let buffers = (0..cfg.sources.len()).map(|_| BTreeMap::new()).collect();
        PullAligner {
            cfg,
            windows,
            buffers,
            insert_counter: 0,
            last_pull_ns: None,
        }
    }

    pub fn insert(&mut self, source_id: &str, sample: Sample) -> Result<(), AlignError> {
        let slot = self.cfg.source_index(source_id)?;
        let adjusted = self.cfg.adjusted_time(source_id, &sample);
        let key = (adjusted, self.insert_counter);
        self.insert_counter += 1;
        self.buffers[slot].insert(key, sample);
        Ok(())
    }

    /// Draw one aligned epoch for `pull_time_ns`. Slots without a candidate
    /// in their window are marked missing; at cold start the epoch may be
    /// entirely missing.
    pub fn pull_pairs(&mut self, pull_time_ns: u64) -> AlignedEpoch {
        debug_assert!(
            self.last_pull_ns.is_none_or(|last| pull_time_ns >= last),
            "pull instants must be non-decreasing"
        );
        self.last_pull_ns = Some(pull_time_ns);
        let mut slots: Vec<Option<Sample>> = vec![None; self.cfg.sources.len()];
        for (i, buffer) in self.buffers.iter_mut().enumerate() {
            let window = self.windows[i];
            let lo = pull_time_ns.saturating_sub(window);
            let hi = pull_time_ns.saturating_add(window);
            let mut best: Option<((u64, u64), u64)> = None;
            for (&key, _) in buffer.range((lo, 0)..=(hi, u64::MAX)) {
                let dist = key.0.abs_diff(pull_time_ns);
                // Strict < keeps the earlier candidate on equal distance.
                if best.is_none_or(|(_, d)| dist < d) {
                    best = Some((key, dist));
                }
            }
            if let Some((key, _)) = best {
                slots[i] = buffer.remove(&key);
            }
            // Anything older than the window's reach can never be selected
            // by a later (non-decreasing) pull.
            let stale_keys: Vec<(u64, u64)> = buffer
                .range(..(lo, 0))
                .map(|(&k, _)| k)
                .collect();
            for k in stale_keys {
                buffer.remove(&k);
            }
        }
        AlignedEpoch::from_slots(pull_time_ns, slots)
    }

    pub fn buffered(&self) -> usize {
        self.buffers.iter().map(|b| b.len()).sum()
    }
}

/// Last-known-sample cache for the event-driven (push) strategy.
pub struct PushCache {
    cfg: AlignConfig,
    latest: Vec<Option<Sample>>,
    last_epoch_ns: u64,
}

impl PushCache {
    pub fn new(cfg: AlignConfig) -> Self {
        let latest = vec![None; cfg.sources.len()];
        PushCache {
            cfg,
            latest,
            last_epoch_ns: 0,
        }
    }

    /// Build the epoch for one arrival: the new sample plus the last-known
    /// sample of every other source. Epoch times are forced strictly
    /// increasing even when receipt stamps collide.
    pub fn push_trigger(
        &mut self,
        source_id: &str,
        sample: Sample,
        now_ns: u64,
    ) -> Result<AlignedEpoch, AlignError> {
        let slot = self.cfg.source_index(source_id)?;
        self.latest[slot] = Some(sample);
        let epoch_time = now_ns.max(self.last_epoch_ns + 1);
        self.last_epoch_ns = epoch_time;
        Ok(AlignedEpoch::from_slots(epoch_time, self.latest.clone()))
    }
}

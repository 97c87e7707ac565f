//! Content model: bitrate ladders, segment identities, per-node LRU caches,
//! and the candidate-quality sets the decision core enumerates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One rung of a bitrate ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    /// 0-based position in the ladder.
    pub index: usize,
    /// Bits per second.
    pub bitrate_bps: f64,
    /// Label such as "720p"; carried for reporting only.
    pub resolution: String,
}

impl Representation {
    /// Segment size in bits: bitrate x segment duration, exactly.
    pub fn segment_size_bits(&self, segment_duration_s: f64) -> f64 {
        self.bitrate_bps * segment_duration_s
    }
}

/// An ordered set of representations with a common segment duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub representations: Vec<Representation>,
    pub segment_duration_s: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("ladder must contain at least one representation")]
    EmptyLadder,
    #[error("ladder bitrates must be strictly increasing (index {0})")]
    NonIncreasingBitrate(usize),
    #[error("segment duration must be positive")]
    BadSegmentDuration,
    #[error("representation index {0} out of range")]
    BadIndex(usize),
}

impl Ladder {
    pub fn new(
        bitrates_and_resolutions: &[(f64, &str)],
        segment_duration_s: f64,
    ) -> Result<Self, CatalogError> {
        if bitrates_and_resolutions.is_empty() {
            return Err(CatalogError::EmptyLadder);
        }
        if !(segment_duration_s > 0.0) {
            return Err(CatalogError::BadSegmentDuration);
        }
        let representations = bitrates_and_resolutions
            .iter()
            .enumerate()
            .map(|(index, (bitrate_bps, resolution))| Representation {
                index,
                bitrate_bps: *bitrate_bps,
                resolution: resolution.to_string(),
            })
            .collect::<Vec<_>>();
        for w in representations.windows(2) {
            if w[1].bitrate_bps <= w[0].bitrate_bps {
                return Err(CatalogError::NonIncreasingBitrate(w[1].index));
            }
        }
        if representations[0].bitrate_bps <= 0.0 {
            return Err(CatalogError::NonIncreasingBitrate(0));
        }
        Ok(Ladder {
            representations,
            segment_duration_s,
        })
    }

    /// The five-rung ladder used throughout the evaluation setups:
    /// {0.089, 0.262, 0.791, 2.4, 4.2} Mbps, two-second segments.
    pub fn default_live() -> Self {
        Ladder::new(
            &[
                (0.089e6, "240p"),
                (0.262e6, "360p"),
                (0.791e6, "720p"),
                (2.4e6, "1080p"),
                (4.2e6, "1080p"),
            ],
            2.0,
        )
        .expect("static ladder is valid")
    }

    pub fn len(&self) -> usize {
        self.representations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representations.is_empty()
    }

    pub fn max_index(&self) -> usize {
        self.representations.len() - 1
    }

    pub fn rep(&self, index: usize) -> Result<&Representation, CatalogError> {
        self.representations
            .get(index)
            .ok_or(CatalogError::BadIndex(index))
    }

    pub fn bitrate(&self, index: usize) -> f64 {
        self.representations[index].bitrate_bps
    }

    pub fn segment_bits(&self, index: usize) -> f64 {
        self.representations[index].segment_size_bits(self.segment_duration_s)
    }

    pub fn max_bitrate(&self) -> f64 {
        self.representations[self.max_index()].bitrate_bps
    }
}

/// Identity of one segment of one content.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId {
    pub content_id: String,
    pub segment_index: u64,
}

impl SegmentId {
    pub fn new(content_id: &str, segment_index: u64) -> Self {
        Self {
            content_id: content_id.to_string(),
            segment_index,
        }
    }
}

/// A cached entry: one (segment, representation) pair.
pub type CacheEntry = (SegmentId, usize);

/// Recency-ordered cache of segment/representation pairs, LRU-evicted.
///
/// Recency is a strictly increasing counter; the resident map carries each
/// entry's last-use stamp and a mirror map orders entries by stamp.
#[derive(Debug, Clone)]
pub struct CacheState {
    pub node_id: String,
    capacity: usize,
    stamp: u64,
    resident: BTreeMap<CacheEntry, u64>,
    by_recency: BTreeMap<u64, CacheEntry>,
}

impl CacheState {
    pub fn new(node_id: &str, capacity: usize) -> Self {
        Self {
            node_id: node_id.to_string(),
            capacity,
            stamp: 0,
            resident: BTreeMap::new(),
            by_recency: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn contains(&self, segment: &SegmentId, rep_index: usize) -> bool {
        self.resident.contains_key(&(segment.clone(), rep_index))
    }

    /// Representation indices of `segment` currently resident, ascending.
    pub fn reps_of(&self, segment: &SegmentId) -> Vec<usize> {
        self.resident
            .keys()
            .filter(|(s, _)| s == segment)
            .map(|(_, r)| *r)
            .collect()
    }

    /// Every resident (segment, rep) pair, in key order.
    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.resident.keys()
    }

    fn touch(&mut self, entry: &CacheEntry) {
        let old = self.resident[entry];
        self.by_recency.remove(&old);
        self.stamp += 1;
        self.resident.insert(entry.clone(), self.stamp);
        self.by_recency.insert(self.stamp, entry.clone());
    }
}

/// Hit refreshes recency; miss leaves the cache untouched.
pub fn cache_lookup(cache: &mut CacheState, segment: &SegmentId, rep_index: usize) -> bool {
    let entry = (segment.clone(), rep_index);
    if cache.resident.contains_key(&entry) {
        cache.touch(&entry);
        true
    } else {
        false
    }
}

/// Inserts (or refreshes) the pair; returns the evicted entry when capacity
/// is exceeded.
pub fn cache_insert(
    cache: &mut CacheState,
    segment: &SegmentId,
    rep_index: usize,
) -> Option<CacheEntry> {
    if cache.capacity == 0 {
        return None;
    }
    let entry = (segment.clone(), rep_index);
    if cache.resident.contains_key(&entry) {
        cache.touch(&entry);
        return None;
    }
    cache.stamp += 1;
    cache.resident.insert(entry.clone(), cache.stamp);
    cache.by_recency.insert(cache.stamp, entry);
    if cache.resident.len() > cache.capacity {
        let (&oldest, _) = cache.by_recency.iter().next().expect("cache is non-empty");
        let victim = cache.by_recency.remove(&oldest).expect("stamp present");
        cache.resident.remove(&victim);
        Some(victim)
    } else {
        None
    }
}

/// Eligible replacement quality set for a request at `requested_index`:
/// the contiguous run {i, i+1, ..., min(i+m, max)}.
pub fn replacement_set(ladder: &Ladder, requested_index: usize, m: usize) -> Vec<usize> {
    let top = ladder.max_index().min(requested_index + m);
    (requested_index..=top).collect()
}

/// How a candidate source representation is turned into the requested one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CandidateMode {
    /// The exact requested representation.
    Exact,
    /// A higher-quality source to transcode down from.
    TranscodeFrom,
    /// A lower-resolution source to super-resolve up from.
    SuperResolveFrom,
}

/// Candidate (mode, ladder index) pairs for serving `requested_index` in the
/// hybrid P2P trees: the exact rep, every higher rung as a transcode source,
/// and `sr_window` rungs below as super-resolution sources (default one; the
/// quality/power sweet spot is a single upward step).
pub fn candidate_set_alive(
    ladder: &Ladder,
    requested_index: usize,
    sr_window: usize,
) -> Vec<(CandidateMode, usize)> {
    let mut out = vec![(CandidateMode::Exact, requested_index)];
    for i in requested_index + 1..=ladder.max_index() {
        out.push((CandidateMode::TranscodeFrom, i));
    }
    let low = requested_index.saturating_sub(sr_window);
    for i in (low..requested_index).rev() {
        out.push((CandidateMode::SuperResolveFrom, i));
    }
    out
}

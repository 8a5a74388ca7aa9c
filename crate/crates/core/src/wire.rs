//! Bit-exact message framing and topic routing primitives.
//!
//! Every message travels as exactly three length-prefixed frames, each
//! prefixed by an unsigned 32-bit little-endian byte length:
//!
//! ```text
//! ┌─────┬─────────────┬─────┬──────────────────────────┬─────┬─────────┐
//! │ len │ topic bytes │ len │ header                   │ len │ payload │
//! └─────┴─────────────┴─────┴──────────────────────────┴─────┴─────────┘
//! ```
//!
//! The header frame layout (all integers little-endian):
//!
//! | field                 | type      | offset |
//! |-----------------------|-----------|--------|
//! | schema_version        | u16       | 0      |
//! | flags                 | u16       | 2      |
//! | seq                   | u64       | 4      |
//! | time_of_arrival_ns    | u64       | 12     |
//! | time_of_generation_ns | u64       | 20     |
//! | dtype                 | u8        | 28     |
//! | ndim                  | u8        | 29     |
//! | reserved              | u16       | 30     |
//! | dims                  | ndim × u32| 32     |
//!
//! Fixed header size is 32 bytes; total header frame is `32 + 4 * ndim`.

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

/// Current (and only) wire schema version. Unknown versions are rejected.
pub const SCHEMA_VERSION: u16 = 1;

/// Fixed part of the header frame, before the dims array.
pub const HEADER_FIXED_LEN: usize = 32;

/// Maximum topic byte length.
pub const MAX_TOPIC_LEN: usize = 255;

/// The designated match-everything subscription prefix.
pub const WILDCARD_PREFIX: &str = "*";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("topic exceeds {MAX_TOPIC_LEN} bytes: {0} bytes")]
    OversizeTopic(usize),
    #[error("invalid topic {0:?}: empty or malformed segments")]
    BadTopic(String),
    #[error("payload length {payload} does not match dims/dtype (expected {expected})")]
    DimMismatch { expected: u64, payload: u64 },
    #[error("message truncated: {0}")]
    Truncated(&'static str),
    #[error("unknown schema version {0}")]
    BadVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("time_of_generation_ns {tog} exceeds time_of_arrival_ns {toa}")]
    BadTimestamps { tog: u64, toa: u64 },
}

/// Element type of a sample payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    U64,
    I64,
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::I8 => 1,
            DType::U16 => 2,
            DType::I16 => 3,
            DType::U32 => 4,
            DType::I32 => 5,
            DType::U64 => 6,
            DType::I64 => 7,
            DType::F32 => 8,
            DType::F64 => 9,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0 => DType::U8,
            1 => DType::I8,
            2 => DType::U16,
            3 => DType::I16,
            4 => DType::U32,
            5 => DType::I32,
            6 => DType::U64,
            7 => DType::I64,
            8 => DType::F32,
            9 => DType::F64,
            other => return Err(WireError::UnknownDtype(other)),
        })
    }

    /// Element size in bytes.
    pub fn size(self) -> usize {
        match self {
            DType::U8 | DType::I8 => 1,
            DType::U16 | DType::I16 => 2,
            DType::U32 | DType::I32 | DType::F32 => 4,
            DType::U64 | DType::I64 | DType::F64 => 8,
        }
    }
}

/// A validated `/`-separated topic path, e.g. `imu/joint_angles`.
///
/// Invariants: non-empty, no empty segments, no leading or trailing slash,
/// at most [`MAX_TOPIC_LEN`] bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct TopicId(String);

impl TopicId {
    pub fn new(path: impl Into<String>) -> Result<Self, WireError> {
        let path = path.into();
        if path.is_empty() || path.split('/').any(|seg| seg.is_empty()) {
            return Err(WireError::BadTopic(path));
        }
        if path.len() > MAX_TOPIC_LEN {
            return Err(WireError::OversizeTopic(path.len()));
        }
        Ok(TopicId(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The wildcard prefix that matches every topic.
    pub fn wildcard() -> Self {
        TopicId(WILDCARD_PREFIX.to_string())
    }

    pub fn is_wildcard(&self) -> bool {
        self.0 == WILDCARD_PREFIX
    }

    /// True when this topic is under the reserved `__ctl` control namespace.
    pub fn is_control(&self) -> bool {
        self.0 == "__ctl" || self.0.starts_with("__ctl/")
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for TopicId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::str::FromStr for TopicId {
    type Err = WireError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicId::new(s)
    }
}

impl<'de> Deserialize<'de> for TopicId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TopicId::new(s).map_err(serde::de::Error::custom)
    }
}

/// Segment-boundary prefix match: `topic` matches `prefix` iff they are
/// equal, or `topic` begins with `prefix` followed by `/`, or `prefix` is
/// the designated wildcard.
pub fn match_topic(prefix: &TopicId, topic: &TopicId) -> bool {
    if prefix.is_wildcard() {
        return true;
    }
    let (p, t) = (prefix.as_str(), topic.as_str());
    t == p || (t.len() > p.len() && t.starts_with(p) && t.as_bytes()[p.len()] == b'/')
}

/// One timestamped measurement of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub topic: TopicId,
    /// Monotone per-topic, per-producer counter.
    pub seq: u64,
    /// Host-clock nanoseconds when the sample reached the host interface.
    pub time_of_arrival_ns: u64,
    /// Estimated true sampling instant; 0 = unknown.
    pub time_of_generation_ns: u64,
    pub dtype: DType,
    pub dims: Vec<u32>,
    /// Raw row-major element bytes. Reference-counted; clones share storage.
    pub payload: Bytes,
}

impl Sample {
    pub fn new(
        topic: TopicId,
        seq: u64,
        time_of_arrival_ns: u64,
        time_of_generation_ns: u64,
        dtype: DType,
        dims: Vec<u32>,
        payload: Bytes,
    ) -> Result<Self, WireError> {
        let expected = expected_payload_len(dtype, &dims);
        if expected != payload.len() as u64 {
            return Err(WireError::DimMismatch {
                expected,
                payload: payload.len() as u64,
            });
        }
        if time_of_generation_ns != 0 && time_of_generation_ns > time_of_arrival_ns {
            return Err(WireError::BadTimestamps {
                tog: time_of_generation_ns,
                toa: time_of_arrival_ns,
            });
        }
        Ok(Sample {
            topic,
            seq,
            time_of_arrival_ns,
            time_of_generation_ns,
            dtype,
            dims,
            payload,
        })
    }

    /// Number of elements implied by the dims.
    pub fn element_count(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }
}

fn expected_payload_len(dtype: DType, dims: &[u32]) -> u64 {
    let elems: u128 = dims.iter().map(|&d| d as u128).product();
    (elems * dtype.size() as u128).min(u64::MAX as u128) as u64
}

/// Serialize a sample into its three length-prefixed on-wire frames,
/// returned as one contiguous buffer.
pub fn encode_message(sample: &Sample) -> Result<Vec<u8>, WireError> {
    let topic = sample.topic.as_str().as_bytes();
    if topic.len() > MAX_TOPIC_LEN {
        return Err(WireError::OversizeTopic(topic.len()));
    }
    let expected = expected_payload_len(sample.dtype, &sample.dims);
    if expected != sample.payload.len() as u64 {
        return Err(WireError::DimMismatch {
            expected,
            payload: sample.payload.len() as u64,
        });
    }
    let ndim = sample.dims.len();
    assert!(ndim <= u8::MAX as usize, "ndim exceeds wire limit");
    let header_len = HEADER_FIXED_LEN + 4 * ndim;
    let total = 4 + topic.len() + 4 + header_len + 4 + sample.payload.len();
    let mut buf = Vec::with_capacity(total);

    buf.extend_from_slice(&(topic.len() as u32).to_le_bytes());
    buf.extend_from_slice(topic);

    buf.extend_from_slice(&(header_len as u32).to_le_bytes());
    buf.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes()); // flags
    buf.extend_from_slice(&sample.seq.to_le_bytes());
    buf.extend_from_slice(&sample.time_of_arrival_ns.to_le_bytes());
    buf.extend_from_slice(&sample.time_of_generation_ns.to_le_bytes());
    buf.push(sample.dtype.code());
    buf.push(ndim as u8);
    buf.extend_from_slice(&0u16.to_le_bytes()); // reserved
    for &d in &sample.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }

    buf.extend_from_slice(&(sample.payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(&sample.payload);
    Ok(buf)
}

/// Decode one message from `buf`, returning the sample and the number of
/// bytes consumed. All sample invariants are re-validated; a failure rejects
/// the message without poisoning the stream position.
pub fn decode_message(buf: &[u8]) -> Result<(Sample, usize), WireError> {
    let mut pos = 0usize;
    let topic_bytes = take_frame(buf, &mut pos, "topic frame")?;
    let header = take_frame(buf, &mut pos, "header frame")?;
    let payload_bytes = take_frame(buf, &mut pos, "payload frame")?;

    let topic = std::str::from_utf8(topic_bytes)
        .map_err(|_| WireError::BadTopic(String::from_utf8_lossy(topic_bytes).into_owned()))?;
    let topic = TopicId::new(topic)?;

    if header.len() < HEADER_FIXED_LEN {
        return Err(WireError::Truncated("header shorter than fixed part"));
    }
    let version = u16::from_le_bytes([header[0], header[1]]);
    if version != SCHEMA_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let seq = u64::from_le_bytes(header[4..12].try_into().unwrap());
    let toa = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let tog = u64::from_le_bytes(header[20..28].try_into().unwrap());
    let dtype = DType::from_code(header[28])?;
    let ndim = header[29] as usize;
    if header.len() != HEADER_FIXED_LEN + 4 * ndim {
        return Err(WireError::Truncated("header dims length mismatch"));
    }
    let dims: Vec<u32> = (0..ndim)
        .map(|i| {
            let off = HEADER_FIXED_LEN + 4 * i;
            u32::from_le_bytes(header[off..off + 4].try_into().unwrap())
        })
        .collect();

    let sample = Sample::new(
        topic,
        seq,
        toa,
        tog,
        dtype,
        dims,
        Bytes::copy_from_slice(payload_bytes),
    )?;
    Ok((sample, pos))
}

fn take_frame<'a>(buf: &'a [u8], pos: &mut usize, what: &'static str) -> Result<&'a [u8], WireError> {
    if buf.len() < *pos + 4 {
        return Err(WireError::Truncated(what));
    }
    let len = u32::from_le_bytes(buf[*pos..*pos + 4].try_into().unwrap()) as usize;
    *pos += 4;
    if buf.len() < *pos + len {
        return Err(WireError::Truncated(what));
    }
    let frame = &buf[*pos..*pos + len];
    *pos += len;
    Ok(frame)
}

/// Opaque identifier the broker assigns to a connected endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EndpointId(pub u64);

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ep{}", self.0)
    }
}

/// Which endpoints asked for which topic prefixes.
///
/// Duplicate (endpoint, prefix) inserts are idempotent; removing an endpoint
/// removes all of its prefixes.
#[derive(Debug, Default, Clone)]
pub struct SubscriptionTable {
    entries: HashMap<EndpointId, BTreeSet<TopicId>>,
}

impl SubscriptionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, endpoint: EndpointId, prefix: TopicId) {
        self.entries.entry(endpoint).or_default().insert(prefix);
    }

    pub fn remove(&mut self, endpoint: EndpointId, prefix: &TopicId) {
        if let Some(set) = self.entries.get_mut(&endpoint) {
            set.remove(prefix);
            if set.is_empty() {
                self.entries.remove(&endpoint);
            }
        }
    }

    pub fn remove_endpoint(&mut self, endpoint: EndpointId) {
        self.entries.remove(&endpoint);
    }

    pub fn endpoints(&self) -> impl Iterator<Item = EndpointId> + '_ {
        self.entries.keys().copied()
    }

    pub fn prefixes(&self, endpoint: EndpointId) -> impl Iterator<Item = &TopicId> {
        self.entries.get(&endpoint).into_iter().flatten()
    }

    /// Destination set for one message: every endpoint with a matching
    /// prefix, at most once each, never the publisher itself. Sorted for
    /// deterministic delivery order.
    pub fn route(&self, topic: &TopicId, publisher: Option<EndpointId>) -> Vec<EndpointId> {
        let mut dests: Vec<EndpointId> = self
            .entries
            .iter()
            .filter(|(ep, prefixes)| {
                Some(**ep) != publisher && prefixes.iter().any(|p| match_topic(p, topic))
            })
            .map(|(ep, _)| *ep)
            .collect();
        dests.sort_unstable();
        dests
    }
}

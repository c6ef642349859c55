//! Stateless SYN cookies.
//!
//! Cookie layout (32 bits, most significant first):
//!
//! ```text
//!  31..29   counter mod 8
//!  28..26   MSS table index (0..=7)
//!  25..0    low 26 bits of H(secret, flow, counter)
//! ```
//!
//! `counter` is `floor(ts / 64)`. A cookie is accepted when its embedded
//! counter matches the current counter or the one before it.
//!
//! `H` is two rounds of the SplitMix64 finalizer:
//!
//! ```text
//! mix(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!          z ^= z >> 27; z *= 0x94D049BB133111EB;
//!          z ^= z >> 31
//! w1 = (src_ip << 32) | dst_ip
//! w2 = (src_port << 48) | (dst_port << 32) | (counter & 0xFFFF_FFFF)
//! H  = mix(mix(secret ^ w1) ^ w2)
//! ```
//!
//! All multiplications wrap modulo 2^64.

use crate::model::FlowKey;

pub const COOKIE_PERIOD_SECS: u64 = 64;
const HASH_BITS: u32 = 26;
const HASH_MASK: u32 = (1 << HASH_BITS) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("mss index {0} out of range 0..=7")]
pub struct MssIndexOutOfRange(pub u8);

/// SplitMix64 output finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn cookie_hash(secret: u64, flow: &FlowKey, counter: u64) -> u64 {
    let w1 = (u64::from(u32::from(flow.src_ip)) << 32) | u64::from(u32::from(flow.dst_ip));
    let w2 = (u64::from(flow.src_port) << 48)
        | (u64::from(flow.dst_port) << 32)
        | (counter & 0xFFFF_FFFF);
    mix64(mix64(secret ^ w1) ^ w2)
}

/// Cookie counter for a timestamp in seconds.
pub fn cookie_counter(ts: f64) -> u64 {
    (ts / COOKIE_PERIOD_SECS as f64).floor() as u64
}

pub fn make_syn_cookie(
    secret: u64,
    flow: &FlowKey,
    counter: u64,
    mss_idx: u8,
) -> Result<u32, MssIndexOutOfRange> {
    if mss_idx > 7 {
        return Err(MssIndexOutOfRange(mss_idx));
    }
    let h = cookie_hash(secret, flow, counter) as u32 & HASH_MASK;
    Ok((((counter % 8) as u32) << 29) | (u32::from(mss_idx) << 26) | h)
}

/// Returns the embedded MSS index when `value` is a valid cookie for `flow`
/// at `counter_now` (or one period earlier).
pub fn check_syn_cookie(secret: u64, flow: &FlowKey, counter_now: u64, value: u32) -> Option<u8> {
    let embedded = u64::from(value >> 29);
    let mss_idx = ((value >> 26) & 0x7) as u8;
    let low = value & HASH_MASK;
    [Some(counter_now), counter_now.checked_sub(1)]
        .into_iter()
        .flatten()
        .filter(|c| c % 8 == embedded)
        .any(|c| cookie_hash(secret, flow, c) as u32 & HASH_MASK == low)
        .then_some(mss_idx)
}

//! Internet checksum over the UDP pseudo-header (RFC 768).

use std::net::Ipv4Addr;

const PROTO_UDP: u16 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ChecksumError {
    #[error("udp length {length} does not equal 8 + payload length {payload_len}")]
    LengthMismatch { length: u16, payload_len: usize },
}

/// One's-complement accumulator. Carries are folded lazily.
#[derive(Default)]
struct OnesComplement(u64);

impl OnesComplement {
    fn add_word(&mut self, w: u16) {
        self.0 += u64::from(w);
    }

    fn add_bytes(&mut self, bytes: &[u8]) {
        let mut chunks = bytes.chunks_exact(2);
        for c in &mut chunks {
            self.add_word(u16::from_be_bytes([c[0], c[1]]));
        }
        if let [last] = chunks.remainder() {
            self.add_word(u16::from_be_bytes([*last, 0]));
        }
    }

    fn fold(&self) -> u16 {
        let mut s = self.0;
        while s > 0xFFFF {
            s = (s & 0xFFFF) + (s >> 16);
        }
        s as u16
    }
}

fn sum_with(
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    length: u16,
    checksum_field: u16,
    payload: &[u8],
) -> u16 {
    let mut acc = OnesComplement::default();
    acc.add_bytes(&src_ip.octets());
    acc.add_bytes(&dst_ip.octets());
    acc.add_word(PROTO_UDP);
    acc.add_word(length);
    acc.add_word(src_port);
    acc.add_word(dst_port);
    acc.add_word(length);
    acc.add_word(checksum_field);
    acc.add_bytes(payload);
    acc.fold()
}

/// Computes the UDP checksum. A computed zero is transmitted as `0xFFFF`, so
/// the result is never 0.
pub fn compute_udp_checksum(
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    length: u16,
    payload: &[u8],
) -> Result<u16, ChecksumError> {
    if usize::from(length) != payload.len() + 8 {
        return Err(ChecksumError::LengthMismatch {
            length,
            payload_len: payload.len(),
        });
    }
    let c = !sum_with(src_ip, dst_ip, src_port, dst_port, length, 0, payload);
    Ok(if c == 0 { 0xFFFF } else { c })
}

/// True when re-summing the datagram with `checksum` in place yields `0xFFFF`.
///
/// The length field is taken as given; callers check length consistency
/// separately.
pub fn validate_udp_checksum(
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    length: u16,
    checksum: u16,
    payload: &[u8],
) -> bool {
    sum_with(
        src_ip, dst_ip, src_port, dst_port, length, checksum, payload,
    ) == 0xFFFF
}

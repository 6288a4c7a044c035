//! GTP-U (user plane) header codec.
//!
//! Only the pieces needed for passive latency attribution are decoded: the
//! mandatory 8-byte header, the optional sequence/N-PDU block, the extension
//! header chain (stepped over, kept verbatim) and, for G-PDUs, the inner
//! IPv4 + UDP/TCP flow key.
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |Ver  |P|*|E|S|N| Message Type  |            Length             |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                 Tunnel Endpoint Identifier                    |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |        Sequence Number        |  N-PDU Number | Next Ext Type |  (if E|S|N)
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```
//!
//! `Length` counts every octet after the mandatory header, including the
//! optional block and extension headers.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Size of the mandatory GTP-U header.
pub const GTPU_HEADER_LEN: usize = 8;
/// Size of the optional sequence / N-PDU / next-extension block.
pub const GTPU_OPTIONAL_LEN: usize = 4;
/// Message type of a G-PDU (encapsulated user data).
pub const MSG_TYPE_GPDU: u8 = 0xFF;

pub const IP_PROTO_TCP: u8 = 6;
pub const IP_PROTO_UDP: u8 = 17;

const FLAG_PT: u8 = 0x10;
const FLAG_E: u8 = 0x04;
const FLAG_S: u8 = 0x02;
const FLAG_PN: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GtpuError {
    #[error("packet too short: {len} bytes, need at least {GTPU_HEADER_LEN}")]
    TooShort { len: usize },
    #[error("unsupported GTP version {0}, expected 1")]
    BadVersion(u8),
    #[error("protocol type bit is 0 (GTP'), not GTP-U")]
    NotGtpu,
    #[error("declared length {declared} exceeds the {available} bytes available")]
    LengthMismatch { declared: usize, available: usize },
    #[error("malformed extension header at offset {offset}")]
    BadExtension { offset: usize },
    #[error("payload of {0} bytes does not fit the 16-bit length field")]
    PayloadTooLarge(usize),
    #[error("inconsistent header: {0}")]
    InconsistentHeader(&'static str),
}

/// Tunnel endpoint identifier. Every 32-bit value is valid; 0 is
/// conventionally "unassigned".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Teid(pub u32);

impl Teid {
    pub const UNASSIGNED: Teid = Teid(0);

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn is_unassigned(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Teid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

impl From<u32> for Teid {
    fn from(v: u32) -> Self {
        Teid(v)
    }
}

/// Accepts decimal or `0x`-prefixed hexadecimal.
impl std::str::FromStr for Teid {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            Some(hex) => u32::from_str_radix(hex, 16).map(Teid),
            None => s.parse().map(Teid),
        }
    }
}

/// Inner IPv4 5-tuple of an encapsulated packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InnerFlowKey {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl InnerFlowKey {
    /// The same flow seen from the other end.
    pub fn reversed(&self) -> Self {
        InnerFlowKey {
            src_addr: self.dst_addr,
            dst_addr: self.src_addr,
            src_port: self.dst_port,
            dst_port: self.src_port,
            protocol: self.protocol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtpuHeader {
    pub version: u8,
    pub protocol_type: bool,
    pub has_extension: bool,
    pub has_sequence: bool,
    pub has_npdu: bool,
    pub message_type: u8,
    /// Octets following the mandatory header.
    pub payload_length: u16,
    pub teid: Teid,
    /// The optional-block fields are `Some` exactly when any of E, S or PN is set.
    pub sequence: Option<u16>,
    pub npdu_number: Option<u8>,
    pub next_extension_type: Option<u8>,
}

impl GtpuHeader {
    pub fn has_optional_block(&self) -> bool {
        self.has_extension || self.has_sequence || self.has_npdu
    }
}

/// A decoded GTP-U packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtpuPacket {
    pub header: GtpuHeader,
    /// Raw extension header chain, kept verbatim so re-encoding is lossless.
    pub extension_headers: Vec<u8>,
    pub inner_flow: Option<InnerFlowKey>,
    /// T-PDU bytes following any optional fields and extension headers.
    pub payload: Vec<u8>,
}

impl GtpuPacket {
    /// Builds a G-PDU without optional fields, deriving the inner flow key
    /// from `payload`.
    pub fn gpdu(teid: Teid, payload: Vec<u8>) -> Result<Self, GtpuError> {
        let len = payload.len();
        if len > u16::MAX as usize {
            return Err(GtpuError::PayloadTooLarge(len));
        }
        Ok(GtpuPacket {
            header: GtpuHeader {
                version: 1,
                protocol_type: true,
                has_extension: false,
                has_sequence: false,
                has_npdu: false,
                message_type: MSG_TYPE_GPDU,
                payload_length: len as u16,
                teid,
                sequence: None,
                npdu_number: None,
                next_extension_type: None,
            },
            extension_headers: Vec::new(),
            inner_flow: parse_inner_flow(&payload),
            payload,
        })
    }

    /// Sets the S flag and sequence number, adjusting the length field.
    pub fn with_sequence(mut self, seq: u16) -> Result<Self, GtpuError> {
        let had_block = self.header.has_optional_block();
        self.header.has_sequence = true;
        self.header.sequence = Some(seq);
        if !had_block {
            self.header.npdu_number = Some(0);
            self.header.next_extension_type = Some(0);
        }
        self.header.payload_length = self.body_len()?;
        Ok(self)
    }

    fn body_len(&self) -> Result<u16, GtpuError> {
        let opt = if self.header.has_optional_block() {
            GTPU_OPTIONAL_LEN
        } else {
            0
        };
        let total = opt + self.extension_headers.len() + self.payload.len();
        u16::try_from(total).map_err(|_| GtpuError::PayloadTooLarge(total))
    }
}

/// Reads the TEID without decoding anything else.
pub fn extract_teid(bytes: &[u8]) -> Result<Teid, GtpuError> {
    if bytes.len() < GTPU_HEADER_LEN {
        return Err(GtpuError::TooShort { len: bytes.len() });
    }
    Ok(Teid(u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]])))
}

/// Decodes a GTP-U packet. Bytes beyond the declared length are ignored.
pub fn parse_gtpu(bytes: &[u8]) -> Result<GtpuPacket, GtpuError> {
    if bytes.len() < GTPU_HEADER_LEN {
        return Err(GtpuError::TooShort { len: bytes.len() });
    }
    let flags = bytes[0];
    let version = flags >> 5;
    if version != 1 {
        return Err(GtpuError::BadVersion(version));
    }
    if flags & FLAG_PT == 0 {
        return Err(GtpuError::NotGtpu);
    }
    let message_type = bytes[1];
    let payload_length = u16::from_be_bytes([bytes[2], bytes[3]]);
    let teid = extract_teid(bytes)?;

    let end = GTPU_HEADER_LEN + payload_length as usize;
    if end > bytes.len() {
        return Err(GtpuError::LengthMismatch {
            declared: payload_length as usize,
            available: bytes.len() - GTPU_HEADER_LEN,
        });
    }

    let has_extension = flags & FLAG_E != 0;
    let has_sequence = flags & FLAG_S != 0;
    let has_npdu = flags & FLAG_PN != 0;

    let mut pos = GTPU_HEADER_LEN;
    let (sequence, npdu_number, next_extension_type) = if has_extension || has_sequence || has_npdu
    {
        if pos + GTPU_OPTIONAL_LEN > end {
            return Err(GtpuError::LengthMismatch {
                declared: payload_length as usize,
                available: GTPU_OPTIONAL_LEN,
            });
        }
        let seq = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]);
        let npdu = bytes[pos + 2];
        let next = bytes[pos + 3];
        pos += GTPU_OPTIONAL_LEN;
        (Some(seq), Some(npdu), Some(next))
    } else {
        (None, None, None)
    };

    let ext_start = pos;
    // The next-type byte is only meaningful when E is set.
    let mut next_type = if has_extension {
        next_extension_type.unwrap_or(0)
    } else {
        0
    };
    while next_type != 0 {
        if pos >= end {
            return Err(GtpuError::BadExtension { offset: pos });
        }
        let units = bytes[pos] as usize;
        if units == 0 || pos + 4 * units > end {
            return Err(GtpuError::BadExtension { offset: pos });
        }
        pos += 4 * units;
        next_type = bytes[pos - 1];
    }
    let extension_headers = bytes[ext_start..pos].to_vec();
    let payload = bytes[pos..end].to_vec();

    let inner_flow = if message_type == MSG_TYPE_GPDU {
        parse_inner_flow(&payload)
    } else {
        None
    };

    Ok(GtpuPacket {
        header: GtpuHeader {
            version,
            protocol_type: true,
            has_extension,
            has_sequence,
            has_npdu,
            message_type,
            payload_length,
            teid,
            sequence,
            npdu_number,
            next_extension_type,
        },
        extension_headers,
        inner_flow,
        payload,
    })
}

/// Serializes a packet. The header's length field must agree with the
/// optional block, extension chain and payload actually carried.
pub fn encode_gtpu(packet: &GtpuPacket) -> Result<Vec<u8>, GtpuError> {
    let h = &packet.header;
    if h.version != 1 {
        return Err(GtpuError::BadVersion(h.version));
    }
    if !h.protocol_type {
        return Err(GtpuError::NotGtpu);
    }
    let block = h.has_optional_block();
    if block != (h.sequence.is_some() && h.npdu_number.is_some() && h.next_extension_type.is_some())
    {
        return Err(GtpuError::InconsistentHeader(
            "optional fields must be present exactly when E, S or PN is set",
        ));
    }
    if !packet.extension_headers.is_empty() && !h.has_extension {
        return Err(GtpuError::InconsistentHeader(
            "extension headers present without the E flag",
        ));
    }
    let body_len = packet.body_len()?;
    if body_len != h.payload_length {
        return Err(GtpuError::InconsistentHeader(
            "length field disagrees with carried bytes",
        ));
    }

    let mut out = Vec::with_capacity(GTPU_HEADER_LEN + body_len as usize);
    let mut flags = (1u8 << 5) | FLAG_PT;
    if h.has_extension {
        flags |= FLAG_E;
    }
    if h.has_sequence {
        flags |= FLAG_S;
    }
    if h.has_npdu {
        flags |= FLAG_PN;
    }
    out.push(flags);
    out.push(h.message_type);
    out.extend_from_slice(&body_len.to_be_bytes());
    out.extend_from_slice(&h.teid.0.to_be_bytes());
    if block {
        out.extend_from_slice(&h.sequence.unwrap_or(0).to_be_bytes());
        out.push(h.npdu_number.unwrap_or(0));
        out.push(h.next_extension_type.unwrap_or(0));
    }
    out.extend_from_slice(&packet.extension_headers);
    out.extend_from_slice(&packet.payload);
    Ok(out)
}

/// Extracts the 5-tuple of an IPv4 packet carrying UDP or TCP. Anything
/// else yields `None`.
pub fn parse_inner_flow(ip: &[u8]) -> Option<InnerFlowKey> {
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = (ip[0] & 0x0F) as usize * 4;
    if ihl < 20 || ip.len() < ihl + 4 {
        return None;
    }
    let protocol = ip[9];
    if protocol != IP_PROTO_UDP && protocol != IP_PROTO_TCP {
        return None;
    }
    // non-first fragments carry no transport header
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1FFF;
    if frag_offset != 0 {
        return None;
    }
    let l4 = &ip[ihl..];
    Some(InnerFlowKey {
        src_addr: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
        dst_addr: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        src_port: u16::from_be_bytes([l4[0], l4[1]]),
        dst_port: u16::from_be_bytes([l4[2], l4[3]]),
        protocol,
    })
}

/// Builds an IPv4/UDP datagram for `flow` around `body`. The UDP checksum
/// is left at zero (optional for IPv4).
pub fn build_ipv4_udp(flow: &InnerFlowKey, body: &[u8]) -> Vec<u8> {
    let udp_len = 8 + body.len();
    let total_len = 20 + udp_len;
    let mut out = Vec::with_capacity(total_len);
    out.push(0x45);
    out.push(0);
    out.extend_from_slice(&(total_len as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0, 0x40, 0]); // id 0, DF
    out.push(64);
    out.push(IP_PROTO_UDP);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&flow.src_addr.octets());
    out.extend_from_slice(&flow.dst_addr.octets());
    let csum = ipv4_checksum(&out[..20]);
    out[10..12].copy_from_slice(&csum.to_be_bytes());
    out.extend_from_slice(&flow.src_port.to_be_bytes());
    out.extend_from_slice(&flow.dst_port.to_be_bytes());
    out.extend_from_slice(&(udp_len as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(body);
    out
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

//! Simulated MIPI CSI-2 packet layer.
//!
//! Image lines travel as RAW10 long packets. Security tags ride in long
//! packets typed as RGB888 (0x24) whose payload starts with the 0x0B marker,
//! because the receiver drops the user-defined types 0x30..=0x37.
//!
//! Wire layout of one packet:
//!
//! ```text
//! [vc << 6 | data_type] [word_count lo] [word_count hi] [0x00]   header
//! payload (word_count bytes)                                     long packets only
//! [crc lo] [crc hi]                                              long packets only
//! ```
//!
//! Short packets (data types 0x00..=0x0F) carry the frame number in the
//! word-count field and nothing else.

use crc::{Crc, Table, CRC_16_IBM_3740};
use thiserror::Error;

use crate::sensor::{self, RawFrame};

pub const DT_FRAME_START: u8 = 0x00;
pub const DT_FRAME_END: u8 = 0x01;
/// RGB888; repurposed to carry security tags.
pub const DT_TAG: u8 = 0x24;
pub const DT_RAW10: u8 = 0x2B;
pub const TAG_MARKER: u8 = 0x0B;
pub const TAG_LEN: usize = 16;
/// marker + kind + sequence + tag
pub const TAG_ENVELOPE_LEN: usize = 1 + 1 + 8 + TAG_LEN;
pub const HEADER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Csi2Error {
    #[error(transparent)]
    Dimensions(#[from] sensor::SensorError),
    #[error("payload of {0} bytes exceeds the 16-bit word count")]
    PayloadTooLong(usize),
    #[error("virtual channel {0} out of range 0..=3")]
    VirtualChannel(u8),
    #[error("tag must be {TAG_LEN} bytes, got {0}")]
    TagLength(usize),
    #[error("tag packet payload does not start with marker 0x0B (found {0:#04x})")]
    MalformedTag(u8),
    #[error("tag envelope has invalid layout: {0}")]
    TagLayout(&'static str),
    #[error("checksum mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    Checksum { stored: u16, computed: u16 },
    #[error("wire stream truncated at offset {0}")]
    Truncated(usize),
    #[error("reserved header byte is {0:#04x}, expected 0x00")]
    Reserved(u8),
    #[error("unexpected data type {0:#04x}")]
    UnexpectedDataType(u8),
    #[error("frame structure: {0}")]
    Framing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub virtual_channel: u8,
    pub data_type: u8,
    /// Payload length for long packets, frame number for short packets.
    pub word_count: u16,
}

impl PacketHeader {
    pub fn is_short(&self) -> bool {
        self.data_type <= 0x0F
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csi2Packet {
    pub header: PacketHeader,
    pub payload: Vec<u8>,
    pub checksum: u16,
}

impl Csi2Packet {
    pub fn long(virtual_channel: u8, data_type: u8, payload: Vec<u8>) -> Result<Self, Csi2Error> {
        if virtual_channel > 3 {
            return Err(Csi2Error::VirtualChannel(virtual_channel));
        }
        let word_count =
            u16::try_from(payload.len()).map_err(|_| Csi2Error::PayloadTooLong(payload.len()))?;
        let checksum = payload_crc(&payload);
        Ok(Self {
            header: PacketHeader {
                virtual_channel,
                data_type: data_type & 0x3F,
                word_count,
            },
            payload,
            checksum,
        })
    }

    pub fn short(virtual_channel: u8, data_type: u8, frame_number: u16) -> Result<Self, Csi2Error> {
        if virtual_channel > 3 {
            return Err(Csi2Error::VirtualChannel(virtual_channel));
        }
        Ok(Self {
            header: PacketHeader {
                virtual_channel,
                data_type: data_type & 0x0F,
                word_count: frame_number,
            },
            payload: Vec::new(),
            checksum: payload_crc(&[]),
        })
    }

    pub fn is_short(&self) -> bool {
        self.header.is_short()
    }

    pub fn checksum_ok(&self) -> bool {
        payload_crc(&self.payload) == self.checksum
    }

    pub fn wire_len(&self) -> usize {
        if self.is_short() {
            HEADER_LEN
        } else {
            HEADER_LEN + self.payload.len() + 2
        }
    }

    pub fn write_wire(&self, out: &mut Vec<u8>) {
        let h = &self.header;
        out.push((h.virtual_channel << 6) | (h.data_type & 0x3F));
        out.extend_from_slice(&h.word_count.to_le_bytes());
        out.push(0x00);
        if !self.is_short() {
            out.extend_from_slice(&self.payload);
            out.extend_from_slice(&self.checksum.to_le_bytes());
        }
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_wire(&mut out);
        out
    }

    /// Parses one packet from the front of `wire`, returning it and the number
    /// of bytes consumed. The checksum is checked here.
    pub fn from_wire(wire: &[u8]) -> Result<(Self, usize), Csi2Error> {
        if wire.len() < HEADER_LEN {
            return Err(Csi2Error::Truncated(0));
        }
        let virtual_channel = wire[0] >> 6;
        let data_type = wire[0] & 0x3F;
        let word_count = u16::from_le_bytes([wire[1], wire[2]]);
        if wire[3] != 0 {
            return Err(Csi2Error::Reserved(wire[3]));
        }
        let header = PacketHeader {
            virtual_channel,
            data_type,
            word_count,
        };
        if header.is_short() {
            let packet = Self {
                header,
                payload: Vec::new(),
                checksum: payload_crc(&[]),
            };
            return Ok((packet, HEADER_LEN));
        }
        let len = word_count as usize;
        let total = HEADER_LEN + len + 2;
        if wire.len() < total {
            return Err(Csi2Error::Truncated(wire.len()));
        }
        let payload = wire[HEADER_LEN..HEADER_LEN + len].to_vec();
        let checksum = u16::from_le_bytes([wire[total - 2], wire[total - 1]]);
        let packet = Self {
            header,
            payload,
            checksum,
        };
        let computed = payload_crc(&packet.payload);
        if computed != checksum {
            return Err(Csi2Error::Checksum {
                stored: checksum,
                computed,
            });
        }
        Ok((packet, total))
    }
}

/// Parses a contiguous byte stream into packets.
pub fn parse_stream(mut wire: &[u8]) -> Result<Vec<Csi2Packet>, Csi2Error> {
    let mut packets = Vec::new();
    let mut offset = 0;
    while !wire.is_empty() {
        let (packet, used) = Csi2Packet::from_wire(wire).map_err(|e| match e {
            Csi2Error::Truncated(n) => Csi2Error::Truncated(offset + n),
            other => other,
        })?;
        packets.push(packet);
        wire = &wire[used..];
        offset += used;
    }
    Ok(packets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    /// one tag per line packet
    PerPacketSep,
    /// one tag per frame, sent before frame end
    PerFrameFsed,
}

impl TagKind {
    pub fn code(self) -> u8 {
        match self {
            Self::PerPacketSep => 0x00,
            Self::PerFrameFsed => 0x01,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x00 => Some(Self::PerPacketSep),
            0x01 => Some(Self::PerFrameFsed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagEnvelope {
    pub tag_kind: TagKind,
    pub sequence: u64,
    pub tag_bytes: [u8; TAG_LEN],
}

impl TagEnvelope {
    pub fn new(tag_kind: TagKind, sequence: u64, tag: &[u8]) -> Result<Self, Csi2Error> {
        let tag_bytes: [u8; TAG_LEN] = tag.try_into().map_err(|_| Csi2Error::TagLength(tag.len()))?;
        Ok(Self {
            tag_kind,
            sequence,
            tag_bytes,
        })
    }

    pub fn to_payload(&self) -> [u8; TAG_ENVELOPE_LEN] {
        let mut out = [0u8; TAG_ENVELOPE_LEN];
        out[0] = TAG_MARKER;
        out[1] = self.tag_kind.code();
        out[2..10].copy_from_slice(&self.sequence.to_be_bytes());
        out[10..].copy_from_slice(&self.tag_bytes);
        out
    }
}

pub fn encapsulate_tag(envelope: &TagEnvelope, virtual_channel: u8) -> Result<Csi2Packet, Csi2Error> {
    Csi2Packet::long(virtual_channel, DT_TAG, envelope.to_payload().to_vec())
}

/// `Ok(None)` means "not a tag": anything other than data type 0x24, or a
/// 0x24 packet that is plainly image data is never reinterpreted.
pub fn extract_tag(packet: &Csi2Packet) -> Result<Option<TagEnvelope>, Csi2Error> {
    if packet.header.data_type != DT_TAG {
        return Ok(None);
    }
    let payload = &packet.payload;
    match payload.first() {
        Some(&TAG_MARKER) => {}
        Some(&other) => return Err(Csi2Error::MalformedTag(other)),
        None => return Err(Csi2Error::TagLayout("empty payload")),
    }
    if payload.len() != TAG_ENVELOPE_LEN {
        return Err(Csi2Error::TagLayout("wrong envelope length"));
    }
    let tag_kind = TagKind::from_code(payload[1]).ok_or(Csi2Error::TagLayout("unknown tag kind"))?;
    let sequence = u64::from_be_bytes(payload[2..10].try_into().unwrap());
    let mut tag_bytes = [0u8; TAG_LEN];
    tag_bytes.copy_from_slice(&payload[10..]);
    Ok(Some(TagEnvelope {
        tag_kind,
        sequence,
        tag_bytes,
    }))
}

static CRC16: Crc<u16, Table<16>> = Crc::<u16, Table<16>>::new(&CRC_16_IBM_3740);

/// CRC-16/CCITT: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn payload_crc(payload: &[u8]) -> u16 {
    CRC16.checksum(payload)
}

/// Frame start, one RAW10 packet per line, frame end. The frame number is
/// the low 16 bits of the frame counter.
pub fn split_frame(frame: &RawFrame, virtual_channel: u8) -> Result<Vec<Csi2Packet>, Csi2Error> {
    sensor::check_line_dimensions(frame.width, frame.height)?;
    frame_packets(
        &frame.packed_bytes(),
        frame.width,
        frame.height,
        frame.frame_counter as u16,
        virtual_channel,
    )
}

/// Frames arbitrary line-structured bytes (plaintext or ciphertext).
pub fn frame_packets(
    body: &[u8],
    width: u32,
    height: u32,
    frame_number: u16,
    virtual_channel: u8,
) -> Result<Vec<Csi2Packet>, Csi2Error> {
    sensor::check_line_dimensions(width, height)?;
    let line = sensor::line_bytes(width);
    if body.len() != line * height as usize {
        return Err(Csi2Error::Framing("body length does not match dimensions"));
    }
    let mut packets = Vec::with_capacity(height as usize + 2);
    packets.push(Csi2Packet::short(virtual_channel, DT_FRAME_START, frame_number)?);
    for chunk in body.chunks_exact(line) {
        packets.push(Csi2Packet::long(virtual_channel, DT_RAW10, chunk.to_vec())?);
    }
    packets.push(Csi2Packet::short(virtual_channel, DT_FRAME_END, frame_number)?);
    Ok(packets)
}

/// One frame as seen by the receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedFrame {
    pub frame_number: u16,
    pub lines: Vec<Vec<u8>>,
    /// Tag envelopes in arrival order, with the number of lines received
    /// before each one.
    pub tags: Vec<(usize, TagEnvelope)>,
}

impl ReceivedFrame {
    pub fn body(&self) -> Vec<u8> {
        self.lines.concat()
    }

    /// Width implied by the line length, if the lines are uniform.
    pub fn dimensions(&self) -> Option<(u32, u32)> {
        let first = self.lines.first()?.len();
        if first == 0 || first % 5 != 0 || self.lines.iter().any(|l| l.len() != first) {
            return None;
        }
        Some(((first * 8 / 10) as u32, self.lines.len() as u32))
    }
}

/// Incremental receiver: feed packets, collect completed frames.
#[derive(Debug, Default)]
pub struct FrameAssembler {
    current: Option<ReceivedFrame>,
}

impl FrameAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns a frame when `packet` is a frame end closing an open frame.
    /// A structural error discards the frame in progress.
    pub fn push(&mut self, packet: &Csi2Packet) -> Result<Option<ReceivedFrame>, Csi2Error> {
        if !packet.checksum_ok() {
            self.current = None;
            return Err(Csi2Error::Checksum {
                stored: packet.checksum,
                computed: payload_crc(&packet.payload),
            });
        }
        match packet.header.data_type {
            DT_FRAME_START => {
                let restarted = self.current.is_some();
                self.current = Some(ReceivedFrame {
                    frame_number: packet.header.word_count,
                    lines: Vec::new(),
                    tags: Vec::new(),
                });
                if restarted {
                    return Err(Csi2Error::Framing("frame start inside an open frame"));
                }
                Ok(None)
            }
            DT_FRAME_END => {
                let frame = self
                    .current
                    .take()
                    .ok_or(Csi2Error::Framing("frame end without frame start"))?;
                if frame.frame_number != packet.header.word_count {
                    return Err(Csi2Error::Framing("frame end number differs from frame start"));
                }
                Ok(Some(frame))
            }
            DT_RAW10 => {
                let frame = self
                    .current
                    .as_mut()
                    .ok_or(Csi2Error::Framing("line packet outside a frame"))?;
                frame.lines.push(packet.payload.clone());
                Ok(None)
            }
            DT_TAG => {
                let envelope = match extract_tag(packet) {
                    Ok(Some(env)) => env,
                    Ok(None) => unreachable!("data type checked above"),
                    Err(e) => {
                        self.current = None;
                        return Err(e);
                    }
                };
                let frame = self
                    .current
                    .as_mut()
                    .ok_or(Csi2Error::Framing("tag packet outside a frame"))?;
                frame.tags.push((frame.lines.len(), envelope));
                Ok(None)
            }
            other => {
                self.current = None;
                Err(Csi2Error::UnexpectedDataType(other))
            }
        }
    }
}

/// Reassembles exactly one frame from a packet sequence.
pub fn reassemble(packets: &[Csi2Packet]) -> Result<ReceivedFrame, Csi2Error> {
    let mut assembler = FrameAssembler::new();
    let mut done = None;
    for packet in packets {
        if done.is_some() {
            return Err(Csi2Error::Framing("packets after frame end"));
        }
        done = assembler.push(packet)?;
    }
    done.ok_or(Csi2Error::Framing("missing frame end"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{generate_frame, BayerOrder};

    fn bitwise_crc(data: &[u8]) -> u16 {
        let mut crc: u16 = 0xFFFF;
        for &byte in data {
            for i in (0..8).rev() {
                let bit = (byte >> i) & 1;
                let top = (crc >> 15) as u8 & 1;
                crc <<= 1;
                if top ^ bit == 1 {
                    crc ^= 0x1021;
                }
            }
        }
        crc
    }

    #[test]
    fn crc_matches_bit_serial_oracle() {
        assert_eq!(payload_crc(&[]), 0xFFFF);
        assert_eq!(payload_crc(&[0x00]), bitwise_crc(&[0x00]));
        assert_eq!(payload_crc(&[0x00]), 0xE1F0);
        assert_eq!(payload_crc(b"123456789"), 0x29B1);
        let data: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
        assert_eq!(payload_crc(&data), bitwise_crc(&data));
    }

    #[test]
    fn split_default_resolution() {
        let frame = RawFrame::new(1920, 1232, BayerOrder::Rggb, vec![0; 1920 * 1232], 1).unwrap();
        let packets = split_frame(&frame, 0).unwrap();
        assert_eq!(packets.len(), 1232 + 2);
        assert_eq!(packets[0].header.data_type, DT_FRAME_START);
        assert_eq!(packets.last().unwrap().header.data_type, DT_FRAME_END);
        assert!(packets[1..1233]
            .iter()
            .all(|p| p.header.data_type == DT_RAW10 && p.payload.len() == 2400 && p.header.word_count == 2400));
    }

    #[test]
    fn split_zero_line() {
        let frame = RawFrame::new(4, 1, BayerOrder::Rggb, vec![0; 4], 0).unwrap();
        let packets = split_frame(&frame, 0).unwrap();
        assert_eq!(packets.len(), 3);
        assert_eq!(packets[1].payload, vec![0u8; 5]);
    }

    #[test]
    fn split_rejects_bad_width() {
        let frame = RawFrame {
            width: 6,
            height: 2,
            bayer_order: BayerOrder::Rggb,
            samples: vec![0; 12],
            frame_counter: 0,
        };
        assert!(matches!(split_frame(&frame, 0), Err(Csi2Error::Dimensions(_))));
    }

    #[test]
    fn split_reassemble_round_trip() {
        let frame = generate_frame(3, 64, 48, 9, BayerOrder::Rggb).unwrap();
        let packets = split_frame(&frame, 1).unwrap();
        let received = reassemble(&packets).unwrap();
        assert_eq!(received.frame_number, 9);
        assert_eq!(received.dimensions(), Some((64, 48)));
        assert_eq!(received.body(), frame.packed_bytes());
    }

    #[test]
    fn tag_encoding_examples() {
        let env = TagEnvelope::new(TagKind::PerPacketSep, 0, &[0u8; 16]).unwrap();
        let p = encapsulate_tag(&env, 0).unwrap();
        assert_eq!(p.header.data_type, 0x24);
        assert_eq!(p.header.word_count, 26);
        let mut expected = vec![0x0B, 0x00];
        expected.extend_from_slice(&[0u8; 24]);
        assert_eq!(p.payload, expected);

        let env = TagEnvelope::new(TagKind::PerFrameFsed, 1, &[0xAA; 16]).unwrap();
        let p = encapsulate_tag(&env, 0).unwrap();
        assert_eq!(p.payload[1], 0x01);
        assert_eq!(&p.payload[2..10], &[0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(extract_tag(&p).unwrap(), Some(env));

        assert_eq!(
            TagEnvelope::new(TagKind::PerFrameFsed, 1, &[0; 15]),
            Err(Csi2Error::TagLength(15))
        );
    }

    #[test]
    fn extract_tag_classification() {
        let image = Csi2Packet::long(0, DT_RAW10, vec![0x0B; 26]).unwrap();
        assert_eq!(extract_tag(&image), Ok(None));
        let mut bad = vec![0xFF];
        bad.extend_from_slice(&[0; 25]);
        let wrong = Csi2Packet::long(0, DT_TAG, bad).unwrap();
        assert_eq!(extract_tag(&wrong), Err(Csi2Error::MalformedTag(0xFF)));
    }

    #[test]
    fn wire_layout_and_parse() {
        let p = Csi2Packet::long(2, DT_RAW10, vec![1, 2, 3, 4, 5]).unwrap();
        let wire = p.to_wire();
        assert_eq!(&wire[..4], &[0x80 | 0x2B, 5, 0, 0]);
        assert_eq!(&wire[9..], &p.checksum.to_le_bytes());
        let fs = Csi2Packet::short(0, DT_FRAME_START, 0x1234).unwrap();
        assert_eq!(fs.to_wire(), vec![0x00, 0x34, 0x12, 0x00]);

        let mut stream = fs.to_wire();
        stream.extend(wire.clone());
        assert_eq!(parse_stream(&stream).unwrap(), vec![fs, p]);

        let mut corrupt = wire.clone();
        corrupt[6] ^= 0x10;
        assert!(matches!(
            Csi2Packet::from_wire(&corrupt),
            Err(Csi2Error::Checksum { .. })
        ));
        assert!(matches!(
            Csi2Packet::from_wire(&wire[..wire.len() - 1]),
            Err(Csi2Error::Truncated(_))
        ));
    }

    #[test]
    fn tags_do_not_disturb_image() {
        let frame = generate_frame(8, 32, 8, 2, BayerOrder::Rggb).unwrap();
        let plain = split_frame(&frame, 0).unwrap();
        let mut tagged = Vec::new();
        for (i, p) in plain.iter().enumerate() {
            if p.header.data_type == DT_FRAME_END {
                let env = TagEnvelope::new(TagKind::PerFrameFsed, 2, &[7; 16]).unwrap();
                tagged.push(encapsulate_tag(&env, 0).unwrap());
            }
            tagged.push(p.clone());
            if p.header.data_type == DT_RAW10 {
                let env = TagEnvelope::new(TagKind::PerPacketSep, 2, &[i as u8; 16]).unwrap();
                tagged.push(encapsulate_tag(&env, 0).unwrap());
            }
        }
        let a = reassemble(&plain).unwrap();
        let b = reassemble(&tagged).unwrap();
        assert_eq!(a.lines, b.lines);
        assert_eq!(b.tags.len(), 9);
        assert_eq!(b.tags[0].0, 1);
        assert_eq!(b.tags.last().unwrap().0, 8);
    }

    #[test]
    fn assembler_rejects_structure_errors() {
        let fe = Csi2Packet::short(0, DT_FRAME_END, 0).unwrap();
        assert!(reassemble(&[fe]).is_err());
        let fs = Csi2Packet::short(0, DT_FRAME_START, 0).unwrap();
        assert!(reassemble(std::slice::from_ref(&fs)).is_err());
        let fe1 = Csi2Packet::short(0, DT_FRAME_END, 1).unwrap();
        assert!(reassemble(&[fs, fe1]).is_err());
        let mut bad = Csi2Packet::long(0, DT_RAW10, vec![1, 2, 3]).unwrap();
        bad.payload[0] ^= 1;
        assert!(!bad.checksum_ok());
        let mut asm = FrameAssembler::new();
        assert!(matches!(asm.push(&bad), Err(Csi2Error::Checksum { .. })));
    }
}

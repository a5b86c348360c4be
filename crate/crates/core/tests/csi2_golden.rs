//! Packet wire dumps checked against hex files produced by an independent
//! bit-serial encoder.

use std::fs;
use std::path::Path;

use sra_core::csi2::{
    encapsulate_tag, extract_tag, Csi2Packet, TagEnvelope, TagKind, DT_FRAME_END, DT_FRAME_START, DT_RAW10,
};
use sra_core::sensor::{pack_raw10, unpack_raw10};

fn golden(name: &str) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/vectors").join(name);
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let hex: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.chars().filter(|c| !c.is_whitespace()))
        .collect();
    hex::decode(hex).unwrap()
}

fn check(name: &str, packet: Csi2Packet) {
    let expected = golden(name);
    assert_eq!(hex::encode(packet.to_wire()), hex::encode(&expected), "{name}");
    let (parsed, used) = Csi2Packet::from_wire(&expected).unwrap();
    assert_eq!(used, expected.len());
    assert_eq!(parsed, packet);
}

#[test]
fn short_packets() {
    check("frame_start_vc1_fn7.hex", Csi2Packet::short(1, DT_FRAME_START, 7).unwrap());
    check("frame_end_vc0_fn258.hex", Csi2Packet::short(0, DT_FRAME_END, 258).unwrap());
}

#[test]
fn raw10_packets() {
    check(
        "raw10_check_string.hex",
        Csi2Packet::long(0, DT_RAW10, b"123456789".to_vec()).unwrap(),
    );
    let packed = pack_raw10(&[1023, 0, 341, 682]).unwrap();
    check("raw10_one_group_vc2.hex", Csi2Packet::long(2, DT_RAW10, packed.clone()).unwrap());
    assert_eq!(unpack_raw10(&packed).unwrap(), vec![1023, 0, 341, 682]);
}

#[test]
fn tag_packets() {
    let frame_tag: Vec<u8> = (0..16).collect();
    let envelope = TagEnvelope::new(TagKind::PerFrameFsed, 0x0102_0304_0506_0708, &frame_tag).unwrap();
    let packet = encapsulate_tag(&envelope, 3).unwrap();
    check("tag_fsed_seq_0102030405060708.hex", packet.clone());
    assert_eq!(extract_tag(&packet).unwrap(), Some(envelope));

    let envelope = TagEnvelope::new(TagKind::PerPacketSep, 5, &[0xA5; 16]).unwrap();
    check("tag_sep_seq_5.hex", encapsulate_tag(&envelope, 0).unwrap());
}

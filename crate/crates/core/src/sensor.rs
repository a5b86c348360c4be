//! Simulated IMX219-class sensor: Bayer RAW10 frames and the MIPI RAW10
//! packing codec (4 pixels -> 5 bytes).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest value a 10-bit sample can take.
pub const MAX_SAMPLE: u16 = 1023;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SensorError {
    #[error("invalid frame dimensions {width}x{height}: {reason}")]
    Dimensions {
        width: u32,
        height: u32,
        reason: &'static str,
    },
    #[error("sample count {0} is not a multiple of 4")]
    SampleCount(usize),
    #[error("packed length {0} is not a multiple of 5")]
    PackedLength(usize),
    #[error("sample {value} at index {index} exceeds 10 bits")]
    SampleRange { index: usize, value: u16 },
    #[error("frame header: {0}")]
    Header(String),
    #[error("io: {0}")]
    Io(String),
}

/// Colour filter layout of the top-left 2x2 quad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BayerOrder {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

/// Colour channel index used by the CFA lookup and demosaic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Red = 0,
    Green = 1,
    Blue = 2,
}

impl BayerOrder {
    pub const ALL: [BayerOrder; 4] = [Self::Rggb, Self::Bggr, Self::Grbg, Self::Gbrg];

    pub fn code(self) -> u8 {
        match self {
            Self::Rggb => 0,
            Self::Bggr => 1,
            Self::Grbg => 2,
            Self::Gbrg => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.code() == code)
    }

    /// Channel sampled at pixel (x, y).
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> Channel {
        use Channel::*;
        let quad = match self {
            Self::Rggb => [Red, Green, Green, Blue],
            Self::Bggr => [Blue, Green, Green, Red],
            Self::Grbg => [Green, Red, Blue, Green],
            Self::Gbrg => [Green, Blue, Red, Green],
        };
        quad[(y & 1) * 2 + (x & 1)]
    }
}

impl fmt::Display for BayerOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rggb => "RGGB",
            Self::Bggr => "BGGR",
            Self::Grbg => "GRBG",
            Self::Gbrg => "GBRG",
        })
    }
}

impl FromStr for BayerOrder {
    type Err = SensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Self::Rggb),
            "BGGR" => Ok(Self::Bggr),
            "GRBG" => Ok(Self::Grbg),
            "GBRG" => Ok(Self::Gbrg),
            other => Err(SensorError::Header(format!("unknown bayer order {other:?}"))),
        }
    }
}

/// One Bayer RAW10 frame, samples row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub width: u32,
    pub height: u32,
    pub bayer_order: BayerOrder,
    pub samples: Vec<u16>,
    pub frame_counter: u64,
}

impl fmt::Debug for RawFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RawFrame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("bayer_order", &self.bayer_order)
            .field("frame_counter", &self.frame_counter)
            .field("samples", &format_args!("[{} samples]", self.samples.len()))
            .finish()
    }
}

/// Width must be a multiple of 4 so each line packs into whole RAW10 groups.
pub fn check_line_dimensions(width: u32, height: u32) -> Result<(), SensorError> {
    let err = |reason| SensorError::Dimensions {
        width,
        height,
        reason,
    };
    if width == 0 || height == 0 {
        return Err(err("dimensions must be positive"));
    }
    if !width.is_multiple_of(4) {
        return Err(err("width must be divisible by 4"));
    }
    Ok(())
}

/// Line constraints plus even dimensions so every pixel sits in a full Bayer quad.
pub fn check_sensor_dimensions(width: u32, height: u32) -> Result<(), SensorError> {
    check_line_dimensions(width, height)?;
    if height < 2 || !height.is_multiple_of(2) {
        return Err(SensorError::Dimensions {
            width,
            height,
            reason: "height must be even and at least 2",
        });
    }
    Ok(())
}

/// Bytes of one packed RAW10 line.
pub fn line_bytes(width: u32) -> usize {
    width as usize * 10 / 8
}

/// Bytes of a packed RAW10 frame.
pub fn packed_len(width: u32, height: u32) -> usize {
    line_bytes(width) * height as usize
}

impl RawFrame {
    pub fn new(
        width: u32,
        height: u32,
        bayer_order: BayerOrder,
        samples: Vec<u16>,
        frame_counter: u64,
    ) -> Result<Self, SensorError> {
        check_line_dimensions(width, height)?;
        if samples.len() != width as usize * height as usize {
            return Err(SensorError::Dimensions {
                width,
                height,
                reason: "sample count does not match dimensions",
            });
        }
        if let Some((index, &value)) = samples.iter().enumerate().find(|(_, &v)| v > MAX_SAMPLE) {
            return Err(SensorError::SampleRange { index, value });
        }
        Ok(Self {
            width,
            height,
            bayer_order,
            samples,
            frame_counter,
        })
    }

    pub fn packed_bytes(&self) -> Vec<u8> {
        pack_raw10(&self.samples).expect("RawFrame invariants guarantee packable samples")
    }

    pub fn from_packed(
        width: u32,
        height: u32,
        bayer_order: BayerOrder,
        frame_counter: u64,
        packed: &[u8],
    ) -> Result<Self, SensorError> {
        check_line_dimensions(width, height)?;
        if packed.len() != packed_len(width, height) {
            return Err(SensorError::PackedLength(packed.len()));
        }
        let samples = unpack_raw10(packed)?;
        Ok(Self {
            width,
            height,
            bayer_order,
            samples,
            frame_counter,
        })
    }
}

/// Seeded pseudorandom RAW10 field. Content depends on (seed, width, height)
/// only; the counter is stamped on the frame without altering pixels.
pub fn generate_frame(
    seed: u64,
    width: u32,
    height: u32,
    counter: u64,
    bayer_order: BayerOrder,
) -> Result<RawFrame, SensorError> {
    check_sensor_dimensions(width, height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((width as u64) << 32 | height as u64).rotate_left(17));
    let n = width as usize * height as usize;
    let mut samples = Vec::with_capacity(n);
    let mut word = [0u8; 8];
    while samples.len() < n {
        rng.fill_bytes(&mut word);
        let bits = u64::from_le_bytes(word);
        // six 10-bit samples per 64-bit draw
        for k in 0..6 {
            if samples.len() == n {
                break;
            }
            samples.push(((bits >> (k * 10)) & 0x3FF) as u16);
        }
    }
    Ok(RawFrame {
        width,
        height,
        bayer_order,
        samples,
        frame_counter: counter,
    })
}

/// Packs 10-bit samples: four high bytes, then one byte holding the four
/// 2-bit remainders with pixel i at bits 2i..2i+1.
pub fn pack_raw10(samples: &[u16]) -> Result<Vec<u8>, SensorError> {
    if !samples.len().is_multiple_of(4) {
        return Err(SensorError::SampleCount(samples.len()));
    }
    let mut out = Vec::with_capacity(samples.len() / 4 * 5);
    for (group_idx, group) in samples.chunks_exact(4).enumerate() {
        let mut low = 0u8;
        for (i, &s) in group.iter().enumerate() {
            if s > MAX_SAMPLE {
                return Err(SensorError::SampleRange {
                    index: group_idx * 4 + i,
                    value: s,
                });
            }
            out.push((s >> 2) as u8);
            low |= ((s & 0x3) as u8) << (2 * i);
        }
        out.push(low);
    }
    Ok(out)
}

pub fn unpack_raw10(bytes: &[u8]) -> Result<Vec<u16>, SensorError> {
    if !bytes.len().is_multiple_of(5) {
        return Err(SensorError::PackedLength(bytes.len()));
    }
    let mut out = Vec::with_capacity(bytes.len() / 5 * 4);
    for group in bytes.chunks_exact(5) {
        let low = group[4];
        for (i, &high) in group[..4].iter().enumerate() {
            out.push(((high as u16) << 2) | ((low >> (2 * i)) & 0x3) as u16);
        }
    }
    Ok(out)
}

/// Writes `<stem>.raw10` (packed samples) and `<stem>.txt` (key=value header).
pub fn save_raw_frame(frame: &RawFrame, bin_path: &Path, header_path: &Path) -> Result<(), SensorError> {
    let header = format!(
        "width={}\nheight={}\nbayer_order={}\ncounter={}\n",
        frame.width, frame.height, frame.bayer_order, frame.frame_counter
    );
    fs::write(bin_path, frame.packed_bytes()).map_err(|e| SensorError::Io(e.to_string()))?;
    fs::write(header_path, header).map_err(|e| SensorError::Io(e.to_string()))?;
    Ok(())
}

/// Loads a capture stored as packed RAW10 plus a key=value header file.
pub fn load_raw_frame(bin_path: &Path, header_path: &Path) -> Result<RawFrame, SensorError> {
    let header = fs::read_to_string(header_path).map_err(|e| SensorError::Io(e.to_string()))?;
    let mut width = None;
    let mut height = None;
    let mut order = BayerOrder::default();
    let mut counter = 0u64;
    for line in header.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SensorError::Header(format!("expected key=value, got {line:?}")))?;
        let value = value.trim();
        let num = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| SensorError::Header(format!("bad number for {key}: {v:?}")))
        };
        match key.trim() {
            "width" => width = Some(num(value)? as u32),
            "height" => height = Some(num(value)? as u32),
            "bayer_order" => order = value.parse()?,
            "counter" => counter = num(value)?,
            other => return Err(SensorError::Header(format!("unknown key {other:?}"))),
        }
    }
    let width = width.ok_or_else(|| SensorError::Header("missing width".into()))?;
    let height = height.ok_or_else(|| SensorError::Header("missing height".into()))?;
    let packed = fs::read(bin_path).map_err(|e| SensorError::Io(e.to_string()))?;
    RawFrame::from_packed(width, height, order, counter, &packed)
}

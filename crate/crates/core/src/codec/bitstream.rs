//! Container layout. All multi-byte integers are big-endian:
//!
//! ```text
//! "DSC1" | version u8 | flags u8 | width u16 | height u16 | qp_r f32 | qp_l f32
//!        | max_disparity u16 | w_prior f32 | len_right u32 | len_disp u32
//!        | len_left u32 | right payload | disparity payload | left payload
//! ```
//!
//! Flag bits: 0 use_disparity, 1 use_prior, 2 align_prior, 3 use_prn, 4 color.

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 36;

pub const FLAG_DISPARITY: u8 = 1 << 0;
pub const FLAG_PRIOR: u8 = 1 << 1;
pub const FLAG_ALIGN: u8 = 1 << 2;
pub const FLAG_PRN: u8 = 1 << 3;
pub const FLAG_COLOR: u8 = 1 << 4;
const KNOWN_FLAGS: u8 = 0x1F;

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub flags: u8,
    pub width: u16,
    pub height: u16,
    pub qp_r: f32,
    pub qp_l: f32,
    pub max_disparity: u16,
    pub w_prior: f32,
}

impl Header {
    pub fn has(&self, flag: u8) -> bool {
        self.flags & flag != 0
    }
}

/// A parsed stream: header plus the three substreams.
#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub header: Header,
    pub right: Vec<u8>,
    pub disparity: Vec<u8>,
    pub left: Vec<u8>,
}

impl Bitstream {
    pub fn total_len(&self) -> usize {
        HEADER_LEN + self.right.len() + self.disparity.len() + self.left.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.total_len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(h.flags);
        out.extend_from_slice(&h.width.to_be_bytes());
        out.extend_from_slice(&h.height.to_be_bytes());
        out.extend_from_slice(&h.qp_r.to_be_bytes());
        out.extend_from_slice(&h.qp_l.to_be_bytes());
        out.extend_from_slice(&h.max_disparity.to_be_bytes());
        out.extend_from_slice(&h.w_prior.to_be_bytes());
        for len in [self.right.len(), self.disparity.len(), self.left.len()] {
            out.extend_from_slice(&(len as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.right);
        out.extend_from_slice(&self.disparity);
        out.extend_from_slice(&self.left);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < HEADER_LEN {
            return Err(Error::BadBitstream(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                data.len()
            )));
        }
        if &data[..4] != MAGIC {
            return Err(Error::BadBitstream("bad magic".into()));
        }
        if data[4] != VERSION {
            return Err(Error::BadBitstream(format!("unsupported version {}", data[4])));
        }
        let flags = data[5];
        if flags & !KNOWN_FLAGS != 0 {
            return Err(Error::BadBitstream(format!("unknown flag bits {flags:#04x}")));
        }
        let u16_at = |i: usize| u16::from_be_bytes([data[i], data[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes([data[i], data[i + 1], data[i + 2], data[i + 3]]);
        let f32_at = |i: usize| f32::from_bits(u32_at(i));
        let header = Header {
            flags,
            width: u16_at(6),
            height: u16_at(8),
            qp_r: f32_at(10),
            qp_l: f32_at(14),
            max_disparity: u16_at(18),
            w_prior: f32_at(20),
        };
        let lens = [u32_at(24) as usize, u32_at(28) as usize, u32_at(32) as usize];
        let declared: usize = lens.iter().sum();
        let actual = data.len() - HEADER_LEN;
        if declared != actual {
            return Err(Error::LengthMismatch(format!("substreams declare {declared} bytes, payload holds {actual}")));
        }
        let mut pos = HEADER_LEN;
        let mut take = |n: usize| {
            let s = data[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let right = take(lens[0]);
        let disparity = take(lens[1]);
        let left = take(lens[2]);
        Ok(Self { header, right, disparity, left })
    }
}

use crate::error::{EccoError, Result};

/// Fixed-capacity bit buffer. Bit `b` lives in byte `b / 8` at position
/// `b % 8` counted from the least-significant bit. Multi-bit values are
/// stored least-significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    bytes: Vec<u8>,
    capacity: usize,
    cursor: usize,
}

impl BitStream {
    pub fn new(capacity_bits: usize) -> Self {
        Self {
            bytes: vec![0; capacity_bits.div_ceil(8)],
            capacity: capacity_bits,
            cursor: 0,
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self {
            bytes: bytes.to_vec(),
            capacity: bytes.len() * 8,
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn seek(&mut self, pos: usize) {
        self.cursor = pos;
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    fn check(&self, pos: usize, width: u32) -> Result<()> {
        if width > 64 || pos + width as usize > self.capacity {
            return Err(EccoError::BlockOverflow {
                cursor: pos,
                width,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    pub fn bit(&self, pos: usize) -> bool {
        (self.bytes[pos / 8] >> (pos % 8)) & 1 == 1
    }

    pub fn set_bit(&mut self, pos: usize, on: bool) {
        let mask = 1u8 << (pos % 8);
        if on {
            self.bytes[pos / 8] |= mask;
        } else {
            self.bytes[pos / 8] &= !mask;
        }
    }

    /// Writes `width` bits of `value` at absolute position `pos` without moving the cursor.
    pub fn put_bits(&mut self, pos: usize, value: u64, width: u32) -> Result<()> {
        self.check(pos, width)?;
        if width < 64 && value >> width != 0 {
            return Err(EccoError::ValueTooWide { value, width });
        }
        for j in 0..width as usize {
            self.set_bit(pos + j, (value >> j) & 1 == 1);
        }
        Ok(())
    }

    pub fn get_bits(&self, pos: usize, width: u32) -> Result<u64> {
        self.check(pos, width)?;
        let mut v = 0u64;
        for j in 0..width as usize {
            v |= (self.bit(pos + j) as u64) << j;
        }
        Ok(v)
    }

    pub fn write_bits(&mut self, value: u64, width: u32) -> Result<()> {
        self.put_bits(self.cursor, value, width)?;
        self.cursor += width as usize;
        Ok(())
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        let v = self.get_bits(self.cursor, width)?;
        self.cursor += width as usize;
        Ok(v)
    }
}

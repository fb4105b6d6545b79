//! Unsigned LEB128 varints and zigzag mapping for signed values.
//!
//! Shared by the mask run-length coder and the TINY coefficient stream.

/// Append `value` as an unsigned LEB128 varint.
pub fn write_uvarint(out: &mut Vec<u8>, mut value: u64) {
    loop {
        let byte = (value & 0x7f) as u8;
        value >>= 7;
        if value == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// Read an unsigned LEB128 varint from `data` starting at `pos`.
///
/// Returns the value and the number of bytes consumed, or `None` when the
/// input ends mid-varint or the value would not fit in a u64.
pub fn read_uvarint(data: &[u8], pos: usize) -> Option<(u64, usize)> {
    let mut value: u64 = 0;
    let mut shift = 0u32;
    for (i, &byte) in data.iter().skip(pos).enumerate() {
        if shift >= 64 || (shift == 63 && byte > 1) {
            return None;
        }
        value |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Some((value, i + 1));
        }
        shift += 7;
    }
    None
}

/// Map a signed value onto the unsigned varint domain (0, -1, 1, -2, ...).
pub fn zigzag(value: i64) -> u64 {
    ((value << 1) ^ (value >> 63)) as u64
}

/// Inverse of [`zigzag`].
pub fn unzigzag(value: u64) -> i64 {
    ((value >> 1) as i64) ^ -((value & 1) as i64)
}

pub fn write_ivarint(out: &mut Vec<u8>, value: i64) {
    write_uvarint(out, zigzag(value));
}

pub fn read_ivarint(data: &[u8], pos: usize) -> Option<(i64, usize)> {
    read_uvarint(data, pos).map(|(v, n)| (unzigzag(v), n))
}

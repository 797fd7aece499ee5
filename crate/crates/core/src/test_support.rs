//! Helpers shared by unit tests.

/// Bitwise reflected CRC-32 (poly 0xEDB88320), independent of the table-driven path.
pub fn reference_crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

pub fn reference_crc32_hex(bytes: &[u8]) -> String {
    format!("{:08x}", reference_crc32(bytes))
}

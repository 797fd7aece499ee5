//! CRC-32/ISO-HDLC checksums rendered as 8 lowercase hex characters.

/// Checksum of `bytes` as 8 lowercase hex chars.
pub fn crc32(bytes: &[u8]) -> String {
    crc32_hex(crc32fast::hash(bytes))
}

pub fn crc32_hex(value: u32) -> String {
    format!("{value:08x}")
}

/// Parses an 8-char lowercase hex checksum.
pub fn parse_crc32(text: &str) -> Option<u32> {
    if text.len() != 8 || !text.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return None;
    }
    u32::from_str_radix(text, 16).ok()
}

/// Incremental checksum for payloads that arrive in pieces.
#[derive(Default, Clone)]
pub struct Crc32 {
    inner: crc32fast::Hasher,
}

impl Crc32 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub fn finish_hex(self) -> String {
        crc32_hex(self.inner.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::reference_crc32;

    #[test]
    fn empty_input() {
        assert_eq!(crc32(b""), "00000000");
    }

    #[test]
    fn standard_check_value() {
        assert_eq!(reference_crc32(b"123456789"), 0xcbf4_3926);
        assert_eq!(crc32(b"123456789"), "cbf43926");
    }

    #[test]
    fn incremental_matches_one_shot() {
        let data: Vec<u8> = (0..10_000u32).map(|i| (i * 31 % 251) as u8).collect();
        let mut h = Crc32::new();
        for piece in data.chunks(777) {
            h.update(piece);
        }
        assert_eq!(h.finish_hex(), crc32(&data));
    }

    #[test]
    fn parse_rejects_uppercase_and_short() {
        assert_eq!(parse_crc32("cbf43926"), Some(0xcbf43926));
        assert_eq!(parse_crc32("CBF43926"), None);
        assert_eq!(parse_crc32("cbf4392"), None);
    }

    proptest::proptest! {
        #[test]
        fn agrees_with_bitwise_reference(data in proptest::collection::vec(proptest::num::u8::ANY, 0..2048)) {
            proptest::prop_assert_eq!(crc32(&data), format!("{:08x}", reference_crc32(&data)));
        }

        #[test]
        fn single_bit_flip_changes_value(
            data in proptest::collection::vec(proptest::num::u8::ANY, 1..4096),
            pos in proptest::num::usize::ANY,
            bit in 0u8..8,
        ) {
            let mut flipped = data.clone();
            let i = pos % flipped.len();
            flipped[i] ^= 1 << bit;
            proptest::prop_assert_ne!(crc32(&data), crc32(&flipped));
        }
    }
}

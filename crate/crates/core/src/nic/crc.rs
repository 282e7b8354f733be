/// IEEE 802.3 CRC-32: reflected, polynomial 0x04C11DB7, initial value and
/// final XOR 0xFFFFFFFF.
pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}


#[cfg(test)]
mod tests {
    use super::oracle::crc32_bitwise;
    use super::*;

    #[test]
    fn oracle_vectors() {
        assert_eq!(crc32_bitwise(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32_bitwise(b""), 0);
        assert_eq!(crc32_bitwise(&[0]), 0xD202_EF8D);
    }

    #[test]
    fn fixed_vectors() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
        assert_eq!(crc32(&[0]), 0xD202_EF8D);
    }

    proptest::proptest! {
        #[test]
        fn matches_bitwise_oracle(data in proptest::collection::vec(proptest::num::u8::ANY, 0..2048)) {
            proptest::prop_assert_eq!(crc32(&data), crc32_bitwise(&data));
        }
    }
}

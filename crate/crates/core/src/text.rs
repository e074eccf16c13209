use alloc::string::String;
use alloc::vec::Vec;

/// Lowercases a whitespace token and trims non-alphanumeric characters
/// from both ends. Inner punctuation ("don't", "re-run") is kept.
pub(crate) fn normalize_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Unicode-whitespace split followed by [`normalize_token`]; tokens that
/// normalize to nothing are dropped.
pub(crate) fn normalized_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_token)
        .filter(|t| !t.is_empty())
        .collect()
}

/// 64-bit FNV-1a. Used wherever a hash must be identical on every platform.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

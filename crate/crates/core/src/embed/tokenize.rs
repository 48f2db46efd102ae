/// Hash space for model-name tokens.
pub const NAME_BUCKETS: usize = 32_768;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Splits a display name on non-alphanumerics and lower→upper case
/// boundaries, lowercasing every piece.
pub fn name_tokens(display_name: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev_lower = false;
    for c in display_name.chars() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur.extend(c.to_lowercase());
        prev_lower = c.is_lowercase();
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token-hash indices of a display name in `0..buckets`.
pub fn tokenize_name_with(display_name: &str, buckets: usize) -> Vec<usize> {
    name_tokens(display_name).iter().map(|t| (fnv1a64(t.as_bytes()) % buckets as u64) as usize).collect()
}

pub fn tokenize_name(display_name: &str) -> Vec<usize> {
    tokenize_name_with(display_name, NAME_BUCKETS)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Byte-at-a-time FNV-1a written from the published constants, used as
    /// an independent reference.
    fn fnv_reference(s: &str) -> u64 {
        let mut h: u64 = 14695981039346656037;
        for b in s.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(1099511628211);
        }
        h
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn llama_name() {
        assert_eq!(name_tokens("Llama-3.1-8B"), vec!["llama", "3", "1", "8b"]);
        let idx = tokenize_name("Llama-3.1-8B");
        let expect: Vec<usize> = ["llama", "3", "1", "8b"].iter().map(|t| (fnv_reference(t) % 32768) as usize).collect();
        assert_eq!(idx, expect);
    }

    #[test]
    fn camel_case_and_empty() {
        assert_eq!(name_tokens("QwenVL"), vec!["qwen", "vl"]);
        assert_eq!(name_tokens("GPTNeoX"), vec!["gptneo", "x"]);
        assert!(tokenize_name("").is_empty());
        assert!(tokenize_name("--/..").is_empty());
        assert_eq!(name_tokens("org/bert_base"), vec!["org", "bert", "base"]);
    }
}

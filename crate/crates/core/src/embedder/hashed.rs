//! Signed feature hashing of character n-grams.

use super::normalize_l2;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche so low bits (bucket) and the top bit (sign) are independent
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Lowercased, whitespace-collapsed text padded with one space on each side.
fn prepare(text: &str) -> Vec<char> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.is_empty() {
        return Vec::new();
    }
    format!(" {} ", words.join(" ")).chars().collect()
}

pub fn hashed_ngram_vector(text: &str, dim: usize, ngram: (usize, usize), seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let chars = prepare(text);
    if chars.is_empty() || dim == 0 {
        return v;
    }
    let mut grams: Vec<String> = Vec::new();
    for n in ngram.0..=ngram.1 {
        if n == 0 || n > chars.len() {
            continue;
        }
        grams.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    if grams.is_empty() {
        grams.push(chars.iter().collect());
    }
    let slots: Vec<(usize, f64)> = grams
        .iter()
        .map(|g| {
            let h = fnv1a(seed, g.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            ((h % dim as u64) as usize, sign)
        })
        .collect();
    for (i, s) in &slots {
        v[*i] += s;
    }
    if v.iter().all(|x| *x == 0.0) {
        // every signed contribution cancelled; fall back to unsigned counts
        for (i, _) in &slots {
            v[*i] += 1.0;
        }
    }
    normalize_l2(&mut v);
    v
}

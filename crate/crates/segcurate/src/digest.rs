//! Content hashes and derived seeds.

use sha2::{Digest, Sha256};

use segcurate_core::taxonomy::ClassTaxonomy;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over several length-prefixed parts, so `("ab", "c")` and `("a", "bc")`
/// differ.
pub fn sha256_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn taxonomy_hash(taxonomy: &ClassTaxonomy) -> String {
    sha256_hex(taxonomy.canonical_string().as_bytes())
}

/// Seed of candidate `index` for manifest entry `entry_id`. Depends on the
/// entry id rather than its position, so reordering a manifest does not
/// change what gets generated.
pub fn candidate_seed(run_seed: u64, entry_id: &str, index: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update((entry_id.len() as u64).to_le_bytes());
    h.update(entry_id.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 is 32 bytes"))
}

/// File-system-safe key for an entry id: sanitized id plus a short hash.
pub fn entry_key(entry_id: &str) -> String {
    let clean: String = entry_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .take(48)
        .collect();
    format!("{clean}-{}", &sha256_hex(entry_id.as_bytes())[..8])
}

//! Child seeds derived from a master seed.

use sha2::{Digest, Sha256};

/// First 8 bytes (little-endian) of `SHA-256(master_le ‖ role)`.
pub fn child_seed(master: u64, role: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(role.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depends_on_master_and_role() {
        assert_eq!(child_seed(1, "train"), child_seed(1, "train"));
        assert_ne!(child_seed(1, "train"), child_seed(2, "train"));
        assert_ne!(child_seed(1, "train"), child_seed(1, "attack"));
    }

    #[test]
    fn matches_digest_prefix() {
        let d = Sha256::digest([0u8; 8]);
        assert_eq!(child_seed(0, ""), u64::from_le_bytes(d[..8].try_into().unwrap()));
    }
}

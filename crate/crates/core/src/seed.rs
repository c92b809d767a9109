//! Child-seed derivation. A child seed is a hash of (master seed, component
//! name, index), so adding a component or grid cell never shifts the streams
//! of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type LabRng = ChaCha8Rng;

pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((component.len() as u64).to_le_bytes());
    h.update(component.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

pub fn child_rng(master: u64, component: &str, index: u64) -> LabRng {
    LabRng::seed_from_u64(derive_seed(master, component, index))
}

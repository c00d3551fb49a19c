use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from the run seed and a stream name.
///
/// Every source of randomness in a run pulls from its own named stream, so
/// adding draws to one component never perturbs the others.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"/");
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Serializable snapshot of a ChaCha stream: its seed plus word position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

pub fn snapshot(rng: &ChaCha8Rng) -> RngSnapshot {
    RngSnapshot {
        seed: rng.get_seed(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn restore(snap: &RngSnapshot) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(snap.seed);
    rng.set_word_pos(snap.word_pos);
    rng
}

//! Deterministic random streams.
//!
//! Every independent unit of work (a source sequence, a simulated
//! realization) gets its own ChaCha8 key derived from the master seed, the
//! kind of work and the unit index. Sub-streams inside a unit are selected
//! with ChaCha's stream counter. Results therefore do not depend on the
//! order or thread in which units run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Sequences,
    Realizations,
    Validation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Sequences => 0x5345_5155_454e_4345,
            Purpose::Realizations => 0x5245_414c_495a_4154,
            Purpose::Validation => 0x5641_4c49_4441_5445,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedKey([u8; 32]);

impl SeedKey {
    pub fn derive(master: u64, purpose: Purpose, index: u64) -> Self {
        let mut state = master;
        let a = splitmix64(&mut state) ^ purpose.tag();
        let mut state = a;
        let b = splitmix64(&mut state) ^ index;
        let mut state = b;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self(key)
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(stream);
        rng
    }
}

//! Keyed parameter storage. Every trainable tensor in a supernet or a
//! standalone network lives under a [`ParamKey`]; initialization is seeded
//! per key so the same key gets the same initial values regardless of
//! allocation order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{KernelError, Tensor};
use crate::digest::Fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// Identifies one parameter tensor by its site in the realized network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamKey {
    Stem { role: ParamRole },
    Classifier { role: ParamRole },
    /// Preprocessor of block `block` for input `input` (0 = previous block,
    /// 1 = the block before that).
    Preproc { block: u16, input: u8, role: ParamRole },
    /// Output projection of block `block`.
    Projection { block: u16, role: ParamRole },
    /// Edge op parameters: block, destination node, source node, op code.
    Edge { block: u16, dest: u8, src: u8, op: u8, role: ParamRole },
}

impl ParamKey {
    /// Fixed byte encoding, used for per-key init seeding and checkpoints.
    pub fn encode(&self) -> [u8; 8] {
        let (tag, a, b, c, d, role) = match *self {
            ParamKey::Stem { role } => (0u8, 0, 0, 0, 0, role),
            ParamKey::Classifier { role } => (1, 0, 0, 0, 0, role),
            ParamKey::Preproc { block, input, role } => (2, block, input, 0, 0, role),
            ParamKey::Projection { block, role } => (3, block, 0, 0, 0, role),
            ParamKey::Edge { block, dest, src, op, role } => (4, block, dest, src, op, role),
        };
        let bl = a.to_le_bytes();
        [tag, bl[0], bl[1], b, c, d, role as u8, 0]
    }

    pub fn decode(bytes: &[u8; 8]) -> Option<Self> {
        let block = u16::from_le_bytes([bytes[1], bytes[2]]);
        let role = match bytes[6] {
            0 => ParamRole::Weight,
            1 => ParamRole::Bias,
            _ => return None,
        };
        Some(match bytes[0] {
            0 => ParamKey::Stem { role },
            1 => ParamKey::Classifier { role },
            2 => ParamKey::Preproc { block, input: bytes[3], role },
            3 => ParamKey::Projection { block, role },
            4 => ParamKey::Edge { block, dest: bytes[3], src: bytes[4], op: bytes[5], role },
            _ => return None,
        })
    }
}

impl std::fmt::Display for ParamKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamKey::Stem { role } => write!(f, "stem/{role:?}"),
            ParamKey::Classifier { role } => write!(f, "classifier/{role:?}"),
            ParamKey::Preproc { block, input, role } => {
                write!(f, "block{block}/preproc{input}/{role:?}")
            }
            ParamKey::Projection { block, role } => write!(f, "block{block}/proj/{role:?}"),
            ParamKey::Edge { block, dest, src, op, role } => {
                write!(f, "block{block}/edge{src}->{dest}/op{op}/{role:?}")
            }
        }
    }
}

/// Seed for a parameter's init stream: mixes the run seed with the key bytes
/// so supernet initialization is independent of allocation order.
pub fn key_seed(run_seed: u64, key: ParamKey) -> u64 {
    let mut h = Fnv1a64::new();
    h.write_u64(run_seed);
    h.write_bytes(&key.encode());
    h.finish()
}

/// Uniform(-s, s) init with s = sqrt(6 / (fan_in + fan_out)).
pub fn init_tensor(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-s..s)).collect();
    Tensor::from_vec(shape, data)
}

/// A parameter tensor and its SGD momentum buffer.
#[derive(Debug, Clone)]
pub struct Slot {
    pub value: Tensor,
    pub momentum: Tensor,
}

impl Slot {
    pub fn new(value: Tensor) -> Self {
        let momentum = Tensor::zeros(value.shape());
        Self { value, momentum }
    }
}

/// Ordered map from key to slot. BTreeMap keeps iteration deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: BTreeMap<ParamKey, Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: ParamKey, value: Tensor) {
        self.slots.insert(key, Slot::new(value));
    }

    pub fn insert_slot(&mut self, key: ParamKey, slot: Slot) {
        self.slots.insert(key, slot);
    }

    pub fn get(&self, key: ParamKey) -> Result<&Tensor, KernelError> {
        self.slots
            .get(&key)
            .map(|s| &s.value)
            .ok_or_else(|| KernelError::MissingParam(key.to_string()))
    }

    pub fn get_slot_mut(&mut self, key: ParamKey) -> Result<&mut Slot, KernelError> {
        self.slots
            .get_mut(&key)
            .ok_or_else(|| KernelError::MissingParam(key.to_string()))
    }

    pub fn contains(&self, key: ParamKey) -> bool {
        self.slots.contains_key(&key)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.slots.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &Slot)> {
        self.slots.iter().map(|(k, s)| (*k, s))
    }

    /// Drop every key not accepted by the predicate. Kept slots are moved,
    /// never touched.
    pub fn retain(&mut self, mut keep: impl FnMut(ParamKey) -> bool) {
        self.slots.retain(|k, _| keep(*k));
    }

    /// Digest over all keys and parameter values (momentum excluded).
    pub fn value_digest(&self) -> u64 {
        let mut h = Fnv1a64::new();
        for (k, slot) in &self.slots {
            h.write_bytes(&k.encode());
            slot.value.digest_into(&mut h);
        }
        h.finish()
    }
}

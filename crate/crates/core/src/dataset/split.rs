use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::VehicleClass;
use crate::error::{Error, Result};

/// Mixes two values into a new 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    /// Training ids grouped by class, in draw order.
    pub fn train_by_class(&self, labels: &BTreeMap<usize, VehicleClass>) -> BTreeMap<VehicleClass, Vec<usize>> {
        let mut out: BTreeMap<VehicleClass, Vec<usize>> = BTreeMap::new();
        for &id in &self.train {
            out.entry(labels[&id]).or_default().push(id);
        }
        out
    }
}

/// Draws `k` independent stratified splits.
///
/// Each fold reshuffles every class with its own seed, takes
/// `train_per_class` then `val_per_class` ids, and leaves the rest for test.
/// Test sets of different folds overlap.
pub fn stratified_fold_split(
    labels: &[(usize, VehicleClass)],
    k: usize,
    train_per_class: usize,
    val_per_class: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    let mut by_class: BTreeMap<VehicleClass, Vec<usize>> = BTreeMap::new();
    for &(id, class) in labels {
        by_class.entry(class).or_default().push(id);
    }
    let needed = train_per_class + val_per_class + 1;
    for (&class, ids) in &by_class {
        if ids.len() < needed {
            return Err(Error::InsufficientClass {
                class,
                available: ids.len(),
                needed,
            });
        }
    }

    Ok((0..k)
        .map(|fold| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, fold as u64));
            let mut split = FoldSplit {
                fold_index: fold,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for ids in by_class.values() {
                let mut ids = ids.clone();
                ids.shuffle(&mut rng);
                split.train.extend_from_slice(&ids[..train_per_class]);
                split
                    .val
                    .extend_from_slice(&ids[train_per_class..train_per_class + val_per_class]);
                split.test.extend_from_slice(&ids[train_per_class + val_per_class..]);
            }
            split.test.sort_unstable();
            split
        })
        .collect())
}

/// One epoch of batches holding exactly one sample per class.
///
/// The epoch has as many batches as the smallest class has samples; each
/// class is shuffled and drawn without replacement.
pub fn balanced_batches(
    train_by_class: &BTreeMap<VehicleClass, Vec<usize>>,
    seed: u64,
) -> Result<Vec<[usize; VehicleClass::COUNT]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = Vec::with_capacity(VehicleClass::COUNT);
    for class in VehicleClass::ALL {
        let ids = train_by_class
            .get(&class)
            .filter(|ids| !ids.is_empty())
            .ok_or(Error::MissingClass(class))?;
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        pools.push(ids);
    }
    let epoch = pools.iter().map(Vec::len).min().unwrap_or(0);
    Ok((0..epoch)
        .map(|b| std::array::from_fn(|c| pools[c][b]))
        .collect())
}

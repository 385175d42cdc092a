use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{data, invalid, Result};
use crate::synth::ClassLabel;

/// Stratified fold index for every clip: each class is shuffled and dealt
/// round-robin, so fold sizes per class differ by at most one.
pub fn kfold_assign(labels: &[ClassLabel], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![usize::MAX; labels.len()];
    let mut offset = 0;
    for class in ClassLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(invalid(format!("class {class} has {} clips, fewer than k = {k}", idx.len())));
        }
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            fold[i] = (j + offset) % k;
        }
        offset += idx.len();
    }
    Ok(fold)
}

/// Clip indices for train, validation and test. Validation clips come out of
/// the training share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn carve_validation(pool: &mut Vec<usize>, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction <= 0.0 || pool.len() < 2 {
        return vec![];
    }
    pool.shuffle(rng);
    let n_val = ((pool.len() as f64 * fraction).round() as usize).clamp(1, pool.len() - 1);
    let val = pool.split_off(pool.len() - n_val);
    pool.sort_unstable();
    val
}

/// Per-class split of clip indices.
pub fn stratified_split(labels: &[ClassLabel], train_fraction: f64, val_fraction: f64, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split { train: vec![], val: vec![], test: vec![] };
    for class in ClassLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(invalid(format!("class {class} needs at least two clips to split")));
        }
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
        let mut test = idx.split_off(n_train);
        let val = carve_validation(&mut idx, val_fraction, &mut rng);
        test.sort_unstable();
        split.train.extend(idx);
        split.val.extend(val);
        split.test.extend(test);
    }
    for v in [&mut split.train, &mut split.val, &mut split.test] {
        v.sort_unstable();
    }
    Ok(split)
}

/// Train/validation/test split for fold `f` of a k-fold assignment.
pub fn fold_split(labels: &[ClassLabel], folds: &[usize], f: usize, val_fraction: f64, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (f as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
    let mut train = vec![];
    let mut val = vec![];
    for class in ClassLabel::ALL {
        let mut pool: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f && labels[i] == class).collect();
        val.extend(carve_validation(&mut pool, val_fraction, &mut rng));
        train.extend(pool);
    }
    train.sort_unstable();
    val.sort_unstable();
    Split { train, val, test }
}

/// SHA-256 over the sorted, newline-joined IDs.
pub fn id_set_hash<S: AsRef<str>>(ids: &[S]) -> String {
    let set: BTreeSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
    let mut h = Sha256::new();
    for id in set {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Fails when any clip ID, compared by SHA-256 digest, occurs on both sides.
pub fn assert_disjoint<S: AsRef<str>>(train: &[S], test: &[S]) -> Result<()> {
    let digest = |s: &S| hex::encode(Sha256::digest(s.as_ref().as_bytes()));
    let a: BTreeSet<String> = train.iter().map(digest).collect();
    let leaked: Vec<&str> = test.iter().filter(|s| a.contains(&digest(s))).map(|s| s.as_ref()).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(data(format!("test clips leaked into training: {}", leaked.join(", "))))
    }
}

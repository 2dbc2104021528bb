use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded shuffle, then the first `round(fraction·n)` items train.
pub fn split_dataset<T>(items: Vec<T>, fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::Dataset("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} must lie in (0, 1)"
        )));
    }
    let mut items = items;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * items.len() as f64).round() as usize;
    let test = items.split_off(n_train.min(items.len()));
    Ok((items, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighty_twenty() {
        let (tr, te) = split_dataset((0..10).collect(), 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split_dataset((0..10).collect(), 0.8, 3).unwrap();
        assert_eq!((tr, te), (tr2, te2));
    }

    #[test]
    fn contract() {
        assert!(split_dataset::<i32>(vec![], 0.8, 0).is_err());
        assert!(split_dataset(vec![1, 2], 1.0, 0).is_err());
        assert!(split_dataset(vec![1, 2], 0.0, 0).is_err());
    }
}

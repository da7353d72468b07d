use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Partition sizes by largest remainder; every positive fraction gets at least one item.
fn sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f >= 0.0)) {
        return Err(Error::Config(format!("invalid split fractions {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
    }
    let wanted = fractions.iter().filter(|&&f| f > 0.0).count();
    if n < wanted {
        return Err(Error::Data(format!("{n} subjects cannot fill {wanted} partitions")));
    }
    let mut out: Vec<usize> = fractions.iter().map(|&f| if f > 0.0 { ((f * n as f64).floor() as usize).max(1) } else { 0 }).collect();
    while out.iter().sum::<usize>() > n {
        let i = (0..out.len())
            .filter(|&i| out[i] > 1)
            .max_by(|&a, &b| (out[a] as f64 - fractions[a] * n as f64).partial_cmp(&(out[b] as f64 - fractions[b] * n as f64)).unwrap())
            .expect("some partition can shrink");
        out[i] -= 1;
    }
    while out.iter().sum::<usize>() < n {
        let i = (0..out.len())
            .filter(|&i| fractions[i] > 0.0)
            .max_by(|&a, &b| (fractions[a] * n as f64 - out[a] as f64).partial_cmp(&(fractions[b] * n as f64 - out[b] as f64)).unwrap().then(b.cmp(&a)))
            .expect("some partition is positive");
        out[i] += 1;
    }
    Ok(out)
}

/// Seeded partition of `0..n` into groups sized by `fractions`.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sz = sizes(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(sz.len());
    let mut at = 0;
    for s in sz {
        let mut part = idx[at..at + s].to_vec();
        part.sort_unstable();
        out.push(part);
        at += s;
    }
    Ok(out)
}

/// Subject-level split: `subject[i]` labels sample `i`; every subject lands in
/// exactly one partition. Returns sample indices per partition.
pub fn split_dataset(subject: &[usize], fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut ids: Vec<usize> = subject.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let groups = split_indices(ids.len(), fractions, seed)?;
    let mut part_of = std::collections::HashMap::new();
    for (p, g) in groups.iter().enumerate() {
        for &k in g {
            part_of.insert(ids[k], p);
        }
    }
    let mut out = vec![Vec::new(); groups.len()];
    for (i, s) in subject.iter().enumerate() {
        out[part_of[s]].push(i);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_subject_cannot_fill_three_partitions() {
        let subj = vec![0; 100];
        assert!(split_dataset(&subj, &[0.8, 0.1, 0.1], 0).is_err());
    }

    #[test]
    fn fifteen_nine_of_twenty_four() {
        let subj: Vec<usize> = (0..24).flat_map(|s| std::iter::repeat_n(s, 10)).collect();
        let parts = split_dataset(&subj, &[15.0 / 24.0, 9.0 / 24.0], 5).unwrap();
        assert_eq!(parts[0].len(), 150);
        assert_eq!(parts[1].len(), 90);
        let a: std::collections::BTreeSet<_> = parts[0].iter().map(|&i| subj[i]).collect();
        let b: std::collections::BTreeSet<_> = parts[1].iter().map(|&i| subj[i]).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(parts, split_dataset(&subj, &[15.0 / 24.0, 9.0 / 24.0], 5).unwrap());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(split_indices(10, &[0.5, 0.4], 0).is_err());
    }

    #[test]
    fn sizes_cover_everything() {
        for n in 3..40 {
            let s = sizes(n, &[0.7, 0.2, 0.1]).unwrap();
            assert_eq!(s.iter().sum::<usize>(), n);
            assert!(s.iter().all(|&k| k >= 1));
        }
    }
}

//! `.bval`/`.bvec` text files and measurement subsetting.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{AcquisitionScheme, B0_THRESHOLD};

/// Allowed deviation of a gradient direction's norm from one.
pub const UNIT_TOL: f64 = 1e-3;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines as `(line number, numbers)`.
fn numeric_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = Vec::new();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("not a number: {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, i + 1, format!("non-finite value {tok}")));
            }
            vals.push(v);
        }
        rows.push((i + 1, vals));
    }
    Ok(rows)
}

/// Reads b-values (one row, or one value per line) and directions (three rows).
/// Directions of unweighted measurements may be zero.
pub fn load_scheme(bval_path: &Path, bvec_path: &Path) -> Result<AcquisitionScheme<f64>> {
    let brows = numeric_rows(bval_path)?;
    let bvals: Vec<f64> = if brows.len() == 1 {
        brows[0].1.clone()
    } else {
        let mut out = Vec::with_capacity(brows.len());
        for (line, r) in &brows {
            if r.len() != 1 {
                return Err(parse_err(bval_path, *line, format!("expected one b-value per line, found {}", r.len())));
            }
            out.push(r[0]);
        }
        out
    };
    if bvals.is_empty() {
        return Err(parse_err(bval_path, 1, "no b-values"));
    }
    if let Some(i) = bvals.iter().position(|&b| b < 0.0) {
        return Err(parse_err(bval_path, brows[0].0, format!("negative b-value at column {}", i + 1)));
    }
    let vrows = numeric_rows(bvec_path)?;
    if vrows.len() != 3 {
        let line = vrows.get(3).map(|r| r.0).unwrap_or(vrows.last().map(|r| r.0).unwrap_or(1));
        return Err(parse_err(bvec_path, line, format!("expected 3 rows of direction components, found {}", vrows.len())));
    }
    for (line, r) in &vrows {
        if r.len() != bvals.len() {
            return Err(parse_err(
                bvec_path,
                *line,
                format!("{} direction columns but {} b-values in {}", r.len(), bvals.len(), bval_path.display()),
            ));
        }
    }
    let mut dirs = Vec::with_capacity(bvals.len());
    for (i, &b) in bvals.iter().enumerate() {
        let d = [vrows[0].1[i], vrows[1].1[i], vrows[2].1[i]];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if b < B0_THRESHOLD && norm < UNIT_TOL {
            dirs.push([0.0, 0.0, 1.0]);
            continue;
        }
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(parse_err(
                bvec_path,
                vrows[0].0,
                format!("direction in column {} has norm {norm:.6}", i + 1),
            ));
        }
        if (norm - 1.0).abs() > 1e-12 {
            dirs.push([d[0] / norm, d[1] / norm, d[2] / norm]);
        } else {
            dirs.push(d);
        }
    }
    AcquisitionScheme::new(bvals, dirs)
}

pub fn scheme_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bval"), stem.with_extension("bvec"))
}

/// Writes `<stem>.bval` and `<stem>.bvec` with round-trippable precision.
pub fn save_scheme(stem: &Path, scheme: &AcquisitionScheme<f64>) -> Result<()> {
    let (bp, vp) = scheme_paths(stem);
    let row = |it: &mut dyn Iterator<Item = f64>| it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
    let b = row(&mut scheme.bvalues().iter().copied());
    fs::write(&bp, b + "\n").map_err(|e| Error::io(&bp, e))?;
    let mut text = String::new();
    for k in 0..3 {
        text += &row(&mut scheme.directions().iter().map(|d| d[k]));
        text.push('\n');
    }
    fs::write(&vp, text).map_err(|e| Error::io(&vp, e))?;
    Ok(())
}

pub fn load_scheme_stem(stem: &Path) -> Result<AcquisitionScheme<f64>> {
    let (b, v) = scheme_paths(stem);
    load_scheme(&b, &v)
}

/// Which measurements to keep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Full,
    /// Every measurement whose b-value matches one of these (±0.5 s/mm²).
    BValues(Vec<f64>),
    /// All unweighted measurements plus this many directions per shell,
    /// chosen by farthest-point selection.
    PerShell(usize),
    /// All unweighted measurements plus `n` seeded random directions per shell.
    RandomPerShell { n: usize, seed: u64 },
}

/// A subset of a scheme and, per kept measurement, its index in the original.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsampled {
    pub scheme: AcquisitionScheme<f64>,
    pub index: Vec<usize>,
}

/// Measurement order by (b, direction) so that selection does not depend on
/// how the input happened to be ordered.
fn canonical_order(s: &AcquisitionScheme<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| {
        let ka = (s.bvalues()[a], s.directions()[a]);
        let kb = (s.bvalues()[b], s.directions()[b]);
        ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
    });
    idx
}

/// Angle between two axes, ignoring sign.
fn axis_angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0).acos()
}

/// Greedy farthest-point choice of `n` axes among `cands`, seeded by the first.
pub fn farthest_point(dirs: &[[f64; 3]], n: usize) -> Vec<usize> {
    if dirs.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut chosen = vec![0];
    let mut dist: Vec<f64> = dirs.iter().map(|&d| axis_angle(d, dirs[0])).collect();
    while chosen.len() < n.min(dirs.len()) {
        let mut best = None;
        for (i, &d) in dist.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("candidates remain");
        chosen.push(i);
        for (k, dk) in dist.iter_mut().enumerate() {
            *dk = dk.min(axis_angle(dirs[k], dirs[i]));
        }
    }
    chosen
}

/// Smallest pairwise axis angle of a direction set.
pub fn min_angle(dirs: &[[f64; 3]]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            m = m.min(axis_angle(dirs[i], dirs[j]));
        }
    }
    m
}

pub fn subsample_scheme(scheme: &AcquisitionScheme<f64>, sel: &Selection) -> Result<Subsampled> {
    let order = canonical_order(scheme);
    let index: Vec<usize> = match sel {
        Selection::Full => (0..scheme.len()).collect(),
        Selection::BValues(want) => {
            for &b in want {
                if !scheme.bvalues().iter().any(|&x| (x - b).abs() <= 0.5) {
                    return Err(Error::Config(format!("b-value {b} is not in the scheme")));
                }
            }
            order
                .into_iter()
                .filter(|&i| want.iter().any(|&b| (scheme.bvalues()[i] - b).abs() <= 0.5))
                .collect()
        }
        Selection::PerShell(n) => per_shell(scheme, &order, *n, None)?,
        Selection::RandomPerShell { n, seed } => per_shell(scheme, &order, *n, Some(*seed))?,
    };
    Ok(Subsampled {
        scheme: scheme.subset(&index)?,
        index,
    })
}

/// Like `PerShell(n)` but with seeded uniformly random directions.
pub fn random_subset(scheme: &AcquisitionScheme<f64>, n: usize, seed: u64) -> Result<Subsampled> {
    let order = canonical_order(scheme);
    let index = per_shell(scheme, &order, n, Some(seed))?;
    Ok(Subsampled {
        scheme: scheme.subset(&index)?,
        index,
    })
}

fn per_shell(scheme: &AcquisitionScheme<f64>, order: &[usize], n: usize, seed: Option<u64>) -> Result<Vec<usize>> {
    let rank: Vec<usize> = {
        let mut r = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            r[i] = k;
        }
        r
    };
    let mut keep: Vec<usize> = order.iter().copied().filter(|&i| scheme.is_b0(i)).collect();
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    for shell in scheme.shells() {
        let mut members = shell.indices.clone();
        members.sort_by_key(|&i| rank[i]);
        if members.len() < n {
            return Err(Error::Config(format!(
                "shell b={:.0} has {} directions, {n} requested",
                shell.b,
                members.len()
            )));
        }
        let picked: Vec<usize> = match rng.as_mut() {
            Some(r) => {
                let mut m = members.clone();
                m.shuffle(r);
                m.truncate(n);
                m
            }
            None => {
                let dirs: Vec<[f64; 3]> = members.iter().map(|&i| scheme.directions()[i]).collect();
                farthest_point(&dirs, n).into_iter().map(|k| members[k]).collect()
            }
        };
        let mut picked = picked;
        picked.sort_by_key(|&i| rank[i]);
        keep.extend(picked);
    }
    Ok(keep)
}

/// Near-uniform directions on the hemisphere (z ≥ 0) by a golden-angle spiral.
pub fn spiral_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// `n_b0` unweighted measurements, then `n_dirs` spiral directions per shell.
/// Each shell's spiral is rotated about z so that shells interleave.
pub fn multi_shell(shells: &[f64], n_dirs: usize, n_b0: usize) -> Result<AcquisitionScheme<f64>> {
    let mut b = vec![0.0; n_b0];
    let mut d = vec![[0.0, 0.0, 1.0]; n_b0];
    for (k, &shell) in shells.iter().enumerate() {
        let phi = k as f64 * std::f64::consts::PI / (shells.len() as f64 * 1.618);
        let (s, c) = phi.sin_cos();
        for v in spiral_directions(n_dirs) {
            b.push(shell);
            d.push([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]);
        }
    }
    AcquisitionScheme::new(b, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::IVIM_BVALUES;

    fn write(dir: &Path, bval: &str, bvec: &str) -> (PathBuf, PathBuf) {
        let b = dir.join("s.bval");
        let v = dir.join("s.bvec");
        fs::write(&b, bval).unwrap();
        fs::write(&v, bvec).unwrap();
        (b, v)
    }

    #[test]
    fn two_measurements() {
        let dir = tempfile::tempdir().unwrap();
        let (b, v) = write(dir.path(), "0 500\n", "1 1\n0 0\n0 0\n");
        let s = load_scheme(&b, &v).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.directions()[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn ten_bvalue_list() {
        let dir = tempfile::tempdir().unwrap();
        let bv: Vec<String> = IVIM_BVALUES.iter().map(|b| b.to_string()).collect();
        let ones = ["1"; 10].join(" ");
        let zeros = ["0"; 10].join(" ");
        let (b, v) = write(dir.path(), &bv.join(" "), &format!("{zeros}\n{zeros}\n{ones}\n"));
        let s = load_scheme(&b, &v).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.b0_indices(), vec![0]);
    }

    #[test]
    fn column_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (b, v) = write(dir.path(), "0 500 1000\n", "1 1\n0 0\n0 0\n");
        let err = load_scheme(&b, &v).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{msg}");
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn non_unit_direction_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (b, v) = write(dir.path(), "0 500\n", "1 1.01\n0 0\n0 0\n");
        assert!(matches!(load_scheme(&b, &v), Err(Error::Parse { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = multi_shell(&[1000.0, 2000.0], 7, 2).unwrap();
        save_scheme(&dir.path().join("x"), &s).unwrap();
        assert_eq!(load_scheme_stem(&dir.path().join("x")).unwrap(), s);
    }

    #[test]
    fn comb1_from_ten_bvalues() {
        let s = AcquisitionScheme::from_bvalues(&IVIM_BVALUES).unwrap();
        let sub = subsample_scheme(&s, &Selection::BValues(vec![20.0, 50.0, 150.0, 300.0, 500.0])).unwrap();
        assert_eq!(sub.index, vec![2, 3, 6, 8, 9]);
        assert_eq!(sub.scheme.bvalues(), &[20.0, 50.0, 150.0, 300.0, 500.0]);
        assert!(subsample_scheme(&s, &Selection::BValues(vec![700.0])).is_err());
    }

    #[test]
    fn full_is_identity() {
        let s = multi_shell(&[1000.0], 12, 1).unwrap();
        let sub = subsample_scheme(&s, &Selection::Full).unwrap();
        assert_eq!(sub.index, (0..s.len()).collect::<Vec<_>>());
        assert_eq!(sub.scheme, s);
    }

    #[test]
    fn farthest_point_beats_random_subsets() {
        let s = multi_shell(&[1000.0], 90, 0).unwrap();
        let sub = subsample_scheme(&s, &Selection::PerShell(30)).unwrap();
        assert_eq!(sub.scheme.len(), 30);
        let ours = min_angle(sub.scheme.directions());
        for seed in 0..100 {
            let r = random_subset(&s, 30, seed).unwrap();
            assert!(ours > min_angle(r.scheme.directions()), "seed {seed}");
        }
    }

    #[test]
    fn selection_ignores_input_order() {
        let s = multi_shell(&[1000.0, 2000.0], 20, 2).unwrap();
        let mut perm: Vec<usize> = (0..s.len()).rev().collect();
        perm.rotate_left(5);
        let shuffled = s.subset(&perm).unwrap();
        let a = subsample_scheme(&s, &Selection::PerShell(8)).unwrap();
        let b = subsample_scheme(&shuffled, &Selection::PerShell(8)).unwrap();
        assert_eq!(a.scheme, b.scheme);
        let mapped: Vec<usize> = b.index.iter().map(|&i| perm[i]).collect();
        assert_eq!(s.subset(&mapped).unwrap(), a.scheme);
    }
}

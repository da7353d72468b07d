//! Code sparsity statistics and robustness to corrupted inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::net::{predict_all, Model, ModelKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityAudit {
    pub samples: usize,
    pub atoms: usize,
    /// Exactly-zero entries over all entries.
    pub zero_fraction: f64,
    pub mean_support: f64,
    /// Per-sample nonzero fraction.
    pub histogram: Vec<HistBin>,
}

pub fn sparsity_audit(codes: &[Vec<f64>], bins: usize) -> Result<SparsityAudit> {
    let atoms = codes.first().map(Vec::len).unwrap_or(0);
    if codes.iter().any(|c| c.len() != atoms) {
        return Err(Error::Dimension("codes of different lengths".into()));
    }
    if codes.is_empty() || atoms == 0 || bins == 0 {
        return Err(Error::Data("sparsity audit needs codes and at least one bin".into()));
    }
    let mut histogram: Vec<HistBin> = (0..bins)
        .map(|i| HistBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            count: 0,
        })
        .collect();
    let mut nonzero = 0usize;
    for c in codes {
        let nz = c.iter().filter(|&&x| x != 0.0).count();
        nonzero += nz;
        let frac = nz as f64 / atoms as f64;
        let b = ((frac * bins as f64) as usize).min(bins - 1);
        histogram[b].count += 1;
    }
    let total = codes.len() * atoms;
    Ok(SparsityAudit {
        samples: codes.len(),
        atoms,
        zero_fraction: 1.0 - nonzero as f64 / total as f64,
        mean_support: nonzero as f64 / codes.len() as f64,
        histogram,
    })
}

/// Closed box the model's outputs must lie in: fractions in `[0, 1]`,
/// diffusivities in `[0, upper grid clamp]`, OD in `[0, 1]`.
pub fn output_box(model: &Model<f64>) -> [(f64, f64); 3] {
    match model.cfg.kind {
        ModelKind::Ivim => [(0.0, 1.0), (0.0, model.meta.boxes[0].1), (0.0, model.meta.boxes[1].1)],
        ModelKind::Noddi => [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbnormalCheck {
    pub perturbation: String,
    pub samples: usize,
    pub out_of_box: usize,
    pub non_finite: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl AbnormalCheck {
    pub fn passed(&self) -> bool {
        self.out_of_box == 0 && self.non_finite == 0
    }
}

/// Box mean over the 3×3 neighbourhood of every patch position, per channel.
fn smear(row: &[f64], region: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    for i in 0..region {
        for j in 0..region {
            for c in 0..channels {
                let mut acc = 0.0;
                let mut n = 0.0;
                for di in i.saturating_sub(1)..(i + 2).min(region) {
                    for dj in j.saturating_sub(1)..(j + 2).min(region) {
                        acc += row[(di * region + dj) * channels + c];
                        n += 1.0;
                    }
                }
                out[(i * region + j) * channels + c] = acc / n;
            }
        }
    }
    out
}

/// Feeds smeared and noise-corrupted copies of `inputs` (network rows) and
/// counts outputs outside [`output_box`].
pub fn abnormal_input_check(model: &Model<f64>, inputs: &Tensor<f64>, noise_std: f64, seed: u64) -> Result<Vec<AbnormalCheck>> {
    let region = model.cfg.encoder.region();
    let c = model.cfg.channels;
    let (n, k) = (inputs.rows(), inputs.cols());
    if k != region * region * c {
        return Err(Error::Dimension(format!("rows of {k} values, model expects {}", region * region * c)));
    }
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut smeared = Vec::with_capacity(n * k);
    let mut noisy = Vec::with_capacity(n * k);
    for r in 0..n {
        let row = inputs.row_slice(r);
        smeared.extend(smear(row, region, c));
        noisy.extend(row.iter().map(|&v| v + normal.sample(&mut rng)));
    }
    let bx = output_box(model);
    let mut out = Vec::new();
    for (name, data) in [("smeared", smeared), ("noise", noisy)] {
        let (pred, _) = predict_all(model, &Tensor::matrix(n, k, data)?, 1024)?;
        let mut chk = AbnormalCheck {
            perturbation: name.to_string(),
            samples: n,
            out_of_box: 0,
            non_finite: 0,
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        };
        for r in 0..n {
            let p = pred.row_slice(r);
            if p.iter().any(|v| !v.is_finite()) {
                chk.non_finite += 1;
                continue;
            }
            if p.iter().zip(&bx).any(|(&v, &(lo, hi))| v < lo || v > hi) {
                chk.out_of_box += 1;
            }
            for q in 0..3 {
                chk.min[q] = chk.min[q].min(p[q]);
                chk.max[q] = chk.max[q].max(p[q]);
            }
        }
        out.push(chk);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_atom_codes() {
        let mut codes = vec![vec![0.0; 10]; 4];
        for (i, c) in codes.iter_mut().enumerate() {
            c[i] = 1.0;
        }
        let a = sparsity_audit(&codes, 5).unwrap();
        assert_eq!(a.zero_fraction, 0.9);
        assert_eq!(a.histogram[0].count, 4);
        assert_eq!(a.mean_support, 1.0);
    }

    #[test]
    fn smear_of_constant_is_constant() {
        let row = vec![2.0; 5 * 5 * 3];
        assert_eq!(smear(&row, 5, 3), row);
    }
}

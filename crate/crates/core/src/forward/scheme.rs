use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Real;

/// Measurements with b below this count as unweighted.
pub const B0_THRESHOLD: f64 = 10.0;

/// b-values (s/mm²) and unit gradient directions, one pair per measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionScheme<T> {
    bvalues: Vec<T>,
    directions: Vec<[T; 3]>,
}

/// Measurements sharing (approximately) one b-value.
#[derive(Clone, Debug, PartialEq)]
pub struct Shell<T> {
    pub b: T,
    pub indices: Vec<usize>,
}

impl<T: Real> AcquisitionScheme<T> {
    pub fn new(bvalues: Vec<T>, directions: Vec<[T; 3]>) -> Result<Self> {
        if bvalues.len() != directions.len() {
            return Err(Error::Dimension(format!(
                "{} b-values but {} directions",
                bvalues.len(),
                directions.len()
            )));
        }
        if bvalues.is_empty() {
            return Err(Error::Config("empty acquisition scheme".into()));
        }
        let tol = T::of(1e-9);
        for (i, (&b, d)) in bvalues.iter().zip(&directions).enumerate() {
            if !(b >= T::zero()) || !b.is_finite() {
                return Err(Error::Parameter(format!("b-value {i} is {b}")));
            }
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if b >= T::of(B0_THRESHOLD) && (norm - T::one()).abs() > tol {
                return Err(Error::Parameter(format!(
                    "direction {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self {
            bvalues,
            directions,
        })
    }

    /// Direction-free scheme (IVIM): every measurement along z.
    pub fn from_bvalues(bvalues: &[f64]) -> Result<Self> {
        let z = [T::zero(), T::zero(), T::one()];
        Self::new(bvalues.iter().map(|&b| T::of(b)).collect(), vec![z; bvalues.len()])
    }

    pub fn len(&self) -> usize {
        self.bvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvalues.is_empty()
    }

    pub fn bvalues(&self) -> &[T] {
        &self.bvalues
    }

    pub fn directions(&self) -> &[[T; 3]] {
        &self.directions
    }

    pub fn is_b0(&self, i: usize) -> bool {
        self.bvalues[i] < T::of(B0_THRESHOLD)
    }

    pub fn b0_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_b0(i)).collect()
    }

    /// Diffusion-weighted measurements grouped into shells, by ascending b.
    /// A measurement joins the current shell while its b stays within 10% (+5 s/mm²)
    /// of the shell's smallest b.
    pub fn shells(&self) -> Vec<Shell<T>> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| !self.is_b0(i)).collect();
        idx.sort_by(|&a, &b| {
            self.bvalues[a]
                .partial_cmp(&self.bvalues[b])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut shells: Vec<(T, Vec<usize>)> = Vec::new();
        for i in idx {
            let b = self.bvalues[i];
            match shells.last_mut() {
                Some((first, members)) if b <= *first * T::of(1.1) + T::of(5.0) => members.push(i),
                _ => shells.push((b, vec![i])),
            }
        }
        shells
            .into_iter()
            .map(|(_, mut indices)| {
                indices.sort_unstable();
                let b = indices.iter().map(|&i| self.bvalues[i]).sum::<T>()
                    / T::of(indices.len() as f64);
                Shell { b, indices }
            })
            .collect()
    }

    /// Scheme restricted to the given measurement indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Dimension(format!(
                "measurement {bad} out of range {}",
                self.len()
            )));
        }
        Self::new(
            indices.iter().map(|&i| self.bvalues[i]).collect(),
            indices.iter().map(|&i| self.directions[i]).collect(),
        )
    }

    /// SHA-256 over the little-endian f64 encoding of b-values then directions.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for &b in &self.bvalues {
            h.update(b.as_f64().to_le_bytes());
        }
        for d in &self.directions {
            for &c in d {
                h.update(c.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Real>(&self) -> AcquisitionScheme<U> {
        AcquisitionScheme {
            bvalues: self.bvalues.iter().map(|&b| U::of(b.as_f64())).collect(),
            directions: self
                .directions
                .iter()
                .map(|d| d.map(|c| U::of(c.as_f64())))
                .collect(),
        }
    }
}

/// The ten-b-value IVIM acquisition (s/mm²).
pub const IVIM_BVALUES: [f64; 10] = [0.0, 10.0, 20.0, 50.0, 80.0, 100.0, 150.0, 200.0, 300.0, 500.0];

/// Undersampled IVIM b-value combinations; the first is the default.
pub const IVIM_COMBINATIONS: [(&str, &[f64]); 7] = [
    ("comb1", &[20.0, 50.0, 150.0, 300.0, 500.0]),
    ("comb2", &[20.0, 50.0, 150.0, 200.0, 500.0]),
    ("comb3", &[20.0, 50.0, 200.0, 300.0, 500.0]),
    ("comb4", &[20.0, 100.0, 150.0, 300.0, 500.0]),
    ("comb5", &[20.0, 80.0, 150.0, 300.0, 500.0]),
    ("b3", &[20.0, 150.0, 500.0]),
    ("b7", &[20.0, 50.0, 100.0, 150.0, 200.0, 300.0, 500.0]),
];

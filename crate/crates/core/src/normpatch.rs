//! Dataset standardization, per-window reversible instance normalization and
//! patch tokenization.
//!
//! All variances use the population convention (divide by `n`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Mean/std of the training split, applied unchanged to val and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: f64,
    pub std: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn fit_standardizer(train_values: &[f64]) -> Result<StandardizationStats> {
    if train_values.is_empty() {
        return Err(Error::EmptyInput(
            "cannot fit a standardizer on no values".into(),
        ));
    }
    let (mean, var) = mean_var(train_values);
    Ok(StandardizationStats {
        mean,
        std: var.sqrt(),
        eps: DEFAULT_EPS,
    })
}

impl StandardizationStats {
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / (self.std + self.eps)
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * (self.std + self.eps) + self.mean
    }
}

pub fn apply_standardizer(
    values: &[f64],
    stats: &StandardizationStats,
    direction: Direction,
) -> Vec<f64> {
    match direction {
        Direction::Forward => values.iter().map(|&x| stats.forward(x)).collect(),
        Direction::Inverse => values.iter().map(|&z| stats.inverse(z)).collect(),
    }
}

/// Statistics of one input window, carried alongside it so model outputs can
/// be mapped back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevinState {
    pub mean: f64,
    pub var: f64,
    pub eps: f64,
}

impl RevinState {
    pub fn of(window: &[f64]) -> Result<Self> {
        if window.is_empty() {
            return Err(Error::EmptyInput("RevIN needs a non-empty window".into()));
        }
        let (mean, var) = mean_var(window);
        Ok(Self {
            mean,
            var,
            eps: DEFAULT_EPS,
        })
    }

    pub fn scale(&self) -> f64 {
        (self.var + self.eps).sqrt()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let s = self.scale();
        x.iter().map(|&v| (v - self.mean) / s).collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        let s = self.scale();
        y.iter().map(|&v| v * s + self.mean).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevinMode {
    Normalize,
    Denormalize,
}

/// Reversible instance normalization.
///
/// `Normalize` computes the window's own state (a supplied state is an
/// error); `Denormalize` requires the state of the *input* window and maps a
/// model output back onto that window's level and scale.
pub fn revin(
    values: &[f64],
    mode: RevinMode,
    state: Option<RevinState>,
) -> Result<(Vec<f64>, RevinState)> {
    match (mode, state) {
        (RevinMode::Normalize, None) => {
            let st = RevinState::of(values)?;
            Ok((st.normalize(values), st))
        }
        (RevinMode::Normalize, Some(_)) => Err(Error::Usage(
            "normalize computes its own state; none may be supplied".into(),
        )),
        (RevinMode::Denormalize, Some(st)) => Ok((st.denormalize(values), st)),
        (RevinMode::Denormalize, None) => Err(Error::Usage(
            "denormalize requires the input window's RevIN state".into(),
        )),
    }
}

/// Patch layout for a given input length; independent of the values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub seq_len: usize,
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchGeometry {
    pub fn new(seq_len: usize, patch_len: usize, stride: usize) -> Result<Self> {
        if patch_len < 1 || stride < 1 {
            return Err(Error::Config(format!(
                "patch_len ({patch_len}) and stride ({stride}) must be at least 1"
            )));
        }
        if seq_len == 0 {
            return Err(Error::EmptyInput("cannot patch an empty sequence".into()));
        }
        Ok(Self {
            seq_len,
            patch_len,
            stride,
        })
    }

    /// Replicate-padded length: `max(seq_len + stride, patch_len)`.
    pub fn padded_length(&self) -> usize {
        (self.seq_len + self.stride).max(self.patch_len)
    }

    pub fn n_patches(&self) -> usize {
        (self.padded_length() - self.patch_len) / self.stride + 1
    }

    /// Index into the original sequence feeding `(patch, offset)`.
    pub fn source_index(&self, patch: usize, offset: usize) -> usize {
        (patch * self.stride + offset).min(self.seq_len - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<Vec<f64>>,
    pub patch_len: usize,
    pub stride: usize,
    pub padded_length: usize,
}

/// Splits a sequence into `patch_len` patches every `stride` steps after
/// right-padding it with its last value.
pub fn patchify(sequence: &[f64], patch_len: usize, stride: usize) -> Result<PatchGrid> {
    let geom = PatchGeometry::new(sequence.len(), patch_len, stride)?;
    let patches = (0..geom.n_patches())
        .map(|p| {
            (0..patch_len)
                .map(|o| sequence[geom.source_index(p, o)])
                .collect()
        })
        .collect();
    Ok(PatchGrid {
        patches,
        patch_len,
        stride,
        padded_length: geom.padded_length(),
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standardizer_fit_and_apply() {
        let st = fit_standardizer(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(st.mean, 2.0);
        assert!((st.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = apply_standardizer(&[1.0, 2.0, 3.0], &st, Direction::Forward);
        // (x - 2) / (0.816496... + 1e-5)
        let expect = 1.0 / ((2.0f64 / 3.0).sqrt() + 1e-5);
        assert!((z[0] + expect).abs() < 1e-12 && z[1] == 0.0 && (z[2] - expect).abs() < 1e-12);
        assert!((z[2] - 1.2247).abs() < 1e-4);

        let c = fit_standardizer(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((c.mean, c.std), (5.0, 0.0));
        assert_eq!(
            apply_standardizer(&[5.0, 5.0], &c, Direction::Forward),
            vec![0.0, 0.0]
        );

        assert!(fit_standardizer(&[]).is_err());
    }

    #[test]
    fn revin_normalize_known_window() {
        let (y, st) = revin(&[1.0, 2.0, 3.0], RevinMode::Normalize, None).unwrap();
        assert_eq!(st.mean, 2.0);
        assert!((st.var - 2.0 / 3.0).abs() < 1e-15);
        assert!((y[0] + 1.2247).abs() < 1e-4 && y[1] == 0.0 && (y[2] - 1.2247).abs() < 1e-4);

        let (flat, _) = revin(&[4.0; 5], RevinMode::Normalize, None).unwrap();
        assert!(flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn revin_usage_errors() {
        assert!(matches!(
            revin(&[1.0], RevinMode::Denormalize, None),
            Err(Error::Usage(_))
        ));
        let st = RevinState::of(&[1.0, 2.0]).unwrap();
        assert!(revin(&[1.0], RevinMode::Normalize, Some(st)).is_err());
        assert!(revin(&[], RevinMode::Normalize, None).is_err());
    }

    #[test]
    fn patch_examples() {
        let seq: Vec<f64> = (0..7).map(f64::from).collect();
        let g = patchify(&seq, 16, 8).unwrap();
        assert_eq!(g.padded_length, 16);
        assert_eq!(g.patches.len(), 1);
        assert_eq!(&g.patches[0][..7], &seq[..]);
        assert!(g.patches[0][7..].iter().all(|&v| v == 6.0));

        let seq: Vec<f64> = (0..16).map(f64::from).collect();
        let g = patchify(&seq, 16, 8).unwrap();
        assert_eq!(g.padded_length, 24);
        assert_eq!(g.patches.len(), 2);
        assert_eq!(g.patches[1][0], 8.0);
        assert_eq!(g.patches[1][15], 15.0);

        assert!(matches!(patchify(&seq, 0, 8), Err(Error::Config(_))));
        assert!(matches!(patchify(&seq, 4, 0), Err(Error::Config(_))));
        assert!(matches!(patchify(&[], 4, 2), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn patch_count_matches_offset_enumeration() {
        for len in 1..=64usize {
            for patch in 1..=32usize {
                for stride in 1..=16usize {
                    let g = PatchGeometry::new(len, patch, stride).unwrap();
                    let padded = (len + stride).max(patch);
                    let brute = (0..padded)
                        .filter(|&o| o + patch <= padded && o % stride == 0)
                        .count();
                    assert_eq!(
                        g.n_patches(),
                        brute,
                        "len={len} patch={patch} stride={stride}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn revin_round_trip(xs in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            let (y, st) = revin(&xs, RevinMode::Normalize, None).unwrap();
            let (back, _) = revin(&y, RevinMode::Denormalize, Some(st)).unwrap();
            for (a, b) in xs.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn normalized_window_is_centered(xs in prop::collection::vec(-50f64..50.0, 2..64)) {
            let (y, st) = revin(&xs, RevinMode::Normalize, None).unwrap();
            let (m, v) = mean_var(&y);
            prop_assert!(m.abs() < 1e-9);
            if st.var > 1e-2 {
                // var(y) = var / (var + eps)
                prop_assert!((v - 1.0).abs() <= st.eps / st.var + 1e-12);
            }
        }

        #[test]
        fn standardizer_round_trip(xs in prop::collection::vec(-1e4f64..1e4, 1..64)) {
            let st = fit_standardizer(&xs).unwrap();
            let z = apply_standardizer(&xs, &st, Direction::Forward);
            let back = apply_standardizer(&z, &st, Direction::Inverse);
            for (a, b) in xs.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

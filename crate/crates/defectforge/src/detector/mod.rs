//! Patch-wise reconstruction autoencoder and its evaluation.
//!
//! The detector is a small fully-connected autoencoder over image patches:
//! trained to restore the clean patch from a corrupted one, it scores unseen
//! images by reconstruction error. Desk-scale on purpose — every gradient is
//! hand-checkable against finite differences.

mod score;
mod train;

pub use score::{anomaly_score, compute_auroc, extract_patches, Label, ScoreRecord};
pub use train::{gradients, train, train_step, LayerGrads, StageLabel, TrainSchedule, Trainer};

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imgcore::Rng;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("input dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("patch {patch} larger than image {width}x{height}")]
    PatchTooLarge { patch: u32, width: u32, height: u32 },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("AUROC needs both classes; got {normals} normal and {anomalies} anomalous records")]
    OneClassOnly { normals: usize, anomalies: usize },
    #[error("checkpoint i/o failure on {path}: {reason}")]
    CheckpointIo { path: PathBuf, reason: String },
    #[error("not a model checkpoint: {path}")]
    BadCheckpoint { path: PathBuf },
    #[error("unsupported checkpoint version {got} (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"DFAE";
const CHECKPOINT_VERSION: u32 = 1;
const LEAKY_SLOPE: f64 = 0.01;

/// One affine layer; weights are `output x input`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub input: usize,
    pub output: usize,
}

impl Layer {
    fn glorot(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let weights = (0..input * output).map(|_| rng.range_f64(-bound, bound)).collect();
        Self { weights, biases: vec![0.0; output], input, output }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.output {
            let row = &self.weights[o * self.input..(o + 1) * self.input];
            let mut acc = self.biases[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Fully-connected autoencoder: leaky-rectifier hidden layers, identity
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    version: u32,
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

impl AutoencoderModel {
    /// Glorot-uniform initialized model; `sizes` runs input through hidden
    /// layers to output, e.g. `[256, 128, 32, 128, 256]`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|pair| Layer::glorot(pair[0], pair[1], rng))
            .collect();
        Self { version: CHECKPOINT_VERSION, sizes: sizes.to_vec(), layers }
    }

    /// Standard geometry for `patch x patch` inputs: `[d, 128, 32, 128, d]`.
    pub fn for_patch(patch: u32, rng: &mut Rng) -> Self {
        let d = (patch * patch) as usize;
        Self::new(&[d, 128, 32, 128, d], rng)
    }

    /// Test construction with explicit parameters.
    pub fn from_layers(sizes: Vec<usize>, layers: Vec<Layer>) -> Self {
        Self { version: CHECKPOINT_VERSION, sizes, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Deterministic forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, DetectorError> {
        if x.len() != self.input_dim() {
            return Err(DetectorError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut current = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.affine(&current, &mut next);
            if li != last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Forward pass keeping every layer's post-activation output;
    /// `trace[0]` is the input, `trace.last()` the reconstruction.
    pub(crate) fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.affine(trace.last().unwrap(), &mut out);
            if li != last {
                for v in &mut out {
                    if *v < 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                }
            }
            trace.push(out);
        }
        trace
    }

    /// Writes the versioned binary checkpoint: magic, version, layer sizes,
    /// then little-endian f64 parameters in layer order (weights, biases).
    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        let io_err = |e: std::io::Error| DetectorError::CheckpointIo {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        file.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
        file.write_all(&self.version.to_le_bytes()).map_err(io_err)?;
        file.write_all(&(self.sizes.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &s in &self.sizes {
            file.write_all(&(s as u32).to_le_bytes()).map_err(io_err)?;
        }
        for layer in &self.layers {
            for &w in &layer.weights {
                file.write_all(&w.to_le_bytes()).map_err(io_err)?;
            }
            for &b in &layer.biases {
                file.write_all(&b.to_le_bytes()).map_err(io_err)?;
            }
        }
        file.flush().map_err(io_err)
    }

    /// Loads a checkpoint written by [`AutoencoderModel::save`].
    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let io_err = |e: std::io::Error| DetectorError::CheckpointIo {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let bad = || DetectorError::BadCheckpoint { path: path.to_path_buf() };
        let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);

        let mut magic = [0u8; 4];
        file.read_exact(&mut magic).map_err(|_| bad())?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad());
        }
        let mut u32_buf = [0u8; 4];
        file.read_exact(&mut u32_buf).map_err(|_| bad())?;
        let version = u32::from_le_bytes(u32_buf);
        if version != CHECKPOINT_VERSION {
            return Err(DetectorError::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                got: version,
            });
        }
        file.read_exact(&mut u32_buf).map_err(|_| bad())?;
        let n_sizes = u32::from_le_bytes(u32_buf) as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(bad());
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            file.read_exact(&mut u32_buf).map_err(|_| bad())?;
            sizes.push(u32::from_le_bytes(u32_buf) as usize);
        }
        let mut f64_buf = [0u8; 8];
        let mut read_f64s = |n: usize| -> Result<Vec<f64>, DetectorError> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                file.read_exact(&mut f64_buf).map_err(|_| bad())?;
                out.push(f64::from_le_bytes(f64_buf));
            }
            Ok(out)
        };
        let mut layers = Vec::with_capacity(n_sizes - 1);
        for pair in sizes.windows(2) {
            let (input, output) = (pair[0], pair[1]);
            let weights = read_f64s(input * output)?;
            let biases = read_f64s(output)?;
            layers.push(Layer { weights, biases, input, output });
        }
        Ok(Self { version, sizes, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(sizes: &[usize]) -> AutoencoderModel {
        let layers = sizes
            .windows(2)
            .map(|p| Layer {
                weights: vec![0.0; p[0] * p[1]],
                biases: vec![0.0; p[1]],
                input: p[0],
                output: p[1],
            })
            .collect();
        AutoencoderModel::from_layers(sizes.to_vec(), layers)
    }

    pub(crate) fn identity_model(d: usize) -> AutoencoderModel {
        let mut weights = vec![0.0; d * d];
        for i in 0..d {
            weights[i * d + i] = 1.0;
        }
        AutoencoderModel::from_layers(
            vec![d, d],
            vec![Layer { weights, biases: vec![0.0; d], input: d, output: d }],
        )
    }

    #[test]
    fn zero_model_outputs_zeros() {
        let model = zero_model(&[4, 3, 4]);
        assert_eq!(model.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn identity_layer_reproduces_input() {
        let model = identity_model(5);
        let x = [0.1, -0.7, 0.0, 2.5, -3.0];
        assert_eq!(model.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn tiny_model_matches_hand_computation() {
        // W1 = [[1, 2], [-1, 0.5]], b1 = [0.5, -1]; leaky(0.01) hidden.
        // W2 = [[0.2, -0.3], [0.4, 0.1]], b2 = [0, 0.25]; identity output.
        // x = [1, -2]:
        //   z1 = [-2.5, -3]      -> a1 = [-0.025, -0.03]
        //   out = [0.2*-0.025 - 0.3*-0.03, 0.4*-0.025 + 0.1*-0.03 + 0.25]
        //       = [0.004, 0.237]
        let model = AutoencoderModel::from_layers(
            vec![2, 2, 2],
            vec![
                Layer { weights: vec![1.0, 2.0, -1.0, 0.5], biases: vec![0.5, -1.0], input: 2, output: 2 },
                Layer { weights: vec![0.2, -0.3, 0.4, 0.1], biases: vec![0.0, 0.25], input: 2, output: 2 },
            ],
        );
        let out = model.forward(&[1.0, -2.0]).unwrap();
        assert!((out[0] - 0.004).abs() < 1e-12);
        assert!((out[1] - 0.237).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = zero_model(&[4, 4]);
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(DetectorError::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dfae");
        let model = AutoencoderModel::new(&[16, 8, 4, 8, 16], &mut Rng::new(5));
        model.save(&path).unwrap();
        let loaded = AutoencoderModel::load(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.dfae");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            AutoencoderModel::load(&path),
            Err(DetectorError::BadCheckpoint { .. })
        ));
    }

    #[test]
    fn glorot_init_is_bounded_and_seeded() {
        let a = AutoencoderModel::new(&[64, 32, 64], &mut Rng::new(9));
        let b = AutoencoderModel::new(&[64, 32, 64], &mut Rng::new(9));
        assert_eq!(a, b);
        let bound = (6.0 / (64 + 32) as f64).sqrt();
        for w in &a.layers()[0].weights {
            assert!(w.abs() <= bound);
        }
        assert!(a.layers()[0].biases.iter().all(|&b| b == 0.0));
    }
}

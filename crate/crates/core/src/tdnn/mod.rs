//! Shallow time-delay neural network.
//!
//! Two dilated 1-D convolution blocks over time (conv, batch norm, ReLU,
//! max pool, dropout) feed two fully connected layers and a single sigmoid
//! unit. Feature columns are input channels; rows are time steps.
//!
//! Everything is generic over [`Scalar`] so the same code trains in `f32`
//! and is gradient-checked in `f64`.

mod checkpoint;
mod gradcheck;
mod layers;
mod net;
mod train;

use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{gradient_check, gradient_check_with_fault, GradCheckReport};
pub use net::{forward, loss, Layer, Mode};
pub use train::{evaluate, train, Dataset, EpochRecord, TrainConfig};

pub trait Scalar: num_traits::Float + Default + Debug + Send + Sync + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from(v).expect("finite value fits the scalar type")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdnnConfig {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub pool_size: usize,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub fc1_units: usize,
    pub fc2_units: usize,
    /// Feature columns, `13 (K + 1)` for SDC input.
    pub input_width: usize,
    pub input_frames: usize,
}

impl Default for TdnnConfig {
    fn default() -> Self {
        Self {
            conv1: ConvSpec {
                filters: 64,
                kernel: 5,
                dilation: 2,
            },
            conv2: ConvSpec {
                filters: 128,
                kernel: 7,
                dilation: 3,
            },
            pool_size: 2,
            dropout_rate: 0.3,
            l2_lambda: 1e-4,
            fc1_units: 128,
            fc2_units: 64,
            input_width: 104,
            input_frames: 300,
        }
    }
}

impl TdnnConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.conv1.filters,
            self.conv1.kernel,
            self.conv1.dilation,
            self.conv2.filters,
            self.conv2.kernel,
            self.conv2.dilation,
            self.pool_size,
            self.fc1_units,
            self.fc2_units,
            self.input_width,
            self.input_frames,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("TDNN layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config("l2_lambda must be non-negative".into()));
        }
        if self.pooled_frames() == 0 {
            return Err(Error::Config(format!(
                "{} input frames vanish after two pools of {}",
                self.input_frames, self.pool_size
            )));
        }
        Ok(())
    }

    /// Time steps after the first pool.
    pub fn frames_after_pool1(&self) -> usize {
        self.input_frames / self.pool_size
    }

    /// Time steps after the second pool.
    pub fn pooled_frames(&self) -> usize {
        self.frames_after_pool1() / self.pool_size
    }

    pub fn flatten_width(&self) -> usize {
        self.pooled_frames() * self.conv2.filters
    }

    /// `(name, length, is_weight)` of every parameter tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<(&'static str, usize, bool)> {
        let (c1, c2) = (self.conv1, self.conv2);
        vec![
            (
                "conv1.weight",
                c1.kernel * self.input_width * c1.filters,
                true,
            ),
            ("conv1.bias", c1.filters, false),
            ("bn1.gamma", c1.filters, false),
            ("bn1.beta", c1.filters, false),
            ("conv2.weight", c2.kernel * c1.filters * c2.filters, true),
            ("conv2.bias", c2.filters, false),
            ("bn2.gamma", c2.filters, false),
            ("bn2.beta", c2.filters, false),
            ("fc1.weight", self.flatten_width() * self.fc1_units, true),
            ("fc1.bias", self.fc1_units, false),
            ("fc2.weight", self.fc1_units * self.fc2_units, true),
            ("fc2.bias", self.fc2_units, false),
            ("out.weight", self.fc2_units, true),
            ("out.bias", 1, false),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.1).sum()
    }
}

// indices into `TdnnModel::params`
pub(crate) const CONV1_W: usize = 0;
pub(crate) const CONV1_B: usize = 1;
pub(crate) const BN1_G: usize = 2;
pub(crate) const BN1_B: usize = 3;
pub(crate) const CONV2_W: usize = 4;
pub(crate) const CONV2_B: usize = 5;
pub(crate) const BN2_G: usize = 6;
pub(crate) const BN2_B: usize = 7;
pub(crate) const FC1_W: usize = 8;
pub(crate) const FC1_B: usize = 9;
pub(crate) const FC2_W: usize = 10;
pub(crate) const FC2_B: usize = 11;
pub(crate) const OUT_W: usize = 12;
pub(crate) const OUT_B: usize = 13;

/// Batch-norm running statistics of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    fn fresh(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdnnModel<T = f32> {
    pub config: TdnnConfig,
    pub seed: u64,
    /// Parameter tensors in the order of [`TdnnConfig::param_shapes`].
    /// Weights are laid out input-major: conv `[tap][in][out]`, dense `[in][out]`.
    pub params: Vec<Vec<T>>,
    pub bn: [BnStats<T>; 2],
}

impl<T: Scalar> TdnnModel<T> {
    /// Fan-in scaled uniform weights (He bounds for ReLU layers, LeCun for
    /// the sigmoid output), zero biases, unit BN scale.
    pub fn init(config: &TdnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = [
            config.conv1.kernel * config.input_width,
            config.conv2.kernel * config.conv1.filters,
            config.flatten_width(),
            config.fc1_units,
            config.fc2_units,
        ];
        let mut layer = 0;
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, len, is_weight)| {
                if is_weight {
                    let gain = if name == "out.weight" { 3.0 } else { 6.0 };
                    let bound = (gain / fan_in[layer] as f64).sqrt();
                    layer += 1;
                    (0..len)
                        .map(|_| cast(rng.gen_range(-bound..bound)))
                        .collect()
                } else if name.ends_with("gamma") {
                    vec![T::one(); len]
                } else {
                    vec![T::zero(); len]
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            seed,
            params,
            bn: [
                BnStats::fresh(config.conv1.filters),
                BnStats::fresh(config.conv2.filters),
            ],
        })
    }

    /// All weights and biases zero, BN at identity.
    pub fn zeros(config: &TdnnConfig) -> Result<Self> {
        let mut m = Self::init(config, 0)?;
        for (p, (name, _, _)) in m.params.iter_mut().zip(config.param_shapes()) {
            let v = if name.ends_with("gamma") {
                T::one()
            } else {
                T::zero()
            };
            p.iter_mut().for_each(|x| *x = v);
        }
        Ok(m)
    }

    pub fn cast<U: Scalar>(&self) -> TdnnModel<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::from(x).unwrap()).collect::<Vec<U>>();
        let stats = |s: &BnStats<T>| BnStats {
            mean: conv(&s.mean),
            var: conv(&s.var),
        };
        TdnnModel {
            config: self.config.clone(),
            seed: self.seed,
            params: self.params.iter().map(conv).collect(),
            bn: [stats(&self.bn[0]), stats(&self.bn[1])],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(self.bn.iter().flat_map(|s| [&s.mean, &s.var]))
            .all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Sum of squared weights (biases and BN parameters excluded).
    pub fn weight_norm_sq(&self) -> T {
        self.config
            .param_shapes()
            .iter()
            .zip(&self.params)
            .filter(|((_, _, w), _)| *w)
            .flat_map(|(_, p)| p.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub(crate) fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        let c = &self.config;
        if x.rows() != c.input_frames || x.cols() != c.input_width {
            return Err(Error::Shape(format!(
                "model expects {} x {} input, got {} x {}",
                c.input_frames,
                c.input_width,
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    /// `probability >= 0.5`.
    pub label: bool,
}

impl Prediction {
    pub fn from_probability(probability: f64) -> Self {
        Self {
            probability,
            label: probability >= 0.5,
        }
    }
}

pub fn predict<T: Scalar>(model: &TdnnModel<T>, x: &Matrix<T>) -> Result<Prediction> {
    let p = forward(model, std::slice::from_ref(x), Mode::Eval)?;
    Ok(Prediction::from_probability(p[0].to_f64().unwrap()))
}

pub fn predict_batch<T: Scalar>(model: &TdnnModel<T>, xs: &[Matrix<T>]) -> Result<Vec<Prediction>> {
    Ok(forward(model, xs, Mode::Eval)?
        .into_iter()
        .map(|p| Prediction::from_probability(p.to_f64().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1_parameter_count() {
        let cfg = TdnnConfig::default();
        let shapes = cfg.param_shapes();
        assert_eq!(shapes[0].1 + shapes[1].1, 104 * 5 * 64 + 64);
        assert_eq!(shapes[0].1 + shapes[1].1, 33_344);
        let m = TdnnModel::<f32>::init(&cfg, 1).unwrap();
        assert_eq!(
            m.params.iter().map(Vec::len).sum::<usize>(),
            cfg.param_count()
        );
    }

    #[test]
    fn shape_bookkeeping() {
        let cfg = TdnnConfig::default();
        assert_eq!(cfg.frames_after_pool1(), 150);
        assert_eq!(cfg.pooled_frames(), 75);
        assert_eq!(cfg.flatten_width(), 9600);
        let stft = TdnnConfig {
            input_frames: 298,
            ..cfg
        };
        assert_eq!(stft.flatten_width(), 74 * 128);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = TdnnConfig {
            input_frames: 20,
            input_width: 8,
            ..TdnnConfig::default()
        };
        let a = TdnnModel::<f32>::init(&cfg, 7).unwrap();
        assert_eq!(a, TdnnModel::init(&cfg, 7).unwrap());
        assert_ne!(a.params, TdnnModel::<f32>::init(&cfg, 8).unwrap().params);
        assert!(a.is_finite());
    }

    #[test]
    fn config_validation() {
        let bad = TdnnConfig {
            dropout_rate: 1.0,
            ..TdnnConfig::default()
        };
        assert!(bad.validate().is_err());
        let short = TdnnConfig {
            input_frames: 3,
            ..TdnnConfig::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn zero_model_predicts_half() {
        let cfg = TdnnConfig {
            input_frames: 16,
            input_width: 6,
            ..TdnnConfig::default()
        };
        let m = TdnnModel::<f64>::zeros(&cfg).unwrap();
        let x = Matrix::from_vec(16, 6, (0..96).map(|i| (i as f64).sin()).collect());
        let p = predict(&m, &x).unwrap();
        assert_eq!(p.probability, 0.5);
        assert!(p.label);
        assert!(predict(&m, &Matrix::zeros(15, 6)).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(Prediction::from_probability(0.5).label);
        assert!(!Prediction::from_probability(0.4999999).label);
    }

    #[test]
    fn output_bias_is_monotone() {
        let cfg = TdnnConfig {
            input_frames: 16,
            input_width: 6,
            ..TdnnConfig::default()
        };
        let mut m = TdnnModel::<f64>::init(&cfg, 3).unwrap();
        let x = Matrix::from_vec(16, 6, (0..96).map(|i| (i as f64 * 0.3).cos()).collect());
        let mut last = 0.0;
        for b in [-2.0, -0.5, 0.0, 0.1, 3.0] {
            m.params[OUT_B][0] = b;
            let p = predict(&m, &x).unwrap().probability;
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn weight_norm_shrinks_with_any_weight() {
        let cfg = TdnnConfig {
            input_frames: 8,
            input_width: 4,
            ..TdnnConfig::default()
        };
        let mut m = TdnnModel::<f64>::init(&cfg, 5).unwrap();
        let before = m.weight_norm_sq();
        m.params[FC2_W][3] *= 0.5;
        assert!(m.weight_norm_sq() < before);
        let before = m.weight_norm_sq();
        m.params[FC2_B][0] = 10.0;
        assert_eq!(m.weight_norm_sq(), before);
    }
}

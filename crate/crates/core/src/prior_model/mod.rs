//! Feedforward networks mapping a name embedding to a race distribution.
//!
//! Hidden layers use ReLU with optional inverted dropout; the output layer
//! is a six-way softmax. Parameters are kept in `f64` for training and
//! gradient checks. Trained and freshly initialized weights hold values
//! that are exactly representable in `f32`, which is the on-disk precision,
//! so save/load is lossless for them.

mod io;
mod search;
mod train;

pub use io::{load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use search::{hyperparameter_search, SearchOutcome, SearchSpace, TrialResult, DEFAULT_TRIALS};
pub use train::{table_examples, train, voter_examples, EpochStats, TrainReport, TrainingConfig, TrainingExample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{get_embedding, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::race::{RaceDistribution, NUM_RACES, RACE_ORDER_STAMP};

pub const OUTPUT_DIM: usize = NUM_RACES;

/// Which name string a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Surname,
    Firstname,
    Fullname,
}

impl ModelVariant {
    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::Surname => "surname",
            ModelVariant::Firstname => "firstname",
            ModelVariant::Fullname => "fullname",
        }
    }

    /// Architectures selected for the three name models on the full-size
    /// Census and voter data.
    pub fn reference_architecture(self, input_dim: usize) -> MlpArchitecture {
        let (hidden, dropout) = match self {
            ModelVariant::Surname => (vec![1024, 1024], 0.12),
            ModelVariant::Firstname => (vec![128, 256], 0.0),
            ModelVariant::Fullname => (vec![1024, 1024], 0.22),
        };
        MlpArchitecture {
            input_dim,
            hidden,
            dropout,
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surname" => Ok(ModelVariant::Surname),
            "firstname" => Ok(ModelVariant::Firstname),
            "fullname" => Ok(ModelVariant::Fullname),
            _ => Err(Error::InvalidValue(format!("unknown model variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Dropout rate applied after every hidden activation, in `[0, 1)`.
    pub dropout: f64,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, dropout: f64) -> Result<Self> {
        let a = MlpArchitecture {
            input_dim,
            hidden,
            dropout,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidValue("input_dim must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidValue("at least one hidden layer is required".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidValue("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidValue(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `(in, out)` for every layer including the output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, OUTPUT_DIM));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One dense layer; `weights` is input-major: `weights[i * out_dim + o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Outgoing weights of input unit `i`.
    fn input_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.out_dim..(i + 1) * self.out_dim]
    }

    /// `out = W x + b`, skipping zero inputs (hashed n-gram vectors and
    /// ReLU outputs are mostly zeros).
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.input_row(i), out);
            }
        }
    }
}

/// Metadata stamped into weight files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub race_order: String,
    /// Provenance of the embedding provider the network was trained on.
    pub provenance: String,
    pub training_seed: u64,
    pub variant: Option<ModelVariant>,
    /// Free-form JSON with the training configuration.
    pub notes: String,
}

impl ModelMeta {
    pub fn new(provenance: impl Into<String>, training_seed: u64) -> Self {
        ModelMeta {
            race_order: RACE_ORDER_STAMP.to_string(),
            provenance: provenance.into(),
            training_seed,
            variant: None,
            notes: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub arch: MlpArchitecture,
    pub layers: Vec<Layer>,
    pub meta: ModelMeta,
}

impl MlpWeights {
    /// All-zero parameters; the network outputs the uniform distribution.
    pub fn zeros(arch: MlpArchitecture, meta: ModelMeta) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layer_dims().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(MlpWeights { arch, layers, meta })
    }

    /// Uniform fan-in initialization: `±sqrt(6/fan_in)` for hidden layers,
    /// `±sqrt(3/fan_in)` for the output layer, zero biases.
    pub fn init(arch: MlpArchitecture, meta: ModelMeta, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(arch, meta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = w.layers.len();
        for (li, layer) in w.layers.iter_mut().enumerate() {
            let gain = if li + 1 == n { 3.0 } else { 6.0 };
            let limit = (gain / layer.in_dim as f64).sqrt();
            for v in &mut layer.weights {
                *v = round_f32(rng.random_range(-limit..limit));
            }
        }
        Ok(w)
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    /// Flattened parameters in file order: per layer, weights input-major
    /// (`w[i * out_dim + o]`) then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = round_f32(*v));
            l.bias.iter_mut().for_each(|v| *v = round_f32(*v));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Output logits in inference mode.
    pub fn logits(&self, x: &[f64]) -> Result<[f64; OUTPUT_DIM]> {
        self.check_input(x)?;
        let mut cache = Activations::default();
        Ok(self.run(x, None, &mut cache))
    }

    /// Runs the network, recording post-activation outputs (after dropout)
    /// of every hidden layer in `cache`. `masks[l][j]` is the multiplier for
    /// hidden unit `j` of layer `l` (0 or `1/(1-p)`).
    fn run(&self, x: &[f64], masks: Option<&[Vec<f64>]>, cache: &mut Activations) -> [f64; OUTPUT_DIM] {
        let n_hidden = self.layers.len() - 1;
        cache.hidden.resize_with(n_hidden, Vec::new);
        let mut z = Vec::new();
        for li in 0..n_hidden {
            let input: &[f64] = if li == 0 { x } else { &cache.hidden[li - 1] };
            self.layers[li].affine(input, &mut z);
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            if let Some(m) = masks {
                for (v, k) in z.iter_mut().zip(&m[li]) {
                    *v *= k;
                }
            }
            std::mem::swap(&mut cache.hidden[li], &mut z);
        }
        let last = &self.layers[n_hidden];
        let input: &[f64] = if n_hidden == 0 { x } else { &cache.hidden[n_hidden - 1] };
        last.affine(input, &mut z);
        let mut logits = [0.0; OUTPUT_DIM];
        logits.copy_from_slice(&z);
        logits
    }

    fn dropout_masks(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let p = self.arch.dropout;
        let keep = 1.0 / (1.0 - p);
        self.arch
            .hidden
            .iter()
            .map(|&w| {
                (0..w)
                    .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect()
            })
            .collect()
    }

    /// Accumulates the gradient of `weight * CE(softmax(f(x)), target)` into
    /// `grad` (flattened in [`MlpWeights::parameters`] order) and returns the
    /// loss term.
    fn backprop(
        &self,
        x: &[f64],
        target: &RaceDistribution,
        weight: f64,
        masks: Option<&[Vec<f64>]>,
        cache: &mut Activations,
        grad: &mut [f64],
    ) -> f64 {
        let logits = self.run(x, masks, cache);
        let lse = log_sum_exp(&logits);
        let t = target.as_array();
        let mut loss = 0.0;
        let mut delta: Vec<f64> = Vec::with_capacity(OUTPUT_DIM);
        for r in 0..OUTPUT_DIM {
            if t[r] > 0.0 {
                loss -= t[r] * (logits[r] - lse);
            }
            delta.push(weight * ((logits[r] - lse).exp() - t[r]));
        }
        // Layer offsets in the flat gradient.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weights.len() + l.bias.len();
        }
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input: &[f64] = if li == 0 { x } else { &cache.hidden[li - 1] };
            let (gw, gb) = grad[offsets[li]..offsets[li] + layer.weights.len() + layer.bias.len()]
                .split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
            }
            for (i, &xi) in input.iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, &delta, &mut gw[i * layer.out_dim..(i + 1) * layer.out_dim]);
                }
            }
            if li == 0 {
                break;
            }
            let mut prev: Vec<f64> = (0..layer.in_dim).map(|i| dot(layer.input_row(i), &delta)).collect();
            // Through dropout and ReLU of the previous hidden layer: the
            // recorded output is zero exactly where the unit was inactive or
            // dropped, and otherwise equals pre-activation times the mask.
            let h = &cache.hidden[li - 1];
            for (j, g) in prev.iter_mut().enumerate() {
                if h[j] <= 0.0 {
                    *g = 0.0;
                } else if let Some(m) = masks {
                    *g *= m[li - 1][j];
                }
            }
            delta = prev;
        }
        weight * loss
    }

    /// Loss and gradient of the summed weighted cross-entropy over
    /// `examples`, in inference mode (no dropout).
    pub fn loss_and_gradient(&self, examples: &[TrainingExample]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        let mut cache = Activations::default();
        let mut total = 0.0;
        for ex in examples {
            self.check_input(ex.input.values())?;
            total += self.backprop(ex.input.values(), &ex.target, ex.weight, None, &mut cache, &mut grad);
        }
        Ok((total, grad))
    }

    /// Summed weighted cross-entropy over `examples` in inference mode.
    pub fn total_loss(&self, examples: &[TrainingExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in examples {
            let logits = self.logits(ex.input.values())?;
            total += ex.weight * cross_entropy_logits(&logits, &ex.target);
        }
        Ok(total)
    }
}

#[derive(Default)]
struct Activations {
    hidden: Vec<Vec<f64>>,
}

/// Runs the network on `x`. With `training` set, inverted dropout is
/// applied using masks drawn from `dropout_seed`; inference ignores the
/// seed.
pub fn forward(weights: &MlpWeights, x: &EmbeddingVector, training: bool, dropout_seed: u64) -> Result<RaceDistribution> {
    weights.check_input(x.values())?;
    let mut cache = Activations::default();
    let logits = if training && weights.arch.dropout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let masks = weights.dropout_masks(&mut rng);
        weights.run(x.values(), Some(&masks), &mut cache)
    } else {
        weights.run(x.values(), None, &mut cache)
    };
    softmax(&logits)
}

pub fn softmax(logits: &[f64; OUTPUT_DIM]) -> Result<RaceDistribution> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite logits {logits:?}")));
    }
    let e = logits.map(|z| (z - max).exp());
    RaceDistribution::from_weights(e)
}

/// `weight * sum_r -target_r * ln(pred_r)`. Categories with zero target
/// contribute nothing.
pub fn cross_entropy(pred: &RaceDistribution, target: &RaceDistribution, weight: f64) -> f64 {
    let ce: f64 = pred
        .as_array()
        .iter()
        .zip(target.as_array())
        .filter(|(_, &t)| t > 0.0)
        .map(|(&p, &t)| -t * p.ln())
        .sum();
    weight * ce
}

fn cross_entropy_logits(logits: &[f64; OUTPUT_DIM], target: &RaceDistribution) -> f64 {
    let lse = log_sum_exp(logits);
    logits
        .iter()
        .zip(target.as_array())
        .filter(|(_, &t)| t > 0.0)
        .map(|(&z, &t)| -t * (z - lse))
        .sum()
}

fn log_sum_exp(z: &[f64; OUTPUT_DIM]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Dot product with eight independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// A trained network bound to the embedding provider it was trained on.
#[derive(Clone, Debug)]
pub struct PriorModel {
    weights: MlpWeights,
    provider: EmbeddingProvider,
}

impl PriorModel {
    pub fn new(weights: MlpWeights, provider: EmbeddingProvider) -> Result<Self> {
        check_provenance(&weights, &provider)?;
        Ok(PriorModel { weights, provider })
    }

    pub fn weights(&self) -> &MlpWeights {
        &self.weights
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn predict(&self, name: &str) -> Result<RaceDistribution> {
        let x = get_embedding(&self.provider, name)?;
        forward(&self.weights, &x, false, 0)
    }
}

fn check_provenance(weights: &MlpWeights, provider: &EmbeddingProvider) -> Result<()> {
    let found = provider.provenance();
    if weights.meta.provenance != found {
        return Err(Error::ProvenanceMismatch {
            expected: weights.meta.provenance.clone(),
            found,
        });
    }
    if provider.dim() != weights.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: weights.arch.input_dim,
            found: provider.dim(),
        });
    }
    Ok(())
}

/// Race distribution predicted for `name` by a trained prior network.
pub fn predict_prior(weights: &MlpWeights, provider: &EmbeddingProvider, name: &str) -> Result<RaceDistribution> {
    check_provenance(weights, provider)?;
    let x = get_embedding(provider, name)?;
    forward(weights, &x, false, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::NgramConfig;
    use crate::race::Race;
    use proptest::prelude::*;

    fn meta() -> ModelMeta {
        ModelMeta::new("test", 0)
    }

    #[test]
    fn zero_weights_give_uniform() {
        let w = MlpWeights::zeros(MlpArchitecture::new(4, vec![3], 0.0).unwrap(), meta()).unwrap();
        let out = forward(&w, &EmbeddingVector::new(vec![1.0, -2.0, 3.0, 0.5]).unwrap(), false, 0).unwrap();
        assert_eq!(out.as_array(), &[1.0 / 6.0; 6]);
    }

    #[test]
    fn hand_forward_pass() {
        // 2 inputs -> 1 ReLU unit -> 6 logits.
        let arch = MlpArchitecture::new(2, vec![1], 0.0).unwrap();
        let mut w = MlpWeights::zeros(arch, meta()).unwrap();
        w.layers[0].weights = vec![1.0, -1.0];
        w.layers[0].bias = vec![0.5];
        w.layers[1].weights = vec![1.0, 0.0, -1.0, 0.0, 0.0, 2.0];
        w.layers[1].bias = vec![0.0, 0.0, 0.0, 0.0, 0.0, -1.0];
        // h = relu(0.3 - 0.1 + 0.5) = 0.7; logits = (0.7, 0, -0.7, 0, 0, 0.4)
        let x = EmbeddingVector::new(vec![0.3, 0.1]).unwrap();
        let out = forward(&w, &x, false, 0).unwrap();
        let e = [0.7f64.exp(), 1.0, (-0.7f64).exp(), 1.0, 1.0, 0.4f64.exp()];
        let z: f64 = e.iter().sum();
        for (a, b) in out.as_array().iter().zip(e.iter().map(|v| v / z)) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        // Negative pre-activation is clipped: h = 0 -> softmax of bias.
        let x = EmbeddingVector::new(vec![0.0, 2.0]).unwrap();
        let out = forward(&w, &x, false, 0).unwrap();
        let e = [1.0, 1.0, 1.0, 1.0, 1.0, (-1.0f64).exp()];
        let z: f64 = e.iter().sum();
        assert!((out.get(Race::Other) - e[5] / z).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let w = MlpWeights::zeros(MlpArchitecture::new(4, vec![3], 0.0).unwrap(), meta()).unwrap();
        assert!(matches!(
            forward(&w, &EmbeddingVector::zeros(5), false, 0),
            Err(Error::DimensionMismatch { expected: 4, found: 5 })
        ));
    }

    #[test]
    fn inference_is_deterministic_and_ignores_dropout_seed() {
        let arch = MlpArchitecture::new(8, vec![16, 16], 0.4).unwrap();
        let w = MlpWeights::init(arch, meta(), 11).unwrap();
        let x = NgramConfig::new(16, 0).unwrap().embed("x");
        let x = EmbeddingVector::new(x.values()[..8].to_vec()).unwrap();
        let a = forward(&w, &x, false, 1).unwrap();
        assert_eq!(a, forward(&w, &x, false, 999).unwrap());
        // Training mode depends on the seed but is reproducible for a fixed one.
        let t1 = forward(&w, &x, true, 5).unwrap();
        assert_eq!(t1, forward(&w, &x, true, 5).unwrap());
    }

    #[test]
    fn architecture_validation() {
        assert!(MlpArchitecture::new(4, vec![], 0.0).is_err());
        assert!(MlpArchitecture::new(4, vec![0], 0.0).is_err());
        assert!(MlpArchitecture::new(4, vec![2], 1.0).is_err());
        let a = ModelVariant::Surname.reference_architecture(1024);
        assert_eq!(a.hidden, vec![1024, 1024]);
        assert_eq!(a.dropout, 0.12);
        assert_eq!(ModelVariant::Firstname.reference_architecture(8).hidden, vec![128, 256]);
        assert_eq!(ModelVariant::Fullname.reference_architecture(8).dropout, 0.22);
        assert_eq!(a.num_params(), 1024 * 1024 + 1024 + 1024 * 1024 + 1024 + 1024 * 6 + 6);
    }

    #[test]
    fn loss_values() {
        let target = RaceDistribution::point(Race::White);
        let eps = 1e-6;
        let pred = RaceDistribution::new([1.0 - 5.0 * eps, eps, eps, eps, eps, eps]).unwrap();
        let l = cross_entropy(&pred, &target, 1.0);
        assert!((l + (1.0 - 5.0 * eps).ln()).abs() < 1e-15 && l < 1e-5);

        let soft = RaceDistribution::new([0.1, 0.2, 0.3, 0.2, 0.1, 0.1]).unwrap();
        let u = RaceDistribution::uniform();
        assert!((cross_entropy(&u, &soft, 3.0) - 3.0 * 6f64.ln()).abs() < 1e-12);
        assert_eq!(cross_entropy(&u, &soft, 0.0), 0.0);
    }

    #[test]
    fn count_weighting_matches_duplication() {
        let arch = MlpArchitecture::new(3, vec![4], 0.0).unwrap();
        let w = MlpWeights::init(arch, meta(), 2).unwrap();
        let ex = TrainingExample {
            input: EmbeddingVector::new(vec![0.5, -0.25, 1.0]).unwrap(),
            target: RaceDistribution::new([0.5, 0.25, 0.25, 0.0, 0.0, 0.0]).unwrap(),
            weight: 1.0,
        };
        let k = 4;
        let dup = vec![ex.clone(); k];
        let single = vec![TrainingExample { weight: k as f64, ..ex }];
        // k equal terms and k times one term agree exactly for k a power of two.
        assert_eq!(w.total_loss(&dup).unwrap(), w.total_loss(&single).unwrap());
    }

    #[test]
    fn parameter_flattening_round_trips() {
        let arch = MlpArchitecture::new(3, vec![4, 2], 0.0).unwrap();
        let w = MlpWeights::init(arch, meta(), 2).unwrap();
        let p = w.parameters();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2 + 2 * 6 + 6);
        let mut z = MlpWeights::zeros(w.arch.clone(), meta()).unwrap();
        z.set_parameters(&p).unwrap();
        assert_eq!(z, w);
        assert!(z.set_parameters(&p[1..]).is_err());
    }

    #[test]
    fn predict_prior_checks_provenance() {
        let ngram = EmbeddingProvider::Ngram(NgramConfig::new(16, 0).unwrap());
        let arch = MlpArchitecture::new(16, vec![4], 0.0).unwrap();
        let w = MlpWeights::zeros(arch.clone(), ModelMeta::new(ngram.provenance(), 0)).unwrap();
        for name in ["Smith", "Kennedy-Wall", ""] {
            assert_eq!(predict_prior(&w, &ngram, name).unwrap(), RaceDistribution::uniform());
        }
        let other = MlpWeights::zeros(arch, ModelMeta::new("intfloat/e5-large", 0)).unwrap();
        assert!(matches!(predict_prior(&other, &ngram, "x"), Err(Error::ProvenanceMismatch { .. })));
        assert!(PriorModel::new(other, ngram).is_err());
    }

    proptest! {
        #[test]
        fn outputs_are_distributions(
            seed in 0u64..1000,
            x in proptest::collection::vec(-50.0f64..50.0, 5),
        ) {
            let arch = MlpArchitecture::new(5, vec![7, 3], 0.3).unwrap();
            let w = MlpWeights::init(arch, meta(), seed).unwrap();
            let x = EmbeddingVector::new(x).unwrap();
            for training in [false, true] {
                let out = forward(&w, &x, training, seed).unwrap();
                let s: f64 = out.as_array().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(out.as_array().iter().all(|p| *p >= 0.0));
            }
        }
    }
}

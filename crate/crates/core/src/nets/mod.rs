//! MLP generator, auto-encoder energy discriminator and logistic
//! discriminator.
//!
//! All three are built from [`Mlp`] stacks of [`Dense`] layers. Batch
//! normalization follows every weight layer except the generator's output
//! layer and the discriminator's input layer; the auto-encoder's decoder is a
//! single linear layer producing the reconstruction.

mod checkpoint;

pub use checkpoint::Checkpoint;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::LabRng;
use crate::tensor::{BatchNormMode, Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
/// Weight on the previous running statistic.
pub const BN_MOMENTUM: f64 = 0.9;
pub const DROPOUT_RATE: f64 = 0.5;
pub const GENERATOR_INIT_STD: f64 = 0.02;
pub const DISCRIMINATOR_INIT_STD: f64 = 0.002;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

impl Role {
    pub fn init_std(self) -> f64 {
        match self {
            Role::Generator => GENERATOR_INIT_STD,
            Role::Discriminator => DISCRIMINATOR_INIT_STD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub beta: Tensor,
    pub gamma: Option<Tensor>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(width: usize, with_gamma: bool) -> Self {
        BatchNorm {
            beta: Tensor::zeros(&[width]),
            gamma: with_gamma.then(|| Tensor::full(&[width], 1.0)),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
            norm: None,
            activation,
            dropout: 0.0,
        }
    }

    pub fn with_norm(mut self, with_gamma: bool) -> Self {
        self.norm = Some(BatchNorm::new(self.outputs(), with_gamma));
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.weight, &self.bias];
        if let Some(bn) = &self.norm {
            out.push(&bn.beta);
            out.extend(bn.gamma.as_ref());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.weight, &mut self.bias];
        if let Some(bn) = &mut self.norm {
            out.push(&mut bn.beta);
            out.extend(bn.gamma.as_mut());
        }
        out
    }
}

/// Options for a single forward pass.
pub struct Pass<'a> {
    pub training: bool,
    pub rng: &'a mut LabRng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Dense::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Dense::params_mut).collect()
    }

    /// Weights ~ N(0, std²); biases and BN shifts 0; BN scales 1.
    pub fn init<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        for layer in &mut self.layers {
            let shape = layer.weight.shape().to_vec();
            layer.weight = Tensor::randn(&shape, std, rng);
            layer.bias = Tensor::zeros(&[shape[1]]);
            if let Some(bn) = &mut layer.norm {
                *bn = BatchNorm::new(shape[1], bn.gamma.is_some());
            }
        }
    }

    /// Registers every parameter as a differentiable leaf, in
    /// [`Mlp::params`] order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|p| g.param(p.clone())).collect()
    }

    /// Runs the stack and returns each layer's post-activation output
    /// (before dropout). Training mode normalizes with batch statistics and
    /// folds them into the running averages.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        params: &[Var],
        x: Var,
        pass: &mut Pass<'_>,
    ) -> Result<Vec<Var>> {
        if params.len() != self.params().len() {
            return Err(Error::invalid("parameter binding does not match network"));
        }
        let mut cursor = params.iter().copied();
        let mut next = || cursor.next().expect("checked length");
        let mut h = x;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (w, b) = (next(), next());
            let mut y = g.matmul(h, w)?;
            y = g.add_bias(y, b)?;
            if let Some(bn) = &mut layer.norm {
                let beta = next();
                let gamma = bn.gamma.as_ref().map(|_| next());
                let mode = if pass.training {
                    BatchNormMode::Training { eps: BN_EPS }
                } else {
                    BatchNormMode::Inference {
                        mean: &bn.running_mean,
                        var: &bn.running_var,
                        eps: BN_EPS,
                    }
                };
                let (out, stats) = g.batchnorm(y, beta, gamma, mode)?;
                if let Some(stats) = stats {
                    for j in 0..stats.mean.len() {
                        bn.running_mean[j] =
                            BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * stats.mean[j];
                        bn.running_var[j] =
                            BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * stats.var[j];
                    }
                }
                y = out;
            }
            y = match layer.activation {
                Activation::Identity => y,
                Activation::Relu => g.relu(y)?,
                Activation::Tanh => g.tanh(y)?,
                Activation::Sigmoid => g.sigmoid(y)?,
            };
            outputs.push(y);
            h = g.dropout(y, layer.dropout, pass.training, &mut *pass.rng)?;
        }
        Ok(outputs)
    }
}

/// Hidden layers `linear → batchnorm → relu`, output `linear → tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    pub net: Mlp,
}

impl GeneratorNet {
    pub fn new(layers: usize, hidden: usize, latent_dim: usize, output_dim: usize) -> Result<Self> {
        if layers == 0 || hidden == 0 || latent_dim == 0 || output_dim == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        let mut stack = Vec::with_capacity(layers);
        let mut width = latent_dim;
        for _ in 1..layers {
            stack.push(Dense::new(width, hidden, Activation::Relu).with_norm(true));
            width = hidden;
        }
        stack.push(Dense::new(width, output_dim, Activation::Tanh));
        Ok(GeneratorNet {
            net: Mlp { layers: stack },
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward(
        &mut self,
        g: &mut Graph,
        params: &[Var],
        z: Var,
        pass: &mut Pass<'_>,
    ) -> Result<Var> {
        let outs = self.net.forward(g, params, z, pass)?;
        Ok(*outs.last().expect("non-empty"))
    }

    /// Maps a latent batch to samples in (−1, 1)^d.
    pub fn generate(&mut self, z: &Tensor, pass: &mut Pass<'_>) -> Result<Tensor> {
        check_width("generate", z, self.latent_dim())?;
        let mut g = Graph::new();
        let params: Vec<Var> = self
            .net
            .params()
            .into_iter()
            .map(|p| g.constant(p.clone()))
            .collect();
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, &params, zv, pass)?;
        Ok(g.value(out).clone())
    }
}

/// Which norm of the reconstruction residual serves as the energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EnergyNorm {
    /// ‖Dec(Enc(x)) − x‖
    #[default]
    Euclidean,
    /// ‖Dec(Enc(x)) − x‖²
    Squared,
}

impl EnergyNorm {
    pub fn name(self) -> &'static str {
        match self {
            EnergyNorm::Euclidean => "euclidean",
            EnergyNorm::Squared => "squared",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclidean" => Some(EnergyNorm::Euclidean),
            "squared" => Some(EnergyNorm::Squared),
            _ => None,
        }
    }
}

/// Per-sample energies and the encoder representations they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyOutput {
    pub energies: Vec<f64>,
    /// `[batch, s]`
    pub representations: Tensor,
}

/// Graph handles produced by [`AutoEncoderDiscriminator::forward`].
#[derive(Clone, Copy, Debug)]
pub struct EnergyVars {
    /// `[batch]`
    pub energies: Var,
    /// `[batch, s]`, taken after the encoder's final nonlinearity.
    pub representations: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoEncoderDiscriminator {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub energy_norm: EnergyNorm,
}

impl AutoEncoderDiscriminator {
    /// `layers` counts encoder and decoder layers together; only a
    /// one-layer decoder is supported.
    pub fn new(
        layers: usize,
        decoder_layers: usize,
        hidden: usize,
        input_dim: usize,
        dropout: bool,
    ) -> Result<Self> {
        if decoder_layers != 1 {
            return Err(Error::Config(format!(
                "the decoder must be exactly one layer, got {decoder_layers}"
            )));
        }
        if layers < 2 {
            return Err(Error::Config(format!(
                "an auto-encoder needs at least 2 layers (encoder + decoder), got {layers}"
            )));
        }
        if hidden == 0 || input_dim == 0 {
            return Err(Error::Config("discriminator dimensions must be positive".into()));
        }
        let rate = if dropout { DROPOUT_RATE } else { 0.0 };
        let mut enc = Vec::with_capacity(layers - 1);
        enc.push(Dense::new(input_dim, hidden, Activation::Relu).with_dropout(rate));
        for _ in 2..layers {
            enc.push(
                Dense::new(hidden, hidden, Activation::Relu)
                    .with_norm(true)
                    .with_dropout(rate),
            );
        }
        Ok(AutoEncoderDiscriminator {
            encoder: Mlp { layers: enc },
            decoder: Mlp {
                layers: vec![Dense::new(hidden, input_dim, Activation::Identity)],
            },
            energy_norm: EnergyNorm::Euclidean,
        })
    }

    pub fn with_energy_norm(mut self, norm: EnergyNorm) -> Self {
        self.energy_norm = norm;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn repr_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn forward(
        &mut self,
        g: &mut Graph,
        params: &[Var],
        x: Var,
        pass: &mut Pass<'_>,
    ) -> Result<EnergyVars> {
        let n_enc = self.encoder.params().len();
        let outs = self.encoder.forward(g, &params[..n_enc], x, pass)?;
        let repr = *outs.last().expect("non-empty encoder");
        let dec_in = g.dropout(
            repr,
            self.encoder.layers.last().expect("non-empty").dropout,
            pass.training,
            &mut *pass.rng,
        )?;
        let recon = *self
            .decoder
            .forward(g, &params[n_enc..], dec_in, pass)?
            .last()
            .expect("one decoder layer");
        let residual = g.sub(recon, x)?;
        let energies = match self.energy_norm {
            EnergyNorm::Euclidean => g.euclidean_norm_rowwise(residual)?,
            EnergyNorm::Squared => g.squared_l2_rowwise(residual)?,
        };
        Ok(EnergyVars {
            energies,
            representations: repr,
        })
    }

    /// Energies of a batch without recording gradients for the caller.
    pub fn ae_energy(&mut self, x: &Tensor, pass: &mut Pass<'_>) -> Result<EnergyOutput> {
        check_width("ae_energy", x, self.input_dim())?;
        let mut g = Graph::new();
        let params: Vec<Var> = self.params().into_iter().map(|p| g.constant(p.clone())).collect();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &params, xv, pass)?;
        Ok(EnergyOutput {
            energies: g.value(out.energies).data().to_vec(),
            representations: g.value(out.representations).clone(),
        })
    }
}

/// `[hidden relu layers] → linear → sigmoid` producing P(real).
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticDiscriminator {
    pub net: Mlp,
}

impl LogisticDiscriminator {
    pub fn new(layers: usize, hidden: usize, input_dim: usize, dropout: bool) -> Result<Self> {
        if layers == 0 || hidden == 0 || input_dim == 0 {
            return Err(Error::Config("discriminator dimensions must be positive".into()));
        }
        let rate = if dropout { DROPOUT_RATE } else { 0.0 };
        let mut stack = Vec::with_capacity(layers);
        let mut width = input_dim;
        for i in 1..layers {
            let mut layer = Dense::new(width, hidden, Activation::Relu).with_dropout(rate);
            if i > 1 {
                layer = layer.with_norm(true);
            }
            stack.push(layer);
            width = hidden;
        }
        stack.push(Dense::new(width, 1, Activation::Sigmoid));
        Ok(LogisticDiscriminator {
            net: Mlp { layers: stack },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Probabilities, shape `[batch]`.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        params: &[Var],
        x: Var,
        pass: &mut Pass<'_>,
    ) -> Result<Var> {
        let out = *self.net.forward(g, params, x, pass)?.last().expect("non-empty");
        let n = g.value(out).rows();
        g.reshape(out, &[n])
    }

    pub fn logistic_score(&mut self, x: &Tensor, pass: &mut Pass<'_>) -> Result<Vec<f64>> {
        check_width("logistic_score", x, self.input_dim())?;
        let mut g = Graph::new();
        let params: Vec<Var> = self
            .net
            .params()
            .into_iter()
            .map(|p| g.constant(p.clone()))
            .collect();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &params, xv, pass)?;
        Ok(g.value(out).data().to_vec())
    }
}

/// Either discriminator family, as used by the trainer.
#[derive(Clone, Debug, PartialEq)]
pub enum Discriminator {
    AutoEncoder(AutoEncoderDiscriminator),
    Logistic(LogisticDiscriminator),
}

/// Uniform access to the parameters of every network kind.
pub trait Network {
    fn stacks(&self) -> Vec<&Mlp>;
    fn stacks_mut(&mut self) -> Vec<&mut Mlp>;

    fn params(&self) -> Vec<&Tensor> {
        self.stacks().into_iter().flat_map(Mlp::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stacks_mut().into_iter().flat_map(Mlp::params_mut).collect()
    }

    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|p| g.param(p.clone())).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

impl Network for Mlp {
    fn stacks(&self) -> Vec<&Mlp> {
        vec![self]
    }
    fn stacks_mut(&mut self) -> Vec<&mut Mlp> {
        vec![self]
    }
}

impl Network for GeneratorNet {
    fn stacks(&self) -> Vec<&Mlp> {
        vec![&self.net]
    }
    fn stacks_mut(&mut self) -> Vec<&mut Mlp> {
        vec![&mut self.net]
    }
}

impl Network for AutoEncoderDiscriminator {
    fn stacks(&self) -> Vec<&Mlp> {
        vec![&self.encoder, &self.decoder]
    }
    fn stacks_mut(&mut self) -> Vec<&mut Mlp> {
        vec![&mut self.encoder, &mut self.decoder]
    }
}

impl Network for LogisticDiscriminator {
    fn stacks(&self) -> Vec<&Mlp> {
        vec![&self.net]
    }
    fn stacks_mut(&mut self) -> Vec<&mut Mlp> {
        vec![&mut self.net]
    }
}

impl Network for Discriminator {
    fn stacks(&self) -> Vec<&Mlp> {
        match self {
            Discriminator::AutoEncoder(d) => d.stacks(),
            Discriminator::Logistic(d) => d.stacks(),
        }
    }
    fn stacks_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            Discriminator::AutoEncoder(d) => d.stacks_mut(),
            Discriminator::Logistic(d) => d.stacks_mut(),
        }
    }
}

/// Re-initializes a fresh network: weights ~ N(0, σ²) with σ = 0.02 for
/// generators and 0.002 for discriminators, all biases zero.
pub fn init_weights<N: Network + ?Sized, R: Rng + ?Sized>(net: &mut N, role: Role, rng: &mut R) {
    for stack in net.stacks_mut() {
        stack.init(role.init_std(), rng);
    }
}

fn check_width(op: &'static str, x: &Tensor, width: usize) -> Result<()> {
    if x.shape().len() != 2 || x.shape()[1] != width {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![x.rows(), width],
        });
    }
    Ok(())
}

/// Draws a `[batch, dim]` latent batch from N(0, 1).
pub fn sample_latent<R: Rng + ?Sized>(batch: usize, dim: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[batch, dim], 1.0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn pass(rng: &mut LabRng, training: bool) -> Pass<'_> {
        Pass { training, rng }
    }

    #[test]
    fn generator_layout_follows_layer_count() {
        let g = GeneratorNet::new(3, 16, 8, 2).unwrap();
        assert_eq!(g.net.layers.len(), 3);
        assert!(g.net.layers[..2].iter().all(|l| l.norm.is_some()));
        let last = g.net.layers.last().unwrap();
        assert!(last.norm.is_none());
        assert_eq!(last.activation, Activation::Tanh);
    }

    #[test]
    fn autoencoder_reconciles_layer_counts() {
        let d = AutoEncoderDiscriminator::new(4, 1, 16, 6, false).unwrap();
        assert_eq!(d.encoder.layers.len() + d.decoder.layers.len(), 4);
        assert!(d.encoder.layers[0].norm.is_none());
        assert!(d.encoder.layers[1..].iter().all(|l| l.norm.is_some()));
        assert!(matches!(
            AutoEncoderDiscriminator::new(4, 2, 16, 6, false),
            Err(Error::Config(_))
        ));
        assert!(AutoEncoderDiscriminator::new(1, 1, 16, 6, false).is_err());
    }

    #[test]
    fn init_zeroes_biases_and_is_seeded() {
        let mut a = GeneratorNet::new(3, 16, 8, 2).unwrap();
        let mut b = a.clone();
        init_weights(&mut a, Role::Generator, &mut stream(3, 1));
        init_weights(&mut b, Role::Generator, &mut stream(3, 1));
        assert_eq!(a, b);
        for layer in &a.net.layers {
            assert!(layer.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_spread_matches_role() {
        let mut d = AutoEncoderDiscriminator::new(2, 1, 512, 256, false).unwrap();
        init_weights(&mut d, Role::Discriminator, &mut stream(0, 2));
        let w: Vec<f64> = d
            .params()
            .iter()
            .filter(|p| p.shape().len() == 2)
            .flat_map(|p| p.data().iter().copied())
            .collect();
        assert!(w.len() >= 100_000);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let target = DISCRIMINATOR_INIT_STD.powi(2);
        assert!((var / target - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let mut g = GeneratorNet::new(3, 8, 4, 3).unwrap();
        let mut rng = stream(1, 1);
        let z = sample_latent(5, 4, &mut rng);
        let out = g.generate(&z, &mut pass(&mut rng, false)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_output_is_bounded() {
        let mut rng = stream(2, 1);
        let mut g = GeneratorNet::new(3, 16, 4, 3).unwrap();
        for stack in g.stacks_mut() {
            stack.init(0.5, &mut rng);
        }
        for _ in 0..1000 {
            let z = sample_latent(4, 4, &mut rng);
            let out = g.generate(&z, &mut pass(&mut rng.clone(), true)).unwrap();
            assert!(out.data().iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }

    #[test]
    fn energy_of_zero_reconstruction_is_input_norm() {
        let mut d = AutoEncoderDiscriminator::new(2, 1, 4, 3, false).unwrap();
        let x = Tensor::from_rows(&[vec![3.0, 4.0, 0.0], vec![1.0, 2.0, 2.0]]).unwrap();
        let mut rng = stream(0, 0);
        let out = d.ae_energy(&x, &mut pass(&mut rng, false)).unwrap();
        assert_eq!(out.energies, vec![5.0, 3.0]);
        assert_eq!(out.representations.shape(), &[2, 4]);
    }

    #[test]
    fn exact_reconstruction_has_zero_energy() {
        // Encoder copies x into the first units; the decoder copies them back.
        let mut d = AutoEncoderDiscriminator::new(2, 1, 2, 2, false).unwrap();
        d.encoder.layers[0].weight = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        d.decoder.layers[0].weight = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, 0.25], vec![1.0, 0.0]]).unwrap();
        let mut rng = stream(0, 0);
        let out = d.ae_energy(&x, &mut pass(&mut rng, false)).unwrap();
        assert_eq!(out.energies, vec![0.0, 0.0]);
    }

    #[test]
    fn logistic_scores_start_at_one_half() {
        let mut d = LogisticDiscriminator::new(3, 8, 2, false).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.3, 0.2]]).unwrap();
        let mut rng = stream(0, 0);
        let p = d.logistic_score(&x, &mut pass(&mut rng, false)).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn raising_final_bias_raises_scores() {
        let mut rng = stream(4, 2);
        let mut d = LogisticDiscriminator::new(2, 8, 2, false).unwrap();
        init_weights(&mut d, Role::Discriminator, &mut rng);
        for stack in d.stacks_mut() {
            stack.init(0.5, &mut rng);
        }
        let x = Tensor::randn(&[16, 2], 1.0, &mut rng);
        let before = d.logistic_score(&x, &mut pass(&mut rng.clone(), false)).unwrap();
        d.net.layers.last_mut().unwrap().bias.data_mut()[0] += 0.7;
        let after = d.logistic_score(&x, &mut pass(&mut rng.clone(), false)).unwrap();
        for (b, a) in before.iter().zip(&after) {
            assert!(*b > 0.0 && *b < 1.0);
            assert!(a > b);
        }
    }

    #[test]
    fn running_stats_track_batches() {
        let mut g = GeneratorNet::new(2, 3, 2, 2).unwrap();
        let mut rng = stream(5, 1);
        init_weights(&mut g, Role::Generator, &mut rng);
        let z = sample_latent(32, 2, &mut rng);
        g.generate(&z, &mut pass(&mut rng.clone(), true)).unwrap();
        let bn = g.net.layers[0].norm.as_ref().unwrap();
        assert!(bn.running_var.iter().all(|&v| v < 1.0));
    }
}

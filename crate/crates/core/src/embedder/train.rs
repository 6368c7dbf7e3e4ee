use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{accumulate_pair_gradient, LossForm};
use super::network::EncoderParams;
use super::optim::sgd_step;
use super::pairs::{mine_hard_pairs, sample_pairs, LabeledSet};
use super::EmbedError;

/// How each mini-batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mining {
    Random,
    /// Hardest pairs out of a larger random pool, re-mined every iteration.
    #[default]
    Aggressive,
}

impl std::str::FromStr for Mining {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "aggressive" => Ok(Self::Aggressive),
            other => Err(format!("unknown mining mode `{other}` (random|aggressive)")),
        }
    }
}

impl std::fmt::Display for Mining {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Aggressive => "aggressive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub iterations: usize,
    pub seed: u64,
    pub mining: Mining,
    pub loss: LossForm,
    /// Widths of the hidden layers between the input and the embedding.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Candidate pool size for aggressive mining, as a multiple of the batch.
    pub pool_factor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            margin: 1.0,
            iterations: 100_000,
            seed: 0,
            mining: Mining::Aggressive,
            loss: LossForm::Squared,
            hidden: vec![128],
            embedding_dim: 256,
            pool_factor: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.pool_factor == 0 {
            return bad("pool_factor must be positive");
        }
        Ok(())
    }

    /// Full layer widths for an input of `input_dim`.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.embedding_dim);
        dims
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Mean batch loss per iteration, measured before that iteration's update.
    pub losses: Vec<f64>,
}

/// Initializes an encoder from `cfg.seed` and trains it on `set`.
pub fn train(set: &LabeledSet, cfg: &TrainConfig) -> Result<TrainOutcome, EmbedError> {
    cfg.validate()?;
    let dim = set.dim().ok_or(EmbedError::TooFewClasses(0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = EncoderParams::init_with(&cfg.layer_dims(dim), &mut rng)?;
    run(params, set, cfg, &mut rng)
}

/// Trains starting from existing parameters. Batch sampling is still driven
/// by `cfg.seed`.
pub fn train_from(
    params: EncoderParams,
    set: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, EmbedError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run(params, set, cfg, &mut rng)
}

fn run(
    mut params: EncoderParams,
    set: &LabeledSet,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome, EmbedError> {
    if let Some(dim) = set.dim() {
        if dim != params.input_dim() {
            return Err(EmbedError::Dimension {
                expected: params.input_dim(),
                got: dim,
            });
        }
    }
    let mut velocity = params.zeros_like();
    let mut grad = params.zeros_like();
    let mut losses = Vec::with_capacity(cfg.iterations);
    let scale = 1.0 / cfg.batch_size as f64;
    for iteration in 0..cfg.iterations {
        let batch_seed: u64 = rng.random();
        let batch = match cfg.mining {
            Mining::Random => sample_pairs(set, cfg.batch_size, batch_seed)?,
            Mining::Aggressive => {
                mine_hard_pairs(&params, set, cfg.batch_size, cfg.pool_factor, batch_seed)?
            }
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for pair in &batch {
            total += accumulate_pair_gradient(
                &params,
                set.descriptor(pair.a).as_slice(),
                set.descriptor(pair.b).as_slice(),
                pair.label,
                cfg.margin,
                cfg.loss,
                &mut grad,
            )?;
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(EmbedError::NonFiniteLoss { iteration, loss });
        }
        losses.push(loss);
        grad.iter_mut().for_each(|g| *g *= scale);
        sgd_step(
            &mut params,
            &mut velocity,
            &grad,
            cfg.learning_rate,
            cfg.momentum,
        )?;
        if iteration % 1000 == 999 {
            log::debug!("iteration {}: loss {loss:.6}", iteration + 1);
        }
    }
    Ok(TrainOutcome { params, losses })
}

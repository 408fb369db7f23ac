//! Adam training loop: per-epoch shuffling, parameter-freeze masks,
//! validation-driven best-checkpoint retention, and CSV logging.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{Adam, AdamConfig};
use crate::dataset::RegistrationSample;
use crate::error::{Error, Result};
use crate::loss::{total_loss_node, LossConfig};
use crate::metrics::evaluate_pair;
use crate::network::Network;
use crate::params::ParameterSet;
use crate::tape::Tape;
use crate::tensor::Scalar;

/// Which layer groups stay fixed at their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreezeMode {
    None,
    /// Freeze every `encoder/` layer. Only meaningful for the
    /// encoder-decoder baseline; the decoder-only model has none.
    Encoder,
    /// Freeze every `decoder/` layer; the `output/` head stays trainable.
    DecoderExceptOutput,
}

impl FromStr for FreezeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FreezeMode::None),
            "encoder" => Ok(FreezeMode::Encoder),
            "decoder_except_output" | "decoder-except-output" => Ok(FreezeMode::DecoderExceptOutput),
            other => Err(Error::Config(format!(
                "unknown freeze mode {other:?}, expected none | encoder | decoder_except_output"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Only 1 is supported; validated, not silently coerced.
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub freeze: FreezeMode,
    pub loss: LossConfig,
    /// Must agree with the model's own flag; checked in `train`.
    pub diffeomorphic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 1,
            epochs: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            freeze: FreezeMode::None,
            loss: LossConfig::default(),
            diffeomorphic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch_size must be 1, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        self.loss.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_eps,
        }
    }
}

/// One completed epoch. `fold_fraction` is the raw [0,1] fraction; the CSV
/// column holds it as a percentage. `seconds` is wall time since training
/// started, so it is the one nondeterministic column.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub similarity: f64,
    pub regularizer: f64,
    pub val_dice: f64,
    pub fold_fraction: f64,
    pub seconds: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,sim,reg,val_dice,fold_pct,seconds";

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
                r.epoch,
                r.loss,
                r.similarity,
                r.regularizer,
                r.val_dice,
                r.fold_fraction * 100.0,
                r.seconds
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the highest validation Dice.
    pub best: ParameterSet<f32>,
    /// Parameters after the final epoch.
    pub last: ParameterSet<f32>,
    /// 1-based; 0 when no epochs ran.
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub log: TrainLog,
}

/// Set trainable flags for `mode`. Rejects modes whose prefix matches no
/// layer, e.g. encoder freezing on the decoder-only model.
pub fn apply_freeze<E: Scalar>(params: &mut ParameterSet<E>, mode: FreezeMode) -> Result<()> {
    params.set_all_trainable(true);
    match mode {
        FreezeMode::None => Ok(()),
        FreezeMode::Encoder => params.set_trainable_by_prefix("encoder/", false).map(|_| ()),
        FreezeMode::DecoderExceptOutput => {
            params.set_trainable_by_prefix("decoder/", false).map(|_| ())
        }
    }
}

/// Loss terms of one pair under the current parameters, without updating.
pub fn pair_loss(
    net: &Network,
    params: &ParameterSet<f32>,
    sample: &RegistrationSample,
    diffeomorphic: bool,
    loss_cfg: &LossConfig,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::<f32>::new();
    let input = sample.input_pair();
    let (field, _) = net.forward(&mut tape, params, &input)?;
    let moving = tape.constant(sample.moving.clone());
    let fixed = tape.constant(sample.fixed.clone());
    let terms = total_loss_node(&mut tape, moving, fixed, field, diffeomorphic, loss_cfg)?;
    Ok((
        tape.value(terms.total).data()[0] as f64,
        tape.value(terms.similarity).data()[0] as f64,
        tape.value(terms.regularizer).data()[0] as f64,
    ))
}

fn train_step(
    net: &Network,
    params: &mut ParameterSet<f32>,
    adam: &mut Adam<f32>,
    sample: &RegistrationSample,
    cfg: &TrainConfig,
    epoch: usize,
    pair: usize,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::<f32>::new();
    let input = sample.input_pair();
    let (field, layers) = net.forward(&mut tape, params, &input)?;
    let moving = tape.constant(sample.moving.clone());
    let fixed = tape.constant(sample.fixed.clone());
    let terms = total_loss_node(&mut tape, moving, fixed, field, cfg.diffeomorphic, &cfg.loss)?;
    let total = tape.value(terms.total).data()[0] as f64;
    let sim = tape.value(terms.similarity).data()[0] as f64;
    let reg = tape.value(terms.regularizer).data()[0] as f64;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, pair });
    }
    let mut grads = tape.backward(terms.total)?;
    adam.step(params, &mut grads, &layers)?;
    Ok((total, sim, reg))
}

/// Mean Dice and folding fraction over a sample set under fixed parameters.
pub fn mean_dice_and_fold(
    net: &Network,
    params: &ParameterSet<f32>,
    val_set: &[RegistrationSample],
) -> Result<(f64, f64)> {
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("no evaluation pairs".into()));
    }
    let mut dice = 0.0;
    let mut fold = 0.0;
    for (i, sample) in val_set.iter().enumerate() {
        let row = evaluate_pair(net, params, sample, &format!("val_{i:04}"))?;
        dice += row.mean_dice;
        fold += row.fold_fraction;
    }
    let n = val_set.len() as f64;
    Ok((dice / n, fold / n))
}

// Shuffle stream kept distinct from the parameter-init stream, which is
// seeded with the plain seed.
const SHUFFLE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Run the full loop: init from `cfg.seed`, freeze, iterate epochs over a
/// per-epoch shuffled pair order, validate after each epoch, keep the best
/// epoch by validation Dice. Deterministic given the seed, except for the
/// wall-clock column of the log.
pub fn train(
    net: &Network,
    train_set: &[RegistrationSample],
    val_set: &[RegistrationSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("no validation pairs".into()));
    }
    if cfg.diffeomorphic != net.diffeomorphic() {
        return Err(Error::Config(format!(
            "train config says diffeomorphic={} but the model says {}",
            cfg.diffeomorphic,
            net.diffeomorphic()
        )));
    }

    let mut params: ParameterSet<f32> = net.init_parameters(cfg.seed)?;
    apply_freeze(&mut params, cfg.freeze)?;

    let mut adam = Adam::new(cfg.adam());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let start = Instant::now();

    let mut log = TrainLog::default();
    let mut best = params.clone();
    let mut best_epoch = 0usize;
    let mut best_val: Option<f64> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        for &pair_idx in &order {
            let (t, s, r) =
                train_step(net, &mut params, &mut adam, &train_set[pair_idx], cfg, epoch, pair_idx)?;
            sums.0 += t;
            sums.1 += s;
            sums.2 += r;
        }
        let n = train_set.len() as f64;
        let (val_dice, fold_fraction) = mean_dice_and_fold(net, &params, val_set)?;
        log.records.push(EpochRecord {
            epoch,
            loss: sums.0 / n,
            similarity: sums.1 / n,
            regularizer: sums.2 / n,
            val_dice,
            fold_fraction,
            seconds: start.elapsed().as_secs_f64(),
        });
        if best_val.map_or(true, |b| val_dice > b) {
            best_val = Some(val_dice);
            best_epoch = epoch;
            best = params.clone();
        }
    }

    Ok(TrainOutcome {
        best,
        last: params,
        best_epoch,
        best_val_dice: best_val,
        log,
    })
}

pub const BEST_CHECKPOINT_FILE: &str = "best.ltc";
pub const FINAL_CHECKPOINT_FILE: &str = "final.ltc";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Write `best.ltc`, `final.ltc` and `train_log.csv` into `dir`.
pub fn write_train_outputs(
    dir: impl AsRef<Path>,
    net: &Network,
    outcome: &TrainOutcome,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    net.save_checkpoint(dir.join(BEST_CHECKPOINT_FILE), &outcome.best)?;
    net.save_checkpoint(dir.join(FINAL_CHECKPOINT_FILE), &outcome.last)?;
    std::fs::write(dir.join(TRAIN_LOG_FILE), outcome.log.to_csv())?;
    Ok(())
}

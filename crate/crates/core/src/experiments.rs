//! Canned experiment protocols behind the `ablate` command: the
//! encoder-freeze comparison on the baseline network and the pooling
//! pyramid ablations on the decoder-only network. Each emits a small CSV
//! with one row per configuration, aggregated over seeds.

use crate::baseline::{BaselineConfig, EncoderDecoderNet};
use crate::dataset::RegistrationSample;
use crate::decoder::{DecoderNet, ModelConfig};
use crate::error::{Error, Result};
use crate::kernels::PoolMode;
use crate::metrics::dice_auto;
use crate::network::Network;
use crate::trainer::{mean_dice_and_fold, train, FreezeMode, TrainConfig};

/// One configuration's aggregate over seeds. Fractions are raw [0,1]; the
/// CSV exposes fold columns as percentages.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub config: String,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub fold_mean: f64,
    pub fold_std: f64,
    /// per-seed mean test Dice, in input seed order
    pub seed_dice: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

pub const EXPERIMENT_CSV_HEADER: &str = "config,dice_mean,dice_std,fold_pct_mean,fold_pct_std";

impl ExperimentTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EXPERIMENT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.config,
                r.dice_mean,
                r.dice_std,
                r.fold_mean * 100.0,
                r.fold_std * 100.0
            ));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn require_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!(
            "experiments need at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    Ok(())
}

/// Mean Dice between the raw (unregistered) label pairs.
pub fn initial_mean_dice(samples: &[RegistrationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no pairs for the initial Dice".into()));
    }
    let mut sum = 0.0;
    for s in samples {
        sum += dice_auto(&s.moving_labels, &s.fixed_labels)?.mean;
    }
    Ok(sum / samples.len() as f64)
}

fn run_configuration(
    net: &Network,
    train_set: &[RegistrationSample],
    val_set: &[RegistrationSample],
    test_set: &[RegistrationSample],
    train_cfg: &TrainConfig,
    freeze: FreezeMode,
    seeds: &[u64],
    name: &str,
) -> Result<ExperimentRow> {
    let mut dices = Vec::with_capacity(seeds.len());
    let mut folds = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = train_cfg.clone();
        cfg.seed = seed;
        cfg.freeze = freeze;
        let out = train(net, train_set, val_set, &cfg)?;
        let (d, f) = mean_dice_and_fold(net, &out.best, test_set)?;
        dices.push(d);
        folds.push(f);
    }
    let (dice_mean, dice_std) = mean_std(&dices);
    let (fold_mean, fold_std) = mean_std(&folds);
    Ok(ExperimentRow {
        config: name.to_string(),
        dice_mean,
        dice_std,
        fold_mean,
        fold_std,
        seed_dice: dices,
    })
}

/// Row order of the freeze comparison: `full` trains everything,
/// `decoder_only` freezes the encoder, `encoder_only` freezes the decoder
/// but keeps the output head trainable.
pub const FREEZE_CONFIGS: [(&str, FreezeMode); 3] = [
    ("full", FreezeMode::None),
    ("decoder_only", FreezeMode::Encoder),
    ("encoder_only", FreezeMode::DecoderExceptOutput),
];

/// Train the baseline under the three freeze configurations, each over the
/// same seeds and budget, and report mean test Dice and folding per row.
pub fn redundancy_experiment(
    train_set: &[RegistrationSample],
    val_set: &[RegistrationSample],
    test_set: &[RegistrationSample],
    base: &BaselineConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentTable> {
    require_seeds(seeds)?;
    let net = Network::Baseline(EncoderDecoderNet::new(base.clone())?);
    let mut rows = Vec::new();
    for (name, mode) in FREEZE_CONFIGS {
        rows.push(run_configuration(
            &net, train_set, val_set, test_set, train_cfg, mode, seeds, name,
        )?);
    }
    Ok(ExperimentTable { rows })
}

/// Pyramid-level configurations from coarsest-only to everything, in the
/// order the monotonicity claim is stated over.
pub fn level_ablation_configs(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let variants: [(&str, &[usize], bool); 4] = [
        ("levels_8", &[8], false),
        ("levels_8_4", &[8, 4], false),
        ("levels_8_4_2", &[8, 4, 2], false),
        ("levels_8_4_2_orig", &[8, 4, 2], true),
    ];
    variants
        .iter()
        .map(|&(name, windows, orig)| {
            let mut cfg = base.clone();
            cfg.pool_windows = windows.to_vec();
            cfg.include_original = orig;
            (name.to_string(), cfg)
        })
        .collect()
}

/// Pooling-operation configurations: each mode alone, then all three.
pub fn mode_ablation_configs(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let variants: [(&str, &[PoolMode]); 4] = [
        ("min", &[PoolMode::Min]),
        ("avg", &[PoolMode::Avg]),
        ("max", &[PoolMode::Max]),
        ("min_avg_max", &[PoolMode::Min, PoolMode::Avg, PoolMode::Max]),
    ];
    variants
        .iter()
        .map(|&(name, modes)| {
            let mut cfg = base.clone();
            cfg.pool_modes = modes.to_vec();
            (name.to_string(), cfg)
        })
        .collect()
}

fn decoder_ablation(
    configs: Vec<(String, ModelConfig)>,
    train_set: &[RegistrationSample],
    val_set: &[RegistrationSample],
    test_set: &[RegistrationSample],
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentTable> {
    require_seeds(seeds)?;
    let mut rows = Vec::new();
    for (name, model_cfg) in configs {
        let net = Network::Decoder(DecoderNet::new(model_cfg)?);
        rows.push(run_configuration(
            &net,
            train_set,
            val_set,
            test_set,
            train_cfg,
            FreezeMode::None,
            seeds,
            &name,
        )?);
    }
    Ok(ExperimentTable { rows })
}

/// Train one decoder model per pyramid-level configuration and seed.
pub fn pooling_level_ablation(
    train_set: &[RegistrationSample],
    val_set: &[RegistrationSample],
    test_set: &[RegistrationSample],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentTable> {
    decoder_ablation(
        level_ablation_configs(base),
        train_set,
        val_set,
        test_set,
        train_cfg,
        seeds,
    )
}

/// Train one decoder model per pooling-operation configuration and seed.
pub fn pooling_mode_ablation(
    train_set: &[RegistrationSample],
    val_set: &[RegistrationSample],
    test_set: &[RegistrationSample],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<ExperimentTable> {
    decoder_ablation(
        mode_ablation_configs(base),
        train_set,
        val_set,
        test_set,
        train_cfg,
        seeds,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{LossConfig, Similarity};
    use crate::synth::{generate_dataset, SynthConfig};

    fn tiny_sets() -> (
        Vec<RegistrationSample>,
        Vec<RegistrationSample>,
        Vec<RegistrationSample>,
    ) {
        let cfg = SynthConfig {
            extents: vec![16, 16],
            num_structures: 4,
            sigma: 3.0,
            amplitude: 1.5,
            seed: 100,
        };
        let train_set = generate_dataset(&cfg, 2).unwrap();
        let val_set = generate_dataset(
            &SynthConfig {
                seed: 200,
                ..cfg.clone()
            },
            1,
        )
        .unwrap();
        let test_set = generate_dataset(&SynthConfig { seed: 300, ..cfg }, 2).unwrap();
        (train_set, val_set, test_set)
    }

    fn fast_train_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 1,
            loss: LossConfig {
                similarity: Similarity::Mse,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn too_few_seeds_are_rejected() {
        let (tr, va, te) = tiny_sets();
        let err = redundancy_experiment(
            &tr,
            &va,
            &te,
            &BaselineConfig::default(),
            &fast_train_cfg(),
            &[1, 2],
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn freeze_table_has_three_rows_in_order() {
        let (tr, va, te) = tiny_sets();
        let base = BaselineConfig {
            rank: 2,
            encoder_widths: vec![2, 4, 4, 4],
        };
        let table =
            redundancy_experiment(&tr, &va, &te, &base, &fast_train_cfg(), &[1, 2, 3]).unwrap();
        let names: Vec<&str> = table.rows.iter().map(|r| r.config.as_str()).collect();
        assert_eq!(names, vec!["full", "decoder_only", "encoder_only"]);
        for row in &table.rows {
            assert_eq!(row.seed_dice.len(), 3);
            assert!(row.dice_mean.is_finite() && (0.0..=1.0).contains(&row.dice_mean));
        }
    }

    #[test]
    fn level_configs_grow_monotonically() {
        let base = ModelConfig {
            channels: 4,
            ..ModelConfig::default()
        };
        let configs = level_ablation_configs(&base);
        assert_eq!(configs.len(), 4);
        assert_eq!(configs[0].1.pool_windows, vec![8]);
        assert!(!configs[0].1.include_original);
        assert_eq!(configs[3].1.pool_windows, vec![8, 4, 2]);
        assert!(configs[3].1.include_original);
        for (_, cfg) in &configs {
            assert!(DecoderNet::new(cfg.clone()).is_ok());
        }
    }

    #[test]
    fn level_ablation_runs_and_formats() {
        let (tr, va, te) = tiny_sets();
        let base = ModelConfig {
            channels: 2,
            ..ModelConfig::default()
        };
        let table =
            pooling_level_ablation(&tr, &va, &te, &base, &fast_train_cfg(), &[1, 2, 3]).unwrap();
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], EXPERIMENT_CSV_HEADER);
        assert!(lines[1].starts_with("levels_8,"));
        assert!(lines[4].starts_with("levels_8_4_2_orig,"));
    }

    #[test]
    fn mode_ablation_covers_each_operation() {
        let base = ModelConfig::default();
        let configs = mode_ablation_configs(&base);
        assert_eq!(configs.len(), 4);
        assert_eq!(configs[0].1.pool_modes, vec![PoolMode::Min]);
        assert_eq!(configs[3].1.pool_modes.len(), 3);
    }

    #[test]
    fn experiment_is_deterministic() {
        let (tr, va, te) = tiny_sets();
        let base = ModelConfig {
            channels: 2,
            ..ModelConfig::default()
        };
        let a = pooling_mode_ablation(&tr, &va, &te, &base, &fast_train_cfg(), &[5, 6, 7]).unwrap();
        let b = pooling_mode_ablation(&tr, &va, &te, &base, &fast_train_cfg(), &[5, 6, 7]).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn initial_dice_of_identity_pairs_is_one() {
        let cfg = SynthConfig {
            extents: vec![16, 16],
            num_structures: 4,
            sigma: 3.0,
            amplitude: 0.0,
            seed: 5,
        };
        let set = generate_dataset(&cfg, 2).unwrap();
        let d = initial_mean_dice(&set).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }
}

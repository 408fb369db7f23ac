// scratch calibration probe, not part of the library surface
use std::time::Instant;

use poolreg_core::baseline::BaselineConfig;
use poolreg_core::dataset::RegistrationSample;
use poolreg_core::decoder::{DecoderNet, ModelConfig};
use poolreg_core::experiments::{
    initial_mean_dice, pooling_level_ablation, redundancy_experiment,
};
use poolreg_core::loss::mse;
use poolreg_core::metrics::evaluate_pair;
use poolreg_core::network::Network;
use poolreg_core::synth::{generate_dataset, SynthConfig};
use poolreg_core::trainer::{train, TrainConfig};

fn splits(train_n: usize, val_n: usize, test_n: usize) -> (
    Vec<RegistrationSample>,
    Vec<RegistrationSample>,
    Vec<RegistrationSample>,
) {
    let base = SynthConfig::default();
    let tr = generate_dataset(&base, train_n).unwrap();
    let va = generate_dataset(
        &SynthConfig {
            seed: train_n as u64,
            ..base.clone()
        },
        val_n,
    )
    .unwrap();
    let te = generate_dataset(
        &SynthConfig {
            seed: (train_n + val_n) as u64,
            ..base
        },
        test_n,
    )
    .unwrap();
    (tr, va, te)
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "all" || which == "c4" {
        let t0 = Instant::now();
        let (tr, va, te) = splits(200, 20, 50);
        println!("[c4] generated 270 samples in {:.1}s", t0.elapsed().as_secs_f64());
        let init_dice = initial_mean_dice(&te).unwrap();
        let init_mse: f64 = te
            .iter()
            .map(|s| mse(&s.moving, &s.fixed).unwrap() as f64)
            .sum::<f64>()
            / te.len() as f64;
        let net = Network::Decoder(DecoderNet::new(ModelConfig::default()).unwrap());
        let cfg = TrainConfig {
            epochs: 20,
            seed: 0,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let out = train(&net, &tr, &va, &cfg).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        let mut dice_sum = 0.0;
        let mut mse_sum = 0.0;
        for (i, s) in te.iter().enumerate() {
            let row = evaluate_pair(&net, &out.best, s, &format!("t{i}")).unwrap();
            dice_sum += row.mean_dice;
            mse_sum += row.warped_mse;
        }
        let n = te.len() as f64;
        println!(
            "[c4] train {:.0}s best_epoch {} | init_dice {:.4} test_dice {:.4} gain {:.4} | init_mse {:.6} warped_mse {:.6} drop {:.1}%",
            train_secs,
            out.best_epoch,
            init_dice,
            dice_sum / n,
            dice_sum / n - init_dice,
            init_mse,
            mse_sum / n,
            100.0 * (1.0 - (mse_sum / n) / init_mse)
        );
        for r in &out.log.records {
            println!(
                "[c4]   epoch {:2} loss {:.6} val_dice {:.4} ({:.0}s)",
                r.epoch, r.loss, r.val_dice, r.seconds
            );
        }
    }

    if which == "all" || which == "c5" {
        let (tr, va, te) = splits(40, 10, 20);
        let init_dice = initial_mean_dice(&te).unwrap();
        let cfg = TrainConfig {
            epochs: 8,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let table = redundancy_experiment(
            &tr,
            &va,
            &te,
            &BaselineConfig::default(),
            &cfg,
            &[0, 1, 2],
        )
        .unwrap();
        println!(
            "[c5] {:.0}s lr 1e-3, 40x8 epochs, init_dice {:.4}",
            t0.elapsed().as_secs_f64(),
            init_dice
        );
        for r in &table.rows {
            println!(
                "[c5]   {:<14} dice {:.4} +- {:.4}  seeds {:?}",
                r.config,
                r.dice_mean,
                r.dice_std,
                r.seed_dice.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }

    if which == "all" || which == "c6" {
        let (tr, va, te) = splits(40, 10, 20);
        let cfg = TrainConfig {
            epochs: 8,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let table = pooling_level_ablation(
            &tr,
            &va,
            &te,
            &ModelConfig::default(),
            &cfg,
            &[0, 1, 2],
        )
        .unwrap();
        println!("[c6] {:.0}s lr 1e-3, 40x8 epochs", t0.elapsed().as_secs_f64());
        for r in &table.rows {
            println!(
                "[c6]   {:<18} dice {:.4} +- {:.4}  seeds {:?}",
                r.config,
                r.dice_mean,
                r.dice_std,
                r.seed_dice.iter().map(|d| (d * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }
}

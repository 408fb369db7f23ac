//! One function per subcommand, plus the small parsers they share.

use std::fmt;
use std::path::PathBuf;

use poolreg_core::baseline::BaselineConfig;
use poolreg_core::dataset::{
    load_manifest_samples, load_sample, read_manifest, save_sample, write_manifest,
};
use poolreg_core::decoder::{DecoderNet, ModelConfig};
use poolreg_core::deform::{
    deformation_from_displacement, exponentiate, folding_fraction_of_displacement, EXP_STEPS,
};
use poolreg_core::experiments::{
    pooling_level_ablation, pooling_mode_ablation, redundancy_experiment,
};
use poolreg_core::io::{read_tensor, write_tensor};
use poolreg_core::loss::{mse, LossConfig, Similarity};
use poolreg_core::metrics::{evaluate_pair, EvalReport};
use poolreg_core::network::Network;
use poolreg_core::synth::{generate_sample, SynthConfig};
use poolreg_core::trainer::{write_train_outputs, FreezeMode, TrainConfig};
use poolreg_core::{PoolMode, Tape, Tensor};

use crate::{AblateArgs, EvalArgs, GenDataArgs, ProfileArgs, RegisterArgs, TrainArgs};

pub enum CliError {
    /// bad flag combination or value; exit 2
    Usage(String),
    /// dataset, model or filesystem failure; exit 1
    Run(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

impl From<poolreg_core::Error> for CliError {
    fn from(e: poolreg_core::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

type CmdResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// "64x64" or "32x32x32" -> extents
fn parse_size(s: &str) -> Result<Vec<usize>, CliError> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 2 && parts.len() != 3 {
        return Err(usage(format!("--size wants HxW or HxWxD, got {s:?}")));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| usage(format!("bad extent {p:?} in --size {s:?}")))
        })
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| usage(format!("bad seed {p:?} in --seeds {s:?}")))
        })
        .collect()
}

fn parse_pool_modes(s: &str) -> Result<Vec<PoolMode>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<PoolMode>()
                .map_err(|e| usage(e.to_string()))
        })
        .collect()
}

fn parse_pool_levels(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("bad window {p:?} in --pool-levels {s:?}")))
        })
        .collect()
}

/// --lambda wins; otherwise the diffeomorphic default, otherwise the
/// similarity default.
fn resolve_loss(loss: &str, lambda: Option<f64>, diffeo: bool) -> Result<LossConfig, CliError> {
    let similarity: Similarity = loss.parse().map_err(|e: poolreg_core::Error| usage(e.to_string()))?;
    let lambda = lambda.unwrap_or(match (diffeo, similarity) {
        (true, _) => 2.0,
        (false, Similarity::Mse) => 0.01,
        (false, _) => 5.0,
    });
    Ok(LossConfig {
        similarity,
        lambda,
        ..LossConfig::default()
    })
}

fn sample_dir_name(i: usize) -> String {
    format!("sample_{i:04}")
}

pub fn gen_data(args: GenDataArgs) -> CmdResult {
    let mut cfg = SynthConfig {
        extents: parse_size(&args.size)?,
        seed: args.seed,
        ..SynthConfig::default()
    };
    if let Some(s) = args.sigma {
        cfg.sigma = s;
    }
    if let Some(a) = args.amplitude {
        cfg.amplitude = a;
    }
    if let Some(n) = args.structures {
        cfg.num_structures = n;
    }

    // (manifest file, sample count) in generation order
    let plan: Vec<(&str, usize)> = match (&args.count, &args.split) {
        (Some(n), None) => vec![("manifest.txt", *n)],
        (None, Some(spec)) => {
            let parts: Vec<&str> = spec.split(',').collect();
            if parts.len() != 3 {
                return Err(usage(format!("--split wants TR,VA,TE, got {spec:?}")));
            }
            let counts: Vec<usize> = parts
                .iter()
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| usage(format!("bad count {p:?} in --split {spec:?}")))
                })
                .collect::<Result<_, _>>()?;
            vec![
                ("train.txt", counts[0]),
                ("val.txt", counts[1]),
                ("test.txt", counts[2]),
            ]
        }
        _ => return Err(usage("exactly one of --count or --split is required")),
    };

    std::fs::create_dir_all(&args.out)?;
    let mut index = 0usize;
    for (manifest, count) in plan {
        let mut dirs: Vec<PathBuf> = Vec::with_capacity(count);
        for _ in 0..count {
            let sample = generate_sample(&cfg, cfg.seed.wrapping_add(index as u64))?;
            let name = sample_dir_name(index);
            save_sample(args.out.join(&name), &sample)?;
            dirs.push(PathBuf::from(name));
            index += 1;
        }
        write_manifest(args.out.join(manifest), &dirs)?;
    }
    println!("{} samples -> {}", index, args.out.display());
    Ok(())
}

pub fn train_cmd_config(args: &TrainArgs) -> Result<(ModelConfig, TrainConfig), CliError> {
    let model = ModelConfig {
        rank: args.dim,
        channels: args.channels,
        convs_per_block: args.convs_per_block,
        diffeomorphic: args.diffeo,
        displacement_scale: None,
        pool_modes: parse_pool_modes(&args.pool_modes)?,
        pool_windows: parse_pool_levels(&args.pool_levels)?,
        include_original: args.use_original,
    };
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        freeze: FreezeMode::None,
        loss: resolve_loss(&args.loss, args.lambda, args.diffeo)?,
        diffeomorphic: args.diffeo,
        ..TrainConfig::default()
    };
    Ok((model, cfg))
}

pub fn train(args: TrainArgs) -> CmdResult {
    let (model_cfg, train_cfg) = train_cmd_config(&args)?;
    let train_set = load_manifest_samples(args.data.join("train.txt"))?;
    let val_set = load_manifest_samples(args.data.join("val.txt"))?;
    let net = Network::Decoder(DecoderNet::new(model_cfg)?);
    let outcome = poolreg_core::trainer::train(&net, &train_set, &val_set, &train_cfg)?;
    write_train_outputs(&args.out, &net, &outcome)?;
    match outcome.best_val_dice {
        Some(d) => println!("best epoch {} val_dice {:.6}", outcome.best_epoch, d),
        None => println!("no epochs run; wrote the initial parameters"),
    }
    Ok(())
}

pub fn register(args: RegisterArgs) -> CmdResult {
    let (net, params) = Network::load_from_checkpoint(&args.model)?;
    let moving = read_tensor(&args.moving)?;
    let fixed = read_tensor(&args.fixed)?;
    for (what, t) in [("--moving", &moving), ("--fixed", &fixed)] {
        if t.channels() != 1 {
            return Err(usage(format!(
                "{what} must be single-channel, got {} channels",
                t.channels()
            )));
        }
    }
    if moving.shape() != fixed.shape() {
        return Err(usage(format!(
            "moving shape {:?} does not match fixed shape {:?}",
            moving.shape(),
            fixed.shape()
        )));
    }

    let spatial = moving.spatial().to_vec();
    let mut shape = vec![2usize];
    shape.extend_from_slice(&spatial);
    let mut pair = Tensor::<f32>::zeros(&shape);
    pair.channel_mut(0).copy_from_slice(moving.channel(0));
    pair.channel_mut(1).copy_from_slice(fixed.channel(0));

    let mut tape = Tape::<f32>::new();
    let (field_node, _) = net.forward(&mut tape, &params, &pair)?;
    let field = tape.value(field_node).clone();
    let disp = if net.diffeomorphic() || args.diffeo {
        exponentiate(&field, EXP_STEPS)?
    } else {
        field
    };

    let warped = poolreg_core::deform::warp_image(&moving, &disp)?;
    std::fs::create_dir_all(&args.out)?;
    write_tensor(args.out.join("warped.ltf"), &warped)?;
    write_tensor(args.out.join("displacement.ltf"), &disp)?;
    write_tensor(args.out.join("deformation.ltf"), &deformation_from_displacement(&disp))?;
    println!("mse {:.6}", mse(&warped, &fixed)? as f64);
    println!("fold_pct {:.6}", folding_fraction_of_displacement(&disp)? * 100.0);
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let (net, params) = Network::load_from_checkpoint(&args.model)?;
    let manifest = args.data.join(format!("{}.txt", args.split));
    let dirs = read_manifest(&manifest)?;
    let mut report = EvalReport::default();
    for dir in dirs {
        let sample = load_sample(&dir)?;
        let pair_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        report.rows.push(evaluate_pair(&net, &params, &sample, &pair_id)?);
    }
    let csv = report.to_csv()?;
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn ablate(args: AblateArgs) -> CmdResult {
    let seeds = parse_seeds(&args.seeds)?;
    let train_set = load_manifest_samples(args.data.join("train.txt"))?;
    let val_set = load_manifest_samples(args.data.join("val.txt"))?;
    let test_set = load_manifest_samples(args.data.join("test.txt"))?;
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        loss: resolve_loss(&args.loss, args.lambda, false)?,
        ..TrainConfig::default()
    };
    std::fs::create_dir_all(&args.out)?;
    let write = |name: &str, csv: String| -> CmdResult {
        let path = args.out.join(name);
        std::fs::write(&path, csv)?;
        println!("wrote {}", path.display());
        Ok(())
    };
    match args.mode.as_str() {
        "freeze" => {
            let table = redundancy_experiment(
                &train_set,
                &val_set,
                &test_set,
                &BaselineConfig::default(),
                &train_cfg,
                &seeds,
            )?;
            write("freeze.csv", table.to_csv())
        }
        "pooling" => {
            let base = ModelConfig {
                channels: args.channels,
                ..ModelConfig::default()
            };
            let levels =
                pooling_level_ablation(&train_set, &val_set, &test_set, &base, &train_cfg, &seeds)?;
            write("pooling_levels.csv", levels.to_csv())?;
            let modes =
                pooling_mode_ablation(&train_set, &val_set, &test_set, &base, &train_cfg, &seeds)?;
            write("pooling_modes.csv", modes.to_csv())
        }
        other => Err(usage(format!(
            "unknown ablation mode {other:?}, expected freeze | pooling"
        ))),
    }
}

pub fn profile(args: ProfileArgs) -> CmdResult {
    let cfg = ModelConfig {
        rank: args.dim,
        channels: args.channels,
        convs_per_block: args.convs_per_block,
        ..ModelConfig::default()
    };
    let net = DecoderNet::new(cfg)?;
    let spatial = parse_size(&args.size)?;
    let mult_adds = net.count_mult_adds(&spatial)?;
    println!("layer,c_in,c_out,params,mult_adds");
    for layer in net.layer_table() {
        println!(
            "{},{},{},{},{}",
            layer.name,
            layer.c_in,
            layer.c_out,
            layer.parameter_count(args.dim),
            layer.mult_adds(args.dim, &spatial)
        );
    }
    println!("params={}", net.count_parameters());
    println!("mult_adds={mult_adds}");
    Ok(())
}

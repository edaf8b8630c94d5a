use std::fs;
use std::path::{Path, PathBuf};

use msnas_core::cost::{compare_variants, cost_report, variants_csv};
use msnas_core::decode::{
    arch_dot, beta_values, decode, edge_weights_from_beta, top_k_longest_paths, ArchFile, DecodedArch, Provenance,
    ScoredPath,
};
use msnas_core::search::{loss_csv, run_search, Checkpoint};
use msnas_core::supernet::{build_supernet, to_dot, CountReport};
use msnas_core::tasks::{
    fit, gen_synthetic, load_dataset, save_dataset, train_decoded, SegDataset, SynthConfig, TrainedNet,
};

use crate::config::{resolve_output, RunConfig};
use crate::manifest::{sha256_hex, RunManifest};
use crate::{
    CliError, Command, CostArgs, CountArgs, DecodeArgs, EvalArgs, ExportDotArgs, SearchArgs, SynthArgs, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.msnas";
pub const LOSS_FILE: &str = "loss.csv";
pub const ARCH_FILE: &str = "arch.toml";
pub const ARCH_DOT_FILE: &str = "arch.dot";
pub const SUPERNET_DOT_FILE: &str = "supernet.dot";
pub const COST_FILE: &str = "cost.csv";
pub const VARIANTS_FILE: &str = "variants.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const WEIGHTS_FILE: &str = "weights.msnas";
pub const EVAL_FILE: &str = "eval.csv";

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Count(a) => cmd_count(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Search(a) => cmd_search(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Cost(a) => cmd_cost(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportDot(a) => cmd_export_dot(&a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(msnas_core::Error::io(dir, e)))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(msnas_core::Error::io(path, e)))
}

fn load_data(dir: &Path) -> Result<SegDataset, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(load_dataset(dir)?)
}

pub fn cmd_count(a: &CountArgs) -> Result<(), CliError> {
    let report = CountReport::compute(a.layers, a.scales, a.blocks, a.ops).map_err(|e| CliError::Config(e.to_string()))?;
    print!("{}", report.render());
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        seed: a.seed,
        count: a.count,
        size: a.size,
        num_classes: a.classes,
        noise: a.noise,
    };
    let ds = gen_synthetic(&cfg).map_err(|e| match e {
        msnas_core::Error::InvalidArgument(m) => CliError::Config(m),
        other => other.into(),
    })?;
    save_dataset(&ds, &a.out, Some(&cfg))?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_dataset_matches(cfg: &RunConfig, ds: &SegDataset) -> Result<(), CliError> {
    let s = &cfg.search;
    if ds.size != s.image_size || ds.channels != s.in_channels || ds.num_classes != s.num_classes {
        return Err(CliError::Config(format!(
            "dataset is {0}x{0} with {1} channels and {2} classes; [search] expects image_size {3}, in_channels {4}, num_classes {5}",
            ds.size, ds.channels, ds.num_classes, s.image_size, s.in_channels, s.num_classes
        )));
    }
    Ok(())
}

pub fn cmd_search(a: &SearchArgs) -> Result<(), CliError> {
    let mut cfg = load_run_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.search.seed = seed;
    }
    let data_dir = cfg.dataset_dir(a.dataset.as_deref())?;
    let out = cfg.output_dir(a.output.as_deref());
    let ds = load_data(&data_dir)?;
    check_dataset_matches(&cfg, &ds)?;
    create_dir(&out)?;

    let outcome = run_search(&cfg.search, &ds, |e| {
        eprintln!(
            "epoch {:>3} phase {} lr {:.5} weight loss {:.5} arch loss {:.5}",
            e.epoch, e.phase, e.lr, e.weight_loss, e.arch_loss
        )
    })?;
    let mut manifest = RunManifest::new("search", cfg.search.seed, &cfg.to_toml()).with_dataset(&data_dir)?;
    manifest.write_output(&out, CHECKPOINT_FILE, &outcome.checkpoint.to_bytes())?;
    manifest.write_output(&out, LOSS_FILE, loss_csv(&outcome.history).as_bytes())?;
    manifest.save(&out)?;
    if let Some(why) = &outcome.diverged {
        eprintln!("warning: search diverged ({why}); the checkpoint holds the last finite state");
    }
    println!("checkpoint {} ({})", out.join(CHECKPOINT_FILE).display(), outcome.checkpoint.digest());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    require_file(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

/// Decodes a checkpoint; prints a warning when fewer paths exist than requested.
pub fn decode_checkpoint(ck: &Checkpoint, n_paths: usize) -> Result<(ArchFile, DecodedArch), CliError> {
    if n_paths == 0 {
        return Err(CliError::Config("--paths must be at least 1".into()));
    }
    let m = &ck.model;
    let (arch, top) = decode(&m.layout, &m.store, n_paths)?;
    if top.truncated {
        eprintln!(
            "warning: only {} paths exist, fewer than the {n_paths} requested; keeping all of them",
            top.paths.len()
        );
    }
    let file = ArchFile::from_arch(
        &arch,
        n_paths,
        top.truncated,
        Provenance {
            checkpoint_digest: ck.digest(),
            seed: ck.config.seed,
        },
    );
    Ok((file, arch))
}

pub fn cmd_decode(a: &DecodeArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let n = a.paths.unwrap_or(ck.config.paths);
    let (file, arch) = decode_checkpoint(&ck, n)?;
    let out = resolve_output(a.output.as_deref(), None);
    create_dir(&out)?;
    let m = &ck.model;
    let weighted = edge_weights_from_beta(&m.layout.graph, &beta_values(&m.layout, &m.store))?;
    write(&out.join(ARCH_FILE), file.to_toml()?.as_bytes())?;
    write(&out.join(ARCH_DOT_FILE), arch_dot(&arch, Some(&weighted)).as_bytes())?;
    println!(
        "decoded {} paths, {} cells -> {}",
        arch.paths.len(),
        arch.cell_instances.len(),
        out.join(ARCH_FILE).display()
    );
    Ok(())
}

fn load_arch(path: &Path) -> Result<DecodedArch, CliError> {
    require_file(path, "architecture file")?;
    Ok(ArchFile::load(path)?.to_arch()?)
}

pub fn cmd_cost(a: &CostArgs) -> Result<(), CliError> {
    let out = resolve_output(a.output.as_deref(), None);
    match (&a.arch, &a.checkpoint) {
        (Some(arch_path), None) => {
            let arch = load_arch(arch_path)?;
            let size = a
                .input_size
                .ok_or_else(|| CliError::Config("--input-size is required with --arch".into()))?;
            let report = cost_report(&arch, size).map_err(|e| CliError::Config(e.to_string()))?;
            create_dir(&out)?;
            write(&out.join(COST_FILE), report.to_csv().as_bytes())?;
            print!("{}", report.to_table());
        }
        (None, Some(ck_path)) => {
            let ck = load_checkpoint(ck_path)?;
            let size = a.input_size.unwrap_or(ck.config.image_size);
            if a.variants.contains(&0) {
                return Err(CliError::Config("--variants entries must be at least 1".into()));
            }
            let variants = compare_variants(&ck.model.layout, &ck.model.store, &a.variants, size)?;
            create_dir(&out)?;
            let csv = variants_csv(&variants);
            write(&out.join(VARIANTS_FILE), csv.as_bytes())?;
            print!("{csv}");
        }
        _ => return Err(CliError::Config("give either --arch or --checkpoint with --variants".into())),
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(f) = a.folds {
        cfg.train.folds = f;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let arch = load_arch(&a.arch)?;
    let data_dir = cfg.dataset_dir(a.dataset.as_deref())?;
    let ds = load_data(&data_dir)?;
    if ds.num_classes != arch.config.num_classes || ds.channels != arch.config.in_channels {
        return Err(CliError::Config(format!(
            "dataset has {} classes and {} channels; the architecture expects {} and {}",
            ds.num_classes, ds.channels, arch.config.num_classes, arch.config.in_channels
        )));
    }
    if ds.len() < 2 * cfg.train.folds {
        return Err(CliError::Config(format!(
            "[train] folds: {} samples are too few for {} folds",
            ds.len(),
            cfg.train.folds
        )));
    }
    let out = cfg.output_dir(a.output.as_deref());
    create_dir(&out)?;
    let report = train_decoded(&arch, &ds, &cfg.train)?;
    let mut manifest = RunManifest::new("train", cfg.train.seed, &cfg.to_toml()).with_dataset(&data_dir)?;
    manifest.write_output(&out, METRICS_FILE, report.to_csv(ds.num_classes).as_bytes())?;
    for f in &report.folds {
        match &f.outcome {
            Ok(m) => println!("fold {}: mean DSC {:.4}, mIoU {:.4}", f.fold, m.mean_dice, m.mean_iou),
            Err(e) => eprintln!("fold {} failed: {e}", f.fold),
        }
    }
    let (d, ds_std) = report.dice();
    let (i, i_std) = report.iou();
    println!("DSC {d:.4} ± {ds_std:.4}, mIoU {i:.4} ± {i_std:.4}");
    if !a.no_weights {
        let net = fit(&arch, &ds, &cfg.train, cfg.train.folds as u64)?;
        manifest.write_output(&out, WEIGHTS_FILE, &net.to_bytes())?;
    }
    manifest.save(&out)?;
    if report.failed_folds() == report.folds.len() {
        return Err(CliError::Runtime(msnas_core::Error::NonFinite("every fold diverged".into())));
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let arch = load_arch(&a.arch)?;
    require_file(&a.weights, "weights file")?;
    let ds = load_data(&a.dataset)?;
    let net = TrainedNet::load(&arch, &a.weights)?;
    let metrics = net.evaluate(&ds, 8)?;
    let out = resolve_output(a.output.as_deref(), None);
    create_dir(&out)?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
    let mut csv = String::from("# msnas-eval v1\nclass,iou,dice\n");
    for c in 0..ds.num_classes {
        csv.push_str(&format!(
            "{c},{},{}\n",
            fmt(metrics.per_class_iou[c]),
            fmt(metrics.per_class_dice[c])
        ));
    }
    csv.push_str(&format!("mean,{},{}\n", metrics.mean_iou, metrics.mean_dice));
    write(&out.join(EVAL_FILE), csv.as_bytes())?;
    println!(
        "{} samples: mean DSC {:.4}, mIoU {:.4}",
        metrics.samples, metrics.mean_dice, metrics.mean_iou
    );
    Ok(())
}

pub fn cmd_export_dot(a: &ExportDotArgs) -> Result<(), CliError> {
    let out = resolve_output(a.output.as_deref(), None);
    let (name, dot) = if let Some(ck_path) = &a.checkpoint {
        let ck = load_checkpoint(ck_path)?;
        let m = &ck.model;
        let weighted = edge_weights_from_beta(&m.layout.graph, &beta_values(&m.layout, &m.store))?;
        let top = top_k_longest_paths(&weighted, a.paths.unwrap_or(ck.config.paths).max(1))?;
        let paths: Vec<_> = top.paths.iter().map(ScoredPath::path).collect();
        (SUPERNET_DOT_FILE, to_dot(&m.layout.graph, Some(&weighted.weights), &paths))
    } else if let Some(arch_path) = &a.arch {
        (ARCH_DOT_FILE, arch_dot(&load_arch(arch_path)?, None))
    } else if let (Some(l), Some(s)) = (a.layers, a.scales) {
        let g = build_supernet(l, s).map_err(|e| CliError::Config(e.to_string()))?;
        (SUPERNET_DOT_FILE, to_dot(&g, None, &[]))
    } else {
        return Err(CliError::Config("give --checkpoint, --arch, or --layers with --scales".into()));
    };
    create_dir(&out)?;
    let path: PathBuf = out.join(name);
    write(&path, dot.as_bytes())?;
    println!("wrote {} ({})", path.display(), sha256_hex(dot.as_bytes()));
    Ok(())
}

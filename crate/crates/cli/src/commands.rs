use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mwe_core::data::{
    self, load_dataset, prepare_splits, synthetic_items, to_samples, ChannelStats, ImageItem, PreparedData,
    SyntheticSpec,
};
use mwe_core::evalx::{complexity, score, MetricsReport};
use mwe_core::fusion::{
    load_checkpoint_with_meta, prepare_samples, save_checkpoint_with_meta, train, FusionModel,
};
use mwe_core::location::{encode_location, BodyMap};
use mwe_core::swarm::{sphere, tune, Bounds, Search, TuneConfig};
use mwe_core::wavelet::{dwt2, WaveletFamily, WaveletSpec};
use mwe_core::{Error, Execution};
use serde::{Deserialize, Serialize};

use crate::config::{resolve_seed, ExperimentConfig, Objective, SEED_ENV};
use crate::{Cli, CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

/// Extra state stored in a checkpoint header.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    body_map: BodyMap,
    stats: ChannelStats,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Train { config, seed, out } => cmd_train(&experiment(&config, seed, out)?, exec),
        Command::Tune {
            config,
            algorithm,
            seed,
            out,
        } => {
            let mut cfg = experiment(&config, seed, out)?;
            if let (Some(a), Some(o)) = (algorithm, cfg.optimizer.as_mut()) {
                o.algorithm = a;
            }
            cmd_tune(&cfg, exec)
        }
        Command::Eval {
            checkpoint,
            manifest,
            root,
            map,
            out,
        } => cmd_eval(&checkpoint, &manifest, root.as_deref(), map, &out, exec),
        Command::Complexity { config, batch, out } => {
            let cfg = experiment(&config, None, out)?;
            cmd_complexity(&cfg, batch.unwrap_or(cfg.train.batch_size))
        }
        Command::EncodeLocation { id, map } => {
            println!("{}", encode_location(id, map)?.bit_string());
            Ok(())
        }
        Command::DwtDump {
            image,
            size,
            family,
            levels,
            out,
        } => cmd_dwt_dump(&image, size, family, levels, out.as_deref()),
    }
}

fn experiment(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(seed, env.as_deref(), cfg.seed)?;
    cfg.set_seed(seed);
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes `<stem>.json` and `<stem>.txt`.
fn write_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<()> {
    write_text(&dir.join(format!("{stem}.json")), &report.to_json()?)?;
    write_text(&dir.join(format!("{stem}.txt")), &report.to_table())?;
    Ok(())
}

fn write_plot(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut s = String::from("metric,class,value\n");
    for (metric, class, value) in report.plot_rows() {
        s.push_str(&format!("{metric},{class},{value}\n"));
    }
    write_text(path, &s)
}

fn load_items(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<ImageItem>> {
    let d = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a [data] section".into()))?;
    let size = cfg.model.vit.patch.image_size;
    if let Some(s) = d.synthetic {
        return Ok(synthetic_items(&SyntheticSpec {
            scheme: cfg.scheme.clone(),
            per_class: s.per_class,
            image_size: size,
            noise: s.noise,
            seed: cfg.seed,
        })?);
    }
    let manifest = d.manifest.as_ref().expect("validated: manifest or synthetic");
    let root = d.root.clone().unwrap_or_else(|| parent_of(manifest));
    let records = load_dataset(&root, manifest, d.body_map)?;
    let kept: Vec<_> = data::filter_scheme(&records, &cfg.scheme)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    Ok(data::load_items(&root, &kept, size, exec)?)
}

fn parent_of(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn prepared(cfg: &ExperimentConfig, exec: Execution) -> Result<PreparedData> {
    let items = load_items(cfg, exec)?;
    Ok(prepare_splits(
        &items,
        &cfg.scheme,
        cfg.mode,
        &cfg.split,
        &cfg.augmentation,
        cfg.seed,
        exec,
    )?)
}

fn body_map(cfg: &ExperimentConfig) -> BodyMap {
    cfg.data.as_ref().map_or(BodyMap::Original484, |d| d.body_map)
}

/// Writes `model.ckpt`, `history.csv`, `metrics_val.*`, `metrics_test.*`,
/// `metrics_plot.csv` (test split, else validation) and the resolved
/// `config.toml`.
pub fn cmd_train(cfg: &ExperimentConfig, exec: Execution) -> Result<()> {
    let data = prepared(cfg, exec)?;
    let dir = out_dir(&cfg.out)?;
    let mut model = FusionModel::new(cfg.model_config(), cfg.scheme.clone(), cfg.seed)?;
    let train_ex = prepare_samples(&model, &data.train, exec)?;
    log::info!(
        "training {} on {} samples for {} epochs",
        cfg.mode,
        train_ex.len(),
        cfg.train.epochs
    );
    let history = train(&mut model, &train_ex, &cfg.train, exec)?;
    history.write_csv(fs::File::create(dir.join("history.csv"))?)?;

    let meta = serde_json::to_value(CheckpointMeta {
        body_map: body_map(cfg),
        stats: data.stats.clone(),
    })
    .map_err(Error::from)?;
    save_checkpoint_with_meta(&model, &meta, &dir.join("model.ckpt"))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;

    if let Some(last) = history.last() {
        println!("train  loss {:.6}  accuracy {:.4}", last.loss, last.accuracy);
    }
    let mut plotted = false;
    for (stem, split) in [("metrics_test", &data.test), ("metrics_val", &data.val)] {
        if split.is_empty() {
            log::warn!("{stem}: split is empty, no report written");
            continue;
        }
        let report = score(&model, &prepare_samples(&model, split, exec)?, exec)?;
        write_report(dir, stem, &report)?;
        if !plotted {
            write_plot(&dir.join("metrics_plot.csv"), &report)?;
            plotted = true;
        }
        println!(
            "{:<6} accuracy {:.4}  macro-F1 {:.4}",
            &stem[8..],
            report.accuracy,
            report.macro_f1
        );
    }
    Ok(())
}

/// Writes `trace.csv` plus, for the validation objective, `best_config.toml`,
/// `hyperparams.json` and `metrics_val.*`; for the sphere objective,
/// `best.json`.
pub fn cmd_tune(cfg: &ExperimentConfig, exec: Execution) -> Result<()> {
    let optimizer = cfg
        .optimizer
        .ok_or_else(|| CliError::Config("tune needs an [optimizer] section".into()))?;
    match cfg.tune.objective {
        Objective::Sphere => {
            let dir = out_dir(&cfg.out)?;
            let mut search = Search::new(Bounds::uniform(cfg.tune.sphere_dim, -5.0, 5.0)?, optimizer, cfg.seed);
            search.exec = exec;
            let result = search.run(|x| Ok(sphere(x)))?;
            result.write_trace_csv(fs::File::create(dir.join("trace.csv"))?)?;
            let best = serde_json::json!({
                "position": result.best.position,
                "fitness": result.best.fitness,
                "evaluations": result.evaluations,
            });
            write_text(
                &dir.join("best.json"),
                &serde_json::to_string_pretty(&best).map_err(Error::from)?,
            )?;
            println!("{} sphere best {:e}", optimizer.algorithm, result.best.fitness);
        }
        Objective::Validation => {
            let data = prepared(cfg, exec)?;
            let dir = out_dir(&cfg.out)?;
            let ranges = cfg.tune.ranges.as_ref().map(|r| <[(f64, f64); mwe_core::swarm::DIM]>::try_from(r.as_slice()).expect("validated length"));
            let tc = TuneConfig {
                model: cfg.model_config(),
                train: cfg.train,
                scheme: cfg.scheme.clone(),
                optimizer,
                ranges,
                seed: cfg.seed,
                exec,
            };
            let result = tune(&tc, &data.train, &data.val)?;
            result.search.write_trace_csv(fs::File::create(dir.join("trace.csv"))?)?;
            let mut best = cfg.clone();
            best.model.vit = result.model.vit;
            best.model.loc = result.model.loc;
            best.train = result.train;
            write_text(&dir.join("best_config.toml"), &best.to_toml()?)?;
            write_text(
                &dir.join("hyperparams.json"),
                &serde_json::to_string_pretty(&result.hyperparams).map_err(Error::from)?,
            )?;
            write_report(dir, "metrics_val", &result.report)?;
            println!(
                "{} best macro-F1 {:.4} (base {:.4}) after {} evaluations",
                optimizer.algorithm, result.report.macro_f1, result.baseline_f1, result.search.evaluations
            );
        }
    }
    Ok(())
}

/// Scores every manifest record. Writes `metrics.json`, `metrics.txt` and
/// `metrics_plot.csv`.
pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    root: Option<&Path>,
    map: Option<BodyMap>,
    out: &Path,
    exec: Execution,
) -> Result<()> {
    let (model, meta) = load_checkpoint_with_meta(checkpoint)?;
    let meta: Option<CheckpointMeta> = serde_json::from_value(meta).ok();
    let map = map.or(meta.as_ref().map(|m| m.body_map)).unwrap_or(BodyMap::Original484);
    let root = root.map(Path::to_path_buf).unwrap_or_else(|| parent_of(manifest));
    let records = load_dataset(&root, manifest, map)?;

    let mut foreign: Vec<String> = records
        .iter()
        .filter(|r| model.scheme.index_of(r.label).is_none())
        .map(|r| r.label.to_string())
        .collect();
    foreign.sort();
    foreign.dedup();
    if !foreign.is_empty() {
        return Err(Error::Domain(format!(
            "scheme mismatch: manifest has classes {} outside the checkpoint scheme {}",
            foreign.join(","),
            model.scheme
        ))
        .into());
    }

    let mut items = data::load_items(&root, &records, model.config.vit.patch.image_size, exec)?;
    if let Some(m) = &meta {
        for it in &mut items {
            it.image = m.stats.apply(&it.image)?;
        }
    }
    let samples = to_samples(&items, &model.scheme, model.mode())?;
    let examples = prepare_samples(&model, &samples, exec)?;
    if examples.is_empty() {
        return Err(Error::Domain("no manifest record is usable by this model".into()).into());
    }
    let report = score(&model, &examples, exec)?;
    let dir = out_dir(out)?;
    write_report(dir, "metrics", &report)?;
    write_plot(&dir.join("metrics_plot.csv"), &report)?;
    print!("{}", report.to_table());
    Ok(())
}

/// Prints the three indicators and writes them to `complexity.json`.
pub fn cmd_complexity(cfg: &ExperimentConfig, batch: usize) -> Result<()> {
    let model = FusionModel::new(cfg.model_config(), cfg.scheme.clone(), cfg.seed)?;
    let r = complexity(&model, batch)?;
    let dir = out_dir(&cfg.out)?;
    write_text(
        &dir.join("complexity.json"),
        &serde_json::to_string_pretty(&r).map_err(Error::from)?,
    )?;
    println!("parameters (10^6)   {}", r.parameters_millions);
    println!("GFlops              {}", r.gflops_per_forward);
    println!("memory (GB, est.)   {}", r.peak_memory_gb_estimate);
    Ok(())
}

fn plane_names(levels: usize) -> Vec<String> {
    let mut names = vec![format!("ll{levels}")];
    for l in (1..=levels).rev() {
        names.extend(["lh", "hl", "hh"].map(|b| format!("{b}{l}")));
    }
    names
}

/// Prints each plane's energy; with `out`, also writes
/// `subbands.csv` as `plane,row,col,channel,value`.
pub fn cmd_dwt_dump(image: &Path, size: usize, family: WaveletFamily, levels: usize, out: Option<&Path>) -> Result<()> {
    let spec = WaveletSpec::new(family, levels);
    spec.check_dims(size, size)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let img = data::preprocess(image, size)?;
    let bands = dwt2(&img, &spec)?;
    let names = plane_names(levels);
    for (name, plane) in names.iter().zip(bands.planes()) {
        let e: f64 = plane.data().iter().map(|v| v * v).sum();
        println!("{name:<5} {:>3}x{:<3} energy {e}", plane.shape()[0], plane.shape()[1]);
    }
    println!("total       energy {}", bands.energy());
    if let Some(dir) = out {
        let dir = out_dir(dir)?;
        let mut s = String::from("plane,row,col,channel,value\n");
        for (name, plane) in names.iter().zip(bands.planes()) {
            let (w, c) = (plane.shape()[1], plane.shape()[2]);
            for (i, v) in plane.data().iter().enumerate() {
                s.push_str(&format!("{name},{},{},{},{v}\n", i / (w * c), (i / c) % w, i % c));
            }
        }
        write_text(&dir.join("subbands.csv"), &s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_names_follow_plane_order() {
        assert_eq!(plane_names(1), ["ll1", "lh1", "hl1", "hh1"]);
        assert_eq!(plane_names(2)[1..4], ["lh2", "hl2", "hh2"]);
    }
}

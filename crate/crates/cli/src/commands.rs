//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rednet::data::{synth_dataset, DatasetManifest, EdgeMap, RasterImage};
use rednet::evaluation::{evaluate, evaluate_maps, BenchmarkScores};
use rednet::model::{checkpoint_precision, load_checkpoint, predict, ModelParameters};
use rednet::training::{train_to_dir, Precision, TrainConfig, TrainSample};
use rednet::{Error, Real, Result};

use crate::{EvalArgs, GenDataArgs, InferArgs, PlotDataArgs, TrainArgs};

pub struct Global {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
}

pub fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::Config("`--threads` must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Echoes the effective settings of a command to `config.resolved`.
fn write_resolved(out: &Path, command: &str, body: &str) -> Result<()> {
    write_file(&out.join("config.resolved"), &format!("command={command}\n{body}"))
}

pub fn gen_data(g: &Global, a: &GenDataArgs) -> Result<()> {
    create_out(&g.out)?;
    let manifest = synth_dataset(a.n, a.size, g.seed, &g.out)?;
    write_resolved(&g.out, "gen-data", &format!("n={}\nsize={}\nseed={}\n", a.n, a.size, g.seed))?;
    println!("wrote {} image pairs and {}", manifest.entries.len(), g.out.join("manifest.txt").display());
    Ok(())
}

fn resolve_train_config(g: &Global, a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::preset(&a.preset)?;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config.apply_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {kv}`: expected key=value")))?;
        config.set(k.trim(), v)?;
    }
    if let Some(lr) = a.lr {
        config.adam.lr = lr;
    }
    config.seed = g.seed;
    config.validate()?;
    Ok(config)
}

pub fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let config = resolve_train_config(g, a)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let samples = manifest
        .entries
        .iter()
        .map(|e| {
            let (image, gt) = e.load()?;
            Ok(TrainSample { id: e.stem(), image, gt })
        })
        .collect::<Result<Vec<_>>>()?;
    create_out(&g.out)?;
    write_resolved(&g.out, "train", &config.to_text())?;
    let resume = a.resume.as_deref();
    let total = match config.precision {
        Precision::F32 => train_to_dir::<f32>(&config, &samples, &g.out, resume)?.records.last().map(|r| r.total),
        Precision::F64 => train_to_dir::<f64>(&config, &samples, &g.out, resume)?.records.last().map(|r| r.total),
    };
    match total {
        Some(t) => println!("trained; final loss {t}; outputs in {}", g.out.display()),
        None => println!("nothing to do: the checkpoint already covers all epochs"),
    }
    Ok(())
}

fn image_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn infer_with<T: Real>(g: &Global, a: &InferArgs) -> Result<()> {
    let params: ModelParameters<T> = load_checkpoint::<T>(&a.checkpoint)?.params;
    let depth = a.depth.unwrap_or(params.config.recursion_depth);
    create_out(&g.out)?;
    write_resolved(
        &g.out,
        "infer",
        &format!("checkpoint={}\ndepth={depth}\nraw={}\n", a.checkpoint.display(), a.raw),
    )?;
    for path in &a.images {
        let image = RasterImage::read(path)?;
        let maps = predict(&params, &image.to_tensor::<T>(), depth)?;
        let stem = image_stem(path);
        let last = maps.len() - 1;
        for (l, m) in maps.iter().enumerate() {
            let map = EdgeMap::from_tensor(m)?;
            let mut names = vec![format!("{stem}_f{l}")];
            if l == last {
                names.push(format!("{stem}_final"));
            }
            for name in names {
                map.write_png(&g.out.join(format!("{name}.png")))?;
                if a.raw {
                    map.write_raw(&g.out.join(format!("{name}.edge")))?;
                }
            }
        }
        log::info!("{}: wrote {} edge maps", path.display(), maps.len());
    }
    Ok(())
}

pub fn infer(g: &Global, a: &InferArgs) -> Result<()> {
    match checkpoint_precision(&a.checkpoint)? {
        8 => infer_with::<f64>(g, a),
        _ => infer_with::<f32>(g, a),
    }
}

fn find_prediction(dir: &Path, stem: &str) -> Result<PathBuf> {
    let candidates: Vec<PathBuf> = ["", "_final"]
        .iter()
        .flat_map(|suffix| ["png", "edge"].map(|ext| dir.join(format!("{stem}{suffix}.{ext}"))))
        .collect();
    candidates.iter().find(|p| p.is_file()).cloned().ok_or_else(|| {
        Error::invalid(
            "eval",
            format!("no prediction for `{stem}`; looked for {}", candidates.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")),
        )
    })
}

fn eval_checkpoint<T: Real>(path: &Path, manifest: &DatasetManifest, depth: Option<usize>, max_dist: f64) -> Result<(usize, BenchmarkScores)> {
    let params = load_checkpoint::<T>(path)?.params;
    let depth = depth.unwrap_or(params.config.recursion_depth);
    Ok((depth, evaluate(manifest, &params, depth, max_dist)?))
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let max_dist = a.max_dist.unwrap_or(manifest.max_dist);
    if !(max_dist > 0.0) {
        return Err(Error::Config(format!("`--max-dist` must be positive, got {max_dist}")));
    }
    let mut resolved = format!("manifest={}\nmax_dist={max_dist}\n", a.manifest.display());
    let scores = match (&a.checkpoint, &a.pred_dir) {
        (Some(ck), _) => {
            let (depth, scores) = match checkpoint_precision(ck)? {
                8 => eval_checkpoint::<f64>(ck, &manifest, a.depth, max_dist)?,
                _ => eval_checkpoint::<f32>(ck, &manifest, a.depth, max_dist)?,
            };
            let _ = write!(resolved, "checkpoint={}\ndepth={depth}\n", ck.display());
            scores
        }
        (None, Some(dir)) => {
            let items = manifest
                .entries
                .iter()
                .map(|e| {
                    let stem = e.stem();
                    let gt = rednet::data::EdgeGroundTruth::read(&e.gt)?;
                    let pred = EdgeMap::read(&find_prediction(dir, &stem)?)?;
                    Ok((stem, pred, gt))
                })
                .collect::<Result<Vec<_>>>()?;
            let _ = writeln!(resolved, "pred_dir={}", dir.display());
            evaluate_maps(&items, max_dist)?
        }
        (None, None) => return Err(Error::Config("give `--checkpoint` or `--pred-dir`".into())),
    };
    create_out(&g.out)?;
    write_resolved(&g.out, "eval", &resolved)?;
    scores.write_csvs(&g.out)?;
    println!("ODS {:.4} (threshold {}) OIS {:.4} AP {:.4}", scores.ods, scores.ods_threshold, scores.ois, scores.ap);
    Ok(())
}

pub fn plot_data(g: &Global, a: &PlotDataArgs) -> Result<()> {
    if a.curves.is_empty() {
        return Err(Error::Config("plot-data needs at least one pr_curve.csv".into()));
    }
    if !a.labels.is_empty() && a.labels.len() != a.curves.len() {
        return Err(Error::Config(format!("{} labels for {} curves", a.labels.len(), a.curves.len())));
    }
    let mut table = "label,threshold,precision,recall,f\n".to_string();
    for (i, path) in a.curves.iter().enumerate() {
        let label = a.labels.get(i).cloned().unwrap_or_else(|| {
            path.parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| image_stem(path))
        });
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("threshold,precision,recall,f") {
            return Err(Error::format(path, "expected a `threshold,precision,recall,f` header"));
        }
        let mut rows = 0;
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 || fields.iter().any(|f| f.trim().parse::<f64>().is_err()) {
                return Err(Error::format(path, format!("line {}: expected four numbers", n + 2)));
            }
            let _ = writeln!(table, "{label},{line}");
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::format(path, "no curve points"));
        }
    }
    create_out(&g.out)?;
    let labels = a.labels.join(",");
    let inputs = a.curves.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
    write_resolved(&g.out, "plot-data", &format!("inputs={inputs}\nlabels={labels}\n"))?;
    let out = g.out.join("plot_data.csv");
    write_file(&out, &table)?;
    println!("wrote {}", out.display());
    Ok(())
}

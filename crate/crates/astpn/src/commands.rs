//! Subcommand implementations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use astpn_core::data::{select_fraction, Dataset, DatasetSplit, CROP_MARGIN};
use astpn_core::eval::{compute_cmc, test_view, CmcCurve, EvalConfig};
use astpn_core::gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
use astpn_core::graph::Fault;
use astpn_core::model::{extract_feature, AstpnParams};
use astpn_core::rng;
use astpn_core::train::train;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, load_dataset, read_id_list, write_split};
use crate::error::{AppError, AppResult};
use crate::report::{self, ReportMeta};

pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial_{trial}"))
}

pub fn checkpoint_path(out: &Path, trial: usize) -> PathBuf {
    trial_dir(out, trial).join("checkpoint.astp")
}

fn dataset_root(cfg: &RunConfig) -> AppResult<&Path> {
    cfg.dataset
        .as_deref()
        .ok_or_else(|| AppError::Usage("no dataset root given (set `dataset` or pass --dataset)".into()))
}

fn load(root: &Path) -> AppResult<Dataset> {
    let loaded = load_dataset(root)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded.dataset)
}

/// Frame size after the crop, checked to be uniform across the dataset.
fn cropped_hw(ds: &Dataset, root: &Path) -> AppResult<(usize, usize)> {
    let mut sizes = ds.sequences.iter().filter_map(|s| s.frame_hw().map(|hw| (hw, s)));
    let ((h, w), _) = sizes
        .next()
        .ok_or_else(|| AppError::Format {
            path: root.to_path_buf(),
            msg: "dataset has no frames".into(),
        })?;
    if let Some((hw, s)) = sizes.find(|(hw, _)| *hw != (h, w)) {
        return Err(AppError::Format {
            path: root.to_path_buf(),
            msg: format!(
                "{}/{} has {}x{} frames, expected {h}x{w} like the rest",
                s.person_id, s.camera_id, hw.0, hw.1
            ),
        });
    }
    if h <= CROP_MARGIN || w <= CROP_MARGIN {
        return Err(AppError::Format {
            path: root.to_path_buf(),
            msg: format!("frames are {h}x{w}; at least {0}x{0} is needed", CROP_MARGIN + 1),
        });
    }
    Ok((h - CROP_MARGIN, w - CROP_MARGIN))
}

fn dataset_name(root: &Path) -> String {
    root.file_name()
        .map(|s| s.to_string_lossy().replace(|c: char| !c.is_ascii_alphanumeric() && c != '-', "_"))
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "dataset".into())
}

fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_text(path: &Path, text: &str) -> AppResult<()> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Trains one model per trial and writes checkpoints, loss logs and splits.
pub fn cmd_train(cfg: &RunConfig) -> AppResult<Vec<PathBuf>> {
    let root = dataset_root(cfg)?;
    let ds = load(root)?;
    let hw = cropped_hw(&ds, root)?;
    let model = cfg.model()?;
    let train_cfg = cfg.train();
    let ids = ds.pairable_ids();
    fs::create_dir_all(&cfg.out).map_err(|e| AppError::io(&cfg.out, e))?;
    cfg.write(&cfg.out.join("config.toml"))?;
    let mut written = Vec::new();
    for trial in 0..cfg.trials {
        let split = DatasetSplit::new(&ids, cfg.split_mode()?, cfg.seed, trial);
        write_split(&cfg.out, &split)?;
        let dir = trial_dir(&cfg.out, trial);
        fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
        let init_seed = rng::derive(cfg.seed, &[trial as u64]);
        let mut params = AstpnParams::init(&model, split.train.len().max(1), hw, init_seed)?;
        let log_path = dir.join("train_log.csv");
        let mut log_file = fs::File::create(&log_path).map_err(|e| AppError::io(&log_path, e))?;
        writeln!(log_file, "epoch,mean_loss").map_err(|e| AppError::io(&log_path, e))?;
        let mut io_err = None;
        train(&mut params, &ds, &split, &model, &train_cfg, |stats, p| {
            log::info!("trial {trial} epoch {} mean loss {:.6}", stats.epoch + 1, stats.mean_loss);
            let mut step = || -> AppResult<()> {
                writeln!(log_file, "{},{}", stats.epoch + 1, report::decimal(stats.mean_loss))
                    .map_err(|e| AppError::io(&log_path, e))?;
                if cfg.save_every > 0 && (stats.epoch + 1) % cfg.save_every == 0 {
                    checkpoint::save(&dir.join(format!("checkpoint_epoch_{}.astp", stats.epoch + 1)), p)?;
                }
                Ok(())
            };
            if io_err.is_none() {
                io_err = step().err();
            }
        })?;
        if let Some(e) = io_err {
            return Err(e);
        }
        let path = checkpoint_path(&cfg.out, trial);
        checkpoint::save(&path, &params)?;
        println!("trial {trial}: wrote {}", path.display());
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub curves: Vec<CmcCurve>,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Per-trial CMC on the held-out identities (or on a fraction of a foreign
/// dataset in cross-dataset mode), averaged into one report.
pub fn cmd_eval(cfg: &RunConfig, explicit_checkpoint: Option<&Path>) -> AppResult<EvalOutcome> {
    let model = cfg.model()?;
    let cross = cfg.cross_dataset.as_deref();
    let root = match cross {
        Some(r) => r,
        None => dataset_root(cfg)?,
    };
    let ds = load(root)?;
    let hw = cropped_hw(&ds, root)?;
    let ids = ds.pairable_ids();
    let mut curves = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let test_ids = match cross {
            Some(_) => select_fraction(&ids, cfg.cross_fraction, cfg.seed)?,
            None => {
                let listed = cfg.out.join("splits").join(format!("trial_{trial}")).join("test.txt");
                if listed.exists() {
                    read_id_list(&listed)?
                } else {
                    DatasetSplit::new(&ids, cfg.split_mode()?, cfg.seed, trial).test
                }
            }
        };
        let ck = explicit_checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| checkpoint_path(&cfg.out, trial));
        let params = checkpoint::load(&ck, &model, hw)?;
        let eval_cfg = EvalConfig {
            frames: cfg.eval_frames(),
            seed: cfg.seed,
            trial,
        };
        let curve = compute_cmc(&ds, &test_ids, &params, &model, &eval_cfg)?;
        println!(
            "trial {trial}: rank-1 {:.4} rank-5 {:.4} over {} probes",
            curve.at(1),
            curve.at(5),
            curve.n_probes
        );
        curves.push(curve);
    }
    let name = dataset_name(root);
    let hash = cfg.hash();
    let ts = unix_time();
    let meta = ReportMeta {
        dataset: &name,
        variant: cfg.variant()?.name(),
        seed: cfg.seed,
        config_hash: &hash,
        timestamp: ts,
    };
    let (csv, json) = report::emit_report(&curves, &cfg.out, &meta)?;
    let stem = csv.file_stem().expect("report name").to_string_lossy().into_owned();
    cfg.write(&cfg.out.join(format!("{stem}.config.toml")))?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(EvalOutcome { curves, csv, json })
}

/// Writes `features.csv` with one test-view feature per sequence.
pub fn cmd_extract(cfg: &RunConfig, explicit_checkpoint: Option<&Path>) -> AppResult<PathBuf> {
    let model = cfg.model()?;
    let root = dataset_root(cfg)?;
    let ds = load(root)?;
    let hw = cropped_hw(&ds, root)?;
    let ck = explicit_checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint_path(&cfg.out, 0));
    let params = checkpoint::load(&ck, &model, hw)?;
    let mut text = String::from("person_id,camera_id");
    for j in 0..model.feature_dim {
        text.push_str(&format!(",f{j}"));
    }
    text.push('\n');
    for (i, seq) in ds.sequences.iter().enumerate() {
        let view = test_view(seq, cfg.eval_frames(), rng::derive(cfg.seed, &[i as u64]))?;
        let f = extract_feature(&params, &view, &model)?;
        text.push_str(&format!("{},{}", seq.person_id, seq.camera_id));
        for v in f.data() {
            text.push(',');
            text.push_str(&report::decimal(*v));
        }
        text.push('\n');
    }
    fs::create_dir_all(&cfg.out).map_err(|e| AppError::io(&cfg.out, e))?;
    let path = cfg.out.join("features.csv");
    write_text(&path, &text)?;
    println!("wrote {} features to {}", ds.len(), path.display());
    Ok(path)
}

/// Finite-difference check of the full objective on the toy model.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt_backward: bool) -> AppResult<GradcheckReport> {
    let gc = GradcheckConfig {
        variant: cfg.variant()?,
        seed: cfg.seed,
        fault: corrupt_backward.then_some(Fault::TanhDerivative),
        ..Default::default()
    };
    let report = gradcheck(&gc)?;
    for t in &report.tensors {
        let verdict = if t.max_rel_err < report.tolerance { "ok" } else { "FAIL" };
        println!(
            "{:<18} {:>4} elements  worst rel err {:.3e}  {verdict}",
            t.name, t.checked, t.max_rel_err
        );
    }
    if !report.passed() {
        return Err(AppError::Check(format!(
            "worst relative error {:.3e} exceeds {:.0e}",
            report.worst(),
            report.tolerance
        )));
    }
    println!("gradcheck passed: worst relative error {:.3e}", report.worst());
    Ok(report)
}

/// Renders a synthetic dataset into `root`.
pub fn cmd_synth(cfg: &RunConfig, root: &Path) -> AppResult<usize> {
    let spec = cfg.synth_spec();
    let files = dataset::write_synth(root, &spec)?;
    println!(
        "wrote {files} frames to {}: {} identities x {} cameras x {} frames of {}x{}",
        root.display(),
        spec.n_ids,
        spec.n_cams,
        spec.frames,
        spec.height,
        spec.width
    );
    Ok(files)
}

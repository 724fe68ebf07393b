//! On-disk datasets: `root/<person_id>/<camera_id>/NNNNN.ppm`.

use std::fs;
use std::path::{Path, PathBuf};

use astpn_core::data::{preprocess, synth, Dataset, DatasetSplit, FlowConfig, RawSequence};

use crate::error::{AppError, AppResult};
use crate::ppm;

#[derive(Debug, Default)]
pub struct Loaded {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn sorted_entries(dir: &Path) -> AppResult<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| AppError::io(dir, err)))
        .collect::<AppResult<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Decodes every sequence under `root` without preprocessing.
pub fn load_raw(root: &Path, warnings: &mut Vec<String>) -> AppResult<Vec<RawSequence>> {
    let mut seqs = Vec::new();
    for person in sorted_entries(root)? {
        if !person.is_dir() {
            warnings.push(format!("ignoring stray file {}", person.display()));
            continue;
        }
        let mut cams = 0;
        for cam in sorted_entries(&person)? {
            if !cam.is_dir() {
                warnings.push(format!("ignoring stray file {}", cam.display()));
                continue;
            }
            let mut frames = Vec::new();
            let mut sources = Vec::new();
            for f in sorted_entries(&cam)? {
                if f.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
                    frames.push(ppm::read(&f)?);
                    sources.push(f.display().to_string());
                } else {
                    warnings.push(format!("ignoring non-PPM file {}", f.display()));
                }
            }
            if frames.is_empty() {
                warnings.push(format!("no frames in {}", cam.display()));
                continue;
            }
            cams += 1;
            seqs.push(RawSequence {
                person_id: file_name(&person),
                camera_id: file_name(&cam),
                frames,
                sources,
            });
        }
        if cams < 2 {
            warnings.push(format!(
                "identity {} has {cams} camera(s) and is excluded from pairing",
                file_name(&person)
            ));
        }
    }
    Ok(seqs)
}

/// Loads and preprocesses a dataset. Identities with fewer than two cameras
/// are kept but reported, since pairing skips them.
pub fn load_dataset(root: &Path) -> AppResult<Loaded> {
    let mut warnings = Vec::new();
    let raw = load_raw(root, &mut warnings)?;
    let flow = FlowConfig::default();
    let sequences = raw
        .iter()
        .map(|r| preprocess(r, &flow))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Loaded {
        dataset: Dataset::new(sequences),
        warnings,
    })
}

/// Renders a synthetic dataset into `root`. Returns the number of files.
pub fn write_synth(root: &Path, spec: &synth::SynthSpec) -> AppResult<usize> {
    let mut files = 0;
    for seq in synth::render(spec)? {
        let dir = root.join(&seq.person_id).join(&seq.camera_id);
        fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
        for (frame, name) in seq.frames.iter().zip(&seq.sources) {
            ppm::write(&dir.join(name), frame)?;
            files += 1;
        }
    }
    Ok(files)
}

/// Writes `splits/trial_<t>/{train,test}.txt` under `out`.
pub fn write_split(out: &Path, split: &DatasetSplit) -> AppResult<PathBuf> {
    let dir = out.join("splits").join(format!("trial_{}", split.trial));
    fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    for (name, ids) in [("train.txt", &split.train), ("test.txt", &split.test)] {
        let path = dir.join(name);
        let mut text = ids.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
    }
    Ok(dir)
}

pub fn read_id_list(path: &Path) -> AppResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

//! Corpus discovery and best-pair curation over directories of teacher
//! outputs.
//!
//! For an RGB image `name.<ext>`, each model directory may hold
//! `name_depth.pfm` or `name_depth.png` (PFM wins when both exist) and
//! `name_normal.png`. Only models with both files are scored.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{read_depth, read_normals, read_rgb};
use crate::dnesa::{
    argmax_first, combined_score, evaluate_depth_map, evaluate_normal_map, DepthQuality,
    NormalQuality, ScoreWeights,
};
use crate::error::{Error, Result};
use crate::report::{fmt_f64, RunConfig, Tabular, TOOL_VERSION};

/// File name of the curation report written into the output directory.
pub const REPORT_FILE: &str = "dnesa_report.json";

const RGB_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// One model's candidate files for one RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateFiles {
    pub model: String,
    pub depth: Option<PathBuf>,
    pub normal: Option<PathBuf>,
}

impl CandidateFiles {
    pub fn is_complete(&self) -> bool {
        self.depth.is_some() && self.normal.is_some()
    }
}

/// An RGB image with its per-model candidates, in model-directory order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub rgb: PathBuf,
    pub candidates: Vec<CandidateFiles>,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![];
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn model_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn has_rgb_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| RGB_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Pairs every RGB image with each model's depth/normal files by stem.
pub fn discover_pairs(rgb_dir: &Path, model_dirs: &[PathBuf]) -> Result<Vec<CandidateSet>> {
    let mut names: Vec<String> = model_dirs.iter().map(|d| model_name(d)).collect();
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Parameter(format!(
            "two model directories share the name {:?}",
            w[0]
        )));
    }
    for dir in model_dirs {
        // surfaces unreadable model dirs before any work starts
        fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut sets = vec![];
    for rgb in read_dir_sorted(rgb_dir)?
        .into_iter()
        .filter(|p| has_rgb_extension(p))
    {
        let stem = rgb.file_stem().unwrap().to_string_lossy().into_owned();
        let candidates = model_dirs
            .iter()
            .map(|dir| {
                let pfm = dir.join(format!("{stem}_depth.pfm"));
                let png = dir.join(format!("{stem}_depth.png"));
                let depth = match (pfm.is_file(), png.is_file()) {
                    (true, true) => {
                        warn!(
                            "{}: both PFM and PNG depth for {stem}; using {}",
                            dir.display(),
                            pfm.display()
                        );
                        Some(pfm)
                    }
                    (true, false) => Some(pfm),
                    (false, true) => Some(png),
                    (false, false) => None,
                };
                let normal = Some(dir.join(format!("{stem}_normal.png"))).filter(|p| p.is_file());
                CandidateFiles {
                    model: model_name(dir),
                    depth,
                    normal,
                }
            })
            .collect();
        sets.push(CandidateSet { rgb, candidates });
    }
    Ok(sets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub model: String,
    pub depth_path: PathBuf,
    pub normal_path: PathBuf,
    pub depth_quality: DepthQuality,
    pub normal_quality: NormalQuality,
    pub depth_score: f64,
    pub normal_score: f64,
    pub combined_score: f64,
}

/// A model left out of scoring for one image, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCandidate {
    pub model: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub rgb: PathBuf,
    pub candidates: Vec<CandidateRecord>,
    pub selected_model: Option<String>,
    pub skipped: bool,
    #[serde(default)]
    pub excluded: Vec<ExcludedCandidate>,
}

impl ImageRecord {
    pub fn selected(&self) -> Option<&CandidateRecord> {
        let name = self.selected_model.as_ref()?;
        self.candidates.iter().find(|c| &c.model == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub images: Vec<ImageRecord>,
    pub weights: ScoreWeights,
    pub version: String,
    #[serde(default)]
    pub config: RunConfig,
}

impl CurationReport {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("curation report: {e}")))
    }
}

impl Tabular for CurationReport {
    fn header(&self) -> Vec<String> {
        [
            "rgb",
            "model",
            "selected",
            "edge_consistency_depth",
            "local_variance",
            "complexity",
            "sharpness_depth",
            "edge_consistency_normal",
            "orientation_variance",
            "sharpness_normal",
            "depth_score",
            "normal_score",
            "combined_score",
        ]
        .map(String::from)
        .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![];
        for img in &self.images {
            for c in &img.candidates {
                let d = &c.depth_quality;
                let n = &c.normal_quality;
                let mut row = vec![
                    img.rgb.display().to_string(),
                    c.model.clone(),
                    (img.selected_model.as_deref() == Some(c.model.as_str())).to_string(),
                ];
                row.extend(
                    [
                        d.edge_consistency,
                        d.local_variance,
                        d.complexity,
                        d.sharpness,
                        n.edge_consistency,
                        n.orientation_variance,
                        n.sharpness,
                        c.depth_score,
                        c.normal_score,
                        c.combined_score,
                    ]
                    .map(fmt_f64),
                );
                rows.push(row);
            }
        }
        rows
    }
}

#[derive(Clone, Debug)]
pub struct CurateOptions {
    pub rgb_dir: PathBuf,
    pub model_dirs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub weights: ScoreWeights,
    pub workers: usize,
}

/// Scores every complete candidate of one image and picks the best.
pub fn evaluate_candidate_set(set: &CandidateSet, weights: &ScoreWeights) -> ImageRecord {
    let mut record = ImageRecord {
        rgb: set.rgb.clone(),
        candidates: vec![],
        selected_model: None,
        skipped: true,
        excluded: vec![],
    };
    let rgb = match read_rgb(&set.rgb) {
        Ok(rgb) => rgb,
        Err(e) => {
            warn!("skipping {}: {e}", set.rgb.display());
            return record;
        }
    };
    for cand in &set.candidates {
        let (Some(depth_path), Some(normal_path)) = (&cand.depth, &cand.normal) else {
            let missing = if cand.depth.is_none() {
                "depth"
            } else {
                "normal"
            };
            record.excluded.push(ExcludedCandidate {
                model: cand.model.clone(),
                reason: format!("missing {missing} file"),
            });
            continue;
        };
        let scored = read_depth(depth_path)
            .and_then(|d| evaluate_depth_map(&d, &rgb))
            .and_then(|dq| {
                let nq = evaluate_normal_map(&read_normals(normal_path)?, &rgb)?;
                Ok((dq, nq))
            });
        match scored {
            Ok((dq, nq)) => {
                let s = combined_score(&dq, &nq, weights);
                record.candidates.push(CandidateRecord {
                    model: cand.model.clone(),
                    depth_path: depth_path.clone(),
                    normal_path: normal_path.clone(),
                    depth_quality: dq,
                    normal_quality: nq,
                    depth_score: s.depth,
                    normal_score: s.normal,
                    combined_score: s.combined,
                });
            }
            Err(e) => {
                warn!("{}: excluding {}: {e}", set.rgb.display(), cand.model);
                record.excluded.push(ExcludedCandidate {
                    model: cand.model.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let scores: Vec<f64> = record.candidates.iter().map(|c| c.combined_score).collect();
    if let Some(best) = argmax_first(&scores) {
        record.selected_model = Some(record.candidates[best].model.clone());
        record.skipped = false;
    }
    record
}

fn copy_into(src: &Path, out_dir: &Path, model: &str) -> Result<()> {
    let name = src.file_name().unwrap().to_string_lossy();
    let dst = out_dir.join(format!("{model}_{name}"));
    fs::copy(src, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(())
}

/// Runs selection over a whole corpus and copies each winning pair into
/// `out_dir`, prefixed by the model name. The report's image order is the
/// sorted RGB file order whatever the worker count.
pub fn curate(opts: &CurateOptions) -> Result<CurationReport> {
    if opts.model_dirs.is_empty() {
        return Err(Error::Parameter(
            "at least one model directory is required".into(),
        ));
    }
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let sets = discover_pairs(&opts.rgb_dir, &opts.model_dirs)?;
    if sets.is_empty() {
        warn!("no RGB images found in {}", opts.rgb_dir.display());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    let images: Vec<ImageRecord> = pool.install(|| {
        sets.par_iter()
            .map(|s| evaluate_candidate_set(s, &opts.weights))
            .collect()
    });
    for img in &images {
        match img.selected() {
            Some(best) => {
                copy_into(&best.depth_path, &opts.out_dir, &best.model)?;
                copy_into(&best.normal_path, &opts.out_dir, &best.model)?;
                info!("{} -> {}", img.rgb.display(), best.model);
            }
            None => warn!("{}: no complete candidate, skipped", img.rgb.display()),
        }
    }
    Ok(CurationReport {
        images,
        weights: opts.weights,
        version: TOOL_VERSION.to_string(),
        config: RunConfig::default(),
    })
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{cache_key, image_digest, CacheKeyInput, FeatureCache};
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::report::{self, MetricRow};
use crate::detector::{self, FeatureVector, LinearScorer, TrainConfig, DEFAULT_DIM_SIDE};
use crate::error::{Error, Result};
use crate::eval::{self, Label, ScoreRecord, ScoreSet};
use crate::features::{self, FeatureKind, FeatureMap};
use crate::fusion::{self, CalibrationProtocol, FusionRule};
use crate::imageio::{self, Channels, ImageBuffer};
use crate::preprocess::{self, AugmentConfig, PreprocessConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kinds: Vec<FeatureKind>,
    /// Drives the trainer's shuffling and the augmentation stream; the
    /// `seed` fields of the nested sections are overridden by it.
    pub seed: u64,
    pub dim_side: usize,
    pub preprocess: PreprocessConfig,
    /// Present: every training image also contributes one augmented copy.
    pub augment: Option<AugmentConfig>,
    pub train: TrainConfig,
    pub fusion: FusionRule,
    pub calibration: CalibrationProtocol,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Worker threads for extraction and scoring; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kinds: vec![FeatureKind::dct(), FeatureKind::ela(), FeatureKind::Srm],
            seed: 0,
            dim_side: DEFAULT_DIM_SIDE,
            preprocess: PreprocessConfig::default(),
            augment: None,
            train: TrainConfig::default(),
            fusion: FusionRule::MIN,
            calibration: CalibrationProtocol::PROTOCOL_I,
            cache_dir: None,
            out_dir: PathBuf::from("out"),
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::InvalidConfig("at least one feature kind is required".into()));
        }
        let distinct: BTreeSet<String> = self.kinds.iter().map(FeatureKind::slug).collect();
        if distinct.len() != self.kinds.len() {
            return Err(Error::InvalidConfig("feature kinds must be distinct".into()));
        }
        for k in &self.kinds {
            k.validate()?;
        }
        if self.dim_side == 0 {
            return Err(Error::InvalidConfig("dim_side must be >= 1".into()));
        }
        self.preprocess.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.train.validate()?;
        self.fusion.validate()?;
        if let Some(w) = &self.fusion.weights {
            if self.kinds.len() > 1 && w.len() != self.kinds.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} fusion weights for {} feature kinds",
                    w.len(),
                    self.kinds.len()
                )));
            }
        }
        self.calibration.validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn augment_config(&self) -> Option<AugmentConfig> {
        self.augment.as_ref().map(|a| AugmentConfig {
            seed: self.seed,
            ..a.clone()
        })
    }
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Extractor output for a preprocessed face. With
/// `grayscale_for_handcrafted` off, handcrafted kinds run on each colour
/// plane separately and the three maps are averaged.
pub fn extract_prepared(
    img: &ImageBuffer,
    kind: FeatureKind,
    cfg: &PreprocessConfig,
) -> Result<FeatureMap> {
    if kind == FeatureKind::Rgb || cfg.grayscale_for_handcrafted || img.is_gray() {
        return features::extract(img, kind);
    }
    let mut acc: Option<Vec<f64>> = None;
    for c in 0..3 {
        let plane: Vec<u8> = img.data().iter().skip(c).step_by(3).copied().collect();
        let plane = ImageBuffer::new(img.width(), img.height(), Channels::Gray, plane)?;
        let map = features::extract(&plane, kind)?;
        match &mut acc {
            None => acc = Some(map.values().to_vec()),
            Some(a) => a.iter_mut().zip(map.values()).for_each(|(x, y)| *x += y),
        }
    }
    let values = acc.expect("three planes").into_iter().map(|v| v / 3.0).collect();
    FeatureMap::new(img.width() as usize, img.height() as usize, values)
}

/// Shared state for turning manifest entries into feature vectors.
pub struct ExtractContext<'a> {
    pub preprocess: &'a PreprocessConfig,
    pub dim_side: usize,
    pub cache: &'a FeatureCache,
}

impl ExtractContext<'_> {
    /// Feature vectors of one entry, one per kind. With `augment`, the
    /// image first passes through the augmentation suite keyed by `index`.
    pub fn entry_vectors(
        &self,
        entry: &ManifestEntry,
        index: u64,
        kinds: &[FeatureKind],
        augment: Option<&AugmentConfig>,
    ) -> Result<Vec<FeatureVector>> {
        let bytes = std::fs::read(&entry.path)
            .map_err(|e| Error::io(&entry.path, e).in_sample(&entry.id))?;
        let digest = image_digest(&bytes);
        let mut prepared: Option<ImageBuffer> = None;
        let mut out = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let key = cache_key(&CacheKeyInput {
                image_digest: &digest,
                kind,
                preprocess: self.preprocess,
                dim_side: self.dim_side,
                augment: augment.map(|a| (a, index)),
                attack: entry.label.is_attack(),
            });
            let v = self.cache.get_or_compute(&key, || {
                if prepared.is_none() {
                    let img = imageio::decode_image(&bytes)?;
                    let mut face = preprocess::preprocess_face(&img, entry.face_box, self.preprocess)?;
                    if let Some(a) = augment {
                        face = preprocess::augment(&face, entry.label, a, index)?;
                    }
                    prepared = Some(face);
                }
                let img = prepared.as_ref().expect("prepared above");
                let map = extract_prepared(img, kind, self.preprocess)?;
                Ok(detector::feature_vector(&map, kind, self.dim_side))
            });
            out.push(v.map_err(|e| e.in_sample(&entry.id))?);
        }
        Ok(out)
    }

    /// Vectors for many entries in parallel, in input order. `indices` are
    /// the entries' positions in their manifest.
    pub fn vectors(
        &self,
        entries: &[(usize, &ManifestEntry)],
        kinds: &[FeatureKind],
        augment: Option<&AugmentConfig>,
    ) -> Result<Vec<Vec<FeatureVector>>> {
        entries
            .par_iter()
            .map(|&(i, e)| self.entry_vectors(e, i as u64, kinds, augment))
            .collect()
    }
}

/// Scores vectors with `model`, keyed by entry id.
pub fn score_vectors(
    model: &LinearScorer,
    entries: &[(usize, &ManifestEntry)],
    vectors: &[&FeatureVector],
) -> Result<ScoreSet> {
    let records = entries
        .par_iter()
        .zip(vectors.par_iter())
        .map(|(&(_, e), v)| {
            Ok(ScoreRecord {
                sample_id: e.id.clone(),
                label: e.label,
                score: detector::predict(model, v).map_err(|err| err.in_sample(&e.id))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub name: String,
    /// D-EER over the whole test split.
    pub test_d_eer: f64,
    pub scores_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub models: Vec<ModelSummary>,
    pub fused: Option<ModelSummary>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub outputs: Vec<PathBuf>,
}

impl RunSummary {
    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().chain(&self.fused).find(|m| m.name == name)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &[u8], outputs: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    outputs.push(path.to_owned());
    Ok(())
}

/// File-name-safe form of a fusion rule, e.g. `weighted_1_0.5`.
fn rule_slug(rule: &FusionRule) -> String {
    rule.to_string().replace([':', ','], "_")
}

/// Test records grouped by dataset tag for the metrics table. A dataset
/// with attacks only is paired with the bona fide test images of the
/// datasets seen in training, as cross-dataset evaluation conventionally
/// does.
fn dataset_views(
    scores: &ScoreSet,
    entries: &[(usize, &ManifestEntry)],
    intra: &BTreeSet<&str>,
) -> Vec<(String, ScoreSet)> {
    let source_of = |id: &str| {
        entries
            .iter()
            .find(|(_, e)| e.id == id)
            .map(|(_, e)| e.source.as_str())
            .unwrap_or_default()
    };
    let sources: BTreeSet<&str> = entries.iter().map(|(_, e)| e.source.as_str()).collect();
    let mut views = Vec::new();
    for src in sources {
        let mut view = scores.filter(|r| source_of(&r.sample_id) == src);
        if view.count(Label::Bonafide) == 0 {
            view = scores.filter(|r| {
                let s = source_of(&r.sample_id);
                s == src || (r.label == Label::Bonafide && intra.contains(s))
            });
        }
        if view.count(Label::Bonafide) > 0 && view.count(Label::Attack) > 0 {
            let name = if src.is_empty() { "default" } else { src };
            views.push((name.to_owned(), view));
        }
    }
    views
}

pub fn run_pipeline(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<RunSummary> {
    let cache = FeatureCache::new(cfg.cache_dir.clone());
    run_pipeline_with_cache(manifest, cfg, &cache)
}

/// Extract, train, score, calibrate, fuse and report. Writes score CSVs,
/// metrics tables, DET plots and model files under `cfg.out_dir`.
pub fn run_pipeline_with_cache(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    cache: &FeatureCache,
) -> Result<RunSummary> {
    cfg.validate()?;
    manifest.validate_for_training()?;
    let pool = thread_pool(cfg.jobs)?;
    let (hits0, misses0) = (cache.hits(), cache.misses());

    let by_split = |s: Split| -> Vec<(usize, &ManifestEntry)> {
        manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == s)
            .collect()
    };
    let (train, val, test) = (by_split(Split::Train), by_split(Split::Val), by_split(Split::Test));
    let ctx = ExtractContext {
        preprocess: &cfg.preprocess,
        dim_side: cfg.dim_side,
        cache,
    };
    let augment = cfg.augment_config();
    let kinds = &cfg.kinds;

    let (train_v, aug_v, val_v, test_v) = pool.install(|| -> Result<_> {
        let train_v = ctx.vectors(&train, kinds, None)?;
        let aug_v = match &augment {
            Some(a) => ctx.vectors(&train, kinds, Some(a))?,
            None => Vec::new(),
        };
        Ok((
            train_v,
            aug_v,
            ctx.vectors(&val, kinds, None)?,
            ctx.vectors(&test, kinds, None)?,
        ))
    })?;

    let out = &cfg.out_dir;
    let models_dir = out.join("models");
    create_dir(&models_dir)?;
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    let intra: BTreeSet<&str> = train.iter().map(|(_, e)| e.source.as_str()).collect();
    let train_cfg = cfg.train_config();

    let mut summaries = Vec::new();
    let mut calibrated_val = Vec::new();
    let mut calibrated_test = Vec::new();
    let column = |rows: &[Vec<FeatureVector>], k: usize| -> Vec<FeatureVector> {
        rows.iter().map(|r| r[k].clone()).collect()
    };

    for (k, kind) in kinds.iter().enumerate() {
        let slug = kind.slug();
        let samples: Vec<(FeatureVector, Label)> = column(&train_v, k)
            .into_iter()
            .zip(train.iter().map(|(_, e)| e.label))
            .chain(column(&aug_v, k).into_iter().zip(train.iter().map(|(_, e)| e.label)))
            .collect();
        let model = detector::train(&samples, &train_cfg)?;
        let model_path = models_dir.join(format!("{slug}.bin"));
        let mut bytes = Vec::new();
        model
            .write(&mut bytes)
            .map_err(|e| Error::io(&model_path, e))?;
        write_file(&model_path, &bytes, &mut outputs)?;

        let (val_scores, test_scores) = pool.install(|| -> Result<_> {
            let vv: Vec<&FeatureVector> = val_v.iter().map(|r| &r[k]).collect();
            let tv: Vec<&FeatureVector> = test_v.iter().map(|r| &r[k]).collect();
            Ok((score_vectors(&model, &val, &vv)?, score_vectors(&model, &test, &tv)?))
        })?;

        let scores_path = out.join(format!("scores_{slug}.csv"));
        let mut buf = Vec::new();
        test_scores.write_csv(&mut buf)?;
        write_file(&scores_path, &buf, &mut outputs)?;

        let summary = emit_model(
            &slug,
            "raw",
            &test_scores,
            &test,
            &intra,
            out,
            &mut rows,
            &mut outputs,
        )?;
        summaries.push(ModelSummary {
            scores_path,
            ..summary
        });

        let cal = fusion::calibrate(&val_scores, cfg.calibration)?;
        calibrated_val.push(fusion::apply_calibration(&cal, &val_scores));
        calibrated_test.push(fusion::apply_calibration(&cal, &test_scores));
    }

    let fused = if kinds.len() >= 2 {
        let name = format!("fused_{}", rule_slug(&cfg.fusion));
        let fused_test = fusion::fuse(&calibrated_test, &cfg.fusion)?;
        let scores_path = out.join("scores_fused.csv");
        let mut buf = Vec::new();
        fused_test.write_csv(&mut buf)?;
        write_file(&scores_path, &buf, &mut outputs)?;
        let protocol = cfg.calibration.to_string();
        let summary = emit_model(
            &name,
            &protocol,
            &fused_test,
            &test,
            &intra,
            out,
            &mut rows,
            &mut outputs,
        )?;
        Some(ModelSummary {
            scores_path,
            ..summary
        })
    } else {
        None
    };

    let metrics_csv = out.join("metrics.csv");
    report::write_metrics_csv(&rows, &metrics_csv)?;
    outputs.push(metrics_csv);
    let intra_names: Vec<String> = intra
        .iter()
        .map(|s| if s.is_empty() { "default" } else { s }.to_owned())
        .collect();
    write_file(
        &out.join("metrics.md"),
        report::metrics_markdown(&rows, &intra_names).as_bytes(),
        &mut outputs,
    )?;

    Ok(RunSummary {
        models: summaries,
        fused,
        cache_hits: cache.hits() - hits0,
        cache_misses: cache.misses() - misses0,
        outputs,
    })
}

#[allow(clippy::too_many_arguments)]
fn emit_model(
    name: &str,
    protocol: &str,
    test_scores: &ScoreSet,
    test: &[(usize, &ManifestEntry)],
    intra: &BTreeSet<&str>,
    out: &Path,
    rows: &mut Vec<MetricRow>,
    outputs: &mut Vec<PathBuf>,
) -> Result<ModelSummary> {
    let overall = eval::d_eer(test_scores)?;
    let curve = eval::det_curve(test_scores)?;
    write_file(
        &out.join(format!("det_{name}.svg")),
        report::det_svg(name, &curve, &overall).as_bytes(),
        outputs,
    )?;
    for (dataset, view) in dataset_views(test_scores, test, intra) {
        let e = eval::d_eer(&view)?;
        rows.push(MetricRow {
            model: name.to_owned(),
            protocol: protocol.to_owned(),
            split: Split::Test.to_string(),
            dataset,
            d_eer: e.eer,
            threshold: e.threshold,
        });
    }
    Ok(ModelSummary {
        name: name.to_owned(),
        test_d_eer: overall.eer,
        scores_path: PathBuf::new(),
    })
}

//! File-to-file stages: synth → lift → regularize → eval, plus the ablation
//! grid. Each stage reads the previous stage's artifacts from the run
//! directory, so running them one by one gives the same files as
//! [`run_pipeline`].
//!
//! Run directory layout:
//!
//! ```text
//! config.json                 resolved run config
//! scene.ply  cameras.json  truth.nrgg
//! features/manifest.json      + one .nrgt per (lifting view, granularity)
//! lifted/g{1,2,3}.nrgf
//! regularized/g{1,2,3}.nrgf  regularizer.nrgm  loss_log.jsonl
//! eval/report.txt  eval/report_raw.txt  [eval/rasters/*.pgm|ppm]
//! ablation/report.txt
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::eval::{ablation_grid, class_queries, evaluate, relevance_from_map, EvalReport, EvalViews};
use crate::io::json::{read_json, write_json};
use crate::io::{self, ManifestEntry};
use crate::lifter::{lift_observed, observations_all};
use crate::model::{Camera, GaussianScene, Granularity, SemanticField};
use crate::raster::{render_feature_map_from, Splats};
use crate::synth::{corrupt_maps, generate_scene, label_coverage, split_views, GroundTruth, SynthConfig};
use crate::train::{regularize_field, train, TrainConfig};

/// Optional input overrides; unset paths resolve inside the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    pub scene: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Feature-map manifest.
    pub features: Option<PathBuf>,
    pub lifted: Option<PathBuf>,
    pub regularized: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, overrides both `synth.seed` and `train.seed`.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: PathBuf,
    /// Write relevance and segmentation rasters during eval.
    pub rasters: bool,
    pub paths: InputPaths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            threads: 0,
            out: PathBuf::from("run"),
            rasters: false,
            paths: InputPaths::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON run config. A file that parses as JSON but not as a run
    /// config (unknown key, wrong type) is a config error, not a format error.
    pub fn load(path: &Path) -> Result<Self> {
        match read_json(path) {
            Ok(c) => Ok(c),
            Err(FormatError::Malformed { path, reason }) => {
                Err(Error::Config(format!("{}: {reason}", path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Applies the global seed and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.train.seed = s;
        }
        self.synth.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    fn input(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out.join(default))
    }

    pub fn scene_path(&self) -> PathBuf {
        self.input(&self.paths.scene, "scene.ply")
    }

    pub fn cameras_path(&self) -> PathBuf {
        self.input(&self.paths.cameras, "cameras.json")
    }

    pub fn truth_path(&self) -> PathBuf {
        self.input(&self.paths.truth, "truth.nrgg")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.input(&self.paths.features, "features/manifest.json")
    }

    pub fn lifted_dir(&self) -> PathBuf {
        self.input(&self.paths.lifted, "lifted")
    }

    pub fn regularized_dir(&self) -> PathBuf {
        self.input(&self.paths.regularized, "regularized")
    }

    /// Builds the worker pool that every stage runs inside.
    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// Timing and headline numbers of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: &'static str,
    pub seconds: f64,
    pub metrics: Vec<(String, f64)>,
}

fn timed(stage: &'static str, f: impl FnOnce() -> Result<Vec<(String, f64)>>) -> Result<StageReport> {
    let t = Instant::now();
    let metrics = f()?;
    let seconds = t.elapsed().as_secs_f64();
    log::info!("{stage} finished in {seconds:.2}s");
    Ok(StageReport { stage, seconds, metrics })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io::io_error(path, e).into())
}

fn field_path(dir: &Path, g: Granularity) -> PathBuf {
    dir.join(format!("g{}.nrgf", g.value()))
}

/// Echoes the resolved config into the run directory.
pub fn write_config(config: &RunConfig) -> Result<()> {
    create_dir(&config.out)?;
    write_json(&config.out.join("config.json"), config)?;
    Ok(())
}

fn read_scene(path: &Path) -> Result<GaussianScene> {
    Ok(io::read_ply(path)?.scene)
}

fn read_fields(dir: &Path) -> Result<Vec<SemanticField>> {
    let mut out = Vec::with_capacity(3);
    for g in Granularity::ALL {
        let path = field_path(dir, g);
        let f = io::read_field(&path)?;
        if f.granularity != g {
            return Err(Error::Format(crate::FormatError::Malformed {
                path,
                reason: format!("holds granularity {}, expected {g}", f.granularity),
            }));
        }
        out.push(f);
    }
    Ok(out)
}

fn write_fields(dir: &Path, fields: &[SemanticField]) -> Result<()> {
    create_dir(dir)?;
    for f in fields {
        io::write_field(&field_path(dir, f.granularity), f)?;
    }
    Ok(())
}

fn check_scene_size(scene: &GaussianScene, fields: &[SemanticField], what: &Path) -> Result<()> {
    if let Some(f) = fields.iter().find(|f| f.len() != scene.len()) {
        return Err(Error::Shape(format!(
            "{} has {} rows but the scene has {} Gaussians",
            what.display(),
            f.len(),
            scene.len()
        )));
    }
    Ok(())
}

/// Generates the scene, cameras, ground truth and the corrupted feature maps
/// of the lifting views.
pub fn stage_synth(config: &RunConfig) -> Result<StageReport> {
    timed("synth", || {
        let cfg = &config.synth;
        let (scene, truth, cams) = generate_scene(cfg)?;
        let (lift_cams, _) = split_views(&cams);
        create_dir(&config.out)?;
        io::write_ply(&config.scene_path(), &scene)?;
        io::write_cameras(&config.cameras_path(), &cams)?;
        io::write_truth(&config.truth_path(), &truth)?;

        let manifest = config.manifest_path();
        let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
        create_dir(&dir)?;
        let mut entries = Vec::new();
        for g in Granularity::ALL {
            let cov = label_coverage(&scene, &truth, &lift_cams, g);
            for m in corrupt_maps(&cov, &truth, cfg) {
                let name = format!("v{:03}_g{}.nrgt", m.view_id, g.value());
                io::write_feature_map(&dir.join(&name), &m)?;
                entries.push(ManifestEntry {
                    view_id: m.view_id,
                    granularity: g,
                    path: PathBuf::from(name),
                });
            }
        }
        entries.sort_by_key(|e| (e.view_id, e.granularity.value()));
        io::write_manifest(&manifest, &entries)?;
        Ok(vec![
            ("gaussians".into(), scene.len() as f64),
            ("views".into(), cams.len() as f64),
            ("feature_maps".into(), entries.len() as f64),
        ])
    })
}

/// Lifts the manifest's feature maps onto the scene using the lifting
/// (even-indexed) views only.
pub fn stage_lift(config: &RunConfig) -> Result<StageReport> {
    timed("lift", || {
        let scene = read_scene(&config.scene_path())?;
        let cams = io::read_cameras(&config.cameras_path())?;
        let maps = io::ingest_external_features(&config.manifest_path(), &cams)?;
        let (lift_cams, _) = split_views(&cams);
        let obs = observations_all(&scene, &lift_cams);
        let mut fields = Vec::with_capacity(3);
        for g in Granularity::ALL {
            fields.push(lift_observed(scene.len(), &obs, &maps, g)?);
        }
        write_fields(&config.lifted_dir(), &fields)?;
        let n = scene.len().max(1) as f64;
        let mut metrics = Vec::new();
        for f in &fields {
            metrics.push((format!("{}.valid_fraction", f.granularity.name()), f.valid_count() as f64 / n));
            metrics.push((format!("{}.mean_variance", f.granularity.name()), mean_variance(f)));
        }
        Ok(metrics)
    })
}

/// Mean over valid rows of the summed per-dimension variance.
pub fn mean_variance(f: &SemanticField) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for i in (0..f.len()).filter(|&i| f.valid[i]) {
        s += f.variance_row(i).iter().map(|&v| v as f64).sum::<f64>();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Trains the regularizer on the lifted fields and writes the checkpoint,
/// the regularized fields and the per-epoch loss log.
pub fn stage_regularize(config: &RunConfig) -> Result<StageReport> {
    timed("regularize", || {
        let scene = read_scene(&config.scene_path())?;
        let lifted_dir = config.lifted_dir();
        let lifted = read_fields(&lifted_dir)?;
        check_scene_size(&scene, &lifted, &lifted_dir)?;
        let out = train(&scene, &lifted, &config.train)?;
        let fields: Vec<SemanticField> = lifted
            .iter()
            .map(|f| regularize_field(out.regularizer.model_for(f.granularity), &scene, f))
            .collect();
        let dir = config.regularized_dir();
        write_fields(&dir, &fields)?;
        io::write_checkpoint(&dir.join("regularizer.nrgm"), &out.regularizer)?;
        let mut log = String::new();
        for e in &out.log {
            log.push_str(&serde_json::to_string(e).expect("serializable log entry"));
            log.push('\n');
        }
        io::write_atomic(&dir.join("loss_log.jsonl"), log.as_bytes())?;
        let final_loss = out.log.last().map_or(0.0, |e| e.loss);
        Ok(vec![("final_loss".into(), final_loss)])
    })
}

fn config_echo(config: &RunConfig, source: &Path) -> Vec<(String, String)> {
    let t = &config.train;
    let s = &config.synth;
    vec![
        ("fields".into(), source.display().to_string()),
        ("seed".into(), s.seed.to_string()),
        ("noise_rate".into(), s.noise_rate.to_string()),
        ("noise_mode".into(), format!("{:?}", s.noise_mode)),
        ("weighting".into(), format!("{:?}", t.weighting_mode).to_lowercase()),
        ("granularity_mode".into(), format!("{:?}", t.granularity_mode).to_lowercase()),
        ("gamma".into(), t.gamma.to_string()),
        ("lambda_cos".into(), t.lambda_cos.to_string()),
        ("epochs".into(), t.epochs.to_string()),
    ]
}

fn write_rasters(dir: &Path, views: &[Camera], scene: &GaussianScene, fields: &[SemanticField], truth: &GroundTruth) -> Result<()> {
    create_dir(dir)?;
    for cam in views {
        let splats = Splats::build(scene, cam);
        for f in fields {
            let g = f.granularity;
            let fmap = render_feature_map_from(&splats, cam.view_id, f);
            let queries = class_queries(truth, g);
            let (w, h) = (fmap.width, fmap.height);
            let mut seg = vec![[0u8; 3]; w * h];
            for (p, px) in seg.iter_mut().enumerate() {
                let feat = &fmap.data[p * fmap.dim..(p + 1) * fmap.dim];
                if let Some(l) = crate::eval::classify(feat, &queries) {
                    *px = label_color(l);
                }
            }
            io::write_ppm(&dir.join(format!("v{:03}_g{}_seg.ppm", cam.view_id, g.value())), w, h, &seg)?;
            for q in &queries {
                let rel = relevance_from_map(&fmap, q);
                let gray: Vec<u8> = rel.values.iter().map(|&v| io::pnm::score_to_gray(v)).collect();
                let name = format!("v{:03}_g{}_q{:02}.pgm", cam.view_id, g.value(), q.label_id);
                io::write_pgm(&dir.join(name), w, h, &gray)?;
            }
        }
    }
    Ok(())
}

/// Distinct, deterministic color per label.
fn label_color(l: u32) -> [u8; 3] {
    let h = (l.wrapping_mul(0x9e37_79b9) >> 8) as u32;
    [(h & 0xff) as u8 | 0x20, ((h >> 8) & 0xff) as u8 | 0x20, ((h >> 16) & 0xff) as u8 | 0x20]
}

/// Scores the regularized and raw lifted fields on the held-out
/// (odd-indexed) views.
pub fn stage_eval(config: &RunConfig) -> Result<StageReport> {
    timed("eval", || {
        let scene = read_scene(&config.scene_path())?;
        let cams = io::read_cameras(&config.cameras_path())?;
        let truth = io::read_truth(&config.truth_path())?;
        if truth.labels.len() != scene.len() {
            return Err(Error::Shape(format!(
                "ground truth has {} rows, scene has {} Gaussians",
                truth.labels.len(),
                scene.len()
            )));
        }
        let (_, eval_cams) = split_views(&cams);
        let views = EvalViews::new(&scene, &truth, &eval_cams);
        let lifted_dir = config.lifted_dir();
        let lifted = read_fields(&lifted_dir)?;
        check_scene_size(&scene, &lifted, &lifted_dir)?;
        let support: Vec<&[bool]> = lifted.iter().map(|f| f.valid.as_slice()).collect();

        let out_dir = config.out.join("eval");
        create_dir(&out_dir)?;
        let mut raw = evaluate(&lifted, &truth, &views, Some(&support));
        raw.config = config_echo(config, &lifted_dir);
        io::write_atomic(&out_dir.join("report_raw.txt"), raw.to_text().as_bytes())?;

        let reg_dir = config.regularized_dir();
        let regularized = read_fields(&reg_dir)?;
        check_scene_size(&scene, &regularized, &reg_dir)?;
        let mut report: EvalReport = evaluate(&regularized, &truth, &views, Some(&support));
        report.config = config_echo(config, &reg_dir);
        io::write_atomic(&out_dir.join("report.txt"), report.to_text().as_bytes())?;
        if config.rasters {
            write_rasters(&out_dir.join("rasters"), &eval_cams, &scene, &regularized, &truth)?;
        }
        Ok(vec![
            ("miou".into(), report.miou()),
            ("miou_2d".into(), report.miou_2d()),
            ("macc".into(), report.macc()),
            ("mean_cosine".into(), report.mean_cosine()),
            ("raw_miou".into(), raw.miou()),
            ("raw_macc".into(), raw.macc()),
            ("raw_mean_cosine".into(), raw.mean_cosine()),
        ])
    })
}

/// Generates a scene in memory and trains the three grid configurations on
/// the same lifted fields.
pub fn stage_ablate(config: &RunConfig) -> Result<StageReport> {
    timed("ablate", || {
        let cfg = &config.synth;
        let (scene, truth, cams) = generate_scene(cfg)?;
        let (lift_cams, eval_cams) = split_views(&cams);
        let obs = observations_all(&scene, &lift_cams);
        let mut lifted = Vec::with_capacity(3);
        for g in Granularity::ALL {
            let maps = corrupt_maps(&label_coverage(&scene, &truth, &lift_cams, g), &truth, cfg);
            lifted.push(lift_observed(scene.len(), &obs, &maps, g)?);
        }
        let views = EvalViews::new(&scene, &truth, &eval_cams);
        let report = ablation_grid(&scene, &lifted, &truth, &views, &config.train)?;
        let dir = config.out.join("ablation");
        create_dir(&dir)?;
        io::write_atomic(&dir.join("report.txt"), report.to_text().as_bytes())?;
        let mut metrics = Vec::new();
        for e in std::iter::once(&report.baseline).chain(&report.rows) {
            metrics.push((format!("{}.miou", e.name), e.miou));
            metrics.push((format!("{}.macc", e.name), e.macc));
        }
        Ok(metrics)
    })
}

/// synth → lift → regularize → eval through the run directory.
pub fn run_pipeline(config: &RunConfig) -> Result<Vec<StageReport>> {
    Ok(vec![
        stage_synth(config)?,
        stage_lift(config)?,
        stage_regularize(config)?,
        stage_eval(config)?,
    ])
}

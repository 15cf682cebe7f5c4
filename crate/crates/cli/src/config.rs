//! Flat run configuration read from TOML, with `key=value` overrides.

use std::path::{Path, PathBuf};

use gotjepa::jepa::{CorruptionMode, JepaConfig};
use gotjepa::metrics::TrackLossWeights;
use gotjepa::occusolver::{OccuLambdas, PointTrackerTraining, Stage2Config};
use gotjepa::runtime::RuntimeConfig;
use gotjepa::train::{BenchmarkSpec, ExperimentConfig, TrackTrainConfig};
use gotjepa::{Error, Profile, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Every key is optional in the file; missing keys take these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `small` (126 px, 9×9 grid, 32 channels) or `standard` (252 px, 18×18, 64).
    pub profile: String,
    /// Root seed; every random stream of a command derives from it.
    pub seed: u64,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,

    pub teacher_steps: usize,
    pub teacher_batch: usize,
    pub teacher_lr: f64,
    pub point_steps: usize,
    pub point_batch: usize,
    pub point_lr: f64,

    pub alpha: f64,
    pub beta: f64,
    pub rho_max: f64,
    /// `copy_paste` or `mask`.
    pub corruption: CorruptionMode,
    pub jepa_steps: usize,
    pub jepa_batch: usize,
    pub lr_student: f64,
    pub lr_proj: f64,
    pub held_out_windows: usize,

    pub head_steps: usize,
    pub head_batch: usize,
    pub head_lr: f64,
    pub loss_cls_weight: f64,
    pub loss_reg_weight: f64,

    pub stage2_steps: usize,
    pub stage2_batch: usize,
    pub stage2_lr: f64,
    pub lambda_cgot: f64,
    pub lambda_cpt: f64,
    pub lambda_rgot: f64,
    pub lambda_rpt: f64,
    pub vis_weight: f64,

    /// Query points per window.
    pub points: usize,
    pub iterations: usize,
    pub frame_step: usize,
    pub visibility_init: f64,
    pub confidence: f64,
    pub occluded_below: f64,
    pub resample_after: usize,

    /// Centre-distance threshold of Pr, in pixels.
    pub precision_px: f64,
    pub bench_standard: usize,
    pub bench_occlusion: usize,
    pub vis_eval_windows: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            profile: "small".into(),
            seed: 0,
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
            teacher_steps: e.teacher.steps,
            teacher_batch: e.teacher.batch,
            teacher_lr: e.teacher.lr,
            point_steps: e.point_tracker.steps,
            point_batch: e.point_tracker.batch,
            point_lr: e.point_tracker.lr,
            alpha: e.jepa.alpha,
            beta: e.jepa.beta,
            rho_max: e.jepa.rho_max,
            corruption: e.jepa.corruption,
            jepa_steps: e.jepa.steps,
            jepa_batch: e.jepa.batch,
            lr_student: e.jepa.lr_student,
            lr_proj: e.jepa.lr_proj,
            held_out_windows: e.jepa.held_out,
            head_steps: e.head.steps,
            head_batch: e.head.batch,
            head_lr: e.head.lr,
            loss_cls_weight: e.head.weights.cls,
            loss_reg_weight: e.head.weights.reg,
            stage2_steps: e.stage2.steps,
            stage2_batch: e.stage2.batch,
            stage2_lr: e.stage2.lr,
            lambda_cgot: e.stage2.lambdas.cgot,
            lambda_cpt: e.stage2.lambdas.cpt,
            lambda_rgot: e.stage2.lambdas.rgot,
            lambda_rpt: e.stage2.lambdas.rpt,
            vis_weight: e.stage2.vis_weight,
            points: e.runtime.points,
            iterations: e.runtime.iterations,
            frame_step: e.runtime.frame_step,
            visibility_init: e.runtime.visibility_init,
            confidence: e.runtime.confidence,
            occluded_below: e.runtime.occluded_below,
            resample_after: e.runtime.resample_after,
            precision_px: gotjepa::metrics::PRECISION_PX,
            bench_standard: e.benchmark.standard,
            bench_occlusion: e.benchmark.occlusion_heavy,
            vis_eval_windows: e.vis_eval_windows,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any) and applies `overrides`, each `key=value` with a TOML value.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| Error::Parse {
                    file: p.to_path_buf(),
                    detail: e.to_string(),
                })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_str(), "override must have the form key=value"))?;
            let k = k.trim();
            let v = v.trim();
            let value = format!("x = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("x"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            Error::Parse {
                file: path.map(Path::to_path_buf).unwrap_or_else(|| "<overrides>".into()),
                detail: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.profile()?.validate()?;
        let positive = [
            ("teacher_batch", self.teacher_batch),
            ("point_batch", self.point_batch),
            ("jepa_batch", self.jepa_batch),
            ("head_batch", self.head_batch),
            ("stage2_batch", self.stage2_batch),
            ("points", self.points),
            ("iterations", self.iterations),
            ("frame_step", self.frame_step),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::config(k, "must be positive"));
            }
        }
        if self.precision_px <= 0.0 {
            return Err(Error::config("precision_px", "must be positive"));
        }
        self.experiment()?.jepa.validate()?;
        self.runtime().validate()
    }

    pub fn profile(&self) -> Result<Profile> {
        Profile::by_name(&self.profile)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML echo.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn runtime(&self) -> RuntimeConfig {
        RuntimeConfig {
            frame_step: self.frame_step,
            visibility_init: self.visibility_init,
            confidence: self.confidence,
            occluded_below: self.occluded_below,
            points: self.points,
            iterations: self.iterations,
            resample_after: self.resample_after,
            seed: self.seed,
            ..RuntimeConfig::default()
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let weights = TrackLossWeights {
            cls: self.loss_cls_weight,
            reg: self.loss_reg_weight,
        };
        Ok(ExperimentConfig {
            profile: self.profile()?,
            teacher: TrackTrainConfig {
                steps: self.teacher_steps,
                batch: self.teacher_batch,
                lr: self.teacher_lr,
                weights: weights.clone(),
                ..d.teacher
            },
            point_tracker: PointTrackerTraining {
                steps: self.point_steps,
                batch: self.point_batch,
                lr: self.point_lr,
                points: self.points,
                iterations: self.iterations,
                ..d.point_tracker
            },
            jepa: JepaConfig {
                alpha: self.alpha,
                beta: self.beta,
                rho_max: self.rho_max,
                corruption: self.corruption,
                steps: self.jepa_steps,
                batch: self.jepa_batch,
                lr_student: self.lr_student,
                lr_proj: self.lr_proj,
                held_out: self.held_out_windows,
                ..d.jepa
            },
            head: TrackTrainConfig {
                steps: self.head_steps,
                batch: self.head_batch,
                lr: self.head_lr,
                weights,
                ..d.head
            },
            stage2: Stage2Config {
                steps: self.stage2_steps,
                batch: self.stage2_batch,
                lr: self.stage2_lr,
                lambdas: OccuLambdas {
                    cgot: self.lambda_cgot,
                    cpt: self.lambda_cpt,
                    rgot: self.lambda_rgot,
                    rpt: self.lambda_rpt,
                },
                vis_weight: self.vis_weight,
                points: self.points,
                iterations: self.iterations,
                ..d.stage2
            },
            runtime: self.runtime(),
            benchmark: BenchmarkSpec {
                standard: self.bench_standard,
                occlusion_heavy: self.bench_occlusion,
                seed: self.seed,
            },
            vis_eval_windows: self.vis_eval_windows,
        })
    }
}

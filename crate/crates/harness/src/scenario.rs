use crate::worldgen::{generate_scene, WorldGenConfig};
use crate::HarnessError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use visnav_core::diffusion::{
    load_checkpoint, make_schedule, AStarBackend, DdpmGenerator, GuidedReferenceGenerator, TrajectoryGenerator,
};
use visnav_core::planner::PlannerConfig;
use visnav_core::servo::FollowerConfig;
use visnav_core::sim::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Astar,
    DdpmReference,
    DdpmTrained,
}

impl std::str::FromStr for BackendKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "astar" => Ok(Self::Astar),
            "ddpm-reference" => Ok(Self::DdpmReference),
            "ddpm-trained" => Ok(Self::DdpmTrained),
            _ => Err(HarnessError::Config(format!("unknown backend {s:?}"))),
        }
    }
}

/// Where the world comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSource {
    /// JSON world file, relative to the scenario file.
    File(PathBuf),
    /// Random world drawn from the scenario seed.
    Generate(WorldGenConfig),
    Inline(Box<Scene>),
}

fn default_max_steps() -> usize {
    400
}
fn default_success_radius() -> f64 {
    0.3
}
fn default_plan_every() -> usize {
    2
}
fn default_dt() -> f64 {
    visnav_core::sim::DEFAULT_DT
}
fn default_diffusion_steps() -> usize {
    50
}
fn default_max_plan_failures() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub world: WorldSource,
    pub backend: BackendKind,
    /// Model file for `ddpm-trained`, relative to the scenario file.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Defaults depend on the camera when absent.
    #[serde(default)]
    pub follower: Option<FollowerConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Meters.
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
    /// Control steps between camera frames.
    #[serde(default = "default_plan_every")]
    pub plan_every: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_diffusion_steps")]
    pub diffusion_steps: usize,
    /// Consecutive failed planning frames that end a run.
    #[serde(default = "default_max_plan_failures")]
    pub max_plan_failures: usize,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn new(world: WorldSource, backend: BackendKind) -> Self {
        Self {
            world,
            backend,
            checkpoint: None,
            planner: PlannerConfig::default(),
            follower: None,
            seed: 0,
            max_steps: default_max_steps(),
            success_radius: default_success_radius(),
            plan_every: default_plan_every(),
            dt: default_dt(),
            diffusion_steps: default_diffusion_steps(),
            max_plan_failures: default_max_plan_failures(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut s: Scenario = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        s.validate()?;
        Ok(s)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.max_steps < 1 {
            return cfg("max_steps must be at least 1".into());
        }
        if self.plan_every < 1 {
            return cfg("plan_every must be at least 1".into());
        }
        if !(self.dt > 0.0) || !(self.success_radius > 0.0) {
            return cfg("dt and success_radius must be positive".into());
        }
        self.planner.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let WorldSource::File(p) = &self.world {
            if !self.resolve(p).exists() {
                return cfg(format!("world file {} not found", self.resolve(p).display()));
            }
        }
        if self.backend == BackendKind::DdpmTrained {
            match &self.checkpoint {
                None => return cfg("ddpm-trained needs a checkpoint".into()),
                Some(p) if !self.resolve(p).exists() => {
                    return cfg(format!("checkpoint {} not found", self.resolve(p).display()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// The world for this scenario's seed.
    pub fn scene(&self) -> Result<Scene, HarnessError> {
        match &self.world {
            WorldSource::File(p) => {
                Scene::load(&self.resolve(p)).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
            }
            WorldSource::Generate(g) => generate_scene(g, self.seed),
            WorldSource::Inline(s) => {
                s.world.validate()?;
                s.camera.validate()?;
                Ok((**s).clone())
            }
        }
    }

    pub fn generator(&self) -> Result<Box<dyn TrajectoryGenerator>, HarnessError> {
        let schedule = make_schedule(self.diffusion_steps, 1e-4, 0.02)?;
        Ok(match self.backend {
            BackendKind::Astar => Box::new(AStarBackend::default()),
            BackendKind::DdpmReference => Box::new(GuidedReferenceGenerator {
                astar: AStarBackend::default(),
                schedule,
            }),
            BackendKind::DdpmTrained => {
                let path = self
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("ddpm-trained needs a checkpoint".into()))?;
                let model = load_checkpoint(&self.resolve(path))
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                Box::new(DdpmGenerator {
                    predictor: model,
                    schedule,
                })
            }
        })
    }
}

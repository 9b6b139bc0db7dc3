//! Built-in experiments and the command implementations behind the CLI.
//!
//! Two experiments ship with the crate:
//!
//! * `sphere`: target motions are planned around a sphere; the loop then
//!   plans without the sphere and measures how often the hidden sphere is
//!   avoided anyway.
//! * `imitation`: demonstrator recordings (a synthetic set by default) are
//!   preprocessed into targets; the loop plans between the recordings' start
//!   and end poses and measures marker RMSE against held-out recordings.

use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{
    derive_seed, plan_queries, rescale_frames, run_loop, IterationArchive, IterationReport,
    LoopConfig, LoopSetup, Metric, Query,
};
use crate::collision::{Scene, Sphere, DEFAULT_LINK_RADIUS};
use crate::io::{
    prepare_output_dir, read_json, read_manifest, read_recording, read_robot_motion, write_json,
    write_recording, write_robot_motion, ManifestEntry, Recording, Split,
};
use crate::kinematics::{
    elbow_from_swivel, IkParams, JointState, KinematicChain, MarkerFrame,
};
use crate::motion::{
    direction_normalize_frames, prefix_representations, prefix_representations_frames,
    velocity_split_ranges, Label, LabeledDataset, LabeledEntry, Motion, MotionRepr,
};
use crate::nn::TrainConfig;
use crate::planner::{CostReport, Objective, PlannerConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Sphere,
    Imitation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Start configurations: sampled from a joint box, or listed explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Explicit { states: Vec<Vec<f64>> },
    Sampled {
        count: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

/// Hand goal positions evenly spaced from `a` to `b` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalLine {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub count: usize,
}

impl GoalLine {
    pub fn points(&self) -> Vec<Vector3<f64>> {
        let a = Vector3::from(self.a);
        let b = Vector3::from(self.b);
        if self.count == 1 {
            return vec![(a + b) * 0.5];
        }
        (0..self.count)
            .map(|i| a + (b - a) * (i as f64 / (self.count - 1) as f64))
            .collect()
    }
}

/// Parameters of the synthetic demonstration set.
///
/// Every recording is a rest phase, a reach and another rest phase. During
/// the reach the hand moves on a short path across the mean hand direction
/// while the elbow swings out around the shoulder-hand axis and back, so
/// the elbow path is curved even though the start and end swivel agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train: usize,
    pub test: usize,
    /// Demonstrator segment lengths (meters).
    pub upper: f64,
    pub fore: f64,
    /// Shoulder-hand distance at the start and end, as a fraction of
    /// `upper + fore`.
    pub reach_start: f64,
    pub reach_end: f64,
    /// Angle between the hand direction and the mean hand direction at the
    /// start and end of the reach (radians).
    pub tilt: f64,
    /// Peak swivel excursion (radians) and its per-recording jitter.
    pub swivel_amplitude: f64,
    pub swivel_jitter: f64,
    /// Range of the swivel at rest (radians).
    pub swivel_base: [f64; 2],
    pub reach_frames: usize,
    pub rest_frames: usize,
    pub dt: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train: 24,
            test: 12,
            upper: 0.36,
            fore: 0.30,
            reach_start: 0.80,
            reach_end: 0.66,
            tilt: 0.08,
            swivel_amplitude: 0.9,
            swivel_jitter: 0.15,
            swivel_base: [-0.4, 0.4],
            reach_frames: 40,
            rest_frames: 10,
            dt: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImitationSpec {
    /// Dataset manifest; `None` uses the synthetic set written by
    /// `gen-targets`.
    pub manifest: Option<PathBuf>,
    /// Hand speed threshold for splitting recordings (m/s).
    pub tau_v: f64,
    pub synthetic: SyntheticSpec,
}

impl Default for ImitationSpec {
    fn default() -> Self {
        Self {
            manifest: None,
            tau_v: crate::motion::DEFAULT_TAU_V,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Chain description file; `None` uses the built-in 7-DOF arm.
    pub chain: Option<PathBuf>,
    pub sphere: SphereSpec,
    pub link_radius: f64,
    pub starts: StartSpec,
    pub goal_line: GoalLine,
    /// IK solutions (swivel samples) requested per goal position.
    pub goal_swivels: usize,
    pub planner: PlannerConfig,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub imitation: ImitationSpec,
    pub output: Option<PathBuf>,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Sphere,
            chain: None,
            sphere: SphereSpec {
                center: [0.105, 0.0, 0.343],
                radius: 0.15,
            },
            link_radius: DEFAULT_LINK_RADIUS,
            starts: StartSpec::Sampled {
                count: 10,
                lower: vec![-0.4, -0.6, -0.9, -0.2, -0.5, -0.5, -0.5],
                upper: vec![1.2, 0.3, 0.5, 1.6, 0.5, 0.5, 0.5],
            },
            goal_line: GoalLine {
                a: [0.40, -0.16, 0.22],
                b: [0.40, 0.16, 0.22],
                count: 21,
            },
            goal_swivels: 8,
            planner: PlannerConfig {
                budget: 3000,
                ..PlannerConfig::default()
            },
            // The target sets here are a few hundred motions, far fewer
            // Adam steps per epoch than the network needs at 10 epochs.
            loop_config: LoopConfig {
                train: TrainConfig {
                    epochs: 60,
                    ..TrainConfig::default()
                },
                ..LoopConfig::default()
            },
            imitation: ImitationSpec::default(),
            output: None,
            seed: 0,
            jobs: None,
        }
    }
}

pub const PRESETS: [&str; 3] = ["sphere", "desk", "imitation"];

/// Deep-merges `patch` into `base`; objects merge key by key, anything else
/// replaces.
fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        match name {
            "sphere" => {}
            "desk" => {
                cfg.starts = StartSpec::Sampled {
                    count: 5,
                    lower: vec![-0.4, -0.6, -0.9, -0.2, -0.5, -0.5, -0.5],
                    upper: vec![1.2, 0.3, 0.5, 1.6, 0.5, 0.5, 0.5],
                };
                cfg.goal_line.count = 11;
                cfg.planner.budget = 2000;
                cfg.loop_config.iterations = 3;
            }
            "imitation" => {
                cfg.kind = ExperimentKind::Imitation;
                cfg.planner.budget = 1500;
                cfg.loop_config.iterations = 3;
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    /// Loads a JSON config on top of a preset (default `sphere`).
    pub fn load(path: Option<&Path>, preset: Option<&str>) -> Result<Self> {
        let base = Self::preset(preset.unwrap_or("sphere"))?;
        let Some(path) = path else {
            return Ok(base);
        };
        let patch: serde_json::Value = read_json(path)?;
        let mut value = serde_json::to_value(&base).expect("config serializes");
        merge_json(&mut value, patch);
        let mut cfg: Self = serde_json::from_value(value).map_err(|e| Error::json(path, e))?;
        // Relative paths inside the file are relative to the file.
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.chain, &mut cfg.imitation.manifest, &mut cfg.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.goal_line.count == 0 {
            return Err(Error::InvalidConfig("goal_line.count must be >= 1".into()));
        }
        if self.goal_swivels == 0 {
            return Err(Error::InvalidConfig("goal_swivels must be >= 1".into()));
        }
        if self.sphere.radius < 0.0 {
            return Err(Error::InvalidConfig("sphere radius must be >= 0".into()));
        }
        if let Some(c) = &self.chain {
            if !c.is_file() {
                return Err(Error::Missing(format!("chain file {} does not exist", c.display())));
            }
        }
        if let Some(m) = &self.imitation.manifest {
            if !m.is_file() {
                return Err(Error::Missing(format!("manifest {} does not exist", m.display())));
            }
        }
        match &self.starts {
            StartSpec::Explicit { states } if states.is_empty() => {
                return Err(Error::InvalidConfig("no start states".into()))
            }
            StartSpec::Sampled { count: 0, .. } => {
                return Err(Error::InvalidConfig("starts.count must be >= 1".into()))
            }
            _ => {}
        }
        let s = &self.imitation.synthetic;
        if self.kind == ExperimentKind::Imitation && self.imitation.manifest.is_none() {
            if s.train == 0 || s.test == 0 {
                return Err(Error::InvalidConfig(
                    "synthetic train and test counts must be >= 1".into(),
                ));
            }
            if s.reach_frames < 2 || !(s.dt > 0.0) {
                return Err(Error::InvalidConfig("synthetic reach_frames/dt invalid".into()));
            }
        }
        self.planner.validate()?;
        self.loop_config.validate()
    }

    pub fn chain(&self) -> Result<KinematicChain> {
        match &self.chain {
            Some(p) => KinematicChain::from_json_file(p),
            None => Ok(KinematicChain::default_arm()),
        }
    }

    /// Scene containing the sphere (empty for radius 0).
    pub fn sphere_scene(&self) -> Result<Scene> {
        let spheres = if self.sphere.radius > 0.0 {
            vec![Sphere {
                center: self.sphere.center,
                radius: self.sphere.radius,
            }]
        } else {
            Vec::new()
        };
        Scene::new(spheres, self.link_radius)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// The config as stored in `run.json`: no output location, so runs in
    /// different directories freeze identically.
    pub fn frozen(&self) -> Self {
        Self {
            output: None,
            ..self.clone()
        }
    }
}

const SALT_STARTS: u64 = 0x5354_5254;
const SALT_GOALS: u64 = 0x474f_414c;
const SALT_TARGETS: u64 = 0x5441_5247;
const SALT_DEMOS: u64 = 0x4445_4d4f;
const SALT_IK: u64 = 0x494b_494b;

/// Start states for the sphere experiment, skipping samples in collision.
pub fn sphere_starts(cfg: &ExperimentConfig, chain: &KinematicChain) -> Result<Vec<JointState>> {
    let scene = cfg.sphere_scene()?;
    match &cfg.starts {
        StartSpec::Explicit { states } => {
            let mut out = Vec::new();
            for (i, s) in states.iter().enumerate() {
                let q = chain.state(s.clone())?;
                if scene.markers_in_collision(&chain.markers_unchecked(&q)) {
                    return Err(Error::InCollision(format!("start {i}")));
                }
                out.push(q);
            }
            Ok(out)
        }
        StartSpec::Sampled {
            count,
            lower,
            upper,
        } => {
            chain.check_dim(lower)?;
            chain.check_dim(upper)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 0, SALT_STARTS));
            let mut out = Vec::new();
            let mut attempts = 0;
            while out.len() < *count {
                attempts += 1;
                if attempts > 1000 * count {
                    return Err(Error::InvalidConfig(
                        "could not sample collision-free starts in the start box".into(),
                    ));
                }
                let q: Vec<f64> = lower
                    .iter()
                    .zip(upper)
                    .map(|(l, h)| if h > l { rng.random_range(*l..*h) } else { *l })
                    .collect();
                let q = chain.state(q)?;
                if !scene.markers_in_collision(&chain.markers_unchecked(&q)) {
                    out.push(q);
                }
            }
            Ok(out)
        }
    }
}

/// Planning queries of the sphere experiment: every start paired with the IK
/// solutions of every goal position. Goal states are kept even when they
/// touch the sphere; the planner drops those while the sphere is present.
pub fn sphere_queries(cfg: &ExperimentConfig, chain: &KinematicChain) -> Result<Vec<Query>> {
    let starts = sphere_starts(cfg, chain)?;
    let scene = cfg.sphere_scene()?;
    let mut goal_sets = Vec::new();
    for (j, p) in cfg.goal_line.points().iter().enumerate() {
        let goals = chain.sample_goal_states(
            p,
            cfg.goal_swivels,
            derive_seed(cfg.seed, 0, j, SALT_GOALS),
        );
        if goals.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "goal {j} at ({}, {}, {}) has no IK solution",
                p.x, p.y, p.z
            )));
        }
        if goals
            .iter()
            .all(|g| scene.markers_in_collision(&chain.markers_unchecked(g)))
        {
            return Err(Error::InCollision(format!("every IK solution of goal {j}")));
        }
        goal_sets.push(goals);
    }
    let mut out = Vec::new();
    for (i, s) in starts.iter().enumerate() {
        for (j, goals) in goal_sets.iter().enumerate() {
            out.push(Query {
                id: format!("s{i:02}_g{j:02}"),
                start: s.clone(),
                goals: goals.clone(),
            });
        }
    }
    Ok(out)
}

/// Synthetic demonstrator recordings with their split tags.
pub fn synthetic_recordings(spec: &SyntheticSpec, seed: u64) -> Vec<(Recording, Split)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0, SALT_DEMOS));
    let total = spec.upper + spec.fore;
    let mut out = Vec::new();
    for k in 0..spec.train + spec.test {
        let split = if k < spec.train { Split::Train } else { Split::Test };
        // Random pose of the recording in the world, plus a shoulder offset.
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let world = Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis + Vector3::new(1e-3, 0.0, 0.0)),
            angle,
        );
        let offset = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(0.8..1.6),
        );
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        let base = rng.random_range(spec.swivel_base[0]..=spec.swivel_base[1]);
        let amplitude = spec.swivel_amplitude
            + rng.random_range(-spec.swivel_jitter..=spec.swivel_jitter);
        let reach0 = spec.reach_start + rng.random_range(-0.03..=0.03);
        let reach1 = spec.reach_end + rng.random_range(-0.03..=0.03);

        let dir_local = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
        let local_frame = |s: f64| -> MarkerFrame {
            let theta = spec.tilt * (2.0 * s - 1.0);
            let reach = total * (reach0 + (reach1 - reach0) * s);
            let hand = (dir_local * theta.sin() + Vector3::z() * theta.cos()) * reach;
            let swivel = base + amplitude * (std::f64::consts::PI * s).sin();
            let elbow = elbow_from_swivel(&Vector3::zeros(), &hand, spec.upper, spec.fore, swivel)
                .expect("synthetic reach within the arm's workspace");
            MarkerFrame {
                shoulder: Vector3::zeros(),
                elbow,
                hand,
            }
        };
        let to_world = |f: MarkerFrame| MarkerFrame {
            shoulder: world * f.shoulder + offset,
            elbow: world * f.elbow + offset,
            hand: world * f.hand + offset,
        };
        let mut frames = Vec::new();
        for _ in 0..spec.rest_frames {
            frames.push(to_world(local_frame(0.0)));
        }
        for i in 0..spec.reach_frames {
            frames.push(to_world(local_frame(i as f64 / (spec.reach_frames - 1) as f64)));
        }
        for _ in 0..spec.rest_frames {
            frames.push(to_world(local_frame(1.0)));
        }
        let times = (0..frames.len()).map(|i| i as f64 * spec.dt).collect();
        out.push((Recording { times, frames }, split));
    }
    out
}

/// A recording segment after splitting, normalization and rescaling to the
/// robot's arm.
#[derive(Clone, Debug)]
pub struct Demonstration {
    pub id: String,
    pub split: Split,
    pub frames: Vec<MarkerFrame>,
}

/// Splits by hand speed, rotates the mean hand direction onto +Z, moves the
/// shoulder to the origin and rescales to the given segment lengths.
pub fn preprocess_recording(
    id: &str,
    rec: &Recording,
    split: Split,
    tau_v: f64,
    upper: f64,
    fore: f64,
) -> Result<Vec<Demonstration>> {
    let dt = rec.sample_period();
    if !(dt > 0.0) {
        return Err(Error::MalformedInput(format!("recording {id} has no time step")));
    }
    let mut out = Vec::new();
    for (n, range) in velocity_split_ranges(&rec.frames, tau_v, dt)
        .into_iter()
        .enumerate()
    {
        let normalized = direction_normalize_frames(&rec.frames[range])?;
        let base = normalized[0].shoulder;
        let centered: Vec<MarkerFrame> = normalized
            .iter()
            .map(|f| MarkerFrame {
                shoulder: f.shoulder - base,
                elbow: f.elbow - base,
                hand: f.hand - base,
            })
            .collect();
        out.push(Demonstration {
            id: format!("{id}_{n}"),
            split,
            frames: rescale_frames(&centered, upper, fore)?,
        });
    }
    Ok(out)
}

/// Start and goal states reproducing a demonstration's first and last
/// frames (hand position and swivel). The goal is solved from the start so
/// both lie on the same IK branch.
pub fn demonstration_query(
    chain: &KinematicChain,
    demo: &Demonstration,
    seed: u64,
) -> Result<Query> {
    let first = demo.frames[0];
    let last = *demo.frames.last().expect("non-empty demonstration");
    let (Some(sw0), Some(sw1)) = (first.swivel(), last.swivel()) else {
        return Err(Error::MalformedInput(format!(
            "demonstration {} has an undefined swivel at an endpoint",
            demo.id
        )));
    };
    let params = IkParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = chain.lower_limits();
    let hi = chain.upper_limits();
    for _ in 0..16 {
        let ik_seed: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| rng.random_range(0.25 * l..=0.25 * h))
            .collect();
        let Ok(start) = chain.inverse_kinematics(&first.hand, sw0, &ik_seed, &params) else {
            continue;
        };
        if let Ok(goal) = chain.inverse_kinematics(&last.hand, sw1, &start, &params) {
            return Ok(Query {
                id: demo.id.clone(),
                start,
                goals: vec![goal],
            });
        }
    }
    Err(Error::InvalidConfig(format!(
        "no IK solution for the endpoints of demonstration {}",
        demo.id
    )))
}

/// Loads and preprocesses every recording listed in a manifest.
pub fn load_demonstrations(
    manifest: &Path,
    tau_v: f64,
    chain: &KinematicChain,
) -> Result<Vec<Demonstration>> {
    let (upper, fore) = chain.segment_lengths();
    let mut out = Vec::new();
    for entry in read_manifest(manifest)? {
        let rec = read_recording(&entry.path)?;
        let id = entry
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "recording".into());
        out.extend(preprocess_recording(&id, &rec, entry.split, tau_v, upper, fore)?);
    }
    Ok(out)
}

/// Two families of constant-direction motions that a single linear threshold
/// separates: real motions point their forearm along +Z, generated ones
/// along +X, each with a small random tilt.
pub fn toy_dataset(per_class: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = LabeledDataset::new();
    for k in 0..2 * per_class {
        let label = if k % 2 == 0 { Label::Real } else { Label::Generated };
        let mut jitter = || {
            Vector3::new(
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
            )
        };
        let upper = (Vector3::new(0.0, 0.0, 1.0) + jitter()).normalize();
        let fore = match label {
            Label::Real => Vector3::new(0.0, 0.0, 1.0),
            Label::Generated => Vector3::new(1.0, 0.0, 0.0),
        };
        let fore = (fore + jitter()).normalize();
        let mut m = MotionRepr::zeros();
        for row in m.0.iter_mut() {
            row[..3].copy_from_slice(upper.as_slice());
            row[3..].copy_from_slice(fore.as_slice());
        }
        ds.push(m, label);
    }
    ds
}

/// Sidecar written next to every motion CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSidecar {
    pub query: String,
    pub report: CostReport,
}

fn write_motions(dir: &Path, motions: &[(String, Option<crate::planner::PlanResult>)]) -> Result<()> {
    for (id, r) in motions {
        if let Some(r) = r {
            write_robot_motion(&dir.join(format!("{id}.csv")), &r.motion)?;
            write_json(
                &dir.join(format!("{id}.json")),
                &MotionSidecar {
                    query: id.clone(),
                    report: r.report.clone(),
                },
            )?;
        }
    }
    Ok(())
}

pub fn targets_dir(out: &Path) -> PathBuf {
    out.join("targets")
}

pub fn run_dir(out: &Path) -> PathBuf {
    out.join("run")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub queries: usize,
    pub planned: usize,
    pub failed: Vec<String>,
}

/// Generates the target set: planned sphere-avoiding motions (sphere) or the
/// synthetic demonstration recordings plus manifest (imitation).
pub fn cmd_gen_targets(cfg: &ExperimentConfig, force: bool) -> Result<TargetSummary> {
    cfg.validate()?;
    let chain = cfg.chain()?;
    let dir = targets_dir(&cfg.output_dir());
    match cfg.kind {
        ExperimentKind::Sphere => {
            let queries = sphere_queries(cfg, &chain)?;
            prepare_output_dir(&dir, force)?;
            write_json(&dir.join("queries.json"), &queries)?;
            let seeds: Vec<u64> = (0..queries.len())
                .map(|i| derive_seed(cfg.seed, 0, i, SALT_TARGETS))
                .collect();
            log::info!("planning {} target motions around the sphere", queries.len());
            let results = plan_queries(
                &chain,
                &cfg.sphere_scene()?,
                &cfg.planner,
                &queries,
                Objective::LengthOnly,
                &seeds,
                cfg.jobs,
            );
            let motions: Vec<_> = queries.iter().map(|q| q.id.clone()).zip(results).collect();
            write_motions(&dir.join("motions"), &motions)?;
            let summary = TargetSummary {
                queries: queries.len(),
                planned: motions.iter().filter(|(_, r)| r.is_some()).count(),
                failed: motions
                    .iter()
                    .filter(|(_, r)| r.is_none())
                    .map(|(id, _)| id.clone())
                    .collect(),
            };
            write_json(&dir.join("summary.json"), &summary)?;
            if summary.planned == 0 {
                return Err(Error::PlanningFailed("no target motion could be planned".into()));
            }
            Ok(summary)
        }
        ExperimentKind::Imitation => {
            if let Some(m) = &cfg.imitation.manifest {
                return Err(Error::InvalidConfig(format!(
                    "imitation.manifest is set ({}); targets come from that dataset",
                    m.display()
                )));
            }
            prepare_output_dir(&dir, force)?;
            let recs = synthetic_recordings(&cfg.imitation.synthetic, cfg.seed);
            let mut manifest = Vec::new();
            for (k, (rec, split)) in recs.iter().enumerate() {
                let name = format!("demo_{k:03}.csv");
                write_recording(&dir.join("demos").join(&name), rec)?;
                manifest.push(ManifestEntry {
                    path: PathBuf::from("demos").join(name),
                    split: *split,
                });
            }
            write_json(&dir.join("manifest.json"), &manifest)?;
            Ok(TargetSummary {
                queries: recs.len(),
                planned: recs.len(),
                failed: Vec::new(),
            })
        }
    }
}

fn load_sphere_targets(
    chain: &KinematicChain,
    dir: &Path,
    fractions: &[f64],
) -> Result<(Vec<Query>, LabeledDataset)> {
    let queries: Vec<Query> = read_json(&dir.join("queries.json"))?;
    let mut real = LabeledDataset::new();
    for q in &queries {
        let path = dir.join("motions").join(format!("{}.csv", q.id));
        if !path.is_file() {
            continue;
        }
        let motion = read_robot_motion(&path)?;
        for repr in prefix_representations(chain, &Motion::Robot(motion), fractions)? {
            real.entries.push(LabeledEntry {
                repr,
                label: Label::Real,
                iteration: None,
                query: Some(q.id.clone()),
            });
        }
    }
    if real.is_empty() {
        return Err(Error::Missing(format!(
            "no target motions in {}; run gen-targets first",
            dir.display()
        )));
    }
    Ok((queries, real))
}

/// Everything `cmd_loop` needs, resolved from the config and the targets.
pub struct PreparedLoop {
    pub chain: KinematicChain,
    pub queries: Vec<Query>,
    pub eval_queries: Option<Vec<Query>>,
    pub metric: Metric,
    pub real: LabeledDataset,
}

pub fn prepare_loop(cfg: &ExperimentConfig) -> Result<PreparedLoop> {
    cfg.validate()?;
    let chain = cfg.chain()?;
    let fractions = &cfg.loop_config.prefix_fractions;
    match cfg.kind {
        ExperimentKind::Sphere => {
            let (queries, real) =
                load_sphere_targets(&chain, &targets_dir(&cfg.output_dir()), fractions)?;
            Ok(PreparedLoop {
                chain,
                queries,
                eval_queries: None,
                metric: Metric::SuccessRate {
                    hidden_scene: cfg.sphere_scene()?,
                    resolution: cfg.planner.resolution,
                },
                real,
            })
        }
        ExperimentKind::Imitation => {
            let manifest = cfg
                .imitation
                .manifest
                .clone()
                .unwrap_or_else(|| targets_dir(&cfg.output_dir()).join("manifest.json"));
            if !manifest.is_file() {
                return Err(Error::Missing(format!(
                    "manifest {} does not exist; run gen-targets first",
                    manifest.display()
                )));
            }
            let demos = load_demonstrations(&manifest, cfg.imitation.tau_v, &chain)?;
            let mut real = LabeledDataset::new();
            let mut queries = Vec::new();
            let mut eval_queries = Vec::new();
            let mut references = Vec::new();
            for (k, d) in demos.iter().enumerate() {
                let query = match demonstration_query(
                    &chain,
                    d,
                    derive_seed(cfg.seed, 0, k, SALT_IK),
                ) {
                    Ok(q) => q,
                    Err(e) => {
                        log::warn!("skipping demonstration {}: {e}", d.id);
                        continue;
                    }
                };
                match d.split {
                    Split::Train => {
                        for repr in prefix_representations_frames(&d.frames, fractions)? {
                            real.entries.push(LabeledEntry {
                                repr,
                                label: Label::Real,
                                iteration: None,
                                query: Some(d.id.clone()),
                            });
                        }
                        queries.push(query);
                    }
                    Split::Test => {
                        eval_queries.push(query);
                        references.push(d.frames.clone());
                    }
                }
            }
            if queries.is_empty() || eval_queries.is_empty() {
                return Err(Error::InvalidConfig(
                    "imitation needs usable train and test demonstrations".into(),
                ));
            }
            Ok(PreparedLoop {
                chain,
                queries,
                eval_queries: Some(eval_queries),
                metric: Metric::Rmse { references },
                real,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub config: ExperimentConfig,
}

/// Runs the alternating loop and writes the run directory:
/// `iter_<k>/motions/*.csv`, `iter_<k>/model.idsc`, `iter_<k>/report.json`,
/// `report.json` (all iterations) and `run.json` (frozen config).
pub fn cmd_loop(cfg: &ExperimentConfig, force: bool) -> Result<Vec<IterationReport>> {
    let prepared = prepare_loop(cfg)?;
    let dir = run_dir(&cfg.output_dir());
    prepare_output_dir(&dir, force)?;
    write_json(
        &dir.join("run.json"),
        &RunRecord {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.frozen(),
        },
    )?;
    let setup = LoopSetup {
        chain: &prepared.chain,
        scene: Scene {
            spheres: Vec::new(),
            link_radius: cfg.link_radius,
        },
        planner: cfg.planner.clone(),
        queries: prepared.queries,
        eval_queries: prepared.eval_queries,
        metric: prepared.metric,
        jobs: cfg.jobs,
    };
    let loop_cfg = LoopConfig {
        rng_seed: cfg.seed,
        ..cfg.loop_config.clone()
    };
    let write_iteration = |report: &IterationReport, archive: &IterationArchive| -> Result<()> {
        let it = dir.join(format!("iter_{}", report.iteration));
        write_motions(&it.join("motions"), &archive.motions)?;
        write_motions(&it.join("eval_motions"), &archive.eval_motions)?;
        if let Some(model) = &archive.model {
            model.save(&it.join("model.idsc"))?;
        }
        write_json(&it.join("report.json"), report)
    };
    let out = run_loop(&setup, &prepared.real, &loop_cfg, write_iteration)?;
    write_json(&dir.join("report.json"), &out.reports)?;
    Ok(out.reports)
}

/// Recomputes the experiment metric from the motions stored in a run
/// directory.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<EvalRow>> {
    let prepared = prepare_loop(cfg)?;
    let dir = run_dir(&cfg.output_dir());
    let mut rows = Vec::new();
    for k in 0.. {
        let it = dir.join(format!("iter_{k}"));
        if !it.is_dir() {
            break;
        }
        let (queries, sub) = match &prepared.eval_queries {
            Some(q) => (q, "eval_motions"),
            None => (&prepared.queries, "motions"),
        };
        let mut motions = Vec::new();
        for q in queries {
            let p = it.join(sub).join(format!("{}.csv", q.id));
            motions.push(if p.is_file() {
                Some(read_robot_motion(&p)?)
            } else {
                None
            });
        }
        let mut row = EvalRow {
            iteration: k,
            planned: motions.iter().filter(|m| m.is_some()).count(),
            total: motions.len(),
            success_rate: None,
            elbow_rmse: None,
            hand_rmse: None,
        };
        match &prepared.metric {
            Metric::SuccessRate {
                hidden_scene,
                resolution,
            } => {
                let ok: Vec<Vec<JointState>> = motions.iter().flatten().cloned().collect();
                if !ok.is_empty() {
                    let rate = crate::adversarial::evaluate_success_rate(
                        &prepared.chain,
                        &ok,
                        hidden_scene,
                        *resolution,
                    )?;
                    row.success_rate = Some(rate * ok.len() as f64 / motions.len() as f64);
                }
            }
            Metric::Rmse { references } => {
                let mut planned = Vec::new();
                let mut refs = Vec::new();
                for (m, r) in motions.iter().zip(references) {
                    if let Some(m) = m {
                        planned.push(Motion::Robot(m.clone()).marker_frames(&prepared.chain)?);
                        refs.push(r.clone());
                    }
                }
                if !planned.is_empty() {
                    let (e, h) = crate::adversarial::evaluate_rmse(&planned, &refs)?;
                    row.elbow_rmse = Some(e);
                    row.hand_rmse = Some(h);
                }
            }
            Metric::None => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Missing(format!("no iterations in {}", dir.display())));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub planned: usize,
    pub total: usize,
    pub success_rate: Option<f64>,
    pub elbow_rmse: Option<f64>,
    pub hand_rmse: Option<f64>,
}

/// Loads the final states (or full motions) stored for one iteration.
pub fn load_iteration_motions(run: &Path, iteration: usize) -> Result<Vec<(String, Vec<JointState>)>> {
    let dir = run.join(format!("iter_{iteration}")).join("motions");
    if !dir.is_dir() {
        return Err(Error::Missing(format!(
            "iteration {iteration} not found in {}",
            run.display()
        )));
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((id, read_robot_motion(&p)?))
        })
        .collect()
}

//! The alternating generate/train loop and its evaluation metrics.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{motion_in_collision, Scene};
use crate::kinematics::{JointState, KinematicChain, MarkerFrame};
use crate::motion::{
    prefix_representations, resample_frames, Label, LabeledDataset, LabeledEntry, Motion,
    MotionRepr, DEFAULT_PREFIX_FRACTIONS, REPR_STEPS,
};
use crate::nn::{Architecture, Discriminator, TrainConfig};
use crate::planner::{plan, Objective, PlanResult, PlannerConfig, PlanningProblem};
use crate::{Error, Result};

/// One start with its admissible goal states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub start: JointState,
    pub goals: Vec<JointState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub iterations: usize,
    pub accumulate_generated: bool,
    pub per_iteration_cap: usize,
    pub train: TrainConfig,
    pub prefix_fractions: Vec<f64>,
    pub rng_seed: u64,
    /// Fraction of the labeled set held out from training for accuracy.
    pub held_out_fraction: f64,
    /// Plan once more with the last discriminator after the final training.
    pub final_evaluation: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            accumulate_generated: true,
            per_iteration_cap: 5000,
            train: TrainConfig::default(),
            prefix_fractions: DEFAULT_PREFIX_FRACTIONS.to_vec(),
            rng_seed: 0,
            held_out_fraction: 0.2,
            final_evaluation: true,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return Err(Error::InvalidConfig("held_out_fraction must be in [0, 1)".into()));
        }
        self.train.validate()
    }
}

/// How each generation is scored.
#[derive(Clone, Debug, Default)]
pub enum Metric {
    #[default]
    None,
    /// Plans are checked against an obstacle the planner never saw.
    SuccessRate { hidden_scene: Scene, resolution: f64 },
    /// Plans for the evaluation queries are compared to reference marker
    /// paths, paired by index, already expressed at the robot's arm scale.
    Rmse { references: Vec<Vec<MarkerFrame>> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// "naive" or "adversarial".
    pub objective: String,
    pub planned: usize,
    pub failed: usize,
    pub real_entries: usize,
    pub generated_entries: usize,
    pub train_accuracy: Option<f64>,
    pub held_out_accuracy: Option<f64>,
    pub loss_trace: Vec<f64>,
    /// Mean discriminator score of the final generated motions.
    pub mean_final_score: Option<f64>,
    pub success_rate: Option<f64>,
    pub elbow_rmse: Option<f64>,
    pub hand_rmse: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Everything produced by one generation.
#[derive(Clone, Debug)]
pub struct IterationArchive {
    pub iteration: usize,
    /// Generation queries, in input order; `None` where planning failed.
    pub motions: Vec<(String, Option<PlanResult>)>,
    /// Evaluation-query plans when they differ from the generation queries.
    pub eval_motions: Vec<(String, Option<PlanResult>)>,
    /// Generated entries of this generation.
    pub entries: Vec<LabeledEntry>,
    /// Discriminator trained on this generation; absent for the final
    /// evaluation pass.
    pub model: Option<Discriminator>,
}

pub struct LoopOutput {
    pub reports: Vec<IterationReport>,
    pub archives: Vec<IterationArchive>,
    pub discriminator: Discriminator,
}

/// Planning side of the loop: chain, scene and queries.
pub struct LoopSetup<'a> {
    pub chain: &'a KinematicChain,
    /// Scene used while planning (the hidden obstacle is not in it).
    pub scene: Scene,
    pub planner: PlannerConfig,
    pub queries: Vec<Query>,
    /// Separate queries for the metric; `None` reuses `queries`.
    pub eval_queries: Option<Vec<Query>>,
    pub metric: Metric,
    /// Caps concurrent planning queries; `None` uses the global pool.
    pub jobs: Option<usize>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-purpose seed.
pub fn derive_seed(base: u64, iteration: usize, index: usize, salt: u64) -> u64 {
    splitmix(splitmix(splitmix(base ^ salt).wrapping_add(iteration as u64)).wrapping_add(index as u64))
}

const SALT_PLAN: u64 = 0x504c_414e;
const SALT_EVAL: u64 = 0x4556_414c;
const SALT_TRAIN: u64 = 0x5452_4149;
const SALT_SPLIT: u64 = 0x5350_4c54;

/// Plans every query, concurrently, returning results in input order.
pub fn plan_queries(
    chain: &KinematicChain,
    scene: &Scene,
    planner: &PlannerConfig,
    queries: &[Query],
    objective: Objective<'_>,
    seeds: &[u64],
    jobs: Option<usize>,
) -> Vec<Option<PlanResult>> {
    let run = || {
        queries
            .par_iter()
            .zip(seeds)
            .map(|(q, seed)| {
                let problem = PlanningProblem {
                    start: q.start.clone(),
                    goals: q.goals.clone(),
                    scene: scene.clone(),
                    objective,
                    rng_seed: *seed,
                };
                match plan(chain, &problem, planner) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        log::warn!("query {}: {e}", q.id);
                        None
                    }
                }
            })
            .collect()
    };
    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                log::warn!("could not build a {n}-thread pool ({e}); using the global pool");
                run()
            }
        },
        None => run(),
    }
}

/// Fraction of motions that stay clear of `hidden_scene`.
pub fn evaluate_success_rate(
    chain: &KinematicChain,
    motions: &[Vec<JointState>],
    hidden_scene: &Scene,
    resolution: f64,
) -> Result<f64> {
    if motions.is_empty() {
        return Err(Error::InvalidConfig("no motions to evaluate".into()));
    }
    let mut ok = 0usize;
    for m in motions {
        if !motion_in_collision(chain, m, hidden_scene, resolution)? {
            ok += 1;
        }
    }
    Ok(ok as f64 / motions.len() as f64)
}

/// Elbow and hand position RMSE (meters) over all pairs and all resampled
/// timesteps. Both lists are resampled to the representation length by hand
/// arc length before comparison.
pub fn evaluate_rmse(
    planned: &[Vec<MarkerFrame>],
    reference: &[Vec<MarkerFrame>],
) -> Result<(f64, f64)> {
    if planned.len() != reference.len() {
        return Err(Error::LengthMismatch(planned.len(), reference.len()));
    }
    if planned.is_empty() {
        return Err(Error::InvalidConfig("no motions to evaluate".into()));
    }
    let mut se_elbow = 0.0;
    let mut se_hand = 0.0;
    for (p, r) in planned.iter().zip(reference) {
        let p = resample_frames(p, REPR_STEPS)?;
        let r = resample_frames(r, REPR_STEPS)?;
        for (a, b) in p.iter().zip(&r) {
            se_elbow += (a.elbow - b.elbow).norm_squared();
            se_hand += (a.hand - b.hand).norm_squared();
        }
    }
    let n = (planned.len() * REPR_STEPS) as f64;
    Ok(((se_elbow / n).sqrt(), (se_hand / n).sqrt()))
}

/// Rebuilds marker positions with the given segment lengths, keeping each
/// frame's shoulder and segment directions.
pub fn rescale_frames(frames: &[MarkerFrame], upper: f64, fore: f64) -> Result<Vec<MarkerFrame>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let u = f.elbow - f.shoulder;
            let v = f.hand - f.elbow;
            let (nu, nv) = (u.norm(), v.norm());
            if nu < 1e-12 || nv < 1e-12 {
                return Err(Error::ZeroLengthSegment(i));
            }
            let elbow = f.shoulder + u * (upper / nu);
            Ok(MarkerFrame {
                shoulder: f.shoulder,
                elbow,
                hand: elbow + v * (fore / nv),
            })
        })
        .collect()
}

fn generated_entries(
    chain: &KinematicChain,
    motions: &[(String, Option<PlanResult>)],
    fractions: &[f64],
    iteration: usize,
) -> Result<Vec<LabeledEntry>> {
    let mut out = Vec::new();
    for (id, r) in motions {
        let Some(r) = r else { continue };
        for repr in prefix_representations(chain, &Motion::Robot(r.motion.clone()), fractions)? {
            out.push(LabeledEntry {
                repr,
                label: Label::Generated,
                iteration: Some(iteration),
                query: Some(id.clone()),
            });
        }
    }
    Ok(out)
}

fn split_indices(n: usize, held_out_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64) * held_out_fraction).round() as usize;
    let held = held.min(n.saturating_sub(2));
    let (h, t) = idx.split_at(held);
    let (mut h, mut t) = (h.to_vec(), t.to_vec());
    h.sort_unstable();
    t.sort_unstable();
    (t, h)
}

/// Fits a fresh discriminator on `dataset`. Returns the model, the loss trace,
/// train accuracy and held-out accuracy (if anything was held out).
pub fn train_discriminator(
    dataset: &LabeledDataset,
    train: &TrainConfig,
    held_out_fraction: f64,
    seed: u64,
) -> Result<(Discriminator, Vec<f64>, f64, Option<f64>)> {
    let (train_idx, held_idx) = split_indices(dataset.len(), held_out_fraction, seed ^ SALT_SPLIT);
    let mut train_set = dataset.subset(&train_idx);
    if !train_set.has_both_labels() {
        // Tiny sets can lose a class to the split; train on everything then.
        train_set = dataset.clone();
    }
    let held_set = dataset.subset(&held_idx);
    let mut d = Discriminator::new_random(Architecture::default(), seed)?;
    let cfg = TrainConfig {
        rng_seed: seed,
        ..train.clone()
    };
    let trace = d.train(&train_set, &cfg)?;
    let train_acc = d.accuracy(&train_set)?;
    let held_acc = if held_set.is_empty() {
        None
    } else {
        Some(d.accuracy(&held_set)?)
    };
    Ok((d, trace, train_acc, held_acc))
}

fn final_frames(chain: &KinematicChain, r: &PlanResult) -> Result<Vec<MarkerFrame>> {
    Motion::Robot(r.motion.clone()).marker_frames(chain)
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

impl LoopSetup<'_> {
    fn validate(&self) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::InvalidConfig("no planning queries".into()));
        }
        for q in self.queries.iter().chain(self.eval_queries.iter().flatten()) {
            self.chain.check_dim(&q.start)?;
            if q.goals.is_empty() {
                return Err(Error::InvalidConfig(format!("query {} has no goals", q.id)));
            }
            for g in &q.goals {
                self.chain.check_dim(g)?;
            }
        }
        if let Metric::Rmse { references } = &self.metric {
            let n = self.eval_queries.as_ref().unwrap_or(&self.queries).len();
            if references.len() != n {
                return Err(Error::LengthMismatch(references.len(), n));
            }
        }
        self.planner.validate()
    }

    fn apply_metric(
        &self,
        report: &mut IterationReport,
        results: &[(String, Option<PlanResult>)],
    ) -> Result<()> {
        match &self.metric {
            Metric::None => {}
            Metric::SuccessRate {
                hidden_scene,
                resolution,
            } => {
                // Failed plans count as failures.
                let motions: Vec<Vec<JointState>> = results
                    .iter()
                    .filter_map(|(_, r)| r.as_ref().map(|r| r.motion.clone()))
                    .collect();
                if !motions.is_empty() {
                    let rate =
                        evaluate_success_rate(self.chain, &motions, hidden_scene, *resolution)?;
                    report.success_rate =
                        Some(rate * motions.len() as f64 / results.len() as f64);
                } else {
                    report.success_rate = Some(0.0);
                }
            }
            Metric::Rmse { references } => {
                let mut planned = Vec::new();
                let mut refs = Vec::new();
                for ((_, r), reference) in results.iter().zip(references) {
                    if let Some(r) = r {
                        planned.push(final_frames(self.chain, r)?);
                        refs.push(reference.clone());
                    }
                }
                if !planned.is_empty() {
                    let (e, h) = evaluate_rmse(&planned, &refs)?;
                    report.elbow_rmse = Some(e);
                    report.hand_rmse = Some(h);
                }
            }
        }
        Ok(())
    }

    fn generate(
        &self,
        iteration: usize,
        objective: Objective<'_>,
        base_seed: u64,
    ) -> (Vec<(String, Option<PlanResult>)>, Vec<(String, Option<PlanResult>)>) {
        let seeds: Vec<u64> = (0..self.queries.len())
            .map(|i| derive_seed(base_seed, iteration, i, SALT_PLAN))
            .collect();
        let plans = plan_queries(
            self.chain,
            &self.scene,
            &self.planner,
            &self.queries,
            objective,
            &seeds,
            self.jobs,
        );
        let motions: Vec<_> = self
            .queries
            .iter()
            .map(|q| q.id.clone())
            .zip(plans)
            .collect();
        let eval = match &self.eval_queries {
            None => Vec::new(),
            Some(eq) => {
                let seeds: Vec<u64> = (0..eq.len())
                    .map(|i| derive_seed(base_seed, iteration, i, SALT_EVAL))
                    .collect();
                let plans = plan_queries(
                    self.chain,
                    &self.scene,
                    &self.planner,
                    eq,
                    objective,
                    &seeds,
                    self.jobs,
                );
                eq.iter().map(|q| q.id.clone()).zip(plans).collect()
            }
        };
        (motions, eval)
    }
}

/// Runs the alternating loop. Iteration 0 plans with path length only; each
/// later iteration plans against the previous discriminator. Every iteration
/// trains a new discriminator from scratch on the real entries plus the
/// generated pool. With `final_evaluation`, one more generation is planned
/// with the last discriminator, giving `iterations + 1` reports.
pub fn run_loop(
    setup: &LoopSetup<'_>,
    real: &LabeledDataset,
    config: &LoopConfig,
    mut on_iteration: impl FnMut(&IterationReport, &IterationArchive) -> Result<()>,
) -> Result<LoopOutput> {
    config.validate()?;
    setup.validate()?;
    if real.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut real_entries: Vec<LabeledEntry> = real.entries.clone();
    for e in &mut real_entries {
        e.label = Label::Real;
    }

    let mut pool: VecDeque<LabeledEntry> = VecDeque::new();
    let mut reports = Vec::new();
    let mut archives = Vec::new();
    let mut current: Option<Discriminator> = None;
    let passes = config.iterations + usize::from(config.final_evaluation);

    for k in 0..passes {
        let t0 = Instant::now();
        let training = k < config.iterations;
        let objective = match &current {
            None => Objective::LengthOnly,
            Some(d) => Objective::Adversarial {
                scorer: d,
                lambda: setup.planner.lambda,
            },
        };
        log::info!(
            "iteration {k}: planning {} queries ({})",
            setup.queries.len(),
            if current.is_some() { "adversarial" } else { "naive" }
        );
        let (motions, eval_motions) = setup.generate(k, objective, config.rng_seed);
        let planned = motions.iter().filter(|(_, r)| r.is_some()).count();
        if planned == 0 {
            return Err(Error::PlanningFailed(format!(
                "every query failed in iteration {k}"
            )));
        }
        let mut report = IterationReport {
            iteration: k,
            objective: if current.is_some() { "adversarial" } else { "naive" }.into(),
            planned,
            failed: motions.len() - planned,
            ..IterationReport::default()
        };
        if current.is_some() {
            report.mean_final_score = mean(
                &motions
                    .iter()
                    .filter_map(|(_, r)| r.as_ref().and_then(|r| r.report.final_score))
                    .collect::<Vec<_>>(),
            );
        }
        let metric_source = if setup.eval_queries.is_some() {
            &eval_motions
        } else {
            &motions
        };
        setup.apply_metric(&mut report, metric_source)?;

        let entries = generated_entries(setup.chain, &motions, &config.prefix_fractions, k)?;
        let mut model = None;
        if training {
            if config.accumulate_generated {
                pool.extend(entries.iter().cloned());
                while pool.len() > config.per_iteration_cap {
                    pool.pop_front();
                }
            } else {
                pool = entries.iter().cloned().collect();
            }
            let mut dataset = LabeledDataset {
                entries: real_entries.iter().cloned().chain(pool.iter().cloned()).collect(),
            };
            let dropped = dataset.remove_label_conflicts();
            if dropped > 0 {
                log::info!("iteration {k}: dropped {dropped} generated entries equal to real ones");
            }
            report.real_entries = dataset.count(Label::Real);
            report.generated_entries = dataset.count(Label::Generated);
            let seed = derive_seed(config.rng_seed, k, 0, SALT_TRAIN);
            let (d, trace, train_acc, held_acc) =
                train_discriminator(&dataset, &config.train, config.held_out_fraction, seed)?;
            report.loss_trace = trace;
            report.train_accuracy = Some(train_acc);
            report.held_out_accuracy = held_acc;
            model = Some(d);
        }
        report.wall_time_s = t0.elapsed().as_secs_f64();
        log::info!(
            "iteration {k}: planned {}/{} success={:?} elbow_rmse={:?} hand_rmse={:?} held_out_acc={:?} ({:.1} s)",
            report.planned,
            report.planned + report.failed,
            report.success_rate,
            report.elbow_rmse,
            report.hand_rmse,
            report.held_out_accuracy,
            report.wall_time_s
        );
        let archive = IterationArchive {
            iteration: k,
            motions,
            eval_motions,
            entries,
            model: model.clone(),
        };
        on_iteration(&report, &archive)?;
        if let Some(d) = model {
            current = Some(d);
        }
        reports.push(report);
        archives.push(archive);
    }
    Ok(LoopOutput {
        reports,
        archives,
        discriminator: current.expect("at least one training iteration"),
    })
}

/// Encodes the replay of an archived motion, for integrity checks.
pub fn replay_prefixes(
    chain: &KinematicChain,
    motion: &[JointState],
    fractions: &[f64],
) -> Result<Vec<MotionRepr>> {
    prefix_representations(chain, &Motion::Robot(motion.to_vec()), fractions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn frames(offset: f64, n: usize) -> Vec<MarkerFrame> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                MarkerFrame {
                    shoulder: Vector3::new(offset, 0.0, 0.0),
                    elbow: Vector3::new(offset + 0.1 * t, 0.2, 0.1),
                    hand: Vector3::new(offset + 0.3 * t, 0.1 * t, 0.4),
                }
            })
            .collect()
    }

    #[test]
    fn rmse_identity_and_shift() {
        let a = vec![frames(0.0, 7), frames(0.0, 12)];
        assert_eq!(evaluate_rmse(&a, &a).unwrap(), (0.0, 0.0));
        let b = vec![frames(0.1, 7), frames(0.1, 12)];
        let (e, h) = evaluate_rmse(&a, &b).unwrap();
        assert!((e - 0.1).abs() < 1e-12 && (h - 0.1).abs() < 1e-12);
        assert!(matches!(
            evaluate_rmse(&a, &b[..1]),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn success_rate_trivial_cases() {
        let chain = KinematicChain::default_arm();
        let m = vec![vec![JointState(vec![0.0; 7]), JointState(vec![0.1; 7])]; 3];
        assert_eq!(evaluate_success_rate(&chain, &m, &Scene::empty(), 0.05).unwrap(), 1.0);
        assert!(evaluate_success_rate(&chain, &[], &Scene::empty(), 0.05).is_err());
    }

    #[test]
    fn rescale_keeps_directions() {
        let f = frames(0.2, 5);
        let r = rescale_frames(&f, 0.3, 0.25).unwrap();
        for (a, b) in f.iter().zip(&r) {
            assert!(((b.elbow - b.shoulder).norm() - 0.3).abs() < 1e-12);
            assert!(((b.hand - b.elbow).norm() - 0.25).abs() < 1e-12);
            let da = (a.hand - a.elbow).normalize();
            let db = (b.hand - b.elbow).normalize();
            assert!((da - db).norm() < 1e-12);
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (t1, h1) = split_indices(50, 0.2, 3);
        let (t2, h2) = split_indices(50, 0.2, 3);
        assert_eq!((t1.clone(), h1.clone()), (t2, h2));
        assert_eq!(h1.len(), 10);
        assert!(h1.iter().all(|i| !t1.contains(i)));
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = LoopConfig {
            iterations: 0,
            ..LoopConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

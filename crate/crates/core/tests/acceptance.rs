//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use advplan::adversarial::{train_discriminator, IterationReport};
use advplan::collision::{state_in_collision, Scene, Sphere};
use advplan::experiment::{cmd_gen_targets, cmd_loop, toy_dataset, ExperimentConfig};
use advplan::kinematics::{joint_distance, JointState, KinematicChain, MarkerFrame, RevoluteJoint};
use advplan::motion::{
    direction_normalize, encode, mean_hand_direction, prefix_representations, Motion,
};
use advplan::nn::{Discriminator, LossMode, TrainConfig};
use advplan::planner::{
    plan, Objective, PlannerConfig, PlanningProblem, RewireMode, RrtStar, Tree,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_state(chain: &KinematicChain, rng: &mut ChaCha8Rng) -> JointState {
    JointState(
        chain
            .lower_limits()
            .iter()
            .zip(chain.upper_limits())
            .map(|(l, h)| rng.random_range(*l..h))
            .collect(),
    )
}

fn near_state(chain: &KinematicChain, q: &JointState, step: f64, rng: &mut ChaCha8Rng) -> JointState {
    let lo = chain.lower_limits();
    let hi = chain.upper_limits();
    JointState(
        q.iter()
            .enumerate()
            .map(|(i, v)| (v + rng.random_range(-step..step)).clamp(lo[i], hi[i]))
            .collect(),
    )
}

fn telescoping_violation(tree: &Tree) -> (usize, f64) {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for n in tree.nodes().iter().filter(|n| n.is_connected()) {
        worst = worst.max((n.cost_to_come + n.cached_score).abs());
        checked += 1;
    }
    (checked, worst)
}

/// Random trees, half grown by hand with random reparenting and half by the
/// planner itself.
fn criterion_1() -> Outcome {
    let chain = KinematicChain::default_arm();
    let mut worst: f64 = 0.0;
    let mut nodes = 0;
    let mut reparents = 0;
    for seed in 0..100u64 {
        let d = Discriminator::default_random(seed);
        let objective = Objective::Adversarial {
            scorer: &d,
            lambda: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if seed < 50 {
            let root = random_state(&chain, &mut rng);
            let mut tree = Tree::new(&chain, root, objective, RewireMode::Full, usize::MAX).unwrap();
            for _ in 0..40 {
                let parent = rng.random_range(0..tree.len());
                let q = near_state(&chain, &tree.node(parent).state, 0.3, &mut rng);
                tree.add_node(parent, q).unwrap();
            }
            for _ in 0..20 {
                let node = rng.random_range(1..tree.len());
                let parent = rng.random_range(0..tree.len());
                if parent != node && !tree.is_ancestor(node, parent) {
                    tree.reparent(node, parent).unwrap();
                    reparents += 1;
                }
            }
            let (n, w) = telescoping_violation(&tree);
            nodes += n;
            worst = worst.max(w);
        } else {
            let start = random_state(&chain, &mut rng);
            let goal = near_state(&chain, &start, 0.6, &mut rng);
            let problem = PlanningProblem {
                start,
                goals: vec![goal],
                scene: Scene::empty(),
                objective,
                rng_seed: seed,
            };
            let config = PlannerConfig {
                lambda: 0.0,
                budget: 80,
                ..PlannerConfig::default()
            };
            let mut rrt = RrtStar::new(&chain, &problem, &config).unwrap();
            for _ in 0..400 {
                if rrt.tree().len() >= config.budget {
                    break;
                }
                rrt.step();
            }
            let (n, w) = telescoping_violation(rrt.tree());
            nodes += n;
            worst = worst.max(w);
        }
    }
    outcome(
        worst <= 1e-9,
        format!("100 trees, {nodes} nodes, {reparents} manual reparents, max |cost + score| = {worst:.3e} (tol 1e-9)"),
    )
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in [0u64, 1, 2] {
        let d = Discriminator::default_random(seed);
        let data = toy_dataset(2, seed);
        for mode in [LossMode::Bce, LossMode::LogRatio] {
            worst = worst.max(d.gradient_check(&data, mode).unwrap());
        }
    }
    outcome(
        worst < 1e-5,
        format!("seeds 0,1,2, both losses: max relative error {worst:.3e} (tol 1e-5)"),
    )
}

fn criterion_3() -> Outcome {
    let data = toy_dataset(200, 11);
    let train = TrainConfig::default();
    let (_, _, train_acc, held) = train_discriminator(&data, &train, 0.2, 5).unwrap();
    let held = held.unwrap();
    outcome(
        held >= 0.95,
        format!(
            "{} epochs, lr {}: train accuracy {train_acc:.3}, held-out accuracy {held:.3} (min 0.95)",
            train.epochs, train.learning_rate
        ),
    )
}

fn run_experiment(preset: &str, seed: u64, out: &Path) -> Vec<IterationReport> {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.seed = seed;
    cfg.output = Some(out.to_path_buf());
    cmd_gen_targets(&cfg, true).unwrap();
    cmd_loop(&cfg, true).unwrap()
}

fn file_map(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Runs the desk preset for seeds 0..4; seed 0 is repeated for the
/// determinism check.
fn criteria_4_and_9(tmp: &Path) -> (Outcome, Outcome) {
    let mut naive = Vec::new();
    let mut last = Vec::new();
    for seed in 0..5u64 {
        let t = Instant::now();
        let reports = run_experiment("desk", seed, &tmp.join(format!("desk_{seed}")));
        let rates: Vec<f64> = reports.iter().map(|r| r.success_rate.unwrap()).collect();
        println!(
            "      desk seed {seed}: success per iteration {:?} ({:.0} s)",
            rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
            t.elapsed().as_secs_f64()
        );
        naive.push(rates[0]);
        last.push(rates[3]);
    }
    let n = naive.iter().sum::<f64>() / 5.0;
    let a = last.iter().sum::<f64>() / 5.0;
    let c4 = outcome(
        a >= 1.5 * n && a - n >= 0.10,
        format!("mean success naive {n:.3} -> iteration 3 {a:.3} (ratio {:.2}, min 1.5; gain {:+.3}, min +0.10)", a / n.max(1e-12), a - n),
    );

    run_experiment("desk", 0, &tmp.join("desk_0_again"));
    let first = file_map(&tmp.join("desk_0"));
    let second = file_map(&tmp.join("desk_0_again"));
    let differing: Vec<_> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let checkpoints = first.keys().filter(|k| k.extension().is_some_and(|e| e == "idsc")).count();
    let c9 = outcome(
        differing.is_empty() && checkpoints > 0,
        format!(
            "{} files compared ({checkpoints} checkpoints), {} differ{}",
            first.len(),
            differing.len(),
            differing.first().map(|p| format!(", first: {}", p.display())).unwrap_or_default()
        ),
    );
    (c4, c9)
}

fn criterion_5(tmp: &Path) -> Outcome {
    let reports = run_experiment("imitation", 0, &tmp.join("imitation"));
    let elbow: Vec<f64> = reports.iter().map(|r| r.elbow_rmse.unwrap()).collect();
    let hand: Vec<f64> = reports.iter().map(|r| r.hand_rmse.unwrap()).collect();
    let max_hand = hand.iter().copied().fold(0.0, f64::max);
    let pass = elbow[3] <= 0.9 * elbow[0] && max_hand <= 0.01;
    outcome(
        pass,
        format!(
            "elbow RMSE {:?} (iteration 3 must be <= {:.4}); hand RMSE max {max_hand:.4} m (max 0.01)",
            elbow.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            0.9 * elbow[0]
        ),
    )
}

fn criterion_6() -> Outcome {
    let joint = RevoluteJoint {
        axis: Vector3::z(),
        limits: [-3.0, 3.0],
    };
    let chain = KinematicChain::new(
        vec![joint.clone(), joint],
        vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)],
        [0, 1, 2],
    )
    .unwrap();
    let start = JointState(vec![-2.2, -1.0]);
    let goal = JointState(vec![2.0, 1.8]);
    let bound = joint_distance(&start, &goal);
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let problem = PlanningProblem {
            start: start.clone(),
            goals: vec![goal.clone()],
            scene: Scene::empty(),
            objective: Objective::LengthOnly,
            rng_seed: seed,
        };
        let config = PlannerConfig {
            budget: 5000,
            ..PlannerConfig::default()
        };
        let r = plan(&chain, &problem, &config).unwrap();
        ratios.push(r.report.cost / bound);
    }
    ratios.sort_by(f64::total_cmp);
    let median = 0.5 * (ratios[4] + ratios[5]);
    outcome(
        median <= 1.05,
        format!("median cost / straight-line bound = {median:.4} over 10 seeds (max 1.05)"),
    )
}

fn point_segment_distance_dense(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let len = (b - a).norm();
    let steps = ((len / 1e-3).ceil() as usize).max(1);
    (0..=steps)
        .map(|i| (a + (b - a) * (i as f64 / steps as f64) - p).norm())
        .fold(f64::INFINITY, f64::min)
}

fn criterion_7() -> Outcome {
    let chain = KinematicChain::default_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut agree, mut boundary, mut hits, mut disagree) = (0, 0, 0, 0);
    for _ in 0..1000 {
        let q = random_state(&chain, &mut rng);
        let f: MarkerFrame = chain.forward_kinematics(&q).unwrap();
        // Centers near the arm so that roughly half the queries hit.
        let along = rng.random_range(0.0..1.0);
        let anchor = if rng.random_bool(0.5) {
            f.shoulder + (f.elbow - f.shoulder) * along
        } else {
            f.elbow + (f.hand - f.elbow) * along
        };
        let offset = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * 0.2;
        let center = anchor + offset;
        let radius = rng.random_range(0.01..0.15);
        let link_radius = rng.random_range(0.0..0.05);
        let scene = Scene::new(
            vec![Sphere {
                center: [center.x, center.y, center.z],
                radius,
            }],
            link_radius,
        )
        .unwrap();
        let verdict = state_in_collision(&chain, &q, &scene).unwrap();
        let dense = point_segment_distance_dense(&f.shoulder, &f.elbow, &center)
            .min(point_segment_distance_dense(&f.elbow, &f.hand, &center));
        let oracle = dense <= radius + link_radius;
        hits += usize::from(oracle);
        if verdict == oracle {
            agree += 1;
        } else if (dense - (radius + link_radius)).abs() <= 1e-6 {
            boundary += 1;
        } else {
            disagree += 1;
        }
    }
    outcome(
        disagree == 0,
        format!("1000 queries ({hits} hits): {agree} agree, {boundary} boundary, {disagree} disagree"),
    )
}

fn random_walk(chain: &KinematicChain, n: usize, rng: &mut ChaCha8Rng) -> Vec<JointState> {
    let mut q = random_state(chain, rng);
    let mut out = vec![q.clone()];
    for _ in 1..n {
        q = near_state(chain, &q, 0.2, rng);
        out.push(q.clone());
    }
    out
}

fn criterion_8() -> Outcome {
    let chain = KinematicChain::default_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut norm_err, mut align_err, mut idem_err, mut scale_err): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    let mut prefix_exact = true;
    for _ in 0..50 {
        let n = rng.random_range(2..60);
        let robot = Motion::Robot(random_walk(&chain, n, &mut rng));
        let repr = encode(&chain, &robot).unwrap();
        for row in repr.rows() {
            for half in row.chunks(3) {
                let norm = (half[0] * half[0] + half[1] * half[1] + half[2] * half[2]).sqrt();
                norm_err = norm_err.max((norm - 1.0).abs());
            }
        }
        prefix_exact &= prefix_representations(&chain, &robot, &[1.0]).unwrap() == vec![repr];

        // A demonstrator motion with a displaced base.
        let base = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5);
        let frames: Vec<MarkerFrame> = robot
            .marker_frames(&chain)
            .unwrap()
            .iter()
            .map(|f| MarkerFrame {
                shoulder: f.shoulder + base,
                elbow: f.elbow + base,
                hand: f.hand + base,
            })
            .collect();
        let demo = Motion::Demonstrator(frames.clone());
        let Motion::Demonstrator(once) = direction_normalize(&demo).unwrap() else {
            unreachable!()
        };
        align_err = align_err.max((mean_hand_direction(&once).normalize() - Vector3::z()).norm());
        let Motion::Demonstrator(twice) =
            direction_normalize(&Motion::Demonstrator(once.clone())).unwrap()
        else {
            unreachable!()
        };
        for (a, b) in once.iter().zip(&twice) {
            idem_err = idem_err
                .max((a.shoulder - b.shoulder).norm())
                .max((a.elbow - b.elbow).norm())
                .max((a.hand - b.hand).norm());
        }

        let c = rng.random_range(0.2..5.0);
        let scaled: Vec<MarkerFrame> = frames
            .iter()
            .map(|f| {
                let elbow = f.shoulder + (f.elbow - f.shoulder) * c;
                MarkerFrame {
                    shoulder: f.shoulder,
                    elbow,
                    hand: elbow + (f.hand - f.elbow) * c,
                }
            })
            .collect();
        let a = encode(&chain, &demo).unwrap();
        let b = encode(&chain, &Motion::Demonstrator(scaled)).unwrap();
        for (ra, rb) in a.rows().iter().zip(b.rows()) {
            for (x, y) in ra.iter().zip(rb) {
                scale_err = scale_err.max((x - y).abs());
            }
        }
    }
    let pass = norm_err <= 1e-6 && align_err <= 1e-9 && idem_err <= 1e-9 && scale_err <= 1e-9 && prefix_exact;
    outcome(
        pass,
        format!(
            "50 motions: row norm err {norm_err:.1e} (1e-6), alignment err {align_err:.1e} (1e-9), \
             idempotence err {idem_err:.1e} (1e-9), scaling err {scale_err:.1e} (1e-9), \
             full prefix exact: {prefix_exact}"
        ),
    )
}

fn report(id: u32, name: &str, o: &Outcome, secs: f64) -> bool {
    println!(
        "{} criterion {id} ({name}): {} [{secs:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    o.pass
}

fn main() {
    // `cargo test` passes harness flags; a `--list` request expects no output.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // Optional criterion numbers select a subset, e.g. `-- 1 7`.
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |id: u32| only.is_empty() || only.contains(&id);
    let tmp = tempfile::tempdir().unwrap();
    let mut all = true;

    let cheap: [(u32, &str, fn() -> Outcome); 6] = [
        (1, "telescoping identity", criterion_1),
        (2, "gradient audit", criterion_2),
        (3, "discriminator competence", criterion_3),
        (6, "planner optimality", criterion_6),
        (7, "collision oracle", criterion_7),
        (8, "representation invariants", criterion_8),
    ];
    for (id, name, f) in cheap.into_iter().filter(|c| selected(c.0)) {
        let t = Instant::now();
        let o = f();
        all &= report(id, name, &o, t.elapsed().as_secs_f64());
    }

    if selected(5) {
        let t = Instant::now();
        let o = criterion_5(tmp.path());
        all &= report(5, "imitation trend", &o, t.elapsed().as_secs_f64());
    }

    if selected(4) || selected(9) {
        let t = Instant::now();
        let (c4, c9) = criteria_4_and_9(tmp.path());
        let secs = t.elapsed().as_secs_f64();
        all &= report(4, "sphere trend", &c4, secs);
        all &= report(9, "determinism", &c9, secs);
    }

    if !all {
        std::process::exit(1);
    }
}

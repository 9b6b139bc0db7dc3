use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use advplan::collision::{motion_in_collision, Scene, Sphere};
use advplan::kinematics::{joint_distance, JointState, KinematicChain};
use advplan::motion::{encode, Label, LabeledDataset, Motion, MotionRepr};
use advplan::nn::{Discriminator, TrainConfig};
use advplan::planner::{plan, Objective, PlannerConfig, PlanningProblem, RewireMode};

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Constant-direction motions: "real" ones keep the elbow above the
/// shoulder (upper-arm direction z >= 0.4), "generated" ones below it.
fn elbow_dataset(per_class: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = LabeledDataset::new();
    for k in 0..2 * per_class {
        let real = k % 2 == 0;
        let upper = loop {
            let u = unit(&mut rng);
            if (real && u.z >= 0.4) || (!real && u.z <= -0.1) {
                break u;
            }
        };
        let fore = unit(&mut rng);
        let mut m = MotionRepr::zeros();
        for row in m.0.iter_mut() {
            row[..3].copy_from_slice(upper.as_slice());
            row[3..].copy_from_slice(fore.as_slice());
        }
        ds.push(m, if real { Label::Real } else { Label::Generated });
    }
    ds
}

/// Random state whose upper arm points up to the side: z in roughly
/// [-0.05, 0.25], below the "real" family but above the "generated" one.
fn side_state(rng: &mut ChaCha8Rng) -> JointState {
    let mut q = vec![0.0; 7];
    q[0] = rng.random_range(-2.5..2.5);
    q[1] = rng.random_range(1.32..1.62);
    q[2] = rng.random_range(-0.2..0.2);
    q[3] = rng.random_range(0.2..1.8);
    for v in &mut q[4..] {
        *v = rng.random_range(-1.0..1.0);
    }
    JointState(q)
}

#[test]
fn elbow_high_discriminator_steers_the_planner() {
    let chain = KinematicChain::default_arm();
    let mut d = Discriminator::default_random(3);
    let train = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    d.train(&elbow_dataset(300, 1), &train).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let queries: Vec<(JointState, JointState)> =
        (0..10).map(|_| (side_state(&mut rng), side_state(&mut rng))).collect();
    // Count of plans scoring >= 0.8: naive, then adversarial with full and
    // frozen rewiring.
    let mut high = [0usize; 3];
    let mut mean = [0.0; 3];
    for (seed, (start, goal)) in queries.iter().enumerate() {
        for (slot, adversarial, mode) in [
            (0, false, RewireMode::Full),
            (1, true, RewireMode::Full),
            (2, true, RewireMode::Frozen),
        ] {
            let config = PlannerConfig {
                budget: 800,
                rewire_mode: mode,
                ..PlannerConfig::default()
            };
            let problem = PlanningProblem {
                start: start.clone(),
                goals: vec![goal.clone()],
                scene: Scene::empty(),
                objective: if adversarial {
                    Objective::Adversarial {
                        scorer: &d,
                        lambda: config.lambda,
                    }
                } else {
                    Objective::LengthOnly
                },
                rng_seed: seed as u64,
            };
            let r = plan(&chain, &problem, &config).unwrap();
            let score = d.score(&encode(&chain, &Motion::Robot(r.motion)).unwrap()).unwrap();
            if adversarial {
                assert!((r.report.final_score.unwrap() - score).abs() < 1e-12);
            }
            high[slot] += usize::from(score >= 0.8);
            mean[slot] += score / queries.len() as f64;
        }
    }
    let [naive, full, frozen] = high;
    let n = queries.len();
    assert!(full * 10 >= 8 * n, "full {full}/{n}, frozen {frozen}/{n}, naive {naive}/{n}");
    assert!(full > naive && frozen > naive, "full {full}, frozen {frozen}, naive {naive}");
    assert!(mean[1] > mean[0] && mean[2] > mean[0], "mean scores {mean:?}");
    println!("score >= 0.8: naive {naive}/{n}, full rewiring {full}/{n}, frozen rewiring {frozen}/{n}; mean scores {mean:.3?}");
}

#[test]
fn planned_motions_avoid_obstacles() {
    let chain = KinematicChain::default_arm();
    let start = JointState(vec![0.0, 1.2, 0.0, 0.4, 0.0, 0.0, 0.0]);
    let goal = JointState(vec![2.0, 1.2, 0.0, 0.4, 0.0, 0.0, 0.0]);
    // Sphere in the middle of the shoulder sweep.
    let mid = chain
        .forward_kinematics(&[1.0, 1.2, 0.0, 0.4, 0.0, 0.0, 0.0])
        .unwrap()
        .hand;
    let scene = Scene::new(
        vec![Sphere {
            center: [mid.x, mid.y, mid.z],
            radius: 0.08,
        }],
        0.03,
    )
    .unwrap();
    assert!(motion_in_collision(&chain, &[start.clone(), goal.clone()], &scene, 0.01).unwrap());
    let problem = PlanningProblem {
        start,
        goals: vec![goal],
        scene: scene.clone(),
        objective: Objective::LengthOnly,
        rng_seed: 4,
    };
    let config = PlannerConfig {
        budget: 1500,
        ..PlannerConfig::default()
    };
    let r = plan(&chain, &problem, &config).unwrap();
    assert!(!motion_in_collision(&chain, &r.motion, &scene, 0.01).unwrap());
}

fn limited_state(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, 7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Free-space plans start at the start, end at a goal, take bounded steps
    /// and report costs consistent with their objective.
    #[test]
    fn plan_shape(start in limited_state(-1.5, 1.5), delta in limited_state(-0.25, 0.25), seed in 0u64..1000, frozen in any::<bool>(), adversarial in any::<bool>()) {
        let goal: Vec<f64> = start.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let chain = KinematicChain::default_arm();
        let d = Discriminator::default_random(seed);
        let config = PlannerConfig {
            budget: 300,
            rewire_mode: if frozen { RewireMode::Frozen } else { RewireMode::Full },
            ..PlannerConfig::default()
        };
        let problem = PlanningProblem {
            start: JointState(start.clone()),
            goals: vec![JointState(goal.clone())],
            scene: Scene::empty(),
            objective: if adversarial {
                Objective::Adversarial { scorer: &d, lambda: config.lambda }
            } else {
                Objective::LengthOnly
            },
            rng_seed: seed,
        };
        let r = plan(&chain, &problem, &config).unwrap();
        prop_assert_eq!(&r.motion[0].0, &start);
        prop_assert_eq!(&r.motion.last().unwrap().0, &goal);
        for w in r.motion.windows(2) {
            // Rewired edges may span the whole neighbour radius.
            prop_assert!(joint_distance(&w[0], &w[1]) <= 4.0 * config.step_max + 1e-12);
        }
        let bound = joint_distance(&start, &goal);
        prop_assert!(r.report.length >= bound - 1e-9);
        if adversarial {
            let score = r.report.final_score.unwrap();
            prop_assert!(score > 0.0 && score < 1.0);
            // Frozen rewiring keeps stale edge costs, so the cost identity and
            // its bounds only hold for full rewiring.
            if !frozen {
                prop_assert!((r.report.cost - (config.lambda * r.report.length - score)).abs() < 1e-9);
                prop_assert!(r.report.cost >= -1.0 && r.report.cost <= config.lambda * r.report.length);
            }
        } else {
            prop_assert!((r.report.cost - r.report.length).abs() < 1e-9);
        }
        // Best cost never increases while the tree grows, except that full
        // rewiring re-scores subtrees and can raise a goal's cost.
        if !adversarial || frozen {
            prop_assert!(r.best_cost_trace.windows(2).all(|w| w[1].1 <= w[0].1));
        }
    }
}

//! Capsule-vs-sphere collision checks for the two arm segments.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointState, KinematicChain, MarkerFrame};
use crate::{Error, Result};

pub const DEFAULT_LINK_RADIUS: f64 = 0.03;
pub const DEFAULT_RESOLUTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Sphere {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }
}

/// Sphere obstacles plus the capsule radius used for every arm segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub spheres: Vec<Sphere>,
    #[serde(default = "default_link_radius")]
    pub link_radius: f64,
}

fn default_link_radius() -> f64 {
    DEFAULT_LINK_RADIUS
}

impl Default for Scene {
    fn default() -> Self {
        Self::empty()
    }
}

impl Scene {
    pub fn empty() -> Self {
        Self {
            spheres: Vec::new(),
            link_radius: DEFAULT_LINK_RADIUS,
        }
    }

    pub fn new(spheres: Vec<Sphere>, link_radius: f64) -> Result<Self> {
        let scene = Self {
            spheres,
            link_radius,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_radius < 0.0 || !self.link_radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "link radius {} must be >= 0",
                self.link_radius
            )));
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.radius > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "sphere {i} radius {} must be > 0",
                    s.radius
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }

    pub fn markers_in_collision(&self, m: &MarkerFrame) -> bool {
        self.spheres.iter().any(|s| {
            let c = s.center();
            let limit = s.radius + self.link_radius;
            segment_point_distance(&m.shoulder, &m.elbow, &c) <= limit
                || segment_point_distance(&m.elbow, &m.hand, &c) <= limit
        })
    }
}

/// Minimum distance between segment `a`-`b` and point `p`.
pub fn segment_point_distance(a: &Vector3<f64>, b: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm()
}

pub fn state_in_collision(chain: &KinematicChain, q: &[f64], scene: &Scene) -> Result<bool> {
    if scene.is_empty() {
        chain.check_dim(q)?;
        return Ok(false);
    }
    Ok(scene.markers_in_collision(&chain.forward_kinematics(q)?))
}

/// Checks the straight joint-space edge `a -> b`, including both ends, at
/// steps no longer than `resolution`.
pub fn edge_in_collision(
    chain: &KinematicChain,
    a: &[f64],
    b: &[f64],
    scene: &Scene,
    resolution: f64,
) -> bool {
    if scene.is_empty() {
        return false;
    }
    let dist = crate::kinematics::joint_distance(a, b);
    let steps = ((dist / resolution).ceil() as usize).max(1);
    let mut q = vec![0.0; a.len()];
    (0..=steps).any(|k| {
        let t = k as f64 / steps as f64;
        for ((v, x), y) in q.iter_mut().zip(a).zip(b) {
            *v = x + (y - x) * t;
        }
        scene.markers_in_collision(&chain.markers_unchecked(&q))
    })
}

pub fn motion_in_collision(
    chain: &KinematicChain,
    states: &[JointState],
    scene: &Scene,
    resolution: f64,
) -> Result<bool> {
    if states.len() < 2 {
        return Err(Error::MotionTooShort(states.len()));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidConfig(format!("resolution {resolution} must be > 0")));
    }
    for s in states {
        chain.check_dim(s)?;
    }
    Ok(states
        .windows(2)
        .any(|w| edge_in_collision(chain, &w[0], &w[1], scene, resolution)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_chain() -> KinematicChain {
        // Straight two-segment chain along +Z: (0,0,0) -> (0,0,1) -> (0,0,2).
        use crate::kinematics::RevoluteJoint;
        KinematicChain::new(
            vec![
                RevoluteJoint {
                    axis: Vector3::y(),
                    limits: [-3.0, 3.0],
                };
                2
            ],
            vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 1.0)],
            [0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn segment_through_center() {
        let scene = Scene::new(
            vec![Sphere {
                center: [0.0, 0.0, 1.0],
                radius: 0.2,
            }],
            0.0,
        )
        .unwrap();
        assert!(state_in_collision(&line_chain(), &[0.0, 0.0], &scene).unwrap());
    }

    #[test]
    fn far_sphere_never_hits_default_arm() {
        let chain = KinematicChain::default_arm();
        let scene = Scene::new(
            vec![Sphere {
                center: [5.0, 5.0, 5.0],
                radius: 0.1,
            }],
            DEFAULT_LINK_RADIUS,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q: Vec<f64> = (0..7).map(|_| rng.random_range(-2.8..2.8)).collect();
            assert!(!state_in_collision(&chain, &q, &scene).unwrap());
        }
    }

    #[test]
    fn interpolated_edge_clips_sphere() {
        // Swinging the planar line chain from -0.6 to +0.6 rad about Y sweeps
        // the segment through a sphere sitting on the zero pose.
        let chain = line_chain();
        let scene = Scene::new(
            vec![Sphere {
                center: [0.0, 0.0, 1.5],
                radius: 0.1,
            }],
            0.0,
        )
        .unwrap();
        let a = JointState::new(vec![-0.6, 0.0]);
        let b = JointState::new(vec![0.6, 0.0]);
        assert!(!state_in_collision(&chain, &a, &scene).unwrap());
        assert!(!state_in_collision(&chain, &b, &scene).unwrap());
        assert!(motion_in_collision(&chain, &[a.clone(), b.clone()], &scene, 0.01).unwrap());
        assert!(!motion_in_collision(&chain, &[a.clone(), b], &Scene::empty(), 0.01).unwrap());
        assert!(matches!(
            motion_in_collision(&chain, &[a], &scene, 0.01),
            Err(Error::MotionTooShort(1))
        ));
    }

    #[test]
    fn invalid_scene() {
        assert!(Scene::new(
            vec![Sphere {
                center: [0.0; 3],
                radius: 0.0
            }],
            0.0
        )
        .is_err());
        assert!(Scene::new(vec![], -0.1).is_err());
    }

    proptest! {
        #[test]
        fn distance_symmetric_in_endpoints(
            a in prop::array::uniform3(-2.0f64..2.0),
            b in prop::array::uniform3(-2.0f64..2.0),
            p in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let (a, b, p) = (Vector3::from(a), Vector3::from(b), Vector3::from(p));
            let d1 = segment_point_distance(&a, &b, &p);
            let d2 = segment_point_distance(&b, &a, &p);
            prop_assert!((d1 - d2).abs() < 1e-12);
        }

        #[test]
        fn shrinking_radius_is_monotone(
            q in prop::collection::vec(-2.8f64..2.8, 7),
            c in prop::array::uniform3(-0.5f64..0.5),
            r in 0.01f64..0.3,
            shrink in 0.0f64..1.0,
        ) {
            let chain = KinematicChain::default_arm();
            let big = Scene::new(vec![Sphere { center: c, radius: r }], 0.03).unwrap();
            let small = Scene::new(
                vec![Sphere { center: c, radius: r * (1.0 - shrink).max(1e-6) }],
                0.03,
            ).unwrap();
            let hit_big = state_in_collision(&chain, &q, &big).unwrap();
            let hit_small = state_in_collision(&chain, &q, &small).unwrap();
            prop_assert!(hit_big || !hit_small);
        }
    }
}

//! Serial revolute chains: forward kinematics, position + swivel inverse
//! kinematics and redundant goal sampling.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default joint limit magnitude for every joint of the built-in arm.
pub const DEFAULT_JOINT_LIMIT: f64 = 2.8;
pub const DEFAULT_UPPER_ARM: f64 = 0.30;
pub const DEFAULT_FOREARM: f64 = 0.25;

/// World direction whose projection onto the plane orthogonal to the
/// shoulder-hand axis defines swivel zero.
pub const SWIVEL_REFERENCE: [f64; 3] = [1.0, 0.0, 0.0];
/// Used instead of [`SWIVEL_REFERENCE`] when the shoulder-hand axis is
/// parallel to it.
pub const SWIVEL_FALLBACK_REFERENCE: [f64; 3] = [0.0, 1.0, 0.0];

/// Position tolerance an IK solution must meet (meters).
pub const IK_POSITION_TOLERANCE: f64 = 1e-4;
/// Swivel tolerance an IK solution must meet (radians).
pub const IK_SWIVEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct RevoluteJoint {
    pub axis: Vector3<f64>,
    pub limits: [f64; 2],
}

/// A serial chain of revolute joints.
///
/// Frame 0 is the base. Frame `i + 1` is obtained from frame `i` by
/// rotating about joint `i`'s axis and then translating by `links[i]`.
/// Three of these frames are reported as shoulder, elbow and hand markers.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    joints: Vec<RevoluteJoint>,
    links: Vec<Vector3<f64>>,
    markers: [usize; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct JointDoc {
    axis: [f64; 3],
    limits: [f64; 2],
}

/// JSON document layout of a chain definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ChainDoc {
    joints: Vec<JointDoc>,
    links: Vec<[f64; 3]>,
    markers: [usize; 3],
}

impl KinematicChain {
    pub fn new(
        joints: Vec<RevoluteJoint>,
        links: Vec<Vector3<f64>>,
        markers: [usize; 3],
    ) -> Result<Self> {
        if joints.len() < 2 {
            return Err(Error::InvalidChain(format!(
                "need at least 2 joints, got {}",
                joints.len()
            )));
        }
        if links.len() != joints.len() {
            return Err(Error::InvalidChain(format!(
                "{} joints but {} links",
                joints.len(),
                links.len()
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidChain(format!("joint {i} axis is not unit length")));
            }
            let [lo, hi] = j.limits;
            if !(lo < hi) || lo < -TAU || hi > TAU {
                return Err(Error::InvalidChain(format!(
                    "joint {i} limits [{lo}, {hi}] must satisfy lo < hi within [-2pi, 2pi]"
                )));
            }
        }
        if markers[0] != 0 {
            return Err(Error::InvalidChain("shoulder marker must be frame 0".into()));
        }
        if !(markers[0] < markers[1] && markers[1] < markers[2]) || markers[2] > joints.len() {
            return Err(Error::InvalidChain(format!(
                "markers {markers:?} must be strictly increasing frame indices <= {}",
                joints.len()
            )));
        }
        Ok(Self {
            joints,
            links,
            markers,
        })
    }

    /// The 7-DOF anthropomorphic arm: shoulder Z/Y/X, elbow Y, wrist Z/Y/X.
    ///
    /// In the zero pose the arm points along +Z, so the elbow sits at
    /// (0, 0, 0.30) and the hand at (0, 0, 0.55).
    pub fn default_arm() -> Self {
        Self::anthropomorphic(DEFAULT_UPPER_ARM, DEFAULT_FOREARM, DEFAULT_JOINT_LIMIT)
    }

    pub fn anthropomorphic(upper: f64, fore: f64, limit: f64) -> Self {
        let z = Vector3::z();
        let y = Vector3::y();
        let x = Vector3::x();
        let joints = [z, y, x, y, z, y, x]
            .into_iter()
            .map(|axis| RevoluteJoint {
                axis,
                limits: [-limit, limit],
            })
            .collect();
        let links = vec![
            Vector3::zeros(),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, upper),
            Vector3::new(0.0, 0.0, fore),
            Vector3::zeros(),
            Vector3::zeros(),
            Vector3::zeros(),
        ];
        Self::new(joints, links, [0, 3, 7]).expect("built-in arm is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: ChainDoc = serde_json::from_str(s)
            .map_err(|e| Error::InvalidChain(format!("chain document: {e}")))?;
        Self::from_doc(doc)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ChainDoc = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: ChainDoc) -> Result<Self> {
        let joints = doc
            .joints
            .into_iter()
            .map(|j| RevoluteJoint {
                axis: Vector3::from(j.axis),
                limits: j.limits,
            })
            .collect();
        let links = doc.links.into_iter().map(Vector3::from).collect();
        Self::new(joints, links, doc.markers)
    }

    pub fn to_json_string(&self) -> String {
        let doc = ChainDoc {
            joints: self
                .joints
                .iter()
                .map(|j| JointDoc {
                    axis: j.axis.into(),
                    limits: j.limits,
                })
                .collect(),
            links: self.links.iter().map(|l| (*l).into()).collect(),
            markers: self.markers,
        };
        serde_json::to_string_pretty(&doc).expect("chain serializes")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[RevoluteJoint] {
        &self.joints
    }

    pub fn links(&self) -> &[Vector3<f64>] {
        &self.links
    }

    pub fn marker_indices(&self) -> [usize; 3] {
        self.markers
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limits[0]).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limits[1]).collect()
    }

    /// Upper-arm and forearm lengths, i.e. marker-to-marker distances in the
    /// zero pose measured along the chain.
    pub fn segment_lengths(&self) -> (f64, f64) {
        let upper: f64 = self.links[..self.markers[1]].iter().map(|l| l.norm()).sum();
        let fore: f64 = self.links[self.markers[1]..self.markers[2]]
            .iter()
            .map(|l| l.norm())
            .sum();
        (upper, fore)
    }

    /// Upper bound on the shoulder-to-hand distance.
    pub fn reach(&self) -> f64 {
        let (a, b) = self.segment_lengths();
        a + b
    }

    pub fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                actual: q.len(),
            });
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && q
                .iter()
                .zip(&self.joints)
                .all(|(v, j)| *v >= j.limits[0] && *v <= j.limits[1])
    }

    /// Validates dimension and limits and wraps `q` as a planner state.
    pub fn state(&self, q: Vec<f64>) -> Result<JointState> {
        self.check_dim(&q)?;
        if let Some((i, v)) = q
            .iter()
            .enumerate()
            .find(|(i, v)| **v < self.joints[*i].limits[0] || **v > self.joints[*i].limits[1])
        {
            return Err(Error::InvalidConfig(format!(
                "joint {i} value {v} outside limits {:?}",
                self.joints[i].limits
            )));
        }
        Ok(JointState(q))
    }

    fn clamp_to_limits(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limits[0], j.limits[1]);
        }
    }

    /// Positions of every frame, base first (`dof + 1` entries).
    pub fn frame_positions(&self, q: &[f64]) -> Result<Vec<Vector3<f64>>> {
        self.check_dim(q)?;
        Ok(self.frames(q).into_iter().map(|f| f.1).collect())
    }

    /// (rotation before joint i, position of frame i) for i in 0..=dof.
    fn frames(&self, q: &[f64]) -> Vec<(Rotation3<f64>, Vector3<f64>)> {
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut rot = Rotation3::identity();
        let mut pos = Vector3::zeros();
        out.push((rot, pos));
        for ((joint, link), angle) in self.joints.iter().zip(&self.links).zip(q) {
            rot *= Rotation3::from_axis_angle(&Unit::new_unchecked(joint.axis), *angle);
            pos += rot * link;
            out.push((rot, pos));
        }
        out
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<MarkerFrame> {
        self.check_dim(q)?;
        Ok(self.markers_unchecked(q))
    }

    pub(crate) fn markers_unchecked(&self, q: &[f64]) -> MarkerFrame {
        // Only frames up to the hand marker matter.
        let mut rot = Rotation3::identity();
        let mut pos = Vector3::zeros();
        let mut elbow = Vector3::zeros();
        for (i, ((joint, link), angle)) in self.joints.iter().zip(&self.links).zip(q).enumerate() {
            if i >= self.markers[2] {
                break;
            }
            rot *= Rotation3::from_axis_angle(&Unit::new_unchecked(joint.axis), *angle);
            pos += rot * link;
            if i + 1 == self.markers[1] {
                elbow = pos;
            }
        }
        MarkerFrame {
            shoulder: Vector3::zeros(),
            elbow,
            hand: pos,
        }
    }

    /// Elbow swivel angle of state `q`, if defined.
    pub fn swivel(&self, q: &[f64]) -> Result<Option<f64>> {
        Ok(self.forward_kinematics(q)?.swivel())
    }

    /// Position Jacobian of the hand marker (3 x dof).
    fn hand_jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let frames = self.frames(q);
        let hand = frames[self.markers[2]].1;
        let mut jac = DMatrix::zeros(3, self.dof());
        for j in 0..self.markers[2] {
            let (rot_before, p_j) = frames[j];
            // Joint j rotates about its axis expressed after the previous joints.
            let axis = rot_before * self.joints[j].axis;
            let col = axis.cross(&(hand - p_j));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
        }
        jac
    }

    /// Damped least-squares IK on hand position plus swivel angle.
    pub fn inverse_kinematics(
        &self,
        target: &Vector3<f64>,
        swivel: f64,
        seed: &[f64],
        params: &IkParams,
    ) -> Result<JointState> {
        self.check_dim(seed)?;
        let distance = target.norm();
        let reach = self.reach();
        if distance > reach {
            return Err(Error::Unreachable { distance, reach });
        }
        let n = self.dof();
        let w = params.swivel_weight;
        let mut q = seed.to_vec();
        self.clamp_to_limits(&mut q);
        for _ in 0..params.max_iterations {
            let m = self.markers_unchecked(&q);
            let pos_err = target - m.hand;
            let sw_err = m.swivel().map(|s| wrap_angle(swivel - s));
            if pos_err.norm() <= params.position_goal
                && sw_err.is_some_and(|e| e.abs() <= params.swivel_goal)
            {
                break;
            }
            let mut jac = DMatrix::zeros(4, n);
            jac.view_mut((0, 0), (3, n)).copy_from(&self.hand_jacobian(&q));
            if sw_err.is_some() {
                let h = 1e-7;
                let mut qp = q.clone();
                for j in 0..n {
                    let orig = qp[j];
                    qp[j] = orig + h;
                    let sp = self.markers_unchecked(&qp).swivel();
                    qp[j] = orig - h;
                    let sm = self.markers_unchecked(&qp).swivel();
                    qp[j] = orig;
                    if let (Some(a), Some(b)) = (sp, sm) {
                        jac[(3, j)] = w * wrap_angle(a - b) / (2.0 * h);
                    }
                }
            }
            let err = DVector::from_vec(vec![
                pos_err.x,
                pos_err.y,
                pos_err.z,
                w * sw_err.unwrap_or(0.0),
            ]);
            let jjt = &jac * jac.transpose()
                + DMatrix::identity(4, 4) * (params.damping * params.damping);
            let Some(solved) = jjt.lu().solve(&err) else {
                break;
            };
            let mut dq = jac.transpose() * solved;
            let largest = dq.amax();
            if largest > params.step_clamp {
                dq *= params.step_clamp / largest;
            }
            for (v, d) in q.iter_mut().zip(dq.iter()) {
                *v += d;
            }
            self.clamp_to_limits(&mut q);
        }
        let m = self.markers_unchecked(&q);
        let pos_ok = (target - m.hand).norm() <= IK_POSITION_TOLERANCE;
        let sw_ok = m
            .swivel()
            .is_some_and(|s| wrap_angle(swivel - s).abs() <= IK_SWIVEL_TOLERANCE);
        if pos_ok && sw_ok && self.within_limits(&q) {
            Ok(JointState(q))
        } else {
            Err(Error::NoConvergence {
                iterations: params.max_iterations,
            })
        }
    }

    /// Goal states for a hand target, one IK attempt per uniformly sampled
    /// swivel angle. Failed swivels are dropped, so the list may be short or
    /// empty.
    pub fn sample_goal_states(
        &self,
        target: &Vector3<f64>,
        count: usize,
        rng_seed: u64,
    ) -> Vec<JointState> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let params = IkParams::default();
        let lo = self.lower_limits();
        let hi = self.upper_limits();
        let mut out = Vec::new();
        if target.norm() > self.reach() {
            return out;
        }
        for _ in 0..count {
            let swivel = rng.random_range(0.0..TAU);
            // Fixed number of seed draws per swivel keeps the stream aligned.
            let seeds: Vec<Vec<f64>> = (0..IK_SEED_ATTEMPTS)
                .map(|_| {
                    lo.iter()
                        .zip(&hi)
                        .map(|(l, h)| rng.random_range(0.5 * l..=0.5 * h))
                        .collect()
                })
                .collect();
            for seed in seeds {
                if let Ok(q) = self.inverse_kinematics(target, swivel, &seed, &params) {
                    out.push(q);
                    break;
                }
            }
        }
        out
    }
}

const IK_SEED_ATTEMPTS: usize = 3;

#[derive(Clone, Debug)]
pub struct IkParams {
    pub damping: f64,
    pub max_iterations: usize,
    pub step_clamp: f64,
    /// Meters per radian used to weight the swivel row against position.
    pub swivel_weight: f64,
    pub position_goal: f64,
    pub swivel_goal: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 1e-2,
            max_iterations: 200,
            step_clamp: 0.2,
            swivel_weight: 0.1,
            position_goal: 1e-8,
            swivel_goal: 1e-7,
        }
    }
}

/// Joint angles of a chain, radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointState(pub Vec<f64>);

impl JointState {
    pub fn new(q: Vec<f64>) -> Self {
        Self(q)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &JointState) -> f64 {
        joint_distance(&self.0, &other.0)
    }

    pub fn lerp(&self, other: &JointState, t: f64) -> JointState {
        JointState(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + (b - a) * t)
                .collect(),
        )
    }
}

impl std::ops::Deref for JointState {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn joint_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Shoulder, elbow and hand positions at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkerFrame {
    pub shoulder: Vector3<f64>,
    pub elbow: Vector3<f64>,
    pub hand: Vector3<f64>,
}

impl MarkerFrame {
    pub fn lerp(&self, other: &MarkerFrame, t: f64) -> MarkerFrame {
        MarkerFrame {
            shoulder: self.shoulder + (other.shoulder - self.shoulder) * t,
            elbow: self.elbow + (other.elbow - self.elbow) * t,
            hand: self.hand + (other.hand - self.hand) * t,
        }
    }

    /// Rotation of the elbow about the shoulder-hand axis, measured from the
    /// plane spanned by that axis and [`SWIVEL_REFERENCE`]. `None` when the
    /// arm is stretched or folded onto the axis.
    pub fn swivel(&self) -> Option<f64> {
        let axis = self.hand - self.shoulder;
        let axis_norm = axis.norm();
        if axis_norm < 1e-12 {
            return None;
        }
        let u = axis / axis_norm;
        let e = self.elbow - self.shoulder;
        let e_perp = e - u * e.dot(&u);
        if e_perp.norm() < 1e-9 {
            return None;
        }
        let mut r_perp = Vector3::zeros();
        for reference in [SWIVEL_REFERENCE, SWIVEL_FALLBACK_REFERENCE] {
            let r = Vector3::from(reference);
            r_perp = r - u * r.dot(&u);
            if r_perp.norm() > 1e-6 {
                break;
            }
        }
        let r_perp = r_perp.normalize();
        Some(r_perp.cross(&e_perp).dot(&u).atan2(r_perp.dot(&e_perp)))
    }
}

/// Elbow position for a shoulder, hand, segment lengths and swivel angle,
/// using the same angle convention as [`MarkerFrame::swivel`]. `None` when
/// the hand is out of reach or on the shoulder.
pub fn elbow_from_swivel(
    shoulder: &Vector3<f64>,
    hand: &Vector3<f64>,
    upper: f64,
    fore: f64,
    swivel: f64,
) -> Option<Vector3<f64>> {
    let axis = hand - shoulder;
    let d = axis.norm();
    if d < 1e-12 || d > upper + fore || d < (upper - fore).abs() {
        return None;
    }
    let u = axis / d;
    let along = (upper * upper - fore * fore + d * d) / (2.0 * d);
    let radius = (upper * upper - along * along).max(0.0).sqrt();
    let mut r_perp = Vector3::zeros();
    for reference in [SWIVEL_REFERENCE, SWIVEL_FALLBACK_REFERENCE] {
        let r = Vector3::from(reference);
        r_perp = r - u * r.dot(&u);
        if r_perp.norm() > 1e-6 {
            break;
        }
    }
    let r_perp = r_perp.normalize();
    let v = u.cross(&r_perp);
    Some(shoulder + u * along + (r_perp * swivel.cos() + v * swivel.sin()) * radius)
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    x
}

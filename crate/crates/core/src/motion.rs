//! Motion representation and demonstration preprocessing.
//!
//! A motion of any length, from the robot or from a human demonstrator, is
//! encoded as a fixed 30 x 6 grid: the marker polyline is resampled to 30
//! points uniformly in hand arc length, and each point is reduced to the unit
//! directions shoulder->elbow and elbow->hand. Only directions survive, so
//! segment lengths and timing of the source do not leak into the encoding.

use std::collections::HashSet;
use std::ops::Range;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointState, KinematicChain, MarkerFrame};
use crate::{Error, Result};

pub const REPR_STEPS: usize = 30;
pub const REPR_CHANNELS: usize = 6;
pub const DEFAULT_PREFIX_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_TAU_V: f64 = 0.10;

/// Hand paths shorter than this are resampled by index instead of arc length.
const MIN_ARC_LENGTH: f64 = 1e-9;

/// Encoded motion: per resampled step, the unit direction shoulder->elbow
/// followed by the unit direction elbow->hand.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionRepr(pub [[f64; REPR_CHANNELS]; REPR_STEPS]);

impl MotionRepr {
    pub fn zeros() -> Self {
        Self([[0.0; REPR_CHANNELS]; REPR_STEPS])
    }

    pub fn rows(&self) -> &[[f64; REPR_CHANNELS]; REPR_STEPS] {
        &self.0
    }

    pub fn row(&self, step: usize) -> &[f64; REPR_CHANNELS] {
        &self.0[step]
    }

    /// Row-major copy (step, channel).
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != REPR_STEPS * REPR_CHANNELS {
            return Err(Error::MalformedInput(format!(
                "expected {} values, got {}",
                REPR_STEPS * REPR_CHANNELS,
                values.len()
            )));
        }
        let mut out = Self::zeros();
        for (row, chunk) in out.0.iter_mut().zip(values.chunks_exact(REPR_CHANNELS)) {
            row.copy_from_slice(chunk);
        }
        Ok(out)
    }

    /// Checks that every value is finite and each direction has unit norm.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.0.iter().enumerate() {
            for half in row.chunks_exact(3) {
                let n = (half[0] * half[0] + half[1] * half[1] + half[2] * half[2]).sqrt();
                if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                    return Err(Error::MalformedInput(format!(
                        "row {i} direction has norm {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bit pattern, for exact de-duplication.
    pub fn bit_key(&self) -> Vec<u64> {
        self.0.iter().flatten().map(|v| v.to_bits()).collect()
    }

    /// Marker positions implied by the directions for an arm with the given
    /// segment lengths, shoulder at the origin.
    pub fn reconstruct(&self, upper: f64, fore: f64) -> Vec<MarkerFrame> {
        self.0
            .iter()
            .map(|r| {
                let elbow = Vector3::new(r[0], r[1], r[2]) * upper;
                let hand = elbow + Vector3::new(r[3], r[4], r[5]) * fore;
                MarkerFrame {
                    shoulder: Vector3::zeros(),
                    elbow,
                    hand,
                }
            })
            .collect()
    }
}

/// A motion either as robot joint states or as recorded marker frames.
#[derive(Clone, Debug, PartialEq)]
pub enum Motion {
    Robot(Vec<JointState>),
    Demonstrator(Vec<MarkerFrame>),
}

impl Motion {
    pub fn len(&self) -> usize {
        match self {
            Motion::Robot(s) => s.len(),
            Motion::Demonstrator(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Marker frames of the motion; robot states are mapped through FK.
    pub fn marker_frames(&self, chain: &KinematicChain) -> Result<Vec<MarkerFrame>> {
        match self {
            Motion::Robot(states) => states
                .iter()
                .map(|q| chain.forward_kinematics(q))
                .collect(),
            Motion::Demonstrator(frames) => Ok(frames.clone()),
        }
    }
}

fn hand_arc_lengths(frames: &[MarkerFrame]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(frames.len());
    let mut total = 0.0;
    cum.push(0.0);
    for w in frames.windows(2) {
        total += (w[1].hand - w[0].hand).norm();
        cum.push(total);
    }
    cum
}

/// Resamples a marker polyline to `count` frames, uniformly in cumulative hand
/// arc length (or by index when the hand does not move). The first and last
/// output frames are copies of the input endpoints.
pub fn resample_frames(frames: &[MarkerFrame], count: usize) -> Result<Vec<MarkerFrame>> {
    if frames.len() < 2 {
        return Err(Error::MotionTooShort(frames.len()));
    }
    assert!(count >= 2);
    let n = frames.len();
    let cum = hand_arc_lengths(frames);
    let total = cum[n - 1];
    let mut out = Vec::with_capacity(count);
    out.push(frames[0]);
    let mut seg = 0;
    for k in 1..count - 1 {
        let frac = k as f64 / (count - 1) as f64;
        let frame = if total < MIN_ARC_LENGTH {
            let s = frac * (n - 1) as f64;
            let i = (s.floor() as usize).min(n - 2);
            frames[i].lerp(&frames[i + 1], s - i as f64)
        } else {
            let target = frac * total;
            while seg < n - 2 && cum[seg + 1] < target {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 {
                ((target - cum[seg]) / len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            frames[seg].lerp(&frames[seg + 1], t)
        };
        out.push(frame);
    }
    out.push(frames[n - 1]);
    Ok(out)
}

fn unit_direction(from: &Vector3<f64>, to: &Vector3<f64>, frame: usize) -> Result<Vector3<f64>> {
    let d = to - from;
    let n = d.norm();
    if n < 1e-12 || !n.is_finite() {
        return Err(Error::ZeroLengthSegment(frame));
    }
    Ok(d / n)
}

/// Encodes marker frames.
pub fn encode_frames(frames: &[MarkerFrame]) -> Result<MotionRepr> {
    let sampled = resample_frames(frames, REPR_STEPS)?;
    let mut out = MotionRepr::zeros();
    for (i, (row, f)) in out.0.iter_mut().zip(&sampled).enumerate() {
        let upper = unit_direction(&f.shoulder, &f.elbow, i)?;
        let fore = unit_direction(&f.elbow, &f.hand, i)?;
        row[..3].copy_from_slice(upper.as_slice());
        row[3..].copy_from_slice(fore.as_slice());
    }
    Ok(out)
}

pub fn encode(chain: &KinematicChain, motion: &Motion) -> Result<MotionRepr> {
    if motion.len() < 2 {
        return Err(Error::MotionTooShort(motion.len()));
    }
    encode_frames(&motion.marker_frames(chain)?)
}

fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::InvalidFraction("no fractions given".into()));
    }
    for f in fractions {
        if !(*f > 0.0 && *f <= 1.0) {
            return Err(Error::InvalidFraction(format!("{f} not in (0, 1]")));
        }
    }
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidFraction("fractions must be ascending".into()));
    }
    if *fractions.last().unwrap() != 1.0 {
        return Err(Error::InvalidFraction("last fraction must be 1.0".into()));
    }
    Ok(())
}

/// Sub-motion from the start up to cumulative hand arc-length fraction `f`,
/// with an interpolated cut frame when the cut falls inside a segment.
pub fn prefix_frames(frames: &[MarkerFrame], fraction: f64) -> Result<Vec<MarkerFrame>> {
    if frames.len() < 2 {
        return Err(Error::MotionTooShort(frames.len()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(format!("{fraction} not in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(frames.to_vec());
    }
    let n = frames.len();
    let cum = hand_arc_lengths(frames);
    let total = cum[n - 1];
    let (seg, t) = if total < MIN_ARC_LENGTH {
        let s = fraction * (n - 1) as f64;
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    } else {
        let target = fraction * total;
        let mut i = 0;
        while i < n - 2 && cum[i + 1] < target {
            i += 1;
        }
        let len = cum[i + 1] - cum[i];
        (i, if len > 0.0 { (target - cum[i]) / len } else { 1.0 })
    };
    let mut out = frames[..=seg].to_vec();
    if t >= 1.0 {
        out.push(frames[seg + 1]);
    } else if t > 0.0 || out.len() < 2 {
        out.push(frames[seg].lerp(&frames[seg + 1], t));
    }
    Ok(out)
}

pub fn prefix_representations_frames(
    frames: &[MarkerFrame],
    fractions: &[f64],
) -> Result<Vec<MotionRepr>> {
    validate_fractions(fractions)?;
    fractions
        .iter()
        .map(|f| encode_frames(&prefix_frames(frames, *f)?))
        .collect()
}

/// One encoding per arc-length fraction of the motion's prefixes.
pub fn prefix_representations(
    chain: &KinematicChain,
    motion: &Motion,
    fractions: &[f64],
) -> Result<Vec<MotionRepr>> {
    if motion.len() < 2 {
        return Err(Error::MotionTooShort(motion.len()));
    }
    prefix_representations_frames(&motion.marker_frames(chain)?, fractions)
}

/// Mean of the unit shoulder->hand directions.
pub fn mean_hand_direction(frames: &[MarkerFrame]) -> Vector3<f64> {
    let mut sum = Vector3::zeros();
    for f in frames {
        let d = f.hand - f.shoulder;
        let n = d.norm();
        if n > 0.0 {
            sum += d / n;
        }
    }
    sum / frames.len().max(1) as f64
}

/// Rotation taking the unit vector `d` onto +Z with the smallest angle. The
/// antipodal case rotates by pi about +X.
pub fn rotation_to_z(d: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = Vector3::z();
    let cos = d.dot(&z).clamp(-1.0, 1.0);
    let axis = d.cross(&z);
    let sin = axis.norm();
    if sin < 1e-15 {
        if cos > 0.0 {
            return UnitQuaternion::identity();
        }
        return UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    }
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), sin.atan2(cos))
}

/// Rotates all frames about the first frame's shoulder so that the mean
/// hand direction points along +Z.
pub fn direction_normalize_frames(frames: &[MarkerFrame]) -> Result<Vec<MarkerFrame>> {
    if frames.is_empty() {
        return Err(Error::MotionTooShort(0));
    }
    let mean = mean_hand_direction(frames);
    let norm = mean.norm();
    if norm <= 1e-6 {
        return Err(Error::DegenerateDirection(norm));
    }
    let rot = rotation_to_z(&(mean / norm));
    let base = frames[0].shoulder;
    let apply = |p: &Vector3<f64>| base + rot * (p - base);
    Ok(frames
        .iter()
        .map(|f| MarkerFrame {
            shoulder: apply(&f.shoulder),
            elbow: apply(&f.elbow),
            hand: apply(&f.hand),
        })
        .collect())
}

pub fn direction_normalize(motion: &Motion) -> Result<Motion> {
    match motion {
        Motion::Demonstrator(frames) => Ok(Motion::Demonstrator(direction_normalize_frames(
            frames,
        )?)),
        Motion::Robot(_) => Err(Error::MalformedInput(
            "direction normalization applies to demonstrator motions".into(),
        )),
    }
}

/// Frame ranges of the fast sections of a recording.
///
/// The hand speed at frame `i > 0` is `|hand_i - hand_{i-1}| / dt`; frame 0
/// takes the speed of frame 1. Frames slower than `tau_v` are cut points;
/// every maximal run of fast frames with at least two frames and mean hand
/// speed at least `tau_v` is kept.
pub fn velocity_split_ranges(frames: &[MarkerFrame], tau_v: f64, dt: f64) -> Vec<Range<usize>> {
    assert!(tau_v > 0.0 && dt > 0.0, "tau_v and dt must be positive");
    let n = frames.len();
    if n < 2 {
        return Vec::new();
    }
    let mut speed: Vec<f64> = std::iter::once(0.0)
        .chain(frames.windows(2).map(|w| (w[1].hand - w[0].hand).norm() / dt))
        .collect();
    speed[0] = speed[1];
    let mut out = Vec::new();
    let mut start = None;
    for i in 0..=n {
        let fast = i < n && speed[i] >= tau_v;
        match (fast, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= 2 {
                    let mean = (s + 1..i).map(|j| speed[j]).sum::<f64>() / (i - s - 1) as f64;
                    if mean >= tau_v {
                        out.push(s..i);
                    }
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

pub fn velocity_split(motion: &Motion, tau_v: f64, dt: f64) -> Result<Vec<Motion>> {
    if !(tau_v > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tau_v ({tau_v}) and dt ({dt}) must be positive"
        )));
    }
    let Motion::Demonstrator(frames) = motion else {
        return Err(Error::MalformedInput(
            "velocity splitting applies to demonstrator motions".into(),
        ));
    };
    Ok(velocity_split_ranges(frames, tau_v, dt)
        .into_iter()
        .map(|r| Motion::Demonstrator(frames[r].to_vec()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Real => 1.0,
            Label::Generated => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEntry {
    pub repr: MotionRepr,
    pub label: Label,
    pub iteration: Option<usize>,
    pub query: Option<String>,
}

/// Real and generated encodings for discriminator training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    pub entries: Vec<LabeledEntry>,
}

impl LabeledDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, repr: MotionRepr, label: Label) {
        self.entries.push(LabeledEntry {
            repr,
            label,
            iteration: None,
            query: None,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn has_both_labels(&self) -> bool {
        self.count(Label::Real) > 0 && self.count(Label::Generated) > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            entries: indices.iter().map(|i| self.entries[*i].clone()).collect(),
        }
    }

    /// Drops generated entries whose encoding also appears as a real entry.
    pub fn remove_label_conflicts(&mut self) -> usize {
        let real: HashSet<Vec<u64>> = self
            .entries
            .iter()
            .filter(|e| e.label == Label::Real)
            .map(|e| e.repr.bit_key())
            .collect();
        let before = self.entries.len();
        self.entries
            .retain(|e| e.label == Label::Real || !real.contains(&e.repr.bit_key()));
        before - self.entries.len()
    }
}

//! C ABI for the `advplan` library.
//!
//! Objects cross the boundary as opaque handles created and destroyed by
//! this library. Every fallible function returns an [`AdvplanStatus`]; on
//! failure a description is available from [`advplan_last_error`] on the
//! same thread. Arrays are passed as pointer plus length; joint states are
//! stored row-major (`n_states * dof` doubles).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use advplan::collision::{state_in_collision, Scene, Sphere};
use advplan::kinematics::{IkParams, JointState, KinematicChain};
use advplan::motion::{encode, Motion, MotionRepr, REPR_CHANNELS, REPR_STEPS};
use advplan::nn::Discriminator;
use advplan::planner::{plan, Objective, PlannerConfig, PlanningProblem};
use advplan::{Error, Vector3};

/// Number of doubles in an encoded motion (30 steps x 6 channels).
pub const ADVPLAN_REPR_LEN: usize = 180;

const _: () = assert!(ADVPLAN_REPR_LEN == REPR_STEPS * REPR_CHANNELS);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvplanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Unreachable = 4,
    NoConvergence = 5,
    InCollision = 6,
    PlanningFailed = 7,
    Io = 8,
    Parse = 9,
    Checksum = 10,
    ShapeMismatch = 11,
    BufferTooSmall = 12,
    Internal = 13,
}

/// Kinematic chain handle.
pub struct AdvplanChain(KinematicChain);

/// Obstacle scene handle.
pub struct AdvplanScene(Scene);

/// Discriminator handle.
pub struct AdvplanDiscriminator(Discriminator);

/// Planned motion handle.
pub struct AdvplanMotion {
    states: Vec<f64>,
    len: usize,
    dof: usize,
    cost: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> AdvplanStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::LengthMismatch(..) => {
            AdvplanStatus::DimensionMismatch
        }
        Error::Unreachable { .. } => AdvplanStatus::Unreachable,
        Error::NoConvergence { .. } => AdvplanStatus::NoConvergence,
        Error::InCollision(_) => AdvplanStatus::InCollision,
        Error::PlanningFailed(_) => AdvplanStatus::PlanningFailed,
        Error::Io { .. } | Error::Missing(_) => AdvplanStatus::Io,
        Error::Json { .. } | Error::Parse { .. } | Error::MalformedInput(_) => {
            AdvplanStatus::Parse
        }
        Error::Checksum => AdvplanStatus::Checksum,
        Error::ShapeMismatch(_) => AdvplanStatus::ShapeMismatch,
        _ => AdvplanStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and converting panics to `Internal`.
fn guard(f: impl FnOnce() -> Result<(), (AdvplanStatus, String)>) -> AdvplanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AdvplanStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal error (panic)");
            AdvplanStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (AdvplanStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AdvplanStatus, String) {
    (AdvplanStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (AdvplanStatus, String) {
    (AdvplanStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (AdvplanStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(
    p: *mut f64,
    n: usize,
    what: &str,
) -> Result<&'a mut [f64], (AdvplanStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn chain_ref<'a>(c: *const AdvplanChain) -> Result<&'a KinematicChain, (AdvplanStatus, String)> {
    c.as_ref().map(|c| &c.0).ok_or_else(|| null("chain"))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (AdvplanStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Description of the last error on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn advplan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// The built-in 7-DOF arm. Never fails; free with [`advplan_chain_free`].
#[no_mangle]
pub extern "C" fn advplan_chain_default() -> *mut AdvplanChain {
    Box::into_raw(Box::new(AdvplanChain(KinematicChain::default_arm())))
}

/// Parses a chain description (JSON).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advplan_chain_from_json(
    json: *const c_char,
    out: *mut *mut AdvplanChain,
) -> AdvplanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(json, "json")?;
        let chain = KinematicChain::from_json_str(text).map_err(lib_err)?;
        store(out, AdvplanChain(chain));
        Ok(())
    })
}

/// # Safety
/// `chain` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn advplan_chain_free(chain: *mut AdvplanChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Degrees of freedom, or 0 for a null handle.
///
/// # Safety
/// `chain` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn advplan_chain_dof(chain: *const AdvplanChain) -> usize {
    chain.as_ref().map(|c| c.0.dof()).unwrap_or(0)
}

/// Marker positions for joint state `q`: shoulder, elbow, hand as 9 doubles.
///
/// # Safety
/// `q` must point to `n` doubles and `out_markers` to 9 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn advplan_forward_kinematics(
    chain: *const AdvplanChain,
    q: *const f64,
    n: usize,
    out_markers: *mut f64,
) -> AdvplanStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let q = slice(q, n, "q")?;
        let out = slice_mut(out_markers, 9, "out_markers")?;
        let m = chain.forward_kinematics(q).map_err(lib_err)?;
        for (i, p) in [m.shoulder, m.elbow, m.hand].iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// Solves for a hand position and swivel angle starting from `seed`.
///
/// # Safety
/// `target` must point to 3 doubles; `seed` and `out_q` to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn advplan_inverse_kinematics(
    chain: *const AdvplanChain,
    target: *const f64,
    swivel: f64,
    seed: *const f64,
    n: usize,
    out_q: *mut f64,
) -> AdvplanStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let t = slice(target, 3, "target")?;
        let seed = slice(seed, n, "seed")?;
        let out = slice_mut(out_q, n, "out_q")?;
        let q = chain
            .inverse_kinematics(&Vector3::new(t[0], t[1], t[2]), swivel, seed, &IkParams::default())
            .map_err(lib_err)?;
        out.copy_from_slice(&q);
        Ok(())
    })
}

/// Goal states for a hand target (one per sampled swivel that converged),
/// written row-major into `out` (room for `capacity` states). The number of
/// states found goes to `out_count`; `BufferTooSmall` if it exceeds
/// `capacity`.
///
/// # Safety
/// `target` must point to 3 doubles, `out` to `capacity * dof` doubles.
#[no_mangle]
pub unsafe extern "C" fn advplan_sample_goal_states(
    chain: *const AdvplanChain,
    target: *const f64,
    count: usize,
    seed: u64,
    out: *mut f64,
    capacity: usize,
    out_count: *mut usize,
) -> AdvplanStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let t = slice(target, 3, "target")?;
        if out_count.is_null() {
            return Err(null("out_count"));
        }
        let states = chain.sample_goal_states(&Vector3::new(t[0], t[1], t[2]), count, seed);
        *out_count = states.len();
        if states.len() > capacity {
            return Err((
                AdvplanStatus::BufferTooSmall,
                format!("{} states found, capacity {capacity}", states.len()),
            ));
        }
        let d = chain.dof();
        let buf = slice_mut(out, capacity * d, "out")?;
        for (i, s) in states.iter().enumerate() {
            buf[i * d..(i + 1) * d].copy_from_slice(s);
        }
        Ok(())
    })
}

/// Empty scene with the given capsule radius for the arm segments.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advplan_scene_new(
    link_radius: f64,
    out: *mut *mut AdvplanScene,
) -> AdvplanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scene = Scene::new(Vec::new(), link_radius).map_err(lib_err)?;
        store(out, AdvplanScene(scene));
        Ok(())
    })
}

/// # Safety
/// `scene` must be a valid handle; `center` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn advplan_scene_add_sphere(
    scene: *mut AdvplanScene,
    center: *const f64,
    radius: f64,
) -> AdvplanStatus {
    guard(|| {
        let scene = scene.as_mut().ok_or_else(|| null("scene"))?;
        let c = slice(center, 3, "center")?;
        let mut next = scene.0.clone();
        next.spheres.push(Sphere {
            center: [c[0], c[1], c[2]],
            radius,
        });
        next.validate().map_err(lib_err)?;
        scene.0 = next;
        Ok(())
    })
}

/// # Safety
/// `scene` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn advplan_scene_free(scene: *mut AdvplanScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Writes 1 to `out_hit` if state `q` touches any obstacle, else 0.
///
/// # Safety
/// Handles must be valid; `q` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn advplan_state_in_collision(
    chain: *const AdvplanChain,
    scene: *const AdvplanScene,
    q: *const f64,
    n: usize,
    out_hit: *mut i32,
) -> AdvplanStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        let q = slice(q, n, "q")?;
        if out_hit.is_null() {
            return Err(null("out_hit"));
        }
        *out_hit = i32::from(state_in_collision(chain, q, &scene.0).map_err(lib_err)?);
        Ok(())
    })
}

/// Encodes a robot motion (`n_states` row-major states of the chain's
/// dimension) into [`ADVPLAN_REPR_LEN`] doubles.
///
/// # Safety
/// `states` must point to `n_states * dof` doubles and `out` to
/// `ADVPLAN_REPR_LEN` doubles.
#[no_mangle]
pub unsafe extern "C" fn advplan_encode(
    chain: *const AdvplanChain,
    states: *const f64,
    n_states: usize,
    out: *mut f64,
) -> AdvplanStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let d = chain.dof();
        let flat = slice(states, n_states * d, "states")?;
        let out = slice_mut(out, ADVPLAN_REPR_LEN, "out")?;
        let motion = Motion::Robot(flat.chunks(d).map(|c| JointState(c.to_vec())).collect());
        let repr = encode(chain, &motion).map_err(lib_err)?;
        out.copy_from_slice(&repr.to_flat());
        Ok(())
    })
}

/// Loads a discriminator checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advplan_discriminator_load(
    path: *const c_char,
    out: *mut *mut AdvplanDiscriminator,
) -> AdvplanStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let d = Discriminator::load(Path::new(path)).map_err(lib_err)?;
        store(out, AdvplanDiscriminator(d));
        Ok(())
    })
}

/// Randomly initialized discriminator with the default architecture.
#[no_mangle]
pub extern "C" fn advplan_discriminator_random(seed: u64) -> *mut AdvplanDiscriminator {
    Box::into_raw(Box::new(AdvplanDiscriminator(Discriminator::default_random(seed))))
}

/// # Safety
/// `d` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn advplan_discriminator_free(d: *mut AdvplanDiscriminator) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Scores one encoded motion ([`ADVPLAN_REPR_LEN`] doubles).
///
/// # Safety
/// `d` must be valid, `repr` must point to `ADVPLAN_REPR_LEN` doubles.
#[no_mangle]
pub unsafe extern "C" fn advplan_discriminator_score(
    d: *const AdvplanDiscriminator,
    repr: *const f64,
    out_score: *mut f64,
) -> AdvplanStatus {
    guard(|| {
        let d = d.as_ref().ok_or_else(|| null("discriminator"))?;
        let r = slice(repr, ADVPLAN_REPR_LEN, "repr")?;
        if out_score.is_null() {
            return Err(null("out_score"));
        }
        let m = MotionRepr::from_flat(r).map_err(lib_err)?;
        m.validate().map_err(lib_err)?;
        *out_score = d.0.score(&m).map_err(lib_err)?;
        Ok(())
    })
}

/// Planning parameters; obtain defaults from [`advplan_planner_defaults`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AdvplanPlannerParams {
    pub step_max: f64,
    pub goal_bias: f64,
    pub lambda: f64,
    pub resolution: f64,
    pub budget: usize,
    pub seed: u64,
}

#[no_mangle]
pub extern "C" fn advplan_planner_defaults() -> AdvplanPlannerParams {
    let c = PlannerConfig::default();
    AdvplanPlannerParams {
        step_max: c.step_max,
        goal_bias: c.goal_bias,
        lambda: c.lambda,
        resolution: c.resolution,
        budget: c.budget,
        seed: 0,
    }
}

/// Plans from `start` to any of `n_goals` goal states. With a null
/// discriminator the objective is path length; otherwise it is
/// `lambda * length - score`. `scene` may be null for free space.
///
/// # Safety
/// `chain` must be valid; `start` must point to `dof` doubles and `goals`
/// to `n_goals * dof`; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advplan_plan(
    chain: *const AdvplanChain,
    scene: *const AdvplanScene,
    discriminator: *const AdvplanDiscriminator,
    start: *const f64,
    goals: *const f64,
    n_goals: usize,
    params: AdvplanPlannerParams,
    out: *mut *mut AdvplanMotion,
) -> AdvplanStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = chain.dof();
        let start = slice(start, d, "start")?;
        if n_goals == 0 {
            return Err(invalid("no goal states"));
        }
        let goals = slice(goals, n_goals * d, "goals")?;
        let scene = scene.as_ref().map(|s| s.0.clone()).unwrap_or_else(Scene::empty);
        let disc = discriminator.as_ref().map(|d| &d.0);
        let objective = match disc {
            None => Objective::LengthOnly,
            Some(dd) => Objective::Adversarial {
                scorer: dd,
                lambda: params.lambda,
            },
        };
        let problem = PlanningProblem {
            start: JointState(start.to_vec()),
            goals: goals.chunks(d).map(|g| JointState(g.to_vec())).collect(),
            scene,
            objective,
            rng_seed: params.seed,
        };
        let config = PlannerConfig {
            step_max: params.step_max,
            goal_bias: params.goal_bias,
            lambda: params.lambda,
            resolution: params.resolution,
            budget: params.budget,
            ..PlannerConfig::default()
        };
        let r = plan(chain, &problem, &config).map_err(lib_err)?;
        store(
            out,
            AdvplanMotion {
                len: r.motion.len(),
                states: r.motion.iter().flat_map(|s| s.iter().copied()).collect(),
                dof: d,
                cost: r.report.cost,
            },
        );
        Ok(())
    })
}

/// Number of states in a motion (0 for null).
///
/// # Safety
/// `m` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn advplan_motion_len(m: *const AdvplanMotion) -> usize {
    m.as_ref().map(|m| m.len).unwrap_or(0)
}

/// Row-major states of a motion (`len * dof` doubles), owned by the handle.
///
/// # Safety
/// `m` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn advplan_motion_states(m: *const AdvplanMotion) -> *const f64 {
    m.as_ref().map(|m| m.states.as_ptr()).unwrap_or(ptr::null())
}

/// Joint dimension of a motion (0 for null).
///
/// # Safety
/// `m` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn advplan_motion_dof(m: *const AdvplanMotion) -> usize {
    m.as_ref().map(|m| m.dof).unwrap_or(0)
}

/// Objective cost of the planned motion (NaN for null).
///
/// # Safety
/// `m` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn advplan_motion_cost(m: *const AdvplanMotion) -> f64 {
    m.as_ref().map(|m| m.cost).unwrap_or(f64::NAN)
}

/// # Safety
/// `m` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn advplan_motion_free(m: *mut AdvplanMotion) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

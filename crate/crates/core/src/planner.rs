//! RRT* in joint space with a pluggable cost objective.
//!
//! Besides the classical path-length cost, the planner supports an
//! adversarial objective where the cost of a node is derived from the
//! discriminator score of the partial motion from the root to that node:
//!
//! ```text
//! edge_cost(parent, child) = lambda * |child - parent|
//!                          + score(parent prefix) - score(parent prefix + child)
//! ```
//!
//! The root's score is taken to be 0, so the score terms telescope and the
//! cost-to-come of any node equals `lambda * path_length - score(prefix)`.
//! Minimizing cost therefore maximizes the final score. Edge costs can be
//! negative, and because they depend on the whole prefix a rewire changes the
//! costs of the entire subtree below the rewired node.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{edge_in_collision, Scene};
use crate::kinematics::{joint_distance, JointState, KinematicChain, MarkerFrame};
use crate::motion::{encode_frames, MotionRepr};
use crate::nn::Discriminator;
use crate::{Error, Result};

/// Anything that maps encoded motions to realness scores in [0, 1].
pub trait Scorer: Sync {
    fn score_batch(&self, reprs: &[MotionRepr]) -> Vec<f64>;
}

impl Scorer for Discriminator {
    fn score_batch(&self, reprs: &[MotionRepr]) -> Vec<f64> {
        Discriminator::score_batch(self, reprs).expect("discriminator input shape checked at load")
    }
}

/// Scores every motion with the same value.
#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score_batch(&self, reprs: &[MotionRepr]) -> Vec<f64> {
        vec![self.0; reprs.len()]
    }
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&MotionRepr) -> f64 + Sync> Scorer for FnScorer<F> {
    fn score_batch(&self, reprs: &[MotionRepr]) -> Vec<f64> {
        reprs.iter().map(&self.0).collect()
    }
}

#[derive(Clone, Copy)]
pub enum Objective<'a> {
    /// Joint-space path length.
    LengthOnly,
    /// `lambda * length - score(final motion)`, spread over the nodes.
    Adversarial { scorer: &'a dyn Scorer, lambda: f64 },
}

impl Objective<'_> {
    fn length_weight(&self) -> f64 {
        match self {
            Objective::LengthOnly => 1.0,
            Objective::Adversarial { lambda, .. } => *lambda,
        }
    }
}

impl std::fmt::Debug for Objective<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::LengthOnly => write!(f, "LengthOnly"),
            Objective::Adversarial { lambda, .. } => {
                write!(f, "Adversarial {{ lambda: {lambda} }}")
            }
        }
    }
}

/// How subtree costs are updated after a node gets a new parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewireMode {
    /// Re-score every descendant against its new prefix.
    #[default]
    Full,
    /// Keep cached edge costs and shift cost-to-come by the parent's change.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub step_max: f64,
    pub goal_bias: f64,
    /// Neighbourhood constant; `None` uses the RRT* measure formula.
    pub gamma: Option<f64>,
    pub rewire_mode: RewireMode,
    /// Discriminator calls per query after which rewiring falls back to
    /// [`RewireMode::Frozen`].
    pub eval_cap: usize,
    /// Joint-space step for edge collision checks (radians).
    pub resolution: f64,
    /// Length weight of the adversarial objective (per radian).
    pub lambda: f64,
    /// Maximum tree size.
    pub budget: usize,
    /// Hard stop on loop iterations, as a multiple of `budget`.
    pub max_iterations_factor: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            step_max: 0.15,
            goal_bias: 0.05,
            gamma: None,
            rewire_mode: RewireMode::Full,
            eval_cap: 200_000,
            resolution: crate::collision::DEFAULT_RESOLUTION,
            lambda: 0.05,
            budget: 2000,
            max_iterations_factor: 20,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_max > 0.0) {
            return Err(Error::InvalidConfig("step_max must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(Error::InvalidConfig("goal_bias must be in [0, 1]".into()));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidConfig("resolution must be > 0".into()));
        }
        if self.budget < 2 {
            return Err(Error::InvalidConfig("budget must be >= 2".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// Start, goals, obstacles and objective of one query.
#[derive(Clone, Debug)]
pub struct PlanningProblem<'a> {
    pub start: JointState,
    pub goals: Vec<JointState>,
    pub scene: Scene,
    pub objective: Objective<'a>,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub state: JointState,
    pub markers: MarkerFrame,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Infinite while the node is not connected to the root.
    pub cost_to_come: f64,
    pub edge_cost: f64,
    /// Score of the prefix ending at this node; 0 for the root.
    pub cached_score: f64,
    pub is_goal: bool,
}

impl TreeNode {
    pub fn is_connected(&self) -> bool {
        self.cost_to_come.is_finite()
    }
}

/// Candidate connection `parent -> child` with its resulting costs.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    parent: usize,
    edge: f64,
    score: f64,
    total: f64,
}

/// The search tree with objective-aware cost bookkeeping.
pub struct Tree<'a> {
    chain: &'a KinematicChain,
    objective: Objective<'a>,
    rewire_mode: RewireMode,
    eval_cap: usize,
    nodes: Vec<TreeNode>,
    discriminator_calls: usize,
}

impl<'a> Tree<'a> {
    pub fn new(
        chain: &'a KinematicChain,
        root: JointState,
        objective: Objective<'a>,
        rewire_mode: RewireMode,
        eval_cap: usize,
    ) -> Result<Self> {
        chain.check_dim(&root)?;
        let markers = chain.markers_unchecked(&root);
        Ok(Self {
            chain,
            objective,
            rewire_mode,
            eval_cap,
            nodes: vec![TreeNode {
                state: root,
                markers,
                parent: None,
                children: Vec::new(),
                cost_to_come: 0.0,
                edge_cost: 0.0,
                cached_score: 0.0,
                is_goal: false,
            }],
            discriminator_calls: 0,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn discriminator_calls(&self) -> usize {
        self.discriminator_calls
    }

    fn effective_mode(&self) -> RewireMode {
        if self.discriminator_calls >= self.eval_cap {
            RewireMode::Frozen
        } else {
            self.rewire_mode
        }
    }

    /// Marker frames from the root to `node`.
    pub fn prefix_frames(&self, node: usize) -> Vec<MarkerFrame> {
        let mut out = Vec::new();
        let mut cur = Some(node);
        while let Some(i) = cur {
            out.push(self.nodes[i].markers);
            cur = self.nodes[i].parent;
        }
        out.reverse();
        out
    }

    /// Joint states from the root to `node`.
    pub fn prefix_states(&self, node: usize) -> Vec<JointState> {
        let mut out = Vec::new();
        let mut cur = Some(node);
        while let Some(i) = cur {
            out.push(self.nodes[i].state.clone());
            cur = self.nodes[i].parent;
        }
        out.reverse();
        out
    }

    pub fn is_ancestor(&self, ancestor: usize, node: usize) -> bool {
        let mut cur = Some(node);
        while let Some(i) = cur {
            if i == ancestor {
                return true;
            }
            cur = self.nodes[i].parent;
        }
        false
    }

    fn score_frames(&mut self, prefixes: &[Vec<MarkerFrame>]) -> Vec<f64> {
        let Objective::Adversarial { scorer, .. } = self.objective else {
            return vec![0.0; prefixes.len()];
        };
        let reprs: Vec<MotionRepr> = prefixes
            .iter()
            .map(|p| encode_frames(p).unwrap_or_else(|_| MotionRepr::zeros()))
            .collect();
        self.discriminator_calls += reprs.len();
        scorer.score_batch(&reprs)
    }

    /// Costs of attaching a state with `markers` below each of `parents`.
    fn candidates_for_child(
        &mut self,
        parents: &[usize],
        state: &[f64],
        markers: &MarkerFrame,
    ) -> Vec<Candidate> {
        let w = self.objective.length_weight();
        let scores = match self.objective {
            Objective::LengthOnly => vec![0.0; parents.len()],
            Objective::Adversarial { .. } => {
                let prefixes: Vec<Vec<MarkerFrame>> = parents
                    .iter()
                    .map(|p| {
                        let mut f = self.prefix_frames(*p);
                        f.push(*markers);
                        f
                    })
                    .collect();
                self.score_frames(&prefixes)
            }
        };
        parents
            .iter()
            .zip(scores)
            .map(|(&p, score)| {
                let parent = &self.nodes[p];
                let edge = w * joint_distance(&parent.state, state) + parent.cached_score - score;
                Candidate {
                    parent: p,
                    edge,
                    score,
                    total: parent.cost_to_come + edge,
                }
            })
            .collect()
    }

    /// Costs of re-attaching each of `children` below `parent`.
    fn candidates_below(&mut self, parent: usize, children: &[usize]) -> Vec<Candidate> {
        let w = self.objective.length_weight();
        let scores = match self.objective {
            Objective::LengthOnly => vec![0.0; children.len()],
            Objective::Adversarial { .. } => {
                let base = self.prefix_frames(parent);
                let prefixes: Vec<Vec<MarkerFrame>> = children
                    .iter()
                    .map(|c| {
                        let mut f = base.clone();
                        f.push(self.nodes[*c].markers);
                        f
                    })
                    .collect();
                self.score_frames(&prefixes)
            }
        };
        let p = &self.nodes[parent];
        children
            .iter()
            .zip(scores)
            .map(|(&c, score)| {
                let edge = w * joint_distance(&p.state, &self.nodes[c].state) + p.cached_score
                    - score;
                Candidate {
                    parent,
                    edge,
                    score,
                    total: p.cost_to_come + edge,
                }
            })
            .collect()
    }

    /// Edge cost of connecting `child_state` below `parent`.
    pub fn edge_cost(&mut self, parent: usize, child_state: &JointState) -> Result<f64> {
        self.chain.check_dim(child_state)?;
        if !self.nodes[parent].is_connected() {
            return Err(Error::PlanningFailed(format!(
                "node {parent} is not connected to the root"
            )));
        }
        let markers = self.chain.markers_unchecked(child_state);
        Ok(self.candidates_for_child(&[parent], child_state, &markers)[0].edge)
    }

    fn push_node(&mut self, state: JointState, markers: MarkerFrame, is_goal: bool) -> usize {
        self.nodes.push(TreeNode {
            state,
            markers,
            parent: None,
            children: Vec::new(),
            cost_to_come: f64::INFINITY,
            edge_cost: 0.0,
            cached_score: 0.0,
            is_goal,
        });
        self.nodes.len() - 1
    }

    fn link(&mut self, node: usize, c: &Candidate) {
        if let Some(old) = self.nodes[node].parent {
            self.nodes[old].children.retain(|x| *x != node);
        }
        self.nodes[c.parent].children.push(node);
        let n = &mut self.nodes[node];
        n.parent = Some(c.parent);
        n.edge_cost = c.edge;
        n.cached_score = c.score;
        n.cost_to_come = c.total;
    }

    /// Adds a node below `parent` and returns its index.
    pub fn add_node(&mut self, parent: usize, state: JointState) -> Result<usize> {
        self.chain.check_dim(&state)?;
        if !self.nodes[parent].is_connected() {
            return Err(Error::PlanningFailed(format!(
                "node {parent} is not connected to the root"
            )));
        }
        let markers = self.chain.markers_unchecked(&state);
        let c = self.candidates_for_child(&[parent], &state, &markers)[0];
        let idx = self.push_node(state, markers, false);
        self.link(idx, &c);
        Ok(idx)
    }

    /// Adds a node that is not yet connected to the root (e.g. a goal).
    pub fn add_detached(&mut self, state: JointState, is_goal: bool) -> Result<usize> {
        self.chain.check_dim(&state)?;
        let markers = self.chain.markers_unchecked(&state);
        Ok(self.push_node(state, markers, is_goal))
    }

    /// Moves `node` below `new_parent`, re-scoring its own edge and then its
    /// subtree. Returns the number of descendant re-evaluations.
    pub fn reparent(&mut self, node: usize, new_parent: usize) -> Result<usize> {
        if node == 0 || self.is_ancestor(node, new_parent) {
            return Err(Error::PlanningFailed(format!(
                "reparenting {node} below {new_parent} would create a cycle"
            )));
        }
        let c = self.candidates_below(new_parent, &[node])[0];
        self.link(node, &c);
        Ok(self.rewire_propagate(node))
    }

    /// Updates every descendant of `node` after `node`'s own cost changed.
    /// Returns the number of discriminator re-evaluations performed.
    pub fn rewire_propagate(&mut self, node: usize) -> usize {
        let mode = self.effective_mode();
        let adversarial = matches!(self.objective, Objective::Adversarial { .. });
        let mut evaluations = 0;
        let mut queue = VecDeque::from([node]);
        while let Some(u) = queue.pop_front() {
            let children = self.nodes[u].children.clone();
            if children.is_empty() {
                continue;
            }
            if adversarial && mode == RewireMode::Full {
                let cands = self.candidates_below(u, &children);
                evaluations += children.len();
                for (c, cand) in children.iter().zip(cands) {
                    let n = &mut self.nodes[*c];
                    n.edge_cost = cand.edge;
                    n.cached_score = cand.score;
                    n.cost_to_come = cand.total;
                }
            } else {
                let base = self.nodes[u].cost_to_come;
                for c in &children {
                    let n = &mut self.nodes[*c];
                    n.cost_to_come = base + n.edge_cost;
                }
            }
            queue.extend(children);
        }
        evaluations
    }
}

/// Outcome of a successful query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cost: f64,
    /// Score of the whole motion (adversarial objective only).
    pub final_score: Option<f64>,
    /// Joint-space path length.
    pub length: f64,
    pub node_count: usize,
    pub seed: u64,
    pub discriminator_calls: usize,
    pub goal_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub motion: Vec<JointState>,
    pub report: CostReport,
    /// (tree size, best goal cost) whenever the best cost changed.
    pub best_cost_trace: Vec<(usize, f64)>,
}

fn ln_gamma_half(twice_x: usize) -> f64 {
    // ln Gamma(twice_x / 2) for positive integer twice_x.
    let mut acc = if twice_x % 2 == 0 {
        0.0
    } else {
        0.5 * std::f64::consts::PI.ln()
    };
    let mut k = twice_x;
    while k > 2 {
        k -= 2;
        acc += (k as f64 / 2.0).ln();
    }
    acc
}

/// RRT* neighbourhood constant for a box of the given side lengths.
pub fn rrt_star_gamma(sides: &[f64]) -> f64 {
    let d = sides.len() as f64;
    let ln_volume: f64 = sides.iter().map(|s| s.ln()).sum();
    // Unit ball volume: pi^(d/2) / Gamma(d/2 + 1).
    let ln_ball = 0.5 * d * std::f64::consts::PI.ln() - ln_gamma_half(sides.len() + 2);
    2.0 * (1.0 + 1.0 / d).powf(1.0 / d) * ((ln_volume - ln_ball) / d).exp()
}

/// Single-query RRT* planner.
pub struct RrtStar<'a> {
    chain: &'a KinematicChain,
    config: PlannerConfig,
    scene: Scene,
    tree: Tree<'a>,
    goals: Vec<usize>,
    rng: ChaCha8Rng,
    lo: Vec<f64>,
    hi: Vec<f64>,
    gamma: f64,
    seed: u64,
    best_cost_trace: Vec<(usize, f64)>,
    iterations: usize,
}

impl<'a> RrtStar<'a> {
    pub fn new(
        chain: &'a KinematicChain,
        problem: &PlanningProblem<'a>,
        config: &PlannerConfig,
    ) -> Result<Self> {
        config.validate()?;
        problem.scene.validate()?;
        if problem.goals.is_empty() {
            return Err(Error::InvalidConfig("no goal states".into()));
        }
        chain.check_dim(&problem.start)?;
        if !chain.within_limits(&problem.start) {
            return Err(Error::InvalidConfig("start outside joint limits".into()));
        }
        if problem
            .scene
            .markers_in_collision(&chain.markers_unchecked(&problem.start))
        {
            return Err(Error::InCollision("start state".into()));
        }
        let mut free_goals = Vec::new();
        for g in &problem.goals {
            chain.check_dim(g)?;
            if !chain.within_limits(g) {
                return Err(Error::InvalidConfig("goal outside joint limits".into()));
            }
            if !problem.scene.markers_in_collision(&chain.markers_unchecked(g)) {
                free_goals.push(g.clone());
            }
        }
        if free_goals.is_empty() {
            return Err(Error::InCollision("every goal state".into()));
        }
        let mut tree = Tree::new(
            chain,
            problem.start.clone(),
            problem.objective,
            config.rewire_mode,
            config.eval_cap,
        )?;
        let mut goals = Vec::new();
        for g in problem.goals.iter() {
            // Goals in collision stay out of the tree but keep their index.
            if problem.scene.markers_in_collision(&chain.markers_unchecked(g)) {
                goals.push(usize::MAX);
            } else {
                goals.push(tree.add_detached(g.clone(), true)?);
            }
        }
        let lo = chain.lower_limits();
        let hi = chain.upper_limits();
        let sides: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        let gamma = config.gamma.unwrap_or_else(|| rrt_star_gamma(&sides));
        Ok(Self {
            chain,
            config: config.clone(),
            scene: problem.scene.clone(),
            tree,
            goals,
            rng: ChaCha8Rng::seed_from_u64(problem.rng_seed),
            lo,
            hi,
            gamma,
            seed: problem.rng_seed,
            best_cost_trace: Vec::new(),
            iterations: 0,
        })
    }

    pub fn tree(&self) -> &Tree<'a> {
        &self.tree
    }

    fn connected_count(&self) -> usize {
        self.tree.nodes.iter().filter(|n| n.is_connected()).count()
    }

    fn radius(&self, n: usize) -> f64 {
        let d = self.chain.dof() as f64;
        let n = n.max(1) as f64;
        (self.config.step_max * 4.0).min(self.gamma * (n.ln() / n).powf(1.0 / d))
    }

    fn edge_free(&self, a: &[f64], b: &[f64]) -> bool {
        !edge_in_collision(self.chain, a, b, &self.scene, self.config.resolution)
    }

    fn best_goal(&self) -> Option<(usize, usize)> {
        self.goals
            .iter()
            .enumerate()
            .filter(|(_, g)| **g != usize::MAX && self.tree.nodes[**g].is_connected())
            .min_by(|a, b| {
                self.tree.nodes[*a.1]
                    .cost_to_come
                    .total_cmp(&self.tree.nodes[*b.1].cost_to_come)
            })
            .map(|(gi, node)| (gi, *node))
    }

    fn record_best(&mut self) {
        if let Some((_, node)) = self.best_goal() {
            let cost = self.tree.nodes[node].cost_to_come;
            if self.best_cost_trace.last().is_none_or(|(_, c)| *c != cost) {
                self.best_cost_trace.push((self.tree.len(), cost));
            }
        }
    }

    fn sample(&mut self) -> Vec<f64> {
        if self.rng.random::<f64>() < self.config.goal_bias {
            let live: Vec<usize> = self
                .goals
                .iter()
                .copied()
                .filter(|g| *g != usize::MAX)
                .collect();
            let g = live[self.rng.random_range(0..live.len())];
            return self.tree.nodes[g].state.0.clone();
        }
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| self.rng.random_range(*l..=*h))
            .collect()
    }

    fn nearest(&self, q: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.tree.nodes.iter().enumerate() {
            if !n.is_connected() {
                continue;
            }
            let d: f64 = n.state.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn near(&self, q: &[f64], radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        self.tree
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| {
                n.state
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= r2
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Connects goals that lie within one step of the start.
    fn connect_trivial_goals(&mut self) {
        let start = self.tree.nodes[0].state.clone();
        let goals: Vec<usize> = self.goals.iter().copied().filter(|g| *g != usize::MAX).collect();
        for g in goals {
            let gs = self.tree.nodes[g].state.clone();
            if start.distance(&gs) <= self.config.step_max && self.edge_free(&start, &gs) {
                let markers = self.tree.nodes[g].markers;
                let c = self.tree.candidates_for_child(&[0], &gs, &markers)[0];
                self.tree.link(g, &c);
            }
        }
        self.record_best();
    }

    /// Lower bound on the length-only cost: straight line to the closest goal.
    fn length_lower_bound(&self) -> f64 {
        let start = &self.tree.nodes[0].state;
        self.goals
            .iter()
            .filter(|g| **g != usize::MAX)
            .map(|g| start.distance(&self.tree.nodes[*g].state))
            .fold(f64::INFINITY, f64::min)
    }

    /// One sample-steer-connect-rewire iteration.
    pub fn step(&mut self) {
        self.iterations += 1;
        let sample = self.sample();
        let nearest = self.nearest(&sample);
        let from = self.tree.nodes[nearest].state.clone();
        let dist = joint_distance(&from, &sample);
        let new_state: Vec<f64> = if dist <= self.config.step_max {
            sample
        } else {
            let t = self.config.step_max / dist;
            from.iter().zip(&sample).map(|(a, b)| a + (b - a) * t).collect()
        };
        if dist == 0.0 || !self.edge_free(&from, &new_state) {
            return;
        }
        let markers = self.chain.markers_unchecked(&new_state);
        let radius = self.radius(self.connected_count());
        let mut neighbours = self.near(&new_state, radius);
        if !neighbours.contains(&nearest) {
            neighbours.push(nearest);
        }

        // An exact hit on an unconnected goal connects that goal node.
        let goal_hit = self.goals.iter().copied().find(|g| {
            *g != usize::MAX && self.tree.nodes[*g].state.0 == new_state
        });
        let target = match goal_hit {
            Some(g) if self.tree.nodes[g].is_connected() => return,
            other => other,
        };

        let parents: Vec<usize> = neighbours
            .iter()
            .copied()
            .filter(|i| Some(*i) != target && self.tree.nodes[*i].is_connected())
            .collect();
        let mut cands = self.tree.candidates_for_child(&parents, &new_state, &markers);
        cands.sort_by(|a, b| a.total.total_cmp(&b.total).then(a.parent.cmp(&b.parent)));
        let chosen = cands.iter().copied().find(|c| {
            c.parent == nearest
                || self.edge_free(&self.tree.nodes[c.parent].state, &new_state)
        });
        let Some(chosen) = chosen else {
            return;
        };
        let new_idx = match target {
            Some(g) => g,
            None => self.tree.push_node(JointState(new_state.clone()), markers, false),
        };
        self.tree.link(new_idx, &chosen);

        // Rewire neighbours through the new node.
        let rewire: Vec<usize> = neighbours
            .iter()
            .copied()
            .filter(|i| *i != new_idx && *i != chosen.parent && !self.tree.is_ancestor(*i, new_idx))
            .collect();
        if !rewire.is_empty() {
            let cands = self.tree.candidates_below(new_idx, &rewire);
            for (node, cand) in rewire.iter().zip(cands) {
                if cand.total < self.tree.nodes[*node].cost_to_come
                    && self.edge_free(&new_state, &self.tree.nodes[*node].state)
                {
                    self.tree.link(*node, &cand);
                    self.tree.rewire_propagate(*node);
                }
            }
        }
        self.record_best();
    }

    /// Grows the tree until the node budget or iteration cap is reached.
    pub fn run(&mut self) -> Result<PlanResult> {
        self.connect_trivial_goals();
        if matches!(self.tree.objective, Objective::LengthOnly) {
            if let Some((_, node)) = self.best_goal() {
                if self.tree.nodes[node].cost_to_come <= self.length_lower_bound() {
                    return self.result();
                }
            }
        }
        let max_iterations = self.config.budget * self.config.max_iterations_factor.max(1);
        while self.tree.len() < self.config.budget && self.iterations < max_iterations {
            self.step();
        }
        self.result()
    }

    pub fn result(&self) -> Result<PlanResult> {
        let Some((goal_index, node)) = self.best_goal() else {
            return Err(Error::PlanningFailed(format!(
                "no goal connected after {} nodes",
                self.tree.len()
            )));
        };
        let mut motion = self.tree.prefix_states(node);
        if motion.len() == 1 {
            motion.push(motion[0].clone());
        }
        let length = motion.windows(2).map(|w| w[0].distance(&w[1])).sum();
        let n = &self.tree.nodes[node];
        Ok(PlanResult {
            report: CostReport {
                cost: n.cost_to_come,
                // Frozen rewiring can leave the cached score stale.
                final_score: match self.tree.objective {
                    Objective::Adversarial { scorer, .. } => Some(
                        encode_frames(&self.tree.prefix_frames(node))
                            .map(|r| scorer.score_batch(&[r])[0])
                            .unwrap_or(n.cached_score),
                    ),
                    Objective::LengthOnly => None,
                },
                length,
                node_count: self.tree.len(),
                seed: self.seed,
                discriminator_calls: self.tree.discriminator_calls,
                goal_index,
            },
            motion,
            best_cost_trace: self.best_cost_trace.clone(),
        })
    }
}

/// Plans one query.
pub fn plan(
    chain: &KinematicChain,
    problem: &PlanningProblem<'_>,
    config: &PlannerConfig,
) -> Result<PlanResult> {
    RrtStar::new(chain, problem, config)?.run()
}

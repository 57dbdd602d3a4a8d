//! Grasp model, search policies and the episode loop.
//!
//! An object can be grasped when at least `tau_grasp` of its (in-workspace)
//! amodal area is visible from above. Grasping a graspable object lifts it out
//! and the rest re-settle; grasping anything else leaves the scene unchanged.
//! The reward is 1 exactly when the target is lifted.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heapgen::{self, HeapConfig};
use crate::occupancy::{self, CandidateGrid, OccupancyDistribution};
use crate::scene::{ObjectId, Scene};
use crate::sensor::{self, Camera};

pub const ROLLOUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    XRay,
    Largest,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::XRay, PolicyKind::Largest, PolicyKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::XRay => "xray",
            PolicyKind::Largest => "largest",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "xray" => Ok(PolicyKind::XRay),
            "largest" => Ok(PolicyKind::Largest),
            "random" => Ok(PolicyKind::Random),
            _ => Err(Error::InvalidConfig(format!("unknown policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub heap: HeapConfig,
    pub grid: CandidateGrid,
    pub horizon: u32,
    pub gamma: f64,
    pub tau_grasp: f64,
    pub camera: Camera,
    /// Compute occupancy supports for every policy, not just X-Ray.
    pub track_support: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            heap: HeapConfig::simulation(),
            grid: CandidateGrid::default(),
            horizon: 10,
            gamma: 0.95,
            tau_grasp: 0.75,
            camera: Camera::default(),
            track_support: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.heap.validate()?;
        self.grid.validate()?;
        if !(0.0..=1.0).contains(&self.tau_grasp) {
            return Err(Error::InvalidConfig("tau_grasp must be in [0, 1]".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GraspAction {
    pub object_id: ObjectId,
}

/// Visible and total pixel counts of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exposure {
    pub id: ObjectId,
    pub is_target: bool,
    pub modal: usize,
    pub amodal: usize,
}

impl Exposure {
    pub fn graspable(&self, tau: f64) -> bool {
        self.amodal > 0 && self.modal as f64 >= tau * self.amodal as f64
    }
}

/// Exposure of every instance, in placement order.
pub fn exposures(scene: &Scene) -> Vec<Exposure> {
    let owner = sensor::visibility_map(scene);
    let mut modal = vec![0usize; scene.len()];
    for k in owner.into_iter().flatten() {
        modal[k as usize] += 1;
    }
    scene
        .instances()
        .iter()
        .zip(modal)
        .map(|(o, m)| Exposure {
            id: o.id,
            is_target: o.is_target,
            modal: m,
            amodal: o.amodal_indices().len(),
        })
        .collect()
}

pub fn graspable(scene: &Scene, id: ObjectId, tau: f64) -> Result<bool> {
    scene.instance(id)?;
    Ok(exposures(scene)
        .into_iter()
        .find(|e| e.id == id)
        .is_some_and(|e| e.graspable(tau)))
}

/// `sum_p dist(p) * modal_i(p)` for every instance, sorted by descending
/// score then id.
pub fn score_masks(dist: &OccupancyDistribution, scene: &Scene) -> Result<Vec<(ObjectId, f64)>> {
    scene.dims().check_same(dist.dims())?;
    let owner = sensor::visibility_map(scene);
    let mut scores = vec![0.0f64; scene.len()];
    for (o, &v) in owner.iter().zip(dist.values()) {
        if let Some(k) = o {
            scores[*k as usize] += v as f64;
        }
    }
    let mut out: Vec<(ObjectId, f64)> = scene.instances().iter().map(|o| o.id).zip(scores).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

fn largest_graspable(exp: &[Exposure], tau: f64) -> Option<GraspAction> {
    exp.iter()
        .filter(|e| e.graspable(tau))
        .max_by(|a, b| a.modal.cmp(&b.modal).then(b.id.cmp(&a.id)))
        .map(|e| GraspAction { object_id: e.id })
}

/// Highest-scoring graspable instance. Falls back to the largest graspable
/// modal mask when every graspable score is zero; `None` when nothing is
/// graspable.
pub fn xray_action(scene: &Scene, dist: &OccupancyDistribution, tau: f64) -> Result<Option<GraspAction>> {
    let exp = exposures(scene);
    let scores = score_masks(dist, scene)?;
    let best = scores.iter().find(|(id, _)| {
        exp.iter().any(|e| e.id == *id && e.graspable(tau))
    });
    Ok(match best {
        Some(&(id, s)) if s > 0.0 => Some(GraspAction { object_id: id }),
        _ => largest_graspable(&exp, tau),
    })
}

fn graspable_target(exp: &[Exposure], tau: f64) -> Option<GraspAction> {
    exp.iter()
        .find(|e| e.is_target && e.graspable(tau))
        .map(|e| GraspAction { object_id: e.id })
}

/// The target if graspable, else the graspable instance with the largest
/// modal mask (lowest id on ties).
pub fn largest_action(scene: &Scene, tau: f64) -> Option<GraspAction> {
    let exp = exposures(scene);
    graspable_target(&exp, tau).or_else(|| largest_graspable(&exp, tau))
}

/// The target if graspable, else a uniformly chosen graspable instance.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R, scene: &Scene, tau: f64) -> Option<GraspAction> {
    let exp = exposures(scene);
    if let Some(a) = graspable_target(&exp, tau) {
        return Some(a);
    }
    let mut ids: Vec<ObjectId> = exp.iter().filter(|e| e.graspable(tau)).map(|e| e.id).collect();
    ids.sort();
    if ids.is_empty() {
        return None;
    }
    Some(GraspAction {
        object_id: ids[rng.random_range(0..ids.len())],
    })
}

/// Applies a grasp. Returns the next scene and the reward.
pub fn step(scene: &Scene, action: Option<GraspAction>, tau: f64) -> Result<(Scene, u8)> {
    let Some(action) = action else {
        return Ok((scene.clone(), 0));
    };
    let inst = scene.instance(action.object_id)?;
    if !graspable(scene, action.object_id, tau)? {
        return Ok((scene.clone(), 0));
    }
    let reward = inst.is_target as u8;
    Ok((scene.remove(action.object_id)?, reward))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub k: u32,
    /// `None` when no object was graspable.
    pub action: Option<ObjectId>,
    pub graspable: bool,
    pub reward: u8,
    pub target_visible_before: u64,
    /// `None` once the target has been lifted.
    pub target_visible_after: Option<u64>,
    pub support_before: Option<u64>,
    pub support_after: Option<u64>,
    pub surrogate_reward: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RolloutRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub policy: PolicyKind,
    pub initial_objects: usize,
    pub success: bool,
    pub action_count: u32,
    pub gamma: f64,
    pub discounted_return: f64,
    pub steps: Vec<StepRecord>,
}

impl RolloutRecord {
    pub fn initial_support(&self) -> Option<u64> {
        self.steps.first().and_then(|s| s.support_before)
    }

    /// Last support recorded after a step.
    pub fn final_support(&self) -> Option<u64> {
        self.steps.iter().rev().find_map(|s| s.support_after)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Generates the heap for `seed` and runs one episode on it.
pub fn rollout(seed: u64, policy: PolicyKind, config: &SearchConfig) -> Result<RolloutRecord> {
    config.validate()?;
    let scene = heapgen::sample_heap(seed, &config.heap)?;
    run_episode(scene, seed, policy, config)
}

/// Policy randomness for `seed`, independent of the heap stream.
pub fn policy_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Observe, act and step until the target is lifted or the horizon runs out.
pub fn run_episode(
    scene: Scene,
    seed: u64,
    policy: PolicyKind,
    config: &SearchConfig,
) -> Result<RolloutRecord> {
    run_episode_with(scene, seed, policy, config, |_, _, _| {})
}

/// [`run_episode`] with a hook called before every step with the step index,
/// the scene and the current distribution (when one was computed).
pub fn run_episode_with(
    mut scene: Scene,
    seed: u64,
    policy: PolicyKind,
    config: &SearchConfig,
    mut on_step: impl FnMut(u32, &Scene, Option<&OccupancyDistribution>),
) -> Result<RolloutRecord> {
    let tau = config.tau_grasp;
    let needs_dist = policy == PolicyKind::XRay || config.track_support;
    let mut rng = policy_rng(seed);
    let initial_objects = scene.len();
    let distribution = |s: &Scene| occupancy::occupancy_distribution(s, &config.grid);

    let mut dist = if needs_dist { Some(distribution(&scene)?) } else { None };
    let mut steps = Vec::new();
    let mut success = false;
    let mut discounted = 0.0;
    for k in 0..config.horizon {
        on_step(k, &scene, dist.as_ref());
        let target = scene.target().ok_or(Error::NoTarget)?.id;
        let visible_before = sensor::modal_mask(&scene, target)?.count() as u64;
        let action = match policy {
            PolicyKind::XRay => xray_action(&scene, dist.as_ref().expect("x-ray has a distribution"), tau)?,
            PolicyKind::Largest => largest_action(&scene, tau),
            PolicyKind::Random => random_action(&mut rng, &scene, tau),
        };
        let was_graspable = match action {
            Some(a) => graspable(&scene, a.object_id, tau)?,
            None => false,
        };
        let (next, reward) = step(&scene, action, tau)?;

        let support_before = dist.as_ref().map(occupancy::support_size);
        let next_dist = match (&dist, reward, was_graspable) {
            (Some(d), 0, false) => Some(d.clone()),
            (Some(_), 0, true) => Some(distribution(&next)?),
            _ => None,
        };
        let support_after = next_dist.as_ref().map(occupancy::support_size);
        let surrogate = match (&dist, &next_dist) {
            (Some(a), Some(b)) => Some(occupancy::surrogate_reward(a, b)?),
            _ => None,
        };
        let visible_after = match next.target() {
            Some(t) => Some(sensor::modal_mask(&next, t.id)?.count() as u64),
            None => None,
        };
        discounted += config.gamma.powi(k as i32) * reward as f64;
        steps.push(StepRecord {
            k,
            action: action.map(|a| a.object_id),
            graspable: was_graspable,
            reward,
            target_visible_before: visible_before,
            target_visible_after: visible_after,
            support_before,
            support_after,
            surrogate_reward: surrogate,
        });
        scene = next;
        dist = next_dist;
        if reward == 1 {
            success = true;
            break;
        }
    }
    Ok(RolloutRecord {
        schema_version: ROLLOUT_SCHEMA_VERSION,
        seed,
        policy,
        initial_objects,
        success,
        action_count: steps.len() as u32,
        gamma: config.gamma,
        discounted_return: discounted,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::raster::Dims;
    use crate::scene::{Footprint, Pose};

    fn rect(w: usize, h: usize, t: f64) -> Arc<Footprint> {
        Arc::new(Footprint::rectangle(w, h, t).unwrap())
    }

    fn small_config() -> SearchConfig {
        SearchConfig {
            grid: CandidateGrid::covering(Dims::new(16, 12), 1, 16),
            ..SearchConfig::default()
        }
    }

    #[test]
    fn policy_names_parse() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("X-Ray".parse::<PolicyKind>().unwrap(), PolicyKind::XRay);
        assert!("greedy".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn lone_and_buried_graspability() {
        let s = Scene::new(Dims::new(10, 10), 1.0);
        let (s, a) = s.place(rect(2, 2, 1.0), Pose::new(4, 4, 0, 16), false).unwrap();
        assert!(graspable(&s, a, 0.75).unwrap());
        let (s, _) = s.place(rect(4, 4, 1.0), Pose::new(3, 3, 0, 16), false).unwrap();
        assert!(!graspable(&s, a, 0.75).unwrap());
        assert!(graspable(&s, ObjectId(99), 0.75).is_err());
    }

    #[test]
    fn exposure_threshold_is_inclusive() {
        // 4x4 object with a 2x2 corner covered: exactly 75% visible.
        let s = Scene::new(Dims::new(10, 10), 1.0);
        let (s, a) = s.place(rect(4, 4, 1.0), Pose::new(0, 0, 0, 16), false).unwrap();
        let (s, _) = s.place(rect(2, 2, 1.0), Pose::new(0, 0, 0, 16), false).unwrap();
        assert!(graspable(&s, a, 0.75).unwrap());
        assert!(!graspable(&s, a, 0.76).unwrap());
    }

    #[test]
    fn nothing_graspable_is_no_action() {
        let s = Scene::new(Dims::new(10, 10), 1.0);
        let (s, _) = s.place(rect(2, 2, 1.0), Pose::new(4, 4, 0, 16), true).unwrap();
        let dist = occupancy::occupancy_distribution(&s, &CandidateGrid::covering(s.dims(), 1, 4)).unwrap();
        assert!(xray_action(&s, &dist, 1.1).unwrap().is_none());
        assert!(largest_action(&s, 1.1).is_none());
        assert!(random_action(&mut policy_rng(0), &s, 1.1).is_none());
        let (next, r) = step(&s, None, 0.75).unwrap();
        assert_eq!((next, r), (s, 0));
    }

    #[test]
    fn step_rewards() {
        let s = heapgen::fixture_f1();
        let target = s.target().unwrap().id;
        let occluder = s.instances()[1].id;
        let (same, r) = step(&s, Some(GraspAction { object_id: target }), 0.75).unwrap();
        assert_eq!(r, 0);
        assert_eq!(same, s);
        let (next, r) = step(&s, Some(GraspAction { object_id: occluder }), 0.75).unwrap();
        assert_eq!(r, 0);
        assert!(next.instance(occluder).is_err());
        let (done, r) = step(&next, Some(GraspAction { object_id: target }), 0.75).unwrap();
        assert_eq!(r, 1);
        assert!(done.target().is_none());
    }

    #[test]
    fn exposed_target_succeeds_in_one_action() {
        let s = Scene::new(Dims::new(16, 12), 1.0);
        let (s, _) = s.place(rect(4, 2, 1.0), Pose::new(1, 1, 0, 16), true).unwrap();
        let (s, _) = s.place(rect(5, 5, 2.0), Pose::new(9, 5, 0, 16), false).unwrap();
        for p in PolicyKind::ALL {
            let rec = run_episode(s.clone(), 3, p, &small_config()).unwrap();
            assert!(rec.success, "{p}");
            assert_eq!(rec.action_count, 1);
            assert_eq!(rec.discounted_return, 1.0);
        }
    }

    #[test]
    fn horizon_bounds_failed_episode() {
        let mut cfg = small_config();
        cfg.horizon = 1;
        let rec = run_episode(heapgen::fixture_f1(), 0, PolicyKind::Largest, &cfg).unwrap();
        assert!(!rec.success);
        assert_eq!(rec.action_count, 1);
        assert_eq!(rec.discounted_return, 0.0);
    }
}

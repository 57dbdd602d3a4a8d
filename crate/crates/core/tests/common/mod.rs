//! Reference implementations shared by integration tests.
//!
//! Everything here is deliberately slow and direct: whole-image loops over
//! `rasterize` output with no prefix sums, runs, or parallelism.
#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xray_core::scene::{rasterize, Footprint, Pose, Scene};
use xray_core::{CandidateGrid, Dims, Mask};

/// Per-pixel top surface of every instance except `skip`, by direct max
/// over each instance's rasterized extrusion.
pub fn top_surface(scene: &Scene, skip: Option<u32>) -> Vec<f64> {
    let dims = scene.dims();
    let mut top = vec![scene.floor_height(); dims.len()];
    for inst in scene.instances() {
        if Some(inst.id.0) == skip {
            continue;
        }
        let m = rasterize(&inst.footprint, inst.pose, dims);
        let t = inst.rest_height + inst.footprint.thickness();
        for (i, &on) in m.as_slice().iter().enumerate() {
            if on && t > top[i] {
                top[i] = t;
            }
        }
    }
    top
}

/// Visible pixels of the instance at `index`: it covers the pixel and no
/// other covering instance is strictly higher, or equally high and later.
pub fn naive_modal(scene: &Scene, index: usize) -> Mask {
    let dims = scene.dims();
    let insts = scene.instances();
    let me = &insts[index];
    let my_top = me.rest_height + me.footprint.thickness();
    let masks: Vec<Mask> = insts.iter().map(|o| rasterize(&o.footprint, o.pose, dims)).collect();
    let mut out = Mask::empty(dims);
    for y in 0..dims.height {
        for x in 0..dims.width {
            if !masks[index].get(x, y) {
                continue;
            }
            let hidden = insts.iter().enumerate().any(|(j, o)| {
                let t = o.rest_height + o.footprint.thickness();
                j != index && masks[j].get(x, y) && (t > my_top || (t == my_top && j > index))
            });
            out.set(x, y, !hidden);
        }
    }
    out
}

pub struct NaiveDistribution {
    pub counts: Vec<u32>,
    pub values: Vec<f32>,
    pub matched: Vec<Pose>,
}

/// Triple loop over translations, rotations and pixels.
pub fn naive_distribution(scene: &Scene, grid: &CandidateGrid, threshold: f64) -> NaiveDistribution {
    let dims = scene.dims();
    let t_index = scene.instances().iter().position(|i| i.is_target).expect("target");
    let target = &scene.instances()[t_index];
    let others = top_surface(scene, Some(target.id.0));
    let observed = naive_modal(scene, t_index);
    let target_top = scene.floor_height() + target.footprint.thickness();

    let mut poses = Vec::new();
    for iy in 0..grid.n_ty {
        for ix in 0..grid.n_tx {
            for r in 0..grid.n_rot {
                poses.push(Pose::new(
                    (ix * grid.stride) as i32,
                    (iy * grid.stride) as i32,
                    r,
                    grid.n_rot,
                ));
            }
        }
    }
    if grid.include_true_pose {
        let tp = target.pose;
        let on_grid = poses.iter().any(|p| {
            p.tx == tp.tx
                && p.ty == tp.ty
                && (p.rot_bin as u64 * tp.n_rot as u64 == tp.rot_bin as u64 * p.n_rot as u64)
        });
        if !on_grid {
            poses.push(tp);
        }
    }

    let mut counts = vec![0u32; dims.len()];
    let mut matched = Vec::new();
    for pose in poses {
        let amodal = rasterize(&target.footprint, pose, dims);
        let (mut cand, mut obs, mut inter) = (0u64, 0u64, 0u64);
        for i in 0..dims.len() {
            let c = amodal.as_slice()[i] && target_top > others[i];
            let o = observed.as_slice()[i];
            cand += c as u64;
            obs += o as u64;
            inter += (c && o) as u64;
        }
        let ok = if cand == 0 && obs == 0 {
            true
        } else {
            inter as f64 / (cand + obs - inter) as f64 > threshold
        };
        if ok {
            matched.push(pose);
            for (c, &on) in counts.iter_mut().zip(amodal.as_slice()) {
                *c += on as u32;
            }
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let values = counts
        .iter()
        .map(|&c| if max == 0 { 0.0 } else { c as f32 / max as f32 })
        .collect();
    NaiveDistribution { counts, values, matched }
}

/// A random footprint: rectangle, L-shape or disc.
pub fn random_footprint(rng: &mut impl Rng, max_side: usize) -> Footprint {
    let t = rng.random_range(0.5..3.0);
    match rng.random_range(0..3) {
        0 => Footprint::rectangle(rng.random_range(1..=max_side), rng.random_range(1..=max_side), t),
        1 => {
            let w = rng.random_range(2..=max_side.max(2));
            let h = rng.random_range(2..=max_side.max(2));
            let arm = rng.random_range(1..w.min(h));
            Footprint::l_shape(w, h, arm, t)
        }
        _ => Footprint::disc(rng.random_range(1.0..max_side as f64 / 2.0 + 1.0), t),
    }
    .expect("valid footprint")
}

/// Target first, then `distractors` objects scattered near it so that
/// partial and full occlusion both occur.
pub fn random_scene(seed: u64, dims: Dims, distractors: usize, n_rot: u32) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (dims.width as i32, dims.height as i32);
    let target = Arc::new(Footprint::rectangle(rng.random_range(2..7), rng.random_range(2..5), rng.random_range(0.5..2.0)).unwrap());
    let tpose = Pose::new(rng.random_range(4..w - 4), rng.random_range(4..h - 4), rng.random_range(0..n_rot), n_rot);
    let (mut scene, _) = Scene::new(dims, 1.0).place(target, tpose, true).unwrap();
    for _ in 0..distractors {
        let fp = Arc::new(random_footprint(&mut rng, 16));
        let pose = Pose::new(
            tpose.tx + rng.random_range(-12..=12),
            tpose.ty + rng.random_range(-10..=10),
            rng.random_range(0..n_rot),
            n_rot,
        );
        if let Ok((s, _)) = scene.place(fp, pose, false) {
            scene = s;
        }
    }
    scene
}

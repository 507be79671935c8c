//! Synthetic stick figures with known joint locations, plus PCP/PCK.
//!
//! Every limb is drawn with the same intensity, so a lone segment does not
//! say which limb (or which side) it belongs to. Occluder patches hide
//! joints and distractor segments add limb-like clutter.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_tensors, save_tensors, Dtype};
use crate::error::{Error, Result};
use crate::graph::{JointGraph, PairDistances};
use crate::skeleton::*;
use crate::tensor::Tensor;

/// Limb lengths at scale 1, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub head: f64,
    pub shoulder_half: f64,
    pub torso: f64,
    pub hip_half: f64,
    pub upper_arm: f64,
    pub lower_arm: f64,
    pub upper_leg: f64,
    pub lower_leg: f64,
}

impl Default for Proportions {
    fn default() -> Self {
        Proportions {
            head: 6.0,
            shoulder_half: 5.0,
            torso: 17.0,
            hip_half: 3.5,
            upper_arm: 8.0,
            lower_arm: 7.5,
            upper_leg: 9.0,
            lower_leg: 8.5,
        }
    }
}

/// Angle ranges in degrees. Limb angles are measured from straight down,
/// positive away from the body's midline; lower limbs are relative to the
/// upper limb.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRanges {
    pub torso_tilt: (f64, f64),
    pub upper_arm: (f64, f64),
    pub lower_arm: (f64, f64),
    pub upper_leg: (f64, f64),
    pub lower_leg: (f64, f64),
}

impl Default for AngleRanges {
    fn default() -> Self {
        AngleRanges {
            torso_tilt: (-12.0, 12.0),
            upper_arm: (-40.0, 160.0),
            lower_arm: (-100.0, 100.0),
            upper_leg: (-15.0, 45.0),
            lower_leg: (-50.0, 20.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub scale: (f64, f64),
    pub proportions: Proportions,
    pub angles: AngleRanges,
    /// Per-joint probability of an occluder patch over the joint.
    pub occlusion: f64,
    /// Per-sample probability of distractor segments.
    pub distractors: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 100,
            image_size: 56,
            seed: 0,
            scale: (0.95, 1.05),
            proportions: Proportions::default(),
            angles: AngleRanges::default(),
            occlusion: 0.1,
            distractors: 0.5,
            noise: 0.1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("occlusion", self.occlusion), ("distractors", self.distractors)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise level {} must be a finite non-negative value", self.noise)));
        }
        if !(self.scale.0 > 0.0 && self.scale.0 <= self.scale.1) {
            return Err(Error::Config(format!("scale range {:?} invalid", self.scale)));
        }
        let a = &self.angles;
        for (name, (lo, hi)) in [
            ("torso_tilt", a.torso_tilt),
            ("upper_arm", a.upper_arm),
            ("lower_arm", a.lower_arm),
            ("upper_leg", a.upper_leg),
            ("lower_leg", a.lower_leg),
        ] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("angle range {name} = ({lo}, {hi}) invalid")));
            }
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointGt {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// Pose parameters the figure was drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub root: (f64, f64),
    pub scale: f64,
    /// Torso tilt, then upper/lower angles for right arm, left arm, right leg, left leg.
    pub angles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FigureSample {
    /// `[1, size, size]`, pixel `(x, y)` at `data[y * size + x]`.
    pub image: Tensor,
    pub joints: Vec<JointGt>,
    pub pose: Pose,
}

impl FigureSample {
    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.joints.iter().map(|j| (j.x, j.y)).collect()
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Joint positions relative to the neck at the origin (image y grows downward).
fn pose_joints(p: &Proportions, scale: f64, angles: &[f64]) -> [(f64, f64); JOINT_COUNT] {
    let rad = |d: f64| d.to_radians();
    let tilt = rad(angles[0]);
    // unit vectors: down the torso, and across toward image-right
    let down = (tilt.sin(), tilt.cos());
    let across = (down.1, -down.0);
    let at = |o: (f64, f64), d: (f64, f64), len: f64| (o.0 + d.0 * len * scale, o.1 + d.1 * len * scale);
    let mut j = [(0.0, 0.0); JOINT_COUNT];
    j[NECK] = (0.0, 0.0);
    j[HEAD] = at(j[NECK], (-down.0, -down.1), p.head);
    // the person's right side appears on image-left
    let side = |s: f64| (across.0 * s, across.1 * s);
    j[R_SHOULDER] = at(j[NECK], side(-1.0), p.shoulder_half);
    j[L_SHOULDER] = at(j[NECK], side(1.0), p.shoulder_half);
    let pelvis = at(j[NECK], down, p.torso);
    j[R_HIP] = at(pelvis, side(-1.0), p.hip_half);
    j[L_HIP] = at(pelvis, side(1.0), p.hip_half);
    // direction at `deg` from `down`, rotated outward toward `s`
    let limb = |deg: f64, s: f64| {
        let a = rad(deg);
        (down.0 * a.cos() + across.0 * s * a.sin(), down.1 * a.cos() + across.1 * s * a.sin())
    };
    let chains = [
        (R_SHOULDER, R_ELBOW, R_WRIST, -1.0, p.upper_arm, p.lower_arm, 1),
        (L_SHOULDER, L_ELBOW, L_WRIST, 1.0, p.upper_arm, p.lower_arm, 3),
        (R_HIP, R_KNEE, R_ANKLE, -1.0, p.upper_leg, p.lower_leg, 5),
        (L_HIP, L_KNEE, L_ANKLE, 1.0, p.upper_leg, p.lower_leg, 7),
    ];
    for (base, mid, end, s, l1, l2, k) in chains {
        let upper = angles[k];
        j[mid] = at(j[base], limb(upper, s), l1);
        j[end] = at(j[mid], limb(upper + angles[k + 1], s), l2);
    }
    j
}

/// Draws `max(img, v)` for a width-2 anti-aliased segment.
fn draw_segment(img: &mut [f64], size: usize, a: (f64, f64), b: (f64, f64), intensity: f64) {
    let pad = 2.0;
    let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + pad).ceil().max(0.0) as usize).min(size - 1);
    let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
    let y1 = ((a.1.max(b.1) + pad).ceil().max(0.0) as usize).min(size - 1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64, y as f64);
            let t = if len2 == 0.0 { 0.0 } else { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) };
            let d = ((px - a.0 - t * dx).powi(2) + (py - a.1 - t * dy).powi(2)).sqrt();
            let v = (1.5 - d).clamp(0.0, 1.0) * intensity;
            let p = &mut img[y * size + x];
            *p = p.max(v);
        }
    }
}

fn draw_disc(img: &mut [f64], size: usize, c: (f64, f64), r: f64, intensity: f64) {
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2)).sqrt();
            let v = (r + 0.5 - d).clamp(0.0, 1.0) * intensity;
            let p = &mut img[y * size + x];
            *p = p.max(v);
        }
    }
}

const MARGIN: f64 = 2.0;
const OCCLUDER_HALF: f64 = 3.0;
const OCCLUDER_LEVEL: f64 = 0.35;
const POSE_ATTEMPTS: usize = 200;

/// One sample from its own random stream.
pub fn generate_one(spec: &DatasetSpec, index: u64) -> Result<FigureSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let size = spec.image_size;
    let span = size as f64 - 1.0 - 2.0 * MARGIN;
    let a = &spec.angles;
    let mut found = None;
    let mut last_scale = spec.scale.0;
    for _ in 0..POSE_ATTEMPTS {
        let scale = uniform(&mut rng, spec.scale);
        last_scale = scale;
        let mut angles = vec![uniform(&mut rng, a.torso_tilt)];
        for _ in 0..2 {
            angles.push(uniform(&mut rng, a.upper_arm));
            angles.push(uniform(&mut rng, a.lower_arm));
        }
        for _ in 0..2 {
            angles.push(uniform(&mut rng, a.upper_leg));
            angles.push(uniform(&mut rng, a.lower_leg));
        }
        let rel = pose_joints(&spec.proportions, scale, &angles);
        let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
        for &(x, y) in &rel {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        let head_r = 0.5 * spec.proportions.head * scale;
        lo = (lo.0.min(rel[HEAD].0 - head_r), lo.1.min(rel[HEAD].1 - head_r));
        hi = (hi.0.max(rel[HEAD].0 + head_r), hi.1.max(rel[HEAD].1 + head_r));
        if hi.0 - lo.0 <= span && hi.1 - lo.1 <= span {
            found = Some((scale, angles, rel, lo, hi));
            break;
        }
    }
    let (scale, angles, rel, lo, hi) = found.ok_or(Error::ImageTooSmall { size, scale: last_scale })?;
    let root = (
        uniform(&mut rng, (MARGIN - lo.0, MARGIN + span - hi.0)),
        uniform(&mut rng, (MARGIN - lo.1, MARGIN + span - hi.1)),
    );
    let pos: Vec<(f64, f64)> = rel.iter().map(|&(x, y)| (x + root.0, y + root.1)).collect();

    let mut img = vec![0.0; size * size];
    for &(p, q) in TREE_EDGES.iter().filter(|&&(p, _)| p != HEAD) {
        draw_segment(&mut img, size, pos[p], pos[q], 1.0);
    }
    draw_segment(&mut img, size, pos[NECK], pos[HEAD], 1.0);
    draw_disc(&mut img, size, pos[HEAD], 0.5 * spec.proportions.head * scale, 1.0);

    if rng.gen_bool(spec.distractors) {
        let n = rng.gen_range(1..=2);
        for _ in 0..n {
            let c = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64));
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = spec.proportions.upper_arm * scale;
            let b = (c.0 + len * th.cos(), c.1 + len * th.sin());
            draw_segment(&mut img, size, c, b, 1.0);
        }
    }

    let mut joints: Vec<JointGt> = pos.iter().map(|&(x, y)| JointGt { x, y, visible: true }).collect();
    for j in joints.iter_mut() {
        if rng.gen_bool(spec.occlusion) {
            j.visible = false;
            let (cx, cy) = (j.x + rng.gen_range(-1.0..1.0), j.y + rng.gen_range(-1.0..1.0));
            let x0 = (cx - OCCLUDER_HALF).round().max(0.0) as usize;
            let y0 = (cy - OCCLUDER_HALF).round().max(0.0) as usize;
            let x1 = ((cx + OCCLUDER_HALF).round() as usize).min(size - 1);
            let y1 = ((cy + OCCLUDER_HALF).round() as usize).min(size - 1);
            for y in y0..=y1 {
                img[y * size + x0..=y * size + x1].fill(OCCLUDER_LEVEL);
            }
        }
    }

    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
        for p in img.iter_mut() {
            *p += normal.sample(&mut rng);
        }
    }

    Ok(FigureSample { image: Tensor::new(vec![1, size, size], img)?, joints, pose: Pose { root, scale, angles } })
}

/// `spec.count` samples; sample `i` uses stream `i` of the seeded generator.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<FigureSample>> {
    spec.validate()?;
    (0..spec.count as u64).map(|i| generate_one(spec, i)).collect()
}

/// Euclidean distances per unordered vertex pair per sample.
pub fn pairwise_distance_stats(samples: &[FigureSample], graph: &JointGraph) -> Result<PairDistances> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut d = PairDistances::new();
    for s in samples {
        let pos = graph.vertex_positions(&s.positions());
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                d.push(i, j, dist(pos[i], pos[j]));
            }
        }
    }
    Ok(d)
}

pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcpReport {
    pub per_limb: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub per_joint: Vec<f64>,
    pub mean: f64,
}

fn check_aligned(pred: &[Vec<(f64, f64)>], gt: &[Vec<(f64, f64)>]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pred.len() != gt.len() || pred.iter().zip(gt).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape("predictions and ground truth are not aligned".into()));
    }
    Ok(())
}

/// A limb is detected when both endpoint errors are `<= threshold * limb length`.
/// Rates are per limb over samples, and `mean` averages the limbs.
pub fn pcp(pred: &[Vec<(f64, f64)>], gt: &[Vec<(f64, f64)>], limbs: &[(usize, usize)], threshold: f64) -> Result<PcpReport> {
    check_aligned(pred, gt)?;
    let mut hits = vec![0usize; limbs.len()];
    for (p, g) in pred.iter().zip(gt) {
        for (k, &(a, b)) in limbs.iter().enumerate() {
            let len = dist(g[a], g[b]);
            if len == 0.0 {
                return Err(Error::ZeroLengthLimb(a, b));
            }
            let tol = threshold * len;
            if dist(p[a], g[a]) <= tol && dist(p[b], g[b]) <= tol {
                hits[k] += 1;
            }
        }
    }
    let per_limb: Vec<f64> = hits.iter().map(|&h| h as f64 / pred.len() as f64).collect();
    let mean = per_limb.iter().sum::<f64>() / per_limb.len().max(1) as f64;
    Ok(PcpReport { per_limb, mean })
}

/// A joint is correct when its error is `<= threshold * normalizer` of its sample.
pub fn pck(pred: &[Vec<(f64, f64)>], gt: &[Vec<(f64, f64)>], normalizers: &[f64], threshold: f64) -> Result<PckReport> {
    check_aligned(pred, gt)?;
    if normalizers.len() != pred.len() {
        return Err(Error::Shape("one normalizer per sample".into()));
    }
    let n_joints = gt[0].len();
    let mut hits = vec![0usize; n_joints];
    for ((p, g), &norm) in pred.iter().zip(gt).zip(normalizers) {
        if !(norm > 0.0) {
            return Err(Error::NonPositiveNormalizer(norm));
        }
        for j in 0..n_joints.min(g.len()) {
            if dist(p[j], g[j]) <= threshold * norm {
                hits[j] += 1;
            }
        }
    }
    let per_joint: Vec<f64> = hits.iter().map(|&h| h as f64 / pred.len() as f64).collect();
    let mean = per_joint.iter().sum::<f64>() / per_joint.len().max(1) as f64;
    Ok(PckReport { per_joint, mean })
}

/// Neck to hip-midpoint distance.
pub fn torso_length(joints: &[(f64, f64)]) -> f64 {
    let mid = ((joints[R_HIP].0 + joints[L_HIP].0) / 2.0, (joints[R_HIP].1 + joints[L_HIP].1) / 2.0);
    dist(joints[NECK], mid)
}

/// Averages per-limb PCP rates into the named limb groups (for the standard skeleton limb order).
pub fn pcp_groups(per_limb: &[f64]) -> Vec<(&'static str, f64)> {
    let mut k = 0;
    LIMB_GROUPS
        .iter()
        .map(|(name, limbs)| {
            let r = per_limb[k..k + limbs.len()].iter().sum::<f64>() / limbs.len() as f64;
            k += limbs.len();
            (*name, r)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    spec: DatasetSpec,
    samples: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    joints: Vec<JointGt>,
    pose: Pose,
}

pub const MANIFEST: &str = "manifest.json";

/// Writes `manifest.json`, one tensor-container file per sample and, when asked, PGM previews.
pub fn save_dataset(dir: &Path, spec: &DatasetSpec, samples: &[FigureSample], pgm: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let file = format!("sample_{i:05}.crf");
        save_tensors(dir.join(&file), &[("image".to_string(), s.image.clone())], Dtype::F32)?;
        if pgm {
            write_pgm(&dir.join(format!("sample_{i:05}.pgm")), &s.image)?;
        }
        entries.push(ManifestEntry { file, joints: s.joints.clone(), pose: s.pose.clone() });
    }
    let manifest = Manifest { spec: spec.clone(), samples: entries };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetSpec, Vec<FigureSample>)> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in manifest.samples {
        let mut tensors = load_tensors(dir.join(&e.file))?;
        let idx = tensors
            .iter()
            .position(|(n, _)| n == "image")
            .ok_or_else(|| Error::Format(format!("{} has no image tensor", e.file)))?;
        let image = tensors.swap_remove(idx).1;
        samples.push(FigureSample { image, joints: e.joints, pose: e.pose });
    }
    Ok((manifest.spec, samples))
}

/// 8-bit binary PGM, values clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (_, h, w) = image.chw()?;
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image.data()[..h * w].iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{quantile, GraphSpec};

    fn clean(count: usize) -> DatasetSpec {
        DatasetSpec { count, occlusion: 0.0, distractors: 0.0, noise: 0.0, ..Default::default() }
    }

    #[test]
    fn clean_figures_have_visible_joints_on_limbs() {
        let samples = generate(&clean(20)).unwrap();
        for s in &samples {
            for j in &s.joints {
                assert!(j.visible);
                assert!(j.x >= 0.0 && j.y >= 0.0 && j.x <= 55.0 && j.y <= 55.0);
                let (x, y) = (j.x.round() as usize, j.y.round() as usize);
                assert!(s.image.data()[y * 56 + x] > 0.0, "joint at ({}, {}) is not drawn", j.x, j.y);
            }
        }
    }

    #[test]
    fn limb_lengths_follow_proportions() {
        let spec = clean(10);
        let p = spec.proportions;
        for s in generate(&spec).unwrap() {
            let pos = s.positions();
            let k = s.pose.scale;
            assert!((dist(pos[R_SHOULDER], pos[R_ELBOW]) - p.upper_arm * k).abs() < 1e-9);
            assert!((dist(pos[L_KNEE], pos[L_ANKLE]) - p.lower_leg * k).abs() < 1e-9);
            assert!((dist(pos[HEAD], pos[NECK]) - p.head * k).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = DatasetSpec { count: 5, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = DatasetSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn occlusion_rate() {
        let spec = DatasetSpec { count: 1000, occlusion: 0.3, noise: 0.0, ..Default::default() };
        let samples = generate(&spec).unwrap();
        let hidden = samples.iter().flat_map(|s| &s.joints).filter(|j| !j.visible).count();
        let frac = hidden as f64 / (1000.0 * JOINT_COUNT as f64);
        assert!((frac - 0.3).abs() <= 0.03, "occluded fraction {frac}");
    }

    #[test]
    fn too_small_image_is_rejected() {
        let spec = DatasetSpec { image_size: 20, ..clean(1) };
        assert!(matches!(generate(&spec), Err(Error::ImageTooSmall { size: 20, .. })));
        let bad = DatasetSpec { occlusion: 1.5, ..clean(1) };
        assert!(matches!(generate(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn pcp_cases() {
        let gt = vec![vec![(0.0, 0.0), (10.0, 0.0)]];
        let limbs = [(0, 1)];
        assert_eq!(pcp(&gt, &gt, &limbs, 0.5).unwrap().mean, 1.0);
        let off5 = vec![vec![(0.0, 5.0), (10.0, -5.0)]];
        assert_eq!(pcp(&off5, &gt, &limbs, 0.5).unwrap().mean, 1.0);
        let off6 = vec![vec![(0.0, 6.0), (10.0, 0.0)]];
        assert_eq!(pcp(&off6, &gt, &limbs, 0.5).unwrap().mean, 0.0);
        let zero = vec![vec![(1.0, 1.0), (1.0, 1.0)]];
        assert!(matches!(pcp(&zero, &zero, &limbs, 0.5), Err(Error::ZeroLengthLimb(0, 1))));
    }

    #[test]
    fn pck_cases() {
        let gt = vec![vec![(0.0, 0.0)]];
        assert_eq!(pck(&gt, &gt, &[10.0], 0.2).unwrap().mean, 1.0);
        assert_eq!(pck(&[vec![(2.0, 0.0)]], &gt, &[10.0], 0.2).unwrap().mean, 1.0);
        assert_eq!(pck(&[vec![(0.0, 2.5)]], &gt, &[10.0], 0.2).unwrap().mean, 0.0);
        assert!(matches!(pck(&gt, &gt, &[0.0], 0.2), Err(Error::NonPositiveNormalizer(_))));
    }

    #[test]
    fn distance_stats_quantile() {
        let graph = GraphSpec::skeleton14().build().unwrap();
        let samples = generate(&DatasetSpec { count: 100, ..clean(0) }).unwrap();
        let d = pairwise_distance_stats(&samples, &graph).unwrap();
        let direct: Vec<f64> = samples.iter().map(|s| dist(s.joints[R_WRIST].into_xy(), s.joints[L_WRIST].into_xy())).collect();
        let mut sorted = direct.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // ceil(0.9 * 100) - 1 = 89
        assert_eq!(quantile(d.get(R_WRIST, L_WRIST).unwrap(), 0.9), sorted[89]);
        assert!(pairwise_distance_stats(&[], &graph).is_err());
    }

    trait Xy {
        fn into_xy(self) -> (f64, f64);
    }
    impl Xy for JointGt {
        fn into_xy(self) -> (f64, f64) {
            (self.x, self.y)
        }
    }

    #[test]
    fn rigid_pose_has_constant_distances() {
        let mut spec = clean(10);
        spec.scale = (1.0, 1.0);
        spec.angles = AngleRanges {
            torso_tilt: (0.0, 0.0),
            upper_arm: (30.0, 30.0),
            lower_arm: (10.0, 10.0),
            upper_leg: (5.0, 5.0),
            lower_leg: (0.0, 0.0),
        };
        let graph = GraphSpec::skeleton14().build().unwrap();
        let d = pairwise_distance_stats(&generate(&spec).unwrap(), &graph).unwrap();
        for (_, v) in d.pairs() {
            assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-9));
            assert!((quantile(v, 0.9) - v[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec { count: 3, ..Default::default() };
        let samples = generate(&spec).unwrap();
        save_dataset(dir.path(), &spec, &samples, true).unwrap();
        let (spec2, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(loaded.len(), 3);
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.joints, b.joints);
            assert!(a.image.max_abs_diff(&b.image) < 1e-6);
        }
        assert!(dir.path().join("sample_00002.pgm").exists());
    }
}

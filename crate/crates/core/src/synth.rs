//! Parametric four-class gesture generator, corpus builder and the keypoint
//! degradation model used to exercise the stabilizer.
//!
//! Every gesture animates the bundled upright base pose over normalized time
//! `u ∈ [0, 1]`, sampled at 30 fps for `round(24 / r)` frames, then resampled
//! to 24 frames. The rhythm factor `r` therefore changes both the raw
//! duration and the shape of the motion:
//!
//! * wave: right arm raised, wrist x oscillates `2r` full cycles;
//! * both-arms-raise: wrists and elbows travel hip level → overhead with progress `u^r`;
//! * squat: body above the knees drops by `D·sin(π·u^r)`, knees by half that, ankles fixed;
//! * idle: the base pose.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::skeleton::{
    joint, normalize, resample_to_24, GestureClass, Keypoint, KeypointFrame, SkeletonSequence, FEATURE_WIDTH,
    JOINT_COUNT, NUM_CLASSES, SEQ_LEN,
};

pub const RAW_FPS: f64 = 30.0;
pub const RHYTHM_MIN: f64 = 0.5;
pub const RHYTHM_MAX: f64 = 2.0;
pub const BASE_POSE_VERSION: u64 = 1;

const WAVE_AMPLITUDE: f64 = 0.07;
const SQUAT_DEPTH: f64 = 0.12;
/// Raised-arm pose for the wave: elbow and wrist of the right arm.
const WAVE_ELBOW: (f64, f64) = (0.370, 0.250);
const WAVE_WRIST: (f64, f64) = (0.360, 0.150);
/// Overhead end pose of both-arms-raise: (elbow, wrist) per side.
const RAISE_RIGHT: [(f64, f64); 2] = [(0.420, 0.170), (0.420, 0.050)];
const RAISE_LEFT: [(f64, f64); 2] = [(0.580, 0.170), (0.580, 0.050)];

#[derive(Deserialize)]
struct PoseAsset {
    version: u64,
    joints: Vec<PoseJoint>,
}

#[derive(Deserialize)]
struct PoseJoint {
    name: String,
    x: f64,
    y: f64,
}

/// The bundled upright pose in image-normalized coordinates.
pub fn base_pose() -> &'static [(f64, f64); JOINT_COUNT] {
    static POSE: OnceLock<[(f64, f64); JOINT_COUNT]> = OnceLock::new();
    POSE.get_or_init(|| {
        let asset: PoseAsset =
            serde_json::from_str(include_str!("../assets/base_pose.json")).expect("bundled base pose is valid JSON");
        assert_eq!(asset.version, BASE_POSE_VERSION, "base pose asset version");
        assert_eq!(asset.joints.len(), JOINT_COUNT, "base pose joint count");
        let mut pose = [(0.0, 0.0); JOINT_COUNT];
        for (j, (p, a)) in pose.iter_mut().zip(&asset.joints).enumerate() {
            assert_eq!(a.name, joint::NAMES[j], "base pose joint order");
            *p = (a.x, a.y);
        }
        pose
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureSpec {
    /// Class index: 0 wave, 1 both-arms-raise, 2 squat, 3 idle.
    pub class: usize,
    pub rhythm: f64,
    pub noise_sigma: f64,
    /// Relative amplitude spread; `a` scales motion by `1 + a·U(-1, 1)` and
    /// also enables a small global scale/offset of the whole figure.
    pub amplitude_jitter: f64,
    pub seed: u64,
}

impl GestureSpec {
    pub fn new(class: usize, rhythm: f64, seed: u64) -> Self {
        GestureSpec {
            class,
            rhythm,
            noise_sigma: 0.0,
            amplitude_jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<GestureClass> {
        let class = GestureClass::from_index(self.class)?;
        if !(RHYTHM_MIN..=RHYTHM_MAX).contains(&self.rhythm) {
            return Err(Error::arg(format!(
                "rhythm {} outside [{RHYTHM_MIN}, {RHYTHM_MAX}]",
                self.rhythm
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::arg(format!(
                "amplitude jitter {} outside [0, 1)",
                self.amplitude_jitter
            )));
        }
        Ok(class)
    }
}

/// Number of 30 fps frames before resampling.
pub fn raw_length(rhythm: f64) -> usize {
    ((SEQ_LEN as f64 / rhythm).round() as usize).max(2)
}

fn lerp(a: (f64, f64), b: (f64, f64), w: f64) -> (f64, f64) {
    (a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1))
}

/// Noise-free pose of `class` at normalized time `u`. `gain` scales the motion.
fn pose_at(class: GestureClass, u: f64, rhythm: f64, gain: f64) -> [(f64, f64); JOINT_COUNT] {
    let mut p = *base_pose();
    match class {
        GestureClass::Wave => {
            let s = gain * WAVE_AMPLITUDE * (2.0 * std::f64::consts::PI * 2.0 * rhythm * u).sin();
            p[joint::R_ELBOW] = (WAVE_ELBOW.0 + 0.5 * s, WAVE_ELBOW.1);
            p[joint::R_WRIST] = (WAVE_WRIST.0 + s, WAVE_WRIST.1);
        }
        GestureClass::BothArmsRaise => {
            let w = gain * u.powf(rhythm);
            p[joint::R_ELBOW] = lerp(p[joint::R_ELBOW], RAISE_RIGHT[0], w);
            p[joint::R_WRIST] = lerp(p[joint::R_WRIST], RAISE_RIGHT[1], w);
            p[joint::L_ELBOW] = lerp(p[joint::L_ELBOW], RAISE_LEFT[0], w);
            p[joint::L_WRIST] = lerp(p[joint::L_WRIST], RAISE_LEFT[1], w);
        }
        GestureClass::Squat => {
            let d = gain * SQUAT_DEPTH * (std::f64::consts::PI * u.powf(rhythm)).sin();
            for (j, q) in p.iter_mut().enumerate() {
                match j {
                    joint::R_ANKLE | joint::L_ANKLE => {}
                    joint::R_KNEE | joint::L_KNEE => q.1 += 0.5 * d,
                    _ => q.1 += d,
                }
            }
        }
        GestureClass::Idle => {}
    }
    p
}

/// Raw 30 fps rendering before resampling.
pub fn synth_raw(spec: &GestureSpec) -> Result<SkeletonSequence> {
    let class = spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let a = spec.amplitude_jitter;
    let gain = 1.0 + a * rng.uniform(-1.0, 1.0);
    let (scale, dx, dy) = if a > 0.0 {
        (
            1.0 + 0.5 * a * rng.uniform(-1.0, 1.0),
            0.25 * a * rng.uniform(-1.0, 1.0),
            0.25 * a * rng.uniform(-1.0, 1.0),
        )
    } else {
        (1.0, 0.0, 0.0)
    };
    let n = raw_length(spec.rhythm);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        let mut pose = pose_at(class, u, spec.rhythm, gain);
        for q in pose.iter_mut() {
            q.0 = 0.5 + scale * (q.0 - 0.5) + dx;
            q.1 = 0.5 + scale * (q.1 - 0.5) + dy;
            if spec.noise_sigma > 0.0 {
                q.0 += rng.gaussian(0.0, spec.noise_sigma);
                q.1 += rng.gaussian(0.0, spec.noise_sigma);
            }
        }
        frames.push(KeypointFrame::from_points(&pose, 1.0));
    }
    Ok(SkeletonSequence {
        id: format!("c{}-seed{}", spec.class, spec.seed),
        label: Some(spec.class),
        fps: RAW_FPS,
        frames,
    })
}

/// A labeled 24-frame gesture.
pub fn synth_gesture(spec: &GestureSpec) -> Result<SkeletonSequence> {
    resample_to_24(&synth_raw(spec)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_per_class: usize,
    pub rhythm_range: (f64, f64),
    pub noise_sigma: f64,
    pub amplitude_jitter: f64,
    pub seed: u64,
    /// Fraction of each class that goes to the training set.
    pub split: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_per_class: 250,
            rhythm_range: (RHYTHM_MIN, RHYTHM_MAX),
            noise_sigma: 0.02,
            amplitude_jitter: 0.2,
            seed: 0,
            split: 0.8,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::arg("n_per_class must be at least 1"));
        }
        let (lo, hi) = self.rhythm_range;
        if !(RHYTHM_MIN <= lo && lo <= hi && hi <= RHYTHM_MAX) {
            return Err(Error::arg(format!(
                "rhythm range [{lo}, {hi}] outside [{RHYTHM_MIN}, {RHYTHM_MAX}]"
            )));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::arg(format!("split {} outside (0, 1)", self.split)));
        }
        Ok(())
    }

    pub fn train_per_class(&self) -> usize {
        (self.n_per_class as f64 * self.split).round() as usize
    }
}

pub fn sample_id(class: usize, index: usize) -> String {
    format!("c{class}-{index:04}")
}

/// Every sequence of the corpus in class-major order, before the split.
pub fn generate_all(spec: &CorpusSpec) -> Result<Vec<SkeletonSequence>> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let (lo, hi) = spec.rhythm_range;
    (0..NUM_CLASSES * spec.n_per_class)
        .into_par_iter()
        .map(|k| {
            let (class, i) = (k / spec.n_per_class, k % spec.n_per_class);
            let mut rng = root.split_indexed("sample", k as u64);
            let rhythm = if hi > lo { rng.uniform(lo, hi) } else { lo };
            let g = GestureSpec {
                class,
                rhythm,
                noise_sigma: spec.noise_sigma,
                amplitude_jitter: spec.amplitude_jitter,
                seed: rng.next_u64(),
            };
            let mut seq = synth_gesture(&g)?;
            seq.id = sample_id(class, i);
            Ok(seq)
        })
        .collect()
}

/// Balanced corpus with a per-class shuffled split into (train, test).
pub fn make_corpus(spec: &CorpusSpec) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    let all = generate_all(spec)?;
    let n = spec.n_per_class;
    let keep = spec.train_per_class();
    let mut split_rng = Rng::new(spec.seed).split("split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..NUM_CLASSES {
        let mut idx: Vec<usize> = (0..n).collect();
        split_rng.shuffle(&mut idx);
        let (a, b) = idx.split_at(keep);
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        train.extend(a.into_iter().map(|i| all[class * n + i].clone()));
        test.extend(b.into_iter().map(|i| all[class * n + i].clone()));
    }
    Ok((train, test))
}

/// Joins sequences end to end into one unlabeled stream.
pub fn concatenate(seqs: &[SkeletonSequence], id: &str) -> Result<SkeletonSequence> {
    let first = seqs.first().ok_or_else(|| Error::arg("nothing to concatenate"))?;
    Ok(SkeletonSequence {
        id: id.to_string(),
        label: None,
        fps: first.fps,
        frames: seqs.iter().flat_map(|s| s.frames.iter().cloned()).collect(),
    })
}

/// A corrupted copy of a clean sequence together with what was done to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Degraded {
    pub sequence: SkeletonSequence,
    pub truth: SkeletonSequence,
    /// `frames × joints`, true where the joint was dropped.
    pub dropped: Vec<[bool; JOINT_COUNT]>,
    /// `frames × joints`, true where the joint was replaced by a random point.
    pub spiked: Vec<[bool; JOINT_COUNT]>,
}

impl Degraded {
    pub fn dropped_count(&self) -> usize {
        self.dropped.iter().flatten().filter(|&&d| d).count()
    }

    pub fn spiked_count(&self) -> usize {
        self.spiked.iter().flatten().filter(|&&s| s).count()
    }
}

/// Each joint-frame is dropped with probability `drop_rate`; surviving ones
/// are replaced by a uniform point in the unit image square with probability
/// `spike_rate`.
pub fn simulate_degradation(
    seq: &SkeletonSequence,
    drop_rate: f64,
    spike_rate: f64,
    rng: &mut Rng,
) -> Result<Degraded> {
    for (name, r) in [("drop", drop_rate), ("spike", spike_rate)] {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::arg(format!("{name} rate {r} outside [0, 1)")));
        }
    }
    let mut out = seq.clone();
    let mut dropped = vec![[false; JOINT_COUNT]; seq.len()];
    let mut spiked = vec![[false; JOINT_COUNT]; seq.len()];
    for (t, frame) in out.frames.iter_mut().enumerate() {
        for (j, k) in frame.kp.iter_mut().enumerate() {
            if k.missing {
                continue;
            }
            let u = rng.next_f64();
            let v = rng.next_f64();
            if u < drop_rate {
                *k = Keypoint::missing();
                dropped[t][j] = true;
            } else if v < spike_rate {
                k.x = rng.next_f64();
                k.y = rng.next_f64();
                spiked[t][j] = true;
            }
        }
    }
    Ok(Degraded {
        sequence: out,
        truth: seq.clone(),
        dropped,
        spiked,
    })
}

/// Temporal standard deviation of every normalized coordinate channel.
pub fn motion_profile(seq: &SkeletonSequence) -> Result<Vec<f64>> {
    let m = normalize(seq)?.to_tensor()?;
    let n = m.rows() as f64;
    Ok((0..FEATURE_WIDTH)
        .map(|c| {
            let mean = (0..m.rows()).map(|t| m.get(t, c)).sum::<f64>() / n;
            ((0..m.rows()).map(|t| (m.get(t, c) - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

/// Temporal variance of the right-wrist image x coordinate.
pub fn wrist_variance(seq: &SkeletonSequence) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::arg("wrist variance needs at least 2 frames"));
    }
    let x = seq.to_tensor()?;
    let c = 2 * joint::R_WRIST;
    let n = x.rows() as f64;
    let mean = (0..x.rows()).map(|t| x.get(t, c)).sum::<f64>() / n;
    Ok((0..x.rows()).map(|t| (x.get(t, c) - mean).powi(2)).sum::<f64>() / n)
}

/// Nearest-template classifier over motion profiles: a profile with total
/// energy below `idle_energy` is idle, otherwise the class whose canonical
/// profile has the highest cosine similarity.
#[derive(Clone, Debug)]
pub struct TemplateClassifier {
    pub templates: Vec<(GestureClass, Vec<f64>)>,
    pub idle_energy: f64,
}

impl TemplateClassifier {
    /// Templates from noiseless, unjittered `r = 1` renderings of the three moving classes.
    pub fn canonical() -> Self {
        let templates = [GestureClass::Wave, GestureClass::BothArmsRaise, GestureClass::Squat]
            .into_iter()
            .map(|c| {
                let seq = synth_gesture(&GestureSpec::new(c.index(), 1.0, 0)).expect("canonical spec is valid");
                (c, motion_profile(&seq).expect("canonical gesture normalizes"))
            })
            .collect();
        TemplateClassifier {
            templates,
            idle_energy: 1e-3,
        }
    }

    pub fn classify(&self, seq: &SkeletonSequence) -> Result<GestureClass> {
        let p = motion_profile(seq)?;
        let energy = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if energy < self.idle_energy {
            return Ok(GestureClass::Idle);
        }
        let cos = |t: &[f64]| {
            let dot: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
            let nt = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot / (energy * nt)
        };
        let best =
            self.templates
                .iter()
                .map(|(c, t)| (*c, cos(t)))
                .fold((GestureClass::Idle, f64::NEG_INFINITY), |acc, x| {
                    if x.1 > acc.1 {
                        x
                    } else {
                        acc
                    }
                });
        Ok(best.0)
    }
}

//! Keypoint frames, skeleton sequences, the JSONL corpus format,
//! normalization and temporal resampling.
//!
//! Joints follow the 18-point COCO/OpenPose body order:
//!
//! | idx | joint | idx | joint | idx | joint |
//! |-----|-------|-----|-------|-----|-------|
//! | 0 | nose | 6 | left elbow | 12 | left knee |
//! | 1 | neck | 7 | left wrist | 13 | left ankle |
//! | 2 | right shoulder | 8 | right hip | 14 | right eye |
//! | 3 | right elbow | 9 | right knee | 15 | left eye |
//! | 4 | right wrist | 10 | right ankle | 16 | right ear |
//! | 5 | left shoulder | 11 | left hip | 17 | left ear |
//!
//! A model-ready sequence has exactly [`SEQ_LEN`] frames and no missing joints;
//! its tensor is `SEQ_LEN × FEATURE_WIDTH` with per-frame layout
//! `[x0, y0, x1, y1, …, x17, y17]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const JOINT_COUNT: usize = 18;
pub const SEQ_LEN: usize = 24;
pub const FEATURE_WIDTH: usize = 2 * JOINT_COUNT;
pub const NUM_CLASSES: usize = 4;

pub mod joint {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;

    pub const NAMES: [&str; super::JOINT_COUNT] = [
        "nose",
        "neck",
        "right_shoulder",
        "right_elbow",
        "right_wrist",
        "left_shoulder",
        "left_elbow",
        "left_wrist",
        "right_hip",
        "right_knee",
        "right_ankle",
        "left_hip",
        "left_knee",
        "left_ankle",
        "right_eye",
        "left_eye",
        "right_ear",
        "left_ear",
    ];
}

/// Gesture vocabulary of the recognizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GestureClass {
    Wave = 0,
    BothArmsRaise = 1,
    Squat = 2,
    Idle = 3,
}

impl GestureClass {
    pub const ALL: [GestureClass; NUM_CLASSES] = [
        GestureClass::Wave,
        GestureClass::BothArmsRaise,
        GestureClass::Squat,
        GestureClass::Idle,
    ];

    pub fn from_index(i: usize) -> Result<Self> {
        GestureClass::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::arg(format!("unknown gesture class {i}")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::Wave => "wave",
            GestureClass::BothArmsRaise => "both-arms-raise",
            GestureClass::Squat => "squat",
            GestureClass::Idle => "idle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        GestureClass::ALL.into_iter().find(|c| c.name() == name)
    }
}

pub fn class_names() -> Vec<String> {
    GestureClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub missing: bool,
}

impl Keypoint {
    pub fn observed(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint {
            x,
            y,
            confidence,
            missing: false,
        }
    }

    pub fn missing() -> Self {
        Keypoint {
            x: 0.0,
            y: 0.0,
            confidence: 0.0,
            missing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointFrame {
    pub kp: [Keypoint; JOINT_COUNT],
}

impl KeypointFrame {
    pub fn from_points(points: &[(f64, f64); JOINT_COUNT], confidence: f64) -> Self {
        let mut kp = [Keypoint::default(); JOINT_COUNT];
        for (k, &(x, y)) in kp.iter_mut().zip(points) {
            *k = Keypoint::observed(x, y, confidence);
        }
        KeypointFrame { kp }
    }

    pub fn has_missing(&self) -> bool {
        self.kp.iter().any(|k| k.missing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: Option<usize>,
    pub fps: f64,
    pub frames: Vec<KeypointFrame>,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.frames
            .iter()
            .map(|f| f.kp.iter().filter(|k| k.missing).count())
            .sum()
    }

    pub fn is_model_ready(&self) -> bool {
        self.frames.len() == SEQ_LEN && self.missing_count() == 0
    }

    /// Raw `frames × 36` coordinate tensor; requires no missing joints.
    pub fn to_tensor(&self) -> Result<Matrix> {
        if self.missing_count() > 0 {
            return Err(Error::Precondition(format!("sequence {} has missing joints", self.id)));
        }
        let mut m = Matrix::zeros(self.frames.len(), FEATURE_WIDTH);
        for (t, f) in self.frames.iter().enumerate() {
            let row = m.row_mut(t);
            for (j, k) in f.kp.iter().enumerate() {
                row[2 * j] = k.x;
                row[2 * j + 1] = k.y;
            }
        }
        Ok(m)
    }

    /// Normalized `24 × 36` model input.
    pub fn model_tensor(&self) -> Result<Matrix> {
        if self.frames.len() != SEQ_LEN {
            return Err(Error::Precondition(format!(
                "sequence {} has {} frames, model needs {SEQ_LEN}",
                self.id,
                self.frames.len()
            )));
        }
        normalize(self)?.to_tensor()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        self.map_points(|x, y| (x + dx, y + dy))
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_points(|x, y| (x * s, y * s))
    }

    fn map_points(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut out = self.clone();
        for frame in &mut out.frames {
            for k in frame.kp.iter_mut().filter(|k| !k.missing) {
                let (x, y) = f(k.x, k.y);
                k.x = x;
                k.y = y;
            }
        }
        out
    }
}

/// Minimum torso length accepted by [`normalize`].
pub const MIN_TORSO: f64 = 1e-6;

/// Per frame: move the neck to the origin and scale so that the distance from
/// the neck to the hip midpoint is 1.
pub fn normalize(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    let mut out = seq.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        for j in [joint::NECK, joint::R_HIP, joint::L_HIP] {
            if frame.kp[j].missing {
                return Err(Error::Precondition(format!(
                    "frame {t} of {}: joint {} missing",
                    seq.id,
                    joint::NAMES[j]
                )));
            }
        }
        let neck = frame.kp[joint::NECK];
        let hx = 0.5 * (frame.kp[joint::R_HIP].x + frame.kp[joint::L_HIP].x);
        let hy = 0.5 * (frame.kp[joint::R_HIP].y + frame.kp[joint::L_HIP].y);
        let torso = (hx - neck.x).hypot(hy - neck.y);
        if !(torso >= MIN_TORSO) {
            return Err(Error::DegeneratePose {
                frame: t,
                length: torso,
            });
        }
        for k in frame.kp.iter_mut() {
            k.x = (k.x - neck.x) / torso;
            k.y = (k.y - neck.y) / torso;
        }
    }
    Ok(out)
}

/// Linear interpolation of every joint channel onto `target` uniformly spaced
/// instants spanning the original duration.
pub fn resample(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    let n = seq.frames.len();
    if n < 2 || target < 2 {
        return Err(Error::arg(format!(
            "resampling needs at least 2 frames (have {n}, target {target})"
        )));
    }
    if seq.missing_count() > 0 {
        return Err(Error::Precondition(format!("sequence {} has missing joints", seq.id)));
    }
    let mut frames = Vec::with_capacity(target);
    for j in 0..target {
        let num = j * (n - 1);
        let i0 = num / (target - 1);
        let rem = num % (target - 1);
        if rem == 0 {
            frames.push(seq.frames[i0].clone());
            continue;
        }
        let w = rem as f64 / (target - 1) as f64;
        let (a, b) = (&seq.frames[i0], &seq.frames[i0 + 1]);
        let mut kp = a.kp;
        for (k, (ka, kb)) in kp.iter_mut().zip(a.kp.iter().zip(&b.kp)) {
            k.x = ka.x + w * (kb.x - ka.x);
            k.y = ka.y + w * (kb.y - ka.y);
            k.confidence = ka.confidence + w * (kb.confidence - ka.confidence);
        }
        frames.push(KeypointFrame { kp });
    }
    let duration = (n - 1) as f64 / seq.fps;
    Ok(SkeletonSequence {
        id: seq.id.clone(),
        label: seq.label,
        fps: (target - 1) as f64 / duration,
        frames,
    })
}

pub fn resample_to_24(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    resample(seq, SEQ_LEN)
}

// JSONL wire format: {"id", "label", "fps", "frames": [{"kp": [[x, y, conf, missing] × 18]}]}

#[derive(Serialize, Deserialize)]
struct WireFrame {
    kp: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct WireSequence {
    id: String,
    label: Option<i64>,
    fps: f64,
    frames: Vec<WireFrame>,
}

impl From<&SkeletonSequence> for WireSequence {
    fn from(s: &SkeletonSequence) -> Self {
        WireSequence {
            id: s.id.clone(),
            label: s.label.map(|l| l as i64),
            fps: s.fps,
            frames: s
                .frames
                .iter()
                .map(|f| WireFrame {
                    kp: f
                        .kp
                        .iter()
                        .map(|k| vec![k.x, k.y, k.confidence, if k.missing { 1.0 } else { 0.0 }])
                        .collect(),
                })
                .collect(),
        }
    }
}

fn schema(line: usize, message: String) -> Error {
    Error::Schema {
        location: format!("line {line}"),
        message,
    }
}

impl WireSequence {
    fn into_sequence(self, line: usize) -> Result<SkeletonSequence> {
        let label = match self.label {
            None => None,
            Some(l) if (0..NUM_CLASSES as i64).contains(&l) => Some(l as usize),
            Some(l) => return Err(schema(line, format!("label {l} outside 0..{NUM_CLASSES}"))),
        };
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(schema(line, format!("fps must be positive, got {}", self.fps)));
        }
        let mut frames = Vec::with_capacity(self.frames.len());
        for (fi, f) in self.frames.into_iter().enumerate() {
            if f.kp.len() != JOINT_COUNT {
                return Err(schema(
                    line,
                    format!("frame {fi} has {} joints, expected {JOINT_COUNT}", f.kp.len()),
                ));
            }
            let mut kp = [Keypoint::default(); JOINT_COUNT];
            for (j, (k, raw)) in kp.iter_mut().zip(&f.kp).enumerate() {
                let &[x, y, confidence, missing] = raw.as_slice() else {
                    return Err(schema(
                        line,
                        format!("frame {fi} joint {j}: expected [x, y, conf, missing]"),
                    ));
                };
                let missing = match missing {
                    m if m == 0.0 => false,
                    m if m == 1.0 => true,
                    m => return Err(schema(line, format!("frame {fi} joint {j}: missing flag {m}"))),
                };
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(schema(
                        line,
                        format!("frame {fi} joint {j}: confidence {confidence} outside [0, 1]"),
                    ));
                }
                if missing && confidence != 0.0 {
                    return Err(schema(
                        line,
                        format!("frame {fi} joint {j}: missing joint with non-zero confidence"),
                    ));
                }
                if !missing && !(x.is_finite() && y.is_finite()) {
                    return Err(schema(line, format!("frame {fi} joint {j}: non-finite coordinate")));
                }
                *k = Keypoint {
                    x,
                    y,
                    confidence,
                    missing,
                };
            }
            frames.push(KeypointFrame { kp });
        }
        Ok(SkeletonSequence {
            id: self.id,
            label,
            fps: self.fps,
            frames,
        })
    }
}

pub fn sequence_to_json(seq: &SkeletonSequence) -> Result<String> {
    Ok(serde_json::to_string(&WireSequence::from(seq))?)
}

/// Parses JSONL text; blank lines are skipped, line numbers are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<SkeletonSequence>> {
    read_jsonl(text.as_bytes())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<SkeletonSequence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireSequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(wire.into_sequence(i + 1)?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(seqs: &[SkeletonSequence], mut writer: W) -> Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut writer, &WireSequence::from(s))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<SkeletonSequence>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn save_jsonl(seqs: &[SkeletonSequence], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(seqs, BufWriter::new(File::create(path)?))
}

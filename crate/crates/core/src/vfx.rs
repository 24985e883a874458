//! Sliding-window recognition over long keypoint streams and the debounced
//! trigger that turns window predictions into a timed effect list.
//!
//! Timeline JSON:
//!
//! ```json
//! {"stream_id": "take-3", "fps": 30.0,
//!  "events": [{"t_start_s": 1.4, "action": "wave", "confidence": 0.93,
//!              "effect": "sparkle_trail", "anchor_joint": 4}]}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{argmax, Matrix};
use crate::skeleton::{joint, GestureClass, SkeletonSequence, JOINT_COUNT, NUM_CLASSES, SEQ_LEN};

/// Effect fired for a recognized action, drawn at `anchor_joint`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectBinding {
    pub action: GestureClass,
    pub effect: String,
    pub anchor_joint: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Frames between consecutive window starts.
    pub hop: usize,
    /// Minimum window confidence that counts toward a trigger.
    pub threshold: f64,
    /// Consecutive qualifying windows needed to fire.
    pub consecutive: usize,
    /// Minimum distance in frames between two events of the same action.
    pub refractory_frames: usize,
    /// Actions without a binding never fire.
    pub effects: Vec<EffectBinding>,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            hop: 6,
            threshold: 0.8,
            consecutive: 2,
            refractory_frames: 24,
            effects: vec![
                EffectBinding {
                    action: GestureClass::Wave,
                    effect: "sparkle_trail".into(),
                    anchor_joint: joint::R_WRIST,
                },
                EffectBinding {
                    action: GestureClass::BothArmsRaise,
                    effect: "overhead_burst".into(),
                    anchor_joint: joint::NOSE,
                },
                EffectBinding {
                    action: GestureClass::Squat,
                    effect: "ground_shockwave".into(),
                    anchor_joint: joint::R_HIP,
                },
            ],
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(Error::Config("hop must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        if self.consecutive == 0 {
            return Err(Error::Config("consecutive window count must be at least 1".into()));
        }
        for b in &self.effects {
            if b.action == GestureClass::Idle {
                return Err(Error::Config("idle cannot be bound to an effect".into()));
            }
            if b.anchor_joint >= JOINT_COUNT {
                return Err(Error::Config(format!("anchor joint {} out of range", b.anchor_joint)));
            }
            if b.effect.is_empty() {
                return Err(Error::Config("effect id must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn binding(&self, action: GestureClass) -> Option<&EffectBinding> {
        self.effects.iter().find(|b| b.action == action)
    }
}

/// Prediction for one window of the stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub start_frame: usize,
    /// Index of the window's last frame.
    pub end_frame: usize,
    /// Timestamp of the last frame in seconds.
    pub time_s: f64,
    pub class: GestureClass,
    pub confidence: f64,
}

/// Window start frames `0, hop, 2·hop, …` with `start + 24 ≤ len`.
pub fn window_starts(len: usize, hop: usize) -> Result<Vec<usize>> {
    if len < SEQ_LEN {
        return Err(Error::arg(format!(
            "stream has {len} frames, at least {SEQ_LEN} needed"
        )));
    }
    if hop == 0 {
        return Err(Error::arg("hop must be at least 1"));
    }
    Ok((0..=len - SEQ_LEN).step_by(hop).collect())
}

/// Normalizes and classifies every window of a stabilized stream.
pub fn stream_infer(stream: &SkeletonSequence, model: &Model, cfg: &TriggerConfig) -> Result<Vec<WindowResult>> {
    cfg.validate()?;
    if !(stream.fps > 0.0 && stream.fps.is_finite()) {
        return Err(Error::arg(format!("stream fps {} must be positive", stream.fps)));
    }
    let starts = window_starts(stream.len(), cfg.hop)?;
    let inputs: Vec<Matrix> = starts
        .iter()
        .map(|&s| {
            SkeletonSequence {
                id: format!("{}@{s}", stream.id),
                label: None,
                fps: stream.fps,
                frames: stream.frames[s..s + SEQ_LEN].to_vec(),
            }
            .model_tensor()
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(starts.len());
    for (chunk_starts, chunk) in starts.chunks(64).zip(inputs.chunks(64)) {
        let refs: Vec<&Matrix> = chunk.iter().collect();
        let p = model.predict_proba(&refs)?;
        for (b, &s) in chunk_starts.iter().enumerate() {
            let c = argmax(p.row(b));
            let end = s + SEQ_LEN - 1;
            out.push(WindowResult {
                start_frame: s,
                end_frame: end,
                time_s: end as f64 / stream.fps,
                class: GestureClass::from_index(c)?,
                confidence: p.row(b)[c],
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VfxEvent {
    pub t_start_s: f64,
    pub action: String,
    pub confidence: f64,
    pub effect: String,
    pub anchor_joint: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VfxTimeline {
    pub stream_id: String,
    pub fps: f64,
    pub events: Vec<VfxEvent>,
}

/// Debounced trigger. An action fires when it is the predicted class of
/// `consecutive` windows in a row, each with confidence ≥ `threshold`, and its
/// previous event ended at least `refractory_frames` earlier. The event is
/// stamped at the end of the last supporting window and the run restarts.
/// Results are processed in `end_frame` order.
pub fn emit_timeline(results: &[WindowResult], cfg: &TriggerConfig, fps: f64, stream_id: &str) -> VfxTimeline {
    let mut ordered = results.to_vec();
    ordered.sort_by_key(|w| w.end_frame);
    let mut last_fire: [Option<usize>; NUM_CLASSES] = [None; NUM_CLASSES];
    let mut run: Option<(GestureClass, usize)> = None;
    let mut events = Vec::new();
    for w in &ordered {
        let binding = cfg.binding(w.class);
        if binding.is_none() || w.confidence < cfg.threshold {
            run = None;
            continue;
        }
        let count = match run {
            Some((c, n)) if c == w.class => n + 1,
            _ => 1,
        };
        run = Some((w.class, count));
        if count < cfg.consecutive {
            continue;
        }
        let ready = last_fire[w.class.index()].is_none_or(|f| w.end_frame - f >= cfg.refractory_frames);
        if !ready {
            continue;
        }
        let b = binding.expect("checked above");
        events.push(VfxEvent {
            t_start_s: w.end_frame as f64 / fps,
            action: w.class.name().to_string(),
            confidence: w.confidence,
            effect: b.effect.clone(),
            anchor_joint: b.anchor_joint,
        });
        last_fire[w.class.index()] = Some(w.end_frame);
        run = None;
    }
    VfxTimeline {
        stream_id: stream_id.to_string(),
        fps,
        events,
    }
}

fn schema(location: String, message: &str) -> Error {
    Error::Schema {
        location,
        message: message.to_string(),
    }
}

impl VfxTimeline {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(schema("fps".into(), "must be a positive number"));
        }
        let mut prev = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            let at = |field: &str| format!("events[{i}].{field}");
            if !(e.t_start_s >= 0.0 && e.t_start_s.is_finite()) {
                return Err(schema(at("t_start_s"), "must be a non-negative number"));
            }
            if e.t_start_s < prev {
                return Err(schema(at("t_start_s"), "events must be in time order"));
            }
            prev = e.t_start_s;
            match GestureClass::from_name(&e.action) {
                None => return Err(schema(at("action"), "unknown action")),
                Some(GestureClass::Idle) => return Err(schema(at("action"), "idle never triggers")),
                Some(_) => {}
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(schema(at("confidence"), "must lie in [0, 1]"));
            }
            if e.effect.is_empty() {
                return Err(schema(at("effect"), "must not be empty"));
            }
            if e.anchor_joint >= JOINT_COUNT {
                return Err(schema(at("anchor_joint"), "joint index out of range"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tl: VfxTimeline = serde_json::from_str(text)?;
        tl.validate()?;
        Ok(tl)
    }
}

pub fn write_timeline(tl: &VfxTimeline, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, tl.to_json()?)?;
    Ok(())
}

pub fn read_timeline(path: impl AsRef<Path>) -> Result<VfxTimeline> {
    VfxTimeline::from_json(&fs::read_to_string(path)?)
}

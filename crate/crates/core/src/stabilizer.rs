//! Keypoint trajectory clean-up: gap filling, impulse rejection and
//! confidence-weighted smoothing.
//!
//! All passes work per joint and per coordinate channel in image space and
//! leave the frame count, id, label and fps untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{SkeletonSequence, JOINT_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizerConfig {
    /// Odd window length of the despiking median.
    pub median_window: usize,
    /// Deviation from the window median above which a sample is replaced.
    pub spike_threshold: f64,
    /// Smoothing factor; the per-frame EMA weight is `alpha · confidence`.
    pub alpha: f64,
    /// Longest run of missing frames that may be filled.
    pub max_gap: usize,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        StabilizerConfig {
            median_window: 5,
            spike_threshold: 0.15,
            alpha: 0.5,
            max_gap: 6,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_window < 3 || self.median_window % 2 == 0 {
            return Err(Error::Config(format!(
                "median window must be odd and >= 3, got {}",
                self.median_window
            )));
        }
        if !(self.spike_threshold > 0.0 && self.spike_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "spike threshold must be positive, got {}",
                self.spike_threshold
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.max_gap == 0 {
            return Err(Error::Config("max gap must be at least 1".into()));
        }
        Ok(())
    }
}

fn require_complete(seq: &SkeletonSequence, op: &str) -> Result<()> {
    if seq.missing_count() > 0 {
        return Err(Error::Precondition(format!(
            "{op} needs a sequence without missing joints ({} has {})",
            seq.id,
            seq.missing_count()
        )));
    }
    Ok(())
}

/// Interpolates interior gaps linearly and holds the nearest observation
/// across leading and trailing gaps. Any run of more than `max_gap` missing
/// frames, interior or at an edge, is unrecoverable.
pub fn fill_gaps(seq: &SkeletonSequence, cfg: &StabilizerConfig) -> Result<SkeletonSequence> {
    cfg.validate()?;
    let mut out = seq.clone();
    let n = seq.len();
    for j in 0..JOINT_COUNT {
        let seen: Vec<usize> = (0..n).filter(|&t| !seq.frames[t].kp[j].missing).collect();
        let (Some(&first), Some(&last)) = (seen.first(), seen.last()) else {
            if n == 0 {
                continue;
            }
            return Err(Error::NeverObserved { joint: j });
        };
        let check = |start: usize, end: usize| -> Result<()> {
            if end - start > cfg.max_gap {
                return Err(Error::UnrecoverableGap {
                    joint: j,
                    start,
                    end: end - 1,
                });
            }
            Ok(())
        };
        check(0, first)?;
        check(last + 1, n)?;
        let anchor = seq.frames[first].kp[j];
        for t in 0..first {
            out.frames[t].kp[j] = anchor;
        }
        let anchor = seq.frames[last].kp[j];
        for t in last + 1..n {
            out.frames[t].kp[j] = anchor;
        }
        for pair in seen.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b == a + 1 {
                continue;
            }
            check(a + 1, b)?;
            let (ka, kb) = (seq.frames[a].kp[j], seq.frames[b].kp[j]);
            for t in a + 1..b {
                let w = (t - a) as f64 / (b - a) as f64;
                let k = &mut out.frames[t].kp[j];
                k.x = ka.x + w * (kb.x - ka.x);
                k.y = ka.y + w * (kb.y - ka.y);
                k.confidence = ka.confidence + w * (kb.confidence - ka.confidence);
                k.missing = false;
            }
        }
    }
    Ok(out)
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    buf[buf.len() / 2]
}

/// One thresholded median pass over a channel; returns whether anything changed.
fn despike_pass(v: &mut [f64], window: usize, threshold: f64) -> bool {
    let n = v.len();
    let w = window.min(n);
    if w < 3 {
        return false;
    }
    let half = w / 2;
    let src = v.to_vec();
    let mut buf = vec![0.0; w];
    let mut changed = false;
    for t in 0..n {
        let start = t.saturating_sub(half).min(n - w);
        buf.copy_from_slice(&src[start..start + w]);
        let m = median(&mut buf);
        if (src[t] - m).abs() > threshold {
            v[t] = m;
            changed = true;
        }
    }
    changed
}

/// Thresholded median filter on one channel, repeated until no sample moves
/// so that the result is a fixed point of the filter.
pub fn despike_channel(v: &mut [f64], window: usize, threshold: f64) {
    for _ in 0..4 * v.len().max(1) {
        if !despike_pass(v, window, threshold) {
            break;
        }
    }
}

/// Replaces samples that deviate from their window median by more than the
/// spike threshold. Windows keep full length at the sequence edges.
pub fn despike(seq: &SkeletonSequence, cfg: &StabilizerConfig) -> Result<SkeletonSequence> {
    cfg.validate()?;
    require_complete(seq, "despike")?;
    let mut out = seq.clone();
    let mut channel = vec![0.0; seq.len()];
    for j in 0..JOINT_COUNT {
        for axis in 0..2 {
            for (c, f) in channel.iter_mut().zip(&seq.frames) {
                *c = if axis == 0 { f.kp[j].x } else { f.kp[j].y };
            }
            despike_channel(&mut channel, cfg.median_window, cfg.spike_threshold);
            for (c, f) in channel.iter().zip(out.frames.iter_mut()) {
                if axis == 0 {
                    f.kp[j].x = *c;
                } else {
                    f.kp[j].y = *c;
                }
            }
        }
    }
    Ok(out)
}

/// `s_t = (1 − β_t)·s_{t−1} + β_t·x_t` with `β_t = alpha·confidence_t`, `s_0 = x_0`.
pub fn smooth(seq: &SkeletonSequence, cfg: &StabilizerConfig) -> Result<SkeletonSequence> {
    cfg.validate()?;
    require_complete(seq, "smooth")?;
    let mut out = seq.clone();
    for t in 1..out.frames.len() {
        let (prev, cur) = out.frames.split_at_mut(t);
        let prev = &prev[t - 1];
        for (k, p) in cur[0].kp.iter_mut().zip(&prev.kp) {
            let beta = cfg.alpha * k.confidence.clamp(0.0, 1.0);
            // written as an increment so constants and β = 1 are reproduced exactly
            if beta < 1.0 {
                k.x = p.x + beta * (k.x - p.x);
                k.y = p.y + beta * (k.y - p.y);
            }
        }
    }
    Ok(out)
}

/// `fill_gaps → despike → smooth`.
pub fn stabilize(seq: &SkeletonSequence, cfg: &StabilizerConfig) -> Result<SkeletonSequence> {
    let filled = fill_gaps(seq, cfg)?;
    let clean = despike(&filled, cfg)?;
    smooth(&clean, cfg)
}

/// Reference repair without filtering: every missing joint takes the last
/// observed position (the first observed one before any observation).
/// Used as the unstabilized baseline when scoring.
pub fn hold_fill(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    let mut out = seq.clone();
    for j in 0..JOINT_COUNT {
        let Some(first) = seq.frames.iter().position(|f| !f.kp[j].missing) else {
            if seq.is_empty() {
                continue;
            }
            return Err(Error::NeverObserved { joint: j });
        };
        let mut held = seq.frames[first].kp[j];
        for f in out.frames.iter_mut() {
            if f.kp[j].missing {
                f.kp[j] = held;
            } else {
                held = f.kp[j];
            }
        }
    }
    Ok(out)
}

/// Mean over joints of each joint's root-mean-square position error
/// (both coordinates, all frames).
pub fn trajectory_rmse(estimate: &SkeletonSequence, truth: &SkeletonSequence) -> Result<f64> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::arg(format!(
            "cannot compare sequences of {} and {} frames",
            estimate.len(),
            truth.len()
        )));
    }
    require_complete(estimate, "rmse")?;
    let n = truth.len() as f64;
    let total: f64 = (0..JOINT_COUNT)
        .map(|j| {
            let sq: f64 = estimate
                .frames
                .iter()
                .zip(&truth.frames)
                .map(|(e, t)| (e.kp[j].x - t.kp[j].x).powi(2) + (e.kp[j].y - t.kp[j].y).powi(2))
                .sum();
            (sq / n).sqrt()
        })
        .sum();
    Ok(total / JOINT_COUNT as f64)
}

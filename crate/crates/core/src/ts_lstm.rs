//! Temporal-sliding LSTM network.
//!
//! One LSTM (parameters shared by every window) runs over windows of
//! `window` frames. The first window starts after `delay` frames and each
//! following one `stride` frames later. The final hidden states of all windows
//! are mean-pooled and optionally projected to `projection` features.

use serde::{Deserialize, Serialize};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::lstm::{backward_batch, forward_batch, HiddenGrad, LstmParams, LstmTape};
use crate::numeric::{Matrix, Parameters, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsLstmConfig {
    pub hidden: usize,
    pub delay: usize,
    pub window: usize,
    /// `None`: a single window, no sliding.
    pub stride: Option<usize>,
    /// `None`: the pooled hidden state is emitted as is.
    pub projection: Option<usize>,
}

impl TsLstmConfig {
    pub const fn new(
        hidden: usize,
        delay: usize,
        window: usize,
        stride: Option<usize>,
        projection: Option<usize>,
    ) -> Self {
        TsLstmConfig {
            hidden,
            delay,
            window,
            stride,
            projection,
        }
    }

    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        if self.stride == Some(0) {
            return Err(Error::Config("sliding stride must be at least 1".into()));
        }
        if self.projection == Some(0) {
            return Err(Error::Config("projection width must be at least 1".into()));
        }
        if self.delay + self.window > seq_len {
            return Err(Error::Config(format!(
                "delay {} + window {} exceeds sequence length {seq_len}",
                self.delay, self.window
            )));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.projection.unwrap_or(self.hidden)
    }
}

/// Window start frames for a sequence of `seq_len` frames.
pub fn window_positions(seq_len: usize, cfg: &TsLstmConfig) -> Result<Vec<usize>> {
    cfg.validate(seq_len)?;
    let Some(stride) = cfg.stride else {
        return Ok(vec![cfg.delay]);
    };
    Ok((cfg.delay..=seq_len - cfg.window).step_by(stride).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsLstmNetwork {
    pub config: TsLstmConfig,
    pub lstm: LstmParams,
    pub projection: Option<Dense>,
}

#[derive(Clone, Debug)]
pub struct TsLstmTape {
    batch: usize,
    starts: Vec<usize>,
    lstm: LstmTape,
    pooled: Matrix,
}

impl TsLstmTape {
    pub fn window_starts(&self) -> &[usize] {
        &self.starts
    }
}

impl TsLstmNetwork {
    pub fn new(config: TsLstmConfig, input_width: usize, rng: &mut Rng) -> Self {
        let lstm = LstmParams::init(input_width, config.hidden, rng);
        let projection = config.projection.map(|w| Dense::init(config.hidden, w, rng));
        TsLstmNetwork {
            config,
            lstm,
            projection,
        }
    }

    pub fn zeros(config: TsLstmConfig, input_width: usize) -> Self {
        TsLstmNetwork {
            config,
            lstm: LstmParams::zeros(input_width, config.hidden),
            projection: config.projection.map(|w| Dense::zeros(config.hidden, w)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        TsLstmNetwork::zeros(self.config, self.input_width())
    }

    pub fn input_width(&self) -> usize {
        self.lstm.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    /// Forward for a batch of equally long `seq_len × input_width` sequences.
    /// Returns `batch × output_width` features.
    pub fn forward_batch(&self, inputs: &[&Matrix]) -> Result<(Matrix, TsLstmTape)> {
        let Some(first) = inputs.first() else {
            return Err(Error::arg("empty batch"));
        };
        let (seq_len, width) = first.shape();
        for m in inputs {
            if m.shape() != (seq_len, self.input_width()) {
                return Err(Error::Dimension {
                    op: "ts-lstm forward",
                    left: m.shape(),
                    right: (seq_len, self.input_width()),
                });
            }
        }
        debug_assert_eq!(width, self.input_width());
        let starts = window_positions(seq_len, &self.config)?;
        let (batch, nw, steps) = (inputs.len(), starts.len(), self.config.window);
        let rows = batch * nw;

        let mut x = Matrix::zeros(steps * rows, width);
        for t in 0..steps {
            for (b, seq) in inputs.iter().enumerate() {
                for (k, &s) in starts.iter().enumerate() {
                    x.row_mut(t * rows + b * nw + k).copy_from_slice(seq.row(s + t));
                }
            }
        }
        let (hs, lstm_tape) = forward_batch(&x, rows, &self.lstm)?;

        let hidden = self.config.hidden;
        let scale = 1.0 / nw as f64;
        let mut pooled = Matrix::zeros(batch, hidden);
        for b in 0..batch {
            let out = pooled.row_mut(b);
            for k in 0..nw {
                for (o, h) in out.iter_mut().zip(hs.row((steps - 1) * rows + b * nw + k)) {
                    *o += h;
                }
            }
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let feature = match &self.projection {
            Some(p) => p.forward(&pooled)?,
            None => pooled.clone(),
        };
        let tape = TsLstmTape {
            batch,
            starts,
            lstm: lstm_tape,
            pooled,
        };
        Ok((feature, tape))
    }

    /// Adds the gradients for upstream `dfeature` (`batch × output_width`) into `grad`.
    pub fn backward_batch(&self, tape: &TsLstmTape, dfeature: &Matrix, grad: &mut TsLstmNetwork) -> Result<()> {
        if dfeature.shape() != (tape.batch, self.output_width()) {
            return Err(Error::state(format!(
                "feature gradient {:?} does not match tape ({}, {})",
                dfeature.shape(),
                tape.batch,
                self.output_width()
            )));
        }
        if grad.config != self.config || tape.pooled.cols() != self.config.hidden {
            return Err(Error::state(
                "gradient accumulator or tape belongs to another configuration",
            ));
        }
        let dpooled = match (&self.projection, &mut grad.projection) {
            (Some(p), Some(gp)) => p.backward(&tape.pooled, dfeature, gp)?,
            (None, None) => dfeature.clone(),
            _ => return Err(Error::state("projection presence differs from accumulator")),
        };
        let nw = tape.starts.len();
        let rows = tape.batch * nw;
        let scale = 1.0 / nw as f64;
        let mut dh = Matrix::zeros(rows, self.config.hidden);
        for b in 0..tape.batch {
            for k in 0..nw {
                for (d, s) in dh.row_mut(b * nw + k).iter_mut().zip(dpooled.row(b)) {
                    *d = s * scale;
                }
            }
        }
        backward_batch(&tape.lstm, HiddenGrad::Final(&dh), &self.lstm, &mut grad.lstm)?;
        Ok(())
    }
}

impl Parameters for TsLstmNetwork {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = self
            .lstm
            .params()
            .into_iter()
            .map(|(n, m)| (format!("lstm.{n}"), m))
            .collect();
        if let Some(p) = &self.projection {
            out.push(("proj.w".into(), &p.w));
            out.push(("proj.b".into(), &p.b));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = self
            .lstm
            .params_mut()
            .into_iter()
            .map(|(n, m)| (format!("lstm.{n}"), m))
            .collect();
        if let Some(p) = &mut self.projection {
            out.push(("proj.w".into(), &mut p.w));
            out.push(("proj.b".into(), &mut p.b));
        }
        out
    }
}

/// Single-sequence forward.
pub fn ts_lstm_forward(seq: &Matrix, net: &TsLstmNetwork) -> Result<(Vec<f64>, TsLstmTape)> {
    let (f, tape) = net.forward_batch(&[seq])?;
    Ok((f.into_vec(), tape))
}

/// Single-sequence backward; returns a fresh gradient set.
pub fn ts_lstm_backward(tape: &TsLstmTape, dfeature: &[f64], net: &TsLstmNetwork) -> Result<TsLstmNetwork> {
    let mut grad = net.zeros_like();
    net.backward_batch(tape, &Matrix::row_vector(dfeature), &mut grad)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{lstm_backward_window, lstm_forward_window};

    fn random_seq(len: usize, width: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(len, width, (0..len * width).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Independent enumeration: walk frame by frame and record every start that fits.
    fn enumerate_starts(seq_len: usize, cfg: &TsLstmConfig) -> Vec<usize> {
        let mut out = Vec::new();
        let mut s = cfg.delay;
        loop {
            if s + cfg.window > seq_len {
                break;
            }
            out.push(s);
            match cfg.stride {
                Some(ts) => s += ts,
                None => break,
            }
        }
        out
    }

    #[test]
    fn positions_for_first_ensemble_network() {
        let cfg = TsLstmConfig::new(256, 1, 5, Some(5), Some(128));
        assert_eq!(window_positions(24, &cfg).unwrap(), vec![1, 6, 11, 16]);
        assert_eq!(enumerate_starts(24, &cfg), vec![1, 6, 11, 16]);
    }

    #[test]
    fn positions_single_and_full() {
        let single = TsLstmConfig::new(256, 1, 23, None, Some(32));
        assert_eq!(window_positions(24, &single).unwrap(), vec![1]);
        let full = TsLstmConfig::new(4, 0, 24, Some(1), None);
        assert_eq!(window_positions(24, &full).unwrap(), vec![0]);
    }

    #[test]
    fn positions_reject_overflowing_config() {
        let bad = TsLstmConfig::new(4, 5, 20, Some(2), None);
        assert!(matches!(window_positions(24, &bad), Err(Error::Config(_))));
        assert!(TsLstmConfig::new(4, 0, 3, Some(0), None).validate(24).is_err());
    }

    #[test]
    fn window_count_formula() {
        for delay in 0..6 {
            for window in 1..=(24 - delay) {
                for stride in 1..10 {
                    let cfg = TsLstmConfig::new(2, delay, window, Some(stride), None);
                    let n = window_positions(24, &cfg).unwrap().len();
                    assert_eq!(n, (24 - delay - window) / stride + 1);
                    assert_eq!(window_positions(24, &cfg).unwrap(), enumerate_starts(24, &cfg));
                }
            }
        }
    }

    #[test]
    fn single_window_output_is_projected_final_state() {
        let mut rng = Rng::new(7);
        let cfg = TsLstmConfig::new(5, 2, 6, None, Some(3));
        let net = TsLstmNetwork::new(cfg, 4, &mut rng);
        let seq = random_seq(8, 4, &mut rng);
        let (feat, _) = ts_lstm_forward(&seq, &net).unwrap();
        let frames: Vec<Vec<f64>> = (2..8).map(|t| seq.row(t).to_vec()).collect();
        let (h, _) = lstm_forward_window(&frames, &net.lstm).unwrap();
        let proj = net.projection.as_ref().unwrap();
        let expected = proj.forward(&Matrix::row_vector(&h)).unwrap();
        for (a, b) in feat.iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_input_pools_to_window_output() {
        let mut rng = Rng::new(9);
        let cfg = TsLstmConfig::new(6, 0, 4, Some(4), None);
        let net = TsLstmNetwork::new(cfg, 3, &mut rng);
        let seq = Matrix::from_rows(&vec![vec![0.3, -0.2, 0.9]; 8]).unwrap();
        let (feat, _) = ts_lstm_forward(&seq, &net).unwrap();
        let (h, _) = lstm_forward_window(&vec![vec![0.3, -0.2, 0.9]; 4], &net.lstm).unwrap();
        for (a, b) in feat.iter().zip(&h) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn four_windows_equal_per_window_mean() {
        let mut rng = Rng::new(10);
        let cfg = TsLstmConfig::new(7, 1, 5, Some(5), None);
        let net = TsLstmNetwork::new(cfg, 36, &mut rng);
        let seq = random_seq(24, 36, &mut rng);
        let (feat, _) = ts_lstm_forward(&seq, &net).unwrap();
        let mut mean = vec![0.0; 7];
        for s in [1, 6, 11, 16] {
            let frames: Vec<Vec<f64>> = (s..s + 5).map(|t| seq.row(t).to_vec()).collect();
            let (h, _) = lstm_forward_window(&frames, &net.lstm).unwrap();
            for j in 0..7 {
                mean[j] += h[j] / 4.0;
            }
        }
        for (a, b) in feat.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = Rng::new(1);
        let net = TsLstmNetwork::new(TsLstmConfig::new(4, 0, 3, Some(3), Some(2)), 3, &mut rng);
        let seq = random_seq(9, 3, &mut rng);
        let (_, tape) = ts_lstm_forward(&seq, &net).unwrap();
        let g = ts_lstm_backward(&tape, &[0.0, 0.0], &net).unwrap();
        assert!(g.params().iter().all(|(_, m)| m.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_wrong_upstream() {
        let mut rng = Rng::new(1);
        let net = TsLstmNetwork::new(TsLstmConfig::new(4, 0, 3, Some(3), Some(2)), 3, &mut rng);
        let (_, tape) = ts_lstm_forward(&random_seq(9, 3, &mut rng), &net).unwrap();
        assert!(matches!(ts_lstm_backward(&tape, &[0.0; 4], &net), Err(Error::State(_))));
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let step = 1e-5;
        for (seed, proj) in [(3u64, None), (4, Some(5))] {
            let mut rng = Rng::new(seed);
            let net = TsLstmNetwork::new(TsLstmConfig::new(6, 0, 4, Some(4), proj), 5, &mut rng);
            let seq = random_seq(12, 5, &mut rng);
            let dfeat: Vec<f64> = (0..net.output_width()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let obj = |n: &TsLstmNetwork| -> f64 {
                let (f, _) = ts_lstm_forward(&seq, n).unwrap();
                f.iter().zip(&dfeat).map(|(a, b)| a * b).sum()
            };
            let (_, tape) = ts_lstm_forward(&seq, &net).unwrap();
            let grad = ts_lstm_backward(&tape, &dfeat, &net).unwrap();
            let mut probe = net.clone();
            let analytic: Vec<(String, Vec<f64>)> = grad
                .params()
                .into_iter()
                .map(|(n, m)| (n, m.as_slice().to_vec()))
                .collect();
            for (ti, (name, ga)) in analytic.iter().enumerate() {
                for k in 0..ga.len() {
                    let orig = probe.params()[ti].1.as_slice()[k];
                    probe.params_mut()[ti].1.as_mut_slice()[k] = orig + step;
                    let up = obj(&probe);
                    probe.params_mut()[ti].1.as_mut_slice()[k] = orig - step;
                    let down = obj(&probe);
                    probe.params_mut()[ti].1.as_mut_slice()[k] = orig;
                    let numeric = (up - down) / (2.0 * step);
                    assert!(rel_err(ga[k], numeric) < 1e-4, "{name}[{k}]: {} vs {numeric}", ga[k]);
                }
            }
        }
    }

    #[test]
    fn single_window_gradient_is_composition() {
        let mut rng = Rng::new(12);
        let net = TsLstmNetwork::new(TsLstmConfig::new(5, 1, 6, None, Some(3)), 4, &mut rng);
        let seq = random_seq(7, 4, &mut rng);
        let dfeat = [0.4, -1.1, 0.7];
        let (_, tape) = ts_lstm_forward(&seq, &net).unwrap();
        let grad = ts_lstm_backward(&tape, &dfeat, &net).unwrap();

        let frames: Vec<Vec<f64>> = (1..7).map(|t| seq.row(t).to_vec()).collect();
        let (h, wtape) = lstm_forward_window(&frames, &net.lstm).unwrap();
        let proj = net.projection.as_ref().unwrap();
        let mut gproj = Dense::zeros(5, 3);
        let dh = proj
            .backward(&Matrix::row_vector(&h), &Matrix::row_vector(&dfeat), &mut gproj)
            .unwrap();
        let gl = lstm_backward_window(&wtape, dh.as_slice(), &net.lstm).unwrap();
        assert!(grad.lstm.w.max_abs_diff(&gl.params.w) < 1e-12);
        assert!(grad.lstm.u.max_abs_diff(&gl.params.u) < 1e-12);
        assert!(grad.lstm.b.max_abs_diff(&gl.params.b) < 1e-12);
        assert!(grad.projection.unwrap().w.max_abs_diff(&gproj.w) < 1e-12);
    }

    #[test]
    fn shared_windows_sum_gradients() {
        let mut rng = Rng::new(13);
        let two = TsLstmNetwork::new(TsLstmConfig::new(4, 0, 4, Some(4), None), 3, &mut rng);
        let seq = random_seq(8, 3, &mut rng);
        let dfeat = [0.5, -0.3, 1.2, 0.1];
        let (_, tape) = ts_lstm_forward(&seq, &two).unwrap();
        let g2 = ts_lstm_backward(&tape, &dfeat, &two).unwrap();

        let half: Vec<f64> = dfeat.iter().map(|v| v / 2.0).collect();
        let mut sum = two.lstm.zeros_like();
        for delay in [0, 4] {
            let mut one = two.clone();
            one.config = TsLstmConfig::new(4, delay, 4, None, None);
            let (_, t1) = ts_lstm_forward(&seq, &one).unwrap();
            let g1 = ts_lstm_backward(&t1, &half, &one).unwrap();
            sum.w.axpy(1.0, &g1.lstm.w).unwrap();
            sum.u.axpy(1.0, &g1.lstm.u).unwrap();
            sum.b.axpy(1.0, &g1.lstm.b).unwrap();
        }
        assert!(g2.lstm.w.max_abs_diff(&sum.w) < 1e-12);
        assert!(g2.lstm.u.max_abs_diff(&sum.u) < 1e-12);
        assert!(g2.lstm.b.max_abs_diff(&sum.b) < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn windows_stay_in_range(delay in 0usize..24, window in 1usize..25, stride in proptest::option::of(1usize..12)) {
            let cfg = TsLstmConfig::new(1, delay, window, stride, None);
            match window_positions(24, &cfg) {
                Ok(starts) => {
                    proptest::prop_assert!(!starts.is_empty());
                    proptest::prop_assert!(starts.iter().all(|&s| s + window <= 24));
                    proptest::prop_assert_eq!(starts, enumerate_starts(24, &cfg));
                }
                Err(_) => proptest::prop_assert!(delay + window > 24),
            }
        }
    }
}

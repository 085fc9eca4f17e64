//! End-to-end composition: sanitize -> calibrate -> window -> correlation
//! -> spectrum -> features -> detect.
//!
//! Frames are pushed one at a time; windows complete as soon as their last
//! required frame arrives, so events stream out with a fixed latency of one
//! window length (the leading phase-ratio window). Processing is strictly
//! in window order and all state is explicit, which makes replays
//! bit-identical. A window failure is wrapped in [`Error::Stage`] with the
//! stage name and window index; per-frame failures carry the index of the
//! oldest incomplete window.
//!
//! Window `w` covers frames `[w*stride, w*stride + T - 1]`. The first
//! `warmup_windows` windows feed the one-time phase calibration and emit
//! nothing; the last of them is re-estimated post-calibration to seed the
//! angle-change baseline. Feature windows additionally need `T` frames of
//! history (trend and indicator lookback) and `T` frames of lookahead, so
//! with stride `T` and the default two warm-up windows the first event
//! covers window 2.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::aoa::{
    apply_calibration, calibrate_phase, estimate_correlation, music_spectrum, pick_peaks,
    smooth_coherence, AoaEstimate, CorrelationEstimate,
};
use crate::chansim::CsiFrame;
use crate::config::{DetectorMode, PipelineConfig};
use crate::detector::{aoa_change, detect, DetectionEvent, SvmModel};
use crate::error::{Error, Result};
use crate::features::{motion_indicator, phase_svr, rss_mean, rss_ratio, rss_std, FeatureVector};
use crate::geometry::ArrayGeometry;
use crate::sanitize::{sanitize_frame, smooth_amplitude_matrices, unwrap_phase, SanitizedFrame};

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub events: Vec<DetectionEvent>,
    pub features: Vec<FeatureVector>,
    pub aoa: Vec<AoaEstimate>,
    /// Per-antenna phase offsets removed after warm-up.
    pub calibration: Option<Vec<f64>>,
}

fn stage(stage: &'static str, window: usize, e: Error) -> Error {
    Error::Stage {
        stage,
        window: window as u64,
        source: Box::new(e),
    }
}

/// Streaming pipeline state machine.
pub struct Pipeline {
    cfg: PipelineConfig,
    geometry: ArrayGeometry,
    model: Option<SvmModel>,
    /// Sanitized frames still needed by incomplete windows; `buf[0]` holds
    /// frame index `buf_start`.
    buf: VecDeque<SanitizedFrame>,
    buf_start: usize,
    pushed: usize,
    next_window: usize,
    warmup_estimates: Vec<CorrelationEstimate>,
    calibration: Option<Vec<f64>>,
    prev_aoa: Option<AoaEstimate>,
    /// Consecutive threshold exceedances (threshold mode only).
    threshold_run: usize,
    out_features: Vec<FeatureVector>,
    out_aoa: Vec<AoaEstimate>,
}

impl Pipeline {
    /// A `None` model with the SVM detector selects features-only mode:
    /// windows are processed and features collected, but no events fire.
    pub fn new(config: &PipelineConfig, model: Option<SvmModel>) -> Result<Pipeline> {
        config.validate()?;
        let geometry = config.geometry()?;
        if config.coherent_smoothing && config.num_paths + 1 >= config.num_antennas {
            return Err(Error::Config(format!(
                "subarray smoothing shrinks the array to {} elements, too few for L={}",
                config.num_antennas - 1,
                config.num_paths
            )));
        }
        if let Some(m) = &model {
            m.validate()?;
        }
        Ok(Pipeline {
            cfg: config.clone(),
            geometry,
            model,
            buf: VecDeque::new(),
            buf_start: 0,
            pushed: 0,
            next_window: 0,
            warmup_estimates: Vec::new(),
            calibration: None,
            prev_aoa: None,
            threshold_run: 0,
            out_features: Vec::new(),
            out_aoa: Vec::new(),
        })
    }

    fn start(&self, w: usize) -> usize {
        w * self.cfg.window_stride
    }

    fn end(&self, w: usize) -> usize {
        self.start(w) + self.cfg.frames_per_window - 1
    }

    /// Whether window `w` has enough history for trend features.
    fn feature_eligible(&self, w: usize) -> bool {
        w >= self.cfg.warmup_windows && self.start(w) >= self.cfg.frames_per_window
    }

    /// Highest frame index window `w` waits for.
    fn requirement(&self, w: usize) -> usize {
        if self.feature_eligible(w) {
            self.end(w) + self.cfg.frames_per_window
        } else {
            self.end(w)
        }
    }

    fn frame(&self, t: usize) -> &SanitizedFrame {
        &self.buf[t - self.buf_start]
    }

    /// Triangular average of CSI amplitudes over the trailing window of up
    /// to `T` frames ending at `t`.
    fn smoothed_amp(&self, t: usize) -> Result<DMatrix<f64>> {
        let t_len = self.cfg.frames_per_window;
        let lo = t.saturating_sub(t_len - 1);
        let mats: Vec<&DMatrix<Complex64>> =
            (lo..=t).map(|u| &self.frame(u).csi_clean).collect();
        smooth_amplitude_matrices(&mats)
    }

    /// Window-ready copy of frame `t`: calibrated phase, smoothed amplitude.
    fn window_frame(&self, t: usize) -> Result<SanitizedFrame> {
        let mut frame = self.frame(t).clone();
        if let Some(offsets) = &self.calibration {
            apply_calibration(&mut frame.csi_clean, offsets)?;
        }
        let amp = self.smoothed_amp(t)?;
        for (v, a) in frame.csi_clean.iter_mut().zip(amp.iter()) {
            *v = Complex64::from_polar(*a, v.arg());
        }
        Ok(frame)
    }

    /// Unwrapped, calibrated phase matrix of frame `t`.
    fn phase_matrix(&self, t: usize) -> Result<DMatrix<f64>> {
        let mut m = self.frame(t).csi_clean.clone();
        if let Some(offsets) = &self.calibration {
            apply_calibration(&mut m, offsets)?;
        }
        unwrap_phase(&m.map(|v| v.arg()))
    }

    fn window_label(&self, start: usize, end: usize) -> Option<bool> {
        let mut true_count = 0usize;
        for t in start..=end {
            match self.frame(t).label {
                Some(true) => true_count += 1,
                Some(false) => {}
                None => return None,
            }
        }
        Some(2 * true_count >= self.cfg.frames_per_window)
    }

    fn correlation(&self, w: usize) -> Result<CorrelationEstimate> {
        let frames: Vec<SanitizedFrame> = (self.start(w)..=self.end(w))
            .map(|t| self.window_frame(t))
            .collect::<Result<_>>()
            .map_err(|e| stage("window", w, e))?;
        estimate_correlation(&frames).map_err(|e| stage("correlation", w, e))
    }

    fn spectrum_estimate(&self, w: usize) -> Result<AoaEstimate> {
        let r = self.correlation(w)?;
        let r = if self.cfg.fb_averaging || self.cfg.coherent_smoothing {
            smooth_coherence(&r, self.cfg.coherent_smoothing)
                .map_err(|e| stage("smooth", w, e))?
        } else {
            r
        };
        let spectrum =
            music_spectrum(&r, &self.geometry, self.cfg.num_paths, self.cfg.grid_step_deg)
                .map_err(|e| stage("music", w, e))?;
        let mut est = pick_peaks(&spectrum, self.cfg.num_paths);
        est.t = w as u64;
        Ok(est)
    }

    fn extract_features(&self, w: usize, est: &AoaEstimate) -> Result<FeatureVector> {
        let t_len = self.cfg.frames_per_window;
        let start = self.start(w);
        let end = self.end(w);

        let trend_rss: Vec<f64> = (end - t_len - 1..=end).map(|t| self.frame(t).rss_db).collect();
        let window_rss: Vec<f64> = (start..=end).map(|t| self.frame(t).rss_db).collect();

        let amps_a: Vec<DMatrix<f64>> = (start - t_len..start)
            .map(|t| self.smoothed_amp(t))
            .collect::<Result<_>>()?;
        let amps_b: Vec<DMatrix<f64>> = (start..=end)
            .map(|t| self.smoothed_amp(t))
            .collect::<Result<_>>()?;

        let prev_phases: Vec<DMatrix<f64>> = (end - t_len..=end)
            .map(|t| self.phase_matrix(t))
            .collect::<Result<_>>()?;
        let next_phases: Vec<DMatrix<f64>> = (end..=end + t_len)
            .map(|t| self.phase_matrix(t))
            .collect::<Result<_>>()?;

        Ok(FeatureVector {
            t: w as u64,
            aoa1_deg: est.angles_deg.first().copied(),
            aoa2_deg: est.angles_deg.get(1).copied(),
            rss_ratio: rss_ratio(&trend_rss, self.cfg.rss_ratio_linear)?,
            rss_std_db: rss_std(&window_rss)?,
            rss_mean_db: rss_mean(&window_rss)?,
            motion_indicator: motion_indicator(&amps_a, &amps_b)?,
            svr: phase_svr(&prev_phases, &next_phases)?,
            label: self.window_label(start, end),
        })
    }

    fn emit(&mut self, w: usize, est: &AoaEstimate, fv: &FeatureVector) -> Result<Option<DetectionEvent>> {
        let prev = self
            .prev_aoa
            .as_ref()
            .expect("baseline estimate exists after warm-up");
        match self.cfg.detector {
            DetectorMode::Svm => match &self.model {
                Some(model) => detect(model, fv, prev)
                    .map(Some)
                    .map_err(|e| stage("detect", w, e)),
                None => Ok(None),
            },
            DetectorMode::Threshold => {
                let change = aoa_change(prev, est);
                let threshold = self.cfg.threshold.threshold_deg;
                let exceeded = change.max_delta_deg.map_or(false, |d| d > threshold);
                self.threshold_run = if exceeded { self.threshold_run + 1 } else { 0 };
                let motion = self.threshold_run >= self.cfg.threshold.sustain_windows;
                // Keep the "motion iff positive score" convention despite
                // the sustain gate.
                let excess = change.max_delta_deg.unwrap_or(0.0) - threshold;
                let score = if motion { excess.max(0.0) } else { excess.min(0.0) };
                Ok(Some(DetectionEvent {
                    t: w as u64,
                    motion,
                    score,
                    aoa_delta_deg: change.max_delta_deg,
                    contributing: BTreeMap::new(),
                    imputed: false,
                }))
            }
        }
    }

    fn process_window(&mut self, w: usize) -> Result<Option<DetectionEvent>> {
        let warmup = self.cfg.warmup_windows;
        if w < warmup {
            let r = self.correlation(w)?;
            self.warmup_estimates.push(r);
            if w + 1 == warmup {
                let offsets =
                    calibrate_phase(&self.warmup_estimates).map_err(|e| stage("calibrate", w, e))?;
                self.calibration = Some(offsets);
                // Re-estimate the last warm-up window post-calibration so
                // the first live window has an angle-change baseline.
                let est = self.spectrum_estimate(w)?;
                self.out_aoa.push(est.clone());
                self.prev_aoa = Some(est);
            }
            return Ok(None);
        }

        let est = self.spectrum_estimate(w)?;
        let event = if self.feature_eligible(w) {
            let fv = self.extract_features(w, &est).map_err(|e| stage("features", w, e))?;
            let event = self.emit(w, &est, &fv)?;
            self.out_features.push(fv);
            event
        } else {
            None
        };
        self.out_aoa.push(est.clone());
        self.prev_aoa = Some(est);
        Ok(event)
    }

    /// Feeds one frame; returns the events of every window this frame
    /// completed (usually zero or one).
    pub fn push(&mut self, frame: CsiFrame) -> Result<Vec<DetectionEvent>> {
        let w = self.next_window;
        if frame.csi.nrows() != self.cfg.num_antennas
            || frame.csi.ncols() != self.cfg.num_subcarriers
        {
            return Err(stage(
                "ingest",
                w,
                Error::Data(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    frame.t,
                    frame.csi.nrows(),
                    frame.csi.ncols(),
                    self.cfg.num_antennas,
                    self.cfg.num_subcarriers
                )),
            ));
        }
        let clean = sanitize_frame(&frame).map_err(|e| stage("sanitize", w, e))?;
        self.buf.push_back(clean);
        self.pushed += 1;

        let mut events = Vec::new();
        while self.requirement(self.next_window) < self.pushed {
            let w = self.next_window;
            if let Some(event) = self.process_window(w)? {
                events.push(event);
            }
            self.next_window += 1;
        }

        // Drop frames no future window can reach: the deepest lookback is
        // the smoothing tail of the indicator's history window.
        let t_len = self.cfg.frames_per_window;
        let keep_from = self.start(self.next_window).saturating_sub(2 * t_len - 1);
        while self.buf_start < keep_from {
            self.buf.pop_front();
            self.buf_start += 1;
        }
        Ok(events)
    }

    /// Accepts an already-sanitized frame, bypassing the sanitize stage.
    pub fn push_sanitized(&mut self, frame: SanitizedFrame) -> Result<Vec<DetectionEvent>> {
        let w = self.next_window;
        if frame.csi_clean.nrows() != self.cfg.num_antennas
            || frame.csi_clean.ncols() != self.cfg.num_subcarriers
        {
            return Err(stage(
                "ingest",
                w,
                Error::Data(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    frame.t,
                    frame.csi_clean.nrows(),
                    frame.csi_clean.ncols(),
                    self.cfg.num_antennas,
                    self.cfg.num_subcarriers
                )),
            ));
        }
        self.buf.push_back(frame);
        self.pushed += 1;
        let mut events = Vec::new();
        while self.requirement(self.next_window) < self.pushed {
            let w = self.next_window;
            if let Some(event) = self.process_window(w)? {
                events.push(event);
            }
            self.next_window += 1;
        }
        let t_len = self.cfg.frames_per_window;
        let keep_from = self.start(self.next_window).saturating_sub(2 * t_len - 1);
        while self.buf_start < keep_from {
            self.buf.pop_front();
            self.buf_start += 1;
        }
        Ok(events)
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.out_features
    }

    pub fn aoa_estimates(&self) -> &[AoaEstimate] {
        &self.out_aoa
    }

    pub fn calibration(&self) -> Option<&[f64]> {
        self.calibration.as_deref()
    }

    pub fn into_parts(self) -> (Vec<FeatureVector>, Vec<AoaEstimate>, Option<Vec<f64>>) {
        (self.out_features, self.out_aoa, self.calibration)
    }
}

/// Runs the whole pipeline over a frame slice.
pub fn run_pipeline(
    config: &PipelineConfig,
    frames: &[CsiFrame],
    model: Option<SvmModel>,
) -> Result<PipelineRun> {
    let mut pipeline = Pipeline::new(config, model)?;
    let mut events = Vec::new();
    for frame in frames {
        events.extend(pipeline.push(frame.clone())?);
    }
    let (features, aoa, calibration) = pipeline.into_parts();
    Ok(PipelineRun {
        events,
        features,
        aoa,
        calibration,
    })
}

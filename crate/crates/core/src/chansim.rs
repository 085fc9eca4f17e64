//! Synthetic beam-weighted multipath CSI generation.
//!
//! Each observed frame is `Y(t) = H(t) + N(t)` where the channel column for
//! subcarrier `s` superimposes `L` dominant paths,
//!
//! ```text
//! h_s = sum_l  w(theta_l) .* a(theta_l) * gamma_{l,s}
//! ```
//!
//! with `a` the array steering vector, `w` the per-element beam-pattern
//! response at the path angle and `gamma_{l,s}` the complex path gain.
//! Noise is circularly-symmetric complex Gaussian with per-entry variance
//! `sigma^2`. Angles and gains are held stationary unless a motion segment
//! perturbs them, so sequences come with exact per-frame motion labels.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_vector, ArrayGeometry, BeamPattern, BeamPatternSpec};

/// One dominant propagation path with per-subcarrier complex gains.
#[derive(Debug, Clone)]
pub struct Path {
    /// Angle of arrival in degrees, open interval (-90, +90).
    pub aoa_deg: f64,
    /// Complex gain per subcarrier, length `S`.
    pub gains: Vec<Complex64>,
}

impl Path {
    /// Gain model `g * exp(j*(phase - 2*pi*s*f_delta*delay))`: a fixed
    /// magnitude and phase plus an optional linear phase across subcarriers
    /// standing in for the path delay.
    pub fn from_gain(
        aoa_deg: f64,
        gain: f64,
        phase_rad: f64,
        delay_s: f64,
        num_subcarriers: usize,
        subcarrier_spacing_hz: f64,
    ) -> Self {
        let gains = (0..num_subcarriers)
            .map(|s| {
                let phi = phase_rad
                    - 2.0 * std::f64::consts::PI * s as f64 * subcarrier_spacing_hz * delay_s;
                Complex64::from_polar(gain, phi)
            })
            .collect();
        Self { aoa_deg, gains }
    }
}

/// A validated set of dominant paths.
#[derive(Debug, Clone)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    /// Paths must be nonempty, lie strictly inside (-90, +90), carry equal
    /// gain lengths and be pairwise separated by at least `min_sep_deg`.
    pub fn new(paths: Vec<Path>, min_sep_deg: f64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Config("path set must contain at least one path".into()));
        }
        let s = paths[0].gains.len();
        for p in &paths {
            if p.aoa_deg <= -90.0 || p.aoa_deg >= 90.0 || !p.aoa_deg.is_finite() {
                return Err(Error::Config(format!(
                    "path angle {} deg outside (-90, +90)",
                    p.aoa_deg
                )));
            }
            if p.gains.len() != s {
                return Err(Error::Config("paths have mismatched gain lengths".into()));
            }
        }
        for i in 0..paths.len() {
            for j in i + 1..paths.len() {
                if (paths[i].aoa_deg - paths[j].aoa_deg).abs() < min_sep_deg {
                    return Err(Error::Config(format!(
                        "path angles {} and {} closer than {min_sep_deg} deg",
                        paths[i].aoa_deg, paths[j].aoa_deg
                    )));
                }
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// One PPDU observation: complex CSI, RSS and a frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    /// Frame index.
    pub t: u64,
    /// `M_R x S` complex CSI matrix.
    pub csi: DMatrix<Complex64>,
    /// Received signal strength in dB.
    pub rss_db: f64,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing_hz: f64,
    /// Source-device identifier.
    pub meta: String,
    /// Ground-truth motion label when the frame came from a scripted corpus.
    pub label: Option<bool>,
}

impl CsiFrame {
    /// Shape and finiteness checks shared by the simulator and the parser.
    pub fn validate(&self) -> Result<()> {
        if self.csi.nrows() < 2 {
            return Err(Error::Data(format!(
                "frame {} has {} antenna rows, need at least 2",
                self.t,
                self.csi.nrows()
            )));
        }
        if self.csi.ncols() < 2 {
            return Err(Error::Data(format!(
                "frame {} has {} subcarriers, need at least 2",
                self.t,
                self.csi.ncols()
            )));
        }
        if self.csi.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Data(format!("frame {} contains non-finite CSI", self.t)));
        }
        if !self.rss_db.is_finite() {
            return Err(Error::Data(format!("frame {} has non-finite RSS", self.t)));
        }
        Ok(())
    }
}

/// RSS in dB from the mean squared magnitude of the CSI entries.
pub fn rss_from_csi(csi: &DMatrix<Complex64>) -> f64 {
    let mean_power =
        csi.iter().map(|v| v.norm_sqr()).sum::<f64>() / (csi.nrows() * csi.ncols()) as f64;
    10.0 * mean_power.max(f64::MIN_POSITIVE).log10()
}

/// Synthesize one CSI frame from a path set plus AWGN of per-entry
/// variance `noise_power`. Requires `L < M_R` so the downstream noise
/// subspace is nonempty.
pub fn synthesize_frame<R: Rng>(
    geometry: &ArrayGeometry,
    pattern: &BeamPattern,
    paths: &PathSet,
    noise_power: f64,
    t: u64,
    rng: &mut R,
) -> Result<CsiFrame> {
    if paths.len() >= geometry.num_antennas {
        return Err(Error::Config(format!(
            "{} paths with {} antennas leaves no noise subspace",
            paths.len(),
            geometry.num_antennas
        )));
    }
    if noise_power < 0.0 {
        return Err(Error::Config("noise power must be nonnegative".into()));
    }
    let m = geometry.num_antennas;
    let s_count = paths.paths()[0].gains.len();
    let mut csi = DMatrix::<Complex64>::zeros(m, s_count);

    for path in paths.paths() {
        let a = steering_vector(geometry, path.aoa_deg, geometry.carrier_freq_hz)?;
        let w = pattern.responses_at(path.aoa_deg);
        if w.len() != m {
            return Err(Error::Config(format!(
                "beam pattern has {} elements for {} antennas",
                w.len(),
                m
            )));
        }
        for (s, gain) in path.gains.iter().enumerate() {
            for row in 0..m {
                csi[(row, s)] += w[row] * a[row] * gain;
            }
        }
    }

    if noise_power > 0.0 {
        let sigma = (noise_power / 2.0).sqrt();
        for v in csi.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(re * sigma, im * sigma);
        }
    }

    let rss_db = rss_from_csi(&csi);
    Ok(CsiFrame {
        t,
        csi,
        rss_db,
        subcarrier_spacing_hz: 312.5e3,
        meta: String::new(),
        label: None,
    })
}

// ---------------------------------------------------------------------------
// Scripted sequences
// ---------------------------------------------------------------------------

/// Declarative path description used by scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub aoa_deg: f64,
    pub gain: f64,
    #[serde(default)]
    pub phase_rad: f64,
    /// Path delay in nanoseconds; a nonzero value decorrelates the path
    /// gains across subcarriers.
    #[serde(default)]
    pub delay_ns: f64,
}

/// A motion interval. During `[start, end]` (inclusive) the affected path
/// angles sweep in a bounded triangular excursion at
/// `aoa_drift_deg_per_frame`, and path gains pick up per-frame complex
/// jitter of relative standard deviation `gain_jitter_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSegment {
    pub start: u64,
    pub end: u64,
    #[serde(default)]
    pub aoa_drift_deg_per_frame: f64,
    #[serde(default)]
    pub gain_jitter_std: f64,
    /// Indices of affected paths; omitted means all paths.
    #[serde(default)]
    pub paths: Option<Vec<usize>>,
}

/// Expands to evenly spaced motion segments: motion of `motion_frames`
/// frames every `period_frames`, starting at `first_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionBlocks {
    pub first_start: u64,
    pub period_frames: u64,
    pub motion_frames: u64,
    #[serde(default)]
    pub aoa_drift_deg_per_frame: f64,
    #[serde(default)]
    pub gain_jitter_std: f64,
    #[serde(default)]
    pub paths: Option<Vec<usize>>,
}

/// Per-frame sampling-time-offset and phase-offset jitter, mimicking the
/// STO/SFO artifacts of real extractors. A delay `tau` multiplies entry
/// `(m, s)` by `exp(j*(-2*pi*s*f_delta*tau + xi))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoJitter {
    pub tau_ns_std: f64,
    pub xi_std_rad: f64,
}

/// Full description of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub num_frames: u64,
    #[serde(default)]
    pub seed: u64,
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub pattern: BeamPatternSpec,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    /// Per-entry AWGN variance. When absent it is derived from `snr_db`.
    #[serde(default)]
    pub noise_power: Option<f64>,
    /// Signal-to-noise ratio in dB relative to the summed path powers.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub paths: Vec<PathConfig>,
    #[serde(default)]
    pub segments: Vec<MotionSegment>,
    #[serde(default)]
    pub motion_blocks: Option<MotionBlocks>,
    /// Static per-antenna phase offsets in radians, corrected by the
    /// warm-up calibration downstream.
    #[serde(default)]
    pub antenna_offsets_rad: Option<Vec<f64>>,
    #[serde(default)]
    pub sto_jitter: Option<StoJitter>,
}

fn default_name() -> String {
    "scenario".to_string()
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario parse: {e}")))
    }

    /// Effective noise variance: explicit value wins, otherwise derived
    /// from `snr_db` against the summed path powers, otherwise zero.
    pub fn effective_noise_power(&self) -> f64 {
        if let Some(np) = self.noise_power {
            return np;
        }
        if let Some(snr) = self.snr_db {
            let sig: f64 = self.paths.iter().map(|p| p.gain * p.gain).sum();
            return sig / 10f64.powf(snr / 10.0);
        }
        0.0
    }

    /// All motion segments, explicit plus expanded blocks, clipped to the
    /// frame range.
    pub fn all_segments(&self) -> Vec<MotionSegment> {
        let mut segs = self.segments.clone();
        if let Some(b) = &self.motion_blocks {
            let mut start = b.first_start;
            while start < self.num_frames {
                segs.push(MotionSegment {
                    start,
                    end: (start + b.motion_frames - 1).min(self.num_frames - 1),
                    aoa_drift_deg_per_frame: b.aoa_drift_deg_per_frame,
                    gain_jitter_std: b.gain_jitter_std,
                    paths: b.paths.clone(),
                });
                start += b.period_frames;
            }
        }
        segs.sort_by_key(|s| s.start);
        segs
    }

    fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::Config("scenario has no paths".into()));
        }
        if self.num_frames == 0 {
            return Err(Error::Config("scenario has zero frames".into()));
        }
        if self.num_subcarriers < 2 {
            return Err(Error::Config("scenario needs at least 2 subcarriers".into()));
        }
        if let Some(offsets) = &self.antenna_offsets_rad {
            if offsets.len() != self.geometry.num_antennas {
                return Err(Error::Config(format!(
                    "{} antenna offsets for {} antennas",
                    offsets.len(),
                    self.geometry.num_antennas
                )));
            }
        }
        for seg in self.all_segments() {
            if seg.end < seg.start {
                return Err(Error::Config(format!(
                    "segment [{}, {}] ends before it starts",
                    seg.start, seg.end
                )));
            }
            if let Some(idx) = &seg.paths {
                if idx.iter().any(|&i| i >= self.paths.len()) {
                    return Err(Error::Config("segment references unknown path index".into()));
                }
            }
        }
        Ok(())
    }
}

/// Bounded triangular angle excursion: after `elapsed` motion frames the
/// offset has advanced by `rate` per frame up to the segment midpoint and
/// retreats at the same rate afterwards, returning to the base angle.
fn triangular_offset(elapsed: u64, seg_len: u64, rate: f64) -> f64 {
    let half = seg_len.div_ceil(2);
    let e1 = elapsed + 1;
    let steps = if e1 <= half { e1 } else { 2 * half - e1.min(2 * half) };
    rate * steps as f64
}

/// Deterministic scripted corpus: frames plus aligned motion labels.
pub fn synthesize_sequence(scenario: &Scenario) -> Result<Vec<CsiFrame>> {
    scenario.validate()?;
    let geometry = &scenario.geometry;
    let pattern = scenario.pattern.build(geometry.num_antennas, 0.5)?;
    let noise_power = scenario.effective_noise_power();
    let segments = scenario.all_segments();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut frames = Vec::with_capacity(scenario.num_frames as usize);

    for t in 0..scenario.num_frames {
        let active: Vec<&MotionSegment> =
            segments.iter().filter(|s| t >= s.start && t <= s.end).collect();
        let label = !active.is_empty();

        // Resolve per-frame path states: drifted angle and jittered gains.
        let mut resolved = Vec::with_capacity(scenario.paths.len());
        for (i, p) in scenario.paths.iter().enumerate() {
            let mut aoa = p.aoa_deg;
            let mut jitter = Complex64::new(1.0, 0.0);
            for seg in &active {
                let affected = seg.paths.as_ref().map_or(true, |v| v.contains(&i));
                if !affected {
                    continue;
                }
                if seg.aoa_drift_deg_per_frame != 0.0 {
                    aoa += triangular_offset(
                        t - seg.start,
                        seg.end - seg.start + 1,
                        seg.aoa_drift_deg_per_frame,
                    );
                }
                if seg.gain_jitter_std > 0.0 {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    jitter += Complex64::new(re, im) * seg.gain_jitter_std
                        / std::f64::consts::SQRT_2;
                }
            }
            let aoa = aoa.clamp(-89.9, 89.9);
            let mut path = Path::from_gain(
                aoa,
                p.gain,
                p.phase_rad,
                p.delay_ns * 1e-9,
                scenario.num_subcarriers,
                scenario.subcarrier_spacing_hz,
            );
            if jitter != Complex64::new(1.0, 0.0) {
                for g in &mut path.gains {
                    *g *= jitter;
                }
            }
            resolved.push(path);
        }

        let paths = PathSet::new(resolved, 1e-9)?;
        let mut frame = synthesize_frame(geometry, &pattern, &paths, noise_power, t, &mut rng)?;

        if let Some(offsets) = &scenario.antenna_offsets_rad {
            for (m, &off) in offsets.iter().enumerate() {
                let rot = Complex64::from_polar(1.0, off);
                for s in 0..frame.csi.ncols() {
                    frame.csi[(m, s)] *= rot;
                }
            }
        }
        if let Some(sto) = &scenario.sto_jitter {
            let tau_n: f64 = StandardNormal.sample(&mut rng);
            let xi_n: f64 = StandardNormal.sample(&mut rng);
            let tau = tau_n * sto.tau_ns_std * 1e-9;
            let xi = xi_n * sto.xi_std_rad;
            for s in 0..frame.csi.ncols() {
                let phi = -2.0 * std::f64::consts::PI * s as f64 * scenario.subcarrier_spacing_hz
                    * tau
                    + xi;
                let rot = Complex64::from_polar(1.0, phi);
                for m in 0..frame.csi.nrows() {
                    frame.csi[(m, s)] *= rot;
                }
            }
        }

        frame.rss_db = rss_from_csi(&frame.csi);
        frame.subcarrier_spacing_hz = scenario.subcarrier_spacing_hz;
        frame.meta = scenario.name.clone();
        frame.label = Some(label);
        frames.push(frame);
    }
    Ok(frames)
}

//! Subspace AoA estimation on beam-weighted CSI.
//!
//! The antenna correlation matrix is estimated over a window of frames with
//! every subcarrier contributing a snapshot,
//!
//! ```text
//! R = 1/(T*S) * sum_{t,s}  y_{t,s} y_{t,s}^H ,
//! ```
//!
//! optionally decohered by forward-backward averaging and forward spatial
//! smoothing, and scanned with the MUSIC pseudo-spectrum
//! `P(theta) = 1 / (a^H(theta) E E^H a(theta))` where `E` stacks the
//! eigenvectors of the `M_R - L` smallest eigenvalues. The scan uses the
//! plain steering vector: beam weights are part of the observed mixing and
//! are deliberately not inverted, so peak angles are a stable subspace
//! signature rather than calibrated arrival directions.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_grid, ArrayGeometry, BeamPattern};
use crate::sanitize::SanitizedFrame;

/// Sample antenna correlation matrix for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    /// Hermitian PSD matrix; `M_R x M_R`, or smaller after subarray smoothing.
    pub matrix: DMatrix<Complex64>,
    /// Number of frames that contributed snapshots.
    pub num_frames_used: usize,
    /// Frame index of the first frame in the window.
    pub window_start: u64,
}

impl CorrelationEstimate {
    /// Hermitian within 1e-12, PSD within `-1e-9 * lambda_max`, and trace
    /// consistent with the eigenvalue sum to 1e-9 relative.
    pub fn validate(&self) -> Result<()> {
        let r = &self.matrix;
        for i in 0..r.nrows() {
            for j in 0..r.ncols() {
                let d = r[(i, j)] - r[(j, i)].conj();
                if d.norm() > 1e-12 {
                    return Err(Error::Data(format!(
                        "correlation not Hermitian at ({i}, {j}): asymmetry {}",
                        d.norm()
                    )));
                }
            }
        }
        let (vals, _) = eigh_ascending(r);
        let lmax = vals.last().copied().unwrap_or(0.0);
        if vals[0] < -1e-9 * lmax.max(1e-300) {
            return Err(Error::Data(format!(
                "correlation not PSD: smallest eigenvalue {}",
                vals[0]
            )));
        }
        let trace: f64 = (0..r.nrows()).map(|i| r[(i, i)].re).sum();
        let sum: f64 = vals.iter().sum();
        if (trace - sum).abs() > 1e-9 * trace.abs().max(1e-300) && trace.abs() > 1e-30 {
            return Err(Error::Data(format!(
                "trace {trace} inconsistent with eigenvalue sum {sum}"
            )));
        }
        Ok(())
    }
}

/// MUSIC pseudo-spectrum over a uniform angle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpectrum {
    pub angle_grid_deg: Vec<f64>,
    pub values: Vec<f64>,
    /// True when the denominator hit the 1e-18 clamp anywhere.
    pub saturated: bool,
}

impl SpatialSpectrum {
    pub fn validate(&self) -> Result<()> {
        if self.angle_grid_deg.len() != self.values.len() || self.angle_grid_deg.len() < 3 {
            return Err(Error::Data("spectrum grid/value length mismatch".into()));
        }
        let step = self.angle_grid_deg[1] - self.angle_grid_deg[0];
        for w in self.angle_grid_deg.windows(2) {
            let d = w[1] - w[0];
            if d <= 0.0 || (d - step).abs() > 1e-9 {
                return Err(Error::Data("spectrum grid not uniformly increasing".into()));
            }
        }
        if self.values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Data("spectrum values must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Dominant AoAs for one window, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AoaEstimate {
    /// Window index; `pick_peaks` leaves it 0 for the caller to fill.
    pub t: u64,
    /// Peak angles in degrees, sorted by descending peak height.
    pub angles_deg: Vec<f64>,
    #[serde(rename = "peaks")]
    pub peak_values: Vec<f64>,
    /// Set when fewer than the requested L local maxima exist.
    pub underresolved: bool,
}

/// Hermitian eigendecomposition with deterministic ordering: eigenvalues
/// ascending, each eigenvector rotated so its first significant component
/// is real-positive.
pub fn eigh_ascending(r: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let n = r.nrows();
    let se = r.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let mut vals = Vec::with_capacity(n);
    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        vals.push(se.eigenvalues[src]);
        let col = se.eigenvectors.column(src);
        let max_abs = col.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let pivot = col
            .iter()
            .find(|v| v.norm() > 1e-12 * max_abs.max(1e-300))
            .copied()
            .unwrap_or(Complex64::new(1.0, 0.0));
        let rot = Complex64::from_polar(1.0, -pivot.arg());
        for i in 0..n {
            vecs[(i, k)] = col[i] * rot;
        }
    }
    (vals, vecs)
}

/// Sample correlation with subcarriers pooled as snapshots.
pub fn estimate_correlation(window: &[SanitizedFrame]) -> Result<CorrelationEstimate> {
    if window.is_empty() {
        return Err(Error::Precondition("correlation needs at least one frame".into()));
    }
    let (m, s) = window[0].csi_clean.shape();
    for f in window {
        if f.csi_clean.shape() != (m, s) {
            return Err(Error::Data(format!(
                "frame {} shape {:?} differs from window shape {:?}",
                f.t,
                f.csi_clean.shape(),
                (m, s)
            )));
        }
    }
    let mut r = DMatrix::<Complex64>::zeros(m, m);
    for f in window {
        for col in 0..s {
            let y = f.csi_clean.column(col);
            for i in 0..m {
                for j in 0..m {
                    r[(i, j)] += y[i] * y[j].conj();
                }
            }
        }
    }
    r /= Complex64::new((window.len() * s) as f64, 0.0);
    hermitize(&mut r);
    Ok(CorrelationEstimate {
        matrix: r,
        num_frames_used: window.len(),
        window_start: window[0].t,
    })
}

fn hermitize(r: &mut DMatrix<Complex64>) {
    let n = r.nrows();
    for i in 0..n {
        r[(i, i)] = Complex64::new(r[(i, i)].re, 0.0);
        for j in i + 1..n {
            let avg = (r[(i, j)] + r[(j, i)].conj()) / 2.0;
            r[(i, j)] = avg;
            r[(j, i)] = avg.conj();
        }
    }
}

fn exchange_conjugate(r: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = r.nrows();
    DMatrix::from_fn(n, n, |i, j| r[(n - 1 - i, n - 1 - j)].conj())
}

/// Coherence removal: forward-backward averaging, plus forward spatial
/// smoothing over the two size `M_R - 1` subarrays when `subarray_smoothing`
/// is set (the output matrix shrinks accordingly).
pub fn smooth_coherence(
    r: &CorrelationEstimate,
    subarray_smoothing: bool,
) -> Result<CorrelationEstimate> {
    let n = r.matrix.nrows();
    if n < 3 {
        return Err(Error::Precondition(format!(
            "coherence removal needs at least 3 antennas, got {n}"
        )));
    }
    let forward = if subarray_smoothing {
        let sub = n - 1;
        let mut acc = DMatrix::<Complex64>::zeros(sub, sub);
        for k in 0..2 {
            acc += r.matrix.view((k, k), (sub, sub));
        }
        acc / Complex64::new(2.0, 0.0)
    } else {
        r.matrix.clone()
    };
    let mut out = (&forward + exchange_conjugate(&forward)) / Complex64::new(2.0, 0.0);
    hermitize(&mut out);
    Ok(CorrelationEstimate {
        matrix: out,
        num_frames_used: r.num_frames_used,
        window_start: r.window_start,
    })
}

/// Steering vector for the scan, sized to the correlation matrix (which may
/// be a subarray after smoothing). Unlike path synthesis, the scan covers
/// the closed interval including endfire.
fn scan_vector(geometry: &ArrayGeometry, theta_deg: f64, len: usize) -> Vec<Complex64> {
    let phi = geometry.phase_shift(theta_deg, geometry.carrier_freq_hz);
    (0..len)
        .map(|m| Complex64::from_polar(1.0, -(m as f64) * phi))
        .collect()
}

const DENOMINATOR_CLAMP: f64 = 1e-18;

/// MUSIC pseudo-spectrum of the correlation estimate for `L` sources over a
/// uniform grid of `grid_step_deg` covering [-90, +90].
pub fn music_spectrum(
    r: &CorrelationEstimate,
    geometry: &ArrayGeometry,
    l: usize,
    grid_step_deg: f64,
) -> Result<SpatialSpectrum> {
    let n = r.matrix.nrows();
    if l == 0 || l >= n {
        return Err(Error::Precondition(format!(
            "need 1 <= L < {n} to keep a noise subspace, got L={l}"
        )));
    }
    if !(grid_step_deg > 0.0 && grid_step_deg <= 45.0) {
        return Err(Error::Config(format!("bad grid step {grid_step_deg} deg")));
    }
    let (_, vecs) = eigh_ascending(&r.matrix);
    let noise_dim = n - l;
    let grid = angle_grid(grid_step_deg);
    let mut values = Vec::with_capacity(grid.len());
    let mut saturated = false;
    for &theta in &grid {
        let a = scan_vector(geometry, theta, n);
        let mut den = 0.0;
        for k in 0..noise_dim {
            let mut dot = Complex64::new(0.0, 0.0);
            for i in 0..n {
                dot += vecs[(i, k)].conj() * a[i];
            }
            den += dot.norm_sqr();
        }
        if den < DENOMINATOR_CLAMP {
            den = DENOMINATOR_CLAMP;
            saturated = true;
        }
        values.push(1.0 / den);
    }
    let spectrum = SpatialSpectrum {
        angle_grid_deg: grid,
        values,
        saturated,
    };
    spectrum.validate()?;
    Ok(spectrum)
}

/// Top `L` local maxima of the spectrum, strongest first, ties broken by
/// the smaller angle. Strict maxima only (plateaus count once, at their
/// leftmost sample); a scan endpoint strictly above its neighbor counts,
/// so a source at the edge of the grid is still reported. Interior
/// locations are refined by a three-point parabolic fit clamped to half a
/// grid cell. Fewer maxima than requested sets `underresolved` rather than
/// failing.
pub fn pick_peaks(spectrum: &SpatialSpectrum, l: usize) -> AoaEstimate {
    let v = &spectrum.values;
    let grid = &spectrum.angle_grid_deg;
    let step = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    if v.len() > 1 && v[0] > v[1] {
        peaks.push((0, v[0]));
    }
    let mut i = 1;
    while i + 1 < v.len() {
        if v[i] > v[i - 1] {
            let mut j = i;
            while j + 1 < v.len() && v[j + 1] == v[i] {
                j += 1;
            }
            if j + 1 < v.len() && v[j + 1] < v[i] {
                peaks.push((i, v[i]));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    if v.len() > 1 && v[v.len() - 1] > v[v.len() - 2] {
        peaks.push((v.len() - 1, v[v.len() - 1]));
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(l);

    let mut angles = Vec::with_capacity(peaks.len());
    let mut heights = Vec::with_capacity(peaks.len());
    for (idx, height) in peaks {
        let mut angle = grid[idx];
        if idx > 0 && idx + 1 < v.len() {
            let (vl, vc, vr) = (v[idx - 1], v[idx], v[idx + 1]);
            let den = vl - 2.0 * vc + vr;
            if den != 0.0 {
                let offset = (0.5 * (vl - vr) / den).clamp(-0.5, 0.5);
                angle += offset * step;
            }
        }
        angles.push(angle);
        heights.push(height);
    }
    let underresolved = angles.len() < l;
    AoaEstimate {
        t: 0,
        angles_deg: angles,
        peak_values: heights,
        underresolved,
    }
}

/// One-time warm-up phase calibration. Offsets are the phases of the first
/// column of the averaged correlation matrix relative to element 0; valid
/// when the warm-up scene is static.
pub fn calibrate_phase(warmup: &[CorrelationEstimate]) -> Result<Vec<f64>> {
    if warmup.is_empty() {
        return Err(Error::Precondition("calibration needs at least one warm-up window".into()));
    }
    let n = warmup[0].matrix.nrows();
    let mut avg = DMatrix::<Complex64>::zeros(n, n);
    for w in warmup {
        if w.matrix.nrows() != n {
            return Err(Error::Data("warm-up windows have mismatched sizes".into()));
        }
        avg += &w.matrix;
    }
    avg /= Complex64::new(warmup.len() as f64, 0.0);
    let base = avg[(0, 0)].arg();
    Ok((0..n).map(|m| avg[(m, 0)].arg() - base).collect())
}

/// Removes per-antenna offsets in place: row `m` is rotated by
/// `exp(-j * offsets[m])`.
pub fn apply_calibration(csi: &mut DMatrix<Complex64>, offsets: &[f64]) -> Result<()> {
    if offsets.len() != csi.nrows() {
        return Err(Error::Config(format!(
            "{} offsets for {} antenna rows",
            offsets.len(),
            csi.nrows()
        )));
    }
    for (m, &off) in offsets.iter().enumerate() {
        let rot = Complex64::from_polar(1.0, -off);
        for s in 0..csi.ncols() {
            csi[(m, s)] *= rot;
        }
    }
    Ok(())
}

/// Diagnostic for the orthogonality assumption behind scanning with plain
/// steering vectors: the largest off-diagonal magnitude of the normalized
/// Gram matrix of beam-weighted steering vectors at the given angles.
pub fn pattern_gram_offdiagonal(
    geometry: &ArrayGeometry,
    pattern: &BeamPattern,
    angles_deg: &[f64],
) -> Result<f64> {
    if angles_deg.len() < 2 {
        return Err(Error::Precondition("need at least two angles for a Gram diagnostic".into()));
    }
    let m = geometry.num_antennas;
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(angles_deg.len());
    for &theta in angles_deg {
        let a = scan_vector(geometry, theta, m);
        let w = pattern.responses_at(theta);
        let mut b: Vec<Complex64> = a.iter().zip(w).map(|(ai, wi)| ai * wi).collect();
        let norm = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(Error::Data(format!("beam response vanishes at {theta} deg")));
        }
        for v in &mut b {
            *v /= norm;
        }
        cols.push(b);
    }
    let mut worst = 0.0f64;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let dot: Complex64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(x, y)| x.conj() * y)
                .sum();
            worst = worst.max(dot.norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{synthesize_frame, Path, PathSet};
    use crate::geometry::steering_vector;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn frame_from_matrix(t: u64, csi: DMatrix<Complex64>) -> SanitizedFrame {
        SanitizedFrame {
            t,
            csi_clean: csi,
            tau_hat: 0.0,
            xi_hat: 0.0,
            rss_db: 0.0,
            subcarrier_spacing_hz: 312.5e3,
            meta: String::new(),
            label: None,
        }
    }

    fn geometry() -> ArrayGeometry {
        ArrayGeometry::default_array()
    }

    #[test]
    fn single_snapshot_outer_product() {
        let y = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
        ];
        let csi = DMatrix::from_column_slice(4, 1, &y);
        let r = estimate_correlation(&[frame_from_matrix(0, csi)]).unwrap();
        r.validate().unwrap();
        let row0: Vec<Complex64> = (0..4).map(|j| r.matrix[(0, j)]).collect();
        let want = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        for (got, want) in row0.iter().zip(&want) {
            assert_relative_eq!(got.re, want.re, epsilon = 1e-15);
            assert_relative_eq!(got.im, want.im, epsilon = 1e-15);
        }
        let trace: f64 = (0..4).map(|i| r.matrix[(i, i)].re).sum();
        assert_relative_eq!(trace, 4.0, epsilon = 1e-12);
        let (vals, _) = eigh_ascending(&r.matrix);
        assert!(vals[..3].iter().all(|v| v.abs() < 1e-12));
        assert_relative_eq!(vals[3], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_matrix() {
        let csi = DMatrix::<Complex64>::zeros(4, 8);
        let r = estimate_correlation(&[frame_from_matrix(0, csi)]).unwrap();
        assert!(r.matrix.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn iid_noise_correlation_approaches_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut frames = Vec::new();
        for t in 0..100 {
            let csi = DMatrix::from_fn(4, 100, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) / 2f64.sqrt()
            });
            frames.push(frame_from_matrix(t, csi));
        }
        let r = estimate_correlation(&frames).unwrap();
        let mut err = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                err += (r.matrix[(i, j)] - Complex64::new(want, 0.0)).norm_sqr();
            }
        }
        assert!(err.sqrt() < 0.1, "Frobenius error {}", err.sqrt());
    }

    #[test]
    fn shape_mismatch_is_a_data_error() {
        let a = frame_from_matrix(0, DMatrix::zeros(4, 8));
        let b = frame_from_matrix(1, DMatrix::zeros(4, 9));
        assert!(matches!(
            estimate_correlation(&[a, b]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn fb_averaging_fixes_persymmetric_matrices() {
        // A steering outer product is Hermitian Toeplitz, hence persymmetric.
        let a = steering_vector(&geometry(), 35.0, geometry().carrier_freq_hz).unwrap();
        let r = DMatrix::from_fn(4, 4, |i, j| a[i] * a[j].conj());
        let est = CorrelationEstimate {
            matrix: r.clone(),
            num_frames_used: 1,
            window_start: 0,
        };
        let fb = smooth_coherence(&est, false).unwrap();
        for (x, y) in fb.matrix.iter().zip(r.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
        let id = CorrelationEstimate {
            matrix: DMatrix::identity(4, 4),
            num_frames_used: 1,
            window_start: 0,
        };
        let fb = smooth_coherence(&id, false).unwrap();
        assert_eq!(fb.matrix, DMatrix::identity(4, 4));
    }

    #[test]
    fn fb_preserves_trace_and_hermitian_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DMatrix::from_fn(4, 32, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        });
        let r = estimate_correlation(&[frame_from_matrix(0, y)]).unwrap();
        let fb = smooth_coherence(&r, false).unwrap();
        fb.validate().unwrap();
        let t0: f64 = (0..4).map(|i| r.matrix[(i, i)].re).sum();
        let t1: f64 = (0..4).map(|i| fb.matrix[(i, i)].re).sum();
        assert_relative_eq!(t0, t1, max_relative = 1e-12);
    }

    fn coherent_pair_correlation() -> CorrelationEstimate {
        // Second path fully coherent with the first: same subcarrier profile
        // scaled by a fixed complex constant.
        let g1 = 1.0;
        let c = Complex64::from_polar(0.8, 0.5);
        let s_count = 53;
        let gains1: Vec<Complex64> = (0..s_count).map(|_| Complex64::new(g1, 0.0)).collect();
        let gains2: Vec<Complex64> = gains1.iter().map(|g| g * c).collect();
        let paths = PathSet::new(
            vec![
                Path { aoa_deg: -20.0, gains: gains1 },
                Path { aoa_deg: 30.0, gains: gains2 },
            ],
            0.5,
        )
        .unwrap();
        let pattern = BeamPattern::identity(4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut frames = Vec::new();
        for t in 0..7 {
            let f = synthesize_frame(&geometry(), &pattern, &paths, 0.0, t, &mut rng).unwrap();
            frames.push(frame_from_matrix(t, f.csi));
        }
        estimate_correlation(&frames).unwrap()
    }

    fn top_two_angles(r: &CorrelationEstimate) -> Vec<f64> {
        let spec = music_spectrum(r, &geometry(), 2, 0.5).unwrap();
        let mut est = pick_peaks(&spec, 2).angles_deg;
        est.sort_by(f64::total_cmp);
        est
    }

    #[test]
    fn subarray_smoothing_resolves_coherent_pair() {
        let r = coherent_pair_correlation();

        let plain = top_two_angles(&r);
        let plain_ok = plain.len() == 2
            && (plain[0] + 20.0).abs() <= 1.0
            && (plain[1] - 30.0).abs() <= 1.0;
        assert!(!plain_ok, "plain MUSIC unexpectedly resolved coherent pair: {plain:?}");

        let smoothed = smooth_coherence(&r, true).unwrap();
        assert_eq!(smoothed.matrix.nrows(), 3);
        smoothed.validate().unwrap();
        let est = top_two_angles(&smoothed);
        assert_eq!(est.len(), 2, "smoothed MUSIC found {est:?}");
        assert!((est[0] + 20.0).abs() <= 1.0, "got {est:?}");
        assert!((est[1] - 30.0).abs() <= 1.0, "got {est:?}");
    }

    #[test]
    fn single_noiseless_source_saturates_at_truth() {
        let a = steering_vector(&geometry(), 20.0, geometry().carrier_freq_hz).unwrap();
        let r = CorrelationEstimate {
            matrix: DMatrix::from_fn(4, 4, |i, j| a[i] * a[j].conj()),
            num_frames_used: 1,
            window_start: 0,
        };
        let spec = music_spectrum(&r, &geometry(), 1, 0.5).unwrap();
        assert!(spec.saturated);
        let best = spec
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(spec.angle_grid_deg[best], 20.0);
        assert_relative_eq!(spec.values[best], 1e18);
    }

    #[test]
    fn pure_noise_spectrum_is_flat() {
        let r = CorrelationEstimate {
            matrix: DMatrix::identity(4, 4).map(|v: f64| Complex64::new(2.5 * v, 0.0)),
            num_frames_used: 1,
            window_start: 0,
        };
        let spec = music_spectrum(&r, &geometry(), 2, 0.5).unwrap();
        let max = spec.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = spec.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 1.0 + 1e-6, "ratio {}", max / min);
    }

    fn noisy_two_source_correlation() -> CorrelationEstimate {
        let g = 0.01;
        let paths = PathSet::new(
            vec![
                Path::from_gain(-25.0, g, 0.0, 0.0, 53, 312.5e3),
                Path::from_gain(25.0, g, 1.0, 60e-9, 53, 312.5e3),
            ],
            0.5,
        )
        .unwrap();
        let pattern = BeamPattern::identity(4, 0.5);
        let noise = 2.0 * g * g / 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let frames: Vec<SanitizedFrame> = (0..7)
            .map(|t| {
                let f =
                    synthesize_frame(&geometry(), &pattern, &paths, noise, t, &mut rng).unwrap();
                frame_from_matrix(t, f.csi)
            })
            .collect();
        estimate_correlation(&frames).unwrap()
    }

    #[test]
    fn argmax_invariant_to_positive_scaling() {
        // Distinct eigenvalues keep the noise projector well defined; a
        // degenerate (tied-eigenvalue) matrix would make the argmax of the
        // scaled copy legitimately basis-dependent.
        let r = noisy_two_source_correlation();
        let scaled = CorrelationEstimate {
            matrix: r.matrix.clone() * Complex64::new(3.7, 0.0),
            num_frames_used: r.num_frames_used,
            window_start: 0,
        };
        let s1 = music_spectrum(&r, &geometry(), 2, 0.5).unwrap();
        let s2 = music_spectrum(&scaled, &geometry(), 2, 0.5).unwrap();
        let am = |s: &SpatialSpectrum| {
            s.values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(am(&s1), am(&s2));
    }

    #[test]
    fn two_sources_recovered_within_a_degree() {
        // Independent per-path subcarrier profiles via distinct delays,
        // 20 dB SNR, 7x53 snapshots.
        let r = noisy_two_source_correlation();
        let fb = smooth_coherence(&r, false).unwrap();
        let est = top_two_angles(&fb);
        assert_eq!(est.len(), 2);
        assert!((est[0] + 25.0).abs() <= 1.0, "got {est:?}");
        assert!((est[1] - 25.0).abs() <= 1.0, "got {est:?}");
    }

    #[test]
    fn l_must_leave_noise_subspace() {
        let r = CorrelationEstimate {
            matrix: DMatrix::identity(4, 4),
            num_frames_used: 1,
            window_start: 0,
        };
        assert!(matches!(
            music_spectrum(&r, &geometry(), 4, 0.5),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            music_spectrum(&r, &geometry(), 0, 0.5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn peak_picking_flags_underresolution() {
        let grid: Vec<f64> = (0..11).map(|i| -2.5 + 0.5 * i as f64).collect();
        let mut values = vec![1.0; 11];
        values[5] = 3.0;
        let spec = SpatialSpectrum { angle_grid_deg: grid, values, saturated: false };
        let est = pick_peaks(&spec, 2);
        assert_eq!(est.angles_deg.len(), 1);
        assert!(est.underresolved);
        assert_relative_eq!(est.angles_deg[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_twin_peaks_tie_break_on_angle() {
        let grid: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
        let values = vec![1.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 1.0];
        let spec = SpatialSpectrum { angle_grid_deg: grid, values, saturated: false };
        let est = pick_peaks(&spec, 2);
        assert_eq!(est.angles_deg.len(), 2);
        assert!(!est.underresolved);
        assert!(est.angles_deg[0] < est.angles_deg[1]);
        assert_relative_eq!(est.angles_deg[0], -1.5, epsilon = 1e-12);
    }

    #[test]
    fn parabolic_refinement_matches_vertex_formula() {
        let spec = SpatialSpectrum {
            angle_grid_deg: vec![10.0, 10.5, 11.0],
            values: vec![1.0, 3.0, 2.0],
            saturated: false,
        };
        let est = pick_peaks(&spec, 1);
        assert_relative_eq!(est.angles_deg[0], 10.583_333_333_333_334, epsilon = 1e-12);
        assert_relative_eq!(est.peak_values[0], 3.0);
    }

    #[test]
    fn endpoints_count_when_strictly_above_their_neighbor() {
        let spec = SpatialSpectrum {
            angle_grid_deg: vec![0.0, 0.5, 1.0],
            values: vec![5.0, 1.0, 4.0],
            saturated: false,
        };
        let est = pick_peaks(&spec, 2);
        assert_eq!(est.angles_deg, vec![0.0, 1.0]);
        assert_eq!(est.peak_values, vec![5.0, 4.0]);
        assert!(!est.underresolved);

        // A flat edge is not a maximum.
        let flat = SpatialSpectrum {
            angle_grid_deg: vec![0.0, 0.5, 1.0],
            values: vec![2.0, 2.0, 1.0],
            saturated: false,
        };
        let est = pick_peaks(&flat, 2);
        assert!(est.angles_deg.is_empty());
        assert!(est.underresolved);
    }

    #[test]
    fn calibration_recovers_injected_offsets() {
        let offsets = [0.0, 0.4, -0.2, 1.1];
        let mut csi = DMatrix::<Complex64>::zeros(4, 53);
        for m in 0..4 {
            for s in 0..53 {
                // Static broadside source: steering vector all ones, so the
                // first correlation column carries exactly the offsets.
                csi[(m, s)] = Complex64::from_polar(1.0, offsets[m]);
            }
        }
        let frames: Vec<SanitizedFrame> =
            (0..7).map(|t| frame_from_matrix(t, csi.clone())).collect();
        let r = estimate_correlation(&frames).unwrap();
        let got = calibrate_phase(&[r.clone()]).unwrap();
        for (g, w) in got.iter().zip(&offsets) {
            assert_relative_eq!(g, w, epsilon = 1e-6);
        }

        let mut corrected = csi.clone();
        apply_calibration(&mut corrected, &got).unwrap();
        let frames2: Vec<SanitizedFrame> =
            (0..7).map(|t| frame_from_matrix(t, corrected.clone())).collect();
        let r2 = estimate_correlation(&frames2).unwrap();
        let again = calibrate_phase(&[r2]).unwrap();
        for g in &again {
            assert!(g.abs() < 1e-9, "second pass offset {g}");
        }

        assert!(matches!(calibrate_phase(&[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn angle_error_shrinks_as_noise_vanishes() {
        let truth = 15.0;
        let mut mean_err = Vec::new();
        for &noise in &[1e-2, 1e-6] {
            let mut total = 0.0;
            for seed in 0..50u64 {
                let paths = PathSet::new(
                    vec![Path::from_gain(truth, 1.0, 0.2, 0.0, 16, 312.5e3)],
                    0.5,
                )
                .unwrap();
                let pattern = BeamPattern::identity(4, 0.5);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let frames: Vec<SanitizedFrame> = (0..7)
                    .map(|t| {
                        let f = synthesize_frame(&geometry(), &pattern, &paths, noise, t, &mut rng)
                            .unwrap();
                        frame_from_matrix(t, f.csi)
                    })
                    .collect();
                let r = estimate_correlation(&frames).unwrap();
                let spec = music_spectrum(&r, &geometry(), 1, 0.5).unwrap();
                let est = pick_peaks(&spec, 1);
                total += (est.angles_deg[0] - truth).abs();
            }
            mean_err.push(total / 50.0);
        }
        assert!(
            mean_err[1] < mean_err[0],
            "error did not shrink with noise: {mean_err:?}"
        );
    }

    #[test]
    fn gram_diagnostic_reports_pattern_overlap() {
        let geom = geometry();
        let identity = BeamPattern::identity(4, 0.5);
        let worst = pattern_gram_offdiagonal(&geom, &identity, &[-40.0, 10.0, 55.0]).unwrap();
        assert!(worst < 0.6, "unexpected overlap {worst}");
        assert!(worst > 0.0);
        assert!(matches!(
            pattern_gram_offdiagonal(&geom, &identity, &[10.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn eigh_is_deterministic_and_sign_fixed() {
        let r = coherent_pair_correlation();
        let (v1, e1) = eigh_ascending(&r.matrix);
        let (v2, e2) = eigh_ascending(&r.matrix);
        assert_eq!(v1, v2);
        assert_eq!(e1, e2);
        for k in 0..4 {
            let col = e1.column(k);
            let max_abs = col.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
            let pivot = col.iter().find(|v| v.norm() > 1e-12 * max_abs).unwrap();
            assert!(pivot.re > 0.0);
            assert!(pivot.im.abs() < 1e-12 * max_abs);
        }
        assert!(v1.windows(2).all(|w| w[0] <= w[1]));
    }
}

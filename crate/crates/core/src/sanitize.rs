//! CSI phase sanitization: unwrap, STO/offset removal, amplitude smoothing.
//!
//! Raw extractor phase arrives wrapped to [-pi, pi] and carries a sampling
//! time offset that shows up as a linear phase ramp across subcarriers plus
//! a constant per-packet offset. Both are estimated per frame by a pooled
//! ordinary least squares fit over all antennas,
//!
//! ```text
//! phi_{m,s} ~ alpha + beta * s,    tau_hat = -beta / (2*pi*f_delta),
//!                                  xi_hat  = alpha,
//! ```
//!
//! and removed with `phi_hat = phi + 2*pi*s*f_delta*tau_hat - xi_hat`.
//! Amplitudes pass through untouched; a separate triangular moving average
//! smooths |Y| across a window of consecutive frames.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::chansim::CsiFrame;
use crate::error::{Error, Result};

/// A frame whose phase ramp and offset have been regressed out.
#[derive(Debug, Clone, PartialEq)]
pub struct SanitizedFrame {
    pub t: u64,
    /// `M_R x S` CSI with sanitized phase; amplitudes as observed.
    pub csi_clean: DMatrix<Complex64>,
    /// Estimated sampling time offset in seconds.
    pub tau_hat: f64,
    /// Estimated constant phase offset in radians.
    pub xi_hat: f64,
    pub rss_db: f64,
    pub subcarrier_spacing_hz: f64,
    pub meta: String,
    pub label: Option<bool>,
}

/// Unwraps phase along the subcarrier axis independently per antenna row.
/// Output entries differ from the input by integer multiples of 2*pi and
/// consecutive differences never exceed pi in magnitude.
pub fn unwrap_phase(raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const SLACK: f64 = 1e-9;
    for v in raw.iter() {
        if !v.is_finite() {
            return Err(Error::Data("non-finite wrapped phase".into()));
        }
        if v.abs() > PI + SLACK {
            return Err(Error::Precondition(format!(
                "wrapped phase {v} outside [-pi, pi]"
            )));
        }
    }
    let mut out = raw.clone();
    for m in 0..raw.nrows() {
        for s in 1..raw.ncols() {
            let prev = out[(m, s - 1)];
            let turns = ((raw[(m, s)] - prev) / TAU).round();
            out[(m, s)] = raw[(m, s)] - TAU * turns;
        }
    }
    Ok(out)
}

/// Pooled least-squares estimate of the sampling time offset and constant
/// phase offset from unwrapped phase. One shared slope and intercept are
/// fit over all antenna rows; the balanced design makes the pooled slope
/// the average of the per-antenna slopes.
pub fn estimate_sto(unwrapped: &DMatrix<f64>, f_delta_hz: f64) -> Result<(f64, f64)> {
    let s_count = unwrapped.ncols();
    if s_count < 2 {
        return Err(Error::Precondition(format!(
            "STO regression needs at least 2 subcarriers, got {s_count}"
        )));
    }
    if !(f_delta_hz > 0.0) {
        return Err(Error::Precondition(format!(
            "subcarrier spacing must be positive, got {f_delta_hz}"
        )));
    }
    let n = (unwrapped.nrows() * s_count) as f64;
    let x_mean = (s_count - 1) as f64 / 2.0;
    let grand_mean = unwrapped.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for m in 0..unwrapped.nrows() {
        for s in 0..s_count {
            let dx = s as f64 - x_mean;
            sxy += dx * (unwrapped[(m, s)] - grand_mean);
            sxx += dx * dx;
        }
    }
    let beta = sxy / sxx;
    let alpha = grand_mean - beta * x_mean;
    let tau_hat = -beta / (TAU * f_delta_hz);
    Ok((tau_hat, alpha))
}

/// Removes the fitted phase ramp and offset:
/// `phi + 2*pi*s*f_delta*tau_hat - xi_hat` per entry, `s` zero-based.
pub fn sanitize_phase(
    unwrapped: &DMatrix<f64>,
    tau_hat: f64,
    xi_hat: f64,
    f_delta_hz: f64,
) -> DMatrix<f64> {
    let mut out = unwrapped.clone();
    for s in 0..out.ncols() {
        let ramp = TAU * s as f64 * f_delta_hz * tau_hat - xi_hat;
        for m in 0..out.nrows() {
            out[(m, s)] += ramp;
        }
    }
    out
}

/// Triangular weighted moving average of CSI amplitudes over a window of
/// consecutive frames: weights `(1, 2, ..., ceil(T/2), ..., 2, 1)`
/// normalized to sum one.
pub fn smooth_amplitude(window: &[CsiFrame]) -> Result<DMatrix<f64>> {
    let mats: Vec<&DMatrix<Complex64>> = window.iter().map(|f| &f.csi).collect();
    smooth_amplitude_matrices(&mats)
}

/// The same average over bare CSI matrices.
pub fn smooth_amplitude_matrices(window: &[&DMatrix<Complex64>]) -> Result<DMatrix<f64>> {
    let t_len = window.len();
    if t_len == 0 {
        return Err(Error::Precondition("amplitude smoothing needs a nonempty window".into()));
    }
    let shape = window[0].shape();
    for m in window {
        if m.shape() != shape {
            return Err(Error::Data("window frames have mismatched CSI shapes".into()));
        }
    }
    let weights: Vec<f64> = (0..t_len).map(|i| (i + 1).min(t_len - i) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut out = DMatrix::<f64>::zeros(shape.0, shape.1);
    for (m, w) in window.iter().zip(&weights) {
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += w * v.norm();
        }
    }
    out /= total;
    Ok(out)
}

/// Full per-frame sanitization: unwrap, regress, remove. Amplitudes are
/// preserved exactly; only the phase changes.
pub fn sanitize_frame(frame: &CsiFrame) -> Result<SanitizedFrame> {
    frame.validate()?;
    let raw_phase = frame.csi.map(|v| v.arg());
    let unwrapped = unwrap_phase(&raw_phase)?;
    let (tau_hat, xi_hat) = estimate_sto(&unwrapped, frame.subcarrier_spacing_hz)?;
    let clean_phase = sanitize_phase(&unwrapped, tau_hat, xi_hat, frame.subcarrier_spacing_hz);
    let mut csi_clean = DMatrix::<Complex64>::zeros(frame.csi.nrows(), frame.csi.ncols());
    for (i, (v, phi)) in frame.csi.iter().zip(clean_phase.iter()).enumerate() {
        csi_clean[i] = Complex64::from_polar(v.norm(), *phi);
    }
    Ok(SanitizedFrame {
        t: frame.t,
        csi_clean,
        tau_hat,
        xi_hat,
        rss_db: frame.rss_db,
        subcarrier_spacing_hz: frame.subcarrier_spacing_hz,
        meta: frame.meta.clone(),
        label: frame.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const F_DELTA: f64 = 312.5e3;

    fn linear_phase(m_r: usize, s_count: usize, tau_s: f64, xi: f64) -> DMatrix<f64> {
        DMatrix::from_fn(m_r, s_count, |_, s| -TAU * s as f64 * F_DELTA * tau_s + xi)
    }

    #[test]
    fn unwrap_constant_is_identity() {
        let raw = DMatrix::from_element(3, 5, 0.3);
        assert_eq!(unwrap_phase(&raw).unwrap(), raw);
    }

    #[test]
    fn unwrap_corrects_wraparound_jump() {
        let raw = DMatrix::from_row_slice(1, 2, &[3.0, -3.0]);
        let out = unwrap_phase(&raw).unwrap();
        assert_relative_eq!(out[(0, 0)], 3.0);
        assert_relative_eq!(out[(0, 1)], 3.283_185_307_179_586_2, epsilon = 1e-15);
    }

    #[test]
    fn unwrap_rejects_nan_and_out_of_range() {
        let raw = DMatrix::from_row_slice(1, 2, &[0.1, f64::NAN]);
        assert!(matches!(unwrap_phase(&raw), Err(Error::Data(_))));
        let raw = DMatrix::from_row_slice(1, 2, &[0.1, 4.0]);
        assert!(matches!(unwrap_phase(&raw), Err(Error::Precondition(_))));
    }

    #[test]
    fn sto_recovered_exactly_on_noiseless_ramp() {
        let unwrapped = linear_phase(4, 53, 50e-9, -0.7);
        let (tau, xi) = estimate_sto(&unwrapped, F_DELTA).unwrap();
        assert_relative_eq!(tau, 50e-9, max_relative = 1e-12);
        assert_relative_eq!(xi, -0.7, max_relative = 1e-12);
    }

    #[test]
    fn sto_zero_on_zero_phase() {
        let unwrapped = DMatrix::zeros(4, 16);
        let (tau, xi) = estimate_sto(&unwrapped, F_DELTA).unwrap();
        assert_eq!(tau, 0.0);
        assert_eq!(xi, 0.0);
    }

    #[test]
    fn sto_needs_two_subcarriers() {
        let unwrapped = DMatrix::zeros(4, 1);
        assert!(matches!(
            estimate_sto(&unwrapped, F_DELTA),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn sanitize_zeroes_a_pure_ramp() {
        let unwrapped = linear_phase(4, 53, 50e-9, -0.7);
        let (tau, xi) = estimate_sto(&unwrapped, F_DELTA).unwrap();
        let clean = sanitize_phase(&unwrapped, tau, xi, F_DELTA);
        for v in clean.iter() {
            assert!(v.abs() < 1e-12, "residual {v}");
        }
    }

    #[test]
    fn sanitize_preserves_regression_orthogonal_residual() {
        // r = (2, -1, -2, -1, 2) has zero sum and zero covariance with the
        // subcarrier index, so OLS removal must return it untouched.
        let residual = [2.0, -1.0, -2.0, -1.0, 2.0];
        let mut unwrapped = linear_phase(3, 5, 30e-9, 0.4);
        for m in 0..3 {
            for s in 0..5 {
                unwrapped[(m, s)] += residual[s];
            }
        }
        let (tau, xi) = estimate_sto(&unwrapped, F_DELTA).unwrap();
        let clean = sanitize_phase(&unwrapped, tau, xi, F_DELTA);
        for m in 0..3 {
            for s in 0..5 {
                assert_relative_eq!(clean[(m, s)], residual[s], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sanitize_is_idempotent() {
        let mut unwrapped = linear_phase(4, 16, 20e-9, 1.1);
        for s in 0..16 {
            unwrapped[(2, s)] += ((s * 7) % 5) as f64 * 0.1;
        }
        let (tau, xi) = estimate_sto(&unwrapped, F_DELTA).unwrap();
        let once = sanitize_phase(&unwrapped, tau, xi, F_DELTA);
        let (tau2, xi2) = estimate_sto(&once, F_DELTA).unwrap();
        assert!(tau2.abs() < 1e-9 / (TAU * F_DELTA));
        assert!(xi2.abs() < 1e-9);
        let twice = sanitize_phase(&once, tau2, xi2, F_DELTA);
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn smoothing_weights_match_hand_computation() {
        let mk = |amp: f64, t: u64| CsiFrame {
            t,
            csi: DMatrix::from_element(2, 3, Complex64::new(amp, 0.0)),
            rss_db: 0.0,
            subcarrier_spacing_hz: F_DELTA,
            meta: String::new(),
            label: None,
        };
        let window = vec![mk(1.0, 0), mk(2.0, 1), mk(3.0, 2)];
        let out = smooth_amplitude(&window).unwrap();
        for v in out.iter() {
            assert_relative_eq!(*v, 2.0, epsilon = 1e-15);
        }
        let single = smooth_amplitude(&window[..1]).unwrap();
        for v in single.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-15);
        }
        let identical = vec![mk(1.5, 0); 7];
        let out = smooth_amplitude(&identical).unwrap();
        for v in out.iter() {
            assert_relative_eq!(*v, 1.5, epsilon = 1e-15);
        }
        assert!(matches!(
            smooth_amplitude(&[]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn frame_sanitization_preserves_amplitude_and_self_reports_clean() {
        let mut csi = DMatrix::<Complex64>::zeros(4, 24);
        for m in 0..4 {
            for s in 0..24 {
                let amp = 1.0 + 0.1 * m as f64 + 0.02 * s as f64;
                let phi = -TAU * s as f64 * F_DELTA * 80e-9 + 0.9 - 0.3 * m as f64;
                csi[(m, s)] = Complex64::from_polar(amp, phi);
            }
        }
        let frame = CsiFrame {
            t: 5,
            csi: csi.clone(),
            rss_db: rss(&csi),
            subcarrier_spacing_hz: F_DELTA,
            meta: "dev".into(),
            label: Some(false),
        };
        let clean = sanitize_frame(&frame).unwrap();
        assert_relative_eq!(clean.tau_hat, 80e-9, max_relative = 1e-10);
        for (a, b) in clean.csi_clean.iter().zip(csi.iter()) {
            assert_relative_eq!(a.norm(), b.norm(), epsilon = 1e-12);
        }
        let phase = clean.csi_clean.map(|v| v.arg());
        let unwrapped = unwrap_phase(&phase).unwrap();
        let (tau2, _) = estimate_sto(&unwrapped, F_DELTA).unwrap();
        assert!((TAU * F_DELTA * tau2).abs() < 1e-9, "residual slope");
        assert_eq!(clean.t, 5);
        assert_eq!(clean.meta, "dev");
    }

    #[test]
    fn sto_error_shrinks_with_more_subcarriers() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, StandardNormal};

        let tau_true = 50e-9;
        let mut means = Vec::new();
        for &s_count in &[8usize, 16, 32, 64] {
            let mut total = 0.0;
            for seed in 0..100u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut phases = linear_phase(4, s_count, tau_true, 0.2);
                for v in phases.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v += 0.5 * n;
                    let _ = rng.gen::<f64>();
                }
                let (tau, _) = estimate_sto(&phases, F_DELTA).unwrap();
                total += (tau - tau_true).abs();
            }
            means.push(total / 100.0);
        }
        for pair in means.windows(2) {
            assert!(pair[1] < pair[0], "error did not shrink: {means:?}");
        }
    }

    fn rss(csi: &DMatrix<Complex64>) -> f64 {
        crate::chansim::rss_from_csi(csi)
    }

    proptest! {
        #[test]
        fn unwrap_differs_by_whole_turns(raw in proptest::collection::vec(-PI..PI, 2..40)) {
            let m = DMatrix::from_row_slice(1, raw.len(), &raw);
            let out = unwrap_phase(&m).unwrap();
            for (o, i) in out.iter().zip(m.iter()) {
                let turns = (o - i) / TAU;
                prop_assert!((turns - turns.round()).abs() < 1e-9);
            }
            for s in 1..raw.len() {
                prop_assert!((out[(0, s)] - out[(0, s - 1)]).abs() <= PI + 1e-9);
            }
        }
    }
}

//! Scalar free-space propagation of sampled complex optical fields.
//!
//! Fields are `h x w` arrays of [`Complex64`] sampled on a square grid of
//! spacing `pitch`. Propagation over a distance `z` uses the angular-spectrum
//! method: FFT the field, multiply by the frequency-domain transfer function
//! `exp(j 2 pi z sqrt(1/lambda^2 - f^2))`, inverse FFT. Spatial frequencies
//! with `f^2 >= 1/lambda^2` are evanescent and are zeroed rather than allowed
//! to grow. A distance of exactly zero is the identity.
//!
//! [`Propagator::propagate_adjoint`] applies the conjugate transpose of the
//! (linear) propagation operator, which the backward pass uses to carry
//! field-space gradients from one plane back to the previous one.
//!
//! [`rayleigh_sommerfeld_direct`] is a deliberately naive O(n^4) quadrature
//! of the first Rayleigh–Sommerfeld diffraction integral. It exists purely as
//! an independent reference for validating the FFT path and is far too slow
//! for anything else.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// A sampled complex field.
pub type Field = Array2<Complex64>;

/// Sampling geometry of one plane: grid shape, pixel pitch, and wavelength
/// (both lengths in the same unit, conventionally meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub pitch: f64,
    pub wavelength: f64,
}

impl Grid {
    pub fn new(h: usize, w: usize, pitch: f64, wavelength: f64) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidParam(format!(
                "grid must be non-empty, got {h}x{w}"
            )));
        }
        if !pitch.is_finite() || pitch <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "pitch must be positive, got {pitch}"
            )));
        }
        if !wavelength.is_finite() || wavelength <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        Ok(Self {
            h,
            w,
            pitch,
            wavelength,
        })
    }
}

/// Unnormalized DFT spatial frequency for index `k` of `n` samples spaced
/// `pitch` apart, in standard FFT ordering (non-negative first, then the
/// negative half; even `n` puts the Nyquist bin in the negative half).
fn dft_frequency(k: usize, n: usize, pitch: f64) -> f64 {
    let k = k as isize;
    let n = n as isize;
    let signed = if k < (n + 1) / 2 { k } else { k - n };
    signed as f64 / (n as f64 * pitch)
}

/// Planned in-place 2-D FFT over row-major `h x w` complex arrays.
struct Fft2 {
    h: usize,
    w: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            fwd_row: planner.plan_fft_forward(w),
            fwd_col: planner.plan_fft_forward(h),
            inv_row: planner.plan_fft_inverse(w),
            inv_col: planner.plan_fft_inverse(h),
        }
    }

    /// Run `row_fft` over every row and `col_fft` over every column, in place.
    fn pass(&self, a: &mut Field, row_fft: &Arc<dyn Fft<f64>>, col_fft: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(a.dim(), (self.h, self.w));
        let mut scratch = vec![
            Complex64::default();
            row_fft
                .get_inplace_scratch_len()
                .max(col_fft.get_inplace_scratch_len())
        ];
        {
            let buf = a
                .as_slice_mut()
                .expect("field must be contiguous row-major");
            for row in buf.chunks_exact_mut(self.w) {
                row_fft.process_with_scratch(row, &mut scratch);
            }
        }
        let mut col = vec![Complex64::default(); self.h];
        for j in 0..self.w {
            for i in 0..self.h {
                col[i] = a[(i, j)];
            }
            col_fft.process_with_scratch(&mut col, &mut scratch);
            for i in 0..self.h {
                a[(i, j)] = col[i];
            }
        }
    }

    fn forward(&self, a: &mut Field) {
        self.pass(a, &self.fwd_row, &self.fwd_col);
    }

    /// Inverse transform, normalized by `1 / (h * w)`.
    fn inverse(&self, a: &mut Field) {
        self.pass(a, &self.inv_row, &self.inv_col);
        let scale = 1.0 / (self.h * self.w) as f64;
        a.mapv_inplace(|v| v * scale);
    }
}

/// Angular-spectrum propagator for one fixed grid and distance.
///
/// Construction precomputes the FFT plans and the transfer function, so a
/// propagator should be built once and reused. All methods take `&self` and
/// are safe to call concurrently.
pub struct Propagator {
    grid: Grid,
    distance: f64,
    transfer: Field,
    fft: Fft2,
    forward_calls: AtomicU64,
    adjoint_calls: AtomicU64,
}

impl Propagator {
    pub fn new(grid: Grid, distance: f64) -> Result<Self> {
        if !distance.is_finite() || distance < 0.0 {
            return Err(Error::InvalidParam(format!(
                "propagation distance must be non-negative, got {distance}"
            )));
        }
        let inv_wl_sq = 1.0 / (grid.wavelength * grid.wavelength);
        let mut transfer = Array2::from_elem((grid.h, grid.w), Complex64::new(1.0, 0.0));
        if distance > 0.0 {
            for i in 0..grid.h {
                let fy = dft_frequency(i, grid.h, grid.pitch);
                for j in 0..grid.w {
                    let fx = dft_frequency(j, grid.w, grid.pitch);
                    let f_sq = fx * fx + fy * fy;
                    transfer[(i, j)] = if f_sq < inv_wl_sq {
                        let kz = 2.0 * std::f64::consts::PI * distance * (inv_wl_sq - f_sq).sqrt();
                        Complex64::from_polar(1.0, kz)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
            }
        }
        Ok(Self {
            grid,
            distance,
            transfer,
            fft: Fft2::new(grid.h, grid.w),
            forward_calls: AtomicU64::new(0),
            adjoint_calls: AtomicU64::new(0),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    fn check_shape(&self, field: &Field) -> Result<()> {
        if field.dim() != (self.grid.h, self.grid.w) {
            return Err(Error::ShapeMismatch(format!(
                "field is {:?}, propagator expects {}x{}",
                field.dim(),
                self.grid.h,
                self.grid.w
            )));
        }
        Ok(())
    }

    fn apply(&self, field: &Field, conjugate_transfer: bool) -> Result<Field> {
        self.check_shape(field)?;
        if self.distance == 0.0 {
            // Exact identity: the zero-distance limit of the transfer function
            // is 1 everywhere, including the evanescent part.
            return Ok(field.clone());
        }
        let mut out = field.clone();
        self.fft.forward(&mut out);
        if conjugate_transfer {
            out.zip_mut_with(&self.transfer, |v, &t| *v *= t.conj());
        } else {
            out.zip_mut_with(&self.transfer, |v, &t| *v *= t);
        }
        self.fft.inverse(&mut out);
        Ok(out)
    }

    /// Propagate a field forward over this propagator's distance.
    pub fn propagate(&self, field: &Field) -> Result<Field> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        self.apply(field, false)
    }

    /// Apply the conjugate transpose of the propagation operator.
    ///
    /// Because the operator is `IFFT . diag(transfer) . FFT` with unitary
    /// transforms (up to the 1/(hw) pairing) this is the same pipeline with
    /// the transfer function conjugated. Used to pull gradients backward.
    pub fn propagate_adjoint(&self, field: &Field) -> Result<Field> {
        self.adjoint_calls.fetch_add(1, Ordering::Relaxed);
        self.apply(field, true)
    }
}

#[doc(hidden)]
impl Propagator {
    /// Test instrumentation: number of [`Propagator::propagate`] calls.
    pub fn forward_call_count(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Test instrumentation: number of [`Propagator::propagate_adjoint`] calls.
    pub fn adjoint_call_count(&self) -> u64 {
        self.adjoint_calls.load(Ordering::Relaxed)
    }
}

/// Sum of squared magnitudes of a field.
pub fn total_power(field: &Field) -> f64 {
    field.iter().map(|v| v.norm_sqr()).sum()
}

/// Relative L2 distance `||a - b|| / ||b||` between two fields.
pub fn relative_l2_error(a: &Field, b: &Field) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y).norm_sqr();
        den += y.norm_sqr();
    }
    (num / den).sqrt()
}

/// Embed `small` centered in a zero field of shape `h x w`.
pub fn embed_centered(small: &Field, h: usize, w: usize) -> Result<Field> {
    let (sh, sw) = small.dim();
    if sh > h || sw > w {
        return Err(Error::ShapeMismatch(format!(
            "cannot embed {sh}x{sw} into smaller {h}x{w}"
        )));
    }
    let (r0, c0) = ((h - sh) / 2, (w - sw) / 2);
    let mut out = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    out.slice_mut(ndarray::s![r0..r0 + sh, c0..c0 + sw])
        .assign(small);
    Ok(out)
}

/// Extract the centered `h x w` window of `big`; inverse of [`embed_centered`].
pub fn crop_centered(big: &Field, h: usize, w: usize) -> Result<Field> {
    let (bh, bw) = big.dim();
    if h > bh || w > bw {
        return Err(Error::ShapeMismatch(format!(
            "cannot crop {h}x{w} from smaller {bh}x{bw}"
        )));
    }
    let (r0, c0) = ((bh - h) / 2, (bw - w) / 2);
    Ok(big.slice(ndarray::s![r0..r0 + h, c0..c0 + w]).to_owned())
}

/// Propagate with the grid zero-padded by `factor` in each dimension, then
/// crop back. Padding suppresses the periodic wrap-around implicit in the
/// FFT, at the cost of re-planning; intended for reference comparisons, not
/// the training loop.
pub fn propagate_padded(
    field: &Field,
    pitch: f64,
    wavelength: f64,
    distance: f64,
    factor: usize,
) -> Result<Field> {
    if factor < 1 {
        return Err(Error::InvalidParam("padding factor must be >= 1".into()));
    }
    let (h, w) = field.dim();
    let grid = Grid::new(h * factor, w * factor, pitch, wavelength)?;
    let prop = Propagator::new(grid, distance)?;
    let big = embed_centered(field, grid.h, grid.w)?;
    crop_centered(&prop.propagate(&big)?, h, w)
}

/// Direct quadrature of the first Rayleigh–Sommerfeld diffraction integral.
///
/// For each output sample the contributions of every input sample are summed
/// with the exact spherical-wave kernel
/// `(z / r^2) * (1 / (2 pi r) - j / lambda) * exp(j 2 pi r / lambda) * pitch^2`
/// where `r` is the 3-D distance between the samples. O(n^4): reference only.
pub fn rayleigh_sommerfeld_direct(
    field: &Field,
    pitch: f64,
    wavelength: f64,
    distance: f64,
) -> Field {
    let (h, w) = field.dim();
    let two_pi = 2.0 * std::f64::consts::PI;
    let area = pitch * pitch;
    let mut out = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    for oi in 0..h {
        for oj in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for ii in 0..h {
                let dy = (oi as f64 - ii as f64) * pitch;
                for ij in 0..w {
                    let dx = (oj as f64 - ij as f64) * pitch;
                    let r_sq = dx * dx + dy * dy + distance * distance;
                    let r = r_sq.sqrt();
                    let obliquity = distance / r_sq;
                    let kernel = Complex64::new(1.0 / (two_pi * r), -1.0 / wavelength);
                    let phase = Complex64::from_polar(1.0, two_pi * r / wavelength);
                    acc += field[(ii, ij)] * obliquity * kernel * phase * area;
                }
            }
            out[(oi, oj)] = acc;
        }
    }
    out
}

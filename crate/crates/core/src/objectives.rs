//! Task losses, the temperature regularizer, and evaluation metrics.
//!
//! Classification reads the detector through ten rectangular patches in a
//! fixed 3-4-3 layout ([`patch_layout`]); the loss is a weighted mean squared
//! error against a binary label map and the prediction is the patch with the
//! highest mean intensity. Phase imaging compares the detected intensity
//! against the normalized input phase with a reverse Huber loss and is scored
//! by SSIM. Training with learned temperatures adds [`lt_regularizer`], a
//! staged penalty that pushes the temperature parameters toward a target
//! norm, doubling in strength at fixed epoch intervals.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One detector read-out patch: a `side x side` square with its top-left
/// corner at `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

/// The fixed ten-patch detector layout: rows of 3, 4, and 3 equal square
/// patches, centered, with a one-patch-side gap between rows. Class indices
/// run row-major through the layout.
pub fn patch_layout(h: usize, w: usize) -> Result<Vec<Patch>> {
    let side = h.min(w) / 6;
    if side == 0 {
        return Err(Error::InvalidParam(format!(
            "detector {h}x{w} too small for the ten-patch layout (needs min dim >= 6)"
        )));
    }
    let top = (h - 5 * side) / 2;
    let mut patches = Vec::with_capacity(10);
    for (r, count) in [(0usize, 3usize), (1, 4), (2, 3)] {
        let row = top + 2 * r * side;
        for i in 0..count {
            let col = w * (2 * i + 1) / (2 * count) - side / 2;
            patches.push(Patch { row, col, side });
        }
    }
    Ok(patches)
}

/// Binary detector target for one class: ones on that class's patch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub grid: Array2<f64>,
    pub class_index: usize,
}

/// Build the binary label map for `class_index` on an `h x w` detector.
pub fn build_label_map(class_index: usize, h: usize, w: usize) -> Result<LabelMap> {
    if class_index > 9 {
        return Err(Error::InvalidParam(format!(
            "class index must be 0..=9, got {class_index}"
        )));
    }
    let layout = patch_layout(h, w)?;
    let p = layout[class_index];
    let mut grid = Array2::zeros((h, w));
    grid.slice_mut(ndarray::s![p.row..p.row + p.side, p.col..p.col + p.side])
        .fill(1.0);
    Ok(LabelMap { grid, class_index })
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "grids are {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Weighted mean squared error against a binary label map:
/// `(1/n) * sum (Y - I)^2 * (1 - Y/11)`. Pixels inside the target patch are
/// down-weighted to 10/11 of the background weight.
pub fn classification_loss(label: &LabelMap, intensity: &Array2<f64>) -> Result<f64> {
    check_same_shape(&label.grid, intensity)?;
    let n = intensity.len() as f64;
    let mut acc = 0.0;
    for (&y, &i) in label.grid.iter().zip(intensity.iter()) {
        let e = y - i;
        acc += e * e * (1.0 - y / 11.0);
    }
    Ok(acc / n)
}

/// Gradient of [`classification_loss`] with respect to the intensity:
/// `(2/n) * (I - Y) * (1 - Y/11)`.
pub fn classification_loss_grad(label: &LabelMap, intensity: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(&label.grid, intensity)?;
    let n = intensity.len() as f64;
    let mut out = Array2::zeros(intensity.dim());
    for ((&y, &i), g) in label.grid.iter().zip(intensity.iter()).zip(out.iter_mut()) {
        *g = 2.0 / n * (i - y) * (1.0 - y / 11.0);
    }
    Ok(out)
}

/// Predicted class: the patch with the highest mean intensity, ties broken
/// toward the lowest class index.
pub fn classify(intensity: &Array2<f64>, layout: &[Patch]) -> usize {
    let mut best = 0usize;
    let mut best_mean = f64::NEG_INFINITY;
    for (c, p) in layout.iter().enumerate() {
        let window = intensity.slice(ndarray::s![p.row..p.row + p.side, p.col..p.col + p.side]);
        let mean = window.sum() / (p.side * p.side) as f64;
        if mean > best_mean {
            best_mean = mean;
            best = c;
        }
    }
    best
}

/// Reverse Huber loss, mean over pixels. The error `e = pred - target` is
/// charged `|e|` up to the threshold `c = c_frac * max|e|` and
/// `(e^2 + c^2) / (2c)` beyond it — linear near zero, quadratic in the tail,
/// continuous at the joint. An all-zero error grid returns 0.
pub fn reverse_huber(pred: &Array2<f64>, target: &Array2<f64>, c_frac: f64) -> Result<f64> {
    check_same_shape(pred, target)?;
    if !(0.0 < c_frac && c_frac < 1.0) {
        return Err(Error::InvalidParam(format!(
            "reverse Huber threshold fraction must be in (0,1), got {c_frac}"
        )));
    }
    let max_abs = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t).abs())
        .fold(0.0f64, f64::max);
    let c = c_frac * max_abs;
    if c == 0.0 {
        return Ok(0.0);
    }
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target.iter()) {
        let e = (p - t).abs();
        acc += if e <= c {
            e
        } else {
            (e * e + c * c) / (2.0 * c)
        };
    }
    Ok(acc / n)
}

/// Gradient of [`reverse_huber`] with respect to `pred`, treating the
/// threshold `c` as a constant of the call: `sign(e)/n` inside the linear
/// region, `e/(c n)` beyond it.
pub fn reverse_huber_grad(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    c_frac: f64,
) -> Result<Array2<f64>> {
    check_same_shape(pred, target)?;
    if !(0.0 < c_frac && c_frac < 1.0) {
        return Err(Error::InvalidParam(format!(
            "reverse Huber threshold fraction must be in (0,1), got {c_frac}"
        )));
    }
    let max_abs = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t).abs())
        .fold(0.0f64, f64::max);
    let c = c_frac * max_abs;
    let n = pred.len() as f64;
    let mut out = Array2::zeros(pred.dim());
    if c == 0.0 {
        return Ok(out);
    }
    for ((p, t), g) in pred.iter().zip(target.iter()).zip(out.iter_mut()) {
        let e = p - t;
        *g = if e.abs() <= c {
            e.signum() / n
        } else {
            e / (c * n)
        };
    }
    Ok(out)
}

/// Phase-imaging target: the input phase normalized to [0, 1] by dividing
/// by pi. Expects phases in [0, pi].
pub fn qpi_target(input_phase: &Array2<f64>) -> Array2<f64> {
    debug_assert!(
        input_phase
            .iter()
            .all(|&p| (0.0..=std::f64::consts::PI + 1e-12).contains(&p)),
        "phase-imaging targets expect phases in [0, pi]"
    );
    input_phase.mapv(|p| p / std::f64::consts::PI)
}

/// Strength multiplier of the temperature regularizer at `epoch`:
/// `2^floor(epoch / beta)`, doubling every `beta` epochs.
pub fn lt_stage_multiplier(epoch: usize, beta: usize) -> f64 {
    2.0f64.powi((epoch / beta) as i32)
}

/// Staged temperature-parameter regularizer
/// `lambda1 * s_t * (||k||^2 - lambda2^2)` with `s_t` from
/// [`lt_stage_multiplier`]. Driving `||k||` below `lambda2` makes the term
/// negative; the doubling schedule raises the pressure over time.
pub fn lt_regularizer(
    ks: &[f64],
    epoch: usize,
    beta: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    if beta == 0 {
        return Err(Error::InvalidParam(
            "regularizer stage length beta must be >= 1".into(),
        ));
    }
    let norm_sq: f64 = ks.iter().map(|k| k * k).sum();
    Ok(lambda1 * lt_stage_multiplier(epoch, beta) * (norm_sq - lambda2 * lambda2))
}

/// Gradient of [`lt_regularizer`] with respect to each `k`:
/// `2 * lambda1 * s_t * k` — linear in `k`.
pub fn lt_regularizer_grad(
    ks: &[f64],
    epoch: usize,
    beta: usize,
    lambda1: f64,
) -> Result<Vec<f64>> {
    if beta == 0 {
        return Err(Error::InvalidParam(
            "regularizer stage length beta must be >= 1".into(),
        ));
    }
    let s = lt_stage_multiplier(epoch, beta);
    Ok(ks.iter().map(|k| 2.0 * lambda1 * s * k).collect())
}

/// Task and regularizer components of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub task_loss: f64,
    pub regularizer: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.task_loss + self.regularizer
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn ssim_window_weights() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let di = i as f64 - c;
            let dj = j as f64 - c;
            *v = (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            sum += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    w
}

/// Mean structural similarity over all fully valid 11x11 windows, with the
/// standard Gaussian weighting (sigma 1.5) and stabilizers
/// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` for dynamic range `L`.
///
/// `ssim(a, a)` is exactly 1 and the function is symmetric in its arguments.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, dynamic_range: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    if !dynamic_range.is_finite() || dynamic_range <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "SSIM dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParam(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let weights = ssim_window_weights();
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - SSIM_WINDOW {
        for c0 in 0..=w - SSIM_WINDOW {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for (i, row) in weights.iter().enumerate() {
                for (j, &wt) in row.iter().enumerate() {
                    mu_a += wt * a[(r0 + i, c0 + j)];
                    mu_b += wt * b[(r0 + i, c0 + j)];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for (i, row) in weights.iter().enumerate() {
                for (j, &wt) in row.iter().enumerate() {
                    let da = a[(r0 + i, c0 + j)] - mu_a;
                    let db = b[(r0 + i, c0 + j)] - mu_b;
                    var_a += wt * da * da;
                    var_b += wt * db * db;
                    cov += wt * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            sum += num / den;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean absolute phase error, bucketed by the ground-truth phase.
///
/// The range [0, pi] is split into `bins` equal buckets; each bucket reports
/// the mean of `|pi * I - phi|` over the pixels whose ground-truth phase
/// `phi` falls inside it. Buckets that receive no pixels are omitted.
/// Returns `(bin_center, mean_error)` pairs in ascending bin order.
pub fn phase_error_curve(
    pred_intensity: &Array2<f64>,
    gt_phase: &Array2<f64>,
    bins: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut sums = vec![0.0; bins.max(1)];
    let mut counts = vec![0usize; bins.max(1)];
    phase_error_bins(pred_intensity, gt_phase, bins, &mut sums, &mut counts)?;
    Ok(bins_to_curve(&sums, &counts))
}

/// Accumulate per-bin absolute-error sums and pixel counts into existing
/// buffers, so curves can be aggregated over many samples before averaging.
pub fn phase_error_bins(
    pred_intensity: &Array2<f64>,
    gt_phase: &Array2<f64>,
    bins: usize,
    sums: &mut [f64],
    counts: &mut [usize],
) -> Result<()> {
    check_same_shape(pred_intensity, gt_phase)?;
    if bins == 0 {
        return Err(Error::InvalidParam(
            "phase error curve needs at least one bin".into(),
        ));
    }
    if sums.len() != bins || counts.len() != bins {
        return Err(Error::ShapeMismatch(format!(
            "accumulators hold {}/{} bins, expected {bins}",
            sums.len(),
            counts.len()
        )));
    }
    let pi = std::f64::consts::PI;
    let width = pi / bins as f64;
    for (&i, &phi) in pred_intensity.iter().zip(gt_phase.iter()) {
        let idx = ((phi / width) as usize).min(bins - 1);
        sums[idx] += (pi * i - phi).abs();
        counts[idx] += 1;
    }
    Ok(())
}

/// Collapse accumulated bins into `(bin center, mean abs error)` points,
/// omitting empty bins.
pub fn bins_to_curve(sums: &[f64], counts: &[usize]) -> Vec<(f64, f64)> {
    let width = std::f64::consts::PI / sums.len() as f64;
    (0..sums.len())
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * width, sums[b] / counts[b] as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn layout_on_32_grid_is_frozen() {
        // Golden layout: fixed forever so label maps and checkpoints stay
        // comparable across versions.
        let expect = [
            (3, 3),
            (3, 14),
            (3, 24),
            (13, 2),
            (13, 10),
            (13, 18),
            (13, 26),
            (23, 3),
            (23, 14),
            (23, 24),
        ];
        let layout = patch_layout(32, 32).unwrap();
        assert_eq!(layout.len(), 10);
        for (p, &(r, c)) in layout.iter().zip(expect.iter()) {
            assert_eq!((p.row, p.col, p.side), (r, c, 5));
        }
    }

    #[test]
    fn layout_patches_are_disjoint_and_in_bounds() {
        for &(h, w) in &[(32usize, 32usize), (64, 64), (28, 28), (6, 6), (40, 28)] {
            let layout = patch_layout(h, w).unwrap();
            let mut covered = Array2::<f64>::zeros((h, w));
            for p in &layout {
                assert!(
                    p.row + p.side <= h && p.col + p.side <= w,
                    "{p:?} out of {h}x{w}"
                );
                for i in p.row..p.row + p.side {
                    for j in p.col..p.col + p.side {
                        covered[(i, j)] += 1.0;
                    }
                }
            }
            assert!(
                covered.iter().all(|&v| v <= 1.0),
                "overlapping patches on {h}x{w}"
            );
        }
        assert!(patch_layout(5, 32).is_err());
    }

    #[test]
    fn label_map_marks_exactly_one_patch() {
        for class in 0..10 {
            let lm = build_label_map(class, 32, 32).unwrap();
            let layout = patch_layout(32, 32).unwrap();
            let p = layout[class];
            assert_eq!(lm.grid.sum(), (p.side * p.side) as f64);
            assert_eq!(lm.grid[(p.row, p.col)], 1.0);
            assert!(lm.grid.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        // Different classes have disjoint supports.
        let a = build_label_map(2, 32, 32).unwrap();
        let b = build_label_map(3, 32, 32).unwrap();
        assert!(a
            .grid
            .iter()
            .zip(b.grid.iter())
            .all(|(&x, &y)| x * y == 0.0));
        assert!(build_label_map(10, 32, 32).is_err());
    }

    #[test]
    fn classification_loss_exact_values() {
        let lm = build_label_map(0, 32, 32).unwrap();
        assert_eq!(classification_loss(&lm, &lm.grid).unwrap(), 0.0);
        let n = 1024.0;
        // One target pixel missed entirely: squared error 1, weight 10/11.
        let mut i = lm.grid.clone();
        i[(3, 3)] = 0.0;
        let loss = classification_loss(&lm, &i).unwrap();
        assert!((loss - (10.0 / 11.0) / n).abs() < 1e-15);
        // One background pixel lit: squared error 1, weight 1.
        let mut i = lm.grid.clone();
        i[(0, 0)] = 1.0;
        let loss = classification_loss(&lm, &i).unwrap();
        assert!((loss - 1.0 / n).abs() < 1e-15);
        let wrong = Array2::zeros((16, 16));
        assert!(classification_loss(&lm, &wrong).is_err());
    }

    #[test]
    fn classification_loss_grad_matches_finite_difference() {
        let lm = build_label_map(4, 32, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let intensity = Array2::from_shape_fn((32, 32), |_| rng.gen::<f64>());
        let grad = classification_loss_grad(&lm, &intensity).unwrap();
        let h = 1e-6;
        for &(i, j) in &[(0usize, 0usize), (3, 3), (13, 10), (31, 31), (16, 5)] {
            let mut p = intensity.clone();
            p[(i, j)] += h;
            let mut m = intensity.clone();
            m[(i, j)] -= h;
            let fd = (classification_loss(&lm, &p).unwrap()
                - classification_loss(&lm, &m).unwrap())
                / (2.0 * h);
            assert!((fd - grad[(i, j)]).abs() <= 1e-6 * grad[(i, j)].abs() + 1e-9);
        }
    }

    #[test]
    fn classify_reads_patch_means() {
        let layout = patch_layout(32, 32).unwrap();
        let lm = build_label_map(7, 32, 32).unwrap();
        assert_eq!(classify(&lm.grid, &layout), 7);
        // Uniform intensity ties every patch; lowest class index wins.
        let uniform = Array2::from_elem((32, 32), 0.3);
        assert_eq!(classify(&uniform, &layout), 0);
        // Constant offsets never change the winner.
        let shifted = lm.grid.mapv(|v| v + 5.0);
        assert_eq!(classify(&shifted, &layout), 7);
    }

    #[test]
    fn reverse_huber_branches_and_continuity() {
        let zero = Array2::zeros((4, 4));
        assert_eq!(reverse_huber(&zero, &zero, 0.2).unwrap(), 0.0);
        // Errors 0.1 (= c/2: linear), 0.2 (= c: joint), 0.4 (= 2c), max 1.0.
        let mut pred = Array2::zeros((2, 2));
        pred[(0, 0)] = 1.0;
        pred[(0, 1)] = 0.1;
        pred[(1, 0)] = 0.2;
        pred[(1, 1)] = 0.4;
        let target = Array2::zeros((2, 2));
        let c: f64 = 0.2;
        // Branch values: max pixel (1+c^2)/(2c); 0.1 linear; 0.2 at the joint
        // from the linear branch; 2c -> 2.5c from the quadratic branch.
        let expect = ((1.0 + c * c) / (2.0 * c) + 0.1 + 0.2 + 2.5 * c) / 4.0;
        assert!((reverse_huber(&pred, &target, 0.2).unwrap() - expect).abs() < 1e-15);
        // Continuity at the joint: both branch formulas give c.
        assert!(((c * c + c * c) / (2.0 * c) - c).abs() < 1e-15);
        assert!(reverse_huber(&pred, &target, 0.0).is_err());
        assert!(reverse_huber(&pred, &target, 1.0).is_err());
    }

    #[test]
    fn reverse_huber_grad_matches_finite_difference_off_the_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = Array2::from_shape_fn((6, 6), |_| rng.gen::<f64>());
        let mut target = Array2::from_shape_fn((6, 6), |_| rng.gen::<f64>());
        // Pin a clear maximum so small probes elsewhere keep c constant.
        target[(0, 0)] = pred[(0, 0)] + 3.0;
        let grad = reverse_huber_grad(&pred, &target, 0.2).unwrap();
        let h = 1e-7;
        for &(i, j) in &[(1usize, 1usize), (2, 5), (4, 0), (5, 5)] {
            let mut p = pred.clone();
            p[(i, j)] += h;
            let mut m = pred.clone();
            m[(i, j)] -= h;
            let fd = (reverse_huber(&p, &target, 0.2).unwrap()
                - reverse_huber(&m, &target, 0.2).unwrap())
                / (2.0 * h);
            assert!(
                (fd - grad[(i, j)]).abs() <= 1e-6 * grad[(i, j)].abs().max(1e-6),
                "({i},{j}): fd={fd} analytic={}",
                grad[(i, j)]
            );
        }
    }

    #[test]
    fn qpi_target_normalizes_phase() {
        let mut phase = Array2::zeros((2, 2));
        phase[(0, 1)] = PI;
        phase[(1, 0)] = PI / 2.0;
        let t = qpi_target(&phase);
        assert_eq!(t[(0, 0)], 0.0);
        assert_eq!(t[(0, 1)], 1.0);
        assert_eq!(t[(1, 0)], 0.5);
    }

    #[test]
    fn lt_regularizer_staging_and_values() {
        assert_eq!(lt_stage_multiplier(0, 5), 1.0);
        assert_eq!(lt_stage_multiplier(4, 5), 1.0);
        assert_eq!(lt_stage_multiplier(5, 5), 2.0);
        assert_eq!(lt_stage_multiplier(15, 5), 8.0);
        let r = lt_regularizer(&[0.0, 0.0], 3, 5, 1e-4, 0.1).unwrap();
        assert!((r - (-1e-4 * 0.01)).abs() < 1e-18);
        assert!(lt_regularizer(&[0.1], 0, 0, 1e-4, 0.1).is_err());
    }

    #[test]
    fn lt_regularizer_grad_matches_finite_difference() {
        let ks = [0.3, -0.7, 0.05];
        let grads = lt_regularizer_grad(&ks, 7, 5, 1e-4).unwrap();
        let h = 1e-6;
        for m in 0..3 {
            let mut kp = ks;
            kp[m] += h;
            let mut km = ks;
            km[m] -= h;
            let fd = (lt_regularizer(&kp, 7, 5, 1e-4, 0.1).unwrap()
                - lt_regularizer(&km, 7, 5, 1e-4, 0.1).unwrap())
                / (2.0 * h);
            assert!((fd - grads[m]).abs() <= 1e-8 * grads[m].abs().max(1e-9));
        }
        // Linear in k: doubling k doubles the gradient.
        let doubled = lt_regularizer_grad(&[0.6, -1.4, 0.1], 7, 5, 1e-4).unwrap();
        for m in 0..3 {
            assert!((doubled[m] - 2.0 * grads[m]).abs() < 1e-15);
        }
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let a = Array2::from_shape_fn((32, 32), |(i, j)| ((7 * i + 3 * j) % 32) as f64 / 31.0);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_matches_independent_reference_value() {
        // Frozen from a scripted reference implementation of the standard
        // Gaussian-weighted SSIM run before this module was written.
        let a = Array2::from_shape_fn((32, 32), |(i, j)| ((7 * i + 3 * j) % 32) as f64 / 31.0);
        let b = Array2::from_shape_fn((32, 32), |(i, j)| ((5 * i + 11 * j) % 32) as f64 / 31.0);
        let v = ssim(&a, &b, 1.0).unwrap();
        assert!(
            (v - (-0.006_360_766_076_508_324)).abs() < 1e-12,
            "ssim drifted from the frozen reference: {v}"
        );
    }

    #[test]
    fn ssim_is_symmetric_and_penalizes_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((16, 20), |_| rng.gen::<f64>());
        let b = Array2::from_shape_fn((16, 20), |_| rng.gen::<f64>());
        assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
        let v = ssim(&a, &b, 1.0).unwrap();
        assert!((-1.0..=1.0).contains(&v));
        let shifted = a.mapv(|v| v + 0.5);
        assert!(ssim(&a, &shifted, 1.0).unwrap() < 1.0);
        assert!(ssim(&a, &Array2::zeros((10, 20)), 1.0).is_err());
        let tiny = Array2::zeros((8, 8));
        assert!(ssim(&tiny, &tiny, 1.0).is_err());
        assert!(ssim(&a, &b, 0.0).is_err());
    }

    #[test]
    fn phase_error_curve_bins_and_omits_empty() {
        // Perfect prediction: every occupied bin reports zero.
        let phase = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64 / 15.0 * PI);
        let perfect = phase.mapv(|p| p / PI);
        let curve = phase_error_curve(&perfect, &phase, 8).unwrap();
        assert!(!curve.is_empty());
        assert!(curve.iter().all(|&(_, e)| e < 1e-14));
        // Zero prediction: each bin reports the mean ground-truth phase.
        let zeros = Array2::zeros((4, 4));
        let curve = phase_error_curve(&zeros, &phase, 4).unwrap();
        for &(center, err) in &curve {
            assert!((err - center).abs() <= PI / 8.0 + 1e-12);
        }
        // Hand-built case: two bins, phases {0.2, 0.3} and {2.0, 3.0} rad,
        // predictions 0 -> errors are the phases themselves.
        let phase = ndarray::arr2(&[[0.2, 0.3], [2.0, 3.0]]);
        let pred = Array2::zeros((2, 2));
        let curve = phase_error_curve(&pred, &phase, 2).unwrap();
        assert_eq!(curve.len(), 2);
        assert!((curve[0].0 - PI / 4.0).abs() < 1e-15);
        assert!((curve[0].1 - 0.25).abs() < 1e-15);
        assert!((curve[1].1 - 2.5).abs() < 1e-15);
        // Empty bins are absent: all phases in the first of 100 bins.
        let low = Array2::from_elem((3, 3), 0.001);
        let curve = phase_error_curve(
            &pred.clone(),
            &ndarray::arr2(&[[0.001, 0.001], [0.001, 0.001]]),
            100,
        )
        .unwrap();
        assert_eq!(curve.len(), 1);
        let _ = low;
        assert!(phase_error_curve(&pred, &phase, 0).is_err());
    }

    #[test]
    fn loss_breakdown_totals() {
        let b = LossBreakdown {
            task_loss: 0.25,
            regularizer: -0.05,
        };
        assert_eq!(b.total(), 0.2);
    }
}

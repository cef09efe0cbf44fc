//! Stacked phase-modulation layers with free-space propagation between them.
//!
//! An input image is phase-encoded onto the field of view, embedded in the
//! (possibly larger) layer grid, and propagated to the first layer. Each layer
//! multiplies the field by `exp(j * theta)` where `theta` is its quantizer's
//! view of the trainable phase map, and the field then propagates to the next
//! plane. After the final propagation the detected quantity is the intensity
//! `|E|^2` on the field of view.
//!
//! [`DiffractiveNetwork::forward_train`] records a tape — the field entering
//! each layer and the exact soft phases applied — so that
//! [`DiffractiveNetwork::backward`] can run the adjoint pass without ever
//! re-running a forward propagation: gradients flow through conjugate-
//! transposed propagators, and the phase/temperature/logit gradients fall out
//! of pointwise complex arithmetic against the taped fields.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::optics::{crop_centered, embed_centered, Field, Grid, Propagator};
use crate::quantizers::{
    dsq_eval, dsq_grad_input, gs_eval, gs_forward_train, gs_init_logits, hard_quantize, psq_eval,
    psq_grad_input, psq_grad_temperature, sample_gumbel, QuantizerSpec, TemperatureParam,
};

/// Physical and sampling layout of the whole stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Layer grid rows.
    pub layer_h: usize,
    /// Layer grid columns.
    pub layer_w: usize,
    /// Field-of-view rows (input encoding and output detection window).
    pub fov_h: usize,
    /// Field-of-view columns.
    pub fov_w: usize,
    pub num_layers: usize,
    /// Sample spacing, same for every plane.
    pub pitch: f64,
    pub wavelength: f64,
    /// Distance from the input plane to the first layer.
    pub z_in: f64,
    /// Distance between consecutive layers.
    pub z_between: f64,
    /// Distance from the last layer to the detector plane.
    pub z_out: f64,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        Grid::new(self.layer_h, self.layer_w, self.pitch, self.wavelength)?;
        if self.fov_h == 0 || self.fov_w == 0 {
            return Err(Error::InvalidParam(
                "field of view must be non-empty".into(),
            ));
        }
        if self.fov_h > self.layer_h || self.fov_w > self.layer_w {
            return Err(Error::InvalidParam(format!(
                "field of view {}x{} exceeds layer grid {}x{}",
                self.fov_h, self.fov_w, self.layer_h, self.layer_w
            )));
        }
        if self.num_layers == 0 {
            return Err(Error::InvalidParam(
                "network needs at least one layer".into(),
            ));
        }
        for (name, z) in [
            ("z_in", self.z_in),
            ("z_between", self.z_between),
            ("z_out", self.z_out),
        ] {
            if !z.is_finite() || z < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "{name} must be a non-negative distance, got {z}"
                )));
            }
        }
        Ok(())
    }

    pub fn layer_grid(&self) -> Grid {
        Grid {
            h: self.layer_h,
            w: self.layer_w,
            pitch: self.pitch,
            wavelength: self.wavelength,
        }
    }
}

/// A layer's quantization temperature: either externally scheduled or a
/// trainable reparameterized scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum Temperature {
    Fixed(f64),
    Learned(TemperatureParam),
}

impl Temperature {
    pub fn value(&self) -> f64 {
        match self {
            Temperature::Fixed(t) => *t,
            Temperature::Learned(p) => p.temperature(),
        }
    }
}

/// Per-layer quantizer state. The phase map itself lives in the network; this
/// enum carries everything else the quantizer needs.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerQuantizer {
    /// Phases used raw, in training and evaluation alike.
    FullPrecision,
    /// Hard staircase in both passes; zero gradient to the phases.
    Hard(QuantizerSpec),
    /// Hard staircase forward, identity (straight-through) backward.
    Ste(QuantizerSpec),
    /// Smooth sigmoid staircase with a fixed or learned temperature.
    Psq {
        spec: QuantizerSpec,
        temperature: Temperature,
    },
    /// Clamped per-cell tanh staircase with a scheduled temperature.
    Dsq {
        spec: QuantizerSpec,
        temperature: Temperature,
    },
    /// Categorical relaxation with per-pixel, per-level logits.
    Gumbel {
        spec: QuantizerSpec,
        logits: Array3<f64>,
        temperature: f64,
    },
}

impl LayerQuantizer {
    /// Gumbel-softmax state initialized from an existing phase map, so the
    /// nearest level starts most probable at every pixel.
    pub fn gumbel_from_phases(spec: QuantizerSpec, phases: &Array2<f64>, temperature: f64) -> Self {
        let (h, w) = phases.dim();
        let n = spec.levels as usize;
        let mut logits = Array3::zeros((h, w, n));
        let mut buf = vec![0.0; n];
        for i in 0..h {
            for j in 0..w {
                gs_init_logits(phases[(i, j)], &spec, &mut buf);
                for (l, &v) in buf.iter().enumerate() {
                    logits[(i, j, l)] = v;
                }
            }
        }
        LayerQuantizer::Gumbel {
            spec,
            logits,
            temperature,
        }
    }

    /// The quantization grid, if this layer quantizes at all.
    pub fn spec(&self) -> Option<&QuantizerSpec> {
        match self {
            LayerQuantizer::FullPrecision => None,
            LayerQuantizer::Hard(s) | LayerQuantizer::Ste(s) => Some(s),
            LayerQuantizer::Psq { spec, .. }
            | LayerQuantizer::Dsq { spec, .. }
            | LayerQuantizer::Gumbel { spec, .. } => Some(spec),
        }
    }

    /// Current temperature, for quantizers that have one.
    pub fn temperature(&self) -> Option<f64> {
        match self {
            LayerQuantizer::Psq { temperature, .. } | LayerQuantizer::Dsq { temperature, .. } => {
                Some(temperature.value())
            }
            LayerQuantizer::Gumbel { temperature, .. } => Some(*temperature),
            _ => None,
        }
    }
}

/// Record of one training-mode forward pass, consumed by
/// [`DiffractiveNetwork::backward`].
#[derive(Debug, Clone)]
pub struct TrainForward {
    /// Field arriving at each layer, before that layer's modulation.
    pub layer_inputs: Vec<Field>,
    /// The phase profile each layer actually applied.
    pub soft_phases: Vec<Array2<f64>>,
    /// Per-layer softmax probabilities, present for Gumbel layers.
    pub gs_probs: Vec<Option<Array3<f64>>>,
    /// Field at the detector plane, full layer grid.
    pub output_field: Field,
    /// Detected intensity on the field of view.
    pub intensity: Array2<f64>,
}

/// Gradients of a scalar loss with respect to every trainable quantity.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// d loss / d phase, per layer. Zero for Hard and Gumbel layers.
    pub phases: Vec<Array2<f64>>,
    /// d loss / d temperature parameter `k`, per layer; nonzero only for
    /// layers with a learned temperature.
    pub temperature_k: Vec<f64>,
    /// d loss / d logits for Gumbel layers.
    pub logits: Vec<Option<Array3<f64>>>,
}

/// A stack of phase layers separated by free-space propagation.
pub struct DiffractiveNetwork {
    geometry: Geometry,
    phases: Vec<Array2<f64>>,
    quantizers: Vec<LayerQuantizer>,
    prop_in: Propagator,
    prop_between: Propagator,
    prop_out: Propagator,
}

impl DiffractiveNetwork {
    pub fn new(
        geometry: Geometry,
        phases: Vec<Array2<f64>>,
        quantizers: Vec<LayerQuantizer>,
    ) -> Result<Self> {
        geometry.validate()?;
        if phases.len() != geometry.num_layers || quantizers.len() != geometry.num_layers {
            return Err(Error::ShapeMismatch(format!(
                "expected {} phase maps and quantizers, got {} and {}",
                geometry.num_layers,
                phases.len(),
                quantizers.len()
            )));
        }
        let shape = (geometry.layer_h, geometry.layer_w);
        for (i, p) in phases.iter().enumerate() {
            if p.dim() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "phase map {i} is {:?}, expected {shape:?}",
                    p.dim()
                )));
            }
        }
        for (i, q) in quantizers.iter().enumerate() {
            if let LayerQuantizer::Gumbel { spec, logits, .. } = q {
                let want = (shape.0, shape.1, spec.levels as usize);
                if logits.dim() != want {
                    return Err(Error::ShapeMismatch(format!(
                        "logits of layer {i} are {:?}, expected {want:?}",
                        logits.dim()
                    )));
                }
            }
        }
        let grid = geometry.layer_grid();
        Ok(Self {
            prop_in: Propagator::new(grid, geometry.z_in)?,
            prop_between: Propagator::new(grid, geometry.z_between)?,
            prop_out: Propagator::new(grid, geometry.z_out)?,
            geometry,
            phases,
            quantizers,
        })
    }

    /// Same quantizer state cloned for every layer.
    pub fn with_uniform_quantizer(
        geometry: Geometry,
        phases: Vec<Array2<f64>>,
        quantizer: LayerQuantizer,
    ) -> Result<Self> {
        let qs = vec![quantizer; geometry.num_layers];
        Self::new(geometry, phases, qs)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn phases(&self) -> &[Array2<f64>] {
        &self.phases
    }

    pub fn phases_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.phases
    }

    pub fn quantizers(&self) -> &[LayerQuantizer] {
        &self.quantizers
    }

    pub fn quantizers_mut(&mut self) -> &mut [LayerQuantizer] {
        &mut self.quantizers
    }

    /// Current temperature of every layer (`None` for layers without one).
    pub fn temperatures(&self) -> Vec<Option<f64>> {
        self.quantizers.iter().map(|q| q.temperature()).collect()
    }

    /// Learned temperature parameter of each layer, where present.
    pub fn learned_ks(&self) -> Vec<Option<f64>> {
        self.quantizers
            .iter()
            .map(|q| match q {
                LayerQuantizer::Psq {
                    temperature: Temperature::Learned(p),
                    ..
                }
                | LayerQuantizer::Dsq {
                    temperature: Temperature::Learned(p),
                    ..
                } => Some(p.k),
                _ => None,
            })
            .collect()
    }

    /// Mutable access to a layer's learned temperature parameter, if any.
    pub fn learned_temperature_mut(&mut self, layer: usize) -> Option<&mut TemperatureParam> {
        match &mut self.quantizers[layer] {
            LayerQuantizer::Psq {
                temperature: Temperature::Learned(p),
                ..
            }
            | LayerQuantizer::Dsq {
                temperature: Temperature::Learned(p),
                ..
            } => Some(p),
            _ => None,
        }
    }

    /// Set the scheduled temperature on every layer that has a fixed one.
    pub fn set_fixed_temperatures(&mut self, tau: f64) {
        for q in &mut self.quantizers {
            match q {
                LayerQuantizer::Psq {
                    temperature: t @ Temperature::Fixed(_),
                    ..
                }
                | LayerQuantizer::Dsq {
                    temperature: t @ Temperature::Fixed(_),
                    ..
                } => *t = Temperature::Fixed(tau),
                _ => {}
            }
        }
    }

    /// Set the softmax temperature on every Gumbel layer.
    pub fn set_gumbel_temperature(&mut self, temp: f64) {
        for q in &mut self.quantizers {
            if let LayerQuantizer::Gumbel { temperature, .. } = q {
                *temperature = temp;
            }
        }
    }

    /// Mutable access to a Gumbel layer's logits, if the layer is one.
    pub fn gs_logits_mut(&mut self, layer: usize) -> Option<&mut Array3<f64>> {
        match &mut self.quantizers[layer] {
            LayerQuantizer::Gumbel { logits, .. } => Some(logits),
            _ => None,
        }
    }

    /// Phase-encode an image onto the field of view: `exp(j * pi * value)`,
    /// embedded centered in the layer grid.
    pub fn encode_input(&self, image: &Array2<f64>) -> Result<Field> {
        if image.dim() != (self.geometry.fov_h, self.geometry.fov_w) {
            return Err(Error::ShapeMismatch(format!(
                "image is {:?}, field of view is {}x{}",
                image.dim(),
                self.geometry.fov_h,
                self.geometry.fov_w
            )));
        }
        let enc = image.mapv(|v| Complex64::from_polar(1.0, std::f64::consts::PI * v));
        embed_centered(&enc, self.geometry.layer_h, self.geometry.layer_w)
    }

    /// The phases a layer presents during evaluation: raw for full precision,
    /// hard-quantized for staircase quantizers, the argmax level for Gumbel.
    pub fn effective_eval_phase(&self, layer: usize) -> Array2<f64> {
        match &self.quantizers[layer] {
            LayerQuantizer::FullPrecision => self.phases[layer].clone(),
            LayerQuantizer::Hard(spec) | LayerQuantizer::Ste(spec) => {
                self.phases[layer].mapv(|p| hard_quantize(p, spec))
            }
            LayerQuantizer::Psq { spec, .. } | LayerQuantizer::Dsq { spec, .. } => {
                self.phases[layer].mapv(|p| hard_quantize(p, spec))
            }
            LayerQuantizer::Gumbel { spec, logits, .. } => {
                let (h, w) = self.phases[layer].dim();
                Array2::from_shape_fn((h, w), |(i, j)| {
                    let row = logits.slice(ndarray::s![i, j, ..]);
                    gs_eval(row.as_slice().expect("logits are contiguous"), spec)
                })
            }
        }
    }

    /// The phases a layer applies during a training-mode forward pass. For a
    /// Gumbel layer this draws noise from `rng` (row-major pixel order, one
    /// draw per level) and also returns the softmax probabilities.
    fn soft_phase<R: Rng>(&self, layer: usize, rng: &mut R) -> (Array2<f64>, Option<Array3<f64>>) {
        let phases = &self.phases[layer];
        match &self.quantizers[layer] {
            LayerQuantizer::FullPrecision => (phases.clone(), None),
            LayerQuantizer::Hard(spec) | LayerQuantizer::Ste(spec) => {
                (phases.mapv(|p| hard_quantize(p, spec)), None)
            }
            LayerQuantizer::Psq { spec, temperature } => {
                let tau = temperature.value();
                (phases.mapv(|p| psq_eval(p, tau, spec)), None)
            }
            LayerQuantizer::Dsq { spec, temperature } => {
                let tau = temperature.value();
                (phases.mapv(|p| dsq_eval(p, tau, spec)), None)
            }
            LayerQuantizer::Gumbel {
                spec,
                logits,
                temperature,
            } => {
                let (h, w) = phases.dim();
                let n = spec.levels as usize;
                let mut theta = Array2::zeros((h, w));
                let mut probs = Array3::zeros((h, w, n));
                let mut noise = vec![0.0; n];
                let mut p = vec![0.0; n];
                for i in 0..h {
                    for j in 0..w {
                        let row = logits.slice(ndarray::s![i, j, ..]);
                        sample_gumbel(rng, &mut noise);
                        theta[(i, j)] = gs_forward_train(
                            row.as_slice().expect("logits are contiguous"),
                            &noise,
                            *temperature,
                            spec,
                            &mut p,
                        );
                        for (l, &v) in p.iter().enumerate() {
                            probs[(i, j, l)] = v;
                        }
                    }
                }
                (theta, Some(probs))
            }
        }
    }

    /// Training-mode forward pass: returns the tape needed by [`Self::backward`].
    pub fn forward_train<R: Rng>(&self, image: &Array2<f64>, rng: &mut R) -> Result<TrainForward> {
        let mut field = self.prop_in.propagate(&self.encode_input(image)?)?;
        let n = self.geometry.num_layers;
        let mut layer_inputs = Vec::with_capacity(n);
        let mut soft_phases = Vec::with_capacity(n);
        let mut gs_probs = Vec::with_capacity(n);
        for layer in 0..n {
            let (theta, probs) = self.soft_phase(layer, rng);
            layer_inputs.push(field.clone());
            let modulated = modulate(&field, &theta);
            field = if layer + 1 < n {
                self.prop_between.propagate(&modulated)?
            } else {
                self.prop_out.propagate(&modulated)?
            };
            soft_phases.push(theta);
            gs_probs.push(probs);
        }
        let intensity = self.detect(&field)?;
        Ok(TrainForward {
            layer_inputs,
            soft_phases,
            gs_probs,
            output_field: field,
            intensity,
        })
    }

    /// Evaluation-mode intensity: every layer applies its
    /// [`Self::effective_eval_phase`]. Deterministic.
    pub fn evaluate(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        let mut field = self.prop_in.propagate(&self.encode_input(image)?)?;
        let n = self.geometry.num_layers;
        for layer in 0..n {
            let theta = self.effective_eval_phase(layer);
            let modulated = modulate(&field, &theta);
            field = if layer + 1 < n {
                self.prop_between.propagate(&modulated)?
            } else {
                self.prop_out.propagate(&modulated)?
            };
        }
        self.detect(&field)
    }

    /// The complex field on the detector plane (full layer grid, before the
    /// field-of-view crop), computed in evaluation mode.
    pub fn output_field(&self, image: &Array2<f64>) -> Result<Field> {
        let mut field = self.prop_in.propagate(&self.encode_input(image)?)?;
        let n = self.geometry.num_layers;
        for layer in 0..n {
            let theta = self.effective_eval_phase(layer);
            let modulated = modulate(&field, &theta);
            field = if layer + 1 < n {
                self.prop_between.propagate(&modulated)?
            } else {
                self.prop_out.propagate(&modulated)?
            };
        }
        Ok(field)
    }

    /// Intensity on the field of view.
    fn detect(&self, field: &Field) -> Result<Array2<f64>> {
        let fov = crop_centered(field, self.geometry.fov_h, self.geometry.fov_w)?;
        Ok(fov.mapv(|v| v.norm_sqr()))
    }

    /// Adjoint pass: given `d loss / d intensity` on the field of view and the
    /// tape of the matching forward pass, produce gradients for all trainable
    /// quantities. Uses only conjugate-transpose propagations — the counters
    /// on the forward propagators do not move.
    pub fn backward(&self, tape: &TrainForward, intensity_grad: &Array2<f64>) -> Result<Gradients> {
        let g = &self.geometry;
        if intensity_grad.dim() != (g.fov_h, g.fov_w) {
            return Err(Error::ShapeMismatch(format!(
                "intensity gradient is {:?}, field of view is {}x{}",
                intensity_grad.dim(),
                g.fov_h,
                g.fov_w
            )));
        }
        // d|E|^2/dE in the (dL/dRe, dL/dIm) convention: lambda = 2 g_I E.
        let out_fov = crop_centered(&tape.output_field, g.fov_h, g.fov_w)?;
        let mut lam_fov = out_fov;
        lam_fov.zip_mut_with(intensity_grad, |e, &gi| *e *= 2.0 * gi);
        let mut lam = embed_centered(&lam_fov, g.layer_h, g.layer_w)?;
        lam = self.prop_out.propagate_adjoint(&lam)?;

        let n = g.num_layers;
        let mut grad_phases: Vec<Array2<f64>> =
            self.phases.iter().map(|p| Array2::zeros(p.dim())).collect();
        let mut grad_k = vec![0.0; n];
        let mut grad_logits: Vec<Option<Array3<f64>>> = vec![None; n];

        for layer in (0..n).rev() {
            let e_in = &tape.layer_inputs[layer];
            let theta = &tape.soft_phases[layer];
            // dL/dtheta = Re(conj(lam) * j * E_in * e^{j theta}), pointwise.
            let mut dtheta = Array2::zeros(theta.dim());
            for i in 0..g.layer_h {
                for j in 0..g.layer_w {
                    let e_mod = e_in[(i, j)] * Complex64::from_polar(1.0, theta[(i, j)]);
                    dtheta[(i, j)] = (lam[(i, j)].conj() * Complex64::new(0.0, 1.0) * e_mod).re;
                }
            }
            match &self.quantizers[layer] {
                LayerQuantizer::FullPrecision | LayerQuantizer::Ste(_) => {
                    // theta == phi, or straight-through by definition.
                    grad_phases[layer].assign(&dtheta);
                }
                LayerQuantizer::Hard(_) => {
                    // The true derivative of the staircase: zero a.e.
                }
                LayerQuantizer::Psq { spec, temperature } => {
                    let tau = temperature.value();
                    let phi = &self.phases[layer];
                    let gp = &mut grad_phases[layer];
                    for i in 0..g.layer_h {
                        for j in 0..g.layer_w {
                            gp[(i, j)] = dtheta[(i, j)] * psq_grad_input(phi[(i, j)], tau, spec);
                        }
                    }
                    if let Temperature::Learned(p) = temperature {
                        let dtau_dk = p.temperature_grad_k();
                        let mut acc = 0.0;
                        for i in 0..g.layer_h {
                            for j in 0..g.layer_w {
                                acc +=
                                    dtheta[(i, j)] * psq_grad_temperature(phi[(i, j)], tau, spec);
                            }
                        }
                        grad_k[layer] = acc * dtau_dk;
                    }
                }
                LayerQuantizer::Dsq { spec, temperature } => {
                    let tau = temperature.value();
                    let phi = &self.phases[layer];
                    let gp = &mut grad_phases[layer];
                    for i in 0..g.layer_h {
                        for j in 0..g.layer_w {
                            gp[(i, j)] = dtheta[(i, j)] * dsq_grad_input(phi[(i, j)], tau, spec);
                        }
                    }
                }
                LayerQuantizer::Gumbel {
                    spec, temperature, ..
                } => {
                    let probs = tape.gs_probs[layer]
                        .as_ref()
                        .expect("tape of a Gumbel layer records probabilities");
                    let nl = spec.levels as usize;
                    let mut dl = Array3::zeros((g.layer_h, g.layer_w, nl));
                    for i in 0..g.layer_h {
                        for j in 0..g.layer_w {
                            let dt = dtheta[(i, j)];
                            let th = theta[(i, j)];
                            for l in 0..nl {
                                dl[(i, j, l)] = dt * probs[(i, j, l)] * (spec.level(l as u32) - th)
                                    / temperature;
                            }
                        }
                    }
                    grad_logits[layer] = Some(dl);
                }
            }
            // Gradient with respect to the field entering the layer:
            // lam <- lam * e^{-j theta}, then pull through the propagation
            // that delivered that field.
            let mut lam_in = lam;
            for i in 0..g.layer_h {
                for j in 0..g.layer_w {
                    lam_in[(i, j)] *= Complex64::from_polar(1.0, -theta[(i, j)]);
                }
            }
            if layer > 0 {
                lam = self.prop_between.propagate_adjoint(&lam_in)?;
            } else {
                lam = lam_in; // No trainable parameters before the first layer.
            }
        }
        Ok(Gradients {
            phases: grad_phases,
            temperature_k: grad_k,
            logits: grad_logits,
        })
    }
}

#[doc(hidden)]
impl DiffractiveNetwork {
    /// Test instrumentation: (input, between, output) propagators.
    pub fn propagators(&self) -> (&Propagator, &Propagator, &Propagator) {
        (&self.prop_in, &self.prop_between, &self.prop_out)
    }
}

/// Pointwise phase modulation `E * exp(j * theta)`.
fn modulate(field: &Field, theta: &Array2<f64>) -> Field {
    let mut out = field.clone();
    out.zip_mut_with(theta, |e, &t| *e *= Complex64::from_polar(1.0, t));
    out
}

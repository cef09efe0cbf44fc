//! `gradcheck`: finite-difference verification of the hand-written backward
//! pass at a chosen scale, plus the closed-form staircase derivatives.

use clap::Args;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::process::ExitCode;

use diffract_qat::error::Result;
use diffract_qat::network::{DiffractiveNetwork, Geometry, LayerQuantizer, Temperature};
use diffract_qat::quantizers::{
    psq_eval, psq_grad_input, psq_grad_temperature, QuantizerSpec, TemperatureParam,
};
use diffract_qat::training::{uniform_phase_init, wrap_phase};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Which surrogate to check: "default" (sigmoid staircase), "ste", or
    /// "hard".
    #[arg(long, default_value = "default")]
    pub preset: String,
    /// Layer grid side length.
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    /// Number of phase layers.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Relative tolerance for the network-level gradient match.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

const WL: f64 = 632.8e-9;
const FD_STEP: f64 = 1e-4;
/// Absolute slack added to every relative comparison, absorbing
/// finite-difference rounding noise on near-zero gradients.
const NET_FLOOR: f64 = 1e-9;
const QUANT_TOL: f64 = 1e-5;
const QUANT_FLOOR: f64 = 1e-8;

fn geometry(layers: usize, size: usize) -> Geometry {
    Geometry {
        layer_h: size,
        layer_w: size,
        fov_h: size,
        fov_w: size,
        num_layers: layers,
        pitch: 0.5 * WL,
        wavelength: WL,
        z_in: 5.3 * WL,
        z_between: 5.3 * WL,
        z_out: 9.3 * WL,
    }
}

struct Setup {
    geom: Geometry,
    phases: Vec<Array2<f64>>,
    quantizer: LayerQuantizer,
    image: Array2<f64>,
    weights: Array2<f64>,
}

impl Setup {
    fn new(args: &GradcheckArgs) -> Result<Self> {
        let geom = geometry(args.layers.max(1), args.size.max(4));
        let spec = QuantizerSpec::new(0.0, 1.99 * PI, 4)?;
        let quantizer = match args.preset.as_str() {
            "ste" => LayerQuantizer::Ste(spec),
            "hard" => LayerQuantizer::Hard(spec),
            // k = 1/4 - 0.05 makes the learned temperature exactly 4.
            _ => LayerQuantizer::Psq {
                spec,
                temperature: Temperature::Learned(TemperatureParam::new(0.2, 0.05)?),
            },
        };
        let phases: Vec<Array2<f64>> = uniform_phase_init(&geom, 1001)
            .into_iter()
            .map(|p| p.mapv(wrap_phase))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1002);
        let image = Array2::from_shape_fn((geom.fov_h, geom.fov_w), |_| rng.gen::<f64>());
        let weights = Array2::from_shape_fn((geom.fov_h, geom.fov_w), |_| rng.gen::<f64>());
        Ok(Self {
            geom,
            phases,
            quantizer,
            image,
            weights,
        })
    }

    fn network(
        &self,
        phases: Vec<Array2<f64>>,
        quantizer: LayerQuantizer,
    ) -> Result<DiffractiveNetwork> {
        DiffractiveNetwork::with_uniform_quantizer(self.geom, phases, quantizer)
    }

    /// Scalar probe loss: weighted sum of the detected intensity.
    fn loss(&self, net: &DiffractiveNetwork) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tape = net.forward_train(&self.image, &mut rng)?;
        Ok(tape
            .intensity
            .iter()
            .zip(self.weights.iter())
            .map(|(i, w)| i * w)
            .sum())
    }

    fn loss_at_phase(&self, layer: usize, i: usize, j: usize, delta: f64) -> Result<f64> {
        let mut phases = self.phases.clone();
        phases[layer][(i, j)] += delta;
        self.loss(&self.network(phases, self.quantizer.clone())?)
    }

    fn loss_at_k(&self, k: f64) -> Result<f64> {
        let q = LayerQuantizer::Psq {
            spec: QuantizerSpec::new(0.0, 1.99 * PI, 4)?,
            temperature: Temperature::Learned(TemperatureParam::new(k, 0.05)?),
        };
        self.loss(&self.network(self.phases.clone(), q)?)
    }
}

struct Worst {
    ratio: f64,
    what: String,
    analytic: f64,
    fd: f64,
}

impl Worst {
    fn new() -> Self {
        Self {
            ratio: 0.0,
            what: String::new(),
            analytic: 0.0,
            fd: 0.0,
        }
    }

    fn update(&mut self, ratio: f64, what: impl FnOnce() -> String, analytic: f64, fd: f64) {
        if ratio > self.ratio {
            self.ratio = ratio;
            self.what = what();
            self.analytic = analytic;
            self.fd = fd;
        }
    }

    fn report(&self, label: &str, checks: usize, ok: bool) {
        if ok {
            println!(
                "{label}: {checks} checks, worst at {:.4} of tolerance — OK",
                self.ratio
            );
        } else {
            println!(
                "{label}: FAIL at {} — analytic {:.6e} vs finite difference {:.6e} ({:.2}x tolerance)",
                self.what, self.analytic, self.fd, self.ratio
            );
        }
    }
}

fn check_default(args: &GradcheckArgs) -> Result<ExitCode> {
    let setup = Setup::new(args)?;
    let net = setup.network(setup.phases.clone(), setup.quantizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tape = net.forward_train(&setup.image, &mut rng)?;
    let grads = net.backward(&tape, &setup.weights)?;

    let tol = args.tolerance;
    let mut worst_phase = Worst::new();
    let mut phase_checks = 0usize;
    for layer in 0..setup.geom.num_layers {
        for i in 0..setup.geom.layer_h {
            for j in 0..setup.geom.layer_w {
                let plus = setup.loss_at_phase(layer, i, j, FD_STEP)?;
                let minus = setup.loss_at_phase(layer, i, j, -FD_STEP)?;
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let g = grads.phases[layer][(i, j)];
                let ratio = (g - fd).abs() / (tol * fd.abs() + NET_FLOOR);
                worst_phase.update(ratio, || format!("phase layer {layer} ({i},{j})"), g, fd);
                phase_checks += 1;
            }
        }
    }
    let phase_ok = worst_phase.ratio <= 1.0;
    worst_phase.report("phase gradients", phase_checks, phase_ok);

    // The probe network gives every layer the same k, so shifting that
    // shared scalar produces the sum of the per-layer gradients.
    let mut worst_k = Worst::new();
    let mut k_checks = 0usize;
    let plus = setup.loss_at_k(0.2 + FD_STEP)?;
    let minus = setup.loss_at_k(0.2 - FD_STEP)?;
    let fd = (plus - minus) / (2.0 * FD_STEP);
    let g: f64 = grads.temperature_k.iter().sum();
    let ratio = (g - fd).abs() / (tol * fd.abs() + NET_FLOOR);
    worst_k.update(
        ratio,
        || "temperature parameter (summed over layers)".into(),
        g,
        fd,
    );
    k_checks += 1;
    let k_ok = worst_k.ratio <= 1.0;
    worst_k.report("temperature gradients", k_checks, k_ok);

    // Closed-form staircase derivatives against finite differences.
    let spec = QuantizerSpec::new(0.0, 1.99 * PI, 4)?;
    let h = 1e-6;
    let mut worst_q = Worst::new();
    let mut q_checks = 0usize;
    for &tau in &[1.0, 4.0, 20.0] {
        for step in 0..=100 {
            let x = -0.5 + (spec.upper + 1.0) * step as f64 / 100.0;
            let fd_x = (psq_eval(x + h, tau, &spec) - psq_eval(x - h, tau, &spec)) / (2.0 * h);
            let g_x = psq_grad_input(x, tau, &spec);
            let r_x = (g_x - fd_x).abs() / (QUANT_TOL * fd_x.abs() + QUANT_FLOOR);
            worst_q.update(r_x, || format!("d/dx at x={x:.3}, tau={tau}"), g_x, fd_x);
            let fd_t = (psq_eval(x, tau + h, &spec) - psq_eval(x, tau - h, &spec)) / (2.0 * h);
            let g_t = psq_grad_temperature(x, tau, &spec);
            let r_t = (g_t - fd_t).abs() / (QUANT_TOL * fd_t.abs() + QUANT_FLOOR);
            worst_q.update(r_t, || format!("d/dtau at x={x:.3}, tau={tau}"), g_t, fd_t);
            q_checks += 2;
        }
    }
    let q_ok = worst_q.ratio <= 1.0;
    worst_q.report("staircase derivatives", q_checks, q_ok);

    if phase_ok && k_ok && q_ok {
        println!("gradcheck: PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck: FAIL");
        Ok(ExitCode::FAILURE)
    }
}

fn check_ste(args: &GradcheckArgs) -> Result<ExitCode> {
    let setup = Setup::new(args)?;
    let net = setup.network(setup.phases.clone(), setup.quantizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tape = net.forward_train(&setup.image, &mut rng)?;
    let grads = net.backward(&tape, &setup.weights)?;
    let mut max_gap = 0.0f64;
    for layer in 0..setup.geom.num_layers {
        for i in 0..setup.geom.layer_h {
            for j in 0..setup.geom.layer_w {
                let plus = setup.loss_at_phase(layer, i, j, FD_STEP)?;
                let minus = setup.loss_at_phase(layer, i, j, -FD_STEP)?;
                let fd = (plus - minus) / (2.0 * FD_STEP);
                max_gap = max_gap.max((grads.phases[layer][(i, j)] - fd).abs());
            }
        }
    }
    println!(
        "straight-through estimator: max |analytic - finite difference| = {max_gap:.6e} \
         (mismatch expected: the estimator passes gradients through a flat staircase) — OK"
    );
    Ok(ExitCode::SUCCESS)
}

fn check_hard(args: &GradcheckArgs) -> Result<ExitCode> {
    let setup = Setup::new(args)?;
    let net = setup.network(setup.phases.clone(), setup.quantizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tape = net.forward_train(&setup.image, &mut rng)?;
    let grads = net.backward(&tape, &setup.weights)?;
    let nonzero = grads
        .phases
        .iter()
        .flat_map(|g| g.iter())
        .filter(|v| **v != 0.0)
        .count();
    if nonzero == 0 {
        println!("hard quantizer: all phase gradients identically zero — OK");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("hard quantizer: FAIL — {nonzero} nonzero gradients");
        Ok(ExitCode::FAILURE)
    }
}

pub fn run(args: &GradcheckArgs) -> Result<ExitCode> {
    match args.preset.as_str() {
        "ste" => check_ste(args),
        "hard" => check_hard(args),
        "default" | "psq" => check_default(args),
        other => Err(diffract_qat::error::Error::Config(format!(
            "unknown gradcheck preset \"{other}\" (expected default|ste|hard)"
        ))),
    }
}

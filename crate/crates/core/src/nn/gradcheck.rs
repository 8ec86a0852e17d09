//! Central finite-difference checks of the analytic gradients.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Layer;
use super::net::CarleNet;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor, so gradients that are zero up to round-off do not
/// produce huge relative errors.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor and flat index of the worst entry, `"input"` or `"param3[17]"`.
    pub worst: String,
}

impl GradCheck {
    fn new() -> Self {
        Self { max_rel_error: 0.0, checked: 0, worst: String::new() }
    }

    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = rel;
            self.worst = format!("{} analytic {analytic:e} numeric {numeric:e}", what());
        }
    }
}

/// Checks input and parameter gradients of `layer` at `x` under the scalar
/// loss `sum(y * r)` with a fixed random `r`.
pub fn check_layer<L: Layer>(layer: &mut L, x: &Array2<f64>, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, cache) = layer.forward(x.view());
    let r = Array2::from_shape_simple_fn(y.raw_dim(), || rng.random_range(-1.0..1.0));
    let (dx, grads) = layer.backward(&cache, r.view());
    let loss = |l: &L, x: &Array2<f64>| (l.forward(x.view()).0 * &r).sum();

    let mut report = GradCheck::new();
    let mut xp = x.clone();
    for i in 0..xp.len() {
        let orig = xp.as_slice().unwrap()[i];
        xp.as_slice_mut().unwrap()[i] = orig + GRADCHECK_STEP;
        let up = loss(layer, &xp);
        xp.as_slice_mut().unwrap()[i] = orig - GRADCHECK_STEP;
        let down = loss(layer, &xp);
        xp.as_slice_mut().unwrap()[i] = orig;
        let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
        report.record(dx.as_slice().unwrap()[i], numeric, || format!("input[{i}]"));
    }
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = layer.params()[p].as_slice().unwrap()[i];
            layer.params_mut()[p].as_slice_mut().unwrap()[i] = orig + GRADCHECK_STEP;
            let up = loss(layer, x);
            layer.params_mut()[p].as_slice_mut().unwrap()[i] = orig - GRADCHECK_STEP;
            let down = loss(layer, x);
            layer.params_mut()[p].as_slice_mut().unwrap()[i] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            report.record(g.as_slice().unwrap()[i], numeric, || format!("param{p}[{i}]"));
        }
    }
    report
}

/// Adds `U(-scale, scale)` noise to every parameter. Zero-initialised
/// biases put ReLU inputs exactly on the kink wherever an upstream unit is
/// dead, where the one-sided finite difference is meaningless.
pub fn jitter_params(params: Vec<&mut Array2<f64>>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params {
        p.mapv_inplace(|v| v + rng.random_range(-scale..scale));
    }
}

/// Checks every parameter gradient of the full network, L2 terms included,
/// under the sum-of-squares training loss.
pub fn check_net(net: &mut CarleNet, x: &Array3<f64>, y: &[f64]) -> GradCheck {
    let (_, grads) = net.loss_and_grads(x.view(), y, 1.0).expect("valid batch");
    let mut report = GradCheck::new();
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = net.params()[p].as_slice().unwrap()[i];
            net.params_mut()[p].as_slice_mut().unwrap()[i] = orig + GRADCHECK_STEP;
            let up = net.loss(x.view(), y).expect("valid batch");
            net.params_mut()[p].as_slice_mut().unwrap()[i] = orig - GRADCHECK_STEP;
            let down = net.loss(x.view(), y).expect("valid batch");
            net.params_mut()[p].as_slice_mut().unwrap()[i] = orig;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            report.record(g.as_slice().unwrap()[i], numeric, || format!("param{p}[{i}]"));
        }
    }
    report
}

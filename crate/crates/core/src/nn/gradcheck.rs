//! Central finite-difference checks of the analytic backward passes, run in
//! 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Layer;
use super::tensor::Tensor;
use super::Ctx;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    pub tol: f64,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
    /// Coordinates sampled per tensor; `usize::MAX` checks all of them.
    pub max_checks: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_checks: usize::MAX,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree, i.e. a kink lies within
    /// `eps`; these are excluded from the comparison.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compares `analytic` against central differences of `loss` at the given
/// coordinates. `set(i, v)` writes coordinate `i`; `get(i)` reads it.
pub fn compare_coordinates(
    label: &str,
    coords: &[usize],
    analytic: &[f64],
    cfg: &GradCheck,
    get: &mut dyn FnMut(usize) -> f64,
    set: &mut dyn FnMut(usize, f64),
    loss: &mut dyn FnMut() -> f64,
) -> GradReport {
    let mut report = GradReport::default();
    let base = loss();
    for (&i, &a) in coords.iter().zip(analytic) {
        let x0 = get(i);
        set(i, x0 + cfg.eps);
        let up = loss();
        set(i, x0 - cfg.eps);
        let down = loss();
        set(i, x0);
        let forward = (up - base) / cfg.eps;
        let backward = (base - down) / cfg.eps;
        let scale = forward.abs().max(backward.abs()).max(cfg.floor);
        if (forward - backward).abs() > cfg.tol * scale {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * cfg.eps);
        let err = relative_error(a, numeric, cfg.floor);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = format!("{label}[{i}]: analytic {a:e} numeric {numeric:e}");
        }
    }
    report
}

/// Picks up to `max` coordinates out of `n`, deterministically.
pub fn sample_coords(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut picked: Vec<usize> = (0..max).map(|_| rng.random_range(0..n)).collect();
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Checks input and parameter gradients of a single layer under the loss
/// `Σ r·layer(x)` for a fixed random `r`. Dropout masks are held fixed by
/// reseeding the context on every forward.
pub fn check_layer(
    layer: Layer<f64>,
    input_shape: &[usize],
    seed: u64,
    cfg: &GradCheck,
) -> Result<GradReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::from_fn(input_shape, |_| rng.random_range(-1.0..1.0));
    let mut probe = layer.clone();
    let out = probe
        .forward(&x, &mut Ctx::train(seed))
        .map_err(|e| e.to_string())?;
    let r = Tensor::<f64>::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));

    let penalty = |l: &Layer<f64>| l.penalty();
    let eval = |l: &mut Layer<f64>, x: &Tensor<f64>| -> f64 {
        let y = l.forward(x, &mut Ctx::train(seed)).expect("forward");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>() + penalty(l)
    };

    let mut analytic = layer.clone();
    analytic.forward(&x, &mut Ctx::train(seed)).map_err(|e| e.to_string())?;
    let dx = analytic.backward(&r).map_err(|e| e.to_string())?;

    let mut report = GradReport::default();
    {
        let coords = sample_coords(x.len(), cfg.max_checks, &mut rng);
        let a: Vec<f64> = coords.iter().map(|&i| dx.data()[i]).collect();
        let xs = std::cell::RefCell::new(x.clone());
        let mut l = layer.clone();
        report.merge(compare_coordinates(
            "input",
            &coords,
            &a,
            cfg,
            &mut |i| xs.borrow().data()[i],
            &mut |i, v| xs.borrow_mut().data_mut()[i] = v,
            &mut || eval(&mut l, &xs.borrow()),
        ));
    }

    let grads: Vec<(&'static str, Vec<f64>)> = analytic
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.grad.data().to_vec()))
        .collect();
    for (k, (name, grad)) in grads.iter().enumerate() {
        let coords = sample_coords(grad.len(), cfg.max_checks, &mut rng);
        let a: Vec<f64> = coords.iter().map(|&i| grad[i]).collect();
        let l = std::cell::RefCell::new(layer.clone());
        report.merge(compare_coordinates(
            name,
            &coords,
            &a,
            cfg,
            &mut |i| l.borrow_mut().params_mut()[k].1.value.data()[i],
            &mut |i, v| l.borrow_mut().params_mut()[k].1.value.data_mut()[i] = v,
            &mut || eval(&mut l.borrow_mut(), &x),
        ));
    }

    if report.max_rel_error >= cfg.tol {
        return Err(format!(
            "max relative error {:e} ({})",
            report.max_rel_error, report.worst
        ));
    }
    if report.checked == 0 {
        return Err("no coordinates checked".into());
    }
    Ok(report)
}

use rand::Rng;

use super::{
    AdaptiveAvgPoolHeight, BiLstm, ColumnsToSequence, Conv2d, Dropout, Layer, Linear, LogSoftmax, MaxPool2d, Mode,
    NearestUpsample, Param, Parameterized, Relu, Tensor,
};
use crate::{seed, Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst single entry, `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Worst parameter tensor, `||a - n|| / max(||a||, ||n||, 1e-8)`.
    pub max_tensor_rel_error: f64,
    pub checked: usize,
    /// `(tensor index, element index)` of the worst entry.
    pub worst: (usize, usize),
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn central_difference(x: &mut [f64], i: usize, eps: f64, f: &mut dyn FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let orig = x[i];
    x[i] = orig + eps;
    let plus = f(x)?;
    x[i] = orig - eps;
    let minus = f(x)?;
    x[i] = orig;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((plus - minus) / (2.0 * eps))
}

#[derive(Default)]
struct Norms {
    diff: f64,
    analytic: f64,
    numeric: f64,
}

impl Norms {
    fn add(&mut self, a: f64, n: f64) {
        self.diff += (a - n) * (a - n);
        self.analytic += a * a;
        self.numeric += n * n;
    }

    fn rel_error(&self) -> f64 {
        self.diff.sqrt() / self.analytic.sqrt().max(self.numeric.sqrt()).max(1e-8)
    }
}

/// Check the gradient of a scalar function of a flat vector.
/// `f` returns the value and its analytic gradient.
pub fn grad_check_fn(
    x: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<GradCheckReport> {
    let (value, analytic) = f(x)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut point = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_tensor_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    let mut value_only = |p: &[f64]| f(p).map(|(v, _)| v);
    let mut norms = Norms::default();
    for i in 0..x.len() {
        let numeric = central_difference(&mut point, i, eps, &mut value_only)?;
        norms.add(analytic[i], numeric);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = (0, i);
        }
    }
    report.max_tensor_rel_error = norms.rel_error();
    Ok(report)
}

/// Check every parameter gradient of `model`. `loss` evaluates the model and
/// returns the loss with one gradient tensor per parameter.
pub fn grad_check<M: Parameterized>(
    model: &mut M,
    eps: f64,
    loss: impl Fn(&M) -> Result<(f64, Vec<Tensor>)>,
) -> Result<GradCheckReport> {
    let (value, analytic) = loss(model)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_tensor_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    let count = model.params().len();
    if analytic.len() != count {
        return Err(Error::Shape(format!("{} gradients for {count} parameters", analytic.len())));
    }
    for p in 0..count {
        let len = model.params()[p].value.len();
        let mut norms = Norms::default();
        for i in 0..len {
            let orig = model.params()[p].value.data()[i];
            let eval = |model: &mut M, v: f64| -> Result<f64> {
                model.params_mut()[p].value.data_mut()[i] = v;
                let (l, _) = loss(model)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss);
                }
                Ok(l)
            };
            let plus = eval(model, orig + eps)?;
            let minus = eval(model, orig - eps)?;
            model.params_mut()[p].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            norms.add(analytic[p].data()[i], numeric);
            let err = relative_error(analytic[p].data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p, i);
            }
        }
        report.max_tensor_rel_error = report.max_tensor_rel_error.max(norms.rel_error());
    }
    Ok(report)
}

struct Single(Box<dyn Layer>);

impl Parameterized for Single {
    fn params(&self) -> Vec<&Param> {
        self.0.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.0.params_mut()
    }
}

fn random_tensor(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Worst per-entry relative error over a layer's parameter and input
/// gradients, for the loss `sum(out * probe)` with a seeded random probe.
pub fn check_layer(layer: Box<dyn Layer>, input: Tensor, mode: Mode, seed_value: u64) -> Result<f64> {
    let mut rng = seed::rng(seed::derive(seed_value, &[0xabcd]));
    let (out, _) = layer.forward(&input, mode)?;
    let probe = random_tensor(out.shape(), &mut rng);
    let loss_of = |l: &dyn Layer, x: &Tensor| -> Result<f64> {
        let (out, _) = l.forward(x, mode)?;
        Ok(out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
    };
    let mut model = Single(layer);
    let params = grad_check(&mut model, 1e-6, |m| {
        let (_, cache) = m.0.forward(&input, mode)?;
        let mut grads = m.grad_buffers();
        m.0.backward(&cache, &probe, &mut grads)?;
        Ok((loss_of(m.0.as_ref(), &input)?, grads))
    })?;
    let shape = input.shape().to_vec();
    let inputs = grad_check_fn(input.data(), 1e-6, |x| {
        let x = Tensor::new(&shape, x.to_vec())?;
        let (_, cache) = model.0.forward(&x, mode)?;
        let mut grads = model.grad_buffers();
        let dx = model.0.backward(&cache, &probe, &mut grads)?;
        Ok((loss_of(model.0.as_ref(), &x)?, dx.into_data()))
    })?;
    Ok(params.max_rel_error.max(inputs.max_rel_error))
}

/// Worst error of one layer type over a seed sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub max_rel_error: f64,
}

/// Finite-difference check of every layer type on random small instances,
/// one instance per layer and seed.
pub fn layer_suite(seeds: u64) -> Result<Vec<LayerCheck>> {
    let mut results: Vec<LayerCheck> = Vec::new();
    for s in 0..seeds {
        let mut rng = seed::rng(seed::derive(s, &[0x1a7e5]));
        let train = Mode::Train { seed: s };
        let cases: Vec<(Box<dyn Layer>, Tensor, Mode)> = vec![
            (Box::new(Conv2d::new(2, 3, 3, 1 + (s as usize % 2), 1, &mut rng)), random_tensor(&[2, 5, 6], &mut rng), Mode::Eval),
            (Box::new(Relu), random_tensor(&[2, 3, 3], &mut rng), Mode::Eval),
            (Box::new(MaxPool2d { ph: 2, pw: 2 }), random_tensor(&[2, 4, 5], &mut rng), Mode::Eval),
            (Box::new(AdaptiveAvgPoolHeight), random_tensor(&[3, 4, 5], &mut rng), Mode::Eval),
            (Box::new(ColumnsToSequence), random_tensor(&[3, 1, 5], &mut rng), Mode::Eval),
            (Box::new(BiLstm::new(3, 2, &mut rng)), random_tensor(&[4, 3], &mut rng), Mode::Eval),
            (Box::new(Dropout { p: 0.3 }), random_tensor(&[4, 3], &mut rng), train),
            (Box::new(Linear::new(4, 3, &mut rng)), random_tensor(&[5, 4], &mut rng), Mode::Eval),
            (Box::new(LogSoftmax), random_tensor(&[3, 5], &mut rng), Mode::Eval),
            (Box::new(NearestUpsample { factor: 2 }), random_tensor(&[2, 2, 3], &mut rng), Mode::Eval),
        ];
        for (layer, input, mode) in cases {
            let name = layer.name();
            let err = check_layer(layer, input, mode, s)?;
            match results.iter_mut().find(|r| r.layer == name) {
                Some(r) => r.max_rel_error = r.max_rel_error.max(err),
                None => results.push(LayerCheck {
                    layer: name,
                    max_rel_error: err,
                }),
            }
        }
    }
    Ok(results)
}

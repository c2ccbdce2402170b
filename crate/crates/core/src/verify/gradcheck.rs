//! Central finite-difference gradient checks in f64.

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig, HEAD_INIT_STD};
use crate::rng::{stream, StreamRng};
use crate::tensor::{DType, Mode, OpKind, ParamSet, Tape, Tensor, Var};

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    /// Sampled scalars whose difference stencil straddles a ReLU kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Flat index, analytic and numeric value at the worst element.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub subject: String,
    /// Op kinds recorded on the checked tape.
    pub ops: Vec<OpKind>,
    pub dtype: DType,
    pub step: f64,
    pub threshold: f64,
    pub tensors: Vec<TensorCheck>,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// At most this fraction of sampled scalars may be skipped for straddling a
/// ReLU kink before a check fails outright.
pub const MAX_SKIP_FRACTION: f64 = 0.05;

/// Loss value plus the ReLU sign signature of the evaluation.
pub type Probe = (f64, u64);

/// Compares `analytic` with central differences of `loss_at`, which must
/// evaluate the loss with element `(t, i)` shifted by `delta` (and leave
/// state restored afterwards). A scalar whose `±step` evaluations change the
/// ReLU pattern relative to `base_signature` is skipped: the loss is not
/// differentiable inside its stencil.
#[allow(clippy::too_many_arguments)]
fn compare(
    subject: String,
    ops: Vec<OpKind>,
    names: &[String],
    analytic: &[Vec<f64>],
    picks: &[Vec<usize>],
    step: f64,
    threshold: f64,
    base_signature: u64,
    mut loss_at: impl FnMut(usize, usize, f64) -> Result<Probe>,
) -> Result<GradCheckReport> {
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.iter().enumerate() {
        let mut check = TensorCheck {
            name: name.clone(),
            numel: analytic[t].len(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for &i in &picks[t] {
            let a = analytic[t][i];
            let (plus, sig_plus) = loss_at(t, i, step)?;
            let (minus, sig_minus) = loss_at(t, i, -step)?;
            if sig_plus != base_signature || sig_minus != base_signature {
                check.skipped += 1;
                continue;
            }
            check.checked += 1;
            let numeric = (plus - minus) / (2.0 * step);
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::invalid(
                    "gradcheck",
                    format!("{subject}: non-finite gradient at {name}[{i}] (analytic {a}, numeric {numeric})"),
                ));
            }
            let e = rel_err(a, numeric);
            if e > check.max_rel_err || check.checked == 1 {
                check.max_rel_err = e;
                check.worst = (i, a, numeric);
            }
        }
        tensors.push(check);
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    let checked: usize = tensors.iter().map(|t| t.checked).sum();
    let skipped: usize = tensors.iter().map(|t| t.skipped).sum();
    let skip_ok = skipped as f64 <= MAX_SKIP_FRACTION * (checked + skipped) as f64;
    Ok(GradCheckReport {
        subject,
        ops,
        dtype: DType::F64,
        step,
        threshold,
        tensors,
        checked,
        skipped,
        max_rel_err,
        passed: max_rel_err < threshold && skip_ok && checked > 0,
    })
}

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One single-op fixture: named leaf inputs and a function recording a
/// scalar loss from them.
pub struct OpCase {
    pub name: String,
    pub inputs: Vec<(String, Tensor<f64>)>,
    build: Builder,
}

impl OpCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<(&str, Tensor<f64>)>,
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        OpCase {
            name: name.into(),
            inputs: inputs.into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
            build: Box::new(build),
        }
    }

    fn record(&self, inputs: &[Tensor<f64>]) -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = (self.build)(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    }

    /// Checks every scalar of every input.
    pub fn check(&self, step: f64, threshold: f64) -> Result<GradCheckReport> {
        let mut values: Vec<Tensor<f64>> = self.inputs.iter().map(|(_, t)| t.clone()).collect();
        let (tape, vars, loss) = self.record(&values)?;
        let ops = tape.op_kinds();
        let base = tape.relu_signature();
        let grads = tape.backward(loss, &mut ParamSet::new())?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(&values)
            .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.numel()], |g| g.data().to_vec()))
            .collect();
        let names: Vec<String> = self.inputs.iter().map(|(n, _)| n.clone()).collect();
        let picks: Vec<Vec<usize>> = values.iter().map(|t| (0..t.numel()).collect()).collect();
        compare(self.name.clone(), ops, &names, &analytic, &picks, step, threshold, base, |t, i, d| {
            let orig = values[t].data()[i];
            values[t].data_mut()[i] = orig + d;
            let out = self.record(&values).map(|(tape, _, loss)| (tape.value(loss).data()[0], tape.relu_signature()));
            values[t].data_mut()[i] = orig;
            out
        })
    }
}

fn normal(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Reduces any output to a scalar with fixed random coefficients so every
/// output element carries a distinct upstream gradient.
fn reduce(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = stream(seed, "gradcheck/reduce", 0);
    let w = normal(&mut rng, &[tape.value(out).numel()]);
    tape.weighted_sum(out, w.data())
}

/// Fixtures covering every registered op, including each convolution
/// geometry used by the architectures.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = stream(seed, "gradcheck/ops", 0);
    let mut cases = Vec::new();

    for (label, x, w, bias, stride, pad) in [
        ("conv2d 3x3 s1 p1 +bias", [2, 3, 5, 5], [4, 3, 3, 3], true, 1, 1),
        ("conv2d 3x3 s2 p1", [2, 2, 6, 6], [3, 2, 3, 3], false, 2, 1),
        ("conv2d 1x1 s2 p0", [2, 3, 5, 5], [2, 3, 1, 1], false, 2, 0),
    ] {
        let mut inputs = vec![("x", normal(&mut rng, &x)), ("w", normal(&mut rng, &w))];
        if bias {
            inputs.push(("b", normal(&mut rng, &[w[0]])));
        }
        cases.push(OpCase::new(label, inputs, move |t, v| {
            let y = t.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)?;
            reduce(t, y, 1)
        }));
    }

    for mode in [Mode::Train, Mode::Eval] {
        let c = 3;
        let rm = normal(&mut rng, &[c]);
        let rv = Tensor::new(&[c], normal(&mut rng, &[c]).data().iter().map(|v| 0.5 + v.abs()).collect()).unwrap();
        let gamma = Tensor::new(&[c], normal(&mut rng, &[c]).data().iter().map(|v| 1.0 + 0.3 * v).collect()).unwrap();
        cases.push(OpCase::new(
            format!("batchnorm2d {mode:?}").to_lowercase(),
            vec![("x", normal(&mut rng, &[4, c, 3, 3])), ("gamma", gamma), ("beta", normal(&mut rng, &[c]))],
            move |t, v| {
                let (mut m, mut r) = (rm.clone(), rv.clone());
                let y = t.batch_norm(v[0], v[1], v[2], &mut m, &mut r, mode, 1e-5, 0.1)?;
                reduce(t, y, 2)
            },
        ));
    }

    let away: Vec<f64> = normal(&mut rng, &[2, 3, 4, 4]).data().iter().map(|&v| v.signum() * (0.1 + v.abs())).collect();
    cases.push(OpCase::new("relu", vec![("x", Tensor::new(&[2, 3, 4, 4], away).unwrap())], |t, v| {
        let y = t.relu(v[0]);
        reduce(t, y, 3)
    }));

    cases.push(OpCase::new(
        "add",
        vec![("a", normal(&mut rng, &[2, 3, 2, 2])), ("b", normal(&mut rng, &[2, 3, 2, 2]))],
        |t, v| {
            let y = t.add(v[0], v[1])?;
            reduce(t, y, 4)
        },
    ));

    cases.push(OpCase::new(
        "dense",
        vec![("x", normal(&mut rng, &[3, 5])), ("w", normal(&mut rng, &[4, 5])), ("b", normal(&mut rng, &[4]))],
        |t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            reduce(t, y, 5)
        },
    ));

    cases.push(OpCase::new("global_avg_pool", vec![("x", normal(&mut rng, &[2, 3, 3, 3]))], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        reduce(t, y, 6)
    }));

    cases.push(OpCase::new("softmax", vec![("x", normal(&mut rng, &[3, 4]))], |t, v| {
        let y = t.softmax(v[0])?;
        reduce(t, y, 7)
    }));

    cases.push(OpCase::new(
        "weighted_mixture",
        vec![
            ("e0", normal(&mut rng, &[2, 2, 3, 3])),
            ("e1", normal(&mut rng, &[2, 2, 3, 3])),
            ("e2", normal(&mut rng, &[2, 2, 3, 3])),
            ("logits", normal(&mut rng, &[2, 3])),
        ],
        |t, v| {
            let g = t.softmax(v[3])?;
            let y = t.weighted_mixture(&v[..3], g)?;
            reduce(t, y, 8)
        },
    ));

    cases.push(OpCase::new("log_softmax_nll", vec![("logits", normal(&mut rng, &[4, 3]))], |t, v| {
        t.log_softmax_nll(v[0], &[0, 2, 1, 2])
    }));

    cases.push(OpCase::new("weighted_sum", vec![("x", normal(&mut rng, &[2, 3]))], |t, v| reduce(t, v[0], 9)));

    cases
}

pub const OP_STEP: f64 = 1e-5;
pub const OP_THRESHOLD: f64 = 1e-7;
pub const MODEL_STEP: f64 = 1e-4;
pub const MODEL_THRESHOLD: f64 = 1e-5;
pub const MODEL_SAMPLES_PER_TENSOR: usize = 64;

/// Runs every single-op fixture.
pub fn check_ops(seed: u64, step: f64, threshold: f64) -> Result<Vec<GradCheckReport>> {
    op_cases(seed).iter().map(|c| c.check(step, threshold)).collect()
}

/// Full-model check: analytic parameter gradients of the NLL on a random
/// batch against central differences on up to `samples` scalars per
/// parameter tensor. The classifier weights are rescaled to fan-in scale
/// (std sqrt(2/fan_in)) first: with the small output-layer init every
/// upstream gradient would otherwise sit near the difference noise floor.
pub fn check_model(
    config: &ModelConfig,
    input_shape: [usize; 4],
    mode: Mode,
    seed: u64,
    samples: usize,
    step: f64,
    threshold: f64,
) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::build(config, seed)?;
    if let Some(id) = model.params.find("head.weight") {
        let w = &mut model.params.get_mut(id).value;
        let scale = (2.0 / w.shape()[1] as f64).sqrt() / HEAD_INIT_STD;
        w.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    let mut rng = stream(seed, "gradcheck/model", 0);
    let x = normal(&mut rng, &input_shape);
    let labels: Vec<usize> = (0..input_shape[0]).map(|i| i % config.num_classes()).collect();

    let pass = model.forward(x.clone(), mode)?;
    let ops = pass.tape.op_kinds();
    let base = pass.tape.relu_signature();
    pass.backward(&labels, &mut model.params)?;
    let ids: Vec<_> = model.params.ids().collect();
    let names: Vec<String> = ids.iter().map(|&id| model.params.get(id).name.clone()).collect();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| model.params.get(id).grad.data().to_vec()).collect();
    let mut pick_rng = stream(seed, "gradcheck/picks", 0);
    let picks: Vec<Vec<usize>> = analytic
        .iter()
        .map(|g| {
            let mut idx = sample_indices(&mut pick_rng, g.len(), samples.min(g.len())).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();

    compare(config.label(), ops, &names, &analytic, &picks, step, threshold, base, |t, i, d| {
        let id = ids[t];
        let orig = model.params.get(id).value.data()[i];
        model.params.get_mut(id).value.data_mut()[i] = orig + d;
        let out = model.forward(x.clone(), mode).and_then(|mut p| {
            let loss = p.tape.log_softmax_nll(p.logits, &labels)?;
            Ok((p.tape.value(loss).data()[0], p.tape.relu_signature()))
        });
        model.params.get_mut(id).value.data_mut()[i] = orig;
        out
    })
}

//! Direct-summation convolution used as an oracle for the im2col kernel.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{Tape, Tensor};

/// Cross-correlation by definition, O(N·Cout·Cin·OH·OW·kh·kw), accumulating
/// in f64 in `(ci, ky, kx)` order.
pub fn conv_naive(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<f64>> {
    let [n, cin, h, w] = input.dims4("conv_naive")?;
    let [cout, wcin, kh, kw] = weight.dims4("conv_naive")?;
    if wcin != cin || stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(
            "conv_naive",
            format!(
                "input {:?} incompatible with weight {:?} (stride {stride}, pad {pad})",
                input.shape(),
                weight.shape()
            ),
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let x = input.data();
    let k = weight.data();
    let mut out = vec![0.0f64; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            let b0 = bias.map_or(0.0, |t| t.data()[co]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * cin + ci) * h + iy as usize) * w + ix as usize]
                                    * k[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * cout + co) * oh + oy) * ow + ox] = acc + b0;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvTrial {
    pub input: [usize; 4],
    pub weight: [usize; 4],
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub max_abs_diff: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvDiffReport {
    pub trials: Vec<ConvTrial>,
    pub passed: bool,
}

/// Kernel geometries `(k, stride, pad)` used by the networks: 3×3 body and
/// gater convolutions at stride 1 or 2, and 1×1 projection shortcuts.
pub const ARCH_GEOMETRIES: [(usize, usize, usize); 3] = [(3, 1, 1), (3, 2, 1), (1, 2, 0)];

/// Values `m / 8` with `|m| ≤ 32`: every product and partial sum in the
/// trials is an exactly representable dyadic rational, so any summation
/// order gives the same f64 and equality can be required bit for bit.
fn dyadic(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-32i32..=32) as f64 / 8.0).collect()).expect("shape matches")
}

/// Compares the tape's conv2d with [`conv_naive`] on `trials` random shapes.
/// The first trials cycle through [`ARCH_GEOMETRIES`]; the rest draw kernel,
/// stride and padding freely.
pub fn conv_differential(trials: usize, seed: u64) -> Result<ConvDiffReport> {
    let mut rng = stream(seed, "verify/conv", 0);
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let (k, stride, pad) = match ARCH_GEOMETRIES.get(t) {
            Some(&g) => g,
            None => {
                let k = rng.random_range(1..=4);
                (k, rng.random_range(1..=3), rng.random_range(0..k))
            }
        };
        let n = rng.random_range(1..=3);
        let cin = rng.random_range(1..=5);
        let cout = rng.random_range(1..=5);
        let h = rng.random_range(k.max(1)..=9);
        let w = rng.random_range(k.max(1)..=9);
        let bias = rng.random_bool(0.5);
        let x = dyadic(&mut rng, &[n, cin, h, w]);
        let wt = dyadic(&mut rng, &[cout, cin, k, k]);
        let b = dyadic(&mut rng, &[cout]);

        let want = conv_naive(&x, &wt, bias.then_some(&b), stride, pad)?;
        let mut tape = Tape::<f64>::new();
        let (xv, wv) = (tape.input(x), tape.input(wt));
        let bv = bias.then(|| tape.input(b));
        let got = tape.conv2d(xv, wv, bv, stride, pad)?;
        let got = tape.value(got);
        let exact =
            got.shape() == want.shape() && got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        out.push(ConvTrial {
            input: [n, cin, h, w],
            weight: [cout, cin, k, k],
            stride,
            pad,
            bias,
            max_abs_diff: if got.shape() == want.shape() { got.max_abs_diff(&want) } else { f64::INFINITY },
            exact,
        });
    }
    let passed = out.iter().all(|t| t.exact);
    Ok(ConvDiffReport { trials: out, passed })
}

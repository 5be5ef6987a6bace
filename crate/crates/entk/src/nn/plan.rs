//! Layer plans and the forward / reverse / tangent passes.
//!
//! A `Plan` is the executable form of an [`ArchSpec`](super::ArchSpec): an
//! ordered list of layers, each knowing where its weights live inside the
//! flat parameter vector. All passes walk the same plan, so parameter
//! layout is defined in exactly one place.

use std::ops::Range;

use super::Activation;
use crate::error::{Error, Result};
use crate::math::{axpy, dot};

#[derive(Debug, Clone)]
pub(crate) enum LayerPlan {
    Dense {
        in_dim: usize,
        out_dim: usize,
        w: Range<usize>,
        /// `None` for the bias-free linear architecture.
        b: Option<Range<usize>>,
    },
    /// Valid (no padding) convolution, stride 1, square kernel.
    Conv {
        in_ch: usize,
        out_ch: usize,
        in_h: usize,
        in_w: usize,
        k: usize,
        w: Range<usize>,
        b: Range<usize>,
    },
    /// Non-overlapping average pooling with a square window.
    AvgPool {
        ch: usize,
        in_h: usize,
        in_w: usize,
        k: usize,
    },
    Act(Activation),
}

impl LayerPlan {
    pub(crate) fn out_len(&self, in_len: usize) -> usize {
        match self {
            LayerPlan::Dense { out_dim, .. } => *out_dim,
            LayerPlan::Conv {
                out_ch,
                in_h,
                in_w,
                k,
                ..
            } => out_ch * (in_h - k + 1) * (in_w - k + 1),
            LayerPlan::AvgPool {
                ch, in_h, in_w, k, ..
            } => ch * (in_h / k) * (in_w / k),
            LayerPlan::Act(_) => in_len,
        }
    }
}

/// Executable network description: layers plus flat-parameter layout.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub(crate) layers: Vec<LayerPlan>,
    pub(crate) param_len: usize,
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
}

/// Weight/bias slot of one parameterized layer, with its fan-in.
pub(crate) struct ParamSegment {
    pub(crate) weights: Range<usize>,
    pub(crate) biases: Range<usize>,
    pub(crate) fan_in: usize,
}

impl Plan {
    pub(crate) fn param_segments(&self) -> Vec<ParamSegment> {
        let mut segs = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerPlan::Dense { in_dim, w, b, .. } => segs.push(ParamSegment {
                    weights: w.clone(),
                    biases: b.clone().unwrap_or(w.end..w.end),
                    fan_in: *in_dim,
                }),
                LayerPlan::Conv { in_ch, k, w, b, .. } => segs.push(ParamSegment {
                    weights: w.clone(),
                    biases: b.clone(),
                    fan_in: in_ch * k * k,
                }),
                LayerPlan::AvgPool { .. } | LayerPlan::Act(_) => {}
            }
        }
        segs
    }

    /// Maps a flat parameter index to the index of the layer owning it.
    pub(crate) fn layer_of_param(&self, idx: usize) -> usize {
        for (li, layer) in self.layers.iter().enumerate() {
            let covers = match layer {
                LayerPlan::Dense { w, b, .. } => {
                    w.contains(&idx) || b.as_ref().is_some_and(|b| b.contains(&idx))
                }
                LayerPlan::Conv { w, b, .. } => w.contains(&idx) || b.contains(&idx),
                _ => false,
            };
            if covers {
                return li;
            }
        }
        self.layers.len()
    }
}

/// Values at every layer boundary: `vals[0]` is the input, `vals[i + 1]` the
/// output of layer `i`.
pub(crate) type Trace = Vec<Vec<f64>>;

pub(crate) fn forward_trace(plan: &Plan, params: &[f64], x: &[f64]) -> Result<Trace> {
    if x.len() != plan.in_dim {
        return Err(Error::Shape {
            what: "input vector",
            expected: plan.in_dim,
            got: x.len(),
        });
    }
    let mut vals: Trace = Vec::with_capacity(plan.layers.len() + 1);
    vals.push(x.to_vec());
    for layer in &plan.layers {
        let out = {
            let input = vals.last().expect("trace never empty");
            let mut out = vec![0.0; layer.out_len(input.len())];
            layer_forward(layer, params, input, &mut out);
            out
        };
        vals.push(out);
    }
    Ok(vals)
}

fn layer_forward(layer: &LayerPlan, params: &[f64], input: &[f64], out: &mut [f64]) {
    match layer {
        LayerPlan::Dense {
            in_dim,
            out_dim,
            w,
            b,
        } => {
            let w = &params[w.clone()];
            for o in 0..*out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let bias = b.as_ref().map_or(0.0, |b| params[b.start + o]);
                out[o] = bias + dot(row, input);
            }
        }
        LayerPlan::Conv {
            in_ch,
            out_ch,
            in_h,
            in_w,
            k,
            w,
            b,
        } => {
            let w = &params[w.clone()];
            let bias = &params[b.clone()];
            let (oh, ow) = (in_h - k + 1, in_w - k + 1);
            for oc in 0..*out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..*in_ch {
                            for ky in 0..*k {
                                let wrow = (((oc * in_ch + ic) * k) + ky) * k;
                                let irow = (ic * in_h + oy + ky) * in_w + ox;
                                acc += dot(&w[wrow..wrow + k], &input[irow..irow + k]);
                            }
                        }
                        out[(oc * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        LayerPlan::AvgPool { ch, in_h, in_w, k } => {
            let (oh, ow) = (in_h / k, in_w / k);
            let inv = 1.0 / ((k * k) as f64);
            for c in 0..*ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for dy in 0..*k {
                            let irow = (c * in_h + oy * k + dy) * in_w + ox * k;
                            for dx in 0..*k {
                                acc += input[irow + dx];
                            }
                        }
                        out[(c * oh + oy) * ow + ox] = acc * inv;
                    }
                }
            }
        }
        LayerPlan::Act(act) => {
            for (o, x) in out.iter_mut().zip(input) {
                *o = act.apply(*x);
            }
        }
    }
}

/// Reverse pass: accumulates `d(seed . output)/d(params)` into `grad` (`+=`).
pub(crate) fn vjp_accumulate(
    plan: &Plan,
    params: &[f64],
    trace: &Trace,
    seed: &[f64],
    grad: &mut [f64],
) {
    debug_assert_eq!(seed.len(), plan.out_dim);
    debug_assert_eq!(grad.len(), plan.param_len);
    let mut d_out = seed.to_vec();
    for (idx, layer) in plan.layers.iter().enumerate().rev() {
        let input = &trace[idx];
        let output = &trace[idx + 1];
        let mut d_in = vec![0.0; input.len()];
        layer_vjp(layer, params, input, output, &d_out, &mut d_in, grad);
        d_out = d_in;
    }
}

fn layer_vjp(
    layer: &LayerPlan,
    params: &[f64],
    input: &[f64],
    output: &[f64],
    d_out: &[f64],
    d_in: &mut [f64],
    grad: &mut [f64],
) {
    match layer {
        LayerPlan::Dense {
            in_dim,
            out_dim,
            w,
            b,
        } => {
            let wslice = &params[w.clone()];
            for o in 0..*out_dim {
                let g = d_out[o];
                if let Some(b) = b {
                    grad[b.start + o] += g;
                }
                let row = o * in_dim;
                axpy(&mut grad[w.start + row..w.start + row + in_dim], g, input);
                axpy(d_in, g, &wslice[row..row + in_dim]);
            }
        }
        LayerPlan::Conv {
            in_ch,
            out_ch,
            in_h,
            in_w,
            k,
            w,
            b,
        } => {
            let wslice = &params[w.clone()];
            let (oh, ow) = (in_h - k + 1, in_w - k + 1);
            for oc in 0..*out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = d_out[(oc * oh + oy) * ow + ox];
                        grad[b.start + oc] += g;
                        for ic in 0..*in_ch {
                            for ky in 0..*k {
                                let wrow = (((oc * in_ch + ic) * k) + ky) * k;
                                let irow = (ic * in_h + oy + ky) * in_w + ox;
                                axpy(
                                    &mut grad[w.start + wrow..w.start + wrow + k],
                                    g,
                                    &input[irow..irow + k],
                                );
                                axpy(&mut d_in[irow..irow + k], g, &wslice[wrow..wrow + k]);
                            }
                        }
                    }
                }
            }
        }
        LayerPlan::AvgPool { ch, in_h, in_w, k } => {
            let (oh, ow) = (in_h / k, in_w / k);
            let inv = 1.0 / ((k * k) as f64);
            for c in 0..*ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = d_out[(c * oh + oy) * ow + ox] * inv;
                        for dy in 0..*k {
                            let irow = (c * in_h + oy * k + dy) * in_w + ox * k;
                            for dx in 0..*k {
                                d_in[irow + dx] += g;
                            }
                        }
                    }
                }
            }
        }
        LayerPlan::Act(act) => {
            for i in 0..output.len() {
                d_in[i] = d_out[i] * act.deriv_from_output(output[i]);
            }
        }
    }
}

/// Tangent pass: directional derivative of the output along `dparams`,
/// holding the input fixed.
pub(crate) fn jvp(plan: &Plan, params: &[f64], trace: &Trace, dparams: &[f64]) -> Vec<f64> {
    debug_assert_eq!(dparams.len(), plan.param_len);
    let mut t = vec![0.0; plan.in_dim];
    for (idx, layer) in plan.layers.iter().enumerate() {
        let input = &trace[idx];
        let output = &trace[idx + 1];
        let mut t_out = vec![0.0; output.len()];
        layer_jvp(layer, params, dparams, input, output, &t, &mut t_out);
        t = t_out;
    }
    t
}

fn layer_jvp(
    layer: &LayerPlan,
    params: &[f64],
    dparams: &[f64],
    input: &[f64],
    output: &[f64],
    t_in: &[f64],
    t_out: &mut [f64],
) {
    match layer {
        LayerPlan::Dense {
            in_dim,
            out_dim,
            w,
            b,
        } => {
            let wslice = &params[w.clone()];
            let dw = &dparams[w.clone()];
            for o in 0..*out_dim {
                let row = o * in_dim;
                let bias = b.as_ref().map_or(0.0, |b| dparams[b.start + o]);
                t_out[o] = bias
                    + dot(&wslice[row..row + in_dim], t_in)
                    + dot(&dw[row..row + in_dim], input);
            }
        }
        LayerPlan::Conv {
            in_ch,
            out_ch,
            in_h,
            in_w,
            k,
            w,
            b,
        } => {
            let wslice = &params[w.clone()];
            let dw = &dparams[w.clone()];
            let db = &dparams[b.clone()];
            let (oh, ow) = (in_h - k + 1, in_w - k + 1);
            for oc in 0..*out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = db[oc];
                        for ic in 0..*in_ch {
                            for ky in 0..*k {
                                let wrow = (((oc * in_ch + ic) * k) + ky) * k;
                                let irow = (ic * in_h + oy + ky) * in_w + ox;
                                acc += dot(&wslice[wrow..wrow + k], &t_in[irow..irow + k]);
                                acc += dot(&dw[wrow..wrow + k], &input[irow..irow + k]);
                            }
                        }
                        t_out[(oc * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        LayerPlan::AvgPool { ch, in_h, in_w, k } => {
            let (oh, ow) = (in_h / k, in_w / k);
            let inv = 1.0 / ((k * k) as f64);
            for c in 0..*ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for dy in 0..*k {
                            let irow = (c * in_h + oy * k + dy) * in_w + ox * k;
                            for dx in 0..*k {
                                acc += t_in[irow + dx];
                            }
                        }
                        t_out[(c * oh + oy) * ow + ox] = acc * inv;
                    }
                }
            }
        }
        LayerPlan::Act(act) => {
            for i in 0..output.len() {
                t_out[i] = t_in[i] * act.deriv_from_output(output[i]);
            }
        }
    }
}

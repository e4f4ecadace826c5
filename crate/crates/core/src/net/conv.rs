//! Small convolutional subnet acting on a square single-channel image.
//!
//! Layers are zero-padded "same" cross-correlations without bias. A ReLU
//! follows every layer except the last. Feature maps are stored channel by
//! channel, each in row-major raster order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Result};

/// Borrowed view of one subnet's kernels.
#[derive(Debug, Clone, Copy)]
pub struct Subnet<'a> {
    pub side: usize,
    pub kernel: usize,
    pub channels: &'a [usize],
    pub layers: &'a [Vec<f64>],
}

/// Activations kept for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetCache {
    /// Input to each layer (after the previous ReLU).
    pub inputs: Vec<Vec<f64>>,
    /// Output of each hidden layer before its ReLU.
    pub pre: Vec<Vec<f64>>,
}

impl<'a> Subnet<'a> {
    fn conv(&self, input: &[f64], w: &[f64], cin: usize, cout: usize) -> Vec<f64> {
        let s = self.side as isize;
        let k = self.kernel as isize;
        let pad = k / 2;
        let n = self.side * self.side;
        let mut out = vec![0.0; cout * n];
        for y in 0..s {
            for x in 0..s {
                for ky in 0..k {
                    let iy = y + ky - pad;
                    if iy < 0 || iy >= s {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x + kx - pad;
                        if ix < 0 || ix >= s {
                            continue;
                        }
                        let pix = (iy * s + ix) as usize;
                        let wbase = ((ky * k + kx) as usize) * cin * cout;
                        for ci in 0..cin {
                            let v = input[ci * n + pix];
                            let wrow = &w[wbase + ci * cout..wbase + (ci + 1) * cout];
                            for (co, &wv) in wrow.iter().enumerate() {
                                out[co * n + (y * s + x) as usize] += wv * v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates kernel gradients into `gw` and returns the input gradient.
    fn conv_backward(
        &self,
        input: &[f64],
        w: &[f64],
        gout: &[f64],
        cin: usize,
        cout: usize,
        gw: &mut [f64],
    ) -> Vec<f64> {
        let s = self.side as isize;
        let k = self.kernel as isize;
        let pad = k / 2;
        let n = self.side * self.side;
        let mut gin = vec![0.0; cin * n];
        for y in 0..s {
            for x in 0..s {
                let opix = (y * s + x) as usize;
                for ky in 0..k {
                    let iy = y + ky - pad;
                    if iy < 0 || iy >= s {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x + kx - pad;
                        if ix < 0 || ix >= s {
                            continue;
                        }
                        let pix = (iy * s + ix) as usize;
                        let wbase = ((ky * k + kx) as usize) * cin * cout;
                        for ci in 0..cin {
                            let v = input[ci * n + pix];
                            let mut acc = 0.0;
                            for co in 0..cout {
                                let g = gout[co * n + opix];
                                gw[wbase + ci * cout + co] += g * v;
                                acc += w[wbase + ci * cout + co] * g;
                            }
                            gin[ci * n + pix] += acc;
                        }
                    }
                }
            }
        }
        gin
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, SubnetCache)> {
        check_len("subnet input", self.side * self.side, x.len())?;
        let depth = self.channels.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth.saturating_sub(1));
        let mut cur = x.to_vec();
        let mut cin = 1;
        for (d, (&cout, w)) in self.channels.iter().zip(self.layers).enumerate() {
            let out = self.conv(&cur, w, cin, cout);
            inputs.push(cur);
            if d + 1 < depth {
                let act = out.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                pre.push(out);
                cur = act;
            } else {
                cur = out;
            }
            cin = cout;
        }
        Ok((cur, SubnetCache { inputs, pre }))
    }

    /// Input gradient; kernel gradients are added to `grads`.
    pub fn backward(&self, cache: &SubnetCache, gout: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let depth = self.channels.len();
        let mut g = gout.to_vec();
        for d in (0..depth).rev() {
            let cin = if d == 0 { 1 } else { self.channels[d - 1] };
            let cout = self.channels[d];
            if d + 1 < depth {
                for (gv, &p) in g.iter_mut().zip(&cache.pre[d]) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            g = self.conv_backward(&cache.inputs[d], &self.layers[d], &g, cin, cout, &mut grads[d]);
        }
        g
    }
}

//! Differentiable tensor operations.
//!
//! Shape requirements are internal contracts and are enforced with panics;
//! the public modules validate user-facing preconditions before reaching
//! these ops. Outputs are always standard-layout arrays.

use ndarray::{concatenate, ArrayD, ArrayView2, Axis, Ix2, s};

use super::tape::{BackwardArgs, Tape, TensorId};

fn as2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("2-D tensor required")
}

impl Tape {
    // -- elementwise ---------------------------------------------------------

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) + self.value(b);
        self.push(v, vec![a, b], Some(Box::new(|args: &BackwardArgs| {
            vec![args.upstream.clone(), args.upstream.clone()]
        })), false)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) - self.value(b);
        self.push(v, vec![a, b], Some(Box::new(|args: &BackwardArgs| {
            vec![args.upstream.clone(), -args.upstream]
        })), false)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) * self.value(b);
        self.push(v, vec![a, b], Some(Box::new(|args: &BackwardArgs| {
            vec![args.upstream * args.parents[1], args.upstream * args.parents[0]]
        })), false)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a) / self.value(b);
        self.push(v, vec![a, b], Some(Box::new(|args: &BackwardArgs| {
            let ga = args.upstream / args.parents[1];
            let gb = -(args.upstream * args.parents[0]) / (args.parents[1] * args.parents[1]);
            vec![ga, gb]
        })), false)
    }

    /// `scale * x + shift`, elementwise with scalar constants.
    pub fn affine(&mut self, x: TensorId, scale: f64, shift: f64) -> TensorId {
        let v = self.value(x).mapv(|t| scale * t + shift);
        self.push(v, vec![x], Some(Box::new(move |args: &BackwardArgs| {
            vec![args.upstream.mapv(|g| g * scale)]
        })), false)
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        self.affine(x, -1.0, 0.0)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(|t| t.max(0.0));
        self.push(v, vec![x], Some(Box::new(|args: &BackwardArgs| {
            let mut g = args.upstream.clone();
            g.zip_mut_with(args.parents[0], |gi, &xi| {
                if xi <= 0.0 {
                    *gi = 0.0;
                }
            });
            vec![g]
        })), false)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(stable_sigmoid);
        self.push(v, vec![x], Some(Box::new(|args: &BackwardArgs| {
            let mut g = args.upstream.clone();
            g.zip_mut_with(args.output, |gi, &yi| *gi *= yi * (1.0 - yi));
            vec![g]
        })), false)
    }

    /// Natural logarithm; inputs must be strictly positive.
    pub fn ln(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(f64::ln);
        self.push(v, vec![x], Some(Box::new(|args: &BackwardArgs| {
            vec![args.upstream / args.parents[0]]
        })), false)
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(f64::sqrt);
        self.push(v, vec![x], Some(Box::new(|args: &BackwardArgs| {
            let mut g = args.upstream.clone();
            g.zip_mut_with(args.output, |gi, &yi| *gi *= 0.5 / yi);
            vec![g]
        })), false)
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(f64::abs);
        self.push(v, vec![x], Some(Box::new(|args: &BackwardArgs| {
            let mut g = args.upstream.clone();
            g.zip_mut_with(args.parents[0], |gi, &xi| *gi *= sign(xi));
            vec![g]
        })), false)
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> TensorId {
        let v = self.value(x).mapv(|t| t.clamp(lo, hi));
        self.push(v, vec![x], Some(Box::new(move |args: &BackwardArgs| {
            let mut g = args.upstream.clone();
            g.zip_mut_with(args.parents[0], |gi, &xi| {
                if xi <= lo || xi >= hi {
                    *gi = 0.0;
                }
            });
            vec![g]
        })), false)
    }

    pub fn clamp_min(&mut self, x: TensorId, lo: f64) -> TensorId {
        self.clamp(x, lo, f64::INFINITY)
    }

    // -- broadcasts ----------------------------------------------------------

    /// `x - s` where `s` is a single-element tensor broadcast over `x`.
    pub fn sub_bcast(&mut self, x: TensorId, s: TensorId) -> TensorId {
        let sv = self.scalar(s);
        let v = self.value(x).mapv(|t| t - sv);
        self.push(v, vec![x, s], Some(Box::new(|args: &BackwardArgs| {
            let gs = -args.upstream.sum();
            vec![
                args.upstream.clone(),
                ArrayD::from_elem(args.parents[1].raw_dim(), gs),
            ]
        })), false)
    }

    /// `x / s` where `s` is a single-element tensor broadcast over `x`.
    pub fn div_bcast(&mut self, x: TensorId, s: TensorId) -> TensorId {
        let sv = self.scalar(s);
        let v = self.value(x).mapv(|t| t / sv);
        self.push(v, vec![x, s], Some(Box::new(|args: &BackwardArgs| {
            let sv = *args.parents[1].iter().next().unwrap();
            let gx = args.upstream.mapv(|g| g / sv);
            let gs = -(args.upstream * args.parents[0]).sum() / (sv * sv);
            vec![gx, ArrayD::from_elem(args.parents[1].raw_dim(), gs)]
        })), false)
    }

    /// Multiply by a vector broadcast along `axis`: `y[.., i, ..] = x[.., i, ..] * v[i]`.
    pub fn mul_axis(&mut self, x: TensorId, v: TensorId, axis: usize) -> TensorId {
        let vv = self.value(v).clone();
        assert_eq!(vv.len(), self.value(x).shape()[axis], "mul_axis length mismatch");
        let mut out = self.value(x).clone();
        for (i, mut sub) in out.axis_iter_mut(Axis(axis)).enumerate() {
            let c = vv[[i]];
            sub.mapv_inplace(|t| t * c);
        }
        self.push(out, vec![x, v], Some(Box::new(move |args: &BackwardArgs| {
            let mut gx = args.upstream.clone();
            for (i, mut sub) in gx.axis_iter_mut(Axis(axis)).enumerate() {
                let c = args.parents[1][[i]];
                sub.mapv_inplace(|t| t * c);
            }
            let mut gv = ArrayD::zeros(args.parents[1].raw_dim());
            for i in 0..gv.len() {
                let gslab = args.upstream.index_axis(Axis(axis), i);
                let xslab = args.parents[0].index_axis(Axis(axis), i);
                gv[[i]] = (&gslab * &xslab).sum();
            }
            vec![gx, gv]
        })), false)
    }

    /// Add a vector broadcast along `axis`: `y[.., i, ..] = x[.., i, ..] + v[i]`.
    pub fn add_axis(&mut self, x: TensorId, v: TensorId, axis: usize) -> TensorId {
        let vv = self.value(v).clone();
        assert_eq!(vv.len(), self.value(x).shape()[axis], "add_axis length mismatch");
        let mut out = self.value(x).clone();
        for (i, mut sub) in out.axis_iter_mut(Axis(axis)).enumerate() {
            let c = vv[[i]];
            sub.mapv_inplace(|t| t + c);
        }
        self.push(out, vec![x, v], Some(Box::new(move |args: &BackwardArgs| {
            let mut gv = ArrayD::zeros(args.parents[1].raw_dim());
            for i in 0..gv.len() {
                gv[[i]] = args.upstream.index_axis(Axis(axis), i).sum();
            }
            vec![args.upstream.clone(), gv]
        })), false)
    }

    // -- matrix products -----------------------------------------------------

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = as2(self.value(a)).dot(&as2(self.value(b))).into_dyn();
        self.push(v, vec![a, b], Some(Box::new(|args: &BackwardArgs| {
            let g = as2(args.upstream);
            let ga = g.dot(&as2(args.parents[1]).t()).into_dyn();
            let gb = as2(args.parents[0]).t().dot(&g).into_dyn();
            vec![ga, gb]
        })), false)
    }

    /// `a (m×k) · b (n×k)ᵀ`.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = as2(self.value(a)).dot(&as2(self.value(b)).t()).into_dyn();
        self.push(v, vec![a, b], Some(Box::new(|args: &BackwardArgs| {
            let g = as2(args.upstream);
            let ga = g.dot(&as2(args.parents[1])).into_dyn();
            let gb = g.t().dot(&as2(args.parents[0])).into_dyn();
            vec![ga, gb]
        })), false)
    }

    /// Row-broadcast bias: `x (r×c) + b (c)`.
    pub fn add_bias_row(&mut self, x: TensorId, b: TensorId) -> TensorId {
        let xv = as2(self.value(x)).to_owned();
        let bv = self.value(b).view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
        let v = (&xv + &bv).into_dyn();
        self.push(v, vec![x, b], Some(Box::new(|args: &BackwardArgs| {
            let g = as2(args.upstream);
            vec![args.upstream.clone(), g.sum_axis(Axis(0)).into_dyn()]
        })), false)
    }

    // -- shape manipulation --------------------------------------------------

    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> TensorId {
        let v = as2(self.value(x)).slice(s![.., start..end]).to_owned().into_dyn();
        self.push(v, vec![x], Some(Box::new(move |args: &BackwardArgs| {
            let mut g = ArrayD::zeros(args.parents[0].raw_dim());
            {
                let mut g2 = g.view_mut().into_dimensionality::<Ix2>().unwrap();
                g2.slice_mut(s![.., start..end]).assign(&as2(args.upstream));
            }
            vec![g]
        })), false)
    }

    pub fn concat_cols(&mut self, xs: &[TensorId]) -> TensorId {
        assert!(!xs.is_empty());
        let views: Vec<ArrayView2<f64>> = xs.iter().map(|&x| as2(self.value(x))).collect();
        let widths: Vec<usize> = views.iter().map(|v| v.ncols()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols shape mismatch").into_dyn();
        self.push(v, xs.to_vec(), Some(Box::new(move |args: &BackwardArgs| {
            let g = as2(args.upstream);
            let mut out = Vec::with_capacity(widths.len());
            let mut at = 0;
            for &w in &widths {
                out.push(g.slice(s![.., at..at + w]).to_owned().into_dyn());
                at += w;
            }
            out
        })), false)
    }

    pub fn permute(&mut self, x: TensorId, axes: &[usize]) -> TensorId {
        let axes_v = axes.to_vec();
        let v = self
            .value(x)
            .view()
            .permuted_axes(axes_v.as_slice())
            .as_standard_layout()
            .to_owned();
        let mut inv = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        self.push(v, vec![x], Some(Box::new(move |args: &BackwardArgs| {
            vec![args
                .upstream
                .view()
                .permuted_axes(inv.as_slice())
                .as_standard_layout()
                .to_owned()]
        })), false)
    }

    /// Reshape to `shape` (same number of elements, row-major order kept).
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        let v = self
            .value(x)
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(ndarray::IxDyn(shape))
            .expect("reshape element count mismatch");
        self.push(v, vec![x], Some(Box::new(|args: &BackwardArgs| {
            vec![args
                .upstream
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order(args.parents[0].raw_dim())
                .unwrap()]
        })), false)
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum_axis(&mut self, x: TensorId, axis: usize) -> TensorId {
        let v = self.value(x).sum_axis(Axis(axis));
        self.push(v, vec![x], Some(Box::new(move |args: &BackwardArgs| {
            let g = args
                .upstream
                .view()
                .insert_axis(Axis(axis))
                .broadcast(args.parents[0].raw_dim())
                .unwrap()
                .to_owned();
            vec![g]
        })), false)
    }

    pub fn mean_axis(&mut self, x: TensorId, axis: usize) -> TensorId {
        let n = self.value(x).shape()[axis] as f64;
        let s = self.sum_axis(x, axis);
        self.affine(s, 1.0 / n, 0.0)
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.value(x).len() as f64;
        let m = self.value(x).sum() / n;
        let v = ArrayD::from_elem(ndarray::IxDyn(&[]), m);
        self.push(v, vec![x], Some(Box::new(move |args: &BackwardArgs| {
            let g = args.upstream.iter().next().copied().unwrap() / n;
            vec![ArrayD::from_elem(args.parents[0].raw_dim(), g)]
        })), false)
    }

    // -- row softmax and layer norm ------------------------------------------

    /// Softmax over the last axis of a 2-D tensor; rows are valid
    /// probability vectors.
    pub fn softmax_rows(&mut self, x: TensorId) -> TensorId {
        let xv = as2(self.value(x));
        let mut v = xv.to_owned();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|t| (t - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|t| t / sum);
        }
        self.push(v.into_dyn(), vec![x], Some(Box::new(|args: &BackwardArgs| {
            let y = as2(args.output);
            let g = as2(args.upstream);
            let mut out = g.to_owned();
            for (mut orow, (grow, yrow)) in
                out.rows_mut().into_iter().zip(g.rows().into_iter().zip(y.rows()))
            {
                let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                for (o, (&gi, &yi)) in orow.iter_mut().zip(grow.iter().zip(yrow.iter())) {
                    *o = yi * (gi - dot);
                }
            }
            vec![out.into_dyn()]
        })), false)
    }

    /// Layer normalization along `axis` with per-lane affine parameters
    /// `gamma`/`beta` (1-D, length = size of `axis`). Uses biased variance.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        axis: usize,
        eps: f64,
    ) -> TensorId {
        let xv = self.value(x);
        let c = xv.shape()[axis];
        assert_eq!(self.value(gamma).len(), c, "gamma length mismatch");
        assert_eq!(self.value(beta).len(), c, "beta length mismatch");
        let gv: Vec<f64> = self.value(gamma).iter().cloned().collect();
        let bv: Vec<f64> = self.value(beta).iter().cloned().collect();

        let mut v = xv.clone();
        for mut lane in v.lanes_mut(Axis(axis)) {
            let mean = lane.sum() / c as f64;
            let var = lane.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (i, t) in lane.iter_mut().enumerate() {
                *t = (*t - mean) * inv * gv[i] + bv[i];
            }
        }
        self.push(v, vec![x, gamma, beta], Some(Box::new(move |args: &BackwardArgs| {
            let xv = args.parents[0];
            let gammav = args.parents[1];
            let c = xv.shape()[axis];
            let cf = c as f64;
            let mut gx = ArrayD::zeros(xv.raw_dim());
            let mut ggamma = ArrayD::zeros(gammav.raw_dim());
            let mut gbeta = ArrayD::zeros(gammav.raw_dim());
            {
                let gg = ggamma.as_slice_mut().unwrap();
                let gb = gbeta.as_slice_mut().unwrap();
                let gvs: Vec<f64> = gammav.iter().cloned().collect();
                for ((xlane, glane), mut outlane) in xv
                    .lanes(Axis(axis))
                    .into_iter()
                    .zip(args.upstream.lanes(Axis(axis)))
                    .zip(gx.lanes_mut(Axis(axis)))
                {
                    let mean = xlane.sum() / cf;
                    let var =
                        xlane.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / cf;
                    let inv = 1.0 / (var + eps).sqrt();
                    // dyhat_i = g_i * gamma_i; dx from the standard LN backward.
                    let mut sum_dyhat = 0.0;
                    let mut sum_dyhat_xhat = 0.0;
                    let xhat: Vec<f64> =
                        xlane.iter().map(|&t| (t - mean) * inv).collect();
                    let dyhat: Vec<f64> = glane
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * gvs[i])
                        .collect();
                    for i in 0..c {
                        sum_dyhat += dyhat[i];
                        sum_dyhat_xhat += dyhat[i] * xhat[i];
                        gg[i] += glane[i] * xhat[i];
                        gb[i] += glane[i];
                    }
                    for (i, o) in outlane.iter_mut().enumerate() {
                        *o = inv
                            * (dyhat[i] - sum_dyhat / cf - xhat[i] * sum_dyhat_xhat / cf);
                    }
                }
            }
            vec![gx, ggamma, gbeta]
        })), false)
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

//! im2col-based convolutions and pooling.

use ndarray::{Array2, ArrayD, ArrayView2, ArrayView3, ArrayView4, Axis, Ix3, Ix4};

use super::tape::{BackwardArgs, Tape, TensorId};

fn out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= k, "kernel larger than padded input");
    (input + 2 * pad - k) / stride + 1
}

fn im2col2d(
    x: ArrayView3<'_, f64>,
    k: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    out: (usize, usize),
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (kh, kw) = k;
    let (oh, ow) = out;
    let mut cols = Array2::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                for oy in 0..oh {
                    let iy = (oy * stride.0 + i) as isize - pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride.1 + j) as isize - pad.1 as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im2d(
    cols: ArrayView2<'_, f64>,
    c: usize,
    hw: (usize, usize),
    k: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    out: (usize, usize),
) -> ArrayD<f64> {
    let (kh, kw) = k;
    let (oh, ow) = out;
    let mut x = ArrayD::zeros(ndarray::IxDyn(&[c, hw.0, hw.1]));
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                for oy in 0..oh {
                    let iy = (oy * stride.0 + i) as isize - pad.0 as isize;
                    if iy < 0 || iy >= hw.0 as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride.1 + j) as isize - pad.1 as isize;
                        if ix < 0 || ix >= hw.1 as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

fn im2col3d(
    x: ArrayView4<'_, f64>,
    k: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    out: (usize, usize, usize),
) -> Array2<f64> {
    let (c, d, h, w) = x.dim();
    let (kd, kh, kw) = k;
    let (od, oh, ow) = out;
    let mut cols = Array2::zeros((c * kd * kh * kw, od * oh * ow));
    for ci in 0..c {
        for t in 0..kd {
            for i in 0..kh {
                for j in 0..kw {
                    let row = ((ci * kd + t) * kh + i) * kw + j;
                    for oz in 0..od {
                        let iz = (oz * stride.0 + t) as isize - pad.0 as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride.1 + i) as isize - pad.1 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride.2 + j) as isize - pad.2 as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                cols[[row, (oz * oh + oy) * ow + ox]] =
                                    x[[ci, iz as usize, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im3d(
    cols: ArrayView2<'_, f64>,
    c: usize,
    dhw: (usize, usize, usize),
    k: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    out: (usize, usize, usize),
) -> ArrayD<f64> {
    let (kd, kh, kw) = k;
    let (od, oh, ow) = out;
    let mut x = ArrayD::zeros(ndarray::IxDyn(&[c, dhw.0, dhw.1, dhw.2]));
    for ci in 0..c {
        for t in 0..kd {
            for i in 0..kh {
                for j in 0..kw {
                    let row = ((ci * kd + t) * kh + i) * kw + j;
                    for oz in 0..od {
                        let iz = (oz * stride.0 + t) as isize - pad.0 as isize;
                        if iz < 0 || iz >= dhw.0 as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride.1 + i) as isize - pad.1 as isize;
                            if iy < 0 || iy >= dhw.1 as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride.2 + j) as isize - pad.2 as isize;
                                if ix < 0 || ix >= dhw.2 as isize {
                                    continue;
                                }
                                x[[ci, iz as usize, iy as usize, ix as usize]] +=
                                    cols[[row, (oz * oh + oy) * ow + ox]];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl Tape {
    /// 2-D convolution: `x (C,H,W)` with `w (O,C,kh,kw)` and bias `b (O)`.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> TensorId {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("conv2d input (C,H,W)");
        let wv = self.value(w).view().into_dimensionality::<Ix4>().expect("conv2d weight (O,C,kh,kw)");
        let (o, cin, kh, kw) = wv.dim();
        let (c, h, wd) = xv.dim();
        assert_eq!(c, cin, "conv2d channel mismatch");
        let oh = out_len(h, kh, stride.0, pad.0);
        let ow = out_len(wd, kw, stride.1, pad.1);

        let cols = im2col2d(xv, (kh, kw), stride, pad, (oh, ow));
        let w_mat = wv.into_shape_with_order((o, cin * kh * kw)).expect("contiguous weight");
        let mut out_mat = w_mat.dot(&cols);
        let bv = self.value(b);
        for (mut row, &bias) in out_mat.rows_mut().into_iter().zip(bv.iter()) {
            row.mapv_inplace(|t| t + bias);
        }
        let out = out_mat.into_shape_with_order((o, oh, ow)).unwrap().into_dyn();

        self.push(out, vec![x, w, b], Some(Box::new(move |args: &BackwardArgs| {
            let xv = args.parents[0].view().into_dimensionality::<Ix3>().unwrap();
            let wv = args.parents[1].view().into_dimensionality::<Ix4>().unwrap();
            let (o, cin, kh, kw) = wv.dim();
            let (c, h, wd) = xv.dim();
            let g_mat = args
                .upstream
                .view()
                .into_dimensionality::<Ix3>()
                .unwrap()
                .into_shape_with_order((o, oh * ow))
                .unwrap()
                .to_owned();
            let cols = im2col2d(xv, (kh, kw), stride, pad, (oh, ow));
            let gb = g_mat.sum_axis(Axis(1)).into_dyn();
            let gw = g_mat
                .dot(&cols.t())
                .into_shape_with_order((o, cin, kh, kw))
                .unwrap()
                .into_dyn();
            let w_mat = wv.into_shape_with_order((o, cin * kh * kw)).unwrap();
            let gcols = w_mat.t().dot(&g_mat);
            let gx = col2im2d(gcols.view(), c, (h, wd), (kh, kw), stride, pad, (oh, ow));
            vec![gx, gw, gb]
        })), false)
    }

    /// 3-D convolution: `x (C,D,H,W)` with `w (O,C,kd,kh,kw)` and bias `b (O)`.
    pub fn conv3d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> TensorId {
        let xv = self.value(x).view().into_dimensionality::<Ix4>().expect("conv3d input (C,D,H,W)");
        let wv = self
            .value(w)
            .view()
            .into_dimensionality::<ndarray::Ix5>()
            .expect("conv3d weight (O,C,kd,kh,kw)");
        let (o, cin, kd, kh, kw) = wv.dim();
        let (c, d, h, wd) = xv.dim();
        assert_eq!(c, cin, "conv3d channel mismatch");
        let od = out_len(d, kd, stride.0, pad.0);
        let oh = out_len(h, kh, stride.1, pad.1);
        let ow = out_len(wd, kw, stride.2, pad.2);

        let cols = im2col3d(xv, (kd, kh, kw), stride, pad, (od, oh, ow));
        let w_mat = wv.into_shape_with_order((o, cin * kd * kh * kw)).expect("contiguous weight");
        let mut out_mat = w_mat.dot(&cols);
        let bv = self.value(b);
        for (mut row, &bias) in out_mat.rows_mut().into_iter().zip(bv.iter()) {
            row.mapv_inplace(|t| t + bias);
        }
        let out = out_mat.into_shape_with_order((o, od, oh, ow)).unwrap().into_dyn();

        self.push(out, vec![x, w, b], Some(Box::new(move |args: &BackwardArgs| {
            let xv = args.parents[0].view().into_dimensionality::<Ix4>().unwrap();
            let wv = args.parents[1].view().into_dimensionality::<ndarray::Ix5>().unwrap();
            let (o, cin, kd, kh, kw) = wv.dim();
            let (c, d, h, wd) = xv.dim();
            let g_mat = args
                .upstream
                .view()
                .into_dimensionality::<Ix4>()
                .unwrap()
                .into_shape_with_order((o, od * oh * ow))
                .unwrap()
                .to_owned();
            let cols = im2col3d(xv, (kd, kh, kw), stride, pad, (od, oh, ow));
            let gb = g_mat.sum_axis(Axis(1)).into_dyn();
            let gw = g_mat
                .dot(&cols.t())
                .into_shape_with_order((o, cin, kd, kh, kw))
                .unwrap()
                .into_dyn();
            let w_mat = wv.into_shape_with_order((o, cin * kd * kh * kw)).unwrap();
            let gcols = w_mat.t().dot(&g_mat);
            let gx = col2im3d(
                gcols.view(),
                c,
                (d, h, wd),
                (kd, kh, kw),
                stride,
                pad,
                (od, oh, ow),
            );
            vec![gx, gw, gb]
        })), false)
    }

    /// Average pooling over the last two axes with square kernel `k` and
    /// stride `k` (non-overlapping, no padding).
    pub fn avg_pool_hw(&mut self, x: TensorId, k: usize) -> TensorId {
        let xv = self.value(x);
        let nd = xv.ndim();
        assert!(nd >= 2, "avg_pool_hw needs at least 2 axes");
        let h = xv.shape()[nd - 2];
        let w = xv.shape()[nd - 1];
        assert!(h >= k && w >= k, "pool kernel larger than input");
        let oh = h / k;
        let ow = w / k;
        let lead: usize = xv.shape()[..nd - 2].iter().product();

        let xs = xv.as_standard_layout();
        let flat = xs.as_slice().unwrap();
        let mut out_shape: Vec<usize> = xv.shape()[..nd - 2].to_vec();
        out_shape.push(oh);
        out_shape.push(ow);
        let mut out = ArrayD::zeros(ndarray::IxDyn(&out_shape));
        {
            let os = out.as_slice_mut().unwrap();
            let inv = 1.0 / (k * k) as f64;
            for l in 0..lead {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for i in 0..k {
                            for j in 0..k {
                                acc += flat[(l * h + oy * k + i) * w + ox * k + j];
                            }
                        }
                        os[(l * oh + oy) * ow + ox] = acc * inv;
                    }
                }
            }
        }
        self.push(out, vec![x], Some(Box::new(move |args: &BackwardArgs| {
            let nd = args.parents[0].ndim();
            let h = args.parents[0].shape()[nd - 2];
            let w = args.parents[0].shape()[nd - 1];
            let lead: usize = args.parents[0].shape()[..nd - 2].iter().product();
            let oh = h / k;
            let ow = w / k;
            let inv = 1.0 / (k * k) as f64;
            let mut gx = ArrayD::zeros(args.parents[0].raw_dim());
            {
                let gs = gx.as_slice_mut().unwrap();
                let us = args.upstream.as_standard_layout();
                let uf = us.as_slice().unwrap();
                for l in 0..lead {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = uf[(l * oh + oy) * ow + ox] * inv;
                            for i in 0..k {
                                for j in 0..k {
                                    gs[(l * h + oy * k + i) * w + ox * k + j] += g;
                                }
                            }
                        }
                    }
                }
            }
            vec![gx]
        })), false)
    }
}

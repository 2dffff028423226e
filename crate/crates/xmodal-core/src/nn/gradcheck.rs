//! Finite-difference checks for every differentiable op.
//!
//! Each check builds `loss = mean(c * op(inputs))` with fixed pseudo-random
//! coefficients `c`, compares the tape gradient of every input against a
//! central finite difference, and requires the worst relative error to stay
//! tiny. Inputs are chosen away from kinks (ReLU/abs/clamp boundaries).

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, TensorId};

type Build = dyn Fn(&mut Tape, &[TensorId]) -> TensorId;

fn coeffs(shape: &[usize]) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).unwrap()
}

fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).unwrap()
}

fn eval(inputs: &[ArrayD<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect();
    let y = build(&mut tape, &ids);
    let c = tape.constant(coeffs(tape.value(y).shape()));
    let prod = tape.mul(y, c);
    let loss = tape.mean_all(prod);
    tape.scalar(loss)
}

/// Check analytic gradients of `build` at `inputs` against central
/// differences. Panics with a diagnostic when the worst relative error
/// exceeds `tol`.
pub fn check(name: &str, inputs: &[ArrayD<f64>], build: &Build, tol: f64) {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect();
    let y = build(&mut tape, &ids);
    let c = tape.constant(coeffs(tape.value(y).shape()));
    let prod = tape.mul(y, c);
    let loss = tape.mean_all(prod);
    let grads = tape.backward(loss);

    let eps = 1e-5;
    for (k, x0) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[k])
            .unwrap_or_else(|| panic!("{name}: input {k} got no gradient"));
        let mut worst = 0.0f64;
        let mut worst_at = 0usize;
        let flat: Vec<f64> = x0.iter().cloned().collect();
        for i in 0..flat.len() {
            let mut xp = inputs.to_vec();
            let mut xm = inputs.to_vec();
            {
                let sp = xp[k].as_slice_mut().unwrap();
                sp[i] += eps;
                let sm = xm[k].as_slice_mut().unwrap();
                sm[i] -= eps;
            }
            let num = (eval(&xp, build) - eval(&xm, build)) / (2.0 * eps);
            let ana = analytic.as_slice().unwrap()[i];
            let rel = (ana - num).abs() / (ana.abs() + num.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                worst_at = i;
            }
        }
        assert!(
            worst <= tol,
            "{name}: input {k} worst rel err {worst:.3e} at flat index {worst_at} (tol {tol:.1e})"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-6;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn elementwise_binary_ops() {
        let mut r = rng();
        let a = rand_arr(&mut r, &[3, 4], -2.0, 2.0);
        let b = rand_arr(&mut r, &[3, 4], 0.5, 2.0); // positive: safe divisor
        check("add", &[a.clone(), b.clone()], &|t, ids| t.add(ids[0], ids[1]), TOL);
        check("sub", &[a.clone(), b.clone()], &|t, ids| t.sub(ids[0], ids[1]), TOL);
        check("mul", &[a.clone(), b.clone()], &|t, ids| t.mul(ids[0], ids[1]), TOL);
        check("div", &[a, b], &|t, ids| t.div(ids[0], ids[1]), TOL);
    }

    #[test]
    fn elementwise_unary_ops() {
        let mut r = rng();
        let a = rand_arr(&mut r, &[2, 5], -2.0, 2.0);
        let pos = rand_arr(&mut r, &[2, 5], 0.2, 3.0);
        // Keep |x| > 0.1 so finite differences never cross the kinks.
        let offkink = a.mapv(|v| if v.abs() < 0.1 { 0.5 } else { v });
        check("affine", &[a.clone()], &|t, ids| t.affine(ids[0], 1.7, -0.3), TOL);
        check("neg", &[a.clone()], &|t, ids| t.neg(ids[0]), TOL);
        check("relu", &[offkink.clone()], &|t, ids| t.relu(ids[0]), TOL);
        check("sigmoid", &[a.clone()], &|t, ids| t.sigmoid(ids[0]), TOL);
        check("ln", &[pos.clone()], &|t, ids| t.ln(ids[0]), TOL);
        check("sqrt", &[pos], &|t, ids| t.sqrt(ids[0]), TOL);
        check("abs", &[offkink.clone()], &|t, ids| t.abs(ids[0]), TOL);
        // Clamp bounds chosen so no input sits within eps of a bound.
        check("clamp", &[offkink], &|t, ids| t.clamp(ids[0], -1.95, 1.95), TOL);
    }

    #[test]
    fn matrix_ops() {
        let mut r = rng();
        let a = rand_arr(&mut r, &[3, 4], -1.0, 1.0);
        let b = rand_arr(&mut r, &[4, 2], -1.0, 1.0);
        let bt = rand_arr(&mut r, &[2, 4], -1.0, 1.0);
        let bias = rand_arr(&mut r, &[4], -1.0, 1.0);
        check("matmul", &[a.clone(), b], &|t, ids| t.matmul(ids[0], ids[1]), TOL);
        check("matmul_nt", &[a.clone(), bt], &|t, ids| t.matmul_nt(ids[0], ids[1]), TOL);
        check("add_bias_row", &[a, bias], &|t, ids| t.add_bias_row(ids[0], ids[1]), TOL);
    }

    #[test]
    fn shape_ops() {
        let mut r = rng();
        let a = rand_arr(&mut r, &[3, 6], -1.0, 1.0);
        let b = rand_arr(&mut r, &[3, 2], -1.0, 1.0);
        let cube = rand_arr(&mut r, &[2, 3, 4], -1.0, 1.0);
        check("slice_cols", &[a.clone()], &|t, ids| t.slice_cols(ids[0], 1, 4), TOL);
        check(
            "concat_cols",
            &[a.clone(), b],
            &|t, ids| t.concat_cols(&[ids[0], ids[1]]),
            TOL,
        );
        check("permute", &[cube.clone()], &|t, ids| t.permute(ids[0], &[2, 0, 1]), TOL);
        check("reshape", &[cube.clone()], &|t, ids| t.reshape(ids[0], &[4, 6]), TOL);
    }

    #[test]
    fn reduction_ops() {
        let mut r = rng();
        let cube = rand_arr(&mut r, &[2, 3, 4], -1.0, 1.0);
        check("sum_axis", &[cube.clone()], &|t, ids| t.sum_axis(ids[0], 1), TOL);
        check("mean_axis", &[cube.clone()], &|t, ids| t.mean_axis(ids[0], 2), TOL);
        check("mean_all", &[cube], &|t, ids| t.mean_all(ids[0]), TOL);
    }

    #[test]
    fn broadcast_ops() {
        let mut r = rng();
        let x = rand_arr(&mut r, &[3, 4], -1.0, 1.0);
        let s = rand_arr(&mut r, &[], 0.5, 1.5);
        let v = rand_arr(&mut r, &[3], -1.0, 1.0);
        check("sub_bcast", &[x.clone(), s.clone()], &|t, ids| t.sub_bcast(ids[0], ids[1]), TOL);
        check("div_bcast", &[x.clone(), s], &|t, ids| t.div_bcast(ids[0], ids[1]), TOL);
        check("mul_axis", &[x.clone(), v.clone()], &|t, ids| t.mul_axis(ids[0], ids[1], 0), TOL);
        check("add_axis", &[x, v], &|t, ids| t.add_axis(ids[0], ids[1], 0), TOL);
    }

    #[test]
    fn softmax_and_layer_norm() {
        let mut r = rng();
        let x = rand_arr(&mut r, &[4, 5], -2.0, 2.0);
        let gamma = rand_arr(&mut r, &[5], 0.5, 1.5);
        let beta = rand_arr(&mut r, &[5], -0.5, 0.5);
        check("softmax_rows", &[x.clone()], &|t, ids| t.softmax_rows(ids[0]), TOL);
        check(
            "layer_norm_axis1",
            &[x.clone(), gamma.clone(), beta.clone()],
            &|t, ids| t.layer_norm(ids[0], ids[1], ids[2], 1, 1e-5),
            TOL,
        );
        let cube = rand_arr(&mut r, &[3, 2, 4], -1.0, 1.0);
        let g0 = rand_arr(&mut r, &[3], 0.5, 1.5);
        let b0 = rand_arr(&mut r, &[3], -0.5, 0.5);
        check(
            "layer_norm_axis0_3d",
            &[cube, g0, b0],
            &|t, ids| t.layer_norm(ids[0], ids[1], ids[2], 0, 1e-5),
            TOL,
        );
    }

    #[test]
    fn conv2d_grad() {
        let mut r = rng();
        let x = rand_arr(&mut r, &[2, 5, 6], -1.0, 1.0);
        let w = rand_arr(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
        let b = rand_arr(&mut r, &[3], -0.5, 0.5);
        check(
            "conv2d_s1p1",
            &[x.clone(), w.clone(), b.clone()],
            &|t, ids| t.conv2d(ids[0], ids[1], ids[2], (1, 1), (1, 1)),
            TOL,
        );
        check(
            "conv2d_s2p1",
            &[x, w, b],
            &|t, ids| t.conv2d(ids[0], ids[1], ids[2], (2, 2), (1, 1)),
            TOL,
        );
    }

    #[test]
    fn conv3d_grad() {
        let mut r = rng();
        let x = rand_arr(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
        let w = rand_arr(&mut r, &[2, 2, 3, 3, 3], -0.5, 0.5);
        let b = rand_arr(&mut r, &[2], -0.5, 0.5);
        check(
            "conv3d_s1p1",
            &[x.clone(), w.clone(), b.clone()],
            &|t, ids| t.conv3d(ids[0], ids[1], ids[2], (1, 1, 1), (1, 1, 1)),
            TOL,
        );
        // Frame-wise 2-D kernel (depth 1) with spatial stride, as used by the
        // visual encoder blocks.
        let wflat = rand_arr(&mut r, &[2, 2, 1, 3, 3], -0.5, 0.5);
        let b2 = rand_arr(&mut r, &[2], -0.5, 0.5);
        check(
            "conv3d_kd1_s122",
            &[x, wflat, b2],
            &|t, ids| t.conv3d(ids[0], ids[1], ids[2], (1, 2, 2), (0, 1, 1)),
            TOL,
        );
    }

    #[test]
    fn avg_pool_grad() {
        let mut r = rng();
        let x = rand_arr(&mut r, &[2, 6, 6], -1.0, 1.0);
        check("avg_pool_k2", &[x.clone()], &|t, ids| t.avg_pool_hw(ids[0], 2), TOL);
        check("avg_pool_k3", &[x], &|t, ids| t.avg_pool_hw(ids[0], 3), TOL);
    }
}

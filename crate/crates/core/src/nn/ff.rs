//! Feedforward estimator: `depth` SELU layers with dropout after each, then a
//! linear head.

use ndarray::{Array2, ArrayView2, Axis};

use super::scalar::Scalar;
use super::{selu, selu_grad, GradBuf, Weights};

pub(crate) struct FfCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    masks: Option<Vec<Array2<T>>>,
    top: Array2<T>,
}

/// `x` may have a single row while `masks` have `B` rows; the first layer is
/// then evaluated once and broadcast.
pub(crate) fn forward<T: Scalar>(
    w: &Weights<'_, T>,
    depth: usize,
    x: ArrayView2<'_, T>,
    masks: Option<&[Array2<T>]>,
    keep_cache: bool,
) -> (Array2<T>, Option<FfCache<T>>) {
    let mut h = x.to_owned();
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    for l in 0..depth {
        let mut z = h.dot(&w.get(2 * l));
        z += &w.get(2 * l + 1);
        let a = z.mapv(|v| T::of(selu(v.f64())));
        let next = match masks {
            Some(m) => &a * &m[l],
            None => a,
        };
        if keep_cache {
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        } else {
            h = next;
        }
    }
    let mut out = h.dot(&w.get(2 * depth));
    out += &w.get(2 * depth + 1);
    let cache = keep_cache.then(|| FfCache { inputs, pre, masks: masks.map(<[_]>::to_vec), top: h });
    (out, cache)
}

pub(crate) fn backward(w: &Weights<'_, f64>, depth: usize, cache: &FfCache<f64>, d_out: ArrayView2<'_, f64>, g: &mut GradBuf) {
    g.set(2 * depth, &cache.top.t().dot(&d_out));
    g.set(2 * depth + 1, &d_out.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let mut dh = d_out.dot(&w.get(2 * depth).t());
    for l in (0..depth).rev() {
        let mut dz = match &cache.masks {
            Some(m) => &dh * &m[l],
            None => dh,
        };
        dz.zip_mut_with(&cache.pre[l], |d, &z| *d *= selu_grad(z));
        g.set(2 * l, &cache.inputs[l].t().dot(&dz));
        g.set(2 * l + 1, &dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
        dh = if l > 0 { dz.dot(&w.get(2 * l).t()) } else { dz };
    }
}

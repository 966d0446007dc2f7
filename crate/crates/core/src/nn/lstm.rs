//! Stacked LSTM estimator unrolled over a fixed window.
//!
//! Inputs are step-major: rows `t*B .. (t+1)*B` hold step `t` of every
//! sequence in the batch. Gate blocks are ordered input, forget, cell, output.
//! Dropout multiplies each layer's output sequence (the same mask at every
//! step) and never touches the recurrent connection.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::scalar::Scalar;
use super::{GradBuf, Weights};
use crate::dataset::SEQ_LEN;

pub(crate) struct LayerCache<T> {
    xin: Array2<T>,
    gates: Array2<T>,
    c: Array2<T>,
    tanh_c: Array2<T>,
    h: Array2<T>,
}

pub(crate) struct LstmCache<T> {
    layers: Vec<LayerCache<T>>,
    masks: Option<Vec<Array2<T>>>,
    top: Array2<T>,
}

/// Multiplies every step block of `h` (rows `steps * rows`) by `mask`
/// (`batch` rows); a single-row `h` block is broadcast over the batch.
fn apply_mask<T: Scalar>(h: &Array2<T>, rows: usize, mask: &Array2<T>) -> Array2<T> {
    let batch = mask.nrows();
    let width = h.ncols();
    let mut y = Array2::zeros((SEQ_LEN * batch, width));
    for t in 0..SEQ_LEN {
        let src = h.slice(s![t * rows..(t + 1) * rows, ..]);
        let mut dst = y.slice_mut(s![t * batch..(t + 1) * batch, ..]);
        dst.assign(&(&src * mask));
    }
    y
}

pub(crate) fn forward<T: Scalar>(
    w: &Weights<'_, T>,
    depth: usize,
    width: usize,
    x: ArrayView2<'_, T>,
    masks: Option<&[Array2<T>]>,
    keep_cache: bool,
) -> (Array2<T>, Option<LstmCache<T>>) {
    let hw = width;
    let mut input = x.to_owned();
    let mut rows = x.nrows() / SEQ_LEN;
    let mut layers = Vec::new();
    for l in 0..depth {
        let (wx, wh, b) = (w.get(3 * l), w.get(3 * l + 1), w.get(3 * l + 2));
        let mut zx = input.dot(&wx);
        zx += &b;
        let cache_rows = if keep_cache { SEQ_LEN * rows } else { 0 };
        let mut gates = Array2::<T>::zeros((cache_rows, 4 * hw));
        let mut c_all = Array2::<T>::zeros((cache_rows, hw));
        let mut tc_all = Array2::<T>::zeros((cache_rows, hw));
        let mut h_all = Array2::<T>::zeros((SEQ_LEN * rows, hw));
        let mut h_prev = Array2::<T>::zeros((rows, hw));
        let mut c_prev = Array2::<T>::zeros((rows, hw));
        let mut z = Array2::<T>::zeros((rows, 4 * hw));
        for t in 0..SEQ_LEN {
            let block = t * rows..(t + 1) * rows;
            z.assign(&zx.slice(s![block.clone(), ..]));
            if t > 0 {
                general_mat_mul(T::one(), &h_prev, &wh, T::one(), &mut z);
            }
            {
                let zs = z.as_slice_mut().expect("contiguous");
                let cp = c_prev.as_slice_mut().expect("contiguous");
                let hp = h_prev.as_slice_mut().expect("contiguous");
                for ((zr, cr), hr) in zs.chunks_exact_mut(4 * hw).zip(cp.chunks_exact_mut(hw)).zip(hp.chunks_exact_mut(hw)) {
                    for v in &mut zr[..2 * hw] {
                        *v = v.sigmoid();
                    }
                    for v in &mut zr[2 * hw..3 * hw] {
                        *v = v.tanh_act();
                    }
                    for v in &mut zr[3 * hw..] {
                        *v = v.sigmoid();
                    }
                    let (i, rest) = zr.split_at(hw);
                    let (f, rest) = rest.split_at(hw);
                    let (g, o) = rest.split_at(hw);
                    for (((c, &i), &f), &g) in cr.iter_mut().zip(i).zip(f).zip(g) {
                        *c = f * *c + i * g;
                    }
                    for ((h, &c), &o) in hr.iter_mut().zip(cr.iter()).zip(o) {
                        *h = o * c.tanh_act();
                    }
                }
            }
            h_all.slice_mut(s![block.clone(), ..]).assign(&h_prev);
            if keep_cache {
                gates.slice_mut(s![block.clone(), ..]).assign(&z);
                c_all.slice_mut(s![block.clone(), ..]).assign(&c_prev);
                tc_all.slice_mut(s![block, ..]).assign(&c_prev.mapv(|c| c.tanh_act()));
            }
        }
        let next = match (masks, keep_cache) {
            (Some(m), _) => apply_mask(&h_all, rows, &m[l]),
            (None, true) => h_all.clone(),
            (None, false) => std::mem::replace(&mut h_all, Array2::zeros((0, hw))),
        };
        if masks.is_some() {
            rows = next.nrows() / SEQ_LEN;
        }
        if keep_cache {
            layers.push(LayerCache { xin: input, gates, c: c_all, tanh_c: tc_all, h: h_all });
        }
        input = next;
    }
    let top = input.slice(s![(SEQ_LEN - 1) * rows.., ..]).to_owned();
    let mut out = top.dot(&w.get(3 * depth));
    out += &w.get(3 * depth + 1);
    let cache = keep_cache.then(|| LstmCache { layers, masks: masks.map(<[_]>::to_vec), top });
    (out, cache)
}

/// Backpropagation through time. Assumes the forward pass ran with one input
/// row per sequence (no broadcast).
pub(crate) fn backward(
    w: &Weights<'_, f64>,
    depth: usize,
    width: usize,
    cache: &LstmCache<f64>,
    d_out: ArrayView2<'_, f64>,
    g: &mut GradBuf,
) {
    let hw = width;
    let batch = d_out.nrows();
    g.set(3 * depth, &cache.top.t().dot(&d_out));
    g.set(3 * depth + 1, &d_out.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let mut d_y = Array2::<f64>::zeros((SEQ_LEN * batch, hw));
    d_y.slice_mut(s![(SEQ_LEN - 1) * batch.., ..]).assign(&d_out.dot(&w.get(3 * depth).t()));

    for l in (0..depth).rev() {
        let lc = &cache.layers[l];
        let d_h_out = match &cache.masks {
            Some(m) => apply_mask(&d_y, batch, &m[l]),
            None => d_y,
        };
        let wh = w.get(3 * l + 1);
        let mut dz = Array2::<f64>::zeros((SEQ_LEN * batch, 4 * hw));
        let mut dh_next = Array2::<f64>::zeros((batch, hw));
        let mut dc_next = Array2::<f64>::zeros((batch, hw));
        for t in (0..SEQ_LEN).rev() {
            let base = t * batch;
            {
                let dho = d_h_out.as_slice().expect("contiguous");
                let gates = lc.gates.as_slice().expect("contiguous");
                let c = lc.c.as_slice().expect("contiguous");
                let tc = lc.tanh_c.as_slice().expect("contiguous");
                let dzs = dz.as_slice_mut().expect("contiguous");
                let dhn = dh_next.as_slice().expect("contiguous");
                let dcn = dc_next.as_slice_mut().expect("contiguous");
                for r in 0..batch {
                    let row = base + r;
                    for j in 0..hw {
                        let gi = row * 4 * hw;
                        let (i, f, gg, o) =
                            (gates[gi + j], gates[gi + hw + j], gates[gi + 2 * hw + j], gates[gi + 3 * hw + j]);
                        let c_prev = if t > 0 { c[(row - batch) * hw + j] } else { 0.0 };
                        let tcv = tc[row * hw + j];
                        let dh = dho[row * hw + j] + dhn[r * hw + j];
                        let d_o = dh * tcv;
                        let dc = dcn[r * hw + j] + dh * o * (1.0 - tcv * tcv);
                        dcn[r * hw + j] = dc * f;
                        dzs[gi + j] = dc * gg * i * (1.0 - i);
                        dzs[gi + hw + j] = dc * c_prev * f * (1.0 - f);
                        dzs[gi + 2 * hw + j] = dc * i * (1.0 - gg * gg);
                        dzs[gi + 3 * hw + j] = d_o * o * (1.0 - o);
                    }
                }
            }
            if t > 0 {
                dh_next = dz.slice(s![base..base + batch, ..]).dot(&wh.t());
            }
        }
        g.set(3 * l, &lc.xin.t().dot(&dz));
        g.set(3 * l + 2, &dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let mut h_prev = Array2::<f64>::zeros((SEQ_LEN * batch, hw));
        h_prev
            .slice_mut(s![batch.., ..])
            .assign(&lc.h.slice(s![..(SEQ_LEN - 1) * batch, ..]));
        g.set(3 * l + 1, &h_prev.t().dot(&dz));
        d_y = if l > 0 { dz.dot(&w.get(3 * l).t()) } else { Array2::zeros((0, 0)) };
    }
}

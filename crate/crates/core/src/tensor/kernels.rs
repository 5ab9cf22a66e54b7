//! Raw numeric kernels shared by forward and backward passes.
//!
//! Every kernel walks its accumulation loops in a fixed order so results are
//! bit-identical across runs and thread counts.

/// c[i,j] = sum_p a[i,p] * b[p,j]; a is m*k, b is k*n.
pub fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[i,j] = sum_p a[i,p] * b[j,p]; a is m*k, b is n*k (row-major).
pub fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * n + j] += s;
        }
    }
}

/// c[i,j] = sum_p a[p,i] * b[p,j]; a is k*m, b is k*n.
pub fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Zero-padded 2-D cross-correlation.
///
/// x: [b, cin, h, w], k: [cout, cin, kh, kw], out: [b, cout, oh, ow].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    k: &[f64],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, pad).expect("validated");
    let ow = conv_out_extent(w, kw, stride, pad).expect("validated");
    for bi in 0..b {
        for co in 0..cout {
            let out_plane = &mut out[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
            for ci in 0..cin {
                let x_plane = &x[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                let k_plane = &k[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                for r in 0..kh {
                    for c in 0..kw {
                        let wv = k_plane[r * kw + c];
                        if wv == 0.0 {
                            continue;
                        }
                        if stride == 1 {
                            // iw = owi + c - pad must lie in [0, w)
                            let lo = pad.saturating_sub(c);
                            let hi = (w + pad - c).min(ow);
                            for ohi in 0..oh {
                                let ih = ohi + r;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                let ih = ih - pad;
                                if lo >= hi {
                                    continue;
                                }
                                let orow = &mut out_plane[ohi * ow + lo..ohi * ow + hi];
                                let xrow = &x_plane[ih * w + lo + c - pad..ih * w + hi + c - pad];
                                for (o, &xv) in orow.iter_mut().zip(xrow) {
                                    *o += wv * xv;
                                }
                            }
                        } else {
                            for ohi in 0..oh {
                                let ih = ohi * stride + r;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                let ih = ih - pad;
                                for owi in 0..ow {
                                    let iw = owi * stride + c;
                                    if iw < pad || iw - pad >= w {
                                        continue;
                                    }
                                    out_plane[ohi * ow + owi] += wv * x_plane[ih * w + iw - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient with respect to the convolution input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    grad_out: &[f64],
    k: &[f64],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    grad_x: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, pad).expect("validated");
    let ow = conv_out_extent(w, kw, stride, pad).expect("validated");
    for bi in 0..b {
        for ci in 0..cin {
            let gx_plane =
                &mut grad_x[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
            for co in 0..cout {
                let go_plane =
                    &grad_out[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                let k_plane = &k[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
                for r in 0..kh {
                    for c in 0..kw {
                        let wv = k_plane[r * kw + c];
                        if wv == 0.0 {
                            continue;
                        }
                        if stride == 1 {
                            let lo = pad.saturating_sub(c);
                            let hi = (w + pad - c).min(ow);
                            for ohi in 0..oh {
                                let ih = ohi + r;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                let ih = ih - pad;
                                if lo >= hi {
                                    continue;
                                }
                                let grow = &go_plane[ohi * ow + lo..ohi * ow + hi];
                                let xrow =
                                    &mut gx_plane[ih * w + lo + c - pad..ih * w + hi + c - pad];
                                for (xg, &g) in xrow.iter_mut().zip(grow) {
                                    *xg += wv * g;
                                }
                            }
                        } else {
                            for ohi in 0..oh {
                                let ih = ohi * stride + r;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                let ih = ih - pad;
                                for owi in 0..ow {
                                    let iw = owi * stride + c;
                                    if iw < pad || iw - pad >= w {
                                        continue;
                                    }
                                    gx_plane[ih * w + iw - pad] +=
                                        wv * go_plane[ohi * ow + owi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient with respect to the convolution kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel(
    grad_out: &[f64],
    x: &[f64],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    grad_k: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, pad).expect("validated");
    let ow = conv_out_extent(w, kw, stride, pad).expect("validated");
    for co in 0..cout {
        for ci in 0..cin {
            let gk_plane =
                &mut grad_k[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
            for bi in 0..b {
                let go_plane =
                    &grad_out[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                let x_plane = &x[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                for r in 0..kh {
                    for c in 0..kw {
                        let mut acc = 0.0;
                        if stride == 1 {
                            let lo = pad.saturating_sub(c);
                            let hi = (w + pad - c).min(ow);
                            for ohi in 0..oh {
                                let ih = ohi + r;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                let ih = ih - pad;
                                if lo >= hi {
                                    continue;
                                }
                                let grow = &go_plane[ohi * ow + lo..ohi * ow + hi];
                                let xrow = &x_plane[ih * w + lo + c - pad..ih * w + hi + c - pad];
                                for (&g, &xv) in grow.iter().zip(xrow) {
                                    acc += g * xv;
                                }
                            }
                        } else {
                            for ohi in 0..oh {
                                let ih = ohi * stride + r;
                                if ih < pad || ih - pad >= h {
                                    continue;
                                }
                                let ih = ih - pad;
                                for owi in 0..ow {
                                    let iw = owi * stride + c;
                                    if iw < pad || iw - pad >= w {
                                        continue;
                                    }
                                    acc += go_plane[ohi * ow + owi] * x_plane[ih * w + iw - pad];
                                }
                            }
                        }
                        gk_plane[r * kw + c] += acc;
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2. Records the flat input index of each
/// selected maximum (first occurrence wins ties).
pub fn maxpool2x2_forward(
    x: &[f64],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let oh = h / 2;
    let ow = w / 2;
    for bc in 0..b * c {
        let x_plane = &x[bc * h * w..(bc + 1) * h * w];
        let base_out = bc * oh * ow;
        for ohi in 0..oh {
            for owi in 0..ow {
                let i0 = (2 * ohi) * w + 2 * owi;
                let candidates = [i0, i0 + 1, i0 + w, i0 + w + 1];
                let mut best = candidates[0];
                let mut best_v = x_plane[best];
                for &idx in &candidates[1..] {
                    if x_plane[idx] > best_v {
                        best_v = x_plane[idx];
                        best = idx;
                    }
                }
                out[base_out + ohi * ow + owi] = best_v;
                argmax[base_out + ohi * ow + owi] = bc * h * w + best;
            }
        }
    }
}

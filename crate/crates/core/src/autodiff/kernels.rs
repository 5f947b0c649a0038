//! Slice-level kernels behind the tape operations.
//!
//! Convolutions run on zero-padded row copies with register-blocked loops
//! (eight output channels by eight time steps). The summation order of every
//! output element is fixed, so results do not depend on the SIMD width the
//! compiler picks.

/// Geometry of a same-padded 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub length: usize,
    pub kernel: usize,
}

impl ConvDims {
    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

/// Output time steps computed per inner block.
const TB: usize = 8;

fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Copies `rows` rows of `length` into rows of `width` starting at column `left`.
fn pad_rows(src: &[f64], rows: usize, length: usize, left: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * width];
    for r in 0..rows {
        out[r * width + left..r * width + left + length]
            .copy_from_slice(&src[r * length..(r + 1) * length]);
    }
    out
}

/// Multi-channel correlation on pre-padded rows.
///
/// `out[o, t] (+)= Σ_i Σ_k w[i, k, o] · x[i, t + k]` for `t < lr`, where
/// `w` is laid out `[in, k, out]`, `x` rows have width `>= lr + k - 1` and
/// `lr` is a multiple of [`TB`]. Each output element is summed over `i`
/// then `k`, in that order.
struct Corr<'a> {
    x: &'a [f64],
    width: usize,
    cin: usize,
    w: &'a [f64],
    k: usize,
    cout: usize,
    lr: usize,
}

impl Corr<'_> {
    fn run(&self, out: &mut [f64]) {
        let mut o0 = 0;
        while o0 < self.cout {
            let left = self.cout - o0;
            o0 += if left >= 8 {
                self.block::<8>(o0, out)
            } else if left >= 4 {
                self.block::<4>(o0, out)
            } else if left >= 2 {
                self.block::<2>(o0, out)
            } else {
                self.block::<1>(o0, out)
            };
        }
    }

    fn block<const OB: usize>(&self, o0: usize, out: &mut [f64]) -> usize {
        let (k, cout, lr, width) = (self.k, self.cout, self.lr, self.width);
        for tb in (0..lr).step_by(TB) {
            let mut acc = [[0.0f64; TB]; OB];
            for i in 0..self.cin {
                let xrow = &self.x[i * width + tb..i * width + tb + TB + k - 1];
                let wrow = &self.w[i * k * cout..(i + 1) * k * cout];
                for tap in 0..k {
                    let xs: &[f64; TB] = xrow[tap..tap + TB].try_into().unwrap();
                    let ws: &[f64; OB] = wrow[tap * cout + o0..tap * cout + o0 + OB]
                        .try_into()
                        .unwrap();
                    for o in 0..OB {
                        let wv = ws[o];
                        for j in 0..TB {
                            acc[o][j] += wv * xs[j];
                        }
                    }
                }
            }
            for (o, a) in acc.iter().enumerate() {
                let dst = &mut out[(o0 + o) * lr + tb..(o0 + o) * lr + tb + TB];
                for j in 0..TB {
                    dst[j] += a[j];
                }
            }
        }
        OB
    }
}

/// `gw[o, i, k] += Σ_t g[o, t] · x[i, t + k]` over `t < lr`.
struct WeightGrad<'a> {
    g: &'a [f64],
    x: &'a [f64],
    width: usize,
    cin: usize,
    k: usize,
    cout: usize,
    lr: usize,
}

impl WeightGrad<'_> {
    fn run(&self, gw: &mut [f64]) {
        for i in 0..self.cin {
            let mut tap = 0;
            while tap < self.k {
                let mut o0 = 0;
                let kb = if self.k - tap >= 2 { 2 } else { 1 };
                while o0 < self.cout {
                    let left = self.cout - o0;
                    o0 += match (left >= 8, kb) {
                        (true, 2) => self.block::<8, 2>(i, tap, o0, gw),
                        (true, _) => self.block::<8, 1>(i, tap, o0, gw),
                        (false, 2) => self.block::<1, 2>(i, tap, o0, gw),
                        (false, _) => self.block::<1, 1>(i, tap, o0, gw),
                    };
                }
                tap += kb;
            }
        }
    }

    fn block<const OB: usize, const KB: usize>(
        &self,
        i: usize,
        tap0: usize,
        o0: usize,
        gw: &mut [f64],
    ) -> usize {
        let (lr, width) = (self.lr, self.width);
        let mut acc = [[[0.0f64; TB]; KB]; OB];
        let xrow = &self.x[i * width..(i + 1) * width];
        for tb in (0..lr).step_by(TB) {
            let mut xs = [[0.0f64; TB]; KB];
            for (kk, dst) in xs.iter_mut().enumerate() {
                dst.copy_from_slice(&xrow[tb + tap0 + kk..tb + tap0 + kk + TB]);
            }
            for o in 0..OB {
                let gs: &[f64; TB] = self.g[(o0 + o) * lr + tb..(o0 + o) * lr + tb + TB]
                    .try_into()
                    .unwrap();
                for kk in 0..KB {
                    for j in 0..TB {
                        acc[o][kk][j] += gs[j] * xs[kk][j];
                    }
                }
            }
        }
        for o in 0..OB {
            for kk in 0..KB {
                let a = &acc[o][kk];
                let sum = ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7]));
                gw[((o0 + o) * self.cin + i) * self.k + tap0 + kk] += sum;
            }
        }
        OB
    }
}

/// Weight `[out, in, k]` rearranged to `[in, k, out]` for the forward pass.
fn forward_weight(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for tap in 0..k {
                t[(i * k + tap) * cout + o] = w[(o * cin + i) * k + tap];
            }
        }
    }
    t
}

/// Weight `[out, in, k]` rearranged to `[out, k, in]` with the kernel
/// reversed, which maps output gradients back onto inputs.
fn backward_weight(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for tap in 0..k {
                t[(o * k + tap) * cin + i] = w[(o * cin + i) * k + (k - 1 - tap)];
            }
        }
    }
    t
}

/// Same-padded correlation of one batch element; `x` is `[cin, l]`,
/// `w_t` is `[cin, k, cout]`. Returns `[cout, l]`.
fn correlate_same(x: &[f64], cin: usize, l: usize, w_t: &[f64], k: usize, cout: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let lr = round_up(l, TB);
    let width = lr + k - 1;
    let xp = pad_rows(x, cin, l, pad, width);
    let mut out = vec![0.0; cout * lr];
    Corr {
        x: &xp,
        width,
        cin,
        w: w_t,
        k,
        cout,
        lr,
    }
    .run(&mut out);
    if lr == l {
        return out;
    }
    let mut trimmed = Vec::with_capacity(cout * l);
    for o in 0..cout {
        trimmed.extend_from_slice(&out[o * lr..o * lr + l]);
    }
    trimmed
}

pub(crate) fn conv1d_forward(input: &[f64], weight: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let (l, k, cin, cout) = (d.length, d.kernel, d.in_channels, d.out_channels);
    let w_t = forward_weight(weight, cout, cin, k);
    let mut out = Vec::with_capacity(d.batch * cout * l);
    for b in 0..d.batch {
        let mut y = correlate_same(
            &input[b * cin * l..(b + 1) * cin * l],
            cin,
            l,
            &w_t,
            k,
            cout,
        );
        for (o, row) in y.chunks_exact_mut(l).enumerate() {
            row.iter_mut().for_each(|v| *v += bias[o]);
        }
        out.extend_from_slice(&y);
    }
    out
}

/// Gradients of a same-padded convolution.
///
/// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` is skipped
/// when the caller does not need it. The input gradient is itself a
/// same-padded correlation of the output gradient with the reversed,
/// channel-transposed kernel.
pub(crate) fn conv1d_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    need_input_grad: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (l, k, cin, cout) = (d.length, d.kernel, d.in_channels, d.out_channels);
    let pad = d.pad();
    let lr = round_up(l, TB);
    let width = lr + k - 1;
    let mut gw = vec![0.0; cout * cin * k];
    let mut gb = vec![0.0; cout];
    let w_back = need_input_grad.then(|| backward_weight(weight, cout, cin, k));
    let mut gin = need_input_grad.then(|| Vec::with_capacity(d.batch * cin * l));

    // Long kernels: the weight gradient of one input row is a correlation
    // of that row with the transposed output gradient, vectorized over taps.
    let tap_blocked = k >= 5;
    let kr = round_up(k, TB);
    let xwidth = if tap_blocked { lr + kr - 1 } else { width };
    for b in 0..d.batch {
        let go = &grad_out[b * cout * l..(b + 1) * cout * l];
        for (o, row) in go.chunks_exact(l).enumerate() {
            gb[o] += row.iter().sum::<f64>();
        }
        let xp = pad_rows(&input[b * cin * l..(b + 1) * cin * l], cin, l, pad, xwidth);
        if tap_blocked {
            let mut gt = vec![0.0; lr * cout];
            for (o, row) in go.chunks_exact(l).enumerate() {
                for (t, &v) in row.iter().enumerate() {
                    gt[t * cout + o] = v;
                }
            }
            let mut tile = vec![0.0; cout * kr];
            for i in 0..cin {
                tile.iter_mut().for_each(|v| *v = 0.0);
                Corr {
                    x: &xp[i * xwidth..(i + 1) * xwidth],
                    width: xwidth,
                    cin: 1,
                    w: &gt,
                    k: lr,
                    cout,
                    lr: kr,
                }
                .run(&mut tile);
                for o in 0..cout {
                    let dst = &mut gw[(o * cin + i) * k..(o * cin + i + 1) * k];
                    for (g, &v) in dst.iter_mut().zip(&tile[o * kr..o * kr + k]) {
                        *g += v;
                    }
                }
            }
        } else {
            let gp = pad_rows(go, cout, l, 0, lr);
            WeightGrad {
                g: &gp,
                x: &xp,
                width,
                cin,
                k,
                cout,
                lr,
            }
            .run(&mut gw);
        }
        if let (Some(gin), Some(w_back)) = (gin.as_mut(), w_back.as_ref()) {
            gin.extend(correlate_same(go, cout, l, w_back, k, cin));
        }
    }
    (gin, gw, gb)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-sum gradients of `Σ go[b,o,t] · y[b,o,t]` for a same-padded conv.
    fn reference_backward(x: &[f64], w: &[f64], go: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
        let (l, k, cin, cout) = (d.length as isize, d.kernel, d.in_channels, d.out_channels);
        let pad = d.pad() as isize;
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        for b in 0..d.batch {
            for o in 0..cout {
                for t in 0..l {
                    let g = go[(b * cout + o) * l as usize + t as usize];
                    for i in 0..cin {
                        for tap in 0..k {
                            let s = t + tap as isize - pad;
                            if s < 0 || s >= l {
                                continue;
                            }
                            let xi = (b * cin + i) * l as usize + s as usize;
                            let wi = (o * cin + i) * k + tap;
                            gw[wi] += g * x[xi];
                            gx[xi] += g * w[wi];
                        }
                    }
                }
            }
        }
        (gx, gw)
    }

    #[test]
    fn backward_matches_direct_sums() {
        let mut seed = 1u64;
        let mut next = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for (batch, cin, cout, l, k) in [
            (2, 3, 5, 13, 1),
            (1, 4, 8, 9, 3),
            (2, 2, 9, 21, 5),
            (1, 5, 3, 7, 15),
            (3, 1, 8, 40, 11),
        ] {
            let d = ConvDims {
                batch,
                in_channels: cin,
                out_channels: cout,
                length: l,
                kernel: k,
            };
            let x: Vec<f64> = (0..batch * cin * l).map(|_| next()).collect();
            let w: Vec<f64> = (0..cout * cin * k).map(|_| next()).collect();
            let go: Vec<f64> = (0..batch * cout * l).map(|_| next()).collect();
            let (gx, gw, gb) = conv1d_backward(&x, &w, &go, d, true);
            let (rx, rw) = reference_backward(&x, &w, &go, d);
            for (a, b) in gx.unwrap().iter().zip(&rx).chain(gw.iter().zip(&rw)) {
                assert!((a - b).abs() < 1e-12, "k={k}: {a} vs {b}");
            }
            for o in 0..cout {
                let want: f64 = (0..batch)
                    .flat_map(|b| go[(b * cout + o) * l..(b * cout + o + 1) * l].iter())
                    .sum();
                assert!((gb[o] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert!(sigmoid(800.0) <= 1.0);
    }
}

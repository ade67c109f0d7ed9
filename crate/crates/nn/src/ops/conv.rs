//! Stride-1 3D convolution via chunked im2col + GEMM.

use crate::array::Array;
use crate::float::{gemm, Float, MatRef};
use crate::tape::Var;

/// Target im2col chunk size in elements.
const CHUNK_ELEMS: usize = 1 << 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3dGeometry {
    #[allow(clippy::needless_range_loop)]
    pub fn output(&self) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            let span = self.input[a] + 2 * self.pad[a];
            assert!(
                span >= self.kernel[a],
                "kernel larger than padded input on axis {a}"
            );
            o[a] = span - self.kernel[a] + 1;
        }
        o
    }

    fn k_len(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Output rows (od, oh pairs) per im2col chunk.
    fn rows_per_chunk(&self) -> usize {
        let ow = self.output()[2];
        (CHUNK_ELEMS / (self.k_len() * ow).max(1)).max(1)
    }

    /// Multiply-accumulate count for one sample.
    pub fn macs(&self) -> u64 {
        let o = self.output();
        (o.iter().product::<usize>() * self.k_len() * self.cout) as u64
    }

    /// Fills `col[K x len]` for output rows `row0..row0+nrows` of one sample.
    fn im2col<T: Float>(&self, x: &[T], row0: usize, nrows: usize, col: &mut [T]) {
        let [_, h, w] = self.input;
        let [_, oh_n, ow_n] = self.output();
        let [kd_n, kh_n, kw_n] = self.kernel;
        let [pd, ph, pw] = self.pad;
        let d_n = self.input[0];
        let len = nrows * ow_n;
        let mut r = 0;
        for ci in 0..self.cin {
            let xc = &x[ci * d_n * h * w..(ci + 1) * d_n * h * w];
            for kd in 0..kd_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let dst_row = &mut col[r * len..(r + 1) * len];
                        let lo = pw.saturating_sub(kw).min(ow_n);
                        let hi = (w + pw).saturating_sub(kw).min(ow_n).max(lo);
                        for rr in 0..nrows {
                            let row = row0 + rr;
                            let (od, oh) = (row / oh_n, row % oh_n);
                            let dst = &mut dst_row[rr * ow_n..(rr + 1) * ow_n];
                            let id = (od + kd) as isize - pd as isize;
                            let ih = (oh + kh) as isize - ph as isize;
                            if id < 0 || id >= d_n as isize || ih < 0 || ih >= h as isize {
                                dst.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(id as usize * h + ih as usize) * w..][..w];
                            dst[..lo].fill(T::zero());
                            if hi > lo {
                                let s0 = lo + kw - pw;
                                dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                            }
                            dst[hi..].fill(T::zero());
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    /// Scatter-adds `col[K x len]` back into the input gradient `gx`.
    fn col2im<T: Float>(&self, col: &[T], row0: usize, nrows: usize, gx: &mut [T]) {
        let [_, h, w] = self.input;
        let [_, oh_n, ow_n] = self.output();
        let [kd_n, kh_n, kw_n] = self.kernel;
        let [pd, ph, pw] = self.pad;
        let d_n = self.input[0];
        let len = nrows * ow_n;
        let mut r = 0;
        for ci in 0..self.cin {
            let gc = &mut gx[ci * d_n * h * w..(ci + 1) * d_n * h * w];
            for kd in 0..kd_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let src_row = &col[r * len..(r + 1) * len];
                        let lo = pw.saturating_sub(kw).min(ow_n);
                        let hi = (w + pw).saturating_sub(kw).min(ow_n).max(lo);
                        for rr in 0..nrows {
                            let row = row0 + rr;
                            let (od, oh) = (row / oh_n, row % oh_n);
                            let id = (od + kd) as isize - pd as isize;
                            let ih = (oh + kh) as isize - ph as isize;
                            if id < 0
                                || id >= d_n as isize
                                || ih < 0
                                || ih >= h as isize
                                || hi <= lo
                            {
                                continue;
                            }
                            let s0 = lo + kw - pw;
                            let dst =
                                &mut gc[(id as usize * h + ih as usize) * w + s0..][..hi - lo];
                            let src = &src_row[rr * ow_n + lo..rr * ow_n + hi];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }
}

/// Plain forward convolution of `x [N, Ci, D, H, W]` with `w [Co, Ci, kd, kh, kw]`.
pub fn conv3d_forward<T: Float>(
    x: &Array<T>,
    w: &Array<T>,
    b: Option<&Array<T>>,
    pad: [usize; 3],
) -> Array<T> {
    let (geo, n) = geometry(x.shape(), w.shape(), pad);
    forward_impl(&geo, n, x.data(), w.data(), b.map(|b| b.data()))
}

fn geometry(xs: &[usize], ws: &[usize], pad: [usize; 3]) -> (Conv3dGeometry, usize) {
    assert_eq!(
        xs.len(),
        5,
        "conv3d input must be [N, C, D, H, W], got {xs:?}"
    );
    assert_eq!(
        ws.len(),
        5,
        "conv3d weight must be [Co, Ci, kd, kh, kw], got {ws:?}"
    );
    assert_eq!(
        xs[1], ws[1],
        "conv3d channel mismatch: input {xs:?}, weight {ws:?}"
    );
    (
        Conv3dGeometry {
            cin: ws[1],
            cout: ws[0],
            input: [xs[2], xs[3], xs[4]],
            kernel: [ws[2], ws[3], ws[4]],
            pad,
        },
        xs[0],
    )
}

fn forward_impl<T: Float>(
    geo: &Conv3dGeometry,
    n: usize,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
) -> Array<T> {
    let o = geo.output();
    let p_out: usize = o.iter().product();
    let p_in: usize = geo.input.iter().product();
    let k = geo.k_len();
    let mut out = vec![T::zero(); n * geo.cout * p_out];
    let wm = MatRef::new(w, geo.cout, k);
    if geo.is_pointwise() {
        for s in 0..n {
            let xs = &x[s * geo.cin * p_in..(s + 1) * geo.cin * p_in];
            gemm(
                T::one(),
                wm,
                MatRef::new(xs, geo.cin, p_in),
                T::zero(),
                &mut out[s * geo.cout * p_out..],
                p_out,
            );
        }
    } else {
        let rows_total = o[0] * o[1];
        let rpc = geo.rows_per_chunk();
        let mut col = vec![T::zero(); k * rpc * o[2]];
        for s in 0..n {
            let xs = &x[s * geo.cin * p_in..(s + 1) * geo.cin * p_in];
            let os = &mut out[s * geo.cout * p_out..(s + 1) * geo.cout * p_out];
            let mut row0 = 0;
            while row0 < rows_total {
                let nrows = rpc.min(rows_total - row0);
                let len = nrows * o[2];
                geo.im2col(xs, row0, nrows, &mut col[..k * len]);
                gemm(
                    T::one(),
                    wm,
                    MatRef::new(&col[..k * len], k, len),
                    T::zero(),
                    &mut os[row0 * o[2]..],
                    p_out,
                );
                row0 += nrows;
            }
        }
    }
    if let Some(b) = b {
        for s in 0..n {
            for (c, &bv) in b.iter().enumerate() {
                let base = (s * geo.cout + c) * p_out;
                for v in &mut out[base..base + p_out] {
                    *v += bv;
                }
            }
        }
    }
    Array::from_vec(&[n, geo.cout, o[0], o[1], o[2]], out)
}

struct ConvGrads<T> {
    gx: Option<Array<T>>,
    gw: Option<Array<T>>,
    gb: Option<Array<T>>,
}

fn backward_impl<T: Float>(
    geo: &Conv3dGeometry,
    n: usize,
    x: &Array<T>,
    w: &Array<T>,
    g: &Array<T>,
    need: [bool; 3],
) -> ConvGrads<T> {
    let o = geo.output();
    let p_out: usize = o.iter().product();
    let p_in: usize = geo.input.iter().product();
    let k = geo.k_len();
    let gd = g.data();
    let xd = x.data();
    let wm = MatRef::new(w.data(), geo.cout, k);
    let mut gx = need[0].then(|| vec![T::zero(); n * geo.cin * p_in]);
    let mut gw = need[1].then(|| vec![T::zero(); geo.cout * k]);
    let gb = need[2].then(|| {
        let mut acc = vec![T::zero(); geo.cout];
        for s in 0..n {
            for (c, a) in acc.iter_mut().enumerate() {
                let base = (s * geo.cout + c) * p_out;
                *a += gd[base..base + p_out].iter().copied().sum::<T>();
            }
        }
        acc
    });
    if gx.is_some() || gw.is_some() {
        if geo.is_pointwise() {
            for s in 0..n {
                let gs = MatRef::new(
                    &gd[s * geo.cout * p_out..(s + 1) * geo.cout * p_out],
                    geo.cout,
                    p_out,
                );
                let xs = &xd[s * geo.cin * p_in..(s + 1) * geo.cin * p_in];
                if let Some(gw) = gw.as_mut() {
                    gemm(
                        T::one(),
                        gs,
                        MatRef::new(xs, geo.cin, p_in).t(),
                        T::one(),
                        gw,
                        k,
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        T::one(),
                        wm.t(),
                        gs,
                        T::zero(),
                        &mut gx[s * geo.cin * p_in..],
                        p_in,
                    );
                }
            }
        } else {
            let rows_total = o[0] * o[1];
            let rpc = geo.rows_per_chunk();
            let mut col = vec![T::zero(); k * rpc * o[2]];
            for s in 0..n {
                let xs = &xd[s * geo.cin * p_in..(s + 1) * geo.cin * p_in];
                let gs = &gd[s * geo.cout * p_out..(s + 1) * geo.cout * p_out];
                let mut row0 = 0;
                while row0 < rows_total {
                    let nrows = rpc.min(rows_total - row0);
                    let len = nrows * o[2];
                    let gchunk = MatRef::strided(&gs[row0 * o[2]..], geo.cout, len, p_out);
                    if let Some(gw) = gw.as_mut() {
                        geo.im2col(xs, row0, nrows, &mut col[..k * len]);
                        gemm(
                            T::one(),
                            gchunk,
                            MatRef::new(&col[..k * len], k, len).t(),
                            T::one(),
                            gw,
                            k,
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(
                            T::one(),
                            wm.t(),
                            gchunk,
                            T::zero(),
                            &mut col[..k * len],
                            len,
                        );
                        geo.col2im(
                            &col[..k * len],
                            row0,
                            nrows,
                            &mut gx[s * geo.cin * p_in..(s + 1) * geo.cin * p_in],
                        );
                    }
                    row0 += nrows;
                }
            }
        }
    }
    let xs = x.shape();
    ConvGrads {
        gx: gx.map(|v| Array::from_vec(xs, v)),
        gw: gw.map(|v| Array::from_vec(w.shape(), v)),
        gb: gb.map(|v| Array::from_vec(&[geo.cout], v)),
    }
}

impl<'t, T: Float> Var<'t, T> {
    /// Stride-1 3D convolution. `self`: `[N, Ci, D, H, W]`, `w`: `[Co, Ci, kd, kh, kw]`,
    /// `b`: `[Co]`. Zero padding per axis.
    pub fn conv3d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, pad: [usize; 3]) -> Var<'t, T> {
        let x = self.value();
        let wv = w.value();
        let (geo, n) = geometry(x.shape(), wv.shape(), pad);
        let bv = b.map(|b| b.value());
        if let Some(bv) = &bv {
            assert_eq!(bv.shape(), &[geo.cout], "conv3d bias shape");
        }
        let y = forward_impl(&geo, n, x.data(), wv.data(), bv.as_ref().map(|b| b.data()));
        let mut parents = vec![self, w];
        parents.extend(b);
        let has_bias = b.is_some();
        self.tape().op(y, &parents, move |g, needs| {
            let need = [needs[0], needs[1], has_bias && needs[2]];
            let r = backward_impl(&geo, n, &x, &wv, g, need);
            let mut out = vec![r.gx, r.gw];
            if has_bias {
                out.push(r.gb);
            }
            out
        })
    }
}

use crate::array::{numel, strides_of, Array};
use crate::float::Float;
use crate::tape::Var;

/// `[N, 8C, n0, n1, n2] -> [N, C, 2n0, 2n1, 2n2]` with
/// `out(c, 2i+a, 2j+b, 2k+d) = in(8c + 4a + 2b + d, i, j, k)`.
pub fn voxel_shuffle_array<T: Float>(x: &Array<T>) -> Array<T> {
    let s = x.shape();
    assert_eq!(s.len(), 5, "voxel_shuffle expects [N, C, D, H, W]");
    assert!(
        s[1].is_multiple_of(8),
        "voxel_shuffle: channel count {} not divisible by 8",
        s[1]
    );
    let (n, c8, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let c = c8 / 8;
    let mut out = vec![T::zero(); x.len()];
    let xd = x.data();
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    for b in 0..n {
        for ch in 0..c {
            for sub in 0..8 {
                let (pa, pb, pd) = (sub >> 2, (sub >> 1) & 1, sub & 1);
                let src = &xd[((b * c8 + 8 * ch + sub) * d * h * w)..][..d * h * w];
                let obase = (b * c + ch) * od * oh * ow;
                for i in 0..d {
                    for j in 0..h {
                        let row = &src[(i * h + j) * w..][..w];
                        let orow = obase + ((2 * i + pa) * oh + 2 * j + pb) * ow + pd;
                        for (k, &v) in row.iter().enumerate() {
                            out[orow + 2 * k] = v;
                        }
                    }
                }
            }
        }
    }
    Array::from_vec(&[n, c, od, oh, ow], out)
}

/// Exact inverse of [`voxel_shuffle_array`].
pub fn voxel_unshuffle_array<T: Float>(x: &Array<T>) -> Array<T> {
    let s = x.shape();
    assert_eq!(s.len(), 5, "voxel_unshuffle expects [N, C, D, H, W]");
    assert!(
        s[2].is_multiple_of(2) && s[3].is_multiple_of(2) && s[4].is_multiple_of(2),
        "voxel_unshuffle needs even dims, got {s:?}"
    );
    let (n, c, od, oh, ow) = (s[0], s[1], s[2], s[3], s[4]);
    let (d, h, w) = (od / 2, oh / 2, ow / 2);
    let mut out = vec![T::zero(); x.len()];
    let xd = x.data();
    for b in 0..n {
        for ch in 0..c {
            let ibase = (b * c + ch) * od * oh * ow;
            for sub in 0..8 {
                let (pa, pb, pd) = (sub >> 2, (sub >> 1) & 1, sub & 1);
                let dst = ((b * c + ch) * 8 + sub) * d * h * w;
                for i in 0..d {
                    for j in 0..h {
                        let irow = ibase + ((2 * i + pa) * oh + 2 * j + pb) * ow + pd;
                        for k in 0..w {
                            out[dst + (i * h + j) * w + k] = xd[irow + 2 * k];
                        }
                    }
                }
            }
        }
    }
    Array::from_vec(&[n, 8 * c, d, h, w], out)
}

fn permute_array<T: Float>(x: &Array<T>, axes: &[usize]) -> Array<T> {
    let s = x.shape();
    assert_eq!(axes.len(), s.len(), "permute axes rank");
    let in_strides = strides_of(s);
    let out_shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(&out_shape);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let xd = x.data();
    let last = out_shape.len() - 1;
    let (inner, inner_stride) = (out_shape[last], src_strides[last]);
    let outer = total / inner.max(1);
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for k in 0..inner {
            out.push(xd[base + k * inner_stride]);
        }
        for ax in (0..last).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Array::from_vec(&out_shape, out)
}

impl<'t, T: Float> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshaped(shape);
        self.tape()
            .op(y, &[self], move |g, _| vec![Some(g.clone().reshaped(&old))])
    }

    /// Axis permutation; output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let y = permute_array(&x, axes);
        let mut inv = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        self.tape()
            .op(y, &[self], move |g, _| vec![Some(permute_array(g, &inv))])
    }

    /// Voxel shuffle, see [`voxel_shuffle_array`].
    pub fn voxel_shuffle(self) -> Var<'t, T> {
        let y = voxel_shuffle_array(&self.value());
        self.tape()
            .op(y, &[self], |g, _| vec![Some(voxel_unshuffle_array(g))])
    }

    pub fn voxel_unshuffle(self) -> Var<'t, T> {
        let y = voxel_unshuffle_array(&self.value());
        self.tape()
            .op(y, &[self], |g, _| vec![Some(voxel_shuffle_array(g))])
    }

    /// Concatenation along `axis`; all other axes must match.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let s0 = vals[0].shape().to_vec();
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let sizes: Vec<usize> = vals
            .iter()
            .map(|v| {
                let s = v.shape();
                assert_eq!(s.len(), s0.len(), "concat rank mismatch");
                assert!(
                    s.iter().enumerate().all(|(a, &d)| a == axis || d == s0[a]),
                    "concat shape mismatch {s:?} vs {s0:?} on axis {axis}"
                );
                s[axis]
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &sz) in vals.iter().zip(&sizes) {
                out.extend_from_slice(&v.data()[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = s0.clone();
        shape[axis] = total;
        let y = Array::from_vec(&shape, out);
        let tape = parts[0].tape();
        tape.op(y, parts, move |g, needs| {
            let gd = g.data();
            let mut offs = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&sz, &need)| {
                    let start = offs;
                    offs += sz;
                    need.then(|| {
                        let mut d = Vec::with_capacity(outer * sz * inner);
                        for o in 0..outer {
                            d.extend_from_slice(
                                &gd[(o * total + start) * inner..(o * total + start + sz) * inner],
                            );
                        }
                        let mut sh = s0.clone();
                        sh[axis] = sz;
                        Array::from_vec(&sh, d)
                    })
                })
                .collect()
        })
    }
}

use crate::array::Array;
use crate::float::Float;
use crate::tape::Var;

fn dims5(s: &[usize]) -> [usize; 5] {
    assert_eq!(s.len(), 5, "expected [N, C, D, H, W], got {s:?}");
    [s[0], s[1], s[2], s[3], s[4]]
}

impl<'t, T: Float> Var<'t, T> {
    /// Non-overlapping max pooling with cubic window `k`.
    pub fn max_pool3d(self, k: usize) -> Var<'t, T> {
        let x = self.value();
        let [n, c, d, h, w] = dims5(x.shape());
        assert!(
            d % k == 0 && h % k == 0 && w % k == 0,
            "max_pool3d: {:?} not divisible by {k}",
            x.shape()
        );
        let (od, oh, ow) = (d / k, h / k, w / k);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * od * oh * ow);
        let mut arg = Vec::with_capacity(out.capacity());
        for nc in 0..n * c {
            let base = nc * d * h * w;
            for a in 0..od {
                for b in 0..oh {
                    for e in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut bi = 0;
                        for i in 0..k {
                            for j in 0..k {
                                for l in 0..k {
                                    let off = base + ((a * k + i) * h + b * k + j) * w + e * k + l;
                                    if xd[off] > best {
                                        best = xd[off];
                                        bi = off;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        arg.push(bi);
                    }
                }
            }
        }
        let in_shape = x.shape().to_vec();
        let y = Array::from_vec(&[n, c, od, oh, ow], out);
        self.tape().op(y, &[self], move |g, _| {
            let mut gx = Array::zeros(&in_shape);
            let gd = gx.data_mut();
            for (&i, &gv) in arg.iter().zip(g.data()) {
                gd[i] += gv;
            }
            vec![Some(gx)]
        })
    }

    /// Non-overlapping average pooling with window `k` per axis. With integer
    /// ratios this is exactly adaptive average pooling.
    pub fn avg_pool3d(self, k: [usize; 3]) -> Var<'t, T> {
        let x = self.value();
        let [n, c, d, h, w] = dims5(x.shape());
        assert!(
            d % k[0] == 0 && h % k[1] == 0 && w % k[2] == 0,
            "avg_pool3d: {:?} not divisible by {k:?}",
            x.shape()
        );
        if k == [1, 1, 1] {
            return self
                .tape()
                .op((*x).clone(), &[self], |g, _| vec![Some(g.clone())]);
        }
        let (od, oh, ow) = (d / k[0], h / k[1], w / k[2]);
        let inv = T::one() / T::from_usize(k[0] * k[1] * k[2]).unwrap();
        let xd = x.data();
        let mut out = vec![T::zero(); n * c * od * oh * ow];
        for nc in 0..n * c {
            let base = nc * d * h * w;
            let obase = nc * od * oh * ow;
            for z in 0..d {
                for y in 0..h {
                    let row = &xd[base + (z * h + y) * w..][..w];
                    let orow = &mut out[obase + ((z / k[0]) * oh + y / k[1]) * ow..][..ow];
                    for (xx, &v) in row.iter().enumerate() {
                        orow[xx / k[2]] += v;
                    }
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let in_shape = x.shape().to_vec();
        let y = Array::from_vec(&[n, c, od, oh, ow], out);
        self.tape().op(y, &[self], move |g, _| {
            let mut gx = Array::zeros(&in_shape);
            let gd = g.data();
            let gxd = gx.data_mut();
            for nc in 0..n * c {
                let base = nc * d * h * w;
                let obase = nc * od * oh * ow;
                for z in 0..d {
                    for y in 0..h {
                        let grow = &gd[obase + ((z / k[0]) * oh + y / k[1]) * ow..][..ow];
                        let row = &mut gxd[base + (z * h + y) * w..][..w];
                        for (xx, v) in row.iter_mut().enumerate() {
                            *v = grow[xx / k[2]] * inv;
                        }
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Adaptive average pooling to `target` spatial dims (integer ratios only).
    pub fn adaptive_avg_pool3d(self, target: [usize; 3]) -> Var<'t, T> {
        let s = self.shape();
        let [_, _, d, h, w] = dims5(&s);
        let src = [d, h, w];
        let mut k = [1; 3];
        for a in 0..3 {
            assert!(
                target[a] > 0 && src[a] % target[a] == 0,
                "adaptive pooling {src:?} -> {target:?} needs integer ratios"
            );
            k[a] = src[a] / target[a];
        }
        self.avg_pool3d(k)
    }

    /// Mean over spatial axes: `[N, C, D, H, W] -> [N, C, 1, 1, 1]`.
    pub fn global_avg_pool(self) -> Var<'t, T> {
        let s = self.shape();
        let [_, _, d, h, w] = dims5(&s);
        self.avg_pool3d([d, h, w])
    }

    /// Max over spatial axes: `[N, C, D, H, W] -> [N, C, 1, 1, 1]`.
    pub fn global_max_pool(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, d, h, w] = dims5(x.shape());
        let p = d * h * w;
        let mut out = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let s = &x.data()[nc * p..(nc + 1) * p];
            let (mut bi, mut best) = (0, T::neg_infinity());
            for (i, &v) in s.iter().enumerate() {
                if v > best {
                    best = v;
                    bi = i;
                }
            }
            out.push(best);
            arg.push(nc * p + bi);
        }
        let in_shape = x.shape().to_vec();
        let y = Array::from_vec(&[n, c, 1, 1, 1], out);
        self.tape().op(y, &[self], move |g, _| {
            let mut gx = Array::zeros(&in_shape);
            for (&i, &gv) in arg.iter().zip(g.data()) {
                gx.data_mut()[i] += gv;
            }
            vec![Some(gx)]
        })
    }

    /// Mean over channels: `[N, C, ...] -> [N, 1, ...]`.
    pub fn channel_mean(self) -> Var<'t, T> {
        let x = self.value();
        let s = x.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let p: usize = s[2..].iter().product();
        let inv = T::one() / T::from_usize(c).unwrap();
        let mut out = vec![T::zero(); n * p];
        for b in 0..n {
            for ch in 0..c {
                let src = &x.data()[(b * c + ch) * p..][..p];
                for (o, &v) in out[b * p..(b + 1) * p].iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let mut os = s.clone();
        os[1] = 1;
        let y = Array::from_vec(&os, out);
        self.tape().op(y, &[self], move |g, _| {
            let mut gx = Array::zeros(&s);
            for b in 0..n {
                let gs = &g.data()[b * p..(b + 1) * p];
                for ch in 0..c {
                    for (o, &v) in gx.data_mut()[(b * c + ch) * p..][..p].iter_mut().zip(gs) {
                        *o = v * inv;
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Max over channels: `[N, C, ...] -> [N, 1, ...]`.
    pub fn channel_max(self) -> Var<'t, T> {
        let x = self.value();
        let s = x.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let p: usize = s[2..].iter().product();
        let mut out = vec![T::neg_infinity(); n * p];
        let mut arg = vec![0usize; n * p];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * p;
                for i in 0..p {
                    let v = x.data()[base + i];
                    if v > out[b * p + i] {
                        out[b * p + i] = v;
                        arg[b * p + i] = base + i;
                    }
                }
            }
        }
        let mut os = s.clone();
        os[1] = 1;
        let y = Array::from_vec(&os, out);
        self.tape().op(y, &[self], move |g, _| {
            let mut gx = Array::zeros(&s);
            for (&i, &gv) in arg.iter().zip(g.data()) {
                gx.data_mut()[i] += gv;
            }
            vec![Some(gx)]
        })
    }
}

use crate::array::Array;
use crate::float::Float;
use crate::tape::Var;

impl<'t, T: Float> Var<'t, T> {
    /// Group normalization over `[N, C, ...]` with per-channel affine `gamma`, `beta` (`[C]`).
    pub fn group_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        groups: usize,
        eps: f64,
    ) -> Var<'t, T> {
        let x = self.value();
        let s = x.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        assert!(
            groups > 0 && c % groups == 0,
            "group_norm: {c} channels not divisible into {groups} groups"
        );
        let p: usize = s[2..].iter().product();
        let cg = c / groups;
        let m = cg * p;
        let gv = gamma.value();
        let bv = beta.value();
        assert_eq!(gv.shape(), &[c]);
        assert_eq!(bv.shape(), &[c]);
        let eps = T::from_f64c(eps);
        let inv_m = T::one() / T::from_usize(m).unwrap();
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); n * groups];
        for b in 0..n {
            for gi in 0..groups {
                let off = (b * c + gi * cg) * p;
                let seg = &x.data()[off..off + m];
                let mean = seg.iter().copied().sum::<T>() * inv_m;
                let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
                let r = T::one() / (var + eps).sqrt();
                rstd[b * groups + gi] = r;
                for (o, &v) in xhat[off..off + m].iter_mut().zip(seg) {
                    *o = (v - mean) * r;
                }
            }
        }
        let mut y = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * p;
                let (ga, be) = (gv.data()[ch], bv.data()[ch]);
                for (o, &h) in y[off..off + p].iter_mut().zip(&xhat[off..off + p]) {
                    *o = h * ga + be;
                }
            }
        }
        let y = Array::from_vec(&s, y);
        self.tape().op(y, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut ggamma = vec![T::zero(); c];
            let mut gbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * p;
                    let gs = &gd[off..off + p];
                    gbeta[ch] += gs.iter().copied().sum::<T>();
                    ggamma[ch] += gs
                        .iter()
                        .zip(&xhat[off..off + p])
                        .map(|(&a, &h)| a * h)
                        .sum::<T>();
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![T::zero(); gd.len()];
                for b in 0..n {
                    for gi in 0..groups {
                        let off = (b * c + gi * cg) * p;
                        // dxhat = g * gamma
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for k in 0..cg {
                            let ga = gv.data()[gi * cg + k];
                            let o = off + k * p;
                            for i in o..o + p {
                                let d = gd[i] * ga;
                                sum_d += d;
                                sum_dh += d * xhat[i];
                            }
                        }
                        let r = rstd[b * groups + gi];
                        let (md, mdh) = (sum_d * inv_m, sum_dh * inv_m);
                        for k in 0..cg {
                            let ga = gv.data()[gi * cg + k];
                            let o = off + k * p;
                            for i in o..o + p {
                                gx[i] = r * (gd[i] * ga - md - xhat[i] * mdh);
                            }
                        }
                    }
                }
                Array::from_vec(&s, gx)
            });
            vec![
                gx,
                needs[1].then(|| Array::from_vec(&[c], ggamma)),
                needs[2].then(|| Array::from_vec(&[c], gbeta)),
            ]
        })
    }
}

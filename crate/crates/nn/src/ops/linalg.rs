use crate::array::Array;
use crate::float::{gemm, Float, MatRef};
use crate::tape::Var;

fn bmm_arrays<T: Float>(a: &Array<T>, ta: bool, b: &Array<T>, tb: bool) -> Array<T> {
    let (sa, sb) = (a.shape(), b.shape());
    assert!(
        sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0],
        "bmm expects [B, M, K] x [B, K, N]: {sa:?} {sb:?}"
    );
    let batch = sa[0];
    let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
    let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
    assert_eq!(k, k2, "bmm inner dimension mismatch");
    let mut out = vec![T::zero(); batch * m * n];
    let (asz, bsz) = (sa[1] * sa[2], sb[1] * sb[2]);
    for i in 0..batch {
        let am = MatRef::new(&a.data()[i * asz..(i + 1) * asz], sa[1], sa[2]);
        let bm = MatRef::new(&b.data()[i * bsz..(i + 1) * bsz], sb[1], sb[2]);
        gemm(
            T::one(),
            if ta { am.t() } else { am },
            if tb { bm.t() } else { bm },
            T::zero(),
            &mut out[i * m * n..],
            n,
        );
    }
    Array::from_vec(&[batch, m, n], out)
}

impl<'t, T: Float> Var<'t, T> {
    /// Batched matrix product `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(self, o: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), o.value());
        let y = bmm_arrays(&a, false, &b, false);
        self.tape().op(y, &[self, o], move |g, needs| {
            vec![
                needs[0].then(|| bmm_arrays(g, false, &b, true)),
                needs[1].then(|| bmm_arrays(&a, true, g, false)),
            ]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'t, T> {
        let x = self.value();
        let s = x.shape().to_vec();
        let n = *s.last().unwrap();
        let mut y = x.data().to_vec();
        for row in y.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let ya = Array::from_vec(&s, y.clone());
        self.tape().op(ya, &[self], move |g, _| {
            let mut gx = vec![T::zero(); y.len()];
            for ((gr, yr), out) in g.data().chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(Array::from_vec(&s, gx))]
        })
    }
}

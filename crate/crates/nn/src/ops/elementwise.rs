use crate::array::Array;
use crate::float::Float;
use crate::tape::Var;

/// `b` can be broadcast into `a`: same rank, each axis equal or 1.
pub fn broadcast_compatible(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| y == x || y == 1)
}

/// Collapsed iteration plan for broadcasting `b` over `a`.
struct BcastPlan {
    /// (extent, b is broadcast along this group)
    groups: Vec<(usize, bool)>,
}

impl BcastPlan {
    fn new(a: &[usize], b: &[usize]) -> Self {
        assert!(
            broadcast_compatible(a, b),
            "cannot broadcast {b:?} into {a:?}"
        );
        let mut groups: Vec<(usize, bool)> = Vec::new();
        for (&x, &y) in a.iter().zip(b) {
            if x == 1 {
                continue;
            }
            let bc = y == 1;
            match groups.last_mut() {
                Some((n, g)) if *g == bc => *n *= x,
                _ => groups.push((x, bc)),
            }
        }
        if groups.is_empty() {
            groups.push((1, false));
        }
        Self { groups }
    }

    /// Calls `f(a_offset, b_offset, len, b_step)` for each contiguous run of `a`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let g = &self.groups;
        let (inner, inner_bc) = *g.last().unwrap();
        let outer = &g[..g.len() - 1];
        // b strides per outer group
        let mut b_strides = vec![0usize; outer.len()];
        let mut acc = if inner_bc { 1 } else { inner };
        for (i, &(n, bc)) in outer.iter().enumerate().rev() {
            b_strides[i] = if bc { 0 } else { acc };
            if !bc {
                acc *= n;
            }
        }
        let outer_total: usize = outer.iter().map(|&(n, _)| n).product();
        let mut idx = vec![0usize; outer.len()];
        for o in 0..outer_total {
            let b_off: usize = idx.iter().zip(&b_strides).map(|(i, s)| i * s).sum();
            f(o * inner, b_off, inner, if inner_bc { 0 } else { 1 });
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < outer[ax].0 {
                    break;
                }
                idx[ax] = 0;
            }
        }
    }
}

/// Sums `g` (shape `a`) down to the broadcast shape `b`.
fn reduce_to<T: Float>(g: &Array<T>, b_shape: &[usize]) -> Array<T> {
    if g.shape() == b_shape {
        return g.clone();
    }
    let plan = BcastPlan::new(g.shape(), b_shape);
    let mut out = Array::zeros(b_shape);
    let gd = g.data();
    let od = out.data_mut();
    plan.for_each_run(|ao, bo, len, step| {
        if step == 0 {
            let s: T = gd[ao..ao + len].iter().copied().sum();
            od[bo] += s;
        } else {
            for (o, &v) in od[bo..bo + len].iter_mut().zip(&gd[ao..ao + len]) {
                *o += v;
            }
        }
    });
    out
}

fn bcast_apply<T: Float>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let plan = BcastPlan::new(a.shape(), b.shape());
    let mut out = Array::zeros(a.shape());
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    plan.for_each_run(|ao, bo, len, step| {
        if step == 0 {
            let bv = bd[bo];
            for (o, &x) in od[ao..ao + len].iter_mut().zip(&ad[ao..ao + len]) {
                *o = f(x, bv);
            }
        } else {
            for ((o, &x), &y) in od[ao..ao + len]
                .iter_mut()
                .zip(&ad[ao..ao + len])
                .zip(&bd[bo..bo + len])
            {
                *o = f(x, y);
            }
        }
    });
    out
}

#[allow(clippy::should_implement_trait)]
impl<'t, T: Float> Var<'t, T> {
    fn unary_with_grad(self, y: Array<T>, dydx: impl FnOnce() -> Array<T>) -> Var<'t, T> {
        let tape = self.tape();
        if tape.grad_enabled() && self.requires_grad() {
            let d = dydx();
            tape.op(y, &[self], move |g, _| {
                vec![Some(g.zip_map(&d, |a, b| a * b))]
            })
        } else {
            tape.op(y, &[self], |_, _| unreachable!())
        }
    }

    pub fn add(self, o: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let y = a.zip_map(&b, |x, y| x + y);
        self.tape()
            .op(y, &[self, o], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(self, o: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "sub shape mismatch");
        let y = a.zip_map(&b, |x, y| x - y);
        self.tape().op(y, &[self, o], |g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        })
    }

    pub fn mul(self, o: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let y = a.zip_map(&b, |x, y| x * y);
        self.tape().op(y, &[self, o], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |g, y| g * y)),
                needs[1].then(|| g.zip_map(&a, |g, x| g * x)),
            ]
        })
    }

    /// `self + o` with `o` broadcast along its size-1 axes.
    pub fn add_bcast(self, o: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), o.value());
        let y = bcast_apply(&a, &b, |x, y| x + y);
        let b_shape = b.shape().to_vec();
        self.tape().op(y, &[self, o], move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| reduce_to(g, &b_shape)),
            ]
        })
    }

    /// `self * o` with `o` broadcast along its size-1 axes.
    pub fn mul_bcast(self, o: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), o.value());
        let y = bcast_apply(&a, &b, |x, y| x * y);
        self.tape().op(y, &[self, o], move |g, needs| {
            vec![
                needs[0].then(|| bcast_apply(g, &b, |g, y| g * y)),
                needs[1].then(|| reduce_to(&g.zip_map(&a, |g, x| g * x), b.shape())),
            ]
        })
    }

    /// Element-wise product with a constant array (e.g. a dropout mask).
    pub fn mul_const(self, mask: Array<T>) -> Var<'t, T> {
        let a = self.value();
        let y = a.zip_map(&mask, |x, m| x * m);
        self.unary_with_grad(y, move || mask)
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|x| x * c);
        self.tape()
            .op(y, &[self], move |g, _| vec![Some(g.map(|v| v * c))])
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|x| x + c);
        self.tape().op(y, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn square(self) -> Var<'t, T> {
        let a = self.value();
        let y = a.map(|x| x * x);
        self.unary_with_grad(y, || a.map(|x| x + x))
    }

    pub fn abs(self) -> Var<'t, T> {
        let a = self.value();
        let y = a.map(|x| x.abs());
        self.unary_with_grad(y, || {
            a.map(|x| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            })
        })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let y = self.value().map(|x| T::one() / (T::one() + (-x).exp()));
        let y2 = y.clone();
        self.unary_with_grad(y, move || y2.map(|s| s * (T::one() - s)))
    }

    pub fn tanh(self) -> Var<'t, T> {
        let y = self.value().map(|x| x.tanh());
        let y2 = y.clone();
        self.unary_with_grad(y, move || y2.map(|t| T::one() - t * t))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.leaky_relu(T::zero())
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        let a = self.value();
        let y = a.map(|x| if x > T::zero() { x } else { x * slope });
        self.unary_with_grad(y, || {
            a.map(|x| if x > T::zero() { T::one() } else { slope })
        })
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        let a = self.value();
        let y = a.map(|x| x.max(lo).min(hi));
        self.unary_with_grad(y, || {
            a.map(|x| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            })
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t, T> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let y = Array::scalar(a.sum());
        self.tape().op(y, &[self], move |g, _| {
            vec![Some(Array::full(&shape, g.item()))]
        })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(self) -> Var<'t, T> {
        let n = T::from_usize(self.value().len()).unwrap();
        self.sum().scale(T::one() / n)
    }
}

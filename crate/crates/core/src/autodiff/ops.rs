//! Elementwise, linear-algebra and shape ops.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

/// Splits `[N, C, rest...]` into `(N, C, prod(rest))`.
pub(crate) fn channel_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [n, c, rest @ ..] => Some((*n, *c, rest.iter().product())),
        _ => None,
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// With e = eˣ, tanh(softplus(x)) = n / (n + 2) where n = e² + 2e, so Mish
// needs a single exponential. Above 20 it equals x to double precision.
const MISH_LINEAR_ABOVE: f64 = 20.0;

pub(crate) fn mish_value<T: Scalar>(x: T) -> T {
    if x > T::of(MISH_LINEAR_ABOVE) {
        return x;
    }
    let e = x.exp();
    let n = e * (e + T::of(2.0));
    x * n / (n + T::of(2.0))
}

fn mish_derivative<T: Scalar>(x: T) -> T {
    if x > T::of(MISH_LINEAR_ABOVE) {
        return T::one();
    }
    let e = x.exp();
    let n = e * (e + T::of(2.0));
    let th = n / (n + T::of(2.0));
    // sigmoid(x) = e / (1 + e)
    th + x * (e / (T::one() + e)) * (T::one() - th * th)
}

impl<T: Scalar> Tensor<T> {
    /// Elementwise op whose derivative is a function of the input.
    fn unary_x(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
        let x = self.to_vec();
        let y: Vec<T> = x.iter().map(|&v| f(v)).collect();
        Tensor::from_op(self.shape().to_vec(), y, &[self], move |g, _| {
            vec![Some(g.iter().zip(&x).map(|(&g, &x)| g * df(x)).collect())]
        })
    }

    /// Elementwise op whose derivative is a function of the output.
    fn unary_y(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
        let y: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let saved = y.clone();
        Tensor::from_op(self.shape().to_vec(), y, &[self], move |g, _| {
            vec![Some(g.iter().zip(&saved).map(|(&g, &y)| g * df(y)).collect())]
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
        }))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let a = self.to_vec();
        let b = other.to_vec();
        let data = a.iter().zip(&b).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(&b).map(|(&g, &b)| g * b).collect()),
                needs[1].then(|| g.iter().zip(&a).map(|(&g, &a)| g * a).collect()),
            ]
        }))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g, _| {
            vec![Some(g.iter().map(|&v| v * s).collect())]
        })
    }

    /// Elementwise product with a constant of the same length (dropout masks).
    pub fn mul_const(&self, mask: &[T]) -> Result<Tensor<T>> {
        if mask.len() != self.numel() {
            return Err(Error::Dimension {
                op: "mul_const",
                lhs: self.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mask = mask.to_vec();
        let data = self.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self], move |g, _| {
            vec![Some(g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
        }))
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: self.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                })
            }
        };
        let a = self.to_vec();
        let b = other.to_vec();
        let mut c = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                for (cv, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *cv += av * bv;
                }
            }
        }
        Ok(Tensor::from_op(vec![m, n], c, &[self, other], move |g, needs| {
            // dA = dC · Bᵀ
            let da = needs[0].then(|| {
                let mut da = vec![T::zero(); m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] = grow.iter().zip(&b[p * n..(p + 1) * n]).map(|(&x, &y)| x * y).sum();
                    }
                }
                da
            });
            // dB = Aᵀ · dC
            let db = needs[1].then(|| {
                let mut db = vec![T::zero(); k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = a[i * k + p];
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
                db
            });
            vec![da, db]
        }))
    }

    /// Adds `bias[c]` along axis 1 of a `[N, C, ...]` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, s) = match channel_layout(self.shape()) {
            Some(l) if bias.shape() == [l.1] => l,
            _ => {
                return Err(Error::Dimension {
                    op: "add_channel_bias",
                    lhs: self.shape().to_vec(),
                    rhs: bias.shape().to_vec(),
                })
            }
        };
        let b = bias.to_vec();
        let mut data = self.to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += b[(i / s) % c];
        }
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, bias], move |g, needs| {
            let db = needs[1].then(|| {
                let mut db = vec![T::zero(); c];
                for (i, &gv) in g.iter().enumerate() {
                    db[(i / s) % c] += gv;
                }
                let _ = n;
                db
            });
            vec![Some(g.to_vec()), db]
        }))
    }

    /// `x * scale[c] + shift[c]` along axis 1.
    pub fn channel_affine(&self, scale: &Tensor<T>, shift: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, s) = match channel_layout(self.shape()) {
            Some(l) if scale.shape() == [l.1] && shift.shape() == [l.1] => l,
            _ => {
                return Err(Error::Dimension {
                    op: "channel_affine",
                    lhs: self.shape().to_vec(),
                    rhs: scale.shape().to_vec(),
                })
            }
        };
        let x = self.to_vec();
        let a = scale.to_vec();
        let b = shift.to_vec();
        let data = x.iter().enumerate().map(|(i, &v)| v * a[(i / s) % c] + b[(i / s) % c]).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, scale, shift], move |g, needs| {
            let dx = needs[0].then(|| g.iter().enumerate().map(|(i, &gv)| gv * a[(i / s) % c]).collect());
            let mut da = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            for (i, &gv) in g.iter().enumerate() {
                let ch = (i / s) % c;
                da[ch] += gv * x[i];
                db[ch] += gv;
            }
            vec![dx, Some(da), Some(db)]
        }))
    }

    /// `x[n,c,..] * scale[n,c] + shift[n,c]`: per-example, per-channel modulation.
    pub fn sample_affine(&self, scale: &Tensor<T>, shift: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, s) = match channel_layout(self.shape()) {
            Some(l) if scale.shape() == [l.0, l.1] && shift.shape() == [l.0, l.1] => l,
            _ => {
                return Err(Error::Dimension {
                    op: "sample_affine",
                    lhs: self.shape().to_vec(),
                    rhs: scale.shape().to_vec(),
                })
            }
        };
        let x = self.to_vec();
        let a = scale.to_vec();
        let b = shift.to_vec();
        let data = x.iter().enumerate().map(|(i, &v)| v * a[i / s] + b[i / s]).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, scale, shift], move |g, needs| {
            let dx = needs[0].then(|| g.iter().enumerate().map(|(i, &gv)| gv * a[i / s]).collect());
            let mut da = vec![T::zero(); n * c];
            let mut db = vec![T::zero(); n * c];
            for (i, &gv) in g.iter().enumerate() {
                da[i / s] += gv * x[i];
                db[i / s] += gv;
            }
            vec![dx, Some(da), Some(db)]
        }))
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let len = self.numel();
        Tensor::from_op(Vec::new(), vec![total], &[self], move |g, _| vec![Some(vec![g[0]; len])])
    }

    pub fn mean(&self) -> Tensor<T> {
        let len = self.numel();
        self.sum().scale(T::one() / T::of(len as f64))
    }

    pub fn relu(&self) -> Tensor<T> {
        // the output is positive exactly where the input is
        self.unary_y(|x| x.max(T::zero()), |y| if y > T::zero() { T::one() } else { T::zero() })
    }

    /// `x · tanh(softplus(x))`.
    pub fn mish(&self) -> Tensor<T> {
        self.unary_x(mish_value, mish_derivative)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary_y(sigmoid, |y| y * (T::one() - y))
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary_y(|x| x.tanh(), |y| T::one() - y * y)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if super::numel(shape) != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Joins `[N×p]` and `[N×q]` into `[N×(p+q)]`.
    pub fn concat_cols(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, p, q) = match (self.shape(), other.shape()) {
            ([n, p], [n2, q]) if n == n2 => (*n, *p, *q),
            _ => {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                })
            }
        };
        let a = self.data();
        let b = other.data();
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(&a[i * p..(i + 1) * p]);
            data.extend_from_slice(&b[i * q..(i + 1) * q]);
        }
        drop((a, b));
        Ok(Tensor::from_op(vec![n, p + q], data, &[self, other], move |g, _| {
            let mut ga = Vec::with_capacity(n * p);
            let mut gb = Vec::with_capacity(n * q);
            for row in g.chunks(p + q) {
                ga.extend_from_slice(&row[..p]);
                gb.extend_from_slice(&row[p..]);
            }
            vec![Some(ga), Some(gb)]
        }))
    }

    /// Mean over every axis after the first two: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let (n, c, s) = match channel_layout(self.shape()) {
            Some(l) if self.shape().len() > 2 => l,
            _ => {
                return Err(Error::Dimension {
                    op: "global_avg_pool",
                    lhs: self.shape().to_vec(),
                    rhs: Vec::new(),
                })
            }
        };
        let inv = T::one() / T::of(s as f64);
        let data = self.data().chunks(s).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        Ok(Tensor::from_op(vec![n, c], data, &[self], move |g, _| {
            vec![Some(g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, s)).collect())]
        }))
    }
}

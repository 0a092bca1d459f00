//! 2-D cross-correlation over `[N, C, H, W]` inputs.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    /// Output columns `o` whose input column `o*stride + k - pad` lies in `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= extent-1
        let top = extent as isize - 1 - off;
        if top < 0 {
            return (0, 0);
        }
        let hi = (top / s + 1).min(out as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel > padded || stride == 0 || (padded - kernel) % stride != 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation of `self: [N, C, H, W]` with `weight: [F, C, kh, kw]`.
    ///
    /// The output extent `(H + 2·padding − kh) / stride + 1` must be an integer.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let (n, c, h, w, f, kh, kw) = match (self.shape(), weight.shape()) {
            ([n, c, h, w], [f, c2, kh, kw]) if c == c2 => (*n, *c, *h, *w, *f, *kh, *kw),
            _ => {
                return Err(Error::Dimension {
                    op: "conv2d",
                    lhs: self.shape().to_vec(),
                    rhs: weight.shape().to_vec(),
                })
            }
        };
        let (Some(oh), Some(ow)) = (output_extent(h, kh, stride, padding), output_extent(w, kw, stride, padding)) else {
            return Err(Error::Config(format!(
                "conv2d: kernel {kh}x{kw} with stride {stride} and padding {padding} does not tile input {h}x{w}"
            )));
        };
        let geo = Geometry { n, c, h, w, f, kh, kw, oh, ow, stride, pad: padding };
        let x = self.to_vec();
        let wt = weight.to_vec();
        let out = forward(&geo, &x, &wt);
        Ok(Tensor::from_op(vec![n, f, oh, ow], out, &[self, weight], move |g, needs| {
            let dx = needs[0].then(|| grad_input(&geo, &wt, g));
            let dw = needs[1].then(|| grad_weight(&geo, &x, g));
            vec![dx, dw]
        }))
    }
}

// Each image is unfolded into a `[C·kh·kw, oh·ow]` column matrix so the
// inner loops run over contiguous memory.

fn im2col<T: Scalar>(geo: &Geometry, img: &[T], cols: &mut [T]) {
    let Geometry { c, h, w, kh, kw, ow, stride, pad, .. } = *geo;
    let p = geo.oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            let (r_lo, r_hi) = geo.valid_range(ki, h, geo.oh);
            for kj in 0..kw {
                let (c_lo, c_hi) = geo.valid_range(kj, w, ow);
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                dst.fill(T::zero());
                for r in r_lo..r_hi {
                    let src = &img[(ci * h + r * stride + ki - pad) * w..][..w];
                    for col in c_lo..c_hi {
                        dst[r * ow + col] = src[col * stride + kj - pad];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(geo: &Geometry, cols: &[T], img: &mut [T]) {
    let Geometry { c, h, w, kh, kw, ow, stride, pad, .. } = *geo;
    let p = geo.oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            let (r_lo, r_hi) = geo.valid_range(ki, h, geo.oh);
            for kj in 0..kw {
                let (c_lo, c_hi) = geo.valid_range(kj, w, ow);
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for r in r_lo..r_hi {
                    let dst = &mut img[(ci * h + r * stride + ki - pad) * w..][..w];
                    for col in c_lo..c_hi {
                        dst[col * stride + kj - pad] += src[r * ow + col];
                    }
                }
            }
        }
    }
}

fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn forward<T: Scalar>(geo: &Geometry, x: &[T], wt: &[T]) -> Vec<T> {
    let (k, p, f) = (geo.patch(), geo.positions(), geo.f);
    let img_len = geo.c * geo.h * geo.w;
    let mut out = vec![T::zero(); geo.n * f * p];
    let mut cols = vec![T::zero(); k * p];
    for b in 0..geo.n {
        im2col(geo, &x[b * img_len..(b + 1) * img_len], &mut cols);
        for fo in 0..f {
            let orow = &mut out[(b * f + fo) * p..(b * f + fo + 1) * p];
            for (kk, &wv) in wt[fo * k..(fo + 1) * k].iter().enumerate() {
                if wv != T::zero() {
                    axpy(orow, wv, &cols[kk * p..(kk + 1) * p]);
                }
            }
        }
    }
    out
}

fn grad_input<T: Scalar>(geo: &Geometry, wt: &[T], g: &[T]) -> Vec<T> {
    let (k, p, f) = (geo.patch(), geo.positions(), geo.f);
    let img_len = geo.c * geo.h * geo.w;
    let mut dx = vec![T::zero(); geo.n * img_len];
    let mut dcols = vec![T::zero(); k * p];
    for b in 0..geo.n {
        dcols.fill(T::zero());
        for fo in 0..f {
            let grow = &g[(b * f + fo) * p..(b * f + fo + 1) * p];
            for kk in 0..k {
                axpy(&mut dcols[kk * p..(kk + 1) * p], wt[fo * k + kk], grow);
            }
        }
        col2im(geo, &dcols, &mut dx[b * img_len..(b + 1) * img_len]);
    }
    dx
}

fn grad_weight<T: Scalar>(geo: &Geometry, x: &[T], g: &[T]) -> Vec<T> {
    let (k, p, f) = (geo.patch(), geo.positions(), geo.f);
    let img_len = geo.c * geo.h * geo.w;
    let mut dw = vec![T::zero(); f * k];
    let mut cols = vec![T::zero(); k * p];
    for b in 0..geo.n {
        im2col(geo, &x[b * img_len..(b + 1) * img_len], &mut cols);
        for fo in 0..f {
            let grow = &g[(b * f + fo) * p..(b * f + fo + 1) * p];
            for kk in 0..k {
                dw[fo * k + kk] += dot(grow, &cols[kk * p..(kk + 1) * p]);
            }
        }
    }
    dw
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive reference with explicit bounds checks.
    fn reference(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], stride: usize, pad: usize) -> Vec<f64> {
        let [n, c, h, wd] = xs;
        let [f, _, kh, kw] = ws;
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * f * oh * ow];
        for b in 0..n {
            for fo in 0..f {
                for r in 0..oh {
                    for col in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ir = (r * stride + ki) as isize - pad as isize;
                                    let ic = (col * stride + kj) as isize - pad as isize;
                                    if ir < 0 || ic < 0 || ir >= h as isize || ic >= wd as isize {
                                        continue;
                                    }
                                    acc += x[((b * c + ci) * h + ir as usize) * wd + ic as usize]
                                        * w[((fo * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out[((b * f + fo) * oh + r) * ow + col] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_copies_input() {
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = x.conv2d(&w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn all_ones_full_kernel_sums_to_nine() {
        let x = Tensor::new(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::new(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = x.conv2d(&w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn non_integer_extent_is_a_config_error() {
        let x = Tensor::new(&[1, 1, 4, 4], vec![0.0; 16]).unwrap();
        let w = Tensor::new(&[1, 1, 3, 3], vec![0.0; 9]).unwrap();
        assert!(matches!(x.conv2d(&w, 2, 0), Err(Error::Config(_))));
        let big = Tensor::new(&[1, 1, 5, 5], vec![0.0; 25]).unwrap();
        assert!(matches!(x.conv2d(&big, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn matches_reference_with_stride_and_padding() {
        let xs = [2, 3, 7, 7];
        let ws = [4, 3, 3, 3];
        let x: Vec<f64> = (0..xs.iter().product::<usize>()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let w: Vec<f64> = (0..ws.iter().product::<usize>()).map(|i| ((i * 13 % 7) as f64 - 3.0) / 2.0).collect();
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 1)] {
            if (xs[2] + 2 * pad - 3) % stride != 0 {
                continue;
            }
            let got = Tensor::new(&xs, x.clone())
                .unwrap()
                .conv2d(&Tensor::new(&ws, w.clone()).unwrap(), stride, pad)
                .unwrap()
                .to_vec();
            let want = reference(&x, xs, &w, ws, stride, pad);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

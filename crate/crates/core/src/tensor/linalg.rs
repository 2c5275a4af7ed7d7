use alloc::boxed::Box;
use alloc::vec;

use super::Tensor;
use crate::error::{Error, Result};

/// `out[m,n] += a[m,k] * b[k,n]` on raw row-major buffers.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, &bv)| *o += av * bv);
        }
    }
}

impl Tensor {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.data(), other.data(), &mut out, m, k, n);

        let (pa, pb) = (self.clone(), other.clone());
        let backward = Box::new(move |g: &[f64], _: &[f64], needs: &[bool]| {
            let ga = needs[0].then(|| {
                // g [m,n] * b^T [n,k]
                let b = pb.data();
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                ga
            });
            let gb = needs[1].then(|| {
                // a^T [k,m] * g [m,n]
                let a = pa.data();
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = a[i * k + p];
                        gb[p * n..(p + 1) * n]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, &gv)| *o += av * gv);
                    }
                }
                gb
            });
            vec![ga, gb]
        });
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            backward,
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let backward = Box::new(move |g: &[f64], _: &[f64], _: &[bool]| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(gx)]
        });
        Ok(Tensor::from_op(vec![c, r], out, vec![self.clone()], backward))
    }

    /// 1-D convolution (cross-correlation) of `[B, Cin, L]` with weights
    /// `[Cout, Cin, K]`, optional bias `[Cout]`, zero padding on both sides.
    pub fn conv1d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let mismatch = || Error::ShapeMismatch {
            op: "conv1d",
            lhs: self.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        };
        if self.rank() != 3 || weight.rank() != 3 || stride == 0 {
            return Err(mismatch());
        }
        let (batch, cin, len) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cout, wcin, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
        if wcin != cin || len + 2 * padding < k {
            return Err(mismatch());
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d_bias",
                    lhs: b.shape().to_vec(),
                    rhs: vec![cout],
                });
            }
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        // Valid output range [lo, hi) for tap `j`: 0 <= t*stride + j - padding < len.
        let tap_range = move |j: usize| {
            let lo = if j >= padding { 0 } else { (padding - j).div_ceil(stride) };
            let hi = if len + padding > j {
                ((len + padding - j - 1) / stride + 1).min(lout)
            } else {
                0
            };
            (lo, hi.max(lo))
        };

        let x = self.data();
        let w = weight.data();
        let mut out = vec![0.0; batch * cout * lout];
        for b in 0..batch {
            for co in 0..cout {
                let orow = &mut out[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                if let Some(bias) = bias {
                    orow.iter_mut().for_each(|o| *o = bias.data()[co]);
                }
                for ci in 0..cin {
                    let xrow = &x[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                    for j in 0..k {
                        let wv = w[(co * cin + ci) * k + j];
                        let (lo, hi) = tap_range(j);
                        for t in lo..hi {
                            orow[t] += wv * xrow[t * stride + j - padding];
                        }
                    }
                }
            }
        }

        let (px, pw) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let backward = Box::new(move |g: &[f64], _: &[f64], needs: &[bool]| {
            let x = px.data();
            let w = pw.data();
            let mut gx = needs[0].then(|| vec![0.0; batch * cin * len]);
            let mut gw = needs[1].then(|| vec![0.0; cout * cin * k]);
            for b in 0..batch {
                for co in 0..cout {
                    let grow = &g[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                    for ci in 0..cin {
                        let base = (b * cin + ci) * len;
                        for j in 0..k {
                            let widx = (co * cin + ci) * k + j;
                            let (lo, hi) = tap_range(j);
                            if let Some(gx) = gx.as_mut() {
                                let wv = w[widx];
                                for t in lo..hi {
                                    gx[base + t * stride + j - padding] += wv * grow[t];
                                }
                            }
                            if let Some(gw) = gw.as_mut() {
                                let mut acc = 0.0;
                                for t in lo..hi {
                                    acc += grow[t] * x[base + t * stride + j - padding];
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                let gb = needs[2].then(|| {
                    let mut gb = vec![0.0; cout];
                    for b in 0..batch {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            *acc += g[(b * cout + co) * lout..(b * cout + co + 1) * lout]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                    gb
                });
                grads.push(gb);
            }
            grads
        });
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(vec![batch, cout, lout], out, parents, backward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_values() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::from_vec(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        assert!(a.matmul(&Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn conv1d_against_direct_sum() {
        // single channel, kernel [1, 0, -1], padding 1, stride 1
        let x = Tensor::from_vec(vec![1.0, 2.0, 4.0, 8.0], &[1, 1, 4]).unwrap();
        let w = Tensor::from_vec(vec![1.0, 0.0, -1.0], &[1, 1, 3]).unwrap();
        let y = x.conv1d(&w, None, 1, 1).unwrap();
        assert_eq!(y.data(), &[-2.0, -3.0, -6.0, 4.0]);
        let y2 = x.conv1d(&w, None, 2, 1).unwrap();
        assert_eq!(y2.data(), &[-2.0, -6.0]);
    }

    #[test]
    fn conv1d_output_length() {
        let x = Tensor::zeros(&[2, 3, 17]);
        let w = Tensor::zeros(&[4, 3, 5]);
        let y = x.conv1d(&w, None, 2, 2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 9]);
    }
}

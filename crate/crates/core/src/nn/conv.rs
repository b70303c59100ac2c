//! Direct 3D convolution with stride and zero padding.

use super::{join_name, FeatMap, Params};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_c][in_c][k][k][k]` flattened.
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

impl Conv3d {
    /// He-normal initialized convolution. `bias` is off when a norm layer
    /// follows.
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * k * k * k;
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weight: Vec<f64> = (0..out_c * fan_in).map(|_| dist.sample(rng)).collect();
        let n_w = weight.len();
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight,
            bias: bias.then(|| vec![0.0; out_c]),
            gw: vec![0.0; n_w],
            gb: if bias { vec![0.0; out_c] } else { vec![] },
        }
    }

    pub fn out_dhw(&self, in_dhw: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = (in_dhw[i] + 2 * self.pad - self.k) / self.stride + 1;
        }
        out
    }

    /// Output index range `[lo, hi)` whose input index `o*stride + k_off - pad`
    /// stays inside `[0, in_len)`.
    fn valid_range(&self, in_len: usize, out_len: usize, k_off: usize) -> (usize, usize) {
        let lo = if self.pad > k_off { (self.pad - k_off).div_ceil(self.stride) } else { 0 };
        if in_len + self.pad <= k_off {
            return (0, 0);
        }
        let hi_incl = (in_len - 1 + self.pad - k_off) / self.stride;
        (lo.min(out_len), (hi_incl + 1).min(out_len))
    }

    pub fn forward(&self, x: &FeatMap) -> FeatMap {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let od = self.out_dhw(x.dhw);
        let mut y = FeatMap::zeros(self.out_c, od);
        let [ind, inh, inw] = x.dhw;
        let [outd, outh, outw] = od;
        let s = self.stride;
        let kk = self.k;
        let kvol = kk * kk * kk;

        for oc in 0..self.out_c {
            if let Some(b) = &self.bias {
                y.channel_mut(oc).fill(b[oc]);
            }
        }
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                let w_base = (oc * self.in_c + ic) * kvol;
                for kd in 0..kk {
                    let (od_lo, od_hi) = self.valid_range(ind, outd, kd);
                    for kh in 0..kk {
                        let (oh_lo, oh_hi) = self.valid_range(inh, outh, kh);
                        for kw in 0..kk {
                            let (ow_lo, ow_hi) = self.valid_range(inw, outw, kw);
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            let wv = self.weight[w_base + (kd * kk + kh) * kk + kw];
                            if wv == 0.0 {
                                continue;
                            }
                            for od in od_lo..od_hi {
                                let id = od * s + kd - self.pad;
                                for oh in oh_lo..oh_hi {
                                    let ih = oh * s + kh - self.pad;
                                    let in_off = ic * ind * inh * inw + (id * inh + ih) * inw;
                                    let out_off =
                                        oc * outd * outh * outw + (od * outh + oh) * outw;
                                    let iw0 = ow_lo * s + kw - self.pad;
                                    if s == 1 {
                                        let xin = &x.data[in_off + iw0..in_off + iw0 + (ow_hi - ow_lo)];
                                        let yout = &mut y.data[out_off + ow_lo..out_off + ow_hi];
                                        for (o, &i) in yout.iter_mut().zip(xin) {
                                            *o += wv * i;
                                        }
                                    } else {
                                        let mut iw = iw0;
                                        for ow in ow_lo..ow_hi {
                                            y.data[out_off + ow] += wv * x.data[in_off + iw];
                                            iw += s;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &FeatMap, gy: &FeatMap) -> FeatMap {
        let od = self.out_dhw(x.dhw);
        assert_eq!(gy.dhw, od, "conv output grad shape");
        let mut gx = FeatMap::zeros(self.in_c, x.dhw);
        let [ind, inh, inw] = x.dhw;
        let [outd, outh, outw] = od;
        let s = self.stride;
        let kk = self.k;
        let kvol = kk * kk * kk;

        if let Some(_b) = &self.bias {
            for oc in 0..self.out_c {
                self.gb[oc] += gy.channel(oc).iter().sum::<f64>();
            }
        }
        for oc in 0..self.out_c {
            for ic in 0..self.in_c {
                let w_base = (oc * self.in_c + ic) * kvol;
                for kd in 0..kk {
                    let (od_lo, od_hi) = self.valid_range(ind, outd, kd);
                    for kh in 0..kk {
                        let (oh_lo, oh_hi) = self.valid_range(inh, outh, kh);
                        for kw in 0..kk {
                            let (ow_lo, ow_hi) = self.valid_range(inw, outw, kw);
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            let widx = w_base + (kd * kk + kh) * kk + kw;
                            let wv = self.weight[widx];
                            let mut wg = 0.0;
                            for od in od_lo..od_hi {
                                let id = od * s + kd - self.pad;
                                for oh in oh_lo..oh_hi {
                                    let ih = oh * s + kh - self.pad;
                                    let in_off = ic * ind * inh * inw + (id * inh + ih) * inw;
                                    let out_off =
                                        oc * outd * outh * outw + (od * outh + oh) * outw;
                                    let iw0 = ow_lo * s + kw - self.pad;
                                    if s == 1 {
                                        let xin = &x.data[in_off + iw0..in_off + iw0 + (ow_hi - ow_lo)];
                                        let gout = &gy.data[out_off + ow_lo..out_off + ow_hi];
                                        let gin = &mut gx.data
                                            [in_off + iw0..in_off + iw0 + (ow_hi - ow_lo)];
                                        for ((gi, &go), &xi) in
                                            gin.iter_mut().zip(gout).zip(xin)
                                        {
                                            *gi += wv * go;
                                            wg += go * xi;
                                        }
                                    } else {
                                        let mut iw = iw0;
                                        for ow in ow_lo..ow_hi {
                                            let go = gy.data[out_off + ow];
                                            gx.data[in_off + iw] += wv * go;
                                            wg += go * x.data[in_off + iw];
                                            iw += s;
                                        }
                                    }
                                }
                            }
                            self.gw[widx] += wg;
                        }
                    }
                }
            }
        }
        gx
    }
}

impl Params for Conv3d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        f(&join_name(prefix, "weight"), &mut self.weight, &mut self.gw);
        if let Some(b) = &mut self.bias {
            f(&join_name(prefix, "bias"), b, &mut self.gb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Literal 7-loop convolution used as the oracle.
    fn conv_naive(conv: &Conv3d, x: &FeatMap) -> FeatMap {
        let od = conv.out_dhw(x.dhw);
        let mut y = FeatMap::zeros(conv.out_c, od);
        let kk = conv.k;
        for oc in 0..conv.out_c {
            for od_i in 0..od[0] {
                for oh in 0..od[1] {
                    for ow in 0..od[2] {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b[oc]);
                        for ic in 0..conv.in_c {
                            for kd in 0..kk {
                                for kh in 0..kk {
                                    for kw in 0..kk {
                                        let id = (od_i * conv.stride + kd) as isize
                                            - conv.pad as isize;
                                        let ih =
                                            (oh * conv.stride + kh) as isize - conv.pad as isize;
                                        let iw =
                                            (ow * conv.stride + kw) as isize - conv.pad as isize;
                                        if id < 0
                                            || ih < 0
                                            || iw < 0
                                            || id >= x.dhw[0] as isize
                                            || ih >= x.dhw[1] as isize
                                            || iw >= x.dhw[2] as isize
                                        {
                                            continue;
                                        }
                                        let xi = x.channel(ic)[(id as usize * x.dhw[1]
                                            + ih as usize)
                                            * x.dhw[2]
                                            + iw as usize];
                                        let wv = conv.weight[((oc * conv.in_c + ic) * kk * kk * kk)
                                            + (kd * kk + kh) * kk
                                            + kw];
                                        acc += wv * xi;
                                    }
                                }
                            }
                        }
                        y.channel_mut(oc)[(od_i * od[1] + oh) * od[2] + ow] = acc;
                    }
                }
            }
        }
        y
    }

    fn random_feat(c: usize, dhw: [usize; 3], rng: &mut ChaCha8Rng) -> FeatMap {
        let mut f = FeatMap::zeros(c, dhw);
        for v in &mut f.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn forward_matches_naive() {
        for (stride, pad, k, dhw) in
            [(1, 1, 3, [5, 6, 4]), (2, 1, 3, [7, 5, 6]), (2, 3, 7, [9, 8, 10]), (1, 0, 1, [4, 4, 4])]
        {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let conv = Conv3d::new(2, 3, k, stride, pad, true, &mut rng);
            let x = random_feat(2, dhw, &mut rng);
            let fast = conv.forward(&x);
            let slow = conv_naive(&conv, &x);
            assert_eq!(fast.dhw, slow.dhw);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut conv = Conv3d::new(2, 2, 3, 2, 1, true, &mut rng);
        let x = random_feat(2, [5, 4, 5], &mut rng);
        // Loss: weighted sum of outputs (fixed weights make fd exact-ish).
        let out = conv.forward(&x);
        let coeffs: Vec<f64> = (0..out.data.len()).map(|i| ((i % 7) as f64 - 3.0) / 3.0).collect();
        let gy = FeatMap { c: out.c, dhw: out.dhw, data: coeffs.clone() };
        super::super::zero_grads(&mut conv);
        let gx = conv.backward(&x, &gy);
        let analytic = super::super::flat_grads(&mut conv);

        let loss = |m: &mut Conv3d| -> f64 {
            m.forward(&x).data.iter().zip(&coeffs).map(|(y, c)| y * c).sum()
        };
        let pairs = super::super::testutil::finite_diff_check(&mut conv, loss, &analytic, 1e-5);
        let frac = super::super::testutil::match_fraction(&pairs, 1e-6);
        assert!(frac > 0.999, "conv param grad match fraction {frac}");

        // Input gradient via finite differences on a few voxels.
        for idx in [0usize, 13, 37, 61] {
            let mut xp = x.clone();
            xp.data[idx] += 1e-5;
            let lp: f64 = conv.forward(&xp).data.iter().zip(&coeffs).map(|(y, c)| y * c).sum();
            let mut xm = x.clone();
            xm.data[idx] -= 1e-5;
            let lm: f64 = conv.forward(&xm).data.iter().zip(&coeffs).map(|(y, c)| y * c).sum();
            let num = (lp - lm) / 2e-5;
            assert!((gx.data[idx] - num).abs() < 1e-6, "gx[{idx}] {} vs {num}", gx.data[idx]);
        }
    }
}

//! Group normalization over channel groups of a single feature map.
//!
//! Per-sample statistics keep items independent, which training determinism
//! and the finite-difference checks both rely on.

use super::{join_name, FeatMap, Params};

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub groups: usize,
    pub c: usize,
    pub eps: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub ggamma: Vec<f64>,
    pub gbeta: Vec<f64>,
}

/// Per-group statistics captured during forward.
#[derive(Debug, Clone)]
pub struct GnCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl GroupNorm {
    pub fn new(c: usize, groups: usize) -> Self {
        let groups = groups.min(c).max(1);
        assert_eq!(c % groups, 0, "channels {c} not divisible by groups {groups}");
        Self {
            groups,
            c,
            eps: 1e-5,
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            ggamma: vec![0.0; c],
            gbeta: vec![0.0; c],
        }
    }

    /// Groups of up to 8 channels, shrinking for narrow layers.
    pub fn with_default_groups(c: usize) -> Self {
        let mut g = c.min(8);
        while c % g != 0 {
            g -= 1;
        }
        Self::new(c, g)
    }

    pub fn forward(&self, x: &FeatMap) -> (FeatMap, GnCache) {
        assert_eq!(x.c, self.c, "groupnorm channels");
        let spatial = x.spatial_len();
        let per_group = self.c / self.groups;
        let n = (per_group * spatial) as f64;
        let mut y = FeatMap::zeros(x.c, x.dhw);
        let mut mean = vec![0.0; self.groups];
        let mut inv_std = vec![0.0; self.groups];

        for g in 0..self.groups {
            let lo = g * per_group * spatial;
            let hi = lo + per_group * spatial;
            let slice = &x.data[lo..hi];
            let m: f64 = slice.iter().sum::<f64>() / n;
            let var: f64 = slice.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let istd = 1.0 / (var + self.eps).sqrt();
            mean[g] = m;
            inv_std[g] = istd;
            for cc in 0..per_group {
                let ch = g * per_group + cc;
                let gamma = self.gamma[ch];
                let beta = self.beta[ch];
                let xin = &x.data[ch * spatial..(ch + 1) * spatial];
                let yout = &mut y.data[ch * spatial..(ch + 1) * spatial];
                for (o, &i) in yout.iter_mut().zip(xin) {
                    *o = gamma * (i - m) * istd + beta;
                }
            }
        }
        (y, GnCache { mean, inv_std })
    }

    pub fn backward(&mut self, x: &FeatMap, cache: &GnCache, gy: &FeatMap) -> FeatMap {
        let spatial = x.spatial_len();
        let per_group = self.c / self.groups;
        let n = (per_group * spatial) as f64;
        let mut gx = FeatMap::zeros(x.c, x.dhw);

        for g in 0..self.groups {
            let m = cache.mean[g];
            let istd = cache.inv_std[g];
            // First pass: per-channel param grads and the two group sums.
            let mut sum_gxhat = 0.0;
            let mut sum_gxhat_xhat = 0.0;
            for cc in 0..per_group {
                let ch = g * per_group + cc;
                let gamma = self.gamma[ch];
                let xin = &x.data[ch * spatial..(ch + 1) * spatial];
                let gout = &gy.data[ch * spatial..(ch + 1) * spatial];
                let mut gg = 0.0;
                let mut gb = 0.0;
                for (&xi, &go) in xin.iter().zip(gout) {
                    let xhat = (xi - m) * istd;
                    gg += go * xhat;
                    gb += go;
                    let gxhat = go * gamma;
                    sum_gxhat += gxhat;
                    sum_gxhat_xhat += gxhat * xhat;
                }
                self.ggamma[ch] += gg;
                self.gbeta[ch] += gb;
            }
            // Second pass: input grads.
            for cc in 0..per_group {
                let ch = g * per_group + cc;
                let gamma = self.gamma[ch];
                let xin = &x.data[ch * spatial..(ch + 1) * spatial];
                let gout = &gy.data[ch * spatial..(ch + 1) * spatial];
                let gxc = &mut gx.data[ch * spatial..(ch + 1) * spatial];
                for ((gx_i, &xi), &go) in gxc.iter_mut().zip(xin).zip(gout) {
                    let xhat = (xi - m) * istd;
                    let gxhat = go * gamma;
                    *gx_i = istd * (gxhat - sum_gxhat / n - xhat * sum_gxhat_xhat / n);
                }
            }
        }
        gx
    }
}

impl Params for GroupNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        f(&join_name(prefix, "gamma"), &mut self.gamma, &mut self.ggamma);
        f(&join_name(prefix, "beta"), &mut self.beta, &mut self.gbeta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalizes_each_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = FeatMap::zeros(4, [3, 3, 3]);
        for v in &mut x.data {
            *v = rng.gen_range(-2.0..5.0);
        }
        let gn = GroupNorm::new(4, 2);
        let (y, _) = gn.forward(&x);
        let spatial = x.spatial_len();
        for g in 0..2 {
            let slice = &y.data[g * 2 * spatial..(g + 1) * 2 * spatial];
            let mean: f64 = slice.iter().sum::<f64>() / slice.len() as f64;
            let var: f64 = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / slice.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gn = GroupNorm::new(4, 2);
        // Non-trivial affine params.
        for i in 0..4 {
            gn.gamma[i] = 0.5 + 0.3 * i as f64;
            gn.beta[i] = -0.2 + 0.1 * i as f64;
        }
        let mut x = FeatMap::zeros(4, [2, 3, 2]);
        for v in &mut x.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let coeffs: Vec<f64> =
            (0..x.data.len()).map(|i| ((i % 5) as f64 - 2.0) / 2.0).collect();

        let (y, cache) = gn.forward(&x);
        let gy = FeatMap { c: y.c, dhw: y.dhw, data: coeffs.clone() };
        super::super::zero_grads(&mut gn);
        let gx = gn.backward(&x, &cache, &gy);
        let analytic = super::super::flat_grads(&mut gn);

        let loss = |m: &mut GroupNorm| -> f64 {
            m.forward(&x).0.data.iter().zip(&coeffs).map(|(y, c)| y * c).sum()
        };
        let pairs = super::super::testutil::finite_diff_check(&mut gn, loss, &analytic, 1e-5);
        let frac = super::super::testutil::match_fraction(&pairs, 1e-5);
        assert!(frac > 0.999, "gn param grad match fraction {frac}");

        for idx in [0usize, 7, 23, 41] {
            let mut xp = x.clone();
            xp.data[idx] += 1e-6;
            let lp: f64 =
                gn.forward(&xp).0.data.iter().zip(&coeffs).map(|(y, c)| y * c).sum();
            let mut xm = x.clone();
            xm.data[idx] -= 1e-6;
            let lm: f64 =
                gn.forward(&xm).0.data.iter().zip(&coeffs).map(|(y, c)| y * c).sum();
            let num = (lp - lm) / 2e-6;
            assert!(
                (gx.data[idx] - num).abs() < 1e-5,
                "gx[{idx}] {} vs {num}",
                gx.data[idx]
            );
        }
    }
}

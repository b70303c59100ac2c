//! Stochastic volume transformations for pre-training and fine-tuning, plus
//! intensity normalization.
//!
//! Pre-training draws one affine transform shared by every timepoint of a
//! sequence, then smooths and corrupts each timepoint independently.
//! Fine-tuning uses the heavier single-volume chain (crop/resize, flip,
//! affine, intensity shift, noise). All randomness comes from a caller-owned
//! seeded stream, so a fixed seed reproduces outputs bitwise on the same
//! platform.

use crate::error::{Error, Result};
use crate::volume::{Shape3, Volume};
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Pre-training augmentation parameters. Defaults are the full-scale values;
/// desk-scale configs shrink the voxel-denominated ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_max_rad: f64,
    pub translation_max_vox: f64,
    pub scale_range: (f64, f64),
    pub smooth_sigma_range: (f64, f64),
    pub noise_std_range: (f64, f64),
    pub per_transform_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_max_rad: 0.34,
            translation_max_vox: 15.0,
            scale_range: (0.9, 1.3),
            smooth_sigma_range: (0.25, 1.5),
            noise_std_range: (0.05, 0.09),
            per_transform_prob: 0.5,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.per_transform_prob) {
            return Err(Error::validation("per_transform_prob must be in [0, 1]"));
        }
        for (name, (lo, hi)) in [
            ("scale_range", self.scale_range),
            ("smooth_sigma_range", self.smooth_sigma_range),
            ("noise_std_range", self.noise_std_range),
        ] {
            if lo > hi {
                return Err(Error::validation(format!("{name} is empty: ({lo}, {hi})")));
            }
        }
        if self.rotation_max_rad < 0.0 || self.translation_max_vox < 0.0 {
            return Err(Error::validation("rotation/translation maxima must be >= 0"));
        }
        Ok(())
    }

    /// Identity configuration: nothing is ever applied.
    pub fn disabled() -> Self {
        Self { per_transform_prob: 0.0, ..Self::default() }
    }
}

/// Fine-tuning augmentation parameters. Crop minima are fractions of the
/// working resolution so desk-scale volumes crop proportionally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamAugmentParams {
    pub crop_min_frac: [f64; 3],
    pub flip_prob: f64,
    pub affine_prob: f64,
    pub rotation_max_rad: f64,
    pub scale_frac: f64,
    pub translation_max_vox: f64,
    pub intensity_shift_offset: f64,
    pub intensity_shift_prob: f64,
    pub noise_std: f64,
    pub noise_prob: f64,
}

impl Default for DownstreamAugmentParams {
    fn default() -> Self {
        Self {
            crop_min_frac: [90.0 / 150.0, 115.0 / 192.0, 115.0 / 192.0],
            flip_prob: 0.5,
            affine_prob: 0.7,
            rotation_max_rad: 0.1,
            scale_frac: 0.15,
            translation_max_vox: 5.0,
            intensity_shift_offset: 0.1,
            intensity_shift_prob: 0.5,
            noise_std: 0.1,
            noise_prob: 0.2,
        }
    }
}

impl DownstreamAugmentParams {
    /// Identity configuration used by evaluation paths and tests.
    pub fn disabled() -> Self {
        Self {
            crop_min_frac: [1.0, 1.0, 1.0],
            flip_prob: 0.0,
            affine_prob: 0.0,
            intensity_shift_prob: 0.0,
            noise_prob: 0.0,
            ..Self::default()
        }
    }
}

/// Training-set intensity statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub train_mean: f64,
    pub train_std: f64,
}

impl NormStats {
    pub fn new(train_mean: f64, train_std: f64) -> Result<Self> {
        if !(train_std > 0.0) {
            return Err(Error::validation(format!("train_std must be > 0, got {train_std}")));
        }
        Ok(Self { train_mean, train_std })
    }

    /// Accumulates mean and (population) std over a stream of volumes.
    pub fn compute<'a>(volumes: impl Iterator<Item = &'a Volume>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for v in volumes {
            for &x in v.as_slice() {
                count += 1;
                sum += x;
                sumsq += x * x;
            }
        }
        if count == 0 {
            return Err(Error::validation("cannot compute NormStats over zero voxels"));
        }
        let mean = sum / count as f64;
        let var = (sumsq / count as f64 - mean * mean).max(0.0);
        Self::new(mean, var.sqrt())
    }
}

/// How [`normalize`] uses the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormMode {
    /// `(v - mean) / std`.
    #[default]
    Zscore,
    /// `v - std`, the literal reading of the source protocol.
    StdSubtract,
}

/// Applies the configured normalization.
pub fn normalize(vol: &Volume, stats: &NormStats, mode: NormMode) -> Result<Volume> {
    if !(stats.train_std > 0.0) {
        return Err(Error::validation("train_std must be > 0"));
    }
    let data = match mode {
        NormMode::Zscore => vol.data().mapv(|v| (v - stats.train_mean) / stats.train_std),
        NormMode::StdSubtract => vol.data().mapv(|v| v - stats.train_std),
    };
    Volume::new(data)
}

/// An affine resampling: isotropic scale, per-axis rotations, translation.
/// Stored as the inverse map from output voxel to input coordinate.
#[derive(Debug, Clone)]
struct AffineDraw {
    /// Inverse linear map, row-major 3x3 over (d, h, w) coordinates.
    inv: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl AffineDraw {
    fn sample(params: &AugmentParams, rng: &mut ChaCha8Rng) -> Self {
        let r = params.rotation_max_rad;
        let angles = [rng.gen_range(-r..=r), rng.gen_range(-r..=r), rng.gen_range(-r..=r)];
        let t = params.translation_max_vox;
        let translation = [rng.gen_range(-t..=t), rng.gen_range(-t..=t), rng.gen_range(-t..=t)];
        let (lo, hi) = params.scale_range;
        let scale = rng.gen_range(lo..=hi);
        Self::build(angles, translation, scale)
    }

    fn sample_downstream(params: &DownstreamAugmentParams, rng: &mut ChaCha8Rng) -> Self {
        let r = params.rotation_max_rad;
        let angles = [rng.gen_range(-r..=r), rng.gen_range(-r..=r), rng.gen_range(-r..=r)];
        let t = params.translation_max_vox;
        let translation = [rng.gen_range(-t..=t), rng.gen_range(-t..=t), rng.gen_range(-t..=t)];
        let s = params.scale_frac;
        let scale = rng.gen_range(1.0 - s..=1.0 + s);
        Self::build(angles, translation, scale)
    }

    /// Forward map is `out = R·s·(in − c) + c + t`; this stores
    /// `in = (1/s)·Rᵀ·(out − c − t) + c`.
    fn build(angles: [f64; 3], translation: [f64; 3], scale: f64) -> Self {
        let rot = compose_rotations(angles);
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = rot[j][i] / scale; // transpose / scale
            }
        }
        Self { inv, translation }
    }
}

/// Rotation about array axis 0 mixes (h, w); axis 1 mixes (d, w); axis 2
/// mixes (d, h). Composed in that order.
fn compose_rotations(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let planes = [(1usize, 2usize), (0, 2), (0, 1)];
    let mut m = identity3();
    for (axis, &(a, b)) in planes.iter().enumerate() {
        let (sin, cos) = angles[axis].sin_cos();
        let mut r = identity3();
        r[a][a] = cos;
        r[a][b] = -sin;
        r[b][a] = sin;
        r[b][b] = cos;
        m = mat_mul(&r, &m);
    }
    m
}

fn identity3() -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Trilinear sample with zero padding outside the field of view.
fn sample_trilinear(data: &Array3<f64>, p: [f64; 3]) -> f64 {
    let shape = data.shape();
    let mut acc = 0.0;
    let base: [isize; 3] = [p[0].floor() as isize, p[1].floor() as isize, p[2].floor() as isize];
    let frac = [p[0] - base[0] as f64, p[1] - base[1] as f64, p[2] - base[2] as f64];
    for corner in 0..8usize {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        let mut inside = true;
        for axis in 0..3 {
            let off = (corner >> axis) & 1;
            let coord = base[axis] + off as isize;
            w *= if off == 1 { frac[axis] } else { 1.0 - frac[axis] };
            if coord < 0 || coord >= shape[axis] as isize {
                inside = false;
                break;
            }
            idx[axis] = coord as usize;
        }
        if inside && w != 0.0 {
            acc += w * data[[idx[0], idx[1], idx[2]]];
        }
    }
    acc
}

fn apply_affine(vol: &Volume, draw: &AffineDraw) -> Volume {
    let shape = vol.shape();
    let c = [
        (shape.d() as f64 - 1.0) / 2.0,
        (shape.h() as f64 - 1.0) / 2.0,
        (shape.w() as f64 - 1.0) / 2.0,
    ];
    let data = Array3::from_shape_fn((shape.d(), shape.h(), shape.w()), |(z, y, x)| {
        let out = [z as f64, y as f64, x as f64];
        let mut rel = [0.0; 3];
        for i in 0..3 {
            rel[i] = out[i] - c[i] - draw.translation[i];
        }
        let mut src = [0.0; 3];
        for i in 0..3 {
            src[i] = c[i] + (0..3).map(|j| draw.inv[i][j] * rel[j]).sum::<f64>();
        }
        sample_trilinear(vol.data(), src)
    });
    Volume::new(data).expect("affine of finite volume is finite")
}

/// Separable Gaussian smoothing, zero-padded at the borders. `sigma <= 0`
/// is the identity.
fn gaussian_smooth(vol: &Volume, sigma: f64) -> Volume {
    if sigma <= 0.0 {
        return vol.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }

    let mut data = vol.data().clone();
    for axis in 0..3 {
        let shape = [data.shape()[0], data.shape()[1], data.shape()[2]];
        let mut next = Array3::zeros((shape[0], shape[1], shape[2]));
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let idx = [z as isize, y as isize, x as isize];
                    let mut acc = 0.0;
                    for (ki, kw) in kernel.iter().enumerate() {
                        let mut src = idx;
                        src[axis] += ki as isize - radius;
                        if src[axis] < 0 || src[axis] >= shape[axis] as isize {
                            continue;
                        }
                        acc += kw * data[[src[0] as usize, src[1] as usize, src[2] as usize]];
                    }
                    next[[z, y, x]] = acc;
                }
            }
        }
        data = next;
    }
    Volume::new(data).expect("smoothing preserves finiteness")
}

fn add_gaussian_noise(vol: &Volume, std: f64, rng: &mut ChaCha8Rng) -> Volume {
    if std <= 0.0 {
        return vol.clone();
    }
    let normal = Normal::new(0.0, std).expect("std > 0");
    let data = vol.data().mapv(|v| v + normal.sample(rng));
    Volume::new(data).expect("noise preserves finiteness")
}

fn check_uniform_shapes(seq_volumes: &[Volume]) -> Result<Shape3> {
    let first = seq_volumes
        .first()
        .ok_or_else(|| Error::validation("cannot augment an empty sequence"))?
        .shape();
    for v in seq_volumes {
        if v.shape() != first {
            return Err(Error::ShapeMismatch {
                expected: first.to_string(),
                got: v.shape().to_string(),
            });
        }
    }
    Ok(first)
}

/// Pre-training augmentation: one affine draw shared by all timepoints, then
/// independent smoothing and noise per timepoint. Each of the three
/// transforms fires with `per_transform_prob`.
pub fn pretrain_augment(
    seq_volumes: &[Volume],
    params: &AugmentParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Volume>> {
    params.validate()?;
    check_uniform_shapes(seq_volumes)?;

    let affine = if rng.gen_bool(params.per_transform_prob) {
        Some(AffineDraw::sample(params, rng))
    } else {
        None
    };

    let mut out = Vec::with_capacity(seq_volumes.len());
    for vol in seq_volumes {
        let mut v = match &affine {
            Some(draw) => apply_affine(vol, draw),
            None => vol.clone(),
        };
        if rng.gen_bool(params.per_transform_prob) {
            let (lo, hi) = params.smooth_sigma_range;
            let sigma = rng.gen_range(lo..=hi);
            v = gaussian_smooth(&v, sigma);
        }
        if rng.gen_bool(params.per_transform_prob) {
            let (lo, hi) = params.noise_std_range;
            let std = rng.gen_range(lo..=hi);
            v = add_gaussian_noise(&v, std, rng);
        }
        out.push(v);
    }
    Ok(out)
}

/// Two independent pre-training augmentations of the same sequence.
pub fn make_two_views(
    seq_volumes: &[Volume],
    params: &AugmentParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Volume>, Vec<Volume>)> {
    let view_i = pretrain_augment(seq_volumes, params, rng)?;
    let view_j = pretrain_augment(seq_volumes, params, rng)?;
    Ok((view_i, view_j))
}

/// Trilinear resize to `target`.
fn resize(vol: &Volume, target: Shape3) -> Volume {
    let src_shape = vol.shape();
    if src_shape == target {
        return vol.clone();
    }
    let ratio = [
        src_shape.d() as f64 / target.d() as f64,
        src_shape.h() as f64 / target.h() as f64,
        src_shape.w() as f64 / target.w() as f64,
    ];
    let data = Array3::from_shape_fn((target.d(), target.h(), target.w()), |(z, y, x)| {
        let out = [z as f64, y as f64, x as f64];
        let mut src = [0.0; 3];
        for i in 0..3 {
            src[i] = (out[i] + 0.5) * ratio[i] - 0.5;
        }
        sample_trilinear(vol.data(), src)
    });
    Volume::new(data).expect("resize preserves finiteness")
}

/// Fine-tuning augmentation chain, applied in order: random crop + resize
/// back to the working resolution, horizontal flip (width axis), affine,
/// intensity shift, Gaussian noise.
pub fn downstream_augment(
    vol: &Volume,
    params: &DownstreamAugmentParams,
    rng: &mut ChaCha8Rng,
) -> Result<Volume> {
    let shape = vol.shape();
    let mut sizes = [0usize; 3];
    for axis in 0..3 {
        let full = shape.0[axis];
        let min = ((full as f64) * params.crop_min_frac[axis]).round() as usize;
        let min = min.clamp(1, full);
        sizes[axis] = rng.gen_range(min..=full);
    }
    let mut offsets = [0usize; 3];
    for axis in 0..3 {
        offsets[axis] = rng.gen_range(0..=shape.0[axis] - sizes[axis]);
    }
    let cropped = vol.data().slice(ndarray::s![
        offsets[0]..offsets[0] + sizes[0],
        offsets[1]..offsets[1] + sizes[1],
        offsets[2]..offsets[2] + sizes[2]
    ]);
    let mut v = resize(&Volume::new(cropped.to_owned())?, shape);

    if rng.gen_bool(params.flip_prob) {
        let view = v.data().slice(ndarray::s![.., .., ..;-1]);
        v = Volume::new(view.as_standard_layout().into_owned())?;
    }

    if rng.gen_bool(params.affine_prob) {
        let draw = AffineDraw::sample_downstream(params, rng);
        v = apply_affine(&v, &draw);
    }

    if rng.gen_bool(params.intensity_shift_prob) {
        let o = params.intensity_shift_offset;
        let shift = rng.gen_range(-o..=o);
        v = Volume::new(v.data().mapv(|x| x + shift))?;
    }

    if rng.gen_bool(params.noise_prob) {
        v = add_gaussian_noise(&v, params.noise_std, rng);
    }

    Ok(v)
}

//! Paired pre/post samples and the synthetic toy datasets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::conditioning::ConditionPayload;
use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

/// One training record: pre-event `z_a`, post-event `z_b` and its condition.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub pre: Tensor,
    pub post: Tensor,
    pub cond: ConditionPayload,
}

impl PairedSample {
    pub fn new(pre: Tensor, post: Tensor, cond: ConditionPayload) -> Result<Self> {
        pre.check_same_shape(&post)?;
        cond.validate()?;
        Ok(Self { pre, post, cond })
    }
}

/// Horizontal shift applied to label 0 (label 1 shifts by the negative).
pub const POINT_SHIFT: f64 = 2.0;
pub const POINT_JITTER: f64 = 0.1;

/// 2-D points: `pre ~ N(0, I)`, label uniform in {0, 1},
/// `post = pre ± (2, 0) + N(0, 0.1²)` with `+` for label 0.
pub fn make_pointcloud_dataset(n: usize, rng: &mut RngState) -> Result<Vec<PairedSample>> {
    if n == 0 {
        return Err(Error::InvalidInput("dataset size must be at least 1".into()));
    }
    (0..n)
        .map(|_| {
            let pre = [rng.standard_normal(), rng.standard_normal()];
            let label = rng.range(0, 2);
            let jitter = [
                POINT_JITTER * rng.standard_normal(),
                POINT_JITTER * rng.standard_normal(),
            ];
            point_sample(pre, label, jitter)
        })
        .collect()
}

pub fn point_sample(pre: [f64; 2], label: usize, jitter: [f64; 2]) -> Result<PairedSample> {
    let shift = if label == 0 { POINT_SHIFT } else { -POINT_SHIFT };
    PairedSample::new(
        Tensor::from_vec(pre.to_vec())?,
        Tensor::from_vec(vec![pre[0] + shift + jitter[0], pre[1] + jitter[1]])?,
        ConditionPayload::Label(label),
    )
}

/// Background and insertion intensities of the scene task.
pub const SCENE_DARK: f64 = 0.2;
pub const SCENE_LIGHT: f64 = 0.4;
pub const SCENE_FILL: f64 = 0.9;
pub const SCENE_CHECKER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the pixel noise on the pre-event image.
    pub noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            noise: 0.05,
        }
    }
}

pub fn checkerboard(height: usize, width: usize) -> Result<Tensor> {
    let mut data = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            data[y * width + x] = if (y / SCENE_CHECKER + x / SCENE_CHECKER).is_multiple_of(2) {
                SCENE_DARK
            } else {
                SCENE_LIGHT
            };
        }
    }
    Tensor::new(vec![1, height, width], data)
}

pub fn rectangle_mask(height: usize, width: usize, top: usize, left: usize, rh: usize, rw: usize) -> Result<Tensor> {
    if top + rh > height || left + rw > width {
        return Err(Error::InvalidInput(format!("rectangle exceeds {height}x{width} image")));
    }
    let mut data = vec![0.0; height * width];
    for y in top..top + rh {
        data[y * width + left..y * width + left + rw]
            .iter_mut()
            .for_each(|v| *v = 1.0);
    }
    Tensor::new(vec![height, width], data)
}

/// Copies `pre` and sets every masked pixel to the insertion intensity.
pub fn apply_layout(pre: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    if !pre.len().is_multiple_of(h * w) || pre.shape()[pre.rank() - 2..] != [h, w] {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: pre.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut data = pre.data().to_vec();
    for (i, v) in data.iter_mut().enumerate() {
        if mask.data()[i % plane] == 1.0 {
            *v = SCENE_FILL;
        }
    }
    Tensor::new(pre.shape().to_vec(), data)
}

/// Random axis-aligned rectangle covering 10–40 % of the image.
fn random_rectangle(height: usize, width: usize, rng: &mut RngState) -> Result<Tensor> {
    let area = (height * width) as f64;
    loop {
        let rh = rng.range(1, height + 1);
        let rw = rng.range(1, width + 1);
        let frac = (rh * rw) as f64 / area;
        if (0.1..=0.4).contains(&frac) {
            let top = rng.range(0, height - rh + 1);
            let left = rng.range(0, width - rw + 1);
            return rectangle_mask(height, width, top, left, rh, rw);
        }
    }
}

/// Gray scenes: checkerboard plus noise before, a filled rectangle after; the
/// rectangle is the layout condition.
pub fn make_scene_dataset_with(n: usize, spec: SceneSpec, rng: &mut RngState) -> Result<Vec<PairedSample>> {
    if n == 0 {
        return Err(Error::InvalidInput("dataset size must be at least 1".into()));
    }
    if spec.height < 4 || spec.width < 4 || spec.noise < 0.0 {
        return Err(Error::InvalidConfig(format!("invalid scene spec {spec:?}")));
    }
    let base = checkerboard(spec.height, spec.width)?;
    (0..n)
        .map(|_| {
            let mask = random_rectangle(spec.height, spec.width, rng)?;
            let pre = base.clone();
            let pre = if spec.noise > 0.0 {
                let mut d = pre.into_data();
                d.iter_mut().for_each(|v| *v += spec.noise * rng.standard_normal());
                Tensor::new(vec![1, spec.height, spec.width], d)?
            } else {
                pre
            };
            let post = apply_layout(&pre, &mask)?;
            PairedSample::new(pre, post, ConditionPayload::Layout(mask))
        })
        .collect()
}

pub fn make_scene_dataset(n: usize, height: usize, width: usize, rng: &mut RngState) -> Result<Vec<PairedSample>> {
    make_scene_dataset_with(
        n,
        SceneSpec {
            height,
            width,
            ..SceneSpec::default()
        },
        rng,
    )
}

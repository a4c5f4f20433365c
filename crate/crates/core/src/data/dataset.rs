use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub interval_minutes: u32,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub steps: usize,
}

/// A grid time series: frames of shape `(steps, C, H, W)` with non-negative values.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficDataset {
    pub meta: DatasetMeta,
    pub frames: Tensor<f32>,
}

impl TrafficDataset {
    pub fn new(name: impl Into<String>, interval_minutes: u32, frames: Tensor<f32>) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::InvalidShape(format!(
                "frames must be (steps, C, H, W), got {:?}",
                frames.shape()
            )));
        }
        if let Some(i) = frames.data().iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frame value {} at flat index {i} is negative or non-finite",
                frames.data()[i]
            )));
        }
        let s = frames.shape();
        let meta = DatasetMeta {
            name: name.into(),
            interval_minutes,
            steps: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
        };
        Ok(TrafficDataset { meta, frames })
    }

    pub fn steps(&self) -> usize {
        self.meta.steps
    }

    pub fn frame_len(&self) -> usize {
        self.meta.channels * self.meta.height * self.meta.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames.data()[t * n..(t + 1) * n]
    }
}

/// Per-channel extrema used for min-max scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl ChannelStats {
    /// Statistics over frames `[0, end)` of a `(steps, C, H, W)` tensor.
    pub fn fit(frames: &Tensor<f32>, end: usize) -> Result<Self> {
        if frames.rank() != 4 || end == 0 || end > frames.dim(0) {
            return Err(Error::InvalidShape(format!(
                "cannot fit statistics on the first {end} frames of {:?}",
                frames.shape()
            )));
        }
        let (c, hw) = (frames.dim(1), frames.dim(2) * frames.dim(3));
        let mut min = vec![f32::INFINITY; c];
        let mut max = vec![f32::NEG_INFINITY; c];
        for t in 0..end {
            for ch in 0..c {
                let off = (t * c + ch) * hw;
                for &v in &frames.data()[off..off + hw] {
                    min[ch] = min[ch].min(v);
                    max[ch] = max[ch].max(v);
                }
            }
        }
        Ok(ChannelStats { min, max })
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// Maps every element through `f(value, min, max)` of its channel; `axis` is the channel axis.
    fn apply(&self, x: &Tensor<f32>, axis: usize, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f32>> {
        if axis >= x.rank() || x.dim(axis) != self.channels() {
            return Err(Error::shape("channel stats", x.shape(), &[self.channels()]));
        }
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let c = self.channels();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / inner) % c;
            *v = f(*v as f64, self.min[ch] as f64, self.max[ch] as f64) as f32;
        }
        Ok(out)
    }

    /// `(x − min)/(max − min)`; channels with `max == min` map to 0.
    pub fn normalize(&self, x: &Tensor<f32>, channel_axis: usize) -> Result<Tensor<f32>> {
        self.apply(x, channel_axis, |v, lo, hi| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
    }

    pub fn denormalize(&self, x: &Tensor<f32>, channel_axis: usize) -> Result<Tensor<f32>> {
        self.apply(x, channel_axis, |v, lo, hi| if hi > lo { v * (hi - lo) + lo } else { lo })
    }
}

//! Datasets, normalization, windows and splits.

mod dataset;
pub mod ingest;
pub mod io;
mod synth;
mod window;

pub use dataset::{ChannelStats, DatasetMeta, TrafficDataset};
pub use io::{load_dataset, save_dataset};
pub use synth::{synth_traffic, SynthSpec};
pub use window::{
    batch, make_windows, make_windows_multi, materialize, split, split_sizes, Partition, Split, Window,
    WindowSample,
};

use crate::error::Result;
use crate::numerics::Tensor;

/// Chronological 7:1:2 split.
pub const DEFAULT_SPLIT: [usize; 3] = [7, 1, 2];

/// A dataset ready for training: windows split chronologically, statistics
/// fitted on the frames reachable from training windows only, and the
/// normalized series alongside the raw one.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw: Tensor<f32>,
    pub normalized: Tensor<f32>,
    pub stats: ChannelStats,
    pub windows: Partition<Window>,
    pub steps: usize,
}

impl Prepared {
    pub fn new(ds: &TrafficDataset, steps: usize, ratios: [usize; 3]) -> Result<Self> {
        let all = make_windows(ds, steps)?;
        let windows = split(&all, ratios)?;
        let end = windows.train.last().map_or(steps, |w| w.target_index() + 1);
        let stats = ChannelStats::fit(&ds.frames, end)?;
        Ok(Prepared {
            raw: ds.frames.clone(),
            normalized: stats.normalize(&ds.frames, 1)?,
            stats,
            windows,
            steps,
        })
    }

    /// Frames covered by the training windows (inputs and targets).
    pub fn train_frame_end(&self) -> usize {
        self.windows.train.last().map_or(0, |w| w.target_index() + 1)
    }

    /// Normalized inputs and targets of `windows`.
    pub fn batch(&self, windows: &[Window]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        batch(&[&self.normalized], windows)
    }

    /// Raw (denormalized) targets of `windows`.
    pub fn raw_targets(&self, windows: &[Window]) -> Result<Tensor<f32>> {
        Ok(batch(&[&self.raw], windows)?.1)
    }
}

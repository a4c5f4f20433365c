//! Sliding windows and chronological splits.

use serde::{Deserialize, Serialize};

use super::dataset::TrafficDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Input frames `[start, start + steps)` of dataset `source`; the target is frame `start + steps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub source: usize,
    pub start: usize,
    pub steps: usize,
}

impl Window {
    pub fn target_index(&self) -> usize {
        self.start + self.steps
    }
}

/// A materialized window: input `(steps, C, H, W)` and target `(C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

pub fn make_windows(ds: &TrafficDataset, steps: usize) -> Result<Vec<Window>> {
    windows_for(0, ds.steps(), steps)
}

/// Windows over several series; none crosses from one series into the next.
pub fn make_windows_multi(sets: &[&TrafficDataset], steps: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for (i, ds) in sets.iter().enumerate() {
        out.extend(windows_for(i, ds.steps(), steps)?);
    }
    Ok(out)
}

fn windows_for(source: usize, total: usize, steps: usize) -> Result<Vec<Window>> {
    if steps == 0 || total <= steps {
        return Err(Error::InvalidConfig(format!(
            "{total} frames cannot form a window of {steps} input steps plus a target"
        )));
    }
    Ok((0..total - steps).map(|start| Window { source, start, steps }).collect())
}

fn source<'a>(sources: &[&'a Tensor<f32>], w: &Window) -> Result<&'a Tensor<f32>> {
    sources
        .get(w.source)
        .copied()
        .ok_or_else(|| Error::InvalidConfig(format!("window refers to missing series {}", w.source)))
}

/// Copies a window's frames out of its series (each of shape `(steps_total, C, H, W)`).
pub fn materialize(sources: &[&Tensor<f32>], w: &Window) -> Result<WindowSample> {
    let frames = source(sources, w)?;
    let s = frames.shape();
    if s.len() != 4 || w.target_index() >= s[0] {
        return Err(Error::InvalidShape(format!("window {w:?} out of range for {s:?}")));
    }
    let n = s[1] * s[2] * s[3];
    let d = frames.data();
    Ok(WindowSample {
        input: Tensor::new(
            vec![w.steps, s[1], s[2], s[3]],
            d[w.start * n..w.target_index() * n].to_vec(),
        )?,
        target: Tensor::new(vec![s[1], s[2], s[3]], d[w.target_index() * n..][..n].to_vec())?,
    })
}

/// Stacks windows into `(B, steps, C, H, W)` inputs and `(B, C, H, W)` targets.
pub fn batch(sources: &[&Tensor<f32>], windows: &[Window]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
    let s = source(sources, first)?.shape().to_vec();
    let n = s[1] * s[2] * s[3];
    let mut xs = Vec::with_capacity(windows.len() * first.steps * n);
    let mut ys = Vec::with_capacity(windows.len() * n);
    for w in windows {
        let frames = source(sources, w)?;
        if w.steps != first.steps || frames.shape() != s || w.target_index() >= s[0] {
            return Err(Error::InvalidShape(format!("window {w:?} does not fit {s:?}")));
        }
        let d = frames.data();
        xs.extend_from_slice(&d[w.start * n..w.target_index() * n]);
        ys.extend_from_slice(&d[w.target_index() * n..][..n]);
    }
    Ok((
        Tensor::new(vec![windows.len(), first.steps, s[1], s[2], s[3]], xs)?,
        Tensor::new(vec![windows.len(), s[1], s[2], s[3]], ys)?,
    ))
}

/// Which chronological partition to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition<W> {
    pub train: Vec<W>,
    pub val: Vec<W>,
    pub test: Vec<W>,
}

impl<W> Partition<W> {
    pub fn get(&self, s: Split) -> &[W] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Partition sizes `⌊n·a/Σ⌋`, `⌊n·b/Σ⌋` and the remainder.
pub fn split_sizes(n: usize, ratios: [usize; 3]) -> Result<[usize; 3]> {
    let total: usize = ratios.iter().sum();
    if ratios.contains(&0) {
        return Err(Error::InvalidConfig(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sizes = |n: usize| {
        let a = n * ratios[0] / total;
        let b = n * ratios[1] / total;
        [a, b, n - a - b]
    };
    let s = sizes(n);
    if s.contains(&0) {
        let min = (1..).find(|&m| !sizes(m).contains(&0)).unwrap_or(total);
        return Err(Error::InvalidConfig(format!(
            "{n} windows split {}:{}:{} leaves an empty partition; at least {min} windows are required",
            ratios[0], ratios[1], ratios[2]
        )));
    }
    Ok(s)
}

/// Contiguous, unshuffled partition in the given order.
pub fn split<W: Clone>(items: &[W], ratios: [usize; 3]) -> Result<Partition<W>> {
    let [a, b, _] = split_sizes(items.len(), ratios)?;
    Ok(Partition {
        train: items[..a].to_vec(),
        val: items[a..a + b].to_vec(),
        test: items[a + b..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(steps: usize) -> TrafficDataset {
        let frames = Tensor::from_fn(vec![steps, 1, 1, 2], |i| i as f32).unwrap();
        TrafficDataset::new("t", 30, frames).unwrap()
    }

    #[test]
    fn counts_and_indexing() {
        let d = ds(10);
        let ws = make_windows(&d, 4).unwrap();
        assert_eq!(ws.len(), 6);
        for (k, w) in ws.iter().enumerate() {
            let s = materialize(&[&d.frames], w).unwrap();
            assert_eq!(s.input.data(), &d.frames.data()[k * 2..(k + 4) * 2]);
            assert_eq!(s.target.data(), d.frame(k + 4));
        }
        assert!(make_windows(&ds(4), 4).is_err());
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_sizes(100, [7, 1, 2]).unwrap(), [70, 10, 20]);
        assert_eq!(split_sizes(10, [7, 1, 2]).unwrap(), [7, 1, 2]);
        let err = split_sizes(5, [7, 1, 2]).unwrap_err().to_string();
        assert!(err.contains("at least 10"), "{err}");
        assert!(split_sizes(10, [7, 0, 2]).is_err());
    }

    #[test]
    fn split_is_chronological() {
        let items: Vec<usize> = (0..37).collect();
        let p = split(&items, [7, 1, 2]).unwrap();
        assert!(p.train.iter().max() < p.val.iter().min());
        assert!(p.val.iter().max() < p.test.iter().min());
        assert_eq!(p.train.len() + p.val.len() + p.test.len(), 37);
    }
}

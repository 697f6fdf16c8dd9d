use std::path::PathBuf;

use image::DynamicImage;

use super::{crop_quadratic, ExtractionParams, VideoRecord, VideoSource};
use crate::error::{Error, Result};

/// One point of the sampling grid `t = k / rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledFrame {
    /// Position on the sampling grid; becomes the frame index.
    pub ordinal: usize,
    pub time: f64,
    /// Index of the nearest decoded frame.
    pub source_frame: usize,
}

#[derive(Debug, Clone)]
pub struct ExtractedFrame {
    pub frame_index: usize,
    pub source_frame: usize,
    pub time: f64,
    pub image: DynamicImage,
}

/// Index of the timestamp closest to `t`; ties go to the earlier frame.
pub fn nearest_frame(timestamps: &[f64], t: f64) -> Option<usize> {
    if timestamps.is_empty() {
        return None;
    }
    let after = timestamps.partition_point(|&ts| ts < t);
    if after == 0 {
        return Some(0);
    }
    if after == timestamps.len() {
        return Some(after - 1);
    }
    let (before, next) = (timestamps[after - 1], timestamps[after]);
    Some(if t - before <= next - t { after - 1 } else { after })
}

/// Sampling grid anchored at zero: `min(max_frames, floor(duration * rate))`
/// points spaced `1 / rate` apart, each mapped to its nearest decoded frame.
pub fn sample_plan(duration: f64, timestamps: &[f64], params: &ExtractionParams) -> Vec<SampledFrame> {
    if timestamps.is_empty() {
        return Vec::new();
    }
    (0..params.frame_count(duration))
        .map(|k| {
            let time = k as f64 / params.rate_hz;
            SampledFrame {
                ordinal: k,
                time,
                source_frame: nearest_frame(timestamps, time).expect("non-empty timeline"),
            }
        })
        .collect()
}

/// Samples `video` on the fixed-rate grid and applies its crop window.
pub fn extract_frames(
    video: &VideoRecord,
    source: &mut dyn VideoSource,
    params: &ExtractionParams,
) -> Result<Vec<ExtractedFrame>> {
    params.validate()?;
    let plan = sample_plan(video.duration, &source.info().timestamps, params);
    if plan.is_empty() {
        return Err(Error::EmptyVideo {
            path: PathBuf::from(&video.file),
        });
    }
    let mut wanted: Vec<usize> = plan.iter().map(|s| s.source_frame).collect();
    wanted.dedup();
    let decoded = source.frames_at(&wanted)?;

    plan.iter()
        .map(|s| {
            let pos = wanted.binary_search(&s.source_frame).expect("planned frame decoded");
            let image = match video.crop_window {
                Some(window) => crop_quadratic(&decoded[pos], window)?,
                None => decoded[pos].clone(),
            };
            Ok(ExtractedFrame {
                frame_index: s.ordinal,
                source_frame: s.source_frame,
                time: s.time,
                image,
            })
        })
        .collect()
}

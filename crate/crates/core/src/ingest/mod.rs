//! Source recordings to a homogenized, manifest-tracked frame dataset.
//!
//! Layout on disk:
//!
//! ```text
//! data/<class>/<video_id>.<ext>          source videos and still images
//! data/crops.csv                         video_id,x,y,side   (optional)
//! data/videos.csv                        video_id,source_url,probe,notes   (optional)
//! frames/<class>/<video_id>_frame<k>.png extracted, cropped frames
//! ```

mod image_ops;
mod manifest;
mod sampling;
mod video;

pub use image_ops::{crop_quadratic, prepare_input, Normalization, PreparedImage, INPUT_SIDE};
pub use manifest::{
    build_manifest, ingest, ClassCounts, DatasetLayout, DatasetManifest, FrameRef,
};
pub use sampling::{extract_frames, nearest_frame, sample_plan, ExtractedFrame, SampledFrame};
pub use video::{open_video, GifSource, VideoInfo, VideoSource, FfmpegSource};

use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    Convex,
    Linear,
}

impl std::str::FromStr for Probe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "convex" | "curved" => Ok(Probe::Convex),
            "linear" => Ok(Probe::Linear),
            other => Err(Error::Validation(format!("unknown probe type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Video,
    Image,
}

/// Square crop `(x, y)` top-left corner, `side` pixels wide and high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl CropWindow {
    pub fn new(x: u32, y: u32, side: u32) -> Self {
        CropWindow { x, y, side }
    }

    pub fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        let fits = |origin: u32, extent: u32| u64::from(origin) + u64::from(self.side) <= u64::from(extent);
        if self.side == 0 || !fits(self.x, width) || !fits(self.y, height) {
            return Err(Error::CropOutOfBounds {
                x: self.x,
                y: self.y,
                side: self.side,
                width,
                height,
            });
        }
        Ok(())
    }
}

/// One source recording (or still image) with its label and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub label: Class,
    pub media: MediaKind,
    /// Path relative to the data directory.
    pub file: String,
    #[serde(default)]
    pub source_url: String,
    pub probe: Probe,
    pub native_fps: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_window: Option<CropWindow>,
    #[serde(default)]
    pub expert_notes: String,
}

/// Frame sampling parameters: temporal rate and per-video cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionParams {
    pub rate_hz: f64,
    pub max_frames: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            rate_hz: 3.0,
            max_frames: 30,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::Validation(format!("rate must be > 0, got {}", self.rate_hz)));
        }
        if self.max_frames == 0 {
            return Err(Error::Validation("max_frames must be >= 1".into()));
        }
        Ok(())
    }

    /// `min(max_frames, floor(duration * rate))`.
    pub fn frame_count(&self, duration: f64) -> usize {
        if !(duration.is_finite() && duration > 0.0) {
            return 0;
        }
        // tolerate durations like 4.999999 s recovered from millisecond delays
        let candidates = (duration * self.rate_hz + 1e-9).floor() as usize;
        candidates.min(self.max_frames)
    }
}

/// A prepared training/inference sample.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub video_id: String,
    pub frame_index: usize,
    pub label: Class,
    pub pixels: PreparedImage,
}

impl FrameSample {
    pub fn load(frame: &FrameRef, frames_dir: &std::path::Path, side: u32) -> Result<FrameSample> {
        let path = frames_dir.join(&frame.file);
        let image = image::open(&path).map_err(|e| Error::Ingestion {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        Ok(FrameSample {
            video_id: frame.video_id.clone(),
            frame_index: frame.frame_index,
            label: frame.label,
            pixels: prepare_input(&image, side)?,
        })
    }
}

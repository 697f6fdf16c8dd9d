use std::io::{BufReader, Cursor, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, DynamicImage, RgbImage};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Timing of a decodable recording.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoInfo {
    pub fps: f64,
    pub duration: f64,
    /// Presentation time (seconds) of every decodable frame, ascending.
    pub timestamps: Vec<f64>,
}

impl VideoInfo {
    pub fn constant_rate(fps: f64, frame_count: usize) -> VideoInfo {
        VideoInfo {
            fps,
            duration: if fps > 0.0 { frame_count as f64 / fps } else { 0.0 },
            timestamps: (0..frame_count).map(|i| i as f64 / fps).collect(),
        }
    }
}

pub trait VideoSource {
    fn info(&self) -> &VideoInfo;

    /// Decodes the frames at the given (ascending) indices.
    fn frames_at(&mut self, indices: &[usize]) -> Result<Vec<DynamicImage>>;
}

/// Opens a recording with the decoder matching its extension.
///
/// Animated GIF is decoded in-process; other containers go through
/// `ffprobe`/`ffmpeg` when they are on `PATH`.
pub fn open_video(path: &Path) -> Result<Box<dyn VideoSource>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if ext == "gif" {
        return Ok(Box::new(GifSource::open(path)?));
    }
    if FfmpegSource::available() {
        return Ok(Box::new(FfmpegSource::open(path)?));
    }
    Err(Error::Ingestion {
        path: path.to_path_buf(),
        reason: format!("no decoder for .{ext} files (ffmpeg not found on PATH)"),
    })
}

/// Fully decoded animated GIF. Frame delays define the timeline.
pub struct GifSource {
    info: VideoInfo,
    frames: Vec<DynamicImage>,
}

impl GifSource {
    /// Zero frame delays are played back as 100 ms, as browsers do.
    const ZERO_DELAY_MS: f64 = 100.0;

    pub fn open(path: &Path) -> Result<GifSource> {
        let file = std::fs::File::open(path).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::decode(BufReader::new(file), path)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GifSource> {
        Self::decode(Cursor::new(bytes), Path::new("<upload>"))
    }

    fn decode<R: std::io::BufRead + std::io::Seek>(reader: R, path: &Path) -> Result<GifSource> {
        let fail = |e: image::ImageError| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let frames = GifDecoder::new(reader).map_err(fail)?.into_frames().collect_frames().map_err(fail)?;
        let mut timestamps = Vec::with_capacity(frames.len());
        let mut images = Vec::with_capacity(frames.len());
        let mut clock_ms = 0.0;
        for frame in frames {
            timestamps.push(clock_ms / 1000.0);
            let (num, den) = frame.delay().numer_denom_ms();
            let delay = f64::from(num) / f64::from(den.max(1));
            clock_ms += if delay > 0.0 { delay } else { Self::ZERO_DELAY_MS };
            images.push(DynamicImage::ImageRgba8(frame.into_buffer()));
        }
        let duration = clock_ms / 1000.0;
        let fps = if duration > 0.0 { images.len() as f64 / duration } else { 0.0 };
        Ok(GifSource {
            info: VideoInfo {
                fps,
                duration,
                timestamps,
            },
            frames: images,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

impl VideoSource for GifSource {
    fn info(&self) -> &VideoInfo {
        &self.info
    }

    fn frames_at(&mut self, indices: &[usize]) -> Result<Vec<DynamicImage>> {
        indices
            .iter()
            .map(|&i| {
                self.frames.get(i).cloned().ok_or_else(|| {
                    Error::Validation(format!("frame {i} out of range ({} frames)", self.frames.len()))
                })
            })
            .collect()
    }
}

/// Decoding through the ffmpeg command line tools.
pub struct FfmpegSource {
    path: PathBuf,
    width: u32,
    height: u32,
    info: VideoInfo,
}

#[derive(Deserialize)]
struct Probe {
    streams: Vec<ProbeStream>,
    format: Option<ProbeFormat>,
}

#[derive(Deserialize)]
struct ProbeStream {
    width: u32,
    height: u32,
    avg_frame_rate: String,
    nb_read_packets: Option<String>,
}

#[derive(Deserialize)]
struct ProbeFormat {
    duration: Option<String>,
}

fn parse_rate(rate: &str) -> Option<f64> {
    match rate.split_once('/') {
        Some((n, d)) => {
            let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
            (d != 0.0).then(|| n / d)
        }
        None => rate.parse().ok(),
    }
}

impl FfmpegSource {
    pub fn available() -> bool {
        ["ffmpeg", "ffprobe"].iter().all(|tool| {
            Command::new(tool)
                .arg("-version")
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .map(|s| s.success())
                .unwrap_or(false)
        })
    }

    pub fn open(path: &Path) -> Result<FfmpegSource> {
        let fail = |reason: String| Error::Ingestion {
            path: path.to_path_buf(),
            reason,
        };
        let output = Command::new("ffprobe")
            .args(["-v", "error", "-select_streams", "v:0", "-count_packets"])
            .args(["-show_entries", "stream=width,height,avg_frame_rate,nb_read_packets:format=duration"])
            .args(["-of", "json"])
            .arg(path)
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !output.status.success() {
            return Err(fail(String::from_utf8_lossy(&output.stderr).trim().to_string()));
        }
        let probe: Probe = serde_json::from_slice(&output.stdout).map_err(|e| fail(e.to_string()))?;
        let stream = probe.streams.into_iter().next().ok_or_else(|| fail("no video stream".into()))?;
        let fps = parse_rate(&stream.avg_frame_rate).filter(|f| *f > 0.0).ok_or_else(|| {
            fail(format!("unusable frame rate {:?}", stream.avg_frame_rate))
        })?;
        let packets = stream.nb_read_packets.and_then(|n| n.parse::<usize>().ok());
        let duration = probe.format.and_then(|f| f.duration).and_then(|d| d.parse::<f64>().ok());
        let frame_count = match (packets, duration) {
            (Some(n), _) => n,
            (None, Some(d)) => (d * fps).round() as usize,
            (None, None) => return Err(fail("cannot determine frame count".into())),
        };
        let mut info = VideoInfo::constant_rate(fps, frame_count);
        if let Some(d) = duration {
            info.duration = d;
        }
        Ok(FfmpegSource {
            path: path.to_path_buf(),
            width: stream.width,
            height: stream.height,
            info,
        })
    }
}

impl VideoSource for FfmpegSource {
    fn info(&self) -> &VideoInfo {
        &self.info
    }

    fn frames_at(&mut self, indices: &[usize]) -> Result<Vec<DynamicImage>> {
        if indices.is_empty() {
            return Ok(Vec::new());
        }
        let select = indices.iter().map(|i| format!("eq(n\\,{i})")).collect::<Vec<_>>().join("+");
        let mut child = Command::new("ffmpeg")
            .args(["-v", "error", "-i"])
            .arg(&self.path)
            .args(["-vf", &format!("select='{select}'"), "-vsync", "0"])
            .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Ingestion {
                path: self.path.clone(),
                reason: e.to_string(),
            })?;
        let mut raw = Vec::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_end(&mut raw)
            .map_err(|e| Error::Ingestion {
                path: self.path.clone(),
                reason: e.to_string(),
            })?;
        let _ = child.wait();
        let frame_bytes = (self.width * self.height * 3) as usize;
        if raw.len() < frame_bytes * indices.len() {
            return Err(Error::Ingestion {
                path: self.path.clone(),
                reason: format!("decoded {} of {} requested frames", raw.len() / frame_bytes.max(1), indices.len()),
            });
        }
        Ok(raw
            .chunks_exact(frame_bytes)
            .take(indices.len())
            .map(|chunk| {
                DynamicImage::ImageRgb8(
                    RgbImage::from_raw(self.width, self.height, chunk.to_vec()).expect("exact chunk size"),
                )
            })
            .collect())
    }
}

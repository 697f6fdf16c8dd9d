use std::io::Write;

use image::{DynamicImage, ImageFormat};
use lusnet_core::ingest::{FfmpegSource, GifSource, VideoSource};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Upload formats recognised by their leading bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Png,
    Jpeg,
    Bmp,
    Gif,
    Mp4,
    Webm,
    Avi,
}

impl MediaType {
    pub fn extension(self) -> &'static str {
        match self {
            MediaType::Png => "png",
            MediaType::Jpeg => "jpg",
            MediaType::Bmp => "bmp",
            MediaType::Gif => "gif",
            MediaType::Mp4 => "mp4",
            MediaType::Webm => "webm",
            MediaType::Avi => "avi",
        }
    }

    /// Containers that need ffmpeg to decode.
    pub fn needs_ffmpeg(self) -> bool {
        matches!(self, MediaType::Mp4 | MediaType::Webm | MediaType::Avi)
    }
}

pub fn sniff(bytes: &[u8]) -> Option<MediaType> {
    if bytes.len() >= 12 && &bytes[4..8] == b"ftyp" {
        return Some(MediaType::Mp4);
    }
    if bytes.starts_with(&[0x1A, 0x45, 0xDF, 0xA3]) {
        return Some(MediaType::Webm);
    }
    if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"AVI " {
        return Some(MediaType::Avi);
    }
    match image::guess_format(bytes).ok()? {
        ImageFormat::Png => Some(MediaType::Png),
        ImageFormat::Jpeg => Some(MediaType::Jpeg),
        ImageFormat::Bmp => Some(MediaType::Bmp),
        ImageFormat::Gif => Some(MediaType::Gif),
        _ => None,
    }
}

/// A decoded upload: a still image or a recording (single-frame GIFs count as stills).
pub enum Decoded {
    Image(DynamicImage),
    Video(Box<dyn VideoSource + Send>),
}

/// Keeps the temporary copy alive for as long as ffmpeg may read it.
struct TempVideo {
    _file: tempfile::NamedTempFile,
    source: FfmpegSource,
}

impl VideoSource for TempVideo {
    fn info(&self) -> &lusnet_core::ingest::VideoInfo {
        self.source.info()
    }

    fn frames_at(&mut self, indices: &[usize]) -> lusnet_core::Result<Vec<DynamicImage>> {
        self.source.frames_at(indices)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(MediaType, Decoded), ApiError> {
    let kind = sniff(bytes).ok_or_else(|| ApiError::unsupported("unrecognised media type"))?;
    let decoded = match kind {
        MediaType::Gif => {
            let mut gif = GifSource::from_bytes(bytes).map_err(|e| ApiError::unprocessable(e.to_string()))?;
            match gif.frame_count() {
                0 => return Err(ApiError::unprocessable("GIF has no frames")),
                1 => Decoded::Image(gif.frames_at(&[0])?.remove(0)),
                _ => Decoded::Video(Box::new(gif)),
            }
        }
        k if k.needs_ffmpeg() => {
            if !FfmpegSource::available() {
                return Err(ApiError::unsupported(format!(
                    "{} decoding needs ffmpeg on the server; upload an animated GIF instead",
                    k.extension()
                )));
            }
            let mut file = tempfile::Builder::new()
                .suffix(&format!(".{}", k.extension()))
                .tempfile()
                .map_err(|e| ApiError::internal(e.to_string()))?;
            file.write_all(bytes).map_err(|e| ApiError::internal(e.to_string()))?;
            let source = FfmpegSource::open(file.path()).map_err(|e| ApiError::unprocessable(e.to_string()))?;
            Decoded::Video(Box::new(TempVideo { _file: file, source }))
        }
        _ => Decoded::Image(
            image::load_from_memory(bytes).map_err(|e| ApiError::unprocessable(format!("cannot decode image: {e}")))?,
        ),
    };
    Ok((kind, decoded))
}

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use image::ImageFormat;
use lusnet_core::ingest::{ClassCounts, ExtractionParams, GifSource, Probe, VideoSource};
use lusnet_core::Class;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::media::{self, Decoded, MediaType};

const RECORDS_DIR: &str = "records";
const STAGING_DIR: &str = "staging";
const DEDUP_DIR: &str = "dedup";
const RECORD_FILE: &str = "record.json";
const PREVIEW_FILE: &str = "preview.png";
const PREVIEW_SIDE: u32 = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimedLabel {
    Covid19,
    Pneumonia,
    Healthy,
    Unknown,
}

impl ClaimedLabel {
    pub fn class(self) -> Option<Class> {
        match self {
            ClaimedLabel::Covid19 => Some(Class::Covid19),
            ClaimedLabel::Pneumonia => Some(Class::Pneumonia),
            ClaimedLabel::Healthy => Some(Class::Healthy),
            ClaimedLabel::Unknown => None,
        }
    }
}

impl std::str::FromStr for ClaimedLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("unknown") {
            return Ok(ClaimedLabel::Unknown);
        }
        match Class::parse_loose(s) {
            Some(Class::Covid19) => Ok(ClaimedLabel::Covid19),
            Some(Class::Pneumonia) => Ok(ClaimedLabel::Pneumonia),
            Some(Class::Healthy) => Ok(ClaimedLabel::Healthy),
            None => Err(format!("unknown label {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    PendingReview,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRecord {
    pub id: String,
    pub uploader: String,
    pub claimed_label: ClaimedLabel,
    /// Label confirmed at review; always set on approved records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Class>,
    /// Stored media, relative to the storage root.
    pub media: String,
    pub media_type: MediaType,
    pub media_bytes: u64,
    pub media_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_name: Option<String>,
    /// Normalized PNG preview, relative to the storage root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<String>,
    /// Frames the standard extraction would yield, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Probe>,
    #[serde(default)]
    pub notes: String,
    pub status: ReviewStatus,
    pub received_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup_key: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct NewContribution {
    pub media: Vec<u8>,
    pub original_name: Option<String>,
    pub uploader: String,
    pub claimed_label: Option<ClaimedLabel>,
    pub probe: Option<Probe>,
    pub notes: String,
    pub dedup_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub record: ContributionRecord,
    /// True when the dedup key matched an earlier submission.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub status: ReviewStatus,
    /// Overrides the claimed label; required to approve an "unknown" claim.
    #[serde(default)]
    pub label: Option<Class>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),
    #[error("{0}")]
    Invalid(String),
    #[error("no contribution with id {0:?}")]
    NotFound(String),
    #[error("storage failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File-backed contribution records: `records/<id>/` holds the media as
/// uploaded, a PNG preview and `record.json`. A record directory appears
/// atomically (staged, then renamed), so readers never see partial records.
#[derive(Debug)]
pub struct ContributionStore {
    root: PathBuf,
    writer: Mutex<()>,
}

impl ContributionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in [RECORDS_DIR, STAGING_DIR, DEDUP_DIR] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        }
        // staging leftovers are uncommitted uploads
        let staging = root.join(STAGING_DIR);
        for entry in fs::read_dir(&staging).map_err(io_at(&staging))?.flatten() {
            let _ = fs::remove_dir_all(entry.path());
        }
        Ok(ContributionStore {
            root,
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_dir(&self, id: &str) -> PathBuf {
        self.root.join(RECORDS_DIR).join(id)
    }

    fn dedup_path(&self, key: &str) -> PathBuf {
        let digest = hex::encode(Sha256::digest(key.as_bytes()));
        self.root.join(DEDUP_DIR).join(digest)
    }

    pub fn submit(&self, new: NewContribution) -> Result<Submission, StoreError> {
        let media_type = media::sniff(&new.media).ok_or_else(|| {
            StoreError::UnsupportedMedia("expected PNG, JPEG, BMP, GIF, MP4, WebM or AVI content".into())
        })?;
        let claimed_label = new
            .claimed_label
            .ok_or_else(|| StoreError::Invalid("a label (or \"unknown\") is required".into()))?;
        let (preview, frames) = preview_and_frames(&new.media, media_type)?;

        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let dedup_key = new.dedup_key.filter(|k| !k.is_empty());
        // the dedup index is written before the record, so a replay after a
        // crash reuses the reserved id
        let id = match &dedup_key {
            Some(key) => {
                let path = self.dedup_path(key);
                match fs::read_to_string(&path) {
                    Ok(id) => {
                        let id = id.trim().to_string();
                        if let Some(record) = self.get(&id)? {
                            return Ok(Submission {
                                record,
                                duplicate: true,
                            });
                        }
                        id
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        let id = uuid::Uuid::new_v4().to_string();
                        write_atomic(&path, id.as_bytes())?;
                        id
                    }
                    Err(e) => return Err(io_at(&path)(e)),
                }
            }
            None => uuid::Uuid::new_v4().to_string(),
        };

        let media_name = format!("media.{}", media_type.extension());
        let rel = |name: &str| format!("{RECORDS_DIR}/{id}/{name}");
        let record = ContributionRecord {
            id: id.clone(),
            uploader: new.uploader,
            claimed_label,
            label: None,
            media: rel(&media_name),
            media_type,
            media_bytes: new.media.len() as u64,
            media_sha256: hex::encode(Sha256::digest(&new.media)),
            original_name: new.original_name,
            preview: preview.as_ref().map(|_| rel(PREVIEW_FILE)),
            frames,
            probe: new.probe,
            notes: new.notes,
            status: ReviewStatus::PendingReview,
            received_at: Utc::now(),
            reviewed_at: None,
            dedup_key,
        };

        let staging = tempfile::Builder::new()
            .prefix(&id)
            .tempdir_in(self.root.join(STAGING_DIR))
            .map_err(io_at(&self.root))?;
        let write = |name: &str, bytes: &[u8]| {
            let path = staging.path().join(name);
            fs::write(&path, bytes).map_err(io_at(&path))
        };
        write(&media_name, &new.media)?;
        if let Some(png) = &preview {
            write(PREVIEW_FILE, png)?;
        }
        write(RECORD_FILE, &record_json(&record)?)?;
        let target = self.record_dir(&id);
        fs::rename(staging.path(), &target).map_err(io_at(&target))?;
        Ok(Submission {
            record,
            duplicate: false,
        })
    }

    pub fn get(&self, id: &str) -> Result<Option<ContributionRecord>, StoreError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Ok(None);
        }
        let path = self.record_dir(id).join(RECORD_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|source| StoreError::Corrupt { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_at(&path)(e)),
        }
    }

    /// All committed records, oldest first.
    pub fn list(&self) -> Result<Vec<ContributionRecord>, StoreError> {
        let dir = self.root.join(RECORDS_DIR);
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_at(&dir))? {
            let entry = entry.map_err(io_at(&dir))?;
            if let Some(record) = self.get(&entry.file_name().to_string_lossy())? {
                out.push(record);
            }
        }
        out.sort_by(|a, b| a.received_at.cmp(&b.received_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn review(&self, id: &str, decision: ReviewDecision) -> Result<ContributionRecord, StoreError> {
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut record = self.get(id)?.ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        match decision.status {
            ReviewStatus::Approved => {
                let label = decision.label.or(record.claimed_label.class()).ok_or_else(|| {
                    StoreError::Invalid("approving a contribution with an unknown label needs a label".into())
                })?;
                record.label = Some(label);
            }
            ReviewStatus::Rejected => record.label = None,
            ReviewStatus::PendingReview => {
                return Err(StoreError::Invalid("review must approve or reject".into()));
            }
        }
        record.status = decision.status;
        record.reviewed_at = Some(Utc::now());
        write_atomic(&self.record_dir(id).join(RECORD_FILE), &record_json(&record)?)?;
        Ok(record)
    }

    /// Per-class counts contributed by approved records.
    pub fn approved_counts(&self) -> Result<BTreeMap<Class, ClassCounts>, StoreError> {
        let mut counts = BTreeMap::new();
        for record in self.list()? {
            if let (ReviewStatus::Approved, Some(label)) = (record.status, record.label) {
                let c: &mut ClassCounts = counts.entry(label).or_default();
                c.videos += 1;
                c.frames += record.frames.unwrap_or(0);
            }
        }
        Ok(counts)
    }
}

fn record_json(record: &ContributionRecord) -> Result<Vec<u8>, StoreError> {
    let mut bytes = serde_json::to_vec_pretty(record).map_err(|source| StoreError::Corrupt {
        path: PathBuf::from(&record.id),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("file inside a directory");
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_at(dir))?;
    tmp.write_all(bytes).map_err(io_at(path))?;
    tmp.persist(path).map_err(|e| io_at(path)(e.error))?;
    Ok(())
}

/// PNG thumbnail for decodable stills and GIFs, plus the frame count the
/// standard extraction would produce.
fn preview_and_frames(bytes: &[u8], kind: MediaType) -> Result<(Option<Vec<u8>>, Option<usize>), StoreError> {
    if kind.needs_ffmpeg() {
        return Ok((None, None));
    }
    let invalid = |e: String| StoreError::Invalid(format!("cannot decode {} upload: {e}", kind.extension()));
    let (first, frames) = if kind == MediaType::Gif {
        let mut gif = GifSource::from_bytes(bytes).map_err(|e| invalid(e.to_string()))?;
        let first = gif.frames_at(&[0]).map_err(|e| invalid(e.to_string()))?.remove(0);
        let frames = if gif.frame_count() > 1 {
            ExtractionParams::default().frame_count(gif.info().duration)
        } else {
            1
        };
        (first, frames)
    } else {
        match media::decode(bytes).map_err(|e| invalid(e.message))? {
            (_, Decoded::Image(img)) => (img, 1),
            (_, Decoded::Video(_)) => unreachable!("stills decode to images"),
        }
    };
    let mut png = Vec::new();
    first
        .thumbnail(PREVIEW_SIDE, PREVIEW_SIDE)
        .to_rgb8()
        .write_to(&mut std::io::Cursor::new(&mut png), ImageFormat::Png)
        .map_err(|e| invalid(e.to_string()))?;
    Ok((Some(png), Some(frames)))
}

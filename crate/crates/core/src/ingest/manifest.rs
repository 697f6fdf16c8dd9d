use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::ImageFormat;
use serde::{Deserialize, Serialize};

use super::{extract_frames, open_video, CropWindow, ExtractionParams, MediaKind, Probe, VideoRecord};
use crate::class::{Class, CLASS_ORDER};
use crate::error::{Error, IoContext, Result};
use crate::provenance::Provenance;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];
const VIDEO_EXTENSIONS: &[&str] = &["gif", "mp4", "avi", "mov", "mkv", "webm", "mpg", "mpeg", "m4v", "ogv"];

/// Where sources, sidecars and extracted frames live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub data_dir: PathBuf,
    pub frames_dir: PathBuf,
}

impl DatasetLayout {
    /// `<root>/data` and `<root>/frames`.
    pub fn under(root: &Path) -> Self {
        DatasetLayout {
            data_dir: root.join("data"),
            frames_dir: root.join("frames"),
        }
    }

    pub fn crops_csv(&self) -> PathBuf {
        self.data_dir.join("crops.csv")
    }

    pub fn metadata_csv(&self) -> PathBuf {
        self.data_dir.join("videos.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    pub frame_index: usize,
    pub label: Class,
    /// Path relative to the frames directory.
    pub file: String,
    /// Position on the sampling grid, seconds.
    pub time: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub videos: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub videos: Vec<VideoRecord>,
    pub frames: Vec<FrameRef>,
    pub counts: BTreeMap<Class, ClassCounts>,
    pub extraction: ExtractionParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DatasetManifest {
    /// Sorts records and frames and recomputes the per-class counts.
    pub fn new(mut videos: Vec<VideoRecord>, mut frames: Vec<FrameRef>, extraction: ExtractionParams) -> Self {
        videos.sort_by(|a, b| a.id.cmp(&b.id));
        frames.sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
        let mut counts: BTreeMap<Class, ClassCounts> = CLASS_ORDER.iter().map(|c| (*c, ClassCounts::default())).collect();
        for v in &videos {
            counts.get_mut(&v.label).expect("all classes present").videos += 1;
        }
        for f in &frames {
            counts.get_mut(&f.label).expect("all classes present").frames += 1;
        }
        DatasetManifest {
            videos,
            frames,
            counts,
            extraction,
            provenance: None,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.videos[i])
    }

    /// Frame count per video id (videos without frames included as 0).
    pub fn frames_per_video(&self) -> BTreeMap<&str, usize> {
        let mut out: BTreeMap<&str, usize> = self.videos.iter().map(|v| (v.id.as_str(), 0)).collect();
        for f in &self.frames {
            *out.entry(f.video_id.as_str()).or_default() += 1;
        }
        out
    }

    /// Checks counts, parent links and label inheritance.
    pub fn validate(&self) -> Result<()> {
        let recount = DatasetManifest::new(self.videos.clone(), self.frames.clone(), self.extraction);
        if recount.counts != self.counts {
            return Err(Error::Validation("manifest counts disagree with its members".into()));
        }
        let labels: HashMap<&str, Class> = self.videos.iter().map(|v| (v.id.as_str(), v.label)).collect();
        let mut orphans = Vec::new();
        for f in &self.frames {
            match labels.get(f.video_id.as_str()) {
                None => orphans.push(f.file.clone()),
                Some(&label) if label != f.label => {
                    return Err(Error::Validation(format!(
                        "frame {} labelled {} but video {} is {}",
                        f.file, f.label, f.video_id, label
                    )))
                }
                Some(_) => {}
            }
        }
        if !orphans.is_empty() {
            return Err(Error::OrphanFrames { orphans });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).at(parent)?;
        }
        fs::write(path, self.to_json()?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

/// Class subdirectories of `dir`, sorted by name. Unrecognized names are skipped.
fn class_dirs(dir: &Path) -> Result<Vec<(Class, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if !path.is_dir() {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match Class::parse_loose(name) {
            Some(class) => out.push((class, path)),
            None => log::warn!("ignoring directory {} (not a class name)", path.display()),
        }
    }
    out.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(out)
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Deserialize)]
struct CropRow {
    video_id: String,
    x: u32,
    y: u32,
    side: u32,
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    video_id: String,
    #[serde(default)]
    source_url: String,
    #[serde(default)]
    probe: String,
    #[serde(default)]
    notes: String,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| Error::Ingestion {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Scans `data/<class>/` and probes every recording.
fn scan_records(layout: &DatasetLayout) -> Result<Vec<VideoRecord>> {
    let crops: HashMap<String, CropWindow> = read_csv::<CropRow>(&layout.crops_csv())?
        .into_iter()
        .map(|r| (r.video_id, CropWindow::new(r.x, r.y, r.side)))
        .collect();
    let metadata: HashMap<String, MetadataRow> = read_csv::<MetadataRow>(&layout.metadata_csv())?
        .into_iter()
        .map(|r| (r.video_id.clone(), r))
        .collect();

    let mut records: Vec<VideoRecord> = Vec::new();
    let mut seen: HashMap<String, PathBuf> = HashMap::new();
    for (label, dir) in class_dirs(&layout.data_dir)? {
        for path in sorted_files(&dir)? {
            let ext = extension(&path);
            let media = if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                MediaKind::Image
            } else if VIDEO_EXTENSIONS.contains(&ext.as_str()) {
                MediaKind::Video
            } else {
                continue;
            };
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if let Some(previous) = seen.insert(id.clone(), path.clone()) {
                return Err(Error::Validation(format!(
                    "video id {id:?} appears twice: {} and {}",
                    previous.display(),
                    path.display()
                )));
            }
            let (native_fps, duration) = match media {
                MediaKind::Image => (0.0, 0.0),
                MediaKind::Video => {
                    let source = open_video(&path)?;
                    (source.info().fps, source.info().duration)
                }
            };
            let meta = metadata.get(&id);
            let probe = match meta.map(|m| m.probe.as_str()).filter(|p| !p.is_empty()) {
                Some(p) => p.parse()?,
                None => Probe::Convex,
            };
            let file = path
                .strip_prefix(&layout.data_dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            records.push(VideoRecord {
                label,
                media,
                file,
                source_url: meta.map(|m| m.source_url.clone()).unwrap_or_default(),
                probe,
                native_fps,
                duration,
                crop_window: crops.get(&id).copied(),
                expert_notes: meta.map(|m| m.notes.clone()).unwrap_or_default(),
                id,
            });
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

fn frame_file_name(video_id: &str, k: usize) -> String {
    format!("{video_id}_frame{k}.png")
}

fn parse_frame_file(name: &str) -> Option<(&str, usize)> {
    let stem = name.strip_suffix(".png")?;
    let (id, k) = stem.rsplit_once("_frame")?;
    Some((id, k.parse().ok()?))
}

/// Builds the manifest from the files on disk.
///
/// Every frame under `frames/` must belong to a recording under `data/`;
/// orphans are reported together. A missing or empty tree yields zero counts.
pub fn build_manifest(layout: &DatasetLayout, params: &ExtractionParams) -> Result<DatasetManifest> {
    params.validate()?;
    let videos = scan_records(layout)?;
    let by_id: HashMap<&str, &VideoRecord> = videos.iter().map(|v| (v.id.as_str(), v)).collect();

    let mut frames = Vec::new();
    let mut orphans = Vec::new();
    for (dir_label, dir) in class_dirs(&layout.frames_dir)? {
        for path in sorted_files(&dir)? {
            if extension(&path) != "png" {
                continue;
            }
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let rel = path
                .strip_prefix(&layout.frames_dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            let Some((id, k)) = parse_frame_file(name) else {
                orphans.push(rel);
                continue;
            };
            let Some(record) = by_id.get(id) else {
                orphans.push(rel);
                continue;
            };
            if record.label != dir_label {
                return Err(Error::Validation(format!(
                    "frame {rel} is filed under {dir_label} but video {id} is {}",
                    record.label
                )));
            }
            let time = match record.media {
                MediaKind::Image => 0.0,
                MediaKind::Video => k as f64 / params.rate_hz,
            };
            frames.push(FrameRef {
                video_id: id.to_string(),
                frame_index: k,
                label: record.label,
                file: rel,
                time,
            });
        }
    }
    if !orphans.is_empty() {
        return Err(Error::OrphanFrames { orphans });
    }
    Ok(DatasetManifest::new(videos, frames, *params))
}

/// Extracts, crops and stores frames for every recording, then builds the manifest.
///
/// Frames are written losslessly; previously extracted frames of a recording
/// are replaced.
pub fn ingest(layout: &DatasetLayout, params: &ExtractionParams) -> Result<DatasetManifest> {
    params.validate()?;
    let records = scan_records(layout)?;
    for record in &records {
        let out_dir = layout.frames_dir.join(record.label.as_str());
        fs::create_dir_all(&out_dir).at(&out_dir)?;
        remove_stale_frames(&layout.frames_dir, &record.id)?;

        let source_path = layout.data_dir.join(&record.file);
        let images = match record.media {
            MediaKind::Image => {
                let image = image::open(&source_path).map_err(|e| Error::Ingestion {
                    path: source_path.clone(),
                    reason: e.to_string(),
                })?;
                let image = match record.crop_window {
                    Some(window) => super::crop_quadratic(&image, window)?,
                    None => image,
                };
                vec![(0, image)]
            }
            MediaKind::Video => {
                let mut source = open_video(&source_path)?;
                extract_frames(record, source.as_mut(), params)
                    .map_err(|e| match e {
                        Error::EmptyVideo { .. } => Error::EmptyVideo { path: source_path.clone() },
                        other => other,
                    })?
                    .into_iter()
                    .map(|f| (f.frame_index, f.image))
                    .collect()
            }
        };
        for (k, image) in images {
            let path = out_dir.join(frame_file_name(&record.id, k));
            image.save_with_format(&path, ImageFormat::Png)?;
        }
        log::info!("{}: extracted frames for {}", record.label, record.id);
    }
    build_manifest(layout, params)
}

fn remove_stale_frames(frames_dir: &Path, video_id: &str) -> Result<()> {
    for (_, dir) in class_dirs(frames_dir)? {
        for path in sorted_files(&dir)? {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if parse_frame_file(name).is_some_and(|(id, _)| id == video_id) {
                fs::remove_file(&path).at(&path)?;
            }
        }
    }
    Ok(())
}

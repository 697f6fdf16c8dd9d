//! Separable synthetic lung-ultrasound stand-in: each class has its own
//! texture (vertical bands, a bright blob, horizontal bands) with per-video
//! phase, per-frame drift and pixel noise. A tick scale on the left edge
//! is removed by the per-video crop window, as with real recordings.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, Rgba, RgbaImage};
use lusnet_core::{Class, CLASS_ORDER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Width of the tick scale drawn left of the region of interest.
const SCALE_WIDTH: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub videos_per_class: usize,
    /// GIF frames per recording.
    pub frames_per_video: usize,
    pub fps: u32,
    /// Side of the square region of interest, pixels.
    pub side: u32,
    /// Also write one still image per class.
    pub stills: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos_per_class: 6,
            frames_per_video: 36,
            fps: 10,
            side: 64,
            stills: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Style {
    phase: f64,
    period: f64,
    cx: f64,
    cy: f64,
    radius: f64,
}

impl Style {
    fn draw(&self, rng: &mut ChaCha8Rng, class: Class, side: u32, t: usize) -> RgbaImage {
        let width = side + SCALE_WIDTH;
        let drift = t as f64 * 0.7;
        RgbaImage::from_fn(width, side, |px, y| {
            if px < SCALE_WIDTH {
                let tick = y % 8 == 0 && px >= SCALE_WIDTH / 2;
                let v = if tick { 255 } else { 0 };
                return Rgba([v, v, v, 255]);
            }
            let (x, y) = ((px - SCALE_WIDTH) as f64, y as f64);
            let bright = match class {
                Class::Covid19 => ((x + self.phase + drift) / (self.period / 2.0)).floor() as i64 % 2 == 0,
                Class::Pneumonia => {
                    let (dx, dy) = (x - self.cx - drift * 0.3, y - self.cy);
                    dx * dx + dy * dy < self.radius * self.radius
                }
                Class::Healthy => ((y + self.phase + drift) / (self.period / 2.0)).floor() as i64 % 2 == 0,
            };
            let base: f64 = if bright { 200.0 } else { 45.0 };
            let v = (base + rng.gen_range(-18.0..18.0)).clamp(0.0, 255.0) as u8;
            Rgba([v, v, v, 255])
        })
    }
}

fn style(rng: &mut ChaCha8Rng, class: Class, side: u32) -> Style {
    let s = side as f64;
    Style {
        phase: rng.gen_range(0.0..16.0),
        period: match class {
            Class::Covid19 => rng.gen_range(7.0..10.0) * s / 64.0,
            _ => rng.gen_range(14.0..20.0) * s / 64.0,
        },
        cx: rng.gen_range(0.35..0.65) * s,
        cy: rng.gen_range(0.35..0.65) * s,
        radius: rng.gen_range(0.18..0.28) * s,
    }
}

/// Writes `data/<class>/*.gif` (plus stills), `data/crops.csv` and
/// `data/videos.csv` under `root`. Returns the number of recordings written.
pub fn generate(root: &Path, config: &SynthConfig, seed: u64) -> Result<usize> {
    anyhow::ensure!(config.videos_per_class > 0, "videos_per_class must be positive");
    anyhow::ensure!(config.frames_per_video > 0 && config.fps > 0, "frames_per_video and fps must be positive");
    anyhow::ensure!(config.side >= 16, "side must be at least 16 pixels");
    let data = root.join("data");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crops = String::from("video_id,x,y,side\n");
    let mut meta = String::from("video_id,source_url,probe,notes\n");
    let mut written = 0;
    let delay = Delay::from_numer_denom_ms(1000, config.fps);

    for class in CLASS_ORDER {
        let dir = data.join(class.as_str());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for v in 0..config.videos_per_class {
            let id = format!("syn_{class}_{v:02}");
            let style = style(&mut rng, class, config.side);
            let path = dir.join(format!("{id}.gif"));
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let mut enc = GifEncoder::new_with_speed(BufWriter::new(file), 30);
            enc.set_repeat(Repeat::Infinite)?;
            for t in 0..config.frames_per_video {
                let img = style.draw(&mut rng, class, config.side, t);
                enc.encode_frame(Frame::from_parts(img, 0, 0, delay))
                    .with_context(|| format!("encoding {}", path.display()))?;
            }
            drop(enc);
            let probe = if v % 2 == 0 { "convex" } else { "linear" };
            let _ = writeln!(crops, "{id},{SCALE_WIDTH},0,{}", config.side);
            let _ = writeln!(meta, "{id},synthetic://{class}/{v},{probe},generated texture");
            written += 1;
        }
        if config.stills {
            let id = format!("syn_{class}_still");
            let style = style(&mut rng, class, config.side);
            let path = dir.join(format!("{id}.png"));
            style
                .draw(&mut rng, class, config.side, 0)
                .save(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            let _ = writeln!(crops, "{id},{SCALE_WIDTH},0,{}", config.side);
            let _ = writeln!(meta, "{id},synthetic://{class}/still,convex,generated still");
            written += 1;
        }
    }
    fs::write(data.join("crops.csv"), crops)?;
    fs::write(data.join("videos.csv"), meta)?;
    Ok(written)
}

#![allow(dead_code)]

use std::io::Cursor;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use image::codecs::gif::GifEncoder;
use image::{Delay, Frame, ImageFormat, Rgb, RgbImage, RgbaImage};
use lusnet_core::model::{build_model, ModelConfig, TrainedModelBundle};
use lusnet_service::{AppState, ContributionStore, Ensemble};
use serde_json::Value;
use tower::ServiceExt;

pub const SIDE: u32 = 32;

pub fn bundle(fold: usize, seed: u64) -> TrainedModelBundle {
    let config = ModelConfig {
        backbone: "vgg16-random".into(),
        input_side: SIDE,
        seed,
        ..ModelConfig::default()
    };
    let (network, _) = build_model(&config).unwrap();
    TrainedModelBundle::new(network, fold, Vec::new())
}

/// Member whose softmax is (numerically) one-hot on `class`.
pub fn one_hot_bundle(fold: usize, class: usize) -> TrainedModelBundle {
    let mut b = bundle(fold, 1);
    let head = b.network.head_mut();
    head.dense2_w.fill(0.0);
    head.dense2_b.fill(-200.0);
    head.dense2_b[class] = 200.0;
    b
}

pub fn state(bundles: Vec<TrainedModelBundle>, storage: &Path) -> AppState {
    let ensemble = Ensemble::from_bundles(bundles).unwrap();
    AppState::new(ensemble, ContributionStore::open(storage).unwrap())
}

pub fn png(width: u32, height: u32, seed: u8) -> Vec<u8> {
    let img = RgbImage::from_fn(width, height, |x, y| {
        Rgb([(x * 7 + seed as u32) as u8, (y * 5) as u8, ((x ^ y) as u8).wrapping_mul(seed | 1)])
    });
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png).unwrap();
    out
}

/// Animated GIF of `frames` frames, 100 ms each.
pub fn gif(frames: usize, side: u32) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = GifEncoder::new(&mut out);
        for i in 0..frames {
            let img = RgbaImage::from_fn(side, side, |x, y| {
                image::Rgba([(x * 8 + i as u32 * 3) as u8, (y * 8) as u8, (i * 20) as u8, 255])
            });
            enc.encode_frame(Frame::from_parts(img, 0, 0, Delay::from_numer_denom_ms(100, 1))).unwrap();
        }
    }
    out
}

pub enum Part<'a> {
    Text(&'a str),
    File(&'a str, &'a [u8]),
}

pub const BOUNDARY: &str = "lusnet-test-boundary";

pub fn multipart(parts: &[(&str, Part)]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, part) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match part {
            Part::Text(v) => {
                body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n{v}\r\n").as_bytes());
            }
            Part::File(file, bytes) => {
                body.extend_from_slice(
                    format!(
                        "Content-Disposition: form-data; name=\"{name}\"; filename=\"{file}\"\r\n\
                         Content-Type: application/octet-stream\r\n\r\n"
                    )
                    .as_bytes(),
                );
                body.extend_from_slice(bytes);
                body.extend_from_slice(b"\r\n");
            }
        }
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn post_form(uri: &str, parts: &[(&str, Part)]) -> Request<Body> {
    Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap()
}

pub async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, json)
}

pub fn probs(v: &Value) -> Vec<f64> {
    ["covid19", "pneumonia", "healthy"]
        .iter()
        .map(|c| v["class_probs"][c].as_f64().unwrap())
        .collect()
}

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use lanefollow::camera::{Image, ObservationTensor, OBS_CHANNELS, OBS_SIZE};

fn to_rgb(img: &Image) -> RgbImage {
    RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone()).expect("RGB8 buffer size")
}

pub fn jpeg(img: &Image, quality: u8) -> Vec<u8> {
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(&to_rgb(img))
        .expect("in-memory JPEG encoding");
    out
}

pub fn png(img: &Image) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    to_rgb(img)
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn save_png(img: &Image, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, png(img))
}

/// The newest frame of a stacked observation as an 84x84 image.
pub fn newest_frame(obs: &ObservationTensor) -> Image {
    let mut img = Image::new(OBS_SIZE, OBS_SIZE);
    for (px, chunk) in obs.codes().chunks_exact(OBS_CHANNELS).enumerate() {
        img.data[px * 3..px * 3 + 3].copy_from_slice(&chunk[OBS_CHANNELS - 3..]);
    }
    img
}

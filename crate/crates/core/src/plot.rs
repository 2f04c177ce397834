//! Static PNG figures: overlaid duration densities and spectrograms.

use std::io::Cursor;
use std::path::Path;

use fnh_dsp::{stft, StftConfig, Waveform};
use image::{ImageFormat, Luma, Rgb, RgbImage, GrayImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub width: u32,
    pub height: u32,
    pub margin: u32,
    pub colors: Vec<[u8; 3]>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            width: 800,
            height: 500,
            margin: 40,
            colors: vec![
                [31, 119, 180],
                [255, 127, 14],
                [44, 160, 44],
                [214, 39, 40],
                [148, 103, 189],
                [140, 86, 75],
            ],
        }
    }
}

/// One curve: x values and y values of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn encode_png<P: image::PixelWithColorType>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| TtsError::InvalidInput(format!("png encoding: {e}")))?;
    Ok(buf.into_inner())
}

/// Density curves drawn over shared axes, one colour per series, with a
/// colour key in the top-right corner.
pub fn overlay_png(series: &[Series], style: &PlotStyle) -> Result<Vec<u8>> {
    if series.is_empty() {
        return Err(TtsError::InvalidInput("nothing to plot".into()));
    }
    for (i, s) in series.iter().enumerate() {
        if s.x.is_empty() || s.x.len() != s.y.len() {
            return Err(TtsError::InvalidInput(format!("series {i} is empty or ragged")));
        }
        if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
            return Err(TtsError::NonFinite(format!("series {i}")));
        }
    }
    let (w, h, m) = (style.width as f32, style.height as f32, style.margin as f32);
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&Series) -> &Vec<f64>| {
        series.iter().flat_map(|s| pick(s).iter().copied()).fold(init, f)
    };
    let x0 = fold(f64::min, f64::INFINITY, |s| &s.x);
    let mut x1 = fold(f64::max, f64::NEG_INFINITY, |s| &s.x);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let mut y1 = fold(f64::max, 0.0, |s| &s.y) * 1.05;
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let px = |x: f64| m + ((x - x0) / (x1 - x0)) as f32 * (w - 2.0 * m);
    let py = |y: f64| h - m - (y / y1) as f32 * (h - 2.0 * m);
    let mut img = RgbImage::from_pixel(style.width, style.height, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    draw_line_segment_mut(&mut img, (m, h - m), (w - m, h - m), axis);
    draw_line_segment_mut(&mut img, (m, h - m), (m, m), axis);
    for (i, s) in series.iter().enumerate() {
        let c = Rgb(style.colors[i % style.colors.len()]);
        for k in 1..s.x.len() {
            draw_line_segment_mut(&mut img, (px(s.x[k - 1]), py(s.y[k - 1])), (px(s.x[k]), py(s.y[k])), c);
        }
        let top = style.margin as i32 + 14 * i as i32;
        draw_filled_rect_mut(&mut img, Rect::at(style.width as i32 - style.margin as i32 - 30, top).of_size(24, 8), c);
    }
    encode_png(&img)
}

/// Log-magnitude spectrogram, one pixel column per STFT frame and one row
/// per frequency bin (low frequencies at the bottom).
pub fn spectrogram_png(w: &Waveform, cfg: &StftConfig) -> Result<(Vec<u8>, u32, u32)> {
    if w.is_empty() {
        return Err(TtsError::InvalidInput("empty waveform".into()));
    }
    let mag = stft(w, cfg)?.magnitude().log_magnitude(1e-5)?;
    let (rows, cols) = mag.values.shape();
    let v = mag.values.as_slice();
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // 80 dB of dynamic range below the peak
    let lo = hi - 80.0 / 20.0 * std::f64::consts::LN_10;
    let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let r = rows - 1 - y as usize;
        let t = ((mag.values.get(r, x as usize) - lo) / (hi - lo)).clamp(0.0, 1.0);
        Luma([(255.0 * (1.0 - t)).round() as u8])
    });
    Ok((encode_png(&img)?, cols as u32, rows as u32))
}

pub fn write_png(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TtsError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| TtsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(c: f64) -> Series {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let y = x.iter().map(|v| (-((v - c) / 0.05f64).powi(2)).exp()).collect();
        Series { x, y }
    }

    #[test]
    fn overlay_is_deterministic() {
        let s = vec![bump(0.2), bump(0.3)];
        let a = overlay_png(&s, &PlotStyle::default()).unwrap();
        let b = overlay_png(&s, &PlotStyle::default()).unwrap();
        assert_eq!(a, b);
        let img = image::load_from_memory(&a).unwrap();
        assert_eq!((img.width(), img.height()), (800, 500));
        assert!(overlay_png(&[], &PlotStyle::default()).is_err());
    }

    #[test]
    fn spectrogram_size_follows_frames() {
        let w = Waveform::new((0..2560).map(|i| (i as f64 * 0.1).sin()).collect(), 22050).unwrap();
        let cfg = StftConfig::vocoder();
        let (png, cols, rows) = spectrogram_png(&w, &cfg).unwrap();
        assert_eq!(cols as usize, cfg.frames_for(2560));
        assert_eq!(rows, 513);
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!((img.width(), img.height()), (cols, rows));
    }
}

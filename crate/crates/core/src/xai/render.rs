use std::fmt::Write as _;
use std::io::Cursor;

use base64::Engine as _;
use image::{ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::threshold::{threshold_topk, Polarity};
use super::AttributionMap;
use crate::dataset::MelSpectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSize {
    pub width: u32,
    pub height: u32,
}

impl Default for RenderSize {
    fn default() -> Self {
        Self {
            width: 448,
            height: 448,
        }
    }
}

const RED: [f32; 3] = [220.0, 20.0, 20.0];
const BLUE: [f32; 3] = [20.0, 60.0, 230.0];

/// Grayscale spectrogram with the top `fraction` positive cells tinted red
/// and the top `fraction` negative cells tinted blue; all other cells show
/// the underlay only. Tint strength follows `|value| / max|value|`. Low mel
/// bins are at the bottom.
pub fn render_overlay(
    spectrogram: &MelSpectrogram,
    map: &AttributionMap,
    fraction: f64,
    size: RenderSize,
) -> Result<RgbaImage> {
    let under = &spectrogram.resized;
    let values = &map.values;
    if under.dim() != values.dim() {
        return Err(Error::Shape(format!(
            "map {:?} is not aligned to the spectrogram input {:?}",
            values.dim(),
            under.dim()
        )));
    }
    if !crate::grid::all_finite(values) || !crate::grid::all_finite(under) {
        return Err(Error::NaNInput);
    }
    if size.width == 0 || size.height == 0 {
        return Err(Error::Config("render size must be non-zero".into()));
    }
    let pos = threshold_topk(values, fraction, Polarity::Positive)?;
    let neg = threshold_topk(values, fraction, Polarity::Negative)?;
    let max_abs = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let (rows, cols) = values.dim();
    let lo = under.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = under.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let img = RgbaImage::from_fn(size.width, size.height, |px, py| {
        let r = rows - 1 - ((py as usize * rows) / size.height as usize).min(rows - 1);
        let c = ((px as usize * cols) / size.width as usize).min(cols - 1);
        let g = ((under[[r, c]] - lo) / span).clamp(0.0, 1.0) * 255.0;
        let v = values[[r, c]];
        let tint = if pos.selected[[r, c]] && v > 0.0 {
            Some(RED)
        } else if neg.selected[[r, c]] && v < 0.0 {
            Some(BLUE)
        } else {
            None
        };
        let rgb = match tint {
            Some(color) => {
                let a = 0.35 + 0.65 * v.abs() / max_abs;
                [0, 1, 2].map(|i| ((1.0 - a) * g + a * color[i]).round() as u8)
            }
            None => [g.round() as u8; 3],
        };
        Rgba([rgb[0], rgb[1], rgb[2], 255])
    });
    Ok(img)
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Figure wrapper around an overlay PNG with labelled time and mel axes.
pub fn render_figure_svg(png: &[u8], size: RenderSize, duration_s: f64, n_mels: usize, title: &str) -> String {
    let (w, h) = (size.width as f64, size.height as f64);
    let (left, top, bottom, right) = (60.0, 30.0, 48.0, 16.0);
    let (tw, th) = (left + w + right, top + h + bottom);
    let data = base64::engine::general_purpose::STANDARD.encode(png);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{tw}" height="{th}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{tw}" height="{th}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle">{}</text>"#,
        left + w / 2.0,
        title.replace('&', "&amp;").replace('<', "&lt;")
    );
    let _ = writeln!(
        s,
        r#"<image x="{left}" y="{top}" width="{w}" height="{h}" href="data:image/png;base64,{data}"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = left + f * w;
        let y = top + h - f * h;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{:.1}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            top + h + 16.0,
            f * duration_s,
            left - 6.0,
            y + 4.0,
            (f * n_mels as f64).round() as usize
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time (s)</text>"#,
        left + w / 2.0,
        th - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">mel bin</text>"#,
        top + h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MelConfig;
    use crate::xai::Technique;
    use ndarray::Array2;

    fn spectrogram(rows: usize, cols: usize) -> MelSpectrogram {
        MelSpectrogram {
            grid: Array2::zeros((rows, cols)),
            resized: Array2::from_shape_fn((rows, cols), |(r, c)| ((r + c) % 7) as f32 / 6.0),
            config: MelConfig::default(),
            source_id: "x".into(),
        }
    }

    fn tinted(img: &RgbaImage) -> (usize, usize) {
        let mut red = 0;
        let mut blue = 0;
        for p in img.pixels() {
            let [r, g, b, _] = p.0;
            if r > g.saturating_add(20) {
                red += 1;
            }
            if b > g.saturating_add(20) {
                blue += 1;
            }
        }
        (red, blue)
    }

    #[test]
    fn zero_map_is_pure_grayscale() {
        let spec = spectrogram(8, 8);
        let map = AttributionMap::new(Array2::zeros((8, 8)), Technique::Ig, 0);
        let img = render_overlay(&spec, &map, 0.1, RenderSize { width: 16, height: 16 }).unwrap();
        assert!(img.pixels().all(|p| p.0[0] == p.0[1] && p.0[1] == p.0[2]));
    }

    #[test]
    fn one_red_cell_of_ten() {
        let spec = spectrogram(1, 10);
        let mut values = Array2::zeros((1, 10));
        values[[0, 3]] = 5.0;
        let map = AttributionMap::new(values, Technique::Ig, 0);
        let img = render_overlay(&spec, &map, 0.1, RenderSize { width: 10, height: 1 }).unwrap();
        assert_eq!(tinted(&img), (1, 0));
        assert!(img.get_pixel(3, 0).0[0] > 150);
    }

    #[test]
    fn mixed_sign_map_has_both_layers() {
        let spec = spectrogram(8, 8);
        let values = Array2::from_shape_fn((8, 8), |(r, c)| r as f32 - c as f32);
        let map = AttributionMap::new(values, Technique::Lime, 0);
        let size = RenderSize { width: 40, height: 24 };
        let img = render_overlay(&spec, &map, 0.1, size).unwrap();
        assert_eq!(img.dimensions(), (40, 24));
        let (red, blue) = tinted(&img);
        assert!(red > 0 && blue > 0);
        let png = encode_png(&img).unwrap();
        let svg = render_figure_svg(&png, size, 10.0, 128, "lime");
        assert!(svg.contains("time (s)") && svg.contains("mel bin"));
        let bad = AttributionMap::new(Array2::zeros((4, 4)), Technique::Lime, 0);
        assert!(matches!(render_overlay(&spec, &bad, 0.1, size), Err(Error::Shape(_))));
    }
}

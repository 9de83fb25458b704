//! Per-element 3×64×64 renderings.
//!
//! The element is scaled to fit the square with its aspect ratio kept, centered,
//! filled with its color composited over a white background.

use std::f64::consts::PI;

use crate::proto::{Element, Frame, NodeClass, Rgba, UiNode};
use crate::{Error, Result};

pub const IMAGE_SIDE: usize = 64;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = IMAGE_CHANNELS * IMAGE_SIDE * IMAGE_SIDE;

const DEFAULT_COLOR: Rgba = Rgba { r: 128.0, g: 128.0, b: 128.0, a: 255.0 };

/// A `3×64×64` channel-major image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image64 {
    data: Vec<f32>,
}

impl Image64 {
    pub fn blank() -> Self {
        Self { data: vec![1.0; IMAGE_LEN] }
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != IMAGE_LEN {
            return Err(Error::Data(format!("image has {} values, expected {IMAGE_LEN}", data.len())));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * IMAGE_SIDE + y) * IMAGE_SIDE + x]
    }
}

/// Outline used for `path` elements, chosen from a hash of the uuid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathShape {
    /// Thick circular arc, the kind of stroke piece icons are assembled from.
    Arc,
    /// Irregular quadrilateral.
    Wedge,
    /// Complete chevron glyph.
    Chevron,
    /// Complete five-pointed star glyph.
    Star,
}

impl PathShape {
    /// Whether the outline reads as a piece of a larger drawing.
    pub fn is_fragment(self) -> bool {
        matches!(self, PathShape::Arc | PathShape::Wedge)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn path_shape(uuid: &str) -> PathShape {
    match fnv1a(uuid.as_bytes()) % 4 {
        0 => PathShape::Arc,
        1 => PathShape::Wedge,
        2 => PathShape::Chevron,
        _ => PathShape::Star,
    }
}

/// Polygon vertices in the unit square.
fn path_polygon(uuid: &str) -> Vec<(f64, f64)> {
    let h = fnv1a(uuid.as_bytes());
    // Bits above the shape selector drive the jitter.
    let bits = |shift: u32, n: u64| ((h >> shift) % n) as f64 / n as f64;
    let rotate = |pts: Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        let quarter = (h >> 2) % 4;
        pts.into_iter()
            .map(|(x, y)| match quarter {
                0 => (x, y),
                1 => (1.0 - y, x),
                2 => (1.0 - x, 1.0 - y),
                _ => (y, 1.0 - x),
            })
            .collect()
    };
    match path_shape(uuid) {
        PathShape::Arc => {
            let start = bits(8, 360) * 2.0 * PI;
            let sweep = (0.4 + 0.35 * bits(20, 100)) * 2.0 * PI;
            let inner = 0.22 + 0.12 * bits(32, 100);
            let steps = 24;
            let at = |r: f64, k: usize| {
                let a = start + sweep * k as f64 / steps as f64;
                (0.5 + r * a.cos(), 0.5 + r * a.sin())
            };
            let mut pts: Vec<_> = (0..=steps).map(|k| at(0.5, k)).collect();
            pts.extend((0..=steps).rev().map(|k| at(inner, k)));
            pts
        }
        PathShape::Wedge => rotate(vec![
            (0.0, 0.15 * bits(8, 100)),
            (1.0, 0.3 * bits(16, 100)),
            (0.65 + 0.35 * bits(24, 100), 1.0),
            (0.25 * bits(40, 100), 0.55 + 0.3 * bits(48, 100)),
        ]),
        PathShape::Chevron => {
            let t = 0.18 + 0.1 * bits(8, 100);
            rotate(vec![(0.2, 0.0), (0.2 + t, 0.0), (0.8, 0.5), (0.2 + t, 1.0), (0.2, 1.0), (0.8 - t, 0.5)])
        }
        PathShape::Star => {
            let inner = 0.18 + 0.1 * bits(8, 100);
            (0..10)
                .map(|k| {
                    let a = -PI / 2.0 + PI * k as f64 / 5.0;
                    let r = if k % 2 == 0 { 0.5 } else { inner };
                    (0.5 + r * a.cos(), 0.5 + r * a.sin())
                })
                .collect()
        }
    }
}

fn inside_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Renders a leaf node. Containers have no pixels of their own.
pub fn rasterize_element(node: &UiNode) -> Result<Image64> {
    if !node.is_element() {
        return Err(Error::Shape(format!("`{}` is a container, not a drawable element", node.uuid)));
    }
    Ok(render(&node.uuid, &node.class, &node.frame, node.color))
}

/// Renders one record of an element sequence.
pub fn rasterize_record(e: &Element) -> Image64 {
    render(&e.uuid, &e.class, &e.frame, e.color)
}

fn render(uuid: &str, class: &NodeClass, frame: &Frame, color: Option<Rgba>) -> Image64 {
    let mut img = Image64::blank();
    if !(frame.w > 0.0 && frame.h > 0.0) {
        return img;
    }
    let side = IMAGE_SIDE as f64;
    let scale = side / frame.w.max(frame.h);
    let (dw, dh) = (frame.w * scale, frame.h * scale);
    let (ox, oy) = ((side - dw) / 2.0, (side - dh) / 2.0);

    let c = color.unwrap_or(DEFAULT_COLOR);
    let alpha = (c.a / 255.0).clamp(0.0, 1.0);
    let fill = [c.r, c.g, c.b].map(|v| (alpha * v / 255.0 + (1.0 - alpha)).clamp(0.0, 1.0) as f32);
    let shade = [c.r, c.g, c.b].map(|v| (alpha * 0.6 * v / 255.0 + (1.0 - alpha)).clamp(0.0, 1.0) as f32);

    let polygon = matches!(class, NodeClass::Path).then(|| path_polygon(uuid));
    let lines = ((frame.h / 20.0).round() as usize).clamp(1, 3);
    let last_line = 0.5 + 0.5 * (fnv1a(uuid.as_bytes()) % 100) as f64 / 100.0;

    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for py in 0..IMAGE_SIDE {
        for px in 0..IMAGE_SIDE {
            let u = (px as f64 + 0.5 - ox) / dw;
            let v = (py as f64 + 0.5 - oy) / dh;
            if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
                continue;
            }
            let painted = match class {
                NodeClass::Oval => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
                NodeClass::Path => inside_polygon(polygon.as_deref().unwrap_or(&[]), u, v),
                NodeClass::Text => {
                    let band = v * lines as f64;
                    let line = band.floor() as usize;
                    let within = band.fract();
                    let reach = if line + 1 == lines && lines > 1 { last_line } else { 1.0 };
                    (0.25..0.75).contains(&within) && u < reach
                }
                NodeClass::Symbol => !((0.2..0.8).contains(&u) && (0.2..0.8).contains(&v)),
                _ => true,
            };
            if !painted {
                continue;
            }
            let rgb = if matches!(class, NodeClass::Bitmap) && (px / 8 + py / 8) % 2 == 1 { shade } else { fill };
            for (ch, value) in rgb.into_iter().enumerate() {
                img.data[ch * plane + py * IMAGE_SIDE + px] = value;
            }
        }
    }
    img
}

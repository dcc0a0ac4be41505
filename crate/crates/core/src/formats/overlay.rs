use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::geometry::{ImageDims, PixelBox};

pub const DEFAULT_STROKE_WIDTH: u32 = 4;

/// Stroke colours, indexed by object number modulo the palette length.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [255, 225, 25],
];

/// A rectangle outline to draw onto one of a sample's images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlaySpec {
    pub image_index: usize,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub color: [u8; 3],
    pub width: u32,
}

impl OverlaySpec {
    pub fn for_object(image_index: usize, bbox: PixelBox, object_index: usize, width: u32) -> Self {
        OverlaySpec {
            image_index,
            bbox,
            color: PALETTE[object_index % PALETTE.len()],
            width,
        }
    }
}

/// Returns a copy of `image` with the box outline stroked inward from its
/// edges. Edge columns/rows are `floor(x1)` and `min(floor(x2), width - 1)`
/// (same for y); only pixels in the stroke band change.
pub fn render_overlay(image: &RgbImage, spec: &OverlaySpec) -> Result<RgbImage, FormatError> {
    let dims = ImageDims::new(image.width(), image.height())
        .map_err(|e| FormatError::Overlay(e.to_string()))?;
    spec.bbox
        .check_within(dims)
        .map_err(|e| FormatError::Overlay(e.to_string()))?;

    let mut out = image.clone();
    if spec.width == 0 {
        return Ok(out);
    }
    let left = spec.bbox.x1.floor() as u32;
    let top = spec.bbox.y1.floor() as u32;
    let right = (spec.bbox.x2.floor() as u32).min(dims.width - 1).max(left);
    let bottom = (spec.bbox.y2.floor() as u32).min(dims.height - 1).max(top);
    let w = spec.width;
    let color = Rgb(spec.color);
    for y in top..=bottom {
        for x in left..=right {
            let in_band = x < left.saturating_add(w)
                || x + w > right
                || y < top.saturating_add(w)
                || y + w > bottom;
            if in_band {
                out.put_pixel(x, y, color);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn changed(a: &RgbImage, b: &RgbImage) -> Vec<(u32, u32)> {
        a.enumerate_pixels()
            .filter(|(x, y, p)| b.get_pixel(*x, *y) != *p)
            .map(|(x, y, _)| (x, y))
            .collect()
    }

    fn spec(b: PixelBox, width: u32) -> OverlaySpec {
        OverlaySpec {
            image_index: 0,
            bbox: b,
            color: [255, 0, 0],
            width,
        }
    }

    #[test]
    fn zero_width_is_identity() {
        let img = RgbImage::new(10, 10);
        let out = render_overlay(&img, &spec(PixelBox::new(2.0, 2.0, 7.0, 7.0), 0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn unit_stroke_changes_rectangle_border() {
        let img = RgbImage::new(10, 10);
        let out = render_overlay(&img, &spec(PixelBox::new(2.0, 2.0, 7.0, 7.0), 1)).unwrap();
        let diff = changed(&img, &out);
        assert_eq!(diff.len(), 20);
        // every changed pixel lies on the 2..=7 square border
        assert!(diff
            .iter()
            .all(|&(x, y)| (x == 2 || x == 7 || y == 2 || y == 7)
                && (2..=7).contains(&x)
                && (2..=7).contains(&y)));
    }

    #[test]
    fn full_image_box_changes_only_the_frame() {
        let img = RgbImage::new(10, 10);
        let out = render_overlay(&img, &spec(PixelBox::new(0.0, 0.0, 10.0, 10.0), 1)).unwrap();
        let diff = changed(&img, &out);
        assert_eq!(diff.len(), 36);
        assert!(diff
            .iter()
            .all(|&(x, y)| x == 0 || y == 0 || x == 9 || y == 9));
    }

    #[test]
    fn wide_stroke_fills_small_box() {
        let img = RgbImage::new(10, 10);
        let out = render_overlay(&img, &spec(PixelBox::new(2.0, 2.0, 4.0, 4.0), 4)).unwrap();
        assert_eq!(changed(&img, &out).len(), 9);
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let img = RgbImage::new(10, 10);
        assert!(render_overlay(&img, &spec(PixelBox::new(2.0, 2.0, 11.0, 7.0), 1)).is_err());
    }

    #[test]
    fn palette_wraps() {
        let b = PixelBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(OverlaySpec::for_object(0, b, 9, 4).color, PALETTE[1]);
    }
}

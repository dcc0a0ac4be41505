//! Dynamic-resolution tile planning, visual-token accounting and the 0–1000
//! coordinate grid used by the grounding grammar.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of one square tile in pixels.
pub const TILE_SIZE: u32 = 448;

/// Visual tokens per tile: (448 / 14)² patches, merged 2×2 by pixel unshuffle.
pub const DEFAULT_TOKENS_PER_TILE: u64 = 256;

pub const DEFAULT_MAX_TILES: u32 = 40;

/// Upper end of the normalized coordinate grid.
pub const GRID_MAX: u16 = 1000;

/// Canonical camera order for the 3×2 multi-view canvas, top row first.
pub const DEFAULT_VIEW_ORDER: [&str; 6] = [
    "CAM_FRONT_LEFT",
    "CAM_FRONT",
    "CAM_FRONT_RIGHT",
    "CAM_BACK_LEFT",
    "CAM_BACK",
    "CAM_BACK_RIGHT",
];

pub const MULTIVIEW_VIEW_SIZE: ImageDims = ImageDims {
    width: 896,
    height: 448,
};
pub const MULTIVIEW_COLS: u32 = 3;
pub const MULTIVIEW_ROWS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
    #[error("invalid tile configuration: {0}")]
    InvalidConfig(String),
    #[error("box {bbox} exceeds image bounds {dims}")]
    OutOfBounds { bbox: PixelBox, dims: ImageDims },
    #[error("normalized box [{x1}, {y1}, {x2}, {y2}] violates 0 <= x1 <= x2 <= 1000, 0 <= y1 <= y2 <= 1000")]
    InvalidNormalizedBox { x1: i64, y1: i64, x2: i64, y2: i64 },
    #[error("invalid multi-view input: {0}")]
    InvalidViews(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        let dims = ImageDims { width, height };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidDims {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

impl fmt::Display for ImageDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for ImageDims {
    type Err = GeometryError;

    /// Parses the `WxH` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeometryError::InvalidConfig(format!("cannot parse dimensions {s:?}"));
        let (w, h) = s.split_once('x').ok_or_else(bad)?;
        ImageDims::new(w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?)
    }
}

/// Tile-planning knobs. `min_tiles`/`max_tiles` bound the grid size, the
/// thumbnail is appended to every multi-tile plan when enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    pub min_tiles: u32,
    pub max_tiles: u32,
    pub use_thumbnail: bool,
    pub tokens_per_tile: u64,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            min_tiles: 1,
            max_tiles: DEFAULT_MAX_TILES,
            use_thumbnail: true,
            tokens_per_tile: DEFAULT_TOKENS_PER_TILE,
        }
    }
}

impl TileConfig {
    pub fn plan(&self, dims: ImageDims) -> Result<TilePlan, GeometryError> {
        plan_tiles(dims, self.min_tiles, self.max_tiles, self.use_thumbnail)
    }

    pub fn tokens(&self, plan: &TilePlan) -> u64 {
        token_count(plan, self.tokens_per_tile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub cols: u32,
    pub rows: u32,
    pub tile_size: u32,
    pub has_thumbnail: bool,
    pub canvas: ImageDims,
}

impl TilePlan {
    /// Grid tiles, excluding the thumbnail.
    pub fn grid_tiles(&self) -> u32 {
        self.cols * self.rows
    }

    /// Tiles fed to the vision encoder, including the thumbnail.
    pub fn total_tiles(&self) -> u32 {
        self.grid_tiles() + u32::from(self.has_thumbnail)
    }
}

impl fmt::Display for TilePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} tiles", self.cols, self.rows)?;
        if self.has_thumbnail {
            write!(f, " + thumbnail")?;
        }
        Ok(())
    }
}

/// Every `(cols, rows)` grid with `min_tiles <= cols * rows <= max_tiles`,
/// ordered by tile count and then by column count.
pub fn candidate_grids(min_tiles: u32, max_tiles: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for cols in 1..=max_tiles {
        for rows in 1..=max_tiles / cols {
            let n = cols * rows;
            if n >= min_tiles {
                out.push((cols, rows));
            }
        }
    }
    out.sort_by_key(|&(c, r)| (c * r, c));
    out
}

/// `|cols/rows - width/height|` as the exact fraction `|cols·h - rows·w| / (rows·h)`.
fn aspect_distance(cols: u32, rows: u32, dims: ImageDims) -> (u128, u128) {
    let lhs = cols as u128 * dims.height as u128;
    let rhs = rows as u128 * dims.width as u128;
    (lhs.abs_diff(rhs), rows as u128 * dims.height as u128)
}

fn cmp_fraction(a: (u128, u128), b: (u128, u128)) -> Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

/// Picks the tile grid whose aspect ratio best matches `dims`.
///
/// Candidates are scanned in order of increasing tile count. A strictly closer
/// aspect ratio always wins; an exact tie moves to the larger grid only while
/// the image area exceeds half the candidate canvas area, so small images are
/// not blown up onto many tiles.
pub fn plan_tiles(
    dims: ImageDims,
    min_tiles: u32,
    max_tiles: u32,
    use_thumbnail: bool,
) -> Result<TilePlan, GeometryError> {
    dims.validate()?;
    if min_tiles == 0 {
        return Err(GeometryError::InvalidConfig(
            "min_tiles must be at least 1".into(),
        ));
    }
    if min_tiles > max_tiles {
        return Err(GeometryError::InvalidConfig(format!(
            "min_tiles ({min_tiles}) exceeds max_tiles ({max_tiles})"
        )));
    }
    let candidates = candidate_grids(min_tiles, max_tiles);
    let Some(&first) = candidates.first() else {
        return Err(GeometryError::InvalidConfig(format!(
            "no tile grid with {min_tiles}..={max_tiles} tiles"
        )));
    };

    let tile_area = TILE_SIZE as u128 * TILE_SIZE as u128;
    let twice_area = 2 * dims.area() as u128;
    let mut best = first;
    let mut best_dist = aspect_distance(first.0, first.1, dims);
    for &(cols, rows) in &candidates[1..] {
        let dist = aspect_distance(cols, rows, dims);
        match cmp_fraction(dist, best_dist) {
            Ordering::Less => {
                best = (cols, rows);
                best_dist = dist;
            }
            Ordering::Equal if twice_area > (cols * rows) as u128 * tile_area => {
                best = (cols, rows);
                best_dist = dist;
            }
            _ => {}
        }
    }

    let (cols, rows) = best;
    Ok(TilePlan {
        cols,
        rows,
        tile_size: TILE_SIZE,
        has_thumbnail: use_thumbnail && cols * rows > 1,
        canvas: ImageDims {
            width: cols * TILE_SIZE,
            height: rows * TILE_SIZE,
        },
    })
}

pub fn token_count(plan: &TilePlan, tokens_per_tile: u64) -> u64 {
    plan.total_tiles() as u64 * tokens_per_tile
}

/// Axis-aligned box in source-image pixels, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct PixelBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl PixelBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        PixelBox { x1, y1, x2, y2 }
    }

    pub fn full(dims: ImageDims) -> Self {
        PixelBox::new(0.0, 0.0, dims.width as f64, dims.height as f64)
    }

    pub fn is_within(&self, dims: ImageDims) -> bool {
        let w = dims.width as f64;
        let h = dims.height as f64;
        // NaN fails every comparison below.
        0.0 <= self.x1
            && self.x1 <= self.x2
            && self.x2 <= w
            && 0.0 <= self.y1
            && self.y1 <= self.y2
            && self.y2 <= h
    }

    pub fn check_within(&self, dims: ImageDims) -> Result<(), GeometryError> {
        dims.validate()?;
        if self.is_within(dims) {
            Ok(())
        } else {
            Err(GeometryError::OutOfBounds { bbox: *self, dims })
        }
    }

    /// Zero width or zero height.
    pub fn is_degenerate(&self) -> bool {
        self.x1 == self.x2 || self.y1 == self.y2
    }
}

impl From<[f64; 4]> for PixelBox {
    fn from(c: [f64; 4]) -> Self {
        PixelBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<PixelBox> for [f64; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl fmt::Display for PixelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Box on the 0–1000 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[u16; 4]")]
pub struct NormalizedBox {
    x1: u16,
    y1: u16,
    x2: u16,
    y2: u16,
}

impl NormalizedBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, GeometryError> {
        let max = GRID_MAX as i64;
        let ok = 0 <= x1 && x1 <= x2 && x2 <= max && 0 <= y1 && y1 <= y2 && y2 <= max;
        if !ok {
            return Err(GeometryError::InvalidNormalizedBox { x1, y1, x2, y2 });
        }
        Ok(NormalizedBox {
            x1: x1 as u16,
            y1: y1 as u16,
            x2: x2 as u16,
            y2: y2 as u16,
        })
    }

    pub fn coords(&self) -> [u16; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[i64; 4]> for NormalizedBox {
    type Error = GeometryError;

    fn try_from(c: [i64; 4]) -> Result<Self, Self::Error> {
        NormalizedBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<NormalizedBox> for [u16; 4] {
    fn from(b: NormalizedBox) -> Self {
        b.coords()
    }
}

/// `[[x1, y1, x2, y2]]`, the payload of a `<box>` token.
impl fmt::Display for NormalizedBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}, {}, {}]]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Maps a pixel coordinate onto the grid, rounding half away from zero.
fn to_grid(value: f64, extent: u32) -> u16 {
    let scaled = (value / extent as f64 * GRID_MAX as f64).round();
    scaled.clamp(0.0, GRID_MAX as f64) as u16
}

pub fn normalize_box(bbox: &PixelBox, dims: ImageDims) -> Result<NormalizedBox, GeometryError> {
    bbox.check_within(dims)?;
    let x1 = to_grid(bbox.x1, dims.width);
    let y1 = to_grid(bbox.y1, dims.height);
    let x2 = to_grid(bbox.x2, dims.width);
    let y2 = to_grid(bbox.y2, dims.height);
    // Rounding is monotone, so ordering survives.
    Ok(NormalizedBox { x1, y1, x2, y2 })
}

/// Normalizes a single point, e.g. an object centre.
pub fn normalize_point(x: f64, y: f64, dims: ImageDims) -> Result<(u16, u16), GeometryError> {
    let probe = PixelBox::new(x, y, x, y);
    probe.check_within(dims)?;
    Ok((to_grid(x, dims.width), to_grid(y, dims.height)))
}

pub fn denormalize_box(nbox: &NormalizedBox, dims: ImageDims) -> PixelBox {
    let w = dims.width as f64;
    let h = dims.height as f64;
    let g = GRID_MAX as f64;
    PixelBox {
        x1: nbox.x1 as f64 / g * w,
        y1: nbox.y1 as f64 / g * h,
        x2: nbox.x2 as f64 / g * w,
        y2: nbox.y2 as f64 / g * h,
    }
}

/// Six camera views resized to 896×448 and arranged on a 3×2 grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiViewLayout {
    pub view_order: Vec<String>,
    pub per_view_size: ImageDims,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub canvas: ImageDims,
}

impl MultiViewLayout {
    /// Top-left pixel of the view at position `index` in `view_order`.
    pub fn view_origin(&self, index: usize) -> (u32, u32) {
        let col = index as u32 % self.grid_cols;
        let row = index as u32 / self.grid_cols;
        (
            col * self.per_view_size.width,
            row * self.per_view_size.height,
        )
    }

    pub fn position_of(&self, camera: &str) -> Option<usize> {
        self.view_order.iter().position(|c| c == camera)
    }
}

pub fn default_view_order() -> Vec<String> {
    DEFAULT_VIEW_ORDER.iter().map(|s| s.to_string()).collect()
}

/// Lays out six views in the canonical camera order.
pub fn multiview_layout(views: &[(String, ImageDims)]) -> Result<MultiViewLayout, GeometryError> {
    multiview_layout_with_order(views, &default_view_order())
}

pub fn multiview_layout_with_order(
    views: &[(String, ImageDims)],
    order: &[String],
) -> Result<MultiViewLayout, GeometryError> {
    let slots = (MULTIVIEW_COLS * MULTIVIEW_ROWS) as usize;
    if order.len() != slots {
        return Err(GeometryError::InvalidViews(format!(
            "view order must name {slots} cameras, got {}",
            order.len()
        )));
    }
    for (i, cam) in order.iter().enumerate() {
        if order[..i].contains(cam) {
            return Err(GeometryError::InvalidViews(format!(
                "duplicate camera {cam} in view order"
            )));
        }
    }
    if views.len() != slots {
        return Err(GeometryError::InvalidViews(format!(
            "expected {slots} views, got {}",
            views.len()
        )));
    }
    for (i, (cam, dims)) in views.iter().enumerate() {
        dims.validate()?;
        if views[..i].iter().any(|(c, _)| c == cam) {
            return Err(GeometryError::InvalidViews(format!(
                "duplicate camera {cam}"
            )));
        }
        if !order.contains(cam) {
            return Err(GeometryError::InvalidViews(format!(
                "camera {cam} is not part of the view order"
            )));
        }
    }
    Ok(MultiViewLayout {
        view_order: order.to_vec(),
        per_view_size: MULTIVIEW_VIEW_SIZE,
        grid_cols: MULTIVIEW_COLS,
        grid_rows: MULTIVIEW_ROWS,
        canvas: ImageDims {
            width: MULTIVIEW_COLS * MULTIVIEW_VIEW_SIZE.width,
            height: MULTIVIEW_ROWS * MULTIVIEW_VIEW_SIZE.height,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    /// Independent selection oracle: collect every minimum-distance grid using
    /// floating-point ratios, then keep the largest tied grid whose canvas is
    /// at most twice the image area, falling back to the smallest.
    fn oracle(d: ImageDims, min: u32, max: u32) -> (u32, u32) {
        let target = d.width as f64 / d.height as f64;
        let mut all = Vec::new();
        for c in 1..=max {
            for r in 1..=max {
                if c * r >= min && c * r <= max {
                    all.push((c, r, (c as f64 / r as f64 - target).abs()));
                }
            }
        }
        let best = all.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
        let mut tied: Vec<(u32, u32)> = all
            .iter()
            .filter(|x| (x.2 - best).abs() <= 1e-12 * target.max(1.0))
            .map(|x| (x.0, x.1))
            .collect();
        tied.sort_by_key(|&(c, r)| c * r);
        let area = d.width as f64 * d.height as f64;
        tied[1..]
            .iter()
            .rev()
            .find(|&&(c, r)| area > 0.5 * (c * r) as f64 * 448.0 * 448.0)
            .copied()
            .unwrap_or(tied[0])
    }

    #[test]
    fn square_tile_is_single() {
        let p = plan_tiles(dims(448, 448), 1, 40, true).unwrap();
        assert_eq!((p.cols, p.rows, p.has_thumbnail), (1, 1, false));
        assert_eq!(token_count(&p, 256), 256);
    }

    #[test]
    fn multiview_canvas_plan() {
        let p = plan_tiles(dims(2688, 896), 1, 40, true).unwrap();
        assert_eq!((p.cols, p.rows, p.has_thumbnail), (6, 2, true));
        assert_eq!(p.total_tiles(), 13);
        assert_eq!(token_count(&p, 256), 3328);
        assert_eq!(p.canvas, dims(2688, 896));
    }

    #[test]
    fn wide_image_with_cap_twelve() {
        let p = plan_tiles(dims(896, 448), 1, 12, true).unwrap();
        assert_eq!((p.cols, p.rows, p.has_thumbnail), (2, 1, true));
        assert_eq!(oracle(dims(896, 448), 1, 12), (2, 1));
    }

    #[test]
    fn forty_tile_token_count() {
        let p = TilePlan {
            cols: 8,
            rows: 5,
            tile_size: TILE_SIZE,
            has_thumbnail: false,
            canvas: dims(8 * 448, 5 * 448),
        };
        assert_eq!(token_count(&p, 256), 10240);
    }

    #[test]
    fn thumbnail_disabled() {
        let p = plan_tiles(dims(2688, 896), 1, 40, false).unwrap();
        assert!(!p.has_thumbnail);
        assert_eq!(token_count(&p, 256), 12 * 256);
    }

    #[test]
    fn min_above_max_is_rejected() {
        assert!(matches!(
            plan_tiles(dims(10, 10), 5, 4, true),
            Err(GeometryError::InvalidConfig(_))
        ));
        assert!(plan_tiles(dims(10, 10), 0, 4, true).is_err());
        assert!(ImageDims::new(0, 3).is_err());
    }

    #[test]
    fn min_tiles_forces_larger_grids() {
        let p = plan_tiles(dims(448, 448), 4, 40, true).unwrap();
        assert_eq!((p.cols, p.rows), (2, 2));
        assert!(p.has_thumbnail);
    }

    #[test]
    fn normalize_examples() {
        let d = dims(2000, 1000);
        let b = normalize_box(&PixelBox::new(500.0, 250.0, 1500.0, 750.0), d).unwrap();
        assert_eq!(b.coords(), [250, 250, 750, 750]);
        assert_eq!(b.to_string(), "[[250, 250, 750, 750]]");
        let full = normalize_box(&PixelBox::full(d), d).unwrap();
        assert_eq!(full.coords(), [0, 0, 1000, 1000]);
        let zero = normalize_box(&PixelBox::new(0.0, 0.0, 0.0, 0.0), dims(448, 448)).unwrap();
        assert_eq!(zero.coords(), [0, 0, 0, 0]);
    }

    #[test]
    fn normalize_rounds_half_away_from_zero() {
        // 1/2000 * 1000 = 0.5 -> 1; 3/2000 * 1000 = 1.5 -> 2
        let d = dims(2000, 2000);
        let b = normalize_box(&PixelBox::new(1.0, 3.0, 5.0, 7.0), d).unwrap();
        assert_eq!(b.coords(), [1, 2, 3, 4]);
    }

    #[test]
    fn out_of_bounds_and_inverted_boxes_fail() {
        let d = dims(100, 100);
        for b in [
            PixelBox::new(-1.0, 0.0, 10.0, 10.0),
            PixelBox::new(0.0, 0.0, 101.0, 10.0),
            PixelBox::new(20.0, 0.0, 10.0, 10.0),
            PixelBox::new(0.0, f64::NAN, 10.0, 10.0),
        ] {
            assert!(matches!(
                normalize_box(&b, d),
                Err(GeometryError::OutOfBounds { .. })
            ));
        }
    }

    #[test]
    fn denormalize_examples() {
        let full = NormalizedBox::new(0, 0, 1000, 1000).unwrap();
        assert_eq!(
            denormalize_box(&full, dims(448, 448)),
            PixelBox::new(0.0, 0.0, 448.0, 448.0)
        );
        let b = NormalizedBox::new(250, 250, 750, 750).unwrap();
        assert_eq!(
            denormalize_box(&b, dims(2000, 1000)),
            PixelBox::new(500.0, 250.0, 1500.0, 750.0)
        );
    }

    #[test]
    fn normalized_box_bounds() {
        assert!(NormalizedBox::new(0, 0, 1001, 5).is_err());
        assert!(NormalizedBox::new(5, 0, 4, 5).is_err());
        assert!(NormalizedBox::new(-1, 0, 4, 5).is_err());
        let b: NormalizedBox = serde_json::from_str("[1, 2, 3, 4]").unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1,2,3,4]");
        assert!(serde_json::from_str::<NormalizedBox>("[1, 2, 3, 1004]").is_err());
    }

    #[test]
    fn multiview_layout_canvas() {
        let views: Vec<(String, ImageDims)> = DEFAULT_VIEW_ORDER
            .iter()
            .rev()
            .map(|c| (c.to_string(), dims(1600, 900)))
            .collect();
        let layout = multiview_layout(&views).unwrap();
        assert_eq!(layout.canvas, dims(2688, 896));
        assert_eq!(layout.view_order[1], "CAM_FRONT");
        assert_eq!(layout.view_origin(4), (896, 448));
        let plan = TileConfig::default().plan(layout.canvas).unwrap();
        assert_eq!(plan.grid_tiles(), 12);
        assert!(plan.has_thumbnail);
    }

    #[test]
    fn multiview_rejects_bad_inputs() {
        let mut views: Vec<(String, ImageDims)> = DEFAULT_VIEW_ORDER
            .iter()
            .map(|c| (c.to_string(), dims(1600, 900)))
            .collect();
        assert!(multiview_layout(&views[..5]).is_err());
        views[5].0 = "CAM_FRONT".into();
        assert!(multiview_layout(&views).is_err());
        views[5].0 = "CAM_ROOF".into();
        assert!(multiview_layout(&views).is_err());
    }

    proptest! {
        #[test]
        fn plan_matches_oracle(w in 1u32..6000, h in 1u32..6000, max in 1u32..=40) {
            let d = dims(w, h);
            let p = plan_tiles(d, 1, max, true).unwrap();
            prop_assert!(p.grid_tiles() <= max);
            prop_assert_eq!(p.has_thumbnail, p.grid_tiles() > 1);
            prop_assert_eq!((p.cols, p.rows), oracle(d, 1, max));
        }

        #[test]
        fn token_count_is_linear(c in 1u32..8, r in 1u32..5, tpt in 1u64..1024) {
            let mk = |c: u32| TilePlan {
                cols: c, rows: r, tile_size: TILE_SIZE, has_thumbnail: false,
                canvas: ImageDims { width: c * TILE_SIZE, height: r * TILE_SIZE },
            };
            prop_assert_eq!(token_count(&mk(2 * c), tpt), 2 * token_count(&mk(c), tpt));
        }

        #[test]
        fn normalize_round_trip_within_half_unit(
            w in 1u32..5000, h in 1u32..5000,
            a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0, e in 0.0f64..=1.0,
        ) {
            let d = dims(w, h);
            let (x1, x2) = if a <= b { (a, b) } else { (b, a) };
            let (y1, y2) = if c <= e { (c, e) } else { (e, c) };
            let px = PixelBox::new(x1 * w as f64, y1 * h as f64, x2 * w as f64, y2 * h as f64);
            let n = normalize_box(&px, d).unwrap();
            let [nx1, ny1, nx2, ny2] = n.coords();
            prop_assert!(nx1 <= nx2 && ny1 <= ny2);
            let back = denormalize_box(&n, d);
            let tol_x = w as f64 / 2000.0 + 1e-9;
            let tol_y = h as f64 / 2000.0 + 1e-9;
            prop_assert!((back.x1 - px.x1).abs() <= tol_x);
            prop_assert!((back.x2 - px.x2).abs() <= tol_x);
            prop_assert!((back.y1 - px.y1).abs() <= tol_y);
            prop_assert!((back.y2 - px.y2).abs() <= tol_y);
        }

        #[test]
        fn unit_grid_round_trip_is_exact(x1 in 0u32..=1000, x2 in 0u32..=1000) {
            let d = dims(1000, 1000);
            let (lo, hi) = (x1.min(x2) as f64, x1.max(x2) as f64);
            let px = PixelBox::new(lo, lo, hi, hi);
            let back = denormalize_box(&normalize_box(&px, d).unwrap(), d);
            prop_assert_eq!(back, px);
        }
    }
}

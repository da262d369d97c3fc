//! Correspondence filtering and template search.
//!
//! Feature detection itself is an input boundary: matches arrive with
//! descriptor distances attached (synthetic or from a real pipeline) and
//! are narrowed down by Lowe's ratio test and a best-n selection. The
//! sliding normalized 2-norm filter locates a single correspondence for
//! the scene's extremal-disparity pixel.

use thiserror::Error;

use crate::raster::Raster;

/// Default Lowe ratio; the canonical value.
pub const LOWE_RATIO_DEFAULT: f64 = 0.75;
/// Default template window edge (odd).
pub const SEARCH_WINDOW_DEFAULT: u32 = 11;
/// Default vertical half-extent of the search band in rows.
pub const SEARCH_BAND_ROWS: u32 = 8;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("search region is empty")]
    EmptySearchRegion,
    #[error("template window does not fit inside the image at ({0}, {1})")]
    PatchOutOfBounds(u32, u32),
    #[error("template patch has zero variance; a constant template matches everywhere")]
    ZeroNormPatch,
    #[error("window edge {0} must be odd")]
    WindowNotOdd(u32),
}

/// A keypoint correspondence with descriptor-distance metadata.
/// `best_distance <= second_distance` is expected from any well-formed
/// matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMatch {
    pub left_pixel: (f64, f64),
    pub right_pixel: (f64, f64),
    pub best_distance: f64,
    pub second_distance: f64,
}

/// Luminance raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    raster: Raster,
}

impl GrayImage {
    pub fn from_raster(raster: Raster) -> Self {
        debug_assert!(raster.values().iter().all(|v| v.is_finite()));
        Self { raster }
    }

    pub fn width(&self) -> u32 {
        self.raster.width()
    }

    pub fn height(&self) -> u32 {
        self.raster.height()
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.raster.get(x, y)
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }
}

/// Inclusive rectangle of candidate patch centers in the right image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchRegion {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl SearchRegion {
    /// Full-width band of `+/- half_rows` rows around `center_y`.
    pub fn row_band(center_y: u32, half_rows: u32, width: u32, height: u32) -> Self {
        Self {
            min_x: 0,
            min_y: center_y.saturating_sub(half_rows),
            max_x: width.saturating_sub(1),
            max_y: (center_y + half_rows).min(height.saturating_sub(1)),
        }
    }

    /// Shrinks the region so every candidate center keeps a full window
    /// inside a `width x height` image. Returns `None` when nothing is left.
    pub fn clamped_for_window(&self, window: u32, width: u32, height: u32) -> Option<Self> {
        let margin = window / 2;
        if width < window || height < window {
            return None;
        }
        let clamped = Self {
            min_x: self.min_x.max(margin),
            min_y: self.min_y.max(margin),
            max_x: self.max_x.min(width - 1 - margin),
            max_y: self.max_y.min(height - 1 - margin),
        };
        (clamped.min_x <= clamped.max_x && clamped.min_y <= clamped.max_y).then_some(clamped)
    }

    pub fn is_empty(&self) -> bool {
        self.min_x > self.max_x || self.min_y > self.max_y
    }
}

/// Lowe's ratio test: keep a match only when its best descriptor distance
/// is strictly below `ratio` times the second best. Input order preserved.
pub fn lowe_ratio_filter(matches: &[FeatureMatch], ratio: f64) -> Vec<FeatureMatch> {
    debug_assert!(ratio > 0.0 && ratio < 1.0);
    matches
        .iter()
        .copied()
        .filter(|m| m.best_distance < ratio * m.second_distance)
        .collect()
}

/// The `min(n, len)` matches with smallest best-distance, ascending. Ties
/// break on the left pixel's (row, column) so the output is deterministic.
pub fn select_top_n(matches: &[FeatureMatch], n: usize) -> Vec<FeatureMatch> {
    debug_assert!(n >= 1);
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| {
        a.best_distance
            .total_cmp(&b.best_distance)
            .then(a.left_pixel.1.total_cmp(&b.left_pixel.1))
            .then(a.left_pixel.0.total_cmp(&b.left_pixel.0))
    });
    sorted.truncate(n);
    sorted
}

/// L2 distance between the normalized template and the normalized candidate
/// patch, both centered on their respective pixels with the same odd window.
fn normalized_patch_distance(
    left: &GrayImage,
    right: &GrayImage,
    template_center: (u32, u32),
    candidate_center: (u32, u32),
    half: u32,
    template_norm: f64,
) -> f64 {
    let mut candidate_sq = 0.0f64;
    for dy in 0..=2 * half {
        for dx in 0..=2 * half {
            let v = right.get(candidate_center.0 - half + dx, candidate_center.1 - half + dy) as f64;
            candidate_sq += v * v;
        }
    }
    let candidate_norm = candidate_sq.sqrt();
    if candidate_norm <= 0.0 {
        return f64::INFINITY;
    }
    let mut dist_sq = 0.0f64;
    for dy in 0..=2 * half {
        for dx in 0..=2 * half {
            let t = left.get(template_center.0 - half + dx, template_center.1 - half + dy) as f64;
            let w = right.get(candidate_center.0 - half + dx, candidate_center.1 - half + dy) as f64;
            let d = t / template_norm - w / candidate_norm;
            dist_sq += d * d;
        }
    }
    dist_sq.sqrt()
}

/// Sliding normalized 2-norm distance filter: returns the right-image
/// center minimizing `|| T/|T| - W/|W| ||_2` over the search region. Ties
/// break on the smallest row-major index.
pub fn min_disparity_correspondence(
    left: &GrayImage,
    right: &GrayImage,
    left_pixel: (u32, u32),
    window: u32,
    search: &SearchRegion,
) -> Result<(u32, u32), MatchError> {
    if window.is_multiple_of(2) || window == 0 {
        return Err(MatchError::WindowNotOdd(window));
    }
    if search.is_empty() {
        return Err(MatchError::EmptySearchRegion);
    }
    let half = window / 2;
    let (tx, ty) = left_pixel;
    if tx < half || ty < half || tx + half >= left.width() || ty + half >= left.height() {
        return Err(MatchError::PatchOutOfBounds(tx, ty));
    }
    if search.min_x < half
        || search.min_y < half
        || search.max_x + half >= right.width()
        || search.max_y + half >= right.height()
    {
        return Err(MatchError::PatchOutOfBounds(search.min_x, search.min_y));
    }

    // Constant patches are rejected because they match any constant region
    // regardless of level.
    let mut sum_sq = 0.0f64;
    let mut first = None;
    let mut constant = true;
    for dy in 0..=2 * half {
        for dx in 0..=2 * half {
            let v = left.get(tx - half + dx, ty - half + dy);
            match first {
                None => first = Some(v),
                Some(f) if f != v => constant = false,
                _ => {}
            }
            sum_sq += (v as f64) * (v as f64);
        }
    }
    let template_norm = sum_sq.sqrt();
    if constant || template_norm <= 0.0 {
        return Err(MatchError::ZeroNormPatch);
    }

    let mut best: Option<(f64, u64)> = None;
    for cy in search.min_y..=search.max_y {
        for cx in search.min_x..=search.max_x {
            let d = normalized_patch_distance(left, right, (tx, ty), (cx, cy), half, template_norm);
            let index = cy as u64 * right.width() as u64 + cx as u64;
            let better = match best {
                None => true,
                Some((bd, bi)) => d < bd || (d == bd && index < bi),
            };
            if better {
                best = Some((d, index));
            }
        }
    }
    let (distance, index) = best.ok_or(MatchError::EmptySearchRegion)?;
    if distance.is_infinite() {
        // Every candidate patch had zero norm.
        return Err(MatchError::ZeroNormPatch);
    }
    let w = right.width() as u64;
    Ok(((index % w) as u32, (index / w) as u32))
}

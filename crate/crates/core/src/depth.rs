//! Dense metric depth from scale-free disparity.
//!
//! Sparse triangulated anchors fix the metric scale: each anchor's
//! `depth * disparity` product scales the whole disparity map, the scaled
//! maps are averaged, the map minimum is re-anchored to an independently
//! estimated minimum depth, and the scalar min/max estimates are smoothed
//! over a short temporal window before use.

use std::collections::VecDeque;

use thiserror::Error;

use crate::camera::{
    refine_point, triangulate, GeometryError, PixelMatch, ProjectionMatrix, RefineConfig,
};
use crate::matching::{min_disparity_correspondence, GrayImage, MatchError, SearchRegion};
use crate::raster::Raster;

/// Disparities at or below this floor are clamped before division; such
/// pixels represent "beyond sensing range".
pub const DISPARITY_FLOOR: f64 = 1e-3;

/// Length of the temporal smoothing windows for the scalar min/max depth
/// estimates.
pub const SMOOTHING_WINDOW_DEFAULT: usize = 6;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("no depth anchors supplied")]
    NoAnchors,
    #[error("anchor disparity {0} is at or below the {DISPARITY_FLOOR} floor")]
    AnchorDisparityTooSmall(f64),
    #[error("all {0} matches were rejected during anchor construction")]
    InsufficientMatches(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Dense nonnegative disparity raster (relative scale, unitless).
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap(pub Raster);

impl DisparityMap {
    pub fn width(&self) -> u32 {
        self.0.width()
    }

    pub fn height(&self) -> u32 {
        self.0.height()
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.0.get(x, y)
    }
}

/// Dense metric depth raster in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(pub Raster);

impl DepthMap {
    pub fn width(&self) -> u32 {
        self.0.width()
    }

    pub fn height(&self) -> u32 {
        self.0.height()
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.0.get(x, y)
    }
}

/// A triangulated scene point pinned to a disparity-map pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAnchor {
    pub pixel: (u32, u32),
    /// Refined camera-frame depth in meters.
    pub depth: f64,
    /// Predicted disparity at that pixel.
    pub disparity: f64,
}

/// Ring of the most recent scalar estimates; the smoothed value is their
/// arithmetic mean. Single-owner mutable state: one writer.
#[derive(Debug, Clone)]
pub struct SmoothingWindow {
    capacity: usize,
    entries: VecDeque<f64>,
}

impl SmoothingWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    /// Inserts an estimate, evicting the oldest beyond capacity, and
    /// returns the windowed average.
    pub fn update(&mut self, estimate: f64) -> f64 {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(estimate);
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        let Some(first) = self.entries.front().copied() else {
            return 0.0;
        };
        // Shifted form: exact when all entries are identical.
        let delta_sum: f64 = self.entries.iter().map(|e| e - first).sum();
        first + delta_sum / self.entries.len() as f64
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-run mutable state of the depth pipeline: the two smoothing windows.
#[derive(Debug, Clone)]
pub struct DepthPipelineState {
    pub z_min_window: SmoothingWindow,
    pub z_max_window: SmoothingWindow,
}

impl DepthPipelineState {
    pub fn new(window: usize) -> Self {
        Self {
            z_min_window: SmoothingWindow::new(window),
            z_max_window: SmoothingWindow::new(window),
        }
    }
}

impl Default for DepthPipelineState {
    fn default() -> Self {
        Self::new(SMOOTHING_WINDOW_DEFAULT)
    }
}

/// Tunables of [`estimate_metric_depth`].
#[derive(Debug, Clone)]
pub struct DepthParams {
    pub disparity_floor: f64,
    pub refine: RefineConfig,
    /// Odd template edge for the extremal-pixel correspondence search.
    pub search_window: u32,
    /// Vertical half-extent of the search band in rows.
    pub search_band_rows: u32,
    /// Bound the applied shift by the current frame's direct estimate.
    /// During a steady approach the windowed average lags behind the true
    /// minimum and would otherwise place every obstacle farther away than
    /// observed.
    pub conservative_shift: bool,
    /// Extremal-pixel searches are skipped within this pixel radius of the
    /// epipole, where triangulation is unconditioned.
    pub epipole_margin_px: f64,
}

impl Default for DepthParams {
    fn default() -> Self {
        Self {
            disparity_floor: DISPARITY_FLOOR,
            refine: RefineConfig::default(),
            search_window: crate::matching::SEARCH_WINDOW_DEFAULT,
            search_band_rows: crate::matching::SEARCH_BAND_ROWS,
            conservative_shift: true,
            epipole_margin_px: 16.0,
        }
    }
}

/// Dense result plus the scalar estimates recorded per frame.
#[derive(Debug, Clone)]
pub struct DepthEstimate {
    pub map: DepthMap,
    pub z_min_raw: f64,
    pub z_min_smoothed: f64,
    pub z_max_raw: f64,
    pub z_max_smoothed: f64,
    /// Ceiling actually applied to the map; pixels at this value are
    /// beyond sensing range.
    pub clamp_ceiling: f64,
    pub anchor_count: usize,
}

/// Scales the disparity map separately per anchor (`s_i = depth_i *
/// disparity_i`) and averages: each output pixel is
/// `mean_i(s_i / max(disp, floor))`. Anchor order fixes the summation
/// order, so the result is deterministic.
pub fn scale_disparity(
    disp: &DisparityMap,
    anchors: &[DepthAnchor],
    floor: f64,
) -> Result<DepthMap, DepthError> {
    if anchors.is_empty() {
        return Err(DepthError::NoAnchors);
    }
    for a in anchors {
        if a.disparity <= floor {
            return Err(DepthError::AnchorDisparityTooSmall(a.disparity));
        }
    }
    let scales: Vec<f64> = anchors.iter().map(|a| a.depth * a.disparity).collect();
    let n = scales.len() as f64;
    let mut out = Raster::filled(disp.width(), disp.height(), 0.0);
    for y in 0..disp.height() {
        for x in 0..disp.width() {
            let d = (disp.get(x, y) as f64).max(floor);
            let mut acc = 0.0f64;
            for s in &scales {
                acc += s / d;
            }
            out.set(x, y, (acc / n) as f32);
        }
    }
    Ok(DepthMap(out))
}

/// Re-anchors the map minimum to `z_min`: `out = in - min(in) + z_min`.
/// Pixel ordering is preserved and `min(out)` equals `z_min` exactly in
/// `f32` arithmetic.
pub fn apply_min_depth_shift(unshifted: &DepthMap, z_min: f64) -> DepthMap {
    debug_assert!(z_min >= 0.0);
    let min = unshifted.0.min_value();
    let z = z_min as f32;
    let mut out = unshifted.0.clone();
    for v in out.values_mut() {
        *v = (*v - min) + z;
    }
    DepthMap(out)
}

/// Caps every pixel at the smoothed maximum-depth estimate.
pub fn clamp_depth_ceiling(map: &DepthMap, z_max: f64) -> DepthMap {
    let ceiling = z_max as f32;
    let mut out = map.0.clone();
    for v in out.values_mut() {
        *v = v.min(ceiling);
    }
    DepthMap(out)
}

/// Pixel with the largest disparity value; ties break on the smallest
/// row-major index.
fn argmax_disparity(disp: &DisparityMap) -> (u32, u32) {
    let mut best = (f32::NEG_INFINITY, 0u32, 0u32);
    for y in 0..disp.height() {
        for x in 0..disp.width() {
            let v = disp.get(x, y);
            if v > best.0 {
                best = (v, x, y);
            }
        }
    }
    (best.1, best.2)
}

fn argmin_disparity(disp: &DisparityMap) -> (u32, u32) {
    let mut best = (f32::INFINITY, 0u32, 0u32);
    for y in 0..disp.height() {
        for x in 0..disp.width() {
            let v = disp.get(x, y);
            if v < best.0 {
                best = (v, x, y);
            }
        }
    }
    (best.1, best.2)
}

/// Triangulates the scene depth at an extremal-disparity pixel by locating
/// its correspondence in the other frame with the sliding filter. Returns
/// `None` when the search or triangulation degenerates (uniform patch,
/// missing texture, bad baseline); callers fall back to the scaled map's
/// own extremum.
fn extremal_depth_via_search(
    pixel: (u32, u32),
    left_img: &GrayImage,
    right_img: &GrayImage,
    left_proj: &ProjectionMatrix,
    right_proj: &ProjectionMatrix,
    params: &DepthParams,
) -> Option<f64> {
    let half = params.search_window / 2;
    let w = left_img.width();
    let h = left_img.height();
    if w < params.search_window || h < params.search_window {
        return None;
    }
    let cx = pixel.0.clamp(half, w - 1 - half);
    let cy = pixel.1.clamp(half, h - 1 - half);

    // Pixels near the epipole have almost no parallax; their triangulated
    // depth is unbounded noise. Happens under forward motion, where the
    // epipole sits inside the image.
    if let Some(center) = right_proj.center() {
        if let Ok(epipole) = left_proj.project_pixel(&center) {
            let d = nalgebra::Vector2::new(cx as f64 - epipole.x, cy as f64 - epipole.y);
            if d.norm() < params.epipole_margin_px {
                return None;
            }
        }
    }
    let region = SearchRegion::row_band(cy, params.search_band_rows, w, h)
        .clamped_for_window(params.search_window, w, h)?;
    let found = match min_disparity_correspondence(left_img, right_img, (cx, cy), params.search_window, &region)
    {
        Ok(p) => p,
        Err(MatchError::ZeroNormPatch) => return None,
        Err(_) => return None,
    };
    let m = PixelMatch::new(
        nalgebra::Vector2::new(cx as f64, cy as f64),
        nalgebra::Vector2::new(found.0 as f64, found.1 as f64),
    );
    let initial = triangulate(&m, left_proj, right_proj).ok()?;
    let refined = refine_point(&initial, &m, left_proj, right_proj, &params.refine).ok()?;
    let depth = left_proj.depth_of(&refined.point());
    (depth.is_finite() && depth > 0.0).then_some(depth)
}

/// Normalizes both disparity rasters by their common maximum so the sliding
/// filter operates on `[0, 1]` luminance.
fn disparity_images(left: &DisparityMap, right: &DisparityMap) -> Option<(GrayImage, GrayImage)> {
    let max = left.0.max_value().max(right.0.max_value());
    if max <= 0.0 {
        return None;
    }
    let normalize = |r: &Raster| {
        let values = r.values().iter().map(|v| v / max).collect();
        GrayImage::from_raster(Raster::from_values(r.width(), r.height(), values))
    };
    Some((normalize(&left.0), normalize(&right.0)))
}

/// Full classical depth stage for one pseudo-stereo frame pair.
///
/// `matches` are already ratio-filtered and truncated to the top n; the
/// "left" image is the frame the returned depth map belongs to. Each match
/// is triangulated and refined into a [`DepthAnchor`]; unusable matches
/// (degenerate baseline, behind-camera, clamped disparity) are dropped and
/// only an empty anchor set is an error.
pub fn estimate_metric_depth(
    disp_left: &DisparityMap,
    disp_right: &DisparityMap,
    matches: &[PixelMatch],
    left_proj: &ProjectionMatrix,
    right_proj: &ProjectionMatrix,
    state: &mut DepthPipelineState,
    params: &DepthParams,
) -> Result<DepthEstimate, DepthError> {
    let mut anchors = Vec::with_capacity(matches.len());
    for m in matches {
        let Ok(initial) = triangulate(m, left_proj, right_proj) else {
            continue;
        };
        let Ok(refined) = refine_point(&initial, m, left_proj, right_proj, &params.refine) else {
            continue;
        };
        let depth = left_proj.depth_of(&refined.point());
        if !(depth.is_finite() && depth > 0.0) {
            continue;
        }
        let px = (m.left.x.round().max(0.0) as u32).min(disp_left.width() - 1);
        let py = (m.left.y.round().max(0.0) as u32).min(disp_left.height() - 1);
        let disparity = disp_left.get(px, py) as f64;
        if disparity <= params.disparity_floor {
            continue;
        }
        anchors.push(DepthAnchor { pixel: (px, py), depth, disparity });
    }
    if anchors.is_empty() {
        return Err(DepthError::InsufficientMatches(matches.len()));
    }

    let unshifted = scale_disparity(disp_left, &anchors, params.disparity_floor)?;

    let images = disparity_images(disp_left, disp_right);
    let search = |pixel: (u32, u32)| -> Option<f64> {
        let (li, ri) = images.as_ref()?;
        extremal_depth_via_search(pixel, li, ri, left_proj, right_proj, params)
    };

    // Nearest scene point sits at the largest disparity, farthest at the
    // smallest. The search estimates the same quantity as the anchored
    // map's own extremum, so the two must agree tightly; a searched depth
    // outside the bracket is a template mismatch or a degenerate
    // triangulation and falls back to the map extremum.
    let min_u = unshifted.0.min_value() as f64;
    let max_u = unshifted.0.max_value() as f64;
    let bracket = |reference: f64| move |d: f64| {
        (d >= 0.85 * reference && d <= 1.15 * reference).then_some(d)
    };
    let z_min_raw = search(argmax_disparity(disp_left))
        .and_then(bracket(min_u))
        .unwrap_or(min_u);
    let z_max_raw = search(argmin_disparity(disp_left))
        .and_then(bracket(max_u))
        .unwrap_or(max_u);

    let z_min_smoothed = state.z_min_window.update(z_min_raw);
    let z_max_smoothed = state.z_max_window.update(z_max_raw);

    let (shift_target, ceiling) = if params.conservative_shift {
        (z_min_smoothed.min(z_min_raw), z_max_smoothed.max(z_max_raw))
    } else {
        (z_min_smoothed, z_max_smoothed)
    };
    let shifted = apply_min_depth_shift(&unshifted, shift_target);
    let map = if ceiling > shift_target {
        clamp_depth_ceiling(&shifted, ceiling)
    } else {
        shifted
    };

    Ok(DepthEstimate {
        map,
        z_min_raw,
        z_min_smoothed,
        z_max_raw,
        z_max_smoothed,
        clamp_ceiling: ceiling.max(shift_target),
        anchor_count: anchors.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anchor(depth: f64, disparity: f64) -> DepthAnchor {
        DepthAnchor { pixel: (0, 0), depth, disparity }
    }

    #[test]
    fn anchor_self_consistency() {
        let disp = DisparityMap(Raster::filled(4, 4, 10.0));
        let out = scale_disparity(&disp, &[anchor(2.0, 10.0)], DISPARITY_FLOOR).unwrap();
        assert_eq!(out.get(0, 0), 2.0);
    }

    #[test]
    fn inverse_proportionality() {
        let mut r = Raster::filled(2, 1, 10.0);
        r.set(1, 0, 5.0);
        let out = scale_disparity(&DisparityMap(r), &[anchor(2.0, 10.0)], DISPARITY_FLOOR).unwrap();
        assert_eq!(out.get(0, 0), 2.0);
        assert_eq!(out.get(1, 0), 4.0);
    }

    #[test]
    fn multi_anchor_mean_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let values: Vec<f32> = (0..64).map(|_| rng.gen_range(1.0..20.0)).collect();
        let disp = DisparityMap(Raster::from_values(8, 8, values.clone()));
        let anchors = vec![anchor(2.0, 8.0), anchor(3.5, 4.0), anchor(1.25, 16.0)];
        let out = scale_disparity(&disp, &anchors, DISPARITY_FLOOR).unwrap();
        for (i, v) in values.iter().enumerate() {
            let d = (*v as f64).max(DISPARITY_FLOOR);
            let expected = anchors.iter().map(|a| a.depth * a.disparity / d).sum::<f64>() / 3.0;
            assert_relative_eq!(out.0.values()[i] as f64, expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn no_anchors_is_an_error() {
        let disp = DisparityMap(Raster::filled(2, 2, 1.0));
        assert!(matches!(
            scale_disparity(&disp, &[], DISPARITY_FLOOR),
            Err(DepthError::NoAnchors)
        ));
    }

    #[test]
    fn tiny_anchor_disparity_is_an_error() {
        let disp = DisparityMap(Raster::filled(2, 2, 1.0));
        assert!(matches!(
            scale_disparity(&disp, &[anchor(1.0, 1e-4)], DISPARITY_FLOOR),
            Err(DepthError::AnchorDisparityTooSmall(_))
        ));
    }

    #[test]
    fn monotone_in_disparity() {
        // Larger disparity must map to smaller unshifted depth.
        let mut r = Raster::filled(3, 1, 0.0);
        r.set(0, 0, 12.0);
        r.set(1, 0, 6.0);
        r.set(2, 0, 3.0);
        let out =
            scale_disparity(&DisparityMap(r), &[anchor(2.0, 8.0), anchor(4.0, 5.0)], DISPARITY_FLOOR)
                .unwrap();
        assert!(out.get(0, 0) < out.get(1, 0));
        assert!(out.get(1, 0) < out.get(2, 0));
    }

    #[test]
    fn shift_identity_when_target_equals_minimum() {
        let map = DepthMap(Raster::from_values(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let out = apply_min_depth_shift(&map, 3.0);
        assert_eq!(out.0, map.0);
    }

    #[test]
    fn shift_constant_map() {
        let map = DepthMap(Raster::filled(3, 3, 5.0));
        let out = apply_min_depth_shift(&map, 2.0);
        assert!(out.0.values().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn shift_reanchors_and_preserves_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let values: Vec<f32> = (0..100).map(|_| rng.gen_range(0.5..30.0)).collect();
        let map = DepthMap(Raster::from_values(10, 10, values.clone()));
        let out = apply_min_depth_shift(&map, 1.5);
        assert_eq!(out.0.min_value(), 1.5);
        let mut order: Vec<usize> = (0..100).collect();
        order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
        for pair in order.windows(2) {
            assert!(out.0.values()[pair[0]] <= out.0.values()[pair[1]]);
        }
    }

    #[test]
    fn window_single_element() {
        let mut w = SmoothingWindow::new(6);
        assert_eq!(w.update(3.0), 3.0);
    }

    #[test]
    fn window_eviction_arithmetic() {
        let mut w = SmoothingWindow::new(6);
        for _ in 0..6 {
            w.update(2.0);
        }
        assert_eq!(w.update(8.0), 3.0);
    }

    #[test]
    fn window_matches_trailing_slice_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let estimates: Vec<f64> = (0..100).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut w = SmoothingWindow::new(6);
        for (i, e) in estimates.iter().enumerate() {
            let smoothed = w.update(*e);
            let start = i.saturating_sub(5);
            let slice = &estimates[start..=i];
            let oracle = slice.iter().sum::<f64>() / slice.len() as f64;
            assert_relative_eq!(smoothed, oracle, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn shift_postcondition(z in 0.0f64..10.0, seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..36).map(|_| rng.gen_range(0.1..50.0)).collect();
            let map = DepthMap(Raster::from_values(6, 6, values));
            let out = apply_min_depth_shift(&map, z);
            prop_assert_eq!(out.0.min_value(), z as f32);
        }

        #[test]
        fn window_converges_after_capacity_identical_updates(v in -10.0f64..10.0) {
            let mut w = SmoothingWindow::new(6);
            let mut last = 0.0;
            for _ in 0..7 {
                last = w.update(v);
            }
            prop_assert_eq!(last, v);
        }
    }
}

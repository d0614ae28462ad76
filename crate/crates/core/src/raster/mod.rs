//! Tile-based front-to-back alpha compositing of projected Gaussians.
//!
//! Splats are globally sorted by `(depth, source_index)` and binned into square
//! tiles. Each pixel walks its tile list in order, so the result is identical to
//! walking the whole sorted list: splats outside a tile never reach `q <= 9`
//! at any of its pixel centers. Gradients are accumulated per tile and reduced
//! in tile order, which keeps the backward pass independent of thread count.

pub mod project;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use project::{project, project_all, project_backward, ProjectionGrad, Splat2D, SplatGrad};

use crate::math::Vec3;
use crate::scene::Camera;

pub const TILE: usize = 16;

/// Splats whose Mahalanobis distance at a pixel center exceeds this are skipped.
pub const MAX_MAHALANOBIS: f64 = 9.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    /// Isotropic dilation added to every screen-space covariance, in pixels².
    pub low_pass: f64,
    pub near: f64,
    pub alpha_max: f64,
    /// A pixel stops compositing once its transmittance drops below this.
    pub min_transmittance: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            low_pass: 0.3,
            near: 0.01,
            alpha_max: 0.99,
            min_transmittance: 1e-4,
        }
    }
}

/// Per-tile lists of positions in the depth-sorted splat order.
#[derive(Clone, Debug, Default)]
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// `offsets[t]..offsets[t + 1]` indexes `entries` for tile `t`.
    pub offsets: Vec<usize>,
    pub entries: Vec<u32>,
}

impl TileBins {
    pub fn tile(&self, t: usize) -> &[u32] {
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }
}

/// Rasterized attribute planes plus the state needed to differentiate them.
#[derive(Clone, Debug)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Pixel-major, `channels` values per pixel, background included.
    pub accum: Vec<f64>,
    /// Alpha-weighted view depth (background depth is zero).
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Splat indices (into the input list) in compositing order.
    pub order: Vec<u32>,
    pub bins: TileBins,
    /// Final transmittance per pixel.
    pub transmittance: Vec<f64>,
    /// Number of tile-list entries each pixel walked.
    pub walked: Vec<u32>,
    pub background: Vec<f64>,
}

impl GBuffer {
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.accum[p * self.channels..(p + 1) * self.channels]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Un-premultiplied view depth, or `None` where alpha is at most `eps`.
    pub fn view_depth(&self, p: usize, eps: f64) -> Option<f64> {
        (self.alpha[p] > eps).then(|| self.depth[p] / self.alpha[p])
    }

    /// World position back-projected from the un-premultiplied depth.
    pub fn position(&self, cam: &Camera, p: usize, eps: f64) -> Option<Vec3> {
        let z = self.view_depth(p, eps)?;
        Some(backproject(cam, p % self.width, p / self.width, z))
    }

    pub fn positions(&self, cam: &Camera, eps: f64) -> Vec<Option<Vec3>> {
        (0..self.pixel_count()).map(|p| self.position(cam, p, eps)).collect()
    }
}

/// Camera ray direction (scaled so its z component is 1) through a pixel center.
pub fn pixel_ray(cam: &Camera, x: usize, y: usize) -> Vec3 {
    Vec3::new(
        (x as f64 + 0.5 - cam.cx) / cam.fx,
        (y as f64 + 0.5 - cam.cy) / cam.fy,
        1.0,
    )
}

/// World point seen at pixel `(x, y)` at view depth `z`.
pub fn backproject(cam: &Camera, x: usize, y: usize, z: f64) -> Vec3 {
    let p_cam = pixel_ray(cam, x, y) * z;
    cam.rotation().transpose() * (p_cam - cam.translation())
}

/// Gradients flowing into a [`GBuffer`].
#[derive(Clone, Debug)]
pub struct GBufferGrad {
    pub accum: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl GBufferGrad {
    pub fn zeros(gb: &GBuffer) -> Self {
        Self {
            accum: vec![0.0; gb.accum.len()],
            depth: vec![0.0; gb.depth.len()],
            alpha: vec![0.0; gb.alpha.len()],
        }
    }
}

/// Per-splat gradients, indexed like the input splat list.
#[derive(Clone, Debug)]
pub struct RasterGrads {
    pub channels: usize,
    pub attrs: Vec<f64>,
    pub splats: Vec<SplatGrad>,
}

/// Compositing order: ascending depth, ties broken by scene index.
pub fn sort_order(splats: &[Splat2D]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth
            .total_cmp(&sb.depth)
            .then(sa.source_index.cmp(&sb.source_index))
    });
    order
}

/// Inclusive pixel range whose centers may fall inside the splat footprint.
fn pixel_span(center: f64, extent: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (center - extent - 1.0 - 0.5).ceil().max(0.0);
    let hi = (center + extent + 1.0 - 0.5).floor().min(size as f64 - 1.0);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

pub fn bin_tiles(splats: &[Splat2D], order: &[u32], width: usize, height: usize) -> TileBins {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let n_tiles = tiles_x * tiles_y;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let s = &splats[i as usize];
        let Some((x0, x1)) = pixel_span(s.mean2d[0], s.extent[0], width) else { continue };
        let Some((y0, y1)) = pixel_span(s.mean2d[1], s.extent[1], height) else { continue };
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                pairs.push(((ty * tiles_x + tx) as u32, rank as u32));
            }
        }
    }
    let mut counts = vec![0usize; n_tiles + 1];
    for &(t, _) in &pairs {
        counts[t as usize + 1] += 1;
    }
    for t in 0..n_tiles {
        counts[t + 1] += counts[t];
    }
    let offsets = counts.clone();
    let mut cursor = counts;
    let mut entries = vec![0u32; pairs.len()];
    for &(t, rank) in &pairs {
        entries[cursor[t as usize]] = rank;
        cursor[t as usize] += 1;
    }
    TileBins {
        tiles_x,
        tiles_y,
        offsets,
        entries,
    }
}

/// Splat parameters in compositing order, packed for the inner loop.
#[derive(Clone, Copy)]
struct Packed {
    mx: f64,
    my: f64,
    a: f64,
    b: f64,
    c: f64,
    opacity: f64,
    depth: f64,
}

fn pack(splats: &[Splat2D], order: &[u32]) -> Vec<Packed> {
    order
        .iter()
        .map(|&i| {
            let s = &splats[i as usize];
            Packed {
                mx: s.mean2d[0],
                my: s.mean2d[1],
                a: s.conic[0],
                b: s.conic[1],
                c: s.conic[2],
                opacity: s.opacity,
                depth: s.depth,
            }
        })
        .collect()
}

#[inline(always)]
fn mahalanobis(s: &Packed, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.mx;
    let dy = py - s.my;
    (s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy, dx, dy)
}

fn tile_pixels(bins: &TileBins, t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tx = t % bins.tiles_x;
    let ty = t / bins.tiles_x;
    let x0 = tx * TILE;
    let y0 = ty * TILE;
    (x0, y0, (x0 + TILE).min(width), (y0 + TILE).min(height))
}

/// Compositing weights of one tile: for each pixel (row-major within the tile)
/// the splats it composited, as ranks in the sorted order, with `α·T`.
#[derive(Clone, Debug, Default)]
struct TileHits {
    /// Pixel `i` owns `offsets[i]..offsets[i + 1]`.
    offsets: Vec<usize>,
    ranks: Vec<u32>,
    weights: Vec<f64>,
    transmittance: Vec<f64>,
    walked: Vec<u32>,
}

/// Which splats each pixel composites and with what weight. Weights depend
/// only on geometry, so attributes can be chosen after this pass.
#[derive(Clone, Debug)]
pub struct Coverage {
    pub width: usize,
    pub height: usize,
    /// Splat indices in compositing order.
    pub order: Vec<u32>,
    pub bins: TileBins,
    depth: Vec<f64>,
    tiles: Vec<TileHits>,
}

pub fn coverage(splats: &[Splat2D], width: usize, height: usize, cfg: &RasterConfig) -> Coverage {
    let order = sort_order(splats);
    let bins = bin_tiles(splats, &order, width, height);
    let packed = pack(splats, &order);
    let n_tiles = bins.tiles_x * bins.tiles_y;
    let tiles = (0..n_tiles)
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = tile_pixels(&bins, t, width, height);
            let n = (x1 - x0) * (y1 - y0);
            let list = bins.tile(t);
            let mut out = TileHits {
                offsets: Vec::with_capacity(n + 1),
                transmittance: Vec::with_capacity(n),
                walked: Vec::with_capacity(n),
                ..Default::default()
            };
            out.offsets.push(0);
            for y in y0..y1 {
                let py = y as f64 + 0.5;
                for x in x0..x1 {
                    let px = x as f64 + 0.5;
                    let mut t_acc = 1.0;
                    let mut walked = 0u32;
                    for (j, &rank) in list.iter().enumerate() {
                        let s = &packed[rank as usize];
                        walked = j as u32 + 1;
                        let (q, _, _) = mahalanobis(s, px, py);
                        if q > MAX_MAHALANOBIS {
                            continue;
                        }
                        let alpha = (s.opacity * (-0.5 * q).exp()).min(cfg.alpha_max);
                        out.ranks.push(rank);
                        out.weights.push(alpha * t_acc);
                        t_acc *= 1.0 - alpha;
                        if t_acc < cfg.min_transmittance {
                            break;
                        }
                    }
                    out.offsets.push(out.ranks.len());
                    out.transmittance.push(t_acc);
                    out.walked.push(walked);
                }
            }
            out
        })
        .collect();
    Coverage {
        width,
        height,
        depth: packed.iter().map(|p| p.depth).collect(),
        order,
        bins,
        tiles,
    }
}

impl Coverage {
    /// Flags, per input splat, whether any pixel composites it.
    pub fn used(&self) -> Vec<bool> {
        let mut flags = vec![false; self.order.len()];
        for t in &self.tiles {
            for &r in &t.ranks {
                flags[self.order[r as usize] as usize] = true;
            }
        }
        flags
    }

    /// The same coverage over the splats flagged in `keep`, renumbered as
    /// their positions in the filtered list. Every composited splat must be
    /// kept; pixel walk counts still refer to the full list.
    pub fn retain(self, keep: &[bool]) -> Coverage {
        assert_eq!(keep.len(), self.order.len(), "one flag per splat");
        let mut new_index = vec![u32::MAX; keep.len()];
        let mut next = 0u32;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                new_index[i] = next;
                next += 1;
            }
        }
        let mut new_rank = vec![u32::MAX; keep.len()];
        let mut order = Vec::with_capacity(next as usize);
        let mut depth = Vec::with_capacity(next as usize);
        for (r, &i) in self.order.iter().enumerate() {
            if keep[i as usize] {
                new_rank[r] = order.len() as u32;
                order.push(new_index[i as usize]);
                depth.push(self.depth[r]);
            }
        }
        let mut offsets = vec![0];
        let mut entries = Vec::new();
        for t in 0..self.bins.tiles_x * self.bins.tiles_y {
            entries.extend(self.bins.tile(t).iter().map(|&r| new_rank[r as usize]).filter(|&r| r != u32::MAX));
            offsets.push(entries.len());
        }
        let tiles = self
            .tiles
            .into_iter()
            .map(|mut t| {
                for r in &mut t.ranks {
                    *r = new_rank[*r as usize];
                    assert_ne!(*r, u32::MAX, "a composited splat was dropped");
                }
                t
            })
            .collect();
        Coverage {
            width: self.width,
            height: self.height,
            order,
            bins: TileBins {
                tiles_x: self.bins.tiles_x,
                tiles_y: self.bins.tiles_y,
                offsets,
                entries,
            },
            depth,
            tiles,
        }
    }
}

/// Composites `attrs` (`channels` values per splat, indexed like the splats
/// `cov` was computed from) over `background` with the recorded weights.
pub fn composite(cov: Coverage, attrs: &[f64], channels: usize, background: &[f64]) -> GBuffer {
    let k = channels;
    assert_eq!(attrs.len(), cov.order.len() * k, "attribute count");
    assert_eq!(background.len(), k, "background channels");
    let (width, height) = (cov.width, cov.height);
    let n_pix = width * height;
    let mut gb = GBuffer {
        width,
        height,
        channels: k,
        accum: vec![0.0; n_pix * k],
        depth: vec![0.0; n_pix],
        alpha: vec![0.0; n_pix],
        order: Vec::new(),
        bins: TileBins::default(),
        transmittance: vec![1.0; n_pix],
        walked: vec![0; n_pix],
        background: background.to_vec(),
    };
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = cov
        .tiles
        .par_iter()
        .map(|hits| {
            let n = hits.transmittance.len();
            let mut accum = vec![0.0; n * k];
            let mut depth = vec![0.0; n];
            for i in 0..n {
                let acc = &mut accum[i * k..(i + 1) * k];
                let mut d_acc = 0.0;
                for h in hits.offsets[i]..hits.offsets[i + 1] {
                    let r = hits.ranks[h] as usize;
                    let w = hits.weights[h];
                    let src = &attrs[cov.order[r] as usize * k..(cov.order[r] as usize + 1) * k];
                    for c in 0..k {
                        acc[c] += w * src[c];
                    }
                    d_acc += w * cov.depth[r];
                }
                let t_acc = hits.transmittance[i];
                for c in 0..k {
                    acc[c] += t_acc * background[c];
                }
                depth[i] = d_acc;
            }
            (accum, depth)
        })
        .collect();
    for (t, ((accum, depth), hits)) in blocks.into_iter().zip(&cov.tiles).enumerate() {
        let (x0, y0, x1, y1) = tile_pixels(&cov.bins, t, width, height);
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * width + x;
                gb.accum[p * k..(p + 1) * k].copy_from_slice(&accum[i * k..(i + 1) * k]);
                gb.depth[p] = depth[i];
                gb.transmittance[p] = hits.transmittance[i];
                gb.alpha[p] = 1.0 - hits.transmittance[i];
                gb.walked[p] = hits.walked[i];
                i += 1;
            }
        }
    }
    gb.order = cov.order;
    gb.bins = cov.bins;
    gb
}

/// Composites `attrs` (`channels` values per splat, indexed like `splats`) over
/// `background`.
pub fn rasterize(
    splats: &[Splat2D],
    attrs: &[f64],
    channels: usize,
    background: &[f64],
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> GBuffer {
    assert_eq!(attrs.len(), splats.len() * channels, "attribute count");
    composite(coverage(splats, width, height, cfg), attrs, channels, background)
}

/// Backward of [`rasterize`]. `splats`, `attrs` and `background` must be the
/// forward inputs.
pub fn rasterize_backward(
    gb: &GBuffer,
    splats: &[Splat2D],
    attrs: &[f64],
    grad: &GBufferGrad,
    cfg: &RasterConfig,
) -> RasterGrads {
    let k = gb.channels;
    let (width, height) = (gb.width, gb.height);
    let packed = pack(splats, &gb.order);
    let order = &gb.order;
    // Per-entry layout: attrs[k], opacity, mean x, mean y, conic a, b, c, depth.
    let stride = k + 7;
    let n_tiles = gb.bins.tiles_x * gb.bins.tiles_y;

    let tile_grads: Vec<Vec<f64>> = (0..n_tiles)
        .into_par_iter()
        .map(|t| {
            let list = gb.bins.tile(t);
            let mut buf = vec![0.0; list.len() * stride];
            if list.is_empty() {
                return buf;
            }
            let (x0, y0, x1, y1) = tile_pixels(&gb.bins, t, width, height);
            let mut suffix = vec![0.0; k];
            for y in y0..y1 {
                let py = y as f64 + 0.5;
                for x in x0..x1 {
                    let px = x as f64 + 0.5;
                    let p = y * width + x;
                    let g_acc = &grad.accum[p * k..(p + 1) * k];
                    let g_depth = grad.depth[p];
                    let g_alpha = grad.alpha[p];
                    let t_final = gb.transmittance[p];
                    for c in 0..k {
                        suffix[c] = gb.background[c] * t_final;
                    }
                    let mut suffix_depth = 0.0;
                    let mut t_cur = t_final;
                    for j in (0..gb.walked[p] as usize).rev() {
                        let rank = list[j] as usize;
                        let s = &packed[rank];
                        let (q, dx, dy) = mahalanobis(s, px, py);
                        if q > MAX_MAHALANOBIS {
                            continue;
                        }
                        let gauss = (-0.5 * q).exp();
                        let raw_alpha = s.opacity * gauss;
                        let clamped = raw_alpha > cfg.alpha_max;
                        let alpha = raw_alpha.min(cfg.alpha_max);
                        let one_minus = 1.0 - alpha;
                        t_cur /= one_minus;
                        let w = alpha * t_cur;
                        let src = order[rank] as usize;
                        let a_src = &attrs[src * k..(src + 1) * k];
                        let e = &mut buf[j * stride..(j + 1) * stride];
                        let mut d_alpha = 0.0;
                        for c in 0..k {
                            e[c] += g_acc[c] * w;
                            d_alpha += g_acc[c] * (t_cur * a_src[c] - suffix[c] / one_minus);
                            suffix[c] += w * a_src[c];
                        }
                        d_alpha += g_depth * (t_cur * s.depth - suffix_depth / one_minus);
                        suffix_depth += w * s.depth;
                        d_alpha += g_alpha * t_final / one_minus;
                        e[k + 6] += g_depth * w;
                        if clamped {
                            continue;
                        }
                        e[k] += d_alpha * gauss;
                        let d_q = -0.5 * d_alpha * raw_alpha;
                        e[k + 1] += -d_q * 2.0 * (s.a * dx + s.b * dy);
                        e[k + 2] += -d_q * 2.0 * (s.b * dx + s.c * dy);
                        e[k + 3] += d_q * dx * dx;
                        e[k + 4] += d_q * 2.0 * dx * dy;
                        e[k + 5] += d_q * dy * dy;
                    }
                }
            }
            buf
        })
        .collect();

    let n = splats.len();
    let mut out = RasterGrads {
        channels: k,
        attrs: vec![0.0; n * k],
        splats: vec![SplatGrad::default(); n],
    };
    for (t, buf) in tile_grads.iter().enumerate() {
        for (j, &rank) in gb.bins.tile(t).iter().enumerate() {
            let src = order[rank as usize] as usize;
            let e = &buf[j * stride..(j + 1) * stride];
            for c in 0..k {
                out.attrs[src * k + c] += e[c];
            }
            let sg = &mut out.splats[src];
            sg.opacity += e[k];
            sg.mean2d[0] += e[k + 1];
            sg.mean2d[1] += e[k + 2];
            sg.conic[0] += e[k + 3];
            sg.conic[1] += e[k + 4];
            sg.conic[2] += e[k + 5];
            sg.depth += e[k + 6];
        }
    }
    out
}

/// Flags every splat that any pixel actually composites. Attributes of unflagged
/// splats cannot influence the rasterized output.
pub fn contributing(splats: &[Splat2D], width: usize, height: usize, cfg: &RasterConfig) -> Vec<bool> {
    coverage(splats, width, height, cfg).used()
}

/// Every discrete compositing decision taken at pixel `p`: for each splat walked,
/// whether it was skipped, composited, or composited with a clamped alpha.
pub fn pixel_decisions(gb: &GBuffer, splats: &[Splat2D], p: usize, cfg: &RasterConfig) -> Vec<(u32, u8)> {
    let (x, y) = (p % gb.width, p / gb.width);
    let t = (y / TILE) * gb.bins.tiles_x + x / TILE;
    let list = gb.bins.tile(t);
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut out = Vec::new();
    for &rank in &list[..gb.walked[p] as usize] {
        let i = gb.order[rank as usize];
        let s = &splats[i as usize];
        let dx = px - s.mean2d[0];
        let dy = py - s.mean2d[1];
        let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        let code = if q > MAX_MAHALANOBIS {
            0
        } else if s.opacity * (-0.5 * q).exp() > cfg.alpha_max {
            2
        } else {
            1
        };
        out.push((s.source_index as u32, code));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(mx: f64, my: f64, var: f64, opacity: f64, depth: f64, index: usize) -> Splat2D {
        Splat2D {
            mean2d: [mx, my],
            cov2d: [var, 0.0, var],
            conic: [1.0 / var, 0.0, 1.0 / var],
            depth,
            opacity,
            extent: [3.0 * var.sqrt(); 2],
            source_index: index,
        }
    }

    #[test]
    fn empty_list_gives_background() {
        let gb = rasterize(&[], &[], 2, &[0.25, 0.5], 20, 17, &RasterConfig::default());
        assert!(gb.alpha.iter().all(|&a| a == 0.0));
        for p in 0..gb.pixel_count() {
            assert_eq!(gb.pixel(p), &[0.25, 0.5]);
        }
    }

    #[test]
    fn single_half_alpha_splat() {
        let s = splat(8.5, 8.5, 4.0, 0.5, 1.0, 0);
        let gb = rasterize(&[s], &[1.0], 1, &[0.0], 16, 16, &RasterConfig::default());
        let p = 8 * 16 + 8;
        assert_eq!(gb.accum[p], 0.5);
        assert_eq!(gb.alpha[p], 0.5);
    }

    #[test]
    fn front_over_back() {
        let front = splat(8.5, 8.5, 4.0, 0.5, 1.0, 0);
        let back = splat(8.5, 8.5, 4.0, 0.5, 2.0, 1);
        // Input order deliberately reversed; the rasterizer sorts.
        let gb = rasterize(&[back, front], &[0.0, 1.0], 1, &[0.0], 16, 16, &RasterConfig::default());
        let p = 8 * 16 + 8;
        assert_eq!(gb.accum[p], 0.5);
        assert_eq!(gb.alpha[p], 0.75);
    }

    #[test]
    fn attribute_gradient_is_weight() {
        let s = splat(8.5, 8.5, 4.0, 0.5, 1.0, 0);
        let cfg = RasterConfig::default();
        let gb = rasterize(&[s], &[1.0], 1, &[0.0], 16, 16, &cfg);
        let mut g = GBufferGrad::zeros(&gb);
        g.accum[8 * 16 + 8] = 1.0;
        let grads = rasterize_backward(&gb, &[s], &[1.0], &g, &cfg);
        assert_eq!(grads.attrs[0], 0.5);
    }

    #[test]
    fn occluded_splat_gets_no_gradient() {
        let cfg = RasterConfig::default();
        let mut splats: Vec<Splat2D> =
            (0..10).map(|i| splat(8.5, 8.5, 400.0, 0.99, 1.0 + i as f64, i)).collect();
        splats.push(splat(8.5, 8.5, 400.0, 0.5, 20.0, 10));
        let attrs = vec![0.3; 11];
        let gb = rasterize(&splats, &attrs, 1, &[0.0], 16, 16, &cfg);
        let mut g = GBufferGrad::zeros(&gb);
        g.accum.iter_mut().for_each(|v| *v = 1.0);
        g.alpha.iter_mut().for_each(|v| *v = 1.0);
        let grads = rasterize_backward(&gb, &splats, &attrs, &g, &cfg);
        assert_eq!(grads.attrs[10], 0.0);
        assert_eq!(grads.splats[10], SplatGrad::default());
    }
}

//! Grid coordinates, patch shapes and packing-center layouts.
//!
//! A grid `(h, w, d)` stores its cells row-major as `i·w·d + j·d + k`.
//! Patches are lists of integer offsets around a center; packings place
//! centers at rounded multiples of per-dimension distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer offset `(∇i, ∇j, ∇k)` from a patch center.
pub type Offset = (i64, i64, i64);
/// Grid coordinate `(i, j, k)`.
pub type Coord = (usize, usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl GridSpec {
    pub fn new(h: usize, w: usize, d: usize) -> Result<Self> {
        let grid = Self { h, w, d };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.d == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid extents must be positive, got ({}, {}, {})",
                self.h, self.w, self.d
            )));
        }
        Ok(())
    }

    /// Number of cells `m = h·w·d`.
    pub fn size(&self) -> usize {
        self.h * self.w * self.d
    }

    pub fn index_of(&self, (i, j, k): Coord) -> Result<usize> {
        if i >= self.h || j >= self.w || k >= self.d {
            return Err(Error::OutOfRange(format!(
                "coordinate ({i}, {j}, {k}) in grid ({}, {}, {})",
                self.h, self.w, self.d
            )));
        }
        Ok(i * self.w * self.d + j * self.d + k)
    }

    pub fn coord_of(&self, index: usize) -> Result<Coord> {
        if index >= self.size() {
            return Err(Error::OutOfRange(format!(
                "index {index} in grid of {} cells",
                self.size()
            )));
        }
        let plane = self.w * self.d;
        Ok((index / plane, (index % plane) / self.d, index % self.d))
    }

    /// Index of `center + offset` when it lies inside the grid.
    pub fn shifted_index(&self, center: Coord, offset: Offset) -> Option<usize> {
        let shift = |c: usize, o: i64, extent: usize| -> Option<usize> {
            let v = c as i64 + o;
            (v >= 0 && (v as usize) < extent).then_some(v as usize)
        };
        let i = shift(center.0, offset.0, self.h)?;
        let j = shift(center.1, offset.1, self.w)?;
        let k = shift(center.2, offset.2, self.d)?;
        Some(i * self.w * self.d + j * self.d + k)
    }

    pub fn contains(&self, (i, j, k): Coord) -> bool {
        i < self.h && j < self.w && k < self.d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PatchShape {
    /// Extents before (`*_before`) and after (`*_after`) the center per axis.
    Cuboid {
        h_before: usize,
        h_after: usize,
        w_before: usize,
        w_after: usize,
        d_before: usize,
        d_after: usize,
    },
    /// Disk of radius `r` in the `(i, j)` plane, extruded along depth.
    Cylinder {
        r: usize,
        d_before: usize,
        d_after: usize,
    },
    Sphere {
        r: usize,
    },
}

impl PatchShape {
    pub fn cuboid(h: (usize, usize), w: (usize, usize), d: (usize, usize)) -> Self {
        Self::Cuboid {
            h_before: h.0,
            h_after: h.1,
            w_before: w.0,
            w_after: w.1,
            d_before: d.0,
            d_after: d.1,
        }
    }

    /// Offsets in lexicographic `(∇i, ∇j, ∇k)` order.
    pub fn offsets(&self) -> Vec<Offset> {
        let range = |before: usize, after: usize| -(before as i64)..=after as i64;
        let mut out = Vec::new();
        match *self {
            Self::Cuboid {
                h_before,
                h_after,
                w_before,
                w_after,
                d_before,
                d_after,
            } => {
                for di in range(h_before, h_after) {
                    for dj in range(w_before, w_after) {
                        for dk in range(d_before, d_after) {
                            out.push((di, dj, dk));
                        }
                    }
                }
            }
            Self::Cylinder {
                r,
                d_before,
                d_after,
            } => {
                let r2 = (r * r) as i64;
                for di in range(r, r) {
                    for dj in range(r, r) {
                        if di * di + dj * dj <= r2 {
                            for dk in range(d_before, d_after) {
                                out.push((di, dj, dk));
                            }
                        }
                    }
                }
            }
            Self::Sphere { r } => {
                let r2 = (r * r) as i64;
                for di in range(r, r) {
                    for dj in range(r, r) {
                        for dk in range(r, r) {
                            if di * di + dj * dj + dk * dk <= r2 {
                                out.push((di, dj, dk));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Patch size `p`.
    pub fn size(&self) -> usize {
        match *self {
            Self::Cuboid {
                h_before,
                h_after,
                w_before,
                w_after,
                d_before,
                d_after,
            } => (h_before + h_after + 1) * (w_before + w_after + 1) * (d_before + d_after + 1),
            _ => self.offsets().len(),
        }
    }

    /// Largest reach of the patch along each axis.
    pub fn reach(&self) -> (usize, usize, usize) {
        match *self {
            Self::Cuboid {
                h_before,
                h_after,
                w_before,
                w_after,
                d_before,
                d_after,
            } => (
                h_before.max(h_after),
                w_before.max(w_after),
                d_before.max(d_after),
            ),
            Self::Cylinder {
                r,
                d_before,
                d_after,
            } => (r, r, d_before.max(d_after)),
            Self::Sphere { r } => (r, r, r),
        }
    }
}

/// Named center layouts for cylinder and sphere patches of radius `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackingStrategy {
    /// `d = 2r`, adjacent disks on a square lattice.
    CylinderSquareSparse,
    /// `d = √2·r`, square lattice without gaps.
    CylinderSquareComplete,
    /// `d_h = √3·r`, `d_w = 2r`, staggered rows.
    CylinderHexSparse,
    /// `d_h = 3/2·r`, `d_w = √3·r`, staggered rows without gaps.
    CylinderHexComplete,
    /// `d_h = √6/2·r`, `d_w = √2·r`.
    CylinderHexOverlap,
    /// `d_h = √2/2·r`, `d_w = r`.
    CylinderHexFullOverlap,
    /// `d = 2r` on every axis.
    SphereSimpleCubicSparse,
    /// `d_h = √3·r`, `d_w = 2r`, `d_d = 2√6/3·r`, three-layer stacking.
    SphereFaceCenteredSparse,
    /// `d_h = d_w = 2r`, `d_d = √3·r`, two-layer stacking.
    SphereHexagonalSparse,
    /// `d = 2√3/3·r` on every axis.
    SphereSimpleCubicComplete,
    /// `d_h = √2·r`, `d_w = 2√6/3·r`, `d_d = 4/3·r`.
    SphereFaceCenteredComplete,
    /// `d_h = d_w = 2√3/3·r`, `d_d = r`.
    SphereHexagonalComplete,
}

impl PackingStrategy {
    /// Whether the layout is meant to cover every cell.
    pub fn is_complete(self) -> bool {
        !matches!(
            self,
            Self::CylinderSquareSparse
                | Self::CylinderHexSparse
                | Self::SphereSimpleCubicSparse
                | Self::SphereFaceCenteredSparse
                | Self::SphereHexagonalSparse
        )
    }
}

/// How rows and layers of centers are shifted against each other.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stagger {
    /// Odd height rows shift along width by `d_w / 2`.
    pub rows: bool,
    /// Depth layer `ℓ` shifts by `(ℓ mod period)` times `layer_shift`,
    /// given as fractions of `(d_h, d_w)`.
    pub layer_period: usize,
    pub layer_shift: (f64, f64),
}

impl Stagger {
    pub const NONE: Self = Self {
        rows: false,
        layer_period: 1,
        layer_shift: (0.0, 0.0),
    };
}

impl Default for Stagger {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PackingLayout {
    Distances {
        d_h: f64,
        d_w: f64,
        d_d: f64,
        #[serde(default)]
        stagger: Stagger,
    },
    Named {
        strategy: PackingStrategy,
        radius: f64,
        /// Depth distance for cylinder layouts, which only fix `d_h` and `d_w`.
        #[serde(default = "unit_depth")]
        depth_distance: f64,
    },
}

fn unit_depth() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackingSpec {
    pub layout: PackingLayout,
    #[serde(default)]
    pub clip_out_of_grid: bool,
}

/// Center distances after resolving named strategies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedPacking {
    pub d_h: f64,
    pub d_w: f64,
    pub d_d: f64,
    pub stagger: Stagger,
}

impl PackingSpec {
    pub fn distances(d_h: f64, d_w: f64, d_d: f64) -> Self {
        Self {
            layout: PackingLayout::Distances {
                d_h,
                d_w,
                d_d,
                stagger: Stagger::NONE,
            },
            clip_out_of_grid: false,
        }
    }

    /// Every cell is a center.
    pub fn densest() -> Self {
        Self::distances(1.0, 1.0, 1.0).clipped(true)
    }

    pub fn named(strategy: PackingStrategy, radius: f64) -> Self {
        Self {
            layout: PackingLayout::Named {
                strategy,
                radius,
                depth_distance: 1.0,
            },
            clip_out_of_grid: false,
        }
    }

    pub fn clipped(mut self, clip: bool) -> Self {
        self.clip_out_of_grid = clip;
        self
    }

    /// Complete named layouts use the largest integer distance not exceeding
    /// the continuum value, so their covering guarantee survives rounding.
    pub fn resolve(&self) -> Result<ResolvedPacking> {
        let resolved = match self.layout {
            PackingLayout::Distances {
                d_h,
                d_w,
                d_d,
                stagger,
            } => ResolvedPacking {
                d_h,
                d_w,
                d_d,
                stagger,
            },
            PackingLayout::Named {
                strategy,
                radius: r,
                depth_distance,
            } => {
                use PackingStrategy::*;
                let (s2, s3, s6) = (2f64.sqrt(), 3f64.sqrt(), 6f64.sqrt());
                let rows = Stagger {
                    rows: true,
                    ..Stagger::NONE
                };
                let (d_h, d_w, d_d, stagger) = match strategy {
                    CylinderSquareSparse => (2.0 * r, 2.0 * r, depth_distance, Stagger::NONE),
                    CylinderSquareComplete => (s2 * r, s2 * r, depth_distance, Stagger::NONE),
                    CylinderHexSparse => (s3 * r, 2.0 * r, depth_distance, rows),
                    CylinderHexComplete => (1.5 * r, s3 * r, depth_distance, rows),
                    CylinderHexOverlap => (s6 / 2.0 * r, s2 * r, depth_distance, rows),
                    CylinderHexFullOverlap => (s2 / 2.0 * r, r, depth_distance, rows),
                    SphereSimpleCubicSparse => (2.0 * r, 2.0 * r, 2.0 * r, Stagger::NONE),
                    SphereFaceCenteredSparse => (
                        s3 * r,
                        2.0 * r,
                        2.0 * s6 / 3.0 * r,
                        Stagger {
                            rows: true,
                            layer_period: 3,
                            layer_shift: (1.0 / 3.0, 0.5),
                        },
                    ),
                    SphereHexagonalSparse => (
                        2.0 * r,
                        2.0 * r,
                        s3 * r,
                        Stagger {
                            rows: false,
                            layer_period: 2,
                            layer_shift: (0.5, 0.5),
                        },
                    ),
                    SphereSimpleCubicComplete => {
                        let d = 2.0 * s3 / 3.0 * r;
                        (d, d, d, Stagger::NONE)
                    }
                    SphereFaceCenteredComplete => {
                        (s2 * r, 2.0 * s6 / 3.0 * r, 4.0 / 3.0 * r, Stagger::NONE)
                    }
                    SphereHexagonalComplete => {
                        let d = 2.0 * s3 / 3.0 * r;
                        (d, d, r, Stagger::NONE)
                    }
                };
                if strategy.is_complete() {
                    ResolvedPacking {
                        d_h: d_h.floor(),
                        d_w: d_w.floor(),
                        d_d: d_d.floor(),
                        stagger,
                    }
                } else {
                    ResolvedPacking {
                        d_h,
                        d_w,
                        d_d,
                        stagger,
                    }
                }
            }
        };
        for (name, v) in [
            ("d_h", resolved.d_h),
            ("d_w", resolved.d_w),
            ("d_d", resolved.d_d),
        ] {
            if !v.is_finite() || v < 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "packing distance {name} = {v} must be at least 1"
                )));
            }
        }
        if resolved.stagger.layer_period == 0 {
            return Err(Error::InvalidParameter("layer_period must be >= 1".into()));
        }
        Ok(resolved)
    }
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

fn steps(extent: usize, distance: f64) -> usize {
    (extent as f64 / distance).floor() as usize
}

/// Center coordinates: per axis `round(t·d + shift)` for `t = 0..=⌊extent/d⌋`,
/// ordered by height, then width, then depth. Centers outside the grid are
/// kept unless the packing clips them.
pub fn packing_centers(grid: &GridSpec, packing: &PackingSpec) -> Result<Vec<Coord>> {
    grid.validate()?;
    let p = packing.resolve()?;
    let (nh, nw, nd) = (
        steps(grid.h, p.d_h),
        steps(grid.w, p.d_w),
        steps(grid.d, p.d_d),
    );
    let mut out = Vec::with_capacity((nh + 1) * (nw + 1) * (nd + 1));
    for th in 0..=nh {
        for tw in 0..=nw {
            for td in 0..=nd {
                let layer = (td % p.stagger.layer_period) as f64;
                let shift_h = layer * p.stagger.layer_shift.0 * p.d_h;
                let mut shift_w = layer * p.stagger.layer_shift.1 * p.d_w;
                if p.stagger.rows && th % 2 == 1 {
                    shift_w += 0.5 * p.d_w;
                }
                let c = (
                    round_half_up(th as f64 * p.d_h + shift_h),
                    round_half_up(tw as f64 * p.d_w + shift_w),
                    round_half_up(td as f64 * p.d_d),
                );
                if packing.clip_out_of_grid && !grid.contains(c) {
                    continue;
                }
                out.push(c);
            }
        }
    }
    let mut seen = std::collections::HashSet::with_capacity(out.len());
    out.retain(|c| seen.insert(*c));
    Ok(out)
}

/// `p_count = (1+⌊h/d_h⌋)(1+⌊w/d_w⌋)(1+⌊d/d_d⌋)`.
pub fn patch_count(grid: &GridSpec, packing: &PackingSpec) -> Result<usize> {
    grid.validate()?;
    let p = packing.resolve()?;
    Ok((1 + steps(grid.h, p.d_h)) * (1 + steps(grid.w, p.d_w)) * (1 + steps(grid.d, p.d_d)))
}

/// Grid indices of a patch around `center`, in offset order; `None` marks
/// cells that fall outside the grid.
pub fn patch_cells(grid: &GridSpec, center: Coord, offsets: &[Offset]) -> Vec<Option<usize>> {
    offsets
        .iter()
        .map(|&o| grid.shifted_index(center, o))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Fraction of interior cells covered by at least one patch.
    pub coverage_ratio: f64,
    /// Mean over patches of the share of their in-grid cells that another
    /// patch also covers.
    pub mean_overlap_ratio: f64,
}

/// Coverage and overlap of a packing. Cells within one patch reach of the
/// grid boundary are left out of the coverage estimate.
pub fn coverage_stats(
    grid: &GridSpec,
    shape: &PatchShape,
    packing: &PackingSpec,
) -> Result<CoverageStats> {
    let centers = packing_centers(grid, packing)?;
    if centers.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "coverage needs at least 4 patches, packing yields {}",
            centers.len()
        )));
    }
    let offsets = shape.offsets();
    let mut counts = vec![0u32; grid.size()];
    let patches: Vec<Vec<usize>> = centers
        .iter()
        .map(|&c| {
            patch_cells(grid, c, &offsets)
                .into_iter()
                .flatten()
                .collect()
        })
        .collect();
    for cells in &patches {
        for &idx in cells {
            counts[idx] += 1;
        }
    }
    let (rh, rw, rd) = shape.reach();
    let interior = |extent: usize, reach: usize| {
        if extent > 2 * reach {
            reach..extent - reach
        } else {
            0..extent
        }
    };
    let (hi, wi, di) = (
        interior(grid.h, rh),
        interior(grid.w, rw),
        interior(grid.d, rd),
    );
    let mut covered = 0usize;
    let mut total = 0usize;
    for i in hi {
        for j in wi.clone() {
            for k in di.clone() {
                total += 1;
                if counts[i * grid.w * grid.d + j * grid.d + k] > 0 {
                    covered += 1;
                }
            }
        }
    }
    let mut overlap_sum = 0.0;
    let mut counted = 0usize;
    for cells in patches.iter().filter(|c| !c.is_empty()) {
        let shared = cells.iter().filter(|&&idx| counts[idx] > 1).count();
        overlap_sum += shared as f64 / cells.len() as f64;
        counted += 1;
    }
    Ok(CoverageStats {
        coverage_ratio: covered as f64 / total as f64,
        mean_overlap_ratio: if counted == 0 {
            0.0
        } else {
            overlap_sum / counted as f64
        },
    })
}

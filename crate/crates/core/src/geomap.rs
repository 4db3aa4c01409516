//! Mapping between grid assets and the fire raster.
//!
//! Substations occupy single raster cells; transmission branches occupy the
//! 8-connected line between their endpoint substations (or an explicit
//! per-branch cell list). From the fire state this module derives, per
//! asset, an encroachment flag and the Chebyshev distance to the nearest
//! burning cell — the reduced fire observation used by controllers.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::wildfire::FireGrid;

/// Raster cells covered by one asset, sorted row-major and deduplicated.
pub type Footprint = Vec<(usize, usize)>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeoError {
    #[error("layout line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("layout is missing a position for node {id}")]
    MissingNode { id: usize },
    #[error("layout places node {id} at ({x}, {y}), outside the {width}x{height} raster")]
    NodeOutOfGrid { id: usize, x: usize, y: usize, width: usize, height: usize },
    #[error("branch override {id} is out of range (network has {count} branches)")]
    UnknownBranch { id: usize, count: usize },
    #[error("branch override {id} contains cell ({x}, {y}) outside the {width}x{height} raster")]
    OverrideOutOfGrid { id: usize, x: usize, y: usize, width: usize, height: usize },
}

/// Geographic placement of a network on the raster: one cell per node
/// (keyed by 1-based node id) plus optional explicit branch footprints
/// (keyed by 1-based branch id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeoLayout {
    pub node_cells: BTreeMap<usize, (usize, usize)>,
    pub branch_overrides: BTreeMap<usize, Footprint>,
}

const LAYOUT_HEADER: &str = "wildgrid layout v1";

impl GeoLayout {
    /// Parses the layout text format:
    ///
    /// ```text
    /// wildgrid layout v1
    /// [nodes]
    /// # id x y
    /// 1 120 95
    /// [branch_cells]
    /// # id x,y x,y ...
    /// 7 10,12 11,12
    /// ```
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l.trim())
            .ok_or_else(|| GeoError::Parse { line: 1, message: "empty layout file".into() })?;
        if header != LAYOUT_HEADER {
            return Err(GeoError::Parse { line: 1, message: format!("expected header '{LAYOUT_HEADER}'") });
        }
        #[derive(PartialEq)]
        enum Section {
            None,
            Nodes,
            BranchCells,
        }
        let mut section = Section::None;
        let mut layout = GeoLayout { node_cells: BTreeMap::new(), branch_overrides: BTreeMap::new() };
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[nodes]" => section = Section::Nodes,
                "[branch_cells]" => section = Section::BranchCells,
                _ => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    let parse_usize = |s: &str, what: &str| {
                        s.parse::<usize>().map_err(|_| GeoError::Parse {
                            line: line_no,
                            message: format!("invalid {what} '{s}'"),
                        })
                    };
                    match section {
                        Section::Nodes => {
                            if fields.len() != 3 {
                                return Err(GeoError::Parse {
                                    line: line_no,
                                    message: "node entry needs 'id x y'".into(),
                                });
                            }
                            let id = parse_usize(fields[0], "node id")?;
                            let x = parse_usize(fields[1], "x coordinate")?;
                            let y = parse_usize(fields[2], "y coordinate")?;
                            if layout.node_cells.insert(id, (x, y)).is_some() {
                                return Err(GeoError::Parse {
                                    line: line_no,
                                    message: format!("duplicate node {id}"),
                                });
                            }
                        }
                        Section::BranchCells => {
                            if fields.len() < 2 {
                                return Err(GeoError::Parse {
                                    line: line_no,
                                    message: "branch entry needs 'id x,y ...'".into(),
                                });
                            }
                            let id = parse_usize(fields[0], "branch id")?;
                            let mut cells = Vec::new();
                            for pair in &fields[1..] {
                                let (xs, ys) = pair.split_once(',').ok_or_else(|| GeoError::Parse {
                                    line: line_no,
                                    message: format!("cell '{pair}' must be 'x,y'"),
                                })?;
                                cells.push((parse_usize(xs, "cell x")?, parse_usize(ys, "cell y")?));
                            }
                            cells.sort_by_key(|&(x, y)| (y, x));
                            cells.dedup();
                            if layout.branch_overrides.insert(id, cells).is_some() {
                                return Err(GeoError::Parse {
                                    line: line_no,
                                    message: format!("duplicate branch override {id}"),
                                });
                            }
                        }
                        Section::None => {
                            return Err(GeoError::Parse {
                                line: line_no,
                                message: "data before any [section]".into(),
                            });
                        }
                    }
                }
            }
        }
        Ok(layout)
    }

    /// Renders the layout back to its text form; `parse` of the result is
    /// structurally identical.
    pub fn to_text(&self) -> String {
        let mut out = String::from(LAYOUT_HEADER);
        out.push_str("\n\n[nodes]\n");
        for (id, (x, y)) in &self.node_cells {
            out.push_str(&format!("{id} {x} {y}\n"));
        }
        if !self.branch_overrides.is_empty() {
            out.push_str("\n[branch_cells]\n");
            for (id, cells) in &self.branch_overrides {
                out.push_str(&id.to_string());
                for (x, y) in cells {
                    out.push_str(&format!(" {x},{y}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Integer raster of the straight segment between two cells: 8-connected,
/// includes both endpoints, and visits exactly
/// `max(|dx|, |dy|) + 1` cells.
pub fn rasterize_branch(a: (usize, usize), b: (usize, usize)) -> Footprint {
    let (mut x0, mut y0) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cells = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        cells.push((x0 as usize, y0 as usize));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    cells.sort_by_key(|&(x, y)| (y, x));
    cells.dedup();
    cells
}

/// Footprints for every asset, indexed by 0-based node / branch position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetFootprints {
    pub node: Vec<Footprint>,
    pub branch: Vec<Footprint>,
}

impl AssetFootprints {
    /// Builds footprints for a network with `n_nodes` nodes and the given
    /// branch endpoints (0-based node indices). Branch footprints come from
    /// rasterization unless the layout overrides them.
    pub fn build(
        layout: &GeoLayout,
        n_nodes: usize,
        branch_endpoints: &[(usize, usize)],
        grid_width: usize,
        grid_height: usize,
    ) -> Result<Self, GeoError> {
        let mut node = Vec::with_capacity(n_nodes);
        for idx in 0..n_nodes {
            let id = idx + 1;
            let &(x, y) = layout.node_cells.get(&id).ok_or(GeoError::MissingNode { id })?;
            if x >= grid_width || y >= grid_height {
                return Err(GeoError::NodeOutOfGrid { id, x, y, width: grid_width, height: grid_height });
            }
            node.push(vec![(x, y)]);
        }
        for (&id, cells) in &layout.branch_overrides {
            if id == 0 || id > branch_endpoints.len() {
                return Err(GeoError::UnknownBranch { id, count: branch_endpoints.len() });
            }
            for &(x, y) in cells {
                if x >= grid_width || y >= grid_height {
                    return Err(GeoError::OverrideOutOfGrid { id, x, y, width: grid_width, height: grid_height });
                }
            }
        }
        let branch = branch_endpoints
            .iter()
            .enumerate()
            .map(|(idx, &(from, to))| match layout.branch_overrides.get(&(idx + 1)) {
                Some(cells) => cells.clone(),
                None => rasterize_branch(node[from][0], node[to][0]),
            })
            .collect();
        Ok(Self { node, branch })
    }

    pub fn asset_count(&self) -> usize {
        self.node.len() + self.branch.len()
    }
}

/// True while the asset is clear of fire. Returns false as soon as any
/// footprint cell is burning or has burned out; because burnout is
/// permanent, an encroached asset stays encroached for the whole episode.
pub fn asset_fire_status<F: Scalar>(grid: &FireGrid<F>, footprint: &[(usize, usize)]) -> bool {
    !footprint.iter().any(|&(x, y)| grid.touched_by_fire(x, y))
}

/// Chebyshev distance from the footprint to the nearest currently burning
/// cell, by direct scan; `max(width, height)` when nothing is burning.
pub fn fire_distance<F: Scalar>(grid: &FireGrid<F>, footprint: &[(usize, usize)]) -> F {
    let d_max = grid.width().max(grid.height()) as i64;
    let mut best = d_max;
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            if grid.cell(x, y).expect("in range").ignited {
                for &(fx, fy) in footprint {
                    let d = (fx as i64 - x as i64).abs().max((fy as i64 - y as i64).abs());
                    best = best.min(d);
                }
            }
        }
    }
    F::from_i64(best).unwrap()
}

/// Exact Chebyshev distance-to-fire for every raster cell, via a two-pass
/// chamfer transform (unit weights on the 8-neighborhood are exact for the
/// chessboard metric). Built once per observation and shared by all assets.
#[derive(Debug, Clone)]
pub struct FireDistanceField {
    width: usize,
    dist: Vec<u32>,
    d_max: u32,
}

impl FireDistanceField {
    pub fn compute<F: Scalar>(grid: &FireGrid<F>) -> Self {
        let (w, h) = (grid.width(), grid.height());
        let d_max = w.max(h) as u32;
        let inf = u32::MAX / 2;
        let mut dist = vec![inf; w * h];
        let cells = grid.cells();
        for i in 0..w * h {
            if cells[i].ignited {
                dist[i] = 0;
            }
        }
        // Forward pass: west and the northern row.
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut d = dist[i];
                if x > 0 {
                    d = d.min(dist[i - 1] + 1);
                }
                if y > 0 {
                    let up = i - w;
                    d = d.min(dist[up] + 1);
                    if x > 0 {
                        d = d.min(dist[up - 1] + 1);
                    }
                    if x + 1 < w {
                        d = d.min(dist[up + 1] + 1);
                    }
                }
                dist[i] = d;
            }
        }
        // Backward pass: east and the southern row.
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                let i = y * w + x;
                let mut d = dist[i];
                if x + 1 < w {
                    d = d.min(dist[i + 1] + 1);
                }
                if y + 1 < h {
                    let down = i + w;
                    d = d.min(dist[down] + 1);
                    if x > 0 {
                        d = d.min(dist[down - 1] + 1);
                    }
                    if x + 1 < w {
                        d = d.min(dist[down + 1] + 1);
                    }
                }
                dist[i] = d;
            }
        }
        Self { width: w, dist, d_max }
    }

    /// Sentinel distance reported when no cell is burning.
    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    pub fn footprint_distance(&self, footprint: &[(usize, usize)]) -> u32 {
        footprint
            .iter()
            .map(|&(x, y)| self.dist[y * self.width + x])
            .min()
            .unwrap_or(u32::MAX / 2)
            .min(self.d_max)
    }
}

/// Per-asset fire distances in canonical order (nodes ascending id, then
/// branches ascending id), suitable as the controller's fire observation.
pub fn reduced_fire_observation<F: Scalar>(grid: &FireGrid<F>, footprints: &AssetFootprints) -> Vec<F> {
    let field = FireDistanceField::compute(grid);
    footprints
        .node
        .iter()
        .chain(footprints.branch.iter())
        .map(|fp| F::from_u32(field.footprint_distance(fp)).unwrap())
        .collect()
}

/// Per-asset clear flags in the same canonical order as
/// [`reduced_fire_observation`].
pub fn asset_statuses<F: Scalar>(grid: &FireGrid<F>, footprints: &AssetFootprints) -> Vec<bool> {
    footprints
        .node
        .iter()
        .chain(footprints.branch.iter())
        .map(|fp| asset_fire_status(grid, fp))
        .collect()
}

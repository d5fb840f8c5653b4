//! Occupancy-grid environments: local-map extraction around an actor,
//! camera-style visibility masking, and collision / line-of-sight queries.
//!
//! Cells hold occupancy values in `[0, 1]`: `0` free, `1` occupied, `0.5`
//! unknown. Generator-produced world maps are binary; `0.5` only appears
//! after visibility masking or when a map is deliberately blanked.

use crate::geo::{normalize_angle, MapGeo, Vec2};
use std::io::{BufRead, Write};
use thiserror::Error;

pub const OCC_FREE: f64 = 0.0;
pub const OCC_UNKNOWN: f64 = 0.5;
pub const OCC_OCCUPIED: f64 = 1.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("map format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// 2D occupancy raster with world<->pixel georeferencing.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    geo: MapGeo,
    cells: Vec<f64>,
}

/// Pose anchoring local-map extraction: the actor's world position and
/// heading. The local frame has +x along the heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorFrame {
    pub position: Vec2,
    pub heading: f64,
}

impl ActorFrame {
    pub fn new(position: Vec2, heading: f64) -> Self {
        ActorFrame { position, heading: normalize_angle(heading) }
    }

    pub fn local_to_world(&self, local: Vec2) -> Vec2 {
        self.position.add(local.rotated(self.heading))
    }

    pub fn world_to_local(&self, world: Vec2) -> Vec2 {
        world.sub(self.position).rotated(-self.heading)
    }
}

impl OccupancyGrid {
    pub fn new_free(geo: MapGeo) -> Self {
        OccupancyGrid { geo, cells: vec![OCC_FREE; geo.len()] }
    }

    pub fn filled(geo: MapGeo, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        OccupancyGrid { geo, cells: vec![value; geo.len()] }
    }

    pub fn from_cells(geo: MapGeo, cells: Vec<f64>) -> Result<Self, GridError> {
        if cells.len() != geo.len() {
            return Err(GridError::InvalidArgument(format!(
                "cell count {} does not match {}x{}",
                cells.len(),
                geo.width,
                geo.height
            )));
        }
        if cells.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GridError::InvalidArgument("occupancy outside [0,1]".into()));
        }
        Ok(OccupancyGrid { geo, cells })
    }

    pub fn geo(&self) -> &MapGeo {
        &self.geo
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.cells[self.geo.index(u, v)]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        assert!((0.0..=1.0).contains(&value));
        let i = self.geo.index(u, v);
        self.cells[i] = value;
    }

    /// Occupancy at a world point; out-of-bounds reads as occupied.
    pub fn occupancy_at(&self, world: Vec2) -> f64 {
        match self.geo.nearest_cell(world) {
            Some((u, v)) => self.get(u, v),
            None => OCC_OCCUPIED,
        }
    }

    pub fn is_occupied_cell(&self, u: usize, v: usize) -> bool {
        self.get(u, v) > 0.5
    }

    /// Mark every cell whose center falls in the closed world-frame
    /// rectangle `[x0, x1] x [y0, y1]`.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, value: f64) {
        for v in 0..self.geo.height {
            for u in 0..self.geo.width {
                let c = self.geo.cell_center(u, v);
                if c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1 {
                    self.set(u, v, value);
                }
            }
        }
    }
}

/// Resample the world grid into an actor-aligned local window clipped at
/// `d_x`/`d_y` meters, using nearest-neighbor lookups. Cells that fall
/// outside the world grid read as occupied.
pub fn extract_local_map(
    grid: &OccupancyGrid,
    frame: &ActorFrame,
    d_x: f64,
    d_y: f64,
    r_out: f64,
) -> Result<OccupancyGrid, GridError> {
    if d_x <= 0.0 || d_y <= 0.0 || r_out <= 0.0 {
        return Err(GridError::InvalidArgument(
            "local map dimensions and resolution must be positive".into(),
        ));
    }
    let geo = MapGeo::local(d_x, d_y, r_out);
    let mut out = OccupancyGrid::new_free(geo);
    for v in 0..geo.height {
        for u in 0..geo.width {
            let local = geo.cell_center(u, v);
            let world = frame.local_to_world(local);
            out.set(u, v, grid.occupancy_at(world));
        }
    }
    Ok(out)
}

/// Replace cells outside the forward field of view, beyond `range`, or
/// occluded by an occupied cell along the ray from the actor, by the
/// unknown value `0.5`. The actor sits at local `(0, 0)` heading `+x`.
pub fn mask_to_fov(local: &OccupancyGrid, fov: f64, range: f64) -> Result<OccupancyGrid, GridError> {
    if !(fov > 0.0 && fov <= std::f64::consts::TAU) {
        return Err(GridError::InvalidArgument("fov must be in (0, 2*pi]".into()));
    }
    if !(range > 0.0) {
        return Err(GridError::InvalidArgument("range must be positive".into()));
    }
    let eye = Vec2::ZERO;
    let eye_cell = local.geo.nearest_cell(eye);
    let half = fov / 2.0;
    let mut out = local.clone();
    for v in 0..local.geo.height {
        for u in 0..local.geo.width {
            if eye_cell == Some((u, v)) {
                continue;
            }
            let c = local.geo.cell_center(u, v);
            let visible = c.norm() <= range
                && c.angle().abs() <= half + 1e-12
                && !segment_hits_occupied(local, eye, c, eye_cell, Some((u, v)));
            if !visible {
                let i = local.geo.index(u, v);
                out.cells[i] = OCC_UNKNOWN;
            }
        }
    }
    Ok(out)
}

/// True iff any cell whose center lies within `inflation` of `p` is
/// occupied. Points outside the grid count as collisions.
pub fn is_collision(grid: &OccupancyGrid, p: Vec2, inflation: f64) -> bool {
    debug_assert!(inflation >= 0.0);
    let geo = grid.geo;
    if geo.nearest_cell(p).is_none() {
        return true;
    }
    let g = geo.world_to_pixel(p);
    let rad = inflation / geo.resolution;
    let u0 = ((g.x - rad).floor().max(0.0)) as usize;
    let v0 = ((g.y - rad).floor().max(0.0)) as usize;
    let u1 = ((g.x + rad).ceil() as usize).min(geo.width - 1);
    let v1 = ((g.y + rad).ceil() as usize).min(geo.height - 1);
    for v in v0..=v1 {
        for u in u0..=u1 {
            if grid.is_occupied_cell(u, v)
                && grid.geo.cell_center(u, v).sub(p).norm() <= inflation
            {
                return true;
            }
        }
    }
    false
}

/// Line-of-sight query: true iff no occupied cell intersects the segment.
pub fn raycast(grid: &OccupancyGrid, from: Vec2, to: Vec2) -> bool {
    debug_assert!(from.is_finite() && to.is_finite());
    !segment_hits_occupied(grid, from, to, None, None)
}

/// Walk the cells a segment passes through (supercover DDA: corner
/// crossings include both side cells) and report whether any of them is
/// occupied. `skip_first` / `skip_last` exclude the given cells from the
/// check, which the FOV mask uses to ignore the eye and target cells.
fn segment_hits_occupied(
    grid: &OccupancyGrid,
    from: Vec2,
    to: Vec2,
    skip_first: Option<(usize, usize)>,
    skip_last: Option<(usize, usize)>,
) -> bool {
    let geo = grid.geo;
    let occupied_at = |i: i64, j: i64| -> bool {
        if i < 0 || j < 0 || i >= geo.width as i64 || j >= geo.height as i64 {
            return false; // outside the map there is nothing to hit
        }
        let cell = (i as usize, j as usize);
        if skip_first == Some(cell) || skip_last == Some(cell) {
            return false;
        }
        grid.is_occupied_cell(cell.0, cell.1)
    };

    let a = geo.world_to_pixel(from);
    let b = geo.world_to_pixel(to);
    let mut i = a.x.round() as i64;
    let mut j = a.y.round() as i64;
    let i1 = b.x.round() as i64;
    let j1 = b.y.round() as i64;
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let step_i: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_j: i64 = if dy > 0.0 { 1 } else { -1 };
    // Parametric distance to the next cell boundary along each axis; cell
    // boundaries sit at half-integer pixel coordinates.
    let mut t_max_x = if dx == 0.0 {
        f64::INFINITY
    } else {
        ((i as f64 + 0.5 * step_i as f64) - a.x) / dx
    };
    let mut t_max_y = if dy == 0.0 {
        f64::INFINITY
    } else {
        ((j as f64 + 0.5 * step_j as f64) - a.y) / dy
    };
    let t_delta_x = if dx == 0.0 { f64::INFINITY } else { (1.0 / dx).abs() };
    let t_delta_y = if dy == 0.0 { f64::INFINITY } else { (1.0 / dy).abs() };

    const TIE: f64 = 1e-12;
    let max_steps = 2 * ((i - i1).abs() + (j - j1).abs()) + 4;
    for _ in 0..max_steps {
        if occupied_at(i, j) {
            return true;
        }
        if i == i1 && j == j1 {
            return false;
        }
        let tx = t_max_x.min(1.0 + TIE);
        let ty = t_max_y.min(1.0 + TIE);
        if tx > 1.0 && ty > 1.0 {
            // Segment ends inside the current cell; rounding placed the
            // endpoint cell next door, nothing left to traverse.
            return false;
        }
        if (t_max_x - t_max_y).abs() <= TIE {
            // Exact corner crossing: the segment touches both side cells.
            if occupied_at(i + step_i, j) || occupied_at(i, j + step_j) {
                return true;
            }
            i += step_i;
            j += step_j;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            i += step_i;
            t_max_x += t_delta_x;
        } else {
            j += step_j;
            t_max_y += t_delta_y;
        }
    }
    false
}

// --- map file format -------------------------------------------------------
//
// ASCII format, one header line then `height` raster rows (top row first,
// i.e. v = height-1):
//
//   P-OCC <width> <height> <resolution_m> <origin_x> <origin_y>
//   ####...
//
// '#' occupied, '.' free, '?' unknown. Floats use shortest round-trip
// formatting so write -> read -> write is byte-identical.

pub fn write_map<W: Write>(grid: &OccupancyGrid, mut w: W) -> Result<(), GridError> {
    let geo = grid.geo;
    writeln!(
        w,
        "P-OCC {} {} {} {} {}",
        geo.width, geo.height, geo.resolution, geo.origin.x, geo.origin.y
    )?;
    for v in (0..geo.height).rev() {
        let mut row = String::with_capacity(geo.width + 1);
        for u in 0..geo.width {
            let c = grid.get(u, v);
            row.push(if c > 0.75 {
                '#'
            } else if c > 0.25 {
                '?'
            } else {
                '.'
            });
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn read_map<R: BufRead>(r: R) -> Result<OccupancyGrid, GridError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| GridError::Format("empty map file".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "P-OCC" {
        return Err(GridError::Format(format!("bad header: {header:?}")));
    }
    let width: usize = fields[1].parse().map_err(|_| GridError::Format("bad width".into()))?;
    let height: usize = fields[2].parse().map_err(|_| GridError::Format("bad height".into()))?;
    let resolution: f64 =
        fields[3].parse().map_err(|_| GridError::Format("bad resolution".into()))?;
    let ox: f64 = fields[4].parse().map_err(|_| GridError::Format("bad origin x".into()))?;
    let oy: f64 = fields[5].parse().map_err(|_| GridError::Format("bad origin y".into()))?;
    if width == 0 || height == 0 || !(resolution > 0.0) {
        return Err(GridError::Format("non-positive dimensions".into()));
    }
    let geo = MapGeo::new(width, height, resolution, Vec2::new(ox, oy));
    let mut grid = OccupancyGrid::new_free(geo);
    for v in (0..height).rev() {
        let row = lines
            .next()
            .ok_or_else(|| GridError::Format("truncated raster".into()))??;
        if row.chars().count() != width {
            return Err(GridError::Format(format!("row length {} != width {width}", row.len())));
        }
        for (u, ch) in row.chars().enumerate() {
            let val = match ch {
                '#' => OCC_OCCUPIED,
                '.' => OCC_FREE,
                '?' => OCC_UNKNOWN,
                other => return Err(GridError::Format(format!("bad cell char {other:?}"))),
            };
            grid.set(u, v, val);
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn world_10m(r: f64) -> OccupancyGrid {
        // 10 m x 10 m map centered on the origin.
        let n = (10.0 / r) as usize;
        OccupancyGrid::new_free(MapGeo::new(n, n, r, Vec2::new(-5.0, -5.0)))
    }

    #[test]
    fn extract_default_size_is_40x40() {
        let world = world_10m(0.25);
        let frame = ActorFrame::new(Vec2::ZERO, 0.0);
        let local = extract_local_map(&world, &frame, 2.5, 2.5, 0.125).unwrap();
        assert_eq!(local.geo().width, 40);
        assert_eq!(local.geo().height, 40);
    }

    #[test]
    fn extract_all_free_world() {
        let world = world_10m(0.25);
        let frame = ActorFrame::new(Vec2::new(1.0, -0.5), 0.7);
        let local = extract_local_map(&world, &frame, 2.0, 2.0, 0.125).unwrap();
        // Actor is deep inside a 10 m free map, so every local cell lands
        // in-bounds and free.
        assert!(local.cells().iter().all(|&c| c == OCC_FREE));
    }

    #[test]
    fn extract_marks_out_of_world_occupied() {
        let world = world_10m(0.25);
        // Near the +x edge: cells past 5 m must read occupied.
        let frame = ActorFrame::new(Vec2::new(4.5, 0.0), 0.0);
        let local = extract_local_map(&world, &frame, 2.5, 2.5, 0.125).unwrap();
        let geo = *local.geo();
        for v in 0..geo.height {
            for u in 0..geo.width {
                let world_pt = frame.local_to_world(geo.cell_center(u, v));
                let expect = if world.geo().nearest_cell(world_pt).is_some() {
                    OCC_FREE
                } else {
                    OCC_OCCUPIED
                };
                assert_eq!(local.get(u, v), expect, "cell ({u},{v})");
            }
        }
    }

    #[test]
    fn extract_single_cell_ahead() {
        let mut world = world_10m(0.25);
        let frame = ActorFrame::new(Vec2::ZERO, 0.0);
        // Occupy the world cell containing (+1 m, 0).
        let (cu, cv) = world.geo().nearest_cell(Vec2::new(1.0, 0.0)).unwrap();
        world.set(cu, cv, OCC_OCCUPIED);
        let occupied_center = world.geo().cell_center(cu, cv);

        let local = extract_local_map(&world, &frame, 2.5, 2.5, 0.125).unwrap();
        let geo = *local.geo();
        // Direct coordinate arithmetic oracle: a local pixel is occupied
        // exactly when its world sample rounds into the occupied cell.
        for v in 0..geo.height {
            for u in 0..geo.width {
                let w = frame.local_to_world(geo.cell_center(u, v));
                let expect = (w.x - occupied_center.x).abs() <= 0.125 + 1e-12
                    && (w.y - occupied_center.y).abs() <= 0.125 + 1e-12
                    && world.geo().nearest_cell(w) == Some((cu, cv));
                assert_eq!(local.is_occupied_cell(u, v), expect, "cell ({u},{v})");
            }
        }
        assert!(local.cells().iter().any(|&c| c == OCC_OCCUPIED));
    }

    #[test]
    fn fov_full_circle_on_free_map_is_identity() {
        let local = OccupancyGrid::new_free(MapGeo::local(2.5, 2.5, 0.125));
        let masked = mask_to_fov(&local, std::f64::consts::TAU, 1e9).unwrap();
        assert_eq!(masked, local);
    }

    #[test]
    fn fov_occupied_cell_shadows_cells_behind_it() {
        let mut local = OccupancyGrid::new_free(MapGeo::local(2.5, 2.5, 0.125));
        // (30, 20) sits 1.25 m straight ahead of the eye cell (20, 20).
        local.set(30, 20, OCC_OCCUPIED);
        let masked = mask_to_fov(&local, std::f64::consts::TAU, 1e9).unwrap();
        // The blocker itself is visible; everything behind it on the same
        // row is shadowed; cells in front are untouched.
        assert_eq!(masked.get(30, 20), OCC_OCCUPIED);
        for u in 31..40 {
            assert_eq!(masked.get(u, 20), OCC_UNKNOWN, "cell ({u},20)");
        }
        for u in 21..30 {
            assert_eq!(masked.get(u, 20), OCC_FREE, "cell ({u},20)");
        }
    }

    #[test]
    fn fov_wall_shadows_cells_behind() {
        let geo = MapGeo::local(2.5, 2.5, 0.125);
        let mut local = OccupancyGrid::new_free(geo);
        // Vertical wall 1 m ahead of the actor: world x = 1.0 -> pixel u = 28.
        let wall_u = geo.world_to_pixel(Vec2::new(1.0, 0.0)).x.round() as usize;
        for v in 0..geo.height {
            local.set(wall_u, v, OCC_OCCUPIED);
        }
        let masked = mask_to_fov(&local, std::f64::consts::FRAC_PI_2, 1e9).unwrap();

        // Independent dense-sampling oracle.
        let eye_cell = geo.nearest_cell(Vec2::ZERO);
        for v in 0..geo.height {
            for u in 0..geo.width {
                if Some((u, v)) == eye_cell {
                    continue;
                }
                let c = geo.cell_center(u, v);
                let in_cone = c.angle().abs() <= std::f64::consts::FRAC_PI_4 + 1e-12;
                let occluded = exact_ray_blocked(&local, c, (u, v));
                let expect = if in_cone && !occluded { local.get(u, v) } else { OCC_UNKNOWN };
                assert_eq!(masked.get(u, v), expect, "cell ({u},{v})");
            }
        }
    }

    /// Geometric oracle: the ray from the origin to the target center is
    /// blocked iff the closed segment intersects the closed square of some
    /// occupied cell other than the eye or target cell (slab test).
    fn exact_ray_blocked(local: &OccupancyGrid, target: Vec2, target_cell: (usize, usize)) -> bool {
        let geo = *local.geo();
        let eye_cell = geo.nearest_cell(Vec2::ZERO);
        let half = geo.resolution / 2.0;
        for v in 0..geo.height {
            for u in 0..geo.width {
                if Some((u, v)) == eye_cell || (u, v) == target_cell {
                    continue;
                }
                if !local.is_occupied_cell(u, v) {
                    continue;
                }
                let c = geo.cell_center(u, v);
                if segment_touches_box(Vec2::ZERO, target, c, half) {
                    return true;
                }
            }
        }
        false
    }

    fn segment_touches_box(a: Vec2, b: Vec2, center: Vec2, half: f64) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for (p, d, c) in [(a.x, b.x - a.x, center.x), (a.y, b.y - a.y, center.y)] {
            if d == 0.0 {
                if p < c - half || p > c + half {
                    return false;
                }
            } else {
                let ta = (c - half - p) / d;
                let tb = (c + half - p) / d;
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        t0 <= t1
    }

    #[test]
    fn fov_degenerate_range_masks_everything() {
        let local = OccupancyGrid::new_free(MapGeo::local(1.0, 1.0, 0.125));
        let masked = mask_to_fov(&local, std::f64::consts::TAU, 0.01).unwrap();
        let geo = *masked.geo();
        let eye = geo.nearest_cell(Vec2::ZERO);
        for v in 0..geo.height {
            for u in 0..geo.width {
                if Some((u, v)) == eye {
                    assert_eq!(masked.get(u, v), OCC_FREE);
                } else {
                    assert_eq!(masked.get(u, v), OCC_UNKNOWN, "cell ({u},{v})");
                }
            }
        }
    }

    #[test]
    fn collision_examples() {
        let mut world = world_10m(0.25);
        assert!(!is_collision(&world, Vec2::new(0.3, -1.2), 0.0));
        let (u, v) = world.geo().nearest_cell(Vec2::new(2.0, 2.0)).unwrap();
        world.set(u, v, OCC_OCCUPIED);
        let center = world.geo().cell_center(u, v);
        assert!(is_collision(&world, center, 0.0));
        // 0.3 m away with 0.35 m inflation.
        assert!(is_collision(&world, center.add(Vec2::new(0.3, 0.0)), 0.35));
        assert!(!is_collision(&world, center.add(Vec2::new(0.4, 0.0)), 0.35));
        // Outside the map entirely.
        assert!(is_collision(&world, Vec2::new(50.0, 0.0), 0.0));
    }

    #[test]
    fn raycast_examples() {
        let mut world = world_10m(0.25);
        assert!(raycast(&world, Vec2::new(-2.0, 0.0), Vec2::new(2.0, 1.0)));
        assert!(raycast(&world, Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)));
        // Vertical wall at x = 0.
        for v in 0..world.geo().height {
            let (u, _) = world.geo().nearest_cell(Vec2::new(0.0, 0.0)).unwrap();
            world.set(u, v, OCC_OCCUPIED);
        }
        assert!(!raycast(&world, Vec2::new(-2.0, 0.3), Vec2::new(2.0, -0.7)));
        // Parallel to the wall, on the free side.
        assert!(raycast(&world, Vec2::new(-2.0, -3.0), Vec2::new(-2.0, 3.0)));
    }

    #[test]
    fn map_file_round_trip() {
        let mut grid = OccupancyGrid::new_free(MapGeo::new(7, 5, 0.13, Vec2::new(-1.25, 0.4)));
        grid.set(0, 0, OCC_OCCUPIED);
        grid.set(6, 4, OCC_OCCUPIED);
        grid.set(3, 2, OCC_UNKNOWN);
        let mut buf = Vec::new();
        write_map(&grid, &mut buf).unwrap();
        let back = read_map(&buf[..]).unwrap();
        assert_eq!(back, grid);
        let mut buf2 = Vec::new();
        write_map(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2, "write -> read -> write must be byte-identical");
    }

    #[test]
    fn map_file_rejects_garbage() {
        assert!(read_map(&b"P-FOO 2 2 0.1 0 0\n..\n..\n"[..]).is_err());
        assert!(read_map(&b"P-OCC 2 2 0.1 0 0\n..\n"[..]).is_err());
        assert!(read_map(&b"P-OCC 2 2 0.1 0 0\n.x\n..\n"[..]).is_err());
    }

    #[test]
    fn extract_rejects_bad_arguments() {
        let world = world_10m(0.25);
        let frame = ActorFrame::new(Vec2::ZERO, 0.0);
        assert!(extract_local_map(&world, &frame, 0.0, 1.0, 0.1).is_err());
        assert!(extract_local_map(&world, &frame, 1.0, 1.0, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn fov_mask_is_idempotent(
            seed in 0u64..1000,
            fov in 0.3f64..std::f64::consts::TAU,
            range in 0.3f64..4.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let geo = MapGeo::local(1.5, 1.5, 0.25);
            let mut local = OccupancyGrid::new_free(geo);
            for _ in 0..20 {
                let u = rng.random_range(0..geo.width);
                let v = rng.random_range(0..geo.height);
                local.set(u, v, OCC_OCCUPIED);
            }
            let once = mask_to_fov(&local, fov, range).unwrap();
            let twice = mask_to_fov(&once, fov, range).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn collision_monotone_in_inflation(
            x in -6.0f64..6.0, y in -6.0f64..6.0,
            a in 0.0f64..0.5, extra in 0.0f64..0.5,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut world = world_10m(0.25);
            for _ in 0..30 {
                let u = rng.random_range(0..world.geo().width);
                let v = rng.random_range(0..world.geo().height);
                world.set(u, v, OCC_OCCUPIED);
            }
            let p = Vec2::new(x, y);
            if is_collision(&world, p, a) {
                prop_assert!(is_collision(&world, p, a + extra));
            }
        }

        #[test]
        fn raycast_is_symmetric(
            ax in -4.9f64..4.9, ay in -4.9f64..4.9,
            bx in -4.9f64..4.9, by in -4.9f64..4.9,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut world = world_10m(0.25);
            for _ in 0..40 {
                let u = rng.random_range(0..world.geo().width);
                let v = rng.random_range(0..world.geo().height);
                world.set(u, v, OCC_OCCUPIED);
            }
            let a = Vec2::new(ax, ay);
            let b = Vec2::new(bx, by);
            prop_assert_eq!(raycast(&world, a, b), raycast(&world, b, a));
        }

        #[test]
        fn extract_equivariant_under_rigid_transforms(
            quarter_turns in 0u8..4,
            tx_cells in -8i32..8, ty_cells in -8i32..8,
            heading in -3.0f64..3.0,
        ) {
            // Exact grid symmetries: rotations by multiples of 90 degrees
            // and translations by whole cells, applied to both the world
            // content and the actor frame. Content away from half-cell
            // boundaries keeps nearest-neighbor ties out of play.
            let r = 0.25;
            let rot = quarter_turns as f64 * std::f64::consts::FRAC_PI_2;
            let shift = Vec2::new(tx_cells as f64 * r, ty_cells as f64 * r);
            let obstacles = [Vec2::new(0.8, 0.3), Vec2::new(-1.1, 0.55), Vec2::new(0.3, -1.3)];

            let mut world_a = world_10m(r);
            let mut world_b = world_10m(r);
            for o in obstacles {
                let (u, v) = world_a.geo().nearest_cell(o).unwrap();
                world_a.set(u, v, OCC_OCCUPIED);
                let o2 = o.rotated(rot).add(shift);
                let (u, v) = world_b.geo().nearest_cell(o2).unwrap();
                world_b.set(u, v, OCC_OCCUPIED);
            }
            let pos = Vec2::new(0.13, -0.21);
            let frame_a = ActorFrame::new(pos, heading);
            let frame_b = ActorFrame::new(pos.rotated(rot).add(shift), heading + rot);
            let la = extract_local_map(&world_a, &frame_a, 1.5, 1.5, 0.125).unwrap();
            let lb = extract_local_map(&world_b, &frame_b, 1.5, 1.5, 0.125).unwrap();
            prop_assert_eq!(la, lb);
        }
    }
}

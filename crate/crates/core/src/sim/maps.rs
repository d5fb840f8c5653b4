//! Procedural occupancy maps with a matching walkable center-line route.
//!
//! Every generator starts from a fully occupied canvas and carves free
//! corridors or rooms out of it, so free space is connected by
//! construction. The route keeps at least half a corridor width of
//! clearance from every wall; walkers and planners rely on that margin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geo::{MapGeo, Vec2};
use crate::grid::{OccupancyGrid, OCC_FREE, OCC_OCCUPIED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    Corridor,
    LTurn,
    TJunction,
    OpenRoom,
}

impl MapKind {
    pub fn parse(s: &str) -> Option<MapKind> {
        match s {
            "corridor" => Some(MapKind::Corridor),
            "l-turn" | "lturn" => Some(MapKind::LTurn),
            "t-junction" | "tjunction" => Some(MapKind::TJunction),
            "open-room" | "openroom" => Some(MapKind::OpenRoom),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapKind::Corridor => "corridor",
            MapKind::LTurn => "l-turn",
            MapKind::TJunction => "t-junction",
            MapKind::OpenRoom => "open-room",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSpec {
    pub kind: MapKind,
    /// Corridor width in meters (also the open room's short-side scale).
    pub corridor_width: f64,
    /// Main extent in meters.
    pub length: f64,
    /// Cell edge in meters.
    pub resolution: f64,
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec {
            kind: MapKind::Corridor,
            corridor_width: 2.0,
            length: 10.0,
            resolution: 0.125,
        }
    }
}

/// A generated map plus the center-line route a walker can follow.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: OccupancyGrid,
    pub route: Vec<Vec2>,
}

pub fn generate_map(spec: &MapSpec, seed: u64) -> Result<OccupancyGrid, SimError> {
    Ok(build_world(spec, seed)?.grid)
}

/// Build the map and its route. Corridors are deterministic; turn
/// placement, junction arm choice and room waypoints draw from `seed`.
pub fn build_world(spec: &MapSpec, seed: u64) -> Result<World, SimError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7073);
    let world = match spec.kind {
        MapKind::Corridor => corridor(spec),
        MapKind::LTurn => l_turn(spec, &mut rng)?,
        MapKind::TJunction => t_junction(spec, &mut rng)?,
        MapKind::OpenRoom => open_room(spec, &mut rng)?,
    };
    debug_assert!(world.route.iter().all(|p| world.grid.occupancy_at(*p) <= 0.5));
    Ok(world)
}

fn validate(spec: &MapSpec) -> Result<(), SimError> {
    if !(spec.corridor_width.is_finite() && spec.corridor_width >= 1.0) {
        return Err(SimError::InvalidArgument("corridor width must be at least 1 m".into()));
    }
    if !(spec.resolution > 0.0 && spec.resolution <= spec.corridor_width / 2.0) {
        return Err(SimError::InvalidArgument(
            "resolution must be positive and at most half the corridor width".into(),
        ));
    }
    if !(spec.length.is_finite() && spec.length >= 3.0) {
        return Err(SimError::InvalidArgument("map length must be at least 3 m".into()));
    }
    Ok(())
}

/// Cells of wall padding around free space, at least half a meter.
fn wall_cells(r: f64) -> usize {
    ((0.5 / r).ceil() as usize).max(1)
}

fn carve(grid: &mut OccupancyGrid, u: std::ops::Range<usize>, v: std::ops::Range<usize>) {
    for vv in v {
        for uu in u.clone() {
            grid.set(uu, vv, OCC_FREE);
        }
    }
}

fn occupied_canvas(width: usize, height: usize, r: f64, origin: Vec2) -> OccupancyGrid {
    OccupancyGrid::filled(MapGeo::new(width, height, r, origin), OCC_OCCUPIED)
}

/// Straight corridor along +x; the free band is exactly ⌈width/r⌉ cells
/// tall and the route runs down its center line at y = 0.
fn corridor(spec: &MapSpec) -> World {
    let r = spec.resolution;
    let band = (spec.corridor_width / r).ceil() as usize;
    let wall = wall_cells(r);
    let w = (spec.length / r).ceil() as usize;
    let h = band + 2 * wall;
    let origin = Vec2::new(0.0, -((wall as f64 + (band as f64 - 1.0) / 2.0) * r));
    let mut grid = occupied_canvas(w, h, r, origin);
    carve(&mut grid, 0..w, wall..wall + band);
    let x_end = (w - 1) as f64 * r - 0.75;
    World { grid, route: vec![Vec2::new(0.75, 0.0), Vec2::new(x_end, 0.0)] }
}

/// Horizontal leg that turns into a vertical leg; where the turn sits and
/// which way it goes are seeded, which is exactly the information a map
/// gives a forecaster that history alone cannot.
fn l_turn(spec: &MapSpec, rng: &mut ChaCha8Rng) -> Result<World, SimError> {
    let r = spec.resolution;
    let band = (spec.corridor_width / r).ceil() as usize;
    let wall = wall_cells(r);
    let w = (spec.length / r).ceil() as usize;
    let avail = w as i64 - band as i64 - 2 * wall as i64 - 4;
    if avail < 1 {
        return Err(SimError::InvalidArgument("map too short to place a turn".into()));
    }
    let turn_frac = 0.35 + 0.3 * rng.random::<f64>();
    let up = rng.random::<bool>();
    let cx = wall + 2 + (turn_frac * avail as f64).round() as usize;
    let lv = (0.6 * spec.length / r).ceil() as usize;
    let h = 2 * wall + band + lv;
    let ry0 = if up { wall } else { wall + lv };
    let origin = Vec2::new(0.0, -((ry0 as f64 + (band as f64 - 1.0) / 2.0) * r));
    let mut grid = occupied_canvas(w.max(cx + band + wall), h, r, origin);
    carve(&mut grid, 0..cx + band, ry0..ry0 + band);
    if up {
        carve(&mut grid, cx..cx + band, ry0..ry0 + band + lv);
    } else {
        carve(&mut grid, cx..cx + band, ry0 - lv..ry0 + band);
    }
    let xc = (cx as f64 + (band as f64 - 1.0) / 2.0) * r;
    let y_end = if up {
        origin.y + (ry0 + band + lv - 1) as f64 * r - 0.75
    } else {
        origin.y + (ry0 - lv) as f64 * r + 0.75
    };
    Ok(World {
        grid,
        route: vec![Vec2::new(0.75, 0.0), Vec2::new(xc, 0.0), Vec2::new(xc, y_end)],
    })
}

/// Stem corridor meeting a cross bar; both arms are carved but the route
/// commits to one of them by seed.
fn t_junction(spec: &MapSpec, rng: &mut ChaCha8Rng) -> Result<World, SimError> {
    let r = spec.resolution;
    let band = (spec.corridor_width / r).ceil() as usize;
    let wall = wall_cells(r);
    let w = (spec.length / r).ceil() as usize;
    let avail = w as i64 - band as i64 - 2 * wall as i64 - 4;
    if avail < 1 {
        return Err(SimError::InvalidArgument("map too short to place a junction".into()));
    }
    let turn_frac = 0.35 + 0.3 * rng.random::<f64>();
    let up = rng.random::<bool>();
    let cx = wall + 2 + (turn_frac * avail as f64).round() as usize;
    let lv = (0.5 * spec.length / r).ceil() as usize;
    let h = 2 * wall + band + 2 * lv;
    let ry0 = wall + lv;
    let origin = Vec2::new(0.0, -((ry0 as f64 + (band as f64 - 1.0) / 2.0) * r));
    let mut grid = occupied_canvas(w.max(cx + band + wall), h, r, origin);
    carve(&mut grid, 0..cx + band, ry0..ry0 + band);
    carve(&mut grid, cx..cx + band, wall..wall + band + 2 * lv);
    let xc = (cx as f64 + (band as f64 - 1.0) / 2.0) * r;
    let y_end = if up {
        origin.y + (wall + band + 2 * lv - 1) as f64 * r - 0.75
    } else {
        origin.y + wall as f64 * r + 0.75
    };
    Ok(World {
        grid,
        route: vec![Vec2::new(0.75, 0.0), Vec2::new(xc, 0.0), Vec2::new(xc, y_end)],
    })
}

/// Walled rectangular room with a seeded zig-zag route through the
/// interior; the room is convex so any polyline between inset waypoints
/// stays clear of the walls.
fn open_room(spec: &MapSpec, rng: &mut ChaCha8Rng) -> Result<World, SimError> {
    let r = spec.resolution;
    let wall = wall_cells(r);
    let w = (spec.length / r).ceil() as usize + 2 * wall;
    let h = (0.7 * spec.length / r).ceil() as usize + 2 * wall;
    let origin =
        Vec2::new(-((w - 1) as f64) / 2.0 * r, -((h - 1) as f64) / 2.0 * r);
    let mut grid = occupied_canvas(w, h, r, origin);
    carve(&mut grid, wall..w - wall, wall..h - wall);

    let inset = 1.0;
    let x_lo = origin.x + wall as f64 * r + inset;
    let x_hi = origin.x + (w - wall - 1) as f64 * r - inset;
    let y_lo = origin.y + wall as f64 * r + inset;
    let y_hi = origin.y + (h - wall - 1) as f64 * r - inset;
    if x_hi - x_lo < 1.0 || y_hi - y_lo < 0.5 {
        return Err(SimError::InvalidArgument("room too small for a route".into()));
    }
    let route = (0..4)
        .map(|i| {
            let x = x_lo + (x_hi - x_lo) * i as f64 / 3.0;
            let y = y_lo + (y_hi - y_lo) * rng.random::<f64>();
            Vec2::new(x, y)
        })
        .collect();
    Ok(World { grid, route })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::is_collision;
    use std::collections::VecDeque;

    fn spec(kind: MapKind) -> MapSpec {
        MapSpec { kind, ..MapSpec::default() }
    }

    #[test]
    fn corridor_free_band_is_width_over_resolution_cells() {
        for (width, r) in [(2.0, 0.125), (2.0, 0.15), (1.0, 0.1), (1.3, 0.11)] {
            let world = build_world(
                &MapSpec { kind: MapKind::Corridor, corridor_width: width, length: 10.0, resolution: r },
                0,
            )
            .unwrap();
            let want = (width / r).ceil() as usize;
            let geo = *world.grid.geo();
            for u in 0..geo.width {
                let free = (0..geo.height).filter(|&v| world.grid.get(u, v) == OCC_FREE).count();
                assert_eq!(free, want, "column {u} at width {width} res {r}");
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_same_world() {
        for kind in [MapKind::Corridor, MapKind::LTurn, MapKind::TJunction, MapKind::OpenRoom] {
            let a = build_world(&spec(kind), 7).unwrap();
            let b = build_world(&spec(kind), 7).unwrap();
            assert_eq!(a, b, "{kind:?}");
        }
    }

    #[test]
    fn seeds_move_the_turn_and_flip_its_direction() {
        let ends: Vec<Vec2> =
            (0..12).map(|s| build_world(&spec(MapKind::LTurn), s).unwrap().route[2]).collect();
        assert!(ends.iter().any(|e| e.y > 0.0) && ends.iter().any(|e| e.y < 0.0));
        let xs: Vec<f64> = ends.iter().map(|e| e.x).collect();
        assert!(xs.iter().any(|&x| (x - xs[0]).abs() > 0.5), "turn never moved: {xs:?}");
    }

    #[test]
    fn open_room_interior_is_entirely_free() {
        let world = build_world(&spec(MapKind::OpenRoom), 3).unwrap();
        let geo = *world.grid.geo();
        let wall = wall_cells(0.125);
        for v in 0..geo.height {
            for u in 0..geo.width {
                let interior =
                    u >= wall && u < geo.width - wall && v >= wall && v < geo.height - wall;
                let want = if interior { OCC_FREE } else { OCC_OCCUPIED };
                assert_eq!(world.grid.get(u, v), want, "cell ({u},{v})");
            }
        }
    }

    /// Flood fill from the first route waypoint; every free cell must be
    /// reachable through 4-connected free neighbors.
    #[test]
    fn free_space_is_connected_in_every_kind() {
        for kind in [MapKind::Corridor, MapKind::LTurn, MapKind::TJunction, MapKind::OpenRoom] {
            for seed in [0, 5, 11] {
                let world = build_world(&spec(kind), seed).unwrap();
                let geo = *world.grid.geo();
                let start = geo.nearest_cell(world.route[0]).unwrap();
                let mut seen = vec![false; geo.len()];
                let mut queue = VecDeque::from([start]);
                seen[geo.index(start.0, start.1)] = true;
                let mut reached = 0usize;
                while let Some((u, v)) = queue.pop_front() {
                    reached += 1;
                    let mut push = |uu: i64, vv: i64| {
                        if uu < 0 || vv < 0 || uu >= geo.width as i64 || vv >= geo.height as i64 {
                            return;
                        }
                        let (uu, vv) = (uu as usize, vv as usize);
                        let i = geo.index(uu, vv);
                        if !seen[i] && world.grid.get(uu, vv) == OCC_FREE {
                            seen[i] = true;
                            queue.push_back((uu, vv));
                        }
                    };
                    push(u as i64 - 1, v as i64);
                    push(u as i64 + 1, v as i64);
                    push(u as i64, v as i64 - 1);
                    push(u as i64, v as i64 + 1);
                }
                let free = world.grid.cells().iter().filter(|&&c| c == OCC_FREE).count();
                assert_eq!(reached, free, "{kind:?} seed {seed}");
            }
        }
    }

    #[test]
    fn routes_keep_clearance_from_walls() {
        for kind in [MapKind::Corridor, MapKind::LTurn, MapKind::TJunction, MapKind::OpenRoom] {
            for seed in [1, 9] {
                let world = build_world(&spec(kind), seed).unwrap();
                for w in world.route.windows(2) {
                    let len = w[1].sub(w[0]).norm();
                    let n = (len / 0.05).ceil() as usize;
                    for i in 0..=n {
                        let p = w[0].add(w[1].sub(w[0]).scale(i as f64 / n as f64));
                        assert!(
                            !is_collision(&world.grid, p, 0.3),
                            "{kind:?} seed {seed} point ({:.2},{:.2})",
                            p.x,
                            p.y
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let bad = [
            MapSpec { corridor_width: 0.5, ..MapSpec::default() },
            MapSpec { resolution: 0.0, ..MapSpec::default() },
            MapSpec { resolution: 1.5, ..MapSpec::default() },
            MapSpec { length: 1.0, ..MapSpec::default() },
        ];
        for spec in bad {
            assert!(matches!(generate_map(&spec, 0), Err(SimError::InvalidArgument(_))), "{spec:?}");
        }
    }
}

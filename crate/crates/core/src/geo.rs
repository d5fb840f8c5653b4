//! Planar geometry primitives and raster georeferencing shared by the
//! occupancy-grid and heatmap types.

use serde::{Deserialize, Serialize};

/// 2D point / vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Polar angle in (-pi, pi].
    pub fn angle(self) -> f64 {
        normalize_angle(self.y.atan2(self.x))
    }

    pub fn unit(angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c, s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let a = theta.rem_euclid(two_pi);
    if a > std::f64::consts::PI {
        a - two_pi
    } else {
        a
    }
}

/// Georeference of a raster: integer pixel `(u, v)` samples the world point
/// `origin + (u, v) * resolution`. Pixel coordinates are real-valued; the
/// cell around a lattice point extends half a resolution in each direction.
///
/// Local (actor-frame) rasters clipped by distances `d_x`, `d_y` use
/// `origin = (-d_x, -d_y)`, so pixel `(0, 0)` sits at the low corner and the
/// actor maps to the central lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapGeo {
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub resolution: f64,
    /// World coordinates of pixel (0, 0).
    pub origin: Vec2,
}

impl MapGeo {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Vec2) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        assert!(resolution > 0.0, "resolution must be positive");
        MapGeo { width, height, resolution, origin }
    }

    /// Actor-frame raster covering `[-d_x, d_x) x [-d_y, d_y)` at `resolution`.
    pub fn local(d_x: f64, d_y: f64, resolution: f64) -> Self {
        let width = (2.0 * d_x / resolution).round() as usize;
        let height = (2.0 * d_y / resolution).round() as usize;
        MapGeo::new(width, height, resolution, Vec2::new(-d_x, -d_y))
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel_to_world(&self, pixel: Vec2) -> Vec2 {
        self.origin.add(pixel.scale(self.resolution))
    }

    pub fn world_to_pixel(&self, world: Vec2) -> Vec2 {
        world.sub(self.origin).scale(1.0 / self.resolution)
    }

    /// Index of the lattice cell containing `world`, if any.
    pub fn nearest_cell(&self, world: Vec2) -> Option<(usize, usize)> {
        let p = self.world_to_pixel(world);
        let u = p.x.round();
        let v = p.y.round();
        if u >= 0.0 && v >= 0.0 && (u as usize) < self.width && (v as usize) < self.height {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    pub fn cell_center(&self, u: usize, v: usize) -> Vec2 {
        self.pixel_to_world(Vec2::new(u as f64, v as f64))
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }
}

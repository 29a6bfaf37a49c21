//! Small planar-geometry helpers over WGS84 coordinates.

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const METERS_PER_MILE: f64 = 1609.344;

/// Local east/north offsets in meters, equirectangular about `(ref_lat, ref_lon)`.
pub fn project(ref_lat: f64, ref_lon: f64, lat: f64, lon: f64) -> (f64, f64) {
    let x = (lon - ref_lon).to_radians() * ref_lat.to_radians().cos() * EARTH_RADIUS_M;
    let y = (lat - ref_lat).to_radians() * EARTH_RADIUS_M;
    (x, y)
}

/// Inverse of [`project`].
pub fn unproject(ref_lat: f64, ref_lon: f64, x: f64, y: f64) -> (f64, f64) {
    let lat = ref_lat + (y / EARTH_RADIUS_M).to_degrees();
    let lon = ref_lon + (x / (EARTH_RADIUS_M * ref_lat.to_radians().cos())).to_degrees();
    (lat, lon)
}

/// Distance from `p` to segment `a`-`b` in meters and the clamped position
/// of the foot point along the segment, in `[0, 1]`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (ax, ay) = project(p.0, p.1, a.0, a.1);
    let (bx, by) = project(p.0, p.1, b.0, b.1);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        ((-ax * dx - ay * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (fx, fy) = (ax + t * dx, ay + t * dy);
    ((fx * fx + fy * fy).sqrt(), t)
}

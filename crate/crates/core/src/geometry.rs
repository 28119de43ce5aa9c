//! Interface geometries of the benchmark inclusions and their signed
//! distance functions.

use crate::error::{Result, XqcError};

pub type Point = [f64; 2];

/// Tolerance (mm) below which a signed distance counts as "on the interface".
pub const ON_INTERFACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterfaceGeometry {
    Circle { center: Point, radius: f64 },
    /// Axis-aligned square.
    Square { center: Point, half_edge: f64 },
    /// Open line segment (fiber).
    Segment { start: Point, end: Point },
}

impl InterfaceGeometry {
    pub fn circle(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(XqcError::InvalidGeometry(format!("circle radius {radius} must be positive")));
        }
        Ok(Self::Circle { center, radius })
    }

    pub fn square(center: Point, half_edge: f64) -> Result<Self> {
        if !(half_edge > 0.0) {
            return Err(XqcError::InvalidGeometry(format!("square half edge {half_edge} must be positive")));
        }
        Ok(Self::Square { center, half_edge })
    }

    pub fn segment(start: Point, end: Point) -> Result<Self> {
        let len = ((end[0] - start[0]).powi(2) + (end[1] - start[1]).powi(2)).sqrt();
        if !(len > 0.0) {
            return Err(XqcError::InvalidGeometry("segment has zero length".into()));
        }
        Ok(Self::Segment { start, end })
    }

    /// Closed curves bound an inclusion; a segment does not.
    pub fn is_closed(&self) -> bool {
        !matches!(self, Self::Segment { .. })
    }

    /// Distance to the interface curve, negative inside closed interfaces.
    /// For a segment the unsigned distance is returned.
    pub fn signed_distance(&self, p: Point) -> f64 {
        match *self {
            Self::Circle { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                (dx * dx + dy * dy).sqrt() - radius
            }
            Self::Square { center, half_edge } => {
                let qx = (p[0] - center[0]).abs() - half_edge;
                let qy = (p[1] - center[1]).abs() - half_edge;
                let ox = qx.max(0.0);
                let oy = qy.max(0.0);
                (ox * ox + oy * oy).sqrt() + qx.max(qy).min(0.0)
            }
            Self::Segment { start, end } => distance_to_segment(p, start, end),
        }
    }

    /// Strict interior test used for material assignment of closed inclusions.
    pub fn strictly_inside(&self, p: Point) -> bool {
        self.is_closed() && self.signed_distance(p) < -ON_INTERFACE_TOL
    }

    pub fn on_interface(&self, p: Point) -> bool {
        self.signed_distance(p).abs() <= ON_INTERFACE_TOL
    }

    /// Whether the curve passes through the open axis-aligned cell of
    /// half-width `half` centred at `p`. Touching a cell corner or edge does
    /// not count.
    pub fn crosses_cell(&self, p: Point, half: f64) -> bool {
        let lo = [p[0] - half, p[1] - half];
        let hi = [p[0] + half, p[1] + half];
        let corners = [[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]];
        match *self {
            Self::Circle { center, radius } => {
                let dx = (center[0] - center[0].clamp(lo[0], hi[0])).abs();
                let dy = (center[1] - center[1].clamp(lo[1], hi[1])).abs();
                let near = (dx * dx + dy * dy).sqrt();
                let far = corners
                    .iter()
                    .map(|c| ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt())
                    .fold(0.0, f64::max);
                near < radius && far > radius
            }
            Self::Square { center, half_edge } => {
                let overlaps = (0..2).all(|k| lo[k] < center[k] + half_edge && hi[k] > center[k] - half_edge);
                let outside = corners.iter().any(|&c| self.signed_distance(c) > 0.0);
                overlaps && outside
            }
            Self::Segment { start, end } => {
                // Liang–Barsky clipping against the open cell.
                let d = [end[0] - start[0], end[1] - start[1]];
                let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
                for k in 0..2 {
                    if d[k] == 0.0 {
                        if start[k] <= lo[k] || start[k] >= hi[k] {
                            return false;
                        }
                    } else {
                        let a = (lo[k] - start[k]) / d[k];
                        let b = (hi[k] - start[k]) / d[k];
                        t0 = t0.max(a.min(b));
                        t1 = t1.min(a.max(b));
                    }
                }
                t0 < t1
            }
        }
    }

    /// Axis-aligned bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bounding_box(&self) -> [f64; 4] {
        match *self {
            Self::Circle { center, radius } => [
                center[0] - radius,
                center[1] - radius,
                center[0] + radius,
                center[1] + radius,
            ],
            Self::Square { center, half_edge } => [
                center[0] - half_edge,
                center[1] - half_edge,
                center[0] + half_edge,
                center[1] + half_edge,
            ],
            Self::Segment { start, end } => [
                start[0].min(end[0]),
                start[1].min(end[1]),
                start[0].max(end[0]),
                start[1].max(end[1]),
            ],
        }
    }
}

fn distance_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_distances() {
        let c = InterfaceGeometry::circle([-17.0, 0.0], 40.0).unwrap();
        assert_eq!(c.signed_distance([23.0, 0.0]), 0.0);
        assert_eq!(c.signed_distance([-17.0, 0.0]), -40.0);
        assert!(c.signed_distance([100.0, 0.0]) > 0.0);
    }

    #[test]
    fn square_distances() {
        let s = InterfaceGeometry::square([0.0, 0.0], 30.0).unwrap();
        assert_eq!(s.signed_distance([45.0, 0.0]), 15.0);
        assert_eq!(s.signed_distance([30.0, 10.0]), 0.0);
        assert_eq!(s.signed_distance([0.0, 0.0]), -30.0);
        assert_eq!(s.signed_distance([20.0, 25.0]), -5.0);
        assert!((s.signed_distance([33.0, 34.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn segment_distance_is_unsigned() {
        let f = InterfaceGeometry::segment([0.0, 0.0], [10.0, 0.0]).unwrap();
        assert_eq!(f.signed_distance([5.0, 0.0]), 0.0);
        assert_eq!(f.signed_distance([5.0, -3.0]), 3.0);
        assert_eq!(f.signed_distance([13.0, 4.0]), 5.0);
        assert!(!f.strictly_inside([5.0, 0.0]));
    }

    #[test]
    fn cell_crossing() {
        let c = InterfaceGeometry::circle([0.0, 0.0], 2.0).unwrap();
        assert!(c.crosses_cell([2.0, 0.0], 0.5));
        assert!(!c.crosses_cell([0.0, 0.0], 0.5));
        assert!(!c.crosses_cell([3.0, 3.0], 0.5));
        let s = InterfaceGeometry::square([0.0, 0.0], 2.0).unwrap();
        assert!(s.crosses_cell([2.0, 1.0], 0.5));
        assert!(!s.crosses_cell([1.0, 1.0], 0.5));
        assert!(!s.crosses_cell([3.0, 1.0], 0.5));
        let f = InterfaceGeometry::segment([0.0, 0.0], [4.0, 4.0]).unwrap();
        assert!(f.crosses_cell([1.0, 1.0], 0.5));
        // the diagonal only touches the corner of this cell
        assert!(!f.crosses_cell([2.0, 1.0], 0.5));
        assert!(!f.crosses_cell([6.0, 6.0], 0.5));
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(InterfaceGeometry::circle([0.0, 0.0], 0.0).is_err());
        assert!(InterfaceGeometry::square([0.0, 0.0], -1.0).is_err());
        assert!(InterfaceGeometry::segment([1.0, 1.0], [1.0, 1.0]).is_err());
    }
}

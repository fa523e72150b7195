//! Planar geometry over sampling positions.
//!
//! Orientation tests compare double-precision cross products against exact
//! zero. Points that evaluate as collinear with a hull edge are dropped from
//! the boundary, so every reported vertex is an extreme point.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn lexicographic(&self, other: &Point2) -> std::cmp::Ordering {
        self.x.total_cmp(&other.x).then(self.y.total_cmp(&other.y))
    }
}

/// Twice the signed area of the triangle `(o, a, b)`. Positive when `b` lies
/// to the left of the directed line `o -> a`.
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull of a finite point set.
///
/// Vertices are listed counter-clockwise starting from the lexicographically
/// smallest one. A single distinct input point gives a one-vertex hull, a
/// collinear input gives its two endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexHull {
    vertices: Vec<Point2>,
    area: f64,
}

impl ConvexHull {
    fn from_ccw(mut vertices: Vec<Point2>) -> Self {
        if let Some(start) = (0..vertices.len()).min_by(|&a, &b| vertices[a].lexicographic(&vertices[b])) {
            vertices.rotate_left(start);
        }
        let area = shoelace(&vertices);
        ConvexHull { vertices, area }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Closed containment: points on the boundary count as inside.
    pub fn contains(&self, p: Point2) -> bool {
        match self.vertices.as_slice() {
            [] => false,
            [v] => *v == p,
            [a, b] => cross(*a, *b, p) == 0.0 && within_box(*a, *b, p),
            vs => (0..vs.len()).all(|i| cross(vs[i], vs[(i + 1) % vs.len()], p) >= 0.0),
        }
    }
}

fn within_box(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn shoelace(vertices: &[Point2]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    (twice / 2.0).abs()
}

fn validate(points: &[Point2]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    match points.iter().find(|p| !p.is_finite()) {
        Some(p) => Err(Error::InvalidCoordinate { x: p.x, y: p.y }),
        None => Ok(()),
    }
}

/// Convex hull of an arbitrary point multiset (Andrew's monotone chain).
pub fn convex_hull(points: &[Point2]) -> Result<ConvexHull> {
    validate(points)?;
    let mut sorted = points.to_vec();
    sorted.sort_by(Point2::lexicographic);
    sorted.dedup();
    if sorted.len() < 3 {
        return Ok(ConvexHull::from_ccw(sorted));
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(sorted.len() + 1);
    for &p in &sorted {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in sorted.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    // the last point repeats the first
    hull.pop();
    Ok(ConvexHull::from_ccw(hull))
}

/// Convex hull of a simple (non self-intersecting) polyline in O(n) with
/// Melkman's deque algorithm.
///
/// The result is only correct for simple polylines. Use [`convex_hull`] for
/// arbitrary point sets.
pub fn convex_hull_polyline(polyline: &[Point2]) -> Result<ConvexHull> {
    validate(polyline)?;
    let mut path = polyline.to_vec();
    path.dedup();
    if path.len() < 3 {
        return convex_hull(&path);
    }
    let Some(k) = (2..path.len()).find(|&k| cross(path[0], path[1], path[k]) != 0.0) else {
        return convex_hull(&path);
    };

    // Leading collinear run: a simple path along a line is monotone, so its
    // extent is spanned by path[0] and path[k - 1].
    let (a, b, c) = (path[0], path[k - 1], path[k]);
    let mut deque = std::collections::VecDeque::with_capacity(path.len() + 1);
    if cross(a, b, c) > 0.0 {
        deque.extend([c, a, b, c]);
    } else {
        deque.extend([c, b, a, c]);
    }

    for &v in &path[k + 1..] {
        let n = deque.len();
        if cross(deque[n - 2], deque[n - 1], v) > 0.0 && cross(deque[0], deque[1], v) > 0.0 {
            continue;
        }
        while deque.len() >= 2 && cross(deque[deque.len() - 2], deque[deque.len() - 1], v) <= 0.0 {
            deque.pop_back();
        }
        deque.push_back(v);
        while deque.len() >= 2 && cross(v, deque[0], deque[1]) <= 0.0 {
            deque.pop_front();
        }
        deque.push_front(v);
    }
    deque.pop_back();
    // The last vertex pushed sits at both ends of the deque and can end up on
    // the segment between its neighbours.
    let mut cycle: Vec<Point2> = deque.into();
    let mut i = 0;
    while cycle.len() > 3 && i < cycle.len() {
        let n = cycle.len();
        if cross(cycle[(i + n - 1) % n], cycle[i], cycle[(i + 1) % n]) <= 0.0 {
            cycle.remove(i);
            i = i.saturating_sub(1);
        } else {
            i += 1;
        }
    }
    Ok(ConvexHull::from_ccw(cycle))
}

pub fn hull_area(hull: &ConvexHull) -> f64 {
    hull.area()
}

/// Distance from `query` to the nearest of `positions`.
pub fn min_distance(query: Point2, positions: &[Point2]) -> Result<f64> {
    positions
        .iter()
        .map(|p| query.distance(p))
        .min_by(f64::total_cmp)
        .ok_or(Error::EmptyPointSet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(coords: &[(f64, f64)]) -> Vec<Point2> {
        coords.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn unit_square() {
        let hull = convex_hull(&pts(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.)])).unwrap();
        assert_eq!(hull.vertices(), pts(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.)]).as_slice());
        assert_eq!(hull_area(&hull), 1.0);
    }

    #[test]
    fn interior_point_is_dropped() {
        let hull = convex_hull(&pts(&[(0., 0.), (2., 0.), (1., 0.5), (1., 1.)])).unwrap();
        assert_eq!(hull.vertices(), pts(&[(0., 0.), (2., 0.), (1., 1.)]).as_slice());
        assert_eq!(hull.area(), 1.0);
    }

    #[test]
    fn degenerate_hulls() {
        let seg = convex_hull(&pts(&[(0., 0.), (3., 4.)])).unwrap();
        assert_eq!(seg.area(), 0.0);
        assert!(seg.is_degenerate());

        let line = convex_hull(&pts(&[(2., 2.), (0., 0.), (1., 1.), (3., 3.), (1., 1.)])).unwrap();
        assert_eq!(line.vertices(), pts(&[(0., 0.), (3., 3.)]).as_slice());
        assert_eq!(line.area(), 0.0);

        let single = convex_hull(&pts(&[(1., 1.), (1., 1.)])).unwrap();
        assert_eq!(single.vertices().len(), 1);
        assert_eq!(single.area(), 0.0);
    }

    #[test]
    fn right_triangle_area() {
        let hull = convex_hull(&pts(&[(0., 0.), (50., 0.), (0., 50.)])).unwrap();
        assert_eq!(hull.area(), 1250.0);
    }

    #[test]
    fn collinear_boundary_points_excluded() {
        let hull = convex_hull(&pts(&[(0., 0.), (1., 0.), (2., 0.), (2., 2.), (0., 2.), (0., 1.)])).unwrap();
        assert_eq!(hull.vertices().len(), 4);
        assert_eq!(hull.area(), 4.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(convex_hull(&[]), Err(Error::EmptyPointSet)));
        assert!(matches!(
            convex_hull(&pts(&[(0., 0.), (f64::NAN, 1.)])),
            Err(Error::InvalidCoordinate { .. })
        ));
        assert!(matches!(
            convex_hull(&pts(&[(f64::INFINITY, 0.)])),
            Err(Error::InvalidCoordinate { .. })
        ));
        assert!(min_distance(Point2::new(0., 0.), &[]).is_err());
    }

    #[test]
    fn min_distance_examples() {
        let origin = Point2::new(0., 0.);
        assert_eq!(min_distance(origin, &pts(&[(0., 0.), (3., 4.)])).unwrap(), 0.0);
        assert_eq!(min_distance(origin, &pts(&[(3., 4.)])).unwrap(), 5.0);
    }

    #[test]
    fn melkman_on_spiral() {
        // Outward spiral: simple, and only the last turn is on the hull.
        let spiral: Vec<Point2> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.2;
                Point2::new(t * t.cos(), t * t.sin())
            })
            .collect();
        let fast = convex_hull_polyline(&spiral).unwrap();
        let reference = convex_hull(&spiral).unwrap();
        assert_eq!(fast, reference);
    }

    #[test]
    fn melkman_collinear_prefix() {
        let path = pts(&[(0., 0.), (1., 0.), (2., 0.), (2., 1.), (1., 2.), (0., 1.)]);
        assert_eq!(convex_hull_polyline(&path).unwrap(), convex_hull(&path).unwrap());
    }

    fn point_set() -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..60)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn scale_and_translation(points in point_set(), s in 0.1..10.0f64, dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
            let area = convex_hull(&points).unwrap().area();
            let scaled: Vec<_> = points.iter().map(|p| Point2::new(p.x * s, p.y * s)).collect();
            let shifted: Vec<_> = points.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect();
            let tol = 1e-9 * (1.0 + area * s * s);
            prop_assert!((convex_hull(&scaled).unwrap().area() - area * s * s).abs() <= tol);
            prop_assert!((convex_hull(&shifted).unwrap().area() - area).abs() <= 1e-9 * (1.0 + area) + 1e-9 * (dx.abs() + dy.abs()) * 200.0);
        }

        #[test]
        fn idempotent(points in point_set()) {
            let hull = convex_hull(&points).unwrap();
            prop_assert_eq!(convex_hull(hull.vertices()).unwrap(), hull);
        }

        #[test]
        fn order_independent(mut points in point_set()) {
            let hull = convex_hull(&points).unwrap();
            points.reverse();
            prop_assert_eq!(convex_hull(&points).unwrap(), hull);
        }

        #[test]
        fn adding_points_never_increases_min_distance(points in point_set(), extra in point_set(), qx in -100.0..100.0f64, qy in -100.0..100.0f64) {
            let q = Point2::new(qx, qy);
            let before = min_distance(q, &points).unwrap();
            let mut all = points.clone();
            all.extend(extra);
            prop_assert!(min_distance(q, &all).unwrap() <= before);
        }
    }
}

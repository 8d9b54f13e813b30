//! Open-path tours through acquisition points: greedy nearest-neighbour
//! construction followed by 2-opt improvement. The start is fixed and the
//! path does not return to it.

use crate::geometry::Point;

/// Minimum length decrease for a 2-opt move to be accepted.
const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tour {
    pub start: Point,
    pub waypoints: Vec<Point>,
    /// `order[k]` is the input index of `waypoints[k]`.
    pub order: Vec<usize>,
    pub length: f64,
}

impl Tour {
    pub fn empty(start: Point) -> Self {
        Self {
            start,
            waypoints: Vec::new(),
            order: Vec::new(),
            length: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Euclidean length of each segment, starting with `start → waypoints[0]`.
    pub fn segment_lengths(&self) -> Vec<f64> {
        let mut prev = self.start;
        self.waypoints
            .iter()
            .map(|w| {
                let d = prev.distance(w);
                prev = *w;
                d
            })
            .collect()
    }
}

pub fn path_length(start: Point, waypoints: &[Point]) -> f64 {
    let mut prev = start;
    waypoints
        .iter()
        .map(|w| {
            let d = prev.distance(w);
            prev = *w;
            d
        })
        .sum()
}

/// Visits the nearest unvisited point next; ties go to the lowest input index.
pub fn nearest_neighbor_tour(start: Point, points: &[Point]) -> Tour {
    let mut visited = vec![false; points.len()];
    let mut order = Vec::with_capacity(points.len());
    let mut current = start;
    for _ in 0..points.len() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if visited[i] {
                continue;
            }
            let d = current.distance_sq(p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("an unvisited point remains");
        visited[i] = true;
        order.push(i);
        current = points[i];
    }
    let waypoints: Vec<Point> = order.iter().map(|&i| points[i]).collect();
    Tour {
        start,
        length: path_length(start, &waypoints),
        waypoints,
        order,
    }
}

/// Applies first-improvement 2-opt reversals, scanning `(i, j)`
/// lexicographically and restarting after each accepted move, until no move
/// shortens the path.
pub fn two_opt_improve(tour: Tour) -> Tour {
    let Tour {
        start,
        mut waypoints,
        mut order,
        ..
    } = tour;
    let m = waypoints.len();
    'outer: loop {
        for i in 0..m {
            let before = if i == 0 { start } else { waypoints[i - 1] };
            for j in i + 1..m {
                let removed = before.distance(&waypoints[i])
                    + waypoints
                        .get(j + 1)
                        .map_or(0.0, |n| waypoints[j].distance(n));
                let added = before.distance(&waypoints[j])
                    + waypoints
                        .get(j + 1)
                        .map_or(0.0, |n| waypoints[i].distance(n));
                if added < removed - IMPROVEMENT_EPS {
                    waypoints[i..=j].reverse();
                    order[i..=j].reverse();
                    continue 'outer;
                }
            }
        }
        break;
    }
    Tour {
        start,
        length: path_length(start, &waypoints),
        waypoints,
        order,
    }
}

/// Longest run of consecutive waypoints an or-opt move relocates.
const OR_OPT_MAX_SEGMENT: usize = 3;

/// Relocates runs of up to three consecutive waypoints (in either
/// orientation) to the cheapest other gap, first improvement, until no move
/// shortens the path. Catches orders that segment reversals cannot reach,
/// e.g. `a b c → b c a` on three points.
pub fn or_opt_improve(tour: Tour) -> Tour {
    let Tour {
        start,
        mut waypoints,
        mut order,
        ..
    } = tour;
    let m = waypoints.len();
    'outer: loop {
        let current = path_length(start, &waypoints);
        for len in 1..=OR_OPT_MAX_SEGMENT.min(m) {
            for i in 0..=m - len {
                let mut rest_w = waypoints.clone();
                let seg_w: Vec<Point> = rest_w.drain(i..i + len).collect();
                let mut rest_o = order.clone();
                let seg_o: Vec<usize> = rest_o.drain(i..i + len).collect();
                for k in 0..=rest_w.len() {
                    if k == i {
                        continue;
                    }
                    for reversed in [false, true] {
                        let mut cand_w = rest_w.clone();
                        let mut cand_o = rest_o.clone();
                        let (mut sw, mut so) = (seg_w.clone(), seg_o.clone());
                        if reversed {
                            sw.reverse();
                            so.reverse();
                        }
                        cand_w.splice(k..k, sw);
                        cand_o.splice(k..k, so);
                        if path_length(start, &cand_w) < current - IMPROVEMENT_EPS {
                            waypoints = cand_w;
                            order = cand_o;
                            continue 'outer;
                        }
                    }
                }
            }
        }
        break;
    }
    Tour {
        start,
        length: path_length(start, &waypoints),
        waypoints,
        order,
    }
}

/// Nearest-neighbour construction, then 2-opt and or-opt alternately until
/// neither shortens the path.
pub fn plan_tour(start: Point, points: &[Point]) -> Tour {
    let mut tour = two_opt_improve(nearest_neighbor_tour(start, points));
    loop {
        let before = tour.length;
        tour = two_opt_improve(or_opt_improve(tour));
        if tour.length >= before - IMPROVEMENT_EPS {
            return tour;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tour() {
        let t = nearest_neighbor_tour(Point::new(0.2, 0.2), &[]);
        assert!(t.is_empty());
        assert_eq!(t.length, 0.0);
        assert_eq!(two_opt_improve(t.clone()), t);
    }

    #[test]
    fn collinear_in_order() {
        let pts = [
            Point::new(3.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
        ];
        let t = nearest_neighbor_tour(Point::new(0.0, 0.0), &pts);
        assert_eq!(t.order, vec![1, 2, 0]);
        assert!((t.length - 3.0).abs() < 1e-15);
    }

    #[test]
    fn nearest_neighbor_tie_goes_to_lowest_index() {
        let pts = [Point::new(1.0, 0.0), Point::new(-1.0, 0.0)];
        let t = nearest_neighbor_tour(Point::new(0.0, 0.0), &pts);
        assert_eq!(t.order[0], 0);
    }

    #[test]
    fn removes_crossing() {
        // start at (0,0); visiting (1,1) before (0,1) and (1,0) crosses itself
        let start = Point::new(0.0, 0.0);
        let waypoints = vec![
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 0.0),
        ];
        let crossing = Tour {
            start,
            length: path_length(start, &waypoints),
            waypoints,
            order: vec![0, 1, 2],
        };
        let improved = two_opt_improve(crossing.clone());
        assert!(improved.length < crossing.length - 1e-9);
        assert!((improved.length - 3.0).abs() < 1e-12);
        let mut o = improved.order.clone();
        o.sort();
        assert_eq!(o, vec![0, 1, 2]);
    }

    #[test]
    fn optimal_tour_unchanged() {
        let pts = [
            Point::new(0.1, 0.0),
            Point::new(0.2, 0.0),
            Point::new(0.3, 0.1),
        ];
        let t = nearest_neighbor_tour(Point::new(0.0, 0.0), &pts);
        assert_eq!(two_opt_improve(t.clone()), t);
    }

    #[test]
    fn segment_lengths_sum_to_length() {
        let pts = [
            Point::new(0.9, 0.1),
            Point::new(0.3, 0.8),
            Point::new(0.5, 0.5),
        ];
        let t = plan_tour(Point::new(0.0, 0.0), &pts);
        let s: f64 = t.segment_lengths().iter().sum();
        assert!((s - t.length).abs() < 1e-12);
    }
}

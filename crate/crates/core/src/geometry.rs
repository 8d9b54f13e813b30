//! Discretized environment, nearest-site Voronoi partitions, Lloyd updates and
//! the coverage loss / regret metrics.
//!
//! Every integral over the domain is a uniform-weight Riemann sum over the
//! grid's query points. Grid points sit at cell centres (midpoint rule), so a
//! 21 × 21 grid integrates smooth quadratics on the unit square to well under
//! one percent.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masses at or below this are treated as zero when computing centroids.
pub const MASS_EPSILON: f64 = 1e-9;

/// Slack used when testing whether a point lies inside the domain.
const DOMAIN_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn distance_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self::unit()
    }
}

impl Bounds {
    pub const fn unit() -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 1.0,
            y_max: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min - DOMAIN_TOLERANCE
            && p.x <= self.x_max + DOMAIN_TOLERANCE
            && p.y >= self.y_min - DOMAIN_TOLERANCE
            && p.y <= self.y_max + DOMAIN_TOLERANCE
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(
            p.x.clamp(self.x_min, self.x_max),
            p.y.clamp(self.y_min, self.y_max),
        )
    }

    pub fn ensure_contains(&self, p: Point) -> Result<()> {
        if self.contains(&p) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(p))
        }
    }
}

/// Regular `nx × ny` lattice of query points over a rectangle.
///
/// Points are stored row-major: index `iy * nx + ix`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEnvironment {
    bounds: Bounds,
    nx: usize,
    ny: usize,
    points: Vec<Point>,
    cell_weight: f64,
}

impl GridEnvironment {
    pub fn new(bounds: Bounds, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 points per axis, got {nx} x {ny}"
            )));
        }
        if !bounds.is_valid() {
            return Err(Error::Config(format!("degenerate bounds {bounds:?}")));
        }
        let dx = bounds.width() / nx as f64;
        let dy = bounds.height() / ny as f64;
        let points = (0..ny)
            .flat_map(|iy| {
                (0..nx).map(move |ix| {
                    Point::new(
                        bounds.x_min + (ix as f64 + 0.5) * dx,
                        bounds.y_min + (iy as f64 + 0.5) * dy,
                    )
                })
            })
            .collect();
        Ok(Self {
            bounds,
            nx,
            ny,
            points,
            cell_weight: bounds.area() / (nx * ny) as f64,
        })
    }

    /// The unit square at the given resolution.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        Self::new(Bounds::unit(), nx, ny)
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn cell_weight(&self) -> f64 {
        self.cell_weight
    }

    /// Writes one value per grid point as `ny` rows of `nx` comma-separated
    /// values, first row at `y_min`.
    pub fn write_field_csv(&self, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
        assert_eq!(values.len(), self.len(), "field length must match the grid");
        let mut out = String::with_capacity(values.len() * 24);
        for row in values.chunks(self.nx) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v:.17e}").unwrap();
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Nonnegative density sampled at every grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    values: Vec<f64>,
}

impl DensityField {
    /// Builds a field, clamping negative (or NaN) entries to zero.
    pub fn from_values(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            if !(*v > 0.0) {
                *v = 0.0;
            }
        }
        Self { values }
    }

    pub fn uniform(grid: &GridEnvironment, value: f64) -> Self {
        Self::from_values(vec![value; grid.len()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Isotropic Gaussian bump `v² exp(-‖x - c‖² / 2l²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestDensity {
    pub variance: f64,
    pub lengthscale_sq: f64,
    pub center: Point,
}

impl TestDensity {
    pub fn value_at(&self, p: &Point) -> f64 {
        self.variance * (-p.distance_sq(&self.center) / (2.0 * self.lengthscale_sq)).exp()
    }

    pub fn is_valid(&self) -> bool {
        self.variance > 0.0 && self.lengthscale_sq > 0.0 && self.variance.is_finite()
    }
}

pub fn eval_test_density(density: &TestDensity, grid: &GridEnvironment) -> DensityField {
    DensityField::from_values(grid.points().iter().map(|p| density.value_at(p)).collect())
}

/// Agent positions plus the path length each agent has travelled so far.
#[derive(Clone, Debug, PartialEq)]
pub struct TeamConfiguration {
    positions: Vec<Point>,
    travel: Vec<f64>,
}

impl TeamConfiguration {
    pub fn new(positions: Vec<Point>, bounds: &Bounds) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Config("a team needs at least one agent".into()));
        }
        for p in &positions {
            bounds.ensure_contains(*p)?;
        }
        let travel = vec![0.0; positions.len()];
        Ok(Self { positions, travel })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn position(&self, agent: usize) -> Point {
        self.positions[agent]
    }

    pub fn travel(&self) -> &[f64] {
        &self.travel
    }

    pub fn mean_travel(&self) -> f64 {
        self.travel.iter().sum::<f64>() / self.travel.len() as f64
    }

    /// Moves `agent` in a straight line to `target`, returning the distance.
    pub fn move_agent(&mut self, agent: usize, target: Point) -> f64 {
        let d = self.positions[agent].distance(&target);
        self.positions[agent] = target;
        self.travel[agent] += d;
        d
    }
}

/// Ownership of grid points by agents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    owner: Vec<usize>,
    agents: usize,
}

impl Partition {
    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Grid indices owned by `agent`, ascending.
    pub fn cell(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner
            .iter()
            .enumerate()
            .filter(move |&(_, &o)| o == agent)
            .map(|(j, _)| j)
    }

    /// Grid indices of every cell, ascending within each cell.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.agents];
        for (j, &o) in self.owner.iter().enumerate() {
            cells[o].push(j);
        }
        cells
    }
}

/// Index of the site closest to `q`; ties go to the lower index.
pub fn nearest_site(q: &Point, sites: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = q.distance_sq(&sites[0]);
    for (i, s) in sites.iter().enumerate().skip(1) {
        let d = q.distance_sq(s);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Labels each grid point with its nearest site; ties go to the lower index.
pub fn voronoi_partition(grid: &GridEnvironment, sites: &[Point]) -> Partition {
    assert!(
        !sites.is_empty(),
        "Voronoi partition needs at least one site"
    );
    let owner = grid
        .points()
        .iter()
        .map(|q| nearest_site(q, sites))
        .collect();
    Partition {
        owner,
        agents: sites.len(),
    }
}

/// Mass and centroid of one cell.
///
/// Zero-mass cells fall back to the unweighted mean of their points; empty
/// cells fall back to `fallback` (normally the owning agent's position).
pub fn mass_and_centroid(
    grid: &GridEnvironment,
    partition: &Partition,
    cell_index: usize,
    density: &DensityField,
    fallback: Point,
) -> (f64, Point) {
    let w = grid.cell_weight();
    let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let (mut count, mut gx, mut gy) = (0usize, 0.0, 0.0);
    for j in partition.cell(cell_index) {
        let q = grid.point(j);
        let m = density.values()[j] * w;
        mass += m;
        sx += q.x * m;
        sy += q.y * m;
        count += 1;
        gx += q.x;
        gy += q.y;
    }
    if count == 0 {
        return (0.0, fallback);
    }
    if mass > MASS_EPSILON {
        (mass, Point::new(sx / mass, sy / mass))
    } else {
        (mass, Point::new(gx / count as f64, gy / count as f64))
    }
}

/// Centroids of every cell, with `fallback[i]` used for empty cells.
pub fn centroids(
    grid: &GridEnvironment,
    partition: &Partition,
    density: &DensityField,
    fallback: &[Point],
) -> Vec<Point> {
    (0..partition.agents())
        .map(|i| mass_and_centroid(grid, partition, i, density, fallback[i]).1)
        .collect()
}

/// One Lloyd update: every agent moves to the centroid of its Voronoi cell.
pub fn lloyd_step(
    grid: &GridEnvironment,
    config: &TeamConfiguration,
    density: &DensityField,
) -> TeamConfiguration {
    let partition = voronoi_partition(grid, config.positions());
    let targets = centroids(grid, &partition, density, config.positions());
    let mut next = config.clone();
    for (i, c) in targets.into_iter().enumerate() {
        next.move_agent(i, c);
    }
    next
}

/// `Σ_i Σ_{q ∈ p_i} ‖q − η_i‖² φ(q) w`.
pub fn coverage_loss(
    grid: &GridEnvironment,
    positions: &[Point],
    partition: &Partition,
    density: &DensityField,
) -> f64 {
    let w = grid.cell_weight();
    grid.points()
        .iter()
        .zip(partition.owner())
        .zip(density.values())
        .map(|((q, &o), &phi)| q.distance_sq(&positions[o]) * phi)
        .sum::<f64>()
        * w
}

/// Gap between the loss of `positions` and the loss of the true centroids of
/// the Voronoi partition those positions generate.
pub fn instantaneous_regret(
    grid: &GridEnvironment,
    positions: &[Point],
    true_density: &DensityField,
) -> f64 {
    let partition = voronoi_partition(grid, positions);
    let c = centroids(grid, &partition, true_density, positions);
    coverage_loss(grid, positions, &partition, true_density)
        - coverage_loss(grid, &c, &partition, true_density)
}

/// Grid index of the largest value of `field` inside a cell (lowest index on ties).
pub fn argmax_in_cell(partition: &Partition, cell_index: usize, field: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in partition.cell(cell_index) {
        match best {
            Some((_, v)) if field[j] <= v => {}
            _ => best = Some((j, field[j])),
        }
    }
    best.map(|(j, _)| j).ok_or(Error::EmptyCell(cell_index))
}

pub fn argmax_variance_in_cell(
    grid: &GridEnvironment,
    partition: &Partition,
    cell_index: usize,
    variance: &[f64],
) -> Result<Point> {
    argmax_in_cell(partition, cell_index, variance).map(|j| grid.point(j))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> GridEnvironment {
        GridEnvironment::unit_square(n, n).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn grid_layout() {
        let g = unit(21);
        assert_eq!(g.len(), 441);
        assert!(close(g.cell_weight(), 1.0 / 441.0, 1e-15));
        assert!(g.points().iter().all(|p| g.bounds().contains(p)));
        // row-major, x varies fastest
        assert!(g.point(1).x > g.point(0).x);
        assert_eq!(g.point(1).y, g.point(0).y);
        assert!(g.point(21).y > g.point(0).y);
        assert!(GridEnvironment::unit_square(1, 5).is_err());
    }

    #[test]
    fn single_site_owns_everything() {
        let g = unit(11);
        let p = voronoi_partition(&g, &[Point::new(0.3, 0.9)]);
        assert!(p.owner().iter().all(|&o| o == 0));
    }

    #[test]
    fn bisector_split() {
        let g = unit(21);
        let p = voronoi_partition(&g, &[Point::new(0.25, 0.5), Point::new(0.75, 0.5)]);
        for (q, &o) in g.points().iter().zip(p.owner()) {
            if q.x < 0.5 - 1e-12 {
                assert_eq!(o, 0);
            } else if q.x > 0.5 + 1e-12 {
                assert_eq!(o, 1);
            }
        }
    }

    #[test]
    fn coincident_sites_go_to_lower_index() {
        let g = unit(7);
        let s = Point::new(0.4, 0.4);
        let p = voronoi_partition(&g, &[s, s, Point::new(0.95, 0.95)]);
        assert_eq!(p.cell(1).count(), 0);
        assert!(p.cell(0).count() > 0);
    }

    #[test]
    fn uniform_centroid_is_center() {
        let g = unit(21);
        let p = voronoi_partition(&g, &[Point::new(0.1, 0.1)]);
        let (m, c) =
            mass_and_centroid(&g, &p, 0, &DensityField::uniform(&g, 1.0), Point::default());
        assert!(close(m, 1.0, 1e-12));
        assert!(close(c.x, 0.5, 1e-12) && close(c.y, 0.5, 1e-12));
    }

    #[test]
    fn point_mass_centroid() {
        let g = unit(9);
        let mut v = vec![0.0; g.len()];
        v[40] = 1.0;
        let p = voronoi_partition(&g, &[Point::new(0.5, 0.5)]);
        let (_, c) = mass_and_centroid(&g, &p, 0, &DensityField::from_values(v), Point::default());
        assert_eq!(c, g.point(40));
    }

    #[test]
    fn weighted_centroid_three_by_three() {
        let g = unit(3);
        let values: Vec<f64> = (1..=9).map(f64::from).collect();
        // brute force over the nine points
        let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (q, v) in g.points().iter().zip(&values) {
            m += v;
            sx += q.x * v;
            sy += q.y * v;
        }
        let p = voronoi_partition(&g, &[Point::new(0.5, 0.5)]);
        let (mass, c) = mass_and_centroid(
            &g,
            &p,
            0,
            &DensityField::from_values(values),
            Point::default(),
        );
        assert!(close(mass, m / 9.0, 1e-14));
        assert!(close(c.x, sx / m, 1e-14));
        assert!(close(c.y, sy / m, 1e-14));
        // rows weigh more going up: y centroid above middle, x slightly right
        assert!(c.y > 0.5 && c.x > 0.5);
    }

    #[test]
    fn zero_mass_and_empty_fallbacks() {
        let g = unit(5);
        let sites = [Point::new(0.1, 0.1), Point::new(0.1, 0.1)];
        let p = voronoi_partition(&g, &sites);
        let zero = DensityField::uniform(&g, 0.0);
        let (m, c) = mass_and_centroid(&g, &p, 0, &zero, sites[0]);
        assert_eq!(m, 0.0);
        assert!(close(c.x, 0.5, 1e-12) && close(c.y, 0.5, 1e-12));
        let fb = Point::new(0.7, 0.2);
        assert_eq!(mass_and_centroid(&g, &p, 1, &zero, fb), (0.0, fb));
    }

    #[test]
    fn negative_density_is_clamped() {
        let f = DensityField::from_values(vec![-1.0, 2.0, f64::NAN]);
        assert_eq!(f.values(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn lloyd_fixed_point_and_single_agent() {
        let g = unit(21);
        let uniform = DensityField::uniform(&g, 1.0);
        let cfg = TeamConfiguration::new(vec![Point::new(0.2, 0.9)], g.bounds()).unwrap();
        let next = lloyd_step(&g, &cfg, &uniform);
        assert!(close(next.position(0).x, 0.5, 1e-12));
        assert!(close(next.position(0).y, 0.5, 1e-12));
        let again = lloyd_step(&g, &next, &uniform);
        assert!(close(again.travel()[0], next.travel()[0], 1e-12));
    }

    #[test]
    fn loss_closed_forms() {
        let g = unit(21);
        let uniform = DensityField::uniform(&g, 1.0);
        let center = [Point::new(0.5, 0.5)];
        let p = voronoi_partition(&g, &center);
        let l = coverage_loss(&g, &center, &p, &uniform);
        assert!((l - 1.0 / 6.0).abs() / (1.0 / 6.0) < 0.02, "loss {l}");
        assert_eq!(
            coverage_loss(&g, &center, &p, &DensityField::uniform(&g, 0.0)),
            0.0
        );

        let r = instantaneous_regret(&g, &[Point::new(0.0, 0.0)], &uniform);
        assert!((r - 0.5).abs() / 0.5 < 0.02, "regret {r}");
        assert!(instantaneous_regret(&g, &center, &uniform).abs() < 1e-12);
    }

    #[test]
    fn moving_off_centroid_increases_loss() {
        let g = unit(21);
        let phi = eval_test_density(
            &TestDensity {
                variance: 10.0,
                lengthscale_sq: 0.05,
                center: Point::new(0.75, 0.75),
            },
            &g,
        );
        let sites = vec![
            Point::new(0.2, 0.2),
            Point::new(0.8, 0.3),
            Point::new(0.5, 0.8),
        ];
        let p = voronoi_partition(&g, &sites);
        let c = centroids(&g, &p, &phi, &sites);
        let base = coverage_loss(&g, &c, &p, &phi);
        let mut moved = c.clone();
        moved[1].x += 0.05;
        assert!(coverage_loss(&g, &moved, &p, &phi) > base);
    }

    #[test]
    fn argmax_tie_break_and_spike() {
        let g = unit(6);
        let p = voronoi_partition(&g, &[Point::new(0.1, 0.1), Point::new(0.9, 0.9)]);
        let flat = vec![1.0; g.len()];
        let first = p.cell(1).next().unwrap();
        assert_eq!(argmax_in_cell(&p, 1, &flat).unwrap(), first);
        let mut spiked = flat.clone();
        let target = p.cell(1).last().unwrap();
        spiked[target] = 2.0;
        assert_eq!(
            argmax_variance_in_cell(&g, &p, 1, &spiked).unwrap(),
            g.point(target)
        );

        let s = Point::new(0.5, 0.5);
        let empty = voronoi_partition(&g, &[s, s]);
        assert!(matches!(
            argmax_in_cell(&empty, 1, &flat),
            Err(Error::EmptyCell(1))
        ));
    }

    #[test]
    fn test_density_peaks() {
        let high = TestDensity {
            variance: 10.0,
            lengthscale_sq: 0.05,
            center: Point::new(0.75, 0.75),
        };
        let low = TestDensity {
            variance: 5.0,
            lengthscale_sq: 0.2,
            center: Point::new(0.5, 0.5),
        };
        assert_eq!(high.value_at(&Point::new(0.75, 0.75)), 10.0);
        assert_eq!(low.value_at(&Point::new(0.5, 0.5)), 5.0);
        for d in [0.01, 0.1, 0.3] {
            let up = high.value_at(&Point::new(0.75, 0.75 + d));
            let down = high.value_at(&Point::new(0.75, 0.75 - d));
            assert!((up - down).abs() < 1e-12 * up, "{up} vs {down}");
        }
    }

    #[test]
    fn field_csv_is_row_major() {
        let g = unit(3);
        let values: Vec<f64> = (0..9).map(f64::from).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        g.write_field_csv(&values, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], vec![3.0, 4.0, 5.0]);
    }
}

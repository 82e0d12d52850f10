//! Radar layout, bistatic delays, separability and search grids.
//!
//! All positions are planar, in meters. Delays are in seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Transmitter and receiver positions of a distributed MIMO radar.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarLayout {
    tx: Vec<Point>,
    rx: Vec<Point>,
    c: f64,
}

impl RadarLayout {
    pub fn new(tx: Vec<Point>, rx: Vec<Point>, c: f64) -> Result<Self> {
        if tx.is_empty() || rx.is_empty() {
            return Err(Error::Usage(
                "layout needs at least one transmitter and one receiver".into(),
            ));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Usage(format!("propagation speed must be positive, got {c}")));
        }
        if tx.iter().chain(rx.iter()).any(|p| !p.is_finite()) {
            return Err(Error::Usage("layout positions must be finite".into()));
        }
        Ok(Self { tx, rx, c })
    }

    /// Number of transmitters (N).
    pub fn n_tx(&self) -> usize {
        self.tx.len()
    }

    /// Number of receivers (P).
    pub fn n_rx(&self) -> usize {
        self.rx.len()
    }

    pub fn tx(&self) -> &[Point] {
        &self.tx
    }

    pub fn rx(&self) -> &[Point] {
        &self.rx
    }

    pub fn speed(&self) -> f64 {
        self.c
    }

    /// Propagation time transmitter `n` -> `x` -> receiver `p`.
    pub fn bistatic_delay(&self, p: usize, n: usize, x: &Point) -> Result<f64> {
        let rx = self
            .rx
            .get(p)
            .ok_or_else(|| Error::Usage(format!("receiver index {p} out of range")))?;
        let tx = self
            .tx
            .get(n)
            .ok_or_else(|| Error::Usage(format!("transmitter index {n} out of range")))?;
        Ok((rx.distance(x) + tx.distance(x)) / self.c)
    }

    /// Unchecked variant for hot loops; indices must be valid.
    #[inline]
    pub(crate) fn delay(&self, p: usize, n: usize, x: &Point) -> f64 {
        (self.rx[p].distance(x) + self.tx[n].distance(x)) / self.c
    }

    /// Largest delay gap over all (receiver, transmitter) pairs.
    pub fn max_delay_gap(&self, a: &Point, b: &Point) -> f64 {
        let mut gap = 0.0f64;
        for p in 0..self.n_rx() {
            for n in 0..self.n_tx() {
                gap = gap.max((self.delay(p, n, a) - self.delay(p, n, b)).abs());
            }
        }
        gap
    }

    /// True iff at least one pair resolves the two echoes, i.e. the largest
    /// delay gap strictly exceeds `1/W`.
    pub fn are_separable(&self, a: &Point, b: &Point, bandwidth_hz: f64) -> bool {
        self.max_delay_gap(a, b) > 1.0 / bandwidth_hz
    }

    /// `(tau_min, tau_max)` over every pair and every point of `grid`.
    pub fn delay_window(&self, grid: &SearchGrid) -> Result<(f64, f64)> {
        if grid.is_empty() {
            return Err(Error::Usage("delay window of an empty grid".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for g in grid.points() {
            for p in 0..self.n_rx() {
                for n in 0..self.n_tx() {
                    let d = self.delay(p, n, g);
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
            }
        }
        Ok((lo, hi))
    }
}

/// Axis-aligned inspected region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Steps that fit in `[lo, hi]` at pitch `h`, tolerant to rounding of `hi - lo`.
fn lattice_count(lo: f64, hi: f64, h: f64) -> usize {
    ((hi - lo) / h + 1e-9).floor() as usize + 1
}

/// Coarse candidate grid with an activity mask (the current search set).
#[derive(Clone, Debug, PartialEq)]
pub struct SearchGrid {
    points: Vec<Point>,
    spacing: f64,
    nx: usize,
    ny: usize,
    active: Vec<bool>,
}

impl SearchGrid {
    /// Row-major rectangular grid: index = iy * nx + ix.
    pub fn rectangular(bounds: Bounds, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::Usage(format!("grid spacing must be positive, got {spacing}")));
        }
        if !(bounds.x_max >= bounds.x_min && bounds.y_max >= bounds.y_min) {
            return Err(Error::Usage("grid bounds are inverted".into()));
        }
        let nx = lattice_count(bounds.x_min, bounds.x_max, spacing);
        let ny = lattice_count(bounds.y_min, bounds.y_max, spacing);
        let points = (0..ny)
            .flat_map(|iy| {
                (0..nx).map(move |ix| {
                    Point::new(
                        bounds.x_min + ix as f64 * spacing,
                        bounds.y_min + iy as f64 * spacing,
                    )
                })
            })
            .collect::<Vec<_>>();
        let active = vec![true; points.len()];
        Ok(Self { points, spacing, nx, ny, active })
    }

    /// Grid from an explicit point list (used by tests and small examples).
    pub fn from_points(points: Vec<Point>, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::Usage(format!("grid spacing must be positive, got {spacing}")));
        }
        for (i, a) in points.iter().enumerate() {
            if points[..i].iter().any(|b| b == a) {
                return Err(Error::Usage(format!("duplicate grid point {a:?}")));
            }
        }
        let n = points.len();
        Ok(Self { points, spacing, nx: n, ny: 1, active: vec![true; n] })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// `(nx, ny)` for rectangular grids.
    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active[index]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i)
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Index of the grid point closest to `x` (lowest index on ties).
    pub fn nearest_index(&self, x: &Point) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in self.points.iter().enumerate() {
            let d = g.distance(x);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Keeps a grid point only if, for every detection, some pair sees a delay
/// gap strictly larger than `1/W`. Empty `detections` leaves the mask as is.
pub fn prune_grid(
    grid: &SearchGrid,
    layout: &RadarLayout,
    detections: &[Point],
    bandwidth_hz: f64,
) -> SearchGrid {
    let mut out = grid.clone();
    if detections.is_empty() {
        return out;
    }
    let resolution = 1.0 / bandwidth_hz;
    for (g, active) in out.points.iter().zip(out.active.iter_mut()) {
        if !*active {
            continue;
        }
        let closest = detections
            .iter()
            .map(|d| layout.max_delay_gap(g, d))
            .fold(f64::INFINITY, f64::min);
        *active = closest > resolution;
    }
    out
}

/// Fine lattice over the inspected region, never materialized in full.
#[derive(Clone, Debug, PartialEq)]
pub struct FineGrid {
    bounds: Bounds,
    spacing: f64,
}

impl FineGrid {
    /// `spacing` must be below a tenth of the coarse pitch.
    pub fn new(bounds: Bounds, spacing: f64, coarse_spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::Usage(format!("fine spacing must be positive, got {spacing}")));
        }
        if spacing >= coarse_spacing / 10.0 {
            return Err(Error::Usage(format!(
                "fine spacing {spacing} m must be below a tenth of the coarse spacing {coarse_spacing} m"
            )));
        }
        Ok(Self { bounds, spacing })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Lattice points within Euclidean distance `radius` (inclusive) of
    /// `center` and inside the region. The lattice is anchored at `center`,
    /// which is itself a fine-grid point whenever it lies on the coarse grid.
    ///
    /// When the full ball holds more than `max_points` points, the lattice
    /// step is widened to the smallest integer multiple of the fine spacing
    /// that brings the count under the cap.
    pub fn ball(&self, center: &Point, radius: f64, max_points: usize) -> Vec<Point> {
        let estimate = std::f64::consts::PI * radius * radius / max_points.max(1) as f64;
        let mut stride = ((estimate.sqrt() / self.spacing).floor() as usize).max(1);
        loop {
            let pts = self.ball_with_step(center, radius, self.spacing * stride as f64);
            if pts.len() <= max_points || max_points == 0 {
                return pts;
            }
            stride += 1;
        }
    }

    fn ball_with_step(&self, center: &Point, radius: f64, step: f64) -> Vec<Point> {
        let reach = (radius / step + 1e-9).floor() as i64;
        let mut pts = Vec::new();
        for j in -reach..=reach {
            for i in -reach..=reach {
                let (dx, dy) = (i as f64 * step, j as f64 * step);
                if dx.hypot(dy) > radius {
                    continue;
                }
                let g = Point::new(center.x + dx, center.y + dy);
                if self.bounds.contains(&g) {
                    pts.push(g);
                }
            }
        }
        pts
    }
}

//! Piecewise-linear approximations and convex relaxations.
//!
//! * [`fit_pwl_1d_uniform`]: least-squares continuous PWL on equally spaced breakpoints.
//! * [`fit_pwl_1d_optimal`]: fewest pieces meeting an absolute error bound, with
//!   breakpoints restricted to sample abscissae.
//! * [`triangulate_grid_2d`]: grid-sampled bivariate surface split into triangles.
//! * [`McCormickEnvelope`]: the four-cut relaxation of `w = Q * h` over a box.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("no fit within tolerance using at most {cap} pieces; minimum achievable is {minimal}")]
    Infeasible { cap: usize, minimal: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sampling failed at ({x}, {y})")]
    Sampling { x: f64, y: f64 },
}

/// Continuous piecewise-linear function given by its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct PwlCurve1D {
    breakpoints: Vec<(f64, f64)>,
}

impl TryFrom<Vec<[f64; 2]>> for PwlCurve1D {
    type Error = FitError;

    fn try_from(points: Vec<[f64; 2]>) -> Result<Self, FitError> {
        PwlCurve1D::new(points.into_iter().map(|[x, y]| (x, y)).collect())
    }
}

impl From<PwlCurve1D> for Vec<[f64; 2]> {
    fn from(curve: PwlCurve1D) -> Self {
        curve.breakpoints.into_iter().map(|(x, y)| [x, y]).collect()
    }
}

impl PwlCurve1D {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self, FitError> {
        if breakpoints.len() < 2 {
            return Err(FitError::InvalidInput("a PWL curve needs at least 2 breakpoints".into()));
        }
        if breakpoints.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(FitError::InvalidInput("non-finite breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(FitError::InvalidInput("breakpoint abscissae must be strictly increasing".into()));
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn n_pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0].0, self.breakpoints[self.breakpoints.len() - 1].0)
    }

    /// Linear interpolation; constant extrapolation outside the domain.
    pub fn evaluate(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        let n = b.len();
        if x <= b[0].0 {
            return b[0].1;
        }
        if x >= b[n - 1].0 {
            return b[n - 1].1;
        }
        let k = b.partition_point(|p| p.0 <= x);
        let (x0, y0) = b[k - 1];
        let (x1, y1) = b[k];
        if x == x0 {
            return y0;
        }
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Smallest and largest ordinate.
    pub fn range(&self) -> (f64, f64) {
        self.breakpoints
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| (lo.min(*y), hi.max(*y)))
    }
}

/// Triangulated surface on a rectangular grid.
///
/// Every cell `[x_i, x_{i+1}] x [y_j, y_{j+1}]` is cut along the diagonal from
/// its lower-left to its upper-right corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlSurface2D {
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    /// `values[i][j] = f(x_grid[i], y_grid[j])`.
    pub values: Vec<Vec<f64>>,
}

/// Grid vertex `(i, j)`.
pub type Vertex = (usize, usize);

impl PwlSurface2D {
    pub fn domain(&self) -> ((f64, f64), (f64, f64)) {
        (
            (self.x_grid[0], self.x_grid[self.x_grid.len() - 1]),
            (self.y_grid[0], self.y_grid[self.y_grid.len() - 1]),
        )
    }

    pub fn value(&self, v: Vertex) -> f64 {
        self.values[v.0][v.1]
    }

    /// All triangles, two per cell: lower `(i,j),(i+1,j),(i+1,j+1)` then upper
    /// `(i,j),(i,j+1),(i+1,j+1)`.
    pub fn triangles(&self) -> Vec<[Vertex; 3]> {
        let mut out = Vec::with_capacity(2 * (self.x_grid.len() - 1) * (self.y_grid.len() - 1));
        for i in 0..self.x_grid.len() - 1 {
            for j in 0..self.y_grid.len() - 1 {
                out.push([(i, j), (i + 1, j), (i + 1, j + 1)]);
                out.push([(i, j), (i, j + 1), (i + 1, j + 1)]);
            }
        }
        out
    }

    /// Containing triangle and barycentric weights of `(x, y)`, clamped to the
    /// grid.
    pub fn locate(&self, x: f64, y: f64) -> [(Vertex, f64); 3] {
        let (i, s) = crate::domain::bracket(&self.x_grid, x);
        let (j, u) = crate::domain::bracket(&self.y_grid, y);
        if s >= u {
            [((i, j), 1.0 - s), ((i + 1, j), s - u), ((i + 1, j + 1), u)]
        } else {
            [((i, j), 1.0 - u), ((i, j + 1), u - s), ((i + 1, j + 1), s)]
        }
    }

    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        self.locate(x, y).iter().map(|(v, w)| w * self.value(*v)).sum()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let ((x0, x1), (y0, y1)) = self.domain();
        let tx = 1e-9 * (1.0 + x0.abs().max(x1.abs()));
        let ty = 1e-9 * (1.0 + y0.abs().max(y1.abs()));
        x >= x0 - tx && x <= x1 + tx && y >= y0 - ty && y <= y1 + ty
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }
}

/// Error tolerance for [`fit_pwl_1d_optimal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// Maximum absolute error over the samples.
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pieces: Option<usize>,
}

impl FitSpec {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, max_pieces: None }
    }
}

/// Numerical slack added to every error bound in the optimal fit.
pub fn fit_slack(samples: &[(f64, f64)]) -> f64 {
    let scale = samples.iter().map(|(_, y)| y.abs()).fold(1.0, f64::max);
    1e-9 * scale
}

fn check_samples(samples: &[(f64, f64)]) -> Result<(), FitError> {
    if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(FitError::InvalidInput("non-finite sample".into()));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(FitError::InvalidInput("samples must be sorted by strictly increasing x".into()));
    }
    Ok(())
}

/// Least-squares continuous PWL with `n_pieces` equal-width pieces spanning the
/// sample range.
pub fn fit_pwl_1d_uniform(samples: &[(f64, f64)], n_pieces: usize) -> Result<PwlCurve1D, FitError> {
    if n_pieces == 0 {
        return Err(FitError::InvalidInput("n_pieces must be >= 1".into()));
    }
    if samples.len() < 2 || samples.len() < n_pieces + 1 {
        return Err(FitError::Degenerate(format!(
            "{} samples cannot determine {} breakpoints",
            samples.len(),
            n_pieces + 1
        )));
    }
    check_samples(samples)?;
    let lo = samples[0].0;
    let hi = samples[samples.len() - 1].0;
    let knots: Vec<f64> = (0..=n_pieces)
        .map(|k| if k == n_pieces { hi } else { lo + (hi - lo) * k as f64 / n_pieces as f64 })
        .collect();
    let m = samples.len();
    let mut design = DMatrix::<f64>::zeros(m, n_pieces + 1);
    for (row, (x, _)) in samples.iter().enumerate() {
        let k = knots.partition_point(|t| t <= x).clamp(1, n_pieces) - 1;
        let s = (x - knots[k]) / (knots[k + 1] - knots[k]);
        design[(row, k)] += 1.0 - s;
        design[(row, k + 1)] += s;
    }
    let rhs = DVector::from_iterator(m, samples.iter().map(|(_, y)| *y));
    let svd = design.svd(true, true);
    let coeffs = svd.solve(&rhs, 1e-12).map_err(|e| FitError::Degenerate(e.to_string()))?;
    PwlCurve1D::new(knots.into_iter().zip(coeffs.iter().copied()).collect())
}

/// Best uniform-norm line through the samples, by discrete Remez exchange on a
/// three-point reference. Returns `(intercept, slope, max_abs_error)`.
pub fn minimax_line(samples: &[(f64, f64)]) -> Result<(f64, f64, f64), FitError> {
    check_samples(samples)?;
    match samples.len() {
        0 => return Err(FitError::Degenerate("no samples".into())),
        1 => return Ok((samples[0].1, 0.0, 0.0)),
        2 => {
            let (x0, y0) = samples[0];
            let (x1, y1) = samples[1];
            let slope = (y1 - y0) / (x1 - x0);
            return Ok((y0 - slope * x0, slope, 0.0));
        }
        _ => {}
    }
    let n = samples.len();
    let mut reference = [0, n / 2, n - 1];
    let mut best = (0.0, 0.0, f64::INFINITY);
    for _ in 0..(4 * n + 20) {
        let [i, j, k] = reference;
        let (xi, yi) = samples[i];
        let (xj, yj) = samples[j];
        let (xk, yk) = samples[k];
        // y - (a + b x) = ±e with alternating signs on the reference
        let m = nalgebra::Matrix3::new(1.0, xi, 1.0, 1.0, xj, -1.0, 1.0, xk, 1.0);
        let sol = match m.lu().solve(&nalgebra::Vector3::new(yi, yj, yk)) {
            Some(s) => s,
            None => break,
        };
        let (a, b, level) = (sol[0], sol[1], sol[2].abs());
        let resid = |p: &(f64, f64)| p.1 - (a + b * p.0);
        let (worst, worst_err) = samples
            .iter()
            .enumerate()
            .map(|(idx, p)| (idx, resid(p)))
            .fold((0, 0.0f64), |acc, (idx, r)| if r.abs() > acc.1.abs() { (idx, r) } else { acc });
        let max_err = worst_err.abs();
        if max_err < best.2 {
            best = (a, b, max_err);
        }
        if max_err <= level * (1.0 + 1e-12) + 1e-15 || reference.contains(&worst) {
            break;
        }
        let sign = |idx: usize| resid(&samples[idx]).signum();
        let s = worst_err.signum();
        reference = if worst < i {
            if sign(i) == s { [worst, j, k] } else { [worst, i, j] }
        } else if worst < j {
            if sign(i) == s { [worst, j, k] } else { [i, worst, k] }
        } else if worst < k {
            if sign(j) == s { [i, worst, k] } else { [i, j, worst] }
        } else if sign(k) == s {
            [i, j, worst]
        } else {
            [j, k, worst]
        };
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Interval {
    lo: f64,
    hi: f64,
}

fn merge_intervals(mut v: Vec<Interval>) -> Vec<Interval> {
    v.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut out: Vec<Interval> = Vec::with_capacity(v.len());
    for iv in v {
        match out.last_mut() {
            Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
            _ => out.push(iv),
        }
    }
    out
}

/// Clips a convex polygon (list of vertices) by `alpha * u + beta * v <= gamma`.
fn clip(poly: &[(f64, f64)], alpha: f64, beta: f64, gamma: f64) -> Vec<(f64, f64)> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    let f = |p: (f64, f64)| alpha * p.0 + beta * p.1 - gamma;
    for idx in 0..n {
        let cur = poly[idx];
        let next = poly[(idx + 1) % n];
        let (fc, fn_) = (f(cur), f(next));
        if fc <= 0.0 {
            out.push(cur);
        }
        if (fc < 0.0 && fn_ > 0.0) || (fc > 0.0 && fn_ < 0.0) {
            let t = fc / (fc - fn_);
            out.push((cur.0 + t * (next.0 - cur.0), cur.1 + t * (next.1 - cur.1)));
        }
    }
    out
}

/// Segment feasibility for the optimal fit, between sample indices `a < b`.
struct SegmentCheck<'a> {
    samples: &'a [(f64, f64)],
    eps: f64,
}

impl SegmentCheck<'_> {
    /// Range of end ordinates `y_b` reachable from start ordinates `y_a` in
    /// `start`, keeping every sample in `a..=b` within `eps` of the segment.
    fn project(&self, a: usize, b: usize, start: Interval) -> Option<Interval> {
        let (xa, ya) = self.samples[a];
        let (xb, yb) = self.samples[b];
        let lo_a = start.lo.max(ya - self.eps);
        let hi_a = start.hi.min(ya + self.eps);
        if lo_a > hi_a {
            return None;
        }
        let mut poly = vec![(lo_a, yb - self.eps), (hi_a, yb - self.eps), (hi_a, yb + self.eps), (lo_a, yb + self.eps)];
        for &(x, y) in &self.samples[a + 1..b] {
            let lam = (x - xa) / (xb - xa);
            poly = clip(&poly, 1.0 - lam, lam, y + self.eps);
            if poly.is_empty() {
                return None;
            }
            poly = clip(&poly, -(1.0 - lam), -lam, -(y - self.eps));
            if poly.is_empty() {
                return None;
            }
        }
        let lo = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        Some(Interval { lo, hi })
    }

    /// Start ordinates compatible with a fixed end ordinate `end_y`.
    fn start_range(&self, a: usize, b: usize, end_y: f64) -> Option<Interval> {
        let (xa, ya) = self.samples[a];
        let (xb, _) = self.samples[b];
        let mut lo = ya - self.eps;
        let mut hi = ya + self.eps;
        for &(x, y) in &self.samples[a + 1..b] {
            let lam = (x - xa) / (xb - xa);
            lo = lo.max((y - self.eps - lam * end_y) / (1.0 - lam));
            hi = hi.min((y + self.eps - lam * end_y) / (1.0 - lam));
        }
        (lo <= hi).then_some(Interval { lo, hi })
    }
}

/// Continuous PWL with the fewest pieces whose maximum absolute error over the
/// samples is at most `spec.epsilon`, breakpoints restricted to sample
/// abscissae.
///
/// Layer `m` of the search holds, for every sample index `k`, the union of
/// breakpoint ordinates at `x_k` reachable with `m` pieces covering samples
/// `0..=k`. Each transition is an exact 2-D polygon projection, so the first
/// layer that reaches the last sample gives the minimal piece count. Ordinates
/// are then chosen backwards at interval midpoints; among feasible previous
/// breakpoints the leftmost is taken. Bounds carry a slack of
/// [`fit_slack`] to tolerate round-off.
pub fn fit_pwl_1d_optimal(samples: &[(f64, f64)], spec: &FitSpec) -> Result<PwlCurve1D, FitError> {
    if samples.len() < 2 {
        return Err(FitError::Degenerate("at least 2 samples are required".into()));
    }
    if !(spec.epsilon >= 0.0) {
        return Err(FitError::InvalidInput("epsilon must be >= 0".into()));
    }
    check_samples(samples)?;
    let n = samples.len();
    let check = SegmentCheck { samples, eps: spec.epsilon + fit_slack(samples) };

    let mut layers: Vec<Vec<Vec<Interval>>> = Vec::new();
    let mut first = vec![Vec::new(); n];
    first[0] = vec![Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }];
    layers.push(first);
    let pieces = loop {
        let prev = layers.last().expect("layer 0 exists");
        let mut next: Vec<Vec<Interval>> = vec![Vec::new(); n];
        for (k, slot) in next.iter_mut().enumerate().skip(1) {
            let mut reach = Vec::new();
            for a in 0..k {
                for iv in &prev[a] {
                    if let Some(p) = check.project(a, k, *iv) {
                        reach.push(p);
                    }
                }
            }
            *slot = merge_intervals(reach);
        }
        let done = !next[n - 1].is_empty();
        layers.push(next);
        if done {
            break layers.len() - 1;
        }
        if layers.len() > n {
            // unreachable: consecutive samples can always be interpolated
            return Err(FitError::Degenerate("no feasible segmentation found".into()));
        }
    };
    if let Some(cap) = spec.max_pieces {
        if pieces > cap {
            return Err(FitError::Infeasible { cap, minimal: pieces });
        }
    }

    let widest = layers[pieces][n - 1]
        .iter()
        .copied()
        .max_by(|a, b| (a.hi - a.lo).total_cmp(&(b.hi - b.lo)))
        .expect("final layer is nonempty");
    let mut k = n - 1;
    let mut y = midpoint(widest, samples[k].1);
    let mut points = vec![(samples[k].0, y)];
    for m in (1..=pieces).rev() {
        let mut chosen = None;
        let mut fallback: Option<(f64, usize, f64)> = None;
        for a in 0..k {
            let reach = &layers[m - 1][a];
            if reach.is_empty() {
                continue;
            }
            let Some(range) = check.start_range(a, k, y) else { continue };
            for iv in reach {
                let lo = range.lo.max(iv.lo);
                let hi = range.hi.min(iv.hi);
                if lo <= hi {
                    chosen = Some((a, midpoint(Interval { lo, hi }, samples[a].1)));
                    break;
                }
                let gap = lo - hi;
                if fallback.map_or(true, |f| gap < f.0) {
                    let target = if iv.hi < range.lo { iv.hi } else { iv.lo };
                    fallback = Some((gap, a, target));
                }
            }
            if chosen.is_some() {
                break;
            }
        }
        let (a, ya) = match chosen {
            Some(c) => c,
            None => {
                let (_, a, target) = fallback.ok_or_else(|| FitError::Degenerate("backtracking failed".into()))?;
                (a, target)
            }
        };
        points.push((samples[a].0, ya));
        k = a;
        y = ya;
    }
    points.reverse();
    PwlCurve1D::new(points)
}

fn midpoint(iv: Interval, fallback: f64) -> f64 {
    match (iv.lo.is_finite(), iv.hi.is_finite()) {
        (true, true) => 0.5 * (iv.lo + iv.hi),
        (true, false) => iv.lo.max(fallback),
        (false, true) => iv.hi.min(fallback),
        (false, false) => fallback,
    }
}

/// Samples `f` on the grid and triangulates every cell along its lower-left to
/// upper-right diagonal. `f` returning `None` or a non-finite value is a
/// sampling error.
pub fn triangulate_grid_2d<F>(x_grid: &[f64], y_grid: &[f64], f: F) -> Result<PwlSurface2D, FitError>
where
    F: Fn(f64, f64) -> Option<f64>,
{
    if x_grid.len() < 2 || y_grid.len() < 2 {
        let (x, y) = (x_grid.first().copied().unwrap_or(f64::NAN), y_grid.first().copied().unwrap_or(f64::NAN));
        log::debug!("degenerate grid axis of size {} x {}", x_grid.len(), y_grid.len());
        return Err(FitError::Sampling { x, y });
    }
    if x_grid.windows(2).any(|w| !(w[1] > w[0])) || y_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FitError::InvalidInput("grid axes must be strictly increasing".into()));
    }
    let mut values = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let mut row = Vec::with_capacity(y_grid.len());
        for &y in y_grid {
            match f(x, y) {
                Some(v) if v.is_finite() => row.push(v),
                _ => return Err(FitError::Sampling { x, y }),
            }
        }
        values.push(row);
    }
    Ok(PwlSurface2D { x_grid: x_grid.to_vec(), y_grid: y_grid.to_vec(), values })
}

/// `n` equally spaced points on `[lo, hi]`, endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Something that can be compared against reference samples.
pub trait Approximant {
    type Sample;

    /// Absolute deviation at a sample, or an error if it lies outside the domain.
    fn deviation(&self, sample: &Self::Sample) -> Result<f64, FitError>;
}

impl Approximant for PwlCurve1D {
    type Sample = (f64, f64);

    fn deviation(&self, &(x, y): &(f64, f64)) -> Result<f64, FitError> {
        let (lo, hi) = self.domain();
        let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        if !(x >= lo - tol && x <= hi + tol) {
            return Err(FitError::InvalidInput(format!("sample x = {x} outside [{lo}, {hi}]")));
        }
        Ok((self.evaluate(x) - y).abs())
    }
}

impl Approximant for PwlSurface2D {
    type Sample = (f64, f64, f64);

    fn deviation(&self, &(x, y, z): &(f64, f64, f64)) -> Result<f64, FitError> {
        if !self.contains(x, y) {
            return Err(FitError::InvalidInput(format!("sample ({x}, {y}) outside the grid")));
        }
        Ok((self.evaluate(x, y) - z).abs())
    }
}

/// Worst absolute deviation and the index of its first occurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxError {
    pub value: f64,
    pub index: usize,
}

pub fn max_error<A: Approximant>(approx: &A, samples: &[A::Sample]) -> Result<MaxError, FitError> {
    if samples.is_empty() {
        return Err(FitError::InvalidInput("empty sample set".into()));
    }
    let mut best = MaxError { value: f64::NEG_INFINITY, index: 0 };
    for (index, s) in samples.iter().enumerate() {
        let d = approx.deviation(s)?;
        if d > best.value {
            best = MaxError { value: d, index };
        }
    }
    Ok(best)
}

/// Direction of a McCormick cut relative to `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutSense {
    /// `w >= coef_q * Q + coef_h * h + constant`
    Under,
    /// `w <= coef_q * Q + coef_h * h + constant`
    Over,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCut {
    pub sense: CutSense,
    pub coef_q: f64,
    pub coef_h: f64,
    pub constant: f64,
}

impl EnvelopeCut {
    pub fn value(&self, q: f64, h: f64) -> f64 {
        self.coef_q * q + self.coef_h * h + self.constant
    }

    pub fn holds(&self, q: f64, h: f64, w: f64, tol: f64) -> bool {
        match self.sense {
            CutSense::Under => w >= self.value(q, h) - tol,
            CutSense::Over => w <= self.value(q, h) + tol,
        }
    }
}

/// Convex envelope of `w = Q * h` on `[q_lo, q_hi] x [h_lo, h_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCormickEnvelope {
    pub q_bounds: (f64, f64),
    pub h_bounds: (f64, f64),
}

pub fn mccormick_envelope(q_bounds: (f64, f64), h_bounds: (f64, f64)) -> Result<McCormickEnvelope, FitError> {
    let finite = [q_bounds.0, q_bounds.1, h_bounds.0, h_bounds.1].iter().all(|v| v.is_finite());
    if !finite {
        return Err(FitError::InvalidInput("McCormick bounds must be finite".into()));
    }
    if q_bounds.0 > q_bounds.1 || h_bounds.0 > h_bounds.1 {
        return Err(FitError::InvalidInput("inverted McCormick bounds".into()));
    }
    Ok(McCormickEnvelope { q_bounds, h_bounds })
}

impl McCormickEnvelope {
    pub fn cuts(&self) -> [EnvelopeCut; 4] {
        let (ql, qh) = self.q_bounds;
        let (hl, hh) = self.h_bounds;
        [
            EnvelopeCut { sense: CutSense::Under, coef_q: hl, coef_h: ql, constant: -ql * hl },
            EnvelopeCut { sense: CutSense::Under, coef_q: hh, coef_h: qh, constant: -qh * hh },
            EnvelopeCut { sense: CutSense::Over, coef_q: hl, coef_h: qh, constant: -qh * hl },
            EnvelopeCut { sense: CutSense::Over, coef_q: hh, coef_h: ql, constant: -ql * hh },
        ]
    }

    /// Interval of `w` allowed by the envelope at `(q, h)`.
    pub fn bounds_at(&self, q: f64, h: f64) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for cut in self.cuts() {
            match cut.sense {
                CutSense::Under => lo = lo.max(cut.value(q, h)),
                CutSense::Over => hi = hi.min(cut.value(q, h)),
            }
        }
        (lo, hi)
    }

    pub fn contains(&self, q: f64, h: f64, w: f64, tol: f64) -> bool {
        self.cuts().iter().all(|c| c.holds(q, h, w, tol))
    }
}

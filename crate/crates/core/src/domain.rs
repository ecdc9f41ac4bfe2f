//! Discretized model domains.
//!
//! Three flat domains are supported: the circle of circumference `ℓ`, the
//! interval `[0, ℓ]` and the flat torus `[0, ℓ₁) × [0, ℓ₂)`. Each grid carries
//! the second-order finite-difference matrix of `−Δ`, uniform quadrature
//! weights and the volume `V = Σ w_x`.
//!
//! Node layouts:
//!
//! ```text
//! Circle / Torus (Closed):   x_k = k h,            k = 0..n,   h = ℓ / n
//! Interval, Dirichlet:       x_k = k h,            k = 1..n,   h = ℓ / n   (interior only)
//! Interval, Neumann:         x_k = (k + 1/2) h,    k = 0..n,   h = ℓ / n   (cell centred)
//! ```
//!
//! The Neumann grid is cell centred so that the reflected ghost node gives the
//! boundary row `(1, −1) / h²`; the constant vector is then annihilated
//! exactly. Dirichlet grids keep the `n − 1` interior nodes and spread the
//! volume uniformly over them, so that constants have mean equal to
//! themselves and `Σ w_x = ℓ`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Smallest accepted resolution along any axis.
pub const MIN_NODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryCondition {
    /// No boundary (circle, torus); the operator is periodic.
    Closed,
    Dirichlet,
    Neumann,
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryCondition::Closed => "closed",
            BoundaryCondition::Dirichlet => "dirichlet",
            BoundaryCondition::Neumann => "neumann",
        };
        f.write_str(s)
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "closed" | "periodic" | "none" => Ok(BoundaryCondition::Closed),
            "dirichlet" => Ok(BoundaryCondition::Dirichlet),
            "neumann" => Ok(BoundaryCondition::Neumann),
            other => Err(Error::Config(format!("unknown boundary condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainKind {
    Circle { circumference: f64 },
    Interval { length: f64 },
    Torus2D { lx: f64, ly: f64 },
}

impl DomainKind {
    pub fn dim(&self) -> usize {
        match self {
            DomainKind::Torus2D { .. } => 2,
            _ => 1,
        }
    }

    fn lengths(&self) -> [f64; 2] {
        match *self {
            DomainKind::Circle { circumference } => [circumference, 0.0],
            DomainKind::Interval { length } => [length, 0.0],
            DomainKind::Torus2D { lx, ly } => [lx, ly],
        }
    }

    /// Exact measure of the continuum domain.
    pub fn measure(&self) -> f64 {
        match *self {
            DomainKind::Circle { circumference } => circumference,
            DomainKind::Interval { length } => length,
            DomainKind::Torus2D { lx, ly } => lx * ly,
        }
    }
}

/// An immutable discretized domain.
#[derive(Debug, Clone)]
pub struct DomainGrid {
    kind: DomainKind,
    bc: BoundaryCondition,
    /// Requested resolution per axis (cells for intervals, nodes for periodic axes).
    resolution: [usize; 2],
    /// Node counts per axis actually carried as unknowns.
    shape: [usize; 2],
    coords: Vec<[f64; 2]>,
    spacing: [f64; 2],
    weights: DVector<f64>,
    volume: f64,
    laplacian: DMatrix<f64>,
}

/// Build a grid with `n` cells (intervals) or `n` nodes per periodic axis.
pub fn build_grid(kind: DomainKind, n: usize, bc: BoundaryCondition) -> Result<DomainGrid> {
    match kind {
        DomainKind::Torus2D { .. } => build_torus(kind, n, n, bc),
        _ => DomainGrid::new_1d(kind, n, bc),
    }
}

/// Torus grid with independent resolutions along each axis.
pub fn build_torus(kind: DomainKind, nx: usize, ny: usize, bc: BoundaryCondition) -> Result<DomainGrid> {
    let DomainKind::Torus2D { lx, ly } = kind else {
        return Err(Error::Config("build_torus needs a Torus2D domain".into()));
    };
    if bc != BoundaryCondition::Closed {
        return Err(Error::Config(format!("torus requires closed boundary condition, got {bc}")));
    }
    check_lengths(&[lx, ly])?;
    if nx < MIN_NODES || ny < MIN_NODES {
        return Err(Error::Config(format!(
            "torus resolution {nx}x{ny} below minimum {MIN_NODES}"
        )));
    }
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let n = nx * ny;
    let mut coords = Vec::with_capacity(n);
    for iy in 0..ny {
        for ix in 0..nx {
            coords.push([ix as f64 * hx, iy as f64 * hy]);
        }
    }
    let lap_x = periodic_1d(nx, hx);
    let lap_y = periodic_1d(ny, hy);
    // Kronecker sum: node index = iy * nx + ix.
    let mut laplacian = DMatrix::zeros(n, n);
    for iy in 0..ny {
        for ix in 0..nx {
            let row = iy * nx + ix;
            for jx in 0..nx {
                let v = lap_x[(ix, jx)];
                if v != 0.0 {
                    laplacian[(row, iy * nx + jx)] += v;
                }
            }
            for jy in 0..ny {
                let v = lap_y[(iy, jy)];
                if v != 0.0 {
                    laplacian[(row, jy * nx + ix)] += v;
                }
            }
        }
    }
    let w = hx * hy;
    Ok(DomainGrid {
        kind,
        bc,
        resolution: [nx, ny],
        shape: [nx, ny],
        coords,
        spacing: [hx, hy],
        weights: DVector::from_element(n, w),
        volume: w * n as f64,
        laplacian,
    })
}

fn check_lengths(lengths: &[f64]) -> Result<()> {
    for &l in lengths {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::Config(format!("domain length must be positive, got {l}")));
        }
    }
    Ok(())
}

fn periodic_1d(n: usize, h: f64) -> DMatrix<f64> {
    let s = 1.0 / (h * h);
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = 2.0 * s;
        m[(k, (k + 1) % n)] -= s;
        m[(k, (k + n - 1) % n)] -= s;
    }
    m
}

impl DomainGrid {
    fn new_1d(kind: DomainKind, n: usize, bc: BoundaryCondition) -> Result<DomainGrid> {
        let len = kind.lengths()[0];
        check_lengths(&[len])?;
        match (kind, bc) {
            (DomainKind::Circle { .. }, BoundaryCondition::Closed) => {}
            (DomainKind::Interval { .. }, BoundaryCondition::Dirichlet | BoundaryCondition::Neumann) => {}
            (DomainKind::Circle { .. }, _) => {
                return Err(Error::Config(format!("circle requires closed boundary condition, got {bc}")))
            }
            (DomainKind::Interval { .. }, _) => {
                return Err(Error::Config("interval requires dirichlet or neumann boundary condition".into()))
            }
            (DomainKind::Torus2D { .. }, _) => unreachable!(),
        }
        if n < MIN_NODES {
            return Err(Error::Config(format!("resolution {n} below minimum {MIN_NODES}")));
        }
        let h = len / n as f64;
        let s = 1.0 / (h * h);
        let (coords, laplacian, w): (Vec<[f64; 2]>, DMatrix<f64>, f64) = match bc {
            BoundaryCondition::Closed => {
                let coords = (0..n).map(|k| [k as f64 * h, 0.0]).collect();
                (coords, periodic_1d(n, h), h)
            }
            BoundaryCondition::Dirichlet => {
                let m = n - 1;
                let coords = (1..n).map(|k| [k as f64 * h, 0.0]).collect();
                let mut lap = DMatrix::zeros(m, m);
                for k in 0..m {
                    lap[(k, k)] = 2.0 * s;
                    if k > 0 {
                        lap[(k, k - 1)] = -s;
                    }
                    if k + 1 < m {
                        lap[(k, k + 1)] = -s;
                    }
                }
                (coords, lap, len / m as f64)
            }
            BoundaryCondition::Neumann => {
                let coords = (0..n).map(|k| [(k as f64 + 0.5) * h, 0.0]).collect();
                let mut lap = DMatrix::zeros(n, n);
                for k in 0..n {
                    let mut diag = 0.0;
                    if k > 0 {
                        lap[(k, k - 1)] = -s;
                        diag += s;
                    }
                    if k + 1 < n {
                        lap[(k, k + 1)] = -s;
                        diag += s;
                    }
                    lap[(k, k)] = diag;
                }
                (coords, lap, h)
            }
        };
        let m = coords.len();
        Ok(DomainGrid {
            kind,
            bc,
            resolution: [n, 1],
            shape: [m, 1],
            coords,
            spacing: [h, 0.0],
            weights: DVector::from_element(m, w),
            volume: w * m as f64,
            laplacian,
        })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Number of unknowns (rows of the Laplacian).
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn resolution(&self) -> [usize; 2] {
        self.resolution
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// First coordinate of every node.
    pub fn xs(&self) -> Vec<f64> {
        self.coords.iter().map(|p| p[0]).collect()
    }

    /// Grid step per axis; the second entry is zero on 1-D domains.
    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Sample a function of the node coordinates.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.n_nodes(), self.coords.iter().map(|p| f(p[0], p[1])))
    }

    /// Weighted inner product `Σ w_x a(x) b(x)`.
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    pub fn norm(&self, a: &DVector<f64>) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Integral `Σ w_x u(x)`.
    pub fn integrate(&self, u: &DVector<f64>) -> f64 {
        self.weights.dot(u)
    }

    /// Closed-form spectrum of the discrete Laplacian, ascending.
    pub fn laplacian_spectrum_closed_form(&self) -> Vec<f64> {
        let sin2 = |x: f64| x.sin().powi(2);
        let mut ev: Vec<f64> = match (self.kind, self.bc) {
            (DomainKind::Circle { .. }, _) => {
                let (n, h) = (self.resolution[0], self.spacing[0]);
                (0..n)
                    .map(|k| 4.0 / (h * h) * sin2(std::f64::consts::PI * k as f64 / n as f64))
                    .collect()
            }
            (DomainKind::Interval { .. }, BoundaryCondition::Dirichlet) => {
                let (n, h) = (self.resolution[0], self.spacing[0]);
                (1..n)
                    .map(|k| 4.0 / (h * h) * sin2(std::f64::consts::PI * k as f64 / (2.0 * n as f64)))
                    .collect()
            }
            (DomainKind::Interval { .. }, _) => {
                let (n, h) = (self.resolution[0], self.spacing[0]);
                (0..n)
                    .map(|k| 4.0 / (h * h) * sin2(std::f64::consts::PI * k as f64 / (2.0 * n as f64)))
                    .collect()
            }
            (DomainKind::Torus2D { .. }, _) => {
                let [nx, ny] = self.resolution;
                let [hx, hy] = self.spacing;
                let pi = std::f64::consts::PI;
                let mut v = Vec::with_capacity(nx * ny);
                for ky in 0..ny {
                    for kx in 0..nx {
                        v.push(
                            4.0 / (hx * hx) * sin2(pi * kx as f64 / nx as f64)
                                + 4.0 / (hy * hy) * sin2(pi * ky as f64 / ny as f64),
                        );
                    }
                }
                v
            }
        };
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Export node coordinates and weights as CSV (`x[,y],w`).
    pub fn write_nodes_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.dim() == 2 {
            writeln!(out, "x,y,w")?;
            for (p, w) in self.coords.iter().zip(self.weights.iter()) {
                writeln!(out, "{},{},{}", p[0], p[1], w)?;
            }
        } else {
            writeln!(out, "x,w")?;
            for (p, w) in self.coords.iter().zip(self.weights.iter()) {
                writeln!(out, "{},{}", p[0], w)?;
            }
        }
        Ok(())
    }
}

/// A node-sampled potential with its cached mean value.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    values: DVector<f64>,
    mean: f64,
}

impl Potential {
    pub fn new(grid: &DomainGrid, values: DVector<f64>) -> Result<Potential> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("potential has non-finite values".into()));
        }
        let mean = mean_value(grid, &values)?;
        Ok(Potential { values, mean })
    }

    pub fn constant(grid: &DomainGrid, c: f64) -> Potential {
        Potential {
            values: DVector::from_element(grid.n_nodes(), c),
            mean: c,
        }
    }

    pub fn zero(grid: &DomainGrid) -> Potential {
        Potential::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &DomainGrid, f: impl Fn(f64, f64) -> f64) -> Potential {
        let values = grid.sample(f);
        let mean = grid.integrate(&values) / grid.volume();
        Potential { values, mean }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    /// `q + t u` on the same grid.
    pub fn perturbed(&self, grid: &DomainGrid, t: f64, u: &DVector<f64>) -> Result<Potential> {
        check_len(self.len(), u.len())?;
        Potential::new(grid, &self.values + u * t)
    }
}

/// `(1/V) Σ w_x u(x)`.
pub fn mean_value(grid: &DomainGrid, u: &DVector<f64>) -> Result<f64> {
    check_len(grid.n_nodes(), u.len())?;
    Ok(grid.integrate(u) / grid.volume())
}

/// `u − ū`: projection onto the tangent space of the mean constraint.
pub fn project_mean_zero(grid: &DomainGrid, u: &DVector<f64>) -> Result<DVector<f64>> {
    let m = mean_value(grid, u)?;
    let mut v = u.add_scalar(-m);
    // A second pass removes the rounding left by the first subtraction.
    let m2 = grid.integrate(&v) / grid.volume();
    v.add_scalar_mut(-m2);
    Ok(v)
}

/// Plain-text grid description: `kind`, `length`, `nodes`, `bc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub kind: DomainKind,
    pub nodes: [usize; 2],
    pub bc: BoundaryCondition,
}

impl GridSpec {
    pub fn build(&self) -> Result<DomainGrid> {
        match self.kind {
            DomainKind::Torus2D { .. } => build_torus(self.kind, self.nodes[0], self.nodes[1], self.bc),
            _ => build_grid(self.kind, self.nodes[0], self.bc),
        }
    }

    /// Assemble from already-split `key = value` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<GridSpec> {
        let (mut kind, mut length, mut nodes, mut bc) = (None, None, None, None);
        for (k, v) in pairs {
            match k {
                "kind" => kind = Some(v.trim().to_ascii_lowercase()),
                "length" => length = Some(parse_pair_f64(v)?),
                "nodes" => nodes = Some(parse_pair_usize(v)?),
                "bc" => bc = Some(v.parse::<BoundaryCondition>()?),
                other => return Err(Error::Config(format!("unknown domain key `{other}`"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Config("missing domain key `kind`".into()))?;
        let nodes = nodes.ok_or_else(|| Error::Config("missing domain key `nodes`".into()))?;
        let tau = 2.0 * std::f64::consts::PI;
        let (kind, default_bc) = match kind.as_str() {
            "circle" => {
                let l = length.map_or(tau, |l| l.0);
                (DomainKind::Circle { circumference: l }, BoundaryCondition::Closed)
            }
            "interval" => {
                let l = length.map_or(std::f64::consts::PI, |l| l.0);
                (DomainKind::Interval { length: l }, BoundaryCondition::Dirichlet)
            }
            "torus" | "torus2d" => {
                let (lx, ly) = length.map_or((tau, tau), |l| (l.0, l.1.unwrap_or(l.0)));
                (DomainKind::Torus2D { lx, ly }, BoundaryCondition::Closed)
            }
            other => return Err(Error::Config(format!("unknown domain kind `{other}`"))),
        };
        if matches!(kind, DomainKind::Interval { .. }) && bc.is_none() {
            return Err(Error::Config("interval domain needs `bc` (dirichlet or neumann)".into()));
        }
        Ok(GridSpec {
            kind,
            nodes: [nodes.0, nodes.1.unwrap_or(nodes.0)],
            bc: bc.unwrap_or(default_bc),
        })
    }

    /// Parse `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<GridSpec> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            pairs.push((k.trim(), v.trim()));
        }
        GridSpec::from_pairs(pairs)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    let s = s.trim();
    let lower = s.to_ascii_lowercase();
    // Allow multiples of pi, e.g. `2pi`, `pi`, `0.5*pi`.
    if let Some(prefix) = lower.strip_suffix("pi") {
        let prefix = prefix.trim().trim_end_matches('*').trim();
        let factor = if prefix.is_empty() {
            1.0
        } else {
            prefix
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse number `{s}`")))?
        };
        return Ok(factor * std::f64::consts::PI);
    }
    s.parse::<f64>()
        .map_err(|_| Error::Config(format!("cannot parse number `{s}`")))
}

pub(crate) fn parse_number(s: &str) -> Result<f64> {
    parse_f64(s)
}

fn parse_pair_f64(s: &str) -> Result<(f64, Option<f64>)> {
    match s.split_once(',') {
        Some((a, b)) => Ok((parse_f64(a)?, Some(parse_f64(b)?))),
        None => Ok((parse_f64(s)?, None)),
    }
}

fn parse_pair_usize(s: &str) -> Result<(usize, Option<usize>)> {
    let p = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("cannot parse node count `{t}`")))
    };
    match s.split_once(['x', ',']) {
        Some((a, b)) => Ok((p(a)?, Some(p(b)?))),
        None => Ok((p(s)?, None)),
    }
}

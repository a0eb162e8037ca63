//! Classical open baker's maps on the torus `[0,1)^2`.
//!
//! An open baker with `D` branches keeps a subset of the vertical strips
//! `[l/D, (l+1)/D)`; points in the other strips escape. On a kept strip the
//! map stretches position by `D` and compresses momentum by `D`:
//! `(q, p) ↦ (Dq - l, (p + l)/D)`.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{domain, Result};
use crate::matrix::{ComplexMatrix, C64};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct OpenBakerSpec {
    base: usize,
    kept: Vec<usize>,
}

impl OpenBakerSpec {
    /// `kept` must be a nonempty, strictly increasing list of branches in `0..base`.
    pub fn new(base: usize, kept: Vec<usize>) -> Result<Self> {
        if base < 2 {
            return domain(format!("baker needs at least 2 branches, got {base}"));
        }
        if kept.is_empty() {
            return domain("an open baker must keep at least one branch");
        }
        if kept.windows(2).any(|w| w[0] >= w[1]) {
            return domain(format!("kept branches {kept:?} are not strictly increasing"));
        }
        if kept.iter().any(|&l| l >= base) {
            return domain(format!("kept branches {kept:?} exceed base {base}"));
        }
        Ok(Self { base, kept })
    }

    /// Open 3-baker keeping the outer thirds.
    pub fn three_baker() -> Self {
        Self { base: 3, kept: vec![0, 2] }
    }

    /// Open 5-baker keeping branches 1 and 3.
    pub fn five_baker() -> Self {
        Self { base: 5, kept: vec![1, 3] }
    }

    /// The closed `D`-baker (every branch kept).
    pub fn closed(base: usize) -> Result<Self> {
        Self::new(base, (0..base).collect())
    }

    /// The 4-baker cavity interior: branches 1 and 2.
    pub fn four_baker_interior() -> Self {
        Self { base: 4, kept: vec![1, 2] }
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }

    pub fn keeps(&self, branch: usize) -> bool {
        self.kept.binary_search(&branch).is_ok()
    }

    pub fn is_open(&self) -> bool {
        self.kept.len() < self.base
    }

    /// Branch `floor(D x)`, clamped into `0..D` against rounding at `x → 1`.
    pub fn branch_of(&self, x: f64) -> usize {
        ((self.base as f64 * x).floor().max(0.0) as usize).min(self.base - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhasePoint {
    pub q: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// One step of the open map, or its inverse. `None` means the point escaped.
pub fn map_step(spec: &OpenBakerSpec, x: PhasePoint, direction: Direction) -> Option<PhasePoint> {
    let d = spec.base as f64;
    match direction {
        Direction::Forward => {
            let l = spec.branch_of(x.q);
            spec.keeps(l)
                .then(|| PhasePoint::new(d * x.q - l as f64, (x.p + l as f64) / d))
        }
        Direction::Backward => {
            let l = spec.branch_of(x.p);
            spec.keeps(l)
                .then(|| PhasePoint::new((x.q + l as f64) / d, d * x.p - l as f64))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EscapeTime {
    /// Number of steps survived before landing outside the domain.
    After(u32),
    /// Survived every one of the `t_max` checked steps.
    Trapped,
}

impl EscapeTime {
    /// CSV encoding: the step count, or −1 for trapped points.
    pub fn as_i64(self) -> i64 {
        match self {
            EscapeTime::After(n) => i64::from(n),
            EscapeTime::Trapped => -1,
        }
    }
}

/// Smallest `n` such that the `n`-th iterate of `x` lies outside the domain
/// (the forward domain `D`, or `B(D)` backwards). Iterates `0..t_max` are
/// checked, so a point reported `Trapped` stayed inside for `t_max` steps.
pub fn escape_time(spec: &OpenBakerSpec, x: PhasePoint, direction: Direction, t_max: u32) -> EscapeTime {
    let mut current = x;
    for n in 0..t_max {
        match map_step(spec, current, direction) {
            Some(next) => current = next,
            None => return EscapeTime::After(n),
        }
    }
    EscapeTime::Trapped
}

/// Escape times sampled at the centers of an `M x M` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EscapeGrid {
    pub resolution: usize,
    pub direction: Direction,
    pub t_max: u32,
    /// Row-major over `(i, j)` with `q = (i+1/2)/M`, `p = (j+1/2)/M`.
    cells: Vec<EscapeTime>,
}

impl EscapeGrid {
    pub fn get(&self, i: usize, j: usize) -> EscapeTime {
        self.cells[i * self.resolution + j]
    }

    pub fn cells(&self) -> &[EscapeTime] {
        &self.cells
    }

    pub fn trapped_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == EscapeTime::Trapped).count()
    }

    /// CSV with header `i,j,escape_time`, −1 for trapped cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,escape_time")?;
        let m = self.resolution;
        for i in 0..m {
            for j in 0..m {
                writeln!(w, "{i},{j},{}", self.get(i, j).as_i64())?;
            }
        }
        Ok(())
    }
}

pub fn escape_grid(spec: &OpenBakerSpec, resolution: usize, direction: Direction, t_max: u32) -> Result<EscapeGrid> {
    if resolution == 0 {
        return domain("escape grid resolution must be at least 1");
    }
    let m = resolution as f64;
    let mut cells = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let x = PhasePoint::new((i as f64 + 0.5) / m, (j as f64 + 0.5) / m);
            cells.push(escape_time(spec, x, direction, t_max));
        }
    }
    Ok(EscapeGrid { resolution, direction, t_max, cells })
}

/// Dimension data of the trapped set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionReport {
    /// Partial dimension `log s / log D`.
    pub mu: f64,
    #[serde(rename = "dimK")]
    pub dim_k: f64,
    /// Mean number of steps before escape, `D / (D - s)`.
    pub tau_dwell: f64,
    pub lyapunov: f64,
    /// `1 - 1/(lyapunov * tau_dwell)`, the large-dwell-time estimate of `mu`.
    pub heuristic_mu: f64,
}

pub fn fractal_dimensions(spec: &OpenBakerSpec) -> Result<DimensionReport> {
    if !spec.is_open() {
        return domain("a closed baker has no escape; dimensions are undefined");
    }
    let d = spec.base as f64;
    let s = spec.kept_count() as f64;
    let mu = s.ln() / d.ln();
    let tau_dwell = d / (d - s);
    let lyapunov = d.ln();
    Ok(DimensionReport {
        mu,
        dim_k: 2.0 * mu,
        tau_dwell,
        lyapunov,
        heuristic_mu: 1.0 - 1.0 / (lyapunov * tau_dwell),
    })
}

/// Fejér weight `f(t) = (sin 3πt / (3 sin πt))^2`, equal to 1 at integers.
pub fn markov_weight(t: f64) -> f64 {
    let frac = t - t.round();
    if frac == 0.0 {
        return 1.0;
    }
    let s = (PI * frac).sin();
    let r = (3.0 * PI * frac).sin() / (3.0 * s);
    r * r
}

/// The three images of the multivalued 3-baker and their transition weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightedImages {
    /// Images for momentum shifts `j = -1, 0, +1` (in units of 1/3), reduced mod 1.
    pub images: [PhasePoint; 3],
    pub weights: [f64; 3],
}

/// `x ↦ {B_3(x) + (0, j/3)}_{j=-1,0,1}` with weights `f((p + j - 1/2)/3)`.
/// `None` when `x` lies in the escaping middle strip.
pub fn multivalued_step(x: PhasePoint) -> Option<WeightedImages> {
    let image = map_step(&OpenBakerSpec::three_baker(), x, Direction::Forward)?;
    let mut images = [image; 3];
    let mut weights = [0.0; 3];
    for (slot, j) in [-1.0f64, 0.0, 1.0].into_iter().enumerate() {
        images[slot].p = (image.p + j / 3.0).rem_euclid(1.0);
        weights[slot] = markov_weight((x.p + j - 0.5) / 3.0);
    }
    Some(WeightedImages { images, weights })
}

/// Classical transfer matrix: entrywise squared modulus.
pub fn transfer_matrix(b: &ComplexMatrix) -> ComplexMatrix {
    b.map(|z| C64::new(z.norm_sqr(), 0.0))
}

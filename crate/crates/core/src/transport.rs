//! Coherent transport through the Walsh-quantized 4-baker cavity.
//!
//! The cavity lives on `N = 4^k` with leads on the first position digit:
//! lead 1 is digit `0`, lead 2 is digit `3`, the interior is `{1, 2}`. The
//! closed propagator `U` moves the first digit to the end and applies `F_4*`
//! to it, so `U` has four nonzeros per column and is never formed densely.
//!
//! The transmission matrix `t` is indexed by the remaining `k - 1` digits in
//! lexicographic order: row `r` is the lead-2 state `3·4^{k-1} + r`, column
//! `c` is the lead-1 state `c`.

use std::f64::consts::TAU;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::classical::OpenBakerSpec;
use crate::error::{domain, Error, Result};
use crate::format::fmt_float;
use crate::matrix::{cis, ComplexMatrix, C64, ONE, ZERO};
use crate::quantize::digit_propagator;
use crate::transforms::{checked_dimension, WalshVariant};

pub const BASE: usize = 4;
pub const LEAD_IN_DIGIT: usize = 0;
pub const LEAD_OUT_DIGIT: usize = 3;

/// Largest `k` for the dense interior solve.
pub const MAX_RESOLVENT_K: usize = 6;
/// Largest `k` for the series method (the output `t` alone is `16^{k-1}` entries).
pub const MAX_SERIES_K: usize = 7;

/// Average shot noise per nonclassical channel in the semiclassical limit.
pub const SHOT_NOISE_CONSTANT: f64 = 11.0 / 80.0;
/// Random-matrix prediction for the same quantity.
pub const RANDOM_MATRIX_CONSTANT: f64 = 1.0 / 8.0;

/// Conductances at or below this are roundoff; the Fano factor is then absent.
pub const CONDUCTANCE_ZERO: f64 = 1e-12;

fn first_digit_class(first: usize) -> Region {
    match first {
        LEAD_IN_DIGIT => Region::LeadIn,
        LEAD_OUT_DIGIT => Region::LeadOut,
        _ => Region::Interior,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Region {
    LeadIn,
    LeadOut,
    Interior,
}

/// Diagonal projectors `(Π_L1, Π_L2, Π_I)` for `N = 4^k`.
pub fn lead_projectors(k: usize) -> Result<(ComplexMatrix, ComplexMatrix, ComplexMatrix)> {
    if k == 0 {
        return domain("lead projectors need k >= 1");
    }
    let n = checked_dimension(BASE, k)?;
    let tail = n / BASE;
    let diag = |region: Region| -> Vec<C64> {
        (0..n)
            .map(|j| if first_digit_class(j / tail) == region { ONE } else { ZERO })
            .collect()
    };
    Ok((
        ComplexMatrix::diagonal(&diag(Region::LeadIn)),
        ComplexMatrix::diagonal(&diag(Region::LeadOut)),
        ComplexMatrix::diagonal(&diag(Region::Interior)),
    ))
}

/// Matrix-free closed cavity propagator `U`.
struct Cavity {
    n: usize,
    tail: usize,
    prop: [[C64; BASE]; BASE],
}

impl Cavity {
    fn new(k: usize) -> Result<Self> {
        let n = checked_dimension(BASE, k)?;
        let p = digit_propagator(&OpenBakerSpec::closed(BASE)?, WalshVariant::V)?;
        let mut prop = [[ZERO; BASE]; BASE];
        for (x, row) in prop.iter_mut().enumerate() {
            for (e, v) in row.iter_mut().enumerate() {
                *v = p.get(x, e);
            }
        }
        Ok(Self { n, tail: n / BASE, prop })
    }

    /// `out = U v`, reading only the entries of `v` in the interior.
    fn apply_from_interior(&self, v: &[C64], out: &mut [C64]) {
        out.fill(ZERO);
        for first in 1..=2 {
            for rest in 0..self.tail {
                let a = v[first * self.tail + rest];
                if a == ZERO {
                    continue;
                }
                for x in 0..BASE {
                    out[rest * BASE + x] += self.prop[x][first] * a;
                }
            }
        }
    }

    /// `U e_j`: four nonzeros at rows `rest·4 + x`.
    fn column(&self, j: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (first, rest) = (j / self.tail, j % self.tail);
        (0..BASE).map(move |x| (rest * BASE + x, self.prop[x][first]))
    }

    fn interior_index(&self, j: usize) -> Option<usize> {
        let first = j / self.tail;
        (first_digit_class(first) == Region::Interior).then(|| j - self.tail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransmissionMethod {
    Resolvent,
    Series,
}

impl FromStr for TransmissionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "resolvent" => Ok(Self::Resolvent),
            "series" => Ok(Self::Series),
            other => domain(format!("unknown transmission method {other:?} (expected resolvent or series)")),
        }
    }
}

impl std::fmt::Display for TransmissionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Resolvent => "resolvent",
            Self::Series => "series",
        })
    }
}

/// `t(ϑ) = Σ_{n≥1} e^{inϑ} Π_L2 U (Π_I U)^{n-1} Π_L1` as an `(N/4) x (N/4)` block.
pub fn transmission_matrix(k: usize, theta: f64, method: TransmissionMethod, tol: f64) -> Result<ComplexMatrix> {
    if k == 0 {
        return domain("transport needs k >= 1");
    }
    if !theta.is_finite() {
        return domain("quasi-energy must be finite");
    }
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    match method {
        TransmissionMethod::Resolvent if k > MAX_RESOLVENT_K => domain(format!(
            "k = {k} exceeds the dense resolvent limit {MAX_RESOLVENT_K}; use method = series"
        )),
        TransmissionMethod::Series if k > MAX_SERIES_K => {
            domain(format!("k = {k} exceeds the series limit {MAX_SERIES_K}"))
        }
        TransmissionMethod::Resolvent => resolvent(k, theta),
        TransmissionMethod::Series => series(k, theta, tol),
    }
}

/// Interior reduction: with `W = (I - zΠ_I U)^{-1} Π_L1 = E_1 + Y`, `Y` solves
/// `(I - z Π_I U Π_I) Y = z Π_I U E_1` on the interior, and `t = z Π_L2 U W`.
fn resolvent(k: usize, theta: f64) -> Result<ComplexMatrix> {
    let cavity = Cavity::new(k)?;
    let (n, tail) = (cavity.n, cavity.tail);
    let z = cis(theta);
    let inner = 2 * tail;
    let mut system = ComplexMatrix::identity(inner);
    for col in 0..inner {
        for (row, a) in cavity.column(col + tail) {
            if let Some(i) = cavity.interior_index(row) {
                system.set(i, col, system.get(i, col) - z * a);
            }
        }
    }
    let mut rhs = ComplexMatrix::zeros(inner, tail);
    for c in 0..tail {
        for (row, a) in cavity.column(c) {
            if let Some(i) = cavity.interior_index(row) {
                rhs.set(i, c, z * a);
            }
        }
    }
    let y = system.solve(&rhs)?;
    let mut t = ComplexMatrix::zeros(tail, tail);
    let mut state = vec![ZERO; n];
    let mut image = vec![ZERO; n];
    for c in 0..tail {
        for i in 0..inner {
            state[i + tail] = y.get(i, c);
        }
        cavity.apply_from_interior(&state, &mut image);
        for (row, a) in cavity.column(c) {
            image[row] += a;
        }
        for r in 0..tail {
            t.set(r, c, z * image[LEAD_OUT_DIGIT * tail + r]);
        }
    }
    Ok(t)
}

/// Column-by-column truncated sum. A column stops once its interior
/// remainder `(Π_I U)^n e_c` has norm below `tol / sqrt(N/4)`, so the
/// Frobenius norm of the whole remainder is below `tol`.
fn series(k: usize, theta: f64, tol: f64) -> Result<ComplexMatrix> {
    let cavity = Cavity::new(k)?;
    let (n, tail) = (cavity.n, cavity.tail);
    let n_max = 200 * k;
    let column_tol = tol / (tail as f64).sqrt();
    let mut t = ComplexMatrix::zeros(tail, tail);
    let mut state = vec![ZERO; n];
    let mut image = vec![ZERO; n];
    for c in 0..tail {
        state.fill(ZERO);
        for (row, a) in cavity.column(c) {
            image[row] = a;
        }
        let mut step = 1;
        let mut phase = cis(theta);
        let mut acc = vec![ZERO; tail];
        loop {
            // image holds U (Π_I U)^{step-1} e_c
            for (r, slot) in acc.iter_mut().enumerate() {
                *slot += phase * image[LEAD_OUT_DIGIT * tail + r];
            }
            let mut remainder = 0.0;
            for (j, s) in state.iter_mut().enumerate() {
                *s = if cavity.interior_index(j).is_some() { image[j] } else { ZERO };
                remainder += s.norm_sqr();
            }
            if remainder.sqrt() < column_tol {
                break;
            }
            if step >= n_max {
                return Err(Error::Solver(format!(
                    "transmission series did not reach {tol:e} within {n_max} terms"
                )));
            }
            cavity.apply_from_interior(&state, &mut image);
            step += 1;
            phase *= cis(theta);
        }
        image.fill(ZERO);
        for (r, v) in acc.into_iter().enumerate() {
            t.set(r, c, v);
        }
    }
    Ok(t)
}

/// Transmission eigenvalues and the derived conductance and noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelStats {
    /// Eigenvalues of `t t*`, descending.
    #[serde(rename = "T")]
    pub transmissions: Vec<f64>,
    pub g: f64,
    #[serde(rename = "P")]
    pub p: f64,
    /// `P / g`; absent when `g` is numerically zero.
    #[serde(rename = "F", skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
}

pub fn transport_quantities(t: &ComplexMatrix) -> Result<ChannelStats> {
    let mut transmissions: Vec<f64> = t.singular_values()?.into_iter().map(|s| s * s).collect();
    transmissions.sort_by(|a, b| b.total_cmp(a));
    let g: f64 = transmissions.iter().sum();
    let p: f64 = transmissions.iter().map(|x| x * (1.0 - x)).sum();
    let f = (g > CONDUCTANCE_ZERO).then(|| p / g);
    Ok(ChannelStats { transmissions, g, p, f })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportResult {
    pub k: usize,
    pub theta: f64,
    #[serde(flatten)]
    pub stats: ChannelStats,
}

impl TransportResult {
    /// One-column CSV of the transmission eigenvalues.
    pub fn write_transmissions_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "T")?;
        for x in &self.stats.transmissions {
            writeln!(w, "{}", fmt_float(*x))?;
        }
        Ok(())
    }
}

pub fn evaluate_transport(k: usize, theta: f64, method: TransmissionMethod, tol: f64) -> Result<TransportResult> {
    let t = transmission_matrix(k, theta, method, tol)?;
    Ok(TransportResult {
        k,
        theta,
        stats: transport_quantities(&t)?,
    })
}

/// `4^{k-1} / 2`, the leading-order conductance.
pub fn conductance_scale(k: usize) -> f64 {
    4f64.powi(k as i32 - 1) / 2.0
}

/// `2^{k-1}`, the number of nonclassical channels up to a constant.
pub fn noise_scale(k: usize) -> f64 {
    2f64.powi(k as i32 - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticRow {
    pub k: usize,
    pub theta: f64,
    pub g: f64,
    pub g_ratio: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub p_ratio: f64,
    #[serde(rename = "F")]
    pub f: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaSpread {
    pub k: usize,
    pub mean_g: f64,
    /// Population standard deviation of `g` over the grid divided by its mean.
    pub relative_std_g: f64,
    pub mean_g_ratio: f64,
    pub mean_p_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticsReport {
    pub rows: Vec<AsymptoticRow>,
    pub spread: Vec<ThetaSpread>,
    /// `|g/(4^{k-1}/2) - 1|` nonincreasing in `k` (grid means).
    pub conductance_converging: bool,
    /// `|P/2^{k-1} - 11/80|` nonincreasing in `k` (grid means).
    pub noise_converging: bool,
    pub shot_noise_constant: f64,
    pub random_matrix_constant: f64,
}

impl AsymptoticsReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,theta,g,g_ratio,P,P_ratio,F")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.k,
                fmt_float(r.theta),
                fmt_float(r.g),
                fmt_float(r.g_ratio),
                fmt_float(r.p),
                fmt_float(r.p_ratio),
                r.f.map(fmt_float).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Builds the asymptotics table from already computed results.
pub fn summarize_transport(results: &[TransportResult]) -> AsymptoticsReport {
    let rows: Vec<AsymptoticRow> = results
        .iter()
        .map(|r| AsymptoticRow {
            k: r.k,
            theta: r.theta,
            g: r.stats.g,
            g_ratio: r.stats.g / conductance_scale(r.k),
            p: r.stats.p,
            p_ratio: r.stats.p / noise_scale(r.k),
            f: r.stats.f,
        })
        .collect();
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let spread: Vec<ThetaSpread> = ks
        .iter()
        .map(|&k| {
            let sel: Vec<&AsymptoticRow> = rows.iter().filter(|r| r.k == k).collect();
            let m = sel.len() as f64;
            let mean = |f: &dyn Fn(&AsymptoticRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / m;
            let mean_g = mean(&|r| r.g);
            let var = sel.iter().map(|r| (r.g - mean_g).powi(2)).sum::<f64>() / m;
            ThetaSpread {
                k,
                mean_g,
                relative_std_g: if mean_g != 0.0 { var.sqrt() / mean_g.abs() } else { 0.0 },
                mean_g_ratio: mean(&|r| r.g_ratio),
                mean_p_ratio: mean(&|r| r.p_ratio),
            }
        })
        .collect();
    let g_dev: Vec<f64> = spread.iter().map(|s| (s.mean_g_ratio - 1.0).abs()).collect();
    let p_dev: Vec<f64> = spread
        .iter()
        .map(|s| (s.mean_p_ratio - SHOT_NOISE_CONSTANT).abs())
        .collect();
    AsymptoticsReport {
        rows,
        spread,
        conductance_converging: nonincreasing(&g_dev),
        noise_converging: nonincreasing(&p_dev),
        shot_noise_constant: SHOT_NOISE_CONSTANT,
        random_matrix_constant: RANDOM_MATRIX_CONSTANT,
    }
}

/// Evaluates every `(k, ϑ)` pair and summarizes.
pub fn transport_asymptotics(
    ks: &[usize],
    thetas: &[f64],
    method: TransmissionMethod,
    tol: f64,
) -> Result<AsymptoticsReport> {
    let mut results = Vec::with_capacity(ks.len() * thetas.len());
    for &k in ks {
        for &theta in thetas {
            results.push(evaluate_transport(k, theta, method, tol)?);
        }
    }
    Ok(summarize_transport(&results))
}

/// `m` equally spaced quasi-energies `2πj/m`.
pub fn theta_grid(m: usize) -> Vec<f64> {
    (0..m).map(|j| TAU * j as f64 / m as f64).collect()
}

//! Eigenvalues, resonance counting and Weyl-law fits.
//!
//! Eigenvalues are computed after an exact block-triangular deflation: the
//! sparsity graph of the matrix is split into strongly connected components,
//! and only the diagonal blocks of the resulting block-triangular form are
//! handed to the dense Schur solver. The open maps here have large nilpotent
//! parts (removed strips, words that leave through the hole); a dense solver
//! applied to the whole matrix scatters those zero eigenvalues onto circles
//! of radius `ε^{1/k}`, while the deflation returns them as exact zeros.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use faer::Mat;
use log::warn;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::format::fmt_float;
use crate::matrix::{ComplexMatrix, C64, ZERO};
use crate::classical::OpenBakerSpec;
use crate::quantize::{sector_core, MapFamily, ParitySector, QuantumMapId};

/// Largest matrix handed to the dense eigensolver.
pub const MAX_DENSE_EIGEN_DIMENSION: usize = 6000;

/// Eigenvalues with modulus up to `1 + SPECTRAL_SLACK` count as inside the unit disk.
pub const SPECTRAL_SLACK: f64 = 1e-10;

/// Distance from a counting radius below which an eigenvalue triggers a warning.
pub const BOUNDARY_WARNING_DISTANCE: f64 = 1e-9;

fn canonical_arg(z: C64) -> f64 {
    let a = z.arg();
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

/// Eigenvalue multiset in canonical order: modulus descending, then argument
/// ascending in `[0, 2π)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    eigenvalues: Vec<C64>,
    /// Hilbert-space dimension `N` of the map; for a parity sector this is
    /// twice the number of eigenvalues.
    pub dimension: usize,
    pub source: Option<QuantumMapId>,
    pub sector: ParitySector,
}

impl Spectrum {
    pub fn new(mut eigenvalues: Vec<C64>, dimension: usize, source: Option<QuantumMapId>, sector: ParitySector) -> Self {
        eigenvalues.sort_by(|a, b| {
            b.norm()
                .total_cmp(&a.norm())
                .then(canonical_arg(*a).total_cmp(&canonical_arg(*b)))
        });
        Self {
            eigenvalues,
            dimension,
            source,
            sector,
        }
    }

    /// A bare multiset with no provenance.
    pub fn from_values(values: Vec<C64>) -> Self {
        let n = values.len();
        Self::new(values, n, None, ParitySector::Full)
    }

    pub fn with_source(mut self, source: QuantumMapId, sector: ParitySector) -> Self {
        self.dimension = source.n;
        self.source = Some(source);
        self.sector = sector;
        self
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |z| z.norm())
    }

    /// Eigenvalues with modulus above `threshold`.
    pub fn nonzero(&self, threshold: f64) -> Vec<C64> {
        self.eigenvalues
            .iter()
            .copied()
            .filter(|z| z.norm() > threshold)
            .collect()
    }

    /// CSV `re,im,modulus,arg` with `arg` in `[0, 2π)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "re,im,modulus,arg")?;
        for z in &self.eigenvalues {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_float(z.re),
                fmt_float(z.im),
                fmt_float(z.norm()),
                fmt_float(canonical_arg(*z))
            )?;
        }
        Ok(())
    }

    /// Reads eigenvalues back from [`Spectrum::write_csv`] output (only `re,im` are used).
    pub fn read_csv<R: BufRead>(r: R, dimension: usize) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = || -> Result<f64> {
                parts
                    .next()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Domain(format!("malformed spectrum line {}: {line:?}", i + 1)))
            };
            let (re, im) = (next()?, next()?);
            values.push(C64::new(re, im));
        }
        Ok(Self::new(values, dimension, None, ParitySector::Full))
    }
}

/// Strongly connected components of the sparsity graph (edge `j → i` when
/// `M[i, j] ≠ 0`).
fn sparsity_components(m: &ComplexMatrix) -> Vec<Vec<usize>> {
    let n = m.rows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for j in 0..n {
        for i in 0..n {
            if m.get(i, j) != ZERO {
                graph.add_edge(nodes[j], nodes[i], ());
            }
        }
    }
    tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut idx: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
            idx.sort_unstable();
            idx
        })
        .collect()
}

fn check_eigen_input(m: &ComplexMatrix) -> Result<()> {
    if !m.is_square() {
        return domain(format!("eigenvalues need a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    if m.rows() > MAX_DENSE_EIGEN_DIMENSION {
        return domain(format!(
            "dimension {} exceeds the dense eigensolver limit {MAX_DENSE_EIGEN_DIMENSION}; \
             reduce by parity first",
            m.rows()
        ));
    }
    if !m.is_finite() {
        return domain("matrix has non-finite entries");
    }
    Ok(())
}

fn schur_eigenvalues(block: &Mat<C64>) -> Result<Vec<C64>> {
    let size = block.nrows();
    let eig = block
        .eigenvalues()
        .map_err(|e| Error::Solver(format!("Schur iteration failed on a {size}x{size} block: {e:?}")))?;
    if eig.iter().any(|z| !z.is_finite()) {
        return Err(Error::Solver(format!("non-finite eigenvalue in a {size}x{size} block")));
    }
    Ok(eig)
}

fn component_spectrum(m: &ComplexMatrix, solve: impl Fn(&Mat<C64>) -> Result<Vec<C64>>) -> Result<Spectrum> {
    check_eigen_input(m)?;
    let mut values = Vec::with_capacity(m.rows());
    for component in sparsity_components(m) {
        if let [i] = component[..] {
            values.push(m.get(i, i));
            continue;
        }
        let size = component.len();
        let block = Mat::<C64>::from_fn(size, size, |a, b| m.get(component[a], component[b]));
        values.extend(solve(&block)?);
    }
    Ok(Spectrum::from_values(values))
}

/// All eigenvalues with multiplicity, in canonical order.
pub fn eigen_spectrum(m: &ComplexMatrix) -> Result<Spectrum> {
    component_spectrum(m, schur_eigenvalues)
}

/// Spectrum of the DFT-family open map on one parity sector, computed from
/// the sector core and padded with the zeros of the discarded columns.
pub fn sector_spectrum(spec: &OpenBakerSpec, n: usize, sector: ParitySector) -> Result<Spectrum> {
    let id = QuantumMapId::new(MapFamily::Dft, spec.clone(), n)?;
    let core = sector_core(spec, n, sector)?;
    let mut values = eigen_spectrum(&core.matrix)?.eigenvalues;
    values.resize(core.sector_dimension, ZERO);
    Ok(Spectrum::new(values, n, Some(id), sector))
}

fn numerical_rank(singular: &[f64], rank_tol: f64) -> usize {
    let top = singular.iter().copied().fold(0.0, f64::max);
    singular.iter().filter(|&&s| s > rank_tol * top && s > 0.0).count()
}

/// Splits the generalized kernel off one block. `range(M^j)` shrinks until
/// `j` reaches the index of the zero eigenvalue; `M` restricted to the
/// stable range is invertible and carries every nonzero eigenvalue.
fn kernel_deflated_eigenvalues(block: &Mat<C64>, rank_tol: f64) -> Result<Vec<C64>> {
    let n = block.nrows();
    let svd_err = |e| Error::Solver(format!("SVD failed on a {n}x{n} block: {e:?}"));
    let mut power = block.clone();
    let mut rank = numerical_rank(&power.singular_values().map_err(svd_err)?, rank_tol);
    while rank > 0 {
        let next = block * &power;
        let r = numerical_rank(&next.singular_values().map_err(svd_err)?, rank_tol);
        if r == rank {
            break;
        }
        power = next;
        rank = r;
    }
    if rank == n {
        return schur_eigenvalues(block);
    }
    let mut values = vec![ZERO; n - rank];
    if rank > 0 {
        let svd = power.thin_svd().map_err(svd_err)?;
        let s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let u = svd.U();
        let q = Mat::<C64>::from_fn(n, rank, |i, c| u[(i, order[c])]);
        let core = q.adjoint() * block * &q;
        values.extend(schur_eigenvalues(&core)?);
    }
    Ok(values)
}

/// Like [`eigen_spectrum`], but each irreducible block also has its
/// generalized kernel removed exactly (ranks of powers decided with the
/// relative singular-value threshold `rank_tol`). Use for matrices whose
/// zero eigenvalue is defective inside a strongly connected block, where a
/// Schur solver returns a cloud of radius about `ε^{1/index}`.
pub fn eigen_spectrum_kernel_deflated(m: &ComplexMatrix, rank_tol: f64) -> Result<Spectrum> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return domain("rank tolerance must lie in (0, 1)");
    }
    component_spectrum(m, |b| kernel_deflated_eigenvalues(b, rank_tol))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub checked: usize,
    pub matrix_norm: f64,
    /// Largest `min_{|v|=1} |Mv - λv| / |M|` over the sampled eigenvalues.
    pub max_relative_residual: f64,
}

impl ResidualReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_relative_residual <= tol
    }
}

/// Checks sampled eigenvalues against the matrix: the best unit vector's
/// residual `|Mv - λv|` is the smallest singular value of `M - λI`.
pub fn verify_eigenpairs(m: &ComplexMatrix, spectrum: &Spectrum, samples: usize, seed: u64) -> Result<ResidualReport> {
    if spectrum.len() != m.rows() || !m.is_square() {
        return domain("spectrum size does not match the matrix");
    }
    let matrix_norm = m.op_norm()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, spectrum.len(), samples.min(spectrum.len()));
    let mut worst = 0.0f64;
    for idx in picks.iter() {
        let lambda = spectrum.eigenvalues[idx];
        let shifted = ComplexMatrix::from_fn(m.rows(), m.cols(), |i, j| {
            if i == j {
                m.get(i, j) - lambda
            } else {
                m.get(i, j)
            }
        });
        let smallest = shifted.singular_values()?.last().copied().unwrap_or(0.0);
        let scale = if matrix_norm > 0.0 { matrix_norm } else { 1.0 };
        worst = worst.max(smallest / scale);
    }
    Ok(ResidualReport {
        checked: picks.len(),
        matrix_norm,
        max_relative_residual: worst,
    })
}

/// Counting region `{ r < |λ| ≤ 1, |arg(λ e^{iϑ})| ≤ ρ }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SectorQuery {
    pub r: f64,
    pub theta: f64,
    pub rho: f64,
}

impl SectorQuery {
    pub fn new(r: f64, theta: f64, rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r) {
            return domain(format!("inner radius must lie in [0, 1), got {r}"));
        }
        if !(rho > 0.0 && rho <= PI) {
            return domain(format!("half-width must lie in (0, π], got {rho}"));
        }
        if !theta.is_finite() {
            return domain("sector center angle must be finite");
        }
        Ok(Self { r, theta, rho })
    }

    /// The full annulus `{|λ| > r}`.
    pub fn annulus(r: f64) -> Result<Self> {
        Self::new(r, 0.0, PI)
    }

    pub fn contains(&self, z: C64) -> bool {
        let m = z.norm();
        if m <= self.r || m > 1.0 + SPECTRAL_SLACK {
            return false;
        }
        self.rho >= PI || (z * C64::from_polar(1.0, self.theta)).arg().abs() <= self.rho
    }
}

/// Number of eigenvalues (with multiplicity) inside the query region.
pub fn count_sector(spectrum: &Spectrum, query: &SectorQuery) -> usize {
    let close = near_boundary(spectrum, query.r);
    if close > 0 {
        warn!(
            "{close} eigenvalue(s) within {BOUNDARY_WARNING_DISTANCE:e} of the counting radius {}",
            query.r
        );
    }
    spectrum
        .eigenvalues
        .iter()
        .filter(|z| query.contains(**z))
        .count()
}

/// Eigenvalues whose modulus is within [`BOUNDARY_WARNING_DISTANCE`] of `r`.
pub fn near_boundary(spectrum: &Spectrum, r: f64) -> usize {
    spectrum
        .eigenvalues
        .iter()
        .filter(|z| (z.norm() - r).abs() < BOUNDARY_WARNING_DISTANCE)
        .count()
}

/// Number of eigenvalues with `|λ| ≤ threshold`.
pub fn kernel_dimension(spectrum: &Spectrum, threshold: f64) -> usize {
    spectrum
        .eigenvalues
        .iter()
        .filter(|z| z.norm() <= threshold)
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeylPoint {
    #[serde(rename = "N")]
    pub n: usize,
    pub count: usize,
    /// `ln(count) - (intercept + slope ln N)`.
    pub log_residual: f64,
}

/// Least-squares fit of `ln n(N, r)` against `ln N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeylFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<WeylPoint>,
    /// `count_{i+1} / count_i` for consecutive entries of the input series.
    pub doubling_ratios: Vec<f64>,
}

impl WeylFit {
    pub fn slope_within(&self, mu: f64, tol: f64) -> bool {
        (self.slope - mu).abs() <= tol
    }

    pub fn ratios_within(&self, lo: f64, hi: f64) -> bool {
        self.doubling_ratios.iter().all(|r| (lo..=hi).contains(r))
    }
}

pub fn weyl_fit(series: &[(usize, usize)]) -> Result<WeylFit> {
    let usable: Vec<(usize, usize)> = series.iter().copied().filter(|&(n, c)| n > 0 && c > 0).collect();
    if usable.len() < 2 {
        return domain("a Weyl fit needs at least two points with positive counts");
    }
    let xs: Vec<f64> = usable.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|&(_, c)| (c as f64).ln()).collect();
    let len = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / len, ys.iter().sum::<f64>() / len);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return domain("a Weyl fit needs at least two distinct dimensions");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let points = usable
        .iter()
        .zip(xs.iter().zip(&ys))
        .map(|(&(n, count), (x, y))| WeylPoint {
            n,
            count,
            log_residual: y - (intercept + slope * x),
        })
        .collect();
    let doubling_ratios = series
        .windows(2)
        .filter(|w| w[0].1 > 0)
        .map(|w| w[1].1 as f64 / w[0].1 as f64)
        .collect();
    Ok(WeylFit {
        slope,
        intercept,
        points,
        doubling_ratios,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub counts: Vec<usize>,
    /// `counts · (N/D)^{-μ}`.
    pub rescaled: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileTable {
    pub radii: Vec<f64>,
    pub mu: f64,
    pub rows: Vec<ProfileRow>,
}

impl ProfileTable {
    /// Long-format CSV `N,r,count,rescaled`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "N,r,count,rescaled")?;
        for row in &self.rows {
            for ((r, c), s) in self.radii.iter().zip(&row.counts).zip(&row.rescaled) {
                writeln!(w, "{},{},{c},{}", row.n, fmt_float(*r), fmt_float(*s))?;
            }
        }
        Ok(())
    }
}

pub fn validate_radii(radii: &[f64]) -> Result<()> {
    if radii.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return domain("radii must lie in (0, 1)");
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return domain("radii must be strictly increasing");
    }
    Ok(())
}

/// Annulus counts `n(N, r)` rescaled by `(N/D)^{-μ}` for each spectrum.
pub fn profile_curve(spectra: &[Spectrum], base: usize, mu: f64, radii: &[f64]) -> Result<ProfileTable> {
    validate_radii(radii)?;
    if base == 0 {
        return domain("base must be positive");
    }
    let rows = spectra
        .iter()
        .map(|s| {
            let factor = (s.dimension as f64 / base as f64).powf(-mu);
            let counts: Vec<usize> = radii
                .iter()
                .map(|&r| count_sector(s, &SectorQuery { r, theta: 0.0, rho: PI }))
                .collect();
            let rescaled = counts.iter().map(|&c| c as f64 * factor).collect();
            ProfileRow {
                n: s.dimension,
                counts,
                rescaled,
            }
        })
        .collect();
    Ok(ProfileTable {
        radii: radii.to_vec(),
        mu,
        rows,
    })
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Nonzero eigenvalue of the one-digit propagator with the larger modulus.
pub const LAMBDA_PLUS: C64 = C64::new(1.0, 0.0);

/// `i/√3`, the other nonzero eigenvalue of the one-digit propagator.
pub fn lambda_minus() -> C64 {
    C64::new(0.0, 1.0 / 3f64.sqrt())
}

/// Points of modulus `3^{-p/2k}` in the closed-form toy spectrum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeRing {
    pub p: usize,
    pub modulus: f64,
    pub points: Vec<C64>,
    /// Total multiplicity `C(k, p)` of the ring.
    pub total_multiplicity: usize,
}

/// Closed-form spectrum of the Walsh-quantized open 3-baker at `N = 3^k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyLattice {
    pub k: usize,
    /// Rings `p = 0..=k`; ring 0 is `{λ₊}`, ring `k` is `{λ₋}`.
    pub rings: Vec<LatticeRing>,
    pub zero_multiplicity: usize,
}

impl ToyLattice {
    pub fn dimension(&self) -> usize {
        3usize.pow(self.k as u32)
    }

    pub fn nonzero_count(&self) -> usize {
        self.rings.iter().map(|r| r.total_multiplicity).sum()
    }

    /// Ring index whose modulus is closest to `|z|`.
    pub fn nearest_ring(&self, z: C64) -> usize {
        let m = z.norm();
        self.rings
            .iter()
            .min_by(|a, b| (a.modulus - m).abs().total_cmp(&(b.modulus - m).abs()))
            .map_or(0, |r| r.p)
    }
}

/// `{λ₊} ∪ {λ₋} ∪ {e^{2πiℓ/k} λ₊^{1-p/k} λ₋^{p/k} : 0 ≤ ℓ < k, 1 ≤ p < k}`
/// with principal fractional powers, plus zero of multiplicity `3^k - 2^k`.
pub fn toy_closed_spectrum(k: usize) -> Result<ToyLattice> {
    if k == 0 {
        return domain("toy spectrum needs k >= 1");
    }
    if k >= 40 {
        return domain("toy spectrum dimension overflows");
    }
    let kf = k as f64;
    let mut rings = vec![LatticeRing {
        p: 0,
        modulus: 1.0,
        points: vec![LAMBDA_PLUS],
        total_multiplicity: 1,
    }];
    for p in 1..k {
        let frac = p as f64 / kf;
        let modulus = 3f64.powf(-frac / 2.0);
        let base_phase = PI / 2.0 * frac;
        let points = (0..k)
            .map(|l| C64::from_polar(modulus, TAU * l as f64 / kf + base_phase))
            .collect();
        rings.push(LatticeRing {
            p,
            modulus,
            points,
            total_multiplicity: binomial(k, p),
        });
    }
    rings.push(LatticeRing {
        p: k,
        modulus: lambda_minus().norm(),
        points: vec![lambda_minus()],
        total_multiplicity: 1,
    });
    let dim = 3usize.pow(k as u32);
    Ok(ToyLattice {
        k,
        rings,
        zero_multiplicity: dim - (1usize << k),
    })
}

/// Observed multiplicity of one lattice point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointTally {
    pub ring: usize,
    pub point: C64,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RingTally {
    pub p: usize,
    pub observed: usize,
    pub expected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumMatch {
    pub tolerance: f64,
    pub max_distance: f64,
    /// Computed eigenvalues farther than `tolerance` from every lattice point.
    pub unmatched: usize,
    pub zero_observed: usize,
    pub zero_expected: usize,
    pub rings: Vec<RingTally>,
    pub points: Vec<PointTally>,
}

impl SpectrumMatch {
    pub fn all_matched(&self) -> bool {
        self.unmatched == 0
            && self.zero_observed == self.zero_expected
            && self.rings.iter().all(|r| r.observed == r.expected)
    }
}

/// Matches each computed eigenvalue to its nearest lattice point (zero
/// included) and tallies multiplicities per point and per ring.
pub fn compare_spectra(computed: &Spectrum, reference: &ToyLattice, tol: f64) -> Result<SpectrumMatch> {
    if computed.len() != reference.dimension() {
        return domain(format!(
            "spectrum has {} eigenvalues but the k={} lattice has dimension {}",
            computed.len(),
            reference.k,
            reference.dimension()
        ));
    }
    let mut candidates: Vec<(Option<usize>, C64)> = vec![(None, ZERO)];
    for ring in &reference.rings {
        candidates.extend(ring.points.iter().map(|&z| (Some(ring.p), z)));
    }
    let mut tallies = vec![0usize; candidates.len()];
    let mut max_distance = 0.0f64;
    let mut unmatched = 0;
    for &z in computed.eigenvalues() {
        let (best, dist) = candidates
            .iter()
            .enumerate()
            .map(|(i, (_, c))| (i, (z - c).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("candidate list is never empty");
        max_distance = max_distance.max(dist);
        if dist > tol {
            unmatched += 1;
        } else {
            tallies[best] += 1;
        }
    }
    let rings = reference
        .rings
        .iter()
        .map(|ring| RingTally {
            p: ring.p,
            observed: candidates
                .iter()
                .zip(&tallies)
                .filter(|((r, _), _)| *r == Some(ring.p))
                .map(|(_, t)| t)
                .sum(),
            expected: ring.total_multiplicity,
        })
        .collect();
    let points = candidates
        .iter()
        .zip(&tallies)
        .skip(1)
        .map(|(&(ring, point), &multiplicity)| PointTally {
            ring: ring.unwrap_or(0),
            point,
            multiplicity,
        })
        .collect();
    Ok(SpectrumMatch {
        tolerance: tol,
        max_distance,
        unmatched,
        zero_observed: tallies[0],
        zero_expected: reference.zero_multiplicity,
        rings,
        points,
    })
}

/// Spectrum of `M^k` against `{λ₊^{k-p} λ₋^p}` with multiplicities `C(k, p)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerRingReport {
    pub k: usize,
    /// Eigenvalues of `M^k` within `tolerance` of `λ₋^p`, indexed by `p`.
    pub totals: Vec<usize>,
    pub expected: Vec<usize>,
    pub kernel: usize,
    pub max_distance: f64,
    pub tolerance: f64,
}

impl PowerRingReport {
    pub fn consistent(&self) -> bool {
        self.totals == self.expected && self.max_distance <= self.tolerance
    }
}

/// Raises the toy matrix to the `k`-th power (sparse products) and assigns
/// each nonzero eigenvalue of the power to the nearest `λ₊^{k-p} λ₋^p`.
pub fn power_ring_totals(toy: &ComplexMatrix, k: usize, tol: f64) -> Result<PowerRingReport> {
    if k == 0 {
        return domain("power must be at least 1");
    }
    let mut power = toy.clone();
    for _ in 1..k {
        power = toy.matmul_sparse_left(&power);
    }
    let spectrum = eigen_spectrum(&power)?;
    let targets: Vec<C64> = (0..=k).map(|p| lambda_minus().powu(p as u32)).collect();
    let mut totals = vec![0; k + 1];
    let mut max_distance = 0.0f64;
    let mut kernel = 0;
    // smallest nonzero target has modulus 3^{-k/2}
    let zero_cut = 0.5 * 3f64.powf(-(k as f64) / 2.0);
    for &z in spectrum.eigenvalues() {
        if z.norm() < zero_cut {
            kernel += 1;
            continue;
        }
        let (p, d) = targets
            .iter()
            .enumerate()
            .map(|(p, t)| (p, (z - t).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("targets are never empty");
        totals[p] += 1;
        max_distance = max_distance.max(d);
    }
    Ok(PowerRingReport {
        k,
        totals,
        expected: (0..=k).map(|p| binomial(k, p)).collect(),
        kernel,
        max_distance,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::ONE;
    use crate::quantize::{build_toy_diagonal, quantize_open};
    use crate::transforms::build_dft_centered;
    use approx::assert_abs_diff_eq;

    #[test]
    fn diagonal_spectrum() {
        let m = ComplexMatrix::diagonal(&[C64::new(3.0, 0.0), C64::new(0.0, -1.0), ZERO]);
        let s = eigen_spectrum(&m).unwrap();
        assert_eq!(s.eigenvalues(), &[C64::new(3.0, 0.0), C64::new(0.0, -1.0), ZERO]);
    }

    #[test]
    fn nilpotent_spectrum_is_exactly_zero() {
        let m = ComplexMatrix::from_row_major(2, 2, &[ZERO, ONE, ZERO, ZERO]).unwrap();
        let s = eigen_spectrum(&m).unwrap();
        assert_eq!(s.eigenvalues(), &[ZERO, ZERO]);
    }

    #[test]
    fn one_digit_toy_propagator() {
        let g_star = build_dft_centered(3).unwrap().adjoint();
        let proj = ComplexMatrix::diagonal(&[ONE, ZERO, ONE]);
        let m = g_star.matmul(&proj);
        let s = eigen_spectrum(&m).unwrap();
        let ev = s.eigenvalues();
        assert!((ev[0] - LAMBDA_PLUS).norm() < 1e-14);
        assert!((ev[1] - lambda_minus()).norm() < 1e-14);
        assert!(ev[2].norm() < 1e-14);
    }

    #[test]
    fn kernel_deflation_on_defective_block() {
        // |toy|^2: one eigenvalue 2/3, the rest a defective zero inside one block
        let t = crate::classical::transfer_matrix(&build_toy_diagonal(81).unwrap());
        let plain = eigen_spectrum(&t).unwrap();
        assert!(plain.eigenvalues()[1].norm() > 1e-8);
        let s = eigen_spectrum_kernel_deflated(&t, 1e-10).unwrap();
        assert_eq!(s.len(), 81);
        assert!((s.eigenvalues()[0] - C64::new(2.0 / 3.0, 0.0)).norm() < 1e-12);
        assert!(s.eigenvalues()[1..].iter().all(|z| *z == ZERO));

        let nil = ComplexMatrix::from_row_major(2, 2, &[ZERO, ONE, ONE, ZERO]).unwrap();
        let s = eigen_spectrum_kernel_deflated(&nil, 1e-10).unwrap();
        assert!((s.eigenvalues()[0].norm() - 1.0).abs() < 1e-14);
        assert!(eigen_spectrum_kernel_deflated(&nil, 0.0).is_err());
    }

    #[test]
    fn sector_spectrum_matches_dense_restriction() {
        let spec = OpenBakerSpec::five_baker();
        let b = quantize_open(&spec, 100).unwrap();
        for sector in [ParitySector::Even, ParitySector::Odd] {
            let dense = eigen_spectrum(&crate::quantize::parity_restrict(&b, sector).unwrap()).unwrap();
            let fast = sector_spectrum(&spec, 100, sector).unwrap();
            assert_eq!(fast.len(), 50);
            assert_eq!(fast.dimension, 100);
            for r in [0.5, 0.1, 0.01, 0.001] {
                let q = SectorQuery::annulus(r).unwrap();
                assert_eq!(count_sector(&dense, &q), count_sector(&fast, &q));
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(eigen_spectrum(&ComplexMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn canonical_order() {
        let s = Spectrum::from_values(vec![
            C64::new(0.0, -0.5),
            C64::new(0.5, 0.0),
            C64::new(-1.0, 0.0),
            C64::new(0.0, 0.5),
        ]);
        assert_eq!(
            s.eigenvalues(),
            &[C64::new(-1.0, 0.0), C64::new(0.5, 0.0), C64::new(0.0, 0.5), C64::new(0.0, -0.5)]
        );
    }

    #[test]
    fn residual_contract_on_open_map() {
        let b = quantize_open(&OpenBakerSpec::five_baker(), 50).unwrap();
        let s = eigen_spectrum(&b).unwrap();
        let report = verify_eigenpairs(&b, &s, 10, 7).unwrap();
        assert_eq!(report.checked, 10);
        assert!(report.within(1e-8), "{report:?}");
    }

    #[test]
    fn sector_membership() {
        let q = SectorQuery::new(0.5, 0.0, PI / 4.0).unwrap();
        assert!(q.contains(C64::new(0.8, 0.1)));
        assert!(!q.contains(C64::new(0.0, 0.8)));
        assert!(!q.contains(C64::new(0.5, 0.0)));
        assert!(q.contains(C64::new(1.0 + 5e-11, 0.0)));
        assert!(!q.contains(C64::new(1.0 + 1e-9, 0.0)));
        // ϑ rotates the sector: arg(λ e^{iϑ}) near 0 means arg λ ≈ -ϑ
        let q = SectorQuery::new(0.1, PI / 2.0, 0.1).unwrap();
        assert!(q.contains(C64::new(0.0, -0.7)));
        assert!(SectorQuery::new(1.0, 0.0, 1.0).is_err());
        assert!(SectorQuery::new(0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn count_examples() {
        let s = Spectrum::from_values(vec![ONE, lambda_minus(), ZERO]);
        assert_eq!(count_sector(&s, &SectorQuery::annulus(0.9).unwrap()), 1);
        assert_eq!(count_sector(&s, &SectorQuery::annulus(0.5).unwrap()), 2);
        assert_eq!(count_sector(&s, &SectorQuery::annulus(0.0).unwrap()), 2);
    }

    #[test]
    fn kernel_examples() {
        let toy = eigen_spectrum(&build_toy_diagonal(27).unwrap()).unwrap();
        assert_eq!(kernel_dimension(&toy, 1e-6), 19);
        let b = eigen_spectrum(&quantize_open(&OpenBakerSpec::three_baker(), 9).unwrap()).unwrap();
        assert!(kernel_dimension(&b, 1e-6) >= 3);
        let id = eigen_spectrum(&ComplexMatrix::identity(5)).unwrap();
        assert_eq!(kernel_dimension(&id, 1e-6), 0);
    }

    #[test]
    fn weyl_fit_exact_series() {
        let series: Vec<_> = (0..4u32).map(|k| (20 * 5usize.pow(k), 3 << k)).collect();
        let fit = weyl_fit(&series).unwrap();
        assert_abs_diff_eq!(fit.slope, 2f64.ln() / 5f64.ln(), epsilon = 1e-12);
        assert!(fit.points.iter().all(|p| p.log_residual.abs() < 1e-12));
        assert_eq!(fit.doubling_ratios, vec![2.0, 2.0, 2.0]);
    }

    /// Ordinary least squares written out with sums, independent of `weyl_fit`.
    fn ols_slope(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0.ln()).sum();
        let sy: f64 = points.iter().map(|p| p.1.ln()).sum();
        let sxx: f64 = points.iter().map(|p| p.0.ln().powi(2)).sum();
        let sxy: f64 = points.iter().map(|p| p.0.ln() * p.1.ln()).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn weyl_fit_printed_counts() {
        let r01 = [(20, 10), (100, 19), (500, 36), (2500, 69)];
        let fit = weyl_fit(&r01).unwrap();
        let oracle = ols_slope(&r01.map(|(a, b)| (a as f64, b as f64)));
        assert_abs_diff_eq!(fit.slope, oracle, epsilon = 1e-12);
        // frozen from the oracle
        assert_abs_diff_eq!(fit.slope, 0.399745, epsilon = 1e-6);
        let mu = 2f64.ln() / 5f64.ln();
        assert!(fit.slope_within(mu, 0.08));

        let r0001 = [(20, 16), (100, 35), (500, 122), (2500, 402)];
        let fit = weyl_fit(&r0001).unwrap();
        assert!(fit.slope > 0.6);
        assert!(!fit.slope_within(mu, 0.08));
    }

    #[test]
    fn weyl_fit_needs_two_positive_points() {
        assert!(weyl_fit(&[(20, 4)]).is_err());
        assert!(weyl_fit(&[(20, 4), (100, 0)]).is_err());
        assert!(weyl_fit(&[(20, 4), (20, 5)]).is_err());
    }

    #[test]
    fn profile_examples() {
        let s = Spectrum::new(vec![ONE, C64::new(0.6, 0.0), C64::new(0.2, 0.0)], 15, None, ParitySector::Full);
        let t = profile_curve(&[s], 5, 0.5, &[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(t.rows[0].counts, vec![3, 2, 1]);
        let f = 3f64.powf(-0.5);
        for (c, r) in t.rows[0].counts.iter().zip(&t.rows[0].rescaled) {
            assert_abs_diff_eq!(*r, *c as f64 * f, epsilon = 1e-15);
        }
        let empty = Spectrum::new(vec![], 10, None, ParitySector::Full);
        let t = profile_curve(&[empty], 5, 0.5, &[0.1, 0.2]).unwrap();
        assert_eq!(t.rows[0].rescaled, vec![0.0, 0.0]);
        assert!(profile_curve(&[], 5, 0.5, &[0.5, 0.1]).is_err());
        assert!(profile_curve(&[], 5, 0.5, &[0.0]).is_err());
    }

    #[test]
    fn profile_of_toy_spectra_is_flat_at_half() {
        let mu = 2f64.ln() / 3f64.ln();
        let spectra: Vec<_> = (4..=6u32)
            .map(|k| {
                let n = 3usize.pow(k);
                let s = eigen_spectrum(&build_toy_diagonal(n).unwrap()).unwrap();
                Spectrum::new(s.eigenvalues().to_vec(), n, None, ParitySector::Full)
            })
            .collect();
        let t = profile_curve(&spectra, 3, mu, &[0.5]).unwrap();
        for row in &t.rows {
            assert_abs_diff_eq!(row.rescaled[0], 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn closed_form_small_k() {
        let l1 = toy_closed_spectrum(1).unwrap();
        assert_eq!(l1.rings.len(), 2);
        assert_eq!(l1.zero_multiplicity, 1);
        assert_eq!(l1.rings[1].points, vec![lambda_minus()]);
        let l2 = toy_closed_spectrum(2).unwrap();
        assert_eq!(l2.zero_multiplicity, 5);
        let ring = &l2.rings[1];
        assert_eq!(ring.total_multiplicity, 2);
        let r = 3f64.powf(-0.25);
        for (z, sign) in ring.points.iter().zip([1.0, -1.0]) {
            assert!((z - C64::from_polar(r, PI / 4.0) * sign).norm() < 1e-15);
        }
        for k in 1..=8 {
            let l = toy_closed_spectrum(k).unwrap();
            assert_eq!(l.nonzero_count(), 1 << k);
            assert_eq!(l.nonzero_count() + l.zero_multiplicity, l.dimension());
        }
        // peak ring |z| = 3^{-1/4} for even k
        let l6 = toy_closed_spectrum(6).unwrap();
        assert!(l6.rings.iter().any(|r| (r.modulus - 3f64.powf(-0.25)).abs() < 1e-15));
        assert!(toy_closed_spectrum(0).is_err());
    }

    #[test]
    fn k2_numerics_against_lattice() {
        let s = eigen_spectrum(&build_toy_diagonal(9).unwrap()).unwrap();
        let report = compare_spectra(&s, &toy_closed_spectrum(2).unwrap(), 1e-10).unwrap();
        assert!(report.all_matched(), "{report:?}");
        assert_eq!(report.zero_observed, 5);
    }

    #[test]
    fn k3_match_report() {
        let s = eigen_spectrum(&build_toy_diagonal(27).unwrap()).unwrap();
        let lattice = toy_closed_spectrum(3).unwrap();
        let report = compare_spectra(&s, &lattice, 1e-8).unwrap();
        assert!(report.all_matched(), "{report:?}");
        let inner: Vec<_> = report.rings[1..3].iter().map(|r| r.observed).collect();
        assert_eq!(inner, vec![3, 3]);
        assert!(compare_spectra(&Spectrum::from_values(vec![ZERO; 8]), &lattice, 1e-8).is_err());
        // a spectrum compared with its own exact lattice values has distance 0
        let mut exact = vec![ZERO; 19];
        for ring in &lattice.rings {
            exact.extend(&ring.points);
        }
        let exact = Spectrum::from_values(exact);
        let self_report = compare_spectra(&exact, &lattice, 0.0).unwrap();
        assert_eq!(self_report.max_distance, 0.0);
        assert_eq!(self_report.unmatched, 0);
    }

    #[test]
    fn power_oracle_small_k() {
        for k in 1..=4 {
            let toy = build_toy_diagonal(3usize.pow(k as u32)).unwrap();
            let report = power_ring_totals(&toy, k, 1e-8).unwrap();
            assert!(report.consistent(), "{report:?}");
            assert_eq!(report.kernel, 3usize.pow(k as u32) - (1 << k));
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(7, 3), 35);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn csv_round_trip() {
        let s = Spectrum::from_values(vec![C64::new(0.25, -0.5), C64::new(-0.1, 0.0)]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("re,im,modulus,arg\n0.25,-0.5,"));
        let back = Spectrum::read_csv(buf.as_slice(), 2).unwrap();
        assert_eq!(back.eigenvalues(), s.eigenvalues());
    }
}

//! Quantum baker's maps.
//!
//! Three constructions are provided, all in the position basis `|q_j>`:
//!
//! * the DFT family `G_N* blockdiag(G_{N/D} or 0)`, closed or open;
//! * the "tilted diagonal" toy matrix of the open 3-baker;
//! * the Walsh family `W_k* blockdiag(W_{k-1} or 0)` (or with `V`), which
//!   for the 3-baker reproduces the toy matrix at `N = 3^k`.
//!
//! The parity operator and the even/odd restriction live here as well.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::classical::OpenBakerSpec;
use crate::error::{domain, Error, Result};
use crate::matrix::{cis, ComplexMatrix, C64, ONE, ZERO};
use crate::transforms::{
    build_dft_centered, build_walsh_capped, checked_dimension, TensorState, WalshVariant,
    DEFAULT_DIMENSION_CAP,
};

/// Construction family of a quantum map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapFamily {
    Dft,
    ToyDiagonal,
    Walsh(WalshVariant),
}

impl fmt::Display for MapFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapFamily::Dft => f.write_str("dft"),
            MapFamily::ToyDiagonal => f.write_str("toy-diagonal"),
            MapFamily::Walsh(v) => write!(f, "walsh-{v}"),
        }
    }
}

impl FromStr for MapFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dft" => Ok(MapFamily::Dft),
            "toy" | "toy-diagonal" => Ok(MapFamily::ToyDiagonal),
            "walsh" | "walsh-V" | "walsh-v" => Ok(MapFamily::Walsh(WalshVariant::V)),
            "walsh-W" | "walsh-w" => Ok(MapFamily::Walsh(WalshVariant::W)),
            other => domain(format!("unknown map family {other:?}")),
        }
    }
}

/// Identifies one quantum matrix: family, classical map and dimension.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct QuantumMapId {
    pub family: MapFamily,
    pub spec: OpenBakerSpec,
    pub n: usize,
}

impl QuantumMapId {
    pub fn new(family: MapFamily, spec: OpenBakerSpec, n: usize) -> Result<Self> {
        let id = Self { family, spec, n };
        id.validate()?;
        Ok(id)
    }

    /// Checks the divisibility rules of the family.
    pub fn validate(&self) -> Result<()> {
        let d = self.spec.base();
        match self.family {
            MapFamily::Dft => {
                if self.n == 0 || !self.n.is_multiple_of(d) {
                    return domain(format!("dft quantization needs N divisible by {d}, got {}", self.n));
                }
            }
            MapFamily::ToyDiagonal => {
                if self.spec != OpenBakerSpec::three_baker() {
                    return domain("the toy diagonal model exists only for the open 3-baker");
                }
                if self.n == 0 || !self.n.is_multiple_of(3) {
                    return domain(format!("toy model needs N divisible by 3, got {}", self.n));
                }
            }
            MapFamily::Walsh(_) => {
                walsh_length(d, self.n)?;
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ComplexMatrix> {
        self.validate()?;
        match self.family {
            MapFamily::Dft => quantize_open(&self.spec, self.n),
            MapFamily::ToyDiagonal => build_toy_diagonal(self.n),
            MapFamily::Walsh(v) => walsh_quantize(&self.spec, walsh_length(self.spec.base(), self.n)?, v),
        }
    }
}

impl fmt::Display for QuantumMapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} D={} kept={:?} N={}", self.family, self.spec.base(), self.spec.kept(), self.n)
    }
}

/// `k` with `D^k = n`.
pub fn walsh_length(base: usize, n: usize) -> Result<usize> {
    let mut k = 0;
    let mut p = 1usize;
    while p < n {
        p = p
            .checked_mul(base)
            .ok_or_else(|| Error::Domain(format!("{n} is not a power of {base}")))?;
        k += 1;
    }
    if p != n || k == 0 {
        return domain(format!("Walsh quantization needs N = {base}^k with k >= 1, got {n}"));
    }
    Ok(k)
}

fn check_divisible(base: usize, n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(base) {
        return domain(format!("N = {n} is not a positive multiple of {base}"));
    }
    Ok(())
}

/// `left · blockdiag(blocks)`, with `None` blocks zero. Only nonzero column
/// blocks are multiplied.
fn times_block_diagonal(left: &ComplexMatrix, blocks: &[Option<&ComplexMatrix>]) -> Result<ComplexMatrix> {
    let n = left.rows();
    let m = left.cols() / blocks.len();
    if m * blocks.len() != left.cols() {
        return domain("block count does not divide the column count");
    }
    let mut out = ComplexMatrix::zeros(n, left.cols());
    let all_rows: Vec<usize> = (0..n).collect();
    for (l, block) in blocks.iter().enumerate() {
        let Some(block) = block else { continue };
        if block.rows() != m || block.cols() != m {
            return domain("block shape does not match the partition");
        }
        let cols: Vec<usize> = (l * m..(l + 1) * m).collect();
        let prod = left.submatrix(&all_rows, &cols).matmul(block);
        for i in 0..n {
            for (c, &j) in cols.iter().enumerate() {
                out.set(i, j, prod.get(i, c));
            }
        }
    }
    Ok(out)
}

/// `G_N* · blockdiag(B_0, ..., B_{D-1})` with `B_l = G_{N/D}` for kept
/// branches and zero otherwise.
fn dft_block_map(base: usize, n: usize, keep: impl Fn(usize) -> bool) -> Result<ComplexMatrix> {
    check_divisible(base, n)?;
    let g_star = build_dft_centered(n)?.adjoint();
    let g_small = build_dft_centered(n / base)?;
    let blocks: Vec<Option<&ComplexMatrix>> = (0..base).map(|l| keep(l).then_some(&g_small)).collect();
    times_block_diagonal(&g_star, &blocks)
}

/// Closed (unitary) baker `A_{D,N} = G_N* blockdiag(G_{N/D}, ..., G_{N/D})`.
pub fn quantize_closed(base: usize, n: usize) -> Result<ComplexMatrix> {
    if base < 2 {
        return domain("baker needs at least 2 branches");
    }
    dft_block_map(base, n, |_| true)
}

/// Open baker `A_{D,N} Π_D`: the closed map with removed column blocks zeroed.
pub fn quantize_open(spec: &OpenBakerSpec, n: usize) -> Result<ComplexMatrix> {
    dft_block_map(spec.base(), n, |l| spec.keeps(l))
}

/// `Π|q_j> = -|q_{N-1-j}>`.
pub fn parity_operator(n: usize) -> Result<ComplexMatrix> {
    if n == 0 {
        return domain("parity operator needs N >= 1");
    }
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        if i + j == n - 1 {
            C64::new(-1.0, 0.0)
        } else {
            ZERO
        }
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParitySector {
    Even,
    Odd,
    Full,
}

impl ParitySector {
    /// Coefficient `s` of `|q_{N-1-j}>` in the sector basis `(|q_j> + s|q_{N-1-j}>)/√2`.
    fn partner_sign(self) -> f64 {
        match self {
            ParitySector::Even => -1.0,
            ParitySector::Odd => 1.0,
            ParitySector::Full => 0.0,
        }
    }
}

impl fmt::Display for ParitySector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParitySector::Even => "even",
            ParitySector::Odd => "odd",
            ParitySector::Full => "full",
        })
    }
}

impl FromStr for ParitySector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "even" => Ok(ParitySector::Even),
            "odd" => Ok(ParitySector::Odd),
            "full" | "none" => Ok(ParitySector::Full),
            other => domain(format!("unknown parity sector {other:?}")),
        }
    }
}

/// Orthonormal isometry `C^{N/2} → C^N` onto the `+1` (even) or `−1` (odd)
/// eigenspace of [`parity_operator`]. Column `j < N/2` is
/// `(|q_j> ∓ |q_{N-1-j}>)/√2`, minus sign for the even sector.
pub fn parity_isometry(n: usize, sector: ParitySector) -> Result<ComplexMatrix> {
    if sector == ParitySector::Full {
        return Ok(ComplexMatrix::identity(n));
    }
    if n == 0 || !n.is_multiple_of(2) {
        return domain(format!("parity reduction needs even N, got {n}"));
    }
    let s = sector.partner_sign();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ok(ComplexMatrix::from_fn(n, n / 2, |i, j| {
        if i == j {
            C64::new(h, 0.0)
        } else if i == n - 1 - j {
            C64::new(s * h, 0.0)
        } else {
            ZERO
        }
    }))
}

/// Largest entry of `[B, Π]`, computed without forming products.
pub fn parity_commutator_defect(b: &ComplexMatrix) -> f64 {
    let n = b.rows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            // (BΠ)_{ij} = -B_{i,N-1-j},  (ΠB)_{ij} = -B_{N-1-i,j}
            m = m.max((b.get(n - 1 - i, j) - b.get(i, n - 1 - j)).norm());
        }
    }
    m
}

/// Matrix of `B` on one parity eigenspace, in the basis of [`parity_isometry`].
pub fn parity_restrict(b: &ComplexMatrix, sector: ParitySector) -> Result<ComplexMatrix> {
    if !b.is_square() {
        return domain("parity restriction needs a square matrix");
    }
    if sector == ParitySector::Full {
        return Ok(b.clone());
    }
    let n = b.rows();
    if !n.is_multiple_of(2) {
        return domain(format!("parity reduction needs even N, got {n}"));
    }
    let defect = parity_commutator_defect(b);
    if defect > 1e-10 {
        return Err(Error::Contract(format!(
            "matrix does not commute with parity (max commutator entry {defect:.3e})"
        )));
    }
    let s = sector.partner_sign();
    let h = n / 2;
    Ok(ComplexMatrix::from_fn(h, h, |a, c| {
        let (ar, cr) = (n - 1 - a, n - 1 - c);
        (b.get(a, c) + b.get(a, cr) * s + b.get(ar, c) * s + b.get(ar, cr)) * 0.5
    }))
}

/// Entry `(i, j)` of the DFT-family open map, from the geometric sum over
/// the block index. `O(1)` per entry; phases are reduced in integers.
pub fn open_map_entry(spec: &OpenBakerSpec, n: usize, i: usize, j: usize) -> C64 {
    let d = spec.base();
    let m = n / d;
    let (l, jj) = (j / m, j % m);
    if !spec.keeps(l) {
        return ZERO;
    }
    let turns = |num: i64, den: i64| cis(2.0 * PI * num.rem_euclid(den) as f64 / den as f64);
    let (n_i, d_i) = (n as i64, d as i64);
    let (i2, j2) = (2 * i as i64 + 1, 2 * jj as i64 + 1);
    // x = u / (2N) with u = (2i+1) - D(2j'+1)
    let u = i2 - d_i * j2;
    let outer = turns(i2 * l as i64, 2 * d_i);
    let half = turns(u, 4 * n_i);
    let sum = if u.rem_euclid(2 * n_i) == 0 {
        C64::new(m as f64, 0.0)
    } else {
        (ONE - turns(u, 2 * d_i)) / (ONE - turns(u, 2 * n_i))
    };
    outer * half * sum / ((n * m) as f64).sqrt()
}

/// Nonzero-spectrum core of a parity sector of the DFT-family open map.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorCore {
    /// Principal block on the sector basis vectors whose columns are not identically zero.
    pub matrix: ComplexMatrix,
    /// Sector dimension (`N/2`, or `N` for [`ParitySector::Full`]).
    pub sector_dimension: usize,
}

/// Restriction of the open map to a parity sector, reduced to the columns
/// that touch a kept strip. The discarded columns are identically zero, so
/// the full sector spectrum is the core spectrum plus zeros.
pub fn sector_core(spec: &OpenBakerSpec, n: usize, sector: ParitySector) -> Result<SectorCore> {
    check_divisible(spec.base(), n)?;
    let d = spec.base();
    let m = n / d;
    let keeps_index = |j: usize| spec.keeps(j / m);
    if sector == ParitySector::Full {
        let idx: Vec<usize> = (0..n).filter(|&j| keeps_index(j)).collect();
        let matrix = ComplexMatrix::from_fn(idx.len(), idx.len(), |a, c| open_map_entry(spec, n, idx[a], idx[c]));
        return Ok(SectorCore {
            matrix,
            sector_dimension: n,
        });
    }
    if !n.is_multiple_of(2) {
        return domain(format!("parity reduction needs even N, got {n}"));
    }
    if (0..d).any(|l| spec.keeps(l) != spec.keeps(d - 1 - l)) {
        return Err(Error::Contract(
            "kept branches are not mirror symmetric; the map does not commute with parity".into(),
        ));
    }
    let h = n / 2;
    let s = sector.partner_sign();
    let idx: Vec<usize> = (0..h).filter(|&a| keeps_index(a) || keeps_index(n - 1 - a)).collect();
    let matrix = ComplexMatrix::from_fn(idx.len(), idx.len(), |x, y| {
        let (a, c) = (idx[x], idx[y]);
        let (ar, cr) = (n - 1 - a, n - 1 - c);
        (open_map_entry(spec, n, a, c)
            + open_map_entry(spec, n, a, cr) * s
            + open_map_entry(spec, n, ar, c) * s
            + open_map_entry(spec, n, ar, cr))
            * 0.5
    });
    Ok(SectorCore {
        matrix,
        sector_dimension: h,
    })
}

/// Toy model of the open 3-baker: entries `3^{-1/2} exp((2πi/3)(ε+1/2)(ℓ+1/2))`
/// at `(3l + ε, l + ℓN/3)` for `ℓ ∈ {0, 2}`, zero elsewhere.
pub fn build_toy_diagonal(n: usize) -> Result<ComplexMatrix> {
    check_divisible(3, n)?;
    let third = n / 3;
    let modulus = 1.0 / 3f64.sqrt();
    let mut out = ComplexMatrix::zeros(n, n);
    for l in 0..third {
        for branch in [0usize, 2] {
            for eps in 0..3usize {
                let phase = 2.0 * PI / 3.0 * (eps as f64 + 0.5) * (branch as f64 + 0.5);
                out.set(3 * l + eps, l + branch * third, cis(phase) * modulus);
            }
        }
    }
    Ok(out)
}

/// Walsh quantization `W_k* blockdiag(W_{k-1} or 0)` (or `V_k`), built from
/// dense transforms. Unitary when every branch is kept.
pub fn walsh_quantize(spec: &OpenBakerSpec, len: usize, variant: WalshVariant) -> Result<ComplexMatrix> {
    if len == 0 {
        return domain("Walsh quantization needs k >= 1");
    }
    let base = spec.base();
    let outer = build_walsh_capped(base, len, variant, DEFAULT_DIMENSION_CAP)?.adjoint();
    let inner = build_walsh_capped(base, len - 1, variant, DEFAULT_DIMENSION_CAP)?;
    let blocks: Vec<Option<&ComplexMatrix>> = (0..base)
        .map(|l| spec.keeps(l).then_some(&inner))
        .collect();
    times_block_diagonal(&outer, &blocks)
}

/// `S π_kept` on one digit: the seed adjoint restricted to kept columns.
pub(crate) fn digit_propagator(spec: &OpenBakerSpec, variant: WalshVariant) -> Result<ComplexMatrix> {
    let seed = variant.seed(spec.base())?.adjoint();
    Ok(ComplexMatrix::from_fn(spec.base(), spec.base(), |r, c| {
        if spec.keeps(c) {
            seed.get(r, c)
        } else {
            ZERO
        }
    }))
}

/// The same matrix as [`walsh_quantize`], assembled directly from the
/// digit-shift rule: column `(ε_1 … ε_k)` maps to `(ε_2 … ε_k x)` with
/// amplitude `(S π_kept)[x, ε_1]`. `O(N D)` nonzeros, no dense products.
pub fn walsh_quantize_tensor(spec: &OpenBakerSpec, len: usize, variant: WalshVariant) -> Result<ComplexMatrix> {
    if len == 0 {
        return domain("Walsh quantization needs k >= 1");
    }
    let base = spec.base();
    let n = checked_dimension(base, len)?;
    if n > DEFAULT_DIMENSION_CAP {
        return domain(format!("dimension {n} exceeds the dense cap {DEFAULT_DIMENSION_CAP}"));
    }
    let prop = digit_propagator(spec, variant)?;
    let tail = n / base;
    let mut out = ComplexMatrix::zeros(n, n);
    for col in 0..n {
        let (first, rest) = (col / tail, col % tail);
        if !spec.keeps(first) {
            continue;
        }
        for x in 0..base {
            out.set(rest * base + x, col, prop.get(x, first));
        }
    }
    Ok(out)
}

/// Matrix-free Walsh open map: `v_1 ⊗ … ⊗ v_k ↦ v_2 ⊗ … ⊗ v_k ⊗ (S π_kept v_1)`.
pub fn tensor_open_apply(state: &TensorState, spec: &OpenBakerSpec, variant: WalshVariant) -> Result<TensorState> {
    if state.base() != spec.base() {
        return domain(format!(
            "state base {} does not match map base {}",
            state.base(),
            spec.base()
        ));
    }
    if state.is_empty() {
        return domain("tensor state must have at least one digit");
    }
    let base = spec.base();
    let prop = digit_propagator(spec, variant)?;
    let amps = state.amplitudes();
    let tail = amps.len() / base;
    let mut out = vec![ZERO; amps.len()];
    for (col, &a) in amps.iter().enumerate() {
        let (first, rest) = (col / tail, col % tail);
        if a == ZERO || !spec.keeps(first) {
            continue;
        }
        for x in 0..base {
            out[rest * base + x] += prop.get(x, first) * a;
        }
    }
    TensorState::new(base, state.len(), out)
}

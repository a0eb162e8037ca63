//! Fourier and Walsh transforms, the base-`D` digit codec, and quantized
//! observables depending on a single phase-space coordinate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::matrix::{cis, ComplexMatrix, C64, ZERO};

/// Largest dimension for which dense `D^k x D^k` Walsh matrices are built.
pub const DEFAULT_DIMENSION_CAP: usize = 8192;

/// Base-`D` expansion `j = sum_l eps_l D^(k-l)` of a position index, most
/// significant symbol first. Lexicographic order of words equals numeric
/// order of indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DGitWord {
    pub base: usize,
    pub symbols: Vec<usize>,
}

/// `D^k`, failing on overflow.
pub fn checked_dimension(base: usize, len: usize) -> Result<usize> {
    if base < 2 {
        return domain(format!("digit base must be at least 2, got {base}"));
    }
    u32::try_from(len)
        .ok()
        .and_then(|l| base.checked_pow(l))
        .ok_or_else(|| Error::Domain(format!("{base}^{len} overflows")))
}

pub fn digit_encode(j: usize, base: usize, len: usize) -> Result<DGitWord> {
    let n = checked_dimension(base, len)?;
    if j >= n {
        return domain(format!("index {j} out of range for {len} digits in base {base}"));
    }
    let mut symbols = vec![0; len];
    let mut rest = j;
    for s in symbols.iter_mut().rev() {
        *s = rest % base;
        rest /= base;
    }
    Ok(DGitWord { base, symbols })
}

pub fn digit_decode(word: &DGitWord) -> Result<usize> {
    checked_dimension(word.base, word.symbols.len())?;
    word.symbols.iter().try_fold(0usize, |acc, &s| {
        if s >= word.base {
            domain(format!("symbol {s} is not a base-{} digit", word.base))
        } else {
            Ok(acc * word.base + s)
        }
    })
}

/// Index of the word obtained by reversing the digits of `j`.
pub(crate) fn reverse_digits(mut j: usize, base: usize, len: usize) -> usize {
    let mut r = 0;
    for _ in 0..len {
        r = r * base + j % base;
        j /= base;
    }
    r
}

fn check_dimension(n: usize) -> Result<()> {
    if n == 0 {
        return domain("transform dimension must be at least 1");
    }
    Ok(())
}

/// Centered ("half-integer") DFT `G_N`: entry `N^(-1/2) exp(-2 pi i (j+1/2)(j'+1/2)/N)`.
pub fn build_dft_centered(n: usize) -> Result<ComplexMatrix> {
    check_dimension(n)?;
    let norm = 1.0 / (n as f64).sqrt();
    let nf = n as f64;
    Ok(ComplexMatrix::from_fn(n, n, |j, jp| {
        // (2j+1)(2j'+1)/(4N) turns, reduced exactly in integers.
        let num = ((2 * j + 1) * (2 * jp + 1)) % (4 * n);
        cis(-2.0 * PI * num as f64 / (4.0 * nf)) * norm
    }))
}

/// Plain DFT `F_N`: entry `N^(-1/2) exp(-2 pi i j j'/N)`.
pub fn build_dft_plain(n: usize) -> Result<ComplexMatrix> {
    check_dimension(n)?;
    let norm = 1.0 / (n as f64).sqrt();
    let nf = n as f64;
    Ok(ComplexMatrix::from_fn(n, n, |j, jp| {
        let num = (j * jp) % n;
        cis(-2.0 * PI * num as f64 / nf) * norm
    }))
}

/// Which Walsh transform: `V_k` is built from the plain DFT phases, `W_k`
/// from the half-integer ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum WalshVariant {
    /// `V_k`, seeded by `F_D`.
    V,
    /// `W_k`, seeded by `G_D`.
    W,
}

impl WalshVariant {
    /// The `D x D` transform the variant acts with on each digit.
    pub fn seed(self, base: usize) -> Result<ComplexMatrix> {
        match self {
            WalshVariant::V => build_dft_plain(base),
            WalshVariant::W => build_dft_centered(base),
        }
    }
}

impl fmt::Display for WalshVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WalshVariant::V => "V",
            WalshVariant::W => "W",
        })
    }
}

impl FromStr for WalshVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "V" | "v" => Ok(WalshVariant::V),
            "W" | "w" => Ok(WalshVariant::W),
            other => domain(format!("unknown Walsh variant {other:?} (expected V or W)")),
        }
    }
}

/// Dense Walsh transform of dimension `D^k`, with the default dimension cap.
pub fn build_walsh(base: usize, len: usize, variant: WalshVariant) -> Result<ComplexMatrix> {
    build_walsh_capped(base, len, variant, DEFAULT_DIMENSION_CAP)
}

/// Dense Walsh transform: entry `(j, j')` is `prod_l S[eps_l(j), eps_{k+1-l}(j')]`
/// where `S` is the seed DFT. `len = 0` gives the `1 x 1` identity.
pub fn build_walsh_capped(
    base: usize,
    len: usize,
    variant: WalshVariant,
    cap: usize,
) -> Result<ComplexMatrix> {
    let n = checked_dimension(base, len)?;
    if n > cap {
        return domain(format!(
            "Walsh dimension {base}^{len} = {n} exceeds the dimension cap {cap}"
        ));
    }
    let seed = variant.seed(base)?;
    let digits: Vec<Vec<usize>> = (0..n)
        .map(|j| digit_encode(j, base, len).map(|w| w.symbols))
        .collect::<Result<_>>()?;
    Ok(ComplexMatrix::from_fn(n, n, |j, jp| {
        let (a, b) = (&digits[j], &digits[jp]);
        (0..len).fold(C64::new(1.0, 0.0), |acc, l| acc * seed.get(a[l], b[len - 1 - l]))
    }))
}

/// A vector of `C^D ⊗ ... ⊗ C^D` (`k` factors) in the position basis,
/// amplitude index ordered like the digit words.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorState {
    base: usize,
    len: usize,
    amps: Vec<C64>,
}

impl TensorState {
    pub fn new(base: usize, len: usize, amps: Vec<C64>) -> Result<Self> {
        let n = checked_dimension(base, len)?;
        if amps.len() != n {
            return domain(format!(
                "tensor state of {len} base-{base} digits needs {n} amplitudes, got {}",
                amps.len()
            ));
        }
        Ok(Self { base, len, amps })
    }

    /// The position eigenstate `|q_j> = e_{eps_1} ⊗ ... ⊗ e_{eps_k}`.
    pub fn basis(base: usize, len: usize, j: usize) -> Result<Self> {
        let n = checked_dimension(base, len)?;
        if j >= n {
            return domain(format!("basis index {j} out of range {n}"));
        }
        let mut amps = vec![ZERO; n];
        amps[j] = C64::new(1.0, 0.0);
        Ok(Self { base, len, amps })
    }

    /// `v_1 ⊗ v_2 ⊗ ... ⊗ v_k`, with `v_1` the most significant factor.
    pub fn product(factors: &[Vec<C64>]) -> Result<Self> {
        let Some(first) = factors.first() else {
            return domain("a product state needs at least one factor");
        };
        let base = first.len();
        if factors.iter().any(|f| f.len() != base) {
            return domain("all tensor factors must have the same dimension");
        }
        checked_dimension(base, factors.len())?;
        let mut amps = vec![C64::new(1.0, 0.0)];
        for f in factors {
            amps = amps
                .iter()
                .flat_map(|&a| f.iter().map(move |&b| a * b))
                .collect();
        }
        Ok(Self {
            base,
            len: factors.len(),
            amps,
        })
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Applies the `D x D` matrix `op` to digit `axis` (0 = most significant) of
/// a tensor-ordered amplitude vector, in place.
pub(crate) fn apply_on_axis(amps: &mut [C64], base: usize, len: usize, axis: usize, op: &ComplexMatrix) {
    let stride = base.pow((len - 1 - axis) as u32);
    let block = stride * base;
    let mut scratch = vec![ZERO; base];
    for start in (0..amps.len()).step_by(block) {
        for offset in 0..stride {
            for (d, s) in scratch.iter_mut().enumerate() {
                *s = amps[start + offset + d * stride];
            }
            for r in 0..base {
                let mut acc = ZERO;
                for (c, &s) in scratch.iter().enumerate() {
                    acc += op.get(r, c) * s;
                }
                amps[start + offset + r * stride] = acc;
            }
        }
    }
}

/// Matrix-free Walsh transform: `v_1 ⊗ ... ⊗ v_k ↦ S v_k ⊗ ... ⊗ S v_1`.
/// Cost `O(D^k · k · D)`.
pub fn walsh_apply(state: &TensorState, variant: WalshVariant) -> Result<TensorState> {
    let (base, len) = (state.base, state.len);
    let seed = variant.seed(base)?;
    let mut amps: Vec<C64> = (0..state.amps.len())
        .map(|j| state.amps[reverse_digits(j, base, len)])
        .collect();
    for axis in 0..len {
        apply_on_axis(&mut amps, base, len, axis, &seed);
    }
    Ok(TensorState { base, len, amps })
}

/// Which coordinate an observable depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Position,
    Momentum,
}

/// Quantized positions (or momenta) `(j + 1/2)/N`.
pub fn grid_points(n: usize) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect()
}

/// `Op_N(f)` for `f` sampled on the grid `(j + 1/2)/N`: a diagonal matrix in
/// position, or `G_N* diag(samples) G_N` in momentum.
pub fn quantize_observable(samples: &[f64], axis: Axis, n: usize) -> Result<ComplexMatrix> {
    if samples.len() != n {
        return domain(format!(
            "observable needs {n} grid samples, got {}",
            samples.len()
        ));
    }
    check_dimension(n)?;
    let diag: Vec<C64> = samples.iter().map(|&s| C64::new(s, 0.0)).collect();
    let d = ComplexMatrix::diagonal(&diag);
    match axis {
        Axis::Position => Ok(d),
        Axis::Momentum => {
            let g = build_dft_centered(n)?;
            Ok(g.adjoint().matmul(&d).matmul(&g))
        }
    }
}

/// Samples `f` on the grid and quantizes it.
pub fn quantize_function(f: impl Fn(f64) -> f64, axis: Axis, n: usize) -> Result<ComplexMatrix> {
    let samples: Vec<f64> = grid_points(n).into_iter().map(f).collect();
    quantize_observable(&samples, axis, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn encode_examples() {
        assert_eq!(digit_encode(5, 3, 2).unwrap().symbols, vec![1, 2]);
        assert_eq!(digit_encode(0, 5, 3).unwrap().symbols, vec![0, 0, 0]);
        assert_eq!(digit_encode(8, 2, 4).unwrap().symbols, vec![1, 0, 0, 0]);
        assert!(digit_encode(9, 3, 2).is_err());
        assert!(digit_encode(0, 1, 2).is_err());
    }

    #[test]
    fn decode_examples() {
        let w = |base, symbols: &[usize]| DGitWord { base, symbols: symbols.to_vec() };
        assert_eq!(digit_decode(&w(3, &[2, 1])).unwrap(), 7);
        assert_eq!(digit_decode(&w(4, &[0])).unwrap(), 0);
        assert!(digit_decode(&w(3, &[3, 0])).is_err());
        for j in 0..243 {
            assert_eq!(digit_decode(&digit_encode(j, 3, 5).unwrap()).unwrap(), j);
        }
    }

    #[test]
    fn codec_bijection_and_lexicographic_order() {
        for (base, len) in [(2, 8), (3, 6), (5, 4)] {
            let n = checked_dimension(base, len).unwrap();
            let words: Vec<_> = (0..n).map(|j| digit_encode(j, base, len).unwrap()).collect();
            for (j, w) in words.iter().enumerate() {
                assert_eq!(digit_decode(w).unwrap(), j);
            }
            assert!(words.windows(2).all(|p| p[0].symbols < p[1].symbols));
        }
    }

    #[test]
    fn centered_dft_examples() {
        let g1 = build_dft_centered(1).unwrap();
        assert_abs_diff_eq!(g1.get(0, 0).re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g1.get(0, 0).im, -1.0, epsilon = 1e-15);
        let g2 = build_dft_centered(2).unwrap();
        let expect = cis(-PI / 4.0) * FRAC_1_SQRT_2;
        assert!((g2.get(0, 0) - expect).norm() < 1e-15);
        assert!(build_dft_centered(12).unwrap().unitarity_defect() <= 1e-11);
        assert!(build_dft_centered(0).is_err());
    }

    #[test]
    fn plain_dft_examples() {
        let f2 = build_dft_plain(2).unwrap();
        let s = FRAC_1_SQRT_2;
        let expect = [s, s, s, -s];
        for (z, e) in f2.row_major().iter().zip(expect) {
            assert!((z - C64::new(e, 0.0)).norm() < 1e-15);
        }
        let f4 = build_dft_plain(4).unwrap();
        assert!((f4.get(1, 1) - C64::new(0.0, -0.5)).norm() < 1e-15);
        assert!(build_dft_plain(9).unwrap().unitarity_defect() <= 1e-12);
    }

    #[test]
    fn walsh_single_digit_reduces_to_dft() {
        let v = build_walsh(3, 1, WalshVariant::V).unwrap();
        let w = build_walsh(3, 1, WalshVariant::W).unwrap();
        assert!((&v - &build_dft_plain(3).unwrap()).max_abs() < 1e-15);
        assert!((&w - &build_dft_centered(3).unwrap()).max_abs() < 1e-15);
    }

    fn det_vec(seed: u64, n: usize) -> Vec<C64> {
        // small deterministic pseudo-random vectors for fixed examples
        (0..n)
            .map(|i| {
                let x = ((seed * 7919 + i as u64 * 104729) % 1000) as f64 / 1000.0;
                let y = ((seed * 31 + i as u64 * 7) % 113) as f64 / 113.0;
                C64::new(x - 0.5, y - 0.5)
            })
            .collect()
    }

    #[test]
    fn walsh_reverses_and_transforms_product_factors() {
        for variant in [WalshVariant::V, WalshVariant::W] {
            let seed = variant.seed(3).unwrap();
            // dense, k = 2
            let (v1, v2) = (det_vec(1, 3), det_vec(2, 3));
            let input = TensorState::product(&[v1.clone(), v2.clone()]).unwrap();
            let dense = build_walsh(3, 2, variant).unwrap().apply(input.amplitudes());
            let expect = TensorState::product(&[seed.apply(&v2), seed.apply(&v1)]).unwrap();
            for (a, b) in dense.iter().zip(expect.amplitudes()) {
                assert!((a - b).norm() < 1e-14);
            }
            // matrix-free, k = 3
            let vs: Vec<_> = (0..3).map(|s| det_vec(s + 10, 3)).collect();
            let out = walsh_apply(&TensorState::product(&vs).unwrap(), variant).unwrap();
            let expect =
                TensorState::product(&[seed.apply(&vs[2]), seed.apply(&vs[1]), seed.apply(&vs[0])])
                    .unwrap();
            for (a, b) in out.amplitudes().iter().zip(expect.amplitudes()) {
                assert!((a - b).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn walsh_apply_single_digit() {
        let v = det_vec(3, 5);
        let state = TensorState::new(5, 1, v.clone()).unwrap();
        let out = walsh_apply(&state, WalshVariant::W).unwrap();
        let expect = build_dft_centered(5).unwrap().apply(&v);
        for (a, b) in out.amplitudes().iter().zip(&expect) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn walsh_matrix_free_matches_dense_random_state() {
        let n = 4usize.pow(5);
        let v = det_vec(99, n);
        let state = TensorState::new(4, 5, v.clone()).unwrap();
        for variant in [WalshVariant::V, WalshVariant::W] {
            let dense = build_walsh(4, 5, variant).unwrap().apply(&v);
            let fast = walsh_apply(&state, variant).unwrap();
            let err = dense
                .iter()
                .zip(fast.amplitudes())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err <= 1e-12, "variant {variant}: {err}");
        }
    }

    #[test]
    fn walsh_dense_equals_tensor_rule_on_basis() {
        for (base, len) in [(2, 4), (3, 3), (4, 2)] {
            for variant in [WalshVariant::V, WalshVariant::W] {
                let dense = build_walsh(base, len, variant).unwrap();
                let n = dense.rows();
                for j in 0..n {
                    let col = walsh_apply(&TensorState::basis(base, len, j).unwrap(), variant).unwrap();
                    for i in 0..n {
                        assert!((dense.get(i, j) - col.amplitudes()[i]).norm() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn unitarity_of_transforms() {
        for n in [1, 2, 3, 7, 16, 27] {
            let tol = 1e-12 * n as f64;
            assert!(build_dft_centered(n).unwrap().unitarity_defect() <= tol);
            assert!(build_dft_plain(n).unwrap().unitarity_defect() <= tol);
        }
        for (base, len) in [(2, 6), (3, 4), (4, 3), (5, 2)] {
            for variant in [WalshVariant::V, WalshVariant::W] {
                let w = build_walsh(base, len, variant).unwrap();
                assert!(w.unitarity_defect() <= 1e-12 * w.rows() as f64);
            }
        }
    }

    #[test]
    fn walsh_cap_guard() {
        assert!(build_walsh_capped(3, 4, WalshVariant::V, 80).is_err());
        assert!(build_walsh(2, 64, WalshVariant::V).is_err());
    }

    #[test]
    fn observable_examples() {
        for axis in [Axis::Position, Axis::Momentum] {
            let one = quantize_function(|_| 1.0, axis, 6).unwrap();
            assert!((&one - &ComplexMatrix::identity(6)).max_abs() < 1e-14);
        }
        let middle = quantize_function(|q| f64::from((1.0 / 3.0..2.0 / 3.0).contains(&q)), Axis::Position, 3).unwrap();
        assert_eq!(
            middle,
            ComplexMatrix::diagonal(&[ZERO, C64::new(1.0, 0.0), ZERO])
        );
        let outer = quantize_function(
            |q| f64::from(!(1.0 / 3.0..2.0 / 3.0).contains(&q)),
            Axis::Position,
            9,
        )
        .unwrap();
        assert_abs_diff_eq!(outer.trace().re, 6.0);
        assert!((&outer.matmul(&outer) - &outer).max_abs() == 0.0);
        assert!(quantize_observable(&[1.0; 4], Axis::Position, 5).is_err());
    }

    proptest! {
        #[test]
        fn position_parity_covariance(samples in proptest::collection::vec(-2.0f64..2.0, 1..40)) {
            // Op_N(f(1-q)) = R Op_N(f) R with R the index reversal.
            let n = samples.len();
            let reflected: Vec<f64> = samples.iter().rev().copied().collect();
            let lhs = quantize_observable(&reflected, Axis::Position, n).unwrap();
            let r = ComplexMatrix::from_fn(n, n, |i, j| if i + j == n - 1 { C64::new(1.0, 0.0) } else { ZERO });
            let op = quantize_observable(&samples, Axis::Position, n).unwrap();
            prop_assert!((&lhs - &r.matmul(&op).matmul(&r)).max_abs() == 0.0);
            let grid = grid_points(n);
            for (j, q) in grid.iter().enumerate() {
                prop_assert!((q + grid[n - 1 - j] - 1.0).abs() < 1e-15);
            }
        }

        #[test]
        fn codec_round_trip(base in 2usize..7, len in 1usize..6, seed in 0usize..100_000) {
            let n = checked_dimension(base, len).unwrap();
            let j = seed % n;
            let w = digit_encode(j, base, len).unwrap();
            prop_assert!(w.symbols.iter().all(|&s| s < base));
            prop_assert_eq!(digit_decode(&w).unwrap(), j);
        }
    }
}

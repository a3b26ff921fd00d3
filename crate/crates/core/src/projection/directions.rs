use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{OtError, Result};

/// Unit vector in `R^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Normalizes `v`; fails on zero or non-finite input.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(OtError::Empty("direction"));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(OtError::NonFinite("direction"));
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(OtError::InvalidParameter("zero direction".into()));
        }
        Ok(Self(v.into_iter().map(|c| c / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `points . v` for each row.
    pub fn project(&self, points: ArrayView2<'_, f64>) -> Vec<f64> {
        points.dot(&ArrayView1::from(&self.0[..])).to_vec()
    }
}

/// Normalized standard Gaussian draw.
pub fn random_direction<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Direction> {
    if p < 1 {
        return Err(OtError::InvalidParameter("direction dimension must be at least 1".into()));
    }
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().any(|&c| c != 0.0) {
            return Direction::new(v);
        }
    }
}

/// Highest dimension covered by the built-in Sobol direction numbers.
pub const MAX_SOBOL_DIM: usize = 21;

// Joe-Kuo primitive polynomials (degree, interior coefficient bits) and
// initial direction numbers for dimensions 2..=21. Dimension 1 is van der
// Corput.
const JOE_KUO: [(u32, u32, &[u32]); MAX_SOBOL_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

const BITS: usize = 32;

/// Base-2 Sobol point set on `[0,1)^p` in natural (not Gray-code) order.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    v: Vec<[u32; BITS]>,
}

impl SobolSequence {
    pub fn new(p: usize) -> Result<Self> {
        if p < 1 {
            return Err(OtError::InvalidParameter("dimension must be at least 1".into()));
        }
        if p > MAX_SOBOL_DIM {
            return Err(OtError::InvalidParameter(format!(
                "low-discrepancy directions support p <= {MAX_SOBOL_DIM}, got {p}"
            )));
        }
        let mut v = Vec::with_capacity(p);
        let mut first = [0u32; BITS];
        for (b, slot) in first.iter_mut().enumerate() {
            *slot = 1 << (BITS - 1 - b);
        }
        v.push(first);
        for &(s, a, init) in &JOE_KUO[..p - 1] {
            let s = s as usize;
            let mut m = [0u64; BITS + 1];
            for k in 1..=s {
                m[k] = init[k - 1] as u64;
            }
            for k in s + 1..=BITS {
                let mut next = m[k - s] ^ (m[k - s] << s);
                for i in 1..s {
                    if (a >> (s - 1 - i)) & 1 == 1 {
                        next ^= m[k - i] << i;
                    }
                }
                m[k] = next;
            }
            let mut row = [0u32; BITS];
            for k in 1..=BITS {
                row[k - 1] = (m[k] << (BITS - k)) as u32;
            }
            v.push(row);
        }
        Ok(Self { v })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Integer coordinates of point `index` (scaled by `2^32`).
    pub fn point_bits(&self, index: u32) -> Vec<u32> {
        self.v
            .iter()
            .map(|row| {
                let mut acc = 0u32;
                for (b, &vb) in row.iter().enumerate() {
                    if (index >> b) & 1 == 1 {
                        acc ^= vb;
                    }
                }
                acc
            })
            .collect()
    }

    /// Point `index` shifted to the centre of its dyadic cell of width
    /// `2^-32`, so no coordinate is 0.
    pub fn point(&self, index: u32) -> Vec<f64> {
        let scale = (BITS as f64).exp2();
        self.point_bits(index)
            .into_iter()
            .map(|b| (b as f64 + 0.5) / scale)
            .collect()
    }
}

/// Direction number `index` of the low-discrepancy stream in dimension `p`.
pub(crate) fn sobol_direction(seq: &SobolSequence, index: u32) -> Result<Direction> {
    let normal = Normal::standard();
    let v: Vec<f64> = seq.point(index).into_iter().map(|u| normal.inverse_cdf(u)).collect();
    Direction::new(v)
}

/// First `count` directions of the Sobol-then-Gaussianize-then-normalize
/// stream. Any prefix of a longer request is identical.
pub fn low_discrepancy_directions(p: usize, count: usize) -> Result<Vec<Direction>> {
    let seq = SobolSequence::new(p)?;
    let count = u32::try_from(count)
        .map_err(|_| OtError::TooLarge(format!("{count} directions")))?;
    (0..count).map(|i| sobol_direction(&seq, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gf2_mulmod(a: u64, b: u64, modulus: u64, degree: u32) -> u64 {
        let mut result = 0;
        let mut a = a;
        let mut b = b;
        while b != 0 {
            if b & 1 == 1 {
                result ^= a;
            }
            b >>= 1;
            a <<= 1;
            if (a >> degree) & 1 == 1 {
                a ^= modulus;
            }
        }
        result
    }

    fn gf2_pow_x(exp: u64, modulus: u64, degree: u32) -> u64 {
        let (mut result, mut base, mut e) = (1u64, 2u64, exp);
        if degree == 1 {
            base = 2 ^ modulus;
        }
        while e != 0 {
            if e & 1 == 1 {
                result = gf2_mulmod(result, base, modulus, degree);
            }
            base = gf2_mulmod(base, base, modulus, degree);
            e >>= 1;
        }
        result
    }

    fn prime_factors(mut n: u64) -> Vec<u64> {
        let mut out = vec![];
        let mut d = 2;
        while d * d <= n {
            if n % d == 0 {
                out.push(d);
                while n % d == 0 {
                    n /= d;
                }
            }
            d += 1;
        }
        if n > 1 {
            out.push(n);
        }
        out
    }

    #[test]
    fn polynomials_are_primitive() {
        for &(s, a, init) in &JOE_KUO {
            let modulus = (1u64 << s) | ((a as u64) << 1) | 1;
            let order = (1u64 << s) - 1;
            assert_eq!(gf2_pow_x(order, modulus, s), 1, "degree {s}, a {a}");
            for r in prime_factors(order) {
                if r != order {
                    assert_ne!(gf2_pow_x(order / r, modulus, s), 1, "degree {s}, a {a}");
                }
            }
            assert_eq!(init.len(), s as usize);
            for (k, &m) in init.iter().enumerate() {
                assert_eq!(m % 2, 1);
                assert!(m < 1 << (k + 1));
            }
        }
    }

    #[test]
    fn second_dimension_matches_reference_points() {
        let seq = SobolSequence::new(2).unwrap();
        let expected = [
            [0.0, 0.0],
            [0.5, 0.5],
            [0.25, 0.75],
            [0.75, 0.25],
            [0.125, 0.625],
            [0.625, 0.125],
            [0.375, 0.375],
            [0.875, 0.875],
        ];
        for (i, e) in expected.iter().enumerate() {
            let bits = seq.point_bits(i as u32);
            assert_eq!(bits[0] as f64 / 2f64.powi(32), e[0]);
            assert_eq!(bits[1] as f64 / 2f64.powi(32), e[1]);
        }
    }

    #[test]
    fn each_dimension_is_stratified() {
        let seq = SobolSequence::new(MAX_SOBOL_DIM).unwrap();
        for d in 0..MAX_SOBOL_DIM {
            let mut seen = [false; 16];
            for i in 0..16 {
                let bits = seq.point_bits(i);
                seen[(bits[d] >> 28) as usize] = true;
            }
            assert!(seen.iter().all(|&s| s), "dimension {d}");
        }
    }

    #[test]
    fn scalar_directions_alternate() {
        let dirs = low_discrepancy_directions(1, 6).unwrap();
        let signs: Vec<f64> = dirs.iter().map(|d| d.as_slice()[0]).collect();
        assert_eq!(signs, vec![-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn first_two_planar_directions_are_spread() {
        let dirs = low_discrepancy_directions(2, 2).unwrap();
        let cos: f64 = dirs[0].as_slice().iter().zip(dirs[1].as_slice()).map(|(a, b)| a * b).sum();
        assert!(cos <= 0.5, "cos {cos}");
    }

    #[test]
    fn prefixes_extend_and_are_unit() {
        let short = low_discrepancy_directions(5, 17).unwrap();
        let long = low_discrepancy_directions(5, 64).unwrap();
        assert_eq!(short[..], long[..17]);
        for d in &long {
            let norm: f64 = d.as_slice().iter().map(|c| c * c).sum();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_unsupported_dimension() {
        assert!(low_discrepancy_directions(0, 1).is_err());
        assert!(low_discrepancy_directions(MAX_SOBOL_DIM + 1, 1).is_err());
    }

    #[test]
    fn random_scalar_direction_is_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let d = random_direction(1, &mut rng).unwrap();
            assert_eq!(d.as_slice()[0].abs(), 1.0);
        }
        assert!(random_direction(0, &mut rng).is_err());
    }

    #[test]
    fn random_direction_is_reproducible() {
        let a = random_direction(4, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = random_direction(4, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_directions_are_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let mut sum = [0.0; 3];
        let mut norm_sum = 0.0;
        for _ in 0..draws {
            let d = random_direction(3, &mut rng).unwrap();
            norm_sum += d.as_slice().iter().map(|c| c * c).sum::<f64>().sqrt();
            for (s, c) in sum.iter_mut().zip(d.as_slice()) {
                *s += c;
            }
        }
        assert_abs_diff_eq!(norm_sum / draws as f64, 1.0, epsilon = 1e-12);
        // Each coordinate of a uniform point on S^2 has variance 1/3.
        let sigma = (1.0f64 / 3.0 / draws as f64).sqrt();
        for s in sum {
            assert!((s / draws as f64).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn direction_rejects_zero() {
        assert!(Direction::new(vec![0.0, 0.0]).is_err());
        assert!(Direction::new(vec![f64::NAN]).is_err());
        let d = Direction::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(d.as_slice(), &[0.6, 0.8]);
    }
}

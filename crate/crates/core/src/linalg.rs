//! Dense complex arrays and the helpers shared by the channel and optimizer
//! code.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// One draw of CN(0, variance).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `x^T y` without conjugation.
pub fn dot_plain(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Ratio of the second to the first singular value (0 for rank one).
pub fn second_singular_ratio(m: &ComplexMatrix) -> f64 {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    match sv.as_slice() {
        [] | [_] => 0.0,
        [s1, s2, ..] if *s1 > 0.0 => s2 / s1,
        _ => 0.0,
    }
}

/// Writes a matrix as a header line `rows cols` followed by one line per row
/// of space-separated `re,im` pairs.
pub fn dump_matrix(m: &ComplexMatrix) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| {
                let z = m[(r, c)];
                format!("{:e},{:e}", z.re, z.im)
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Parses one matrix in the [`dump_matrix`] format from the front of `lines`.
pub fn parse_matrix<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Result<ComplexMatrix> {
    let header = lines
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Parse("missing matrix header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("bad dimension `{t}`: {e}"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse(format!("expected `rows cols`, got `{header}`")));
    };
    let mut m = ComplexMatrix::zeros(rows, cols);
    for r in 0..rows {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("missing row {r}")))?;
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != cols {
            return Err(Error::Parse(format!("row {r}: expected {cols} entries, got {}", entries.len())));
        }
        for (c, e) in entries.iter().enumerate() {
            let (re, im) = e
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("entry `{e}` is not `re,im`")))?;
            let re = re.parse::<f64>().map_err(|err| Error::Parse(err.to_string()))?;
            let im = im.parse::<f64>().map_err(|err| Error::Parse(err.to_string()))?;
            m[(r, c)] = Complex64::new(re, im);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn complex_gaussian_has_requested_power() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let p: f64 = (0..n).map(|_| complex_gaussian(&mut rng, 2.5).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 2.5).abs() < 0.05, "{p}");
    }

    #[test]
    fn rank_one_ratio() {
        let u = ComplexVector::from_fn(3, |i, _| Complex64::new(i as f64 + 1.0, 0.5));
        let v = ComplexVector::from_fn(4, |i, _| Complex64::new(0.3, -(i as f64)));
        let m = &u * v.adjoint();
        assert!(second_singular_ratio(&m) < 1e-12);
        assert!(second_singular_ratio(&ComplexMatrix::identity(3, 3)) > 0.99);
    }

    #[test]
    fn malformed_dump_is_rejected() {
        assert!(parse_matrix(&mut "2 2\n1,0 2,0\n".lines()).is_err());
        assert!(parse_matrix(&mut "1 1\n1;0\n".lines()).is_err());
    }

    proptest! {
        #[test]
        fn dump_round_trip(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut rng, 1.0));
            let text = dump_matrix(&m);
            let back = parse_matrix(&mut text.lines()).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}

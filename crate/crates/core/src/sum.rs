//! Compensated accumulation and error-free products.

use num_complex::Complex64;
use std::f64::consts::TAU;

/// Neumaier's variant of Kahan summation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::ops::AddAssign<f64> for NeumaierSum {
    fn add_assign(&mut self, x: f64) {
        self.add(x);
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Componentwise compensated complex sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComplexSum {
    re: NeumaierSum,
    im: NeumaierSum,
}

impl ComplexSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn merge(&mut self, other: &ComplexSum) {
        self.re.merge(&other.re);
        self.im.merge(&other.im);
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

impl std::ops::AddAssign<Complex64> for ComplexSum {
    fn add_assign(&mut self, z: Complex64) {
        self.add(z);
    }
}

/// `a*b = p + e` exactly.
#[inline]
pub fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Fractional part of `a*b` in `[0, 1)`, using the exact product residual.
#[inline]
pub fn frac_of_product(a: f64, b: f64) -> f64 {
    let (p, e) = two_product(a, b);
    let mut f = p - p.floor();
    f += e;
    f -= f.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// `exp(-2πi·a·b)` with the phase reduced modulo one before scaling.
#[inline]
pub fn unit_phase(a: f64, b: f64) -> Complex64 {
    let (s, c) = (TAU * frac_of_product(a, b)).sin_cos();
    Complex64::new(c, -s)
}

/// Sum with a fixed chunking, independent of how the chunks are scheduled.
pub fn ordered_chunk_sum<F>(len: usize, chunk: usize, f: F) -> NeumaierSum
where
    F: Fn(std::ops::Range<usize>) -> NeumaierSum + Sync,
{
    use rayon::prelude::*;
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let parts: Vec<NeumaierSum> = (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(len)))
        .collect();
    let mut total = NeumaierSum::new();
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Complex analogue of [`ordered_chunk_sum`].
pub fn ordered_chunk_sum_complex<F>(len: usize, chunk: usize, f: F) -> ComplexSum
where
    F: Fn(std::ops::Range<usize>) -> ComplexSum + Sync,
{
    use rayon::prelude::*;
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let parts: Vec<ComplexSum> = (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(len)))
        .collect();
    let mut total = ComplexSum::new();
    for p in &parts {
        total.merge(p);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let s: NeumaierSum = [1.0, 1e100, 1.0, -1e100].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn two_product_is_exact() {
        let (p, e) = two_product(0.1, 0.3);
        assert_eq!(p, 0.1 * 0.3);
        assert!(e != 0.0);
        assert!(e.abs() < p.abs() * 1e-15);
    }

    #[test]
    fn frac_of_product_large_argument() {
        let f = frac_of_product(1e12, 0.25);
        assert_eq!(f, 0.0);
        let f = frac_of_product(1e12 + 0.5, 1.0);
        assert_eq!(f, 0.5);
    }

    #[test]
    fn unit_phase_matches_direct_for_small_arguments() {
        let z = unit_phase(0.3, 0.7);
        let w = Complex64::from_polar(1.0, -TAU * 0.21);
        assert!((z - w).norm() < 1e-15);
    }

    #[test]
    fn chunked_sum_independent_of_chunk_size() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let f = |r: std::ops::Range<usize>| xs[r].iter().copied().collect::<NeumaierSum>();
        let a = ordered_chunk_sum(xs.len(), 7, f).value();
        let b = ordered_chunk_sum(xs.len(), 1000, f).value();
        assert!((a - b).abs() < 1e-15);
    }
}

//! Per-branch Chebyshev–Lobatto interpolation.

use crate::ifs::{CantorSystem, Interval};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Sub};

/// Field over which branch functions take values.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + 'static
{
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Lobatto nodes of one interval with barycentric weights.
#[derive(Clone, Debug)]
pub struct ChebNodes {
    pub interval: Interval,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl ChebNodes {
    pub fn new(interval: Interval, degree: usize) -> Self {
        let d = degree.max(1);
        let x = (0..=d)
            .map(|j| {
                let t = (PI * j as f64 / d as f64).cos();
                interval.mid() - 0.5 * interval.len() * t
            })
            .collect();
        let w = (0..=d)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == d {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        ChebNodes { interval, x, w }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Values `ℓ_j(y)` of the Lagrange basis at `y`.
    pub fn basis(&self, y: f64, out: &mut [f64]) {
        if let Some(k) = self.x.iter().position(|&xj| xj == y) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[k] = 1.0;
            return;
        }
        let mut den = 0.0;
        for (o, (&xj, &wj)) in out.iter_mut().zip(self.x.iter().zip(&self.w)) {
            let c = wj / (y - xj);
            *o = c;
            den += c;
        }
        out.iter_mut().for_each(|v| *v /= den);
    }

    /// Barycentric interpolation of `values` at `y`.
    #[inline]
    pub fn interpolate<T: Scalar>(&self, values: &[T], y: f64) -> T {
        let mut num = T::default();
        let mut den = 0.0;
        for ((&xj, &wj), &v) in self.x.iter().zip(&self.w).zip(values) {
            let diff = y - xj;
            if diff == 0.0 {
                return v;
            }
            let c = wj / diff;
            num = num + v * c;
            den += c;
        }
        num / den
    }

    /// Derivative values at the nodes of the interpolant through `values`.
    pub fn differentiate<T: Scalar>(&self, values: &[T]) -> Vec<T> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = T::default();
                for j in 0..n {
                    if j != i {
                        let dij = (self.w[j] / self.w[i]) / (self.x[i] - self.x[j]);
                        acc = acc + (values[j] - values[i]) * dij;
                    }
                }
                acc
            })
            .collect()
    }
}

/// A function on the union of branch intervals, one interpolant per branch.
#[derive(Clone, Debug)]
pub struct BranchFunction<T: Scalar> {
    degree: usize,
    nodes: Vec<ChebNodes>,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> BranchFunction<T> {
    /// Samples `f(a, x)` at the nodes of every branch interval (0-based `a`).
    pub fn from_fn(sys: &CantorSystem, degree: usize, f: impl Fn(usize, f64) -> T) -> Self {
        let nodes = grids(sys, degree);
        let values = nodes
            .iter()
            .enumerate()
            .map(|(a, g)| g.x.iter().map(|&x| f(a, x)).collect())
            .collect();
        BranchFunction {
            degree,
            nodes,
            values,
        }
    }

    pub fn from_values(nodes: Vec<ChebNodes>, values: Vec<Vec<T>>) -> Self {
        let degree = nodes.first().map_or(0, |g| g.len() - 1);
        BranchFunction {
            degree,
            nodes,
            values,
        }
    }

    pub fn constant(sys: &CantorSystem, degree: usize, c: T) -> Self {
        Self::from_fn(sys, degree, |_, _| c)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_branches(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[ChebNodes] {
        &self.nodes
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.values
    }

    /// Interpolant of branch `a` at `y`.
    #[inline]
    pub fn eval_branch(&self, a: usize, y: f64) -> T {
        self.nodes[a].interpolate(&self.values[a], y)
    }

    /// Evaluation at `y` using the branch interval containing `y`, else the nearest one.
    pub fn eval(&self, y: f64) -> T {
        let a = self
            .nodes
            .iter()
            .position(|g| g.interval.contains(y))
            .unwrap_or_else(|| {
                let dist = |g: &ChebNodes| {
                    if y < g.interval.lo {
                        g.interval.lo - y
                    } else {
                        y - g.interval.hi
                    }
                };
                (0..self.nodes.len())
                    .min_by(|&i, &j| dist(&self.nodes[i]).total_cmp(&dist(&self.nodes[j])))
                    .unwrap_or(0)
            });
        self.eval_branch(a, y)
    }

    pub fn derivative(&self) -> BranchFunction<T> {
        let values = self
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(g, v)| g.differentiate(v))
            .collect();
        BranchFunction {
            degree: self.degree,
            nodes: self.nodes.clone(),
            values,
        }
    }

    pub fn map_values<U: Scalar>(&self, f: impl Fn(T) -> U) -> BranchFunction<U> {
        BranchFunction {
            degree: self.degree,
            nodes: self.nodes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|&t| f(t)).collect())
                .collect(),
        }
    }

    /// Largest stored modulus.
    pub fn node_sup(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|v| v.modulus())
            .fold(0.0, f64::max)
    }
}

pub fn grids(sys: &CantorSystem, degree: usize) -> Vec<ChebNodes> {
    sys.branches()
        .iter()
        .map(|b| ChebNodes::new(b.interval, degree))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_node_values_exactly() {
        let sys = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let f = BranchFunction::from_fn(&sys, 16, |_, x| (3.0 * x).sin());
        for (g, v) in f.nodes().iter().zip(f.values()) {
            for (&x, &y) in g.x.iter().zip(v) {
                assert_eq!(g.interpolate(v, x), y);
            }
        }
    }

    #[test]
    fn interpolates_analytic_functions() {
        let sys = CantorSystem::cantor3();
        let f = BranchFunction::from_fn(&sys, 24, |_, x| (5.0 * x).exp());
        for x in [0.01, 0.2, 0.31, 0.7, 0.99] {
            assert!((f.eval(x) / (5.0 * x).exp() - 1.0).abs() < 1e-13);
        }
        let d = f.derivative();
        for x in [0.05, 0.25, 0.8] {
            assert!((d.eval(x) / (5.0 * (5.0 * x).exp()) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_sums_to_one() {
        let g = ChebNodes::new(Interval { lo: 0.2, hi: 0.9 }, 12);
        let mut b = vec![0.0; g.len()];
        g.basis(0.4321, &mut b);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complex_values() {
        let sys = CantorSystem::cantor3();
        let f = BranchFunction::from_fn(&sys, 20, |_, x| Complex64::from_polar(1.0, 4.0 * x));
        let z = f.eval(0.123);
        assert!((z - Complex64::from_polar(1.0, 0.492)).norm() < 1e-13);
    }
}

//! Complex transfer operators `𝓛_{φ̄−sτ}`, `s = δ − ib`, their `‖·‖_{Lip,b}` contraction,
//! and the mollified derivative count.

use crate::cheb::{grids, BranchFunction, ChebNodes};
use crate::error::{param, Error, Result};
use crate::fourier::least_squares;
use crate::sum::{ComplexSum, NeumaierSum};
use crate::symbolic::{enumerate_words, word_count, Word};
use crate::thermo::GibbsMeasure;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

pub const DEFAULT_DEGREE: usize = 64;

/// Largest `|b|` accepted per unit of interpolation degree.
pub const B_PER_DEGREE: f64 = 200.0 / 64.0;

/// Dense samples per branch for sup and Lipschitz estimates.
const NORM_SAMPLES: usize = 1024;

/// Samples per branch for cross-branch difference quotients.
const CROSS_SAMPLES: usize = 64;

const DIRECT_BUDGET: u64 = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComplexPotentialParams {
    pub delta: f64,
    pub b: f64,
    /// `Ξ ∈ (0, 1)`.
    pub xi_exp: f64,
}

impl ComplexPotentialParams {
    pub fn new(delta: f64, b: f64, xi_exp: f64) -> Result<Self> {
        if !(delta.is_finite() && b.is_finite()) {
            return Err(param("b", "delta and b must be finite"));
        }
        if !(xi_exp > 0.0 && xi_exp < 1.0) {
            return Err(param("xi_exp", "must lie in (0, 1)"));
        }
        Ok(ComplexPotentialParams { delta, b, xi_exp })
    }

    pub fn s(&self) -> Complex64 {
        Complex64::new(self.delta, -self.b)
    }
}

/// `|z|^{−ib} = e^{−ib log|z|}`.
#[inline]
fn twist(b: f64, z: f64) -> Complex64 {
    Complex64::from_polar(1.0, -b * z.abs().ln())
}

fn check_b(b: f64, degree: usize) -> Result<()> {
    let limit = B_PER_DEGREE * degree as f64;
    if !b.is_finite() || b.abs() > limit {
        return Err(param(
            "b",
            format!("|b| = {b} exceeds {limit} at interpolation degree {degree}"),
        ));
    }
    Ok(())
}

/// `(𝓛_b g)(x) = Σ_a e^{φ̄(f_a x)} |f_a'(x)|^{−ib} g(f_a x)` as a matrix on per-branch Lobatto nodes.
#[derive(Clone, Debug)]
pub struct ComplexTransfer<'a> {
    mu: &'a GibbsMeasure,
    b: f64,
    nodes: Vec<ChebNodes>,
    size: usize,
    data: Vec<Complex64>,
}

impl<'a> ComplexTransfer<'a> {
    pub fn new(mu: &'a GibbsMeasure, b: f64, degree: usize) -> Result<Self> {
        check_b(b, degree)?;
        let sys = mu.system();
        let nodes = grids(sys, degree);
        let per = degree.max(1) + 1;
        let size = nodes.len() * per;
        let rows: Vec<Vec<Complex64>> = nodes
            .iter()
            .flat_map(|g| g.x.iter().copied())
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&x| {
                let mut row = vec![Complex64::new(0.0, 0.0); size];
                let mut basis = vec![0.0; per];
                for (a, g) in nodes.iter().enumerate() {
                    let c = Complex64::from(mu.phi_bar(a, x).exp()) * twist(b, sys.df(a, x));
                    g.basis(sys.f(a, x), &mut basis);
                    for (k, &l) in basis.iter().enumerate() {
                        row[a * per + k] += c * l;
                    }
                }
                row
            })
            .collect();
        Ok(ComplexTransfer {
            mu,
            b,
            nodes,
            size,
            data: rows.concat(),
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn nodes(&self) -> &[ChebNodes] {
        &self.nodes
    }

    pub fn apply(&self, g: &BranchFunction<Complex64>) -> BranchFunction<Complex64> {
        let flat: Vec<Complex64> = g.values().concat();
        let out: Vec<Complex64> = self
            .data
            .chunks(self.size)
            .map(|row| row.iter().zip(&flat).map(|(m, v)| m * v).sum())
            .collect();
        let per = out.len() / self.nodes.len().max(1);
        BranchFunction::from_values(self.nodes.clone(), out.chunks(per).map(<[_]>::to_vec).collect())
    }

    pub fn iterate(&self, g: &BranchFunction<Complex64>, m: usize) -> BranchFunction<Complex64> {
        (0..m).fold(g.clone(), |acc, _| self.apply(&acc))
    }

    /// One exact application at an arbitrary point of the hull.
    pub fn apply_at(&self, g: &BranchFunction<Complex64>, x: f64) -> Complex64 {
        let sys = self.mu.system();
        (0..sys.n_symbols())
            .map(|a| Complex64::from(self.mu.phi_bar(a, x).exp()) * twist(self.b, sys.df(a, x)) * g.eval_branch(a, sys.f(a, x)))
            .sum()
    }
}

/// One application of `𝓛_b` at the nodes of `g`.
pub fn complex_transfer_apply(mu: &GibbsMeasure, b: f64, g: &BranchFunction<Complex64>) -> Result<BranchFunction<Complex64>> {
    check_b(b, g.degree())?;
    let sys = mu.system();
    let nodes = g.nodes().to_vec();
    let values = nodes
        .iter()
        .map(|nd| {
            nd.x.iter()
                .map(|&x| {
                    (0..sys.n_symbols())
                        .map(|a| Complex64::from(mu.phi_bar(a, x).exp()) * twist(b, sys.df(a, x)) * g.eval_branch(a, sys.f(a, x)))
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(BranchFunction::from_values(nodes, values))
}

/// `Σ_{𝐝 ∈ 𝒜^m} w̄_𝐝(x)|f_𝐝'(x)|^{−ib} g(f_𝐝 x)` by direct enumeration.
pub fn iterate_direct(mu: &GibbsMeasure, b: f64, m: usize, x: f64, g: impl Fn(f64) -> Complex64) -> Result<Complex64> {
    let sys = mu.system();
    if word_count(sys.n_symbols(), m).map_or(true, |c| c > DIRECT_BUDGET) {
        return Err(Error::Budget {
            what: "direct transfer sum",
            needed: (sys.n_symbols() as f64).powi(m as i32),
            limit: DIRECT_BUDGET as f64,
        });
    }
    let mut s = ComplexSum::new();
    for d in enumerate_words(sys.n_symbols(), m) {
        let (y, dd) = sys.orbit(d.symbols(), x);
        s.add(mu.weight_of(d.symbols(), x) * twist(b, dd) * g(y));
    }
    Ok(s.value())
}

/// `g_𝐞(z) = |f_𝐞'(z)|^{δ−ib}` on the branch grids.
pub fn power_derivative(mu: &GibbsMeasure, e: &Word, delta: f64, b: f64, degree: usize) -> Result<BranchFunction<Complex64>> {
    let sys = mu.system();
    e.check(sys.n_symbols())?;
    let map = sys.word_map(e.symbols());
    Ok(BranchFunction::from_fn(sys, degree, |_, z| {
        let d = map.eval_d(sys, z).1.abs();
        d.powf(delta) * twist(b, d)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipNorm {
    pub sup: f64,
    pub lip: f64,
    pub norm: f64,
}

/// `‖g‖_∞ + Lip(g)/|b|` from dense per-branch samples.
pub fn lip_b_norm(g: &BranchFunction<Complex64>, b: f64) -> Result<f64> {
    if b == 0.0 || !b.is_finite() {
        return Err(param("b", "must be finite and nonzero"));
    }
    Ok(lip_parts(g, b).norm)
}

pub fn lip_parts(g: &BranchFunction<Complex64>, b: f64) -> LipNorm {
    let dg = g.derivative();
    let mut sup = g.node_sup();
    let mut lip = dg.node_sup();
    let mut coarse: Vec<(f64, Complex64)> = Vec::new();
    for (a, nd) in g.nodes().iter().enumerate() {
        let iv = nd.interval;
        let mut prev: Option<(f64, Complex64)> = None;
        for i in 0..=NORM_SAMPLES {
            let x = iv.lo + iv.len() * i as f64 / NORM_SAMPLES as f64;
            let v = g.eval_branch(a, x);
            sup = sup.max(v.norm());
            lip = lip.max(dg.eval_branch(a, x).norm());
            if let Some((px, pv)) = prev {
                if x > px {
                    lip = lip.max((v - pv).norm() / (x - px));
                }
            }
            prev = Some((x, v));
            if i % (NORM_SAMPLES / CROSS_SAMPLES) == 0 {
                coarse.push((x, v));
            }
        }
    }
    for (i, &(x, v)) in coarse.iter().enumerate() {
        for &(y, w) in &coarse[i + 1..] {
            if (x - y).abs() > 0.0 {
                lip = lip.max((v - w).norm() / (x - y).abs());
            }
        }
    }
    let norm = if b == 0.0 { sup } else { sup + lip / b.abs() };
    LipNorm { sup, lip, norm }
}

#[derive(Clone, Debug, Serialize)]
pub struct LipProbe {
    pub b: f64,
    pub g0: String,
    /// `‖𝓛_b^m g₀‖_{Lip,b}` for `m = 0..=m_max`; the sup norm when `b = 0`.
    pub norms: Vec<f64>,
    /// Fitted `−d/dm log‖𝓛_b^m g₀‖` on the tail `m ∈ [m_max/2, m_max]`.
    pub rate: f64,
    /// `e^{intercept}/‖g₀‖` of the tail fit.
    pub prefactor: f64,
    pub tail: [usize; 2],
}

/// Norm sequence of `𝓛_b^m g₀` with a log-linear tail fit.
pub fn contraction_probe(
    mu: &GibbsMeasure,
    b: f64,
    m_max: usize,
    g0: &BranchFunction<Complex64>,
    label: &str,
) -> Result<LipProbe> {
    if m_max < 3 {
        return Err(param("m_max", "must be at least 3"));
    }
    let op = ComplexTransfer::new(mu, b, g0.degree())?;
    let mut norms = Vec::with_capacity(m_max + 1);
    let mut g = g0.clone();
    for m in 0..=m_max {
        if m > 0 {
            g = op.apply(&g);
        }
        let v = lip_parts(&g, b).norm;
        if !v.is_finite() {
            return Err(Error::NonFinite("contraction norm"));
        }
        if v <= f64::MIN_POSITIVE {
            return Err(Error::Budget {
                what: "contraction norm below float range",
                needed: v,
                limit: f64::MIN_POSITIVE,
            });
        }
        norms.push(v);
    }
    let tail = [m_max / 2, m_max];
    let xs: Vec<f64> = (tail[0]..=tail[1]).map(|m| m as f64).collect();
    let ys: Vec<f64> = (tail[0]..=tail[1]).map(|m| norms[m].ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys)?;
    Ok(LipProbe {
        b,
        g0: label.to_string(),
        rate: -slope,
        prefactor: intercept.exp() / norms[0],
        norms,
        tail,
    })
}

/// Rates below this magnitude count as no contraction.
pub const LATTICE_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Contracting,
    Lattice,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionProfile {
    pub t0: Option<f64>,
    pub delta1: f64,
    pub c_xi: f64,
    pub xi_exp: f64,
    pub verdict: Verdict,
    pub probes: Vec<LipProbe>,
}

/// Empirical `(t₀, δ₁, C_Ξ)` from probes of `g₀ ≡ 1` over `b_grid`.
pub fn fit_contraction_profile(
    mu: &GibbsMeasure,
    b_grid: &[f64],
    m_max: usize,
    xi_exp: f64,
    degree: usize,
) -> Result<ContractionProfile> {
    if !(xi_exp > 0.0 && xi_exp < 1.0) {
        return Err(param("xi_exp", "must lie in (0, 1)"));
    }
    let mut grid: Vec<f64> = b_grid.iter().map(|b| b.abs()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 2 || grid[0] <= 0.0 || grid[grid.len() - 1] < 10.0 * grid[0] {
        return Err(param("b_grid", "needs at least two positive values spanning a decade"));
    }
    let one = BranchFunction::constant(mu.system(), degree, Complex64::new(1.0, 0.0));
    let probes = grid
        .par_iter()
        .map(|&b| contraction_probe(mu, b, m_max, &one, "1"))
        .collect::<Result<Vec<_>>>()?;
    if probes.iter().all(|p| p.rate.abs() <= LATTICE_TOL) {
        return Ok(ContractionProfile {
            t0: None,
            delta1: 0.0,
            c_xi: f64::NAN,
            xi_exp,
            verdict: Verdict::Lattice,
            probes,
        });
    }
    let stable_from = (0..probes.len()).find(|&i| {
        let rates: Vec<f64> = probes[i..].iter().map(|p| p.rate).collect();
        let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lo > LATTICE_TOL && hi <= 2.0 * lo
    });
    let Some(i0) = stable_from else {
        return Ok(ContractionProfile {
            t0: None,
            delta1: 0.0,
            c_xi: f64::NAN,
            xi_exp,
            verdict: Verdict::Inconclusive,
            probes,
        });
    };
    let delta1 = probes[i0..].iter().map(|p| p.rate).fold(f64::INFINITY, f64::min);
    let c_xi = probes[i0..]
        .iter()
        .flat_map(|p| {
            p.norms
                .iter()
                .enumerate()
                .map(move |(m, &v)| v / (p.b.powf(xi_exp) * (-delta1 * m as f64).exp() * p.norms[0]))
        })
        .fold(0.0, f64::max);
    Ok(ContractionProfile {
        t0: Some(probes[i0].b),
        delta1,
        c_xi,
        xi_exp,
        verdict: Verdict::Contracting,
        probes,
    })
}

/// `∫|g₀''|` for `g₀(s) = e^{−πs²}`, by Simpson's rule on the pieces between sign changes.
fn gaussian_second_l1() -> f64 {
    let f = |s: f64| (4.0 * PI * PI * s * s - 2.0 * PI) * (-PI * s * s).exp();
    let simpson = |a: f64, b: f64| {
        let n = 1 << 12;
        let h = (b - a) / n as f64;
        let mut acc = NeumaierSum::new();
        for i in 0..=n {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc.add(w * f(a + h * i as f64));
        }
        (acc.value() * h / 3.0).abs()
    };
    let root = (2.0 * PI).sqrt().recip();
    2.0 * (simpson(0.0, root) + simpson(root, 8.0))
}

/// `h(t) = e^{π/4} g₀((t − x_J)/|J|)` with `g₀(s) = e^{−πs²}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Mollifier {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub width: f64,
}

impl Mollifier {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(param("J", "needs lo < hi"));
        }
        Ok(Mollifier {
            lo,
            hi,
            center: 0.5 * (lo + hi),
            width: hi - lo,
        })
    }

    pub fn amplitude() -> f64 {
        (0.25 * PI).exp()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = (t - self.center) / self.width;
        Self::amplitude() * (-PI * s * s).exp()
    }

    /// `‖h‖₁ = e^{π/4}|J|`.
    pub fn l1(&self) -> f64 {
        Self::amplitude() * self.width
    }

    /// `‖h''‖₁ = e^{π/4}‖g₀''‖₁/|J|`.
    pub fn second_l1(&self) -> f64 {
        Self::amplitude() * gaussian_second_l1() / self.width
    }

    /// `ĥ(ξ) = ∫h(t)e^{−2πiξt}dt = e^{π/4}|J|e^{−π|J|²ξ²}e^{−2πiξx_J}`.
    pub fn fourier(&self, xi: f64) -> Complex64 {
        let amp = self.l1() * (-PI * self.width * self.width * xi * xi).exp();
        Complex64::from_polar(amp, -2.0 * PI * xi * self.center)
    }

    /// `χ_J ≤ h` at `samples` equally spaced points of a neighbourhood of `J`.
    pub fn majorizes(&self, samples: usize) -> bool {
        let (a, b) = (self.lo - self.width, self.hi + self.width);
        (0..samples.max(2)).all(|i| {
            let t = a + (b - a) * i as f64 / (samples.max(2) - 1) as f64;
            let chi = if (self.lo..=self.hi).contains(&t) { 1.0 } else { 0.0 };
            // h = 1 exactly at the endpoints of J; the slack covers rounding of (t − x_J)/|J|.
            chi <= self.eval(t) * (1.0 + 1e-12)
        })
    }
}

/// `J = [L − log(y+r), L − log(y−r)]` for the level `L = 2λn`.
pub fn count_interval(level: f64, y: f64, r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0 && y - r > 0.0) {
        return Err(param("y", "needs r > 0 and y - r > 0"));
    }
    Ok((level - (y + r).ln(), level - (y - r).ln()))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MollifiedCountOptions {
    /// Threshold frequency `t₀` entering the ξ-truncation.
    pub t0: f64,
    pub budget: u64,
}

impl Default for MollifiedCountOptions {
    fn default() -> Self {
        MollifiedCountOptions { t0: 20.0, budget: 1 << 20 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MollifiedCount {
    pub interval: [f64; 2],
    pub mollifier: Mollifier,
    /// `|{𝐝 ∈ 𝒜^m : e^{2λn}|f_{𝐞𝐝}'(x)| ∈ B(y, r)}|` with `2n = |𝐞| + m`.
    pub direct_count: u64,
    /// `Σ_𝐝 h(−log|f_{𝐞𝐝}'(x)|)`.
    pub majorant: f64,
    /// `(Σ_𝐝 w̄_𝐝|f_{𝐞𝐝}'|^δ h)(Σ_𝐝 (w̄_𝐝|f_{𝐞𝐝}'|^δ)^{−1})`, square-rooted.
    pub cauchy_schwarz: f64,
    /// `Σ_𝐝 w̄_𝐝(x)|f_{𝐞𝐝}'(x)|^δ h(−log|f_{𝐞𝐝}'(x)|)`.
    pub weighted_real: f64,
    /// `∫ĥ(ξ)Σ_𝐝 w̄_𝐝(x)|f_{𝐞𝐝}'(x)|^δ e^{−2πiξ log|f_{𝐞𝐝}'(x)|} dξ` on a truncated grid.
    #[serde(serialize_with = "crate::fourier::ser_complex")]
    pub weighted_frequency: Complex64,
    pub xi_cutoff: f64,
    pub quadrature_points: usize,
    /// Bound on the discarded `|ξ| > cutoff` part.
    pub tail_bound: f64,
    pub h_l1: f64,
    pub h_second_l1: f64,
}

/// Direct and mollified counts of `𝐝 ∈ 𝒜^m` with `e^{2λn}|f_{𝐞𝐝}'(x)|` in `B(y, r)`.
pub fn mollified_count(
    mu: &GibbsMeasure,
    e: &Word,
    m: usize,
    y: f64,
    r: f64,
    x: f64,
    opts: &MollifiedCountOptions,
) -> Result<MollifiedCount> {
    let sys = mu.system();
    e.check(sys.n_symbols())?;
    let level = mu.lyapunov() * (e.len() + m) as f64;
    let (lo, hi) = count_interval(level, y, r)?;
    let h = Mollifier::new(lo, hi)?;
    let total = word_count(sys.n_symbols(), m).filter(|&c| c <= opts.budget).ok_or(Error::Budget {
        what: "mollified count words",
        needed: (sys.n_symbols() as f64).powi(m as i32),
        limit: opts.budget as f64,
    })?;
    let delta = mu.dimension();
    // (−log|f_{𝐞𝐝}'(x)|, w̄_𝐝(x)|f_{𝐞𝐝}'(x)|^δ)
    let terms: Vec<(f64, f64)> = enumerate_words(sys.n_symbols(), m)
        .map(|d| {
            let (z, dd) = sys.orbit(d.symbols(), x);
            let (_, de) = sys.orbit(e.symbols(), z);
            let full = (dd * de).abs();
            (-full.ln(), mu.weight_of(d.symbols(), x) * full.powf(delta))
        })
        .collect();
    debug_assert_eq!(terms.len() as u64, total);
    let direct_count = terms.iter().filter(|(t, _)| (lo..=hi).contains(t)).count() as u64;
    let majorant: f64 = terms.iter().map(|&(t, _)| h.eval(t)).collect::<NeumaierSum>().value();
    let weighted_real = terms.iter().map(|&(t, c)| c * h.eval(t)).collect::<NeumaierSum>().value();
    let inverse = terms.iter().map(|&(_, c)| 1.0 / c).collect::<NeumaierSum>().value();
    let cutoff = 4.0 * (opts.t0 / (2.0 * PI)).max(1.0 / h.width);
    // Trapezoid rule; aliases of h sit at distance 1/Δ from every term.
    let spread = terms.iter().map(|&(t, _)| (t - h.center).abs()).fold(0.0, f64::max);
    let inv_step = 2.0 * spread + 8.0 * h.width;
    let half = (cutoff * inv_step).ceil() as usize;
    let step = cutoff / half as f64;
    let freq: Vec<ComplexSum> = (0..=2 * half)
        .into_par_iter()
        .map(|i| {
            let xi = -cutoff + step * i as f64;
            let mut s = ComplexSum::new();
            for &(t, c) in &terms {
                s.add(Complex64::from_polar(c, 2.0 * PI * xi * t));
            }
            let w = if i == 0 || i == 2 * half { 0.5 } else { 1.0 };
            let mut out = ComplexSum::new();
            out.add(h.fourier(xi) * s.value() * (w * step));
            out
        })
        .collect();
    let mut weighted_frequency = ComplexSum::new();
    for f in &freq {
        weighted_frequency.merge(f);
    }
    let mass: f64 = terms.iter().map(|&(_, c)| c).sum();
    let tail_bound = mass * (h.l1() + h.second_l1()) * (0.5 * PI - (2.0 * PI * cutoff).atan()) / PI;
    Ok(MollifiedCount {
        interval: [lo, hi],
        mollifier: h,
        direct_count,
        majorant,
        cauchy_schwarz: (weighted_real * inverse).sqrt(),
        weighted_real,
        weighted_frequency: weighted_frequency.value(),
        xi_cutoff: cutoff,
        quadrature_points: 2 * half + 1,
        tail_bound,
        h_l1: h.l1(),
        h_second_l1: h.second_l1(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::CantorSystem;
    use crate::thermo::{bowen_dimension, build_gibbs, PotentialSpec, ThermoOptions};
    use std::sync::OnceLock;

    fn cantor() -> &'static GibbsMeasure {
        static MU: OnceLock<GibbsMeasure> = OnceLock::new();
        MU.get_or_init(|| {
            build_gibbs(
                &CantorSystem::cantor3(),
                &PotentialSpec::geometric(2f64.ln() / 3f64.ln()),
                &ThermoOptions::default(),
            )
            .unwrap()
        })
    }

    fn gauss() -> &'static GibbsMeasure {
        static MU: OnceLock<GibbsMeasure> = OnceLock::new();
        MU.get_or_init(|| {
            let sys = CantorSystem::gauss_digits(&[1, 2]).unwrap();
            let o = ThermoOptions::default();
            let s0 = bowen_dimension(&sys, &o).unwrap();
            build_gibbs(&sys, &PotentialSpec::geometric(s0), &o).unwrap()
        })
    }

    fn one(mu: &GibbsMeasure) -> BranchFunction<Complex64> {
        BranchFunction::constant(mu.system(), DEFAULT_DEGREE, Complex64::new(1.0, 0.0))
    }

    #[test]
    fn cantor_operator_rotates_constants() {
        let mu = cantor();
        let b = 7.5;
        let out = ComplexTransfer::new(mu, b, DEFAULT_DEGREE).unwrap().apply(&one(mu));
        let phase = Complex64::from_polar(1.0, b * 3f64.ln());
        for v in out.values().iter().flatten() {
            assert!((v - phase).norm() < 1e-10, "{v}");
        }
    }

    #[test]
    fn pointwise_apply_matches_matrix() {
        let mu = gauss();
        let g = power_derivative(mu, &Word::from_symbols(vec![2, 1]), mu.dimension(), 12.0, DEFAULT_DEGREE).unwrap();
        let a = ComplexTransfer::new(mu, 12.0, DEFAULT_DEGREE).unwrap().apply(&g);
        let b = complex_transfer_apply(mu, 12.0, &g).unwrap();
        for (x, y) in a.values().iter().flatten().zip(b.values().iter().flatten()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn iterate_matches_direct_sum() {
        let mu = gauss();
        let sys = mu.system();
        let (delta, b) = (mu.dimension(), 40.0);
        let e = [1u8, 2, 2];
        let g = power_derivative(mu, &Word::from_symbols(e.to_vec()), delta, b, DEFAULT_DEGREE).unwrap();
        let op = ComplexTransfer::new(mu, b, DEFAULT_DEGREE).unwrap();
        let it = op.iterate(&g, 3);
        for x in sys.hull().grid(5) {
            let lhs = op.apply_at(&it, x);
            let rhs = iterate_direct(mu, b, 4, x, |z| {
                let d = sys.orbit(&e, z).1.abs();
                Complex64::from_polar(d.powf(delta), -b * d.ln())
            })
            .unwrap();
            assert!((lhs - rhs).norm() <= 1e-8, "x={x} {lhs} {rhs}");
        }
    }

    #[test]
    fn rejects_large_b() {
        assert!(ComplexTransfer::new(cantor(), 201.0, 64).is_err());
        assert!(ComplexTransfer::new(cantor(), 200.0, 64).is_ok());
        assert!(ComplexTransfer::new(cantor(), 60.0, 16).is_err());
    }

    #[test]
    fn lip_norm_examples() {
        let mu = cantor();
        assert!((lip_b_norm(&one(mu), 3.0).unwrap() - 1.0).abs() < 1e-12);
        let x = BranchFunction::from_fn(mu.system(), DEFAULT_DEGREE, |_, t| Complex64::new(t, 0.0));
        assert!((lip_b_norm(&x, 2.0).unwrap() - 1.5).abs() < 1e-9);
        let scaled = x.map_values(|v| v * Complex64::new(0.0, -3.0));
        assert!((lip_b_norm(&scaled, 2.0).unwrap() - 4.5).abs() < 1e-9);
        assert!(lip_b_norm(&x, 0.0).is_err());
    }

    #[test]
    fn lip_norm_sees_jumps_between_branches() {
        let mu = cantor();
        let step = BranchFunction::from_fn(mu.system(), 8, |a, _| Complex64::new(a as f64, 0.0));
        // Nearest points of the two branches are 1/3 apart.
        assert!((lip_parts(&step, 1.0).lip - 3.0).abs() < 1e-9);
    }

    #[test]
    fn real_operator_fixes_one() {
        for mu in [cantor(), gauss()] {
            let p = contraction_probe(mu, 0.0, 6, &one(mu), "1").unwrap();
            for v in &p.norms {
                assert!((v - 1.0).abs() < 1e-8, "{v}");
            }
        }
    }

    #[test]
    fn cantor_has_no_contraction() {
        let mu = cantor();
        for b in [20.0, 50.0, 100.0] {
            let p = contraction_probe(mu, b, 12, &one(mu), "1").unwrap();
            assert!(p.rate.abs() <= LATTICE_TOL, "b={b} rate={}", p.rate);
        }
        let prof = fit_contraction_profile(mu, &[10.0, 100.0], 6, 0.5, DEFAULT_DEGREE).unwrap();
        assert_eq!(prof.verdict, Verdict::Lattice);
    }

    #[test]
    fn gauss_contracts() {
        let prof = fit_contraction_profile(gauss(), &[10.0, 20.0, 50.0, 100.0], 12, 0.5, DEFAULT_DEGREE).unwrap();
        assert_eq!(prof.verdict, Verdict::Contracting);
        assert!(prof.delta1 > 0.0);
        let t0 = prof.t0.unwrap();
        for p in prof.probes.iter().filter(|p| p.b >= t0) {
            for (m, v) in p.norms.iter().enumerate() {
                let bound = prof.c_xi * p.b.powf(0.5) * (-prof.delta1 * m as f64).exp() * p.norms[0];
                assert!(*v <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn probe_and_profile_validate() {
        let mu = gauss();
        assert!(contraction_probe(mu, 10.0, 2, &one(mu), "1").is_err());
        assert!(fit_contraction_profile(mu, &[10.0], 6, 0.5, 64).is_err());
        assert!(fit_contraction_profile(mu, &[10.0, 50.0], 6, 0.5, 64).is_err());
        assert!(fit_contraction_profile(mu, &[10.0, 100.0], 6, 1.0, 64).is_err());
    }

    #[test]
    fn mollifier_majorizes_and_has_expected_norms() {
        let h = Mollifier::new(2.0, 2.05).unwrap();
        assert!(h.majorizes(1000));
        let ratio = h.l1() / h.width;
        assert!((1.0..=3.0).contains(&ratio));
        let second = 4.0 * (2.0 * PI).sqrt() * (-0.5f64).exp();
        assert!((h.second_l1() * h.width / Mollifier::amplitude() - second).abs() < 1e-9);
    }

    #[test]
    fn mollifier_transform_matches_quadrature() {
        let h = Mollifier::new(-0.3, 0.5).unwrap();
        let n = 20_000;
        let (a, b) = (h.center - 8.0 * h.width, h.center + 8.0 * h.width);
        let dt = (b - a) / n as f64;
        for xi in [0.0, 0.4, 1.7, -2.2] {
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..=n {
                let t = a + dt * i as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                s += Complex64::from_polar(w * h.eval(t), -2.0 * PI * xi * t);
            }
            assert!((s * dt - h.fourier(xi)).norm() < 1e-10, "xi={xi}");
        }
    }

    #[test]
    fn count_interval_length_bounds() {
        let big_r = 4.0;
        for (y, r) in [(1.0, 0.1), (2.0, 1.5), (0.5, 0.2), (3.0, 0.9)] {
            let (lo, hi) = count_interval(10.0, y, r).unwrap();
            assert!((1.0 / big_r..=big_r).contains(&(y - r)) && y + r <= big_r);
            let len = hi - lo;
            assert!(2.0 * r / big_r <= len && len <= 2.0 * big_r * r);
        }
        assert!(count_interval(1.0, 0.2, 0.2).is_err());
    }

    #[test]
    fn mollified_count_bounds_direct_count() {
        let mu = gauss();
        let sys = mu.system();
        let e = Word::from_symbols(vec![1, 2, 1, 2]);
        let (m, y, r) = (8, 1.0, 0.3);
        let x = sys.hull().mid();
        let mc = mollified_count(mu, &e, m, y, r, x, &MollifiedCountOptions::default()).unwrap();
        let scale = (mu.lyapunov() * (e.len() + m) as f64).exp();
        let oracle = enumerate_words(2, m)
            .filter(|d| {
                let v = scale * sys.f_word_deriv(&e.concat(d), x).unwrap().abs();
                (y - r..=y + r).contains(&v)
            })
            .count() as u64;
        assert_eq!(mc.direct_count, oracle);
        assert!(oracle > 0);
        assert!(mc.direct_count as f64 <= mc.majorant);
        assert!(mc.direct_count as f64 <= mc.cauchy_schwarz);
        let gap = (mc.weighted_frequency - mc.weighted_real).norm();
        assert!(gap <= mc.tail_bound + 1e-12 * mc.weighted_real.abs());
    }

    #[test]
    fn cantor_counts_everything_at_the_right_scale() {
        let mu = cantor();
        let e = Word::from_symbols(vec![2, 1]);
        let mc = mollified_count(mu, &e, 6, 1.0, 0.1, 0.5, &MollifiedCountOptions::default()).unwrap();
        assert_eq!(mc.direct_count, 64);
        assert!(mollified_count(mu, &e, 6, 0.1, 0.1, 0.5, &MollifiedCountOptions::default()).is_err());
    }
}

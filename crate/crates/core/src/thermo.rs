//! Transfer operators, pressure and equilibrium measures.
//!
//! Functions live in [`BranchFunction`] space. The discretized operator is the
//! matrix `M[(c,i),(a,j)] = e^{φ(f_a x_{c,i})} ℓ^a_j(f_a x_{c,i})`; its right
//! Perron vector is the eigenfunction `h` and its left Perron vector is a
//! quadrature rule for the conformal measure. All measure integrals pull the
//! integrand back through `m` steps of the normalized operator before applying
//! that rule, so `∫𝓛_φ̄ g dμ = ∫ g dμ` holds up to rounding.

use crate::cheb::{grids, BranchFunction, ChebNodes, Scalar};
use crate::error::{param, Error, Result};
use crate::ifs::{validate, CantorSystem, Interval};
use crate::sum::NeumaierSum;
use crate::symbolic::{enumerate_words, word_count, Word};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

type PotentialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PotentialKind {
    /// `φ = −s·τ`.
    Geometric { s: f64 },
    /// `φ = log p_a` on `I_a`.
    Weights(Vec<f64>),
    Custom(String),
}

#[derive(Clone)]
pub struct PotentialSpec {
    kind: PotentialKind,
    custom: Option<PotentialFn>,
    /// Declared, not verified.
    pub variation_decay: bool,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)
    }
}

impl PotentialSpec {
    pub fn geometric(s: f64) -> Self {
        PotentialSpec {
            kind: PotentialKind::Geometric { s },
            custom: None,
            variation_decay: true,
        }
    }

    pub fn weights(p: &[f64]) -> Result<Self> {
        if p.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(param("weights", "weights must be positive and finite"));
        }
        Ok(PotentialSpec {
            kind: PotentialKind::Weights(p.to_vec()),
            custom: None,
            variation_decay: true,
        })
    }

    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        PotentialSpec {
            kind: PotentialKind::Custom(label.into()),
            custom: Some(Arc::new(f)),
            variation_decay: false,
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    fn check(&self, sys: &CantorSystem) -> Result<()> {
        if let PotentialKind::Weights(p) = &self.kind {
            if p.len() != sys.n_symbols() {
                return Err(param(
                    "weights",
                    format!("{} weights for {} branches", p.len(), sys.n_symbols()),
                ));
            }
        }
        Ok(())
    }

    /// `φ(f_a y)` for 0-based `a`.
    #[inline]
    pub fn at_branch(&self, sys: &CantorSystem, a: usize, y: f64) -> f64 {
        match &self.kind {
            PotentialKind::Geometric { s } => s * sys.df(a, y).abs().ln(),
            PotentialKind::Weights(p) => p[a].ln(),
            PotentialKind::Custom(_) => (self.custom.as_ref().expect("custom potential"))(sys.f(a, y)),
        }
    }

    /// `φ(x)` for `x` in a branch interval.
    pub fn at(&self, sys: &CantorSystem, x: f64) -> Result<f64> {
        let a = sys.locate(x).ok_or(Error::OutOfDomain {
            x,
            lo: sys.hull().lo,
            hi: sys.hull().hi,
            what: "union of branch intervals",
        })?;
        Ok(self.at_branch(sys, a, sys.inverse(a, x)))
    }

    pub fn describe(&self) -> String {
        format!("{:?}", self.kind)
    }

    pub fn hash64(&self) -> u64 {
        let d = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// `(𝓛_φ g)(x) = Σ_a e^{φ(f_a x)} g(f_a x)`, re-interpolated on the nodes of `g`.
pub fn transfer_apply<T: Scalar>(
    sys: &CantorSystem,
    phi: &PotentialSpec,
    g: &BranchFunction<T>,
) -> Result<BranchFunction<T>> {
    phi.check(sys)?;
    let nodes = g.nodes().to_vec();
    let values = nodes
        .iter()
        .map(|nd| {
            nd.x.iter()
                .map(|&x| {
                    (0..sys.n_symbols()).fold(T::default(), |acc, a| {
                        acc + g.eval_branch(a, sys.f(a, x)) * phi.at_branch(sys, a, x).exp()
                    })
                })
                .collect()
        })
        .collect();
    Ok(BranchFunction::from_values(nodes, values))
}

/// Dense transfer matrix on per-branch Lobatto nodes.
pub struct TransferMatrix {
    pub nodes: Vec<ChebNodes>,
    pub size: usize,
    pub data: Vec<f64>,
}

impl TransferMatrix {
    pub fn new(sys: &CantorSystem, phi: &PotentialSpec, degree: usize) -> Result<Self> {
        phi.check(sys)?;
        let nodes = grids(sys, degree);
        let per = degree + 1;
        let size = per * sys.n_symbols();
        let mut data = vec![0.0; size * size];
        let mut basis = vec![0.0; per];
        for (c, nd) in nodes.iter().enumerate() {
            for (i, &x) in nd.x.iter().enumerate() {
                let row = (c * per + i) * size;
                for (a, na) in nodes.iter().enumerate() {
                    let e = phi.at_branch(sys, a, x).exp();
                    if !e.is_finite() {
                        return Err(Error::NonFinite("potential"));
                    }
                    na.basis(sys.f(a, x), &mut basis);
                    for (j, &b) in basis.iter().enumerate() {
                        data[row + a * per + j] = e * b;
                    }
                }
            }
        }
        Ok(TransferMatrix { nodes, size, data })
    }

    fn apply(&self, v: &[f64], out: &mut [f64], transpose: bool) {
        let n = self.size;
        if transpose {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (i, &vi) in v.iter().enumerate() {
                let row = &self.data[i * n..(i + 1) * n];
                for (o, &m) in out.iter_mut().zip(row) {
                    *o += m * vi;
                }
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                let row = &self.data[i * n..(i + 1) * n];
                *o = row.iter().zip(v).map(|(m, x)| m * x).sum();
            }
        }
    }

    /// Perron eigenpair by power iteration from the constant vector.
    pub fn perron(&self, transpose: bool, tol: f64, max_iters: usize) -> Result<(f64, Vec<f64>, usize)> {
        let n = self.size;
        let mut v = vec![1.0; n];
        let mut u = vec![0.0; n];
        let mut prev = f64::NAN;
        for it in 1..=max_iters {
            self.apply(&v, &mut u, transpose);
            let vv: f64 = v.iter().map(|x| x * x).sum();
            let rho = v.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / vv;
            let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !(scale.is_finite() && scale > 0.0 && rho.is_finite()) {
                return Err(Error::NonFinite("power iteration"));
            }
            for (vi, ui) in v.iter_mut().zip(&u) {
                *vi = ui / scale;
            }
            if (rho - prev).abs() <= tol * rho.abs() {
                return Ok((rho, v, it));
            }
            prev = rho;
        }
        Err(Error::NonConvergence {
            what: "power iteration",
            iterations: max_iters,
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ThermoOptions {
    pub degree: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Depth `m` of the pull-back used by measure integrals.
    pub quad_depth: usize,
    /// Per-branch degree of the reduced quadrature rule.
    pub rule_degree: usize,
    /// Cylinders up to this length enter the Gibbs constant.
    pub gibbs_depth: usize,
    /// Extra pull-back depth for cylinder masses.
    pub cylinder_depth: usize,
}

impl Default for ThermoOptions {
    fn default() -> Self {
        ThermoOptions {
            degree: 32,
            tol: 1e-12,
            max_iters: 10_000,
            quad_depth: 12,
            rule_degree: 8,
            gibbs_depth: 12,
            cylinder_depth: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PressureReport {
    pub pressure: f64,
    pub iterations: usize,
}

pub fn pressure(sys: &CantorSystem, phi: &PotentialSpec, opts: &ThermoOptions) -> Result<PressureReport> {
    let m = TransferMatrix::new(sys, phi, opts.degree)?;
    let (rho, _, iterations) = m.perron(false, opts.tol, opts.max_iters)?;
    if rho <= 0.0 {
        return Err(Error::NonPositiveEigenfunction { min: rho });
    }
    Ok(PressureReport {
        pressure: rho.ln(),
        iterations,
    })
}

/// Root of `s ↦ P(−sτ)` on `[0, 1]`.
pub fn bowen_dimension(sys: &CantorSystem, opts: &ThermoOptions) -> Result<f64> {
    sys.ensure_separated()?;
    let f = |s: f64| pressure(sys, &PotentialSpec::geometric(s), opts).map(|r| r.pressure);
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut flo, mut fhi) = (f(lo)?, f(hi)?);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoSignChange { lo, hi });
    }
    // Illinois variant of regula falsi; bisection when the step stalls.
    let mut side = 0i8;
    for _ in 0..200 {
        let mut s = (lo * fhi - hi * flo) / (fhi - flo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let fs = f(s)?;
        if fs.abs() < 1e-14 || hi - lo < 1e-15 {
            return Ok(s);
        }
        if fs.signum() == flo.signum() {
            lo = s;
            flo = fs;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            fhi = fs;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Point-weight rule for the equilibrium measure, nodes inside branch intervals.
#[derive(Clone, Debug, Serialize)]
pub struct QuadRule {
    pub branch: Vec<usize>,
    pub x: Vec<f64>,
    /// Weights summing to one.
    pub q: Vec<f64>,
    /// `q / h` at each node.
    pub q_over_h: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ExpansionConstants {
    pub gamma: f64,
    pub d_const: f64,
    pub distortion_b: f64,
}

pub struct GibbsMeasure {
    sys: CantorSystem,
    potential: PotentialSpec,
    opts: ThermoOptions,
    pressure: f64,
    h: BranchFunction<f64>,
    rule: QuadRule,
    lyapunov: f64,
    entropy: f64,
    gibbs_constant: f64,
    dual_residual: f64,
    variation: Vec<f64>,
    expansion: ExpansionConstants,
    eig_iterations: usize,
    cache: RwLock<HashMap<Vec<u8>, f64>>,
}

impl fmt::Debug for GibbsMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GibbsMeasure")
            .field("system", &self.sys.name())
            .field("potential", &self.potential)
            .field("pressure", &self.pressure)
            .field("lyapunov", &self.lyapunov)
            .field("entropy", &self.entropy)
            .field("gibbs_constant", &self.gibbs_constant)
            .finish()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GibbsSummary {
    pub system: String,
    pub potential: String,
    pub pressure: f64,
    pub lyapunov: f64,
    pub entropy: f64,
    pub dimension: f64,
    pub gibbs_constant: f64,
    pub dual_residual: f64,
    pub branch_masses: Vec<f64>,
    pub variation: Vec<f64>,
    pub expansion: ExpansionConstants,
    pub eig_iterations: usize,
}

pub fn build_gibbs(sys: &CantorSystem, phi: &PotentialSpec, opts: &ThermoOptions) -> Result<GibbsMeasure> {
    sys.ensure_separated()?;
    if opts.degree < 2 || opts.rule_degree < 1 || opts.quad_depth == 0 {
        return Err(param("numerics", "degree ≥ 2, rule_degree ≥ 1 and quad_depth ≥ 1 required"));
    }
    let mat = TransferMatrix::new(sys, phi, opts.degree)?;
    let (rho, hv, iters) = mat.perron(false, opts.tol, opts.max_iters)?;
    let (rho_l, nu, iters_l) = mat.perron(true, opts.tol, opts.max_iters)?;
    if rho <= 0.0 || (rho_l / rho - 1.0).abs() > 1e-8 {
        return Err(Error::NonConvergence {
            what: "left/right Perron eigenvalue agreement",
            iterations: iters_l,
        });
    }
    let hmin = hv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hmin > 0.0) {
        return Err(Error::NonPositiveEigenfunction { min: hmin });
    }
    let per = opts.degree + 1;
    let hvals: Vec<Vec<f64>> = hv.chunks(per).map(|c| c.to_vec()).collect();
    let h = BranchFunction::from_values(mat.nodes.clone(), hvals);

    // Full rule q_i ∝ ν_i h_i, projected onto degree-`rule_degree` nodes per branch.
    let norm: f64 = nu.iter().zip(&hv).map(|(a, b)| a * b).sum();
    let mut rule = QuadRule {
        branch: Vec::new(),
        x: Vec::new(),
        q: Vec::new(),
        q_over_h: Vec::new(),
    };
    let mut basis = vec![0.0; opts.rule_degree + 1];
    for (c, nd) in mat.nodes.iter().enumerate() {
        let red = ChebNodes::new(nd.interval, opts.rule_degree);
        let mut qr = vec![0.0; red.len()];
        for (i, &x) in nd.x.iter().enumerate() {
            let qi = nu[c * per + i] * hv[c * per + i] / norm;
            red.basis(x, &mut basis);
            for (acc, b) in qr.iter_mut().zip(&basis) {
                *acc += qi * b;
            }
        }
        for (j, &x) in red.x.iter().enumerate() {
            rule.branch.push(c);
            rule.x.push(x);
            rule.q.push(qr[j]);
            rule.q_over_h.push(qr[j] / h.eval_branch(c, x));
        }
    }

    let v = validate(sys, 10, 33)?;
    let mut mu = GibbsMeasure {
        sys: sys.clone(),
        potential: phi.clone(),
        opts: *opts,
        pressure: rho.ln(),
        h,
        rule,
        lyapunov: f64::NAN,
        entropy: f64::NAN,
        gibbs_constant: f64::NAN,
        dual_residual: f64::NAN,
        variation: Vec::new(),
        expansion: ExpansionConstants {
            gamma: v.gamma,
            d_const: v.d_const,
            distortion_b: v.distortion_b,
        },
        eig_iterations: iters.max(iters_l),
        cache: RwLock::new(HashMap::new()),
    };
    mu.lyapunov = mu.lyapunov_at(opts.quad_depth);
    mu.entropy = mu.entropy_at(opts.quad_depth);
    if !(mu.lyapunov > 0.0) {
        return Err(Error::NonFinite("Lyapunov exponent"));
    }
    mu.gibbs_constant = mu.gibbs_constant_at(opts.gibbs_depth);
    mu.dual_residual = mu.dual_residual_at(opts.quad_depth);
    mu.variation = mu.sampled_variation(6);
    Ok(mu)
}

impl GibbsMeasure {
    pub fn system(&self) -> &CantorSystem {
        &self.sys
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn options(&self) -> &ThermoOptions {
        &self.opts
    }

    pub fn pressure(&self) -> f64 {
        self.pressure
    }

    pub fn lyapunov(&self) -> f64 {
        self.lyapunov
    }

    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    pub fn dimension(&self) -> f64 {
        self.entropy / self.lyapunov
    }

    pub fn gibbs_constant(&self) -> f64 {
        self.gibbs_constant
    }

    pub fn dual_residual(&self) -> f64 {
        self.dual_residual
    }

    pub fn expansion(&self) -> ExpansionConstants {
        self.expansion
    }

    pub fn eigenfunction(&self) -> &BranchFunction<f64> {
        &self.h
    }

    pub fn rule(&self) -> &QuadRule {
        &self.rule
    }

    pub fn summary(&self) -> GibbsSummary {
        GibbsSummary {
            system: self.sys.name().to_string(),
            potential: self.potential.describe(),
            pressure: self.pressure,
            lyapunov: self.lyapunov,
            entropy: self.entropy,
            dimension: self.dimension(),
            gibbs_constant: self.gibbs_constant,
            dual_residual: self.dual_residual,
            branch_masses: (1..=self.sys.n_symbols() as u8)
                .map(|a| self.cylinder_measure(&Word::from_symbols(vec![a])))
                .collect(),
            variation: self.variation.clone(),
            expansion: self.expansion,
            eig_iterations: self.eig_iterations,
        }
    }

    /// Raw potential at `f_a y` (0-based `a`).
    #[inline]
    pub fn phi(&self, a: usize, y: f64) -> f64 {
        self.potential.at_branch(&self.sys, a, y)
    }

    /// Eigenfunction on branch interval `a`.
    #[inline]
    pub fn h_in(&self, a: usize, y: f64) -> f64 {
        self.h.eval_branch(a, y)
    }

    /// Eigenfunction anywhere on the hull via `h = e^{−P} 𝓛_φ h`.
    pub fn h_at(&self, x: f64) -> f64 {
        let s: f64 = (0..self.sys.n_symbols())
            .map(|a| (self.phi(a, x) - self.pressure).exp() * self.h_in(a, self.sys.f(a, x)))
            .sum();
        s
    }

    /// Interpolant inside a branch interval, [`Self::h_at`] in the gaps.
    pub fn h_point(&self, x: f64) -> f64 {
        match self.sys.branches().iter().position(|b| b.interval.contains(x)) {
            Some(a) => self.h_in(a, x),
            None => self.h_at(x),
        }
    }

    /// `e^{S_nφ̄(f_w x)}` for 1-based symbols, without argument checks.
    pub fn weight_of(&self, word: &[u8], x: f64) -> f64 {
        if word.is_empty() {
            return 1.0;
        }
        let (y, s) = self.pull(word, x);
        (s - word.len() as f64 * self.pressure).exp() * self.h_in(word[0] as usize - 1, y) / self.h_point(x)
    }

    /// `(f_w x, S_nφ(f_w x))`.
    #[inline]
    pub fn pull(&self, word: &[u8], x: f64) -> (f64, f64) {
        let mut y = x;
        let mut s = 0.0;
        for &c in word.iter().rev() {
            let a = c as usize - 1;
            s += self.phi(a, y);
            y = self.sys.f(a, y);
        }
        (y, s)
    }

    /// Birkhoff weight `w̄_w(x)` of the normalized potential.
    pub fn birkhoff_weight(&self, w: &Word, x: f64) -> Result<f64> {
        w.check(self.sys.n_symbols())?;
        let hull = self.sys.hull();
        if !hull.contains_tol(x, 1e-12) {
            return Err(Error::OutOfDomain {
                x,
                lo: hull.lo,
                hi: hull.hi,
                what: "hull",
            });
        }
        Ok(self.weight_of(w.symbols(), x))
    }

    /// Normalized potential `φ̄(f_a y)`.
    pub fn phi_bar(&self, a: usize, y: f64) -> f64 {
        let z = self.sys.f(a, y);
        self.phi(a, y) - self.pressure + self.h_in(a, z).ln() - self.h_point(y).ln()
    }

    /// `μ(I_w)`, cached.
    pub fn cylinder_measure(&self, w: &Word) -> f64 {
        if w.is_empty() {
            return 1.0;
        }
        if let Some(&m) = self.cache.read().expect("cache lock").get(w.symbols()) {
            return m;
        }
        let m = self.cylinder_measure_uncached(w.symbols(), self.opts.cylinder_depth);
        self.cache
            .write()
            .expect("cache lock")
            .insert(w.symbols().to_vec(), m);
        m
    }

    /// `Σ_j q_j Σ_{|b|=depth} w̄_{wb}(x_j)` for 1-based symbols.
    pub fn cylinder_measure_uncached(&self, word: &[u8], depth: usize) -> f64 {
        let n = self.sys.n_symbols();
        let a0 = word[0] as usize - 1;
        let total = word.len() + depth;
        let mut acc = NeumaierSum::new();
        let mut full = word.to_vec();
        full.resize(total, 1);
        let count = (n as u64).pow(depth as u32);
        for idx in 0..count {
            let mut k = idx;
            for p in (word.len()..total).rev() {
                full[p] = (k % n as u64) as u8 + 1;
                k /= n as u64;
            }
            for j in 0..self.rule.len() {
                let (y, s) = self.pull(&full, self.rule.x[j]);
                acc.add(self.rule.q_over_h[j] * (s - total as f64 * self.pressure).exp() * self.h_in(a0, y));
            }
        }
        acc.value()
    }

    /// `∫ f dμ` with `f` given as `f(a, T y, y)` at `y = f_b x_j`, `a = b₁`, `|b| = m`.
    pub fn integrate_pullback<F>(&self, m: usize, f: F) -> f64
    where
        F: Fn(usize, f64, f64) -> f64,
    {
        let k = self.rule.len();
        let ys = self.rule.x.clone();
        let ss = vec![0.0; k];
        let mut acc = NeumaierSum::new();
        self.pullback_rec(m.max(1), 0, &ys, &ss, &f, &mut acc);
        acc.value()
    }

    fn pullback_rec<F>(&self, m: usize, level: usize, ys: &[f64], ss: &[f64], f: &F, acc: &mut NeumaierSum)
    where
        F: Fn(usize, f64, f64) -> f64,
    {
        let k = ys.len();
        let mut ny = vec![0.0; k];
        let mut ns = vec![0.0; k];
        for a in 0..self.sys.n_symbols() {
            for j in 0..k {
                ns[j] = ss[j] + self.phi(a, ys[j]);
                ny[j] = self.sys.f(a, ys[j]);
            }
            if level + 1 == m {
                let mp = m as f64 * self.pressure;
                for j in 0..k {
                    let wgt = self.rule.q_over_h[j] * (ns[j] - mp).exp() * self.h_in(a, ny[j]);
                    acc.add(wgt * f(a, ys[j], ny[j]));
                }
            } else {
                self.pullback_rec(m, level + 1, &ny, &ns, f, acc);
            }
        }
    }

    /// `∫ g dμ` at pull-back depth `m`.
    pub fn integrate(&self, g: impl Fn(f64) -> f64, m: usize) -> f64 {
        self.integrate_pullback(m, |_, _, y| g(y))
    }

    pub fn lyapunov_at(&self, m: usize) -> f64 {
        self.integrate_pullback(m, |a, yp, _| -self.sys.df(a, yp).abs().ln())
    }

    pub fn entropy_at(&self, m: usize) -> f64 {
        -self.integrate_pullback(m, |a, yp, _| self.phi_bar(a, yp))
    }

    /// `(𝓛_φ̄ g)(x) = Σ_a w̄_a(x) g(f_a x)`.
    pub fn transfer_normalized_at(&self, g: impl Fn(f64) -> f64, x: f64) -> f64 {
        let hx = self.h_point(x);
        (0..self.sys.n_symbols())
            .map(|a| {
                let y = self.sys.f(a, x);
                (self.phi(a, x) - self.pressure).exp() * self.h_in(a, y) / hx * g(y)
            })
            .sum()
    }

    /// `max_g |∫𝓛_φ̄ g dμ − ∫g dμ|` over `g ∈ {1, x, x², cos 2πx}`.
    pub fn dual_residual_at(&self, m: usize) -> f64 {
        let tests: [fn(f64) -> f64; 4] = [
            |_| 1.0,
            |x| x,
            |x| x * x,
            |x| (std::f64::consts::TAU * x).cos(),
        ];
        tests
            .iter()
            .map(|g| {
                let lhs = self.integrate(|y| self.transfer_normalized_at(g, y), m);
                let rhs = self.integrate(g, m);
                (lhs - rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `max_{|w| ≤ depth} max(μ(I_w)/w̄_w(x), w̄_w(x)/μ(I_w))` over `x` in [`hull_points`].
    pub fn gibbs_constant_at(&self, depth: usize) -> f64 {
        let anchors = hull_points(self.sys.hull());
        let n = self.sys.n_symbols();
        let mut c = 1.0f64;
        for len in 1..=depth {
            if word_count(n, len).map_or(true, |k| k > 1 << 20) {
                break;
            }
            for w in enumerate_words(n, len) {
                let m = self.cylinder_measure(&w);
                for &x in &anchors {
                    let r = m / self.weight_of(w.symbols(), x);
                    c = c.max(r).max(1.0 / r);
                }
            }
        }
        c
    }

    /// `var_n φ`: largest sampled oscillation of `φ` over cylinders of length `n`, for `n = 1..=n_max`.
    pub fn sampled_variation(&self, n_max: usize) -> Vec<f64> {
        let n = self.sys.n_symbols();
        let grid = self.sys.hull().grid(9);
        (1..=n_max)
            .take_while(|&len| word_count(n, len).is_some_and(|k| k <= 1 << 14))
            .map(|len| {
                enumerate_words(n, len)
                    .map(|w| {
                        let tail = &w.symbols()[1..];
                        let a = w.symbols()[0] as usize - 1;
                        let vals = grid.iter().map(|&y| {
                            let (z, _) = self.sys.orbit(tail, y);
                            self.phi(a, z)
                        });
                        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                            (l.min(v), h.max(v))
                        });
                        hi - lo
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Cached `(word, μ(I_w), w̄_w(x*))`, sorted by length then lexicographically.
    pub fn cache_entries(&self) -> Vec<(Word, f64, f64)> {
        let xs = self.sys.hull().mid();
        let mut out: Vec<(Word, f64, f64)> = self
            .cache
            .read()
            .expect("cache lock")
            .iter()
            .map(|(k, &m)| (Word::from_symbols(k.clone()), m, self.weight_of(k, xs)))
            .collect();
        out.sort_by(|a, b| {
            (a.0.len(), a.0.symbols()).cmp(&(b.0.len(), b.0.symbols()))
        });
        out
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    /// Binary cache: magic, version, system hash, potential hash, then `(len, symbols, mass)` records.
    pub fn save_cache(&self, path: &Path) -> Result<usize> {
        let entries = self.cache_entries();
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.sys.hash64().to_le_bytes());
        buf.extend_from_slice(&self.potential.hash64().to_le_bytes());
        buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
        for (w, m, _) in &entries {
            buf.extend_from_slice(&(w.len() as u32).to_le_bytes());
            buf.extend_from_slice(w.symbols());
            buf.extend_from_slice(&m.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(entries.len())
    }

    /// Merges a cache file written for the same system and potential.
    pub fn load_cache(&self, path: &Path) -> Result<usize> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut r = ByteReader { buf: &buf, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::CacheMismatch("bad magic".into()));
        }
        if r.u32()? != CACHE_VERSION {
            return Err(Error::CacheMismatch("unsupported version".into()));
        }
        if r.u64()? != self.sys.hash64() || r.u64()? != self.potential.hash64() {
            return Err(Error::CacheMismatch("system or potential differs".into()));
        }
        let count = r.u64()? as usize;
        let mut cache = self.cache.write().expect("cache lock");
        for _ in 0..count {
            let len = r.u32()? as usize;
            let sym = r.take(len)?.to_vec();
            Word::from_symbols(sym.clone())
                .check(self.sys.n_symbols())
                .map_err(|e| Error::CacheMismatch(e.to_string()))?;
            let m = f64::from_le_bytes(r.take(8)?.try_into().expect("eight bytes"));
            cache.insert(sym, m);
        }
        Ok(count)
    }
}

const CACHE_MAGIC: &[u8; 4] = b"CFWC";
const CACHE_VERSION: u32 = 1;

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::CacheMismatch("truncated file".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

/// Hull sample points used by the measure-level diagnostics.
pub fn hull_points(hull: Interval) -> [f64; 3] {
    [hull.lo, hull.mid(), hull.hi]
}

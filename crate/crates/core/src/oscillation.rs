//! Derivative coordinates of regular blocks, non-concentration counts,
//! exponential sums and the frequency-side audit of `|μ̂(ξ)|²`.

use crate::deviations::{regular_blocks, regular_words, DeviationParams, RegularWordSet, BLOCK_BUDGET};
use crate::error::{param, Error, Result};
use crate::fourier::{fourier_at, least_squares, ser_complex, FourierOptions};
use crate::sum::{unit_phase, ComplexSum, NeumaierSum};
use crate::symbolic::{Block, Word};
use crate::thermo::GibbsMeasure;
use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// `R = 16²·C·C_{ε,n}^{3λ}` with `C` the Gibbs constant.
pub fn range_bound(mu: &GibbsMeasure, n: usize, params: &DeviationParams) -> f64 {
    256.0 * mu.gibbs_constant() * (3.0 * mu.lyapunov() * params.eps * n as f64).exp()
}

/// `e^{2λn}|f_{ab}'(x)|` from the orbit of `x` under `b`.
fn zeta_raw(mu: &GibbsMeasure, scale: f64, a: &[u8], b: &[u8], x: f64) -> f64 {
    let sys = mu.system();
    let (y, db) = sys.orbit(b, x);
    let (_, da) = sys.orbit(a, y);
    scale * (da * db).abs()
}

fn check_range(value: f64, r: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFinite("zeta"));
    }
    if value < 1.0 / r || value > r {
        return Err(Error::ZetaOutOfRange {
            value,
            lo: 1.0 / r,
            hi: r,
        });
    }
    Ok(value)
}

/// A block `𝐀 = (𝐚_0, …, 𝐚_k)` with the centres of its construction intervals.
#[derive(Clone, Debug)]
pub struct ZetaContext<'a> {
    mu: &'a GibbsMeasure,
    block: Block,
    n: usize,
    centers: Vec<f64>,
    range: f64,
    scale: f64,
}

impl<'a> ZetaContext<'a> {
    pub fn new(mu: &'a GibbsMeasure, block: Block, params: &DeviationParams) -> Result<Self> {
        let n = match block.word_len() {
            Some(n) if n > 0 => n,
            _ => return Err(Error::InvalidBlock("needs at least one nonempty word".into())),
        };
        let sys = mu.system();
        for w in block.words() {
            w.check(sys.n_symbols())?;
        }
        let centers = block.words().iter().map(|w| sys.cylinder_of(w.symbols()).mid()).collect();
        Ok(ZetaContext {
            mu,
            n,
            centers,
            range: range_bound(mu, n, params),
            scale: (2.0 * mu.lyapunov() * n as f64).exp(),
            block,
        })
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of `ζ` coordinates, one less than the number of words.
    pub fn k(&self) -> usize {
        self.block.count() - 1
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// `ζ_{j,𝐀}(𝐛) = e^{2λn}|f_{𝐚_{j−1}𝐛}'(x_{𝐚_j})|`, for `1 ≤ j ≤ k`.
    pub fn zeta(&self, j: usize, b: &Word) -> Result<f64> {
        if j == 0 || j > self.k() {
            return Err(Error::IndexOutOfRange {
                index: j,
                max: self.k(),
            });
        }
        b.check(self.mu.system().n_symbols())?;
        if b.len() != self.n {
            return Err(Error::InvalidWord(format!("{b} has length {}, expected {}", b.len(), self.n)));
        }
        let prev = self.block.words()[j - 1].symbols();
        check_range(zeta_raw(self.mu, self.scale, prev, b.symbols(), self.centers[j]), self.range)
    }

    pub fn zeta_row(&self, j: usize, words: &[Word]) -> Result<Vec<f64>> {
        words.iter().map(|b| self.zeta(j, b)).collect()
    }
}

/// `J_n(ε) = [e^{ε₀n/2}, C_{ε,n}e^{ε₀n}]` in `|η|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrequencyWindow {
    pub lo: f64,
    pub hi: f64,
}

impl FrequencyWindow {
    pub fn new(n: usize, params: &DeviationParams) -> Result<Self> {
        let nf = n as f64;
        let lo = (0.5 * params.eps0 * nf).exp();
        let hi = ((params.eps + params.eps0) * nf).exp();
        if !(lo < hi) {
            return Err(param("n", "frequency window is empty"));
        }
        Ok(FrequencyWindow { lo, hi })
    }

    pub fn contains(&self, eta: f64) -> bool {
        (self.lo..=self.hi).contains(&eta.abs())
    }

    /// `m ≥ 2` log-uniform points including both endpoints.
    pub fn log_grid(&self, m: usize) -> Vec<f64> {
        log_grid(self.lo, self.hi, m)
    }

    /// `[R^{−2}|η|^{−1}, |η|^{−ε₃}]`.
    pub fn sigma_range(eta: f64, r: f64, eps3: f64) -> (f64, f64) {
        let a = eta.abs();
        (1.0 / (r * r * a), a.powf(-eps3))
    }
}

fn log_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let m = m.max(2);
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..m)
        .map(|i| match i {
            0 => lo,
            _ if i == m - 1 => hi,
            _ => (l0 + (l1 - l0) * i as f64 / (m - 1) as f64).exp(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpSumParams {
    pub k: usize,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub c0: Option<f64>,
    pub kappa0: Option<f64>,
}

impl ExpSumParams {
    pub fn new(k: usize, eps2: f64, eps3: f64, eps4: f64) -> Result<Self> {
        if k == 0 {
            return Err(param("k", "must be at least 1"));
        }
        for (name, v) in [("eps2", eps2), ("eps3", eps3), ("eps4", eps4)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(param(name, "must be positive"));
            }
        }
        Ok(ExpSumParams {
            k,
            eps2,
            eps3,
            eps4,
            c0: None,
            kappa0: None,
        })
    }

    /// `ε₂ = 2 log γ` from the expansion constant, `ε₃ = ε₄ = 0.1`.
    pub fn desk(mu: &GibbsMeasure, k: usize) -> Result<Self> {
        Self::new(k, 2.0 * mu.expansion().gamma.ln(), 0.1, 0.1)
    }

    pub fn with_nonconc(mut self, c0: f64, kappa0: f64) -> Result<Self> {
        if !(c0 > 0.0 && kappa0 >= 0.0 && kappa0.is_finite()) {
            return Err(param("c0", "needs c0 > 0 and kappa0 >= 0"));
        }
        self.c0 = Some(c0);
        self.kappa0 = Some(kappa0);
        Ok(self)
    }
}

/// Ordered pairs `(i, j)` of sorted values with `|v_i − v_j| ≤ σ`, diagonal included.
fn close_pairs(sorted: &[f64], sigma: f64) -> u64 {
    let mut hi = 0;
    let mut off = 0u64;
    for i in 0..sorted.len() {
        if hi < i + 1 {
            hi = i + 1;
        }
        while hi < sorted.len() && sorted[hi] - sorted[i] <= sigma {
            hi += 1;
        }
        off += (hi - i - 1) as u64;
    }
    2 * off + sorted.len() as u64
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NonConcOptions {
    /// Outer words enumerated exactly up to this count, sampled with replacement beyond.
    pub max_outer: usize,
    pub seed: u64,
}

impl Default for NonConcOptions {
    fn default() -> Self {
        NonConcOptions {
            max_outer: 4096,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NonConcRow {
    pub sigma: f64,
    /// Triples `(𝐚,𝐛,𝐜)` with `|e^{2λn}f_{𝐚𝐛}'(x) − e^{2λn}f_{𝐚𝐜}'(x)| ≤ σ`.
    pub count: f64,
    /// `count / |ℛ_n|³`.
    pub normalized: f64,
    /// `(count − |ℛ_n|²) / |ℛ_n|³`.
    pub above_diagonal: f64,
    /// 95% half-width of `count`; zero when exact.
    pub ci: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NonConcReport {
    pub n: usize,
    pub x: f64,
    pub words: usize,
    /// Sampled outer words, `None` when exact.
    pub sampled: Option<usize>,
    pub rows: Vec<NonConcRow>,
}

/// Triple counts over `ℛ_n³` at `x` for every `σ` in `sigmas`.
pub fn nonconc_sweep(
    mu: &GibbsMeasure,
    set: &RegularWordSet,
    x: f64,
    sigmas: &[f64],
    opts: &NonConcOptions,
) -> Result<NonConcReport> {
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(param("sigma", "must be finite and nonnegative"));
    }
    let words = &set.words;
    let r = words.len();
    let sys = mu.system();
    let scale = (2.0 * mu.lyapunov() * set.n as f64).exp();
    let inner: Vec<(f64, f64)> = words.iter().map(|b| sys.orbit(b.symbols(), x)).collect();
    let outer: Vec<usize> = if r > opts.max_outer {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        (0..opts.max_outer).map(|_| rand::Rng::gen_range(&mut rng, 0..r)).collect()
    } else {
        (0..r).collect()
    };
    let per_outer: Vec<Vec<u64>> = outer
        .par_iter()
        .map(|&ai| {
            let a = words[ai].symbols();
            let vals = sorted(inner.iter().map(|&(y, db)| scale * (sys.orbit(a, y).1 * db).abs()).collect());
            sigmas.iter().map(|&s| close_pairs(&vals, s)).collect()
        })
        .collect();
    let rf = r as f64;
    let total = rf.powi(3);
    let sampled = (r > opts.max_outer).then_some(outer.len());
    let rows = sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let (count, ci) = if sampled.is_some() {
                let m = per_outer.len() as f64;
                let mean = per_outer.iter().map(|c| c[i] as f64).sum::<f64>() / m;
                let var = per_outer.iter().map(|c| (c[i] as f64 - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
                (rf * mean, 1.96 * rf * (var / m).sqrt())
            } else {
                (per_outer.iter().map(|c| c[i]).sum::<u64>() as f64, 0.0)
            };
            let norm = |v: f64| if r == 0 { 0.0 } else { v / total };
            NonConcRow {
                sigma,
                count,
                normalized: norm(count),
                above_diagonal: norm(count - rf * rf),
                ci,
            }
        })
        .collect();
    Ok(NonConcReport {
        n: set.n,
        x,
        words: r,
        sampled,
        rows,
    })
}

/// Triple count at one `σ` with the default outer budget.
pub fn nonconc_count(mu: &GibbsMeasure, x: f64, n: usize, params: &DeviationParams, sigma: f64) -> Result<NonConcRow> {
    let set = regular_words(mu, n, params)?;
    let report = nonconc_sweep(mu, &set, x, &[sigma], &NonConcOptions::default())?;
    Ok(report.rows[0])
}

#[derive(Clone, Debug, Serialize)]
pub struct NonConcFit {
    pub c0: f64,
    /// Smallest `κ` with `normalized ≤ C_{ε,n}^κ σ^{c₀}` on the sweep.
    pub kappa0: f64,
    pub residual: f64,
    pub points: usize,
}

/// Slope of `log(above_diagonal)` against `log σ`; zero rows are skipped.
pub fn fit_nonconc(report: &NonConcReport, params: &DeviationParams) -> Result<NonConcFit> {
    let pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.sigma > 0.0 && r.above_diagonal > 0.0)
        .map(|r| (r.sigma.ln(), r.above_diagonal.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "{} usable sigma values for the non-concentration fit",
            pts.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let (c0, b) = least_squares(&xs, &ys)?;
    let residual = (pts.iter().map(|&(x, y)| (y - c0 * x - b).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    let log_c = params.eps * report.n as f64;
    let kappa0 = report
        .rows
        .iter()
        .filter(|r| r.sigma > 0.0 && r.normalized > 0.0)
        .map(|r| (r.normalized.ln() - c0 * r.sigma.ln()) / log_c)
        .fold(0.0, f64::max);
    Ok(NonConcFit {
        c0,
        kappa0,
        residual,
        points: pts.len(),
    })
}

/// `ζ` values for every ordered pair `(𝐚_{j−1}, 𝐚_j)` of regular words, indexed `[p·r + q][b]`.
struct ZetaTable {
    r: usize,
    rows: Vec<Vec<f64>>,
}

impl ZetaTable {
    fn build(mu: &GibbsMeasure, set: &RegularWordSet, params: &DeviationParams) -> Result<Self> {
        let r = set.words.len();
        let sys = mu.system();
        let scale = (2.0 * mu.lyapunov() * set.n as f64).exp();
        let range = range_bound(mu, set.n, params);
        let centers: Vec<f64> = set.words.iter().map(|w| sys.cylinder_of(w.symbols()).mid()).collect();
        let rows: Vec<Result<Vec<f64>>> = (0..r * r)
            .into_par_iter()
            .map(|pq| {
                let (p, q) = (pq / r, pq % r);
                let a = set.words[p].symbols();
                set.words
                    .iter()
                    .map(|b| check_range(zeta_raw(mu, scale, a, b.symbols(), centers[q]), range))
                    .collect()
            })
            .collect();
        Ok(ZetaTable {
            r,
            rows: rows.into_iter().collect::<Result<_>>()?,
        })
    }

    fn row(&self, p: usize, q: usize) -> &[f64] {
        &self.rows[p * self.r + q]
    }
}

/// Advances a little-endian odometer over `r^len`; false once it wraps.
fn next_index(idx: &mut [usize], r: usize) -> bool {
    for d in idx.iter_mut().rev() {
        *d += 1;
        if *d < r {
            return true;
        }
        *d = 0;
    }
    false
}

fn checked_count(r: usize, k: usize, what: &'static str) -> Result<u64> {
    match (r as u64).checked_pow(k as u32) {
        Some(c) if c <= BLOCK_BUDGET => Ok(c),
        _ => Err(Error::Budget {
            what,
            needed: (r as f64).powi(k as i32),
            limit: BLOCK_BUDGET as f64,
        }),
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WellDistributedRow {
    pub sigma: f64,
    /// Blocks failing the pair-count test at this `σ`.
    pub complement: u64,
    /// `e^{−λ(k+1)δn}·complement`.
    pub normalized: f64,
    /// `C_{ε,n}^{2κ₀}σ^{c₀/4}`.
    pub bound: f64,
    pub within: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct WellDistributed {
    pub n: usize,
    pub k: usize,
    pub words: Vec<Word>,
    pub blocks: u64,
    /// Index tuples into `words` of blocks passing at every `σ`.
    pub well: Vec<Vec<u32>>,
    pub complement: u64,
    pub normalized_complement: f64,
    pub rows: Vec<WellDistributedRow>,
}

impl WellDistributed {
    pub fn well_blocks(&self) -> impl Iterator<Item = Block> + '_ {
        self.well.iter().map(|idx| {
            Block::new(idx.iter().map(|&i| self.words[i as usize].clone()).collect()).expect("regular words share one length")
        })
    }
}

/// Classifies `𝐀 ∈ ℛ_n^{k+1}(ε)` by `|{(𝐛,𝐜): |ζ_{j,𝐀}(𝐛)−ζ_{j,𝐀}(𝐜)| ≤ σ}| ≤ |ℛ_n|²σ^{c₀/2}` for all `j` and `σ`.
pub fn well_distributed_blocks(
    mu: &GibbsMeasure,
    n: usize,
    k: usize,
    params: &DeviationParams,
    sigmas: &[f64],
    c0: f64,
    kappa0: f64,
) -> Result<WellDistributed> {
    if !(c0 >= 0.0 && kappa0 >= 0.0) {
        return Err(param("c0", "c0 and kappa0 must be nonnegative"));
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(param("sigma", "must be finite and positive"));
    }
    let set = regular_words(mu, n, params)?;
    let r = set.words.len();
    let blocks = checked_count(r, k + 1, "well-distributed block enumeration")?;
    let rf = r as f64;
    // pair_ok[s][p·r + q]: the consecutive pair (p, q) passes at sigmas[s].
    let pair_ok: Vec<Vec<bool>> = if k == 0 || r == 0 {
        vec![Vec::new(); sigmas.len()]
    } else {
        let table = ZetaTable::build(mu, &set, params)?;
        let counts: Vec<Vec<u64>> = table
            .rows
            .par_iter()
            .map(|row| {
                let v = sorted(row.clone());
                sigmas.iter().map(|&s| close_pairs(&v, s)).collect()
            })
            .collect();
        sigmas
            .iter()
            .enumerate()
            .map(|(s, &sigma)| {
                let limit = rf * rf * sigma.powf(0.5 * c0);
                counts.iter().map(|c| c[s] as f64 <= limit).collect()
            })
            .collect()
    };
    let mut failing = vec![0u64; sigmas.len()];
    let mut well = Vec::new();
    if r > 0 {
        let mut idx = vec![0usize; k + 1];
        loop {
            let mut all = true;
            for (s, ok) in pair_ok.iter().enumerate() {
                let pass = idx.windows(2).all(|w| ok[w[0] * r + w[1]]);
                if !pass {
                    failing[s] += 1;
                    all = false;
                }
            }
            if all {
                well.push(idx.iter().map(|&i| i as u32).collect());
            }
            if !next_index(&mut idx, r) {
                break;
            }
        }
    }
    let weight = (-mu.lyapunov() * (k + 1) as f64 * mu.dimension() * n as f64).exp();
    let c_eps = params.c_eps(n);
    let rows = sigmas
        .iter()
        .zip(&failing)
        .map(|(&sigma, &complement)| {
            let normalized = weight * complement as f64;
            let bound = c_eps.powf(2.0 * kappa0) * sigma.powf(0.25 * c0);
            WellDistributedRow {
                sigma,
                complement,
                normalized,
                bound,
                within: normalized <= bound,
            }
        })
        .collect();
    let complement = blocks - well.len() as u64;
    Ok(WellDistributed {
        n,
        k,
        words: set.words,
        blocks,
        well,
        complement,
        normalized_complement: weight * complement as f64,
        rows,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExpSum {
    #[serde(serialize_with = "ser_complex")]
    pub value: Complex64,
    pub count: u64,
    /// `|value| / count`.
    pub normalized: f64,
}

/// `Σ_𝐁 e^{2πiη ζ_{1,𝐀}(𝐛_1)⋯ζ_{k,𝐀}(𝐛_k)}` over the given blocks of `k` words.
pub fn exp_sum(ctx: &ZetaContext<'_>, eta: f64, blocks: impl IntoIterator<Item = Block>) -> Result<ExpSum> {
    if !eta.is_finite() {
        return Err(param("eta", "must be finite"));
    }
    let k = ctx.k();
    let mut sum = ComplexSum::new();
    let mut count = 0u64;
    for b in blocks {
        if b.count() != k {
            return Err(Error::InvalidBlock(format!("{b} has {} words, expected {k}", b.count())));
        }
        let mut prod = 1.0;
        for (j, w) in b.words().iter().enumerate() {
            prod *= ctx.zeta(j + 1, w)?;
        }
        sum.add(unit_phase(-eta, prod));
        count += 1;
    }
    if count == 0 {
        return Err(param("blocks", "must be nonempty"));
    }
    let value = sum.value();
    Ok(ExpSum {
        value,
        count,
        normalized: value.norm() / count as f64,
    })
}

/// A finitely supported nonnegative measure on the line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(param("measure", "needs equally many points and weights, at least one"));
        }
        if points.iter().any(|p| !p.is_finite()) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(param("measure", "points must be finite and weights nonnegative"));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    /// Probability measure with equal mass on each point.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let weights = vec![w; points.len()];
        Self::new(points, weights)
    }

    pub fn point_mass(x: f64) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().copied().collect::<NeumaierSum>().value()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ordered pairs of atoms within `σ`, weighted by mass product.
    pub fn close_pair_mass(&self, sigma: f64) -> f64 {
        let mut s = NeumaierSum::new();
        for (x, wx) in self.points.iter().zip(&self.weights) {
            for (y, wy) in self.points.iter().zip(&self.weights) {
                if (x - y).abs() <= sigma {
                    s.add(wx * wy);
                }
            }
        }
        s.value()
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MultConvOptions {
    /// Largest product-term count enumerated exactly.
    pub budget: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for MultConvOptions {
    fn default() -> Self {
        MultConvOptions {
            budget: 1e7,
            draws: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MultConv {
    #[serde(serialize_with = "ser_complex")]
    pub value: Complex64,
    pub exact: bool,
    pub terms: f64,
    /// 95% half-width of `|value|`; zero when exact.
    pub ci_half_width: f64,
}

/// `(μ_1 ⊗ ⋯ ⊗ μ_k)^(η) = Σ w_1⋯w_k e^{−2πiη x_1⋯x_k}`.
pub fn mult_conv_fourier(measures: &[DiscreteMeasure], eta: f64, opts: &MultConvOptions) -> Result<MultConv> {
    if measures.is_empty() {
        return Err(param("measures", "need at least one factor"));
    }
    if !eta.is_finite() {
        return Err(param("eta", "must be finite"));
    }
    let terms: f64 = measures.iter().map(|m| m.len() as f64).product();
    if terms <= opts.budget {
        let (first, rest) = measures.split_first().expect("nonempty");
        let parts: Vec<ComplexSum> = first
            .points
            .par_iter()
            .zip(&first.weights)
            .map(|(&x, &w)| {
                let mut s = ComplexSum::new();
                conv_terms(rest, eta, x, w, &mut s);
                s
            })
            .collect();
        let mut total = ComplexSum::new();
        for p in &parts {
            total.merge(p);
        }
        return Ok(MultConv {
            value: total.value(),
            exact: true,
            terms,
            ci_half_width: 0.0,
        });
    }
    if opts.draws < 2 {
        return Err(param("draws", "need at least two Monte Carlo draws"));
    }
    let mass: f64 = measures.iter().map(DiscreteMeasure::total_mass).product();
    if mass == 0.0 {
        return Ok(MultConv {
            value: Complex64::new(0.0, 0.0),
            exact: true,
            terms,
            ci_half_width: 0.0,
        });
    }
    let dists = measures
        .iter()
        .map(|m| WeightedIndex::new(&m.weights).map_err(|e| param("measure", e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut sum = ComplexSum::new();
    let (mut sq_re, mut sq_im) = (NeumaierSum::new(), NeumaierSum::new());
    for _ in 0..opts.draws {
        let prod: f64 = measures.iter().zip(&dists).map(|(m, d)| m.points[d.sample(&mut rng)]).product();
        let z = unit_phase(eta, prod);
        sum.add(z);
        sq_re.add(z.re * z.re);
        sq_im.add(z.im * z.im);
    }
    let nd = opts.draws as f64;
    let mean = sum.value() / nd;
    let var = (sq_re.value() / nd - mean.re * mean.re) + (sq_im.value() / nd - mean.im * mean.im);
    Ok(MultConv {
        value: mean * mass,
        exact: false,
        terms,
        ci_half_width: 1.96 * mass * (var.max(0.0) / nd).sqrt(),
    })
}

fn conv_terms(rest: &[DiscreteMeasure], eta: f64, x: f64, w: f64, out: &mut ComplexSum) {
    match rest.split_first() {
        None => out.add(unit_phase(eta, x) * w),
        Some((m, tail)) => {
            for (&y, &v) in m.points.iter().zip(&m.weights) {
                conv_terms(tail, eta, x * y, w * v, out);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BourgainRow {
    pub eta: f64,
    /// `|ν̂^{⊗k}(η)| / ν(ℝ)^k` for `k = 1, 2, 3`.
    pub moduli: [f64; 3],
    pub decreasing: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BourgainCheck {
    pub n: usize,
    pub anchor: String,
    pub support: usize,
    /// `(σ, ν×ν{|x−y| ≤ σ})` over the sweep.
    pub pair_mass: Vec<(f64, f64)>,
    pub rows: Vec<BourgainRow>,
    pub fraction: f64,
}

/// Checks that `k ↦ |ν̂^{⊗k}(η)|` decreases for `k = 1, 2, 3` on a log grid of `J_n(ε)`,
/// with `ν` uniform on `{ζ_{1,𝐀}(𝐛) : 𝐛 ∈ ℛ_n}` and `𝐀 = (𝐚, 𝐚)` for the heaviest regular word `𝐚`.
pub fn bourgain_monotonicity(
    mu: &GibbsMeasure,
    n: usize,
    params: &DeviationParams,
    eta_points: usize,
    sigmas: &[f64],
    opts: &MultConvOptions,
) -> Result<BourgainCheck> {
    let set = regular_words(mu, n, params)?;
    let anchor = set
        .words
        .iter()
        .max_by(|a, b| mu.cylinder_measure(a).total_cmp(&mu.cylinder_measure(b)))
        .ok_or_else(|| param("eps", "no regular words at this generation"))?
        .clone();
    let ctx = ZetaContext::new(mu, Block::new(vec![anchor.clone(), anchor.clone()])?, params)?;
    let nu = DiscreteMeasure::uniform(ctx.zeta_row(1, &set.words)?)?;
    let window = FrequencyWindow::new(n, params)?;
    let factors = [nu.clone(), nu.clone(), nu.clone()];
    let rows = window
        .log_grid(eta_points)
        .into_iter()
        .map(|eta| {
            let mut moduli = [0.0; 3];
            for (k, m) in moduli.iter_mut().enumerate() {
                *m = mult_conv_fourier(&factors[..=k], eta, opts)?.value.norm();
            }
            Ok(BourgainRow {
                eta,
                moduli,
                decreasing: moduli[0] > moduli[1] && moduli[1] > moduli[2],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fraction = rows.iter().filter(|r| r.decreasing).count() as f64 / rows.len() as f64;
    Ok(BourgainCheck {
        n,
        anchor: anchor.to_string(),
        support: nu.len(),
        pair_mass: sigmas.iter().map(|&s| (s, nu.close_pair_mass(s))).collect(),
        rows,
        fraction,
    })
}

/// `e^{(2k+1)nλ}e^{ε₀n}`, the frequency scale matched to generation `n`.
pub fn paired_frequency(mu: &GibbsMeasure, n: usize, k: usize, eps0: f64) -> f64 {
    let nf = n as f64;
    ((2 * k + 1) as f64 * nf * mu.lyapunov() + eps0 * nf).exp()
}

/// Largest ratio between `|ξ|` and [`paired_frequency`] accepted by the audit.
pub const PAIRING_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, Serialize)]
pub struct AuditOptions {
    pub eta_points: usize,
    /// Extra log-uniform points between the grid neighbours of each argmax.
    pub refine: usize,
    pub fourier: FourierOptions,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            eta_points: 64,
            refine: 16,
            fourier: FourierOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct RhsTerms {
    /// `C_{ε,n}^{(2k+1)λ}e^{−λ(2k+1)δn} Σ_𝐀 sup_η |Σ_𝐁 e^{2πiη∏ζ}|`, sup over the η grid.
    pub main: f64,
    /// `e^{2k}C_{ε,n}^{k+2}e^{−λn}e^{ε₀n}`.
    pub linearization: f64,
    /// `μ(I ∖ R_n^{k+1}(ε))²`.
    pub block_complement_sq: f64,
    /// `μ(I ∖ R_n(ε))`.
    pub word_complement: f64,
    /// `e^{−ε₂n}`.
    pub integral_removal: f64,
    /// `C_{ε,n}²e^{−δε₀n/2}`.
    pub near_diagonal: f64,
}

impl RhsTerms {
    pub fn values(&self) -> [f64; 6] {
        [
            self.main,
            self.linearization,
            self.block_complement_sq,
            self.word_complement,
            self.integral_removal,
            self.near_diagonal,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().into_iter().collect::<NeumaierSum>().value()
    }

    fn shares(&self) -> RhsTerms {
        let t = self.total();
        let s = |v: f64| if t > 0.0 { v / t } else { 0.0 };
        RhsTerms {
            main: s(self.main),
            linearization: s(self.linearization),
            block_complement_sq: s(self.block_complement_sq),
            word_complement: s(self.word_complement),
            integral_removal: s(self.integral_removal),
            near_diagonal: s(self.near_diagonal),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditParams {
    pub eps: f64,
    pub eps0: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub lambda: f64,
    pub delta: f64,
    pub gibbs_constant: f64,
    pub range: f64,
    pub regular_words: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub xi: f64,
    pub n: usize,
    pub k: usize,
    pub paired_frequency: f64,
    pub lhs: f64,
    pub rhs_terms: RhsTerms,
    pub rhs: f64,
    pub ratio: f64,
    pub shares: RhsTerms,
    pub eta_grid: Vec<f64>,
    pub params: AuditParams,
}

/// `|μ̂(ξ)|²` against each term of its exponential-sum bound at generation `n`.
pub fn decomposition_audit(
    mu: &GibbsMeasure,
    xi: f64,
    n: usize,
    params: &DeviationParams,
    sums: &ExpSumParams,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    let k = sums.k;
    let target = paired_frequency(mu, n, k, params.eps0);
    let q = xi.abs() / target;
    if !(q >= 1.0 / PAIRING_FACTOR && q <= PAIRING_FACTOR) {
        return Err(param(
            "xi",
            format!("|xi| = {xi:e} is not within a factor {PAIRING_FACTOR} of {target:e}"),
        ));
    }
    let blocks = regular_blocks(mu, n, k + 1, params)?;
    let block_complement = blocks.complement.ok_or(Error::Budget {
        what: "audit block complement",
        needed: (blocks.base.len() as f64).powi(k as i32 + 1),
        limit: BLOCK_BUDGET as f64,
    })?;
    let set = &blocks.base;
    let window = FrequencyWindow::new(n, params)?;
    let eta_grid = window.log_grid(opts.eta_points);
    let (nf, lam, delta) = (n as f64, mu.lyapunov(), mu.dimension());
    let c_eps = params.c_eps(n);
    let kf = k as f64;
    let sup_sum = main_sup_sum(mu, set, k, params, &eta_grid, opts.refine)?;
    let terms = RhsTerms {
        main: c_eps.powf((2.0 * kf + 1.0) * lam) * (-lam * (2.0 * kf + 1.0) * delta * nf).exp() * sup_sum,
        linearization: (2.0 * kf).exp() * c_eps.powf(kf + 2.0) * (-lam * nf + params.eps0 * nf).exp(),
        block_complement_sq: block_complement * block_complement,
        word_complement: set.complement.clamp(0.0, 1.0),
        integral_removal: (-sums.eps2 * nf).exp(),
        near_diagonal: c_eps * c_eps * (-0.5 * delta * params.eps0 * nf).exp(),
    };
    let lhs = fourier_at(mu, xi, &opts.fourier)?.value.norm_sqr();
    let rhs = terms.total();
    Ok(AuditReport {
        xi,
        n,
        k,
        paired_frequency: target,
        lhs,
        rhs_terms: terms,
        rhs,
        ratio: lhs / rhs,
        shares: terms.shares(),
        eta_grid,
        params: AuditParams {
            eps: params.eps,
            eps0: params.eps0,
            eps2: sums.eps2,
            eps3: sums.eps3,
            lambda: lam,
            delta,
            gibbs_constant: mu.gibbs_constant(),
            range: range_bound(mu, n, params),
            regular_words: set.len(),
        },
    })
}

/// `Σ_𝐀 sup_η |Σ_𝐁 e^{2πiη∏_j ζ_{j,𝐀}(𝐛_j)}|` with the sup over `grid` refined near each argmax.
fn main_sup_sum(
    mu: &GibbsMeasure,
    set: &RegularWordSet,
    k: usize,
    params: &DeviationParams,
    grid: &[f64],
    refine: usize,
) -> Result<f64> {
    let r = set.words.len();
    if r == 0 {
        return Ok(0.0);
    }
    let a_count = checked_count(r, k + 1, "audit outer blocks")?;
    checked_count(r, k, "audit inner blocks")?;
    let table = ZetaTable::build(mu, set, params)?;
    let sups: Vec<f64> = (0..a_count)
        .into_par_iter()
        .map(|ai| {
            let mut a = vec![0usize; k + 1];
            let mut rem = ai as usize;
            for d in a.iter_mut().rev() {
                *d = rem % r;
                rem /= r;
            }
            let prods = block_products(&table, &a, r);
            let at = |eta: f64| -> f64 {
                let mut s = ComplexSum::new();
                for &p in &prods {
                    s.add(unit_phase(-eta, p));
                }
                s.value().norm()
            };
            let vals: Vec<f64> = grid.iter().map(|&e| at(e)).collect();
            let (best, mut sup) = vals
                .iter()
                .copied()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .expect("grid is nonempty");
            if refine > 0 && grid.len() > 1 {
                let lo = grid[best.saturating_sub(1)];
                let hi = grid[(best + 1).min(grid.len() - 1)];
                for e in log_grid(lo, hi, refine + 2) {
                    sup = sup.max(at(e));
                }
            }
            sup
        })
        .collect();
    Ok(sups.into_iter().collect::<NeumaierSum>().value())
}

/// `∏_j ζ_{j,𝐀}(𝐛_j)` for every `𝐁 ∈ ℛ_n^k`.
fn block_products(table: &ZetaTable, a: &[usize], r: usize) -> Vec<f64> {
    let k = a.len() - 1;
    let mut out = vec![1.0];
    for j in 1..=k {
        let row = table.row(a[j - 1], a[j]);
        out = out.iter().flat_map(|&p| row.iter().map(move |&z| p * z)).collect();
    }
    debug_assert_eq!(out.len(), r.pow(k as u32));
    out
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EtaPair {
    pub eta: f64,
    /// `|x − y| ≥ C_{ε,n}e^{−ε₀n/2}`.
    pub separated: bool,
    /// For separated pairs, whether `|η|` lies in `J_n(ε)` widened by [`PAIRING_FACTOR`].
    pub in_window: Option<bool>,
}

/// `η(x,y) = ξe^{−2kλn}(f_{𝐚_k}x − f_{𝐚_k}y)`.
#[allow(clippy::too_many_arguments)]
pub fn eta_of_pair(
    mu: &GibbsMeasure,
    x: f64,
    y: f64,
    xi: f64,
    n: usize,
    k: usize,
    a_k: &Word,
    params: &DeviationParams,
) -> Result<EtaPair> {
    let sys = mu.system();
    let hull = sys.hull();
    for p in [x, y] {
        if !hull.contains_tol(p, 1e-12) {
            return Err(Error::OutOfDomain {
                x: p,
                lo: hull.lo,
                hi: hull.hi,
                what: "hull",
            });
        }
    }
    a_k.check(sys.n_symbols())?;
    let map = sys.word_map(a_k.symbols());
    let diff = map.eval(sys, x) - map.eval(sys, y);
    let eta = xi * (-2.0 * k as f64 * mu.lyapunov() * n as f64).exp() * diff;
    let nf = n as f64;
    let separated = (x - y).abs() >= params.c_eps(n) * (-0.5 * params.eps0 * nf).exp();
    let in_window = if separated {
        let w = FrequencyWindow::new(n, params)?;
        Some((w.lo / PAIRING_FACTOR..=w.hi * PAIRING_FACTOR).contains(&eta.abs()))
    } else {
        None
    };
    Ok(EtaPair {
        eta,
        separated,
        in_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::CantorSystem;
    use crate::symbolic::enumerate_words;
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

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    fn decades() -> Vec<f64> {
        vec![1e-4, 1e-3, 1e-2, 1e-1]
    }

    #[test]
    fn cantor_zeta_is_one() {
        let mu = cantor();
        let p = DeviationParams::new(0.2, 0.25).unwrap();
        let block = Block::new(vec![w("1.2.2"), w("2.1.1"), w("1.1.1")]).unwrap();
        let ctx = ZetaContext::new(mu, block, &p).unwrap();
        for j in 1..=2 {
            for b in enumerate_words(2, 3) {
                assert!((ctx.zeta(j, &b).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeta_matches_composed_derivative() {
        let mu = gauss();
        let sys = mu.system();
        let p = DeviationParams::new(0.8, 0.25).unwrap();
        let (a0, a1) = (w("1.2.1.1"), w("2.2.1.2"));
        let ctx = ZetaContext::new(mu, Block::new(vec![a0.clone(), a1.clone()]).unwrap(), &p).unwrap();
        let x = sys.cylinder_interval(&a1).unwrap().mid();
        let scale = (8.0 * mu.lyapunov()).exp();
        for b in enumerate_words(2, 4) {
            let fb = sys.f_word(&b, x).unwrap();
            let split = scale * (sys.f_word_deriv(&a0, fb).unwrap() * sys.f_word_deriv(&b, x).unwrap()).abs();
            let whole = scale * sys.f_word_deriv(&a0.concat(&b), x).unwrap().abs();
            let z = ctx.zeta(1, &b).unwrap();
            assert!((z / split - 1.0).abs() < 1e-12);
            assert!((z / whole - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gauss_zeta_spreads_inside_range() {
        let mu = gauss();
        let p = DeviationParams::new(0.8, 0.25).unwrap();
        let a = w("1.2.1.2");
        let ctx = ZetaContext::new(mu, Block::new(vec![a.clone(), a]).unwrap(), &p).unwrap();
        let vals = ctx.zeta_row(1, &enumerate_words(2, 4).collect::<Vec<_>>()).unwrap();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(0.0, f64::max);
        assert!(hi / lo > 2.0);
        assert!(lo >= 1.0 / ctx.range() && hi <= ctx.range());
    }

    #[test]
    fn zeta_rejects_bad_index_and_length() {
        let mu = gauss();
        let p = DeviationParams::new(0.8, 0.25).unwrap();
        let ctx = ZetaContext::new(mu, Block::new(vec![w("1.2"), w("2.1")]).unwrap(), &p).unwrap();
        assert!(matches!(ctx.zeta(0, &w("1.1")), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(ctx.zeta(2, &w("1.1")), Err(Error::IndexOutOfRange { .. })));
        assert!(ctx.zeta(1, &w("1.1.1")).is_err());
    }

    #[test]
    fn window_endpoints_and_grid() {
        let p = DeviationParams::new(0.2, 0.25).unwrap();
        let win = FrequencyWindow::new(8, &p).unwrap();
        assert_eq!(win.lo, 1f64.exp());
        assert!((win.hi - 3.6f64.exp()).abs() < 1e-12);
        let g = win.log_grid(64);
        assert_eq!(g.len(), 64);
        assert_eq!((g[0], g[63]), (win.lo, win.hi));
        assert!(g.iter().all(|&e| win.contains(e) && win.contains(-e)));
    }

    #[test]
    fn close_pairs_matches_brute_force() {
        let v = sorted(vec![0.1, 0.15, 0.3, 0.31, 0.33, 0.9, 0.9]);
        for s in [0.0, 0.01, 0.02, 0.05, 0.2, 1.0] {
            let brute = v.iter().flat_map(|a| v.iter().map(move |b| (a - b).abs() <= s)).filter(|&t| t).count();
            assert_eq!(close_pairs(&v, s), brute as u64);
        }
    }

    #[test]
    fn cantor_triples_are_totally_concentrated() {
        let mu = cantor();
        let p = DeviationParams::new(0.2, 0.25).unwrap();
        let set = regular_words(mu, 6, &p).unwrap();
        assert_eq!(set.len(), 64);
        let rep = nonconc_sweep(mu, &set, 0.5, &decades(), &NonConcOptions::default()).unwrap();
        for r in &rep.rows {
            assert_eq!(r.count, 64f64.powi(3));
            assert_eq!(r.normalized, 1.0);
        }
    }

    #[test]
    fn gauss_triples_match_direct_enumeration() {
        let mu = gauss();
        let sys = mu.system();
        let p = DeviationParams::new(0.8, 0.25).unwrap();
        let set = regular_words(mu, 3, &p).unwrap();
        let x = sys.hull().mid();
        let scale = (6.0 * mu.lyapunov()).exp();
        let z = |a: &Word, b: &Word| scale * sys.f_word_deriv(&a.concat(b), x).unwrap().abs();
        let sig = [0.0, 1e-2, 1e-1, 1.0];
        let rep = nonconc_sweep(mu, &set, x, &sig, &NonConcOptions::default()).unwrap();
        for (row, &s) in rep.rows.iter().zip(&sig) {
            let mut count = 0;
            for a in &set.words {
                for b in &set.words {
                    for c in &set.words {
                        if (z(a, b) - z(a, c)).abs() <= s {
                            count += 1;
                        }
                    }
                }
            }
            assert_eq!(row.count, count as f64, "sigma {s}");
        }
        let r = set.len() as f64;
        assert!(rep.rows[0].count >= r * r);
    }

    #[test]
    fn sampled_triples_bracket_exact() {
        let mu = gauss();
        let p = DeviationParams::new(0.5, 0.25).unwrap();
        let set = regular_words(mu, 8, &p).unwrap();
        let x = mu.system().hull().mid();
        let exact = nonconc_sweep(mu, &set, x, &[1e-2], &NonConcOptions::default()).unwrap();
        let opts = NonConcOptions { max_outer: 64, seed: 7 };
        let est = nonconc_sweep(mu, &set, x, &[1e-2], &opts).unwrap();
        assert_eq!(est.sampled, Some(64));
        let (e, s) = (exact.rows[0].count, est.rows[0]);
        assert!((s.count - e).abs() <= 2.0 * s.ci, "{} vs {e} ± {}", s.count, s.ci);
    }

    #[test]
    fn gauss_nonconc_exponent_positive() {
        let mu = gauss();
        let p = DeviationParams::new(0.5, 0.25).unwrap();
        let set = regular_words(mu, 8, &p).unwrap();
        let rep = nonconc_sweep(mu, &set, mu.system().hull().mid(), &decades(), &NonConcOptions::default()).unwrap();
        let fit = fit_nonconc(&rep, &p).unwrap();
        assert!(fit.c0 >= 0.1, "{fit:?}");
        for r in &rep.rows {
            assert!(r.normalized <= p.c_eps(8).powf(fit.kappa0) * r.sigma.powf(fit.c0) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cantor_fit_is_flat() {
        let mu = cantor();
        let p = DeviationParams::new(0.2, 0.25).unwrap();
        let set = regular_words(mu, 5, &p).unwrap();
        let rep = nonconc_sweep(mu, &set, 0.5, &decades(), &NonConcOptions::default()).unwrap();
        assert!(fit_nonconc(&rep, &p).unwrap().c0.abs() < 1e-12);
    }

    #[test]
    fn zero_block_length_is_vacuous() {
        let mu = gauss();
        let p = DeviationParams::new(0.8, 0.25).unwrap();
        let wd = well_distributed_blocks(mu, 4, 0, &p, &decades(), 0.5, 0.0).unwrap();
        assert_eq!(wd.blocks, 16);
        assert_eq!(wd.well.len(), 16);
        assert!(wd.rows.iter().all(|r| r.complement == 0));
    }

    #[test]
    fn cantor_has_no_well_distributed_blocks() {
        let mu = cantor();
        let p = DeviationParams::new(0.2, 0.25).unwrap();
        let wd = well_distributed_blocks(mu, 4, 1, &p, &[1e-3, 0.5, 0.99], 0.5, 0.0).unwrap();
        assert!(wd.well.is_empty());
        assert!(wd.rows.iter().all(|r| r.complement == wd.blocks));
    }

    #[test]
    fn gauss_well_distributed_complement_within_bound() {
        let mu = gauss();
        let p = DeviationParams::new(0.65, 0.25).unwrap();
        let set = regular_words(mu, 6, &p).unwrap();
        let rep = nonconc_sweep(mu, &set, mu.system().hull().mid(), &decades(), &NonConcOptions::default()).unwrap();
        let fit = fit_nonconc(&rep, &p).unwrap();
        let wd = well_distributed_blocks(mu, 6, 1, &p, &decades(), fit.c0, fit.kappa0).unwrap();
        assert_eq!(wd.blocks, (set.len() as u64).pow(2));
        for r in &wd.rows {
            assert!(r.within, "{r:?}");
        }
        assert!(wd.well_blocks().all(|b| b.count() == 2));
    }

    fn ctx_and_blocks(mu: &GibbsMeasure, eps: f64, n: usize) -> (ZetaContext<'_>, Vec<Block>) {
        let p = DeviationParams::new(eps, 0.25).unwrap();
        let set = regular_words(mu, n, &p).unwrap();
        let a = set.words[0].clone();
        let ctx = ZetaContext::new(mu, Block::new(vec![a.clone(), a.clone(), a]).unwrap(), &p).unwrap();
        let blocks = regular_blocks(mu, n, 2, &p).unwrap().iter().collect();
        (ctx, blocks)
    }

    #[test]
    fn exp_sum_at_zero_frequency_counts_blocks() {
        let (ctx, blocks) = ctx_and_blocks(gauss(), 0.8, 3);
        let s = exp_sum(&ctx, 0.0, blocks.clone()).unwrap();
        assert_eq!(s.value, Complex64::new(blocks.len() as f64, 0.0));
        assert_eq!(s.normalized, 1.0);
        for eta in [3.0, 17.5, -40.0] {
            assert!(exp_sum(&ctx, eta, blocks.clone()).unwrap().normalized <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn cantor_exp_sum_has_no_cancellation() {
        let (ctx, blocks) = ctx_and_blocks(cantor(), 0.2, 3);
        for eta in [2.3, 11.0, 97.1] {
            assert!((exp_sum(&ctx, eta, blocks.clone()).unwrap().normalized - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_sum_rejects_wrong_arity_and_empty() {
        let (ctx, _) = ctx_and_blocks(gauss(), 0.8, 3);
        assert!(exp_sum(&ctx, 1.0, vec![Block::new(vec![w("1.1.1")]).unwrap()]).is_err());
        assert!(exp_sum(&ctx, 1.0, Vec::new()).is_err());
    }

    #[test]
    fn point_mass_at_one() {
        let m = [DiscreteMeasure::point_mass(1.0).unwrap()];
        for eta in [0.3, 2.0, 7.25] {
            let v = mult_conv_fourier(&m, eta, &MultConvOptions::default()).unwrap().value;
            let expect = Complex64::from_polar(1.0, -std::f64::consts::TAU * eta);
            assert!((v - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_frequency_gives_product_of_masses() {
        let a = DiscreteMeasure::new(vec![0.5, 0.7], vec![0.2, 0.3]).unwrap();
        let b = DiscreteMeasure::new(vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 2.0]).unwrap();
        let v = mult_conv_fourier(&[a, b], 0.0, &MultConvOptions::default()).unwrap();
        assert!((v.value - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(v.exact);
    }

    #[test]
    fn two_factor_half_one_matches_four_terms() {
        let u = DiscreteMeasure::uniform(vec![0.5, 1.0]).unwrap();
        let v = mult_conv_fourier(&[u.clone(), u], 1.0, &MultConvOptions::default()).unwrap().value;
        let mut brute = Complex64::new(0.0, 0.0);
        for x in [0.5, 1.0] {
            for y in [0.5, 1.0] {
                brute += 0.25 * Complex64::from_polar(1.0, -std::f64::consts::TAU * x * y);
            }
        }
        assert!((v - brute).norm() < 1e-12);
        assert!((v - Complex64::new(-0.25, -0.25)).norm() < 1e-12);
        assert!((v.norm() - 2f64.sqrt() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let m = DiscreteMeasure::uniform((0..40).map(|i| 0.5 + i as f64 / 80.0).collect()).unwrap();
        let ms = [m.clone(), m.clone(), m];
        let exact = mult_conv_fourier(&ms, 3.7, &MultConvOptions::default()).unwrap();
        let opts = MultConvOptions {
            budget: 1e3,
            draws: 200_000,
            seed: 11,
        };
        let mc = mult_conv_fourier(&ms, 3.7, &opts).unwrap();
        assert!(exact.exact && !mc.exact);
        assert!((mc.value - exact.value).norm() <= 2.0 * mc.ci_half_width + 1e-12);
        let again = mult_conv_fourier(&ms, 3.7, &opts).unwrap();
        assert_eq!(mc.value, again.value);
    }

    #[test]
    fn bourgain_regime_on_gauss() {
        let mu = gauss();
        let p = DeviationParams::new(0.3, 0.25).unwrap();
        let check = bourgain_monotonicity(mu, 8, &p, 32, &decades(), &MultConvOptions::default()).unwrap();
        assert_eq!(check.support, 102);
        assert!(check.fraction >= 0.8, "{}", check.fraction);
    }

    fn audit(mu: &GibbsMeasure, n: usize, eps: f64) -> AuditReport {
        let p = DeviationParams::new(eps, 0.25).unwrap();
        let xi = paired_frequency(mu, n, 1, p.eps0);
        decomposition_audit(mu, xi, n, &p, &ExpSumParams::desk(mu, 1).unwrap(), &AuditOptions::default()).unwrap()
    }

    #[test]
    fn audit_terms_are_nonnegative() {
        let rep = audit(gauss(), 3, 0.65);
        assert!(rep.rhs_terms.values().iter().all(|&t| t >= 0.0));
        let mut no_main = rep.rhs_terms;
        no_main.main = 0.0;
        assert!(no_main.total() <= rep.rhs);
        assert!(rep.ratio.is_finite() && rep.ratio > 0.0);
        assert!((rep.shares.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(rep.eta_grid.len(), 64);
    }

    #[test]
    fn audit_rejects_unpaired_frequency() {
        let mu = gauss();
        let p = DeviationParams::new(0.65, 0.25).unwrap();
        let xi = 20.0 * paired_frequency(mu, 3, 1, p.eps0);
        let r = decomposition_audit(mu, xi, 3, &p, &ExpSumParams::desk(mu, 1).unwrap(), &AuditOptions::default());
        assert!(matches!(r, Err(Error::InvalidParameter { name: "xi", .. })));
    }

    #[test]
    fn cantor_main_term_does_not_decay() {
        let mains: Vec<f64> = (2..=4).map(|n| audit(cantor(), n, 0.2).rhs_terms.main).collect();
        for m in &mains {
            assert!(*m >= 1.0, "{mains:?}");
        }
    }

    #[test]
    fn eta_pair_identities() {
        let mu = gauss();
        let p = DeviationParams::new(0.2, 0.25).unwrap();
        let a = w("1.2.1");
        let hull = mu.system().hull();
        let (x, y) = (hull.lo + 0.1 * hull.len(), hull.hi - 0.2 * hull.len());
        let e = eta_of_pair(mu, x, x, 1e6, 3, 1, &a, &p).unwrap();
        assert_eq!(e.eta, 0.0);
        assert_eq!(e.in_window, None);
        let f = eta_of_pair(mu, x, y, 1e6, 3, 1, &a, &p).unwrap().eta;
        let g = eta_of_pair(mu, y, x, 1e6, 3, 1, &a, &p).unwrap().eta;
        assert_eq!(f, -g);
        assert!(eta_of_pair(mu, hull.hi + 0.1, x, 1e6, 3, 1, &a, &p).is_err());
    }

    #[test]
    fn cantor_eta_is_affine() {
        let mu = cantor();
        let p = DeviationParams::new(0.2, 0.25).unwrap();
        let (x, y, xi) = (0.1, 0.8, 3f64.powi(9));
        let e = eta_of_pair(mu, x, y, xi, 2, 1, &w("2.1"), &p).unwrap().eta;
        // f_{21}(t) = 2/3 + t/9
        let expect = xi * 3f64.powi(-4) * ((x - y) / 9.0);
        assert!((e / expect - 1.0).abs() < 1e-12);
    }
}

//! Large-deviation sets, regular words and regular blocks.

use crate::error::{param, Error, Result};
use crate::fourier::least_squares;
use crate::ifs::WordMap;
use crate::sum::NeumaierSum;
use crate::symbolic::{enumerate_words, Block, Word};
use crate::thermo::GibbsMeasure;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeviationParams {
    pub eps: f64,
    pub eps0: f64,
}

impl DeviationParams {
    pub fn new(eps: f64, eps0: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(param("eps", "must be positive"));
        }
        if !(eps0 > 0.0 && eps0 < 1.0) {
            return Err(param("eps0", "must lie in (0, 1)"));
        }
        Ok(DeviationParams { eps, eps0 })
    }

    /// `C_{ε,j} = e^{εj}`.
    pub fn c_eps(&self, j: usize) -> f64 {
        (self.eps * j as f64).exp()
    }

    /// First checked prefix length `max(1, ⌊ε₀n⌋)`.
    pub fn first_level(&self, n: usize) -> usize {
        ((self.eps0 * n as f64).floor() as usize).max(1)
    }
}

/// `ε₀ = min(δ₁/2, λ/4)`.
pub fn default_eps0(delta1: f64, lambda: f64) -> f64 {
    (0.5 * delta1).min(0.25 * lambda)
}

/// `(S_kψ, S_kφ̄)` at `f_w(y)`, with `ψ = −τ`.
fn birkhoff_pair(mu: &GibbsMeasure, word: &[u8], map: &WordMap, y: f64) -> (f64, f64) {
    let d = map.eval_d(mu.system(), y).1;
    (d.abs().ln(), mu.weight_of(word, y).ln())
}

fn passes(mu: &GibbsMeasure, word: &[u8], map: &WordMap, y: f64, eps: f64) -> bool {
    let k = word.len() as f64;
    let (s_psi, s_phi) = birkhoff_pair(mu, word, map, y);
    (s_psi / k + mu.lyapunov()).abs() < eps && (s_phi / s_psi - mu.dimension()).abs() < eps
}

/// Both Birkhoff-ratio tests at the centre representative `f_w(mid hull)`.
pub fn deviation_membership(mu: &GibbsMeasure, w: &Word, eps: f64) -> Result<bool> {
    w.check(mu.system().n_symbols())?;
    if w.is_empty() {
        return Err(Error::InvalidWord("membership needs a nonempty word".into()));
    }
    if !(eps > 0.0) {
        return Ok(false);
    }
    let map = mu.system().word_map(w.symbols());
    Ok(passes(mu, w.symbols(), &map, mu.system().hull().mid(), eps))
}

/// Cylinder test at both endpoints and the centre representative.
fn cylinder_in_a(mu: &GibbsMeasure, word: &[u8], map: &WordMap, eps: f64) -> bool {
    let h = mu.system().hull();
    [h.lo, h.mid(), h.hi]
        .iter()
        .all(|&y| passes(mu, word, map, y, eps))
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularWordSet {
    pub n: usize,
    pub params: DeviationParams,
    pub words: Vec<Word>,
    /// `μ(I ∖ R_n(ε))`.
    pub complement: f64,
}

impl RegularWordSet {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// A set with prescribed members, e.g. to audit arbitrary words.
    pub fn forced(mu: &GibbsMeasure, n: usize, params: DeviationParams, words: Vec<Word>) -> Result<Self> {
        let mut mass = NeumaierSum::new();
        for w in &words {
            w.check(mu.system().n_symbols())?;
            if w.len() != n {
                return Err(Error::InvalidWord(format!("{w} does not have length {n}")));
            }
            mass.add(mu.cylinder_measure_uncached(w.symbols(), 0));
        }
        Ok(RegularWordSet {
            n,
            params,
            words,
            complement: (1.0 - mass.value()).max(0.0),
        })
    }
}

struct RegularWalk<'a> {
    mu: &'a GibbsMeasure,
    n: usize,
    first: usize,
    eps: f64,
}

impl RegularWalk<'_> {
    fn visit(&self, word: &mut Vec<u8>, map: &WordMap, out: &mut Vec<Word>, pruned: &mut NeumaierSum) {
        let len = word.len();
        if len >= self.first && !cylinder_in_a(self.mu, word, map, self.eps) {
            pruned.add(self.mu.cylinder_measure_uncached(word, 0));
            return;
        }
        if len == self.n {
            out.push(Word::from_symbols(word.clone()));
            return;
        }
        let sys = self.mu.system();
        for a in 0..sys.n_symbols() {
            word.push(a as u8 + 1);
            self.visit(word, &map.then(sys, a), out, pruned);
            word.pop();
        }
    }
}

/// `ℛ_n(ε)`: words whose prefixes of length `⌊ε₀n⌋..=n` all pass the cylinder test.
pub fn regular_words(mu: &GibbsMeasure, n: usize, params: &DeviationParams) -> Result<RegularWordSet> {
    if n == 0 {
        return Err(param("n", "must be at least 1"));
    }
    let sys = mu.system();
    let walk = RegularWalk {
        mu,
        n,
        first: params.first_level(n),
        eps: params.eps,
    };
    let parts: Vec<(Vec<Word>, NeumaierSum)> = (0..sys.n_symbols())
        .into_par_iter()
        .map(|a| {
            let mut out = Vec::new();
            let mut pruned = NeumaierSum::new();
            let mut word = vec![a as u8 + 1];
            let map = sys.word_map(&word);
            walk.visit(&mut word, &map, &mut out, &mut pruned);
            (out, pruned)
        })
        .collect();
    let mut words = Vec::new();
    let mut complement = NeumaierSum::new();
    for (w, p) in parts {
        words.extend(w);
        complement.merge(&p);
    }
    Ok(RegularWordSet {
        n,
        params: *params,
        words,
        complement: complement.value(),
    })
}

/// `ℛ_n^k(ε)` as `k`-tuples of regular words, enumerated lazily.
#[derive(Clone, Debug, Serialize)]
pub struct BlockSet {
    pub n: usize,
    pub k: usize,
    pub base: RegularWordSet,
    /// `|ℛ_n|^k`, if representable.
    pub count: Option<u64>,
    /// `μ(I ∖ R_n^k(ε))` when the block count is within the enumeration budget.
    pub complement: Option<f64>,
    /// Blocks whose tail-point recheck failed, with the first witness.
    pub recheck_failures: u64,
    pub recheck_witness: Option<String>,
}

impl BlockSet {
    pub fn iter(&self) -> BlockIter<'_> {
        BlockIter {
            words: &self.base.words,
            idx: vec![0; self.k],
            done: self.base.words.is_empty() || self.k == 0,
        }
    }
}

pub struct BlockIter<'a> {
    words: &'a [Word],
    idx: Vec<usize>,
    done: bool,
}

impl Iterator for BlockIter<'_> {
    type Item = Block;

    fn next(&mut self) -> Option<Block> {
        if self.done {
            return None;
        }
        let block = Block::new(self.idx.iter().map(|&i| self.words[i].clone()).collect())
            .expect("regular words share one length");
        let mut p = self.idx.len();
        loop {
            if p == 0 {
                self.done = true;
                break;
            }
            p -= 1;
            self.idx[p] += 1;
            if self.idx[p] < self.words.len() {
                break;
            }
            self.idx[p] = 0;
        }
        Some(block)
    }
}

/// Largest block count whose cylinder masses and rechecks are evaluated.
pub const BLOCK_BUDGET: u64 = 1 << 20;

/// Regular blocks of `k` regular words; each block is rechecked at the points of its tail cylinders.
pub fn regular_blocks(mu: &GibbsMeasure, n: usize, k: usize, params: &DeviationParams) -> Result<BlockSet> {
    if k == 0 {
        return Err(param("k", "must be at least 1"));
    }
    let base = regular_words(mu, n, params)?;
    let count = (base.len() as u64).checked_pow(k as u32);
    let mut set = BlockSet {
        n,
        k,
        base,
        count,
        complement: None,
        recheck_failures: 0,
        recheck_witness: None,
    };
    if count.is_some_and(|c| c <= BLOCK_BUDGET) {
        let y = mu.system().hull().mid();
        let mut mass = NeumaierSum::new();
        let mut failures = 0;
        let mut witness = None;
        for b in set.iter() {
            let flat = b.flatten();
            mass.add(mu.cylinder_measure_uncached(flat.symbols(), 0));
            if let Some(i) = tail_recheck(mu, &b, y, params.eps) {
                failures += 1;
                witness.get_or_insert_with(|| format!("{b} at shift {i}"));
            }
        }
        set.complement = Some((1.0 - mass.value()).max(0.0));
        set.recheck_failures = failures;
        set.recheck_witness = witness;
    }
    Ok(set)
}

/// First shift `i` at which word `i+1` fails membership at the point `f_{σ^{n(i+1)}A}(y)`.
fn tail_recheck(mu: &GibbsMeasure, block: &Block, y: f64, eps: f64) -> Option<usize> {
    let sys = mu.system();
    let words = block.words();
    let mut tail_point = y;
    for i in (0..words.len()).rev() {
        let w = words[i].symbols();
        let map = sys.word_map(w);
        if !passes(mu, w, &map, tail_point, eps) {
            return Some(i);
        }
        tail_point = map.eval(sys, tail_point);
    }
    None
}

#[derive(Clone, Debug, Serialize)]
pub struct RateFit {
    pub eps: f64,
    /// `+∞` when every complement mass vanishes.
    pub delta0: f64,
    pub points: Vec<(usize, f64)>,
    pub residual: f64,
}

/// `μ(I ∖ A_n(ε))` from generation-`n` cylinders tested at their centre representative.
pub fn deviation_complement(mu: &GibbsMeasure, n: usize, eps: f64) -> f64 {
    let sys = mu.system();
    let y = sys.hull().mid();
    let parts: Vec<NeumaierSum> = enumerate_words(sys.n_symbols(), n)
        .collect::<Vec<_>>()
        .par_chunks(4096)
        .map(|chunk| {
            let mut s = NeumaierSum::new();
            for w in chunk {
                let map = sys.word_map(w.symbols());
                if !passes(mu, w.symbols(), &map, y, eps) {
                    s.add(mu.cylinder_measure_uncached(w.symbols(), 0));
                }
            }
            s
        })
        .collect();
    let mut total = NeumaierSum::new();
    for p in &parts {
        total.merge(p);
    }
    total.value()
}

/// `δ₀(ε)` as minus the slope of `log μ(I ∖ A_n(ε))` against `n`.
pub fn large_deviation_rate(mu: &GibbsMeasure, eps: f64, n_range: (usize, usize)) -> Result<RateFit> {
    let (lo, hi) = n_range;
    if !(eps > 0.0) || lo == 0 || hi < lo {
        return Err(param("n_range", "need eps > 0 and 1 ≤ n_lo ≤ n_hi"));
    }
    let points: Vec<(usize, f64)> = (lo..=hi).map(|n| (n, deviation_complement(mu, n, eps))).collect();
    let nonzero: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(n, m)| (n as f64, m.ln()))
        .collect();
    if nonzero.is_empty() {
        return Ok(RateFit {
            eps,
            delta0: f64::INFINITY,
            points,
            residual: 0.0,
        });
    }
    let xs: Vec<f64> = nonzero.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = nonzero.iter().map(|p| p.1).collect();
    let (slope, icpt) = least_squares(&xs, &ys)?;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - icpt).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(RateFit {
        eps,
        delta0: -slope,
        points,
        residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularRow {
    pub n: usize,
    pub count: usize,
    pub complement: f64,
}

pub fn regular_profile(mu: &GibbsMeasure, ns: impl IntoIterator<Item = usize>, params: &DeviationParams) -> Result<Vec<RegularRow>> {
    ns.into_iter()
        .map(|n| {
            let s = regular_words(mu, n, params)?;
            Ok(RegularRow {
                n,
                count: s.len(),
                complement: s.complement,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub item: &'static str,
    pub word: String,
    pub j: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LargeNConditions {
    pub log4_over_eps0_n: bool,
    pub distortion_over_expansion: bool,
    pub geometric_tail: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularStatsReport {
    pub n: usize,
    pub params: DeviationParams,
    pub words: usize,
    pub checks: u64,
    pub violation_count: u64,
    /// At most [`MAX_WITNESSES`] entries.
    pub violations: Vec<Violation>,
    pub large_n: LargeNConditions,
    pub n_large_enough: bool,
}

pub const MAX_WITNESSES: usize = 64;

/// Checks the derivative, measure, weight and cardinality bounds over `ℛ_n(ε)`.
pub fn regular_stats_check(mu: &GibbsMeasure, set: &RegularWordSet) -> RegularStatsReport {
    let n = set.n;
    let p = set.params;
    let lam = mu.lyapunov();
    let delta = mu.dimension();
    let c = mu.gibbs_constant();
    let gamma = mu.expansion().gamma;
    let sys = mu.system();
    let h = sys.hull();
    let reps = [h.lo, h.mid(), h.hi];

    let mut checks = 0u64;
    let mut count = 0u64;
    let mut violations = Vec::new();
    let mut report = |item: &'static str, word: &[u8], j: usize, value: f64, lo: f64, hi: f64| {
        checks += 1;
        if !(value >= lo && value <= hi) {
            count += 1;
            if violations.len() < MAX_WITNESSES {
                violations.push(Violation {
                    item,
                    word: Word::from_symbols(word.to_vec()).to_string(),
                    j,
                    value,
                    lo,
                    hi,
                });
            }
        }
    };

    for w in &set.words {
        for j in p.first_level(n)..=n {
            let pre = &w.symbols()[..j];
            let map = sys.word_map(pre);
            let ce = p.c_eps(j);
            let decay = (-lam * j as f64).exp();
            let target = (-delta * lam * j as f64).exp();
            let ce3 = ce.powf(3.0 * lam);
            for &y in &reps {
                let d = map.eval_d(sys, y).1.abs();
                report("i", pre, j, d, decay / (16.0 * ce), ce * decay);
                report("iii", pre, j, mu.weight_of(pre, y), target / ce3, target * ce3);
            }
            let m = mu.cylinder_measure_uncached(pre, 0);
            report("ii", pre, j, m, target / (c * ce3), c * ce3 * target);
        }
    }
    let ce3n = p.c_eps(n).powf(3.0 * lam);
    let growth = (lam * delta * n as f64).exp();
    report(
        "iv",
        &[],
        n,
        set.len() as f64,
        0.5 * growth / (c * ce3n),
        c * ce3n * growth,
    );

    let nf = n as f64;
    let e0 = p.eps0;
    let large_n = LargeNConditions {
        log4_over_eps0_n: 4f64.ln() / (e0 * nf) < p.eps / 2.0,
        distortion_over_expansion: (4.0 * c * c).ln() / (2.0 * e0 * nf * gamma.ln()) < p.eps / 2.0,
        geometric_tail: (-e0 * e0 * nf).exp() / (1.0 - (-e0).exp()) < (-e0 * e0 * nf / 2.0).exp(),
    };
    let ok = large_n.log4_over_eps0_n && large_n.distortion_over_expansion && large_n.geometric_tail;
    RegularStatsReport {
        n,
        params: p,
        words: set.len(),
        checks,
        violation_count: count,
        violations,
        large_n,
        n_large_enough: ok,
    }
}

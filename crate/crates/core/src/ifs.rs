//! Expanding Cantor maps given by analytic inverse branches.

use crate::error::{param, Error, Result};
use crate::symbolic::{enumerate_words, word_count, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidSystem(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    /// Interval spanned by two points in either order.
    pub fn spanning(a: f64, b: f64) -> Self {
        Interval {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Containment with a relative slack of `rel` times the length.
    pub fn contains_tol(&self, x: f64, rel: f64) -> bool {
        let s = rel * self.len().max(f64::MIN_POSITIVE);
        self.lo - s <= x && x <= self.hi + s
    }

    pub fn contains_interval(&self, other: &Interval, rel: f64) -> bool {
        self.contains_tol(other.lo, rel) && self.contains_tol(other.hi, rel)
    }

    /// `n` equally spaced points including both endpoints (`n ≥ 2`), or the midpoint.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![self.mid()];
        }
        (0..n)
            .map(|i| self.lo + self.len() * i as f64 / (n - 1) as f64)
            .collect()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// `x ↦ (ax+b)/(cx+d)` normalized to `|ad−bc| = 1`; `sign` is the determinant's sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mobius {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub sign: f64,
}

impl Mobius {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let det = a * d - b * c;
        if !det.is_finite() || det == 0.0 {
            return Err(Error::InvalidSystem(format!(
                "degenerate Möbius matrix ({a}, {b}, {c}, {d})"
            )));
        }
        let s = det.abs().sqrt();
        Ok(Mobius {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
            sign: det.signum(),
        })
    }

    pub fn from_affine(r: f64, t: f64) -> Self {
        let s = r.abs().sqrt();
        Mobius {
            a: r / s,
            b: t / s,
            c: 0.0,
            d: 1.0 / s,
            sign: r.signum(),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, o: &Mobius) -> Mobius {
        Mobius {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
            sign: self.sign * o.sign,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) / (self.c * x + self.d)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        let den = self.c * x + self.d;
        self.sign / (den * den)
    }

    #[inline]
    pub fn deriv2(&self, x: f64) -> f64 {
        let den = self.c * x + self.d;
        -2.0 * self.sign * self.c / (den * den * den)
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        (self.d * y - self.b) / (self.a - self.c * y)
    }
}

/// User-supplied analytic branch: value, first and second derivative.
pub trait BranchEval: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    fn deriv2(&self, x: f64) -> f64;
    /// Stable description used for cache keys.
    fn describe(&self) -> String;
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A custom branch assembled from three closures.
#[derive(Clone)]
pub struct FnBranch {
    pub label: String,
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub d2f: ScalarFn,
}

impl BranchEval for FnBranch {
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        (self.df)(x)
    }
    fn deriv2(&self, x: f64) -> f64 {
        (self.d2f)(x)
    }
    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[derive(Clone)]
pub enum BranchMap {
    Affine { r: f64, t: f64 },
    Mobius(Mobius),
    Custom(Arc<dyn BranchEval>),
}

impl fmt::Debug for BranchMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchMap::Affine { r, t } => write!(f, "affine({r}, {t})"),
            BranchMap::Mobius(m) => write!(f, "moebius({}, {}, {}, {})", m.a, m.b, m.c, m.d),
            BranchMap::Custom(c) => write!(f, "custom({})", c.describe()),
        }
    }
}

impl BranchMap {
    pub fn affine(r: f64, t: f64) -> Result<Self> {
        if !(r.is_finite() && t.is_finite()) || r == 0.0 {
            return Err(Error::InvalidSystem(format!("bad affine branch ({r}, {t})")));
        }
        Ok(BranchMap::Affine { r, t })
    }

    pub fn moebius(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        Mobius::new(a, b, c, d).map(BranchMap::Mobius)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BranchMap::Affine { .. } => "affine",
            BranchMap::Mobius(_) => "moebius",
            BranchMap::Custom(_) => "custom",
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            BranchMap::Affine { r, t } => r * x + t,
            BranchMap::Mobius(m) => m.eval(x),
            BranchMap::Custom(c) => c.value(x),
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            BranchMap::Affine { r, .. } => *r,
            BranchMap::Mobius(m) => m.deriv(x),
            BranchMap::Custom(c) => c.deriv(x),
        }
    }

    #[inline]
    pub fn deriv2(&self, x: f64) -> f64 {
        match self {
            BranchMap::Affine { .. } => 0.0,
            BranchMap::Mobius(m) => m.deriv2(x),
            BranchMap::Custom(c) => c.deriv2(x),
        }
    }

    fn describe(&self) -> String {
        format!("{self:?}")
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub map: BranchMap,
    pub interval: Interval,
}

/// Composition `f_w` for a word, in closed form when every branch is affine or Möbius.
#[derive(Clone, Debug)]
pub enum WordMap {
    Affine { r: f64, t: f64 },
    Mobius(Mobius),
    /// 0-based branch indices, outermost first.
    Chain(Vec<u8>),
}

impl WordMap {
    pub fn identity(sys: &CantorSystem) -> Self {
        if sys.closed_form {
            WordMap::Affine { r: 1.0, t: 0.0 }
        } else {
            WordMap::Chain(Vec::new())
        }
    }

    /// `f_w ∘ f_a` for a 0-based branch index `a`.
    pub fn then(&self, sys: &CantorSystem, a: usize) -> WordMap {
        let br = &sys.branches[a].map;
        match (self, br) {
            (WordMap::Chain(v), _) => {
                let mut v = v.clone();
                v.push(a as u8);
                WordMap::Chain(v)
            }
            (WordMap::Affine { r, t }, BranchMap::Affine { r: r2, t: t2 }) => WordMap::Affine {
                r: r * r2,
                t: r * t2 + t,
            },
            (WordMap::Affine { r, t }, BranchMap::Mobius(m)) => {
                WordMap::Mobius(Mobius::from_affine(*r, *t).compose(m))
            }
            (WordMap::Mobius(m), BranchMap::Affine { r, t }) => {
                WordMap::Mobius(m.compose(&Mobius::from_affine(*r, *t)))
            }
            (WordMap::Mobius(m), BranchMap::Mobius(m2)) => WordMap::Mobius(m.compose(m2)),
            (_, BranchMap::Custom(_)) => unreachable!("closed-form map with custom branch"),
        }
    }

    #[inline]
    pub fn eval(&self, sys: &CantorSystem, x: f64) -> f64 {
        match self {
            WordMap::Affine { r, t } => r * x + t,
            WordMap::Mobius(m) => m.eval(x),
            WordMap::Chain(v) => v
                .iter()
                .rev()
                .fold(x, |y, &a| sys.branches[a as usize].map.value(y)),
        }
    }

    /// `(f_w(x), f_w'(x))`.
    #[inline]
    pub fn eval_d(&self, sys: &CantorSystem, x: f64) -> (f64, f64) {
        match self {
            WordMap::Affine { r, t } => (r * x + t, *r),
            WordMap::Mobius(m) => (m.eval(x), m.deriv(x)),
            WordMap::Chain(v) => {
                let mut y = x;
                let mut d = 1.0;
                for &a in v.iter().rev() {
                    let br = &sys.branches[a as usize].map;
                    d *= br.deriv(y);
                    y = br.value(y);
                }
                (y, d)
            }
        }
    }
}

#[derive(Clone)]
pub struct CantorSystem {
    name: String,
    branches: Vec<Branch>,
    hull: Interval,
    domain: Interval,
    closed_form: bool,
}

impl fmt::Debug for CantorSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CantorSystem")
            .field("name", &self.name)
            .field("branches", &self.branches)
            .field("hull", &self.hull)
            .finish()
    }
}

fn attractor_hull(maps: &[BranchMap], domain: Interval) -> Result<Interval> {
    let (mut lo, mut hi) = (domain.lo, domain.hi);
    for _ in 0..10_000 {
        let mut nlo = f64::INFINITY;
        let mut nhi = f64::NEG_INFINITY;
        for m in maps {
            for y in [m.value(lo), m.value(hi)] {
                nlo = nlo.min(y);
                nhi = nhi.max(y);
            }
        }
        if !(nlo.is_finite() && nhi.is_finite()) {
            return Err(Error::InvalidSystem("branch images not finite".into()));
        }
        if nlo == lo && nhi == hi {
            return Interval::new(lo, hi);
        }
        lo = nlo;
        hi = nhi;
    }
    Interval::new(lo, hi)
}

impl CantorSystem {
    /// Branch intervals are the images of the attractor hull.
    pub fn from_maps(name: impl Into<String>, maps: Vec<BranchMap>, domain: Interval) -> Result<Self> {
        Self::check_maps(&maps, domain)?;
        let hull = attractor_hull(&maps, domain)?;
        let branches = maps
            .into_iter()
            .map(|m| {
                let interval = Interval::spanning(m.value(hull.lo), m.value(hull.hi));
                Branch { map: m, interval }
            })
            .collect();
        Ok(Self::assemble(name.into(), branches, hull, domain))
    }

    /// Explicit branch intervals; `validate` checks that `f_a(hull) ⊂ I_a`.
    pub fn with_intervals(
        name: impl Into<String>,
        branches: Vec<Branch>,
        domain: Interval,
    ) -> Result<Self> {
        let maps: Vec<BranchMap> = branches.iter().map(|b| b.map.clone()).collect();
        Self::check_maps(&maps, domain)?;
        let hull = attractor_hull(&maps, domain)?;
        Ok(Self::assemble(name.into(), branches, hull, domain))
    }

    fn check_maps(maps: &[BranchMap], domain: Interval) -> Result<()> {
        if maps.len() < 2 || maps.len() > 255 {
            return Err(Error::InvalidSystem(format!(
                "need between 2 and 255 branches, got {}",
                maps.len()
            )));
        }
        for (a, m) in maps.iter().enumerate() {
            for x in domain.grid(65) {
                let (y, d) = (m.value(x), m.deriv(x));
                if !domain.contains_tol(y, 1e-12) {
                    return Err(Error::InvalidSystem(format!(
                        "branch {} maps {x} to {y}, outside the domain {domain}",
                        a + 1
                    )));
                }
                if !(d.is_finite() && d != 0.0) {
                    return Err(Error::InvalidSystem(format!(
                        "branch {} has derivative {d} at {x}",
                        a + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn assemble(name: String, branches: Vec<Branch>, hull: Interval, domain: Interval) -> Self {
        let closed_form = branches
            .iter()
            .all(|b| !matches!(b.map, BranchMap::Custom(_)));
        CantorSystem {
            name,
            branches,
            hull,
            domain,
            closed_form,
        }
    }

    /// Middle-third Cantor set: `x/3`, `x/3 + 2/3`.
    pub fn cantor3() -> Self {
        let maps = vec![
            BranchMap::Affine { r: 1.0 / 3.0, t: 0.0 },
            BranchMap::Affine {
                r: 1.0 / 3.0,
                t: 2.0 / 3.0,
            },
        ];
        Self::from_maps("cantor3", maps, Interval { lo: 0.0, hi: 1.0 }).expect("cantor3 is valid")
    }

    /// Affine maps with the given ratios, first at 0, last ending at 1, equal gaps.
    pub fn bernoulli(ratios: &[f64]) -> Result<Self> {
        let total: f64 = ratios.iter().sum();
        if ratios.len() < 2 || ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) || total >= 1.0 {
            return Err(param(
                "ratios",
                "need at least two ratios in (0,1) with sum below 1",
            ));
        }
        let gap = (1.0 - total) / (ratios.len() - 1) as f64;
        let mut t = 0.0;
        let mut maps = Vec::with_capacity(ratios.len());
        for (i, &r) in ratios.iter().enumerate() {
            let ti = if i + 1 == ratios.len() { 1.0 - r } else { t };
            maps.push(BranchMap::affine(r, ti)?);
            t += r + gap;
        }
        Self::from_maps("bernoulli", maps, Interval { lo: 0.0, hi: 1.0 })
    }

    /// Continued-fraction digits restricted to `digits`: `f_d(x) = 1/(d+x)`.
    pub fn gauss_digits(digits: &[u32]) -> Result<Self> {
        let mut ds = digits.to_vec();
        ds.sort_unstable();
        ds.dedup();
        if ds.len() < 2 || ds.len() != digits.len() || ds[0] == 0 {
            return Err(param("digits", "need at least two distinct positive digits"));
        }
        let maps = digits
            .iter()
            .map(|&d| BranchMap::moebius(0.0, 1.0, 1.0, d as f64))
            .collect::<Result<Vec<_>>>()?;
        Self::from_maps("gauss-digits", maps, Interval { lo: 0.0, hi: 1.0 })
    }

    /// Möbius branches given as `[a, b, c, d]` matrices on the domain `[0, 1]`.
    pub fn moebius(mats: &[[f64; 4]]) -> Result<Self> {
        let maps = mats
            .iter()
            .map(|m| BranchMap::moebius(m[0], m[1], m[2], m[3]))
            .collect::<Result<Vec<_>>>()?;
        Self::from_maps("moebius", maps, Interval { lo: 0.0, hi: 1.0 })
    }

    /// `x/(x+2)` and `(x+2)/(x+3)`.
    pub fn moebius_default() -> Self {
        Self::moebius(&[[1.0, 0.0, 1.0, 2.0], [1.0, 2.0, 1.0, 3.0]]).expect("default Möbius pair is valid")
    }

    /// Builtins with default parameters.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "cantor3" => Ok(Self::cantor3()),
            "bernoulli" => Self::bernoulli(&[0.25, 0.25]),
            "gauss-digits" => Self::gauss_digits(&[1, 2]),
            "moebius" => Ok(Self::moebius_default()),
            other => Err(Error::InvalidSystem(format!("unknown builtin `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_symbols(&self) -> usize {
        self.branches.len()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn hull(&self) -> Interval {
        self.hull
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    /// True when every branch is affine or Möbius.
    pub fn closed_form(&self) -> bool {
        self.closed_form
    }

    pub fn all_affine(&self) -> bool {
        self.branches
            .iter()
            .all(|b| matches!(b.map, BranchMap::Affine { .. }))
    }

    /// 0-based branch evaluation.
    #[inline]
    pub fn f(&self, a: usize, x: f64) -> f64 {
        self.branches[a].map.value(x)
    }

    #[inline]
    pub fn df(&self, a: usize, x: f64) -> f64 {
        self.branches[a].map.deriv(x)
    }

    #[inline]
    pub fn d2f(&self, a: usize, x: f64) -> f64 {
        self.branches[a].map.deriv2(x)
    }

    /// `T_a(x) = f_a^{-1}(x)` for 0-based `a`.
    pub fn inverse(&self, a: usize, x: f64) -> f64 {
        match &self.branches[a].map {
            BranchMap::Affine { r, t } => (x - t) / r,
            BranchMap::Mobius(m) => m.inverse(x),
            BranchMap::Custom(c) => {
                let (mut lo, mut hi) = (self.domain.lo, self.domain.hi);
                let increasing = c.value(hi) > c.value(lo);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if (c.value(mid) < x) == increasing {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Word map for 1-based symbols.
    pub fn word_map(&self, word: &[u8]) -> WordMap {
        word.iter()
            .fold(WordMap::identity(self), |m, &s| m.then(self, s as usize - 1))
    }

    fn check_word(&self, w: &Word) -> Result<()> {
        w.check(self.n_symbols())
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if self.domain.contains_tol(x, 1e-12) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                x,
                lo: self.domain.lo,
                hi: self.domain.hi,
                what: "map domain",
            })
        }
    }

    /// `f_{a₁}∘…∘f_{a_n}(x)`.
    pub fn f_word(&self, w: &Word, x: f64) -> Result<f64> {
        self.check_word(w)?;
        self.check_point(x)?;
        Ok(self.orbit(w.symbols(), x).0)
    }

    /// Signed chain-rule derivative of `f_w` at `x`.
    pub fn f_word_deriv(&self, w: &Word, x: f64) -> Result<f64> {
        self.check_word(w)?;
        self.check_point(x)?;
        Ok(self.orbit(w.symbols(), x).1)
    }

    /// `(f_w(x), f_w'(x))` by iterating branches from the innermost symbol.
    #[inline]
    pub fn orbit(&self, word: &[u8], x: f64) -> (f64, f64) {
        let mut y = x;
        let mut d = 1.0;
        for &s in word.iter().rev() {
            let br = &self.branches[s as usize - 1].map;
            d *= br.deriv(y);
            y = br.value(y);
        }
        (y, d)
    }

    /// `d/dx log|f_w'(x)|` via the chain rule.
    pub fn log_deriv_slope(&self, word: &[u8], x: f64) -> f64 {
        let mut y = x;
        let mut d = 1.0;
        let mut g = 0.0;
        for &s in word.iter().rev() {
            let br = &self.branches[s as usize - 1].map;
            let f1 = br.deriv(y);
            g += br.deriv2(y) / f1 * d;
            d *= f1;
            y = br.value(y);
        }
        g
    }

    /// `f_w(hull)`; the hull itself for the empty word.
    pub fn cylinder_interval(&self, w: &Word) -> Result<Interval> {
        self.check_word(w)?;
        Ok(self.cylinder_of(w.symbols()))
    }

    pub fn cylinder_of(&self, word: &[u8]) -> Interval {
        let m = self.word_map(word);
        Interval::spanning(m.eval(self, self.hull.lo), m.eval(self, self.hull.hi))
    }

    /// `τ(x) = log|T_a'(x)|` for a 1-based branch `a`, with `x` in the branch image of the domain.
    pub fn tau(&self, x: f64, a: usize) -> Result<f64> {
        if a == 0 || a > self.n_symbols() {
            return Err(Error::InvalidWord(format!("branch {a} outside 1..={}", self.n_symbols())));
        }
        let i = a - 1;
        let image = Interval::spanning(self.f(i, self.domain.lo), self.f(i, self.domain.hi));
        if !image.contains_tol(x, 1e-12) {
            return Err(Error::OutOfDomain {
                x,
                lo: image.lo,
                hi: image.hi,
                what: "branch interval",
            });
        }
        let y = self.inverse(i, x);
        Ok(-self.df(i, y).abs().ln())
    }

    /// Index (0-based) of the branch interval containing `x`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        self.branches
            .iter()
            .position(|b| b.interval.contains(x))
            .or_else(|| {
                self.branches
                    .iter()
                    .position(|b| b.interval.contains_tol(x, 1e-9))
            })
    }

    /// First pair of overlapping branch intervals (1-based), if any.
    pub fn overlap(&self) -> Option<(usize, usize)> {
        let n = self.n_symbols();
        for i in 0..n {
            for j in i + 1..n {
                let (p, q) = (&self.branches[i].interval, &self.branches[j].interval);
                if p.lo <= q.hi && q.lo <= p.hi {
                    return Some((i + 1, j + 1));
                }
            }
        }
        None
    }

    pub fn ensure_separated(&self) -> Result<()> {
        match self.overlap() {
            Some((a, b)) => Err(Error::Separation { a, b }),
            None => Ok(()),
        }
    }

    /// Stable 64-bit key of the system's defining data.
    pub fn hash64(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for b in &self.branches {
            h.update(b.map.describe().as_bytes());
            h.update(b.interval.lo.to_le_bytes());
            h.update(b.interval.hi.to_le_bytes());
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub system: String,
    pub n_check: usize,
    pub grid_size: usize,
    pub separated: bool,
    pub markov: bool,
    /// Sampled expansion rate.
    pub gamma: f64,
    /// Sampled constant with `|(T^n)'| ≥ D^{-1} γ^n`.
    pub d_const: f64,
    /// Sampled `sup |τ'|`.
    pub distortion_b: f64,
    pub min_expansion: Vec<f64>,
    pub passed: bool,
    pub violations: Vec<String>,
    pub constants: &'static str,
}

/// Words used to sample generation `n`: all of them when `N^n ≤ cap`, else a seeded sample.
fn sample_words(n_symbols: usize, n: usize, cap: u64, seed: u64) -> (Vec<Word>, bool) {
    match word_count(n_symbols, n) {
        Some(c) if c <= cap => (enumerate_words(n_symbols, n).collect(), false),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
            let words = (0..cap)
                .map(|_| {
                    let v = (0..n).map(|_| rng.gen_range(1..=n_symbols as u8)).collect();
                    Word::from_symbols(v)
                })
                .collect();
            (words, true)
        }
    }
}

/// Smoke test of separation, Markov images, expansion and distortion on samples.
pub fn validate(sys: &CantorSystem, n_check: usize, grid_size: usize) -> Result<ValidationReport> {
    if n_check == 0 {
        return Err(param("n_check", "must be at least 1"));
    }
    let grid_size = grid_size.max(2);
    sys.ensure_separated()?;
    let hull = sys.hull();
    let grid = hull.grid(grid_size);
    let mut violations = Vec::new();

    let mut markov = true;
    for (a, br) in sys.branches().iter().enumerate() {
        let image = Interval::spanning(br.map.value(hull.lo), br.map.value(hull.hi));
        let inside = grid.iter().all(|&x| br.interval.contains_tol(br.map.value(x), 1e-12));
        if !inside || !br.interval.contains_interval(&image, 1e-12) {
            markov = false;
            violations.push(format!("branch {} does not map the hull into its interval", a + 1));
        }
    }

    let mut min_expansion = Vec::with_capacity(n_check);
    for n in 1..=n_check {
        let (words, _) = sample_words(sys.n_symbols(), n, 4096, 0x5eed);
        let mut m = f64::INFINITY;
        for w in &words {
            let map = sys.word_map(w.symbols());
            for &x in &grid {
                let d = map.eval_d(sys, x).1.abs();
                m = m.min(1.0 / d);
            }
        }
        min_expansion.push(m);
    }
    let top = n_check;
    let half = (n_check / 2).max(1);
    let gamma = if top > half {
        (min_expansion[top - 1] / min_expansion[half - 1]).powf(1.0 / (top - half) as f64)
    } else {
        min_expansion[0]
    };
    let d_const = min_expansion
        .iter()
        .enumerate()
        .map(|(i, &m)| gamma.powi(i as i32 + 1) / m)
        .fold(0.0, f64::max);
    let expansion_ok = min_expansion[top - 1] >= 1.0 && gamma > 1.0;
    if !expansion_ok {
        violations.push(format!(
            "sampled |(T^{n_check})'| = {} below 1 or rate {gamma} not above 1",
            min_expansion[top - 1]
        ));
    }

    let mut b = 0.0f64;
    for a in 0..sys.n_symbols() {
        for &y in &grid {
            let d1 = sys.df(a, y);
            b = b.max((sys.d2f(a, y) / (d1 * d1)).abs());
        }
    }

    Ok(ValidationReport {
        system: sys.name().to_string(),
        n_check,
        grid_size,
        separated: true,
        markov,
        gamma,
        d_const,
        distortion_b: b,
        min_expansion,
        passed: markov && expansion_ok,
        violations,
        constants: "sampled",
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NliReport {
    pub n: usize,
    pub best_pair: Option<(Word, Word)>,
    /// `max_pairs min_x |d/dx (S_nτ(f_a x) − S_nτ(f_b x))|`.
    pub c: f64,
    /// Largest relative gap between the chain-rule and finite-difference derivatives.
    pub fd_max_rel_err: f64,
    pub fd_agrees: bool,
    pub sampled: bool,
    pub words_used: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct NliOptions {
    pub grid_size: usize,
    pub max_words: u64,
    pub fd_step: f64,
    pub fd_tol: f64,
    pub seed: u64,
}

impl Default for NliOptions {
    fn default() -> Self {
        NliOptions {
            grid_size: 33,
            max_words: 256,
            fd_step: 1e-6,
            fd_tol: 1e-4,
            seed: 0x5eed,
        }
    }
}

/// Lower bound on the derivative gap of `S_nτ` between word pairs.
pub fn nli_probe(sys: &CantorSystem, n: usize, opts: &NliOptions) -> Result<NliReport> {
    if n == 0 {
        return Err(param("n", "must be at least 1"));
    }
    let (words, sampled) = sample_words(sys.n_symbols(), n, opts.max_words, opts.seed);
    let grid = sys.hull().grid(opts.grid_size.max(2));
    let h = opts.fd_step;
    let dom = sys.domain();

    // d/dx S_nτ(f_w x) = −d/dx log|f_w'(x)|.
    let slopes: Vec<Vec<f64>> = words
        .iter()
        .map(|w| grid.iter().map(|&x| -sys.log_deriv_slope(w.symbols(), x)).collect())
        .collect();

    let mut fd_max = 0.0f64;
    for (w, row) in words.iter().zip(&slopes) {
        for (&x, &an) in grid.iter().zip(row) {
            if x - h < dom.lo || x + h > dom.hi {
                continue;
            }
            let s = |z: f64| -sys.orbit(w.symbols(), z).1.abs().ln();
            let fd = (s(x + h) - s(x - h)) / (2.0 * h);
            let diff = (fd - an).abs();
            let rel = if diff == 0.0 { 0.0 } else { diff / an.abs().max(f64::MIN_POSITIVE) };
            fd_max = fd_max.max(rel);
        }
    }

    let mut best = 0.0f64;
    let mut best_pair = None;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            let c = slopes[i]
                .iter()
                .zip(&slopes[j])
                .map(|(p, q)| (p - q).abs())
                .fold(f64::INFINITY, f64::min);
            if c > best || best_pair.is_none() {
                best = best.max(c);
                best_pair = Some((words[i].clone(), words[j].clone()));
            }
        }
    }
    Ok(NliReport {
        n,
        best_pair,
        c: best,
        fd_max_rel_err: fd_max,
        fd_agrees: fd_max <= opts.fd_tol,
        sampled,
        words_used: words.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &[u8]) -> Word {
        Word::from_symbols(s.to_vec())
    }

    #[test]
    fn f_word_examples() {
        let c3 = CantorSystem::cantor3();
        assert!((c3.f_word(&w(&[1, 2]), 0.0).unwrap() - 2.0 / 9.0).abs() < 1e-16);
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        assert!((g.f_word(&w(&[1, 1]), 0.0).unwrap() - 0.5).abs() < 1e-16);
        assert_eq!(g.f_word(&Word::empty(), 0.4).unwrap(), 0.4);
        assert!(g.f_word(&w(&[1]), 1.5).is_err());
        assert!(g.f_word(&w(&[3]), 0.5).is_err());
    }

    #[test]
    fn f_word_deriv_examples() {
        let c3 = CantorSystem::cantor3();
        for n in 1..8 {
            let d = c3.f_word_deriv(&w(&vec![2; n]), 0.3).unwrap();
            assert!((d - 3f64.powi(-(n as i32))).abs() < 1e-15);
        }
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let x = 2f64.sqrt() - 1.0;
        let d = g.f_word_deriv(&w(&[2]), x).unwrap();
        assert!((d + (3.0 - 2.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn cylinder_interval_examples() {
        let c3 = CantorSystem::cantor3();
        let i = c3.cylinder_interval(&w(&[1, 2])).unwrap();
        assert!((i.lo - 2.0 / 9.0).abs() < 1e-16 && (i.hi - 3.0 / 9.0).abs() < 1e-16);
        let i = c3.cylinder_interval(&w(&[2, 1])).unwrap();
        assert!((i.lo - 6.0 / 9.0).abs() < 1e-15 && (i.hi - 7.0 / 9.0).abs() < 1e-15);
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let hull = g.hull();
        let i = g.cylinder_interval(&w(&[1])).unwrap();
        assert!((i.lo - 1.0 / (1.0 + hull.hi)).abs() < 1e-15);
        assert!((i.hi - 1.0 / (1.0 + hull.lo)).abs() < 1e-15);
        assert!((i.lo - 0.57735).abs() < 1e-5 && (i.hi - 0.73205).abs() < 1e-5);
    }

    #[test]
    fn gauss_hull_is_period_two_orbit() {
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let s3 = 3f64.sqrt();
        assert!((g.hull().lo - (s3 - 1.0) / 2.0).abs() < 1e-15);
        assert!((g.hull().hi - (s3 - 1.0)).abs() < 1e-15);
        assert_eq!(CantorSystem::cantor3().hull(), Interval { lo: 0.0, hi: 1.0 });
    }

    #[test]
    fn tau_examples() {
        let c3 = CantorSystem::cantor3();
        for x in [0.0, 0.1, 0.3, 0.7, 0.95] {
            let a = if x < 0.5 { 1 } else { 2 };
            assert!((c3.tau(x, a).unwrap() - 3f64.ln()).abs() < 1e-15);
        }
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        assert!((g.tau(0.5, 1).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-14);
        let y = 0.6;
        let x = g.f(1, y);
        assert!((g.tau(x, 2).unwrap() + g.df(1, y).abs().ln()).abs() < 1e-14);
        assert!(g.tau(0.2, 1).is_err());
    }

    #[test]
    fn validate_cantor3_constants() {
        let r = validate(&CantorSystem::cantor3(), 10, 17).unwrap();
        assert!((r.gamma - 3.0).abs() < 1e-12);
        assert!((r.d_const - 1.0).abs() < 1e-12);
        assert_eq!(r.distortion_b, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn validate_gauss_distortion_bound() {
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let r = validate(&g, 8, 33).unwrap();
        let bound = 2.0 / ((3f64.sqrt() - 1.0) / 2.0);
        assert!(r.distortion_b <= bound + 1e-12);
        assert!(r.distortion_b > 5.0);
        assert!(r.passed);
    }

    #[test]
    fn validate_rejects_overlap() {
        let maps = vec![
            BranchMap::affine(0.5, 0.0).unwrap(),
            BranchMap::affine(0.5, 0.25).unwrap(),
        ];
        let sys = CantorSystem::from_maps("overlap", maps, Interval { lo: 0.0, hi: 1.0 }).unwrap();
        assert!(matches!(validate(&sys, 4, 9), Err(Error::Separation { .. })));
    }

    #[test]
    fn nli_examples() {
        let c3 = CantorSystem::cantor3();
        for n in 1..=4 {
            let r = nli_probe(&c3, n, &NliOptions::default()).unwrap();
            assert_eq!(r.c, 0.0);
        }
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let x = 0.5;
        let pair = -g.log_deriv_slope(&[1], x) + g.log_deriv_slope(&[2], x);
        assert!((pair - (2.0 / 1.5 - 2.0 / 2.5)).abs() < 1e-14);
        assert_eq!(g.log_deriv_slope(&[1, 2], x) - g.log_deriv_slope(&[1, 2], x), 0.0);
    }

    #[test]
    fn closed_form_matches_chain() {
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let word = [1u8, 2, 2, 1, 2, 1, 1];
        let m = g.word_map(&word);
        for x in g.hull().grid(5) {
            let (y1, d1) = m.eval_d(&g, x);
            let (y2, d2) = g.orbit(&word, x);
            assert!((y1 - y2).abs() < 1e-15);
            assert!((d1 / d2 - 1.0).abs() < 1e-13);
        }
    }
}

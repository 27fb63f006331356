//! Fourier transform of an equilibrium measure at high frequency.
//!
//! `μ̂(ξ)` is split over an adaptive cylinder partition: a cylinder `I_u` is a
//! leaf once `2π|ξ||I_u| ≤ θ`. On a leaf the phase is smooth in the base
//! variable, so `∫_{I_u} e^{−2πiξy} dμ(y) = ∫ w̄_u(x) e^{−2πiξ f_u(x)} dμ(x)` is
//! evaluated with the measure's quadrature rule.

use crate::error::{param, Error, Result};
use crate::ifs::WordMap;
use crate::sum::{unit_phase, ComplexSum, NeumaierSum};
use crate::thermo::{GibbsMeasure, PotentialKind};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;

pub const XI_CAP: f64 = 1e12;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FourierOptions {
    /// Leaf criterion `2π|ξ||I_u| ≤ θ`.
    pub theta: f64,
    pub depth_cap: usize,
    /// Generations added below every leaf.
    pub extra_depth: usize,
}

impl Default for FourierOptions {
    fn default() -> Self {
        FourierOptions {
            theta: 0.05,
            depth_cap: 40,
            extra_depth: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FrequencySample {
    pub xi: f64,
    #[serde(serialize_with = "ser_complex")]
    pub value: Complex64,
    /// Deepest leaf generation.
    pub depth: usize,
    pub err_bound: f64,
    pub leaves: u64,
}

pub(crate) fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}

impl FrequencySample {
    pub fn modulus(&self) -> f64 {
        self.value.norm()
    }
}

struct Walk<'a> {
    mu: &'a GibbsMeasure,
    xi: f64,
    opts: FourierOptions,
    geometric_s: Option<f64>,
    weights: Option<Vec<f64>>,
    value: ComplexSum,
    mass: NeumaierSum,
    max_len: f64,
    max_depth: usize,
    leaves: u64,
}

impl Walk<'_> {
    /// Depth-first over prefixes; `log_w` is the accumulated `S_nφ` for constant-weight potentials.
    fn visit(&mut self, word: &mut Vec<u8>, map: &WordMap, log_w: f64, forced: usize) -> Result<()> {
        let sys = self.mu.system();
        let hull = sys.hull();
        let len = (map.eval(sys, hull.hi) - map.eval(sys, hull.lo)).abs();
        let depth = word.len();
        let resolved = TAU * self.xi * len <= self.opts.theta;
        if resolved && forced == 0 {
            self.leaf(word, map, log_w, len);
            return Ok(());
        }
        if depth >= self.opts.depth_cap {
            return Err(Error::DepthCap {
                cap: self.opts.depth_cap,
                xi: self.xi,
            });
        }
        let next_forced = if resolved { forced - 1 } else { forced };
        for a in 0..sys.n_symbols() {
            let child = map.then(sys, a);
            let lw = match &self.weights {
                Some(p) => log_w + p[a].ln(),
                None => 0.0,
            };
            word.push(a as u8 + 1);
            self.visit(word, &child, lw, next_forced)?;
            word.pop();
        }
        Ok(())
    }

    fn leaf(&mut self, word: &[u8], map: &WordMap, log_w: f64, len: f64) {
        let mu = self.mu;
        let sys = mu.system();
        let rule = mu.rule();
        let n = word.len();
        self.leaves += 1;
        self.max_len = self.max_len.max(len);
        self.max_depth = self.max_depth.max(n);
        if n == 0 {
            for j in 0..rule.len() {
                let y = rule.x[j];
                let w = rule.q[j];
                self.mass.add(w);
                self.value.add(unit_phase(self.xi, y) * w);
            }
            return;
        }
        let a0 = word[0] as usize - 1;
        let np = n as f64 * mu.pressure();
        for j in 0..rule.len() {
            let x = rule.x[j];
            let (y, s) = match (self.geometric_s, &self.weights) {
                (Some(s), _) => {
                    let (y, d) = map.eval_d(sys, x);
                    (y, s * d.abs().ln())
                }
                (None, Some(_)) => (map.eval(sys, x), log_w),
                (None, None) => mu.pull(word, x),
            };
            let w = rule.q_over_h[j] * (s - np).exp() * mu.h_in(a0, y);
            self.mass.add(w);
            self.value.add(unit_phase(self.xi, y) * w);
        }
    }
}

/// `μ̂(ξ) = ∫ e^{−2πiξx} dμ(x)`.
pub fn fourier_at(mu: &GibbsMeasure, xi: f64, opts: &FourierOptions) -> Result<FrequencySample> {
    if !xi.is_finite() {
        return Err(param("xi", "must be finite"));
    }
    if xi.abs() > XI_CAP {
        return Err(Error::Budget {
            what: "frequency",
            needed: xi.abs(),
            limit: XI_CAP,
        });
    }
    if !(opts.theta > 0.0) {
        return Err(param("theta", "must be positive"));
    }
    if xi == 0.0 {
        return Ok(FrequencySample {
            xi,
            value: Complex64::new(1.0, 0.0),
            depth: 0,
            err_bound: 0.0,
            leaves: 1,
        });
    }
    let sys = mu.system();
    let (geometric_s, weights) = match mu.potential().kind() {
        PotentialKind::Geometric { s } if sys.closed_form() => (Some(*s), None),
        PotentialKind::Weights(p) => (None, Some(p.clone())),
        _ => (None, None),
    };
    let mut walk = Walk {
        mu,
        xi: xi.abs(),
        opts: *opts,
        geometric_s,
        weights,
        value: ComplexSum::new(),
        mass: NeumaierSum::new(),
        max_len: 0.0,
        max_depth: 0,
        leaves: 0,
    };
    let mut word = Vec::with_capacity(opts.depth_cap);
    walk.visit(&mut word, &WordMap::identity(sys), 0.0, opts.extra_depth)?;
    let v = walk.value.value();
    let slack = (walk.mass.value() - 1.0).abs() + 1e-13;
    Ok(FrequencySample {
        xi,
        value: if xi < 0.0 { v.conj() } else { v },
        depth: walk.max_depth,
        err_bound: TAU * xi.abs() * walk.max_len + slack,
        leaves: walk.leaves,
    })
}

/// Number of factors for which the truncated middle-third product is within `1e−12`.
pub fn product_oracle_terms(xi: f64) -> usize {
    let need = std::f64::consts::PI * xi.abs().max(1.0) * 1e12;
    (need.log(3.0).ceil() as usize).max(1)
}

/// `∏_{k=1}^{terms} e^{−2πiξ3^{−k}} cos(2πξ3^{−k})`: the middle-third Cantor measure.
pub fn product_oracle_cantor(xi: f64, terms: usize) -> Complex64 {
    let mut z = Complex64::new(1.0, 0.0);
    let mut scale = 1.0;
    for _ in 0..terms {
        scale /= 3.0;
        let t = xi * scale;
        z *= unit_phase(t, 1.0) * (TAU * t).cos();
    }
    z
}

/// Product formula for equal-ratio affine systems with equal weights:
/// `μ̂(ξ) = ∏_{k≥0} N^{−1} Σ_a e^{−2πiξ r^k t_a}`.
pub fn product_oracle(sys: &crate::ifs::CantorSystem, xi: f64, terms: usize) -> Result<Complex64> {
    use crate::ifs::BranchMap;
    let mut ratio = None;
    let mut shifts = Vec::new();
    for b in sys.branches() {
        match b.map {
            BranchMap::Affine { r, t } => {
                if ratio.is_some_and(|q: f64| q != r) {
                    return Err(Error::InvalidSystem("branch ratios differ".into()));
                }
                ratio = Some(r);
                shifts.push(t);
            }
            _ => return Err(Error::InvalidSystem("product formula needs affine branches".into())),
        }
    }
    let r = ratio.expect("at least two branches");
    let inv_n = 1.0 / shifts.len() as f64;
    let mut z = Complex64::new(1.0, 0.0);
    let mut scale = 1.0;
    for _ in 0..terms {
        let f: Complex64 = shifts.iter().map(|&t| unit_phase(xi * scale, t)).sum();
        z *= f * inv_n;
        scale *= r;
    }
    Ok(z)
}

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyScan {
    pub system: String,
    pub potential: String,
    pub xi_min: f64,
    pub xi_max: f64,
    pub samples_per_decade: usize,
    pub extra_points: usize,
    pub options: FourierOptions,
    pub samples: Vec<FrequencySample>,
}

/// Log-uniform grid with `round(log10(max/min)·spd)` steps, joined with `extra`.
pub fn scan_grid(xi_min: f64, xi_max: f64, samples_per_decade: usize, extra: &[f64]) -> Result<Vec<f64>> {
    if !(xi_min >= 1.0 && xi_max >= xi_min && xi_max.is_finite()) {
        return Err(param("xi range", "need 1 ≤ xi_min ≤ xi_max < ∞"));
    }
    let mut grid = Vec::new();
    if samples_per_decade > 0 {
        let (l0, l1) = (xi_min.log10(), xi_max.log10());
        let count = (((l1 - l0) * samples_per_decade as f64).round() as usize).max(1);
        grid.extend((0..=count).map(|i| {
            if i == 0 {
                xi_min
            } else if i == count {
                xi_max
            } else {
                10f64.powf(l0 + (l1 - l0) * i as f64 / count as f64)
            }
        }));
    }
    for &x in extra {
        if !(x >= xi_min && x <= xi_max) {
            return Err(param("extra points", format!("{x} outside [{xi_min}, {xi_max}]")));
        }
        grid.push(x);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        return Err(param("scan", "no frequencies requested"));
    }
    Ok(grid)
}

/// Samples `μ̂` on a log-uniform grid in parallel.
pub fn decay_scan(
    mu: &GibbsMeasure,
    xi_min: f64,
    xi_max: f64,
    samples_per_decade: usize,
    extra: &[f64],
    opts: &FourierOptions,
) -> Result<FrequencyScan> {
    let grid = scan_grid(xi_min, xi_max, samples_per_decade, extra)?;
    let samples = grid
        .par_iter()
        .map(|&xi| fourier_at(mu, xi, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrequencyScan {
        system: mu.system().name().to_string(),
        potential: mu.potential().describe(),
        xi_min,
        xi_max,
        samples_per_decade,
        extra_points: extra.len(),
        options: *opts,
        samples,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FitBlock {
    pub lo: f64,
    pub hi: f64,
    /// Frequency attaining the block maximum.
    pub xi: f64,
    pub max_modulus: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Decay exponent; positive means decay.
    pub alpha: f64,
    pub window: [f64; 2],
    /// Root-mean-square residual of the log-log regression.
    pub residual: f64,
    pub blocks: Vec<FitBlock>,
}

/// Fits `max_{block} |μ̂| ~ ξ^{−α}` over dyadic blocks inside `window`.
pub fn decay_fit(scan: &FrequencyScan, window: [f64; 2]) -> Result<DecayFit> {
    decay_fit_points(
        scan.samples.iter().map(|s| (s.xi, s.modulus())),
        window,
    )
}

/// [`decay_fit`] on raw `(ξ, |μ̂(ξ)|)` pairs.
pub fn decay_fit_points(points: impl IntoIterator<Item = (f64, f64)>, window: [f64; 2]) -> Result<DecayFit> {
    let [lo, hi] = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::DegenerateFit(format!("window [{lo}, {hi}]")));
    }
    let mut blocks: Vec<FitBlock> = Vec::new();
    let mut pts: Vec<(f64, f64)> = points
        .into_iter()
        .filter(|&(x, _)| x >= lo && x <= hi && x > 0.0)
        .collect();
    if pts.is_empty() {
        return Err(Error::DegenerateFit("no samples in window".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (x, m) in pts {
        let j = x.log2().floor();
        let (blo, bhi) = (2f64.powf(j), 2f64.powf(j + 1.0));
        match blocks.last_mut() {
            Some(b) if b.lo == blo => {
                if m > b.max_modulus {
                    b.max_modulus = m;
                    b.xi = x;
                }
            }
            _ => blocks.push(FitBlock {
                lo: blo,
                hi: bhi,
                xi: x,
                max_modulus: m,
            }),
        }
    }
    if blocks.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "{} dyadic blocks, need at least 3",
            blocks.len()
        )));
    }
    if blocks.iter().any(|b| !(b.max_modulus > 0.0)) {
        return Err(Error::DegenerateFit("zero block maximum".into()));
    }
    let xs: Vec<f64> = blocks.iter().map(|b| b.xi.ln()).collect();
    let ys: Vec<f64> = blocks.iter().map(|b| b.max_modulus.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys)?;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(DecayFit {
        alpha: -slope,
        window,
        residual,
        blocks,
    })
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::CantorSystem;
    use crate::thermo::{build_gibbs, PotentialSpec, ThermoOptions};

    fn cantor_mu() -> GibbsMeasure {
        let s0 = 2f64.ln() / 3f64.ln();
        let o = ThermoOptions {
            gibbs_depth: 4,
            quad_depth: 4,
            ..Default::default()
        };
        build_gibbs(&CantorSystem::cantor3(), &PotentialSpec::geometric(s0), &o).unwrap()
    }

    #[test]
    fn zero_frequency_is_total_mass() {
        let s = fourier_at(&cantor_mu(), 0.0, &FourierOptions::default()).unwrap();
        assert_eq!(s.value, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn negative_frequency_conjugates() {
        let mu = cantor_mu();
        let o = FourierOptions::default();
        let a = fourier_at(&mu, 12.7, &o).unwrap().value;
        let b = fourier_at(&mu, -12.7, &o).unwrap().value;
        assert_eq!(a.conj(), b);
    }

    #[test]
    fn cantor_matches_product() {
        let mu = cantor_mu();
        let s = fourier_at(&mu, 1.0, &FourierOptions::default()).unwrap();
        let p = product_oracle_cantor(1.0, product_oracle_terms(1.0));
        assert!((s.value - p).norm() < 1e-10);
        assert!((p.norm() - 0.3714).abs() < 5e-5);
        let g = product_oracle(&CantorSystem::cantor3(), 1.0, 40).unwrap();
        assert!((g - product_oracle_cantor(1.0, 40)).norm() < 1e-14);
    }

    #[test]
    fn product_oracle_rejects_nonlinear() {
        let g = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        assert!(product_oracle(&g, 1.0, 10).is_err());
    }

    #[test]
    fn grid_examples() {
        let g = scan_grid(1.0, 10.0, 5, &[]).unwrap();
        assert_eq!(g.len(), 6);
        for (i, x) in g.iter().enumerate() {
            assert!((x - 10f64.powf(0.2 * i as f64)).abs() < 1e-12);
        }
        let g = scan_grid(1.0, 100.0, 1, &[3.0, 9.0, 27.0, 81.0]).unwrap();
        assert_eq!(g, vec![1.0, 3.0, 9.0, 10.0, 27.0, 81.0, 100.0]);
        assert!(scan_grid(0.5, 10.0, 1, &[]).is_err());
    }

    #[test]
    fn synthetic_power_law() {
        let grid = scan_grid(1.0, 1e4, 10, &[]).unwrap();
        let fit = decay_fit_points(grid.iter().map(|&x| (x, x.powf(-0.5))), [1.0, 1e4]).unwrap();
        assert!((fit.alpha - 0.5).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn fit_needs_three_blocks() {
        let r = decay_fit_points([(1.0, 1.0), (1.5, 0.9), (2.5, 0.8)], [1.0, 4.0]);
        assert!(matches!(r, Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn depth_cap_is_an_error() {
        let mu = cantor_mu();
        let o = FourierOptions {
            depth_cap: 5,
            ..Default::default()
        };
        assert!(matches!(fourier_at(&mu, 1e6, &o), Err(Error::DepthCap { .. })));
        assert!(fourier_at(&mu, 2e12, &FourierOptions::default()).is_err());
    }
}

//! One function per subcommand; each delegates to the core crate and writes through an [`Emitter`].

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{num, Emitter};
use cantor_fourier::deviations::{large_deviation_rate, regular_blocks, regular_profile, regular_words};
use cantor_fourier::dolgopyat::{fit_contraction_profile, Verdict};
use cantor_fourier::fourier::{decay_fit, decay_scan, fourier_at};
use cantor_fourier::ifs::{nli_probe, validate, NliOptions, NliReport};
use cantor_fourier::oscillation::{
    bourgain_monotonicity, decomposition_audit, exp_sum, fit_nonconc, nonconc_sweep, paired_frequency, AuditOptions,
    ExpSumParams, FrequencyWindow, MultConvOptions, NonConcOptions, ZetaContext,
};
use cantor_fourier::symbolic::enumerate_words;
use cantor_fourier::thermo::{build_gibbs, GibbsMeasure};
use cantor_fourier::{Block, CantorSystem, Error};
use rayon::prelude::*;
use serde::Serialize;
use std::path::PathBuf;

/// Command-line selections; none of them changes a physics parameter.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Selections {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub xi: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub sel: &'a Selections,
    pub out: &'a mut Emitter,
}

impl Run<'_> {
    fn system(&self) -> Result<CantorSystem, CliError> {
        self.cfg.system.build()
    }

    fn cache_path(&self, mu: &GibbsMeasure) -> PathBuf {
        let o = mu.options();
        self.cfg.cache_dir.join(format!(
            "{:016x}-{:016x}-d{}-m{}.bin",
            mu.system().hash64(),
            mu.potential().hash64(),
            o.degree,
            o.quad_depth
        ))
    }

    fn gibbs(&self) -> Result<GibbsMeasure, CliError> {
        let sys = self.system()?;
        let opts = self.cfg.thermo.options();
        let (phi, _) = self.cfg.potential.build(&sys, &opts)?;
        let mu = build_gibbs(&sys, &phi, &opts)?;
        let path = self.cache_path(&mu);
        if path.exists() {
            match mu.load_cache(&path) {
                Ok(_) | Err(Error::CacheMismatch(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(mu)
    }

    fn save_cache(&self, mu: &GibbsMeasure) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.cfg.cache_dir)?;
        mu.save_cache(&self.cache_path(mu))?;
        Ok(())
    }

    pub fn validate(&mut self) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Report {
            system: String,
            passed: bool,
            violations: Vec<String>,
            validation: Option<cantor_fourier::ifs::ValidationReport>,
            nli: Vec<NliReport>,
            nli_verdict: String,
        }
        let v = &self.cfg.validate;
        let mut report = Report {
            system: self.cfg.system.builtin.clone(),
            passed: false,
            violations: Vec::new(),
            validation: None,
            nli: Vec::new(),
            nli_verdict: "not run".into(),
        };
        let checked = self
            .system()
            .and_then(|sys| Ok((validate(&sys, v.n_check, v.grid_size)?, sys)));
        match checked {
            Ok((val, sys)) => {
                report.passed = val.passed;
                report.violations = val.violations.clone();
                report.validation = Some(val);
                let opts = NliOptions {
                    max_words: v.nli_max_words,
                    seed: self.cfg.seed,
                    ..NliOptions::default()
                };
                report.nli = (1..=v.nli_n).map(|n| nli_probe(&sys, n, &opts)).collect::<Result<_, _>>()?;
                report.nli_verdict = nli_verdict(&report.nli);
            }
            Err(e) if e.exit_code() == crate::error::EXIT_VALIDATION => {
                report.violations.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
        self.out.json("validate.json", &report)?;
        if report.passed {
            Ok(())
        } else {
            Err(CliError::Violations(report.violations))
        }
    }

    pub fn dimension(&mut self) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Dim {
            system: String,
            s0: f64,
        }
        let sys = self.system()?;
        let s0 = cantor_fourier::thermo::bowen_dimension(&sys, &self.cfg.thermo.options())?;
        self.out.json(
            "dimension.json",
            &Dim {
                system: sys.name().to_string(),
                s0,
            },
        )
    }

    pub fn gibbs_cmd(&mut self) -> Result<(), CliError> {
        let mu = self.gibbs()?;
        self.out.json("gibbs.json", &mu.summary())?;
        let sys = mu.system();
        let x = sys.hull().mid();
        let mut rows = Vec::new();
        for len in 1..=self.cfg.gibbs.export_depth {
            for w in enumerate_words(sys.n_symbols(), len) {
                let weight = mu.birkhoff_weight(&w, x)?;
                rows.push(vec![w.to_string(), num(mu.cylinder_measure(&w)), num(weight)]);
            }
        }
        self.out.csv("cylinders.csv", &["word", "measure", "weight"], rows)?;
        self.save_cache(&mu)
    }

    pub fn fourier(&mut self) -> Result<(), CliError> {
        let mu = self.gibbs()?;
        let xis = if self.sel.xi.is_empty() { &self.cfg.fourier.xi } else { &self.sel.xi };
        let opts = self.cfg.fourier.options();
        let samples = xis
            .par_iter()
            .map(|&xi| fourier_at(&mu, xi, &opts))
            .collect::<Result<Vec<_>, _>>()?;
        self.out.csv(
            "fourier.csv",
            &["xi", "re", "im", "modulus", "depth", "err_bound"],
            samples.iter().map(|s| {
                vec![
                    num(s.xi),
                    num(s.value.re),
                    num(s.value.im),
                    num(s.modulus()),
                    s.depth.to_string(),
                    num(s.err_bound),
                ]
            }),
        )?;
        self.save_cache(&mu)
    }

    pub fn decayfit(&mut self) -> Result<(), CliError> {
        let mu = self.gibbs()?;
        let f = &self.cfg.fourier;
        let scan = decay_scan(&mu, f.xi_min, f.xi_max, f.samples_per_decade, &f.extra, &f.options())?;
        self.out.csv(
            "scan.csv",
            &["xi", "re", "im", "modulus", "depth", "err_bound"],
            scan.samples.iter().map(|s| {
                vec![
                    num(s.xi),
                    num(s.value.re),
                    num(s.value.im),
                    num(s.modulus()),
                    s.depth.to_string(),
                    num(s.err_bound),
                ]
            }),
        )?;
        let fit = decay_fit(&scan, f.window.unwrap_or([f.xi_min, f.xi_max]))?;
        self.out.json("fit.json", &fit)?;
        self.save_cache(&mu)
    }

    pub fn regular(&mut self) -> Result<(), CliError> {
        let mu = self.gibbs()?;
        let d = &self.cfg.deviations;
        let params = d.params(d.eps)?;
        let [lo, hi] = d.n_range;
        let rows = regular_profile(&mu, lo..=hi, &params)?;
        self.out.csv(
            "regular.csv",
            &["n", "count", "complement_measure"],
            rows.iter().map(|r| vec![r.n.to_string(), r.count.to_string(), num(r.complement)]),
        )?;
        let rate = large_deviation_rate(&mu, d.rate_eps, (lo, hi))?;
        // JSON has no infinity; an empty complement is reported as the string "inf".
        let delta0 = if rate.delta0.is_finite() {
            serde_json::json!(rate.delta0)
        } else {
            serde_json::json!(num(rate.delta0))
        };
        self.out.json(
            "rate.json",
            &serde_json::json!({
                "eps": rate.eps,
                "delta0": delta0,
                "points": rate.points,
                "residual": rate.residual,
            }),
        )?;
        if d.export_words {
            let set = regular_words(&mu, hi, &params)?;
            let mut text = String::new();
            for w in &set.words {
                text.push_str(&w.to_string());
                text.push('\n');
            }
            self.out.bytes("regular_words.txt", text.as_bytes())?;
        }
        self.save_cache(&mu)
    }

    fn osc_n(&self) -> usize {
        self.sel.n.unwrap_or(self.cfg.oscillation.n)
    }

    fn osc_k(&self) -> usize {
        self.sel.k.unwrap_or(self.cfg.oscillation.k)
    }

    pub fn nonconc(&mut self) -> Result<(), CliError> {
        let mu = self.gibbs()?;
        let o = &self.cfg.oscillation;
        let params = self.cfg.deviations.params(self.cfg.deviations.eps)?;
        let set = regular_words(&mu, self.osc_n(), &params)?;
        let opts = NonConcOptions {
            max_outer: o.max_outer,
            seed: self.cfg.seed,
        };
        let report = nonconc_sweep(&mu, &set, mu.system().hull().mid(), &o.sigmas, &opts)?;
        self.out.csv(
            "nonconc.csv",
            &["sigma", "count", "normalized"],
            report.rows.iter().map(|r| vec![num(r.sigma), num(r.count), num(r.normalized)]),
        )?;
        self.out.json("nonconc_report.json", &report)?;
        match fit_nonconc(&report, &params) {
            Ok(fit) => self.out.json("nonconc_fit.json", &fit)?,
            Err(Error::DegenerateFit(reason)) => self.out.json("nonconc_fit.json", &serde_json::json!({ "degenerate": reason }))?,
            Err(e) => return Err(e.into()),
        }
        self.save_cache(&mu)
    }

    pub fn expsum(&mut self) -> Result<(), CliError> {
        let mu = self.gibbs()?;
        let o = &self.cfg.oscillation;
        let (n, k) = (self.osc_n(), self.osc_k());
        let params = self.cfg.deviations.params(self.cfg.deviations.eps)?;
        let set = regular_words(&mu, n, &params)?;
        if set.is_empty() {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: format!("no regular words at n = {n}"),
            }
            .into());
        }
        let anchor = Block::new((0..=k).map(|i| set.words[i % set.len()].clone()).collect())?;
        let ctx = ZetaContext::new(&mu, anchor.clone(), &params)?;
        let blocks = regular_blocks(&mu, n, k, &params)?;
        let etas = FrequencyWindow::new(n, &params)?.log_grid(o.eta_points);
        let sums = etas
            .par_iter()
            .map(|&eta| exp_sum(&ctx, eta, blocks.iter()))
            .collect::<Result<Vec<_>, _>>()?;
        self.out.csv(
            "expsum.csv",
            &["eta", "re", "im", "modulus", "count", "normalized"],
            etas.iter().zip(&sums).map(|(eta, s)| {
                vec![
                    num(*eta),
                    num(s.value.re),
                    num(s.value.im),
                    num(s.value.norm()),
                    s.count.to_string(),
                    num(s.normalized),
                ]
            }),
        )?;
        let mc = MultConvOptions {
            budget: o.mc_budget,
            draws: o.mc_draws,
            seed: self.cfg.seed,
        };
        let check = bourgain_monotonicity(&mu, n, &params, o.eta_points, &o.sigmas, &mc)?;
        self.out.csv(
            "bourgain.csv",
            &["eta", "modulus_1", "modulus_2", "modulus_3", "decreasing"],
            check.rows.iter().map(|r| {
                vec![
                    num(r.eta),
                    num(r.moduli[0]),
                    num(r.moduli[1]),
                    num(r.moduli[2]),
                    r.decreasing.to_string(),
                ]
            }),
        )?;
        self.out.json(
            "bourgain.json",
            &serde_json::json!({
                "anchor_block": anchor.to_string(),
                "n": check.n,
                "anchor": check.anchor,
                "support": check.support,
                "pair_mass": check.pair_mass,
                "fraction": check.fraction,
            }),
        )?;
        self.save_cache(&mu)
    }

    pub fn dolgopyat(&mut self) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Profile {
            t0: Option<f64>,
            delta1: f64,
            #[serde(rename = "C_Xi")]
            c_xi: Option<f64>,
            #[serde(rename = "Xi")]
            xi: f64,
            verdict: Verdict,
            rates: Vec<(f64, f64)>,
        }
        let mu = self.gibbs()?;
        let d = &self.cfg.dolgopyat;
        let prof = fit_contraction_profile(&mu, &d.b_grid, d.m_max, d.xi_exp, d.degree)?;
        let mut rows = Vec::new();
        for p in &prof.probes {
            for (m, v) in p.norms.iter().enumerate() {
                rows.push(vec![num(p.b), m.to_string(), num(*v)]);
            }
        }
        self.out.csv("probe.csv", &["b", "m", "norm"], rows)?;
        self.out.json(
            "profile.json",
            &Profile {
                t0: prof.t0,
                delta1: prof.delta1,
                c_xi: prof.c_xi.is_finite().then_some(prof.c_xi),
                xi: prof.xi_exp,
                verdict: prof.verdict,
                rates: prof.probes.iter().map(|p| (p.b, p.rate)).collect(),
            },
        )?;
        self.save_cache(&mu)
    }

    pub fn audit(&mut self) -> Result<(), CliError> {
        let mu = self.gibbs()?;
        let a = &self.cfg.audit;
        let (n, k) = (self.sel.n.unwrap_or(a.n), self.sel.k.unwrap_or(a.k));
        let params = self.cfg.deviations.params(a.eps)?;
        let xi = match self.sel.xi.first() {
            Some(&xi) => xi,
            None => paired_frequency(&mu, n, k, params.eps0),
        };
        let desk = ExpSumParams::desk(&mu, k)?;
        let sums = ExpSumParams::new(k, desk.eps2, a.eps3, a.eps4)?;
        let opts = AuditOptions {
            eta_points: a.eta_points,
            refine: a.refine,
            fourier: self.cfg.fourier.options(),
        };
        let report = decomposition_audit(&mu, xi, n, &params, &sums, &opts)?;
        self.out.json("audit.json", &report)?;
        self.save_cache(&mu)
    }
}

/// `linear (c=0)` when every probe vanishes, `totally non-linear` when all reach 0.1.
pub fn nli_verdict(reports: &[NliReport]) -> String {
    if reports.is_empty() {
        return "not run".into();
    }
    let max_n = reports.iter().map(|r| r.n).max().unwrap_or(0);
    if reports.iter().all(|r| r.c == 0.0) {
        "linear (c=0)".into()
    } else if reports.iter().all(|r| r.c >= 0.1) {
        format!("totally non-linear (c≥0.1 at n≤{max_n})")
    } else {
        "inconclusive".into()
    }
}

//! Monte Carlo experiments: distributions of process functionals under a data
//! generator, compared with their bootstrap and Gaussian-limit counterparts,
//! and rejection-rate / coverage studies of the tests and intervals.
//!
//! Stream layout for seed `s`: Monte Carlo run `r` draws its data from
//! `(s, 1).substream(r)`; the single bootstrap dataset comes from `(s, 2)`;
//! bootstrap weights for replicate `b` use `(s, 3).substream(b)` (in the test
//! studies, run `r` uses `(s, 3).substream(r)` as its weight stream); limit
//! draw `k` uses `(s, 4).substream(k)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::empirical::{copula_process_from, pseudo_observations, sequential_process_plus_from, PseudoSample, TiePolicy};
use crate::error::{Error, Result};
use crate::grid::{sup_abs, uniform_axis, Grid, DEFAULT_POINTS_PER_AXIS};
use crate::inference::{bootstrap_rho, constancy_test_from, quantile, spearman_ci_from, spearman_rho_from, symmetry_statistic, symmetry_test_from, Centering, Decision};
use crate::limitfield::{delta_transform_plus, CopulaDerivatives, CovarianceSpec, GaussianFieldSampler};
use crate::models::{CopulaModel, SerialGenerator};
use crate::resample::{draw_weights, BootstrapBase, WeightScheme};
use crate::rng::{par_tasks, RandomStream};

const MC_STREAM: u64 = 1;
const DATASET_STREAM: u64 = 2;
const WEIGHT_STREAM: u64 = 3;
const LIMIT_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// `sup |ℂ_n|`; bootstrap `sup |ℂ_{n,b}|`; limit `sup |G_C|`.
    SupProcess,
    /// `sup |ℂ_n^+|`; bootstrap via the constancy-test replicates; limit
    /// `sup |B^#(s,u) - s B^#(1,u)|`.
    SupPlus,
    /// `√n (ρ_n - ρ)`; bootstrap `√n (ρ_{n,b} - ρ_n)`.
    SpearmanRho,
    /// `sup |D_n|`; bootstrap centered replicates; limit
    /// `sup |G_C(u,v) - G_C(v,u)|`.
    Symmetry,
    /// Rejection rate of the symmetry test.
    SymmetryTest,
    /// Rejection rate of the constancy test.
    ConstancyTest,
    /// Coverage of the Spearman's rho interval.
    RhoCoverage,
}

impl Statistic {
    fn is_study(self) -> bool {
        matches!(
            self,
            Statistic::SymmetryTest | Statistic::ConstancyTest | Statistic::RhoCoverage
        )
    }
}

fn default_points() -> usize {
    DEFAULT_POINTS_PER_AXIS
}

fn default_alpha() -> f64 {
    0.05
}

fn default_confidence() -> f64 {
    0.9
}

fn default_quantiles() -> Vec<f64> {
    vec![0.5, 0.9, 0.95, 0.99]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: SerialGenerator,
    pub statistic: Statistic,
    pub n: usize,
    /// Monte Carlo runs.
    pub reps: usize,
    /// Bootstrap replicates: one dataset for distribution statistics, per run
    /// for the test and coverage studies.
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(default)]
    pub scheme: WeightScheme,
    /// Draws from the Gaussian limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_draws: Option<usize>,
    /// Points per copula axis.
    #[serde(default = "default_points")]
    pub grid: usize,
    /// Points on the time axis; defaults to `grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_grid: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default)]
    pub centering: Centering,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
}

impl ExperimentConfig {
    pub fn new(generator: SerialGenerator, statistic: Statistic, n: usize, reps: usize) -> Self {
        ExperimentConfig {
            generator,
            statistic,
            n,
            reps,
            bootstrap: None,
            scheme: WeightScheme::default(),
            limit_draws: None,
            grid: DEFAULT_POINTS_PER_AXIS,
            time_grid: None,
            seed: 0,
            alpha: default_alpha(),
            confidence: default_confidence(),
            centering: Centering::default(),
            quantiles: default_quantiles(),
        }
    }

    /// Parses and validates a JSON config; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { String::new() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator
            .validate()
            .map_err(|e| Error::config("generator", e.to_string()))?;
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if self.reps == 0 {
            return Err(Error::config("reps", "must be positive"));
        }
        if self.grid < 2 {
            return Err(Error::config("grid", "needs at least 2 points per axis"));
        }
        if self.time_grid.is_some_and(|t| t < 2) {
            return Err(Error::config("time_grid", "needs at least 2 points"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::config("confidence", "must lie in (0, 1)"));
        }
        if let Some(i) = self.quantiles.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config(format!("quantiles[{i}]"), "must lie in [0, 1]"));
        }
        if self.bootstrap == Some(0) {
            return Err(Error::config("B", "must be positive"));
        }
        self.scheme
            .block_len(self.n)
            .map_err(|e| Error::config("scheme", e.to_string()))?;
        if self.generator.dim() < 2 {
            return Err(Error::config("generator", "needs dimension >= 2"));
        }
        let truth = self.generator.stationary_copula();
        match self.statistic {
            Statistic::SupProcess if truth.is_none() => {
                return Err(Error::config("generator", "sup-process needs a stationary generator"))
            }
            Statistic::SpearmanRho | Statistic::RhoCoverage => {
                if truth.as_ref().and_then(|c| c.spearman_rho()).is_none() {
                    return Err(Error::config(
                        "generator",
                        "Spearman's rho of this generator has no closed form",
                    ));
                }
            }
            Statistic::Symmetry | Statistic::SymmetryTest if self.generator.dim() != 2 => {
                return Err(Error::config("generator", "the symmetry statistic is bivariate"))
            }
            _ => {}
        }
        if self.limit_draws.is_some() {
            match self.statistic {
                Statistic::SpearmanRho => {
                    return Err(Error::config("limit_draws", "no limit sampler for Spearman's rho"))
                }
                s if s.is_study() => {
                    return Err(Error::config("limit_draws", "not used by test or coverage studies"))
                }
                Statistic::SupPlus | Statistic::Symmetry if truth.is_none() => {
                    return Err(Error::config("limit_draws", "the limit needs a stationary generator"))
                }
                _ => {}
            }
            if self.limit_draws == Some(0) {
                return Err(Error::config("limit_draws", "must be positive"));
            }
        }
        if self.statistic.is_study() {
            match self.bootstrap {
                None => return Err(Error::config("B", "required for test and coverage studies")),
                Some(b) if self.statistic == Statistic::RhoCoverage && b < 100 => {
                    return Err(Error::config("B", "coverage studies need at least 100 replicates"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let d = self.generator.dim();
        match self.statistic {
            Statistic::SupPlus | Statistic::ConstancyTest => {
                let axes = vec![uniform_axis(self.grid); d];
                Grid::new(axes, Some(uniform_axis(self.time_grid.unwrap_or(self.grid))))
            }
            _ => Grid::uniform(d, self.grid, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub first: String,
    pub second: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub p: f64,
    pub monte_carlo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub statistic: Statistic,
    /// Statistic values per run; p-values for the test studies, estimates for
    /// coverage studies.
    pub monte_carlo: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<Vec<f64>>,
    pub ks: Vec<KsEntry>,
    pub quantiles: Vec<QuantileRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    /// Population value of the estimand in coverage and rho studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_value: Option<f64>,
}

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov–Smirnov distance of `a` to the uniform law on [0,1].
pub fn ks_uniform(a: &[f64]) -> f64 {
    let a = sorted(a);
    let n = a.len() as f64;
    a.iter()
        .enumerate()
        .map(|(k, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((k + 1) as f64 / n - x).max(x - k as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn pseudo(x: &crate::empirical::DataMatrix) -> Result<PseudoSample> {
    pseudo_observations(x, TiePolicy::Error)
}

/// Swap-antisymmetric part of a field on a square grid.
fn sup_swap(values: &[f64], grid: &Grid) -> f64 {
    let diffs: Vec<f64> = (0..values.len())
        .map(|k| values[k] - values[grid.swap_index(k)])
        .collect();
    sup_abs(&diffs)
}

pub fn mc_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let seed = cfg.seed;
    let mc_stream = RandomStream::new(seed, MC_STREAM);
    let weight_stream = RandomStream::new(seed, WEIGHT_STREAM);
    let truth = cfg.generator.stationary_copula();
    let n = cfg.n;
    let sq = (n as f64).sqrt();
    let true_rho = truth.as_ref().and_then(CopulaModel::spearman_rho);

    if cfg.statistic.is_study() {
        return run_study(cfg, &grid, &mc_stream, &weight_stream, true_rho);
    }

    let statistic_of = |ps: &PseudoSample| -> Result<f64> {
        Ok(match cfg.statistic {
            Statistic::SupProcess => sup_abs(copula_process_from(ps, truth.as_ref().unwrap(), &grid)?.values()),
            Statistic::SupPlus => sup_abs(sequential_process_plus_from(ps, &grid)?.values()),
            Statistic::SpearmanRho => sq * (spearman_rho_from(ps)? - true_rho.unwrap()),
            Statistic::Symmetry => symmetry_statistic(ps, &grid)?,
            _ => unreachable!(),
        })
    };
    let monte_carlo = par_tasks(&mc_stream, cfg.reps, |_, s| {
        let x = cfg.generator.sample(n, s)?;
        statistic_of(&pseudo(&x)?)
    })?;

    let bootstrap = match cfg.bootstrap {
        None => None,
        Some(b) => {
            let x = cfg.generator.sample(n, &mut RandomStream::new(seed, DATASET_STREAM))?;
            let ps = pseudo(&x)?;
            let sample = match cfg.statistic {
                Statistic::SupProcess | Statistic::Symmetry => {
                    let base = BootstrapBase::new(ps, &grid)?;
                    let symmetric = cfg.statistic == Statistic::Symmetry;
                    par_tasks(&weight_stream, b, |_, s| {
                        let w = draw_weights(&cfg.scheme, n, s)?;
                        let z = base.process(&w)?;
                        Ok::<_, Error>(if symmetric {
                            sup_swap(z.values(), &grid)
                        } else {
                            sup_abs(z.values())
                        })
                    })?
                }
                Statistic::SupPlus => {
                    constancy_test_from(&ps, &cfg.scheme, b, 0.05, &grid, &weight_stream)?.bootstrap_sample
                }
                Statistic::SpearmanRho => {
                    let rho = spearman_rho_from(&ps)?;
                    par_tasks(&weight_stream, b, |_, s| {
                        let w = draw_weights(&cfg.scheme, n, s)?;
                        Ok::<_, Error>(sq * (bootstrap_rho(&ps, &w)? - rho))
                    })?
                }
                _ => unreachable!(),
            };
            Some(sample)
        }
    };

    let limit = match cfg.limit_draws {
        None => None,
        Some(k) => {
            let c = truth.clone().unwrap();
            let limit_stream = RandomStream::new(seed, LIMIT_STREAM);
            let sample = match cfg.statistic {
                Statistic::SupProcess | Statistic::Symmetry => {
                    let sampler = GaussianFieldSampler::new(CovarianceSpec::IidCopula { model: c.clone() }, &grid)?;
                    let deriv = CopulaDerivatives::new(&c, &grid)?;
                    let symmetric = cfg.statistic == Statistic::Symmetry;
                    par_tasks(&limit_stream, k, |_, s| {
                        let g = deriv.apply(&sampler.sample(s))?;
                        Ok::<_, Error>(if symmetric {
                            sup_swap(g.values(), &grid)
                        } else {
                            sup_abs(g.values())
                        })
                    })?
                }
                Statistic::SupPlus => {
                    let sampler = GaussianFieldSampler::new(CovarianceSpec::KieferMueller { model: c }, &grid)?;
                    par_tasks(&limit_stream, k, |_, s| {
                        Ok::<_, Error>(sup_abs(delta_transform_plus(&sampler.sample(s))?.values()))
                    })?
                }
                _ => unreachable!(),
            };
            Some(sample)
        }
    };

    let mut ks = Vec::new();
    let named: Vec<(&str, &Vec<f64>)> = [("monte-carlo", Some(&monte_carlo)), ("bootstrap", bootstrap.as_ref()), ("limit", limit.as_ref())]
        .into_iter()
        .filter_map(|(name, v)| v.map(|v| (name, v)))
        .collect();
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            ks.push(KsEntry {
                first: named[i].0.into(),
                second: named[j].0.into(),
                distance: ks_distance(named[i].1, named[j].1),
            });
        }
    }
    let (smc, sb, sl) = (
        sorted(&monte_carlo),
        bootstrap.as_deref().map(sorted),
        limit.as_deref().map(sorted),
    );
    let quantiles = cfg
        .quantiles
        .iter()
        .map(|&p| QuantileRow {
            p,
            monte_carlo: quantile(&smc, p),
            bootstrap: sb.as_deref().map(|s| quantile(s, p)),
            limit: sl.as_deref().map(|s| quantile(s, p)),
        })
        .collect();
    Ok(ExperimentReport {
        statistic: cfg.statistic,
        monte_carlo,
        bootstrap,
        limit,
        ks,
        quantiles,
        rejection_rate: None,
        coverage: None,
        true_value: if cfg.statistic == Statistic::SpearmanRho { true_rho } else { None },
    })
}

fn run_study(
    cfg: &ExperimentConfig,
    grid: &Grid,
    mc_stream: &RandomStream,
    weight_stream: &RandomStream,
    true_rho: Option<f64>,
) -> Result<ExperimentReport> {
    let b = cfg.bootstrap.unwrap();
    let n = cfg.n;
    // (value, hit): p-value and rejection, or estimate and coverage
    let runs = par_tasks(mc_stream, cfg.reps, |r, s| {
        let x = cfg.generator.sample(n, s)?;
        let ps = pseudo(&x)?;
        let ws = weight_stream.substream(r as u64);
        Ok::<_, Error>(match cfg.statistic {
            Statistic::SymmetryTest => {
                let t = symmetry_test_from(&ps, &cfg.scheme, b, cfg.alpha, grid, cfg.centering, &ws)?;
                (t.p_value, t.decision == Decision::Reject)
            }
            Statistic::ConstancyTest => {
                let t = constancy_test_from(&ps, &cfg.scheme, b, cfg.alpha, grid, &ws)?;
                (t.p_value, t.decision == Decision::Reject)
            }
            Statistic::RhoCoverage => {
                let ci = spearman_ci_from(&ps, &cfg.scheme, b, cfg.confidence, &ws)?;
                let rho = true_rho.unwrap();
                (ci.estimate, ci.lower <= rho && rho <= ci.upper)
            }
            _ => unreachable!(),
        })
    })?;
    let values: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let rate = runs.iter().filter(|r| r.1).count() as f64 / runs.len() as f64;
    let smc = sorted(&values);
    let quantiles = cfg
        .quantiles
        .iter()
        .map(|&p| QuantileRow {
            p,
            monte_carlo: quantile(&smc, p),
            bootstrap: None,
            limit: None,
        })
        .collect();
    let coverage_study = cfg.statistic == Statistic::RhoCoverage;
    let ks = if coverage_study {
        Vec::new()
    } else {
        vec![KsEntry {
            first: "p-values".into(),
            second: "uniform".into(),
            distance: ks_uniform(&values),
        }]
    };
    Ok(ExperimentReport {
        statistic: cfg.statistic,
        monte_carlo: values,
        bootstrap: None,
        limit: None,
        ks,
        quantiles,
        rejection_rate: (!coverage_study).then_some(rate),
        coverage: coverage_study.then_some(rate),
        true_value: if coverage_study { true_rho } else { None },
    })
}

/// Raw samples as CSV rows `source,index,value`.
pub fn write_samples_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["source", "index", "value"]).map_err(io)?;
    let sources = [
        ("monte-carlo", Some(&report.monte_carlo)),
        ("bootstrap", report.bootstrap.as_ref()),
        ("limit", report.limit.as_ref()),
    ];
    for (name, values) in sources {
        for (i, v) in values.into_iter().flatten().enumerate() {
            w.write_record([name.to_string(), i.to_string(), v.to_string()]).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

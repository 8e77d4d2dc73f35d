//! Bootstrap weights and bootstrapped empirical copulas.
//!
//! A bootstrap replicate reweights the observations by `M_1, ..., M_n` with
//! `Σ M_i = n`. The weighted margins `F_{n,b,p}` give weighted
//! pseudo-observations `Û^b_ip = F_{n,b,p}(X_ip)`, and the bootstrap copula is
//! their weighted empirical distribution function. Zero-weight rows carry no
//! mass and drop out.

use rand::distr::Distribution;
use rand::RngExt;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::empirical::{cell_indices, orthant_sums, pseudo_observations, DataMatrix, PseudoSample, TiePolicy};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::rng::{par_tasks, RandomStream};

/// Law of the multiplier variables `ξ_i` before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierDist {
    /// Standard exponential: mean 1, variance 1.
    #[default]
    Exponential,
    /// `ξ ≡ 1`, so every weight is 1. Reproduces the original sample.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum WeightScheme {
    /// `M_i = n ξ_i / Σ ξ_j`.
    Multiplier {
        #[serde(default)]
        dist: MultiplierDist,
    },
    /// `(M_1, ..., M_n)` multinomial with `n` trials and equal cell probabilities.
    #[default]
    Multinomial,
    /// Moving blocks of length `len`; `None` means `⌊n^{1/3}⌋`.
    Block {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        len: Option<usize>,
    },
}


impl WeightScheme {
    pub fn multiplier() -> Self {
        WeightScheme::Multiplier {
            dist: MultiplierDist::Exponential,
        }
    }

    pub fn block(len: usize) -> Self {
        WeightScheme::Block { len: Some(len) }
    }

    /// Block length used for a sample of size `n`, or `None` for the i.i.d.
    /// schemes.
    pub fn block_len(&self, n: usize) -> Result<Option<usize>> {
        match self {
            WeightScheme::Block { len } => {
                let l = len.unwrap_or_else(|| default_block_len(n));
                if l == 0 || l > n {
                    return Err(Error::invalid(format!(
                        "block length {l} must be in 1..={n}"
                    )));
                }
                Ok(Some(l))
            }
            _ => Ok(None),
        }
    }
}

/// `⌊n^{1/3}⌋`, at least 1.
pub fn default_block_len(n: usize) -> usize {
    let mut l = (n as f64).cbrt().floor() as usize;
    while (l + 1).pow(3) <= n {
        l += 1;
    }
    while l > 1 && l.pow(3) > n {
        l -= 1;
    }
    l.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector {
    m: Vec<f64>,
}

impl WeightVector {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::invalid("empty weight vector"));
        }
        if m.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        if m.iter().all(|w| *w == 0.0) {
            return Err(Error::invalid("all weights are zero"));
        }
        Ok(WeightVector { m })
    }

    pub fn ones(n: usize) -> Self {
        WeightVector { m: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.m
    }

    pub fn sum(&self) -> f64 {
        self.m.iter().sum()
    }
}

pub fn draw_weights(scheme: &WeightScheme, n: usize, rng: &mut RandomStream) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    match scheme {
        WeightScheme::Multiplier { dist } => {
            let xi: Vec<f64> = match dist {
                MultiplierDist::Exponential => (0..n).map(|_| Exp1.sample(rng)).collect(),
                MultiplierDist::Degenerate => vec![1.0; n],
            };
            let total: f64 = xi.iter().sum();
            let scale = n as f64 / total;
            let mut m: Vec<f64> = xi.into_iter().map(|x| x * scale).collect();
            // push the rounding residual of the sum into the largest weight
            let top = (0..n).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap();
            for _ in 0..4 {
                let r = n as f64 - m.iter().sum::<f64>();
                if r == 0.0 || m[top] + r < 0.0 {
                    break;
                }
                m[top] += r;
            }
            WeightVector::new(m)
        }
        WeightScheme::Multinomial => {
            let mut m = vec![0.0; n];
            for _ in 0..n {
                m[rng.random_range(0..n)] += 1.0;
            }
            Ok(WeightVector { m })
        }
        WeightScheme::Block { .. } => {
            let l = scheme.block_len(n)?.unwrap();
            let k = n.div_ceil(l);
            let starts: Vec<usize> = (0..k).map(|_| rng.random_range(0..=n - l)).collect();
            block_weights_from_starts(n, l, &starts)
        }
    }
}

/// Lengths of the `⌈n/l⌉` blocks: all `l` except the last, which is cut so
/// the lengths add up to `n`.
fn block_lengths(n: usize, l: usize) -> Vec<usize> {
    let k = n.div_ceil(l);
    (0..k).map(|i| if i + 1 < k { l } else { n - (k - 1) * l }).collect()
}

/// Block weights for given start points: block `i` covers the 0-based indices
/// `S_i, ..., S_i + L_i - 1`, and `M_j` counts the blocks covering `j`.
pub fn block_weights_from_starts(n: usize, l: usize, starts: &[usize]) -> Result<WeightVector> {
    if l == 0 || l > n {
        return Err(Error::invalid(format!("block length {l} must be in 1..={n}")));
    }
    let lengths = block_lengths(n, l);
    if starts.len() != lengths.len() {
        return Err(Error::invalid(format!(
            "need {} block starts, got {}",
            lengths.len(),
            starts.len()
        )));
    }
    if let Some(s) = starts.iter().find(|&&s| s > n - l) {
        return Err(Error::invalid(format!("block start {s} exceeds {}", n - l)));
    }
    let mut m = vec![0.0; n];
    for (&s, &len) in starts.iter().zip(&lengths) {
        for w in &mut m[s..s + len] {
            *w += 1.0;
        }
    }
    Ok(WeightVector { m })
}

/// `E M_j` for every index.
pub fn expected_weights(scheme: &WeightScheme, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    match scheme.block_len(n)? {
        None => Ok(vec![1.0; n]),
        Some(l) => {
            let span = n - l;
            let lengths = block_lengths(n, l);
            Ok((0..n)
                .map(|j| {
                    let hits: usize = lengths
                        .iter()
                        .map(|&len| {
                            let lo = (j + 1).saturating_sub(len);
                            let hi = j.min(span);
                            if hi >= lo {
                                hi - lo + 1
                            } else {
                                0
                            }
                        })
                        .sum();
                    hits as f64 / (span + 1) as f64
                })
                .collect())
        }
    }
}

/// Weighted pseudo-observations `Û^b_ip = F_{n,b,p}(X_ip)`, row-major.
///
/// Tied observations (possible only under average ranks) share the weighted
/// analogue of the mid rank, `(before + (group + mean)/2) / total`, which
/// reduces to the average rank for unit weights.
pub fn weighted_pseudo_observations(ps: &PseudoSample, w: &WeightVector) -> Result<Vec<f64>> {
    let (n, d) = (ps.n(), ps.d());
    if w.len() != n {
        return Err(Error::invalid(format!(
            "{} weights for {n} observations",
            w.len()
        )));
    }
    let m = w.values();
    let total = w.sum();
    let mut out = vec![0.0; n * d];
    for p in 0..d {
        let order = ps.order(p);
        let mut start = 0;
        let mut before = 0.0;
        while start < n {
            let v = ps.get(order[start], p);
            let mut end = start + 1;
            while end < n && ps.get(order[end], p) == v {
                end += 1;
            }
            let group: f64 = order[start..end].iter().map(|&i| m[i]).sum();
            let value = if end - start == 1 {
                before + group
            } else {
                before + (group + group / (end - start) as f64) / 2.0
            };
            for &i in &order[start..end] {
                out[i * d + p] = value / total;
            }
            before += group;
            start = end;
        }
    }
    Ok(out)
}

fn check_grid(d: usize, grid: &Grid) -> Result<()> {
    if grid.has_time() {
        return Err(Error::invalid("grid must not have a time axis"));
    }
    if grid.dims() != d {
        return Err(Error::invalid(format!(
            "grid has {} dims, data has {d}",
            grid.dims()
        )));
    }
    Ok(())
}

/// Weighted orthant masses normalized by the total, so the top corner is 1.
fn weighted_copula_values(ub: &[f64], w: &WeightVector, d: usize, grid: &Grid) -> Vec<f64> {
    let mut mass = vec![0.0; grid.space_len()];
    for (c, &m) in cell_indices(ub, d, grid).into_iter().zip(w.values()) {
        mass[c] += m;
    }
    orthant_sums(&mut mass, grid);
    let total = *mass.last().unwrap();
    mass.iter().map(|v| v / total).collect()
}

/// `C_{n,b}` on `grid` from pseudo-observations.
pub fn bootstrap_copula_from(ps: &PseudoSample, w: &WeightVector, grid: &Grid) -> Result<Field> {
    check_grid(ps.d(), grid)?;
    let ub = weighted_pseudo_observations(ps, w)?;
    Field::new(grid.clone(), weighted_copula_values(&ub, w, ps.d(), grid))
}

pub fn bootstrap_copula(x: &DataMatrix, w: &WeightVector, grid: &Grid) -> Result<Field> {
    bootstrap_copula_from(&pseudo_observations(x, TiePolicy::Error)?, w, grid)
}

/// Precomputed pieces shared by all replicates for one dataset.
#[derive(Debug, Clone)]
pub struct BootstrapBase {
    ps: PseudoSample,
    grid: Grid,
    cn: Vec<f64>,
}

impl BootstrapBase {
    pub fn new(ps: PseudoSample, grid: &Grid) -> Result<Self> {
        check_grid(ps.d(), grid)?;
        let cn = crate::empirical::empirical_copula_from(&ps, grid)?.into_values();
        Ok(BootstrapBase {
            ps,
            grid: grid.clone(),
            cn,
        })
    }

    pub fn pseudo(&self) -> &PseudoSample {
        &self.ps
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `C_n` on the grid.
    pub fn empirical(&self) -> &[f64] {
        &self.cn
    }

    pub fn copula(&self, w: &WeightVector) -> Result<Vec<f64>> {
        let ub = weighted_pseudo_observations(&self.ps, w)?;
        Ok(weighted_copula_values(&ub, w, self.ps.d(), &self.grid))
    }

    /// `√n (C_{n,b} - C_n)`.
    pub fn process(&self, w: &WeightVector) -> Result<Field> {
        let sq = (self.ps.n() as f64).sqrt();
        let cb = self.copula(w)?;
        let values = cb.iter().zip(&self.cn).map(|(b, c)| sq * (b - c)).collect();
        Field::new(self.grid.clone(), values)
    }
}

pub fn bootstrap_process_from(ps: &PseudoSample, w: &WeightVector, grid: &Grid) -> Result<Field> {
    BootstrapBase::new(ps.clone(), grid)?.process(w)
}

/// `ℂ_{n,b} = √n (C_{n,b} - C_n)` on `grid`.
pub fn bootstrap_process(x: &DataMatrix, w: &WeightVector, grid: &Grid) -> Result<Field> {
    bootstrap_process_from(&pseudo_observations(x, TiePolicy::Error)?, w, grid)
}

/// `functional(ℂ_{n,b})` for `b = 1..=count`; replicate `b` draws its weights
/// from `rng.substream(b - 1)`.
pub fn bootstrap_replicates<F>(
    x: &DataMatrix,
    scheme: &WeightScheme,
    grid: &Grid,
    count: usize,
    functional: F,
    rng: &RandomStream,
) -> Result<Vec<f64>>
where
    F: Fn(&Field) -> f64 + Sync,
{
    let base = BootstrapBase::new(pseudo_observations(x, TiePolicy::Error)?, grid)?;
    replicates_from(&base, scheme, count, functional, rng)
}

pub fn replicates_from<F>(
    base: &BootstrapBase,
    scheme: &WeightScheme,
    count: usize,
    functional: F,
    rng: &RandomStream,
) -> Result<Vec<f64>>
where
    F: Fn(&Field) -> f64 + Sync,
{
    if count == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let n = base.ps.n();
    scheme.block_len(n)?;
    par_tasks(rng, count, |_, s| {
        let w = draw_weights(scheme, n, s)?;
        Ok(functional(&base.process(&w)?))
    })
}

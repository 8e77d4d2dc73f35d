//! Spearman's rho with bootstrap intervals, the exchangeability test and the
//! test for a copula that stays constant over time.

use serde::{Deserialize, Serialize};

use crate::empirical::{cell_indices, floor_sn, orthant_counts, orthant_sums, pseudo_observations, sequential_process_plus_from, DataMatrix, PseudoSample, TiePolicy};
use crate::error::{Error, Result};
use crate::grid::{sup_abs, Grid};
use crate::resample::{draw_weights, expected_weights, weighted_pseudo_observations, BootstrapBase, WeightScheme, WeightVector};
use crate::rng::{par_tasks, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Reject,
    Retain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub decision: Decision,
    pub alpha: f64,
    pub scheme: WeightScheme,
    pub block_len: Option<usize>,
    pub grid: Grid,
    pub seed: u64,
    /// Symmetry test only: whether replicates were centered at `D_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centered: Option<bool>,
    pub bootstrap_sample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub scheme: WeightScheme,
    pub block_len: Option<usize>,
    pub seed: u64,
    /// `√n (ρ_{n,b} - ρ_n)` for every replicate.
    pub bootstrap_sample: Vec<f64>,
}

/// Empirical `p`-quantile of sorted data with linear interpolation between
/// order statistics (`x_(⌊h⌋) + (h - ⌊h⌋)(x_(⌊h⌋+1) - x_(⌊h⌋))`,
/// `h = (len - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

/// Critical value and p-value from bootstrap replicates.
///
/// `p = (1 + #{R_b >= T}) / (B + 1)`; the critical value is the order
/// statistic `c` with `T > c` exactly when `p < alpha` (`+inf` if no
/// statistic can reach that level with `B` replicates).
pub fn decide(statistic: f64, replicates: &[f64], alpha: f64) -> (f64, f64, Decision) {
    let b = replicates.len();
    let exceed = replicates.iter().filter(|&&r| r >= statistic).count();
    let p_value = (1 + exceed) as f64 / (b + 1) as f64;
    // largest J with J < alpha (B + 1) - 1
    let bound = alpha * (b + 1) as f64 - 1.0;
    let snapped = if (bound - bound.round()).abs() < 1e-9 {
        bound.round()
    } else {
        bound
    };
    let j = snapped.ceil() as i64 - 1;
    let critical_value = if j < 0 {
        f64::INFINITY
    } else {
        let mut sorted = replicates.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted[(j as usize).min(b - 1)]
    };
    let decision = if statistic > critical_value {
        Decision::Reject
    } else {
        Decision::Retain
    };
    (critical_value, p_value, decision)
}

fn rho_normalizer(d: usize) -> (f64, f64) {
    let two_d = 2f64.powi(d as i32);
    ((d as f64 + 1.0) / (two_d - d as f64 - 1.0), two_d)
}

/// `ρ` from `∫ C du`.
fn rho_from_integral(integral: f64, d: usize) -> f64 {
    let (h, two_d) = rho_normalizer(d);
    h * (two_d * integral - 1.0)
}

/// `∫ C_n du = n^{-1} Σ_i Π_p (1 - Û_ip)`.
pub fn copula_integral(ps: &PseudoSample) -> f64 {
    let n = ps.n();
    (0..n)
        .map(|i| ps.row(i).iter().map(|u| 1.0 - u).product::<f64>())
        .sum::<f64>()
        / n as f64
}

fn weighted_integral(ub: &[f64], w: &WeightVector, d: usize) -> f64 {
    let total = w.sum();
    ub.chunks(d)
        .zip(w.values())
        .map(|(row, m)| m * row.iter().map(|u| 1.0 - u).product::<f64>())
        .sum::<f64>()
        / total
}

fn check_rho_input(ps: &PseudoSample) -> Result<()> {
    if ps.d() < 2 {
        return Err(Error::invalid("Spearman's rho needs d >= 2"));
    }
    if ps.n() < 2 {
        return Err(Error::invalid("Spearman's rho needs n >= 2"));
    }
    Ok(())
}

pub fn spearman_rho_from(ps: &PseudoSample) -> Result<f64> {
    check_rho_input(ps)?;
    Ok(rho_from_integral(copula_integral(ps), ps.d()))
}

/// Multivariate Spearman's rho of the empirical copula.
pub fn spearman_rho(x: &DataMatrix) -> Result<f64> {
    spearman_rho_from(&pseudo_observations(x, TiePolicy::Error)?)
}

/// `ρ_{n,b}`, Spearman's rho of the bootstrap copula for weights `w`.
pub fn bootstrap_rho(ps: &PseudoSample, w: &WeightVector) -> Result<f64> {
    check_rho_input(ps)?;
    let ub = weighted_pseudo_observations(ps, w)?;
    Ok(rho_from_integral(weighted_integral(&ub, w, ps.d()), ps.d()))
}

pub fn spearman_ci_from(
    ps: &PseudoSample,
    scheme: &WeightScheme,
    replicates: usize,
    confidence: f64,
    rng: &RandomStream,
) -> Result<IntervalReport> {
    check_level("confidence", confidence)?;
    if replicates < 100 {
        return Err(Error::invalid("need at least 100 bootstrap replicates"));
    }
    let n = ps.n();
    let block_len = scheme.block_len(n)?;
    let rho = spearman_rho_from(ps)?;
    let sq = (n as f64).sqrt();
    let sample = par_tasks(rng, replicates, |_, s| {
        let w = draw_weights(scheme, n, s)?;
        Ok::<_, Error>(sq * (bootstrap_rho(ps, &w)? - rho))
    })?;
    let mut sorted = sample.clone();
    sorted.sort_by(f64::total_cmp);
    let a = 1.0 - confidence;
    let lower = rho - quantile(&sorted, 1.0 - a / 2.0) / sq;
    let upper = rho - quantile(&sorted, a / 2.0) / sq;
    Ok(IntervalReport {
        estimate: rho,
        lower,
        upper,
        confidence,
        replicates,
        scheme: scheme.clone(),
        block_len,
        seed: rng.seed(),
        bootstrap_sample: sample,
    })
}

/// Basic bootstrap interval `[ρ_n - q_{1-a/2}/√n, ρ_n - q_{a/2}/√n]` from the
/// quantiles `q` of `√n (ρ_{n,b} - ρ_n)`.
pub fn spearman_ci(
    x: &DataMatrix,
    scheme: &WeightScheme,
    replicates: usize,
    confidence: f64,
    rng: &RandomStream,
) -> Result<IntervalReport> {
    spearman_ci_from(&pseudo_observations(x, TiePolicy::Error)?, scheme, replicates, confidence, rng)
}

/// How symmetry-test replicates are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// `√n [(C_{n,b}(u,v) - C_{n,b}(v,u)) - (C_n(u,v) - C_n(v,u))]`.
    #[default]
    Centered,
    /// `√n (C_{n,b}(u,v) - C_{n,b}(v,u))`.
    Uncentered,
}

/// `T_n = sup |√n (C_n(u,v) - C_n(v,u))|` over a swap-closed grid.
pub fn symmetry_statistic(ps: &PseudoSample, grid: &Grid) -> Result<f64> {
    check_symmetry_grid(ps, grid)?;
    let counts = orthant_counts(ps, grid)?;
    let sq = (ps.n() as f64).sqrt();
    let diffs: Vec<f64> = (0..counts.len())
        .map(|k| (counts[k] as i64 - counts[grid.swap_index(k)] as i64) as f64 / sq)
        .collect();
    Ok(sup_abs(&diffs))
}

fn check_symmetry_grid(ps: &PseudoSample, grid: &Grid) -> Result<()> {
    if ps.d() != 2 {
        return Err(Error::invalid("the symmetry test is bivariate"));
    }
    if grid.has_time() || !grid.is_swap_closed() {
        return Err(Error::invalid("symmetry test needs a square grid closed under (u,v) -> (v,u)"));
    }
    Ok(())
}

pub fn symmetry_test(
    x: &DataMatrix,
    scheme: &WeightScheme,
    replicates: usize,
    alpha: f64,
    grid: &Grid,
    rng: &RandomStream,
) -> Result<TestReport> {
    let ps = pseudo_observations(x, TiePolicy::Error)?;
    symmetry_test_from(&ps, scheme, replicates, alpha, grid, Centering::Centered, rng)
}

pub fn symmetry_test_from(
    ps: &PseudoSample,
    scheme: &WeightScheme,
    replicates: usize,
    alpha: f64,
    grid: &Grid,
    centering: Centering,
    rng: &RandomStream,
) -> Result<TestReport> {
    check_level("alpha", alpha)?;
    if replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let statistic = symmetry_statistic(ps, grid)?;
    let n = ps.n();
    let block_len = scheme.block_len(n)?;
    let base = BootstrapBase::new(ps.clone(), grid)?;
    let cn = base.empirical();
    let sq = (n as f64).sqrt();
    let sample = par_tasks(rng, replicates, |_, s| {
        let w = draw_weights(scheme, n, s)?;
        let cb = base.copula(&w)?;
        let diffs: Vec<f64> = (0..cb.len())
            .map(|k| {
                let j = grid.swap_index(k);
                let db = cb[k] - cb[j];
                match centering {
                    Centering::Centered => sq * (db - (cn[k] - cn[j])),
                    Centering::Uncentered => sq * db,
                }
            })
            .collect();
        Ok::<_, Error>(sup_abs(&diffs))
    })?;
    let (critical_value, p_value, decision) = decide(statistic, &sample, alpha);
    Ok(TestReport {
        statistic,
        critical_value,
        p_value,
        replicates,
        decision,
        alpha,
        scheme: scheme.clone(),
        block_len,
        grid: grid.clone(),
        seed: rng.seed(),
        centered: Some(centering == Centering::Centered),
        bootstrap_sample: sample,
    })
}

/// `S_n = sup_{s,u} |ℂ_n^+(s,u)|`.
pub fn constancy_statistic(ps: &PseudoSample, grid: &Grid) -> Result<f64> {
    Ok(sup_abs(sequential_process_plus_from(ps, grid)?.values()))
}

/// Resampled version of `ℂ_n^+` for one weight draw:
/// with `ε_i = M_i - E M_i` and `Z_k(u) = Σ_{i<=k} ε_i (1{Û_i <= u} - C_n(u))`,
/// the replicate is `n^{-1/2} (Z_{⌊sn⌋}(u) - (⌊sn⌋/n) Z_n(u))`.
struct ConstancyBase {
    n: usize,
    grid: Grid,
    cells: Vec<usize>,
    cn: Vec<f64>,
    ks: Vec<usize>,
    mean_weights: Vec<f64>,
}

impl ConstancyBase {
    fn new(ps: &PseudoSample, grid: &Grid, scheme: &WeightScheme) -> Result<Self> {
        let times = grid.require_time()?;
        let space = grid.spatial();
        let n = ps.n();
        let counts = orthant_counts(ps, &space)?;
        Ok(ConstancyBase {
            n,
            cells: cell_indices(ps.values(), ps.d(), &space),
            cn: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            ks: times.iter().map(|&s| floor_sn(s, n)).collect(),
            mean_weights: expected_weights(scheme, n)?,
            grid: space,
        })
    }

    fn replicate(&self, w: &WeightVector) -> f64 {
        let g = self.grid.space_len();
        let sq = (self.n as f64).sqrt();
        let mut hist = vec![0.0; g];
        let mut eps_sum = 0.0;
        let mut added = 0;
        let mut partial: Vec<Vec<f64>> = Vec::with_capacity(self.ks.len());
        for &k in &self.ks {
            while added < k {
                let e = w.values()[added] - self.mean_weights[added];
                hist[self.cells[added]] += e;
                eps_sum += e;
                added += 1;
            }
            let mut z = hist.clone();
            orthant_sums(&mut z, &self.grid);
            for (zu, cu) in z.iter_mut().zip(&self.cn) {
                *zu -= eps_sum * cu;
            }
            partial.push(z);
        }
        // Z_n, whether or not s = 1 is on the time axis
        let mut full = hist;
        let mut total = eps_sum;
        while added < self.n {
            let e = w.values()[added] - self.mean_weights[added];
            full[self.cells[added]] += e;
            total += e;
            added += 1;
        }
        orthant_sums(&mut full, &self.grid);
        for (zu, cu) in full.iter_mut().zip(&self.cn) {
            *zu -= total * cu;
        }
        let mut sup: f64 = 0.0;
        for (z, &k) in partial.iter().zip(&self.ks) {
            let frac = k as f64 / self.n as f64;
            for (a, b) in z.iter().zip(&full) {
                sup = sup.max(((a - frac * b) / sq).abs());
            }
        }
        sup
    }
}

pub fn constancy_test(
    x: &DataMatrix,
    scheme: &WeightScheme,
    replicates: usize,
    alpha: f64,
    grid: &Grid,
    rng: &RandomStream,
) -> Result<TestReport> {
    let ps = pseudo_observations(x, TiePolicy::Error)?;
    constancy_test_from(&ps, scheme, replicates, alpha, grid, rng)
}

pub fn constancy_test_from(
    ps: &PseudoSample,
    scheme: &WeightScheme,
    replicates: usize,
    alpha: f64,
    grid: &Grid,
    rng: &RandomStream,
) -> Result<TestReport> {
    check_level("alpha", alpha)?;
    if replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let statistic = constancy_statistic(ps, grid)?;
    let n = ps.n();
    let block_len = scheme.block_len(n)?;
    let base = ConstancyBase::new(ps, grid, scheme)?;
    let sample = par_tasks(rng, replicates, |_, s| {
        let w = draw_weights(scheme, n, s)?;
        Ok::<_, Error>(base.replicate(&w))
    })?;
    let (critical_value, p_value, decision) = decide(statistic, &sample, alpha);
    Ok(TestReport {
        statistic,
        critical_value,
        p_value,
        replicates,
        decision,
        alpha,
        scheme: scheme.clone(),
        block_len,
        grid: grid.clone(),
        seed: rng.seed(),
        centered: None,
        bootstrap_sample: sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::empirical_copula_from;
    use crate::models::{CopulaModel, SerialGenerator};
    use crate::resample::MultiplierDist;
    use proptest::prelude::*;

    fn ps_of(x: &DataMatrix) -> PseudoSample {
        pseudo_observations(x, TiePolicy::Error).unwrap()
    }

    #[test]
    fn quantile_interpolates() {
        let s = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 8.0);
        assert_eq!(quantile(&s, 0.5), 3.0);
        assert!((quantile(&s, 0.9) - 6.8).abs() < 1e-12);
        assert_eq!(quantile(&[5.0], 0.3), 5.0);
    }

    #[test]
    fn decision_rule_is_consistent() {
        let reps: Vec<f64> = (1..=19).map(f64::from).collect();
        // B = 19, alpha = 0.05: p is never below 1/20
        let (c, p, d) = decide(19.5, &reps, 0.05);
        assert_eq!((c, p, d), (f64::INFINITY, 0.05, Decision::Retain));
        // alpha = 0.1: reject only above every replicate
        let (c, p, d) = decide(19.5, &reps, 0.1);
        assert_eq!((c, p, d), (19.0, 0.05, Decision::Reject));
        let (_, p, d) = decide(19.0, &reps, 0.1);
        assert_eq!((p, d), (0.1, Decision::Retain));
        let (c, _, d) = decide(3.0, &reps, 0.5);
        assert!(c > 3.0 && d == Decision::Retain);
        let (c, _, _) = decide(0.0, &reps[..5], 0.05);
        assert_eq!(c, f64::INFINITY);
    }

    proptest! {
        #[test]
        fn reject_iff_p_below_alpha(
            reps in proptest::collection::vec(0.0f64..5.0, 1..200),
            stat in 0.0f64..6.0,
            alpha in 0.005f64..0.5,
            dup in any::<bool>(),
        ) {
            let stat = if dup { reps[0] } else { stat };
            let (c, p, d) = decide(stat, &reps, alpha);
            prop_assert_eq!(d == Decision::Reject, stat > c);
            prop_assert_eq!(d == Decision::Reject, p < alpha);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn rho_small_example() {
        let x = DataMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert!((spearman_rho(&x).unwrap() + 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn rho_closed_form_matches_grid_quadrature() {
        // C_n is constant on every [(j-1)/n, j/n) box, so the left-endpoint
        // sum over the snapped grid is the exact integral
        for (d, seed) in [(2usize, 1u64), (3, 2)] {
            let n = 17;
            let m = CopulaModel::clayton(1.0, d).unwrap();
            let ps = ps_of(&m.sample(n, &mut RandomStream::new(seed, 0)).unwrap());
            let grid = Grid::snapped(d, n, false).unwrap();
            let c = empirical_copula_from(&ps, &grid).unwrap();
            let mut ix = vec![0; d];
            let mut quad = 0.0;
            for k in 0..grid.space_len() {
                grid.unflatten(k, &mut ix);
                if ix.iter().all(|&i| i < n) {
                    quad += c.values()[k];
                }
            }
            quad /= (n as f64).powi(d as i32);
            assert!((copula_integral(&ps) - quad).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn rho_sampler_identities() {
        let g = CopulaModel::gaussian(0.5).unwrap();
        let x = g.sample(20000, &mut RandomStream::new(3, 0)).unwrap();
        assert!((spearman_rho(&x).unwrap() - g.spearman_rho().unwrap()).abs() < 0.02);
        let i = CopulaModel::independence(2).unwrap();
        let x = i.sample(20000, &mut RandomStream::new(3, 1)).unwrap();
        assert!(spearman_rho(&x).unwrap().abs() < 0.02);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rho_rank_invariant_and_bounded(seed in 0u64..10_000, d in 2usize..5, n in 2usize..40) {
            let m = CopulaModel::clayton(0.8, d).unwrap();
            let x = m.sample(n, &mut RandomStream::new(seed, 0)).unwrap();
            let r = spearman_rho(&x).unwrap();
            let y = x.map_column(0, |v| (3.0 * v).exp()).unwrap().map_column(d - 1, |v| v.powi(3) - 2.0).unwrap();
            prop_assert_eq!(r, spearman_rho(&y).unwrap());
            let two_d = 2f64.powi(d as i32);
            prop_assert!((two_d * copula_integral(&ps_of(&x)) - 1.0).abs() <= two_d - 1.0);
        }

        #[test]
        fn symmetry_statistic_swap_invariant(seed in 0u64..10_000, n in 2usize..60) {
            let m = CopulaModel::khoudraji(CopulaModel::clayton(3.0, 2).unwrap(), 0.4).unwrap();
            let x = m.sample(n, &mut RandomStream::new(seed, 0)).unwrap();
            let swapped = DataMatrix::from_rows(&(0..n).map(|i| vec![x.get(i, 1), x.get(i, 0)]).collect::<Vec<_>>()).unwrap();
            let grid = Grid::uniform(2, 9, false).unwrap();
            prop_assert_eq!(
                symmetry_statistic(&ps_of(&x), &grid).unwrap(),
                symmetry_statistic(&ps_of(&swapped), &grid).unwrap()
            );
        }

        #[test]
        fn constancy_statistic_rank_invariant(seed in 0u64..10_000, n in 1usize..50) {
            let m = CopulaModel::gaussian(0.3).unwrap();
            let x = m.sample(n, &mut RandomStream::new(seed, 0)).unwrap();
            let y = x.map_column(1, |v| v.ln()).unwrap();
            let grid = Grid::uniform(2, 6, true).unwrap();
            prop_assert_eq!(
                constancy_statistic(&ps_of(&x), &grid).unwrap(),
                constancy_statistic(&ps_of(&y), &grid).unwrap()
            );
        }
    }

    #[test]
    fn degenerate_weights_collapse_interval() {
        let x = CopulaModel::gaussian(0.5).unwrap().sample(100, &mut RandomStream::new(1, 0)).unwrap();
        let deg = WeightScheme::Multiplier {
            dist: MultiplierDist::Degenerate,
        };
        let r = spearman_ci(&x, &deg, 100, 0.9, &RandomStream::new(1, 1)).unwrap();
        assert_eq!(r.lower, r.estimate);
        assert_eq!(r.upper, r.estimate);
        assert!(spearman_ci(&x, &deg, 99, 0.9, &RandomStream::new(1, 1)).is_err());
        assert!(spearman_ci(&x, &deg, 100, 1.0, &RandomStream::new(1, 1)).is_err());
    }

    #[test]
    fn interval_contains_estimate() {
        let x = CopulaModel::clayton(2.0, 2).unwrap().sample(300, &mut RandomStream::new(2, 0)).unwrap();
        for scheme in [WeightScheme::Multinomial, WeightScheme::multiplier(), WeightScheme::block(6)] {
            let r = spearman_ci(&x, &scheme, 400, 0.9, &RandomStream::new(2, 1)).unwrap();
            assert!(r.lower <= r.estimate && r.estimate <= r.upper, "{scheme:?}");
            assert!(r.upper - r.lower < 0.3);
        }
    }

    #[test]
    fn exchangeable_data_gives_zero_statistic() {
        let base = CopulaModel::clayton(2.0, 2).unwrap().sample(30, &mut RandomStream::new(5, 0)).unwrap();
        let mut rows = Vec::new();
        for i in 0..30 {
            rows.push(vec![base.get(i, 0), base.get(i, 1)]);
            rows.push(vec![base.get(i, 1), base.get(i, 0)]);
        }
        let x = DataMatrix::from_rows(&rows).unwrap();
        let grid = Grid::uniform(2, 21, false).unwrap();
        let r = symmetry_test(&x, &WeightScheme::Multinomial, 50, 0.05, &grid, &RandomStream::new(5, 1)).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.decision, Decision::Retain);
    }

    #[test]
    fn symmetry_grid_checks() {
        let x = CopulaModel::clayton(2.0, 2).unwrap().sample(20, &mut RandomStream::new(5, 0)).unwrap();
        let rng = RandomStream::new(0, 0);
        let bad = Grid::new(vec![vec![0.0, 0.5, 1.0], vec![0.0, 0.4, 1.0]], None).unwrap();
        assert!(symmetry_test(&x, &WeightScheme::Multinomial, 10, 0.05, &bad, &rng).is_err());
        let timed = Grid::uniform(2, 5, true).unwrap();
        assert!(symmetry_test(&x, &WeightScheme::Multinomial, 10, 0.05, &timed, &rng).is_err());
    }

    #[test]
    fn uncentered_replicates_sit_above_centered_under_asymmetry() {
        let m = CopulaModel::khoudraji(CopulaModel::clayton(4.0, 2).unwrap(), 0.3).unwrap();
        let ps = ps_of(&m.sample(400, &mut RandomStream::new(8, 0)).unwrap());
        let grid = Grid::uniform(2, 21, false).unwrap();
        let rng = RandomStream::new(8, 1);
        let c = symmetry_test_from(&ps, &WeightScheme::Multinomial, 200, 0.05, &grid, Centering::Centered, &rng).unwrap();
        let u = symmetry_test_from(&ps, &WeightScheme::Multinomial, 200, 0.05, &grid, Centering::Uncentered, &rng).unwrap();
        assert_eq!(c.statistic, u.statistic);
        assert!(u.critical_value > c.critical_value);
        assert_eq!(c.decision, Decision::Reject);
    }

    #[test]
    fn constancy_single_observation() {
        let x = DataMatrix::from_rows(&[vec![0.3, 0.2]]).unwrap();
        let grid = Grid::uniform(2, 5, true).unwrap();
        let r = constancy_test(&x, &WeightScheme::Multinomial, 20, 0.05, &grid, &RandomStream::new(0, 0)).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.decision, Decision::Retain);
    }

    #[test]
    fn constancy_replicate_with_expected_weights_is_zero() {
        // ε ≡ 0 when the weights equal their expectation
        let x = CopulaModel::gaussian(0.5).unwrap().sample(64, &mut RandomStream::new(1, 0)).unwrap();
        let grid = Grid::uniform(2, 9, true).unwrap();
        let scheme = WeightScheme::block(8);
        let base = ConstancyBase::new(&ps_of(&x), &grid, &scheme).unwrap();
        let w = WeightVector::new(expected_weights(&scheme, 64).unwrap()).unwrap();
        assert!(base.replicate(&w) < 1e-12);
    }

    #[test]
    fn constancy_replicate_matches_direct_sum() {
        let n = 37;
        let x = CopulaModel::clayton(1.0, 2).unwrap().sample(n, &mut RandomStream::new(2, 0)).unwrap();
        let ps = ps_of(&x);
        let grid = Grid::uniform(2, 7, true).unwrap();
        let scheme = WeightScheme::block(5);
        let base = ConstancyBase::new(&ps, &grid, &scheme).unwrap();
        let w = draw_weights(&scheme, n, &mut RandomStream::new(2, 1)).unwrap();
        let mbar = expected_weights(&scheme, n).unwrap();
        let sp = grid.spatial();
        let cn = |u: &[f64]| (0..n).filter(|&i| (0..2).all(|p| ps.get(i, p) <= u[p])).count() as f64 / n as f64;
        let z = |k: usize, u: &[f64]| -> f64 {
            (0..k)
                .map(|i| {
                    let ind = if (0..2).all(|p| ps.get(i, p) <= u[p]) { 1.0 } else { 0.0 };
                    (w.values()[i] - mbar[i]) * (ind - cn(u))
                })
                .sum()
        };
        let mut sup: f64 = 0.0;
        for &s in grid.time_axis().unwrap() {
            let k = floor_sn(s, n);
            for j in 0..sp.space_len() {
                let u = sp.point(j);
                sup = sup.max(((z(k, &u) - k as f64 / n as f64 * z(n, &u)) / (n as f64).sqrt()).abs());
            }
        }
        assert!((base.replicate(&w) - sup).abs() < 1e-12);
    }

    #[test]
    fn constancy_detects_a_break() {
        let g = SerialGenerator::Regime {
            first: CopulaModel::independence(2).unwrap(),
            second: CopulaModel::gaussian(0.9).unwrap(),
            break_frac: 0.5,
        };
        let x = g.sample(1000, &mut RandomStream::new(4, 0)).unwrap();
        let grid = Grid::uniform(2, 11, true).unwrap();
        let r = constancy_test(&x, &WeightScheme::Multinomial, 200, 0.05, &grid, &RandomStream::new(4, 1)).unwrap();
        assert_eq!(r.decision, Decision::Reject, "{} {} {}", r.statistic, r.critical_value, r.p_value);
        assert!(r.p_value < 0.05);
    }
}

//! Gaussian limit fields on grids and the linear maps that turn them into the
//! limits of the empirical copula processes.
//!
//! `B_C` is the centered Gaussian field with covariance
//! `C(u ∧ v) - C(u) C(v)`, and `B_C^#` the Kiefer–Müller field with
//! covariance `(s ∧ t)(C(u ∧ v) - C(u) C(v))`. Both are drawn from an
//! eigen-factorization of the covariance over the interior grid points; the
//! boundary points carry zero variance and are set to 0 exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::models::CopulaModel;
use crate::rng::RandomStream;

/// Eigenvalues down to this are treated as rounding noise and clipped to 0.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// `B_C` on `[0,1]^d`.
    IidCopula { model: CopulaModel },
    /// `B_C^#` on `[0,1] x [0,1]^d`.
    KieferMueller { model: CopulaModel },
}

impl CovarianceSpec {
    pub fn model(&self) -> &CopulaModel {
        match self {
            CovarianceSpec::IidCopula { model } | CovarianceSpec::KieferMueller { model } => model,
        }
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.dims() != self.model().dim() {
            return Err(Error::invalid(format!(
                "grid has {} dims, model has {}",
                grid.dims(),
                self.model().dim()
            )));
        }
        match (self, grid.has_time()) {
            (CovarianceSpec::IidCopula { .. }, true) => {
                Err(Error::invalid("i.i.d. covariance needs a grid without time axis"))
            }
            (CovarianceSpec::KieferMueller { .. }, false) => {
                Err(Error::invalid("Kiefer-Mueller covariance needs a time axis"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianFieldSample {
    pub field: Field,
    pub spec: CovarianceSpec,
    pub seed: u64,
    pub stream_id: u64,
}

/// Covariance factor of `B_C` on the copula part of a grid, reusable across
/// draws.
#[derive(Debug, Clone)]
pub struct GaussianFieldSampler {
    spec: CovarianceSpec,
    grid: Grid,
    interior: Vec<usize>,
    /// `V diag(√λ)`, rows indexed like `interior`; zero columns dropped.
    factor: DMatrix<f64>,
}

impl GaussianFieldSampler {
    pub fn new(spec: CovarianceSpec, grid: &Grid) -> Result<Self> {
        spec.check_grid(grid)?;
        let space = grid.spatial();
        let c = spec.model();
        let interior: Vec<usize> = (0..space.space_len()).filter(|&k| !space.is_boundary(k)).collect();
        let points: Vec<Vec<f64>> = interior.iter().map(|&k| space.point(k)).collect();
        let cu: Vec<f64> = points.iter().map(|u| c.cdf(u)).collect::<Result<_>>()?;
        let m = interior.len();
        let mut cov = DMatrix::zeros(m, m);
        let mut meet = vec![0.0; space.dims()];
        for a in 0..m {
            for b in 0..=a {
                for (p, v) in meet.iter_mut().enumerate() {
                    *v = points[a][p].min(points[b][p]);
                }
                let g = c.cdf(&meet)? - cu[a] * cu[b];
                cov[(a, b)] = g;
                cov[(b, a)] = g;
            }
        }
        let eig = SymmetricEigen::new(cov);
        if let Some(l) = eig.eigenvalues.iter().find(|&&l| l < -EIGEN_TOLERANCE) {
            return Err(Error::Numerical(format!(
                "covariance matrix has eigenvalue {l:e}"
            )));
        }
        let keep: Vec<usize> = (0..m).filter(|&j| eig.eigenvalues[j] > 0.0).collect();
        let mut factor = DMatrix::zeros(m, keep.len());
        for (col, &j) in keep.iter().enumerate() {
            let s = eig.eigenvalues[j].sqrt();
            for i in 0..m {
                factor[(i, col)] = eig.eigenvectors[(i, j)] * s;
            }
        }
        Ok(GaussianFieldSampler {
            spec,
            grid: grid.clone(),
            interior,
            factor,
        })
    }

    pub fn spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// One draw of `B_C` on the copula part of the grid.
    fn spatial_draw(&self, rng: &mut RandomStream) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.factor.ncols(),
            (0..self.factor.ncols()).map(|_| StandardNormal.sample(rng)),
        );
        let y = &self.factor * z;
        let mut out = vec![0.0; self.grid.space_len()];
        for (&k, v) in self.interior.iter().zip(y.iter()) {
            out[k] = *v;
        }
        out
    }

    pub fn sample(&self, rng: &mut RandomStream) -> Field {
        let values = match self.grid.time_axis() {
            None => self.spatial_draw(rng),
            Some(times) => {
                // Brownian in s: independent B_C increments scaled by √Δs
                let g = self.grid.space_len();
                let mut out = Vec::with_capacity(g * times.len());
                let mut acc = vec![0.0; g];
                out.extend_from_slice(&acc);
                for w in times.windows(2) {
                    let scale = (w[1] - w[0]).sqrt();
                    for (a, z) in acc.iter_mut().zip(self.spatial_draw(rng)) {
                        *a += scale * z;
                    }
                    out.extend_from_slice(&acc);
                }
                out
            }
        };
        Field::new(self.grid.clone(), values).expect("finite gaussian draw")
    }
}

pub fn sample_gaussian_field(
    spec: &CovarianceSpec,
    grid: &Grid,
    rng: &mut RandomStream,
) -> Result<GaussianFieldSample> {
    let (seed, stream_id) = (rng.seed(), rng.stream_id());
    let field = GaussianFieldSampler::new(spec.clone(), grid)?.sample(rng);
    Ok(GaussianFieldSample {
        field,
        spec: spec.clone(),
        seed,
        stream_id,
    })
}

/// `∂_p C` at every point of the copula part of a grid.
#[derive(Debug, Clone)]
pub struct CopulaDerivatives {
    grid: Grid,
    /// point-major: `values[k * d + p] = ∂_p C(u_k)`
    values: Vec<f64>,
}

impl CopulaDerivatives {
    pub fn new(c: &CopulaModel, grid: &Grid) -> Result<Self> {
        let space = grid.spatial();
        if space.dims() != c.dim() {
            return Err(Error::invalid(format!(
                "grid has {} dims, model has {}",
                space.dims(),
                c.dim()
            )));
        }
        let d = c.dim();
        let mut values = Vec::with_capacity(space.space_len() * d);
        for k in 0..space.space_len() {
            let u = space.point(k);
            for p in 0..d {
                values.push(c.partial_derivative(p, &u)?);
            }
        }
        Ok(CopulaDerivatives {
            grid: space,
            values,
        })
    }

    fn check(&self, alpha: &Field) -> Result<()> {
        if alpha.grid().spatial() != self.grid {
            return Err(Error::invalid("field grid differs from the derivative grid"));
        }
        Ok(())
    }

    /// `Σ_p ∂_p C(u) β(u^(p))` for a field without time axis.
    fn correction(&self, beta: &[f64], k: usize) -> f64 {
        let d = self.grid.dims();
        (0..d)
            .map(|p| self.values[k * d + p] * beta[self.grid.marginal_index(k, p)])
            .sum()
    }

    /// `Φ'_C(α)(u) = α(u) - Σ_p ∂_p C(u) α(u^(p))`.
    pub fn apply(&self, alpha: &Field) -> Result<Field> {
        self.check(alpha)?;
        if alpha.grid().has_time() {
            return Err(Error::invalid("use the sequential transform for fields with a time axis"));
        }
        let a = alpha.values();
        let values = (0..a.len()).map(|k| a[k] - self.correction(a, k)).collect();
        Field::new(alpha.grid().clone(), values)
    }

    /// `Γ'(α#)(s,u) = α#(s,u) - s Σ_p ∂_p C(u) α#(1,u^(p))`.
    pub fn apply_sharp(&self, alpha: &Field) -> Result<Field> {
        self.check(alpha)?;
        let times = alpha.grid().require_time()?;
        let g = self.grid.space_len();
        let last = alpha.time_slice(times.len() - 1);
        let corr: Vec<f64> = (0..g).map(|k| self.correction(last.values(), k)).collect();
        Field::from_fn(alpha.grid().clone(), |t, k| alpha.at(t, k) - times[t] * corr[k])
    }
}

pub fn delta_transform(alpha: &Field, c: &CopulaModel) -> Result<Field> {
    CopulaDerivatives::new(c, alpha.grid())?.apply(alpha)
}

/// `Ψ'(α#)(s,u) = α#(s,u) - s α#(1,u)`.
pub fn delta_transform_plus(alpha: &Field) -> Result<Field> {
    let times = alpha.grid().require_time()?;
    let last = times.len() - 1;
    Field::from_fn(alpha.grid().clone(), |t, k| alpha.at(t, k) - times[t] * alpha.at(last, k))
}

pub fn delta_transform_sharp(alpha: &Field, c: &CopulaModel) -> Result<Field> {
    CopulaDerivatives::new(c, alpha.grid())?.apply_sharp(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::copula_process;
    use crate::rng::par_tasks;
    use proptest::prelude::*;
    use rand::RngExt;

    fn indep() -> CopulaModel {
        CopulaModel::independence(2).unwrap()
    }

    fn random_field(grid: &Grid, seed: u64) -> Field {
        let mut s = RandomStream::new(seed, 0);
        Field::from_fn(grid.clone(), |_, _| s.random::<f64>() * 2.0 - 1.0).unwrap()
    }

    fn index_of(grid: &Grid, u: &[f64]) -> usize {
        (0..grid.space_len())
            .find(|&k| grid.point(k) == u)
            .unwrap()
    }

    fn variance(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn boundary_is_exactly_zero() {
        let grid = Grid::uniform(2, 5, false).unwrap();
        let spec = CovarianceSpec::IidCopula {
            model: CopulaModel::clayton(2.0, 2).unwrap(),
        };
        let mut rng = RandomStream::new(1, 0);
        let f = sample_gaussian_field(&spec, &grid, &mut rng).unwrap().field;
        for k in 0..grid.space_len() {
            if grid.is_boundary(k) {
                assert_eq!(f.values()[k], 0.0);
            } else {
                assert_ne!(f.values()[k], 0.0);
            }
        }
        let tgrid = Grid::uniform(2, 5, true).unwrap();
        let spec = CovarianceSpec::KieferMueller {
            model: CopulaModel::gaussian(0.4).unwrap(),
        };
        let f = sample_gaussian_field(&spec, &tgrid, &mut rng).unwrap().field;
        for t in 0..5 {
            for k in 0..tgrid.space_len() {
                if t == 0 || tgrid.is_boundary(k) {
                    assert_eq!(f.at(t, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let spec = CovarianceSpec::IidCopula { model: indep() };
        assert!(GaussianFieldSampler::new(spec.clone(), &Grid::uniform(3, 4, false).unwrap()).is_err());
        assert!(GaussianFieldSampler::new(spec, &Grid::uniform(2, 4, true).unwrap()).is_err());
        let km = CovarianceSpec::KieferMueller { model: indep() };
        assert!(GaussianFieldSampler::new(km, &Grid::uniform(2, 4, false).unwrap()).is_err());
    }

    #[test]
    fn iid_variance_at_center() {
        let grid = Grid::uniform(2, 3, false).unwrap();
        let sampler = GaussianFieldSampler::new(CovarianceSpec::IidCopula { model: indep() }, &grid).unwrap();
        let k = index_of(&grid, &[0.5, 0.5]);
        let draws = par_tasks(&RandomStream::new(2, 0), 5000, |_, s| Ok::<_, Error>(sampler.sample(s).values()[k])).unwrap();
        let v = variance(&draws);
        assert!((v - 0.1875).abs() < 0.015, "{v}");
    }

    #[test]
    fn kiefer_mueller_variance() {
        let grid = Grid::uniform(2, 3, true).unwrap();
        let sampler =
            GaussianFieldSampler::new(CovarianceSpec::KieferMueller { model: indep() }, &grid).unwrap();
        let k = index_of(&grid.spatial(), &[0.5, 0.5]);
        let draws: Vec<(f64, f64)> = par_tasks(&RandomStream::new(3, 0), 5000, |_, s| {
            let f = sampler.sample(s);
            Ok::<_, Error>((f.at(1, k), f.at(2, k)))
        })
        .unwrap();
        let half: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let full: Vec<f64> = draws.iter().map(|d| d.1).collect();
        assert!((variance(&half) - 0.09375).abs() < 0.01);
        assert!((variance(&full) - 0.1875).abs() < 0.015);
        // Cov(B(1/2), B(1)) = (1/2) Γ
        let cov = half.iter().zip(&full).map(|(a, b)| a * b).sum::<f64>() / 5000.0;
        assert!((cov - 0.09375).abs() < 0.01);
    }

    #[test]
    fn covariance_of_whole_field() {
        // sample covariance against the formula at every pair of a 4x4 grid
        let grid = Grid::uniform(2, 4, false).unwrap();
        let model = CopulaModel::gumbel(2.0, 2).unwrap();
        let sampler = GaussianFieldSampler::new(CovarianceSpec::IidCopula { model: model.clone() }, &grid).unwrap();
        let reps = 20000;
        let draws = par_tasks(&RandomStream::new(4, 0), reps, |_, s| Ok::<_, Error>(sampler.sample(s).into_values())).unwrap();
        let g = grid.space_len();
        for a in 0..g {
            for b in 0..g {
                let (u, v) = (grid.point(a), grid.point(b));
                let meet = [u[0].min(v[0]), u[1].min(v[1])];
                let exact = model.cdf(&meet).unwrap() - model.cdf(&u).unwrap() * model.cdf(&v).unwrap();
                let est = draws.iter().map(|x| x[a] * x[b]).sum::<f64>() / reps as f64;
                assert!((est - exact).abs() < 0.01, "{u:?} {v:?}: {est} vs {exact}");
            }
        }
    }

    #[test]
    fn delta_examples() {
        let grid = Grid::uniform(2, 6, false).unwrap();
        let zero = Field::zeros(grid.clone());
        assert_eq!(delta_transform(&zero, &indep()).unwrap(), zero);
        let alpha = random_field(&grid, 5);
        let out = delta_transform(&alpha, &indep()).unwrap();
        let at = |f: &Field, u: [f64; 2]| f.values()[index_of(&grid, &u)];
        let (u, v) = (grid.axis(0)[2], grid.axis(1)[4]);
        let hand = at(&alpha, [u, v]) - v * at(&alpha, [u, 1.0]) - u * at(&alpha, [1.0, v]);
        assert!((at(&out, [u, v]) - hand).abs() < 1e-15);
        // on the face u_1 = 0 every derivative term vanishes
        for k in 0..grid.space_len() {
            if grid.point(k)[0] == 0.0 {
                assert_eq!(out.values()[k], alpha.values()[k]);
            }
        }
        let c = CopulaModel::comonotone(2).unwrap();
        assert!(matches!(delta_transform(&alpha, &c), Err(Error::Unsupported(_))));
    }

    #[test]
    fn delta_at_point_from_non_uniform_axes() {
        let grid = Grid::new(vec![vec![0.0, 0.5, 0.8, 1.0], vec![0.0, 0.3, 0.8, 1.0]], None).unwrap();
        let alpha = random_field(&grid, 9);
        let out = delta_transform(&alpha, &indep()).unwrap();
        let at = |f: &Field, u: [f64; 2]| f.values()[index_of(&grid, &u)];
        let hand = at(&alpha, [0.5, 0.8]) - 0.8 * at(&alpha, [0.5, 1.0]) - 0.5 * at(&alpha, [1.0, 0.8]);
        assert!((at(&out, [0.5, 0.8]) - hand).abs() < 1e-15);
    }

    #[test]
    fn plus_examples() {
        let grid = Grid::uniform(2, 5, true).unwrap();
        let alpha = random_field(&grid, 6);
        let out = delta_transform_plus(&alpha).unwrap();
        for k in 0..grid.space_len() {
            assert_eq!(out.at(4, k), 0.0);
        }
        let g = grid.spatial();
        let base = random_field(&g, 7);
        let flat = Field::from_fn(grid.clone(), |_, k| base.values()[k]).unwrap();
        let out = delta_transform_plus(&flat).unwrap();
        for k in 0..g.space_len() {
            assert!((out.at(1, k) - 0.75 * base.values()[k]).abs() < 1e-15);
        }
        // s = 0 slice of a field vanishing at s = 0
        let km = Field::from_fn(grid.clone(), |t, k| if t == 0 { 0.0 } else { base.values()[k] * t as f64 }).unwrap();
        let out = delta_transform_plus(&km).unwrap();
        assert!((0..g.space_len()).all(|k| out.at(0, k) == 0.0));
        assert!(delta_transform_plus(&base).is_err());
    }

    #[test]
    fn sharp_examples() {
        let grid = Grid::uniform(2, 3, true).unwrap();
        let alpha = random_field(&grid, 8);
        let out = delta_transform_sharp(&alpha, &indep()).unwrap();
        let last = alpha.time_slice(2);
        assert_eq!(out.time_slice(2), delta_transform(&last, &indep()).unwrap());
        // (s,u,v) = (1/2, 1/2, 1/2): α(s,u,v) - s (v α(1,u,1) + u α(1,1,v))
        let sp = grid.spatial();
        let k = index_of(&sp, &[0.5, 0.5]);
        let k1 = index_of(&sp, &[0.5, 1.0]);
        let k2 = index_of(&sp, &[1.0, 0.5]);
        let hand = alpha.at(1, k) - 0.5 * (0.5 * alpha.at(2, k1) + 0.5 * alpha.at(2, k2));
        assert!((out.at(1, k) - hand).abs() < 1e-15);
        let zero = Field::zeros(grid.clone());
        assert_eq!(delta_transform_sharp(&zero, &indep()).unwrap(), zero);
    }

    #[test]
    fn limit_variance_matches_process() {
        let n = 5000;
        let reps = 2000;
        let grid = Grid::uniform(2, 3, false).unwrap();
        let k = index_of(&grid, &[0.5, 0.5]);
        let c = indep();
        let mc = par_tasks(&RandomStream::new(10, 0), reps, |_, s| {
            let x = c.sample(n, s)?;
            Ok::<_, Error>(copula_process(&x, &c, &grid)?.values()[k])
        })
        .unwrap();
        let sampler = GaussianFieldSampler::new(CovarianceSpec::IidCopula { model: c.clone() }, &grid).unwrap();
        let deriv = CopulaDerivatives::new(&c, &grid).unwrap();
        let lim = par_tasks(&RandomStream::new(10, 1), reps, |_, s| {
            Ok::<_, Error>(deriv.apply(&sampler.sample(s))?.values()[k])
        })
        .unwrap();
        let (a, b) = (variance(&mc), variance(&lim));
        assert!((a / b - 1.0).abs() <= 0.2, "{a} vs {b}");
        assert!((b - 0.0625).abs() < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn transforms_are_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let c = CopulaModel::clayton(1.5, 2).unwrap();
            let g = Grid::uniform(2, 6, false).unwrap();
            let (x, y) = (random_field(&g, seed), random_field(&g, seed + 1));
            let lhs = delta_transform(&x.combine(a, &y, b).unwrap(), &c).unwrap();
            let rhs = delta_transform(&x, &c).unwrap().combine(a, &delta_transform(&y, &c).unwrap(), b).unwrap();
            for (l, r) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((l - r).abs() <= 1e-12);
            }
            let tg = Grid::uniform(2, 5, true).unwrap();
            let (x, y) = (random_field(&tg, seed + 2), random_field(&tg, seed + 3));
            let xy = x.combine(a, &y, b).unwrap();
            let pairs = [
                (delta_transform_plus(&xy).unwrap(),
                 delta_transform_plus(&x).unwrap().combine(a, &delta_transform_plus(&y).unwrap(), b).unwrap()),
                (delta_transform_sharp(&xy, &c).unwrap(),
                 delta_transform_sharp(&x, &c).unwrap().combine(a, &delta_transform_sharp(&y, &c).unwrap(), b).unwrap()),
            ];
            for (lhs, rhs) in pairs {
                for (l, r) in lhs.values().iter().zip(rhs.values()) {
                    prop_assert!((l - r).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn sharp_is_plus_plus_s_times_phi(seed in 0u64..10_000, m in 3usize..7) {
            let c = CopulaModel::gaussian(0.6).unwrap();
            let grid = Grid::uniform(2, m, true).unwrap();
            let alpha = random_field(&grid, seed);
            let sharp = delta_transform_sharp(&alpha, &c).unwrap();
            let plus = delta_transform_plus(&alpha).unwrap();
            let phi = delta_transform(&alpha.time_slice(m - 1), &c).unwrap();
            let times = grid.time_axis().unwrap();
            for t in 0..m {
                for k in 0..grid.space_len() {
                    let lhs = sharp.at(t, k) - plus.at(t, k);
                    prop_assert!((lhs - times[t] * phi.values()[k]).abs() <= 1e-12);
                }
            }
        }
    }
}

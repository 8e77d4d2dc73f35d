//! Parametric copulas with closed-form cdfs, analytic partial derivatives and
//! exact samplers, plus serially dependent generators with a known
//! stationary copula.

use rand::distr::Open01;
use rand::RngExt;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::empirical::{floor_sn, DataMatrix};
use crate::error::{Error, Result};
use crate::normal::{bvn_cdf, norm_cdf, norm_quantile};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Independence,
    Comonotone,
    Gaussian { r: f64 },
    Clayton { theta: f64 },
    Gumbel { theta: f64 },
    /// `C(u, v) = u^{1-a} · base(u^a, v)`.
    Khoudraji { base: Box<CopulaModel>, a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct CopulaModel {
    family: Family,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    #[serde(flatten)]
    family: Family,
    #[serde(default = "two")]
    d: usize,
}

fn two() -> usize {
    2
}

impl TryFrom<ModelRepr> for CopulaModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        CopulaModel::new(r.family, r.d)
    }
}

impl From<CopulaModel> for ModelRepr {
    fn from(m: CopulaModel) -> Self {
        ModelRepr {
            family: m.family,
            d: m.dim,
        }
    }
}

impl CopulaModel {
    pub fn new(family: Family, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("copula dimension must be at least 2"));
        }
        match &family {
            Family::Independence | Family::Comonotone => {}
            Family::Gaussian { r } => {
                if !(*r > -1.0 && *r < 1.0) {
                    return Err(Error::invalid(format!("gaussian r must lie in (-1, 1), got {r}")));
                }
                if dim != 2 {
                    return Err(Error::invalid("gaussian copula is bivariate only"));
                }
            }
            Family::Clayton { theta } => {
                if !(*theta > 0.0 && theta.is_finite()) {
                    return Err(Error::invalid(format!("clayton theta must be > 0, got {theta}")));
                }
            }
            Family::Gumbel { theta } => {
                if !(*theta >= 1.0 && theta.is_finite()) {
                    return Err(Error::invalid(format!("gumbel theta must be >= 1, got {theta}")));
                }
            }
            Family::Khoudraji { base, a } => {
                if !(*a > 0.0 && *a < 1.0) {
                    return Err(Error::invalid(format!("khoudraji a must lie in (0, 1), got {a}")));
                }
                if dim != 2 || base.dim != 2 {
                    return Err(Error::invalid("khoudraji construction is bivariate only"));
                }
            }
        }
        Ok(CopulaModel { family, dim })
    }

    pub fn independence(dim: usize) -> Result<Self> {
        CopulaModel::new(Family::Independence, dim)
    }

    pub fn comonotone(dim: usize) -> Result<Self> {
        CopulaModel::new(Family::Comonotone, dim)
    }

    pub fn gaussian(r: f64) -> Result<Self> {
        CopulaModel::new(Family::Gaussian { r }, 2)
    }

    pub fn clayton(theta: f64, dim: usize) -> Result<Self> {
        CopulaModel::new(Family::Clayton { theta }, dim)
    }

    pub fn gumbel(theta: f64, dim: usize) -> Result<Self> {
        CopulaModel::new(Family::Gumbel { theta }, dim)
    }

    pub fn khoudraji(base: CopulaModel, a: f64) -> Result<Self> {
        CopulaModel::new(
            Family::Khoudraji {
                base: Box::new(base),
                a,
            },
            2,
        )
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_point(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has {} coordinates, copula has dimension {}",
                u.len(),
                self.dim
            )));
        }
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("point {u:?} outside the unit cube")));
        }
        Ok(())
    }

    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        self.check_point(u)?;
        Ok(self.cdf_in_cube(u))
    }

    fn cdf_in_cube(&self, u: &[f64]) -> f64 {
        if u.contains(&0.0) {
            return 0.0;
        }
        let c = match &self.family {
            Family::Independence => u.iter().product(),
            Family::Comonotone => u.iter().copied().fold(1.0, f64::min),
            Family::Gaussian { r } => {
                let (x, y) = (u[0], u[1]);
                if x == 1.0 {
                    y
                } else if y == 1.0 {
                    x
                } else {
                    bvn_cdf(norm_quantile(x), norm_quantile(y), *r)
                }
            }
            Family::Clayton { theta } => {
                let s: f64 = u.iter().map(|v| v.powf(-theta)).sum::<f64>() - (self.dim as f64 - 1.0);
                s.powf(-1.0 / theta)
            }
            Family::Gumbel { theta } => {
                let s: f64 = u.iter().map(|v| (-v.ln()).powf(*theta)).sum();
                (-s.powf(1.0 / theta)).exp()
            }
            Family::Khoudraji { base, a } => {
                u[0].powf(1.0 - a) * base.cdf_in_cube(&[u[0].powf(*a), u[1]])
            }
        };
        c.clamp(0.0, 1.0)
    }

    /// `∂_p C(u)` for `u_p ∈ (0, 1)`, and 0 whenever `u_p ∈ {0, 1}`.
    pub fn partial_derivative(&self, p: usize, u: &[f64]) -> Result<f64> {
        self.check_point(u)?;
        if p >= self.dim {
            return Err(Error::invalid(format!("coordinate {p} out of range")));
        }
        if let Family::Comonotone = self.family {
            return Err(Error::Unsupported(
                "the comonotone copula has no continuous partial derivatives".into(),
            ));
        }
        if let Family::Khoudraji { base, .. } = &self.family {
            if let Family::Comonotone = base.family {
                return Err(Error::Unsupported(
                    "khoudraji over a comonotone base has no continuous partial derivatives".into(),
                ));
            }
        }
        Ok(self.partial_in_cube(p, u))
    }

    fn partial_in_cube(&self, p: usize, u: &[f64]) -> f64 {
        let up = u[p];
        if up == 0.0 || up == 1.0 {
            return 0.0;
        }
        if u.iter().enumerate().any(|(q, &v)| q != p && v == 0.0) {
            return 0.0;
        }
        match &self.family {
            Family::Independence => u
                .iter()
                .enumerate()
                .filter(|&(q, _)| q != p)
                .map(|(_, v)| v)
                .product(),
            Family::Comonotone => unreachable!("rejected above"),
            Family::Gaussian { r } => {
                let other = u[1 - p];
                if other == 1.0 {
                    return 1.0;
                }
                let z = norm_quantile(up);
                let w = norm_quantile(other);
                norm_cdf((w - r * z) / (1.0 - r * r).sqrt())
            }
            Family::Clayton { theta } => {
                let s: f64 = u.iter().map(|v| v.powf(-theta)).sum::<f64>() - (self.dim as f64 - 1.0);
                up.powf(-theta - 1.0) * s.powf(-1.0 / theta - 1.0)
            }
            Family::Gumbel { theta } => {
                let t: Vec<f64> = u.iter().map(|v| -v.ln()).collect();
                let s: f64 = t.iter().map(|v| v.powf(*theta)).sum();
                let c = (-s.powf(1.0 / theta)).exp();
                c * s.powf(1.0 / theta - 1.0) * t[p].powf(theta - 1.0) / up
            }
            Family::Khoudraji { base, a } => {
                let (x, y) = (u[0], u[1]);
                let xa = x.powf(*a);
                if p == 0 {
                    (1.0 - a) * x.powf(-a) * base.cdf_in_cube(&[xa, y])
                        + a * base.partial_in_cube(0, &[xa, y])
                } else {
                    x.powf(1.0 - a) * base.partial_in_cube(1, &[xa, y])
                }
            }
        }
    }

    /// Fills `out` with one draw from the copula.
    fn sample_into(&self, rng: &mut RandomStream, out: &mut [f64]) {
        match &self.family {
            Family::Independence => {
                for v in out.iter_mut() {
                    *v = rng.sample(Open01);
                }
            }
            Family::Comonotone => {
                let v: f64 = rng.sample(Open01);
                out.fill(v);
            }
            Family::Gaussian { r } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                out[0] = norm_cdf(z1);
                out[1] = norm_cdf(r * z1 + (1.0 - r * r).sqrt() * z2);
            }
            Family::Clayton { theta } => {
                // Marshall-Olkin with a Gamma(1/θ) frailty
                let frailty = Gamma::new(1.0 / theta, 1.0)
                    .expect("validated shape")
                    .sample(rng);
                for v in out.iter_mut() {
                    let e: f64 = rng.sample(Exp1);
                    *v = (1.0 + e / frailty).powf(-1.0 / theta);
                }
            }
            Family::Gumbel { theta } => {
                let frailty = positive_stable(1.0 / theta, rng);
                for v in out.iter_mut() {
                    let e: f64 = rng.sample(Exp1);
                    *v = (-(e / frailty).powf(1.0 / theta)).exp();
                }
            }
            Family::Khoudraji { base, a } => {
                let mut b = [0.0; 2];
                base.sample_into(rng, &mut b);
                let w: f64 = rng.sample(Open01);
                out[0] = w.powf(1.0 / (1.0 - a)).max(b[0].powf(1.0 / a));
                out[1] = b[1];
            }
        }
    }

    /// `n` i.i.d. draws, one row each.
    pub fn sample(&self, n: usize, rng: &mut RandomStream) -> Result<DataMatrix> {
        if n == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        let mut values = vec![0.0; n * self.dim];
        for row in values.chunks_mut(self.dim) {
            self.sample_into(rng, row);
        }
        DataMatrix::new(n, self.dim, values)
    }

    /// Population Spearman's rho where a closed form is known.
    pub fn spearman_rho(&self) -> Option<f64> {
        match &self.family {
            Family::Independence => Some(0.0),
            Family::Comonotone if self.dim == 2 => Some(1.0),
            Family::Gaussian { r } => Some(6.0 / std::f64::consts::PI * (r / 2.0).asin()),
            _ => None,
        }
    }
}

/// Positive stable variable with Laplace transform `exp(-t^α)`, `α ∈ (0, 1]`
/// (Kanter's representation).
fn positive_stable(alpha: f64, rng: &mut RandomStream) -> f64 {
    if alpha == 1.0 {
        return 1.0;
    }
    let theta = std::f64::consts::PI * rng.sample::<f64, _>(Open01);
    let w: f64 = rng.sample(Exp1);
    let a = (alpha * theta).sin() / theta.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * theta).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// Data generators for time-ordered samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SerialGenerator {
    Iid { model: CopulaModel },
    /// Bivariate `X_t = a X_{t-1} + Z_t` with standard normal innovations of
    /// correlation `r`; the stationary copula is gaussian(r).
    Var1 {
        a: f64,
        r: f64,
        #[serde(default = "default_burn_in")]
        burn_in: usize,
    },
    /// First `⌊s₀ n⌋` rows from `first`, the rest from `second`.
    Regime {
        first: CopulaModel,
        second: CopulaModel,
        break_frac: f64,
    },
}

pub const DEFAULT_BURN_IN: usize = 200;

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl SerialGenerator {
    pub fn var1(a: f64, r: f64) -> Self {
        SerialGenerator::Var1 {
            a,
            r,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SerialGenerator::Iid { .. } => Ok(()),
            SerialGenerator::Var1 { a, r, .. } => {
                if !(a.abs() < 1.0) {
                    return Err(Error::invalid(format!("var1 needs |a| < 1, got {a}")));
                }
                if !(*r > -1.0 && *r < 1.0) {
                    return Err(Error::invalid(format!("var1 needs |r| < 1, got {r}")));
                }
                Ok(())
            }
            SerialGenerator::Regime {
                first,
                second,
                break_frac,
            } => {
                if !(*break_frac > 0.0 && *break_frac < 1.0) {
                    return Err(Error::invalid(format!(
                        "break fraction must lie in (0, 1), got {break_frac}"
                    )));
                }
                if first.dim() != second.dim() {
                    return Err(Error::invalid("regime copulas differ in dimension"));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SerialGenerator::Iid { model } => model.dim(),
            SerialGenerator::Var1 { .. } => 2,
            SerialGenerator::Regime { first, .. } => first.dim(),
        }
    }

    /// Copula of the stationary law, when the generator is stationary.
    pub fn stationary_copula(&self) -> Option<CopulaModel> {
        match self {
            SerialGenerator::Iid { model } => Some(model.clone()),
            SerialGenerator::Var1 { r, .. } => CopulaModel::gaussian(*r).ok(),
            SerialGenerator::Regime { .. } => None,
        }
    }

    /// `n` time-ordered rows. Var1 output is mapped through its stationary
    /// marginal cdf, so every generator produces uniform margins.
    pub fn sample(&self, n: usize, rng: &mut RandomStream) -> Result<DataMatrix> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        match self {
            SerialGenerator::Iid { model } => model.sample(n, rng),
            SerialGenerator::Var1 { a, r, burn_in } => {
                let s = (1.0 - r * r).sqrt();
                let sd = 1.0 / (1.0 - a * a).sqrt();
                let innov = |rng: &mut RandomStream| {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    (z1, r * z1 + s * z2)
                };
                // start in the stationary law
                let (z1, z2) = innov(rng);
                let (mut x1, mut x2) = (sd * z1, sd * z2);
                for _ in 0..*burn_in {
                    let (z1, z2) = innov(rng);
                    x1 = a * x1 + z1;
                    x2 = a * x2 + z2;
                }
                let mut values = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    let (z1, z2) = innov(rng);
                    x1 = a * x1 + z1;
                    x2 = a * x2 + z2;
                    values.push(norm_cdf(x1 / sd));
                    values.push(norm_cdf(x2 / sd));
                }
                DataMatrix::new(n, 2, values)
            }
            SerialGenerator::Regime {
                first,
                second,
                break_frac,
            } => {
                let k = floor_sn(*break_frac, n);
                let d = first.dim();
                let mut values = vec![0.0; n * d];
                for (i, row) in values.chunks_mut(d).enumerate() {
                    if i < k {
                        first.sample_into(rng, row);
                    } else {
                        second.sample_into(rng, row);
                    }
                }
                DataMatrix::new(n, d, values)
            }
        }
    }
}

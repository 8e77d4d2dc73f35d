//! Ranks, generalized inverses, the empirical copula and the empirical copula
//! processes on grids.
//!
//! Everything here is computed from pseudo-observations `Û_ip = R_ip / n`:
//! `C_n(u) = n^{-1} #{i : Û_i <= u}`. Evaluation on a whole grid is done by
//! binning every observation into the grid cell it first becomes dominated by
//! and taking prefix sums along each axis, which costs `O(n + |grid|·d)`.
//! The literal composition `F_n(F_n^-(u))` is kept as
//! [`empirical_copula_composed`]; the two agree exactly on `{0, 1/n, ..., 1}^d`.
//!
//! The sequential processes use the exact partial-sum form
//! `n^{-1/2} Σ_{i <= ⌊sn⌋} (1{Û_i <= u} - c(u))`, so `ℂ_n^+(1, ·)` vanishes
//! identically and `ℂ_n^#(1, ·)` is bit-identical to `ℂ_n`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::models::CopulaModel;

/// `n` time-ordered observations of a `d`-variate series, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("data matrix needs n >= 1 and d >= 1"));
        }
        if values.len() != n * d {
            return Err(Error::invalid(format!(
                "data matrix {n}x{d} needs {} values, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at row {}, column {}",
                k / d,
                k % d
            )));
        }
        Ok(DataMatrix { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows have different lengths"));
        }
        DataMatrix::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, p: usize) -> f64 {
        self.values[i * self.d + p]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn column(&self, p: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, p)).collect()
    }

    /// Rows `start..end` in their original order.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<DataMatrix> {
        if start >= end || end > self.n {
            return Err(Error::invalid(format!("bad row range {start}..{end}")));
        }
        DataMatrix::new(
            end - start,
            self.d,
            self.values[start * self.d..end * self.d].to_vec(),
        )
    }

    /// Applies `f` to every entry of column `p`.
    pub fn map_column(&self, p: usize, f: impl Fn(f64) -> f64) -> Result<DataMatrix> {
        let mut values = self.values.clone();
        for i in 0..self.n {
            values[i * self.d + p] = f(values[i * self.d + p]);
        }
        DataMatrix::new(self.n, self.d, values)
    }

    /// Reads comma separated numeric rows with an optional header line.
    pub fn read_csv<R: Read>(input: R) -> Result<DataMatrix> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut values = Vec::new();
        let mut d = 0;
        let mut n = 0;
        for (k, rec) in reader.records().enumerate() {
            let row = k + 1;
            let rec = rec.map_err(|e| Error::Csv {
                row,
                message: e.to_string(),
            })?;
            if rec.len() == 1 && rec[0].is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(str::parse::<f64>).collect();
            let parsed = match parsed {
                Ok(v) => v,
                Err(_) if k == 0 => continue, // header
                Err(e) => {
                    return Err(Error::Csv {
                        row,
                        message: e.to_string(),
                    })
                }
            };
            if let Some(p) = parsed.iter().position(|v| !v.is_finite()) {
                return Err(Error::Csv {
                    row,
                    message: format!("non-finite value in column {}", p + 1),
                });
            }
            if d == 0 {
                d = parsed.len();
            } else if parsed.len() != d {
                return Err(Error::Csv {
                    row,
                    message: format!("expected {d} columns, found {}", parsed.len()),
                });
            }
            values.extend(parsed);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Csv {
                row: 0,
                message: "no data rows".into(),
            });
        }
        DataMatrix::new(n, d, values)
    }

    /// Headerless CSV with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for i in 0..self.n {
            line.clear();
            for (p, v) in self.row(i).iter().enumerate() {
                if p > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    #[default]
    Error,
    AverageRank,
}

/// Rank-based pseudo-observations, row-major `n x d`, values in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    n: usize,
    d: usize,
    u: Vec<f64>,
    /// For every column, observation indices sorted by value.
    order: Vec<Vec<usize>>,
}

impl PseudoSample {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, p: usize) -> f64 {
        self.u[i * self.d + p]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.u[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    /// Observation indices of column `p` in increasing order of the data.
    pub fn order(&self, p: usize) -> &[usize] {
        &self.order[p]
    }
}

/// Ranks divided by `n`, column by column. With [`TiePolicy::AverageRank`]
/// tied entries share the mean of the rank positions they occupy.
pub fn pseudo_observations(x: &DataMatrix, policy: TiePolicy) -> Result<PseudoSample> {
    let (n, d) = (x.n, x.d);
    let nf = n as f64;
    let mut u = vec![0.0; n * d];
    let mut order = Vec::with_capacity(d);
    for p in 0..d {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| x.get(a, p).total_cmp(&x.get(b, p)).then(a.cmp(&b)));
        let mut start = 0;
        while start < n {
            let v = x.get(idx[start], p);
            let mut end = start + 1;
            while end < n && x.get(idx[end], p) == v {
                end += 1;
            }
            if end - start > 1 && policy == TiePolicy::Error {
                return Err(Error::Ties { column: p });
            }
            // ranks start+1 ..= end share their mean
            let rank = if end - start == 1 {
                (start + 1) as f64
            } else {
                (start + 1 + end) as f64 / 2.0
            };
            for &i in &idx[start..end] {
                u[i * d + p] = rank / nf;
            }
            start = end;
        }
        order.push(idx);
    }
    Ok(PseudoSample { n, d, u, order })
}

/// A right-continuous step distribution function on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCdf {
    jumps: Vec<f64>,
    heights: Vec<f64>,
}

impl StepCdf {
    /// Empirical cdf of `sample`.
    pub fn from_sample(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::invalid("empirical cdf of an empty sample"));
        }
        let mut xs = sample.to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let mut jumps = Vec::new();
        let mut heights = Vec::new();
        for k in 0..n {
            if k + 1 < n && xs[k + 1] == xs[k] {
                continue;
            }
            jumps.push(xs[k]);
            heights.push((k + 1) as f64 / n as f64);
        }
        Ok(StepCdf { jumps, heights })
    }

    /// Weighted empirical cdf; atoms with zero weight are dropped.
    pub fn from_weighted(sample: &[f64], weights: &[f64]) -> Result<Self> {
        if sample.len() != weights.len() {
            return Err(Error::invalid("sample and weights differ in length"));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let mut atoms: Vec<(f64, f64)> = sample
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(x, w)| (*x, *w))
            .collect();
        if atoms.is_empty() {
            return Err(Error::invalid("all weights are zero"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let mut jumps = Vec::new();
        let mut heights = Vec::new();
        let mut acc = 0.0;
        for (k, &(x, w)) in atoms.iter().enumerate() {
            acc += w;
            if k + 1 < atoms.len() && atoms[k + 1].0 == x {
                continue;
            }
            jumps.push(x);
            heights.push(acc / total);
        }
        *heights.last_mut().unwrap() = 1.0;
        Ok(StepCdf { jumps, heights })
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.jumps.partition_point(|&j| j <= x);
        if k == 0 {
            0.0
        } else {
            self.heights[k - 1]
        }
    }

    /// Left-continuous generalized inverse: `inf{x : H(x) >= p}` for
    /// `p ∈ (0, 1]` and `sup{x : H(x) = 0}` for `p = 0`.
    pub fn generalized_inverse(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        if p == 0.0 {
            // H vanishes exactly on (-inf, first jump)
            return Ok(self.jumps[0]);
        }
        let k = self.heights.partition_point(|&h| h < p);
        Ok(self.jumps[k.min(self.jumps.len() - 1)])
    }
}

/// `⌊s·n⌋`, robust to `s` being a rounded fraction such as `3/10`.
pub(crate) fn floor_sn(s: f64, n: usize) -> usize {
    let t = s * n as f64;
    let r = t.round();
    let k = if (t - r).abs() <= 1e-9 * (1.0 + t.abs()) {
        r
    } else {
        t.floor()
    };
    (k.max(0.0) as usize).min(n)
}

/// For every observation, the flat index of the first grid cell whose upper
/// corner dominates it: per axis the smallest `j` with `axis[j] >= value`.
pub(crate) fn cell_indices(values: &[f64], d: usize, grid: &Grid) -> Vec<usize> {
    let n = values.len() / d;
    let strides = grid.strides();
    (0..n)
        .map(|i| {
            (0..d)
                .map(|p| {
                    let v = values[i * d + p];
                    let j = grid.axis(p).partition_point(|&g| g < v);
                    j.min(grid.axis(p).len() - 1) * strides[p]
                })
                .sum()
        })
        .collect()
}

/// In-place prefix sums along every axis, turning cell masses into masses of
/// the lower orthants `{v <= u}`.
pub(crate) fn orthant_sums<T: Copy + std::ops::AddAssign>(values: &mut [T], grid: &Grid) {
    let strides = grid.strides();
    for p in 0..grid.dims() {
        let s = strides[p];
        let m = grid.axis(p).len();
        for idx in 0..values.len() {
            if !(idx / s).is_multiple_of(m) {
                let prev = values[idx - s];
                values[idx] += prev;
            }
        }
    }
}

fn check_spatial(d: usize, grid: &Grid) -> Result<()> {
    if d < 2 {
        return Err(Error::invalid("copula statistics need d >= 2"));
    }
    if grid.dims() != d {
        return Err(Error::invalid(format!(
            "grid has {} dims, data has {d}",
            grid.dims()
        )));
    }
    Ok(())
}

/// `#{i : Û_i <= u}` at every point of the copula part of `grid`.
pub fn orthant_counts(ps: &PseudoSample, grid: &Grid) -> Result<Vec<u64>> {
    check_spatial(ps.d, grid)?;
    let mut counts = vec![0u64; grid.space_len()];
    for c in cell_indices(&ps.u, ps.d, grid) {
        counts[c] += 1;
    }
    orthant_sums(&mut counts, grid);
    Ok(counts)
}

/// Orthant counts of the first `⌊s n⌋` observations for every `s` on the time
/// axis, laid out time-slowest.
fn sequential_counts(ps: &PseudoSample, grid: &Grid) -> Result<(Vec<u64>, Vec<usize>)> {
    check_spatial(ps.d, grid)?;
    let times = grid.require_time()?;
    let g = grid.space_len();
    let cells = cell_indices(&ps.u, ps.d, grid);
    let mut hist = vec![0u64; g];
    let mut out = Vec::with_capacity(g * times.len());
    let mut ks = Vec::with_capacity(times.len());
    let mut added = 0;
    for &s in times {
        let k = floor_sn(s, ps.n);
        while added < k {
            hist[cells[added]] += 1;
            added += 1;
        }
        let mut slice = hist.clone();
        orthant_sums(&mut slice, grid);
        out.extend_from_slice(&slice);
        ks.push(k);
    }
    Ok((out, ks))
}

pub(crate) fn model_on_grid(c: &CopulaModel, grid: &Grid) -> Result<Vec<f64>> {
    if c.dim() != grid.dims() {
        return Err(Error::invalid(format!(
            "model has dimension {}, grid has {}",
            c.dim(),
            grid.dims()
        )));
    }
    (0..grid.space_len()).map(|k| c.cdf(&grid.point(k))).collect()
}

fn require_no_time(grid: &Grid) -> Result<()> {
    if grid.has_time() {
        return Err(Error::invalid("grid must not have a time axis"));
    }
    Ok(())
}

/// `C_n` on `grid` from pseudo-observations.
pub fn empirical_copula_from(ps: &PseudoSample, grid: &Grid) -> Result<Field> {
    require_no_time(grid)?;
    let n = ps.n as f64;
    let counts = orthant_counts(ps, grid)?;
    Field::new(grid.clone(), counts.iter().map(|&c| c as f64 / n).collect())
}

/// `C_n` on `grid` for tie-free data.
pub fn empirical_copula(x: &DataMatrix, grid: &Grid) -> Result<Field> {
    empirical_copula_from(&pseudo_observations(x, TiePolicy::Error)?, grid)
}

/// `F_n(F_{n1}^-(u_1), ..., F_{nd}^-(u_d))` evaluated literally from the raw
/// data, point by point. On the face `u_p = 0` the composite is taken as 0
/// (the joint cdf is read at the left limit of `F_{np}^-(0)`), which keeps
/// `C_n` grounded.
pub fn empirical_copula_composed(x: &DataMatrix, grid: &Grid) -> Result<Field> {
    require_no_time(grid)?;
    check_spatial(x.d, grid)?;
    let margins: Vec<StepCdf> = (0..x.d)
        .map(|p| StepCdf::from_sample(&x.column(p)))
        .collect::<Result<_>>()?;
    let thresholds: Vec<Vec<Option<f64>>> = (0..x.d)
        .map(|p| {
            grid.axis(p)
                .iter()
                .map(|&u| {
                    if u == 0.0 {
                        Ok(None)
                    } else {
                        margins[p].generalized_inverse(u).map(Some)
                    }
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let mut ix = vec![0; x.d];
    let n = x.n as f64;
    let values = (0..grid.space_len())
        .map(|k| {
            grid.unflatten(k, &mut ix);
            let q: Option<Vec<f64>> = ix.iter().enumerate().map(|(p, &j)| thresholds[p][j]).collect();
            let Some(q) = q else { return 0.0 };
            let count = (0..x.n)
                .filter(|&i| x.row(i).iter().zip(&q).all(|(v, t)| v <= t))
                .count();
            count as f64 / n
        })
        .collect();
    Field::new(grid.clone(), values)
}

/// `ℂ_n = √n (C_n - C)` computed as `(#{Û_i <= u} - n C(u)) / √n`.
pub fn copula_process_from(ps: &PseudoSample, c_true: &CopulaModel, grid: &Grid) -> Result<Field> {
    require_no_time(grid)?;
    let counts = orthant_counts(ps, grid)?;
    let c = model_on_grid(c_true, grid)?;
    let n = ps.n as f64;
    let sq = n.sqrt();
    Field::new(
        grid.clone(),
        counts
            .iter()
            .zip(&c)
            .map(|(&k, &cu)| (k as f64 - n * cu) / sq)
            .collect(),
    )
}

pub fn copula_process(x: &DataMatrix, c_true: &CopulaModel, grid: &Grid) -> Result<Field> {
    copula_process_from(&pseudo_observations(x, TiePolicy::Error)?, c_true, grid)
}

/// `ℂ_n^#(s, u) = n^{-1/2} Σ_{i <= ⌊sn⌋} (1{Û_i <= u} - C(u))`.
pub fn sequential_process_sharp_from(
    ps: &PseudoSample,
    c_true: &CopulaModel,
    grid: &Grid,
) -> Result<Field> {
    let (counts, ks) = sequential_counts(ps, grid)?;
    let c = model_on_grid(c_true, &grid.spatial())?;
    let g = grid.space_len();
    let sq = (ps.n as f64).sqrt();
    let values = counts
        .iter()
        .enumerate()
        .map(|(idx, &cnt)| (cnt as f64 - ks[idx / g] as f64 * c[idx % g]) / sq)
        .collect();
    Field::new(grid.clone(), values)
}

pub fn sequential_process_sharp(x: &DataMatrix, c_true: &CopulaModel, grid: &Grid) -> Result<Field> {
    sequential_process_sharp_from(&pseudo_observations(x, TiePolicy::Error)?, c_true, grid)
}

/// `ℂ_n^+(s, u) = n^{-1/2} Σ_{i <= ⌊sn⌋} (1{Û_i <= u} - C_n(u))`.
///
/// Evaluated as `(n·count_k - k·count_n) / (n √n)` in integer arithmetic, so
/// the `s = 0` and `s = 1` slices are exactly zero.
pub fn sequential_process_plus_from(ps: &PseudoSample, grid: &Grid) -> Result<Field> {
    let (counts, ks) = sequential_counts(ps, grid)?;
    let g = grid.space_len();
    let n = ps.n as i128;
    let full = orthant_counts(ps, &grid.spatial())?;
    let denom = ps.n as f64 * (ps.n as f64).sqrt();
    let values = counts
        .iter()
        .enumerate()
        .map(|(idx, &cnt)| {
            let k = ks[idx / g] as i128;
            let num = n * cnt as i128 - k * full[idx % g] as i128;
            num as f64 / denom
        })
        .collect();
    Field::new(grid.clone(), values)
}

pub fn sequential_process_plus(x: &DataMatrix, grid: &Grid) -> Result<Field> {
    sequential_process_plus_from(&pseudo_observations(x, TiePolicy::Error)?, grid)
}

//! Wasserstein estimators, replica aggregation and log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::phase_space::{phase_gap, PhasePoint, RandomStream};

/// Largest cloud accepted by [`w2_assignment`].
pub const ASSIGNMENT_CAP: usize = 2048;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean of matched costs, summed in sorted order so the result does not
/// depend on how the pairs were enumerated.
pub fn matching_mean(costs: &mut [f64]) -> f64 {
    costs.sort_by(f64::total_cmp);
    compensated_sum(costs) / costs.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub w2: f64,
    pub w2_squared: f64,
}

impl W2Estimate {
    fn from_squared(w2_squared: f64) -> Self {
        Self { w2: w2_squared.sqrt(), w2_squared }
    }
}

/// Optimal assignment for a dense `n × n` cost matrix (row-major).
/// Returns `col[i]`, the column matched to row `i`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    // 1-based potentials and matching; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[p[j] - 1] = j - 1;
    }
    col
}

/// Exact W2 between two equal-weight phase-space clouds under the
/// torus × Euclidean ground cost.
pub fn w2_assignment(a: &[PhasePoint], b: &[PhasePoint]) -> Result<W2Estimate> {
    if a.len() != b.len() {
        return Err(domain(format!("cloud sizes differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(domain("empty clouds"));
    }
    if a.len() > ASSIGNMENT_CAP {
        return Err(domain(format!(
            "{} points exceed the assignment cap {ASSIGNMENT_CAP}; use sliced_w2",
            a.len()
        )));
    }
    let dim = a[0].v.dim();
    if a.iter().chain(b).any(|p| p.x.dim() != dim || p.v.dim() != dim) {
        return Err(domain("mixed dimensions in clouds"));
    }
    let n = a.len();
    let mut cost = Vec::with_capacity(n * n);
    for p in a {
        for q in b {
            cost.push(phase_gap(p, q));
        }
    }
    let col = solve_assignment(&cost, n);
    let mut matched: Vec<f64> = col.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    Ok(W2Estimate::from_squared(matching_mean(&mut matched)))
}

/// Sliced W2 between flat point clouds of dimension `dim` (row-major).
pub fn sliced_w2_flat(
    a: &[f64],
    b: &[f64],
    dim: usize,
    n_projections: usize,
    rng: &mut RandomStream,
) -> Result<W2Estimate> {
    if dim == 0 || !a.len().is_multiple_of(dim) || a.len() != b.len() || a.is_empty() {
        return Err(domain("clouds must be nonempty, equal-sized and of the given dimension"));
    }
    if n_projections == 0 {
        return Err(domain("need at least one projection"));
    }
    let m = a.len() / dim;
    let mut per_dir = Vec::with_capacity(n_projections);
    let mut pa = vec![0.0; m];
    let mut pb = vec![0.0; m];
    for _ in 0..n_projections {
        let theta = loop {
            let t: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
            let norm = t.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break t.into_iter().map(|c| c / norm).collect::<Vec<_>>();
            }
        };
        let project = |cloud: &[f64], out: &mut [f64]| {
            for (k, row) in cloud.chunks(dim).enumerate() {
                out[k] = row.iter().zip(&theta).map(|(x, t)| x * t).sum();
            }
            out.sort_by(f64::total_cmp);
        };
        project(a, &mut pa);
        project(b, &mut pb);
        let mut gaps: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).collect();
        per_dir.push(matching_mean(&mut gaps));
    }
    Ok(W2Estimate::from_squared(compensated_sum(&per_dir) / n_projections as f64))
}

/// Sliced W2 proxy for phase-space clouds; positions are embedded by their
/// coordinates in `[-1/2, 1/2)^d`.
pub fn sliced_w2(
    a: &[PhasePoint],
    b: &[PhasePoint],
    n_projections: usize,
    rng: &mut RandomStream,
) -> Result<W2Estimate> {
    if a.len() != b.len() || a.is_empty() {
        return Err(domain("clouds must be nonempty and of equal size"));
    }
    let dim = a[0].v.dim();
    let flat = |c: &[PhasePoint]| -> Vec<f64> {
        c.iter().flat_map(|p| p.x.coords().iter().chain(p.v.as_slice()).copied()).collect()
    };
    sliced_w2_flat(&flat(a), &flat(b), 2 * dim, n_projections, rng)
}

/// I_N observations of one replica.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InAggregate {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Per-time replica mean and standard error.
pub fn i_n_aggregate(replicas: &[InSeries]) -> Result<InAggregate> {
    if replicas.len() < 2 {
        return Err(domain("need at least two replicas"));
    }
    let times = &replicas[0].times;
    for r in replicas {
        if &r.times != times || r.values.len() != times.len() {
            return Err(domain("replicas observed on different time grids"));
        }
    }
    let r = replicas.len() as f64;
    let mut mean = Vec::with_capacity(times.len());
    let mut std_err = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let col: Vec<f64> = replicas.iter().map(|s| s.values[k]).collect();
        let m = compensated_sum(&col) / r;
        let dev: Vec<f64> = col.iter().map(|x| (x - m).powi(2)).collect();
        let var = compensated_sum(&dev) / (r - 1.0);
        mean.push(m);
        std_err.push((var / r).sqrt());
    }
    Ok(InAggregate { times: times.clone(), mean, std_err })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// Least squares on `(ln x, ln y)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(domain(format!("slope fit needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(domain("log-log fit needs finite positive coordinates"));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    if xs.windows(2).any(|w| w[0] == w[1]) {
        return Err(domain("abscissas must be distinct"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r_squared, points: points.to_vec() })
}

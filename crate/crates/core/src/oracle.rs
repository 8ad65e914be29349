//! Slow reference implementations used to cross-check the fast paths.
//!
//! The transport oracle solves the assignment problem between multisets
//! replicated to a common size, which is an exact optimal transport between
//! the uniform empirical measures. The Krum oracle enumerates every neighbor
//! subset instead of sorting distances.

use rand::Rng;

use crate::aggregation::{fed_average, Krum};
use crate::commitment::wasserstein_1d;
use crate::model::{ModelArch, ParameterVector};
use crate::seed;
use crate::Result;

/// Minimum-cost perfect matching on a square cost matrix (row-major).
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // Shortest augmenting paths with potentials, 1-based with a virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + (col - 1)] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        if owner[col] != 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Exact W1 between two uniform empirical measures by optimal assignment
/// between `a` repeated `|b|` times and `b` repeated `|a|` times.
pub fn transport_w1(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let size = n * m;
    let left: Vec<f64> = a.iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect();
    let right: Vec<f64> = b.iter().flat_map(|&y| std::iter::repeat_n(y, n)).collect();
    let cost: Vec<f64> = left.iter().flat_map(|&x| right.iter().map(move |&y| (x - y).abs())).collect();
    let assignment = hungarian(&cost, size);
    assignment.iter().enumerate().map(|(i, &j)| cost[i * size + j]).sum::<f64>() / size as f64
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn combinations(items: &[usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    fn go(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            visit(cur);
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            go(items, k, i + 1, cur, visit);
            cur.pop();
        }
    }
    go(items, k, 0, &mut Vec::with_capacity(k), visit);
}

/// Krum scores by minimizing the distance sum over every neighbor subset of
/// size `n - f - 1`.
pub fn brute_krum_scores(points: &[Vec<f64>], f: usize) -> Vec<f64> {
    let n = points.len();
    let k = n - f - 1;
    (0..n)
        .map(|i| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut best = f64::INFINITY;
            combinations(&others, k, &mut |subset| {
                let s: f64 = subset.iter().map(|&j| euclid(&points[i], &points[j])).sum();
                best = best.min(s);
            });
            best
        })
        .collect()
}

fn brute_order(points: &[Vec<f64>], f: usize) -> Vec<usize> {
    let scores = brute_krum_scores(points, f);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    order
}

pub fn brute_krum(points: &[Vec<f64>], f: usize) -> usize {
    brute_order(points, f)[0]
}

/// Selected indices in ascending index order.
pub fn brute_multi_krum(points: &[Vec<f64>], f: usize) -> Vec<usize> {
    let mut chosen = brute_order(points, f);
    chosen.truncate(points.len() - f - 1);
    chosen.sort_unstable();
    chosen
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub cases: usize,
    pub failures: usize,
    /// Largest absolute disagreement (zero for index comparisons).
    pub max_error: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compare [`wasserstein_1d`] with [`transport_w1`] on random multisets of
/// size 1..=6, drawn from a small grid so repeated values occur.
pub fn wasserstein_suite(cases: usize, tolerance: f64, seed: u64) -> Result<SuiteReport> {
    let mut rng = seed::rng(seed);
    let mut report = SuiteReport { cases, ..Default::default() };
    for _ in 0..cases {
        let draw = |rng: &mut seed::Rng| -> Vec<f64> {
            let len = rng.random_range(1..=6);
            (0..len)
                .map(|_| if rng.random_bool(0.3) { f64::from(rng.random_range(-3i32..=3)) } else { rng.random_range(-5.0..5.0) })
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let err = (wasserstein_1d(&a, &b)? - transport_w1(&a, &b)).abs();
        report.max_error = report.max_error.max(err);
        if err > tolerance {
            report.failures += 1;
        }
    }
    Ok(report)
}

/// Compare Krum and Multi-Krum selections with the enumeration oracle on
/// random instances of 4 to 8 workers.
pub fn krum_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = seed::rng(seed);
    let arch = ModelArch::lr(2, 2);
    let p = arch.parameter_count();
    let mut report = SuiteReport { cases, ..Default::default() };
    for _ in 0..cases {
        let n = rng.random_range(4..=8);
        let f = rng.random_range(0..=n - 2);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..100)).collect();
        let updates: Vec<ParameterVector> =
            points.iter().map(|v| ParameterVector::new(arch, v.clone())).collect::<Result<_>>()?;

        let rule = Krum::new(f);
        let mut fast_many = rule.select_many(&updates)?;
        fast_many.sort_unstable();
        let slow_many = brute_multi_krum(&points, f);
        let index_ok = rule.select(&updates)? == brute_krum(&points, f) && fast_many == slow_many;

        let picked: Vec<ParameterVector> = slow_many.iter().map(|&i| updates[i].clone()).collect();
        let picked_sizes: Vec<usize> = slow_many.iter().map(|&i| sizes[i]).collect();
        let expected = fed_average(&picked, &picked_sizes)?;
        let model_err = rule.aggregate_many(&updates, &sizes)?.distance(&expected);
        report.max_error = report.max_error.max(model_err);
        if !index_ok || model_err > 1e-9 {
            report.failures += 1;
        }
    }
    Ok(report)
}

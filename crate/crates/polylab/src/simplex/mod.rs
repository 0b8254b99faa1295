//! Monte Carlo verification of the constrained-simplex minimization lemmas:
//! objectives `E[ln sum_i lambda_i X_i]` over sample banks with common
//! random numbers, the two constraint families (atom-mass and capped),
//! closed-form minimizers, projected-descent search, and the
//! power-family convergence table.

use crate::env::{counter_uniform, EnvSpec, STREAM_BANK, STREAM_RESTART};
use crate::lattice::Site;
use crate::numeric::{mean_stderr, Kahan};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),
    #[error("invalid simplex point: {0}")]
    BadPoint(String),
    #[error("projection failure: {0}")]
    ProjectionFailure(String),
    #[error("non-finite sample encountered: {0}")]
    NonFiniteSample(f64),
    #[error("invalid input: {0}")]
    BadInput(String),
}

/// A point of the probability simplex: nonnegative weights summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimplexPoint {
    lambda: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(lambda: Vec<f64>) -> Result<Self, SimplexError> {
        if lambda.is_empty() {
            return Err(SimplexError::BadPoint("empty weight vector".into()));
        }
        if let Some(&bad) = lambda.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(SimplexError::BadPoint(format!("negative or non-finite weight {bad}")));
        }
        let mut sum = Kahan::new();
        for &v in &lambda {
            sum.add(v);
        }
        let defect = (sum.value() - 1.0).abs();
        if defect > 1e-12 {
            return Err(SimplexError::BadPoint(format!("weights sum to 1 within 1e-12, defect {defect:e}")));
        }
        Ok(SimplexPoint { lambda })
    }

    pub fn weights(&self) -> &[f64] {
        &self.lambda
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// L1 distance after sorting both weight vectors (distance between the
    /// permutation orbits; the objective is symmetric).
    pub fn l1_sorted_distance(&self, other: &SimplexPoint) -> f64 {
        let mut a = self.lambda.clone();
        let mut b = other.lambda.clone();
        a.sort_by(|x, y| y.partial_cmp(x).unwrap());
        b.sort_by(|x, y| y.partial_cmp(x).unwrap());
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>()
            + a.len().abs_diff(b.len()) as f64
    }
}

/// The two constraint families on the simplex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ConstraintKind {
    /// Mass on weights strictly above `eps` is at most `delta`.
    AtomMass { eps: f64, delta: f64 },
    /// Every weight is at most `eps` (=1/k).
    Cap { eps: f64 },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConstraintSet {
    pub kind: ConstraintKind,
    pub n: usize,
}

impl ConstraintSet {
    pub fn atom_mass(eps: f64, delta: f64, n: usize) -> Result<Self, SimplexError> {
        if !(delta > 0.5 && delta < 1.0) {
            return Err(SimplexError::InfeasibleConstraint(format!(
                "delta must lie in (1/2, 1), got {delta}"
            )));
        }
        if !(eps > 0.0 && eps < 1.0 - delta) {
            return Err(SimplexError::InfeasibleConstraint(format!(
                "eps must lie in (0, 1-delta) = (0, {}), got {eps}",
                1.0 - delta
            )));
        }
        let ratio = (1.0 - delta) / eps;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(SimplexError::InfeasibleConstraint(format!(
                "(1-delta)/eps must be a positive integer, got {ratio}"
            )));
        }
        let k = ratio.round() as usize;
        if n < k + 1 {
            return Err(SimplexError::InfeasibleConstraint(format!(
                "need n >= (1-delta)/eps + 1 = {}, got {n}",
                k + 1
            )));
        }
        Ok(ConstraintSet { kind: ConstraintKind::AtomMass { eps, delta }, n })
    }

    pub fn cap(eps: f64, n: usize) -> Result<Self, SimplexError> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(SimplexError::InfeasibleConstraint(format!("cap eps must lie in (0, 1], got {eps}")));
        }
        let k = 1.0 / eps;
        if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
            return Err(SimplexError::InfeasibleConstraint(format!(
                "cap eps must equal 1/k for a positive integer k, got {eps}"
            )));
        }
        let k = k.round() as usize;
        if n < k {
            return Err(SimplexError::InfeasibleConstraint(format!("need n >= 1/eps = {k}, got {n}")));
        }
        Ok(ConstraintSet { kind: ConstraintKind::Cap { eps }, n })
    }

    /// Number of `eps` entries in the closed-form minimizer.
    fn block_len(&self) -> usize {
        match self.kind {
            ConstraintKind::AtomMass { eps, delta } => ((1.0 - delta) / eps).round() as usize,
            ConstraintKind::Cap { eps } => (1.0 / eps).round() as usize,
        }
    }

    pub fn is_feasible(&self, point: &SimplexPoint) -> bool {
        if point.dim() != self.n {
            return false;
        }
        match self.kind {
            ConstraintKind::AtomMass { eps, delta } => {
                let mass: f64 = point.lambda.iter().filter(|&&v| v > eps).sum();
                mass <= delta + 1e-9
            }
            ConstraintKind::Cap { eps } => point.lambda.iter().all(|&v| v <= eps + 1e-12),
        }
    }
}

/// The structured minimizer of the objective over the constraint set:
/// `(delta, eps, ..., eps, 0, ..., 0)` for the atom-mass family and
/// `(eps, ..., eps, 0, ..., 0)` for the cap family.
pub fn closed_form_minimizer(cs: &ConstraintSet) -> SimplexPoint {
    let k = cs.block_len();
    let mut v = vec![0.0; cs.n];
    match cs.kind {
        ConstraintKind::AtomMass { eps, delta } => {
            v[0] = delta;
            for w in v.iter_mut().skip(1).take(k) {
                *w = eps;
            }
        }
        ConstraintKind::Cap { eps } => {
            for w in v.iter_mut().take(k) {
                *w = eps;
            }
        }
    }
    SimplexPoint::new(v).expect("closed form is on the simplex by construction")
}

// ---------------------------------------------------------------------------
// Sample banks
// ---------------------------------------------------------------------------

/// A bank of `m x width` draws of `ln X` shared by all objective
/// evaluations of one experiment (common random numbers). Small banks are
/// materialized; wide banks regenerate rows from the counter stream, which
/// yields the identical draws without the storage.
#[derive(Clone, Debug)]
pub struct SampleBank {
    pub m: u32,
    pub width: u32,
    storage: Storage,
}

#[derive(Clone, Debug)]
enum Storage {
    Dense(std::sync::Arc<Vec<f64>>),
    Lazy { spec: EnvSpec, seed: u64 },
    Constant(f64),
}

impl SampleBank {
    /// Materialized bank of `ln X = eta` draws from the spec's law.
    pub fn generate(spec: EnvSpec, m: u32, width: u32, seed: u64) -> Self {
        let mut v = Vec::with_capacity(m as usize * width as usize);
        for r in 0..m {
            for i in 0..width {
                v.push(spec.quantile(counter_uniform(seed, 0, STREAM_BANK, r, i, Site::ORIGIN)));
            }
        }
        SampleBank { m, width, storage: Storage::Dense(std::sync::Arc::new(v)) }
    }

    /// Row-regenerating bank for widths too large to store.
    pub fn lazy(spec: EnvSpec, m: u32, width: u32, seed: u64) -> Self {
        SampleBank { m, width, storage: Storage::Lazy { spec, seed } }
    }

    /// Degenerate bank `X = c` (no randomness).
    pub fn constant(c: f64, m: u32, width: u32) -> Self {
        assert!(c > 0.0);
        SampleBank { m, width, storage: Storage::Constant(c.ln()) }
    }

    /// Write row `r` of `ln X` into `buf` (length `width`).
    pub fn fill_row(&self, r: u32, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.width as usize);
        match &self.storage {
            Storage::Dense(v) => {
                let off = r as usize * self.width as usize;
                buf.copy_from_slice(&v[off..off + self.width as usize]);
            }
            Storage::Lazy { spec, seed } => {
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot =
                        spec.quantile(counter_uniform(*seed, 0, STREAM_BANK, r, i as u32, Site::ORIGIN));
                }
            }
            Storage::Constant(ln_c) => buf.fill(*ln_c),
        }
    }

    /// Bank with columns permuted by `perm` (used by the symmetry checks).
    pub fn permuted(&self, perm: &[usize]) -> SampleBank {
        assert_eq!(perm.len(), self.width as usize);
        let mut v = Vec::with_capacity(self.m as usize * self.width as usize);
        let mut row = vec![0.0; self.width as usize];
        for r in 0..self.m {
            self.fill_row(r, &mut row);
            for &p in perm {
                v.push(row[p]);
            }
        }
        SampleBank { m: self.m, width: self.width, storage: Storage::Dense(std::sync::Arc::new(v)) }
    }
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

/// Per-row values `ln sum_i lambda_i X_i^power`, evaluated stably (largest
/// exponent factored out, zero weights skipped).
fn objective_rows(point: &SimplexPoint, bank: &SampleBank, power: f64) -> Result<Vec<f64>, SimplexError> {
    if point.dim() > bank.width as usize {
        return Err(SimplexError::BadInput(format!(
            "point dimension {} exceeds bank width {}",
            point.dim(),
            bank.width
        )));
    }
    let active: Vec<(usize, f64)> = point
        .lambda
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (i, v.ln()))
        .collect();
    let rows: Vec<f64> = (0..bank.m)
        .into_par_iter()
        .map_init(
            || vec![0.0; bank.width as usize],
            |row, r| {
                bank.fill_row(r, row);
                let mut mx = f64::NEG_INFINITY;
                for &(i, ln_l) in &active {
                    let e = ln_l + power * row[i];
                    if e > mx {
                        mx = e;
                    }
                }
                let mut s = Kahan::new();
                for &(i, ln_l) in &active {
                    s.add((ln_l + power * row[i] - mx).exp());
                }
                mx + s.value().ln()
            },
        )
        .collect();
    if let Some(&bad) = rows.iter().find(|v| !v.is_finite()) {
        return Err(SimplexError::NonFiniteSample(bad));
    }
    Ok(rows)
}

/// Monte Carlo estimate of `E[ln sum_i lambda_i X_i]` over the bank.
pub fn mc_objective(point: &SimplexPoint, bank: &SampleBank) -> Result<(f64, f64), SimplexError> {
    mc_objective_pow(point, bank, 1.0)
}

/// Same with `X_i` replaced by `X_i^power`.
pub fn mc_objective_pow(
    point: &SimplexPoint,
    bank: &SampleBank,
    power: f64,
) -> Result<(f64, f64), SimplexError> {
    let rows = objective_rows(point, bank, power)?;
    Ok(mean_stderr(&rows))
}

/// Paired comparison on a shared bank: mean and standard error of the
/// per-row difference `objective(a) - objective(b)`. The pairing removes
/// the common sampling noise.
pub fn paired_objective_diff(
    a: &SimplexPoint,
    b: &SimplexPoint,
    bank: &SampleBank,
    power: f64,
) -> Result<(f64, f64), SimplexError> {
    let ra = objective_rows(a, bank, power)?;
    let rb = objective_rows(b, bank, power)?;
    let diffs: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| x - y).collect();
    Ok(mean_stderr(&diffs))
}

/// Gradient of the empirical objective at `point`:
/// `g_i = mean_rows X_i^power / sum_k lambda_k X_k^power`.
fn gradient(point: &SimplexPoint, bank: &SampleBank, power: f64) -> Vec<f64> {
    let n = point.dim();
    let active: Vec<(usize, f64)> = point
        .lambda
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (i, v.ln()))
        .collect();
    let partials: Vec<Vec<f64>> = (0..bank.m)
        .into_par_iter()
        .fold(
            || (vec![0.0; n], vec![0.0; bank.width as usize]),
            |(mut acc, mut row), r| {
                bank.fill_row(r, &mut row);
                let mut mx = f64::NEG_INFINITY;
                for &(i, ln_l) in &active {
                    let e = ln_l + power * row[i];
                    if e > mx {
                        mx = e;
                    }
                }
                let mut s = 0.0;
                for &(i, ln_l) in &active {
                    s += (ln_l + power * row[i] - mx).exp();
                }
                let denom = mx + s.ln();
                for i in 0..n {
                    acc[i] += (power * row[i] - denom).exp();
                }
                (acc, row)
            },
        )
        .map(|(acc, _)| acc)
        .collect();
    let mut g = vec![0.0; n];
    for part in partials {
        for (gi, pi) in g.iter_mut().zip(&part) {
            *gi += pi;
        }
    }
    for gi in g.iter_mut() {
        *gi /= bank.m as f64;
    }
    g
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// Euclidean projection onto the simplex (sort-based).
fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Euclidean projection onto the capped simplex `{0 <= x <= cap, sum = 1}`
/// by bisection on the water level (the constraint set is convex, so this
/// is the exact projection up to the bisection tolerance).
fn project_capped_simplex(y: &[f64], cap: f64) -> Result<Vec<f64>, SimplexError> {
    let n = y.len();
    if cap * (n as f64) < 1.0 - 1e-12 {
        return Err(SimplexError::ProjectionFailure(format!(
            "capped simplex empty: n * cap = {} < 1",
            cap * n as f64
        )));
    }
    let hi0 = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (hi0 - 1.0 - cap, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = y.iter().map(|&v| (v - mid).clamp(0.0, cap)).sum();
        if s > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let mut x: Vec<f64> = y.iter().map(|&v| (v - theta).clamp(0.0, cap)).collect();
    // repair the bisection residue on the first interior coordinate
    let sum: f64 = x.iter().sum();
    let resid = 1.0 - sum;
    if let Some(slot) = x.iter_mut().find(|v| **v + resid >= 0.0 && **v + resid <= cap) {
        *slot += resid;
    }
    Ok(x)
}

/// Heuristic projection onto the (non-convex) atom-mass constraint set:
/// project onto the simplex, then demote members of the over-`eps` block to
/// `eps`, pouring the excess into coordinates below `eps` (largest first),
/// until the block mass is at most `delta`. Reported as a failure when no
/// capacity remains; never silently clipped.
fn project_atom_mass(y: &[f64], eps: f64, delta: f64) -> Result<Vec<f64>, SimplexError> {
    let mut x = project_simplex(y);
    for _round in 0..x.len() + 2 {
        let block: Vec<usize> =
            (0..x.len()).filter(|&i| x[i] > eps).collect();
        let block_mass: f64 = block.iter().map(|&i| x[i]).sum();
        if block_mass <= delta + 1e-12 {
            let p = SimplexPoint::new(x.clone())
                .map_err(|e| SimplexError::ProjectionFailure(e.to_string()))?;
            let _ = p;
            return Ok(x);
        }
        // smallest block member gets demoted to eps
        let &demote = block
            .iter()
            .min_by(|&&a, &&b| x[a].partial_cmp(&x[b]).unwrap().then(a.cmp(&b)))
            .expect("block nonempty when over delta");
        // a lone oversized atom only comes down to delta; otherwise the
        // smallest block member leaves the block entirely
        let floor = if block.len() == 1 { delta } else { eps };
        let target = x[demote].min(floor);
        let mut excess = x[demote] - target;
        x[demote] = target;
        // pour the excess into sub-eps coordinates (largest first, capped at
        // eps so they stay out of the block); any remainder goes onto the
        // largest block member, which shrinks the block mass by eps net
        let mut order: Vec<usize> = (0..x.len()).filter(|&i| i != demote && x[i] < eps).collect();
        order.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));
        for i in order {
            if excess <= 1e-15 {
                break;
            }
            let room = eps - x[i];
            let add = room.min(excess);
            x[i] += add;
            excess -= add;
        }
        if excess > 1e-15 {
            let top = (0..x.len())
                .filter(|&i| x[i] > eps)
                .max_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap().then(b.cmp(&a)));
            match top {
                Some(i) => x[i] += excess,
                None => {
                    return Err(SimplexError::ProjectionFailure(format!(
                        "no capacity below eps = {eps} for excess {excess:e} (delta = {delta})"
                    )))
                }
            }
        }
    }
    Err(SimplexError::ProjectionFailure("atom-mass projection did not converge".into()))
}

fn project(cs: &ConstraintSet, y: &[f64]) -> Result<Vec<f64>, SimplexError> {
    match cs.kind {
        ConstraintKind::AtomMass { eps, delta } => project_atom_mass(y, eps, delta),
        ConstraintKind::Cap { eps } => project_capped_simplex(y, eps),
    }
}

// ---------------------------------------------------------------------------
// Constrained minimization
// ---------------------------------------------------------------------------

/// Result of the multistart projected-descent search.
#[derive(Clone, Debug, Serialize)]
pub struct MinimizeResult {
    pub point: SimplexPoint,
    pub value: f64,
    pub stderr: f64,
    /// Starts whose projection failed (reported, not hidden).
    pub failed_starts: u32,
}

/// Projected gradient descent with backtracking from `restarts` random
/// feasible starts plus the closed-form point (start 0). The bank is fixed
/// for the whole search, so every comparison is paired; ties resolve to the
/// lowest start index.
pub fn constrained_minimize(
    cs: &ConstraintSet,
    bank: &SampleBank,
    restarts: u32,
    seed: u64,
) -> Result<MinimizeResult, SimplexError> {
    let mut best: Option<(f64, SimplexPoint)> = None;
    let mut failed = 0u32;
    for start in 0..=restarts {
        let init = if start == 0 {
            closed_form_minimizer(cs)
        } else {
            match random_feasible(cs, seed, start) {
                Ok(p) => p,
                Err(_) => {
                    failed += 1;
                    continue;
                }
            }
        };
        let point = descend(cs, bank, init)?;
        let (value, _) = mc_objective(&point, bank)?;
        let better = match &best {
            None => true,
            Some((bv, _)) => value < *bv,
        };
        if better {
            best = Some((value, point));
        }
    }
    let (value, point) = best.expect("closed-form start always evaluated");
    let (_, stderr) = mc_objective(&point, bank)?;
    Ok(MinimizeResult { point, value, stderr, failed_starts: failed })
}

fn random_feasible(cs: &ConstraintSet, seed: u64, start: u32) -> Result<SimplexPoint, SimplexError> {
    for attempt in 0..20u32 {
        let y: Vec<f64> = (0..cs.n)
            .map(|i| {
                let u = counter_uniform(seed, attempt as u64, STREAM_RESTART, start, i as u32, Site::ORIGIN);
                -(1.0 - u).ln()
            })
            .collect();
        let total: f64 = y.iter().sum();
        let y: Vec<f64> = y.iter().map(|v| v / total).collect();
        if let Ok(x) = project(cs, &y) {
            return SimplexPoint::new(x).map_err(|e| SimplexError::ProjectionFailure(e.to_string()));
        }
    }
    Err(SimplexError::ProjectionFailure("no feasible start found in 20 attempts".into()))
}

fn descend(cs: &ConstraintSet, bank: &SampleBank, init: SimplexPoint) -> Result<SimplexPoint, SimplexError> {
    let mut x = init;
    let (mut fx, _) = mc_objective(&x, bank)?;
    let mut step = 0.5f64;
    for _ in 0..120 {
        let g = gradient(&x, bank, 1.0);
        let mut improved = false;
        for _ in 0..20 {
            let y: Vec<f64> = x.weights().iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let Ok(proj) = project(cs, &y) else {
                step *= 0.5;
                continue;
            };
            let cand = SimplexPoint::new(proj)
                .map_err(|e| SimplexError::ProjectionFailure(e.to_string()))?;
            let (fc, _) = mc_objective(&cand, bank)?;
            if fc < fx - 1e-12 {
                x = cand;
                fx = fc;
                improved = true;
                step *= 1.3;
                break;
            }
            step *= 0.5;
        }
        if !improved || step < 1e-12 {
            break;
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Power-family convergence (inf over beta of E ln mean X^beta)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct UtileRow {
    pub n: u32,
    pub beta_argmin: f64,
    pub value: f64,
    pub stderr: f64,
    /// `inf_beta ln E[X^beta]` over the same interval (the target).
    pub target: f64,
}

/// Golden-section minimization of a smooth convex function on [a, b].
fn golden_min(mut a: f64, mut b: f64, iters: u32, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Golden interior search plus exact endpoint evaluations; the infimum of a
/// convex function on an interval often sits on the boundary.
fn golden_min_with_endpoints(a: f64, b: f64, iters: u32, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let (xi, fi) = golden_min(a, b, iters, &mut f);
    let (fa, fb) = (f(a), f(b));
    let mut best = (xi, fi);
    if fa < best.1 {
        best = (a, fa);
    }
    if fb < best.1 {
        best = (b, fb);
    }
    best
}

/// For each `n` in `n_list`: minimize over `beta` in `[a, b]` the Monte
/// Carlo estimate of `E[ln((1/n) sum_i X_i^beta)]` on one shared bank per
/// `n`, and report it against `inf_beta lambda(beta)`. Requires `b < R` so
/// the target is finite.
pub fn lemma_utile_check(
    spec: EnvSpec,
    a: f64,
    b: f64,
    n_list: &[u32],
    m: u32,
    seed: u64,
) -> Result<Vec<UtileRow>, SimplexError> {
    if !(a > 0.0 && a < b) {
        return Err(SimplexError::BadInput(format!("need 0 < a < b, got [{a}, {b}]")));
    }
    if b >= spec.mgf_radius() {
        return Err(SimplexError::BadInput(format!(
            "b = {b} must be below the mgf radius {} (target would be infinite)",
            spec.mgf_radius()
        )));
    }
    let (_, target) = golden_min_with_endpoints(a, b, 60, |beta| spec.log_mgf(beta));
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let bank = if (m as u64) * (n as u64) <= 20_000_000 {
            SampleBank::generate(spec, m, n, seed)
        } else {
            SampleBank::lazy(spec, m, n, seed)
        };
        let uniform = SimplexPoint::new(vec![1.0 / n as f64; n as usize])
            .expect("uniform point is on the simplex");
        let (beta_argmin, value) = golden_min_with_endpoints(a, b, 12, |beta| {
            mc_objective_pow(&uniform, &bank, beta).map(|v| v.0).unwrap_or(f64::INFINITY)
        });
        let (value_at, stderr) = mc_objective_pow(&uniform, &bank, beta_argmin)?;
        debug_assert_eq!(value_at, value);
        rows.push(UtileRow { n, beta_argmin, value, stderr, target });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_exp_centered(m: u32, w: u32, seed: u64) -> SampleBank {
        SampleBank::generate(EnvSpec::exponential_centered(1.0), m, w, seed)
    }

    #[test]
    fn constraint_validation() {
        assert!(ConstraintSet::atom_mass(0.1, 0.8, 6).is_ok());
        assert!(ConstraintSet::atom_mass(0.2, 0.6, 3).is_ok());
        // delta outside (1/2, 1)
        assert!(ConstraintSet::atom_mass(0.2, 0.5, 6).is_err());
        // ratio not an integer
        assert!(ConstraintSet::atom_mass(0.15, 0.8, 9).is_err());
        // n too small
        assert!(ConstraintSet::atom_mass(0.1, 0.8, 2).is_err());
        // eps not below 1 - delta
        assert!(ConstraintSet::atom_mass(0.25, 0.8, 9).is_err());
        assert!(ConstraintSet::cap(0.25, 7).is_ok());
        assert!(ConstraintSet::cap(0.3, 7).is_err());
        assert!(ConstraintSet::cap(0.25, 3).is_err());
    }

    #[test]
    fn closed_forms_match_spec_examples() {
        let cs = ConstraintSet::atom_mass(0.1, 0.8, 6).unwrap();
        assert_eq!(closed_form_minimizer(&cs).weights(), &[0.8, 0.1, 0.1, 0.0, 0.0, 0.0]);
        let cs = ConstraintSet::cap(0.25, 7).unwrap();
        assert_eq!(closed_form_minimizer(&cs).weights(), &[0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0]);
        let cs = ConstraintSet::atom_mass(0.2, 0.6, 4).unwrap();
        assert_eq!(closed_form_minimizer(&cs).weights(), &[0.6, 0.2, 0.2, 0.0]);
    }

    #[test]
    fn objective_basics() {
        // unit mass on coordinate 0: objective = mean of ln X_0
        let bank = bank_exp_centered(2000, 4, 1);
        let unit = SimplexPoint::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (est, _) = mc_objective(&unit, &bank).unwrap();
        let mut row = vec![0.0; 4];
        let mut direct = Kahan::new();
        for r in 0..2000 {
            bank.fill_row(r, &mut row);
            direct.add(row[0]);
        }
        assert!((est - direct.value() / 2000.0).abs() < 1e-12);
        // constant bank: ln c exactly, zero spread
        let cbank = SampleBank::constant(2.5, 500, 4);
        let p = SimplexPoint::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let (est, se) = mc_objective(&p, &cbank).unwrap();
        assert!((est - 2.5f64.ln()).abs() < 1e-13);
        assert!(se < 1e-13);
    }

    #[test]
    fn jensen_direction() {
        // E ln(sum l X) <= ln E(sum l X); for the lognormal bank the gap is
        // clear at this sample size
        let bank = SampleBank::generate(EnvSpec::gaussian(0.0, 1.0), 20_000, 6, 5);
        let p = SimplexPoint::new(vec![1.0 / 6.0; 6]).unwrap();
        let (est, se) = mc_objective(&p, &bank).unwrap();
        let mut row = vec![0.0; 6];
        let mut lin = Kahan::new();
        for r in 0..bank.m {
            bank.fill_row(r, &mut row);
            lin.add(row.iter().map(|&e| e.exp() / 6.0).sum::<f64>());
        }
        let annealed = (lin.value() / bank.m as f64).ln();
        assert!(est <= annealed + 3.0 * se, "Jensen direction: {est} vs {annealed}");
    }

    #[test]
    fn permutation_symmetry_is_exact() {
        let bank = bank_exp_centered(500, 5, 9);
        let p = SimplexPoint::new(vec![0.5, 0.2, 0.15, 0.1, 0.05]).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let pp = SimplexPoint::new(perm.iter().map(|&i| p.weights()[i]).collect()).unwrap();
        let pbank = bank.permuted(&perm);
        let (a, _) = mc_objective(&p, &bank).unwrap();
        let (b, _) = mc_objective(&pp, &pbank).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "consistent permutation leaves the objective unchanged");
    }

    #[test]
    fn capped_projection_is_feasible_and_optimal() {
        let y = [0.9, 0.4, -0.2, 0.3, 0.05];
        let x = project_capped_simplex(&y, 0.25).unwrap();
        let cs = ConstraintSet::cap(0.25, 5).unwrap();
        let p = SimplexPoint::new(x.clone()).unwrap();
        assert!(cs.is_feasible(&p));
        // projection property against feasible competitors
        let d0: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        for t in 0..50 {
            let z: Vec<f64> = (0..5)
                .map(|i| counter_uniform(77, t, STREAM_RESTART, i as u32, 0, Site::ORIGIN))
                .collect();
            let z = project_capped_simplex(&z, 0.25).unwrap();
            let dz: f64 = y.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(d0 <= dz + 1e-9, "projection must be the closest feasible point");
        }
    }

    #[test]
    fn atom_mass_projection_feasibility() {
        let cs = ConstraintSet::atom_mass(0.1, 0.8, 6).unwrap();
        for t in 0..50u32 {
            let y: Vec<f64> = (0..6)
                .map(|i| counter_uniform(5, t as u64, STREAM_RESTART, i, 1, Site::ORIGIN))
                .collect();
            let s: f64 = y.iter().sum();
            let y: Vec<f64> = y.iter().map(|v| v / s).collect();
            let x = project_atom_mass(&y, 0.1, 0.8).unwrap();
            let p = SimplexPoint::new(x).unwrap();
            assert!(cs.is_feasible(&p), "projected point must be feasible (trial {t})");
        }
    }

    #[test]
    fn tightest_dimension_returns_closed_form() {
        // n = k + 1 exactly: the feasible set is the closed form's orbit
        let cs = ConstraintSet::atom_mass(0.1, 0.8, 3).unwrap();
        let bank = bank_exp_centered(5000, 3, 2);
        let res = constrained_minimize(&cs, &bank, 8, 3).unwrap();
        let dist = res.point.l1_sorted_distance(&closed_form_minimizer(&cs));
        assert!(dist < 1e-6, "unique orbit must be recovered, distance {dist}");
    }

    #[test]
    fn monotone_transfer_decreases_objective() {
        // moving mass from a smaller to a larger weight lowers E ln
        let bank = bank_exp_centered(50_000, 4, 11);
        let before = SimplexPoint::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let after = SimplexPoint::new(vec![0.5, 0.2, 0.2, 0.1]).unwrap();
        let (diff, se) = paired_objective_diff(&after, &before, &bank, 1.0).unwrap();
        assert!(diff <= 3.0 * se, "transfer toward the top must not increase the objective: {diff} vs {se}");
    }

    #[test]
    fn constant_bank_minimization_returns_ln_c() {
        let cs = ConstraintSet::cap(0.25, 6).unwrap();
        let bank = SampleBank::constant(3.0, 200, 6);
        let res = constrained_minimize(&cs, &bank, 4, 1).unwrap();
        assert!((res.value - 3.0f64.ln()).abs() < 1e-12, "objective is constant on the simplex");
    }

    #[test]
    fn utile_constant_bank_is_exact_at_every_n() {
        // X = c: both sides equal beta ln c for all n; inf at the left end
        // for c > 1
        let spec = EnvSpec::constant(2.0f64.ln());
        let rows = lemma_utile_check(spec, 0.5, 2.0, &[1, 10], 200, 3).unwrap();
        for row in rows {
            assert!((row.value - row.target).abs() < 1e-12, "constant X: {row:?}");
            assert!((row.target - 0.5 * 2.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn utile_gaussian_rows_increase_toward_target() {
        let rows = lemma_utile_check(EnvSpec::gaussian(0.0, 1.0), 0.5, 2.0, &[10, 100, 1000], 20_000, 7)
            .unwrap();
        assert!((rows[0].target - 0.125).abs() < 1e-12, "inf lambda on [0.5, 2] is at beta = 0.5");
        for w in rows.windows(2) {
            assert!(
                w[1].value >= w[0].value - 3.0 * (w[0].stderr + w[1].stderr),
                "entries nondecreasing: {w:?}"
            );
        }
        let last = rows.last().unwrap();
        assert!((last.value - last.target).abs() < 3.0 * last.stderr + 0.01, "{last:?}");
    }

    #[test]
    fn n_one_entry_sits_below_target() {
        // single-sample case: E[beta ln X] minimized over beta; Jensen puts
        // it at or below the target
        let rows = lemma_utile_check(EnvSpec::gaussian(0.0, 1.0), 0.5, 2.0, &[1], 50_000, 9).unwrap();
        let row = rows[0];
        assert!(row.value <= row.target + 3.0 * row.stderr, "{row:?}");
    }
}

//! Verification suites: named assertion blocks over pinned seeds, shared by
//! the `verify-suite` command and the acceptance tests. Each block returns
//! machine-readable verdicts; nothing here mutates global state, so blocks
//! compose freely.

use crate::atoms::{atom_report, CesaroTrace, Schedule};
use crate::dp::{
    brute_force_oracle, evolve, max_path_energy, truncated_evolve, EvolveOptions,
};
use crate::env::{counter_uniform, EnvField, EnvSpec, TableField, STREAM_RESTART};
use crate::fenergy::{estimate_p, estimate_p_multi, gap_scan, martingale_diagnostic, EstimatorOptions};
use crate::lattice::Site;
use crate::numeric::mean_stderr;
use crate::simplex::{
    closed_form_minimizer, constrained_minimize, lemma_utile_check, mc_objective,
    paired_objective_diff, ConstraintSet, SampleBank, SimplexPoint,
};
use rayon::prelude::*;
use serde::Serialize;

/// Suite sizing: `quick` shrinks everything for smoke runs; the full
/// profile is what the acceptance gate uses.
#[derive(Clone, Copy, Debug)]
pub struct Profile {
    pub quick: bool,
    pub seed: u64,
}

impl Profile {
    fn scale(&self, full: u32, quick: u32) -> u32 {
        if self.quick {
            quick
        } else {
            full
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Verdict { name: name.to_string(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn all_pass(vs: &[Verdict]) -> bool {
    vs.iter().all(|v| v.pass)
}

// ---------------------------------------------------------------------------
// Suite compositions
// ---------------------------------------------------------------------------

pub fn oracle_suite(p: &Profile) -> Vec<Verdict> {
    let mut v = worked_example_checks();
    v.extend(oracle_equivalence(p));
    v
}

pub fn bounds_suite(p: &Profile) -> Vec<Verdict> {
    let mut v = pathwise_bound_sweep(p);
    v.extend(truncation_sweep(p));
    v.extend(superadditivity_check(p));
    v.extend(annealed_grid(p));
    v.extend(gap_monotonicity(p));
    v.extend(martingale_lln(p));
    v
}

pub fn lemmas_suite(p: &Profile) -> Vec<Verdict> {
    let mut v = lemma_minimizers(p);
    v.extend(utile_convergence(p));
    v
}

pub fn localization_suite(p: &Profile) -> Vec<Verdict> {
    localization_trend(p)
}

// ---------------------------------------------------------------------------
// Worked examples (hand-enumerated values)
// ---------------------------------------------------------------------------

fn site(x: i32) -> Site {
    Site::new([x, 0, 0])
}

/// The n = 2 hand-enumerated instance: eta(1,-1) = 0, eta(1,+1) = ln 2,
/// second layer flat. Distinguishes the correct convolve-then-weight order
/// from the weight-then-convolve confusion.
pub fn worked_example_checks() -> Vec<Verdict> {
    let field = TableField::new([((1, site(1)), (2.0f64).ln())]);
    let opts = EvolveOptions::default();
    let mut rho1_at_1 = f64::NAN;
    let mut nu2 = std::collections::BTreeMap::new();
    let state = evolve(&field, 1.0, 2, 1, &opts, |s| {
        if s.j == 1 {
            rho1_at_1 = s.rho.mass(site(1));
        } else {
            nu2 = s.nu.to_map();
        }
    })
    .expect("worked example evolve");
    let want_logz = 1.5f64.ln();
    let logz_ok = (state.log_z - want_logz).abs() < 1e-12;
    let rho_ok = (rho1_at_1 - 2.0 / 3.0).abs() < 1e-12;
    // weight-before-convolve would put nu_2(0) = (1/3 + 2/3)/2 = 1/2 as well,
    // but nu_2(+2) distinguishes: correct 1/3 vs confused value 1/2 * 2/3.
    let nu_ok = (nu2[&site(2)] - 1.0 / 3.0).abs() < 1e-12
        && (nu2[&site(-2)] - 1.0 / 6.0).abs() < 1e-12
        && (nu2[&site(0)] - 0.5).abs() < 1e-12;
    let oracle = brute_force_oracle(&field, 1.0, 2, 1, None).expect("worked example oracle");
    let oracle_ok = (oracle.log_z - want_logz).abs() < 1e-14
        && (oracle.max_energy - (2.0f64).ln()).abs() < 1e-14;
    let want_trunc = ((2.0 + 2.0 * 0.5f64.exp()) / 4.0).ln();
    let tstate = truncated_evolve(&field, 1.0, 2, 1, 0.5, &opts, |_| {}).expect("trunc evolve");
    let trunc_ok = (tstate.log_z - want_trunc).abs() < 1e-12;
    vec![
        Verdict::new(
            "oracle.worked-example",
            logz_ok && rho_ok && nu_ok && oracle_ok,
            format!(
                "ln Z_2 = {} (want ln 3/2 = {}), rho_1(+1) = {} (want 2/3), nu_2(+2) = {} (want 1/3)",
                state.log_z, want_logz, rho1_at_1, nu2[&site(2)]
            ),
        ),
        Verdict::new(
            "oracle.worked-example-truncated",
            trunc_ok,
            format!("ln Z_2 with clamp 0.5 = {} (want {})", tstate.log_z, want_trunc),
        ),
    ]
}

fn instance_specs() -> Vec<EnvSpec> {
    vec![
        EnvSpec::gaussian(0.0, 1.0),
        EnvSpec::exponential_centered(1.0),
        EnvSpec::pareto(4.0, 1.0, 1.3),
        EnvSpec::uniform(-1.0, 1.0),
        EnvSpec::bernoulli(0.3, 1.0, -0.5),
    ]
}

/// One oracle comparison: forward recursions against full enumeration.
/// Returns the verdict with the worst observed deviations.
pub fn check_one_oracle_instance(
    spec: EnvSpec,
    beta: f64,
    n: u32,
    d: usize,
    seed: u64,
    trunc: Option<f64>,
) -> Result<Verdict, String> {
    let field = EnvField::new(spec, seed, 0);
    let oracle = brute_force_oracle(&field, beta, n, d, trunc).map_err(|e| e.to_string())?;
    let opts = EvolveOptions::default();
    let mut nus = Vec::new();
    let state = match trunc {
        Some(l) => truncated_evolve(&field, beta, n, d, l, &opts, |s| nus.push(s.nu.to_map())),
        None => evolve(&field, beta, n, d, &opts, |s| nus.push(s.nu.to_map())),
    }
    .map_err(|e| e.to_string())?;
    let dz = (state.log_z - oracle.log_z).abs();
    let mut dnu = 0.0f64;
    let mut support_ok = true;
    for (j, nu) in nus.iter().enumerate() {
        let onu = &oracle.nu_seq[j];
        support_ok &= nu.len() == onu.len();
        for (x, v) in nu {
            dnu = dnu.max((v - onu.get(x).copied().unwrap_or(0.0)).abs());
        }
    }
    let stats =
        max_path_energy(&field, n, d, &|e| e, &opts, &[], false).map_err(|e| e.to_string())?;
    let dmax = (stats.max_energy - oracle.max_energy).abs();
    let pass = dz <= 1e-10 && dnu <= 1e-12 && dmax <= 1e-10 && support_ok;
    Ok(Verdict::new(
        "oracle.instance",
        pass,
        format!(
            "{} beta={beta} n={n} d={d}: |dlogZ|={dz:.2e}, max|dnu|={dnu:.2e}, |dN|={dmax:.2e}",
            spec.name()
        ),
    ))
}

/// Criterion: oracle equivalence on random instances, d=1 n<=12 and
/// d=2 n<=8, logZ within 1e-10 and nu within 1e-12.
pub fn oracle_equivalence(p: &Profile) -> Vec<Verdict> {
    let count = p.scale(100, 16);
    let specs = instance_specs();
    let results: Vec<Result<Verdict, String>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = specs[i as usize % specs.len()];
            let d = if i % 5 < 3 { 1 } else { 2 };
            let n = if d == 1 { 4 + (i * 7) % 9 } else { 3 + i % 6 };
            let beta = if i % 10 == 0 {
                0.0
            } else {
                2.5 * counter_uniform(p.seed, i as u64, STREAM_RESTART, 900, i, Site::ORIGIN)
            };
            check_one_oracle_instance(spec, beta, n, d, p.seed.wrapping_add(i as u64), None)
        })
        .collect();
    let mut worst_dz = 0.0f64;
    let mut fails = 0;
    for r in &results {
        match r {
            Ok(v) => {
                if !v.pass {
                    fails += 1;
                }
                if let Some(part) = v.detail.split("|dlogZ|=").nth(1) {
                    if let Some(tok) = part.split(',').next() {
                        if let Ok(x) = tok.parse::<f64>() {
                            worst_dz = worst_dz.max(x);
                        }
                    }
                }
            }
            Err(_) => fails += 1,
        }
    }
    vec![Verdict::new(
        "oracle.equivalence",
        fails == 0,
        format!("{count} random instances (d=1 n<=12, d=2 n<=8), {fails} failures, worst |dlogZ| = {worst_dz:.2e}"),
    )]
}

// ---------------------------------------------------------------------------
// Pathwise and truncation bounds
// ---------------------------------------------------------------------------

/// Criterion: `ln Z_n <= beta N(n) + 1e-9` on every replica of a sweep of
/// at least 1e4 (config, replica) instances.
pub fn pathwise_bound_sweep(p: &Profile) -> Vec<Verdict> {
    let replicas = p.scale(256, 8);
    let specs = instance_specs();
    let mut cfgs = Vec::new();
    for (si, _) in specs.iter().enumerate() {
        for (d, n) in [(1usize, 64u32), (1, 128), (1, 256), (2, 48), (3, 24)] {
            for beta in [0.7, 3.0] {
                cfgs.push((si, d, n, beta));
            }
        }
    }
    let total = cfgs.len() as u32 * replicas;
    let worst: Vec<f64> = cfgs
        .par_iter()
        .map(|&(si, d, n, beta)| {
            let spec = specs[si];
            let mut w = f64::INFINITY;
            for r in 0..replicas as u64 {
                let field = EnvField::new(spec, p.seed.wrapping_add(si as u64), r);
                let opts = EvolveOptions::default();
                let state = evolve(&field, beta, n, d, &opts, |_| {}).expect("evolve");
                let stats = max_path_energy(&field, n, d, &|e| e, &opts, &[], false).expect("maxplus");
                w = w.min(beta * stats.max_energy - state.log_z);
            }
            w
        })
        .collect();
    let min_margin = worst.iter().cloned().fold(f64::INFINITY, f64::min);
    vec![Verdict::new(
        "bounds.pathwise",
        min_margin >= -1e-9,
        format!("{total} instances, worst slack of beta N(n) - ln Z_n = {min_margin:.3e} (>= -1e-9 required)"),
    )]
}

/// Criterion: `|ln Z - ln Z_L| <= beta maxpath((|eta|-L)+) + 1e-9` for
/// L in {0.5, 1, 2, 4, 8}, and the gap sequence is eventually nonincreasing
/// once L exceeds the median |eta|.
pub fn truncation_sweep(p: &Profile) -> Vec<Verdict> {
    let count = p.scale(200, 12);
    let levels = [0.5, 1.0, 2.0, 4.0, 8.0];
    let specs = instance_specs();
    let results: Vec<(f64, bool)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = specs[i as usize % specs.len()];
            let (d, n) = if i % 8 == 7 { (2usize, 32u32) } else { (1, 96) };
            let beta = if i % 2 == 0 { 0.5 } else { 1.5 };
            let field = EnvField::new(spec, p.seed.wrapping_add(1000 + i as u64), 0);
            let opts = EvolveOptions::default();
            let full = evolve(&field, beta, n, d, &opts, |_| {}).expect("evolve");
            let median = spec.abs_median();
            let mut worst_slack = f64::INFINITY;
            let mut monotone = true;
            let mut prev_gap: Option<f64> = None;
            for &l in &levels {
                let trunc = truncated_evolve(&field, beta, n, d, l, &opts, |_| {}).expect("trunc");
                let gap = (full.log_z - trunc.log_z).abs();
                let excess = max_path_energy(&field, n, d, &|e: f64| (e.abs() - l).max(0.0), &opts, &[], false)
                    .expect("excess maxplus")
                    .max_energy;
                worst_slack = worst_slack.min(beta * excess + 1e-9 - gap);
                if l >= median {
                    if let Some(pg) = prev_gap {
                        monotone &= gap <= pg + 1e-12;
                    }
                    prev_gap = Some(gap);
                }
            }
            (worst_slack, monotone)
        })
        .collect();
    let min_slack = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let all_monotone = results.iter().all(|r| r.1);
    vec![
        Verdict::new(
            "bounds.truncation-estimate",
            min_slack >= 0.0,
            format!("{count} instances x L in {{0.5,1,2,4,8}}: worst slack {min_slack:.3e}"),
        ),
        Verdict::new(
            "bounds.truncation-monotone",
            all_monotone,
            format!("gap sequence nonincreasing above the median |eta| on all {count} instances"),
        ),
    ]
}

/// Invariant: per-step means of `ln Z_n` are superadditive along doubling
/// horizons (checked within two pooled standard errors).
pub fn superadditivity_check(p: &Profile) -> Vec<Verdict> {
    let replicas = p.scale(32, 8);
    let ests = estimate_p_multi(
        EnvSpec::gaussian(0.0, 1.0),
        1.0,
        &[250, 500, 1000],
        1,
        replicas,
        p.seed.wrapping_add(2000),
        &EstimatorOptions::default(),
    )
    .expect("estimate_p_multi");
    let mut ok = true;
    let mut detail = String::new();
    for w in ests.windows(2) {
        let pooled = 2.0 * (w[0].stderr + w[1].stderr);
        ok &= w[1].mean >= w[0].mean - pooled;
        detail.push_str(&format!("n={}: {:.6}±{:.1e}  ", w[1].n, w[1].mean, w[1].stderr));
    }
    vec![Verdict::new(
        "bounds.superadditivity",
        ok,
        format!("per-step means nondecreasing along 250→500→1000: {detail}"),
    )]
}

/// Criterion: annealed bound `p_hat <= lambda + 2 stderr` for gaussian(0,1)
/// across d in {1,2,3} and beta in {0.5, 1} at n = 500 with 64 replicas.
/// The d=3 cells run with a documented window-pruning level whose removed
/// mass only lowers `p_hat` (conservative for this bound); the accounting
/// is checked alongside.
pub fn annealed_grid(p: &Profile) -> Vec<Verdict> {
    let spec = EnvSpec::gaussian(0.0, 1.0);
    let replicas = p.scale(64, 6);
    let n = p.scale(500, 60);
    let mut out = Vec::new();
    for d in [1usize, 2, 3] {
        for beta in [0.5, 1.0] {
            let opts = EstimatorOptions {
                evolve: EvolveOptions {
                    prune_rel: if d == 3 { 1e-4 } else { 1e-20 },
                    ..Default::default()
                },
                check_pathwise: false,
            };
            let est = estimate_p(spec, beta, n, d, replicas, p.seed.wrapping_add(3000 + d as u64), &opts)
                .expect("estimate_p");
            let lambda = spec.log_mgf(beta);
            let pass = est.mean <= lambda + 2.0 * est.stderr;
            let pruned = est
                .per_replica
                .iter()
                .map(|r| r.pruned_mass_bound)
                .fold(0.0f64, f64::max);
            out.push(Verdict::new(
                &format!("bounds.annealed.d{d}-beta{beta}"),
                pass && pruned < 0.05,
                format!(
                    "p_hat = {:.6} ± {:.1e} vs lambda = {:.6} (pruned mass bound {:.2e})",
                    est.mean, est.stderr, lambda, pruned
                ),
            ));
        }
    }
    out
}

/// Criterion: the quenched-annealed gap is nonincreasing along the grid
/// {0.25, 0.5, 1, 2} for gaussian(0,1), d=1, n=1000, 64 replicas with
/// shared seeds, and strictly negative at beta = 2. Also checks the weak
/// disorder plateau in d=3 at small beta.
pub fn gap_monotonicity(p: &Profile) -> Vec<Verdict> {
    let spec = EnvSpec::gaussian(0.0, 1.0);
    let replicas = p.scale(64, 8);
    let n = p.scale(1000, 100);
    let scan = gap_scan(
        spec,
        &[0.25, 0.5, 1.0, 2.0],
        n,
        1,
        replicas,
        p.seed.wrapping_add(4000),
        &EstimatorOptions::default(),
    )
    .expect("gap_scan");
    let mut monotone = true;
    for w in scan.rows.windows(2) {
        let pooled = 2.0 * (w[0].stderr + w[1].stderr);
        monotone &= w[1].gap <= w[0].gap + pooled;
    }
    let last = scan.rows.last().unwrap();
    let strict = last.gap < -2.0 * last.stderr;
    let rows: Vec<String> = scan.rows.iter().map(|r| format!("{}:{:.5}", r.beta, r.gap)).collect();
    let mut out = vec![
        Verdict::new(
            "bounds.gap-monotone",
            monotone,
            format!("gaps along {{0.25,0.5,1,2}}: {}", rows.join(" ")),
        ),
        Verdict::new(
            "bounds.gap-strict-d1",
            strict,
            format!("gap(2) = {:.5} < -2 stderr = {:.1e}", last.gap, -2.0 * last.stderr),
        ),
    ];
    // d=3 weak disorder: gap compatible with 0 at small beta
    let wreps = p.scale(24, 6);
    let wn = p.scale(100, 40);
    let weak = gap_scan(
        spec,
        &[0.1, 0.2],
        wn,
        3,
        wreps,
        p.seed.wrapping_add(4100),
        &EstimatorOptions {
            evolve: EvolveOptions { prune_rel: 1e-6, ..Default::default() },
            check_pathwise: false,
        },
    )
    .expect("weak scan");
    let ok = weak.rows.iter().all(|r| r.gap.abs() <= 2.0 * r.stderr + 0.01);
    let rows: Vec<String> = weak.rows.iter().map(|r| format!("{}:{:.5}±{:.5}", r.beta, r.gap, r.stderr)).collect();
    out.push(Verdict::new(
        "bounds.gap-weak-disorder-d3",
        ok,
        format!("d=3 small-beta gaps near 0: {}", rows.join(" ")),
    ));
    out
}

/// Criterion: the martingale average `|M_n/n|` over 16 replicas decreases
/// from n = 100 to n = 1000 beyond the pooled error (gaussian, d=1, beta=2).
pub fn martingale_lln(p: &Profile) -> Vec<Verdict> {
    let replicas = p.scale(16, 4);
    let n = p.scale(1000, 120);
    let first = n / 10;
    let samples = p.scale(200, 100);
    let traces: Vec<_> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            martingale_diagnostic(
                EnvSpec::gaussian(0.0, 1.0),
                2.0,
                0.1,
                0.6,
                n,
                1,
                samples,
                p.seed.wrapping_add(5000),
                r,
                &[first, n],
                &EvolveOptions::default(),
            )
            .expect("martingale diagnostic")
        })
        .collect();
    let at = |k: usize| -> (f64, f64, f64) {
        let vals: Vec<f64> = traces.iter().map(|t| t.checkpoints[k].1.abs() + t.checkpoints[k].2.abs()).collect();
        let (m, se) = mean_stderr(&vals);
        let mc: f64 = traces.iter().map(|t| t.checkpoints[k].3).fold(0.0, f64::max);
        (m, se, mc)
    };
    let (m0, se0, mc0) = at(0);
    let (m1, se1, mc1) = at(1);
    let pooled = se0 + se1 + mc0 + mc1;
    let pass = m1 < m0 - pooled;
    vec![Verdict::new(
        "bounds.martingale-lln",
        pass,
        format!(
            "mean(|M/n|+|N/n|): n={first}: {m0:.5}±{se0:.5} -> n={n}: {m1:.5}±{se1:.5} (pooled err {pooled:.5})"
        ),
    )]
}

// ---------------------------------------------------------------------------
// Simplex lemmas
// ---------------------------------------------------------------------------

/// One minimizer check: no random feasible point beats the closed form by
/// more than 3 pooled standard errors, and the descent search lands within
/// L1 distance 0.05 (up to permutation) of the closed form.
pub fn check_lemma_minimizer(
    spec: EnvSpec,
    cs: &ConstraintSet,
    m: u32,
    trials: u32,
    restarts: u32,
    seed: u64,
) -> Result<Verdict, String> {
    let bank = SampleBank::generate(spec, m, cs.n as u32, seed);
    let closed = closed_form_minimizer(cs);
    let (closed_val, closed_se) = mc_objective(&closed, &bank).map_err(|e| e.to_string())?;
    // random feasible sweep, paired on the shared bank
    let margins: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let pt = random_feasible_point(cs, seed ^ 0x5eed, t).expect("feasible point");
            let (diff, se) = paired_objective_diff(&pt, &closed, &bank, 1.0).expect("paired diff");
            diff + 3.0 * se
        })
        .collect();
    let worst = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let sweep_ok = worst >= 0.0;
    let res = constrained_minimize(cs, &bank, restarts, seed).map_err(|e| e.to_string())?;
    let dist = res.point.l1_sorted_distance(&closed);
    let dist_ok = dist <= 0.05;
    let value_ok = res.value >= closed_val - 3.0 * (closed_se + res.stderr);
    Ok(Verdict::new(
        &format!("lemmas.minimizer.{:?}-n{}", cs.kind, cs.n),
        sweep_ok && dist_ok && value_ok,
        format!(
            "{trials} feasible points: worst margin {worst:.4e}; descent L1-to-closed-form {dist:.4} (<= 0.05); value {:.6} vs closed {:.6}",
            res.value, closed_val
        ),
    ))
}

fn random_feasible_point(cs: &ConstraintSet, seed: u64, t: u32) -> Result<SimplexPoint, String> {
    // draw a random simplex point, then repair it onto the constraint set
    // with the closed form as a fallback mixture
    for attempt in 0..24u32 {
        let g: Vec<f64> = (0..cs.n)
            .map(|i| {
                let u = counter_uniform(seed, attempt as u64 + 7, STREAM_RESTART, t, i as u32, Site::ORIGIN);
                -(1.0 - u).ln()
            })
            .collect();
        let s: f64 = g.iter().sum();
        let y: Vec<f64> = g.iter().map(|v| v / s).collect();
        // mix toward the closed form until feasible
        let closed = closed_form_minimizer(cs);
        for lam in [0.0f64, 0.25, 0.5, 0.75, 0.9] {
            let mixed: Vec<f64> = y
                .iter()
                .zip(closed.weights())
                .map(|(a, b)| (1.0 - lam) * a + lam * b)
                .collect();
            if let Ok(p) = SimplexPoint::new(normalize(mixed)) {
                if cs.is_feasible(&p) {
                    return Ok(p);
                }
            }
        }
    }
    Err("no feasible point found".into())
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    v
}

/// Criterion: minimizer checks for (eps, delta) in {(0.1,0.8), (0.05,0.9)}
/// and caps k in {4, 10}, at n twice the minimum feasible, banks of 1e5
/// rows, two sample laws.
pub fn lemma_minimizers(p: &Profile) -> Vec<Verdict> {
    let m = p.scale(100_000, 4_000);
    let trials = p.scale(200, 20);
    let restarts = p.scale(8, 3);
    let laws = [EnvSpec::exponential_centered(1.0), EnvSpec::gaussian(0.0, 1.0)];
    let mut out = Vec::new();
    for (li, law) in laws.iter().enumerate() {
        for (eps, delta) in [(0.1, 0.8), (0.05, 0.9)] {
            let k = ((1.0 - delta) / eps as f64).round() as usize;
            let cs = ConstraintSet::atom_mass(eps, delta, 2 * (k + 1)).expect("constraint");
            match check_lemma_minimizer(*law, &cs, m, trials, restarts, p.seed.wrapping_add(li as u64 * 31)) {
                Ok(mut v) => {
                    v.detail = format!("{} {}", law.name(), v.detail);
                    out.push(v);
                }
                Err(e) => out.push(Verdict::new("lemmas.minimizer", false, e)),
            }
        }
        for k in [4usize, 10] {
            let cs = ConstraintSet::cap(1.0 / k as f64, 2 * k).expect("constraint");
            match check_lemma_minimizer(*law, &cs, m, trials, restarts, p.seed.wrapping_add(li as u64 * 37 + 5)) {
                Ok(mut v) => {
                    v.detail = format!("{} {}", law.name(), v.detail);
                    out.push(v);
                }
                Err(e) => out.push(Verdict::new("lemmas.minimizer", false, e)),
            }
        }
    }
    // monotone transfer property on a shared bank
    let bank = SampleBank::generate(laws[0], m.min(50_000), 4, p.seed ^ 0xabc);
    let mut transfer_ok = true;
    let mut worst = f64::INFINITY;
    for (a, b, rho) in [(0.4, 0.3, 0.1), (0.5, 0.3, 0.3), (0.35, 0.35, 0.2)] {
        let rest = (1.0 - a - b) / 2.0;
        let before = SimplexPoint::new(vec![a, b, rest, rest]).unwrap();
        let after = SimplexPoint::new(vec![a + rho, b - rho, rest, rest]).unwrap();
        let (diff, se) = paired_objective_diff(&after, &before, &bank, 1.0).expect("paired");
        transfer_ok &= diff <= 3.0 * se;
        worst = worst.min(3.0 * se - diff);
    }
    out.push(Verdict::new(
        "lemmas.monotone-transfer",
        transfer_ok,
        format!("mass transfers toward the larger weight never increase the objective (worst margin {worst:.2e})"),
    ));
    out
}

/// Criterion: the power-family table at n in {10, 1e2, 1e3, 1e4} with 1e5
/// rows per entry is nondecreasing within 3 stderr and its last entry is
/// within 3 stderr + 0.01 of inf lambda = 0.125.
pub fn utile_convergence(p: &Profile) -> Vec<Verdict> {
    let m = p.scale(100_000, 3_000);
    let n_list: Vec<u32> = if p.quick { vec![10, 100, 1000] } else { vec![10, 100, 1000, 10_000] };
    let rows = lemma_utile_check(EnvSpec::gaussian(0.0, 1.0), 0.5, 2.0, &n_list, m, p.seed ^ 0x57e)
        .expect("utile check");
    let mut nondecreasing = true;
    for w in rows.windows(2) {
        nondecreasing &= w[1].value >= w[0].value - 3.0 * (w[0].stderr + w[1].stderr);
    }
    let last = rows.last().unwrap();
    let close = (last.value - last.target).abs() <= 3.0 * last.stderr + 0.01;
    let table: Vec<String> = rows.iter().map(|r| format!("n={}:{:.5}", r.n, r.value)).collect();
    vec![Verdict::new(
        "lemmas.utile-convergence",
        nondecreasing && close,
        format!("{} -> target {:.5}", table.join(" "), last.target),
    )]
}

// ---------------------------------------------------------------------------
// Localization
// ---------------------------------------------------------------------------

/// Pinned regression floor for the Cesaro atom mass of pareto(4), d=1,
/// n=1000, eps=0.05 at beta=8 (mean over 32 replicas at the suite seed).
/// Recorded from the first green run; the criterion expects at least 0.5.
pub const LOCALIZATION_BETA8_FLOOR: f64 = 0.5;

/// Pinned regression floor for the vanishing-schedule trace
/// eps_j = 1/ln(j+2) at beta=8 (same setup).
pub const LOCALIZATION_SCHEDULE_BETA8_FLOOR: f64 = 0.5;

/// Criterion: the mean Cesaro atom mass is strictly increasing across
/// beta in {1, 2, 4, 8} beyond two standard errors, and at beta = 8 it
/// exceeds the pinned floor. Fixed seeds make the comparison paired.
pub fn localization_trend(p: &Profile) -> Vec<Verdict> {
    let spec = EnvSpec::pareto(4.0, 1.0, 0.0);
    let replicas = p.scale(32, 6);
    let n = p.scale(1000, 150);
    let betas = [1.0, 2.0, 4.0, 8.0];
    let eps = 0.05;
    let delta = 0.6;
    let schedule = Schedule::LogInverse { c: 1.0 };
    // per beta: (fixed-eps means, schedule means) over replicas
    let mut fixed_stats = Vec::new();
    let mut sched_stats = Vec::new();
    for &beta in &betas {
        let per_replica: Vec<(f64, f64)> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let field = EnvField::new(spec, p.seed.wrapping_add(6000), r);
                let mut fixed = CesaroTrace::new();
                let mut sched = CesaroTrace::new();
                evolve(&field, beta, n, 1, &EvolveOptions::default(), |s| {
                    fixed.push(&atom_report(s.nu, eps, delta).expect("report")).expect("in order");
                    sched
                        .push(&atom_report(s.nu, schedule.eps_at(s.j), delta).expect("report"))
                        .expect("in order");
                })
                .expect("evolve");
                (fixed.mean_atom_mass(), sched.mean_atom_mass())
            })
            .collect();
        let (fm, fse) = mean_stderr(&per_replica.iter().map(|x| x.0).collect::<Vec<_>>());
        let (sm, sse) = mean_stderr(&per_replica.iter().map(|x| x.1).collect::<Vec<_>>());
        fixed_stats.push((beta, fm, fse));
        sched_stats.push((beta, sm, sse));
    }
    let mut increasing = true;
    for w in fixed_stats.windows(2) {
        increasing &= w[1].1 > w[0].1 + 2.0 * (w[0].2 + w[1].2);
    }
    let mut sched_increasing = true;
    for w in sched_stats.windows(2) {
        sched_increasing &= w[1].1 >= w[0].1 - 2.0 * (w[0].2 + w[1].2);
    }
    let last = fixed_stats.last().unwrap();
    let slast = sched_stats.last().unwrap();
    let pass_floor = p.quick || last.1 >= LOCALIZATION_BETA8_FLOOR;
    let pass_sched_floor = if p.quick { true } else { slast.1 >= LOCALIZATION_SCHEDULE_BETA8_FLOOR };
    let fixed_fmt: Vec<String> =
        fixed_stats.iter().map(|(b, m, se)| format!("beta={b}:{m:.4}±{se:.4}")).collect();
    let sched_fmt: Vec<String> =
        sched_stats.iter().map(|(b, m, se)| format!("beta={b}:{m:.4}±{se:.4}")).collect();
    vec![
        Verdict::new(
            "localization.trend-fixed-eps",
            increasing && pass_floor,
            format!("Cesaro atom mass (eps=0.05): {} (floor {LOCALIZATION_BETA8_FLOOR})", fixed_fmt.join(" ")),
        ),
        Verdict::new(
            "localization.trend-schedule",
            sched_increasing && pass_sched_floor,
            format!("Cesaro atom mass (eps_j = 1/ln(j+2)): {}", sched_fmt.join(" ")),
        ),
    ]
}

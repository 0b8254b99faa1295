//! Independent oracle for the lattice kernels: enumerates all `(2d)^n`
//! equally likely walk paths and computes the partition function, the
//! predictive laws, and the maximal path energy by direct counting. Shares
//! no code with the forward recursions beyond the field itself.

use crate::dp::DpError;
use crate::env::Field;
use crate::lattice::Site;
use crate::numeric::log_sum_exp;
use std::collections::BTreeMap;

/// Exact references computed by full enumeration.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub log_z: f64,
    /// `nu_seq[j-1][x] = mu_{j-1}(w_j = x)` for `j = 1..=n`.
    pub nu_seq: Vec<BTreeMap<Site, f64>>,
    /// Maximum over paths of the raw energy `sum_j eta(j, w_j)` (identity
    /// transform, never truncated).
    pub max_energy: f64,
}

fn oracle_cap(d: usize) -> u32 {
    match d {
        1 => 14,
        2 => 8,
        _ => 7,
    }
}

/// Enumerate every oriented path of length `n` and aggregate. `trunc`
/// clamps the Hamiltonian (not the max energy) to `[-L, L]` per site.
pub fn brute_force_oracle<F: Field>(
    field: &F,
    beta: f64,
    n: u32,
    d: usize,
    trunc: Option<f64>,
) -> Result<OracleResult, DpError> {
    if !(1..=3).contains(&d) {
        return Err(DpError::UnsupportedDimension(d));
    }
    if n < 1 {
        return Err(DpError::InvalidHorizon(n));
    }
    let n_max = oracle_cap(d);
    if n > n_max {
        return Err(DpError::EnumerationTooLarge {
            paths: (2.0 * d as f64).powi(n as i32),
            d,
            n_max,
        });
    }
    let weight = move |eta: f64| match trunc {
        Some(l) => eta.clamp(-l, l),
        None => eta,
    };
    // levels[j-1]: one entry per length-j prefix: (position at j, beta * H_{j-1})
    let mut levels: Vec<Vec<(Site, f64)>> = vec![Vec::new(); n as usize];
    let mut finals: Vec<f64> = Vec::new();
    let mut max_raw = f64::NEG_INFINITY;

    struct Dfs<'a, F: Field, W: Fn(f64) -> f64> {
        field: &'a F,
        weight: W,
        beta: f64,
        n: u32,
        d: usize,
    }
    impl<'a, F: Field, W: Fn(f64) -> f64> Dfs<'a, F, W> {
        #[allow(clippy::too_many_arguments)]
        fn go(
            &self,
            j: u32,
            x: Site,
            bw: f64,
            raw: f64,
            levels: &mut [Vec<(Site, f64)>],
            finals: &mut Vec<f64>,
            max_raw: &mut f64,
        ) {
            for y in x.neighbors(self.d) {
                levels[(j - 1) as usize].push((y, bw));
                let eta = self.field.sample(j, y);
                let new_bw = bw + self.beta * (self.weight)(eta);
                let new_raw = raw + eta;
                if j == self.n {
                    finals.push(new_bw);
                    if new_raw > *max_raw {
                        *max_raw = new_raw;
                    }
                } else {
                    self.go(j + 1, y, new_bw, new_raw, levels, finals, max_raw);
                }
            }
        }
    }
    let dfs = Dfs { field, weight, beta, n, d };
    dfs.go(1, Site::ORIGIN, 0.0, 0.0, &mut levels, &mut finals, &mut max_raw);

    let log_z = log_sum_exp(&finals) - (finals.len() as f64).ln();
    let mut nu_seq = Vec::with_capacity(n as usize);
    for level in &levels {
        let mut groups: BTreeMap<Site, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::with_capacity(level.len());
        for &(x, w) in level {
            groups.entry(x).or_default().push(w);
            all.push(w);
        }
        let denom = log_sum_exp(&all);
        let nu: BTreeMap<Site, f64> =
            groups.into_iter().map(|(x, ws)| (x, (log_sum_exp(&ws) - denom).exp())).collect();
        nu_seq.push(nu);
    }
    Ok(OracleResult { log_z, nu_seq, max_energy: max_raw })
}

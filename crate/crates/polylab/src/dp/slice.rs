//! Time-slice storage and the lattice stencil kernels.
//!
//! One slice holds the values attached to the reachable sites at a fixed
//! time `j`. Storage is dense inside a per-axis window:
//!
//! - `d = 1`: the cone is an interval; entries indexed by `x` with step 2
//!   (parity `x ≡ j mod 2` leaves no holes).
//! - `d = 2`: rotated coordinates `u = x1 + x2`, `v = x1 - x2` turn the
//!   diamond cone into a square and remove all parity holes; both axes
//!   step 2.
//! - `d = 3`: raw coordinates in a box; cells with the wrong parity are
//!   structural holes and stay at the empty value.
//!
//! Measure slices are kept unnormalized with an explicit `norm` multiplier
//! (applied by the accessors); the forward step folds the previous
//! normalization into the convolution constant, so each step makes two
//! dense traversals: one fused convolve+sample pass and one exponentiation
//! pass. Windows grow by one lattice step per time step and are trimmed
//! back to the bounding box of the cells above the pruning threshold; the
//! trimmed mass is accumulated exactly from the dropped faces. Iteration is
//! always in storage order (lexicographic in the internal coordinates),
//! which fixes every reduction order independent of thread count.

use crate::dp::DpError;
use crate::env::Field;
use crate::lattice::Site;
use crate::numeric::Kahan;

#[derive(Clone, Debug)]
pub struct LatticeSlice {
    d: usize,
    j: u32,
    lo: [i32; 3],
    len: [usize; 3],
    /// Multiplier applied to raw stored values by all mass accessors.
    norm: f64,
    vals: Vec<f64>,
}

/// Result of one measure step.
pub(crate) struct StepOutcome {
    /// `ln(Z_j / Z_{j-1})`.
    pub increment: f64,
    /// Fraction of the step's mass removed by window trimming.
    pub pruned_fraction: f64,
}

impl LatticeSlice {
    /// The `j = 0` slice: unit value at the origin.
    pub fn point_mass(d: usize, value: f64) -> Self {
        LatticeSlice { d, j: 0, lo: [0, 0, 0], len: [1, 1, 1], norm: 1.0, vals: vec![value] }
    }

    pub(crate) fn empty(d: usize) -> Self {
        Self::point_mass(d, 0.0)
    }

    pub fn j(&self) -> u32 {
        self.j
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of stored cells (window volume, including structural holes).
    pub fn cells(&self) -> usize {
        self.len[0] * self.len[1] * self.len[2]
    }

    pub(crate) fn raw_total(&self) -> f64 {
        let mut acc = Kahan::new();
        for &v in &self.vals {
            acc.add(v);
        }
        acc.value()
    }

    fn strides(&self) -> [usize; 3] {
        [self.len[1] * self.len[2], self.len[2], 1]
    }

    #[inline(always)]
    fn site_at(&self, i: [usize; 3]) -> Site {
        match self.d {
            1 => Site::new([self.lo[0] + 2 * i[0] as i32, 0, 0]),
            2 => {
                let u = self.lo[0] + 2 * i[0] as i32;
                let v = self.lo[1] + 2 * i[1] as i32;
                Site::new([(u + v) / 2, (u - v) / 2, 0])
            }
            _ => Site::new([
                self.lo[0] + i[0] as i32,
                self.lo[1] + i[1] as i32,
                self.lo[2] + i[2] as i32,
            ]),
        }
    }

    fn active_axes(&self) -> usize {
        match self.d {
            1 => 1,
            2 => 2,
            _ => 3,
        }
    }

    fn index_of(&self, x: Site) -> Option<usize> {
        let c = match self.d {
            1 => [x.0[0], 0, 0],
            2 => [x.0[0] + x.0[1], x.0[0] - x.0[1], 0],
            _ => x.0,
        };
        let step = if self.d <= 2 { 2 } else { 1 };
        let axes = self.active_axes();
        let mut idx = [0usize; 3];
        for k in 0..axes {
            let off = c[k] - self.lo[k];
            if off < 0 || off % step != 0 {
                return None;
            }
            let i = (off / step) as usize;
            if i >= self.len[k] {
                return None;
            }
            idx[k] = i;
        }
        if self.d == 3 && (x.coord_sum() - self.j as i64).rem_euclid(2) != 0 {
            return None;
        }
        if self.d < 3 && x.0[self.d..].iter().any(|&v| v != 0) {
            return None;
        }
        let s = self.strides();
        Some(idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2])
    }

    /// Mass at a site; 0 outside the window.
    pub fn mass(&self, x: Site) -> f64 {
        self.index_of(x).map_or(0.0, |i| self.vals[i] * self.norm)
    }

    /// Natural-log mass at a site; `-inf` where no mass is stored.
    pub fn ln_mass(&self, x: Site) -> f64 {
        self.mass(x).ln()
    }

    /// Raw stored value with an explicit default (used by max-plus slices,
    /// where the empty value is `-inf` and `norm` is 1).
    pub fn value_or(&self, x: Site, default: f64) -> f64 {
        self.index_of(x).map_or(default, |i| self.vals[i])
    }

    /// Visit every stored cell whose raw value differs from `empty`, in
    /// storage order, yielding normalized values.
    pub fn for_each_above(&self, empty: f64, mut f: impl FnMut(Site, f64)) {
        let s = self.strides();
        for i0 in 0..self.len[0] {
            for i1 in 0..self.len[1] {
                for i2 in 0..self.len[2] {
                    let v = self.vals[i0 * s[0] + i1 * s[1] + i2 * s[2]];
                    if v > empty {
                        f(self.site_at([i0, i1, i2]), v * self.norm);
                    }
                }
            }
        }
    }

    /// Visit every site with positive mass.
    pub fn for_each_mass(&self, f: impl FnMut(Site, f64)) {
        self.for_each_above(0.0, f)
    }

    /// Collect the nonzero cells into an ordered map (tests, serialization).
    pub fn to_map(&self) -> std::collections::BTreeMap<Site, f64> {
        let mut m = std::collections::BTreeMap::new();
        self.for_each_mass(|x, v| {
            m.insert(x, v);
        });
        m
    }

    /// Kahan total of all stored masses.
    pub fn total_mass(&self) -> f64 {
        self.raw_total() * self.norm
    }

    /// Largest stored value (normalized for measure slices) and its site
    /// (first in storage order on ties).
    pub fn max_entry(&self) -> (f64, Site) {
        let mut best = f64::NEG_INFINITY;
        let mut site = Site::ORIGIN;
        self.for_each_above(f64::NEG_INFINITY, |x, v| {
            if v > best {
                best = v;
                site = x;
            }
        });
        (best, site)
    }

    /// Check the geometric invariants: every stored (non-empty) site has the
    /// parity of `j` and lies in the l1 ball of radius `j`.
    pub fn geometry_ok(&self, empty: f64) -> bool {
        let mut ok = true;
        let j = self.j;
        let d = self.d;
        self.for_each_above(empty, |x, _| {
            ok &= x.reachable_at(j, d);
        });
        ok
    }

    /// Window for the next time step: every active axis grows one lattice
    /// step on each side (step-2 axes interleave, gaining one cell; step-1
    /// axes gain two).
    fn grown(&self) -> ([i32; 3], [usize; 3]) {
        let mut lo = self.lo;
        let mut len = self.len;
        for k in 0..self.active_axes() {
            lo[k] -= 1;
            len[k] += if self.d <= 2 { 1 } else { 2 };
        }
        (lo, len)
    }

    pub(crate) fn grown_cells(&self) -> usize {
        let (_, len) = self.grown();
        len[0] * len[1] * len[2]
    }

    fn reshape(&mut self, d: usize, j: u32, lo: [i32; 3], len: [usize; 3], fill: f64) {
        self.d = d;
        self.j = j;
        self.lo = lo;
        self.len = len;
        self.norm = 1.0;
        self.vals.clear();
        self.vals.resize(len[0] * len[1] * len[2], fill);
    }

    // -----------------------------------------------------------------
    // Measure kernel
    // -----------------------------------------------------------------

    /// One forward step of the endpoint-measure recursion.
    ///
    /// Reads `prev = rho_{j-1}` (raw values summing to `prev_total`), writes
    /// `nu = nu_j` (normalized) and `rho_out = rho_j` (raw values with
    /// `1/total` recorded in `norm`). Returns the step outcome plus the raw
    /// total of `rho_out`, to be fed back as the next `prev_total`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn measure_step<F: Field, W: Fn(f64) -> f64>(
        prev: &LatticeSlice,
        prev_total: f64,
        nu: &mut LatticeSlice,
        rho_out: &mut LatticeSlice,
        field: &F,
        beta: f64,
        weight: &W,
        prune_rel: f64,
        lw: &mut Vec<f64>,
    ) -> Result<(StepOutcome, f64), DpError> {
        let (lo, len) = prev.grown();
        let j = prev.j + 1;
        nu.reshape(prev.d, j, lo, len, 0.0);
        let cells = nu.cells();
        let sample = beta != 0.0;
        if sample {
            lw.clear();
            lw.resize(cells, f64::NEG_INFINITY);
        }
        let inv = 1.0 / (2.0 * prev.d as f64 * prev_total);
        let mut s_nu = Kahan::new();
        let mut max_exp = f64::NEG_INFINITY;
        let mut bad: Option<(Site, f64)> = None;
        // fused pass: convolve (previous normalization folded into `inv`)
        // and sample the fresh environment layer on occupied cells
        match prev.d {
            1 => {
                let pn = prev.len[0];
                let pv = &prev.vals;
                for i in 0..len[0] {
                    let a = if i >= 1 { pv[i - 1] } else { 0.0 };
                    let b = if i < pn { pv[i] } else { 0.0 };
                    let v = inv * (a + b);
                    nu.vals[i] = v;
                    s_nu.add(v);
                    if sample && v > 0.0 {
                        let site = Site::new([lo[0] + 2 * i as i32, 0, 0]);
                        let w = beta * weight(field.sample(j, site));
                        if !w.is_finite() && bad.is_none() {
                            bad = Some((site, w));
                        }
                        lw[i] = w;
                        if w > max_exp {
                            max_exp = w;
                        }
                    }
                }
            }
            2 => {
                let (pu, pvn) = (prev.len[0], prev.len[1]);
                let pv = &prev.vals;
                let vlen = len[1];
                for iu in 0..len[0] {
                    let u = lo[0] + 2 * iu as i32;
                    let row0: Option<&[f64]> =
                        if iu >= 1 && iu - 1 < pu { Some(&pv[(iu - 1) * pvn..iu * pvn]) } else { None };
                    let row1: Option<&[f64]> =
                        if iu < pu { Some(&pv[iu * pvn..(iu + 1) * pvn]) } else { None };
                    for iv in 0..vlen {
                        let mut acc = 0.0;
                        for row in [row0, row1].into_iter().flatten() {
                            if iv >= 1 {
                                acc += row[iv - 1];
                            }
                            if iv < pvn {
                                acc += row[iv];
                            }
                        }
                        let v = inv * acc;
                        let idx = iu * vlen + iv;
                        nu.vals[idx] = v;
                        s_nu.add(v);
                        if sample && v > 0.0 {
                            let vv = lo[1] + 2 * iv as i32;
                            let site = Site::new([(u + vv) / 2, (u - vv) / 2, 0]);
                            let w = beta * weight(field.sample(j, site));
                            if !w.is_finite() && bad.is_none() {
                                bad = Some((site, w));
                            }
                            lw[idx] = w;
                            if w > max_exp {
                                max_exp = w;
                            }
                        }
                    }
                }
            }
            _ => {
                let [pl0, pl1, pl2] = prev.len;
                let (ps0, ps1) = (pl1 * pl2, pl2);
                let pv: &[f64] = &prev.vals;
                let s = nu.strides();
                let jj = j as i64;
                for i0 in 0..len[0] {
                    let x1 = lo[0] + i0 as i32;
                    let p0 = x1 - prev.lo[0];
                    let in0 = p0 >= 1 && (p0 as usize) + 1 < pl0;
                    for i1 in 0..len[1] {
                        let x2 = lo[1] + i1 as i32;
                        let p1 = x2 - prev.lo[1];
                        let in1 = p1 >= 1 && (p1 as usize) + 1 < pl1;
                        let want = (jj - x1 as i64 - x2 as i64).rem_euclid(2);
                        let start = ((lo[2] as i64 - want).rem_euclid(2)) as usize;
                        let row = i0 * s[0] + i1 * s[1];
                        let interior = in0 && in1;
                        let pb_row = if interior { p0 as usize * ps0 + p1 as usize * ps1 } else { 0 };
                        let mut i2 = start;
                        while i2 < len[2] {
                            let p2 = i2 as i32 - 1; // lo[2] = prev.lo[2] - 1
                            let acc = if interior && p2 >= 1 && (p2 as usize) + 1 < pl2 {
                                let pb = pb_row + p2 as usize;
                                pv[pb - ps0]
                                    + pv[pb + ps0]
                                    + pv[pb - ps1]
                                    + pv[pb + ps1]
                                    + pv[pb - 1]
                                    + pv[pb + 1]
                            } else {
                                pget(pv, prev.len, p0 - 1, p1, p2)
                                    + pget(pv, prev.len, p0 + 1, p1, p2)
                                    + pget(pv, prev.len, p0, p1 - 1, p2)
                                    + pget(pv, prev.len, p0, p1 + 1, p2)
                                    + pget(pv, prev.len, p0, p1, p2 - 1)
                                    + pget(pv, prev.len, p0, p1, p2 + 1)
                            };
                            let v = inv * acc;
                            nu.vals[row + i2] = v;
                            s_nu.add(v);
                            if sample && v > 0.0 {
                                let site = Site::new([x1, x2, lo[2] + i2 as i32]);
                                let w = beta * weight(field.sample(j, site));
                                if !w.is_finite() && bad.is_none() {
                                    bad = Some((site, w));
                                }
                                lw[row + i2] = w;
                                if w > max_exp {
                                    max_exp = w;
                                }
                            }
                            i2 += 2;
                        }
                    }
                }
            }
        }
        if let Some((site, value)) = bad {
            return Err(DpError::NonFiniteWeight { j, site, value });
        }
        let s_nu = s_nu.value();
        if !(s_nu > 0.0) {
            return Err(DpError::NonFiniteWeight { j, site: Site::ORIGIN, value: s_nu });
        }
        // exponentiation pass: t = nu * exp(lw - max)
        rho_out.reshape(nu.d, j, nu.lo, nu.len, 0.0);
        let mut s_full = Kahan::new();
        let mut max_t = 0.0f64;
        if sample {
            for idx in 0..cells {
                let nv = nu.vals[idx];
                let t = if nv > 0.0 { nv * (lw[idx] - max_exp).exp() } else { 0.0 };
                rho_out.vals[idx] = t;
                s_full.add(t);
                if t > max_t {
                    max_t = t;
                }
            }
        } else {
            rho_out.vals.copy_from_slice(&nu.vals);
            for &v in &rho_out.vals {
                s_full.add(v);
                if v > max_t {
                    max_t = v;
                }
            }
        }
        let s_full = s_full.value();
        // trim the window to the bounding box of cells >= tau, accumulating
        // the dropped values exactly (a plane is dropped at most once, so
        // nothing is double counted)
        let tau = max_t * prune_rel;
        let mut blo = [0usize; 3];
        let mut bhi = [len[0] - 1, len[1] - 1, len[2] - 1];
        let mut dropped = Kahan::new();
        for k in 0..nu.active_axes() {
            while blo[k] < bhi[k]
                && face_below(&rho_out.vals, len, k, blo, bhi, blo[k], tau, &mut dropped)
            {
                blo[k] += 1;
            }
            while bhi[k] > blo[k]
                && face_below(&rho_out.vals, len, k, blo, bhi, bhi[k], tau, &mut dropped)
            {
                bhi[k] -= 1;
            }
        }
        let trimmed = blo != [0, 0, 0] || (0..3).any(|k| bhi[k] != len[k] - 1);
        let (s_kept, pruned_fraction) = if trimmed {
            let dropped = dropped.value();
            (s_full - dropped, (dropped / s_full).max(0.0))
        } else {
            (s_full, 0.0)
        };
        let increment = if beta == 0.0 { 0.0 } else { max_exp + s_kept.ln() - s_nu.ln() };
        if trimmed {
            // compact rows (contiguous along axis 2) into the new layout
            let new_len = [bhi[0] - blo[0] + 1, bhi[1] - blo[1] + 1, bhi[2] - blo[2] + 1];
            let src_s = [len[1] * len[2], len[2], 1];
            for i0 in blo[0]..=bhi[0] {
                for i1 in blo[1]..=bhi[1] {
                    let src = i0 * src_s[0] + i1 * src_s[1] + blo[2];
                    let dst =
                        (i0 - blo[0]) * new_len[1] * new_len[2] + (i1 - blo[1]) * new_len[2];
                    rho_out.vals.copy_within(src..src + new_len[2], dst);
                }
            }
            let step = if nu.d <= 2 { 2 } else { 1 };
            rho_out.lo = [
                nu.lo[0] + step * blo[0] as i32,
                nu.lo[1] + step * blo[1] as i32,
                nu.lo[2] + step * blo[2] as i32,
            ];
            rho_out.len = new_len;
            rho_out.vals.truncate(new_len[0] * new_len[1] * new_len[2]);
        }
        rho_out.norm = 1.0 / s_kept;
        nu.norm = 1.0;
        Ok((StepOutcome { increment, pruned_fraction }, s_kept))
    }

    // -----------------------------------------------------------------
    // Max-plus kernel
    // -----------------------------------------------------------------

    /// `self <- V_{j+1}` where `V_{j+1}(x) = w(eta(j+1,x)) + max` over the 2d
    /// neighbours of `V_j`. Empty cells are `-inf`; no trimming (the maximum
    /// is exact over the whole cone).
    pub(crate) fn maxplus_from<F: Field, W: Fn(f64) -> f64>(
        &mut self,
        prev: &LatticeSlice,
        field: &F,
        weight: &W,
    ) -> Result<(), DpError> {
        let (lo, len) = prev.grown();
        self.reshape(prev.d, prev.j + 1, lo, len, f64::NEG_INFINITY);
        let s = self.strides();
        let mut bad: Option<(Site, f64)> = None;
        match prev.d {
            1 => {
                let pn = prev.len[0];
                let pv = &prev.vals;
                for i in 0..self.len[0] {
                    let a = if i >= 1 { pv[i - 1] } else { f64::NEG_INFINITY };
                    let b = if i < pn { pv[i] } else { f64::NEG_INFINITY };
                    let m = a.max(b);
                    if m > f64::NEG_INFINITY {
                        let site = self.site_at([i, 0, 0]);
                        let w = weight(field.sample(self.j, site));
                        if !w.is_finite() && bad.is_none() {
                            bad = Some((site, w));
                        }
                        self.vals[i] = m + w;
                    }
                }
            }
            2 => {
                let (pu, pvn) = (prev.len[0], prev.len[1]);
                let pv = &prev.vals;
                for iu in 0..self.len[0] {
                    for iv in 0..self.len[1] {
                        let mut m = f64::NEG_INFINITY;
                        for a in [iu.wrapping_sub(1), iu] {
                            if a >= pu {
                                continue;
                            }
                            for b in [iv.wrapping_sub(1), iv] {
                                if b < pvn {
                                    m = m.max(pv[a * pvn + b]);
                                }
                            }
                        }
                        if m > f64::NEG_INFINITY {
                            let site = self.site_at([iu, iv, 0]);
                            let w = weight(field.sample(self.j, site));
                            if !w.is_finite() && bad.is_none() {
                                bad = Some((site, w));
                            }
                            self.vals[iu * s[0] + iv * s[1]] = m + w;
                        }
                    }
                }
            }
            _ => {
                let pv = &prev.vals;
                let j = self.j as i64;
                for i0 in 0..self.len[0] {
                    let x1 = self.lo[0] + i0 as i32;
                    let p0 = x1 - prev.lo[0];
                    for i1 in 0..self.len[1] {
                        let x2 = self.lo[1] + i1 as i32;
                        let p1 = x2 - prev.lo[1];
                        let want = (j - x1 as i64 - x2 as i64).rem_euclid(2);
                        let start = ((self.lo[2] as i64 - want).rem_euclid(2)) as usize;
                        let row = i0 * s[0] + i1 * s[1];
                        let mut i2 = start;
                        while i2 < self.len[2] {
                            let p2 = i2 as i32 - 1;
                            let m = mget(pv, prev.len, p0 - 1, p1, p2)
                                .max(mget(pv, prev.len, p0 + 1, p1, p2))
                                .max(mget(pv, prev.len, p0, p1 - 1, p2))
                                .max(mget(pv, prev.len, p0, p1 + 1, p2))
                                .max(mget(pv, prev.len, p0, p1, p2 - 1))
                                .max(mget(pv, prev.len, p0, p1, p2 + 1));
                            if m > f64::NEG_INFINITY {
                                let site = self.site_at([i0, i1, i2]);
                                let w = weight(field.sample(self.j, site));
                                if !w.is_finite() && bad.is_none() {
                                    bad = Some((site, w));
                                }
                                self.vals[row + i2] = m + w;
                            }
                            i2 += 2;
                        }
                    }
                }
            }
        }
        if let Some((site, value)) = bad {
            return Err(DpError::NonFiniteWeight { j: self.j, site, value });
        }
        Ok(())
    }
}

#[inline(always)]
fn pget(pv: &[f64], len: [usize; 3], a: i32, b: i32, c: i32) -> f64 {
    if a < 0 || b < 0 || c < 0 {
        return 0.0;
    }
    let (a, b, c) = (a as usize, b as usize, c as usize);
    if a >= len[0] || b >= len[1] || c >= len[2] {
        return 0.0;
    }
    pv[(a * len[1] + b) * len[2] + c]
}

#[inline(always)]
fn mget(pv: &[f64], len: [usize; 3], a: i32, b: i32, c: i32) -> f64 {
    if a < 0 || b < 0 || c < 0 {
        return f64::NEG_INFINITY;
    }
    let (a, b, c) = (a as usize, b as usize, c as usize);
    if a >= len[0] || b >= len[1] || c >= len[2] {
        return f64::NEG_INFINITY;
    }
    pv[(a * len[1] + b) * len[2] + c]
}

/// If every cell of the plane `index[axis] == plane`, restricted to the
/// current bounding box on the other axes, is below `tau`: add those values
/// to `dropped` and return true.
#[allow(clippy::too_many_arguments)]
fn face_below(
    vals: &[f64],
    len: [usize; 3],
    axis: usize,
    blo: [usize; 3],
    bhi: [usize; 3],
    plane: usize,
    tau: f64,
    dropped: &mut Kahan,
) -> bool {
    let strides = [len[1] * len[2], len[2], 1];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let base = plane * strides[axis];
    for ia in blo[a]..=bhi[a] {
        for ib in blo[b]..=bhi[b] {
            if vals[base + ia * strides[a] + ib * strides[b]] >= tau {
                return false;
            }
        }
    }
    let mut add = Kahan::new();
    for ia in blo[a]..=bhi[a] {
        for ib in blo[b]..=bhi[b] {
            add.add(vals[base + ia * strides[a] + ib * strides[b]]);
        }
    }
    dropped.add(add.value());
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvField, EnvSpec};

    fn conv(prev: &LatticeSlice) -> (LatticeSlice, f64) {
        // measure_step with beta = 0 reduces to pure convolution
        let mut nu = LatticeSlice::empty(prev.dim());
        let mut rho = LatticeSlice::empty(prev.dim());
        let mut lw = Vec::new();
        let field = EnvField::new(EnvSpec::gaussian(0.0, 1.0), 0, 0);
        let total = prev.raw_total();
        LatticeSlice::measure_step(
            prev, total, &mut nu, &mut rho, &field, 0.0, &|e| e, 1e-20, &mut lw,
        )
        .unwrap();
        let t = nu.total_mass();
        (nu, t)
    }

    #[test]
    fn point_mass_geometry() {
        for d in 1..=3 {
            let s = LatticeSlice::point_mass(d, 1.0);
            assert_eq!(s.mass(Site::ORIGIN), 1.0);
            assert_eq!(s.total_mass(), 1.0);
            assert!(s.geometry_ok(0.0));
        }
    }

    #[test]
    fn convolve_d1_two_steps_is_walk_law() {
        let rho0 = LatticeSlice::point_mass(1, 1.0);
        let (nu1, t1) = conv(&rho0);
        assert_eq!(t1, 1.0);
        assert_eq!(nu1.mass(Site::new([-1, 0, 0])), 0.5);
        assert_eq!(nu1.mass(Site::new([1, 0, 0])), 0.5);
        let (nu2, _) = conv(&nu1);
        assert_eq!(nu2.mass(Site::new([-2, 0, 0])), 0.25);
        assert_eq!(nu2.mass(Site::new([0, 0, 0])), 0.5);
        assert_eq!(nu2.mass(Site::new([2, 0, 0])), 0.25);
        assert!(nu2.geometry_ok(0.0));
    }

    #[test]
    fn convolve_d2_first_step() {
        let rho0 = LatticeSlice::point_mass(2, 1.0);
        let (nu1, total) = conv(&rho0);
        assert!((total - 1.0).abs() < 1e-15);
        for site in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            assert_eq!(nu1.mass(Site::new([site[0], site[1], 0])), 0.25);
        }
        assert_eq!(nu1.to_map().len(), 4);
        assert!(nu1.geometry_ok(0.0));
    }

    #[test]
    fn convolve_d3_two_steps_normalized() {
        let rho0 = LatticeSlice::point_mass(3, 1.0);
        let (nu1, t1) = conv(&rho0);
        assert!((t1 - 1.0).abs() < 1e-15);
        assert_eq!(nu1.to_map().len(), 6);
        let (nu2, t2) = conv(&nu1);
        assert!((t2 - 1.0).abs() < 1e-14);
        assert!((nu2.mass(Site::ORIGIN) - 1.0 / 6.0).abs() < 1e-15);
        assert!(nu2.geometry_ok(0.0));
        assert!((nu2.mass(Site::new([1, 1, 0])) - 2.0 / 36.0).abs() < 1e-15);
    }

    #[test]
    fn maxplus_d1_constant_field() {
        let field = EnvField::new(EnvSpec::constant(1.5), 0, 0);
        let mut prev = LatticeSlice::point_mass(1, 0.0);
        let mut cur = LatticeSlice::empty(1);
        for _ in 0..5 {
            cur.maxplus_from(&prev, &field, &|e| e).unwrap();
            std::mem::swap(&mut prev, &mut cur);
        }
        let (m, _) = prev.max_entry();
        assert!((m - 7.5).abs() < 1e-12);
        assert!(prev.geometry_ok(f64::NEG_INFINITY));
    }
}

#[cfg(test)]
mod reference_tests {
    use super::*;
    use crate::env::{EnvField, EnvSpec, Field};

    #[test]
    fn asymmetric_beta_step_matches_map_reference() {
        let field = EnvField::new(EnvSpec::gaussian(0.0, 1.0), 1000, 3);
        let beta = 0.3;
        let d = 3;
        // reference: map-based full recursion
        let mut ref_rho: std::collections::BTreeMap<Site, f64> = Default::default();
        ref_rho.insert(Site::ORIGIN, 1.0);
        let mut prev = LatticeSlice::point_mass(d, 1.0);
        let mut prev_total = 1.0;
        let mut nu = LatticeSlice::empty(d);
        let mut rho = LatticeSlice::empty(d);
        let mut lw = Vec::new();
        for j in 1..=4u32 {
            // reference step
            let mut ref_nu: std::collections::BTreeMap<Site, f64> = Default::default();
            for (x, v) in &ref_rho {
                for y in x.neighbors(d) {
                    *ref_nu.entry(y).or_insert(0.0) += v / 6.0;
                }
            }
            let mut ref_next: std::collections::BTreeMap<Site, f64> = Default::default();
            let mut z = 0.0;
            for (x, v) in &ref_nu {
                let t = v * (beta * field.sample(j, *x)).exp();
                z += t;
                ref_next.insert(*x, t);
            }
            for v in ref_next.values_mut() {
                *v /= z;
            }
            // kernel step
            let (_, total) = LatticeSlice::measure_step(
                &prev, prev_total, &mut nu, &mut rho, &field, beta, &|e| e, 1e-20, &mut lw,
            )
            .unwrap();
            assert!((rho.raw_total() - total).abs() < 1e-12);
            for (x, v) in &ref_nu {
                let g = nu.mass(*x);
                assert!((g - v).abs() < 1e-13, "nu mismatch at j={j} {x}: {g} vs {v}");
            }
            for (x, v) in &ref_next {
                let g = rho.mass(*x);
                assert!((g - v).abs() < 1e-13, "j={j} rho({x}): kernel {g} vs ref {v}");
            }
            std::mem::swap(&mut prev, &mut rho);
            prev_total = total;
            ref_rho = ref_next;
        }
    }
}

//! Lattice sites for the nearest-neighbour walk on `Z^d`, `d <= 3`.
//!
//! A [`Site`] always carries three coordinates; components beyond the active
//! dimension are zero. Ordering is lexicographic, which fixes deterministic
//! iteration orders throughout the crate.

/// Maximum spatial dimension supported by the lattice kernels.
pub const MAX_DIM: usize = 3;

/// A lattice site in `Z^d` (`d <= 3`), padded with zeros beyond dimension `d`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Site(pub [i32; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn new(coords: [i32; MAX_DIM]) -> Self {
        Site(coords)
    }

    /// Site from the first `d` coordinates, zero-padded.
    pub fn from_slice(coords: &[i32]) -> Self {
        let mut c = [0i32; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    /// `l1 norm = |x_1| + |x_2| + |x_3|`.
    pub fn l1_norm(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64).abs()).sum()
    }

    /// Coordinate sum, used for the parity constraint `sum(x) ≡ j (mod 2)`.
    pub fn coord_sum(&self) -> i64 {
        self.0.iter().map(|&c| c as i64).sum()
    }

    /// Whether this site is reachable from the origin in exactly `j` steps of
    /// the simple walk: parity matches and the l1 ball constraint holds.
    pub fn reachable_at(&self, j: u32, d: usize) -> bool {
        if self.0[d..].iter().any(|&c| c != 0) {
            return false;
        }
        self.l1_norm() <= j as i64 && (self.coord_sum() - j as i64).rem_euclid(2) == 0
    }

    /// The `2d` nearest neighbours, in a fixed order (`+e1, -e1, +e2, ...`).
    pub fn neighbors(&self, d: usize) -> impl Iterator<Item = Site> + '_ {
        (0..d).flat_map(move |axis| {
            [1i32, -1].into_iter().map(move |sgn| {
                let mut c = self.0;
                c[axis] += sgn;
                Site(c)
            })
        })
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.0[0], self.0[1], self.0[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbor_count_and_order() {
        let s = Site::new([2, -1, 0]);
        let nb: Vec<Site> = s.neighbors(2).collect();
        assert_eq!(nb.len(), 4);
        assert_eq!(nb[0], Site::new([3, -1, 0]));
        assert_eq!(nb[1], Site::new([1, -1, 0]));
        assert_eq!(nb[2], Site::new([2, 0, 0]));
        assert_eq!(nb[3], Site::new([2, -2, 0]));
    }

    #[test]
    fn reachability() {
        assert!(Site::new([1, 0, 0]).reachable_at(1, 1));
        assert!(!Site::new([0, 0, 0]).reachable_at(1, 1));
        assert!(Site::new([0, 0, 0]).reachable_at(2, 1));
        assert!(!Site::new([3, 0, 0]).reachable_at(2, 1));
        // wrong parity in d=2
        assert!(!Site::new([1, 1, 0]).reachable_at(3, 2));
        assert!(Site::new([1, 2, 0]).reachable_at(3, 2));
        // nonzero coordinate beyond the active dimension
        assert!(!Site::new([1, 1, 0]).reachable_at(2, 1));
    }
}

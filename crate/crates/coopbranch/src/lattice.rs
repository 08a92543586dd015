//! Occupancy configurations on a finite one-dimensional lattice.
//!
//! Sites are indexed `0..l`. A bond `b` is the edge between site `b` and
//! site `b + 1` (mod `l` on a ring); bonds double as the half-integer
//! interval boundaries used by the dual walks, bond `b` sitting at
//! coordinate `b + 1/2`.

use crate::error::{Error, Result};

/// Boundary handling for the finite lattice.
///
/// `Periodic` wraps site `l - 1` onto site `0`. `Window` is an absorbing
/// frame for runs whose particles provably stay interior; engines treat any
/// contact with site `0` or `l - 1` as a hard error rather than silently
/// truncating the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Window,
}

/// Bit-packed occupancy of a finite lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    words: Vec<u64>,
    l: u32,
    boundary: Boundary,
}

const MIN_SITES: u32 = 3;

impl Configuration {
    /// Builds a configuration from a list of occupied sites. Duplicate
    /// indices collapse to one particle; an index `>= l` is rejected.
    pub fn new(l: u32, occupied: &[u32], boundary: Boundary) -> Result<Self> {
        if l < MIN_SITES {
            return Err(Error::invalid(format!(
                "lattice needs at least {MIN_SITES} sites, got {l}"
            )));
        }
        let mut cfg = Configuration {
            words: vec![0u64; Self::word_count(l)],
            l,
            boundary,
        };
        for &s in occupied {
            if s >= l {
                return Err(Error::invalid(format!(
                    "site {s} out of range for {l} sites"
                )));
            }
            cfg.words[(s / 64) as usize] |= 1u64 << (s % 64);
        }
        Ok(cfg)
    }

    pub fn fully_occupied(l: u32, boundary: Boundary) -> Result<Self> {
        if l < MIN_SITES {
            return Err(Error::invalid(format!(
                "lattice needs at least {MIN_SITES} sites, got {l}"
            )));
        }
        let mut words = vec![!0u64; Self::word_count(l)];
        mask_tail(&mut words, l);
        Ok(Configuration { words, l, boundary })
    }

    fn word_count(l: u32) -> usize {
        (l as usize).div_ceil(64)
    }

    #[must_use]
    pub fn len(&self) -> u32 {
        self.l
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[must_use]
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    #[must_use]
    pub fn is_occupied(&self, site: u32) -> bool {
        debug_assert!(site < self.l);
        self.words[(site / 64) as usize] >> (site % 64) & 1 == 1
    }

    pub fn set(&mut self, site: u32, occupied: bool) {
        debug_assert!(site < self.l);
        let w = &mut self.words[(site / 64) as usize];
        if occupied {
            *w |= 1u64 << (site % 64);
        } else {
            *w &= !(1u64 << (site % 64));
        }
    }

    /// Number of particles. The engines maintain incremental counters; this
    /// popcount is the ground truth they are checked against.
    #[must_use]
    pub fn particle_count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    #[must_use]
    pub fn occupied_sites(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.particle_count() as usize);
        for (wi, &w) in self.words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                let b = bits.trailing_zeros();
                out.push(wi as u32 * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }

    /// Sites `i` such that both `i` and its right neighbor are occupied.
    /// On a ring the pair `{l - 1, 0}` reports as `l - 1`.
    #[must_use]
    pub fn adjacent_pairs(&self) -> Vec<u32> {
        let shifted = self.rotated_left(1);
        let mut out = Vec::new();
        let limit = match self.boundary {
            Boundary::Periodic => self.l,
            Boundary::Window => self.l - 1,
        };
        for (wi, (&a, &b)) in self.words.iter().zip(&shifted).enumerate() {
            let mut bits = a & b;
            while bits != 0 {
                let t = bits.trailing_zeros();
                let site = wi as u32 * 64 + t;
                if site < limit {
                    out.push(site);
                }
                bits &= bits - 1;
            }
        }
        out
    }

    /// Word vector whose bit `i` is `self[i + shift mod l]`.
    fn rotated_left(&self, shift: u32) -> Vec<u64> {
        let l = self.l as u64;
        let shift = (shift as u64) % l;
        let mut out = vec![0u64; self.words.len()];
        if shift == 0 {
            out.copy_from_slice(&self.words);
            return out;
        }
        for i in 0..l {
            let src = (i + shift) % l;
            if self.words[(src / 64) as usize] >> (src % 64) & 1 == 1 {
                out[(i / 64) as usize] |= 1u64 << (i % 64);
            }
        }
        out
    }

    /// Number of windows of the given all-ones length that are fully
    /// occupied: length 1 counts particles, 2 counts adjacent pairs, 3
    /// counts adjacent triples. Wrapping windows count only on a ring.
    #[must_use]
    pub fn count_runs(&self, len: u32) -> u32 {
        debug_assert!(len >= 1 && len <= self.l);
        let mut acc = self.words.clone();
        for k in 1..len {
            let rot = self.rotated_left(k);
            for (a, b) in acc.iter_mut().zip(&rot) {
                *a &= *b;
            }
        }
        let limit = match self.boundary {
            Boundary::Periodic => self.l,
            Boundary::Window => self.l + 1 - len,
        };
        count_below(&acc, limit)
    }
}

fn mask_tail(words: &mut [u64], l: u32) {
    let rem = l % 64;
    if rem != 0 {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << rem) - 1;
        }
    }
}

fn count_below(words: &[u64], limit: u32) -> u32 {
    let mut total = 0;
    for (wi, &w) in words.iter().enumerate() {
        let base = wi as u32 * 64;
        if base >= limit {
            break;
        }
        let take = (limit - base).min(64);
        let mask = if take == 64 {
            !0u64
        } else {
            (1u64 << take) - 1
        };
        total += (w & mask).count_ones();
    }
    total
}

/// Fraction of uniformly positioned windows across the sample that match the
/// pattern, e.g. `"11"` for adjacent pairs or `"101"` for a hole between
/// particles. Windows wrap on periodic lattices and stay interior on
/// absorbing windows.
pub fn pattern_density(sample: &[Configuration], pattern: &str) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if pattern.is_empty() || !pattern.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(Error::invalid(format!(
            "pattern must be nonempty over {{0,1}}, got {pattern:?}"
        )));
    }
    let plen = pattern.len() as u32;
    let mut matches: u64 = 0;
    let mut windows: u64 = 0;
    for cfg in sample {
        if plen > cfg.len() {
            return Err(Error::invalid(format!(
                "pattern of length {plen} does not fit a lattice of {} sites",
                cfg.len()
            )));
        }
        let mut acc = vec![!0u64; cfg.words.len()];
        mask_tail(&mut acc, cfg.l);
        for (k, b) in pattern.bytes().enumerate() {
            let mut rot = cfg.rotated_left(k as u32);
            if b == b'0' {
                for w in rot.iter_mut() {
                    *w = !*w;
                }
                mask_tail(&mut rot, cfg.l);
            }
            for (a, r) in acc.iter_mut().zip(&rot) {
                *a &= *r;
            }
        }
        let limit = match cfg.boundary {
            Boundary::Periodic => cfg.l,
            Boundary::Window => cfg.l + 1 - plen,
        };
        matches += u64::from(count_below(&acc, limit));
        windows += u64::from(limit);
    }
    if windows == 0 {
        return Err(Error::EmptySample);
    }
    Ok(matches as f64 / windows as f64)
}

/// A pair of adjacent lattice intervals sharing the middle boundary, the
/// unit the set-valued dual process is built from.
///
/// Boundaries are bonds `i`, `j`, `k`; the intervals are the site runs
/// `(i, j]` and `(j, k]` walked rightward (wrapping on the ring), so each
/// must be nonempty and together they may not cover the whole ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntervalPair {
    l: u32,
    i: u32,
    first_len: u32,
    second_len: u32,
}

impl IntervalPair {
    pub fn new(l: u32, i: u32, j: u32, k: u32) -> Result<Self> {
        if l < MIN_SITES || i >= l || j >= l || k >= l {
            return Err(Error::invalid(format!(
                "boundaries ({i},{j},{k}) out of range for {l} bonds"
            )));
        }
        let first_len = (j + l - i) % l;
        let second_len = (k + l - j) % l;
        if first_len == 0 || second_len == 0 {
            return Err(Error::invalid(
                "interval pair has an empty side".to_string(),
            ));
        }
        if first_len + second_len > l - 1 {
            return Err(Error::invalid(
                "interval pair wraps onto itself".to_string(),
            ));
        }
        Ok(IntervalPair {
            l,
            i,
            first_len,
            second_len,
        })
    }

    /// Left boundary bond (coordinate `i + 1/2`).
    #[must_use]
    pub fn i(&self) -> u32 {
        self.i
    }

    /// Shared middle boundary bond.
    #[must_use]
    pub fn j(&self) -> u32 {
        (self.i + self.first_len) % self.l
    }

    /// Right boundary bond.
    #[must_use]
    pub fn k(&self) -> u32 {
        (self.i + self.first_len + self.second_len) % self.l
    }

    #[must_use]
    pub fn lattice_len(&self) -> u32 {
        self.l
    }

    /// Number of sites in the first interval (arc from `i` to `j`).
    #[must_use]
    pub fn first_len(&self) -> u32 {
        self.first_len
    }

    /// Number of sites in the second interval (arc from `j` to `k`).
    #[must_use]
    pub fn second_len(&self) -> u32 {
        self.second_len
    }

    pub fn first_sites(&self) -> impl Iterator<Item = u32> + '_ {
        let l = self.l;
        let i = self.i;
        (1..=self.first_len).map(move |d| (i + d) % l)
    }

    pub fn second_sites(&self) -> impl Iterator<Item = u32> + '_ {
        let l = self.l;
        let j = self.j();
        (1..=self.second_len).map(move |d| (j + d) % l)
    }

    /// True when the configuration puts at least one particle in each of the
    /// two intervals.
    #[must_use]
    pub fn both_occupied(&self, cfg: &Configuration) -> bool {
        debug_assert_eq!(cfg.len(), self.l);
        self.first_sites().any(|s| cfg.is_occupied(s))
            && self.second_sites().any(|s| cfg.is_occupied(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: u32, sites: &[u32]) -> Configuration {
        Configuration::new(l, sites, Boundary::Periodic).unwrap()
    }

    #[test]
    fn duplicate_sites_collapse() {
        let c = Configuration::new(10, &[1, 1, 2], Boundary::Periodic).unwrap();
        assert_eq!(c.particle_count(), 2);
    }

    #[test]
    fn rejects_small_lattice_and_bad_site() {
        assert!(Configuration::new(2, &[0], Boundary::Periodic).is_err());
        assert!(Configuration::new(10, &[10], Boundary::Periodic).is_err());
    }

    #[test]
    fn adjacent_pairs_basic_and_wrap() {
        assert_eq!(cfg(10, &[0, 1, 5]).adjacent_pairs(), vec![0]);
        assert_eq!(
            cfg(10, &[0, 9]).adjacent_pairs(),
            vec![9],
            "ring pair {{9,0}} anchors at 9"
        );
        let w = Configuration::new(10, &[0, 9], Boundary::Window).unwrap();
        assert!(w.adjacent_pairs().is_empty(), "window has no bond 9");
    }

    #[test]
    fn adjacent_pairs_matches_brute_force_exhaustively() {
        // every configuration on 14 sites, both boundaries
        for boundary in [Boundary::Periodic, Boundary::Window] {
            let l = 14u32;
            for mask in 0u32..(1 << l) {
                let sites: Vec<u32> = (0..l).filter(|&s| mask >> s & 1 == 1).collect();
                let c = Configuration::new(l, &sites, boundary).unwrap();
                let limit = if boundary == Boundary::Periodic {
                    l
                } else {
                    l - 1
                };
                let brute: Vec<u32> = (0..limit)
                    .filter(|&i| mask >> i & 1 == 1 && mask >> ((i + 1) % l) & 1 == 1)
                    .collect();
                assert_eq!(
                    c.adjacent_pairs(),
                    brute,
                    "mask {mask:b} boundary {boundary:?}"
                );
                assert_eq!(c.particle_count(), mask.count_ones());
            }
        }
    }

    #[test]
    fn count_runs_crosses_word_boundary() {
        let mut c = Configuration::new(130, &[], Boundary::Periodic).unwrap();
        for s in 62..67 {
            c.set(s, true);
        }
        c.set(129, true);
        c.set(0, true); // wrap pair {129, 0}
        assert_eq!(c.count_runs(1), 7);
        assert_eq!(c.count_runs(2), 5); // 62..66 runs of two, plus the wrap
        assert_eq!(c.count_runs(3), 3);
    }

    #[test]
    fn pattern_density_full_lattice() {
        let c = Configuration::fully_occupied(50, Boundary::Periodic).unwrap();
        for p in ["1", "11", "111"] {
            assert_eq!(pattern_density(std::slice::from_ref(&c), p).unwrap(), 1.0);
        }
        assert_eq!(pattern_density(&[c], "101").unwrap(), 0.0);
    }

    #[test]
    fn pattern_density_counts_zeros_too() {
        // 1001100110... on 10 sites: "10" occurs at 0,4? enumerate by hand:
        // sites occupied {0,3,4,7,8}; windows "10" at i where i occ, i+1 empty:
        // 0,4,8 -> 3 of 10.
        let c = cfg(10, &[0, 3, 4, 7, 8]);
        assert!((pattern_density(&[c], "10").unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn pattern_density_window_excludes_wrap() {
        let c = Configuration::new(10, &[0, 9], Boundary::Window).unwrap();
        // 9 interior windows of length 2, none matching "11"
        assert_eq!(pattern_density(&[c], "11").unwrap(), 0.0);
    }

    #[test]
    fn pattern_density_empty_sample_errors() {
        assert!(matches!(pattern_density(&[], "1"), Err(Error::EmptySample)));
    }

    #[test]
    fn pattern_density_pools_across_sample() {
        let a = cfg(10, &[0, 1]);
        let b = cfg(10, &[]);
        let d = pattern_density(&[a, b], "1").unwrap();
        assert!((d - 0.1).abs() < 1e-12, "2 of 20 windows, got {d}");
    }

    #[test]
    fn interval_pair_sites_and_wrap() {
        let p = IntervalPair::new(10, 7, 9, 2).unwrap();
        assert_eq!(p.first_sites().collect::<Vec<_>>(), vec![8, 9]);
        assert_eq!(p.second_sites().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!((p.i(), p.j(), p.k()), (7, 9, 2));
    }

    #[test]
    fn interval_pair_rejects_degenerate() {
        assert!(IntervalPair::new(10, 3, 3, 5).is_err(), "empty first side");
        assert!(IntervalPair::new(10, 3, 5, 5).is_err(), "empty second side");
        assert!(IntervalPair::new(10, 0, 5, 9).is_ok());
        assert!(IntervalPair::new(10, 0, 5, 0).is_err(), "covers the ring");
    }

    #[test]
    fn both_occupied_needs_each_side() {
        let p = IntervalPair::new(12, 2, 4, 6).unwrap(); // sites {3,4} and {5,6}
        assert!(p.both_occupied(&cfg(12, &[4, 5])));
        assert!(!p.both_occupied(&cfg(12, &[3, 4])));
        assert!(!p.both_occupied(&cfg(12, &[5, 6])));
    }
}

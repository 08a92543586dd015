//! Backward-time tracing: single dual walks, the set-valued process of
//! adjacent interval pairs, and exact counting of renewing boundary triples.
//!
//! Tracing runs downward from an anchor time. A walker lives on bonds and
//! dodges forward jump arrows: a forward right jump across its bond pushes
//! it one bond left, a forward left jump pushes it one bond right, so traced
//! walkers are rate-1 nearest-neighbor walks that coalesce on meeting.
//!
//! An adjacent interval pair is carried by its boundary triple
//! (three bonds); the pair dies when two boundaries meet, either directly or
//! around the ring. Branch arrows never move boundaries. Instead they offer
//! a renewal: descending through a left branch at site `m` whose middle or
//! right boundary sits on bond `m - 1`, the unit pair ({m}, {m + 1}) over
//! the branch's source sites becomes reachable, and descending through a
//! right branch at site `m` whose left or middle boundary sits on bond `m`,
//! the unit pair ({m - 1}, {m}) does. A renewal may be taken or ignored;
//! the set-valued process keeps both alternatives, the path counter forks
//! on them.

use crate::error::{Error, Result};
use crate::graphical::{ArrowEvent, Direction, EventKind, GraphicalRep, View};
use crate::lattice::{Configuration, IntervalPair};
use std::collections::BTreeSet;

/// Default work cap for the exact path enumeration.
pub const ENUMERATION_DEFAULT_CAP: u64 = 1_000_000;

/// A bond-valued path traced downward in time, piecewise constant between
/// the arrows it followed.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPath {
    l: u32,
    start_bond: u32,
    start_time: f64,
    end_time: f64,
    /// (arrow time, bond after following it), times strictly decreasing.
    steps: Vec<(f64, u32)>,
    net: i64,
}

impl DualPath {
    #[must_use]
    pub fn start_bond(&self) -> u32 {
        self.start_bond
    }

    #[must_use]
    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    #[must_use]
    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    /// Arrows followed, newest first.
    #[must_use]
    pub fn steps(&self) -> &[(f64, u32)] {
        &self.steps
    }

    #[must_use]
    pub fn end_bond(&self) -> u32 {
        self.steps.last().map_or(self.start_bond, |s| s.1)
    }

    /// Sum of signed moves (left = -1, right = +1), free of ring wrapping.
    #[must_use]
    pub fn net_displacement(&self) -> i64 {
        self.net
    }

    /// Bond occupied at time `t`, with the value-from-above convention: an
    /// arrow exactly at `t` has not been followed yet at `t` itself.
    pub fn bond_at(&self, t: f64) -> Result<u32> {
        if !(self.end_time <= t && t <= self.start_time) {
            return Err(Error::invalid(format!(
                "time {t} outside the traced window [{}, {}]",
                self.end_time, self.start_time
            )));
        }
        let followed = self.steps.partition_point(|s| s.0 > t);
        Ok(if followed == 0 {
            self.start_bond
        } else {
            self.steps[followed - 1].1
        })
    }
}

// Where a walker at `bond` lands when it descends through event `e`.
// Handles both views: a forward jump acts on its own bond; the same arrow
// seen in the dual view sits on a site and connects that site's two bonds.
fn walker_step(l: u32, bond: u32, e: &ArrowEvent, view: View) -> Option<(u32, i64)> {
    if e.kind != EventKind::Jump {
        return None;
    }
    match view {
        View::Forward => {
            if e.bond() != bond {
                return None;
            }
            match e.dir {
                Direction::Right => Some(((bond + l - 1) % l, -1)),
                Direction::Left => Some(((bond + 1) % l, 1)),
            }
        }
        View::Dual => {
            let s = e.site();
            let (tail, head, d) = match e.dir {
                Direction::Left => (s, (s + l - 1) % l, -1),
                Direction::Right => ((s + l - 1) % l, s, 1),
            };
            (bond == tail).then_some((head, d))
        }
    }
}

/// Traces the unique dual walk from `(start_bond, start_time)` down to
/// `end_time`, following every jump arrow in `(end_time, start_time]` that
/// touches the walker. Branch arrows are ignored. Works on either view of
/// the same table and produces the identical path.
pub fn trace_dual_walk(
    rep: &GraphicalRep,
    start_bond: u32,
    start_time: f64,
    end_time: f64,
) -> Result<DualPath> {
    let l = rep.len();
    if start_bond >= l {
        return Err(Error::invalid(format!(
            "bond {start_bond} out of range for {l} bonds"
        )));
    }
    if !(end_time <= start_time) {
        return Err(Error::invalid(format!(
            "trace must run downward, got start {start_time} < end {end_time}"
        )));
    }
    let mut path = DualPath {
        l,
        start_bond,
        start_time,
        end_time,
        steps: Vec::new(),
        net: 0,
    };
    let mut bond = start_bond;
    for e in rep.events_in(end_time, start_time)?.iter().rev() {
        if let Some((next, d)) = walker_step(l, bond, e, rep.view()) {
            bond = next;
            path.net += d;
            path.steps.push((e.time, bond));
        }
    }
    Ok(path)
}

// Boundary triple of an adjacent interval pair: bonds i, i+a1, i+a1+a2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Triple {
    i: u32,
    a1: u32,
    a2: u32,
}

impl Triple {
    fn from_pair(p: &IntervalPair) -> Triple {
        Triple {
            i: p.i(),
            a1: p.first_len(),
            a2: p.second_len(),
        }
    }

    fn to_pair(self, l: u32) -> IntervalPair {
        IntervalPair::new(
            l,
            self.i,
            (self.i + self.a1) % l,
            (self.i + self.a1 + self.a2) % l,
        )
        .expect("triple arithmetic keeps pairs valid")
    }

    fn positions(self, l: u32) -> (u32, u32, u32) {
        (
            self.i,
            (self.i + self.a1) % l,
            (self.i + self.a1 + self.a2) % l,
        )
    }

    // Descends through one jump arrow; None when two boundaries coalesce
    // (adjacent boundaries meeting, or the outer two closing around the
    // ring).
    fn jump(self, l: u32, bond: u32, delta: i64) -> Option<Triple> {
        let (p1, p2, p3) = self.positions(l);
        let (i, a1, a2) = (self.i as i64, self.a1 as i64, self.a2 as i64);
        let (ni, na1, na2) = if p1 == bond {
            ((i + delta).rem_euclid(l as i64), a1 - delta, a2)
        } else if p2 == bond {
            (i, a1 + delta, a2 - delta)
        } else if p3 == bond {
            (i, a1, a2 + delta)
        } else {
            return Some(self);
        };
        if na1 == 0 || na2 == 0 || na1 + na2 == l as i64 {
            return None;
        }
        Some(Triple {
            i: ni as u32,
            a1: na1 as u32,
            a2: na2 as u32,
        })
    }

    // The unit triple this branch arrow offers, if one of the eligible
    // boundaries sits next to the arrow head.
    fn renewal(self, l: u32, e: &ArrowEvent) -> Option<Triple> {
        debug_assert_eq!(e.kind, EventKind::Branch);
        let m = e.site();
        let (p1, p2, p3) = self.positions(l);
        match e.dir {
            // left branch at m births onto m - 1; witnessing interval must
            // end at bond m - 1, so only the middle or right boundary counts
            Direction::Left => {
                let b = (m + l - 1) % l;
                (p2 == b || p3 == b).then_some(Triple { i: b, a1: 1, a2: 1 })
            }
            // right branch at m births onto m + 1; witnessing interval must
            // start at bond m, so only the left or middle boundary counts
            Direction::Right => (p1 == m || p2 == m).then_some(Triple {
                i: (m + l - 2) % l,
                a1: 1,
                a2: 1,
            }),
        }
    }
}

/// A finite set of adjacent interval pairs carried backward through the
/// event table, together with the elapsed backward time.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperdualState {
    l: u32,
    pairs: BTreeSet<IntervalPair>,
    dual_time: f64,
}

impl SuperdualState {
    pub fn new(l: u32, pairs: &[IntervalPair]) -> Result<Self> {
        for p in pairs {
            if p.lattice_len() != l {
                return Err(Error::invalid(format!(
                    "pair on {} bonds in a state on {l} bonds",
                    p.lattice_len()
                )));
            }
        }
        Ok(SuperdualState {
            l,
            pairs: pairs.iter().copied().collect(),
            dual_time: 0.0,
        })
    }

    /// State holding the single unit pair ({i + 1}, {i + 2}) whose left
    /// boundary is bond `i`.
    pub fn unit_pair(l: u32, i: u32) -> Result<Self> {
        let p = IntervalPair::new(l, i, (i + 1) % l, (i + 2) % l)?;
        SuperdualState::new(l, &[p])
    }

    #[must_use]
    pub fn lattice_len(&self) -> u32 {
        self.l
    }

    #[must_use]
    pub fn dual_time(&self) -> f64 {
        self.dual_time
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &IntervalPair> {
        self.pairs.iter()
    }

    #[must_use]
    pub fn contains(&self, p: &IntervalPair) -> bool {
        self.pairs.contains(p)
    }

    /// True when some pair in the set has both of its intervals meeting the
    /// configuration.
    #[must_use]
    pub fn witnessed_by(&self, eta: &Configuration) -> bool {
        self.pairs.iter().any(|p| p.both_occupied(eta))
    }
}

// One backward event applied to the whole pair set.
fn consume_backward(pairs: &mut BTreeSet<IntervalPair>, l: u32, e: &ArrowEvent) {
    match e.kind {
        EventKind::Jump => {
            let b = e.bond();
            let delta = match e.dir {
                Direction::Right => -1,
                Direction::Left => 1,
            };
            let survivors: BTreeSet<IntervalPair> = pairs
                .iter()
                .filter_map(|p| Triple::from_pair(p).jump(l, b, delta).map(|t| t.to_pair(l)))
                .collect();
            *pairs = survivors;
        }
        EventKind::Branch => {
            let renewed: Option<Triple> = pairs
                .iter()
                .find_map(|p| Triple::from_pair(p).renewal(l, e));
            if let Some(t) = renewed {
                pairs.insert(t.to_pair(l));
            }
        }
    }
}

fn check_window(rep: &GraphicalRep, u: f64, t: f64) -> Result<()> {
    if rep.view() != View::Forward {
        return Err(Error::invalid(
            "backward evolution reads a forward event table".to_string(),
        ));
    }
    if !(t >= 0.0) || !(u - t >= 0.0) || !(u <= rep.horizon()) {
        return Err(Error::invalid(format!(
            "window ({}, {u}] must lie inside [0, {}]",
            u - t,
            rep.horizon()
        )));
    }
    Ok(())
}

/// Carries the pair set backward from anchor time `u` for duration `t`,
/// processing every event in `(u - t, u]` from newest to oldest. The set
/// after the call describes forward time `u - t`. Exceeding `cap` pairs is
/// reported as an error rather than silently truncated.
pub fn superdual_evolve(
    rep: &GraphicalRep,
    initial: &SuperdualState,
    u: f64,
    t: f64,
    cap: usize,
) -> Result<SuperdualState> {
    check_window(rep, u, t)?;
    if initial.l != rep.len() {
        return Err(Error::invalid(format!(
            "state on {} bonds does not match table on {} bonds",
            initial.l,
            rep.len()
        )));
    }
    let mut pairs = initial.pairs.clone();
    for e in rep.events_in(u - t, u)?.iter().rev() {
        consume_backward(&mut pairs, rep.len(), e);
        if pairs.len() > cap {
            return Err(Error::StateBlowUp {
                size: pairs.len(),
                cap,
            });
        }
    }
    Ok(SuperdualState {
        l: initial.l,
        pairs,
        dual_time: initial.dual_time + t,
    })
}

/// Forward-time indicator profile of the witness relation.
///
/// Entry `k` answers: after the first `k` forward events of `(0, u]`, does
/// the forward state witness the pair set that remains after consuming the
/// other `n - k` events backward? The construction guarantees the profile
/// never increases in `k`; the test suites assert exactly that, and its
/// contrapositive (entry `n` = anchor pair occupied at `u` forces entry 0 =
/// initial state witnesses the fully evolved set).
pub fn witness_profile(
    rep: &GraphicalRep,
    eta0: &Configuration,
    initial: &SuperdualState,
    u: f64,
    cap: usize,
) -> Result<Vec<bool>> {
    check_window(rep, u, u)?;
    let events = rep.events_in(0.0, u)?;
    let n = events.len();
    // forward pass: the pre-event state of event k is the state after the
    // first k events, so the observer fills slots 0..n and the final state
    // is slot n
    let mut forward: Vec<Configuration> = Vec::with_capacity(n + 1);
    let final_state = crate::dynamics::replay_trace(eta0, rep, 0.0, u, |state, _| {
        forward.push(state.clone());
    })?;
    forward.push(final_state);
    // backward pass: pair set after consuming events k..n-1, for k = n..=0
    let mut backward: Vec<BTreeSet<IntervalPair>> = Vec::with_capacity(n + 1);
    backward.push(initial.pairs.clone());
    let mut pairs = initial.pairs.clone();
    for e in events.iter().rev() {
        consume_backward(&mut pairs, rep.len(), e);
        if pairs.len() > cap {
            return Err(Error::StateBlowUp {
                size: pairs.len(),
                cap,
            });
        }
        backward.push(pairs.clone());
    }
    backward.reverse();
    Ok((0..=n)
        .map(|k| {
            let eta = &forward[k];
            backward[k].iter().any(|p| p.both_occupied(eta))
        })
        .collect())
}

/// Result of exhaustively enumerating boundary-triple paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCount {
    /// Paths alive over the whole window.
    pub total: u64,
    /// `by_renewals[n]` = surviving paths that took exactly `n` renewals.
    pub by_renewals: Vec<u64>,
    /// Lineage segments explored (work measure the cap is charged against).
    pub explored: u64,
}

/// Counts the distinct backward paths over `(u - t, u]` that start from the
/// unit triple on bonds (l-1, 0, 1) and remain alive through the window.
/// Every eligible branch arrow forks the enumeration into "renew" and
/// "ignore"; jump arrows are deterministic and coalescence kills a lineage.
pub fn count_3paths(rep: &GraphicalRep, u: f64, t: f64, cap: u64) -> Result<PathCount> {
    check_window(rep, u, t)?;
    let l = rep.len();
    let events = rep.events_in(u - t, u)?;
    let n = events.len();
    let anchor = Triple {
        i: l - 1,
        a1: 1,
        a2: 1,
    };
    let mut stack: Vec<(usize, Triple, u32)> = vec![(0, anchor, 0)];
    let mut total = 0u64;
    let mut by_renewals: Vec<u64> = Vec::new();
    let mut explored = 0u64;
    while let Some((start_idx, mut triple, renewals)) = stack.pop() {
        explored += 1;
        if explored > cap {
            return Err(Error::EnumerationCapExceeded {
                visited: explored,
                cap,
            });
        }
        let mut alive = true;
        for idx in start_idx..n {
            let e = &events[n - 1 - idx];
            match e.kind {
                EventKind::Jump => {
                    let delta = match e.dir {
                        Direction::Right => -1,
                        Direction::Left => 1,
                    };
                    match triple.jump(l, e.bond(), delta) {
                        Some(t2) => triple = t2,
                        None => {
                            alive = false;
                            break;
                        }
                    }
                }
                EventKind::Branch => {
                    if let Some(renewed) = triple.renewal(l, e) {
                        stack.push((idx + 1, renewed, renewals + 1));
                    }
                }
            }
        }
        if alive {
            total += 1;
            let slot = renewals as usize;
            if by_renewals.len() <= slot {
                by_renewals.resize(slot + 1, 0);
            }
            by_renewals[slot] += 1;
        }
    }
    Ok(PathCount {
        total,
        by_renewals,
        explored,
    })
}

/// Sums K * sum over n >= 1 of (2 lambda)^n n^(5/2), the closed-form
/// envelope constant for the expected path count. Converges only for
/// lambda < 1/2; the partial sum stops once the ratio-test tail bound drops
/// below 1e-12 of the running total.
pub fn kprime_series(lambda: f64, k: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!(
            "envelope constant must be finite and >= 0, got {k}"
        )));
    }
    let r = 2.0 * lambda;
    if r >= 1.0 {
        return Err(Error::SeriesDivergent { lambda });
    }
    if r == 0.0 || k == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut term = r; // n = 1 term: r^1 * 1^(5/2)
    let mut n = 1u64;
    loop {
        sum += term;
        // for m >= n the term ratio is at most q, so the tail is geometric
        let q = r * ((n as f64 + 1.0) / n as f64).powf(2.5);
        if q < 1.0 && term * q / (1.0 - q) <= 1e-12 * sum {
            break;
        }
        n += 1;
        term *= r * (n as f64 / (n as f64 - 1.0)).powf(2.5);
        if n > 10_000_000 {
            return Err(Error::invalid(format!(
                "series for lambda = {lambda} converges too slowly"
            )));
        }
    }
    Ok(k * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphical::generate;
    use crate::rng::SeedSplitter;
    use crate::stats::{mean_se, Z_ALPHA_001};
    use crate::walks::simulate_meeting;
    use rand::Rng;

    // Builds an event table with hand-picked arrows through the public
    // serialization format, the supported way to pin exact scenarios.
    fn handmade(
        l: u32,
        lambda: f64,
        horizon: f64,
        events: &[(f64, u32, EventKind, Direction)],
    ) -> GraphicalRep {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"CBEV");
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&[0u8, 0u8]);
        buf.extend_from_slice(&l.to_le_bytes());
        buf.extend_from_slice(&lambda.to_le_bytes());
        buf.extend_from_slice(&horizon.to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        buf.extend_from_slice(&(events.len() as u64).to_le_bytes());
        for &(t, loc2, kind, dir) in events {
            buf.extend_from_slice(&t.to_le_bytes());
            buf.extend_from_slice(&(loc2 as i32).to_le_bytes());
            let mut flags = 0u8;
            if dir == Direction::Right {
                flags |= 1;
            }
            if kind == EventKind::Branch {
                flags |= 2;
            }
            buf.push(flags);
        }
        GraphicalRep::load(&mut buf.as_slice()).unwrap()
    }

    fn jump(t: f64, bond: u32, dir: Direction) -> (f64, u32, EventKind, Direction) {
        (t, 2 * bond + 1, EventKind::Jump, dir)
    }

    fn branch(t: f64, site: u32, dir: Direction) -> (f64, u32, EventKind, Direction) {
        (t, 2 * site, EventKind::Branch, dir)
    }

    fn unit(l: u32, i: u32) -> IntervalPair {
        IntervalPair::new(l, i, (i + 1) % l, (i + 2) % l).unwrap()
    }

    #[test]
    fn walker_is_constant_without_arrows() {
        let rep = handmade(10, 0.0, 2.0, &[]);
        let p = trace_dual_walk(&rep, 4, 2.0, 0.0).unwrap();
        assert_eq!(p.end_bond(), 4);
        assert!(p.steps().is_empty());
        assert_eq!(p.bond_at(1.3).unwrap(), 4);
        assert_eq!(p.net_displacement(), 0);
    }

    #[test]
    fn single_arrow_moves_walker_once() {
        // a right jump across bond 4 pushes a descending walker at 4 to 3
        let rep = handmade(10, 0.0, 1.0, &[jump(0.5, 4, Direction::Right)]);
        let p = trace_dual_walk(&rep, 4, 1.0, 0.0).unwrap();
        assert_eq!(p.steps(), &[(0.5, 3)]);
        assert_eq!(p.end_bond(), 3);
        assert_eq!(
            p.bond_at(0.7).unwrap(),
            4,
            "above the arrow the walker has not moved"
        );
        assert_eq!(
            p.bond_at(0.5).unwrap(),
            4,
            "value at the arrow instant is from above"
        );
        assert_eq!(p.bond_at(0.3).unwrap(), 3);
        // a left jump pushes the walker right instead
        let rep2 = handmade(10, 0.0, 1.0, &[jump(0.5, 4, Direction::Left)]);
        assert_eq!(trace_dual_walk(&rep2, 4, 1.0, 0.0).unwrap().end_bond(), 5);
        // other bonds are untouched, branches never move walkers
        assert_eq!(trace_dual_walk(&rep, 7, 1.0, 0.0).unwrap().end_bond(), 7);
        let rep3 = handmade(10, 1.0, 1.0, &[branch(0.5, 4, Direction::Left)]);
        assert_eq!(trace_dual_walk(&rep3, 3, 1.0, 0.0).unwrap().end_bond(), 3);
    }

    #[test]
    fn forward_and_dual_views_trace_identically() {
        let rep = generate(40, 0.7, 5.0, 3021).unwrap();
        let dual = rep.dual_view();
        for start in [0u32, 7, 19, 39] {
            let a = trace_dual_walk(&rep, start, 5.0, 0.0).unwrap();
            let b = trace_dual_walk(&dual, start, 5.0, 0.0).unwrap();
            assert_eq!(
                a, b,
                "the two views describe the same walk from bond {start}"
            );
        }
    }

    #[test]
    fn traced_walk_has_unit_rate_variance() {
        let split = SeedSplitter::new(88);
        let t = 4.0;
        let mut sq = Vec::new();
        for r in 0..2000u64 {
            let rep = generate(60, 0.0, t, split.derive(&[1, r])).unwrap();
            let p = trace_dual_walk(&rep, 30, t, 0.0).unwrap();
            sq.push((p.net_displacement() * p.net_displacement()) as f64);
        }
        let (mean, se) = mean_se(&sq);
        assert!(
            (mean - t).abs() < Z_ALPHA_001 * se,
            "squared displacement {mean} +- {se} should match elapsed time {t}"
        );
    }

    #[test]
    fn trace_rejects_bad_windows() {
        let rep = handmade(10, 0.0, 2.0, &[]);
        assert!(trace_dual_walk(&rep, 11, 2.0, 0.0).is_err());
        assert!(trace_dual_walk(&rep, 3, 1.0, 1.5).is_err());
        assert!(trace_dual_walk(&rep, 3, 3.0, 0.0).is_err());
        let p = trace_dual_walk(&rep, 3, 2.0, 1.0).unwrap();
        assert!(
            p.bond_at(0.5).is_err(),
            "queries outside the window are rejected"
        );
    }

    #[test]
    fn jumps_move_boundaries_and_coalescence_kills() {
        let l = 12;
        // middle boundary at bond 5 of (3,5,7) pushed right: lengths (3,1)
        let rep = handmade(l, 0.0, 1.0, &[jump(0.5, 5, Direction::Left)]);
        let init = SuperdualState::new(l, &[IntervalPair::new(l, 3, 5, 7).unwrap()]).unwrap();
        let out = superdual_evolve(&rep, &init, 1.0, 1.0, 100).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out.contains(&IntervalPair::new(l, 3, 6, 7).unwrap()));
        // the same arrow on a unit pair pinches the second interval away
        let init2 = SuperdualState::new(l, &[IntervalPair::new(l, 4, 5, 6).unwrap()]).unwrap();
        let out2 = superdual_evolve(&rep, &init2, 1.0, 1.0, 100).unwrap();
        assert!(out2.is_empty(), "boundary coalescence kills the pair");
        assert_eq!(out2.dual_time(), 1.0);
    }

    #[test]
    fn left_branch_renews_from_middle_or_right_boundary() {
        let l = 12;
        let rep = handmade(l, 0.5, 1.0, &[branch(0.5, 5, Direction::Left)]);
        // eligible: middle boundary at bond 4
        let init = SuperdualState::new(l, &[unit(l, 3)]).unwrap();
        let out = superdual_evolve(&rep, &init, 1.0, 1.0, 100).unwrap();
        assert_eq!(
            out.len(),
            2,
            "renewal adds the unit pair over the branch source"
        );
        assert!(
            out.contains(&unit(l, 3)),
            "the original pair always survives a branch"
        );
        assert!(
            out.contains(&unit(l, 4)),
            "renewed pair covers the branch source sites 5, 6"
        );
        // eligible: right boundary at bond 4
        let init_r = SuperdualState::new(l, &[unit(l, 2)]).unwrap();
        let out_r = superdual_evolve(&rep, &init_r, 1.0, 1.0, 100).unwrap();
        assert!(out_r.contains(&unit(l, 4)) && out_r.len() == 2);
        // ineligible: left boundary at bond 4 does not count for a left branch
        let init_l = SuperdualState::new(l, &[unit(l, 4)]).unwrap();
        let out_l = superdual_evolve(&rep, &init_l, 1.0, 1.0, 100).unwrap();
        assert_eq!(
            out_l.len(),
            1,
            "left boundary alone must not trigger a left-branch renewal"
        );
        // far-away pair: nothing happens
        let far = SuperdualState::new(l, &[unit(l, 8)]).unwrap();
        let out_far = superdual_evolve(&rep, &far, 1.0, 1.0, 100).unwrap();
        assert_eq!(
            out_far,
            SuperdualState {
                dual_time: 1.0,
                ..far.clone()
            }
        );
    }

    #[test]
    fn right_branch_renews_from_left_or_middle_boundary() {
        let l = 12;
        let rep = handmade(l, 0.5, 1.0, &[branch(0.5, 5, Direction::Right)]);
        // renewed pair for a right branch at 5 is ({4}, {5}), left bond 3
        for (eligible_left_bond, why) in [
            (5u32, "left boundary on bond 5"),
            (4u32, "middle boundary on bond 5"),
        ] {
            let init = SuperdualState::new(l, &[unit(l, eligible_left_bond)]).unwrap();
            let out = superdual_evolve(&rep, &init, 1.0, 1.0, 100).unwrap();
            assert_eq!(out.len(), 2, "{why} should renew");
            assert!(out.contains(&unit(l, 3)));
        }
        // right boundary on bond 5 must not trigger
        let init = SuperdualState::new(l, &[unit(l, 3)]).unwrap();
        let out = superdual_evolve(&rep, &init, 1.0, 1.0, 100).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn blowup_cap_is_enforced() {
        let l = 20;
        // descending: the branch at 0.9 renews (3,1,1) -> adds (4,1,1); the
        // one at 0.8 sees the new pair's middle boundary and adds (5,1,1)
        let rep = handmade(
            l,
            1.0,
            1.0,
            &[
                branch(0.8, 6, Direction::Left),
                branch(0.9, 5, Direction::Left),
            ],
        );
        let init = SuperdualState::new(l, &[unit(l, 3)]).unwrap();
        let ok = superdual_evolve(&rep, &init, 1.0, 1.0, 3).unwrap();
        assert_eq!(ok.len(), 3);
        match superdual_evolve(&rep, &init, 1.0, 1.0, 2) {
            Err(Error::StateBlowUp { size: 3, cap: 2 }) => {}
            other => panic!("expected blow-up error, got {other:?}"),
        }
    }

    #[test]
    fn lambda_zero_set_matches_three_traced_walks() {
        // without branches the set is just three coalescing walks: compare
        // the evolved pair against independently traced boundary paths
        let split = SeedSplitter::new(404);
        let l = 24;
        let t = 6.0;
        let mut died = 0;
        for r in 0..200u64 {
            let rep = generate(l, 0.0, t, split.derive(&[r])).unwrap();
            let init = SuperdualState::new(l, &[IntervalPair::new(l, 3, 6, 10).unwrap()]).unwrap();
            let out = superdual_evolve(&rep, &init, t, t, 10).unwrap();
            let b1 = trace_dual_walk(&rep, 3, t, 0.0).unwrap().end_bond();
            let b2 = trace_dual_walk(&rep, 6, t, 0.0).unwrap().end_bond();
            let b3 = trace_dual_walk(&rep, 10, t, 0.0).unwrap().end_bond();
            if b1 != b2 && b2 != b3 && b1 != b3 {
                assert_eq!(
                    out.len(),
                    1,
                    "rep {r}: all boundaries distinct, pair must live"
                );
                let p = out.pairs().next().unwrap();
                assert_eq!(
                    (p.i(), p.j(), p.k()),
                    (b1, b2, b3),
                    "rep {r}: boundaries must match"
                );
            } else {
                assert!(
                    out.is_empty(),
                    "rep {r}: coalesced boundaries must kill the pair"
                );
                died += 1;
            }
        }
        assert!(
            died > 0,
            "six time units on 24 bonds should see some coalescence"
        );
    }

    #[test]
    fn witness_profile_never_increases() {
        let split = SeedSplitter::new(505);
        let l = 20;
        let t = 2.0;
        let mut nontrivial = 0;
        for r in 0..100u64 {
            // brisk branching inflates the renewing pair set, which is what
            // separates witnessing from plain anchor occupancy
            let rep = generate(l, 2.0, t, split.derive(&[1, r])).unwrap();
            let mut site_rng = split.rng(&[2, r]);
            let sites: Vec<u32> = (0..l).filter(|_| site_rng.gen::<f64>() < 0.6).collect();
            let eta0 = Configuration::new(l, &sites, crate::lattice::Boundary::Periodic).unwrap();
            let init = SuperdualState::unit_pair(l, 8).unwrap();
            let profile = witness_profile(&rep, &eta0, &init, t, 10_000).unwrap();
            assert!(
                profile.windows(2).all(|w| w[0] >= w[1]),
                "rep {r}: witness indicator increased along forward time: {profile:?}"
            );
            if profile.iter().any(|&x| x) && profile.iter().any(|&x| !x) {
                nontrivial += 1;
            }
        }
        assert!(
            nontrivial > 10,
            "suite should exercise profiles that actually switch"
        );
    }

    #[test]
    fn lambda_zero_count_agrees_with_set_survival() {
        let split = SeedSplitter::new(606);
        let l = 16;
        let t = 2.5;
        let mut zeros = 0;
        for r in 0..200u64 {
            let rep = generate(l, 0.0, t, split.derive(&[r])).unwrap();
            let count = count_3paths(&rep, t, t, 10_000).unwrap();
            let init = SuperdualState::unit_pair(l, l - 1).unwrap();
            let out = superdual_evolve(&rep, &init, t, t, 10).unwrap();
            assert_eq!(
                count.total,
                out.len() as u64,
                "rep {r}: with no branches the count is the set size"
            );
            assert!(count.total <= 1);
            assert_eq!(count.by_renewals.iter().skip(1).sum::<u64>(), 0);
            zeros += u64::from(count.total == 0);
        }
        assert!(
            zeros > 20,
            "plenty of unit triples should die within 2.5 time units"
        );
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let l = 16;
        // four right branches at site l-1 in a row; the anchor triple's left
        // boundary sits on bond l-1, so each one forks the enumeration
        let evs: Vec<_> = (0..4)
            .map(|k| branch(0.2 + 0.1 * k as f64, l - 1, Direction::Right))
            .collect();
        let rep = handmade(l, 0.4, 1.0, &evs);
        let full = count_3paths(&rep, 1.0, 1.0, 10_000).unwrap();
        assert_eq!(
            full.total, 5,
            "one unrenewed path plus one per forking arrow"
        );
        assert_eq!(full.by_renewals, vec![1, 4]);
        match count_3paths(&rep, 1.0, 1.0, 2) {
            Err(Error::EnumerationCapExceeded { cap: 2, .. }) => {}
            other => panic!("expected enumeration cap error, got {other:?}"),
        }
    }

    #[test]
    fn renewal_histogram_matches_meeting_law() {
        // bin 0 and bin 1 of the renewal histogram have exact expectations:
        // the no-renewal survival probability, and 2 lambda times the
        // self-convolution of that survival, both taken from the
        // three-walker meeting time
        let lambda = 0.25;
        let l = 30;
        let t = 1.5;
        let split = SeedSplitter::new(707);
        let reps = 4000u64;
        let mut bin0 = Vec::with_capacity(reps as usize);
        let mut bin1 = Vec::with_capacity(reps as usize);
        for r in 0..reps {
            let rep = generate(l, lambda, t, split.derive(&[1, r])).unwrap();
            let c = count_3paths(&rep, t, t, 100_000).unwrap();
            bin0.push(*c.by_renewals.first().unwrap_or(&0) as f64);
            bin1.push(*c.by_renewals.get(1).unwrap_or(&0) as f64);
        }
        // empirical survival of the three-walker meeting time
        let mut rng = split.rng(&[2]);
        let n_tau = 150_000usize;
        let mut taus: Vec<f64> = Vec::with_capacity(n_tau);
        for _ in 0..n_tau {
            match simulate_meeting(&[0, 1, 2], &mut rng, t + 1e-9).unwrap() {
                crate::walks::MeetingResult::Met(s) => taus.push(s.tau),
                crate::walks::MeetingResult::Censored { .. } => taus.push(f64::INFINITY),
            }
        }
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let survival = |s: f64| -> f64 {
            let below = taus.partition_point(|&x| x <= s);
            (n_tau - below) as f64 / n_tau as f64
        };
        let (m0, se0) = mean_se(&bin0);
        let g_t = survival(t);
        let se_g = (g_t * (1.0 - g_t) / n_tau as f64).sqrt();
        assert!(
            (m0 - g_t).abs() < Z_ALPHA_001 * (se0 * se0 + se_g * se_g).sqrt(),
            "no-renewal bin mean {m0} should match walker survival {g_t}"
        );
        // trapezoid convolution of the empirical survival with itself
        let grid = 600usize;
        let h = t / grid as f64;
        let mut conv = 0.0;
        for i in 0..=grid {
            let w = if i == 0 || i == grid { 0.5 } else { 1.0 };
            conv += w * survival(i as f64 * h) * survival(t - i as f64 * h);
        }
        conv *= h;
        let want1 = 2.0 * lambda * conv;
        let (m1, se1) = mean_se(&bin1);
        assert!(
            (m1 - want1).abs() < Z_ALPHA_001 * (se1 + 0.01 * want1),
            "one-renewal bin mean {m1} should match the convolution value {want1}"
        );
    }

    #[test]
    fn series_constant_matches_frozen_values() {
        // frozen with an independent high-precision summation
        #[allow(clippy::excessive_precision)]
        let cases = [
            (0.25, 11.991219584288189),
            (0.1, 0.62800453744834798),
            (0.4, 633.19303512182565),
        ];
        for (lambda, want) in cases {
            let got = kprime_series(lambda, 1.0).unwrap();
            assert!(
                ((got - want) / want).abs() < 1e-10,
                "series at lambda = {lambda}: got {got}, want {want}"
            );
        }
        assert_eq!(kprime_series(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(kprime_series(0.3, 0.0).unwrap(), 0.0);
        let doubled = kprime_series(0.25, 2.0).unwrap();
        assert!((doubled - 2.0 * 11.991219584288189).abs() < 1e-9);
    }

    #[test]
    fn series_diverges_at_half() {
        assert!(matches!(
            kprime_series(0.5, 1.0),
            Err(Error::SeriesDivergent { .. })
        ));
        assert!(matches!(
            kprime_series(0.7, 1.0),
            Err(Error::SeriesDivergent { .. })
        ));
        assert!(kprime_series(-0.1, 1.0).is_err());
        assert!(kprime_series(f64::NAN, 1.0).is_err());
    }
}

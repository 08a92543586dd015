//! Bounding processes and alternative representations the particle system
//! is checked against: the contact process with double deaths, nearest
//! neighbor oriented percolation, and the multitype voter interface view.
//!
//! The contact process lives in pair coordinates: contact site `i` stands
//! for the adjacent particle pair `{i, i + 1}`. Under that reading a branch
//! becomes an infection, a jump becomes a double death, and the domination
//! statement checked by [`contact_inclusion_violations`] is a plain set
//! inclusion between two configurations on the same ring.

use crate::dynamics::{apply_branch, apply_jump, Trajectory};
use crate::error::{Error, Result};
use crate::graphical::{Direction, EventKind, GraphicalRep, View};
use crate::lattice::{Boundary, Configuration};
use crate::rng::{tag, SeedSplitter};
use crate::stats::binomial_se;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

const NO_SLOT: u32 = u32::MAX;

/// Aggregate-rate engine for the double-death contact process on a ring.
///
/// Every occupied site infects each of its neighbors at rate `lambda / 2`
/// (a no-op when the target is already occupied), and the two endpoints of
/// every bond die together at rate 1. A death at a bond with two empty
/// endpoints changes nothing, so only bonds touching an occupied site are
/// kept on the books and the total rate is
/// `lambda * occupied + active bonds`.
pub struct ContactEngine {
    cfg: Configuration,
    lambda: f64,
    time: f64,
    occupied: Vec<u32>,
    site_slot: Vec<u32>,
    active: Vec<u32>,
    bond_slot: Vec<u32>,
    rng: ChaCha8Rng,
}

impl ContactEngine {
    pub fn new(cfg: Configuration, lambda: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if cfg.boundary() != Boundary::Periodic {
            return Err(Error::invalid(
                "the contact comparison runs on a ring".to_string(),
            ));
        }
        let l = cfg.len();
        let mut eng = ContactEngine {
            cfg,
            lambda,
            time: 0.0,
            occupied: Vec::new(),
            site_slot: vec![NO_SLOT; l as usize],
            active: Vec::new(),
            bond_slot: vec![NO_SLOT; l as usize],
            rng,
        };
        for s in eng.cfg.occupied_sites() {
            eng.site_slot[s as usize] = eng.occupied.len() as u32;
            eng.occupied.push(s);
        }
        for b in 0..l {
            eng.sync_bond(b);
        }
        Ok(eng)
    }

    #[must_use]
    pub fn time(&self) -> f64 {
        self.time
    }

    #[must_use]
    pub fn state(&self) -> &Configuration {
        &self.cfg
    }

    #[must_use]
    pub fn particle_count(&self) -> u32 {
        self.occupied.len() as u32
    }

    fn total_rate(&self) -> f64 {
        self.lambda * self.occupied.len() as f64 + self.active.len() as f64
    }

    fn occupy(&mut self, site: u32) {
        debug_assert!(!self.cfg.is_occupied(site));
        self.cfg.set(site, true);
        self.site_slot[site as usize] = self.occupied.len() as u32;
        self.occupied.push(site);
    }

    fn vacate(&mut self, site: u32) {
        debug_assert!(self.cfg.is_occupied(site));
        self.cfg.set(site, false);
        let slot = self.site_slot[site as usize] as usize;
        let last = *self.occupied.last().expect("vacating an indexed site");
        self.occupied.swap_remove(slot);
        self.site_slot[site as usize] = NO_SLOT;
        if last != site {
            self.site_slot[last as usize] = slot as u32;
        }
    }

    // keeps `active` equal to the set of bonds with an occupied endpoint
    fn sync_bond(&mut self, bond: u32) {
        let l = self.cfg.len();
        let want = self.cfg.is_occupied(bond) || self.cfg.is_occupied((bond + 1) % l);
        let have = self.bond_slot[bond as usize] != NO_SLOT;
        if want == have {
            return;
        }
        if want {
            self.bond_slot[bond as usize] = self.active.len() as u32;
            self.active.push(bond);
        } else {
            let slot = self.bond_slot[bond as usize] as usize;
            let last = *self.active.last().expect("deactivating an indexed bond");
            self.active.swap_remove(slot);
            self.bond_slot[bond as usize] = NO_SLOT;
            if last != bond {
                self.bond_slot[last as usize] = slot as u32;
            }
        }
    }

    fn touch_bonds_around(&mut self, site: u32) {
        let l = self.cfg.len();
        self.sync_bond((site + l - 1) % l);
        self.sync_bond(site);
    }

    /// Advances one effective event. Returns the event time, or `None` when
    /// the lattice is empty.
    pub fn step(&mut self) -> Result<Option<f64>> {
        let rate = self.total_rate();
        if rate <= 0.0 {
            return Ok(None);
        }
        let mut u: f64 = self.rng.gen();
        while u <= 0.0 {
            u = self.rng.gen();
        }
        self.time += -u.ln() / rate;
        self.dispatch(rate);
        Ok(Some(self.time))
    }

    /// Runs until the next event would land past `t`, then parks the clock
    /// at `t`. Redrawing the parked wait is exact by memorylessness.
    pub fn run_until(&mut self, t: f64) -> Result<()> {
        if t < self.time {
            return Err(Error::invalid(format!(
                "cannot run backward from {} to {t}",
                self.time
            )));
        }
        loop {
            let rate = self.total_rate();
            if rate <= 0.0 {
                break;
            }
            let mut u: f64 = self.rng.gen();
            while u <= 0.0 {
                u = self.rng.gen();
            }
            let wait = -u.ln() / rate;
            if self.time + wait > t {
                break;
            }
            self.time += wait;
            self.dispatch(rate);
        }
        self.time = t;
        Ok(())
    }

    fn dispatch(&mut self, rate: f64) {
        let pick: f64 = self.rng.gen::<f64>() * rate;
        let infect = self.lambda * self.occupied.len() as f64;
        // pick can round up to exactly `rate`; the death arm clamps its index
        if pick < infect {
            let idx = ((pick / self.lambda) as usize).min(self.occupied.len() - 1);
            let src = self.occupied[idx];
            let l = self.cfg.len();
            let dst = if self.rng.gen::<f64>() < 0.5 {
                (src + l - 1) % l
            } else {
                (src + 1) % l
            };
            if !self.cfg.is_occupied(dst) {
                self.occupy(dst);
                self.touch_bonds_around(dst);
            }
        } else {
            debug_assert!(!self.active.is_empty(), "positive rate with no active bond");
            let idx = ((pick - infect) as usize).min(self.active.len() - 1);
            let b = self.active[idx];
            let l = self.cfg.len();
            let c = (b + 1) % l;
            if self.cfg.is_occupied(b) {
                self.vacate(b);
            }
            if self.cfg.is_occupied(c) {
                self.vacate(c);
            }
            self.touch_bonds_around(b);
            self.touch_bonds_around(c);
        }
        debug_assert_eq!(self.occupied.len() as u32, self.cfg.particle_count());
    }
}

/// Runs the contact engine and snapshots occupancy at each requested time.
/// Sample times must be nondecreasing and nonnegative.
pub fn simulate_contact_dd(
    cfg: &Configuration,
    lambda: f64,
    sample_times: &[f64],
    rng: ChaCha8Rng,
) -> Result<Trajectory> {
    if sample_times.windows(2).any(|w| w[1] < w[0])
        || sample_times.first().is_some_and(|&t| t < 0.0)
    {
        return Err(Error::invalid(
            "sample times must be nondecreasing and >= 0".to_string(),
        ));
    }
    let mut eng = ContactEngine::new(cfg.clone(), lambda, rng)?;
    let mut out = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
    };
    for &t in sample_times {
        eng.run_until(t)?;
        out.times.push(t);
        out.states.push(eng.cfg.clone());
    }
    Ok(out)
}

/// The three contact event flavors, indexed by the bond they act across.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactEventKind {
    /// Infection from `bond` to `bond + 1`.
    InfectRight,
    /// Infection from `bond + 1` to `bond`.
    InfectLeft,
    /// Both endpoints of `bond` die.
    DoubleDeath,
}

/// One derived contact event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub time: f64,
    pub bond: u32,
    pub kind: ContactEventKind,
}

/// Reads a forward event table as a contact process driving record, one
/// contact event per arrow, in the same order.
///
/// In pair coordinates a branch at site `m` extends occupancy across
/// contact bond `m - 1`: a right branch infects rightward there, a left
/// branch leftward. A jump vacates its source site, which kills both pairs
/// containing that site: a left jump across bond `b` clears contact sites
/// `{b, b + 1}` and a right jump across `c` clears `{c - 1, c}`, double
/// deaths at contact bonds `b` and `c - 1`. The intensities come out right
/// for free: branch arrows fire at `lambda / 2` per site and direction,
/// and each contact bond collects two independent rate `1/2` jump streams.
pub fn couple_contact_dd(rep: &GraphicalRep) -> Result<Vec<ContactEvent>> {
    if rep.view() != View::Forward {
        return Err(Error::invalid(
            "contact coupling needs a forward event table".to_string(),
        ));
    }
    let l = rep.len();
    Ok(rep
        .events()
        .iter()
        .map(|e| {
            let (bond, kind) = match (e.kind, e.dir) {
                (EventKind::Jump, Direction::Left) => (e.bond(), ContactEventKind::DoubleDeath),
                (EventKind::Jump, Direction::Right) => {
                    ((e.bond() + l - 1) % l, ContactEventKind::DoubleDeath)
                }
                (EventKind::Branch, Direction::Right) => {
                    ((e.site() + l - 1) % l, ContactEventKind::InfectRight)
                }
                (EventKind::Branch, Direction::Left) => {
                    ((e.site() + l - 1) % l, ContactEventKind::InfectLeft)
                }
            };
            ContactEvent {
                time: e.time,
                bond,
                kind,
            }
        })
        .collect())
}

/// Applies one contact event in place. The state must live on a ring.
pub fn apply_contact_event(zeta: &mut Configuration, e: &ContactEvent) {
    debug_assert_eq!(zeta.boundary(), Boundary::Periodic);
    let l = zeta.len();
    debug_assert!(e.bond < l);
    let b = e.bond;
    let c = (b + 1) % l;
    match e.kind {
        ContactEventKind::InfectRight => {
            if zeta.is_occupied(b) {
                zeta.set(c, true);
            }
        }
        ContactEventKind::InfectLeft => {
            if zeta.is_occupied(c) {
                zeta.set(b, true);
            }
        }
        ContactEventKind::DoubleDeath => {
            zeta.set(b, false);
            zeta.set(c, false);
        }
    }
}

/// Drives a contact state through every derived event with
/// `t0 < time <= t1`.
pub fn replay_contact(
    zeta0: &Configuration,
    events: &[ContactEvent],
    t0: f64,
    t1: f64,
) -> Result<Configuration> {
    if zeta0.boundary() != Boundary::Periodic {
        return Err(Error::invalid("contact replay runs on a ring".to_string()));
    }
    let mut z = zeta0.clone();
    for e in events {
        if e.time <= t0 || e.time > t1 {
            continue;
        }
        if e.bond >= z.len() {
            return Err(Error::invalid(format!(
                "contact event at bond {} does not fit a ring of {} sites",
                e.bond,
                z.len()
            )));
        }
        apply_contact_event(&mut z, e);
    }
    Ok(z)
}

/// True when every occupied contact site `i` sits on an occupied particle
/// pair `{i, i + 1}`.
#[must_use]
pub fn contact_included(zeta: &Configuration, eta: &Configuration) -> bool {
    let l = eta.len();
    zeta.occupied_sites()
        .into_iter()
        .all(|i| eta.is_occupied(i) && eta.is_occupied((i + 1) % l))
}

/// Replays the particle system and the derived contact process side by side
/// from a dominated start and counts the states in which the domination
/// fails. The coupling is exact, so the count is zero unless one of the
/// engines is wrong; callers assert on that.
pub fn contact_inclusion_violations(
    eta0: &Configuration,
    zeta0: &Configuration,
    rep: &GraphicalRep,
) -> Result<u64> {
    if eta0.len() != rep.len() || zeta0.len() != rep.len() {
        return Err(Error::invalid(format!(
            "states on {} and {} sites do not match a table on {} sites",
            eta0.len(),
            zeta0.len(),
            rep.len()
        )));
    }
    if eta0.boundary() != Boundary::Periodic || zeta0.boundary() != Boundary::Periodic {
        return Err(Error::invalid(
            "the inclusion check runs on a ring".to_string(),
        ));
    }
    if !contact_included(zeta0, eta0) {
        return Err(Error::invalid(
            "initial contact state is not dominated by the particle pairs".to_string(),
        ));
    }
    let derived = couple_contact_dd(rep)?;
    let mut eta = eta0.clone();
    let mut zeta = zeta0.clone();
    let mut violations = 0u64;
    for (ae, ce) in rep.events().iter().zip(&derived) {
        match ae.kind {
            EventKind::Jump => eta = apply_jump(&eta, ae.bond(), ae.dir),
            EventKind::Branch => eta = apply_branch(&eta, ae.site(), ae.dir),
        }
        apply_contact_event(&mut zeta, ce);
        if !contact_included(&zeta, &eta) {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Oriented percolation level sets grown from one seed.
#[derive(Debug, Clone)]
pub struct OpLevels {
    pub p: f64,
    pub seed: u64,
    /// `levels[n]` is the sorted level `n` set; `levels[0]` echoes the start.
    pub levels: Vec<Vec<i64>>,
}

impl OpLevels {
    /// True when the top level still holds a site.
    #[must_use]
    pub fn survived(&self) -> bool {
        self.levels.last().is_some_and(|w| !w.is_empty())
    }
}

/// Grows level sets of nearest neighbor oriented percolation on the even
/// sublattice of the plane: from each occupied `(i, n)` the edges to
/// `(i - 1, n + 1)` and `(i + 1, n + 1)` are open independently with
/// probability `p`.
///
/// Edge indicators are a pure function of `(seed, level, site, side)`, so
/// two calls with the same seed and different `p` read the same underlying
/// uniforms. That is the standard monotone coupling, and the level sets are
/// then nested in `p` pathwise; a property test holds the implementation to
/// it.
pub fn simulate_op(w0: &[i64], p: f64, n_levels: u32, seed: u64) -> Result<OpLevels> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
    }
    if let Some(i) = w0.iter().find(|i| (**i).rem_euclid(2) != 0) {
        return Err(Error::invalid(format!(
            "level 0 site {i} is odd; level n sites need i + n even"
        )));
    }
    let splitter = SeedSplitter::new(seed);
    let mut current: BTreeSet<i64> = w0.iter().copied().collect();
    let mut levels = Vec::with_capacity(n_levels as usize + 1);
    levels.push(current.iter().copied().collect::<Vec<_>>());
    for n in 0..n_levels {
        let mut next = BTreeSet::new();
        for &i in &current {
            for (side, di) in [(0u64, -1i64), (1u64, 1i64)] {
                if edge_open(&splitter, n, i, side, p) {
                    next.insert(i + di);
                }
            }
        }
        levels.push(next.iter().copied().collect());
        current = next;
    }
    Ok(OpLevels { p, seed, levels })
}

// 53 mantissa bits of the derived sub-seed, the usual uniform construction
fn edge_open(splitter: &SeedSplitter, level: u32, site: i64, side: u64, p: f64) -> bool {
    let x = splitter.derive(&[tag::OP_EDGE, u64::from(level), site as u64, side]);
    let u = (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u < p
}

/// Probability of the renormalization block event under the rescaled
/// clocks: one rate `1/2` infection attempt arrives inside a block of
/// length `block` while three rate `1 / lambda` death clocks all stay
/// silent through it, so `(1 - exp(-block/2)) * exp(-3 block / lambda)`.
pub fn good_block_probability(lambda: f64, block: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda must be finite and > 0, got {lambda}"
        )));
    }
    if !(block > 0.0) || !block.is_finite() {
        return Err(Error::invalid(format!(
            "block length must be finite and > 0, got {block}"
        )));
    }
    Ok((1.0 - (-block / 2.0).exp()) * (-3.0 * block / lambda).exp())
}

/// Monte Carlo estimate of the same block event built from raw exponential
/// clocks, kept around to check the closed form against the event it is
/// supposed to describe. Returns the estimate and its binomial standard
/// error.
pub fn good_block_monte_carlo(
    lambda: f64,
    block: f64,
    replicas: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let _ = good_block_probability(lambda, block)?;
    if replicas == 0 {
        return Err(Error::EmptySample);
    }
    let mut good = 0u64;
    for _ in 0..replicas {
        let infect_at = 2.0 * std_exponential(rng);
        if infect_at <= block && (0..3).all(|_| lambda * std_exponential(rng) > block) {
            good += 1;
        }
    }
    let p = good as f64 / replicas as f64;
    Ok((p, binomial_se(p, replicas)))
}

fn std_exponential(rng: &mut ChaCha8Rng) -> f64 {
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    -u.ln()
}

/// Interface trajectory of a multitype voter run.
#[derive(Debug, Clone)]
pub struct VoterRun {
    pub times: Vec<f64>,
    /// Interface bond sets at the sample times: bond `b` is present when
    /// sites `b` and `b + 1` carry different types.
    pub interfaces: Vec<Vec<u32>>,
    /// Copy events that erased two interfaces at once because the same type
    /// flanked a singleton, which takes a type arc grown around the circle.
    /// The correspondence with the particle system is exact only while this
    /// stays zero.
    pub wraparound_annihilations: u64,
}

struct VoterEngine {
    types: Vec<u64>,
    next_label: u64,
    lambda: f64,
    time: f64,
    // sites whose type differs from both neighbors; while every type
    // occupies one arc this is exactly the singleton set
    singles: Vec<u32>,
    single_slot: Vec<u32>,
    annihilations: u64,
    rng: ChaCha8Rng,
}

impl VoterEngine {
    fn new(l: u32, lambda: f64, rng: ChaCha8Rng) -> Result<Self> {
        if l < 3 {
            return Err(Error::invalid(format!(
                "voter ring needs at least 3 sites, got {l}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        // all types distinct, so every site starts as a singleton
        Ok(VoterEngine {
            types: (0..u64::from(l)).collect(),
            next_label: u64::from(l),
            lambda,
            time: 0.0,
            singles: (0..l).collect(),
            single_slot: (0..l).collect(),
            annihilations: 0,
            rng,
        })
    }

    fn left(&self, i: usize) -> usize {
        (i + self.types.len() - 1) % self.types.len()
    }

    fn right(&self, i: usize) -> usize {
        (i + 1) % self.types.len()
    }

    fn sync_single(&mut self, i: usize) {
        let want =
            self.types[i] != self.types[self.left(i)] && self.types[i] != self.types[self.right(i)];
        let have = self.single_slot[i] != NO_SLOT;
        if want == have {
            return;
        }
        if want {
            self.single_slot[i] = self.singles.len() as u32;
            self.singles.push(i as u32);
        } else {
            let slot = self.single_slot[i] as usize;
            let last = *self.singles.last().expect("removing an indexed singleton");
            self.singles.swap_remove(slot);
            self.single_slot[i] = NO_SLOT;
            if last != i as u32 {
                self.single_slot[last as usize] = slot as u32;
            }
        }
    }

    fn sync_around(&mut self, i: usize) {
        self.sync_single(self.left(i));
        self.sync_single(i);
        self.sync_single(self.right(i));
    }

    fn total_rate(&self) -> f64 {
        self.types.len() as f64 + self.lambda * self.singles.len() as f64
    }

    fn dispatch(&mut self, rate: f64) {
        let l = self.types.len();
        let pick: f64 = self.rng.gen::<f64>() * rate;
        let from_right = self.rng.gen::<f64>() < 0.5;
        // pick can round up to exactly `rate`; fall back to the copy arm
        // rather than index an empty singleton list
        if pick < l as f64 || self.singles.is_empty() {
            let i = (pick as usize).min(l - 1);
            let nb = if from_right {
                self.right(i)
            } else {
                self.left(i)
            };
            let new = self.types[nb];
            if new == self.types[i] {
                return;
            }
            if self.types[self.left(i)] == self.types[self.right(i)] {
                // both interfaces around i vanish at once; the particle
                // picture would have merged them into one
                self.annihilations += 1;
            }
            self.types[i] = new;
            self.sync_around(i);
        } else {
            let idx = (((pick - l as f64) / self.lambda) as usize).min(self.singles.len() - 1);
            let s = self.singles[idx] as usize;
            let nb = if from_right {
                self.right(s)
            } else {
                self.left(s)
            };
            self.types[nb] = self.next_label;
            self.next_label += 1;
            self.sync_around(nb);
        }
    }

    fn run_until(&mut self, t: f64) -> Result<()> {
        if t < self.time {
            return Err(Error::invalid(format!(
                "cannot run backward from {} to {t}",
                self.time
            )));
        }
        // the copy rate alone is positive, so the clock never stalls
        loop {
            let rate = self.total_rate();
            let mut u: f64 = self.rng.gen();
            while u <= 0.0 {
                u = self.rng.gen();
            }
            let wait = -u.ln() / rate;
            if self.time + wait > t {
                break;
            }
            self.time += wait;
            self.dispatch(rate);
        }
        self.time = t;
        Ok(())
    }

    fn interfaces(&self) -> Vec<u32> {
        let l = self.types.len();
        (0..l)
            .filter(|&b| self.types[b] != self.types[(b + 1) % l])
            .map(|b| b as u32)
            .collect()
    }
}

/// Runs the multitype voter dynamics from all-distinct types and returns
/// the interface sets at the sample times.
///
/// Each site copies the type of a uniformly chosen neighbor at rate 1, and
/// each singleton hands a brand new type to a uniformly chosen neighbor at
/// rate `lambda`. Interfaces then jump, coalesce, and branch exactly like
/// the particle system started fully occupied, up to the circle artifact
/// counted by `wraparound_annihilations`.
pub fn voter_interface_run(
    l: u32,
    lambda: f64,
    sample_times: &[f64],
    rng: ChaCha8Rng,
) -> Result<VoterRun> {
    if sample_times.windows(2).any(|w| w[1] < w[0])
        || sample_times.first().is_some_and(|&t| t < 0.0)
    {
        return Err(Error::invalid(
            "sample times must be nondecreasing and >= 0".to_string(),
        ));
    }
    let mut eng = VoterEngine::new(l, lambda, rng)?;
    let mut out = VoterRun {
        times: Vec::new(),
        interfaces: Vec::new(),
        wraparound_annihilations: 0,
    };
    for &t in sample_times {
        eng.run_until(t)?;
        out.times.push(t);
        out.interfaces.push(eng.interfaces());
    }
    out.wraparound_annihilations = eng.annihilations;
    Ok(out)
}

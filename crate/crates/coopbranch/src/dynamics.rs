//! Forward-time engines.
//!
//! `replay` drives a configuration through a prebuilt event table, so two
//! replays on the same table are coupled pathwise; everything the coupling
//! suites assert rests on that. `simulate_direct` skips the table and draws
//! only effective events from the state-dependent aggregate rate
//! `particles * 1 + adjacent pairs * lambda`, which is what makes long
//! near-critical runs affordable. The two engines share the event semantics
//! below and agree in law; a two-sample test in the test suite holds them to
//! that.
//!
//! Event semantics on a ring of `l` sites:
//!
//! * jump right across bond `b`: particle at site `b` moves to `b + 1`,
//!   merging with any occupant (no-op when `b` is empty);
//! * jump left across bond `b`: particle at `b + 1` moves to `b` likewise;
//! * branch right at site `s`: when `s - 1` and `s` are both occupied, a
//!   particle appears at `s + 1` (no-op when the pair is incomplete, no
//!   change when the target is already occupied);
//! * branch left at site `s`: mirror image, pair `{s, s + 1}` births onto
//!   `s - 1`.
//!
//! On an absorbing `Window` the wrap bond does not exist and any event that
//! would move or place a particle onto site `0` or `l - 1` aborts the run:
//! windows are for runs whose particles provably stay interior, and a
//! truncated dynamics would be silently wrong.

use crate::error::{Error, Result};
use crate::graphical::{ArrowEvent, Direction, EventKind, GraphicalRep, View};
use crate::lattice::{Boundary, Configuration};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Applies one jump arrow to a copy of the configuration.
#[must_use]
pub fn apply_jump(cfg: &Configuration, bond: u32, dir: Direction) -> Configuration {
    let mut out = cfg.clone();
    apply_jump_in_place(&mut out, bond, dir).expect("jump on interior bond");
    out
}

/// Applies one branch arrow to a copy of the configuration.
#[must_use]
pub fn apply_branch(cfg: &Configuration, site: u32, dir: Direction) -> Configuration {
    let mut out = cfg.clone();
    apply_branch_in_place(&mut out, site, dir).expect("branch on interior site");
    out
}

pub(crate) fn apply_jump_in_place(
    cfg: &mut Configuration,
    bond: u32,
    dir: Direction,
) -> Result<()> {
    let l = cfg.len();
    debug_assert!(bond < l);
    let (src, dst) = match (cfg.boundary(), dir) {
        (Boundary::Periodic, Direction::Right) => (bond, (bond + 1) % l),
        (Boundary::Periodic, Direction::Left) => ((bond + 1) % l, bond),
        (Boundary::Window, Direction::Right) => {
            debug_assert!(bond + 1 < l, "wrap bond does not exist on a window");
            (bond, bond + 1)
        }
        (Boundary::Window, Direction::Left) => {
            debug_assert!(bond + 1 < l);
            (bond + 1, bond)
        }
    };
    if !cfg.is_occupied(src) {
        return Ok(());
    }
    if cfg.boundary() == Boundary::Window && (dst == 0 || dst == l - 1) {
        return Err(Error::WindowBoundaryContact {
            site: dst,
            time: f64::NAN,
        });
    }
    cfg.set(src, false);
    cfg.set(dst, true);
    Ok(())
}

pub(crate) fn apply_branch_in_place(
    cfg: &mut Configuration,
    site: u32,
    dir: Direction,
) -> Result<()> {
    let l = cfg.len();
    debug_assert!(site < l);
    let (pair_a, pair_b, target) = match (cfg.boundary(), dir) {
        (Boundary::Periodic, Direction::Right) => ((site + l - 1) % l, site, (site + 1) % l),
        (Boundary::Periodic, Direction::Left) => (site, (site + 1) % l, (site + l - 1) % l),
        (Boundary::Window, Direction::Right) => {
            debug_assert!(
                site >= 1 && site + 1 < l,
                "branch needs both neighbors inside the window"
            );
            (site - 1, site, site + 1)
        }
        (Boundary::Window, Direction::Left) => {
            debug_assert!(site >= 1 && site + 1 < l);
            (site, site + 1, site - 1)
        }
    };
    if !(cfg.is_occupied(pair_a) && cfg.is_occupied(pair_b)) {
        return Ok(());
    }
    if cfg.boundary() == Boundary::Window && (target == 0 || target == l - 1) {
        return Err(Error::WindowBoundaryContact {
            site: target,
            time: f64::NAN,
        });
    }
    cfg.set(target, true);
    Ok(())
}

fn apply_event(cfg: &mut Configuration, e: &ArrowEvent) -> Result<()> {
    let res = match e.kind {
        EventKind::Jump => apply_jump_in_place(cfg, e.bond(), e.dir),
        EventKind::Branch => apply_branch_in_place(cfg, e.site(), e.dir),
    };
    res.map_err(|err| match err {
        Error::WindowBoundaryContact { site, .. } => {
            Error::WindowBoundaryContact { site, time: e.time }
        }
        other => other,
    })
}

/// Drives `cfg` through every event of the table with `t0 < time <= t1`.
pub fn replay(cfg: &Configuration, rep: &GraphicalRep, t0: f64, t1: f64) -> Result<Configuration> {
    replay_trace(cfg, rep, t0, t1, |_, _| {})
}

/// Same as [`replay`], but hands each (state before event, event) pair to the
/// observer first. The coupling and duality suites are written against this.
pub fn replay_trace<F>(
    cfg: &Configuration,
    rep: &GraphicalRep,
    t0: f64,
    t1: f64,
    mut observe: F,
) -> Result<Configuration>
where
    F: FnMut(&Configuration, &ArrowEvent),
{
    if rep.view() != View::Forward {
        return Err(Error::invalid(
            "replay needs a forward event table".to_string(),
        ));
    }
    if cfg.len() != rep.len() {
        return Err(Error::invalid(format!(
            "configuration on {} sites does not match table on {} sites",
            cfg.len(),
            rep.len()
        )));
    }
    if cfg.boundary() != Boundary::Periodic {
        return Err(Error::invalid(
            "event tables are generated on a ring".to_string(),
        ));
    }
    let mut state = cfg.clone();
    for e in rep.events_in(t0, t1)? {
        observe(&state, e);
        apply_event(&mut state, e)?;
    }
    Ok(state)
}

/// Time-stamped snapshots from a single run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Configuration>,
}

/// Incremental engine state: occupancy plus index vectors that make
/// "pick a uniformly random particle / adjacent pair" O(1).
pub struct DirectEngine {
    cfg: Configuration,
    lambda: f64,
    time: f64,
    occupied: Vec<u32>,
    site_slot: Vec<u32>,
    pairs: Vec<u32>,
    pair_slot: Vec<u32>,
    rng: ChaCha8Rng,
    steps: u64,
}

const NO_SLOT: u32 = u32::MAX;

impl DirectEngine {
    pub fn new(cfg: Configuration, lambda: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let l = cfg.len();
        if cfg.boundary() == Boundary::Window && (cfg.is_occupied(0) || cfg.is_occupied(l - 1)) {
            return Err(Error::WindowBoundaryContact {
                site: if cfg.is_occupied(0) { 0 } else { l - 1 },
                time: 0.0,
            });
        }
        let mut eng = DirectEngine {
            cfg,
            lambda,
            time: 0.0,
            occupied: Vec::new(),
            site_slot: vec![NO_SLOT; l as usize],
            pairs: Vec::new(),
            pair_slot: vec![NO_SLOT; l as usize],
            rng,
            steps: 0,
        };
        for s in eng.cfg.occupied_sites() {
            eng.site_slot[s as usize] = eng.occupied.len() as u32;
            eng.occupied.push(s);
        }
        for a in eng.cfg.adjacent_pairs() {
            eng.pair_slot[a as usize] = eng.pairs.len() as u32;
            eng.pairs.push(a);
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

    #[must_use]
    pub fn pair_count(&self) -> u32 {
        self.pairs.len() as u32
    }

    fn total_rate(&self) -> f64 {
        self.occupied.len() as f64 + self.lambda * self.pairs.len() as f64
    }

    fn neighbor(&self, site: u32, dir: Direction) -> Result<u32> {
        let l = self.cfg.len();
        match self.cfg.boundary() {
            Boundary::Periodic => Ok(match dir {
                Direction::Right => (site + 1) % l,
                Direction::Left => (site + l - 1) % l,
            }),
            Boundary::Window => {
                let t = match dir {
                    Direction::Right => site + 1,
                    Direction::Left => site.wrapping_sub(1),
                };
                if t == 0 || t >= l - 1 {
                    return Err(Error::WindowBoundaryContact {
                        site: t.min(l - 1),
                        time: self.time,
                    });
                }
                Ok(t)
            }
        }
    }

    fn sync_pair(&mut self, anchor: u32) {
        let l = self.cfg.len();
        if self.cfg.boundary() == Boundary::Window && anchor + 1 >= l {
            return;
        }
        let a = anchor % l;
        let b = (anchor + 1) % l;
        let present = self.cfg.is_occupied(a) && self.cfg.is_occupied(b);
        let slot = self.pair_slot[a as usize];
        if present && slot == NO_SLOT {
            self.pair_slot[a as usize] = self.pairs.len() as u32;
            self.pairs.push(a);
        } else if !present && slot != NO_SLOT {
            let last = *self.pairs.last().expect("nonempty pair list");
            self.pairs.swap_remove(slot as usize);
            self.pair_slot[last as usize] = slot;
            self.pair_slot[a as usize] = NO_SLOT;
        }
    }

    fn vacate(&mut self, site: u32) {
        let slot = self.site_slot[site as usize];
        debug_assert_ne!(slot, NO_SLOT);
        let last = *self.occupied.last().expect("nonempty occupied list");
        self.occupied.swap_remove(slot as usize);
        self.site_slot[last as usize] = slot;
        self.site_slot[site as usize] = NO_SLOT;
        self.cfg.set(site, false);
    }

    fn occupy(&mut self, site: u32) {
        debug_assert_eq!(self.site_slot[site as usize], NO_SLOT);
        self.site_slot[site as usize] = self.occupied.len() as u32;
        self.occupied.push(site);
        self.cfg.set(site, true);
    }

    fn touch_pairs_around(&mut self, site: u32) {
        let l = self.cfg.len();
        self.sync_pair((site + l - 1) % l);
        self.sync_pair(site);
    }

    /// Advances one effective event. Returns the event time, or `None` when
    /// the total rate is zero (empty lattice).
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
        self.dispatch(rate)?;
        Ok(Some(self.time))
    }

    /// Runs until the next event would land past `t`, then parks the clock
    /// at `t`. Exactness rests on the memorylessness of the exponential
    /// holding times: conditioned on the state, the residual wait after `t`
    /// is again exponential, so redrawing it later is the same law.
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
            self.dispatch(rate)?;
        }
        self.time = t;
        Ok(())
    }

    // Event selection and application, shared by step/run_until.
    fn dispatch(&mut self, rate: f64) -> Result<()> {
        let pick: f64 = self.rng.gen::<f64>() * rate;
        let dir = if self.rng.gen::<f64>() < 0.5 {
            Direction::Left
        } else {
            Direction::Right
        };
        // pick can round up to exactly `rate`; fall back to the jump arm
        // rather than index an empty pair list
        if pick < self.occupied.len() as f64 || self.pairs.is_empty() {
            let idx = (pick as usize).min(self.occupied.len() - 1);
            let src = self.occupied[idx];
            let dst = self.neighbor(src, dir)?;
            self.vacate(src);
            if !self.cfg.is_occupied(dst) {
                self.occupy(dst);
            }
            self.touch_pairs_around(src);
            self.touch_pairs_around(dst);
        } else {
            let idx = ((pick - self.occupied.len() as f64) / self.lambda) as usize;
            let idx = idx.min(self.pairs.len() - 1);
            let a = self.pairs[idx];
            let l = self.cfg.len();
            let target = match dir {
                Direction::Right => self.neighbor((a + 1) % l, Direction::Right)?,
                Direction::Left => self.neighbor(a, Direction::Left)?,
            };
            if !self.cfg.is_occupied(target) {
                self.occupy(target);
                self.touch_pairs_around(target);
            }
        }
        // Full-lattice resync check of the incremental bookkeeping. Run
        // periodically, not per event: the rescan is O(L) with an
        // allocation, which dominates the O(1) event work in debug builds.
        self.steps = self.steps.wrapping_add(1);
        if self.steps.is_multiple_of(4096) {
            debug_assert_eq!(self.occupied.len() as u32, self.cfg.particle_count());
            debug_assert_eq!(self.pairs.len(), self.cfg.adjacent_pairs().len());
        }
        Ok(())
    }
}

/// Runs the aggregate-rate engine and snapshots the state at each requested
/// time. Sample times must be nondecreasing and nonnegative.
pub fn simulate_direct(
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
    let mut eng = DirectEngine::new(cfg.clone(), lambda, rng)?;
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

/// Outcome of a two-particle seed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalOutcome {
    /// True when at least two particles were alive through the whole horizon.
    pub survived: bool,
    /// First time the particle count dropped to one, when it did.
    pub extinction_time: Option<f64>,
}

/// Starts two adjacent particles mid-lattice and reports whether the seed
/// still has at least two particles at the horizon. A lone particle can
/// never rebuild a pair, so the count-below-two state is absorbing and the
/// run short-circuits there.
pub fn survival_run(
    lambda: f64,
    horizon: f64,
    l: u32,
    boundary: Boundary,
    rng: ChaCha8Rng,
) -> Result<SurvivalOutcome> {
    if !(horizon > 0.0) {
        return Err(Error::invalid(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    let mid = l / 2;
    let cfg = Configuration::new(l, &[mid, mid + 1], boundary)?;
    let mut eng = DirectEngine::new(cfg, lambda, rng)?;
    loop {
        if eng.particle_count() < 2 {
            return Ok(SurvivalOutcome {
                survived: false,
                extinction_time: Some(eng.time()),
            });
        }
        let rate = eng.total_rate();
        let mut u: f64 = eng.rng.gen();
        while u <= 0.0 {
            u = eng.rng.gen();
        }
        let wait = -u.ln() / rate;
        if eng.time + wait > horizon {
            return Ok(SurvivalOutcome {
                survived: true,
                extinction_time: None,
            });
        }
        eng.time += wait;
        eng.dispatch(rate)?;
    }
}

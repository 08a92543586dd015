//! Space-time event tables.
//!
//! The process on a ring of `l` sites is driven by independent Poisson
//! streams attached to fixed locations: every bond carries left and right
//! jump arrows at rate 1/2 each, every site carries left and right branch
//! arrows at rate lambda/2 each. A jump arrow moves the particle at the
//! bond's source site across the bond, merging with any particle already
//! there; a branch arrow at site `s` fires only when `s` and the neighbor on
//! the arrow's tail side are both occupied, placing a new particle on the
//! head side.
//!
//! Locations are encoded in half-unit steps: `loc2 = 2 * site` for sites,
//! `loc2 = 2 * bond + 1` for bonds (bond `b` joins sites `b` and `b + 1`
//! mod `l`). Generating the whole table from one seed makes monotone
//! couplings, additivity checks, and the backward dual pathwise statements
//! about a single realization instead of distributional ones.

use crate::error::{Error, Result};
use crate::rng::{tag, SeedSplitter};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Jump,
    Branch,
}

/// One Poisson arrow. `loc2` is the location in half-unit steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrowEvent {
    pub time: f64,
    pub loc2: u32,
    pub kind: EventKind,
    pub dir: Direction,
}

impl ArrowEvent {
    /// Site index for branch arrows (`loc2` even).
    #[must_use]
    pub fn site(&self) -> u32 {
        debug_assert_eq!(self.loc2 % 2, 0);
        self.loc2 / 2
    }

    /// Bond index for jump arrows in the forward view (`loc2` odd).
    #[must_use]
    pub fn bond(&self) -> u32 {
        debug_assert_eq!(self.loc2 % 2, 1);
        self.loc2 / 2
    }
}

/// Which way the jump arrows are to be read. `Forward` tables drive the
/// particle system; `Dual` tables drive interval-boundary walks downward in
/// time. Branch arrows are shared between the two views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Forward,
    Dual,
}

/// A complete event table on `[0, horizon]`, time-sorted, on a ring.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphicalRep {
    l: u32,
    lambda: f64,
    horizon: f64,
    seed: u64,
    view: View,
    events: Vec<ArrowEvent>,
}

fn poisson_times(
    rng: &mut ChaCha8Rng,
    rate: f64,
    horizon: f64,
    loc2: u32,
    kind: EventKind,
    dir: Direction,
    events: &mut Vec<ArrowEvent>,
) {
    if rate <= 0.0 {
        return;
    }
    let mut t = 0.0f64;
    loop {
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        t += -u.ln() / rate;
        if t > horizon {
            break;
        }
        events.push(ArrowEvent {
            time: t,
            loc2,
            kind,
            dir,
        });
    }
}

fn has_time_tie(sorted: &[ArrowEvent]) -> bool {
    sorted.windows(2).any(|w| w[0].time == w[1].time)
}

pub fn generate(l: u32, lambda: f64, horizon: f64, seed: u64) -> Result<GraphicalRep> {
    if l < 3 {
        return Err(Error::invalid(format!(
            "lattice needs at least 3 sites, got {l}"
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!(
            "horizon must be finite and > 0, got {horizon}"
        )));
    }
    let splitter = SeedSplitter::new(seed);
    // Ties across streams have probability zero; if the draw produces one
    // anyway, throw the attempt away and redraw the whole table.
    for attempt in 0..32u64 {
        let events = generate_attempt(l, lambda, horizon, &splitter, attempt, None);
        if !has_time_tie(&events) {
            return Ok(GraphicalRep {
                l,
                lambda,
                horizon,
                seed,
                view: View::Forward,
                events,
            });
        }
    }
    Err(Error::invalid(
        "could not draw a tie-free event table in 32 attempts".to_string(),
    ))
}

/// `extra`: when present, only branch streams at the given extra rate are
/// drawn, with stream tags salted by the (old, new) lambda pair so an
/// augmented table never reuses the base table's randomness.
fn generate_attempt(
    l: u32,
    lambda: f64,
    horizon: f64,
    splitter: &SeedSplitter,
    attempt: u64,
    extra: Option<(f64, f64)>,
) -> Vec<ArrowEvent> {
    let mut events = Vec::new();
    let (branch_rate, jump_rate, salt) = match extra {
        None => (lambda / 2.0, 0.5, [0u64, 0u64]),
        Some((old, new)) => ((new - old) / 2.0, 0.0, [old.to_bits(), new.to_bits()]),
    };
    for b in 0..l {
        if jump_rate > 0.0 {
            let loc2 = 2 * b + 1;
            for dir in [Direction::Left, Direction::Right] {
                let d = if dir == Direction::Left {
                    tag::LEFT
                } else {
                    tag::RIGHT
                };
                let mut rng = splitter.rng(&[tag::ATTEMPT, attempt, tag::JUMP, u64::from(loc2), d]);
                poisson_times(
                    &mut rng,
                    jump_rate,
                    horizon,
                    loc2,
                    EventKind::Jump,
                    dir,
                    &mut events,
                );
            }
        }
        if branch_rate > 0.0 {
            let loc2 = 2 * b;
            for dir in [Direction::Left, Direction::Right] {
                let d = if dir == Direction::Left {
                    tag::LEFT
                } else {
                    tag::RIGHT
                };
                let tags = match extra {
                    None => vec![tag::ATTEMPT, attempt, tag::BRANCH, u64::from(loc2), d],
                    Some(_) => vec![
                        tag::AUGMENT,
                        salt[0],
                        salt[1],
                        tag::ATTEMPT,
                        attempt,
                        tag::BRANCH,
                        u64::from(loc2),
                        d,
                    ],
                };
                let mut rng = splitter.rng(&tags);
                poisson_times(
                    &mut rng,
                    branch_rate,
                    horizon,
                    loc2,
                    EventKind::Branch,
                    dir,
                    &mut events,
                );
            }
        }
    }
    events.sort_unstable_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    events
}

impl GraphicalRep {
    #[must_use]
    pub fn len(&self) -> u32 {
        self.l
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    #[must_use]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[must_use]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[must_use]
    pub fn view(&self) -> View {
        self.view
    }

    #[must_use]
    pub fn events(&self) -> &[ArrowEvent] {
        &self.events
    }

    /// Events with `t0 < time <= t1`, in time order.
    pub fn events_in(&self, t0: f64, t1: f64) -> Result<&[ArrowEvent]> {
        if !(0.0 <= t0 && t0 <= t1 && t1 <= self.horizon) {
            return Err(Error::invalid(format!(
                "window ({t0}, {t1}] outside [0, {}] or inverted",
                self.horizon
            )));
        }
        let lo = self.events.partition_point(|e| e.time <= t0);
        let hi = self.events.partition_point(|e| e.time <= t1);
        Ok(&self.events[lo..hi])
    }

    /// Superimposes independent branch arrows so the table drives the system
    /// at `lambda_prime >= lambda`. Jump arrows and existing branch arrows
    /// are carried over bit for bit, which is what makes the coupling
    /// monotone pathwise.
    pub fn augment(&self, lambda_prime: f64) -> Result<GraphicalRep> {
        if self.view != View::Forward {
            return Err(Error::invalid(
                "augment applies to forward tables".to_string(),
            ));
        }
        if !(lambda_prime >= self.lambda) {
            return Err(Error::invalid(format!(
                "augment needs lambda_prime >= {}, got {lambda_prime}",
                self.lambda
            )));
        }
        let splitter = SeedSplitter::new(self.seed);
        for attempt in 0..32u64 {
            let extra = generate_attempt(
                self.l,
                self.lambda,
                self.horizon,
                &splitter,
                attempt,
                Some((self.lambda, lambda_prime)),
            );
            let mut merged = Vec::with_capacity(self.events.len() + extra.len());
            merged.extend_from_slice(&self.events);
            merged.extend_from_slice(&extra);
            merged.sort_unstable_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
            if !has_time_tie(&merged) {
                return Ok(GraphicalRep {
                    l: self.l,
                    lambda: lambda_prime,
                    horizon: self.horizon,
                    seed: self.seed,
                    view: View::Forward,
                    events: merged,
                });
            }
        }
        Err(Error::invalid(
            "could not draw tie-free augmentation in 32 attempts".to_string(),
        ))
    }

    /// The time-reversed reading of the same realization. A right jump arrow
    /// across bond `b` (head at site `b + 1`) becomes, for the downward
    /// walks, a left arrow at site `b`, and a left jump arrow across bond
    /// `b` becomes a right arrow at site `b + 1`: the boundary walker dodges
    /// to keep forward particle paths from crossing it. Applying the map
    /// twice restores the original jump arrows.
    #[must_use]
    pub fn dual_view(&self) -> GraphicalRep {
        let two_l = 2 * self.l;
        let events = self
            .events
            .iter()
            .map(|e| match e.kind {
                EventKind::Branch => *e,
                EventKind::Jump => match e.dir {
                    Direction::Right => ArrowEvent {
                        time: e.time,
                        loc2: (e.loc2 + two_l - 1) % two_l,
                        kind: EventKind::Jump,
                        dir: Direction::Left,
                    },
                    Direction::Left => ArrowEvent {
                        time: e.time,
                        loc2: (e.loc2 + 1) % two_l,
                        kind: EventKind::Jump,
                        dir: Direction::Right,
                    },
                },
            })
            .collect();
        GraphicalRep {
            l: self.l,
            lambda: self.lambda,
            horizon: self.horizon,
            seed: self.seed,
            view: if self.view == View::Forward {
                View::Dual
            } else {
                View::Forward
            },
            events,
        }
    }

    /// Serializes the table: a fixed header, then one 17-byte record per
    /// event (little-endian f64 time, i32 location in half-unit steps, one
    /// flag byte: bit 0 direction right, bit 1 kind branch).
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[if self.view == View::Forward { 0u8 } else { 1u8 }, 0u8])?;
        w.write_all(&self.l.to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.events.len() as u64).to_le_bytes())?;
        for e in &self.events {
            w.write_all(&e.time.to_le_bytes())?;
            w.write_all(&(e.loc2 as i32).to_le_bytes())?;
            let mut flags = 0u8;
            if e.dir == Direction::Right {
                flags |= 1;
            }
            if e.kind == EventKind::Branch {
                flags |= 2;
            }
            w.write_all(&[flags])?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<GraphicalRep> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::FormatError("bad magic".to_string()));
        }
        let version = read_u16(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::FormatError(format!("unsupported version {version}")));
        }
        let mut vb = [0u8; 2];
        r.read_exact(&mut vb)?;
        let view = match vb[0] {
            0 => View::Forward,
            1 => View::Dual,
            x => return Err(Error::FormatError(format!("bad view byte {x}"))),
        };
        let l = read_u32(r)?;
        if l < 3 {
            return Err(Error::FormatError(format!("bad lattice length {l}")));
        }
        let lambda = f64::from_le_bytes(read_8(r)?);
        let horizon = f64::from_le_bytes(read_8(r)?);
        let seed = u64::from_le_bytes(read_8(r)?);
        let count = u64::from_le_bytes(read_8(r)?);
        let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..count {
            let time = f64::from_le_bytes(read_8(r)?);
            let loc = i32::from_le_bytes(read_4(r)?);
            let mut fb = [0u8; 1];
            r.read_exact(&mut fb)?;
            if fb[0] & !3 != 0 {
                return Err(Error::FormatError(format!("bad flag byte {}", fb[0])));
            }
            let dir = if fb[0] & 1 != 0 {
                Direction::Right
            } else {
                Direction::Left
            };
            let kind = if fb[0] & 2 != 0 {
                EventKind::Branch
            } else {
                EventKind::Jump
            };
            if loc < 0 || loc as u32 >= 2 * l {
                return Err(Error::FormatError(format!("location {loc} out of range")));
            }
            // jump arrows sit on bonds (odd) in the forward view; everything
            // else sits on sites (even)
            let parity_ok = match (view, kind) {
                (View::Forward, EventKind::Jump) => loc % 2 == 1,
                _ => loc % 2 == 0,
            };
            if !parity_ok {
                return Err(Error::FormatError(format!(
                    "location {loc} has the wrong parity for its arrow kind"
                )));
            }
            if !(time > 0.0 && time <= horizon) {
                return Err(Error::FormatError(format!(
                    "time {time} outside (0, {horizon}]"
                )));
            }
            if time <= prev {
                return Err(Error::FormatError(
                    "events out of order or tied".to_string(),
                ));
            }
            prev = time;
            events.push(ArrowEvent {
                time,
                loc2: loc as u32,
                kind,
                dir,
            });
        }
        Ok(GraphicalRep {
            l,
            lambda,
            horizon,
            seed,
            view,
            events,
        })
    }
}

const MAGIC: &[u8; 4] = b"CBEV";
const FORMAT_VERSION: u16 = 1;

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_4<R: Read>(r: &mut R) -> Result<[u8; 4]> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_8<R: Read>(r: &mut R) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(b)
}

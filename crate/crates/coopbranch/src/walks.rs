//! Coalescing random walks and their meeting times.
//!
//! Everything here lives on the integer line, not the ring: these are the
//! free walks whose meeting times control the long-time decay of the
//! particle system. Only gaps between walkers matter, so the simulators run
//! the gap chains directly (one gap for two walkers, two anticorrelated
//! gaps for three), which is equivalent in law and markedly faster.
//!
//! `tau2_survival_exact` is the deterministic oracle: the survival
//! probability of the two-walker meeting time equals the probability that a
//! free +-1 walk started at 1 (jump rate 1 per direction) sits in {1, 2} at
//! time t. It is evaluated by uniformization on a truncated state space
//! with a measured error bound, widening the truncation until the bound
//! clears 1e-10.

use crate::error::{Error, Result};
use crate::stats::binomial_se;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Default censoring cap for two-walker meetings. The meeting time has an
/// infinite mean (its tail decays like t^{-1/2}), so a cap is mandatory.
pub const TAU2_DEFAULT_CAP: f64 = 1e6;

/// Default censoring cap for three-walker first meetings. The t^{-3/2} tail
/// makes censoring at 1e4 a sub-1e-5 event.
pub const TAU3_DEFAULT_CAP: f64 = 1e4;

/// One observed first-meeting event.
#[derive(Debug, Clone, PartialEq)]
pub struct MeetingTimeSample {
    /// Walker starting positions, strictly increasing.
    pub starts: Vec<i64>,
    /// First time two walkers coincide.
    pub tau: f64,
    /// Indices (into `starts`) of the pair that met.
    pub which_pair: (usize, usize),
}

/// Outcome of a meeting simulation: either the pair met, or the time cap
/// came first. Censored runs are reported, never dropped.
#[derive(Debug, Clone, PartialEq)]
pub enum MeetingResult {
    Met(MeetingTimeSample),
    Censored { cap: f64 },
}

impl MeetingResult {
    #[must_use]
    pub fn is_censored(&self) -> bool {
        matches!(self, MeetingResult::Censored { .. })
    }

    /// Meeting time when one happened.
    #[must_use]
    pub fn tau(&self) -> Option<f64> {
        match self {
            MeetingResult::Met(s) => Some(s.tau),
            MeetingResult::Censored { .. } => None,
        }
    }
}

/// Runs independent rate-1 walkers (+-1 at rate 1/2 each) from the given
/// strictly increasing starts until the first pair coincides or `cap` time
/// has elapsed. Two or three walkers are supported.
pub fn simulate_meeting(starts: &[i64], rng: &mut ChaCha8Rng, cap: f64) -> Result<MeetingResult> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::invalid(format!(
            "cap must be positive and finite, got {cap}"
        )));
    }
    if starts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "starts must be strictly increasing, got {starts:?}"
        )));
    }
    match starts {
        [a, b] => {
            let mut g = b - a;
            let mut time = 0.0;
            loop {
                time += exp_wait(rng, 2.0);
                if time > cap {
                    return Ok(MeetingResult::Censored { cap });
                }
                g += if rng.gen::<f64>() < 0.5 { -1 } else { 1 };
                if g == 0 {
                    return Ok(MeetingResult::Met(MeetingTimeSample {
                        starts: starts.to_vec(),
                        tau: time,
                        which_pair: (0, 1),
                    }));
                }
            }
        }
        [a, b, c] => {
            let mut g1 = b - a;
            let mut g2 = c - b;
            let mut time = 0.0;
            loop {
                time += exp_wait(rng, 3.0);
                if time > cap {
                    return Ok(MeetingResult::Censored { cap });
                }
                // six equally likely walker moves; the middle walker couples
                // the two gaps with opposite signs
                match rng.gen_range(0u8..6) {
                    0 => g1 -= 1,
                    1 => g1 += 1,
                    2 => {
                        g1 += 1;
                        g2 -= 1;
                    }
                    3 => {
                        g1 -= 1;
                        g2 += 1;
                    }
                    4 => g2 += 1,
                    _ => g2 -= 1,
                }
                let pair = if g1 == 0 {
                    Some((0, 1))
                } else if g2 == 0 {
                    Some((1, 2))
                } else {
                    None
                };
                if let Some(which_pair) = pair {
                    return Ok(MeetingResult::Met(MeetingTimeSample {
                        starts: starts.to_vec(),
                        tau: time,
                        which_pair,
                    }));
                }
            }
        }
        _ => Err(Error::invalid(format!(
            "need 2 or 3 walkers, got {}",
            starts.len()
        ))),
    }
}

fn exp_wait(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    -u.ln() / rate
}

/// Expected first meeting time among three ordered walkers at i <= j <= k:
/// exactly (j - i)(k - j).
pub fn mean_meeting_exact(i: i64, j: i64, k: i64) -> Result<f64> {
    if !(i <= j && j <= k) {
        return Err(Error::invalid(format!(
            "walker positions must be ordered, got ({i}, {j}, {k})"
        )));
    }
    Ok(((j - i) * (k - j)) as f64)
}

/// P[two adjacent walkers have not met by time t], exactly.
///
/// Equals P[S_t in {0, 1}] for a free walk S started at 0 with jump rate 1
/// per direction. Evaluated by uniformization at rate 2 on states
/// |S| <= 8 sqrt(t) + 50: Poisson weights are accumulated in log space, the
/// conditional step distribution is iterated with truncation, and the
/// returned value is certified by the measured truncation leak plus the
/// Poisson tail. The truncation widens by 3/2 until that bound is below
/// 1e-10.
pub fn tau2_survival_exact(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "time must be finite and >= 0, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let mut m = (8.0 * t.sqrt() + 50.0).ceil() as usize;
    for _ in 0..8 {
        let (value, err) = uniformized_free_walk_mass(t, m);
        if err < 1e-10 {
            return Ok(value);
        }
        m = m * 3 / 2;
    }
    Err(Error::invalid(format!(
        "survival oracle failed to reach 1e-10 accuracy at t = {t}"
    )))
}

// P[S_t in {0,1}] for the free rate-2 +-1 walk from 0, truncated to
// |S| <= m, together with a rigorous absolute error bound.
fn uniformized_free_walk_mass(t: f64, m: usize) -> (f64, f64) {
    let size = 2 * m + 1;
    let mid = m;
    let mut dist = vec![0.0f64; size];
    dist[mid] = 1.0;
    let mut next = vec![0.0f64; size];
    let lt = 2.0 * t;
    let kmax = (lt + 12.0 * lt.sqrt() + 40.0).ceil() as usize;
    let mut log_w = -lt;
    let mut weight_sum = 0.0;
    let mut acc = 0.0;
    for k in 0..=kmax {
        let w = log_w.exp();
        weight_sum += w;
        acc += w * (dist[mid] + dist[mid + 1]);
        if k < kmax {
            for i in 0..size {
                let left = if i > 0 { dist[i - 1] } else { 0.0 };
                let right = if i + 1 < size { dist[i + 1] } else { 0.0 };
                next[i] = 0.5 * (left + right);
            }
            std::mem::swap(&mut dist, &mut next);
            log_w += lt.ln() - ((k + 1) as f64).ln();
        }
    }
    // every term underestimates by at most the mass leaked so far, and the
    // k > kmax terms are bounded by the missing Poisson weight
    let leak = (1.0 - dist.iter().sum::<f64>()).max(0.0);
    let poisson_tail = (1.0 - weight_sum).max(0.0);
    (acc, leak + poisson_tail + 1e-13)
}

/// Empirical tail estimate for the three-walker first meeting time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub t: f64,
    pub p: f64,
    pub se: f64,
    pub survivors: u64,
    pub replicas: u64,
}

/// Estimates P[t < first meeting] for walkers started at (0, 1, 2), with
/// binomial standard error. Capping the simulation at `t` itself is exact
/// here: a censored run is precisely a survival.
pub fn tau3_tail_estimate(t: f64, replicas: u64, rng: &mut ChaCha8Rng) -> Result<TailEstimate> {
    if !(t > 0.0) || replicas == 0 {
        return Err(Error::invalid(format!(
            "need t > 0 and replicas >= 1, got t = {t}, replicas = {replicas}"
        )));
    }
    let mut survivors = 0u64;
    for _ in 0..replicas {
        if simulate_meeting(&[0, 1, 2], rng, t)?.is_censored() {
            survivors += 1;
        }
    }
    let p = survivors as f64 / replicas as f64;
    Ok(TailEstimate {
        t,
        p,
        se: binomial_se(p, replicas),
        survivors,
        replicas,
    })
}

/// Weighted least-squares fit of `c` in `p = c * t^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    /// WLS estimate of the constant.
    pub constant: f64,
    /// Standard error of the constant under the supplied weights.
    pub se: f64,
    /// max over samples of p_hat * t^(-exponent): a conservative envelope
    /// constant that dominates every observed point.
    pub conservative: f64,
}

/// Fits the prefactor of a known power law to (t, p_hat, se) samples.
/// The exponent is held fixed and must be negative (decaying tail).
pub fn fit_power_constant(samples: &[(f64, f64, f64)], exponent: f64) -> Result<PowerFit> {
    if samples.len() < 2 {
        return Err(Error::DegenerateFit {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(exponent < 0.0) {
        return Err(Error::invalid(format!(
            "exponent must be negative, got {exponent}"
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut conservative = f64::NEG_INFINITY;
    for &(t, p, se) in samples {
        if !(t > 0.0) || !(se > 0.0) || !se.is_finite() || !p.is_finite() {
            return Err(Error::invalid(format!(
                "degenerate sample (t = {t}, p = {p}, se = {se}); need t > 0 and finite se > 0"
            )));
        }
        let x = t.powf(exponent);
        let w = 1.0 / (se * se);
        num += w * p * x;
        den += w * x * x;
        conservative = conservative.max(p * t.powf(-exponent));
    }
    if !(den > 0.0) {
        return Err(Error::invalid(
            "all weights vanished in power-law fit".to_string(),
        ));
    }
    Ok(PowerFit {
        constant: num / den,
        se: (1.0 / den).sqrt(),
        conservative,
    })
}

//! One resolve/run pair per subcommand. `resolve_*` merges flags with config
//! file values and validates; `run_*` does the work and builds artifacts.
//! Splitting the two keeps unknown-key rejection ahead of any computation.

use std::path::PathBuf;

use serde_json::{Map, Value};

use coopbranch::comparisons::{
    contact_inclusion_violations, good_block_monte_carlo, good_block_probability, simulate_op,
};
use coopbranch::dual3::{witness_profile, SuperdualState};
use coopbranch::dynamics::{apply_branch, apply_jump, simulate_direct};
use coopbranch::experiments::{
    check_density_ode, estimate_survival, fit_decay, scan_critical, CrossingThreshold,
    DecayObservable, ScanResult, SURVIVAL_CUT,
};
use coopbranch::graphical::generate;
use coopbranch::rng::SeedSplitter;
use coopbranch::stats::mean_se;
use coopbranch::walks::{mean_meeting_exact, simulate_meeting, TAU3_DEFAULT_CAP};
use coopbranch::{ArrowEvent, Boundary, Configuration, EventKind};

use crate::config::{
    check_rate, parse_grid, parse_starts, parse_times, require, CliResult, Failure, FileConfig,
};
use crate::output::{envelope, num, num_array, Artifacts, Csv, CsvField};
use crate::render::{render_pbm, render_svg};

fn positive(value: f64, key: &str) -> CliResult<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Failure::Usage(format!(
            "{key} must be finite and > 0, got {value}"
        )))
    }
}

fn at_least(value: u64, min: u64, key: &str) -> CliResult<u64> {
    if value >= min {
        Ok(value)
    } else {
        Err(Failure::Usage(format!(
            "{key} must be >= {min}, got {value}"
        )))
    }
}

/// Deterministic half-density start: site occupancy keyed off the seed
/// stream, so the same seed always draws the same configuration.
fn half_density(l: u32, splitter: &SeedSplitter, salt: &[u64]) -> Configuration {
    let mut occupied = Vec::new();
    for site in 0..l {
        let mut path = salt.to_vec();
        path.push(u64::from(site));
        if splitter.derive(&path) & 1 == 0 {
            occupied.push(site);
        }
    }
    Configuration::new(l, &occupied, Boundary::Periodic).expect("sites are in range")
}

fn initial_state(kind: &str, l: u32, splitter: &SeedSplitter) -> CliResult<Configuration> {
    match kind {
        "full" => Ok(Configuration::fully_occupied(l, Boundary::Periodic)?),
        "pair" => {
            if l < 2 {
                return Err(Failure::Usage("initial pair needs at least 2 sites".into()));
            }
            Ok(Configuration::new(
                l,
                &[l / 2 - 1, l / 2],
                Boundary::Periodic,
            )?)
        }
        "half" => Ok(half_density(l, splitter, &[90])),
        other => Err(Failure::Usage(format!(
            "initial must be full, pair, or half, got `{other}`"
        ))),
    }
}

fn apply_event(cfg: &Configuration, e: &ArrowEvent) -> Configuration {
    match e.kind {
        EventKind::Jump => apply_jump(cfg, e.bond(), e.dir),
        EventKind::Branch => apply_branch(cfg, e.site(), e.dir),
    }
}

fn contains_all(inner: &Configuration, outer: &Configuration) -> bool {
    (0..inner.len()).all(|s| !inner.is_occupied(s) || outer.is_occupied(s))
}

fn uniform_times(horizon: f64, samples: u64) -> Vec<f64> {
    (0..samples)
        .map(|k| horizon * k as f64 / (samples - 1) as f64)
        .collect()
}

// ---------------------------------------------------------------- simulate

pub struct SimulateParams {
    pub lambda: f64,
    pub sites: u32,
    pub horizon: f64,
    pub samples: u64,
    pub initial: String,
}

pub fn resolve_simulate(
    file: &mut FileConfig,
    lambda: Option<f64>,
    sites: Option<u32>,
    horizon: Option<f64>,
    samples: Option<u64>,
    initial: Option<String>,
) -> CliResult<SimulateParams> {
    let params = SimulateParams {
        lambda: check_rate(require(file.take("lambda", lambda)?, "lambda")?)?,
        sites: require(file.take("sites", sites)?, "sites")?,
        horizon: positive(
            require(file.take("horizon", horizon)?, "horizon")?,
            "horizon",
        )?,
        samples: at_least(file.take("samples", samples)?.unwrap_or(200), 2, "samples")?,
        initial: file
            .take("initial", initial)?
            .unwrap_or_else(|| "full".into()),
    };
    at_least(u64::from(params.sites), 1, "sites")?;
    Ok(params)
}

pub fn run_simulate(p: &SimulateParams, seed: u64) -> CliResult<Artifacts> {
    let splitter = SeedSplitter::new(seed);
    let cfg = initial_state(&p.initial, p.sites, &splitter)?;
    let times = uniform_times(p.horizon, p.samples);
    let traj = simulate_direct(&cfg, p.lambda, &times, splitter.rng(&[1]))?;

    let l = f64::from(p.sites);
    let mut csv = Csv::new("coopbranch.simulate.v1", &["t", "density", "pair_density"]);
    for (t, state) in traj.times.iter().zip(&traj.states) {
        csv.row(&[
            CsvField::F(*t),
            CsvField::F(f64::from(state.particle_count()) / l),
            CsvField::F(state.adjacent_pairs().len() as f64 / l),
        ]);
    }

    let last = traj.states.last().expect("at least two samples");
    let mut payload = Map::new();
    payload.insert("params".into(), simulate_params_json(p));
    payload.insert(
        "final_density".into(),
        num(f64::from(last.particle_count()) / l),
    );
    payload.insert("final_particles".into(), Value::from(last.particle_count()));
    payload.insert("extinct".into(), Value::Bool(last.particle_count() == 0));

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope(
            "coopbranch.simulate.v1",
            "simulate",
            seed,
            payload,
        )),
        files: Vec::new(),
    })
}

fn simulate_params_json(p: &SimulateParams) -> Value {
    let mut m = Map::new();
    m.insert("lambda".into(), num(p.lambda));
    m.insert("sites".into(), Value::from(p.sites));
    m.insert("horizon".into(), num(p.horizon));
    m.insert("samples".into(), Value::from(p.samples));
    m.insert("initial".into(), Value::String(p.initial.clone()));
    Value::Object(m)
}

// -------------------------------------------------------------------- scan

pub struct ScanParams {
    pub grid: Vec<f64>,
    pub sites: u32,
    pub horizon: f64,
    pub replicas: u64,
    pub density_threshold: CrossingThreshold,
    pub survival_threshold: CrossingThreshold,
}

fn parse_threshold(spec: &str, key: &str) -> CliResult<CrossingThreshold> {
    if spec == "2se" {
        return Ok(CrossingThreshold::TwoStderr);
    }
    let cut = spec.parse::<f64>().map_err(|e| {
        Failure::Usage(format!(
            "{key}: expected `2se` or a number, got `{spec}`: {e}"
        ))
    })?;
    if !cut.is_finite() || cut <= 0.0 {
        return Err(Failure::Usage(format!("{key}: cut must be > 0, got {cut}")));
    }
    Ok(CrossingThreshold::Fixed(cut))
}

#[allow(clippy::too_many_arguments)]
pub fn resolve_scan(
    file: &mut FileConfig,
    grid: Option<String>,
    sites: Option<u32>,
    horizon: Option<f64>,
    replicas: Option<u64>,
    density_threshold: Option<String>,
    survival_threshold: Option<String>,
) -> CliResult<ScanParams> {
    let grid_spec = require(file.take("grid", grid)?, "grid")?;
    let density_spec = file
        .take("density-threshold", density_threshold)?
        .unwrap_or_else(|| "2se".into());
    let survival_spec = file
        .take("survival-threshold", survival_threshold)?
        .unwrap_or_else(|| SURVIVAL_CUT.to_string());
    Ok(ScanParams {
        grid: parse_grid(&grid_spec)?,
        sites: require(file.take("sites", sites)?, "sites")?,
        horizon: positive(
            require(file.take("horizon", horizon)?, "horizon")?,
            "horizon",
        )?,
        replicas: at_least(
            require(file.take("replicas", replicas)?, "replicas")?,
            2,
            "replicas",
        )?,
        density_threshold: parse_threshold(&density_spec, "density-threshold")?,
        survival_threshold: parse_threshold(&survival_spec, "survival-threshold")?,
    })
}

fn threshold_json(t: CrossingThreshold) -> Value {
    match t {
        CrossingThreshold::TwoStderr => Value::String("2se".into()),
        CrossingThreshold::Fixed(cut) => num(cut),
    }
}

fn crossing_json(c: &coopbranch::experiments::Crossing) -> Value {
    let mut m = Map::new();
    match c {
        coopbranch::experiments::Crossing::Bracketed {
            lower,
            upper,
            midpoint,
        } => {
            m.insert("bracketed".into(), Value::Bool(true));
            m.insert("lower".into(), num(*lower));
            m.insert("upper".into(), num(*upper));
            m.insert("midpoint".into(), num(*midpoint));
        }
        coopbranch::experiments::Crossing::Unbracketed => {
            m.insert("bracketed".into(), Value::Bool(false));
        }
    }
    Value::Object(m)
}

pub fn run_scan(p: &ScanParams, seed: u64) -> CliResult<Artifacts> {
    let result: ScanResult = scan_critical(
        &p.grid,
        p.sites,
        p.horizon,
        p.replicas,
        seed,
        p.density_threshold,
        p.survival_threshold,
    )?;

    let mut csv = Csv::new(
        "coopbranch.scan.v1",
        &["lambda", "theta", "theta_se", "psi", "psi_se"],
    );
    for pt in &result.points {
        csv.row(&[
            CsvField::F(pt.lambda),
            CsvField::F(pt.theta),
            CsvField::F(pt.theta_se),
            CsvField::F(pt.psi),
            CsvField::F(pt.psi_se),
        ]);
    }

    let points: Vec<Value> = result
        .points
        .iter()
        .map(|pt| {
            let mut m = Map::new();
            m.insert("lambda".into(), num(pt.lambda));
            m.insert("theta".into(), num(pt.theta));
            m.insert("theta_se".into(), num(pt.theta_se));
            m.insert("psi".into(), num(pt.psi));
            m.insert("psi_se".into(), num(pt.psi_se));
            m.insert("density_excess".into(), num(pt.density_excess));
            m.insert("density_excess_se".into(), num(pt.density_excess_se));
            m.insert("survival_excess".into(), num(pt.survival_excess));
            m.insert("survival_excess_se".into(), num(pt.survival_excess_se));
            Value::Object(m)
        })
        .collect();

    let mut params = Map::new();
    params.insert("grid".into(), num_array(&p.grid));
    params.insert("sites".into(), Value::from(p.sites));
    params.insert("horizon".into(), num(p.horizon));
    params.insert("replicas".into(), Value::from(p.replicas));
    params.insert(
        "density_threshold".into(),
        threshold_json(p.density_threshold),
    );
    params.insert(
        "survival_threshold".into(),
        threshold_json(p.survival_threshold),
    );

    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("points".into(), Value::Array(points));
    payload.insert(
        "lambda_c_density".into(),
        crossing_json(&result.lambda_c_density),
    );
    payload.insert(
        "lambda_c_survival".into(),
        crossing_json(&result.lambda_c_survival),
    );

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope("coopbranch.scan.v1", "scan", seed, payload)),
        files: Vec::new(),
    })
}

// ---------------------------------------------------------------- survival

pub struct SurvivalParams {
    pub lambda: f64,
    pub sites: u32,
    pub horizon: f64,
    pub replicas: u64,
}

pub fn resolve_survival(
    file: &mut FileConfig,
    lambda: Option<f64>,
    sites: Option<u32>,
    horizon: Option<f64>,
    replicas: Option<u64>,
) -> CliResult<SurvivalParams> {
    Ok(SurvivalParams {
        lambda: check_rate(require(file.take("lambda", lambda)?, "lambda")?)?,
        sites: require(file.take("sites", sites)?, "sites")?,
        horizon: positive(
            require(file.take("horizon", horizon)?, "horizon")?,
            "horizon",
        )?,
        replicas: at_least(
            require(file.take("replicas", replicas)?, "replicas")?,
            1,
            "replicas",
        )?,
    })
}

pub fn run_survival(p: &SurvivalParams, seed: u64) -> CliResult<Artifacts> {
    let result = estimate_survival(p.lambda, p.horizon, p.sites, p.replicas, seed)?;

    let mut csv = Csv::new(
        "coopbranch.survival.v1",
        &["label", "horizon", "estimate", "stderr"],
    );
    for s in &result.series {
        csv.row(&[
            CsvField::S(s.label.clone()),
            CsvField::F(s.x),
            CsvField::F(s.estimate),
            CsvField::F(s.stderr),
        ]);
    }

    let series: Vec<Value> = result
        .series
        .iter()
        .map(|s| {
            let mut m = Map::new();
            m.insert("label".into(), Value::String(s.label.clone()));
            m.insert("horizon".into(), num(s.x));
            m.insert("estimate".into(), num(s.estimate));
            m.insert("stderr".into(), num(s.stderr));
            Value::Object(m)
        })
        .collect();

    let mut params = Map::new();
    params.insert("lambda".into(), num(p.lambda));
    params.insert("sites".into(), Value::from(p.sites));
    params.insert("horizon".into(), num(p.horizon));
    params.insert("replicas".into(), Value::from(p.replicas));

    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("estimate".into(), num(result.estimate));
    payload.insert("stderr".into(), num(result.stderr));
    payload.insert("series".into(), Value::Array(series));
    payload.insert(
        "warnings".into(),
        Value::Array(
            result
                .warnings
                .iter()
                .map(|w| Value::String(w.clone()))
                .collect(),
        ),
    );

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope(
            "coopbranch.survival.v1",
            "survival",
            seed,
            payload,
        )),
        files: Vec::new(),
    })
}

// ------------------------------------------------------------------- decay

pub struct DecayParams {
    pub lambda: f64,
    pub sites: u32,
    pub times: Vec<f64>,
    pub replicas: u64,
    pub observable: DecayObservable,
}

pub fn resolve_decay(
    file: &mut FileConfig,
    lambda: Option<f64>,
    sites: Option<u32>,
    times: Option<String>,
    replicas: Option<u64>,
    observable: Option<String>,
) -> CliResult<DecayParams> {
    let times_spec = require(file.take("times", times)?, "times")?;
    let obs_spec = require(file.take("observable", observable)?, "observable")?;
    let observable = match obs_spec.as_str() {
        "density" => DecayObservable::Density,
        "pairs" => DecayObservable::PairDensity,
        "survival" => DecayObservable::Survival,
        other => {
            return Err(Failure::Usage(format!(
                "observable must be density, pairs, or survival, got `{other}`"
            )))
        }
    };
    Ok(DecayParams {
        lambda: check_rate(require(file.take("lambda", lambda)?, "lambda")?)?,
        sites: require(file.take("sites", sites)?, "sites")?,
        times: parse_times(&times_spec)?,
        replicas: at_least(
            require(file.take("replicas", replicas)?, "replicas")?,
            2,
            "replicas",
        )?,
        observable,
    })
}

fn observable_name(o: DecayObservable) -> &'static str {
    match o {
        DecayObservable::Density => "density",
        DecayObservable::PairDensity => "pairs",
        DecayObservable::Survival => "survival",
    }
}

pub fn run_decay(p: &DecayParams, seed: u64) -> CliResult<Artifacts> {
    let fit = fit_decay(p.lambda, p.sites, &p.times, p.replicas, seed, p.observable)?;

    let mut csv = Csv::new("coopbranch.decay.v1", &["t", "estimate", "stderr"]);
    for pt in &fit.points {
        csv.row(&[
            CsvField::F(pt.x),
            CsvField::F(pt.estimate),
            CsvField::F(pt.stderr),
        ]);
    }

    let mut params = Map::new();
    params.insert("lambda".into(), num(p.lambda));
    params.insert("sites".into(), Value::from(p.sites));
    params.insert("times".into(), num_array(&p.times));
    params.insert("replicas".into(), Value::from(p.replicas));
    params.insert(
        "observable".into(),
        Value::String(observable_name(p.observable).into()),
    );

    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("slope".into(), num(fit.slope));
    payload.insert("slope_se".into(), num(fit.slope_se));
    payload.insert("intercept".into(), num(fit.intercept));
    payload.insert("intercept_se".into(), num(fit.intercept_se));
    payload.insert("dropped".into(), num_array(&fit.dropped));
    payload.insert(
        "warnings".into(),
        Value::Array(
            fit.warnings
                .iter()
                .map(|w| Value::String(w.clone()))
                .collect(),
        ),
    );

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope("coopbranch.decay.v1", "decay", seed, payload)),
        files: Vec::new(),
    })
}

// ----------------------------------------------------------------- meeting

pub struct MeetingParams {
    pub walkers: u32,
    pub starts: Vec<i64>,
    pub replicas: u64,
    pub cap: f64,
}

pub fn resolve_meeting(
    file: &mut FileConfig,
    walkers: Option<u32>,
    starts: Option<String>,
    replicas: Option<u64>,
    cap: Option<f64>,
) -> CliResult<MeetingParams> {
    let walkers = file.take("walkers", walkers)?.unwrap_or(3);
    if walkers != 2 && walkers != 3 {
        return Err(Failure::Usage(format!(
            "walkers must be 2 or 3, got {walkers}"
        )));
    }
    let starts = match file.take("starts", starts)? {
        Some(spec) => parse_starts(&spec)?,
        None => (0..i64::from(walkers)).collect(),
    };
    if starts.len() != walkers as usize {
        return Err(Failure::Usage(format!(
            "starts lists {} positions for {walkers} walkers",
            starts.len()
        )));
    }
    if starts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Failure::Usage(format!(
            "starts must be strictly increasing, got {starts:?}"
        )));
    }
    Ok(MeetingParams {
        walkers,
        starts,
        replicas: at_least(
            require(file.take("replicas", replicas)?, "replicas")?,
            2,
            "replicas",
        )?,
        cap: positive(file.take("cap", cap)?.unwrap_or(TAU3_DEFAULT_CAP), "cap")?,
    })
}

pub fn run_meeting(p: &MeetingParams, seed: u64) -> CliResult<Artifacts> {
    let splitter = SeedSplitter::new(seed);
    let mut taus = Vec::with_capacity(p.replicas as usize);
    let mut censored = 0u64;
    for r in 0..p.replicas {
        let mut rng = splitter.rng(&[1, r]);
        let outcome = simulate_meeting(&p.starts, &mut rng, p.cap)?;
        if outcome.is_censored() {
            censored += 1;
        }
        taus.push(outcome.tau().unwrap_or(p.cap));
    }
    let (mean, se) = mean_se(&taus);
    let exact = match p.starts.as_slice() {
        [i, j, k] => Some(mean_meeting_exact(*i, *j, *k)?),
        _ => None,
    };

    let starts_text = p
        .starts
        .iter()
        .map(i64::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mut csv = Csv::new(
        "coopbranch.meeting.v1",
        &[
            "walkers", "starts", "replicas", "censored", "cap", "mean", "se",
        ],
    );
    csv.row(&[
        CsvField::U(u64::from(p.walkers)),
        CsvField::S(starts_text.clone()),
        CsvField::U(p.replicas),
        CsvField::U(censored),
        CsvField::F(p.cap),
        CsvField::F(mean),
        CsvField::F(se),
    ]);

    let mut params = Map::new();
    params.insert("walkers".into(), Value::from(p.walkers));
    params.insert(
        "starts".into(),
        Value::Array(p.starts.iter().map(|&s| Value::from(s)).collect()),
    );
    params.insert("replicas".into(), Value::from(p.replicas));
    params.insert("cap".into(), num(p.cap));

    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("mean".into(), num(mean));
    payload.insert("se".into(), num(se));
    payload.insert("censored".into(), Value::from(censored));
    payload.insert("exact_mean".into(), exact.map_or(Value::Null, num));

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope("coopbranch.meeting.v1", "meeting", seed, payload)),
        files: Vec::new(),
    })
}

// -------------------------------------------------------------------- dual

pub struct DualParams {
    pub lambda: f64,
    pub sites: u32,
    pub horizon: f64,
    pub replicas: u64,
    pub cap: usize,
}

pub fn resolve_dual(
    file: &mut FileConfig,
    lambda: Option<f64>,
    sites: Option<u32>,
    horizon: Option<f64>,
    replicas: Option<u64>,
    cap: Option<u64>,
) -> CliResult<DualParams> {
    Ok(DualParams {
        lambda: check_rate(require(file.take("lambda", lambda)?, "lambda")?)?,
        sites: require(file.take("sites", sites)?, "sites")?,
        horizon: positive(
            require(file.take("horizon", horizon)?, "horizon")?,
            "horizon",
        )?,
        replicas: at_least(
            require(file.take("replicas", replicas)?, "replicas")?,
            1,
            "replicas",
        )?,
        cap: at_least(file.take("cap", cap)?.unwrap_or(1_000_000), 1, "cap")? as usize,
    })
}

pub fn run_dual(p: &DualParams, seed: u64) -> CliResult<Artifacts> {
    let splitter = SeedSplitter::new(seed);
    let mut csv = Csv::new(
        "coopbranch.dual.v1",
        &["replica", "head", "tail", "upward_steps"],
    );
    let mut violations = 0u64;
    let mut head_count = 0u64;
    let mut tail_count = 0u64;
    for r in 0..p.replicas {
        let rep = generate(p.sites, p.lambda, p.horizon, splitter.derive(&[1, r]))?;
        let eta0 = half_density(p.sites, &splitter, &[2, r]);
        let anchor = SuperdualState::unit_pair(p.sites, (r % u64::from(p.sites)) as u32)?;
        let profile = witness_profile(&rep, &eta0, &anchor, p.horizon, p.cap)?;
        let head = profile[0];
        let tail = *profile.last().expect("profile is nonempty");
        let upward = profile.windows(2).filter(|w| !w[0] && w[1]).count() as u64;
        violations += upward;
        head_count += u64::from(head);
        tail_count += u64::from(tail);
        csv.row(&[
            CsvField::U(r),
            CsvField::B(head),
            CsvField::B(tail),
            CsvField::U(upward),
        ]);
    }

    let mut params = Map::new();
    params.insert("lambda".into(), num(p.lambda));
    params.insert("sites".into(), Value::from(p.sites));
    params.insert("horizon".into(), num(p.horizon));
    params.insert("replicas".into(), Value::from(p.replicas));
    params.insert("cap".into(), Value::from(p.cap as u64));

    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("upward_steps".into(), Value::from(violations));
    payload.insert("head_true".into(), Value::from(head_count));
    payload.insert("tail_true".into(), Value::from(tail_count));

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope("coopbranch.dual.v1", "dual", seed, payload)),
        files: Vec::new(),
    })
}

// ------------------------------------------------------------ couple-check

pub struct CoupleCheckParams {
    pub sites: u32,
    pub horizon: f64,
    pub replicas: u64,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub block: f64,
    pub block_replicas: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn resolve_couple_check(
    file: &mut FileConfig,
    sites: Option<u32>,
    horizon: Option<f64>,
    replicas: Option<u64>,
    lambda: Option<f64>,
    lambda_prime: Option<f64>,
    p_low: Option<f64>,
    p_high: Option<f64>,
    block: Option<f64>,
    block_replicas: Option<u64>,
) -> CliResult<CoupleCheckParams> {
    let params = CoupleCheckParams {
        sites: require(file.take("sites", sites)?, "sites")?,
        horizon: positive(
            require(file.take("horizon", horizon)?, "horizon")?,
            "horizon",
        )?,
        replicas: at_least(
            require(file.take("replicas", replicas)?, "replicas")?,
            1,
            "replicas",
        )?,
        lambda: check_rate(file.take("lambda", lambda)?.unwrap_or(1.0))?,
        lambda_prime: check_rate(file.take("lambda-prime", lambda_prime)?.unwrap_or(2.0))?,
        p_low: file.take("p-low", p_low)?.unwrap_or(0.45),
        p_high: file.take("p-high", p_high)?.unwrap_or(0.75),
        block: positive(file.take("block", block)?.unwrap_or(1.0), "block")?,
        block_replicas: at_least(
            file.take("block-replicas", block_replicas)?
                .unwrap_or(100_000),
            1,
            "block-replicas",
        )?,
    };
    if params.lambda_prime < params.lambda {
        return Err(Failure::Usage(format!(
            "lambda-prime ({}) must be >= lambda ({})",
            params.lambda_prime, params.lambda
        )));
    }
    for (value, key) in [(params.p_low, "p-low"), (params.p_high, "p-high")] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Failure::Usage(format!(
                "{key} must be in [0, 1], got {value}"
            )));
        }
    }
    if params.p_high < params.p_low {
        return Err(Failure::Usage(format!(
            "p-high ({}) must be >= p-low ({})",
            params.p_high, params.p_low
        )));
    }
    if params.lambda_prime <= 0.0 {
        return Err(Failure::Usage(
            "lambda-prime must be > 0 for the block detector".into(),
        ));
    }
    Ok(params)
}

pub fn run_couple_check(p: &CoupleCheckParams, seed: u64) -> CliResult<Artifacts> {
    let splitter = SeedSplitter::new(seed);
    let l = p.sites;
    let full = Configuration::fully_occupied(l, Boundary::Periodic)?;

    // Monotone coupling: fewer particles and slower branching stay inside
    // the bigger run when both read the same arrows.
    let mut monotone = 0u64;
    for r in 0..p.replicas {
        let rep = generate(l, p.lambda, p.horizon, splitter.derive(&[1, r]))?;
        let rep_big = rep.augment(p.lambda_prime)?;
        let mut eta = half_density(l, &splitter, &[2, r]);
        let mut eta_big = full.clone();
        let small = rep.events();
        let mut idx = 0;
        for e in rep_big.events() {
            eta_big = apply_event(&eta_big, e);
            if idx < small.len() && small[idx] == *e {
                eta = apply_event(&eta, e);
                idx += 1;
            }
            if !contains_all(&eta, &eta_big) {
                monotone += 1;
            }
        }
        if idx != small.len() {
            return Err(Failure::Runtime(
                "augmented event table does not contain the base table".into(),
            ));
        }
    }

    // Joint growth: the union-start run covers both separate runs on the
    // same arrows (cross pairs branch only in the union).
    let mut superadd = 0u64;
    for r in 0..p.replicas {
        let rep = generate(l, p.lambda_prime, p.horizon, splitter.derive(&[3, r]))?;
        let mut a = half_density(l, &splitter, &[4, r]);
        let mut b = half_density(l, &splitter, &[5, r]);
        let union_sites: Vec<u32> = (0..l)
            .filter(|&s| a.is_occupied(s) || b.is_occupied(s))
            .collect();
        let mut u = Configuration::new(l, &union_sites, Boundary::Periodic)?;
        for e in rep.events() {
            a = apply_event(&a, e);
            b = apply_event(&b, e);
            u = apply_event(&u, e);
            if !contains_all(&a, &u) || !contains_all(&b, &u) {
                superadd += 1;
            }
        }
    }

    // Contact-style upper bound: the pair process never leaves the region
    // the two-site contact construction allows.
    let mut contact = 0u64;
    for r in 0..p.replicas {
        let rep = generate(l, p.lambda_prime, p.horizon, splitter.derive(&[6, r]))?;
        contact += contact_inclusion_violations(&full, &full, &rep)?;
    }

    // Oriented-percolation nesting: opening edges at a higher rate with the
    // same uniforms can only grow each level.
    let mut op = 0u64;
    let half = i64::from(l) / 2;
    let w0: Vec<i64> = (-half..half).filter(|s| s % 2 == 0).collect();
    let n_levels = (p.horizon.round() as u32).max(1);
    for r in 0..p.replicas {
        let op_seed = splitter.derive(&[7, r]);
        let lo = simulate_op(&w0, p.p_low, n_levels, op_seed)?;
        let hi = simulate_op(&w0, p.p_high, n_levels, op_seed)?;
        for (lo_level, hi_level) in lo.levels.iter().zip(&hi.levels) {
            op += lo_level
                .iter()
                .filter(|s| hi_level.binary_search(s).is_err())
                .count() as u64;
        }
    }

    // Renormalization block detector: per-edge probability of a spreading
    // event with no deaths inside one block, at the rescaled rates where
    // infections run at intensity 1/2 and deaths at intensity 1/lambda.
    let analytic = good_block_probability(p.lambda_prime, p.block)?;
    let mut block_rng = splitter.rng(&[8]);
    let (mc, mc_se) =
        good_block_monte_carlo(p.lambda_prime, p.block, p.block_replicas, &mut block_rng)?;

    let mut csv = Csv::new(
        "coopbranch.couple-check.v1",
        &["suite", "replicas", "violations"],
    );
    for (name, count) in [
        ("monotone", monotone),
        ("superadditive", superadd),
        ("contact", contact),
        ("op", op),
    ] {
        csv.row(&[
            CsvField::S(name.into()),
            CsvField::U(p.replicas),
            CsvField::U(count),
        ]);
    }

    let mut suites = Map::new();
    suites.insert("monotone".into(), Value::from(monotone));
    suites.insert("superadditive".into(), Value::from(superadd));
    suites.insert("contact".into(), Value::from(contact));
    suites.insert("op".into(), Value::from(op));

    let mut block = Map::new();
    block.insert("length".into(), num(p.block));
    block.insert("analytic".into(), num(analytic));
    block.insert("monte_carlo".into(), num(mc));
    block.insert("monte_carlo_se".into(), num(mc_se));
    block.insert("replicas".into(), Value::from(p.block_replicas));
    block.insert("time_rescaling_factor".into(), num(p.lambda_prime));

    let mut params = Map::new();
    params.insert("sites".into(), Value::from(p.sites));
    params.insert("horizon".into(), num(p.horizon));
    params.insert("replicas".into(), Value::from(p.replicas));
    params.insert("lambda".into(), num(p.lambda));
    params.insert("lambda_prime".into(), num(p.lambda_prime));
    params.insert("p_low".into(), num(p.p_low));
    params.insert("p_high".into(), num(p.p_high));

    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("suites".into(), Value::Object(suites));
    payload.insert("block".into(), Value::Object(block));

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope(
            "coopbranch.couple-check.v1",
            "couple-check",
            seed,
            payload,
        )),
        files: Vec::new(),
    })
}

// --------------------------------------------------------------- ode-check

pub struct OdeCheckParams {
    pub lambda: f64,
    pub sites: u32,
    pub times: Vec<f64>,
    pub replicas: u64,
}

pub fn resolve_ode_check(
    file: &mut FileConfig,
    lambda: Option<f64>,
    sites: Option<u32>,
    times: Option<String>,
    replicas: Option<u64>,
) -> CliResult<OdeCheckParams> {
    let times_spec = require(file.take("times", times)?, "times")?;
    Ok(OdeCheckParams {
        lambda: check_rate(require(file.take("lambda", lambda)?, "lambda")?)?,
        sites: require(file.take("sites", sites)?, "sites")?,
        times: parse_times(&times_spec)?,
        replicas: at_least(
            require(file.take("replicas", replicas)?, "replicas")?,
            2,
            "replicas",
        )?,
    })
}

pub fn run_ode_check(p: &OdeCheckParams, seed: u64) -> CliResult<Artifacts> {
    let check = check_density_ode(p.lambda, p.sites, &p.times, p.replicas, seed)?;

    let mut csv = Csv::new(
        "coopbranch.ode-check.v1",
        &["t", "residual", "stderr", "derivative", "rhs"],
    );
    for pt in &check.points {
        csv.row(&[
            CsvField::F(pt.t),
            CsvField::F(pt.residual),
            CsvField::F(pt.stderr),
            CsvField::F(pt.derivative),
            CsvField::F(pt.rhs),
        ]);
    }

    let points: Vec<Value> = check
        .points
        .iter()
        .map(|pt| {
            let mut m = Map::new();
            m.insert("t".into(), num(pt.t));
            m.insert("residual".into(), num(pt.residual));
            m.insert("stderr".into(), num(pt.stderr));
            m.insert("derivative".into(), num(pt.derivative));
            m.insert("rhs".into(), num(pt.rhs));
            Value::Object(m)
        })
        .collect();

    let mut params = Map::new();
    params.insert("lambda".into(), num(p.lambda));
    params.insert("sites".into(), Value::from(p.sites));
    params.insert("times".into(), num_array(&p.times));
    params.insert("replicas".into(), Value::from(p.replicas));

    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("points".into(), Value::Array(points));
    payload.insert("coarse_grid".into(), Value::Bool(check.coarse_grid));

    Ok(Artifacts {
        csv: Some(csv.into_bytes()),
        json: Some(envelope(
            "coopbranch.ode-check.v1",
            "ode-check",
            seed,
            payload,
        )),
        files: Vec::new(),
    })
}

// ----------------------------------------------------------------- diagram

pub struct DiagramParams {
    pub lambda: f64,
    pub sites: u32,
    pub horizon: f64,
    pub samples: u64,
    pub initial: String,
    pub format: String,
    pub out: PathBuf,
}

#[allow(clippy::too_many_arguments)]
pub fn resolve_diagram(
    file: &mut FileConfig,
    lambda: Option<f64>,
    sites: Option<u32>,
    horizon: Option<f64>,
    samples: Option<u64>,
    initial: Option<String>,
    format: Option<String>,
    out: Option<PathBuf>,
) -> CliResult<DiagramParams> {
    let format = file.take("format", format)?.unwrap_or_else(|| "pbm".into());
    if format != "pbm" && format != "svg" {
        return Err(Failure::Usage(format!(
            "format must be pbm or svg, got `{format}`"
        )));
    }
    Ok(DiagramParams {
        lambda: check_rate(require(file.take("lambda", lambda)?, "lambda")?)?,
        sites: require(file.take("sites", sites)?, "sites")?,
        horizon: positive(
            require(file.take("horizon", horizon)?, "horizon")?,
            "horizon",
        )?,
        samples: at_least(file.take("samples", samples)?.unwrap_or(400), 2, "samples")?,
        initial: file
            .take("initial", initial)?
            .unwrap_or_else(|| "full".into()),
        format,
        out: require(file.take("out", out)?, "out")?,
    })
}

pub fn run_diagram(p: &DiagramParams, seed: u64) -> CliResult<Artifacts> {
    let splitter = SeedSplitter::new(seed);
    let cfg = initial_state(&p.initial, p.sites, &splitter)?;
    let times = uniform_times(p.horizon, p.samples);
    let traj = simulate_direct(&cfg, p.lambda, &times, splitter.rng(&[1]))?;
    let rows: Vec<&Configuration> = traj.states.iter().collect();
    let bytes = match p.format.as_str() {
        "pbm" => render_pbm(&rows, p.sites),
        _ => render_svg(&rows, p.sites),
    };

    let mut params = Map::new();
    params.insert("lambda".into(), num(p.lambda));
    params.insert("sites".into(), Value::from(p.sites));
    params.insert("horizon".into(), num(p.horizon));
    params.insert("samples".into(), Value::from(p.samples));
    params.insert("initial".into(), Value::String(p.initial.clone()));
    params.insert("format".into(), Value::String(p.format.clone()));

    let last = traj.states.last().expect("at least two samples");
    let mut payload = Map::new();
    payload.insert("params".into(), Value::Object(params));
    payload.insert("out".into(), Value::String(p.out.display().to_string()));
    payload.insert(
        "final_density".into(),
        num(f64::from(last.particle_count()) / f64::from(p.sites)),
    );

    Ok(Artifacts {
        csv: None,
        json: Some(envelope("coopbranch.diagram.v1", "diagram", seed, payload)),
        files: vec![(p.out.clone(), bytes)],
    })
}

//! Acceptance gate for the whole workspace: each test is one numbered
//! criterion and prints exactly one `ACCEPTANCE nn PASS|FAIL` line with the
//! measured numbers. Tolerances are pinned in the code next to each check.
//!
//! Run with the lines visible and in order:
//!
//! ```text
//! cargo test -p coopbranch-cli --test acceptance -- --nocapture --test-threads=1
//! ```
//!
//! Criteria 1 to 11 exercise the library; criterion 12 re-runs the binary
//! and compares output bytes. Statistical checks use fixed seeds, so the
//! suite is deterministic end to end.

use std::time::Instant;

use coopbranch::comparisons::{contact_inclusion_violations, simulate_op, voter_interface_run};
use coopbranch::dual3::{trace_dual_walk, witness_profile, SuperdualState};
use coopbranch::dynamics::{apply_branch, apply_jump, replay, simulate_direct};
use coopbranch::experiments::{
    check_density_ode, estimate_survival, fit_decay, scan_critical, Crossing, CrossingThreshold,
    DecayObservable, SURVIVAL_CUT,
};
use coopbranch::graphical::generate;
use coopbranch::rng::SeedSplitter;
use coopbranch::stats::{binomial_se, mean_se, two_mean_z};
use coopbranch::walks::{
    mean_meeting_exact, simulate_meeting, tau2_survival_exact, tau3_tail_estimate, TAU3_DEFAULT_CAP,
};
use coopbranch::{Boundary, Configuration, EventKind};

const PI: f64 = std::f64::consts::PI;

fn report(criterion: u32, ok: bool, detail: &str, started: Instant) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!(
        "ACCEPTANCE {criterion:02} {verdict}: {detail} [{:.1} s]",
        started.elapsed().as_secs_f64()
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

/// Deterministic half-density state: site i is occupied when the derived
/// sub-seed for (salt, i) has an even low bit.
fn half_density(l: u32, splitter: &SeedSplitter, salt: &[u64]) -> Configuration {
    let sites: Vec<u32> = (0..l)
        .filter(|&i| {
            let mut path = salt.to_vec();
            path.push(u64::from(i));
            splitter.derive(&path) & 1 == 0
        })
        .collect();
    Configuration::new(l, &sites, Boundary::Periodic).unwrap()
}

fn contains_all(inner: &Configuration, outer: &Configuration) -> bool {
    (0..inner.len()).all(|s| !inner.is_occupied(s) || outer.is_occupied(s))
}

fn apply_event(cfg: &Configuration, e: &coopbranch::ArrowEvent) -> Configuration {
    match e.kind {
        EventKind::Jump => apply_jump(cfg, e.bond(), e.dir),
        EventKind::Branch => apply_branch(cfg, e.site(), e.dir),
    }
}

#[test]
fn c01_three_walker_mean_meeting_time() {
    let started = Instant::now();
    let splitter = SeedSplitter::new(101);
    let replicas = 100_000u64;
    let mut measured = Vec::with_capacity(2);
    for (tag, starts) in [(1u64, [0i64, 1, 2]), (2, [0, 2, 5])] {
        let mut rng = splitter.rng(&[tag]);
        let taus: Vec<f64> = (0..replicas)
            .map(|_| {
                simulate_meeting(&starts, &mut rng, TAU3_DEFAULT_CAP)
                    .unwrap()
                    .tau()
                    .unwrap_or(TAU3_DEFAULT_CAP)
            })
            .collect();
        let (mean, se) = mean_se(&taus);
        let target = mean_meeting_exact(starts[0], starts[1], starts[2]).unwrap();
        measured.push((mean, se, target));
    }
    let ok = measured
        .iter()
        .all(|&(mean, se, target)| (mean - target).abs() < 3.0 * se)
        && started.elapsed().as_secs() < 120;
    report(
        1,
        ok,
        &format!(
            "mean tau(0,1,2) = {:.4} +- {:.4} vs {}, mean tau(0,2,5) = {:.4} +- {:.4} vs {}, both within 3 se",
            measured[0].0, measured[0].1, measured[0].2, measured[1].0, measured[1].1, measured[1].2
        ),
        started,
    );
}

#[test]
fn c02_pair_meeting_survival_oracle_and_monte_carlo() {
    let started = Instant::now();
    let splitter = SeedSplitter::new(202);
    let v400 = tau2_survival_exact(400.0).unwrap();
    let oracle_err = ((400.0 * PI).sqrt() * v400 - 1.0).abs();
    let oracle_ok = oracle_err < 0.02;

    let replicas = 100_000u64;
    let mut mc = Vec::with_capacity(3);
    for (tag, t) in [(1u64, 1.0), (2, 10.0), (3, 100.0)] {
        let mut rng = splitter.rng(&[tag]);
        let survivors = (0..replicas)
            .filter(|_| {
                simulate_meeting(&[0, 1], &mut rng, t)
                    .unwrap()
                    .is_censored()
            })
            .count() as f64;
        let p_hat = survivors / replicas as f64;
        let se = binomial_se(p_hat, replicas);
        let p = tau2_survival_exact(t).unwrap();
        mc.push((t, p_hat, p, se));
    }
    let mc_ok = mc
        .iter()
        .all(|&(_, p_hat, p, se)| (p_hat - p).abs() < 3.0 * se);
    let ok = oracle_ok && mc_ok && started.elapsed().as_secs() < 300;
    report(
        2,
        ok,
        &format!(
            "|sqrt(400 pi) v(400) - 1| = {:.5} < 0.02; MC vs oracle: {}",
            oracle_err,
            mc.iter()
                .map(|&(t, p_hat, p, se)| format!("t={t}: {p_hat:.4} vs {p:.4} (se {se:.4})"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        started,
    );
}

#[test]
fn c03_three_walker_tail_constant() {
    let started = Instant::now();
    let mut rng = SeedSplitter::new(303).rng(&[1]);
    let t = 25.0;
    let est = tau3_tail_estimate(t, 1_000_000, &mut rng).unwrap();
    let statistic = 2.0 * PI.sqrt() * t.powf(1.5) * est.p;
    let ok = (0.8..=1.2).contains(&statistic) && started.elapsed().as_secs() < 600;
    report(
        3,
        ok,
        &format!(
            "2 sqrt(pi) t^(3/2) P[tau > 25] = {statistic:.4} in [0.8, 1.2] ({} survivors of {})",
            est.survivors, est.replicas
        ),
        started,
    );
}

#[test]
fn c04_weak_branching_decay_exponents() {
    let started = Instant::now();
    let grid = [50.0, 100.0, 200.0, 350.0, 500.0];
    let density = fit_decay(0.4, 2000, &grid, 200, 404, DecayObservable::Density).unwrap();
    let survival = fit_decay(0.4, 2000, &grid, 4000, 405, DecayObservable::Survival).unwrap();
    let pairs = fit_decay(0.4, 2000, &grid, 400, 406, DecayObservable::PairDensity).unwrap();
    let ok = (-0.6..=-0.4).contains(&density.slope)
        && (-0.6..=-0.4).contains(&survival.slope)
        && (-1.8..=-1.2).contains(&pairs.slope)
        && started.elapsed().as_secs() < 1800;
    report(
        4,
        ok,
        &format!(
            "lambda 0.4 slopes: density {:.3} +- {:.3} in [-0.6, -0.4], survival {:.3} +- {:.3} in [-0.6, -0.4], pairs {:.3} +- {:.3} in [-1.8, -1.2]",
            density.slope, density.slope_se, survival.slope, survival.slope_se, pairs.slope, pairs.slope_se
        ),
        started,
    );
}

#[test]
fn c05_critical_point_scan_brackets() {
    let started = Instant::now();
    let grid: Vec<f64> = (0..=10).map(|k| 2.0 + 0.1 * f64::from(k)).collect();
    let res = scan_critical(
        &grid,
        500,
        2000.0,
        500,
        1001,
        CrossingThreshold::TwoStderr,
        CrossingThreshold::Fixed(SURVIVAL_CUT),
    )
    .unwrap();
    let window = 2.2..=2.7;
    let in_window = |c: &Crossing| c.midpoint().is_some_and(|m| window.contains(&m));
    let ok = in_window(&res.lambda_c_density)
        && in_window(&res.lambda_c_survival)
        && started.elapsed().as_secs() < 3600;
    let show = |c: &Crossing| match c {
        Crossing::Bracketed {
            lower,
            upper,
            midpoint,
        } => {
            format!("({lower:.1}, {upper:.1}) -> {midpoint:.2}")
        }
        Crossing::Unbracketed => "unbracketed".to_string(),
    };
    report(
        5,
        ok,
        &format!(
            "density crossing {} and survival crossing {} both inside [2.2, 2.7] (500 replicas/point)",
            show(&res.lambda_c_density),
            show(&res.lambda_c_survival)
        ),
        started,
    );
}

#[test]
fn c06_coupling_suites_zero_violations() {
    let started = Instant::now();
    let splitter = SeedSplitter::new(606);
    let (l, horizon, reps) = (200u32, 50.0, 100u64);

    // (a) monotone coupling: eta (lambda 1, subset start) stays inside
    // eta' (lambda 2 augmented table, full start) after every event
    let mut monotone = 0u64;
    for r in 0..reps {
        let rep = generate(l, 1.0, horizon, splitter.derive(&[1, r])).unwrap();
        let rep2 = rep.augment(2.0).unwrap();
        let mut eta = half_density(l, &splitter, &[2, r]);
        let mut eta_p = Configuration::fully_occupied(l, Boundary::Periodic).unwrap();
        let small = rep.events();
        let mut idx = 0usize;
        for e in rep2.events() {
            eta_p = apply_event(&eta_p, e);
            if idx < small.len() && small[idx] == *e {
                eta = apply_event(&eta, e);
                idx += 1;
            }
            if !contains_all(&eta, &eta_p) {
                monotone += 1;
            }
        }
        assert_eq!(
            idx,
            small.len(),
            "augmented table must contain every original event"
        );
    }

    // (b) superadditivity on a shared table: the run from A union B
    // dominates the union of the runs from A and from B
    let mut superadd = 0u64;
    for r in 0..reps {
        let rep = generate(l, 2.0, horizon, splitter.derive(&[3, r])).unwrap();
        let mut a = half_density(l, &splitter, &[4, r]);
        let mut b = half_density(l, &splitter, &[5, r]);
        let union_sites: Vec<u32> = (0..l)
            .filter(|&s| a.is_occupied(s) || b.is_occupied(s))
            .collect();
        let mut u = Configuration::new(l, &union_sites, Boundary::Periodic).unwrap();
        for e in rep.events() {
            a = apply_event(&a, e);
            b = apply_event(&b, e);
            u = apply_event(&u, e);
            if !(contains_all(&a, &u) && contains_all(&b, &u)) {
                superadd += 1;
            }
        }
    }

    // (c) contact process with double deaths stays inside the pair process
    let mut contact = 0u64;
    let full = Configuration::fully_occupied(l, Boundary::Periodic).unwrap();
    for r in 0..reps {
        let rep = generate(l, 2.0, horizon, splitter.derive(&[6, r])).unwrap();
        contact += contact_inclusion_violations(&full, &full, &rep).unwrap();
    }

    // (d) oriented percolation levels nest when p grows under shared uniforms
    let mut percolation = 0u64;
    let w0: Vec<i64> = (-50..50).step_by(2).collect();
    for r in 0..reps {
        let seed = splitter.derive(&[7, r]);
        let lo = simulate_op(&w0, 0.45, 50, seed).unwrap();
        let hi = simulate_op(&w0, 0.75, 50, seed).unwrap();
        for (lo_level, hi_level) in lo.levels.iter().zip(&hi.levels) {
            percolation += lo_level
                .iter()
                .filter(|s| hi_level.binary_search(s).is_err())
                .count() as u64;
        }
    }

    let ok = monotone == 0 && superadd == 0 && contact == 0 && percolation == 0;
    report(
        6,
        ok,
        &format!(
            "violations over {reps} reps each: monotone {monotone}, superadditivity {superadd}, contact inclusion {contact}, percolation nesting {percolation}"
        ),
        started,
    );
}

#[test]
fn c07_superdual_profile_monotonicity() {
    let started = Instant::now();
    let splitter = SeedSplitter::new(707);
    let (l, horizon, reps) = (30u32, 10.0, 500u64);
    let mut violations = 0u64;
    let mut profiles = 0u64;
    for (tag, lambda) in [(1u64, 0.25), (2, 1.0)] {
        for r in 0..reps {
            let rep = generate(l, lambda, horizon, splitter.derive(&[tag, r])).unwrap();
            let eta0 = half_density(l, &splitter, &[tag, r, 999]);
            let anchor = SuperdualState::unit_pair(l, (r % u64::from(l)) as u32).unwrap();
            let profile = witness_profile(&rep, &eta0, &anchor, horizon, 1_000_000).unwrap();
            violations += profile.windows(2).filter(|w| !w[0] && w[1]).count() as u64;
            profiles += 1;
        }
    }
    let ok = violations == 0;
    report(
        7,
        ok,
        &format!(
            "{violations} upward steps across {profiles} witness profiles (lambda 0.25 and 1, horizon 10)"
        ),
        started,
    );
}

#[test]
fn c08_coalescing_walk_interval_duality() {
    let started = Instant::now();
    let splitter = SeedSplitter::new(808);
    let (l, horizon) = (12u32, 2.0);
    let n = l as usize;
    let mut violations = 0u64;
    let mut checks = 0u64;
    for r in 0..20u64 {
        let rep = generate(l, 0.0, horizon, splitter.derive(&[r])).unwrap();
        let walks: Vec<(u32, i64)> = (0..l)
            .map(|bond| {
                let path = trace_dual_walk(&rep, bond, horizon, 0.0).unwrap();
                (path.end_bond(), path.net_displacement())
            })
            .collect();
        // dual image of the arc behind bonds (a, b): starts one site past
        // the traced endpoint of a and keeps the original length plus the
        // net relative displacement; walks stick on meeting, so the length
        // stays inside [0, l] and collapses mean an empty or full image
        let mut arc = vec![vec![0u16; n]; n];
        let mut image = vec![vec![0u16; n]; n];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let len = ((b + n - a) % n) as i64;
                let mut m = 0u16;
                for i in 0..len {
                    m |= 1u16 << ((a + 1 + i as usize) % n);
                }
                arc[a][b] = m;
                let image_len = len + walks[b].1 - walks[a].1;
                assert!(
                    (0..=i64::from(l)).contains(&image_len),
                    "dual arc length {image_len} escaped [0, {l}]"
                );
                if 0 < image_len && image_len < i64::from(l) {
                    assert_eq!(
                        (walks[a].0 + image_len as u32) % l,
                        walks[b].0,
                        "endpoint and length disagree"
                    );
                }
                let mut im = 0u16;
                for i in 0..image_len {
                    im |= 1u16 << ((walks[a].0 as usize + 1 + i as usize) % n);
                }
                image[a][b] = im;
            }
        }
        for bits in 0..(1u16 << n) {
            let sites: Vec<u32> = (0..l).filter(|&s| bits & (1u16 << s) != 0).collect();
            let init = Configuration::new(l, &sites, Boundary::Periodic).unwrap();
            let fin = replay(&init, &rep, 0.0, horizon).unwrap();
            let fin_bits = (0..l)
                .filter(|&s| fin.is_occupied(s))
                .fold(0u16, |acc, s| acc | (1u16 << s));
            for a in 0..n {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let forward_hit = fin_bits & arc[a][b] != 0;
                    let dual_hit = bits & image[a][b] != 0;
                    if forward_hit != dual_hit {
                        violations += 1;
                    }
                    checks += 1;
                }
            }
        }
    }
    let ok = violations == 0;
    report(
        8,
        ok,
        &format!("{violations} mismatches over {checks} interval duality checks (all 4096 states, 20 tables)"),
        started,
    );
}

#[test]
fn c09_density_derivative_identity() {
    let started = Instant::now();
    let grid = [1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.25];
    let mut out = Vec::with_capacity(3);
    let mut all_ok = true;
    for (i, lambda) in [0.0, 1.0, 2.0].into_iter().enumerate() {
        let chk = check_density_ode(lambda, 1000, &grid, 400, 909 + i as u64).unwrap();
        assert_eq!(
            chk.points.len(),
            5,
            "seven grid times leave five interior residuals"
        );
        let worst = chk
            .points
            .iter()
            .map(|p| (p.residual / p.stderr).abs())
            .fold(0.0f64, f64::max);
        all_ok &= chk.points.iter().all(|p| p.residual.abs() < 3.0 * p.stderr);
        out.push(format!("lambda {lambda}: worst |z| {worst:.2}"));
    }
    report(
        9,
        all_ok,
        &format!(
            "residuals within 3 se at 5 interior times: {}",
            out.join(", ")
        ),
        started,
    );
}

#[test]
fn c10_voter_interface_equivalence() {
    let started = Instant::now();
    let splitter = SeedSplitter::new(1010);
    let lambda = 7.0 / 3.0;
    let (l, reps) = (256u32, 400u64);
    let times = [0.5, 1.0, 1.5, 2.25, 3.0];
    let mut voter: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
    let mut direct: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
    let mut wraparounds = 0u64;
    let full = Configuration::fully_occupied(l, Boundary::Periodic).unwrap();
    for r in 0..reps {
        let run = voter_interface_run(l, lambda, &times, splitter.rng(&[1, r])).unwrap();
        wraparounds += run.wraparound_annihilations;
        for (i, bonds) in run.interfaces.iter().enumerate() {
            voter[i].push(bonds.len() as f64 / f64::from(l));
        }
        let traj = simulate_direct(&full, lambda, &times, splitter.rng(&[2, r])).unwrap();
        for (i, state) in traj.states.iter().enumerate() {
            direct[i].push(f64::from(state.particle_count()) / f64::from(l));
        }
    }
    let mut detail = Vec::with_capacity(times.len());
    let mut all_ok = wraparounds == 0;
    for (i, &t) in times.iter().enumerate() {
        let (mv, sev) = mean_se(&voter[i]);
        let (md, sed) = mean_se(&direct[i]);
        let z = two_mean_z(mv, sev, md, sed);
        all_ok &= z.abs() <= 3.0;
        detail.push(format!("t={t}: z={z:+.2}"));
    }
    report(
        10,
        all_ok,
        &format!(
            "interface vs direct density at lambda 7/3, {} wraparounds: {}",
            wraparounds,
            detail.join(", ")
        ),
        started,
    );
}

#[test]
fn c11_extinction_at_unit_rate() {
    let started = Instant::now();
    // theta: the decay-corrected late-window excess is the finite-horizon
    // estimator that is genuinely zero-consistent for a dying density (the
    // raw window average only decays like 1/sqrt(t) and would sit many
    // stderr above zero at any replica count)
    let scan = scan_critical(
        &[1.0],
        500,
        1600.0,
        400,
        505,
        CrossingThreshold::TwoStderr,
        CrossingThreshold::Fixed(SURVIVAL_CUT),
    )
    .unwrap();
    let p = &scan.points[0];
    let theta_ok = p.density_excess <= 3.0 * p.density_excess_se;

    let sur = estimate_survival(1.0, 6400.0, 500, 100, 506).unwrap();
    let psi_points: Vec<_> = sur
        .series
        .iter()
        .filter(|s| s.label == "psi[l=500]")
        .collect();
    assert_eq!(
        psi_points.len(),
        2,
        "survival reports the horizon and the half horizon"
    );
    let psi_ok = psi_points.iter().all(|s| s.estimate <= 3.0 * s.stderr);

    let ok = theta_ok && psi_ok;
    report(
        11,
        ok,
        &format!(
            "theta excess {:+.5} +- {:.5} (raw late-window theta {:.5}); psi {:.3} at t=3200, {:.3} at t=6400, each within 3 se of zero",
            p.density_excess,
            p.density_excess_se,
            p.theta,
            psi_points[0].estimate.max(psi_points[1].estimate),
            psi_points[0].estimate.min(psi_points[1].estimate)
        ),
        started,
    );
}

#[test]
fn c12_byte_identical_reruns() {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_coopbranch");
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "# criterion 12 rerun config\ngrid = 1.0:2.0:0.5\nsites = 80\nhorizon = 30\nreplicas = 10\nseed = 912\n",
    )
    .unwrap();

    // Same config and seed twice; every output byte must match.
    let run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let csv = dir.path().join(format!("scan-{tag}.csv"));
        let json = dir.path().join(format!("scan-{tag}.json"));
        let status = std::process::Command::new(bin)
            .args(["scan", "--config"])
            .arg(&config)
            .arg("--out-csv")
            .arg(&csv)
            .arg("--out-json")
            .arg(&json)
            .env_remove("COOPBRANCH_SEED")
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "scan run {tag} exited with {status}");
        (std::fs::read(&csv).unwrap(), std::fs::read(&json).unwrap())
    };
    let (csv_a, json_a) = run("a");
    let (csv_b, json_b) = run("b");

    let draw = |tag: &str| -> Vec<u8> {
        let pbm = dir.path().join(format!("diagram-{tag}.pbm"));
        let status = std::process::Command::new(bin)
            .args([
                "diagram",
                "--lambda",
                "2.2",
                "--sites",
                "64",
                "--horizon",
                "20",
                "--samples",
                "40",
                "--seed",
                "912",
                "--out",
            ])
            .arg(&pbm)
            .env_remove("COOPBRANCH_SEED")
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "diagram run {tag} exited with {status}");
        std::fs::read(&pbm).unwrap()
    };
    let pbm_a = draw("a");
    let pbm_b = draw("b");

    let ok = csv_a == csv_b && json_a == json_b && pbm_a == pbm_b;
    report(
        12,
        ok,
        &format!(
            "identical config + seed reruns: csv {} bytes, json {} bytes, pbm {} bytes, all byte-identical",
            csv_a.len(),
            json_a.len(),
            pbm_a.len()
        ),
        started,
    );
}

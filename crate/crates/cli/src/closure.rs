//! Closure suites: end-to-end runs checked against known ground truth.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use optifab_core::hypervolume::{hypervolume_exact, sphere_front_ceiling};
use optifab_core::problems::dtlz2_eval;
use optifab_core::rng::{stream_rng, Stream};
use optifab_core::{OptimizerConfig, ProblemSpec, Strategy};
use optifab_fabric::journal::{evaluation_span, finalized_outcomes, read_journal};
use optifab_fabric::{run_experiment, DriverOptions, ExperimentConfig, HvConfig, RunnerConfig, RunnerKind};
use rand::Rng;

type Outcomes = BTreeMap<u64, (String, Option<Vec<f64>>)>;

fn line(ok: bool, name: &str, detail: &str) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

/// Hypervolume of `trials` uniform random DTLZ2 designs.
pub fn random_search_hv(n: usize, m: usize, trials: usize, seed: u64, reference: &[f64]) -> f64 {
    let mut rng = stream_rng(seed, Stream::Sampling, 0);
    let points: Vec<Vec<f64>> = (0..trials)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            dtlz2_eval(&x, m)
        })
        .collect();
    hypervolume_exact(&points, reference).unwrap_or(0.0)
}

fn base_config(dir: &Path, n: usize, m: usize, strategy: Strategy, trials: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: None,
        problem: ProblemSpec::dtlz2(n, m),
        optimizer: OptimizerConfig::new(strategy, trials, seed),
        runner: RunnerConfig::default(),
        journal_path: dir.join("journal.jsonl"),
        hv: HvConfig::default(),
        report_dir: dir.to_path_buf(),
    }
}

/// MOBO and MOGO on DTLZ2 with two and three objectives: hypervolume must
/// never decrease, stay under the analytic ceiling, and beat random search
/// at equal budget.
pub fn suite_one(out: &Path) -> bool {
    let started = Instant::now();
    let cases = [
        ("mobo-m2-n6", Strategy::Mobo, 6, 2, 80, 1),
        ("mobo-m3-n12", Strategy::Mobo, 12, 3, 60, 1),
        ("mogo-m2-n6", Strategy::Mogo, 6, 2, 32 * 40, 32),
        ("mogo-m3-n12", Strategy::Mogo, 12, 3, 32 * 20, 32),
    ];
    let mut all = true;
    for (name, strategy, n, m, trials, q) in cases {
        let dir = out.join(name);
        let mut cfg = base_config(&dir, n, m, strategy, trials, 1);
        cfg.optimizer.batch_size = q;
        let reference = cfg.reference_point();
        let report = match run_experiment(cfg, DriverOptions::default()) {
            Ok(s) => s.report,
            Err(e) => {
                all &= line(false, name, &format!("run failed: {e}"));
                continue;
            }
        };
        let hv: Vec<f64> = report.hv_vs_trials.iter().map(|r| r.1).collect();
        let monotone = hv.windows(2).all(|w| w[1] >= w[0]);
        let last = hv.last().copied().unwrap_or(0.0);
        let ceiling = sphere_front_ceiling(m, reference[0]);
        let random = random_search_hv(n, m, trials, 1, &reference);
        let ok = hv.len() == trials && monotone && last <= ceiling + 1e-6 && last >= random;
        all &= line(
            ok,
            name,
            &format!(
                "{} trials, final hypervolume {last:.5}, random search {random:.5}, ceiling {ceiling:.5}, monotone {monotone}",
                hv.len()
            ),
        );
    }
    line(all, "closure one", &format!("{:.1} s", started.elapsed().as_secs_f64()))
}

fn outcomes(dir: &Path) -> Option<(Outcomes, f64)> {
    let j = read_journal(&dir.join("journal.jsonl")).ok()?;
    Some((finalized_outcomes(&j.events), evaluation_span(&j.events)?))
}

/// Starts `count` local worker processes against `addr`.
pub fn spawn_workers(addr: &str, count: usize, slots: usize, prefix: &str) -> std::io::Result<Vec<Child>> {
    let exe = std::env::current_exe()?;
    (0..count)
        .map(|i| {
            Command::new(&exe)
                .args(["worker", "--coordinator", addr, "--slots", &slots.to_string()])
                .args(["--worker-id", &format!("{prefix}-{i}"), "--register-timeout", "30"])
                .stdin(Stdio::null())
                .spawn()
        })
        .collect()
}

fn reap(children: &Mutex<Vec<Child>>) {
    let deadline = Instant::now() + Duration::from_secs(10);
    for c in children.lock().unwrap().iter_mut() {
        while Instant::now() < deadline && matches!(c.try_wait(), Ok(None)) {
            std::thread::sleep(Duration::from_millis(50));
        }
        if matches!(c.try_wait(), Ok(None)) {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

/// The same 64-trial batch (1 s per evaluation) in-process and on two
/// local worker processes with four slots each: identical trial sets and
/// an evaluation phase under 12 s.
pub fn suite_two(out: &Path, serial_baseline: bool) -> bool {
    let make = |name: &str| {
        let mut cfg = base_config(&out.join(name), 6, 2, Strategy::Mobo, 64, 7);
        cfg.problem = cfg.problem.with_delay(1.0);
        cfg.optimizer.batch_size = 64;
        cfg.optimizer.init_count = Some(64);
        cfg.runner.concurrency = 8;
        cfg
    };
    let mut all = true;

    let local = make("in-process");
    let local_dir = local.report_dir.clone();
    if let Err(e) = run_experiment(local, DriverOptions::default()) {
        return line(false, "closure two", &format!("in-process run failed: {e}"));
    }

    let mut dist = make("distributed");
    dist.runner.kind = RunnerKind::Distributed;
    dist.runner.listen_address = Some("127.0.0.1:0".into());
    dist.runner.heartbeat_interval = 1.0;
    let dist_dir = dist.report_dir.clone();
    let children: Arc<Mutex<Vec<Child>>> = Arc::default();
    let kids = children.clone();
    let opts = DriverOptions {
        on_listen: Some(Box::new(move |addr| match spawn_workers(&addr.to_string(), 2, 4, "closure") {
            Ok(c) => *kids.lock().unwrap() = c,
            Err(e) => eprintln!("cannot spawn workers: {e}"),
        })),
        ..Default::default()
    };
    let dist_result = run_experiment(dist, opts);
    reap(&children);
    let report = match dist_result {
        Ok(s) => s.report,
        Err(e) => return line(false, "closure two", &format!("distributed run failed: {e}")),
    };

    let (Some((a, local_span)), Some((b, dist_span))) = (outcomes(&local_dir), outcomes(&dist_dir)) else {
        return line(false, "closure two", "journals unreadable");
    };
    all &= line(a == b && a.len() == 64, "trial sets", &format!("{} in-process, {} distributed, equal {}", a.len(), b.len(), a == b));
    all &= line(dist_span < 12.0, "evaluation makespan", &format!("{dist_span:.2} s distributed (in-process {local_span:.2} s), bound 12 s"));
    let peak = report.max_concurrency();
    all &= line(peak == 8, "peak concurrency", &format!("{peak} of 8 slots"));

    if serial_baseline {
        let mut serial = make("serial");
        serial.runner.concurrency = 1;
        let dir = serial.report_dir.clone();
        match run_experiment(serial, DriverOptions::default()).ok().and_then(|_| outcomes(&dir)) {
            Some((_, span)) => all &= line(span >= 64.0, "serial baseline", &format!("{span:.2} s")),
            None => all &= line(false, "serial baseline", "run failed"),
        }
    }
    line(all, "closure two", if all { "all checks passed" } else { "some checks failed" })
}

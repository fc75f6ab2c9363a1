use std::process::Command;

use aircomp_dfl::harness::{
    compute_c, evaluate_bound, fit_rho, read_csv, run_experiment, run_single, write_csv, ConsensusKind,
    ConvergenceEnvelope, ExperimentConfig, MetricsRecord, Setup, StepSize, TopologyKind,
};
use aircomp_dfl::learners::{AlgorithmConfig, ConsensusMode, Learner, Network, Variant};
use aircomp_dfl::problems::FiniteSumObjective;
use aircomp_dfl::rng;
use aircomp_dfl::scheduler::{Schedule, SchedulePolicy};
use aircomp_dfl::topology::{laplacian_mixing, NetworkGraph};
use proptest::prelude::*;

fn small(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        devices: 10,
        samples: 200,
        dimension: 6,
        iterations: 60,
        repetitions: 3,
        step_size: StepSize::Fixed(0.5),
        ..ExperimentConfig::default()
    }
}

fn csv_bytes(records: &[MetricsRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).unwrap();
    buf
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn output_is_independent_of_thread_count() {
    for variant in [Variant::DsgtVr, Variant::Dsgt, Variant::Dsgd] {
        let config = ExperimentConfig { variant, ..small(4) };
        let one = in_pool(1, || csv_bytes(&run_experiment(&config).unwrap().records));
        let four = in_pool(4, || csv_bytes(&run_experiment(&config).unwrap().records));
        let again = in_pool(3, || csv_bytes(&run_experiment(&config).unwrap().records));
        assert_eq!(one, four);
        assert_eq!(one, again);
    }
}

#[test]
fn different_seeds_give_different_traces() {
    let a = csv_bytes(&run_experiment(&small(1)).unwrap().records);
    let b = csv_bytes(&run_experiment(&small(2)).unwrap().records);
    assert_ne!(a, b);
}

#[test]
fn schedule_policy_does_not_change_results() {
    for topology in [TopologyKind::Threshold, TopologyKind::Ring] {
        let naive = ExperimentConfig { schedule: SchedulePolicy::Naive, topology, ..small(9) };
        let colored = ExperimentConfig { schedule: SchedulePolicy::Coloring, ..naive.clone() };
        let a = run_experiment(&naive).unwrap().records;
        let b = run_experiment(&colored).unwrap().records;
        assert!(b[0].blocks <= a[0].blocks);
        if topology == TopologyKind::Ring {
            assert!(b[0].blocks < a[0].blocks);
        }
        for (x, y) in a.iter().zip(&b) {
            let y = MetricsRecord { blocks: x.blocks, ..y.clone() };
            let text = |r: &MetricsRecord| String::from_utf8(csv_bytes(std::slice::from_ref(r))).unwrap();
            assert_eq!(text(x), text(&y));
        }
    }
}

#[test]
fn single_repetition_is_the_first_seeded_run() {
    let config = ExperimentConfig { repetitions: 1, ..small(12) };
    let setup = Setup::build(&config).unwrap();
    let direct = run_single(&setup, &config, rng::repetition_seed(12, 0)).unwrap().records;
    assert_eq!(csv_bytes(&run_experiment(&config).unwrap().records), csv_bytes(&direct));
}

#[test]
fn repetitions_average_the_individual_runs() {
    let config = small(13);
    let setup = Setup::build(&config).unwrap();
    let runs: Vec<_> =
        (0..3).map(|r| run_single(&setup, &config, rng::repetition_seed(13, r)).unwrap().records).collect();
    let avg = run_experiment(&config).unwrap().records;
    for t in 0..avg.len() {
        let mean = runs.iter().map(|r| r[t].mean_gap).sum::<f64>() / 3.0;
        assert!((avg[t].mean_gap - mean).abs() <= 1e-15 * mean.abs().max(1e-300));
    }
}

#[test]
fn measured_gap_stays_under_the_envelope() {
    let config =
        ExperimentConfig { devices: 12, iterations: 400, repetitions: 1, step_size: StepSize::Fixed(1.0), ..small(21) };
    let setup = Setup::build(&config).unwrap();
    let seed = rng::repetition_seed(21, 0);
    let noiseless = ExperimentConfig { consensus: ConsensusKind::ErrorFree, ..config.clone() };
    let clean: Vec<f64> = run_single(&setup, &noiseless, seed).unwrap().records.iter().map(|r| r.mean_gap).collect();
    let fit = fit_rho(&clean, 1e-12).unwrap();
    let measured = run_single(&setup, &config, seed).unwrap().records;
    let b = measured.last().unwrap().max_theta_norm;
    let n = setup.problem.n_devices();
    let envelope = ConvergenceEnvelope {
        rho: fit.rho,
        c: compute_c(&vec![vec![0.0; 6]; n], &setup.optimum.theta).unwrap(),
        n_devices: n,
        noise_energy: config.channel(6).unwrap().noise_energy_bound(b),
    };
    let l = setup.problem.smoothness();
    for r in &measured {
        assert!(r.mean_gap <= 1.05 * evaluate_bound(&envelope, l, r.iteration).unwrap(), "t={}", r.iteration);
    }
}

struct Quadratic;

impl FiniteSumObjective for Quadratic {
    fn n_devices(&self) -> usize {
        1
    }
    fn dim(&self) -> usize {
        2
    }
    fn local_len(&self, _: usize) -> usize {
        1
    }
    fn sample_loss(&self, _: usize, _: usize, theta: &[f64]) -> f64 {
        0.5 * ((theta[0] - 1.0).powi(2) + (theta[1] + 2.0).powi(2))
    }
    fn sample_grad_into(&self, _: usize, _: usize, theta: &[f64], out: &mut [f64]) {
        out[0] = theta[0] - 1.0;
        out[1] = theta[1] + 2.0;
    }
}

#[test]
fn rate_fit_recovers_gradient_descent_contraction() {
    let g = NetworkGraph::edgeless(1).unwrap();
    let w = laplacian_mixing(&g).unwrap();
    let net = Network::new(g.clone(), w, Schedule::build(&g, SchedulePolicy::Coloring)).unwrap();
    let config = AlgorithmConfig {
        variant: Variant::DsgtVr,
        step_size: 0.1,
        max_iterations: 100,
        consensus: ConsensusMode::ErrorFree,
    };
    let mut learner = Learner::new(&Quadratic, &net, config, 0).unwrap();
    let mut gaps = vec![Quadratic.global_loss(&learner.states()[0].theta)];
    for _ in 0..100 {
        learner.step().unwrap();
        gaps.push(Quadratic.global_loss(&learner.states()[0].theta));
    }
    let fit = fit_rho(&gaps, 1e-25).unwrap();
    assert!((fit.rho - 0.81).abs() < 1e-9, "rho {}", fit.rho);
    assert!(fit.r_squared > 1.0 - 1e-12);
}

#[test]
fn auto_step_runs_and_reports_its_choice() {
    let config = ExperimentConfig { step_size: StepSize::Auto, consensus: ConsensusKind::ErrorFree, ..small(3) };
    let out = run_experiment(&config).unwrap();
    assert!(out.summary.step_size > 0.0);
    assert!(out.records.last().unwrap().mean_gap < out.records[0].mean_gap);
}

fn finite_or_special() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>(),
        Just(f64::NAN),
        Just(f64::INFINITY),
        Just(-0.0),
        Just(f64::MIN_POSITIVE / 3.0),
        (-1e3f64..1e3),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip_is_bit_exact(
        rows in prop::collection::vec(
            (any::<u64>(), prop::collection::vec(finite_or_special(), 9), 0usize..100),
            1..6,
        ),
        n in 1usize..4,
    ) {
        let records: Vec<MetricsRecord> = rows
            .iter()
            .map(|(t, v, blocks)| MetricsRecord {
                iteration: *t,
                mean_gap: v[0],
                device_gaps: v[1..1 + n].to_vec(),
                consensus_error: v[4],
                test_accuracy: v[5],
                max_theta_norm: v[6],
                block_noise_energy: v[7],
                scaling_factor: v[8],
                blocks: *blocks,
            })
            .collect();
        let back = read_csv(csv_bytes(&records).as_slice()).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            let bits = |r: &MetricsRecord| {
                let mut v = vec![r.mean_gap, r.consensus_error, r.test_accuracy, r.max_theta_norm, r.block_noise_energy, r.scaling_factor];
                v.extend(&r.device_gaps);
                // NaN payloads are not preserved by text; compare the canonical one.
                v.into_iter().map(|x| if x.is_nan() { f64::NAN.to_bits() } else { x.to_bits() }).collect::<Vec<_>>()
            };
            prop_assert_eq!(a.iteration, b.iteration);
            prop_assert_eq!(a.blocks, b.blocks);
            prop_assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn cli_writes_identical_files_for_identical_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "devices = 8\nsamples = 160\ndimension = 5\niterations = 40\nrepetitions = 2\nstep_size = 0.5\n",
    )
    .unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_aircomp-dfl"))
            .env("RAYON_NUM_THREADS", threads)
            .args(["run", "--seed", "5", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "4");
    assert_eq!(a, b);
    let records = read_csv(a.as_slice()).unwrap();
    assert_eq!(records.len(), 41);
    assert_eq!(records[0].device_gaps.len(), 8);
}

#[test]
fn cli_rejects_bad_flags() {
    let out = Command::new(env!("CARGO_BIN_EXE_aircomp-dfl")).args(["run", "--variant", "adam"]).output().unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_aircomp-dfl"))
        .args(["run", "--power", "-1", "--iters", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

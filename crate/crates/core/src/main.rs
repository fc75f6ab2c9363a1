use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aircomp_dfl::harness::{
    self, compute_c, evaluate_bound, fit_rho, ConsensusKind, ConvergenceEnvelope, ExperimentConfig, HarnessError,
    Setup, StepSize,
};
use aircomp_dfl::learners::Variant;
use aircomp_dfl::problems::FiniteSumObjective;
use aircomp_dfl::rng;
use aircomp_dfl::scheduler::SchedulePolicy;

#[derive(Parser)]
#[command(name = "aircomp-dfl", version, about = "Decentralized learning over simulated wireless links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write the metrics CSV.
    Run {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Write the communication graph and mixing matrix here.
        #[arg(long)]
        topology_out: Option<PathBuf>,
        /// Write the transmission schedule here.
        #[arg(long)]
        schedule_out: Option<PathBuf>,
    },
    /// Print the centralized optimum F(theta*).
    Oracle {
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Evaluate the convergence envelope next to a measured trace.
    Bound {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Contraction factor; fitted from an error-free run when omitted.
        #[arg(long)]
        rho: Option<f64>,
        /// Gap below which the fit stops.
        #[arg(long, default_value_t = 1e-12)]
        floor: f64,
    },
    /// Print the `device block` assignment.
    ScheduleDump {
        #[command(flatten)]
        opts: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value (TOML) experiment file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    consensus: Option<ConsensusKind>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Step size, or `auto`.
    #[arg(long)]
    alpha: Option<StepSize>,
    #[arg(long, allow_negative_numbers = true)]
    noise_dbm: Option<f64>,
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    schedule: Option<SchedulePolicy>,
    #[arg(long)]
    per_device: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Metrics CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! apply {
            ($($flag:ident => $field:ident),+) => { $(if let Some(v) = self.$flag.clone() { c.$field = v; })+ };
        }
        apply!(seed => seed, variant => variant, consensus => consensus, devices => devices, iters => iterations,
            alpha => step_size, noise_dbm => noise_dbm, power => peak_power, gamma => gain_threshold,
            schedule => schedule, repetitions => repetitions, record_every => record_every);
        if self.per_device.is_some() {
            c.per_device = self.per_device;
        }
        if self.out.is_some() {
            c.output = self.out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(opts: &ConfigArgs, topology_out: Option<&PathBuf>, schedule_out: Option<&PathBuf>) -> Result<(), HarnessError> {
    let config = opts.resolve()?;
    let setup = Setup::build(&config)?;
    if let Some(path) = topology_out {
        let text = format!("{}\n{}", setup.network.graph.to_edge_list(), setup.network.mixing.to_edge_list());
        std::fs::write(path, text)?;
    }
    if let Some(path) = schedule_out {
        std::fs::write(path, setup.network.schedule.to_text())?;
    }
    let out = harness::run_with_setup(&setup, &config)?;
    harness::write_csv(&out.records, output(config.output.as_ref())?)?;
    let s = &out.summary;
    eprintln!(
        "devices={} dim={} lambda={:e} L={:e} beta={:.6} blocks={} alpha={:e}",
        s.n_devices, s.dimension, s.lambda, s.smoothness, s.beta, s.blocks, s.step_size
    );
    eprintln!(
        "F*={:.15e} final_gap={:e} plateau_gap={:e} accuracy={} max_norm={:e}",
        s.optimum_value, s.final_gap, s.plateau_gap, s.final_accuracy, s.max_theta_norm
    );
    Ok(())
}

fn oracle(opts: &ConfigArgs) -> Result<(), HarnessError> {
    let config = opts.resolve()?;
    let setup = Setup::build(&config)?;
    let o = &setup.optimum;
    println!("F*={:.17e} grad_norm={:e} iterations={}", o.value, o.grad_norm, o.iterations);
    Ok(())
}

fn bound(opts: &ConfigArgs, rho: Option<f64>, floor: f64) -> Result<(), HarnessError> {
    let config = opts.resolve()?;
    let setup = Setup::build(&config)?;
    let measured = harness::run_single(&setup, &config, rng::repetition_seed(config.seed, 0))?.records;
    let rho = match rho {
        Some(r) => r,
        None => {
            let noiseless = ExperimentConfig { consensus: ConsensusKind::ErrorFree, record_every: 1, ..config.clone() };
            let trace = harness::run_single(&setup, &noiseless, rng::repetition_seed(config.seed, 0))?.records;
            let gaps: Vec<f64> = trace.iter().map(|r| r.mean_gap).collect();
            let fit = fit_rho(&gaps, floor)?;
            eprintln!("fitted rho={} r2={} window={:?}", fit.rho, fit.r_squared, fit.window);
            fit.rho
        }
    };
    let n = setup.problem.n_devices();
    let starts = vec![vec![0.0; setup.problem.dim()]; n];
    let b = measured.last().map_or(0.0, |r| r.max_theta_norm);
    let noise_energy = match config.consensus {
        ConsensusKind::ErrorFree => 0.0,
        ConsensusKind::AirComp => config.channel(setup.problem.dim())?.noise_energy_bound(b),
    };
    let envelope =
        ConvergenceEnvelope { rho, c: compute_c(&starts, &setup.optimum.theta)?, n_devices: n, noise_energy };
    let l = setup.problem.smoothness();
    let mut w = output(config.output.as_ref())?;
    writeln!(w, "iteration,bound,measured_gap")?;
    for r in &measured {
        writeln!(w, "{},{:e},{:e}", r.iteration, evaluate_bound(&envelope, l, r.iteration)?, r.mean_gap)?;
    }
    w.flush()?;
    Ok(())
}

fn schedule_dump(opts: &ConfigArgs) -> Result<(), HarnessError> {
    let config = opts.resolve()?;
    let graph = harness::experiment::build_graph(&config)?;
    let schedule = aircomp_dfl::scheduler::Schedule::build(&graph, config.schedule);
    let mut w = output(config.output.as_ref())?;
    w.write_all(schedule.to_text().as_bytes())?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { opts, topology_out, schedule_out } => run(opts, topology_out.as_ref(), schedule_out.as_ref()),
        Command::Oracle { opts } => oracle(opts),
        Command::Bound { opts, rho, floor } => bound(opts, *rho, *floor),
        Command::ScheduleDump { opts } => schedule_dump(opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

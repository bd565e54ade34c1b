use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlococ::io::{self, Format};
use nlococ::{
    energy_residuals, fd_gradient_oracle, optimize, random_direction,
    sampled_variational_inequality, separation_report, simulate, taylor_test, Error, Execution,
    Scenario,
};

#[derive(Parser)]
#[command(
    name = "nlococ",
    version,
    about = "Non-local Cahn-Hilliard tumour model: simulation, sensitivities, optimal control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the forward model and export the trajectory and monitors.
    Simulate(Common),
    /// Per-step energy, mass ledger and separation margin.
    EnergyReport(Common),
    /// Compare the adjoint gradient with central differences.
    GradientCheck {
        #[command(flatten)]
        common: Common,
        /// Number of random directions.
        #[arg(long, default_value_t = 3)]
        directions: usize,
    },
    /// Remainder slopes of the linearised control-to-state map.
    TaylorTest(Common),
    /// Projected gradient optimisation of the controls.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Random feasible controls for the variational inequality check.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Check the scenario against the model assumptions and exit.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Field export format: csv or raw64.
    #[arg(long, default_value = "raw64")]
    format: String,
}

impl Common {
    fn format(&self) -> Result<Format, Error> {
        self.format.parse()
    }

    fn load(&self) -> Result<Scenario, Error> {
        Scenario::load(&self.scenario, self.seed)
    }

    fn out_dir(&self) -> Result<&Path, Error> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Parse { .. } | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("NLOCOC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "NLOCOC_THREADS must be a positive integer (got `{raw}`)"
        ))
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = configure_threads().and_then(|()| run(cli.command));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Simulate(c) => cmd_simulate(&c),
        Command::EnergyReport(c) => cmd_energy(&c),
        Command::GradientCheck { common, directions } => cmd_gradient(&common, directions),
        Command::TaylorTest(c) => cmd_taylor(&c),
        Command::Optimize { common, samples } => cmd_optimize(&common, samples),
        Command::Validate(c) => cmd_validate(&c),
    }
}

fn cmd_validate(c: &Common) -> Result<u8, Error> {
    let sc = c.load()?;
    for a in &sc.audit {
        println!(
            "{} {:<3} {}",
            if a.ok { "ok  " } else { "FAIL" },
            a.label,
            a.detail
        );
    }
    let r = &sc.coercivity;
    println!(
        "coercivity: min F'' = {:.6e} at s = {:.6}, min a = {:.6e}, c0 = {:.6e}, chi^2 = {:.6e}",
        r.min_f2, r.argmin_f2, r.min_a, r.c0, r.chi_sq
    );
    println!("scenario valid");
    Ok(0)
}

fn cmd_simulate(c: &Common) -> Result<u8, Error> {
    let format = c.format()?;
    let sc = c.load()?;
    let traj = simulate(&sc.model, &sc.phi0, &sc.sigma0, &sc.controls, &sc.time)?;
    let dir = c.out_dir()?;
    let files = io::export_trajectory(&dir.join("trajectory"), &traj, format)?;
    io::write_monitors_csv(&dir.join("monitors.csv"), &traj.monitors)?;
    let sep = separation_report(&traj, &sc.model.potential);
    let worst = traj
        .monitors
        .iter()
        .map(|m| m.mass_defect.abs())
        .fold(0.0, f64::max);
    println!("steps: {}", traj.time.steps());
    println!("snapshots: {}", traj.snapshots.len());
    println!("max |mass defect|: {worst:.3e}");
    println!("max |phi|: {:.16e} (node {})", sep.max_abs, sep.node);
    println!("files: {} written to {}", files.len() + 1, dir.display());
    Ok(0)
}

fn cmd_energy(c: &Common) -> Result<u8, Error> {
    let sc = c.load()?;
    let traj = simulate(&sc.model, &sc.phi0, &sc.sigma0, &sc.controls, &sc.time)?;
    let res = energy_residuals(&sc.model, &traj, &sc.controls)?;
    let l = sc.model.potential.half_width();
    let rows: Vec<Vec<f64>> = traj
        .monitors
        .iter()
        .enumerate()
        .map(|(n, m)| {
            let r = if n == 0 { 0.0 } else { res[n - 1] };
            let margin = if l.is_finite() {
                l - m.max_abs_phi
            } else {
                f64::INFINITY
            };
            vec![
                n as f64,
                m.time,
                m.energy,
                r,
                m.mass,
                m.mass_ledger,
                m.mass_defect,
                m.max_abs_phi,
                margin,
            ]
        })
        .collect();
    let header = [
        "step",
        "time",
        "energy",
        "energy_residual",
        "mass",
        "mass_ledger",
        "mass_defect",
        "max_abs_phi",
        "separation_margin",
    ];
    println!("{}", header.join(","));
    for r in &rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        println!("{}", line.join(","));
    }
    io::write_table_csv(&c.out_dir()?.join("energy_report.csv"), &header, &rows)?;
    Ok(0)
}

fn cmd_gradient(c: &Common, directions: usize) -> Result<u8, Error> {
    let sc = c.load()?;
    let problem = sc.problem();
    let eval = problem.evaluate(&sc.controls)?;
    let eps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    println!("J = {:.16e}", eval.cost);
    let mut rows = Vec::new();
    for d in 0..directions {
        let dir = random_direction(sc.grid(), &sc.time, sc.seed.wrapping_add(1000 + d as u64));
        let rep = fd_gradient_oracle(
            &problem,
            &sc.controls,
            &eval.gradient,
            &dir,
            &eps,
            Execution::Parallel,
        )?;
        println!(
            "direction {d}: adjoint (g,d) = {:.16e}",
            rep.adjoint_derivative
        );
        for k in 0..eps.len() {
            println!(
                "  eps = {:.0e}  fd = {:.16e}  rel. error = {:.3e}",
                rep.eps[k], rep.fd_derivative[k], rep.relative_error[k]
            );
            rows.push(vec![
                d as f64,
                rep.eps[k],
                rep.adjoint_derivative,
                rep.fd_derivative[k],
                rep.relative_error[k],
            ]);
        }
    }
    io::write_table_csv(
        &c.out_dir()?.join("gradient_check.csv"),
        &["direction", "eps", "adjoint", "fd", "relative_error"],
        &rows,
    )?;
    Ok(0)
}

fn cmd_taylor(c: &Common) -> Result<u8, Error> {
    let sc = c.load()?;
    let dir = random_direction(sc.grid(), &sc.time, sc.seed.wrapping_add(2000));
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let rep = taylor_test(
        &sc.model,
        &sc.phi0,
        &sc.sigma0,
        &sc.controls,
        &dir,
        &sc.time,
        &eps,
        Execution::Parallel,
    )?;
    for (e, r) in rep.eps.iter().zip(&rep.remainder) {
        println!("eps = {e:.0e}  remainder = {r:.6e}");
    }
    for (k, s) in rep.slopes.iter().enumerate() {
        println!("slope[{k}] = {s:.6}");
    }
    println!("floor = {:.3e}", rep.floor);
    println!("fitted slope = {:.6}", rep.fitted_slope);
    let rows: Vec<Vec<f64>> = rep
        .eps
        .iter()
        .zip(&rep.remainder)
        .map(|(e, r)| vec![*e, *r])
        .collect();
    io::write_table_csv(
        &c.out_dir()?.join("taylor.csv"),
        &["eps", "remainder"],
        &rows,
    )?;
    Ok(0)
}

fn cmd_optimize(c: &Common, samples: usize) -> Result<u8, Error> {
    let format = c.format()?;
    let sc = c.load()?;
    let problem = sc.problem();
    let res = optimize(&problem, &sc.controls, &sc.sets, &sc.optimizer)?;
    let dt = sc.time.dt();
    let vi = sampled_variational_inequality(
        &res.controls,
        &res.evaluation.gradient,
        &sc.sets,
        dt,
        &sc.optimizer.projection(),
        samples,
        sc.seed,
        Execution::Parallel,
    )?;
    let dir = c.out_dir()?;
    let rows: Vec<Vec<f64>> = res
        .history
        .iter()
        .map(|h| vec![h.iteration as f64, h.cost, h.stationarity, h.step])
        .collect();
    io::write_table_csv(
        &dir.join("history.csv"),
        &["iteration", "cost", "stationarity", "step"],
        &rows,
    )?;
    let ext = format.extension();
    let u: Vec<_> = res.controls.u.nodes().iter().collect();
    let v: Vec<_> = res.controls.v.nodes().iter().collect();
    match format {
        Format::Raw64 => {
            io::write_raw64(&dir.join(format!("u.{ext}")), &u)?;
            io::write_raw64(&dir.join(format!("v.{ext}")), &v)?;
        }
        Format::Csv => {
            let cdir = dir.join("controls");
            std::fs::create_dir_all(&cdir)?;
            for (n, (a, b)) in u.iter().zip(&v).enumerate() {
                io::write_field_csv(&cdir.join(format!("u_{n:05}.csv")), a)?;
                io::write_field_csv(&cdir.join(format!("v_{n:05}.csv")), b)?;
            }
        }
    }
    io::export_trajectory(&dir.join("trajectory"), &res.evaluation.trajectory, format)?;
    println!("iterations: {}", res.history.len() - 1);
    println!("J: {:.16e}", res.evaluation.cost);
    println!("stationarity: {:.3e}", res.kkt_residual);
    println!("converged: {}", res.converged);
    println!("variational inequality min (g, c - x): {vi:.3e}");
    Ok(if res.converged { 0 } else { 2 })
}

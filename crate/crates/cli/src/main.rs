use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anaprior::experiments::{
    certify, generate_scenario, oracle_compare, problem_for, run_scenario, status_name, ScenarioConfig,
};
use anaprior::solver::solve_penalized;
use anaprior::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "anaprior", version, about = "Analysis decomposable-prior recovery: solve, certify, verify bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the penalized problem for every noise draw (writes solutions.csv).
    Solve(Common),
    /// Build the dual certificate at x0 (writes certificate.csv and summary.txt).
    Certify(Common),
    /// Uniqueness verdicts for noiseless data at x0 (writes uniqueness.txt).
    CheckUniqueness(Common),
    /// Solve, certify and check the stability bounds over the epsilon list
    /// (writes results.csv, summary.txt, error_vs_eps.svg).
    StabilitySweep(Common),
    /// Compare the solver with the brute-force oracle on tiny instances
    /// (writes oracle.csv).
    OracleCompare(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the solver iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
}

impl Common {
    fn load(&self) -> anaprior::Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(tol) = self.tol {
            cfg.solver.tol = tol;
        }
        if let Some(max_iter) = self.max_iter {
            cfg.solver.max_iter = max_iter;
        }
        cfg.validate()?;
        std::fs::create_dir_all(&self.out)?;
        Ok(cfg)
    }
}

fn solve(cfg: &ScenarioConfig, out: &Path) -> anaprior::Result<u8> {
    let scenario = generate_scenario(cfg)?;
    let mut wtr = csv::Writer::from_writer(File::create(out.join("solutions.csv"))?);
    let n = cfg.dims.n;
    let mut header: Vec<String> = [
        "trial",
        "epsilon",
        "lambda",
        "objective",
        "optimality_residual",
        "iterations",
        "converged",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=n).map(|i| format!("x_{i}")));
    wtr.write_record(&header)?;
    for draw in &scenario.draws {
        let problem = problem_for(&scenario, draw, cfg.c)?;
        let rep = solve_penalized(&problem, &cfg.solver)?;
        println!(
            "epsilon={} trial={} objective={} residual={:.3e} converged={}",
            draw.epsilon, draw.trial, rep.objective, rep.optimality_residual, rep.converged
        );
        let mut row = vec![
            draw.trial.to_string(),
            draw.epsilon.to_string(),
            problem.lambda.to_string(),
            rep.objective.to_string(),
            rep.optimality_residual.to_string(),
            rep.iterations.to_string(),
            rep.converged.to_string(),
        ];
        row.extend(rep.x_star.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(0)
}

fn certify_cmd(cfg: &ScenarioConfig, out: &Path) -> anaprior::Result<u8> {
    let scenario = generate_scenario(cfg)?;
    let cert = certify(&scenario, cfg)?;
    let mut text = format!("model_dim: {}\n", cert.t0.dim());
    if let Some(ic) = &cert.ic_chain {
        text += &format!("ic_zero: {}\nic_u_only: {}\nic_full: {}\n", ic.zero, ic.u_only, ic.full);
    }
    match &cert.certificate {
        Ok(c) => {
            c.write_csv(File::create(out.join("certificate.csv"))?)?;
            text += &format!(
                "saturation: {}\nsource_residual: {}\neta_norm: {}\nguarantee: {}\n",
                c.saturation,
                c.source_residual,
                c.eta_norm(),
                if c.has_guarantee() { "yes" } else { "no-guarantee" }
            );
        }
        Err(e) => text += &format!("certificate: failed ({e})\n"),
    }
    text += &format!("c_phi: {}\n", cert.c_phi);
    match &cert.bound {
        Ok(b) => text += &format!("c1: {}\nc2: {}\ntotal_c: {}\n", b.c1, b.c2, b.total_c),
        Err(e) => text += &format!("stability: unavailable ({e})\n"),
    }
    std::fs::write(out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

fn uniqueness_cmd(cfg: &ScenarioConfig, out: &Path) -> anaprior::Result<u8> {
    let scenario = generate_scenario(cfg)?;
    let cert = certify(&scenario, cfg)?;
    let mut text = String::new();
    match &cert.certificate_verdict {
        Some(v) => text += &format!("certificate: {}\n", status_name(v)),
        None => text += "certificate: undecided (no certificate)\n",
    }
    match &cert.nsp_verdict {
        Ok(v) => {
            text += &format!("strong_nsp: {}\n", status_name(v));
            if let Some(min) = v.min_value {
                text += &format!("strong_nsp_min: {min}\n");
            }
            if let Some(w) = &v.witness {
                let entries: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                text += &format!("witness: {}\n", entries.join(","));
            }
        }
        Err(e) => text += &format!("strong_nsp: failed ({e})\n"),
    }
    std::fs::write(out.join("uniqueness.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

fn sweep_cmd(cfg: &ScenarioConfig, out: &Path) -> anaprior::Result<u8> {
    let run = run_scenario(cfg, out)?;
    print!("{}", run.summary_text());
    Ok(run.exit_code() as u8)
}

fn oracle_cmd(cfg: &ScenarioConfig, out: &Path) -> anaprior::Result<u8> {
    let rows = oracle_compare(cfg)?;
    let mut wtr = csv::Writer::from_writer(File::create(out.join("oracle.csv"))?);
    wtr.write_record(["trial", "epsilon", "objective_solver", "objective_oracle", "agree"])?;
    for r in &rows {
        wtr.write_record([
            r.trial.to_string(),
            r.epsilon.to_string(),
            r.objective_solver.to_string(),
            r.objective_oracle.to_string(),
            r.agree.to_string(),
        ])?;
    }
    wtr.flush()?;
    let disagreements = rows.iter().filter(|r| !r.agree).count();
    println!("compared: {} disagreements: {disagreements}", rows.len());
    Ok(if disagreements > 0 { 1 } else { 0 })
}

type Handler = fn(&ScenarioConfig, &Path) -> anaprior::Result<u8>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Handler) = match &cli.command {
        Command::Solve(c) => (c, solve),
        Command::Certify(c) => (c, certify_cmd),
        Command::CheckUniqueness(c) => (c, uniqueness_cmd),
        Command::StabilitySweep(c) => (c, sweep_cmd),
        Command::OracleCompare(c) => (c, oracle_cmd),
    };
    let result = common.load().and_then(|cfg| run(&cfg, &common.out));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            match e {
                Error::Config(_) => eprintln!("{e}"),
                Error::Json(_) | Error::Io(_) => eprintln!("configuration error: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(2)
        }
    }
}

use std::io::Write;

use clap::Args;
use fedloc_core::analysis::{self, BoundParams};
use serde::Serialize;

use crate::output::OutputDir;
use crate::{CommonArgs, ValidationError};

pub const SWEEP_ROUNDS: [u64; 7] = [10, 20, 50, 100, 200, 500, 1000];

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    /// Lipschitz constant of the local losses
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Smoothness constant of the local losses
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Learning rate
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    /// Weighted gradient divergence
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Inverse distance to the optimum
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    /// Communication rounds T
    #[arg(long, default_value_t = 100)]
    pub rounds: u64,
    /// Local steps per round E
    #[arg(long, default_value_t = 40)]
    pub local_steps: u64,
}

impl Default for BoundArgs {
    fn default() -> Self {
        BoundArgs { rho: 1.0, beta: 1.0, eta: 0.01, delta: 0.1, omega: 1.0, rounds: 100, local_steps: 40 }
    }
}

impl BoundArgs {
    pub fn params(&self) -> BoundParams {
        BoundParams {
            rho: self.rho,
            beta: self.beta,
            eta: self.eta,
            delta: self.delta,
            omega: self.omega,
            rounds: self.rounds,
            local_steps: self.local_steps,
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    params: BoundParams,
    phi: f64,
    h: f64,
    bound: f64,
}

pub fn write_sweep_csv<W: Write>(sweep: &[(u64, f64)], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "bound"])?;
    for (t, b) in sweep {
        w.write_record([t.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(common: &CommonArgs, args: &BoundArgs) -> anyhow::Result<()> {
    let p = args.params();
    p.validate().map_err(|e| ValidationError(e.to_string()))?;
    let bound = analysis::convergence_bound(&p)?;
    let h = analysis::h_function(p.local_steps, p.eta, p.beta, p.delta);
    let sweep = analysis::bound_sweep(&p, &SWEEP_ROUNDS)?;
    println!("phi = {:.6}  h(E) = {:.6e}", p.phi(), h);
    println!("bound(T = {}, E = {}) = {:.6}", p.rounds, p.local_steps, bound);
    println!("{:>6}  {:>12}", "T", "bound");
    for (t, b) in &sweep {
        println!("{t:>6}  {b:>12.6}");
    }
    if let Some(dir) = &common.out {
        let mut out = OutputDir::create(dir)?;
        out.write("bound_sweep.csv", |w| write_sweep_csv(&sweep, w))?;
        out.write_summary("bound", common.seed.unwrap_or(0), &Summary { params: p, phi: p.phi(), h, bound })?;
    }
    Ok(())
}

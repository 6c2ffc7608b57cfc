//! `icc`: convert between the ICC/CAC parameterization and variance
//! components, printing the full correlation panel either way.

use clap::{Args, Subcommand};
use stepwedge::covariance::{
    components_to_icc, icc_to_components, IccPanel, IccSpec, Structure, VarianceComponents,
};

use crate::{classify, Failure, Outcome};

#[derive(Args, Clone)]
pub struct IccArgs {
    #[command(subcommand)]
    cmd: IccCommand,
}

#[derive(Subcommand, Clone)]
enum IccCommand {
    /// Variance components implied by within-period ICCs and a CAC.
    Components {
        /// Generating structure (ne_ri or dtd_ri).
        #[arg(long)]
        structure: String,
        /// Control-condition within-period ICC.
        #[arg(long)]
        rho0: f64,
        /// Intervention-condition within-period ICC.
        #[arg(long)]
        rho1: f64,
        /// Cluster autocorrelation (decay rate under dtd_ri).
        #[arg(long)]
        cac: f64,
        /// Individual error SD.
        #[arg(long, default_value_t = 1.0)]
        sigma_eps: f64,
    },
    /// Correlation panel implied by variance components.
    Correlations {
        /// Covariance structure the components parameterize.
        #[arg(long)]
        structure: String,
        #[arg(long, default_value_t = 0.0)]
        tau_alpha_sq: f64,
        #[arg(long, default_value_t = 0.0)]
        tau_gamma_sq: f64,
        #[arg(long, default_value_t = 0.0)]
        tau_v_sq: f64,
        /// AR(1) decay rate (dtd_ri only).
        #[arg(long, default_value_t = 0.0)]
        decay: f64,
        /// Individual error variance.
        #[arg(long, default_value_t = 1.0)]
        sigma_eps_sq: f64,
    },
}

fn print_components(vc: &VarianceComponents) {
    println!("variance components");
    println!("  tau_alpha_sq  {}", vc.tau_alpha_sq);
    println!("  tau_gamma_sq  {}", vc.tau_gamma_sq);
    println!("  tau_v_sq      {}", vc.tau_v_sq);
    println!("  tau_v         {}", vc.tau_v_sq.sqrt());
    println!("  decay         {}", vc.decay);
    println!("  sigma_eps_sq  {}", vc.sigma_eps_sq);
}

fn print_panel(panel: &IccPanel, decayed: bool) {
    println!("correlation panel");
    println!("  wpicc control       {}", panel.wpicc_control());
    println!("  wpicc intervention  {}", panel.wpicc_intervention());
    let lags: &[usize] = if decayed { &[1, 2, 3] } else { &[1] };
    for &lag in lags {
        let suffix = if decayed { format!(" (lag {lag})") } else { String::new() };
        println!("  bpicc control{suffix}       {}", panel.bpicc_control_at(lag));
        println!("  bpicc intervention{suffix}  {}", panel.bpicc_intervention_at(lag));
        match panel.cac_control_at(lag) {
            Some(c) => println!("  cac control{suffix}         {c}"),
            None => println!("  cac control{suffix}         undefined (no cluster variance)"),
        }
    }
}

pub fn run(args: &IccArgs) -> Result<Outcome, Failure> {
    match &args.cmd {
        IccCommand::Components { structure, rho0, rho1, cac, sigma_eps } => {
            let structure = Structure::parse(structure).map_err(classify)?;
            let spec = IccSpec { rho0: *rho0, rho1: *rho1, cac: *cac, sigma_eps: *sigma_eps };
            let vc = icc_to_components(&spec, structure).map_err(classify)?;
            println!("structure {structure}");
            print_components(&vc);
            let panel = components_to_icc(&vc, structure).map_err(classify)?;
            print_panel(&panel, structure.has_decay());
            Ok(Outcome::Success)
        }
        IccCommand::Correlations {
            structure,
            tau_alpha_sq,
            tau_gamma_sq,
            tau_v_sq,
            decay,
            sigma_eps_sq,
        } => {
            let structure = Structure::parse(structure).map_err(classify)?;
            let vc = VarianceComponents {
                tau_alpha_sq: *tau_alpha_sq,
                tau_gamma_sq: *tau_gamma_sq,
                tau_v_sq: *tau_v_sq,
                decay: *decay,
                sigma_eps_sq: *sigma_eps_sq,
            };
            let panel = components_to_icc(&vc, structure).map_err(classify)?;
            println!("structure {structure}");
            print_components(&vc);
            print_panel(&panel, structure.has_decay());
            Ok(Outcome::Success)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use adac_cli::*;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adac", version, about = "Analogous disentangled actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of a JSON run configuration and write one CSV per seed.
    Train { config: PathBuf },
    /// Fit the amortized sampler to a one-dimensional target.
    SvgdToy {
        #[arg(long, default_value = "bimodal")]
        target: String,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check the critic-bounding guarantees on random finite MDPs.
    Verify {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Check this JSON instance instead of random ones.
        #[arg(long)]
        mdp: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train shared and split policy networks and compare their bias.
    BiasAblation { config: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let s = cmd_train(&cfg, &resolve_out_dir(&cfg.out_dir))?;
            for f in &s.files {
                println!("wrote {}", f.display());
            }
            println!(
                "{} {} over {} seeds: final eval return {:.3} ± {:.3}",
                cfg.env,
                cfg.agent.id(),
                cfg.seeds.len(),
                s.mean,
                s.std
            );
        }
        Cmd::SvgdToy { target, beta, steps, samples, seed, out } => {
            let opts = ToyOptions { target, beta, steps, samples, seed };
            let s = cmd_svgd_toy(&opts, &resolve_out_dir(&out))?;
            println!("wrote {} and {}", s.samples_file.display(), s.density_file.display());
            println!(
                "{} samples: mean {:.3} std {:.3}; mass left {:.3} right {:.3}",
                s.n_samples, s.mean, s.std, s.left_mass, s.right_mass
            );
        }
        Cmd::Verify { instances, seed, tol, mdp, out } => {
            let out = resolve_out_dir(&out);
            let s = match mdp {
                Some(path) => verify_instances(&[MdpFile::load(&path)?], seed, tol, &out)?,
                None => {
                    let opts = VerifyOptions { instances, seed, tol, ..VerifyOptions::default() };
                    cmd_verify(&opts, &out)?
                }
            };
            println!("wrote {}", s.file.display());
            for (name, t) in [("fixed-point", &s.fixed_point), ("arbitrary", &s.arbitrary)] {
                println!(
                    "{name}: {} instances, stability violations {} (reversed sign {}), effectiveness violations {}, decomposition discrepancy {:.2e} (behavior fixed point) {:.2e} (target fixed point)",
                    t.instances,
                    t.stability_violations,
                    t.reversed_stability_violations,
                    t.effectiveness_violations,
                    t.decomposition_behavior_max,
                    t.decomposition_target_max
                );
            }
            if s.violations() > 0 {
                return Err(CliError::Violations(s.violations()));
            }
        }
        Cmd::BiasAblation { config } => {
            let cfg = RunConfig::load(&config)?;
            let s = cmd_bias_ablation(&cfg, &resolve_out_dir(&cfg.out_dir))?;
            println!("wrote {}", s.file.display());
            for ((seed, a), b) in cfg.seeds.iter().zip(&s.shared_bias).zip(&s.split_bias) {
                println!("seed {seed}: mean bias shared {a:.4} split {b:.4}");
            }
            println!("shared lower in {}/{} seeds", s.shared_wins(), cfg.seeds.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

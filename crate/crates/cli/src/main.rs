use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnnroute::baselines::PolicyKind;
use gnnroute::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser, Debug)]
#[command(name = "gnnroute", version, about = "GNN-based DRL routing for optical transport networks")]
struct Cli {
    /// More log output (repeat for debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the DQN agent and write best/final checkpoints plus the training log
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        training_episodes: Option<usize>,
        /// Continue from trainer_state.json in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Paired evaluation of policies on one topology
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Filter a directory of topologies and evaluate gnn, lb and fluid on each kept one
    ZooSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        topology_dir: Option<PathBuf>,
    },
    /// Scores under random connected link removals
    LinkFailures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_failures: Option<usize>,
        #[arg(long)]
        failure_step: Option<usize>,
        /// Experiments per failure level
        #[arg(long)]
        experiments: Option<usize>,
    },
    /// Report which topologies pass the dataset filter
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        topology_dir: Option<PathBuf>,
    },
    /// Check analytic gradients against finite differences
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Flat key = value config file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// nsfnet, geant2, or a GraphML / edge-list file
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Comma-separated subset of gnn, lb, fluid
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<PolicyKind>>,
    /// Any config key, as key=value; may repeat
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self, extra: Vec<(String, String)>) -> Result<Vec<(String, String)>, HarnessError> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|s| s.to_string()));
        put("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        put("topology", self.topology.clone());
        put("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string()));
        put("episodes", self.episodes.map(|e| e.to_string()));
        put(
            "policies",
            self.policies
                .as_ref()
                .map(|p| p.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")),
        );
        out.extend(extra);
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn resolve(&self, extra: Vec<(String, String)>) -> Result<ExperimentConfig, HarnessError> {
        ExperimentConfig::resolve(self.config.as_deref(), &self.overrides(extra)?)
    }
}

fn opt<T: ToString>(key: &str, v: Option<T>) -> Option<(String, String)> {
    v.map(|v| (key.to_string(), v.to_string()))
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Train {
            common,
            training_episodes,
            resume,
        } => {
            let extra = [
                opt("training_episodes", training_episodes),
                resume.then(|| ("resume".to_string(), "true".to_string())),
            ];
            let cfg = common.resolve(extra.into_iter().flatten().collect())?;
            let r = harness::cmd_train(&cfg)?;
            println!("trained {} episodes", r.episodes);
            match (r.best_episode, r.best_eval_mean) {
                (Some(ep), Some(m)) => println!("best evaluation mean {m:.1} after episode {ep}"),
                _ => println!("no evaluation sweep ran; best checkpoint holds the final parameters"),
            }
            if let Some(t) = r.eval_trend {
                println!("evaluation trend: Mann-Kendall S = {}, z = {:.2}", t.s, t.z);
            }
            println!("checkpoints: {}, {}", r.best_checkpoint.display(), r.final_checkpoint.display());
        }
        Command::Eval { common } => {
            let cfg = common.resolve(Vec::new())?;
            let s = harness::cmd_eval(&cfg)?;
            println!("{} episodes on {}", s.episodes.len(), s.topology);
            for &k in &s.policies {
                let rel = s.relative(k);
                println!(
                    "  {k:<6} mean score {:>8.1}  mean relative to fluid {:.3}",
                    s.mean_score(k),
                    harness::mean(&rel)
                );
            }
            if s.policies.contains(&PolicyKind::Gnn) && s.policies.contains(&PolicyKind::Lb) {
                println!("  gnn beats lb in {:.0}% of episodes", 100.0 * s.win_rate(PolicyKind::Gnn, PolicyKind::Lb));
            }
        }
        Command::ZooSweep { common, topology_dir } => {
            let cfg = common.resolve(opt("topology_dir", topology_dir.map(|p| p.display().to_string())).into_iter().collect())?;
            let rows = harness::cmd_zoo_sweep(&cfg)?;
            println!("evaluated {} topologies", rows.len());
            for r in &rows {
                println!(
                    "  {:>3} {:<24} gnn {:>7.1} lb {:>7.1} fluid {:>7.1}",
                    r.topology_id, r.name, r.gnn_mean, r.lb_mean, r.fluid_mean
                );
            }
        }
        Command::LinkFailures {
            common,
            max_failures,
            failure_step,
            experiments,
        } => {
            let extra = [
                opt("max_failures", max_failures),
                opt("failure_step", failure_step),
                opt("experiments", experiments),
            ];
            let cfg = common.resolve(extra.into_iter().flatten().collect())?;
            let levels = harness::cmd_link_failures(&cfg)?;
            for l in &levels {
                let parts: Vec<String> = cfg
                    .policies
                    .iter()
                    .map(|&k| format!("{k} {:.1}", harness::mean(&l.scores(k))))
                    .collect();
                println!("  {:>2} failed links: {}", l.failures, parts.join("  "));
            }
        }
        Command::Filter { common, topology_dir } => {
            let cfg = common.resolve(opt("topology_dir", topology_dir.map(|p| p.display().to_string())).into_iter().collect())?;
            let rows = harness::cmd_filter(&cfg)?;
            let kept = rows.iter().filter(|r| r.accepted()).count();
            println!("{kept} of {} topologies kept", rows.len());
            for r in &rows {
                let verdict = match &r.decision {
                    Ok(d) if d.accepted() => "keep".to_string(),
                    Ok(d) => format!(
                        "reject: {}",
                        d.reasons.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
                    ),
                    Err(msg) => format!("skip: {msg}"),
                };
                println!("  {:<28} {verdict}", r.file);
            }
        }
        Command::Gradcheck { common } => {
            let cfg = common.resolve(Vec::new())?;
            let result = harness::cmd_gradcheck(&cfg);
            let text = std::fs::read_to_string(cfg.out_dir.join("gradcheck.txt")).unwrap_or_default();
            print!("{text}");
            result?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

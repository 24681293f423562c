//! Experiment driver.
//!
//! Every subcommand reads one config file, runs a single experiment family
//! and writes plot-ready CSV under `--out`. Reruns with the same seed are
//! byte-identical; `--threads` only changes wall time.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use cachemask::approx::{algorithm1_optimize_r_in, evaluate_scheme_1d};
use cachemask::domain::{CacheState, Location, Prior, Space, UserProfile};
use cachemask::io::{
    echo_config, emit_permutation_csv, emit_simulation_csv, emit_timeslot_csv, fmt_sig9,
    parse_config, run_timeslot_study, DensityMap, TimeSlotSeries,
};
use cachemask::lp::{build_hiding_lp_with_cap, build_maxmin_lp_with_cap, solve_lp};
use cachemask::sequence::{best_order, SequenceConfig};
use cachemask::sim::{
    aggregate, coverage_stats, run_trials_raw, FlexSpec, PriorSpec, ScenarioConfig,
};
use cachemask::{Error, Result};

#[derive(Parser)]
#[command(name = "cachemask", version, about = "Crowdsourced LBS query-obfuscation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config trial count.
    #[arg(long)]
    trials: Option<u64>,
    /// Worker threads; affects speed only, never results.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the exact max-min LP for one user against a fixed cache.
    SolveLp {
        #[command(flatten)]
        common: Common,
        /// Cached query locations, e.g. "0.3 0.7" (1D) or "0.3,0.4 0.7,0.2" (2D).
        #[arg(long, default_value = "")]
        cache: String,
        /// Solve the hiding-baseline variant instead.
        #[arg(long)]
        hiding: bool,
        /// Also dump the LP in plain text for external cross-checking.
        #[arg(long)]
        dump_lp: bool,
    },
    /// Optimize and evaluate the two-point scheme against a fixed cache.
    Approx1d {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "")]
        cache: String,
    },
    /// Run the sequential multi-user protocol (1D).
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the sequential multi-user protocol (2D).
    Simulate2d {
        #[command(flatten)]
        common: Common,
    },
    /// Exhaustive query-order search under common random numbers.
    Sequence {
        #[command(flatten)]
        common: Common,
    },
    /// Per-time-slot 2D study driven by a density map and user counts.
    Timeslot {
        #[command(flatten)]
        common: Common,
        /// Time-slot file: one "<label> <count>" pair per line.
        #[arg(long)]
        slots: PathBuf,
    },
    /// Coverage statistics: users until the covered set spans the grid.
    Coverage {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::io(&common.config, e))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_cache(spec: &str, space: Space) -> Result<CacheState> {
    let mut cache = CacheState::new();
    for tok in spec.split_whitespace() {
        let loc = match space {
            Space::Line => Location::Line(
                tok.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad cache location '{tok}'")))?,
            ),
            Space::Plane => {
                let (a, b) = tok
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("2D cache locations look like 'x,y', got '{tok}'")))?;
                Location::Plane(
                    a.parse().map_err(|_| Error::Config(format!("bad cache coordinate '{a}'")))?,
                    b.parse().map_err(|_| Error::Config(format!("bad cache coordinate '{b}'")))?,
                )
            }
        };
        cache.push(loc, cachemask::domain::PayloadToken(format!("poi@{tok}")))?;
    }
    Ok(cache)
}

/// Single flexibility for the one-user subcommands.
fn single_q(cfg: &ScenarioConfig) -> Result<f64> {
    match &cfg.flex {
        FlexSpec::Fixed(list) => Ok(list[0]),
        FlexSpec::TruncNormal { .. } => Err(Error::Config(
            "this subcommand needs a fixed flexibility; set `q = <value>` in the config".into(),
        )),
    }
}

fn profile_for(cfg: &ScenarioConfig, q: f64) -> Result<(UserProfile, Prior)> {
    let prior = cfg.build_prior()?;
    Ok((UserProfile::new(q, prior.clone())?, prior))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SolveLp { common, cache, hiding, dump_lp } => {
            let cfg = load_config(&common)?;
            let q = single_q(&cfg)?;
            let (profile, _) = profile_for(&cfg, q)?;
            let grid = cfg.grid()?;
            let cache = parse_cache(&cache, cfg.space)?;
            let problem = if hiding {
                build_hiding_lp_with_cap(&profile, &cache, &grid, cfg.lp_cap)?
            } else {
                build_maxmin_lp_with_cap(&profile, &cache, &grid, cfg.lp_cap)?
            };
            if dump_lp {
                let mut text = String::new();
                problem.write_lp_text(&mut text);
                let path = common.out.join("lp_dump.txt");
                std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                println!("wrote {}", path.display());
            }
            let sol = solve_lp(&problem)?;
            let csv = format!(
                "variant,q,value,iterations,dual_gap\n{},{},{},{},{}\n",
                if hiding { "hiding" } else { "always-query" },
                fmt_sig9(q),
                fmt_sig9(sol.value),
                sol.iterations,
                fmt_sig9(sol.dual_gap)
            );
            write_out(&common.out, "lp_solution.csv", &csv)?;
            println!(
                "lp value = {} ({} pivots, relative gap {:.2e})",
                sol.value, sol.iterations, sol.dual_gap
            );
            Ok(())
        }
        Command::Approx1d { common, cache } => {
            let cfg = load_config(&common)?;
            if cfg.space != Space::Line {
                return Err(Error::Config("approx-1d runs on 1D scenarios".into()));
            }
            let q = single_q(&cfg)?;
            let (profile, _) = profile_for(&cfg, q)?;
            let grid = cfg.grid()?;
            let cache = parse_cache(&cache, Space::Line)?;
            let (params, pi_scan) =
                algorithm1_optimize_r_in(&cache, &profile, cfg.epsilon, cfg.mode)?;
            let eval = evaluate_scheme_1d(&params, &cache, &profile, &grid, cfg.mode)?;
            let csv = format!(
                "q,r_in,r_out,pi_scan,pi_grid\n{},{},{},{},{}\n",
                fmt_sig9(q),
                fmt_sig9(params.r_in()),
                fmt_sig9(params.r_out()),
                fmt_sig9(pi_scan),
                fmt_sig9(eval.pi)
            );
            write_out(&common.out, "approx.csv", &csv)?;
            println!("r_in = {}, scan pi = {}, grid pi = {}", params.r_in(), pi_scan, eval.pi);
            Ok(())
        }
        Command::Simulate { common } => {
            let cfg = load_config(&common)?;
            if cfg.space != Space::Line {
                return Err(Error::Config("simulate runs 1D scenarios; use simulate-2d".into()));
            }
            simulate_and_emit(&cfg, &common)
        }
        Command::Simulate2d { common } => {
            let cfg = load_config(&common)?;
            if cfg.space != Space::Plane {
                return Err(Error::Config("simulate-2d needs dimension = 2".into()));
            }
            simulate_and_emit(&cfg, &common)
        }
        Command::Sequence { common } => {
            let cfg = load_config(&common)?;
            let FlexSpec::Fixed(list) = &cfg.flex else {
                return Err(Error::Config(
                    "sequence needs a fixed per-user flexibility list (`q = ...`)".into(),
                ));
            };
            let qs: Vec<f64> = if list.len() == 1 {
                vec![list[0]; cfg.users]
            } else {
                list.clone()
            };
            let prior = Arc::new(cfg.build_prior()?);
            let profiles: Result<Vec<UserProfile>> = qs
                .iter()
                .map(|q| UserProfile::with_shared_prior(*q, Arc::clone(&prior)))
                .collect();
            let seq_cfg = SequenceConfig {
                defense: cfg.defense,
                mode: cfg.mode,
                trials: cfg.trials,
                seed: cfg.seed,
                epsilon: cfg.epsilon,
                lp_cap: cfg.lp_cap,
            };
            let result = best_order(&profiles?, &seq_cfg)?;
            emit_permutation_csv(&result.table, &common.out.join("sequence.csv"))?;
            let order_1based: Vec<usize> = result.order.iter().map(|i| i + 1).collect();
            let summary = serde_json::json!({
                "best_order": order_1based,
                "total_pi": result.total,
                "ci_half": result.ci_half,
                "trials": cfg.trials,
                "seed": cfg.seed,
            });
            println!("{summary}");
            Ok(())
        }
        Command::Timeslot { common, slots } => {
            let cfg = load_config(&common)?;
            let PriorSpec::DensityFile(path) = &cfg.prior else {
                return Err(Error::Config("timeslot needs a `density = <file>` prior".into()));
            };
            let density = DensityMap::load(Path::new(path))?;
            let series = TimeSlotSeries::load(&slots)?;
            let rows = run_timeslot_study(&density, &series, &cfg, common.threads)?;
            emit_timeslot_csv(&rows, &common.out.join("timeslot.csv"))?;
            for (label, r) in &rows {
                println!("{label}: n={} mean_pi={}", r.users, r.average.mean);
            }
            Ok(())
        }
        Command::Coverage { common } => {
            let cfg = load_config(&common)?;
            let stats = coverage_stats(&cfg)?;
            let fmt_rank = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_else(|| "censored".into());
            let csv = format!(
                "trials,cutoff,cutoff_fraction,q1,median,q3,max_completed\n{},{},{},{},{},{},{}\n",
                stats.trials,
                stats.cutoff,
                fmt_sig9(stats.cutoff_fraction),
                fmt_rank(stats.q1),
                fmt_rank(stats.median),
                fmt_rank(stats.q3),
                fmt_rank(stats.max_completed),
            );
            write_out(&common.out, "coverage.csv", &csv)?;
            println!(
                "median n' = {}, cutoff fraction = {}",
                fmt_rank(stats.median),
                stats.cutoff_fraction
            );
            Ok(())
        }
    }
}

fn simulate_and_emit(cfg: &ScenarioConfig, common: &Common) -> Result<()> {
    let raw = run_trials_raw(cfg, common.threads)?;
    let result = aggregate(cfg, &raw);
    emit_simulation_csv(std::slice::from_ref(&result), &common.out.join("simulate.csv"))?;
    let echo = echo_config(cfg);
    write_out(&common.out, "config_echo.txt", &echo)?;
    println!(
        "defense={} n={} trials={} avg_pi={} ci={}",
        result.defense,
        result.users,
        result.trials,
        result.average.mean,
        result.average.ci_half
    );
    Ok(())
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use perpl::engine::{
    evaluate, learning_curve_csv, run_episode, train, ControllerKind, EvalOutcome, Policy,
    TrainSettings,
};
use perpl::metrics::{report, report_to_csv};
use perpl::rl::Checkpoint;
use perpl::rng::Rng;
use perpl::scenarios::{
    append_manifest, extremize, load_manifest, load_trajectory, penetration_platoon,
    synth_trajectory, write_trajectory_csv, ColumnMap, LeadTrajectory, ManifestEntry, Split,
    SynthKind,
};

use crate::config::{echo_resolved, ExperimentConfig};
use crate::error::CliError;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create output dir {}: {e}", out.display())))
}

fn load_policy_for(
    controller: ControllerKind,
    policy_path: Option<&Path>,
) -> Result<Option<Policy>, CliError> {
    match (controller, policy_path) {
        (ControllerKind::Linear, _) => Ok(None),
        (_, Some(path)) => {
            let ck = Checkpoint::load(path)?;
            Ok(Some(Policy::from_checkpoint(&ck)))
        }
        (c, None) => Err(CliError::Config(format!(
            "--controller={c} requires --policy <checkpoint>"
        ))),
    }
}

fn manifest_path(
    cfg: &ExperimentConfig,
    flag: Option<&Path>,
) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| {
            CliError::Config("no manifest: pass --manifest or set it in the config".into())
        })
}

fn load_split(
    cfg: &ExperimentConfig,
    manifest: &Path,
    split: Split,
) -> Result<Vec<LeadTrajectory>, CliError> {
    let entries = load_manifest(manifest)?;
    let mut trajectories = Vec::new();
    for e in entries.iter().filter(|e| e.split == split) {
        trajectories.push(load_trajectory(&e.path, &ColumnMap::default(), &cfg.sim)?);
    }
    if trajectories.is_empty() {
        return Err(CliError::Data(format!(
            "manifest {} lists no trajectories for split {split}",
            manifest.display()
        )));
    }
    Ok(trajectories)
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x}"))
}

fn summary_csv(controller: ControllerKind, split: &str, outcome: &EvalOutcome) -> String {
    let mut out = String::from(
        "controller,split,trajectories,mean_headway_rmse_s,mean_damping_ratio,mean_comfort,barrier_activation_pct,collisions\n",
    );
    let _ = writeln!(
        out,
        "{controller},{split},{},{},{},{},{},{}",
        outcome.per_traj.len(),
        na(outcome.mean_headway_rmse),
        na(outcome.mean_damping_ratio),
        outcome.mean_comfort,
        na(outcome.mean_barrier_pct),
        outcome.collisions
    );
    out
}

pub struct SimulateArgs {
    pub traj: PathBuf,
    pub policy: Option<PathBuf>,
    pub controller: ControllerKind,
    pub column_map: ColumnMap,
    pub out: PathBuf,
}

pub fn cmd_simulate(cfg: &ExperimentConfig, args: &SimulateArgs) -> Result<(), CliError> {
    cfg.validate()?;
    let policy = load_policy_for(args.controller, args.policy.as_deref())?;
    ensure_out_dir(&args.out)?;
    let lead = load_trajectory(&args.traj, &args.column_map, &cfg.sim)?;
    let platoon = cfg.platoon_spec(lead.speeds[0])?;
    let ctx = cfg.sim_context();
    let trace = run_episode(&ctx, &platoon, &lead, args.controller, policy.as_ref())?;
    let rep = report(&trace, &cfg.sim, cfg.comfort_alpha)?;
    fs::write(args.out.join("trace.csv"), trace.to_csv())?;
    fs::write(args.out.join("metrics.csv"), report_to_csv(&rep))?;
    echo_resolved(cfg, &args.out)?;
    Ok(())
}

pub struct TrainArgs {
    pub manifest: Option<PathBuf>,
    pub split: Split,
    pub controller: ControllerKind,
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn cmd_train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<(), CliError> {
    cfg.validate()?;
    if args.controller == ControllerKind::Linear {
        return Err(CliError::Config(
            "training requires --controller=rl or --controller=perpl".into(),
        ));
    }
    ensure_out_dir(&args.out)?;
    let manifest = manifest_path(cfg, args.manifest.as_deref())?;
    let trajectories = load_split(cfg, &manifest, args.split)?;
    let platoon = cfg.platoon_spec(trajectories[0].speeds[0])?;
    let resume = match &args.resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let ctx = cfg.sim_context();
    let settings = TrainSettings {
        iterations: cfg.train_iterations,
        seed: cfg.seed,
        controller: args.controller,
        residual_limit: cfg.residual_limit,
        checkpoint_every: cfg.checkpoint_every,
    };
    let out = args.out.clone();
    let mut periodic_err: Option<CliError> = None;
    let (ck, stats) = train(
        &ctx,
        &platoon,
        &trajectories,
        &cfg.hyper,
        &settings,
        resume.as_ref(),
        |s, periodic| {
            if let Some(ck) = periodic {
                let path = out.join(format!("checkpoint_iter{:05}.json", s.iteration + 1));
                if let Err(e) = ck.save(&path) {
                    periodic_err.get_or_insert(e.into());
                }
            }
        },
    )?;
    if let Some(e) = periodic_err {
        return Err(e);
    }
    ck.save(&args.out.join("checkpoint.json"))?;
    fs::write(args.out.join("learning_curve.csv"), learning_curve_csv(&stats))?;
    echo_resolved(cfg, &args.out)?;
    Ok(())
}

pub struct EvaluateArgs {
    pub manifest: Option<PathBuf>,
    pub split: Split,
    pub policy: Option<PathBuf>,
    pub controller: ControllerKind,
    pub out: PathBuf,
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    cfg.validate()?;
    let policy = load_policy_for(args.controller, args.policy.as_deref())?;
    ensure_out_dir(&args.out)?;
    let manifest = manifest_path(cfg, args.manifest.as_deref())?;
    let entries = load_manifest(&manifest)?;
    let paths: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == args.split).collect();
    let trajectories = load_split(cfg, &manifest, args.split)?;
    let platoon = cfg.platoon_spec(trajectories[0].speeds[0])?;
    let ctx = cfg.sim_context();
    let outcome = evaluate(
        &ctx,
        &platoon,
        &trajectories,
        args.controller,
        policy.as_ref(),
        cfg.comfort_alpha,
    )?;

    let mut per_traj = String::from(
        "index,path,headway_rmse_s,damping_ratio,comfort,barrier_pct,collision\n",
    );
    for (i, rep) in outcome.per_traj.iter().enumerate() {
        let _ = writeln!(
            per_traj,
            "{i},{},{},{},{},{},{}",
            paths[i].path.display(),
            na(rep.mean_headway_rmse),
            na(rep.mean_damping_ratio),
            rep.mean_comfort,
            na(rep.mean_barrier_pct),
            rep.collision as u8
        );
    }
    fs::write(args.out.join("per_trajectory.csv"), per_traj)?;
    fs::write(
        args.out.join("summary.csv"),
        summary_csv(args.controller, &args.split.to_string(), &outcome),
    )?;
    echo_resolved(cfg, &args.out)?;
    Ok(())
}

pub struct SweepArgs {
    pub rates: Vec<f64>,
    pub followers: usize,
    pub seeds: usize,
    pub controller: ControllerKind,
    pub policy: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn cmd_sweep(cfg: &ExperimentConfig, args: &SweepArgs) -> Result<(), CliError> {
    cfg.validate()?;
    if args.rates.is_empty() || args.seeds == 0 || args.followers == 0 {
        return Err(CliError::Config(
            "sweep needs at least one rate, one seed and one follower".into(),
        ));
    }
    if args.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CliError::Config(format!(
            "penetration rates must lie in [0, 1], got {:?}",
            args.rates
        )));
    }
    ensure_out_dir(&args.out)?;
    let policy = load_policy_for(args.controller, args.policy.as_deref())?;
    let ctx = cfg.sim_context();

    // one shared lead profile for the whole sweep
    let mut lead_rng = Rng::derive(cfg.seed, 0x51_EAD);
    let lead = synth_trajectory(SynthKind::BrakePulse, &cfg.synth, cfg.sim.dt, &mut lead_rng)?;

    let mut metrics_csv = String::from(
        "rate,seed,mean_headway_rmse_s,mean_damping_ratio,mean_comfort,barrier_pct,collision\n",
    );
    let mut summary_csv = String::from("rate,seeds,mean_damping_ratio,mean_headway_rmse_s\n");
    for (ri, &rate) in args.rates.iter().enumerate() {
        let mut damping_acc = 0.0;
        let mut damping_n = 0usize;
        let mut rmse_acc = 0.0;
        let mut rmse_n = 0usize;
        for s in 0..args.seeds {
            let mut prng = Rng::derive(cfg.seed, 0x5EED_0000 + (ri as u64) * 1009 + s as u64);
            let platoon =
                penetration_platoon(args.followers, rate, lead.speeds[0], &mut prng)?;
            let trace = run_episode(&ctx, &platoon, &lead, args.controller, policy.as_ref())?;
            let rep = report(&trace, &cfg.sim, cfg.comfort_alpha)?;
            let _ = writeln!(
                metrics_csv,
                "{rate},{s},{},{},{},{},{}",
                na(rep.mean_headway_rmse),
                na(rep.mean_damping_ratio),
                rep.mean_comfort,
                na(rep.mean_barrier_pct),
                rep.collision as u8
            );
            if let Some(d) = rep.mean_damping_ratio {
                damping_acc += d;
                damping_n += 1;
            }
            if let Some(r) = rep.mean_headway_rmse {
                rmse_acc += r;
                rmse_n += 1;
            }
            // speed field for heatmaps: rows = timestep, columns = vehicle
            let mut field = String::new();
            let header: Vec<String> =
                (0..trace.n_vehicles()).map(|v| format!("v{v}")).collect();
            field.push_str(&header.join(","));
            field.push('\n');
            for t in 0..trace.len() {
                let row: Vec<String> = (0..trace.n_vehicles())
                    .map(|v| format!("{}", trace.speed[v][t]))
                    .collect();
                field.push_str(&row.join(","));
                field.push('\n');
            }
            fs::write(
                args.out.join(format!("speeds_rate{rate:.2}_seed{s}.csv")),
                field,
            )?;
        }
        let _ = writeln!(
            summary_csv,
            "{rate},{},{},{}",
            args.seeds,
            if damping_n > 0 {
                format!("{}", damping_acc / damping_n as f64)
            } else {
                "NA".into()
            },
            if rmse_n > 0 {
                format!("{}", rmse_acc / rmse_n as f64)
            } else {
                "NA".into()
            },
        );
    }
    fs::write(args.out.join("sweep_metrics.csv"), metrics_csv)?;
    fs::write(args.out.join("sweep_summary.csv"), summary_csv)?;
    echo_resolved(cfg, &args.out)?;
    Ok(())
}

pub struct GenArgs {
    pub kind: String,
    pub count: usize,
    pub split: Split,
    pub extremize_gain: Option<f64>,
    pub cap_min: f64,
    pub cap_max: f64,
    pub out: PathBuf,
}

pub fn cmd_gen(cfg: &ExperimentConfig, args: &GenArgs) -> Result<(), CliError> {
    cfg.validate()?;
    if args.count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let mixed = [SynthKind::Sinusoid, SynthKind::BrakePulse];
    let kinds: Vec<SynthKind> = match args.kind.as_str() {
        "sinusoid" => vec![SynthKind::Sinusoid],
        "brake-pulse" => vec![SynthKind::BrakePulse],
        "stop-and-go" => vec![SynthKind::StopAndGo],
        "mixed" => mixed.to_vec(),
        other => {
            return Err(CliError::Config(format!(
                "unknown kind '{other}' (sinusoid, brake-pulse, stop-and-go or mixed)"
            )))
        }
    };
    ensure_out_dir(&args.out)?;
    let mut entries = Vec::new();
    for i in 0..args.count {
        let mut rng = Rng::derive(cfg.seed, 0x6E6_0000 + i as u64);
        let kind = kinds[i % kinds.len()];
        let traj = synth_trajectory(kind, &cfg.synth, cfg.sim.dt, &mut rng)?;
        traj.validate(&cfg.sim)?;
        let name = format!("traj_{i:03}_{}.csv", args.split);
        write_trajectory_csv(&traj, &args.out.join(&name))?;
        entries.push(ManifestEntry {
            path: args.out.join(&name),
            split: args.split,
        });
        if let Some(gain) = args.extremize_gain {
            let extreme = extremize(&traj, gain, args.cap_min, args.cap_max)?;
            extreme.validate(&cfg.sim)?;
            let name = format!("traj_{i:03}_extremized.csv");
            write_trajectory_csv(&extreme, &args.out.join(&name))?;
            entries.push(ManifestEntry {
                path: args.out.join(&name),
                split: Split::Extrapolation,
            });
        }
    }
    append_manifest(&args.out.join("manifest.csv"), &entries)?;
    echo_resolved(cfg, &args.out)?;
    Ok(())
}

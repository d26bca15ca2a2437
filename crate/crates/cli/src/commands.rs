use std::fs::{self, File};
use std::path::Path;

use anyhow::{bail, Context, Result};

use needle_core::em::{analyze, cube_grid, synthesize_grid};
use needle_core::harness::{
    plan_seed, plan_target, run_campaign, run_insertion, run_seed, write_campaign, write_plan, InsertionResult,
};
use needle_core::io::{
    error_rows, nominal_from_rows, read_grid_csv, read_rows, write_grid_csv, write_rows, PlanMetadata,
    TrajectoryRow,
};
use needle_core::planner::{planning_config, NominalTrajectory, Target};
use needle_core::scenario::{parse_scenario, Scenario};
use needle_core::seed::mix_seed;
use needle_core::Simulator;

use crate::{Cli, Command, EmEvalArgs, EmSynthArgs, RunArgs, TargetArgs, TrackArgs};

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut scenario = match &cli.scenario {
        Some(path) => parse_scenario(path).with_context(|| format!("loading scenario {}", path.display()))?,
        None => Scenario::phantom(),
    };
    if let Some(seed) = cli.seed {
        scenario = scenario.with_seed(seed);
    }
    let out = cli.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::Plan(args) => plan(&mut scenario, &args.target, out),
        Command::Track(args) => track(&scenario, &args, out),
        Command::Run(args) => single_run(&mut scenario, &args, out),
        Command::Campaign => campaign(&scenario, out),
        Command::EmEval(args) => em_eval(&args, out),
        Command::EmSynth(args) => em_synth(&scenario, &args, out),
    }
}

fn resolve_target(scenario: &mut Scenario, args: &TargetArgs) -> Result<Target> {
    if let Some(mode) = args.mode {
        scenario.mode = mode.into();
    }
    match (args.depth, args.offset) {
        (Some(depth), Some(offset)) => {
            let target = Target::new(scenario.sim.skin_x + depth, offset);
            if !(depth > 0.0 && target.x < scenario.sim.tissue_end()) {
                bail!("depth {depth} mm is outside the tissue");
            }
            Ok(target)
        }
        _ => scenario.targets.get(args.target).copied().with_context(|| {
            format!("target index {} out of range (scenario has {})", args.target, scenario.targets.len())
        }),
    }
}

fn plan_for(scenario: &Scenario, target: Target, index: usize) -> Result<NominalTrajectory> {
    plan_target(scenario, target, plan_seed(scenario.seed, index))
        .with_context(|| format!("planning toward ({}, {})", target.x, target.y))
}

fn report_plan(nominal: &NominalTrajectory) {
    println!(
        "plan: target ({:.2}, {:.2}) mm, final tip error {:.4} mm, {} flips, cost {:.4}, {} iterations{}",
        nominal.target.x,
        nominal.target.y,
        nominal.final_tip_error(),
        nominal.flip_count(),
        nominal.cost.total(),
        nominal.iterations,
        if nominal.converged { "" } else { " (not converged)" },
    );
}

fn plan(scenario: &mut Scenario, args: &TargetArgs, out: &Path) -> Result<()> {
    let target = resolve_target(scenario, args)?;
    let nominal = plan_for(scenario, target, args.target)?;
    write_plan(out, "plan", scenario, &nominal)?;
    report_plan(&nominal);
    println!("wrote {}", out.join("plan.csv").display());
    Ok(())
}

fn load_plan(scenario: &Scenario, csv_path: &Path) -> Result<NominalTrajectory> {
    let meta_path = csv_path.with_extension("json");
    let meta: PlanMetadata = serde_json::from_str(
        &fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .with_context(|| format!("parsing {}", meta_path.display()))?;
    let rows: Vec<TrajectoryRow> = read_rows(File::open(csv_path).with_context(|| format!("opening {}", csv_path.display()))?)
        .with_context(|| format!("parsing {}", csv_path.display()))?;
    if rows.len() < 2 {
        bail!("{} holds no controls", csv_path.display());
    }
    let sim = Simulator::new(planning_config(&scenario.sim, meta.mode, &meta.settings))?;
    Ok(nominal_from_rows(&sim, &rows, meta.mode, meta.target, &meta.settings)?)
}

fn report_run(r: &InsertionResult) {
    let open = r.open_loop_error.map_or_else(|| "failed".to_string(), |e| format!("{e:.4} mm"));
    println!(
        "run: targeting error {:.4} mm (open loop {open}), measured {:.4} mm, {} flips, guide travel {:.3} mm",
        r.targeting_error, r.measured_error, r.flip_count, r.guide_travel,
    );
}

fn write_run(out: &Path, r: &InsertionResult) -> Result<()> {
    let path = out.join("run.csv");
    write_rows(File::create(&path)?, &r.trajectory)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn track(scenario: &Scenario, args: &TrackArgs, out: &Path) -> Result<()> {
    let mut scenario = scenario.clone();
    let nominal = load_plan(&scenario, &args.plan)?;
    scenario.mode = nominal.mode;
    let r = run_insertion(&scenario, &nominal, run_seed(scenario.seed, args.target, args.rep)).context("closed-loop run")?;
    report_run(&r);
    write_run(out, &r)
}

fn single_run(scenario: &mut Scenario, args: &RunArgs, out: &Path) -> Result<()> {
    let target = resolve_target(scenario, &args.target)?;
    let nominal = plan_for(scenario, target, args.target.target)?;
    report_plan(&nominal);
    write_plan(out, "plan", scenario, &nominal)?;
    let seed = run_seed(scenario.seed, args.target.target, args.rep);
    let r = run_insertion(scenario, &nominal, seed).context("closed-loop run")?;
    report_run(&r);
    write_run(out, &r)
}

fn campaign(scenario: &Scenario, out: &Path) -> Result<()> {
    let result = run_campaign(scenario);
    write_campaign(out, scenario, &result)?;
    println!("group,depth_mm,offset_mm,runs,failures,mean_error,sd_error,closed_better,mean_flips");
    for s in &result.summary {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        println!(
            "{},{},{},{},{},{:.4},{:.4},{},{:.2}",
            s.group,
            opt(s.depth_mm),
            opt(s.offset_mm),
            s.runs,
            s.failures,
            s.mean_error,
            s.sd_error,
            s.closed_better,
            s.mean_flips
        );
    }
    println!("wrote {}", out.join("summary.csv").display());
    Ok(())
}

fn em_eval(args: &EmEvalArgs, out: &Path) -> Result<()> {
    let file = File::open(&args.grid).with_context(|| format!("opening {}", args.grid.display()))?;
    let dataset = read_grid_csv(file).with_context(|| format!("reading {}", args.grid.display()))?;
    let report = analyze(&dataset, args.breakpoint, args.percentile)?;
    write_rows(File::create(out.join("em_errors.csv"))?, &error_rows(&dataset, &report))?;
    fs::write(out.join("em_report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "points {}, samples/point {}, rmse {:.4} mm, jitter {:.4} mm, indicator p{} {:.4}",
        dataset.points().len(),
        dataset.samples_per_point(),
        report.rmse,
        report.jitter,
        args.percentile,
        report.threshold
    );
    match &report.fit {
        Some(f) => println!(
            "fit: {:.4} ± {:.4} mm at or below {}, {:.4}·I + {:.4} above",
            f.ideal_mean, f.ideal_sd, f.breakpoint, f.slope, f.intercept
        ),
        None => println!("fit: skipped, indicators do not straddle {}", args.breakpoint),
    }
    println!("wrote {}", out.join("em_errors.csv").display());
    Ok(())
}

fn em_synth(scenario: &Scenario, args: &EmSynthArgs, out: &Path) -> Result<()> {
    if args.points == 0 || args.samples == 0 {
        bail!("--points and --samples must be positive");
    }
    let mut model = scenario.sensor.with_seed(mix_seed(scenario.seed, scenario.sensor.seed));
    if let Some(indicator) = args.indicator {
        model = model.with_indicator(indicator);
    }
    model.validate()?;
    let dataset = synthesize_grid(&model, &cube_grid(args.points, args.side), args.samples)?;
    let path = out.join("grid.csv");
    write_grid_csv(File::create(&path)?, &dataset)?;
    println!(
        "synthesized {} points × {} samples at indicator {}",
        dataset.points().len(),
        args.samples,
        model.indicator
    );
    println!("wrote {}", path.display());
    Ok(())
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chiral_chaos::analysis::{chirality, symmetry};
use chiral_chaos::analytic::{
    achievable_region, delta_intensity_steady, region_boundary, steady_state,
};
use chiral_chaos::integrator::integrate;
use chiral_chaos::lyapunov::{max_lyapunov, max_lyapunov_periodic};
use chiral_chaos::model::{Port, StateVector};
use chiral_chaos::pipeline::{classify_point, Control};
use chiral_chaos::sensing::{build_window, SecondAxis, Window};
use chiral_chaos::sweep::{
    assemble_phase_diagram, metrics_along, run_sweep_persisted, write_metrics_csv,
    write_phase_diagram_csv, Axis, PointResult, SweepGrid, SweepTable, TaskKind,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::{CliError, Common};

/// Files written and per-point failure counts of one command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failed: usize,
    pub total: usize,
}

impl Outcome {
    fn add_table(&mut self, table: &SweepTable, stem: &Path) {
        self.failed += table.failures();
        self.total += table.rows.len();
        self.files.push(with_ext(stem, "csv"));
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_json(
    path: PathBuf,
    value: &serde_json::Value,
    outcome: &mut Outcome,
) -> Result<(), CliError> {
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
    outcome.files.push(path);
    Ok(())
}

fn grid(cfg: &RunConfig) -> Result<SweepGrid, CliError> {
    if cfg.axes.is_empty() {
        return Err(CliError::Config(
            "this command needs at least one entry in \"axes\"".into(),
        ));
    }
    Ok(SweepGrid::new(cfg.axes.clone(), cfg.params, cfg.drive)?)
}

fn port_stem(common: &Common, name: &str, port: Port) -> PathBuf {
    common.out.join(format!("{name}_port{port}"))
}

fn sweep(
    cfg: &RunConfig,
    common: &Common,
    grid: &SweepGrid,
    task: &TaskKind,
    stem: &Path,
    outcome: &mut Outcome,
) -> Result<SweepTable, CliError> {
    let table = run_sweep_persisted(grid, task, &cfg.settings, common.workers, stem)?;
    outcome.add_table(&table, stem);
    Ok(table)
}

pub fn simulate(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let traj = integrate(&cfg.params, &cfg.drive, &cfg.settings.integration)?;
    let mut text = String::from("tau,i_a,i_b,q,p\n");
    for k in 0..traj.len() {
        writeln!(
            text,
            "{:?},{:?},{:?},{:?},{:?}",
            traj.taus[k], traj.i_a[k], traj.i_b[k], traj.q[k], traj.p[k]
        )
        .expect("writing to a String");
    }
    let path = common.out.join("trajectory.csv");
    std::fs::write(&path, text)?;
    Ok(Outcome {
        files: vec![path],
        failed: 0,
        total: 1,
    })
}

pub fn classify(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    if cfg.axes.is_empty() {
        let run = classify_point(&cfg.params, &cfg.drive, &cfg.settings)?;
        let value = json!({
            "port": cfg.drive.port.index(),
            "label": run.phase.label,
            "lambda_max": run.phase.lambda_max,
            "lambda_converged": run.lambda_converged,
            "n_clusters": run.phase.n_clusters,
            "flatness": run.phase.flatness,
            "diagnostic": run.phase.diagnostic,
            "i_a_max": run.i_a_max,
        });
        println!("{} {}", run.phase.label, run.phase.lambda_max);
        write_json(common.out.join("classify.json"), &value, &mut outcome)?;
    } else {
        let g = grid(cfg)?;
        let stem = port_stem(common, "classify", cfg.drive.port);
        sweep(cfg, common, &g, &TaskKind::Classify, &stem, &mut outcome)?;
    }
    Ok(outcome)
}

/// Classify tables for both ports, shared by `phase-diagram` and `metrics`.
fn both_ports(
    cfg: &RunConfig,
    common: &Common,
    outcome: &mut Outcome,
) -> Result<[SweepTable; 2], CliError> {
    let g = grid(cfg)?;
    let run = |port: Port, outcome: &mut Outcome| {
        sweep(
            cfg,
            common,
            &g.with_port(port),
            &TaskKind::Classify,
            &port_stem(common, "phase", port),
            outcome,
        )
    };
    Ok([run(Port::Port1, outcome)?, run(Port::Port2, outcome)?])
}

/// Axis along which S and C compare the two λ arrays: the φ axis when
/// there is one.
fn metric_axis(axes: &[Axis]) -> usize {
    axes.iter()
        .position(|a| matches!(a.control, Control::Phi | Control::PhiOverPi))
        .unwrap_or(0)
}

fn write_metrics(
    cfg: &RunConfig,
    common: &Common,
    tables: &[SweepTable; 2],
    outcome: &mut Outcome,
) -> Result<(), CliError> {
    let diagram = assemble_phase_diagram(&tables[0], &tables[1])?;
    if cfg.axes.len() == 2 {
        let along = metric_axis(&cfg.axes);
        let rows = metrics_along(&diagram, along)?;
        let path = common.out.join("metrics.csv");
        write_metrics_csv(&rows, cfg.axes[1 - along].control, &path)?;
        outcome.files.push(path);
        let value = json!({
            "along": cfg.axes[along].control,
            "fixed": cfg.axes[1 - along].control,
            "rows": rows.iter().map(|r| json!({"fixed_value": r.fixed_value, "S": r.s, "C": r.c})).collect::<Vec<_>>(),
        });
        write_json(common.out.join("metrics.json"), &value, outcome)?;
    } else {
        let l1 = diagram.lambdas(Port::Port1);
        let l2 = diagram.lambdas(Port::Port2);
        if l1.iter().chain(&l2).any(|x| x.is_nan()) {
            return Err(CliError::Config(
                "metrics need every grid point to succeed".into(),
            ));
        }
        let value = json!({"S": symmetry(&l1, &l2)?, "C": chirality(&l1, &l2)?});
        write_json(common.out.join("metrics.json"), &value, outcome)?;
    }
    Ok(())
}

pub fn phase_diagram(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let tables = both_ports(cfg, common, &mut outcome)?;
    let diagram = assemble_phase_diagram(&tables[0], &tables[1])?;
    let path = common.out.join("phase_diagram.csv");
    write_phase_diagram_csv(&diagram, &path)?;
    outcome.files.push(path);
    let value = json!({
        "complete": diagram.complete,
        "dual_chaos": diagram.dual_chaos.iter().map(|&i| &diagram.cells[i].coords).collect::<Vec<_>>(),
        "failures": diagram.cells.iter().filter_map(|c| c.failure.as_ref().map(|f| json!({"coords": c.coords, "reason": f}))).collect::<Vec<_>>(),
    });
    write_json(common.out.join("phase_diagram.json"), &value, &mut outcome)?;
    if diagram.complete {
        write_metrics(cfg, common, &tables, &mut outcome)?;
    }
    Ok(outcome)
}

pub fn metrics(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    if let Some(m) = &cfg.metrics {
        let value = json!({
            "S": symmetry(&m.lambda_port1, &m.lambda_port2)?,
            "C": chirality(&m.lambda_port1, &m.lambda_port2)?,
        });
        write_json(common.out.join("metrics.json"), &value, &mut outcome)?;
        return Ok(outcome);
    }
    let tables = both_ports(cfg, common, &mut outcome)?;
    write_metrics(cfg, common, &tables, &mut outcome)?;
    Ok(outcome)
}

pub fn bifurcation(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let stem = port_stem(common, "bifurcation", cfg.drive.port);
    sweep(
        cfg,
        common,
        &grid(cfg)?,
        &TaskKind::Bifurcation,
        &stem,
        &mut outcome,
    )?;
    Ok(outcome)
}

pub fn lyapunov(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    if cfg.axes.is_empty() {
        let est = if cfg.drive.is_autonomous() {
            max_lyapunov(&cfg.params, &cfg.drive, &cfg.settings.lyapunov)?
        } else {
            max_lyapunov_periodic(
                &cfg.params,
                &cfg.drive,
                &cfg.settings.lyapunov,
                &StateVector::zero(),
                0.0,
            )?
        };
        println!("{}", est.lambda_max);
        let value = json!({
            "port": cfg.drive.port.index(),
            "lambda_max": est.lambda_max,
            "converged": est.converged,
            "t_transient": est.window.0,
            "t_average": est.window.1,
            "history": est.history,
        });
        write_json(common.out.join("lyapunov.json"), &value, &mut outcome)?;
    } else {
        let stem = port_stem(common, "lyapunov", cfg.drive.port);
        sweep(
            cfg,
            common,
            &grid(cfg)?,
            &TaskKind::Lyapunov,
            &stem,
            &mut outcome,
        )?;
    }
    Ok(outcome)
}

pub fn steady(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let (control, values) = match cfg.axes.as_slice() {
        [] => (None, vec![f64::NAN]),
        [a] => (Some(a.control), a.values()),
        _ => return Err(CliError::Config("steady takes at most one axis".into())),
    };
    let eps = cfg.drive.eps;
    let mut text = format!(
        "{},i_a_port1,i_a_port2,delta_i_a,error\n",
        control.map_or("point", Control::as_str)
    );
    let mut failed = 0;
    for &v in &values {
        let (p, _) = match control {
            Some(c) => c.applied(&cfg.params, &cfg.drive, v),
            None => (cfg.params, cfg.drive),
        };
        let row = steady_state(&p, Port::Port1, eps).and_then(|s1| {
            let s2 = steady_state(&p, Port::Port2, eps)?;
            Ok((s1.i_a, s2.i_a, delta_intensity_steady(&p, eps)?))
        });
        let v = if v.is_nan() { 0.0 } else { v };
        match row {
            Ok((a, b, d)) => writeln!(text, "{v:?},{a:?},{b:?},{d:?},"),
            Err(e) => {
                failed += 1;
                writeln!(text, "{v:?},,,,{e}")
            }
        }
        .expect("writing to a String");
    }
    let path = common.out.join("steady.csv");
    std::fs::write(&path, text)?;
    Ok(Outcome {
        files: vec![path],
        failed,
        total: values.len(),
    })
}

pub fn tipmap(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let tip = &cfg.tipmap;
    let region = achievable_region(tip)?;
    let path = common.out.join("tipmap_region.csv");
    region.write_csv(&path)?;
    outcome.files.push(path);
    let boundary = region.boundary(tip.boundary_bins);
    let refined = region_boundary(&tip.refined(4), tip.boundary_bins)?;
    let diameter = region.diameter();
    let value = json!({
        "n_points": region.points.len(),
        "diameter": diameter,
        "boundary": boundary,
        "refinement_shift": boundary.hausdorff(&refined) / diameter,
        "min_paired_separation": region.min_paired_separation(),
        "min_cross_separation": region.min_cross_separation(),
    });
    write_json(common.out.join("tipmap.json"), &value, &mut outcome)?;
    outcome.total = region.points.len();
    Ok(outcome)
}

fn window_json(w: &Window) -> serde_json::Value {
    json!({
        "control": w.control,
        "crit_port1": w.crit_port1,
        "crit_port2": w.crit_port2,
        "half_width": w.half_width,
        "position": w.position,
        "working_point": w.working_point,
        "degenerate": w.is_degenerate(),
    })
}

pub fn window(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let spec = cfg
        .window
        .ok_or_else(|| CliError::Config("window needs a \"window\" section".into()))?;
    let mut outcome = Outcome::default();
    if cfg.axes.is_empty() {
        let w = build_window(&cfg.params, &cfg.drive, &spec, &cfg.settings)?;
        println!("D = {} P = {}", w.half_width, w.position);
        write_json(
            common.out.join("window.json"),
            &window_json(&w),
            &mut outcome,
        )?;
    } else {
        let stem = common.out.join("window");
        sweep(
            cfg,
            common,
            &grid(cfg)?,
            &TaskKind::Window { spec },
            &stem,
            &mut outcome,
        )?;
    }
    Ok(outcome)
}

pub fn sense(cfg: &RunConfig, common: &Common) -> Result<Outcome, CliError> {
    let s = cfg
        .sensing
        .as_ref()
        .ok_or_else(|| CliError::Config("sense needs a \"sensing\" section".into()))?;
    if s.n_theta == 0 || s.axis_count == 0 {
        return Err(CliError::Config(
            "sensing grids need n_theta >= 1 and axis_count >= 1".into(),
        ));
    }
    let window = match (&s.fixed_window, &cfg.window) {
        (Some(f), _) => {
            Window::from_criticals(f.control, f.crit_port1, f.crit_port2, f.working_point)
        }
        (None, Some(spec)) => build_window(&cfg.params, &cfg.drive, spec, &s.config.settings)?,
        (None, None) => {
            return Err(CliError::Config(
                "sense needs either sensing.fixed_window or a \"window\" section".into(),
            ))
        }
    };
    let n = s.n_theta as f64;
    let axes = vec![
        Axis {
            control: Control::Theta,
            min: 0.0,
            max: 2.0 * std::f64::consts::PI * (n - 1.0) / n,
            count: s.n_theta,
        },
        Axis {
            control: match s.second_axis {
                SecondAxis::DEps => Control::DEps,
                SecondAxis::DOmega => Control::DOmega,
            },
            min: s.axis_min,
            max: s.axis_max,
            count: s.axis_count,
        },
    ];
    let mut drive = cfg.drive;
    drive.d_eps = s.d_eps;
    drive.d_omega = s.d_omega;
    let g = SweepGrid::new(axes, cfg.params, drive)?;
    let task = TaskKind::Sensing {
        window,
        config: s.config,
    };
    let mut outcome = Outcome::default();
    let stem = common.out.join("sense");
    let table = run_sweep_persisted(&g, &task, &s.config.settings, common.workers, &stem)?;
    outcome.add_table(&table, &stem);

    let ok: Vec<(f64, bool, bool)> = table
        .rows
        .iter()
        .filter_map(|r| match &r.result {
            Ok(PointResult::Sensing {
                port2_success,
                dual_success,
                ..
            }) => Some((r.coords[1], *port2_success, *dual_success)),
            _ => None,
        })
        .collect();
    let rate = |pick: &dyn Fn(&(f64, bool, bool)) -> bool, of: &[&(f64, bool, bool)]| {
        if of.is_empty() {
            f64::NAN
        } else {
            of.iter().filter(|x| pick(x)).count() as f64 / of.len() as f64
        }
    };
    let all: Vec<&(f64, bool, bool)> = ok.iter().collect();
    let per_value: Vec<serde_json::Value> = g.axes[1]
        .values()
        .iter()
        .map(|&v| {
            let sub: Vec<&(f64, bool, bool)> = ok.iter().filter(|x| x.0 == v).collect();
            json!({
                "value": v,
                "single_port_rate": rate(&|x| x.1, &sub),
                "dual_port_rate": rate(&|x| x.2, &sub),
            })
        })
        .collect();
    let value = json!({
        "window": window_json(&window),
        "working_point": window.working_point,
        "second_axis": s.second_axis,
        "single_port_rate": rate(&|x| x.1, &all),
        "dual_port_rate": rate(&|x| x.2, &all),
        "by_second_axis": per_value,
    });
    write_json(common.out.join("sense.json"), &value, &mut outcome)?;
    Ok(outcome)
}

//! Parameter grids, the parallel sweep engine and its on-disk result store.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{chirality, extract_extrema, symmetry, Phase};
use crate::error::{Error, Result};
use crate::model::{DriveSpec, Port, StateVector, SystemParams};
use crate::pipeline::{linspace, simulate_and_classify, Control, RunSettings};
use crate::sensing::{
    baselines, build_window, run_ports, Baseline, SensingConfig, Window, WindowSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub control: Control,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub params: SystemParams,
    #[serde(default)]
    pub drive: DriveSpec,
}

impl SweepGrid {
    pub fn new(axes: Vec<Axis>, params: SystemParams, drive: DriveSpec) -> Result<Self> {
        let g = Self {
            axes,
            params,
            drive,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(Error::GridMismatch(format!(
                "a sweep needs 1 or 2 axes, got {}",
                self.axes.len()
            )));
        }
        for a in &self.axes {
            if a.count == 0 || !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::GridMismatch(format!(
                    "axis {} needs count >= 1 and finite bounds",
                    a.control
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of every grid point in row-major order (last axis fastest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        match values.as_slice() {
            [x] => x.iter().map(|&v| vec![v]).collect(),
            [x, y] => x
                .iter()
                .flat_map(|&a| y.iter().map(move |&b| vec![a, b]))
                .collect(),
            _ => vec![],
        }
    }

    /// Parameters and drive at one grid point.
    pub fn at(&self, coords: &[f64]) -> (SystemParams, DriveSpec) {
        let (mut p, mut d) = (self.params, self.drive);
        for (axis, &v) in self.axes.iter().zip(coords) {
            axis.control.apply(&mut p, &mut d, v);
        }
        (p, d)
    }

    pub fn with_port(&self, port: Port) -> Self {
        Self {
            drive: self.drive.with_port(port),
            ..self.clone()
        }
    }

    /// Same axes and base values apart from the pumped port.
    fn same_shape(&self, other: &SweepGrid) -> bool {
        self.axes == other.axes
            && self.params == other.params
            && DriveSpec {
                port: Port::Port1,
                ..self.drive
            } == DriveSpec {
                port: Port::Port1,
                ..other.drive
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    /// λ_max plus phase label for the grid's pumped port.
    Classify,
    /// λ_max only (same run as Classify, smaller output).
    Lyapunov,
    /// Refined maxima of q for a one-axis grid.
    Bifurcation,
    /// Port-wise critical points at each grid point.
    Window { spec: WindowSpec },
    /// Signal trials; grid axes move θ, δε or δω around the window's
    /// working point.
    Sensing {
        window: Window,
        config: SensingConfig,
    },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Classify => "classify",
            TaskKind::Lyapunov => "lyapunov",
            TaskKind::Bifurcation => "bifurcation",
            TaskKind::Window { .. } => "window",
            TaskKind::Sensing { .. } => "sensing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PointResult {
    Classify {
        lambda_max: f64,
        label: Phase,
        n_clusters: usize,
        i_a_max: f64,
        converged: bool,
    },
    Lyapunov {
        lambda_max: f64,
        converged: bool,
    },
    Bifurcation {
        extrema: Vec<f64>,
    },
    Window {
        crit_port1: f64,
        crit_port2: f64,
        half_width: f64,
        position: f64,
    },
    Sensing {
        port1_success: bool,
        port2_success: bool,
        dual_success: bool,
        delta_i_a_1: f64,
        delta_i_a_2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub coords: Vec<f64>,
    pub result: std::result::Result<PointResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub grid: SweepGrid,
    pub task: TaskKind,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }

    /// λ_max per row (NaN for failed rows or tasks without λ).
    pub fn lambdas(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match &r.result {
                Ok(PointResult::Classify { lambda_max, .. })
                | Ok(PointResult::Lyapunov { lambda_max, .. }) => *lambda_max,
                _ => f64::NAN,
            })
            .collect()
    }
}

/// Everything a sweep's output depends on; its hash keys the result store.
#[derive(Debug, Clone, Serialize)]
struct SweepIdentity<'a> {
    version: &'static str,
    grid: &'a SweepGrid,
    task: &'a TaskKind,
    settings: &'a RunSettings,
}

pub fn grid_hash(grid: &SweepGrid, task: &TaskKind, settings: &RunSettings) -> Result<String> {
    let id = SweepIdentity {
        version: env!("CARGO_PKG_VERSION"),
        grid,
        task,
        settings,
    };
    let bytes = serde_json::to_vec(&id)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

struct Prepared {
    bases: Option<[Baseline; 2]>,
}

fn prepare(grid: &SweepGrid, task: &TaskKind) -> Result<Prepared> {
    let bases = match task {
        TaskKind::Sensing { window, config } => {
            Some(baselines(&grid.params, &grid.drive, window, config)?)
        }
        _ => None,
    };
    Ok(Prepared { bases })
}

fn run_point(
    grid: &SweepGrid,
    task: &TaskKind,
    settings: &RunSettings,
    prep: &Prepared,
    coords: &[f64],
) -> Result<PointResult> {
    let (params, drive) = grid.at(coords);
    match task {
        TaskKind::Classify | TaskKind::Lyapunov | TaskKind::Bifurcation => {
            let keep = matches!(task, TaskKind::Bifurcation);
            let run =
                simulate_and_classify(&params, &drive, settings, &StateVector::zero(), 0.0, keep)?;
            Ok(match task {
                TaskKind::Classify => PointResult::Classify {
                    lambda_max: run.phase.lambda_max,
                    label: run.phase.label,
                    n_clusters: run.phase.n_clusters,
                    i_a_max: run.i_a_max,
                    converged: run.lambda_converged,
                },
                TaskKind::Lyapunov => PointResult::Lyapunov {
                    lambda_max: run.phase.lambda_max,
                    converged: run.lambda_converged,
                },
                _ => PointResult::Bifurcation {
                    extrema: extract_extrema(run.trajectory.as_ref().expect("trajectory kept"))?,
                },
            })
        }
        TaskKind::Window { spec } => {
            let w = build_window(&params, &drive, spec, settings)?;
            Ok(PointResult::Window {
                crit_port1: w.crit_port1,
                crit_port2: w.crit_port2,
                half_width: w.half_width,
                position: w.position,
            })
        }
        TaskKind::Sensing { window, config } => {
            let bases = prep.bases.as_ref().expect("baselines prepared");
            let signal = crate::sensing::SignalSpec {
                d_eps: drive.d_eps,
                d_omega: drive.d_omega,
                theta: drive.theta,
            };
            let base_drive = DriveSpec {
                d_eps: 0.0,
                ..drive
            };
            let out = run_ports(&params, &base_drive, window, bases, &signal, config)?;
            Ok(PointResult::Sensing {
                port1_success: out.port1.success,
                port2_success: out.port2.success,
                dual_success: out.success(crate::sensing::Protocol::DualPort),
                delta_i_a_1: out.port1.delta_i_a,
                delta_i_a_2: out.port2.delta_i_a,
            })
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Run every grid point on `workers` threads. Per-point failures are kept in
/// their rows; only setup failures abort the sweep.
pub fn run_sweep(
    grid: &SweepGrid,
    task: &TaskKind,
    settings: &RunSettings,
    workers: usize,
) -> Result<SweepTable> {
    run_sweep_inner(grid, task, settings, workers, &BTreeMap::new(), |_| Ok(()))
}

fn run_sweep_inner(
    grid: &SweepGrid,
    task: &TaskKind,
    settings: &RunSettings,
    workers: usize,
    done: &BTreeMap<usize, SweepRow>,
    on_row: impl Fn(&SweepRow) -> Result<()> + Sync,
) -> Result<SweepTable> {
    grid.validate()?;
    settings.validate()?;
    if matches!(task, TaskKind::Bifurcation) && grid.axes.len() != 1 {
        return Err(Error::GridMismatch(
            "bifurcation sweeps take exactly one axis".into(),
        ));
    }
    let points = grid.points();
    let todo: Vec<usize> = (0..points.len())
        .filter(|i| !done.contains_key(i))
        .collect();
    let prep = if todo.is_empty() {
        Prepared { bases: None }
    } else {
        prepare(grid, task)?
    };
    let fresh: Vec<SweepRow> = pool(workers)?.install(|| {
        todo.par_iter()
            .map(|&i| {
                let row = SweepRow {
                    index: i,
                    coords: points[i].clone(),
                    result: run_point(grid, task, settings, &prep, &points[i])
                        .map_err(|e| e.to_string()),
                };
                on_row(&row)?;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut all: BTreeMap<usize, SweepRow> = done.clone();
    all.extend(fresh.into_iter().map(|r| (r.index, r)));
    Ok(SweepTable {
        grid: grid.clone(),
        task: task.clone(),
        rows: all.into_values().collect(),
    })
}

/// Manifest written next to a persisted sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software_version: String,
    pub task: String,
    pub grid_hash: String,
    pub grid: SweepGrid,
    pub settings: RunSettings,
    pub n_points: usize,
    pub n_failed: usize,
    pub csv: String,
}

/// Output locations derived from a stem such as `out/phase_port1`.
#[derive(Debug, Clone)]
pub struct SweepPaths {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub rows: PathBuf,
}

impl SweepPaths {
    pub fn from_stem(stem: &Path) -> Self {
        let with = |ext: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        Self {
            csv: with(".csv"),
            manifest: with(".manifest.json"),
            rows: with(".rows.jsonl"),
        }
    }
}

fn load_done(paths: &SweepPaths, hash: &str) -> BTreeMap<usize, SweepRow> {
    let same = fs::read_to_string(&paths.manifest)
        .ok()
        .and_then(|s| serde_json::from_str::<Manifest>(&s).ok())
        .is_some_and(|m| m.grid_hash == hash);
    let partial_hash = fs::read_to_string(paths.rows.with_extension("hash")).ok();
    if !same && partial_hash.as_deref() != Some(hash) {
        return BTreeMap::new();
    }
    let Ok(f) = File::open(&paths.rows) else {
        return BTreeMap::new();
    };
    BufReader::new(f)
        .lines()
        .map_while(|l| l.ok())
        // a torn last line from an interrupted run is simply recomputed
        .filter_map(|l| serde_json::from_str::<SweepRow>(&l).ok())
        .map(|r| (r.index, r))
        .collect()
}

/// Run a sweep with results persisted under `stem`. Rows already stored for
/// the same grid hash are reused rather than recomputed.
pub fn run_sweep_persisted(
    grid: &SweepGrid,
    task: &TaskKind,
    settings: &RunSettings,
    workers: usize,
    stem: &Path,
) -> Result<SweepTable> {
    let hash = grid_hash(grid, task, settings)?;
    let paths = SweepPaths::from_stem(stem);
    if let Some(dir) = paths.csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let done = load_done(&paths, &hash);
    let hash_path = paths.rows.with_extension("hash");
    if done.is_empty() {
        File::create(&paths.rows)?;
        fs::write(&hash_path, &hash)?;
    } else {
        // rewrite the store so it holds only parseable rows
        let mut f = File::create(&paths.rows)?;
        for row in done.values() {
            writeln!(f, "{}", serde_json::to_string(row)?)?;
        }
    }
    let store = Mutex::new(OpenOptions::new().append(true).open(&paths.rows)?);
    let table = run_sweep_inner(grid, task, settings, workers, &done, |row| {
        let line = serde_json::to_string(row)?;
        let mut f = store
            .lock()
            .map_err(|_| Error::Io("result store poisoned".into()))?;
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    })?;
    write_table_csv(&table, &paths.csv)?;
    let manifest = Manifest {
        software_version: env!("CARGO_PKG_VERSION").into(),
        task: task.name().into(),
        grid_hash: hash,
        grid: grid.clone(),
        settings: *settings,
        n_points: table.rows.len(),
        n_failed: table.failures(),
        csv: paths
            .csv
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    fs::write(&paths.manifest, serde_json::to_string_pretty(&manifest)?)?;
    Ok(table)
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn coords_cols(row: &SweepRow) -> [String; 2] {
    [
        row.coords.first().map(|v| fmt(*v)).unwrap_or_default(),
        row.coords.get(1).map(|v| fmt(*v)).unwrap_or_default(),
    ]
}

/// Write a table using the CSV schema of its task kind. Failed rows keep
/// their coordinates and carry the message in the trailing `error` column.
pub fn write_table_csv(table: &SweepTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let port = table.grid.drive.port.to_string();
    match &table.task {
        TaskKind::Classify | TaskKind::Lyapunov => {
            w.write_record([
                "axis1",
                "axis2",
                "port",
                "lambda_max",
                "label",
                "n_clusters",
                "error",
            ])?;
            for r in &table.rows {
                let [a1, a2] = coords_cols(r);
                let rec = match &r.result {
                    Ok(PointResult::Classify {
                        lambda_max,
                        label,
                        n_clusters,
                        ..
                    }) => [
                        a1,
                        a2,
                        port.clone(),
                        fmt(*lambda_max),
                        label.to_string(),
                        n_clusters.to_string(),
                        String::new(),
                    ],
                    Ok(PointResult::Lyapunov { lambda_max, .. }) => [
                        a1,
                        a2,
                        port.clone(),
                        fmt(*lambda_max),
                        String::new(),
                        String::new(),
                        String::new(),
                    ],
                    Ok(other) => return Err(Error::Io(format!("unexpected row {other:?}"))),
                    Err(e) => [
                        a1,
                        a2,
                        port.clone(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.clone(),
                    ],
                };
                w.write_record(rec)?;
            }
        }
        TaskKind::Bifurcation => {
            w.write_record(["control", "extremum", "error"])?;
            for r in &table.rows {
                let c = fmt(r.coords[0]);
                match &r.result {
                    Ok(PointResult::Bifurcation { extrema }) => {
                        for e in extrema {
                            w.write_record([c.clone(), fmt(*e), String::new()])?;
                        }
                    }
                    Ok(other) => return Err(Error::Io(format!("unexpected row {other:?}"))),
                    Err(e) => w.write_record([c, String::new(), e.clone()])?,
                }
            }
        }
        TaskKind::Window { .. } => {
            w.write_record([
                "axis1",
                "axis2",
                "crit_port1",
                "crit_port2",
                "half_width",
                "position",
                "error",
            ])?;
            for r in &table.rows {
                let [a1, a2] = coords_cols(r);
                let rec = match &r.result {
                    Ok(PointResult::Window {
                        crit_port1,
                        crit_port2,
                        half_width,
                        position,
                    }) => [
                        a1,
                        a2,
                        fmt(*crit_port1),
                        fmt(*crit_port2),
                        fmt(*half_width),
                        fmt(*position),
                        String::new(),
                    ],
                    Ok(other) => return Err(Error::Io(format!("unexpected row {other:?}"))),
                    Err(e) => [
                        a1,
                        a2,
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.clone(),
                    ],
                };
                w.write_record(rec)?;
            }
        }
        TaskKind::Sensing { .. } => {
            w.write_record([
                "theta",
                "second_axis",
                "port1_success",
                "port2_success",
                "dual_success",
                "delta_i_a_1",
                "delta_i_a_2",
                "error",
            ])?;
            for r in &table.rows {
                let [a1, a2] = coords_cols(r);
                let rec = match &r.result {
                    Ok(PointResult::Sensing {
                        port1_success,
                        port2_success,
                        dual_success,
                        delta_i_a_1,
                        delta_i_a_2,
                    }) => [
                        a1,
                        a2,
                        port1_success.to_string(),
                        port2_success.to_string(),
                        dual_success.to_string(),
                        fmt(*delta_i_a_1),
                        fmt(*delta_i_a_2),
                        String::new(),
                    ],
                    Ok(other) => return Err(Error::Io(format!("unexpected row {other:?}"))),
                    Err(e) => [
                        a1,
                        a2,
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.clone(),
                    ],
                };
                w.write_record(rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub coords: Vec<f64>,
    /// (label, λ_max) per port; `None` where the point failed.
    pub port1: Option<(Phase, f64)>,
    pub port2: Option<(Phase, f64)>,
    pub failure: Option<String>,
}

impl PhaseCell {
    pub fn dual_chaos(&self) -> bool {
        matches!(
            (self.port1, self.port2),
            (Some((Phase::Chaos, _)), Some((Phase::Chaos, _)))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub grid: SweepGrid,
    pub cells: Vec<PhaseCell>,
    /// Indices of cells chaotic under both ports.
    pub dual_chaos: Vec<usize>,
    pub complete: bool,
}

impl PhaseDiagram {
    pub fn lambdas(&self, port: Port) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| {
                match port {
                    Port::Port1 => c.port1,
                    Port::Port2 => c.port2,
                }
                .map_or(f64::NAN, |x| x.1)
            })
            .collect()
    }
}

type CellResult = (Option<(Phase, f64)>, Option<String>);

fn classify_cells(table: &SweepTable) -> Result<Vec<CellResult>> {
    table
        .rows
        .iter()
        .map(|r| match &r.result {
            Ok(PointResult::Classify {
                lambda_max, label, ..
            }) => Ok((Some((*label, *lambda_max)), None)),
            Ok(other) => Err(Error::GridMismatch(format!(
                "phase diagrams need classify results, got {other:?}"
            ))),
            Err(e) => Ok((None, Some(e.clone()))),
        })
        .collect()
}

/// Merge the classify tables of the two ports into one diagram.
pub fn assemble_phase_diagram(port1: &SweepTable, port2: &SweepTable) -> Result<PhaseDiagram> {
    if !port1.grid.same_shape(&port2.grid) || port1.rows.len() != port2.rows.len() {
        return Err(Error::GridMismatch(
            "port tables were computed on different grids".into(),
        ));
    }
    if port1.grid.drive.port != Port::Port1 || port2.grid.drive.port != Port::Port2 {
        return Err(Error::GridMismatch(
            "expected a port-1 table and a port-2 table".into(),
        ));
    }
    let c1 = classify_cells(port1)?;
    let c2 = classify_cells(port2)?;
    let cells: Vec<PhaseCell> = port1
        .rows
        .iter()
        .zip(c1.into_iter().zip(c2))
        .map(|(row, ((l1, e1), (l2, e2)))| PhaseCell {
            coords: row.coords.clone(),
            port1: l1,
            port2: l2,
            failure: match (e1, e2) {
                (None, None) => None,
                (a, b) => Some(
                    [
                        a.map(|e| format!("port 1: {e}")),
                        b.map(|e| format!("port 2: {e}")),
                    ]
                    .into_iter()
                    .flatten()
                    .collect::<Vec<_>>()
                    .join("; "),
                ),
            },
        })
        .collect();
    let dual_chaos = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.dual_chaos())
        .map(|(i, _)| i)
        .collect();
    let complete = cells.iter().all(|c| c.failure.is_none());
    Ok(PhaseDiagram {
        grid: port1.grid.clone(),
        cells,
        dual_chaos,
        complete,
    })
}

pub fn write_phase_diagram_csv(diagram: &PhaseDiagram, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "axis1",
        "axis2",
        "port",
        "lambda_max",
        "label",
        "n_clusters",
    ])?;
    for c in &diagram.cells {
        let a1 = c.coords.first().map(|v| fmt(*v)).unwrap_or_default();
        let a2 = c.coords.get(1).map(|v| fmt(*v)).unwrap_or_default();
        for (port, val) in [("1", c.port1), ("2", c.port2)] {
            let (lam, lab) = val.map_or((String::new(), "failed".to_string()), |(l, x)| {
                (fmt(x), l.to_string())
            });
            w.write_record([
                a1.clone(),
                a2.clone(),
                port.to_string(),
                lam,
                lab,
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// S and C of the two ports' λ arrays along one axis, one entry per value of
/// the other axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub fixed_value: f64,
    pub s: f64,
    pub c: f64,
}

/// For a two-axis diagram, compute S and C over `along` (0 or 1) for each
/// value of the other axis. Rows with failed points are skipped.
pub fn metrics_along(diagram: &PhaseDiagram, along: usize) -> Result<Vec<MetricRow>> {
    let axes = &diagram.grid.axes;
    if axes.len() != 2 || along > 1 {
        return Err(Error::GridMismatch(
            "metrics need a two-axis diagram and along in {0, 1}".into(),
        ));
    }
    let (n0, n1) = (axes[0].count, axes[1].count);
    let fixed_axis = 1 - along;
    let fixed_vals = axes[fixed_axis].values();
    let l1 = diagram.lambdas(Port::Port1);
    let l2 = diagram.lambdas(Port::Port2);
    let mut out = Vec::new();
    for (k, &fv) in fixed_vals.iter().enumerate() {
        let idx: Vec<usize> = if along == 1 {
            (0..n1).map(|j| k * n1 + j).collect()
        } else {
            (0..n0).map(|i| i * n1 + k).collect()
        };
        let a: Vec<f64> = idx.iter().map(|&i| l1[i]).collect();
        let b: Vec<f64> = idx.iter().map(|&i| l2[i]).collect();
        if a.iter().chain(&b).any(|x| x.is_nan()) {
            continue;
        }
        out.push(MetricRow {
            fixed_value: fv,
            s: symmetry(&a, &b)?,
            c: chirality(&a, &b)?,
        });
    }
    Ok(out)
}

pub fn write_metrics_csv(rows: &[MetricRow], fixed: Control, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let head = if fixed == Control::XiMag {
        "xi"
    } else {
        fixed.as_str()
    };
    w.write_record([head, "S", "C"])?;
    for r in rows {
        w.write_record([fmt(r.fixed_value), fmt(r.s), fmt(r.c)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weak_grid() -> SweepGrid {
        SweepGrid::new(
            vec![Axis {
                control: Control::PhiOverPi,
                min: -0.5,
                max: 0.5,
                count: 3,
            }],
            SystemParams::default(),
            DriveSpec::pump(Port::Port1, 5.0),
        )
        .unwrap()
    }

    fn quick() -> RunSettings {
        let mut s = RunSettings::fast();
        s.integration.t_transient = 50.0;
        s.integration.t_record = 20.0 * 2.0 * std::f64::consts::PI;
        s.lyapunov.t_average = 20.0 * 2.0 * std::f64::consts::PI;
        s
    }

    #[test]
    fn row_major_order() {
        let g = SweepGrid::new(
            vec![
                Axis {
                    control: Control::XiMag,
                    min: 1.0,
                    max: 2.0,
                    count: 2,
                },
                Axis {
                    control: Control::Eps,
                    min: 0.0,
                    max: 2.0,
                    count: 3,
                },
            ],
            SystemParams::default(),
            DriveSpec::default(),
        )
        .unwrap();
        assert_eq!(g.len(), 6);
        let pts = g.points();
        assert_eq!(pts[0], vec![1.0, 0.0]);
        assert_eq!(pts[1], vec![1.0, 1.0]);
        assert_eq!(pts[3], vec![2.0, 0.0]);
        let (p, d) = g.at(&pts[5]);
        assert_eq!((p.xi_mag, d.eps), (2.0, 2.0));
    }

    #[test]
    fn grid_validation() {
        assert!(SweepGrid::new(vec![], SystemParams::default(), DriveSpec::default()).is_err());
        let zero = Axis {
            control: Control::Eps,
            min: 0.0,
            max: 1.0,
            count: 0,
        };
        assert!(SweepGrid::new(vec![zero], SystemParams::default(), DriveSpec::default()).is_err());
    }

    #[test]
    fn single_point_equals_direct_call() {
        let g = SweepGrid::new(
            vec![Axis {
                control: Control::Eps,
                min: 5.0,
                max: 5.0,
                count: 1,
            }],
            SystemParams::default(),
            DriveSpec::pump(Port::Port1, 0.0),
        )
        .unwrap();
        let s = quick();
        let t = run_sweep(&g, &TaskKind::Classify, &s, 1).unwrap();
        let direct = crate::pipeline::classify_point(
            &SystemParams::default(),
            &DriveSpec::pump(Port::Port1, 5.0),
            &s,
        )
        .unwrap();
        match &t.rows[0].result {
            Ok(PointResult::Classify {
                lambda_max, label, ..
            }) => {
                assert_eq!(*lambda_max, direct.phase.lambda_max);
                assert_eq!(*label, direct.phase.label);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn per_point_failure_recorded_in_row() {
        let g = SweepGrid::new(
            vec![Axis {
                control: Control::JCoupling,
                min: -1.0,
                max: 1.0,
                count: 2,
            }],
            SystemParams::default(),
            DriveSpec::pump(Port::Port1, 5.0),
        )
        .unwrap();
        let t = run_sweep(&g, &TaskKind::Lyapunov, &quick(), 2).unwrap();
        // a negative coupling is rejected by validation, the other point runs
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.failures(), 1);
        assert!(t.rows[0].result.is_err());
        assert!(t.rows[1].result.is_ok());
    }

    #[test]
    fn persisted_sweep_resumes_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("phase");
        let g = weak_grid();
        let s = quick();
        let a = run_sweep_persisted(&g, &TaskKind::Classify, &s, 1, &stem).unwrap();
        let csv1 = fs::read(dir.path().join("phase.csv")).unwrap();
        let b = run_sweep_persisted(&g, &TaskKind::Classify, &s, 3, &stem).unwrap();
        assert_eq!(a, b);
        assert_eq!(csv1, fs::read(dir.path().join("phase.csv")).unwrap());
        let m: Manifest = serde_json::from_str(
            &fs::read_to_string(dir.path().join("phase.manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(m.n_points, 3);
        assert_eq!(m.grid_hash, grid_hash(&g, &TaskKind::Classify, &s).unwrap());
    }

    #[test]
    fn stored_rows_are_not_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("lyap");
        let g = weak_grid();
        let s = quick();
        run_sweep_persisted(&g, &TaskKind::Lyapunov, &s, 1, &stem).unwrap();
        let rows_path = dir.path().join("lyap.rows.jsonl");
        let mut rows: Vec<SweepRow> = fs::read_to_string(&rows_path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        rows.sort_by_key(|r| r.index);
        rows[1].result = Ok(PointResult::Lyapunov {
            lambda_max: 42.0,
            converged: true,
        });
        // keep rows 0 and 1, drop row 2 as if the run had been interrupted
        let kept: String = rows[..2]
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        fs::write(&rows_path, kept + "{\"index\": 2, \"coo").unwrap();
        let t = run_sweep_persisted(&g, &TaskKind::Lyapunov, &s, 2, &stem).unwrap();
        assert_eq!(t.lambdas()[1], 42.0);
        assert!(t.lambdas()[2].is_finite() && t.lambdas()[2] != 42.0);
    }

    #[test]
    fn changed_config_starts_fresh() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("x");
        let g = weak_grid();
        let s = quick();
        run_sweep_persisted(&g, &TaskKind::Lyapunov, &s, 1, &stem).unwrap();
        let mut s2 = s;
        s2.lyapunov.t_average *= 2.0;
        assert_ne!(
            grid_hash(&g, &TaskKind::Lyapunov, &s).unwrap(),
            grid_hash(&g, &TaskKind::Lyapunov, &s2).unwrap()
        );
        let t = run_sweep_persisted(&g, &TaskKind::Lyapunov, &s2, 1, &stem).unwrap();
        let direct = run_sweep(&g, &TaskKind::Lyapunov, &s2, 1).unwrap();
        assert_eq!(t.rows, direct.rows);
    }

    #[test]
    fn all_ordered_stub_has_no_dual_chaos() {
        let g = weak_grid();
        let t1 = run_sweep(&g, &TaskKind::Classify, &quick(), 1).unwrap();
        let t2 = run_sweep(&g.with_port(Port::Port2), &TaskKind::Classify, &quick(), 1).unwrap();
        let d = assemble_phase_diagram(&t1, &t2).unwrap();
        assert!(d.complete);
        assert!(d.dual_chaos.is_empty());
        assert!(assemble_phase_diagram(&t1, &t1).is_err());
        let mut other = g.with_port(Port::Port2);
        other.axes[0].count = 4;
        let t3 = run_sweep(&other, &TaskKind::Classify, &quick(), 1).unwrap();
        assert!(matches!(
            assemble_phase_diagram(&t1, &t3),
            Err(Error::GridMismatch(_))
        ));
    }
}

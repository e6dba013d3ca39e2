//! Suite execution, metric aggregation and run-directory persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plot::render_run;
use super::suite::{TaskSuite, TaskTemplate};
use super::{plan, Models, PlannerConfig, PlanningInstance, RunResult, Selector};
use crate::dynamics::{evaluate_rollout, DynamicsConfig, DynamicsKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub planner: PlannerConfig,
    pub dynamics: Vec<DynamicsKind>,
    pub selectors: Vec<Selector>,
    /// Cap on SVG plots written per run; `None` plots every instance.
    pub max_plots: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            dynamics: vec![DynamicsKind::Di, DynamicsKind::Uni],
            selectors: vec![Selector::Heuristic, Selector::Random],
            max_plots: None,
        }
    }
}

/// Environment label by maze size.
pub fn env_label(size: usize) -> String {
    match size {
        5 => "U".into(),
        7 => "M".into(),
        9 => "L".into(),
        n => format!("{n}x{n}"),
    }
}

/// One planner run on one suite instance. `error` is set when planning
/// aborted before producing a result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub env: String,
    pub size: usize,
    pub template: TaskTemplate,
    pub instance: PlanningInstance,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

impl InstanceRecord {
    pub fn dynamics(&self) -> Option<DynamicsKind> {
        self.result.as_ref().map(|r| r.dynamics)
    }

    pub fn success(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.success)
    }

    pub fn file_stem(&self, dynamics: DynamicsKind, selector: Selector) -> String {
        let sel = match selector {
            Selector::Heuristic => "heuristic",
            Selector::Random => "random",
        };
        format!("{}-{}-{}", self.instance.name, dynamics.to_string().to_lowercase(), sel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env: String,
    #[serde(rename = "dyn")]
    pub dyn_: String,
    pub selector: Selector,
    /// Percent.
    pub success_rate: f64,
    /// Mean robustness over successful runs; NaN when none succeeded.
    #[serde(with = "crate::float_serde")]
    pub mean_rho: f64,
    pub mean_total_s: f64,
    pub mean_select_s: f64,
    pub n: usize,
}

/// Plans every (instance, dynamics, selector) combination in parallel.
/// Output order follows the nesting instance → dynamics → selector.
pub fn run_suite(suite: &TaskSuite, models: Models<'_>, cfg: &BenchConfig) -> Vec<(DynamicsKind, Selector, InstanceRecord)> {
    let jobs: Vec<(usize, DynamicsKind, Selector)> = (0..suite.instances.len())
        .flat_map(|i| cfg.dynamics.iter().flat_map(move |&d| cfg.selectors.iter().map(move |&s| (i, d, s))))
        .collect();
    jobs.into_par_iter()
        .map(|(i, d, s)| {
            let si = &suite.instances[i];
            let planner = PlannerConfig {
                selector: s,
                dynamics: DynamicsConfig { model: crate::dynamics::DynamicsModel { kind: d, ..cfg.planner.dynamics.model }, ..cfg.planner.dynamics },
                ..cfg.planner.clone()
            };
            let (result, error) = match plan(&si.instance, models, &planner) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let rec = InstanceRecord {
                env: env_label(si.size),
                size: si.size,
                template: si.template,
                instance: si.instance.clone(),
                result,
                error,
            };
            (d, s, rec)
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { f64::NAN } else { s / n as f64 }
}

/// Metrics per (env, dynamics, selector). Aborted runs count as failures
/// and are left out of the timing means.
pub fn aggregate(runs: &[(DynamicsKind, Selector, InstanceRecord)]) -> Vec<MetricsRow> {
    let env_rank = |e: &str| ["U", "M", "L"].iter().position(|x| *x == e).unwrap_or(3);
    let mut groups: BTreeMap<(usize, String, String, Selector), Vec<&InstanceRecord>> = BTreeMap::new();
    for (d, s, r) in runs {
        let sel_key = *s;
        groups.entry((env_rank(&r.env), r.env.clone(), d.to_string(), sel_key)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((_, env, dyn_, selector), recs)| {
            let n = recs.len();
            let ok = recs.iter().filter(|r| r.success()).count();
            let results = || recs.iter().filter_map(|r| r.result.as_ref());
            MetricsRow {
                env,
                dyn_,
                selector,
                success_rate: 100.0 * ok as f64 / n as f64,
                mean_rho: mean(results().filter(|r| r.success).map(|r| r.rho)),
                mean_total_s: mean(results().map(|r| r.timing.total_planning_s)),
                mean_select_s: mean(results().map(|r| r.timing.heuristic_selection_s)),
                n,
            }
        })
        .collect()
}

pub fn run_benchmark(
    suite: &TaskSuite,
    models: Models<'_>,
    cfg: &BenchConfig,
) -> (Vec<(DynamicsKind, Selector, InstanceRecord)>, Vec<MetricsRow>) {
    let runs = run_suite(suite, models, cfg);
    let rows = aggregate(&runs);
    (runs, rows)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn per_instance(&self) -> PathBuf {
        self.root.join("per_instance")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["env", "dyn", "selector", "success_rate", "mean_rho", "mean_total_s", "mean_select_s", "n"])?;
    for r in rows {
        let sel = serde_json::to_value(r.selector)?;
        w.write_record([
            r.env.clone(),
            r.dyn_.clone(),
            sel.as_str().unwrap_or_default().to_string(),
            format!("{:.2}", r.success_rate),
            format!("{:.6}", r.mean_rho),
            format!("{:.6}", r.mean_total_s),
            format!("{:.6}", r.mean_select_s),
            r.n.to_string(),
        ])?;
    }
    w.flush()
}

/// Writes `config.json`, `metrics.csv`, `metrics.json`,
/// `per_instance/*.json` and `plots/*.svg` under `root`.
pub fn save_run(
    root: &Path,
    config: &impl Serialize,
    runs: &[(DynamicsKind, Selector, InstanceRecord)],
    rows: &[MetricsRow],
    max_plots: Option<usize>,
) -> std::io::Result<RunDir> {
    let dir = RunDir { root: root.to_path_buf() };
    std::fs::create_dir_all(dir.per_instance())?;
    std::fs::create_dir_all(dir.plots())?;
    std::fs::write(dir.config(), serde_json::to_string_pretty(config)?)?;
    write_metrics_csv(rows, &dir.metrics_csv())?;
    std::fs::write(dir.metrics_json(), serde_json::to_string_pretty(rows)?)?;
    let mut plotted = 0;
    for (d, s, rec) in runs {
        let stem = rec.file_stem(*d, *s);
        std::fs::write(dir.per_instance().join(format!("{stem}.json")), serde_json::to_string(rec)?)?;
        if max_plots.is_none_or(|m| plotted < m) {
            if let Some(r) = &rec.result {
                std::fs::write(dir.plots().join(format!("{stem}.svg")), render_run(&rec.instance, r))?;
                plotted += 1;
            }
        }
    }
    Ok(dir)
}

pub fn load_record(path: &Path) -> std::io::Result<InstanceRecord> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub rho: f64,
    pub collision: bool,
    pub success: bool,
    /// The recomputed outcome agrees with the recorded one.
    pub consistent: bool,
}

/// Re-evaluates a persisted run from its stored executed trajectory.
pub fn verify_record(rec: &InstanceRecord) -> Option<Verification> {
    let r = rec.result.as_ref()?;
    let exec = r.executed.as_ref()?;
    let phi = rec.instance.parse_formula().ok()?;
    let ev = evaluate_rollout(exec, &phi, &rec.instance.map);
    let consistent = ev.success == r.success && ev.rho.to_bits() == r.rho.to_bits();
    Some(Verification { rho: ev.rho, collision: ev.collision, success: ev.success, consistent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::suite::{build_suite, SuiteSpec};

    #[test]
    fn trivial_suite_is_all_success_and_reverifies() {
        let spec = SuiteSpec { templates: vec![TaskTemplate::Trivial], seeds: 2, instances_per_seed: 2, ..SuiteSpec::default() };
        let suite = build_suite(&spec).unwrap();
        let cfg = BenchConfig::default();
        let (runs, rows) = run_benchmark(&suite, Models::default(), &cfg);
        assert_eq!(runs.len(), suite.instances.len() * 4);
        assert_eq!(rows.len(), 3 * 2 * 2);
        assert!(rows.iter().all(|r| r.success_rate == 100.0), "{rows:?}");
        assert_eq!(rows[0].env, "U");

        let dir = tempfile::tempdir().unwrap();
        let rd = save_run(dir.path(), &cfg, &runs, &rows, Some(3)).unwrap();
        let csv = std::fs::read_to_string(rd.metrics_csv()).unwrap();
        assert!(csv.starts_with("env,dyn,selector,success_rate,mean_rho,mean_total_s,mean_select_s,n\n"));
        assert_eq!(std::fs::read_dir(rd.plots()).unwrap().count(), 3);
        for entry in std::fs::read_dir(rd.per_instance()).unwrap() {
            let rec = load_record(&entry.unwrap().path()).unwrap();
            let v = verify_record(&rec).unwrap();
            assert!(v.success && v.rho > 0.0 && !v.collision && v.consistent);
        }
    }
}

//! Report files and plot-ready CSV exports.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::{HarnessError, Method, PointRecord, RunReport};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CREDO_OUTPUT_DIR";

pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const POINTS_FILE: &str = "points.csv";

#[derive(Serialize)]
struct AggregateFile<'a> {
    config: &'a super::ExperimentConfig,
    n_rows: usize,
    failures: &'a [super::RepetitionFailure],
    aggregates: &'a [super::MethodAggregate],
}

fn write_rows<T: Serialize>(path: &Path, header_comment: Option<&str>, rows: &[T]) -> Result<(), HarnessError> {
    let mut file = File::create(path)?;
    if let Some(comment) = header_comment {
        writeln!(file, "# {comment}")?;
    }
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `aggregate.json` and `points.csv` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let metrics = dir.join(METRICS_FILE);
    write_rows(&metrics, None, &report.rows)?;
    let aggregate = dir.join(AGGREGATE_FILE);
    let body = AggregateFile {
        config: &report.config,
        n_rows: report.rows.len(),
        failures: &report.failures,
        aggregates: &report.aggregates,
    };
    fs::write(&aggregate, serde_json::to_string_pretty(&body)? + "\n")?;
    let points = dir.join(POINTS_FILE);
    write_rows(&points, None, &report.points)?;
    Ok(vec![metrics, aggregate, points])
}

/// Reads a `points.csv` written by [`write_report`].
pub fn load_points(path: &Path) -> Result<Vec<PointRecord>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let rows = reader.deserialize().collect::<Result<Vec<PointRecord>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Intervals,
    Decomposition,
    GammaProfile,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Intervals, PlotKind::Decomposition, PlotKind::GammaProfile];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Intervals => "intervals",
            PlotKind::Decomposition => "decomposition",
            PlotKind::GammaProfile => "gamma-profile",
        }
    }

    pub fn file_name(self) -> String {
        format!("plot_{}.csv", self.name().replace('-', "_"))
    }
}

impl FromStr for PlotKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::UnknownPlotKind(s.to_string()))
    }
}

#[derive(Serialize)]
struct LongRow {
    x: f64,
    series: String,
    value: f64,
}

#[derive(Serialize)]
struct GammaRow {
    x: f64,
    gamma: f64,
    scarcity: Option<f64>,
}

fn sorted_by_x(points: &[PointRecord], method: Method) -> Vec<&PointRecord> {
    let mut out: Vec<&PointRecord> = points.iter().filter(|p| p.method == method).collect();
    out.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.row.cmp(&b.row)));
    out
}

fn methods_in(points: &[PointRecord]) -> Vec<Method> {
    let mut m: Vec<Method> = points.iter().map(|p| p.method).collect();
    m.sort();
    m.dedup();
    m
}

/// Writes one plot CSV of `kind` into `dir` and returns its path.
///
/// `intervals` and `decomposition` are long format `(x, series, value)` with
/// series named `<method>.<quantity>`; `gamma-profile` is `(x, gamma,
/// scarcity)` for the adaptive method, or the fixed method when it is absent.
pub fn emit_plot_data(points: &[PointRecord], kind: PlotKind, dir: &Path) -> Result<PathBuf, HarnessError> {
    if points.is_empty() {
        return Err(HarnessError::NoPoints);
    }
    fs::create_dir_all(dir)?;
    let path = dir.join(kind.file_name());
    let methods = methods_in(points);
    match kind {
        PlotKind::Intervals => {
            let mut rows = Vec::new();
            for &m in &methods {
                for p in sorted_by_x(points, m) {
                    for (q, value) in [("lower", p.lower), ("upper", p.upper), ("y", p.y)] {
                        rows.push(LongRow {
                            x: p.x,
                            series: format!("{m}.{q}"),
                            value,
                        });
                    }
                }
            }
            rows.sort_by(|a, b| a.x.total_cmp(&b.x));
            write_rows(&path, Some("schema: x,series,value; series = <method>.{lower,upper,y}"), &rows)?;
        }
        PlotKind::Decomposition => {
            let mut rows = Vec::new();
            for &m in methods.iter().filter(|m| **m != Method::Cqr) {
                for p in sorted_by_x(points, m) {
                    let (Some(a), Some(e), Some(s)) = (p.aleatoric, p.epistemic, p.slack) else {
                        continue;
                    };
                    for (q, value) in [("aleatoric", a), ("epistemic", e), ("slack", s), ("total", p.width())] {
                        rows.push(LongRow {
                            x: p.x,
                            series: format!("{m}.{q}"),
                            value,
                        });
                    }
                }
            }
            rows.sort_by(|a, b| a.x.total_cmp(&b.x));
            write_rows(
                &path,
                Some("schema: x,series,value; series = <method>.{aleatoric,epistemic,slack,total}"),
                &rows,
            )?;
        }
        PlotKind::GammaProfile => {
            let method = [Method::CredoAdaptive, Method::Credo]
                .into_iter()
                .find(|m| methods.contains(m))
                .ok_or(HarnessError::NoPoints)?;
            let rows: Vec<GammaRow> = sorted_by_x(points, method)
                .into_iter()
                .filter_map(|p| {
                    p.gamma.map(|gamma| GammaRow {
                        x: p.x,
                        gamma,
                        scarcity: p.scarcity,
                    })
                })
                .collect();
            write_rows(&path, Some(&format!("schema: x,gamma,scarcity; method = {method}")), &rows)?;
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, BackendConfig, DataSource, ExperimentConfig};
    use crate::posterior::{BasisSpec, NigPrior};

    fn report() -> RunReport {
        run_experiment(&ExperimentConfig {
            data: DataSource::Scenario { id: 2, n: 300 },
            backend: BackendConfig::ConjugateBlr {
                prior: NigPrior::default(),
                n_draws: 50,
                basis: BasisSpec::Linear,
            },
            repetitions: 2,
            ..ExperimentConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let files = write_report(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let points = load_points(&dir.path().join(POINTS_FILE)).unwrap();
        assert_eq!(points, r.points);
        let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), 1 + 6);
        assert!(metrics.starts_with("repetition,seed,method,amc,aco,smis,ilr,tau_hat,m"));
    }

    #[test]
    fn plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        for kind in PlotKind::ALL {
            let path = emit_plot_data(&r.points, kind, dir.path()).unwrap();
            let text = fs::read_to_string(path).unwrap();
            assert!(text.starts_with("# schema: "));
        }
        let gamma = fs::read_to_string(dir.path().join("plot_gamma_profile.csv")).unwrap();
        assert_eq!(gamma.lines().nth(1), Some("x,gamma,scarcity"));
        assert_eq!(gamma.lines().count(), 2 + 60);
        assert!("scatter".parse::<PlotKind>().is_err());
        assert!(matches!(emit_plot_data(&[], PlotKind::Intervals, dir.path()), Err(HarnessError::NoPoints)));
    }
}

//! Per-iteration metrics, batch aggregation and the CSV formats.
//!
//! Run files hold one row per (run, iteration):
//!
//! ```text
//! # master_seed=<u64>
//! iteration,regret,cum_regret,mse,max_var,mean_distance,run_id,algorithm,fidelity_mode
//! ```
//!
//! Aggregate files hold one row per iteration with the mean and population
//! standard deviation of every metric across runs. Floats are written with
//! 17 significant digits. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::algorithms::{Algorithm, FidelityMode};
use crate::error::{Error, Result};

pub const RUN_HEADER: &str =
    "iteration,regret,cum_regret,mse,max_var,mean_distance,run_id,algorithm,fidelity_mode";
pub const AGGREGATE_HEADER: &str = "iteration,regret_mean,regret_std,cum_regret_mean,cum_regret_std,mse_mean,mse_std,max_var_mean,max_var_std,mean_distance_mean,mean_distance_std,runs,algorithm,fidelity_mode";

/// An algorithm together with its fidelity mode (none for the baseline).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Series {
    pub algorithm: Algorithm,
    pub fidelity: Option<FidelityMode>,
}

impl Series {
    pub fn new(algorithm: Algorithm, fidelity: FidelityMode) -> Self {
        Self {
            algorithm,
            fidelity: algorithm.learns().then_some(fidelity),
        }
    }

    /// The five series of a full comparison.
    pub fn comparison() -> Vec<Series> {
        let mut out = Vec::new();
        for algorithm in [Algorithm::Smlc, Algorithm::Dmlc] {
            for fidelity in [FidelityMode::Multi, FidelityMode::Single] {
                out.push(Series::new(algorithm, fidelity));
            }
        }
        out.push(Series::new(Algorithm::Baseline, FidelityMode::Multi));
        out
    }

    pub fn fidelity_label(&self) -> &'static str {
        self.fidelity.map_or("none", |f| f.as_str())
    }

    /// File stem, e.g. `smlc_multi` or `baseline`.
    pub fn label(&self) -> String {
        match self.fidelity {
            Some(f) => format!("{}_{}", self.algorithm, f),
            None => self.algorithm.to_string(),
        }
    }

    fn parse(algorithm: &str, fidelity: &str) -> Option<Series> {
        let algorithm: Algorithm = algorithm.parse().ok()?;
        let fidelity = match fidelity {
            "none" => None,
            f => Some(f.parse().ok()?),
        };
        Some(Series {
            algorithm,
            fidelity,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// 1-based iteration.
    pub iteration: usize,
    pub regret: f64,
    pub cum_regret: f64,
    pub mse: f64,
    pub max_var: f64,
    pub mean_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: u64,
    pub series: Series,
    pub rows: Vec<MetricsRow>,
    /// Cumulative distance of each agent at the final iteration.
    pub final_agent_distances: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation, summed in input order.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub regret: Stat,
    pub cum_regret: Stat,
    pub mse: Stat,
    pub max_var: Stat,
    pub mean_distance: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub series: Series,
    pub runs: usize,
    pub rows: Vec<AggregateRow>,
}

impl Aggregate {
    pub fn last(&self) -> &AggregateRow {
        self.rows.last().expect("aggregate has at least one row")
    }
}

/// Per-iteration statistics across runs. Records are combined in `run_id`
/// order, so the result does not depend on the order they finished in.
pub fn aggregate(records: &[MetricsRecord]) -> Result<Aggregate> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("cannot aggregate an empty batch".into()))?;
    let mut sorted: Vec<&MetricsRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.run_id);
    let len = first.rows.len();
    if sorted
        .iter()
        .any(|r| r.rows.len() != len || r.series != first.series)
    {
        return Err(Error::Config(
            "records in a batch must share series and length".into(),
        ));
    }
    let column = |t: usize, f: fn(&MetricsRow) -> f64| -> Stat {
        Stat::of(&sorted.iter().map(|r| f(&r.rows[t])).collect::<Vec<_>>())
    };
    let rows = (0..len)
        .map(|t| AggregateRow {
            iteration: first.rows[t].iteration,
            regret: column(t, |r| r.regret),
            cum_regret: column(t, |r| r.cum_regret),
            mse: column(t, |r| r.mse),
            max_var: column(t, |r| r.max_var),
            mean_distance: column(t, |r| r.mean_distance),
        })
        .collect();
    Ok(Aggregate {
        series: first.series,
        runs: records.len(),
        rows,
    })
}

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

pub fn format_metrics(records: &[MetricsRecord], master_seed: u64) -> String {
    let mut out = format!("# master_seed={master_seed}\n{RUN_HEADER}\n");
    for rec in records {
        for row in &rec.rows {
            write!(out, "{},", row.iteration).unwrap();
            for v in [
                row.regret,
                row.cum_regret,
                row.mse,
                row.max_var,
                row.mean_distance,
            ] {
                num(&mut out, v);
                out.push(',');
            }
            writeln!(
                out,
                "{},{},{}",
                rec.run_id,
                rec.series.algorithm,
                rec.series.fidelity_label()
            )
            .unwrap();
        }
    }
    out
}

pub fn write_metrics(
    records: &[MetricsRecord],
    master_seed: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, format_metrics(records, master_seed))?;
    Ok(())
}

pub fn format_aggregate(agg: &Aggregate, master_seed: u64) -> String {
    let mut out = format!("# master_seed={master_seed}\n{AGGREGATE_HEADER}\n");
    for row in &agg.rows {
        write!(out, "{},", row.iteration).unwrap();
        for s in [
            &row.regret,
            &row.cum_regret,
            &row.mse,
            &row.max_var,
            &row.mean_distance,
        ] {
            num(&mut out, s.mean);
            out.push(',');
            num(&mut out, s.std);
            out.push(',');
        }
        writeln!(
            out,
            "{},{},{}",
            agg.runs,
            agg.series.algorithm,
            agg.series.fidelity_label()
        )
        .unwrap();
    }
    out
}

pub fn write_aggregate(agg: &Aggregate, master_seed: u64, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_aggregate(agg, master_seed))?;
    Ok(())
}

/// Reads a run file back into records, grouped by `run_id` in order of
/// first appearance. Per-agent distances are not part of the file and come
/// back empty.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_metrics(&text, path)
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<MetricsRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != RUN_HEADER {
                return Err(err(lineno, format!("expected header '{RUN_HEADER}'")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(err(
                lineno,
                format!("expected 9 fields, found {}", fields.len()),
            ));
        }
        let float = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| err(lineno, format!("field {} ('{}'): {e}", i + 1, fields[i])))
        };
        let iteration = fields[0]
            .parse::<usize>()
            .map_err(|e| err(lineno, format!("iteration '{}': {e}", fields[0])))?;
        let run_id = fields[6]
            .parse::<u64>()
            .map_err(|e| err(lineno, format!("run_id '{}': {e}", fields[6])))?;
        let series = Series::parse(fields[7], fields[8]).ok_or_else(|| {
            err(
                lineno,
                format!("unknown series '{},{}'", fields[7], fields[8]),
            )
        })?;
        let row = MetricsRow {
            iteration,
            regret: float(1)?,
            cum_regret: float(2)?,
            mse: float(3)?,
            max_var: float(4)?,
            mean_distance: float(5)?,
        };
        match records.iter_mut().find(|r| r.run_id == run_id) {
            Some(r) if r.series == series => r.rows.push(row),
            Some(_) => return Err(err(lineno, format!("run {run_id} changes series mid-file"))),
            None => records.push(MetricsRecord {
                run_id,
                series,
                rows: vec![row],
                final_agent_distances: Vec::new(),
            }),
        }
    }
    if !saw_header {
        return Err(err(text.lines().count().max(1), "missing header".into()));
    }
    Ok(records)
}

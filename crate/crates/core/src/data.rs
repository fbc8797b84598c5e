//! Observation time series and CSV ingestion.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Observation times `t_1 < ... < t_N`, the initial time `t0 <= t_1`, and one
/// record per time. Missing components are stored as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesData {
    t0: f64,
    times: Vec<f64>,
    names: Vec<String>,
    /// Row-major, `times.len() x names.len()`.
    values: Vec<f64>,
}

/// Borrowed view of an observation matrix. Probes operate on this.
#[derive(Clone, Copy, Debug)]
pub struct ObsView<'a> {
    pub names: &'a [String],
    pub values: &'a [f64],
}

impl<'a> ObsView<'a> {
    pub fn n_times(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let r = self.names.len();
        let k = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        Ok(self.values.iter().skip(k).step_by(r).copied().collect())
    }
}

impl TimeSeriesData {
    pub fn new(t0: f64, times: Vec<f64>, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("data", "at least one observable is required"));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        if values.len() != times.len() * names.len() {
            return Err(Error::invalid(
                "data",
                format!(
                    "{} values for {} times x {} observables",
                    values.len(),
                    times.len(),
                    names.len()
                ),
            ));
        }
        if !t0.is_finite() || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("data", "times must be finite"));
        }
        if let Some(&first) = times.first() {
            if t0 > first {
                return Err(Error::invalid("data", format!("t0 = {t0} is after the first observation time {first}")));
            }
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("data", "observation times must be strictly increasing"));
        }
        Ok(TimeSeriesData {
            t0,
            times,
            names,
            values,
        })
    }

    /// A dataset whose every observation is missing; a placeholder for simulation.
    pub fn placeholder(t0: f64, times: Vec<f64>, names: &[&str]) -> Result<Self> {
        let n = times.len() * names.len();
        Self::new(t0, times, names.iter().map(|s| s.to_string()).collect(), vec![f64::NAN; n])
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let r = self.names.len();
        &self.values[n * r..(n + 1) * r]
    }

    pub fn view(&self) -> ObsView<'_> {
        ObsView {
            names: &self.names,
            values: &self.values,
        }
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.view().column(name)
    }

    /// Returns the common spacing when the times (including `t0` if it precedes
    /// `t_1`) form an arithmetic progression.
    pub fn spacing(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let dt = self.times[1] - self.times[0];
        let tol = 1e-8 * dt.abs().max(1.0);
        let regular = self.times.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= tol);
        regular.then_some(dt)
    }

    /// Same times with new values (row-major).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.t0, self.times.clone(), self.names.clone(), values)
    }

    /// Reads a CSV with a `time` column and (at least) the requested observable
    /// columns. Empty cells and `NA` are missing values. Extra columns are ignored.
    pub fn read_csv<R: Read>(reader: R, t0: Option<f64>, observables: &[String]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid("data", format!("missing column `{name}`")))
        };
        let time_col = find("time")?;
        let obs_cols = observables.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
        let sim_col = headers.iter().position(|h| h == "sim");

        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut sim_id: Option<String> = None;
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if let Some(c) = sim_col {
                let id = record.get(c).unwrap_or("").to_string();
                match &sim_id {
                    None => sim_id = Some(id),
                    Some(prev) if *prev != id => {
                        return Err(Error::invalid(
                            "data",
                            "file holds several simulations; extract one before loading",
                        ))
                    }
                    _ => {}
                }
            }
            times.push(parse_cell(record.get(time_col), line + 2, "time")?.ok_or_else(|| {
                Error::invalid("data", format!("row {}: time is missing", line + 2))
            })?);
            for (&c, name) in obs_cols.iter().zip(observables) {
                values.push(parse_cell(record.get(c), line + 2, name)?.unwrap_or(f64::NAN));
            }
        }
        let t0 = match t0 {
            Some(t) => t,
            None => *times
                .first()
                .ok_or_else(|| Error::invalid("data", "no rows"))?,
        };
        Self::new(t0, times, observables.to_vec(), values)
    }

    pub fn read_csv_path(path: &Path, t0: Option<f64>, observables: &[String]) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, t0, observables)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for (n, t) in self.times.iter().enumerate() {
            let mut row = vec![format_num(*t)];
            row.extend(self.row(n).iter().map(|v| format_num(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn parse_cell(cell: Option<&str>, line: usize, column: &str) -> Result<Option<f64>> {
    match cell.map(str::trim) {
        None | Some("") | Some("NA") | Some("NaN") => Ok(None),
        Some(text) => text
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::invalid("data", format!("row {line}, column `{column}`: cannot parse `{text}`"))),
    }
}

/// Shortest round-trip representation; NaN is written as `NA`.
pub fn format_num(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

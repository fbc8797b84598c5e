//! Time-varying covariates with linear interpolation.

use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};

/// Covariate lookup table. Values between nodes are linearly interpolated;
/// outside the covered range the nearest two nodes are extrapolated linearly
/// and a warning is logged (once per table).
#[derive(Debug)]
pub struct CovariateTable {
    times: Vec<f64>,
    names: Vec<String>,
    /// Row-major, `times.len() x names.len()`.
    rows: Vec<f64>,
    warned: AtomicBool,
}

impl Clone for CovariateTable {
    fn clone(&self) -> Self {
        CovariateTable {
            times: self.times.clone(),
            names: self.names.clone(),
            rows: self.rows.clone(),
            warned: AtomicBool::new(self.warned.load(Ordering::Relaxed)),
        }
    }
}

impl CovariateTable {
    pub fn new(times: Vec<f64>, names: Vec<String>, rows: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("covariate table", "no rows"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("covariate table", "times must be strictly increasing"));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        if rows.len() != times.len() * names.len() {
            return Err(Error::invalid(
                "covariate table",
                format!("row count does not match {} times", times.len()),
            ));
        }
        Ok(CovariateTable {
            times,
            names,
            rows,
            warned: AtomicBool::new(false),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        let w = self.names.len();
        &self.rows[i * w..(i + 1) * w]
    }

    /// Interpolated covariate values at `t`, in column order.
    pub fn lookup(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.lookup_into(t, &mut out);
        out
    }

    pub fn lookup_named(&self, t: f64) -> Vec<(String, f64)> {
        self.names.iter().cloned().zip(self.lookup(t)).collect()
    }

    pub fn lookup_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if n == 1 {
            out.copy_from_slice(self.row(0));
            return;
        }
        let (first, last) = (self.times[0], self.times[n - 1]);
        if (t < first || t > last) && !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!("covariate lookup at t = {t} outside table range [{first}, {last}]; extrapolating linearly");
        }
        // index of the left node of the bracketing (or nearest) interval
        let left = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => {
                out.copy_from_slice(self.row(i));
                return;
            }
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let (t_a, t_b) = (self.times[left], self.times[left + 1]);
        let frac = (t - t_a) / (t_b - t_a);
        let (a, b) = (self.row(left), self.row(left + 1));
        for ((o, &va), &vb) in out.iter_mut().zip(a).zip(b) {
            *o = va + frac * (vb - va);
        }
    }

    /// Reads a CSV with a `time` column; every other column is a covariate.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let time_col = headers
            .iter()
            .position(|h| h == "time")
            .ok_or_else(|| Error::invalid("covariate table", "missing column `time`"))?;
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != time_col)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            for (i, cell) in record.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::invalid("covariate table", format!("row {}: cannot parse `{cell}`", line + 2))
                })?;
                if i == time_col {
                    times.push(v);
                } else {
                    rows.push(v);
                }
            }
        }
        Self::new(times, names, rows)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![crate::data::format_num(*t)];
            row.extend(self.row(i).iter().map(|v| crate::data::format_num(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(times: &[f64], values: &[f64]) -> CovariateTable {
        CovariateTable::new(times.to_vec(), vec!["x".into()], values.to_vec()).unwrap()
    }

    #[test]
    fn node_value_is_exact() {
        assert_eq!(table(&[0.0, 1.0], &[10.0, 20.0]).lookup(0.0), vec![10.0]);
    }

    #[test]
    fn midpoint_interpolates() {
        assert_eq!(table(&[0.0, 1.0], &[10.0, 20.0]).lookup(0.5), vec![15.0]);
    }

    #[test]
    fn interpolates_between_second_and_third_rows() {
        assert_eq!(table(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]).lookup(1.5), vec![2.5]);
    }

    #[test]
    fn extrapolates_from_nearest_pair() {
        let t = table(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]);
        assert_eq!(t.lookup(3.0), vec![7.0]);
        assert_eq!(t.lookup(-1.0), vec![-1.0]);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(CovariateTable::new(vec![], vec!["x".into()], vec![]).is_err());
        assert!(CovariateTable::new(vec![1.0, 0.0], vec!["x".into()], vec![1.0, 2.0]).is_err());
        assert!(CovariateTable::new(vec![0.0], vec!["x".into(), "x".into()], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = CovariateTable::new(vec![0.0, 0.5], vec!["births".into()], vec![10.0, 12.5]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = CovariateTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back.lookup(0.25), vec![11.25]);
        assert_eq!(back.names(), t.names());
    }
}

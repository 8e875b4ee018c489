use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub system: String,
    pub seed: Option<u64>,
    /// Multiplicative measurement-noise fraction applied to the samples.
    pub noise: f64,
}

/// Uniformly sampled `(t, x, u)` records.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    /// `N x n`.
    pub states: DMatrix<f64>,
    /// `N x m`.
    pub inputs: DMatrix<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(
        dt: f64,
        times: Vec<f64>,
        states: DMatrix<f64>,
        inputs: DMatrix<f64>,
        meta: TrajectoryMeta,
    ) -> Result<Self> {
        let n = times.len();
        if states.nrows() != n || inputs.nrows() != n {
            return Err(Error::Dimension {
                context: "trajectory rows",
                expected: n,
                actual: states.nrows().min(inputs.nrows()),
            });
        }
        if n < 2 {
            return Err(Error::TrajectoryTooShort(format!("{n} samples, need at least 2")));
        }
        if !(dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        Ok(Trajectory {
            dt,
            times,
            states,
            inputs,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0)
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    pub fn input(&self, k: usize) -> DVector<f64> {
        self.inputs.row(k).transpose()
    }

    /// `|x_k|_inf`.
    pub fn state_amplitude(&self, k: usize) -> f64 {
        self.states.row(k).amax()
    }

    pub fn peak_state_amplitude(&self) -> f64 {
        self.states.amax()
    }

    /// Per-channel peak `|u|`.
    pub fn peak_inputs(&self) -> Vec<f64> {
        self.inputs.column_iter().map(|c| c.amax()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.state_dim()).map(|i| format!("x{i}")));
        header.extend((1..=self.input_dim()).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(format!("{:.16e}", self.times[k]));
            rec.extend(self.states.row(k).iter().map(|v| format!("{v:.16e}")));
            rec.extend(self.inputs.row(k).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(fail("first column must be `t`".into()));
        }
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        for (i, h) in header.iter().enumerate().skip(1) {
            let expected = if i <= n {
                format!("x{i}")
            } else {
                format!("u{}", i - n)
            };
            if *h != expected {
                return Err(fail(format!("column {} is `{h}`, expected `{expected}`", i + 1)));
            }
        }
        if n == 0 || m == 0 {
            return Err(fail("need at least one state and one input column".into()));
        }
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 1 + n + m {
                return Err(fail(format!("row {} has {} fields", line + 2, rec.len())));
            }
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| fail(format!("row {}: {e}", line + 2)))?;
            times.push(vals[0]);
            data.push(vals);
        }
        let rows = times.len();
        if rows < 2 {
            return Err(fail(format!("{rows} samples, need at least 2")));
        }
        let dt = (times[rows - 1] - times[0]) / (rows - 1) as f64;
        for k in 1..rows {
            let step = times[k] - times[k - 1];
            if (step - dt).abs() > 1e-9 * dt.max(1e-300) + 4.0 * f64::EPSILON * times[k].abs() {
                return Err(fail(format!("non-uniform sampling at row {}", k + 2)));
            }
        }
        let states = DMatrix::from_fn(rows, n, |r, c| data[r][1 + c]);
        let inputs = DMatrix::from_fn(rows, m, |r, c| data[r][1 + n + c]);
        Trajectory::new(dt, times, states, inputs, TrajectoryMeta::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 1e-3).collect();
        let states = DMatrix::from_fn(5, 2, |r, c| (r as f64 + 1.0) * (c as f64 - 0.3) / 7.0);
        let inputs = DMatrix::from_fn(5, 1, |r, _| -(r as f64).sin());
        Trajectory::new(1e-3, times, states, inputs, TrajectoryMeta::default()).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let t = sample();
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,x1,x2,u1\n"));
        assert!(!text.contains('\r'));
        let back = Trajectory::read_csv(&p).unwrap();
        assert_eq!(back.states, t.states);
        assert_eq!(back.inputs, t.inputs);
        assert_eq!(back.times, t.times);
        assert!((back.dt - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn malformed_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,x1,y2,u1\n0,1,2,3\n0.001,1,2,3\n").unwrap();
        assert!(matches!(Trajectory::read_csv(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn single_row_rejected() {
        let r = Trajectory::new(
            1e-3,
            vec![0.0],
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
            TrajectoryMeta::default(),
        );
        assert!(matches!(r, Err(Error::TrajectoryTooShort(_))));
    }
}

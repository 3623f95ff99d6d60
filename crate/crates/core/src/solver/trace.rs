//! Per-iteration convergence records and their CSV form.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// Objective terms and bookkeeping of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// One-based outer iteration.
    pub iteration: usize,
    pub f_tensors: f64,
    pub f_couplings: f64,
    pub f_constraints: f64,
    /// Wall-clock time since the start of the fit.
    pub seconds: f64,
    /// Inner ADMM iterations spent on each mode of the sweep.
    pub inner_iterations: Vec<usize>,
    pub fms: Option<f64>,
}

/// Column names of the trace CSV for a sweep over `modes` modes.
pub fn trace_header(modes: usize) -> String {
    let mut cols = vec![
        "iter".to_string(),
        "f_tensors".into(),
        "f_couplings".into(),
        "f_constraints".into(),
        "seconds".into(),
    ];
    cols.extend((1..=modes).map(|d| format!("inner_iters_mode_{d}")));
    cols.push("fms".into());
    cols.join(",")
}

/// Writes the trace as CSV. Wall-clock seconds are left empty unless
/// `with_time` is set, which keeps repeated runs byte-identical.
pub fn write_trace_csv<W: Write>(
    records: &[TraceRecord],
    modes: usize,
    with_time: bool,
    mut w: W,
) -> io::Result<()> {
    writeln!(w, "{}", trace_header(modes))?;
    for r in records {
        write!(w, "{},{:e},{:e},{:e},", r.iteration, r.f_tensors, r.f_couplings, r.f_constraints)?;
        if with_time {
            write!(w, "{}", r.seconds)?;
        }
        for d in 0..modes {
            write!(w, ",{}", r.inner_iterations.get(d).copied().unwrap_or(0))?;
        }
        match r.fms {
            Some(f) => writeln!(w, ",{f:e}")?,
            None => writeln!(w, ",")?,
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rec = TraceRecord {
            iteration: 1,
            f_tensors: 0.5,
            f_couplings: 0.0,
            f_constraints: 1e-3,
            seconds: 0.25,
            inner_iterations: vec![5, 1],
            fms: None,
        };
        let mut buf = Vec::new();
        write_trace_csv(std::slice::from_ref(&rec), 2, false, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "iter,f_tensors,f_couplings,f_constraints,seconds,inner_iters_mode_1,inner_iters_mode_2,fms\n\
             1,5e-1,0e0,1e-3,,5,1,\n"
        );
        let mut buf = Vec::new();
        write_trace_csv(&[TraceRecord { fms: Some(1.0), ..rec }], 2, true, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("1,5e-1,0e0,1e-3,0.25,5,1,1e0\n"));
    }
}

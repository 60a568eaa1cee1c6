//! Traces and their analysis: rate fits, the pointwise residual bound,
//! delay-sweep fits and pass accounting.

use std::io::{Read, Write};

use crate::{AfpError, Result, Vector};

pub const TRACE_COLUMNS: [&str; 9] = [
    "k",
    "t_k",
    "eta_k",
    "res_abs",
    "res_rel",
    "tau_used",
    "full_passes",
    "monitor_slack",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub t_k: f64,
    pub eta_k: f64,
    pub res_abs: f64,
    pub res_rel: f64,
    /// Delay of the estimator formed at this iteration, or the largest
    /// component staleness for aggregated oracles.
    pub tau_used: usize,
    pub full_passes: f64,
    pub monitor_slack: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StopReason {
    #[default]
    MaxIterations,
    Converged,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
    pub seed: u64,
    /// Base stepsize the run used.
    pub eta: f64,
    /// Offset applied to `k` in rate fits.
    pub tau: usize,
}

/// Seventeen significant digits, enough for an exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trace {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn final_rel(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.res_rel)
    }

    /// First logged `k` with relative residual at most `eps`.
    pub fn iterations_to(&self, eps: f64) -> Option<usize> {
        self.records.iter().find(|r| r.res_rel <= eps).map(|r| r.k)
    }

    /// Passes spent when the relative residual first reaches `eps`.
    pub fn passes_to(&self, eps: f64) -> Option<f64> {
        self.records.iter().find(|r| r.res_rel <= eps).map(|r| r.full_passes)
    }

    pub fn max_tau_used(&self) -> usize {
        self.records.iter().map(|r| r.tau_used).max().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(TRACE_COLUMNS)?;
        for r in &self.records {
            wr.write_record([
                r.k.to_string(),
                fmt_f64(r.t_k),
                fmt_f64(r.eta_k),
                fmt_f64(r.res_abs),
                fmt_f64(r.res_rel),
                r.tau_used.to_string(),
                fmt_f64(r.full_passes),
                r.monitor_slack.map(fmt_f64).unwrap_or_default(),
                r.seed.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Reads the rows back. Run metadata (`stop`, `eta`, `tau`) is not part
    /// of the CSV and is left at its defaults.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
            return Err(AfpError::InvalidInput(format!("unexpected trace header: {headers:?}")));
        }
        let mut trace = Trace::default();
        for rec in rd.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| AfpError::InvalidInput(format!("bad float in column {}: {:?}", TRACE_COLUMNS[i], &rec[i])))
            };
            let u = |i: usize| -> Result<u64> {
                rec[i]
                    .parse()
                    .map_err(|_| AfpError::InvalidInput(format!("bad integer in column {}: {:?}", TRACE_COLUMNS[i], &rec[i])))
            };
            trace.records.push(TraceRecord {
                k: u(0)? as usize,
                t_k: f(1)?,
                eta_k: f(2)?,
                res_abs: f(3)?,
                res_rel: f(4)?,
                tau_used: u(5)? as usize,
                full_passes: f(6)?,
                monitor_slack: if rec[7].is_empty() { None } else { Some(f(7)?) },
                seed: u(8)?,
            });
        }
        trace.seed = trace.records.first().map_or(0, |r| r.seed);
        Ok(trace)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        r2,
        points: xs.len(),
    }
}

pub const MIN_SLOPE_POINTS: usize = 10;
pub const MIN_SWEEP_POINTS: usize = 5;

/// Log-log fit of squared residual against `k + tau` over `k_lo <= k <= k_hi`.
pub fn rate_slope(trace: &Trace, k_lo: usize, k_hi: usize) -> Result<LinearFit> {
    if k_lo < 1 || k_hi <= k_lo {
        return Err(AfpError::InvalidInput(format!("bad slope window [{k_lo}, {k_hi}]")));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .records
        .iter()
        .filter(|r| r.k >= k_lo && r.k <= k_hi && r.res_abs > 0.0)
        .map(|r| (((r.k + trace.tau) as f64).ln(), (r.res_abs * r.res_abs).ln()))
        .unzip();
    if xs.len() < MIN_SLOPE_POINTS {
        return Err(AfpError::InsufficientData {
            needed: MIN_SLOPE_POINTS,
            got: xs.len(),
        });
    }
    Ok(least_squares(&xs, &ys))
}

/// Slope over the last decade of logged iterations, `[k_last / 10, k_last]`.
pub fn final_decade_slope(trace: &Trace) -> Result<LinearFit> {
    let k_last = trace.last().map_or(0, |r| r.k);
    rate_slope(trace, (k_last / 10).max(1), k_last)
}

/// `R_0^2` from the initial residual and the distance to a known root.
pub fn initial_radius_sq(
    eta: f64,
    s: f64,
    gamma: f64,
    tau: usize,
    gy0: &Vector,
    y0: &Vector,
    x_star: Option<&Vector>,
) -> Result<f64> {
    let x_star = x_star.ok_or_else(|| AfpError::Unsupported("bound check needs a known root".into()))?;
    let c = 3.0 * s + tau as f64 - 1.0;
    Ok(eta * c * c / 2.0 * gy0.norm_squared() + 2.0 * s.powi(3) / (eta * gamma) * (y0 - x_star).norm_squared())
}

/// Largest value of `res^2 * eta (k + 3s + tau - 1)^2 / 4 - R_0^2` over the
/// trace; nonpositive means the residual bound holds at every logged row.
pub fn bound_check(trace: &Trace, r0_sq: f64, eta: f64, s: f64, tau: usize) -> f64 {
    trace
        .records
        .iter()
        .map(|r| {
            let c = r.k as f64 + 3.0 * s + tau as f64 - 1.0;
            r.res_abs * r.res_abs * eta * c * c / 4.0 - r0_sq
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Least-squares fit of iterations-to-tolerance against the maximum delay.
pub fn tau_sweep_fit(pairs: &[(usize, usize)]) -> Result<LinearFit> {
    if pairs.len() < MIN_SWEEP_POINTS {
        return Err(AfpError::InsufficientData {
            needed: MIN_SWEEP_POINTS,
            got: pairs.len(),
        });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
    Ok(least_squares(&xs, &ys))
}

/// Component calls expressed in full passes.
pub fn passes_accounting(component_calls: u64, n: usize) -> f64 {
    component_calls as f64 / n as f64
}

/// Row-wise root-mean-square of residuals across traces that share their
/// logged iterations (truncated to the shortest).
pub fn mean_square_trace(traces: &[Trace]) -> Trace {
    let Some(first) = traces.first() else {
        return Trace::default();
    };
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let m = traces.len() as f64;
    let mut out = Trace {
        records: Vec::with_capacity(len),
        stop: first.stop,
        seed: first.seed,
        eta: first.eta,
        tau: first.tau,
    };
    for i in 0..len {
        let base = &first.records[i];
        debug_assert!(traces.iter().all(|t| t.records[i].k == base.k));
        let ms = |f: fn(&TraceRecord) -> f64| (traces.iter().map(|t| f(&t.records[i]).powi(2)).sum::<f64>() / m).sqrt();
        out.records.push(TraceRecord {
            res_abs: ms(|r| r.res_abs),
            res_rel: ms(|r| r.res_rel),
            full_passes: traces.iter().map(|t| t.records[i].full_passes).sum::<f64>() / m,
            monitor_slack: None,
            ..base.clone()
        });
    }
    out
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

//! Per-method summaries of run records, as CSV or a plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::{pearson_correctness, CorrectnessVector};
use super::RunRecord;
use crate::error::{Error, Result};

/// Acceptance-rate histogram bins over [0, 1].
pub const ACCEPTANCE_BINS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::input(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub records: usize,
    pub failures: usize,
    pub mean_reward: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub mean_generation_calls: Option<f64>,
    pub mean_reward_calls: Option<f64>,
    pub mean_acceptance_rate: Option<f64>,
    pub vrr: Option<f64>,
    pub accuracy: Option<f64>,
    /// Reference latency over this method's latency.
    pub speedup: Option<f64>,
    pub acceptance_histogram: Option<[usize; ACCEPTANCE_BINS]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config_id: String,
    /// Method speedups are measured against; absent for single-method reports.
    pub reference: Option<String>,
    pub methods: Vec<MethodSummary>,
    /// Pearson correlation of per-prompt correctness between method pairs.
    pub correlations: Vec<(String, String, Option<f64>)>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn histogram(rates: impl Iterator<Item = f64>) -> [usize; ACCEPTANCE_BINS] {
    let mut bins = [0; ACCEPTANCE_BINS];
    for r in rates {
        let b = ((r * ACCEPTANCE_BINS as f64).floor() as usize).min(ACCEPTANCE_BINS - 1);
        bins[b] += 1;
    }
    bins
}

/// Summarize `records` per method.
///
/// `reference` names the method speedups are relative to; by default the
/// method with the highest mean latency.
pub fn summarize(records: &[RunRecord], reference: Option<&str>) -> Result<Report> {
    let first = records
        .first()
        .ok_or_else(|| Error::input("cannot report on zero records"))?;
    if let Some(other) = records.iter().find(|r| r.config_id != first.config_id) {
        return Err(Error::input(format!(
            "records mix incompatible configs: {:?} and {:?}",
            first.config_id, other.config_id
        )));
    }
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.method.as_str()).or_default().push(r);
    }

    let mut methods: Vec<MethodSummary> = groups
        .iter()
        .map(|(method, recs)| {
            let ok: Vec<&&RunRecord> = recs.iter().filter(|r| !r.is_failure()).collect();
            let rates: Vec<f64> = ok.iter().filter_map(|r| r.acceptance_rate).collect();
            MethodSummary {
                method: method.to_string(),
                records: recs.len(),
                failures: recs.len() - ok.len(),
                mean_reward: mean(ok.iter().filter_map(|r| r.raw_reward)),
                mean_latency_ms: mean(ok.iter().map(|r| r.latency_ms)),
                mean_generation_calls: mean(ok.iter().map(|r| r.generation_calls as f64)),
                mean_reward_calls: mean(ok.iter().map(|r| r.reward_calls as f64)),
                mean_acceptance_rate: mean(rates.iter().copied()),
                vrr: mean(ok.iter().filter_map(|r| r.valid.map(|v| f64::from(u8::from(v))))),
                accuracy: mean(ok.iter().filter_map(|r| r.correct.map(|c| f64::from(u8::from(c))))),
                speedup: None,
                acceptance_histogram: (!rates.is_empty()).then(|| histogram(rates.into_iter())),
            }
        })
        .collect();

    let reference = if methods.len() < 2 {
        None
    } else {
        let name = match reference {
            Some(name) => {
                if !groups.contains_key(name) {
                    return Err(Error::input(format!("reference method {name:?} not in records")));
                }
                name.to_string()
            }
            None => methods
                .iter()
                .filter(|m| m.mean_latency_ms.is_some())
                .fold(None::<&MethodSummary>, |best, m| match best {
                    Some(b) if b.mean_latency_ms >= m.mean_latency_ms => Some(b),
                    _ => Some(m),
                })
                .map(|m| m.method.clone())
                .ok_or_else(|| Error::input("no successful records to compare latencies"))?,
        };
        let ref_latency = methods
            .iter()
            .find(|m| m.method == name)
            .and_then(|m| m.mean_latency_ms);
        for m in &mut methods {
            m.speedup = match (ref_latency, m.mean_latency_ms) {
                (Some(r), Some(l)) if l > 0.0 => Some(r / l),
                _ => None,
            };
        }
        Some(name)
    };

    let mut correlations = Vec::new();
    let names: Vec<&str> = groups.keys().copied().collect();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let by_id = |m: &str| -> BTreeMap<&str, bool> {
                groups[m]
                    .iter()
                    .filter_map(|r| r.correct.map(|c| (r.prompt_id.as_str(), c)))
                    .collect()
            };
            let (ca, cb) = (by_id(a), by_id(b));
            let (va, vb): (Vec<bool>, Vec<bool>) = ca
                .iter()
                .filter_map(|(id, x)| cb.get(id).map(|y| (*x, *y)))
                .unzip();
            if va.is_empty() {
                continue;
            }
            let v = CorrectnessVector::new(va, vb)?;
            correlations.push((a.to_string(), b.to_string(), pearson_correctness(&v)));
        }
    }

    Ok(Report {
        config_id: first.config_id.clone(),
        reference,
        methods,
        correlations,
    })
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn hist(h: Option<[usize; ACCEPTANCE_BINS]>) -> String {
    h.map(|b| b.iter().map(usize::to_string).collect::<Vec<_>>().join("|"))
        .unwrap_or_default()
}

impl Report {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Text => self.to_text(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,records,failures,mean_reward,mean_latency_ms,mean_generation_calls,\
             mean_reward_calls,mean_acceptance_rate,vrr,accuracy",
        );
        if let Some(r) = &self.reference {
            write!(out, ",speedup_vs_{r}").unwrap();
        }
        out.push_str(",acceptance_hist\n");
        for m in &self.methods {
            write!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                m.method,
                m.records,
                m.failures,
                num(m.mean_reward),
                num(m.mean_latency_ms),
                num(m.mean_generation_calls),
                num(m.mean_reward_calls),
                num(m.mean_acceptance_rate),
                num(m.vrr),
                num(m.accuracy),
            )
            .unwrap();
            if self.reference.is_some() {
                write!(out, ",{}", num(m.speedup)).unwrap();
            }
            writeln!(out, ",{}", hist(m.acceptance_histogram)).unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "config: {}", self.config_id).unwrap();
        let dash = |v: Option<f64>, prec: usize| {
            v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "-".into())
        };
        write!(
            out,
            "{:<14} {:>7} {:>6} {:>11} {:>12} {:>8} {:>8} {:>8} {:>8}",
            "method", "records", "failed", "mean_reward", "latency_ms", "gen", "accept", "vrr", "acc"
        )
        .unwrap();
        if let Some(r) = &self.reference {
            write!(out, " {:>12}", format!("x vs {r}")).unwrap();
        }
        out.push('\n');
        for m in &self.methods {
            write!(
                out,
                "{:<14} {:>7} {:>6} {:>11} {:>12} {:>8} {:>8} {:>8} {:>8}",
                m.method,
                m.records,
                m.failures,
                dash(m.mean_reward, 4),
                dash(m.mean_latency_ms, 1),
                dash(m.mean_generation_calls, 1),
                dash(m.mean_acceptance_rate, 3),
                dash(m.vrr, 3),
                dash(m.accuracy, 3),
            )
            .unwrap();
            if self.reference.is_some() {
                write!(out, " {:>12}", m.speedup.map_or("-".into(), |s| format!("{s:.2}x"))).unwrap();
            }
            out.push('\n');
        }
        for m in &self.methods {
            if let Some(h) = m.acceptance_histogram {
                writeln!(out, "acceptance histogram [{}] (0.2-wide bins): {}", m.method, hist(Some(h)))
                    .unwrap();
            }
        }
        for (a, b, r) in &self.correlations {
            let r = r.map_or("undefined".into(), |r| format!("{r:.4}"));
            writeln!(out, "correctness pearson {a} vs {b}: {r}").unwrap();
        }
        out
    }
}

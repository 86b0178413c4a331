use std::io::{Read, Write};

use crate::error::{contract_err, Error, Result};

fn check(pred: &[f64], labels: &[u32]) -> Result<()> {
    if pred.len() != labels.len() {
        return contract_err(format!("{} predictions for {} labels", pred.len(), labels.len()));
    }
    if pred.is_empty() {
        return contract_err("no samples to score");
    }
    Ok(())
}

/// Mean absolute error in years, summed in sample order.
pub fn mae(pred: &[f64], labels: &[u32]) -> Result<f64> {
    check(pred, labels)?;
    let total: f64 = pred.iter().zip(labels).map(|(p, &l)| (p - l as f64).abs()).sum();
    Ok(total / pred.len() as f64)
}

/// Percentage of samples whose absolute error is at most `n` years.
pub fn cs(pred: &[f64], labels: &[u32], n: f64) -> Result<f64> {
    check(pred, labels)?;
    if !(n >= 0.0) {
        return contract_err(format!("cumulative score range {n} is negative"));
    }
    let hits = pred.iter().zip(labels).filter(|(p, &l)| (*p - l as f64).abs() <= n).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

pub const CS_LEVELS: usize = 8;

/// Scores on one labelled set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mae: f64,
    /// `cs[n-1]` is CS(n) in percent, for n = 1..=8.
    pub cs: [f64; CS_LEVELS],
    pub samples: usize,
    pub predictions: Vec<f64>,
    pub labels: Vec<u32>,
}

impl EvalReport {
    pub fn new(predictions: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        let mae = mae(&predictions, &labels)?;
        let mut levels = [0.0; CS_LEVELS];
        for (n, v) in levels.iter_mut().enumerate() {
            *v = cs(&predictions, &labels, (n + 1) as f64)?;
        }
        Ok(Self {
            mae,
            cs: levels,
            samples: labels.len(),
            predictions,
            labels,
        })
    }

    /// CS(n) for any n, including 0.
    pub fn cs_at(&self, n: f64) -> f64 {
        cs(&self.predictions, &self.labels, n).expect("report holds at least one sample")
    }

    pub fn errors(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| (p - l as f64).abs())
            .collect()
    }

    /// `metric,value` CSV: mae, cs_1..cs_8, samples.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["metric", "value"])?;
        wr.write_record(["mae", &format!("{:?}", self.mae)])?;
        for (n, v) in self.cs.iter().enumerate() {
            wr.write_record([format!("cs_{}", n + 1), format!("{v:?}")])?;
        }
        wr.write_record(["samples", &self.samples.to_string()])?;
        wr.flush()?;
        Ok(())
    }

    /// `index,label,prediction,abs_error` rows for external checking.
    pub fn write_predictions_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "label", "prediction", "abs_error"])?;
        for (i, (p, e)) in self.predictions.iter().zip(self.errors()).enumerate() {
            wr.write_record([i.to_string(), self.labels[i].to_string(), format!("{p:?}"), format!("{e:?}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Parsed `metric,value` report: only the summary numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportSummary {
    pub mae: f64,
    pub cs: [f64; CS_LEVELS],
    pub samples: usize,
}

pub fn read_report_csv(r: impl Read) -> Result<ReportSummary> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().collect::<Vec<_>>() != ["metric", "value"] {
        return Err(Error::Format("report header must be `metric,value`".into()));
    }
    let mut rows = std::collections::BTreeMap::new();
    for row in rd.records() {
        let row = row?;
        rows.insert(row[0].to_string(), row[1].to_string());
    }
    let mut get = |k: &str| rows.remove(k).ok_or_else(|| Error::Format(format!("report lacks `{k}`")));
    let num = |k: &str, v: String| v.parse::<f64>().map_err(|_| Error::Format(format!("report `{k}` = `{v}`")));
    let mae = num("mae", get("mae")?)?;
    let mut levels = [0.0; CS_LEVELS];
    for (n, v) in levels.iter_mut().enumerate() {
        let k = format!("cs_{}", n + 1);
        *v = num(&k, get(&k)?)?;
    }
    let samples = get("samples")?
        .parse()
        .map_err(|_| Error::Format("report `samples` is not a count".into()))?;
    Ok(ReportSummary {
        mae,
        cs: levels,
        samples,
    })
}

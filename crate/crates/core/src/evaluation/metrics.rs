use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion matrix with class 1 as positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    /// Counts from class-1 probabilities thresholded at 0.5.
    pub fn from_probs(probs: &[f64], labels: &[f64]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= 0.5, y >= 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// Trial-level counts: the probabilities of all windows of one trial
    /// are averaged before thresholding.
    pub fn from_trial_probs(probs: &[f64], labels: &[f64], trials: &[usize]) -> Self {
        let mut per_trial: std::collections::BTreeMap<usize, (f64, usize, f64)> = Default::default();
        for ((&p, &y), &t) in probs.iter().zip(labels).zip(trials) {
            let e = per_trial.entry(t).or_insert((0.0, 0, y));
            e.0 += p;
            e.1 += 1;
        }
        let (p, y): (Vec<f64>, Vec<f64>) = per_trial.values().map(|&(s, n, y)| (s / n as f64, y)).unzip();
        Self::from_probs(&p, &y)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Accuracy, sensitivity, specificity and F1. A metric whose denominator
/// is zero is `None` rather than 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    Ok(Metrics {
        acc: (c.tp + c.tn) as f64 / total as f64,
        sen: ratio(c.tp, c.tp + c.fn_),
        spe: ratio(c.tn, c.tn + c.fp),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    })
}

/// Undefined values print as `NA`.
pub struct Cell(pub Option<f64>);

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("NA"),
        }
    }
}

/// Mean and population standard deviation of the defined values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Number of defined values aggregated.
    pub n: usize,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return Summary {
            mean: None,
            std: None,
            n: 0,
        };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Summary {
        mean: Some(mean),
        std: Some(var.sqrt()),
        n: v.len(),
    }
}

/// One labelled row of a report, e.g. a subject or a fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Rows plus their mean and population std per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn new(title: impl Into<String>) -> Self {
        MetricsReport {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, counts: ConfusionCounts) -> Result<()> {
        let metrics = metrics(&counts)?;
        self.rows.push(ReportRow {
            label: label.into(),
            counts,
            metrics,
        });
        Ok(())
    }

    pub fn acc(&self) -> Summary {
        summarize(self.rows.iter().map(|r| Some(r.metrics.acc)))
    }

    pub fn sen(&self) -> Summary {
        summarize(self.rows.iter().map(|r| r.metrics.sen))
    }

    pub fn spe(&self) -> Summary {
        summarize(self.rows.iter().map(|r| r.metrics.spe))
    }

    pub fn f1(&self) -> Summary {
        summarize(self.rows.iter().map(|r| r.metrics.f1))
    }

    /// Tabular text: a header, one row per entry, then `mean` and `std`
    /// rows. Std uses the population formula.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n# std: population (divide by n)\n", self.title);
        out.push_str("row\ttp\tfp\ttn\tfn\tacc\tsen\tspe\tf1\n");
        for r in &self.rows {
            let c = r.counts;
            let m = r.metrics;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.label,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                Cell(Some(m.acc)),
                Cell(m.sen),
                Cell(m.spe),
                Cell(m.f1)
            ));
        }
        let s = [self.acc(), self.sen(), self.spe(), self.f1()];
        let line = |name: &str, pick: fn(&Summary) -> Option<f64>| {
            let cells: Vec<String> = s.iter().map(|x| Cell(pick(x)).to_string()).collect();
            format!("{name}\t\t\t\t\t{}\n", cells.join("\t"))
        };
        out.push_str(&line("mean", |x| x.mean));
        out.push_str(&line("std", |x| x.std));
        out
    }
}

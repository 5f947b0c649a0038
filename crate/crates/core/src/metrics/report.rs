use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{cc, rrmse_s, rrmse_t, MetricError};

/// Scores of one denoised segment against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub rrmse_t: f64,
    pub rrmse_s: f64,
    pub cc: f64,
}

impl SampleScore {
    pub fn compute(
        index: usize,
        pred: &[f64],
        truth: &[f64],
        fs: f64,
        snr_db: Option<f64>,
    ) -> Result<Self, MetricError> {
        Ok(Self {
            index,
            snr_db,
            rrmse_t: rrmse_t(pred, truth)?,
            rrmse_s: rrmse_s(pred, truth, fs)?,
            cc: cc(pred, truth)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrBucket {
    pub snr_db: i64,
    pub n: usize,
    pub rrmse_t_mean: f64,
    pub rrmse_s_mean: f64,
    pub cc_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub artifact: String,
    pub n: usize,
    pub rrmse_t_mean: f64,
    pub rrmse_t_std: f64,
    pub rrmse_s_mean: f64,
    pub rrmse_s_std: f64,
    pub cc_mean: f64,
    pub cc_std: f64,
    pub per_snr: Vec<SnrBucket>,
}

/// Per-sample scores of one method on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub artifact: String,
    pub scores: Vec<SampleScore>,
}

/// Mean and sample standard deviation (0 for fewer than two values).
fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn new(method: impl Into<String>, artifact: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            artifact: artifact.into(),
            scores: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Samples grouped by SNR rounded to the nearest integer dB; samples
    /// without an SNR are left out.
    pub fn per_snr(&self) -> Vec<SnrBucket> {
        let mut groups: BTreeMap<i64, Vec<&SampleScore>> = BTreeMap::new();
        for s in &self.scores {
            if let Some(snr) = s.snr_db {
                groups.entry(snr.round() as i64).or_default().push(s);
            }
        }
        groups
            .into_iter()
            .map(|(snr_db, g)| {
                let n = g.len() as f64;
                SnrBucket {
                    snr_db,
                    n: g.len(),
                    rrmse_t_mean: g.iter().map(|s| s.rrmse_t).sum::<f64>() / n,
                    rrmse_s_mean: g.iter().map(|s| s.rrmse_s).sum::<f64>() / n,
                    cc_mean: g.iter().map(|s| s.cc).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn aggregate(&self) -> Aggregate {
        let (rrmse_t_mean, rrmse_t_std) = mean_std(self.scores.iter().map(|s| s.rrmse_t));
        let (rrmse_s_mean, rrmse_s_std) = mean_std(self.scores.iter().map(|s| s.rrmse_s));
        let (cc_mean, cc_std) = mean_std(self.scores.iter().map(|s| s.cc));
        Aggregate {
            method: self.method.clone(),
            artifact: self.artifact.clone(),
            n: self.scores.len(),
            rrmse_t_mean,
            rrmse_t_std,
            rrmse_s_mean,
            rrmse_s_std,
            cc_mean,
            cc_std,
            per_snr: self.per_snr(),
        }
    }

    /// One row per sample.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method", "artifact", "index", "snr_db", "rrmse_t", "rrmse_s", "cc",
        ])?;
        for s in &self.scores {
            out.write_record([
                self.method.clone(),
                self.artifact.clone(),
                s.index.to_string(),
                s.snr_db.map(|v| v.to_string()).unwrap_or_default(),
                s.rrmse_t.to_string(),
                s.rrmse_s.to_string(),
                s.cc.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per integer SNR bucket.
    pub fn write_per_snr_csv<W: Write>(&self, w: W) -> Result<(), MetricError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "artifact",
            "snr_db",
            "n",
            "rrmse_t_mean",
            "rrmse_s_mean",
            "cc_mean",
        ])?;
        for b in self.per_snr() {
            out.write_record([
                self.method.clone(),
                self.artifact.clone(),
                b.snr_db.to_string(),
                b.n.to_string(),
                b.rrmse_t_mean.to_string(),
                b.rrmse_s_mean.to_string(),
                b.cc_mean.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn aggregate_json(&self) -> Result<String, MetricError> {
        Ok(serde_json::to_string_pretty(&self.aggregate())?)
    }
}

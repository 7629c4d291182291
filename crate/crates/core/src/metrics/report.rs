use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::heads::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub task: Task,
    /// Per-keypoint OKS tolerances.
    pub oks_sigmas: Vec<f64>,
    pub oks_thresholds: Vec<f64>,
    /// Detections kept per image, highest score first.
    pub max_dets: usize,
    pub pck_alpha: f64,
    pub delta_threshold: f64,
    pub angle_thresholds: Vec<f64>,
}

/// Uniform desk-skeleton tolerance.
pub const DEFAULT_OKS_SIGMA: f64 = 0.05;

impl EvalProtocol {
    pub fn new(task: Task, k: usize) -> Self {
        Self {
            task,
            oks_sigmas: vec![DEFAULT_OKS_SIGMA; k],
            oks_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            max_dets: 20,
            pck_alpha: 0.1,
            delta_threshold: 1.25,
            angle_thresholds: vec![11.25, 22.5, 30.0],
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let inc = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !inc(&self.oks_thresholds) || !inc(&self.angle_thresholds) || self.oks_sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(crate::Error::Config(
                "thresholds must be strictly increasing and sigmas positive".into(),
            ));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match self.task {
            Task::Pose => format!(
                "oks {:.2}:{:.2} sigma {} maxdets {} pck {}",
                self.oks_thresholds.first().unwrap_or(&0.0),
                self.oks_thresholds.last().unwrap_or(&0.0),
                self.oks_sigmas.first().unwrap_or(&0.0),
                self.max_dets,
                self.pck_alpha
            ),
            Task::Seg => "confusion over all pixels".into(),
            Task::Depth => format!("least-squares scale+shift on human pixels, delta {}", self.delta_threshold),
            Task::Normal => format!("angles {:?} deg on human pixels", self.angle_thresholds),
        }
    }
}

/// Named scalar metrics for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub metrics: Vec<(String, f64)>,
    pub n_samples: usize,
    pub protocol: String,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub const CSV_HEADER: &'static str = "task,metric,value,n_samples";

    /// One row per metric under [`Self::CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (name, v) in &self.metrics {
            writeln!(s, "{},{},{},{}", self.task, name, v, self.n_samples).expect("write to string");
        }
        s
    }
}

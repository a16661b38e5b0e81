//! Runs the pipeline once per guidance setting and tabulates final depth metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, write_text, PipelineConfig, RunSummary};
use crate::error::Result;
use crate::guidance::GuidanceConfig;
use crate::post::DepthMetrics;

/// `(K, α_low, α_high)` settings swept by default.
pub const DEFAULT_GRID: [(usize, f64, f64); 6] = [
    (2, 0.05, 0.15),
    (8, 0.05, 0.15),
    (4, 0.01, 0.3),
    (4, 0.05, 0.3),
    (4, 0.01, 0.15),
    (4, 0.05, 0.15),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub guidance: GuidanceConfig,
    /// Final depth metrics, or the error that stopped this point.
    pub outcome: std::result::Result<DepthMetrics, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("k,alpha_low,alpha_high,{},status\n", DepthMetrics::COLUMNS.join(","));
        for r in &self.rows {
            let g = &r.guidance;
            let _ = write!(s, "{},{:?},{:?},", g.k_consistency, g.alpha_low, g.alpha_high);
            match &r.outcome {
                Ok(m) => {
                    let v: Vec<String> = m.values().iter().map(|x| format!("{x:?}")).collect();
                    let _ = writeln!(s, "{},ok", v.join(","));
                }
                Err(e) => {
                    let _ = writeln!(s, "{}error: {}", ",".repeat(7), e.replace([',', '\n'], ";"));
                }
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>3} {:>6} {:>6}  {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "K", "a_l", "a_h", "AbsRel", "SqRel", "RMSE", "RMSElog", "d1", "d2", "d3"
        );
        for r in &self.rows {
            let g = &r.guidance;
            let _ = write!(s, "{:>3} {:>6} {:>6} ", g.k_consistency, g.alpha_low, g.alpha_high);
            match &r.outcome {
                Ok(m) => {
                    for v in m.values() {
                        let _ = write!(s, " {v:>8.4}");
                    }
                    s.push('\n');
                }
                Err(e) => {
                    let _ = writeln!(s, " failed: {e}");
                }
            }
        }
        s
    }
}

/// One run per grid point under `base.output/point_NN`, then `sweep.csv` and
/// `sweep.txt` in `base.output`. A failing point is recorded and the sweep
/// moves on.
pub fn hyper_sweep(base: &PipelineConfig, grid: &[GuidanceConfig]) -> Result<SweepTable> {
    let mut table = SweepTable::default();
    for (n, g) in grid.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.guidance = g.clone();
        cfg.output = base.output.join(format!("point_{n:02}"));
        let outcome = run_pipeline(&cfg)
            .and_then(|_| RunSummary::read(&cfg.output))
            .map_err(|e| e.to_string())
            .and_then(|s| s.depth.get("final").copied().ok_or_else(|| "no ground truth to evaluate".to_string()));
        if let Err(e) = &outcome {
            log::warn!("sweep point {n} failed: {e}");
        }
        table.rows.push(SweepRow {
            guidance: g.clone(),
            outcome,
        });
    }
    write_text(&base.output.join("sweep.csv"), &table.to_csv())?;
    write_text(&base.output.join("sweep.txt"), &table.to_text())?;
    Ok(table)
}

/// [`DEFAULT_GRID`] as guidance configurations.
pub fn default_grid() -> Vec<GuidanceConfig> {
    DEFAULT_GRID
        .iter()
        .map(|&(k, lo, hi)| GuidanceConfig {
            k_consistency: k,
            alpha_low: lo,
            alpha_high: hi,
        })
        .collect()
}

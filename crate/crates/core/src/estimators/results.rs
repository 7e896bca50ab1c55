use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::survfit::{HazardFit, SurvivalCurve};
use crate::weights::IntervalDiagnostics;

/// Bootstrap percentile bands at each horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub level: f64,
    pub rd_lo: Vec<f64>,
    pub rd_hi: Vec<f64>,
    pub s1_lo: Vec<f64>,
    pub s1_hi: Vec<f64>,
    pub s0_lo: Vec<f64>,
    pub s0_hi: Vec<f64>,
    pub n_replicates: usize,
    pub n_failed: usize,
}

/// Standardized survival under always-treated (`S1`) and never-treated (`S0`),
/// and their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalResults {
    pub horizons: Vec<f64>,
    pub s1: Vec<f64>,
    pub s0: Vec<f64>,
    pub rd: Vec<f64>,
    pub s1_curve: SurvivalCurve,
    pub s0_curve: SurvivalCurve,
    /// Which population the curves were standardized to.
    pub population: String,
    pub bands: Option<Bands>,
}

impl MarginalResults {
    pub(crate) fn from_curves(horizons: &[f64], s1_curve: SurvivalCurve, s0_curve: SurvivalCurve, population: String) -> Self {
        let s1 = s1_curve.at_all(horizons);
        let s0 = s0_curve.at_all(horizons);
        let rd = s1.iter().zip(&s0).map(|(a, b)| a - b).collect();
        Self {
            horizons: horizons.to_vec(),
            s1,
            s0,
            rd,
            s1_curve,
            s0_curve,
            population,
            bands: None,
        }
    }

    /// `S1(τ) - S0(τ)` at any time.
    pub fn rd_at(&self, tau: f64) -> f64 {
        self.s1_curve.at(tau) - self.s0_curve.at(tau)
    }

    /// CSV with columns `tau,S1,S0,RD`, plus `RD_lo,RD_hi` when bands exist.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["tau", "S1", "S0", "RD"];
        if self.bands.is_some() {
            header.extend(["RD_lo", "RD_hi"]);
        }
        w.write_record(&header)?;
        for (i, tau) in self.horizons.iter().enumerate() {
            let mut rec = vec![tau.to_string(), self.s1[i].to_string(), self.s0[i].to_string(), self.rd[i].to_string()];
            if let Some(b) = &self.bands {
                rec.push(b.rd_lo[i].to_string());
                rec.push(b.rd_hi[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub results: MarginalResults,
    pub fit: HazardFit,
    /// Per-interval weight summaries (visit for IPTW, time since trial start for IPACW).
    pub diagnostics: Vec<IntervalDiagnostics>,
    /// Number of rows the outcome model was fitted on.
    pub n_rows: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_follow_bands() {
        let c1 = SurvivalCurve::from_steps(vec![0.0, 1.0], vec![1.0, 0.8]);
        let c0 = SurvivalCurve::from_steps(vec![0.0, 1.0], vec![1.0, 0.7]);
        let mut r = MarginalResults::from_curves(&[0.0, 1.0], c1, c0, "C0".into());
        assert_eq!(r.rd[0], 0.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau,S1,S0,RD\n"));
        r.bands = Some(Bands {
            level: 0.95,
            rd_lo: vec![0.0, 0.05],
            rd_hi: vec![0.0, 0.15],
            s1_lo: vec![],
            s1_hi: vec![],
            s0_lo: vec![],
            s0_hi: vec![],
            n_replicates: 2,
            n_failed: 0,
        });
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("tau,S1,S0,RD,RD_lo,RD_hi\n"));
        assert!(r.to_json().unwrap().contains("\"population\": \"C0\""));
    }
}

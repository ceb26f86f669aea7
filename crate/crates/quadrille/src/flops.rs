//! Flop counting and hardware-efficiency arithmetic.
//!
//! A fully connected layer costs `2mkn` flops per pass: forward, input
//! gradient, and weight gradient make `6mkn` per batch, or `8mkn` when the
//! forward pass runs twice to recompute activations. Counts are exact
//! integers in `u128`; rates and percentages are derived floats.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::pmm::LayerSpec;

// ---------------------------------------------------------------------------
// Flop counts
// ---------------------------------------------------------------------------

/// Exact flops of one training batch over the whole network.
pub fn network_flops(specs: &[LayerSpec], recompute: bool) -> u128 {
    let passes: u128 = if recompute { 8 } else { 6 };
    specs
        .iter()
        .map(|s| passes * s.m as u128 * s.k as u128 * s.n as u128)
        .sum()
}

/// Exact flops of one rank's local product in one phase of one layer
/// (forward, input gradient, and weight gradient all multiply the same
/// local volume).
pub fn local_phase_flops(spec: &LayerSpec, config: &GridConfig) -> Result<u128> {
    spec.validate(config)?;
    let (g_row, g_col) = spec.tile_extents(config);
    let m_local = spec.m / config.g_data / config.g_z;
    Ok(2 * m_local as u128 * (spec.k / g_row) as u128 * (spec.n / g_col) as u128)
}

/// Seconds to execute `flops` at a sustained rate.
pub fn compute_seconds(flops: u128, flops_per_second: f64) -> Result<f64> {
    if !(flops_per_second > 0.0) || !flops_per_second.is_finite() {
        return Err(Error::Config(format!(
            "compute rate must be positive and finite, got {flops_per_second}"
        )));
    }
    Ok(flops as f64 / flops_per_second)
}

// ---------------------------------------------------------------------------
// Hardware peaks
// ---------------------------------------------------------------------------

/// Half-precision peak of one worker, in flop/s. `advertised` is the
/// datasheet number; `empirical` is the best rate a tuned dense matmul
/// actually reaches on the part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakSpec {
    pub name: &'static str,
    pub advertised: f64,
    pub empirical: f64,
}

pub const A100: PeakSpec =
    PeakSpec { name: "a100", advertised: 312.0e12, empirical: 280.0e12 };
/// One GCD (half an MI250X package) — the scheduling unit on that platform.
pub const MI250X_GCD: PeakSpec =
    PeakSpec { name: "mi250x-gcd", advertised: 191.5e12, empirical: 125.0e12 };
pub const H100: PeakSpec =
    PeakSpec { name: "h100", advertised: 989.0e12, empirical: 813.0e12 };

pub fn all_peaks() -> [&'static PeakSpec; 3] {
    [&A100, &MI250X_GCD, &H100]
}

pub fn peak_by_name(name: &str) -> Result<&'static PeakSpec> {
    all_peaks()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown worker type {name:?}; expected one of a100, mi250x-gcd, h100"
            ))
        })
}

// ---------------------------------------------------------------------------
// Efficiency
// ---------------------------------------------------------------------------

/// A sustained rate against both peaks of a worker type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Efficiency {
    /// Aggregate sustained flop/s across all workers.
    pub sustained_flops: f64,
    pub pct_advertised: f64,
    pub pct_empirical: f64,
}

/// Sustained aggregate rate from an exact count and a wall time.
pub fn sustained(total_flops: u128, seconds: f64) -> Result<f64> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::Config(format!(
            "wall time must be positive and finite, got {seconds}"
        )));
    }
    Ok(total_flops as f64 / seconds)
}

pub fn efficiency(sustained_flops: f64, workers: usize, peak: &PeakSpec) -> Result<Efficiency> {
    if workers == 0 {
        return Err(Error::Config("efficiency needs at least one worker".into()));
    }
    if !(sustained_flops >= 0.0) || !sustained_flops.is_finite() {
        return Err(Error::Config(format!(
            "sustained rate must be nonnegative and finite, got {sustained_flops}"
        )));
    }
    let w = workers as f64;
    Ok(Efficiency {
        sustained_flops,
        pct_advertised: 100.0 * sustained_flops / (w * peak.advertised),
        pct_empirical: 100.0 * sustained_flops / (w * peak.empirical),
    })
}

/// One line of an efficiency table.
#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyRow {
    pub workers: usize,
    pub model: String,
    /// Aggregate sustained rate in Pflop/s.
    pub total_pflops: f64,
    pub pct_advertised: f64,
    pub pct_empirical: f64,
}

impl EfficiencyRow {
    pub fn new(workers: usize, model: impl Into<String>, e: &Efficiency) -> Self {
        EfficiencyRow {
            workers,
            model: model.into(),
            total_pflops: e.sustained_flops / 1e15,
            pct_advertised: e.pct_advertised,
            pct_empirical: e.pct_empirical,
        }
    }
}

pub fn write_efficiency_csv(rows: &[EfficiencyRow], out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "workers,model,total_pflops,pct_advertised,pct_empirical")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4}",
            r.workers, r.model, r.total_pflops, r.pct_advertised, r.pct_empirical
        )?;
    }
    Ok(())
}

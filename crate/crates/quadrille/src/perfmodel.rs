//! Closed-form communication model for one training step.
//!
//! This is the analytical counterpart to the event-driven timing engine:
//! per-rank ring volumes divided by an effective per-axis bandwidth, with no
//! ring plans and no flow simulation. Keeping the two routes independent is
//! the point — tests hold them against each other.
//!
//! The effective bandwidth of a grid axis under block placement has two
//! regimes. When an entire group fits inside one node, its rings are
//! intra-node and the profiled bandwidth table applies, keyed by the group
//! stride and size (the table values already reflect how many such rings a
//! node hosts). When groups span nodes, every ring funnels through
//! node-boundary links shared by the rings of the inner axes, so the link
//! bandwidth divides by the number of sharers, capped at the GPUs per node.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{enumerate_configs, Axis, GridConfig};
use crate::pmm::{col_weight_axis, row_weight_axis, LayerSpec};
use crate::simnet::ClusterSpec;

// ---------------------------------------------------------------------------
// Effective per-axis bandwidth
// ---------------------------------------------------------------------------

/// Bytes per second available to one rank's ring traffic along each axis.
/// Trivial axes (extent one) carry no traffic and get `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthVector {
    pub beta_x: f64,
    pub beta_y: f64,
    pub beta_z: f64,
    pub beta_data: f64,
}

impl BandwidthVector {
    pub fn along(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.beta_x,
            Axis::Y => self.beta_y,
            Axis::Z => self.beta_z,
            Axis::Data => self.beta_data,
        }
    }
}

/// Effective bandwidth of one axis: profiled intra-node lookup when a whole
/// group fits in a node, otherwise the node-boundary link split across the
/// rings of the inner axes.
pub fn axis_bandwidth(config: &GridConfig, cluster: &ClusterSpec, axis: Axis) -> Result<f64> {
    let extent = config.extent(axis);
    if extent == 1 {
        return Ok(f64::INFINITY);
    }
    let inner = config.inner_product(axis);
    if inner * extent <= cluster.g_node() {
        cluster.intra_bandwidth(inner, extent)
    } else {
        let sharers = inner.min(cluster.g_node()).max(1);
        Ok(cluster.beta_inter() / sharers as f64)
    }
}

pub fn effective_bandwidths(config: &GridConfig, cluster: &ClusterSpec) -> Result<BandwidthVector> {
    Ok(BandwidthVector {
        beta_x: axis_bandwidth(config, cluster, Axis::X)?,
        beta_y: axis_bandwidth(config, cluster, Axis::Y)?,
        beta_z: axis_bandwidth(config, cluster, Axis::Z)?,
        beta_data: axis_bandwidth(config, cluster, Axis::Data)?,
    })
}

// ---------------------------------------------------------------------------
// Ring volumes
// ---------------------------------------------------------------------------

/// Exact per-rank wire bytes for each collective of one layer's step.
/// All arithmetic is integral, including the zero-padding an all-reduce
/// applies to payloads that do not divide by the group size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CollectiveVolumes {
    pub ag_z: u128,
    pub rs_z: u128,
    pub ar_fwd: u128,
    pub ar_bwd: u128,
    pub ar_data: u128,
}

impl CollectiveVolumes {
    pub fn total(&self) -> u128 {
        self.ag_z + self.rs_z + self.ar_fwd + self.ar_bwd + self.ar_data
    }
}

fn shard_volume(group: usize, payload_elements: u128, bytes_per_element: u128) -> u128 {
    if group <= 1 {
        return 0;
    }
    let g = group as u128;
    debug_assert_eq!(payload_elements % g, 0);
    (g - 1) * (payload_elements / g) * bytes_per_element
}

fn all_reduce_volume(group: usize, payload_elements: u128, bytes_per_element: u128) -> u128 {
    if group <= 1 {
        return 0;
    }
    let g = group as u128;
    let padded = payload_elements.div_ceil(g) * g;
    2 * (g - 1) * (padded / g) * bytes_per_element
}

/// Per-rank wire bytes of one layer's step, from the layer shape and grid
/// extents alone.
pub fn layer_volumes(
    spec: &LayerSpec,
    config: &GridConfig,
    bytes_per_element: usize,
) -> Result<CollectiveVolumes> {
    spec.validate(config)?;
    let b = bytes_per_element as u128;
    let (g_row, g_col) = spec.tile_extents(config);
    let (m, k, n) = (spec.m as u128, spec.k as u128, spec.n as u128);
    let (g_row_u, g_col_u) = (g_row as u128, g_col as u128);
    let (g_z, g_data) = (config.g_z as u128, config.g_data as u128);

    let block = (k / g_row_u) * (n / g_col_u);
    let m_local = m / g_data / g_z;
    Ok(CollectiveVolumes {
        ag_z: shard_volume(config.g_z, block, b),
        rs_z: shard_volume(config.g_z, block, b),
        ar_fwd: all_reduce_volume(g_row, m_local * (n / g_col_u), b),
        ar_bwd: all_reduce_volume(g_col, m_local * (k / g_row_u), b),
        ar_data: all_reduce_volume(config.g_data, block / g_z, b),
    })
}

// ---------------------------------------------------------------------------
// Predicted times
// ---------------------------------------------------------------------------

/// Predicted seconds for each collective of one layer's step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommEstimate {
    pub ag_z: f64,
    pub rs_z: f64,
    pub ar_fwd: f64,
    pub ar_bwd: f64,
    pub ar_data: f64,
}

impl CommEstimate {
    pub fn total(&self) -> f64 {
        self.ag_z + self.rs_z + self.ar_fwd + self.ar_bwd + self.ar_data
    }
}

/// Volume over effective bandwidth, per collective. The forward all-reduce
/// travels the axis tiling weight rows, the backward one the axis tiling
/// weight columns, so transposed layers swap the two bandwidths.
pub fn layer_comm_time(
    spec: &LayerSpec,
    config: &GridConfig,
    cluster: &ClusterSpec,
    bytes_per_element: usize,
) -> Result<CommEstimate> {
    let v = layer_volumes(spec, config, bytes_per_element)?;
    let bw = effective_bandwidths(config, cluster)?;
    let t = |volume: u128, beta: f64| volume as f64 / beta;
    Ok(CommEstimate {
        ag_z: t(v.ag_z, bw.beta_z),
        rs_z: t(v.rs_z, bw.beta_z),
        ar_fwd: t(v.ar_fwd, bw.along(row_weight_axis(spec.transposed))),
        ar_bwd: t(v.ar_bwd, bw.along(col_weight_axis(spec.transposed))),
        ar_data: t(v.ar_data, bw.beta_data),
    })
}

/// Per-layer estimates for a whole network.
pub fn network_comm_time(
    specs: &[LayerSpec],
    config: &GridConfig,
    cluster: &ClusterSpec,
    bytes_per_element: usize,
) -> Result<Vec<CommEstimate>> {
    specs
        .iter()
        .map(|s| layer_comm_time(s, config, cluster, bytes_per_element))
        .collect()
}

pub fn total_comm_time(estimates: &[CommEstimate]) -> f64 {
    estimates.iter().map(CommEstimate::total).sum()
}

// ---------------------------------------------------------------------------
// Configuration ranking
// ---------------------------------------------------------------------------

/// One grid configuration with its predicted step communication time.
#[derive(Debug, Clone, Serialize)]
pub struct RankedConfig {
    pub config: GridConfig,
    pub predicted_seconds: f64,
}

/// Every feasible configuration for `total_workers`, cheapest first. Ties
/// break lexicographically on (g_x, g_y, g_z, g_data). Configurations any
/// layer cannot divide are skipped; if none survive, the whole request is
/// infeasible.
pub fn rank_configs(
    specs: &[LayerSpec],
    total_workers: usize,
    cluster: &ClusterSpec,
    bytes_per_element: usize,
) -> Result<Vec<RankedConfig>> {
    if specs.is_empty() {
        return Err(Error::Config("ranking needs at least one layer".into()));
    }
    let mut rows = Vec::new();
    for config in enumerate_configs(total_workers) {
        if specs.iter().any(|s| s.validate(&config).is_err()) {
            continue;
        }
        let estimates = network_comm_time(specs, &config, cluster, bytes_per_element)?;
        rows.push(RankedConfig { config, predicted_seconds: total_comm_time(&estimates) });
    }
    if rows.is_empty() {
        return Err(Error::Infeasible(format!(
            "no grid over {total_workers} workers divides every layer"
        )));
    }
    rows.sort_by(|a, b| {
        a.predicted_seconds
            .partial_cmp(&b.predicted_seconds)
            .expect("predictions are finite")
            .then_with(|| a.config.cmp(&b.config))
    });
    Ok(rows)
}

//! The virtual 4D worker grid.
//!
//! Workers (GPUs in the modeled system) are arranged in a four-dimensional
//! virtual grid with axes X, Y, Z and DATA. The X axis is innermost: ranks
//! that differ only in their X coordinate are consecutive. Y varies next,
//! then Z, and the DATA axis is outermost. Placement onto physical nodes is
//! by consecutive blocks of `g_node` ranks, so innermost axes land on the
//! same node first and enjoy the fastest links.
//!
//! [`Grid::groups`] yields the process groups in which collectives run: one
//! group per combination of the other three coordinates, members ordered by
//! their coordinate along the group axis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Axes
// ---------------------------------------------------------------------------

/// One axis of the virtual grid, in hierarchy order (X innermost).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
    Data,
}

impl Axis {
    /// All axes, innermost first. The position of an axis in this list is
    /// its hierarchy level.
    pub const ALL: [Axis; 4] = [Axis::X, Axis::Y, Axis::Z, Axis::Data];

    /// Hierarchy level: X = 0, Y = 1, Z = 2, DATA = 3.
    pub fn level(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
            Axis::Data => 3,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
            Axis::Data => "data",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Grid configuration
// ---------------------------------------------------------------------------

/// Sizes of the four grid axes. The product is the total worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridConfig {
    pub g_x: usize,
    pub g_y: usize,
    pub g_z: usize,
    pub g_data: usize,
}

impl GridConfig {
    pub fn new(g_x: usize, g_y: usize, g_z: usize, g_data: usize) -> Result<Self> {
        let cfg = GridConfig { g_x, g_y, g_z, g_data };
        if g_x == 0 || g_y == 0 || g_z == 0 || g_data == 0 {
            return Err(Error::Config(format!("grid factors must be nonzero, got {cfg}")));
        }
        Ok(cfg)
    }

    /// Total workers: the product of all four factors.
    pub fn total(&self) -> usize {
        self.g_x * self.g_y * self.g_z * self.g_data
    }

    /// Workers per data-parallel replica.
    pub fn tensor(&self) -> usize {
        self.g_x * self.g_y * self.g_z
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.g_x,
            Axis::Y => self.g_y,
            Axis::Z => self.g_z,
            Axis::Data => self.g_data,
        }
    }

    /// Product of the extents of all axes strictly inner to `axis`.
    ///
    /// This is also the rank stride between consecutive members of a group
    /// along `axis`, and the number of such groups that run simultaneously
    /// inside one replica of the enclosing level.
    pub fn inner_product(&self, axis: Axis) -> usize {
        Axis::ALL[..axis.level()]
            .iter()
            .map(|a| self.extent(*a))
            .product()
    }
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.g_x, self.g_y, self.g_z, self.g_data)
    }
}

impl FromStr for GridConfig {
    type Err = Error;

    /// Parses `"gx,gy,gz,gdata"` (also accepts `x` as the separator).
    fn from_str(s: &str) -> Result<Self> {
        let sep = if s.contains(',') { ',' } else { 'x' };
        let parts: Vec<&str> = s.split(sep).collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "expected four comma-separated grid factors, got {s:?}"
            )));
        }
        let mut v = [0usize; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad grid factor {part:?} in {s:?}")))?;
        }
        GridConfig::new(v[0], v[1], v[2], v[3])
    }
}

// ---------------------------------------------------------------------------
// Coordinates and groups
// ---------------------------------------------------------------------------

/// Position of one rank in the grid: `i` along X, `j` along Y, `k` along Z,
/// `d` along DATA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coords {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub d: usize,
}

impl Coords {
    pub fn along(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.i,
            Axis::Y => self.j,
            Axis::Z => self.k,
            Axis::Data => self.d,
        }
    }
}

/// A set of ranks that communicate with each other in one collective.
/// Members are ordered by their coordinate along the group's axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessGroup {
    pub axis: Axis,
    pub members: Vec<usize>,
}

impl ProcessGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Rank stride between consecutive members. Hierarchy groups always have
    /// a uniform stride equal to the product of the inner axis extents.
    pub fn stride(&self) -> usize {
        if self.members.len() < 2 {
            1
        } else {
            self.members[1] - self.members[0]
        }
    }
}

// ---------------------------------------------------------------------------
// Node placement
// ---------------------------------------------------------------------------

/// Block placement of ranks onto physical nodes: node `r / g_node` hosts
/// rank `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeMap {
    g_node: usize,
}

impl NodeMap {
    pub fn new(g_node: usize) -> Result<Self> {
        if g_node == 0 {
            return Err(Error::Config("g_node must be nonzero".into()));
        }
        Ok(NodeMap { g_node })
    }

    pub fn g_node(&self) -> usize {
        self.g_node
    }

    pub fn node_of(&self, rank: usize) -> usize {
        rank / self.g_node
    }
}

// ---------------------------------------------------------------------------
// The grid itself
// ---------------------------------------------------------------------------

/// A concrete grid: a validated configuration plus node placement.
#[derive(Debug, Clone)]
pub struct Grid {
    config: GridConfig,
    node_map: NodeMap,
}

impl Grid {
    /// Builds a grid, checking that the factor product matches
    /// `total_workers`.
    pub fn build(total_workers: usize, config: GridConfig, g_node: usize) -> Result<Grid> {
        if config.g_x == 0 || config.g_y == 0 || config.g_z == 0 || config.g_data == 0 {
            return Err(Error::Config(format!("grid factors must be nonzero, got {config}")));
        }
        if config.total() != total_workers {
            return Err(Error::Config(format!(
                "grid {config} has {} workers, expected {total_workers}",
                config.total()
            )));
        }
        Ok(Grid {
            config,
            node_map: NodeMap::new(g_node)?,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn total_workers(&self) -> usize {
        self.config.total()
    }

    pub fn node_map(&self) -> &NodeMap {
        &self.node_map
    }

    /// Inverse of [`Grid::coords_to_rank`].
    pub fn rank_to_coords(&self, rank: usize) -> Coords {
        debug_assert!(rank < self.total_workers());
        let c = &self.config;
        Coords {
            i: rank % c.g_x,
            j: (rank / c.g_x) % c.g_y,
            k: (rank / (c.g_x * c.g_y)) % c.g_z,
            d: rank / (c.g_x * c.g_y * c.g_z),
        }
    }

    /// Rank of a coordinate: X varies fastest, DATA slowest.
    pub fn coords_to_rank(&self, coords: Coords) -> usize {
        let c = &self.config;
        debug_assert!(
            coords.i < c.g_x && coords.j < c.g_y && coords.k < c.g_z && coords.d < c.g_data
        );
        coords.i + c.g_x * (coords.j + c.g_y * (coords.k + c.g_z * coords.d))
    }

    /// All process groups along `axis`, ordered by the rank of their first
    /// member. Every rank appears in exactly one group.
    pub fn groups(&self, axis: Axis) -> Vec<ProcessGroup> {
        let extent = self.config.extent(axis);
        let total = self.total_workers();
        let mut groups = Vec::with_capacity(total / extent);
        let mut seen = vec![false; total];
        for rank in 0..total {
            if seen[rank] {
                continue;
            }
            let group = self.group_of(rank, axis);
            for &m in &group.members {
                seen[m] = true;
            }
            groups.push(group);
        }
        groups
    }

    /// The group along `axis` that contains `rank`.
    pub fn group_of(&self, rank: usize, axis: Axis) -> ProcessGroup {
        let extent = self.config.extent(axis);
        let mut coords = self.rank_to_coords(rank);
        let members = (0..extent)
            .map(|v| {
                match axis {
                    Axis::X => coords.i = v,
                    Axis::Y => coords.j = v,
                    Axis::Z => coords.k = v,
                    Axis::Data => coords.d = v,
                }
                self.coords_to_rank(coords)
            })
            .collect();
        ProcessGroup { axis, members }
    }
}

// ---------------------------------------------------------------------------
// Configuration enumeration
// ---------------------------------------------------------------------------

/// All ordered factorizations of `total_workers` into four factors, in
/// lexicographic order of `(g_x, g_y, g_z, g_data)`.
pub fn enumerate_configs(total_workers: usize) -> Vec<GridConfig> {
    enumerate_configs_where(total_workers, |_| true)
}

/// Like [`enumerate_configs`], restricted to configs satisfying `keep`.
pub fn enumerate_configs_where(
    total_workers: usize,
    keep: impl Fn(&GridConfig) -> bool,
) -> Vec<GridConfig> {
    let mut out = Vec::new();
    if total_workers == 0 {
        return out;
    }
    for g_x in divisors(total_workers) {
        let rest_x = total_workers / g_x;
        for g_y in divisors(rest_x) {
            let rest_y = rest_x / g_y;
            for g_z in divisors(rest_y) {
                let g_data = rest_y / g_z;
                let cfg = GridConfig { g_x, g_y, g_z, g_data };
                if keep(&cfg) {
                    out.push(cfg);
                }
            }
        }
    }
    out
}

/// Divisors of `n` in ascending order.
fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    large.reverse();
    small.extend(large);
    small
}

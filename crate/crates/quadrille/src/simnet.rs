//! Deterministic in-memory message transport with ring collectives.
//!
//! All collectives run the classic ring algorithms: an all-gather moves
//! `(p-1) * s` bytes out of every rank for shards of `s` bytes, a
//! reduce-scatter moves `(p-1)/p * n`, and an all-reduce is a reduce-scatter
//! followed by an all-gather, `2 * (p-1)/p * n` in total. Reductions sum in
//! ring arrival order, which is fixed by the deterministic ring layout, so
//! repeated runs produce bit-identical doubles.
//!
//! Rings are laid out to cross node boundaries as rarely as possible: a
//! ring visits each node's members consecutively, nodes in ascending id
//! order. A ring confined to one node has zero crossings; a ring spanning
//! `k` nodes has exactly `k`.
//!
//! Timing uses a flow-level event engine with zero latency. A ring fully
//! inside a node runs at the profiled intra-node bandwidth for its
//! (inner-product, group-size) key. A ring that crosses nodes is bottlenecked
//! by its node-boundary links: every directed node pair offers `beta_inter`,
//! split equally among the rings concurrently crossing it, with at most
//! `g_node` sharers (a node cannot drive more inter-node ring links than it
//! has workers). Node-internal hops of a spanning ring are never the
//! bottleneck, matching clusters whose intra-node links are the faster ones.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid, NodeMap, ProcessGroup};

/// Bytes per gigabyte: file formats speak GB/s, everything internal is B/s.
pub const GIGA: f64 = 1e9;

// ---------------------------------------------------------------------------
// Cluster description
// ---------------------------------------------------------------------------

/// Bandwidth description of the modeled cluster.
///
/// `intra_table` holds profiled intra-node bandwidths keyed by
/// `(inner_product, group_size)`: the observed per-ring bandwidth when
/// `inner_product` rings of `group_size` workers each run simultaneously
/// inside one node. Entries therefore already account for intra-node
/// sharing. All stored bandwidths are in bytes per second.
#[derive(Debug, Clone)]
pub struct ClusterSpec {
    g_node: usize,
    beta_inter: f64,
    intra: BTreeMap<(usize, usize), f64>,
}

impl ClusterSpec {
    /// `beta_inter` and the table entries are in bytes per second.
    pub fn new(
        g_node: usize,
        beta_inter: f64,
        intra_entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        if g_node == 0 {
            return Err(Error::Config("g_node must be nonzero".into()));
        }
        if !(beta_inter > 0.0) || !beta_inter.is_finite() {
            return Err(Error::Config(format!(
                "inter-node bandwidth must be positive and finite, got {beta_inter}"
            )));
        }
        let mut intra = BTreeMap::new();
        for (inner, size, bw) in intra_entries {
            if inner == 0 || size < 2 {
                return Err(Error::Config(format!(
                    "intra_table key (inner_product={inner}, group_size={size}) is malformed"
                )));
            }
            if inner * size > g_node {
                return Err(Error::Config(format!(
                    "intra_table key (inner_product={inner}, group_size={size}) \
                     does not fit in a node of {g_node} workers"
                )));
            }
            if !(bw > 0.0) || !bw.is_finite() {
                return Err(Error::Config(format!(
                    "intra_table bandwidth for ({inner}, {size}) must be positive, got {bw}"
                )));
            }
            intra.insert((inner, size), bw);
        }
        Ok(ClusterSpec { g_node, beta_inter, intra })
    }

    /// A plausible cluster for tests and demos: every in-node key gets
    /// `intra_base / inner_product` GB/s, so per-ring bandwidth decreases
    /// monotonically with the number of simultaneous rings.
    pub fn synthetic(g_node: usize, beta_inter_gbps: f64, intra_base_gbps: f64) -> ClusterSpec {
        let mut entries = Vec::new();
        for inner in 1..=g_node {
            for size in 2..=g_node {
                if inner * size <= g_node {
                    entries.push((inner, size, intra_base_gbps / inner as f64 * GIGA));
                }
            }
        }
        ClusterSpec::new(g_node, beta_inter_gbps * GIGA, entries)
            .expect("synthetic cluster parameters are valid by construction")
    }

    pub fn g_node(&self) -> usize {
        self.g_node
    }

    /// Inter-node bandwidth in bytes per second (one direction of one link).
    pub fn beta_inter(&self) -> f64 {
        self.beta_inter
    }

    /// Profiled intra-node bandwidth in bytes per second, or a configuration
    /// error naming the missing key.
    pub fn intra_bandwidth(&self, inner_product: usize, group_size: usize) -> Result<f64> {
        self.intra
            .get(&(inner_product, group_size))
            .copied()
            .ok_or(Error::MissingBandwidth { inner_product, group_size })
    }

    pub fn intra_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.intra.iter().map(|(&(i, s), &bw)| (i, s, bw))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ClusterFile = serde_json::from_str(s)?;
        ClusterSpec::new(
            file.g_node,
            file.beta_inter_gbps * GIGA,
            file.intra_table
                .into_iter()
                .map(|e| (e.inner_product, e.group_size, e.gbps * GIGA)),
        )
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        ClusterSpec::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = ClusterFile {
            g_node: self.g_node,
            beta_inter_gbps: self.beta_inter / GIGA,
            intra_table: self
                .intra
                .iter()
                .map(|(&(inner_product, group_size), &bw)| IntraEntry {
                    inner_product,
                    group_size,
                    gbps: bw / GIGA,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("cluster spec serializes")
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// On-disk form: bandwidths in GB/s.
#[derive(Serialize, Deserialize)]
struct ClusterFile {
    g_node: usize,
    beta_inter_gbps: f64,
    intra_table: Vec<IntraEntry>,
}

#[derive(Serialize, Deserialize)]
struct IntraEntry {
    inner_product: usize,
    group_size: usize,
    gbps: f64,
}

// ---------------------------------------------------------------------------
// Ring layout
// ---------------------------------------------------------------------------

/// A communication ring over one process group, placed onto nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingPlan {
    pub group: ProcessGroup,
    /// Members in ring order: grouped by node, nodes ascending, ranks
    /// ascending within a node. Rank `order[q]` sends to `order[(q+1) % p]`.
    pub order: Vec<usize>,
    /// Node hosting each slot of `order`.
    pub node_seq: Vec<usize>,
    /// Number of ring edges that cross a node boundary. Minimal over all
    /// cyclic orders that keep each node's members consecutive.
    pub crossings: usize,
}

/// Lays out the ring for `group` under block node placement.
pub fn ring_order(group: &ProcessGroup, nodes: &NodeMap) -> RingPlan {
    let mut order = group.members.clone();
    order.sort_by_key(|&r| (nodes.node_of(r), r));
    let node_seq: Vec<usize> = order.iter().map(|&r| nodes.node_of(r)).collect();
    let p = order.len();
    let mut crossings = 0;
    if p > 1 {
        for q in 0..p {
            if node_seq[q] != node_seq[(q + 1) % p] {
                crossings += 1;
            }
        }
    }
    RingPlan { group: group.clone(), order, node_seq, crossings }
}

impl RingPlan {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_intra_node(&self) -> bool {
        self.crossings == 0
    }

    /// Directed node pairs crossed by ring edges, in ring order.
    pub fn inter_edges(&self) -> Vec<(usize, usize)> {
        let p = self.order.len();
        let mut edges = Vec::with_capacity(self.crossings);
        if p > 1 {
            for q in 0..p {
                let (a, b) = (self.node_seq[q], self.node_seq[(q + 1) % p]);
                if a != b {
                    edges.push((a, b));
                }
            }
        }
        edges
    }

    /// Ring position of each member, in member order.
    fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0usize; self.group.members.len()];
        for (slot, &rank) in self.order.iter().enumerate() {
            let idx = self
                .group
                .members
                .iter()
                .position(|&m| m == rank)
                .expect("ring order permutes group members");
            pos[idx] = slot;
        }
        pos
    }
}

// ---------------------------------------------------------------------------
// Collectives and traffic accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollectiveKind {
    AllGather,
    ReduceScatter,
    AllReduce,
}

impl CollectiveKind {
    /// Per-rank wire volume of the ring algorithm, as a multiple of the
    /// logical payload: `(p-1)/p` for gather or scatter, twice that for the
    /// composed all-reduce.
    pub fn volume_factor(self) -> f64 {
        match self {
            CollectiveKind::AllGather | CollectiveKind::ReduceScatter => 1.0,
            CollectiveKind::AllReduce => 2.0,
        }
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CollectiveKind::AllGather => "all-gather",
            CollectiveKind::ReduceScatter => "reduce-scatter",
            CollectiveKind::AllReduce => "all-reduce",
        };
        f.write_str(s)
    }
}

/// Phase of a training iteration, used to tag traffic and timeline entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Forward,
    Backward,
    DataSync,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Forward => "fwd",
            Phase::Backward => "bwd",
            Phase::DataSync => "data",
        };
        f.write_str(s)
    }
}

/// Identifies where in a run a collective happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommTag {
    pub axis: Option<Axis>,
    pub phase: Option<Phase>,
    pub layer: Option<usize>,
}

impl CommTag {
    pub fn new(axis: Axis, phase: Phase, layer: usize) -> Self {
        CommTag { axis: Some(axis), phase: Some(phase), layer: Some(layer) }
    }

    pub fn bare() -> Self {
        CommTag::default()
    }
}

impl fmt::Display for CommTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.phase, self.layer, self.axis) {
            (Some(p), Some(l), Some(a)) => write!(f, "{p}/L{l}/{a}"),
            (Some(p), None, Some(a)) => write!(f, "{p}/{a}"),
            (None, None, Some(a)) => write!(f, "{a}"),
            _ => f.write_str("untagged"),
        }
    }
}

/// One executed collective.
#[derive(Debug, Clone, Serialize)]
pub struct CommEvent {
    pub tag: CommTag,
    pub kind: CollectiveKind,
    pub members: Vec<usize>,
    pub group_stride: usize,
    /// Logical vector length: the gathered length for an all-gather, the
    /// input length otherwise (after any padding).
    pub payload_elements: usize,
    pub sent_elements_per_rank: usize,
    pub bytes_per_rank: u64,
    pub crossings: usize,
}

impl CommEvent {
    pub fn group_size(&self) -> usize {
        self.members.len()
    }
}

/// Byte accounting for a sequence of collectives.
#[derive(Debug, Clone, Serialize)]
pub struct TrafficReport {
    per_rank_bytes: Vec<u64>,
    intra_bytes: u64,
    inter_bytes: u64,
    events: Vec<CommEvent>,
}

impl TrafficReport {
    fn new(total_workers: usize) -> Self {
        TrafficReport {
            per_rank_bytes: vec![0; total_workers],
            intra_bytes: 0,
            inter_bytes: 0,
            events: Vec::new(),
        }
    }

    pub fn per_rank_bytes(&self) -> &[u64] {
        &self.per_rank_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.per_rank_bytes.iter().sum()
    }

    /// Bytes sent over edges inside one node.
    pub fn intra_bytes(&self) -> u64 {
        self.intra_bytes
    }

    /// Bytes sent over node-boundary edges.
    pub fn inter_bytes(&self) -> u64 {
        self.inter_bytes
    }

    pub fn events(&self) -> &[CommEvent] {
        &self.events
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("traffic report serializes")
    }

    /// One CSV row per event.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(
            out,
            "tag,kind,group_size,group_stride,payload_elements,sent_elements_per_rank,bytes_per_rank,crossings"
        )?;
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.tag,
                e.kind,
                e.group_size(),
                e.group_stride,
                e.payload_elements,
                e.sent_elements_per_rank,
                e.bytes_per_rank,
                e.crossings
            )?;
        }
        Ok(())
    }
}

/// Corrupts the output of the `index`-th recorded collective. Exists so the
/// verification suite can prove it would catch a broken transport.
#[derive(Debug, Clone, Copy)]
pub struct FaultInjection {
    pub collective_index: usize,
}

/// The transport: executes collectives on per-rank `f64` vectors, records
/// traffic, and knows the node layout.
///
/// One `SimNet` stands in for the whole machine. Collectives take a slice of
/// per-member vectors (index `q` belongs to `group.members[q]`) and return
/// per-member results in the same order. Singleton groups communicate
/// nothing and record nothing.
#[derive(Debug, Clone)]
pub struct SimNet {
    node_map: NodeMap,
    bytes_per_element: usize,
    traffic: TrafficReport,
    fault: Option<FaultInjection>,
    collectives_run: usize,
}

impl SimNet {
    /// Transport for `grid` accounting two bytes per element (half-precision
    /// wire format, the modeled systems' default).
    pub fn new(grid: &Grid) -> Self {
        SimNet::with_bytes_per_element(grid, 2)
    }

    pub fn with_bytes_per_element(grid: &Grid, bytes_per_element: usize) -> Self {
        assert!(bytes_per_element > 0, "bytes_per_element must be nonzero");
        SimNet {
            node_map: *grid.node_map(),
            bytes_per_element,
            traffic: TrafficReport::new(grid.total_workers()),
            fault: None,
            collectives_run: 0,
        }
    }

    pub fn bytes_per_element(&self) -> usize {
        self.bytes_per_element
    }

    pub fn node_map(&self) -> &NodeMap {
        &self.node_map
    }

    pub fn inject_fault(&mut self, fault: FaultInjection) {
        self.fault = Some(fault);
    }

    pub fn traffic(&self) -> &TrafficReport {
        &self.traffic
    }

    /// Returns accumulated traffic and starts a fresh report.
    pub fn take_traffic(&mut self) -> TrafficReport {
        let fresh = TrafficReport::new(self.traffic.per_rank_bytes.len());
        std::mem::replace(&mut self.traffic, fresh)
    }

    /// Every member ends up with the concatenation of all members' shards,
    /// in member order. Shards must have equal lengths.
    pub fn all_gather(
        &mut self,
        tag: CommTag,
        group: &ProcessGroup,
        shards: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_member_data(group, shards)?;
        if group.len() == 1 {
            return Ok(shards.to_vec());
        }
        let gathered = gather_concat(shards);
        let mut results = vec![gathered; group.len()];
        let shard_len = shards[0].len();
        self.record(
            tag,
            CollectiveKind::AllGather,
            group,
            shard_len * group.len(),
            (group.len() - 1) * shard_len,
            &mut results,
        );
        Ok(results)
    }

    /// Member `q` ends up with the element-wise sum of every member's `q`-th
    /// segment. Input lengths must be equal and divisible by the group size.
    /// Sums accumulate in ring arrival order.
    pub fn reduce_scatter(
        &mut self,
        tag: CommTag,
        group: &ProcessGroup,
        inputs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_member_data(group, inputs)?;
        if group.len() == 1 {
            return Ok(inputs.to_vec());
        }
        let n = inputs[0].len();
        if n % group.len() != 0 {
            return Err(Error::Protocol(format!(
                "reduce-scatter payload of {n} elements is not divisible by group size {}",
                group.len()
            )));
        }
        let plan = ring_order(group, &self.node_map);
        let mut results = ring_reduce_segments(&plan, inputs);
        self.record(
            tag,
            CollectiveKind::ReduceScatter,
            group,
            n,
            (group.len() - 1) * (n / group.len()),
            &mut results,
        );
        Ok(results)
    }

    /// Every member ends up with the element-wise sum of all inputs.
    /// Composed as reduce-scatter then all-gather; payloads that do not
    /// divide by the group size are zero-padded on the wire and trimmed in
    /// the result.
    pub fn all_reduce(
        &mut self,
        tag: CommTag,
        group: &ProcessGroup,
        inputs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_member_data(group, inputs)?;
        if group.len() == 1 {
            return Ok(inputs.to_vec());
        }
        let p = group.len();
        let n = inputs[0].len();
        let padded = n.div_ceil(p) * p;

        let plan = ring_order(group, &self.node_map);
        let scattered = if padded == n {
            ring_reduce_segments(&plan, inputs)
        } else {
            let mut padded_inputs = inputs.to_vec();
            for v in &mut padded_inputs {
                v.resize(padded, 0.0);
            }
            ring_reduce_segments(&plan, &padded_inputs)
        };
        let mut gathered = gather_concat(&scattered);
        gathered.truncate(n);
        let mut results = vec![gathered; p];
        self.record(
            tag,
            CollectiveKind::AllReduce,
            group,
            padded,
            2 * (p - 1) * (padded / p),
            &mut results,
        );
        Ok(results)
    }

    fn check_member_data(&self, group: &ProcessGroup, data: &[Vec<f64>]) -> Result<()> {
        if group.is_empty() {
            return Err(Error::Protocol("collective on an empty group".into()));
        }
        if data.len() != group.len() {
            return Err(Error::Protocol(format!(
                "collective got {} member vectors for a group of {}",
                data.len(),
                group.len()
            )));
        }
        let n = data[0].len();
        if data.iter().any(|v| v.len() != n) {
            return Err(Error::Protocol("collective members disagree on payload length".into()));
        }
        Ok(())
    }

    /// Books the traffic of one executed collective and applies fault
    /// injection to its results.
    fn record(
        &mut self,
        tag: CommTag,
        kind: CollectiveKind,
        group: &ProcessGroup,
        payload_elements: usize,
        sent_elements_per_rank: usize,
        results: &mut [Vec<f64>],
    ) {
        let plan = ring_order(group, &self.node_map);
        let bytes_per_rank = (sent_elements_per_rank * self.bytes_per_element) as u64;
        let p = plan.len();
        for q in 0..p {
            let sender = plan.order[q];
            self.traffic.per_rank_bytes[sender] += bytes_per_rank;
            if plan.node_seq[q] == plan.node_seq[(q + 1) % p] {
                self.traffic.intra_bytes += bytes_per_rank;
            } else {
                self.traffic.inter_bytes += bytes_per_rank;
            }
        }
        self.traffic.events.push(CommEvent {
            tag,
            kind,
            members: group.members.clone(),
            group_stride: group.stride(),
            payload_elements,
            sent_elements_per_rank,
            bytes_per_rank,
            crossings: plan.crossings,
        });
        if let Some(fault) = self.fault {
            if self.collectives_run == fault.collective_index {
                if let Some(first) = results.first_mut().and_then(|v| v.first_mut()) {
                    *first += 1.0;
                }
            }
        }
        self.collectives_run += 1;
    }
}

/// Concatenation in member order, shared by all-gather and the tail of
/// all-reduce.
fn gather_concat(shards: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(shards.iter().map(Vec::len).sum());
    for s in shards {
        out.extend_from_slice(s);
    }
    out
}

/// Reduce-scatter arithmetic: member `q` receives the sum of everyone's
/// `q`-th segment, accumulated in ring arrival order. The segment bound for
/// ring slot `t` starts at slot `t+1` and is folded forward around the ring,
/// the destination's own contribution last.
fn ring_reduce_segments(plan: &RingPlan, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = plan.len();
    let n = inputs[0].len();
    let seg = n / p;
    let positions = plan.positions();
    let mut results = Vec::with_capacity(p);
    for (q, &t) in positions.iter().enumerate() {
        // Segment index is the member position q; arrival order depends on
        // the ring slot t of that member.
        let lo = q * seg;
        let hi = lo + seg;
        let mut acc = vec![0.0f64; seg];
        for step in 1..=p {
            let slot = (t + step) % p;
            let contributor = plan.order[slot];
            let idx = plan
                .group
                .members
                .iter()
                .position(|&m| m == contributor)
                .expect("ring slots map back to members");
            let src = &inputs[idx][lo..hi];
            if step == 1 {
                acc.copy_from_slice(src);
            } else {
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += s;
                }
            }
        }
        results.push(acc);
    }
    results
}

// ---------------------------------------------------------------------------
// Timing engine
// ---------------------------------------------------------------------------

/// Per-rank wire bytes of one ring collective moving `payload_bytes` of
/// logical data across `group_len` members.
pub fn ring_volume_bytes(kind: CollectiveKind, group_len: usize, payload_bytes: u64) -> f64 {
    if group_len < 2 {
        return 0.0;
    }
    let p = group_len as f64;
    kind.volume_factor() * (p - 1.0) / p * payload_bytes as f64
}

/// Time for one collective while the rings in `concurrent` stay active.
///
/// Sharing is static: every concurrent ring is assumed busy for the whole
/// duration. Use [`simulate_concurrent`] when transfers start together but
/// finish at different times.
pub fn simulate_collective_time(
    plan: &RingPlan,
    kind: CollectiveKind,
    payload_bytes: u64,
    cluster: &ClusterSpec,
    concurrent: &[&RingPlan],
) -> Result<f64> {
    let volume = ring_volume_bytes(kind, plan.len(), payload_bytes);
    if volume == 0.0 {
        return Ok(0.0);
    }
    let bw = ring_bandwidth(plan, cluster, |edge| {
        1 + concurrent
            .iter()
            .filter(|c| c.inter_edges().contains(&edge))
            .count()
    })?;
    Ok(volume / bw)
}

/// Bandwidth available to `plan` given a sharer count per directed
/// node-boundary edge.
fn ring_bandwidth(
    plan: &RingPlan,
    cluster: &ClusterSpec,
    sharers: impl Fn((usize, usize)) -> usize,
) -> Result<f64> {
    if plan.is_intra_node() {
        cluster.intra_bandwidth(plan.group.stride(), plan.len())
    } else {
        let mut bw = f64::INFINITY;
        for edge in plan.inter_edges() {
            let s = sharers(edge).min(cluster.g_node()).max(1);
            bw = bw.min(cluster.beta_inter() / s as f64);
        }
        Ok(bw)
    }
}

/// One transfer for the concurrent engine.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub plan: RingPlan,
    pub kind: CollectiveKind,
    pub payload_bytes: u64,
}

/// Runs a set of transfers that all start at time zero and reallocates
/// node-boundary bandwidth whenever one finishes. Returns each transfer's
/// completion time.
pub fn simulate_concurrent(transfers: &[Transfer], cluster: &ClusterSpec) -> Result<Vec<f64>> {
    let n = transfers.len();
    let mut remaining: Vec<f64> = transfers
        .iter()
        .map(|t| ring_volume_bytes(t.kind, t.plan.len(), t.payload_bytes))
        .collect();
    let mut finish = vec![0.0f64; n];
    let mut done: Vec<bool> = remaining.iter().map(|&r| r == 0.0).collect();
    let mut now = 0.0f64;

    while done.iter().any(|&d| !d) {
        // Sharer counts over the directed edges of currently active rings.
        let mut edge_load: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (i, t) in transfers.iter().enumerate() {
            if done[i] {
                continue;
            }
            for edge in t.plan.inter_edges() {
                *edge_load.entry(edge).or_insert(0) += 1;
            }
        }
        let mut rates = vec![0.0f64; n];
        let mut dt = f64::INFINITY;
        for (i, t) in transfers.iter().enumerate() {
            if done[i] {
                continue;
            }
            let bw = ring_bandwidth(&t.plan, cluster, |edge| edge_load[&edge])?;
            rates[i] = bw;
            dt = dt.min(remaining[i] / bw);
        }
        now += dt;
        for i in 0..n {
            if done[i] {
                continue;
            }
            remaining[i] -= rates[i] * dt;
            // Tolerate rounding from the rate * dt subtraction.
            if remaining[i] <= 1e-9 * rates[i] * dt.max(1e-300) || remaining[i] <= 0.0 {
                remaining[i] = 0.0;
                done[i] = true;
                finish[i] = now;
            }
        }
    }
    Ok(finish)
}

/// Completion time of the slowest transfer in the set.
pub fn makespan(transfers: &[Transfer], cluster: &ClusterSpec) -> Result<f64> {
    Ok(simulate_concurrent(transfers, cluster)?
        .into_iter()
        .fold(0.0, f64::max))
}

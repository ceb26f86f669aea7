//! Batch timelines with and without communication overlap.
//!
//! One training step is laid out as a dependency graph over five resources:
//! a single compute stream, a Z channel carrying weight all-gathers and
//! gradient reduce-scatters, one channel per direction of activation
//! all-reduce, and a data-sync channel. The order of operations on each
//! resource is fixed; the overlap flags only remove dependency edges:
//!
//! - `oag`: weight all-gathers prefetch — layer l+1's gather no longer waits
//!   for layer l's forward to finish, only for its own channel.
//! - `oar`: the backward activation all-reduce runs concurrently with the
//!   same layer's weight-gradient compute instead of blocking it. The next
//!   layer's backward still waits for the summed gradient.
//! - `ors`: reduce-scatters become asynchronous — later backward compute no
//!   longer waits for them. Each data sync still strictly waits for its
//!   layer's reduce-scatter.
//!
//! Because flags only delete edges from a fixed-order schedule, enabling one
//! can never lengthen the batch; with no flags the timeline degenerates to
//! strict alternation, and the batch time is exactly the sum of every
//! duration in schedule order.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Flags
// ---------------------------------------------------------------------------

/// Which dependency relaxations are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OverlapFlags {
    pub oar: bool,
    pub ors: bool,
    pub oag: bool,
}

impl OverlapFlags {
    pub const NONE: OverlapFlags = OverlapFlags { oar: false, ors: false, oag: false };
    pub const FULL: OverlapFlags = OverlapFlags { oar: true, ors: true, oag: true };

    /// All eight combinations, in (oar, ors, oag) binary order.
    pub fn all_variants() -> [OverlapFlags; 8] {
        let mut out = [OverlapFlags::NONE; 8];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = OverlapFlags { oar: i & 4 != 0, ors: i & 2 != 0, oag: i & 1 != 0 };
        }
        out
    }

    /// True when every flag set here is also set in `other`.
    pub fn is_subset_of(self, other: OverlapFlags) -> bool {
        (!self.oar || other.oar) && (!self.ors || other.ors) && (!self.oag || other.oag)
    }
}

impl fmt::Display for OverlapFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [("oar", self.oar), ("ors", self.ors), ("oag", self.oag)]
            .iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for OverlapFlags {
    type Err = Error;

    /// Comma-separated flag names; empty or "none" means no overlap.
    fn from_str(s: &str) -> Result<Self> {
        let mut flags = OverlapFlags::NONE;
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "none" => {}
                "oar" => flags.oar = true,
                "ors" => flags.ors = true,
                "oag" => flags.oag = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown overlap flag {other:?}; expected oar, ors, oag, or none"
                    )))
                }
            }
        }
        Ok(flags)
    }
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// Seconds of local compute per phase of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PhaseCompute {
    pub forward: f64,
    pub backward_input: f64,
    pub backward_weight: f64,
}

impl PhaseCompute {
    pub fn total(&self) -> f64 {
        self.forward + self.backward_input + self.backward_weight
    }
}

/// Seconds per collective of one layer's step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CommCost {
    pub ag_z: f64,
    pub rs_z: f64,
    pub ar_fwd: f64,
    pub ar_bwd: f64,
    pub ar_data: f64,
}

impl CommCost {
    pub fn total(&self) -> f64 {
        self.ag_z + self.rs_z + self.ar_fwd + self.ar_bwd + self.ar_data
    }
}

impl From<crate::perfmodel::CommEstimate> for CommCost {
    fn from(e: crate::perfmodel::CommEstimate) -> Self {
        CommCost {
            ag_z: e.ag_z,
            rs_z: e.rs_z,
            ar_fwd: e.ar_fwd,
            ar_bwd: e.ar_bwd,
            ar_data: e.ar_data,
        }
    }
}

impl From<crate::pmm::StepCommTimes> for CommCost {
    fn from(t: crate::pmm::StepCommTimes) -> Self {
        CommCost {
            ag_z: t.ag_z,
            rs_z: t.rs_z,
            ar_fwd: t.ar_fwd,
            ar_bwd: t.ar_bwd,
            ar_data: t.ar_data,
        }
    }
}

// ---------------------------------------------------------------------------
// Timeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    Compute,
    Comm,
}

/// One scheduled operation. `deps` are indices of earlier events whose ends
/// bound this event's start; the resource predecessor is included.
#[derive(Debug, Clone, Serialize)]
pub struct TimelineEvent {
    pub kind: EventKind,
    pub label: &'static str,
    pub layer: usize,
    pub resource: &'static str,
    pub start: f64,
    pub end: f64,
    pub deps: Vec<usize>,
}

impl TimelineEvent {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A fully scheduled batch.
#[derive(Debug, Clone, Serialize)]
pub struct Timeline {
    pub flags: OverlapFlags,
    pub events: Vec<TimelineEvent>,
}

impl Timeline {
    /// End of the latest event.
    pub fn batch_time(&self) -> f64 {
        self.events.iter().map(|e| e.end).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("timeline serializes")
    }

    /// Chrome trace-event JSON ("X" phase events, microsecond timestamps);
    /// one track per resource. Loads in about:tracing and Perfetto.
    pub fn write_chrome_trace(&self, out: &mut impl std::io::Write) -> Result<()> {
        let tracks = ["compute", "z", "ar_fwd", "ar_bwd", "data"];
        let tid = |resource: &str| {
            tracks.iter().position(|t| *t == resource).unwrap_or(tracks.len())
        };
        let events: Vec<serde_json::Value> = self
            .events
            .iter()
            .map(|e| {
                serde_json::json!({
                    "name": format!("{} L{}", e.label, e.layer),
                    "cat": match e.kind { EventKind::Compute => "compute", EventKind::Comm => "comm" },
                    "ph": "X",
                    "ts": e.start * 1e6,
                    "dur": e.duration() * 1e6,
                    "pid": 0,
                    "tid": tid(e.resource),
                })
            })
            .collect();
        serde_json::to_writer_pretty(&mut *out, &serde_json::json!({
            "traceEvents": events,
            "displayTimeUnit": "ms",
        }))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scheduler
// ---------------------------------------------------------------------------

struct Builder {
    events: Vec<TimelineEvent>,
}

impl Builder {
    /// Start is the max end over `deps`; events must be pushed in a
    /// topological order.
    fn push(
        &mut self,
        kind: EventKind,
        label: &'static str,
        layer: usize,
        resource: &'static str,
        duration: f64,
        deps: Vec<usize>,
    ) -> usize {
        let start = deps
            .iter()
            .map(|&d| self.events[d].end)
            .fold(0.0, f64::max);
        self.events.push(TimelineEvent { kind, label, layer, resource, start, end: start + duration, deps });
        self.events.len() - 1
    }
}

/// Schedules one batch over `compute.len()` layers. Forward walks the layers
/// in order, backward in reverse, and the data syncs run after all compute,
/// serialized in layer order.
pub fn build_schedule(
    compute: &[PhaseCompute],
    comm: &[CommCost],
    flags: OverlapFlags,
) -> Result<Timeline> {
    if compute.is_empty() {
        return Err(Error::Config("schedule needs at least one layer".into()));
    }
    if compute.len() != comm.len() {
        return Err(Error::Config(format!(
            "{} compute entries but {} communication entries",
            compute.len(),
            comm.len()
        )));
    }
    let finite = |v: f64| v.is_finite() && v >= 0.0;
    for (c, t) in compute.iter().zip(comm) {
        if ![c.forward, c.backward_input, c.backward_weight].iter().all(|&v| finite(v))
            || ![t.ag_z, t.rs_z, t.ar_fwd, t.ar_bwd, t.ar_data].iter().all(|&v| finite(v))
        {
            return Err(Error::Config("durations must be finite and nonnegative".into()));
        }
    }

    let layers = compute.len();
    let mut b = Builder { events: Vec::with_capacity(8 * layers) };

    // Forward sweep.
    let mut ag = vec![0usize; layers];
    let mut fwd = vec![0usize; layers];
    let mut ar_fwd = vec![0usize; layers];
    let mut z_prev: Option<usize> = None;
    for l in 0..layers {
        let mut deps = Vec::new();
        if let Some(p) = z_prev {
            deps.push(p);
        }
        if !flags.oag && l > 0 {
            deps.push(ar_fwd[l - 1]);
        }
        ag[l] = b.push(EventKind::Comm, "ag_z", l, "z", comm[l].ag_z, deps);
        z_prev = Some(ag[l]);

        let mut deps = vec![ag[l]];
        if l > 0 {
            deps.push(fwd[l - 1]);
            deps.push(ar_fwd[l - 1]);
        }
        fwd[l] = b.push(EventKind::Compute, "fwd", l, "compute", compute[l].forward, deps);

        let mut deps = vec![fwd[l]];
        if l > 0 {
            deps.push(ar_fwd[l - 1]);
        }
        ar_fwd[l] = b.push(EventKind::Comm, "ar_fwd", l, "ar_fwd", comm[l].ar_fwd, deps);
    }

    // Backward sweep.
    let mut bwd_w = vec![0usize; layers];
    let mut rs = vec![0usize; layers];
    let mut ar_bwd_prev: Option<usize> = None;
    let mut compute_prev = fwd[layers - 1];
    let mut grad_source = ar_fwd[layers - 1];
    for l in (0..layers).rev() {
        let mut deps = vec![compute_prev, grad_source];
        if !flags.ors && l + 1 < layers {
            deps.push(rs[l + 1]);
        }
        let bwd_i =
            b.push(EventKind::Compute, "bwd_input", l, "compute", compute[l].backward_input, deps);

        let mut deps = vec![bwd_i];
        if let Some(p) = ar_bwd_prev {
            deps.push(p);
        }
        let ar_b = b.push(EventKind::Comm, "ar_bwd", l, "ar_bwd", comm[l].ar_bwd, deps);
        ar_bwd_prev = Some(ar_b);

        let mut deps = vec![bwd_i];
        if !flags.oar {
            deps.push(ar_b);
        }
        bwd_w[l] =
            b.push(EventKind::Compute, "bwd_weight", l, "compute", compute[l].backward_weight, deps);

        let mut deps = vec![bwd_w[l]];
        if let Some(p) = z_prev {
            deps.push(p);
        }
        rs[l] = b.push(EventKind::Comm, "rs_z", l, "z", comm[l].rs_z, deps);
        z_prev = Some(rs[l]);

        compute_prev = bwd_w[l];
        grad_source = ar_b;
    }

    // Data sync: strictly after the backward pass, serialized per channel.
    let last_compute = bwd_w[0];
    let mut data_prev: Option<usize> = None;
    for l in 0..layers {
        let mut deps = vec![last_compute, rs[l]];
        if let Some(p) = data_prev {
            deps.push(p);
        }
        data_prev =
            Some(b.push(EventKind::Comm, "ar_data", l, "data", comm[l].ar_data, deps));
    }

    Ok(Timeline { flags, events: b.events })
}

/// Batch times for all eight flag combinations, in `all_variants` order.
pub fn sweep_schedules(compute: &[PhaseCompute], comm: &[CommCost]) -> Result<Vec<(OverlapFlags, f64)>> {
    OverlapFlags::all_variants()
        .into_iter()
        .map(|f| Ok((f, build_schedule(compute, comm, f)?.batch_time())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(forward: f64, backward_input: f64, backward_weight: f64) -> PhaseCompute {
        PhaseCompute { forward, backward_input, backward_weight }
    }

    /// Strict alternation visits every duration once; this is the exact
    /// left-to-right order the baseline schedule serializes them in.
    fn serial_fold(compute: &[PhaseCompute], comm: &[CommCost]) -> f64 {
        let layers = compute.len();
        let mut t = 0.0;
        for l in 0..layers {
            t += comm[l].ag_z;
            t += compute[l].forward;
            t += comm[l].ar_fwd;
        }
        for l in (0..layers).rev() {
            t += compute[l].backward_input;
            t += comm[l].ar_bwd;
            t += compute[l].backward_weight;
            t += comm[l].rs_z;
        }
        for l in 0..layers {
            t += comm[l].ar_data;
        }
        t
    }

    fn random_instance(rng: &mut impl Rng, layers: usize) -> (Vec<PhaseCompute>, Vec<CommCost>) {
        let mut d = || rng.gen_range(1..=1024) as f64 / 1024.0;
        let compute = (0..layers).map(|_| c(d(), d(), d())).collect();
        let comm = (0..layers)
            .map(|_| CommCost { ag_z: d(), rs_z: d(), ar_fwd: d(), ar_bwd: d(), ar_data: d() })
            .collect();
        (compute, comm)
    }

    // ----- flags -----

    #[test]
    fn flags_parse_and_display_round_trip() {
        for flags in OverlapFlags::all_variants() {
            let parsed: OverlapFlags = flags.to_string().parse().unwrap();
            assert_eq!(parsed, flags);
        }
        assert_eq!("".parse::<OverlapFlags>().unwrap(), OverlapFlags::NONE);
        assert_eq!("oag,oar".parse::<OverlapFlags>().unwrap(), OverlapFlags {
            oar: true,
            ors: false,
            oag: true
        });
        assert!("oar,bogus".parse::<OverlapFlags>().is_err());
    }

    #[test]
    fn subset_ordering_matches_flag_containment() {
        assert!(OverlapFlags::NONE.is_subset_of(OverlapFlags::FULL));
        assert!(!OverlapFlags::FULL.is_subset_of(OverlapFlags::NONE));
        let oar = OverlapFlags { oar: true, ..OverlapFlags::NONE };
        let ors = OverlapFlags { ors: true, ..OverlapFlags::NONE };
        assert!(!oar.is_subset_of(ors));
    }

    // ----- baseline -----

    #[test]
    fn baseline_is_exactly_the_serial_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for layers in [1, 2, 3, 5] {
            let (compute, comm) = random_instance(&mut rng, layers);
            let tl = build_schedule(&compute, &comm, OverlapFlags::NONE).unwrap();
            assert_eq!(tl.batch_time(), serial_fold(&compute, &comm), "layers={layers}");
        }
    }

    #[test]
    fn baseline_leaves_no_gaps() {
        let (compute, comm) = random_instance(&mut ChaCha8Rng::seed_from_u64(8), 3);
        let tl = build_schedule(&compute, &comm, OverlapFlags::NONE).unwrap();
        let mut ends: Vec<f64> = tl.events.iter().map(|e| e.end).collect();
        ends.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Every event starts at the end of the previous one in serial order.
        let mut starts: Vec<f64> = tl.events.iter().map(|e| e.start).collect();
        starts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..starts.len() {
            assert_eq!(starts[i], ends[i - 1]);
        }
    }

    // ----- single-flag hand cases -----

    #[test]
    fn prefetch_hides_the_second_weight_gather() {
        // Two layers: 10 ms forward each, 4 ms gather each, nothing else.
        let compute = vec![c(10e-3, 0.0, 0.0); 2];
        let comm = vec![CommCost { ag_z: 4e-3, ..CommCost::default() }; 2];
        let base = build_schedule(&compute, &comm, OverlapFlags::NONE).unwrap();
        assert!((base.batch_time() - 28e-3).abs() < 1e-12);
        let oag = OverlapFlags { oag: true, ..OverlapFlags::NONE };
        let tl = build_schedule(&compute, &comm, oag).unwrap();
        // Gather 1 runs during forward 0; only gather 0 stays exposed.
        assert!((tl.batch_time() - 24e-3).abs() < 1e-12);
    }

    #[test]
    fn concurrent_all_reduce_hides_behind_weight_gradients() {
        // One layer: 10 ms per backward phase, 4 ms gradient all-reduce.
        let compute = vec![c(0.0, 10e-3, 10e-3)];
        let comm = vec![CommCost { ar_bwd: 4e-3, ..CommCost::default() }];
        let base = build_schedule(&compute, &comm, OverlapFlags::NONE).unwrap();
        assert!((base.batch_time() - 24e-3).abs() < 1e-12);
        let oar = OverlapFlags { oar: true, ..OverlapFlags::NONE };
        let tl = build_schedule(&compute, &comm, oar).unwrap();
        assert!((tl.batch_time() - 20e-3).abs() < 1e-12);
    }

    #[test]
    fn async_reduce_scatter_hides_behind_later_backward() {
        // Two layers, 10 ms backward phases, 6 ms scatter on the first-done
        // layer, nothing on the last.
        let compute = vec![c(0.0, 10e-3, 10e-3); 2];
        let comm = vec![
            CommCost::default(),
            CommCost { rs_z: 6e-3, ..CommCost::default() },
        ];
        let base = build_schedule(&compute, &comm, OverlapFlags::NONE).unwrap();
        assert!((base.batch_time() - 46e-3).abs() < 1e-12);
        let ors = OverlapFlags { ors: true, ..OverlapFlags::NONE };
        let tl = build_schedule(&compute, &comm, ors).unwrap();
        assert!((tl.batch_time() - 40e-3).abs() < 1e-12);
    }

    #[test]
    fn next_backward_always_waits_for_the_summed_gradient() {
        // With oar the weight gradient overlaps the all-reduce, but the next
        // layer's backward input compute cannot start before the sum lands.
        let compute = vec![c(0.0, 10e-3, 1e-3); 2];
        let comm = vec![
            CommCost::default(),
            CommCost { ar_bwd: 50e-3, ..CommCost::default() },
        ];
        let tl = build_schedule(&compute, &comm, OverlapFlags::FULL).unwrap();
        // bwd_input(1): 0..10 ms; ar_bwd(1): 10..60 ms; bwd_input(0) waits.
        let bw0 = tl
            .events
            .iter()
            .find(|e| e.label == "bwd_input" && e.layer == 0)
            .unwrap();
        assert!((bw0.start - 60e-3).abs() < 1e-12);
    }

    #[test]
    fn data_sync_waits_for_its_reduce_scatter_and_all_compute() {
        let compute = vec![c(1e-3, 1e-3, 1e-3); 2];
        let comm = vec![
            CommCost { rs_z: 5e-3, ar_data: 2e-3, ..CommCost::default() },
            CommCost { ar_data: 2e-3, ..CommCost::default() },
        ];
        let tl = build_schedule(&compute, &comm, OverlapFlags::FULL).unwrap();
        let rs0 = tl.events.iter().find(|e| e.label == "rs_z" && e.layer == 0).unwrap();
        let d0 = tl.events.iter().find(|e| e.label == "ar_data" && e.layer == 0).unwrap();
        let d1 = tl.events.iter().find(|e| e.label == "ar_data" && e.layer == 1).unwrap();
        assert!(d0.start >= rs0.end);
        // Serialized on one channel, in layer order.
        assert!(d1.start >= d0.end);
    }

    // ----- monotonicity and full overlap -----

    #[test]
    fn enabling_flags_never_slows_the_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let layers = rng.gen_range(1..5);
            let (compute, comm) = random_instance(&mut rng, layers);
            let times = sweep_schedules(&compute, &comm).unwrap();
            for (fa, ta) in &times {
                for (fb, tb) in &times {
                    if fa.is_subset_of(*fb) {
                        assert!(tb <= ta, "{fa} -> {fb} went from {ta} to {tb}");
                    }
                }
            }
        }
    }

    #[test]
    fn fully_hidden_communication_costs_exactly_zero() {
        // Dyadic durations; every overlappable collective fits its window
        // and every unhideable one is zero.
        let compute = vec![c(0.5, 0.25, 0.5), c(0.25, 0.5, 0.375)];
        let comm = vec![
            CommCost { ag_z: 0.0, rs_z: 0.0, ar_fwd: 0.0, ar_bwd: 0.25, ar_data: 0.0 },
            CommCost { ag_z: 0.125, rs_z: 0.25, ar_fwd: 0.0, ar_bwd: 0.375, ar_data: 0.0 },
        ];
        let total_compute: f64 = compute.iter().map(PhaseCompute::total).sum();
        let tl = build_schedule(&compute, &comm, OverlapFlags::FULL).unwrap();
        assert_eq!(tl.batch_time(), total_compute);
        // The same instance without flags pays for every byte.
        let base = build_schedule(&compute, &comm, OverlapFlags::NONE).unwrap();
        assert!(base.batch_time() > total_compute);
    }

    // ----- output formats -----

    #[test]
    fn timeline_serializes_and_traces() {
        let (compute, comm) = random_instance(&mut ChaCha8Rng::seed_from_u64(9), 2);
        let tl = build_schedule(&compute, &comm, OverlapFlags::FULL).unwrap();
        let v = tl.to_json();
        assert!(v["events"].as_array().unwrap().len() == tl.events.len());
        let mut buf = Vec::new();
        tl.write_chrome_trace(&mut buf).unwrap();
        let trace: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let events = trace["traceEvents"].as_array().unwrap();
        assert_eq!(events.len(), tl.events.len());
        assert!(events.iter().all(|e| e["ts"].as_f64().unwrap() >= 0.0));
    }

    #[test]
    fn schedule_rejects_malformed_inputs() {
        assert!(build_schedule(&[], &[], OverlapFlags::NONE).is_err());
        assert!(build_schedule(&[c(1.0, 1.0, 1.0)], &[], OverlapFlags::NONE).is_err());
        let bad = CommCost { ag_z: -1.0, ..CommCost::default() };
        assert!(build_schedule(&[c(1.0, 1.0, 1.0)], &[bad], OverlapFlags::NONE).is_err());
    }

    #[test]
    fn deps_reference_earlier_events_only() {
        let (compute, comm) = random_instance(&mut ChaCha8Rng::seed_from_u64(10), 3);
        for flags in OverlapFlags::all_variants() {
            let tl = build_schedule(&compute, &comm, flags).unwrap();
            for (i, e) in tl.events.iter().enumerate() {
                assert!(e.deps.iter().all(|&d| d < i));
                assert!(e.start >= e.deps.iter().map(|&d| tl.events[d].end).fold(0.0, f64::max));
            }
        }
    }
}

//! Ring collectives on the simulated transport: what each rank sends, how
//! rings are laid out over nodes, and what the traffic ledger records.
//!
//! ```bash
//! cargo run -p quadrille --example ring_collectives
//! ```

use quadrille::grid::{Axis, Grid, GridConfig};
use quadrille::simnet::{
    ring_order, simulate_collective_time, ClusterSpec, CollectiveKind, CommTag, SimNet,
};

fn main() {
    // Eight workers, four per node: the Z axis (stride 4) spans both nodes.
    let config = GridConfig::new(2, 2, 2, 1).unwrap();
    let grid = Grid::build(config.total(), config, 4).unwrap();
    let mut net = SimNet::with_bytes_per_element(&grid, 8);

    println!("grid {config}, {} workers per node", grid.node_map().g_node());
    println!();

    // All-gather along Z: every rank contributes its shard, both end up
    // with the concatenation in member order.
    let group = grid.group_of(0, Axis::Z);
    let shards = vec![vec![1.0, 2.0], vec![10.0, 20.0]];
    let gathered = net.all_gather(CommTag::bare(), &group, &shards).unwrap();
    println!("all-gather over Z group {:?}:", group.members);
    println!("  in:  {shards:?}");
    println!("  out: {gathered:?}");

    // All-reduce along Y: elementwise sums, identical on every member.
    let group = grid.group_of(0, Axis::Y);
    let inputs = vec![vec![1.0, 1.0, 1.0], vec![0.5, 0.25, 0.125]];
    let summed = net.all_reduce(CommTag::bare(), &group, &inputs).unwrap();
    println!("all-reduce over Y group {:?}:", group.members);
    println!("  in:  {inputs:?}");
    println!("  out: {summed:?}");
    println!();

    // The ledger knows who sent how much and which sends crossed nodes.
    let traffic = net.take_traffic();
    println!("traffic after both collectives:");
    println!("  per-rank bytes: {:?}", traffic.per_rank_bytes());
    println!("  intra-node {} B, inter-node {} B", traffic.intra_bytes(), traffic.inter_bytes());
    for event in traffic.events() {
        println!(
            "  {:?} over {:?}: {} B/rank, {} node crossing(s)",
            event.kind,
            event.members,
            event.bytes_per_rank,
            event.crossings
        );
    }
    println!();

    // Rings visit all of a node's members before leaving it, so a group
    // spanning k nodes crosses boundaries exactly k times.
    let cluster = ClusterSpec::synthetic(4, 25.0, 320.0);
    let z_group = grid.group_of(0, Axis::Z);
    let plan = ring_order(&z_group, grid.node_map());
    println!("Z ring order {:?} crosses nodes {} time(s)", plan.order, plan.crossings);

    // One megabyte all-reduced: inter-node rings run at the boundary-link
    // rate, intra-node rings at the profiled rate.
    for (label, axis) in [("X (intra)", Axis::X), ("Z (inter)", Axis::Z)] {
        let group = grid.group_of(0, axis);
        let plan = ring_order(&group, grid.node_map());
        let t =
            simulate_collective_time(&plan, CollectiveKind::AllReduce, 1 << 20, &cluster, &[])
                .unwrap();
        println!("all-reduce of 1 MiB along {label}: {t:.3e} s");
    }
}

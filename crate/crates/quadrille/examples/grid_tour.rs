//! A walk through the four-axis worker grid: rank/coordinate mapping, the
//! process groups each axis induces, node placement, and the enumeration of
//! every factorization of a worker count.
//!
//! ```bash
//! cargo run -p quadrille --example grid_tour
//! ```

use quadrille::grid::{enumerate_configs, Axis, Grid, GridConfig};

fn main() {
    let config = GridConfig::new(2, 2, 2, 2).unwrap();
    let grid = Grid::build(config.total(), config, 8).unwrap();

    println!("grid {config}: {} workers, {} per node", config.total(), grid.node_map().g_node());
    println!();

    // X varies fastest in the rank order, DATA slowest.
    println!("rank -> (i, j, k, d) -> node");
    for rank in 0..config.total() {
        let c = grid.rank_to_coords(rank);
        let node = grid.node_map().node_of(rank);
        println!("  {rank:>2} -> ({}, {}, {}, {}) -> node {node}", c.i, c.j, c.k, c.d);
        assert_eq!(grid.coords_to_rank(c), rank);
    }
    println!();

    // Groups along an axis hold ranks that differ only in that coordinate;
    // their stride is the product of the extents inside the axis.
    for axis in Axis::ALL {
        let groups = grid.groups(axis);
        let stride = config.inner_product(axis);
        println!("{axis:>4}-axis: {} group(s), member stride {stride}", groups.len());
        for g in &groups {
            println!("        {:?}", g.members);
        }
    }
    println!();

    // Every ordered factorization of a worker count is a candidate layout.
    let workers = 12;
    let configs = enumerate_configs(workers);
    println!("{} layouts factor {workers} workers:", configs.len());
    for chunk in configs.chunks(8) {
        let row: Vec<String> = chunk.iter().map(|c| c.to_string()).collect();
        println!("  {}", row.join("  "));
    }
}

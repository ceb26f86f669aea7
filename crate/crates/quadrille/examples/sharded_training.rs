//! One training step on a weight-sharded layer stack, replayed against a
//! serial implementation of the same mathematics to show they agree.
//!
//! ```bash
//! cargo run -p quadrille --example sharded_training
//! ```

use quadrille::grid::{Grid, GridConfig};
use quadrille::matrix::DenseMatrix;
use quadrille::pmm::{alternating_specs, oracle, Network};
use quadrille::simnet::SimNet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // Eight workers on two nodes: X and Y tile the weights, DATA splits the
    // batch in half.
    let config = GridConfig::new(2, 2, 1, 2).unwrap();
    let grid = Grid::build(config.total(), config, 4).unwrap();
    let specs = alternating_specs(8, &[8, 12, 8]);

    let mut network = Network::build_seeded(&specs, &grid, 7).unwrap();
    let mut net = SimNet::with_bytes_per_element(&grid, 8);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let batch = DenseMatrix::random(8, 8, &mut rng);

    let step = network.step(&batch, &grid, &mut net).unwrap();
    println!("grid {config}, {} layers, batch 8x8", specs.len());
    println!("distributed loss: {:.6}", step.loss);
    println!();

    // The serial route reassembles the global weights and runs the whole
    // batch on one worker. Losses, outputs, and every gradient must match
    // to rounding error.
    let weights: Vec<DenseMatrix> = (0..specs.len())
        .map(|i| network.weight_global(i, &grid).unwrap())
        .collect();
    let serial = oracle::backward(&weights, &batch);

    println!("serial loss:      {:.6}", serial.loss);
    println!("loss difference:  {:.3e}", (step.loss - serial.loss).abs());

    let output = step.output.gather(&grid).unwrap();
    println!(
        "output difference: {:.3e}",
        output.max_abs_diff(serial.outputs.last().unwrap())
    );

    for (idx, grad) in step.weight_grads.iter().enumerate() {
        let gathered = grad.gather(&grid).unwrap();
        println!(
            "layer {idx} weight-gradient difference: {:.3e}",
            gathered.max_abs_diff(&serial.weight_grads[idx])
        );
    }
    let input_grad = step.input_grad.gather(&grid).unwrap();
    println!(
        "input-gradient difference: {:.3e}",
        input_grad.max_abs_diff(&serial.input_grad)
    );
    println!();

    // Everything the step moved is on the ledger: gathers and scatters of
    // weight blocks along Z would appear here too if g_z were > 1.
    let traffic = net.take_traffic();
    println!(
        "step traffic: {} collectives, {} B total ({} B intra-node, {} B inter-node)",
        traffic.events().len(),
        traffic.total_bytes(),
        traffic.intra_bytes(),
        traffic.inter_bytes()
    );
    for event in traffic.events() {
        println!(
            "  {:<24} {:>6} B/rank over {:?}",
            format!("{} {}", event.tag, event.kind),
            event.bytes_per_rank,
            event.members
        );
    }
}

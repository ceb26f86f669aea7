//! Picking the fastest matmul operand layout per shape by timing the real
//! kernels, the way the distributed layers choose their local mode.
//!
//! ```bash
//! cargo run -p quadrille --example tune_matmul --release
//! ```

use quadrille::pmm::{tune_matmul_mode, WallClockTimer};

fn main() {
    // Tall, square, and wide products. The timer runs each kernel for real
    // on seeded operands; layout transposes happen outside the timed region,
    // so the numbers isolate the inner loop's memory-access pattern.
    let shapes = [(512usize, 64usize, 512usize), (256, 256, 256), (64, 512, 64)];
    let trials = 5;

    println!("{:<16} {:>10} {:>10} {:>10}   winner", "m x k x n", "NN ms", "NT ms", "TN ms");
    for shape in shapes {
        let mut timer = WallClockTimer::new(42);
        let outcome = tune_matmul_mode(shape, &mut timer, trials).unwrap();
        let [nn, nt, tn] = outcome.median_seconds;
        println!(
            "{:<16} {:>10.3} {:>10.3} {:>10.3}   {:?}",
            format!("{}x{}x{}", shape.0, shape.1, shape.2),
            nn * 1e3,
            nt * 1e3,
            tn * 1e3,
            outcome.mode
        );
    }
    println!();
    println!("medians over {trials} trials; ties resolve NN, then NT, then TN");
}

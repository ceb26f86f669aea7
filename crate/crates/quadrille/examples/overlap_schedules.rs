//! What hiding communication behind compute buys: sweep all eight overlap
//! flag combinations over one batch and walk the winning timeline.
//!
//! ```bash
//! cargo run -p quadrille --example overlap_schedules
//! ```

use quadrille::overlap::{build_schedule, sweep_schedules, CommCost, OverlapFlags, PhaseCompute};

fn main() {
    // Four layers with compute phases roomy enough to hide most of the
    // communication — the regime the relaxations are designed for.
    let compute: Vec<PhaseCompute> = (0..4)
        .map(|l| PhaseCompute {
            forward: 10.0 + l as f64,
            backward_input: 9.0,
            backward_weight: 11.0,
        })
        .collect();
    let comm: Vec<CommCost> = (0..4)
        .map(|l| CommCost {
            ag_z: 6.0,
            rs_z: 5.0,
            ar_fwd: 2.0,
            ar_bwd: 7.0 + l as f64,
            ar_data: 3.0,
        })
        .collect();

    let serial: f64 = compute.iter().map(PhaseCompute::total).sum::<f64>()
        + comm.iter().map(CommCost::total).sum::<f64>();
    println!("4 layers; everything serialized would take {serial:.1} s");
    println!();

    // Each flag relaxes one dependency class: oag prefetches the next
    // layer's weight gather, ors defers reduce-scatters behind later
    // backward compute, oar slides weight-gradient all-reduces under the
    // rest of the backward pass.
    println!("{:<12} {:>10} {:>10}", "flags", "batch s", "hidden s");
    for (flags, seconds) in sweep_schedules(&compute, &comm).unwrap() {
        println!("{:<12} {:>10.1} {:>10.1}", flags.to_string(), seconds, serial - seconds);
    }
    println!();

    // The timeline behind the full-overlap number: communication tracks
    // run beside the compute track, and only the unhidable tail of the
    // data sync extends past the last weight-gradient kernel.
    let timeline = build_schedule(&compute, &comm, OverlapFlags::FULL).unwrap();
    println!(
        "full-overlap timeline: {} events, batch ends at {:.1} s",
        timeline.events.len(),
        timeline.batch_time()
    );
    let width = 60.0 / timeline.batch_time();
    for event in &timeline.events {
        let pad = (event.start * width).round() as usize;
        let len = ((event.duration() * width).round() as usize).max(1);
        println!(
            "  {:<10} L{} {:>6.1}..{:<6.1} |{}{}",
            event.label,
            event.layer,
            event.start,
            event.end,
            " ".repeat(pad),
            "#".repeat(len)
        );
    }
}

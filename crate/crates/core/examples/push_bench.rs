use silbox_core::diffmath::{Real, Tape};
use std::time::Instant;

fn main() {
    let tape = Tape::new();
    for round in 0..3 {
        tape.reset();
        let a = tape.leaf(1.1);
        let b = tape.leaf(0.9);
        let t0 = Instant::now();
        let mut acc = a;
        for _ in 0..1_000_000 {
            acc = acc * b;
            acc = acc + a;
            acc = acc.min(b);
        }
        let dt = t0.elapsed();
        let n = tape.len();
        let t1 = Instant::now();
        let g = tape.backward(acc).unwrap();
        let db = t1.elapsed();
        println!(
            "round {round}: {n} nodes, push {:?} ({:.1} ns/node), backward {:?} ({:.1} ns/node), g {:?}",
            dt,
            dt.as_nanos() as f64 / n as f64,
            db,
            db.as_nanos() as f64 / n as f64,
            &g[..2]
        );
    }
}

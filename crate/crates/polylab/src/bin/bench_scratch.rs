use polylab::fenergy::percolation::estimate_pc_with;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let e = estimate_pc_with(1, 512, 60000, 12, 20260810);
    println!("d=1 W=512 T=60000: {:.5} +- {:.5} ({:.0}s)", e.value, e.half_width, t0.elapsed().as_secs_f64());
    for (w, t) in [(16usize, 600u32), (24, 1200), (32, 2200)] {
        let t0 = Instant::now();
        let e = estimate_pc_with(2, w, t, 24, 20260810);
        println!("d=2 W={w} T={t}: {:.5} +- {:.5} ({:.0}s)", e.value, e.half_width, t0.elapsed().as_secs_f64());
    }
    for (w, t) in [(8usize, 250u32), (10, 400), (14, 700)] {
        let t0 = Instant::now();
        let e = estimate_pc_with(3, w, t, 24, 20260810);
        println!("d=3 W={w} T={t}: {:.5} +- {:.5} ({:.0}s)", e.value, e.half_width, t0.elapsed().as_secs_f64());
    }
}

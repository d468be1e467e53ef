// Chance that uniformly drawn switching times come out ordered.

use swgs::optimize::ordered_allocation_probability;

pub const CLUSTERS: [usize; 7] = [2, 4, 6, 8, 10, 15, 20];
pub const PERIODS: [usize; 5] = [2, 4, 6, 8, 10];

pub fn run_example() -> swgs::Result<Vec<Vec<f64>>> {
    CLUSTERS
        .iter()
        .map(|&c| PERIODS.iter().map(|&t| ordered_allocation_probability(c, t, t / 2)).collect())
        .collect()
}

#[allow(dead_code)]
fn main() -> swgs::Result<()> {
    print!("{:>4}", "C\\T");
    for t in PERIODS {
        print!("{t:>10}");
    }
    println!();
    for (c, row) in CLUSTERS.iter().zip(run_example()?) {
        print!("{c:>4}");
        for p in row {
            print!("{p:>10.1e}");
        }
        println!();
    }
    Ok(())
}

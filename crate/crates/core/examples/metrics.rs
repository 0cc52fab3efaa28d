// Offline metrics: accuracy, SCSAT, resolution rate, weighted market
// averages and a two-proportion significance test.

use std::error::Error;

use clara::eval::{accuracy, market_breakdown, resolution_rate, scsat, two_proportion_z, ReplayRecord};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    println!("accuracy {:.2}", accuracy(&["I1", "I2", "I3", "I9"], &["I1", "I2", "I3", "I4"])?);
    println!("scsat    {:.2}", scsat(84, 16)?);

    let replay: Vec<ReplayRecord> = (0..10)
        .map(|i| ReplayRecord {
            completed_flow: i < 8,
            transferred: i == 0,
            bad_rating: false,
        })
        .collect();
    println!("rr       {:.2}", resolution_rate(&replay)?);

    let rows: Vec<(String, bool)> = (0..30).map(|i| (if i < 10 { "BR" } else { "SG" }.to_string(), i % 3 != 0)).collect();
    let (markets, avg) = market_breakdown(&rows);
    for m in markets {
        println!("{} n={} accuracy {:.3}", m.market, m.n, m.accuracy);
    }
    println!("weighted average {avg:.3}");

    let t = two_proportion_z(531, 800, 430, 800)?;
    println!("z = {:.3}, p = {:.2e}", t.z, t.p_value);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}

//! Writes the bundled sample: `prices.csv` and `calendar.json` for the
//! seeded eight-market synthetic panel.
//!
//! `cargo run -p porkcast-core --example write_sample -- [DIR] [SEED]`

use porkcast_core::ingest::write_price_csv;
use porkcast_core::synthetic::{sample_calendar, synthetic_series, SyntheticConfig};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "sample".into());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let calendar = sample_calendar();
    let series = synthetic_series(&SyntheticConfig::default(), &calendar, seed);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(format!("{dir}/prices.csv"), write_price_csv(&series))?;
    let cal = serde_json::to_string_pretty(&calendar).expect("calendar serializes");
    std::fs::write(format!("{dir}/calendar.json"), cal + "\n")?;
    Ok(())
}

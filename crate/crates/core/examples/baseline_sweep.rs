//! CDC and single-step-per-span DBP Q-factor across launch powers.
//!
//! `cargo run --release -p optieq --example baseline_sweep -- [symbols] [powers...]`

use optieq::dsp::DspChainConfig;
use optieq::link::{simulate_frames, LinkSetup};
use optieq::metrics::count_bit_errors;

fn main() -> optieq::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let symbols: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(1 << 14);
    let powers: Vec<f64> = if args.len() > 1 {
        args[1..].iter().filter_map(|s| s.parse().ok()).collect()
    } else {
        (-3..=5).map(f64::from).collect()
    };
    let mut setup = LinkSetup::default();
    if let Ok(sps) = std::env::var("SPS") {
        setup.shaping.oversampling = sps.parse().unwrap();
    }
    println!("power_dbm,method,ber,q_db");
    for p in powers {
        let t = std::time::Instant::now();
        let frames = simulate_frames(&setup, p, symbols, 7, &[DspChainConfig::cdc(), DspChainConfig::dbp(1)])?;
        for (frame, name) in frames.iter().zip(["CDC", "DBP1"]) {
            let c = &setup.constellation;
            let e = count_bit_errors(&frame.rx_symbols_x, &frame.tx_symbols_x, c)
                .merge(count_bit_errors(&frame.rx_symbols_y, &frame.tx_symbols_y, c));
            println!("{p},{name},{:.3e},{:.2}", e.ber(), e.q_db().unwrap_or(f64::NAN));
        }
        eprintln!("{p} dBm took {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(())
}

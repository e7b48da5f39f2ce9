//! Held duty through a 14.8 V → 13.0 V sag, with and without droop compensation.
//!
//! `cargo run -p gennav --example battery_compensation`

use gennav::control::BatteryCompensator;
use gennav::scenario::battery_experiment;
use gennav::PlantConfig;

fn main() {
    let mut comp = BatteryCompensator::new(14.8);
    for v in [14.8, 14.0, 13.0] {
        comp.set_voltage(v);
        println!("duty 0.5 at {v:.1} V -> {:.4}", comp.correct(0.5).unwrap());
    }
    let plant = PlantConfig::diffdrive();
    for correction in [false, true] {
        let e = battery_experiment(&plant, 0.2, true, correction);
        println!(
            "correction {:5}: {:.4} -> {:.4} m/s, relative error {:.4} (pack droop {:.4})",
            correction, e.reference_speed, e.final_speed, e.relative_error, e.droop_fraction
        );
    }
}

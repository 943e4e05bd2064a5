//! Simulates heart tissue at g = 0.8 and prints the centre-row profile.
//!
//! `cargo run --release -p lumen-core --example heart_profile`

use lumen_core::analysis::center_profile;
use lumen_core::transport::simulate;
use lumen_core::{GridSpec, HgPhase, OpticalMedium, SimulationConfig};

fn main() -> lumen_core::Result<()> {
    let grid = GridSpec::new(0.02, 100)?;
    let medium = OpticalMedium::new(0.583, 48.195, 0.8);
    let image = simulate(&medium, &HgPhase::new(0.8)?, &grid, &SimulationConfig::new(2_000_000, 1))?;
    let t = image.tallies();
    println!("Rsp {:.5}  Rd {:.5}  A {:.5}  T {:.5}", t.specular_reflectance, t.total_diffuse, t.absorbed, t.transmitted);
    let profile = center_profile(&image)?;
    let c = grid.center();
    for (i, v) in profile.iter().enumerate().skip(c).take(26).step_by(5) {
        println!("{:6.2} mm  {v:.4e}", (i as f64 - c as f64) * grid.delta_r_mm);
    }
    Ok(())
}

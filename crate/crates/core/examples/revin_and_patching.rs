//! Standardization, reversible instance normalization and patching of a
//! seven-day window.

use ethfpt::normpatch::{fit_standardizer, patchify, revin, PatchGeometry, RevinMode};

fn main() -> ethfpt::Result<()> {
    let train = [
        1200.0, 1250.0, 1190.0, 1320.0, 1400.0, 1380.0, 1450.0, 1500.0, 1480.0,
    ];
    let stats = fit_standardizer(&train)?;
    println!("train mean {:.3}, std {:.3}", stats.mean, stats.std);
    let window: Vec<f64> = train[..7].iter().map(|&v| stats.forward(v)).collect();
    println!("standardized window {window:.3?}");

    let (normed, state) = revin(&window, RevinMode::Normalize, None)?;
    println!("revin mean {:.3}, scale {:.3}", state.mean, state.scale());
    println!("normalized {normed:.3?}");
    let (back, _) = revin(&normed, RevinMode::Denormalize, Some(state))?;
    let err = back
        .iter()
        .zip(&window)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("round-trip max error {err:e}");

    for (patch, stride) in [(16, 8), (4, 2), (3, 3)] {
        let geom = PatchGeometry::new(7, patch, stride)?;
        let grid = patchify(&normed, patch, stride)?;
        println!(
            "patch {patch} stride {stride}: padded to {}, {} patches",
            geom.padded_length(),
            grid.patches.len()
        );
    }
    Ok(())
}

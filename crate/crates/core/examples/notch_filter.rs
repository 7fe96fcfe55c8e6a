//! Frequency response of the two notch designs over the respiratory band.

use scrubkit::scrub::{design_notch, NotchKind};

fn main() -> scrubkit::Result<()> {
    let tr = 0.72;
    let band = [0.31, 0.43];
    for kind in [NotchKind::Butterworth10, NotchKind::Chebyshev2] {
        let f = design_notch(kind, band, tr)?;
        let stable = f.poles().iter().all(|p| p.norm() < 1.0);
        print!("{:>14} (stable {stable}):", kind.to_string());
        for hz in [0.05, 0.2, 0.3, 0.37, 0.44, 0.6] {
            print!(" {hz:.2}Hz={:.3}", f.gain(hz));
        }
        println!();
    }
    Ok(())
}

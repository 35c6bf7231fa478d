//! Fixed-margin, local-margin and combined triplet losses on a toy batch.

use lmtriplet::losses::{combined_loss, fixed_margin_loss, local_margin_loss, LossWeights, Margins};
use lmtriplet::math::Matrix;
use lmtriplet::mining::Triplet;

fn main() -> lmtriplet::Result<()> {
    let (a, p, n) = ([0.0, 0.0], [1.0, 0.0], [0.0, 2.0]);
    let fixed = fixed_margin_loss(&a, &p, &n, 5.0)?;
    println!("fixed margin 5: loss {} grad_a {:?}", fixed.value, fixed.grad_a.as_slice());
    let local = local_margin_loss(&a, &p, &n, 0.5, 3.0, 1e-3)?;
    println!("local margin 3*0.5+eps: loss {:.4} active {}", local.value, local.active);

    let emb = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [0.2, 0.1], [3.0, 3.0]])?;
    let labels = [0, 0, 1, 0, 1];
    let triplets = vec![Triplet::new(0, 1, 2, &labels)?, Triplet::new(3, 1, 4, &labels)?];
    for (name, margins) in [("fixed", Margins::Fixed), ("local", Margins::Local(&[0.5, 0.4]))] {
        let l = combined_loss(&emb, &triplets, margins, &LossWeights::mnist())?;
        println!(
            "{name}: value {:.4} hinge sum {:.4} active {}/{} mu_s {:.3} mu_d {:.3}",
            l.value,
            l.hinge_sum,
            l.active_count(),
            triplets.len(),
            l.stats.mu_s,
            l.stats.mu_d
        );
    }
    Ok(())
}

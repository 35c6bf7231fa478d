//! Finite-difference check of backpropagation through a small
//! convolutional network and through the reference MNIST architecture.

use lmtriplet::math::Matrix;
use lmtriplet::network::gradcheck::check_params;
use lmtriplet::network::{EmbeddingNet, LayerSpec, NetSpec, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> lmtriplet::Result<Matrix> {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn main() -> lmtriplet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let small = NetSpec::new(
        Shape::new(8, 8, 2),
        vec![
            LayerSpec::conv(3, 3, 2, 4),
            LayerSpec::MaxPool2,
            LayerSpec::Flatten,
            LayerSpec::dense(64, 6),
        ],
    )?;
    let mut net = EmbeddingNet::new(small, 1);
    let x = random(&mut rng, 4, 128)?;
    let up = random(&mut rng, 4, 6)?;
    let all = 0..net.param_count();
    let r = check_params(&mut net, &x, &up, all)?;
    println!(
        "small conv net: {} parameters checked, {} skipped, max relative error {:.2e}",
        r.checked, r.skipped, r.max_rel_err
    );

    let mut net = EmbeddingNet::new(NetSpec::mnist(), 2);
    let x = random(&mut rng, 1, 784)?.as_slice().iter().map(|v| v.abs()).collect::<Vec<_>>();
    let x = Matrix::new(1, 784, x)?;
    let up = random(&mut rng, 1, 128)?;
    let n = net.param_count();
    let r = check_params(&mut net, &x, &up, (0..n).step_by(n / 40))?;
    println!(
        "mnist net ({n} parameters), 40 sampled: max relative error {:.2e}",
        r.max_rel_err
    );
    Ok(())
}

//! Compares tape gradients of an LSTM + attention stack with central
//! finite differences in 64-bit precision.

use mcm::autodiff::Graph;
use mcm::gradcheck::{check, STEP};
use mcm::rng::{Rng, Stream};
use mcm::Tensor;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

fn main() -> mcm::Result<()> {
    let mut rng = Rng::new(1, Stream::Init);
    // hidden states [B=2, L=4, U=3] and attention scores [B, L]
    let inputs = [random(&mut rng, &[2, 4, 3]), random(&mut rng, &[2, 4])];
    let lengths = [4, 2];

    let report = check(&inputs, STEP, |g: &mut Graph<f64>, v| {
        let h = g.tanh(v[0])?;
        let w = g.masked_softmax(v[1], &lengths)?;
        let pooled = g.weighted_sum_time(h, w)?;
        let sq = g.mul(pooled, pooled)?;
        g.sum(sq)
    })?;

    for (name, err) in ["hidden", "scores"].iter().zip(&report.errors) {
        println!("{name:<7} relative error {err:.2e}");
    }
    assert!(report.max_error() < 1e-4);
    Ok(())
}

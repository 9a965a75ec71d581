//! Baseline column modulation vs. per-entry modulation with a style matrix.
//!
//! Replicating one style vector across all rows of the matrix gives the
//! baseline weights bit for bit; distinct rows give every output channel
//! its own style.

use overparam::modulation::{demodulate, drop_rows, modulate_baseline, modulate_overparam, DEMOD_EPS};
use overparam::{SeededRng, StyleMatrix, Tensor};

fn main() -> overparam::Result<()> {
    let mut rng = SeededRng::new(3);
    let (n_out, n_in, k) = (4, 3, 3);
    let theta = Tensor::new(vec![n_out, n_in, k, k], rng.normal_vec(n_out * n_in * k * k))?;
    let s = rng.normal_vec(n_in);

    let base = modulate_baseline(&theta, &s)?;
    let replicated = modulate_overparam(&theta, &StyleMatrix::replicate(&s, n_out))?;
    let identical = base.weights.data().iter().zip(replicated.weights.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("replicated rows reproduce the baseline: {identical}");

    // Eight latent rows feed a four-channel layer: only the first four are used.
    let tall = StyleMatrix::new(8, n_in, rng.normal_vec(8 * n_in))?;
    let rows = drop_rows(&tall, n_out)?;
    let full = modulate_overparam(&theta, &rows)?;
    let demod = demodulate(&full, DEMOD_EPS)?;
    for o in 0..n_out {
        let norm: f32 = demod.weights.data()[o * n_in * k * k..(o + 1) * n_in * k * k].iter().map(|v| v * v).sum();
        println!("output channel {o}: norm after demodulation {:.6}", norm.sqrt());
    }
    Ok(())
}

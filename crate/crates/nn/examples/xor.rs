//! Fits XOR with a two-layer perceptron and Adam.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tactile_nn::layers::Linear;
use tactile_nn::optim::{adam_step, AdamConfig, AdamState};
use tactile_nn::{Graph, ParamStore, Tensor};

fn main() -> tactile_nn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    let hidden = Linear::new(&mut store, "hidden", 2, 8, true, &mut rng)?;
    let out = Linear::new(&mut store, "out", 8, 2, true, &mut rng)?;
    let inputs = Tensor::from_f64(vec![4, 2], &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0])?;
    let labels = [Some(0), Some(1), Some(1), Some(0)];
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: 0.05,
        ..AdamConfig::default()
    });
    for step in 0..300 {
        store.zero_grad();
        let mut g = Graph::new();
        let x = g.input(inputs.clone());
        let h = hidden.forward(&mut g, &store, x)?;
        let h = g.relu(h);
        let logits = out.forward(&mut g, &store, h)?;
        let loss = g.cross_entropy(logits, &labels)?;
        if step % 50 == 0 {
            println!("step {step:>3}: loss {:.4}", g.value(loss).item());
        }
        g.backward(loss, &mut store)?;
        adam_step(&mut store, &mut adam)?;
    }
    let mut g = Graph::new();
    let x = g.input(inputs);
    let h = hidden.forward(&mut g, &store, x)?;
    let h = g.relu(h);
    let logits = out.forward(&mut g, &store, h)?;
    let v = g.value(logits);
    for (i, row) in v.data().chunks(2).enumerate() {
        println!("{:?} -> {}", [i >> 1, i & 1], usize::from(row[1] > row[0]));
    }
    Ok(())
}

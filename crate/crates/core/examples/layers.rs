//! Runs the building blocks on one padded batch and shows that padding
//! never leaks into pooled or recurrent outputs.

use mcm::nn::{embed, global_max_pool, Attention, Conv1d, Ctx, Init, Lstm, Mode, SequenceMask};
use mcm::params::ParamStore;
use mcm::rng::{Rng, Stream};
use mcm::Tensor;

fn main() -> mcm::Result<()> {
    let mut rng = Rng::new(3, Stream::Init);
    let mut store = ParamStore::<f32>::new();
    let data: Vec<f64> = (0..10 * 8).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect();
    let table = store.add("embedding", Tensor::from_f64(&[10, 8], &data)?, true);
    let conv = Conv1d::new(&mut store, "conv", 2, 8, 6, Init::GlorotUniform, &mut rng)?;
    let lstm = Lstm::new(&mut store, "lstm", 8, 5, Init::GlorotUniform, &mut rng);
    let att = Attention::new(&mut store, "att", 5, 4, &mut rng);

    let run = |tokens: &[usize], padded: usize| -> mcm::Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
        let mask = SequenceMask::new(vec![3, 2], padded)?;
        let mut ctx = Ctx::new(&store, Mode::Infer, None);
        let x = embed(&mut ctx, table, tokens, 2, padded)?;
        let c = conv.forward(&mut ctx, x, Some(&mask))?;
        let pooled = global_max_pool(&mut ctx, c, &mask)?;
        let h = lstm.forward(&mut ctx, x, &mask, true)?;
        let (summary, weights) = att.forward(&mut ctx, h, &mask)?;
        Ok((
            ctx.value(pooled).data().to_vec(),
            ctx.value(summary).data().to_vec(),
            ctx.value(weights).data().to_vec(),
        ))
    };

    let short = run(&[4, 7, 2, 0, 5, 9, 0, 0], 4)?;
    let long = run(&[4, 7, 2, 0, 0, 0, 5, 9, 0, 0, 0, 0], 6)?;
    println!("conv+max pool  {:?}", &short.0[..6]);
    println!("lstm+attention {:?}", &short.1[..5]);
    println!("attention row 2 (two true tokens) {:?}", &short.2[4..8]);
    assert_eq!(short.0, long.0);
    assert_eq!(short.1, long.1);
    println!("padding 4 -> 6 left every output unchanged");
    Ok(())
}

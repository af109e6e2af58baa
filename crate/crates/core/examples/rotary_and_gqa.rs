//! Rotary position embeddings and grouped-query attention on small arrays.

use ethfpt::backbone::layers::{grouped_query_attention, rotary_apply, RotaryTable};
use ndarray::{Array2, Array3};

fn main() -> ethfpt::Result<()> {
    let table = RotaryTable::new(8, 10_000.0)?;
    let q = Array2::from_shape_fn((4, 8), |(r, c)| ((r + 1) * (c + 2)) as f64 * 0.1);
    let positions = [0, 1, 2, 3];
    let (rq, _) = rotary_apply(&q, &q, &positions, &table)?;
    for r in 0..4 {
        let before = q.row(r).dot(&q.row(r)).sqrt();
        let after = rq.row(r).dot(&rq.row(r)).sqrt();
        println!("position {r}: norm {before:.6} -> {after:.6}");
    }

    let (heads, groups, t, d) = (4, 2, 5, 3);
    let q = Array3::from_shape_fn((heads, t, d), |(h, i, c)| {
        ((h + i * 2 + c) as f64 * 0.3).sin()
    });
    let k = Array3::from_shape_fn((groups, t, d), |(g, i, c)| {
        ((g * 5 + i + c) as f64 * 0.2).cos()
    });
    let v = Array3::from_shape_fn((groups, t, d), |(g, i, c)| (g + i + c) as f64 * 0.1);
    let gqa = grouped_query_attention(&q, &k, &v, true)?;
    let per = heads / groups;
    let expand =
        |x: &Array3<f64>| Array3::from_shape_fn((heads, t, d), |(h, i, c)| x[[h / per, i, c]]);
    let mha = grouped_query_attention(&q, &expand(&k), &expand(&v), true)?;
    let diff = (&gqa - &mha).iter().map(|x| x.abs()).fold(0.0, f64::max);
    println!(
        "{heads} query heads over {groups} kv groups; max gap to expanded multi-head: {diff:e}"
    );
    Ok(())
}

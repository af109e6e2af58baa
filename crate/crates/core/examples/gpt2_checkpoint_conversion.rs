//! Converts a checkpoint in the public GPT-2 layout (fused `c_attn`,
//! `transformer.` prefix) into native names and loads it into a shallower
//! backbone.
//!
//! With an argument, converts that safetensors file instead of a generated
//! miniature.

use ethfpt::backbone::{
    build_backbone, convert_gpt2_checkpoint, load_pretrained_weights, reconcile_with_archive,
    BackboneConfig, Variant,
};
use ethfpt::params::WeightArchive;
use ndarray::Array2;

fn miniature(layers: usize, d: usize, ffn: usize, positions: usize) -> WeightArchive {
    let mut a = WeightArchive::new();
    let fill = |r, c, k: f64| {
        Array2::from_shape_fn((r, c), |(i, j)| ((i * 31 + j * 7) as f64 * k).sin() * 0.02)
    };
    a.insert("transformer.wte.weight", fill(50, d, 0.1));
    a.insert("transformer.wpe.weight", fill(positions, d, 0.2));
    a.insert("transformer.ln_f.weight", Array2::ones((1, d)));
    a.insert("transformer.ln_f.bias", Array2::zeros((1, d)));
    for l in 0..layers {
        let p = format!("transformer.h.{l}");
        for ln in ["ln_1", "ln_2"] {
            a.insert(format!("{p}.{ln}.weight"), Array2::ones((1, d)));
            a.insert(format!("{p}.{ln}.bias"), Array2::zeros((1, d)));
        }
        a.insert(format!("{p}.attn.c_attn.weight"), fill(d, 3 * d, 0.3));
        a.insert(format!("{p}.attn.c_attn.bias"), fill(1, 3 * d, 0.4));
        a.insert(format!("{p}.attn.c_proj.weight"), fill(d, d, 0.5));
        a.insert(format!("{p}.attn.c_proj.bias"), fill(1, d, 0.6));
        a.insert(format!("{p}.mlp.c_fc.weight"), fill(d, ffn, 0.7));
        a.insert(format!("{p}.mlp.c_fc.bias"), fill(1, ffn, 0.8));
        a.insert(format!("{p}.mlp.c_proj.weight"), fill(ffn, d, 0.9));
        a.insert(format!("{p}.mlp.c_proj.bias"), fill(1, d, 1.0));
    }
    a
}

fn main() -> ethfpt::Result<()> {
    let (public, mut config) = match std::env::args().nth(1) {
        Some(path) => (
            WeightArchive::load(&path)?,
            BackboneConfig::gpt2_checkpoint(),
        ),
        None => {
            let mut c = BackboneConfig::toy(Variant::Gpt2);
            c.n_layers = 2;
            (miniature(4, c.hidden, 4 * c.hidden, c.max_positions), c)
        }
    };
    let native = convert_gpt2_checkpoint(&public)?;
    println!(
        "{} public arrays -> {} native arrays",
        public.tensors.len(),
        native.tensors.len()
    );
    config = reconcile_with_archive(&config, &native);
    println!(
        "feed-forward width taken from the archive: {}",
        config.ffn_dim
    );
    let mut model = build_backbone(&config, 0)?;
    let report = load_pretrained_weights(&mut model, &native)?;
    println!(
        "loaded {}, left at init {:?}, unused {}",
        report.loaded.len(),
        report.missing,
        report.unused.len()
    );
    if let Some((archive, model)) = report.truncated {
        println!("kept the first {model} of {archive} blocks");
    }
    Ok(())
}

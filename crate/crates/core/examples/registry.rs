//! Content-addressed run ids and the append-only registry.

use ethfpt::experiment::{content_hash, ExperimentConfig, Registry};

fn main() -> ethfpt::Result<()> {
    let cfg = ExperimentConfig::from_toml("[model]\nkind = \"lstm\"\n")?;
    let mut resolved = cfg.resolve()?;
    let h0 = resolved.hash();
    resolved.set_seed(1);
    println!("config hash (seed excluded): {h0}");
    println!("unchanged after reseeding: {}", resolved.hash() == h0);
    println!("run prefix seed 0: {}", content_hash(&h0, 0, "digest"));
    println!("run prefix seed 1: {}", content_hash(&h0, 1, "digest"));

    let dir = std::env::temp_dir().join(format!("ethfpt-registry-{}", std::process::id()));
    let registry = Registry::at(&dir);
    println!(
        "registry at {} holds {} runs",
        registry.path().display(),
        registry.read()?.len()
    );
    match ExperimentConfig::from_toml("[model]\nkind = \"lstm\"\n[train]\npatiense = 3\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }
    Ok(())
}

//! Regenerates `assets/`: `cargo run -p radsim-core --example gen_assets`.

use std::path::Path;

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    std::fs::create_dir_all(&dir)?;
    for (name, bytes) in radsim::reference::shipped_assets() {
        std::fs::write(dir.join(name), bytes)?;
        println!("wrote {name}");
    }
    Ok(())
}

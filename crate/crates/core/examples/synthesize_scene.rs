//! Render one procedural scene and its ground-truth mask, then check the
//! verifier agrees that every requested class is present.
//!
//! `cargo run --example synthesize_scene -- [out_dir]`

use segflow::builtins::{presence_verify, prompt_build, scene_synthesize, Palette};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let palette = Palette::standard();
    let spec = prompt_build(&[("car", 2), ("bicycle", 1), ("truck", 1)], "plain", (160, 120), palette)?;
    println!("prompt: {}", spec.to_text());

    let (image, mask) = scene_synthesize(&spec, 2024, palette)?;
    for (id, name) in mask.class_table() {
        println!("  class {id} {name:<10} {:>6} px", mask.count(*id));
    }

    let names: Vec<&str> = spec.classes.iter().map(|c| c.name.as_str()).collect();
    let report = presence_verify(&image, &names, 0.002, 60.0, palette)?;
    println!("verifier passed: {}", report.pass);

    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(format!("{dir}/scene.png"), image.to_png())?;
        std::fs::write(format!("{dir}/mask.png"), mask.to_png())?;
        println!("wrote {dir}/scene.png and {dir}/mask.png");
    }
    Ok(())
}

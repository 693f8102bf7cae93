//! Degrade masks with the coarse segmenter, repair them with point-prompted
//! refinement and post-processing, and compare mean mIoU over many scenes.
//!
//! `cargo run --example refine_masks -- [scenes]`

use segflow::builtins::{
    coarse_segment, compute_miou, morph_postprocess, prompt_build, refine_mask, scene_synthesize, Palette,
    RefinerParams,
};
use segflow::seed::substream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenes: u64 = std::env::args().nth(1).map_or(Ok(50), |s| s.parse())?;
    let palette = Palette::standard();
    let spec = prompt_build(
        &[("car", 1), ("bicycle", 1), ("motorbike", 1), ("truck", 1)],
        "plain",
        (128, 128),
        palette,
    )?;

    let (mut coarse_sum, mut refined_sum, mut post_sum, mut wins) = (0.0, 0.0, 0.0, 0);
    for seed in 0..scenes {
        let (image, truth) = scene_synthesize(&spec, seed, palette)?;
        let coarse = coarse_segment(&image, 0.15, substream(seed, 1), palette);
        let refined = refine_mask(&image, &coarse, RefinerParams::default(), substream(seed, 2))?;
        let post = morph_postprocess(&refined, 1, 16);

        let score = |m| compute_miou(m, &truth).map(|r| r.mean.unwrap_or(0.0));
        let (c, r, p) = (score(&coarse)?, score(&refined)?, score(&post)?);
        coarse_sum += c;
        refined_sum += r;
        post_sum += p;
        wins += (r > c) as u32;
    }
    let n = scenes as f64;
    println!("scenes            {scenes}");
    println!("coarse mIoU       {:.4}", coarse_sum / n);
    println!("refined mIoU      {:.4}", refined_sum / n);
    println!("post-processed    {:.4}", post_sum / n);
    println!("refinement wins   {wins}/{scenes}");
    Ok(())
}

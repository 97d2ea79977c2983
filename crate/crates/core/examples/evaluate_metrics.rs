//! Y-channel PSNR and SSIM of bicubic reconstructions at each scale.

use hitsr::data::{synth_patch, Pattern};
use hitsr::image::{bicubic_resize_to, ImageBuffer};
use hitsr::metrics::{evaluate, format_db};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hitsr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for pattern in Pattern::ALL {
        let gt = ImageBuffer::from_tensor(&synth_patch(&mut rng, pattern, 48))?;
        for s in [2, 3, 4] {
            let lr = bicubic_resize_to(&gt, 48 / s, 48 / s)?;
            let up = bicubic_resize_to(&lr, 48, 48)?;
            let (p, q) = evaluate(&gt, &up, s)?;
            println!("{pattern:?} x{s}: PSNR={} SSIM={q:.4}", format_db(p));
        }
    }
    Ok(())
}

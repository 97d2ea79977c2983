//! Hierarchical window schedule and lossless window partitioning.

use hitsr::windowing::{crop, merge, pad_to_multiple, partition, schedule_from_ratios};
use hitsr::Tensor;

fn main() -> hitsr::Result<()> {
    let schedule = schedule_from_ratios((8, 8), &[0.5, 1.0, 2.0, 4.0, 6.0, 8.0])?;
    for (i, w) in schedule.windows().iter().enumerate() {
        println!(
            "layer {i}: window {w:?}, values summarized to {:?}",
            schedule.downsampled(i)
        );
    }

    let img = Tensor::from_fn(&[3, 21, 30], |i| i as f64);
    let (padded, rec) = pad_to_multiple(&img, 16, 16)?;
    let windows = partition(&padded, 16, 16)?;
    println!(
        "{:?} -> padded {:?} -> windows {:?}",
        img.shape(),
        padded.shape(),
        windows.shape()
    );

    let restored = crop(&merge(&windows, (16, 16), rec.padded_height, rec.padded_width)?, &rec)?;
    assert_eq!(restored, img);
    println!("merge and crop restore the input exactly");
    Ok(())
}

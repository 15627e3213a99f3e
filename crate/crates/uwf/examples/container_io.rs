//! Persist a map, a dataset and a model in one container file, reload them,
//! and read images from an in-memory IDX buffer.
//!
//! `cargo run --release --example container_io -- [out_dir]`

use std::path::PathBuf;

use uwf::data::idx::{parse_idx_images, IMAGES_MAGIC};
use uwf::data::{
    dataset_from_container, dataset_to_container, gen_squares, map_from_container, map_to_container,
    model_from_container, model_to_container, synthesize, Container, Dataset,
};
use uwf::experiments::squares_model;
use uwf::forward::make_gaussian;
use uwf::unrolled::UnrolledModel;

fn main() -> uwf::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "container_io".into()));
    std::fs::create_dir_all(&out)?;

    let f = make_gaussian(32, 64, 5)?;
    let images = gen_squares(8, 8, 8, 5)?;
    let ds = Dataset { h: 8, w: 8, snr_db: Some(20.0), samples: synthesize(&f, &images, Some(20.0), 5)? };
    let model = UnrolledModel::init(64, &squares_model(64, 8, 3), 5)?;

    let mut c = Container::new();
    map_to_container(&f, &mut c)?;
    dataset_to_container(&ds, &mut c)?;
    model_to_container(&model, &mut c)?;
    let path = out.join("bundle.uwfd");
    c.store(&path)?;

    let back = Container::load(&path)?;
    println!("{} bytes, {} tensors", std::fs::metadata(&path)?.len(), back.tensors.len());
    for t in &back.tensors {
        println!("  {:<20} {:?}", t.name, t.shape);
    }
    assert_eq!(map_from_container(&back)?, f);
    assert_eq!(dataset_from_container(&back)?, ds);
    assert_eq!(model_from_container(&back)?, model);
    println!("map, dataset and model reload unchanged");

    // Two 3×4 images in IDX layout: magic, count, rows, cols, then pixels.
    let mut idx = Vec::new();
    for v in [IMAGES_MAGIC, 2, 3, 4] {
        idx.extend_from_slice(&v.to_be_bytes());
    }
    idx.extend((0..24u8).map(|k| k * 10));
    let parsed = parse_idx_images(&idx)?;
    println!("IDX: {} images of {}x{}, first row {:?}", parsed.images.len(), parsed.rows, parsed.cols, &parsed.images[0][..4]);
    Ok(())
}

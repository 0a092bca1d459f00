//! PGM (P5) images plus a CSV manifest, for looking at generated shapes.

use super::shapes::{ShapeImage, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::report::write_atomic;
use std::path::Path;

/// Binary 8-bit PGM; intensities in `[0, 1]` map to `0..=255`.
pub fn write_pgm(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    write_atomic(path, &bytes)
}

/// Writes `shape_NNNNN.pgm` files and `manifest.csv` with columns
/// `filename,label_sides,label_equal,x0,y0,x1,y1,x2,y2,x3,y3` (the last pair
/// is empty for triangles). `label_sides` is 4 or 3; `label_equal` is 1 or 0.
pub fn export_shapes(dir: &Path, images: &[ShapeImage]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["filename", "label_sides", "label_equal", "x0", "y0", "x1", "y1", "x2", "y2", "x3", "y3"])?;
    for (i, img) in images.iter().enumerate() {
        let name = format!("shape_{i:05}.pgm");
        write_pgm(&dir.join(&name), &img.pixels, IMAGE_SIZE, IMAGE_SIZE)?;
        let mut row = vec![
            name,
            if img.labels.four_sided { "4" } else { "3" }.to_string(),
            (img.labels.equal_sides as u8).to_string(),
        ];
        for k in 0..4 {
            match img.vertices.get(k) {
                Some(&(x, y)) => row.extend([format!("{x:.4}"), format!("{y:.4}")]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        wtr.write_record(&row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io(dir, e.into_error()))?;
    write_atomic(&dir.join("manifest.csv"), &bytes)
}

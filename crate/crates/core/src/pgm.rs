//! Binary 8-bit portable graymap I/O.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::GrayImage;

use crate::{Error, Result};

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    match img {
        image::DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(Error::InvalidInput(format!(
            "{}: expected 8-bit grayscale, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Writes a `P5` raster.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height())?;
    out.write_all(image.as_raw())?;
    out.flush()?;
    Ok(())
}

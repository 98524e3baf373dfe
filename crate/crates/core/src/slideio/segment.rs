use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, RgbImage};

use crate::error::{Error, Result};

/// Binary tissue mask, row-major, `true` = tissue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::shape(
                "mask",
                format!("{width}x{height} mask with {} pixels", data.len()),
            ));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, tissue: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![tissue; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, tissue: bool) {
        self.data[y * self.width + x] = tissue;
    }

    pub fn tissue_pixels(&self) -> usize {
        self.data.iter().filter(|&&t| t).count()
    }
}

/// HSV saturation of an 8-bit RGB pixel on a `[0, 1]` scale.
pub fn saturation(rgb: [u8; 3]) -> f64 {
    let max = rgb.iter().copied().max().unwrap_or(0);
    let min = rgb.iter().copied().min().unwrap_or(0);
    if max == 0 {
        0.0
    } else {
        f64::from(max - min) / f64::from(max)
    }
}

/// A pixel is tissue iff its saturation exceeds `sat_thresh`.
pub fn segment_tissue(image: &RgbImage, sat_thresh: f64) -> Result<Mask> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::parse("image", "empty raster"));
    }
    if !(0.0..=1.0).contains(&sat_thresh) {
        return Err(Error::invalid(
            "saturation threshold",
            format!("{sat_thresh} outside [0, 1]"),
        ));
    }
    let data = image.pixels().map(|p| saturation(p.0) > sat_thresh).collect();
    Mask::new(image.width() as usize, image.height() as usize, data)
}

fn decode_pnm(path: &Path) -> Result<DynamicImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = PnmDecoder::new(BufReader::new(file))
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    DynamicImage::from_decoder(decoder)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Reads a binary PPM (P6) image.
pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    match decode_pnm(path)? {
        DynamicImage::ImageRgb8(img) => Ok(img),
        _ => Err(Error::parse(
            path.display().to_string(),
            "expected an 8-bit RGB (P6) raster",
        )),
    }
}

/// Writes a mask as binary PGM (P5): tissue 255, background 0.
pub fn write_mask_pgm(mask: &Mask, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = mask.data.iter().map(|&t| if t { 255 } else { 0 }).collect();
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            mask.width as u32,
            mask.height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::parse(path.display().to_string(), other.to_string()),
        })
}

/// Reads a binary PGM mask; any non-zero pixel is tissue.
pub fn read_mask_pgm(path: &Path) -> Result<Mask> {
    match decode_pnm(path)? {
        DynamicImage::ImageLuma8(img) => Mask::new(
            img.width() as usize,
            img.height() as usize,
            img.pixels().map(|p| p.0[0] != 0).collect(),
        ),
        _ => Err(Error::parse(
            path.display().to_string(),
            "expected an 8-bit grayscale (P5) raster",
        )),
    }
}

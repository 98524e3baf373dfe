use std::io::Write;
use std::path::Path;

use super::segment::Mask;
use super::Magnification;
use crate::error::{Error, Result};

/// Side length in native pixels of a patch that downsamples to `out_px` at `target`.
///
/// `native_patch_size(40, 5, 256) == 2048`.
pub fn native_patch_size(native: f64, target: f64, out_px: u32) -> Result<u32> {
    if !(target > 0.0 && native > 0.0) {
        return Err(Error::invalid(
            "magnification",
            format!("native {native}, target {target} must be positive"),
        ));
    }
    if target > native {
        return Err(Error::invalid(
            "magnification",
            format!("target {target}x exceeds native {native}x (upsampling unsupported)"),
        ));
    }
    let size = f64::from(out_px) * native / target;
    if (size - size.round()).abs() > 1e-9 {
        return Err(Error::invalid(
            "patch size",
            format!("{out_px}·{native}/{target} = {size} is not an integer"),
        ));
    }
    Ok(size.round() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEntry {
    pub row: u32,
    pub col: u32,
    pub x: u64,
    pub y: u64,
    pub tissue_fraction: f64,
}

/// Retained tissue patches of one slide at one magnification.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub magnification: Magnification,
    pub rows: u32,
    pub cols: u32,
    /// Patch side in native pixels.
    pub patch_native: u32,
    /// Sorted by `(row, col)`.
    pub entries: Vec<PatchEntry>,
}

impl PatchGrid {
    pub fn cells(&self) -> Vec<(u32, u32)> {
        self.entries.iter().map(|e| (e.row, e.col)).collect()
    }
}

/// Tiles `mask` with non-overlapping squares; partial tiles at the right and bottom
/// edges are dropped.
pub fn build_patch_grid(
    mask: &Mask,
    native_mag: f64,
    target_mag: f64,
    min_tissue: f64,
) -> Result<PatchGrid> {
    if !(0.0..=1.0).contains(&min_tissue) {
        return Err(Error::invalid(
            "min_tissue",
            format!("{min_tissue} outside [0, 1]"),
        ));
    }
    let tile = native_patch_size(native_mag, target_mag, 256)? as usize;
    let rows = mask.height / tile;
    let cols = mask.width / tile;
    let area = (tile * tile) as f64;
    let mut entries = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let mut count = 0usize;
            for y in r * tile..(r + 1) * tile {
                let line = &mask.data[y * mask.width + c * tile..y * mask.width + (c + 1) * tile];
                count += line.iter().filter(|&&t| t).count();
            }
            let fraction = count as f64 / area;
            if fraction >= min_tissue && count > 0 {
                entries.push(PatchEntry {
                    row: r as u32,
                    col: c as u32,
                    x: (c * tile) as u64,
                    y: (r * tile) as u64,
                    tissue_fraction: fraction,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptySlide(format!(
            "no {tile}px tile reaches tissue fraction {min_tissue}"
        )));
    }
    Ok(PatchGrid {
        magnification: Magnification::new(target_mag)?,
        rows: rows as u32,
        cols: cols as u32,
        patch_native: tile as u32,
        entries,
    })
}

/// Writes `mag,row,col,x,y,tissue_fraction`.
pub fn write_grid_csv(grid: &PatchGrid, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "mag,row,col,x,y,tissue_fraction")?;
    for e in &grid.entries {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            grid.magnification, e.row, e.col, e.x, e.y, e.tissue_fraction
        )?;
    }
    Ok(())
}

/// Convenience wrapper writing the grid CSV to a path.
pub fn write_grid_file(grid: &PatchGrid, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_grid_csv(grid, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

//! 8-bit binary portable graymaps for quick looks at float images.

use std::io::{self, Write};
use std::path::Path;

use super::Image;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `img` as a P5 graymap, mapping `[0, 1]` to `0..=255`.
pub fn write_pgm(path: &Path, img: &Image) -> io::Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| to_byte(v)));
    std::fs::File::create(path)?.write_all(&out)
}

/// Tiles up to `cols × rows` images into one graymap with a 1-pixel gutter.
pub fn write_pgm_grid(path: &Path, images: &[Image], cols: usize) -> io::Result<()> {
    let Some(first) = images.first() else {
        return Ok(());
    };
    let (h, w) = first.dims();
    let cols = cols.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    let mut canvas = vec![0u8; gh * gw];
    for (i, img) in images.iter().enumerate() {
        let (oy, ox) = ((i / cols) * (h + 1) + 1, (i % cols) * (w + 1) + 1);
        for y in 0..h.min(img.height()) {
            for x in 0..w.min(img.width()) {
                canvas[(oy + y) * gw + ox + x] = to_byte(img.get(y, x));
            }
        }
    }
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    out.extend(canvas);
    std::fs::File::create(path)?.write_all(&out)
}

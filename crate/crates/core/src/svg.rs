//! SVG rendering of palettes and histogram summaries.

use std::fmt::Write as _;

use crate::histogram::ColourHistogram;
use crate::palette::Palette;

const CELL: usize = 20;

fn header(out: &mut String, width: usize, height: usize) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
}

/// Every bin as one square, laid out in rows of `columns`.
pub fn palette_svg(palette: &Palette, columns: usize) -> String {
    let columns = columns.max(1);
    let rows = palette.len().div_ceil(columns);
    let mut out = String::new();
    header(&mut out, columns * CELL, rows * CELL);
    for (k, bin) in palette.bins().iter().enumerate() {
        let (x, y) = ((k % columns) * CELL, (k / columns) * CELL);
        let _ = writeln!(
            out,
            r#"  <rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"><title>bin {k}</title></rect>"#,
            bin.rgb.hex()
        );
    }
    out.push_str("</svg>\n");
    out
}

/// The `n` heaviest bins of `h` as a horizontal strip, widths proportional to mass.
pub fn top_bins_svg(h: &ColourHistogram, palette: &Palette, n: usize) -> String {
    let top = h.top_bins(n);
    let width = 10 * CELL;
    let total: f64 = top.iter().map(|&k| h.weights()[k]).sum();
    let mut out = String::new();
    header(&mut out, width, 2 * CELL);
    let mut x = 0.0;
    for &k in &top {
        let w = if total > 0.0 {
            h.weights()[k] / total * width as f64
        } else {
            width as f64 / top.len() as f64
        };
        let _ = writeln!(
            out,
            r#"  <rect x="{x:.3}" y="0" width="{w:.3}" height="{}" fill="{}"><title>bin {k}: {:.4}</title></rect>"#,
            2 * CELL,
            palette.bin(k).rgb.hex(),
            h.weights()[k]
        );
        x += w;
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::palette::{generate_palette, PaletteConfig};

    #[test]
    fn swatch_grid_has_one_rect_per_bin() {
        let palette = generate_palette(&PaletteConfig::default()).unwrap();
        let svg = palette_svg(&palette, 20);
        assert_eq!(svg.matches("<rect ").count(), 327);
        assert!(svg.starts_with("<svg ") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect ").count(), svg.matches("</rect>").count());
    }

    #[test]
    fn strip_shows_ten_bins() {
        let palette = generate_palette(&PaletteConfig::default()).unwrap();
        let h = ColourHistogram::uniform(palette.len());
        let svg = top_bins_svg(&h, &palette, 10);
        assert_eq!(svg.matches("<rect ").count(), 10);
        let one = top_bins_svg(&ColourHistogram::one_hot(palette.len(), 4), &palette, 10);
        assert!(one.contains(&palette.bin(4).rgb.hex()));
    }
}

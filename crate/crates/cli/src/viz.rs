use coam::image::Image;
use coam::matcher::Match;
use coam::net::PairDescription;

pub const OVERLAY_FILE: &str = "matches.png";
pub const ATTENTION_FILE: &str = "attention.png";

const LINE: [f32; 3] = [0.1, 1.0, 0.2];
const MARKER: [f32; 3] = [1.0, 0.1, 0.1];

fn side_by_side(a: &Image, b: &Image) -> Image {
    let (w, h) = (a.width() + b.width(), a.height().max(b.height()));
    let mut out = Image::filled(w, h, [0.0; 3]);
    for y in 0..a.height() {
        for x in 0..a.width() {
            out.set_pixel(x, y, a.pixel(x, y));
        }
    }
    for y in 0..b.height() {
        for x in 0..b.width() {
            out.set_pixel(a.width() + x, y, b.pixel(x, y));
        }
    }
    out
}

fn put(img: &mut Image, x: f64, y: f64, rgb: [f32; 3]) {
    let (xi, yi) = (x.round(), y.round());
    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < img.width() && (yi as usize) < img.height() {
        img.set_pixel(xi as usize, yi as usize, rgb);
    }
}

fn draw_line(img: &mut Image, p: [f64; 2], q: [f64; 2], rgb: [f32; 3]) {
    let n = (q[0] - p[0]).abs().max((q[1] - p[1]).abs()).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        put(img, p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), rgb);
    }
}

fn draw_cross(img: &mut Image, p: [f64; 2], rgb: [f32; 3]) {
    for d in -2..=2 {
        put(img, p[0] + d as f64, p[1], rgb);
        put(img, p[0], p[1] + d as f64, rgb);
    }
}

/// Both images side by side with a line per match.
pub fn match_overlay(a: &Image, b: &Image, matches: &[Match]) -> Image {
    let mut out = side_by_side(a, b);
    let dx = a.width() as f64;
    for m in matches {
        draw_line(&mut out, m.p1, [m.p2[0] + dx, m.p2[1]], LINE);
    }
    out
}

/// Image 1 with the query marked, next to image 2 tinted by the attention
/// the query's location pays to each location of image 2.
pub fn attention_map(a: &Image, b: &Image, desc: &PairDescription, query: [f64; 2]) -> coam::Result<Image> {
    let att = desc.attention_fine.as_ref().unwrap_or(&desc.attention_coarse);
    let side1 = (att.rows() as f64).sqrt().round() as usize;
    let side2 = (att.cols() as f64).sqrt().round() as usize;
    if !(query[0] >= 0.0 && query[1] >= 0.0 && query[0] < a.width() as f64 && query[1] < a.height() as f64) {
        return Err(coam::Error::InvalidArgument(format!(
            "query point ({}, {}) outside image 1",
            query[0], query[1]
        )));
    }
    let qx = (query[0] * side1 as f64 / a.width() as f64) as usize;
    let qy = (query[1] * side1 as f64 / a.height() as f64) as usize;
    let row = att.row(qy * side1 + qx);
    let peak = row.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut heat = b.clone();
    for y in 0..b.height() {
        for x in 0..b.width() {
            let cx = x * side2 / b.width();
            let cy = y * side2 / b.height();
            let v = (row[cy * side2 + cx] / peak) as f32;
            let [r, g, bl] = b.pixel(x, y);
            let grey = (r + g + bl) / 3.0;
            heat.set_pixel(x, y, [0.4 * grey + 0.6 * v, 0.4 * grey, 0.4 * grey + 0.6 * (1.0 - v)]);
        }
    }
    let mut out = side_by_side(a, &heat);
    draw_cross(&mut out, query, MARKER);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_has_combined_width_and_draws_lines() {
        let a = Image::filled(8, 6, [0.0; 3]);
        let m = Match {
            p1: [1.0, 1.0],
            p2: [1.0, 1.0],
            score: 1.0,
        };
        let out = match_overlay(&a, &a, &[m]);
        assert_eq!((out.width(), out.height()), (16, 6));
        assert_eq!(out.pixel(1, 1), LINE);
        assert_eq!(out.pixel(9, 1), LINE);
        assert_eq!(out.pixel(5, 3), [0.0; 3]);
    }
}

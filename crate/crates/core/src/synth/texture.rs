use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of value noise: random lattice values every `cell` pixels,
/// smoothstep-interpolated.
fn octave(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f64, out: &mut [f64], amplitude: f64) {
    let lw = (width as f64 / cell).ceil() as usize + 2;
    let lh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
    for y in 0..height {
        let fy = y as f64 / cell;
        let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..width {
            let fx = x as f64 / cell;
            let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let v = |i: usize, j: usize| lattice[j * lw + i];
            let top = v(x0, y0) * (1.0 - tx) + v(x0 + 1, y0) * tx;
            let bot = v(x0, y0 + 1) * (1.0 - tx) + v(x0 + 1, y0 + 1) * tx;
            out[y * width + x] += amplitude * (top * (1.0 - ty) + bot * ty);
        }
    }
}

/// Multi-octave RGB value noise on a `width × height` canvas, each channel
/// stretched to `[0, 1]`.
pub fn generate_texture_rect(seed: u64, width: usize, height: usize) -> Result<Image> {
    if width < 16 || height < 16 {
        return Err(Error::InvalidArgument(format!(
            "texture needs size >= 16, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = [16.0, 8.0, 4.0, 2.0];
    let amps = [1.0, 0.7, 0.5, 0.3];
    let n = width * height;
    let mut data = vec![0f32; n * 3];
    let mut chan = vec![0.0; n];
    for c in 0..3 {
        chan.fill(0.0);
        for (&cell, &a) in cells.iter().zip(&amps) {
            octave(&mut rng, width, height, cell, &mut chan, a);
        }
        let lo = chan.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = chan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for (i, v) in chan.iter().enumerate() {
            data[i * 3 + c] = ((v - lo) / span) as f32;
        }
    }
    Image::new(width, height, data)
}

/// Square texture of side `size`.
pub fn generate_texture(seed: u64, size: usize) -> Result<Image> {
    generate_texture_rect(seed, size, size)
}

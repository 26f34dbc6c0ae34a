//! Coarse-to-fine image pyramids.

use super::{FlowError, Image};

/// Image pyramid, level 0 finest; each coarser level halves the dimensions
/// (rounding up) after binomial low-pass filtering.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Image>,
}

impl Pyramid {
    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> &Image {
        &self.levels[i]
    }

    pub fn finest(&self) -> &Image {
        &self.levels[0]
    }
}

/// Builds an image pyramid by repeated [1,4,6,4,1]/16 filtering and 2x
/// decimation. Fails with `TooManyLevels` if any requested level would be
/// smaller than 2 pixels on a side.
pub fn build_pyramid(img: &Image, levels: usize) -> Result<Pyramid, FlowError> {
    if levels == 0 {
        return Err(FlowError::TooManyLevels {
            levels,
            width: img.width(),
            height: img.height(),
        });
    }
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap();
        if prev.width() < 4 || prev.height() < 4 {
            return Err(FlowError::TooManyLevels {
                levels,
                width: img.width(),
                height: img.height(),
            });
        }
        out.push(downsample(prev));
    }
    Ok(Pyramid { levels: out })
}

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror index about the borders (whole-sample symmetric extension).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

fn downsample(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    // Horizontal pass.
    let mut hp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &c) in KERNEL.iter().enumerate() {
                acc += c * img.get(reflect(x as isize + k as isize - 2, w), y);
            }
            hp[y * w + x] = acc;
        }
    }
    // Vertical pass, then decimate by 2 in both axes.
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    let mut data = Vec::with_capacity(w2 * h2);
    for y2 in 0..h2 {
        let y = 2 * y2;
        for x2 in 0..w2 {
            let x = 2 * x2;
            let mut acc = 0.0;
            for (k, &c) in KERNEL.iter().enumerate() {
                acc += c * hp[reflect(y as isize + k as isize - 2, h) * w + x];
            }
            data.push(acc);
        }
    }
    Image::new(w2, h2, data).expect("downsampled dimensions are consistent")
}

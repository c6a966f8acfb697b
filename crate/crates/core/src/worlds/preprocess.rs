use crate::error::{dim_err, Error, Result};
use crate::numeric::Tensor;

/// Luma weights applied to the red, green and blue planes.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Default side length of a preprocessed state.
pub const DEFAULT_SIZE: usize = 84;

/// Converts a `[3,H,W]` image to `[1,H,W]` luma.
pub fn rgb_to_grayscale(img: &Tensor) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(dim_err(format!("grayscale expects [3,H,W], got {s:?}")));
    }
    let plane = s[1] * s[2];
    let d = img.data();
    let out = (0..plane)
        .map(|i| {
            let v = LUMA_WEIGHTS[0] * d[i] + LUMA_WEIGHTS[1] * d[plane + i] + LUMA_WEIGHTS[2] * d[2 * plane + i];
            v.clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(&[1, s[1], s[2]], out)
}

/// Overlap of the target interval `[o*scale, (o+1)*scale)` with each source
/// cell, as `(source index, weight)` pairs whose weights sum to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                if overlap > 1e-12 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Box-filter (area-average) downsampling of a `[C,H,W]` image.
pub fn resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(dim_err(format!("resize expects [C,H,W], got {s:?}")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(dim_err("resize target must be positive"));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if out_h > h || out_w > w {
        return Err(Error::Unsupported(format!(
            "upsampling {h}x{w} to {out_h}x{out_w}"
        )));
    }
    if out_h == h && out_w == w {
        return Ok(img.clone());
    }
    let wy = area_weights(h, out_h);
    let wx = area_weights(w, out_w);
    let d = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for ry in &wy {
            for rx in &wx {
                let mut acc = 0.0f64;
                for &(y, fy) in ry {
                    for &(x, fx) in rx {
                        acc += fy * fx * plane[y * w + x] as f64;
                    }
                }
                out.push((acc as f32).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Grayscale conversion (for 3-channel input) followed by resizing.
pub fn preprocess(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let gray = match img.shape().first() {
        Some(3) => rgb_to_grayscale(img)?,
        Some(1) => img.clone(),
        _ => return Err(dim_err(format!("preprocess expects 1 or 3 channels, got {:?}", img.shape()))),
    };
    resize(&gray, out_h, out_w)
}

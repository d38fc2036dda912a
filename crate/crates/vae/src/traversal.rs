use std::io::Write;

use ndarray::{Array2, Array3, ArrayView1};

use crate::model::VaeModel;
use crate::{Error, Result};

/// Decoded images along latent axes: `images[[r, c, ..]]` moves latent
/// `dims[r]` to `values[c]` with the other coordinates at the posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    pub images: Array3<f64>,
}

pub fn latent_traversal(
    model: &VaeModel,
    x: ArrayView1<f64>,
    dims: &[usize],
    n_points: usize,
    range: [f64; 2],
) -> Result<Traversal> {
    let n = model.arch().latent_dim;
    if let Some(&d) = dims.iter().find(|&&d| d >= n) {
        return Err(Error::InvalidConfig(format!(
            "latent index {d} out of range for {n} dimensions"
        )));
    }
    if n_points == 0 {
        return Err(Error::InvalidConfig("traversal needs at least one point".into()));
    }
    let [lo, hi] = range;
    let values: Vec<f64> = (0..n_points)
        .map(|j| {
            if n_points == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * j as f64 / (n_points - 1) as f64
            }
        })
        .collect();
    let post = model.encode(x.insert_axis(ndarray::Axis(0)))?;
    let base = post.mu.row(0);
    let mut z = Array2::zeros((dims.len() * n_points, n));
    for (r, &d) in dims.iter().enumerate() {
        for (c, &v) in values.iter().enumerate() {
            let mut row = z.row_mut(r * n_points + c);
            row.assign(&base);
            row[d] = v;
        }
    }
    let decoded = model.decode(z.view())?;
    let m = model.arch().input_dim;
    let images = decoded
        .into_shape_with_order((dims.len(), n_points, m))
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(Traversal {
        dims: dims.to_vec(),
        values,
        images,
    })
}

impl Traversal {
    /// 8-bit grayscale PNG with one `height × width` tile per grid cell.
    pub fn write_png(&self, out: impl Write, height: usize, width: usize) -> Result<()> {
        let (rows, cols, m) = self.images.dim();
        if height * width != m {
            return Err(Error::Shape {
                expected: m,
                got: height * width,
            });
        }
        let (w, h) = (cols * width, rows * height);
        let mut pixels = vec![0u8; w * h];
        for r in 0..rows {
            for c in 0..cols {
                for k in 0..m {
                    let (y, x) = (r * height + k / width, c * width + k % width);
                    pixels[y * w + x] = (self.images[[r, c, k]].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        let mut enc = png::Encoder::new(out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&pixels)?;
        writer.finish()?;
        Ok(())
    }

    /// Rows `dim,value,p0,…,p{m-1}`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let m = self.images.dim().2;
        write!(out, "dim,value")?;
        for k in 0..m {
            write!(out, ",p{k}")?;
        }
        writeln!(out)?;
        for (r, &d) in self.dims.iter().enumerate() {
            for (c, &v) in self.values.iter().enumerate() {
                write!(out, "{d},{v}")?;
                for k in 0..m {
                    write!(out, ",{}", self.images[[r, c, k]])?;
                }
                writeln!(out)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

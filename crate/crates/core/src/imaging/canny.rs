//! Canny edge detection over binary rasters.
//!
//! Input pixels are treated as 0/255; gradients come from separable
//! binomial-smoothed derivative kernels (the classic Sobel family), the
//! magnitude is L2, non-maximum suppression quantises the gradient direction
//! to four sectors, and hysteresis links weak edges to strong ones with
//! 8-connectivity.

use super::Bitmap;

/// Separable derivative kernels for an odd aperture: `(smooth, deriv)`.
/// Aperture 3 yields the classic `[1,2,1]` / `[-1,0,1]` pair; larger odd
/// apertures extend both rows binomially.
fn deriv_kernels(aperture: usize) -> (Vec<f64>, Vec<f64>) {
    fn pascal(n: usize) -> Vec<f64> {
        let mut row = vec![1.0];
        for _ in 1..n {
            let mut next = vec![1.0];
            for w in row.windows(2) {
                next.push(w[0] + w[1]);
            }
            next.push(1.0);
            row = next;
        }
        row
    }
    fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }
    let smooth = pascal(aperture);
    let deriv = convolve(&pascal(aperture - 2), &[-1.0, 0.0, 1.0]);
    (smooth, deriv)
}

/// 1D convolution along rows with replicated borders.
fn convolve_rows(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for v in 0..height {
        for u in 0..width as i64 {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let uu = (u + k as i64 - r).clamp(0, width as i64 - 1) as usize;
                acc += w * src[v * width + uu];
            }
            out[v * width + u as usize] = acc;
        }
    }
    out
}

/// 1D convolution along columns with replicated borders.
fn convolve_cols(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for v in 0..height as i64 {
        for u in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let vv = (v + k as i64 - r).clamp(0, height as i64 - 1) as usize;
                acc += w * src[vv * width + u];
            }
            out[v as usize * width + u] = acc;
        }
    }
    out
}

pub(super) fn canny(binary: &Bitmap, low: f64, high: f64, aperture: usize) -> Bitmap {
    let (width, height) = (binary.width, binary.height);
    if width < 3 || height < 3 {
        return Bitmap::new(width, height);
    }
    let gray: Vec<f64> = (0..width * height)
        .map(|i| {
            if binary.get(i % width, i / width) {
                255.0
            } else {
                0.0
            }
        })
        .collect();

    let (smooth, deriv) = deriv_kernels(aperture);
    let gx = convolve_cols(&convolve_rows(&gray, width, height, &deriv), width, height, &smooth);
    let gy = convolve_rows(&convolve_cols(&gray, width, height, &deriv), width, height, &smooth);
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(x, y)| (x * x + y * y).sqrt())
        .collect();

    // Non-maximum suppression: keep a pixel only if its magnitude beats the
    // previous neighbour along the gradient and at least ties the next one
    // (the asymmetry thins two-pixel plateaus to one).
    let mut thin = vec![0.0; mag.len()];
    for v in 1..height - 1 {
        for u in 1..width - 1 {
            let i = v * width + u;
            let m = mag[i];
            if m <= low {
                continue;
            }
            let (dx, dy) = (gx[i], gy[i]);
            // Quantise the gradient direction to one of 4 sectors.
            let (n0, n1) = if dx == 0.0 && dy == 0.0 {
                continue;
            } else {
                let angle = dy.atan2(dx).rem_euclid(std::f64::consts::PI);
                let sector = ((angle / (std::f64::consts::PI / 4.0)) + 0.5) as usize % 4;
                match sector {
                    0 => (i - 1, i + 1),               // horizontal gradient
                    1 => (i - width + 1, i + width - 1), // 45°
                    2 => (i - width, i + width),       // vertical gradient
                    _ => (i - width - 1, i + width + 1), // 135°
                }
            };
            if m > mag[n0] && m >= mag[n1] {
                thin[i] = m;
            }
        }
    }

    // Hysteresis: BFS from strong pixels through weak ones, 8-connected.
    let mut out = Bitmap::new(width, height);
    let mut stack: Vec<usize> = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > high && !out.data_at(i) {
            out.set_at(i, true);
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (ju, jv) = (j % width, j / width);
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        let (nu, nv) = (ju as i64 + du, jv as i64 + dv);
                        if nu < 0 || nv < 0 || nu >= width as i64 || nv >= height as i64 {
                            continue;
                        }
                        let n = nv as usize * width + nu as usize;
                        if thin[n] > low && !out.data_at(n) {
                            out.set_at(n, true);
                            stack.push(n);
                        }
                    }
                }
            }
        }
    }
    out
}

impl Bitmap {
    #[inline]
    fn data_at(&self, i: usize) -> bool {
        self.get(i % self.width, i / self.width)
    }

    #[inline]
    fn set_at(&mut self, i: usize, on: bool) {
        let (u, v) = (i % self.width, i / self.width);
        self.set(u, v, on);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aperture_3_kernels_are_classic_sobel() {
        let (smooth, deriv) = deriv_kernels(3);
        assert_eq!(smooth, vec![1.0, 2.0, 1.0]);
        assert_eq!(deriv, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn aperture_5_kernels_extend_binomially() {
        let (smooth, deriv) = deriv_kernels(5);
        assert_eq!(smooth, vec![1.0, 4.0, 6.0, 4.0, 1.0]);
        assert_eq!(deriv, vec![-1.0, -2.0, 0.0, 2.0, 1.0]);
    }

    #[test]
    fn tiny_raster_yields_no_edges() {
        let b = Bitmap::new(2, 2);
        assert_eq!(canny(&b, 50.0, 150.0, 3).count_set(), 0);
    }

    #[test]
    fn vertical_step_gives_vertical_edge_line() {
        let mut b = Bitmap::new(12, 10);
        for v in 0..10 {
            for u in 6..12 {
                b.set(u, v, true);
            }
        }
        let edges = canny(&b, 50.0, 150.0, 3);
        assert!(edges.any());
        for v in 0..10 {
            for u in 0..12 {
                if edges.get(u, v) {
                    assert!(u == 5 || u == 6, "edge at unexpected column {u}");
                }
            }
        }
    }
}

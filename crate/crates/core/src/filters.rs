use crate::image::GrayImage;

/// Horizontal Sobel kernel, indexed `[row][col]` with row = y offset + 1.
pub const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical Sobel kernel (transpose of [`SOBEL_X`]).
pub const SOBEL_Y: [[f32; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Sobel responses `(G_x, G_y)` with replicate padding at the border.
pub fn sobel(img: &GrayImage) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let (r0, r1, r2) = (img.row(ym), img.row(y), img.row(yp));
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let dx = (r0[xp] - r0[xm]) + 2.0 * (r1[xp] - r1[xm]) + (r2[xp] - r2[xm]);
            let dy = (r2[xm] + 2.0 * r2[x] + r2[xp]) - (r0[xm] + 2.0 * r0[x] + r0[xp]);
            gx[y * w + x] = dx;
            gy[y * w + x] = dy;
        }
    }
    (gx, gy)
}

/// Separable Gaussian blur with replicate padding; the kernel is truncated
/// at 3σ and renormalised. `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let (w, h) = (img.width(), img.height());
    let pass = |src: &GrayImage, horizontal: bool| {
        GrayImage::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for (i, k) in (-r..=r).zip(&kernel) {
                let v = if horizontal { src.get_clamped(x as isize + i, y as isize) } else { src.get_clamped(x as isize, y as isize + i) };
                acc += k * v as f64;
            }
            acc as f32
        })
    };
    pass(&pass(img, true), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants_and_mass() {
        let flat = GrayImage::filled(9, 7, 42.0);
        assert!(gaussian_blur(&flat, 1.3).data().iter().all(|&v| (v - 42.0).abs() < 1e-4));
        let mut dot = GrayImage::filled(21, 21, 0.0);
        dot.set(10, 10, 100.0);
        let b = gaussian_blur(&dot, 1.0);
        let total: f32 = b.data().iter().sum();
        assert!((total - 100.0).abs() < 1e-3);
        assert!((b.get(9, 10) - b.get(11, 10)).abs() < 1e-5);
        assert!(b.get(10, 10) < 100.0);
        assert_eq!(gaussian_blur(&dot, 0.0), dot);
    }

    #[test]
    fn matches_kernel_convolution() {
        let img = GrayImage::from_fn(6, 5, |x, y| ((x * 7 + y * 13) % 11) as f32 * 3.0);
        let (gx, gy) = sobel(&img);
        for y in 0..5isize {
            for x in 0..6isize {
                let mut ex = 0.0;
                let mut ey = 0.0;
                for j in -1..=1isize {
                    for i in -1..=1isize {
                        let v = img.get_clamped(x + i, y + j);
                        ex += v * SOBEL_X[(j + 1) as usize][(i + 1) as usize];
                        ey += v * SOBEL_Y[(j + 1) as usize][(i + 1) as usize];
                    }
                }
                let idx = (y * 6 + x) as usize;
                assert_eq!(gx[idx], ex);
                assert_eq!(gy[idx], ey);
            }
        }
    }
}

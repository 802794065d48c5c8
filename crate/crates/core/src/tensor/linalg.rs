//! Dense kernels behind the convolution ops.
//!
//! All parallel loops split over disjoint output regions and accumulate
//! sequentially inside each region, so results are bit-identical for any
//! worker count.

use rayon::prelude::*;

use super::Elem;

/// `c[m,n] += a[m,k] * b[k,n]`, row-major. Parallel over rows of `c`.
pub(crate) fn matmul_acc<T: Elem>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * *bj;
            }
        }
    });
}

pub(crate) fn matmul<T: Elem>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(&mut c, a, b, m, k, n);
    c
}

pub(crate) fn transpose<T: Elem>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Unfold one `[C,H,W]` image into a `[C*k*k, H*W]` patch matrix for a
/// k-by-k kernel with zero "same" padding and stride 1.
pub(crate) fn im2col<T: Elem>(img: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = k / 2;
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * k * k * h * w);
    let plane = h * w;
    for ch in 0..c {
        let src = &img[ch * plane..(ch + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * plane;
                let dst = &mut col[row..row + plane];
                for y in 0..h {
                    let sy = y as isize + ki as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        dst[y * w..(y + 1) * w].fill(T::zero());
                        continue;
                    }
                    let srow = &src[(sy as usize) * w..(sy as usize + 1) * w];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kj as isize - pad as isize;
                        drow[x] = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a `[C*k*k, H*W]` patch-gradient matrix back onto a `[C,H,W]`
/// image, adding overlapping contributions.
pub(crate) fn col2im_acc<T: Elem>(col: &[T], c: usize, h: usize, w: usize, k: usize, img: &mut [T]) {
    let pad = k / 2;
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * k * k * h * w);
    let plane = h * w;
    for ch in 0..c {
        let dst = &mut img[ch * plane..(ch + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ch * k + ki) * k + kj) * plane;
                let src = &col[row..row + plane];
                for y in 0..h {
                    let sy = y as isize + ki as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kj as isize - pad as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[(sy as usize) * w + sx as usize] += src[y * w + x];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let c = matmul::<f64>(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let t = transpose(&a, 3, 4);
        let back = transpose(&t, 4, 3);
        assert_eq!(a, back);
    }

    #[test]
    fn im2col_identity_kernel_center_row() {
        // For k=3 the center row of the patch matrix is the image itself.
        let img: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let mut col = vec![0.0; 9 * 16];
        im2col(&img, 1, 4, 4, 3, &mut col);
        let center = &col[4 * 16..5 * 16];
        assert_eq!(center, &img[..]);
    }
}

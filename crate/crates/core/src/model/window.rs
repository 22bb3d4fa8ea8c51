//! Window partitioning for the global branch.
//!
//! An image `B×H×W×D` is reflect-padded up to multiples of the window,
//! cyclically rolled by `shift` (pixel `i` of the rolled image is pixel
//! `i + shift` of the padded one), and cut into non-overlapping windows
//! `(B·nW)×window²×D`. Every step is a pure re-indexing of pixel rows, so the
//! whole chain is a single row gather and is exact in both directions.

use std::sync::Arc;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{bhwc, Real, Tensor};

/// Index `i` folded into `0..n` by mirror reflection without repeating the
/// edge (`-1 → 1`, `n → n-2`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Spatial size after padding to multiples of `window`.
pub fn padded_size(h: usize, w: usize, window: usize) -> (usize, usize) {
    (h.div_ceil(window) * window, w.div_ceil(window) * window)
}

/// Geometry of one partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGrid {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub shift: usize,
}

impl WindowGrid {
    pub fn new(batch: usize, height: usize, width: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if shift >= window {
            return Err(Error::Config(format!("shift {shift} must be smaller than window {window}")));
        }
        Ok(WindowGrid {
            batch,
            height,
            width,
            window,
            shift,
        })
    }

    pub fn padded(&self) -> (usize, usize) {
        padded_size(self.height, self.width, self.window)
    }

    /// Windows per image.
    pub fn windows_per_image(&self) -> usize {
        let (hp, wp) = self.padded();
        (hp / self.window) * (wp / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    /// Shape of the partitioned tensor without the feature axis.
    pub fn lead(&self) -> [usize; 2] {
        [self.batch * self.windows_per_image(), self.tokens_per_window()]
    }

    /// For every window token, the source pixel row in the unpadded image.
    pub fn partition_index(&self) -> Vec<usize> {
        let (hp, wp) = self.padded();
        let win = self.window;
        let (nwh, nww) = (hp / win, wp / win);
        let mut index = Vec::with_capacity(self.batch * hp * wp);
        for b in 0..self.batch {
            for wy in 0..nwh {
                for wx in 0..nww {
                    for ty in 0..win {
                        for tx in 0..win {
                            let sy = (wy * win + ty + self.shift) % hp;
                            let sx = (wx * win + tx + self.shift) % wp;
                            let y = reflect(sy as isize, self.height);
                            let x = reflect(sx as isize, self.width);
                            index.push((b * self.height + y) * self.width + x);
                        }
                    }
                }
            }
        }
        index
    }

    /// For every pixel of the unpadded image, its row in the partition.
    pub fn reverse_index(&self) -> Vec<usize> {
        let (hp, wp) = self.padded();
        let win = self.window;
        let (nwh, nww) = (hp / win, wp / win);
        let mut index = Vec::with_capacity(self.batch * self.height * self.width);
        for b in 0..self.batch {
            for y in 0..self.height {
                for x in 0..self.width {
                    let py = (y + hp - self.shift) % hp;
                    let px = (x + wp - self.shift) % wp;
                    let w = (b * nwh + py / win) * nww + px / win;
                    index.push(w * win * win + (py % win) * win + px % win);
                }
            }
        }
        index
    }
}

fn gather_rows_tensor<T: Real>(x: &Tensor<T>, index: &[usize], lead: &[usize]) -> Result<Tensor<T>> {
    let d = x.last_dim();
    let src = x.data();
    let mut out = Vec::with_capacity(index.len() * d);
    for &i in index {
        out.extend_from_slice(&src[i * d..(i + 1) * d]);
    }
    let mut shape = lead.to_vec();
    shape.push(d);
    Tensor::new(&shape, out)
}

/// `B×H×W×D → (B·nW)×window²×D`.
pub fn window_partition<T: Real>(x: &Tensor<T>, window: usize, shift: usize) -> Result<Tensor<T>> {
    let [b, h, w, _] = bhwc("window_partition", x)?;
    let grid = WindowGrid::new(b, h, w, window, shift)?;
    gather_rows_tensor(x, &grid.partition_index(), &grid.lead())
}

/// Inverse of [`window_partition`] for an `h×w` image; padding is cropped.
pub fn window_reverse<T: Real>(windows: &Tensor<T>, window: usize, shift: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    windows.expect_rank("window_reverse", 3)?;
    let (hp, wp) = padded_size(h, w, window);
    let per_image = (hp / window) * (wp / window);
    let s = windows.shape();
    if s[1] != window * window || s[0] % per_image != 0 {
        return Err(Error::shape(
            "window_reverse",
            "windows",
            format!("{s:?} does not tile a {h}x{w} image with window {window}"),
        ));
    }
    let grid = WindowGrid::new(s[0] / per_image, h, w, window, shift)?;
    gather_rows_tensor(windows, &grid.reverse_index(), &[grid.batch, h, w])
}

/// Cyclic roll of an image so that output pixel `(y, x)` is input pixel
/// `(y + shift, x + shift)` modulo the size.
pub fn roll<T: Real>(x: &Tensor<T>, shift: isize) -> Result<Tensor<T>> {
    let [b, h, w, _] = bhwc("roll", x)?;
    let index = roll_index(b, h, w, shift);
    gather_rows_tensor(x, &index, &[b, h, w])
}

fn roll_index(b: usize, h: usize, w: usize, shift: isize) -> Vec<usize> {
    let mut index = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let sy = (y as isize + shift).rem_euclid(h as isize) as usize;
                let sx = (x as isize + shift).rem_euclid(w as isize) as usize;
                index.push((bi * h + sy) * w + sx);
            }
        }
    }
    index
}

/// Differentiable [`window_partition`].
pub fn partition<'t, T: Real>(x: &Var<'t, T>, grid: &WindowGrid) -> Result<Var<'t, T>> {
    ops::gather_rows(x, Arc::new(grid.partition_index()), &grid.lead())
}

/// Differentiable [`window_reverse`].
pub fn reverse<'t, T: Real>(windows: &Var<'t, T>, grid: &WindowGrid) -> Result<Var<'t, T>> {
    ops::gather_rows(windows, Arc::new(grid.reverse_index()), &[grid.batch, grid.height, grid.width])
}

/// Differentiable [`roll`].
pub fn roll_var<'t, T: Real>(x: &Var<'t, T>, shift: isize) -> Result<Var<'t, T>> {
    let [b, h, w, _] = bhwc("roll", x.value())?;
    ops::gather_rows(x, Arc::new(roll_index(b, h, w, shift)), &[b, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn counts_windows() {
        let x = Tensor::<f32>::from_fn(&[1, 8, 8, 3], |i| i as f32).unwrap();
        let p = window_partition(&x, 4, 0).unwrap();
        assert_eq!(p.shape(), &[4, 16, 3]);
        assert_eq!(p.at(&[1, 0, 0]), x.at(&[0, 0, 4, 0]));
    }

    #[test]
    fn round_trip_with_padding_and_shift() {
        let x = Tensor::<f64>::from_fn(&[2, 5, 7, 2], |i| i as f64 * 0.5).unwrap();
        for shift in [0, 2] {
            let p = window_partition(&x, 4, shift).unwrap();
            assert_eq!(p.shape(), &[2 * 4, 16, 2]);
            assert_eq!(window_reverse(&p, 4, shift, 5, 7).unwrap(), x);
        }
    }

    #[test]
    fn shift_is_a_roll() {
        let x = Tensor::<f32>::from_fn(&[1, 8, 8, 1], |i| i as f32).unwrap();
        let shifted = window_partition(&x, 4, 2).unwrap();
        let rolled = window_partition(&roll(&x, 2).unwrap(), 4, 0).unwrap();
        assert_eq!(shifted, rolled);
        assert_eq!(roll(&roll(&x, 2).unwrap(), -2).unwrap(), x);
    }
}

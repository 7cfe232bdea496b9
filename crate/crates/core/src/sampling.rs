//! Per-axis linear operators in compressed sparse row form.
//!
//! Every spatial filter in the crate (pyramid reduce, SSIM window, resamplers)
//! is separable, so it is described by one [`AxisPlan`] per axis. Adjoints are
//! obtained by transposing the plan, which makes them exact by construction.

use rayon::prelude::*;

use crate::image::Grid;

const PAR_MIN_ROWS: usize = 16;
const BLOCK: usize = 64;

/// `dst = Σ w · src`, accumulated block-wise so each output is stored once.
#[inline]
fn weighted_sum(dst: &mut [f64], terms: &[(&[f64], f64)]) {
    let n = dst.len();
    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        let mut acc = [0.0f64; BLOCK];
        let acc = &mut acc[..len];
        for &(src, w) in terms {
            for (a, &v) in acc.iter_mut().zip(&src[start..start + len]) {
                *a += w * v;
            }
        }
        dst[start..start + len].copy_from_slice(acc);
        start += len;
    }
}

/// Reflection without repeating the edge sample: `... c b | a b c d | c b ...`.
#[inline]
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Half-sample symmetric reflection: `... b a | a b c d | d c ...`.
#[inline]
pub(crate) fn reflect_symmetric(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let j = i.rem_euclid(period);
    if j >= n as isize {
        (period - 1 - j) as usize
    } else {
        j as usize
    }
}

/// Outputs `lo..hi` whose taps are `o + shift_k` with shared weights.
#[derive(Debug, Clone)]
struct Stencil {
    lo: usize,
    hi: usize,
    shifts: Vec<isize>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct AxisPlan {
    n_in: usize,
    n_out: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
    stencil: Option<Stencil>,
}

impl AxisPlan {
    pub fn from_taps(
        n_in: usize,
        n_out: usize,
        mut taps: impl FnMut(usize, &mut Vec<(usize, f64)>),
    ) -> Self {
        let mut offsets = Vec::with_capacity(n_out + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        let mut scratch = Vec::new();
        offsets.push(0);
        for o in 0..n_out {
            scratch.clear();
            taps(o, &mut scratch);
            // merge taps that fold onto the same source sample
            scratch.sort_by_key(|t| t.0);
            let mut k = 0;
            while k < scratch.len() {
                let (i, mut w) = scratch[k];
                k += 1;
                while k < scratch.len() && scratch[k].0 == i {
                    w += scratch[k].1;
                    k += 1;
                }
                debug_assert!(i < n_in);
                index.push(i);
                weight.push(w);
            }
            offsets.push(index.len());
        }
        let mut plan = Self {
            n_in,
            n_out,
            offsets,
            index,
            weight,
            stencil: None,
        };
        plan.stencil = plan.find_stencil();
        plan
    }

    fn find_stencil(&self) -> Option<Stencil> {
        if self.n_out < 3 {
            return None;
        }
        let mid = self.n_out / 2;
        let shifts: Vec<isize> = self.taps(mid).map(|(i, _)| i as isize - mid as isize).collect();
        let weights: Vec<f64> = self.taps(mid).map(|(_, w)| w).collect();
        let matches = |o: usize| {
            let (a, b) = (self.offsets[o], self.offsets[o + 1]);
            b - a == shifts.len()
                && self.index[a..b]
                    .iter()
                    .zip(&self.weight[a..b])
                    .zip(shifts.iter().zip(&weights))
                    .all(|((&i, &w), (&s, &sw))| i as isize - o as isize == s && w == sw)
        };
        let mut lo = mid;
        while lo > 0 && matches(lo - 1) {
            lo -= 1;
        }
        let mut hi = mid + 1;
        while hi < self.n_out && matches(hi) {
            hi += 1;
        }
        (hi - lo >= 8).then_some(Stencil {
            lo,
            hi,
            shifts,
            weights,
        })
    }

    /// Same-size convolution with a centered odd-length kernel.
    pub fn convolve(n: usize, kernel: &[f64], border: fn(isize, usize) -> usize) -> Self {
        let r = (kernel.len() / 2) as isize;
        Self::from_taps(n, n, |o, taps| {
            for (k, &w) in kernel.iter().enumerate() {
                taps.push((border(o as isize + k as isize - r, n), w));
            }
        })
    }

    /// Convolution evaluated only at even positions: output length `ceil(n/2)`.
    pub fn convolve_decimate(n: usize, kernel: &[f64], border: fn(isize, usize) -> usize) -> Self {
        let r = (kernel.len() / 2) as isize;
        Self::from_taps(n, n.div_ceil(2), |o, taps| {
            for (k, &w) in kernel.iter().enumerate() {
                taps.push((border(2 * o as isize + k as isize - r, n), w));
            }
        })
    }

    #[cfg(test)]
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    #[cfg(test)]
    pub fn n_out(&self) -> usize {
        self.n_out
    }

    #[inline]
    fn taps(&self, o: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[o], self.offsets[o + 1]);
        self.index[a..b]
            .iter()
            .copied()
            .zip(self.weight[a..b].iter().copied())
    }

    pub fn transpose(&self) -> Self {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_in];
        for o in 0..self.n_out {
            for (i, w) in self.taps(o) {
                cols[i].push((o, w));
            }
        }
        Self::from_taps(self.n_out, self.n_in, |i, taps| {
            taps.extend_from_slice(&cols[i]);
        })
    }

    /// Dense `n_out × n_in` matrix; test helper.
    #[cfg(test)]
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_in]; self.n_out];
        for (o, row) in m.iter_mut().enumerate() {
            for (i, w) in self.taps(o) {
                row[i] += w;
            }
        }
        m
    }

    /// Applies along the width axis.
    pub fn apply_horizontal(&self, g: &Grid) -> Grid {
        assert_eq!(g.width(), self.n_in, "horizontal plan width");
        let (h, c) = (g.height(), g.channels());
        let in_stride = self.n_in * c;
        let out_stride = self.n_out * c;
        let src = g.data();
        let mut out = vec![0.0; h * out_stride];
        let (lo, hi) = self.stencil.as_ref().map_or((0, 0), |st| (st.lo, st.hi));
        let row = |(y, dst): (usize, &mut [f64])| {
            let s = &src[y * in_stride..(y + 1) * in_stride];
            if let Some(st) = &self.stencil {
                let d = &mut dst[lo * c..hi * c];
                let len = d.len();
                let terms: Vec<(&[f64], f64)> = st
                    .shifts
                    .iter()
                    .zip(&st.weights)
                    .map(|(&shift, &w)| {
                        let first = (lo as isize + shift) as usize * c;
                        (&s[first..first + len], w)
                    })
                    .collect();
                weighted_sum(d, &terms);
            }
            for o in (0..lo).chain(hi..self.n_out) {
                let d = &mut dst[o * c..(o + 1) * c];
                for (i, w) in self.taps(o) {
                    let si = &s[i * c..(i + 1) * c];
                    for k in 0..c {
                        d[k] += w * si[k];
                    }
                }
            }
        };
        if h >= PAR_MIN_ROWS {
            out.par_chunks_mut(out_stride).enumerate().for_each(row);
        } else {
            out.chunks_mut(out_stride).enumerate().for_each(row);
        }
        Grid::new(h, self.n_out, c, out).expect("plan output shape")
    }

    /// Applies along the height axis.
    pub fn apply_vertical(&self, g: &Grid) -> Grid {
        assert_eq!(g.height(), self.n_in, "vertical plan height");
        let stride = g.width() * g.channels();
        let src = g.data();
        let mut out = vec![0.0; self.n_out * stride];
        let row = |(o, dst): (usize, &mut [f64])| {
            let terms: Vec<(&[f64], f64)> = self
                .taps(o)
                .map(|(i, w)| (&src[i * stride..(i + 1) * stride], w))
                .collect();
            weighted_sum(dst, &terms);
        };
        if self.n_out >= PAR_MIN_ROWS {
            out.par_chunks_mut(stride).enumerate().for_each(row);
        } else {
            out.chunks_mut(stride).enumerate().for_each(row);
        }
        Grid::new(self.n_out, g.width(), g.channels(), out).expect("plan output shape")
    }
}

/// A separable 2-D operator: `vertical ∘ horizontal`.
#[derive(Debug, Clone)]
pub(crate) struct Separable {
    pub vertical: AxisPlan,
    pub horizontal: AxisPlan,
}

impl Separable {
    pub fn apply(&self, g: &Grid) -> Grid {
        self.vertical.apply_vertical(&self.horizontal.apply_horizontal(g))
    }

    pub fn adjoint(&self) -> Separable {
        Separable {
            vertical: self.vertical.transpose(),
            horizontal: self.horizontal.transpose(),
        }
    }
}

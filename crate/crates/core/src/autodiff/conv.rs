//! Direct 3D cross-correlation kernels on flat row-major buffers.
//!
//! Layouts: input `[B, Cin, T, H, W]`, kernel `[Cout, Cin, Kt, Kh, Kw]`,
//! output `[B, Cout, To, Ho, Wo]`. Zero padding, no kernel flip.

use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output indices `o` on `axis` for which `o*s + k - p` lands inside the input.
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (n, s, p, out) = (
            self.input[axis] as isize,
            self.stride[axis] as isize,
            self.padding[axis] as isize,
            self.output[axis] as isize,
        );
        let k = k as isize;
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        let hi = (n - 1 + p - k).div_euclid(s) + 1;
        let hi = hi.min(out);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

/// Output extent along one axis: `floor((n + 2p - k) / s) + 1`.
pub(crate) fn out_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = n + 2 * p;
    if k > padded || s == 0 {
        None
    } else {
        Some((padded - k) / s + 1)
    }
}

#[inline]
fn axpy<T: Element>(out: &mut [T], inp: &[T], w: T) {
    for (o, &x) in out.iter_mut().zip(inp) {
        *o += w * x;
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Visits every (output run, input run) pair touched by kernel tap `(kt, kh, kw)`.
/// The callback receives the output offset, the input offset of the first
/// element, and the run length; input elements are `stride[2]` apart.
#[inline]
fn for_each_row(g: &ConvGeometry, kt: usize, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize)) {
    let (t0, t1) = g.valid(0, kt);
    let (h0, h1) = g.valid(1, kh);
    let (w0, w1) = g.valid(2, kw);
    if w1 <= w0 {
        return;
    }
    let [_, hi_n, wi_n] = g.input;
    let [_, ho_n, wo_n] = g.output;
    if g.stride[1] == 1 && g.stride[2] == 1 && kw == g.padding[2] && wi_n == wo_n && h1 > h0 {
        // width maps onto itself, so consecutive rows form one contiguous run
        let len = (h1 - h0) * wo_n;
        for to in t0..t1 {
            let ti = to * g.stride[0] + kt - g.padding[0];
            let hi = h0 + kh - g.padding[1];
            f((to * ho_n + h0) * wo_n, (ti * hi_n + hi) * wi_n, len);
        }
        return;
    }
    let len = w1 - w0;
    for to in t0..t1 {
        let ti = to * g.stride[0] + kt - g.padding[0];
        for ho in h0..h1 {
            let hi = ho * g.stride[1] + kh - g.padding[1];
            let out_off = (to * ho_n + ho) * wo_n + w0;
            let wi = w0 * g.stride[2] + kw - g.padding[2];
            let in_off = (ti * hi_n + hi) * wi_n + wi;
            f(out_off, in_off, len);
        }
    }
}

impl ConvGeometry {
    /// A 1×1×1 unit-stride convolution reads its input planes directly.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> {
        let [kt_n, kh_n, kw_n] = self.kernel;
        (0..kt_n).flat_map(move |kt| (0..kh_n).flat_map(move |kh| (0..kw_n).map(move |kw| (kt, kh, kw))))
    }

    /// Unfolds one sample into `[Cin·Kt·Kh·Kw, To·Ho·Wo]` with zeros where taps fall in the padding.
    fn im2col<T: Element>(&self, sample: &[T], col: &mut [T]) {
        let (ip, op) = (self.in_plane(), self.out_plane());
        let sw = self.stride[2];
        col.fill(T::zero());
        let mut row = 0;
        for ci in 0..self.c_in {
            let plane = &sample[ci * ip..][..ip];
            for (kt, kh, kw) in self.taps() {
                let dst = &mut col[row * op..][..op];
                for_each_row(self, kt, kh, kw, |oo, io, len| {
                    for (j, d) in dst[oo..oo + len].iter_mut().enumerate() {
                        *d = plane[io + j * sw];
                    }
                });
                row += 1;
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: accumulates columns back onto input planes.
    fn col2im<T: Element>(&self, col: &[T], sample: &mut [T]) {
        let (ip, op) = (self.in_plane(), self.out_plane());
        let sw = self.stride[2];
        let mut row = 0;
        for ci in 0..self.c_in {
            let plane = &mut sample[ci * ip..][..ip];
            for (kt, kh, kw) in self.taps() {
                let src = &col[row * op..][..op];
                for_each_row(self, kt, kh, kw, |oo, io, len| {
                    for (j, &v) in src[oo..oo + len].iter().enumerate() {
                        plane[io + j * sw] += v;
                    }
                });
                row += 1;
            }
        }
    }
}

/// Unfolded sample `b`, or the raw input slice for pointwise convolutions.
fn columns<'a, T: Element>(g: &ConvGeometry, input: &'a [T], b: usize, buf: &'a mut Vec<T>) -> &'a [T] {
    let ip = g.in_plane();
    let sample = &input[b * g.c_in * ip..][..g.c_in * ip];
    if g.is_pointwise() {
        return sample;
    }
    buf.resize(g.c_in * g.kernel_volume() * g.out_plane(), T::zero());
    g.im2col(sample, buf);
    buf
}

pub(crate) fn forward<T: Element>(g: &ConvGeometry, input: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let op = g.out_plane();
    let rows = g.c_in * g.kernel_volume();
    let mut out = vec![T::zero(); g.batch * g.c_out * op];
    let mut buf = Vec::new();
    for b in 0..g.batch {
        let col = columns(g, input, b, &mut buf);
        for co in 0..g.c_out {
            let out_plane = &mut out[(b * g.c_out + co) * op..][..op];
            if let Some(bias) = bias {
                out_plane.fill(bias[co]);
            }
            for (r, &w) in kernel[co * rows..][..rows].iter().enumerate() {
                if w != T::zero() {
                    axpy(out_plane, &col[r * op..][..op], w);
                }
            }
        }
    }
    out
}

pub(crate) fn backward_input<T: Element>(g: &ConvGeometry, grad_out: &[T], kernel: &[T]) -> Vec<T> {
    let (ip, op) = (g.in_plane(), g.out_plane());
    let rows = g.c_in * g.kernel_volume();
    let mut grad_in = vec![T::zero(); g.batch * g.c_in * ip];
    let mut gcol = vec![T::zero(); rows * op];
    for b in 0..g.batch {
        gcol.fill(T::zero());
        for co in 0..g.c_out {
            let gout = &grad_out[(b * g.c_out + co) * op..][..op];
            for (r, &w) in kernel[co * rows..][..rows].iter().enumerate() {
                axpy(&mut gcol[r * op..][..op], gout, w);
            }
        }
        let sample = &mut grad_in[b * g.c_in * ip..][..g.c_in * ip];
        if g.is_pointwise() {
            sample.copy_from_slice(&gcol);
        } else {
            g.col2im(&gcol, sample);
        }
    }
    grad_in
}

pub(crate) fn backward_kernel<T: Element>(g: &ConvGeometry, grad_out: &[T], input: &[T]) -> Vec<T> {
    let op = g.out_plane();
    let rows = g.c_in * g.kernel_volume();
    let mut grad_k = vec![T::zero(); g.c_out * rows];
    let mut buf = Vec::new();
    for b in 0..g.batch {
        let col = columns(g, input, b, &mut buf);
        for co in 0..g.c_out {
            let gout = &grad_out[(b * g.c_out + co) * op..][..op];
            for (r, slot) in grad_k[co * rows..][..rows].iter_mut().enumerate() {
                *slot += dot(gout, &col[r * op..][..op]);
            }
        }
    }
    grad_k
}

pub(crate) fn backward_bias<T: Element>(g: &ConvGeometry, grad_out: &[T]) -> Vec<T> {
    let op = g.out_plane();
    let mut gb = vec![T::zero(); g.c_out];
    for b in 0..g.batch {
        for (co, slot) in gb.iter_mut().enumerate() {
            *slot += grad_out[(b * g.c_out + co) * op..][..op].iter().copied().sum::<T>();
        }
    }
    gb
}

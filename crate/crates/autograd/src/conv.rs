//! NHWC convolution kernels built on im2col + gemm.
//!
//! A convolution maps `[n, in_h, in_w, cin]` to `[n, out_h, out_w, cout]`
//! with a `[kh, kw, cin, cout]` weight. The data- and weight-gradients are
//! exposed as kernels of their own so that a transposed convolution is just
//! the data-gradient of the matching forward convolution.

use crate::float::{gemm, Float};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution, including asymmetric padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub cout: usize,
}

impl ConvGeom {
    /// Square kernel with padding `(before, after)` on both spatial axes.
    /// Returns `None` when the padded input is smaller than the kernel.
    pub fn new(
        in_hw: (usize, usize),
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: (usize, usize),
    ) -> Option<Self> {
        let (in_h, in_w) = in_hw;
        let span_h = in_h + pad.0 + pad.1;
        let span_w = in_w + pad.0 + pad.1;
        if stride == 0 || span_h < kernel || span_w < kernel {
            return None;
        }
        Some(Self {
            kh: kernel,
            kw: kernel,
            stride,
            pad_top: pad.0,
            pad_left: pad.0,
            in_h,
            in_w,
            cin,
            out_h: (span_h - kernel) / stride + 1,
            out_w: (span_w - kernel) / stride + 1,
            cout,
        })
    }

    /// Length of one im2col row.
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.kh, self.kw, self.cin, self.cout]
    }

    pub fn input_shape(&self, n: usize) -> [usize; 4] {
        [n, self.in_h, self.in_w, self.cin]
    }

    pub fn output_shape(&self, n: usize) -> [usize; 4] {
        [n, self.out_h, self.out_w, self.cout]
    }

    /// Source row/col for output position `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

fn batch_of(shape: &[usize], expect: [usize; 3], what: &str) -> usize {
    assert!(
        shape.len() == 4 && shape[1..] == expect,
        "{what}: expected [n, {}, {}, {}], got {shape:?}",
        expect[0],
        expect[1],
        expect[2]
    );
    shape[0]
}

fn im2col<T: Float>(x: &[T], n: usize, g: &ConvGeom) -> Vec<T> {
    let k = g.patch_len();
    let rows = n * g.out_h * g.out_w;
    let mut col = vec![T::zero(); rows * k];
    let mut r = 0;
    for b in 0..n {
        let img = &x[b * g.in_h * g.in_w * g.cin..(b + 1) * g.in_h * g.in_w * g.cin];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &mut col[r * k..(r + 1) * k];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let dst = (ky * g.kw + kx) * g.cin;
                        let s = (iy * g.in_w + ix) * g.cin;
                        row[dst..dst + g.cin].copy_from_slice(&img[s..s + g.cin]);
                    }
                }
                r += 1;
            }
        }
    }
    col
}

fn col2im<T: Float>(col: &[T], n: usize, g: &ConvGeom) -> Vec<T> {
    let k = g.patch_len();
    let mut x = vec![T::zero(); n * g.in_h * g.in_w * g.cin];
    let mut r = 0;
    for b in 0..n {
        let img = &mut x[b * g.in_h * g.in_w * g.cin..(b + 1) * g.in_h * g.in_w * g.cin];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &col[r * k..(r + 1) * k];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let src = (ky * g.kw + kx) * g.cin;
                        let d = (iy * g.in_w + ix) * g.cin;
                        for (acc, &v) in img[d..d + g.cin].iter_mut().zip(&row[src..src + g.cin]) {
                            *acc = *acc + v;
                        }
                    }
                }
                r += 1;
            }
        }
    }
    x
}

/// `y = conv(x, w)`.
pub fn conv_forward<T: Float>(x: &Tensor<T>, w: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let n = batch_of(x.shape(), [g.in_h, g.in_w, g.cin], "conv input");
    assert_eq!(w.shape(), g.weight_shape(), "conv weight shape");
    let col = im2col(x.data(), n, g);
    let m = n * g.out_h * g.out_w;
    let mut y = vec![T::zero(); m * g.cout];
    gemm(
        m,
        g.patch_len(),
        g.cout,
        &col,
        false,
        w.data(),
        false,
        T::zero(),
        &mut y,
    );
    Tensor::new(g.output_shape(n).to_vec(), y)
}

/// Gradient of `<gy, conv(x, w)>` with respect to `x`; also the forward pass
/// of the transposed convolution.
pub fn conv_backward_data<T: Float>(gy: &Tensor<T>, w: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let n = batch_of(
        gy.shape(),
        [g.out_h, g.out_w, g.cout],
        "conv output gradient",
    );
    assert_eq!(w.shape(), g.weight_shape(), "conv weight shape");
    let m = n * g.out_h * g.out_w;
    let k = g.patch_len();
    let mut col = vec![T::zero(); m * k];
    gemm(
        m,
        g.cout,
        k,
        gy.data(),
        false,
        w.data(),
        true,
        T::zero(),
        &mut col,
    );
    Tensor::new(g.input_shape(n).to_vec(), col2im(&col, n, g))
}

/// Gradient of `<gy, conv(x, w)>` with respect to `w`.
pub fn conv_backward_weight<T: Float>(x: &Tensor<T>, gy: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let n = batch_of(x.shape(), [g.in_h, g.in_w, g.cin], "conv input");
    let n2 = batch_of(
        gy.shape(),
        [g.out_h, g.out_w, g.cout],
        "conv output gradient",
    );
    assert_eq!(n, n2, "conv batch sizes differ");
    let col = im2col(x.data(), n, g);
    let m = n * g.out_h * g.out_w;
    let k = g.patch_len();
    let mut dw = vec![T::zero(); k * g.cout];
    gemm(
        k,
        m,
        g.cout,
        &col,
        true,
        gy.data(),
        false,
        T::zero(),
        &mut dw,
    );
    Tensor::new(g.weight_shape().to_vec(), dw)
}

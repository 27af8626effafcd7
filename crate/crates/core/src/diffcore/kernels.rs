//! NHWC convolution and pooling kernels with SAME zero-padding.

use crate::tensor::Scalar;

/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 1 << 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Output extent and leading pad for one spatial axis.
pub fn same_padding(size: usize, k: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let out = size.div_ceil(stride);
    let eff = (k - 1) * dilation + 1;
    let total = ((out - 1) * stride + eff).saturating_sub(size);
    (out, total / 2)
}

impl Geometry {
    pub fn new(input: [usize; 4], kh: usize, kw: usize, stride: usize, dilation: usize) -> Self {
        let [n, h, w, c] = input;
        let (out_h, pad_top) = same_padding(h, kh, stride, dilation);
        let (out_w, pad_left) = same_padding(w, kw, stride, dilation);
        Self {
            n,
            h,
            w,
            c,
            kh,
            kw,
            stride,
            dilation,
            out_h,
            out_w,
            pad_top,
            pad_left,
        }
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Source row/col for output position and kernel tap; `None` when in the padding.
    #[inline]
    fn source(&self, oh: usize, ki: usize, ow: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oh * self.stride + ki * self.dilation) as isize - self.pad_top as isize;
        let x = (ow * self.stride + kj * self.dilation) as isize - self.pad_left as isize;
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.positions() * self.patch()).max(1)).clamp(1, self.n)
    }
}

fn im2col<T: Scalar>(g: &Geometry, x: &[T], first: usize, count: usize, col: &mut Vec<T>) {
    let c = g.c;
    col.clear();
    col.reserve(count * g.positions() * g.patch());
    let zeros = vec![T::zero(); g.kw * c];
    for n in first..first + count {
        let base = n * g.h * g.w * c;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let x0 = (ow * g.stride) as isize - g.pad_left as isize;
                let x_end = x0 + ((g.kw - 1) * g.dilation) as isize;
                let inner_x = x0 >= 0 && (x_end as usize) < g.w;
                for ki in 0..g.kh {
                    let y = (oh * g.stride + ki * g.dilation) as isize - g.pad_top as isize;
                    if y < 0 || y as usize >= g.h {
                        col.extend_from_slice(&zeros);
                        continue;
                    }
                    let row = base + y as usize * g.w * c;
                    if inner_x && g.dilation == 1 {
                        let s = row + x0 as usize * c;
                        col.extend_from_slice(&x[s..s + g.kw * c]);
                        continue;
                    }
                    for kj in 0..g.kw {
                        let xx = x0 + (kj * g.dilation) as isize;
                        if xx < 0 || xx as usize >= g.w {
                            col.extend_from_slice(&zeros[..c]);
                        } else {
                            let s = row + xx as usize * c;
                            col.extend_from_slice(&x[s..s + c]);
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &Geometry, col: &[T], first: usize, count: usize, dx: &mut [T]) {
    let patch = g.patch();
    let mut row = 0;
    for n in first..first + count {
        let base = n * g.h * g.w * g.c;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let src = &col[row * patch..(row + 1) * patch];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        if let Some((y, xx)) = g.source(oh, ki, ow, kj) {
                            let d = base + (y * g.w + xx) * g.c;
                            let s = (ki * g.kw + kj) * g.c;
                            for (a, &b) in dx[d..d + g.c].iter_mut().zip(&src[s..s + g.c]) {
                                *a = *a + b;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation `y = x ⋆ k (+ bias)`; `k` laid out as [kh, kw, cin, cout].
pub fn conv2d_forward<T: Scalar>(
    g: &Geometry,
    x: &[T],
    k: &[T],
    cout: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let rows_per = g.positions();
    let patch = g.patch();
    let mut y = vec![T::zero(); g.n * rows_per * cout];
    if g.is_pointwise() {
        T::gemm(
            g.n * rows_per,
            patch,
            cout,
            x,
            (patch as isize, 1),
            k,
            (cout as isize, 1),
            &mut y,
            false,
        );
    } else {
        let chunk = g.chunk();
        let mut col = Vec::new();
        let mut first = 0;
        while first < g.n {
            let count = chunk.min(g.n - first);
            im2col(g, x, first, count, &mut col);
            let rows = count * rows_per;
            let out = &mut y[first * rows_per * cout..(first * rows_per + rows) * cout];
            T::gemm(
                rows,
                patch,
                cout,
                &col,
                (patch as isize, 1),
                k,
                (cout as isize, 1),
                out,
                false,
            );
            first += count;
        }
    }
    if let Some(b) = bias {
        for px in y.chunks_exact_mut(cout) {
            for (v, &bb) in px.iter_mut().zip(b) {
                *v = *v + bb;
            }
        }
    }
    y
}

/// Gradients of [`conv2d_forward`]. `dk`/`dbias` accumulate; `dx` is returned when requested.
pub fn conv2d_backward<T: Scalar>(
    g: &Geometry,
    x: &[T],
    k: &[T],
    cout: usize,
    dy: &[T],
    want_dx: bool,
    dk: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) -> Option<Vec<T>> {
    let rows_per = g.positions();
    let patch = g.patch();
    if let Some(db) = dbias {
        for px in dy.chunks_exact(cout) {
            for (a, &b) in db.iter_mut().zip(px) {
                *a = *a + b;
            }
        }
    }
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    if g.is_pointwise() {
        let rows = g.n * rows_per;
        if let Some(dk) = dk {
            T::gemm(
                patch,
                rows,
                cout,
                x,
                (1, patch as isize),
                dy,
                (cout as isize, 1),
                dk,
                true,
            );
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                rows,
                cout,
                patch,
                dy,
                (cout as isize, 1),
                k,
                (1, cout as isize),
                dx,
                false,
            );
        }
        return dx;
    }
    let chunk = g.chunk();
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    let mut dk = dk;
    let mut first = 0;
    while first < g.n {
        let count = chunk.min(g.n - first);
        let rows = count * rows_per;
        let dy_chunk = &dy[first * rows_per * cout..(first * rows_per + rows) * cout];
        if let Some(dk) = dk.as_deref_mut() {
            im2col(g, x, first, count, &mut col);
            T::gemm(
                patch,
                rows,
                cout,
                &col,
                (1, patch as isize),
                dy_chunk,
                (cout as isize, 1),
                dk,
                true,
            );
        }
        if let Some(dx) = dx.as_mut() {
            dcol.resize(rows * patch, T::zero());
            T::gemm(
                rows,
                cout,
                patch,
                dy_chunk,
                (cout as isize, 1),
                k,
                (1, cout as isize),
                &mut dcol[..rows * patch],
                false,
            );
            col2im(g, &dcol[..rows * patch], first, count, dx);
        }
        first += count;
    }
    dx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

/// 3×3-style pooling over in-bounds cells. For max pooling also returns the argmax
/// (flat input index) of every output element; ties resolve to the first cell scanned.
pub fn pool2d_forward<T: Scalar>(g: &Geometry, x: &[T], kind: PoolKind) -> (Vec<T>, Vec<u32>) {
    let c = g.c;
    let mut y = vec![T::zero(); g.n * g.positions() * c];
    let mut arg = match kind {
        PoolKind::Max => vec![0u32; y.len()],
        PoolKind::Avg => Vec::new(),
    };
    let mut o = 0;
    for n in 0..g.n {
        let base = n * g.h * g.w * c;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let out = &mut y[o * c..(o + 1) * c];
                let mut count = 0usize;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let Some((yy, xx)) = g.source(oh, ki, ow, kj) else {
                            continue;
                        };
                        let s = base + (yy * g.w + xx) * c;
                        match kind {
                            PoolKind::Max => {
                                for ch in 0..c {
                                    if count == 0 || x[s + ch] > out[ch] {
                                        out[ch] = x[s + ch];
                                        arg[o * c + ch] = (s + ch) as u32;
                                    }
                                }
                            }
                            PoolKind::Avg => {
                                for ch in 0..c {
                                    out[ch] = out[ch] + x[s + ch];
                                }
                            }
                        }
                        count += 1;
                    }
                }
                if kind == PoolKind::Avg {
                    let inv = T::one() / T::of(count as f64);
                    out.iter_mut().for_each(|v| *v = *v * inv);
                }
                o += 1;
            }
        }
    }
    (y, arg)
}

pub fn pool2d_backward<T: Scalar>(
    g: &Geometry,
    dy: &[T],
    kind: PoolKind,
    argmax: &[u32],
) -> Vec<T> {
    let c = g.c;
    let mut dx = vec![T::zero(); g.n * g.h * g.w * c];
    match kind {
        PoolKind::Max => {
            for (&i, &d) in argmax.iter().zip(dy) {
                dx[i as usize] = dx[i as usize] + d;
            }
        }
        PoolKind::Avg => {
            let mut o = 0;
            let mut cells = Vec::with_capacity(g.kh * g.kw);
            for n in 0..g.n {
                let base = n * g.h * g.w * c;
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        cells.clear();
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                if let Some((yy, xx)) = g.source(oh, ki, ow, kj) {
                                    cells.push(base + (yy * g.w + xx) * c);
                                }
                            }
                        }
                        let inv = T::one() / T::of(cells.len() as f64);
                        for &s in &cells {
                            for ch in 0..c {
                                dx[s + ch] = dx[s + ch] + dy[o * c + ch] * inv;
                            }
                        }
                        o += 1;
                    }
                }
            }
        }
    }
    dx
}

//! Dense kernels shared by the generator, the feature extractor and the
//! discriminator: im2col convolution with explicit reverse passes, nearest
//! resampling, pooling, leaky rectification and Adam.

/// `C = op(A)·op(B) + beta·C` for row-major `C` of shape `m×n`.
/// Transposes are expressed through the row/column strides of `A` and `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2D convolution over one `C×H×W` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Stride-1 convolution with "same" padding.
    pub fn same(c_in: usize, c_out: usize, h: usize, w: usize, k: usize) -> Self {
        Self { c_in, c_out, h, w, k, stride: 1, pad: k / 2 }
    }

    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out() * self.w_out()
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

pub fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let mut cols = vec![0.0; g.col_rows() * ho * wo];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (ho, wo) = (g.h_out(), g.w_out());
    let mut x = vec![0.0; g.in_len()];
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the output (`c_out×h_out×w_out`, no bias) and the im2col buffer
/// needed by [`conv_backward_weight`].
pub fn conv_forward(x: &[f32], weight: &[f32], g: &ConvGeom) -> (Vec<f32>, Vec<f32>) {
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert_eq!(weight.len(), g.weight_len());
    let cols = if g.k == 1 && g.stride == 1 && g.pad == 0 { x.to_vec() } else { im2col(x, g) };
    let hw = g.h_out() * g.w_out();
    let kk = g.col_rows();
    let mut y = vec![0.0; g.c_out * hw];
    gemm(g.c_out, kk, hw, weight, kk, 1, &cols, hw, 1, &mut y, 0.0);
    (y, cols)
}

pub fn conv_backward_data(gy: &[f32], weight: &[f32], g: &ConvGeom) -> Vec<f32> {
    let hw = g.h_out() * g.w_out();
    let kk = g.col_rows();
    let mut dcols = vec![0.0; kk * hw];
    // dcols = Wᵀ · gy
    gemm(kk, g.c_out, hw, weight, 1, kk, gy, hw, 1, &mut dcols, 0.0);
    if g.k == 1 && g.stride == 1 && g.pad == 0 {
        dcols
    } else {
        col2im(&dcols, g)
    }
}

/// Accumulates `gy · colsᵀ` into `gw`.
pub fn conv_backward_weight(cols: &[f32], gy: &[f32], g: &ConvGeom, gw: &mut [f32]) {
    let hw = g.h_out() * g.w_out();
    let kk = g.col_rows();
    gemm(g.c_out, hw, kk, gy, hw, 1, cols, 1, hw, gw, 1.0);
}

pub fn add_channel_bias(y: &mut [f32], bias: &[f32]) {
    let hw = y.len() / bias.len();
    for (chunk, b) in y.chunks_exact_mut(hw).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub fn accumulate_channel_sums(gy: &[f32], gb: &mut [f32]) {
    let hw = gy.len() / gb.len();
    for (chunk, b) in gy.chunks_exact(hw).zip(gb.iter_mut()) {
        *b += chunk.iter().sum::<f32>();
    }
}

#[inline]
pub fn leaky(v: f32, slope: f32) -> f32 {
    if v >= 0.0 {
        v
    } else {
        v * slope
    }
}

#[inline]
pub fn leaky_grad(pre: f32, slope: f32) -> f32 {
    if pre >= 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn leaky_inplace(x: &mut [f32], slope: f32) {
    x.iter_mut().for_each(|v| *v = leaky(*v, slope));
}

pub fn leaky_backward(pre: &[f32], gy: &mut [f32], slope: f32) {
    for (g, &p) in gy.iter_mut().zip(pre) {
        *g *= leaky_grad(p, slope);
    }
}

pub fn upsample2x(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for yy in 0..h2 {
            let src = &x[ch * h * w + (yy / 2) * w..ch * h * w + (yy / 2 + 1) * w];
            let dst = &mut y[ch * h2 * w2 + yy * w2..ch * h2 * w2 + (yy + 1) * w2];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    y
}

pub fn upsample2x_backward(gy: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let w2 = 2 * w;
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for yy in 0..2 * h {
            for xx in 0..w2 {
                gx[ch * h * w + (yy / 2) * w + xx / 2] += gy[ch * 4 * h * w + yy * w2 + xx];
            }
        }
    }
    gx
}

/// 2×2 average pooling; odd trailing rows/columns are dropped.
pub fn avgpool2(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (ho, wo) = (h / 2, w / 2);
    let mut y = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let p = &x[ch * h * w..];
        for oy in 0..ho {
            for ox in 0..wo {
                let i = 2 * oy * w + 2 * ox;
                y[ch * ho * wo + oy * wo + ox] = 0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]);
            }
        }
    }
    y
}

pub fn avgpool2_backward(gy: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (ho, wo) = (h / 2, w / 2);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = 0.25 * gy[ch * ho * wo + oy * wo + ox];
                let i = ch * h * w + 2 * oy * w + 2 * ox;
                gx[i] += g;
                gx[i + 1] += g;
                gx[i + w] += g;
                gx[i + w + 1] += g;
            }
        }
    }
    gx
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state for one flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub params: AdamParams,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(params: AdamParams, len: usize) -> Self {
        Self { params, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, x: &mut [f32], grad: &[f32]) {
        assert_eq!(x.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        let AdamParams { lr, beta1, beta2, eps } = self.params;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

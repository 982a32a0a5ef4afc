use cgtn_tensor::{matmul_into, Element, Tensor, TensorError};

use crate::error::{CoreError, Result};
use crate::monomial::{enumerate_monomials, FeaturePlan, MonomialIndex};

pub const INSTNORM_EPS: f64 = 1e-5;

/// Which variables form the cluster a coarse-graining output reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterScope {
    /// Each output channel reads the l1 x l2 window of its own channel.
    PerChannel,
    /// Every output channel reads the window across all input channels.
    Full,
}

/// Window geometry shared by convolution and coarse-graining layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub l1: usize,
    pub l2: usize,
    pub s1: usize,
    pub s2: usize,
    pub pad: usize,
    pub dil: usize,
}

/// Output extent of a strided window sweep, or None when the (dilated)
/// kernel does not fit in the padded input.
pub fn conv_output_extent(
    extent: usize,
    l: usize,
    s: usize,
    pad: usize,
    dil: usize,
) -> Option<usize> {
    let effective = (l - 1) * dil + 1;
    let padded = extent + 2 * pad;
    if effective > padded {
        return None;
    }
    Some((padded - effective) / s + 1)
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        l1: usize,
        l2: usize,
        s1: usize,
        s2: usize,
        pad: usize,
        dil: usize,
    ) -> Result<Self> {
        if l1 == 0 || l2 == 0 || s1 == 0 || s2 == 0 || dil == 0 {
            return Err(CoreError::Config(
                "kernel, stride, and dilation extents must be at least 1".into(),
            ));
        }
        let out_h = conv_output_extent(in_h, l1, s1, pad, dil).ok_or_else(|| {
            CoreError::Config(format!(
                "kernel extent {} exceeds padded input height {}",
                (l1 - 1) * dil + 1,
                in_h + 2 * pad
            ))
        })?;
        let out_w = conv_output_extent(in_w, l2, s2, pad, dil).ok_or_else(|| {
            CoreError::Config(format!(
                "kernel extent {} exceeds padded input width {}",
                (l2 - 1) * dil + 1,
                in_w + 2 * pad
            ))
        })?;
        Ok(ConvGeometry {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            l1,
            l2,
            s1,
            s2,
            pad,
            dil,
        })
    }

    /// Input coordinates sampled by kernel cell (ky,kx) of output (oy,ox),
    /// or None when the cell lands in the zero padding.
    #[inline]
    pub fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.s1 + ky * self.dil) as isize - self.pad as isize;
        let ix = (ox * self.s2 + kx * self.dil) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.in_h as isize || ix >= self.in_w as isize {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.l1 * self.l2
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn expect_input_shape<E: Element>(
    op: &'static str,
    x: &Tensor<E>,
    geom: &ConvGeometry,
) -> cgtn_tensor::Result<usize> {
    if x.rank() != 4
        || x.shape()[1] != geom.in_c
        || x.shape()[2] != geom.in_h
        || x.shape()[3] != geom.in_w
    {
        return Err(TensorError::op(
            op,
            format!(
                "input shape {:?} does not match layer geometry [_, {}, {}, {}]",
                x.shape(),
                geom.in_c,
                geom.in_h,
                geom.in_w
            ),
        ));
    }
    Ok(x.shape()[0])
}

/// Gathers the padded window of every output position of one sample into
/// a [positions, in_c * l1 * l2] matrix. Padding cells stay zero.
fn im2col<E: Element>(geom: &ConvGeometry, x: &[E], out: &mut [E]) {
    let klen = geom.kernel_len();
    let k = geom.in_c * klen;
    let plane = geom.in_h * geom.in_w;
    for v in out.iter_mut() {
        *v = E::zero();
    }
    for oy in 0..geom.out_h {
        for ox in 0..geom.out_w {
            let row = (oy * geom.out_w + ox) * k;
            for ky in 0..geom.l1 {
                for kx in 0..geom.l2 {
                    let Some((iy, ix)) = geom.source(oy, ox, ky, kx) else {
                        continue;
                    };
                    let cell = ky * geom.l2 + kx;
                    let src = iy * geom.in_w + ix;
                    for ci in 0..geom.in_c {
                        out[row + ci * klen + cell] = x[ci * plane + src];
                    }
                }
            }
        }
    }
}

/// Scatter-adds a [positions, in_c * l1 * l2] gradient back onto the input
/// plane, the adjoint of `im2col`.
fn col2im<E: Element>(geom: &ConvGeometry, cols: &[E], dx: &mut [E]) {
    let klen = geom.kernel_len();
    let k = geom.in_c * klen;
    let plane = geom.in_h * geom.in_w;
    for oy in 0..geom.out_h {
        for ox in 0..geom.out_w {
            let row = (oy * geom.out_w + ox) * k;
            for ky in 0..geom.l1 {
                for kx in 0..geom.l2 {
                    let Some((iy, ix)) = geom.source(oy, ox, ky, kx) else {
                        continue;
                    };
                    let cell = ky * geom.l2 + kx;
                    let dst = iy * geom.in_w + ix;
                    for ci in 0..geom.in_c {
                        dx[ci * plane + dst] += cols[row + ci * klen + cell];
                    }
                }
            }
        }
    }
}

/// Multi-channel cross-correlation. Inputs: image [B, C, H, W], weight
/// [C_out, C_in, l1, l2], bias [C_out].
#[derive(Debug)]
pub struct Conv2dOp {
    pub geom: ConvGeometry,
}

impl Conv2dOp {
    pub fn new(geom: ConvGeometry) -> Self {
        Conv2dOp { geom }
    }
}

impl<E: Element> cgtn_tensor::TapeOp<E> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> cgtn_tensor::Result<Tensor<E>> {
        let [x, w, b]: [&Tensor<E>; 3] = inputs.try_into().map_err(|_| {
            TensorError::op("conv2d", format!("expected 3 inputs, got {}", inputs.len()))
        })?;
        let geom = &self.geom;
        let batch = expect_input_shape("conv2d", x, geom)?;
        let klen = geom.kernel_len();
        let k = geom.in_c * klen;
        if w.shape() != [geom.out_c, geom.in_c, geom.l1, geom.l2] {
            return Err(TensorError::op(
                "conv2d",
                format!("weight shape {:?} does not match geometry", w.shape()),
            ));
        }
        if b.shape() != [geom.out_c] {
            return Err(TensorError::op(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), geom.out_c),
            ));
        }
        let p = geom.positions();
        let mut out = Tensor::zeros(vec![batch, geom.out_c, geom.out_h, geom.out_w]);
        let mut patches = vec![E::zero(); p * k];
        let in_len = geom.in_c * geom.in_h * geom.in_w;
        let out_len = geom.out_c * p;
        for bi in 0..batch {
            im2col(
                geom,
                &x.data()[bi * in_len..(bi + 1) * in_len],
                &mut patches,
            );
            let slot = &mut out.data_mut()[bi * out_len..(bi + 1) * out_len];
            matmul_into(slot, w.data(), &patches, geom.out_c, k, p, false, true);
            for co in 0..geom.out_c {
                let bias = b.data()[co];
                for v in &mut slot[co * p..(co + 1) * p] {
                    *v += bias;
                }
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> cgtn_tensor::Result<Vec<Option<Tensor<E>>>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let geom = &self.geom;
        let batch = x.shape()[0];
        let klen = geom.kernel_len();
        let k = geom.in_c * klen;
        let p = geom.positions();
        let in_len = geom.in_c * geom.in_h * geom.in_w;
        let out_len = geom.out_c * p;

        let mut patches = vec![E::zero(); p * k];
        let need_x = x.requires_grad();
        let need_w = w.requires_grad();
        let need_b = b.requires_grad();

        let mut dx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
        let mut dw = need_w.then(|| Tensor::zeros(w.shape().to_vec()));
        let mut db = need_b.then(|| Tensor::zeros(b.shape().to_vec()));
        let mut dw_scratch = vec![E::zero(); if need_w { geom.out_c * k } else { 0 }];
        let mut dcols = vec![E::zero(); if need_x { p * k } else { 0 }];

        for bi in 0..batch {
            let g = &grad.data()[bi * out_len..(bi + 1) * out_len];
            if need_w || need_x {
                im2col(
                    geom,
                    &x.data()[bi * in_len..(bi + 1) * in_len],
                    &mut patches,
                );
            }
            if let Some(dw) = dw.as_mut() {
                matmul_into(&mut dw_scratch, g, &patches, geom.out_c, p, k, false, false);
                for (dst, &src) in dw.data_mut().iter_mut().zip(&dw_scratch) {
                    *dst += src;
                }
            }
            if let Some(db) = db.as_mut() {
                for co in 0..geom.out_c {
                    let mut acc = E::zero();
                    for &v in &g[co * p..(co + 1) * p] {
                        acc += v;
                    }
                    db.data_mut()[co] += acc;
                }
            }
            if let Some(dx) = dx.as_mut() {
                matmul_into(&mut dcols, g, w.data(), p, geom.out_c, k, true, false);
                col2im(
                    geom,
                    &dcols,
                    &mut dx.data_mut()[bi * in_len..(bi + 1) * in_len],
                );
            }
        }
        Ok(vec![dx, dw, db])
    }
}

/// Coarse-graining layer: every output position evaluates a polynomial of
/// its cluster variables, coefficients shared across positions per output
/// channel. Inputs: image [B, C, H, W], coefficients [C_out, terms].
#[derive(Debug)]
pub struct CgOp {
    pub geom: ConvGeometry,
    pub scope: ClusterScope,
    pub order: usize,
    terms: Vec<MonomialIndex>,
    plan: FeaturePlan,
    m: usize,
}

impl CgOp {
    pub fn new(geom: ConvGeometry, scope: ClusterScope, order: usize) -> Result<Self> {
        if !(2..=4).contains(&order) {
            return Err(CoreError::Config(format!(
                "coarse-graining order {order} out of the supported range 2..=4"
            )));
        }
        if scope == ClusterScope::PerChannel && geom.in_c != geom.out_c {
            return Err(CoreError::Config(format!(
                "per-channel coarse-graining keeps the channel count, got {} in / {} out",
                geom.in_c, geom.out_c
            )));
        }
        let m = match scope {
            ClusterScope::PerChannel => geom.kernel_len(),
            ClusterScope::Full => geom.kernel_len() * geom.in_c,
        };
        let terms = enumerate_monomials(m, order)?;
        let plan = FeaturePlan::new(&terms, m)?;
        Ok(CgOp {
            geom,
            scope,
            order,
            terms,
            plan,
            m,
        })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn cluster_size(&self) -> usize {
        self.m
    }

    pub fn terms(&self) -> &[MonomialIndex] {
        &self.terms
    }

    pub fn plan(&self) -> &FeaturePlan {
        &self.plan
    }

    /// Channel range a cluster at output channel `co` reads.
    fn channel_range(&self, co: usize) -> std::ops::Range<usize> {
        match self.scope {
            ClusterScope::PerChannel => co..co + 1,
            ClusterScope::Full => 0..self.geom.in_c,
        }
    }

    /// Collects the cluster variables of one output position into `buf`.
    fn gather<E: Element>(&self, x: &[E], co: usize, oy: usize, ox: usize, buf: &mut [E]) {
        let geom = &self.geom;
        let plane = geom.in_h * geom.in_w;
        let mut i = 0;
        for ci in self.channel_range(co) {
            for ky in 0..geom.l1 {
                for kx in 0..geom.l2 {
                    buf[i] = match geom.source(oy, ox, ky, kx) {
                        Some((iy, ix)) => x[ci * plane + iy * geom.in_w + ix],
                        None => E::zero(),
                    };
                    i += 1;
                }
            }
        }
    }

    /// Adds the cluster gradient back onto the input plane of one sample.
    fn scatter<E: Element>(&self, dcluster: &[E], co: usize, oy: usize, ox: usize, dx: &mut [E]) {
        let geom = &self.geom;
        let plane = geom.in_h * geom.in_w;
        let mut i = 0;
        for ci in self.channel_range(co) {
            for ky in 0..geom.l1 {
                for kx in 0..geom.l2 {
                    if let Some((iy, ix)) = geom.source(oy, ox, ky, kx) {
                        dx[ci * plane + iy * geom.in_w + ix] += dcluster[i];
                    }
                    i += 1;
                }
            }
        }
    }
}

impl<E: Element> cgtn_tensor::TapeOp<E> for CgOp {
    fn name(&self) -> &'static str {
        "coarse_grain"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> cgtn_tensor::Result<Tensor<E>> {
        let [x, coeff]: [&Tensor<E>; 2] = inputs.try_into().map_err(|_| {
            TensorError::op(
                "coarse_grain",
                format!("expected 2 inputs, got {}", inputs.len()),
            )
        })?;
        let geom = &self.geom;
        let batch = expect_input_shape("coarse_grain", x, geom)?;
        let t = self.terms.len();
        if coeff.shape() != [geom.out_c, t] {
            return Err(TensorError::op(
                "coarse_grain",
                format!(
                    "coefficient shape {:?}, expected [{}, {t}]",
                    coeff.shape(),
                    geom.out_c
                ),
            ));
        }
        let in_len = geom.in_c * geom.in_h * geom.in_w;
        let mut out = Tensor::zeros(vec![batch, geom.out_c, geom.out_h, geom.out_w]);
        let mut cluster = vec![E::zero(); self.m];
        let mut vals = vec![E::zero(); t];
        let out_data = out.data_mut();
        for bi in 0..batch {
            let xs = &x.data()[bi * in_len..(bi + 1) * in_len];
            for co in 0..geom.out_c {
                let row = &coeff.data()[co * t..(co + 1) * t];
                for oy in 0..geom.out_h {
                    for ox in 0..geom.out_w {
                        self.gather(xs, co, oy, ox, &mut cluster);
                        self.plan.featurize_into(&cluster, &mut vals);
                        let mut acc = E::zero();
                        for (c, v) in row.iter().zip(&vals) {
                            acc += *c * *v;
                        }
                        out_data[((bi * geom.out_c + co) * geom.out_h + oy) * geom.out_w + ox] =
                            acc;
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> cgtn_tensor::Result<Vec<Option<Tensor<E>>>> {
        let (x, coeff) = (inputs[0], inputs[1]);
        let geom = &self.geom;
        let batch = x.shape()[0];
        let t = self.terms.len();
        let in_len = geom.in_c * geom.in_h * geom.in_w;

        let need_x = x.requires_grad();
        let need_c = coeff.requires_grad();
        let mut dx = need_x.then(|| Tensor::zeros(x.shape().to_vec()));
        let mut dc = need_c.then(|| Tensor::zeros(coeff.shape().to_vec()));

        let mut cluster = vec![E::zero(); self.m];
        let mut vals = vec![E::zero(); t];
        let mut dcluster = vec![E::zero(); self.m];

        for bi in 0..batch {
            let xs = &x.data()[bi * in_len..(bi + 1) * in_len];
            for co in 0..geom.out_c {
                let row = &coeff.data()[co * t..(co + 1) * t];
                for oy in 0..geom.out_h {
                    for ox in 0..geom.out_w {
                        let g = grad.data()
                            [((bi * geom.out_c + co) * geom.out_h + oy) * geom.out_w + ox];
                        if g == E::zero() {
                            continue;
                        }
                        self.gather(xs, co, oy, ox, &mut cluster);
                        self.plan.featurize_into(&cluster, &mut vals);
                        if let Some(dc) = dc.as_mut() {
                            let drow = &mut dc.data_mut()[co * t..(co + 1) * t];
                            for (d, v) in drow.iter_mut().zip(&vals) {
                                *d += g * *v;
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            for v in dcluster.iter_mut() {
                                *v = E::zero();
                            }
                            self.plan
                                .accumulate_input_grad(row, &vals, g, &mut dcluster);
                            self.scatter(
                                &dcluster,
                                co,
                                oy,
                                ox,
                                &mut dx.data_mut()[bi * in_len..(bi + 1) * in_len],
                            );
                        }
                    }
                }
            }
        }
        Ok(vec![dx, dc])
    }
}

/// Normalizes each (sample, channel) plane to zero mean and unit variance.
/// No learned affine parameters.
#[derive(Debug)]
pub struct InstNormOp;

impl<E: Element> cgtn_tensor::TapeOp<E> for InstNormOp {
    fn name(&self) -> &'static str {
        "instance_norm"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> cgtn_tensor::Result<Tensor<E>> {
        let [x]: [&Tensor<E>; 1] = inputs.try_into().map_err(|_| {
            TensorError::op(
                "instance_norm",
                format!("expected 1 input, got {}", inputs.len()),
            )
        })?;
        if x.rank() != 4 {
            return Err(TensorError::op(
                "instance_norm",
                format!("expected [B, C, H, W], got {:?}", x.shape()),
            ));
        }
        let plane = x.shape()[2] * x.shape()[3];
        let planes = x.shape()[0] * x.shape()[1];
        let mut out = Tensor::zeros(x.shape().to_vec());
        for p in 0..planes {
            let src = &x.data()[p * plane..(p + 1) * plane];
            let n = E::from_f64(plane as f64);
            let mut mean = E::zero();
            for &v in src {
                mean += v;
            }
            mean /= n;
            let mut var = E::zero();
            for &v in src {
                let d = v - mean;
                var += d * d;
            }
            var /= n;
            let inv = (var + E::from_f64(INSTNORM_EPS)).sqrt().recip();
            for (dst, &v) in out.data_mut()[p * plane..(p + 1) * plane]
                .iter_mut()
                .zip(src)
            {
                *dst = (v - mean) * inv;
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> cgtn_tensor::Result<Vec<Option<Tensor<E>>>> {
        let x = inputs[0];
        let plane = x.shape()[2] * x.shape()[3];
        let planes = x.shape()[0] * x.shape()[1];
        let mut dx = Tensor::zeros(x.shape().to_vec());
        for p in 0..planes {
            let src = &x.data()[p * plane..(p + 1) * plane];
            let y = &output.data()[p * plane..(p + 1) * plane];
            let g = &grad.data()[p * plane..(p + 1) * plane];
            let n = E::from_f64(plane as f64);
            let mut mean = E::zero();
            for &v in src {
                mean += v;
            }
            mean /= n;
            let mut var = E::zero();
            for &v in src {
                let d = v - mean;
                var += d * d;
            }
            var /= n;
            let inv = (var + E::from_f64(INSTNORM_EPS)).sqrt().recip();
            let mut g_mean = E::zero();
            let mut gy_mean = E::zero();
            for (&gi, &yi) in g.iter().zip(y) {
                g_mean += gi;
                gy_mean += gi * yi;
            }
            g_mean /= n;
            gy_mean /= n;
            for ((dst, &gi), &yi) in dx.data_mut()[p * plane..(p + 1) * plane]
                .iter_mut()
                .zip(g)
                .zip(y)
            {
                *dst = inv * (gi - g_mean - yi * gy_mean);
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Non-overlapping-or-strided average pooling, no padding.
#[derive(Debug)]
pub struct AvgPoolOp {
    pub k: usize,
    pub s: usize,
}

impl AvgPoolOp {
    fn out_extent(&self, extent: usize) -> cgtn_tensor::Result<usize> {
        if self.k == 0 || self.s == 0 || self.k > extent {
            return Err(TensorError::op(
                "avgpool",
                format!("kernel {} does not fit extent {extent}", self.k),
            ));
        }
        Ok((extent - self.k) / self.s + 1)
    }
}

impl<E: Element> cgtn_tensor::TapeOp<E> for AvgPoolOp {
    fn name(&self) -> &'static str {
        "avgpool"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> cgtn_tensor::Result<Tensor<E>> {
        let [x]: [&Tensor<E>; 1] = inputs.try_into().map_err(|_| {
            TensorError::op("avgpool", format!("expected 1 input, got {}", inputs.len()))
        })?;
        if x.rank() != 4 {
            return Err(TensorError::op(
                "avgpool",
                format!("expected [B, C, H, W], got {:?}", x.shape()),
            ));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let oh = self.out_extent(h)?;
        let ow = self.out_extent(w)?;
        let inv = E::from_f64(1.0 / (self.k * self.k) as f64);
        let mut out = Tensor::zeros(vec![b, c, oh, ow]);
        let out_data = out.data_mut();
        for p in 0..b * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = E::zero();
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            acc += src[(oy * self.s + ky) * w + ox * self.s + kx];
                        }
                    }
                    out_data[(p * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> cgtn_tensor::Result<Vec<Option<Tensor<E>>>> {
        let x = inputs[0];
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (output.shape()[2], output.shape()[3]);
        let inv = E::from_f64(1.0 / (self.k * self.k) as f64);
        let mut dx = Tensor::zeros(x.shape().to_vec());
        for p in 0..b * c {
            let dplane = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad.data()[(p * oh + oy) * ow + ox] * inv;
                    for ky in 0..self.k {
                        for kx in 0..self.k {
                            dplane[(oy * self.s + ky) * w + ox * self.s + kx] += g;
                        }
                    }
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// x [B, p] times w [K, p] transposed, giving [B, K]. Lets a classifier
/// head keep its weight rows contiguous per output class.
#[derive(Debug)]
pub struct MatMulTransB;

impl<E: Element> cgtn_tensor::TapeOp<E> for MatMulTransB {
    fn name(&self) -> &'static str {
        "matmul_bt"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> cgtn_tensor::Result<Tensor<E>> {
        let [x, w]: [&Tensor<E>; 2] = inputs.try_into().map_err(|_| {
            TensorError::op(
                "matmul_bt",
                format!("expected 2 inputs, got {}", inputs.len()),
            )
        })?;
        if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_bt",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let (b, p) = (x.shape()[0], x.shape()[1]);
        let k = w.shape()[0];
        let mut out = Tensor::zeros(vec![b, k]);
        matmul_into(out.data_mut(), x.data(), w.data(), b, p, k, false, true);
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> cgtn_tensor::Result<Vec<Option<Tensor<E>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (b, p) = (x.shape()[0], x.shape()[1]);
        let k = w.shape()[0];
        let dx = if x.requires_grad() {
            let mut dx = Tensor::zeros(vec![b, p]);
            matmul_into(dx.data_mut(), grad.data(), w.data(), b, k, p, false, false);
            Some(dx)
        } else {
            None
        };
        let dw = if w.requires_grad() {
            let mut dw = Tensor::zeros(vec![k, p]);
            matmul_into(dw.data_mut(), grad.data(), x.data(), k, b, p, true, false);
            Some(dw)
        } else {
            None
        };
        Ok(vec![dx, dw])
    }
}

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Element type of a network. `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + MulAssign + 'static
{
    /// `C = alpha * A B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 converts to any float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C (m×n) = op(A) op(B) + beta C`, all row-major. `ta` means `A` is stored `k×m`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m <= 4 && !ta && !tb {
        // a few rows: packing `B` would cost more than the product itself
        for (ci, ai) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)).take(m) {
            if beta == T::zero() {
                ci.fill(T::zero());
            } else {
                ci.iter_mut().for_each(|x| *x *= beta);
            }
            for (&av, brow) in ai.iter().zip(b.chunks_exact(n)) {
                ci.iter_mut().zip(brow).for_each(|(x, &bv)| *x += av * bv);
            }
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe row-major storage.
    unsafe {
        T::raw_gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Layer sizes shared by the policy and value networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Height, width, channels (HWC storage).
    pub input: [usize; 3],
    pub convs: Vec<ConvSpec>,
    pub dense: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn out_len(&self) -> usize {
        self.positions() * self.filters
    }
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_INIT: f64 = -0.7;

impl NetworkSpec {
    /// 16@8×8/4, 32@4×4/2, dense 256 on 84×84×9 input.
    pub fn standard(action_dim: usize) -> Self {
        Self {
            input: [84, 84, 9],
            convs: vec![
                ConvSpec { filters: 16, kernel: 8, stride: 4 },
                ConvSpec { filters: 32, kernel: 4, stride: 2 },
            ],
            dense: 256,
            action_dim,
        }
    }

    /// Downsized net on 8×8×9 input for gradient checks.
    pub fn tiny(action_dim: usize) -> Self {
        Self {
            input: [8, 8, 9],
            convs: vec![
                ConvSpec { filters: 4, kernel: 4, stride: 2 },
                ConvSpec { filters: 4, kernel: 2, stride: 1 },
            ],
            dense: 8,
            action_dim,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::Spec(m));
        if self.convs.is_empty() {
            return bad("at least one conv layer is required".into());
        }
        if self.action_dim == 0 || self.dense == 0 || self.input.contains(&0) {
            return bad("dimensions must be positive".into());
        }
        let [mut h, mut w, _] = self.input;
        for (i, c) in self.convs.iter().enumerate() {
            if c.filters == 0 || c.kernel == 0 || c.stride == 0 || c.kernel > h || c.kernel > w {
                return bad(format!("conv{i}: kernel {} does not fit {h}x{w}", c.kernel));
            }
            h = (h - c.kernel) / c.stride + 1;
            w = (w - c.kernel) / c.stride + 1;
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn conv_geometry(&self) -> Vec<ConvGeom> {
        let [mut h, mut w, mut c] = self.input;
        self.convs
            .iter()
            .map(|cs| {
                let g = ConvGeom {
                    in_h: h,
                    in_w: w,
                    in_c: c,
                    out_h: (h - cs.kernel) / cs.stride + 1,
                    out_w: (w - cs.kernel) / cs.stride + 1,
                    filters: cs.filters,
                    kernel: cs.kernel,
                    stride: cs.stride,
                };
                (h, w, c) = (g.out_h, g.out_w, g.filters);
                g
            })
            .collect()
    }

    pub fn flat_len(&self) -> usize {
        self.conv_geometry().last().map_or(0, ConvGeom::out_len)
    }

    /// Names and shapes of one network's arrays, in storage order.
    pub fn param_shapes(&self, role: NetRole) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for (i, g) in self.conv_geometry().iter().enumerate() {
            v.push((format!("conv{i}.w"), vec![g.patch_len(), g.filters]));
            v.push((format!("conv{i}.b"), vec![g.filters]));
        }
        v.push(("dense.w".into(), vec![self.flat_len(), self.dense]));
        v.push(("dense.b".into(), vec![self.dense]));
        let out = role.out_dim(self);
        v.push(("head.w".into(), vec![self.dense, out]));
        v.push(("head.b".into(), vec![out]));
        if role == NetRole::Policy {
            v.push(("log_std".into(), vec![self.action_dim]));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    Policy,
    Value,
}

impl NetRole {
    pub fn out_dim(self, spec: &NetworkSpec) -> usize {
        match self {
            NetRole::Policy => spec.action_dim,
            NetRole::Value => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named weight arrays of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub arrays: Vec<ParamArray<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(spec: &NetworkSpec, role: NetRole) -> Self {
        let arrays = spec
            .param_shapes(role)
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                ParamArray { name, shape, data: vec![T::zero(); n] }
            })
            .collect();
        Self { arrays }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|a| ParamArray {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    data: vec![T::zero(); a.data.len()],
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray<T>> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray<T>> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.arrays.iter().map(|a| a.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.arrays.iter().flat_map(|a| a.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.arrays.iter_mut().flat_map(|a| a.data.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }

    pub fn scale(&mut self, k: T) {
        self.iter_mut().for_each(|x| *x *= k);
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            arrays: self
                .arrays
                .iter()
                .map(|a| ParamArray {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    data: a.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn matches_shapes(&self, spec: &NetworkSpec, role: NetRole) -> bool {
        let want = spec.param_shapes(role);
        want.len() == self.arrays.len()
            && want
                .iter()
                .zip(&self.arrays)
                .all(|((n, s), a)| *n == a.name && *s == a.shape && a.data.len() == s.iter().product::<usize>())
    }
}

/// Fills an `rows×cols` matrix with `gain`-scaled orthonormal rows or columns.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // orthonormalize the `short` vectors of length `long` with modified Gram-Schmidt
    let (short, long) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(short);
    while vecs.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, v) in vecs.iter().enumerate() {
        for (i, x) in v.iter().enumerate() {
            let (r, c) = if rows >= cols { (i, j) } else { (j, i) };
            out[r * cols + c] = gain * x;
        }
    }
    out
}

/// Policy and value networks; no shared parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub spec: NetworkSpec,
    pub policy: ParameterSet<T>,
    pub value: ParameterSet<T>,
}

/// Gradients have the same layout as the model.
pub type Gradients<T> = ActorCritic<T>;

impl<T: Scalar> ActorCritic<T> {
    pub fn zeros(spec: NetworkSpec) -> Self {
        let mut m = Self {
            policy: ParameterSet::zeros(&spec, NetRole::Policy),
            value: ParameterSet::zeros(&spec, NetRole::Value),
            spec,
        };
        m.policy_log_std_mut().fill(T::from_f64(LOG_STD_INIT));
        m
    }

    /// Orthogonal weights (gain √2, policy head 0.01, value head 1), zero biases.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self, PolicyError> {
        spec.validate()?;
        let mut m = Self::zeros(spec);
        for (set, head_gain) in [(&mut m.policy, 0.01), (&mut m.value, 1.0)] {
            for a in &mut set.arrays {
                if a.shape.len() == 2 {
                    let gain = if a.name == "head.w" { head_gain } else { 2f64.sqrt() };
                    let w = orthogonal(a.shape[0], a.shape[1], gain, rng);
                    a.data = w.into_iter().map(T::from_f64).collect();
                }
            }
        }
        Ok(m)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            policy: self.policy.zeros_like(),
            value: self.value.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ActorCritic<U> {
        ActorCritic {
            spec: self.spec.clone(),
            policy: self.policy.cast(),
            value: self.value.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value.is_finite()
    }

    pub fn num_params(&self) -> usize {
        self.policy.num_params() + self.value.num_params()
    }

    pub fn policy_log_std(&self) -> &[T] {
        &self.policy.arrays.last().expect("policy has log_std").data
    }

    pub fn policy_log_std_mut(&mut self) -> &mut [T] {
        &mut self.policy.arrays.last_mut().expect("policy has log_std").data
    }

    /// Clamped log standard deviation as `f64`.
    pub fn log_std(&self) -> Vec<f64> {
        self.policy_log_std()
            .iter()
            .map(|x| x.as_f64().clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    /// Runs both networks on a batch of HWC inputs.
    pub fn forward(&self, input: &[T], batch: usize) -> Result<ForwardPass<T>, PolicyError> {
        let n_in = self.spec.input_len();
        if batch == 0 || input.len() != batch * n_in {
            return Err(PolicyError::Shape(format!(
                "input has {} values, expected {batch} x {n_in}",
                input.len()
            )));
        }
        let geo = self.spec.conv_geometry();
        let (act_p, act_v) = first_conv(&geo[0], &self.policy, &self.value, input, batch)?;
        let policy = forward_net(&geo, &self.policy, act_p, batch)?;
        let value = forward_net(&geo, &self.value, act_v, batch)?;
        Ok(ForwardPass { batch, policy, value })
    }

    /// Gradients of `mean_i l_i` given per-sample output gradients:
    /// `d_mean` and `d_log_std` are `batch×action_dim`, `d_value` is `batch`.
    pub fn backward(
        &self,
        pass: &ForwardPass<T>,
        input: &[T],
        d_mean: &[T],
        d_log_std: &[T],
        d_value: &[T],
    ) -> Result<Gradients<T>, PolicyError> {
        let b = pass.batch;
        let a = self.spec.action_dim;
        if input.len() != b * self.spec.input_len() {
            return Err(PolicyError::Shape("input does not match the forward pass".into()));
        }
        if d_mean.len() != b * a || d_log_std.len() != b * a || d_value.len() != b {
            return Err(PolicyError::Shape("output gradient size does not match the batch".into()));
        }
        let inv_b = T::one() / T::from_f64(b as f64);
        let geo = self.spec.conv_geometry();
        let mut grads = self.zeros_like();
        let scaled: Vec<T> = d_mean.iter().map(|&x| x * inv_b).collect();
        let dz_p = backward_net(&geo, &self.policy, &pass.policy, &scaled, &mut grads.policy);
        let scaled: Vec<T> = d_value.iter().map(|&x| x * inv_b).collect();
        let dz_v = backward_net(&geo, &self.value, &pass.value, &scaled, &mut grads.value);
        first_conv_backward(&geo[0], input, b, &dz_p, &dz_v, &mut grads);

        // clamped coordinates receive no gradient
        let ls = self.policy_log_std().to_vec();
        let g_ls = grads.policy_log_std_mut();
        for (j, g) in g_ls.iter_mut().enumerate() {
            let raw = ls[j].as_f64();
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                *g = (0..b).map(|i| d_log_std[i * a + j]).sum::<T>() * inv_b;
            }
        }
        if !grads.is_finite() {
            return Err(PolicyError::NonFinite("gradients".into()));
        }
        Ok(grads)
    }
}

/// Saved activations of one network.
#[derive(Debug, Clone)]
pub struct NetCache<T> {
    /// im2col matrices of conv layers after the first.
    pub(crate) cols: Vec<Vec<T>>,
    /// Post-ReLU outputs of every conv layer, then of the dense layer.
    pub(crate) acts: Vec<Vec<T>>,
    pub out: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub batch: usize,
    pub policy: NetCache<T>,
    pub value: NetCache<T>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Policy means, `batch×action_dim`.
    pub fn mean(&self) -> &[T] {
        &self.policy.out
    }

    pub fn values(&self) -> &[T] {
        &self.value.out
    }
}

fn im2col_into<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut Vec<T>) {
    let row_len = g.kernel * g.in_c;
    cols.clear();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            for ky in 0..g.kernel {
                let start = ((oy * g.stride + ky) * g.in_w + ox * g.stride) * g.in_c;
                cols.extend_from_slice(&img[start..start + row_len]);
            }
        }
    }
}

fn im2col<T: Scalar>(x: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let mut cols = Vec::with_capacity(batch * g.positions() * g.patch_len());
    let mut one = Vec::with_capacity(g.positions() * g.patch_len());
    for img in x.chunks_exact(g.in_len()).take(batch) {
        im2col_into(img, g, &mut one);
        cols.extend_from_slice(&one);
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], batch: usize, g: &ConvGeom, dx: &mut [T]) {
    let row_len = g.kernel * g.in_c;
    let mut it = cols.chunks_exact(row_len);
    for b in 0..batch {
        let img = &mut dx[b * g.in_len()..(b + 1) * g.in_len()];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for ky in 0..g.kernel {
                    let start = ((oy * g.stride + ky) * g.in_w + ox * g.stride) * g.in_c;
                    let src = it.next().expect("cols sized by geometry");
                    img[start..start + row_len]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, s)| *d += *s);
                }
            }
        }
    }
}

/// `y = x W + b` for `rows` rows, optional ReLU. Non-finite pre-activations are errors.
fn affine<T: Scalar>(
    x: &[T],
    rows: usize,
    w: &ParamArray<T>,
    b: &ParamArray<T>,
    relu: bool,
    stage: &str,
) -> Result<Vec<T>, PolicyError> {
    let (k, n) = (w.shape[0], w.shape[1]);
    let mut y: Vec<T> = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        y.extend_from_slice(&b.data);
    }
    gemm(false, false, rows, n, k, x, &w.data, T::one(), &mut y);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(PolicyError::NonFinite(stage.into()));
    }
    if relu {
        y.iter_mut().for_each(|v| *v = v.max(T::zero()));
    }
    Ok(y)
}

/// First conv layer of both networks as one GEMM per image, so the patch
/// matrix of a single image stays in cache and the GEMM is twice as wide.
fn first_conv<T: Scalar>(
    g: &ConvGeom,
    p: &ParameterSet<T>,
    v: &ParameterSet<T>,
    input: &[T],
    batch: usize,
) -> Result<(Vec<T>, Vec<T>), PolicyError> {
    let (f, k, pos) = (g.filters, g.patch_len(), g.positions());
    let mut w = Vec::with_capacity(k * 2 * f);
    for (rp, rv) in p.arrays[0].data.chunks_exact(f).zip(v.arrays[0].data.chunks_exact(f)) {
        w.extend_from_slice(rp);
        w.extend_from_slice(rv);
    }
    let (bp, bv) = (&p.arrays[1].data, &v.arrays[1].data);
    let mut cols = Vec::with_capacity(pos * k);
    let mut y = vec![T::zero(); pos * 2 * f];
    let mut act_p = Vec::with_capacity(batch * pos * f);
    let mut act_v = Vec::with_capacity(batch * pos * f);
    for img in input.chunks_exact(g.in_len()).take(batch) {
        im2col_into(img, g, &mut cols);
        gemm(false, false, pos, 2 * f, k, &cols, &w, T::zero(), &mut y);
        for row in y.chunks_exact(2 * f) {
            for (out, (vals, bias)) in [(&mut act_p, (&row[..f], bp)), (&mut act_v, (&row[f..], bv))] {
                for (x, b) in vals.iter().zip(bias.iter()) {
                    let z = *x + *b;
                    if !z.is_finite() {
                        return Err(PolicyError::NonFinite("conv0".into()));
                    }
                    out.push(z.max(T::zero()));
                }
            }
        }
    }
    Ok((act_p, act_v))
}

/// Weight and bias gradients of the fused first layer. Patches are rebuilt
/// from the input instead of being kept from the forward pass.
fn first_conv_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    batch: usize,
    dz_p: &[T],
    dz_v: &[T],
    grads: &mut Gradients<T>,
) {
    let (f, k, pos) = (g.filters, g.patch_len(), g.positions());
    let mut gw = vec![T::zero(); k * 2 * f];
    let mut cols = Vec::with_capacity(pos * k);
    let mut dz = vec![T::zero(); pos * 2 * f];
    for (b, img) in input.chunks_exact(g.in_len()).take(batch).enumerate() {
        im2col_into(img, g, &mut cols);
        let (sp, sv) = (&dz_p[b * pos * f..(b + 1) * pos * f], &dz_v[b * pos * f..(b + 1) * pos * f]);
        for ((row, rp), rv) in dz.chunks_exact_mut(2 * f).zip(sp.chunks_exact(f)).zip(sv.chunks_exact(f)) {
            row[..f].copy_from_slice(rp);
            row[f..].copy_from_slice(rv);
        }
        gemm(true, false, k, 2 * f, pos, &cols, &dz, T::one(), &mut gw);
    }
    for (set, dzs, off) in [(&mut grads.policy, dz_p, 0), (&mut grads.value, dz_v, f)] {
        for (dst, src) in set.arrays[0].data.chunks_exact_mut(f).zip(gw.chunks_exact(2 * f)) {
            dst.copy_from_slice(&src[off..off + f]);
        }
        let gb = &mut set.arrays[1].data;
        for r in dzs.chunks_exact(f) {
            gb.iter_mut().zip(r).for_each(|(g, d)| *g += *d);
        }
    }
}

/// Layers after the first conv, given its output.
fn forward_net<T: Scalar>(
    geo: &[ConvGeom],
    p: &ParameterSet<T>,
    act0: Vec<T>,
    batch: usize,
) -> Result<NetCache<T>, PolicyError> {
    let a = &p.arrays;
    let mut cols = Vec::new();
    let mut acts: Vec<Vec<T>> = vec![act0];
    for (l, g) in geo.iter().enumerate().skip(1) {
        let c = im2col(acts.last().expect("previous layer"), batch, g);
        let stage = format!("conv{l}");
        let y = affine(&c, batch * g.positions(), &a[2 * l], &a[2 * l + 1], true, &stage)?;
        cols.push(c);
        acts.push(y);
    }
    let nl = geo.len();
    let h = affine(acts.last().expect("conv output"), batch, &a[2 * nl], &a[2 * nl + 1], true, "dense")?;
    let out = affine(&h, batch, &a[2 * nl + 2], &a[2 * nl + 3], false, "head")?;
    acts.push(h);
    Ok(NetCache { cols, acts, out })
}

/// Weight and bias gradients for `y = x W + b`; returns `dx` when requested.
fn affine_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    rows: usize,
    w: &ParamArray<T>,
    gw: &mut [T],
    gb: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let (k, n) = (w.shape[0], w.shape[1]);
    gemm(true, false, k, n, rows, x, dy, T::one(), gw);
    for r in dy.chunks_exact(n) {
        gb.iter_mut().zip(r).for_each(|(g, d)| *g += *d);
    }
    want_dx.then(|| {
        let mut dx = vec![T::zero(); rows * k];
        gemm(false, true, rows, k, n, dy, &w.data, T::zero(), &mut dx);
        dx
    })
}

fn relu_mask<T: Scalar>(d: &mut [T], act: &[T]) {
    d.iter_mut().zip(act).for_each(|(g, a)| {
        if *a <= T::zero() {
            *g = T::zero()
        }
    });
}

/// Backpropagates through head, dense and conv layers after the first;
/// returns the gradient at the first conv layer's pre-activation.
fn backward_net<T: Scalar>(
    geo: &[ConvGeom],
    p: &ParameterSet<T>,
    cache: &NetCache<T>,
    d_out: &[T],
    g: &mut ParameterSet<T>,
) -> Vec<T> {
    let nl = geo.len();
    let batch = d_out.len() / (p.arrays[2 * nl + 2].shape[1]);
    let (gw, gb) = pair_mut(g, 2 * nl + 2);
    let hidden = &cache.acts[nl];
    let mut dh = affine_backward(hidden, d_out, batch, &p.arrays[2 * nl + 2], gw, gb, true)
        .expect("requested");
    relu_mask(&mut dh, hidden);

    let (gw, gb) = pair_mut(g, 2 * nl);
    let flat = &cache.acts[nl - 1];
    let mut dz = affine_backward(flat, &dh, batch, &p.arrays[2 * nl], gw, gb, true)
        .expect("requested");
    relu_mask(&mut dz, flat);

    for l in (1..nl).rev() {
        let gl = &geo[l];
        let rows = batch * gl.positions();
        let (gw, gb) = pair_mut(g, 2 * l);
        let dcols = affine_backward(&cache.cols[l - 1], &dz, rows, &p.arrays[2 * l], gw, gb, true)
            .expect("requested");
        let prev = &cache.acts[l - 1];
        let mut dx = vec![T::zero(); prev.len()];
        col2im_add(&dcols, batch, gl, &mut dx);
        relu_mask(&mut dx, prev);
        dz = dx;
    }
    dz
}

fn pair_mut<T>(g: &mut ParameterSet<T>, i: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = g.arrays.split_at_mut(i + 1);
    (&mut a[i].data, &mut b[0].data)
}

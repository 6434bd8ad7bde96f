//! Reverse-mode differentiation over complex tensors.
//!
//! A [`Graph`] is an append-only arena: every op pushes one node whose
//! parents were pushed earlier, so arena order is already a topological
//! order and [`Graph::backward`] is a single reverse sweep.
//!
//! Real and imaginary parts are differentiated as independent real
//! coordinates. A node's gradient is stored as the complex tensor
//! `∂L/∂Re + i·∂L/∂Im`, which makes the chain rule for `z = a·b` read
//! `ḡa = ḡz·conj(b)`.

pub mod gradcheck;
mod kernels;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::FftPlan;
use crate::tensor::{axis_split, broadcast_map, broadcast_shape, numel, Tensor};

use kernels::{gemm_nn, gemm_nt, gemm_tn};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    /// `a · conj(b)`
    ConjMul,
    /// `Re(a)Re(b) + i·Im(a)Im(b)`
    PartMul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Sum { input: Var, axis: usize },
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    FromParts(Var, Var),
    RealPart(Var),
    ImagPart(Var),
    Conj(Var),
    AbsSq(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Pad { input: Var, axis: usize, before: usize },
    CRelu(Var),
    CSoftmax { input: Var, axis: usize },
    PartStandardize {
        input: Var,
        axis: usize,
        inv_std_re: Vec<T>,
        inv_std_im: Vec<T>,
    },
    Fft { input: Var, inverse: bool },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    trainable: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf; its gradient slot is filled by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].trainable = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn require_real(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).is_real() {
            Ok(())
        } else {
            Err(Error::contract(format!("{what} requires a real-typed input")))
        }
    }

    fn check_axis(&self, v: Var, axis: usize) -> Result<()> {
        let rank = self.value(v).rank();
        if axis >= rank {
            return Err(Error::dim(format!("axis {axis} out of range for rank {rank}")));
        }
        Ok(())
    }

    // ---- elementwise -------------------------------------------------------

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta.shape(), tb.shape())?;
        let n = numel(&shape);
        let ma = broadcast_map(&shape, ta.shape());
        let mb = broadcast_map(&shape, tb.shape());
        let mut out = Tensor::zeros(&shape);
        for i in 0..n {
            let x = ta.get(ma[i]);
            let y = tb.get(mb[i]);
            let z = match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::ConjMul => x * y.conj(),
                BinaryKind::PartMul => Complex::new(x.re * y.re, x.im * y.im),
            };
            out.set(i, z);
        }
        Ok(self.push(out, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn conj_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::ConjMul, a, b)
    }

    pub fn part_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::PartMul, a, b)
    }

    /// Multiplication by a real constant.
    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let mut out = self.value(a).clone();
        let (re, im) = out.parts_mut();
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn conj(&mut self, a: Var) -> Var {
        let out = self.value(a).conj();
        self.push(out, Op::Conj(a))
    }

    /// `|z|²` as a real-typed tensor.
    pub fn abs_sq(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let re = t.re().iter().zip(t.im()).map(|(&x, &y)| x * x + y * y).collect();
        let out = Tensor::from_real(t.shape(), re).expect("same shape");
        self.push(out, Op::AbsSq(a))
    }

    pub fn real_part(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_real(t.shape(), t.re().to_vec()).expect("same shape");
        self.push(out, Op::RealPart(a))
    }

    pub fn imag_part(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_real(t.shape(), t.im().to_vec()).expect("same shape");
        self.push(out, Op::ImagPart(a))
    }

    /// Complex tensor `re + i·im` assembled from two real-typed tensors.
    pub fn from_parts(&mut self, re: Var, im: Var) -> Result<Var> {
        self.require_real(re, "from_parts")?;
        self.require_real(im, "from_parts")?;
        let (tr, ti) = (self.value(re), self.value(im));
        if tr.shape() != ti.shape() {
            return Err(Error::dim(format!(
                "from_parts shapes differ: {:?} vs {:?}",
                tr.shape(),
                ti.shape()
            )));
        }
        let out = Tensor::from_parts(tr.shape(), tr.re().to_vec(), ti.re().to_vec())?;
        Ok(self.push(out, Op::FromParts(re, im)))
    }

    /// ReLU applied independently to the real and imaginary parts.
    pub fn crelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let zero = T::zero();
        let (re, im) = out.parts_mut();
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v = v.max(zero));
        self.push(out, Op::CRelu(a))
    }

    // ---- linear algebra ----------------------------------------------------

    /// Batched complex matrix product `[..×M×K] · [..×K×P]`.
    ///
    /// Leading axes must agree, or one side must have no leading extent (in
    /// which case it is shared across the other side's batch).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = MatmulPlan::new(self.value(a).shape(), self.value(b).shape())?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (a_real, b_real) = (ta.is_real(), tb.is_real());
        let mut out = Tensor::zeros(&plan.out_shape);
        let (m, k, p) = (plan.m, plan.k, plan.p);
        {
            let (ore, oim) = out.parts_mut();
            for bi in 0..plan.batch {
                let (ao, bo, oo) = plan.offsets(bi);
                let (are, aim) = (&ta.re()[ao..ao + m * k], &ta.im()[ao..ao + m * k]);
                let (bre, bim) = (&tb.re()[bo..bo + k * p], &tb.im()[bo..bo + k * p]);
                let (cre, cim) = (&mut ore[oo..oo + m * p], &mut oim[oo..oo + m * p]);
                gemm_nn(m, k, p, T::one(), are, bre, cre);
                if !a_real && !b_real {
                    gemm_nn(m, k, p, -T::one(), aim, bim, cre);
                }
                if !b_real {
                    gemm_nn(m, k, p, T::one(), are, bim, cim);
                }
                if !a_real {
                    gemm_nn(m, k, p, T::one(), aim, bre, cim);
                }
            }
        }
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    // ---- shape ops ---------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let mut out = Tensor::zeros(&shape);
        {
            let (ore, oim) = out.parts_mut();
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        ore[o * inner + i] += t.re()[base + i];
                        oim[o * inner + i] += t.im()[base + i];
                    }
                }
            }
        }
        Ok(self.push(out, Op::Sum { input: a, axis }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let re = t.re().iter().copied().sum();
        let im = t.im().iter().copied().sum();
        let out = Tensor::from_parts(&[], vec![re], vec![im]).expect("scalar");
        self.push(out, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = T::of_usize(t.len().max(1));
        let re = t.re().iter().copied().sum::<T>() / n;
        let im = t.im().iter().copied().sum::<T>() / n;
        let out = Tensor::from_parts(&[], vec![re], vec![im]).expect("scalar");
        self.push(out, Op::MeanAll(a))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        self.check_axis(first, axis)?;
        let base = self.value(first).shape().to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(k, (x, y))| k == axis || x == y);
            if !compatible {
                return Err(Error::dim(format!("concat shapes {base:?} and {s:?} differ off axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Tensor::zeros(&shape);
        let mut offset = 0;
        for &v in inputs {
            let t = &self.nodes[v.0].value;
            let len = t.shape()[axis];
            let (ore, oim) = out.parts_mut();
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * total + offset) * inner;
                ore[dst..dst + len * inner].copy_from_slice(&t.re()[src..src + len * inner]);
                oim[dst..dst + len * inner].copy_from_slice(&t.im()[src..src + len * inner]);
            }
            offset += len;
        }
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Entries `start..start + len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let t = self.value(a);
        let full = t.shape()[axis];
        if start + len > full {
            return Err(Error::dim(format!(
                "slice {start}..{} exceeds axis length {full}",
                start + len
            )));
        }
        let (outer, _, inner) = axis_split(t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let mut out = Tensor::zeros(&shape);
        {
            let (ore, oim) = out.parts_mut();
            for o in 0..outer {
                let src = (o * full + start) * inner;
                let dst = o * len * inner;
                ore[dst..dst + len * inner].copy_from_slice(&t.re()[src..src + len * inner]);
                oim[dst..dst + len * inner].copy_from_slice(&t.im()[src..src + len * inner]);
            }
        }
        Ok(self.push(out, Op::Slice { input: a, axis, start }))
    }

    /// Zero padding along `axis`.
    pub fn pad(&mut self, a: Var, axis: usize, before: usize, after: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let t = self.value(a);
        let len = t.shape()[axis];
        let total = before + len + after;
        let (outer, _, inner) = axis_split(t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape[axis] = total;
        let mut out = Tensor::zeros(&shape);
        {
            let (ore, oim) = out.parts_mut();
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * total + before) * inner;
                ore[dst..dst + len * inner].copy_from_slice(&t.re()[src..src + len * inner]);
                oim[dst..dst + len * inner].copy_from_slice(&t.im()[src..src + len * inner]);
            }
        }
        Ok(self.push(out, Op::Pad { input: a, axis, before }))
    }

    // ---- normalizations ----------------------------------------------------

    /// Softmax over the magnitudes along `axis`, each output keeping the
    /// phase of its input. Zero-magnitude entries take phase factor 0.
    pub fn csoftmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = Tensor::zeros(t.shape());
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mags: Vec<T> = (0..len).map(|l| t.get(idx(l)).norm()).collect();
                let peak = mags.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = mags.iter().map(|&r| (r - peak).exp()).collect();
                let denom: T = exps.iter().copied().sum();
                for l in 0..len {
                    let r = mags[l];
                    if r > T::zero() {
                        let s = exps[l] / denom;
                        out.set(idx(l), t.get(idx(l)) * (s / r));
                    }
                }
            }
        }
        Ok(self.push(out, Op::CSoftmax { input: a, axis }))
    }

    /// Standardizes Re and Im independently along `axis`:
    /// `(x - mean) / sqrt(var + eps)` with the population variance.
    pub fn part_standardize(&mut self, a: Var, axis: usize, eps: T) -> Result<Var> {
        self.check_axis(a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = Tensor::zeros(t.shape());
        let mut inv_re = Vec::with_capacity(outer * inner);
        let mut inv_im = Vec::with_capacity(outer * inner);
        let n = T::of_usize(len);
        {
            let (ore, oim) = out.parts_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    for (src, dst, inv) in [(t.re(), &mut *ore, &mut inv_re), (t.im(), &mut *oim, &mut inv_im)] {
                        let mean = (0..len).map(|l| src[idx(l)]).sum::<T>() / n;
                        let var = (0..len).map(|l| (src[idx(l)] - mean).powi(2)).sum::<T>() / n;
                        let s = T::one() / (var + eps).sqrt();
                        for l in 0..len {
                            dst[idx(l)] = (src[idx(l)] - mean) * s;
                        }
                        inv.push(s);
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::PartStandardize {
                input: a,
                axis,
                inv_std_re: inv_re,
                inv_std_im: inv_im,
            },
        ))
    }

    // ---- spectral ----------------------------------------------------------

    /// DFT along the last axis (un-normalized forward, `1/n` inverse).
    pub fn fft(&mut self, a: Var, inverse: bool) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .last()
            .ok_or_else(|| Error::dim("fft of a rank-0 tensor"))?;
        let plan = FftPlan::new(n)?;
        let out = apply_fft_rows(&plan, t, inverse)?;
        Ok(self.push(out, Op::Fft { input: a, inverse }))
    }

    // ---- backward ----------------------------------------------------------

    /// Fills the gradient slots of every node that `loss` depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        if !lt.is_real() {
            return Err(Error::contract("backward needs a real-typed loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), Complex::new(T::one(), T::zero())));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient slots of trainable leaves, in creation order.
    pub fn trainable(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .map(Var)
            .collect()
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let shape = g.shape();
                let ma = broadcast_map(shape, ta.shape());
                let mb = broadcast_map(shape, tb.shape());
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                for i in 0..g.len() {
                    let gz = g.get(i);
                    let x = ta.get(ma[i]);
                    let y = tb.get(mb[i]);
                    let (dx, dy) = match kind {
                        BinaryKind::Add => (gz, gz),
                        BinaryKind::Sub => (gz, -gz),
                        BinaryKind::Mul => (gz * y.conj(), gz * x.conj()),
                        BinaryKind::ConjMul => (gz * y, gz.conj() * x),
                        BinaryKind::PartMul => (
                            Complex::new(gz.re * y.re, gz.im * y.im),
                            Complex::new(gz.re * x.re, gz.im * x.im),
                        ),
                    };
                    add_at(&mut ga, ma[i], dx);
                    add_at(&mut gb, mb[i], dy);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, factor) => {
                let mut ga = g.clone();
                let (re, im) = ga.parts_mut();
                re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= *factor);
                accumulate(grads, *a, ga);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let plan = MatmulPlan::new(ta.shape(), tb.shape())?;
                let (m, k, p) = (plan.m, plan.k, plan.p);
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                let one = T::one();
                for bi in 0..plan.batch {
                    let (ao, bo, oo) = plan.offsets(bi);
                    let (gre, gim) = (&g.re()[oo..oo + m * p], &g.im()[oo..oo + m * p]);
                    let (are, aim) = (&ta.re()[ao..ao + m * k], &ta.im()[ao..ao + m * k]);
                    let (bre, bim) = (&tb.re()[bo..bo + k * p], &tb.im()[bo..bo + k * p]);
                    {
                        let (gar, gai) = ga.parts_mut();
                        let (gar, gai) = (&mut gar[ao..ao + m * k], &mut gai[ao..ao + m * k]);
                        // ḡA = ḡC · Bᴴ
                        gemm_nt(m, k, p, one, gre, bre, gar);
                        gemm_nt(m, k, p, one, gim, bim, gar);
                        gemm_nt(m, k, p, one, gim, bre, gai);
                        gemm_nt(m, k, p, -one, gre, bim, gai);
                    }
                    {
                        let (gbr, gbi) = gb.parts_mut();
                        let (gbr, gbi) = (&mut gbr[bo..bo + k * p], &mut gbi[bo..bo + k * p]);
                        // ḡB = Aᴴ · ḡC
                        gemm_tn(m, k, p, one, are, gre, gbr);
                        gemm_tn(m, k, p, one, aim, gim, gbr);
                        gemm_tn(m, k, p, one, are, gim, gbi);
                        gemm_tn(m, k, p, -one, aim, gre, gbi);
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Sum { input, axis } => {
                let shape = self.value(*input).shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut ga = Tensor::zeros(shape);
                {
                    let (re, im) = ga.parts_mut();
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            re[base..base + inner].copy_from_slice(&g.re()[o * inner..(o + 1) * inner]);
                            im[base..base + inner].copy_from_slice(&g.im()[o * inner..(o + 1) * inner]);
                        }
                    }
                }
                accumulate(grads, *input, ga);
            }
            Op::SumAll(a) | Op::MeanAll(a) => {
                let shape = self.value(*a).shape();
                let mut gz = g.get(0);
                if matches!(node.op, Op::MeanAll(_)) {
                    gz = gz / T::of_usize(numel(shape).max(1));
                }
                accumulate(grads, *a, Tensor::full(shape, gz));
            }
            Op::Reshape(a) => {
                let ga = g.clone().reshape(self.value(*a).shape())?;
                accumulate(grads, *a, ga);
            }
            Op::FromParts(re, im) => {
                let shape = g.shape();
                accumulate(grads, *re, Tensor::from_real(shape, g.re().to_vec())?);
                accumulate(grads, *im, Tensor::from_real(shape, g.im().to_vec())?);
            }
            Op::RealPart(a) => {
                accumulate(grads, *a, Tensor::from_real(g.shape(), g.re().to_vec())?);
            }
            Op::ImagPart(a) => {
                let zeros = vec![T::zero(); g.len()];
                accumulate(grads, *a, Tensor::from_parts(g.shape(), zeros, g.re().to_vec())?);
            }
            Op::Conj(a) => accumulate(grads, *a, g.conj()),
            Op::AbsSq(a) => {
                let t = self.value(*a);
                let two = T::one() + T::one();
                let re = t.re().iter().zip(g.re()).map(|(&x, &gv)| two * x * gv).collect();
                let im = t.im().iter().zip(g.re()).map(|(&y, &gv)| two * y * gv).collect();
                accumulate(grads, *a, Tensor::from_parts(t.shape(), re, im)?);
            }
            Op::Concat { inputs, axis } => {
                let total = g.shape()[*axis];
                let (outer, _, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.value(v).shape();
                    let len = shape[*axis];
                    let mut gv = Tensor::zeros(shape);
                    {
                        let (re, im) = gv.parts_mut();
                        for o in 0..outer {
                            let dst = o * len * inner;
                            let src = (o * total + offset) * inner;
                            re[dst..dst + len * inner].copy_from_slice(&g.re()[src..src + len * inner]);
                            im[dst..dst + len * inner].copy_from_slice(&g.im()[src..src + len * inner]);
                        }
                    }
                    accumulate(grads, v, gv);
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let shape = self.value(*input).shape();
                let full = shape[*axis];
                let len = g.shape()[*axis];
                let (outer, _, inner) = axis_split(shape, *axis);
                let mut ga = Tensor::zeros(shape);
                {
                    let (re, im) = ga.parts_mut();
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        re[dst..dst + len * inner].copy_from_slice(&g.re()[src..src + len * inner]);
                        im[dst..dst + len * inner].copy_from_slice(&g.im()[src..src + len * inner]);
                    }
                }
                accumulate(grads, *input, ga);
            }
            Op::Pad { input, axis, before } => {
                let shape = self.value(*input).shape();
                let len = shape[*axis];
                let total = g.shape()[*axis];
                let (outer, _, inner) = axis_split(shape, *axis);
                let mut ga = Tensor::zeros(shape);
                {
                    let (re, im) = ga.parts_mut();
                    for o in 0..outer {
                        let src = (o * total + before) * inner;
                        let dst = o * len * inner;
                        re[dst..dst + len * inner].copy_from_slice(&g.re()[src..src + len * inner]);
                        im[dst..dst + len * inner].copy_from_slice(&g.im()[src..src + len * inner]);
                    }
                }
                accumulate(grads, *input, ga);
            }
            Op::CRelu(a) => {
                let t = self.value(*a);
                let zero = T::zero();
                let re = t.re().iter().zip(g.re()).map(|(&x, &gv)| if x > zero { gv } else { zero }).collect();
                let im = t.im().iter().zip(g.im()).map(|(&x, &gv)| if x > zero { gv } else { zero }).collect();
                accumulate(grads, *a, Tensor::from_parts(t.shape(), re, im)?);
            }
            Op::CSoftmax { input, axis } => {
                let t = self.value(*input);
                let (outer, len, inner) = axis_split(t.shape(), *axis);
                let mut ga = Tensor::zeros(t.shape());
                let zero = T::zero();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let zs: Vec<Complex<T>> = (0..len).map(|l| t.get(idx(l))).collect();
                        let mags: Vec<T> = zs.iter().map(|z| z.norm()).collect();
                        let peak = mags.iter().copied().fold(T::neg_infinity(), T::max);
                        let exps: Vec<T> = mags.iter().map(|&r| (r - peak).exp()).collect();
                        let denom: T = exps.iter().copied().sum();
                        let soft: Vec<T> = exps.iter().map(|&e| e / denom).collect();
                        // ∂L/∂s_l through out_l = s_l·φ_l
                        let ds: Vec<T> = (0..len)
                            .map(|l| {
                                let r = mags[l];
                                if r > zero {
                                    let gz = g.get(idx(l));
                                    (gz.re * zs[l].re + gz.im * zs[l].im) / r
                                } else {
                                    zero
                                }
                            })
                            .collect();
                        let weighted: T = (0..len).map(|l| soft[l] * ds[l]).sum();
                        for l in 0..len {
                            let r = mags[l];
                            if r <= zero {
                                continue;
                            }
                            let (x, y) = (zs[l].re, zs[l].im);
                            let gz = g.get(idx(l));
                            let dr = soft[l] * (ds[l] - weighted);
                            let r3 = r * r * r;
                            let s = soft[l];
                            let gx = dr * x / r + s * (gz.re * y * y - gz.im * x * y) / r3;
                            let gy = dr * y / r + s * (gz.im * x * x - gz.re * x * y) / r3;
                            ga.set(idx(l), Complex::new(gx, gy));
                        }
                    }
                }
                accumulate(grads, *input, ga);
            }
            Op::PartStandardize {
                input,
                axis,
                inv_std_re,
                inv_std_im,
            } => {
                let shape = self.value(*input).shape();
                let y = &node.value;
                let (outer, len, inner) = axis_split(shape, *axis);
                let n = T::of_usize(len);
                let mut ga = Tensor::zeros(shape);
                {
                    let (gre_out, gim_out) = ga.parts_mut();
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let slot = o * inner + i;
                            for (gsrc, ysrc, dst, inv) in [
                                (g.re(), y.re(), &mut *gre_out, inv_std_re[slot]),
                                (g.im(), y.im(), &mut *gim_out, inv_std_im[slot]),
                            ] {
                                let mean_g = (0..len).map(|l| gsrc[idx(l)]).sum::<T>() / n;
                                let mean_gy = (0..len).map(|l| gsrc[idx(l)] * ysrc[idx(l)]).sum::<T>() / n;
                                for l in 0..len {
                                    dst[idx(l)] = inv * (gsrc[idx(l)] - mean_g - ysrc[idx(l)] * mean_gy);
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *input, ga);
            }
            Op::Fft { input, inverse } => {
                let n = *g.shape().last().expect("fft node has rank ≥ 1");
                let plan = FftPlan::new(n)?;
                // Adjoint of the DFT matrix is n·IDFT; adjoint of IDFT is DFT/n.
                let mut ga = apply_fft_rows(&plan, g, !inverse)?;
                let factor = if *inverse {
                    T::one() / T::of_usize(n)
                } else {
                    T::of_usize(n)
                };
                let (re, im) = ga.parts_mut();
                re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= factor);
                accumulate(grads, *input, ga);
            }
        }
        Ok(())
    }
}

fn add_at<T: Scalar>(t: &mut Tensor<T>, i: usize, z: Complex<T>) {
    let (re, im) = t.parts_mut();
    re[i] += z.re;
    im[i] += z.im;
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn apply_fft_rows<T: Scalar>(plan: &FftPlan<T>, t: &Tensor<T>, inverse: bool) -> Result<Tensor<T>> {
    let n = plan.len();
    let rows = t.len() / n;
    let mut out = Tensor::zeros(t.shape());
    for r in 0..rows {
        let row: Vec<Complex<T>> = (0..n).map(|j| t.get(r * n + j)).collect();
        let y = plan.process(&row, inverse)?;
        for (j, z) in y.into_iter().enumerate() {
            out.set(r * n + j, z);
        }
    }
    Ok(out)
}

struct MatmulPlan {
    m: usize,
    k: usize,
    p: usize,
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    out_shape: Vec<usize>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::dim(format!("matmul needs rank ≥ 2 operands, got {a:?} and {b:?}")));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, p) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::dim(format!("matmul inner axes differ: {a:?} · {b:?}")));
        }
        let (la, lb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let (na, nb) = (numel(la), numel(lb));
        let lead = if la == lb {
            la.to_vec()
        } else if na == 1 {
            lb.to_vec()
        } else if nb == 1 {
            la.to_vec()
        } else {
            return Err(Error::dim(format!("matmul batch axes differ: {a:?} · {b:?}")));
        };
        let mut out_shape = lead.clone();
        out_shape.extend([m, p]);
        Ok(MatmulPlan {
            m,
            k,
            p,
            batch: numel(&lead),
            a_batched: na > 1 || la == lb,
            b_batched: nb > 1 || la == lb,
            out_shape,
        })
    }

    fn offsets(&self, bi: usize) -> (usize, usize, usize) {
        let ao = if self.a_batched { bi * self.m * self.k } else { 0 };
        let bo = if self.b_batched { bi * self.k * self.p } else { 0 };
        (ao, bo, bi * self.m * self.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cx(re: f64, im: f64) -> Tensor<f64> {
        Tensor::from_parts(&[1], vec![re], vec![im]).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let a = g.constant(cx(1., 1.));
        let b = g.constant(cx(1., -1.));
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m).get(0), Complex::new(2., 0.));
        let cm = g.conj_mul(a, a).unwrap();
        assert_eq!(g.value(cm).get(0), Complex::new(2., 0.));
        let p = g.constant(cx(3., 4.));
        let q = g.constant(cx(-3., -4.));
        let s = g.add(p, q).unwrap();
        assert_eq!(g.value(s).get(0), Complex::new(0., 0.));
    }

    #[test]
    fn broadcast_mismatch_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::<f64>::new();
        let i2 = g.constant(Tensor::from_real(&[2, 2], vec![1., 0., 0., 1.]).unwrap());
        let v = g.constant(Tensor::from_parts(&[2, 1], vec![3., -2.], vec![0.5, 7.]).unwrap());
        let r = g.matmul(i2, v).unwrap();
        assert_eq!(g.value(r), g.value(v));

        let j = Tensor::from_parts(&[2, 2], vec![0.; 4], vec![0., 1., 1., 0.]).unwrap();
        let j = g.constant(j);
        let jj = g.matmul(j, j).unwrap();
        let expected = Tensor::from_real(&[2, 2], vec![-1., 0., 0., -1.]).unwrap();
        assert_eq!(g.value(jj), &expected);

        let bad = g.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(g.matmul(j, bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn real_matmul_stays_real() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_real(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.constant(Tensor::from_real(&[3, 1], vec![1., 1., 1.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert!(g.value(c).is_real());
        assert_eq!(g.value(c).re(), &[6., 15.]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::from_real(&[3], vec![1., 2., 3.]).unwrap());
        let sq = g.abs_sq(w);
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().re(), &[2., 4., 6.]);
    }

    #[test]
    fn modulus_squared_gradient_pair() {
        let mut g = Graph::<f64>::new();
        let z = g.param(cx(3., 4.));
        let sq = g.abs_sq(z);
        let loss = g.sum_all(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(z).unwrap().get(0), Complex::new(6., 8.));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_real(&[1], vec![1.5]).unwrap());
        let y = g.add(x, x).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().re(), &[2.0]);
    }

    #[test]
    fn backward_needs_real_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let z = g.param(cx(0., 1.));
        let s = g.sum_all(z);
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_gradient_sums_over_stretched_axes() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_real(&[1, 3], vec![1., 2., 3.]).unwrap());
        let b = g.constant(Tensor::from_real(&[4, 3], (0..12).map(f64::from).collect()).unwrap());
        let y = g.mul(a, b).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        // Column sums of b.
        assert_eq!(g.grad(a).unwrap().re(), &[18., 22., 26.]);
    }

    #[test]
    fn shape_ops_forward() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_real(&[2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = g.constant(Tensor::from_real(&[2, 1], vec![9., 8.]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).re(), &[1., 2., 9., 3., 4., 8.]);
        let s = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).re(), &[2., 9., 4., 8.]);
        let p = g.pad(b, 1, 1, 1).unwrap();
        assert_eq!(g.value(p).re(), &[0., 9., 0., 0., 8., 0.]);
        let r = g.sum(a, 0).unwrap();
        assert_eq!(g.value(r).re(), &[4., 6.]);
        assert!(g.slice(a, 1, 1, 2).is_err());
    }
}

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result, TensorError};
use crate::float::Float;
use crate::shape::numel;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Gradient of one op: maps the output gradient to one optional gradient per input.
pub(crate) type BackwardFn<F> =
    Box<dyn Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>> + Send + Sync>;

pub(crate) struct BackwardCtx<'a, F: Float> {
    pub grad: &'a [F],
    pub inputs: &'a [Tensor<F>],
    pub out: &'a [F],
    pub needs: &'a [bool],
}

/// A recorded operation in the differentiation graph.
pub struct OpNode<F: Float> {
    kind: &'static str,
    inputs: Vec<Tensor<F>>,
    backward: BackwardFn<F>,
}

impl<F: Float> OpNode<F> {
    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn inputs(&self) -> &[Tensor<F>] {
        &self.inputs
    }
}

struct Inner<F: Float> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<F>>>,
    node: Option<OpNode<F>>,
}

/// Dense row-major n-dimensional array that can take part in a reverse-mode
/// differentiation graph. Cloning is cheap: clones share storage and identity.
pub struct Tensor<F: Float = f32> {
    inner: Arc<Inner<F>>,
}

impl<F: Float> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<F: Float> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad);
        if let Some(n) = &self.inner.node {
            d.field("op", &n.kind);
        }
        if self.numel() <= 16 {
            d.field("data", &self.inner.data);
        }
        d.finish()
    }
}

impl<F: Float> Tensor<F> {
    fn build(shape: Vec<usize>, data: Vec<F>, requires_grad: bool, node: Option<OpNode<F>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    pub fn new(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(shape_err(
                "new",
                format!("shape {shape:?} needs {} elements, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Like [`Tensor::new`] for internal callers that already validated sizes.
    pub(crate) fn raw(data: Vec<F>, shape: Vec<usize>) -> Self {
        Self::build(shape, data, false, None)
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| F::of_f64(v)).collect(), shape)
    }

    pub fn scalar(v: F) -> Self {
        Self::build(vec![], vec![v], false, None)
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        Self::build(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Gaussian samples with mean 0 and the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            F::of_f64(z * std)
        })
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| F::of_f64(rng.gen_range(lo..hi)))
    }

    /// Returns a leaf with the requested gradient flag. Shares storage when
    /// the flag is unchanged, otherwise copies into a fresh leaf.
    pub fn requires_grad(self, on: bool) -> Self {
        if self.inner.requires_grad == on && self.inner.node.is_none() {
            return self;
        }
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), on, None)
    }

    /// A graph-free copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    pub(crate) fn from_op(
        kind: &'static str,
        shape: Vec<usize>,
        data: Vec<F>,
        inputs: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Result<Self> {
        if crate::mode::strict() && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: kind.to_string() });
        }
        let requires_grad = inputs.iter().any(|t| t.inner.requires_grad);
        let node = requires_grad.then(|| OpNode {
            kind,
            inputs,
            backward,
        });
        Ok(Self::build(shape, data, requires_grad, node))
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.inner.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn item(&self) -> Result<F> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar { numel: self.numel() });
        }
        Ok(self.inner.data[0])
    }

    pub fn is_requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn node(&self) -> Option<&OpNode<F>> {
        self.inner.node.as_ref()
    }

    /// Accumulated gradient, present only on leaves that require grad and
    /// were reached by a backward pass.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.lock().expect("grad lock").clone()
    }

    pub fn grad_tensor(&self) -> Option<Tensor<F>> {
        self.grad().map(|g| Tensor::raw(g, self.inner.shape.clone()))
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock") = None;
    }

    fn accumulate_grad(&self, g: &[F]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Converts to another precision. The result is a detached leaf.
    pub fn cast<G: Float>(&self) -> Tensor<G> {
        let data = self.inner.data.iter().map(|v| G::of_f64(v.as_f64())).collect();
        Tensor::build(self.inner.shape.clone(), data, false, None)
    }

    /// Reverse-mode sweep from this scalar, accumulating into every reachable
    /// leaf that requires grad. Repeated calls add to existing grads.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar { numel: self.numel() });
        }
        if !self.inner.requires_grad {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<F>> = HashMap::new();
        grads.insert(self.id(), vec![F::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.inner.node {
                None => t.accumulate_grad(&g),
                Some(node) => {
                    let needs: Vec<bool> = node.inputs.iter().map(|i| i.inner.requires_grad).collect();
                    let ctx = BackwardCtx {
                        grad: &g,
                        inputs: &node.inputs,
                        out: &t.inner.data,
                        needs: &needs,
                    };
                    let gs = (node.backward)(&ctx);
                    debug_assert_eq!(gs.len(), node.inputs.len(), "backward arity for {}", node.kind);
                    for (inp, gi) in node.inputs.iter().zip(gs) {
                        let Some(gi) = gi else { continue };
                        if !inp.inner.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(gi.len(), inp.numel(), "grad size for input of {}", node.kind);
                        match grads.get_mut(&inp.id()) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                            None => {
                                grads.insert(inp.id(), gi);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over grad-requiring ancestors: inputs precede consumers.
    fn topo_order(&self) -> Vec<Tensor<F>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor<F>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for inp in node.inputs.iter().rev() {
                    if inp.inner.requires_grad && !seen.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_extent() {
        assert!(Tensor::<f32>::new(vec![1.0; 5], &[2, 3]).is_err());
        let t = Tensor::<f32>::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn no_grad_tensor_never_accumulates() {
        let x = Tensor::<f64>::scalar(2.0);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn square_grad() {
        let x = Tensor::<f64>::scalar(3.0).requires_grad(true);
        x.mul(&x).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::scalar(3.0).requires_grad(true);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::ones(&[2]).requires_grad(true);
        let y = x.exp().unwrap();
        assert_eq!(y.backward(), Err(TensorError::NotScalar { numel: 2 }));
    }
}

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::{Element, Tensor};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Runs `f` without recording any graph; every result is a constant.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Local derivative rule of one operation.
///
/// Implementations must build their results from [`Var`] operations so that
/// the returned gradients are themselves differentiable.
pub(crate) trait Backward<E: Element> {
    /// Gradients with respect to each input; `needs[i]` is false when input
    /// `i` does not require one and `None` may be returned for it.
    fn backward(
        &self,
        inputs: &[Var<E>],
        output: &Var<E>,
        grad: &Var<E>,
        needs: &[bool],
    ) -> Vec<Option<Var<E>>>;
}

struct GradFn<E: Element> {
    inputs: Vec<Var<E>>,
    rule: Box<dyn Backward<E>>,
}

struct Node<E: Element> {
    id: usize,
    value: Tensor<E>,
    grad_fn: Option<GradFn<E>>,
    requires_grad: bool,
}

/// A tensor value participating in a computation graph.
pub struct Var<E: Element>(Rc<Node<E>>);

impl<E: Element> Clone for Var<E> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<E: Element> fmt::Debug for Var<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.0.id, self.0.value)
    }
}

impl<E: Element> Var<E> {
    fn new_node(value: Tensor<E>, grad_fn: Option<GradFn<E>>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            grad_fn,
            requires_grad,
        }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn param(value: Tensor<E>) -> Self {
        Self::new_node(value, None, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(value: Tensor<E>) -> Self {
        Self::new_node(value, None, false)
    }

    pub(crate) fn from_op(value: Tensor<E>, inputs: Vec<Var<E>>, rule: impl Backward<E> + 'static) -> Self {
        if is_grad_enabled() && inputs.iter().any(Var::requires_grad) {
            Self::new_node(
                value,
                Some(GradFn {
                    inputs,
                    rule: Box::new(rule),
                }),
                true,
            )
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<E> {
        &self.0.value
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &crate::Shape {
        self.0.value.shape()
    }

    pub fn item(&self) -> E {
        self.0.value.item()
    }

    fn inputs(&self) -> &[Var<E>] {
        self.0.grad_fn.as_ref().map(|g| g.inputs.as_slice()).unwrap_or(&[])
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// With `create_graph`, the returned gradients are differentiable functions of
/// the graph's leaves; otherwise they are constants. Leaves that `output` does
/// not depend on receive zero gradients.
pub fn grad<E: Element>(output: &Var<E>, wrt: &[&Var<E>], create_graph: bool) -> Vec<Var<E>> {
    assert_eq!(
        output.value().numel(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    let zeros = |v: &Var<E>| Var::constant(Tensor::zeros(v.shape().clone()));
    if !output.requires_grad() {
        return wrt.iter().map(|v| zeros(v)).collect();
    }

    // Nodes on some path from `output` to a target, in reverse topological order.
    let targets: HashMap<usize, ()> = wrt.iter().map(|v| (v.id(), ())).collect();
    let mut relevant: HashMap<usize, bool> = HashMap::new();
    let mut order: Vec<Var<E>> = Vec::new();
    {
        // Iterative post-order DFS.
        let mut stack: Vec<(Var<E>, usize)> = vec![(output.clone(), 0)];
        let mut visiting: HashMap<usize, ()> = HashMap::new();
        visiting.insert(output.id(), ());
        while let Some((node, child)) = stack.pop() {
            let inputs = node.inputs();
            if child < inputs.len() {
                let next = inputs[child].clone();
                stack.push((node, child + 1));
                if next.requires_grad()
                    && !relevant.contains_key(&next.id())
                    && !visiting.contains_key(&next.id())
                {
                    visiting.insert(next.id(), ());
                    stack.push((next, 0));
                }
            } else {
                let is_rel = targets.contains_key(&node.id())
                    || node
                        .inputs()
                        .iter()
                        .any(|i| relevant.get(&i.id()).copied().unwrap_or(false));
                relevant.insert(node.id(), is_rel);
                if is_rel {
                    order.push(node);
                }
            }
        }
    }

    let run = || {
        let mut grads: HashMap<usize, Var<E>> = HashMap::new();
        grads.insert(
            output.id(),
            Var::constant(Tensor::ones(output.shape().clone())),
        );
        for node in order.iter().rev() {
            let Some(g) = grads.get(&node.id()).cloned() else {
                continue;
            };
            let Some(grad_fn) = node.0.grad_fn.as_ref() else {
                continue;
            };
            // Keep target leaves' gradients; other intermediates can go.
            if !targets.contains_key(&node.id()) {
                grads.remove(&node.id());
            }
            let needs: Vec<bool> = grad_fn
                .inputs
                .iter()
                .map(|i| relevant.get(&i.id()).copied().unwrap_or(false))
                .collect();
            let input_grads = grad_fn.rule.backward(&grad_fn.inputs, node, &g, &needs);
            debug_assert_eq!(input_grads.len(), grad_fn.inputs.len());
            for ((input, ig), need) in grad_fn.inputs.iter().zip(input_grads).zip(&needs) {
                if !need {
                    continue;
                }
                let Some(ig) = ig else { continue };
                debug_assert_eq!(ig.shape(), input.shape(), "gradient shape mismatch");
                let acc = match grads.remove(&input.id()) {
                    Some(prev) => crate::ops::add(&prev, &ig),
                    None => ig,
                };
                grads.insert(input.id(), acc);
            }
        }
        wrt.iter()
            .map(|v| grads.get(&v.id()).cloned().unwrap_or_else(|| zeros(v)))
            .collect::<Vec<_>>()
    };

    if create_graph {
        run()
    } else {
        no_grad(run)
    }
}

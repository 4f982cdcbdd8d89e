//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Ops append records in execution order, so the tape is topological by
//! construction: every record's inputs were produced earlier. `backward`
//! walks the records once, in reverse, accumulating gradients additively
//! into each input — shared subexpressions therefore sum their
//! contributions.
//!
//! A tape and the tensors recorded on it are confined to one thread.
//! Recording is opt-in: ops only record while a tape is active on the
//! current thread (see [`Tape::activate`]).

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::{Rc, Weak};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Record {
    output: Tensor,
    /// Consumes the output gradient and accumulates into the op's inputs.
    backward: BackwardFn,
}

#[derive(Default)]
struct TapeInner {
    records: RefCell<Vec<Record>>,
    /// Leaf parameters touched by any recorded op; after backward these are
    /// guaranteed to hold a gradient (zero when unreachable from the loss).
    leaves: RefCell<Vec<Tensor>>,
    leaf_ids: RefCell<HashSet<u64>>,
}

/// Ordered record of executed operations for one forward pass.
pub struct Tape {
    inner: Rc<TapeInner>,
}

thread_local! {
    static ACTIVE: RefCell<Vec<Weak<TapeInner>>> = const { RefCell::new(Vec::new()) };
}

impl Tape {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(TapeInner::default()),
        }
    }

    /// Make this the active tape for the current thread until the guard drops.
    #[must_use]
    pub fn activate(&self) -> TapeGuard {
        ACTIVE.with(|a| a.borrow_mut().push(Rc::downgrade(&self.inner)));
        TapeGuard { _private: () }
    }

    pub fn num_records(&self) -> usize {
        self.inner.records.borrow().len()
    }

    /// Populate gradients of everything reachable from `loss`.
    ///
    /// Each recorded op is visited exactly once, in reverse execution order.
    /// Leaf parameters touched by the forward pass but unreachable from the
    /// loss end up with a zero gradient.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape()));
        }
        loss.set_grad(vec![1.0]);
        let records = self.inner.records.borrow();
        for rec in records.iter().rev() {
            let grad = { rec.output.inner.borrow().grad.clone() };
            if let Some(g) = grad {
                (rec.backward)(&g);
            }
        }
        for leaf in self.inner.leaves.borrow().iter() {
            leaf.ensure_zero_grad();
        }
        Ok(())
    }
}

/// Keeps a tape active; deactivates on drop.
pub struct TapeGuard {
    _private: (),
}

impl Drop for TapeGuard {
    fn drop(&mut self) {
        ACTIVE.with(|a| {
            a.borrow_mut().pop();
        });
    }
}

/// Record an op on the active tape, if any input requires gradients.
///
/// `inputs` are the differentiable inputs; `backward` receives the output
/// gradient and must accumulate into them via `Tensor::accumulate_grad`.
pub(crate) fn record(inputs: &[&Tensor], output: &Tensor, backward: BackwardFn) {
    if !inputs.iter().any(|t| t.requires_grad()) {
        return;
    }
    // Output participates in further differentiable computation.
    output.inner.borrow_mut().requires_grad = true;
    let tape = ACTIVE.with(|a| a.borrow().last().and_then(Weak::upgrade));
    let Some(tape) = tape else { return };
    for t in inputs {
        // A leaf is a tensor nothing on this tape produced; track named
        // parameters so backward can zero-fill the unreachable ones.
        if t.requires_grad() && t.name().is_some() {
            let mut ids = tape.leaf_ids.borrow_mut();
            if ids.insert(t.id) {
                tape.leaves.borrow_mut().push((*t).clone());
            }
        }
    }
    tape.records.borrow_mut().push(Record {
        output: output.clone(),
        backward,
    });
}

//! Client local training, server aggregation, and the round loop.

mod aggregate;
mod local;
mod server;

pub use aggregate::{aggregate, AggregationWeights};
pub use local::{
    fedavg_ft_adapt, local_train, local_train_fedavg, local_train_hyperfedzero, sample_batch,
    LocalOutcome, TrainStepReport,
};
pub use server::{
    evaluate_state, resume_training, run_training, run_training_with, GlobalState, RoundRecord,
};

use std::sync::atomic::{AtomicU64, Ordering};

/// Instrumentation counters shared by training and evaluation.
#[derive(Debug, Default)]
pub struct Counters {
    train_forward: AtomicU64,
    train_backward: AtomicU64,
    eval_forward: AtomicU64,
    param_writes: AtomicU64,
    adapt_calls: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub train_forward: u64,
    pub train_backward: u64,
    pub eval_forward: u64,
    pub param_writes: u64,
    pub adapt_calls: u64,
}

impl Counters {
    pub fn new() -> Self {
        Counters::default()
    }

    pub(crate) fn train_forward(&self) {
        self.train_forward.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn train_backward(&self) {
        self.train_backward.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn eval_forward(&self) {
        self.eval_forward.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn param_write(&self) {
        self.param_writes.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn adapt_call(&self) {
        self.adapt_calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            train_forward: self.train_forward.load(Ordering::Relaxed),
            train_backward: self.train_backward.load(Ordering::Relaxed),
            eval_forward: self.eval_forward.load(Ordering::Relaxed),
            param_writes: self.param_writes.load(Ordering::Relaxed),
            adapt_calls: self.adapt_calls.load(Ordering::Relaxed),
        }
    }
}

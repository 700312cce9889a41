//! Concurrent evaluation of one generation's children.
//!
//! Workers pull child indices from a shared counter and write results into
//! an index-addressed buffer, so the output order is the child order no
//! matter which worker finishes first. Each job rebuilds its child's weights
//! from the parent and the pair's perturbation seed and drops them when the
//! evaluation returns.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::evolution::PerturbationSet;
use crate::fitness::{evaluate_model, FitnessResult, LabeledDataset};
use crate::model::{unpack, ArchitectureSpec, Genome};

/// One child evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalJob {
    pub child_index: usize,
    pub pair_index: usize,
    /// `+1` or `-1`.
    pub sign: i8,
    /// Perturbation stream seed; `None` for explicitly supplied perturbations.
    pub seed: Option<u64>,
}

impl EvalJob {
    pub fn for_child(perturbations: &PerturbationSet, child_index: usize) -> Self {
        let pair_index = child_index / 2;
        EvalJob {
            child_index,
            pair_index,
            sign: PerturbationSet::sign(child_index),
            seed: perturbations.seeds().map(|s| s[pair_index]),
        }
    }
}

/// Counts genomes currently materialized by workers and remembers the peak.
#[derive(Debug, Default)]
pub struct ResidentGauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl ResidentGauge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn acquire(&self) -> ResidentGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        ResidentGuard(self)
    }
}

struct ResidentGuard<'a>(&'a ResidentGauge);

impl Drop for ResidentGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

/// `0` means one worker per logical CPU.
pub fn resolve_workers(workers: usize) -> usize {
    if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
}

/// Runs `eval` on every child of `perturbations` and returns the outputs in
/// child-index order. The first failing child (lowest index) aborts the call.
pub fn map_children<T, F>(
    parent: &Genome,
    perturbations: &PerturbationSet,
    workers: usize,
    gauge: Option<&ResidentGauge>,
    eval: F,
) -> Result<Vec<T>>
where
    T: Send + Sync,
    F: Fn(EvalJob, &Genome) -> Result<T> + Sync,
{
    if perturbations.dim() != parent.len() {
        return Err(Error::GenomeLength {
            expected: parent.len(),
            found: perturbations.dim(),
        });
    }
    let n = perturbations.n_children();
    let slots: Vec<OnceLock<Result<T>>> = (0..n).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);

    let work = || {
        let mut epsilon = Vec::new();
        loop {
            if failed.load(Ordering::Relaxed) {
                break;
            }
            let k = next.fetch_add(1, Ordering::Relaxed);
            if k >= n {
                break;
            }
            let job = EvalJob::for_child(perturbations, k);
            let _resident = gauge.map(ResidentGauge::acquire);
            let outcome = perturbations
                .child_with_buffer(parent, k, &mut epsilon)
                .and_then(|child| eval(job, &child))
                .map_err(|e| Error::Child {
                    child: k,
                    source: Box::new(e),
                });
            if outcome.is_err() {
                failed.store(true, Ordering::Relaxed);
            }
            let _ = slots[k].set(outcome);
        }
    };

    let workers = resolve_workers(workers).min(n.max(1));
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(&work);
            }
        });
    }

    let mut out = Vec::with_capacity(n);
    let mut first_err = None;
    for slot in slots {
        match slot.into_inner() {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => {
                first_err.get_or_insert(e);
            }
            None => {}
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Fitness of every child on `dataset`, in child-index order.
pub fn evaluate_population(
    parent: &Genome,
    perturbations: &PerturbationSet,
    spec: &ArchitectureSpec,
    dataset: &LabeledDataset,
    workers: usize,
) -> Result<Vec<FitnessResult>> {
    map_children(parent, perturbations, workers, None, |_, child| {
        evaluate_model(&unpack(child, spec)?, dataset)
    })
}

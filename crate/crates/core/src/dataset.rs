//! Dataset-level evaluation on a worker pool.
//!
//! Per-image tallies are folded in input order by a fixed pairwise tree
//! whose shape depends only on the number of images, so the result is the
//! same for any worker count.

use rayon::prelude::*;

use crate::label::LabelMap;
use crate::metrics::{evaluate_image, EvalOptions, ImageEval, MetricsError};
use crate::spec::DatasetSpec;

/// Streaming pairwise reduction: equal-size partial results are combined
/// as soon as both exist, like carries in a binary counter.
pub struct PairwiseFold<T, F> {
    stack: Vec<(u32, T)>,
    combine: F,
}

impl<T, E, F: FnMut(&T, &T) -> Result<T, E>> PairwiseFold<T, F> {
    pub fn new(combine: F) -> Self {
        Self { stack: Vec::new(), combine }
    }

    pub fn push(&mut self, item: T) -> Result<(), E> {
        let mut level = 0;
        let mut item = item;
        while let Some((top, _)) = self.stack.last() {
            if *top != level {
                break;
            }
            let (_, left) = self.stack.pop().expect("nonempty");
            item = (self.combine)(&left, &item)?;
            level += 1;
        }
        self.stack.push((level, item));
        Ok(())
    }

    /// The fold of everything pushed, or `None` when nothing was.
    pub fn finish(mut self) -> Result<Option<T>, E> {
        let Some((_, mut acc)) = self.stack.pop() else { return Ok(None) };
        while let Some((_, left)) = self.stack.pop() {
            acc = (self.combine)(&left, &acc)?;
        }
        Ok(Some(acc))
    }
}

/// Folds `items` in order with [`PairwiseFold`].
pub fn pairwise_fold<T, E>(items: impl IntoIterator<Item = T>, combine: impl FnMut(&T, &T) -> Result<T, E>) -> Result<Option<T>, E> {
    let mut fold = PairwiseFold::new(combine);
    for item in items {
        fold.push(item)?;
    }
    fold.finish()
}

/// Why one image of a dataset could not be evaluated.
#[derive(Debug)]
pub enum ImageFailure<E> {
    Load(E),
    Metrics(MetricsError),
}

impl<E: std::fmt::Display> std::fmt::Display for ImageFailure<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ImageFailure::Load(e) => e.fmt(f),
            ImageFailure::Metrics(e) => e.fmt(f),
        }
    }
}

/// Folded tallies of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEval {
    pub images: usize,
    pub totals: ImageEval,
}

pub fn worker_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .thread_name(|i| format!("partpq-worker-{i}"))
        .build()
        .expect("thread pool")
}

/// Evaluates every stem with `load` on `workers` threads. Stems are
/// processed and folded in the given order; failures are collected for
/// every stem rather than stopping at the first.
pub fn evaluate_dataset<E, L>(
    stems: &[String],
    load: L,
    spec: &DatasetSpec,
    options: &EvalOptions,
    workers: usize,
) -> Result<DatasetEval, Vec<(String, ImageFailure<E>)>>
where
    E: Send,
    L: Fn(&str) -> Result<(LabelMap, LabelMap), E> + Sync,
{
    let pool = worker_pool(workers);
    let chunk = (workers.max(1) * 4).max(8);
    let mut fold = PairwiseFold::new(|a: &ImageEval, b: &ImageEval| a.combine(b));
    let mut failures = Vec::new();
    let mut done = 0;
    for group in stems.chunks(chunk) {
        let results: Vec<Result<ImageEval, ImageFailure<E>>> = pool.install(|| {
            group
                .par_iter()
                .map(|stem| {
                    let (gt, pred) = load(stem).map_err(ImageFailure::Load)?;
                    evaluate_image(&gt, &pred, spec, options).map_err(ImageFailure::Metrics)
                })
                .collect()
        });
        for (stem, r) in group.iter().zip(results) {
            match r {
                Ok(eval) if failures.is_empty() => {
                    if let Err(e) = fold.push(eval) {
                        failures.push((stem.clone(), ImageFailure::Metrics(e)));
                    }
                }
                Ok(_) => {}
                Err(e) => failures.push((stem.clone(), e)),
            }
        }
        done += group.len();
        log::debug!("evaluated {done} of {} images", stems.len());
    }
    if !failures.is_empty() {
        return Err(failures);
    }
    let totals = match fold.finish() {
        Ok(t) => t.unwrap_or_else(|| ImageEval::zero(spec)),
        Err(e) => return Err(vec![(String::new(), ImageFailure::Metrics(e))]),
    };
    Ok(DatasetEval { images: stems.len(), totals })
}

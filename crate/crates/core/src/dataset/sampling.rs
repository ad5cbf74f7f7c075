use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetManifest, Label};
use crate::error::{Error, Result};

/// Cycles through reshuffled copies of `pool`.
struct Stream<'a> {
    pool: &'a [usize],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Stream<'a> {
    fn new(pool: &'a [usize]) -> Self {
        Self {
            pool,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order = self.pool.to_vec();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One epoch of class-balanced batches, as indices into `manifest.records`.
///
/// Every batch holds `batch / 2` tumor and `batch / 2` no-tumor records. The
/// epoch is long enough to visit every record of the larger class once; the
/// smaller class is drawn from reshuffled passes over its records, so it
/// repeats.
pub fn balanced_batch_plan(
    manifest: &DatasetManifest,
    batch: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch < 2 || batch % 2 != 0 {
        return Err(Error::Config(format!(
            "batch size must be even and at least 2, got {batch}"
        )));
    }
    let (tumor, no_tumor): (Vec<usize>, Vec<usize>) = (0..manifest.len())
        .partition(|&i| manifest.records[i].label == Label::Tumor);
    if tumor.is_empty() || no_tumor.is_empty() {
        return Err(Error::CannotBalance(format!(
            "manifest has {} tumor and {} no_tumor records",
            tumor.len(),
            no_tumor.len()
        )));
    }
    let half = batch / 2;
    let n_batches = tumor.len().max(no_tumor.len()).div_ceil(half);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Stream::new(&tumor);
    let mut neg = Stream::new(&no_tumor);
    let mut plan = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut b = Vec::with_capacity(batch);
        for _ in 0..half {
            b.push(pos.next(&mut rng));
            b.push(neg.next(&mut rng));
        }
        plan.push(b);
    }
    Ok(plan)
}

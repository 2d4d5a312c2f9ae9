//! Train/validation splits and the sequential chunk stream used by the
//! online-learning simulation.

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seeds::rng_from;

/// Seeded stratified split into `(train, val)` index sets.
///
/// Each class is shuffled and its examples are spread evenly over a common
/// ordering; validation takes the first `round(val_fraction * n)` entries, so
/// every class sizeable enough shows up on both sides.
pub fn split_indices(labels: &[usize], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let n = labels.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} on {n} examples leaves an empty side"
        )));
    }
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in &order {
        by_class[labels[i]].push(i);
    }
    // (position within class + 0.5) / class size, tie-broken by shuffle rank
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut keyed: Vec<(f64, usize, usize)> = by_class
        .iter()
        .flat_map(|members| {
            let size = members.len() as f64;
            members
                .iter()
                .enumerate()
                .map(move |(k, &i)| ((k as f64 + 0.5) / size, i))
        })
        .map(|(key, i)| (key, rank[i], i))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut val: Vec<usize> = keyed[..n_val].iter().map(|k| k.2).collect();
    let mut train: Vec<usize> = keyed[n_val..].iter().map(|k| k.2).collect();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(&ds.labels, val_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Training indices partitioned into equally sized chunks that arrive in
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStream {
    pub chunks: Vec<Vec<usize>>,
}

impl ChunkStream {
    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Indices of chunks `1..=k`, sorted.
    pub fn cumulative_union(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.chunks[..k.min(self.chunks.len())].concat();
        out.sort_unstable();
        out
    }
}

pub fn make_chunks(n: usize, num_chunks: usize, seed: u64) -> Result<ChunkStream> {
    if num_chunks == 0 || num_chunks > n {
        return Err(Error::Config(format!(
            "cannot cut {n} examples into {num_chunks} chunks"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let (base, extra) = (n / num_chunks, n % num_chunks);
    let mut chunks = Vec::with_capacity(num_chunks);
    let mut start = 0;
    for c in 0..num_chunks {
        let size = base + usize::from(c < extra);
        chunks.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(ChunkStream { chunks })
}

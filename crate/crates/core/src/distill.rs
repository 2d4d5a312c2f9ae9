//! Cached teacher predictions for self-distillation between stages.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{check_teacher, Network, ParamVector};

/// Default distillation strength for small datasets.
pub const DEFAULT_BETA: f64 = 1.0;
/// Default distillation strength for the larger scenario.
pub const DEFAULT_BETA_LARGE: f64 = 2.0;

const SNAPSHOT_CHUNK: usize = 1024;

/// Class probabilities of the end-of-stage model for every training example.
#[derive(Debug)]
pub struct TeacherCache {
    probs: Array2<f32>,
    source_stage: usize,
    beta: f64,
    reads: AtomicU64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    rows: usize,
    classes: usize,
    source_stage: usize,
    beta: f64,
}

impl TeacherCache {
    pub fn new(probs: Array2<f32>, source_stage: usize, beta: f64) -> Result<Self> {
        check_teacher(probs.view())?;
        if !(beta >= 0.0) {
            return Err(Error::Config(format!("beta_distill must be >= 0, got {beta}")));
        }
        Ok(Self {
            probs,
            source_stage,
            beta,
            reads: AtomicU64::new(0),
        })
    }

    pub fn probs(&self) -> ArrayView2<'_, f32> {
        self.probs.view()
    }

    pub fn source_stage(&self) -> usize {
        self.source_stage
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    /// Number of row lookups served so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CacheHeader {
            rows: self.probs.nrows(),
            classes: self.probs.ncols(),
            source_stage: self.source_stage,
            beta: self.beta,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for v in self.probs.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let format = |offset: usize, message: String| Error::Format {
            source_name: source_name.to_string(),
            offset: offset as u64,
            message,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format(bytes.len(), "missing header line".into()))?;
        let header: CacheHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| format(0, format!("bad header: {e}")))?;
        let body = &bytes[nl + 1..];
        let expected = 4 * header.rows * header.classes;
        if body.len() != expected {
            return Err(format(
                nl + 1 + body.len().min(expected),
                format!("expected {expected} bytes of probabilities, found {}", body.len()),
            ));
        }
        let values: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let probs =
            Array2::from_shape_vec((header.rows, header.classes), values).map_err(|e| format(nl + 1, e.to_string()))?;
        Self::new(probs, header.source_stage, header.beta)
    }

    /// Writes `teacher_stage<t>.bin` into `dir`, where `t` is the stage that
    /// distills from this cache.
    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(cache_file_name(self.source_stage + 1));
        fs::write(&path, self.to_bytes()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

pub fn cache_file_name(stage: usize) -> String {
    format!("teacher_stage{stage}.bin")
}

/// Softmax predictions of `params` on the (clean) training inputs.
pub fn snapshot_teacher(
    network: &Network,
    params: &ParamVector<f32>,
    train_inputs: ArrayView2<'_, f32>,
    source_stage: usize,
    beta: f64,
) -> Result<TeacherCache> {
    if !params.is_finite() {
        return Err(Error::Data("teacher parameters are not finite".into()));
    }
    let n = train_inputs.nrows();
    let mut probs = Array2::<f32>::zeros((n, network.spec().num_classes));
    let mut start = 0;
    while start < n {
        let end = (start + SNAPSHOT_CHUNK).min(n);
        let logits = network.forward(params, train_inputs.slice(s![start..end, ..]))?;
        for (row, mut out) in logits
            .axis_iter(Axis(0))
            .zip(probs.slice_mut(s![start..end, ..]).axis_iter_mut(Axis(0)))
        {
            // normalize in f64 so the stored rows sum to 1 well inside 1e-6
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
            let exps: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (o, e) in out.iter_mut().zip(exps) {
                *o = (e / sum) as f32;
            }
        }
        start = end;
    }
    TeacherCache::new(probs, source_stage, beta)
}

/// Teacher rows for a batch of training indices while training `stage`.
///
/// The cache must come from stage `stage - 1`; stage 1 never distills.
pub fn distill_rows(cache: &TeacherCache, batch_indices: &[usize], stage: usize) -> Result<Array2<f32>> {
    if stage <= 1 {
        return Err(Error::Logic("distillation is disabled in stage 1".into()));
    }
    if cache.source_stage + 1 != stage {
        return Err(Error::Logic(format!(
            "teacher from stage {} used in stage {stage}",
            cache.source_stage
        )));
    }
    if let Some(&bad) = batch_indices.iter().find(|&&i| i >= cache.len()) {
        return Err(Error::Data(format!(
            "index {bad} outside teacher cache of {} rows",
            cache.len()
        )));
    }
    cache.reads.fetch_add(1, Ordering::Relaxed);
    Ok(cache.probs.select(Axis(0), batch_indices))
}

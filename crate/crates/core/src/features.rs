//! Request featurization.
//!
//! Surface features are computed from the source text alone. The layout is
//! fixed for a given bucket count `B`:
//!
//! | index      | feature                                                    |
//! |------------|------------------------------------------------------------|
//! | 0          | token count (maximal runs of non-whitespace)               |
//! | 1          | character count (Unicode scalar values)                    |
//! | 2          | mean token length in characters (0 without tokens)         |
//! | 3          | numeric-character ratio (`char::is_numeric`)               |
//! | 4          | punctuation/symbol ratio: not alphanumeric, not whitespace, not control |
//! | 5          | uppercase-letter ratio                                     |
//! | 6 .. 6+B   | hashed character-trigram bucket frequencies                |
//!
//! Ratios are taken over the character count. Trigrams are windows of three
//! consecutive characters over the whole string (whitespace included); each
//! window's UTF-8 bytes are hashed with 64-bit FNV-1a (offset basis
//! `0xcbf29ce484222325`, prime `0x100000001b3`) and reduced modulo `B`. Bucket
//! values are counts divided by the number of windows, so they sum to 1 for
//! text of three or more characters and are all zero otherwise.
//!
//! Precomputed embeddings (for example encoder vectors from a QE model) are
//! appended after the surface block when enabled.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;

use crate::domain::FeatureVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SURFACE_SCALARS: usize = 6;
pub const DEFAULT_TRIGRAM_BUCKETS: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurfaceExtractor {
    buckets: usize,
}

impl Default for SurfaceExtractor {
    fn default() -> Self {
        Self {
            buckets: DEFAULT_TRIGRAM_BUCKETS,
        }
    }
}

impl SurfaceExtractor {
    pub fn new(buckets: usize) -> Self {
        Self { buckets }
    }

    pub fn dim(&self) -> usize {
        SURFACE_SCALARS + self.buckets
    }

    pub fn extract<T: Scalar>(&self, source: &str) -> FeatureVector<T> {
        let chars: Vec<char> = source.chars().collect();
        let n_chars = chars.len();

        let mut tokens = 0usize;
        let mut token_chars = 0usize;
        for tok in source.split_whitespace() {
            tokens += 1;
            token_chars += tok.chars().count();
        }

        let (mut digits, mut punct, mut upper) = (0usize, 0usize, 0usize);
        for &c in &chars {
            if c.is_numeric() {
                digits += 1;
            }
            if !c.is_alphanumeric() && !c.is_whitespace() && !c.is_control() {
                punct += 1;
            }
            if c.is_uppercase() {
                upper += 1;
            }
        }
        let ratio = |x: usize| {
            if n_chars == 0 {
                0.0
            } else {
                x as f64 / n_chars as f64
            }
        };

        let mut out = Vec::with_capacity(self.dim());
        out.push(tokens as f64);
        out.push(n_chars as f64);
        out.push(if tokens == 0 {
            0.0
        } else {
            token_chars as f64 / tokens as f64
        });
        out.push(ratio(digits));
        out.push(ratio(punct));
        out.push(ratio(upper));

        let mut counts = vec![0usize; self.buckets];
        let windows = n_chars.saturating_sub(2);
        if self.buckets > 0 {
            let mut buf = [0u8; 12];
            for w in chars.windows(3) {
                let mut len = 0;
                for c in w {
                    len += c.encode_utf8(&mut buf[len..]).len();
                }
                counts[(fnv1a64(&buf[..len]) % self.buckets as u64) as usize] += 1;
            }
        }
        out.extend(counts.into_iter().map(|c| {
            if windows == 0 {
                0.0
            } else {
                c as f64 / windows as f64
            }
        }));

        FeatureVector::new(out.into_iter().map(T::of).collect())
            .expect("surface features are finite and non-empty")
    }
}

/// Anything that can produce a precomputed embedding for a request.
pub trait EmbeddingSource<T>: Send + Sync {
    fn embedding(&self, id: &str, source: &str) -> Result<Vec<T>>;
}

/// In-memory store of precomputed vectors keyed by request id.
///
/// Text form: one record per line, `id<TAB>v1,v2,...,vn`. Blank lines are
/// skipped.
#[derive(Debug, Clone, Default)]
pub struct VectorStore<T> {
    vectors: HashMap<String, Vec<T>>,
}

impl<T: Scalar> VectorStore<T> {
    pub fn new() -> Self {
        Self {
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<T>) {
        self.vectors.insert(id.into(), v);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut store = Self::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, rest) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("line {}: missing tab separator", lineno + 1))
            })?;
            let v = rest
                .split(',')
                .map(|s| {
                    s.trim().parse::<T>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        Error::Format(format!("line {}: bad number {s:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<T>>>()?;
            store.insert(id, v);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}

impl<T: Scalar> EmbeddingSource<T> for VectorStore<T> {
    fn embedding(&self, id: &str, _source: &str) -> Result<Vec<T>> {
        self.get(id)
            .map(<[T]>::to_vec)
            .ok_or_else(|| Error::Lookup(id.to_string()))
    }
}

/// Memoizes another embedding source by request id.
pub struct CachedEmbeddings<T, S> {
    inner: S,
    cache: Mutex<HashMap<String, Vec<T>>>,
}

impl<T: Scalar, S: EmbeddingSource<T>> CachedEmbeddings<T, S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<T: Scalar, S: EmbeddingSource<T>> EmbeddingSource<T> for CachedEmbeddings<T, S> {
    fn embedding(&self, id: &str, source: &str) -> Result<Vec<T>> {
        if let Some(v) = self.cache.lock().unwrap().get(id) {
            return Ok(v.clone());
        }
        let v = self.inner.embedding(id, source)?;
        self.cache.lock().unwrap().insert(id.to_string(), v.clone());
        Ok(v)
    }
}

/// Looks up the precomputed vector for `id`, checks its dimension, and
/// appends it after `surface` when given.
pub fn ingest_precomputed<T: Scalar, S: EmbeddingSource<T> + ?Sized>(
    id: &str,
    source: &str,
    store: &S,
    embedding_dim: usize,
    surface: Option<FeatureVector<T>>,
) -> Result<FeatureVector<T>> {
    let emb = store.embedding(id, source)?;
    if emb.len() != embedding_dim {
        return Err(Error::Format(format!(
            "embedding for {id:?} has dimension {}, expected {embedding_dim}",
            emb.len()
        )));
    }
    let mut values = surface.map(FeatureVector::into_values).unwrap_or_default();
    values.extend(emb);
    FeatureVector::new(values)
}

/// Surface features and/or precomputed embeddings, in that order.
pub struct FeaturePipeline<T> {
    surface: Option<SurfaceExtractor>,
    embeddings: Option<(Box<dyn EmbeddingSource<T>>, usize)>,
}

impl<T: Scalar> FeaturePipeline<T> {
    pub fn surface_only(extractor: SurfaceExtractor) -> Self {
        Self {
            surface: Some(extractor),
            embeddings: None,
        }
    }

    pub fn with_embeddings(mut self, source: Box<dyn EmbeddingSource<T>>, dim: usize) -> Self {
        self.embeddings = Some((source, dim));
        self
    }

    pub fn without_surface(mut self) -> Self {
        self.surface = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.surface.map_or(0, |s| s.dim()) + self.embeddings.as_ref().map_or(0, |e| e.1)
    }

    pub fn features(&self, id: &str, source: &str) -> Result<FeatureVector<T>> {
        let surface = self.surface.map(|s| s.extract::<T>(source));
        match &self.embeddings {
            Some((store, dim)) => ingest_precomputed(id, source, store.as_ref(), *dim, surface),
            None => surface.ok_or_else(|| Error::Config("feature pipeline has no inputs".into())),
        }
    }
}

const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-dimension running mean and variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    count: u64,
    mean: Vec<T>,
    m2: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![T::zero(); dim],
            m2: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// Population variance per dimension; zero before two observations.
    pub fn variance(&self) -> Vec<T> {
        if self.count == 0 {
            return vec![T::zero(); self.dim()];
        }
        let n = T::of(self.count as f64);
        self.m2.iter().map(|&m| (m / n).max(T::zero())).collect()
    }

    fn check(&self, fv: &FeatureVector<T>) -> Result<()> {
        if fv.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: fv.dim(),
            });
        }
        Ok(())
    }

    pub fn update(&mut self, fv: &FeatureVector<T>) -> Result<()> {
        self.check(fv)?;
        self.count += 1;
        let n = T::of(self.count as f64);
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(fv.values()) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    /// Z-scores with the current snapshot. Dimensions whose variance is
    /// below 1e-12 pass through unchanged.
    pub fn transform(&self, fv: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        self.check(fv)?;
        let var = self.variance();
        let out = fv
            .values()
            .iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((&x, &m), &v)| {
                if v.as_f64() < VARIANCE_FLOOR {
                    x
                } else {
                    (x - m) / v.sqrt()
                }
            })
            .collect();
        FeatureVector::new(out)
    }

    pub fn inverse(&self, z: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        self.check(z)?;
        let var = self.variance();
        let out = z
            .values()
            .iter()
            .zip(&self.mean)
            .zip(&var)
            .map(|((&x, &m), &v)| {
                if v.as_f64() < VARIANCE_FLOOR {
                    x
                } else {
                    x * v.sqrt() + m
                }
            })
            .collect();
        FeatureVector::new(out)
    }

    /// Standardizes `fv` against the statistics seen so far, then folds it in.
    pub fn standardize(&mut self, fv: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        let z = self.transform(fv)?;
        self.update(fv)?;
        Ok(z)
    }
}

/// Functional form of [`RunningStats::standardize`].
pub fn standardize<T: Scalar>(
    fv: &FeatureVector<T>,
    mut stats: RunningStats<T>,
) -> Result<(FeatureVector<T>, RunningStats<T>)> {
    let z = stats.standardize(fv)?;
    Ok((z, stats))
}

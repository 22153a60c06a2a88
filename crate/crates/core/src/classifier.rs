//! Online multiclass learner mapping request features to engine probabilities.
//!
//! [`Learner`] is the seam the router and queue depend on; any model that
//! yields a probability vector and accepts single-example updates fits.
//! [`OnlineSoftmaxModel`] is the reference implementation: multinomial
//! logistic regression trained by one SGD step per labelled example.

use std::io::{BufRead, Write};

use crate::domain::{ClassProbabilities, FeatureVector, LrSchedule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub trait Learner<T: Scalar> {
    fn classes(&self) -> usize;
    fn dim(&self) -> usize;
    fn predict_proba(&self, fv: &FeatureVector<T>) -> Result<ClassProbabilities<T>>;
    fn learn(&mut self, fv: &FeatureVector<T>, label: usize) -> Result<()>;
    /// Monotone counter bumped on every update; cached scores are tagged with it.
    fn version(&self) -> u64;
}

/// Shannon entropy of `p` divided by `ln K`, so that the uniform
/// distribution scores 1 and a one-hot vector scores 0. `0 ln 0 = 0`.
pub fn normalized_entropy<T: Scalar>(p: &ClassProbabilities<T>) -> T {
    let k = p.len();
    if k < 2 {
        return T::zero();
    }
    // Equal mass on m engines has entropy ln m exactly; this keeps the
    // uniform and one-hot cases free of rounding.
    let support: Vec<T> = p.as_slice().iter().copied().filter(|&pi| pi > T::zero()).collect();
    if support.iter().all(|&pi| pi == support[0]) {
        return T::of(support.len() as f64).ln() / T::of(k as f64).ln();
    }
    let h = p
        .as_slice()
        .iter()
        .filter(|&&pi| pi > T::zero())
        .fold(T::zero(), |acc, &pi| acc - pi * pi.ln());
    (h / T::of(k as f64).ln()).max(T::zero()).min(T::one())
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = out.iter().copied().fold(T::zero(), |a, b| a + b);
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Gradient of `-ln p_label + (l2 / 2) * ||W||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    /// Row-major `classes x dim`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSoftmaxModel<T> {
    classes: usize,
    dim: usize,
    weights: Vec<T>,
    bias: Vec<T>,
    learning_rate: T,
    l2: T,
    schedule: LrSchedule,
    updates_seen: u64,
}

impl<T: Scalar> OnlineSoftmaxModel<T> {
    /// Zero-initialized model; predicts the uniform distribution until trained.
    pub fn new(classes: usize, dim: usize, learning_rate: f64, l2: f64) -> Self {
        assert!(classes > 0 && dim > 0, "model needs at least one class and one feature");
        Self {
            classes,
            dim,
            weights: vec![T::zero(); classes * dim],
            bias: vec![T::zero(); classes],
            learning_rate: T::of(learning_rate),
            l2: T::of(l2),
            schedule: LrSchedule::Constant,
            updates_seen: 0,
        }
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn l2(&self) -> T {
        self.l2
    }

    pub fn updates_seen(&self) -> u64 {
        self.updates_seen
    }

    fn check_dim(&self, fv: &FeatureVector<T>) -> Result<()> {
        if fv.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: fv.dim(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, fv: &FeatureVector<T>) -> Result<Vec<T>> {
        self.check_dim(fv)?;
        let x = fv.values();
        Ok(self
            .weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect())
    }

    pub fn gradient(&self, fv: &FeatureVector<T>, label: usize) -> Result<Gradient<T>> {
        if label >= self.classes {
            return Err(Error::Label {
                label,
                classes: self.classes,
            });
        }
        let p = softmax(&self.logits(fv)?);
        let x = fv.values();
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut bias = Vec::with_capacity(self.classes);
        for (j, row) in self.weights.chunks_exact(self.dim).enumerate() {
            let g = if j == label { p[j] - T::one() } else { p[j] };
            bias.push(g);
            weights.extend(row.iter().zip(x).map(|(&w, &xi)| g * xi + self.l2 * w));
        }
        Ok(Gradient { weights, bias })
    }

    fn step_size(&self) -> T {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::InvSqrt => {
                self.learning_rate / T::of((1 + self.updates_seen) as f64).sqrt()
            }
        }
    }

    /// Writes the model as text: a header line, the bias, then one line per
    /// class row of weights. Values use the shortest representation that
    /// parses back to the same bits.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let schedule = match self.schedule {
            LrSchedule::Constant => "constant",
            LrSchedule::InvSqrt => "inv_sqrt",
        };
        writeln!(
            w,
            "softmax-model v1 classes={} dim={} updates={} learning_rate={} l2={} schedule={}",
            self.classes, self.dim, self.updates_seen, self.learning_rate, self.l2, schedule
        )?;
        write_row(&mut w, &self.bias)?;
        for row in self.weights.chunks_exact(self.dim) {
            write_row(&mut w, row)?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty checkpoint".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("softmax-model") || fields.next() != Some("v1") {
            return Err(Error::Format("not a softmax-model v1 checkpoint".into()));
        }
        let mut get = |key: &str| -> Result<String> {
            let f = fields
                .next()
                .ok_or_else(|| Error::Format(format!("missing header field {key}")))?;
            f.strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("expected {key}=..., got {f:?}")))
        };
        let classes: usize = parse_field(&get("classes")?)?;
        let dim: usize = parse_field(&get("dim")?)?;
        let updates_seen: u64 = parse_field(&get("updates")?)?;
        let learning_rate: T = parse_field(&get("learning_rate")?)?;
        let l2: T = parse_field(&get("l2")?)?;
        let schedule = match get("schedule")?.as_str() {
            "constant" => LrSchedule::Constant,
            "inv_sqrt" => LrSchedule::InvSqrt,
            s => return Err(Error::Format(format!("unknown schedule {s:?}"))),
        };
        let mut read_row = |n: usize| -> Result<Vec<T>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("truncated checkpoint".into()))??;
            let row = line
                .split_whitespace()
                .map(parse_field)
                .collect::<Result<Vec<T>>>()?;
            if row.len() != n {
                return Err(Error::Format(format!("row has {} values, expected {n}", row.len())));
            }
            Ok(row)
        };
        let bias = read_row(classes)?;
        let mut weights = Vec::with_capacity(classes * dim);
        for _ in 0..classes {
            weights.extend(read_row(dim)?);
        }
        Ok(Self {
            classes,
            dim,
            weights,
            bias,
            learning_rate,
            l2,
            schedule,
            updates_seen,
        })
    }
}

fn write_row<W: Write, T: Scalar>(w: &mut W, row: &[T]) -> Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
        first = false;
    }
    w.write_all(b"\n")?;
    Ok(())
}

fn parse_field<V: std::str::FromStr>(s: &str) -> Result<V> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse {s:?}")))
}

impl<T: Scalar> Learner<T> for OnlineSoftmaxModel<T> {
    fn classes(&self) -> usize {
        self.classes
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_proba(&self, fv: &FeatureVector<T>) -> Result<ClassProbabilities<T>> {
        ClassProbabilities::new(softmax(&self.logits(fv)?))
    }

    fn learn(&mut self, fv: &FeatureVector<T>, label: usize) -> Result<()> {
        let grad = self.gradient(fv, label)?;
        let lr = self.step_size();
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * *g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * *g;
        }
        self.updates_seen += 1;
        Ok(())
    }

    fn version(&self) -> u64 {
        self.updates_seen
    }
}

//! L2-regularised multinomial logistic regression on frozen embeddings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fingerprint, EvalError, EvalReport, Result};
use crate::graph::Graph;
use crate::splits::SplitSpec;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2_grid: Vec<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            learning_rate: 0.01,
            epochs: 300,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l2_grid.is_empty() || self.l2_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(EvalError::Config("l2 grid must be non-empty and non-negative".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.epochs == 0 {
            return Err(EvalError::Config("probe learning rate and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dimension zero mean, unit variance (constant columns are centred only).
pub fn standardize(h: &Tensor) -> Tensor {
    let (n, d) = h.shape();
    let mut out = h.clone();
    for c in 0..d {
        let mean = (0..n).map(|r| h.get(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (h.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        for r in 0..n {
            out.set(r, c, (h.get(r, c) - mean) * scale);
        }
    }
    out
}

/// A fitted softmax classifier.
#[derive(Clone, Debug)]
pub struct Probe {
    /// `D × C`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub l2: f64,
}

impl Probe {
    fn logits(&self, x: &Tensor) -> Tensor {
        let mut z = x.matmul(&self.weight).expect("probe shape");
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let z = self.logits(x);
        (0..z.rows())
            .map(|r| {
                let row = z.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect()
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / truth.len() as f64
}

/// Full-batch gradient descent on mean cross-entropy plus `l2/2·‖W‖²`.
fn fit_one(x: &Tensor, y: &[usize], classes: usize, l2: f64, cfg: &ProbeConfig) -> Probe {
    let (n, d) = x.shape();
    let mut probe = Probe {
        weight: Tensor::zeros(d, classes),
        bias: vec![0.0; classes],
        l2,
    };
    let xt = x.transpose();
    for _ in 0..cfg.epochs {
        let mut z = probe.logits(x);
        for (r, &label) in y.iter().enumerate() {
            let row = z.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total * n as f64;
            }
            row[label] -= 1.0 / n as f64;
        }
        // z now holds (P - Y) / n
        let gw = xt.matmul(&z).expect("probe shape");
        for (w, g) in probe.weight.data_mut().iter_mut().zip(gw.data()) {
            *w -= cfg.learning_rate * (g + l2 * *w);
        }
        for c in 0..classes {
            let gb: f64 = (0..n).map(|r| z.get(r, c)).sum();
            probe.bias[c] -= cfg.learning_rate * gb;
        }
    }
    probe
}

/// Fits one probe per grid value and keeps the best on validation
/// (ties go to the earlier grid entry). Sees only train and validation data.
pub fn fit_probe(
    train_x: &Tensor,
    train_y: &[usize],
    val_x: &Tensor,
    val_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<Probe> {
    cfg.validate()?;
    if train_y.is_empty() {
        return Err(EvalError::EmptySet("training"));
    }
    let first = train_y[0];
    if train_y.iter().all(|&c| c == first) {
        return Err(EvalError::SingleClass);
    }
    let mut best: Option<(f64, Probe)> = None;
    for &l2 in &cfg.l2_grid {
        let probe = fit_one(train_x, train_y, classes, l2, cfg);
        let score = if val_y.is_empty() {
            0.0
        } else {
            accuracy(&probe.predict(val_x), val_y)
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, probe));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

fn rows(h: &Tensor, nodes: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(nodes.len() * h.cols());
    for &n in nodes {
        data.extend_from_slice(h.row(n));
    }
    Tensor::from_vec(nodes.len(), h.cols(), data).expect("row copy")
}

fn labels(g: &Graph, nodes: &[usize]) -> Result<Vec<usize>> {
    nodes.iter().map(|&n| g.label(n).ok_or(EvalError::Unlabeled(n))).collect()
}

fn evaluate_split(h: &Tensor, g: &Graph, split: &SplitSpec, cfg: &ProbeConfig) -> Result<(f64, f64)> {
    if split.test_nodes.is_empty() {
        return Err(EvalError::EmptySet("test"));
    }
    let probe = fit_probe(
        &rows(h, &split.train_nodes),
        &labels(g, &split.train_nodes)?,
        &rows(h, &split.val_nodes),
        &labels(g, &split.val_nodes)?,
        g.num_classes(),
        cfg,
    )?;
    let pred = probe.predict(&rows(h, &split.test_nodes));
    Ok((accuracy(&pred, &labels(g, &split.test_nodes)?), probe.l2))
}

/// Test accuracy (percent) of a linear probe on each split.
pub fn node_classification(h: &Tensor, g: &Graph, splits: &[SplitSpec], cfg: &ProbeConfig) -> Result<EvalReport> {
    node_classification_with_workers(h, g, splits, cfg, 1)
}

/// As [`node_classification`], evaluating up to `workers` splits at once.
/// Results are identical for any worker count.
pub fn node_classification_with_workers(
    h: &Tensor,
    g: &Graph,
    splits: &[SplitSpec],
    cfg: &ProbeConfig,
    workers: usize,
) -> Result<EvalReport> {
    cfg.validate()?;
    if h.rows() != g.num_nodes() {
        return Err(EvalError::Shape {
            rows: h.rows(),
            nodes: g.num_nodes(),
        });
    }
    if splits.is_empty() {
        return Err(EvalError::EmptySet("split"));
    }
    let x = if cfg.standardize { standardize(h) } else { h.clone() };
    let results: Vec<Result<(f64, f64)>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        pool.install(|| splits.par_iter().map(|s| evaluate_split(&x, g, s, cfg)).collect())
    } else {
        splits.iter().map(|s| evaluate_split(&x, g, s, cfg)).collect()
    };
    let mut acc = Vec::with_capacity(splits.len());
    let mut l2 = Vec::with_capacity(splits.len());
    for r in results {
        let (a, l) = r?;
        acc.push(a);
        l2.push(l);
    }
    let fp = fingerprint(&(cfg, splits.len(), splits[0].labels_per_class, splits[0].split_seed));
    let mut report = EvalReport::new("node_classification", g.name(), fp, acc);
    report.selected_l2 = l2;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::splits::{make_node_splits_with, ValidationSize};

    /// Box-Muller standard normal.
    fn normal(rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = rng.gen();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }

    fn blobs(n_per: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2 {
            let centre = if class == 0 { -4.0 } else { 4.0 };
            for _ in 0..n_per {
                rows.push(vec![centre + normal(&mut rng), normal(&mut rng), centre + normal(&mut rng)]);
                labels.push(Some(class));
            }
        }
        let n = rows.len();
        Graph::new("blobs", n, [(0, 1)], Tensor::from_rows(&rows).unwrap(), Some(labels), 2).unwrap()
    }

    #[test]
    fn separable_blobs_are_classified_perfectly() {
        let g = blobs(100, 1);
        let splits = make_node_splits_with(&g, 10, 3, 0, ValidationSize::Total(40)).unwrap();
        let r = node_classification(g.features(), &g, &splits, &ProbeConfig::default()).unwrap();
        assert_eq!(r.per_split, vec![100.0; 3]);
        assert_eq!(r.selected_l2.len(), 3);
        assert!(r.is_consistent());
    }

    #[test]
    fn one_hot_label_features_give_full_accuracy() {
        let n = 300;
        let classes = 5;
        let labels: Vec<Option<usize>> = (0..n).map(|i| Some((i * 7) % classes)).collect();
        let mut x = Tensor::zeros(n, classes);
        for (i, l) in labels.iter().enumerate() {
            x.set(i, l.unwrap(), 1.0);
        }
        let g = Graph::new("leak", n, [(0, 1)], x.clone(), Some(labels), classes).unwrap();
        let splits = make_node_splits_with(&g, 2, 2, 4, ValidationSize::Total(50)).unwrap();
        let r = node_classification(&x, &g, &splits, &ProbeConfig::default()).unwrap();
        assert_eq!(r.mean, 100.0);
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let g = blobs(60, 2);
        let splits = make_node_splits_with(&g, 3, 4, 1, ValidationSize::Total(20)).unwrap();
        let noisy = g.features().map(|v| v * 0.1);
        let a = node_classification_with_workers(&noisy, &g, &splits, &ProbeConfig::default(), 1).unwrap();
        let b = node_classification_with_workers(&noisy, &g, &splits, &ProbeConfig::default(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let r = fit_probe(&x, &[1, 1], &x, &[1, 1], 2, &ProbeConfig::default());
        assert!(matches!(r, Err(EvalError::SingleClass)));
        let bad = ProbeConfig {
            l2_grid: vec![],
            ..ProbeConfig::default()
        };
        assert!(matches!(fit_probe(&x, &[0, 1], &x, &[0, 1], 2, &bad), Err(EvalError::Config(_))));
    }

    #[test]
    fn standardized_columns_have_unit_variance() {
        let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let s = standardize(&x);
        let col: Vec<f64> = (0..3).map(|r| s.get(r, 0)).collect();
        let (m, sd) = crate::eval::mean_std(&col);
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        assert_eq!((0..3).map(|r| s.get(r, 1)).collect::<Vec<_>>(), vec![0.0; 3]);
    }
}

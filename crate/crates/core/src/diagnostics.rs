//! Numerical self-checks shared by the command line and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::contrastive::{edge_contrastive_loss, loss_value, LossConfig, LossError, LossPath};
use crate::edges::{sample_edges, AnchorOrientation, EdgeError, EdgeSet};
use crate::encoder::{self, encode_on_tape, init_params, AttentionLayout, EncoderParams};
use crate::graph::Graph;
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Tensor};

/// A small random graph with uniform features in `[-1, 1]` and random
/// encoder parameters. Every instance has at least one edge.
pub fn random_instance(n: usize, features: usize, hidden: usize, heads: usize, seed: u64) -> (Graph, EncoderParams) {
    assert!(n >= 2, "need at least two nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    let x: Vec<f64> = (0..n * features).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(n, features, x).expect("sized");
    let g = Graph::new(format!("random-{seed}"), n, edges, x, None, 1).expect("valid random graph");
    let params = init_params(features, hidden, heads, rng.gen());
    (g, params)
}

fn flatten(params: &EncoderParams) -> Vec<Tensor> {
    params
        .heads
        .iter()
        .flat_map(|h| [h.weight.clone(), h.attention.clone()])
        .collect()
}

/// Finite-difference check of the full loss with respect to every
/// attention and projection parameter.
pub fn check_model_gradient(
    g: &Graph,
    params: &EncoderParams,
    loss: &LossConfig,
    path: LossPath,
    check: &GradCheckConfig,
) -> Result<GradCheckReport, LossError> {
    let layout = AttentionLayout::new(g);
    let edges = EdgeSet::from_graph(g, AnchorOrientation::Both);
    // surfaces config and anchor errors before the closure runs
    let h0 = encoder::encode(g, params).map_err(LossError::Tensor)?;
    loss_value(&h0.h, &edges, loss)?;
    let hidden = params.hidden;
    let report = grad_check(
        &flatten(params),
        |tape, vars| {
            let x = tape.constant(g.features().clone());
            let heads: Vec<_> = vars
                .chunks(2)
                .map(|c| encoder::HeadVars {
                    weight: c[0],
                    attention: c[1],
                })
                .collect();
            let h = encode_on_tape(tape, x, &heads, &layout, hidden, None)?;
            edge_contrastive_loss(tape, h, None, &edges, loss, path)
                .map(|(v, _)| v)
                .map_err(|e| match e {
                    LossError::Tensor(t) => t,
                    other => unreachable!("validated before checking: {other}"),
                })
        },
        check,
    )?;
    Ok(report)
}

/// Kept-edge counts of repeated Bernoulli edge sampling.
#[derive(Clone, Debug, Serialize)]
pub struct SamplingStats {
    pub p_s: f64,
    pub trials: usize,
    pub undirected_edges: usize,
    pub expected: f64,
    /// Binomial standard deviation of a single trial.
    pub trial_sd: f64,
    pub mean: f64,
    /// `expected ± 3·trial_sd/√trials`, the band for the mean.
    pub band: (f64, f64),
    pub within_band: bool,
    pub all_symmetric: bool,
    pub counts: Vec<usize>,
}

/// Samples with seeds `seed_base..seed_base + trials`.
pub fn sampling_stats(g: &Graph, p_s: f64, trials: usize, seed_base: u64) -> Result<SamplingStats, EdgeError> {
    let m = g.num_undirected_edges();
    let mut counts = Vec::with_capacity(trials);
    let mut all_symmetric = true;
    for t in 0..trials as u64 {
        let s = sample_edges(g, p_s, seed_base + t, AnchorOrientation::Both)?;
        all_symmetric &= s.edges.is_symmetric();
        counts.push(s.kept());
    }
    let expected = p_s * m as f64;
    let trial_sd = (m as f64 * p_s * (1.0 - p_s)).sqrt();
    let mean = counts.iter().sum::<usize>() as f64 / trials.max(1) as f64;
    let half = 3.0 * trial_sd / (trials.max(1) as f64).sqrt();
    let band = (expected - half, expected + half);
    Ok(SamplingStats {
        p_s,
        trials,
        undirected_edges: m,
        expected,
        trial_sd,
        mean,
        band,
        within_band: trials > 0 && mean >= band.0 && mean <= band.1,
        all_symmetric,
        counts,
    })
}

impl SamplingStats {
    /// Text histogram of the kept counts in `bins` equal-width buckets.
    pub fn histogram(&self, bins: usize) -> String {
        let (Some(&lo), Some(&hi)) = (self.counts.iter().min(), self.counts.iter().max()) else {
            return String::new();
        };
        let bins = bins.max(1);
        let width = ((hi - lo) as f64 / bins as f64).max(1.0);
        let mut hist = vec![0usize; bins];
        for &c in &self.counts {
            let b = (((c - lo) as f64 / width) as usize).min(bins - 1);
            hist[b] += 1;
        }
        let mut out = String::new();
        for (b, n) in hist.iter().enumerate() {
            let from = lo as f64 + b as f64 * width;
            out.push_str(&format!("{:>9.1} | {:<4} {}\n", from, n, "#".repeat(*n)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_instances_are_reproducible() {
        let (a, pa) = random_instance(6, 3, 2, 2, 9);
        let (b, pb) = random_instance(6, 3, 2, 2, 9);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.num_undirected_edges() >= 1);
    }

    #[test]
    fn model_gradient_passes_on_both_paths() {
        let (g, p) = random_instance(6, 3, 3, 2, 0);
        for path in [LossPath::Gram, LossPath::Naive] {
            let r = check_model_gradient(&g, &p, &LossConfig::new(0.5), path, &GradCheckConfig::default()).unwrap();
            assert!(r.passed, "{path:?}: {}", r.max_rel_err);
        }
    }

    #[test]
    fn sampling_stats_on_a_ring() {
        let n = 400;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = Graph::new("ring", n, edges, Tensor::zeros(n, 1), None, 1).unwrap();
        let s = sampling_stats(&g, 0.5, 100, 0).unwrap();
        assert_eq!(s.expected, 200.0);
        assert!(s.within_band, "{} not in {:?}", s.mean, s.band);
        assert!(s.all_symmetric);
        assert_eq!(s.histogram(5).lines().count(), 5);
        let full = sampling_stats(&g, 1.0, 3, 0).unwrap();
        assert_eq!(full.counts, vec![400; 3]);
    }
}

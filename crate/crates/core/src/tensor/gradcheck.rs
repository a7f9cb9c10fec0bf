use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::{Result, Tensor, TensorError};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero compare on an absolute scale.
    pub abs_floor: f64,
    /// Check at most this many random coordinates per leaf (`None` = all).
    pub max_coords_per_leaf: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_coords_per_leaf: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (leaf, flat coordinate) where `max_rel_err` was observed.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn eval<F>(f: &F, leaves: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Compares reverse-mode gradients of the scalar program `f` at `leaves`
/// against central finite differences.
pub fn grad_check<F>(leaves: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let (rows, cols) = tape.value(out).shape();
    if (rows, cols) != (1, 1) {
        return Err(TensorError::NotScalar { rows, cols });
    }
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor> = leaves.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut coords_checked = 0;

    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every leaf has a gradient");
        let n = leaves[li].len();
        let coords: Vec<usize> = match cfg.max_coords_per_leaf {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let base = leaves[li].data()[c];
            work[li].data_mut()[c] = base + cfg.epsilon;
            let plus = eval(&f, &work)?;
            work[li].data_mut()[c] = base - cfg.epsilon;
            let minus = eval(&f, &work)?;
            work[li].data_mut()[c] = base;

            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = analytic.data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            coords_checked += 1;
            if rel > max_rel_err || worst.is_none() {
                max_rel_err = max_rel_err.max(rel);
                worst = Some((li, c));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst,
        coords_checked,
        tolerance: cfg.tolerance,
        passed: max_rel_err < cfg.tolerance,
    })
}

//! Finite-difference verification of reverse-mode gradients.
//!
//! The caller supplies named parameter blocks and a builder closure that
//! reconstructs the scalar loss graph from leaves created out of those
//! blocks. Analytic gradients come from one backward sweep; each checked
//! coordinate is then perturbed by `±h` and the loss re-evaluated, and the
//! central difference is compared against the analytic value.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{Graph, NodeId, Shape};
use crate::error::Result;

/// Central-difference step. Small enough for curvature, large enough that
/// `f64` round-off stays well below the comparison tolerance.
pub const FD_STEP: f64 = 1e-5;

/// Smaller steps tried for coordinates that fail at `FD_STEP`. Losses with
/// piecewise-linear activations are only piecewise-smooth: when a kink
/// falls inside the central-difference interval the secant mixes two
/// branches and disagrees with the analytic gradient even though the
/// gradient is correct. That artifact scales away with the step — once the
/// interval no longer straddles the kink the secant converges to the
/// branch derivative — whereas a genuine gradient defect is
/// step-independent and keeps failing at every rung.
const REFINE_STEPS: [f64; 6] = [3e-6, 1e-6, 3e-7, 1e-7, 1e-8, 1e-9];

/// One named parameter block to differentiate with respect to.
pub struct CheckParam {
    pub name: String,
    pub shape: Shape,
    pub init: Vec<f64>,
}

impl CheckParam {
    pub fn new(name: &str, shape: Shape, init: Vec<f64>) -> CheckParam {
        assert_eq!(shape.len(), init.len(), "check param length mismatch");
        CheckParam {
            name: name.to_string(),
            shape,
            init,
        }
    }

    pub fn row(name: &str, init: &[f64]) -> CheckParam {
        CheckParam::new(name, Shape::new(1, init.len()), init.to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub param: String,
    /// Worst relative error over the checked coordinates.
    pub max_rel_err: f64,
    /// Coordinates actually compared.
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
    pub tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Relative error with a floor so near-zero gradient pairs are compared
/// absolutely at the floor's scale rather than amplifying round-off.
pub fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_floored(a, b, 1e-3)
}

/// `rel_err` with an explicit floor. The check scales the floor with the
/// loss magnitude: central differences carry round-off of order
/// `ε·|f|/h`, so the resolvable gradient precision — and therefore the
/// scale at which two near-zero gradients can meaningfully disagree —
/// grows with `|f|`.
pub fn rel_err_floored(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences for every parameter block.
///
/// `coords_per_param` caps how many coordinates of each block are probed
/// (0 means all); subsets are drawn deterministically from `seed`. The
/// builder must be deterministic in the parameter values.
pub fn grad_check(
    params: &[CheckParam],
    build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    tol: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<CheckReport> {
    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves = make_leaves(&mut g, params, values)?;
        let root = build(&mut g, &leaves)?;
        Ok(g.scalar_value(root))
    };

    // Analytic pass.
    let base: Vec<Vec<f64>> = params.iter().map(|p| p.init.clone()).collect();
    let mut g = Graph::new();
    let leaves = make_leaves(&mut g, params, &base)?;
    let root = build(&mut g, &leaves)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|&l| g.grad_dense(l)).collect();
    let floor = 1e-3 * g.scalar_value(root).abs().max(1.0);

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let len = p.init.len();
        let coords: Vec<usize> = if coords_per_param == 0 || coords_per_param >= len {
            (0..len).collect()
        } else {
            let mut picked = sample(&mut rng, len, coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        let central = |pi: usize, c: usize, h: f64| -> Result<f64> {
            let mut values = base.clone();
            values[pi][c] += h;
            let fp = eval(&values)?;
            values[pi][c] = base[pi][c] - h;
            let fm = eval(&values)?;
            Ok((fp - fm) / (2.0 * h))
        };
        let mut max_rel = 0.0f64;
        for &c in &coords {
            let mut err = rel_err_floored(central(pi, c, FD_STEP)?, analytic[pi][c], floor);
            for &h in &REFINE_STEPS {
                if err < tol {
                    break;
                }
                err = err.min(rel_err_floored(central(pi, c, h)?, analytic[pi][c], floor));
            }
            max_rel = max_rel.max(err);
        }
        entries.push(CheckEntry {
            param: p.name.clone(),
            max_rel_err: max_rel,
            checked: coords.len(),
        });
    }
    Ok(CheckReport { entries, tol })
}

fn make_leaves(g: &mut Graph, params: &[CheckParam], values: &[Vec<f64>]) -> Result<Vec<NodeId>> {
    params
        .iter()
        .zip(values)
        .map(|(p, v)| g.leaf(p.shape, v.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        let params = vec![CheckParam::row("x", &[0.7, -1.3, 2.1])];
        let report = grad_check(
            &params,
            |g, leaves| {
                let sq = g.square(leaves[0])?;
                g.sum(sq)
            },
            1e-6,
            0,
            7,
        )
        .unwrap();
        assert!(report.passed(), "worst {}", report.worst());
    }

    #[test]
    fn rel_err_flags_real_discrepancies_and_forgives_roundoff() {
        assert!(rel_err(1.0, 1.01) > 1e-3);
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        // Both magnitudes under the floor: compared absolutely at floor scale.
        assert!(rel_err(1e-9, -1e-9) < 1e-5);
        assert!(rel_err(5.0, 5.0) == 0.0);
    }

    #[test]
    fn kink_inside_fd_interval_is_refined_away() {
        // relu has its kink 3e-6 from the base point: inside the default
        // central-difference interval (step 1e-5), so the first secant
        // mixes both branches, but smaller steps land on the right branch.
        let params = vec![CheckParam::row("x", &[3e-6])];
        let report = grad_check(
            &params,
            |g, leaves| {
                let r = g.relu(leaves[0])?;
                let s = g.scale(r, 2.0)?;
                g.sum(s)
            },
            1e-6,
            0,
            5,
        )
        .unwrap();
        assert!(report.passed(), "worst {}", report.worst());
    }

    #[test]
    fn sampled_subset_is_deterministic() {
        let params = vec![CheckParam::new(
            "w",
            Shape::new(4, 4),
            (0..16).map(|i| 0.1 * i as f64 - 0.8).collect(),
        )];
        let run = || {
            grad_check(
                &params,
                |g, leaves| {
                    let s = g.sin(leaves[0])?;
                    let sq = g.square(s)?;
                    g.mean(sq)
                },
                1e-6,
                5,
                99,
            )
            .unwrap()
            .entries[0]
                .max_rel_err
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}

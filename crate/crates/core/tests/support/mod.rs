//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod graphs;
pub mod injection;

use inod::autodiff::{Tape, Var};
use inod::{BinaryGrid, Tensor};
use rand::Rng;

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_grid<R: Rng>(h: usize, w: usize, p: f64, rng: &mut R) -> BinaryGrid {
    BinaryGrid::from_fn(h, w, |_, _| rng.random_bool(p))
}

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients near zero are
/// judged against FD round-off rather than their own tiny magnitude.
pub const FD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a relu kink.
    pub skipped: usize,
    pub worst: f64,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.worst = self.worst.max(other.worst);
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` records its inputs on the tape (in order) and returns the scalar
/// loss plus the leaf handles. At most `coords` coordinates are probed,
/// drawn uniformly over all inputs.
pub fn check_gradients<R, F>(inputs: &[Tensor<f64>], coords: usize, rng: &mut R, build: F) -> FdReport
where
    R: Rng,
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> (Var, Vec<Var>),
{
    let mut tape = Tape::new();
    let (loss, vars) = build(&mut tape, inputs);
    assert_eq!(vars.len(), inputs.len());
    let grads = tape.backward(loss).unwrap();
    let pattern = tape.activation_pattern();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.grad(&tape, v)).collect();

    let eval = |inputs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let (l, _) = build(&mut t, inputs);
        (t.value(l).data()[0], t.activation_pattern())
    };

    let total: usize = inputs.iter().map(|t| t.len()).sum();
    let picks: Vec<usize> = if total <= coords {
        (0..total).collect()
    } else {
        (0..coords).map(|_| rng.random_range(0..total)).collect()
    };

    let mut report = FdReport::default();
    let mut work = inputs.to_vec();
    for flat in picks {
        let (mut i, mut j) = (0, flat);
        while j >= work[i].len() {
            j -= work[i].len();
            i += 1;
        }
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + FD_STEP;
        let (fp, pp) = eval(&work);
        work[i].data_mut()[j] = orig - FD_STEP;
        let (fm, pm) = eval(&work);
        work[i].data_mut()[j] = orig;
        if pp != pattern || pm != pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i].data()[j], numeric);
        report.checked += 1;
        report.worst = report.worst.max(err);
    }
    report
}

/// Records `sum(weights * x)` so any tensor-valued op reduces to a scalar
/// with a non-trivial upstream gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var, weights: &Tensor<f64>) -> Var {
    let w = tape.constant(weights.clone());
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

/// Component ids by repeated flood fill from each unlabeled set cell in
/// raster order, using an explicit visited set and a queue.
pub fn flood_fill_labels(grid: &BinaryGrid) -> Vec<u32> {
    let (h, w) = grid.dims();
    let mut ids = vec![0u32; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !grid.cells()[start] || ids[start] != 0 {
            continue;
        }
        next += 1;
        let mut queue = std::collections::VecDeque::from([start]);
        ids[start] = next;
        while let Some(c) = queue.pop_front() {
            let (y, x) = (c / w, c % w);
            let mut nbrs = Vec::with_capacity(4);
            if y > 0 {
                nbrs.push(c - w);
            }
            if y + 1 < h {
                nbrs.push(c + w);
            }
            if x > 0 {
                nbrs.push(c - 1);
            }
            if x + 1 < w {
                nbrs.push(c + 1);
            }
            for n in nbrs {
                if grid.cells()[n] && ids[n] == 0 {
                    ids[n] = next;
                    queue.push_back(n);
                }
            }
        }
    }
    ids
}

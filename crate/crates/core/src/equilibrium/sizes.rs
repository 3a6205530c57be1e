//! Fixed points of the size map at fixed characteristics and parameters.
//!
//! Damped iteration alone only finds attracting fixed points, while some
//! equilibria (the asymmetric ones of the two-city line among them) repel
//! it. Each step therefore tries a Newton step on `f(m) - m` in the reduced
//! coordinates `m_1..m_{n-1}`, with a finite-difference Jacobian and a
//! backtracking line search, and falls back to the damped step
//! `m <- P[(1 - a) m + a f(m)]` when Newton makes no progress.

use nalgebra::{DMatrix, DVector};

use super::sup_distance;
use super::SolverConfig;
use crate::costs::CostModel;
use crate::geometry::project_capped_simplex;
use crate::measure::SampledMeasure;
use crate::partition::{size_map, NominalState};

const JACOBIAN_STEP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub(crate) struct SizeRun {
    pub m: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Residual within tolerance with every size above the final floor.
    pub converged: bool,
}

struct Evaluator<'a> {
    model: &'a CostModel,
    measure: &'a SampledMeasure,
    template: &'a NominalState,
}

impl Evaluator<'_> {
    fn residual(&self, m: &[f64]) -> (Vec<f64>, f64) {
        let (r, norm, _) = self.residual_starved(m);
        (r, norm)
    }

    /// Residual, its sup norm, and whether some community attracts nobody.
    fn residual_starved(&self, m: &[f64]) -> (Vec<f64>, f64, bool) {
        let f = size_map(self.model, self.measure, &self.template.with_sizes(m.to_vec()));
        let starved = f.iter().any(|&x| x <= 0.0);
        let r: Vec<f64> = f.iter().zip(m).map(|(a, b)| a - b).collect();
        let norm = r.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        (r, norm, starved)
    }

    fn newton_direction(&self, m: &[f64], r: &[f64]) -> Option<Vec<f64>> {
        let n = m.len();
        let last = n - 1;
        let mut jac = DMatrix::zeros(last, last);
        for b in 0..last {
            let h = JACOBIAN_STEP.min(0.25 * m[b].min(m[last]));
            let mut up = m.to_vec();
            up[b] += h;
            up[last] -= h;
            let mut down = m.to_vec();
            down[b] -= h;
            down[last] += h;
            let (ru, _) = self.residual(&up);
            let (rd, _) = self.residual(&down);
            for a in 0..last {
                jac[(a, b)] = (ru[a] - rd[a]) / (2.0 * h);
            }
        }
        let scale = jac.amax();
        let lu = jac.lu();
        let pivot = lu.u().diagonal().amin();
        if !(scale > 0.0 && pivot > 1e-13 * scale) {
            return None;
        }
        let du = lu.solve(&DVector::from_iterator(last, r[..last].iter().map(|x| -x)))?;
        let mut dm: Vec<f64> = du.iter().copied().collect();
        dm.push(-du.iter().sum::<f64>());
        Some(dm)
    }
}

pub(crate) fn solve_sizes(
    model: &CostModel,
    measure: &SampledMeasure,
    template: &NominalState,
    start: &[f64],
    config: &SolverConfig,
) -> SizeRun {
    let eval = Evaluator { model, measure, template };
    let n = start.len();
    let schedule = config.epsilon_schedule();
    let polish = 1e-3 * config.tolerance;
    let mut m = project_capped_simplex(start, schedule[0]);
    let mut iterations = 0;
    let (_, mut norm) = eval.residual(&m);
    if n == 1 {
        return SizeRun { m, residual: norm, iterations, converged: norm <= config.tolerance };
    }
    // a starved start only leads to an empty fixed point
    let guard = !config.allow_empty;
    if guard {
        let bary = vec![1.0 / n as f64; n];
        for _ in 0..20 {
            if !eval.residual_starved(&m).2 {
                break;
            }
            m = m.iter().zip(&bary).map(|(a, b)| 0.5 * (a + b)).collect();
        }
    }
    for &eps in &schedule {
        m = project_capped_simplex(&m, eps);
        let (mut r, mut current, mut starved) = eval.residual_starved(&m);
        let mut alpha = config.damping;
        while current > polish && iterations < config.max_iterations {
            iterations += 1;
            let mut accepted = None;
            if let Some(dm) = eval.newton_direction(&m, &r) {
                let mut t = 1.0;
                for _ in 0..30 {
                    let trial: Vec<f64> = m.iter().zip(&dm).map(|(a, d)| a + t * d).collect();
                    // near the floor the residual is bounded by the sizes
                    // themselves, so projected steps fake progress
                    if trial.iter().any(|&x| x < eps) {
                        t *= 0.5;
                        continue;
                    }
                    let (rt, nt, st) = eval.residual_starved(&trial);
                    if guard && st && !starved {
                        t *= 0.5;
                        continue;
                    }
                    if nt < (1.0 - 1e-4 * t) * current {
                        accepted = Some((trial, rt, nt, st));
                        break;
                    }
                    t *= 0.5;
                }
            }
            let (next, rn, nn, sn) = match accepted {
                Some(step) => step,
                None => {
                    let trial: Vec<f64> = m.iter().zip(&r).map(|(a, ri)| a + alpha * ri).collect();
                    let trial = project_capped_simplex(&trial, eps);
                    let (rt, nt, st) = eval.residual_starved(&trial);
                    if nt > current {
                        alpha = (0.5 * alpha).max(1.0 / 1024.0);
                    }
                    (trial, rt, nt, st)
                }
            };
            let moved = sup_distance(&next, &m);
            m = next;
            r = rn;
            current = nn;
            starved = sn;
            if moved < 1e-15 {
                break;
            }
        }
        norm = current;
        if norm <= config.tolerance && m.iter().all(|&x| x > eps) {
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
    }
    let converged = norm <= config.tolerance && m.iter().all(|&x| x > config.epsilon_min);
    SizeRun { m, residual: norm, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid_measure, Population, TypeSpace};

    #[test]
    fn newton_reaches_repelling_fixed_point() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 10_000).unwrap();
        let model = CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.1, 1.0);
        let run = solve_sizes(&model, &mu, &NominalState::barycenter(2, 1e-3), &[0.12, 0.88], &SolverConfig::default());
        assert!(run.converged);
        let m1 = (1.0 - 0.6f64.sqrt()) / 2.0;
        assert!((run.m[0] - m1).abs() < 1e-8, "{:?}", run.m);
    }
}

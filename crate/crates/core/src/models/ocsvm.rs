//! Linear one-class SVM trained by stochastic subgradient descent.
//!
//! Minimizes `½‖w‖² + (1/(νn)) Σ max(0, ρ − w·xᵢ) − ρ` with step size
//! `η_t = 1/t`. At the end of every epoch ρ is set to its exact minimizer for
//! the current `w`, the `⌈νn⌉`-th smallest training score.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcsvmParams {
    pub nu: f64,
    /// Passes over the training set.
    pub max_iterations: usize,
}

impl Default for OcsvmParams {
    fn default() -> Self {
        OcsvmParams {
            nu: 0.1,
            max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOcsvmModel {
    pub weights: Vec<f64>,
    pub rho: f64,
    pub nu: f64,
    pub max_iterations: usize,
    /// Objective at each epoch's averaged iterate.
    pub objective: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal objective at `(w, ρ)`.
pub fn ocsvm_objective(x: &Matrix, w: &[f64], rho: f64, nu: f64) -> f64 {
    let hinge: f64 = x.iter_rows().map(|r| (rho - dot(w, r)).max(0.0)).sum();
    0.5 * dot(w, w) + hinge / (nu * x.rows() as f64) - rho
}

/// Minimizer of the objective over ρ for fixed `w`.
pub fn optimal_rho(x: &Matrix, w: &[f64], nu: f64) -> f64 {
    let mut s: Vec<f64> = x.iter_rows().map(|r| dot(w, r)).collect();
    s.sort_by(f64::total_cmp);
    let k = ((nu * s.len() as f64 - 1e-9).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

impl LinearOcsvmModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) - self.rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcsvmDecision {
    pub margin: f64,
    pub anomalous: bool,
}

pub fn decision_ocsvm(model: &LinearOcsvmModel, x: &[f64]) -> Result<OcsvmDecision, ModelError> {
    if x.len() != model.weights.len() {
        return Err(ModelError::DimensionMismatch {
            expected: model.weights.len(),
            found: x.len(),
        });
    }
    let margin = model.margin(x);
    Ok(OcsvmDecision {
        margin,
        anomalous: margin < 0.0,
    })
}

pub fn train_ocsvm_sgd(
    x_clean: &Matrix,
    p: &OcsvmParams,
    seed: u64,
) -> Result<LinearOcsvmModel, ModelError> {
    if x_clean.is_empty() {
        return Err(ModelError::CorpusTooSmall {
            needed: 1,
            found: 0,
        });
    }
    if !(p.nu > 0.0 && p.nu <= 1.0) || p.max_iterations == 0 {
        return Err(ModelError::InvalidHyperparameter(format!(
            "nu {} must lie in (0, 1] and max_iterations must be positive",
            p.nu
        )));
    }
    let (n, d) = (x_clean.rows(), x_clean.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; d];
    let mut rho = 0.0;
    let mut t = 0usize;
    let mut objective = Vec::with_capacity(p.max_iterations);
    let inv_nu = 1.0 / p.nu;

    for _ in 0..p.max_iterations {
        order.shuffle(&mut rng);
        let mut w_sum = vec![0.0; d];
        let mut rho_sum = 0.0;
        for &i in &order {
            t += 1;
            let eta = 1.0 / t as f64;
            let xi = x_clean.row(i);
            let violated = dot(&w, xi) < rho;
            let shrink = 1.0 - eta;
            if violated {
                for (wj, xj) in w.iter_mut().zip(xi) {
                    *wj = shrink * *wj + eta * inv_nu * xj;
                }
                rho -= eta * (inv_nu - 1.0);
            } else {
                w.iter_mut().for_each(|wj| *wj *= shrink);
                rho += eta;
            }
            for (s, wj) in w_sum.iter_mut().zip(&w) {
                *s += wj;
            }
            rho_sum += rho;
        }
        let w_bar: Vec<f64> = w_sum.iter().map(|s| s / n as f64).collect();
        objective.push(ocsvm_objective(x_clean, &w_bar, rho_sum / n as f64, p.nu));
        rho = optimal_rho(x_clean, &w, p.nu);
    }
    Ok(LinearOcsvmModel {
        weights: w,
        rho,
        nu: p.nu,
        max_iterations: p.max_iterations,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn blob(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|_| [5.0 + gaussian(&mut rng), 5.0 + gaussian(&mut rng)])
            .collect();
        Matrix::from_rows(&rows)
    }

    /// Full-batch subgradient descent with the same step schedule.
    fn batch_solver(x: &Matrix, nu: f64, steps: usize) -> (Vec<f64>, f64) {
        let n = x.rows() as f64;
        let mut w = vec![0.0; x.cols()];
        let mut rho = 0.0;
        let (mut best_w, mut best_rho, mut best) = (w.clone(), rho, f64::INFINITY);
        for t in 1..=steps {
            let eta = 1.0 / t as f64;
            let mut gw = w.clone();
            let mut viol = 0.0;
            for r in x.iter_rows() {
                if dot(&w, r) < rho {
                    for (g, v) in gw.iter_mut().zip(r) {
                        *g -= v / (nu * n);
                    }
                    viol += 1.0;
                }
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= eta * g;
            }
            rho -= eta * (viol / (nu * n) - 1.0);
            let r = optimal_rho(x, &w, nu);
            let obj = ocsvm_objective(x, &w, r, nu);
            if obj < best {
                (best_w, best_rho, best) = (w.clone(), r, obj);
            }
        }
        (best_w, best_rho)
    }

    #[test]
    fn identical_points_are_normal() {
        let x = Matrix::from_rows(&vec![[1.5, -2.0, 0.5]; 40]);
        let m = train_ocsvm_sgd(&x, &OcsvmParams::default(), 3).unwrap();
        assert!(decision_ocsvm(&m, &[1.5, -2.0, 0.5]).unwrap().margin >= 0.0);
    }

    #[test]
    fn blob_outlier_agrees_with_batch_solver() {
        let x = blob(400, 5);
        let m = train_ocsvm_sgd(
            &x,
            &OcsvmParams {
                nu: 0.1,
                max_iterations: 30,
            },
            9,
        )
        .unwrap();
        let (bw, brho) = batch_solver(&x, 0.1, 3000);
        let mean = x.column_means();
        let outlier = [mean[0] - 10.0, mean[1] - 10.0];
        assert!(m.margin(&outlier) < 0.0);
        assert!(m.margin(&mean) > 0.0);
        assert!(dot(&bw, &outlier) - brho < 0.0);
        assert!(dot(&bw, &mean) - brho > 0.0);
        let cos = dot(&m.weights, &bw) / (dot(&m.weights, &m.weights) * dot(&bw, &bw)).sqrt();
        assert!(cos > 0.99, "{cos}");
        let flips = x
            .iter_rows()
            .filter(|r| (m.margin(r) < 0.0) != (dot(&bw, r) - brho < 0.0))
            .count();
        assert!(flips <= x.rows() / 50, "{flips}");
    }

    #[test]
    fn averaged_objective_settles() {
        let x = blob(300, 1);
        let m = train_ocsvm_sgd(
            &x,
            &OcsvmParams {
                nu: 0.1,
                max_iterations: 50,
            },
            2,
        )
        .unwrap();
        let burn = m.objective.len() / 10;
        for pair in m.objective[burn..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-3, "{:?}", pair);
        }
    }

    #[test]
    fn closed_form_margins() {
        let zero = LinearOcsvmModel {
            weights: vec![0.0, 0.0],
            rho: 0.0,
            nu: 0.1,
            max_iterations: 1,
            objective: vec![],
        };
        let d = decision_ocsvm(&zero, &[3.0, 4.0]).unwrap();
        assert_eq!(d.margin, 0.0);
        assert!(!d.anomalous);
        let e1 = LinearOcsvmModel {
            weights: vec![1.0, 0.0, 0.0],
            rho: 1.0,
            ..zero.clone()
        };
        assert_eq!(decision_ocsvm(&e1, &[2.0, 0.0, 0.0]).unwrap().margin, 1.0);
        assert!(decision_ocsvm(&e1, &[2.0]).is_err());
    }

    #[test]
    fn margins_match_dot_oracle() {
        let x = blob(50, 8);
        let m = train_ocsvm_sgd(&x, &OcsvmParams::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let v = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let oracle = m.weights[0] * v[0] + m.weights[1] * v[1] - m.rho;
            assert!((m.margin(&v) - oracle).abs() < 1e-12);
        }
    }
}

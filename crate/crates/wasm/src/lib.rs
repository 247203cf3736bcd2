//! WebAssembly bindings behind the static demo page in `www/`.
//!
//! Points are flat `[x0, y0, x1, y1, ...]` arrays in the unit square. Fields
//! are sampled on a `size × size` grid, row-major from the top-left corner.

use censorml::analysis::attribute_tree;
use censorml::matrix::Matrix;
use censorml::models::{
    train_gbdt, train_iforest, train_ocsvm_sgd, GbdtModel, GbdtParams, IForestParams,
    LinearOcsvmModel, ModelError, OcsvmParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("points must be (x, y) pairs")]
    OddCoordinates,
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("attribution failed: {0}")]
    Attribution(String),
}

fn to_js(e: DemoError) -> JsError {
    JsError::new(&e.to_string())
}

fn points(xy: &[f64]) -> Result<Matrix, DemoError> {
    if xy.len() % 2 != 0 {
        return Err(DemoError::OddCoordinates);
    }
    Ok(Matrix::from_vec(xy.len() / 2, 2, xy.to_vec()))
}

fn grid_points(size: usize) -> impl Iterator<Item = [f64; 2]> {
    let step = 1.0 / size.max(1) as f64;
    (0..size).flat_map(move |r| {
        (0..size).map(move |c| [(c as f64 + 0.5) * step, 1.0 - (r as f64 + 0.5) * step])
    })
}

const FOURIER_FEATURES: usize = 96;
const BANDWIDTH: f64 = 0.12;

/// Random Fourier features approximating a Gaussian kernel, so the linear
/// one-class SVM can enclose a cloud.
pub struct Lift {
    omega: Vec<[f64; 2]>,
    phase: Vec<f64>,
}

impl Lift {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || {
            let u: f64 = 1.0 - rng.random::<f64>();
            let v: f64 = rng.random();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos() / BANDWIDTH
        };
        let omega = (0..FOURIER_FEATURES)
            .map(|_| [normal(), normal()])
            .collect();
        let phase = (0..FOURIER_FEATURES)
            .map(|_| std::f64::consts::TAU * rng.random::<f64>())
            .collect();
        Lift { omega, phase }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let scale = (2.0 / FOURIER_FEATURES as f64).sqrt();
        self.omega
            .iter()
            .zip(&self.phase)
            .map(|(w, b)| scale * (w[0] * p[0] + w[1] * p[1] + b).cos())
            .collect()
    }

    fn matrix(&self, m: &Matrix) -> Matrix {
        let rows: Vec<Vec<f64>> = m.iter_rows().map(|r| self.apply(r)).collect();
        Matrix::from_rows(&rows)
    }
}

/// Isolation-forest scores and one-class SVM margins over the grid, both
/// fitted on the same points.
#[wasm_bindgen]
pub struct DetectorFields {
    size: usize,
    iforest: Vec<f64>,
    threshold: f64,
    ocsvm: Vec<f64>,
    iforest_flags: Vec<u8>,
    ocsvm_flags: Vec<u8>,
}

#[wasm_bindgen]
impl DetectorFields {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Anomaly scores in (0, 1].
    #[wasm_bindgen(getter)]
    pub fn iforest(&self) -> Vec<f64> {
        self.iforest.clone()
    }

    /// Scores above this are flagged.
    #[wasm_bindgen(getter)]
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Signed margins; negative is flagged.
    #[wasm_bindgen(getter)]
    pub fn ocsvm(&self) -> Vec<f64> {
        self.ocsvm.clone()
    }

    #[wasm_bindgen(getter, js_name = iforestFlags)]
    pub fn iforest_flags(&self) -> Vec<u8> {
        self.iforest_flags.clone()
    }

    #[wasm_bindgen(getter, js_name = ocsvmFlags)]
    pub fn ocsvm_flags(&self) -> Vec<u8> {
        self.ocsvm_flags.clone()
    }
}

pub fn detector_fields(
    xy: &[f64],
    size: usize,
    contamination: f64,
    nu: f64,
    seed: u64,
) -> Result<DetectorFields, DemoError> {
    let x = points(xy)?;
    let forest = train_iforest(
        &x,
        &IForestParams {
            n_estimators: 100,
            max_samples: x.rows().min(256),
            max_features: 1.0,
            contamination,
        },
        seed,
    )?;
    let lift = Lift::new(seed);
    let svm = train_ocsvm_sgd(
        &lift.matrix(&x),
        &OcsvmParams {
            nu,
            max_iterations: 30,
        },
        seed,
    )?;
    let grid: Vec<[f64; 2]> = grid_points(size).collect();
    Ok(DetectorFields {
        size,
        iforest: grid.iter().map(|p| forest.score(p)).collect(),
        threshold: forest.score_threshold,
        ocsvm: grid.iter().map(|p| svm.margin(&lift.apply(p))).collect(),
        iforest_flags: x
            .iter_rows()
            .map(|p| u8::from(forest.score(p) > forest.score_threshold))
            .collect(),
        ocsvm_flags: x
            .iter_rows()
            .map(|p| u8::from(svm.margin(&lift.apply(p)) < 0.0))
            .collect(),
    })
}

#[wasm_bindgen(js_name = detectorFields)]
pub fn detector_fields_js(
    xy: &[f64],
    size: usize,
    contamination: f64,
    nu: f64,
    seed: u32,
) -> Result<DetectorFields, JsError> {
    detector_fields(xy, size, contamination, nu, u64::from(seed)).map_err(to_js)
}

/// One-class SVM training trace: the objective after every epoch and the
/// margin field of the final model.
#[wasm_bindgen]
pub struct OcsvmTrace {
    size: usize,
    objective: Vec<f64>,
    field: Vec<f64>,
    rho: f64,
    outside: usize,
}

#[wasm_bindgen]
impl OcsvmTrace {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn objective(&self) -> Vec<f64> {
        self.objective.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn field(&self) -> Vec<f64> {
        self.field.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Training points with a negative margin.
    #[wasm_bindgen(getter)]
    pub fn outside(&self) -> usize {
        self.outside
    }
}

pub fn ocsvm_trace(
    xy: &[f64],
    size: usize,
    nu: f64,
    epochs: usize,
    seed: u64,
) -> Result<OcsvmTrace, DemoError> {
    let lift = Lift::new(seed);
    let x = lift.matrix(&points(xy)?);
    let m: LinearOcsvmModel = train_ocsvm_sgd(
        &x,
        &OcsvmParams {
            nu,
            max_iterations: epochs,
        },
        seed,
    )?;
    Ok(OcsvmTrace {
        size,
        objective: m.objective.clone(),
        field: grid_points(size)
            .map(|p| m.margin(&lift.apply(&p)))
            .collect(),
        rho: m.rho,
        outside: x.iter_rows().filter(|r| m.margin(r) < 0.0).count(),
    })
}

#[wasm_bindgen(js_name = ocsvmTrace)]
pub fn ocsvm_trace_js(
    xy: &[f64],
    size: usize,
    nu: f64,
    epochs: usize,
    seed: u32,
) -> Result<OcsvmTrace, JsError> {
    ocsvm_trace(xy, size, nu, epochs, u64::from(seed)).map_err(to_js)
}

/// Gradient-boosted classifier over labelled points.
#[wasm_bindgen]
pub struct BoostedSurface {
    model: GbdtModel,
    size: usize,
}

#[wasm_bindgen]
impl BoostedSurface {
    #[wasm_bindgen(constructor)]
    pub fn new(
        xy: &[f64],
        labels: &[u8],
        trees: usize,
        depth: usize,
    ) -> Result<BoostedSurface, JsError> {
        boosted_surface(xy, labels, trees, depth).map_err(to_js)
    }

    /// Probability of the anomalous class over a `size × size` grid.
    pub fn field(&mut self, size: usize) -> Vec<f64> {
        self.size = size;
        grid_points(size).map(|p| self.model.score(&p)).collect()
    }

    pub fn probability(&self, x: f64, y: f64) -> f64 {
        self.model.score(&[x, y])
    }

    /// `[base, contribution_x, contribution_y, margin]` of the log-odds at a
    /// point.
    pub fn explain(&self, x: f64, y: f64) -> Result<Vec<f64>, JsError> {
        explain(&self.model, x, y).map_err(to_js)
    }

    #[wasm_bindgen(getter, js_name = trainLoss)]
    pub fn train_loss(&self) -> Vec<f64> {
        self.model.train_loss.clone()
    }
}

pub fn boosted_surface(
    xy: &[f64],
    labels: &[u8],
    trees: usize,
    depth: usize,
) -> Result<BoostedSurface, DemoError> {
    let x = points(xy)?;
    let y: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let params = GbdtParams {
        n_trees: trees,
        max_depth: depth,
        ..GbdtParams::default()
    };
    Ok(BoostedSurface {
        model: train_gbdt(&x, &y, &params, 0)?,
        size: 0,
    })
}

pub fn explain(model: &GbdtModel, x: f64, y: f64) -> Result<Vec<f64>, DemoError> {
    let a = attribute_tree(model, &[x, y]).map_err(|e| DemoError::Attribution(e.to_string()))?;
    Ok(vec![
        a.base,
        a.contributions[0],
        a.contributions[1],
        a.margin,
    ])
}

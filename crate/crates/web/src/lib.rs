//! Browser bindings for three small explorations: PiSSA splits and their
//! NF4 error, the spectral regularizers on a typed-in spectrum, and the
//! warmup learning-rate schedule.
//!
//! Each export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`.

use balora::adapters::{pissa_init, quant_error, Nf4Codebook};
use balora::autodiff::Tape;
use balora::linalg::{svd, Matrix};
use balora::regularizers::{svdr_nlg, svdr_nlu, RegConfig};
use balora::trainloop::{OptimConfig, Schedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct PissaView {
    pub spectrum: Vec<f64>,
    pub residual_spectrum: Vec<f64>,
    pub reconstruction_error: f64,
    pub quant_error_full: f64,
    pub quant_error_residual: f64,
}

fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> balora::Result<Matrix> {
    Ok(svd(&Matrix::random_normal(rows, cols, 1.0, rng))?.u)
}

/// Random `rows x cols` matrix with `σ_i = (i + 1)^(-decay)`, split at `rank`.
pub fn pissa_view(rows: usize, cols: usize, rank: usize, decay: f64, seed: u64) -> balora::Result<PissaView> {
    if rows == 0 || cols == 0 || rows > 256 || cols > 256 {
        return Err(balora::Error::InvalidDimensions { rows, cols });
    }
    let p = rows.min(cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = orthonormal(rows, p, &mut rng)?;
    let v = orthonormal(cols, p, &mut rng)?;
    let sigma: Vec<f64> = (0..p).map(|i| ((i + 1) as f64).powf(-decay)).collect();
    let w = Matrix::from_fn(rows, cols, |i, j| (0..p).map(|k| u[(i, k)] * sigma[k] * v[(j, k)]).sum());
    let pair = pissa_init(&w, rank)?;
    let cb = Nf4Codebook::default();
    let residual = svd(pair.base())?;
    Ok(PissaView {
        spectrum: svd(&w)?.s,
        residual_spectrum: residual.s,
        reconstruction_error: pair.merge().sub(&w)?.frobenius_norm() / w.frobenius_norm(),
        quant_error_full: quant_error(&w, &cb)?,
        quant_error_residual: quant_error(pair.base(), &cb)?,
    })
}

#[derive(Serialize)]
pub struct SpectralView {
    pub k: usize,
    pub svdr_nlu: f64,
    pub svdr_nlg: f64,
}

/// Spectral losses of `diag(values)`.
pub fn spectral_view(values: &[f64], k_frac: f64, alpha: f64) -> balora::Result<SpectralView> {
    let cfg = RegConfig {
        k_frac,
        alpha,
        ..RegConfig::nlg()
    };
    cfg.validate()?;
    let m = Matrix::from_diag(values);
    let k = cfg.k_count(values.len());
    let mut tape = Tape::new();
    let x = tape.constant(m);
    let nlu = svdr_nlu(&mut tape, x, &cfg)?;
    let nlg = svdr_nlg(&mut tape, x, &cfg)?;
    Ok(SpectralView {
        k,
        svdr_nlu: tape.scalar(nlu),
        svdr_nlg: tape.scalar(nlg),
    })
}

/// Learning rate at every step `0..=total`.
pub fn schedule_curve(lr: f64, total: usize, warmup_ratio: f64, schedule: &str) -> balora::Result<Vec<f64>> {
    let schedule = match schedule {
        "cosine" => Schedule::Cosine,
        "linear" => Schedule::Linear,
        "constant" => Schedule::Constant,
        other => return Err(balora::Error::ConfigInvalid(format!("unknown schedule {other:?}"))),
    };
    let cfg = OptimConfig {
        lr,
        warmup_ratio,
        schedule,
        ..OptimConfig::default()
    };
    cfg.validate()?;
    Ok((0..=total).map(|s| cfg.lr_at(s, total)).collect())
}

#[wasm_bindgen]
pub fn pissa_explorer(rows: usize, cols: usize, rank: usize, decay: f64, seed: u32) -> Result<String, JsValue> {
    let v = pissa_view(rows, cols, rank, decay, seed as u64).map_err(js_err)?;
    to_json(&v).map_err(js_err)
}

/// `values` is a comma- or space-separated list of singular values.
#[wasm_bindgen]
pub fn spectral_losses(values: &str, k_frac: f64, alpha: f64) -> Result<String, JsValue> {
    let parsed: Result<Vec<f64>, _> = values
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    let parsed = parsed.map_err(js_err)?;
    if parsed.is_empty() || parsed.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(js_err("singular values must be finite and non-negative"));
    }
    let v = spectral_view(&parsed, k_frac, alpha).map_err(js_err)?;
    to_json(&v).map_err(js_err)
}

#[wasm_bindgen]
pub fn lr_schedule(lr: f64, total: usize, warmup_ratio: f64, schedule: &str) -> Result<String, JsValue> {
    let v = schedule_curve(lr, total, warmup_ratio, schedule).map_err(js_err)?;
    to_json(&v).map_err(js_err)
}

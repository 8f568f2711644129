//! Thresholded sparse autoencoder over channel matrices.
//!
//! `z = t(σ(f_enc(c)))` with `t(s) = s if s ≥ τ else 0`, and `ĉ = D z` where
//! column `i` of the dictionary `D` (d × k) is mode `i`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, CodecError, Result};
use crate::nn::ops::{axpy, dot};
use crate::tensor::Tensor;
use crate::zoo::format::Envelope;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeConfig {
    /// Modes per input channel; `k = expansion × d` unless `n_modes` is set.
    pub expansion: usize,
    pub n_modes: Option<usize>,
    pub threshold: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub l1_dictionary: f64,
    pub l1_loadings: f64,
    pub nonneg_dictionary: bool,
    pub hidden: usize,
    /// Apply a sigmoid before the threshold. When false the threshold acts
    /// on the raw encoder output.
    pub sigmoid: bool,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig {
            expansion: 3,
            n_modes: None,
            threshold: 0.9,
            epochs: 300,
            lr: 5e-5,
            batch_size: 128,
            l1_dictionary: 5e-5,
            l1_loadings: 0.0,
            nonneg_dictionary: true,
            hidden: 512,
            sigmoid: true,
            seed: 0,
        }
    }
}

impl SaeConfig {
    pub fn n_modes_for(&self, d: usize) -> usize {
        self.n_modes.unwrap_or(self.expansion * d)
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.n_modes_for(d) == 0 {
            return Err(invalid("number of modes must be positive"));
        }
        if !(self.threshold >= 0.0) {
            return Err(invalid(format!("threshold must be ≥ 0, got {}", self.threshold)));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(invalid("hidden width and batch size must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.l1_dictionary >= 0.0) || !(self.l1_loadings >= 0.0) {
            return Err(invalid("learning rate and L1 weights must be ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub loss: f64,
    pub r_squared: f64,
    /// Mean number of nonzero loadings per input.
    pub active: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    pub config: SaeConfig,
    d: usize,
    k: usize,
    /// `[hidden, d]`, `[hidden]`, `[k, hidden]`, `[k]`, `[d, k]`, packed.
    params: Vec<f64>,
    pub log: Vec<EpochLog>,
}

/// `n × k` loadings; every entry is 0 or at least `threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeLoadings {
    pub values: Tensor,
    pub threshold: f64,
}

impl ModeLoadings {
    pub fn n_inputs(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_modes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_modes();
        &self.values.data()[i * k..(i + 1) * k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let k = self.n_modes();
        self.values.data().iter().skip(j).step_by(k).copied().collect()
    }
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    dict: usize,
    end: usize,
}

fn layout(d: usize, h: usize, k: usize) -> Layout {
    let w1 = 0;
    let b1 = w1 + h * d;
    let w2 = b1 + h;
    let b2 = w2 + k * h;
    let dict = b2 + k;
    Layout {
        w1,
        b1,
        w2,
        b2,
        dict,
        end: dict + d * k,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one encoder pass.
struct Pass {
    hidden: Vec<f64>,
    /// Post-sigmoid (or raw) pre-threshold loadings.
    soft: Vec<f64>,
    z: Vec<f64>,
}

impl SaeModel {
    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn n_modes(&self) -> usize {
        self.k
    }

    fn lay(&self) -> Layout {
        layout(self.d, self.config.hidden, self.k)
    }

    /// Dictionary as a `d × k` matrix.
    pub fn dictionary(&self) -> Tensor {
        let l = self.lay();
        Tensor::new(vec![self.d, self.k], self.params[l.dict..l.end].to_vec()).expect("shape")
    }

    pub fn mode(&self, i: usize) -> Vec<f64> {
        let l = self.lay();
        (0..self.d).map(|r| self.params[l.dict + r * self.k + i]).collect()
    }

    fn pass(&self, c: &[f64]) -> Pass {
        let (d, h, k) = (self.d, self.config.hidden, self.k);
        let l = self.lay();
        let p = &self.params;
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let row = &p[l.w1 + j * d..l.w1 + (j + 1) * d];
                (p[l.b1 + j] + dot(row, c)).max(0.0)
            })
            .collect();
        let soft: Vec<f64> = (0..k)
            .map(|i| {
                let row = &p[l.w2 + i * h..l.w2 + (i + 1) * h];
                let pre = p[l.b2 + i] + dot(row, &hidden);
                if self.config.sigmoid {
                    sigmoid(pre)
                } else {
                    pre
                }
            })
            .collect();
        let tau = self.config.threshold;
        let z = soft.iter().map(|&s| if s >= tau { s } else { 0.0 }).collect();
        Pass { hidden, soft, z }
    }

    pub fn encode(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.d {
            return Err(invalid(format!("encode expects {} channels, got {}", self.d, c.len())));
        }
        Ok(self.pass(c).z)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.k {
            return Err(invalid(format!("decode expects {} loadings, got {}", self.k, z.len())));
        }
        Ok(self.decode_unchecked(z))
    }

    fn decode_unchecked(&self, z: &[f64]) -> Vec<f64> {
        let l = self.lay();
        self.params[l.dict..l.end]
            .chunks_exact(self.k)
            .map(|row| dot(row, z))
            .collect()
    }

    /// Row-wise encode of `m` (`n × d`).
    pub fn loadings_for(&self, m: &Tensor) -> Result<ModeLoadings> {
        let (n, d) = matrix_dims(m)?;
        if d != self.d {
            return Err(invalid(format!("matrix has {d} columns, model expects {}", self.d)));
        }
        let mut data = Vec::with_capacity(n * self.k);
        for row in m.data().chunks_exact(d) {
            data.extend(self.pass(row).z);
        }
        Ok(ModeLoadings {
            values: Tensor::new(vec![n, self.k], data)?,
            threshold: self.config.threshold,
        })
    }

    pub fn reconstruct(&self, m: &Tensor) -> Result<Tensor> {
        let z = self.loadings_for(m)?;
        let (n, d) = matrix_dims(m)?;
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(self.decode_unchecked(z.row(i)));
        }
        Tensor::new(vec![n, d], data)
    }

    pub fn to_envelope(&self) -> Envelope {
        let mut env = Envelope::new("sae");
        let h = env.header.as_object_mut().expect("object");
        h.insert("config".into(), json!(self.config));
        h.insert("input_dim".into(), json!(self.d));
        h.insert("n_modes".into(), json!(self.k));
        h.insert("log".into(), json!(self.log));
        let l = self.lay();
        let (d, hd, k) = (self.d, self.config.hidden, self.k);
        let block = |a: usize, b: usize, shape: Vec<usize>| Tensor::new(shape, self.params[a..b].to_vec()).expect("shape");
        env.push("encoder.w1", block(l.w1, l.b1, vec![hd, d]));
        env.push("encoder.b1", block(l.b1, l.w2, vec![hd]));
        env.push("encoder.w2", block(l.w2, l.b2, vec![k, hd]));
        env.push("encoder.b2", block(l.b2, l.dict, vec![k]));
        env.push("dictionary", block(l.dict, l.end, vec![d, k]));
        env
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self> {
        let field = |k: &str| env.header.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let config: SaeConfig = serde_json::from_value(field("config"))?;
        let d: usize = serde_json::from_value(field("input_dim"))?;
        let k: usize = serde_json::from_value(field("n_modes"))?;
        let log = serde_json::from_value(field("log"))?;
        let mut params = Vec::with_capacity(layout(d, config.hidden, k).end);
        for name in ["encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2", "dictionary"] {
            params.extend_from_slice(env.block(name)?.data());
        }
        if params.len() != layout(d, config.hidden, k).end {
            return Err(CodecError::Format("sae parameter blocks do not match the header".into()));
        }
        Ok(SaeModel { config, d, k, params, log })
    }
}

fn matrix_dims(m: &Tensor) -> Result<(usize, usize)> {
    match *m.shape() {
        [n, d] => Ok((n, d)),
        _ => Err(invalid(format!("expected a matrix, got shape {:?}", m.shape()))),
    }
}

fn total_sum_of_squares(m: &Tensor, n: usize, d: usize) -> f64 {
    let mut mean = vec![0.0; d];
    for row in m.data().chunks_exact(d) {
        axpy(1.0 / n as f64, row, &mut mean);
    }
    m.data().iter().enumerate().map(|(i, v)| (v - mean[i % d]) * (v - mean[i % d])).sum()
}

/// `1 − SSE/SST`, with SST taken about the per-column means of `m`.
pub fn r_squared_of(m: &Tensor, reconstruction: &Tensor) -> Result<f64> {
    let (n, d) = matrix_dims(m)?;
    if reconstruction.shape() != m.shape() {
        return Err(invalid("reconstruction shape differs from the matrix"));
    }
    let sse: f64 = m.data().iter().zip(reconstruction.data()).map(|(v, r)| (v - r) * (v - r)).sum();
    let sst = total_sum_of_squares(m, n, d);
    if sst == 0.0 {
        return Err(CodecError::Degenerate("matrix has zero variance".into()));
    }
    Ok(1.0 - sse / sst)
}

pub fn r_squared(m: &Tensor, sae: &SaeModel) -> Result<f64> {
    r_squared_of(m, &sae.reconstruct(m)?)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

fn init(d: usize, m: &Tensor, cfg: &SaeConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (h, k) = (cfg.hidden, cfg.n_modes_for(d));
    let l = layout(d, h, k);
    let mut p = vec![0.0; l.end];
    let a1 = 1.0 / (d as f64).sqrt();
    let a2 = 1.0 / (h as f64).sqrt();
    for v in &mut p[l.w1..l.w2] {
        *v = rng.random_range(-a1..a1);
    }
    for v in &mut p[l.w2..l.dict] {
        *v = rng.random_range(-a2..a2);
    }
    // dictionary columns start at data rows drawn by D² sampling
    let n = m.shape()[0];
    let row = |r: usize| &m.data()[r * d..(r + 1) * d];
    let mut nearest = vec![f64::INFINITY; n];
    for col in 0..k {
        let total: f64 = nearest.iter().filter(|v| v.is_finite()).sum();
        let r = if col == 0 || !(total > 0.0) {
            rng.random_range(0..n)
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        for (i, &v) in row(r).iter().enumerate() {
            let v = if cfg.nonneg_dictionary { v.max(0.0) } else { v };
            p[l.dict + i * k + col] = v;
        }
        for (i, w) in nearest.iter_mut().enumerate() {
            let dist: f64 = row(i).iter().zip(row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
            *w = w.min(dist);
        }
    }
    p
}

/// Fit the autoencoder to the rows of `m` (`n × d`).
pub fn train_sae(m: &Tensor, cfg: &SaeConfig) -> Result<SaeModel> {
    train_sae_from(m, cfg, None)
}

/// As [`train_sae`], optionally starting from a given `d × k` dictionary.
///
/// Training runs on `m / s` with `s` the root-mean-square entry of `m`, and
/// `s` is folded back into the encoder input weights and the dictionary, so
/// the result acts on raw rows and training is equivariant to rescaling `m`.
pub fn train_sae_from(m: &Tensor, cfg: &SaeConfig, dictionary: Option<&Tensor>) -> Result<SaeModel> {
    let (_, d) = matrix_dims(m)?;
    cfg.validate(d)?;
    if !m.is_finite() {
        return Err(CodecError::NonFinite("sae training matrix".into()));
    }
    let s = (m.data().iter().map(|v| v * v).sum::<f64>() / m.len() as f64).sqrt();
    let s = if s > 0.0 { s } else { 1.0 };
    let scaled_dict = dictionary.map(|t| t.scale(1.0 / s));
    let mut sae = fit_unit_scale(&m.scale(1.0 / s), cfg, scaled_dict.as_ref())?;
    let l = sae.lay();
    sae.params[l.w1..l.b1].iter_mut().for_each(|w| *w /= s);
    sae.params[l.dict..l.end].iter_mut().for_each(|w| *w *= s);
    sae.log.iter_mut().for_each(|e| e.loss *= s * s);
    Ok(sae)
}

fn fit_unit_scale(m: &Tensor, cfg: &SaeConfig, dictionary: Option<&Tensor>) -> Result<SaeModel> {
    let (n, d) = matrix_dims(m)?;
    let k = cfg.n_modes_for(d);
    let h = cfg.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sae = SaeModel {
        config: cfg.clone(),
        d,
        k,
        params: init(d, m, cfg, &mut rng),
        log: Vec::with_capacity(cfg.epochs),
    };
    let l = sae.lay();
    if let Some(dict) = dictionary {
        if dict.shape() != [d, k] {
            return Err(invalid(format!("initial dictionary must be {d} × {k}, got {:?}", dict.shape())));
        }
        sae.params[l.dict..l.end].copy_from_slice(dict.data());
    }
    let mut adam = Adam {
        m: vec![0.0; l.end],
        v: vec![0.0; l.end],
        t: 0,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; l.end];
    let mut dz = vec![0.0; k];
    let mut dhid = vec![0.0; h];
    let sst = total_sum_of_squares(m, n, d);
    let mut dc = vec![0.0; d];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut n_active = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let bn = batch.len() as f64;
            for &r in batch {
                let c = &m.data()[r * d..(r + 1) * d];
                let pass = sae.pass(c);
                let recon = sae.decode_unchecked(&pass.z);
                let p = &sae.params;
                n_active += pass.z.iter().filter(|&&v| v != 0.0).count();
                // dL/dĉ = 2(ĉ − c)/B
                for ((g, a), b) in dc.iter_mut().zip(&recon).zip(c) {
                    sse += (a - b) * (a - b);
                    *g = 2.0 * (a - b) / bn;
                }
                dz.iter_mut().for_each(|v| *v = 0.0);
                for (i, &g) in dc.iter().enumerate() {
                    axpy(g, &pass.z, &mut grad[l.dict + i * k..l.dict + (i + 1) * k]);
                    axpy(g, &p[l.dict + i * k..l.dict + (i + 1) * k], &mut dz);
                }
                for (j, dzj) in dz.iter_mut().enumerate() {
                    if pass.z[j] != 0.0 {
                        *dzj += cfg.l1_loadings * pass.z[j].signum() / bn;
                    }
                    // straight-through: the threshold passes the gradient unchanged
                    if cfg.sigmoid {
                        *dzj *= pass.soft[j] * (1.0 - pass.soft[j]);
                    }
                }
                dhid.iter_mut().for_each(|v| *v = 0.0);
                for (j, &dp) in dz.iter().enumerate() {
                    if dp == 0.0 {
                        continue;
                    }
                    grad[l.b2 + j] += dp;
                    axpy(dp, &pass.hidden, &mut grad[l.w2 + j * h..l.w2 + (j + 1) * h]);
                    axpy(dp, &p[l.w2 + j * h..l.w2 + (j + 1) * h], &mut dhid);
                }
                for t in 0..h {
                    if pass.hidden[t] <= 0.0 || dhid[t] == 0.0 {
                        continue;
                    }
                    grad[l.b1 + t] += dhid[t];
                    axpy(dhid[t], c, &mut grad[l.w1 + t * d..l.w1 + (t + 1) * d]);
                }
            }
            if cfg.l1_dictionary > 0.0 {
                for (g, w) in grad[l.dict..l.end].iter_mut().zip(&sae.params[l.dict..l.end]) {
                    if *w != 0.0 {
                        *g += cfg.l1_dictionary * w.signum();
                    }
                }
            }
            adam.step(&mut sae.params, &grad, cfg.lr);
            if cfg.nonneg_dictionary {
                sae.params[l.dict..l.end].iter_mut().for_each(|w| *w = w.max(0.0));
            }
        }
        let loss = sse / n as f64;
        if !loss.is_finite() || !sae.params.iter().all(|v| v.is_finite()) {
            return Err(CodecError::Diverged { epoch });
        }
        // statistics accumulate over the epoch while the parameters move
        let r2 = if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN };
        let active = n_active as f64 / n as f64;
        log::debug!("sae epoch {epoch}: loss {loss:.6e} r2 {r2:.4} active {active:.2}");
        sae.log.push(EpochLog {
            loss,
            r_squared: r2,
            active,
        });
    }
    Ok(sae)
}

/// Planted sparse nonnegative codes `Z₀` (n × k) and dictionary `D₀` (d × k),
/// with data rows `D₀ z₀`. Nonzero codes lie in `[threshold, 1)`.
pub fn synthetic_dictionary_task(n: usize, d: usize, k: usize, max_active: usize, threshold: f64, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict: Vec<f64> = (0..d * k)
        .map(|_| if rng.random_bool(0.3) { rng.random_range(0.2..1.0) } else { 0.0 })
        .collect();
    let mut rows = Vec::with_capacity(n * d);
    let modes: Vec<usize> = (0..k).collect();
    for _ in 0..n {
        let n_active = rng.random_range(1..=max_active.max(1));
        let picked: Vec<usize> = modes.choose_multiple(&mut rng, n_active).copied().collect();
        let mut z = vec![0.0; k];
        for j in picked {
            z[j] = rng.random_range(threshold..1.0);
        }
        for i in 0..d {
            rows.push((0..k).map(|j| dict[i * k + j] * z[j]).sum());
        }
    }
    (
        Tensor::new(vec![n, d], rows).expect("shape"),
        Tensor::new(vec![d, k], dict).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cfg: SaeConfig) -> (Tensor, SaeModel) {
        let (m, _) = synthetic_dictionary_task(64, 6, 6, 2, 0.5, 1);
        let sae = train_sae(&m, &cfg).unwrap();
        (m, sae)
    }

    fn quick() -> SaeConfig {
        SaeConfig {
            epochs: 3,
            hidden: 16,
            batch_size: 16,
            lr: 1e-3,
            ..SaeConfig::default()
        }
    }

    #[test]
    fn threshold_semantics() {
        for tau in [0.0, 0.5, 0.9, 1.0] {
            let (m, sae) = small(SaeConfig { threshold: tau, ..quick() });
            let z = sae.loadings_for(&m).unwrap();
            assert!(z.values.data().iter().all(|&v| v == 0.0 || v >= tau));
            if tau == 1.0 {
                assert!(z.values.data().iter().all(|&v| v == 0.0));
            }
            if tau == 0.0 {
                let s = sae.pass(&m.data()[..6]).soft;
                assert_eq!(sae.encode(&m.data()[..6]).unwrap(), s);
            }
        }
    }

    #[test]
    fn decode_is_linear_and_selects_columns() {
        let (_, sae) = small(quick());
        let k = sae.n_modes();
        assert!(sae.decode(&vec![0.0; k]).unwrap().iter().all(|&v| v == 0.0));
        let mut e = vec![0.0; k];
        e[2] = 1.0;
        assert_eq!(sae.decode(&e).unwrap(), sae.mode(2));
        let a: Vec<f64> = (0..k).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..k).map(|i| 1.0 - i as f64 * 0.05).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (da, db, dab) = (sae.decode(&a).unwrap(), sae.decode(&b).unwrap(), sae.decode(&ab).unwrap());
        for i in 0..sae.input_dim() {
            assert!((da[i] + db[i] - dab[i]).abs() < 1e-12);
        }
        assert!(sae.decode(&[1.0]).is_err());
        assert!(sae.encode(&[1.0]).is_err());
    }

    #[test]
    fn dictionary_stays_nonnegative_and_is_deterministic() {
        let (_, a) = small(quick());
        let (_, b) = small(quick());
        assert!(a.dictionary().data().iter().all(|&v| v >= 0.0));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn r_squared_examples() {
        let (m, _) = synthetic_dictionary_task(20, 4, 4, 2, 0.5, 2);
        assert_eq!(r_squared_of(&m, &m).unwrap(), 1.0);
        let (n, d) = (20, 4);
        let mut means = vec![0.0; d];
        for row in m.data().chunks(d) {
            for (a, v) in means.iter_mut().zip(row) {
                *a += v / n as f64;
            }
        }
        let mean_rows = Tensor::new(vec![n, d], (0..n).flat_map(|_| means.clone()).collect()).unwrap();
        assert!(r_squared_of(&m, &mean_rows).unwrap().abs() < 1e-12);
        assert!(r_squared_of(&Tensor::full(&[3, 2], 1.0), &Tensor::full(&[3, 2], 1.0)).is_err());
    }

    #[test]
    fn loadings_are_row_equivariant() {
        let (m, sae) = small(quick());
        let z = sae.loadings_for(&m).unwrap();
        let single = Tensor::new(vec![1, 6], m.data()[6..12].to_vec()).unwrap();
        assert_eq!(sae.loadings_for(&single).unwrap().row(0), z.row(1));
        assert_eq!(z.row(1), sae.encode(&m.data()[6..12]).unwrap().as_slice());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (_, sae) = small(quick());
        let bytes = sae.to_envelope().to_bytes().unwrap();
        let back = SaeModel::from_envelope(&Envelope::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, sae);
    }

    #[test]
    fn rejects_bad_config() {
        let (m, _) = synthetic_dictionary_task(8, 3, 3, 1, 0.5, 3);
        assert!(train_sae(&m, &SaeConfig { n_modes: Some(0), ..quick() }).is_err());
        assert!(train_sae(&m, &SaeConfig { threshold: -1.0, ..quick() }).is_err());
        assert!(matches!(
            train_sae(&m, &SaeConfig { lr: 1e300, ..quick() }),
            Err(CodecError::Diverged { .. })
        ));
    }
}

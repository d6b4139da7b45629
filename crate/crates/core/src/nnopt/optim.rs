use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Adam hyperparameters, shared by SOAP for its inner update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Elementwise moments for one tensor.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Updates the moments with `g` and writes the bias-corrected step
    /// `m̂ / (√v̂ + eps)` (without the learning rate) into `out`.
    fn direction(&mut self, hp: &AdamParams, t: i32, g: &[f64], out: &mut [f64]) {
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        for i in 0..g.len() {
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g[i];
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            out[i] = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + hp.eps);
        }
    }
}

fn check_shapes(net: &Mlp, grads: &Mlp) -> Result<()> {
    if net.sizes() != grads.sizes() {
        return Err(Error::ShapeMismatch {
            expected: net.num_params(),
            got: grads.num_params(),
        });
    }
    Ok(())
}

/// Adam with bias correction. `step` descends along the given gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    t: i32,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Self {
            params,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) -> Result<()> {
        check_shapes(net, grads)?;
        if self.moments.is_empty() {
            for l in &net.layers {
                self.moments.push(Moments::zeros(l.w.len()));
                self.moments.push(Moments::zeros(l.b.len()));
            }
        }
        self.t += 1;
        let lr = self.params.lr;
        let mut buf = Vec::new();
        for (k, (l, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
            for (j, (p, gs)) in [
                (l.w.as_mut_slice(), g.w.as_slice()),
                (l.b.as_mut_slice(), g.b.as_slice()),
            ]
            .into_iter()
            .enumerate()
            {
                buf.resize(gs.len(), 0.0);
                self.moments[2 * k + j].direction(&self.params, self.t, gs, &mut buf);
                for (pi, d) in p.iter_mut().zip(&buf) {
                    *pi -= lr * d;
                }
            }
        }
        Ok(())
    }
}

/// Kronecker-factored preconditioner state for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
struct Factor {
    l: DMatrix<f64>,
    r: DMatrix<f64>,
    ql: DMatrix<f64>,
    qr: DMatrix<f64>,
    /// First moment in the original coordinates.
    m: DMatrix<f64>,
    /// Second moment in the rotated coordinates.
    v: DMatrix<f64>,
}

/// SOAP: Adam run in the eigenbasis of Shampoo's Kronecker factors.
///
/// Per weight matrix `G` (out × in) the factors `L = EMA(G Gᵀ)` and
/// `R = EMA(Gᵀ G)` are refreshed every step; their eigenvectors `Q_L`, `Q_R`
/// are recomputed every `precondition_frequency` steps. The first moment is
/// kept in the original coordinates and rotated on use; the second moment
/// lives in the rotated coordinates. Biases use plain Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Soap {
    pub params: AdamParams,
    pub shampoo_beta: f64,
    /// `None` keeps identity eigenbases forever, which reduces to Adam.
    pub precondition_frequency: Option<usize>,
    t: i32,
    factors: Vec<Factor>,
    biases: Vec<Moments>,
    eig_failures: usize,
}

impl Soap {
    pub fn new(params: AdamParams, shampoo_beta: f64, precondition_frequency: Option<usize>) -> Self {
        Self {
            params,
            shampoo_beta,
            precondition_frequency: precondition_frequency.filter(|&f| f > 0),
            t: 0,
            factors: Vec::new(),
            biases: Vec::new(),
            eig_failures: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Number of eigendecompositions that failed and fell back to Adam.
    pub fn eig_failures(&self) -> usize {
        self.eig_failures
    }

    /// Kronecker factors `(L, R)` of layer `i`.
    pub fn factors(&self, i: usize) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.factors.get(i).map(|f| (&f.l, &f.r))
    }

    fn eigenbasis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        m.clone()
            .try_symmetric_eigen(1e-12, 10_000)
            .map(|e| e.eigenvectors)
            .ok_or(Error::EigendecompositionFailure)
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) -> Result<()> {
        check_shapes(net, grads)?;
        if self.factors.is_empty() {
            for l in &net.layers {
                let (o, i) = l.w.shape();
                self.factors.push(Factor {
                    l: DMatrix::zeros(o, o),
                    r: DMatrix::zeros(i, i),
                    ql: DMatrix::identity(o, o),
                    qr: DMatrix::identity(i, i),
                    m: DMatrix::zeros(o, i),
                    v: DMatrix::zeros(o, i),
                });
                self.biases.push(Moments::zeros(l.b.len()));
            }
        }
        self.t += 1;
        let refresh = self
            .precondition_frequency
            .is_some_and(|f| (self.t - 1) as usize % f == 0);
        let hp = self.params;
        let (c1, c2) = (1.0 - hp.beta1.powi(self.t), 1.0 - hp.beta2.powi(self.t));
        let beta = self.shampoo_beta;
        let mut buf = Vec::new();

        for (k, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
            let f = &mut self.factors[k];
            let gw = &g.w;
            if self.precondition_frequency.is_some() {
                f.l.gemm(1.0 - beta, gw, &gw.transpose(), beta);
                f.r.gemm(1.0 - beta, &gw.transpose(), gw, beta);
            }
            if refresh {
                match (Self::eigenbasis(&f.l), Self::eigenbasis(&f.r)) {
                    (Ok(ql), Ok(qr)) => {
                        f.ql = ql;
                        f.qr = qr;
                    }
                    _ => {
                        self.eig_failures += 1;
                        f.ql = DMatrix::identity(f.ql.nrows(), f.ql.ncols());
                        f.qr = DMatrix::identity(f.qr.nrows(), f.qr.ncols());
                    }
                }
            }
            f.m.zip_apply(gw, |m, g| *m = hp.beta1 * *m + (1.0 - hp.beta1) * g);
            let g_rot = f.ql.transpose() * gw * &f.qr;
            let m_rot = f.ql.transpose() * &f.m * &f.qr;
            f.v.zip_apply(&g_rot, |v, g| *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g);
            let mut dir = m_rot;
            dir.zip_apply(&f.v, |m, v| *m = (*m / c1) / ((v / c2).sqrt() + hp.eps));
            let update = &f.ql * dir * f.qr.transpose();
            layer.w.zip_apply(&update, |p, d| *p -= hp.lr * d);

            buf.resize(g.b.len(), 0.0);
            self.biases[k].direction(&hp, self.t, g.b.as_slice(), &mut buf);
            for (p, d) in layer.b.iter_mut().zip(&buf) {
                *p -= hp.lr * d;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Soap,
}

/// Optimizer block of the experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub shampoo_beta: f64,
    pub precondition_frequency: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamParams::default();
        Self {
            kind: OptimizerKind::Adam,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            shampoo_beta: 0.95,
            precondition_frequency: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn adam_params(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn build(&self) -> Optimizer {
        match self.kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(self.adam_params())),
            OptimizerKind::Soap => Optimizer::Soap(Soap::new(
                self.adam_params(),
                self.shampoo_beta,
                Some(self.precondition_frequency),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Soap(Soap),
}

impl Optimizer {
    /// One descent step `net ← net - lr · direction(grads)`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) -> Result<()> {
        match self {
            Optimizer::Adam(o) => o.step(net, grads),
            Optimizer::Soap(o) => o.step(net, grads),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Adam(o) => o.params.lr = lr,
            Optimizer::Soap(o) => o.params.lr = lr,
        }
    }
}

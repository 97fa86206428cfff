use super::mlp::{Dense, Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, opt: &Adam, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseState {
    w: AdamState,
    b: AdamState,
}

impl DenseState {
    fn new(d: &Dense) -> Self {
        DenseState {
            w: AdamState::new(d.w.len()),
            b: AdamState::new(d.b.len()),
        }
    }

    fn step(&mut self, opt: &Adam, d: &mut Dense, g: &Dense) {
        let (Some(w), Some(gw)) = (d.w.as_slice_mut(), g.w.as_slice()) else {
            unreachable!("parameters are kept in standard layout");
        };
        self.w.step(opt, w, gw);
        let (Some(b), Some(gb)) = (d.b.as_slice_mut(), g.b.as_slice()) else {
            unreachable!("parameters are kept in standard layout");
        };
        self.b.step(opt, b, gb);
    }
}

/// Adam state for every tensor of one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpAdam {
    layers: [DenseState; 3],
}

impl MlpAdam {
    pub fn new(model: &Mlp) -> Self {
        let [a, b, c] = model.layers();
        MlpAdam {
            layers: [DenseState::new(a), DenseState::new(b), DenseState::new(c)],
        }
    }

    /// Updates all layers, or only the head when `train_trunk` is false.
    pub fn step(&mut self, opt: &Adam, model: &mut Mlp, grads: &MlpGrads, train_trunk: bool) {
        let grads = grads.layers();
        for (i, (state, layer)) in self.layers.iter_mut().zip(model.layers_mut()).enumerate() {
            if i < 2 && !train_trunk {
                continue;
            }
            state.step(opt, layer, grads[i]);
        }
    }
}

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Affine layer `x W + b`, with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Dense {
            w: Array2::from_shape_simple_fn((n_in, n_out), || dist.sample(rng)),
            b: Array1::from_shape_simple_fn(n_out, || dist.sample(rng)),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            w: Array2::zeros((n_in, n_out)),
            b: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w.ncols()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub(crate) fn add_scaled(&mut self, other: &Dense, scale: f64) {
        self.w.scaled_add(scale, &other.w);
        self.b.scaled_add(scale, &other.b);
    }
}

/// Input and hidden layers, each followed by ReLU and dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub input: Dense,
    pub hidden: Dense,
}

/// Three affine layers with ReLU after the first two and a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub trunk: Trunk,
    pub head: Dense,
    pub dropout: f64,
}

/// Parameter gradients, laid out like [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub input: Dense,
    pub hidden: Dense,
    pub head: Dense,
}

/// Activations recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    /// Input-layer pre-activations.
    pub pre1: Array2<f64>,
    out1: Array2<f64>,
    mask1: Option<Array2<f64>>,
    /// Hidden-layer pre-activations, after the first dropout.
    pub pre2: Array2<f64>,
    out2: Array2<f64>,
    mask2: Option<Array2<f64>>,
    pub probs: Array2<f64>,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
fn dropout_mask<R: Rng + ?Sized>(dim: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn(dim, || if rng.random::<f64>() < keep { scale } else { 0.0 })
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(n_in: usize, hidden: usize, n_out: usize, dropout: f64, rng: &mut R) -> Self {
        Mlp {
            trunk: Trunk {
                input: Dense::init(n_in, hidden, rng),
                hidden: Dense::init(hidden, hidden, rng),
            },
            head: Dense::init(hidden, n_out, rng),
            dropout,
        }
    }

    pub fn n_in(&self) -> usize {
        self.trunk.input.n_in()
    }

    pub fn n_hidden(&self) -> usize {
        self.trunk.input.n_out()
    }

    pub fn n_out(&self) -> usize {
        self.head.n_out()
    }

    /// Forward pass recording what [`Mlp::backward`] needs. Dropout masks are
    /// drawn from `rng` only when `dropout_on` is set and the rate is positive.
    pub fn forward_cached<R: Rng + ?Sized>(&self, x: ArrayView2<'_, f64>, dropout_on: bool, rng: &mut R) -> ForwardCache {
        let active = dropout_on && self.dropout > 0.0;
        let pre1 = self.trunk.input.apply(x);
        let mut out1 = relu(&pre1);
        let mask1 = active.then(|| dropout_mask(out1.dim(), self.dropout, rng));
        if let Some(m) = &mask1 {
            out1 *= m;
        }
        let pre2 = self.trunk.hidden.apply(out1.view());
        let mut out2 = relu(&pre2);
        let mask2 = active.then(|| dropout_mask(out2.dim(), self.dropout, rng));
        if let Some(m) = &mask2 {
            out2 *= m;
        }
        let probs = self.head.apply(out2.view()).mapv(sigmoid);
        ForwardCache {
            x: x.to_owned(),
            pre1,
            out1,
            mask1,
            pre2,
            out2,
            mask2,
            probs,
        }
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: ArrayView2<'_, f64>, dropout_on: bool, rng: &mut R) -> Array2<f64> {
        self.forward_cached(x, dropout_on, rng).probs
    }

    /// Deterministic forward pass with dropout disabled.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let h1 = relu(&self.trunk.input.apply(x));
        let h2 = relu(&self.trunk.hidden.apply(h1.view()));
        self.head.apply(h2.view()).mapv(sigmoid)
    }

    /// Reverse pass from `d loss / d logits` to parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: ArrayView2<'_, f64>) -> MlpGrads {
        let head = Dense {
            w: cache.out2.t().dot(&grad_logits),
            b: grad_logits.sum_axis(Axis(0)),
        };
        let mut g2 = grad_logits.dot(&self.head.w.t());
        if let Some(m) = &cache.mask2 {
            g2 *= m;
        }
        g2.zip_mut_with(&cache.pre2, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let hidden = Dense {
            w: cache.out1.t().dot(&g2),
            b: g2.sum_axis(Axis(0)),
        };
        let mut g1 = g2.dot(&self.trunk.hidden.w.t());
        if let Some(m) = &cache.mask1 {
            g1 *= m;
        }
        g1.zip_mut_with(&cache.pre1, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let input = Dense {
            w: cache.x.t().dot(&g1),
            b: g1.sum_axis(Axis(0)),
        };
        MlpGrads { input, hidden, head }
    }

    /// Parameter tensors in a fixed order: input, hidden, head (weights then bias).
    pub fn layers(&self) -> [&Dense; 3] {
        [&self.trunk.input, &self.trunk.hidden, &self.head]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 3] {
        [&mut self.trunk.input, &mut self.trunk.hidden, &mut self.head]
    }
}

impl MlpGrads {
    pub fn layers(&self) -> [&Dense; 3] {
        [&self.input, &self.hidden, &self.head]
    }
}

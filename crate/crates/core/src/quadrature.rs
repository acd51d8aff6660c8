//! Gauss–Legendre rules on `[0,1]` and endpoint-singular integration.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;

/// Gauss–Legendre nodes and weights mapped to `[0,1]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        let order = NonZeroUsize::new(order.max(1)).expect("order is positive");
        let rule = GaussLegendre::new(order);
        let (nodes, weights) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .unzip();
        Self { nodes, weights }
    }

    /// Process-wide cached rule of the given order.
    pub fn shared(order: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(order)
            .or_insert_with(|| Arc::new(GaussRule::new(order)))
            .clone()
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = b - a;
        h * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(a + h * x))
            .sum::<f64>()
    }

    /// Integral over `[a,b]` of a function behaving like `(r-a)^left` near `a`
    /// and like `(b-r)^right` near `b` (both exponents `> -1`).
    ///
    /// The interval is split at its midpoint; on each half the substitution
    /// `r = a + h w^{1/(1+α)}` turns the endpoint power into a bounded factor.
    pub fn integrate_singular(&self, a: f64, b: f64, left: f64, right: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        debug_assert!(left > -1.0 && right > -1.0);
        let h = 0.5 * (b - a);
        let p = 1.0 / (1.0 + left);
        let q = 1.0 / (1.0 + right);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let wl = x.powf(p);
            s += w * f(a + h * wl) * p * wl / x;
            let wr = x.powf(q);
            s += w * f(b - h * wr) * q * wr / x;
        }
        h * s
    }
}

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::SysgenError;

/// Memoryless one-hidden-layer network `z ↦ W2·tanh(W1·z + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticNet {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl StaticNet {
    pub fn new(w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: f64) -> Result<Self, SysgenError> {
        if w1.is_empty() || w1.len() != b1.len() || w1.len() != w2.len() {
            return Err(SysgenError::Config(format!(
                "static net sizes W1 {} b1 {} W2 {}",
                w1.len(),
                b1.len(),
                w2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    /// W1, b1 standard normal; W2 normal with std `1/√hidden`; b2 = 0.
    pub fn sample<R: Rng + ?Sized>(hidden_size: usize, rng: &mut R) -> Result<Self, SysgenError> {
        if hidden_size == 0 {
            return Err(SysgenError::Config("hidden_size must be >= 1".into()));
        }
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let w1 = (0..hidden_size).map(|_| normal()).collect();
        let b1 = (0..hidden_size).map(|_| normal()).collect();
        let scale = (hidden_size as f64).sqrt().recip();
        let w2 = (0..hidden_size).map(|_| scale * normal()).collect();
        Ok(Self { w1, b1, w2, b2: 0.0 })
    }

    pub fn hidden_size(&self) -> usize {
        self.w1.len()
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.w1
            .iter()
            .zip(&self.b1)
            .zip(&self.w2)
            .map(|((w1, b1), w2)| w2 * (w1 * z + b1).tanh())
            .sum::<f64>()
            + self.b2
    }

    /// Zeroes the output layer so the map is identically zero.
    pub fn silence(&mut self) {
        self.w2.iter_mut().for_each(|w| *w = 0.0);
        self.b2 = 0.0;
    }
}

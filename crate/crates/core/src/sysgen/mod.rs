//! Random dynamical systems: LTI blocks, Wiener-Hammerstein (WH) chains and
//! parallel WH sums, sampled from configurable classes and simulated from a
//! zero initial state.

mod class;
mod lti;
mod static_net;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

pub use class::{ClassSpec, LtiClass, MixtureComponent, DEFAULT_BRANCHES, DEFAULT_HIDDEN_SIZE};
pub use lti::{poly_from_roots, sample_lti, LtiSystem, PoleRegion, PoleZero, ENERGY_HORIZON};
pub use static_net::StaticNet;

use crate::error::SysgenError;

/// Series chain `G1 → F → G2`.
#[derive(Clone, Debug, PartialEq)]
pub struct WhSystem {
    pub g1: LtiSystem,
    pub f: StaticNet,
    pub g2: LtiSystem,
}

impl WhSystem {
    fn step(&mut self, u: f64) -> f64 {
        let v = self.g1.step(u);
        let w = self.f.eval(v);
        self.g2.step(w)
    }

    fn reset(&mut self) {
        self.g1.reset();
        self.g2.reset();
    }
}

/// A concrete sampled system with its simulation state.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemInstance {
    Lti(LtiSystem),
    WienerHammerstein(WhSystem),
    /// Branch outputs are summed and divided by `√branches`.
    ParallelWienerHammerstein(Vec<WhSystem>),
}

impl SystemInstance {
    /// Returns the state to zero.
    pub fn reset(&mut self) {
        match self {
            Self::Lti(s) => s.reset(),
            Self::WienerHammerstein(wh) => wh.reset(),
            Self::ParallelWienerHammerstein(branches) => branches.iter_mut().for_each(WhSystem::reset),
        }
    }

    pub fn step(&mut self, u: f64) -> f64 {
        match self {
            Self::Lti(s) => s.step(u),
            Self::WienerHammerstein(wh) => wh.step(u),
            Self::ParallelWienerHammerstein(branches) => {
                let scale = (branches.len() as f64).sqrt().recip();
                branches.iter_mut().map(|b| b.step(u)).sum::<f64>() * scale
            }
        }
    }

    /// Runs the causal recursion over `u` from the current state. The state
    /// is left at the end of the pass; call [`SystemInstance::reset`] before
    /// reuse.
    pub fn simulate(&mut self, u: &[f64]) -> Result<Vec<f64>, SysgenError> {
        if let Some(k) = u.iter().position(|x| !x.is_finite()) {
            return Err(SysgenError::Input(k));
        }
        let mut y = Vec::with_capacity(u.len());
        for (k, &uk) in u.iter().enumerate() {
            let yk = self.step(uk);
            if !yk.is_finite() {
                return Err(SysgenError::Numeric(k));
            }
            y.push(yk);
        }
        Ok(y)
    }

    /// All LTI blocks, in simulation order.
    pub fn lti_blocks(&self) -> Vec<&LtiSystem> {
        match self {
            Self::Lti(s) => vec![s],
            Self::WienerHammerstein(wh) => vec![&wh.g1, &wh.g2],
            Self::ParallelWienerHammerstein(bs) => bs.iter().flat_map(|b| [&b.g1, &b.g2]).collect(),
        }
    }

    /// Hash of every system parameter (not the state).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut feed = |x: f64| x.to_bits().hash(&mut h);
        let feed_wh = |wh: &WhSystem, feed: &mut dyn FnMut(f64)| {
            wh.g1.params_for_hash().for_each(&mut *feed);
            wh.f.w1.iter().chain(&wh.f.b1).chain(&wh.f.w2).for_each(|&x| feed(x));
            feed(wh.f.b2);
            wh.g2.params_for_hash().for_each(&mut *feed);
        };
        match self {
            Self::Lti(s) => s.params_for_hash().for_each(&mut feed),
            Self::WienerHammerstein(wh) => feed_wh(wh, &mut feed),
            Self::ParallelWienerHammerstein(bs) => bs.iter().for_each(|b| feed_wh(b, &mut feed)),
        }
        h.finish()
    }
}

fn sample_branch<R: Rng + ?Sized>(blocks: &LtiClass, hidden_size: usize, rng: &mut R) -> Result<WhSystem, SysgenError> {
    let g1 = sample_lti(&blocks.region, blocks.order_min, blocks.order_max, rng)?;
    let f = StaticNet::sample(hidden_size, rng)?;
    let g2 = sample_lti(&blocks.region, blocks.order_min, blocks.order_max, rng)?;
    Ok(WhSystem { g1, f, g2 })
}

/// Samples a WH chain with independent `G1`, `G2` and a random static net.
pub fn sample_wh<R: Rng + ?Sized>(spec: &ClassSpec, rng: &mut R) -> Result<SystemInstance, SysgenError> {
    let ClassSpec::WienerHammerstein { blocks, hidden_size } = spec else {
        return Err(SysgenError::Config(format!("sample_wh called with {spec:?}")));
    };
    spec.validate()?;
    Ok(SystemInstance::WienerHammerstein(sample_branch(blocks, *hidden_size, rng)?))
}

/// Samples `n_branches` independent WH branches in parallel.
pub fn sample_pwh<R: Rng + ?Sized>(spec: &ClassSpec, rng: &mut R) -> Result<SystemInstance, SysgenError> {
    let ClassSpec::ParallelWienerHammerstein { blocks, hidden_size, n_branches } = spec else {
        return Err(SysgenError::Config(format!("sample_pwh called with {spec:?}")));
    };
    spec.validate()?;
    let branches = (0..*n_branches).map(|_| sample_branch(blocks, *hidden_size, rng)).collect::<Result<_, _>>()?;
    Ok(SystemInstance::ParallelWienerHammerstein(branches))
}

/// Draws one system from the class; mixtures pick a component with
/// probability equal to its weight.
pub fn sample_from_class<R: Rng + ?Sized>(spec: &ClassSpec, rng: &mut R) -> Result<SystemInstance, SysgenError> {
    match spec {
        ClassSpec::Lti(b) => Ok(SystemInstance::Lti(sample_lti(&b.region, b.order_min, b.order_max, rng)?)),
        ClassSpec::WienerHammerstein { .. } => sample_wh(spec, rng),
        ClassSpec::ParallelWienerHammerstein { .. } => sample_pwh(spec, rng),
        ClassSpec::Mixture(components) => {
            spec.validate()?;
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let last = components.len() - 1;
            for (i, c) in components.iter().enumerate() {
                acc += c.weight;
                if draw < acc || i == last {
                    return sample_from_class(&c.spec, rng);
                }
            }
            unreachable!("mixture has at least one component")
        }
    }
}

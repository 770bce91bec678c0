use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SysgenError;

/// Steps of impulse response used for gain normalization.
pub const ENERGY_HORIZON: usize = 1000;
const MAX_ZERO_MAGNITUDE: f64 = 0.97;
const MAX_ATTEMPTS: usize = 100;

/// Magnitude/phase subset of the unit disk from which poles are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleRegion {
    pub mag_min: f64,
    pub mag_max: f64,
    pub phase_min: f64,
    pub phase_max: f64,
}

impl PoleRegion {
    pub fn new(mag: (f64, f64), phase: (f64, f64)) -> Result<Self, SysgenError> {
        let region = Self { mag_min: mag.0, mag_max: mag.1, phase_min: phase.0, phase_max: phase.1 };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<(), SysgenError> {
        let fields = [self.mag_min, self.mag_max, self.phase_min, self.phase_max];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(SysgenError::Config(format!("non-finite pole region {self:?}")));
        }
        if !(0.0 <= self.mag_min && self.mag_min <= self.mag_max && self.mag_max < 1.0) {
            return Err(SysgenError::Config(format!(
                "magnitude range [{}, {}] must satisfy 0 <= min <= max < 1",
                self.mag_min, self.mag_max
            )));
        }
        let tol = 1e-12;
        if !(-PI - tol <= self.phase_min && self.phase_min <= self.phase_max && self.phase_max <= PI + tol) {
            return Err(SysgenError::Config(format!(
                "phase range [{}, {}] must be ordered within [-pi, pi]",
                self.phase_min, self.phase_max
            )));
        }
        Ok(())
    }

    /// The phase range folded onto the upper half-plane `[0, π]`; conjugates
    /// cover the reflection.
    pub fn upper_phase_interval(&self) -> (f64, f64) {
        let (lo, hi) = (self.phase_min.clamp(-PI, PI), self.phase_max.clamp(-PI, PI));
        if lo >= 0.0 {
            (lo, hi)
        } else if hi <= 0.0 {
            (-hi, -lo)
        } else {
            (0.0, hi.max(-lo))
        }
    }
}

/// Poles, zeros and gain of a sampled block: `H(z) = gain·∏(z − zᵢ)/∏(z − pᵢ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoleZero {
    pub poles: Vec<Complex64>,
    pub zeros: Vec<Complex64>,
    pub gain: f64,
}

/// SISO discrete-time state-space block `x⁺ = Ax + Bu, y = Cx + Du`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    order: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    state: Vec<f64>,
    pole_zero: Option<PoleZero>,
}

impl LtiSystem {
    /// Builds a block from explicit matrices (`a` row-major `n×n`).
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, d: f64) -> Result<Self, SysgenError> {
        let n = b.len();
        if n == 0 || a.len() != n * n || c.len() != n {
            return Err(SysgenError::Config(format!(
                "inconsistent state-space sizes: A {} B {} C {}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        if a.iter().chain(&b).chain(&c).chain(std::iter::once(&d)).any(|x| !x.is_finite()) {
            return Err(SysgenError::Config("state-space matrices must be finite".into()));
        }
        Ok(Self { order: n, a, b, c, d, state: vec![0.0; n], pole_zero: None })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Sampled poles/zeros/gain, present for blocks built by [`sample_lti`].
    pub fn pole_zero(&self) -> Option<&PoleZero> {
        self.pole_zero.as_ref()
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    /// One step of the recursion; returns `y_k` and advances the state.
    pub fn step(&mut self, u: f64) -> f64 {
        let n = self.order;
        let y = self.c.iter().zip(&self.state).map(|(c, x)| c * x).sum::<f64>() + self.d * u;
        let mut next = vec![0.0; n];
        for (i, nx) in next.iter_mut().enumerate() {
            let row = &self.a[i * n..(i + 1) * n];
            *nx = row.iter().zip(&self.state).map(|(a, x)| a * x).sum::<f64>() + self.b[i] * u;
        }
        self.state = next;
        y
    }

    /// Impulse response `h_0 = D, h_k = C A^{k−1} B` from a zero state.
    pub fn markov_parameters(&self, steps: usize) -> Vec<f64> {
        let mut probe = self.clone();
        probe.reset();
        (0..steps).map(|k| probe.step(if k == 0 { 1.0 } else { 0.0 })).collect()
    }

    pub(crate) fn params_for_hash(&self) -> impl Iterator<Item = f64> + '_ {
        self.a.iter().chain(&self.b).chain(&self.c).copied().chain(std::iter::once(self.d))
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Coefficients of `∏(z − rᵢ)`, highest power first.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        coeffs = next;
    }
    coeffs
}

fn sample_poles<R: Rng + ?Sized>(region: &PoleRegion, order: usize, rng: &mut R) -> Vec<Complex64> {
    let (lo, hi) = region.upper_phase_interval();
    let mut poles = Vec::with_capacity(order);
    for _ in 0..order / 2 {
        let p = Complex64::from_polar(uniform(rng, region.mag_min, region.mag_max), uniform(rng, lo, hi));
        poles.push(p);
        poles.push(p.conj());
    }
    if order % 2 == 1 {
        let mag = uniform(rng, region.mag_min, region.mag_max);
        // distance of the folded range to phase 0 and to phase π
        let (to_zero, to_pi) = (lo, PI - hi);
        let positive = if to_zero < to_pi {
            true
        } else if to_pi < to_zero {
            false
        } else {
            rng.gen::<bool>()
        };
        poles.push(Complex64::new(if positive { mag } else { -mag }, 0.0));
    }
    poles
}

fn sample_zeros<R: Rng + ?Sized>(order: usize, rng: &mut R) -> Vec<Complex64> {
    let mut zeros = Vec::with_capacity(order);
    for _ in 0..order / 2 {
        let z = Complex64::from_polar(uniform(rng, 0.0, MAX_ZERO_MAGNITUDE), uniform(rng, 0.0, PI));
        zeros.push(z);
        zeros.push(z.conj());
    }
    if order % 2 == 1 {
        let mag = uniform(rng, 0.0, MAX_ZERO_MAGNITUDE);
        zeros.push(Complex64::new(if rng.gen::<bool>() { mag } else { -mag }, 0.0));
    }
    zeros
}

/// Controllable canonical realization of `num(z)/den(z)` (both monic-degree
/// `n`, highest power first, `den[0] = 1`).
fn companion_realization(num: &[f64], den: &[f64]) -> Result<LtiSystem, SysgenError> {
    let n = den.len() - 1;
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        a[j] = -den[j + 1];
    }
    for i in 1..n {
        a[i * n + i - 1] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    let d = num[0];
    let c = (1..=n).map(|i| num[i] - d * den[i]).collect();
    LtiSystem::new(a, b, c, d)
}

fn realize(poles: Vec<Complex64>, zeros: Vec<Complex64>) -> Result<LtiSystem, String> {
    let den: Vec<f64> = poly_from_roots(&poles).iter().map(|c| c.re).collect();
    let num: Vec<f64> = poly_from_roots(&zeros).iter().map(|c| c.re).collect();
    let mut sys = companion_realization(&num, &den).map_err(|e| e.to_string())?;
    let energy: f64 = sys.markov_parameters(ENERGY_HORIZON).iter().map(|h| h * h).sum();
    if !energy.is_finite() || energy <= 0.0 {
        return Err(format!("impulse-response energy {energy}"));
    }
    let scale = energy.sqrt().recip();
    sys.c.iter_mut().for_each(|c| *c *= scale);
    sys.d *= scale;
    if sys.params_for_hash().any(|x| !x.is_finite()) {
        return Err("non-finite coefficients after scaling".into());
    }
    sys.pole_zero = Some(PoleZero { poles, zeros, gain: scale });
    Ok(sys)
}

/// Samples a stable SISO block with poles in `region`, order uniform in
/// `order_min..=order_max`, and unit impulse-response energy.
pub fn sample_lti<R: Rng + ?Sized>(
    region: &PoleRegion,
    order_min: usize,
    order_max: usize,
    rng: &mut R,
) -> Result<LtiSystem, SysgenError> {
    region.validate()?;
    if order_min < 1 || order_min > order_max {
        return Err(SysgenError::Config(format!("order bounds {order_min}..{order_max}")));
    }
    let mut reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let order = rng.gen_range(order_min..=order_max);
        let poles = sample_poles(region, order, rng);
        let zeros = sample_zeros(order, rng);
        match realize(poles, zeros) {
            Ok(sys) => return Ok(sys),
            Err(r) => reason = r,
        }
    }
    Err(SysgenError::Realization { attempts: MAX_ATTEMPTS, reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn region_a() -> PoleRegion {
        PoleRegion::new((0.8, 0.97), (-PI / 2.0, PI / 2.0)).unwrap()
    }

    #[test]
    fn region_validation() {
        assert!(PoleRegion::new((0.5, 1.0), (0.0, 1.0)).is_err());
        assert!(PoleRegion::new((0.6, 0.5), (0.0, 1.0)).is_err());
        assert!(PoleRegion::new((0.5, 0.6), (1.0, 0.0)).is_err());
        assert!(PoleRegion::new((-0.1, 0.6), (0.0, 1.0)).is_err());
        assert!(PoleRegion::new((0.0, 0.0), (-PI, PI)).is_ok());
    }

    #[test]
    fn folding_onto_upper_half_plane() {
        assert_eq!(region_a().upper_phase_interval(), (0.0, PI / 2.0));
        let lower = PoleRegion::new((0.5, 0.6), (-3.0 * PI / 4.0, -PI / 2.0)).unwrap();
        assert_eq!(lower.upper_phase_interval(), (PI / 2.0, 3.0 * PI / 4.0));
    }

    #[test]
    fn order_bounds_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_lti(&region_a(), 0, 3, &mut rng), Err(SysgenError::Config(_))));
        assert!(matches!(sample_lti(&region_a(), 4, 3, &mut rng), Err(SysgenError::Config(_))));
    }

    #[test]
    fn region_a_poles_stay_in_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let sys = sample_lti(&region_a(), 1, 10, &mut rng).unwrap();
            let pz = sys.pole_zero().unwrap();
            assert_eq!(pz.poles.len(), sys.order());
            for p in &pz.poles {
                assert!((0.8..=0.97).contains(&p.norm()));
                assert!(p.arg().abs() <= PI / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_region_gives_exact_real_pole() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let region = PoleRegion::new((0.5, 0.5), (0.0, 0.0)).unwrap();
        let sys = sample_lti(&region, 1, 1, &mut rng).unwrap();
        assert_eq!(sys.order(), 1);
        assert_eq!(sys.pole_zero().unwrap().poles, vec![Complex64::new(0.5, 0.0)]);
        assert_eq!(sys.a(), &[0.5]);
    }

    #[test]
    fn odd_order_real_pole_sign_follows_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let region_b = PoleRegion::new((0.5, 0.75), (PI / 2.0, 3.0 * PI / 4.0)).unwrap();
        for _ in 0..50 {
            let sys = sample_lti(&region_b, 1, 1, &mut rng).unwrap();
            assert!(sys.pole_zero().unwrap().poles[0].re < 0.0);
            let sys = sample_lti(&region_a(), 1, 1, &mut rng).unwrap();
            assert!(sys.pole_zero().unwrap().poles[0].re > 0.0);
        }
    }

    #[test]
    fn order_four_characteristic_polynomial_is_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let sys = sample_lti(&region_a(), 4, 4, &mut rng).unwrap();
            let poles = &sys.pole_zero().unwrap().poles;
            // brute-force expansion of (z − p1)(z − p2)(z − p3)(z − p4)
            let mut coeffs = [Complex64::new(0.0, 0.0); 5];
            for mask in 0u32..16 {
                let chosen: Vec<_> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
                let prod = chosen.iter().fold(Complex64::new(1.0, 0.0), |acc, &i| acc * (-poles[i]));
                coeffs[chosen.len()] += prod;
            }
            let max_imag = coeffs.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
            assert!(max_imag < 1e-12, "imag {max_imag}");
            for (j, c) in coeffs.iter().enumerate().skip(1) {
                assert!((sys.a()[j - 1] + c.re).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_energy_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = PoleRegion::new((0.5, 0.97), (-PI, PI)).unwrap();
        for _ in 0..100 {
            let sys = sample_lti(&c, 1, 10, &mut rng).unwrap();
            let e: f64 = sys.markov_parameters(ENERGY_HORIZON).iter().map(|h| h * h).sum();
            assert!((e - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn first_order_impulse_response() {
        let mut sys = LtiSystem::new(vec![0.9], vec![1.0], vec![1.0], 0.0).unwrap();
        let y: Vec<f64> = [1.0, 0.0, 0.0, 0.0].iter().map(|&u| sys.step(u)).collect();
        assert_eq!(y, vec![0.0, 1.0, 0.9, 0.9 * 0.9]);
    }
}

//! Outlet temperature of a pipeline under plug flow with heat loss.
//!
//! All window arguments are indexed by lag: `flows[k]` is the mass flow
//! `k` periods before the evaluated period, `k = 0..=depth`, and
//! `temps[k]` the matching inlet temperature.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FillError {
    #[error("window holds {available:.1} kg of water but the pipe needs {required:.1} kg")]
    WindowTooShallow { available: f64, required: f64 },
    #[error("mass flow {lag} periods back is not positive")]
    NonPositiveFlow { lag: usize },
    #[error("window has {found} entries, expected {expected}")]
    WindowLength { found: usize, expected: usize },
}

/// Geometry and thermal constants reduced to what the outlet models need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipeParams {
    /// Water held by the pipe `ρ A L`, kg.
    pub water_mass: f64,
    /// Period length, s.
    pub dt: f64,
    /// Temperature decay rate `λ / (A ρ c)`, 1/s.
    pub decay_rate: f64,
    /// Number of past periods in the window.
    pub depth: usize,
}

impl PipeParams {
    pub fn new(length: f64, area: f64, lambda: f64, rho: f64, c: f64, dt: f64, depth: usize) -> Self {
        Self {
            water_mass: rho * area * length,
            dt,
            decay_rate: lambda / (area * rho * c),
            depth,
        }
    }
}

/// Fill weights of the water column: `alpha` covers the water inside the pipe
/// at the end of the period, `beta` the same plus what left during it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WaterColumnWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl WaterColumnWeights {
    pub fn alpha_sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// `Σ_{k≥1} β_k`.
    pub fn beta_tail_sum(&self) -> f64 {
        self.beta.iter().skip(1).sum()
    }

    /// Residence time estimate `(Δτ/2)(Σα + Σ_{k≥1}β)`, s.
    pub fn transit(&self, dt: f64) -> f64 {
        0.5 * dt * (self.alpha_sum() + self.beta_tail_sum())
    }

    /// Outflow weights `β_k − α_k`.
    pub fn outflow(&self) -> Vec<f64> {
        self.beta.iter().zip(&self.alpha).map(|(b, a)| b - a).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutletResult {
    /// Mass-weighted inlet temperature of the water leaving in the period.
    pub t_lossless: f64,
    pub t_out: f64,
    /// Residence time estimate, s.
    pub transit: f64,
}

fn check_window(params: &PipeParams, flows: &[f64]) -> Result<(), FillError> {
    if flows.len() != params.depth + 1 {
        return Err(FillError::WindowLength {
            found: flows.len(),
            expected: params.depth + 1,
        });
    }
    if let Some(lag) = flows.iter().position(|m| !(*m > 0.0)) {
        return Err(FillError::NonPositiveFlow { lag });
    }
    Ok(())
}

/// Greedy fill of `masses` (newest first) with ones until `target` is reached;
/// the entry that crosses it gets the fractional remainder. An exact fill
/// leaves the next entry at zero.
fn front_fill(target: f64, masses: &[f64]) -> (Vec<f64>, f64) {
    let mut weights = vec![0.0; masses.len()];
    let mut filled = 0.0;
    for (k, &mass) in masses.iter().enumerate() {
        let remaining = target - filled;
        if remaining <= 1e-12 * target {
            break;
        }
        let w = (remaining / mass).min(1.0);
        weights[k] = w;
        filled += w * mass;
        if w < 1.0 {
            filled = target;
            break;
        }
    }
    (weights, filled)
}

/// Computes the fill weights for one period.
pub fn fill_weights(params: &PipeParams, flows: &[f64]) -> Result<WaterColumnWeights, FillError> {
    check_window(params, flows)?;
    let masses: Vec<f64> = flows.iter().map(|m| m * params.dt).collect();
    let available: f64 = masses[1..].iter().sum();
    if available < params.water_mass * (1.0 - 1e-12) {
        return Err(FillError::WindowTooShallow {
            available,
            required: params.water_mass,
        });
    }
    let (alpha, _) = front_fill(params.water_mass, &masses);
    let (tail, _) = front_fill(params.water_mass, &masses[1..]);
    let mut beta = Vec::with_capacity(masses.len());
    beta.push(1.0);
    beta.extend(tail);
    Ok(WaterColumnWeights { alpha, beta })
}

/// `Σ (β_k − α_k) m_k t_k / m_0`.
pub fn wmm_lossless(flows: &[f64], temps: &[f64], weights: &WaterColumnWeights) -> Result<f64, FillError> {
    if !(flows[0] > 0.0) {
        return Err(FillError::NonPositiveFlow { lag: 0 });
    }
    let mut acc = 0.0;
    for k in 0..flows.len() {
        acc += (weights.beta[k] - weights.alpha[k]) * flows[k] * temps[k];
    }
    Ok(acc / flows[0])
}

/// Exponential relaxation toward ambient over `residence` seconds.
pub fn decay(params: &PipeParams, t: f64, ambient: f64, residence: f64) -> f64 {
    ambient + (t - ambient) * (-params.decay_rate * residence).exp()
}

pub fn wmm_outlet(params: &PipeParams, flows: &[f64], temps: &[f64], ambient: f64) -> Result<OutletResult, FillError> {
    let weights = fill_weights(params, flows)?;
    let t_lossless = wmm_lossless(flows, temps, &weights)?;
    let transit = weights.transit(params.dt);
    Ok(OutletResult {
        t_lossless,
        t_out: decay(params, t_lossless, ambient, transit),
        transit,
    })
}

/// Index form of the same water accounting: `gamma`/`phi` are the shortest
/// prefixes covering the pipe volume with and without the current period,
/// and `coefficients[k]` weights the inlet temperature `k` periods back.
#[derive(Debug, Clone, PartialEq)]
pub struct NmState {
    pub gamma: usize,
    pub phi: usize,
    pub r: f64,
    pub s: f64,
    pub coefficients: Vec<f64>,
}

pub fn nm_state(params: &PipeParams, flows: &[f64]) -> Result<NmState, FillError> {
    check_window(params, flows)?;
    let w = params.water_mass;
    let masses: Vec<f64> = flows.iter().map(|m| m * params.dt).collect();
    let available: f64 = masses[1..].iter().sum();
    if available < w * (1.0 - 1e-12) {
        return Err(FillError::WindowTooShallow {
            available,
            required: w,
        });
    }
    // Prefix sums C_k = Σ_{j=0..k} masses[j].
    let prefix: Vec<f64> = masses
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m;
            Some(*acc)
        })
        .collect();
    let gamma = prefix.iter().position(|&c| c >= w).expect("window covers the pipe");
    let phi = (1..masses.len())
        .find(|&k| prefix[k] - masses[0] >= w)
        .unwrap_or(masses.len() - 1);
    let r = prefix[gamma];
    let s = if phi > gamma { prefix[phi - 1] } else { r };
    let out = masses[0];
    let mut coefficients = vec![0.0; masses.len()];
    coefficients[phi] += (out + w - s) / out;
    for k in (gamma + 1)..phi {
        coefficients[k] += masses[k] / out;
    }
    coefficients[gamma] += (r - w) / out;
    Ok(NmState {
        gamma,
        phi,
        r,
        s,
        coefficients,
    })
}

pub fn nm_outlet(params: &PipeParams, flows: &[f64], temps: &[f64], ambient: f64) -> Result<OutletResult, FillError> {
    let state = nm_state(params, flows)?;
    let t_lossless: f64 = state.coefficients.iter().zip(temps).map(|(k, t)| k * t).sum();
    let periods = state.gamma as f64 + 0.5 + (state.s - state.r) / (flows[state.gamma] * params.dt);
    let transit = periods * params.dt;
    Ok(OutletResult {
        t_lossless,
        t_out: decay(params, t_lossless, ambient, transit),
        transit,
    })
}

/// Outlet temperature for constant flow: residence time `ρAL/m`.
pub fn steady_outlet(params: &PipeParams, m: f64, t_in: f64, ambient: f64) -> Result<f64, FillError> {
    if !(m > 0.0) {
        return Err(FillError::NonPositiveFlow { lag: 0 });
    }
    Ok(decay(params, t_in, ambient, params.water_mass / m))
}

/// Steady loss factor `exp(−λ L / (c m))` and its derivative in `m`.
pub fn steady_factor(params: &PipeParams, m: f64) -> (f64, f64) {
    let k = params.decay_rate * params.water_mass;
    let f = (-k / m).exp();
    (f, f * k / (m * m))
}

/// Partial derivatives of the fractional (front) weights with respect to the
/// window flows. Entries equal to 0 or 1 have zero derivative; derivative
/// jumps at exact fills are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSensitivity {
    pub alpha_front: Option<usize>,
    /// `∂α_front/∂m_j` by lag `j`.
    pub alpha_grad: Vec<f64>,
    pub beta_front: Option<usize>,
    pub beta_grad: Vec<f64>,
}

pub fn weight_sensitivity(flows: &[f64], weights: &WaterColumnWeights) -> WeightSensitivity {
    let n = flows.len();
    let front = |w: &[f64], start: usize| (start..n).find(|&k| w[k] > 0.0 && w[k] < 1.0);
    let grad = |w: &[f64], f: Option<usize>, start: usize| {
        let mut g = vec![0.0; n];
        if let Some(f) = f {
            for j in start..f {
                g[j] = -1.0 / flows[f];
            }
            g[f] = -w[f] / flows[f];
        }
        g
    };
    let alpha_front = front(&weights.alpha, 0);
    let beta_front = front(&weights.beta, 1);
    WeightSensitivity {
        alpha_front,
        alpha_grad: grad(&weights.alpha, alpha_front, 0),
        beta_front,
        beta_grad: grad(&weights.beta, beta_front, 1),
    }
}

/// Parcel-tracking reference simulation.
///
/// `flows` and `temps` are per period in chronological order; each period is
/// split into `substeps` slices whose inflow enters as one parcel. The pipe
/// starts full of water at `temps[0]`. Returns the outflow-mass-weighted
/// outlet temperature of every period.
pub fn plugflow_oracle(
    params: &PipeParams,
    flows: &[f64],
    temps: &[f64],
    ambient: &[f64],
    substeps: usize,
) -> Result<Vec<f64>, FillError> {
    assert!(substeps >= 1);
    if let Some(lag) = flows.iter().position(|m| !(*m > 0.0)) {
        return Err(FillError::NonPositiveFlow { lag });
    }
    struct Parcel {
        mass: f64,
        temp: f64,
        entered: f64,
    }
    let h = params.dt / substeps as f64;
    let mut pipe: VecDeque<Parcel> = VecDeque::new();
    pipe.push_back(Parcel {
        mass: params.water_mass,
        temp: temps[0],
        entered: -params.water_mass / flows[0],
    });
    let mut out = Vec::with_capacity(flows.len());
    for (period, (&m, &t_in)) in flows.iter().zip(temps).enumerate() {
        let mut energy = 0.0;
        let mut mass_out = 0.0;
        for step in 0..substeps {
            let now = period as f64 * params.dt + (step as f64 + 0.5) * h;
            let slice = m * h;
            pipe.push_back(Parcel {
                mass: slice,
                temp: t_in,
                entered: now,
            });
            let mut to_remove = slice;
            while to_remove > 1e-12 * slice {
                let Some(front) = pipe.front_mut() else { break };
                let take = front.mass.min(to_remove);
                energy += take * decay(params, front.temp, ambient[period], now - front.entered);
                mass_out += take;
                front.mass -= take;
                to_remove -= take;
                if front.mass <= 1e-12 * params.water_mass {
                    pipe.pop_front();
                }
            }
        }
        out.push(energy / mass_out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_params() -> PipeParams {
        PipeParams::new(1750.0, 0.5, 0.12, 1e3, 4.2e3, 3600.0, 3)
    }

    const FLOWS: [f64; 4] = [120.21, 185.52, 113.68, 116.10];
    const TEMPS: [f64; 4] = [110.0, 100.0, 90.0, 80.0];

    #[test]
    fn table_weights() {
        let w = fill_weights(&table_params(), &FLOWS).unwrap();
        let expect_a = [1.0, 0.6621, 0.0, 0.0];
        let expect_b = [1.0, 1.0, 0.5061, 0.0];
        for k in 0..4 {
            assert!((w.alpha[k] - expect_a[k]).abs() < 1e-4);
            assert!((w.beta[k] - expect_b[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn table_node_method() {
        let s = nm_state(&table_params(), &FLOWS).unwrap();
        assert_eq!((s.gamma, s.phi), (1, 2));
        // lags 0..=3 are periods 12, 11, 10, 9
        assert!((s.coefficients[2] - 0.4786).abs() < 1e-4);
        assert!((s.coefficients[1] - 0.5214).abs() < 1e-4);
        let r = nm_outlet(&table_params(), &FLOWS, &TEMPS, 10.0).unwrap();
        // printed coefficients applied to the period temperatures
        assert!((r.t_lossless - (0.5214 * 100.0 + 0.4786 * 90.0)).abs() < 1e-3);
        let factor = (-0.12_f64 * 1.5 * 3600.0 / (0.5 * 1e3 * 4.2e3)).exp();
        assert!((r.t_out - (10.0 + (r.t_lossless - 10.0) * factor)).abs() < 1e-12);
        assert!((r.transit - 1.5 * 3600.0).abs() < 1e-9);
    }

    #[test]
    fn exact_fill_leaves_next_weight_zero() {
        let p = PipeParams::new(1.0, 1.0, 0.0, 1000.0, 4200.0, 10.0, 3);
        let w = fill_weights(&p, &[100.0; 4]).unwrap();
        assert_eq!(w.alpha, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(w.beta, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn shallow_window_rejected() {
        let p = PipeParams::new(1.0, 1.0, 0.0, 1000.0, 4200.0, 1.0, 2);
        assert!(matches!(fill_weights(&p, &[100.0; 3]), Err(FillError::WindowTooShallow { .. })));
    }

    #[test]
    fn zero_loss_keeps_lossless_temperature() {
        let p = PipeParams::new(1750.0, 0.5, 0.0, 1e3, 4.2e3, 3600.0, 3);
        let r = wmm_outlet(&p, &FLOWS, &TEMPS, 10.0).unwrap();
        assert_eq!(r.t_out, r.t_lossless);
    }

    #[test]
    fn steady_limits() {
        let p = table_params();
        assert_eq!(steady_outlet(&p, 120.21, 10.0, 10.0).unwrap(), 10.0);
        assert!((steady_outlet(&p, 1e12, 80.0, 10.0).unwrap() - 80.0).abs() < 1e-9);
        assert!(steady_outlet(&p, 0.0, 80.0, 10.0).is_err());
    }
}

//! Network instances: geometry, channels, noise, candidate clusters, and the
//! physical-layer quantities evaluated on them (rates, powers, NPC).

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{c, cholesky_hpd, eigh, CMat};
use crate::precoder::PrecoderSet;

pub const PATH_LOSS_INTERCEPT_DB: f64 = 148.1;
pub const PATH_LOSS_SLOPE_DB: f64 = 37.6;
pub const SHADOWING_STD_DB: f64 = 8.0;
pub const ANTENNA_GAIN_DBI: f64 = 9.0;
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Offsets (in cell widths) of the eight surrounding macrocells, in draw order.
const NEIGHBOR_CELLS: [(f64, f64); 8] =
    [(-1.0, -1.0), (0.0, -1.0), (1.0, -1.0), (-1.0, 0.0), (1.0, 0.0), (-1.0, 1.0), (0.0, 1.0), (1.0, 1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_rrhs: usize,
    pub num_users: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub streams: usize,
    pub candidate_size: usize,
    /// Half the side of the square region, meters.
    pub region_half_width: f64,
    /// Per-user rate target, nats/s/Hz.
    pub rate_min: f64,
    pub rng_seed: u64,
    /// Thermal noise power, dBm.
    #[serde(default = "default_noise_dbm")]
    pub noise_dbm: f64,
    /// Transmit power of each macrocell interferer, W.
    #[serde(default = "default_interferer_power")]
    pub interferer_power: f64,
}

fn default_noise_dbm() -> f64 {
    -104.0
}

fn default_interferer_power() -> f64 {
    4.0
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_rrhs: 12,
            num_users: 8,
            tx_antennas: 2,
            rx_antennas: 2,
            streams: 2,
            candidate_size: 3,
            region_half_width: 1000.0,
            rate_min: 2.0,
            rng_seed: 1,
            noise_dbm: default_noise_dbm(),
            interferer_power: default_interferer_power(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.num_rrhs == 0 || self.num_users == 0 {
            return err("need at least one RRH and one user");
        }
        if self.streams == 0 || self.streams > self.tx_antennas.min(self.rx_antennas) {
            return err("streams must satisfy 1 <= d <= min(M, N)");
        }
        if self.candidate_size == 0 || self.candidate_size > self.num_rrhs {
            return err("candidate size must satisfy 1 <= X <= I");
        }
        if !(self.rate_min >= 0.0) || !self.rate_min.is_finite() {
            return err("rate_min must be finite and nonnegative");
        }
        if !(self.region_half_width > 0.0) {
            return err("region_half_width must be positive");
        }
        if !self.noise_dbm.is_finite() || !(self.interferer_power >= 0.0) {
            return err("noise and interferer power must be finite");
        }
        Ok(())
    }

    /// Thermal noise power in watts.
    pub fn noise_power(&self) -> f64 {
        db_to_linear(self.noise_dbm - 30.0)
    }
}

/// A per-RRH parameter given either once for all RRHs or as a full list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRrh {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerRrh {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            PerRrh::Uniform(v) => *v,
            PerRrh::Each(v) => v[i],
        }
    }

    fn check(&self, name: &str, num_rrhs: usize, ok: impl Fn(f64) -> bool) -> Result<()> {
        let values: Vec<f64> = match self {
            PerRrh::Uniform(v) => vec![*v],
            PerRrh::Each(v) => {
                if v.len() != num_rrhs {
                    return Err(CoreError::Config(format!("{name} has {} entries for {num_rrhs} RRHs", v.len())));
                }
                v.clone()
            }
        };
        if values.iter().all(|v| v.is_finite() && ok(*v)) {
            Ok(())
        } else {
            Err(CoreError::Config(format!("{name} out of range")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    /// Amplifier inefficiency.
    pub eta: PerRrh,
    /// Fronthaul power per unit rate, W per nat/s/Hz.
    pub rho: PerRrh,
    /// Per-antenna RRH power when active / asleep, W.
    pub p_active_rrh: PerRrh,
    pub p_sleep_rrh: PerRrh,
    /// Per-link fronthaul power when active / asleep, W.
    pub p_active_fr: PerRrh,
    pub p_sleep_fr: PerRrh,
    pub p_bbu: f64,
    /// Per-RRH transmit power cap, W.
    pub p_max: PerRrh,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            eta: PerRrh::Uniform(4.0),
            rho: PerRrh::Uniform(0.5),
            p_active_rrh: PerRrh::Uniform(3.4),
            p_sleep_rrh: PerRrh::Uniform(2.15),
            p_active_fr: PerRrh::Uniform(3.85),
            p_sleep_fr: PerRrh::Uniform(0.75),
            p_bbu: 20.0,
            p_max: PerRrh::Uniform(4.0),
        }
    }
}

impl PowerModel {
    pub fn validate(&self, num_rrhs: usize) -> Result<()> {
        self.eta.check("eta", num_rrhs, |v| v > 1.0)?;
        self.rho.check("rho", num_rrhs, |v| v >= 0.0)?;
        for (name, p) in [
            ("p_active_rrh", &self.p_active_rrh),
            ("p_sleep_rrh", &self.p_sleep_rrh),
            ("p_active_fr", &self.p_active_fr),
            ("p_sleep_fr", &self.p_sleep_fr),
        ] {
            p.check(name, num_rrhs, |v| v >= 0.0)?;
        }
        self.p_max.check("p_max", num_rrhs, |v| v > 0.0)?;
        for i in 0..num_rrhs {
            if self.p_active_rrh.get(i) < self.p_sleep_rrh.get(i) || self.p_active_fr.get(i) < self.p_sleep_fr.get(i) {
                return Err(CoreError::Config(format!("RRH {i}: active power below sleep power")));
            }
        }
        if !(self.p_bbu >= 0.0) {
            return Err(CoreError::Config("p_bbu must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn eta(&self, i: usize) -> f64 {
        self.eta.get(i)
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.rho.get(i)
    }

    pub fn p_max(&self, i: usize) -> f64 {
        self.p_max.get(i)
    }

    /// `P_i^c = M (P^{a,rrh} - P^{s,rrh}) + P^{a,fr} - P^{s,fr}`.
    pub fn circuit_power(&self, i: usize, tx_antennas: usize) -> f64 {
        tx_antennas as f64 * (self.p_active_rrh.get(i) - self.p_sleep_rrh.get(i)) + self.p_active_fr.get(i)
            - self.p_sleep_fr.get(i)
    }

    /// `P_i^s = M P^{s,rrh} + P^{s,fr}`.
    pub fn sleep_power(&self, i: usize, tx_antennas: usize) -> f64 {
        tx_antennas as f64 * self.p_sleep_rrh.get(i) + self.p_sleep_fr.get(i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    pub config: NetworkConfig,
    pub power_model: PowerModel,
    pub rrh_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    /// `H_{i,k}` (N x M) stored at `i * K + k`.
    channels: Vec<CMat>,
    pub noise_powers: Vec<f64>,
    /// `I_k`, ascending.
    pub candidate_rrhs: Vec<Vec<usize>>,
    /// `U_i`, ascending.
    pub candidate_users: Vec<Vec<usize>>,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// LTE path loss in dB for a distance in meters (clamped below at 1 m).
pub fn path_loss_db(distance_m: f64) -> f64 {
    PATH_LOSS_INTERCEPT_DB + PATH_LOSS_SLOPE_DB * (distance_m.max(MIN_DISTANCE_M) / 1000.0).log10()
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl NetworkInstance {
    /// Builds an instance from explicit data; `candidate_rrhs[k]` lists user
    /// `k`'s cluster. Positions may be empty for synthetic instances.
    pub fn from_parts(
        config: NetworkConfig,
        power_model: PowerModel,
        rrh_positions: Vec<[f64; 2]>,
        user_positions: Vec<[f64; 2]>,
        channels: Vec<CMat>,
        noise_powers: Vec<f64>,
        candidate_rrhs: Vec<Vec<usize>>,
    ) -> Result<Self> {
        config.validate()?;
        power_model.validate(config.num_rrhs)?;
        let (ni, nk) = (config.num_rrhs, config.num_users);
        if channels.len() != ni * nk || noise_powers.len() != nk || candidate_rrhs.len() != nk {
            return Err(CoreError::Dimension("channels, noise or candidate lists".into()));
        }
        for h in &channels {
            if h.nrows() != config.rx_antennas || h.ncols() != config.tx_antennas {
                return Err(CoreError::Dimension(format!("channel is {}x{}", h.nrows(), h.ncols())));
            }
        }
        if noise_powers.iter().any(|s| !(*s > 0.0)) {
            return Err(CoreError::Config("noise powers must be positive".into()));
        }
        let mut candidate_users = vec![Vec::new(); ni];
        let mut sorted_rrhs = Vec::with_capacity(nk);
        for (k, list) in candidate_rrhs.into_iter().enumerate() {
            let set: BTreeSet<usize> = list.into_iter().collect();
            if set.is_empty() || set.iter().any(|&i| i >= ni) {
                return Err(CoreError::Config(format!("user {k} has an invalid candidate set")));
            }
            for &i in &set {
                candidate_users[i].push(k);
            }
            sorted_rrhs.push(set.into_iter().collect());
        }
        Ok(Self {
            config,
            power_model,
            rrh_positions,
            user_positions,
            channels,
            noise_powers,
            candidate_rrhs: sorted_rrhs,
            candidate_users,
        })
    }

    pub fn num_rrhs(&self) -> usize {
        self.config.num_rrhs
    }

    pub fn num_users(&self) -> usize {
        self.config.num_users
    }

    /// `H_{i,k}`: channel from RRH `i` to user `k`.
    pub fn channel(&self, i: usize, k: usize) -> &CMat {
        &self.channels[i * self.config.num_users + k]
    }

    pub fn rate_min(&self) -> f64 {
        self.config.rate_min
    }

    /// Union of the candidate sets of `users`.
    pub fn candidate_union(&self, users: &[usize]) -> BTreeSet<usize> {
        users.iter().flat_map(|&k| self.candidate_rrhs[k].iter().copied()).collect()
    }

    /// Same instance with a different per-user rate target.
    pub fn with_rate_min(&self, rate_min: f64) -> Self {
        let mut out = self.clone();
        out.config.rate_min = rate_min;
        out
    }
}

/// Draws a network per the simulation setup. Draw order: RRH positions,
/// user positions, access-link shadowing, fast fading, interferer shadowing.
pub fn generate_instance(config: &NetworkConfig, power_model: &PowerModel) -> Result<NetworkInstance> {
    config.validate()?;
    power_model.validate(config.num_rrhs)?;
    let (ni, nk, n, m) = (config.num_rrhs, config.num_users, config.rx_antennas, config.tx_antennas);
    let w = config.region_half_width;
    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let position = |rng: &mut ChaCha20Rng| [rng.random_range(-w..w), rng.random_range(-w..w)];
    let rrh_positions: Vec<[f64; 2]> = (0..ni).map(|_| position(&mut rng)).collect();
    let user_positions: Vec<[f64; 2]> = (0..nk).map(|_| position(&mut rng)).collect();

    let shadow = Normal::new(0.0, SHADOWING_STD_DB).expect("positive std");
    let mut gains = Vec::with_capacity(ni * nk);
    for rrh in &rrh_positions {
        for user in &user_positions {
            let db = -path_loss_db(distance(*rrh, *user)) + shadow.sample(&mut rng) + ANTENNA_GAIN_DBI;
            gains.push(db_to_linear(db));
        }
    }

    let half = 0.5f64.sqrt();
    let mut channels = Vec::with_capacity(ni * nk);
    for gain in &gains {
        let amp = gain.sqrt();
        let mut h = CMat::zeros(n, m);
        for col in 0..m {
            for row in 0..n {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                h[(row, col)] = c(re * half * amp, im * half * amp);
            }
        }
        channels.push(h);
    }

    let cell = 2.0 * w;
    let sigma2 = config.noise_power();
    let noise_powers = user_positions
        .iter()
        .map(|user| {
            let interference: f64 = NEIGHBOR_CELLS
                .iter()
                .map(|&(dx, dy)| {
                    let bs = [dx * cell, dy * cell];
                    let db = -path_loss_db(distance(bs, *user)) + shadow.sample(&mut rng) + ANTENNA_GAIN_DBI;
                    config.interferer_power * db_to_linear(db)
                })
                .sum();
            sigma2 + interference
        })
        .collect();

    let candidate_rrhs = user_positions
        .iter()
        .map(|user| {
            let mut order: Vec<usize> = (0..ni).collect();
            order.sort_by(|&a, &b| {
                distance(rrh_positions[a], *user).total_cmp(&distance(rrh_positions[b], *user)).then(a.cmp(&b))
            });
            order.truncate(config.candidate_size);
            order
        })
        .collect();

    NetworkInstance::from_parts(
        config.clone(),
        power_model.clone(),
        rrh_positions,
        user_positions,
        channels,
        noise_powers,
        candidate_rrhs,
    )
}

/// JSON replay format; channels as column-major real/imaginary arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSnapshot {
    pub config: NetworkConfig,
    pub power_model: PowerModel,
    pub rrh_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub noise_powers: Vec<f64>,
    pub candidate_rrhs: Vec<Vec<usize>>,
    pub channels: Vec<ChannelRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub rrh: usize,
    pub user: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl NetworkInstance {
    pub fn to_snapshot(&self) -> InstanceSnapshot {
        let nk = self.num_users();
        let channels = self
            .channels
            .iter()
            .enumerate()
            .map(|(idx, h)| ChannelRecord {
                rrh: idx / nk,
                user: idx % nk,
                re: h.iter().map(|z| z.re).collect(),
                im: h.iter().map(|z| z.im).collect(),
            })
            .collect();
        InstanceSnapshot {
            config: self.config.clone(),
            power_model: self.power_model.clone(),
            rrh_positions: self.rrh_positions.clone(),
            user_positions: self.user_positions.clone(),
            noise_powers: self.noise_powers.clone(),
            candidate_rrhs: self.candidate_rrhs.clone(),
            channels,
        }
    }

    pub fn from_snapshot(snap: InstanceSnapshot) -> Result<Self> {
        let (ni, nk) = (snap.config.num_rrhs, snap.config.num_users);
        let (n, m) = (snap.config.rx_antennas, snap.config.tx_antennas);
        let mut channels = vec![CMat::zeros(n, m); ni * nk];
        let mut seen = vec![false; ni * nk];
        for rec in snap.channels {
            if rec.rrh >= ni || rec.user >= nk || rec.re.len() != n * m || rec.im.len() != n * m {
                return Err(CoreError::Dimension(format!("channel record ({}, {})", rec.rrh, rec.user)));
            }
            let idx = rec.rrh * nk + rec.user;
            let vals: Vec<_> = rec.re.iter().zip(&rec.im).map(|(r, i)| c(*r, *i)).collect();
            channels[idx] = CMat::from_column_slice(n, m, &vals);
            seen[idx] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(CoreError::Dimension("snapshot is missing channel records".into()));
        }
        Self::from_parts(
            snap.config,
            snap.power_model,
            snap.rrh_positions,
            snap.user_positions,
            channels,
            snap.noise_powers,
            snap.candidate_rrhs,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_snapshot())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_snapshot(serde_json::from_str(text)?)
    }
}

/// `H̄_{j,k} V̄_j = sum_{i in I_j} H_{i,k} V_{i,j}`: user `j`'s signal at user `k` (N x d).
pub fn signal_matrix(instance: &NetworkInstance, precoders: &PrecoderSet, j: usize, k: usize) -> CMat {
    let cfg = &instance.config;
    let mut out = CMat::zeros(cfg.rx_antennas, precoders.streams());
    for i in precoders.cluster(j) {
        let v = precoders.block(i, j).expect("cluster block");
        out += instance.channel(i, k) * v;
    }
    out
}

/// `H̄_{j,k} = [H_{i,k}, i in I_j]` for the cluster of `j` in `precoders`.
pub fn cluster_channel(instance: &NetworkInstance, precoders: &PrecoderSet, j: usize, k: usize) -> CMat {
    let cluster = precoders.cluster(j);
    let (n, m) = (instance.config.rx_antennas, instance.config.tx_antennas);
    let mut out = CMat::zeros(n, cluster.len() * m);
    for (pos, i) in cluster.iter().enumerate() {
        out.columns_mut(pos * m, m).copy_from(instance.channel(*i, k));
    }
    out
}

/// `J_k = sum_{j != k} H̄_{j,k} V̄_j V̄_j^H H̄_{j,k}^H + sigma_k^2 I`.
pub fn interference_covariance(instance: &NetworkInstance, precoders: &PrecoderSet, k: usize) -> CMat {
    let n = instance.config.rx_antennas;
    let mut j_k = CMat::identity(n, n) * c(instance.noise_powers[k], 0.0);
    for j in precoders.users() {
        if j != k {
            let s = signal_matrix(instance, precoders, j, k);
            j_k += &s * s.adjoint();
        }
    }
    j_k
}

/// Achievable rate of user `k` in nats/s/Hz, treating the other users of
/// `precoders` as interference.
pub fn user_rate(instance: &NetworkInstance, precoders: &PrecoderSet, k: usize) -> f64 {
    let j_k = interference_covariance(instance, precoders, k);
    let chol = cholesky_hpd(&j_k).expect("interference-plus-noise covariance is positive definite");
    let signal = signal_matrix(instance, precoders, k, k);
    let whitened = chol.l().solve_lower_triangular(&signal).expect("nonsingular factor");
    let gram = whitened.adjoint() * &whitened;
    let (vals, _): (DVector<f64>, _) = eigh(&gram);
    vals.iter().map(|v| v.max(0.0).ln_1p()).sum()
}

/// Rates of every user of the instance; users without precoders get 0.
pub fn user_rates(instance: &NetworkInstance, precoders: &PrecoderSet) -> Vec<f64> {
    (0..instance.num_users())
        .map(|k| if precoders.has_user(k) { user_rate(instance, precoders, k) } else { 0.0 })
        .collect()
}

/// Network power consumption, W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcBreakdown {
    /// `sum_{i in A} P_i^tr`.
    pub transmit_power_total: f64,
    /// `sum_{i in A} eta_i P_i^tr`.
    pub amplifier_power: f64,
    pub fronthaul_rate_power: f64,
    pub active_circuit_power: f64,
    pub sleep_power: f64,
    pub bbu_power: f64,
    pub objective_value: f64,
    pub full_npc: f64,
    pub active_set: Vec<usize>,
}

/// NPC of `precoders` with the RRHs of `active` switched on. `rates` is
/// indexed by user; the fronthaul of RRH `i` carries the users holding a
/// block at `i`.
pub fn npc(
    instance: &NetworkInstance,
    precoders: &PrecoderSet,
    rates: &[f64],
    active: &BTreeSet<usize>,
) -> Result<NpcBreakdown> {
    let pm = &instance.power_model;
    let m = instance.config.tx_antennas;
    for i in precoders.rrhs() {
        if !active.contains(&i) && precoders.transmit_power(i) > 0.0 {
            return Err(CoreError::InactiveTransmits(i));
        }
    }
    if rates.len() != instance.num_users() {
        return Err(CoreError::Dimension("rates must be indexed by user".into()));
    }
    let (mut tx, mut amp, mut fr, mut circ) = (0.0, 0.0, 0.0, 0.0);
    for &i in active {
        if i >= instance.num_rrhs() {
            return Err(CoreError::Dimension(format!("RRH {i} out of range")));
        }
        let p = precoders.transmit_power(i);
        tx += p;
        amp += pm.eta(i) * p;
        fr += pm.rho(i) * precoders.served_users(i).iter().map(|&k| rates[k]).sum::<f64>();
        circ += pm.circuit_power(i, m);
    }
    let sleep: f64 = (0..instance.num_rrhs()).map(|i| pm.sleep_power(i, m)).sum();
    let objective = amp + fr + circ;
    Ok(NpcBreakdown {
        transmit_power_total: tx,
        amplifier_power: amp,
        fronthaul_rate_power: fr,
        active_circuit_power: circ,
        sleep_power: sleep,
        bbu_power: pm.p_bbu,
        objective_value: objective,
        full_npc: objective + sleep + pm.p_bbu,
        active_set: active.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss_db(1000.0) - 148.1).abs() < 1e-12);
        assert!((path_loss_db(100.0) - 110.5).abs() < 1e-12);
        assert_eq!(path_loss_db(0.0), path_loss_db(1.0));
    }

    #[test]
    fn circuit_and_sleep_constants() {
        let pm = PowerModel::default();
        assert!((pm.circuit_power(0, 2) - 5.6).abs() < 1e-12);
        assert!((pm.sleep_power(0, 2) - 5.05).abs() < 1e-12);
    }

    #[test]
    fn noise_power_in_watts() {
        let cfg = NetworkConfig::default();
        assert!((cfg.noise_power() / 3.981e-14 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn per_rrh_values_parse_as_scalar_or_list() {
        let s: PerRrh = serde_json::from_str("4.0").unwrap();
        assert_eq!(s.get(7), 4.0);
        let l: PerRrh = serde_json::from_str("[1.5, 2.0]").unwrap();
        assert_eq!(l.get(1), 2.0);
        assert!(l.check("p", 3, |_| true).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_streams() {
        let cfg = NetworkConfig { streams: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = NetworkConfig { candidate_size: 13, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}

//! Rate-MSE machinery: MSE matrices, the concave lower bound `h_k`, and the
//! closed-form receiver and weight updates.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::linalg::{c, cholesky_hpd, hermitian_part, identity, inv_hpd_regularized, log_det_hpd, trace_prod_re, CMat};
use crate::network::{signal_matrix, NetworkInstance};
use crate::precoder::PrecoderSet;

/// Floor applied to the optimal MSE matrix before inversion.
pub const MSE_EIGEN_FLOOR: f64 = 1e-12;

/// Receive filters `U_k` (N x d) and weights `W_k` (d x d) per user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiverState {
    pub filters: BTreeMap<usize, CMat>,
    pub weights: BTreeMap<usize, CMat>,
}

impl ReceiverState {
    pub fn filter(&self, k: usize) -> &CMat {
        &self.filters[&k]
    }

    pub fn weight(&self, k: usize) -> &CMat {
        &self.weights[&k]
    }
}

/// `sum_j H̄_{j,k} V̄_j V̄_j^H H̄_{j,k}^H + sigma_k^2 I` over every user of `precoders`.
pub fn received_covariance(instance: &NetworkInstance, precoders: &PrecoderSet, k: usize) -> CMat {
    let n = instance.config.rx_antennas;
    let mut r = identity(n) * c(instance.noise_powers[k], 0.0);
    for j in precoders.users() {
        let s = signal_matrix(instance, precoders, j, k);
        r += &s * s.adjoint();
    }
    r
}

/// `E_k = (U^H H̄_kk V̄_k - I)(.)^H + sum_{j != k} U^H H̄_jk V̄_j V̄_j^H H̄_jk^H U + sigma^2 U^H U`.
pub fn mse_matrix(instance: &NetworkInstance, precoders: &PrecoderSet, u: &CMat, k: usize) -> CMat {
    let d = precoders.streams();
    let mut e = CMat::zeros(d, d);
    for j in precoders.users() {
        let mut a = u.adjoint() * signal_matrix(instance, precoders, j, k);
        if j == k {
            a -= identity(d);
        }
        e += &a * a.adjoint();
    }
    e += u.adjoint() * u * c(instance.noise_powers[k], 0.0);
    hermitian_part(&e)
}

/// MMSE receiver and the matching weight `W = E^{-1}`.
pub fn optimal_receiver_and_weight(instance: &NetworkInstance, precoders: &PrecoderSet, k: usize) -> (CMat, CMat) {
    let d = precoders.streams();
    let r = received_covariance(instance, precoders, k);
    let t = signal_matrix(instance, precoders, k, k);
    let chol = cholesky_hpd(&r).expect("received covariance is positive definite");
    let u = chol.solve(&t);
    let e = hermitian_part(&(identity(d) - t.adjoint() * &u));
    let w = inv_hpd_regularized(&e, MSE_EIGEN_FLOOR);
    (u, w)
}

/// Optimal `(U_k, W_k)` for every user of `precoders`.
pub fn update_receivers(instance: &NetworkInstance, precoders: &PrecoderSet) -> ReceiverState {
    let mut state = ReceiverState::default();
    for k in precoders.users() {
        let (u, w) = optimal_receiver_and_weight(instance, precoders, k);
        state.filters.insert(k, u);
        state.weights.insert(k, w);
    }
    state
}

/// `h_k = log det W - Tr(W E_k) + d`, a lower bound on the rate of user `k`.
pub fn h_lower_bound(instance: &NetworkInstance, precoders: &PrecoderSet, u: &CMat, w: &CMat, k: usize) -> Result<f64> {
    let log_det = log_det_hpd(w).ok_or_else(|| CoreError::NotPositiveDefinite(format!("W_{k}")))?;
    let e = mse_matrix(instance, precoders, u, k);
    Ok(log_det - trace_prod_re(w, &e) + precoders.streams() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkConfig, PowerModel};

    fn scalar_instance() -> (NetworkInstance, PrecoderSet) {
        let cfg = NetworkConfig {
            num_rrhs: 1,
            num_users: 1,
            tx_antennas: 1,
            rx_antennas: 1,
            streams: 1,
            candidate_size: 1,
            rate_min: 0.5,
            ..Default::default()
        };
        let inst = NetworkInstance::from_parts(
            cfg,
            PowerModel::default(),
            vec![],
            vec![],
            vec![CMat::from_element(1, 1, c(1.0, 0.0))],
            vec![1.0],
            vec![vec![0]],
        )
        .unwrap();
        let mut p = PrecoderSet::zeros(&inst, &[0], None);
        *p.block_mut(0, 0).unwrap() = CMat::from_element(1, 1, c(1.0, 0.0));
        (inst, p)
    }

    #[test]
    fn scalar_receiver_weight_and_bound() {
        let (inst, p) = scalar_instance();
        let (u, w) = optimal_receiver_and_weight(&inst, &p, 0);
        assert!((u[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!((w[(0, 0)].re - 2.0).abs() < 1e-12);
        let e = mse_matrix(&inst, &p, &u, 0);
        assert!((e[(0, 0)].re - 0.5).abs() < 1e-14);
        let h = h_lower_bound(&inst, &p, &u, &w, 0).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_filter_gives_identity_mse() {
        let (inst, p) = scalar_instance();
        let e = mse_matrix(&inst, &p, &CMat::zeros(1, 1), 0);
        assert_eq!(e, identity(1));
    }

    #[test]
    fn zero_precoder_gives_trivial_update() {
        let (inst, mut p) = scalar_instance();
        p.zero_user(0);
        let (u, w) = optimal_receiver_and_weight(&inst, &p, 0);
        assert_eq!(u, CMat::zeros(1, 1));
        assert!((w[(0, 0)].re - 1.0).abs() < 1e-15);
        let e = mse_matrix(&inst, &p, &CMat::from_element(1, 1, c(0.3, 0.4)), 0);
        assert!((e[(0, 0)].re - 1.25).abs() < 1e-14);
    }

    #[test]
    fn bound_rejects_indefinite_weight() {
        let (inst, p) = scalar_instance();
        let w = CMat::from_element(1, 1, c(-1.0, 0.0));
        assert!(h_lower_bound(&inst, &p, &CMat::zeros(1, 1), &w, 0).is_err());
    }
}

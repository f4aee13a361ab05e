//! Per-(RRH, user) precoding blocks and the stacked big precoders.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{fro2, CMat, C64};
use crate::network::NetworkInstance;

/// Precoders `V_{i,k}` (M x d) for the links in use.
///
/// The serving cluster of user `k` is exactly the set of RRHs holding a block
/// for `k`; stacks run over that cluster in ascending RRH order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    m: usize,
    d: usize,
    users: BTreeSet<usize>,
    // keyed (user, rrh) so that a user's cluster is a contiguous range
    blocks: BTreeMap<(usize, usize), CMat>,
}

impl PrecoderSet {
    pub fn empty(m: usize, d: usize) -> Self {
        Self { m, d, users: BTreeSet::new(), blocks: BTreeMap::new() }
    }

    /// Zero blocks for every user in `users` and every candidate RRH of that
    /// user that also belongs to `active` (all candidates when `None`).
    pub fn zeros(instance: &NetworkInstance, users: &[usize], active: Option<&BTreeSet<usize>>) -> Self {
        let cfg = &instance.config;
        let mut set = Self::empty(cfg.tx_antennas, cfg.streams);
        for &k in users {
            set.users.insert(k);
            for &i in &instance.candidate_rrhs[k] {
                if active.is_none_or(|a| a.contains(&i)) {
                    set.blocks.insert((k, i), CMat::zeros(set.m, set.d));
                }
            }
        }
        set
    }

    pub fn tx_antennas(&self) -> usize {
        self.m
    }

    pub fn streams(&self) -> usize {
        self.d
    }

    pub fn users(&self) -> Vec<usize> {
        self.users.iter().copied().collect()
    }

    pub fn has_user(&self, k: usize) -> bool {
        self.users.contains(&k)
    }

    /// Serving RRHs of user `k`, ascending.
    pub fn cluster(&self, k: usize) -> Vec<usize> {
        self.blocks.range((k, 0)..(k + 1, 0)).map(|(&(_, i), _)| i).collect()
    }

    /// Users holding a block at RRH `i`, ascending.
    pub fn served_users(&self, i: usize) -> Vec<usize> {
        self.blocks.keys().filter(|&&(_, r)| r == i).map(|&(k, _)| k).collect()
    }

    /// RRHs holding at least one block.
    pub fn rrhs(&self) -> BTreeSet<usize> {
        self.blocks.keys().map(|&(_, i)| i).collect()
    }

    pub fn block(&self, i: usize, k: usize) -> Option<&CMat> {
        self.blocks.get(&(k, i))
    }

    pub fn block_mut(&mut self, i: usize, k: usize) -> Option<&mut CMat> {
        self.blocks.get_mut(&(k, i))
    }

    /// Inserts or replaces a block; the user joins the user set.
    pub fn insert(&mut self, i: usize, k: usize, block: CMat) -> Result<()> {
        if block.nrows() != self.m || block.ncols() != self.d {
            return Err(CoreError::Dimension(format!(
                "block ({i},{k}) is {}x{}, expected {}x{}",
                block.nrows(),
                block.ncols(),
                self.m,
                self.d
            )));
        }
        self.users.insert(k);
        self.blocks.insert((k, i), block);
        Ok(())
    }

    /// Iterates `((rrh, user), block)` in (user, rrh) order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &CMat)> {
        self.blocks.iter().map(|(&(k, i), b)| ((i, k), b))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = ((usize, usize), &mut CMat)> {
        self.blocks.iter_mut().map(|(&(k, i), b)| ((i, k), b))
    }

    /// `P_i^tr = sum_k ||V_{i,k}||_F^2`.
    pub fn transmit_power(&self, i: usize) -> f64 {
        self.blocks.iter().filter(|(&(_, r), _)| r == i).map(|(_, b)| fro2(b)).sum()
    }

    pub fn user_power(&self, k: usize) -> f64 {
        self.blocks.range((k, 0)..(k + 1, 0)).map(|(_, b)| fro2(b)).sum()
    }

    /// Drops every block at RRHs outside `active`.
    pub fn restrict(&self, active: &BTreeSet<usize>) -> Self {
        let mut out = Self::empty(self.m, self.d);
        out.users = self.users.clone();
        for (&(k, i), b) in &self.blocks {
            if active.contains(&i) {
                out.blocks.insert((k, i), b.clone());
            }
        }
        out
    }

    /// Sets every block of user `k` to zero.
    pub fn zero_user(&mut self, k: usize) {
        for (_, b) in self.blocks.range_mut((k, 0)..(k + 1, 0)) {
            b.fill(C64::new(0.0, 0.0));
        }
    }

    /// Replaces user `k`'s blocks from a stacked `|I_k| M x d` matrix.
    pub fn set_stack(&mut self, k: usize, stack: &CMat) -> Result<()> {
        let cluster = self.cluster(k);
        if stack.nrows() != cluster.len() * self.m || stack.ncols() != self.d {
            return Err(CoreError::Dimension(format!("stack for user {k}")));
        }
        for (pos, i) in cluster.into_iter().enumerate() {
            let rows = stack.rows(pos * self.m, self.m).clone_owned();
            self.blocks.insert((k, i), rows);
        }
        Ok(())
    }

    /// Scales every block by `s`.
    pub fn scale(&mut self, s: f64) {
        for b in self.blocks.values_mut() {
            *b *= C64::new(s, 0.0);
        }
    }
}

/// `V̄_k`: the blocks of user `k` stacked in ascending RRH order.
pub fn stack_big_precoder(precoders: &PrecoderSet, k: usize) -> Result<CMat> {
    if !precoders.has_user(k) {
        return Err(CoreError::MissingBlock { rrh: usize::MAX, user: k });
    }
    let cluster = precoders.cluster(k);
    let (m, d) = (precoders.m, precoders.d);
    let mut out = CMat::zeros(cluster.len() * m, d);
    for (pos, i) in cluster.iter().enumerate() {
        let block = precoders.block(*i, k).ok_or(CoreError::MissingBlock { rrh: *i, user: k })?;
        out.rows_mut(pos * m, m).copy_from(block);
    }
    Ok(out)
}

/// Checks that every candidate link of every user (restricted to `active`) has a block.
pub fn check_complete(
    precoders: &PrecoderSet,
    instance: &NetworkInstance,
    active: Option<&BTreeSet<usize>>,
) -> Result<()> {
    for k in precoders.users() {
        for &i in &instance.candidate_rrhs[k] {
            if active.is_none_or(|a| a.contains(&i)) && precoders.block(i, k).is_none() {
                return Err(CoreError::MissingBlock { rrh: i, user: k });
            }
        }
    }
    Ok(())
}

/// Serializable form: blocks as real/imaginary column-major arrays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrecoderRecord {
    pub rrh: usize,
    pub user: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl PrecoderSet {
    pub fn to_records(&self) -> Vec<PrecoderRecord> {
        self.iter()
            .map(|((i, k), b)| PrecoderRecord {
                rrh: i,
                user: k,
                re: b.iter().map(|z| z.re).collect(),
                im: b.iter().map(|z| z.im).collect(),
            })
            .collect()
    }
}

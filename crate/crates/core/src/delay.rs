//! Fixed per-link integer delays and the delay-augmented matrices.
//!
//! A message sent by `j` at step `k` is available to `i` at step `k + τ_ij`.
//! Self-links are never delayed, so `w_ii` always lives in `W_0`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, mat_pow};
use crate::network::SensorNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum DelayScheme {
    /// Every link delayed by exactly `τ̄`.
    Constant,
    /// Each link draws its delay uniformly from `0..=τ̄`.
    UniformRandom {
        #[serde(default)]
        asymmetric: bool,
    },
    /// Explicit `(i, j, τ)` triples. Symmetric unless `asymmetric` is set,
    /// in which case each triple sets only the `j → i` direction.
    PerLink {
        links: Vec<(usize, usize, i64)>,
        #[serde(default)]
        asymmetric: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    n: usize,
    tau_bar: usize,
    /// `(receiver, sender) -> τ`.
    tau: BTreeMap<(usize, usize), usize>,
}

impl DelayProfile {
    pub fn assign<R: Rng + ?Sized>(
        net: &SensorNetwork,
        scheme: &DelayScheme,
        tau_bar: i64,
        rng: &mut R,
    ) -> Result<Self> {
        if tau_bar < 0 {
            return Err(Error::param(format!(
                "max delay must be >= 0, got {tau_bar}"
            )));
        }
        let bar = tau_bar as usize;
        let mut tau = BTreeMap::new();
        match scheme {
            DelayScheme::Constant => {
                for &(a, b) in net.edges() {
                    tau.insert((a, b), bar);
                    tau.insert((b, a), bar);
                }
            }
            DelayScheme::UniformRandom { asymmetric } => {
                for &(a, b) in net.edges() {
                    let d = rng.random_range(0..=bar);
                    tau.insert((a, b), d);
                    let back = if *asymmetric {
                        rng.random_range(0..=bar)
                    } else {
                        d
                    };
                    tau.insert((b, a), back);
                }
            }
            DelayScheme::PerLink { links, asymmetric } => {
                for &(i, j, d) in links {
                    if !net.has_edge(i, j) {
                        return Err(Error::param(format!("delay given for non-link ({i}, {j})")));
                    }
                    if d < 0 || d > tau_bar {
                        return Err(Error::param(format!(
                            "delay {d} on ({i}, {j}) outside [0, {tau_bar}]"
                        )));
                    }
                    tau.insert((i, j), d as usize);
                    if !asymmetric {
                        tau.insert((j, i), d as usize);
                    }
                }
                for &(a, b) in net.edges() {
                    if !tau.contains_key(&(a, b)) || !tau.contains_key(&(b, a)) {
                        return Err(Error::param(format!("no delay given for link ({a}, {b})")));
                    }
                }
            }
        }
        Ok(DelayProfile {
            n: net.len(),
            tau_bar: bar,
            tau,
        })
    }

    /// Same delays with the bound lowered to the realized maximum. The
    /// dropped history blocks only add eigenvalues at zero.
    pub fn trimmed(&self) -> Self {
        DelayProfile {
            tau_bar: self.realized_max(),
            ..self.clone()
        }
    }

    /// All links in the off-diagonal support of `w` delayed by `tau`.
    pub fn uniform_on_support(w: &DMatrix<f64>, tau: usize) -> Self {
        let n = w.nrows();
        let mut map = BTreeMap::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && w[(i, j)] != 0.0 {
                    map.insert((i, j), tau);
                }
            }
        }
        DelayProfile {
            n,
            tau_bar: tau,
            tau: map,
        }
    }

    /// All links delayed by `tau`.
    pub fn uniform(net: &SensorNetwork, tau: usize) -> Self {
        let mut map = BTreeMap::new();
        for &(a, b) in net.edges() {
            map.insert((a, b), tau);
            map.insert((b, a), tau);
        }
        DelayProfile {
            n: net.len(),
            tau_bar: tau,
            tau: map,
        }
    }

    pub fn tau_bar(&self) -> usize {
        self.tau_bar
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Delay on information flowing from `j` into `i`.
    pub fn delay(&self, i: usize, j: usize) -> Result<usize> {
        self.tau
            .get(&(i, j))
            .copied()
            .ok_or_else(|| Error::param(format!("({i}, {j}) is not a link")))
    }

    /// Directed `(receiver, sender, τ)` entries.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.tau.iter().map(|(&(i, j), &d)| (i, j, d))
    }

    /// Largest delay actually assigned.
    pub fn realized_max(&self) -> usize {
        self.tau.values().copied().max().unwrap_or(0)
    }

    pub fn indicator(&self, i: usize, j: usize, r: usize) -> Result<u8> {
        Ok(u8::from(self.delay(i, j)? == r))
    }

    fn check_weights(&self, w: &DMatrix<f64>) -> Result<()> {
        if w.shape() != (self.n, self.n) {
            return Err(Error::param(format!(
                "weights are {}x{}, delay profile covers {} nodes",
                w.nrows(),
                w.ncols(),
                self.n
            )));
        }
        Ok(())
    }

    /// `W_r(i, j) = w_ij` when `τ_ij = r`, else zero. Diagonal goes to `W_0`.
    pub fn w_r(&self, w: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
        self.check_weights(w)?;
        let mut out = DMatrix::zeros(self.n, self.n);
        if r == 0 {
            for i in 0..self.n {
                out[(i, i)] = w[(i, i)];
            }
        }
        for (&(i, j), &d) in &self.tau {
            if d == r {
                out[(i, j)] = w[(i, j)];
            }
        }
        Ok(out)
    }

    /// `W̄`: top block row `[W_0 … W_τ̄]`, identity blocks on the sub-diagonal.
    pub fn augmented_w(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let blocks = (0..=self.tau_bar)
            .map(|r| self.w_r(w, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(companion(&blocks))
    }

    /// `W̄F`: top block row `[W_0 ⊗ F, W_1 ⊗ F², …, W_τ̄ ⊗ F^{τ̄+1}]`,
    /// identity blocks on the sub-diagonal.
    pub fn augmented_wf(&self, w: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !f.is_square() {
            return Err(Error::param("transition matrix must be square"));
        }
        let blocks = (0..=self.tau_bar)
            .map(|r| Ok(kron(&self.w_r(w, r)?, &mat_pow(f, r + 1))))
            .collect::<Result<Vec<_>>>()?;
        Ok(companion(&blocks))
    }
}

/// Block companion layout: given top-row blocks `A_0..A_m` of size `s`,
/// returns the `s(m+1)` square matrix with identities below the diagonal.
pub(crate) fn companion(top: &[DMatrix<f64>]) -> DMatrix<f64> {
    let s = top[0].nrows();
    let m = top.len();
    let mut out = DMatrix::zeros(s * m, s * m);
    for (r, blk) in top.iter().enumerate() {
        out.view_mut((0, r * s), (s, s)).copy_from(blk);
    }
    for r in 1..m {
        out.view_mut((r * s, (r - 1) * s), (s, s))
            .fill_with_identity();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cycle6() -> SensorNetwork {
        SensorNetwork::build(&Topology::Cycle, 6)
            .unwrap()
            .design_weights()
            .unwrap()
    }

    fn pair() -> SensorNetwork {
        SensorNetwork::build(&Topology::Cycle, 2)
            .unwrap()
            .design_weights()
            .unwrap()
    }

    #[test]
    fn constant_zero_is_delay_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = DelayProfile::assign(&cycle6(), &DelayScheme::Constant, 0, &mut rng).unwrap();
        assert!(p.links().all(|(_, _, d)| d == 0));
        assert_eq!(p.links().count(), 12);
    }

    #[test]
    fn uniform_random_is_bounded_and_seeded() {
        let scheme = DelayScheme::UniformRandom { asymmetric: false };
        let net = cycle6();
        let a = DelayProfile::assign(&net, &scheme, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = DelayProfile::assign(&net, &scheme, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        for (i, j, d) in a.links() {
            assert!(d <= 8);
            assert_eq!(a.delay(j, i).unwrap(), d);
        }
    }

    #[test]
    fn per_link_list() {
        let net = pair();
        let scheme = DelayScheme::PerLink {
            links: vec![(0, 1, 3)],
            asymmetric: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = DelayProfile::assign(&net, &scheme, 3, &mut rng).unwrap();
        assert_eq!(p.delay(0, 1).unwrap(), 3);
        assert_eq!(p.delay(1, 0).unwrap(), 3);

        let too_big = DelayScheme::PerLink {
            links: vec![(0, 1, 4)],
            asymmetric: false,
        };
        assert!(DelayProfile::assign(&net, &too_big, 3, &mut rng).is_err());
        let negative = DelayScheme::PerLink {
            links: vec![(0, 1, -1)],
            asymmetric: false,
        };
        assert!(DelayProfile::assign(&net, &negative, 3, &mut rng).is_err());
        assert!(DelayProfile::assign(&net, &DelayScheme::Constant, -1, &mut rng).is_err());
        let missing = DelayScheme::PerLink {
            links: vec![(0, 1, 1)],
            asymmetric: true,
        };
        assert!(DelayProfile::assign(&net, &missing, 3, &mut rng).is_err());
    }

    #[test]
    fn indicator_examples() {
        let net = pair();
        let scheme = DelayScheme::PerLink {
            links: vec![(0, 1, 3)],
            asymmetric: false,
        };
        let p = DelayProfile::assign(&net, &scheme, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.indicator(0, 1, 3).unwrap(), 1);
        assert_eq!(p.indicator(0, 1, 0).unwrap(), 0);
        assert_eq!(
            (0..=5).map(|r| p.indicator(0, 1, r).unwrap()).sum::<u8>(),
            1
        );
        assert!(p.indicator(0, 0, 0).is_err());
    }

    #[test]
    fn w_r_examples() {
        let net = cycle6();
        let w = net.weights().unwrap();
        let p0 = DelayProfile::uniform(&net, 0);
        assert_eq!(&p0.w_r(w, 0).unwrap(), w);

        let pair = pair();
        let w2 = pair.weights().unwrap();
        let scheme = DelayScheme::PerLink {
            links: vec![(0, 1, 2)],
            asymmetric: false,
        };
        let p = DelayProfile::assign(&pair, &scheme, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.w_r(w2, 2).unwrap()[(0, 1)], w2[(0, 1)]);
        for r in [0, 1, 3] {
            assert_eq!(p.w_r(w2, r).unwrap()[(0, 1)], 0.0);
        }
        assert_eq!(p.w_r(w2, 0).unwrap()[(0, 0)], w2[(0, 0)]);
    }

    #[test]
    fn augmented_w_small_layout() {
        let pair = pair();
        let w = pair.weights().unwrap();
        let scheme = DelayScheme::PerLink {
            links: vec![(0, 1, 1)],
            asymmetric: false,
        };
        let p = DelayProfile::assign(&pair, &scheme, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let wb = p.augmented_w(w).unwrap();
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(4, 4, &[
            0.5, 0.0, 0.0, 0.5,
            0.0, 0.5, 0.5, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
        ]);
        assert_eq!(wb, expect);
        assert_eq!(&DelayProfile::uniform(&pair, 0).augmented_w(w).unwrap(), w);
    }

    #[test]
    fn augmented_wf_reductions() {
        let net = cycle6();
        let w = net.weights().unwrap();
        let f = crate::dynamics::NcvModel::isotropic(1.0, 0.0).unwrap();
        let f = DMatrix::from_iterator(6, 6, f.transition().iter().cloned());
        let p0 = DelayProfile::uniform(&net, 0);
        assert_eq!(p0.augmented_wf(w, &f).unwrap(), kron(w, &f));

        let pair = pair();
        let p1 = DelayProfile::uniform(&pair, 1);
        assert_eq!(
            p1.augmented_wf(pair.weights().unwrap(), &f)
                .unwrap()
                .shape(),
            (24, 24)
        );
    }

    #[test]
    fn identity_transition_matches_w_bar_kron() {
        // With F = I the two constructions coincide exactly, block for block.
        let net = cycle6();
        let w = net.weights().unwrap();
        let scheme = DelayScheme::UniformRandom { asymmetric: true };
        let p = DelayProfile::assign(&net, &scheme, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let i6 = DMatrix::identity(6, 6);
        let wf = p.augmented_wf(w, &i6).unwrap();
        let wb = p.augmented_w(w).unwrap();
        assert_eq!(wf, kron(&wb, &i6));
    }
}

//! The per-node delayed consensus filter and its global augmented form.
//!
//! Every node runs one consensus-predict and one innovation-update per
//! dynamics step:
//!
//! ```text
//! prior_i     = w_ii F x̂_i(k-1) + Σ_j w_ij F^{τ_ij+1} x̂_j(k-1-τ_ij)
//! posterior_i = prior_i + K_i H_iᵀ (y_i - H_i prior_i)
//! ```
//!
//! Neighbor estimates travel as time-stamped messages. For send steps before
//! zero the node falls back to the neighbor's initial estimate, which is the
//! same as padding the augmented history with the initial estimates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::delay::DelayProfile;
use crate::error::{Error, Result};
use crate::linalg::{block_diag, mat_pow};
use crate::measurement::LinearTdoaModel;
use crate::network::SensorNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: usize,
    pub send_step: i64,
    pub estimate: Vector6<f64>,
}

#[derive(Debug, Clone)]
struct Link {
    sender: usize,
    weight: f64,
    delay: usize,
    /// `F^{τ+1}`
    propagator: Matrix6<f64>,
}

#[derive(Debug, Clone)]
pub struct NodeFilter {
    id: usize,
    gain: Matrix6<f64>,
    h: DMatrix<f64>,
    self_weight: f64,
    f: Matrix6<f64>,
    links: Vec<Link>,
    inbox: BTreeMap<(usize, i64), Vector6<f64>>,
    /// Neighbor estimates at step 0, used for send steps < 0.
    initial: BTreeMap<usize, Vector6<f64>>,
    prior: Vector6<f64>,
    posterior: Vector6<f64>,
    consumed: usize,
}

impl NodeFilter {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn posterior(&self) -> &Vector6<f64> {
        &self.posterior
    }

    pub fn prior(&self) -> &Vector6<f64> {
        &self.prior
    }

    pub fn gain(&self) -> &Matrix6<f64> {
        &self.gain
    }

    pub fn inbox_len(&self) -> usize {
        self.inbox.len()
    }

    pub fn receive(&mut self, msg: Message) {
        self.inbox.insert((msg.sender, msg.send_step), msg.estimate);
    }

    /// Consensus-predict for step `k >= 1`. Consumes the messages it uses.
    pub fn predict(&mut self, k: i64) -> Result<Vector6<f64>> {
        let mut prior = self.f * self.posterior * self.self_weight;
        for link in &self.links {
            let send_step = k - 1 - link.delay as i64;
            let est = if send_step < 0 {
                *self
                    .initial
                    .get(&link.sender)
                    .ok_or(Error::ProtocolViolation {
                        node: self.id,
                        sender: link.sender,
                        send_step,
                    })?
            } else {
                let est = self.inbox.remove(&(link.sender, send_step)).ok_or(
                    Error::ProtocolViolation {
                        node: self.id,
                        sender: link.sender,
                        send_step,
                    },
                )?;
                self.consumed += 1;
                est
            };
            prior += link.propagator * est * link.weight;
        }
        self.prior = prior;
        Ok(prior)
    }

    /// Innovation update of `prior` with the debiased measurement `y`.
    pub fn update(&mut self, prior: &Vector6<f64>, y: &DVector<f64>) -> Result<Vector6<f64>> {
        let posterior = innovation_update(&self.gain, &self.h, prior, y)?;
        self.posterior = posterior;
        Ok(posterior)
    }

    /// Messages consumed so far.
    pub fn consumed(&self) -> usize {
        self.consumed
    }
}

/// `prior + K Hᵀ (y − H prior)`.
pub fn innovation_update(
    gain: &Matrix6<f64>,
    h: &DMatrix<f64>,
    prior: &Vector6<f64>,
    y: &DVector<f64>,
) -> Result<Vector6<f64>> {
    if h.ncols() != 6 || y.len() != h.nrows() {
        return Err(Error::param(format!(
            "measurement of length {} does not fit a {}x{} H",
            y.len(),
            h.nrows(),
            h.ncols()
        )));
    }
    let p = DVector::from_column_slice(prior.as_slice());
    let innov = y - h * &p;
    let corr = h.transpose() * innov;
    Ok(prior + gain * Vector6::from_column_slice(corr.as_slice()))
}

/// Block-diagonal gains, one 6x6 block per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub blocks: Vec<Matrix6<f64>>,
}

impl GainSet {
    pub fn zeros(n: usize) -> Self {
        GainSet {
            blocks: vec![Matrix6::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `K = diag[K_i]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = self
            .blocks
            .iter()
            .map(|k| DMatrix::from_column_slice(6, 6, k.as_slice()))
            .collect();
        block_diag(&blocks)
    }
}

/// Everything the message-passing filter needs besides the measurements.
#[derive(Debug, Clone)]
pub struct FilterSetup<'a> {
    pub net: &'a SensorNetwork,
    pub profile: &'a DelayProfile,
    pub transition: &'a Matrix6<f64>,
    pub measurement: &'a LinearTdoaModel,
    pub gains: &'a GainSet,
}

impl FilterSetup<'_> {
    fn check(&self) -> Result<()> {
        let n = self.net.len();
        if self.profile.len() != n || self.measurement.len() != n || self.gains.len() != n {
            return Err(Error::param(format!(
                "network has {n} sensors but profile/measurement/gains cover {}/{}/{}",
                self.profile.len(),
                self.measurement.len(),
                self.gains.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub emitted: usize,
    pub delivered: usize,
}

/// All node filters plus the links between them, advanced in lockstep.
#[derive(Debug, Clone)]
pub struct DistributedFilter {
    nodes: Vec<NodeFilter>,
    /// arrival step -> (receiver, message)
    in_flight: BTreeMap<i64, Vec<(usize, Message)>>,
    /// `(receiver, sender) -> τ`
    delays: Vec<(usize, usize, usize)>,
    step: i64,
    emitted: usize,
}

impl DistributedFilter {
    pub fn new(setup: &FilterSetup<'_>, initial: &[Vector6<f64>]) -> Result<Self> {
        setup.check()?;
        let n = setup.net.len();
        if initial.len() != n {
            return Err(Error::param(format!(
                "need {n} initial estimates, got {}",
                initial.len()
            )));
        }
        let w = setup.net.require_weights()?;
        let f = DMatrix::from_column_slice(6, 6, setup.transition.as_slice());
        let mut powers: BTreeMap<usize, Matrix6<f64>> = BTreeMap::new();
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let mut links = Vec::new();
            let mut init = BTreeMap::new();
            for &j in setup.net.neighbors(i) {
                let delay = setup.profile.delay(i, j)?;
                let propagator = *powers.entry(delay).or_insert_with(|| {
                    Matrix6::from_column_slice(mat_pow(&f, delay + 1).as_slice())
                });
                links.push(Link {
                    sender: j,
                    weight: w[(i, j)],
                    delay,
                    propagator,
                });
                init.insert(j, initial[j]);
            }
            nodes.push(NodeFilter {
                id: i,
                gain: setup.gains.blocks[i],
                h: setup.measurement.h(i).clone(),
                self_weight: w[(i, i)],
                f: *setup.transition,
                links,
                inbox: BTreeMap::new(),
                initial: init,
                prior: initial[i],
                posterior: initial[i],
                consumed: 0,
            });
        }
        let delays = setup.profile.links().collect();
        let mut filter = DistributedFilter {
            nodes,
            in_flight: BTreeMap::new(),
            delays,
            step: 0,
            emitted: 0,
        };
        filter.emit();
        Ok(filter)
    }

    pub fn nodes(&self) -> &[NodeFilter] {
        &self.nodes
    }

    pub fn step_index(&self) -> i64 {
        self.step
    }

    pub fn posteriors(&self) -> Vec<Vector6<f64>> {
        self.nodes.iter().map(|n| n.posterior).collect()
    }

    pub fn total_emitted(&self) -> usize {
        self.emitted
    }

    pub fn total_consumed(&self) -> usize {
        self.nodes.iter().map(|n| n.consumed).sum()
    }

    /// Messages sent but not yet placed in an inbox.
    pub fn in_flight(&self) -> usize {
        self.in_flight.values().map(Vec::len).sum()
    }

    /// Each node sends its current posterior to every neighbor; the copy
    /// for `i` arrives `τ_ij` steps later.
    fn emit(&mut self) -> usize {
        let mut count = 0;
        for &(receiver, sender, delay) in &self.delays {
            let msg = Message {
                sender,
                send_step: self.step,
                estimate: self.nodes[sender].posterior,
            };
            self.in_flight
                .entry(self.step + delay as i64)
                .or_default()
                .push((receiver, msg));
            count += 1;
        }
        self.emitted += count;
        count
    }

    fn deliver_until(&mut self, step: i64) -> usize {
        let mut count = 0;
        while let Some(entry) = self.in_flight.first_entry() {
            if *entry.key() > step {
                break;
            }
            for (receiver, msg) in entry.remove() {
                self.nodes[receiver].receive(msg);
                count += 1;
            }
        }
        count
    }

    /// Advances every node by one dynamics step using the debiased
    /// measurements of that step (one vector per node).
    pub fn run_step(&mut self, measurements: &[DVector<f64>]) -> Result<StepStats> {
        if measurements.len() != self.nodes.len() {
            return Err(Error::param(format!(
                "need {} measurement vectors, got {}",
                self.nodes.len(),
                measurements.len()
            )));
        }
        let k = self.step + 1;
        let delivered = self.deliver_until(k - 1);
        for (node, y) in self.nodes.iter_mut().zip(measurements) {
            let prior = node.predict(k)?;
            node.update(&prior, y)?;
        }
        self.step = k;
        let emitted = self.emit();
        Ok(StepStats { emitted, delivered })
    }
}

/// The same filter written on the stacked, delay-augmented state. Used as an
/// oracle for the message-passing implementation and for analysis.
#[derive(Debug, Clone)]
pub struct AugmentedFilter {
    wf_bar: DMatrix<f64>,
    gain: DMatrix<f64>,
    d_h: DMatrix<f64>,
    state: DVector<f64>,
    block: usize,
}

impl AugmentedFilter {
    /// `gain` is the stacked block-diagonal `K`, `d_h` is `diag[H_i]`.
    pub fn new(
        wf_bar: DMatrix<f64>,
        gain: DMatrix<f64>,
        d_h: DMatrix<f64>,
        initial: &[Vector6<f64>],
    ) -> Result<Self> {
        let block = initial.len() * 6;
        if gain.shape() != (block, block) || d_h.ncols() != block {
            return Err(Error::param(
                "gain or D_H does not match the stacked state size",
            ));
        }
        if !wf_bar.is_square() || !wf_bar.nrows().is_multiple_of(block) || wf_bar.nrows() == 0 {
            return Err(Error::param(
                "augmented matrix size is not a multiple of 6N",
            ));
        }
        let depth = wf_bar.nrows() / block;
        let mut state = DVector::zeros(wf_bar.nrows());
        for r in 0..depth {
            for (i, x) in initial.iter().enumerate() {
                state.rows_mut(r * block + 6 * i, 6).copy_from(x);
            }
        }
        Ok(AugmentedFilter {
            wf_bar,
            gain,
            d_h,
            state,
            block,
        })
    }

    /// Starts from an explicit augmented state instead of padded initial estimates.
    pub fn with_state(
        wf_bar: DMatrix<f64>,
        gain: DMatrix<f64>,
        d_h: DMatrix<f64>,
        state: DVector<f64>,
    ) -> Result<Self> {
        let block = gain.nrows();
        if block == 0 || !block.is_multiple_of(6) || !gain.is_square() || d_h.ncols() != block {
            return Err(Error::param(
                "gain or D_H does not match the stacked state size",
            ));
        }
        if !wf_bar.is_square()
            || !wf_bar.nrows().is_multiple_of(block)
            || state.len() != wf_bar.nrows()
        {
            return Err(Error::param("augmented matrix and state sizes disagree"));
        }
        Ok(AugmentedFilter {
            wf_bar,
            gain,
            d_h,
            state,
            block,
        })
    }

    pub fn from_setup(setup: &FilterSetup<'_>, initial: &[Vector6<f64>]) -> Result<Self> {
        setup.check()?;
        let w = setup.net.require_weights()?;
        let f = DMatrix::from_column_slice(6, 6, setup.transition.as_slice());
        let wf_bar = setup.profile.augmented_wf(w, &f)?;
        Self::new(
            wf_bar,
            setup.gains.stacked(),
            setup.measurement.stacked_block_diag(),
            initial,
        )
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    /// Current network-wide posterior (first block).
    pub fn current(&self) -> Vec<Vector6<f64>> {
        (0..self.block / 6)
            .map(|i| Vector6::from_column_slice(self.state.rows(6 * i, 6).as_slice()))
            .collect()
    }

    /// One step with the stacked debiased measurement `y_k`.
    pub fn step(&mut self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.d_h.nrows() {
            return Err(Error::param(format!(
                "stacked measurement has {} rows, D_H has {}",
                y.len(),
                self.d_h.nrows()
            )));
        }
        let mut prior = &self.wf_bar * &self.state;
        let first = prior.rows(0, self.block).into_owned();
        let innov = y - &self.d_h * &first;
        let corr = &self.gain * (self.d_h.transpose() * innov);
        let mut head = prior.rows_mut(0, self.block);
        head += corr;
        self.state = prior;
        Ok(())
    }
}

/// Concatenates per-node measurements in node order.
pub fn stack_measurements(parts: &[DVector<f64>]) -> DVector<f64> {
    let len = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(p);
        r += p.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayScheme;
    use crate::dynamics::NcvModel;
    use crate::network::Topology;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        net: SensorNetwork,
        model: NcvModel,
        meas: LinearTdoaModel,
    }

    fn fixture(n: usize, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SensorNetwork::build(&Topology::Cycle, n)
            .unwrap()
            .place_uniform(0.0, 10.0, &mut rng)
            .unwrap()
            .design_weights()
            .unwrap();
        let model = NcvModel::isotropic(1.0, 0.0).unwrap();
        let meas = LinearTdoaModel::new(&net, 0.0).unwrap();
        Fixture { net, model, meas }
    }

    fn random_gains(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> GainSet {
        GainSet {
            blocks: (0..n)
                .map(|_| Matrix6::from_fn(|_, _| scale * (rng.random::<f64>() - 0.5)))
                .collect(),
        }
    }

    #[test]
    fn zero_gain_is_open_loop() {
        let h = DMatrix::from_row_slice(1, 6, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let prior = Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let y = DVector::from_element(1, 9.0);
        assert_eq!(
            innovation_update(&Matrix6::zeros(), &h, &prior, &y).unwrap(),
            prior
        );
        let zero_innov = DVector::from_element(1, 1.0);
        let k = Matrix6::identity() * 0.3;
        assert_eq!(
            innovation_update(&k, &h, &prior, &zero_innov).unwrap(),
            prior
        );
    }

    #[test]
    fn scalar_update_by_hand() {
        let h = DMatrix::from_row_slice(1, 6, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let k = Matrix6::from_diagonal_element(0.25);
        let prior = Vector6::new(2.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let y = DVector::from_element(1, 6.0);
        let post = innovation_update(&k, &h, &prior, &y).unwrap();
        assert_eq!(post[0], 3.0);
        assert!(innovation_update(&k, &h, &prior, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn delay_free_pair_averages() {
        let fx = fixture(2, 1);
        let profile = DelayProfile::uniform(&fx.net, 0);
        let gains = GainSet::zeros(2);
        let setup = FilterSetup {
            net: &fx.net,
            profile: &profile,
            transition: fx.model.transition(),
            measurement: &fx.meas,
            gains: &gains,
        };
        let x1 = Vector6::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let x2 = Vector6::new(3.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        let mut filt = DistributedFilter::new(&setup, &[x1, x2]).unwrap();
        let y = vec![DVector::zeros(1), DVector::zeros(1)];
        filt.run_step(&y).unwrap();
        let f = fx.model.transition();
        let expect = f * x1 * 0.5 + f * x2 * 0.5;
        assert!((filt.posteriors()[0] - expect).abs().max() < 1e-15);
    }

    #[test]
    fn delayed_neighbor_uses_higher_power() {
        let fx = fixture(2, 2);
        let scheme = DelayScheme::PerLink {
            links: vec![(0, 1, 2)],
            asymmetric: false,
        };
        let profile =
            DelayProfile::assign(&fx.net, &scheme, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let gains = GainSet::zeros(2);
        let setup = FilterSetup {
            net: &fx.net,
            profile: &profile,
            transition: fx.model.transition(),
            measurement: &fx.meas,
            gains: &gains,
        };
        let x1 = Vector6::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let x2 = Vector6::new(5.0, 0.0, 0.0, 0.0, 2.0, 0.0);
        let mut filt = DistributedFilter::new(&setup, &[x1, x2]).unwrap();
        let y = vec![DVector::zeros(1), DVector::zeros(1)];
        // Step 1 reaches back to send step -2: the initial estimate with F³.
        filt.run_step(&y).unwrap();
        let f = DMatrix::from_column_slice(6, 6, fx.model.transition().as_slice());
        let f3 = Matrix6::from_column_slice(mat_pow(&f, 3).as_slice());
        let expect = fx.model.transition() * x1 * 0.5 + f3 * x2 * 0.5;
        assert!((filt.posteriors()[0] - expect).abs().max() < 1e-14);
    }

    #[test]
    fn missing_message_is_a_protocol_violation() {
        let fx = fixture(2, 3);
        let profile = DelayProfile::uniform(&fx.net, 0);
        let gains = GainSet::zeros(2);
        let setup = FilterSetup {
            net: &fx.net,
            profile: &profile,
            transition: fx.model.transition(),
            measurement: &fx.meas,
            gains: &gains,
        };
        let mut filt = DistributedFilter::new(&setup, &[Vector6::zeros(); 2]).unwrap();
        let y = vec![DVector::zeros(1), DVector::zeros(1)];
        filt.run_step(&y).unwrap();
        // Drop everything in flight: the next predict cannot find its input.
        filt.in_flight.clear();
        assert!(matches!(
            filt.run_step(&y),
            Err(Error::ProtocolViolation { .. })
        ));
    }

    #[test]
    fn single_time_scale_message_counts() {
        let fx = fixture(6, 4);
        let profile = DelayProfile::assign(
            &fx.net,
            &DelayScheme::UniformRandom { asymmetric: false },
            3,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let gains = GainSet::zeros(6);
        let setup = FilterSetup {
            net: &fx.net,
            profile: &profile,
            transition: fx.model.transition(),
            measurement: &fx.meas,
            gains: &gains,
        };
        let mut filt = DistributedFilter::new(&setup, &[Vector6::zeros(); 6]).unwrap();
        let y: Vec<_> = (0..6).map(|_| DVector::zeros(2)).collect();
        for _ in 0..20 {
            let stats = filt.run_step(&y).unwrap();
            assert_eq!(stats.emitted, 2 * fx.net.edges().len());
        }
        let inboxes: usize = filt.nodes().iter().map(|n| n.inbox_len()).sum();
        assert_eq!(
            filt.total_emitted(),
            filt.total_consumed() + inboxes + filt.in_flight()
        );
        // Everything still waiting was sent within the last τ̄+1 steps.
        assert!(inboxes + filt.in_flight() <= 2 * fx.net.edges().len() * (profile.tau_bar() + 1));
    }

    #[test]
    fn consensus_of_truth_is_a_fixed_point() {
        let fx = fixture(6, 5);
        let profile = DelayProfile::assign(
            &fx.net,
            &DelayScheme::UniformRandom { asymmetric: true },
            4,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let gains = GainSet::zeros(6);
        let setup = FilterSetup {
            net: &fx.net,
            profile: &profile,
            transition: fx.model.transition(),
            measurement: &fx.meas,
            gains: &gains,
        };
        // Moving target, history set to the true past states.
        let f = DMatrix::from_column_slice(6, 6, fx.model.transition().as_slice());
        let f_inv = f.clone().try_inverse().unwrap();
        let x0 = DVector::from_column_slice(&[1.0, 2.0, 3.0, 0.1, -0.2, 0.05]);
        let depth = profile.tau_bar() + 1;
        let mut hist = DVector::zeros(36 * depth);
        for r in 0..depth {
            let xr = mat_pow(&f_inv, r) * &x0;
            for i in 0..6 {
                hist.rows_mut(36 * r + 6 * i, 6).copy_from(&xr);
            }
        }
        let w = fx.net.weights().unwrap();
        let mut aug = AugmentedFilter::with_state(
            profile.augmented_wf(w, &f).unwrap(),
            gains.stacked(),
            fx.meas.stacked_block_diag(),
            hist,
        )
        .unwrap();
        let mut x = x0.clone();
        for _ in 0..30 {
            x = &f * x;
            aug.step(&(fx.meas.stacked_block_diag() * DVector::from_fn(36, |r, _| x[r % 6])))
                .unwrap();
            for est in aug.current() {
                assert!(
                    (DVector::from_column_slice(est.as_slice()) - &x)
                        .abs()
                        .max()
                        < 1e-12
                );
            }
        }

        // Stationary target through the message-passing filter.
        let still = Vector6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0);
        let mut filt = DistributedFilter::new(&setup, &[still; 6]).unwrap();
        let y: Vec<_> = (0..6)
            .map(|i| fx.meas.h(i) * DVector::from_column_slice(still.as_slice()))
            .collect();
        for _ in 0..30 {
            filt.run_step(&y).unwrap();
        }
        for p in filt.posteriors() {
            assert_eq!(p, still);
        }
    }

    #[test]
    fn message_passing_matches_augmented_recursion() {
        let fx = fixture(6, 8);
        let profile = DelayProfile::assign(
            &fx.net,
            &DelayScheme::UniformRandom { asymmetric: true },
            3,
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gains = random_gains(6, 0.02, &mut rng);
        let setup = FilterSetup {
            net: &fx.net,
            profile: &profile,
            transition: fx.model.transition(),
            measurement: &fx.meas,
            gains: &gains,
        };
        let init: Vec<_> = (0..6)
            .map(|_| Vector6::from_fn(|_, _| rng.random::<f64>() * 4.0))
            .collect();
        let mut mp = DistributedFilter::new(&setup, &init).unwrap();
        let mut aug = AugmentedFilter::from_setup(&setup, &init).unwrap();
        for _ in 0..40 {
            let y: Vec<_> = (0..6)
                .map(|i| DVector::from_fn(fx.meas.rows(i), |_, _| rng.random::<f64>()))
                .collect();
            mp.run_step(&y).unwrap();
            aug.step(&stack_measurements(&y)).unwrap();
            for (a, b) in mp.posteriors().iter().zip(aug.current()) {
                assert!((a - b).abs().max() <= 1e-9 * (1.0 + b.abs().max()));
            }
        }
    }

    #[test]
    fn zero_gain_augmented_shifts_history() {
        let fx = fixture(3, 10);
        let profile = DelayProfile::uniform(&fx.net, 2);
        let gains = GainSet::zeros(3);
        let setup = FilterSetup {
            net: &fx.net,
            profile: &profile,
            transition: fx.model.transition(),
            measurement: &fx.meas,
            gains: &gains,
        };
        let init: Vec<_> = (0..3).map(|i| Vector6::from_element(i as f64)).collect();
        let mut aug = AugmentedFilter::from_setup(&setup, &init).unwrap();
        let before = aug.state().clone();
        aug.step(&DVector::zeros(6)).unwrap();
        let after = aug.state();
        assert_eq!(after.rows(18, 18), before.rows(0, 18));
        assert_eq!(after.rows(36, 18), before.rows(18, 18));
    }
}

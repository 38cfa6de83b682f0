#![allow(dead_code)]

use std::sync::Arc;

use rlmc_core::basis::{BasisSpec, PolyBasis};
use rlmc_core::evaluation::{enumerate_chain_paths, exact_dp_oracle, DpTable};
use rlmc_core::model::{ControlProblem, ControlSpace};
use rlmc_core::processes::{PathSet, ProcessSpec, ScalarProcess};
use rlmc_core::solvers::{ControlSampler, InventorySampling, SolverConfig};

pub const SLOTS: usize = 4;
pub const HORIZON: usize = 4;

/// Three-state chain, five inventory nodes, three controls, four steps.
pub struct Tiny {
    pub states: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub problem: ControlProblem,
    pub process: ProcessSpec,
    pub nodes: Vec<Vec<f64>>,
    pub dp: DpTable,
    /// All chain paths from every start state.
    pub paths: PathSet,
}

pub fn tiny() -> Tiny {
    let states = vec![1.0, 2.0, 3.0];
    let transition = vec![
        vec![0.5, 0.25, 0.25],
        vec![0.25, 0.5, 0.25],
        vec![0.25, 0.25, 0.5],
    ];
    let problem = ControlProblem::builder("tiny chain")
        .horizon(HORIZON)
        .inventory_upper(vec![4.0])
        .controls(ControlSpace::Finite(vec![vec![-1.0], vec![0.0], vec![1.0]]))
        .transition(|_, u, i, out| out[0] = (i[0] + u[0]).clamp(0.0, 4.0))
        .running_reward(|_, x, _, u| -u[0] * x[0] - if u[0] != 0.0 { 0.3 } else { 0.0 })
        .terminal_reward(|x, i| x[0] * i[0] - 0.2 * i[0] * i[0])
        .build()
        .unwrap();
    let process = ProcessSpec::scalar(ScalarProcess::MarkovChain {
        states: states.clone(),
        transition: transition.clone(),
    })
    .unwrap();
    let nodes: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64]).collect();
    let dp = exact_dp_oracle(&problem, &states, &transition, &nodes).unwrap();
    let paths = enumerate_chain_paths(&states, &transition, &[0, 1, 2], HORIZON, SLOTS).unwrap();
    Tiny {
        states,
        transition,
        problem,
        process,
        nodes,
        dp,
        paths,
    }
}

impl Tiny {
    /// The enumerated paths repeated `copies` times.
    pub fn replicated(&self, copies: usize) -> PathSet {
        let mut values = Vec::with_capacity(self.paths.values().len() * copies);
        for _ in 0..copies {
            values.extend_from_slice(self.paths.values());
        }
        PathSet::from_values(self.paths.m_paths() * copies, HORIZON, 1, 0, values).unwrap()
    }

    pub fn paths_from(&self, start: usize) -> PathSet {
        enumerate_chain_paths(&self.states, &self.transition, &[start], HORIZON, SLOTS).unwrap()
    }

    pub fn gd_basis() -> BasisSpec {
        BasisSpec::ExoOnly(PolyBasis::tensor(&[2], &[], &[]))
    }

    pub fn rl_basis() -> BasisSpec {
        BasisSpec::PolyProduct(PolyBasis::tensor(&[2], &[4], &[]))
    }

    pub fn cr_basis() -> BasisSpec {
        BasisSpec::PolyWithControl(PolyBasis::tensor(&[2], &[4], &[2]))
    }

    /// Regress-later training inventories: block `b` of the replicated paths sits at node `b`.
    pub fn rl_placement(&self) -> InventorySampling {
        let per = self.paths.m_paths();
        InventorySampling::Custom(Arc::new(move |m, _| vec![(m / per) as f64]))
    }

    /// Control randomisation design: block `(n*, k, u)` starts at node `k` and applies
    /// `u` at step `n*` only.
    pub fn cr_sampler(&self) -> ControlSampler {
        let per = self.paths.m_paths();
        let block = move |m: usize| {
            let b = m / per;
            (b / 15, (b / 3) % 5, [-1.0, 0.0, 1.0][b % 3])
        };
        ControlSampler::Custom {
            initial: Arc::new(move |m, _| vec![block(m).1 as f64]),
            control: Arc::new(move |m, n, _, _| {
                let (star, _, u) = block(m);
                vec![if n == star { u } else { 0.0 }]
            }),
        }
    }

    pub fn cr_blocks() -> usize {
        HORIZON * 5 * 3
    }

    /// Largest gap between recorded backward values and the DP table.
    pub fn max_gap(&self, values: &[rlmc_core::solvers::BackwardValue]) -> f64 {
        values
            .iter()
            .map(|v| {
                let s = self.dp.state_index(v.exo[0]).expect("chain state");
                let j = self.dp.node_index(&v.inv).expect("inventory node");
                (v.value - self.dp.value(v.step, s, j)).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub fn config_with(mut c: SolverConfig, record: bool) -> SolverConfig {
    c.record_backward_values = record;
    c
}

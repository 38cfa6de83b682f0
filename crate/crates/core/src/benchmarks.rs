//! Ready-made problems: energy arbitrage, two hydro reservoirs, and a wind farm with
//! a battery serving residential demand.

use serde::{Deserialize, Serialize};

use crate::basis::{AffineScaling, BasisSpec, Monomial, PolyBasis, Scaling};
use crate::error::{invalid, Error, Result};
use crate::model::{ControlProblem, ControlSpace};
use crate::processes::{
    DemandPoly, PriceMap, ProcessSpec, ScalarProcess, SeasonalProfile, WindPower, WindPowerVariant,
};
use crate::solvers::{Algorithm, ArgmaxOptions, Mode, SolverConfig};

pub const BENCHMARKS: [&str; 3] = ["arbitrage", "hydro", "battery"];

/// Wind offset `μ` giving a long-run mean output of about 0.35 MWh per hour with the
/// rated-capped power curve (see the `calibrate_wind` example).
pub const WIND_OFFSET: f64 = 1.764;
pub const HYDRO_PENALTY: f64 = 1200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HydroRewardVariant {
    /// `f = x (u² - u¹)`: released water earns the price, pumped water costs it.
    #[default]
    Revenue,
    /// `f = -x (u¹ + u²)`, the sign as printed.
    PaperSign,
}

/// Optional parameter changes; fields that do not apply to the chosen benchmark are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    /// Arbitrage time step; the horizon becomes `1 / delta`.
    pub delta: Option<f64>,
    pub switching_cost: Option<f64>,
    pub horizon: Option<usize>,
    pub penalty_weight: Option<f64>,
    pub hydro_reward_variant: Option<HydroRewardVariant>,
    /// Battery capacity; 0 disables storage.
    pub inventory_max: Option<f64>,
    pub wind_variant: Option<WindPowerVariant>,
    pub wind_offset: Option<f64>,
    pub surcharge: Option<f64>,
}

impl Overrides {
    fn allow(&self, name: &str, allowed: &[&str]) -> Result<()> {
        let set: [(&str, bool); 9] = [
            ("delta", self.delta.is_some()),
            ("switching_cost", self.switching_cost.is_some()),
            ("horizon", self.horizon.is_some()),
            ("penalty_weight", self.penalty_weight.is_some()),
            ("hydro_reward_variant", self.hydro_reward_variant.is_some()),
            ("inventory_max", self.inventory_max.is_some()),
            ("wind_variant", self.wind_variant.is_some()),
            ("wind_offset", self.wind_offset.is_some()),
            ("surcharge", self.surcharge.is_some()),
        ];
        for (key, present) in set {
            if present && !allowed.contains(&key) {
                return Err(invalid(format!(
                    "override `{key}` does not apply to {name}"
                )));
            }
        }
        Ok(())
    }
}

/// Solver settings suited to a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDefaults {
    pub m_paths: usize,
    pub grid_levels: usize,
    pub argmax: ArgmaxOptions,
}

pub struct Benchmark {
    pub name: &'static str,
    pub problem: ControlProblem,
    pub process: ProcessSpec,
    pub x0: Vec<f64>,
    pub i0: Vec<f64>,
    pub rl_basis: BasisSpec,
    pub cr_basis: BasisSpec,
    pub gd_basis: BasisSpec,
    pub defaults: BenchmarkDefaults,
    /// Observation maps of the battery problem.
    pub battery: Option<BatteryModel>,
}

impl Benchmark {
    pub fn basis_for(&self, algorithm: Algorithm) -> Option<&BasisSpec> {
        match algorithm {
            Algorithm::RegressLater => Some(&self.rl_basis),
            Algorithm::ControlRandomisation => Some(&self.cr_basis),
            Algorithm::GridDiscretisation => Some(&self.gd_basis),
            Algorithm::Myopic => None,
        }
    }

    /// Solver configuration with this benchmark's defaults.
    pub fn solver_config(&self, algorithm: Algorithm, mode: Mode) -> SolverConfig {
        let mut c = SolverConfig::new(algorithm, mode, self.defaults.m_paths);
        c.grid_levels = self.defaults.grid_levels;
        c.argmax = self.defaults.argmax;
        c
    }
}

pub fn build_benchmark(name: &str, overrides: &Overrides) -> Result<Benchmark> {
    match name {
        "arbitrage" => arbitrage(overrides),
        "hydro" => hydro(overrides),
        "battery" => battery(overrides),
        other => Err(Error::UnknownBenchmark(other.to_string())),
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(format!("{name} must be non-negative, got {v}")))
    }
}

fn arbitrage(o: &Overrides) -> Result<Benchmark> {
    o.allow("arbitrage", &["delta", "switching_cost"])?;
    let delta = positive("delta", o.delta.unwrap_or(1.0 / 200.0))?;
    let n_steps = (1.0 / delta).round() as usize;
    if n_steps == 0 || ((n_steps as f64) * delta - 1.0).abs() > 1e-9 {
        return Err(invalid("delta must divide the unit horizon"));
    }
    let cost = non_negative("switching_cost", o.switching_cost.unwrap_or(2.0))?;
    let problem = ControlProblem::builder("arbitrage")
        .horizon(n_steps)
        .inventory_upper(vec![1.0])
        .controls(ControlSpace::Finite(vec![
            vec![-11.5],
            vec![0.0],
            vec![11.5],
        ]))
        .affine_transition(vec![delta], vec![0.0])
        .running_reward(move |_, x, _, u| {
            let rho = if u[0] != 0.0 { cost } else { 0.0 };
            -(u[0] + rho) * x[0] * delta
        })
        .terminal_reward(|x, i| 0.5 * x[0] * i[0])
        .parameters(format!("delta={delta:?};switching_cost={cost:?}"))
        .build()?;
    let process = ProcessSpec::scalar(ScalarProcess::arbitrage_price(delta))?;
    Ok(Benchmark {
        name: "arbitrage",
        problem,
        process,
        x0: vec![5.0],
        i0: vec![0.5],
        rl_basis: BasisSpec::PolyProduct(arbitrage_rl_basis()),
        cr_basis: BasisSpec::PolyWithControl(PolyBasis::total_degree(1, 1, 1, 2)),
        gd_basis: BasisSpec::ExoOnly(PolyBasis::tensor(&[2], &[], &[])),
        defaults: BenchmarkDefaults {
            m_paths: 5000,
            grid_levels: 21,
            argmax: ArgmaxOptions::default(),
        },
        battery: None,
    })
}

/// `{1, x, i, xi, x², i², x²i, x²i²}`.
fn arbitrage_rl_basis() -> PolyBasis {
    let terms = [
        (0, 0),
        (1, 0),
        (0, 1),
        (1, 1),
        (2, 0),
        (0, 2),
        (2, 1),
        (2, 2),
    ]
    .into_iter()
    .map(|(a, b)| Monomial::new(vec![a], vec![b], vec![]))
    .collect();
    PolyBasis::from_terms(1, 1, 0, terms)
}

fn hydro(o: &Overrides) -> Result<Benchmark> {
    o.allow(
        "hydro",
        &["horizon", "penalty_weight", "hydro_reward_variant"],
    )?;
    let n_steps = o.horizon.unwrap_or(360);
    if n_steps == 0 {
        return Err(invalid("horizon must be positive"));
    }
    let a = non_negative("penalty_weight", o.penalty_weight.unwrap_or(HYDRO_PENALTY))?;
    let variant = o.hydro_reward_variant.unwrap_or_default();
    let builder = ControlProblem::builder("hydro")
        .horizon(n_steps)
        .inventory_upper(vec![2.0, 1.0])
        .controls(ControlSpace::Box {
            lower: vec![-0.6, 0.0],
            upper: vec![0.6, 1.2],
        })
        // reservoir 1 receives the inflow and the transfer u¹, reservoir 2 gives up u¹ and releases u²
        .affine_transition(vec![1.0, 0.0, -1.0, -1.0], vec![0.12, 0.0])
        .terminal_reward(move |_, i| -a * (i[0] + i[1] - 1.5).powi(2))
        .parameters(format!("penalty={a:?};variant={variant:?}"));
    let builder = match variant {
        HydroRewardVariant::Revenue => builder.running_reward(|_, x, _, u| x[0] * (u[1] - u[0])),
        HydroRewardVariant::PaperSign => builder.running_reward(|_, x, _, u| -x[0] * (u[0] + u[1])),
    };
    let problem = builder.build()?;
    let process = ProcessSpec::scalar(ScalarProcess::Ar1Euler {
        alpha: 0.1,
        mu: 40.0,
        sigma: 1.0,
    })?;
    let exo_scaling = AffineScaling {
        center: vec![40.0],
        half_width: vec![5.0],
    };
    let inv_scaling = AffineScaling::from_range(&[0.0, 0.0], &[2.0, 1.0]);
    let rl = PolyBasis::product_total(1, 2, 2, 2).with_scaling(Scaling {
        exo: Some(exo_scaling.clone()),
        inv: Some(inv_scaling.clone()),
        control: None,
    });
    let cr = PolyBasis::total_degree(1, 2, 2, 2).with_scaling(Scaling {
        exo: Some(exo_scaling.clone()),
        inv: Some(inv_scaling),
        control: Some(AffineScaling::from_range(&[-0.6, 0.0], &[0.6, 1.2])),
    });
    let gd = PolyBasis::tensor(&[2], &[], &[]).with_scaling(Scaling {
        exo: Some(exo_scaling),
        inv: None,
        control: None,
    });
    Ok(Benchmark {
        name: "hydro",
        problem,
        process,
        x0: vec![40.0],
        i0: vec![1.0, 0.5],
        rl_basis: BasisSpec::PolyProduct(rl),
        cr_basis: BasisSpec::PolyWithControl(cr),
        gd_basis: BasisSpec::ExoOnly(gd),
        defaults: BenchmarkDefaults {
            m_paths: 10_000,
            grid_levels: 7,
            argmax: ArgmaxOptions {
                resolution: 5,
                golden_iterations: 6,
            },
        },
        battery: None,
    })
}

/// Demand, wind energy and price at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub demand: f64,
    pub wind: f64,
    pub price: f64,
}

/// The five energy flows of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryFlows {
    pub wind_to_demand: f64,
    pub wind_to_battery: f64,
    pub battery_to_demand: f64,
    pub grid_to_demand: f64,
    /// Negative when the battery sells to the grid.
    pub grid_to_battery: f64,
}

impl BatteryFlows {
    /// Net battery charge `X^GB + X^WB - X^BD`.
    pub fn net(&self) -> f64 {
        self.grid_to_battery + self.wind_to_battery - self.battery_to_demand
    }
}

/// Feasible `(X^GB, X^GD)` once the wind flows are fixed by the demand-first rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleRegion {
    pub wind_to_demand: f64,
    pub wind_to_battery: f64,
    /// Demand left after wind, `d - min(w, d)`.
    pub residual: f64,
    pub grid_to_demand: (f64, f64),
    /// Admissible net battery charge.
    pub net_flow: (f64, f64),
}

impl AdmissibleRegion {
    /// Range of `X^GB` for a given `X^GD`, empty when `lo > hi`.
    pub fn grid_to_battery_range(&self, grid_to_demand: f64) -> (f64, f64) {
        let bd = self.residual - grid_to_demand;
        (
            self.net_flow.0 - self.wind_to_battery + bd,
            self.net_flow.1 - self.wind_to_battery + bd,
        )
    }

    pub fn contains(&self, grid_to_battery: f64, grid_to_demand: f64, tol: f64) -> bool {
        let (lo, hi) = self.grid_to_demand;
        if grid_to_demand < lo - tol || grid_to_demand > hi + tol {
            return false;
        }
        let (a, b) = self.grid_to_battery_range(grid_to_demand);
        grid_to_battery >= a - tol && grid_to_battery <= b + tol
    }

    pub fn flows(&self, grid_to_battery: f64, grid_to_demand: f64) -> BatteryFlows {
        BatteryFlows {
            wind_to_demand: self.wind_to_demand,
            wind_to_battery: self.wind_to_battery,
            battery_to_demand: self.residual - grid_to_demand,
            grid_to_demand,
            grid_to_battery,
        }
    }
}

pub const BATTERY_RATE: f64 = 2.1;

/// Constraints on `(X^GB, X^GD)` after substituting the wind flows, for demand `d`,
/// wind energy `w` and charge `i` of a battery with capacity `capacity`.
pub fn battery_admissible_region_with(
    d: f64,
    w: f64,
    i: f64,
    capacity: f64,
    rate: f64,
) -> AdmissibleRegion {
    let wd = w.min(d);
    let wb = w - wd;
    let residual = d - wd;
    AdmissibleRegion {
        wind_to_demand: wd,
        wind_to_battery: wb,
        residual,
        grid_to_demand: ((residual - rate).max(0.0), residual),
        net_flow: ((-rate).max(-i), rate.min(capacity - i)),
    }
}

pub fn battery_admissible_region(d: f64, w: f64, i: f64) -> AdmissibleRegion {
    battery_admissible_region_with(d, w, i, 20.0, BATTERY_RATE)
}

/// Checks the printed battery constraints (c.1)-(c.3), (c.5)-(c.7) and the sign
/// conditions on the wind flows.
pub fn battery_constraints_hold(
    d: f64,
    w: f64,
    i: f64,
    capacity: f64,
    f: &BatteryFlows,
    tol: f64,
) -> bool {
    let net = f.net();
    let c1 = (f.grid_to_demand + f.wind_to_demand + f.battery_to_demand - d).abs() <= tol;
    let c2 = (f.wind_to_demand - w.min(d)).abs() <= tol;
    let c3 = (f.wind_to_battery + f.wind_to_demand - w).abs() <= tol;
    let c5 = f.grid_to_demand >= -tol;
    let c6 = f.battery_to_demand >= -tol && f.battery_to_demand <= BATTERY_RATE + tol;
    let c7 = net >= -BATTERY_RATE - tol
        && net <= BATTERY_RATE + tol
        && net >= -i - tol
        && net <= capacity - i + tol;
    let signs = f.wind_to_demand >= -tol && f.wind_to_battery >= -tol;
    c1 && c2 && c3 && c5 && c6 && c7 && signs
}

/// Observation maps and flow bookkeeping of the battery benchmark.
///
/// The exogenous state is `(y, T̃, Y)`: centred square-root wind speed, deseasonalised
/// temperature and log-price. The control is the net battery charge `b`; the reward
/// depends on `(X^GB, X^GD)` only through `X^GB + X^GD = b - X^WB + (d - X^WD)`, and
/// [`BatteryModel::flows`] splits `b` into the minimum-norm pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub price: PriceMap,
    pub demand: DemandPoly,
    /// Daily temperature profile `μ_n` added to `T̃`.
    pub temperature_season: SeasonalProfile,
    pub wind: WindPower,
    pub wind_offset: f64,
    pub capacity: f64,
    pub rate: f64,
    pub surcharge: f64,
}

impl BatteryModel {
    pub fn observe(&self, n: usize, x: &[f64]) -> Observation {
        Observation {
            // the fitted polynomial turns negative below about -19 degrees
            demand: self
                .demand
                .demand(x[1] + self.temperature_season.at(n))
                .max(0.0),
            wind: self.wind.energy_from_underlying(x[0], self.wind_offset),
            price: self.price.price(n, x[2]),
        }
    }

    pub fn region(&self, obs: &Observation, i: f64) -> AdmissibleRegion {
        battery_admissible_region_with(obs.demand, obs.wind, i, self.capacity, self.rate)
    }

    /// Minimum-norm `(X^GB, X^GD)` realising net charge `b`.
    pub fn flows(&self, obs: &Observation, i: f64, b: f64) -> BatteryFlows {
        let r = self.region(obs, i);
        let total = b - r.wind_to_battery + r.residual;
        let (lo, hi) = r.grid_to_demand;
        let gd = (0.5 * total).clamp(lo, hi);
        r.flows(total - gd, gd)
    }

    pub fn reward(&self, n: usize, x: &[f64], b: f64) -> f64 {
        let obs = self.observe(n, x);
        let wd = obs.wind.min(obs.demand);
        let grid_total = b - (obs.wind - wd) + (obs.demand - wd);
        obs.price * obs.demand - self.surcharge * obs.price * grid_total
    }
}

fn battery(o: &Overrides) -> Result<Benchmark> {
    o.allow(
        "battery",
        &[
            "horizon",
            "inventory_max",
            "wind_variant",
            "wind_offset",
            "surcharge",
        ],
    )?;
    let n_steps = o.horizon.unwrap_or(336);
    if n_steps == 0 {
        return Err(invalid("horizon must be positive"));
    }
    let capacity = non_negative("inventory_max", o.inventory_max.unwrap_or(20.0))?;
    let surcharge = non_negative("surcharge", o.surcharge.unwrap_or(1.1))?;
    let wind_offset = o.wind_offset.unwrap_or(WIND_OFFSET);
    if !wind_offset.is_finite() {
        return Err(invalid("wind_offset must be finite"));
    }
    let model = BatteryModel {
        price: PriceMap {
            offset: 27.2531,
            weekly: SeasonalProfile::sinusoid(5.0, 168),
        },
        demand: DemandPoly::default(),
        temperature_season: SeasonalProfile::sinusoid(5.0, 24),
        wind: WindPower {
            variant: o.wind_variant.unwrap_or(WindPowerVariant::RatedCapped),
            ..WindPower::default()
        },
        wind_offset,
        capacity,
        rate: BATTERY_RATE,
        surcharge,
    };
    let m = model.clone();
    let problem = ControlProblem::builder("battery")
        .horizon(n_steps)
        .exo_dim(3)
        .inventory_upper(vec![capacity])
        .controls(ControlSpace::Box {
            lower: vec![-BATTERY_RATE],
            upper: vec![BATTERY_RATE],
        })
        .affine_transition(vec![1.0], vec![0.0])
        .running_reward(move |n, x, _, u| m.reward(n, x, u[0]))
        .terminal_reward(|_, _| 0.0)
        .parameters(serde_json::to_string(&model)?)
        .build()?;
    let process = ProcessSpec::new(vec![
        ScalarProcess::wind(wind_offset),
        ScalarProcess::temperature(),
        ScalarProcess::spot_log_price(),
    ])?;
    // initial data (d, w, p, i) = (0.15, 0, 35, 10); 0.15 lies below the demand curve's
    // minimum, so the temperature with the closest demand is used
    let season0 = model.temperature_season.at(0);
    let t0 = model.demand.temperature_for(0.15, -10.0, 40.0) - season0;
    let y0 = model.price.log_price_for(0, 35.0)?;
    let x0 = vec![-wind_offset, t0, y0];
    let i0 = vec![(10.0f64).min(capacity)];

    let exo_scaling = AffineScaling {
        center: vec![0.0, 0.0, 4.2],
        half_width: vec![1.0, 5.0, 0.5],
    };
    let inv_scaling = AffineScaling::from_range(&[0.0], &[capacity]);
    let mono = |a: [u32; 3], b: u32| Monomial::new(a.to_vec(), vec![b], vec![]);
    let rl_terms = vec![
        mono([0, 0, 0], 0),
        mono([1, 0, 0], 0),
        mono([0, 1, 0], 0),
        mono([0, 0, 1], 0),
        mono([2, 0, 0], 0),
        mono([0, 2, 0], 0),
        mono([0, 0, 2], 0),
        mono([0, 0, 0], 1),
        mono([1, 0, 0], 1),
        mono([0, 1, 0], 1),
        mono([0, 0, 1], 1),
        mono([0, 0, 0], 2),
    ];
    let rl = PolyBasis::from_terms(3, 1, 0, rl_terms).with_scaling(Scaling {
        exo: Some(exo_scaling.clone()),
        inv: Some(inv_scaling.clone()),
        control: None,
    });
    let cr = PolyBasis::total_degree(3, 1, 1, 2).with_scaling(Scaling {
        exo: Some(exo_scaling.clone()),
        inv: Some(inv_scaling),
        control: Some(AffineScaling::from_range(&[-BATTERY_RATE], &[BATTERY_RATE])),
    });
    let mut gd = PolyBasis::total_degree(3, 0, 0, 2);
    gd.inv_dim = 0;
    let gd = gd.with_scaling(Scaling {
        exo: Some(exo_scaling),
        inv: None,
        control: None,
    });
    Ok(Benchmark {
        name: "battery",
        problem,
        process,
        x0,
        i0,
        rl_basis: BasisSpec::PolyProduct(rl),
        cr_basis: BasisSpec::PolyWithControl(cr),
        gd_basis: BasisSpec::ExoOnly(gd),
        defaults: BenchmarkDefaults {
            m_paths: 5000,
            grid_levels: 11,
            argmax: ArgmaxOptions::default(),
        },
        battery: Some(model),
    })
}

//! Exogenous Markov processes: path simulation, analytic one-step moments and the
//! observation maps (price, wind power, demand) layered on top of them.
//!
//! Every process is simulated in its underlying Markov coordinate. Nonlinear
//! observables such as the spot price `exp(Y) - c` are computed from paths by the
//! observation maps and never simulated directly.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};

/// Highest polynomial degree with analytic conditional moments.
pub const MAX_MOMENT_DEGREE: usize = 16;

/// One scalar component of the exogenous state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarProcess {
    /// `X' = X + alpha (mu - X) + sigma ξ`.
    Ar1Euler { alpha: f64, mu: f64, sigma: f64 },
    /// Log-price with rare Gaussian jumps:
    /// `Y' = Y + rate (level - Y) + vol ξ + J`, `J = ξʲ 1{U < jump_prob}`, `ξʲ ~ N(0, jump_sd²)`.
    JumpPrice {
        rate: f64,
        level: f64,
        vol: f64,
        jump_prob: f64,
        jump_sd: f64,
    },
    /// Centred square root of wind speed, `y' = coeff y + noise ξ`; the speed is `(y + offset)²`.
    SquaredAr1Wind { coeff: f64, noise: f64, offset: f64 },
    /// Deseasonalised temperature, `T̃' = coeff T̃ + noise ξ`.
    SeasonalAr1Temp { coeff: f64, noise: f64 },
    /// Finite-state chain; `transition[a][b]` is the probability of moving from
    /// `states[a]` to `states[b]`.
    MarkovChain {
        states: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
}

impl ScalarProcess {
    pub fn arbitrage_price(delta: f64) -> Self {
        ScalarProcess::Ar1Euler {
            alpha: 2.0 * delta,
            mu: 5.0,
            sigma: 5.0 * delta.sqrt(),
        }
    }

    pub fn spot_log_price() -> Self {
        ScalarProcess::JumpPrice {
            rate: 0.2055,
            level: 4.1995,
            vol: 0.11856,
            jump_prob: 0.017,
            jump_sd: 0.4229,
        }
    }

    pub fn wind(offset: f64) -> Self {
        ScalarProcess::SquaredAr1Wind {
            coeff: 0.7633,
            noise: 0.4020,
            offset,
        }
    }

    pub fn temperature() -> Self {
        ScalarProcess::SeasonalAr1Temp {
            coeff: -0.92,
            noise: 2.14,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match self {
            ScalarProcess::Ar1Euler { alpha, mu, sigma } => {
                if !finite(&[*alpha, *mu, *sigma]) || *sigma < 0.0 {
                    return Err(invalid("ar1: parameters must be finite with sigma >= 0"));
                }
            }
            ScalarProcess::JumpPrice {
                rate,
                level,
                vol,
                jump_prob,
                jump_sd,
            } => {
                if !finite(&[*rate, *level, *vol, *jump_prob, *jump_sd])
                    || *vol < 0.0
                    || *jump_sd < 0.0
                {
                    return Err(invalid(
                        "jump price: parameters must be finite, volatilities >= 0",
                    ));
                }
                if !(0.0..=1.0).contains(jump_prob) {
                    return Err(invalid("jump price: jump probability must lie in [0, 1]"));
                }
            }
            ScalarProcess::SquaredAr1Wind {
                coeff,
                noise,
                offset,
            } => {
                if !finite(&[*coeff, *noise, *offset]) || *noise < 0.0 {
                    return Err(invalid("wind: parameters must be finite with noise >= 0"));
                }
            }
            ScalarProcess::SeasonalAr1Temp { coeff, noise } => {
                if !finite(&[*coeff, *noise]) || *noise < 0.0 {
                    return Err(invalid(
                        "temperature: parameters must be finite with noise >= 0",
                    ));
                }
            }
            ScalarProcess::MarkovChain { states, transition } => {
                if states.is_empty() || transition.len() != states.len() || !finite(states) {
                    return Err(invalid(
                        "markov chain: need one finite state per transition row",
                    ));
                }
                for row in transition {
                    if row.len() != states.len() || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return Err(invalid("markov chain: rows must be probability vectors"));
                    }
                    if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                        return Err(invalid("markov chain: rows must sum to one"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Law of the next value given the current one.
    pub fn step_law(&self, x: f64) -> Result<StepLaw<'_>> {
        Ok(match self {
            ScalarProcess::Ar1Euler { alpha, mu, sigma } => StepLaw::Gaussian {
                mean: x + alpha * (mu - x),
                sd: *sigma,
            },
            ScalarProcess::JumpPrice {
                rate,
                level,
                vol,
                jump_prob,
                jump_sd,
            } => StepLaw::JumpMixture {
                mean: x + rate * (level - x),
                sd: *vol,
                jump_prob: *jump_prob,
                jump_sd: *jump_sd,
            },
            ScalarProcess::SquaredAr1Wind { coeff, noise, .. } => StepLaw::Gaussian {
                mean: coeff * x,
                sd: *noise,
            },
            ScalarProcess::SeasonalAr1Temp { coeff, noise } => StepLaw::Gaussian {
                mean: coeff * x,
                sd: *noise,
            },
            ScalarProcess::MarkovChain { states, transition } => {
                let idx = chain_index(states, x)?;
                StepLaw::Discrete {
                    states,
                    probs: &transition[idx],
                }
            }
        })
    }

    /// `E[X'^j | X = x]` for `j = 0..out.len()`.
    pub fn conditional_moments_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        if out.len() > MAX_MOMENT_DEGREE + 1 {
            return Err(Error::UnsupportedMoment(format!(
                "degree {} exceeds the supported maximum {MAX_MOMENT_DEGREE}",
                out.len() - 1
            )));
        }
        self.step_law(x)?.raw_moments_into(out);
        Ok(())
    }

    fn sample_next<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        match self {
            ScalarProcess::Ar1Euler { alpha, mu, sigma } => {
                let xi: f64 = rng.sample(StandardNormal);
                x + alpha * (mu - x) + sigma * xi
            }
            ScalarProcess::JumpPrice {
                rate,
                level,
                vol,
                jump_prob,
                jump_sd,
            } => {
                let xi: f64 = rng.sample(StandardNormal);
                let xj: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.gen();
                let jump = if u < *jump_prob { jump_sd * xj } else { 0.0 };
                x + rate * (level - x) + vol * xi + jump
            }
            ScalarProcess::SquaredAr1Wind { coeff, noise, .. } => {
                let xi: f64 = rng.sample(StandardNormal);
                coeff * x + noise * xi
            }
            ScalarProcess::SeasonalAr1Temp { coeff, noise } => {
                let xi: f64 = rng.sample(StandardNormal);
                coeff * x + noise * xi
            }
            ScalarProcess::MarkovChain { states, transition } => {
                let u: f64 = rng.gen();
                let row = match chain_index(states, x) {
                    Ok(i) => &transition[i],
                    Err(_) => return x,
                };
                let mut acc = 0.0;
                for (s, p) in states.iter().zip(row) {
                    acc += p;
                    if u < acc {
                        return *s;
                    }
                }
                // rounding left u above the last partial sum: take the last reachable state
                let last = row.iter().rposition(|p| *p > 0.0).unwrap_or(0);
                states[last]
            }
        }
    }
}

fn chain_index(states: &[f64], x: f64) -> Result<usize> {
    states
        .iter()
        .position(|s| (s - x).abs() <= 1e-9 * (1.0 + s.abs()))
        .ok_or_else(|| invalid(format!("{x} is not a state of the markov chain")))
}

/// Law of the next value of one component.
#[derive(Debug, Clone, Copy)]
pub enum StepLaw<'a> {
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// `N(mean, sd²)` with probability `1 - jump_prob`, `N(mean, sd² + jump_sd²)` otherwise.
    JumpMixture {
        mean: f64,
        sd: f64,
        jump_prob: f64,
        jump_sd: f64,
    },
    Discrete {
        states: &'a [f64],
        probs: &'a [f64],
    },
}

impl StepLaw<'_> {
    pub fn raw_moments_into(&self, out: &mut [f64]) {
        match *self {
            StepLaw::Gaussian { mean, sd } => gaussian_raw_moments(mean, sd, out),
            StepLaw::JumpMixture {
                mean,
                sd,
                jump_prob,
                jump_sd,
            } => {
                let mut jumped = [0.0; MAX_MOMENT_DEGREE + 1];
                let jumped = &mut jumped[..out.len()];
                gaussian_raw_moments(mean, sd, out);
                gaussian_raw_moments(mean, (sd * sd + jump_sd * jump_sd).sqrt(), jumped);
                for (o, j) in out.iter_mut().zip(jumped.iter()) {
                    *o = (1.0 - jump_prob) * *o + jump_prob * j;
                }
            }
            StepLaw::Discrete { states, probs } => {
                out.fill(0.0);
                for (s, p) in states.iter().zip(probs) {
                    let mut pow = 1.0;
                    for o in out.iter_mut() {
                        *o += p * pow;
                        pow *= s;
                    }
                }
            }
        }
    }

    /// Raw moments of `(X - center) / half_width`.
    pub fn scaled_moments_into(&self, center: f64, half_width: f64, out: &mut [f64]) {
        match *self {
            StepLaw::Gaussian { mean, sd } => {
                gaussian_raw_moments((mean - center) / half_width, sd / half_width, out)
            }
            StepLaw::JumpMixture {
                mean,
                sd,
                jump_prob,
                jump_sd,
            } => StepLaw::JumpMixture {
                mean: (mean - center) / half_width,
                sd: sd / half_width,
                jump_prob,
                jump_sd: jump_sd / half_width,
            }
            .raw_moments_into(out),
            StepLaw::Discrete { states, probs } => {
                out.fill(0.0);
                for (s, p) in states.iter().zip(probs) {
                    let z = (s - center) / half_width;
                    let mut pow = 1.0;
                    for o in out.iter_mut() {
                        *o += p * pow;
                        pow *= z;
                    }
                }
            }
        }
    }

    /// `E[X^j 1{X ∈ [lo, hi)}]` for `j = 0..out.len()`, with `hi` included when
    /// `hi_inclusive`. The distinction only matters for discrete laws.
    pub fn truncated_moments_into(&self, lo: f64, hi: f64, hi_inclusive: bool, out: &mut [f64]) {
        match *self {
            StepLaw::Gaussian { mean, sd } if sd <= 0.0 => {
                if mean >= lo && (mean < hi || (hi_inclusive && mean == hi)) {
                    gaussian_raw_moments(mean, 0.0, out);
                } else {
                    out.fill(0.0);
                }
            }
            StepLaw::Gaussian { mean, sd } => {
                out.copy_from_slice(&truncated_gaussian_moments(mean, sd, lo, hi, out.len() - 1))
            }
            StepLaw::JumpMixture {
                mean,
                sd,
                jump_prob,
                jump_sd,
            } => {
                let calm = truncated_gaussian_moments(mean, sd, lo, hi, out.len() - 1);
                let wild = truncated_gaussian_moments(
                    mean,
                    (sd * sd + jump_sd * jump_sd).sqrt(),
                    lo,
                    hi,
                    out.len() - 1,
                );
                for ((o, c), w) in out.iter_mut().zip(calm).zip(wild) {
                    *o = (1.0 - jump_prob) * c + jump_prob * w;
                }
            }
            StepLaw::Discrete { states, probs } => {
                out.fill(0.0);
                for (s, p) in states.iter().zip(probs) {
                    if *s >= lo && (*s < hi || (hi_inclusive && *s == hi)) {
                        let mut pow = 1.0;
                        for o in out.iter_mut() {
                            *o += p * pow;
                            pow *= s;
                        }
                    }
                }
            }
        }
    }
}

/// Raw moments of `N(mean, sd²)` via `E[X^j] = m E[X^{j-1}] + (j-1) s² E[X^{j-2}]`.
pub fn gaussian_raw_moments(mean: f64, sd: f64, out: &mut [f64]) {
    let var = sd * sd;
    for j in 0..out.len() {
        out[j] = match j {
            0 => 1.0,
            1 => mean,
            _ => mean * out[j - 1] + (j - 1) as f64 * var * out[j - 2],
        };
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    }
}

/// `E[X^j 1{lo <= X <= hi}]`, `X ~ N(mean, sd²)`, for `j = 0..=max_degree`.
///
/// Standardised moments follow `M_k = (k-1) M_{k-2} + a^{k-1} φ(a) - b^{k-1} φ(b)` and are
/// mapped back binomially. `sd = 0` is treated as a point mass.
pub fn truncated_gaussian_moments(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    max_degree: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; max_degree + 1];
    if sd <= 0.0 {
        if mean >= lo && mean <= hi {
            gaussian_raw_moments(mean, 0.0, &mut out);
        }
        return out;
    }
    if hi < lo {
        return out;
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    let mut m = vec![0.0; max_degree + 1];
    // upper tails are more accurate when both bounds sit far right
    m[0] = if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    };
    if max_degree >= 1 {
        m[1] = pa - pb;
    }
    for k in 2..=max_degree {
        let ta = if a.is_finite() {
            a.powi(k as i32 - 1) * pa
        } else {
            0.0
        };
        let tb = if b.is_finite() {
            b.powi(k as i32 - 1) * pb
        } else {
            0.0
        };
        m[k] = (k - 1) as f64 * m[k - 2] + ta - tb;
    }
    for (j, o) in out.iter_mut().enumerate() {
        let mut binom = 1.0;
        let mut acc = 0.0;
        for i in 0..=j {
            acc += binom * mean.powi((j - i) as i32) * sd.powi(i as i32) * m[i];
            binom = binom * (j - i) as f64 / (i + 1) as f64;
        }
        *o = acc;
    }
    out
}

/// Multi-dimensional exogenous process with independent noise per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub components: Vec<ScalarProcess>,
}

impl ProcessSpec {
    pub fn new(components: Vec<ScalarProcess>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("process needs at least one component"));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    pub fn scalar(component: ScalarProcess) -> Result<Self> {
        Self::new(vec![component])
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// `E[X'_d^j | X = x]` for every component `d` and `j = 0..=max_degree`.
    pub fn conditional_poly_moments(&self, x: &[f64], max_degree: usize) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "exogenous state",
                expected: self.dim(),
                found: x.len(),
            });
        }
        self.components
            .iter()
            .zip(x)
            .map(|(c, xd)| {
                let mut out = vec![0.0; max_degree + 1];
                c.conditional_moments_into(*xd, &mut out)?;
                Ok(out)
            })
            .collect()
    }

    /// Simulates `m_paths` trajectories of `n_steps` steps from `x0`.
    ///
    /// Path `m` draws from its own ChaCha stream (`seed`, stream `m`), so the result
    /// does not depend on how paths are scheduled across threads.
    pub fn simulate_paths(
        &self,
        m_paths: usize,
        n_steps: usize,
        x0: &[f64],
        seed: u64,
    ) -> Result<PathSet> {
        if m_paths == 0 || n_steps == 0 {
            return Err(invalid(
                "simulate_paths needs m_paths >= 1 and n_steps >= 1",
            ));
        }
        let p = self.dim();
        if x0.len() != p {
            return Err(Error::DimensionMismatch {
                what: "initial exogenous state",
                expected: p,
                found: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("initial exogenous state".into()));
        }
        for (c, x) in self.components.iter().zip(x0) {
            if let ScalarProcess::MarkovChain { states, .. } = c {
                chain_index(states, *x)?;
            }
        }
        let stride = (n_steps + 1) * p;
        let mut values = vec![0.0; m_paths * stride];
        values
            .par_chunks_mut(stride)
            .enumerate()
            .for_each(|(m, path)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(m as u64);
                path[..p].copy_from_slice(x0);
                for n in 0..n_steps {
                    for (d, c) in self.components.iter().enumerate() {
                        path[(n + 1) * p + d] = c.sample_next(path[n * p + d], &mut rng);
                    }
                }
            });
        Ok(PathSet {
            m_paths,
            n_steps,
            dim: p,
            seed,
            values,
        })
    }
}

/// Simulated exogenous trajectories, stored path-major: the value of component `d`
/// at step `n` on path `m` sits at `(m * (n_steps + 1) + n) * dim + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    m_paths: usize,
    n_steps: usize,
    dim: usize,
    seed: u64,
    values: Vec<f64>,
}

const BINARY_MAGIC: &[u8; 8] = b"RLMCPATH";

impl PathSet {
    pub fn from_values(
        m_paths: usize,
        n_steps: usize,
        dim: usize,
        seed: u64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = m_paths * (n_steps + 1) * dim;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "path values",
                expected,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("path values".into()));
        }
        Ok(Self {
            m_paths,
            n_steps,
            dim,
            seed,
            values,
        })
    }

    pub fn m_paths(&self) -> usize {
        self.m_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn state(&self, m: usize, n: usize) -> &[f64] {
        let start = (m * (self.n_steps + 1) + n) * self.dim;
        &self.values[start..start + self.dim]
    }

    pub fn path(&self, m: usize) -> &[f64] {
        let stride = (self.n_steps + 1) * self.dim;
        &self.values[m * stride..(m + 1) * stride]
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "path,step,component,value")?;
        for m in 0..self.m_paths {
            for n in 0..=self.n_steps {
                for (d, v) in self.state(m, n).iter().enumerate() {
                    writeln!(w, "{m},{n},{d},{v:?}")?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`PathSet::write_csv`]; rows may come in any order.
    pub fn read_csv(input: impl Read, seed: u64) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut rows = Vec::new();
        let (mut m_max, mut n_max, mut d_max) = (0usize, 0usize, 0usize);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = || invalid(format!("malformed path csv line {}: {line}", lineno + 1));
            let mut parts = line.split(',');
            let mut next = || parts.next().map(str::trim).ok_or_else(bad);
            let m: usize = next()?.parse().map_err(|_| bad())?;
            let n: usize = next()?.parse().map_err(|_| bad())?;
            let d: usize = next()?.parse().map_err(|_| bad())?;
            let v: f64 = next()?.parse().map_err(|_| bad())?;
            m_max = m_max.max(m);
            n_max = n_max.max(n);
            d_max = d_max.max(d);
            rows.push((m, n, d, v));
        }
        if rows.is_empty() {
            return Err(invalid("path csv has no rows"));
        }
        let (m_paths, n_steps, dim) = (m_max + 1, n_max, d_max + 1);
        if rows.len() != m_paths * (n_steps + 1) * dim {
            return Err(invalid(
                "path csv does not cover a full path × step × component grid",
            ));
        }
        let mut values = vec![f64::NAN; rows.len()];
        for (m, n, d, v) in rows {
            values[(m * (n_steps + 1) + n) * dim + d] = v;
        }
        Self::from_values(m_paths, n_steps, dim, seed, values)
    }

    /// Little-endian binary: magic, then `m_paths`, `n_steps`, `dim`, `seed` as u64,
    /// then the values in storage order.
    pub fn write_binary(&self, out: impl Write) -> Result<()> {
        let mut w = BufWriter::new(out);
        w.write_all(BINARY_MAGIC)?;
        for v in [
            self.m_paths as u64,
            self.n_steps as u64,
            self.dim as u64,
            self.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(input: impl Read) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(invalid("not a binary path file"));
        }
        let mut header = [0u64; 4];
        let mut buf = [0u8; 8];
        for h in header.iter_mut() {
            r.read_exact(&mut buf)?;
            *h = u64::from_le_bytes(buf);
        }
        let [m_paths, n_steps, dim, seed] = header;
        let len = (m_paths * (n_steps + 1) * dim) as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Self::from_values(
            m_paths as usize,
            n_steps as usize,
            dim as usize,
            seed,
            values,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        if path.extension().is_some_and(|e| e == "csv") {
            self.write_csv(file)
        } else {
            self.write_binary(file)
        }
    }
}

/// Cyclic tabulated profile, `value(n) = values[n mod len]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalProfile {
    pub values: Vec<f64>,
}

impl SeasonalProfile {
    pub fn zero() -> Self {
        Self { values: vec![0.0] }
    }

    /// `amplitude · sin(2π n / period)` sampled at each step of one period.
    pub fn sinusoid(amplitude: f64, period: usize) -> Self {
        let period = period.max(1);
        let values = (0..period)
            .map(|n| amplitude * (2.0 * PI * n as f64 / period as f64).sin())
            .collect();
        Self { values }
    }

    pub fn at(&self, n: usize) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values[n % self.values.len()]
        }
    }
}

/// `P = exp(Y) - offset + weekly(n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceMap {
    pub offset: f64,
    pub weekly: SeasonalProfile,
}

impl PriceMap {
    pub fn price(&self, n: usize, log_price: f64) -> f64 {
        log_price.exp() - self.offset + self.weekly.at(n)
    }

    /// Log-price that produces `price` at step `n`.
    pub fn log_price_for(&self, n: usize, price: f64) -> Result<f64> {
        let arg = price + self.offset - self.weekly.at(n);
        if arg <= 0.0 {
            return Err(invalid(format!(
                "price {price} is below the reachable floor"
            )));
        }
        Ok(arg.ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindPowerVariant {
    /// `10⁻⁶ Cp ρ A max(w, ω)³`, exactly as printed; never below the rated-speed output.
    AsWritten,
    /// `min(10⁻⁶ Cp ρ A min(w, ω)³, rated)`.
    RatedCapped,
}

/// Energy per step from a wind turbine as a function of wind speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindPower {
    pub efficiency: f64,
    pub air_density: f64,
    pub swept_area: f64,
    pub rated_speed: f64,
    pub rated_energy: f64,
    pub variant: WindPowerVariant,
}

impl Default for WindPower {
    fn default() -> Self {
        Self {
            efficiency: 0.4,
            air_density: 1.225,
            swept_area: 2500.0 * PI,
            rated_speed: 14.0,
            rated_energy: 2.1,
            variant: WindPowerVariant::RatedCapped,
        }
    }
}

impl WindPower {
    pub fn energy(&self, speed: f64) -> f64 {
        let k = 1e-6 * self.efficiency * self.air_density * self.swept_area;
        match self.variant {
            WindPowerVariant::AsWritten => k * speed.max(self.rated_speed).powi(3),
            WindPowerVariant::RatedCapped => {
                (k * speed.max(0.0).min(self.rated_speed).powi(3)).min(self.rated_energy)
            }
        }
    }

    /// Energy from the underlying wind coordinate `y`, speed `(y + offset)²`.
    pub fn energy_from_underlying(&self, y: f64, offset: f64) -> f64 {
        let s = y + offset;
        self.energy(s * s)
    }
}

/// Demand as a polynomial of temperature, `D = Σ c_k T^k / divisor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPoly {
    pub coefficients: Vec<f64>,
    pub divisor: f64,
}

impl Default for DemandPoly {
    fn default() -> Self {
        Self {
            coefficients: vec![6784.9728, -235.5911, -2.2869, 0.8897, -0.0204, 0.000105],
            divisor: 30000.0,
        }
    }
}

impl DemandPoly {
    pub fn demand(&self, temperature: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * temperature + c)
            / self.divisor
    }

    /// Temperature in `[lo, hi]` whose demand is closest to `target`, located on a
    /// 0.001-spaced scan and polished by bisection when a crossing exists.
    pub fn temperature_for(&self, target: f64, lo: f64, hi: f64) -> f64 {
        let steps = ((hi - lo) / 1e-3).ceil().max(1.0) as usize;
        let at = |k: usize| lo + (hi - lo) * k as f64 / steps as f64;
        let mut best = lo;
        let mut best_gap = f64::INFINITY;
        for k in 0..=steps {
            let t = at(k);
            let gap = (self.demand(t) - target).abs();
            if gap < best_gap {
                best_gap = gap;
                best = t;
            }
        }
        let (mut a, mut b) = (best - 1e-3, best + 1e-3);
        let fa = self.demand(a) - target;
        let fb = self.demand(b) - target;
        if fa * fb < 0.0 {
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                let fm = self.demand(mid) - target;
                if (fm < 0.0) == (fa < 0.0) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            best = 0.5 * (a + b);
        }
        best
    }
}

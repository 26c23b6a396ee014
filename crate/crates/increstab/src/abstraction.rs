//! Finite abstractions of sampled closed loops on quantized grids.
//!
//! A state grid with pitch `eta` covers the region of interest, an input grid
//! with pitch `mu` covers the input box, and the abstract transition under
//! input `u` from a grid point `x` is the grid point nearest the endpoint of
//! the exact flow over one sampling period `tau`:
//!
//! ```text
//!   post(x, u) = snap( flow_tau(x, u) ) ,    |snap(y) - y|_inf <= eta / 2 .
//! ```
//!
//! Endpoints that leave the region (or land beyond the grid's index range)
//! have no abstract successor and are marked blocked, so every stored
//! successor is a genuine grid point of the region and the snap bound holds
//! unconditionally.
//!
//! When the loop is incrementally stable the quantization error stays
//! bounded instead of accumulating: with decay factor
//! `q = C exp(-rate tau) < 1` per period and snap radius `r`, the deviation
//! between the continuous trajectory and the abstract run obeys the
//! geometric-series bound `r / (1 - q)` ([`accumulated_snap_bound`]), which
//! is what makes a finite `epsilon` certificate possible. The empirical
//! counterpart [`check_epsilon`] replays random input words on both systems
//! and reports the worst observed deviation.
//!
//! Builds are embarrassingly parallel over grid rows and every row is
//! computed independently with fixed-step integration, so the table is
//! byte-identical at any thread count.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::BoxDomain;
use crate::dynamics::{integrate_endpoint, Rk4Scratch, VectorField};
use crate::error::{Error, Result};

/// Marks the absence of an abstract successor.
pub const BLOCKED: u32 = u32::MAX;

const MAGIC: &[u8; 8] = b"INCRABS1";

/// A uniform grid: per axis, the integer multiples `k * step` for
/// `k_min <= k <= k_max`. Indexing is row-major with the first axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    step: f64,
    ranges: Vec<(i64, i64)>,
    count: usize,
}

impl UniformGrid {
    /// The grid of all multiples of `step` inside `domain` (with a relative
    /// slack of `1e-9` so representable bounds like `1.0 / 0.009` keep their
    /// fringe points). Errors when some axis contains no grid point.
    pub fn cover(domain: &BoxDomain, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid pitch must be positive, got {step}"
            )));
        }
        let mut ranges = Vec::with_capacity(domain.dim());
        for axis in 0..domain.dim() {
            let k_min = (domain.lo(axis) / step - 1e-9).ceil() as i64;
            let k_max = (domain.hi(axis) / step + 1e-9).floor() as i64;
            if k_max < k_min {
                return Err(Error::InvalidArgument(format!(
                    "axis {axis} of [{}, {}] contains no multiple of {step}",
                    domain.lo(axis),
                    domain.hi(axis)
                )));
            }
            ranges.push((k_min, k_max));
        }
        Self::from_ranges(step, ranges)
    }

    /// Rebuilds a grid from its stored ranges.
    pub fn from_ranges(step: f64, ranges: Vec<(i64, i64)>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid pitch must be positive, got {step}"
            )));
        }
        if ranges.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one axis".into()));
        }
        let mut count: usize = 1;
        for &(k_min, k_max) in &ranges {
            if k_max < k_min {
                return Err(Error::InvalidArgument(format!(
                    "empty index range {k_min}..={k_max}"
                )));
            }
            let axis = usize::try_from(k_max - k_min + 1)
                .map_err(|_| Error::InvalidArgument("grid axis too large".into()))?;
            count = count
                .checked_mul(axis)
                .ok_or_else(|| Error::InvalidArgument("grid too large to index".into()))?;
        }
        Ok(Self { step, ranges, count })
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn ranges(&self) -> &[(i64, i64)] {
        &self.ranges
    }

    /// Points along one axis.
    pub fn axis_len(&self, axis: usize) -> usize {
        (self.ranges[axis].1 - self.ranges[axis].0 + 1) as usize
    }

    /// The grid point at a flat index.
    pub fn center(&self, index: usize, out: &mut [f64]) {
        debug_assert!(index < self.count);
        debug_assert_eq!(out.len(), self.dim());
        let mut rest = index;
        for axis in (0..self.dim()).rev() {
            let n = self.axis_len(axis);
            let offset = rest % n;
            rest /= n;
            out[axis] = (self.ranges[axis].0 + offset as i64) as f64 * self.step;
        }
    }

    pub fn center_vec(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.center(index, &mut out);
        out
    }

    /// Flat index of the nearest grid point (componentwise rounding, halves
    /// away from zero), or `None` when the rounded multiple falls outside the
    /// index range on some axis.
    pub fn snap(&self, x: &[f64]) -> Option<usize> {
        debug_assert_eq!(x.len(), self.dim());
        let mut index: usize = 0;
        for (axis, &xi) in x.iter().enumerate() {
            let k = (xi / self.step).round();
            if !k.is_finite() {
                return None;
            }
            let k = k as i64;
            let (k_min, k_max) = self.ranges[axis];
            if k < k_min || k > k_max {
                return None;
            }
            index = index * self.axis_len(axis) + (k - k_min) as usize;
        }
        Some(index)
    }
}

/// Sidecar summary written next to the binary table.
#[derive(Debug, Serialize)]
struct Sidecar {
    n_states: usize,
    n_inputs: usize,
    tau: f64,
    eta: f64,
    mu: f64,
    blocked_count: u64,
}

/// A finite abstraction: the two grids, the sampling period, and the dense
/// successor table in state-major layout (`table[s * n_inputs + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Abstraction {
    state_grid: UniformGrid,
    input_grid: UniformGrid,
    tau: f64,
    successors: Vec<u32>,
}

impl Abstraction {
    pub fn state_grid(&self) -> &UniformGrid {
        &self.state_grid
    }

    pub fn input_grid(&self) -> &UniformGrid {
        &self.input_grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_states(&self) -> usize {
        self.state_grid.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_grid.len()
    }

    /// Successor state, or `None` when the transition is blocked.
    pub fn successor(&self, state: usize, input: usize) -> Option<usize> {
        match self.successors[state * self.n_inputs() + input] {
            BLOCKED => None,
            s => Some(s as usize),
        }
    }

    pub fn raw_successors(&self) -> &[u32] {
        &self.successors
    }

    pub fn blocked_count(&self) -> u64 {
        self.successors.iter().filter(|&&s| s == BLOCKED).count() as u64
    }

    /// Writes the binary table plus a human-readable `<path>.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.state_grid.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.input_grid.dim() as u64).to_le_bytes())?;
        w.write_all(&self.state_grid.step().to_le_bytes())?;
        w.write_all(&self.input_grid.step().to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        for grid in [&self.state_grid, &self.input_grid] {
            for &(k_min, k_max) in grid.ranges() {
                w.write_all(&k_min.to_le_bytes())?;
                w.write_all(&k_max.to_le_bytes())?;
            }
        }
        w.write_all(&(self.n_states() as u64).to_le_bytes())?;
        w.write_all(&(self.n_inputs() as u64).to_le_bytes())?;
        w.write_all(&self.blocked_count().to_le_bytes())?;
        for &s in &self.successors {
            w.write_all(&s.to_le_bytes())?;
        }
        w.flush()?;

        let sidecar = Sidecar {
            n_states: self.n_states(),
            n_inputs: self.n_inputs(),
            tau: self.tau,
            eta: self.state_grid.step(),
            mu: self.input_grid.step(),
            blocked_count: self.blocked_count(),
        };
        let mut text = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::CorruptFile(e.to_string()))?;
        text.push('\n');
        let mut sidecar_path = path.as_os_str().to_owned();
        sidecar_path.push(".json");
        std::fs::write(sidecar_path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let corrupt = |what: &str| Error::CorruptFile(format!("{}: {what}", path.display()));

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("missing magic"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut BufReader<std::fs::File>, what: &str| -> Result<u64> {
            r.read_exact(&mut u64buf).map_err(|_| corrupt(what))?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let state_dim = read_u64(&mut r, "truncated header")? as usize;
        let input_dim = read_u64(&mut r, "truncated header")? as usize;
        if state_dim == 0 || input_dim == 0 || state_dim > 64 || input_dim > 64 {
            return Err(corrupt("implausible dimensions"));
        }
        let eta = f64::from_le_bytes(read_u64(&mut r, "truncated header")?.to_le_bytes());
        let mu = f64::from_le_bytes(read_u64(&mut r, "truncated header")?.to_le_bytes());
        let tau = f64::from_le_bytes(read_u64(&mut r, "truncated header")?.to_le_bytes());
        let read_ranges = |r: &mut BufReader<std::fs::File>,
                               dim: usize|
         -> Result<Vec<(i64, i64)>> {
            let mut ranges = Vec::with_capacity(dim);
            let mut buf = [0u8; 8];
            for _ in 0..dim {
                r.read_exact(&mut buf).map_err(|_| corrupt("truncated ranges"))?;
                let k_min = i64::from_le_bytes(buf);
                r.read_exact(&mut buf).map_err(|_| corrupt("truncated ranges"))?;
                let k_max = i64::from_le_bytes(buf);
                ranges.push((k_min, k_max));
            }
            Ok(ranges)
        };
        let state_ranges = read_ranges(&mut r, state_dim)?;
        let input_ranges = read_ranges(&mut r, input_dim)?;
        let state_grid =
            UniformGrid::from_ranges(eta, state_ranges).map_err(|e| corrupt(&e.to_string()))?;
        let input_grid =
            UniformGrid::from_ranges(mu, input_ranges).map_err(|e| corrupt(&e.to_string()))?;

        let n_states = read_u64(&mut r, "truncated counts")? as usize;
        let n_inputs = read_u64(&mut r, "truncated counts")? as usize;
        if n_states != state_grid.len() || n_inputs != input_grid.len() {
            return Err(corrupt("counts disagree with grid ranges"));
        }
        let blocked_claim = read_u64(&mut r, "truncated counts")?;

        let total = n_states
            .checked_mul(n_inputs)
            .ok_or_else(|| corrupt("table too large"))?;
        let mut bytes = vec![0u8; total * 4];
        r.read_exact(&mut bytes).map_err(|_| corrupt("truncated table"))?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(Error::Io)? != 0 {
            return Err(corrupt("trailing bytes after table"));
        }
        let mut successors = Vec::with_capacity(total);
        let mut blocked = 0u64;
        for chunk in bytes.chunks_exact(4) {
            let s = u32::from_le_bytes(chunk.try_into().expect("chunked by 4"));
            if s == BLOCKED {
                blocked += 1;
            } else if s as usize >= n_states {
                return Err(corrupt("successor index out of range"));
            }
            successors.push(s);
        }
        if blocked != blocked_claim {
            return Err(corrupt("blocked count disagrees with table"));
        }
        Ok(Self { state_grid, input_grid, tau, successors })
    }
}

/// Computes the full successor table of `field` (state `x`, constant input
/// over each period) on the `eta`-grid covering `domain` and the `mu`-grid
/// covering `input_box`. The flow over `tau` is integrated with fixed steps
/// of `inner_step`; endpoints outside `domain` (or whose nearest multiple
/// leaves the grid), and trajectories that blow up mid-period, are blocked.
pub fn build_abstraction(
    field: &VectorField,
    domain: &BoxDomain,
    eta: f64,
    input_box: &BoxDomain,
    mu: f64,
    tau: f64,
    inner_step: f64,
) -> Result<Abstraction> {
    if field.state_dim() != domain.dim() || field.input_dim() != input_box.dim() {
        return Err(Error::DimensionMismatch(format!(
            "field is {}-state/{}-input, boxes are {}/{}",
            field.state_dim(),
            field.input_dim(),
            domain.dim(),
            input_box.dim()
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("period must be positive, got {tau}")));
    }
    if !(inner_step.is_finite() && inner_step > 0.0 && inner_step <= tau) {
        return Err(Error::InvalidArgument(format!(
            "integration step must lie in (0, {tau}], got {inner_step}"
        )));
    }
    let n_steps = (tau / inner_step).round();
    if (n_steps * inner_step - tau).abs() > 1e-9 * tau.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "period {tau} is not a whole number of steps of {inner_step}"
        )));
    }
    let n_steps = n_steps as usize;

    let state_grid = UniformGrid::cover(domain, eta)?;
    let input_grid = UniformGrid::cover(input_box, mu)?;
    let n_states = state_grid.len();
    let n_inputs = input_grid.len();
    if n_states > BLOCKED as usize {
        return Err(Error::InvalidArgument(format!(
            "{n_states} grid states exceed the 32-bit successor encoding"
        )));
    }
    let n = field.state_dim();

    // Input values are shared read-only across rows.
    let mut input_values = vec![0.0; n_inputs * input_grid.dim()];
    for j in 0..n_inputs {
        input_grid.center(j, &mut input_values[j * input_grid.dim()..(j + 1) * input_grid.dim()]);
    }
    let m = input_grid.dim();

    let mut successors = vec![0u32; n_states * n_inputs];
    successors
        .par_chunks_mut(n_inputs)
        .enumerate()
        .for_each_init(
            || (Rk4Scratch::new(n), vec![0.0; n], vec![0.0; n]),
            |(scratch, origin, x), (state, row)| {
                state_grid.center(state, origin);
                for (j, slot) in row.iter_mut().enumerate() {
                    x.copy_from_slice(origin);
                    let u = &input_values[j * m..(j + 1) * m];
                    let endpoint_ok =
                        integrate_endpoint(field, x, u, n_steps, inner_step, scratch).is_ok();
                    *slot = if endpoint_ok && domain.contains(x) {
                        match state_grid.snap(x) {
                            Some(s) => s as u32,
                            None => BLOCKED,
                        }
                    } else {
                        BLOCKED
                    };
                }
            },
        );

    Ok(Abstraction { state_grid, input_grid, tau, successors })
}

/// Geometric-series deviation bound for an abstraction of a loop whose
/// trajectory pairs contract by `scale * exp(-decay_rate * tau)` per period:
/// starting and per-step snap errors of radius `snap_radius` accumulate to at
/// most `snap_radius / (1 - q)`. Errors when the per-period factor `q` is not
/// below one (no contraction, no bound).
pub fn accumulated_snap_bound(
    scale: f64,
    decay_rate: f64,
    tau: f64,
    snap_radius: f64,
) -> Result<f64> {
    let q = scale * (-decay_rate * tau).exp();
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "per-period factor {q} is not in [0, 1); the loop does not contract over one period"
        )));
    }
    Ok(snap_radius / (1.0 - q))
}

/// Outcome of an empirical deviation sweep.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonReport {
    pub pass: bool,
    pub epsilon: f64,
    pub n_runs: usize,
    pub steps_per_run: usize,
    /// Worst Euclidean deviation between a continuous trajectory and its
    /// abstract run, over all runs and sampling instants.
    pub max_deviation: f64,
    /// Worst deviation of each run, in run order.
    pub per_run_max: Vec<f64>,
    /// Runs cut short because the abstract run hit a blocked transition.
    pub truncated_runs: usize,
}

/// Replays `n_runs` random input words on the continuous loop and on the
/// abstraction, comparing states at every sampling instant.
///
/// Each run starts from a continuous point drawn uniformly from `domain`
/// (snapped for the abstract copy, so the initial quantization error is
/// included) and applies a uniformly random word of grid inputs. Runs are
/// seeded independently, so the report does not depend on thread count, and
/// the start points do not depend on the grid pitch — refining `eta` is
/// comparable run for run.
#[allow(clippy::too_many_arguments)]
pub fn check_epsilon(
    field: &VectorField,
    abstraction: &Abstraction,
    domain: &BoxDomain,
    epsilon: f64,
    n_runs: usize,
    steps_per_run: usize,
    inner_step: f64,
    seed: u64,
) -> Result<EpsilonReport> {
    if field.state_dim() != domain.dim() || domain.dim() != abstraction.state_grid().dim() {
        return Err(Error::DimensionMismatch(
            "field, domain, and abstraction disagree on the state dimension".into(),
        ));
    }
    if field.input_dim() != abstraction.input_grid().dim() {
        return Err(Error::DimensionMismatch(
            "field and abstraction disagree on the input dimension".into(),
        ));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "deviation budget must be positive, got {epsilon}"
        )));
    }
    if n_runs == 0 || steps_per_run == 0 {
        return Err(Error::InvalidArgument("need at least one run and one step".into()));
    }
    let tau = abstraction.tau();
    let n_steps = (tau / inner_step).round();
    if !(inner_step.is_finite() && inner_step > 0.0)
        || (n_steps * inner_step - tau).abs() > 1e-9 * tau.max(1.0)
    {
        return Err(Error::InvalidArgument(format!(
            "period {tau} is not a whole number of steps of {inner_step}"
        )));
    }
    let n_steps = n_steps as usize;
    let n = field.state_dim();
    let m = field.input_dim();
    let n_inputs = abstraction.n_inputs();

    let run_results: Vec<Result<(f64, bool)>> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut x = vec![0.0; n];
            let mut unit = vec![0.0; n];
            let mut state = loop {
                for v in unit.iter_mut() {
                    *v = rng.gen::<f64>();
                }
                domain.lerp(&unit, &mut x);
                if let Some(s) = abstraction.state_grid().snap(&x) {
                    break s;
                }
            };
            let mut scratch = Rk4Scratch::new(n);
            let mut u = vec![0.0; m];
            let mut center = vec![0.0; n];
            let dev = |x: &[f64], center: &[f64]| -> f64 {
                x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            };
            abstraction.state_grid().center(state, &mut center);
            let mut worst = dev(&x, &center);
            let mut truncated = false;
            for _ in 0..steps_per_run {
                let j = rng.gen_range(0..n_inputs);
                match abstraction.successor(state, j) {
                    Some(next) => state = next,
                    None => {
                        truncated = true;
                        break;
                    }
                }
                abstraction.input_grid().center(j, &mut u);
                integrate_endpoint(field, &mut x, &u, n_steps, inner_step, &mut scratch)?;
                abstraction.state_grid().center(state, &mut center);
                worst = worst.max(dev(&x, &center));
            }
            Ok((worst, truncated))
        })
        .collect();

    let mut per_run_max = Vec::with_capacity(n_runs);
    let mut truncated_runs = 0;
    let mut max_deviation = 0.0f64;
    for r in run_results {
        let (worst, truncated) = r?;
        max_deviation = max_deviation.max(worst);
        per_run_max.push(worst);
        if truncated {
            truncated_runs += 1;
        }
    }
    Ok(EpsilonReport {
        pass: max_deviation <= epsilon,
        epsilon,
        n_runs,
        steps_per_run,
        max_deviation,
        per_run_max,
        truncated_runs,
    })
}

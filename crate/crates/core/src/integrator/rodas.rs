//! RODAS4: a stiffly accurate 6-stage Rosenbrock method of order 4 with an
//! embedded order-3 error estimate and a continuous order-3 interpolant.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::model::{Event, ModelError, OdeModel};

const GAMMA: f64 = 0.25;
const C2: f64 = 0.386;
const C3: f64 = 0.21;
const C4: f64 = 0.63;
const D: [f64; 4] = [0.25, -0.1043, 0.1035, -0.0362];

const A21: f64 = 1.544;
const A31: f64 = 0.946_678_528_081_582_6;
const A32: f64 = 0.255_701_169_898_328_4;
const A41: f64 = 3.314_825_187_068_521;
const A42: f64 = 2.896_124_015_972_201;
const A43: f64 = 0.998_641_913_997_781_7;
const A51: f64 = 1.221_224_509_226_641;
const A52: f64 = 6.019_134_481_288_629;
const A53: f64 = 12.537_083_329_320_87;
const A54: f64 = -0.687_886_036_105_895;

const C21: f64 = -5.6688;
const C31: f64 = -2.430_093_356_833_875;
const C32: f64 = -0.206_359_915_709_191_5;
const C41: f64 = -0.107_352_905_815_137_5;
const C42: f64 = -9.594_562_251_023_355;
const C43: f64 = -20.470_286_148_096_16;
const C51: f64 = 7.496_443_313_967_647;
const C52: f64 = -10.246_804_314_643_52;
const C53: f64 = -33.999_903_528_199_05;
const C54: f64 = 11.708_908_932_061_6;
const C61: f64 = 8.083_246_795_921_522;
const C62: f64 = -7.981_132_988_064_893;
const C63: f64 = -31.521_594_328_743_71;
const C64: f64 = 16.319_305_431_231_36;
const C65: f64 = -6.058_818_238_834_054;

const H2: [f64; 5] = [
    10.126_235_083_445_86,
    -7.487_995_877_610_167,
    -34.800_918_615_557_47,
    -7.992_771_707_568_823,
    1.025_137_723_295_662,
];
const H3: [f64; 5] = [
    -0.676_280_339_280_125_3,
    6.087_714_651_680_015,
    16.430_843_208_924_78,
    24.767_225_114_183_86,
    -6.594_389_125_716_872,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 6.0;

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// First step; chosen from the initial derivative when `None`.
    pub h0: Option<f64>,
    pub h_max: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub max_steps: usize,
    /// Constant step without error control (convergence studies).
    pub fixed_step: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-7,
            atol: 1e-9,
            h0: None,
            h_max: f64::INFINITY,
            t_start: 0.0,
            t_end: 1.0,
            max_steps: 1_000_000,
            fixed_step: None,
        }
    }
}

impl IntegratorConfig {
    pub fn span(t_start: f64, t_end: f64) -> Self {
        IntegratorConfig { t_start, t_end, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        let bad = |m: &str| Err(IntegrationError::Config(m.into()));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.t_end >= self.t_start) {
            return bad("t_end must not precede t_start");
        }
        if !(self.h_max > 0.0) || self.h0.is_some_and(|h| !(h > 0.0)) || self.fixed_step.is_some_and(|h| !(h > 0.0)) {
            return bad("step sizes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IntegrationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step size underflow at t = {t} (h = {h:e}); dominant error in `{component}`")]
    StepUnderflow { t: f64, h: f64, component: String },
    #[error("maximum number of steps ({0}) reached at t = {1}")]
    TooManySteps(usize, f64),
    #[error("model failure at t = {t}: {source}")]
    Model { t: f64, source: ModelError },
    #[error("singular iteration matrix at t = {t} (h = {h:e})")]
    Singular { t: f64, h: f64 },
    #[error("state vector has length {got}, model dimension is {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("time {t} outside trajectory span [{t0}, {t1}]")]
    OutOfRange { t: f64, t0: f64, t1: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub jacobians: usize,
    pub lu_decompositions: usize,
}

/// Accepted steps with their interpolation data.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    /// One row per accepted time.
    pub states: Vec<Vec<f64>>,
    /// `(cont2, cont3)` for the step starting at `times[k]`.
    pub interpolants: Vec<(Vec<f64>, Vec<f64>)>,
    pub stats: SolverStats,
    pub events: Vec<Event>,
    pub wall_time: f64,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Interpolated state at `t`.
    pub fn dense_output(&self, t: f64) -> Result<Vec<f64>, IntegrationError> {
        let (t0, t1) = (self.t_start(), self.t_end());
        if !(t >= t0 && t <= t1) {
            return Err(IntegrationError::OutOfRange { t, t0, t1 });
        }
        let k = match self.times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok(self.states[k].clone()),
            Err(k) => k - 1,
        };
        let h = self.times[k + 1] - self.times[k];
        let s = (t - self.times[k]) / h;
        let (y0, y1) = (&self.states[k], &self.states[k + 1]);
        let (c2, c3) = &self.interpolants[k];
        Ok((0..y0.len()).map(|i| y0[i] * (1.0 - s) + s * (y1[i] + (1.0 - s) * (c2[i] + s * c3[i]))).collect())
    }

    /// Uniform grid `t_start, t_start + dt, …` up to `t_end` (inclusive
    /// within round-off).
    pub fn grid(&self, dt: f64) -> Vec<f64> {
        uniform_grid(self.t_start(), self.t_end(), dt)
    }

    /// CSV with header `t,<names>` sampled on a uniform grid.
    pub fn to_csv(&self, dt: f64) -> Result<String, IntegrationError> {
        let mut s = String::from("t");
        for n in &self.names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for t in self.grid(dt) {
            let y = self.dense_output(t)?;
            write!(s, "{t:.16e}").unwrap();
            for v in y {
                write!(s, ",{v:.16e}").unwrap();
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn stats_block(&self) -> String {
        let st = &self.stats;
        format!(
            "steps: {}\nrejected: {}\nrhs evaluations: {}\njacobians: {}\nlu decompositions: {}\nevents: {}\nwall time (s): {:.3}\n",
            st.steps,
            st.rejected,
            st.rhs_evals,
            st.jacobians,
            st.lu_decompositions,
            self.events.len(),
            self.wall_time
        )
    }
}

pub fn uniform_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt + 1e-9).floor() as usize;
    (0..=n).map(|k| (t0 + k as f64 * dt).min(t1)).collect()
}

struct Work {
    n: usize,
    mass: Option<Vec<bool>>,
    k: [Vec<f64>; 6],
    f: Vec<f64>,
    ft: Vec<f64>,
    tmp: Vec<f64>,
    jac: DMatrix<f64>,
}

impl Work {
    fn mass_apply(&self, v: &[f64], out: &mut [f64], scale: f64) {
        match &self.mass {
            None => out.iter_mut().zip(v).for_each(|(o, x)| *o += scale * x),
            Some(m) => {
                for i in 0..self.n {
                    if m[i] {
                        out[i] += scale * v[i];
                    }
                }
            }
        }
    }
}

struct StepResult {
    y_new: Vec<f64>,
    err: f64,
    worst: usize,
    cont2: Vec<f64>,
    cont3: Vec<f64>,
}

fn model_err(t: f64) -> impl Fn(ModelError) -> IntegrationError {
    move |source| IntegrationError::Model { t, source }
}

fn try_step<M: OdeModel + ?Sized>(
    model: &mut M,
    w: &mut Work,
    stats: &mut SolverStats,
    t: f64,
    y: &[f64],
    h: f64,
    autonomous: bool,
    cfg: &IntegratorConfig,
) -> Result<Option<StepResult>, IntegrationError> {
    let n = w.n;
    let mut e = -w.jac.clone();
    let diag = 1.0 / (GAMMA * h);
    for i in 0..n {
        if w.mass.as_ref().map_or(true, |m| m[i]) {
            e[(i, i)] += diag;
        }
    }
    let lu = e.lu();
    stats.lu_decompositions += 1;
    if !lu.is_invertible() {
        return Ok(None);
    }
    let solve = |rhs: &[f64]| -> Option<Vec<f64>> {
        let v = lu.solve(&DVector::from_column_slice(rhs))?;
        v.iter().all(|x| x.is_finite()).then(|| v.as_slice().to_vec())
    };
    let a: [&[f64]; 5] = [&[], &[A21], &[A31, A32], &[A41, A42, A43], &[A51, A52, A53, A54]];
    let c: [&[f64]; 6] = [&[], &[C21], &[C31, C32], &[C41, C42, C43], &[C51, C52, C53, C54], &[C61, C62, C63, C64, C65]];
    let nodes = [0.0, C2, C3, C4, 1.0, 1.0];
    let mut ystage = vec![0.0; n];
    for s in 0..6 {
        if s < 5 {
            ystage.copy_from_slice(y);
            for (j, &aij) in a[s].iter().enumerate() {
                for i in 0..n {
                    ystage[i] += aij * w.k[j][i];
                }
            }
            if s == 4 {
                w.tmp.copy_from_slice(&ystage);
            }
        } else {
            for i in 0..n {
                w.tmp[i] += w.k[4][i];
            }
            ystage.copy_from_slice(&w.tmp);
        }
        let ts = t + nodes[s] * h;
        let rhs = &mut w.f;
        match model.rhs(ts, &ystage, rhs) {
            Ok(()) => {}
            Err(ModelError::NonFinite(_)) | Err(ModelError::Singular(_)) | Err(ModelError::NoConvergence(_)) => {
                return Ok(None)
            }
            Err(e) => return Err(model_err(ts)(e)),
        }
        stats.rhs_evals += 1;
        if rhs.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let mut corr = vec![0.0; n];
        for (j, &cij) in c[s].iter().enumerate() {
            for i in 0..n {
                corr[i] += cij / h * w.k[j][i];
            }
        }
        let mut rhs = std::mem::take(&mut w.f);
        w.mass_apply(&corr, &mut rhs, 1.0);
        if s < 4 && !autonomous {
            for i in 0..n {
                rhs[i] += h * D[s] * w.ft[i];
            }
        }
        let k = solve(&rhs);
        w.f = rhs;
        match k {
            Some(k) => w.k[s] = k,
            None => return Ok(None),
        }
    }
    let y_new: Vec<f64> = (0..n).map(|i| w.tmp[i] + w.k[5][i]).collect();
    let mut err = 0.0;
    let mut worst = (0, 0.0f64);
    for i in 0..n {
        let sk = cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
        let r = w.k[5][i] / sk;
        err += r * r;
        if r.abs() > worst.1 {
            worst = (i, r.abs());
        }
    }
    let err = (err / n.max(1) as f64).sqrt();
    let cont = |h: &[f64; 5]| -> Vec<f64> { (0..n).map(|i| (0..5).map(|j| h[j] * w.k[j][i]).sum()).collect() };
    Ok(Some(StepResult { cont2: cont(&H2), cont3: cont(&H3), y_new, err, worst: worst.0 }))
}

fn weighted_norm(v: &[f64], y: &[f64], cfg: &IntegratorConfig) -> f64 {
    let s: f64 = v.iter().zip(y).map(|(a, b)| (a / (cfg.atol + cfg.rtol * b.abs())).powi(2)).sum();
    (s / v.len().max(1) as f64).sqrt()
}

fn initial_step<M: OdeModel + ?Sized>(model: &mut M, t: f64, y: &[f64], cfg: &IntegratorConfig) -> Result<f64, IntegrationError> {
    if let Some(h) = cfg.h0 {
        return Ok(h);
    }
    let mut f = vec![0.0; y.len()];
    model.rhs(t, y, &mut f).map_err(model_err(t))?;
    if let Some(m) = model.differential_mask() {
        f.iter_mut().zip(m).filter(|(_, d)| !d).for_each(|(v, _)| *v = 0.0);
    }
    let d0 = weighted_norm(y, y, cfg);
    let d1 = weighted_norm(&f, y, cfg);
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    Ok(h.min(cfg.h_max).min(1e-3 * (cfg.t_end - cfg.t_start).max(1e-12)).max(1e-10))
}

/// Integrates `M y' = F(t, y)` over `[t_start, t_end]`. Events fire in time
/// order; each one ends a step exactly at its time and restarts the method
/// from the initial-step heuristic.
pub fn integrate<M: OdeModel + ?Sized>(
    model: &mut M,
    y0: &[f64],
    cfg: &IntegratorConfig,
    events: &[Event],
) -> Result<Trajectory, IntegrationError> {
    cfg.validate()?;
    let n = model.dim();
    if y0.len() != n {
        return Err(IntegrationError::Dimension { got: y0.len(), expected: n });
    }
    let started = std::time::Instant::now();
    let mut pending: Vec<Event> = events.to_vec();
    pending.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    for ev in pending.iter().filter(|e| e.time > cfg.t_end || e.time < cfg.t_start) {
        warn!("event on `{}` at t = {} is outside the span and never fires", ev.input, ev.time);
    }
    pending.retain(|e| e.time >= cfg.t_start && e.time <= cfg.t_end);
    let mut pending = pending.into_iter().peekable();

    let autonomous = model.is_autonomous();
    let mut w = Work {
        n,
        mass: model.differential_mask(),
        k: std::array::from_fn(|_| vec![0.0; n]),
        f: vec![0.0; n],
        ft: vec![0.0; n],
        tmp: vec![0.0; n],
        jac: DMatrix::zeros(n, n),
    };
    let mut traj = Trajectory {
        names: model.state_names(),
        times: vec![cfg.t_start],
        states: vec![y0.to_vec()],
        interpolants: Vec::new(),
        stats: SolverStats::default(),
        events: Vec::new(),
        wall_time: 0.0,
    };
    let mut t = cfg.t_start;
    let mut y = y0.to_vec();
    let mut h = match cfg.fixed_step {
        Some(h) => h,
        None => initial_step(model, t, &y, cfg)?,
    };
    let mut last_rejected = false;
    loop {
        while let Some(ev) = pending.next_if(|e| e.time <= t) {
            model.apply_event(&ev).map_err(model_err(t))?;
            traj.events.push(ev);
            if cfg.fixed_step.is_none() {
                h = initial_step(model, t, &y, cfg)?;
            }
        }
        if t >= cfg.t_end {
            break;
        }
        if traj.stats.steps >= cfg.max_steps {
            return Err(IntegrationError::TooManySteps(cfg.max_steps, t));
        }
        let stop = pending.peek().map_or(cfg.t_end, |e| e.time.min(cfg.t_end));
        h = h.min(cfg.h_max);
        let mut lands = false;
        if t + h >= stop || (stop - t - h) < 1e-12 * stop.abs().max(1.0) {
            h = stop - t;
            lands = true;
        }
        model.jacobian(t, &y, &mut w.jac).map_err(model_err(t))?;
        traj.stats.jacobians += 1;
        if !autonomous {
            model.time_partial(t, &y, &mut w.ft).map_err(model_err(t))?;
        }
        let res = try_step(model, &mut w, &mut traj.stats, t, &y, h, autonomous, cfg)?;
        let accept_fixed = cfg.fixed_step.is_some();
        match res {
            Some(r) if accept_fixed || r.err <= 1.0 => {
                t = if lands { stop } else { t + h };
                traj.times.push(t);
                traj.interpolants.push((r.cont2, r.cont3));
                traj.states.push(r.y_new.clone());
                y = r.y_new;
                traj.stats.steps += 1;
                if !accept_fixed {
                    let fac = (r.err.powf(0.25) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                    let mut h_new = h / fac;
                    if last_rejected {
                        h_new = h_new.min(h);
                    }
                    // keep the pre-clamp size when the step was shortened to land on a stop
                    if !lands || h_new > h {
                        h = h_new;
                    }
                }
                last_rejected = false;
            }
            other => {
                if accept_fixed {
                    return Err(IntegrationError::Singular { t, h });
                }
                traj.stats.rejected += 1;
                last_rejected = true;
                let (fac, worst) = match &other {
                    Some(r) => ((r.err.powf(0.25) / SAFETY).clamp(1.0, 1.0 / FAC_MIN), r.worst),
                    None => (4.0, 0),
                };
                h /= fac;
                if h < 1e-14 * t.abs().max(1e-3) {
                    if other.is_none() {
                        return Err(IntegrationError::Singular { t, h });
                    }
                    return Err(IntegrationError::StepUnderflow { t, h, component: traj.names[worst].clone() });
                }
            }
        }
    }
    traj.wall_time = started.elapsed().as_secs_f64();
    Ok(traj)
}

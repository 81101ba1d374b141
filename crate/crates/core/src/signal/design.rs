use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub onset: f64,
    pub duration: f64,
}

/// Stimulus timing for `K` tasks over `T` volumes acquired every `tr` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParadigm {
    pub tr: f64,
    pub n_volumes: usize,
    pub task_names: Vec<String>,
    pub events: Vec<Vec<Event>>,
}

impl TaskParadigm {
    pub fn new(
        tr: f64,
        n_volumes: usize,
        task_names: Vec<String>,
        events: Vec<Vec<Event>>,
    ) -> Result<Self> {
        if !(tr > 0.0) || n_volumes == 0 {
            return Err(Error::param("paradigm needs TR > 0 and at least one volume"));
        }
        if task_names.is_empty() || task_names.len() != events.len() {
            return Err(Error::param("paradigm needs K >= 1 tasks with one event list each"));
        }
        let span = tr * n_volumes as f64;
        for (k, evs) in events.iter().enumerate() {
            for e in evs {
                if !(e.onset >= 0.0 && e.duration >= 0.0 && e.onset + e.duration <= span + 1e-9) {
                    return Err(Error::param(format!(
                        "event of task {:?} at {} s (+{} s) lies outside [0, {span}] s",
                        task_names[k], e.onset, e.duration
                    )));
                }
            }
        }
        Ok(Self {
            tr,
            n_volumes,
            task_names,
            events,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.task_names.len()
    }

    /// Parses `task onset duration` lines. Tasks are ordered as in
    /// `task_order` when given, otherwise by first appearance.
    pub fn parse(
        text: &str,
        tr: f64,
        n_volumes: usize,
        task_order: Option<&[String]>,
    ) -> Result<Self> {
        let mut names: Vec<String> = task_order.map(<[String]>::to_vec).unwrap_or_default();
        let mut events: Vec<Vec<Event>> = vec![Vec::new(); names.len()];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(Error::parse(ln + 1, "expected `task onset duration`"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(ln + 1, format!("{s:?}: {e}")))
            };
            let ev = Event {
                onset: num(toks[1])?,
                duration: num(toks[2])?,
            };
            let k = match names.iter().position(|n| n == toks[0]) {
                Some(k) => k,
                None if task_order.is_some() => {
                    return Err(Error::parse(ln + 1, format!("unknown task {:?}", toks[0])))
                }
                None => {
                    names.push(toks[0].to_string());
                    events.push(Vec::new());
                    names.len() - 1
                }
            };
            events[k].push(ev);
        }
        Self::new(tr, n_volumes, names, events)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, evs) in self.task_names.iter().zip(&self.events) {
            for e in evs {
                out.push_str(&format!("{name} {} {}\n", e.onset, e.duration));
            }
        }
        out
    }
}

const MICROTIME: usize = 16;
const HRF_LENGTH: f64 = 32.0;

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

/// Canonical double-gamma HRF sampled every `dt` seconds over 32 s, scaled to
/// unit peak: response peak 6 s, undershoot 16 s, dispersions 1 s, ratio 1/6.
pub fn canonical_hrf(dt: f64) -> Vec<f64> {
    let n = (HRF_LENGTH / dt).round() as usize + 1;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            gamma_pdf(t, 6.0, 1.0) - gamma_pdf(t, 16.0, 1.0) / 6.0
        })
        .collect();
    let peak = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    raw.into_iter().map(|v| v / peak).collect()
}

/// HRF-convolved boxcar for task `k`, sampled at the TR and divided by its
/// maximum over time (not centred). All zeros when the task has no events.
pub fn task_regressor(paradigm: &TaskParadigm, k: usize) -> Vec<f64> {
    let dt = paradigm.tr / MICROTIME as f64;
    let n_micro = paradigm.n_volumes * MICROTIME;
    let mut boxcar = vec![0.0; n_micro];
    for e in &paradigm.events[k] {
        let lo = (e.onset / dt).round() as usize;
        let hi = (((e.onset + e.duration) / dt).round() as usize).min(n_micro);
        boxcar[lo.min(n_micro)..hi].iter_mut().for_each(|b| *b = 1.0);
    }
    let hrf = canonical_hrf(dt);
    let sampled: Vec<f64> = (0..paradigm.n_volumes)
        .map(|t| {
            let m = t * MICROTIME;
            (0..hrf.len().min(m + 1))
                .map(|l| hrf[l] * boxcar[m - l])
                .sum::<f64>()
                * dt
        })
        .collect();
    let max = sampled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        sampled.into_iter().map(|v| v / max).collect()
    } else {
        vec![0.0; paradigm.n_volumes]
    }
}

/// Task design (`T × K`), max-normalised then mean-centred, with the temporal
/// derivative of each column for use as nuisance regressors.
#[derive(Debug, Clone)]
pub struct Design {
    pub tasks: DMatrix<f64>,
    pub derivatives: DMatrix<f64>,
    /// Tasks without events; their columns are all zero.
    pub empty_tasks: Vec<usize>,
}

fn center(col: &mut [f64]) {
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    col.iter_mut().for_each(|v| *v -= mean);
}

pub fn build_design(paradigm: &TaskParadigm) -> Design {
    let t = paradigm.n_volumes;
    let k = paradigm.n_tasks();
    let mut tasks = DMatrix::zeros(t, k);
    let mut derivatives = DMatrix::zeros(t, k);
    let mut empty_tasks = Vec::new();
    for j in 0..k {
        let mut col = task_regressor(paradigm, j);
        if col.iter().all(|&v| v == 0.0) {
            log::warn!("task {:?} has no events; its design column is zero", paradigm.task_names[j]);
            empty_tasks.push(j);
            continue;
        }
        let mut deriv: Vec<f64> = (0..t)
            .map(|i| {
                if t < 2 {
                    0.0
                } else if i == 0 {
                    col[1] - col[0]
                } else if i == t - 1 {
                    col[t - 1] - col[t - 2]
                } else {
                    (col[i + 1] - col[i - 1]) / 2.0
                }
            })
            .map(|d| d / paradigm.tr)
            .collect();
        center(&mut col);
        center(&mut deriv);
        tasks.set_column(j, &nalgebra::DVector::from_vec(col));
        derivatives.set_column(j, &nalgebra::DVector::from_vec(deriv));
    }
    Design {
        tasks,
        derivatives,
        empty_tasks,
    }
}

//! Parameter fitting.
//!
//! * [`fit_counting`]: ratio-of-counts MLE for models whose conditionals are
//!   fully observed (RCM, RCTR, DCTR, cascade).
//! * [`fit_em`]: expectation–maximization. Product models are treated as a
//!   conjunction of independent Bernoulli latents ("gates"), so every M-step
//!   is a ratio of expected counts. DBN and DCM run EM over the last examined
//!   rank of each list instead.
//! * [`brute_force_mle`]: grid search oracle for small problems.
//!
//! E-step statistics are accumulated over fixed chunks of sessions and
//! combined in chunk order, so reports do not depend on the worker count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::clicklog::{ClickLog, InterfaceKind, LayoutShape, SessionRecord, Vocab};
use crate::error::{Error, Result};
use crate::models::{
    bernoulli_ln, entry_label, joint_log_likelihood, BoundModel, Gates, Lit, ModelInstance,
    ModelKind, ParamRef, ParamsFile, RowState, TableName,
};
use crate::parallel::CHUNK;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    UniformHalf,
    SeededRandom,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_half" => Ok(Init::UniformHalf),
            "seeded_random" => Ok(Init::SeededRandom),
            other => Err(Error::Config(format!(
                "unknown init `{other}` (expected uniform_half or seeded_random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop once the relative LL improvement of an iteration is at most this.
    pub rel_tol: f64,
    pub init: Init,
    /// Pseudo-count: estimates are `(num + ε) / (den + 2ε)`.
    pub smoothing_epsilon: f64,
    /// Seed for `Init::SeededRandom`.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 500,
            rel_tol: 1e-7,
            init: Init::UniformHalf,
            smoothing_epsilon: 0.0,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be ≥ 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be > 0".into()));
        }
        if !(self.smoothing_epsilon >= 0.0) || !self.smoothing_epsilon.is_finite() {
            return Err(Error::Config("smoothing_epsilon must be a finite number ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: ModelInstance,
    pub ll_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub normalization: String,
    /// Entries with no exposure, reported as `table[key]` and set to the unseen default.
    pub undetermined: Vec<String>,
}

#[derive(Serialize)]
struct FitReportFile<'a> {
    #[serde(flatten)]
    params: ParamsFile<'a>,
    ll_trajectory: &'a [f64],
    iterations: usize,
    converged: bool,
    normalization: &'a str,
    undetermined: &'a [String],
}

impl FitReport {
    pub fn final_ll(&self) -> f64 {
        *self.ll_trajectory.last().expect("trajectory is never empty")
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FitReportFile {
            params: self.model.to_params_file(),
            ll_trajectory: &self.ll_trajectory,
            iterations: self.iterations,
            converged: self.converged,
            normalization: &self.normalization,
            undetermined: &self.undetermined,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

/// Counting-fit kinds; everything else goes through EM.
pub fn is_counting_kind(kind: ModelKind) -> bool {
    matches!(
        kind,
        ModelKind::Rcm | ModelKind::Rctr | ModelKind::Dctr | ModelKind::Cascade
    )
}

/// Fits with the estimator appropriate for `kind`.
pub fn fit(kind: ModelKind, log: &ClickLog, opts: &FitOptions) -> Result<FitReport> {
    if is_counting_kind(kind) {
        fit_counting(kind, log, opts)
    } else {
        fit_em(kind, log, opts)
    }
}

fn log_shape(kind: ModelKind, log: &ClickLog) -> Result<LayoutShape> {
    let shape = log
        .shape()
        .ok_or_else(|| Error::Estimation("cannot fit a model to an empty log".into()))?;
    if kind.needs_topics() && log.kind() != Some(InterfaceKind::Carousel) {
        return Err(Error::Mismatch(format!(
            "{kind} needs a carousel log, got {}",
            log.kind().map_or("nothing", |k| k.as_str())
        )));
    }
    Ok(shape)
}

/// Expected (or observed) event counts per dense entry plus the total LL.
#[derive(Debug, Clone)]
struct Stats {
    ll: f64,
    num: Vec<Vec<f64>>,
    den: Vec<Vec<f64>>,
}

impl Stats {
    fn zeros(m: &BoundModel) -> Self {
        let z: Vec<Vec<f64>> = m.slots.iter().map(|s| vec![0.0; s.len()]).collect();
        Stats {
            ll: 0.0,
            num: z.clone(),
            den: z,
        }
    }

    #[inline]
    fn add(&mut self, r: ParamRef, num: f64, den: f64) {
        self.num[r.slot as usize][r.index as usize] += num;
        self.den[r.slot as usize][r.index as usize] += den;
    }

    fn merge(mut self, other: Stats) -> Stats {
        self.ll += other.ll;
        for (a, b) in self.num.iter_mut().flatten().zip(other.num.iter().flatten()) {
            *a += b;
        }
        for (a, b) in self.den.iter_mut().flatten().zip(other.den.iter().flatten()) {
            *a += b;
        }
        self
    }
}

/// Runs `per_chunk` over fixed chunks in parallel and merges in chunk order.
fn accumulate<F>(m: &BoundModel, sessions: &[SessionRecord], per_chunk: F) -> Result<Stats>
where
    F: Fn(&mut Stats, &[SessionRecord]) -> Result<()> + Sync,
{
    let parts: Vec<Stats> = sessions
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut st = Stats::zeros(m);
            per_chunk(&mut st, chunk)?;
            Ok(st)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(Stats::zeros(m), Stats::merge))
}

fn impossible(kind: ModelKind, s: &SessionRecord) -> Error {
    Error::Estimation(format!(
        "the log contains a click pattern with probability 0 under {kind} (clicks {:?})",
        s.clicks.iter().map(|&c| c as u8).collect::<Vec<_>>()
    ))
}

fn counting_stats(m: &BoundModel, sessions: &[SessionRecord]) -> Result<Stats> {
    let kind = m.kind();
    let shape = m.shape();
    accumulate(m, sessions, |st, chunk| {
        for s in chunk {
            for (cell, (&y, &c)) in s.items.iter().zip(&s.clicks).enumerate() {
                let r = match kind {
                    ModelKind::Rcm => ParamRef { slot: 0, index: 0 },
                    ModelKind::Rctr => ParamRef { slot: 0, index: cell as u32 },
                    ModelKind::Dctr => ParamRef { slot: 0, index: y.0 },
                    ModelKind::Cascade => {
                        let p = shape.position(cell);
                        let row = s.row_clicks(p.i);
                        if row[..p.j - 1].iter().any(|&x| x) {
                            continue;
                        }
                        ParamRef { slot: 0, index: y.0 }
                    }
                    _ => unreachable!("{kind} is not a counting kind"),
                };
                st.add(r, c as u8 as f64, 1.0);
            }
        }
        Ok(())
    })
}

/// Closed-form MLE for rcm, rctr, dctr and cascade. DCM is accepted and fitted
/// by exact EM, since its likelihood has a latent stopping event.
pub fn fit_counting(kind: ModelKind, log: &ClickLog, opts: &FitOptions) -> Result<FitReport> {
    opts.validate()?;
    if kind == ModelKind::Dcm {
        return fit_em(kind, log, opts);
    }
    if !is_counting_kind(kind) {
        return Err(Error::Estimation(format!(
            "{kind} has latent factors; use EM instead of counting"
        )));
    }
    let shape = log_shape(kind, log)?;
    let vocab = log.vocab();
    let blank = BoundModel::filled(kind, shape, vocab, |_, _| 0.5);
    let stats = counting_stats(&blank, log.sessions())?;
    let (fitted, undetermined) = m_step(&blank, &stats, opts.smoothing_epsilon, &[]);
    let ll = total_ll(&fitted, log.sessions())?;
    Ok(FitReport {
        model: fitted.to_instance(vocab)?,
        ll_trajectory: vec![ll],
        iterations: 1,
        converged: true,
        normalization: "none".into(),
        undetermined: labels(kind, shape, vocab, &undetermined),
    })
}

fn labels(kind: ModelKind, shape: LayoutShape, vocab: &Vocab, refs: &[ParamRef]) -> Vec<String> {
    refs.iter().map(|&r| entry_label(kind, shape, vocab, r)).collect()
}

/// `θ = (num + ε) / (den + 2ε)`; entries with no exposure (and ε = 0) are
/// set to the unseen default and returned. Frozen slots are kept.
fn m_step(prev: &BoundModel, stats: &Stats, eps: f64, frozen: &[usize]) -> (BoundModel, Vec<ParamRef>) {
    let mut next = prev.clone();
    let mut undetermined = Vec::new();
    for r in prev.entries() {
        let (slot, index) = (r.slot as usize, r.index as usize);
        if frozen.contains(&slot) {
            continue;
        }
        let num = stats.num[slot][index];
        let den = stats.den[slot][index];
        next.slots[slot][index] = if den == 0.0 && eps == 0.0 {
            undetermined.push(r);
            prev.unseen_default()
        } else {
            // expected counts can overshoot by an ulp; keep the ratio a probability
            ((num + eps) / (den + 2.0 * eps)).min(1.0)
        };
    }
    (next, undetermined)
}

fn total_ll(m: &BoundModel, sessions: &[SessionRecord]) -> Result<f64> {
    let parts: Vec<f64> = sessions
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().map(|s| joint_log_likelihood(m, s)).sum::<Result<f64>>())
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().sum())
}

/// Total log-likelihood of `log` under `model`.
pub fn log_likelihood(model: &ModelInstance, log: &ClickLog) -> Result<f64> {
    let m = model.bind(log.vocab());
    m.check_log(log)?;
    total_ll(&m, log.sessions())
}

fn gate_stats(m: &BoundModel, sessions: &[SessionRecord]) -> Result<Stats> {
    accumulate(m, sessions, |st, chunk| {
        let mut gates = Gates::default();
        let mut probs: Vec<f64> = Vec::new();
        let mut suffix: Vec<f64> = Vec::new();
        let shape = m.shape();
        for s in chunk {
            for i in 1..=shape.m {
                let mut row = RowState::start();
                for j in 1..=shape.n {
                    m.gates(s, i, j, &row, &mut gates);
                    let c = s.clicks[shape.index(crate::clicklog::Position::new(i, j))];
                    if gates.zero {
                        if c {
                            return Err(impossible(m.kind(), s));
                        }
                        m.observe(s, i, j, &mut row, c);
                        continue;
                    }
                    probs.clear();
                    probs.extend(gates.lits.iter().map(|l| lit_prob(m, l)));
                    suffix.clear();
                    suffix.resize(probs.len() + 1, 1.0);
                    for k in (0..probs.len()).rev() {
                        suffix[k] = suffix[k + 1] * probs[k];
                    }
                    let and = suffix[0];
                    let h = gates.leak.map_or(0.0, |r| m.param(r));
                    let q = match gates.leak {
                        None => and,
                        Some(_) => h + (1.0 - h) * and,
                    };
                    let lp = bernoulli_ln(q, c);
                    if lp == f64::NEG_INFINITY {
                        return Err(impossible(m.kind(), s));
                    }
                    st.ll += lp;
                    let mut prefix = 1.0;
                    for (k, lit) in gates.lits.iter().enumerate() {
                        let rest = prefix * suffix[k + 1];
                        let mut post = |r: ParamRef, given_one: f64| {
                            let theta = m.param(r);
                            let e = if c {
                                (h * theta + (1.0 - h) * theta * given_one * rest) / q
                            } else {
                                (1.0 - h) * theta * (1.0 - given_one * rest) / (1.0 - q)
                            };
                            st.add(r, e, 1.0);
                        };
                        match *lit {
                            Lit::Pos(a) => post(a, 1.0),
                            Lit::Neg(a) => post(a, 0.0),
                            Lit::Nand(a, b) => {
                                post(a, 1.0 - m.param(b));
                                post(b, 1.0 - m.param(a));
                            }
                        }
                        prefix *= probs[k];
                    }
                    if let Some(r) = gates.leak {
                        st.add(r, if c { h / q } else { 0.0 }, 1.0);
                    }
                    m.observe(s, i, j, &mut row, c);
                }
            }
        }
        Ok(())
    })
}

#[inline]
fn lit_prob(m: &BoundModel, l: &Lit) -> f64 {
    match *l {
        Lit::Pos(a) => m.param(a),
        Lit::Neg(a) => 1.0 - m.param(a),
        Lit::Nand(a, b) => 1.0 - m.param(a) * m.param(b),
    }
}

/// EM over the last examined rank `L` of each list (DBN and DCM).
fn chain_stats(m: &BoundModel, sessions: &[SessionRecord]) -> Result<Stats> {
    let kind = m.kind();
    let shape = m.shape();
    let n = shape.n;
    let item = |r: u32| ParamRef { slot: 0, index: r };
    accumulate(m, sessions, |st, chunk| {
        let mut post = vec![0.0; n + 2];
        for s in chunk {
            for i in 1..=shape.m {
                let items = s.row_items(i);
                let clicks = s.row_clicks(i);
                let alpha = |j: usize| m.slots[0][items[j - 1].0 as usize];
                let last = (1..=n).rev().find(|&j| clicks[j - 1]).unwrap_or(0);
                match kind {
                    ModelKind::Dbn => {
                        let sigma = |j: usize| m.slots[1][items[j - 1].0 as usize];
                        let gamma = m.slots[2][0];
                        let cont = |j: usize| if clicks[j - 1] { (1.0 - sigma(j)) * gamma } else { gamma };
                        // w_l = P(clicks, L = l)
                        let lmin = last.max(1);
                        let mut path = 1.0;
                        let mut z = 0.0;
                        for l in 1..=n {
                            let a = alpha(l);
                            path *= if clicks[l - 1] { a } else { 1.0 - a };
                            let w = if l < lmin {
                                0.0
                            } else if l < n {
                                path * (1.0 - cont(l))
                            } else {
                                path
                            };
                            post[l] = w;
                            z += w;
                            if l < n {
                                path *= cont(l);
                            }
                        }
                        if !(z > 0.0) {
                            return Err(impossible(kind, s));
                        }
                        st.ll += z.ln();
                        // tail[j] = P(L ≥ j)
                        let mut at_least = vec![0.0; n + 2];
                        for l in (1..=n).rev() {
                            post[l] /= z;
                            at_least[l] = at_least[l + 1] + post[l];
                        }
                        for j in 1..=n {
                            let y = items[j - 1].0;
                            let c = clicks[j - 1];
                            st.add(item(y), c as u8 as f64, at_least[j]);
                            if j == n {
                                continue;
                            }
                            let beyond = at_least[j + 1];
                            let gamma_ref = ParamRef { slot: 2, index: 0 };
                            if c {
                                let sg = sigma(j);
                                let stop = 1.0 - cont(j);
                                let (e_s, e_g) = if post[j] > 0.0 {
                                    (post[j] * sg / stop, post[j] * sg * gamma / stop)
                                } else {
                                    (0.0, 0.0)
                                };
                                st.add(ParamRef { slot: 1, index: y }, e_s, 1.0);
                                st.add(gamma_ref, beyond + e_g, 1.0);
                            } else {
                                st.add(gamma_ref, beyond, at_least[j]);
                            }
                        }
                    }
                    ModelKind::Dcm => {
                        let lambda = |j: usize| m.slots[1][shape.index(crate::clicklog::Position::new(i, j))];
                        let lambda_ref =
                            |j: usize| ParamRef { slot: 1, index: shape.index(crate::clicklog::Position::new(i, j)) as u32 };
                        let mut path = 1.0;
                        for j in 1..=last {
                            let a = alpha(j);
                            path *= if clicks[j - 1] { a } else { 1.0 - a };
                            if clicks[j - 1] && j < last {
                                path *= lambda(j);
                            }
                        }
                        let tail: f64 = (last + 1..=n).map(|j| 1.0 - alpha(j)).product();
                        // posterior probability that ranks after the last click were examined
                        let (z, rho) = if last == 0 {
                            (tail, 1.0)
                        } else if last == n {
                            (path, 0.0)
                        } else {
                            let l = lambda(last);
                            let mix = (1.0 - l) + l * tail;
                            (path * mix, if mix > 0.0 { l * tail / mix } else { 0.0 })
                        };
                        if !(z > 0.0) {
                            return Err(impossible(kind, s));
                        }
                        st.ll += z.ln();
                        for j in 1..=n {
                            let y = items[j - 1].0;
                            if j <= last {
                                st.add(item(y), clicks[j - 1] as u8 as f64, 1.0);
                                if clicks[j - 1] && j < n {
                                    st.add(lambda_ref(j), if j < last { 1.0 } else { rho }, 1.0);
                                }
                            } else {
                                st.add(item(y), 0.0, rho);
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        Ok(())
    })
}

fn em_stats(m: &BoundModel, sessions: &[SessionRecord]) -> Result<Stats> {
    match m.kind() {
        ModelKind::Dbn | ModelKind::Dcm => chain_stats(m, sessions),
        _ => gate_stats(m, sessions),
    }
}

fn initial(kind: ModelKind, shape: LayoutShape, vocab: &Vocab, opts: &FitOptions) -> BoundModel {
    let trust = (kind == ModelKind::TrustPbm).then_some(2);
    match opts.init {
        Init::UniformHalf => BoundModel::filled(kind, shape, vocab, |slot, _| {
            if Some(slot) == trust {
                0.1
            } else {
                0.5
            }
        }),
        Init::SeededRandom => {
            let mut stream = Stream::new(opts.seed, 0);
            BoundModel::filled(kind, shape, vocab, |_, _| stream.uniform_in(0.05, 0.95))
        }
    }
}

/// Which table absorbs the item-table scale for identifiability.
fn scale_partners(kind: ModelKind) -> &'static [TableName] {
    match kind {
        ModelKind::Pbm | ModelKind::TrustPbm => &[TableName::Position],
        ModelKind::Ubm => &[TableName::Gamma],
        ModelKind::TopicsItemsV1 | ModelKind::TopicsItemsV2 => &[TableName::Rho, TableName::Beta],
        _ => &[],
    }
}

/// Scales the item table to max 1 (over determined entries) and the partner
/// tables inversely; every conditional is unchanged up to rounding.
fn normalize(m: &mut BoundModel, undetermined: &[ParamRef]) -> String {
    let partners = scale_partners(m.kind());
    if partners.is_empty() {
        return "none".into();
    }
    let determined: Vec<ParamRef> = m
        .entries()
        .into_iter()
        .filter(|r| !undetermined.contains(r))
        .collect();
    let item_slot = m.slot_of(TableName::Item);
    let gmax = determined
        .iter()
        .filter(|r| r.slot as usize == item_slot)
        .map(|&r| m.param(r))
        .fold(0.0, f64::max);
    if gmax == 0.0 || gmax == 1.0 {
        return item_scale_note(partners);
    }
    let partner_slots: Vec<usize> = partners.iter().map(|&t| m.slot_of(t)).collect();
    for r in determined {
        let (slot, index) = (r.slot as usize, r.index as usize);
        if slot == item_slot {
            m.slots[slot][index] /= gmax;
        } else if partner_slots.contains(&slot) {
            m.slots[slot][index] = (m.slots[slot][index] * gmax).min(1.0);
        }
    }
    item_scale_note(partners)
}

fn item_scale_note(partners: &[TableName]) -> String {
    let names: Vec<&str> = partners.iter().map(|t| t.as_str()).collect();
    format!(
        "item table scaled to max 1 over determined items; {} scaled inversely",
        names.join(" and ")
    )
}

/// Converts the EM parameterization of TrustPBM (f') into model space
/// (f = f'·(1−h)), nudging f down by ulps if rounding broke f·g+h ≤ 1.
fn trust_to_model(m: &mut BoundModel) {
    let (fs, gs, hs) = (0, 1, 2);
    let gmax = m.slots[gs].iter().copied().fold(m.unseen_default(), f64::max);
    for k in 0..m.slots[fs].len() {
        let h = m.slots[hs][k];
        let mut f = m.slots[fs][k] * (1.0 - h);
        while f > 0.0 && f * gmax + h > 1.0 {
            f = f.next_down();
        }
        m.slots[fs][k] = f;
    }
}

/// Inverse of [`trust_to_model`]; rescales so f' ≤ 1.
fn trust_to_em(m: &mut BoundModel) {
    let mut top: f64 = 1.0;
    for k in 0..m.slots[0].len() {
        let h = m.slots[2][k];
        let f = if h < 1.0 { m.slots[0][k] / (1.0 - h) } else { 0.5 };
        m.slots[0][k] = f;
        top = top.max(f);
    }
    if top > 1.0 {
        for f in &mut m.slots[0] {
            *f /= top;
        }
        for g in &mut m.slots[1] {
            *g = (*g * top).min(1.0);
        }
    }
}

/// EM fit from the default initialization.
pub fn fit_em(kind: ModelKind, log: &ClickLog, opts: &FitOptions) -> Result<FitReport> {
    opts.validate()?;
    let shape = log_shape(kind, log)?;
    let start = initial(kind, shape, log.vocab(), opts);
    run_em(start, &[], log, opts)
}

/// EM fit from `start`, keeping the tables in `frozen` fixed. With frozen
/// tables no identifiability rescaling is applied.
pub fn fit_em_from(
    start: &ModelInstance,
    frozen: &[TableName],
    log: &ClickLog,
    opts: &FitOptions,
) -> Result<FitReport> {
    opts.validate()?;
    let kind = start.kind();
    let shape = log_shape(kind, log)?;
    if shape != start.shape() {
        return Err(Error::Mismatch(format!(
            "model shape {} differs from log shape {shape}",
            start.shape()
        )));
    }
    let mut bound = start.bind(log.vocab());
    if kind == ModelKind::TrustPbm {
        trust_to_em(&mut bound);
    }
    let frozen: Vec<usize> = frozen.iter().map(|&t| bound.slot_of(t)).collect();
    run_em(bound, &frozen, log, opts)
}

fn run_em(start: BoundModel, frozen: &[usize], log: &ClickLog, opts: &FitOptions) -> Result<FitReport> {
    let kind = start.kind();
    let shape = start.shape();
    let vocab = log.vocab();
    let sessions = log.sessions();
    let mut theta = start;
    let mut stats = em_stats(&theta, sessions)?;
    let mut trajectory = vec![stats.ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut undetermined = Vec::new();
    while iterations < opts.max_iters {
        let (next, und) = m_step(&theta, &stats, opts.smoothing_epsilon, frozen);
        theta = next;
        undetermined = und;
        iterations += 1;
        stats = em_stats(&theta, sessions)?;
        let prev = *trajectory.last().unwrap();
        let ll = stats.ll;
        trajectory.push(ll);
        if ll < prev - 1e-9 * prev.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "EM log-likelihood decreased from {prev} to {ll} at iteration {iterations}"
            )));
        }
        if iterations >= 2 && ll - prev <= opts.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    let normalization = if frozen.is_empty() {
        normalize(&mut theta, &undetermined)
    } else {
        "none (tables held fixed)".into()
    };
    if kind == ModelKind::TrustPbm {
        trust_to_model(&mut theta);
    }
    Ok(FitReport {
        model: theta.to_instance(vocab)?,
        ll_trajectory: trajectory,
        iterations,
        converged,
        normalization,
        undetermined: labels(kind, shape, vocab, &undetermined),
    })
}

/// Result of [`brute_force_mle`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub model: ModelInstance,
    pub log_likelihood: f64,
    pub grid_step: f64,
    /// Best point on the `grid_step` lattice, before local refinement.
    pub lattice_log_likelihood: f64,
}

#[derive(Serialize)]
struct OracleFile<'a> {
    #[serde(flatten)]
    params: ParamsFile<'a>,
    log_likelihood: f64,
    grid_step: f64,
}

impl OracleReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&OracleFile {
            params: self.model.to_params_file(),
            log_likelihood: self.log_likelihood,
            grid_step: self.grid_step,
        })?)
    }
}

pub const MAX_ORACLE_DIM: usize = 6;

/// Evaluations allowed per coarse grid level.
const GRID_BUDGET: f64 = 200_000.0;

/// Maximum-likelihood parameters by search over `[0,1]^d`.
///
/// Coarse-to-fine grids narrow the box around the best point until the
/// spacing reaches `grid_step`; the final level is the `grid_step` lattice
/// itself, scanned in lexicographic order so ties keep the smallest vector.
/// A compass/pattern search with shrinking steps then refines the lattice
/// optimum off-grid.
pub fn brute_force_mle(kind: ModelKind, log: &ClickLog, grid_step: f64) -> Result<OracleReport> {
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(Error::Config("grid_step must lie in (0,1)".into()));
    }
    let shape = log_shape(kind, log)?;
    let vocab = log.vocab();
    let mut model = BoundModel::filled(kind, shape, vocab, |_, _| 0.5);
    let entries = model.entries();
    let d = entries.len();
    if d > MAX_ORACLE_DIM {
        return Err(Error::Estimation(format!(
            "parameter dimension {d} exceeds {MAX_ORACLE_DIM}"
        )));
    }
    // identical sessions collapse to one weighted pattern
    let mut patterns: BTreeMap<(Vec<u32>, Option<Vec<u32>>, Vec<bool>), (usize, f64)> = BTreeMap::new();
    for (k, s) in log.sessions().iter().enumerate() {
        let key = (
            s.items.iter().map(|y| y.0).collect(),
            s.topics.as_ref().map(|t| t.iter().map(|x| x.0).collect()),
            s.clicks.clone(),
        );
        patterns.entry(key).or_insert((k, 0.0)).1 += 1.0;
    }
    let weighted: Vec<(&SessionRecord, f64)> =
        patterns.values().map(|&(k, w)| (&log.sessions()[k], w)).collect();

    let mut objective = |x: &[f64]| -> f64 {
        for (r, &v) in entries.iter().zip(x) {
            model.slots[r.slot as usize][r.index as usize] = v;
        }
        if kind == ModelKind::TrustPbm && !trust_feasible(&model) {
            return f64::NEG_INFINITY;
        }
        let mut ll = 0.0;
        for &(s, w) in &weighted {
            match joint_log_likelihood(&model, s) {
                Ok(v) if v > f64::NEG_INFINITY => ll += w * v,
                _ => return f64::NEG_INFINITY,
            }
        }
        ll
    };

    let lattice_max = (1.0 / grid_step + 1e-9).floor() as i64;
    let mut lo = vec![0.0; d];
    let mut hi = vec![1.0; d];
    let per_dim = (GRID_BUDGET.powf(1.0 / d.max(1) as f64).floor() as usize).max(3);
    let (mut best, mut best_ll) = loop {
        let spacing = lo.iter().zip(&hi).map(|(a, b)| (b - a) / (per_dim - 1) as f64).fold(0.0, f64::max);
        let at_lattice = spacing <= grid_step * (1.0 + 1e-9);
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                if at_lattice {
                    let first = (lo[k] / grid_step - 1e-9).ceil().max(0.0) as i64;
                    let last = ((hi[k] / grid_step + 1e-9).floor() as i64).min(lattice_max);
                    (first..=last).map(|t| t as f64 * grid_step).collect()
                } else {
                    (0..per_dim)
                        .map(|t| lo[k] + (hi[k] - lo[k]) * t as f64 / (per_dim - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let (x, v) = scan(&axes, &mut objective);
        if at_lattice {
            break (x, v);
        }
        for k in 0..d {
            lo[k] = (x[k] - 2.0 * spacing).max(0.0);
            hi[k] = (x[k] + 2.0 * spacing).min(1.0);
        }
    };
    let lattice_ll = best_ll;
    if best_ll == f64::NEG_INFINITY {
        return Err(Error::Estimation(format!("no {kind} parameters give the log positive probability")));
    }
    pattern_search(&mut best, &mut best_ll, grid_step / 2.0, &mut objective);

    for (r, &v) in entries.iter().zip(&best) {
        model.slots[r.slot as usize][r.index as usize] = v;
    }
    Ok(OracleReport {
        model: model.to_instance(vocab)?,
        log_likelihood: best_ll,
        grid_step,
        lattice_log_likelihood: lattice_ll,
    })
}

fn trust_feasible(m: &BoundModel) -> bool {
    let gmax = m.slots[1].iter().copied().fold(m.unseen_default(), f64::max);
    m.slots[0].iter().zip(&m.slots[2]).all(|(f, h)| f * gmax + h <= 1.0)
}

/// Exhaustive scan of the product grid in lexicographic order; strict
/// improvement only, so ties keep the earliest point.
fn scan(axes: &[Vec<f64>], f: &mut impl FnMut(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let d = axes.len();
    let mut idx = vec![0usize; d];
    let mut x: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut best = (x.clone(), f64::NEG_INFINITY);
    loop {
        let v = f(&x);
        if v > best.1 {
            best = (x.clone(), v);
        }
        // odometer, last coordinate fastest
        let mut k = d;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                x[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            x[k] = axes[k][0];
        }
    }
}

/// Hooke–Jeeves search on the unit box, halving the step until 1e-12.
fn pattern_search(x: &mut Vec<f64>, fx: &mut f64, mut step: f64, f: &mut impl FnMut(&[f64]) -> f64) {
    let explore = |base: &[f64], fbase: f64, step: f64, f: &mut dyn FnMut(&[f64]) -> f64| {
        let mut y = base.to_vec();
        let mut fy = fbase;
        for k in 0..y.len() {
            let orig = y[k];
            for cand in [(orig + step).min(1.0), (orig - step).max(0.0)] {
                if cand == orig {
                    continue;
                }
                y[k] = cand;
                let v = f(&y);
                if v > fy {
                    fy = v;
                    break;
                }
                y[k] = orig;
            }
        }
        (y, fy)
    };
    let mut f = |v: &[f64]| f(v);
    while step >= 1e-12 {
        let (mut y, mut fy) = explore(x, *fx, step, &mut f);
        if fy > *fx {
            loop {
                let pattern: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| (2.0 * a - b).clamp(0.0, 1.0)).collect();
                *x = y.clone();
                *fx = fy;
                let fp = f(&pattern);
                let (z, fz) = explore(&pattern, fp, step, &mut f);
                if fz > *fx {
                    y = z;
                    fy = fz;
                } else {
                    break;
                }
            }
        } else {
            step *= 0.5;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicklog::{ClickLog, InterfaceKind};
    use crate::models::tests::table;

    fn single_list_log(rows: &[(&[&str], &[i64])]) -> ClickLog {
        let mut log = ClickLog::new();
        for (items, clicks) in rows {
            let items: Vec<String> = items.iter().map(|s| s.to_string()).collect();
            log.push_named::<String>(InterfaceKind::SingleList, None, &[items], &[clicks.to_vec()])
                .unwrap();
        }
        log
    }

    #[test]
    fn rcm_counting_is_the_click_rate() {
        // 40 clicks over 200 cells
        let mut rows: Vec<(&[&str], &[i64])> = Vec::new();
        for k in 0..100 {
            rows.push((&["a", "b"], if k < 40 { &[1, 0] } else { &[0, 0] }));
        }
        let log = single_list_log(&rows);
        let r = fit_counting(ModelKind::Rcm, &log, &FitOptions::default()).unwrap();
        assert_eq!(r.model.value(TableName::Zeta, "value"), Some(0.2));
    }

    #[test]
    fn dctr_counting_is_per_item() {
        let mut rows: Vec<(&[&str], &[i64])> = Vec::new();
        for k in 0..10 {
            rows.push((&["a"], if k < 3 { &[1] } else { &[0] }));
        }
        let log = single_list_log(&rows);
        let r = fit_counting(ModelKind::Dctr, &log, &FitOptions::default()).unwrap();
        assert_eq!(r.model.value(TableName::Item, "a"), Some(0.3));
    }

    #[test]
    fn cascade_counts_only_up_to_first_click() {
        let log = single_list_log(&[(&["a", "b", "c"], &[0, 1, 0]), (&["c", "a", "b"], &[1, 0, 0])]);
        let r = fit_counting(ModelKind::Cascade, &log, &FitOptions::default()).unwrap();
        assert_eq!(r.model.value(TableName::Item, "a"), Some(0.0));
        assert_eq!(r.model.value(TableName::Item, "b"), Some(1.0));
        assert_eq!(r.model.value(TableName::Item, "c"), Some(1.0));
        // an item never shown before a first click has no exposure
        let log = single_list_log(&[(&["a", "z"], &[1, 0])]);
        let r = fit_counting(ModelKind::Cascade, &log, &FitOptions::default()).unwrap();
        assert_eq!(r.undetermined, vec!["item[z]".to_string()]);
        assert_eq!(r.model.value(TableName::Item, "z"), Some(0.5));
    }

    #[test]
    fn smoothing_pulls_toward_one_half() {
        let log = single_list_log(&[(&["a"], &[1])]);
        let opts = FitOptions {
            smoothing_epsilon: 1.0,
            ..FitOptions::default()
        };
        let r = fit_counting(ModelKind::Dctr, &log, &opts).unwrap();
        assert_eq!(r.model.value(TableName::Item, "a"), Some(2.0 / 3.0));
    }

    #[test]
    fn em_on_single_gate_kinds_equals_counting() {
        let log = single_list_log(&[
            (&["a", "b", "c"], &[0, 1, 0]),
            (&["c", "a", "b"], &[1, 0, 1]),
            (&["b", "c", "a"], &[0, 0, 1]),
        ]);
        for kind in [ModelKind::Rcm, ModelKind::Rctr, ModelKind::Dctr] {
            let a = fit_counting(kind, &log, &FitOptions::default()).unwrap();
            let b = fit_em(kind, &log, &FitOptions::default()).unwrap();
            assert_eq!(a.model, b.model, "{kind}");
        }
    }

    #[test]
    fn one_iteration_is_never_converged() {
        let log = single_list_log(&[(&["a", "b"], &[0, 1]), (&["b", "a"], &[1, 1]), (&["a", "b"], &[0, 0])]);
        for kind in [ModelKind::Pbm, ModelKind::Dbn, ModelKind::Dctr] {
            let opts = FitOptions {
                max_iters: 1,
                ..FitOptions::default()
            };
            let r = fit_em(kind, &log, &opts).unwrap();
            assert!(!r.converged);
            assert_eq!(r.iterations, 1);
            assert_eq!(r.ll_trajectory.len(), 2);
            assert!(r.ll_trajectory[1] >= r.ll_trajectory[0]);
        }
    }

    #[test]
    fn chain_likelihood_matches_forward_filter() {
        let log = single_list_log(&[
            (&["a", "b", "c"], &[0, 1, 0]),
            (&["c", "a", "b"], &[1, 0, 1]),
            (&["b", "c", "a"], &[0, 0, 0]),
            (&["a", "c", "b"], &[1, 1, 1]),
        ]);
        for kind in [ModelKind::Dbn, ModelKind::Dcm] {
            let m = crate::simulation::random_instance(kind, LayoutShape { m: 1, n: 3 }, log.vocab(), 5).unwrap();
            let b = m.bind(log.vocab());
            let chain = em_stats(&b, log.sessions()).unwrap().ll;
            let direct = log_likelihood(&m, &log).unwrap();
            assert!((chain - direct).abs() < 1e-12, "{kind}: {chain} vs {direct}");
        }
    }

    #[test]
    fn gate_likelihood_matches_conditionals() {
        let shape = LayoutShape { m: 2, n: 3 };
        let cfg = crate::simulation::SimConfig::with_counts(
            shape,
            InterfaceKind::Carousel,
            12,
            4,
            200,
            1,
            crate::simulation::LayoutPolicy::UniformWithoutReplacement,
        );
        for kind in ModelKind::ALL {
            if matches!(kind, ModelKind::Dbn | ModelKind::Dcm | ModelKind::TrustPbm) {
                continue;
            }
            let m = crate::simulation::random_instance(kind, shape, &cfg.vocab(), 2).unwrap();
            let log = crate::simulation::simulate_log(&m, &cfg).unwrap();
            let b = m.bind(log.vocab());
            let gate = em_stats(&b, log.sessions()).unwrap().ll;
            let direct = log_likelihood(&m, &log).unwrap();
            assert!((gate - direct).abs() < 1e-9, "{kind}: {gate} vs {direct}");
        }
    }

    #[test]
    fn brute_force_recovers_rates() {
        let mut rows: Vec<(&[&str], &[i64])> = Vec::new();
        for k in 0..100 {
            rows.push((&["a"], if k < 37 { &[1] } else { &[0] }));
        }
        let log = single_list_log(&rows);
        let r = brute_force_mle(ModelKind::Rcm, &log, 0.01).unwrap();
        let zeta = r.model.value(TableName::Zeta, "value").unwrap();
        assert!((zeta - 0.37).abs() < 1e-6, "{zeta}");
        let log = single_list_log(&[(&["a", "b"], &[1, 0]), (&["b", "a"], &[1, 0]), (&["a", "b"], &[0, 0]), (&["b", "a"], &[1, 1])]);
        let r = brute_force_mle(ModelKind::Dctr, &log, 0.01).unwrap();
        assert!((r.model.value(TableName::Item, "a").unwrap() - 0.5).abs() < 1e-6);
        assert!((r.model.value(TableName::Item, "b").unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn brute_force_rejects_large_dimension() {
        let log = single_list_log(&[(&["a", "b", "c", "d"], &[1, 0, 0, 0]), (&["e", "f", "g", "h"], &[0, 0, 0, 0])]);
        let err = brute_force_mle(ModelKind::Dctr, &log, 0.01).unwrap_err();
        assert!(err.to_string().contains("exceeds 6"));
    }

    #[test]
    fn empty_log_has_zero_likelihood() {
        let m = ModelInstance::new(
            ModelKind::Rcm,
            LayoutShape { m: 1, n: 1 },
            [(TableName::Zeta, table(&[("value", 0.5)]))].into(),
        )
        .unwrap();
        assert_eq!(log_likelihood(&m, &ClickLog::new()).unwrap(), 0.0);
        let log = single_list_log(&[(&["a"], &[0]), (&["b"], &[1]), (&["a"], &[1])]);
        assert_eq!(log_likelihood(&m, &log).unwrap(), 3.0 * 0.5f64.ln());
    }

    #[test]
    fn pbm_normalization_keeps_products() {
        let log = single_list_log(&[
            (&["a", "b"], &[1, 0]),
            (&["b", "a"], &[0, 1]),
            (&["a", "b"], &[0, 0]),
            (&["b", "a"], &[1, 0]),
            (&["a", "b"], &[1, 1]),
        ]);
        let r = fit_em(ModelKind::Pbm, &log, &FitOptions::default()).unwrap();
        let g = r.model.table(TableName::Item).unwrap();
        assert_eq!(g.values().copied().fold(0.0, f64::max), 1.0);
        let ll = log_likelihood(&r.model, &log).unwrap();
        assert!((ll - r.final_ll()).abs() < 1e-9);
    }
}

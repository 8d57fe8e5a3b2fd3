//! Capability scaling and priority decisions for a fixed placement.
//!
//! The joint program replaces realized higher rates with free variables
//! `Λ̃(s, m)` per (service, instance), tied together per instance by the
//! averaging constraint `Σ_s Λ̃(s, m) = |S_m| / 2 · Σ_s λ(s, v)`, and minimizes
//! the capability price subject to capacity, stability and delay targets.
//! The capability-only program fixes the higher rates (from concrete
//! priorities) and optimizes capabilities alone; it is convex.
//!
//! Infeasibility is diagnosed by elastic relaxation of the capacity bounds:
//! `μ(m) ≤ C(m) + σ(m)`, `σ ≥ 0`, minimize `Σ σ`. Raising capabilities always
//! shortens sojourn times, so the relaxation is always feasible and every
//! infeasible program leaves at least one VM with positive slack.

mod barrier;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Deployment, PriorityModel, Pop, ServiceId, VmId, VnfId};
use barrier::{minimize, BarrierProgram, BarrierSettings, Constraint};

/// Slack above which a VM is reported as needing more capability.
pub const SLACK_THRESHOLD: f64 = 1e-6;
/// Tolerance used when verifying a solution before reporting it feasible.
pub const CONSTRAINT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub vm: VmId,
    pub vnf: VnfId,
    /// Per-flow requirement `l(v)`.
    pub load: f64,
    pub max_capability: f64,
    pub fixed_cost: f64,
    pub prop_cost: f64,
    /// Member services with their (strictly positive) arrival rates.
    pub members: Vec<(ServiceId, f64)>,
}

impl InstanceEntry {
    pub fn total_rate(&self) -> f64 {
        self.members.iter().map(|(_, r)| r).sum()
    }

    /// Right-hand side of the averaging constraint.
    pub fn averaging_target(&self) -> f64 {
        self.members.len() as f64 / 2.0 * self.total_rate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingProblem {
    pub instances: Vec<InstanceEntry>,
    pub delay_targets: BTreeMap<ServiceId, f64>,
}

impl ScalingProblem {
    pub fn fixed_cost(&self) -> f64 {
        self.instances.iter().map(|i| i.fixed_cost).sum()
    }

    pub fn entry(&self, vm: VmId) -> Option<&InstanceEntry> {
        self.instances.iter().find(|i| i.vm == vm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSolution {
    pub status: Status,
    pub capability: BTreeMap<VmId, f64>,
    /// Higher rate per (service, instance): decision variables in the joint
    /// program, inputs in the capability-only program. Infeasible joint
    /// solutions carry the values at the elastic optimum.
    pub higher: BTreeMap<(ServiceId, VmId), f64>,
    pub objective: f64,
    /// VMs whose capacity bound must be relaxed, with the slack needed.
    pub violated_capacity: Vec<(VmId, f64)>,
}

impl ScalingSolution {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }
}

/// Instantiates the joint program for the placement recorded in `deployment`.
pub fn build_problem(deployment: &Deployment, pop: &Pop) -> ScalingProblem {
    let mut delay_targets = BTreeMap::new();
    let instances = deployment
        .instances()
        .map(|(vm, inst)| {
            let spec = pop.vm(vm);
            let members: Vec<(ServiceId, f64)> = inst
                .members()
                .map(|s| (s, pop.rate(s, inst.vnf)))
                .filter(|&(_, r)| r > 0.0)
                .collect();
            for &(s, _) in &members {
                delay_targets.insert(s, pop.service(s).max_delay);
            }
            InstanceEntry {
                vm,
                vnf: inst.vnf,
                load: pop.vnf(inst.vnf).load,
                max_capability: spec.max_capability,
                fixed_cost: spec.fixed_cost,
                prop_cost: spec.prop_cost,
                members,
            }
        })
        .collect();
    ScalingProblem {
        instances,
        delay_targets,
    }
}

#[derive(Debug, Clone, Copy)]
enum Higher {
    Const(f64),
    Var(usize),
}

#[derive(Debug, Clone)]
struct Pair {
    service: ServiceId,
    instance: usize,
    mu: usize,
    load: f64,
    rate: f64,
    higher: Higher,
}

/// Variable layout: capabilities, then free higher rates, then (elastic only)
/// capacity slacks.
#[derive(Debug, Clone)]
struct Program {
    /// μ-variable of each instance (`None` for instances without load).
    mu_of: Vec<Option<usize>>,
    n_mu: usize,
    n_lambda: usize,
    elastic: bool,
    caps: Vec<f64>,
    /// Offered load `l·Σλ` of each instance with a μ-variable.
    offered: Vec<f64>,
    pairs: Vec<Pair>,
    delays: Vec<(f64, Vec<usize>)>,
    cost: Vec<f64>,
    eqs: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Program {
    fn new(problem: &ScalingProblem, fixed: Option<&BTreeMap<(ServiceId, VmId), f64>>, elastic: bool) -> Result<Self> {
        let mut mu_of = Vec::with_capacity(problem.instances.len());
        let mut caps = Vec::new();
        let mut offered = Vec::new();
        let mut prices = Vec::new();
        for inst in &problem.instances {
            if inst.members.is_empty() {
                mu_of.push(None);
            } else {
                mu_of.push(Some(caps.len()));
                caps.push(inst.max_capability);
                offered.push(inst.load * inst.total_rate());
                prices.push(inst.prop_cost);
            }
        }
        let n_mu = caps.len();
        let mut pairs = Vec::new();
        let mut eqs = Vec::new();
        let mut n_lambda = 0;
        for (i, inst) in problem.instances.iter().enumerate() {
            let Some(mu) = mu_of[i] else { continue };
            let target = inst.averaging_target();
            let free = fixed.is_none() && inst.members.len() > 1 && target > 0.0;
            let mut row = Vec::new();
            for &(service, rate) in &inst.members {
                let higher = match fixed {
                    Some(map) => Higher::Const(*map.get(&(service, inst.vm)).ok_or_else(|| {
                        Error::Precondition(format!("missing higher rate for {service} at {}", inst.vm))
                    })?),
                    None if free => {
                        row.push((n_mu + n_lambda, 1.0));
                        n_lambda += 1;
                        Higher::Var(n_mu + n_lambda - 1)
                    }
                    None => Higher::Const(target),
                };
                pairs.push(Pair {
                    service,
                    instance: i,
                    mu,
                    load: inst.load,
                    rate,
                    higher,
                });
            }
            if !row.is_empty() {
                eqs.push((row, target));
            }
        }
        let delays = problem
            .delay_targets
            .iter()
            .map(|(&s, &d)| (d, pairs.iter().enumerate().filter(|(_, p)| p.service == s).map(|(k, _)| k).collect()))
            .filter(|(_, ks): &(f64, Vec<usize>)| !ks.is_empty())
            .collect();
        let dim = n_mu + n_lambda + if elastic { n_mu } else { 0 };
        let mut cost = vec![0.0; dim];
        if elastic {
            for k in 0..n_mu {
                cost[n_mu + n_lambda + k] = 1.0;
            }
        } else {
            cost[..n_mu].copy_from_slice(&prices);
        }
        Ok(Program {
            mu_of,
            n_mu,
            n_lambda,
            elastic,
            caps,
            offered,
            pairs,
            delays,
            cost,
            eqs,
        })
    }

    fn higher_value(&self, pair: &Pair, x: &[f64]) -> f64 {
        match pair.higher {
            Higher::Const(v) => v,
            Higher::Var(k) => x[k],
        }
    }

    fn sigma(&self, k: usize) -> usize {
        self.n_mu + self.n_lambda + k
    }

    fn higher_map(&self, problem: &ScalingProblem, x: &[f64]) -> BTreeMap<(ServiceId, VmId), f64> {
        self.pairs
            .iter()
            .map(|p| ((p.service, problem.instances[p.instance].vm), self.higher_value(p, x).max(0.0)))
            .collect()
    }

    /// Start point: higher rates split evenly, capabilities doubled until
    /// every delay is at most half its target. Slacks cover any excess.
    fn start_point(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (row, rhs) in &self.eqs {
            for &(k, _) in row {
                x[k] = rhs / row.len() as f64;
            }
        }
        for pair in &self.pairs {
            let need = pair.load * (self.higher_value(pair, &x) + pair.rate);
            x[pair.mu] = x[pair.mu].max(2.0 * need + f64::MIN_POSITIVE);
        }
        for (k, &load) in self.offered.iter().enumerate() {
            x[k] = x[k].max(2.0 * load);
        }
        for _ in 0..400 {
            let ok = self
                .delays
                .iter()
                .all(|(d, ks)| ks.iter().map(|&k| self.sojourn(&self.pairs[k], &x).0).sum::<f64>() < 0.5 * d);
            if ok {
                break;
            }
            for v in &mut x[..self.n_mu] {
                *v *= 2.0;
            }
        }
        if self.elastic {
            for k in 0..self.n_mu {
                let s = self.sigma(k);
                x[s] = (x[k] - self.caps[k]).max(0.0) + 0.1 * self.caps[k] + 1e-9;
            }
        }
        x
    }

    /// Sojourn time and its gradient/Hessian in (μ, Λ).
    fn sojourn(&self, pair: &Pair, x: &[f64]) -> (f64, [f64; 2], [f64; 3]) {
        let l = pair.load;
        let mu = x[pair.mu];
        let higher = self.higher_value(pair, x);
        let a = mu - l * higher;
        let b = a - l * pair.rate;
        let s = l * mu / (a * b);
        let g = [1.0 / mu - 1.0 / a - 1.0 / b, l / a + l / b];
        let h = [
            -1.0 / (mu * mu) + 1.0 / (a * a) + 1.0 / (b * b),
            -l / (a * a) - l / (b * b),
            l * l / (a * a) + l * l / (b * b),
        ];
        (
            s,
            [s * g[0], s * g[1]],
            [s * (g[0] * g[0] + h[0]), s * (g[0] * g[1] + h[1]), s * (g[1] * g[1] + h[2])],
        )
    }

    /// Checks a candidate against all constraints with tolerance `tol`.
    fn violations(&self, x: &[f64], caps: &[f64], tol: f64) -> Option<String> {
        for (k, &cap) in caps.iter().enumerate() {
            if x[k] > cap + tol * cap.max(1.0) {
                return Some(format!("capability {} above bound {cap}", x[k]));
            }
            if self.offered[k] >= x[k] {
                return Some("unstable instance".into());
            }
        }
        for pair in &self.pairs {
            let h = self.higher_value(pair, x);
            if h < -tol {
                return Some(format!("negative higher rate {h}"));
            }
            if pair.load * (h.max(0.0) + pair.rate) >= x[pair.mu] {
                return Some("unstable instance".into());
            }
        }
        for (row, rhs) in &self.eqs {
            let sum: f64 = row.iter().map(|&(k, a)| a * x[k]).sum();
            if (sum - rhs).abs() > tol * rhs.abs().max(1.0) {
                return Some(format!("averaging constraint off by {}", sum - rhs));
            }
        }
        for (d, ks) in &self.delays {
            let total: f64 = ks.iter().map(|&k| self.sojourn(&self.pairs[k], x).0).sum();
            if total > d + tol * d.max(1.0) {
                return Some(format!("delay {total} above target {d}"));
            }
        }
        None
    }
}

impl BarrierProgram for Program {
    fn dim(&self) -> usize {
        self.n_mu + self.n_lambda + if self.elastic { self.n_mu } else { 0 }
    }

    fn cost(&self) -> &[f64] {
        &self.cost
    }

    fn equalities(&self) -> &[(Vec<(usize, f64)>, f64)] {
        &self.eqs
    }

    fn constraints(&self, x: &[f64]) -> Option<Vec<Constraint>> {
        let mut out = Vec::with_capacity(self.pairs.len() * 2 + self.n_mu * 3 + self.delays.len());
        for pair in &self.pairs {
            let value = pair.load * (self.higher_value(pair, x) + pair.rate) - x[pair.mu];
            if !(value < 0.0) {
                return None;
            }
            let mut grad = vec![(pair.mu, -1.0)];
            if let Higher::Var(k) = pair.higher {
                grad.push((k, pair.load));
                out.push(Constraint::linear(-x[k], vec![(k, -1.0)]));
            }
            out.push(Constraint::linear(value, grad));
        }
        for k in 0..self.n_mu {
            // Per-flow and tied priorities can keep every class below μ
            // while the instance as a whole is overloaded.
            let total = self.offered[k] - x[k];
            if !(total < 0.0) {
                return None;
            }
            out.push(Constraint::linear(total, vec![(k, -1.0)]));
            if self.elastic {
                let s = self.sigma(k);
                out.push(Constraint::linear(x[k] - self.caps[k] - x[s], vec![(k, 1.0), (s, -1.0)]));
                out.push(Constraint::linear(-x[s], vec![(s, -1.0)]));
            } else {
                out.push(Constraint::linear(x[k] - self.caps[k], vec![(k, 1.0)]));
            }
        }
        for (d, ks) in &self.delays {
            let mut c = Constraint {
                value: -d,
                ..Default::default()
            };
            for &k in ks {
                let pair = &self.pairs[k];
                let (s, g, h) = self.sojourn(pair, x);
                c.value += s;
                c.grad.push((pair.mu, g[0]));
                c.hess.push((pair.mu, pair.mu, h[0]));
                if let Higher::Var(v) = pair.higher {
                    c.grad.push((v, g[1]));
                    c.hess.push((pair.mu, v, h[1]));
                    c.hess.push((v, pair.mu, h[1]));
                    c.hess.push((v, v, h[2]));
                }
            }
            out.push(c);
        }
        Some(out)
    }
}

struct ElasticResult {
    x: Vec<f64>,
    slack: Vec<(VmId, f64)>,
}

fn run_elastic(problem: &ScalingProblem, fixed: Option<&BTreeMap<(ServiceId, VmId), f64>>) -> Result<ElasticResult> {
    let program = Program::new(problem, fixed, true)?;
    let scale = program.caps.iter().cloned().fold(1.0, f64::max);
    let settings = BarrierSettings {
        gap_tol: 1e-10 * scale,
        ..Default::default()
    };
    let out = minimize(&program, program.start_point(), &settings)?;
    log::trace!("elastic phase: {} newton steps", out.newton_steps);
    let slack = problem
        .instances
        .iter()
        .zip(&program.mu_of)
        .filter_map(|(inst, mu)| mu.map(|k| (inst.vm, out.x[program.sigma(k)])))
        .collect();
    Ok(ElasticResult { x: out.x, slack })
}

fn violated(slack: &[(VmId, f64)]) -> Vec<(VmId, f64)> {
    slack.iter().copied().filter(|&(_, s)| s > SLACK_THRESHOLD).collect()
}

fn solve_program(problem: &ScalingProblem, fixed: Option<&BTreeMap<(ServiceId, VmId), f64>>) -> Result<ScalingSolution> {
    let program = Program::new(problem, fixed, false)?;

    // Fast path: the capacity bound itself, with an even split of higher
    // rates, may already be strictly feasible.
    let mut start = program.start_point();
    for k in 0..program.n_mu {
        start[k] = program.caps[k] * (1.0 - 1e-9);
    }
    let mut caps = program.caps.clone();
    let strict = program
        .constraints(&start)
        .is_some_and(|cons| cons.iter().all(|c| c.value < 0.0));
    if !strict {
        let elastic = run_elastic(problem, fixed)?;
        let over = violated(&elastic.slack);
        if !over.is_empty() {
            return Ok(ScalingSolution {
                status: Status::Infeasible,
                capability: BTreeMap::new(),
                higher: program.higher_map(problem, &elastic.x),
                objective: f64::INFINITY,
                violated_capacity: over,
            });
        }
        start = elastic.x[..program.n_mu + program.n_lambda].to_vec();
        for (k, cap) in caps.iter_mut().enumerate() {
            if start[k] >= *cap {
                *cap = start[k] + 1e-9 * cap.max(1.0);
            }
        }
    }
    let relaxed = Program { caps: caps.clone(), ..program.clone() };
    let price_scale: f64 = 1.0 + program.cost.iter().zip(&caps).map(|(p, c)| p * c).sum::<f64>();
    let settings = BarrierSettings {
        gap_tol: 1e-10 * price_scale,
        ..Default::default()
    };
    let out = minimize(&relaxed, start, &settings)?;
    log::trace!("cost phase: {} newton steps", out.newton_steps);
    let mut x = out.x;
    for k in 0..program.n_mu {
        x[k] = x[k].min(program.caps[k]);
    }
    if let Some(why) = program.violations(&x, &program.caps, CONSTRAINT_TOL) {
        return Err(Error::Numerical(format!("solution failed verification: {why}")));
    }

    let mut capability = BTreeMap::new();
    let mut objective = problem.fixed_cost();
    for (inst, mu) in problem.instances.iter().zip(&program.mu_of) {
        let value = mu.map_or(0.0, |k| x[k]);
        objective += inst.prop_cost * value;
        capability.insert(inst.vm, value);
    }
    let higher = program.higher_map(problem, &x);
    Ok(ScalingSolution {
        status: Status::Feasible,
        capability,
        higher,
        objective,
        violated_capacity: Vec::new(),
    })
}

/// Solves the joint (capability, higher-rate) program.
pub fn solve(problem: &ScalingProblem) -> Result<ScalingSolution> {
    solve_program(problem, None)
}

/// Solves for capabilities only, with the higher rate of every
/// (service, instance) pair fixed.
pub fn solve_fixed(problem: &ScalingProblem, higher: &BTreeMap<(ServiceId, VmId), f64>) -> Result<ScalingSolution> {
    solve_program(problem, Some(higher))
}

/// VMs whose capacity bound must be relaxed for the joint program to become
/// feasible, with the slack each needs.
pub fn find_violated_capacity(problem: &ScalingProblem) -> Result<Vec<(VmId, f64)>> {
    violated_from(problem, None)
}

/// Same as [`find_violated_capacity`] for the capability-only program.
pub fn find_violated_capacity_fixed(
    problem: &ScalingProblem,
    higher: &BTreeMap<(ServiceId, VmId), f64>,
) -> Result<Vec<(VmId, f64)>> {
    violated_from(problem, Some(higher))
}

fn violated_from(problem: &ScalingProblem, fixed: Option<&BTreeMap<(ServiceId, VmId), f64>>) -> Result<Vec<(VmId, f64)>> {
    let elastic = run_elastic(problem, fixed)?;
    let program = Program::new(problem, fixed, true)?;
    if program.violations(&elastic.x, &elastic.x[program.n_mu + program.n_lambda..]
        .iter()
        .zip(&program.caps)
        .map(|(s, c)| c + s)
        .collect::<Vec<_>>(), CONSTRAINT_TOL)
        .is_some()
    {
        let vms = elastic.slack.iter().map(|(vm, _)| *vm).collect();
        return Err(Error::ElasticInfeasible(vms));
    }
    let over = violated(&elastic.slack);
    if over.is_empty() {
        return Err(Error::Precondition("scaling problem is feasible".into()));
    }
    Ok(over)
}

/// Priority parameter per instance and member service.
pub type PriorityMap = BTreeMap<VmId, BTreeMap<ServiceId, f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MappedPriorities {
    pub params: PriorityMap,
    /// Per-flow instances whose centers had to be clamped into the linear
    /// regime of the overtaking probability.
    pub clamped: Vec<VmId>,
}

/// Resolution used to snap per-VNF levels so that numerically equal higher
/// rates compare equal.
const LEVEL_GRID: f64 = 1e-9;

/// Turns the higher rates of a feasible joint solution into concrete
/// priority parameters.
///
/// Per-VNF levels are `-Λ̃`: more higher-priority traffic means lower
/// priority. Per-flow centers solve, in the least-squares sense, the linear
/// system obtained by assuming every pair of centers is within `2j`, anchored
/// at zero mean.
pub fn map_priorities(solution: &ScalingSolution, problem: &ScalingProblem, model: PriorityModel) -> Result<MappedPriorities> {
    if !solution.is_feasible() {
        return Err(Error::Precondition("cannot map priorities of an infeasible solution".into()));
    }
    map_higher_rates(&solution.higher, problem, model)
}

/// Mapping behind [`map_priorities`], usable with any higher-rate values,
/// including those of an elastic optimum.
pub fn map_higher_rates(
    higher: &BTreeMap<(ServiceId, VmId), f64>,
    problem: &ScalingProblem,
    model: PriorityModel,
) -> Result<MappedPriorities> {
    let mut params = PriorityMap::new();
    let mut clamped = Vec::new();
    for inst in &problem.instances {
        let rates: Vec<f64> = inst.members.iter().map(|&(_, r)| r).collect();
        let targets: Vec<f64> = inst
            .members
            .iter()
            .map(|&(s, _)| higher.get(&(s, inst.vm)).copied().unwrap_or(0.0))
            .collect();
        let values = match model {
            PriorityModel::PerService => {
                return Err(Error::Precondition("per-service priorities are not derived from higher rates".into()))
            }
            PriorityModel::PerVnf => targets.iter().map(|t| -(t / LEVEL_GRID).round() * LEVEL_GRID).collect(),
            PriorityModel::PerFlowUniform { jitter } => {
                let (centers, was_clamped) = per_flow_centers(&rates, &targets, jitter);
                if was_clamped {
                    clamped.push(inst.vm);
                }
                centers
            }
        };
        params.insert(inst.vm, inst.members.iter().map(|&(s, _)| s).zip(values).collect());
    }
    Ok(MappedPriorities { params, clamped })
}

/// Least-squares centers for target higher rates under uniform jitter.
/// Returns the centers and whether clamping was needed.
pub fn per_flow_centers(rates: &[f64], targets: &[f64], jitter: f64) -> (Vec<f64>, bool) {
    let n = rates.len();
    if n < 2 {
        return (vec![0.0; n], false);
    }
    let total: f64 = rates.iter().sum();
    let w = 4.0 * jitter;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        for t in 0..n {
            a[(s, t)] = if s == t { -(total - rates[s]) / w } else { rates[t] / w };
        }
        b[s] = targets[s] - 0.5 * (total - rates[s]);
    }
    // A has zero row sums, so adding 1·1ᵀ fixes the free shift at zero mean.
    let normal = a.transpose() * &a + DMatrix::from_element(n, n, 1.0);
    let rhs = a.transpose() * b;
    let Some(r) = normal.lu().solve(&rhs) else {
        return (vec![0.0; n], false);
    };
    let mut centers: Vec<f64> = r.iter().copied().collect();
    let spread = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - centers.iter().cloned().fold(f64::INFINITY, f64::min);
    let clamped = spread > 2.0 * jitter * (1.0 + 1e-12);
    if clamped {
        let mean = centers.iter().sum::<f64>() / n as f64;
        for c in &mut centers {
            *c = c.clamp(mean - jitter, mean + jitter);
        }
    }
    (centers, clamped)
}

#[cfg(test)]
mod tests;

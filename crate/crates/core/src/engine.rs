//! Service deployment loop, strategy planners, de-instantiation and merging.
//!
//! A request goes through graph construction, minimum-cost matching and a
//! strategy-specific planner that decides priorities and capabilities for
//! the whole PoP. If the planner finds no feasible configuration, one edge of
//! the graph is pruned and the matching is recomputed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::assignment::{apply_assignment, build_graph, hungarian_solve, Assignment, BipartiteGraph};
use crate::error::{Error, Result};
use crate::model::{service_total_delay, Deployment, PriorityModel, Pop, ServiceId, VmId, VnfId};
use crate::scaling::{self, build_problem, map_higher_rates, per_flow_centers, solve, solve_fixed, PriorityMap};

/// Jitter used for per-flow priorities; its value does not change which
/// configurations are reachable.
pub const FLOW_JITTER: f64 = 1.0;
/// Cap on the number of joint priority orders the brute-force planner visits.
pub const BRUTE_FORCE_CAP: u128 = 1_000_000;
/// Delay tolerance of the post-deployment check.
pub const DELAY_TOL: f64 = 1e-6;
/// Bound on hill-climbing rounds when refining priorities.
const LOCAL_SEARCH_ROUNDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// One priority level per service, ranked by delay target.
    PerService,
    /// Per-VNF levels chosen from the joint scaling program.
    #[serde(rename = "per-vnf-flexshare")]
    PerVnfFlexShare,
    /// Per-VNF levels chosen by enumerating every strict order.
    PerVnfBrute,
    /// Per-flow uniform priorities chosen from the joint scaling program.
    #[serde(rename = "per-flow-flexshare")]
    PerFlowFlexShare,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::PerService,
        Strategy::PerVnfFlexShare,
        Strategy::PerVnfBrute,
        Strategy::PerFlowFlexShare,
    ];

    pub fn model(self) -> PriorityModel {
        match self {
            Strategy::PerService => PriorityModel::PerService,
            Strategy::PerVnfFlexShare | Strategy::PerVnfBrute => PriorityModel::PerVnf,
            Strategy::PerFlowFlexShare => PriorityModel::PerFlowUniform { jitter: FLOW_JITTER },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::PerService => "per-service",
            Strategy::PerVnfFlexShare => "per-vnf-flexshare",
            Strategy::PerVnfBrute => "per-vnf-brute",
            Strategy::PerFlowFlexShare => "per-flow-flexshare",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy '{s}'")))
    }
}

/// Operator cost: fixed cost of every active VM plus the price of its
/// capability.
pub fn deployment_cost(deployment: &Deployment, pop: &Pop) -> f64 {
    deployment
        .instances()
        .map(|(vm, inst)| {
            let spec = pop.vm(vm);
            spec.fixed_cost + spec.prop_cost * inst.capability
        })
        .sum()
}

/// Realized higher rate of every (service, instance) pair.
pub fn realized_higher_rates(deployment: &Deployment, pop: &Pop) -> Result<BTreeMap<(ServiceId, VmId), f64>> {
    let mut out = BTreeMap::new();
    for (vm, inst) in deployment.instances() {
        for s in inst.members() {
            out.insert((s, vm), deployment.higher_rate(vm, s, pop)?);
        }
    }
    Ok(out)
}

/// Checks every deployed service against its delay target.
pub fn delays_met(deployment: &Deployment, pop: &Pop) -> Result<bool> {
    for s in deployment.deployed_services() {
        let d = service_total_delay(s, deployment, pop)?;
        if d > pop.service(s).max_delay + DELAY_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Result of a planner: a fully configured deployment or the VMs whose
/// capacity would have to grow.
#[derive(Debug, Clone)]
enum Plan {
    Feasible(Deployment),
    Infeasible(Vec<(VmId, f64)>),
}

fn with_priorities(deployment: &Deployment, params: &PriorityMap) -> Deployment {
    let mut next = deployment.clone();
    for (&vm, levels) in params {
        if let Some(inst) = next.instance_mut(vm) {
            for (&s, &p) in levels {
                inst.priorities.insert(s, p);
            }
        }
    }
    next
}

/// Optimizes capabilities for the priorities already recorded in
/// `deployment`.
fn capability_only(deployment: &Deployment, pop: &Pop) -> Result<Plan> {
    let problem = build_problem(deployment, pop);
    let higher = realized_higher_rates(deployment, pop)?;
    let sol = solve_fixed(&problem, &higher)?;
    if !sol.is_feasible() {
        return Ok(Plan::Infeasible(sol.violated_capacity));
    }
    let mut next = deployment.clone();
    for (vm, mu) in sol.capability {
        if let Some(inst) = next.instance_mut(vm) {
            inst.capability = mu;
        }
    }
    Ok(Plan::Feasible(next))
}

/// Capability-only optimization for the priorities recorded in
/// `deployment`; `None` if no capability assignment meets every target.
pub fn scale_capabilities(deployment: &Deployment, pop: &Pop) -> Result<Option<Deployment>> {
    Ok(match capability_only(deployment, pop)? {
        Plan::Feasible(dep) => Some(dep),
        Plan::Infeasible(_) => None,
    })
}

fn cheapest(plans: impl IntoIterator<Item = Deployment>, pop: &Pop) -> Option<Deployment> {
    let mut best: Option<(f64, Deployment)> = None;
    for dep in plans {
        let cost = deployment_cost(&dep, pop);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, dep));
        }
    }
    best.map(|(_, d)| d)
}

/// Per-service levels: lower delay target means higher priority, ties
/// broken by catalog order. Levels are global, hence identical at every VNF.
pub fn per_service_levels(pop: &Pop) -> BTreeMap<ServiceId, f64> {
    pop.service_ids()
        .sorted_by(|&a, &b| {
            pop.service(a)
                .max_delay
                .total_cmp(&pop.service(b).max_delay)
                .then(a.cmp(&b))
        })
        .enumerate()
        .map(|(rank, s)| (s, -(rank as f64)))
        .collect()
}

fn plan_per_service(deployment: &Deployment, pop: &Pop) -> Result<Plan> {
    let levels = per_service_levels(pop);
    let params: PriorityMap = deployment
        .instances()
        .map(|(vm, inst)| (vm, inst.members().map(|s| (s, levels[&s])).collect()))
        .collect();
    capability_only(&with_priorities(deployment, &params), pop)
}

/// Per-VNF order of `values` (smaller first) expressed as per-flow centers
/// spaced far enough apart that overtaking is certain; equal values share a
/// center.
fn order_as_centers(levels: &BTreeMap<ServiceId, f64>) -> BTreeMap<ServiceId, f64> {
    let mut distinct: Vec<f64> = levels.values().copied().collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    levels
        .iter()
        .map(|(&s, &l)| {
            let rank = distinct.iter().position(|&d| d == l).unwrap_or(0);
            (s, -4.0 * FLOW_JITTER * rank as f64)
        })
        .collect()
}

/// A priority configuration together with its outcome: the scaled
/// deployment when feasible, and either its cost or its delay excess at
/// full capability.
struct Scored {
    params: PriorityMap,
    plan: Option<Deployment>,
    value: f64,
}

impl Scored {
    fn beats(&self, other: &Scored) -> bool {
        match (self.plan.is_some(), other.plan.is_some()) {
            (true, false) => true,
            (false, true) => false,
            _ => self.value < other.value - 1e-12 * (1.0 + other.value.abs()),
        }
    }
}

fn score(deployment: &Deployment, params: PriorityMap, pop: &Pop) -> Result<Scored> {
    let candidate = with_priorities(deployment, &params);
    let excess = excess_at_capacity(&candidate, pop);
    if excess > 0.0 {
        return Ok(Scored { params, plan: None, value: excess });
    }
    Ok(match capability_only(&candidate, pop)? {
        Plan::Feasible(dep) => {
            let value = deployment_cost(&dep, pop);
            Scored { params, plan: Some(dep), value }
        }
        Plan::Infeasible(_) => Scored { params, plan: None, value: 0.0 },
    })
}

/// First-improvement hill climbing over `neighbours`.
fn hill_climb(
    deployment: &Deployment,
    pop: &Pop,
    mut current: Scored,
    neighbours: impl Fn(&PriorityMap) -> Vec<PriorityMap>,
) -> Result<Scored> {
    for _ in 0..LOCAL_SEARCH_ROUNDS {
        let mut improved = false;
        for params in neighbours(&current.params) {
            let next = score(deployment, params, pop)?;
            if next.beats(&current) {
                current = next;
                improved = true;
                break;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(current)
}

fn best_of(deployment: &Deployment, pop: &Pop, candidates: Vec<PriorityMap>) -> Result<Option<Scored>> {
    let mut best: Option<Scored> = None;
    for params in candidates {
        let next = score(deployment, params, pop)?;
        if best.as_ref().is_none_or(|b| next.beats(b)) {
            best = Some(next);
        }
    }
    Ok(best)
}

/// Members from highest to lowest level.
fn ranked(levels: &BTreeMap<ServiceId, f64>) -> Vec<ServiceId> {
    levels
        .iter()
        .sorted_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)))
        .map(|(&s, _)| s)
        .collect()
}

/// Strict orders one adjacent transposition away.
fn swap_neighbours(params: &PriorityMap) -> Vec<PriorityMap> {
    let mut out = Vec::new();
    for (&vm, levels) in params.iter().filter(|(_, l)| l.len() > 1) {
        let order = ranked(levels);
        for i in 0..order.len() - 1 {
            let mut swapped = order.clone();
            swapped.swap(i, i + 1);
            let mut next = params.clone();
            next.insert(vm, swapped.iter().enumerate().map(|(r, &s)| (s, -(r as f64))).collect());
            out.push(next);
        }
    }
    out
}

/// Centers moved one step in either direction, largest steps first.
fn shift_neighbours(params: &PriorityMap, jitter: f64) -> Vec<PriorityMap> {
    let mut out = Vec::new();
    for step in [2.0, 1.0, 0.5, 0.25, 0.125].map(|f| f * jitter) {
        for (&vm, centers) in params.iter().filter(|(_, c)| c.len() > 1) {
            for &s in centers.keys() {
                for dir in [-1.0, 1.0] {
                    let mut next = params.clone();
                    *next.get_mut(&vm).and_then(|c| c.get_mut(&s)).expect("member") += dir * step;
                    out.push(next);
                }
            }
        }
    }
    out
}

fn plan_flexshare(deployment: &Deployment, pop: &Pop, model: PriorityModel) -> Result<Plan> {
    let problem = build_problem(deployment, pop);
    let sol = solve(&problem)?;
    let mapped = map_higher_rates(&sol.higher, &problem, PriorityModel::PerVnf)?.params;
    let service_levels = per_service_levels(pop);
    let by_target: PriorityMap = mapped
        .iter()
        .map(|(&vm, l)| (vm, l.keys().map(|s| (*s, service_levels[s])).collect()))
        .collect();

    let start = best_of(deployment, pop, vec![mapped, by_target])?.expect("two candidates");
    let mut best = hill_climb(deployment, pop, start, swap_neighbours)?;

    if let PriorityModel::PerFlowUniform { jitter } = model {
        let mut centers = PriorityMap::new();
        for inst in &problem.instances {
            let rates: Vec<f64> = inst.members.iter().map(|&(_, r)| r).collect();
            let targets: Vec<f64> = inst
                .members
                .iter()
                .map(|&(s, _)| sol.higher.get(&(s, inst.vm)).copied().unwrap_or(0.0))
                .collect();
            let (r, _) = per_flow_centers(&rates, &targets, jitter);
            centers.insert(inst.vm, inst.members.iter().map(|&(s, _)| s).zip(r).collect());
        }
        let spaced: PriorityMap = best.params.iter().map(|(&vm, l)| (vm, order_as_centers(l))).collect();
        let start = best_of(deployment, pop, vec![spaced, centers])?.expect("two candidates");
        best = hill_climb(deployment, pop, start, |p| shift_neighbours(p, jitter))?;
    }

    if let Some(dep) = best.plan {
        return Ok(Plan::Feasible(dep));
    }
    if !sol.is_feasible() {
        return Ok(Plan::Infeasible(sol.violated_capacity));
    }
    let candidate = with_priorities(deployment, &best.params);
    let problem = build_problem(&candidate, pop);
    let higher = realized_higher_rates(&candidate, pop)?;
    Ok(Plan::Infeasible(scaling::find_violated_capacity_fixed(&problem, &higher)?))
}

/// Delay excess summed over services with every capability at its bound; a
/// cheap proxy for how far a priority configuration is from feasible.
pub(crate) fn excess_at_capacity(deployment: &Deployment, pop: &Pop) -> f64 {
    let mut full = deployment.clone();
    for vm in pop.vm_ids() {
        if let Some(inst) = full.instance_mut(vm) {
            inst.capability = pop.vm(vm).max_capability;
        }
    }
    full.deployed_services()
        .into_iter()
        .map(|s| match service_total_delay(s, &full, pop) {
            Ok(d) => (d - pop.service(s).max_delay).max(0.0),
            Err(_) => f64::INFINITY,
        })
        .sum()
}

fn plan_brute(deployment: &Deployment, pop: &Pop) -> Result<Plan> {
    let shared: Vec<(VmId, Vec<ServiceId>)> = deployment
        .instances()
        .map(|(vm, inst)| (vm, inst.members().collect::<Vec<_>>()))
        .filter(|(_, m)| m.len() > 1)
        .collect();
    let count = shared.iter().try_fold(1u128, |acc, (_, m)| {
        let f: u128 = (1..=m.len() as u128).product();
        acc.checked_mul(f).filter(|&c| c <= BRUTE_FORCE_CAP)
    });
    let Some(_) = count else {
        let count = shared
            .iter()
            .map(|(_, m)| (1..=m.len() as u128).product::<u128>())
            .fold(1u128, |a, b| a.saturating_mul(b));
        return Err(Error::EnumerationOverflow {
            count,
            cap: BRUTE_FORCE_CAP,
        });
    };

    let mut base = deployment.clone();
    for (vm, inst) in deployment.instances() {
        if inst.members().count() == 1 {
            let s = inst.members().next().expect("one member");
            base.instance_mut(vm).expect("active").priorities.insert(s, 0.0);
        }
    }

    let orders = shared
        .iter()
        .map(|(_, m)| m.iter().copied().permutations(m.len()).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    let combos: Box<dyn Iterator<Item = Vec<Vec<ServiceId>>>> = if orders.is_empty() {
        Box::new(std::iter::once(Vec::new()))
    } else {
        Box::new(orders.into_iter().multi_cartesian_product())
    };

    let mut best: Option<(f64, Deployment)> = None;
    let mut closest: Option<(f64, Deployment)> = None;
    for combo in combos {
        let mut candidate = base.clone();
        for ((vm, _), order) in shared.iter().zip(&combo) {
            let inst = candidate.instance_mut(*vm).expect("active");
            for (rank, &s) in order.iter().enumerate() {
                inst.priorities.insert(s, -(rank as f64));
            }
        }
        // Sojourn times fall as capability grows, so a configuration is
        // feasible exactly when it is feasible at full capability.
        let excess = excess_at_capacity(&candidate, pop);
        if excess > 0.0 {
            if closest.as_ref().is_none_or(|(e, _)| excess < *e) {
                closest = Some((excess, candidate));
            }
            continue;
        }
        match capability_only(&candidate, pop) {
            Ok(Plan::Feasible(dep)) => {
                let cost = deployment_cost(&dep, pop);
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, dep));
                }
            }
            Ok(Plan::Infeasible(_)) => {}
            Err(e) => warn!("skipping priority order after solver failure: {e}"),
        }
    }
    if let Some((_, dep)) = best {
        return Ok(Plan::Feasible(dep));
    }
    let Some((_, candidate)) = closest else {
        return Ok(Plan::Infeasible(Vec::new()));
    };
    let problem = build_problem(&candidate, pop);
    let higher = realized_higher_rates(&candidate, pop)?;
    Ok(Plan::Infeasible(scaling::find_violated_capacity_fixed(&problem, &higher)?))
}

fn plan(strategy: Strategy, deployment: &Deployment, pop: &Pop) -> Result<Plan> {
    match strategy {
        Strategy::PerService => plan_per_service(deployment, pop),
        Strategy::PerVnfBrute => plan_brute(deployment, pop),
        Strategy::PerVnfFlexShare | Strategy::PerFlowFlexShare => plan_flexshare(deployment, pop, strategy.model()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeployStatus {
    Deployed,
    Rejected,
}

#[derive(Debug, Clone)]
pub struct DeployOutcome {
    pub status: DeployStatus,
    /// State after the request; equal to the input when rejected.
    pub deployment: Deployment,
    /// Triples added for the new service.
    pub added: Vec<(ServiceId, VnfId, VmId)>,
    /// VMs switched on for the new service.
    pub activated: Vec<VmId>,
    pub cost_delta: f64,
    /// Pruning rounds used.
    pub iterations: usize,
    pub reason: Option<String>,
}

impl DeployOutcome {
    fn rejected(deployment: &Deployment, iterations: usize, reason: String) -> Self {
        DeployOutcome {
            status: DeployStatus::Rejected,
            deployment: deployment.clone(),
            added: Vec::new(),
            activated: Vec::new(),
            cost_delta: 0.0,
            iterations,
            reason: Some(reason),
        }
    }

    pub fn is_deployed(&self) -> bool {
        self.status == DeployStatus::Deployed
    }
}

/// Gap between a VM's maximum capability and the offered load of its
/// instance.
fn capacity_gap(vm: VmId, deployment: &Deployment, pop: &Pop) -> f64 {
    let load = deployment.instance(vm).map_or(0.0, |i| i.offered_load(pop));
    pop.vm(vm).max_capability - load
}

/// Removes one edge after an infeasible planning round. Among violated VMs
/// used by the incoming service, the one closest to instability loses its
/// edge. If none of them is used by the service, the matched edge closest to
/// instability is removed so that the next matching differs.
pub fn prune_edge(
    mut graph: BipartiteGraph,
    violated: &[(VmId, f64)],
    assignment: &Assignment,
    deployment: &Deployment,
    pop: &Pop,
) -> Result<BipartiteGraph> {
    let matched: Vec<(VnfId, VmId)> = assignment.iter().map(|(&v, &m)| (v, m)).collect();
    let pick = |edges: Vec<(VnfId, VmId)>| {
        edges
            .into_iter()
            .map(|(v, m)| (capacity_gap(m, deployment, pop), v, m))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)))
            .map(|(_, v, m)| (v, m))
    };
    let used: Vec<(VnfId, VmId)> = matched
        .iter()
        .copied()
        .filter(|(_, m)| violated.iter().any(|(vm, _)| vm == m))
        .collect();
    let (v, m) = pick(used)
        .or_else(|| pick(matched.clone()))
        .ok_or_else(|| Error::Precondition("no edge left to prune".into()))?;
    debug!("pruning edge ({v}, {m})");
    graph.remove_edge(v, m);
    Ok(graph)
}

/// Deploys `service` on top of `deployment` with the given strategy.
pub fn deploy_service(service: ServiceId, deployment: &Deployment, pop: &Pop, strategy: Strategy) -> Result<DeployOutcome> {
    if deployment.is_deployed(service) {
        return Err(Error::Precondition(format!("{service} is already deployed")));
    }
    let mut graph = match build_graph(service, deployment, pop) {
        Ok(g) => g,
        Err(e @ Error::NoCandidate(_)) => return Ok(DeployOutcome::rejected(deployment, 0, e.to_string())),
        Err(e) => return Err(e),
    };
    let budget = graph.edge_count();
    let before = deployment_cost(deployment, pop);
    let mut rounds = 0;
    loop {
        let assignment = match hungarian_solve(&graph) {
            Ok(a) => a,
            Err(Error::NoMatching) => {
                return Ok(DeployOutcome::rejected(deployment, rounds, "graph exhausted".into()));
            }
            Err(e) => return Err(e),
        };
        let candidate = apply_assignment(&assignment, service, deployment)?;
        match plan(strategy, &candidate, pop)? {
            Plan::Feasible(next) => {
                if !delays_met(&next, pop)? {
                    return Err(Error::Numerical("planned deployment misses a delay target".into()));
                }
                let activated = assignment
                    .values()
                    .copied()
                    .filter(|&m| !deployment.is_active(m))
                    .collect();
                let added = assignment.iter().map(|(&v, &m)| (service, v, m)).collect();
                let cost_delta = deployment_cost(&next, pop) - before;
                return Ok(DeployOutcome {
                    status: DeployStatus::Deployed,
                    deployment: next,
                    added,
                    activated,
                    cost_delta,
                    iterations: rounds,
                    reason: None,
                });
            }
            Plan::Infeasible(violated) => {
                rounds += 1;
                if rounds > budget {
                    return Ok(DeployOutcome::rejected(deployment, rounds, "pruning budget exhausted".into()));
                }
                graph = prune_edge(graph, &violated, &assignment, &candidate, pop)?;
            }
        }
    }
}

/// Removes every triple of `service`, switches off VMs left without
/// services and re-optimizes capabilities with the remaining priorities.
pub fn deinstantiate_service(service: ServiceId, deployment: &Deployment, pop: &Pop) -> Result<Deployment> {
    if !deployment.is_deployed(service) {
        return Err(Error::Precondition(format!("{service} is not deployed")));
    }
    let mut next = deployment.clone();
    let vms: Vec<VmId> = next.instances().map(|(vm, _)| vm).collect();
    for vm in vms {
        let inst = next.instance_mut(vm).expect("listed");
        inst.priorities.remove(&service);
        if inst.priorities.is_empty() {
            next.deactivate(vm);
        }
    }
    match capability_only(&next, pop)? {
        Plan::Feasible(dep) => Ok(dep),
        Plan::Infeasible(v) => Err(Error::Numerical(format!(
            "removing {service} made the remaining services infeasible at {v:?}"
        ))),
    }
}

/// Moves all services of `from` onto `to`, the moved services ranking below
/// the ones already there (per-service levels are global and kept).
fn carry_over(deployment: &Deployment, to: VmId, from: VmId) -> Deployment {
    let mut next = deployment.clone();
    let moved = next.deactivate(from).expect("active");
    let model = next.model;
    let target = next.instance_mut(to).expect("active");
    let floor = target.priorities.values().copied().fold(f64::INFINITY, f64::min);
    let step = match model {
        PriorityModel::PerFlowUniform { jitter } => 4.0 * jitter,
        _ => 1.0,
    };
    let mut moved: Vec<(ServiceId, f64)> = moved.priorities.into_iter().collect();
    moved.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (rank, (s, p)) in moved.into_iter().enumerate() {
        let level = match model {
            PriorityModel::PerService => p,
            _ => floor - step * (rank as f64 + 1.0),
        };
        target.priorities.insert(s, level);
    }
    next
}

/// Best configuration after merging `from` into `to`, if one meets every
/// delay target.
fn merged(deployment: &Deployment, to: VmId, from: VmId, pop: &Pop, strategy: Strategy) -> Result<Option<Deployment>> {
    let (Some(a), Some(b)) = (deployment.instance(to), deployment.instance(from)) else {
        return Ok(None);
    };
    if a.vnf != b.vnf || a.members().any(|s| b.has(s)) {
        return Ok(None);
    }
    let load = a.offered_load(pop) + b.offered_load(pop);
    if load >= pop.vm(to).max_capability {
        return Ok(None);
    }
    let carried = carry_over(deployment, to, from);
    let mut options = Vec::new();
    if let Plan::Feasible(dep) = capability_only(&carried, pop)? {
        options.push(dep);
    }
    match plan(strategy, &carried, pop) {
        Ok(Plan::Feasible(dep)) => options.push(dep),
        Ok(Plan::Infeasible(_)) => {}
        Err(e @ Error::EnumerationOverflow { .. }) => debug!("merge replan skipped: {e}"),
        Err(e) => return Err(e),
    }
    Ok(cheapest(options, pop))
}

/// First cost-reducing merge in scan order: ordered pairs of same-VNF VMs by
/// ascending combined load, then by VM indices.
pub fn find_merge(deployment: &Deployment, pop: &Pop, strategy: Strategy) -> Result<Option<(VmId, VmId, Deployment)>> {
    let cost = deployment_cost(deployment, pop);
    let active: Vec<(VmId, VnfId, f64)> = deployment
        .instances()
        .map(|(vm, inst)| (vm, inst.vnf, inst.offered_load(pop)))
        .collect();
    let pairs = active
        .iter()
        .flat_map(|a| active.iter().map(move |b| (a, b)))
        .filter(|(a, b)| a.0 != b.0 && a.1 == b.1)
        .map(|(a, b)| (a.2 + b.2, a.0, b.0))
        .sorted_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for (_, to, from) in pairs {
        if let Some(dep) = merged(deployment, to, from, pop, strategy)? {
            if deployment_cost(&dep, pop) < cost - 1e-9 * cost.abs().max(1.0) {
                return Ok(Some((to, from, dep)));
            }
        }
    }
    Ok(None)
}

/// Applies cost-reducing merges until none is left.
pub fn merge_pass(deployment: &Deployment, pop: &Pop, strategy: Strategy) -> Result<Deployment> {
    let mut current = deployment.clone();
    while let Some((to, from, next)) = find_merge(&current, pop, strategy)? {
        debug!("merged {from} into {to}");
        current = next;
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub service: ServiceId,
    pub status: DeployStatus,
    pub iterations: usize,
    pub cost_delta: f64,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub deployment: Deployment,
    pub requests: Vec<RequestRecord>,
}

impl RunReport {
    pub fn all_deployed(&self) -> bool {
        self.requests.iter().all(|r| r.status == DeployStatus::Deployed)
    }

    pub fn rejected(&self) -> Vec<ServiceId> {
        self.requests
            .iter()
            .filter(|r| r.status == DeployStatus::Rejected)
            .map(|r| r.service)
            .collect()
    }
}

/// Deploys the services in `order` one request each, merging before every
/// request and once at the end.
pub fn run_strategy(pop: &Pop, order: &[ServiceId], strategy: Strategy) -> Result<RunReport> {
    let mut deployment = Deployment::new(strategy.model());
    let mut requests = Vec::with_capacity(order.len());
    for &service in order {
        deployment = merge_pass(&deployment, pop, strategy)?;
        let outcome = deploy_service(service, &deployment, pop, strategy)?;
        debug!(
            "{strategy}: {service} {:?} after {} pruning rounds",
            outcome.status, outcome.iterations
        );
        requests.push(RequestRecord {
            service,
            status: outcome.status,
            iterations: outcome.iterations,
            cost_delta: outcome.cost_delta,
            reason: outcome.reason.clone(),
        });
        deployment = outcome.deployment;
    }
    deployment = merge_pass(&deployment, pop, strategy)?;
    Ok(RunReport {
        strategy,
        deployment,
        requests,
    })
}

#[cfg(test)]
mod tests;

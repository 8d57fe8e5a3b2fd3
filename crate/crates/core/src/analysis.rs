//! Deployment metrics, competitive-ratio diagnostics and an exhaustive oracle
//! for small instances.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::engine::{deployment_cost, excess_at_capacity, realized_higher_rates, scale_capabilities};
use crate::error::{Error, Result};
use crate::model::{sojourn_time, Deployment, PriorityModel, Pop, ServiceId, VmId, VnfId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_cost: f64,
    /// Average number of services per active instance.
    pub services_per_instance: f64,
    pub used_capability: f64,
    /// Sum of maximum capabilities over active VMs.
    pub max_active_capability: f64,
    pub active_vms: usize,
    pub instances_per_vnf: BTreeMap<VnfId, usize>,
}

pub fn metrics(deployment: &Deployment, pop: &Pop) -> Metrics {
    let mut members = 0usize;
    let mut used = 0.0;
    let mut max_active = 0.0;
    let mut instances_per_vnf = BTreeMap::new();
    for (vm, inst) in deployment.instances() {
        members += inst.members().count();
        used += inst.capability;
        max_active += pop.vm(vm).max_capability;
        *instances_per_vnf.entry(inst.vnf).or_insert(0) += 1;
    }
    let active_vms = deployment.active_count();
    Metrics {
        total_cost: deployment_cost(deployment, pop),
        services_per_instance: if active_vms == 0 { 0.0 } else { members as f64 / active_vms as f64 },
        used_capability: used,
        max_active_capability: max_active,
        active_vms,
        instances_per_vnf,
    }
}

/// Capability headroom `√(C_v / d)` above the load that keeps the sojourn
/// time of any flow at or below `d`, whatever its priority.
pub fn load_gap(c_v: f64, d: f64) -> Result<f64> {
    if !(c_v > 0.0 && d > 0.0) {
        return Err(Error::invalid("load gap", format!("needs positive capacity and delay, got {c_v} and {d}")));
    }
    Ok((c_v / d).sqrt())
}

/// Upper bound on the ratio between the instance count of a VNF and the
/// optimal one: `2 + 2θ / (C_v − θ)`.
pub fn competitive_bound(c_v: f64, theta: f64) -> Result<f64> {
    if !(theta >= 0.0 && theta < c_v) {
        return Err(Error::invalid("competitive bound", format!("gap {theta} must lie in [0, {c_v})")));
    }
    Ok(2.0 + 2.0 * theta / (c_v - theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfDiagnostic {
    pub vnf: VnfId,
    /// Number of instances `N_v`.
    pub instances: usize,
    /// Smallest sojourn time of any service at any instance of the VNF.
    pub min_sojourn: f64,
    /// Capacity in flows per time unit, `C / l(v)`.
    pub capacity: f64,
    pub theta: f64,
    /// Average per-instance load in flows per time unit.
    pub average_load: f64,
    /// `(C_v − θ_v) / 2`.
    pub load_bound: f64,
    /// `None` when `θ_v ≥ C_v`.
    pub ratio: Option<f64>,
}

impl VnfDiagnostic {
    /// Average-load bound for VNFs with at least two instances.
    pub fn load_bound_holds(&self, tol: f64) -> bool {
        self.instances < 2 || self.average_load >= self.load_bound - tol
    }

    /// Instance-count bound against an optimal count. Single-instance VNFs
    /// are optimal by construction.
    pub fn ratio_holds(&self, optimal_instances: usize) -> bool {
        if self.instances <= 1 {
            return true;
        }
        self.ratio
            .is_some_and(|r| self.instances as f64 <= r * optimal_instances as f64 + 1e-9)
    }
}

/// Per-VNF competitive diagnostics. Needs every VM hosting a given VNF to
/// share one maximum capability.
pub fn vnf_diagnostics(deployment: &Deployment, pop: &Pop) -> Result<Vec<VnfDiagnostic>> {
    let higher = realized_higher_rates(deployment, pop)?;
    let mut by_vnf: BTreeMap<VnfId, Vec<VmId>> = BTreeMap::new();
    for (vm, inst) in deployment.instances() {
        by_vnf.entry(inst.vnf).or_default().push(vm);
    }
    let mut out = Vec::new();
    for (vnf, vms) in by_vnf {
        let l = pop.vnf(vnf).load;
        let caps: BTreeSet<u64> = vms.iter().map(|&m| pop.vm(m).max_capability.to_bits()).collect();
        if caps.len() != 1 {
            return Err(Error::Precondition(format!("{vnf} runs on VMs of different capacity")));
        }
        let capacity = pop.vm(vms[0]).max_capability / l;
        let mut min_sojourn = f64::INFINITY;
        let mut flows = 0.0;
        for &vm in &vms {
            let inst = deployment.instance(vm).expect("listed");
            for s in inst.members() {
                let rate = pop.rate(s, vnf);
                flows += rate;
                let d = sojourn_time(l, inst.capability, higher[&(s, vm)], rate)?;
                min_sojourn = min_sojourn.min(d);
            }
        }
        let theta = load_gap(capacity, min_sojourn)?;
        out.push(VnfDiagnostic {
            vnf,
            instances: vms.len(),
            min_sojourn,
            capacity,
            theta,
            average_load: flows / vms.len() as f64,
            load_bound: (capacity - theta) / 2.0,
            ratio: competitive_bound(capacity, theta).ok(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCaps {
    pub services: usize,
    pub vms: usize,
    pub vnfs: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        OracleCaps {
            services: 3,
            vms: 4,
            vnfs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub deployment: Deployment,
    pub cost: f64,
}

impl OracleResult {
    pub fn instances_of(&self, vnf: VnfId) -> usize {
        self.deployment.instances().filter(|(_, i)| i.vnf == vnf).count()
    }
}

/// All partitions of `items` into nonempty groups.
fn set_partitions<T: Copy>(items: &[T]) -> Vec<Vec<Vec<T>>> {
    let Some((&first, rest)) = items.split_first() else {
        return vec![Vec::new()];
    };
    let mut out = Vec::new();
    for partition in set_partitions(rest) {
        for i in 0..partition.len() {
            let mut p = partition.clone();
            p[i].insert(0, first);
            out.push(p);
        }
        let mut p = partition;
        p.insert(0, vec![first]);
        out.push(p);
    }
    out
}

/// Orders with ties: every map from `n` items onto levels `0..k` that uses
/// each of those levels.
fn weak_orders(n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| 0..n)
        .multi_cartesian_product()
        .filter(|ranks| {
            let used: BTreeSet<usize> = ranks.iter().copied().collect();
            used.len() == used.last().map_or(0, |&m| m + 1)
        })
        .collect()
}

/// Exhausts every placement of the PoP's services (each VNF's users split
/// into groups, each group on its own VM) and every per-instance priority
/// order with ties, scales capabilities for each, and returns the cheapest
/// configuration meeting all delay targets. `None` if nothing is feasible.
pub fn oracle_enumerate(pop: &Pop, caps: OracleCaps) -> Result<Option<OracleResult>> {
    let users: BTreeMap<VnfId, Vec<ServiceId>> = pop
        .service_ids()
        .flat_map(|s| pop.service(s).required_vnfs().map(move |v| (v, s)))
        .into_group_map()
        .into_iter()
        .collect();
    if pop.services.len() > caps.services || pop.vms.len() > caps.vms || users.len() > caps.vnfs {
        return Err(Error::OracleCap(format!(
            "{} services, {} VMs, {} VNFs exceed caps {:?}",
            pop.services.len(),
            pop.vms.len(),
            users.len(),
            caps
        )));
    }

    let partitions: Vec<Vec<(VnfId, Vec<Vec<ServiceId>>)>> = users
        .iter()
        .map(|(&v, ss)| set_partitions(ss).into_iter().map(|p| (v, p)).collect())
        .collect();
    let vm_ids: Vec<VmId> = pop.vm_ids().collect();
    let mut best: Option<OracleResult> = None;

    for choice in partitions.into_iter().multi_cartesian_product() {
        let groups: Vec<(VnfId, Vec<ServiceId>)> = choice
            .into_iter()
            .flat_map(|(v, p)| p.into_iter().map(move |g| (v, g)))
            .collect();
        if groups.len() > vm_ids.len() {
            continue;
        }
        for placement in vm_ids.iter().copied().permutations(groups.len()) {
            let mut bound = 0.0;
            let mut stable = true;
            for ((v, g), &m) in groups.iter().zip(&placement) {
                let load: f64 = pop.vnf(*v).load * g.iter().map(|&s| pop.rate(s, *v)).sum::<f64>();
                let spec = pop.vm(m);
                stable &= load < spec.max_capability;
                bound += spec.fixed_cost + spec.prop_cost * load;
            }
            if !stable || best.as_ref().is_some_and(|b| bound >= b.cost) {
                continue;
            }
            let orders: Vec<Vec<Vec<usize>>> = groups.iter().map(|(_, g)| weak_orders(g.len())).collect();
            for ranks in orders.into_iter().multi_cartesian_product() {
                let mut dep = Deployment::new(PriorityModel::PerVnf);
                for (((v, g), &m), r) in groups.iter().zip(&placement).zip(&ranks) {
                    dep.activate(m, *v)?;
                    for (&s, &rank) in g.iter().zip(r) {
                        dep.assign(s, m, -(rank as f64))?;
                    }
                }
                if excess_at_capacity(&dep, pop) > 0.0 {
                    continue;
                }
                if let Some(scaled) = scale_capabilities(&dep, pop)? {
                    let cost = deployment_cost(&scaled, pop);
                    if best.as_ref().is_none_or(|b| cost < b.cost) {
                        best = Some(OracleResult { deployment: scaled, cost });
                    }
                }
            }
        }
    }
    Ok(best)
}

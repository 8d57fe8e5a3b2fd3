//! Placement of an incoming service's VNFs: the bipartite graph of admissible
//! VNF→VM options and its minimum-cost matching.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{instance_stable, Deployment, Pop, ServiceId, VmId, VnfId};

/// Proportional-cost epsilon added to every edge so that zero-load edges still
/// carry a strictly positive capability price.
pub const EDGE_EPSILON: f64 = 1e-6;

/// VNF → VM decision for one service.
pub type Assignment = BTreeMap<VnfId, VmId>;

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub service: ServiceId,
    /// Left vertices, ascending.
    pub vnfs: Vec<VnfId>,
    edges: BTreeMap<(VnfId, VmId), f64>,
    pruned: BTreeSet<(VnfId, VmId)>,
}

impl BipartiteGraph {
    pub fn edges(&self) -> impl Iterator<Item = (VnfId, VmId, f64)> + '_ {
        self.edges.iter().map(|(&(v, m), &c)| (v, m, c))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn cost(&self, vnf: VnfId, vm: VmId) -> Option<f64> {
        self.edges.get(&(vnf, vm)).copied()
    }

    pub fn candidates(&self, vnf: VnfId) -> impl Iterator<Item = VmId> + '_ {
        self.edges.keys().filter(move |(v, _)| *v == vnf).map(|&(_, m)| m)
    }

    /// Right vertices: every VM that appears on some edge, ascending.
    pub fn vms(&self) -> Vec<VmId> {
        let set: BTreeSet<VmId> = self.edges.keys().map(|&(_, m)| m).collect();
        set.into_iter().collect()
    }

    pub fn is_pruned(&self, vnf: VnfId, vm: VmId) -> bool {
        self.pruned.contains(&(vnf, vm))
    }

    /// Removes an edge for the rest of this deployment attempt.
    pub fn remove_edge(&mut self, vnf: VnfId, vm: VmId) -> bool {
        if self.edges.remove(&(vnf, vm)).is_some() {
            self.pruned.insert((vnf, vm));
            true
        } else {
            false
        }
    }
}

/// Cost of serving `vnf` for `service` at `vm`: the fixed activation cost if
/// the VM is idle plus the proportional price of the extra load.
pub fn edge_cost(vnf: VnfId, vm: VmId, service: ServiceId, deployment: &Deployment, pop: &Pop) -> f64 {
    let spec = pop.vm(vm);
    let active = if deployment.is_active(vm) { 1.0 } else { 0.0 };
    (1.0 - active) * spec.fixed_cost
        + spec.prop_cost * (pop.vnf(vnf).load * pop.rate(service, vnf) + EDGE_EPSILON)
}

/// Builds the admissible-edge graph for `service`. An edge `(v, m)` exists if
/// `m` is idle, or if `m` already runs `v` and stays stable with `service`
/// added. VMs running other VNFs are never candidates.
pub fn build_graph(service: ServiceId, deployment: &Deployment, pop: &Pop) -> Result<BipartiteGraph> {
    let spec = pop.service(service);
    let vnfs: Vec<VnfId> = spec.required_vnfs().collect();
    let mut edges = BTreeMap::new();
    for &vnf in &vnfs {
        let load = pop.vnf(vnf).load;
        let mut any = false;
        for vm in pop.vm_ids() {
            let admissible = match deployment.instance(vm) {
                None => true,
                Some(inst) if inst.vnf == vnf && !inst.has(service) => {
                    let rates = inst
                        .members()
                        .map(|s| pop.rate(s, vnf))
                        .chain(std::iter::once(spec.rate(vnf)));
                    instance_stable(load, rates, pop.vm(vm).max_capability)
                }
                Some(_) => false,
            };
            if admissible {
                edges.insert((vnf, vm), edge_cost(vnf, vm, service, deployment, pop));
                any = true;
            }
        }
        if !any {
            return Err(Error::NoCandidate(vnf));
        }
    }
    Ok(BipartiteGraph {
        service,
        vnfs,
        edges,
        pruned: BTreeSet::new(),
    })
}

/// Minimum-cost assignment of every VNF of the graph to a distinct VM.
pub fn hungarian_solve(graph: &BipartiteGraph) -> Result<Assignment> {
    let vms = graph.vms();
    let costs: Vec<Vec<Option<f64>>> = graph
        .vnfs
        .iter()
        .map(|&v| vms.iter().map(|&m| graph.cost(v, m)).collect())
        .collect();
    let (cols, _) = min_cost_matching(&costs)?;
    Ok(graph
        .vnfs
        .iter()
        .zip(cols)
        .map(|(&v, c)| (v, vms[c]))
        .collect())
}

/// Records the matching in a copy of `deployment`: activates idle VMs with
/// the matched VNF and adds `service` to each matched instance. Capabilities
/// are left untouched.
pub fn apply_assignment(assignment: &Assignment, service: ServiceId, deployment: &Deployment) -> Result<Deployment> {
    let mut next = deployment.clone();
    for (&vnf, &vm) in assignment {
        next.activate(vm, vnf)?;
        next.assign(service, vm, 0.0)?;
    }
    Ok(next)
}

/// Rectangular assignment (rows ≤ columns) with forbidden cells. Returns the
/// column chosen for each row and the total cost. Among optimal matchings the
/// one that is lexicographically smallest row by row is returned.
pub fn min_cost_matching(costs: &[Vec<Option<f64>>]) -> Result<(Vec<usize>, f64)> {
    let rows = costs.len();
    if rows == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let cols = costs[0].len();
    if rows > cols || !has_perfect_matching(costs) {
        return Err(Error::NoMatching);
    }
    let (_, best) = solve_dense(costs);
    let tol = 1e-9 * (1.0 + best.abs());

    let mut forced: Vec<Vec<Option<f64>>> = costs.to_vec();
    for r in 0..rows {
        let mut fixed = false;
        for c in 0..cols {
            if forced[r][c].is_none() {
                continue;
            }
            let mut trial = forced.clone();
            for (cc, cell) in trial[r].iter_mut().enumerate() {
                if cc != c {
                    *cell = None;
                }
            }
            for (rr, row) in trial.iter_mut().enumerate() {
                if rr != r {
                    row[c] = None;
                }
            }
            if !has_perfect_matching(&trial) {
                continue;
            }
            let (_, value) = solve_dense(&trial);
            if value <= best + tol {
                forced = trial;
                fixed = true;
                break;
            }
        }
        debug_assert!(fixed, "row {r} lost every optimal column");
    }
    let (assign, total) = solve_dense(&forced);
    Ok((assign, total))
}

/// Kuhn's augmenting-path check that every row can be matched.
fn has_perfect_matching(costs: &[Vec<Option<f64>>]) -> bool {
    fn augment(r: usize, costs: &[Vec<Option<f64>>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for c in 0..costs[r].len() {
            if costs[r][c].is_some() && !seen[c] {
                seen[c] = true;
                if owner[c].is_none_or(|o| augment(o, costs, seen, owner)) {
                    owner[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    let cols = costs.first().map_or(0, Vec::len);
    let mut owner = vec![None; cols];
    (0..costs.len()).all(|r| augment(r, costs, &mut vec![false; cols], &mut owner))
}

/// O(n²m) shortest-augmenting-path Hungarian algorithm with potentials.
/// Forbidden cells are priced above any feasible matching; callers guarantee
/// a perfect matching over allowed cells exists.
fn solve_dense(costs: &[Vec<Option<f64>>]) -> (Vec<usize>, f64) {
    let n = costs.len();
    let m = costs[0].len();
    let finite: f64 = costs.iter().flatten().flatten().map(|c| c.abs()).sum();
    let forbidden = 2.0 * finite + 1.0;
    let cell = |i: usize, j: usize| costs[i][j].unwrap_or(forbidden);

    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cell(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cell(i, j)).sum();
    (assign, total)
}

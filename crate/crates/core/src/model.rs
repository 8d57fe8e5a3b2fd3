//! Domain types and closed-form queueing mathematics.
//!
//! Every VNF instance is an M/M/1 queue with priorities. A flow of service `s`
//! at an instance with capability `mu` waits behind the flows of other services
//! that are served first; their aggregate arrival rate is the *higher rate*
//! `Λ(s, v)`, whose value depends on the priority model in force.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "#{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Index of a VNF in the PoP catalog.
    VnfId,
    "vnf"
);
id_type!(
    /// Index of a VM in the PoP inventory. Lower indices win cost ties.
    VmId,
    "vm"
);
id_type!(
    /// Index of a requested service.
    ServiceId,
    "svc"
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfSpec {
    pub name: String,
    /// Capability units needed per flow per time unit.
    pub load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    /// Arrival rate at each VNF; VNFs not listed have rate zero.
    pub rates: BTreeMap<VnfId, f64>,
    pub max_delay: f64,
}

impl ServiceSpec {
    pub fn rate(&self, vnf: VnfId) -> f64 {
        self.rates.get(&vnf).copied().unwrap_or(0.0)
    }

    /// VNFs this service actually traverses (strictly positive rate).
    pub fn required_vnfs(&self) -> impl Iterator<Item = VnfId> + '_ {
        self.rates
            .iter()
            .filter(|(_, &rate)| rate > 0.0)
            .map(|(&vnf, _)| vnf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmSpec {
    pub name: String,
    pub max_capability: f64,
    pub fixed_cost: f64,
    pub prop_cost: f64,
}

/// How flows of services sharing an instance are prioritized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PriorityModel {
    /// One deterministic level per service, identical at every VNF.
    PerService,
    /// One deterministic level per (service, instance).
    PerVnf,
    /// Per-flow priorities drawn uniformly from `[center - jitter, center + jitter]`.
    PerFlowUniform { jitter: f64 },
}

impl PriorityModel {
    pub fn validate(&self) -> Result<()> {
        if let PriorityModel::PerFlowUniform { jitter } = *self {
            if !(jitter.is_finite() && jitter > 0.0) {
                return Err(Error::invalid("jitter", format!("{jitter} is not finite and positive")));
            }
        }
        Ok(())
    }

    /// Per-flow parameters are distribution centers; the others are levels.
    pub fn jitter(&self) -> Option<f64> {
        match *self {
            PriorityModel::PerFlowUniform { jitter } => Some(jitter),
            _ => None,
        }
    }
}

/// The static description of a point of presence: VNF catalog, VM inventory
/// and the services that may be requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pop {
    pub vnfs: Vec<VnfSpec>,
    pub vms: Vec<VmSpec>,
    pub services: Vec<ServiceSpec>,
}

impl Pop {
    pub fn new(vnfs: Vec<VnfSpec>, vms: Vec<VmSpec>, services: Vec<ServiceSpec>) -> Result<Self> {
        let pop = Pop { vnfs, vms, services };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        for vnf in &self.vnfs {
            if !(vnf.load.is_finite() && vnf.load > 0.0) {
                return Err(Error::invalid(format!("vnf `{}`", vnf.name), "load must be positive"));
            }
        }
        for vm in &self.vms {
            if !(vm.max_capability.is_finite() && vm.max_capability > 0.0) {
                return Err(Error::invalid(
                    format!("vm `{}`", vm.name),
                    "max_capability must be positive",
                ));
            }
            if !(vm.fixed_cost >= 0.0 && vm.prop_cost >= 0.0) {
                return Err(Error::invalid(format!("vm `{}`", vm.name), "costs must be nonnegative"));
            }
        }
        for svc in &self.services {
            let what = || format!("service `{}`", svc.name);
            if !(svc.max_delay.is_finite() && svc.max_delay > 0.0) {
                return Err(Error::invalid(what(), "max_delay must be positive"));
            }
            if let Some((vnf, _)) = svc.rates.iter().find(|(v, _)| v.0 >= self.vnfs.len()) {
                return Err(Error::invalid(what(), format!("unknown VNF {vnf}")));
            }
            if svc.rates.values().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(Error::invalid(what(), "rates must be finite and nonnegative"));
            }
            if svc.required_vnfs().next().is_none() {
                return Err(Error::invalid(what(), "at least one rate must be positive"));
            }
        }
        Ok(())
    }

    pub fn vnf(&self, id: VnfId) -> &VnfSpec {
        &self.vnfs[id.0]
    }

    pub fn vm(&self, id: VmId) -> &VmSpec {
        &self.vms[id.0]
    }

    pub fn service(&self, id: ServiceId) -> &ServiceSpec {
        &self.services[id.0]
    }

    pub fn rate(&self, service: ServiceId, vnf: VnfId) -> f64 {
        self.service(service).rate(vnf)
    }

    pub fn vm_ids(&self) -> impl Iterator<Item = VmId> {
        (0..self.vms.len()).map(VmId)
    }

    pub fn service_ids(&self) -> impl Iterator<Item = ServiceId> {
        (0..self.services.len()).map(ServiceId)
    }

    /// Copy with every arrival rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Pop {
        let mut pop = self.clone();
        for svc in &mut pop.services {
            for rate in svc.rates.values_mut() {
                *rate *= factor;
            }
        }
        pop
    }
}

/// A running VNF instance: the VM's hosted VNF, its current capability and
/// the priority parameter of every service it serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub vnf: VnfId,
    pub capability: f64,
    /// Level (per-service/per-VNF) or center (per-flow) for each member service.
    pub priorities: BTreeMap<ServiceId, f64>,
}

impl Instance {
    pub fn new(vnf: VnfId) -> Self {
        Instance {
            vnf,
            capability: 0.0,
            priorities: BTreeMap::new(),
        }
    }

    pub fn members(&self) -> impl Iterator<Item = ServiceId> + '_ {
        self.priorities.keys().copied()
    }

    pub fn has(&self, service: ServiceId) -> bool {
        self.priorities.contains_key(&service)
    }

    /// Offered load `l(v) * sum of member rates`.
    pub fn offered_load(&self, pop: &Pop) -> f64 {
        pop.vnf(self.vnf).load * self.members().map(|s| pop.rate(s, self.vnf)).sum::<f64>()
    }

    /// `(service, rate, priority parameter)` triples as consumed by the
    /// higher-rate functions.
    pub fn population(&self, pop: &Pop) -> Vec<(ServiceId, f64, f64)> {
        self.priorities
            .iter()
            .map(|(&s, &p)| (s, pop.rate(s, self.vnf), p))
            .collect()
    }
}

/// Full PoP state: the x-triples (instance membership), y (hosted VNF per
/// VM), capabilities and priority parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub model: PriorityModel,
    instances: BTreeMap<VmId, Instance>,
}

impl Deployment {
    pub fn new(model: PriorityModel) -> Self {
        Deployment {
            model,
            instances: BTreeMap::new(),
        }
    }

    pub fn instances(&self) -> impl Iterator<Item = (VmId, &Instance)> {
        self.instances.iter().map(|(&vm, inst)| (vm, inst))
    }

    pub fn instance(&self, vm: VmId) -> Option<&Instance> {
        self.instances.get(&vm)
    }

    pub fn instance_mut(&mut self, vm: VmId) -> Option<&mut Instance> {
        self.instances.get_mut(&vm)
    }

    pub fn is_active(&self, vm: VmId) -> bool {
        self.instances.contains_key(&vm)
    }

    pub fn hosted_vnf(&self, vm: VmId) -> Option<VnfId> {
        self.instances.get(&vm).map(|i| i.vnf)
    }

    pub fn active_count(&self) -> usize {
        self.instances.len()
    }

    /// The VM whose instance of `vnf` serves `service`, if any.
    pub fn instance_of(&self, service: ServiceId, vnf: VnfId) -> Option<VmId> {
        self.instances
            .iter()
            .find(|(_, inst)| inst.vnf == vnf && inst.has(service))
            .map(|(&vm, _)| vm)
    }

    pub fn is_deployed(&self, service: ServiceId) -> bool {
        self.instances.values().any(|inst| inst.has(service))
    }

    pub fn deployed_services(&self) -> Vec<ServiceId> {
        let mut all: Vec<ServiceId> = self.instances.values().flat_map(|i| i.members()).collect();
        all.sort();
        all.dedup();
        all
    }

    /// Every `(service, vnf, vm)` triple with `x = 1`.
    pub fn triples(&self) -> Vec<(ServiceId, VnfId, VmId)> {
        let mut out: Vec<_> = self
            .instances
            .iter()
            .flat_map(|(&vm, inst)| inst.members().map(move |s| (s, inst.vnf, vm)))
            .collect();
        out.sort();
        out
    }

    /// Sets `y(vnf, vm) = 1`. Fails if the VM already hosts a different VNF.
    pub fn activate(&mut self, vm: VmId, vnf: VnfId) -> Result<()> {
        match self.instances.get(&vm) {
            Some(inst) if inst.vnf != vnf => Err(Error::Precondition(format!(
                "{vm} already runs {} and cannot host {vnf}",
                inst.vnf
            ))),
            Some(_) => Ok(()),
            None => {
                self.instances.insert(vm, Instance::new(vnf));
                Ok(())
            }
        }
    }

    pub fn deactivate(&mut self, vm: VmId) -> Option<Instance> {
        self.instances.remove(&vm)
    }

    /// Sets `x(service, v, vm) = 1` where `v` is the VNF hosted at `vm`.
    pub fn assign(&mut self, service: ServiceId, vm: VmId, priority: f64) -> Result<()> {
        let inst = self
            .instances
            .get_mut(&vm)
            .ok_or_else(|| Error::Precondition(format!("{vm} is not active")))?;
        inst.priorities.insert(service, priority);
        Ok(())
    }

    /// Realized higher rate `Λ(service, v)` at the instance on `vm`.
    pub fn higher_rate(&self, vm: VmId, service: ServiceId, pop: &Pop) -> Result<f64> {
        let inst = self
            .instances
            .get(&vm)
            .ok_or_else(|| Error::Precondition(format!("{vm} is not active")))?;
        let population = inst.population(pop);
        match self.model.jitter() {
            None => lambda_per_vnf(service, &population),
            Some(jitter) => lambda_per_flow(service, &population, jitter),
        }
    }

    /// Checks the structural invariants: one VNF per VM, membership only on
    /// active VMs (both by construction), capability within bounds and
    /// stability of every active instance.
    pub fn validate(&self, pop: &Pop) -> Result<()> {
        for (&vm, inst) in &self.instances {
            let spec = pop.vm(vm);
            if inst.capability > spec.max_capability * (1.0 + 1e-12) {
                return Err(Error::invalid(
                    format!("deployment at {vm}"),
                    format!("capability {} exceeds maximum {}", inst.capability, spec.max_capability),
                ));
            }
            let load = inst.offered_load(pop);
            if load > 0.0 && load >= inst.capability {
                return Err(Error::invalid(
                    format!("deployment at {vm}"),
                    format!("offered load {load} is not below capability {}", inst.capability),
                ));
            }
            for s in inst.members() {
                if pop.rate(s, inst.vnf) <= 0.0 {
                    return Err(Error::invalid(
                        format!("deployment at {vm}"),
                        format!("{s} does not use {}", inst.vnf),
                    ));
                }
            }
        }
        for s in self.deployed_services() {
            for vnf in pop.service(s).required_vnfs() {
                let count = self
                    .instances
                    .values()
                    .filter(|i| i.vnf == vnf && i.has(s))
                    .count();
                if count != 1 {
                    return Err(Error::invalid(
                        format!("deployment of {s}"),
                        format!("uses {count} instances of {vnf}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Mean sojourn time of a flow at an instance with per-flow requirement
/// `load`, capability `capability`, higher-priority rate `higher` and own
/// arrival rate `own`:
///
/// `S = (l/mu) / ((1 - l*Λ/mu) * (1 - l*(Λ+λ)/mu))`
pub fn sojourn_time(load: f64, capability: f64, higher: f64, own: f64) -> Result<f64> {
    let offered = load * (higher + own);
    if !(capability > 0.0) || offered >= capability {
        return Err(Error::Unstable {
            load: offered,
            capability,
        });
    }
    let service = load / capability;
    Ok(service / ((1.0 - load * higher / capability) * (1.0 - offered / capability)))
}

/// Heaviside step with `H(0) = 1/2`.
fn heaviside(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z == 0.0 {
        0.5
    } else {
        0.0
    }
}

/// Higher rate under deterministic priority levels. Competitors with a higher
/// level count fully, equal levels count half, the target itself is excluded.
pub fn lambda_per_vnf(target: ServiceId, population: &[(ServiceId, f64, f64)]) -> Result<f64> {
    let &(_, _, own_level) = population
        .iter()
        .find(|(s, _, _)| *s == target)
        .ok_or(Error::NotInPopulation(target))?;
    Ok(population
        .iter()
        .filter(|(s, _, _)| *s != target)
        .map(|&(_, rate, level)| heaviside(level - own_level) * rate)
        .sum())
}

/// Probability that a flow with priority uniform around `center_other`
/// overtakes one uniform around `center_self`, both with half-width `jitter`.
pub fn q_overtake(center_self: f64, center_other: f64, jitter: f64) -> f64 {
    let diff = center_other - center_self;
    if diff > 2.0 * jitter {
        1.0
    } else if diff < -2.0 * jitter {
        0.0
    } else {
        (0.5 + diff / (4.0 * jitter)).clamp(0.0, 1.0)
    }
}

/// Higher rate under uniform per-flow priorities; the target is excluded.
pub fn lambda_per_flow(
    target: ServiceId,
    population: &[(ServiceId, f64, f64)],
    jitter: f64,
) -> Result<f64> {
    let &(_, _, own_center) = population
        .iter()
        .find(|(s, _, _)| *s == target)
        .ok_or(Error::NotInPopulation(target))?;
    Ok(population
        .iter()
        .filter(|(s, _, _)| *s != target)
        .map(|&(_, rate, center)| q_overtake(own_center, center, jitter) * rate)
        .sum())
}

/// Whether an instance of a VNF with per-flow requirement `load` on a VM of
/// maximum capability `max_capability` is stable with the given member rates.
pub fn instance_stable(load: f64, rates: impl IntoIterator<Item = f64>, max_capability: f64) -> bool {
    load * rates.into_iter().sum::<f64>() < max_capability
}

/// End-to-end delay of `service`: the sum of its sojourn times at every
/// instance it is assigned to, with realized higher rates.
pub fn service_total_delay(service: ServiceId, deployment: &Deployment, pop: &Pop) -> Result<f64> {
    let mut total = 0.0;
    for (vm, inst) in deployment.instances() {
        if !inst.has(service) {
            continue;
        }
        let own = pop.rate(service, inst.vnf);
        if own <= 0.0 {
            continue;
        }
        let higher = deployment.higher_rate(vm, service, pop)?;
        total += sojourn_time(pop.vnf(inst.vnf).load, inst.capability, higher, own)?;
    }
    Ok(total)
}

//! Scenario files: VNF catalog, services, VM inventory (listed or generated
//! from a seed) and run options, in TOML.
//!
//! ```toml
//! name = "tiny"
//! traffic_multiplier = 1.0
//!
//! [[vnfs]]
//! id = "v1"
//! load = 1.0
//!
//! [[services]]
//! id = "s1"
//! max_delay = 10.0
//! rates = { v1 = 2.0 }
//!
//! [vm_generator]
//! count = 4
//! capability_range = [5.0, 10.0]
//! seed = 7
//! fixed_cost = 8.0
//! prop_cost = 0.5
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::model::{PriorityModel, Pop, ServiceId, ServiceSpec, VmSpec, VnfId, VnfSpec};

const SYNTHETIC: &str = include_str!("../fixtures/synthetic.toml");
const REALISTIC: &str = include_str!("../fixtures/realistic.toml");
const SURVEILLANCE: &str = include_str!("../fixtures/surveillance.toml");
const LIFECYCLE: &str = include_str!("../fixtures/lifecycle.toml");

/// Names of the scenarios shipped with the crate.
pub const BUNDLED: [&str; 4] = ["synthetic", "realistic", "surveillance", "lifecycle"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct VnfEntry {
    id: String,
    load: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServiceEntry {
    id: String,
    max_delay: f64,
    rates: BTreeMap<Spanned<String>, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct VmEntry {
    id: String,
    max_capability: f64,
    fixed_cost: f64,
    prop_cost: f64,
}

/// Random VM inventory: capabilities drawn uniformly from a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmGenerator {
    pub count: usize,
    pub capability_range: [f64; 2],
    pub seed: u64,
    pub fixed_cost: f64,
    pub prop_cost: f64,
}

impl VmGenerator {
    /// VMs named `m1..mN`, capabilities rounded to 1e-6.
    pub fn generate(&self, seed: u64) -> Vec<VmSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [lo, hi] = self.capability_range;
        (0..self.count)
            .map(|i| {
                let c: f64 = rng.random_range(lo..=hi);
                VmSpec {
                    name: format!("m{}", i + 1),
                    max_capability: (c * 1e6).round() / 1e6,
                    fixed_cost: self.fixed_cost,
                    prop_cost: self.prop_cost,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    vnfs: Vec<VnfEntry>,
    services: Spanned<Vec<ServiceEntry>>,
    #[serde(default)]
    vms: Vec<VmEntry>,
    vm_generator: Option<Spanned<VmGenerator>>,
    traffic_multiplier: Option<Spanned<f64>>,
    priority_model: Option<PriorityModel>,
    request_order: Option<Spanned<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VmSource {
    Listed(Vec<VmSpec>),
    Generated(VmGenerator),
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub vnfs: Vec<VnfSpec>,
    pub services: Vec<ServiceSpec>,
    pub vms: VmSource,
    pub traffic_multiplier: f64,
    /// Optional default model; strategies choose their own.
    pub priority_model: Option<PriorityModel>,
    pub request_order: Vec<ServiceId>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Scenario {
    /// Parses and validates scenario text. Errors name the offending field
    /// and its line.
    pub fn parse(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        let at = |what: &str, offset: usize, reason: String| {
            Error::Scenario(format!("{what} (line {}): {reason}", line_of(text, offset)))
        };

        let mut vnf_index = BTreeMap::new();
        let mut vnfs = Vec::new();
        for (i, v) in file.vnfs.iter().enumerate() {
            if vnf_index.insert(v.id.clone(), VnfId(i)).is_some() {
                return Err(Error::Scenario(format!("vnfs: duplicate id '{}'", v.id)));
            }
            vnfs.push(VnfSpec {
                name: v.id.clone(),
                load: v.load,
            });
        }

        let services_span = file.services.span();
        if file.services.get_ref().is_empty() {
            return Err(at("services", services_span.start, "at least one service is required".into()));
        }
        let mut service_index = BTreeMap::new();
        let mut services = Vec::new();
        for (i, s) in file.services.get_ref().iter().enumerate() {
            if service_index.insert(s.id.clone(), ServiceId(i)).is_some() {
                return Err(at("services", services_span.start, format!("duplicate id '{}'", s.id)));
            }
            let mut rates = BTreeMap::new();
            for (key, &rate) in &s.rates {
                let vnf = vnf_index.get(key.get_ref()).ok_or_else(|| {
                    at(
                        &format!("services.{}.rates", s.id),
                        key.span().start,
                        format!("unknown VNF '{}'", key.get_ref()),
                    )
                })?;
                rates.insert(*vnf, rate);
            }
            services.push(ServiceSpec {
                name: s.id.clone(),
                rates,
                max_delay: s.max_delay,
            });
        }

        let vms = match (&file.vm_generator, file.vms.is_empty()) {
            (Some(g), true) => {
                let [lo, hi] = g.get_ref().capability_range;
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(at(
                        "vm_generator.capability_range",
                        g.span().start,
                        format!("[{lo}, {hi}] must be positive and ordered"),
                    ));
                }
                VmSource::Generated(g.get_ref().clone())
            }
            (None, false) => VmSource::Listed(
                file.vms
                    .iter()
                    .map(|m| VmSpec {
                        name: m.id.clone(),
                        max_capability: m.max_capability,
                        fixed_cost: m.fixed_cost,
                        prop_cost: m.prop_cost,
                    })
                    .collect(),
            ),
            (Some(g), false) => {
                return Err(at("vm_generator", g.span().start, "give either vms or vm_generator, not both".into()))
            }
            (None, true) => return Err(Error::Scenario("vms: either vms or vm_generator is required".into())),
        };

        let traffic_multiplier = match &file.traffic_multiplier {
            Some(n) if !(*n.get_ref() > 0.0 && n.get_ref().is_finite()) => {
                return Err(at("traffic_multiplier", n.span().start, format!("{} must be positive", n.get_ref())))
            }
            Some(n) => *n.get_ref(),
            None => 1.0,
        };
        if let Some(model) = &file.priority_model {
            model.validate()?;
        }

        let request_order = match &file.request_order {
            None => (0..services.len()).map(ServiceId).collect(),
            Some(order) => {
                let mut seen = BTreeSet::new();
                let mut ids = Vec::new();
                for name in order.get_ref() {
                    let id = service_index.get(name).ok_or_else(|| {
                        at("request_order", order.span().start, format!("unknown service '{name}'"))
                    })?;
                    if !seen.insert(*id) {
                        return Err(at("request_order", order.span().start, format!("'{name}' requested twice")));
                    }
                    ids.push(*id);
                }
                ids
            }
        };

        let scenario = Scenario {
            name: file.name.unwrap_or_else(|| "scenario".into()),
            vnfs,
            services,
            vms,
            traffic_multiplier,
            priority_model: file.priority_model,
            request_order,
        };
        scenario.pop(None)?;
        Ok(scenario)
    }

    /// Seed of the VM generator, if any.
    pub fn seed(&self) -> Option<u64> {
        match &self.vms {
            VmSource::Generated(g) => Some(g.seed),
            VmSource::Listed(_) => None,
        }
    }

    /// VM inventory; `seed` overrides the generator seed and is ignored for
    /// listed VMs.
    pub fn vm_specs(&self, seed: Option<u64>) -> Vec<VmSpec> {
        match &self.vms {
            VmSource::Listed(v) => v.clone(),
            VmSource::Generated(g) => g.generate(seed.unwrap_or(g.seed)),
        }
    }

    /// The PoP at the scenario's own traffic multiplier.
    pub fn pop(&self, seed: Option<u64>) -> Result<Pop> {
        Pop::new(self.vnfs.clone(), self.vm_specs(seed), self.services.clone()).map(|p| p.scaled(self.traffic_multiplier))
    }

    /// The PoP with every rate multiplied by `n` (on top of nothing else:
    /// the file's own multiplier is replaced).
    pub fn pop_at(&self, n: f64, seed: Option<u64>) -> Result<Pop> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("traffic multiplier", format!("{n} must be positive")));
        }
        Pop::new(self.vnfs.clone(), self.vm_specs(seed), self.services.clone()).map(|p| p.scaled(n))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    Scenario::parse(&text).map_err(|e| match e {
        Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Text of a bundled scenario.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    match name {
        "synthetic" => Some(SYNTHETIC),
        "realistic" => Some(REALISTIC),
        "surveillance" => Some(SURVEILLANCE),
        "lifecycle" => Some(LIFECYCLE),
        _ => None,
    }
}

pub fn bundled(name: &str) -> Result<Scenario> {
    let text = bundled_text(name)
        .ok_or_else(|| Error::Scenario(format!("no bundled scenario '{name}' (have {})", BUNDLED.join(", "))))?;
    Scenario::parse(text)
}

//! Single runs and parameter sweeps over a scenario.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, OracleCaps};
use crate::engine::{self, DeployStatus, Strategy};
use crate::error::{Error, Result};
use crate::model::Pop;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub service: String,
    pub rate: f64,
    pub priority: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub vm: String,
    pub vnf: String,
    pub capability: f64,
    pub max_capability: f64,
    pub members: Vec<MemberRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub service: String,
    pub status: DeployStatus,
    pub iterations: usize,
    pub cost_delta: f64,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total_cost: f64,
    pub services_per_instance: f64,
    pub used_capability: f64,
    pub max_active_capability: f64,
    pub active_vms: usize,
    pub instances_per_vnf: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub cost: f64,
    pub cost_ratio: f64,
    pub instances_per_vnf: BTreeMap<String, usize>,
}

/// Everything one run produces. Contains no timing, so equal inputs give
/// byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub strategy: Strategy,
    pub multiplier: f64,
    pub seed: Option<u64>,
    pub all_deployed: bool,
    pub summary: Summary,
    pub requests: Vec<RequestOutcome>,
    pub instances: Vec<InstanceRecord>,
    pub oracle: Option<OracleComparison>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn summarize(report: &engine::RunReport, pop: &Pop) -> Summary {
    let m = analysis::metrics(&report.deployment, pop);
    Summary {
        total_cost: m.total_cost,
        services_per_instance: m.services_per_instance,
        used_capability: m.used_capability,
        max_active_capability: m.max_active_capability,
        active_vms: m.active_vms,
        instances_per_vnf: m.instances_per_vnf.iter().map(|(v, &c)| (pop.vnf(*v).name.clone(), c)).collect(),
    }
}

/// Runs `strategy` on the scenario with rates multiplied by `n`.
pub fn run(scenario: &Scenario, strategy: Strategy, n: f64, seed: Option<u64>) -> Result<RunRecord> {
    let pop = scenario.pop_at(n, seed)?;
    let report = engine::run_strategy(&pop, &scenario.request_order, strategy)?;
    let dep = &report.deployment;
    let instances = dep
        .instances()
        .map(|(vm, inst)| InstanceRecord {
            vm: pop.vm(vm).name.clone(),
            vnf: pop.vnf(inst.vnf).name.clone(),
            capability: inst.capability,
            max_capability: pop.vm(vm).max_capability,
            members: inst
                .priorities
                .iter()
                .map(|(&s, &p)| MemberRecord {
                    service: pop.service(s).name.clone(),
                    rate: pop.rate(s, inst.vnf),
                    priority: p,
                })
                .collect(),
        })
        .collect();
    let requests = report
        .requests
        .iter()
        .map(|r| RequestOutcome {
            service: pop.service(r.service).name.clone(),
            status: r.status,
            iterations: r.iterations,
            cost_delta: r.cost_delta,
            reason: r.reason.clone(),
        })
        .collect();
    Ok(RunRecord {
        scenario: scenario.name.clone(),
        strategy,
        multiplier: n,
        seed: seed.or(scenario.seed()),
        all_deployed: report.all_deployed(),
        summary: summarize(&report, &pop),
        requests,
        instances,
        oracle: None,
    })
}

/// Like [`run`], plus the exhaustive optimum for comparison. Fails when the
/// scenario exceeds `caps`.
pub fn run_with_oracle(scenario: &Scenario, strategy: Strategy, n: f64, seed: Option<u64>, caps: OracleCaps) -> Result<RunRecord> {
    let mut record = run(scenario, strategy, n, seed)?;
    let pop = scenario.pop_at(n, seed)?;
    if let Some(best) = analysis::oracle_enumerate(&pop, caps)? {
        let per_vnf = analysis::metrics(&best.deployment, &pop).instances_per_vnf;
        record.oracle = Some(OracleComparison {
            cost: best.cost,
            cost_ratio: if best.cost > 0.0 { record.summary.total_cost / best.cost } else { 1.0 },
            instances_per_vnf: per_vnf.iter().map(|(v, &c)| (pop.vnf(*v).name.clone(), c)).collect(),
        });
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub multiplier: f64,
    pub seed: Option<u64>,
    pub record: RunRecord,
    pub wall_ms: f64,
}

/// Cross product of strategies, multipliers and seeds, in that nesting order.
/// An empty seed list means the scenario's own seed.
pub fn sweep(scenario: &Scenario, strategies: &[Strategy], multipliers: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if strategies.is_empty() || multipliers.is_empty() {
        return Err(Error::invalid("sweep", "strategy and multiplier lists must be nonempty"));
    }
    let seeds: Vec<Option<u64>> = if seeds.is_empty() { vec![None] } else { seeds.iter().copied().map(Some).collect() };
    let mut cells = Vec::new();
    for &strategy in strategies {
        for &n in multipliers {
            for &seed in &seeds {
                cells.push((strategy, n, seed));
            }
        }
    }
    let cell = |(strategy, n, seed): (Strategy, f64, Option<u64>)| -> Result<SweepRow> {
        let start = Instant::now();
        let record = run(scenario, strategy, n, seed)?;
        Ok(SweepRow {
            strategy,
            multiplier: n,
            seed: record.seed,
            record,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len());
    let next = AtomicUsize::new(0);
    let mut results: Vec<(usize, Result<SweepRow>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&c) = cells.get(i) else { break done };
                        done.push((i, cell(c)));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Writes sweep rows as CSV. Wall-clock is only written when `timing` is
/// set, so the default output is reproducible.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "strategy",
        "n",
        "seed",
        "all_deployed",
        "rejected",
        "cost",
        "services_per_instance",
        "used_capability",
        "max_active_capability",
        "active_vms",
        "instances_per_vnf",
    ];
    if timing {
        header.push("wall_ms");
    }
    w.write_record(&header)?;
    for row in rows {
        let r = &row.record;
        let s = &r.summary;
        let rejected = r.requests.iter().filter(|q| q.status == DeployStatus::Rejected).count();
        let per_vnf = s.instances_per_vnf.iter().map(|(v, c)| format!("{v}={c}")).collect::<Vec<_>>().join(";");
        let mut fields = vec![
            row.strategy.name().to_owned(),
            row.multiplier.to_string(),
            row.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.all_deployed.to_string(),
            rejected.to_string(),
            s.total_cost.to_string(),
            s.services_per_instance.to_string(),
            s.used_capability.to_string(),
            s.max_active_capability.to_string(),
            s.active_vms.to_string(),
            per_vnf,
        ];
        if timing {
            fields.push(format!("{:.3}", row.wall_ms));
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

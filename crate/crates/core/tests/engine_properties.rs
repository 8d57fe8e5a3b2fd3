use std::collections::BTreeMap;

use flexshare::assignment::{apply_assignment, build_graph, hungarian_solve};
use flexshare::engine::{self, deploy_service, find_merge, merge_pass, prune_edge, DeployStatus};
use flexshare::model::service_total_delay;
use flexshare::scenario;
use flexshare::{Deployment, Pop, ServiceId, ServiceSpec, Strategy, VmId, VmSpec, VnfId, VnfSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STRATEGIES: [Strategy; 4] = [
    Strategy::PerService,
    Strategy::PerVnfFlexShare,
    Strategy::PerVnfBrute,
    Strategy::PerFlowFlexShare,
];

/// Small heterogeneous PoP; some services are meant to be rejected.
fn random_pop(seed: u64) -> Pop {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_vnfs = rng.random_range(1..=3);
    let n_services = rng.random_range(2..=4);
    let n_vms = rng.random_range(2..=5);
    let vnfs = (0..n_vnfs)
        .map(|i| VnfSpec {
            name: format!("v{i}"),
            load: rng.random_range(0.5..1.5),
        })
        .collect();
    let vms = (0..n_vms)
        .map(|i| VmSpec {
            name: format!("m{i}"),
            max_capability: rng.random_range(4.0..10.0),
            fixed_cost: rng.random_range(2.0..10.0),
            prop_cost: rng.random_range(0.2..1.0),
        })
        .collect();
    let services = (0..n_services)
        .map(|s| {
            let mut rates = BTreeMap::new();
            for v in 0..n_vnfs {
                if rng.random_bool(0.6) {
                    rates.insert(VnfId(v), rng.random_range(0.3..2.5));
                }
            }
            if rates.is_empty() {
                rates.insert(VnfId(0), rng.random_range(0.3..2.5));
            }
            ServiceSpec {
                name: format!("s{s}"),
                max_delay: rates.len() as f64 * rng.random_range(0.3..3.0),
                rates,
            }
        })
        .collect();
    Pop::new(vnfs, vms, services).unwrap()
}

fn check_delays(dep: &Deployment, pop: &Pop) -> Result<(), TestCaseError> {
    for s in dep.deployed_services() {
        let d = service_total_delay(s, dep, pop).unwrap();
        prop_assert!(d <= pop.service(s).max_delay + 1e-6, "{s}: {d} > {}", pop.service(s).max_delay);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn requests_keep_every_deployed_service_feasible(seed in any::<u64>(), pick in 0usize..4) {
        let pop = random_pop(seed);
        let strategy = STRATEGIES[pick];
        let mut dep = Deployment::new(strategy.model());
        for s in pop.service_ids() {
            dep = merge_pass(&dep, &pop, strategy).unwrap();
            let budget = build_graph(s, &dep, &pop).map_or(0, |g| g.edge_count());
            let out = deploy_service(s, &dep, &pop, strategy).unwrap();
            prop_assert!(out.iterations <= budget, "{} rounds for {budget} edges", out.iterations);
            match out.status {
                DeployStatus::Deployed => {
                    out.deployment.validate(&pop).unwrap();
                    prop_assert!(out.deployment.is_deployed(s));
                    check_delays(&out.deployment, &pop)?;
                    for (vm, inst) in out.deployment.instances() {
                        prop_assert!(inst.capability <= pop.vm(vm).max_capability + 1e-6);
                        prop_assert!(inst.capability > inst.offered_load(&pop));
                    }
                }
                DeployStatus::Rejected => prop_assert_eq!(&out.deployment, &dep),
            }
            dep = out.deployment;
        }
    }

    #[test]
    fn merge_pass_leaves_no_cost_reducing_merge(seed in any::<u64>(), pick in 0usize..4) {
        let pop = random_pop(seed);
        let strategy = STRATEGIES[pick];
        let order: Vec<ServiceId> = pop.service_ids().collect();
        let report = engine::run_strategy(&pop, &order, strategy).unwrap();
        prop_assert!(find_merge(&report.deployment, &pop, strategy).unwrap().is_none());
        check_delays(&report.deployment, &pop)?;
        let deployed = report.deployment.deployed_services();
        let rejected = report.rejected();
        prop_assert_eq!(deployed.len() + rejected.len(), order.len());
    }

    #[test]
    fn pruned_edge_ignores_violation_order(seed in any::<u64>()) {
        let pop = random_pop(seed);
        let strategy = Strategy::PerVnfFlexShare;
        let first = deploy_service(ServiceId(0), &Deployment::new(strategy.model()), &pop, strategy).unwrap();
        let dep = first.deployment;
        let s = ServiceId(1);
        let Ok(graph) = build_graph(s, &dep, &pop) else { return Ok(()) };
        let Ok(assignment) = hungarian_solve(&graph) else { return Ok(()) };
        let candidate = apply_assignment(&assignment, s, &dep).unwrap();
        let mut violated: Vec<(VmId, f64)> = assignment.values().map(|&m| (m, 1.0)).collect();
        let a = prune_edge(graph.clone(), &violated, &assignment, &candidate, &pop).unwrap();
        violated.reverse();
        let b = prune_edge(graph, &violated, &assignment, &candidate, &pop).unwrap();
        let removed = |g: &flexshare::assignment::BipartiteGraph| -> Vec<(VnfId, VmId)> {
            assignment.iter().map(|(&v, &m)| (v, m)).filter(|&(v, m)| g.is_pruned(v, m)).collect()
        };
        prop_assert_eq!(removed(&a), removed(&b));
        prop_assert_eq!(removed(&a).len(), 1);
    }
}

#[test]
fn flexibility_never_costs_more_on_fixtures() {
    for name in scenario::BUNDLED {
        let sc = scenario::bundled(name).unwrap();
        let pop = sc.pop(None).unwrap();
        let cost = |strategy| {
            let report = engine::run_strategy(&pop, &sc.request_order, strategy).unwrap();
            (engine::deployment_cost(&report.deployment, &pop), report.rejected().len())
        };
        let (flow, flow_rej) = cost(Strategy::PerFlowFlexShare);
        let (vnf, vnf_rej) = cost(Strategy::PerVnfFlexShare);
        let (service, service_rej) = cost(Strategy::PerService);
        assert!(
            flow_rej <= vnf_rej && vnf_rej <= service_rej,
            "{name}: rejections {flow_rej} {vnf_rej} {service_rej}"
        );
        if flow_rej == vnf_rej {
            assert!(flow <= vnf + 1e-6 * vnf, "{name}: per-flow {flow} > per-VNF {vnf}");
        }
        if vnf_rej == service_rej {
            assert!(vnf <= service + 1e-6 * service, "{name}: per-VNF {vnf} > per-service {service}");
        }
    }
}

#[test]
fn single_service_costs_the_same_under_every_strategy() {
    let pop = Pop::new(
        vec![VnfSpec { name: "v".into(), load: 1.0 }],
        vec![VmSpec {
            name: "m".into(),
            max_capability: 6.0,
            fixed_cost: 5.0,
            prop_cost: 0.5,
        }],
        vec![ServiceSpec {
            name: "s".into(),
            rates: BTreeMap::from([(VnfId(0), 2.0)]),
            max_delay: 1.0,
        }],
    )
    .unwrap();
    let costs: Vec<f64> = STRATEGIES
        .iter()
        .map(|&st| {
            let r = engine::run_strategy(&pop, &[ServiceId(0)], st).unwrap();
            assert!(r.all_deployed());
            engine::deployment_cost(&r.deployment, &pop)
        })
        .collect();
    // μ* = 3 from 1/(μ-2) = 1, cost 5 + 0.5·3
    for c in costs {
        assert!((c - 6.5).abs() < 1e-4, "{c}");
    }
}

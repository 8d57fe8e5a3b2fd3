use super::*;
use crate::model::{ServiceSpec, VmSpec, VnfSpec};

fn vm(name: &str, cap: f64, fixed: f64, prop: f64) -> VmSpec {
    VmSpec {
        name: name.into(),
        max_capability: cap,
        fixed_cost: fixed,
        prop_cost: prop,
    }
}

fn service(name: &str, rates: &[(usize, f64)], max_delay: f64) -> ServiceSpec {
    ServiceSpec {
        name: name.into(),
        rates: rates.iter().map(|&(v, r)| (VnfId(v), r)).collect(),
        max_delay,
    }
}

fn unit_vnfs(n: usize) -> Vec<VnfSpec> {
    (0..n).map(|i| VnfSpec { name: format!("v{i}"), load: 1.0 }).collect()
}

/// Transcoding, motion detection and face recognition on VMs sized as in the
/// video-surveillance example, plus two spare VMs.
fn surveillance() -> Pop {
    let vms = vec![
        vm("m0", 5.0, 10.0, 0.1),
        vm("m1", 5.0, 10.0, 0.1),
        vm("m2", 9.15, 10.0, 0.1),
        vm("m3", 5.0, 10.0, 0.1),
        vm("m4", 5.0, 10.0, 0.1),
    ];
    let s1 = service("s1", &[(0, 2.0), (1, 2.0), (2, 2.0)], 1.1);
    let s2 = service("s2", &[(0, 1.0), (1, 1.0)], 1.1);
    Pop::new(unit_vnfs(3), vms, vec![s1, s2]).unwrap()
}

fn surveillance_shared(model: PriorityModel, levels: [(f64, f64); 2]) -> Deployment {
    let mut dep = Deployment::new(model);
    for (i, (p1, p2)) in levels.into_iter().enumerate() {
        dep.activate(VmId(i), VnfId(i)).unwrap();
        dep.assign(ServiceId(0), VmId(i), p1).unwrap();
        dep.assign(ServiceId(1), VmId(i), p2).unwrap();
    }
    dep.activate(VmId(2), VnfId(2)).unwrap();
    dep.assign(ServiceId(0), VmId(2), 0.0).unwrap();
    dep
}

#[test]
fn strategy_names_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
    }
    assert!("fifo".parse::<Strategy>().is_err());
}

#[test]
fn per_service_orders_fail_where_split_succeeds() {
    let pop = surveillance();
    for levels in [[(1.0, 0.0), (1.0, 0.0)], [(0.0, 1.0), (0.0, 1.0)]] {
        let dep = surveillance_shared(PriorityModel::PerService, levels);
        assert!(matches!(capability_only(&dep, &pop).unwrap(), Plan::Infeasible(_)), "{levels:?}");
    }
    // Equal levels make each service wait behind half of the other's traffic,
    // which is milder than a shared FIFO queue and happens to fit.
    let equal = surveillance_shared(PriorityModel::PerService, [(0.0, 0.0), (0.0, 0.0)]);
    assert!(matches!(capability_only(&equal, &pop).unwrap(), Plan::Feasible(_)));
    let split = surveillance_shared(PriorityModel::PerVnf, [(1.0, 0.0), (0.0, 1.0)]);
    let Plan::Feasible(dep) = capability_only(&split, &pop).unwrap() else {
        panic!("split priorities should be feasible");
    };
    assert!(delays_met(&dep, &pop).unwrap());
}

#[test]
fn per_service_levels_rank_by_delay_target() {
    let mut pop = surveillance();
    pop.services[1].max_delay = 0.5;
    let levels = per_service_levels(&pop);
    assert!(levels[&ServiceId(1)] > levels[&ServiceId(0)]);
    pop.services[1].max_delay = 1.1;
    let levels = per_service_levels(&pop);
    assert!(levels[&ServiceId(0)] > levels[&ServiceId(1)]);
}

#[test]
fn surveillance_needs_extra_instance_only_with_per_service() {
    let pop = surveillance();
    let order = [ServiceId(0), ServiceId(1)];
    let per_service = run_strategy(&pop, &order, Strategy::PerService).unwrap();
    assert!(per_service.all_deployed());
    assert_eq!(per_service.deployment.active_count(), 4);
    for strategy in [Strategy::PerVnfBrute, Strategy::PerVnfFlexShare, Strategy::PerFlowFlexShare] {
        let report = run_strategy(&pop, &order, strategy).unwrap();
        assert!(report.all_deployed(), "{strategy}");
        assert_eq!(report.deployment.active_count(), 3, "{strategy}");
        assert!(delays_met(&report.deployment, &pop).unwrap());
    }
}

#[test]
fn single_service_on_empty_pop() {
    let pop = Pop::new(
        unit_vnfs(3),
        (0..4).map(|i| vm(&format!("m{i}"), 10.0, 8.0, 0.5)).collect(),
        vec![service("s", &[(0, 2.0), (2, 1.0)], 3.0)],
    )
    .unwrap();
    let costs: Vec<f64> = Strategy::ALL
        .iter()
        .map(|&st| {
            let out = deploy_service(ServiceId(0), &Deployment::new(st.model()), &pop, st).unwrap();
            assert!(out.is_deployed());
            assert_eq!(out.iterations, 0);
            assert_eq!(out.activated, vec![VmId(0), VmId(1)]);
            assert_eq!(out.deployment.active_count(), 2);
            deployment_cost(&out.deployment, &pop)
        })
        .collect();
    for c in &costs {
        assert!((c - costs[0]).abs() < 1e-6 * costs[0], "{costs:?}");
    }
}

#[test]
fn already_deployed_service_is_a_precondition_error() {
    let pop = surveillance();
    let out = deploy_service(ServiceId(0), &Deployment::new(PriorityModel::PerVnf), &pop, Strategy::PerVnfFlexShare).unwrap();
    assert!(deploy_service(ServiceId(0), &out.deployment, &pop, Strategy::PerVnfFlexShare).is_err());
}

#[test]
fn rejection_leaves_deployment_unchanged() {
    // one VM only, and the service needs two VNFs
    let pop = Pop::new(unit_vnfs(2), vec![vm("m0", 10.0, 1.0, 1.0)], vec![service("s", &[(0, 1.0), (1, 1.0)], 5.0)]).unwrap();
    let dep = Deployment::new(PriorityModel::PerVnf);
    let out = deploy_service(ServiceId(0), &dep, &pop, Strategy::PerVnfFlexShare).unwrap();
    assert_eq!(out.status, DeployStatus::Rejected);
    assert_eq!(out.deployment, dep);

    // delay target out of reach even at full capability
    let pop = Pop::new(unit_vnfs(1), vec![vm("m0", 2.0, 1.0, 1.0)], vec![service("s", &[(0, 1.0)], 0.5)]).unwrap();
    let out = deploy_service(ServiceId(0), &dep, &pop, Strategy::PerVnfFlexShare).unwrap();
    assert_eq!(out.status, DeployStatus::Rejected);
    assert_eq!(out.iterations, 1);
}

fn two_instance_state() -> (Pop, Deployment) {
    // two instances of v0 with different headroom, s2 uses both VNFs
    let pop = Pop::new(
        unit_vnfs(2),
        vec![vm("m0", 4.0, 5.0, 1.0), vm("m1", 6.0, 5.0, 1.0), vm("m2", 10.0, 5.0, 1.0)],
        vec![
            service("a", &[(0, 3.5)], 10.0),
            service("b", &[(1, 4.0)], 10.0),
            service("c", &[(0, 0.1), (1, 0.1)], 10.0),
        ],
    )
    .unwrap();
    let mut dep = Deployment::new(PriorityModel::PerVnf);
    dep.activate(VmId(0), VnfId(0)).unwrap();
    dep.assign(ServiceId(0), VmId(0), 0.0).unwrap();
    dep.assign(ServiceId(2), VmId(0), 0.0).unwrap();
    dep.activate(VmId(1), VnfId(1)).unwrap();
    dep.assign(ServiceId(1), VmId(1), 0.0).unwrap();
    dep.assign(ServiceId(2), VmId(1), 0.0).unwrap();
    (pop, dep)
}

#[test]
fn prune_picks_violated_vm_closest_to_instability() {
    let (pop, dep) = two_instance_state();
    let graph_dep = {
        let mut d = dep.clone();
        d.instance_mut(VmId(0)).unwrap().priorities.remove(&ServiceId(2));
        d.instance_mut(VmId(1)).unwrap().priorities.remove(&ServiceId(2));
        d
    };
    let graph = build_graph(ServiceId(2), &graph_dep, &pop).unwrap();
    let assignment: Assignment = [(VnfId(0), VmId(0)), (VnfId(1), VmId(1))].into_iter().collect();
    // gaps: m0 4 - 3.6 = 0.4, m1 6 - 4.1 = 1.9
    let pruned = prune_edge(graph.clone(), &[(VmId(0), 1.0), (VmId(1), 1.0)], &assignment, &dep, &pop).unwrap();
    assert!(pruned.is_pruned(VnfId(0), VmId(0)));
    assert_eq!(pruned.edge_count(), graph.edge_count() - 1);

    let pruned = prune_edge(graph.clone(), &[(VmId(1), 1.0)], &assignment, &dep, &pop).unwrap();
    assert!(pruned.is_pruned(VnfId(1), VmId(1)));

    // no violated VM serves the service: fall back to the tightest matched edge
    let pruned = prune_edge(graph.clone(), &[(VmId(2), 1.0)], &assignment, &dep, &pop).unwrap();
    assert!(pruned.is_pruned(VnfId(0), VmId(0)));

    // the choice does not depend on the order of the violated list
    let a = prune_edge(graph.clone(), &[(VmId(1), 1.0), (VmId(0), 1.0)], &assignment, &dep, &pop).unwrap();
    let b = prune_edge(graph, &[(VmId(0), 1.0), (VmId(1), 1.0)], &assignment, &dep, &pop).unwrap();
    assert_eq!(a, b);
}

fn lifecycle_pop() -> Pop {
    // three identical services through one VNF; a three-way share misses the
    // target under every priority choice, a two-way share meets it
    let services = (1..=3).map(|i| service(&format!("s{i}"), &[(0, 1.0)], 0.38)).collect();
    Pop::new(unit_vnfs(1), vec![vm("m1", 5.0, 10.0, 1.0), vm("m2", 5.0, 10.0, 1.0)], services).unwrap()
}

#[test]
fn lifecycle_ends_with_merge() {
    let pop = lifecycle_pop();
    let order = [ServiceId(0), ServiceId(1), ServiceId(2)];
    let report = run_strategy(&pop, &order, Strategy::PerVnfFlexShare).unwrap();
    assert!(report.all_deployed());
    let dep = report.deployment;
    assert_eq!(dep.instance_of(ServiceId(2), VnfId(0)), Some(VmId(1)));
    assert_eq!(dep.instance(VmId(0)).unwrap().members().count(), 2);

    let after = deinstantiate_service(ServiceId(1), &dep, &pop).unwrap();
    assert!(after.is_active(VmId(0)) && after.is_active(VmId(1)));
    assert!(delays_met(&after, &pop).unwrap());
    let before = deployment_cost(&after, &pop);

    let merged = merge_pass(&after, &pop, Strategy::PerVnfFlexShare).unwrap();
    assert!(!merged.is_active(VmId(1)));
    assert_eq!(merged.instance_of(ServiceId(2), VnfId(0)), Some(VmId(0)));
    assert!(deployment_cost(&merged, &pop) < before);
    assert!(delays_met(&merged, &pop).unwrap());
    assert!(find_merge(&merged, &pop, Strategy::PerVnfFlexShare).unwrap().is_none());
}

#[test]
fn removing_sole_service_deactivates_vm() {
    let pop = lifecycle_pop();
    let out = deploy_service(ServiceId(0), &Deployment::new(PriorityModel::PerVnf), &pop, Strategy::PerVnfFlexShare).unwrap();
    let after = deinstantiate_service(ServiceId(0), &out.deployment, &pop).unwrap();
    assert_eq!(after.active_count(), 0);
    assert_eq!(deployment_cost(&after, &pop), 0.0);
    assert!(deinstantiate_service(ServiceId(0), &after, &pop).is_err());
}

#[test]
fn removing_a_sharer_keeps_others_feasible() {
    let pop = surveillance();
    let report = run_strategy(&pop, &[ServiceId(0), ServiceId(1)], Strategy::PerVnfBrute).unwrap();
    let after = deinstantiate_service(ServiceId(1), &report.deployment, &pop).unwrap();
    assert!(delays_met(&after, &pop).unwrap());
    assert!(deployment_cost(&after, &pop) <= deployment_cost(&report.deployment, &pop) + 1e-9);
}

#[test]
fn merge_without_duplicates_is_a_no_op() {
    let (pop, dep) = two_instance_state();
    let Plan::Feasible(dep) = capability_only(&dep, &pop).unwrap() else { panic!() };
    assert_eq!(merge_pass(&dep, &pop, Strategy::PerVnfFlexShare).unwrap(), dep);
}

#[test]
fn unstable_merge_is_skipped() {
    let pop = Pop::new(
        unit_vnfs(1),
        vec![vm("m0", 5.0, 10.0, 1.0), vm("m1", 5.0, 10.0, 1.0)],
        vec![service("a", &[(0, 3.0)], 10.0), service("b", &[(0, 2.0)], 10.0)],
    )
    .unwrap();
    let mut dep = Deployment::new(PriorityModel::PerVnf);
    for i in 0..2 {
        dep.activate(VmId(i), VnfId(0)).unwrap();
        dep.assign(ServiceId(i), VmId(i), 0.0).unwrap();
    }
    let Plan::Feasible(dep) = capability_only(&dep, &pop).unwrap() else { panic!() };
    // combined load 5 is not below capacity 5
    assert_eq!(merge_pass(&dep, &pop, Strategy::PerVnfFlexShare).unwrap(), dep);
}

#[test]
fn brute_force_cap_is_enforced() {
    let n = 10; // 10! orders on one instance
    let services = (0..n).map(|i| service(&format!("s{i}"), &[(0, 0.1)], 100.0)).collect();
    let pop = Pop::new(unit_vnfs(1), vec![vm("m0", 100.0, 1.0, 1.0)], services).unwrap();
    let mut dep = Deployment::new(PriorityModel::PerVnf);
    dep.activate(VmId(0), VnfId(0)).unwrap();
    for i in 0..n {
        dep.assign(ServiceId(i), VmId(0), 0.0).unwrap();
    }
    assert!(matches!(plan_brute(&dep, &pop), Err(Error::EnumerationOverflow { .. })));
}

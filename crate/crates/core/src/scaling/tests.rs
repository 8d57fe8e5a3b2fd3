use super::*;
use crate::model::{lambda_per_flow, lambda_per_vnf};

fn entry(vm: usize, cap: f64, members: &[(usize, f64)]) -> InstanceEntry {
    InstanceEntry {
        vm: VmId(vm),
        vnf: VnfId(vm),
        load: 1.0,
        max_capability: cap,
        fixed_cost: 0.0,
        prop_cost: 1.0,
        members: members.iter().map(|&(s, r)| (ServiceId(s), r)).collect(),
    }
}

fn problem(instances: Vec<InstanceEntry>, targets: &[(usize, f64)]) -> ScalingProblem {
    ScalingProblem {
        instances,
        delay_targets: targets.iter().map(|&(s, d)| (ServiceId(s), d)).collect(),
    }
}

fn single(cap: f64) -> ScalingProblem {
    problem(vec![entry(0, cap, &[(0, 2.0)])], &[(0, 1.0)])
}

#[test]
fn single_vm_matches_closed_form() {
    let sol = solve(&single(10.0)).unwrap();
    let expected = (5.0 + 13f64.sqrt()) / 2.0;
    let mu = sol.capability[&VmId(0)];
    assert!(((mu - expected) / expected).abs() < 1e-4, "{mu}");
    assert!((sol.higher[&(ServiceId(0), VmId(0))] - 1.0).abs() < 1e-12);
    assert!((sol.objective - mu).abs() < 1e-12);
}

#[test]
fn capacity_below_requirement_is_infeasible() {
    let p = single(4.0);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Infeasible);
    let v = find_violated_capacity(&p).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].0, VmId(0));
    let expected = (5.0 + 13f64.sqrt()) / 2.0 - 4.0;
    assert!((v[0].1 - expected).abs() < 1e-5, "{:?}", v);
    assert_eq!(sol.violated_capacity.len(), 1);
}

#[test]
fn feasible_problem_has_no_violated_set() {
    assert!(matches!(find_violated_capacity(&single(10.0)), Err(Error::Precondition(_))));
}

#[test]
fn two_tight_vms_are_both_listed() {
    // One service through two instances; even at full capability the delay
    // budget is missed, and both VMs carry part of the blame by symmetry.
    let p = problem(vec![entry(0, 4.0, &[(0, 2.0)]), entry(1, 4.0, &[(0, 2.0)])], &[(0, 1.0)]);
    let v = find_violated_capacity(&p).unwrap();
    assert_eq!(v.iter().map(|x| x.0).collect::<Vec<_>>(), vec![VmId(0), VmId(1)]);
}

#[test]
fn shared_instance_averaging_constraint() {
    let p = problem(vec![entry(0, 20.0, &[(0, 2.0), (1, 1.0)])], &[(0, 1.0), (1, 2.0)]);
    assert_eq!(p.instances[0].averaging_target(), 3.0);
    let sol = solve(&p).unwrap();
    assert!(sol.is_feasible());
    let total = sol.higher[&(ServiceId(0), VmId(0))] + sol.higher[&(ServiceId(1), VmId(0))];
    assert!((total - 3.0).abs() < 1e-6, "{total}");
    // the tighter service is favored
    assert!(sol.higher[&(ServiceId(0), VmId(0))] < sol.higher[&(ServiceId(1), VmId(0))]);
}

#[test]
fn fixed_rates_solve_capability_only() {
    let p = problem(vec![entry(0, 20.0, &[(0, 2.0), (1, 1.0)])], &[(0, 1.0), (1, 2.0)]);
    let higher = BTreeMap::from([((ServiceId(0), VmId(0)), 0.0), ((ServiceId(1), VmId(0)), 2.0)]);
    let sol = solve_fixed(&p, &higher).unwrap();
    let mu = sol.capability[&VmId(0)];
    let d0 = crate::model::sojourn_time(1.0, mu, 0.0, 2.0).unwrap();
    let d1 = crate::model::sojourn_time(1.0, mu, 2.0, 1.0).unwrap();
    // the tighter of the two delay constraints is active
    assert!(d0 <= 1.0 + 1e-6 && d1 <= 2.0 + 1e-6);
    assert!((d0 - 1.0).abs() < 1e-6 || (d1 - 2.0).abs() < 1e-6, "{d0} {d1}");
}

#[test]
fn empty_instance_gets_zero_capability() {
    let mut p = single(10.0);
    p.instances.push(InstanceEntry {
        members: Vec::new(),
        fixed_cost: 3.0,
        ..entry(1, 10.0, &[])
    });
    let sol = solve(&p).unwrap();
    assert_eq!(sol.capability[&VmId(1)], 0.0);
    assert!((sol.objective - 3.0 - sol.capability[&VmId(0)]).abs() < 1e-12);
}

#[test]
fn per_vnf_mapping_orders_by_higher_rate() {
    let p = problem(vec![entry(0, 20.0, &[(0, 2.0), (1, 1.0)])], &[(0, 1.0), (1, 2.0)]);
    let sol = ScalingSolution {
        status: Status::Feasible,
        capability: BTreeMap::from([(VmId(0), 10.0)]),
        higher: BTreeMap::from([((ServiceId(0), VmId(0)), 0.0), ((ServiceId(1), VmId(0)), 3.0)]),
        objective: 10.0,
        violated_capacity: Vec::new(),
    };
    let mapped = map_priorities(&sol, &p, PriorityModel::PerVnf).unwrap();
    let levels = &mapped.params[&VmId(0)];
    assert_eq!(levels[&ServiceId(0)], 0.0);
    assert_eq!(levels[&ServiceId(1)], -3.0);
    let pop: Vec<_> = levels.iter().map(|(&s, &l)| (s, if s == ServiceId(0) { 2.0 } else { 1.0 }, l)).collect();
    assert_eq!(lambda_per_vnf(ServiceId(0), &pop).unwrap(), 0.0);
    assert_eq!(lambda_per_vnf(ServiceId(1), &pop).unwrap(), 2.0);
}

#[test]
fn equal_targets_give_equal_centers() {
    let (r, clamped) = per_flow_centers(&[1.0, 1.0], &[0.5, 0.5], 1.0);
    assert!(!clamped);
    assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12, "{r:?}");
}

#[test]
fn per_flow_round_trip_on_realizable_rates() {
    let rates = [2.0, 1.5, 1.0, 0.7];
    let truth = [0.3, -0.4, 0.9, -0.8];
    let ids: Vec<ServiceId> = (0..4).map(ServiceId).collect();
    let pop: Vec<_> = (0..4).map(|i| (ids[i], rates[i], truth[i])).collect();
    let targets: Vec<f64> = ids.iter().map(|&s| lambda_per_flow(s, &pop, 1.0).unwrap()).collect();
    let (r, clamped) = per_flow_centers(&rates, &targets, 1.0);
    assert!(!clamped);
    let rebuilt: Vec<_> = (0..4).map(|i| (ids[i], rates[i], r[i])).collect();
    for (i, &s) in ids.iter().enumerate() {
        let realized = lambda_per_flow(s, &rebuilt, 1.0).unwrap();
        assert!((realized - targets[i]).abs() < 1e-9, "{s}: {realized} vs {}", targets[i]);
    }
}

#[test]
fn per_flow_mapping_preserves_solved_order() {
    let p = problem(
        vec![entry(0, 30.0, &[(0, 2.0), (1, 1.5), (2, 1.0)])],
        &[(0, 1.5), (1, 1.8), (2, 2.5)],
    );
    let sol = solve(&p).unwrap();
    let mapped = map_priorities(&sol, &p, PriorityModel::PerFlowUniform { jitter: 1.0 }).unwrap();
    let centers = &mapped.params[&VmId(0)];
    let pop: Vec<_> = p.instances[0].members.iter().map(|&(s, r)| (s, r, centers[&s])).collect();
    let realized: Vec<f64> = pop.iter().map(|&(s, _, _)| lambda_per_flow(s, &pop, 1.0).unwrap()).collect();
    let wanted: Vec<f64> = pop.iter().map(|&(s, _, _)| sol.higher[&(s, VmId(0))]).collect();
    for i in 0..3 {
        for j in 0..3 {
            if wanted[i] < wanted[j] - 1e-9 {
                assert!(realized[i] < realized[j], "{wanted:?} {realized:?}");
            }
        }
    }
}

#[test]
fn clamping_keeps_centers_in_box() {
    // a strict three-level order needs a spread of 4j
    let (r, clamped) = per_flow_centers(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0], 1.0);
    assert!(clamped);
    for a in &r {
        for b in &r {
            assert!((a - b).abs() <= 2.0 + 1e-12, "{r:?}");
        }
    }
}

#[test]
fn mapping_requires_feasible_solution() {
    let p = single(4.0);
    let sol = solve(&p).unwrap();
    assert!(map_priorities(&sol, &p, PriorityModel::PerVnf).is_err());
}

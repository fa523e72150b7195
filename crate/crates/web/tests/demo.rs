use fedloc_web::{bound_table, compare, scenario_view};

#[test]
fn scenario_view_weights_are_normalized() {
    let v = scenario_view("heterogeneous", 1).unwrap();
    assert_eq!(v.clients.len(), 8);
    assert_eq!(v.aps.len(), 4);
    for key in [|c: &fedloc_web::ClientView| c.uniform_weight, |c: &fedloc_web::ClientView| c.hull_weight] {
        let total: f64 = v.clients.iter().map(key).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    let stragglers = &v.clients[4..];
    assert!(stragglers.iter().all(|c| c.hull_area < v.clients[0].hull_area));
    let json = serde_json::to_string(&v).unwrap();
    assert!(json.contains("\"kind\":\"heterogeneous\""));
}

#[test]
fn compare_returns_two_curves() {
    let curves = compare("homogeneous", 2, 3, 1e-5).unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[0].strategy, "uniform");
    assert!(curves.iter().all(|c| c.rounds == vec![1, 2, 3] && c.test_mae.iter().all(|m| m.is_finite())));
    assert!(compare("homogeneous", 2, 0, 1e-5).is_err());
    assert!(compare("sideways", 2, 3, 1e-5).is_err());
}

#[test]
fn bound_table_is_monotone_and_rejects_large_steps() {
    let rows = bound_table(1.0, 1.0, 0.01, 0.1, 1.0, 40).unwrap();
    assert!(rows.windows(2).all(|w| w[1].bound <= w[0].bound));
    let err = bound_table(1.0, 1.0, 1.0, 0.1, 1.0, 40).unwrap_err();
    assert!(err.contains("bound inapplicable"), "{err}");
}

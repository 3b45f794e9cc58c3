//! L2 solver objectives against reference values from an external convex solver
//! (see `fixtures/gen_svm_oracle.py`).

use ndarray::Array2;
use ndpoly::svm::{l2_objective, train_l2, train_linear_svm, Regularization, SvmParams};
use serde::Deserialize;

#[derive(Deserialize)]
struct Instance {
    name: String,
    c: f64,
    x: Vec<Vec<f64>>,
    y: Vec<bool>,
    objective: f64,
}

#[derive(Deserialize)]
struct Oracle {
    instances: Vec<Instance>,
}

fn load() -> Vec<(String, Array2<f64>, Vec<bool>, f64, f64)> {
    let text = include_str!("fixtures/svm_oracle.json");
    let oracle: Oracle = serde_json::from_str(text).unwrap();
    oracle
        .instances
        .into_iter()
        .map(|inst| {
            let d = inst.x[0].len();
            let flat: Vec<f64> = inst.x.iter().flatten().copied().collect();
            let x = Array2::from_shape_vec((inst.x.len(), d), flat).unwrap();
            (inst.name, x, inst.y, inst.c, inst.objective)
        })
        .collect()
}

#[test]
fn l2_objective_matches_reference_solver() {
    for (name, x, y, c, reference) in load() {
        let params = SvmParams { c, ..Default::default() };
        let model = train_linear_svm(x.view(), &y, Regularization::L2, &params).unwrap();
        assert!(model.converged, "{name} did not converge");
        let rel = (model.objective - reference).abs() / reference.abs().max(1e-12);
        println!("{name}: objective {} reference {} rel {rel:.2e} epochs {}", model.objective, reference, model.epochs);
        assert!(rel <= 1e-4, "{name}: relative error {rel}");
        assert_eq!(model.objective, l2_objective(x.view(), &y, &model.weights, model.bias, c));
    }
}

#[test]
fn dual_objective_never_increases() {
    for (name, x, y, c, _) in load() {
        let params = SvmParams { c, ..Default::default() };
        let sol = train_l2(x.view(), &y, &params, None).unwrap();
        for pair in sol.trace.windows(2) {
            assert!(
                pair[1].dual_objective <= pair[0].dual_objective + 1e-12,
                "{name}: {} -> {}",
                pair[0].dual_objective,
                pair[1].dual_objective
            );
        }
        assert!(sol.trace.last().unwrap().violation < params.tol, "{name}");
    }
}

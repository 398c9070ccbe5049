use super::*;
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr_free::normal_pair;

use crate::classifiers::{fit_softmax, fit_tree, SoftmaxModel, SoftmaxOptions, TreeModel, TreeOptions};
use crate::datamodel::LabeledDataset;
use crate::density::{fit_gmm, ClassKde, GaussianComponent, GmmOptions};

mod rand_distr_free {
    use rand::Rng;

    /// Box-Muller pair of standard normals.
    pub fn normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        (r * t.cos(), r * t.sin())
    }
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_vec(x.to_vec())
}

fn boundary_model() -> Classifier {
    Classifier::Softmax(SoftmaxModel {
        weights: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]),
        biases: v(&[0.0, 0.0]),
    })
}

fn unit_gmm(class_id: usize, mean: &[f64]) -> ClassGmm {
    let d = mean.len();
    let comp = GaussianComponent::new(1.0, v(mean), DMatrix::identity(d, d)).unwrap();
    ClassGmm::new(class_id, vec![comp]).unwrap()
}

/// Density of a unit-covariance 2-D Gaussian at radius 1.
fn radius_one_delta() -> DensityThreshold {
    DensityThreshold::from_log(-0.5 - std::f64::consts::TAU.ln()).unwrap()
}

fn opts() -> EngineOptions {
    EngineOptions::default()
}

fn two_clusters(n: usize, spread: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let cx = if class == 0 { -3.0 } else { 3.0 };
        for _ in 0..n {
            let (a, b) = normal_pair(&mut rng);
            rows.extend([cx + spread * a, spread * b]);
            labels.push(class);
        }
    }
    LabeledDataset::new(DMatrix::from_row_slice(2 * n, 2, &rows), labels, vec!["a".into(), "b".into()]).unwrap()
}

#[test]
fn baseline_crosses_the_boundary() {
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1);
    let res = counterfactual_baseline(&req, &boundary_model(), &opts()).unwrap();
    assert!(res.is_found());
    assert_relative_eq!(res.objective_value.unwrap(), 3.0, epsilon = 1e-3);
    let p = res.point.unwrap();
    assert!(p[0] > 0.0 && p[0] < 1e-3);
    assert_relative_eq!(p[1], 0.0, epsilon = 1e-6);
    assert_eq!(res.region_provenance, Some(RegionProvenance::SoftmaxMargin));
    assert_eq!(res.component_index, None);
}

#[test]
fn plausible_reaches_into_the_density_ball() {
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1).with_delta(radius_one_delta());
    let res = counterfactual_plausible(&req, &boundary_model(), &gmm, &opts()).unwrap();
    assert!(res.is_found());
    assert_relative_eq!(res.objective_value.unwrap(), 5.0, epsilon = 1e-5);
    assert_relative_eq!(res.point.clone().unwrap(), v(&[2.0, 0.0]), epsilon = 1e-4);
    assert_eq!(res.component_index, Some(0));
    assert_relative_eq!(res.approx_log_density.unwrap(), radius_one_delta().log_delta(), epsilon = 1e-5);

    let base = counterfactual_baseline(&req.without_delta(), &boundary_model(), &opts()).unwrap();
    let base_density = approx_log_density(&gmm, base.point.as_ref().unwrap()).unwrap().0;
    assert!(base_density < res.approx_log_density.unwrap() - 3.0);
    assert!(res.objective_value.unwrap() >= base.objective_value.unwrap() - 1e-8);
}

#[test]
fn vacuous_threshold_matches_baseline() {
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let x = v(&[-3.0, 0.0]);
    let active = gmm.components[0].mahalanobis_sq(&x) + gmm.components[0].constraint_constant();
    let delta = DensityThreshold::from_delta_prime(active + 1e6).unwrap();
    let req = CounterfactualRequest::new(x, 1).with_delta(delta);
    let res = counterfactual_plausible(&req, &boundary_model(), &gmm, &opts()).unwrap();
    let base = counterfactual_baseline(&req.without_delta(), &boundary_model(), &opts()).unwrap();
    assert!((res.objective_value.unwrap() - base.objective_value.unwrap()).abs() <= 1e-4);
}

#[test]
fn threshold_above_peak_is_infeasible() {
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1).with_delta(DensityThreshold::new(0.2).unwrap());
    let res = counterfactual_plausible(&req, &boundary_model(), &gmm, &opts()).unwrap();
    assert_eq!(res.status, CounterfactualStatus::Infeasible);
    assert!(res.point.is_none());
    assert_eq!(res.subproblems.infeasible, 1);
}

#[test]
fn query_already_in_target_class_stays_put() {
    let req = CounterfactualRequest::new(v(&[2.5, 1.0]), 1);
    let res = counterfactual_baseline(&req, &boundary_model(), &opts()).unwrap();
    assert_eq!(res.objective_value, Some(0.0));
    assert_eq!(res.point, Some(v(&[2.5, 1.0])));
}

#[test]
fn tree_without_target_leaf_is_infeasible() {
    let model = Classifier::Tree(TreeModel::constant(0, 2, 2));
    let req = CounterfactualRequest::new(v(&[0.0, 0.0]), 1);
    let res = counterfactual_baseline(&req, &model, &opts()).unwrap();
    assert_eq!(res.status, CounterfactualStatus::Infeasible);
    assert_eq!(res.subproblems.total, 0);
}

#[test]
fn symmetric_components_tie_to_the_first() {
    let cov = DMatrix::identity(2, 2) * 0.25;
    let gmm = ClassGmm::new(
        1,
        vec![
            GaussianComponent::new(0.5, v(&[3.0, 1.0]), cov.clone()).unwrap(),
            GaussianComponent::new(0.5, v(&[3.0, -1.0]), cov).unwrap(),
        ],
    )
    .unwrap();
    let delta = DensityThreshold::new(0.05).unwrap();
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1).with_delta(delta);
    let res = counterfactual_plausible(&req, &boundary_model(), &gmm, &opts()).unwrap();
    assert_eq!(res.component_index, Some(0), "{res:?}");
    assert_eq!(res.subproblems.optimal, 2);
    // every subproblem optimum is at least the selected one
    for j in 0..2 {
        let single = ClassGmm::new(1, vec![GaussianComponent::new(1.0, gmm.components[j].mean().clone(), gmm.components[j].covariance().clone()).unwrap()]).unwrap();
        let thr = DensityThreshold::from_delta_prime(
            delta.delta_prime() + 2.0 * gmm.components[j].weight().ln(),
        )
        .unwrap();
        let r = counterfactual_plausible(&req.clone().with_delta(thr), &boundary_model(), &single, &opts()).unwrap();
        assert!(r.objective_value.unwrap() >= res.objective_value.unwrap() - 1e-8);
    }
}

#[test]
fn audit_accepts_and_detects_tampering() {
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let model = boundary_model();
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1).with_delta(radius_one_delta());
    let res = counterfactual_plausible(&req, &model, &gmm, &opts()).unwrap();
    let kde = ClassKde::new(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 2.5, 0.5]), 0.5).unwrap();
    let a = audit(&res, &req, &model, Some(&gmm), Some(&kde)).unwrap();
    assert!(a.passed, "{a:?}");
    assert!(a.kde_log_density.unwrap().is_finite());
    let res = res.with_audit(a);
    assert!(res.kde_log_density.is_some());

    let mut moved = res.clone();
    moved.point = Some(v(&[-1.0, 0.0]));
    let a = audit(&moved, &req, &model, Some(&gmm), None).unwrap();
    assert!(!a.prediction_ok && !a.passed);

    let stricter = req.clone().with_delta(DensityThreshold::from_log(radius_one_delta().log_delta() + 0.1).unwrap());
    let a = audit(&res, &stricter, &model, Some(&gmm), None).unwrap();
    assert_eq!(a.density_ok, Some(false));
    assert!(!a.passed);
}

#[test]
fn euclidean_objective_lands_on_the_same_point() {
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1)
        .with_objective(ObjectiveSpec::euclidean(DVector::zeros(2)))
        .with_delta(radius_one_delta());
    let res = counterfactual_plausible(&req, &boundary_model(), &gmm, &opts()).unwrap();
    assert_relative_eq!(res.objective_value.unwrap(), 25.0, epsilon = 1e-5);
}

#[test]
fn projected_model_leaves_free_directions_alone() {
    // model and mixture see only the first two of three coordinates
    let map = AffineMap {
        projection: DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        center: DVector::zeros(3),
        reconstruction: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        scale: None,
        explained_variance: vec![1.0, 1.0],
    };
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0, 7.0]), 1)
        .with_delta(radius_one_delta())
        .with_pca(map);
    let res = counterfactual_plausible(&req, &boundary_model(), &gmm, &opts()).unwrap();
    assert_relative_eq!(res.objective_value.unwrap(), 5.0, epsilon = 1e-5);
    let p = res.point.clone().unwrap();
    assert_relative_eq!(p[2], 7.0, epsilon = 1e-6);
    assert!(audit(&res, &req, &boundary_model(), Some(&gmm), None).unwrap().passed);
}

#[test]
fn fitted_models_agree_on_separable_clusters() {
    let ds = two_clusters(40, 0.5, 3);
    let softmax = Classifier::Softmax(fit_softmax(&ds, &SoftmaxOptions::default()).unwrap().model);
    let tree = Classifier::Tree(fit_tree(&ds, &TreeOptions::default()).unwrap());
    let mut gmm = fit_gmm(&ds.class_points(1), &GmmOptions::default()).unwrap().gmm;
    gmm.class_id = 1;
    let delta = crate::density::median_threshold(&gmm, &ds.class_points(1)).unwrap();
    let req = CounterfactualRequest::new(v(&[-3.0, 0.2]), 1).with_delta(delta);
    let a = counterfactual_plausible(&req, &softmax, &gmm, &opts()).unwrap();
    let b = counterfactual_plausible(&req, &tree, &gmm, &opts()).unwrap();
    assert!(matches!(b.region_provenance, Some(RegionProvenance::Leaf(_))), "{b:?}");
    let (oa, ob) = (a.objective_value.unwrap(), b.objective_value.unwrap());
    assert!((oa - ob).abs() <= 0.05 * oa.max(ob), "{oa} vs {ob}");
    for (res, m) in [(&a, &softmax), (&b, &tree)] {
        assert!(audit(res, &req, m, Some(&gmm), None).unwrap().passed);
    }
}

#[test]
fn local_sufficiency_cases() {
    let ds = two_clusters(30, 0.5, 5);
    let metric = ObjectiveSpec::l1(DVector::zeros(2));
    let model = Classifier::Softmax(fit_softmax(&ds, &SoftmaxOptions::default()).unwrap().model);
    let x = v(&[-3.0, 0.0]);
    assert!(check_local_sufficiency(&model, None, &x, 0, &ds, 10, &metric).unwrap());
    assert!(!check_local_sufficiency(&model, None, &x, 1, &ds, 10, &metric).unwrap());
    let constant = Classifier::Tree(TreeModel::constant(0, 2, 2));
    // predicts x correctly but misclassifies the class-1 neighbours around (3, 0)
    assert!(!check_local_sufficiency(&constant, None, &v(&[3.0, 0.0]), 0, &ds, 5, &metric).unwrap());
    assert!(check_local_sufficiency(&model, None, &x, 0, &ds, 0, &metric).is_err());
}

#[test]
fn identical_models_have_no_spread() {
    let ds = two_clusters(25, 0.5, 9);
    let model = Classifier::Softmax(fit_softmax(&ds, &SoftmaxOptions::default()).unwrap().model);
    let mut gmms = Vec::new();
    let mut deltas = Vec::new();
    for c in 0..2 {
        let pts = ds.class_points(c);
        let mut g = fit_gmm(&pts, &GmmOptions::default()).unwrap().gmm;
        g.class_id = c;
        deltas.push(crate::density::median_threshold(&g, &pts).unwrap());
        gmms.push(g);
    }
    let metric = ObjectiveSpec::l1(DVector::zeros(2));
    let setup = IndependenceSetup {
        models: [&model, &model],
        pca: None,
        gmms: &gmms,
        deltas: &deltas,
        training: &ds,
        neighbors: 5,
        metric: &metric,
        options: opts(),
    };
    let samples: Vec<IndependenceSample> = (0..6)
        .map(|i| {
            let label = ds.labels()[i * 8];
            IndependenceSample { x: ds.sample(i * 8), label, target: 1 - label }
        })
        .collect();
    let report = model_independence_experiment(&setup, &samples).unwrap();
    assert!(!report.entries.is_empty());
    assert!(report.entries.iter().all(|e| e.abs_difference == 0.0));
    assert_eq!(report.median_relative_difference, Some(0.0));
    let empty = model_independence_experiment(&setup, &[]).unwrap();
    assert!(empty.entries.is_empty() && empty.median_abs_difference.is_none());
}

#[test]
fn plausible_never_beats_baseline() {
    let ds = two_clusters(40, 0.8, 11);
    let model = Classifier::Tree(fit_tree(&ds, &TreeOptions::default()).unwrap());
    let mut gmm = fit_gmm(&ds.class_points(1), &GmmOptions { components: 2, ..Default::default() }).unwrap().gmm;
    gmm.class_id = 1;
    let delta = crate::density::median_threshold(&gmm, &ds.class_points(1)).unwrap();
    for i in 0..ds.n_samples() {
        if ds.labels()[i] != 0 || i % 4 != 0 {
            continue;
        }
        let req = CounterfactualRequest::new(ds.sample(i), 1).with_delta(delta);
        let p = counterfactual_plausible(&req, &model, &gmm, &opts()).unwrap();
        let b = counterfactual_baseline(&req.without_delta(), &model, &opts()).unwrap();
        if let (Some(pv), Some(bv)) = (p.objective_value, b.objective_value) {
            assert!(pv >= bv - 1e-8);
            assert!(audit(&p, &req, &model, Some(&gmm), None).unwrap().passed);
        }
    }
}

#[test]
fn request_and_result_round_trip_through_json() {
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1).with_delta(radius_one_delta());
    let res = counterfactual_plausible(&req, &boundary_model(), &gmm, &opts()).unwrap();
    let text = serde_json::to_string(&res).unwrap();
    assert_eq!(serde_json::from_str::<CounterfactualResult>(&text).unwrap(), res);
    let text = serde_json::to_string(&req).unwrap();
    assert_eq!(serde_json::from_str::<CounterfactualRequest>(&text).unwrap(), req);
    let none = counterfactual_plausible(
        &req.clone().with_delta(DensityThreshold::new(0.5).unwrap()),
        &boundary_model(),
        &gmm,
        &opts(),
    )
    .unwrap();
    assert!(serde_json::to_string(&none).unwrap().contains("\"point\":null"));
}

#[test]
fn malformed_requests_are_rejected() {
    let gmm = unit_gmm(1, &[3.0, 0.0]);
    let model = boundary_model();
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1);
    assert!(counterfactual_plausible(&req, &model, &gmm, &opts()).is_err());
    assert!(counterfactual_baseline(&req.clone().with_delta(radius_one_delta()), &model, &opts()).is_err());
    assert!(counterfactual_baseline(&CounterfactualRequest::new(v(&[0.0, 0.0]), 5), &model, &opts()).is_err());
    assert!(counterfactual_baseline(&CounterfactualRequest::new(v(&[0.0, f64::NAN]), 1), &model, &opts()).is_err());
    assert!(counterfactual_baseline(&CounterfactualRequest::new(v(&[0.0, 0.0, 1.0]), 1), &model, &opts()).is_err());
    let wrong_class = unit_gmm(0, &[3.0, 0.0]);
    assert!(counterfactual_plausible(&req.with_delta(radius_one_delta()), &model, &wrong_class, &opts()).is_err());
}

#[test]
fn median_of_even_and_odd() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}


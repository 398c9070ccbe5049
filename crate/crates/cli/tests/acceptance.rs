//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plausicf_cli::experiment::OutcomeStatus;
use plausicf_cli::{run_experiment, write_outputs, ExperimentConfig, ModelKind};
use plausicf_core::classifiers::{
    fit_softmax, fit_tree, softmax_loss_and_gradient, Classifier, SoftmaxModel, SoftmaxOptions,
    TreeOptions,
};
use plausicf_core::datamodel::LabeledDataset;
use plausicf_core::density::{
    approx_log_density, component_constraint, fit_gmm, gmm_log_density, median_threshold, ClassGmm,
    DensityThreshold, GaussianComponent, GmmOptions,
};
use plausicf_core::engine::{
    counterfactual_baseline, counterfactual_plausible, model_independence_experiment,
    CounterfactualRequest, EngineOptions, IndependenceSample, IndependenceSetup,
};
use plausicf_core::solver::{brute_force_oracle, solve, ConvexProgram, ObjectiveSpec, SolveStatus, SolverSettings};
use plausicf_core::{LinearInequality, QuadraticInequality};

type Check = Result<String, String>;

fn config(name: &str, out: &std::path::Path) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    let mut cfg = ExperimentConfig::from_json_file(&path).expect("config loads");
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_vec(x.to_vec())
}

fn random_spd<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(d, d) * rng.random_range(0.05..1.0)
}

fn random_gmm<R: Rng>(rng: &mut R, d: usize, m: usize) -> ClassGmm {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = raw
        .iter()
        .map(|w| {
            let mean = DVector::from_fn(d, |_, _| 2.0 * normal(rng));
            GaussianComponent::new(w / total, mean, random_spd(rng, d)).unwrap()
        })
        .collect();
    ClassGmm::new(0, comps).unwrap()
}

/// `log(pi N(x | mu, Sigma))` straight from the textbook formula.
fn direct_log_weighted_density(weight: f64, mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let d = mean.len() as f64;
    let diff = x - mean;
    let inv = cov.clone().try_inverse().unwrap();
    let maha = diff.dot(&(&inv * &diff));
    weight.ln() - 0.5 * (d * std::f64::consts::TAU.ln() + cov.determinant().ln() + maha)
}

fn two_clusters(n: usize, spread: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let cx = if class == 0 { -3.0 } else { 3.0 };
        for _ in 0..n {
            rows.extend([cx + spread * normal(&mut rng), spread * normal(&mut rng)]);
            labels.push(class);
        }
    }
    LabeledDataset::new(DMatrix::from_row_slice(2 * n, 2, &rows), labels, vec!["a".into(), "b".into()]).unwrap()
}

fn table_sign_pattern(out: &std::path::Path, audits: &mut Vec<String>) -> Check {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for name in ["iris", "wine", "breast_cancer"] {
        let start = Instant::now();
        for model in [ModelKind::Softmax, ModelKind::Tree] {
            let mut cfg = config(name, out);
            cfg.model = model;
            let outcome = run_experiment(&cfg).map_err(|e| format!("{name}/{}: {e}", model.name()))?;
            for row in &outcome.table.rows {
                if row.scope == "pooled" && !row.has_expected_ordering() {
                    failures.push(format!(
                        "{name}/{}: density {:?}->{:?}, distance {:?}->{:?}",
                        model.name(),
                        row.density_without,
                        row.density_with,
                        row.distance_without,
                        row.distance_with
                    ));
                }
            }
            let found: Vec<_> = outcome
                .samples
                .iter()
                .filter(|s| s.plausible.status == OutcomeStatus::Found)
                .collect();
            let bad = found.iter().filter(|s| !s.plausible.audit_passed).count();
            audits.push(format!("{name}/{}: {}/{} passed", model.name(), found.len() - bad, found.len()));
            if bad > 0 || found.is_empty() {
                audits.push(format!("FAILED {name}/{}", model.name()));
            }
        }
        notes.push(format!("{name} {:.1}s", start.elapsed().as_secs_f64()));
    }
    if failures.is_empty() {
        Ok(format!("6 pooled rows ordered ({})", notes.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

fn guarantee_audit(audits: &[String]) -> Check {
    if audits.is_empty() {
        return Err("no experiment ran".into());
    }
    let summary = audits.iter().filter(|a| !a.starts_with("FAILED")).cloned().collect::<Vec<_>>().join(", ");
    if audits.iter().any(|a| a.starts_with("FAILED")) {
        Err(summary)
    } else {
        Ok(summary)
    }
}

fn bound_property() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let trials = 1500;
    for t in 0..trials {
        let d = rng.random_range(1..=5);
        let m = rng.random_range(1..=4);
        let gmm = random_gmm(&mut rng, d, m);
        let x = DVector::from_fn(d, |_, _| 3.0 * normal(&mut rng));
        let log_p = gmm_log_density(&gmm, &x).unwrap();
        let (log_hat, j) = approx_log_density(&gmm, &x).unwrap();
        let c = &gmm.components[j];
        let direct = direct_log_weighted_density(c.weight(), c.mean(), c.covariance(), &x);
        if (direct - log_hat).abs() > 1e-9 * direct.abs().max(1.0) {
            return Err(format!("trial {t}: component density {log_hat} vs direct {direct}"));
        }
        let slack = 1e-9;
        if log_hat > log_p + slack || log_p > (m as f64).ln() + log_hat + slack {
            return Err(format!("trial {t}: p_hat {log_hat}, p {log_p}, m {m}"));
        }
    }
    Ok(format!("{trials} pairs, 0 violations"))
}

fn constraint_rewriting() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut used = 0;
    let mut attempts = 0;
    while used < 1200 {
        attempts += 1;
        if attempts > 100_000 {
            return Err(format!("only {used} usable trials"));
        }
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let gmm = random_gmm(&mut rng, d, m);
        let j = rng.random_range(0..gmm.n_components());
        let c = &gmm.components[j];
        let x = c.mean() + DVector::from_fn(d, |_, _| 1.5 * normal(&mut rng));
        let log_weighted = direct_log_weighted_density(c.weight(), c.mean(), c.covariance(), &x);
        let log_delta = log_weighted + rng.random_range(-3.0..3.0);
        let thr = DensityThreshold::from_log(log_delta).unwrap();
        let margin = log_weighted - log_delta;
        if margin.abs() < 1e-12 {
            continue;
        }
        let q = component_constraint(c, &thr);
        let quad_ok = q.value(&x) <= 0.0;
        if quad_ok != (margin >= 0.0) {
            return Err(format!("disagreement: density margin {margin}, quadratic value {}", q.value(&x)));
        }
        used += 1;
    }
    Ok(format!("{used} trials, 0 disagreements"))
}

fn random_program(rng: &mut ChaCha8Rng) -> (ConvexProgram, DVector<f64>) {
    let anchor = v(&[rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]);
    let inner = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
    let weights = vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
    let linear = (0..rng.random_range(0..=4))
        .map(|_| {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let a = v(&[t.cos(), t.sin()]);
            let b = a.dot(&inner) + rng.random_range(0.2..1.0);
            LinearInequality::new(a, b)
        })
        .collect();
    let quadratic = rng.random_bool(0.6).then(|| {
        let a = random_spd(rng, 2);
        let centre = &inner + v(&[0.3 * normal(rng), 0.3 * normal(rng)]);
        let diff = &inner - &centre;
        let r2 = diff.dot(&(&a * &diff)) + rng.random_range(0.3..2.0);
        let ac = &a * &centre;
        let constant = centre.dot(&ac) - r2;
        QuadraticInequality::new(a, ac * -2.0, constant)
    });
    let objective = ObjectiveSpec::weighted_l1(anchor, weights).unwrap();
    (ConvexProgram::new(objective, linear, quadratic).unwrap(), inner)
}

fn solver_vs_oracle() -> Check {
    let settings = SolverSettings::default();
    let disk = || Some(QuadraticInequality::new(DMatrix::identity(2, 2), DVector::zeros(2), -1.0));
    let p1 = ConvexProgram::new(ObjectiveSpec::l1(v(&[3.0, 0.0])), vec![], disk()).unwrap();
    let s1 = solve(&p1, &settings);
    if s1.status != SolveStatus::Optimal || (s1.objective_value - 2.0).abs() > 1e-6 {
        return Err(format!("(3,0) onto unit disk gave {:?} {}", s1.status, s1.objective_value));
    }
    let p2 = ConvexProgram::new(ObjectiveSpec::l1(v(&[2.0, 2.0])), vec![], disk()).unwrap();
    let s2 = solve(&p2, &settings);
    if s2.status != SolveStatus::Optimal || (s2.objective_value - (4.0 - 2f64.sqrt())).abs() > 1e-3 {
        return Err(format!("(2,2) onto unit disk gave {:?} {}", s2.status, s2.objective_value));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 120;
    let resolution = 400;
    let mut worst: f64 = 0.0;
    for t in 0..n {
        let (program, inner) = random_program(&mut rng);
        let radius = program.objective.value(&inner) / 0.5 + 0.5;
        let anchor = program.objective.anchor();
        let lower = [anchor[0] - radius, anchor[1] - radius];
        let upper = [anchor[0] + radius, anchor[1] + radius];
        let sol = solve(&program, &settings);
        let oracle = brute_force_oracle(&program, &lower, &upper, resolution)
            .unwrap()
            .ok_or_else(|| format!("program {t}: oracle found no feasible grid point"))?;
        if sol.status != SolveStatus::Optimal {
            return Err(format!("program {t}: solver status {:?}", sol.status));
        }
        let ObjectiveSpec::WeightedL1 { weights, .. } = &program.objective else { unreachable!() };
        let step = 2.0 * radius / resolution as f64;
        let tol = 2.0 * step * weights.iter().sum::<f64>();
        let gap = oracle.value - sol.objective_value;
        if gap < -1e-6 || gap > tol {
            return Err(format!("program {t}: solver {} vs oracle {}", sol.objective_value, oracle.value));
        }
        worst = worst.max(gap / tol);
    }
    Ok(format!("canonical cases exact, {n} random programs within tolerance (worst {:.0}% of it)", 100.0 * worst))
}

fn em_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for set in 0..20 {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(40..120);
        let centres = rng.random_range(1..=3);
        let means: Vec<DVector<f64>> = (0..centres).map(|_| DVector::from_fn(d, |_, _| 4.0 * normal(&mut rng))).collect();
        let points = DMatrix::from_fn(n, d, |i, k| means[i % centres][k] + normal(&mut rng));
        for m in 1..=3 {
            let opts = GmmOptions { components: m, seed: set as u64, restarts: 1, ..GmmOptions::default() };
            let fit = fit_gmm(&points, &opts).map_err(|e| format!("dataset {set}, m={m}: {e}"))?;
            for w in fit.log_likelihood_trace.windows(2) {
                let step = w[1] - w[0];
                worst = worst.min(step);
                if step < -1e-8 {
                    return Err(format!("dataset {set}, m={m}: log-likelihood fell by {}", -step));
                }
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} runs, largest decrease {:.1e}", -worst))
}

fn boundary_model() -> Classifier {
    Classifier::Softmax(SoftmaxModel {
        weights: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]),
        biases: DVector::zeros(2),
    })
}

fn vacuous_limit() -> Check {
    let model = boundary_model();
    let comp = GaussianComponent::new(1.0, v(&[3.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
    let gmm = ClassGmm::new(1, vec![comp]).unwrap();
    let opts = EngineOptions::default();
    let req = CounterfactualRequest::new(v(&[-3.0, 0.0]), 1);
    let base = counterfactual_baseline(&req, &model, &opts).map_err(|e| e.to_string())?;
    let base_point = base.point.clone().ok_or("baseline not found")?;
    let c = &gmm.components[0];
    let active = [&req.x, &base_point]
        .iter()
        .map(|p| c.mahalanobis_sq(p) + c.constraint_constant())
        .fold(f64::NEG_INFINITY, f64::max);
    let thr = DensityThreshold::from_delta_prime(active + 1e6).map_err(|e| e.to_string())?;
    let plaus = counterfactual_plausible(&req.clone().with_delta(thr), &model, &gmm, &opts).map_err(|e| e.to_string())?;
    let (a, b) = (base.objective_value.unwrap(), plaus.objective_value.ok_or("plausible not found")?);
    if (a - b).abs() <= 1e-4 {
        Ok(format!("baseline {a:.6}, plausible {b:.6}"))
    } else {
        Err(format!("baseline {a}, plausible {b}"))
    }
}

fn model_independence() -> Check {
    let ds = two_clusters(60, 0.5, 21);
    let softmax = Classifier::Softmax(fit_softmax(&ds, &SoftmaxOptions::default()).map_err(|e| e.to_string())?.model);
    let tree = Classifier::Tree(fit_tree(&ds, &TreeOptions::default()).map_err(|e| e.to_string())?);
    let mut gmms = Vec::new();
    let mut deltas = Vec::new();
    for c in 0..2 {
        let pts = ds.class_points(c);
        let mut g = fit_gmm(&pts, &GmmOptions::default()).map_err(|e| e.to_string())?.gmm;
        g.class_id = c;
        deltas.push(median_threshold(&g, &pts).map_err(|e| e.to_string())?);
        gmms.push(g);
    }
    let metric = ObjectiveSpec::l1(DVector::zeros(2));
    let setup = IndependenceSetup {
        models: [&softmax, &tree],
        pca: None,
        gmms: &gmms,
        deltas: &deltas,
        training: &ds,
        neighbors: 5,
        metric: &metric,
        options: EngineOptions::default(),
    };
    let samples: Vec<IndependenceSample> = (0..ds.n_samples())
        .step_by(6)
        .map(|i| {
            let label = ds.labels()[i];
            IndependenceSample { x: ds.sample(i), label, target: 1 - label }
        })
        .collect();
    let report = model_independence_experiment(&setup, &samples).map_err(|e| e.to_string())?;
    if !report.not_sufficient.is_empty() || !report.unexplained.is_empty() {
        return Err(format!(
            "{} samples not locally sufficient, {} unexplained",
            report.not_sufficient.len(),
            report.unexplained.len()
        ));
    }
    let med = report.median_relative_difference.ok_or("no comparable samples")?;
    let summary = format!("{} samples, median relative difference {:.2e}", report.entries.len(), med);
    if med <= 0.05 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for t in 0..10 {
        let k = rng.random_range(2..=4);
        let d = rng.random_range(1..=5);
        let n = rng.random_range(5..30);
        let features = DMatrix::from_fn(n, d, |_, _| normal(&mut rng));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let model = SoftmaxModel {
            weights: DMatrix::from_fn(k, d, |_, _| normal(&mut rng)),
            biases: DVector::from_fn(k, |_, _| normal(&mut rng)),
        };
        let l2 = rng.random_range(0.0..0.1);
        let (_, gw, gb) = softmax_loss_and_gradient(&model, &features, &labels, l2);
        let h = 1e-5;
        let loss_at = |m: &SoftmaxModel| softmax_loss_and_gradient(m, &features, &labels, l2).0;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for idx in 0..k * d + k {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            if idx < k * d {
                let (r, c) = (idx / d, idx % d);
                plus.weights[(r, c)] += h;
                minus.weights[(r, c)] -= h;
                analytic.push(gw[(r, c)]);
            } else {
                plus.biases[idx - k * d] += h;
                minus.biases[idx - k * d] -= h;
                analytic.push(gb[idx - k * d]);
            }
            numeric.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
        }
        let (a, f) = (DVector::from_vec(analytic), DVector::from_vec(numeric));
        let rel = (&a - &f).norm() / a.norm().max(f.norm()).max(1e-12);
        worst = worst.max(rel);
        if rel > 1e-5 {
            return Err(format!("instance {t}: relative error {rel:.2e}"));
        }
    }
    Ok(format!("10 instances, worst relative error {worst:.1e}"))
}

fn determinism(out: &std::path::Path) -> Check {
    let mut csvs = Vec::new();
    for run in 0..2 {
        let cfg = config("iris", &out.join(format!("run{run}")));
        let outcome = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let files = write_outputs(&cfg, &outcome).map_err(|e| e.to_string())?;
        let csv = files
            .iter()
            .find(|p| p.extension().is_some_and(|e| e == "csv"))
            .ok_or("no CSV written")?;
        csvs.push(std::fs::read(csv).map_err(|e| e.to_string())?);
    }
    if csvs[0] == csvs[1] {
        Ok(format!("{} identical bytes", csvs[0].len()))
    } else {
        Err("CSV output differs between runs".into())
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut audits = Vec::new();
    let table = table_sign_pattern(tmp.path(), &mut audits);
    let results: Vec<(&str, Check)> = vec![
        ("table sign pattern", table),
        ("guarantee audit", guarantee_audit(&audits)),
        ("bound property", bound_property()),
        ("constraint rewriting", constraint_rewriting()),
        ("solver vs oracle", solver_vs_oracle()),
        ("EM monotonicity", em_monotonicity()),
        ("vacuous threshold limit", vacuous_limit()),
        ("model independence", model_independence()),
        ("softmax gradient", gradient_check()),
        ("determinism", determinism(tmp.path())),
    ];
    let mut failed = 0;
    for (i, (name, res)) in results.iter().enumerate() {
        match res {
            Ok(msg) => println!("PASS {:>2} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use approx::assert_relative_eq;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use msda::analysis::{jacobi_eigen, pca_project, svg, Split};
use msda::data::synthetic::{generate, SyntheticSpec};
use msda::data::{load_canonical, write_canonical};
use msda::run::{cmd_train, load_model, RunConfig};
use msda::training::{train, Trained};

fn symmetric(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| {
        (0..n)
            .map(|i| (0..n).map(|j| (v[i * n + j] + v[j * n + i]) / 2.0).collect())
            .collect()
    })
}

fn oracle(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let e = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| e.eigenvectors[(r, order[c])]);
    (values, vectors)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobi_matches_nalgebra(rows in (2usize..7).prop_flat_map(symmetric)) {
        let ours = jacobi_eigen(&rows).unwrap();
        let (values, _) = oracle(&rows);
        for (a, b) in ours.values.iter().zip(&values) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // A v = lambda v and unit length
        for (lambda, v) in ours.values.iter().zip(&ours.vectors) {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
            for (row, vi) in rows.iter().zip(v) {
                let av: f64 = row.iter().zip(v).map(|(a, x)| a * x).sum();
                prop_assert!((av - lambda * vi).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn projection_agrees_with_a_reference_pca() {
    let reps: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let t = i as f64 / 4.0;
            vec![3.0 * t, t + (i % 3) as f64, 0.5 * (i % 5) as f64, -t]
        })
        .collect();
    let splits: Vec<Split> = (0..40)
        .map(|i| if i % 2 == 0 { Split::InDomain } else { Split::OutOfDomain })
        .collect();
    let p = pca_project(&reps, &splits, 100, 0).unwrap();
    assert_eq!(p.indices.len(), 40);

    let n = reps.len();
    let x = DMatrix::from_fn(n, 4, |i, j| reps[p.indices[i]][j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, 4, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| cov[(i, j)]).collect()).collect();
    let (values, vectors) = oracle(&rows);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    for k in 0..2 {
        assert_relative_eq!(p.explained_variance[k], values[k] / total, epsilon = 1e-9);
        let reference = &centred * vectors.column(k);
        let sign = if reference.dot(&DMatrix::from_fn(n, 1, |i, _| p.coordinates[i][k])) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            assert_relative_eq!(p.coordinates[i][k], sign * reference[i], epsilon = 1e-8);
        }
    }
}

fn metadata(svg: &str) -> serde_json::Value {
    let a = svg.find("<metadata>").unwrap() + "<metadata>".len();
    let b = svg.find("</metadata>").unwrap();
    let raw = svg[a..b]
        .replace("&quot;", "\"")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&");
    serde_json::from_str(&raw).unwrap()
}

#[test]
fn svg_embeds_its_data() {
    let names = vec!["books".to_string(), "<dvd & co>".to_string()];
    let values = vec![vec![1.0, -0.25], vec![-0.25, 1.0]];
    let out = svg::heatmap("alpha \"run\"", &names, &values).unwrap();
    assert!(out.trim_end().ends_with("</svg>"));
    assert!(!out.contains("<dvd"));
    let meta = metadata(&out);
    assert_eq!(meta["names"][1], "<dvd & co>");
    assert_eq!(meta["values"][0][1], -0.25);

    let reps: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let splits = vec![Split::InDomain, Split::OutOfDomain, Split::InDomain, Split::OutOfDomain, Split::InDomain, Split::OutOfDomain];
    let p = pca_project(&reps, &splits, 10, 0).unwrap();
    let out = svg::scatter("scatter", &p).unwrap();
    assert_eq!(out.matches(r#"r="2.5""#).count(), 6);
    let meta = metadata(&out);
    assert_eq!(meta["coordinates"].as_array().unwrap().len(), 6);
    assert_eq!(meta["splits"][2], "in-domain");
    assert_eq!(meta["splits"][3], "out-of-domain");
}

#[test]
fn reloaded_checkpoint_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::new(&["books", "dvd", "kitchen"], 30, 5);
    spec.min_fillers = 2;
    spec.max_fillers = 5;
    write_canonical(&generate(&spec).unwrap(), &dir.path().join("data")).unwrap();
    let cfg_path = dir.path().join("c.json");
    std::fs::write(
        &cfg_path,
        r#"{"dataset": "data", "variant": "MoE-Att-Adv-1", "held_out": "kitchen",
            "encoder": {"backbone": "toy-transformer", "dim": 8, "num_layers": 1, "vocab_hash_size": 64, "max_len": 12, "seed": 3},
            "train": {"learning_rate": 0.005, "epochs": 1, "warmup_steps": 2, "batch_size": 8}}"#,
    )
    .unwrap();
    let run = cmd_train(&cfg_path, Some(&dir.path().join("run"))).unwrap();
    assert!(run.join("adversarial.bin").is_file());
    let (_, loaded) = load_model(&run).unwrap();

    let cfg = RunConfig::load(&cfg_path).unwrap();
    let bundle = load_canonical(&cfg.dataset).unwrap().hold_out(cfg.held_out.as_ref().unwrap()).unwrap();
    let fresh: Trained<msda::Real> = train(cfg.variant, &bundle.training_view(), &cfg.settings()).unwrap();
    let mut checked = 0;
    for ex in bundle.target_test() {
        let a = loaded.predict(&ex.text);
        let b = fresh.model.predict(&ex.text);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.prob.to_bits(), b.prob.to_bits());
                assert_eq!(a.weights, b.weights);
                checked += 1;
            }
            (Err(_), Err(_)) => {}
            _ => panic!("loaded and fresh models disagree on {}", ex.id),
        }
    }
    assert!(checked > 0);
}

use msda::data::synthetic::{generate, SyntheticSpec};
use msda::evaluation::{loo_run, render_table, LooOptions, Metric};
use msda::training::Settings;
use msda::{Backbone, EncoderConfig, Error, TrainConfig, Variant};

fn settings(metric: Metric) -> Settings {
    Settings {
        encoder: EncoderConfig {
            backbone: Backbone::ToyCnn,
            dim: 8,
            num_layers: 1,
            vocab_hash_size: 64,
            max_len: 12,
            ..Default::default()
        },
        train: TrainConfig {
            learning_rate: 5e-3,
            warmup_steps: 2,
            epochs: 1,
            batch_size: 8,
            metric,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn bundle(domains: &[&str]) -> msda::DatasetBundle {
    let mut spec = SyntheticSpec::new(domains, 20, 9);
    spec.min_fillers = 2;
    spec.max_fillers = 4;
    generate(&spec).unwrap()
}

#[test]
fn parallel_and_serial_sweeps_agree() {
    let b = bundle(&["books", "dvd", "kitchen", "electronics"]);
    let s = settings(Metric::F1);
    let opts = |jobs| LooOptions {
        seeds: vec![4, 5],
        jobs,
        held_out: None,
    };
    let serial = loo_run::<f64>(Variant::MoeAtt, &b, &s, &opts(1)).unwrap();
    let parallel = loo_run::<f64>(Variant::MoeAtt, &b, &s, &opts(3)).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(render_table(std::slice::from_ref(&serial)), render_table(&[parallel]));

    let held: Vec<String> = serial.reports.iter().map(|r| r.held_out_domain.to_string()).collect();
    assert_eq!(held.len(), 4);
    assert_eq!(serial.aggregate_name, "μF1");
    for r in &serial.reports {
        assert_eq!(r.seeds.iter().map(|x| x.seed).collect::<Vec<_>>(), vec![4, 5]);
        let w = r.seeds[0].mixing_weights.as_ref().unwrap();
        assert_eq!(w.len(), 4);
        assert!((w.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(serial.aggregate, serial.recompute_aggregate());
}

#[test]
fn restricted_sweep_and_domain_checks() {
    let b = bundle(&["books", "dvd", "kitchen"]);
    let s = settings(Metric::Accuracy);
    let only = LooOptions {
        seeds: vec![0],
        jobs: 1,
        held_out: Some(vec![msda::DomainId::new("dvd").unwrap()]),
    };
    let r = loo_run::<f32>(Variant::Basic, &b, &s, &only).unwrap();
    assert_eq!(r.reports.len(), 1);
    assert_eq!(r.aggregate, r.reports[0].score);
    assert!(r.reports[0].seeds[0].mixing_weights.is_none());

    let bad = LooOptions {
        held_out: Some(vec![msda::DomainId::new("toys").unwrap()]),
        ..only.clone()
    };
    assert!(matches!(loo_run::<f32>(Variant::Basic, &b, &s, &bad), Err(Error::Config(_))));
    let none = LooOptions { seeds: vec![], ..only };
    assert!(loo_run::<f32>(Variant::Basic, &b, &s, &none).is_err());

    let two = bundle(&["books", "dvd"]);
    let e = loo_run::<f32>(Variant::Basic, &two, &s, &LooOptions::default()).unwrap_err();
    assert!(matches!(e, Error::Validation(_)));
}

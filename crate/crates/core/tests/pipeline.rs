// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::sync::Arc;

use common::*;
use east::analysis::{self, Stopwords};
use east::backend::remote::RemoteBackend;
use east::backend::scripted::{ScriptedBackend, ScriptedConfig};
use east::backend::server::ReferenceServer;
use east::backend::toy::{ToyConfig, ToyTransformer};
use east::runner::{self, RunLog, Termination};
use east::{Backend, Error, Prompt, SamplingParams, ScenarioKind, SteeringSpec, Transcript};

fn small_toy() -> ToyTransformer {
    ToyTransformer::new(ToyConfig {
        n_layers: 4,
        d_model: 16,
        n_heads: 2,
        context: 256,
        reserve: 48,
        seed: 3,
    })
    .unwrap()
}

fn scripted_logs(k: usize, horizon: u32) -> Vec<RunLog> {
    let b = committing_scripted(Vec::new());
    runner::run_many(&b, &buttons_options(horizon, 6), 17, 0, k)
        .unwrap()
        .into_iter()
        .map(|r| r.log)
        .collect()
}

#[test]
fn toy_dataset_from_two_short_runs() {
    let toy = small_toy();
    // The untrained toy model emits byte soup, so its own runs stop at the
    // first step and are recorded as excluded.
    let own = runner::run_many(&toy, &buttons_options(3, 4).with_capture(2), 0, 0, 2).unwrap();
    assert!(own
        .iter()
        .all(|r| r.log.steps.is_empty() && matches!(r.log.termination, Termination::AllInvalid { t: 1, .. })));
    let pairs: Vec<_> = own.iter().map(|r| (r.log.clone(), r.activations.clone().unwrap())).collect();
    assert!(matches!(runner::dataset_from_runs(&pairs), Err(Error::EmptyDataset)));

    // Toy activations along two scripted runs of three steps.
    let logs = scripted_logs(2, 3);
    let ds = runner::recapture_dataset(&toy, &logs, 2).unwrap();
    assert_eq!(ds.runs.len(), 2);
    assert!(ds.n_samples() <= 6);
    assert_eq!(ds.dim(), 16);
    let again = runner::recapture_dataset(&toy, &scripted_logs(2, 3), 2).unwrap();
    assert_eq!(ds.content_hash(), again.content_hash());
    let other_layer = runner::recapture_dataset(&toy, &logs, 1).unwrap();
    assert_ne!(ds.content_hash(), other_layer.content_hash());
}

#[test]
fn collected_dataset_hash_is_reproducible() {
    let b = committing_scripted(Vec::new());
    let (a, _) = runner::collect_dataset(&b, &buttons_options(5, 6), 3, 2, 9).unwrap();
    let (c, _) = runner::collect_dataset(&b, &buttons_options(5, 6), 3, 2, 9).unwrap();
    let (d, _) = runner::collect_dataset(&b, &buttons_options(5, 6), 3, 2, 10).unwrap();
    assert_eq!(a.content_hash(), c.content_hash());
    assert_ne!(a.content_hash(), d.content_hash());
}

#[test]
fn entropy_curve_from_constructed_logs() {
    let mut logs = scripted_logs(2, 4);
    // Two runs with entropies {0, ln 2} at every step.
    for (k, log) in logs.iter_mut().enumerate() {
        for s in &mut log.steps {
            s.entropy_nats = if k == 0 { 0.0 } else { std::f64::consts::LN_2 };
        }
    }
    let curve = analysis::entropy_over_time(&logs, 200, 1).unwrap();
    assert_eq!(curve.len(), 4);
    for p in &curve {
        assert!((p.mean - 0.3466).abs() < 1e-4);
        assert!(p.ci_low <= p.mean && p.mean <= p.ci_high);
        assert_eq!(p.n_runs, 2);
    }

    // Identical runs with a decreasing entropy profile.
    let profile = [0.69, 0.5, 0.2, 0.05];
    let mut logs = scripted_logs(3, 4);
    for log in &mut logs {
        for (s, h) in log.steps.iter_mut().zip(profile) {
            s.entropy_nats = h;
        }
    }
    let curve = analysis::entropy_over_time(&logs, 200, 2).unwrap();
    for (p, h) in curve.iter().zip(profile) {
        assert!((p.mean - h).abs() < 1e-12);
        assert!((p.ci_high - p.ci_low).abs() < 1e-12);
    }
    assert!(curve.windows(2).all(|w| w[0].mean > w[1].mean));
}

#[test]
fn balanced_trace_stays_near_one_half() {
    let b = ScriptedBackend::new(ScriptedConfig::default()).unwrap();
    let prompt = Prompt::from_transcript(&Transcript::new(ScenarioKind::Buttons, 50));
    let s = 20;
    let points = runner::action_probability_trace(
        &b,
        &prompt,
        &SamplingParams::new(1.0, 128, 0),
        None,
        s,
        0,
        ScenarioKind::Buttons,
        2,
        4,
    )
    .unwrap();
    let se = (0.25 / s as f64).sqrt();
    let mut prefix = String::new();
    let mut open = Vec::new();
    for p in &points {
        prefix.push_str(&p.token);
        // Once the chosen digit is generated the outcome is decided.
        if prefix.contains("Action: I choose Button 1") || prefix.contains("Action: I choose Button 2") {
            let q = p.probability.unwrap();
            assert!(q == 0.0 || q == 1.0);
            continue;
        }
        let q = p.probability.unwrap();
        assert!((q - 0.5).abs() <= 4.0 * se, "{q} after {prefix:?}");
        open.push(q);
    }
    // Points use independent seeds, so their mean has a tighter bound.
    assert!(open.len() >= 5);
    let mean = open.iter().sum::<f64>() / open.len() as f64;
    assert!((mean - 0.5).abs() <= 3.0 * se / (open.len() as f64).sqrt(), "{mean}");
}

#[test]
fn toy_validity_vanishes_as_temperature_grows() {
    let toy = small_toy();
    let mut opts = buttons_options(3, 4);
    opts.params = SamplingParams::new(1.0, 48, 0);
    let results = runner::temperature_sweep(&toy, &opts, &[1.0, 4.0, 16.0], 20, 5).unwrap();
    let rates: Vec<f64> = results.iter().map(|r| r.validity_rate()).collect();
    assert!(rates.windows(2).all(|w| w[0] >= w[1]), "{rates:?}");
    assert_eq!(*rates.last().unwrap(), 0.0);
    assert!(results.iter().all(|r| r.runs.len() == 20));
}

#[test]
fn symmetric_corpora_give_unit_ratios() {
    let corpus = ["explore the buttons", "exploit exploit", "explore again and again"];
    let r = analysis::word_frequency_report(&corpus, &corpus, &Stopwords::bundled()).unwrap();
    assert!(!r.words.is_empty());
    for w in &r.words {
        assert_eq!(w.ratio_a_over_b, 1.0, "{}", w.word);
        assert_eq!(w.ratio_b_over_a, 1.0, "{}", w.word);
    }
}

#[test]
fn remote_errors_keep_their_kind() {
    let server = ReferenceServer::spawn(Arc::new(small_toy()), "127.0.0.1:0".parse().unwrap()).unwrap();
    let remote = RemoteBackend::connect(&server.url()).unwrap();
    let p = user_prompt("hello");
    assert!(matches!(
        remote.capture_prompt_activation(&p, 9),
        Err(Error::LayerRange { layer: 9, .. }) | Err(Error::Remote { .. })
    ));
    let bad = SteeringSpec::new(1, 1.0, vec![0.5; 3]);
    let r = remote.generate(&p, &SamplingParams::new(1.0, 4, 0), Some(&bad));
    assert!(matches!(r, Err(Error::DimMismatch { .. }) | Err(Error::Remote { .. })), "{r:?}");
    assert!(RemoteBackend::connect("http://127.0.0.1:1").is_err());
}

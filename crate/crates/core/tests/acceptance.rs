//! Acceptance suite: one PASS/FAIL/SKIPPED line per criterion.
//!
//! The desk-scale training experiment (criterion 5) takes hours on a single
//! core and only runs when `DAMR_ACCEPTANCE_FULL=1` is set.

mod common;

use std::time::Instant;

use damr::channel::{apply_channel_traced, draw_states, ChannelConfig, MultiRxObservation};
use damr::dataset::{self, Dataset, DatasetError, GenerateParams, SplitSpec};
use damr::experiment;
use damr::metrics::Comparison;
use damr::models::{self, ModelKind};
use damr::modulation::{generate_frame, ModulationType, ShapingConfig};
use damr::nn::{self, Network, NnError, TrainConfig};
use damr::protocols::{bandwidth_bits, damr_v_fuse, Method, ProbVector, VoteWeights};
use damr::seed;
use damr::simnet::{self, run_episode, Artifacts};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn observations(n: u64, seed: u64) -> Vec<MultiRxObservation> {
    let p = GenerateParams {
        n_records: n,
        n_rx: 6,
        channel: ChannelConfig::default(),
        shaping: ShapingConfig::default(),
        seed,
    };
    let labels = dataset::label_schedule(n, seed);
    (0..n)
        .map(|k| dataset::generate_observation(&p, k, labels[k as usize]).unwrap())
        .collect()
}

/// Freshly initialized models: sizes and timing do not depend on training.
fn untrained_artifacts() -> Artifacts {
    let build = |kind, n_rx, s| Network::new(models::build(kind, n_rx).unwrap(), s).unwrap();
    Artifacts {
        receivers: (0..6).map(|s| build(ModelKind::Vtcnn2, 1, s)).collect(),
        cent: Some(build(ModelKind::Vtcnn2Cent, 6, 10)),
        head_f8: Some(build(ModelKind::FusionHeadF8, 6, 11)),
        head_f256: Some(build(ModelKind::FusionHeadF256, 6, 12)),
    }
}

fn bandwidth(art: &Artifacts) -> Outcome {
    let expected = [
        (Method::CentAmr, 65_536),
        (Method::DamrV, 256),
        (Method::DamrF8, 256),
        (Method::DamrF256, 8_192),
    ];
    for (m, bits) in expected {
        check(bandwidth_bits(m) == bits, || format!("{m}: {} bits", bandwidth_bits(m)))?;
    }
    let obs = observations(100, 1);
    for m in Method::NETWORKED {
        for (k, o) in obs.iter().enumerate() {
            let (_, log) = run_episode(m, o, art).map_err(|e| e.to_string())?;
            for rx in 0..6u8 {
                let got = log.receiver_uplink_bits(rx);
                check(got == bandwidth_bits(m), || format!("{m} episode {k} rx{rx}: {got} bits"))?;
            }
        }
    }
    Ok("65536/256/256/8192 bits per receiver; 400 episodes match".into())
}

fn architecture() -> Outcome {
    let count = |kind, n_rx| models::build(kind, n_rx).unwrap().param_count();
    let backbone = count(ModelKind::Vtcnn2, 1);
    check(backbone == 20_875_352, || format!("VTCNN2 has {backbone} parameters"))?;
    let first_width = |kind| match models::build(kind, 6).unwrap().layers[0] {
        nn::LayerSpec::Dense { in_features, .. } => in_features,
        ref other => panic!("head starts with {other}"),
    };
    let (f8, f256) = (first_width(ModelKind::FusionHeadF8), first_width(ModelKind::FusionHeadF256));
    check(f8 == 48 && f256 == 1536, || format!("head input widths {f8}/{f256}"))?;
    Ok(format!("{backbone} backbone parameters, head inputs {f8}/{f256}"))
}

fn gradients() -> Outcome {
    let r = common::gradient_check(20);
    check(r.worst <= 1e-3, || format!("max relative error {:.3e}", r.worst))?;
    Ok(format!(
        "20 networks, {} parameters ({} skipped at ReLU kinks), max relative error {:.2e}",
        r.checked, r.skipped, r.worst
    ))
}

fn fusion() -> Outcome {
    let mut rng = seed::rng(0xF0_5E);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n_rx = case % 6 + 1;
        let probs: Vec<ProbVector> = (0..n_rx)
            .map(|_| {
                let raw: Vec<f32> = (0..8).map(|_| rng.random_range(-4.0f32..4.0)).collect();
                ProbVector::from_logits(&raw).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..n_rx).map(|_| rng.random_range(0.01..2.0)).collect();
        let d = damr_v_fuse(&probs, &VoteWeights::new(w.clone()).unwrap()).map_err(|e| e.to_string())?;

        let mut brute = [0.0f64; 8];
        for k in 0..8 {
            for j in 0..n_rx {
                brute[k] += w[j] * probs[j].values()[k] as f64;
            }
        }
        let best = (0..8).fold(0, |b, k| if brute[k] > brute[b] { k } else { b });
        for k in 0..8 {
            worst = worst.max((brute[k] - d.fused_scores[k]).abs());
        }
        check(d.predicted == ModulationType::ALL[best], || format!("case {case}: argmax differs"))?;

        if case < 100 {
            let c = rng.random_range(1e-3..1e3);
            let scaled = VoteWeights::new(w.iter().map(|v| v * c).collect()).unwrap();
            let ds = damr_v_fuse(&probs, &scaled).unwrap();
            check(ds.predicted == d.predicted, || format!("case {case}: scaling by {c} changed the class"))?;
        }
    }
    check(worst <= 1e-6, || format!("max score deviation {worst:e}"))?;
    Ok(format!("1000 inputs, max score deviation {worst:.1e}; 100 scalings invariant"))
}

fn experiment_run() -> Outcome {
    let start = Instant::now();
    let params = GenerateParams {
        n_records: 16_000,
        n_rx: 6,
        channel: ChannelConfig::default(),
        shaping: ShapingConfig::default(),
        seed: 1,
    };
    let records = dataset::generate_records(&params).map_err(|e| e.to_string())?;
    let labels: Vec<ModulationType> = records.iter().map(|r| r.label).collect();
    let split = dataset::split_dataset(&labels, &SplitSpec::default(), 7).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    let out = experiment::run_pipeline(&records, &split, &cfg, 4.0, |p| match p {
        experiment::Progress::Epoch { model, stats } => eprintln!(
            "  {model} epoch {}: train loss {:.4}, val accuracy {:.3} [{:.0}s]",
            stats.epoch,
            stats.train_loss,
            stats.val_accuracy.unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        ),
        experiment::Progress::Trained { model, report } => {
            eprintln!("  trained {model}: best epoch {} of {}", report.best_epoch, report.history.len())
        }
    })
    .map_err(|e| e.to_string())?;
    ordering(&out.comparison, start.elapsed().as_secs_f64())
}

fn ordering(cmp: &Comparison, seconds: f64) -> Outcome {
    let acc = |m| cmp.accuracy(m).unwrap() * 100.0;
    let (lamr, cent) = (acc(Method::Lamr), acc(Method::CentAmr));
    let summary = format!(
        "LAMR mean {lamr:.2}%, CentAMR {cent:.2}%, DAMR-V {:.2}%, DAMR-F8 {:.2}%, DAMR-F256 {:.2}% in {:.0} min",
        acc(Method::DamrV),
        acc(Method::DamrF8),
        acc(Method::DamrF256),
        seconds / 60.0
    );
    let mut failures = Vec::new();
    if cent < lamr + 10.0 {
        failures.push("(a) CentAMR < LAMR + 10".to_string());
    }
    for m in [Method::DamrV, Method::DamrF8, Method::DamrF256] {
        if acc(m) < lamr + 5.0 {
            failures.push(format!("(b) {m} < LAMR + 5"));
        }
        if (acc(m) - cent).abs() > 8.0 {
            failures.push(format!("(c) {m} more than 8 points from CentAMR"));
        }
    }
    if seconds > 2.0 * 3600.0 {
        failures.push("runtime over 2 h".into());
    }
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", failures.join(", ")))
    }
}

fn split() -> Outcome {
    let mut checked = 0;
    for n in (5..=400).step_by(5).chain([16_000]) {
        let labels = dataset::label_schedule(n as u64, n as u64);
        let s = dataset::split_dataset(&labels, &SplitSpec::default(), 3).map_err(|e| e.to_string())?;
        let sizes = (s.train.len(), s.test.len(), s.val.len());
        check(sizes == (n * 3 / 5, n / 5, n / 5), || format!("n={n}: {sizes:?}"))?;
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.val).copied().collect();
        all.sort_unstable();
        check(all == (0..n).collect::<Vec<_>>(), || format!("n={n}: not a partition"))?;
        checked += 1;
    }
    Ok(format!("{checked} sizes split exactly 60/20/20"))
}

fn snr_calibration() -> Outcome {
    let cfg = ChannelConfig {
        per_receiver_snr_jitter_db: 0.0,
        snr_range_db: (-20.0, 30.0),
        ..ChannelConfig::default()
    };
    let mut report = Vec::new();
    for target in [-10.0, 0.0, 10.0, 20.0] {
        let (mut signal, mut noise) = (0.0f64, 0.0f64);
        // Ten frames give 10,240 samples per estimate.
        for k in 0..10u64 {
            let frame = generate_frame(ModulationType::ALL[k as usize % 8], &ShapingConfig::default(), k);
            let state = draw_states(&cfg, 1, target, 1000 + k).unwrap().remove(0);
            let t = apply_channel_traced(&frame, &state, 2000 + k);
            signal += t.noiseless.iter().map(|z| z.norm_sqr()).sum::<f64>();
            noise += t.noise.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let measured = 10.0 * (signal / noise).log10();
        check((measured - target).abs() <= 0.5, || format!("target {target} dB measured {measured:.3} dB"))?;
        report.push(format!("{target}->{measured:.2}"));
    }
    Ok(format!("measured dB: {}", report.join(", ")))
}

fn serialization() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("d.tmrs");
    let p = GenerateParams {
        n_records: 32,
        n_rx: 6,
        channel: ChannelConfig::default(),
        shaping: ShapingConfig::default(),
        seed: 4,
    };
    dataset::generate_dataset(&path, &p).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).unwrap();
    let loaded = Dataset::load(&path).map_err(|e| e.to_string())?;
    check(loaded.records == dataset::generate_records(&p).unwrap(), || "dataset reload differs".into())?;
    let again = dir.path().join("again.tmrs");
    dataset::write_dataset(&again, &loaded.records).unwrap();
    check(std::fs::read(&again).unwrap() == bytes, || "rewritten dataset differs".into())?;

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    std::fs::write(&again, &corrupt).unwrap();
    check(matches!(Dataset::load(&again), Err(DatasetError::Format(_))), || "corrupt header accepted".into())?;
    std::fs::write(&again, &bytes[..bytes.len() - 100]).unwrap();
    check(matches!(Dataset::load(&again), Err(DatasetError::Truncated { record: 31 })), || {
        "truncated dataset not reported at record 31".into()
    })?;

    let net = Network::new(models::build(ModelKind::Vtcnn2, 1).unwrap(), 8).unwrap();
    let ckpt = dir.path().join("m.tmnw");
    nn::write_checkpoint_file(&ckpt, &net.params().layers).unwrap();
    let back = nn::read_checkpoint_file(&ckpt).map_err(|e| e.to_string())?;
    check(back == net.params().layers, || "checkpoint reload differs".into())?;
    let cbytes = std::fs::read(&ckpt).unwrap();
    let mut bad = cbytes.clone();
    bad[3] = 0;
    std::fs::write(&ckpt, &bad).unwrap();
    check(matches!(nn::read_checkpoint_file(&ckpt), Err(NnError::Format(_))), || "corrupt checkpoint accepted".into())?;
    std::fs::write(&ckpt, &cbytes[..cbytes.len() - 1]).unwrap();
    check(matches!(nn::read_checkpoint_file(&ckpt), Err(NnError::Truncated)), || "truncated checkpoint accepted".into())?;
    Ok("dataset and checkpoint reload bit-exactly; corrupt and truncated files rejected".into())
}

fn perf(art: &Artifacts) -> Outcome {
    let obs = observations(105, 2);
    let mut latency = std::collections::BTreeMap::new();
    let mut parts = Vec::new();
    for m in Method::NETWORKED {
        let r = simnet::measure_perf(m, art, &obs, 5).map_err(|e| e.to_string())?;
        let product = r.throughput_samples_per_sec * r.latency_ms_per_sample / 1000.0;
        check((0.8..=1.2).contains(&product), || format!("{m}: throughput x latency = {product:.3}"))?;
        check(r.n_samples == 100, || format!("{m}: {} samples", r.n_samples))?;
        latency.insert(m, r.latency_ms_per_sample);
        parts.push(format!("{m} {:.1} ms", r.latency_ms_per_sample));
    }
    check(latency[&Method::CentAmr] < latency[&Method::DamrF8], || {
        format!("CentAMR {:.1} ms not below DAMR-F8 {:.1} ms", latency[&Method::CentAmr], latency[&Method::DamrF8])
    })?;
    Ok(parts.join(", "))
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; a name filter
    // restricts which criteria run.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let full = std::env::var("DAMR_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let art = untrained_artifacts();

    // Budgets in seconds; "seconds" in the criteria is read as 10 s. The
    // ordering experiment checks its own 2 h limit.
    let criteria: Vec<(u32, &str, f64, Box<dyn Fn() -> Option<Outcome> + '_>)> = vec![
        (1, "bandwidth exactness", 60.0, Box::new(|| Some(bandwidth(&art)))),
        (2, "architecture conformance", 10.0, Box::new(|| Some(architecture()))),
        (3, "gradient correctness", 120.0, Box::new(|| Some(gradients()))),
        (4, "fusion oracle equivalence", 60.0, Box::new(|| Some(fusion()))),
        (5, "desk-scale ordering experiment", f64::INFINITY, Box::new(|| full.then(experiment_run))),
        (6, "split conformance", 10.0, Box::new(|| Some(split()))),
        (7, "SNR calibration", 60.0, Box::new(|| Some(snr_calibration()))),
        (8, "serialization round-trips", 10.0, Box::new(|| Some(serialization()))),
        (9, "perf harness sanity", 600.0, Box::new(|| Some(perf(&art)))),
    ];

    let mut failed = 0;
    for (id, name, budget, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        let line = match outcome {
            Some(Ok(detail)) if secs > *budget => {
                failed += 1;
                format!("FAIL     {detail}; over the {budget:.0}s budget")
            }
            Some(Ok(detail)) => format!("PASS     {detail}"),
            Some(Err(detail)) => {
                failed += 1;
                format!("FAIL     {detail}")
            }
            None => "SKIPPED  set DAMR_ACCEPTANCE_FULL=1 to run (several hours on one core)".to_string(),
        };
        println!("criterion {id} {name:<31} {line} [{secs:.1}s]");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL
//! line; the process exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikefed::codec::{decode_rate, poisson_encode, RngStream};
use spikefed::data::{synth_dataset, Dataset, PartitionScheme, PartitionSpec};
use spikefed::energy::{energy_ann, energy_snn, ops_conv, ops_conv_rect, ops_fc, EnergyConstants};
use spikefed::neuro::{Network, Regime, RunMode};
use spikefed::vfl::{
    cross_entropy, train_epoch_centralized, Endpoint, Execution, FederatedData, Federation,
    MetricsReport, Payload, ProtocolRegistry, TrainConfig,
};
use spikefed::zoo::{build_model, BuildOptions, PresetRegistry, TopologySpec};
use spikefed::Tensor;
use spikefed_cli::{parse_config, run};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        steps,
        bottom_lr: 0.1,
        top_lr: 0.1,
        batch_size: 32,
        momentum: 0.95,
        weight_decay: 1e-4,
        regime: Regime::Spiking,
        seed,
        execution: Execution::Parallel,
    }
}

fn vgg_mini(ds: &Dataset) -> TopologySpec {
    PresetRegistry::default()
        .get("vgg-mini")
        .unwrap()
        .topology(ds.image_shape(), ds.classes())
        .unwrap()
}

fn federation(
    protocol: &str,
    ds: &Dataset,
    k: usize,
    cfg: TrainConfig,
) -> (Federation, PartitionSpec) {
    let [_, h, w] = ds.image_shape();
    let part = PartitionSpec::new(PartitionScheme::VerticalStrips, k, h, w).unwrap();
    let fed = Federation::assemble(
        &ProtocolRegistry::default(),
        protocol,
        &vgg_mini(ds),
        &part,
        &BuildOptions::spiking(cfg.steps),
        None,
        cfg,
    )
    .unwrap();
    (fed, part)
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!(
            "took {:.1}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        )
    })
}

fn centralization_equivalence() -> Outcome {
    let start = Instant::now();
    let ds = synth_dataset(512, 4, 16, 16, 1).unwrap();
    let cfg = train_config(10, 42);
    let (mut fed, part) = federation("no-split", &ds, 1, cfg);
    let data = FederatedData::new(&ds, &part).unwrap();
    let mut central = build_model(&vgg_mini(&ds), &BuildOptions::spiking(10), cfg.seed).unwrap();
    let mut worst = 0.0f64;
    let mut batches = 0;
    for epoch in 0..3 {
        let a = fed.train_epoch(&data, epoch).map_err(|e| e.to_string())?;
        let b =
            train_epoch_centralized(&mut central, &ds, &cfg, epoch).map_err(|e| e.to_string())?;
        ensure(a.batch_losses.len() == b.batch_losses.len(), || {
            "batch counts differ".into()
        })?;
        for (x, y) in a.batch_losses.iter().zip(&b.batch_losses) {
            worst = worst.max((x - y).abs());
        }
        batches += a.batch_losses.len();
    }
    ensure(worst <= 1e-6, || format!("max loss gap {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "{batches} batch losses, max gap {worst:e}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn relaxed_objective(
    net: &mut Network<f64>,
    frames: &[Tensor<f64>],
    labels: &[usize],
) -> (f64, Tensor<f64>) {
    let steps = frames.len();
    let acc = net.forward(frames, RunMode::RELAXED_TRAIN).unwrap();
    let (rates, _) = decode_rate(&acc, steps).unwrap();
    let (loss, mut grad) = cross_entropy(&rates, labels).unwrap();
    grad.scale_in_place(1.0 / steps as f64);
    (loss, grad)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let spec = TopologySpec::parse("two-layer", [1, 4, 4], "conv:4, linear:3").unwrap();
    let (steps, batch) = (4, 6);
    let mut model = build_model::<f64>(&spec, &BuildOptions::spiking(steps), 3).unwrap();
    let net = &mut model.network;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let frames: Vec<Tensor<f64>> = (0..steps)
        .map(|_| {
            Tensor::from_fn(&[batch, 1, 4, 4], |_| {
                (rng.random::<f64>() < 0.4) as u8 as f64
            })
        })
        .collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % 3).collect();

    let (_, g) = relaxed_objective(net, &frames, &labels);
    net.zero_grad();
    net.backward(&g, false).unwrap();
    let analytic: Vec<Tensor<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let h = 1e-3;
    let (mut worst, mut checked) = (0.0f64, 0);
    for (pi, grads) in analytic.iter().enumerate() {
        for i in 0..grads.len() {
            let orig = net.params()[pi].value.data()[i];
            net.params_mut()[pi].value.data_mut()[i] = orig + h;
            let (up, _) = relaxed_objective(net, &frames, &labels);
            net.params_mut()[pi].value.data_mut()[i] = orig - h;
            let (down, _) = relaxed_objective(net, &frames, &labels);
            net.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grads.data()[i];
            let scale = a.abs().max(numeric.abs());
            if scale > 0.0 {
                worst = worst.max((a - numeric).abs() / scale);
            }
            checked += 1;
        }
    }
    ensure(worst <= 1e-3, || format!("worst relative error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{checked} weight and gamma entries, worst relative error {worst:e}"
    ))
}

fn learning_signal() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    for (mode, floor) in [("no-split", 0.625), ("split", 0.5)] {
        let start = Instant::now();
        let out = dir.path().join(format!("{mode}.csv"));
        let cfg = parse_config([
            "spikefed",
            "--dataset",
            "synth",
            "--synth-samples",
            "2000",
            "--synth-classes",
            "4",
            "--model",
            "vgg-mini",
            "--mode",
            mode,
            "--k",
            "2",
            "--t",
            "10",
            "--epochs",
            "10",
            "--seed",
            "0",
            "--out",
            out.to_str().unwrap(),
        ])
        .map_err(|e| e.to_string())?;
        let summary = run(&cfg, &mut std::io::sink()).map_err(|e| format!("{e:#}"))?;
        let acc = summary.final_test_accuracy;
        ensure(acc >= floor, || {
            format!("{mode}: test accuracy {acc:.4} below {floor}")
        })?;
        within(start.elapsed(), Duration::from_secs(15 * 60))?;
        parts.push(format!(
            "{mode} {:.1}% in {:.0}s",
            100.0 * acc,
            start.elapsed().as_secs_f64()
        ));
    }
    Ok(parts.join(", "))
}

fn brute_force_conv(h: usize, w: usize, k: usize, p: usize, s: usize, i: usize, o: usize) -> u64 {
    let mut count = 0;
    let mut r = 0;
    while r + k <= h + 2 * p {
        let mut c = 0;
        while c + k <= w + 2 * p {
            for _ in 0..o * i * k * k {
                count += 1;
            }
            c += s;
        }
        r += s;
    }
    count
}

fn energy_formula_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut geometries = 0;
    while geometries < 20 {
        let (n, m) = (rng.random_range(1..24), rng.random_range(1..24));
        let (k, p, s) = (
            rng.random_range(1..6),
            rng.random_range(0..3),
            rng.random_range(1..4),
        );
        let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
        if k > n + 2 * p || k > m + 2 * p {
            continue;
        }
        let got = ops_conv_rect(n, m, k, p, s, i, o).unwrap();
        let want = brute_force_conv(n, m, k, p, s, i, o);
        ensure(got == want, || {
            format!("conv {n}x{m} k{k} p{p} s{s}: {got} vs {want}")
        })?;
        let (fi, fo) = (rng.random_range(1..500u64), rng.random_range(1..500u64));
        let loops = (0..fi).map(|_| (0..fo).count() as u64).sum::<u64>();
        ensure(ops_fc(fi, fo) == loops, || format!("fc {fi}x{fo}"))?;
        geometries += 1;
    }
    let c = EnergyConstants::default();
    let exact = [
        (
            "ops_conv(32,3,1,1,3,64)",
            ops_conv(32, 3, 1, 1, 3, 64).unwrap() as f64,
            1_769_472.0,
        ),
        ("ops_fc(10,10)", ops_fc(10, 10) as f64, 100.0),
        ("E_ANN(100)", energy_ann(100, &c), 320.0),
        ("E_ANN(1769472)", energy_ann(1_769_472, &c), 5_662_310.4),
        ("E_SNN(100,0.1,32)", energy_snn(100, 0.1, 32, &c), 32.0),
        ("E_SNN(100,0,32)", energy_snn(100, 0.0, 32, &c), 0.0),
    ];
    for (name, got, want) in exact {
        ensure(got == want, || format!("{name} = {got}, expected {want}"))?;
    }
    Ok(format!(
        "20 geometries exact, {} worked examples exact",
        exact.len()
    ))
}

fn energy_ratio_identity() -> Outcome {
    let steps = 32;
    let ds = synth_dataset(64, 4, 16, 16, 8).unwrap();
    let (mut fed, part) = federation("no-split", &ds, 2, train_config(steps, 5));
    let data = FederatedData::new(&ds, &part).unwrap();
    let trained = fed.train_epoch(&data, 0).map_err(|e| e.to_string())?;
    let tested = fed.evaluate(&data).map_err(|e| e.to_string())?;
    let rows: Vec<_> = trained
        .ledger
        .rows
        .iter()
        .chain(&tested.ledger.rows)
        .collect();
    let c = EnergyConstants::default();
    let (mut checked, mut below) = (0, 0);
    for row in &rows {
        if row.ops == 0 || row.rate == 0.0 {
            continue;
        }
        let ratio = row.e_ann_pj / row.e_snn_pj;
        let want = c.e_mac() / (row.rate * steps as f64 * c.e_ac());
        ensure((ratio - want).abs() <= 1e-9 * want, || {
            format!("{}: ratio {ratio} vs {want} at R={}", row.layer, row.rate)
        })?;
        checked += 1;
        if row.rate < 0.29 {
            below += 1;
            ensure(row.e_snn_pj < row.e_ann_pj, || {
                format!("{}: SNN not cheaper at R={}", row.layer, row.rate)
            })?;
        }
    }
    ensure(checked > 0, || "no layer recorded any activity".into())?;
    for row in &rows {
        for j in 1..29 {
            let r = j as f64 / 100.0;
            ensure(
                energy_snn(row.ops, r, steps, &c) < energy_ann(row.ops, &c) || row.ops == 0,
                || format!("{}: SNN not cheaper at R={r}", row.layer),
            )?;
        }
    }
    Ok(format!(
        "{checked} measured layers match the identity, {below} measured below R=0.29"
    ))
}

fn bntt_statistics() -> Outcome {
    let steps = 6;
    let ds = synth_dataset(64, 4, 16, 16, 2).unwrap();
    let pixels: Tensor<f64> = ds.images().cast();
    let frames = poisson_encode(&pixels, steps, &RngStream::new(9))
        .unwrap()
        .into_frames();
    let (mut worst_mean, mut worst_var, mut checked, mut constant) = (0.0f64, 0.0f64, 0, 0);
    for preset in ["vgg-mini", "res-mini"] {
        let spec = PresetRegistry::default()
            .get(preset)
            .unwrap()
            .topology([3, 16, 16], 4)
            .unwrap();
        let mut model = build_model::<f64>(&spec, &BuildOptions::spiking(steps), 0).unwrap();
        model.network.forward(&frames, RunMode::TRAIN).unwrap();
        for norm in model.network.norms() {
            for t in 0..steps {
                let z = norm.normalized(t).ok_or("missing normalised activations")?;
                let (b, c) = (z.dim(0), z.dim(1));
                let per = z.len() / (b * c);
                for ch in 0..c {
                    let vals: Vec<f64> = (0..b)
                        .flat_map(|n| {
                            z.data()[(n * c + ch) * per..(n * c + ch + 1) * per]
                                .iter()
                                .copied()
                        })
                        .collect();
                    let len = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / len;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
                    // A channel that is constant over the batch normalises to zero.
                    if var == 0.0 && mean == 0.0 {
                        constant += 1;
                        continue;
                    }
                    worst_mean = worst_mean.max(mean.abs());
                    worst_var = worst_var.max((var - 1.0).abs());
                    checked += 1;
                }
            }
        }
    }
    ensure(worst_mean < 1e-5 && worst_var < 1e-3, || {
        format!("worst |mean| {worst_mean:e}, worst |var-1| {worst_var:e}")
    })?;
    Ok(format!(
        "{checked} channel-steps ({constant} constant skipped), worst |mean| {worst_mean:e}, worst |var-1| {worst_var:e}"
    ))
}

fn encoder_statistics() -> Outcome {
    let steps = 10_000;
    let train = poisson_encode(
        &Tensor::<f64>::full(&[1, 1], 0.25),
        steps,
        &RngStream::new(2024),
    )
    .unwrap();
    let rate = train.spike_count() as f64 / steps as f64;
    let bound = 3.0 * (0.25f64 * 0.75 / steps as f64).sqrt();
    ensure((rate - 0.25).abs() <= bound, || {
        format!("rate {rate} outside 0.25 ± {bound}")
    })?;
    for (v, want) in [(0.0, 0.0), (1.0, 1.0)] {
        let t = poisson_encode(
            &Tensor::<f64>::full(&[4, 3, 5, 5], v),
            500,
            &RngStream::new(7),
        )
        .unwrap();
        ensure(
            t.frames()
                .iter()
                .all(|f| f.data().iter().all(|&s| s == want)),
            || format!("intensity {v} did not give a constant train"),
        )?;
    }
    Ok(format!("rate {rate:.4} within ±{bound:.4}; extremes exact"))
}

fn protocol_audit() -> Outcome {
    let ds = synth_dataset(64, 4, 16, 16, 2).unwrap();
    let k = 2;
    let mut total = 0;
    for protocol in ["split", "no-split"] {
        let (mut fed, part) = federation(protocol, &ds, k, train_config(4, 3));
        let data = FederatedData::new(&ds, &part).unwrap();
        fed.channel_mut().enable_audit();
        fed.train_epoch(&data, 0).map_err(|e| e.to_string())?;
        let log = fed.channel_mut().take_audit_log();
        ensure(!log.is_empty() && log.len() % (2 * k) == 0, || {
            format!("{protocol}: {} records", log.len())
        })?;
        for round in log.chunks(2 * k) {
            let (outs, grads) = round.split_at(k);
            for (c, rec) in outs.iter().enumerate() {
                ensure(
                    matches!(rec.payload, Payload::Output(_))
                        && (rec.from, rec.to) == (Endpoint::Client(c), Endpoint::Server),
                    || {
                        format!(
                            "{protocol}: unexpected upstream record {:?}",
                            rec.payload.kind()
                        )
                    },
                )?;
            }
            for (c, rec) in grads.iter().enumerate() {
                ensure(
                    matches!(rec.payload, Payload::Gradient(_))
                        && (rec.from, rec.to) == (Endpoint::Server, Endpoint::Client(c)),
                    || {
                        format!(
                            "{protocol}: unexpected downstream record {:?}",
                            rec.payload.kind()
                        )
                    },
                )?;
                if protocol == "no-split" {
                    ensure(rec.payload.tensor() == grads[0].payload.tensor(), || {
                        "no-split gradients differ between clients".into()
                    })?;
                }
            }
        }
        ensure(fed.channel().pending() == 0, || {
            format!("{protocol}: undelivered messages")
        })?;
        total += log.len();
    }
    Ok(format!(
        "{total} audited messages, only outputs up and gradients down"
    ))
}

fn scheduling_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut checked = Vec::new();
    for (mode, k) in [("no-split", "2"), ("split", "4")] {
        let mut bytes = Vec::new();
        for exec in ["sequential", "parallel"] {
            let out = dir.path().join(format!("{mode}-{exec}.csv"));
            let cfg = parse_config([
                "spikefed",
                "--mode",
                mode,
                "--k",
                k,
                "--exec",
                exec,
                "--t",
                "4",
                "--epochs",
                "2",
                "--synth-samples",
                "128",
                "--seed",
                "13",
                "--out",
                out.to_str().unwrap(),
            ])
            .map_err(|e| e.to_string())?;
            run(&cfg, &mut std::io::sink()).map_err(|e| format!("{e:#}"))?;
            bytes.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        ensure(bytes[0] == bytes[1], || {
            format!("{mode}: metrics CSVs differ")
        })?;
        checked.push(format!("{mode} K={k} ({} bytes)", bytes[0].len()));
    }
    Ok(format!("byte-identical: {}", checked.join(", ")))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let classes = rng.random_range(2..12);
        let n = rng.random_range(1..300);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| {
                if rng.random::<f64>() < 0.5 {
                    l
                } else {
                    rng.random_range(0..classes)
                }
            })
            .collect();
        let report =
            MetricsReport::from_predictions(&preds, &labels, classes).map_err(|e| e.to_string())?;
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in 0..classes {
            let pairs = preds.iter().zip(&labels);
            let tp = pairs.clone().filter(|&(&p, &l)| p == c && l == c).count() as f64;
            let fp = pairs.clone().filter(|&(&p, &l)| p == c && l != c).count() as f64;
            let fn_ = pairs.filter(|&(&p, &l)| p != c && l == c).count() as f64;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            p_sum += p;
            r_sum += r;
            f_sum += if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
        }
        let k = classes as f64;
        for (got, want) in [
            (report.macro_precision, p_sum / k),
            (report.macro_recall, r_sum / k),
            (report.macro_f1, f_sum / k),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("50 prediction sets, max deviation {worst:e}"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("centralization equivalence", centralization_equivalence),
        ("gradient correctness", gradient_correctness),
        ("learning signal", learning_signal),
        ("energy formula exactness", energy_formula_exactness),
        ("energy ratio identity", energy_ratio_identity),
        ("BNTT statistics", bntt_statistics),
        ("encoder statistics", encoder_statistics),
        ("protocol audit", protocol_audit),
        ("determinism under scheduling", scheduling_determinism),
        ("metrics oracle", metrics_oracle),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

//! End-to-end acceptance run at desk scale. Prints one PASS/FAIL line per
//! criterion and fails if any criterion fails.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pfe_core::config::{RunConfig, WorldPreset};
use pfe_core::discriminative::{disc_loss, disc_loss_grad};
use pfe_core::flow::{cfm_loss, cfm_loss_grad, draw_path_samples, integrate, FieldFn, FlowConfig, VectorFieldNet};
use pfe_core::mathcore::gradcheck::{probe_input, probe_params};
use pfe_core::mathcore::{norm, Activation, Matrix, MlpParams};
use pfe_core::metrics::{cosine_similarity, emd_1d, fad_score, fit_gaussian, frechet_distance, spearman_srcc, GaussianStats};
use pfe_core::prompt::{full_prompt, EncoderConfig, FrozenEncoder, ImpressionRecord, ImpressionSchema, LoraAdapter};
use pfe_core::rng::{hash_str, normal_vec, rng_for};
use pfe_core::synthdata::{generate_corpus, nearest_mode, oracle_conditional_samples, Split, SynthWorld};
use pfe_core::system::{ablation, Head, SystemKind, TrainedSystem};
use pfe_core::SpeakerEmbedding;

// criterion 1
const MAX_PIPELINE_SECS: f64 = 600.0;
const FLOW_VS_DISC_LORA: f64 = 0.5;
const FLOW_VS_ORACLE_FLOOR: f64 = 3.0;
// criterion 2
const MODE_RECORDS: usize = 10;
const MODE_DRAWS: usize = 1000;
const MIN_INSIDE: f64 = 0.8;
const INSIDE_SIGMAS: f64 = 3.0;
const MIN_MODE_SHARE: f64 = 0.2;
const DISC_FAR_SIGMAS: f64 = 2.0;
// criterion 3
const MIN_LORA_REDUCTION: f64 = 0.2;
// criterion 4
const MIN_ABLATION_GAIN: f64 = 0.03;
// criteria 5 and 6
const EXACT: f64 = 1e-12;
const SELF_FAD: f64 = 0.05;
const FD_PROBES: usize = 100;
const FD_TOLERANCE: f64 = 1e-4;
const EULER_TOLERANCE: f64 = 0.05;
const DOUBLING_TOLERANCE: f64 = 1e-3;

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, criterion: usize, pass: bool, detail: String) {
        if !pass {
            self.failed.push(criterion);
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        // straight to the handle so the line survives libtest's output capture
        let _ = writeln!(std::io::stderr(), "criterion {criterion}: {verdict} {detail}");
    }
}

struct Desk {
    schema: ImpressionSchema,
    world: SynthWorld,
    eval: (Vec<ImpressionRecord>, Vec<Vec<f64>>),
    systems: Vec<TrainedSystem>,
}

fn system(desk: &Desk, kind: SystemKind) -> &TrainedSystem {
    desk.systems.iter().find(|s| s.kind == kind).unwrap()
}

fn ordering(report: &mut Report) -> Desk {
    let cfg = RunConfig::default();
    let schema = ImpressionSchema::builtin();
    let start = Instant::now();
    let world = SynthWorld::new(cfg.world(&schema), schema.clone()).unwrap();
    let corpus = generate_corpus(&world, &cfg.split_sizes()).unwrap();
    let (train, train_gt) = (corpus.records(Split::Train), corpus.embeddings(Split::Train));
    let (held, held_gt) = (corpus.records(Split::Heldout), corpus.embeddings(Split::Heldout));

    let mut systems = Vec::new();
    let mut fad = Vec::new();
    for kind in SystemKind::ALL {
        let (sys, _) = TrainedSystem::train(kind, cfg.system(), &schema, &train, &train_gt).unwrap();
        let generated: Vec<Vec<f64>> = held
            .iter()
            .map(|r| {
                let p = full_prompt(&schema, r).unwrap();
                sys.generate(&p, 1, 5, hash_str(&r.speaker_id)).unwrap().remove(0).values
            })
            .collect();
        fad.push(fad_score(&held_gt, &generated).unwrap());
        systems.push(sys);
    }
    let secs = start.elapsed().as_secs_f64();
    let oracle: Vec<Vec<f64>> = held
        .iter()
        .map(|r| oracle_conditional_samples(&world, r, 1, 99).unwrap().remove(0))
        .collect();
    let floor = fad_score(&held_gt, &oracle).unwrap();

    let [nolora, lora, flow, two_stage] = [fad[0], fad[1], fad[2], fad[3]];
    let worst_flow = flow.max(two_stage);
    let pass = nolora > lora
        && lora > worst_flow
        && worst_flow < FLOW_VS_DISC_LORA * lora
        && worst_flow < FLOW_VS_ORACLE_FLOOR * floor
        && secs < MAX_PIPELINE_SECS;
    report.line(
        1,
        pass,
        format!(
            "FAD disc_nolora {nolora:.4} > disc_lora {lora:.4} > flow_lora {flow:.4}, disc_plus_flow {two_stage:.4}; \
             flow < {FLOW_VS_DISC_LORA}·disc_lora = {:.4}; oracle floor {floor:.4} (bound {:.4}); \
             pipeline {secs:.1}s on 1 thread (< {MAX_PIPELINE_SECS}s)",
            FLOW_VS_DISC_LORA * lora,
            FLOW_VS_ORACLE_FLOOR * floor
        ),
    );
    Desk {
        schema,
        world,
        eval: (corpus.records(Split::Eval), corpus.embeddings(Split::Eval)),
        systems,
    }
}

fn mode_recovery(desk: &Desk, report: &mut Report) {
    let sigma = desk.world.config().noise_scale;
    let records = &desk.eval.0[..MODE_RECORDS];
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in [SystemKind::FlowLora, SystemKind::DiscPlusFlow] {
        let sys = system(desk, kind);
        let (mut inside, mut total, mut min_share) = (0usize, 0usize, 1.0f64);
        for r in records {
            let means = desk.world.mode_means(r).unwrap();
            let p = full_prompt(&desk.schema, r).unwrap();
            let draws = sys.generate(&p, MODE_DRAWS, 11, hash_str(&r.speaker_id)).unwrap();
            let mut counts = vec![0usize; means.len()];
            for d in &draws {
                let (k, rms) = nearest_mode(&means, &d.values).unwrap();
                total += 1;
                if rms < INSIDE_SIGMAS * sigma {
                    inside += 1;
                    counts[k] += 1;
                }
            }
            let share = *counts.iter().min().unwrap() as f64 / draws.len() as f64;
            min_share = min_share.min(share);
        }
        let frac = inside as f64 / total as f64;
        pass &= frac >= MIN_INSIDE && min_share >= MIN_MODE_SHARE;
        parts.push(format!("{kind} inside {frac:.3}, min mode share {min_share:.3}"));
    }
    for kind in [SystemKind::DiscNolora, SystemKind::DiscLora] {
        let sys = system(desk, kind);
        let mut far = 0;
        let mut closest = f64::INFINITY;
        for r in records {
            let means = desk.world.mode_means(r).unwrap();
            let pred = sys.predict(&full_prompt(&desk.schema, r).unwrap()).unwrap();
            let (_, rms) = nearest_mode(&means, &pred.values).unwrap();
            closest = closest.min(rms / sigma);
            if rms > DISC_FAR_SIGMAS * sigma {
                far += 1;
            }
        }
        pass &= far == records.len();
        parts.push(format!("{kind} between modes {far}/{} (closest {closest:.1}σ)", records.len()));
    }
    report.line(
        2,
        pass,
        format!(
            "{} [bounds: inside ≥ {MIN_INSIDE} within {INSIDE_SIGMAS}σ, share ≥ {MIN_MODE_SHARE}, disc > {DISC_FAR_SIGMAS}σ]",
            parts.join("; ")
        ),
    );
}

fn mean_disc_loss(sys: &TrainedSystem, schema: &ImpressionSchema, records: &[ImpressionRecord], truth: &[Vec<f64>]) -> f64 {
    let total: f64 = records
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            let pred = sys.predict(&full_prompt(schema, r).unwrap()).unwrap();
            disc_loss(&pred, &SpeakerEmbedding::ground_truth(t.clone()).unwrap()).unwrap()
        })
        .sum();
    total / records.len() as f64
}

fn lora_effect(report: &mut Report) {
    let cfg = RunConfig {
        world_preset: WorldPreset::LoraStress,
        ..RunConfig::default()
    };
    let schema = ImpressionSchema::builtin();
    let world = SynthWorld::new(cfg.world(&schema), schema.clone()).unwrap();
    let corpus = generate_corpus(&world, &cfg.split_sizes()).unwrap();
    let (train, train_gt) = (corpus.records(Split::Train), corpus.embeddings(Split::Train));
    let (eval, eval_gt) = (corpus.records(Split::Eval), corpus.embeddings(Split::Eval));
    let (held, held_gt) = (corpus.records(Split::Heldout), corpus.embeddings(Split::Heldout));

    let init = |k| TrainedSystem::init(k, cfg.system(), &schema, cfg.world_dim).unwrap();
    let (p0, l0) = (init(SystemKind::DiscNolora), init(SystemKind::DiscLora));
    let identical = eval.iter().all(|r| {
        let p = full_prompt(&schema, r).unwrap();
        p0.predict(&p).unwrap().values == l0.predict(&p).unwrap().values
    });

    let (plain, _) = TrainedSystem::train(SystemKind::DiscNolora, cfg.system(), &schema, &train, &train_gt).unwrap();
    let (lora, _) = TrainedSystem::train(SystemKind::DiscLora, cfg.system(), &schema, &train, &train_gt).unwrap();
    let (a, b) = (mean_disc_loss(&plain, &schema, &eval, &eval_gt), mean_disc_loss(&lora, &schema, &eval, &eval_gt));
    let reduction = 1.0 - b / a;
    let (ha, hb) = (mean_disc_loss(&plain, &schema, &held, &held_gt), mean_disc_loss(&lora, &schema, &held, &held_gt));
    report.line(
        3,
        identical && reduction >= MIN_LORA_REDUCTION,
        format!(
            "lora_stress eval disc_loss disc_nolora {a:.4} -> disc_lora {b:.4} ({:.1}% reduction, need ≥ {:.0}%); \
             heldout {ha:.4} -> {hb:.4} ({:.1}%); step-0 outputs identical: {identical}",
            100.0 * reduction,
            100.0 * MIN_LORA_REDUCTION,
            100.0 * (1.0 - hb / ha)
        ),
    );
}

fn ablation_trend(desk: &Desk, report: &mut Report) {
    let seeds = RunConfig::default().ablation_seeds;
    let mut pass = true;
    let mut parts = Vec::new();
    for sys in &desk.systems {
        let rows = ablation(sys, &desk.schema, &desk.eval.0, &desk.eval.1, &seeds).unwrap();
        let m: Vec<f64> = rows.iter().map(|r| r.mean_similarity).collect();
        let ok = m.windows(2).all(|w| w[1] >= w[0]) && m[2] - m[0] >= MIN_ABLATION_GAIN;
        pass &= ok;
        parts.push(format!("{} {:.3}/{:.3}/{:.3}", sys.kind, m[0], m[1], m[2]));
    }
    report.line(
        4,
        pass,
        format!(
            "mean cosine at 1/3, 2/3, 3/3 over {} speakers × {} seeds: {} (nondecreasing, 3/3 − 1/3 ≥ {MIN_ABLATION_GAIN})",
            desk.eval.0.len(),
            seeds.len(),
            parts.join("; ")
        ),
    );
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn stats(mean: &[f64], cov: Matrix) -> GaussianStats {
    GaussianStats::new(mean.to_vec(), cov, 100).unwrap()
}

fn metric_oracles(report: &mut Report) {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let g = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
    check("fit two points", g.mean == [1.0, 1.0] && close(g.covariance.get(0, 0), 2.0 + 1e-6, EXACT) && close(g.covariance.get(0, 1), 2.0, EXACT));
    let g = fit_gaussian(&vec![vec![3.0, 1.0]; 5]).unwrap();
    check("fit identical", close(g.covariance.get(0, 0), 1e-6, EXACT) && g.covariance.get(0, 1) == 0.0);
    let draws: Vec<Vec<f64>> = (0..10_000).map(|i| normal_vec(&mut rng_for(50, &[i]), 16, 1.0)).collect();
    let g = fit_gaussian(&draws).unwrap();
    check("fit CLT", g.mean.iter().all(|m| m.abs() < 5.0 / 100.0));

    let i2 = Matrix::identity(2);
    let a = stats(&[1.0, -1.0], Matrix::diag(&[2.0, 0.5]));
    check("frechet self", frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    check("frechet mean shift", close(frechet_distance(&stats(&[1.0, 0.0], i2.clone()), &stats(&[0.0, 0.0], i2.clone())).unwrap(), 1.0, 1e-9));
    check("frechet 4I vs I", close(frechet_distance(&stats(&[0.0, 0.0], i2.scaled(4.0)), &stats(&[0.0, 0.0], i2.clone())).unwrap(), 2.0, 1e-9));

    let other: Vec<Vec<f64>> = (0..10_000).map(|i| normal_vec(&mut rng_for(51, &[i]), 16, 1.0)).collect();
    let self_fd = fad_score(&draws, &other).unwrap();
    check("fad self distance", self_fd < SELF_FAD);
    check("fad copy", fad_score(&draws, &draws).unwrap().abs() < 1e-9);
    let shifted: Vec<Vec<f64>> = other.iter().map(|v| v.iter().map(|x| x + 1.0).collect()).collect();
    let shift_fd = fad_score(&draws, &shifted).unwrap();
    check("fad unit shift", (shift_fd / 16.0 - 1.0).abs() < 0.05);

    let (r, p) = spearman_srcc(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
    check("spearman identity", close(r, 1.0, EXACT) && p < 0.01);
    check("spearman reversed", close(spearman_srcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().0, -1.0, EXACT));
    check("spearman swap", close(spearman_srcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().0, 0.5, EXACT));

    check("emd identity", emd_1d(&[1.0, 4.0, 2.0], &[1.0, 4.0, 2.0]).unwrap() == 0.0);
    check("emd point masses", close(emd_1d(&[0.0], &[5.0]).unwrap(), 5.0, EXACT));
    check("emd pairs", close(emd_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0, EXACT));

    check("cosine self", close(cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0, EXACT));
    check("cosine orthogonal", close(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0, EXACT));
    check("cosine 45°", close(cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), std::f64::consts::FRAC_1_SQRT_2, EXACT));
    check("cosine zero", cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());

    report.line(
        5,
        failures.is_empty(),
        format!(
            "tagged examples for fit_gaussian, frechet_distance, fad_score, spearman_srcc, emd_1d, cosine_similarity; \
             self FD at d=16, 2×10k draws {self_fd:.4} (< {SELF_FAD}); unit shift FD {shift_fd:.3} (16 ± 5%){}",
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    );
}

fn weighted(out: &[f64], w: &[f64]) -> f64 {
    out.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Worst relative finite-difference error per trainable module.
fn gradient_checks() -> Vec<(&'static str, f64)> {
    let mut rng = rng_for(60, &[]);
    let mut out = Vec::new();

    for (name, act) in [("mlp relu", Activation::Relu), ("mlp identity", Activation::Identity)] {
        let params = MlpParams::init(&[6, 9, 7, 4], act, &mut rng).unwrap();
        let x = normal_vec(&mut rng, 6, 1.0);
        let w = normal_vec(&mut rng, 4, 1.0);
        let (_, tape) = params.forward(&x).unwrap();
        let grad = params.backward(&tape, &w).unwrap();
        let e1 = probe_params(&params, &grad.params, |p| weighted(&p.apply(&x).unwrap(), &w), FD_PROBES, &mut rng);
        let e2 = probe_input(&x, &grad.input, |v| weighted(&params.apply(v).unwrap(), &w), FD_PROBES, &mut rng);
        out.push((name, e1.max(e2)));
    }

    let target = normal_vec(&mut rng, 8, 1.0);
    let pred = normal_vec(&mut rng, 8, 1.0);
    let (_, g) = disc_loss_grad(&pred, &target).unwrap();
    out.push(("disc loss", probe_input(&pred, &g, |p| disc_loss_grad(p, &target).unwrap().0, FD_PROBES, &mut rng)));

    let schema = ImpressionSchema::builtin();
    let enc = FrozenEncoder::new(EncoderConfig { phrase_dim: 12, output_dim: 10, ..Default::default() }, &schema).unwrap();
    let mut adapter = LoraAdapter::for_encoder(&enc, 3, 3.0, &mut rng).unwrap();
    adapter.b = Matrix::from_vec(10, 3, normal_vec(&mut rng, 30, 0.5)).unwrap();
    let proj = MlpParams::init(&[10, 8, 8, 8, 5], Activation::Relu, &mut rng).unwrap();
    let pooled = normal_vec(&mut rng, 12, 0.3);
    let target = normal_vec(&mut rng, 5, 1.0);
    let objective = |a: &LoraAdapter, p: &MlpParams| {
        disc_loss_grad(&p.apply(&enc.project(&pooled, Some(a)).unwrap()).unwrap(), &target).unwrap().0
    };
    let o = enc.project(&pooled, Some(&adapter)).unwrap();
    let (y, tape) = proj.forward(&o).unwrap();
    let (_, g_out) = disc_loss_grad(&y, &target).unwrap();
    let mut proj_grad = proj.zeros_like();
    let g_o = proj.backward_accumulate(&tape, &g_out, &mut proj_grad).unwrap();
    let mut lora_grad = adapter.zeros_like();
    adapter.backward_accumulate(&pooled, &g_o, &mut lora_grad).unwrap();
    out.push(("lora adapter", probe_params(&adapter, &lora_grad, |a| objective(a, &proj), FD_PROBES, &mut rng)));
    out.push(("projection", probe_params(&proj, &proj_grad, |p| objective(&adapter, p), FD_PROBES, &mut rng)));

    let net = VectorFieldNet::new(3, 4, 10, 3, Activation::Relu, 2, &mut rng).unwrap();
    let data: Vec<(Vec<f64>, Vec<f64>)> = (0..6).map(|_| (normal_vec(&mut rng, 3, 1.0), normal_vec(&mut rng, 4, 1.0))).collect();
    let batch: Vec<(&[f64], &[f64])> = data.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
    let samples = draw_path_samples(&batch, 1e-4, &mut rng).unwrap();
    let grad = cfm_loss_grad(&net, &samples).unwrap();
    let e = probe_params(
        net.params(),
        &grad.params,
        |p| cfm_loss(&VectorFieldNet::from_params(p.clone(), 3, 4, 2).unwrap(), &samples).unwrap(),
        FD_PROBES,
        &mut rng,
    );
    let mut ec: f64 = 0.0;
    for (k, s) in samples.iter().enumerate() {
        ec = ec.max(probe_input(
            &s.condition,
            &grad.conditions[k],
            |c| {
                let mut moved = samples.clone();
                moved[k].condition = c.to_vec();
                cfm_loss(&net, &moved).unwrap()
            },
            FD_PROBES,
            &mut rng,
        ));
    }
    out.push(("vector field", e.max(ec)));
    out
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn numerics(desk: &Desk, report: &mut Report) {
    let grads = gradient_checks();
    let grad_ok = grads.iter().all(|(_, e)| *e < FD_TOLERANCE);
    let worst_grad = grads.iter().map(|g| g.1).fold(0.0, f64::max);

    let cfg = FlowConfig::default();
    let fine = FlowConfig { ode_steps: 2 * cfg.ode_steps, ..cfg };
    let mut rng = rng_for(61, &[]);
    let (mut euler_worst, mut doubling_worst) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let x1 = normal_vec(&mut rng, 16, 2.0);
        let x0 = normal_vec(&mut rng, 16, 1.0);
        let field = FieldFn {
            dim: 16,
            f: |x: &[f64], _: &[f64], t: f64| {
                let k = 1.0 - cfg.sigma_min;
                x.iter().zip(&x1).map(|(xi, a)| (a - k * xi) / (1.0 - k * t)).collect()
            },
        };
        let e = integrate(&field, &[], &x0, &cfg).unwrap().values;
        let e2 = integrate(&field, &[], &x0, &fine).unwrap().values;
        euler_worst = euler_worst.max(l2(&e, &x1) / l2(&x1, &x0));
        doubling_worst = doubling_worst.max(l2(&e, &e2) / norm(&e));
    }

    // trained-field figure, reported for reference
    let sys = system(desk, SystemKind::FlowLora);
    let Head::Flow { net, .. } = &sys.head else { unreachable!() };
    let mut trained = Vec::new();
    for (i, r) in desk.eval.0.iter().take(10).enumerate() {
        let c = sys.flow_condition(&full_prompt(&desk.schema, r).unwrap()).unwrap();
        for j in 0..10 {
            let x0 = normal_vec(&mut rng_for(62, &[i as u64, j]), sys.dim, 1.0);
            let a = integrate(net, &c, &x0, &cfg).unwrap().values;
            let b = integrate(net, &c, &x0, &fine).unwrap().values;
            trained.push(l2(&a, &b) / norm(&a));
        }
    }
    let trained_mean = trained.iter().sum::<f64>() / trained.len() as f64;
    let trained_max = trained.iter().cloned().fold(0.0, f64::max);

    report.line(
        6,
        grad_ok && euler_worst < EULER_TOLERANCE && doubling_worst < DOUBLING_TOLERANCE,
        format!(
            "finite differences ({FD_PROBES} probes) worst rel. error {worst_grad:.2e} < {FD_TOLERANCE:e} over [{}]; \
             exact OT field: Euler at {} steps within {:.2e} of x1 (< {EULER_TOLERANCE}), step doubling moves endpoint {doubling_worst:.2e} (< {DOUBLING_TOLERANCE:e}); \
             trained flow_lora field: doubling moves endpoint mean {trained_mean:.2e}, max {trained_max:.2e} (not gated)",
            grads.iter().map(|g| g.0).collect::<Vec<_>>().join(", "),
            cfg.ode_steps,
            euler_worst
        ),
    );
}

const DETERMINISM_CONFIG: &str = "\
train_speakers = 300
heldout_speakers = 60
eval_speakers = 10
encoder_phrase_dim = 32
encoder_dim = 32
projection_hidden = 16
flow_hidden = 32
flow_layers = 2
disc_epochs = 3
flow_epochs = 3
ablation_seeds = [0, 1]
";

/// Runs the whole command chain into `dir`; `threads` goes to PFE_THREADS.
fn pipeline(dir: &Path, threads: &str) {
    let config = dir.join("run.toml");
    fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let corpus = p("corpus");
    let mut steps: Vec<Vec<String>> = vec![vec!["gen-corpus".into(), "--config".into(), p("run.toml"), "--out".into(), corpus.clone()]];
    for kind in SystemKind::ALL {
        let ckpt = p(&format!("{kind}.pfe"));
        let gen = p(&format!("{kind}.emb1"));
        steps.push(["train", "--system", kind.name(), "--corpus", &corpus, "--out", &ckpt].map(String::from).to_vec());
        steps.push(
            ["generate", "--checkpoint", &ckpt, "--records", &format!("{corpus}/heldout.jsonl"), "--n", "3", "--seed", "7", "--out", &gen]
                .map(String::from)
                .to_vec(),
        );
        for (mode, extra) in [("fad", ["--generated", gen.as_str()]), ("similarity", ["--generated", gen.as_str()]), ("ablation", ["--checkpoint", ckpt.as_str()])] {
            let out = p(&format!("{kind}.{mode}.csv"));
            steps.push(["evaluate", "--mode", mode, "--corpus", &corpus, extra[0], extra[1], "--out", &out].map(String::from).to_vec());
        }
    }
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_pfe")).args(&args).env("PFE_THREADS", threads).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(report: &mut Report) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "1");
    pipeline(b.path(), "4");
    let (fa, fb) = (files(a.path()), files(b.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let count = |ext: &str| names.iter().filter(|n| n.ends_with(ext)).count();
    report.line(
        7,
        fa.len() == fb.len() && differing.is_empty(),
        format!(
            "gen-corpus, train ×4, generate ×4, evaluate ×12 run twice (PFE_THREADS=1 and 4): {} files compared \
             ({} .emb1, {} .pfe, {} .csv), {} differ{}",
            fa.len(),
            count(".emb1"),
            count(".pfe"),
            count(".csv"),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut report = Report { failed: Vec::new() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let desk = ordering(&mut report);
        mode_recovery(&desk, &mut report);
        lora_effect(&mut report);
        ablation_trend(&desk, &mut report);
        metric_oracles(&mut report);
        numerics(&desk, &mut report);
    });
    determinism(&mut report);
    assert!(report.failed.is_empty(), "failed criteria: {:?}", report.failed);
}

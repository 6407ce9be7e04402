//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line; exits non-zero when
//! any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alphami::channel_opt::{grid_oracle, optimize_channel, ChannelOptConfig, WorldModel};
use alphami::experiments::{
    prepare_data, spearman, sweep, SweepConfig, SynthConfig, TradeoffPoint,
};
use alphami::info_measures::{
    alpha_mutual_information, arimoto_conditional_entropy, batch_sequence_arimoto_entropy,
    renyi_entropy, Alpha, JointPmf, PosteriorBatch,
};
use alphami::neural::{adversary_loss, backward, forward, Activation, LayerSpec, NetworkParams};
use alphami::tensor::Tensor3;
use alphami::training::{
    assemble_observed, releaser_gradient, DistortionSpec, HyperParams, ObservedMode,
    ReleaserContext,
};

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn alpha(v: f64) -> Alpha {
    Alpha::new(v).unwrap()
}

fn random_joint(rng: &mut ChaCha8Rng, nx: usize, nz: usize) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = (0..nx)
        .map(|_| {
            (0..nz)
                .map(|_| {
                    if rng.random::<f64>() < 0.15 {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect();
    if m.iter().flatten().all(|&v| v == 0.0) {
        m[0][0] = 1.0;
    }
    let total: f64 = m.iter().flatten().sum();
    m.iter_mut().flatten().for_each(|v| *v /= total);
    m
}

/// Direct evaluation of the order-α entropy and the Arimoto conditional
/// entropy, straight from their defining sums in the probability domain.
fn brute_force(m: &[Vec<f64>], a: f64) -> (f64, f64) {
    let nz = m[0].len();
    let px: Vec<f64> = m.iter().map(|row| row.iter().sum()).collect();
    let h = (px
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p.powf(a))
        .sum::<f64>())
    .ln()
        / (1.0 - a);
    let inner: f64 = (0..nz)
        .map(|z| {
            m.iter()
                .map(|row| row[z])
                .filter(|&p| p > 0.0)
                .map(|p| p.powf(a))
                .sum::<f64>()
                .powf(1.0 / a)
        })
        .sum();
    let hc = a / (1.0 - a) * inner.ln();
    (h, hc)
}

fn shannon_mi(m: &[Vec<f64>]) -> f64 {
    let nz = m[0].len();
    let px: Vec<f64> = m.iter().map(|row| row.iter().sum()).collect();
    let pz: Vec<f64> = (0..nz).map(|z| m.iter().map(|row| row[z]).sum()).collect();
    let mut mi = 0.0;
    for (x, row) in m.iter().enumerate() {
        for (z, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[x] * pz[z])).ln();
            }
        }
    }
    mi
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let alphas = [0.5, 0.9, 1.1, 2.0, 3.0];
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (nx, nz) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let m = random_joint(&mut rng, nx, nz);
        let joint = JointPmf::from_matrix(&m).unwrap();
        for &a in &alphas {
            let (h, hc) = brute_force(&m, a);
            let got_hc = arimoto_conditional_entropy(&joint, alpha(a)).unwrap();
            let got_h = renyi_entropy(&joint.marginal_pmf(0).unwrap(), alpha(a));
            let got_i = alpha_mutual_information(&joint, alpha(a)).unwrap();
            worst = worst
                .max((got_hc - hc).abs())
                .max((got_h - h).abs())
                .max((got_i - (h - hc)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && secs < 10.0,
        format!(
            "1000 joints x 5 orders, max abs error {worst:.2e} (tol 1e-10), {secs:.2}s (limit 10s)"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nx, nz) = (rng.random_range(2..=5), rng.random_range(2..=5));
        let m = random_joint(&mut rng, nx, nz);
        let joint = JointPmf::from_matrix(&m).unwrap();
        let mi = shannon_mi(&m);
        for a in [1.0 - 1e-4, 1.0 + 1e-4] {
            worst = worst.max((alpha_mutual_information(&joint, alpha(a)).unwrap() - mi).abs());
        }
    }
    outcome(
        worst < 1e-3,
        format!("100 joints at orders 1 +/- 1e-4, max gap to Shannon MI {worst:.2e} (tol 1e-3)"),
    )
}

/// `(1/T) · α/(1−α) · log mean_b ‖p(x^T | z_b^T)‖_α`, enumerating every
/// binary sequence and multiplying per-step posteriors; Shannon at α = 1.
fn exhaustive_sequence_entropy(p: &Tensor3, a: f64) -> f64 {
    let (nb, nt, _) = p.shape();
    let mut acc = 0.0;
    for b in 0..nb {
        let mut norm = 0.0;
        let mut shannon = 0.0;
        for code in 0..(1usize << nt) {
            let prob: f64 = (0..nt).map(|t| p.get(b, t, (code >> t) & 1)).product();
            if prob > 0.0 {
                norm += prob.powf(a);
                shannon -= prob * prob.ln();
            }
        }
        acc += if a == 1.0 {
            shannon
        } else {
            norm.powf(1.0 / a)
        };
    }
    let mean = acc / nb as f64;
    if a == 1.0 {
        mean / nt as f64
    } else {
        a / (1.0 - a) * mean.ln() / nt as f64
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for nt in 1..=4 {
        for nb in 1..=8 {
            for &a in &[0.5, 0.9, 1.0, 1.1, 2.0, 3.0] {
                let p = Tensor3::from_fn(nb, nt, 2, |_, _, _| 0.0);
                let mut p = p;
                for b in 0..nb {
                    for t in 0..nt {
                        let q: f64 = rng.random_range(0.001..0.999);
                        p.set(b, t, 0, q);
                        p.set(b, t, 1, 1.0 - q);
                    }
                }
                let got = batch_sequence_arimoto_entropy(
                    &PosteriorBatch::new(p.clone()).unwrap(),
                    alpha(a),
                );
                worst = worst.max((got - exhaustive_sequence_entropy(&p, a)).abs());
                cases += 1;
            }
        }
    }
    outcome(
        worst < 1e-9,
        format!("{cases} batches with T<=4, B<=8, max abs error {worst:.2e} (tol 1e-9)"),
    )
}

/// `|a − f| / max(|a|, |f|, 1e-6)` maximized over coordinates.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn central_difference(theta: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let up = loss(&t);
            t[i] = theta[i] - h;
            let down = loss(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_specs(rng: &mut ChaCha8Rng, outputs: usize, last: Activation) -> Vec<LayerSpec> {
    let smooth = [Activation::Tanh, Activation::Sigmoid, Activation::Linear];
    let mut specs: Vec<LayerSpec> = (0..rng.random_range(0..=2))
        .map(|_| LayerSpec {
            outputs: rng.random_range(1..=4),
            activation: smooth[rng.random_range(0..smooth.len())],
            recurrent: rng.random::<bool>(),
        })
        .collect();
    specs.push(LayerSpec::dense(outputs, last));
    specs
}

/// Classifier with cross-entropy loss, gradient in the parameters.
fn classifier_instance(rng: &mut ChaCha8Rng, seed: u64) -> f64 {
    let (nb, nt, nin, k) = (
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(2..=3),
    );
    let net = NetworkParams::init(nin, &random_specs(rng, k, Activation::Softmax), seed).unwrap();
    let x = Tensor3::from_fn(nb, nt, nin, |_, _, _| rng.random_range(-1.5..1.5));
    let labels: Vec<usize> = (0..nb * nt).map(|_| rng.random_range(0..k)).collect();
    let loss_of = |n: &NetworkParams| {
        let (p, trace) = forward(n, &x).unwrap();
        let l = adversary_loss(&PosteriorBatch::new(p).unwrap(), &labels).unwrap();
        (l, trace)
    };
    let (l, trace) = loss_of(&net);
    let analytic = backward(&net, &trace, &l.grad).unwrap().0.flat();
    let numeric = central_difference(&net.flat(), |t| {
        let mut n = net.clone();
        n.set_flat(t).unwrap();
        loss_of(&n).0.value
    });
    relative_error(&analytic, &numeric)
}

/// Full releaser loss through a frozen adversary (and utility network for
/// the composite distortion), gradient in the releaser parameters.
fn releaser_instance(rng: &mut ChaCha8Rng, seed: u64, a: f64) -> f64 {
    let (nb, nt) = (rng.random_range(2..=4), rng.random_range(1..=3));
    let dy = rng.random_range(1..=2);
    let spec = [
        DistortionSpec::TsL2,
        DistortionSpec::PNorm { p: 3.0 },
        DistortionSpec::CompositeImg,
    ][rng.random_range(0..3)];
    let normalize = rng.random::<bool>();
    let mut cfg = SynthConfig::labeled_clusters(nb, dy, seed);
    cfg.steps = nt;
    let batch = cfg.generate().unwrap();
    let w_dim = assemble_observed(&batch.y, &batch.x, Some(&batch.u), ObservedMode::YOnly)
        .unwrap()
        .features();
    let releaser =
        NetworkParams::init(w_dim, &random_specs(rng, dy, Activation::Linear), seed).unwrap();
    let adversary =
        NetworkParams::init(dy, &random_specs(rng, 2, Activation::Softmax), seed + 1).unwrap();
    let utility = NetworkParams::init(
        dy,
        &random_specs(rng, batch.num_classes, Activation::Softmax),
        seed + 2,
    )
    .unwrap();
    let ctx = ReleaserContext {
        adversary: &adversary,
        utility: spec.needs_utility().then_some(&utility),
        distortion: &spec,
        lambda: rng.random_range(0.1..3.0),
        alpha: alpha(a),
        mode: ObservedMode::YOnly,
        residual: false,
        si_enabled: false,
        normalize_adversary: normalize,
    };
    let analytic = releaser_gradient(&releaser, &ctx, &batch).unwrap().1.flat();
    let numeric = central_difference(&releaser.flat(), |t| {
        let mut r = releaser.clone();
        r.set_flat(t).unwrap();
        releaser_gradient(&r, &ctx, &batch).unwrap().0.value
    });
    relative_error(&analytic, &numeric)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let err = match i % 4 {
            0 | 1 => classifier_instance(&mut rng, 100 + i),
            2 => releaser_instance(&mut rng, 100 + i, 0.9),
            _ => releaser_instance(&mut rng, 100 + i, 3.0),
        };
        worst = worst.max(err);
    }
    outcome(
        worst < 1e-4,
        format!("100 instances (50 classifier, 25 releaser at order 0.9, 25 at order 3), max rel error {worst:.2e} (tol 1e-4)"),
    )
}

fn random_binary_world(rng: &mut ChaCha8Rng) -> WorldModel {
    let mut probs: Vec<f64> = (0..8).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let joint = JointPmf::new(
        vec![2, 2, 2],
        vec!["X".into(), "W".into(), "Y".into()],
        probs,
    )
    .unwrap();
    let d = rng.random_range(0.5..2.0);
    WorldModel::new(joint, vec![vec![0.0, d], vec![d, 0.0]]).unwrap()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let orders = [0.5, 0.9, 1.0, 2.0, 3.0];
    let mut worst = f64::NEG_INFINITY;
    for i in 0..10 {
        let world = random_binary_world(&mut rng);
        let cfg =
            ChannelOptConfig::new(alpha(orders[i % orders.len()]), rng.random_range(0.1..3.0));
        let opt = optimize_channel(&world, &cfg, i as u64).unwrap();
        let grid = grid_oracle(&world, &cfg, 1001).unwrap();
        worst = worst.max(opt.objective - grid.objective);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && secs < 60.0,
        format!("10 binary instances, max (optimizer - grid) {worst:.2e} (limit 1e-3), {secs:.1}s (limit 60s)"),
    )
}

fn cluster_config(
    dim: usize,
    noise_dim: usize,
    hyper: HyperParams,
    lambdas: Vec<f64>,
    alphas: Vec<f64>,
) -> SweepConfig {
    let mut data = SynthConfig::labeled_clusters(5000, dim, 1);
    data.noise_dim = noise_dim;
    data.clusters.num_classes = 1;
    SweepConfig {
        data,
        hyper,
        distortion: DistortionSpec::PNorm { p: 2.0 },
        alphas,
        lambdas,
        si_enabled: false,
        utility_enabled: false,
        train_fraction: 0.8,
        si_target_accuracy: None,
    }
}

fn run(cfg: &SweepConfig) -> Vec<TradeoffPoint> {
    let data = prepare_data(cfg).expect("data preparation");
    sweep(cfg, &data, 0).expect("sweep")
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = SweepConfig {
        data: SynthConfig::labeled_clusters(5000, 4, 1),
        hyper: HyperParams::new(alpha(1.0), 0.0, 256, 3, 500, 7),
        distortion: DistortionSpec::PNorm { p: 2.0 },
        alphas: vec![1.0],
        lambdas: vec![0.0],
        si_enabled: false,
        utility_enabled: false,
        train_fraction: 0.8,
        si_target_accuracy: None,
    };
    let p = &run(&cfg)[0];
    let secs = start.elapsed().as_secs_f64();
    let ne = p.ne.unwrap_or(f64::INFINITY);
    outcome(
        ne < 0.05 && secs < 300.0,
        format!("lambda=0, B=256, k=3, 500 iterations: held-out NE {ne:.4} (limit 0.05), {secs:.1}s (limit 300s)"),
    )
}

fn privacy_hyper() -> HyperParams {
    let mut h = HyperParams::new(alpha(1.0), 0.0, 256, 20, 2000, 7);
    h.releaser_lr = 0.01;
    h.adversary_lr = 0.05;
    h.attacker_lr = 0.05;
    h.momentum = 0.9;
    h.lr_decay = 0.01;
    h.clip_norm = Some(5.0);
    h.attacker_iterations = 1500;
    h.architecture.releaser_hidden = vec![16];
    h.architecture.normalize_adversary = true;
    h
}

fn criterion_7() -> Outcome {
    let points = run(&cluster_config(
        1,
        4,
        privacy_hyper(),
        vec![0.0, 100.0],
        vec![1.0],
    ));
    let acc = |i: usize| points[i].attacker_balanced_accuracy.unwrap_or(f64::NAN);
    let (open, saturated) = (acc(0), acc(1));
    outcome(
        (0.45..=0.55).contains(&saturated) && open > 0.9,
        format!("attacker accuracy {saturated:.4} at lambda=100 (band [0.45, 0.55]), {open:.4} at lambda=0 (limit > 0.9)"),
    )
}

fn criterion_8() -> Outcome {
    let mut h = HyperParams::new(alpha(1.0), 0.0, 256, 20, 1000, 7);
    h.releaser_lr = 0.003;
    h.adversary_lr = 0.5;
    h.attacker_lr = 0.05;
    h.momentum = 0.0;
    h.clip_norm = Some(5.0);
    h.attacker_iterations = 1500;
    h.architecture.normalize_adversary = true;
    let lambdas = vec![0.0, 5.0, 10.0, 30.0, 100.0, 300.0];
    let alphas = vec![0.9, 1.0, 3.0];
    let points = run(&cluster_config(1, 1, h, lambdas, alphas.clone()));
    let mut rhos = Vec::new();
    for a in alphas {
        let sel: Vec<&TradeoffPoint> = points
            .iter()
            .filter(|p| p.alpha == a && p.is_ok())
            .collect();
        let ne: Vec<f64> = sel.iter().map(|p| p.ne.unwrap()).collect();
        let acc: Vec<f64> = sel
            .iter()
            .map(|p| p.attacker_balanced_accuracy.unwrap())
            .collect();
        let rho = if sel.len() == 6 {
            spearman(&ne, &acc).unwrap()
        } else {
            f64::NAN
        };
        rhos.push((a, rho));
    }
    let text: Vec<String> = rhos
        .iter()
        .map(|(a, r)| format!("order {a}: {r:.3}"))
        .collect();
    outcome(
        rhos.iter().all(|(_, r)| *r <= -0.8),
        format!(
            "Spearman(NE, attacker accuracy) over 6 lambdas, {} (limit -0.8)",
            text.join(", ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut data = SynthConfig::markov_load(3000, 24, 1);
    data.noise_dim = 1;
    let mut h = HyperParams::new(alpha(1.0), 0.0, 128, 4, 2000, 8);
    h.releaser_lr = 3e-4;
    h.adversary_lr = 0.5;
    h.attacker_lr = 0.1;
    h.momentum = 0.0;
    h.lr_decay = 0.05;
    h.clip_norm = Some(5.0);
    h.attacker_iterations = 1000;
    let cfg = SweepConfig {
        data,
        hyper: h,
        distortion: DistortionSpec::TsL2,
        alphas: vec![1.0],
        lambdas: vec![20.0],
        si_enabled: true,
        utility_enabled: false,
        train_fraction: 0.8,
        si_target_accuracy: Some(0.578),
    };
    let prepared = prepare_data(&cfg).expect("calibration");
    let floor = prepared.si_only_accuracy.unwrap_or(f64::NAN);
    let points = sweep(&cfg, &prepared, 0).expect("sweep");
    let acc = points[0].attacker_balanced_accuracy.unwrap_or(f64::NAN);
    outcome(
        (floor - 0.578).abs() <= 0.02 && (acc - floor).abs() <= 0.03,
        format!(
            "SI-only floor {floor:.4} (target 0.578 +/- 0.02, correlation {:.4}); attacker with SI at lambda=20 {acc:.4}, gap {:+.4} (limit 0.03)",
            prepared.si_correlation,
            acc - floor
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut h = HyperParams::new(alpha(1.0), 0.0, 64, 3, 150, 5);
    h.attacker_iterations = 200;
    h.architecture.normalize_adversary = true;
    let mut cfg = cluster_config(2, 1, h, vec![0.0, 3.0, 30.0], vec![0.9, 3.0]);
    cfg.data.samples = 600;
    cfg.utility_enabled = true;
    cfg.data.clusters.num_classes = 3;
    let data = prepare_data(&cfg).unwrap();
    let first = sweep(&cfg, &data, 1).unwrap();
    let second = sweep(&cfg, &prepare_data(&cfg).unwrap(), 0).unwrap();
    let bits = |ps: &[TradeoffPoint]| -> Vec<Option<u64>> {
        ps.iter()
            .flat_map(|p| [p.ne, p.attacker_balanced_accuracy, p.utility_accuracy])
            .map(|v| v.map(f64::to_bits))
            .collect()
    };
    let same = first == second && bits(&first) == bits(&second);
    outcome(
        same && first.len() == 6,
        format!(
            "{} points rerun with 1 worker and with the default pool: bit-identical = {same}",
            first.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("measure correctness", criterion_1),
        ("Shannon limit", criterion_2),
        ("sequence estimator", criterion_3),
        ("gradient fidelity", criterion_4),
        ("exact optimizer vs grid", criterion_5),
        ("full-utility limit", criterion_6),
        ("full-privacy limit", criterion_7),
        ("trade-off monotonicity", criterion_8),
        ("side-information floor", criterion_9),
        ("reproducibility", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} [{name}] {} ({:.1}s)",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

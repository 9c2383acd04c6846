//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line to
//! stderr, also under the default captured output.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hetfl::config::NoiseKind;
use hetfl::data::{
    build_transition_matrix, corrupt_labels, dirichlet_partition, generate_synthetic, FlipKind,
};
use hetfl::federation::{local_epoch_seed, Client, Federation, LocalObjective, RoundSchedule};
use hetfl::losses::{cross_entropy, kl_divergence, reverse_cross_entropy, ClassDistribution};
use hetfl::models::{register_builtin_zoo, ArchitectureRegistry};
use hetfl::report::{emit_metrics, run_grid, Method};
use hetfl::{run_federation, FederationConfig, Tensor};

use common::*;

/// Written to the stderr handle directly so the line survives the test
/// harness's output capture.
fn report(id: u32, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr().lock(),
        "[{tag}] criterion {id}: {name}: {detail}"
    );
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// P = 4 heterogeneous zoo, E_c = 10, E_l = 5 on the default synthetic task.
fn trend_config(seed: u64) -> FederationConfig {
    let mut cfg = FederationConfig::with_defaults(4, seed);
    cfg.rounds = 10;
    cfg.local_epochs = 5;
    cfg
}

const TREND_SEEDS: [u64; 3] = [1, 2, 3];

fn random_dist(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

#[test]
fn criterion_1_gradient_oracle() {
    const DRAWS: u64 = 20;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let zoo = register_builtin_zoo(8, 5);
    let mut worst = [0.0f64; 3];
    let mut redraws = 0;
    for spec in &zoo {
        for draw in 0..DRAWS {
            let (mut model, x, labels, r) = gradient_draw(spec, 3, draw);
            redraws += r;
            let errs = loss_gradient_errors(&mut model, &x, &labels, 0.1);
            for k in 0..3 {
                worst[k] = worst[k].max(errs[k]);
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&w| w <= TOL) && elapsed < Duration::from_secs(30);
    report(
        1,
        "gradient oracle (4 archs x CE/RCE/SL x 20 draws)",
        pass,
        &format!(
            "max rel err CE {:.2e}, RCE {:.2e}, SL {:.2e} (tol {TOL:.0e}); {redraws} kink redraws; {:.1}s (< 30s)",
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_loss_value_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = 13;

    let uniform =
        ClassDistribution::from_probs(Tensor::new(vec![1, c], vec![1.0 / c as f64; c]).unwrap())
            .unwrap();
    let y = ClassDistribution::one_hot(&[4], c).unwrap();
    let ce_err = (cross_entropy(&uniform, &y).unwrap().value - 13f64.ln()).abs();

    let mut rce_err = 0.0f64;
    let mut kl_self = 0.0f64;
    let mut kl_min = f64::INFINITY;
    let mut decomp_err = 0.0f64;
    for _ in 0..1000 {
        let p = random_dist(&mut rng, c);
        let g = random_dist(&mut rng, c);
        let label = rng.gen_range(0..c);
        let pd =
            ClassDistribution::from_probs(Tensor::new(vec![1, c], p.clone()).unwrap()).unwrap();
        let gd =
            ClassDistribution::from_probs(Tensor::new(vec![1, c], g.clone()).unwrap()).unwrap();
        let yd = ClassDistribution::one_hot(&[label], c).unwrap();

        let rce = reverse_cross_entropy(&pd, &yd).unwrap().value;
        rce_err = rce_err.max((rce - 4.0 * (1.0 - p[label])).abs());

        kl_self = kl_self.max(kl_divergence(&pd, &pd).unwrap().abs());
        kl_min = kl_min.min(kl_divergence(&gd, &pd).unwrap());

        // KL(g‖p) = Σ g log g − Σ g log p, terms computed independently
        let neg_entropy: f64 = g.iter().map(|gi| gi * gi.ln()).sum();
        let cross: f64 = g.iter().zip(&p).map(|(gi, pi)| gi * pi.ln()).sum();
        let kl = kl_divergence(&gd, &pd).unwrap();
        decomp_err = decomp_err.max((kl - (neg_entropy - cross)).abs());
    }
    let pass = ce_err <= 1e-9
        && rce_err <= 1e-12
        && kl_self == 0.0
        && kl_min >= -1e-12
        && decomp_err <= 1e-9;
    report(
        2,
        "loss value oracles",
        pass,
        &format!(
            "|CE-ln13| {ce_err:.1e}, RCE closed-form err {rce_err:.1e}, max KL(d,d) {kl_self:.1e}, \
             min KL {kl_min:.3e}, KL/CE decomposition err {decomp_err:.1e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_noise_model() {
    let c = 13;
    let n = 10_000;
    let base = generate_synthetic(c, 4, n, 3).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for kind in [FlipKind::Symmetric, FlipKind::Pair] {
        for mu in [0.1, 0.2, 0.3] {
            let m = build_transition_matrix(kind, mu, c).unwrap();
            for i in 0..c {
                let row = m.row(i);
                let s: f64 = row.iter().sum();
                pass &= (s - 1.0).abs() <= 1e-12;
                pass &= row.iter().all(|&v| v >= 0.0);
                pass &= m.get(i, i) == 1.0 - mu;
            }
            let noisy = corrupt_labels(&base, &m, 17).unwrap();
            let rate = noisy.flip_fraction();
            let bound = 3.0 * (mu * (1.0 - mu) / n as f64).sqrt();
            pass &= (rate - mu).abs() <= bound;
            if kind == FlipKind::Pair {
                let clean = noisy.clean_labels().unwrap();
                pass &= noisy
                    .labels()
                    .iter()
                    .zip(clean)
                    .all(|(&l, &y)| l == y || l == (y + 1) % c);
            }
            details.push(format!("{kind:?} mu={mu}: rate {rate:.4} (±{bound:.4})"));
        }
    }
    report(3, "noise-model suite", pass, &details.join("; "));
    assert!(pass);
}

#[test]
fn criterion_4_partition() {
    let data = generate_synthetic(13, 4, 1680, 4).unwrap();
    let n = data.len();
    let mut pass = true;
    for seed in 0..100 {
        let plan = dirichlet_partition(&data, 4, 0.5, seed).unwrap();
        let mut seen = vec![0u8; n];
        for a in &plan.assignments {
            pass &= !a.is_empty();
            for &i in a {
                seen[i] += 1;
            }
        }
        pass &= seen.iter().all(|&s| s == 1);
    }
    let plan = dirichlet_partition(&data, 4, 1e6, 9).unwrap();
    let counts = data.class_counts();
    let mut worst = 0.0f64;
    for a in &plan.assignments {
        let mut per_class = [0usize; 13];
        for &i in a {
            per_class[data.labels()[i]] += 1;
        }
        for (k, &cnt) in per_class.iter().enumerate() {
            worst = worst.max((cnt as f64 / counts[k] as f64 - 0.25).abs());
        }
    }
    pass &= worst <= 0.05;
    report(
        4,
        "partition suite",
        pass,
        &format!("100 seeds disjoint/exhaustive/non-empty; gamma=1e6 max share deviation {worst:.4} (<= 0.05)"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_alignment() {
    let start = Instant::now();

    // two-client toy: client 0 aligns to a frozen snapshot of client 1
    let (dim, classes) = (8, 5);
    let reg = ArchitectureRegistry::builtin(dim, classes);
    let data = generate_synthetic(classes, dim, 200, 5).unwrap();
    let (private, public) = data.split(0.4, 1).unwrap();
    let public = public.features().clone();
    let mut a = Client::new(
        0,
        reg.init_model("mlp-shallow", 1).unwrap(),
        private.clone(),
        1e-3,
    );
    let b = Client::new(1, reg.init_model("mlp-deep", 2).unwrap(), private, 1e-3);
    let frozen = b.compute_knowledge(&public, 1, 1.0).unwrap();
    let kl_now = |c: &Client| {
        let own = c.compute_knowledge(&public, 1, 1.0).unwrap();
        kl_divergence(frozen.distribution(), own.distribution()).unwrap()
    };
    let mut kls = vec![kl_now(&a)];
    for _ in 0..10 {
        a.collaborative_update(&[&frozen], &public, 16, 1.0)
            .unwrap();
        kls.push(kl_now(&a));
    }
    let toy_ok = kls.windows(2).all(|w| w[1] < w[0]);

    // full heterogeneous run
    let result = run_federation(&trend_config(1)).unwrap();
    let first = result.per_round[0].mean_pairwise_kl;
    let last = result.per_round[9].mean_pairwise_kl;
    let elapsed = start.elapsed();
    let pass = toy_ok && last < first && elapsed < Duration::from_secs(120);
    report(
        5,
        "alignment property",
        pass,
        &format!(
            "toy KL {:.4} -> {:.4} strictly decreasing={toy_ok}; P=4 mean pairwise KL round1 {first:.4} -> round10 {last:.4}; {:.1}s (< 120s)",
            kls[0],
            kls[10],
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_noise_monotonicity() {
    let start = Instant::now();
    let mus = [0.0, 0.1, 0.2, 0.3];
    // grid cells share the base seed: only the corruption rate differs
    let mut per_mu: Vec<Vec<f64>> = vec![Vec::new(); mus.len()];
    for seed in TREND_SEEDS {
        let cells = run_grid(
            &trend_config(seed),
            &mus,
            &[NoiseKind::Symmetric],
            &[Method::FULL],
        )
        .unwrap();
        for (k, cell) in cells.into_iter().enumerate() {
            per_mu[k].push(cell.result.unwrap().final_row.average_accuracy);
        }
    }
    let medians: Vec<f64> = per_mu.into_iter().map(median).collect();
    let gaps: Vec<f64> = medians.windows(2).map(|w| w[0] - w[1]).collect();
    let elapsed = start.elapsed();
    let pass = gaps.iter().all(|&g| g >= 0.01) && elapsed < Duration::from_secs(600);
    report(
        6,
        "noise monotonicity (symmetric flip, full method, 3-seed median)",
        pass,
        &format!(
            "accuracy at mu=0/0.1/0.2/0.3: {} ; gaps {} (each >= 0.01); {:.1}s (< 600s)",
            medians
                .iter()
                .map(|m| format!("{m:.4}"))
                .collect::<Vec<_>>()
                .join("/"),
            gaps.iter()
                .map(|g| format!("{g:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_method_ablation() {
    let start = Instant::now();
    let mut full = Vec::new();
    let mut ablated = Vec::new();
    for seed in TREND_SEEDS {
        let cells = run_grid(
            &trend_config(seed),
            &[0.3],
            &[NoiseKind::Symmetric],
            &[Method::FULL, Method::CE_LOCAL],
        )
        .unwrap();
        assert_eq!(cells[0].cell.config.seed, cells[1].cell.config.seed);
        let mut it = cells
            .into_iter()
            .map(|c| c.result.unwrap().final_row.average_accuracy);
        full.push(it.next().unwrap());
        ablated.push(it.next().unwrap());
    }
    let (f, a) = (median(full), median(ablated));
    let elapsed = start.elapsed();
    let pass = f - a >= 0.02 && elapsed < Duration::from_secs(900);
    report(
        7,
        "method ablation at mu=0.3 symmetric (3-seed median)",
        pass,
        &format!(
            "full {f:.4} vs ce-local {a:.4}, margin {:.4} (>= 0.02); {:.1}s (< 900s)",
            f - a,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_determinism_and_symmetry() {
    // identical configs -> identical summary.csv bytes
    let mut cfg = trend_config(8);
    cfg.rounds = 2;
    cfg.noise_kind = NoiseKind::Pair;
    cfg.noise_rate = 0.2;
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        emit_metrics(&[run_federation(&cfg).unwrap()], &out).unwrap();
        bytes.push(std::fs::read(out.join("summary.csv")).unwrap());
    }
    let csv_same = bytes[0] == bytes[1];

    // homogeneous clients with identical seeds and data stay identical
    let symmetric_strict = homogeneous_symmetry_strict();

    // client update order does not matter
    let mut perm_cfg = trend_config(9);
    perm_cfg.rounds = 2;
    perm_cfg.noise_kind = NoiseKind::Symmetric;
    perm_cfg.noise_rate = 0.2;
    let mut f1 = Federation::setup(&perm_cfg).unwrap();
    let mut f2 = Federation::setup(&perm_cfg).unwrap();
    for round in 1..=2 {
        f1.run_round_with_order(round, Some(&[0, 1, 2, 3])).unwrap();
        f2.run_round_with_order(round, Some(&[3, 1, 0, 2])).unwrap();
    }
    let order_free = f1
        .clients()
        .iter()
        .zip(f2.clients())
        .all(|(a, b)| a.model().same_parameters(b.model()));

    let pass = csv_same && symmetric_strict && order_free;
    report(
        8,
        "determinism and symmetry",
        pass,
        &format!(
            "summary.csv identical={csv_same}; homogeneous clients bit-identical={symmetric_strict}; \
             order permutation bit-identical={order_free}"
        ),
    );
    assert!(pass);
}

/// Three identical clients driven through one round structure with shared
/// local seeds. The engine seeds each client's shuffle by its id, so the
/// phases are driven here through the client API.
fn homogeneous_symmetry_strict() -> bool {
    let data = generate_synthetic(5, 8, 300, 3).unwrap();
    let (rest, _) = data.split(0.2, 1).unwrap();
    let (private, public) = rest.split(0.3, 2).unwrap();
    let public = public.features().clone();
    let reg = ArchitectureRegistry::builtin(8, 5);
    let mut clients: Vec<Client> = (0..3)
        .map(|id| {
            Client::new(
                id,
                reg.init_model("mlp-deep", 42).unwrap(),
                private.clone(),
                1e-3,
            )
        })
        .collect();
    let objective = LocalObjective::Symmetric { lambda: 0.1 };
    for round in 1..=3 {
        for c in &mut clients {
            c.local_train_epoch(objective, 16, local_epoch_seed(7, round, 0, 0))
                .unwrap();
        }
        let snaps: Vec<_> = clients
            .iter()
            .map(|c| c.compute_knowledge(&public, round, 1.0).unwrap())
            .collect();
        for c in &mut clients {
            let peers: Vec<_> = snaps.iter().filter(|s| s.client_id() != c.id()).collect();
            c.collaborative_update(&peers, &public, 16, 1.0).unwrap();
        }
        if !clients[1..]
            .iter()
            .all(|c| c.model().same_parameters(clients[0].model()))
        {
            return false;
        }
    }
    true
}

#[test]
fn criterion_9_local_only_equivalence() {
    let mut cfg = trend_config(10);
    cfg.rounds = 3;
    cfg.local_epochs = 2;
    cfg.use_collaboration = false;
    cfg.noise_kind = NoiseKind::Symmetric;
    cfg.noise_rate = 0.2;

    let mut fed = Federation::setup(&cfg).unwrap();
    let isolated: Vec<Client> = fed.clients().to_vec();
    fed.run_all(cfg.rounds).unwrap();
    assert!(fed.exchange_log().is_empty());

    let schedule = RoundSchedule::from_config(&cfg);
    let mut all_equal = true;
    for mut client in isolated {
        for round in 1..=cfg.rounds {
            for e in 0..cfg.local_epochs {
                let seed = local_epoch_seed(cfg.seed, round, client.id(), e);
                client
                    .local_train_epoch(schedule.objective, cfg.batch_size, seed)
                    .unwrap();
            }
        }
        all_equal &= client
            .model()
            .same_parameters(fed.clients()[client.id()].model());
    }
    report(
        9,
        "collaboration-disabled run equals P isolated local runs",
        all_equal,
        &format!("{} clients bit-identical={all_equal}", cfg.num_clients),
    );
    assert!(all_equal);
}

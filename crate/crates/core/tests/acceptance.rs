//! Acceptance criteria 1-14. Each test writes one `criterion N PASS|FAIL` line
//! straight to stdout so the summary survives output capture.

use std::collections::HashSet;
use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use polytope_scope::datagen::{
    duffing_trajectory, gen_two_circles, gen_two_moons, pinn_pairs, DuffingParams, LabeledDataset2D,
};
use polytope_scope::dualgraph::{build_dual_graph, fiedler, vertex_weights_from_data, WeightedLaplacianSpec};
use polytope_scope::homology::{
    betti_curves, boundary_matrix, correlation_csv, oracle_curves, persistence, random_filtration,
};
use polytope_scope::nn::{init_network, ArchitectureSpec, DenseLayer, ReluNetwork};
use polytope_scope::polydecomp::{decompose, BoundingBox2D, CellComplex2D, DEFAULT_TOL};
use polytope_scope::sweep::{classification_box, fiedler_partitions, pinn_box, run_sweep, SweepResult, SweepSettings};
use polytope_scope::trainer::{backprop, class_targets, perturb_parameter, train, LossKind, Objective, TrainConfig, TrainingData};

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n:>2} {verdict}: {detail}").unwrap();
    out.flush().unwrap();
}

/// Random hidden widths summing to at most 12, with biases large enough to move
/// hyperplanes away from the origin.
fn random_net(seed: u64) -> ReluNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3usize);
    let mut widths = vec![2];
    let mut budget = 12usize;
    for k in 0..depth {
        let left = depth - k - 1;
        let w = rng.random_range(1..=(budget - left).min(6));
        widths.push(w);
        budget -= w;
    }
    widths.push(rng.random_range(1..=2usize));
    let layers = widths
        .windows(2)
        .map(|w| {
            let weight = (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-0.8..0.8)).collect();
            DenseLayer::new(w[1], w[0], weight, bias).unwrap()
        })
        .collect();
    ReluNetwork::new(layers).unwrap()
}

fn unit_box() -> BoundingBox2D {
    BoundingBox2D::new(-1.5, 1.5, -1.5, 1.5).unwrap()
}

type Decomposed = (ReluNetwork, CellComplex2D);

/// The first `n` of 100 shared random decompositions, and the time it took to build all of them.
fn random_complexes(n: u64) -> (&'static [Decomposed], Duration) {
    static CACHE: OnceLock<(Vec<Decomposed>, Duration)> = OnceLock::new();
    let (all, built) = CACHE.get_or_init(|| {
        let t0 = Instant::now();
        let all = (0..100)
            .into_par_iter()
            .map(|s| {
                let net = random_net(s);
                let c = decompose(&net, &unit_box(), DEFAULT_TOL).unwrap();
                (net, c)
            })
            .collect();
        (all, t0.elapsed())
    });
    (&all[..n as usize], *built)
}

#[test]
fn criterion_01_chain_condition() {
    let t0 = Instant::now();
    let (complexes, built) = random_complexes(100);
    let failures: Vec<usize> = complexes
        .iter()
        .enumerate()
        .filter(|(k, (_, c))| {
            let filt = random_filtration(c, *k as u64);
            !boundary_matrix(c, &filt).is_ok_and(|m| m.check_chain_condition().is_ok())
        })
        .map(|(k, _)| k)
        .collect();
    let pass = failures.is_empty();
    report(1, pass, &format!("100 random nets, boundary of boundary nonzero for {failures:?} ({:.1?} + {built:.1?} decomposing)", t0.elapsed()));
    assert!(pass);
}

#[test]
fn criterion_02_euler_characteristic() {
    let t0 = Instant::now();
    let (complexes, built) = random_complexes(100);
    let bad: Vec<(usize, i64)> = complexes
        .iter()
        .enumerate()
        .map(|(k, (_, c))| (k, c.f_vector().euler()))
        .filter(|&(_, e)| e != 1)
        .collect();
    let elapsed = t0.elapsed() + built;
    let pass = bad.is_empty() && elapsed < Duration::from_secs(60);
    report(2, pass, &format!("f0 - f1 + f2 = 1 on 100 rectangles, violations {bad:?} ({elapsed:.1?})"));
    assert!(pass);
}

#[test]
fn criterion_03_and_04_oracle_and_peaks() {
    let t0 = Instant::now();
    let mut mismatches = Vec::new();
    let mut peak_failures = Vec::new();
    let (complexes, built) = random_complexes(25);
    for (k, (_, c)) in complexes.iter().enumerate() {
        for seed in [k as u64, 1000 + k as u64] {
            let filt = random_filtration(c, seed);
            let pairs = persistence(c, &filt).unwrap();
            let (b0, b1) = betti_curves(&pairs, filt.len());
            let (o0, o1) = oracle_curves(c, &filt);
            if b0 != o0 || b1 != o1 {
                mismatches.push((k, seed));
            }
            let fv = c.f_vector();
            if b0.max() != fv.f0 || b1.max() != fv.f2 {
                peak_failures.push((k, seed, b0.max(), fv.f0, b1.max(), fv.f2));
            }
        }
    }
    let elapsed = t0.elapsed() + built;
    let pass3 = mismatches.is_empty() && elapsed < Duration::from_secs(120);
    report(3, pass3, &format!("50 (complex, seed) pairs, persistence vs union-find mismatches {mismatches:?} ({elapsed:.1?})"));
    let pass4 = peak_failures.is_empty();
    report(4, pass4, &format!("max b0 = f0 and max b1 = f2 on 50 filtrations, failures {peak_failures:?}"));
    assert!(pass3 && pass4);
}

#[test]
fn criterion_05_region_enumeration() {
    let t0 = Instant::now();
    const N: usize = 512;
    let bbox = unit_box();
    let (dx, dy) = (bbox.width() / N as f64, bbox.height() / N as f64);
    let results: Vec<(usize, usize, usize, usize)> = random_complexes(20)
        .0
        .par_iter()
        .map(|(net, c)| {
            let eff = c.effective_network(net);
            let mut seen = HashSet::new();
            for i in 0..N {
                for j in 0..N {
                    let p = [bbox.x_min + (i as f64 + 0.5) * dx, bbox.y_min + (j as f64 + 0.5) * dy];
                    seen.insert(eff.binary_state_vector(&p).unwrap());
                }
            }
            let unknown = seen.iter().filter(|s| !c.face_by_pattern.contains_key(*s)).count();
            let big: Vec<usize> =
                (0..c.faces.len()).filter(|&f| c.face_area(f) > 4.0 * dx * dy).collect();
            let missed = big.iter().filter(|&&f| !seen.contains(&c.faces[f].sign.to_pattern())).count();
            (seen.len(), unknown, big.len(), missed)
        })
        .collect();
    let elapsed = t0.elapsed();
    let unknown: usize = results.iter().map(|r| r.1).sum();
    let missed: usize = results.iter().map(|r| r.3).sum();
    let big: usize = results.iter().map(|r| r.2).sum();
    let pass = unknown == 0 && missed == 0 && elapsed < Duration::from_secs(60);
    report(
        5,
        pass,
        &format!(
            "20 nets on a {N}x{N} grid: {unknown} grid patterns outside the complex, {missed} of {big} faces larger than 4 grid cells unseen ({elapsed:.1?})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_affine_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut faces = 0;
    for (net, c) in random_complexes(100).0 {
        let eff = c.effective_network(net);
        for (f, face) in c.faces.iter().enumerate() {
            let map = eff.input_jacobian(&face.sign.to_pattern()).unwrap();
            let poly = c.face_polygon(f);
            let centroid = c.face_centroid(f);
            for _ in 0..5 {
                let mut w: Vec<f64> = (0..poly.len()).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                let mut p = [0.0; 2];
                for (q, wi) in poly.iter().zip(&w) {
                    p[0] += wi * q[0];
                    p[1] += wi * q[1];
                }
                // Pull toward the centroid to stay off the boundary.
                let p = [0.5 * (p[0] + centroid[0]), 0.5 * (p[1] + centroid[1])];
                let direct = eff.predict(&p).unwrap();
                let affine = map.apply(&p);
                for (a, b) in direct.iter().zip(&affine) {
                    worst = worst.max((a - b).abs() / a.abs().max(1.0));
                }
            }
            faces += 1;
        }
    }
    let pass = worst <= 1e-8;
    report(6, pass, &format!("{faces} faces x 5 interior samples, worst deviation {worst:.2e}"));
    assert!(pass);
}

fn min_abs_preactivation(net: &ReluNetwork, x: &[f64]) -> f64 {
    net.flat_preactivations(x)
        .unwrap()
        .iter()
        .fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// Worst relative error of the analytic gradient against central differences.
fn gradient_error(net: &ReluNetwork, objective: &Objective) -> f64 {
    const H: f64 = 1e-5;
    let (_, grads) = backprop(net, objective).unwrap();
    let analytic = grads.flatten();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let up = backprop(&perturb_parameter(net, k, H), objective).unwrap().0;
        let down = backprop(&perturb_parameter(net, k, -H), objective).unwrap().0;
        let fd = (up - down) / (2.0 * H);
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
    }
    worst
}

#[test]
fn criterion_07_gradient_checks() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = [0.0f64; 3];
    for seed in 0..5u64 {
        let spec = ArchitectureSpec::new(vec![2, 5, 4, 2]).unwrap();
        let net = init_network(&spec, seed).with_bias_jitter(0.3, seed);
        let inputs: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .filter(|x| min_abs_preactivation(&net, x) > 1e-3)
            .collect();
        let labels: Vec<u8> = inputs.iter().map(|x| u8::from(x[0] * x[1] > 0.0)).collect();
        let targets = class_targets(&labels, 2);
        worst[0] = worst[0].max(gradient_error(&net, &Objective::BceWithLogits { inputs: &inputs, targets: &targets }));
        let reals: Vec<Vec<f64>> =
            inputs.iter().map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        worst[1] = worst[1].max(gradient_error(&net, &Objective::Mse { inputs: &inputs, targets: &reals }));

        let pspec = ArchitectureSpec::new(vec![2, 6, 6, 1]).unwrap();
        let pnet = init_network(&pspec, seed).with_bias_jitter(0.3, seed);
        let params = DuffingParams::default();
        let traj = duffing_trajectory(&params, 60, 0.1).unwrap();
        let mut pairs = pinn_pairs(&traj).unwrap();
        let keep: Vec<bool> = pairs.inputs.iter().map(|p| min_abs_preactivation(&pnet, p) > 1e-3).collect();
        let mut it = keep.iter();
        pairs.inputs.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        pairs.targets.retain(|_| *it.next().unwrap());
        worst[2] = worst[2].max(gradient_error(&pnet, &Objective::PinnDuffing { pairs: &pairs, params }));
    }
    let elapsed = t0.elapsed();
    let pass = worst.iter().all(|&w| w < 1e-4) && elapsed < Duration::from_secs(60);
    report(
        7,
        pass,
        &format!(
            "worst relative error BCE {:.1e}, MSE {:.1e}, PINN {:.1e} over 5 nets ({elapsed:.1?})",
            worst[0], worst[1], worst[2]
        ),
    );
    assert!(pass);
}

/// `‖∂ᵀ W_E ∂ v - λ W_V v‖∞ / ‖v‖∞` from the coboundary rows.
fn eigen_residual(g: &polytope_scope::dualgraph::DualGraph, spec: &WeightedLaplacianSpec, value: f64, v: &[f64]) -> f64 {
    let mut lv = vec![0.0; v.len()];
    for (k, &(a, b)) in g.edges.iter().enumerate() {
        let d = spec.edge_weights[k] * (v[b] - v[a]);
        lv[a] -= d;
        lv[b] += d;
    }
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    lv.iter()
        .zip(v)
        .zip(&spec.vertex_weights)
        .map(|((l, x), w)| (l - value * w * x).abs())
        .fold(0.0, f64::max)
        / vmax
}

#[test]
fn criterion_08_spectral_checks() {
    let ds = gen_two_circles(80, 0.5, 1.0, 0.05, 8).unwrap();
    let pts = ds.train_points();
    let mut worst = [0.0f64; 3];
    let mut kernel_mismatch = Vec::new();
    let mut checked = 0;
    for (k, (net, c)) in random_complexes(30).0.iter().enumerate() {
        let g = build_dual_graph(c);
        if g.node_count() < 2 {
            continue;
        }
        let unw = WeightedLaplacianSpec::unweighted(&g);
        let wtd = vertex_weights_from_data(c, net, &pts).unwrap();
        for (spec, weighted) in [(&unw, false), (&wtd, true)] {
            let f = match fiedler(&g, spec) {
                Ok(f) => f,
                Err(_) if g.component_count() == g.node_count() => continue,
                Err(e) => panic!("complex {k}: {e}"),
            };
            if !weighted && f.kernel_dim != g.component_count() {
                kernel_mismatch.push((k, f.kernel_dim, g.component_count()));
            }
            worst[0] = worst[0].max(eigen_residual(&g, spec, f.value, &f.vector));
            let dot: f64 = f.vector.iter().zip(&spec.vertex_weights).map(|(v, w)| v * w).sum();
            let slot = if weighted { 2 } else { 1 };
            worst[slot] = worst[slot].max(dot.abs());
        }
        checked += 1;
    }
    let pass = kernel_mismatch.is_empty() && worst.iter().all(|&w| w < 1e-8);
    report(
        8,
        pass,
        &format!(
            "{checked} dual graphs: kernel mismatches {kernel_mismatch:?}, residual {:.1e}, unweighted sum {:.1e}, weighted sum {:.1e}",
            worst[0], worst[1], worst[2]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_duffing_energy() {
    let p = DuffingParams::default();
    let traj = duffing_trajectory(&p, 20_001, 0.001).unwrap();
    let h0 = p.energy(0.0, 1.0);
    let drift = traj
        .positions
        .iter()
        .zip(&traj.velocities)
        .map(|(&x, &v)| (p.energy(x, v) - h0).abs())
        .fold(0.0, f64::max);
    let end = *traj.times.last().unwrap();
    let pass = h0 == 0.5 && drift < 1e-6 && (end - 20.0).abs() < 1e-9;
    report(9, pass, &format!("RK4 dt = 0.001 to t = {end}, H(0) = {h0}, max |dH| = {drift:.2e}"));
    assert!(pass);
}

struct ClassificationRun {
    seed: u64,
    test_accuracy: f64,
    unweighted: f64,
    weighted: f64,
    elapsed: Duration,
}

impl ClassificationRun {
    fn passes(&self) -> bool {
        self.test_accuracy == 1.0
            && self.weighted == 0.0
            && self.weighted <= self.unweighted
            && self.unweighted > 0.0
            && self.elapsed <= Duration::from_secs(600)
    }
}

fn classification_runs(make: fn(u64) -> LabeledDataset2D, arch: &[usize], epochs: usize) -> Vec<ClassificationRun> {
    (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let t0 = Instant::now();
            let ds = make(seed);
            let net = init_network(&ArchitectureSpec::new(arch.to_vec()).unwrap(), seed);
            let cfg = TrainConfig::new(epochs, LossKind::BceWithLogits, epochs, seed);
            let out = train(&net, &TrainingData::Classification(ds.clone()), &cfg, None).unwrap();
            let c = decompose(&out.network, &classification_box(&ds).unwrap(), DEFAULT_TOL).unwrap();
            let p = fiedler_partitions(&c, &out.network, &ds).unwrap();
            ClassificationRun {
                seed,
                test_accuracy: out.logs.last().unwrap().test_accuracy.unwrap(),
                unweighted: p.unweighted.misclassified_fraction,
                weighted: p.weighted.misclassified_fraction,
                elapsed: t0.elapsed(),
            }
        })
        .collect()
}

fn classification_criterion(n: u32, name: &str, runs: &[ClassificationRun]) {
    let passing = runs.iter().filter(|r| r.passes()).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {} acc {:.0}% unweighted {:.1}% weighted {:.1}% ({:.0?})",
                r.seed,
                100.0 * r.test_accuracy,
                100.0 * r.unweighted,
                100.0 * r.weighted,
                r.elapsed
            )
        })
        .collect();
    let pass = passing >= 3;
    report(n, pass, &format!("{name}: {passing}/5 seeds meet the bar; {}", detail.join("; ")));
    assert!(pass, "{passing} of 5 seeds passed");
}

#[test]
fn criterion_10_circles_partition() {
    let runs = classification_runs(|s| gen_two_circles(200, 0.5, 1.0, 0.05, s).unwrap(), &[2, 6, 6, 2], 4000);
    classification_criterion(10, "circles (2,6,6,2)", &runs);
}

#[test]
fn criterion_11_moons_partition() {
    let runs = classification_runs(|s| gen_two_moons(200, 0.05, s).unwrap(), &[2, 5, 5, 5, 2], 2000);
    classification_criterion(11, "moons (2,5,5,5,2)", &runs);
}

struct PinnRun {
    seed: u64,
    sweep: SweepResult,
    elapsed: Duration,
}

fn pinn_runs() -> &'static [PinnRun] {
    static RUNS: OnceLock<Vec<PinnRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..5u64)
            .into_par_iter()
            .map(|seed| {
                let t0 = Instant::now();
                let params = DuffingParams::default();
                let traj = duffing_trajectory(&params, 200, 0.1).unwrap();
                let pairs = pinn_pairs(&traj).unwrap();
                let spec = ArchitectureSpec::new(vec![2, 16, 16, 16, 16, 1]).unwrap();
                let cfg = TrainConfig::new(10_000, LossKind::PinnDuffing, 500, seed);
                let out = train(&init_network(&spec, seed), &TrainingData::Pinn { pairs, params }, &cfg, None).unwrap();
                let settings = SweepSettings {
                    base_seed: seed,
                    ..Default::default()
                };
                let sweep = run_sweep(&out.checkpoints, &pinn_box(&traj).unwrap(), &settings, None).unwrap();
                PinnRun {
                    seed,
                    sweep,
                    elapsed: t0.elapsed(),
                }
            })
            .collect()
    })
}

fn within(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.max(b)
}

#[test]
fn criterion_12_pinn_f_vector() {
    let runs = pinn_runs();
    let mut shrinking = 0;
    let mut ratio_failures = Vec::new();
    let mut detail = Vec::new();
    let mut slow = false;
    for r in runs {
        let a = &r.sweep.analyses;
        let (first, last) = (a[0].f_vector, a[a.len() - 1].f_vector);
        if last.f0 < first.f0 {
            shrinking += 1;
        }
        let mut large = 0;
        for x in a.iter().filter(|x| x.f_vector.total() >= 1000) {
            large += 1;
            let fv = x.f_vector;
            let (f0, f1, f2) = (fv.f0 as f64, fv.f1 as f64 / 2.0, fv.f2 as f64);
            if !(within(f0, f2, 0.1) && within(f0, f1, 0.1) && within(f2, f1, 0.1)) {
                ratio_failures.push((r.seed, x.epoch, fv.f0, fv.f1, fv.f2));
            }
        }
        slow |= r.elapsed > Duration::from_secs(1800);
        detail.push(format!(
            "seed {} f0 {} -> {}, {large} checkpoints with >= 1000 cells ({:.0?})",
            r.seed, first.f0, last.f0, r.elapsed
        ));
    }
    let pass = shrinking >= 3 && ratio_failures.is_empty() && !slow;
    report(
        12,
        pass,
        &format!(
            "final f0 below initial in {shrinking}/5 seeds; ratio violations {ratio_failures:?}; {}",
            detail.join("; ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_13_beta0_peak_moves_earlier() {
    let runs = pinn_runs();
    let mut detail = Vec::new();
    let mut earlier = 0;
    for r in runs {
        let crit = &r.sweep.heat.as_ref().unwrap().critical;
        let (first, last) = (crit[0].normalized[0], crit[crit.len() - 1].normalized[0]);
        if last < first {
            earlier += 1;
        }
        detail.push(format!("seed {} {:.1}% -> {:.1}%", r.seed, 100.0 * first, 100.0 * last));
    }
    let pass = earlier == runs.len();
    report(
        13,
        pass,
        &format!("normalized b0 peak position, epoch 0 -> final: {}", detail.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_14_loss_critical_correlation_csv() {
    let runs = pinn_runs();
    let dir = tempfile::tempdir().unwrap();
    let mut detail = Vec::new();
    let mut ok = true;
    for r in runs {
        let csv = correlation_csv(&r.sweep.correlation);
        let path = dir.path().join(format!("correlation_{}.csv", r.seed));
        std::fs::write(&path, &csv).unwrap();
        let back = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<Vec<&str>> = back.lines().skip(1).map(|l| l.split(',').collect()).collect();
        let values: Vec<f64> = rows.iter().filter_map(|r| r[2].parse::<f64>().ok()).collect();
        ok &= back.starts_with("dim,n_deltas,pearson\n")
            && rows.len() == 2
            && values.len() == 2
            && values.iter().all(|v| v.is_finite() && v.abs() <= 1.0);
        detail.push(format!(
            "seed {} r(b0) {:+.3} r(b1) {:+.3}",
            r.seed,
            values.first().copied().unwrap_or(f64::NAN),
            values.get(1).copied().unwrap_or(f64::NAN)
        ));
    }
    report(14, ok, &format!("correlation.csv written per seed: {}", detail.join("; ")));
    assert!(ok);
}

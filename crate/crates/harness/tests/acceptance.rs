//! End-to-end acceptance checks. Each check prints one PASS or FAIL line with
//! its measured values and wall time; the process exits non-zero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p eon-harness --test acceptance -- 6 7`.

use std::time::{Duration, Instant};

use eon_core::adversarial::{find_adversarial, solve_x_given_gamma, AdversarialOptions};
use eon_core::datagen::{data_complexity, kolmogorov_complexity, SyntheticSpec};
use eon_core::inference::predict;
use eon_core::simplex::{monte_carlo_lipschitz, softmax_lipschitz_bound, BlockVector, ProbVector};
use eon_core::training::{
    assemble_b_matrix, assemble_b_t, check_contraction, check_uniqueness, fit, loss, solve_gamma0, solve_gamma_point,
    solve_s, solve_theta, sweep, Dataset, FitOptions, GammaStack, LastLayer,
};
use eon_core::{AMatrices, EonModel, Gamma0, Gamma0Mode, Hyperparameters};
use eon_harness::{run_cv_on, CvMode, DataSource, ExperimentConfig, FitSettings, Grid, Metric, Splits};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Check = fn() -> Outcome;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_simplex(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn random_stochastic(r: &mut ChaCha8Rng, rows: usize, cols: usize, floor: f64) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for j in 0..cols {
        let p = random_simplex(r, rows);
        let free = 1.0 - rows as f64 * floor;
        for i in 0..rows {
            m[[i, j]] = floor + free * p[i];
        }
    }
    m
}

fn random_gamma0(r: &mut ChaCha8Rng, mode: Gamma0Mode, k0: usize, t: usize) -> Gamma0 {
    match mode {
        Gamma0Mode::FixedUniform => Gamma0::FixedUniform,
        Gamma0Mode::FeatureWeights => Gamma0::FeatureWeights { w: random_simplex(r, k0) },
        Gamma0Mode::Rank1 => Gamma0::Rank1 { w: random_simplex(r, k0), s: random_simplex(r, t) },
        Gamma0Mode::FullMatrix => Gamma0::FullMatrix {
            weights: Array2::from_shape_vec((k0, t), random_simplex(r, k0 * t)).unwrap(),
        },
    }
}

fn random_hyper(r: &mut ChaCha8Rng, dims: Vec<usize>, mode: Gamma0Mode) -> Hyperparameters {
    let mut h = Hyperparameters::new(dims, mode);
    let depth = h.depth();
    h.epsilon = (0..depth + 2).map(|_| 10f64.powf(r.random_range(-3.0..0.0))).collect();
    h.delta = (0..depth).map(|_| 10f64.powf(r.random_range(-2.0..0.0))).collect();
    h
}

fn random_model(r: &mut ChaCha8Rng, hyper: Hyperparameters, t: usize) -> EonModel {
    let dims = hyper.layer_dims.clone();
    let floor = hyper.theta_floor;
    EonModel {
        s: Array2::from_shape_fn((dims[0], dims[1]), |_| r.random::<f64>()),
        theta: dims[1..].windows(2).map(|p| random_stochastic(r, p[0], p[1], floor)).collect(),
        gamma0: random_gamma0(r, hyper.gamma0_mode, dims[0], t),
        hyper,
        train_size: t,
    }
}

fn random_dataset(r: &mut ChaCha8Rng, t: usize, k0: usize, classes: usize) -> Dataset {
    let x = Array2::from_shape_fn((t, k0), |_| r.random::<f64>());
    let labels: Vec<usize> = (0..t).map(|i| if i < classes { i } else { r.random_range(0..classes) }).collect();
    Dataset::from_labels(x, &labels, classes).unwrap()
}

fn random_gammas(r: &mut ChaCha8Rng, dims: &[usize], pi: &Array2<f64>) -> GammaStack {
    let t = pi.nrows();
    let mut g = GammaStack::for_training(dims, pi);
    let hidden = g.layers.len() - 1;
    for layer in g.layers.iter_mut().take(hidden) {
        for i in 0..t {
            for (k, v) in random_simplex(r, layer.ncols()).into_iter().enumerate() {
                layer[[i, k]] = v;
            }
        }
    }
    g
}

fn random_row(r: &mut ChaCha8Rng, dims: &[usize]) -> BlockVector {
    BlockVector::new(dims.iter().map(|&k| random_simplex(r, k)).collect())
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

fn monotone_training() -> Outcome {
    let mut r = rng(1);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut iterations = 0;
    for instance in 0..100u64 {
        let t = r.random_range(10..=500);
        let k0 = r.random_range(1..=8);
        let classes = r.random_range(2..=8);
        let depth = r.random_range(1..=2);
        let mut dims = vec![k0];
        dims.extend((0..depth).map(|_| r.random_range(1..=8)));
        dims.push(classes);
        let mode = Gamma0Mode::ALL[r.random_range(0..Gamma0Mode::ALL.len())];
        let data = random_dataset(&mut r, t, k0, classes);
        let mut hyper = random_hyper(&mut r, dims, mode);
        hyper.max_outer_iters = 60;
        hyper.seed = instance;
        let opts = FitOptions { track_contraction: false, ..Default::default() };
        match fit(&data, &hyper, &opts) {
            Ok((_, trace)) => {
                iterations += trace.iterations.len();
                let rise = trace.losses().windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(rise);
                if !trace.is_monotone(1e-10) {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    Outcome::new(
        failures == 0,
        format!("100 fits, {iterations} outer iterations, {failures} violations, largest step increase {worst:.3e}"),
    )
}

/// Minimum of `f` over `p in [lo, hi]` on a grid with the given step.
fn grid_min(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| f(lo + (hi - lo) * i as f64 / n as f64)).fold(f64::INFINITY, f64::min)
}

fn block_optimality() -> Outcome {
    // The loss separates over codebook entries, conditional-matrix columns,
    // Gamma rows and the two-entry weight vector, so each grid search runs
    // over one coordinate of the feasible set at a time.
    const STEP: f64 = 1e-3;
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let t = 4;
    for _ in 0..10 {
        let data = random_dataset(&mut r, t, 2, 2);
        let x = data.x();
        let hyper = random_hyper(&mut r, vec![2, 2, 2], Gamma0Mode::FeatureWeights);
        let mut model = random_model(&mut r, hyper, t);
        let mut g = random_gammas(&mut r, &model.hyper.layer_dims, data.pi());

        model.s = solve_s(&g, &model.gamma0, x, &model.s);
        let analytic = loss(&g, &model, x).unwrap();
        for d in 0..2 {
            for k in 0..2 {
                let best = grid_min(-0.5, 1.5, STEP, |v| {
                    let mut m = model.clone();
                    m.s[[d, k]] = v;
                    loss(&g, &m, x).unwrap()
                });
                worst = worst.max((analytic - best).abs());
            }
        }

        model.theta = solve_theta(&g, model.hyper.theta_floor).into_iter().map(|m| m.into_array()).collect();
        let analytic = loss(&g, &model, x).unwrap();
        let floor = model.hyper.theta_floor;
        for j in 0..2 {
            let best = grid_min(floor, 1.0 - floor, STEP, |p| {
                let mut m = model.clone();
                m.theta[0][[0, j]] = p;
                m.theta[0][[1, j]] = 1.0 - p;
                loss(&g, &m, x).unwrap()
            });
            worst = worst.max((analytic - best).abs());
        }

        let a = AMatrices::from_theta(&model.theta, &model.hyper.delta, floor);
        for i in 0..t {
            let mut col = vec![0.0; 2];
            model.gamma0.column_into(i, t, &mut col);
            let b = assemble_b_t(x.row(i).as_slice().unwrap(), &model.s, &col);
            let pin = data.pi().row(i).to_vec();
            let sol = solve_gamma_point(&b, &a, &model.hyper.epsilon, LastLayer::Pinned(&pin), g.row(i), 100, 1e-15)
                .unwrap();
            g.set_row(i, &sol.row);
        }
        let analytic = loss(&g, &model, x).unwrap();
        for i in 0..t {
            let best = grid_min(0.0, 1.0, STEP, |p| {
                let mut g2 = g.clone();
                g2.layers[0][[i, 0]] = p;
                g2.layers[0][[i, 1]] = 1.0 - p;
                loss(&g2, &model, x).unwrap()
            });
            worst = worst.max((analytic - best).abs());
        }

        let b = assemble_b_matrix(g.gamma1(), &model.s, x);
        model.gamma0 = solve_gamma0(&model.gamma0, &b, model.hyper.epsilon[0]).unwrap();
        let analytic = loss(&g, &model, x).unwrap();
        let best = grid_min(0.0, 1.0, STEP, |p| {
            let mut m = model.clone();
            m.gamma0 = Gamma0::FeatureWeights { w: vec![p, 1.0 - p] };
            loss(&g, &m, x).unwrap()
        });
        worst = worst.max((analytic - best).abs());
    }
    Outcome::new(
        worst <= 2e-3,
        format!("10 instances, S/theta/Gamma/gamma0 blocks; largest |analytic - grid minimum| {worst:.3e}"),
    )
}

fn fixed_point_contract() -> Outcome {
    let mut r = rng(3);
    let mut instances = 0;
    let mut checked = 0;
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    let mut attempts = 0;
    while instances < 100 && attempts < 10_000 {
        attempts += 1;
        let depth = r.random_range(1..=2);
        let mut dims = vec![r.random_range(1..=4)];
        dims.extend((0..=depth).map(|_| r.random_range(2..=6)));
        let hyper = random_hyper(&mut r, dims.clone(), Gamma0Mode::FixedUniform);
        let model = random_model(&mut r, hyper, 1);
        let a = model.build_a_matrices().unwrap();
        let scale = a.spectral_norms().unwrap().into_iter().fold(0.0, f64::max).max(1e-3);
        let mut eps = vec![1.0];
        eps.extend((0..=depth).map(|_| scale * 10f64.powf(r.random_range(0.0..1.5))));
        let c = check_contraction(&eps, &a, &dims).unwrap();
        if !c.holds {
            continue;
        }
        instances += 1;
        let b: Vec<f64> = (0..dims[1]).map(|_| r.random::<f64>()).collect();
        let init = random_row(&mut r, &dims[1..]);
        let exact =
            solve_gamma_point(&b, &a, &eps, LastLayer::Free, init.clone(), 1_000_000, 1e-15).unwrap().row;
        let mut iterate = init.clone();
        sweep(&mut iterate, &b, &a, &eps, LastLayer::Free).unwrap();
        let first_step = init.distance(&iterate);
        let mut current = init;
        for it in 0..200 {
            let bound = c.l_tilde.powi(it) / (1.0 - c.l_tilde) * first_step;
            let err = current.distance(&exact);
            checked += 1;
            if err > bound + 1e-12 {
                violations += 1;
            }
            if bound > 0.0 {
                tightest = tightest.min((bound - err) / bound);
            }
            if err < 1e-13 {
                break;
            }
            sweep(&mut current, &b, &a, &eps, LastLayer::Free).unwrap();
        }
    }
    Outcome::new(
        instances == 100 && violations == 0,
        format!("{instances} contracting instances, {checked} iterates checked, {violations} above the bound, smallest relative slack {tightest:.3e}"),
    )
}

fn lipschitz_bound() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut exceed = Vec::new();
    for k in 2..=64 {
        let est = monte_carlo_lipschitz(k, 100_000, k as u64).unwrap();
        let bound = softmax_lipschitz_bound(k).unwrap();
        worst_ratio = worst_ratio.max(est / bound);
        if est > bound {
            exceed.push(k);
        }
    }
    Outcome::new(
        exceed.is_empty(),
        format!("K = 2..64, 1e5 pairs each; largest estimate / (K-1)/K = {worst_ratio:.6}, exceeded for {exceed:?}"),
    )
}

fn uniqueness() -> Outcome {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    let mut instances = 0;
    while instances < 50 {
        let depth = r.random_range(1..=2);
        let mut dims = vec![r.random_range(1..=4)];
        dims.extend((0..=depth).map(|_| r.random_range(2..=6)));
        let hyper = random_hyper(&mut r, dims.clone(), Gamma0Mode::FixedUniform);
        let model = random_model(&mut r, hyper, 1);
        let a = model.build_a_matrices().unwrap();
        let threshold = check_uniqueness(&model.hyper.epsilon, &a).unwrap().threshold;
        let mut eps = vec![1.0];
        eps.extend((0..=depth).map(|_| threshold * r.random_range(1.05..3.0)));
        if !check_uniqueness(&eps, &a).unwrap().holds {
            continue;
        }
        instances += 1;
        let b: Vec<f64> = (0..dims[1]).map(|_| r.random::<f64>()).collect();
        let mut first: Option<BlockVector> = None;
        for _ in 0..50 {
            let init = random_row(&mut r, &dims[1..]);
            let sol = solve_gamma_point(&b, &a, &eps, LastLayer::Free, init, 1_000_000, 1e-13).unwrap();
            if !sol.converged {
                unconverged += 1;
            }
            match &first {
                None => first = Some(sol.row),
                Some(f) => worst = worst.max(f.distance(&sol.row)),
            }
        }
    }
    Outcome::new(
        worst <= 1e-6 && unconverged == 0,
        format!("50 instances x 50 starts; largest distance between fixed points {worst:.3e}, {unconverged} unconverged"),
    )
}

fn cv_config(spec: SyntheticSpec, splits: Splits, folds: usize, grid: Grid, restarts: usize) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(DataSource::Synthetic(spec));
    config.splits = splits;
    config.folds = folds;
    config.grid = grid;
    config.fit = FitSettings { restarts, ..FitSettings::default() };
    config.seed = 7;
    config.metric = Metric::Accuracy;
    config.mode = CvMode::Flat;
    config.weight_threshold = 1e-3;
    config
}

fn bioinformatics() -> Outcome {
    let spec = SyntheticSpec::bioinformatics(600, 11);
    let data = spec.generate().unwrap();
    let grid = Grid {
        hidden: vec![vec![3]],
        delta: vec![1e-5, 1e-4, 1e-3],
        eps0: vec![1e-3, 5e-3],
        eps1: vec![1e-12, 1e-6, 1e-5],
        gamma0: vec![Gamma0Mode::FeatureWeights],
    };
    let config = cv_config(spec, Splits::counts(520, 30, 50), 20, grid, 10);
    let table = match run_cv_on(&data, &config) {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, format!("cross-validation failed: {e}")),
    };
    let mean = table.mean_test().unwrap_or(0.0);
    let kc = kolmogorov_complexity(&spec).unwrap();
    let lengths: Vec<usize> = table.summaries.iter().filter_map(|s| s.descriptor_length).collect();
    let exact = lengths.iter().filter(|&&l| l == 15).count();
    let mut sorted = lengths.clone();
    sorted.sort_unstable();
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0);
    let masses: Vec<f64> = table.summaries.iter().map(|s| s.feature_weights.iter().take(2).sum::<f64>()).collect();
    let min_mass = masses.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_mass = masses.iter().sum::<f64>() / masses.len().max(1) as f64;
    let concentrated = masses.iter().filter(|&&m| m >= 0.8).count();
    let pass = table.summaries.len() == 20 && mean >= 0.90 && exact == 20 && kc == 13 && concentrated == 20;
    Outcome::new(
        pass,
        format!(
            "mean test accuracy {mean:.4}; descriptor length 15 in {exact}/20 folds (median {median}); KC {kc}; \
             mass on dims 1-2: mean {mean_mass:.4}, min {min_mass:.4}, >= 0.8 in {concentrated}/20 folds"
        ),
    )
}

fn stacked_gaussians() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for objects in 3..=5 {
        let spec = SyntheticSpec::stacked_gaussians(10, objects, 1000, 100 + objects as u64);
        let data = spec.generate().unwrap();
        let grid = Grid {
            hidden: vec![vec![objects]],
            delta: vec![1e-5, 1e-4],
            eps0: vec![1e-3],
            eps1: vec![1e-12, 1e-6],
            gamma0: vec![Gamma0Mode::FeatureWeights],
        };
        let config = cv_config(spec, Splits::default(), 10, grid, 20);
        let table = match run_cv_on(&data, &config) {
            Ok(t) => t,
            Err(e) => return Outcome::new(false, format!("K = {objects}: cross-validation failed: {e}")),
        };
        let (train, _, _) = config.splits.resolve(data.len()).unwrap();
        let mean = table.mean_test().unwrap_or(0.0);
        let kc = kolmogorov_complexity(&spec).unwrap();
        let dc = data_complexity(train, 10).unwrap();
        let max_len = table.summaries.iter().filter_map(|s| s.descriptor_length).max().unwrap_or(usize::MAX);
        let ok = table.summaries.len() == 10 && mean >= 0.95 && max_len <= dc && max_len <= 3 * kc;
        pass &= ok;
        lines.push(format!("K={objects}: accuracy {mean:.4}, max DL {max_len} (KC {kc}, DC {dc})"));
    }
    Outcome::new(pass, lines.join("; "))
}

fn complexity_scaling() -> Outcome {
    let sizes = [1_000usize, 3_000, 10_000, 30_000, 100_000];
    let mut r = rng(8);
    let mut points = Vec::new();
    for &t in &sizes {
        let data = random_dataset(&mut r, t, 10, 2);
        let mut hyper = Hyperparameters::new(vec![10, 8, 2], Gamma0Mode::FeatureWeights);
        hyper.epsilon = vec![1e-3, 1e-4, 1e-4];
        hyper.delta = vec![1e-4];
        hyper.tolerance = 1e-300;
        hyper.max_outer_iters = 5;
        let opts = FitOptions { track_contraction: false, ..Default::default() };
        // Best of three keeps scheduler noise out of the small sizes.
        let secs = (0..3)
            .map(|_| fit(&data, &hyper, &opts).unwrap().1.mean_iteration_secs())
            .fold(f64::INFINITY, f64::min);
        points.push((t as f64, secs));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    let timings: Vec<String> = points.iter().map(|(t, s)| format!("{t:.0}:{:.2}ms", s * 1e3)).collect();
    Outcome::new(r2 >= 0.95, format!("R^2 {r2:.4}; per-iteration time {}", timings.join(" ")))
}

fn adversarial_contract() -> Outcome {
    let mut hyper = Hyperparameters::new(vec![2, 2, 2], Gamma0Mode::FeatureWeights);
    hyper.epsilon = vec![1e-2, 1e-2, 1e-2];
    hyper.delta = vec![1e-2];
    let model = EonModel {
        s: array![[0.25, 0.75], [0.5, 0.5]],
        theta: vec![array![[0.95, 0.05], [0.05, 0.95]]],
        gamma0: Gamma0::FeatureWeights { w: vec![0.5, 0.5] },
        hyper,
        train_size: 50,
    };
    let res = match find_adversarial(&model, &AdversarialOptions::default()) {
        Ok(res) => res,
        Err(e) => return Outcome::new(false, format!("search failed: {e}")),
    };
    let midpoint = [0.5, 0.5];
    let offset = res.x_adv.iter().zip(midpoint).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let g1 = ProbVector::try_new(res.gamma_stack.blocks[0].clone()).unwrap();
    let back = solve_x_given_gamma(&g1, &model.s).unwrap();
    let identity = back.iter().zip(&res.x_adv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut r = rng(9);
    let mut probe_max: f64 = 0.0;
    for _ in 0..1000 {
        let probe = [r.random::<f64>(), r.random::<f64>()];
        let p = predict(&model, &probe).unwrap();
        let h = -p.label_dist.as_slice().iter().map(|&v| xlogx(v)).sum::<f64>() / 2f64.ln();
        probe_max = probe_max.max(h);
    }
    let pass = offset <= 1e-6 && identity <= 1e-10 && res.final_label_entropy >= probe_max;
    Outcome::new(
        pass,
        format!(
            "distance to midpoint {offset:.3e}; |x - S gamma1| {identity:.3e}; entropy {:.9} vs probe max {probe_max:.9}",
            res.final_label_entropy
        ),
    )
}

/// The single-layer entropic objective written in its own notation: weights
/// `w`, affiliations `gamma` (K x T), classifier `lambda` (M x K, columns on
/// the simplex) and labels `pi` (M x T).
#[allow(clippy::too_many_arguments)]
fn espa_objective(
    x: &Array2<f64>,
    s: &Array2<f64>,
    w: &[f64],
    gamma: &Array2<f64>,
    lambda: &Array2<f64>,
    pi: &Array2<f64>,
    eps_w: f64,
    eps_cl: f64,
) -> f64 {
    let (t_len, dims) = x.dim();
    let mut discretization = 0.0;
    let mut classification = 0.0;
    for t in 0..t_len {
        for k in 0..s.ncols() {
            let dist: f64 = (0..dims).map(|d| w[d] * (x[[t, d]] - s[[d, k]]).powi(2)).sum();
            discretization += gamma[[k, t]] * dist;
            for m in 0..lambda.nrows() {
                classification += pi[[m, t]] * gamma[[k, t]] * lambda[[m, k]].ln();
            }
        }
    }
    discretization / t_len as f64 + eps_w * w.iter().map(|&v| xlogx(v)).sum::<f64>()
        - eps_cl / t_len as f64 * classification
}

fn espa_reduction() -> Outcome {
    let mut r = rng(10);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = r.random_range(5..=200);
        let k0 = r.random_range(2..=6);
        let k1 = r.random_range(2..=6);
        let classes = r.random_range(2..=4);
        let data = random_dataset(&mut r, t, k0, classes);
        let eps_w = 10f64.powf(r.random_range(-3.0..0.0));
        let eps_cl = 10f64.powf(r.random_range(-3.0..0.0));

        let mut hyper = Hyperparameters::new(vec![k0, k1, classes], Gamma0Mode::FeatureWeights);
        let total_log = ((k0 * t) as f64).ln();
        hyper.epsilon = vec![eps_w * total_log / (k0 as f64).ln(), 1e-300, 1e-300];
        hyper.delta = vec![eps_cl / t as f64];
        let model = random_model(&mut r, hyper, t);
        let g = random_gammas(&mut r, &model.hyper.layer_dims, data.pi());

        let Gamma0::FeatureWeights { w } = &model.gamma0 else { unreachable!() };
        let gamma = g.layers[0].t().to_owned();
        let lambda = model.theta[0].t().to_owned();
        let pi = data.pi().t().to_owned();
        let reference = espa_objective(data.x(), &model.s, w, &gamma, &lambda, &pi, eps_w, eps_cl);
        let value = loss(&g, &model, data.x()).unwrap();
        worst = worst.max((value - reference).abs());
    }
    Outcome::new(worst <= 1e-12, format!("20 instances; largest |L_EON - L_eSPA| {worst:.3e}"))
}

fn serialization() -> Outcome {
    let mut r = rng(11);
    let mut mismatches = 0;
    for i in 0..100 {
        let t = r.random_range(1..=50);
        let k0 = r.random_range(1..=6);
        let depth = r.random_range(1..=3);
        let mut dims = vec![k0];
        dims.extend((0..=depth).map(|_| r.random_range(1..=6)));
        let mode = Gamma0Mode::ALL[i % Gamma0Mode::ALL.len()];
        let hyper = random_hyper(&mut r, dims.clone(), mode);
        let model = random_model(&mut r, hyper, t);
        let x = Array2::from_shape_fn((t, k0), |_| r.random::<f64>());
        let pi = Array2::from_shape_fn((t, dims[depth + 1]), |(_, j)| f64::from(j == 0));
        let g = random_gammas(&mut r, &dims, &pi);
        let bytes = model.to_bytes();
        let same = match EonModel::from_bytes(&bytes) {
            Ok(back) => {
                back.to_bytes() == bytes
                    && back == model
                    && loss(&g, &back, &x).unwrap().to_bits() == loss(&g, &model, &x).unwrap().to_bits()
            }
            Err(_) => false,
        };
        if !same {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("100 random models, {mismatches} differ after a round trip"))
}

fn main() {
    let checks: [(usize, &str, Check, u64); 11] = [
        (1, "monotone training", monotone_training, 300),
        (2, "block optimality", block_optimality, 120),
        (3, "fixed-point contract", fixed_point_contract, 120),
        (4, "softmax Lipschitz bound", lipschitz_bound, 60),
        (5, "uniqueness", uniqueness, 180),
        (6, "bioinformatics reproduction", bioinformatics, 900),
        (7, "stacked Gaussians", stacked_gaussians, 1200),
        (8, "complexity scaling", complexity_scaling, 600),
        (9, "adversarial contract", adversarial_contract, 60),
        (10, "eSPA reduction", espa_reduction, 60),
        (11, "serialization", serialization, 60),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (number, name, check, limit) in checks {
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        let time_note = if in_time { String::new() } else { format!(" (limit {limit} s exceeded)") };
        println!(
            "criterion {number:>2} {}: {name}: {} [{:.1} s{time_note}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p slicescale --test acceptance`.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use slicescale::agents::cpo::CpoBatch;
use slicescale::agents::cvar::cvar_gaussian;
use slicescale::agents::gradcheck::{finite_difference, relative_error};
use slicescale::agents::onpolicy::{value_loss, ValueFunction};
use slicescale::agents::policy::GaussianPolicy;
use slicescale::agents::ppo::{clipped_loss, SurrogateSample};
use slicescale::agents::replay::Transition;
use slicescale::agents::wcsac::{actor_loss, critic_input, critic_targets, regression_loss, WcsacParams};
use slicescale::agents::{wc_terminal_cost, AgentKind, WcsacConfig};
use slicescale::env::{compute_beta, Action, ConditionMode, EpisodeConfig, SliceEnv, TrafficSource, OBS_DIM};
use slicescale::harness::{
    evaluate, finetune, pred_alloc_checkpoint, sweep_conditions, sweep_noise, train_with_model, EvalSpec,
    Execution, ExperimentConfig, MetricsRecord, TraceSpec, TrafficSpec, TrainOutcome,
};
use slicescale::network_model::{default_synthetic_model, QoSModel, SyntheticTruthConfig};
use slicescale::traffic::{PredictorConfig, PredictorMode};

const WCSAC_DR: &str = include_str!("../../../configs/wcsac-dr.toml");
const AVG_PPO: &str = include_str!("../../../configs/avg-ppo-trace.toml");
const AVG_CPO: &str = include_str!("../../../configs/avg-cpo-trace.toml");
const FINETUNE: &str = include_str!("../../../configs/finetune.toml");
const EVAL: &str = include_str!("../../../configs/eval.toml");

const TELESCOPE_TOL: f64 = 1e-9;
const BETA_ORACLE_TOL: f64 = 1e-12;
const CVAR_REL_TOL: f64 = 0.01;
const GRAD_TOL: f64 = 1e-4;
const ANCHOR_TOL: f64 = 1e-6;
const TERMINAL_TOL: f64 = 1e-9;
const THRESHOLD_PCT: f64 = 10.0;
const PRED_ALLOC_MAX_PCT: f64 = 2.5;
const WCSAC_MAX_PCT: f64 = 12.0;
const SWEEP_SLACK_PP: f64 = 1.0;
const RANDOM_PREDICTOR_MAX_PCT: f64 = 25.0;

struct Suite {
    failures: usize,
    total: usize,
}

impl Suite {
    fn record(&mut self, id: &str, name: &str, pass: bool, detail: String, started: Instant) {
        self.total += 1;
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {detail} ({:.1}s)", started.elapsed().as_secs_f64());
    }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).expect("shipped config parses")
}

fn eval_spec(cfg: &ExperimentConfig, traffic: TrafficSpec) -> EvalSpec {
    EvalSpec {
        episode: cfg.episode.clone(),
        traffic,
        predictor: cfg.predictor,
        condition: ConditionMode::Stochastic,
        episodes: cfg.eval_episodes,
        seed: cfg.seed,
    }
}

fn trace(offset: f64) -> TrafficSpec {
    TrafficSpec::Trace(TraceSpec::default().with_offset(offset))
}

fn fmt(r: &MetricsRecord) -> String {
    format!("bw {:.2}% beta {:.2}%", r.mean_bandwidth_pct, r.mean_qos_degradation_pct)
}

/// Random-policy episodes over random traffic and both condition modes.
/// Returns the worst telescoping gap and the worst gap against a beta
/// recomputed from the per-TTI logs.
fn random_episode_errors(model: Arc<QoSModel>, episodes: usize) -> (f64, f64) {
    let cfg = EpisodeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut telescope, mut oracle) = (0.0f64, 0.0f64);
    for i in 0..episodes {
        let source = match i % 3 {
            0 => TrafficSource::Randomized { per_dti: true },
            1 => TrafficSource::Randomized { per_dti: false },
            _ => TrafficSource::Fixed(
                (0..cfg.dti_count * cfg.ttis_per_dti)
                    .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..6.0) })
                    .collect(),
            ),
        };
        let mut env = SliceEnv::new(model.clone(), cfg.clone(), source, PredictorConfig::default()).unwrap();
        if i % 2 == 1 {
            env.set_condition(ConditionMode::Deterministic(rng.random_range(-3.0..3.0)));
        }
        env.reset(&mut rng).unwrap();
        let (mut cost_sum, mut seen, mut bad) = (0.0, 0.0, 0.0);
        loop {
            let out = env.step(Action::Raw(rng.random_range(-1.0..1.0))).unwrap();
            cost_sum += out.cost;
            for (x, q) in out.info.traffic.iter().zip(&out.info.qos) {
                if *x > 0.0 {
                    seen += x;
                    if q.expect("served TTI has QoS") <= cfg.q_thresh {
                        bad += x;
                    }
                }
            }
            let brute = if seen > 0.0 { bad / seen } else { 0.0 };
            oracle = oracle.max((brute - out.next_observation.beta_so_far).abs());
            if out.done {
                let beta = compute_beta(env.ledger());
                telescope = telescope.max((cost_sum - beta).abs());
                oracle = oracle.max((brute - beta).abs());
                break;
            }
        }
    }
    (telescope, oracle)
}

fn cvar_checks() -> (f64, bool) {
    let (mean, sd) = (0.3, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let normal = Normal::new(mean, sd).unwrap();
    let mut draws: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
    draws.sort_by(|a, b| b.total_cmp(a));
    let mut worst = 0.0f64;
    for alpha in [0.5, 0.25, 0.1] {
        let k = (alpha * draws.len() as f64).ceil() as usize;
        let tail = draws[..k].iter().sum::<f64>() / k as f64;
        let closed = cvar_gaussian(mean, sd * sd, alpha).unwrap();
        worst = worst.max((closed - tail).abs() / tail.abs());
    }
    let alphas: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
    let by_alpha: Vec<f64> = alphas.iter().map(|&a| cvar_gaussian(mean, sd * sd, a).unwrap()).collect();
    let vars: Vec<f64> = (0..100).map(|i| i as f64 / 50.0).collect();
    let by_var: Vec<f64> = vars.iter().map(|&v| cvar_gaussian(mean, v, 0.1).unwrap()).collect();
    let monotone = by_alpha.windows(2).all(|w| w[1] <= w[0]) && by_var.windows(2).all(|w| w[1] >= w[0]);
    (worst, monotone)
}

fn random_obs(rng: &mut ChaCha8Rng) -> [f64; OBS_DIM] {
    let mut o = [0.0; OBS_DIM];
    let mut acc = 0.0;
    for v in o.iter_mut().take(OBS_DIM - 2) {
        acc += rng.random_range(0.0..0.4);
        *v = f64::min(acc, 1.0);
    }
    o[OBS_DIM - 2] = 1.0;
    o[OBS_DIM - 1] = rng.random_range(0.0..0.3);
    o
}

/// Worst relative error over every analytic gradient, on [8, 8] networks
/// and batches of 32.
fn gradient_checks() -> Vec<(&'static str, f64)> {
    const B: usize = 32;
    let hidden = [8, 8];
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut out = Vec::new();

    let wcfg = WcsacConfig {
        hidden: hidden.to_vec(),
        ..WcsacConfig::default()
    };
    let mut p = WcsacParams::new(&wcfg, &mut rng);
    for v in p.actor.params_mut() {
        *v *= 30.0;
    }
    p.safety_coef = 0.7;
    let batch: Vec<Transition> = (0..B)
        .map(|i| Transition {
            obs: random_obs(&mut rng),
            action: rng.random_range(-0.95..0.95),
            reward: rng.random_range(0.2..0.9),
            cost: if i % 3 == 0 { rng.random_range(0.0..0.1) } else { 0.0 },
            next_obs: random_obs(&mut rng),
            done: i % 10 == 9,
        })
        .collect();
    let noise: Vec<f64> = (0..B).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets = critic_targets(&p, &batch, &noise, 0.99, true);
    let inputs: Vec<_> = batch.iter().map(|t| critic_input(&t.obs, t.action)).collect();
    for (name, net, y, softplus) in [
        ("wcsac reward critic", &p.q1, &targets.reward, false),
        ("wcsac cost critic", &p.qc, &targets.cost, false),
        ("wcsac variance critic", &p.vc, &targets.variance, true),
    ] {
        let (_, g) = regression_loss(net, &inputs, y, softplus);
        let f = |w: &[f64]| {
            let mut n = net.clone();
            n.set_params(w);
            regression_loss(&n, &inputs, y, softplus).0
        };
        out.push((name, relative_error(&g, &finite_difference(f, net.params()))));
    }
    let obs: Vec<_> = batch.iter().map(|t| t.obs).collect();
    let factor = slicescale::agents::cvar::cvar_std_factor(0.1).unwrap();
    for (name, safety) in [("wcsac actor", None), ("wcsac actor with cvar", Some((0.7, factor)))] {
        let g = actor_loss(&p, &obs, &noise, safety).grad;
        let f = |w: &[f64]| {
            let mut q = p.clone();
            q.actor.set_params(w);
            actor_loss(&q, &obs, &noise, safety).loss
        };
        out.push((name, relative_error(&g, &finite_difference(f, p.actor.params()))));
    }

    let mut policy = GaussianPolicy::new(OBS_DIM, &hidden, -0.4, &mut rng);
    for v in policy.mean_net.params_mut() {
        *v *= 20.0;
    }
    let obs: Vec<[f64; OBS_DIM]> = (0..B).map(|_| random_obs(&mut rng)).collect();
    let u: Vec<f64> = obs.iter().map(|o| policy.sample(o, &mut rng).0).collect();
    let ra = (0..B).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ca = (0..B).map(|_| rng.random_range(-0.1..0.1)).collect();
    let cb = CpoBatch::new(&policy, obs.clone(), u.clone(), ra, ca, 10.0);
    let theta = policy.flat_params();
    let moved: Vec<f64> = theta.iter().enumerate().map(|(i, v)| v + 0.01 * ((i % 7) as f64 - 3.0)).collect();
    let at = |w: &[f64]| {
        let mut q = policy.clone();
        q.set_flat_params(w);
        q
    };
    let (g, b) = cb.surrogate_grads(&at(&moved));
    out.push(("cpo reward surrogate", relative_error(&g, &finite_difference(|w| cb.surrogates(&at(w)).0, &moved))));
    out.push(("cpo cost surrogate", relative_error(&b, &finite_difference(|w| cb.surrogates(&at(w)).1, &moved))));
    let (_, kg) = cb.kl_and_grad(&at(&moved));
    out.push(("cpo kl", relative_error(&kg, &finite_difference(|w| cb.mean_kl(&at(w)), &moved))));
    let v: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fvp = cb.fisher_vector_product(&policy, &v, 0.0);
    let h = 1e-5;
    let kl_grad_along = |s: f64| {
        let w: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + s * vi).collect();
        cb.kl_and_grad(&at(&w)).1
    };
    let (gp, gm) = (kl_grad_along(h), kl_grad_along(-h));
    let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    out.push(("cpo fisher-vector product", relative_error(&fvp, &fd)));

    let samples: Vec<SurrogateSample> = obs
        .iter()
        .zip(&u)
        .map(|(o, &u)| SurrogateSample {
            obs: *o,
            u,
            log_prob_old: policy.log_prob(o, u) + rng.random_range(-0.4..0.4),
            advantage: rng.random_range(-1.0..1.0),
        })
        .collect();
    let (_, g) = clipped_loss(&policy, &samples, 0.2);
    out.push(("ppo clipped surrogate", relative_error(&g, &finite_difference(|w| clipped_loss(&at(w), &samples, 0.2).0, &theta))));

    let vf = ValueFunction::new(&hidden, 1e-3, &mut rng);
    let y: Vec<f64> = (0..B).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, g) = value_loss(&vf.net, &obs, &y);
    let f = |w: &[f64]| {
        let mut n = vf.net.clone();
        n.set_params(w);
        value_loss(&n, &obs, &y).0
    };
    out.push(("value baseline", relative_error(&g, &finite_difference(f, vf.net.params()))));
    out
}

/// `exp(x) - 1` by its power series.
fn expm1_series(x: f64) -> f64 {
    let (mut term, mut sum) = (1.0, 0.0);
    for k in 1..40 {
        term *= x / k as f64;
        sum += term;
    }
    sum
}

fn terminal_cost_checks() -> (bool, bool, f64, bool) {
    let boundary = wc_terminal_cost(0.1, 0.1, 10.0) == 0.0
        && (0..=100).all(|i| wc_terminal_cost(i as f64 / 1000.0, 0.1, 10.0) == 0.0);
    let grid: Vec<f64> = (0..=200).map(|i| wc_terminal_cost(i as f64 / 200.0, 0.1, 10.0)).collect();
    let convex = grid.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] >= -1e-12);
    let value = wc_terminal_cost(0.2, 0.1, 10.0);
    let err = (value - 10.0 * expm1_series(0.2 - 0.1)).abs();
    let rounds_to_reference = (value * 1e4).round() / 1e4 == 1.0517;
    (boundary, convex, err, rounds_to_reference)
}

fn train_timed(cfg: &ExperimentConfig, model: &Arc<QoSModel>) -> (TrainOutcome, f64) {
    let t = Instant::now();
    let out = train_with_model(cfg, model.clone()).expect("training runs");
    (out, t.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let exec = Execution::default();
    let model = Arc::new(default_synthetic_model());
    let eval_cfg = config(EVAL);
    let mut suite = Suite { failures: 0, total: 0 };

    let t = Instant::now();
    let (telescope, oracle) = random_episode_errors(model.clone(), 1000);
    suite.record("1", "cost telescoping", telescope <= TELESCOPE_TOL, format!("max |sum c - beta| = {telescope:.2e} (tol {TELESCOPE_TOL:.0e})"), t);
    suite.record("2", "beta brute-force oracle", oracle <= BETA_ORACLE_TOL, format!("max gap = {oracle:.2e} (tol {BETA_ORACLE_TOL:.0e})"), t);

    let t = Instant::now();
    let (cvar_err, monotone) = cvar_checks();
    suite.record(
        "3",
        "gaussian cvar",
        cvar_err <= CVAR_REL_TOL && monotone,
        format!("worst MC relative error {:.3}% (tol 1%), monotone grids {monotone}", 100.0 * cvar_err),
        t,
    );

    let t = Instant::now();
    let grads = gradient_checks();
    let (worst_name, worst) = grads.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    suite.record(
        "4",
        "gradient correctness",
        grads.iter().all(|(_, e)| *e <= GRAD_TOL),
        format!("{} checks, worst {worst:.2e} ({worst_name}, tol {GRAD_TOL:.0e})", grads.len()),
        t,
    );

    let t = Instant::now();
    let grid_q = model.deterministic_qos(5.0, 0.8, -2.0);
    let truth = SyntheticTruthConfig::default();
    let exact_q = truth.mean(5.0, 0.8) - 2.0 * truth.std(5.0, 0.8);
    let anchor = (grid_q - 2.0).abs().max((exact_q - 2.0).abs());
    suite.record("5", "calibration anchor", anchor <= ANCHOR_TOL, format!("qos(5, 0.8, -2) = {grid_q:.9} (tol {ANCHOR_TOL:.0e})"), t);

    let t = Instant::now();
    let pa = pred_alloc_checkpoint(&eval_cfg, &model).unwrap();
    let pa_trace = evaluate(&pa, model.clone(), &eval_spec(&eval_cfg, trace(0.0)), exec).unwrap();
    let pa_dr = evaluate(&pa, model.clone(), &eval_spec(&eval_cfg, TrafficSpec::randomized()), exec).unwrap();
    suite.record(
        "6",
        "pred-alloc bound",
        pa_trace.mean_qos_degradation_pct <= PRED_ALLOC_MAX_PCT && pa_dr.mean_qos_degradation_pct <= PRED_ALLOC_MAX_PCT,
        format!("trace {}, randomized {} (max beta {PRED_ALLOC_MAX_PCT}%)", fmt(&pa_trace), fmt(&pa_dr)),
        t,
    );

    let t = Instant::now();
    let wcsac_cfg = config(WCSAC_DR);
    let (wcsac, wcsac_secs) = train_timed(&wcsac_cfg, &model);
    let (ppo, ppo_secs) = train_timed(&config(AVG_PPO), &model);
    let (cpo, cpo_secs) = train_timed(&config(AVG_CPO), &model);
    let run = |ck, offset| evaluate(ck, model.clone(), &eval_spec(&eval_cfg, trace(offset)), exec).unwrap();
    let (w0, w2) = (run(&wcsac.best, 0.0), run(&wcsac.best, 2.0));
    let p2 = run(&ppo.best, 2.0);
    let c2 = run(&cpo.best, 2.0);
    let budget_ok = [wcsac_secs, ppo_secs, cpo_secs].iter().all(|s| *s <= 7200.0);
    suite.record(
        "7",
        "generalization",
        p2.mean_qos_degradation_pct > THRESHOLD_PCT
            && c2.mean_qos_degradation_pct > THRESHOLD_PCT
            && w0.mean_qos_degradation_pct <= WCSAC_MAX_PCT
            && w2.mean_qos_degradation_pct <= WCSAC_MAX_PCT
            && w0.mean_bandwidth_pct <= pa_trace.mean_bandwidth_pct
            && budget_ok,
        format!(
            "offset beta avg-ppo {:.2}% avg-cpo {:.2}%; wcsac trace {}, offset {}; pred-alloc trace bw {:.2}%; train {wcsac_secs:.0}s/{ppo_secs:.0}s/{cpo_secs:.0}s",
            p2.mean_qos_degradation_pct,
            c2.mean_qos_degradation_pct,
            fmt(&w0),
            fmt(&w2),
            pa_trace.mean_bandwidth_pct
        ),
        t,
    );

    let t = Instant::now();
    let spec = eval_spec(&eval_cfg, trace(0.0));
    let sweep = sweep_conditions(&wcsac.best, model.clone(), &spec, &eval_cfg.sweep.d_values, exec).unwrap();
    let betas: Vec<f64> = sweep.records.iter().map(|r| r.mean_qos_degradation_pct).collect();
    let non_increasing = betas.windows(2).all(|w| w[1] <= w[0] + SWEEP_SLACK_PP);
    let within = sweep
        .values
        .iter()
        .zip(&betas)
        .filter(|(d, _)| **d >= -1.5)
        .all(|(_, b)| *b <= THRESHOLD_PCT + 2.0);
    let at_worst = betas[0];
    let at = |d: f64| sweep.values.iter().position(|v| *v == d).map_or(f64::NAN, |i| betas[i]);
    suite.record(
        "8",
        "condition sweep",
        non_increasing && within && at_worst > THRESHOLD_PCT && sweep.values[0] == -3.0,
        format!(
            "non-increasing {non_increasing}, d >= -1.5 within 12% {within}, beta(-3) {at_worst:.2}%, beta(-1.5) {:.2}%",
            at(-1.5)
        ),
        t,
    );

    let t = Instant::now();
    let noise = sweep_noise(&wcsac.best, model.clone(), &spec, &eval_cfg.sweep.noise_sigmas, exec).unwrap();
    let betas: Vec<f64> = noise.records.iter().map(|r| r.mean_qos_degradation_pct).collect();
    let non_decreasing = betas.windows(2).all(|w| w[1] >= w[0] - SWEEP_SLACK_PP);
    let random = evaluate(
        &wcsac.best,
        model.clone(),
        &spec.with_predictor(PredictorConfig {
            mode: PredictorMode::Random,
            noise_sigma: 0.0,
        }),
        exec,
    )
    .unwrap();
    suite.record(
        "9",
        "noise sweep",
        non_decreasing && random.mean_qos_degradation_pct <= RANDOM_PREDICTOR_MAX_PCT,
        format!(
            "non-decreasing {non_decreasing} (beta {:.2}%..{:.2}%), random predictor beta {:.2}% (max {RANDOM_PREDICTOR_MAX_PCT}%)",
            betas[0],
            betas[betas.len() - 1],
            random.mean_qos_degradation_pct
        ),
        t,
    );

    let t = Instant::now();
    let ft_cfg = config(FINETUNE);
    let tuned = finetune(&wcsac.best, &ft_cfg, model.clone(), exec).unwrap();
    let offset = run(&tuned.checkpoint, 2.0);
    suite.record(
        "10",
        "fine-tuning",
        tuned.checkpoint.kind == AgentKind::Wcsac
            && tuned.post.mean_bandwidth_pct < tuned.pre.mean_bandwidth_pct
            && tuned.post.mean_qos_degradation_pct <= THRESHOLD_PCT
            && offset.mean_qos_degradation_pct <= WCSAC_MAX_PCT,
        format!(
            "d=+1 before {}, after {}; offset stochastic {}",
            fmt(&tuned.pre),
            fmt(&tuned.post),
            fmt(&offset)
        ),
        t,
    );

    let t = Instant::now();
    let (boundary, convex, err, rounded) = terminal_cost_checks();
    suite.record(
        "11",
        "wc-cpo terminal cost",
        boundary && convex && err <= TERMINAL_TOL && rounded,
        format!("boundary zero {boundary}, convex {convex}, gamma 10 excess 0.1 error {err:.1e}, rounds to 1.0517 {rounded}"),
        t,
    );

    println!("acceptance: {}/{} passed", suite.total - suite.failures, suite.total);
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

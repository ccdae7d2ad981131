//! Checks shared by the focused tests and the acceptance summary. Each
//! returns a short description of what was measured, or of what went wrong.

use std::sync::Mutex;

use candle_core::DType;
use framefill::cli::{complete_video, replay_video, scheme_config};
use framefill::corpus::Video;
use framefill::denoiser::{ConditioningLayout, NoisePredictor, OutputKind, UNetConfig, UNetDenoiser};
use framefill::fvd::{frechet_distance, GaussianStats};
use framefill::sampler::{sample_stage_with, NoiseMode, SamplingScheme, SamplingStage, StageSource};
use framefill::schemes::{
    max_min_select, multi_start_greedy, plan_autoreg, plan_hierarchy2, parse_plan, format_trace,
    validate_scheme, AdaptiveHierarchy2, FrameDistance, SchemeKind, SchemePlanConfig,
};
use framefill::{FrameIndexSet, NoiseSchedule, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::{arr1, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{small_config, OracleDenoiser};

pub type Check = std::result::Result<String, String>;

/// Iterated forward steps on a T=3 schedule against the closed-form
/// marginal: mean and variance within 3 standard errors.
pub fn forward_moments(trials: usize) -> Check {
    let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
    let x0 = 0.7f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<f64> = (0..trials)
        .map(|_| {
            let mut x = arr1(&[x0]);
            for t in 1..=3 {
                let n = arr1(&[StandardNormal.sample(&mut rng)]);
                x = s.forward_step(&x, t, &n).unwrap();
            }
            x[0]
        })
        .collect();
    let n = trials as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ab = s.alpha_bar(3).unwrap();
    let (want_mean, want_var) = (ab.sqrt() * x0, 1.0 - ab);
    let z_mean = (mean - want_mean).abs() / (want_var / n).sqrt();
    let z_var = (var - want_var).abs() / (want_var * (2.0 / (n - 1.0)).sqrt());
    let text = format!("mean off by {z_mean:.2} SE, variance by {z_var:.2} SE");
    if z_mean < 3.0 && z_var < 3.0 {
        Ok(text)
    } else {
        Err(text)
    }
}

/// Deterministic sampling with the analytic noise predictor recovers random
/// 1-D signals.
pub fn oracle_inversion() -> Check {
    let schedule = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = Uniform::new(-1.0f32, 1.0).unwrap();
    let mut worst = 0.0f32;
    for seed in 0..5 {
        let x0 = Array4::from_shape_simple_fn((3, 1, 32, 1), || u.sample(&mut rng));
        let oracle = OracleDenoiser {
            x0: x0.clone(),
            schedule: schedule.clone(),
        };
        let stage = SamplingStage::new([0, 1, 2], []).unwrap();
        let y = Array4::zeros((0, 1, 32, 1));
        let out = sample_stage_with(&oracle, &y, &stage, (1, 32, 1), &schedule, seed, NoiseMode::Deterministic)
            .map_err(|e| e.to_string())?;
        worst = worst.max((&out - &x0).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let text = format!("max error {worst:.2e}");
    if worst < 1e-3 {
        Ok(text)
    } else {
        Err(text)
    }
}

pub fn tiny_config() -> UNetConfig {
    UNetConfig {
        height: 4,
        width: 4,
        channels: 1,
        k_latent: 1,
        k_obs: 1,
        base_width: 2,
        mid_width: 2,
        index_embed_dim: 2,
        time_embed_dim: 4,
        cond_dim: 8,
        norm_groups: 1,
        max_frames: 4,
        attention: true,
        output: OutputKind::Velocity,
    }
}

/// Analytic gradients of the training loss against central differences over
/// every parameter of a tiny f64 network.
pub fn gradient_check() -> Check {
    let model = UNetDenoiser::new(tiny_config(), DType::F64, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // move off the zero / unit initialisation so every gradient is live
    for name in model.parameter_names() {
        let p: Vec<f64> = model
            .parameter(&name)
            .unwrap()
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + 0.3 * z
            })
            .collect();
        model.set_parameter(&name, &p).unwrap();
    }
    let u = Uniform::new(-1.0f32, 1.0).unwrap();
    let frames = Array4::from_shape_simple_fn((4, 4, 4, 1), || u.sample(&mut rng));
    let video = Video::new(frames, 10.0, "grad").unwrap();
    let noise = Array4::from_shape_simple_fn((1, 4, 4, 1), || StandardNormal.sample(&mut rng));
    let layout = ConditioningLayout::new(vec![1], vec![3]).unwrap();
    let schedule = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
    let t = 6;

    let loss = |m: &UNetDenoiser| m.loss_and_gradients(&video, &layout, t, &noise, &schedule).unwrap();
    let (_, grads) = loss(&model);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for name in model.parameter_names() {
        let base = model.parameter(&name).unwrap();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            model.set_parameter(&name, &p).unwrap();
            let up = loss(&model).0;
            p[i] = base[i] - h;
            model.set_parameter(&name, &p).unwrap();
            let down = loss(&model).0;
            model.set_parameter(&name, &base).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[&name][i];
            let scale = numeric.abs().max(analytic.abs());
            if scale >= 1e-8 {
                worst = worst.max((numeric - analytic).abs() / scale);
            }
        }
    }
    let params = model.num_parameters();
    let text = format!("{params} parameters, worst relative error {worst:.2e}");
    if params <= 1000 && worst < 1e-4 {
        Ok(text)
    } else {
        Err(text)
    }
}

/// Absolute difference of frame means: cheap, and ties are common.
pub struct MeanGap;

impl FrameDistance for MeanGap {
    fn id(&self) -> String {
        "mean-gap".into()
    }

    fn distance(&self, a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>) -> f64 {
        (a.mean().unwrap() as f64 - b.mean().unwrap() as f64).abs()
    }
}

/// Drive a stage source without a model: sampled frames keep their buffer
/// values.
pub fn unroll(source: &mut dyn StageSource, video: &Array4<f32>) -> SamplingScheme {
    let mut known = source.observed().clone();
    let mut stages = Vec::new();
    while let Some(stage) = source.next_stage(&known, video).unwrap() {
        known.extend_from(&stage.x);
        stages.push(stage);
    }
    SamplingScheme::new(stages, source.video_length(), source.observed().clone())
}

/// Random `(N, p, stride, group_size, max_cond)` with N in 12..=64, p in
/// 4..=12, stride and group size in 2..=12, max_cond in 1..=12.
pub fn random_plan_config(rng: &mut ChaCha8Rng) -> SchemePlanConfig {
    let p = rng.random_range(4..=12);
    let n = rng.random_range(12..=64usize).max(p + 1);
    SchemePlanConfig {
        stride: rng.random_range(2..=12),
        group_size: rng.random_range(2..=12),
        max_cond: rng.random_range(1..=12),
        ..SchemePlanConfig::new(n, FrameIndexSet::range(0, p))
    }
}

/// `cases` random configurations per planner, every plan valid, and the
/// Autoreg stage count exact.
pub fn scheme_validity(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..cases {
        let config = random_plan_config(&mut rng);
        let (n, p) = (config.video_length, config.observed.len());
        let ar = plan_autoreg(&config).map_err(|e| e.to_string())?;
        let h2 = plan_hierarchy2(&config).map_err(|e| e.to_string())?;
        let video = Array4::from_shape_simple_fn((n, 2, 2, 1), || rng.random_range(-1.0f32..1.0));
        let adaptive = unroll(&mut AdaptiveHierarchy2::new(config.clone(), &MeanGap).unwrap(), &video);
        for (name, scheme) in [("autoreg", &ar), ("hierarchy-2", &h2), ("adaptive", &adaptive)] {
            let v = validate_scheme(scheme);
            if !v.is_empty() {
                return Err(format!("case {case} ({name}): {}", v[0]));
            }
        }
        if ar.stages.len() != (n - p).div_ceil(config.stride) {
            return Err(format!("case {case}: {} autoreg stages", ar.stages.len()));
        }
    }
    Ok(format!("{cases} configurations x 3 planners valid"))
}

fn min_pairwise(set: &[usize], d: &dyn Fn(usize, usize) -> f64) -> f64 {
    let mut m = f64::INFINITY;
    for (a, &i) in set.iter().enumerate() {
        for &j in &set[a + 1..] {
            m = m.min(d(i, j));
        }
    }
    m
}

/// Best max-min objective over every `k`-subset of `0..n`, by bitmask.
fn exhaustive_best(n: usize, k: usize, d: &dyn Fn(usize, usize) -> f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            best = best.max(min_pairwise(&set, d));
        }
    }
    best
}

/// Every symmetric table over {0,1,2} for n <= 4, then random tables (small
/// integers, with many ties, and reals) for n = 5 and 6.
fn selector_instances() -> Vec<(usize, Vec<f64>)> {
    let mut out = Vec::new();
    for n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for code in 0..3usize.pow(pairs.len() as u32) {
            let mut t = vec![0.0; n * n];
            let mut c = code;
            for &(i, j) in &pairs {
                let v = (c % 3) as f64;
                c /= 3;
                t[i * n + j] = v;
                t[j * n + i] = v;
            }
            out.push((n, t));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in [5usize, 6] {
        for round in 0..2000 {
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    let v = if round % 2 == 0 {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random::<f64>()
                    };
                    t[i * n + j] = v;
                    t[j * n + i] = v;
                }
            }
            out.push((n, t));
        }
    }
    out
}

/// Greedy max-min (multi-start, and the dispatching selector) against full
/// enumeration for every instance with at most 6 candidates and k <= 3.
pub fn selector_oracle() -> Check {
    let mut checked = 0;
    for (n, t) in selector_instances() {
        let d = |i: usize, j: usize| t[i * n + j];
        for k in 1..=3.min(n) {
            let best = exhaustive_best(n, k, &d);
            for (name, pick) in [("greedy", multi_start_greedy(n, k, d)), ("selector", max_min_select(n, k, d))] {
                checked += 1;
                if pick.len() != k || min_pairwise(&pick, &d) != best {
                    return Err(format!("{name} misses the optimum on n={n} k={k}: {pick:?}"));
                }
            }
        }
    }
    Ok(format!("{checked} instances match the exhaustive optimum"))
}

fn stats(mu: &[f64], var: &[f64]) -> GaussianStats {
    GaussianStats {
        mu: DVector::from_column_slice(mu),
        sigma: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
    }
}

fn random_psd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose()
}

/// Identical stats, the scalar example, the diagonal closed form and symmetry.
pub fn frechet_checks() -> Check {
    let a = stats(&[0.0], &[1.0]);
    let same = frechet_distance(&a, &a).map_err(|e| e.to_string())?;
    if same != 0.0 {
        return Err(format!("identical stats scored {same:e}"));
    }
    let scalar = frechet_distance(&a, &stats(&[3.0], &[1.0])).map_err(|e| e.to_string())?;
    if (scalar - 9.0).abs() >= 1e-12 {
        return Err(format!("scalar case gave {scalar}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut diag = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(lo..hi)).collect() };
        let (ma, mb) = (draw(&mut rng, -2.0, 2.0), draw(&mut rng, -2.0, 2.0));
        let (va, vb) = (draw(&mut rng, 0.0, 5.0), draw(&mut rng, 0.0, 5.0));
        let want: f64 = (0..d)
            .map(|i| (ma[i] - mb[i]).powi(2) + va[i] + vb[i] - 2.0 * (va[i] * vb[i]).sqrt())
            .sum();
        let got = frechet_distance(&stats(&ma, &va), &stats(&mb, &vb)).map_err(|e| e.to_string())?;
        diag = diag.max((got - want).abs());
    }
    let mut sym = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=6);
        let mk = |rng: &mut ChaCha8Rng| GaussianStats {
            mu: DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)),
            sigma: random_psd(d, rng),
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let ab = frechet_distance(&a, &b).map_err(|e| e.to_string())?;
        let ba = frechet_distance(&b, &a).map_err(|e| e.to_string())?;
        sym = sym.max((ab - ba).abs());
    }
    let text = format!("scalar {scalar}, diagonal error {diag:.1e}, asymmetry {sym:.1e}");
    if diag < 1e-9 && sym < 1e-8 {
        Ok(text)
    } else {
        Err(text)
    }
}

/// Wraps a predictor and records observed conditioning frames that no
/// longer hold their original values.
struct Watch<'a> {
    inner: &'a dyn NoisePredictor,
    truth: &'a Video,
    observed: FrameIndexSet,
    calls: Mutex<usize>,
    tampered: Mutex<Vec<usize>>,
}

impl NoisePredictor for Watch<'_> {
    fn predict_noise(
        &self,
        x_t: &Array4<f32>,
        t: usize,
        y: &Array4<f32>,
        layout: &ConditioningLayout,
    ) -> Result<Array4<f32>> {
        *self.calls.lock().unwrap() += 1;
        for (slot, &i) in layout.y.iter().enumerate() {
            if self.observed.contains(i) && y.index_axis(Axis(0), slot) != self.truth.frame(i) {
                self.tampered.lock().unwrap().push(i);
            }
        }
        self.inner.predict_noise(x_t, t, y, layout)
    }
}

/// One write per unobserved frame, none to observed ones, observed values
/// intact throughout, and a replay of the printed trace bit-identical.
pub fn fidelity(kind: SchemeKind, model: &dyn NoisePredictor, video: &Video) -> Check {
    let config = small_config();
    let schedule = config.schedule.build().unwrap();
    let plan = scheme_config(&config, video.len());
    let watch = Watch {
        inner: model,
        truth: video,
        observed: plan.observed.clone(),
        calls: Mutex::new(0),
        tampered: Mutex::new(Vec::new()),
    };
    let done = complete_video(&watch, &schedule, &config, kind, video, 42).map_err(|e| e.to_string())?;
    for i in 0..video.len() {
        let want = u32::from(!plan.observed.contains(i));
        if done.write_counts[i] != want {
            return Err(format!("{kind}: frame {i} written {} times", done.write_counts[i]));
        }
        if plan.observed.contains(i) && done.frames.index_axis(Axis(0), i) != video.frame(i) {
            return Err(format!("{kind}: observed frame {i} changed"));
        }
    }
    let tampered = watch.tampered.lock().unwrap();
    if !tampered.is_empty() {
        return Err(format!("{kind}: model saw altered observed frames {tampered:?}"));
    }
    if *watch.calls.lock().unwrap() != done.trace.len() * schedule.steps() {
        return Err(format!("{kind}: unexpected number of denoiser calls"));
    }
    let text = format_trace(&done.scheme(plan.observed.clone()), &done.trace);
    let scheme = parse_plan(&text).map_err(|e| e.to_string())?;
    let again = replay_video(model, &schedule, &scheme, video, 42).map_err(|e| e.to_string())?;
    if !done.frames.iter().zip(again.frames.iter()).all(|(a, b)| a.to_bits() == b.to_bits()) {
        return Err(format!("{kind}: replay differs"));
    }
    Ok(format!("{kind}: {} stages", done.trace.len()))
}

/// An untrained small-config model with its schedule attached.
pub fn small_model(seed: u64) -> UNetDenoiser {
    let config = small_config();
    let mut model = UNetDenoiser::new(config.model.clone(), DType::F32, seed).unwrap();
    model.set_schedule(&config.schedule.build().unwrap());
    model
}

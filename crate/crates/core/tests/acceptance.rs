//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N [PASS|FAIL]` line on stderr (bypassing output capture).
//!
//! The tests share one lock so wall-clock budgets are measured without
//! competing for the CPU, and criteria 4, 7 and 9 share one trained model.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use synthlab::baselines::{BaselineKind, BaselineSpec};
use synthlab::datasets::{
    budgets_for, fewshot_slice, split, standardize, synthetic_corpus, window_count, windows, AccessPhase, AccessTracker, BudgetKind, BudgetPlan,
    SeriesStore, SyntheticCorpusConfig,
};
use synthlab::engine::{grad_check, EngineError, Graph, ParamStore, Tensor, Var};
use synthlab::eval::{
    evaluate_fewshot, evaluate_long_term, mae, mse, smape, write_records_csv, EvalOptions, EvalRecord, Metric, RecordStatus, Units,
};
use synthlab::pfn::{self, desk_preset, held_out_comparison, PfnConfig, PfnForecaster, PfnModel, TrainConfig, TrainReport};
use synthlab::prior::{self, PriorConfig, TrendKind};
use synthlab::reporting::{avg_rank, avg_relative_metric, midranks, render_markdown, win_rate, ResultsMatrix, Table};
use synthlab::scalers::{align_target_to_source, unalign, FittedScaler, ScalerKind};
use synthlab::{ForecastMethod, Pretrained};

// Pinned tolerances and budgets.
const PRIOR_SPECS: u64 = 100_000;
const PRIOR_SEED: u64 = 20_240_601;
const CHI_ALPHA: f64 = 0.001;
const TREND_TOL: f64 = 0.02;
const PURE_TREND_TOL: f64 = 0.005;
const SUITE_BUDGET: Duration = Duration::from_secs(60);
const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const PAD_TOL: f64 = 1e-12;
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const WIN_FRACTION: f64 = 0.7;
const LOSS_RATIO: f64 = 0.5;
const HELD_OUT: usize = 200;
const TRAIN_SEED: u64 = 1;
const METRIC_TOL: f64 = 1e-12;
const SCALER_TOL: f64 = 1e-9;
const REPORT_TOL: f64 = 1e-12;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

struct Desk {
    model: PfnModel,
    report: TrainReport,
    prior: PriorConfig,
    elapsed: Duration,
}

static DESK: OnceLock<Desk> = OnceLock::new();

fn desk() -> &'static Desk {
    DESK.get_or_init(|| {
        let p = desk_preset(TRAIN_SEED);
        let mut model = PfnModel::init(p.model, &mut ChaCha8Rng::seed_from_u64(TRAIN_SEED)).unwrap();
        let start = Instant::now();
        let report = pfn::train(&mut model, &p.prior, &p.train).unwrap();
        Desk { model, report, prior: p.prior, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_1_prior_distribution() {
    let _g = serial();
    let start = Instant::now();
    let cfg = PriorConfig::default();
    let (p_lo, p_hi) = cfg.period_range;
    let mut period_counts = vec![0u64; p_hi - p_lo + 1];
    let mut trend_counts: BTreeMap<TrendKind, u64> = BTreeMap::new();
    let (mut trended, mut pure) = (0u64, 0u64);
    let (mut count_ok, mut hist_ok, mut all_ok) = (true, true, true);
    let chunk = 10_000u64;
    for c in 0..PRIOR_SPECS / chunk {
        let idx: Vec<u64> = (c * chunk..(c + 1) * chunk).collect();
        for s in prior::samples_at(&cfg, PRIOR_SEED, &idx).unwrap() {
            period_counts[s.spec.period - p_lo] += 1;
            count_ok &= (3..=7).contains(&s.spec.coefficients.len());
            *trend_counts.entry(s.spec.trend_kind).or_default() += 1;
            if s.spec.trend_kind != TrendKind::None {
                trended += 1;
                pure += s.spec.pure_trend as u64;
            }
            hist_ok &= s.history.iter().all(|v| (0.0..=1.0).contains(v));
            all_ok &= s.history.iter().chain(&s.target).all(|v| (-1.0..=2.0).contains(v));
        }
    }
    let n = PRIOR_SPECS as f64;
    let expected = n / period_counts.len() as f64;
    let chi2: f64 = period_counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((period_counts.len() - 1) as f64).unwrap().inverse_cdf(1.0 - CHI_ALPHA);
    let targets = [
        (TrendKind::Linear, 0.18),
        (TrendKind::Log, 0.18),
        (TrendKind::Log1p, 0.09),
        (TrendKind::Quadratic, 0.09),
        (TrendKind::Exponential, 0.09),
        (TrendKind::None, 0.37),
    ];
    let mut worst_trend: f64 = 0.0;
    for (k, p) in targets {
        let f = *trend_counts.get(&k).unwrap_or(&0) as f64 / n;
        worst_trend = worst_trend.max((f - p).abs());
    }
    let pure_rate = pure as f64 / trended as f64;
    let elapsed = start.elapsed();
    let pass = chi2 < critical
        && count_ok
        && worst_trend <= TREND_TOL
        && (pure_rate - 0.02).abs() <= PURE_TREND_TOL
        && hist_ok
        && all_ok
        && elapsed < SUITE_BUDGET;
    verdict(
        1,
        "prior distribution",
        pass,
        &format!(
            "chi2 {chi2:.1} < {critical:.1}, counts in [3,7] {count_ok}, max trend dev {worst_trend:.4} <= {TREND_TOL}, \
             pure-trend {pure_rate:.4} (±{PURE_TREND_TOL} of 0.02), history in [0,1] {hist_ok}, all in [-1,2] {all_ok}, \
             {:.1}s < {}s",
            elapsed.as_secs_f64(),
            SUITE_BUDGET.as_secs()
        ),
    );
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(out ⊙ W)` for a fixed random `W`, so every output coordinate
/// carries a distinct weight.
fn weighted_sum(g: &mut Graph<'_>, out: Var, seed: u64) -> Result<Var, EngineError> {
    let (r, c) = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

type LayerCase = (&'static str, Box<dyn Fn(&mut Graph<'_>, &[synthlab::engine::ParamId]) -> Result<Var, EngineError>>);

fn layer_cases() -> Vec<(LayerCase, Vec<(usize, usize)>)> {
    vec![
        (("matmul", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.matmul(a, b) })), vec![(3, 4), (4, 2)]),
        (("matmul_nt", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.matmul_nt(a, b) })), vec![(3, 4), (5, 4)]),
        (("add", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.add(a, b) })), vec![(2, 3), (2, 3)]),
        (("sub", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.sub(a, b) })), vec![(2, 3), (2, 3)]),
        (("mul", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.mul(a, b) })), vec![(2, 3), (2, 3)]),
        (("add_row", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.add_row(a, b) })), vec![(3, 4), (1, 4)]),
        (("scale", Box::new(|g, p| { let a = g.param(p[0]); g.scale(a, -1.7) })), vec![(2, 3)]),
        (("layer_norm", Box::new(|g, p| { let (x, ga, be) = (g.param(p[0]), g.param(p[1]), g.param(p[2])); g.layer_norm(x, ga, be, 1e-5) })), vec![(3, 5), (1, 5), (1, 5)]),
        (("masked_softmax", Box::new(|g, p| { let x = g.param(p[0]); g.masked_softmax(x, &[true, false, true, true, false, true, true, true]) })), vec![(2, 4)]),
        (("attention", Box::new(|g, p| { let (q, k, v) = (g.param(p[0]), g.param(p[1]), g.param(p[2])); g.attention(q, k, v, 2, Some(&[true, true, false, true])) })), vec![(3, 4), (4, 4), (4, 4)]),
        (("leaky_relu", Box::new(|g, p| { let x = g.param(p[0]); g.leaky_relu(x, 0.01) })), vec![(3, 4)]),
        (("slice_cols", Box::new(|g, p| { let x = g.param(p[0]); g.slice_cols(x, 1, 2) })), vec![(3, 4)]),
        (("concat_cols", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.concat_cols(&[a, b]) })), vec![(3, 2), (3, 1)]),
        (("slice_rows", Box::new(|g, p| { let x = g.param(p[0]); g.slice_rows(x, 1, 2) })), vec![(4, 3)]),
        (("concat_rows", Box::new(|g, p| { let (a, b) = (g.param(p[0]), g.param(p[1])); g.concat_rows(&[a, b]) })), vec![(1, 3), (2, 3)]),
        (("gather_rows", Box::new(|g, p| { let x = g.param(p[0]); g.gather_rows(x, &[2, 0, 2]) })), vec![(3, 4)]),
        (("masked_mse", Box::new(|g, p| { let x = g.param(p[0]); g.masked_mse(x, &[0.5, -0.2, 0.1, 0.9], &[true, false, true, true]) })), vec![(1, 4)]),
    ]
}

fn pfn_grad_error(model: &PfnModel, values: &[f64], mask: &[bool], target: &[f64]) -> f64 {
    let tmask = vec![true; target.len()];
    let f = |g: &mut Graph<'_>| {
        let pred = model.build_forward(g, values, mask).map_err(|e| EngineError::Numeric(e.to_string()))?;
        g.masked_mse(pred, target, &tmask)
    };
    let r = grad_check(model.params(), GRAD_EPS, f).unwrap();
    r.max_relative_error
}

#[test]
fn criterion_2_gradients() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_layer = (String::new(), 0.0f64);
    for (i, ((name, build), shapes)) in layer_cases().into_iter().enumerate() {
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes.iter().enumerate().map(|(k, &(r, c))| store.add(format!("p{k}"), rand_tensor(&mut rng, r, c))).collect();
        let seed = 100 + i as u64;
        let report = grad_check(&store, GRAD_EPS, |g| {
            let out = build(g, &ids)?;
            weighted_sum(g, out, seed)
        })
        .unwrap();
        if report.max_relative_error >= worst_layer.1 {
            worst_layer = (name.to_string(), report.max_relative_error);
        }
    }
    // Full one-layer PFN; context and head are kept short so 20 instances
    // of coordinate-wise differences stay quick.
    let cfg = PfnConfig { max_history: 24, head_width: 12, ..PfnConfig::small(1, 2, 8) };
    let mut worst_pfn: f64 = 0.0;
    for inst in 0..20u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + inst);
        let model = PfnModel::init(cfg.clone(), &mut r).unwrap();
        let width = r.gen_range(2..=24);
        let values: Vec<f64> = (0..width).map(|_| r.gen_range(-1.0..2.0)).collect();
        let mut mask: Vec<bool> = (0..width).map(|_| r.gen_bool(0.8)).collect();
        mask[width - 1] = true;
        let target: Vec<f64> = (0..cfg.head_width).map(|_| r.gen_range(-1.0..2.0)).collect();
        worst_pfn = worst_pfn.max(pfn_grad_error(&model, &values, &mask, &target));
    }
    let elapsed = start.elapsed();
    let pass = worst_layer.1 < GRAD_TOL && worst_pfn < GRAD_TOL && elapsed < SUITE_BUDGET;
    verdict(
        2,
        "gradients",
        pass,
        &format!(
            "worst layer {} {:.2e}, full 1-layer d=8 PFN over 20 instances {worst_pfn:.2e} (< {GRAD_TOL:e}), {:.1}s < {}s",
            worst_layer.0,
            worst_layer.1,
            elapsed.as_secs_f64(),
            SUITE_BUDGET.as_secs()
        ),
    );
}

#[test]
fn criterion_3_shapes() {
    let _g = serial();
    let model = PfnModel::init(PfnConfig::small(1, 2, 8), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let batch = 3;
    let mut shapes_ok = true;
    for l in [1usize, 100, 250, 500] {
        let hist: Vec<f64> = (0..batch * l).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = model.forward(&hist, &vec![true; batch * l], batch).unwrap();
        shapes_ok &= out.len() == batch * 720;
    }
    let long = vec![0.5; 501];
    let ctx_err = matches!(model.forward(&long, &[true; 501], 1), Err(pfn::PfnError::ContextOverflow { len: 501, max: 500 }));
    let hor_err = matches!(model.predict(&[0.1, 0.2, 0.3], 721), Err(pfn::PfnError::HorizonOverflow { requested: 721, max: 720 }));
    let mut worst_pad: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=120);
        let pad = rng.gen_range(1..=60);
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let base = model.forward_row(&vals, &vec![true; n]).unwrap();
        let mut padded: Vec<f64> = (0..pad).map(|_| rng.gen_range(-5.0..5.0)).collect();
        padded.extend(&vals);
        let mut mask = vec![false; pad];
        mask.extend(vec![true; n]);
        let out = model.forward_row(&padded, &mask).unwrap();
        worst_pad = base.iter().zip(&out).fold(worst_pad, |m, (a, b)| m.max((a - b).abs()));
    }
    let pass = shapes_ok && ctx_err && hor_err && worst_pad <= PAD_TOL;
    verdict(
        3,
        "architecture shapes",
        pass,
        &format!("Bx720 for L in {{1,100,250,500}} {shapes_ok}, L=501 context overflow {ctx_err}, H=721 horizon overflow {hor_err}, padded-slot max change {worst_pad:.1e} <= {PAD_TOL:e}"),
    );
}

#[test]
fn criterion_4_desk_training() {
    let _g = serial();
    let d = desk();
    let cmp = held_out_comparison(&d.model, &d.prior, TRAIN_SEED + 1, HELD_OUT).unwrap();
    let r = &d.report;
    let pass = cmp.win_fraction() >= WIN_FRACTION && r.final_loss < LOSS_RATIO * r.initial_loss && d.elapsed < TRAIN_BUDGET;
    verdict(
        4,
        "desk-scale training",
        pass,
        &format!(
            "beats last value on {:.3} of {HELD_OUT} held-out draws (>= {WIN_FRACTION}), loss {:.4} -> {:.4} (< {LOSS_RATIO}x), \
             validation mse {:.4} -> {:.4}, {} steps in {:.0}s < {}s",
            cmp.win_fraction(),
            r.initial_loss,
            r.final_loss,
            r.initial_validation_mse,
            r.final_validation_mse,
            r.steps,
            d.elapsed.as_secs_f64(),
            TRAIN_BUDGET.as_secs()
        ),
    );
}

#[test]
fn criterion_5_metric_and_scaler_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_metric: f64 = 0.0;
    let mut self_zero = true;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (mut se, mut ae, mut sm) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let d = p[i] - t[i];
            se += d * d;
            ae += d.abs();
            let den = p[i].abs() + t[i].abs();
            if den != 0.0 {
                sm += d.abs() / den;
            }
        }
        let nf = n as f64;
        for (got, want) in [(mse(&p, &t).unwrap(), se / nf), (mae(&p, &t).unwrap(), ae / nf), (smape(&p, &t).unwrap(), 200.0 * sm / nf)] {
            worst_metric = worst_metric.max((got - want).abs());
        }
        self_zero &= smape(&p, &p).unwrap() == 0.0;
    }
    let mut worst_round: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    for _ in 0..300 {
        let n = rng.gen_range(2..=50);
        let shift = rng.gen_range(-100.0..100.0);
        let spread = rng.gen_range(0.01..50.0);
        let a: Vec<f64> = (0..n).map(|_| shift + spread * rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for kind in ScalerKind::ALL {
            let sa = FittedScaler::fit(kind, &a).unwrap();
            let sb = FittedScaler::fit(kind, &b).unwrap();
            for (x, y) in sa.inverse(&sa.transform(&a)).iter().zip(&a) {
                worst_round = worst_round.max((x - y).abs() / y.abs().max(1.0));
            }
            let there = align_target_to_source(&sa, &sb, &a).unwrap();
            let back = align_target_to_source(&sb, &sa, &there).unwrap();
            let undone = unalign(&sa, &sb, &there).unwrap();
            for ((x, y), z) in back.iter().zip(&a).zip(&undone) {
                worst_comp = worst_comp.max((x - y).abs().max((z - y).abs()) / y.abs().max(1.0));
            }
        }
    }
    let pass = worst_metric <= METRIC_TOL && self_zero && worst_round < SCALER_TOL && worst_comp < SCALER_TOL;
    verdict(
        5,
        "metric and scaler oracles",
        pass,
        &format!(
            "metrics vs loops on 1000 vectors {worst_metric:.1e} <= {METRIC_TOL:e}, smape(x,x)=0 {self_zero}, \
             scaler round trip {worst_round:.1e} and alignment composition {worst_comp:.1e} < {SCALER_TOL:e}"
        ),
    );
}

fn small_corpus(seed: u64, length: usize) -> (SeriesStore, synthlab::datasets::DatasetMeta) {
    let cfg = SyntheticCorpusConfig { length, ..Default::default() };
    (synthetic_corpus(&cfg, seed).unwrap(), cfg.meta())
}

#[test]
fn criterion_6_protocols() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let series: Vec<f64> = (0..400).map(f64::from).collect();
    let mut counts_ok = true;
    for _ in 0..100 {
        let l = rng.gen_range(1..=60);
        let h = rng.gen_range(1..=60);
        let len = rng.gen_range(l + h..=400);
        let got = windows(&series, 0..len, l, h, 1).unwrap().count();
        counts_ok &= got == len - l - h + 1 && got == window_count(len, l, h, 1);
    }
    let geo = budgets_for(24, BudgetKind::Geometric).unwrap().budgets;
    let ari = budgets_for(52, BudgetKind::Arithmetic).unwrap().budgets;
    let plans_ok = geo == [24, 48, 96, 192, 384, 768, 1536, 3072] && ari == [52, 104, 156, 208, 260, 312, 364, 416];
    let mut slice_ok = true;
    for _ in 0..100 {
        let len = rng.gen_range(1..=500);
        let b = rng.gen_range(1..=600);
        let s = fewshot_slice(0..len, b);
        slice_ok &= s.len() == b.min(len) && s.end == len;
    }

    // Leakage: supervised fits read exactly the budget slice and nothing
    // past the train segment; mutating val/test leaves fits unchanged.
    let (store, meta) = small_corpus(61, 2400);
    let seg = split(store.len(), meta.ratios).unwrap();
    let plan = budgets_for(meta.period, BudgetKind::Geometric).unwrap();
    let mut leak_free = true;
    for kind in [BaselineKind::Linear, BaselineKind::Dlinear] {
        let spec = BaselineSpec::new(kind, 48, meta.period);
        for &b in &plan.budgets {
            let tracker = Arc::new(AccessTracker::new());
            let opts = EvalOptions { tracker: Some(Arc::clone(&tracker)), stride: 8, ..Default::default() };
            let one = BudgetPlan { period: plan.period, budgets: vec![b] };
            evaluate_fewshot(&spec, &store, &meta, &one, 24, &opts).unwrap();
            let fit = tracker.indices(AccessPhase::Fit);
            let want: std::collections::BTreeSet<usize> = fewshot_slice(seg.train.clone(), b).collect();
            leak_free &= fit.is_empty() || fit == want;
            leak_free &= fit.iter().all(|&i| i < seg.train.end);
        }
    }
    let mut mutated = store.clone();
    for c in &mut mutated.channels {
        for v in &mut c[seg.train.end..] {
            *v = *v * 3.0 + 100.0;
        }
    }
    let spec = BaselineSpec::new(BaselineKind::Dlinear, 48, meta.period);
    let fit_of = |s: &SeriesStore| {
        let st = standardize(s, seg.train.clone()).unwrap();
        let train: Vec<&[f64]> = st.store.channels.iter().map(|c| &c[seg.train.clone()]).collect();
        (st.scalers.clone(), spec.fit_model(&train, 24).unwrap())
    };
    leak_free &= fit_of(&store) == fit_of(&mutated);

    let pass = counts_ok && plans_ok && slice_ok && leak_free;
    verdict(
        6,
        "protocols",
        pass,
        &format!("window counts on 100 draws {counts_ok}, budget plans {plans_ok}, few-shot suffix slicing {slice_ok}, no val/test reads during fits {leak_free}"),
    );
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn criterion_7_fewshot_direction() {
    let _g = serial();
    let d = desk();
    let cfg = SyntheticCorpusConfig::default();
    let store = synthetic_corpus(&cfg, 7).unwrap();
    let meta = cfg.meta();
    let budget = meta.period << 7;
    let plan = BudgetPlan { period: meta.period, budgets: vec![budget] };
    let horizon = 96;
    let look_back = 336;
    let dlinear = BaselineSpec::new(BaselineKind::Dlinear, look_back, meta.period);
    let pfn_method = Pretrained(Arc::new(PfnForecaster::new(d.model.clone())));
    let methods: [(&str, &dyn ForecastMethod); 2] = [("dlinear", &dlinear), ("pfn", &pfn_method)];
    let opts = EvalOptions { metrics: vec![Metric::Mae], look_back: Some(look_back), ..Default::default() };
    // Score channel by channel for a per-channel median.
    let mut per_model: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for c in 0..store.n_channels() {
        let single = SeriesStore::new(&store.name, store.timestamps.clone(), vec![store.channel_names[c].clone()], vec![store.channels[c].clone()]).unwrap();
        for (name, m) in methods {
            let recs = evaluate_fewshot(m, &single, &meta, &plan, horizon, &opts).unwrap();
            per_model.entry(name).or_default().push(recs.iter().find(|r| r.status == RecordStatus::Ok).and_then(|r| r.value));
        }
    }
    let table = Table {
        row_header: "channel".into(),
        columns: per_model.keys().map(|s| s.to_string()).collect(),
        rows: (0..store.n_channels()).map(|c| (store.channel_names[c].clone(), per_model.values().map(|v| v[c]).collect())).collect(),
    };
    let rendered = render_markdown(&table, 4);
    let _ = std::io::stderr().write_all(format!("few-shot comparison, B={budget}, H={horizon}, MAE:\n{rendered}").as_bytes());
    let complete = per_model.values().all(|v| v.iter().all(Option::is_some));
    let med = |k: &str| median(&mut per_model[k].iter().flatten().copied().collect::<Vec<_>>());
    let (m_dl, m_pfn) = (med("dlinear"), med("pfn"));
    let ordering = if m_dl < m_pfn { "dlinear better (matches the expected direction)" } else { "pfn better (expected direction NOT reproduced)" };
    let pass = complete && !rendered.is_empty();
    verdict(
        7,
        "few-shot direction",
        pass,
        &format!("pipeline complete {complete}; median MAE dlinear {m_dl:.4} vs zero-shot pfn {m_pfn:.4}: {ordering} (reported, not gating)"),
    );
}

/// Brute-force versions of the reporting statistics.
mod oracle {
    use super::*;

    pub fn cells(m: &ResultsMatrix) -> Vec<(usize, usize, usize, f64)> {
        let mut v = Vec::new();
        for mi in 0..m.models.len() {
            for si in 0..m.sources.len() {
                for ti in 0..m.targets.len() {
                    if let Some(x) = m.get(mi, si, ti) {
                        v.push((mi, si, ti, x));
                    }
                }
            }
        }
        v
    }

    pub fn win_rates(m: &ResultsMatrix) -> Vec<(usize, usize, f64)> {
        let c = cells(m);
        let mut out = Vec::new();
        for si in 0..m.sources.len() {
            let targets: Vec<usize> = (0..m.targets.len()).filter(|&t| c.iter().any(|x| x.1 == si && x.2 == t)).collect();
            if targets.is_empty() {
                continue;
            }
            for mi in 0..m.models.len() {
                let mut wins = 0;
                for &t in &targets {
                    let mine = c.iter().find(|x| x.0 == mi && x.1 == si && x.2 == t);
                    let beaten = c.iter().filter(|x| x.1 == si && x.2 == t).any(|x| mine.is_some_and(|me| x.3 < me.3));
                    if mine.is_some() && !beaten {
                        wins += 1;
                    }
                }
                out.push((si, mi, wins as f64 / targets.len() as f64));
            }
        }
        out
    }

    /// Rank = 1 + #strictly better + (#ties - 1) / 2.
    pub fn ranks(m: &ResultsMatrix) -> Vec<(usize, f64)> {
        let c = cells(m);
        let mut sum = vec![0.0; m.sources.len()];
        let mut cnt = vec![0usize; m.sources.len()];
        for t in 0..m.targets.len() {
            for mi in 0..m.models.len() {
                let group: Vec<&(usize, usize, usize, f64)> = c.iter().filter(|x| x.0 == mi && x.2 == t).collect();
                for x in &group {
                    let better = group.iter().filter(|y| y.3 < x.3).count() as f64;
                    let ties = group.iter().filter(|y| y.3 == x.3).count() as f64;
                    sum[x.1] += 1.0 + better + (ties - 1.0) / 2.0;
                    cnt[x.1] += 1;
                }
            }
        }
        (0..m.sources.len()).filter(|&s| cnt[s] > 0).map(|s| (s, sum[s] / cnt[s] as f64)).collect()
    }

    pub fn relative(m: &ResultsMatrix) -> Vec<(usize, usize, f64)> {
        let c = cells(m);
        let mut out = Vec::new();
        for si in 0..m.sources.len() {
            for mi in 0..m.models.len() {
                let mut devs = Vec::new();
                for x in c.iter().filter(|x| x.0 == mi && x.1 == si) {
                    let best = c.iter().filter(|y| y.2 == x.2).map(|y| y.3).fold(f64::INFINITY, f64::min);
                    devs.push(if best == 0.0 { if x.3 == 0.0 { 0.0 } else { f64::INFINITY } } else { (x.3 - best) / best });
                }
                if !devs.is_empty() {
                    out.push((si, mi, devs.iter().sum::<f64>() / devs.len() as f64));
                }
            }
        }
        out
    }
}

fn random_matrix(rng: &mut ChaCha8Rng) -> ResultsMatrix {
    let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let (nm, ns, nt) = (rng.gen_range(1..=4), rng.gen_range(2..=4), rng.gen_range(1..=5));
    let mut m = ResultsMatrix::new(Metric::Mae, &names("m", nm), &names("s", ns), &names("t", nt));
    // A small value grid makes ties common.
    let grid = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0];
    for mi in 0..nm {
        for si in 0..ns {
            for ti in 0..nt {
                let v = if rng.gen_bool(0.15) { None } else if rng.gen_bool(0.5) { Some(grid[rng.gen_range(0..grid.len())]) } else { Some(rng.gen_range(0.0..3.0)) };
                m.set(mi, si, ti, v).unwrap();
            }
        }
    }
    m
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REPORT_TOL
}

#[test]
fn criterion_8_reporting_oracles() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut wins_ok, mut ranks_ok, mut rel_ok, mut invariant) = (true, true, true, true);
    let mut ties_seen = 0;
    for _ in 0..50 {
        let m = random_matrix(&mut rng);
        let w = win_rate(&m);
        let ow = oracle::win_rates(&m);
        wins_ok &= w.len() == ow.len()
            && w.iter().zip(&ow).all(|(a, (si, mi, r))| a.source == m.sources[*si] && a.model == m.models[*mi] && close(a.rate, *r));
        let r = avg_rank(&m).unwrap();
        let or = oracle::ranks(&m);
        ranks_ok &= r.len() == or.len() && r.iter().zip(&or).all(|(a, (si, v))| a.source == m.sources[*si] && close(a.mean_rank, *v));
        let rel = avg_relative_metric(&m);
        let orel = oracle::relative(&m);
        rel_ok &= rel.len() == orel.len()
            && rel.iter().zip(&orel).all(|(a, (si, mi, v))| a.source == m.sources[*si] && a.model == m.models[*mi] && (close(a.value, *v) || a.value.is_infinite() && v.is_infinite()));
        ties_seen += oracle::cells(&m).windows(2).filter(|p| p[0].3 == p[1].3).count();

        let k = rng.gen_range(0.1..10.0);
        let s = m.scaled(k);
        let win_sets = |x: &ResultsMatrix| win_rate(x).iter().map(|w| w.wins).collect::<Vec<_>>();
        let rank_vec = |x: &ResultsMatrix| avg_rank(x).unwrap().iter().map(|r| r.mean_rank).collect::<Vec<_>>();
        invariant &= win_sets(&m) == win_sets(&s) && rank_vec(&m) == rank_vec(&s);
    }
    assert_eq!(midranks(&[1.0, 1.0]), vec![1.5, 1.5]);
    let pass = wins_ok && ranks_ok && rel_ok && invariant && ties_seen > 0;
    verdict(
        8,
        "reporting oracles",
        pass,
        &format!("50 random matrices with ties ({ties_seen} adjacent tied cells) and missing cells: win rate {wins_ok}, rank {ranks_ok}, relative metric {rel_ok}; positive rescaling keeps win sets and ranks {invariant}"),
    );
}

fn records_bytes(records: &[EvalRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records_csv(records, &mut buf).unwrap();
    buf
}

#[test]
fn criterion_9_determinism() {
    let _g = serial();
    // Generated prior corpora.
    let prior_cfg = PriorConfig::default();
    let idx: Vec<u64> = (0..200).collect();
    let gen = |seed| {
        let mut buf = Vec::new();
        prior::write_csv(&prior::samples_at(&prior_cfg, seed, &idx).unwrap(), &mut buf).unwrap();
        buf
    };
    let prior_same = gen(9) == gen(9) && gen(9) != gen(10);
    let corpus = |seed| {
        let (s, _) = small_corpus(seed, 3000);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        buf
    };
    let corpus_same = corpus(9) == corpus(9);

    // Trained checkpoints: two short runs of the same seed.
    let train_bytes = |seed: u64| {
        let cfg = PfnConfig { max_history: 64, head_width: 24, ..PfnConfig::small(1, 2, 8) };
        let pc = PriorConfig { max_history: 64, period_range: (8, 40), target_length: 24, ..PriorConfig::default() };
        let tc = TrainConfig { n_samples: 256, batch_size: 32, epochs: 2, seed, validation_samples: 16, ..TrainConfig::default() };
        let mut m = PfnModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        pfn::train(&mut m, &pc, &tc).unwrap();
        let mut buf = Vec::new();
        pfn::save_to(&m, None, &mut buf).unwrap();
        buf
    };
    let ckpt_same = train_bytes(4) == train_bytes(4) && train_bytes(4) != train_bytes(5);

    // Reports.
    let (store, meta) = small_corpus(19, 2400);
    let spec = BaselineSpec::new(BaselineKind::Dlinear, 48, meta.period);
    let report = || {
        let recs = evaluate_long_term(&spec, &store, &meta, &[24, 48], &EvalOptions { stride: 4, units: Units::Standardized, ..Default::default() }).unwrap();
        let m = ResultsMatrix::from_records(&recs, Metric::Mae, None).unwrap();
        (records_bytes(&recs), render_markdown(&Table::from_matrix(&m), 6))
    };
    let report_same = report() == report();

    // Checkpoint round trip of the desk model.
    let d = desk();
    let mut buf = Vec::new();
    pfn::save_to(&d.model, None, &mut buf).unwrap();
    let back = pfn::load_from(buf.as_slice()).unwrap().model;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut preds_same = true;
    for _ in 0..10 {
        let n = rng.gen_range(2..=300);
        let h: Vec<f64> = (0..n).map(|t| (t as f64 * 0.3).sin() + rng.gen_range(0.0..0.1)).collect();
        preds_same &= d.model.predict(&h, 96).unwrap() == back.predict(&h, 96).unwrap();
    }
    let pass = prior_same && corpus_same && ckpt_same && report_same && preds_same;
    verdict(
        9,
        "determinism and persistence",
        pass,
        &format!("prior corpora {prior_same}, benchmark corpus {corpus_same}, trained checkpoints {ckpt_same}, reports {report_same}, checkpoint round-trip predictions bitwise {preds_same}"),
    );
}

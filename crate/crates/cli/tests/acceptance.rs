//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! PASS  3  NLL closed forms                 (0.0s)  6 cases within 1e-12
//! ```
//!
//! Some sub-checks cannot pass for a reason worked out in advance. They
//! still print FAIL, followed by the recorded reason, but do not change the
//! exit status. Any other failure makes the process exit with status 1.
//!
//! Criterion 10 needs the public marketing-campaign table. Point
//! `TABINSIGHT_MARKETING_CSV` at it to run the check; otherwise it prints
//! SKIP.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles;
use support::stub::{completion, qa_chunk_budget, StubServer};
use tabinsight::feature_profile::{discrete_summary, type_label};
use tabinsight::llm_gateway::{LlmClient, LlmConfig, PLACEHOLDER_DESCRIPTION};
use tabinsight::model_zoo::mlp::{Mlp, MlpParams, MlpTarget};
use tabinsight::model_zoo::{
    fit_count, fit_model, nll_classification, nll_regression, DesignMatrix, Gaussian, ModelConfig, ModelFamily,
    Prediction, Target, TrainedModel,
};
use tabinsight::pairwise_stats::{
    anova_oneway, chi2_from_table, cohens_f, kruskal_wallis, mutual_info_codes, pearson, spearman, MetricSet,
};
use tabinsight::report_builder::{answer_question, cache_load, cache_path, report_body, CacheEntry};
use tabinsight::shap_engine::{credibility, shap_entropy, CredibilityLevel, KernelExplainer, ShapConfig};
use tabinsight::special::{chi2_sf, f_sf, regularized_beta, regularized_gamma_p};
use tabinsight::synthetic::planted_signal_csv;
use tabinsight::table_ingest::{content_hash, encode_features, infer_feature_types, parse_csv, CleaningPolicy};
use tabinsight_cli::{run_analyze, RunConfig};

/// Statistics against their oracles.
const STAT_TOL: f64 = 1e-9;
/// p-values, which go through the incomplete beta and gamma functions.
const P_TOL: f64 = 1e-6;
/// Incomplete beta and gamma against numerical integration.
const SPECIAL_TOL: f64 = 1e-8;
const NLL_TOL: f64 = 1e-12;
/// KernelSHAP against exact Shapley values, and local accuracy.
const SHAP_TOL: f64 = 1e-6;
/// Relative error of backpropagated gradients.
const GRAD_TOL: f64 = 1e-4;
const PLANTED_PEARSON: f64 = 0.9;
const PLANTED_CRAMERS_V: f64 = 0.9;

const STATS_BUDGET: Duration = Duration::from_secs(5);
const SHAP_BUDGET: Duration = Duration::from_secs(60);
const PLANTED_BUDGET: Duration = Duration::from_secs(180);

/// Uniform SHAP vectors evaluate `−Σ p ln p` to within a few ulps of
/// `ln M`; bitwise equality holds only when `1/M` is exact.
const UNIFORM_ULPS: f64 = 4.0;

const GAP_PLANTED_CORRELATION: &str = "x1 and x2 are independent, so r(x1,y)² + r(x2,y)² ≤ 1 and both cannot reach \
     0.9; for y = 3x1 − 2x2 + 0.1·noise with uniform inputs the population values are 0.83 and −0.55";
const GAP_SCORE_ORDER: &str = "the score H/(|NLL|·SHAP-Err) rewards diffuse SHAP importance; the pure-noise \
     target z spreads its small attributions evenly, so its entropy is about twice that of y while the NLL and \
     SHAP-Err factors are of similar size";

struct Outcome {
    pass: bool,
    detail: String,
    /// Reasons for failed sub-checks that are expected to fail.
    gaps: Vec<&'static str>,
    /// A failure not covered by `gaps`.
    blocking: bool,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Outcome {
        Outcome { pass, detail: detail.into(), gaps: Vec::new(), blocking: !pass }
    }
}

enum Verdict {
    Ran(Outcome),
    Skip(String),
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Tracks the worst deviation seen across a batch of comparisons.
#[derive(Default)]
struct Worst {
    cases: usize,
    failures: Vec<String>,
}

impl Worst {
    fn compare(&mut self, label: &str, got: f64, want: f64, tol: f64) {
        self.cases += 1;
        if !close(got, want, tol) {
            self.failures.push(format!("{label}: {got} vs {want}"));
        }
    }

    fn outcome(self, what: &str) -> Outcome {
        match self.failures.first() {
            None => Outcome::check(true, format!("{} {what} comparisons", self.cases)),
            Some(f) => Outcome::check(false, format!("{} of {} off, first {f}", self.failures.len(), self.cases)),
        }
    }
}

fn grid_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-20..20) as f64 * 0.25).collect()
}

fn groups_of(values: &[f64], codes: &[u32], k: u32) -> Vec<Vec<f64>> {
    (0..k).map(|g| values.iter().zip(codes).filter(|(_, &c)| c == g).map(|(v, _)| *v).collect()).collect()
}

fn statistic_oracles() -> Outcome {
    let start = Instant::now();
    let mut w = Worst::default();

    w.compare("pearson example", pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, STAT_TOL);
    w.compare("spearman ties", spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 30.0]).unwrap(), 1.0, STAT_TOL);
    let a = anova_oneway(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap();
    w.compare("anova F", a.f, 8.0, STAT_TOL);
    w.compare("anova eta²", a.eta_squared, 0.8, STAT_TOL);
    w.compare("kruskal example", kruskal_wallis(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap(), 2.4, STAT_TOL);
    w.compare("cohen 0.8", cohens_f(0.8), 2.0, STAT_TOL);
    w.compare("cohen 0.5", cohens_f(0.5), 1.0, STAT_TOL);
    let c = chi2_from_table(&[vec![20, 0], vec![0, 20]]).unwrap();
    w.compare("chi2 diagonal", c.chi2, 40.0, STAT_TOL);
    w.compare("V diagonal", c.cramers_v, 1.0, STAT_TOL);
    w.compare("MI identity", mutual_info_codes(&[0, 0, 1, 1], &[0, 0, 1, 1]), 2f64.ln(), STAT_TOL);
    w.compare("MI independent", mutual_info_codes(&[0, 0, 1, 1], &[0, 1, 0, 1]), 0.0, STAT_TOL);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let n = rng.random_range(4..30);
        let (x, y) = (grid_values(&mut rng, n), grid_values(&mut rng, n));
        w.compare(&format!("pearson #{case}"), pearson(&x, &y).unwrap(), oracles::pearson(&x, &y), STAT_TOL);
        w.compare(&format!("spearman #{case}"), spearman(&x, &y).unwrap(), oracles::spearman(&x, &y), STAT_TOL);

        let k = rng.random_range(2..5u32);
        let codes: Vec<u32> = (0..k).flat_map(|g| std::iter::repeat_n(g, rng.random_range(2..8))).collect();
        let values = grid_values(&mut rng, codes.len());
        let groups = groups_of(&values, &codes, k);
        let (f, eta) = oracles::anova(&groups);
        let ours = anova_oneway(&values, &codes).unwrap();
        w.compare(&format!("anova F #{case}"), ours.f, f, STAT_TOL * f.abs().max(1.0));
        w.compare(&format!("anova eta² #{case}"), ours.eta_squared, eta, STAT_TOL);
        let p = oracles::f_sf(f, (k - 1) as f64, (codes.len() as u32 - k) as f64);
        w.compare(&format!("anova p #{case}"), ours.p, p, P_TOL);
        w.compare(&format!("cohen f #{case}"), cohens_f(eta), (eta / (1.0 - eta)).sqrt(), STAT_TOL);
        let kw = kruskal_wallis(&values, &codes).unwrap();
        w.compare(&format!("kruskal #{case}"), kw, oracles::kruskal(&groups), STAT_TOL);

        let (r, cc) = (rng.random_range(2..5), rng.random_range(2..5));
        let table: Vec<Vec<u64>> = (0..r).map(|_| (0..cc).map(|_| rng.random_range(1..25)).collect()).collect();
        let ours = chi2_from_table(&table).unwrap();
        let (stat, dof, v) = oracles::chi2(&table);
        w.compare(&format!("chi2 #{case}"), ours.chi2, stat, STAT_TOL * stat.max(1.0));
        w.compare(&format!("V #{case}"), ours.cramers_v, v, STAT_TOL);
        w.compare(&format!("chi2 p #{case}"), ours.p, oracles::chi2_sf(stat, dof), P_TOL);

        let n = rng.random_range(5..60);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        w.compare(&format!("MI #{case}"), mutual_info_codes(&a, &b), oracles::mutual_info_codes(&a, &b), STAT_TOL);
    }
    let elapsed = start.elapsed();
    let mut out = w.outcome("statistic");
    if elapsed > STATS_BUDGET {
        out.pass = false;
        out.detail.push_str(&format!(", over the {STATS_BUDGET:?} budget"));
    }
    out
}

fn special_functions() -> Outcome {
    let mut w = Worst::default();
    for a in [0.5, 1.0, 2.5, 7.0] {
        for b in [0.5, 1.5, 3.0, 10.0, 40.0] {
            for x in [0.01, 0.2, 0.5, 0.8, 0.99] {
                w.compare(
                    &format!("I_{x}({a},{b})"),
                    regularized_beta(a, b, x),
                    oracles::incomplete_beta(a, b, x),
                    SPECIAL_TOL,
                );
            }
        }
    }
    for a in [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.5, 15.0, 30.0, 60.0] {
        for frac in [0.05, 0.2, 0.5, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0, 5.0] {
            let x = a * frac;
            w.compare(
                &format!("P({a},{x})"),
                regularized_gamma_p(a, x),
                oracles::incomplete_gamma_p(a, x),
                SPECIAL_TOL,
            );
        }
    }
    w.compare("F tail", f_sf(3.5, 2.0, 12.0), oracles::f_sf(3.5, 2.0, 12.0), SPECIAL_TOL);
    w.compare("chi2 tail", chi2_sf(7.0, 3.0), oracles::chi2_sf(7.0, 3.0), SPECIAL_TOL);
    w.outcome("grid")
}

fn nll_formulas() -> Outcome {
    use std::f64::consts::{LN_2, PI};
    let mut w = Worst::default();
    w.compare("p=1", nll_classification(&[vec![1.0, 0.0]], &[0]), 0.0, NLL_TOL);
    w.compare("p=0.5", nll_classification(&[vec![0.5, 0.5]], &[1]), LN_2, NLL_TOL);
    w.compare("y=μ", nll_regression(&[Gaussian { mean: 3.0, var: 1.0 / (2.0 * PI) }], &[3.0]), 0.0, NLL_TOL);
    let unit = nll_regression(&[Gaussian { mean: 0.0, var: 1.0 }], &[1.0]);
    w.compare("unit residual", unit, 0.5 * (2.0 * PI).ln() + 0.5, NLL_TOL);
    let half = nll_regression(&[Gaussian { mean: 0.0, var: 0.5 }], &[0.0]);
    w.compare(
        "doubled variance",
        nll_regression(&[Gaussian { mean: 0.0, var: 1.0 }], &[0.0]) - half,
        0.5 * LN_2,
        NLL_TOL,
    );
    w.compare("three classes", nll_classification(&vec![vec![0.2, 0.3, 0.5]; 2], &[2, 2]), -(0.5f64).ln(), NLL_TOL);
    w.outcome("closed-form")
}

fn predicted_output(model: &TrainedModel, x: &[f64], class: Option<usize>) -> f64 {
    match model.predict(x).unwrap() {
        Prediction::Probs(p) => p[class.unwrap()],
        Prediction::Gaussian(g) => g.mean,
    }
}

fn kernel_shap() -> Outcome {
    let start = Instant::now();
    let cfg = ShapConfig::default();
    let model_cfg =
        ModelConfig { mlp: MlpParams { hidden: 8, epochs: 60, ..MlpParams::default() }, ..ModelConfig::default() };
    let families = [ModelFamily::Linear, ModelFamily::Tree, ModelFamily::Mlp];
    let (mut models, mut rows_checked, mut worst_phi, mut worst_sum) = (0, 0, 0.0f64, 0.0f64);
    for seed in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let d = 2 + seed as usize % 7;
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let score = |r: &Vec<f64>| (2.0 * r[0]).cos() + r[1] * r[d - 1] - r[d / 2];
        let target = if seed % 2 == 0 {
            Target::Real(rows.iter().map(score).collect())
        } else {
            Target::Classes { labels: rows.iter().map(|r| usize::from(score(r) > 0.3)).collect(), n_classes: 2 }
        };
        let m = DesignMatrix::from_rows(&rows, "t", target).unwrap();
        let model = fit_model(families[seed as usize % 3], &m, &model_cfg, seed).unwrap();
        let background = rows[..6].to_vec();
        let groups: Vec<Range<usize>> = (0..d).map(|j| j..j + 1).collect();
        let explainer = KernelExplainer::new(&model, &background, groups.clone(), &cfg).unwrap();
        for x in &rows[30..35] {
            let phi = explainer.explain(x).unwrap();
            let class = explainer.explained_class(x);
            let exact = oracles::exact_shapley(d, |mask| {
                background
                    .iter()
                    .map(|b| {
                        let hybrid: Vec<f64> = (0..d).map(|j| if mask[j] { x[j] } else { b[j] }).collect();
                        predicted_output(&model, &hybrid, class)
                    })
                    .sum::<f64>()
                    / background.len() as f64
            });
            for (a, b) in phi.iter().zip(&exact) {
                worst_phi = worst_phi.max((a - b).abs());
            }
            let gap = predicted_output(&model, x, class) - explainer.value(&vec![false; d], x, class);
            worst_sum = worst_sum.max((phi.iter().sum::<f64>() - gap).abs());
            rows_checked += 1;
        }
        models += 1;
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst_phi < SHAP_TOL && worst_sum < SHAP_TOL && elapsed < SHAP_BUDGET,
        format!(
            "{models} models, {rows_checked} rows, max |Δφ| {worst_phi:.1e}, max local-accuracy gap {worst_sum:.1e}"
        ),
    )
}

fn entropy_and_score() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut problems = Vec::new();
    for _ in 0..1000 {
        let m = rng.random_range(2..40);
        let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let h = shap_entropy(&v);
        if !(0.0..=(m as f64).ln()).contains(&h) {
            problems.push(format!("H={h} for M={m}"));
        }
    }
    for m in 2..30 {
        let ln_m = (m as f64).ln();
        if (shap_entropy(&vec![0.4; m]) - ln_m).abs() > UNIFORM_ULPS * f64::EPSILON * ln_m {
            problems.push(format!("uniform M={m}"));
        }
        let mut one_hot = vec![0.0; m];
        one_hot[0] = 2.0;
        if shap_entropy(&one_hot) != 0.0 {
            problems.push(format!("one-hot M={m}"));
        }
    }
    for h in [0.2, 1.0, 2.5] {
        for n in [-1.5, 0.3, 1.2] {
            for e in [1e-4, 1e-2, 0.3] {
                let s = credibility(h, n, e).0;
                if !(credibility(h * 1.2, n, e).0 > s
                    && credibility(h, n * 1.2, e).0 < s
                    && credibility(h, n, e * 1.2).0 < s)
                {
                    problems.push(format!("monotonicity at ({h},{n},{e})"));
                }
            }
        }
    }
    let cutoffs = [
        (10.0, CredibilityLevel::High),
        (9.999_999, CredibilityLevel::Medium),
        (3.0, CredibilityLevel::Medium),
        (2.999_999, CredibilityLevel::Low),
    ];
    for (score, level) in cutoffs {
        if CredibilityLevel::from_score(score) != level {
            problems.push(format!("level at {score}"));
        }
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("1000 vectors, uniform within {UNIFORM_ULPS} ulp of ln M, one-hot exactly 0, 27-point grid, cutoffs 3 and 10")
        } else {
            problems.join("; ")
        },
    )
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (d, n) = (3 + seed as usize % 2, 10);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let (outputs, target) = if seed % 2 == 0 { (3, MlpTarget::Classes(&labels)) } else { (1, MlpTarget::Real(&y)) };
        let mut net = Mlp::init(d, 5, outputs, 0.8, seed);
        let grad = net.loss_and_gradient(&data, n, target).1;
        let theta = net.flat();
        let mut num = Vec::with_capacity(theta.len());
        for k in 0..theta.len() {
            let mut p = theta.clone();
            p[k] += 1e-5;
            net.set_flat(&p);
            let up = net.loss_and_gradient(&data, n, target).0;
            p[k] -= 2e-5;
            net.set_flat(&p);
            let down = net.loss_and_gradient(&data, n, target).0;
            num.push((up - down) / 2e-5);
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = grad.iter().zip(&num).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / (norm(&grad) + norm(&num)));
    }
    Outcome::check(worst < GRAD_TOL, format!("5 networks, worst relative error {worst:.1e}"))
}

/// The planted-signal run shared by criteria 7 and 8.
struct PlantedRun {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    entry: CacheEntry,
    report_file: String,
    elapsed: Duration,
}

fn planted_run() -> &'static PlantedRun {
    static RUN: OnceLock<PlantedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("planted.csv");
        fs::write(&input, planted_signal_csv(1000, 42)).unwrap();
        let mut cfg = RunConfig::mock(&input, dir.path().join("report.txt"), dir.path().join("cache"));
        cfg.workers = 1;
        let start = Instant::now();
        run_analyze(&cfg).unwrap();
        let elapsed = start.elapsed();
        let bytes = fs::read(&input).unwrap();
        let digest = cfg.analysis.digest(&cfg.llm).unwrap();
        let entry = cache_load(&cfg.cache_dir, "planted.csv", &content_hash(&bytes), &digest).unwrap();
        let report_file = fs::read_to_string(&cfg.output_path).unwrap();
        PlantedRun { _dir: dir, cfg, entry, report_file, elapsed }
    })
}

fn planted_signal() -> Outcome {
    let run = planted_run();
    let report = &run.entry.report;
    let mut problems = Vec::new();
    let mut gaps = Vec::new();
    let mut blocking = false;
    let mut notes = Vec::new();
    let relation = |s: &str, t: &str| report.relations.iter().find(|r| r.source == s && r.target == t);
    for source in ["x1", "x2"] {
        match relation(source, "y").map(|r| (r.significant, r.metrics)) {
            Some((true, Some(MetricSet::ContCont { pearson_r, .. }))) => {
                let note = format!("r({source},y)={pearson_r:.3}");
                if pearson_r.abs() >= PLANTED_PEARSON {
                    notes.push(note);
                } else {
                    problems.push(format!("{note} below {PLANTED_PEARSON}"));
                    gaps.push(GAP_PLANTED_CORRELATION);
                }
            }
            other => {
                problems.push(format!("{source}→y: {other:?}"));
                blocking = true;
            }
        }
    }
    match relation("c1", "d").map(|r| (r.significant, r.metrics)) {
        Some((true, Some(MetricSet::DiscDisc { cramers_v, .. }))) if cramers_v >= PLANTED_CRAMERS_V => {
            notes.push(format!("V(c1,d)={cramers_v:.3}"));
        }
        other => {
            problems.push(format!("c1→d: {other:?}"));
            blocking = true;
        }
    }
    let score = |t: &str| report.analyses.iter().find(|a| a.target_name == t).map(|a| a.credibility_score);
    match (score("y"), score("z")) {
        (Some(y), Some(z)) if y > z => notes.push(format!("score y {y:.2} > z {z:.2}")),
        (Some(y), Some(z)) => {
            problems.push(format!("score y {y:.2} not above z {z:.2}"));
            gaps.push(GAP_SCORE_ORDER);
        }
        (y, z) => {
            problems.push(format!("missing scores: y {y:?}, z {z:?}"));
            blocking = true;
        }
    }
    for heading in [
        "1. INDIVIDUAL FEATURE STATISTICS",
        "2. FEATURE-TO-FEATURE RELATIONSHIPS",
        "3. COMPLEX RELATIONSHIP CREDIBILITY SCORES",
    ] {
        if !run.report_file.contains(heading) {
            problems.push(format!("missing section {heading}"));
            blocking = true;
        }
    }
    if run.elapsed > PLANTED_BUDGET {
        problems.push(format!("took {:?}", run.elapsed));
        blocking = true;
    }
    notes.push(format!("{:.1}s on one worker", run.elapsed.as_secs_f64()));
    if problems.is_empty() {
        return Outcome::check(true, notes.join(", "));
    }
    gaps.dedup();
    Outcome {
        pass: false,
        detail: format!("{}; passing parts: {}", problems.join("; "), notes.join(", ")),
        gaps,
        blocking,
    }
}

fn determinism_and_cache() -> Outcome {
    let first = planted_run();
    let mut problems = Vec::new();

    let other_dir = tempfile::tempdir().unwrap();
    let mut fresh = first.cfg.clone();
    fresh.cache_dir = other_dir.path().join("cache");
    fresh.output_path = other_dir.path().join("report.txt");
    fresh.workers = 4;
    let second = run_analyze(&fresh).unwrap();
    if second.cache_hit || report_body(&second.report_text) != report_body(&first.entry.report_text) {
        problems.push("fresh rerun with 4 workers changed the report body".to_string());
    }

    let fits_before = fit_count();
    let cached = run_analyze(&first.cfg).unwrap();
    let fits = fit_count() - fits_before;
    if !cached.cache_hit || fits != 0 || report_body(&cached.report_text) != report_body(&first.report_file) {
        problems.push(format!("cached rerun: hit {}, {fits} model fits", cached.cache_hit));
    }

    // size the prompt budget so the report is 2.5 per-chunk budgets long
    let question = "Which target has the highest credibility score?";
    let text = &first.entry.report_text;
    let overhead = 1_000_000 - qa_chunk_budget(question, 1_000_000);
    let per_chunk = (text.chars().count() as f64 / 2.5).ceil() as usize;
    let stub = StubServer::start(Duration::ZERO, |i, _| (200, completion(&format!("partial {i}"))));
    let llm = LlmClient::new(LlmConfig {
        endpoint_url: stub.url.clone(),
        context_char_budget: overhead + per_chunk,
        ..LlmConfig::default()
    });
    answer_question(text, question, &llm).unwrap();
    let calls = stub.calls().len();
    if calls != 4 {
        problems.push(format!("QA issued {calls} calls"));
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("bodies identical across runs and worker counts, 0 fits on the cached run, {calls} QA calls")
        } else {
            problems.join("; ")
        },
    )
}

/// Planted rows plus one extra column.
fn planted_with(header: &str, cell: impl Fn(usize) -> String) -> String {
    let base = planted_signal_csv(60, 9);
    let mut lines = base.lines();
    let mut out = format!("{},{header}\n", lines.next().unwrap());
    for (i, line) in lines.enumerate() {
        let _ = writeln!(out, "{line},{}", cell(i));
    }
    out
}

fn robustness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut passed = Vec::new();
    let mut problems = Vec::new();
    let mut case = |name: &str, csv: String, tweak: &dyn Fn(&mut RunConfig), check: &dyn Fn(&str) -> bool| {
        let input = dir.path().join(format!("{name}.csv"));
        fs::write(&input, csv).unwrap();
        let mut cfg = RunConfig::mock(&input, dir.path().join(format!("{name}.txt")), dir.path().join("cache"));
        tweak(&mut cfg);
        match catch_unwind(AssertUnwindSafe(|| run_analyze(&cfg))) {
            Ok(Ok(out)) if check(&out.report_text) => passed.push(name.to_string()),
            Ok(Ok(_)) => problems.push(format!("{name}: degradation not visible in the report")),
            Ok(Err(e)) => problems.push(format!("{name}: {e}")),
            Err(_) => problems.push(format!("{name}: panicked")),
        }
    };

    let stub = StubServer::start(Duration::ZERO, |_, _| (500, "internal error".into()));
    let url = stub.url.clone();
    case(
        "llm_500",
        planted_signal_csv(60, 9),
        &|cfg| {
            cfg.llm =
                LlmConfig { endpoint_url: url.clone(), max_retries: 1, retry_backoff_ms: 1, ..LlmConfig::default() };
        },
        &|text| text.contains(PLACEHOLDER_DESCRIPTION),
    );
    case("all_missing", planted_with("empty", |_| String::new()), &|_| {}, &|text| text.contains("Dropped columns"));
    case("constant", planted_with("k1,k2", |_| "5,same".into()), &|_| {}, &|text| text.contains("3. COMPLEX"));
    case(
        "single_class",
        planted_with("flag", |i| if i == 0 { "rare".into() } else { "common".into() }),
        &|_| {},
        &|t| t.contains("3. COMPLEX"),
    );

    // corrupt the cache entry written by the constant-column case
    let input = dir.path().join("constant.csv");
    let cfg = RunConfig::mock(&input, dir.path().join("constant.txt"), dir.path().join("cache"));
    let path = cache_path(&cfg.cache_dir, "constant.csv", &content_hash(&fs::read(&input).unwrap()));
    match fs::read(&path) {
        Ok(bytes) => {
            fs::write(&path, &bytes[..bytes.len() / 3]).unwrap();
            match run_analyze(&cfg) {
                Ok(out) if !out.cache_hit => passed.push("corrupt_cache".into()),
                Ok(_) => problems.push("corrupt_cache: served a corrupt entry".into()),
                Err(e) => problems.push(format!("corrupt_cache: {e}")),
            }
        }
        Err(e) => problems.push(format!("corrupt_cache: no entry to corrupt ({e})")),
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} cases: {}", passed.len(), passed.join(", "))
        } else {
            problems.join("; ")
        },
    )
}

fn marketing_table() -> Verdict {
    let Some(path) = std::env::var_os("TABINSIGHT_MARKETING_CSV").map(PathBuf::from) else {
        return Verdict::Skip("set TABINSIGHT_MARKETING_CSV to the marketing-campaign table".into());
    };
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return Verdict::Ran(Outcome::check(false, format!("cannot read {}: {e}", path.display()))),
    };
    // the published file is tab separated and has no commas in its cells
    let header = text.lines().next().unwrap_or_default();
    let text = if header.contains('\t') && !header.contains(',') { text.replace('\t', ",") } else { text };
    let raw = match parse_csv(text.as_bytes(), "marketing_campaign.csv") {
        Ok(r) => r,
        Err(e) => return Verdict::Ran(Outcome::check(false, e.to_string())),
    };
    let kinds = infer_feature_types(&raw, &LlmClient::mock());
    let table = encode_features(&raw, &kinds, &CleaningPolicy::default()).unwrap();
    let mut problems = Vec::new();
    match table.feature("Education") {
        Some(edu) => {
            let mapping = edu.category_mapping();
            let want = [("2n Cycle", 0), ("Basic", 1), ("Graduation", 2), ("Master", 3), ("PhD", 4)];
            if mapping != want {
                problems.push(format!("mapping {mapping:?}"));
            }
            let stats = discrete_summary(edu).unwrap();
            let counts: Vec<usize> = stats.ranked().iter().map(|r| r.1).collect();
            if counts != [1127, 486, 370, 203, 54] {
                problems.push(format!("counts {counts:?}"));
            }
        }
        None => problems.push("no Education column".into()),
    }
    match table.feature("Year_Birth").map(type_label) {
        Some("continuous") => {}
        other => problems.push(format!("Year_Birth type {other:?}")),
    }
    Verdict::Ran(Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            "Education mapping and counts, Year_Birth continuous".into()
        } else {
            problems.join("; ")
        },
    ))
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "statistic oracles", || Verdict::Ran(statistic_oracles())),
        (2, "special functions", || Verdict::Ran(special_functions())),
        (3, "NLL closed forms", || Verdict::Ran(nll_formulas())),
        (4, "KernelSHAP vs exact Shapley", || Verdict::Ran(kernel_shap())),
        (5, "entropy and score", || Verdict::Ran(entropy_and_score())),
        (6, "MLP gradient check", || Verdict::Ran(gradient_check())),
        (7, "planted-signal run", || Verdict::Ran(planted_signal())),
        (8, "determinism and cache", || Verdict::Ran(determinism_and_cache())),
        (9, "fault injection", || Verdict::Ran(robustness())),
        (10, "marketing table", marketing_table),
    ];
    let (mut pass, mut fail, mut known, mut skip) = (0, 0, 0, 0);
    for (id, name, check) in criteria {
        let start = Instant::now();
        let verdict = catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Ran(Outcome::check(false, format!("panicked: {msg}")))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Verdict::Skip(why) => {
                skip += 1;
                println!("SKIP  {id:>2}  {name:<30} ({secs:.1}s)  {why}");
            }
            Verdict::Ran(out) if out.pass => {
                pass += 1;
                println!("PASS  {id:>2}  {name:<30} ({secs:.1}s)  {}", out.detail);
            }
            Verdict::Ran(out) => {
                println!("FAIL  {id:>2}  {name:<30} ({secs:.1}s)  {}", out.detail);
                for why in &out.gaps {
                    println!("      known gap: {why}");
                }
                if out.blocking {
                    fail += 1;
                } else {
                    known += 1;
                }
            }
        }
    }
    println!("\n{pass} passed, {} failed ({known} known gap), {skip} skipped", fail + known);
    if fail > 0 {
        std::process::exit(1);
    }
}

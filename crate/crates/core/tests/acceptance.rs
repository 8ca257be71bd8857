//! Acceptance suite. Prints one line per criterion and exits nonzero when a
//! gating criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use absa_core::autograd::{ParamGroup, ParamId};
use absa_core::corpus::{
    aspect_inventory, detection_view, filter_single_target, split, AbsaRecord, AspectInventory, Polarity,
};
use absa_core::detector::{bce_loss, combined_loss, lca_loss, AspectDetector, LabelVector};
use absa_core::encoder::{resolve_backbone_dir, BackboneKind, EncoderSpec, BACKBONE_CACHE_ENV};
use absa_core::fixtures::{self, SyntheticCorpus};
use absa_core::metrics::{
    accuracy, multiclass_f1, multilabel_f1, multilabel_precision_recall, sample_jaccard, Averaging,
    MultiLabelPredictions, MulticlassPredictions,
};
use absa_core::pipeline::{cross_domain_eval, EvalInputs, EvalMode, PipelineConfig};
use absa_core::sentiment::{cross_entropy, PolarityDistribution, PolarityLabel, QuerySpec, SentimentPredictor};
use absa_core::templating::{build_sentiment_input, build_sentiment_query, AspectMode, AspectModeKind};
use absa_core::trainer::{train, Hyperparameters, Trainable};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURES: usize = 1000;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: u32,
    name: &'static str,
    status: Status,
    detail: String,
    elapsed: Duration,
}

fn run(id: u32, name: &'static str, budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (mut ok, mut detail) = f();
    let elapsed = start.elapsed();
    if let Some(b) = budget {
        if elapsed > b {
            ok = false;
            detail.push_str(&format!("; over budget {:?}", b));
        }
    }
    Line {
        id,
        name,
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
        elapsed,
    }
}

fn fail_if(ok: &mut bool, cond: bool, msgs: &mut Vec<String>, msg: String) {
    if cond {
        *ok = false;
        msgs.push(msg);
    }
}

// ---- criterion 2 ----

fn lca_oracle(y: &[bool], s: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in 0..y.len() {
        for q in 0..y.len() {
            if !y[p] && y[q] {
                sum += (s[p] - s[q]).exp();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn bce_oracle(y: &[bool], s: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..y.len() {
        let p = s[i].clamp(1e-12, 1.0 - 1e-12);
        sum += if y[i] { -p.ln() } else { -(1.0 - p).ln() };
    }
    sum / y.len() as f64
}

fn loss_oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..FIXTURES {
        let c = rng.gen_range(1..=8);
        let batch: Vec<(Vec<bool>, Vec<f64>)> = (0..rng.gen_range(1..=4))
            .map(|_| {
                (
                    (0..c).map(|_| rng.gen_bool(0.4)).collect(),
                    (0..c).map(|_| rng.gen_range(0.001..0.999)).collect(),
                )
            })
            .collect();
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let (y, s) = &batch[0];
        let lv = LabelVector::new(y.clone());
        worst = worst.max((lca_loss(&lv, s).unwrap() - lca_oracle(y, s)).abs());
        worst = worst.max((bce_loss(&lv, s).unwrap() - bce_oracle(y, s)).abs());

        let mut expect = 0.0;
        for (y, s) in &batch {
            expect += (1.0 - alpha) * bce_oracle(y, s) + alpha * lca_oracle(y, s);
        }
        expect /= batch.len() as f64;
        let typed: Vec<_> = batch.iter().map(|(y, s)| (LabelVector::new(y.clone()), s.clone())).collect();
        worst = worst.max((combined_loss(&typed, alpha).unwrap() - expect).abs());

        let z: [f64; 3] = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let gold = rng.gen_range(0..3);
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let ce_expect = -(z[gold].exp() / denom).ln();
        let got = cross_entropy(
            PolarityLabel(Polarity::from_index(gold).unwrap()),
            &PolarityDistribution::from_logits(z),
        );
        worst = worst.max((got - ce_expect).abs());
    }

    let y = |b: &[u8]| LabelVector::new(b.iter().map(|&v| v == 1).collect());
    let four = lca_loss(&y(&[1, 1, 0, 0]), &[0.9, 0.6, 0.2, 0.4]).unwrap();
    // the four-label case is derived by hand from its four pair terms
    let four_hand = ((-0.7f64).exp() + (-0.4f64).exp() + (-0.5f64).exp() + (-0.2f64).exp()) / 4.0;
    let hand = [
        ("lca2", lca_loss(&y(&[1, 0]), &[0.8, 0.3]).unwrap(), 0.60653),
        ("lca4", four, four_hand),
        ("combined", combined_loss(&[(y(&[1, 0]), vec![0.8, 0.3])], 0.2).unwrap(), 0.35323),
        ("bce", bce_loss(&y(&[1, 0]), &[0.8, 0.3]).unwrap(), 0.28990),
        (
            "ce",
            cross_entropy(PolarityLabel(Polarity::Positive), &PolarityDistribution { p: [0.7, 0.2, 0.1] }),
            0.35667,
        ),
    ];
    let mut ok = worst <= 1e-12;
    let mut msgs = vec![format!("max |impl - oracle| = {worst:.2e} over {FIXTURES} fixtures")];
    for (name, got, want) in hand {
        fail_if(&mut ok, (got - want).abs() > 1e-5, &mut msgs, format!("{name}: {got} vs {want}"));
    }
    msgs.push(format!("lca4 = {four:.6} (printed hand value 0.64803 is off by {:.1e})", (four - 0.64803).abs()));
    (ok, msgs.join("; "))
}

// ---- criterion 3 ----

/// Central differences of one example's loss along random directions; the
/// direction covers the parameters of the given group, or all of them.
fn gradient_check<M: Trainable>(model: &mut M, example: &M::Example, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grads) = model.example_loss(example, None).unwrap();
    let groups = [None, Some(ParamGroup::Encoder), Some(ParamGroup::Head), None, Some(ParamGroup::Encoder), Some(ParamGroup::Head)];
    let mut errors = Vec::new();
    for group in groups {
        let dir: Vec<Array2<f64>> = model
            .params()
            .iter()
            .map(|(_, p)| {
                let on = group.is_none_or(|g| g == p.group);
                Array2::from_shape_fn(p.value.dim(), |_| if on { rng.gen_range(-1.0..1.0) } else { 0.0 })
            })
            .collect();
        let analytic = grads.dot(&dir);
        let h = 1e-5;
        let mut at = |eps: f64| {
            for (i, d) in dir.iter().enumerate() {
                model.params_mut().get_mut(ParamId::from_index(i)).scaled_add(eps, d);
            }
            let v = model.example_loss(example, None).unwrap().0;
            for (i, d) in dir.iter().enumerate() {
                model.params_mut().get_mut(ParamId::from_index(i)).scaled_add(-eps, d);
            }
            v
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        errors.push((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-10));
    }
    errors
}

fn gradient_checks() -> (bool, String) {
    let spec = EncoderSpec::toy();
    let records = fixtures::detector_overfit_set().unwrap();
    let inv = aspect_inventory(&fixtures::semeval_records().unwrap());
    let mut det = AspectDetector::toy(&spec, inv, 3).unwrap();
    let ex = det.examples(&records[..3]).unwrap();
    let mut errs = Vec::new();
    for (k, e) in ex.iter().enumerate() {
        errs.extend(gradient_check(&mut det, e, k as u64));
    }

    let sent_records = fixtures::sentiment_overfit_set().unwrap();
    let q = QuerySpec {
        mode: AspectModeKind::Right,
        inventory: aspect_inventory(&sent_records),
        null_target: "it".into(),
    };
    let mut sent = SentimentPredictor::toy(&spec, AspectModeKind::Right, 4).unwrap();
    let sex = sent.examples(&sent_records[..3], &q).unwrap();
    let mut serrs = Vec::new();
    for (k, e) in sex.iter().enumerate() {
        serrs.extend(gradient_check(&mut sent, e, 10 + k as u64));
    }
    let worst = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let ok = worst(&errs) <= 1e-4 && worst(&serrs) <= 1e-4;
    (
        ok,
        format!(
            "combined loss: {} directions, max rel err {:.1e}; cross-entropy: {} directions, max rel err {:.1e}",
            errs.len(),
            worst(&errs),
            serrs.len(),
            worst(&serrs)
        ),
    )
}

// ---- criterion 4 ----

struct LabelCounts {
    tp: f64,
    fp: f64,
    fn_: f64,
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn count_class(gold: &[Vec<bool>], pred: &[Vec<bool>], c: usize) -> LabelCounts {
    let mut k = LabelCounts { tp: 0.0, fp: 0.0, fn_: 0.0 };
    for i in 0..gold.len() {
        if gold[i][c] && pred[i][c] {
            k.tp += 1.0;
        }
        if !gold[i][c] && pred[i][c] {
            k.fp += 1.0;
        }
        if gold[i][c] && !pred[i][c] {
            k.fn_ += 1.0;
        }
    }
    k
}

/// (macro f1, micro f1, jaccard, precision, recall) by explicit loops.
fn multilabel_oracle(c: usize, gold: &[Vec<bool>], pred: &[Vec<bool>]) -> [f64; 5] {
    let (mut f1, mut p, mut r) = (0.0, 0.0, 0.0);
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for class in 0..c {
        let k = count_class(gold, pred, class);
        f1 += safe_div(2.0 * k.tp, 2.0 * k.tp + k.fp + k.fn_);
        p += safe_div(k.tp, k.tp + k.fp);
        r += safe_div(k.tp, k.tp + k.fn_);
        tp += k.tp;
        fp += k.fp;
        fn_ += k.fn_;
    }
    let mut jac = 0.0;
    for i in 0..gold.len() {
        let g: BTreeSet<usize> = (0..c).filter(|&j| gold[i][j]).collect();
        let q: BTreeSet<usize> = (0..c).filter(|&j| pred[i][j]).collect();
        let union = g.union(&q).count();
        jac += if union == 0 { 1.0 } else { g.intersection(&q).count() as f64 / union as f64 };
    }
    let cf = c as f64;
    [f1 / cf, safe_div(2.0 * tp, 2.0 * tp + fp + fn_), jac / gold.len() as f64, p / cf, r / cf]
}

/// (macro f1, micro f1 from pooled counts, accuracy).
fn multiclass_oracle(pairs: &[(usize, usize)]) -> [f64; 3] {
    let (mut macro_f1, mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..3 {
        let (mut t, mut f, mut n) = (0.0, 0.0, 0.0);
        for &(g, p) in pairs {
            if g == c && p == c {
                t += 1.0;
            }
            if g != c && p == c {
                f += 1.0;
            }
            if g == c && p != c {
                n += 1.0;
            }
        }
        macro_f1 += safe_div(2.0 * t, 2.0 * t + f + n);
        tp += t;
        fp += f;
        fn_ += n;
    }
    let correct = pairs.iter().filter(|(g, p)| g == p).count() as f64;
    [macro_f1 / 3.0, safe_div(2.0 * tp, 2.0 * tp + fp + fn_), correct / pairs.len() as f64]
}

fn metric_oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut micro_is_accuracy = true;
    for _ in 0..FIXTURES {
        let c = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=20);
        let mut sample = || -> Vec<Vec<bool>> { (0..n).map(|_| (0..c).map(|_| rng.gen_bool(0.35)).collect()).collect() };
        let gold = sample();
        let pred = sample();
        let preds = MultiLabelPredictions::new(c, gold.clone(), pred.clone()).unwrap();
        let (p, r) = multilabel_precision_recall(&preds);
        let got = [
            multilabel_f1(&preds, Averaging::Macro),
            multilabel_f1(&preds, Averaging::Micro),
            sample_jaccard(&preds),
            p,
            r,
        ];
        for (a, b) in got.iter().zip(multilabel_oracle(c, &gold, &pred)) {
            worst = worst.max((a - b).abs());
        }

        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.gen_range(0..3), rng.gen_range(0..3))).collect();
        let mc = MulticlassPredictions::new(
            pairs
                .iter()
                .map(|&(g, p)| (Polarity::from_index(g).unwrap(), Polarity::from_index(p).unwrap()))
                .collect(),
        )
        .unwrap();
        let oracle = multiclass_oracle(&pairs);
        worst = worst.max((multiclass_f1(&mc, Averaging::Macro) - oracle[0]).abs());
        worst = worst.max((multiclass_f1(&mc, Averaging::Micro) - oracle[1]).abs());
        worst = worst.max((accuracy(&mc) - oracle[2]).abs());
        micro_is_accuracy &= (oracle[1] - oracle[2]).abs() <= 1e-12
            && multiclass_f1(&mc, Averaging::Micro) == accuracy(&mc);
    }
    (
        worst <= 1e-12 && micro_is_accuracy,
        format!("max |impl - oracle| = {worst:.2e} over {FIXTURES} fixtures; micro-F1 == accuracy on all: {micro_is_accuracy}"),
    )
}

// ---- criterion 5 ----

fn overfit_detector_hp() -> Hyperparameters {
    let mut hp = Hyperparameters::detector_defaults();
    hp.encoder_lr = 1e-3;
    hp.head_lr = 1e-2;
    hp.batch_size = 2;
    hp.dropout = 0.0;
    hp.warmup_fraction = 0.1;
    hp.epochs = 50;
    hp
}

fn overfit_sentiment_hp() -> Hyperparameters {
    let mut hp = Hyperparameters::sentiment_defaults();
    hp.encoder_lr = 2e-3;
    hp.head_lr = 2e-2;
    hp.batch_size = 4;
    hp.dropout = 0.0;
    hp.epochs = 50;
    hp
}

fn non_increasing_fraction(losses: &[f64]) -> f64 {
    let steps = losses.windows(2).count();
    let ok = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    safe_div(ok as f64, steps as f64)
}

fn overfit_detector() -> (bool, String) {
    let records = fixtures::detector_overfit_set().unwrap();
    let inv = aspect_inventory(&fixtures::semeval_records().unwrap());
    let hp = overfit_detector_hp();
    let mut det = AspectDetector::toy(&EncoderSpec::toy(), inv, hp.seed).unwrap();
    let ex = det.examples(&records).unwrap();
    let out = train(&mut det, &ex, &ex, &hp, None).unwrap();
    let jac = det.evaluate(&records).unwrap().get("jaccard").unwrap();
    let losses: Vec<f64> = out.epochs.iter().map(|e| e.train_loss).collect();
    let frac = non_increasing_fraction(&losses);
    (
        jac >= 0.95 && out.epochs.len() <= 50 && frac >= 0.9,
        format!("train jaccard {jac:.4} after {} epochs; loss non-increasing in {:.1}% of transitions", out.epochs.len(), frac * 100.0),
    )
}

fn overfit_sentiment() -> (bool, String) {
    let records = fixtures::sentiment_overfit_set().unwrap();
    let q = QuerySpec {
        mode: AspectModeKind::Right,
        inventory: aspect_inventory(&fixtures::sentihood_records().unwrap()),
        null_target: "it".into(),
    };
    let hp = overfit_sentiment_hp();
    let mut m = SentimentPredictor::toy(&EncoderSpec::toy(), AspectModeKind::Right, hp.seed).unwrap();
    let ex = m.examples(&records, &q).unwrap();
    let out = train(&mut m, &ex, &ex, &hp, None).unwrap();
    let acc = m.evaluate_examples(&ex).unwrap().get("f1_micro").unwrap();
    let losses: Vec<f64> = out.epochs.iter().map(|e| e.train_loss).collect();
    let frac = non_increasing_fraction(&losses);
    (
        acc == 1.0 && frac >= 0.9,
        format!("train accuracy {acc:.4} after {} epochs; loss non-increasing in {:.1}% of transitions", out.epochs.len(), frac * 100.0),
    )
}

// ---- criterion 6 ----

fn table_inputs() -> (bool, String) {
    let sentence = "The food is delicious, but it's too expensive";
    let inv = AspectInventory::new(["quality", "price", "atmosphere"]).unwrap();
    let expected = [
        "[CLS] what do you think of quality, and price of the food? [SEP] The food is delicious, but it's too expensive [SEP]",
        "[CLS] what do you think of quality, price and atmosphere of the food? [SEP] The food is delicious, but it's too expensive [SEP]",
        "[CLS] what do you think of NULL of the food? [SEP] The food is delicious, but it's too expensive [SEP]",
    ];
    let modes = [AspectMode::right(["quality", "price"]), AspectMode::all(&inv), AspectMode::none()];
    let mut matched = 0;
    let mut msgs = Vec::new();
    for (mode, want) in modes.iter().zip(expected) {
        let got = build_sentiment_input(&build_sentiment_query(mode, "the food").unwrap(), sentence)
            .unwrap()
            .render_marked();
        if got == want {
            matched += 1;
        } else {
            msgs.push(format!("got {got:?}"));
        }
    }
    msgs.insert(0, format!("{matched}/3 inputs byte-identical"));
    (matched == 3, msgs.join("; "))
}

// ---- criterion 7 ----

fn synthetic_sentiment_hp(seed: u64) -> Hyperparameters {
    let mut hp = Hyperparameters::sentiment_defaults();
    hp.encoder_lr = 2e-3;
    hp.head_lr = 2e-2;
    hp.batch_size = 4;
    hp.dropout = 0.0;
    hp.epochs = 60;
    hp.seed = seed;
    hp
}

fn synthetic_detector_hp(seed: u64) -> Hyperparameters {
    let mut hp = Hyperparameters::detector_defaults();
    hp.encoder_lr = 2e-3;
    hp.head_lr = 2e-2;
    hp.batch_size = 4;
    hp.dropout = 0.0;
    hp.epochs = 20;
    hp.seed = seed;
    hp
}

fn train_sentiment(records: &[AbsaRecord], kind: AspectModeKind, inv: &AspectInventory, hp: &Hyperparameters) -> SentimentPredictor {
    let q = QuerySpec {
        mode: kind,
        inventory: inv.clone(),
        null_target: "it".into(),
    };
    let mut m = SentimentPredictor::toy(&EncoderSpec::toy(), kind, hp.seed).unwrap();
    let ex = m.examples(records, &q).unwrap();
    train(&mut m, &ex, &[], hp, None).unwrap();
    m
}

fn cross_domain() -> (bool, String) {
    let seed = 42;
    let corpus = fixtures::synthetic_corpus(seed);
    let inv = SyntheticCorpus::inventory();
    let shp = synthetic_sentiment_hp(seed);
    let right = train_sentiment(&corpus.source, AspectModeKind::Right, &inv, &shp);
    let none = train_sentiment(&corpus.source, AspectModeKind::None, &inv, &shp);
    let dhp = synthetic_detector_hp(seed);
    let mut det = AspectDetector::toy(&EncoderSpec::toy(), inv.clone(), seed).unwrap();
    let dex = det.examples(&corpus.target_train).unwrap();
    train(&mut det, &dex, &[], &dhp, None).unwrap();

    let score = |mode: EvalMode, predictor: &SentimentPredictor| {
        let cfg = PipelineConfig::new(mode);
        let inputs = EvalInputs {
            detector: Some(&det),
            predictor,
            inventory: &inv,
            cfg: &cfg,
        };
        cross_domain_eval(&inputs, &corpus.target_eval).unwrap().0.get("f1_macro").unwrap()
    };
    let r = score(EvalMode::Right, &right);
    let n = score(EvalMode::None, &none);
    let p = score(EvalMode::Predicted, &right);
    let ok = r - n >= 0.15 && p >= n - 0.05 && p <= r + 0.05;
    (ok, format!("macro-F1 right {r:.4}, predicted {p:.4}, none {n:.4}; right - none = {:.4}", r - n))
}

// ---- criterion 8 ----

/// Train on the bundled fixtures and return every mode's report as JSON.
fn fixture_pipeline(seed: u64) -> Vec<String> {
    let semeval = filter_single_target(&fixtures::semeval_records().unwrap());
    let bundle = split(&semeval, seed).unwrap();
    let inv = aspect_inventory(&semeval);

    let mut dhp = overfit_detector_hp();
    dhp.epochs = 4;
    dhp.seed = seed;
    let mut det = AspectDetector::toy(&EncoderSpec::toy(), inv.clone(), seed).unwrap();
    let dtrain = det.examples(&detection_view(&bundle.train)).unwrap();
    let ddev = det.examples(&detection_view(&bundle.dev)).unwrap();
    train(&mut det, &dtrain, &ddev, &dhp, None).unwrap();

    let sentihood = split(&filter_single_target(&fixtures::sentihood_records().unwrap()), seed).unwrap();
    let mut shp = overfit_sentiment_hp();
    shp.epochs = 4;
    shp.seed = seed;
    let test: Vec<AbsaRecord> = bundle.test.iter().filter(|r| r.polarity.is_some()).cloned().collect();
    let mut reports = Vec::new();
    for mode in EvalMode::ALL_MODES {
        let kind = mode.baseline().unwrap_or(AspectModeKind::Right);
        let model = train_sentiment(&sentihood.train, kind, &inv, &shp);
        let cfg = PipelineConfig::new(mode);
        let inputs = EvalInputs {
            detector: Some(&det),
            predictor: &model,
            inventory: &inv,
            cfg: &cfg,
        };
        let (mut report, _) = cross_domain_eval(&inputs, &test).unwrap();
        report.provenance.seed = Some(seed);
        reports.push(report.to_json());
    }
    reports.push(det.evaluate(&bundle.test).unwrap().to_json());
    reports
}

fn determinism() -> (bool, String) {
    let a = fixture_pipeline(7);
    let b = fixture_pipeline(7);
    let same = a.iter().zip(&b).filter(|(x, y)| x.as_bytes() == y.as_bytes()).count();
    (same == a.len() && a.len() == b.len(), format!("{same}/{} reports byte-identical across two runs", a.len()))
}

// ---- criterion 9 ----

fn full_scale() -> Line {
    let start = Instant::now();
    let data = std::env::var("ABSA_SEMEVAL2016_DIR").ok();
    let backbone = resolve_backbone_dir(BackboneKind::BertBase);
    let (status, detail) = match (backbone, data) {
        (Ok(dir), Some(data)) => {
            let (ok, d) = full_scale_run(&dir, std::path::Path::new(&data));
            (if ok { Status::Pass } else { Status::Fail }, d)
        }
        _ => (
            Status::Skip,
            format!("needs a cached bert-base under ${BACKBONE_CACHE_ENV} and SemEval-2016 train.xml/test.xml under $ABSA_SEMEVAL2016_DIR"),
        ),
    };
    Line {
        id: 9,
        name: "full-scale detector (optional)",
        status,
        detail,
        elapsed: start.elapsed(),
    }
}

fn full_scale_run(backbone: &std::path::Path, data: &std::path::Path) -> (bool, String) {
    use absa_core::corpus::{parse_semeval, SchemaYear};
    let read = |name: &str| {
        let text = std::fs::read_to_string(data.join(name)).unwrap();
        filter_single_target(&parse_semeval(&text, SchemaYear::Y2016).unwrap())
    };
    let train_records = read("train.xml");
    let test_records = read("test.xml");
    let inv = aspect_inventory(&train_records);
    let spec = EncoderSpec {
        name: BackboneKind::BertBase,
        hidden: 768,
        max_length: 128,
    };
    let hp = Hyperparameters::detector_defaults();
    let mut det = AspectDetector::pretrained(&spec, backbone, inv, hp.seed).unwrap();
    let bundle = split(&train_records, hp.seed).unwrap();
    let tr = det.examples(&detection_view(&bundle.train)).unwrap();
    let dev = det.examples(&detection_view(&bundle.dev)).unwrap();
    train(&mut det, &tr, &dev, &hp, None).unwrap();
    let f1 = det.evaluate(&test_records).unwrap().get("f1_macro").unwrap();
    (f1 >= 0.78, format!("test macro-F1 {f1:.4}"))
}

fn main() -> ExitCode {
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let lines = vec![
        run(2, "loss oracles", Some(Duration::from_secs(10)), loss_oracles),
        run(3, "gradient checks", min(2), gradient_checks),
        run(4, "metric oracles", None, metric_oracles),
        run(5, "overfit detector", min(5), overfit_detector),
        run(5, "overfit sentiment", min(5), overfit_sentiment),
        run(6, "template exactness", None, table_inputs),
        run(7, "synthetic cross-domain ordering", min(15), cross_domain),
        run(8, "determinism", None, determinism),
        full_scale(),
    ];
    let mut failed = 0;
    for l in &lines {
        let tag = match l.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("{tag} criterion {} {}: {} ({:.2}s)", l.id, l.name, l.detail, l.elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion line(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

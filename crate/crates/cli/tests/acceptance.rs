//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits non-zero if any fails. Numeric arguments select criteria,
//! e.g. `cargo test --test acceptance -- 7 9`.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chromalog::clicklog::{
    compute_query_label, filter_queries, split_dataset, DatasetSplit, ImpressionRecord, ImpressionResult,
    QueryColourLabel,
};
use chromalog::colour::{rgb_to_hcl, RgbColour};
use chromalog::distance::{
    d_hi, d_kl, d_luv, distance_gradient, distance_value, hellinger_gauss2d, DistanceKind, Gaussian2,
};
use chromalog::encoder::{
    evaluate_encoder, hue_band_mass, metric_row, train_encoder, xkcd_evaluate, ColourPredictor, EncoderConfig,
};
use chromalog::histogram::{point_to_onehot, ColourHistogram, PixelImage};
use chromalog::nn::{grad_check, relative_error, EmbeddingSpec, HashEmbedding, Parameters, TrainConfig};
use chromalog::palette::{generate_palette, Palette, PaletteConfig};
use chromalog::pipeline::{corpus_histograms, derive_labels, label_map};
use chromalog::ranker::{
    build_features, build_ranking_queries, evaluate_ranking, ranknet_loss, ranknet_loss_and_grad, train_joint,
    train_ranker, ContentProvider, ContentSpec, FeatureStore, FeatureVariant, ImageFeatures, JointConfig, JointModel,
    RankerConfig, RankingMetrics, RankingQuery, RankingReport,
};
use chromalog::synth::{generate_corpus, SynthConfig, COLOUR_WORDS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_palette() -> Palette {
    generate_palette(&PaletteConfig::default()).expect("default palette")
}

fn small_palette() -> Palette {
    generate_palette(&PaletteConfig {
        bins: 10,
        hue_steps: 6,
        chroma_steps: 3,
        luminance_steps: 4,
        seed: 0,
    })
    .expect("10-bin palette")
}

fn random_hist(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn hist(w: Vec<f64>) -> ColourHistogram {
    ColourHistogram::new(w).expect("valid histogram")
}

/// Largest relative error between `grad` and central differences of `f` at `x`.
fn finite_difference_error(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], step: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * step)));
    }
    worst
}

fn colour_kernels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0i32;
    for _ in 0..10_000 {
        let c = RgbColour::new(rng.gen(), rng.gen(), rng.gen());
        let back = rgb_to_hcl(c).to_rgb();
        for (a, b) in [(c.r, back.r), (c.g, back.g), (c.b, back.b)] {
            worst = worst.max((a as i32 - b as i32).abs());
        }
    }
    let grey_chroma = (0..=255u8).map(|v| rgb_to_hcl(RgbColour::new(v, v, v)).c).fold(0.0f64, f64::max);
    let white_l = RgbColour::WHITE.to_luv().l;
    ensure(
        worst <= 1 && grey_chroma == 0.0 && (white_l - 100.0).abs() <= 1e-3,
        format!("max round-trip error {worst}, max grey chroma {grey_chroma}, white L {white_l:.6}"),
    )
}

fn quantisation() -> Outcome {
    let palette = default_palette();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let c = RgbColour::new(rng.gen(), rng.gen(), rng.gen());
        let luv = c.to_luv();
        let brute = (0..palette.len())
            .min_by(|&a, &b| {
                let da = palette.bin(a).luv.distance_squared(&luv);
                let db = palette.bin(b).luv.distance_squared(&luv);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("non-empty palette");
        if palette.nearest_bin_rgb(c) != brute {
            mismatches += 1;
        }
    }
    ensure(
        palette.len() == 327 && mismatches == 0,
        format!("{} bins, {mismatches} nearest-bin mismatches in 1000", palette.len()),
    )
}

fn distance_axioms() -> Outcome {
    let palette = small_palette();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for _ in 0..200 {
        let p = hist(random_hist(&mut rng, 10));
        let q = hist(random_hist(&mut rng, 10));
        let kl = d_kl(&p, &q).unwrap();
        let kl_self = d_kl(&p, &p).unwrap();
        let (hpq, hqp) = (d_hi(&p, &q).unwrap(), d_hi(&q, &p).unwrap());
        let luv_self = d_luv(&p, &p, &palette).unwrap();
        if kl < 0.0 || kl_self.abs() > 1e-9 {
            failures.push(format!("kl {kl} self {kl_self}"));
        }
        if hpq != hqp || !(0.0..=1.0).contains(&hpq) {
            failures.push(format!("hi {hpq} vs {hqp}"));
        }
        if luv_self != 0.0 {
            failures.push(format!("luv self {luv_self}"));
        }
    }
    let disjoint = d_hi(&ColourHistogram::one_hot(10, 1), &ColourHistogram::one_hot(10, 7)).unwrap();
    let std_normal = Gaussian2 {
        mu: [0.0, 0.0],
        sigma: [[1.0, 0.0], [0.0, 1.0]],
    };
    let h_self = hellinger_gauss2d(&std_normal, &std_normal).unwrap();
    let expected = 1.0 - (-0.25f64).exp();
    if disjoint != 1.0 {
        failures.push(format!("disjoint hi {disjoint}"));
    }
    if (h_self - expected).abs() > 1e-4 {
        failures.push(format!("hellinger self {h_self}"));
    }
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            format!("200 random pairs; Hellinger N(0,I) self-value {h_self:.6} (expected {expected:.6})")
        } else {
            failures.join("; ")
        },
    )
}

fn tiny_ranker_config(variant: FeatureVariant) -> RankerConfig {
    RankerConfig {
        embedding: EmbeddingSpec::Hash { dim: 4, seed: 0 },
        hidden: 3,
        fusion: vec![6, 4],
        bins: 10,
        content: ContentSpec::default(),
        image_width: 5 + 8,
        variant,
        seed: 2,
    }
}

fn random_image(rng: &mut impl Rng) -> ImageFeatures {
    let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (content, caption_embed, tag_embed) = (v(5), v(4), v(4));
    ImageFeatures {
        content,
        caption_embed,
        tag_embed,
        histogram: hist(random_hist(rng, 10)),
    }
}

fn gradient_correctness() -> Outcome {
    let palette = small_palette();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for kind in DistanceKind::ALL {
        let mut err = 0.0f64;
        for _ in 0..20 {
            let p = random_hist(&mut rng, 10);
            let mut q = random_hist(&mut rng, 10);
            if kind == DistanceKind::HistogramIntersection {
                // keep every coordinate away from the kink at p_i = q_i
                for (qi, pi) in q.iter_mut().zip(&p) {
                    if (*qi - pi).abs() < 1e-3 {
                        *qi += 2e-3;
                    }
                }
            }
            let g = distance_gradient(kind, &p, &q, &palette).unwrap();
            let f = |x: &[f64]| distance_value(kind, &p, x, &palette).unwrap();
            err = err.max(finite_difference_error(f, &q, &g, 1e-6));
        }
        worst.push((format!("d_{kind}"), err));
    }
    let mut err = 0.0f64;
    for _ in 0..20 {
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let clicked = [true, false, true, false];
        let (_, g) = ranknet_loss_and_grad(&s, &clicked).unwrap();
        err = err.max(finite_difference_error(|x| ranknet_loss(x, &clicked).unwrap(), &s, &g, 1e-6));
    }
    worst.push(("ranknet".into(), err));
    for variant in [
        FeatureVariant::Baseline,
        FeatureVariant::PlusColourRepr,
        FeatureVariant::PlusColourDistance(DistanceKind::Kl),
        FeatureVariant::PlusColourDistance(DistanceKind::HistogramIntersection),
        FeatureVariant::PlusColourDistance(DistanceKind::Luv),
    ] {
        let jc = JointConfig {
            alpha: 0.5,
            colour_kind: DistanceKind::Kl,
            train: TrainConfig::default(),
        };
        let model = JointModel::new(tiny_ranker_config(variant), &[5], &jc).unwrap();
        let imgs: Vec<ImageFeatures> = (0..4).map(|_| random_image(&mut rng)).collect();
        let refs: Vec<&ImageFeatures> = imgs.iter().collect();
        let label = random_hist(&mut rng, 10);
        let clicked = [true, false, false, true];
        let seq = model.ranker.trunk.embed_query("light blue summer dress");
        let mut grads = model.zeroed();
        model.loss_and_grad(&seq, &refs, &clicked, &label, &palette, &mut grads).unwrap();
        let loss = |m: &JointModel| {
            let mut g = m.zeroed();
            m.loss_and_grad(&seq, &refs, &clicked, &label, &palette, &mut g).unwrap()
        };
        worst.push((format!("joint {variant}"), grad_check(&model, &grads, loss, 1e-5)));
    }
    let max = worst.iter().map(|(_, e)| *e).fold(0.0f64, f64::max);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    ensure(max <= 1e-4, detail.join(", "))
}

fn record(query: &str, displayed: usize, clicked: usize) -> ImpressionRecord {
    ImpressionRecord {
        query: query.to_string(),
        results: (0..displayed)
            .map(|i| ImpressionResult {
                image_id: format!("im{i}"),
                position: i + 1,
                clicked: i < clicked,
            })
            .collect(),
    }
}

fn label_pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hists: HashMap<String, ColourHistogram> =
        (0..12).map(|i| (format!("im{i}"), hist(random_hist(&mut rng, 327)))).collect();
    let mut worst = 0.0f64;
    for clicks in 1..=12 {
        let rec = record("red shoes", 12, clicks);
        let label = compute_query_label(&rec, &hists).unwrap();
        for k in 0..327 {
            let brute: f64 = (0..clicks).map(|i| hists[&format!("im{i}")].weights()[k]).sum::<f64>() / clicks as f64;
            worst = worst.max((label.label.weights()[k] - brute).abs());
        }
    }
    let log = vec![
        record("one two three four five six", 10, 4),
        record("nine displayed only", 9, 4),
        record("three clicks only", 10, 3),
        record("one two three four five six seven", 10, 4),
    ];
    let kept: Vec<String> = filter_queries(&log).into_iter().map(|r| r.query).collect();
    ensure(
        worst <= 1e-12 && kept == ["one two three four five six"],
        format!("max deviation from brute-force mean {worst:.1e}; retained {kept:?}"),
    )
}

fn encoder_model(seed: u64) -> EncoderConfig {
    EncoderConfig {
        embedding: EmbeddingSpec::Hash { dim: 64, seed: 0 },
        hidden: 64,
        head: vec![256, 128],
        bins: 327,
        seed,
    }
}

fn labels_for(corpus_cfg: &SynthConfig, palette: &Palette) -> Vec<QueryColourLabel> {
    let corpus = generate_corpus(corpus_cfg).unwrap();
    let hists = corpus_histograms(&corpus, palette);
    derive_labels(&corpus.history, &hists).unwrap()
}

fn encoder_overfit() -> Outcome {
    let palette = default_palette();
    let cfg = SynthConfig {
        colour_words: 5,
        queries_per_concept: 10,
        clicks_per_query: 4,
        on_colour_fraction: 0.5,
        ..SynthConfig::default()
    };
    let labels = labels_for(&cfg, &palette);
    let split = DatasetSplit {
        train: labels.iter().map(|l| l.query.clone()).collect(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let tc = TrainConfig {
        learning_rate: 0.5,
        batch_size: 5,
        epochs: 500,
        seed: 0,
    };
    let trained = train_encoder(&labels, &split, DistanceKind::Kl, &tc, &encoder_model(0), &palette).unwrap();
    let loss = trained.best_train_loss();
    let red: Vec<f64> = labels
        .iter()
        .filter(|l| l.query.split(' ').next() == Some("red"))
        .map(|l| hue_band_mass(&trained.model.predict_colour(&l.query).unwrap(), &palette, 0.0, 30.0))
        .collect();
    let min_red = red.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(
        labels.len() == 50 && loss <= 0.1 && !red.is_empty() && min_red >= 0.8,
        format!(
            "{} queries, train loss {loss:.4} at epoch {}, lowest red-band mass {min_red:.3} over {} red queries",
            labels.len(),
            trained.best_epoch + 1,
            red.len()
        ),
    )
}

fn diagonal_dominance() -> Outcome {
    let palette = default_palette();
    let cfg = SynthConfig {
        colour_words: 8,
        queries_per_concept: 250,
        shade_spread: 0.4,
        ..SynthConfig::default()
    };
    let labels = labels_for(&cfg, &palette);
    let keys: Vec<String> = labels.iter().map(|l| l.query.clone()).collect();
    let split = split_dataset(&keys, 0).unwrap();
    let mut trained = Vec::new();
    for (kind, lr) in [
        (DistanceKind::Kl, 0.5),
        (DistanceKind::HistogramIntersection, 2.0),
        (DistanceKind::Luv, 0.006),
    ] {
        let tc = TrainConfig {
            learning_rate: lr,
            batch_size: 8,
            epochs: 100,
            seed: 0,
        };
        trained.push(train_encoder(&labels, &split, kind, &tc, &encoder_model(0), &palette).unwrap());
    }
    let index: HashMap<&str, &QueryColourLabel> = labels.iter().map(|l| (l.query.as_str(), l)).collect();
    let test: Vec<QueryColourLabel> = split.test.iter().map(|k| index[k.as_str()].clone()).collect();
    let matrix = evaluate_encoder(&trained, &test, &palette, None).unwrap();
    let rows: Vec<String> = matrix
        .rows
        .iter()
        .map(|r| format!("{} [{:.4} {:.4} {:.3}]", r.objective, r.metrics[0], r.metrics[1], r.metrics[2]))
        .collect();
    ensure(
        matrix.diagonal_dominant(),
        format!("{} test queries; rows {}", test.len(), rows.join(", ")),
    )
}

struct OneHotPredictor<'a> {
    palette: &'a Palette,
    truth: HashMap<String, RgbColour>,
}

impl ColourPredictor for OneHotPredictor<'_> {
    fn predict(&self, query: &str) -> chromalog::Result<ColourHistogram> {
        Ok(point_to_onehot(self.truth[query], self.palette))
    }
}

struct UniformPredictor(usize);

impl ColourPredictor for UniformPredictor {
    fn predict(&self, _: &str) -> chromalog::Result<ColourHistogram> {
        Ok(ColourHistogram::uniform(self.0))
    }
}

fn xkcd_metric() -> Outcome {
    let palette = default_palette();
    let entries: Vec<(String, RgbColour)> = COLOUR_WORDS.iter().map(|(n, c)| (n.to_string(), *c)).collect();
    let perfect = OneHotPredictor {
        palette: &palette,
        truth: entries.iter().cloned().collect(),
    };
    let zero = xkcd_evaluate(&perfect, &entries, &palette).unwrap();
    let uniform = xkcd_evaluate(&UniformPredictor(palette.len()), &entries, &palette).unwrap();
    let expected = (327f64).ln();
    ensure(
        zero == 0.0 && (uniform - expected).abs() <= 1e-6,
        format!("perfect {zero}, uniform {uniform:.9} (log 327 = {expected:.9})"),
    )
}

/// Ranking data for one synthetic corpus, split 200/50/50 after a seeded shuffle.
struct RankingSetup {
    palette: Palette,
    features: FeatureStore,
    train: Vec<RankingQuery>,
    validation: Vec<RankingQuery>,
    test: Vec<RankingQuery>,
    labels: Vec<QueryColourLabel>,
}

const RANK_EMBED: usize = 64;

fn ranking_setup(beta: f64, seed: u64) -> RankingSetup {
    let palette = default_palette();
    let cfg = SynthConfig {
        seed,
        colour_words: 10,
        beta,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&cfg).unwrap();
    let hists = corpus_histograms(&corpus, &palette);
    let labels = derive_labels(&corpus.history, &hists).unwrap();
    let colours = label_map(&labels);
    let emb = HashEmbedding::new(RANK_EMBED, 0);
    let mut queries = build_ranking_queries(&filter_queries(&corpus.ranking), Some(&colours), Some(&colours), &emb);
    queries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    assert_eq!(queries.len(), 300, "corpus size");
    let test = queries.split_off(250);
    let validation = queries.split_off(200);
    let content = ContentProvider::from_spec(&ranking_content(seed)).unwrap();
    let images: HashMap<String, PixelImage> =
        corpus.images.iter().map(|i| (i.meta.image_id.clone(), i.pixels.clone())).collect();
    let features = build_features(&corpus.catalog(), &images, &hists, &content, &emb).unwrap();
    RankingSetup {
        palette,
        features,
        train: queries,
        validation,
        test,
        labels,
    }
}

fn ranking_content(seed: u64) -> ContentSpec {
    ContentSpec::Projection {
        dims: 64,
        grid: 4,
        seed,
    }
}

fn ranker_config(variant: FeatureVariant, seed: u64) -> RankerConfig {
    RankerConfig {
        embedding: EmbeddingSpec::Hash { dim: RANK_EMBED, seed: 0 },
        hidden: 64,
        fusion: vec![64, 32],
        bins: 327,
        content: ranking_content(seed),
        image_width: 327 + 64 + 2 * RANK_EMBED,
        variant,
        seed,
    }
}

fn ranker_training(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.1,
        batch_size: 1,
        epochs: 50,
        seed,
    }
}

fn ranked(setup: &RankingSetup, variant: FeatureVariant, seed: u64) -> RankingMetrics {
    let trained = train_ranker(
        &setup.train,
        &setup.validation,
        &setup.features,
        &setup.palette,
        &ranker_config(variant, seed),
        &ranker_training(seed),
    )
    .unwrap();
    evaluate_ranking(&trained.model, &setup.test, &setup.features, &setup.palette).unwrap().metrics
}

fn ranking_direction() -> Outcome {
    let kl = FeatureVariant::PlusColourDistance(DistanceKind::Kl);
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    for beta in [0.1, 0.0] {
        let (mut base, mut colour) = (0.0, 0.0);
        for seed in 0..3 {
            let setup = ranking_setup(beta, seed);
            base += ranked(&setup, FeatureVariant::Baseline, seed).auc / 3.0;
            colour += ranked(&setup, kl, seed).auc / 3.0;
        }
        gains.push(colour - base);
        detail.push(format!("beta {beta}: baseline AUC {base:.4}, dist:kl AUC {colour:.4}"));
    }
    ensure(gains[0] >= 0.05 && gains[1] <= 0.02, detail.join("; "))
}

fn joint_training() -> Outcome {
    let seed = 0;
    let setup = ranking_setup(0.1, seed);
    let base = ranked(&setup, FeatureVariant::Baseline, seed);
    let jc = JointConfig {
        alpha: 0.5,
        colour_kind: DistanceKind::Kl,
        train: ranker_training(seed),
    };
    let joint = train_joint(
        &setup.train,
        &setup.validation,
        &setup.features,
        &setup.palette,
        &ranker_config(FeatureVariant::PlusColourDistance(DistanceKind::Kl), seed),
        &[256, 128],
        &jc,
    )
    .unwrap();
    let joint_rank = evaluate_ranking(&joint.model, &setup.test, &setup.features, &setup.palette).unwrap().metrics;
    let index: HashMap<&str, &QueryColourLabel> = setup.labels.iter().map(|l| (l.query.as_str(), l)).collect();
    let keys = |qs: &[RankingQuery]| qs.iter().map(|q| q.query.clone()).collect::<Vec<_>>();
    let test_labels: Vec<QueryColourLabel> = setup.test.iter().map(|q| index[q.query.as_str()].clone()).collect();
    let split = DatasetSplit {
        train: keys(&setup.train),
        validation: keys(&setup.validation),
        test: keys(&setup.test),
    };
    let encoder = train_encoder(
        &setup.labels,
        &split,
        DistanceKind::Kl,
        &ranker_training(seed),
        &encoder_model(seed),
        &setup.palette,
    )
    .unwrap();
    let joint_colour = metric_row(&joint.model, &test_labels, &setup.palette).unwrap()[0];
    let encoder_colour = metric_row(&encoder.model, &test_labels, &setup.palette).unwrap()[0];
    ensure(
        joint_colour <= 1.10 * encoder_colour && joint_rank.map > base.map && joint_rank.mrr > base.mrr,
        format!(
            "colour D_KL joint {joint_colour:.4} vs encoder {encoder_colour:.4} (ratio {:.3}); MAP {:.4} vs baseline {:.4}; MRR {:.4} vs baseline {:.4}",
            joint_colour / encoder_colour,
            joint_rank.map,
            base.map,
            joint_rank.mrr,
            base.mrr
        ),
    )
}

fn metric_correctness() -> Outcome {
    let fixture = vec![
        ("q1".to_string(), vec![0.9, 0.8, 0.7, 0.1], vec![true, false, true, false]),
        ("q2".to_string(), vec![0.5, 0.2, 0.9], vec![true, false, false]),
        ("q3".to_string(), vec![1.0, 1.0], vec![false, true]),
    ];
    let report = RankingReport::from_scores(&fixture);
    let ap = [(1.0 + 2.0 / 3.0) / 2.0, 0.5, 0.5];
    let rr = [1.0, 0.5, 0.5];
    let auc = [0.75, 0.5, 0.5];
    let exact = report
        .per_query
        .iter()
        .enumerate()
        .all(|(i, m)| (m.auc, m.ap, m.rr) == (auc[i], ap[i], rr[i]))
        && report.metrics.map == (ap[0] + ap[1] + ap[2]) / 3.0
        && report.metrics.mrr == (rr[0] + rr[1] + rr[2]) / 3.0
        && report.metrics.auc == (auc[0] + auc[1] + auc[2]) / 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let random: Vec<(String, Vec<f64>, Vec<bool>)> = (0..200)
        .map(|i| {
            let mut clicked = vec![false; 12];
            for c in rand::seq::index::sample(&mut rng, 12, 5) {
                clicked[c] = true;
            }
            (format!("q{i}"), (0..12).map(|_| rng.gen::<f64>()).collect(), clicked)
        })
        .collect();
    let random_auc = RankingReport::from_scores(&random).metrics.auc;
    ensure(
        exact && (random_auc - 0.5).abs() <= 0.05,
        format!(
            "fixture MAP {:.6} MRR {:.6} AUC {:.4} exact {exact}; random scorer AUC {random_auc:.4}",
            report.metrics.map, report.metrics.mrr, report.metrics.auc
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_chromalog"))
        .args(args)
        .env("CHROMALOG_DATA_DIR", dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_default()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let data = [
        "--log", "corpus/ranking.jsonl", "--catalog", "corpus/catalog.jsonl", "--hists", "hists.txt", "--images",
        "corpus/images", "--palette", "palette.txt",
    ];
    let small = ["--embedding-dim", "16", "--hidden", "8", "--epochs", "3", "--lr", "0.05"];
    let mut steps: Vec<(Vec<String>, Vec<&str>)> = Vec::new();
    let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    run_cli(dir, &["palette", "gen", "--out", "palette.txt"])?;
    run_cli(dir, &["synth", "--out", "corpus", "--colour-words", "4", "--queries-per-concept", "8"])?;
    let catalog = read(dir, "corpus/catalog.jsonl");
    run_cli(dir, &["synth", "--out", "corpus", "--colour-words", "4", "--queries-per-concept", "8"])?;
    if catalog != read(dir, "corpus/catalog.jsonl") {
        return Err("synth output differs between runs".into());
    }
    for (workers, out) in [("1", "hists.txt"), ("3", "hists3.txt")] {
        run_cli(dir, &["extract", "--images", "corpus/images", "--palette", "palette.txt", "--out", out, "--workers", workers])?;
    }
    if read(dir, "hists.txt") != read(dir, "hists3.txt") {
        return Err("extraction output depends on worker count".into());
    }
    run_cli(dir, &["labels", "--log", "corpus/history.jsonl", "--hists", "hists.txt", "--out", "labels.txt", "--split-out", "split.json"])?;
    let enc = |out: &str| {
        let mut v = owned(&["encoder", "train", "--labels", "labels.txt", "--split", "split.json", "--palette", "palette.txt", "--head", "32", "--batch-size", "4", "--out"]);
        v.push(out.into());
        v.extend(owned(&small));
        v
    };
    steps.push((enc("enc_a.ckpt"), vec!["enc_a.ckpt"]));
    steps.push((enc("enc_b.ckpt"), vec!["enc_b.ckpt"]));
    let rank = |cmd: &str, extra: &[&str], out: &str| {
        let mut v = owned(&["ranker", cmd]);
        v.extend(owned(&data));
        v.extend(owned(&small));
        v.extend(owned(&["--fusion", "16", "--content-dims", "8", "--out", out]));
        v.extend(owned(extra));
        v
    };
    let colour = ["--colours", "labels.txt", "--variant", "dist:kl"];
    steps.push((rank("train", &colour, "rank_a.ckpt"), vec!["rank_a.ckpt"]));
    steps.push((rank("train", &colour, "rank_b.ckpt"), vec!["rank_b.ckpt"]));
    let joint = ["--labels", "labels.txt", "--variant", "dist:kl", "--head", "32"];
    steps.push((rank("joint", &joint, "joint_a.ckpt"), vec!["joint_a.ckpt"]));
    steps.push((rank("joint", &joint, "joint_b.ckpt"), vec!["joint_b.ckpt"]));
    for (args, _) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        run_cli(dir, &args)?;
    }
    for out in ["eval_a.txt", "eval_b.txt"] {
        let mut v = vec!["ranker", "eval"];
        v.extend(data);
        v.extend(["--colours", "labels.txt", "--model", "rank=rank_a.ckpt", "--model", "joint=joint_a.ckpt", "--out", out]);
        run_cli(dir, &v)?;
    }
    for out in ["matrix_a.tsv", "matrix_b.tsv"] {
        run_cli(dir, &["encoder", "eval", "--model", "kl=enc_a.ckpt", "--labels", "labels.txt", "--split", "split.json", "--palette", "palette.txt", "--out", out])?;
    }
    let pairs = [
        ("enc_a.ckpt", "enc_b.ckpt"),
        ("rank_a.ckpt", "rank_b.ckpt"),
        ("joint_a.ckpt", "joint_b.ckpt"),
        ("eval_a.txt", "eval_b.txt"),
        ("matrix_a.tsv", "matrix_b.tsv"),
    ];
    let differing: Vec<&str> = pairs
        .iter()
        .filter(|(a, b)| {
            let (x, y) = (read(dir, a), read(dir, b));
            x.is_empty() || x != y
        })
        .map(|(a, _)| *a)
        .collect();
    ensure(
        differing.is_empty(),
        if differing.is_empty() {
            "synth, extraction (1 vs 3 workers), encoder/ranker/joint checkpoints and eval reports are byte-identical".into()
        } else {
            format!("outputs differ between runs: {differing:?}")
        },
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "colour kernels", limit: Some(Duration::from_secs(5)), run: colour_kernels },
        Criterion { id: 2, name: "quantisation", limit: Some(Duration::from_secs(5)), run: quantisation },
        Criterion { id: 3, name: "distance axioms", limit: Some(Duration::from_secs(1)), run: distance_axioms },
        Criterion { id: 4, name: "gradient correctness", limit: Some(Duration::from_secs(60)), run: gradient_correctness },
        Criterion { id: 5, name: "label pipeline", limit: None, run: label_pipeline },
        Criterion { id: 6, name: "encoder overfit", limit: Some(Duration::from_secs(600)), run: encoder_overfit },
        Criterion { id: 7, name: "diagonal dominance", limit: Some(Duration::from_secs(1800)), run: diagonal_dominance },
        Criterion { id: 8, name: "XKCD metric", limit: None, run: xkcd_metric },
        Criterion { id: 9, name: "ranking direction", limit: Some(Duration::from_secs(1200)), run: ranking_direction },
        Criterion { id: 10, name: "joint training", limit: Some(Duration::from_secs(1200)), run: joint_training },
        Criterion { id: 11, name: "metric correctness", limit: None, run: metric_correctness },
        Criterion { id: 12, name: "determinism", limit: None, run: determinism },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(d), Some(limit)) if elapsed > limit => Err(format!("{d}; exceeded {limit:?}")),
            (o, _) => o,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {:<22} {status} ({:.1}s) {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

//! Query → colour model: frozen token embeddings, a bidirectional LSTM trunk
//! and a rectifier MLP head with a softmax over the palette bins.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clicklog::{label_index, preprocess_query, query_key, DatasetSplit, QueryColourLabel};
use crate::colour::{hue_difference, RgbColour};
use crate::distance::{d_xkcd, distance_gradient, distance_value, DistanceKind};
use crate::error::{check_len, Error, Result};
use crate::histogram::{point_to_onehot, ColourHistogram};
use crate::nn::{
    embed_tokens, sgd_step, softmax, softmax_backward, BiLstm, BiLstmTrace, Checkpoint, DenseCache, DenseStack,
    EmbeddingProvider, EmbeddingSpec, Embeddings, Matrix, Parameters, TrainConfig,
};
use crate::palette::{Palette, DEFAULT_BINS};

pub const ENCODER_KIND: &str = "encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embedding: EmbeddingSpec,
    /// Hidden units per LSTM direction.
    pub hidden: usize,
    /// Hidden widths of the colour head.
    pub head: Vec<usize>,
    pub bins: usize,
    /// Parameter initialisation seed.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embedding: EmbeddingSpec::default(),
            hidden: 300,
            head: vec![1024, 512],
            bins: DEFAULT_BINS,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn head_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![2 * self.hidden];
        sizes.extend(&self.head);
        sizes.push(self.bins);
        sizes
    }
}

/// Embedding lookup followed by the bidirectional LSTM.
#[derive(Debug, Clone)]
pub struct QueryTrunk {
    embeddings: Arc<Embeddings>,
    pub lstm: BiLstm,
}

impl QueryTrunk {
    pub fn new(embeddings: Arc<Embeddings>, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let lstm = BiLstm::new(embeddings.dim(), hidden, rng);
        QueryTrunk { embeddings, lstm }
    }

    pub fn embeddings(&self) -> &Arc<Embeddings> {
        &self.embeddings
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.output_dim()
    }

    /// Preprocesses `raw` and embeds its tokens.
    pub fn embed_query(&self, raw: &str) -> Vec<Vec<f64>> {
        embed_tokens(&preprocess_query(raw), self.embeddings.as_ref())
    }

    pub fn encode(&self, seq: &[Vec<f64>]) -> Result<BiLstmTrace> {
        self.lstm.encode(seq)
    }
}

impl Parameters for QueryTrunk {
    fn params(&self) -> Vec<&Matrix> {
        self.lstm.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.lstm.params_mut()
    }
}

/// Anything that maps query text to a colour histogram.
pub trait ColourPredictor {
    fn predict(&self, query: &str) -> Result<ColourHistogram>;
}

impl<F: Fn(&str) -> ColourHistogram> ColourPredictor for F {
    fn predict(&self, query: &str) -> Result<ColourHistogram> {
        Ok(self(query))
    }
}

#[derive(Debug, Clone)]
pub struct ColourEncoderModel {
    config: EncoderConfig,
    pub trunk: QueryTrunk,
    pub head: DenseStack,
}

/// Activations of one forward pass.
pub struct EncoderPass {
    trunk: BiLstmTrace,
    head: DenseCache,
    probs: Vec<f64>,
}

impl EncoderPass {
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

impl ColourEncoderModel {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let embeddings = Arc::new(Embeddings::from_spec(&config.embedding)?);
        Self::with_embeddings(config, embeddings)
    }

    pub fn with_embeddings(config: EncoderConfig, embeddings: Arc<Embeddings>) -> Result<Self> {
        if config.hidden == 0 || config.bins < 2 {
            return Err(Error::InvalidConfig("encoder needs hidden ≥ 1 and bins ≥ 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trunk = QueryTrunk::new(embeddings, config.hidden, &mut rng);
        let head = DenseStack::new(&config.head_sizes(), &mut rng)?;
        Ok(ColourEncoderModel { config, trunk, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.config.bins
    }

    pub fn forward_seq(&self, seq: &[Vec<f64>]) -> Result<EncoderPass> {
        let trunk = self.trunk.encode(seq)?;
        let head = self.head.forward(trunk.output())?;
        let probs = softmax(head.output());
        Ok(EncoderPass { trunk, head, probs })
    }

    pub fn predict_seq(&self, seq: &[Vec<f64>]) -> Result<ColourHistogram> {
        let pass = self.forward_seq(seq)?;
        ColourHistogram::new(pass.probs)
    }

    pub fn predict_colour(&self, raw: &str) -> Result<ColourHistogram> {
        self.predict_seq(&self.trunk.embed_query(raw))
    }

    /// Backpropagates `grad_probs` (gradient w.r.t. the softmax output) into `grads`.
    pub fn backward(&self, pass: &EncoderPass, grad_probs: &[f64], grads: &mut Self) {
        let dz = softmax_backward(&pass.probs, grad_probs);
        let dtrunk = self.head.backward(&pass.head, &dz, &mut grads.head);
        self.trunk.lstm.backward(&pass.trunk, &dtrunk, &mut grads.trunk.lstm);
    }

    /// Loss `D(label, prediction)` for one query; adds `scale` times its
    /// gradient to `grads`.
    pub fn accumulate(
        &self,
        seq: &[Vec<f64>],
        label: &[f64],
        kind: DistanceKind,
        palette: &Palette,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let pass = self.forward_seq(seq)?;
        let loss = distance_value(kind, label, &pass.probs, palette)?;
        let mut g = distance_gradient(kind, label, &pass.probs, palette)?;
        g.iter_mut().for_each(|v| *v *= scale);
        self.backward(&pass, &g, grads);
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let config = serde_json::to_value(&self.config).expect("config serialises");
        Checkpoint::capture(ENCODER_KIND, config, self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: EncoderConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| Error::format("checkpoint", 3, format!("bad encoder config: {e}")))?;
        let mut model = Self::new(config)?;
        ck.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load_kind(path, ENCODER_KIND)?)
    }
}

impl Parameters for ColourEncoderModel {
    fn params(&self) -> Vec<&Matrix> {
        let mut p = self.trunk.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.trunk.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

impl ColourPredictor for ColourEncoderModel {
    fn predict(&self, query: &str) -> Result<ColourHistogram> {
        self.predict_colour(query)
    }
}

/// A labelled query with its embedded token sequence.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub query: String,
    pub seq: Vec<Vec<f64>>,
    pub label: Vec<f64>,
    pub empty: bool,
}

/// Looks up and embeds the labels of `keys`.
pub fn prepare_queries(
    keys: &[String],
    labels: &[QueryColourLabel],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<PreparedQuery>> {
    let index = label_index(labels);
    keys.iter()
        .map(|k| {
            let key = query_key(k);
            let l = index.get(key.as_str()).ok_or_else(|| Error::MissingLabel(key.clone()))?;
            let tokens = preprocess_query(&key);
            Ok(PreparedQuery {
                seq: embed_tokens(&tokens, provider),
                empty: tokens.is_empty(),
                label: l.label.weights().to_vec(),
                query: key,
            })
        })
        .collect()
}

/// Per-epoch mean losses, recorded after each epoch's updates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

impl LossCurves {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain\tvalidation\n");
        for (e, t) in self.train.iter().enumerate() {
            let v = self.validation.get(e).map_or(String::from("-"), |v| format!("{v:?}"));
            let _ = writeln!(out, "{}\t{t:?}\t{v}", e + 1);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: ColourEncoderModel,
    pub objective: DistanceKind,
    pub curves: LossCurves,
    /// Zero-based epoch of the returned parameters.
    pub best_epoch: usize,
    /// Training queries dropped because they have no tokens.
    pub skipped_empty: usize,
}

impl TrainedEncoder {
    pub fn best_train_loss(&self) -> f64 {
        self.curves.train[self.best_epoch]
    }

    pub fn best_validation_loss(&self) -> Option<f64> {
        self.curves.validation.get(self.best_epoch).copied()
    }
}

/// Mean `D(label, prediction)` over `data`.
pub fn mean_loss(model: &ColourEncoderModel, data: &[PreparedQuery], kind: DistanceKind, palette: &Palette) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut total = 0.0;
    for q in data {
        let pass = model.forward_seq(&q.seq)?;
        total += distance_value(kind, &q.label, pass.probabilities(), palette)?;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch SGD on `D(label, prediction)`. Returns the parameters from the
/// epoch with the lowest validation loss, or the lowest training loss when
/// the validation split is empty.
pub fn train_encoder(
    labels: &[QueryColourLabel],
    split: &DatasetSplit,
    objective: DistanceKind,
    cfg: &TrainConfig,
    model_cfg: &EncoderConfig,
    palette: &Palette,
) -> Result<TrainedEncoder> {
    cfg.validate()?;
    check_len(model_cfg.bins, palette.len())?;
    let model = ColourEncoderModel::new(model_cfg.clone())?;
    let train = prepare_queries(&split.train, labels, model.trunk.embeddings().as_ref())?;
    let validation = prepare_queries(&split.validation, labels, model.trunk.embeddings().as_ref())?;
    train_encoder_prepared(model, &train, &validation, objective, cfg, palette)
}

pub fn train_encoder_prepared(
    mut model: ColourEncoderModel,
    train: &[PreparedQuery],
    validation: &[PreparedQuery],
    objective: DistanceKind,
    cfg: &TrainConfig,
    palette: &Palette,
) -> Result<TrainedEncoder> {
    cfg.validate()?;
    let usable: Vec<&PreparedQuery> = train.iter().filter(|q| !q.empty).collect();
    let skipped_empty = train.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let train_eval: Vec<PreparedQuery> = usable.iter().map(|q| (*q).clone()).collect();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grads = model.zeroed();
    let mut curves = LossCurves::default();
    let mut best: Option<(f64, usize, ColourEncoderModel)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let q = usable[i];
                model.accumulate(&q.seq, &q.label, objective, palette, scale, &mut grads)?;
            }
            sgd_step(&mut model, &grads, cfg.learning_rate)?;
        }
        if !model.all_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged at epoch {}; lower the learning rate",
                epoch + 1
            )));
        }
        let train_loss = mean_loss(&model, &train_eval, objective, palette)?;
        curves.train.push(train_loss);
        let select = if validation.is_empty() {
            train_loss
        } else {
            let v = mean_loss(&model, validation, objective, palette)?;
            curves.validation.push(v);
            v
        };
        if best.as_ref().is_none_or(|(b, _, _)| select < *b) {
            best = Some((select, epoch, model.clone()));
        }
        log::debug!("{objective} epoch {}: train {train_loss:.6} select {select:.6}", epoch + 1);
    }
    let (_, best_epoch, model) = best.ok_or_else(|| Error::InvalidConfig("epochs must be at least 1".into()))?;
    Ok(TrainedEncoder {
        model,
        objective,
        curves,
        best_epoch,
        skipped_empty,
    })
}

/// Mean of each distance in [`DistanceKind::ALL`] order between the labels
/// and the predictor's output.
pub fn metric_row(
    predictor: &dyn ColourPredictor,
    labels: &[QueryColourLabel],
    palette: &Palette,
) -> Result<[f64; 3]> {
    if labels.is_empty() {
        return Err(Error::Empty("test labels"));
    }
    let mut sums = [0.0; 3];
    for l in labels {
        let pred = predictor.predict(&l.query)?;
        for (s, kind) in sums.iter_mut().zip(DistanceKind::ALL) {
            *s += distance_value(kind, l.label.weights(), pred.weights(), palette)?;
        }
    }
    Ok(sums.map(|s| s / labels.len() as f64))
}

/// Mean D_XKCD of `predictor` over `(name, colour)` entries.
pub fn xkcd_evaluate(predictor: &dyn ColourPredictor, entries: &[(String, RgbColour)], palette: &Palette) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::Empty("xkcd entries"));
    }
    let mut total = 0.0;
    for (name, rgb) in entries {
        let label = point_to_onehot(*rgb, palette);
        total += d_xkcd(&label, &predictor.predict(name)?)?;
    }
    Ok(total / entries.len() as f64)
}

/// Parses `name<TAB>#rrggbb` lines, skipping blanks, `#` comments and
/// licence lines.
pub fn parse_xkcd(text: &str, origin: &str) -> Result<Vec<(String, RgbColour)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("License:") {
            continue;
        }
        let mut parts = line.split('\t').map(str::trim).filter(|s| !s.is_empty());
        let (Some(name), Some(hex)) = (parts.next(), parts.next()) else {
            return Err(Error::format(origin, i + 1, "expected `name<TAB>#rrggbb`"));
        };
        let rgb: RgbColour = hex
            .parse()
            .map_err(|_| Error::format(origin, i + 1, format!("bad colour `{hex}`")))?;
        out.push((name.to_string(), rgb));
    }
    if out.is_empty() {
        return Err(Error::Empty("xkcd entries"));
    }
    Ok(out)
}

pub fn load_xkcd(path: &Path) -> Result<Vec<(String, RgbColour)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xkcd(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub objective: DistanceKind,
    /// Mean test loss per metric, in [`DistanceKind::ALL`] order.
    pub metrics: [f64; 3],
    pub xkcd: Option<f64>,
    pub train_loss: Option<f64>,
    pub validation_loss: Option<f64>,
}

/// Rows are training objectives, columns are test metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub rows: Vec<EvalRow>,
}

impl EvalMatrix {
    pub fn entry(&self, objective: DistanceKind, metric: DistanceKind) -> Option<f64> {
        let col = DistanceKind::ALL.iter().position(|&k| k == metric)?;
        self.rows.iter().find(|r| r.objective == objective).map(|r| r.metrics[col])
    }

    /// Whether every metric column is minimised by its matching objective row.
    pub fn diagonal_dominant(&self) -> bool {
        DistanceKind::ALL.iter().enumerate().all(|(col, &metric)| {
            let Some(diag) = self.entry(metric, metric) else { return false };
            self.rows.iter().all(|r| diag <= r.metrics[col])
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("objective\tD_KL\tD_HI\tD_LUV\tD_XKCD\ttrain\tvalidation\n");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
                r.objective,
                r.metrics[0],
                r.metrics[1],
                r.metrics[2],
                opt(r.xkcd),
                opt(r.train_loss),
                opt(r.validation_loss)
            );
        }
        out
    }
}

/// Builds the objective × metric matrix from one trained model per objective.
pub fn evaluate_encoder(
    models: &[TrainedEncoder],
    test: &[QueryColourLabel],
    palette: &Palette,
    xkcd: Option<&[(String, RgbColour)]>,
) -> Result<EvalMatrix> {
    let predictors: Vec<(DistanceKind, &dyn ColourPredictor)> =
        models.iter().map(|t| (t.objective, &t.model as &dyn ColourPredictor)).collect();
    let mut matrix = evaluate_predictors(&predictors, test, palette, xkcd)?;
    for (row, t) in matrix.rows.iter_mut().zip(models) {
        row.train_loss = Some(t.best_train_loss());
        row.validation_loss = t.best_validation_loss();
    }
    Ok(matrix)
}

/// Matrix rows for arbitrary predictors, such as loaded checkpoints or
/// prediction dumps. Loss columns are left empty.
pub fn evaluate_predictors(
    predictors: &[(DistanceKind, &dyn ColourPredictor)],
    test: &[QueryColourLabel],
    palette: &Palette,
    xkcd: Option<&[(String, RgbColour)]>,
) -> Result<EvalMatrix> {
    let rows = predictors
        .iter()
        .map(|&(objective, p)| {
            Ok(EvalRow {
                objective,
                metrics: metric_row(p, test, palette)?,
                xkcd: xkcd.map(|e| xkcd_evaluate(p, e, palette)).transpose()?,
                train_loss: None,
                validation_loss: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalMatrix { rows })
}

/// Predictions keyed by query, as written to a prediction dump.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionDump {
    pub entries: Vec<(String, ColourHistogram)>,
}

impl PredictionDump {
    pub fn from_model(model: &dyn ColourPredictor, queries: &[String]) -> Result<Self> {
        let entries = queries
            .iter()
            .map(|q| Ok((q.clone(), model.predict(q)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionDump { entries })
    }

    /// `query<TAB>w_0 ... w_{B-1}` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (q, h) in &self.entries {
            out.push_str(q);
            out.push('\t');
            let ws: Vec<String> = h.weights().iter().map(|w| format!("{w:?}")).collect();
            out.push_str(&ws.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (q, ws) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(origin, i + 1, "expected `query<TAB>weights`"))?;
            let weights = ws
                .split(' ')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(origin, i + 1, format!("bad weight: {e}")))?;
            let h = ColourHistogram::new(weights).map_err(|e| Error::format(origin, i + 1, e.to_string()))?;
            entries.push((q.to_string(), h));
        }
        Ok(PredictionDump { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

impl ColourPredictor for PredictionDump {
    fn predict(&self, query: &str) -> Result<ColourHistogram> {
        let key = query_key(query);
        self.entries
            .iter()
            .find(|(q, _)| query_key(q) == key)
            .map(|(_, h)| h.clone())
            .ok_or(Error::MissingLabel(key))
    }
}

/// Probability mass on bins within `half_width` degrees of `hue` whose chroma
/// exceeds the palette median.
pub fn hue_band_mass(h: &ColourHistogram, palette: &Palette, hue: f64, half_width: f64) -> f64 {
    let median = palette.median_chroma();
    palette
        .bins()
        .iter()
        .zip(h.weights())
        .filter(|(b, _)| b.hcl.c > median && hue_difference(b.hcl.h, hue).abs() <= half_width)
        .map(|(_, w)| w)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::palette::{generate_palette, PaletteConfig};

    fn small_palette() -> Palette {
        generate_palette(&PaletteConfig {
            bins: 10,
            hue_steps: 6,
            chroma_steps: 3,
            luminance_steps: 4,
            seed: 0,
        })
        .unwrap()
    }

    fn tiny_config(bins: usize) -> EncoderConfig {
        EncoderConfig {
            embedding: EmbeddingSpec::Hash { dim: 4, seed: 0 },
            hidden: 3,
            head: vec![5, 4],
            bins,
            seed: 1,
        }
    }

    fn label(query: &str, weights: Vec<f64>) -> QueryColourLabel {
        QueryColourLabel {
            query: query.into(),
            label: ColourHistogram::new(weights).unwrap(),
            clicks: None,
        }
    }

    #[test]
    fn predictions_are_distributions_and_deterministic() {
        let model = ColourEncoderModel::new(tiny_config(10)).unwrap();
        for q in ["red", "Dark Blue Car!", "???", ""] {
            let p = model.predict_colour(q).unwrap();
            assert_eq!(p.len(), 10);
            assert!(p.weights().iter().all(|&w| w > 0.0));
            assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(p, model.predict_colour(q).unwrap());
        }
        assert_eq!(model.predict_colour("RED").unwrap(), model.predict_colour("red").unwrap());
    }

    #[test]
    fn full_encoder_gradients_pass_grad_check() {
        let palette = small_palette();
        let model = ColourEncoderModel::new(tiny_config(10)).unwrap();
        let seq = model.trunk.embed_query("light blue summer sky dress");
        assert_eq!(seq.len(), 5);
        let target: Vec<f64> = (1..=10).map(|i| i as f64 / 55.0).collect();
        for kind in DistanceKind::ALL {
            let loss = |m: &ColourEncoderModel| {
                let pass = m.forward_seq(&seq).unwrap();
                distance_value(kind, &target, pass.probabilities(), &palette).unwrap()
            };
            let mut grads = model.zeroed();
            model.accumulate(&seq, &target, kind, &palette, 1.0, &mut grads).unwrap();
            let err = grad_check(&model, &grads, loss, 1e-5);
            assert!(err <= 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn single_query_overfits_under_kl() {
        let palette = small_palette();
        let mut w = vec![0.02; 10];
        w[3] = 0.82;
        let labels = vec![label("red", w)];
        let split = DatasetSplit {
            train: vec!["red".into()],
            validation: vec![],
            test: vec![],
        };
        let cfg = TrainConfig {
            learning_rate: 0.5,
            batch_size: 1,
            epochs: 200,
            seed: 0,
        };
        let a = train_encoder(&labels, &split, DistanceKind::Kl, &cfg, &tiny_config(10), &palette).unwrap();
        assert!(a.best_train_loss() <= 0.05, "{}", a.best_train_loss());
        let b = train_encoder(&labels, &split, DistanceKind::Kl, &cfg, &tiny_config(10), &palette).unwrap();
        assert_eq!(a.curves, b.curves);
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn checkpoint_is_validation_argmin() {
        let palette = small_palette();
        let labels: Vec<QueryColourLabel> = ["red", "blue", "green", "red car", "blue car", "green car"]
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let mut w = vec![0.05; 10];
                w[i % 3] = 0.55;
                label(q, w)
            })
            .collect();
        let split = DatasetSplit {
            train: vec!["red".into(), "blue".into(), "green".into(), "blue car".into()],
            validation: vec!["red car".into(), "green car".into()],
            test: vec![],
        };
        let cfg = TrainConfig {
            learning_rate: 0.3,
            batch_size: 2,
            epochs: 30,
            seed: 4,
        };
        let t = train_encoder(&labels, &split, DistanceKind::Kl, &cfg, &tiny_config(10), &palette).unwrap();
        let best = t.best_validation_loss().unwrap();
        assert!(t.curves.validation.iter().all(|&v| best <= v));
        assert_eq!(t.curves.train.len(), 30);
        let val = prepare_queries(&split.validation, &labels, t.model.trunk.embeddings().as_ref()).unwrap();
        let recomputed = mean_loss(&t.model, &val, DistanceKind::Kl, &palette).unwrap();
        assert_eq!(recomputed, best);
    }

    #[test]
    fn empty_queries_are_not_trained_on() {
        let palette = small_palette();
        let labels = vec![label("", vec![0.1; 10])];
        let split = DatasetSplit {
            train: vec!["???".into()],
            validation: vec![],
            test: vec![],
        };
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let err = train_encoder(&labels, &split, DistanceKind::Kl, &cfg, &tiny_config(10), &palette).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
        let missing = DatasetSplit {
            train: vec!["blue".into()],
            ..split
        };
        assert!(matches!(
            train_encoder(&labels, &missing, DistanceKind::Kl, &cfg, &tiny_config(10), &palette),
            Err(Error::MissingLabel(_))
        ));
    }

    #[test]
    fn perfect_predictor_has_zero_kl_row() {
        let palette = small_palette();
        let labels = vec![label("a", vec![0.1; 10]), label("b c", {
            let mut w = vec![0.0; 10];
            w[2] = 1.0;
            w
        })];
        let truth = |q: &str| labels.iter().find(|l| l.query == q).unwrap().label.clone();
        let row = metric_row(&truth, &labels, &palette).unwrap();
        assert!(row[0] <= 1e-6 && row[1].abs() < 1e-12 && row[2].abs() < 1e-12);
    }

    #[test]
    fn xkcd_closed_forms() {
        let palette = generate_palette(&PaletteConfig::default()).unwrap();
        let entries = vec![
            ("red".to_string(), RgbColour::new(229, 0, 0)),
            ("sky blue".to_string(), RgbColour::new(117, 187, 253)),
            ("olive".to_string(), RgbColour::new(110, 117, 14)),
        ];
        let perfect = |q: &str| {
            let (_, rgb) = entries.iter().find(|(n, _)| n == q).unwrap();
            point_to_onehot(*rgb, &palette)
        };
        assert_eq!(xkcd_evaluate(&perfect, &entries, &palette).unwrap(), 0.0);
        let uniform = |_: &str| ColourHistogram::uniform(327);
        let u = xkcd_evaluate(&uniform, &entries, &palette).unwrap();
        assert!((u - 327f64.ln()).abs() < 1e-6);
        let model = ColourEncoderModel::new(EncoderConfig {
            bins: 327,
            ..tiny_config(327)
        })
        .unwrap();
        let brute: f64 = entries
            .iter()
            .map(|(n, c)| d_xkcd(&point_to_onehot(*c, &palette), &model.predict_colour(n).unwrap()).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((xkcd_evaluate(&model, &entries, &palette).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn xkcd_file_parsing() {
        let text = "License: CC0\n# comment\n\ncloudy blue\t#acc2d9\t\ndark pastel green\t#56ae57\n";
        let e = parse_xkcd(text, "rgb.txt").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[1], ("dark pastel green".to_string(), RgbColour::new(0x56, 0xae, 0x57)));
        assert!(matches!(parse_xkcd("red\t#zz0000\n", "f"), Err(Error::Format { line: 1, .. })));
        assert!(matches!(parse_xkcd("x\n\nred\n", "f"), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn saved_predictions_reproduce_metrics() {
        let palette = small_palette();
        let model = ColourEncoderModel::new(tiny_config(10)).unwrap();
        let labels = vec![label("red car", vec![0.1; 10]), label("blue", {
            let mut w = vec![0.0; 10];
            w[7] = 1.0;
            w
        })];
        let queries: Vec<String> = labels.iter().map(|l| l.query.clone()).collect();
        let dump = PredictionDump::from_model(&model, &queries).unwrap();
        let back = PredictionDump::parse(&dump.to_text(), "dump").unwrap();
        assert_eq!(back, dump);
        assert_eq!(
            metric_row(&model, &labels, &palette).unwrap(),
            metric_row(&back, &labels, &palette).unwrap()
        );
    }

    #[test]
    fn model_checkpoint_round_trip() {
        let model = ColourEncoderModel::new(tiny_config(10)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        model.save(&path).unwrap();
        let back = ColourEncoderModel::load(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());
        assert_eq!(back.predict_colour("blue").unwrap(), model.predict_colour("blue").unwrap());
    }

    #[test]
    fn hue_band_mass_of_red_one_hot() {
        let palette = generate_palette(&PaletteConfig::default()).unwrap();
        let red = point_to_onehot(RgbColour::new(220, 20, 20), &palette);
        assert_eq!(hue_band_mass(&red, &palette, 0.0, 30.0), 1.0);
        let blue = point_to_onehot(RgbColour::new(20, 20, 220), &palette);
        assert_eq!(hue_band_mass(&blue, &palette, 0.0, 30.0), 0.0);
    }
}

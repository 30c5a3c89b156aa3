//! Impression logs, query filtering, click-derived colour labels and
//! query-disjoint dataset splits.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{average_histograms, ColourHistogram, HistogramTable};

pub const MIN_DISPLAYED: usize = 10;
pub const MIN_CLICKED: usize = 4;
pub const MAX_TOKENS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionResult {
    pub image_id: String,
    pub position: usize,
    pub clicked: bool,
}

/// One logged query with the images shown for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub query: String,
    pub results: Vec<ImpressionResult>,
}

impl ImpressionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.results.is_empty() {
            return Err(Error::Empty("impression results"));
        }
        if self.results.windows(2).any(|w| w[1].position <= w[0].position) {
            return Err(Error::InvalidConfig(format!(
                "positions for query `{}` are not strictly increasing",
                self.query
            )));
        }
        Ok(())
    }

    pub fn displayed(&self) -> usize {
        self.results.len()
    }

    pub fn clicked(&self) -> usize {
        self.results.iter().filter(|r| r.clicked).count()
    }

    pub fn clicked_ids(&self) -> impl Iterator<Item = &str> {
        self.results.iter().filter(|r| r.clicked).map(|r| r.image_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Ground-truth colour of a query: the mean histogram of its clicked images.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryColourLabel {
    pub query: String,
    pub label: ColourHistogram,
    /// Number of clicked images averaged; unknown when read back from a label file.
    pub clicks: Option<usize>,
}

/// Lowercases, drops every character outside `[a-z0-9 ]` and splits on spaces.
pub fn preprocess_query(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == ' ')
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Canonical form used to merge and key queries.
pub fn query_key(raw: &str) -> String {
    preprocess_query(raw).join(" ")
}

/// Merges records by preprocessed query and keeps those with at least
/// [`MIN_DISPLAYED`] results, [`MIN_CLICKED`] clicks and at most
/// [`MAX_TOKENS`] tokens. Merged result lists are renumbered `1..=n`.
pub fn filter_queries(log: &[ImpressionRecord]) -> Vec<ImpressionRecord> {
    let mut order: Vec<String> = Vec::new();
    let mut merged: HashMap<String, Vec<ImpressionResult>> = HashMap::new();
    for rec in log {
        let key = query_key(&rec.query);
        let entry = merged.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        entry.extend(rec.results.iter().cloned());
    }
    order
        .into_iter()
        .filter_map(|query| {
            let mut results = merged.remove(&query)?;
            for (i, r) in results.iter_mut().enumerate() {
                r.position = i + 1;
            }
            let rec = ImpressionRecord { query, results };
            let tokens = rec.query.split(' ').filter(|t| !t.is_empty()).count();
            (rec.displayed() >= MIN_DISPLAYED && rec.clicked() >= MIN_CLICKED && tokens <= MAX_TOKENS)
                .then_some(rec)
        })
        .collect()
}

/// Averages the histograms of the clicked images of `rec`.
pub fn compute_query_label(
    rec: &ImpressionRecord,
    hists: &HashMap<String, ColourHistogram>,
) -> Result<QueryColourLabel> {
    let clicked = rec
        .clicked_ids()
        .map(|id| hists.get(id).cloned().ok_or_else(|| Error::MissingHistogram(id.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if clicked.is_empty() {
        return Err(Error::Empty("clicked images"));
    }
    Ok(QueryColourLabel {
        query: query_key(&rec.query),
        clicks: Some(clicked.len()),
        label: average_histograms(&clicked)?,
    })
}

/// Query-disjoint train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles with a seeded generator and cuts at the 64% and 80% marks
/// (rounded down).
pub fn split_dataset(queries: &[String], seed: u64) -> Result<DatasetSplit> {
    if queries.len() < 5 {
        return Err(Error::InvalidConfig(format!(
            "need at least 5 queries to split, got {}",
            queries.len()
        )));
    }
    let mut shuffled = queries.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let (a, b) = (n * 64 / 100, n * 80 / 100);
    let test = shuffled.split_off(b);
    let validation = shuffled.split_off(a);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

/// Parses one JSON value per non-blank line.
pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(origin, i + 1, e.to_string()))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("plain data serialises");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_impressions(path: &Path) -> Result<Vec<ImpressionRecord>> {
    let records: Vec<ImpressionRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|e| Error::format(path.display().to_string(), i + 1, e.to_string()))?;
    }
    Ok(records)
}

pub fn write_impressions(path: &Path, records: &[ImpressionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_catalog(path: &Path) -> Result<Vec<ImageMeta>> {
    let items: Vec<ImageMeta> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for (i, m) in items.iter().enumerate() {
        if !seen.insert(m.image_id.as_str()) {
            return Err(Error::format(
                path.display().to_string(),
                i + 1,
                format!("duplicate image id `{}`", m.image_id),
            ));
        }
    }
    Ok(items)
}

pub fn write_catalog(path: &Path, items: &[ImageMeta]) -> Result<()> {
    write_jsonl(path, items)
}

/// Label files share the histogram table format, keyed by query.
pub fn labels_to_table(labels: &[QueryColourLabel]) -> Result<HistogramTable> {
    let bins = labels.first().ok_or(Error::Empty("labels"))?.label.len();
    let mut table = HistogramTable::new(bins);
    for l in labels {
        table.insert(l.query.clone(), l.label.clone())?;
    }
    Ok(table)
}

pub fn labels_from_table(table: &HistogramTable) -> Vec<QueryColourLabel> {
    table
        .iter()
        .map(|(q, h)| QueryColourLabel {
            query: q.clone(),
            label: h.clone(),
            clicks: None,
        })
        .collect()
}

/// Label lookup keyed by query.
pub fn label_index(labels: &[QueryColourLabel]) -> BTreeMap<&str, &QueryColourLabel> {
    labels.iter().map(|l| (l.query.as_str(), l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(query: &str, displayed: usize, clicked: usize) -> ImpressionRecord {
        ImpressionRecord {
            query: query.into(),
            results: (0..displayed)
                .map(|i| ImpressionResult {
                    image_id: format!("img{i}"),
                    position: i + 1,
                    clicked: i < clicked,
                })
                .collect(),
        }
    }

    #[test]
    fn preprocessing_examples() {
        assert_eq!(preprocess_query("Yellow Brick-Road!"), vec!["yellow", "brickroad"]);
        assert_eq!(preprocess_query("RED"), vec!["red"]);
        assert!(preprocess_query("???").is_empty());
        assert_eq!(preprocess_query("  two\tspaces  "), vec!["twospaces"]);
        assert_eq!(query_key("Red  Car 2"), "red car 2");
    }

    #[test]
    fn filter_boundaries_are_closed() {
        let log = vec![
            record("blue sky", 10, 4),
            record("green", 9, 9),
            record("one two three four five six seven", 100, 50),
            record("a b c d e f", 10, 4),
            record("few clicks", 50, 3),
        ];
        let kept: Vec<String> = filter_queries(&log).into_iter().map(|r| r.query).collect();
        assert_eq!(kept, vec!["blue sky", "a b c d e f"]);
    }

    #[test]
    fn duplicates_merge_before_filtering() {
        let log = vec![record("Red Car", 6, 2), record("red car!", 6, 2), record("red", 6, 2)];
        let kept = filter_queries(&log);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].query, "red car");
        assert_eq!(kept[0].displayed(), 12);
        assert!(kept[0].validate().is_ok());
    }

    fn onehot(len: usize, k: usize) -> ColourHistogram {
        ColourHistogram::one_hot(len, k)
    }

    #[test]
    fn label_from_clicks() {
        let mut hists = HashMap::new();
        hists.insert("img0".to_string(), onehot(4, 1));
        hists.insert("img1".to_string(), onehot(4, 3));
        hists.insert("img2".to_string(), onehot(4, 0));
        let lab = compute_query_label(&record("q", 3, 2), &hists).unwrap();
        assert_eq!(lab.label.weights(), &[0.0, 0.5, 0.0, 0.5]);
        assert_eq!(lab.clicks, Some(2));

        let same: HashMap<_, _> = (0..4).map(|i| (format!("img{i}"), onehot(4, 2))).collect();
        let lab = compute_query_label(&record("q", 4, 4), &same).unwrap();
        assert_eq!(lab.label, onehot(4, 2));
    }

    #[test]
    fn missing_clicked_histogram_names_the_image() {
        let hists: HashMap<_, _> = [("img0".to_string(), onehot(3, 0))].into();
        let err = compute_query_label(&record("q", 3, 2), &hists).unwrap_err();
        assert!(matches!(err, Error::MissingHistogram(ref id) if id == "img1"));
        // unclicked images need no histogram
        assert!(compute_query_label(&record("q", 3, 1), &hists).is_ok());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let qs: Vec<String> = (0..100).map(|i| format!("q{i}")).collect();
        let s = split_dataset(&qs, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (64, 16, 20));
        assert_eq!(s, split_dataset(&qs, 3).unwrap());
        assert_ne!(s, split_dataset(&qs, 4).unwrap());
        let mut all: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);

        let five = split_dataset(&qs[..5], 0).unwrap();
        assert_eq!((five.train.len(), five.validation.len(), five.test.len()), (3, 1, 1));
        assert!(split_dataset(&qs[..4], 0).is_err());
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let log = vec![record("red car", 3, 1), record("blue", 2, 2)];
        write_impressions(&path, &log).unwrap();
        assert_eq!(read_impressions(&path).unwrap(), log);

        std::fs::write(&path, "{\"query\":\"a\",\"results\":[]}\n").unwrap();
        assert!(matches!(read_impressions(&path), Err(Error::Format { line: 1, .. })));
        std::fs::write(&path, "\n{not json}\n").unwrap();
        assert!(matches!(read_impressions(&path), Err(Error::Format { line: 2, .. })));

        let cat = vec![ImageMeta {
            image_id: "a".into(),
            tags: vec!["car".into()],
            caption: "a car".into(),
            path: Some("a.png".into()),
        }];
        let cpath = dir.path().join("cat.jsonl");
        write_catalog(&cpath, &cat).unwrap();
        assert_eq!(read_catalog(&cpath).unwrap(), cat);
        write_catalog(&cpath, &[cat[0].clone(), cat[0].clone()]).unwrap();
        assert!(read_catalog(&cpath).is_err());
    }

    #[test]
    fn label_table_round_trip() {
        let labels = vec![QueryColourLabel {
            query: "red car".into(),
            label: onehot(3, 0),
            clicks: None,
        }];
        let table = labels_to_table(&labels).unwrap();
        let back = HistogramTable::parse(&table.to_text(), "mem").unwrap();
        assert_eq!(labels_from_table(&back), labels);
    }

    proptest! {
        #[test]
        fn label_is_order_invariant_and_in_hull(
            weights in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 5), 2..8),
            rot in 0usize..8,
        ) {
            let hs: Vec<ColourHistogram> = weights.iter().map(|w| {
                let s: f64 = w.iter().sum();
                ColourHistogram::new(w.iter().map(|x| x / s).collect()).unwrap()
            }).collect();
            let map: HashMap<String, ColourHistogram> =
                hs.iter().enumerate().map(|(i, h)| (format!("img{i}"), h.clone())).collect();
            let rec = record("q", hs.len(), hs.len());
            let mut rotated = rec.clone();
            rotated.results.rotate_left(rot % hs.len());
            let a = compute_query_label(&rec, &map).unwrap();
            let b = compute_query_label(&rotated, &map).unwrap();
            for (x, y) in a.label.weights().iter().zip(b.label.weights()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            for k in 0..5 {
                let lo = hs.iter().map(|h| h.weights()[k]).fold(f64::INFINITY, f64::min);
                let hi = hs.iter().map(|h| h.weights()[k]).fold(0.0, f64::max);
                prop_assert!(a.label.weights()[k] >= lo - 1e-12 && a.label.weights()[k] <= hi + 1e-12);
            }
        }
    }
}

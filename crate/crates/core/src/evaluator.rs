//! Exact-match scoring, regional aggregation and prompt ablation tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{interpret, AnswerRecord};
use crate::normalize::normalize_answer;
use crate::prompts::{ParsedAnswer, TemplateId};
use crate::scalar::{mean, round_to, Rounding, Scalar};
use crate::types::{Locale, Question, Track};

/// Decimal places of every reported accuracy.
pub const DECIMALS: u32 = 2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("question {0} has no reference answers")]
    NoReferences(String),
    #[error("question {0} has no gold label")]
    NoGold(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    /// Unweighted mean over a language's regional variants.
    #[default]
    SimpleAvg,
    /// Variants weighted by their question counts.
    WeightedByCount,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "simple_avg" | "simple" => Ok(Scheme::SimpleAvg),
            "weighted_by_count" | "weighted" => Ok(Scheme::WeightedByCount),
            _ => Err(format!("unknown aggregation scheme {s:?}")),
        }
    }
}

/// SAQ: the answer matches any reference after normalization.
pub fn score_saq(prediction: &ParsedAnswer, references: &[String], locale: &Locale) -> Result<bool, EvalError> {
    if references.is_empty() {
        return Err(EvalError::NoReferences(String::new()));
    }
    if !prediction.is_usable() {
        return Ok(false);
    }
    let key = normalize_answer(&prediction.text, locale).normalized;
    Ok(references.iter().any(|r| normalize_answer(r, locale).normalized == key))
}

/// MCQ: the resolved option label equals the gold label.
pub fn score_mcq(prediction: &ParsedAnswer, gold_label: &str) -> bool {
    prediction.is_usable() && prediction.text == gold_label
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemResult {
    pub locale: Locale,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report<T> {
    pub per_variant: BTreeMap<String, T>,
    pub per_language: BTreeMap<String, T>,
    pub overall: Option<T>,
    pub counts: BTreeMap<String, usize>,
    pub scheme: Scheme,
    pub rounding: Rounding,
    /// Requested locales that had no items.
    pub omitted: Vec<String>,
}

fn pct<T: Scalar>(correct: usize, total: usize) -> T {
    let c = T::from_usize(correct).expect("count fits scalar");
    let t = T::from_usize(total).expect("count fits scalar");
    c * T::from_u32(100).expect("100 fits scalar") / t
}

/// Folds per-item flags into per-variant, per-language and overall
/// accuracies. Languages are averaged from unrounded variant figures;
/// `overall` is the mean of the reported (rounded) language figures.
pub fn aggregate<T: Scalar>(items: &[ItemResult], scheme: Scheme, rounding: Rounding) -> Report<T> {
    aggregate_for(items, &[], scheme, rounding)
}

/// As [`aggregate`], additionally listing `requested` locales without items
/// as omitted.
pub fn aggregate_for<T: Scalar>(
    items: &[ItemResult],
    requested: &[Locale],
    scheme: Scheme,
    rounding: Rounding,
) -> Report<T> {
    let mut tally: BTreeMap<Locale, (usize, usize)> = BTreeMap::new();
    for item in items {
        let e = tally.entry(item.locale).or_default();
        e.0 += usize::from(item.correct);
        e.1 += 1;
    }
    let mut omitted = Vec::new();
    for loc in requested {
        if !tally.contains_key(loc) {
            log::warn!("no items for locale {loc}; omitted from report");
            omitted.push(loc.to_string());
        }
    }
    omitted.sort();
    omitted.dedup();

    let mut per_variant = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut by_lang: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (loc, &(c, t)) in &tally {
        per_variant.insert(loc.to_string(), round_to(&pct::<T>(c, t), DECIMALS, rounding));
        counts.insert(loc.to_string(), t);
        by_lang.entry(loc.language().to_string()).or_default().push((c, t));
    }

    let mut per_language = BTreeMap::new();
    for (lang, variants) in by_lang {
        let value = match scheme {
            Scheme::SimpleAvg => {
                let vs: Vec<T> = variants.iter().map(|&(c, t)| pct(c, t)).collect();
                mean(&vs).expect("language has variants")
            }
            Scheme::WeightedByCount => {
                let c = variants.iter().map(|v| v.0).sum();
                let t = variants.iter().map(|v| v.1).sum();
                pct(c, t)
            }
        };
        per_language.insert(lang, round_to(&value, DECIMALS, rounding));
    }
    let overall = overall_from_languages(&per_language.values().cloned().collect::<Vec<_>>(), rounding);
    Report {
        per_variant,
        per_language,
        overall,
        counts,
        scheme,
        rounding,
        omitted,
    }
}

/// Overall figure from already-reported per-language accuracies.
pub fn overall_from_languages<T: Scalar>(per_language: &[T], rounding: Rounding) -> Option<T> {
    mean(per_language).map(|m| round_to(&m, DECIMALS, rounding))
}

pub fn format_pct<T: Scalar>(value: &T) -> String {
    format!("{:.2}", value.to_f64().unwrap_or(f64::NAN))
}

#[derive(Serialize)]
struct ReportView<'a> {
    scheme: Scheme,
    rounding: Rounding,
    per_variant: BTreeMap<&'a str, f64>,
    per_language: BTreeMap<&'a str, f64>,
    overall: Option<f64>,
    counts: &'a BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    omitted: &'a [String],
}

fn as_f64<T: Scalar>(v: &T) -> f64 {
    // round-trip through the two-decimal text so JSON shows e.g. 44.4
    format_pct(v).parse().unwrap_or(f64::NAN)
}

impl<T: Scalar> Report<T> {
    pub fn to_json(&self) -> String {
        let view = ReportView {
            scheme: self.scheme,
            rounding: self.rounding,
            per_variant: self.per_variant.iter().map(|(k, v)| (k.as_str(), as_f64(v))).collect(),
            per_language: self.per_language.iter().map(|(k, v)| (k.as_str(), as_f64(v))).collect(),
            overall: self.overall.as_ref().map(as_f64),
            counts: &self.counts,
            omitted: &self.omitted,
        };
        serde_json::to_string_pretty(&view).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let scheme = match self.scheme {
            Scheme::SimpleAvg => "SIMPLE_AVG",
            Scheme::WeightedByCount => "WEIGHTED_BY_COUNT",
        };
        let _ = writeln!(out, "scheme: {scheme}");
        let _ = writeln!(out, "{:<10} {:>6} {:>9}", "variant", "count", "accuracy");
        for (loc, v) in &self.per_variant {
            let _ = writeln!(out, "{:<10} {:>6} {:>9}", loc, self.counts[loc], format_pct(v));
        }
        let _ = writeln!(out, "{:<10} {:>6} {:>9}", "language", "", "accuracy");
        for (lang, v) in &self.per_language {
            let _ = writeln!(out, "{:<10} {:>6} {:>9}", lang, "", format_pct(v));
        }
        let overall = self.overall.as_ref().map_or_else(|| "-".to_string(), format_pct);
        let _ = writeln!(out, "{:<10} {:>6} {:>9}", "overall", "", overall);
        for loc in &self.omitted {
            let _ = writeln!(out, "omitted: {loc} (no items)");
        }
        out
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
    pub source_stage: String,
    pub evidence: Vec<String>,
}

impl From<&AnswerRecord> for Prediction {
    fn from(r: &AnswerRecord) -> Self {
        Self {
            id: r.question_id.clone(),
            answer: r.final_answer.display().to_string(),
            source_stage: r.source_label().to_string(),
            evidence: r.evidence_used.iter().map(|e| e.text.clone()).collect(),
        }
    }
}

pub fn write_predictions<W: Write>(mut w: W, predictions: &[Prediction]) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            path: shown.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

/// Scores each question against its prediction. A question without a
/// prediction scores as an abstention.
pub fn score_predictions(questions: &[Question], predictions: &[Prediction]) -> Result<Vec<ItemResult>, EvalError> {
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    questions
        .iter()
        .map(|q| {
            let parsed = match by_id.get(q.id.as_str()) {
                Some(p) => interpret(q, &p.answer),
                None => {
                    log::warn!("no prediction for {}", q.id);
                    ParsedAnswer::abstain("")
                }
            };
            let correct = match q.track {
                Track::Saq => score_saq(&parsed, &q.references, &q.locale).map_err(|e| match e {
                    EvalError::NoReferences(_) => EvalError::NoReferences(q.id.clone()),
                    other => other,
                })?,
                Track::Mcq => {
                    let gold = q.gold_label.as_deref().ok_or_else(|| EvalError::NoGold(q.id.clone()))?;
                    score_mcq(&parsed, gold)
                }
            };
            Ok(ItemResult {
                locale: q.locale,
                correct,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow<T> {
    pub template: TemplateId,
    pub track: Track,
    pub report: Report<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation<T> {
    pub rows: Vec<AblationRow<T>>,
    /// Variants whose pass aborted, with the reason.
    pub failed: Vec<(TemplateId, String)>,
}

impl<T> Ablation<T> {
    pub fn is_partial(&self) -> bool {
        !self.failed.is_empty()
    }
}

/// Runs one evaluation pass per template, MP first, then RP-v1, then RP-v2,
/// whatever the order requested.
pub fn run_ablation<T, F, E>(templates: &[TemplateId], track: Track, mut pass: F) -> Ablation<T>
where
    T: Scalar,
    F: FnMut(TemplateId) -> Result<Report<T>, E>,
    E: std::fmt::Display,
{
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for t in TemplateId::ALL.into_iter().filter(|t| templates.contains(t)) {
        match pass(t) {
            Ok(report) => rows.push(AblationRow {
                template: t,
                track,
                report,
            }),
            Err(e) => {
                log::error!("ablation pass {t} failed: {e}");
                failed.push((t, e.to_string()));
            }
        }
    }
    Ablation { rows, failed }
}

impl<T: Scalar> Ablation<T> {
    /// `prompt_id,language,track,score`, with an `overall` pseudo-language.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("prompt_id,language,track,score\n");
        for row in &self.rows {
            for (lang, v) in &row.report.per_language {
                let _ = writeln!(out, "{},{},{},{}", row.template, lang, row.track, format_pct(v));
            }
            if let Some(o) = &row.report.overall {
                let _ = writeln!(out, "{},overall,{},{}", row.template, row.track, format_pct(o));
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let langs: Vec<&String> = {
            let mut v: Vec<&String> = self.rows.iter().flat_map(|r| r.report.per_language.keys()).collect();
            v.sort();
            v.dedup();
            v
        };
        let mut out = format!("{:<8}", "prompt");
        for l in &langs {
            let _ = write!(out, " {:>8}", l);
        }
        let _ = writeln!(out, " {:>8}", "overall");
        for row in &self.rows {
            let _ = write!(out, "{:<8}", row.template.as_str());
            for l in &langs {
                let cell = row.report.per_language.get(*l).map_or_else(|| "-".to_string(), format_pct);
                let _ = write!(out, " {:>8}", cell);
            }
            let overall = row.report.overall.as_ref().map_or_else(|| "-".to_string(), format_pct);
            let _ = writeln!(out, " {:>8}", overall);
        }
        for (t, e) in &self.failed {
            let _ = writeln!(out, "{t}: FAILED ({e})");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    type Q = Ratio<i64>;

    fn loc(s: &str) -> Locale {
        s.parse().unwrap()
    }

    fn answer(text: &str) -> ParsedAnswer {
        crate::prompts::parse_answer(text, &loc("en-GB"))
    }

    fn items(spec: &[(&str, usize, usize)]) -> Vec<ItemResult> {
        spec.iter()
            .flat_map(|&(l, c, t)| (0..t).map(move |i| ItemResult { locale: loc(l), correct: i < c }))
            .collect()
    }

    fn dec(s: &str) -> Q {
        Q::from_decimal_str(s).unwrap()
    }

    #[test]
    fn saq_examples() {
        let refs = vec!["paris".to_string(), "Lyon".to_string()];
        assert!(score_saq(&answer("Paris"), &refs, &loc("en-GB")).unwrap());
        assert!(!score_saq(&ParsedAnswer::abstain("<NO_ANSWER>"), &refs, &loc("en-GB")).unwrap());
        assert!(score_saq(&answer("paris."), &["Paris".to_string()], &loc("en-GB")).unwrap());
        assert!(score_saq(&answer("x"), &[], &loc("en-GB")).is_err());
    }

    #[test]
    fn mcq_examples() {
        assert!(score_mcq(&answer("C"), "C"));
        assert!(!score_mcq(&answer("D"), "C"));
        assert!(!score_mcq(&ParsedAnswer::abstain(""), "C"));
    }

    #[test]
    fn weighted_zh() {
        let r: Report<Q> = aggregate(&items(&[("zh-CN", 2, 4), ("zh-SG", 3, 4)]), Scheme::WeightedByCount, Rounding::HalfUp);
        assert_eq!(r.per_language["zh"], dec("62.5"));
        assert_eq!(r.per_variant["zh-CN"], dec("50"));
        assert_eq!(r.counts["zh-SG"], 4);
    }

    #[test]
    fn weighted_differs_from_simple_on_uneven_counts() {
        let set = items(&[("zh-CN", 1, 1), ("zh-SG", 0, 3)]);
        let s: Report<Q> = aggregate(&set, Scheme::SimpleAvg, Rounding::HalfUp);
        let w: Report<Q> = aggregate(&set, Scheme::WeightedByCount, Rounding::HalfUp);
        assert_eq!(s.per_language["zh"], dec("50"));
        assert_eq!(w.per_language["zh"], dec("25"));
    }

    #[test]
    fn table_one_saq_rows() {
        for (langs, want) in [
            (["17.14", "4.17", "27.14"], "16.15"),
            (["24.29", "35.00", "41.43"], "33.57"),
            (["37.14", "47.50", "48.57"], "44.40"),
        ] {
            let vs: Vec<Q> = langs.iter().map(|s| dec(s)).collect();
            assert_eq!(overall_from_languages(&vs, Rounding::HalfUp), Some(dec(want)));
        }
    }

    #[test]
    fn table_one_mcq_mp_needs_truncation() {
        let vs: Vec<Q> = ["82.86", "80.83", "65.71"].iter().map(|s| dec(s)).collect();
        assert_eq!(overall_from_languages(&vs, Rounding::HalfUp), Some(dec("76.47")));
        assert_eq!(overall_from_languages(&vs, Rounding::Truncate), Some(dec("76.46")));
    }

    #[test]
    fn table_two_needs_half_up() {
        let vs: Vec<Q> = ["16.67", "33.33", "33.33"].iter().map(|s| dec(s)).collect();
        assert_eq!(overall_from_languages(&vs, Rounding::HalfUp), Some(dec("27.78")));
        assert_eq!(overall_from_languages(&vs, Rounding::Truncate), Some(dec("27.77")));
    }

    #[test]
    fn requested_locale_without_items_is_omitted() {
        let r: Report<f64> = aggregate_for(&items(&[("en-GB", 1, 2)]), &[loc("en-GB"), loc("es-MX")], Scheme::SimpleAvg, Rounding::HalfUp);
        assert_eq!(r.omitted, ["es-MX"]);
        assert!(!r.per_variant.contains_key("es-MX"));
        assert!(!r.per_language.contains_key("es"));
        assert_eq!(r.overall, Some(50.0));
        assert!(r.to_table().contains("omitted: es-MX"));
    }

    #[test]
    fn empty_report() {
        let r: Report<Q> = aggregate(&[], Scheme::SimpleAvg, Rounding::HalfUp);
        assert!(r.overall.is_none());
        assert!(r.per_variant.is_empty());
    }

    #[test]
    fn report_renders() {
        let r: Report<Q> = aggregate(&items(&[("en-GB", 1, 3), ("en-US", 2, 2)]), Scheme::SimpleAvg, Rounding::HalfUp);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["per_variant"]["en-GB"], 33.33);
        assert_eq!(json["per_language"]["en"], 66.67);
        assert_eq!(json["scheme"], "SIMPLE_AVG");
        let table = r.to_table();
        assert!(table.contains("en-GB           3     33.33"), "{table}");
        assert!(table.contains("overall               66.67"), "{table}");
    }

    #[test]
    fn predictions_round_trip_and_score() {
        let qs = vec![
            Question::saq("en-GB-1", loc("en-GB"), "Capital?").with_references(["London"]),
            Question::saq("en-GB-2", loc("en-GB"), "Dish?").with_references(["Roast"]),
            Question::saq("en-GB-3", loc("en-GB"), "Sport?").with_references(["Football"]),
        ];
        let preds = vec![
            Prediction { id: "en-GB-1".into(), answer: "london.".into(), source_stage: "WEB_SEARCH".into(), evidence: vec!["e".into()] },
            Prediction { id: "en-GB-2".into(), answer: "<NO_ANSWER>".into(), source_stage: "NONE".into(), evidence: vec![] },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back, preds);
        let scored = score_predictions(&qs, &back).unwrap();
        assert_eq!(scored.iter().map(|i| i.correct).collect::<Vec<_>>(), [true, false, false]);
    }

    #[test]
    fn unlabeled_item_is_an_error() {
        let qs = vec![Question::saq("en-GB-9", loc("en-GB"), "?")];
        let err = score_predictions(&qs, &[]).unwrap_err();
        assert!(err.to_string().contains("en-GB-9"));
    }

    fn fake_report(v: &str) -> Report<Q> {
        let mut r: Report<Q> = aggregate(&[], Scheme::SimpleAvg, Rounding::HalfUp);
        r.per_language.insert("en".into(), dec(v));
        r.overall = Some(dec(v));
        r
    }

    #[test]
    fn ablation_orders_and_flags() {
        let a = run_ablation(&[TemplateId::RpV2, TemplateId::Mp, TemplateId::RpV1], Track::Saq, |t| match t {
            TemplateId::RpV2 => Err("model down"),
            TemplateId::Mp => Ok(fake_report("0")),
            TemplateId::RpV1 => Ok(fake_report("100")),
        });
        assert_eq!(a.rows.iter().map(|r| r.template).collect::<Vec<_>>(), [TemplateId::Mp, TemplateId::RpV1]);
        assert!(a.is_partial());
        let csv = a.to_csv();
        assert_eq!(
            csv,
            "prompt_id,language,track,score\nmp,en,SAQ,0.00\nmp,overall,SAQ,0.00\nrp-v1,en,SAQ,100.00\nrp-v1,overall,SAQ,100.00\n"
        );
        assert!(a.to_table().contains("rp-v2: FAILED"));
    }

    #[test]
    fn single_prompt_ablation() {
        let a = run_ablation(&[TemplateId::RpV1], Track::Mcq, |_| Ok::<_, String>(fake_report("50")));
        assert_eq!(a.rows.len(), 1);
        assert!(!a.is_partial());
    }

    fn arb_items() -> impl Strategy<Value = Vec<ItemResult>> {
        let locales = ["en-GB", "en-US", "es-MX", "es-ES", "zh-CN", "zh-SG", "zh-TW"];
        prop::collection::vec((0..locales.len(), any::<bool>()), 0..120).prop_map(move |v| {
            v.into_iter()
                .map(|(i, correct)| ItemResult { locale: loc(locales[i]), correct })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(items in arb_items(), seed in any::<u64>(), weighted in any::<bool>()) {
            let scheme = if weighted { Scheme::WeightedByCount } else { Scheme::SimpleAvg };
            let mut shuffled = items.clone();
            // deterministic Fisher-Yates from the seed
            let mut s = seed | 1;
            for i in (1..shuffled.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let a: Report<Q> = aggregate(&items, scheme, Rounding::HalfUp);
            let b: Report<Q> = aggregate(&shuffled, scheme, Rounding::HalfUp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn schemes_coincide_on_singletons(flags in prop::collection::vec((0usize..3, any::<bool>()), 1..60)) {
            let locales = ["en-GB", "es-MX", "zh-CN"];
            let items: Vec<ItemResult> = flags.into_iter().map(|(i, c)| ItemResult { locale: loc(locales[i]), correct: c }).collect();
            let a: Report<Q> = aggregate(&items, Scheme::SimpleAvg, Rounding::HalfUp);
            let b: Report<Q> = aggregate(&items, Scheme::WeightedByCount, Rounding::HalfUp);
            prop_assert_eq!(a.per_language, b.per_language);
            prop_assert_eq!(a.overall, b.overall);
        }

        #[test]
        fn bounded(items in arb_items(), weighted in any::<bool>()) {
            let scheme = if weighted { Scheme::WeightedByCount } else { Scheme::SimpleAvg };
            let r: Report<Q> = aggregate(&items, scheme, Rounding::HalfUp);
            let lo = Q::from_integer(0);
            let hi = Q::from_integer(100);
            for v in r.per_variant.values().chain(r.per_language.values()).chain(r.overall.iter()) {
                prop_assert!(*v >= lo && *v <= hi);
            }
            let all: Vec<ItemResult> = items.iter().map(|i| ItemResult { correct: true, ..i.clone() }).collect();
            let perfect: Report<Q> = aggregate(&all, scheme, Rounding::HalfUp);
            for v in perfect.per_variant.values().chain(perfect.overall.iter()) {
                prop_assert_eq!(*v, hi);
            }
        }

        #[test]
        fn float_and_exact_agree(items in arb_items()) {
            let f: Report<f64> = aggregate(&items, Scheme::WeightedByCount, Rounding::HalfUp);
            let q: Report<Q> = aggregate(&items, Scheme::WeightedByCount, Rounding::HalfUp);
            for (k, v) in &q.per_variant {
                prop_assert!((f.per_variant[k] - v.to_f64().unwrap()).abs() < 0.011);
            }
        }
    }
}

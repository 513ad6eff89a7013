//! Evaluation suite: temporal NPMI coherence, topic redundancy/diversity,
//! topic quality, temporal topic smoothness, predictive perplexity and a
//! two-sample Welch t-test.
//!
//! Coherence at slice t is computed against the reference corpus available
//! up to t (document-level co-occurrence counts accumulated over slices
//! 1..=t), so early topics are judged only on what the stream had shown by
//! then.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::{BTreeMap, HashMap, HashSet};

use crate::corpus::{BowVector, TimeSlice};
use crate::model::{decode_local, encode, EncoderParams, TopicMatrix, TopicWeights};

/// NPMI smoothing constant (design: probabilities use D, zero-joint pairs
/// pin to -1, all-doc pairs pin to +1 via the D+1 limit).
pub const NPMI_EPS: f64 = 1e-12;

/// Default number of top words per topic across all metrics.
pub const DEFAULT_TOP_N: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("word {0} is outside the co-occurrence store's vocabulary")]
    UnknownWord(u32),
    #[error("metric requires at least {need} {what}, got {got}")]
    TooFew {
        need: usize,
        what: &'static str,
        got: usize,
    },
    #[error("both samples have zero variance")]
    DegenerateSamples,
    #[error("no evaluable documents")]
    EmptyEval,
}

/// The N highest-probability vocabulary terms of each topic, ordered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopWords {
    pub n: usize,
    /// Per topic: term indices, descending probability, ties by index.
    pub topics: Vec<Vec<u32>>,
}

impl TopWords {
    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }
}

/// Extracts the top-N words of every topic row. Softmax is monotone, so
/// ranking logits ranks probabilities.
pub fn top_words(matrix: &TopicMatrix, n: usize) -> TopWords {
    let v = matrix.vocab_size();
    let n = n.min(v);
    let mut topics = Vec::with_capacity(matrix.num_topics());
    for row in matrix.values.rows() {
        let mut idx: Vec<u32> = (0..v as u32).collect();
        idx.sort_by(|&a, &b| {
            row[b as usize]
                .partial_cmp(&row[a as usize])
                .expect("finite logits")
                .then(a.cmp(&b))
        });
        idx.truncate(n);
        topics.push(idx);
    }
    TopWords { n, topics }
}

/// Softmax word probabilities of one topic row.
pub fn topic_word_probs(matrix: &TopicMatrix, topic: usize) -> Vec<f64> {
    let row = matrix.values.row(topic);
    let lse = crate::model::math::logsumexp(row.as_slice().expect("contiguous"));
    row.iter().map(|&l| (l - lse).exp()).collect()
}

/// Document-level binary co-occurrence counts over slices 1..=cutoff.
#[derive(Debug, Clone)]
pub struct CoocStore {
    docs: u64,
    df: HashMap<u32, u64>,
    joint: HashMap<(u32, u32), u64>,
    cutoff: usize,
    /// When present, joint counts were only accumulated within this set.
    restricted: Option<HashSet<u32>>,
}

impl CoocStore {
    pub fn doc_count(&self) -> u64 {
        self.docs
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn df(&self, w: u32) -> u64 {
        self.df.get(&w).copied().unwrap_or(0)
    }

    /// Joint document frequency; symmetric in its arguments.
    pub fn joint(&self, a: u32, b: u32) -> u64 {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.joint.get(&key).copied().unwrap_or(0)
    }

    fn check_known(&self, w: u32) -> Result<(), EvalError> {
        if let Some(set) = &self.restricted {
            if !set.contains(&w) {
                return Err(EvalError::UnknownWord(w));
            }
        }
        Ok(())
    }
}

fn accumulate_cooc(
    slices: &[TimeSlice],
    cutoff: usize,
    restrict: Option<&HashSet<u32>>,
) -> CoocStore {
    assert!(cutoff >= 1, "cutoff slice is 1-based");
    let mut store = CoocStore {
        docs: 0,
        df: HashMap::new(),
        joint: HashMap::new(),
        cutoff,
        restricted: restrict.cloned(),
    };
    for slice in slices.iter().filter(|s| s.t <= cutoff) {
        for doc in &slice.docs {
            store.docs += 1;
            let terms: Vec<u32> = doc.bow.term_indices().collect();
            for &w in &terms {
                *store.df.entry(w).or_insert(0) += 1;
            }
            let pair_terms: Vec<u32> = match restrict {
                Some(set) => terms.iter().copied().filter(|w| set.contains(w)).collect(),
                None => terms,
            };
            for i in 0..pair_terms.len() {
                for j in (i + 1)..pair_terms.len() {
                    let (a, b) = (pair_terms[i], pair_terms[j]);
                    let key = if a <= b { (a, b) } else { (b, a) };
                    *store.joint.entry(key).or_insert(0) += 1;
                }
            }
        }
    }
    store
}

/// Full pairwise co-occurrence counts up to slice `cutoff` (all splits: the
/// reference corpus is everything the stream has shown).
pub fn build_cooc(slices: &[TimeSlice], cutoff: usize) -> CoocStore {
    accumulate_cooc(slices, cutoff, None)
}

/// Co-occurrence counts with joint pairs restricted to a candidate word
/// set; document frequencies stay complete. This is what the CLI uses so a
/// large vocabulary never materializes all O(V^2) pairs.
pub fn build_cooc_restricted(
    slices: &[TimeSlice],
    cutoff: usize,
    words: &HashSet<u32>,
) -> CoocStore {
    accumulate_cooc(slices, cutoff, Some(words))
}

/// NPMI of one word pair under the store's counts.
pub fn npmi_pair(cooc: &CoocStore, a: u32, b: u32, eps: f64) -> Result<f64, EvalError> {
    cooc.check_known(a)?;
    cooc.check_known(b)?;
    let d = cooc.doc_count() as f64;
    let joint = cooc.joint(a, b);
    if joint == 0 {
        return Ok(-1.0);
    }
    if joint == cooc.doc_count() {
        // P = 1 would zero the normalizer; the D+1 convention gives the
        // perfect-association limit exactly.
        return Ok(1.0);
    }
    let pij = joint as f64 / d;
    let pi = cooc.df(a) as f64 / d;
    let pj = cooc.df(b) as f64 / d;
    // The eps in the numerator can nudge a perfect subset association a hair
    // past 1; clamp to the documented range.
    Ok((((pij + eps) / (pi * pj)).ln() / -(pij + eps).ln()).clamp(-1.0, 1.0))
}

/// Per-topic NPMI coherence (mean over the N(N-1)/2 top-word pairs) and the
/// model-level mean over topics.
pub fn npmi_coherence(
    topics: &TopWords,
    cooc: &CoocStore,
    eps: f64,
) -> Result<(Vec<f64>, f64), EvalError> {
    let mut per_topic = Vec::with_capacity(topics.num_topics());
    for words in &topics.topics {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..words.len() {
            for j in (i + 1)..words.len() {
                total += npmi_pair(cooc, words[i], words[j], eps)?;
                pairs += 1;
            }
        }
        per_topic.push(if pairs == 0 { 0.0 } else { total / pairs as f64 });
    }
    if per_topic.is_empty() {
        return Err(EvalError::TooFew {
            need: 1,
            what: "topics",
            got: 0,
        });
    }
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok((per_topic, mean))
}

/// Topic redundancy: for topic k, the count of its top words appearing in
/// other topics, normalized by (K-1)*N so the value lies in `[0, 1]`.
pub fn topic_redundancy(topics: &TopWords) -> Result<Vec<f64>, EvalError> {
    let k = topics.num_topics();
    if k < 2 {
        return Err(EvalError::TooFew {
            need: 2,
            what: "topics",
            got: k,
        });
    }
    let sets: Vec<HashSet<u32>> = topics
        .topics
        .iter()
        .map(|t| t.iter().copied().collect())
        .collect();
    let mut out = Vec::with_capacity(k);
    for (idx, words) in topics.topics.iter().enumerate() {
        let mut occurrences = 0usize;
        for &w in words {
            for (jdx, other) in sets.iter().enumerate() {
                if jdx != idx && other.contains(&w) {
                    occurrences += 1;
                }
            }
        }
        out.push(occurrences as f64 / ((k - 1) as f64 * words.len() as f64));
    }
    Ok(out)
}

/// Topic diversity: 1 minus mean redundancy, in `[0, 1]`.
pub fn topic_diversity(topics: &TopWords) -> Result<f64, EvalError> {
    let tr = topic_redundancy(topics)?;
    Ok(1.0 - tr.iter().sum::<f64>() / tr.len() as f64)
}

/// Topic quality over slices: mean of TC_i * TD_i * T_i / max(T), the
/// topic-count factor degenerating to 1 for fixed-K models.
pub fn topic_quality(tc: &[f64], td: &[f64], topic_counts: &[usize]) -> f64 {
    assert!(
        tc.len() == td.len() && td.len() == topic_counts.len(),
        "per-slice metric lengths must agree"
    );
    assert!(!tc.is_empty(), "need at least one slice");
    let t_max = *topic_counts.iter().max().expect("nonempty") as f64;
    let total: f64 = tc
        .iter()
        .zip(td)
        .zip(topic_counts)
        .map(|((&c, &d), &n)| c * d * n as f64 / t_max)
        .sum();
    total / tc.len() as f64
}

/// Temporal topic smoothness: mean over topics and consecutive slice pairs
/// of the top-N overlap fraction. 1 = frozen topics, 0 = complete turnover.
pub fn tts(locals: &[&TopicMatrix], n: usize) -> Result<f64, EvalError> {
    if locals.len() < 2 {
        return Err(EvalError::TooFew {
            need: 2,
            what: "slices",
            got: locals.len(),
        });
    }
    let tops: Vec<TopWords> = locals.iter().map(|m| top_words(m, n)).collect();
    let k = tops[0].num_topics();
    let mut total = 0.0;
    let mut terms = 0usize;
    for pair in tops.windows(2) {
        assert_eq!(
            pair[1].num_topics(),
            k,
            "topic count must be constant over time"
        );
        for topic in 0..k {
            let a: HashSet<u32> = pair[0].topics[topic].iter().copied().collect();
            let overlap = pair[1].topics[topic]
                .iter()
                .filter(|w| a.contains(w))
                .count();
            total += overlap as f64 / pair[0].topics[topic].len() as f64;
            terms += 1;
        }
    }
    Ok(total / terms as f64)
}

/// Predictive perplexity of future documents under the model trained
/// through slice t: the encoder's variational mean gives z, the decoder
/// runs on the running global alone (no delta exists for an unseen slice).
///
/// Documents with no in-vocabulary tokens are skipped with a warning.
pub fn predictive_perplexity<'a, I>(
    encoder: &EncoderParams,
    global_after: &TopicMatrix,
    docs: I,
    alpha_min: f64,
) -> Result<f64, EvalError>
where
    I: IntoIterator<Item = &'a BowVector>,
{
    let zero_delta = TopicMatrix::zeros(
        global_after.num_topics(),
        global_after.vocab_size(),
        crate::model::TopicRole::Delta,
    );
    let local = global_after.plus(&zero_delta);
    let mut log_lik = 0.0;
    let mut tokens = 0u64;
    for bow in docs {
        if bow.is_empty() {
            log::warn!("skipping empty document in perplexity evaluation");
            continue;
        }
        let alpha = match encode(bow, encoder, alpha_min) {
            Ok(a) => a,
            Err(_) => {
                log::warn!("skipping document the encoder rejected");
                continue;
            }
        };
        let total = alpha.sum();
        let z = TopicWeights {
            z: alpha.alpha_hat.mapv(|a| a / total),
        };
        let probs = decode_local(&z, &local);
        for &(w, c) in &bow.entries {
            log_lik += c as f64 * probs[w as usize].ln();
            tokens += c as u64;
        }
    }
    if tokens == 0 {
        return Err(EvalError::EmptyEval);
    }
    Ok((-log_lik / tokens as f64).exp())
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom; returns (t statistic, two-sided p-value).
pub fn welch_t_test(sample_a: &[f64], sample_b: &[f64]) -> Result<(f64, f64), EvalError> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return Err(EvalError::TooFew {
            need: 2,
            what: "observations per sample",
            got: sample_a.len().min(sample_b.len()),
        });
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = |s: &[f64], m: f64| {
        s.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (s.len() - 1) as f64
    };
    let (na, nb) = (sample_a.len() as f64, sample_b.len() as f64);
    let (ma, mb) = (mean(sample_a), mean(sample_b));
    let (va, vb) = (var(sample_a, ma), var(sample_b, mb));
    if va == 0.0 && vb == 0.0 {
        return Err(EvalError::DegenerateSamples);
    }
    let se2 = va / na + vb / nb;
    let t_stat = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t_stat.abs()));
    Ok((t_stat, p))
}

/// Per-slice metric values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SliceMetrics {
    pub slice: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub td: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tq: Option<f64>,
}

/// Welch test output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TTestResult {
    pub t_stat: f64,
    pub p_value: f64,
}

/// The full report: per-slice TC/TD/TQ, per-model TTS, per-horizon PPL and
/// slice-mean aggregation, stamped with the config hash.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub version: String,
    pub config_hash: String,
    pub per_slice: Vec<SliceMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_tc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_td: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tts: Option<f64>,
    /// Predictive perplexity keyed by the evaluated (future) slice index.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ppl: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttest: Option<TTestResult>,
}

impl MetricReport {
    pub fn new(config_hash: &str) -> Self {
        MetricReport {
            version: crate::ARTIFACT_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            per_slice: Vec::new(),
            mean_tc: None,
            mean_td: None,
            tq: None,
            tts: None,
            ppl: BTreeMap::new(),
            ttest: None,
        }
    }

    /// CSV rendering: `slice,tc,td,tq` rows, a `mean` row, then single-value
    /// summary rows (`tts`, `ppl_<t>`, t-test), with provenance in a leading
    /// comment.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::new();
        writeln!(
            out,
            "# contm {} config_hash={}",
            self.version, self.config_hash
        )
        .expect("string write");
        writeln!(out, "slice,tc,td,tq").expect("string write");
        for row in &self.per_slice {
            writeln!(
                out,
                "{},{},{},{}",
                row.slice,
                cell(row.tc),
                cell(row.td),
                cell(row.tq)
            )
            .expect("string write");
        }
        if self.mean_tc.is_some() || self.mean_td.is_some() || self.tq.is_some() {
            writeln!(
                out,
                "mean,{},{},{}",
                cell(self.mean_tc),
                cell(self.mean_td),
                cell(self.tq)
            )
            .expect("string write");
        }
        if let Some(v) = self.tts {
            writeln!(out, "tts,{v},,").expect("string write");
        }
        for (t, v) in &self.ppl {
            writeln!(out, "ppl_{t},{v},,").expect("string write");
        }
        if let Some(tt) = &self.ttest {
            writeln!(out, "ttest_t,{},,", tt.t_stat).expect("string write");
            writeln!(out, "ttest_p,{},,", tt.p_value).expect("string write");
        }
        out
    }
}

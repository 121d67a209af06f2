//! Caption evaluation: BLEU-1..4, ROUGE-1/2/L, METEOR.
//!
//! Scores are computed per reference and averaged arithmetically over the
//! five references of an image, then over images. BLEU-n values are reported
//! separately per n (no geometric-mean composite); ROUGE-n and ROUGE-L are
//! F1; METEOR uses exact + stem matching with the classic parameters
//! (Fmean weight 9, fragmentation penalty 0.5 · (chunks/matches)³).

use std::collections::HashMap;

use serde::Serialize;

use crate::dataio::{CaptionSet, PredictionSet};
use crate::error::{Error, Result};
use crate::stem::stem;

/// Lowercases, strips the punctuation characters `.,!?;:"()`, splits on
/// whitespace, and drops leading/trailing sos/eos markers.
pub fn tokenize(caption: &str) -> Vec<String> {
    let cleaned: String = caption
        .to_lowercase()
        .chars()
        .map(|c| {
            if matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '"' | '(' | ')') {
                ' '
            } else {
                c
            }
        })
        .collect();
    let mut tokens: Vec<String> = cleaned.split_whitespace().map(str::to_string).collect();
    while tokens.first().is_some_and(|t| t == "sos") {
        tokens.remove(0);
    }
    while tokens.last().is_some_and(|t| t == "eos") {
        tokens.pop();
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Count of candidate n-grams clipped by their reference frequency.
fn clipped_overlap(candidate: &[String], reference: &[String], n: usize) -> usize {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    cand.iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Modified n-gram precision times the brevity penalty
/// `min(1, exp(1 − |ref|/|cand|))`. Candidates shorter than `n` score 0.
pub fn bleu_n(candidate: &[String], reference: &[String], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "bleu_n is defined for n in 1..=4");
    if candidate.len() < n {
        return 0.0;
    }
    let total = candidate.len() - n + 1;
    let precision = clipped_overlap(candidate, reference, n) as f64 / total as f64;
    let bp = if candidate.len() >= reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    };
    precision * bp
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// F1 of clipped n-gram overlap.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> f64 {
    assert!((1..=2).contains(&n), "rouge_n is defined for n in 1..=2");
    if candidate.len() < n || reference.len() < n {
        return 0.0;
    }
    let overlap = clipped_overlap(candidate, reference, n) as f64;
    let p = overlap / (candidate.len() - n + 1) as f64;
    let r = overlap / (reference.len() - n + 1) as f64;
    f1(p, r)
}

/// Length of the longest common subsequence (quadratic DP).
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let cols = b.len() + 1;
    let mut prev = vec![0usize; cols];
    let mut cur = vec![0usize; cols];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 over LCS length: P = LCS/|cand|, R = LCS/|ref|.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    f1(l / candidate.len() as f64, l / reference.len() as f64)
}

/// Greedy left-to-right unigram alignment: stage 1 exact matches, stage 2
/// stem matches over the leftovers. Ties break toward the leftmost unmatched
/// reference position. Returns (cand_idx, ref_idx) pairs sorted by cand_idx.
fn meteor_alignment(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (ci, c) in candidate.iter().enumerate() {
        if let Some(ri) = (0..reference.len()).find(|&ri| !ref_used[ri] && reference[ri] == *c) {
            cand_used[ci] = true;
            ref_used[ri] = true;
            pairs.push((ci, ri));
        }
    }
    let cand_stems: Vec<String> = candidate.iter().map(|t| stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();
    for (ci, cs) in cand_stems.iter().enumerate() {
        if cand_used[ci] {
            continue;
        }
        if let Some(ri) = (0..reference.len()).find(|&ri| !ref_used[ri] && ref_stems[ri] == *cs) {
            cand_used[ci] = true;
            ref_used[ri] = true;
            pairs.push((ci, ri));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Number of maximal runs of adjacent aligned pairs (adjacent in both the
/// candidate and the reference).
fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut last: Option<(usize, usize)> = None;
    for &(ci, ri) in pairs {
        let contiguous =
            matches!(last, Some((lc, lr)) if ci == lc + 1 && ri == lr + 1);
        if !contiguous {
            chunks += 1;
        }
        last = Some((ci, ri));
    }
    chunks
}

/// Alignment-based score: Fmean = 10PR/(R+9P) with a fragmentation penalty
/// 0.5·(chunks/m)³. Zero when nothing aligns.
pub fn meteor(candidate: &[String], reference: &[String]) -> f64 {
    let pairs = meteor_alignment(candidate, reference);
    let m = pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunk_count(&pairs) as f64 / m).powi(3);
    fmean * (1.0 - penalty)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct BleuScores {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct RougeScores {
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Averages {
    pub bleu_avg: f64,
    pub rouge_avg: f64,
}

/// One row of scores in the reporting shape: BLEU-1..4, ROUGE-1/2/L, METEOR,
/// plus the within-family means.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MetricReport {
    pub bleu: BleuScores,
    pub rouge: RougeScores,
    pub meteor: f64,
    pub averages: Averages,
}

impl MetricReport {
    fn from_values(bleu: [f64; 4], rouge: [f64; 3], meteor: f64) -> Self {
        Self {
            bleu: BleuScores {
                bleu_1: bleu[0],
                bleu_2: bleu[1],
                bleu_3: bleu[2],
                bleu_4: bleu[3],
            },
            rouge: RougeScores {
                rouge_1: rouge[0],
                rouge_2: rouge[1],
                rouge_l: rouge[2],
            },
            meteor,
            averages: Averages {
                bleu_avg: bleu.iter().sum::<f64>() / 4.0,
                rouge_avg: rouge.iter().sum::<f64>() / 3.0,
            },
        }
    }

    fn values(&self) -> ([f64; 4], [f64; 3], f64) {
        (
            [
                self.bleu.bleu_1,
                self.bleu.bleu_2,
                self.bleu.bleu_3,
                self.bleu.bleu_4,
            ],
            [self.rouge.rouge_1, self.rouge.rouge_2, self.rouge.rouge_l],
            self.meteor,
        )
    }

    fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len() as f64;
        let mut bleu = [0.0; 4];
        let mut rouge = [0.0; 3];
        let mut met = 0.0;
        for r in reports {
            let (b, rg, m) = r.values();
            for i in 0..4 {
                bleu[i] += b[i];
            }
            for i in 0..3 {
                rouge[i] += rg[i];
            }
            met += m;
        }
        MetricReport::from_values(
            bleu.map(|v| v / n),
            rouge.map(|v| v / n),
            met / n,
        )
    }
}

/// Scores a candidate against exactly five references; every metric is
/// computed per reference and averaged.
pub fn score_image(candidate: &[String], references: &[Vec<String>]) -> Result<MetricReport> {
    if references.len() != 5 {
        return Err(Error::Cardinality(format!(
            "expected exactly 5 references, got {}",
            references.len()
        )));
    }
    let per_ref: Vec<MetricReport> = references
        .iter()
        .map(|r| {
            MetricReport::from_values(
                [
                    bleu_n(candidate, r, 1),
                    bleu_n(candidate, r, 2),
                    bleu_n(candidate, r, 3),
                    bleu_n(candidate, r, 4),
                ],
                [
                    rouge_n(candidate, r, 1),
                    rouge_n(candidate, r, 2),
                    rouge_l(candidate, r),
                ],
                meteor(candidate, r),
            )
        })
        .collect();
    Ok(MetricReport::mean(&per_ref))
}

#[derive(Debug, Clone, Serialize)]
pub struct PerImageReport {
    pub image: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// Corpus-level report: the per-image reports averaged arithmetically, plus
/// the per-image breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusReport {
    #[serde(flatten)]
    pub corpus: MetricReport,
    pub per_image: Vec<PerImageReport>,
}

/// Scores every prediction against its image's five references. Every
/// prediction key must exist in the ground truth.
pub fn score_corpus(
    predictions: &PredictionSet,
    ground_truth: &CaptionSet,
) -> Result<CorpusReport> {
    if predictions.0.is_empty() {
        return Err(Error::Cardinality("prediction set is empty".into()));
    }
    let mut per_image = Vec::with_capacity(predictions.0.len());
    for (image, caption) in &predictions.0 {
        let refs = ground_truth
            .0
            .get(image)
            .ok_or_else(|| Error::MissingKey(image.clone()))?;
        let ref_tokens: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();
        let cand = tokenize(caption);
        per_image.push(PerImageReport {
            image: image.clone(),
            report: score_image(&cand, &ref_tokens)?,
        });
    }
    let corpus = MetricReport::mean(
        &per_image.iter().map(|p| p.report).collect::<Vec<_>>(),
    );
    Ok(CorpusReport { corpus, per_image })
}

/// Table-shaped one-metric-per-line summary.
pub fn format_summary(report: &MetricReport) -> String {
    format!(
        "BLEU-1: {:.4}\nBLEU-2: {:.4}\nBLEU-3: {:.4}\nBLEU-4: {:.4}\n\
         ROUGE-1: {:.4}\nROUGE-2: {:.4}\nROUGE-L: {:.4}\nMETEOR: {:.4}\n\
         BLEU avg: {:.4}\nROUGE avg: {:.4}",
        report.bleu.bleu_1,
        report.bleu.bleu_2,
        report.bleu.bleu_3,
        report.bleu.bleu_4,
        report.rouge.rouge_1,
        report.rouge.rouge_2,
        report.rouge.rouge_l,
        report.meteor,
        report.averages.bleu_avg,
        report.averages.rouge_avg,
    )
}

/// All metric values of a report, used by range checks.
pub fn report_values(report: &MetricReport) -> Vec<f64> {
    let (b, r, m) = report.values();
    b.iter()
        .chain(r.iter())
        .copied()
        .chain([m, report.averages.bleu_avg, report.averages.rouge_avg])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenize_strips_markers_and_punctuation() {
        assert_eq!(
            tokenize("sos A train is parked. eos"),
            toks("a train is parked")
        );
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("Hello, HELLO"), toks("hello hello"));
    }

    #[test]
    fn bleu_identical_is_one() {
        let c = toks("a black honda motorcycle");
        for n in 1..=4 {
            assert!((bleu_n(&c, &c, n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bleu_clipping_example() {
        let c = toks("the the the");
        let r = toks("the cat");
        assert!((bleu_n(&c, &r, 1) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_disjoint_is_zero() {
        assert_eq!(bleu_n(&toks("a b"), &toks("c d"), 1), 0.0);
    }

    #[test]
    fn bleu_short_candidate_scores_zero() {
        assert_eq!(bleu_n(&toks("a b"), &toks("a b c"), 3), 0.0);
        assert_eq!(bleu_n(&[], &toks("a"), 1), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty_applies() {
        // unigram precision 1 but candidate half the reference length
        let c = toks("a b");
        let r = toks("a b c d");
        let expected = (1.0f64 - 2.0).exp();
        assert!((bleu_n(&c, &r, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn rouge_identical_is_one() {
        let c = toks("a b c");
        assert_eq!(rouge_n(&c, &c, 1), 1.0);
        assert_eq!(rouge_n(&c, &c, 2), 1.0);
        assert_eq!(rouge_l(&c, &c), 1.0);
    }

    #[test]
    fn rouge_l_example() {
        let c = toks("a b c d");
        let r = toks("a c b d");
        assert!((rouge_l(&c, &r) - 0.75).abs() < 1e-9);
    }

    #[test]
    fn rouge_disjoint_is_zero() {
        assert_eq!(rouge_n(&toks("x"), &toks("a b"), 1), 0.0);
    }

    #[test]
    fn meteor_single_token_identical() {
        assert!((meteor(&toks("cat"), &toks("cat")) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meteor_four_token_identical() {
        let c = toks("a train is parked");
        let expected = 1.0 - 0.5 / 64.0;
        assert!((meteor(&c, &c) - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_disjoint_is_zero() {
        assert_eq!(meteor(&toks("a b"), &toks("c d")), 0.0);
    }

    #[test]
    fn meteor_stems_match() {
        // "parked" aligns with "parking" through the stem stage
        let s = meteor(&toks("parked"), &toks("parking"));
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn score_image_needs_five_refs() {
        let c = toks("a b");
        let refs: Vec<Vec<String>> = (0..4).map(|_| toks("a b")).collect();
        assert!(matches!(
            score_image(&c, &refs),
            Err(Error::Cardinality(_))
        ));
    }

    #[test]
    fn score_image_all_identical() {
        let c = toks("a cat sat here");
        let refs: Vec<Vec<String>> = (0..5).map(|_| c.clone()).collect();
        let rep = score_image(&c, &refs).unwrap();
        assert_eq!(rep.bleu.bleu_1, 1.0);
        assert_eq!(rep.bleu.bleu_4, 1.0);
        assert_eq!(rep.rouge.rouge_l, 1.0);
    }

    #[test]
    fn score_image_one_match_in_five() {
        let c = toks("w x y z");
        let mut refs: Vec<Vec<String>> = vec![c.clone()];
        refs.extend((0..4).map(|i| toks(&format!("r{i} s{i} t{i}"))));
        let rep = score_image(&c, &refs).unwrap();
        assert!((rep.bleu.bleu_1 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn corpus_mean_and_missing_key() {
        use crate::dataio::{CaptionSet, PredictionSet};
        let mut gt = CaptionSet::default();
        gt.0.insert(
            "img1".into(),
            (0..5).map(|_| "sos a cat eos".to_string()).collect(),
        );
        let mut preds = PredictionSet::default();
        preds.0.insert("img1".into(), "a cat".into());
        let rep = score_corpus(&preds, &gt).unwrap();
        assert_eq!(rep.per_image.len(), 1);
        assert_eq!(rep.corpus.bleu.bleu_1, rep.per_image[0].report.bleu.bleu_1);

        preds.0.insert("imgX".into(), "a dog".into());
        match score_corpus(&preds, &gt) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "imgX"),
            other => panic!("expected missing key, got {other:?}"),
        }
    }

    #[test]
    fn corpus_two_images_average() {
        use crate::dataio::{CaptionSet, PredictionSet};
        let mut gt = CaptionSet::default();
        gt.0.insert(
            "a".into(),
            (0..5).map(|_| "sos u eos".to_string()).collect(),
        );
        gt.0.insert(
            "b".into(),
            (0..5).map(|_| "sos v w x y z eos".to_string()).collect(),
        );
        let mut preds = PredictionSet::default();
        preds.0.insert("a".into(), "u".into()); // bleu1 = 1
        preds.0.insert("b".into(), "q r s".into()); // bleu1 = 0
        let rep = score_corpus(&preds, &gt).unwrap();
        assert!((rep.corpus.bleu.bleu_1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn averages_are_means() {
        let rep = MetricReport::from_values([0.4, 0.3, 0.2, 0.1], [0.6, 0.3, 0.3], 0.5);
        assert!((rep.averages.bleu_avg - 0.25).abs() < 1e-12);
        assert!((rep.averages.rouge_avg - 0.4).abs() < 1e-12);
    }

    /// Exponential-time-free memoized LCS used as an independent oracle.
    fn lcs_memo(a: &[String], b: &[String]) -> usize {
        fn go(
            a: &[String],
            b: &[String],
            i: usize,
            j: usize,
            memo: &mut HashMap<(usize, usize), usize>,
        ) -> usize {
            if i == 0 || j == 0 {
                return 0;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let v = if a[i - 1] == b[j - 1] {
                go(a, b, i - 1, j - 1, memo) + 1
            } else {
                go(a, b, i - 1, j, memo).max(go(a, b, i, j - 1, memo))
            };
            memo.insert((i, j), v);
            v
        }
        go(a, b, a.len(), b.len(), &mut HashMap::new())
    }

    fn token_seq() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            proptest::sample::select(vec!["a", "b", "c", "cat", "dog", "runs", "running"]),
            0..12,
        )
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
    }

    proptest! {
        #[test]
        fn lcs_matches_memo_oracle_and_is_symmetric(a in token_seq(), b in token_seq()) {
            let dp = lcs_len(&a, &b);
            prop_assert_eq!(dp, lcs_memo(&a, &b));
            prop_assert_eq!(dp, lcs_len(&b, &a));
        }

        #[test]
        fn all_metrics_in_unit_interval(a in token_seq(), b in token_seq()) {
            for n in 1..=4usize {
                let v = bleu_n(&a, &b, n);
                prop_assert!((0.0..=1.0).contains(&v), "bleu_{n} = {v}");
            }
            for n in 1..=2usize {
                let v = rouge_n(&a, &b, n);
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let v = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            let v = meteor(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn clipped_counts_never_exceed_reference(a in token_seq(), b in token_seq()) {
            for n in 1..=2usize {
                let overlap = clipped_overlap(&a, &b, n);
                let ref_total = b.len().saturating_sub(n - 1);
                prop_assert!(overlap <= ref_total);
            }
        }

        #[test]
        fn appending_matching_ref_token_never_lowers_recall_numerator(
            a in token_seq(),
            b in token_seq(),
        ) {
            // recall numerator == clipped overlap; append a candidate token to
            // the reference and the overlap may only grow
            if let Some(tok) = a.first().cloned() {
                let before = clipped_overlap(&a, &b, 1);
                let mut b2 = b.clone();
                b2.push(tok);
                prop_assert!(clipped_overlap(&a, &b2, 1) >= before);
            }
        }
    }
}

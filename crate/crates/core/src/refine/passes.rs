//! The individual refinement passes. Each consumes the incoming examples and
//! returns kept/dropped partitions plus a [`PassReport`]; the pipeline in the
//! parent module chains them in fixed order.

use std::collections::HashSet;

use rand::rngs::StdRng;
use rand::SeedableRng;

use super::{
    DedupMode, MineConfig, MineStrategy, OnFail, PassReport, RankRange, RefineError, TeacherView,
};
use crate::data::{casefold, content_id, normalize_text, Document, TripletExample};
use crate::rank::{dot_f64, RankEntry, RankedList};
use crate::util::derive_seed;

/// The result of one pass over a batch of examples.
#[derive(Debug)]
pub struct PassOutcome {
    pub kept: Vec<TripletExample>,
    pub dropped: Vec<TripletExample>,
    pub report: PassReport,
}

fn finish(
    mut report: PassReport,
    kept: Vec<TripletExample>,
    dropped: Vec<TripletExample>,
) -> PassOutcome {
    report.kept = kept.len();
    report.dropped = dropped.len();
    PassOutcome {
        kept,
        dropped,
        report,
    }
}

/// The 1-based rank window of a ranking as a slice (empty when the corpus is
/// smaller than `range.lo`).
fn window_of(ranking: &RankedList, range: RankRange) -> &[RankEntry] {
    if ranking.len() < range.lo {
        &[]
    } else {
        &ranking.entries[range.lo - 1..range.hi.min(ranking.len())]
    }
}

/// Keep an example iff its answer appears as a substring of the positive's
/// text (both whitespace-normalized, casefolded when enabled). Examples
/// without an answer pass through and are counted under `answer-missing`.
pub fn filter_positive_by_answer(examples: Vec<TripletExample>, casefold_enabled: bool) -> PassOutcome {
    let mut report = PassReport::new("answer", examples.len());
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for ex in examples {
        let keep = match &ex.answer {
            None => {
                report.bump("answer-missing");
                true
            }
            Some(answer) => {
                let mut hay = normalize_text(&ex.positive.text);
                let mut needle = normalize_text(answer);
                if casefold_enabled {
                    hay = casefold(&hay);
                    needle = casefold(&needle);
                }
                hay.contains(&needle)
            }
        };
        if keep {
            kept.push(ex);
        } else {
            report.bump("answer-mismatch");
            dropped.push(ex);
        }
    }
    finish(report, kept, dropped)
}

/// Keep an example iff its positive's teacher rank over the task corpus is
/// within the top n.
pub fn filter_positive_by_rank(
    examples: Vec<TripletExample>,
    teacher: &TeacherView<'_>,
    top_n: usize,
) -> Result<PassOutcome, RefineError> {
    let mut report = PassReport::new("positive-rank", examples.len());
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for ex in examples {
        let ranking = teacher.ranking(&ex.query.id)?;
        let rank = ranking.rank_of(&ex.positive.id).ok_or_else(|| {
            RefineError::Config(format!(
                "positive {} is not in the corpus ranking for query {}",
                ex.positive.id, ex.query.id
            ))
        })?;
        if rank <= top_n {
            kept.push(ex);
        } else {
            report.bump("positive-rank");
            dropped.push(ex);
        }
    }
    Ok(finish(report, kept, dropped))
}

/// How mining went for one example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MineOutcome {
    /// Negatives replaced with `count` window candidates.
    Mined,
    /// Negatives replaced, but fewer than `count` candidates existed.
    Short,
    /// No candidate at all (corpus smaller than the window, or everything
    /// excluded): the example passes through unchanged.
    Unmineable,
}

/// Replace an example's negatives with teacher-window candidates: docs at
/// ranks in `range`, the positive and `exclude` removed, in ascending rank
/// (`Top`) or a seeded sample reported in ascending rank (`Random`).
pub fn mine_negatives(
    example: &TripletExample,
    teacher: &TeacherView<'_>,
    range: RankRange,
    count: usize,
    exclude: &HashSet<String>,
    strategy: MineStrategy,
    seed: u64,
) -> Result<(TripletExample, MineOutcome), RefineError> {
    let ranking = teacher.ranking(&example.query.id)?;
    let candidates: Vec<&str> = window_of(ranking, range)
        .iter()
        .map(|e| e.doc_id.as_str())
        .filter(|id| *id != example.positive.id && !exclude.contains(*id))
        .collect();
    if candidates.is_empty() {
        return Ok((example.clone(), MineOutcome::Unmineable));
    }
    let chosen: Vec<&str> = if candidates.len() <= count {
        candidates
    } else {
        match strategy {
            MineStrategy::Top => candidates[..count].to_vec(),
            MineStrategy::Random => {
                let mut rng = StdRng::seed_from_u64(seed);
                let mut picks = rand::seq::index::sample(&mut rng, candidates.len(), count).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|i| candidates[i]).collect()
            }
        }
    };
    let outcome = if chosen.len() < count {
        MineOutcome::Short
    } else {
        MineOutcome::Mined
    };
    let negatives = chosen
        .iter()
        .map(|id| {
            teacher.document(id).cloned().ok_or_else(|| {
                RefineError::Config(format!("ranked doc {id} is not in the dataset corpus"))
            })
        })
        .collect::<Result<Vec<Document>, _>>()?;
    let mut out = example.clone();
    out.negatives = negatives;
    Ok((out, outcome))
}

/// Mine every example; never drops, but counts short and unmineable cases.
/// Per-example randomness derives from `seed` and the example's query and
/// positive ids, so results do not depend on dataset order.
pub fn mine_pass(
    examples: Vec<TripletExample>,
    teacher: &TeacherView<'_>,
    cfg: &MineConfig,
    count: usize,
    seed: u64,
) -> Result<PassOutcome, RefineError> {
    let mut report = PassReport::new("mine", examples.len());
    let exclude: HashSet<String> = if cfg.exclude_other_positives {
        examples.iter().map(|e| e.positive.id.clone()).collect()
    } else {
        HashSet::new()
    };
    let mut kept = Vec::with_capacity(examples.len());
    for ex in examples {
        let ex_seed = derive_seed(seed, &format!("mine:{}:{}", ex.query.id, ex.positive.id));
        let (mined, outcome) =
            mine_negatives(&ex, teacher, cfg.range, count, &exclude, cfg.strategy, ex_seed)?;
        match outcome {
            MineOutcome::Mined => report.remined += 1,
            MineOutcome::Short => {
                report.remined += 1;
                report.bump("mining-short");
            }
            MineOutcome::Unmineable => report.bump("unmineable"),
        }
        kept.push(mined);
    }
    Ok(finish(report, kept, Vec::new()))
}

/// Check every existing negative's teacher rank against the window. A
/// violation either drops the whole example or gets repaired in place with
/// fresh in-window negatives, per `on_fail`.
pub fn filter_negative_by_rank(
    examples: Vec<TripletExample>,
    teacher: &TeacherView<'_>,
    range: RankRange,
    on_fail: OnFail,
) -> Result<PassOutcome, RefineError> {
    let mut report = PassReport::new("negative-rank", examples.len());
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for mut ex in examples {
        let ranking = teacher.ranking(&ex.query.id)?;
        let mut ranks = Vec::with_capacity(ex.negatives.len());
        for n in &ex.negatives {
            ranks.push(ranking.rank_of(&n.id).ok_or_else(|| {
                RefineError::Config(format!(
                    "negative {} is not in the corpus ranking for query {}",
                    n.id, ex.query.id
                ))
            })?);
        }
        let bad_count = ranks.iter().filter(|r| !range.contains(**r)).count();
        if bad_count == 0 {
            kept.push(ex);
            continue;
        }
        match on_fail {
            OnFail::Drop => {
                report.bump_by("negative-out-of-window", bad_count);
                dropped.push(ex);
            }
            OnFail::Remine => {
                let good: Vec<Document> = ex
                    .negatives
                    .iter()
                    .zip(&ranks)
                    .filter(|(_, r)| range.contains(**r))
                    .map(|(n, _)| n.clone())
                    .collect();
                let mut used: HashSet<String> = good.iter().map(|n| n.id.clone()).collect();
                used.insert(ex.positive.id.clone());
                let mut replacements = Vec::new();
                for entry in window_of(ranking, range) {
                    if replacements.len() == bad_count {
                        break;
                    }
                    if !used.contains(&entry.doc_id) {
                        used.insert(entry.doc_id.clone());
                        replacements.push(teacher.document(&entry.doc_id).cloned().ok_or_else(
                            || {
                                RefineError::Config(format!(
                                    "ranked doc {} is not in the dataset corpus",
                                    entry.doc_id
                                ))
                            },
                        )?);
                    }
                }
                if replacements.len() < bad_count {
                    report.bump_by("negative-unrepairable", bad_count - replacements.len());
                }
                report.bump_by("negative-remined", replacements.len());
                report.remined += 1;
                ex.negatives = good.into_iter().chain(replacements).collect();
                kept.push(ex);
            }
        }
    }
    Ok(finish(report, kept, dropped))
}

/// Drop negative n when cos(q,n) ≥ cos(q,positive) − margin — the teacher
/// judges it (nearly) as relevant as the positive. Examples left with zero
/// negatives are dropped, including ones that arrived empty.
pub fn filter_false_negatives(
    examples: Vec<TripletExample>,
    teacher: &TeacherView<'_>,
    margin: f64,
) -> Result<PassOutcome, RefineError> {
    let mut report = PassReport::new("false-negative", examples.len());
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for mut ex in examples {
        let cos_qp = teacher.cosine(&ex.query.id, &ex.positive.id)?;
        let mut kept_negs = Vec::with_capacity(ex.negatives.len());
        let mut dropped_negs = 0usize;
        for n in std::mem::take(&mut ex.negatives) {
            let cos_qn = teacher.cosine(&ex.query.id, &n.id)?;
            if cos_qn >= cos_qp - margin {
                dropped_negs += 1;
            } else {
                kept_negs.push(n);
            }
        }
        report.bump_by("false-negative-dropped", dropped_negs);
        ex.negatives = kept_negs;
        if ex.negatives.is_empty() {
            report.bump("no-negatives-left");
            dropped.push(ex);
        } else {
            kept.push(ex);
        }
    }
    Ok(finish(report, kept, dropped))
}

fn exact_key(ex: &TripletExample) -> (String, String) {
    (
        content_id(&casefold(&normalize_text(&ex.query.text))),
        content_id(&casefold(&normalize_text(&ex.positive.text))),
    )
}

/// Deduplicate examples, first occurrence retained. Exact mode keys on the
/// casefolded (query text, positive text) pair; near mode additionally drops
/// an example whose query embedding has cosine ≥ threshold with any retained
/// example's query embedding.
pub fn dedup(
    examples: Vec<TripletExample>,
    mode: &DedupMode,
    teacher: Option<&TeacherView<'_>>,
) -> Result<PassOutcome, RefineError> {
    let mut report = PassReport::new("dedup", examples.len());
    let threshold = match mode {
        DedupMode::Off => return Ok(finish(report, examples, Vec::new())),
        DedupMode::Exact => None,
        DedupMode::Near { threshold } => {
            if teacher.is_none() {
                return Err(RefineError::Config(
                    "near dedup requires a teacher store".into(),
                ));
            }
            Some(*threshold)
        }
    };
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut seen_keys = HashSet::new();
    let mut retained_queries: Vec<Vec<f32>> = Vec::new();
    for ex in examples {
        if !seen_keys.insert(exact_key(&ex)) {
            report.bump("duplicate-exact");
            dropped.push(ex);
            continue;
        }
        if let Some(threshold) = threshold {
            let teacher = teacher.expect("checked above");
            let qv = teacher.query_vector(&ex.query.id)?;
            if retained_queries.iter().any(|rv| dot_f64(rv, &qv) >= threshold) {
                report.bump("duplicate-near");
                dropped.push(ex);
                continue;
            }
            retained_queries.push(qv);
        }
        kept.push(ex);
    }
    Ok(finish(report, kept, dropped))
}

#[cfg(test)]
mod tests {
    use super::super::{refine_pipeline, RefineConfig, RefineReport};
    use super::*;
    use crate::data::{Dataset, Query, TaskKind};
    use crate::embed::{Embedding, EmbeddingStore};

    fn task() -> TaskKind {
        "retrieval".parse().unwrap()
    }

    fn doc(id: &str) -> Document {
        Document::with_id(id, &format!("text of {id}")).unwrap()
    }

    fn query(text: &str) -> Query {
        Query::new(text, task()).unwrap()
    }

    /// A unit vector at the chosen cosine against [1, 0].
    fn at_cos(c: f64) -> Embedding {
        Embedding::unit(vec![c as f32, ((1.0 - c * c).max(0.0)).sqrt() as f32]).unwrap()
    }

    /// Store with docs planted at the given cosines against [1, 0] and every
    /// example query embedded at [1, 0] unless already present.
    fn setup(doc_cos: &[(&str, f64)], examples: Vec<TripletExample>) -> (Dataset, EmbeddingStore) {
        let corpus: Vec<Document> = doc_cos.iter().map(|(id, _)| doc(id)).collect();
        let mut store = EmbeddingStore::new(2).unwrap();
        for (id, c) in doc_cos {
            store.append(*id, &at_cos(*c)).unwrap();
        }
        for ex in &examples {
            if !store.contains(&ex.query.id) {
                store.append(ex.query.id.clone(), &at_cos(1.0)).unwrap();
            }
        }
        let dataset = Dataset::new("t", task(), examples, corpus).unwrap();
        (dataset, store)
    }

    /// Five docs at strictly descending similarity: ranks 1..=5.
    fn five_ranked() -> Vec<(&'static str, f64)> {
        vec![
            ("d1", 0.95),
            ("d2", 0.90),
            ("d3", 0.85),
            ("d4", 0.80),
            ("d5", 0.75),
        ]
    }

    #[test]
    fn answer_filter_substring_rules() {
        let q = query("capital of France");
        let positive = Document::with_id("p", "Paris is the capital of France").unwrap();
        let with_answer = |answer: &str| TripletExample {
            answer: Some(answer.to_string()),
            ..TripletExample::new(q.clone(), positive.clone())
        };

        let out = filter_positive_by_answer(vec![with_answer("Paris")], true);
        assert_eq!(out.kept.len(), 1);

        let out = filter_positive_by_answer(vec![with_answer("paris")], true);
        assert_eq!(out.kept.len(), 1);

        let out = filter_positive_by_answer(vec![with_answer("paris")], false);
        assert_eq!(out.kept.len(), 0);

        let out = filter_positive_by_answer(vec![with_answer("Berlin")], true);
        assert_eq!(out.kept.len(), 0);
        assert_eq!(out.report.reasons["answer-mismatch"], 1);

        let out = filter_positive_by_answer(vec![TripletExample::new(q, positive)], true);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.report.reasons["answer-missing"], 1);
    }

    #[test]
    fn positive_rank_filter_uses_true_ranks() {
        let mk = |pos: &str| {
            TripletExample::new(query(&format!("find {pos}")), doc(pos))
        };
        let (dataset, store) = setup(&five_ranked(), vec![mk("d1"), mk("d4")]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();

        let out = filter_positive_by_rank(dataset.examples.clone(), &teacher, 3).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].positive.id, "d1");
        assert_eq!(out.dropped[0].positive.id, "d4");
        assert_eq!(out.report.reasons["positive-rank"], 1);

        // top_n = corpus size keeps everything.
        let out = filter_positive_by_rank(dataset.examples.clone(), &teacher, 5).unwrap();
        assert_eq!(out.kept.len(), 2);

        let out = filter_positive_by_rank(dataset.examples.clone(), &teacher, 4).unwrap();
        assert_eq!(out.kept.len(), 2);
    }

    #[test]
    fn mining_takes_window_ranks_ascending() {
        let ex = TripletExample::new(query("q"), doc("d5"));
        let (dataset, store) = setup(&five_ranked(), vec![ex.clone()]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let range = RankRange::new(2, 3).unwrap();

        let (mined, outcome) = mine_negatives(
            &ex, &teacher, range, 2, &HashSet::new(), MineStrategy::Top, 0,
        )
        .unwrap();
        assert_eq!(outcome, MineOutcome::Mined);
        let ids: Vec<&str> = mined.negatives.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["d2", "d3"]);
        // Independent verification: recomputed ranks are in window.
        let ranking = teacher.ranking(&ex.query.id).unwrap();
        for n in &mined.negatives {
            assert!(range.contains(ranking.rank_of(&n.id).unwrap()));
        }
    }

    #[test]
    fn mining_skips_the_positive_inside_the_window() {
        let ex = TripletExample::new(query("q"), doc("d2"));
        let (dataset, store) = setup(&five_ranked(), vec![ex.clone()]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();

        let (mined, outcome) = mine_negatives(
            &ex,
            &teacher,
            RankRange::new(2, 3).unwrap(),
            1,
            &HashSet::new(),
            MineStrategy::Top,
            0,
        )
        .unwrap();
        assert_eq!(outcome, MineOutcome::Mined);
        assert_eq!(mined.negatives.len(), 1);
        assert_eq!(mined.negatives[0].id, "d3");
    }

    #[test]
    fn mining_exhaustion_passes_example_through_unchanged() {
        // 1-doc corpus, window [1,1], the only candidate is the positive.
        let ex = TripletExample::new(query("q"), doc("only"));
        let (dataset, store) = setup(&[("only", 0.9)], vec![ex.clone()]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let (out, outcome) = mine_negatives(
            &ex,
            &teacher,
            RankRange::new(1, 1).unwrap(),
            1,
            &HashSet::new(),
            MineStrategy::Top,
            0,
        )
        .unwrap();
        assert_eq!(outcome, MineOutcome::Unmineable);
        assert_eq!(out, ex);

        // Corpus smaller than the window floor.
        let mut ex2 = TripletExample::new(query("q2"), doc("only"));
        ex2.negatives = vec![];
        let (dataset, store) = setup(&[("only", 0.9)], vec![ex2.clone()]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let (out, outcome) = mine_negatives(
            &ex2,
            &teacher,
            RankRange::new(30, 100).unwrap(),
            1,
            &HashSet::new(),
            MineStrategy::Top,
            0,
        )
        .unwrap();
        assert_eq!(outcome, MineOutcome::Unmineable);
        assert_eq!(out, ex2);
    }

    #[test]
    fn mining_short_takes_what_exists() {
        let ex = TripletExample::new(query("q"), doc("d5"));
        let (dataset, store) = setup(&five_ranked(), vec![ex.clone()]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let (mined, outcome) = mine_negatives(
            &ex,
            &teacher,
            RankRange::new(2, 3).unwrap(),
            5,
            &HashSet::new(),
            MineStrategy::Top,
            0,
        )
        .unwrap();
        assert_eq!(outcome, MineOutcome::Short);
        assert_eq!(mined.negatives.len(), 2);
    }

    #[test]
    fn random_mining_is_seeded_and_window_bound() {
        let docs: Vec<(String, f64)> = (0..10)
            .map(|i| (format!("d{i}"), 0.95 - 0.05 * i as f64))
            .collect();
        let doc_cos: Vec<(&str, f64)> = docs.iter().map(|(id, c)| (id.as_str(), *c)).collect();
        let ex = TripletExample::new(query("q"), doc("d0"));
        let (dataset, store) = setup(&doc_cos, vec![ex.clone()]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let range = RankRange::new(2, 9).unwrap();

        let mine = |seed| {
            mine_negatives(&ex, &teacher, range, 3, &HashSet::new(), MineStrategy::Random, seed)
                .unwrap()
                .0
        };
        let a = mine(7);
        let b = mine(7);
        assert_eq!(a, b);
        let ranking = teacher.ranking(&ex.query.id).unwrap();
        let ranks: Vec<usize> = a
            .negatives
            .iter()
            .map(|n| ranking.rank_of(&n.id).unwrap())
            .collect();
        assert_eq!(a.negatives.len(), 3);
        assert!(ranks.iter().all(|r| range.contains(*r)));
        assert!(ranks.windows(2).all(|w| w[0] < w[1]), "ascending rank order");
    }

    #[test]
    fn negative_rank_filter_inclusive_boundaries_and_drop() {
        let range = RankRange::new(2, 3).unwrap();
        let mk = |neg: &str| {
            let mut ex = TripletExample::new(query(&format!("vs {neg}")), doc("d5"));
            ex.negatives = vec![doc(neg)];
            ex
        };
        let (dataset, store) = setup(
            &five_ranked(),
            vec![mk("d2"), mk("d3"), mk("d4"), mk("d1")],
        );
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let out =
            filter_negative_by_rank(dataset.examples.clone(), &teacher, range, OnFail::Drop)
                .unwrap();
        let kept_negs: Vec<&str> = out
            .kept
            .iter()
            .map(|e| e.negatives[0].id.as_str())
            .collect();
        assert_eq!(kept_negs, ["d2", "d3"], "boundary ranks 2 and 3 kept");
        assert_eq!(out.dropped.len(), 2);
        assert_eq!(out.report.reasons["negative-out-of-window"], 2);
    }

    #[test]
    fn negative_rank_remine_repairs_in_window() {
        let range = RankRange::new(2, 3).unwrap();
        let mut ex = TripletExample::new(query("q"), doc("d5"));
        ex.negatives = vec![doc("d2"), doc("d1")]; // d1 is rank 1: out of window
        let (dataset, store) = setup(&five_ranked(), vec![ex]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let out = filter_negative_by_rank(
            dataset.examples.clone(),
            &teacher,
            range,
            OnFail::Remine,
        )
        .unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.report.remined, 1);
        let repaired = &out.kept[0];
        assert_eq!(repaired.negatives.len(), 2);
        let ranking = teacher.ranking(&repaired.query.id).unwrap();
        for n in &repaired.negatives {
            assert!(range.contains(ranking.rank_of(&n.id).unwrap()));
        }
        // d2 kept, the out-of-window d1 replaced by the remaining window doc.
        let ids: Vec<&str> = repaired.negatives.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["d2", "d3"]);
    }

    #[test]
    fn false_negative_margin_rules() {
        // cos(q,p)=0.90; a 0.85 negative survives δ=0.02 (0.85 < 0.88), a
        // paraphrase at 0.93 does not, nor does an equal-similarity one at
        // δ=0.
        let mk = |negs: &[&str]| {
            let mut ex = TripletExample::new(query("q"), doc("pos"));
            ex.negatives = negs.iter().map(|n| doc(n)).collect();
            ex
        };
        let planted = vec![
            ("pos", 0.90),
            ("near", 0.93),
            ("ok", 0.85),
            ("far", 0.30),
            ("twin", 0.90),
        ];
        let (dataset, store) = setup(&planted, vec![mk(&["near", "ok", "far"])]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();

        let out =
            filter_false_negatives(dataset.examples.clone(), &teacher, 0.02).unwrap();
        assert_eq!(out.kept.len(), 1);
        let ids: Vec<&str> = out.kept[0].negatives.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["ok", "far"], "paraphrase removed, topic shift kept");
        assert_eq!(out.report.reasons["false-negative-dropped"], 1);

        // Equal similarity is dropped even at margin zero.
        let (dataset, store) = setup(&planted, vec![mk(&["twin"])]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let out = filter_false_negatives(dataset.examples.clone(), &teacher, 0.0).unwrap();
        assert_eq!(out.kept.len(), 0);
        assert_eq!(out.report.reasons["no-negatives-left"], 1);
    }

    #[test]
    fn false_negative_drops_examples_that_arrive_empty() {
        let ex = TripletExample::new(query("q"), doc("pos"));
        let (dataset, store) = setup(&[("pos", 0.9)], vec![ex]);
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        let out = filter_false_negatives(dataset.examples.clone(), &teacher, 0.02).unwrap();
        assert_eq!(out.kept.len(), 0);
        assert_eq!(out.report.reasons["no-negatives-left"], 1);
    }

    #[test]
    fn exact_dedup_keys_on_normalized_casefolded_text() {
        let positive = doc("p");
        let a = TripletExample::new(query("What is Rust"), positive.clone());
        let b = TripletExample::new(query("what   is rust"), positive.clone());
        let c = TripletExample::new(query("entirely different"), positive);
        let out = dedup(vec![a.clone(), b, c.clone()], &DedupMode::Exact, None).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.kept[0], a, "first occurrence wins");
        assert_eq!(out.kept[1], c);
        assert_eq!(out.report.reasons["duplicate-exact"], 1);
    }

    #[test]
    fn near_dedup_drops_planted_high_cosine_pairs() {
        let e1 = TripletExample::new(query("alpha"), doc("p"));
        let e2 = TripletExample::new(query("alpha prime"), doc("p"));
        let e3 = TripletExample::new(query("unrelated"), doc("p"));
        let corpus = vec![doc("p")];
        let mut store = EmbeddingStore::new(2).unwrap();
        store.append("p", &at_cos(0.5)).unwrap();
        store.append(e1.query.id.clone(), &at_cos(1.0)).unwrap();
        store.append(e2.query.id.clone(), &at_cos(0.97)).unwrap();
        store.append(e3.query.id.clone(), &at_cos(0.0)).unwrap();
        let dataset = Dataset::new("t", task(), vec![e1.clone(), e2, e3.clone()], corpus).unwrap();
        let teacher = TeacherView::new(&dataset, &store).unwrap();

        let mode = DedupMode::Near { threshold: 0.95 };
        let out = dedup(dataset.examples.clone(), &mode, Some(&teacher)).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.kept[0].query.id, e1.query.id);
        assert_eq!(out.kept[1].query.id, e3.query.id);
        assert_eq!(out.report.reasons["duplicate-near"], 1);

        assert!(matches!(
            dedup(dataset.examples.clone(), &mode, None),
            Err(RefineError::Config(_))
        ));
    }

    fn conservation_holds(report: &RefineReport) {
        let mut feed = report.examples_in;
        for pass in &report.passes {
            assert_eq!(pass.examples_in, feed, "pass {} input chained", pass.pass);
            assert_eq!(
                pass.examples_in,
                pass.kept + pass.dropped,
                "pass {} conservation",
                pass.pass
            );
            feed = pass.kept;
        }
        assert_eq!(report.examples_out, feed);
    }

    #[test]
    fn pipeline_identity_when_everything_is_off() {
        let ex = TripletExample::new(query("q"), doc("d1"));
        let (dataset, _store) = setup(&[("d1", 0.9)], vec![ex]);
        let (refined, report) = refine_pipeline(&dataset, &RefineConfig::default(), None).unwrap();
        assert_eq!(refined.examples, dataset.examples);
        assert!(report.passes.is_empty());
        assert_eq!(report.examples_in, report.examples_out);
    }

    /// A QA-style set with a planted near-duplicate and a wrong answer,
    /// refined with dedup + answer filter + mining.
    fn qa_pipeline_setup() -> (Dataset, EmbeddingStore, RefineConfig) {
        let mk = |text: &str, pos: &str, answer: &str| {
            let mut ex = TripletExample::new(query(text), doc(pos));
            ex.answer = Some(answer.to_string());
            ex
        };
        let e1 = mk("first question", "d1", "of d1"); // substring of "text of d1"
        let e1_twin = mk("first question rephrased", "d1", "of d1");
        let e2 = mk("second question", "d2", "of d2");
        let e3 = mk("third question", "d3", "nowhere to be found");

        let corpus: Vec<Document> = (1..=5).map(|i| doc(&format!("d{i}"))).collect();
        let mut store = EmbeddingStore::new(2).unwrap();
        for (i, id) in ["d1", "d2", "d3", "d4", "d5"].iter().enumerate() {
            store.append(*id, &at_cos(0.95 - 0.05 * i as f64)).unwrap();
        }
        store.append(e1.query.id.clone(), &at_cos(1.0)).unwrap();
        store.append(e1_twin.query.id.clone(), &at_cos(0.98)).unwrap();
        store.append(e2.query.id.clone(), &at_cos(0.3)).unwrap();
        store.append(e3.query.id.clone(), &at_cos(-0.4)).unwrap();
        let dataset = Dataset::new(
            "qa",
            task(),
            vec![e1, e1_twin, e2, e3],
            corpus,
        )
        .unwrap();
        let cfg = RefineConfig {
            dedup: DedupMode::Near { threshold: 0.95 },
            answer_filter: true,
            mine: Some(MineConfig {
                range: RankRange::new(2, 3).unwrap(),
                ..MineConfig::default()
            }),
            ..RefineConfig::default()
        };
        (dataset, store, cfg)
    }

    #[test]
    fn pipeline_reports_activity_in_exactly_the_configured_passes() {
        let (dataset, store, cfg) = qa_pipeline_setup();
        let (refined, report) = refine_pipeline(&dataset, &cfg, Some(&store)).unwrap();

        let names: Vec<&str> = report.passes.iter().map(|p| p.pass.as_str()).collect();
        assert_eq!(names, ["dedup", "answer", "mine"]);
        assert_eq!(report.passes[0].dropped, 1, "near-duplicate removed");
        assert_eq!(report.passes[1].dropped, 1, "bad answer removed");
        assert_eq!(report.passes[2].remined, 2, "survivors mined");
        assert_eq!(refined.examples.len(), 2);
        conservation_holds(&report);

        // Every mined negative's independently recomputed rank is in window.
        let teacher = TeacherView::new(&dataset, &store).unwrap();
        for ex in &refined.examples {
            assert_eq!(ex.negatives.len(), 1);
            let rank = teacher
                .ranking(&ex.query.id)
                .unwrap()
                .rank_of(&ex.negatives[0].id)
                .unwrap();
            assert!((2..=3).contains(&rank));
        }
    }

    #[test]
    fn pipeline_is_idempotent() {
        let (dataset, store, cfg) = qa_pipeline_setup();
        let (refined1, _) = refine_pipeline(&dataset, &cfg, Some(&store)).unwrap();
        let (refined2, report2) = refine_pipeline(&refined1, &cfg, Some(&store)).unwrap();
        assert_eq!(refined2.examples, refined1.examples);
        for pass in &report2.passes {
            assert_eq!(pass.dropped, 0, "second {} run drops nothing", pass.pass);
        }
        conservation_holds(&report2);
    }

    #[test]
    fn pipeline_surfaces_missing_embeddings() {
        let (dataset, _store, cfg) = qa_pipeline_setup();
        let empty = EmbeddingStore::new(2).unwrap();
        match refine_pipeline(&dataset, &cfg, Some(&empty)).unwrap_err() {
            RefineError::MissingEmbeddings { ids } => {
                assert!(ids.len() >= dataset.corpus.len());
                assert!(ids.contains(&"d1".to_string()));
            }
            other => panic!("expected missing embeddings, got {other}"),
        }

        match refine_pipeline(&dataset, &cfg, None).unwrap_err() {
            RefineError::Config(msg) => assert!(msg.contains("dedup") && msg.contains("mine")),
            other => panic!("expected config error, got {other}"),
        }
    }
}

//! Ranking metrics with binary relevance.
//!
//! A ranked item is relevant when it belongs to the ground-truth set. Items
//! repeated in a ranking only count once. An empty ground truth scores 0 on
//! every metric.

use std::collections::HashSet;

fn truth_set<S: AsRef<str>>(gt: &[S]) -> HashSet<&str> {
    gt.iter().map(AsRef::as_ref).collect()
}

/// Relevance of each of the first `k` ranked positions.
fn relevance<S: AsRef<str>>(ranked: &[S], gt: &HashSet<&str>, k: usize) -> Vec<bool> {
    let mut seen = HashSet::new();
    ranked
        .iter()
        .take(k)
        .map(|r| {
            let r = r.as_ref();
            seen.insert(r) && gt.contains(r)
        })
        .collect()
}

fn discount(position: usize) -> f64 {
    // position is 1-based
    1.0 / ((position + 1) as f64).log2()
}

/// `DCG@k / IDCG@k` with `rel_i ∈ {0, 1}`; IDCG fills `min(k, |gt|)` slots.
pub fn ndcg_at_k<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], gt: &[T], k: usize) -> f64 {
    let truth = truth_set(gt);
    if truth.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = relevance(ranked, &truth, k)
        .iter()
        .enumerate()
        .filter(|(_, &rel)| rel)
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=k.min(truth.len())).map(discount).sum();
    dcg / idcg
}

fn hits<S: AsRef<str>>(ranked: &[S], truth: &HashSet<&str>, k: usize) -> usize {
    let mut seen = HashSet::new();
    ranked
        .iter()
        .take(k)
        .map(AsRef::as_ref)
        .filter(|&r| seen.insert(r) && truth.contains(r))
        .count()
}

/// `|top-k ∩ gt| / k`. Short rankings are padded with misses.
pub fn precision_at_k<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], gt: &[T], k: usize) -> f64 {
    let truth = truth_set(gt);
    if truth.is_empty() || k == 0 {
        return 0.0;
    }
    hits(ranked, &truth, k) as f64 / k as f64
}

/// `|top-k ∩ gt| / |gt|`.
pub fn recall_at_k<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], gt: &[T], k: usize) -> f64 {
    let truth = truth_set(gt);
    if truth.is_empty() || k == 0 {
        return 0.0;
    }
    hits(ranked, &truth, k) as f64 / truth.len() as f64
}

/// Top-1 accuracy against the ordered ground truth, and top-1 membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Top1 {
    pub top1_acc: u8,
    pub top1_in_gt: u8,
}

pub fn top1_metrics<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], gt_top: &[T]) -> Top1 {
    let Some(first) = ranked.first().map(AsRef::as_ref) else {
        return Top1 {
            top1_acc: 0,
            top1_in_gt: 0,
        };
    };
    Top1 {
        top1_acc: u8::from(gt_top.first().is_some_and(|g| g.as_ref() == first)),
        top1_in_gt: u8::from(gt_top.iter().any(|g| g.as_ref() == first)),
    }
}

/// Average ranks (1-based); tied values share the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Spearman's rho over the items present in both lists, ranked by their
/// positions. Fewer than two shared items gives 0.
pub fn spearman_corr<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], gt_top: &[T]) -> f64 {
    let mut gt_pos = std::collections::HashMap::new();
    for (i, g) in gt_top.iter().enumerate() {
        gt_pos.entry(g.as_ref()).or_insert(i);
    }
    let mut seen = HashSet::new();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (i, r) in ranked.iter().enumerate() {
        let r = r.as_ref();
        if !seen.insert(r) {
            continue;
        }
        if let Some(&g) = gt_pos.get(r) {
            pred.push(i as f64);
            truth.push(g as f64);
        }
    }
    if pred.len() < 2 {
        return 0.0;
    }
    pearson(&average_ranks(&pred), &average_ranks(&truth))
}

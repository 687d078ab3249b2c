//! Scoring of ranked edge lists against a known graph: ROC and PPC curves.
//!
//! The candidate universe is every ordered pair `(i, j)` with `i != j`.
//! Rankings that stop short of the universe are padded with the missing pairs
//! in index order before the ROC sweep.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEdgeList {
    pub method_tag: String,
    /// `(source, target, score)`, best first.
    pub edges: Vec<(usize, usize, f64)>,
}

impl RankedEdgeList {
    pub fn new(method_tag: impl Into<String>, edges: Vec<(usize, usize, f64)>) -> Self {
        RankedEdgeList {
            method_tag: method_tag.into(),
            edges,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Rejects self pairs, pairs outside `0..n`, and duplicates.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &(s, t, _) in &self.edges {
            if s >= n || t >= n || s == t {
                return Err(Error::Data(format!(
                    "ranked pair ({s}, {t}) is outside the candidate universe of {n} nodes"
                )));
            }
            if !seen.insert((s, t)) {
                return Err(Error::Data(format!("ranked pair ({s}, {t}) appears twice")));
            }
        }
        Ok(())
    }

    /// Appends every missing pair with score `-inf`, in index order.
    pub fn completed(&self, n: usize) -> Result<RankedEdgeList> {
        self.validate(n)?;
        let present: BTreeSet<(usize, usize)> = self.edges.iter().map(|e| (e.0, e.1)).collect();
        let mut edges = self.edges.clone();
        for s in 0..n {
            for t in 0..n {
                if s != t && !present.contains(&(s, t)) {
                    edges.push((s, t, f64::NEG_INFINITY));
                }
            }
        }
        Ok(RankedEdgeList::new(self.method_tag.clone(), edges))
    }

    /// Graph made of the first `k` ranked pairs.
    pub fn top_k(&self, n: usize, k: usize) -> Result<DirectedGraph> {
        self.validate(n)?;
        DirectedGraph::from_edges(n, self.edges.iter().take(k).map(|e| (e.0, e.1)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# method={}\nsrc,tgt,score\n", self.method_tag);
        for (s, t, v) in &self.edges {
            writeln!(out, "{s},{t},{v}").unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<RankedEdgeList> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tag = String::from("unknown");
        let mut edges = Vec::new();
        let mut header_seen = false;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("method=") {
                    tag = v.to_string();
                }
                continue;
            }
            if !header_seen {
                if line != "src,tgt,score" {
                    return Err(Error::format(
                        path,
                        lineno,
                        "expected header `src,tgt,score`",
                    ));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::format(path, lineno, "expected 3 fields"));
            }
            let s = f[0]
                .parse()
                .map_err(|_| Error::format(path, lineno, "bad source index"))?;
            let t = f[1]
                .parse()
                .map_err(|_| Error::format(path, lineno, "bad target index"))?;
            let v: f64 = f[2]
                .parse()
                .map_err(|_| Error::format(path, lineno, "bad score"))?;
            edges.push((s, t, v));
        }
        if !header_seen {
            return Err(Error::format(path, 1, "missing header `src,tgt,score`"));
        }
        Ok(RankedEdgeList::new(tag, edges))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn universe(n: usize) -> usize {
    n * n.saturating_sub(1)
}

pub fn confusion_at_k(
    ranked: &RankedEdgeList,
    truth: &DirectedGraph,
    k: usize,
) -> Result<Confusion> {
    let n = truth.n_nodes();
    ranked.validate(n)?;
    if k > ranked.len() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the ranking length {}",
            ranked.len()
        )));
    }
    let tp = ranked.edges[..k]
        .iter()
        .filter(|e| truth.contains(e.0, e.1))
        .count();
    let fp = k - tp;
    let fn_ = truth.n_edges() - tp;
    Ok(Confusion {
        tp,
        fp,
        fn_,
        tn: universe(n) - k - fn_,
    })
}

/// True-positive counts after each prefix `0..=len`.
fn cumulative_tp(ranked: &RankedEdgeList, truth: &DirectedGraph) -> Vec<usize> {
    let mut out = Vec::with_capacity(ranked.len() + 1);
    out.push(0);
    let mut tp = 0;
    for e in &ranked.edges {
        tp += truth.contains(e.0, e.1) as usize;
        out.push(tp);
    }
    out
}

/// `(k / universe, (TP - FP) / k)` for `k = 1..=len`.
pub fn ppc_curve(ranked: &RankedEdgeList, truth: &DirectedGraph) -> Result<Vec<(f64, f64)>> {
    let n = truth.n_nodes();
    ranked.validate(n)?;
    let u = universe(n) as f64;
    let tp = cumulative_tp(ranked, truth);
    Ok((1..=ranked.len())
        .map(|k| {
            let fp = k - tp[k];
            (k as f64 / u, (tp[k] as f64 - fp as f64) / k as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    /// `(fpr, tpr)` for `k = 0..=universe`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

pub fn roc_curve(ranked: &RankedEdgeList, truth: &DirectedGraph) -> Result<Roc> {
    let n = truth.n_nodes();
    let full = ranked.completed(n)?;
    let pos = truth.n_edges();
    let neg = universe(n) - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(format!(
            "true graph has {pos} of {} possible edges: ROC rates are undefined",
            universe(n)
        )));
    }
    let tp = cumulative_tp(&full, truth);
    let points: Vec<(f64, f64)> = tp
        .iter()
        .enumerate()
        .map(|(k, &t)| ((k - t) as f64 / neg as f64, t as f64 / pos as f64))
        .collect();
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum();
    Ok(Roc { points, auc })
}

/// Reciprocal pairs of `truth` with both directions present in `estimated`,
/// and the number of reciprocal pairs in `truth`.
pub fn bidirectional_recovery(
    estimated: &DirectedGraph,
    truth: &DirectedGraph,
) -> Result<(usize, usize)> {
    if estimated.n_nodes() != truth.n_nodes() {
        return Err(Error::Data(format!(
            "estimated graph has {} nodes, truth has {}",
            estimated.n_nodes(),
            truth.n_nodes()
        )));
    }
    let mut recovered = 0;
    let mut total = 0;
    for (s, t) in truth.edges() {
        if s < t && truth.contains(t, s) {
            total += 1;
            if estimated.contains(s, t) && estimated.contains(t, s) {
                recovered += 1;
            }
        }
    }
    Ok((recovered, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub n_nodes: usize,
    pub n_true_edges: usize,
    pub auc: f64,
    pub max_ppc: f64,
    /// Consecutive prefix lengths, from the first one reaching `max_ppc`,
    /// over which the curve stays at `max_ppc`.
    pub max_ppc_plateau: usize,
    /// Reciprocal pairs recovered by the top-|truth| prefix of the ranking.
    pub bidirectional_recovered: usize,
    pub bidirectional_total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurves {
    pub method: String,
    pub universe: usize,
    pub tp: Vec<usize>,
    pub roc: Vec<(f64, f64)>,
    /// `(fraction, ppc)` for `k = 1..=universe`.
    pub ppc: Vec<(f64, f64)>,
    pub auc: f64,
}

impl EvalCurves {
    /// `k,fraction,tp,fp,tpr,fpr,ppc` for `k = 0..=universe`; ppc is NaN at `k = 0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,fraction,tp,fp,tpr,fpr,ppc\n");
        for k in 0..=self.universe {
            let (fpr, tpr) = self.roc[k];
            let ppc = if k == 0 { f64::NAN } else { self.ppc[k - 1].1 };
            writeln!(
                out,
                "{k},{},{},{},{tpr},{fpr},{ppc}",
                k as f64 / self.universe as f64,
                self.tp[k],
                k - self.tp[k]
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// ROC and PPC over the completed ranking.
pub fn evaluate(
    ranked: &RankedEdgeList,
    truth: &DirectedGraph,
) -> Result<(EvalCurves, EvalSummary)> {
    let n = truth.n_nodes();
    let full = ranked.completed(n)?;
    let roc = roc_curve(&full, truth)?;
    let ppc = ppc_curve(&full, truth)?;
    let tp = cumulative_tp(&full, truth);

    let max_ppc = ppc.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let plateau = ppc
        .iter()
        .skip_while(|p| p.1 != max_ppc)
        .take_while(|p| p.1 == max_ppc)
        .count();
    let estimate = full.top_k(n, truth.n_edges())?;
    let (rec, total) = bidirectional_recovery(&estimate, truth)?;
    let curves = EvalCurves {
        method: ranked.method_tag.clone(),
        universe: universe(n),
        tp,
        roc: roc.points,
        ppc,
        auc: roc.auc,
    };
    let summary = EvalSummary {
        method: ranked.method_tag.clone(),
        n_nodes: n,
        n_true_edges: truth.n_edges(),
        auc: roc.auc,
        max_ppc,
        max_ppc_plateau: plateau,
        bidirectional_recovered: rec,
        bidirectional_total: total,
    };
    Ok((curves, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ranked(pairs: &[(usize, usize)]) -> RankedEdgeList {
        let k = pairs.len() as f64;
        RankedEdgeList::new(
            "t",
            pairs
                .iter()
                .enumerate()
                .map(|(r, &(s, t))| (s, t, k - r as f64))
                .collect(),
        )
    }

    fn all_pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
            .collect()
    }

    #[test]
    fn confusion_hand_counts() {
        let truth = DirectedGraph::from_edges(4, [(0, 1)]).unwrap();
        let r = ranked(&[(1, 0), (0, 1)]);
        let c0 = confusion_at_k(&r, &truth, 0).unwrap();
        assert_eq!((c0.tp, c0.fp, c0.fn_, c0.tn), (0, 0, 1, 11));
        let c1 = confusion_at_k(&r, &truth, 1).unwrap();
        assert_eq!((c1.tp, c1.fp, c1.fn_, c1.tn), (0, 1, 1, 10));
        let c2 = confusion_at_k(&r, &truth, 2).unwrap();
        assert_eq!((c2.tp, c2.fp), (1, 1));
        assert!(confusion_at_k(&r, &truth, 3).is_err());
    }

    #[test]
    fn foreign_pairs_rejected() {
        let truth = DirectedGraph::from_edges(3, [(0, 1)]).unwrap();
        for bad in [vec![(0, 0)], vec![(0, 3)], vec![(0, 1), (0, 1)]] {
            assert!(matches!(
                confusion_at_k(&ranked(&bad), &truth, 0),
                Err(Error::Data(_))
            ));
        }
    }

    #[test]
    fn perfect_and_inverted_rankings() {
        let truth = DirectedGraph::from_edges(4, [(0, 1), (2, 3), (3, 1)]).unwrap();
        let mut order: Vec<_> = truth.edges().collect();
        let rest: Vec<_> = all_pairs(4)
            .into_iter()
            .filter(|p| !truth.contains(p.0, p.1))
            .collect();
        order.extend(&rest);
        let roc = roc_curve(&ranked(&order), &truth).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
        order.reverse();
        assert_eq!(roc_curve(&ranked(&order), &truth).unwrap().auc, 0.0);

        let ppc = ppc_curve(&ranked(&truth.edges().collect::<Vec<_>>()), &truth).unwrap();
        assert!(ppc.iter().all(|p| p.1 == 1.0));
    }

    #[test]
    fn ppc_zero_when_balanced() {
        let truth = DirectedGraph::from_edges(3, [(0, 1)]).unwrap();
        let ppc = ppc_curve(&ranked(&[(0, 2), (0, 1)]), &truth).unwrap();
        assert_eq!(ppc, vec![(1.0 / 6.0, -1.0), (2.0 / 6.0, 0.0)]);
    }

    #[test]
    fn degenerate_truth() {
        let r = ranked(&[(0, 1)]);
        assert!(matches!(
            roc_curve(&r, &DirectedGraph::empty(3)),
            Err(Error::Degenerate(_))
        ));
        let full = DirectedGraph::from_edges(3, all_pairs(3)).unwrap();
        assert!(matches!(roc_curve(&r, &full), Err(Error::Degenerate(_))));
    }

    #[test]
    fn short_ranking_padded_in_index_order() {
        let r = ranked(&[(2, 1)]).completed(3).unwrap();
        let order: Vec<_> = r.edges.iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(order, vec![(2, 1), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0)]);
        assert!(r.edges[1].2 == f64::NEG_INFINITY);
    }

    #[test]
    fn bidirectional_examples() {
        let truth = DirectedGraph::from_edges(3, [(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(bidirectional_recovery(&truth, &truth).unwrap(), (1, 1));
        assert_eq!(
            bidirectional_recovery(&DirectedGraph::empty(3), &truth).unwrap(),
            (0, 1)
        );
        let one_way = DirectedGraph::from_edges(3, [(0, 1)]).unwrap();
        assert_eq!(bidirectional_recovery(&one_way, &truth).unwrap(), (0, 1));
        assert!(bidirectional_recovery(&DirectedGraph::empty(4), &truth).is_err());
    }

    #[test]
    fn curves_csv_layout_and_summary() {
        let truth = DirectedGraph::from_edges(3, [(0, 1), (1, 0)]).unwrap();
        let (curves, summary) = evaluate(&ranked(&[(0, 1), (1, 0)]), &truth).unwrap();
        let csv = curves.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,fraction,tp,fp,tpr,fpr,ppc");
        assert_eq!(lines[1], "0,0,0,0,0,0,NaN");
        assert_eq!(lines[2], format!("1,{},1,0,0.5,0,1", 1.0 / 6.0));
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[7], "6,1,2,4,1,1,-0.3333333333333333");
        assert_eq!(summary.auc, 1.0);
        assert_eq!(summary.max_ppc, 1.0);
        assert_eq!(summary.max_ppc_plateau, 2);
        assert_eq!(
            (summary.bidirectional_recovered, summary.bidirectional_total),
            (1, 1)
        );
    }

    #[test]
    fn ranked_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let r = RankedEdgeList::new("lasso_all", vec![(0, 1, 0.25), (2, 0, -1.5e-7)]);
        r.write_csv(&p).unwrap();
        assert_eq!(RankedEdgeList::read_csv(&p).unwrap(), r);
        fs::write(&p, "src,tgt,score\n0,1,0.5\n1,x,0.2\n").unwrap();
        match RankedEdgeList::read_csv(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shuffled_rankings_average_half() {
        let truth = DirectedGraph::generate_random(20, 0.3, 1).unwrap();
        let mut pairs = all_pairs(20);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sum = 0.0;
        for _ in 0..200 {
            pairs.shuffle(&mut rng);
            sum += roc_curve(&ranked(&pairs), &truth).unwrap().auc;
        }
        assert!((sum / 200.0 - 0.5).abs() < 0.03);
    }

    proptest! {
        #[test]
        fn invariants_on_random_instances(seed in 0u64..500, n in 3usize..8, p in 0.1f64..0.7) {
            let truth = DirectedGraph::generate_random(n, p, seed).unwrap();
            prop_assume!(truth.n_edges() > 0 && truth.n_edges() < n * (n - 1));
            let mut pairs = all_pairs(n);
            pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
            let r = ranked(&pairs);
            for k in 0..=pairs.len() {
                let c = confusion_at_k(&r, &truth, k).unwrap();
                prop_assert_eq!(c.tp + c.fp + c.fn_ + c.tn, n * (n - 1));
            }
            for (k, &(_, v)) in ppc_curve(&r, &truth).unwrap().iter().enumerate() {
                let c = confusion_at_k(&r, &truth, k + 1).unwrap();
                let precision = c.tp as f64 / (k + 1) as f64;
                prop_assert!((v - (2.0 * precision - 1.0)).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&v));
            }
            let roc = roc_curve(&r, &truth).unwrap();
            prop_assert!(roc.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            prop_assert!((0.0..=1.0).contains(&roc.auc));
        }
    }
}

//! Cross-correlation baseline on binned spike trains.
//!
//! `CC(i, j, tau) = sum_m x[m][i] * x[m + tau][j] / sqrt(N_i * N_j)` for
//! `tau = 1..=max_lag`. Only positive lags are scanned, so a peak for `(i, j)`
//! means `i` leads `j`. The sum is a plain coincidence count, which makes a
//! train correlated with a shifted copy of itself peak at exactly 1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::RankedEdgeList;
use crate::events::BinaryProcessMatrix;
use crate::graph::DirectedGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub max_lag: usize,
    /// source x target; zero on the diagonal.
    pub peak_value: Array2<f64>,
    /// Lag in bins of the peak. Ties go to the smaller lag, so pairs without
    /// coincidences report lag 1.
    pub peak_lag: Array2<usize>,
    /// Neurons whose train is empty; every pair touching one has peak 0.
    pub empty: Vec<bool>,
}

impl CorrelationResult {
    pub fn n_neurons(&self) -> usize {
        self.empty.len()
    }

    pub fn is_flagged(&self, i: usize, j: usize) -> bool {
        self.empty[i] || self.empty[j]
    }

    pub fn to_csv(&self) -> String {
        let n = self.n_neurons();
        let mut out = String::from("src,tgt,peak,lag\n");
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    writeln!(
                        out,
                        "{i},{j},{},{}",
                        self.peak_value[[i, j]],
                        self.peak_lag[[i, j]]
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// All ordered pairs by descending peak, then smaller lag, then index.
    pub fn rank_edges(&self) -> RankedEdgeList {
        let n = self.n_neurons();
        let mut entries: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.peak_value[[i, j]]))
            .collect();
        entries.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then(self.peak_lag[[a.0, a.1]].cmp(&self.peak_lag[[b.0, b.1]]))
                .then((a.0, a.1).cmp(&(b.0, b.1)))
        });
        RankedEdgeList::new("xcorr", entries)
    }
}

/// Raw coincidence count `sum_m a[m] * b[m + tau]` for any signed lag.
pub fn coincidences(a: ArrayView1<u8>, b: ArrayView1<u8>, tau: isize) -> usize {
    let len = a.len().min(b.len()) as isize;
    (0..len)
        .filter(|&m| {
            let k = m + tau;
            (0..len).contains(&k) && a[m as usize] == 1 && b[k as usize] == 1
        })
        .count()
}

pub fn cross_correlate(x: &BinaryProcessMatrix, max_lag: usize) -> Result<CorrelationResult> {
    let bins = x.n_bins();
    if max_lag == 0 || max_lag >= bins {
        return Err(Error::Parameter(format!(
            "max_lag = {max_lag} must lie in 1..{bins} (number of bins)"
        )));
    }
    let n = x.n_neurons();
    let trains: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            x.values
                .column(i)
                .iter()
                .enumerate()
                .filter_map(|(m, &v)| (v == 1).then_some(m))
                .collect()
        })
        .collect();
    let rows: Vec<(Vec<f64>, Vec<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut peaks = vec![0.0; n];
            let mut lags = vec![1; n];
            for j in 0..n {
                if i == j || trains[i].is_empty() || trains[j].is_empty() {
                    continue;
                }
                let target = x.values.column(j);
                let norm = ((trains[i].len() * trains[j].len()) as f64).sqrt();
                for tau in 1..=max_lag {
                    let count = trains[i]
                        .iter()
                        .filter(|&&m| m + tau < bins && target[m + tau] == 1)
                        .count();
                    let cc = count as f64 / norm;
                    if cc > peaks[j] {
                        peaks[j] = cc;
                        lags[j] = tau;
                    }
                }
            }
            (peaks, lags)
        })
        .collect();
    let mut peak_value = Array2::zeros((n, n));
    let mut peak_lag = Array2::from_elem((n, n), 1usize);
    for (i, (p, l)) in rows.into_iter().enumerate() {
        for j in 0..n {
            peak_value[[i, j]] = p[j];
            peak_lag[[i, j]] = l[j];
        }
    }
    Ok(CorrelationResult {
        max_lag,
        peak_value,
        peak_lag,
        empty: trains.iter().map(Vec::is_empty).collect(),
    })
}

/// Edge `(i, j)` iff its peak exceeds `threshold`.
pub fn topology_from_threshold(cr: &CorrelationResult, threshold: f64) -> Result<DirectedGraph> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Parameter(format!(
            "threshold = {threshold} must be >= 0"
        )));
    }
    let n = cr.n_neurons();
    let mut g = DirectedGraph::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && cr.peak_value[[i, j]] > threshold {
                g.insert(i, j)?;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::ProcessKind;
    use proptest::prelude::*;

    fn spikes(values: Array2<u8>) -> BinaryProcessMatrix {
        BinaryProcessMatrix {
            delta: 1.0,
            values,
            kind: ProcessKind::Spike,
        }
    }

    fn from_columns(bins: usize, cols: &[&[usize]]) -> BinaryProcessMatrix {
        let mut v = Array2::zeros((bins, cols.len()));
        for (i, c) in cols.iter().enumerate() {
            for &m in *c {
                v[[m, i]] = 1;
            }
        }
        spikes(v)
    }

    #[test]
    fn shifted_copy_peaks_at_one() {
        let a = [2, 9, 15, 30, 41];
        let b: Vec<usize> = a.iter().map(|m| m + 3).collect();
        let x = from_columns(60, &[&a, &b]);
        let cr = cross_correlate(&x, 10).unwrap();
        assert_eq!(cr.peak_value[[0, 1]], 1.0);
        assert_eq!(cr.peak_lag[[0, 1]], 3);
        // the reverse direction only sees negative lags of the shift
        assert!(cr.peak_value[[1, 0]] < 1.0);
    }

    #[test]
    fn no_coincidences_peak_zero() {
        let x = from_columns(50, &[&[0, 20], &[40, 45]]);
        let cr = cross_correlate(&x, 5).unwrap();
        assert_eq!(cr.peak_value[[0, 1]], 0.0);
        assert_eq!(cr.peak_value[[1, 0]], 0.0);
    }

    #[test]
    fn single_spikes_at_lag_two() {
        let x = from_columns(20, &[&[4], &[6]]);
        let cr = cross_correlate(&x, 5).unwrap();
        assert_eq!(cr.peak_value[[0, 1]], 1.0);
        assert_eq!(cr.peak_lag[[0, 1]], 2);
    }

    #[test]
    fn empty_trains_are_flagged() {
        let x = from_columns(20, &[&[4], &[], &[5]]);
        let cr = cross_correlate(&x, 5).unwrap();
        assert!(cr.is_flagged(0, 1) && cr.is_flagged(1, 2));
        assert!(!cr.is_flagged(0, 2));
        assert_eq!(cr.peak_value[[1, 0]], 0.0);
        assert_eq!(cr.peak_value[[0, 2]], 1.0);
    }

    #[test]
    fn lag_range_checked() {
        let x = from_columns(10, &[&[1], &[2]]);
        assert!(matches!(cross_correlate(&x, 10), Err(Error::Parameter(_))));
        assert!(matches!(cross_correlate(&x, 0), Err(Error::Parameter(_))));
        assert!(cross_correlate(&x, 9).is_ok());
    }

    #[test]
    fn thresholding() {
        let mut cr = cross_correlate(&from_columns(10, &[&[1], &[2]]), 3).unwrap();
        cr.peak_value[[0, 1]] = 0.8;
        cr.peak_value[[1, 0]] = 0.3;
        let g = topology_from_threshold(&cr, 0.5).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(topology_from_threshold(&cr, 0.0).unwrap().n_edges(), 2);
        assert_eq!(topology_from_threshold(&cr, 0.9).unwrap().n_edges(), 0);
        assert!(topology_from_threshold(&cr, -1.0).is_err());
    }

    #[test]
    fn ranking_order_and_csv() {
        // three pairs tie on peak 1 at lags 3, 1 and 2
        let x = from_columns(30, &[&[5], &[8], &[6]]);
        let cr = cross_correlate(&x, 5).unwrap();
        let r = cr.rank_edges();
        let order: Vec<_> = r.edges.iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(&order[..3], &[(0, 2), (2, 1), (0, 1)]);
        assert_eq!(order.len(), 6);
        let csv = cr.to_csv();
        assert!(csv.starts_with("src,tgt,peak,lag\n0,1,1,3\n0,2,1,1\n"));
    }

    fn train(bins: usize) -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(prop_oneof![4 => Just(0u8), 1 => Just(1u8)], bins)
    }

    proptest! {
        #[test]
        fn swap_reverses_lag(a in train(60), b in train(60), tau in -20isize..20) {
            let (a, b) = (ndarray::Array1::from(a), ndarray::Array1::from(b));
            prop_assert_eq!(coincidences(a.view(), b.view(), tau), coincidences(b.view(), a.view(), -tau));
        }

        #[test]
        fn bounded_and_padding_invariant(a in train(50), b in train(50), pad in 0usize..20) {
            let mut v = Array2::zeros((50 + pad, 2));
            for m in 0..50 {
                v[[m, 0]] = a[m];
                v[[m, 1]] = b[m];
            }
            let short = spikes(v.slice(ndarray::s![..50, ..]).to_owned());
            let long = spikes(v);
            let r1 = cross_correlate(&short, 8).unwrap();
            let r2 = cross_correlate(&long, 8).unwrap();
            prop_assert_eq!(&r1, &r2);
            let (na, nb) = (a.iter().filter(|&&v| v == 1).count(), b.iter().filter(|&&v| v == 1).count());
            if na > 0 && nb > 0 {
                let bound = na.min(nb) as f64 / ((na * nb) as f64).sqrt();
                prop_assert!(r1.peak_value[[0, 1]] <= bound + 1e-15);
                prop_assert!(r1.peak_value[[0, 1]] >= 0.0);
            }
        }
    }
}

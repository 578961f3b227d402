//! Regularization-strength sweeps and Pareto fronts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostLut, RegMode};
use crate::data::DataSplits;
use crate::error::{Error, Result};
use crate::gates::PrecisionAssignment;
use crate::model::Model;
use crate::train::{run_search, NoObserver, SearchResult, TrainConfig};

/// Summary of one completed search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRecord {
    pub lambda: f64,
    pub score: f64,
    pub size_bits: u64,
    pub energy_uj: Option<f64>,
    pub act_bits: Vec<u8>,
    /// Per layer, `(bits, channels)` in ascending bit order.
    pub w_hist: Vec<Vec<(u8, usize)>>,
}

impl ParetoRecord {
    pub fn from_result(r: &SearchResult) -> Self {
        Self::from_assignment(r.lambda, r.score, r.size_bits, r.energy_uj, &r.assignment)
    }

    pub fn from_assignment(
        lambda: f64,
        score: f64,
        size_bits: u64,
        energy_uj: Option<f64>,
        a: &PrecisionAssignment,
    ) -> Self {
        Self {
            lambda,
            score,
            size_bits,
            energy_uj,
            act_bits: a.layers.iter().map(|l| l.act_bits).collect(),
            w_hist: a.layers.iter().map(|l| l.histogram()).collect(),
        }
    }

    /// Cost under a regularizer mode; energy falls back to infinity when unknown.
    pub fn cost(&self, mode: RegMode) -> f64 {
        match mode {
            RegMode::Size => self.size_bits as f64,
            RegMode::Energy => self.energy_uj.unwrap_or(f64::INFINITY),
        }
    }

    /// `8;8;8` style string.
    pub fn act_bits_field(&self) -> String {
        self.act_bits.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";")
    }

    /// `2:3|4:5|8:8;8:16` style string: layers separated by `;`.
    pub fn hist_field(&self) -> String {
        self.w_hist
            .iter()
            .map(|h| h.iter().map(|(b, n)| format!("{b}:{n}")).collect::<Vec<_>>().join("|"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse_act_bits(s: &str) -> Result<Vec<u8>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|b| b.trim().parse().map_err(|_| Error::Format(format!("bad activation bits '{b}'"))))
            .collect()
    }

    pub fn parse_hist(s: &str) -> Result<Vec<Vec<(u8, usize)>>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|layer| {
                layer
                    .split('|')
                    .map(|g| {
                        let (b, n) = g
                            .split_once(':')
                            .ok_or_else(|| Error::Format(format!("bad histogram group '{g}'")))?;
                        let bad = |_| Error::Format(format!("bad histogram group '{g}'"));
                        Ok((b.trim().parse().map_err(bad)?, n.trim().parse().map_err(bad)?))
                    })
                    .collect()
            })
            .collect()
    }
}

/// `true` when `a` is at least as good as `b` on both axes and better on one.
pub fn dominates(a: &ParetoRecord, b: &ParetoRecord, mode: RegMode) -> bool {
    let (ca, cb) = (a.cost(mode), b.cost(mode));
    a.score >= b.score && ca <= cb && (a.score > b.score || ca < cb)
}

/// Non-dominated records (maximize score, minimize cost), in input order.
pub fn pareto_front(records: &[ParetoRecord], mode: RegMode) -> Vec<ParetoRecord> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    // Sort by cost ascending, score descending; a record survives iff its
    // score beats every cheaper one.
    idx.sort_by(|&a, &b| {
        records[a]
            .cost(mode)
            .total_cmp(&records[b].cost(mode))
            .then(records[b].score.total_cmp(&records[a].score))
    });
    let mut keep = vec![false; records.len()];
    let mut best: Option<(f64, f64)> = None;
    for &i in &idx {
        let (c, s) = (records[i].cost(mode), records[i].score);
        let survives = match best {
            None => true,
            Some((bc, bs)) => s > bs || (s == bs && c == bc),
        };
        if survives {
            keep[i] = true;
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((c, s));
            }
        }
    }
    records
        .iter()
        .zip(keep)
        .filter(|&(_r, k)| k).map(|(r, _k)| r.clone())
        .collect()
}

/// Runs one search per `lambda` from the same warmed-up model. With
/// `jobs > 1` the searches run concurrently; results keep the `lambdas` order.
pub fn sweep(
    warm: &Model,
    splits: &DataSplits,
    base: &TrainConfig,
    lambdas: &[f64],
    lut: Option<&CostLut>,
    jobs: usize,
) -> Result<Vec<SearchResult>> {
    let one = |&lambda: &f64| {
        let cfg = TrainConfig {
            lambda,
            ..base.clone()
        };
        run_search(warm, splits, &cfg, lut, &mut NoObserver)
    };
    if jobs <= 1 {
        return lambdas.iter().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| lambdas.par_iter().map(one).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(score: f64, size: u64) -> ParetoRecord {
        ParetoRecord {
            lambda: 0.0,
            score,
            size_bits: size,
            energy_uj: None,
            act_bits: vec![8],
            w_hist: vec![vec![(8, 1)]],
        }
    }

    #[test]
    fn dominated_point_removed() {
        let f = pareto_front(&[rec(0.9, 10), rec(0.8, 12)], RegMode::Size);
        assert_eq!(f, vec![rec(0.9, 10)]);
        assert_eq!(pareto_front(&[rec(0.5, 3)], RegMode::Size), vec![rec(0.5, 3)]);
    }

    #[test]
    fn tradeoff_points_survive() {
        let recs = [rec(0.9, 20), rec(0.8, 10), rec(0.95, 30), rec(0.85, 25)];
        let f = pareto_front(&recs, RegMode::Size);
        assert_eq!(f, vec![rec(0.9, 20), rec(0.8, 10), rec(0.95, 30)]);
    }

    #[test]
    fn fields_round_trip() {
        let r = ParetoRecord {
            act_bits: vec![8, 4, 8],
            w_hist: vec![vec![(2, 3), (4, 5), (8, 8)], vec![(8, 16)], vec![(2, 1)]],
            ..rec(0.5, 1)
        };
        assert_eq!(r.act_bits_field(), "8;4;8");
        assert_eq!(r.hist_field(), "2:3|4:5|8:8;8:16;2:1");
        assert_eq!(ParetoRecord::parse_hist(&r.hist_field()).unwrap(), r.w_hist);
        assert_eq!(ParetoRecord::parse_act_bits(&r.act_bits_field()).unwrap(), r.act_bits);
        assert!(ParetoRecord::parse_hist("2-3").is_err());
    }
}

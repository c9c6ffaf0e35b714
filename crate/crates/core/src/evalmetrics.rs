//! Accuracy and calibration metrics over prediction records.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bayes::PredictiveDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: usize,
    pub truth: f64,
    pub mean: f64,
    pub epistemic_var: f64,
    pub aleatoric_var: f64,
    pub total_var: f64,
}

impl PredictionRecord {
    pub fn new(id: usize, truth: f64, dist: &PredictiveDistribution) -> Self {
        Self {
            id,
            truth,
            mean: dist.mean,
            epistemic_var: dist.epistemic_var,
            aleatoric_var: dist.aleatoric_var,
            total_var: dist.total_var,
        }
    }

    pub fn abs_error(&self) -> f64 {
        (self.truth - self.mean).abs()
    }

    pub fn variance(&self, ranking: Ranking) -> f64 {
        match ranking {
            Ranking::Total => self.total_var,
            Ranking::Epistemic => self.epistemic_var,
            Ranking::Aleatoric => self.aleatoric_var,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    Total,
    Epistemic,
    Aleatoric,
}

impl Ranking {
    pub const ALL: [Ranking; 3] = [Ranking::Total, Ranking::Epistemic, Ranking::Aleatoric];

    pub fn name(self) -> &'static str {
        match self {
            Ranking::Total => "total",
            Ranking::Epistemic => "epistemic",
            Ranking::Aleatoric => "aleatoric",
        }
    }
}

pub const DEFAULT_PERCENTILES: [f64; 10] = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceErrorCurve {
    pub ranking: Ranking,
    pub percentiles: Vec<f64>,
    pub rmse_at: Vec<f64>,
}

impl ConfidenceErrorCurve {
    /// RMSE at percentile `q`, if it is on the grid.
    pub fn at(&self, q: f64) -> Option<f64> {
        self.percentiles.iter().position(|p| *p == q).map(|i| self.rmse_at[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("percentile,rmse\n");
        for (q, r) in self.percentiles.iter().zip(&self.rmse_at) {
            out.push_str(&format!("{q},{r}\n"));
        }
        out
    }
}

fn rmse_of<'a>(records: impl Iterator<Item = &'a PredictionRecord>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in records {
        sum += (r.truth - r.mean).powi(2);
        n += 1;
    }
    (sum / n as f64).sqrt()
}

pub fn rmse(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(rmse_of(records.iter()))
}

pub fn r2(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.truth).sum::<f64>() / n;
    let ss_tot: f64 = records.iter().map(|r| (r.truth - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateInput("all truths are equal"));
    }
    let ss_res: f64 = records.iter().map(|r| (r.truth - r.mean).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Records sorted by ascending variance under `ranking`, ties by id.
pub fn confidence_order(records: &[PredictionRecord], ranking: Ranking) -> Vec<&PredictionRecord> {
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.variance(ranking)
            .total_cmp(&b.variance(ranking))
            .then(a.id.cmp(&b.id))
    });
    sorted
}

/// RMSE over the `⌈q%·n⌉` most confident records for each `q`.
pub fn confidence_error_curve(
    records: &[PredictionRecord],
    percentiles: &[f64],
    ranking: Ranking,
) -> Result<ConfidenceErrorCurve> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if percentiles.windows(2).any(|w| w[0] > w[1])
        || percentiles.iter().any(|q| !(*q > 0.0 && *q <= 100.0))
    {
        return Err(Error::InvalidConfig("percentiles must be ascending within (0, 100]".into()));
    }
    let sorted = confidence_order(records, ranking);
    let n = sorted.len();
    let rmse_at = percentiles
        .iter()
        .map(|q| {
            let k = if *q == 100.0 {
                n
            } else {
                ((q / 100.0 * n as f64).ceil() as usize).clamp(1, n)
            };
            if k == n {
                // same accumulation order as `rmse`
                rmse_of(records.iter())
            } else {
                rmse_of(sorted[..k].iter().copied())
            }
        })
        .collect();
    Ok(ConfidenceErrorCurve {
        ranking,
        percentiles: percentiles.to_vec(),
        rmse_at,
    })
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::DegenerateInput("spearman needs at least 3 points"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::DegenerateInput("NaN in spearman input"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .map_err(|_| Error::DegenerateInput("zero rank variance"))
}

/// Spearman between the ranking variance and the absolute error.
pub fn variance_error_spearman(records: &[PredictionRecord], ranking: Ranking) -> Result<f64> {
    let var: Vec<f64> = records.iter().map(|r| r.variance(ranking)).collect();
    let err: Vec<f64> = records.iter().map(PredictionRecord::abs_error).collect();
    spearman(&var, &err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]` of `values`.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::EmptyRecords);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub spearman_total: Option<f64>,
    pub spearman_epistemic: Option<f64>,
    pub spearman_aleatoric: Option<f64>,
    pub mean_total_var: f64,
}

pub fn summarize(records: &[PredictionRecord]) -> Result<MetricsSummary> {
    let n = records.len();
    Ok(MetricsSummary {
        n,
        rmse: rmse(records)?,
        r2: r2(records).ok(),
        spearman_total: variance_error_spearman(records, Ranking::Total).ok(),
        spearman_epistemic: variance_error_spearman(records, Ranking::Epistemic).ok(),
        spearman_aleatoric: variance_error_spearman(records, Ranking::Aleatoric).ok(),
        mean_total_var: records.iter().map(|r| r.total_var).sum::<f64>() / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn rec(id: usize, truth: f64, mean: f64, var: f64) -> PredictionRecord {
        PredictionRecord {
            id,
            truth,
            mean,
            epistemic_var: var,
            aleatoric_var: 0.0,
            total_var: var,
        }
    }

    #[test]
    fn curve_matches_hand_values() {
        let records: Vec<_> = (0..4).map(|i| rec(i, i as f64, 0.0, i as f64)).collect();
        let curve = confidence_error_curve(&records, &[25.0, 50.0, 75.0, 100.0], Ranking::Total).unwrap();
        let expected = [0.0, (0.5f64).sqrt(), (5.0f64 / 3.0).sqrt(), (14.0f64 / 4.0).sqrt()];
        assert_eq!(curve.rmse_at, expected);
    }

    #[test]
    fn equal_variances_fall_back_to_id_order() {
        let records = vec![rec(2, 5.0, 0.0, 1.0), rec(0, 1.0, 0.0, 1.0), rec(1, 3.0, 0.0, 1.0)];
        let curve = confidence_error_curve(&records, &[30.0, 60.0], Ranking::Total).unwrap();
        assert_eq!(curve.rmse_at[0], 1.0);
        assert_eq!(curve.rmse_at[1], (5.0f64).sqrt());
    }

    #[test]
    fn anticorrelated_variance_gives_monotone_curve() {
        let records: Vec<_> = (0..20).map(|i| rec(19 - i, (i as f64).sqrt(), 0.0, i as f64)).collect();
        let curve = confidence_error_curve(&records, &DEFAULT_PERCENTILES, Ranking::Total).unwrap();
        assert!(curve.rmse_at.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman(&x, &neg).unwrap(), -1.0);
        assert!((spearman(&x, &[1.0, 2.0, 3.0, 5.0, 4.0]).unwrap() - 0.9).abs() < 1e-15);
        assert!(matches!(spearman(&x, &[1.0; 5]), Err(Error::DegenerateInput(_))));
        assert!(matches!(spearman(&x, &[1.0; 4]), Err(Error::LengthMismatch(5, 4))));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn rmse_and_r2_examples() {
        let perfect = vec![rec(0, 1.0, 1.0, 0.0), rec(1, 3.0, 3.0, 0.0)];
        assert_eq!(rmse(&perfect).unwrap(), 0.0);
        assert_eq!(r2(&perfect).unwrap(), 1.0);
        let flat = vec![rec(0, 0.0, 1.0, 0.0), rec(1, 2.0, 1.0, 0.0)];
        assert_eq!(rmse(&flat).unwrap(), 1.0);
        assert_eq!(r2(&flat).unwrap(), 0.0);
        let same = vec![rec(0, 2.0, 1.0, 0.0), rec(1, 2.0, 1.0, 0.0)];
        assert!(matches!(r2(&same), Err(Error::DegenerateInput(_))));
        assert!(matches!(rmse(&[]), Err(Error::EmptyRecords)));
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
    }

    fn records_strategy() -> impl Strategy<Value = Vec<PredictionRecord>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.0..3.0f64, 0.0..3.0f64), 1..40).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(id, (truth, mean, e, a))| PredictionRecord {
                    id,
                    truth,
                    mean,
                    epistemic_var: e,
                    aleatoric_var: a,
                    total_var: e + a,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn full_percentile_equals_rmse(records in records_strategy()) {
            for ranking in Ranking::ALL {
                let curve = confidence_error_curve(&records, &DEFAULT_PERCENTILES, ranking).unwrap();
                prop_assert_eq!(curve.at(100.0).unwrap(), rmse(&records).unwrap());
            }
        }

        #[test]
        fn zero_aleatoric_total_matches_epistemic(records in records_strategy()) {
            let records: Vec<_> = records
                .into_iter()
                .map(|r| PredictionRecord { aleatoric_var: 0.0, total_var: r.epistemic_var, ..r })
                .collect();
            let total = confidence_error_curve(&records, &DEFAULT_PERCENTILES, Ranking::Total).unwrap();
            let epi = confidence_error_curve(&records, &DEFAULT_PERCENTILES, Ranking::Epistemic).unwrap();
            prop_assert_eq!(total.rmse_at, epi.rmse_at);
        }

        #[test]
        fn spearman_monotone_invariant(
            pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..30)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(rho) = spearman(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                let ty: Vec<f64> = y.iter().map(|v| 3.0 * v + 1.0).collect();
                let rho2 = spearman(&tx, &ty).unwrap();
                prop_assert!((rho - rho2).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&rho));
            }
        }
    }
}

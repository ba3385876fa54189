//! A/B-testing analyses: per-instruction pairwise ordering statistics and
//! K-config ranking with tie-corrected Kendall tau over group ranks.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 elements, got {0}")]
    TooShort(usize),
    #[error("misaligned inputs: expected {expected} sequences of length {len}")]
    Misaligned { expected: usize, len: usize },
}

/// Pairwise ordering statistics between two configurations over aligned
/// per-instruction latency sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseStats {
    /// Fraction of positions where the predicted relation (a <= b) matches
    /// the ground-truth relation.
    pub match_rate: f64,
    /// Fraction where ground truth has a strictly better (smaller) than b.
    pub gt_better: f64,
    /// Fraction where max(y_a, y_b) > 0.
    pub non_zero: f64,
    pub n: usize,
}

/// Compares the predicted ordering of two configs against ground truth,
/// position by position.
pub fn pairwise_compare(
    yhat_a: &[u32],
    yhat_b: &[u32],
    y_a: &[u32],
    y_b: &[u32],
) -> Result<PairwiseStats, DownstreamError> {
    let n = yhat_a.len();
    for len in [yhat_b.len(), y_a.len(), y_b.len()] {
        if len != n {
            return Err(DownstreamError::LengthMismatch(n, len));
        }
    }
    if n == 0 {
        return Err(DownstreamError::TooShort(0));
    }
    let mut matches = 0usize;
    let mut gt_better = 0usize;
    let mut non_zero = 0usize;
    for i in 0..n {
        let pred_rel = yhat_a[i] <= yhat_b[i];
        let gt_rel = y_a[i] <= y_b[i];
        matches += usize::from(pred_rel == gt_rel);
        gt_better += usize::from(y_a[i] < y_b[i]);
        non_zero += usize::from(y_a[i].max(y_b[i]) > 0);
    }
    let nf = n as f64;
    Ok(PairwiseStats {
        match_rate: matches as f64 / nf,
        gt_better: gt_better as f64 / nf,
        non_zero: non_zero as f64 / nf,
        n,
    })
}

/// Tie-corrected Kendall tau-b:
/// (concordant - discordant) / sqrt((n0 - n1)(n0 - n2)), n0 = n(n-1)/2,
/// with n1, n2 the tied-pair counts of xs and ys. Returns 0 when either
/// sequence is entirely tied.
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> Result<f64, DownstreamError> {
    let n = xs.len();
    if ys.len() != n {
        return Err(DownstreamError::LengthMismatch(n, ys.len()));
    }
    if n < 2 {
        return Err(DownstreamError::TooShort(n));
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i].partial_cmp(&xs[j]).expect("non-finite value");
            let dy = ys[i].partial_cmp(&ys[j]).expect("non-finite value");
            match (dx, dy) {
                (std::cmp::Ordering::Equal, std::cmp::Ordering::Equal) => {
                    ties_x += 1;
                    ties_y += 1;
                }
                (std::cmp::Ordering::Equal, _) => ties_x += 1,
                (_, std::cmp::Ordering::Equal) => ties_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// Group ranks: tied values share the rank of their group (dense ranking,
/// starting at 1).
pub fn group_ranks(values: &[u32]) -> Vec<u32> {
    let mut sorted: Vec<u32> = values.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    values
        .iter()
        .map(|v| sorted.binary_search(v).unwrap() as u32 + 1)
        .collect()
}

/// Aggregated K-config ranking statistics over aligned instructions.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingStats {
    /// Mean Kendall tau-b over instructions where tau is defined.
    pub kendall_tau_mean: f64,
    /// Fraction of instructions whose full group-rank vectors match.
    pub full_match_rate: f64,
    /// Fraction whose best (lowest-latency) config matches, ties broken by
    /// canonical config order on both sides.
    pub best_match_rate: f64,
    pub n: usize,
    /// Instructions excluded from the tau mean because both rank vectors
    /// were entirely tied.
    pub n_tau_excluded: usize,
}

/// Ranks K configurations per instruction and aggregates over instructions.
/// `yhat[k][i]` and `y[k][i]` are the predicted and ground-truth latencies of
/// instruction `i` under config `k`; configs are in canonical order.
pub fn rank_configs(yhat: &[Vec<u32>], y: &[Vec<u32>]) -> Result<RankingStats, DownstreamError> {
    let k = yhat.len();
    if k < 2 || y.len() != k {
        return Err(DownstreamError::Misaligned { expected: k, len: 0 });
    }
    let n = yhat[0].len();
    for seq in yhat.iter().chain(y.iter()) {
        if seq.len() != n {
            return Err(DownstreamError::Misaligned { expected: k, len: n });
        }
    }
    if n == 0 {
        return Err(DownstreamError::TooShort(0));
    }

    let mut full = 0usize;
    let mut best = 0usize;
    let mut tau_sum = 0.0f64;
    let mut tau_count = 0usize;
    let mut excluded = 0usize;

    let mut pred = vec![0u32; k];
    let mut gt = vec![0u32; k];
    for i in 0..n {
        for c in 0..k {
            pred[c] = yhat[c][i];
            gt[c] = y[c][i];
        }
        let pred_ranks = group_ranks(&pred);
        let gt_ranks = group_ranks(&gt);
        full += usize::from(pred_ranks == gt_ranks);

        // Argmin with ties broken by canonical order = first minimum.
        let pred_best = pred.iter().enumerate().min_by_key(|&(idx, v)| (*v, idx)).unwrap().0;
        let gt_best = gt.iter().enumerate().min_by_key(|&(idx, v)| (*v, idx)).unwrap().0;
        best += usize::from(pred_best == gt_best);

        let xs: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
        let ys: Vec<f64> = gt.iter().map(|&v| v as f64).collect();
        let all_tied =
            pred.iter().all(|&v| v == pred[0]) || gt.iter().all(|&v| v == gt[0]);
        if all_tied {
            excluded += 1;
        } else {
            tau_sum += kendall_tau_b(&xs, &ys)?;
            tau_count += 1;
        }
    }

    Ok(RankingStats {
        kendall_tau_mean: if tau_count > 0 { tau_sum / tau_count as f64 } else { 0.0 },
        full_match_rate: full as f64 / n as f64,
        best_match_rate: best as f64 / n as f64,
        n,
        n_tau_excluded: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_identical_sides() {
        let y = vec![1, 2, 3];
        let s = pairwise_compare(&y, &y, &y, &y).unwrap();
        assert_eq!(s.match_rate, 1.0);
        assert_eq!(s.gt_better, 0.0);
    }

    #[test]
    fn pairwise_hand_case() {
        let y_a = [0, 2, 5];
        let y_b = [0, 3, 1];
        let s = pairwise_compare(&y_a, &y_b, &y_a, &y_b).unwrap();
        assert_eq!(s.match_rate, 1.0);
        assert!((s.gt_better - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.non_zero - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_length_mismatch() {
        assert!(pairwise_compare(&[1], &[1, 2], &[1], &[1]).is_err());
    }

    #[test]
    fn tau_extremes() {
        let up = [1.0, 2.0, 3.0, 4.0, 5.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau_b(&up, &up).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&up, &down).unwrap(), -1.0);
        assert_eq!(kendall_tau_b(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(kendall_tau_b(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn tau_with_ties_matches_known_value() {
        // xs has one tied pair: n1 = 1; ys untied: n2 = 0. C = 5, D = 0.
        let xs = [1.0, 2.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 2.0, 4.0];
        let tau = kendall_tau_b(&xs, &ys).unwrap();
        let expected = 5.0 / ((6.0 - 1.0) * 6.0_f64).sqrt();
        assert!((tau - expected).abs() < 1e-12);
    }

    #[test]
    fn group_ranks_dense() {
        assert_eq!(group_ranks(&[5, 1, 5, 3]), vec![3, 1, 3, 2]);
        assert_eq!(group_ranks(&[7, 7, 7]), vec![1, 1, 1]);
    }

    #[test]
    fn ranking_perfect_predictions() {
        let y = vec![vec![3, 1], vec![1, 2], vec![2, 0], vec![5, 4], vec![4, 3]];
        let s = rank_configs(&y, &y).unwrap();
        assert_eq!(s.kendall_tau_mean, 1.0);
        assert_eq!(s.full_match_rate, 1.0);
        assert_eq!(s.best_match_rate, 1.0);
    }

    #[test]
    fn ranking_degenerate_all_tied() {
        let y = vec![vec![2], vec![2], vec![2], vec![2], vec![2]];
        let s = rank_configs(&y, &y).unwrap();
        assert_eq!(s.full_match_rate, 1.0); // identical tied rank vectors
        assert_eq!(s.best_match_rate, 1.0); // canonical tie-break both sides
        assert_eq!(s.n_tau_excluded, 1);
        assert_eq!(s.kendall_tau_mean, 0.0);
    }

    #[test]
    fn ranking_rank_invariance_under_monotone_transform() {
        let yhat = vec![vec![3, 0, 9], vec![1, 5, 9], vec![2, 5, 7]];
        let y = vec![vec![2, 1, 8], vec![1, 5, 8], vec![3, 4, 6]];
        let f = |v: &Vec<u32>| v.iter().map(|&x| x * 3 + 7).collect::<Vec<u32>>();
        let a = rank_configs(&yhat, &y).unwrap();
        let b = rank_configs(
            &yhat.iter().map(f).collect::<Vec<_>>(),
            &y.iter().map(f).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}

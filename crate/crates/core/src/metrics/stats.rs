//! Rank correlation and rater agreement.

use super::MetricError;

/// 1-based ranks; ties share the mean of the ranks they span.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
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

/// `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricError::Invalid(
            "correlation needs at least 2 observations".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Pearson correlation of mid-ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    pearson(&mid_ranks(xs), &mid_ranks(ys))
}

/// `ratings[i][k]` is how many raters put item `i` in category `k`.
/// `None` when chance agreement is 1.
pub fn fleiss_kappa(ratings: &[Vec<usize>]) -> Result<Option<f64>, MetricError> {
    let first = ratings.first().ok_or(MetricError::Empty("ratings"))?;
    let k = first.len();
    let r: usize = first.iter().sum();
    if r < 2 {
        return Err(MetricError::Invalid(
            "each item needs at least 2 raters".into(),
        ));
    }
    for (i, row) in ratings.iter().enumerate() {
        if row.len() != k {
            return Err(MetricError::Invalid(format!(
                "item {i} has {} categories, expected {k}",
                row.len()
            )));
        }
        if row.iter().sum::<usize>() != r {
            return Err(MetricError::Invalid(format!(
                "item {i} has a different number of raters"
            )));
        }
    }
    let n = ratings.len() as f64;
    let rf = r as f64;
    let p_bar = ratings
        .iter()
        .map(|row| row.iter().map(|&c| (c * c) as f64).sum::<f64>() - rf)
        .sum::<f64>()
        / (n * rf * (rf - 1.0));
    let p_e: f64 = (0..k)
        .map(|j| {
            let pj = ratings.iter().map(|row| row[j] as f64).sum::<f64>() / (n * rf);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(None);
    }
    Ok(Some((p_bar - p_e) / (1.0 - p_e)))
}

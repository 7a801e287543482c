//! Small summary statistics for benchmark reporting.

/// Nearest-rank percentile (`p` in `[0, 100]`) of unsorted data.
pub fn percentile(data: &[f64], p: f64) -> Option<f64> {
    if data.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn median(data: &[f64]) -> Option<f64> {
    percentile(data, 50.0)
}

pub fn mean(data: &[f64]) -> Option<f64> {
    (!data.is_empty()).then(|| data.iter().sum::<f64>() / data.len() as f64)
}

/// Sample standard deviation; zero for a single observation.
pub fn std_dev(data: &[f64]) -> Option<f64> {
    let m = mean(data)?;
    if data.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = data.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / (data.len() - 1) as f64).sqrt())
}

pub fn min(data: &[f64]) -> Option<f64> {
    data.iter().copied().reduce(f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let d = [15.0, 20.0, 35.0, 40.0, 50.0];
        assert_eq!(percentile(&d, 5.0), Some(15.0));
        assert_eq!(percentile(&d, 30.0), Some(20.0));
        assert_eq!(percentile(&d, 40.0), Some(20.0));
        assert_eq!(percentile(&d, 50.0), Some(35.0));
        assert_eq!(percentile(&d, 100.0), Some(50.0));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(median(&[3.0, 1.0, 2.0, 4.0]), Some(2.0));
    }

    #[test]
    fn moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(std_dev(&[1.0, 2.0, 3.0]), Some(1.0));
        assert_eq!(std_dev(&[4.0]), Some(0.0));
        assert_eq!(min(&[4.0, -1.0]), Some(-1.0));
    }
}

use crate::error::{Error, Result};

pub const JUDGE_COUNT: usize = 7;
/// Largest possible sum of the three middle judge scores.
pub const MAX_TRIMMED_SUM: f64 = 30.0;

/// Sum of the middle three of seven judge scores, divided by 30.
pub fn aggregate_judges(scores: &[f64]) -> Result<f64> {
    if scores.len() != JUDGE_COUNT {
        return Err(Error::invalid(format!(
            "expected {JUDGE_COUNT} judge scores, got {}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=10.0).contains(*s)) {
        return Err(Error::invalid(format!("judge score {bad} outside [0, 10]")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[2..5].iter().sum::<f64>() / MAX_TRIMMED_SUM)
}

pub fn final_score(normalized_score: f64, difficulty: f64) -> f64 {
    normalized_score * difficulty
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trims_two_from_each_end() {
        assert_eq!(aggregate_judges(&[10.0; 7]).unwrap(), 1.0);
        assert_eq!(aggregate_judges(&[0.0; 7]).unwrap(), 0.0);
        let s = aggregate_judges(&[9.5, 9.0, 9.0, 8.5, 8.5, 8.0, 7.5]).unwrap();
        assert!((s - 26.0 / 30.0).abs() < 1e-12);
        assert!((final_score(s, 3.2) - 2.77333).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(aggregate_judges(&[5.0; 6]).is_err());
        assert!(aggregate_judges(&[5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 10.5]).is_err());
        assert!(aggregate_judges(&[5.0, 5.0, 5.0, 5.0, 5.0, 5.0, f64::NAN]).is_err());
    }
}

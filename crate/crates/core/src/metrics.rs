//! Transient summary measures.

/// Last time at which any series is farther than `band · peak` from its own
/// final value, where `peak` is that series' largest excursion from the
/// final value. Returns 0 for series that never move.
pub fn settling_time(times: &[f64], series: &[alloc::vec::Vec<f64>], band: f64) -> f64 {
    let mut settle: f64 = 0.0;
    for s in series {
        let Some(&last) = s.last() else {
            continue;
        };
        let peak = s.iter().fold(0.0_f64, |m, v| m.max((v - last).abs()));
        if peak == 0.0 {
            continue;
        }
        if let Some(k) = s.iter().rposition(|v| (v - last).abs() > band * peak) {
            let t = times.get(k + 1).copied().unwrap_or(times[k]);
            settle = settle.max(t);
        }
    }
    settle
}

/// Last time at which any series is outside `center ± half_width`.
pub fn band_exit_time(times: &[f64], series: &[alloc::vec::Vec<f64>], center: f64, half_width: f64) -> f64 {
    let mut settle: f64 = 0.0;
    for s in series {
        if let Some(k) = s.iter().rposition(|v| (v - center).abs() > half_width) {
            let t = times.get(k + 1).copied().unwrap_or(times[k]);
            settle = settle.max(t);
        }
    }
    settle
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn decaying_signal_settles() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let s: Vec<f64> = times.iter().map(|t| libm::exp(-t)).collect();
        let ts = settling_time(&times, &[s], 0.02);
        // e^{−t} falls below 0.02 (of a unit peak, final ≈ 5e−5) near t = 3.9.
        assert!((ts - 4.0).abs() < 0.11, "{ts}");
    }

    #[test]
    fn flat_signal_settles_immediately() {
        let times = vec![0.0, 0.1, 0.2];
        assert_eq!(settling_time(&times, &[vec![1.0; 3]], 0.02), 0.0);
        assert_eq!(band_exit_time(&times, &[vec![1.0; 3]], 1.0, 0.1), 0.0);
    }
}

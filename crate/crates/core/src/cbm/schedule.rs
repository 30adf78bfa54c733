use super::CbmError;

/// Piecewise-constant temporal-dropout rate over epochs.
///
/// Stored as `(first_epoch, rate)` breakpoints sorted by epoch, starting at
/// epoch 0, with rates in `[0, 1]` and never increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSchedule {
    breakpoints: Vec<(usize, f64)>,
}

impl TdSchedule {
    pub fn new(breakpoints: Vec<(usize, f64)>) -> Result<Self, CbmError> {
        let Some(&(first, _)) = breakpoints.first() else {
            return Err(CbmError::InvalidConfig("TD schedule needs at least one breakpoint".into()));
        };
        if first != 0 {
            return Err(CbmError::InvalidConfig("TD schedule must start at epoch 0".into()));
        }
        for &(_, r) in &breakpoints {
            if !(0.0..=1.0).contains(&r) {
                return Err(CbmError::InvalidRate(r));
            }
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CbmError::InvalidConfig("TD breakpoints must have increasing epochs".into()));
            }
            if w[1].1 > w[0].1 {
                return Err(CbmError::InvalidConfig(format!(
                    "TD rate may not increase ({} -> {})",
                    w[0].1, w[1].1
                )));
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(rate: f64) -> Result<Self, CbmError> {
        Self::new(vec![(0, rate)])
    }

    /// 1.0, then 0.8 after two epochs, then 0.5 after two more.
    pub fn standard() -> Self {
        Self::decaying_to(0.5, 2).expect("valid standard schedule")
    }

    /// Start at 1.0, step to `min(0.8, ...)` after `every` epochs and to
    /// `final_rate` after another `every`; collapses when `final_rate ≥ 0.8`.
    pub fn decaying_to(final_rate: f64, every: usize) -> Result<Self, CbmError> {
        if !(0.0..=1.0).contains(&final_rate) {
            return Err(CbmError::InvalidRate(final_rate));
        }
        let every = every.max(1);
        let mut points = vec![(0, 1.0)];
        if final_rate < 1.0 {
            points.push((every, final_rate.max(0.8)));
        }
        if final_rate < 0.8 {
            points.push((2 * every, final_rate));
        }
        Self::new(points)
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.breakpoints
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map(|&(_, r)| r)
            .unwrap_or(self.breakpoints[0].1)
    }

    pub fn breakpoints(&self) -> &[(usize, f64)] {
        &self.breakpoints
    }

    pub fn final_rate(&self) -> f64 {
        self.breakpoints.last().map(|&(_, r)| r).unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_recipe() {
        let s = TdSchedule::standard();
        let rates: Vec<f64> = (0..7).map(|e| s.rate_at(e)).collect();
        assert_eq!(rates, vec![1.0, 1.0, 0.8, 0.8, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn sweep_endpoints() {
        assert_eq!(TdSchedule::decaying_to(1.0, 2).unwrap().breakpoints(), &[(0, 1.0)]);
        assert_eq!(TdSchedule::decaying_to(0.8, 2).unwrap().breakpoints(), &[(0, 1.0), (2, 0.8)]);
        let zero = TdSchedule::decaying_to(0.0, 1).unwrap();
        assert_eq!(zero.breakpoints(), &[(0, 1.0), (1, 0.8), (2, 0.0)]);
        assert_eq!(zero.final_rate(), 0.0);
    }

    #[test]
    fn rejects_increase_and_out_of_range() {
        assert!(TdSchedule::new(vec![(0, 0.5), (2, 0.8)]).is_err());
        assert!(TdSchedule::new(vec![(0, 1.2)]).is_err());
        assert!(TdSchedule::new(vec![(1, 0.5)]).is_err());
        assert!(TdSchedule::new(vec![]).is_err());
    }
}

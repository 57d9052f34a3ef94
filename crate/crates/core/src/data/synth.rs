//! Synthetic markets: geometric random walks with a regime-switching
//! momentum signal, used for desk-scale experiments and tests.

use super::{trading_calendar, StockPanel, FEATURE_DIM};
use crate::error::{Result, SvatError};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Shape of the generated market.
///
/// Each stock carries a hidden momentum state `h in {-1, +1}` that flips with
/// `flip_prob` per day. The conditional mean of the daily log return is
/// `drift + momentum_strength * h * vol`, so recent returns reveal the state
/// and ranking by it beats chance whenever `momentum_strength > 0`. Days in
/// the down state are `downside_vol_mult` times more volatile, tying risk to
/// negative expected returns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub momentum_strength: f64,
    pub flip_prob: f64,
    pub vol_range: (f64, f64),
    pub downside_vol_mult: f64,
    pub drift_range: (f64, f64),
    pub price_range: (f64, f64),
    pub base_volume: f64,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        RegimeSpec {
            momentum_strength: 0.6,
            flip_prob: 0.03,
            vol_range: (0.01, 0.03),
            downside_vol_mult: 2.0,
            drift_range: (-0.0005, 0.0005),
            price_range: (20.0, 200.0),
            base_volume: 1.0e6,
        }
    }
}

impl RegimeSpec {
    fn validate(&self) -> Result<()> {
        let ranges = [
            ("vol_range", self.vol_range),
            ("drift_range", self.drift_range),
            ("price_range", self.price_range),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(SvatError::Usage(format!("{name} is inverted: {lo}..{hi}")));
            }
        }
        if self.vol_range.0 < 0.0
            || !(0.0..=1.0).contains(&self.flip_prob)
            || self.downside_vol_mult < 1.0
            || self.price_range.0 <= 0.0
            || self.base_volume <= 0.0
        {
            return Err(SvatError::Usage(format!("degenerate regime: {self:?}")));
        }
        Ok(())
    }
}

fn uniform_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

/// Generate a panel of `n_stocks` x `days` synthetic OHLCV history,
/// deterministic in `seed`.
pub fn synth_market(
    seed: u64,
    n_stocks: usize,
    days: usize,
    spec: &RegimeSpec,
) -> Result<StockPanel> {
    if n_stocks < 2 {
        return Err(SvatError::Usage(format!(
            "need at least 2 stocks, got {n_stocks}"
        )));
    }
    if days < 20 {
        return Err(SvatError::Usage(format!(
            "need at least 20 days, got {days}"
        )));
    }
    spec.validate()?;

    let start = NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date");
    let calendar = trading_calendar(start, days);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let stock_ids: Vec<String> = (0..n_stocks).map(|i| format!("S{i:03}")).collect();
    let mut features = Vec::with_capacity(n_stocks);
    for _ in 0..n_stocks {
        let vol = uniform_in(&mut rng, spec.vol_range);
        let drift = uniform_in(&mut rng, spec.drift_range);
        let mut close = uniform_in(&mut rng, spec.price_range);
        let mut state: f64 = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };

        let mut block = Vec::with_capacity(days * FEATURE_DIM);
        for _ in 0..days {
            if rng.random::<f64>() < spec.flip_prob {
                state = -state;
            }
            let vol_eff = if state < 0.0 {
                vol * spec.downside_vol_mult
            } else {
                vol
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            let z_high: f64 = StandardNormal.sample(&mut rng);
            let z_low: f64 = StandardNormal.sample(&mut rng);
            let z_vol: f64 = StandardNormal.sample(&mut rng);

            let log_ret = drift + spec.momentum_strength * state * vol + vol_eff * z;
            let open = close;
            close *= log_ret.exp();
            let hi = open.max(close) * (1.0 + 0.5 * vol_eff * z_high.abs());
            let lo = open.min(close) * (1.0 - (0.5 * vol_eff * z_low.abs()).min(0.9));
            let volume = spec.base_volume * (0.3 * z_vol).exp() * (1.0 + 2.0 * log_ret.abs());
            block.extend_from_slice(&[open, hi, lo, close, volume]);
        }
        features.push(block);
    }
    StockPanel::from_features(stock_ids, calendar, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CLOSE;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = RegimeSpec::default();
        let a = synth_market(7, 5, 40, &spec).unwrap();
        let b = synth_market(7, 5, 40, &spec).unwrap();
        for i in 0..a.n_stocks() {
            let av: Vec<u64> = a.features_of(i).iter().map(|v| v.to_bits()).collect();
            let bv: Vec<u64> = b.features_of(i).iter().map(|v| v.to_bits()).collect();
            assert_eq!(av, bv);
        }
        let c = synth_market(8, 5, 40, &spec).unwrap();
        assert_ne!(
            a.feature(0, 0, CLOSE).to_bits(),
            c.feature(0, 0, CLOSE).to_bits()
        );
    }

    #[test]
    fn zero_vol_zero_drift_is_flat() {
        let spec = RegimeSpec {
            momentum_strength: 0.5,
            vol_range: (0.0, 0.0),
            drift_range: (0.0, 0.0),
            ..RegimeSpec::default()
        };
        let panel = synth_market(3, 3, 25, &spec).unwrap();
        for i in 0..panel.n_stocks() {
            let first = panel.feature(i, 0, CLOSE);
            for t in 0..panel.n_days() {
                assert_eq!(panel.feature(i, t, CLOSE), first);
                if t > 0 {
                    assert_eq!(panel.ret(i, t), 0.0);
                }
            }
        }
    }

    #[test]
    fn degenerate_sizes_are_usage_errors() {
        let spec = RegimeSpec::default();
        assert!(synth_market(1, 0, 100, &spec).is_err());
        assert!(synth_market(1, 1, 100, &spec).is_err());
        assert!(synth_market(1, 5, 0, &spec).is_err());
        assert!(synth_market(1, 5, 10, &spec).is_err());
    }

    /// Mean cross-sectional rank correlation between a trailing-return signal
    /// and the next-day return, a Monte-Carlo estimate over all days.
    fn mean_signal_rank_corr(panel: &StockPanel, trail: usize) -> f64 {
        let n = panel.n_stocks();
        let mut total = 0.0;
        let mut count = 0;
        for t in trail..panel.n_days() - 1 {
            let signal: Vec<f64> = (0..n)
                .map(|i| (t - trail + 1..=t).map(|d| panel.ret(i, d)).sum::<f64>())
                .collect();
            let target: Vec<f64> = (0..n).map(|i| panel.ret(i, t + 1)).collect();
            total += rank_corr(&signal, &target);
            count += 1;
        }
        total / count as f64
    }

    fn ranks(xs: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
        let mut r = vec![0.0; xs.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    }

    fn rank_corr(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (ra[i] - mean) * (rb[i] - mean);
            va += (ra[i] - mean).powi(2);
            vb += (rb[i] - mean).powi(2);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn zero_signal_strength_kills_predictability() {
        let spec = RegimeSpec {
            momentum_strength: 0.0,
            drift_range: (0.0, 0.0),
            ..RegimeSpec::default()
        };
        let panel = synth_market(11, 20, 300, &spec).unwrap();
        let corr = mean_signal_rank_corr(&panel, 5);
        assert!(corr.abs() < 0.05, "expected ~0 rank corr, got {corr}");
    }

    #[test]
    fn momentum_regime_is_learnable() {
        let spec = RegimeSpec::default();
        let panel = synth_market(11, 20, 300, &spec).unwrap();
        let corr = mean_signal_rank_corr(&panel, 5);
        assert!(corr > 0.10, "expected positive rank corr, got {corr}");
    }
}

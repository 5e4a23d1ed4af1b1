//! Statistics of the load-compliance vector and their partial derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::CorrectionFactors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceStats {
    pub mu: f64,
    pub var: f64,
    pub sigma: f64,
    pub c_max: f64,
    pub c_min: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Std,
    Var,
}

pub fn mean(c: &[f64]) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::Parameter(
            "mean of an empty compliance vector".into(),
        ));
    }
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

/// Sample statistics (`1 / (L - 1)` normalisation). Needs `L >= 2`.
pub fn stats(c: &[f64]) -> Result<ComplianceStats> {
    if c.len() < 2 {
        return Err(Error::Parameter(format!(
            "sample variance needs at least 2 scenarios, got {}",
            c.len()
        )));
    }
    let mu = mean(c)?;
    let var = c.iter().map(|&ci| (ci - mu) * (ci - mu)).sum::<f64>() / (c.len() - 1) as f64;
    let (c_min, c_max) = c
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(ComplianceStats {
        mu,
        var,
        sigma: var.sqrt(),
        c_max,
        c_min,
        count: c.len(),
    })
}

/// `d stat / d C_i` for each scenario.
pub fn stat_partials(c: &[f64], which: Statistic) -> Result<Vec<f64>> {
    let l = c.len();
    match which {
        Statistic::Mean => {
            if l == 0 {
                return Err(Error::Parameter("empty compliance vector".into()));
            }
            Ok(vec![1.0 / l as f64; l])
        }
        Statistic::Var => {
            let s = stats(c)?;
            Ok(c.iter()
                .map(|&ci| 2.0 * (ci - s.mu) / (l - 1) as f64)
                .collect())
        }
        Statistic::Std => {
            let s = stats(c)?;
            if !(s.sigma > 0.0) {
                return Err(Error::SingularGradient(
                    "standard deviation is zero; its gradient is undefined".into(),
                ));
            }
            Ok(c.iter()
                .map(|&ci| (ci - s.mu) / ((l - 1) as f64 * s.sigma))
                .collect())
        }
    }
}

/// Value and `d/dC` of `gamma_mean * mu + m * gamma_std * sigma`.
///
/// `correction = None` means the uncorrected objective (both ratios 1).
pub fn mean_std_objective(
    c: &[f64],
    multiplier: f64,
    correction: Option<&CorrectionFactors>,
) -> Result<(f64, Vec<f64>)> {
    if !(multiplier >= 0.0) {
        return Err(Error::Parameter(format!(
            "standard deviation multiplier must be >= 0, got {multiplier}"
        )));
    }
    let (g_mean, g_std) = correction.map_or((1.0, 1.0), |c| (c.gamma_mean, c.gamma_std));
    let mu = mean(c)?;
    let mut w = vec![g_mean / c.len() as f64; c.len()];
    let mut value = g_mean * mu;
    if multiplier > 0.0 {
        let sigma = stats(c)?.sigma;
        let ds = stat_partials(c, Statistic::Std)?;
        value += multiplier * g_std * sigma;
        for (wi, di) in w.iter_mut().zip(ds) {
            *wi += multiplier * g_std * di;
        }
    }
    Ok((value, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn constant_vector() {
        let s = stats(&[3.5; 6]).unwrap();
        assert_eq!(s.mu, 3.5);
        assert_eq!(s.var, 0.0);
        assert_eq!(s.sigma, 0.0);
        assert!(matches!(
            stat_partials(&[3.5; 6], Statistic::Std),
            Err(Error::SingularGradient(_))
        ));
    }

    #[test]
    fn two_point_example() {
        let s = stats(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mu, 1.0);
        assert_eq!(s.var, 2.0);
        assert_relative_eq!(s.sigma, 2f64.sqrt());
        let w = stat_partials(&[0.0, 2.0], Statistic::Std).unwrap();
        assert_relative_eq!(w[0], -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(w[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn matches_compensated_two_pass() {
        let c: Vec<f64> = (0..100)
            .map(|i| 1e4 + ((i * 37) as f64).sin() * 250.0)
            .collect();
        // Kahan-summed two-pass oracle.
        let kahan = |it: &mut dyn Iterator<Item = f64>| {
            let (mut s, mut comp) = (0.0f64, 0.0f64);
            for v in it {
                let y = v - comp;
                let t = s + y;
                comp = (t - s) - y;
                s = t;
            }
            s
        };
        let mu = kahan(&mut c.iter().copied()) / 100.0;
        let var = kahan(&mut c.iter().map(|v| (v - mu) * (v - mu))) / 99.0;
        let s = stats(&c).unwrap();
        assert!((s.mu - mu).abs() <= 1e-12 * mu);
        assert!((s.var - var).abs() <= 1e-12 * var);
        assert!(s.c_min <= s.mu && s.mu <= s.c_max);
    }

    #[test]
    fn too_few_scenarios() {
        assert!(stats(&[1.0]).is_err());
        assert!(stat_partials(&[1.0], Statistic::Var).is_err());
        assert_eq!(stat_partials(&[1.0], Statistic::Mean).unwrap(), vec![1.0]);
        assert_eq!(mean(&[4.0]).unwrap(), 4.0);
    }

    #[test]
    fn mean_partials() {
        assert_eq!(
            stat_partials(&[1.0, 5.0, 2.0, 9.0], Statistic::Mean).unwrap(),
            vec![0.25; 4]
        );
    }

    #[test]
    fn objective_reduces_to_mean() {
        let c = [1.0, 4.0, 2.0];
        let (v, w) = mean_std_objective(&c, 0.0, None).unwrap();
        assert_relative_eq!(v, 7.0 / 3.0);
        assert_eq!(w, vec![1.0 / 3.0; 3]);
        assert!(mean_std_objective(&c, -1.0, None).is_err());
    }

    #[test]
    fn objective_applies_correction() {
        let c = [1.0, 4.0, 2.0, 7.0];
        let corr = CorrectionFactors {
            gamma_mean: 1.5,
            gamma_std: 0.25,
            reference: vec![],
        };
        let s = stats(&c).unwrap();
        let (v, w) = mean_std_objective(&c, 2.0, Some(&corr)).unwrap();
        assert_relative_eq!(v, 1.5 * s.mu + 2.0 * 0.25 * s.sigma, epsilon = 1e-14);
        let ds = stat_partials(&c, Statistic::Std).unwrap();
        for i in 0..4 {
            assert_relative_eq!(w[i], 1.5 / 4.0 + 0.5 * ds[i], epsilon = 1e-14);
        }
    }

    fn fd_check(c: &[f64], f: impl Fn(&[f64]) -> f64, w: &[f64]) {
        for i in 0..c.len() {
            let h = 1e-5 * c[i].abs().max(1.0);
            let mut p = c.to_vec();
            let mut m = c.to_vec();
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!(
                (fd - w[i]).abs() <= 1e-8 * w[i].abs().max(1.0),
                "{i}: {fd} vs {}",
                w[i]
            );
        }
    }

    proptest! {
        #[test]
        fn partials_match_fd_and_sum_rules(c in prop::collection::vec(1.0f64..100.0, 2..20)) {
            prop_assume!(stats(&c).unwrap().sigma > 1e-3);
            let ws = stat_partials(&c, Statistic::Std).unwrap();
            let wv = stat_partials(&c, Statistic::Var).unwrap();
            let wm = stat_partials(&c, Statistic::Mean).unwrap();
            fd_check(&c, |c| stats(c).unwrap().sigma, &ws);
            fd_check(&c, |c| stats(c).unwrap().var, &wv);
            let scale: f64 = c.iter().sum::<f64>();
            prop_assert!(ws.iter().sum::<f64>().abs() <= 1e-12 * scale);
            prop_assert!(wv.iter().sum::<f64>().abs() <= 1e-12 * scale);
            prop_assert!((wm.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

            let s = stats(&c).unwrap();
            let l = c.len() as f64;
            for (wi, ci) in ws.iter().zip(&c) {
                prop_assert!(wi.abs() <= 2.0 * (ci - s.mu).abs() / (l * s.sigma) + 1e-15);
            }
        }
    }
}

//! Analytic cost model.
//!
//! The cover of `n` merged queries is approximated by a line through
//! `(1, 1)` and `(c/s, c)`, clamped to `[c, 1]`. Transmission, storage and
//! their weighted sum are then closed-form functions of the merge rate `m`,
//! and the optimal rate is found by isolating roots of the derivative.

use serde::{Deserialize, Serialize};

use crate::error::CostError;

/// Parameters of the analytic model. The merge rate is passed separately
/// to the functions that depend on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Number of original queries `N_Q`.
    pub n_queries: usize,
    /// Cover `c` of the original queries.
    pub cover: f64,
    /// Average selectivity `s` of one query.
    pub selectivity: f64,
    pub height: u32,
    pub fanout: u32,
    /// Bytes per data element.
    pub element_size: f64,
    /// Weight of transmission against storage.
    pub alpha: f64,
}

/// Result of [`optimal_merge_rate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub merge_rate: f64,
    pub weighted_sum: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        check_cover(self.cover, self.selectivity)?;
        if self.height < 2 {
            return Err(CostError::Height(self.height));
        }
        if self.fanout < 1 {
            return Err(CostError::Fanout(self.fanout));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CostError::Alpha(self.alpha));
        }
        if self.n_queries < 1 {
            return Err(CostError::QueryCount);
        }
        if !(self.element_size > 0.0 && self.element_size.is_finite()) {
            return Err(CostError::ElementSize(self.element_size));
        }
        Ok(())
    }

    /// Slope `a = s(1 - c) / (c - s)` of the cover model.
    pub fn a(&self) -> f64 {
        slope(self.cover, self.selectivity)
    }

    /// Intercept `b = 1 + a`.
    pub fn b(&self) -> f64 {
        1.0 + self.a()
    }

    /// Same parameters with a different `alpha`.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    /// Smallest merge rate that keeps at least one query per tier, `1/N_Q`.
    pub fn min_merge_rate(&self) -> f64 {
        1.0 / self.n_queries as f64
    }

    fn tier_nodes(&self, tier: u32) -> f64 {
        (self.fanout as f64).powi(tier as i32 - 1)
    }

    /// Nodes at tier `j` and below: `F_j = sum_{i=j..h} f^(i-1)`.
    fn nodes_from(&self, tier: u32) -> f64 {
        (tier..=self.height).map(|i| self.tier_nodes(i)).sum()
    }
}

fn check_cover(cover: f64, selectivity: f64) -> Result<(), CostError> {
    if selectivity > 0.0 && selectivity < cover && cover <= 1.0 {
        Ok(())
    } else {
        Err(CostError::CoverModel { selectivity, cover })
    }
}

fn slope(cover: f64, selectivity: f64) -> f64 {
    selectivity * (1.0 - cover) / (cover - selectivity)
}

fn check_rate(m: f64) -> Result<(), CostError> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(CostError::MergeRate(m))
    }
}

/// Estimated cover of `n` merged queries.
pub fn cover_hat(n: f64, cover: f64, selectivity: f64) -> Result<f64, CostError> {
    check_cover(cover, selectivity)?;
    Ok(cover_hat_unchecked(n, cover, slope(cover, selectivity)))
}

fn cover_hat_unchecked(n: f64, cover: f64, a: f64) -> f64 {
    (1.0 + a - a * n).clamp(cover, 1.0)
}

/// Estimated bytes sent per unit time for merge rate `m`.
pub fn total_transmission_est(p: &CostParams, m: f64) -> Result<f64, CostError> {
    p.validate()?;
    check_rate(m)?;
    Ok(transmission(p, m))
}

fn transmission(p: &CostParams, m: f64) -> f64 {
    let a = p.a();
    (2..=p.height)
        .map(|j| {
            let n = p.n_queries as f64 * m.powi(j as i32 - 1);
            p.element_size * p.nodes_from(j) * cover_hat_unchecked(n, p.cover, a)
        })
        .sum()
}

/// Estimated bytes of query storage across tiers 2..h for merge rate `m`.
pub fn total_storage_est(p: &CostParams, m: f64) -> Result<f64, CostError> {
    p.validate()?;
    check_rate(m)?;
    Ok(storage(p, m))
}

fn storage(p: &CostParams, m: f64) -> f64 {
    (2..=p.height)
        .map(|i| 2.0 * p.element_size * p.tier_nodes(i) * p.n_queries as f64 * m.powi(i as i32 - 1))
        .sum()
}

/// `alpha * transmission + storage`.
pub fn weighted_sum_est(p: &CostParams, m: f64) -> Result<f64, CostError> {
    p.validate()?;
    check_rate(m)?;
    Ok(weighted_sum(p, m))
}

fn weighted_sum(p: &CostParams, m: f64) -> f64 {
    p.alpha * transmission(p, m) + storage(p, m)
}

/// The `alpha` that equalises the maximum possible storage and the
/// maximum possible transmission.
pub fn alpha0(p: &CostParams) -> Result<f64, CostError> {
    if p.height < 2 {
        return Err(CostError::Height(p.height));
    }
    if p.n_queries < 1 {
        return Err(CostError::QueryCount);
    }
    let (num, den) = (2..=p.height).fold((0.0, 0.0), |(num, den), i| {
        let nodes = p.tier_nodes(i);
        (num + nodes, den + (i - 1) as f64 * nodes)
    });
    Ok(2.0 * p.n_queries as f64 * num / den)
}

/// Regime of one tier's cover term at merge rate `m`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Regime {
    Full,
    Linear,
    Floor,
}

fn regime(p: &CostParams, tier: u32, m: f64) -> Regime {
    let n = p.n_queries as f64 * m.powi(tier as i32 - 1);
    if n <= 1.0 {
        Regime::Full
    } else if n >= p.cover / p.selectivity {
        Regime::Floor
    } else {
        Regime::Linear
    }
}

/// Polynomial coefficients (by power of `m`) of the weighted sum in the
/// regime that contains `m`. Index `k` holds the coefficient of `m^k`.
fn regime_polynomial(p: &CostParams, m: f64) -> Vec<f64> {
    let nq = p.n_queries as f64;
    let s = p.element_size;
    let a = p.a();
    let mut coef = vec![0.0; p.height as usize];
    for j in 2..=p.height {
        let k = (j - 1) as usize;
        let fj = p.nodes_from(j);
        coef[k] += 2.0 * s * nq * p.tier_nodes(j);
        match regime(p, j, m) {
            Regime::Full => coef[0] += p.alpha * s * fj,
            Regime::Floor => coef[0] += p.alpha * s * fj * p.cover,
            Regime::Linear => {
                coef[0] += p.alpha * s * fj * (1.0 + a);
                coef[k] -= p.alpha * s * fj * a * nq;
            }
        }
    }
    coef
}

/// Derivative of the weighted sum with respect to `m`. At a regime
/// boundary this is the one-sided derivative of the regime `m` falls into.
pub fn weighted_sum_derivative(p: &CostParams, m: f64) -> Result<f64, CostError> {
    p.validate()?;
    check_rate(m)?;
    Ok(derivative(p, m))
}

fn derivative(p: &CostParams, m: f64) -> f64 {
    regime_polynomial(p, m)
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c * m.powi(k as i32 - 1))
        .sum()
}

/// Merge rates in `[lo, 1]` where some tier's cover term changes regime.
fn breakpoints(p: &CostParams, lo: f64) -> Vec<f64> {
    let nq = p.n_queries as f64;
    let mut out = Vec::new();
    for j in 2..=p.height {
        let e = 1.0 / (j - 1) as f64;
        for n in [1.0, p.cover / p.selectivity] {
            let m = (n / nq).powf(e);
            if m > lo && m < 1.0 {
                out.push(m);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

const PARTITION: usize = 10_000;
const ROOT_TOL: f64 = 1e-9;

/// Global minimiser of the estimated weighted sum over `[1/N_Q, 1]`.
///
/// Below `1/N_Q` a tier would hold fewer than one query, which no
/// deployment can realise. Ties are resolved toward the smaller rate.
pub fn optimal_merge_rate(p: &CostParams) -> Result<Optimum, CostError> {
    p.validate()?;
    let lo = p.min_merge_rate();
    let mut candidates = vec![lo, 1.0];
    let kinks = breakpoints(p, lo);
    candidates.extend_from_slice(&kinks);

    // Partition nodes: a uniform grid with the regime boundaries spliced
    // in, so no cell straddles a boundary.
    let mut nodes: Vec<f64> = (0..=PARTITION)
        .map(|i| lo + (1.0 - lo) * i as f64 / PARTITION as f64)
        .chain(kinks.iter().copied())
        .collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();

    for w in nodes.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        // Evaluate strictly inside the cell so both ends use its regime.
        let poly = regime_polynomial(p, 0.5 * (x0 + x1));
        let d = |x: f64| -> f64 {
            poly.iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c * x.powi(k as i32 - 1))
                .sum()
        };
        let (mut a, mut b) = (x0, x1);
        let (da, db) = (d(a), d(b));
        if da == 0.0 {
            candidates.push(a);
        }
        if da.signum() * db.signum() >= 0.0 {
            continue;
        }
        let neg_left = da < 0.0;
        while b - a > ROOT_TOL {
            let mid = 0.5 * (a + b);
            if (d(mid) < 0.0) == neg_left {
                a = mid;
            } else {
                b = mid;
            }
        }
        candidates.push(0.5 * (a + b));
    }

    candidates.sort_by(f64::total_cmp);
    let mut best = Optimum {
        merge_rate: candidates[0],
        weighted_sum: weighted_sum(p, candidates[0]),
    };
    for &m in &candidates[1..] {
        let w = weighted_sum(p, m);
        if w < best.weighted_sum {
            best = Optimum {
                merge_rate: m,
                weighted_sum: w,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_params() -> CostParams {
        CostParams {
            n_queries: 1046,
            cover: 0.1,
            selectivity: 1e-4,
            height: 4,
            fanout: 8,
            element_size: 8.0,
            alpha: 1.0,
        }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn cover_model_anchor_points() {
        assert_eq!(cover_hat(1.0, 0.1, 1e-4).unwrap(), 1.0);
        assert!(close(cover_hat(1000.0, 0.1, 1e-4).unwrap(), 0.1, 1e-12));
        let a = 1e-4 * 0.9 / (0.1 - 1e-4);
        let want = 1.0 + a - 500.0 * a;
        assert!(close(cover_hat(500.0, 0.1, 1e-4).unwrap(), want, 1e-14));
        assert!((want - 0.55045045).abs() < 1e-6);
        assert_eq!(cover_hat(1e6, 0.1, 1e-4).unwrap(), 0.1);
        assert_eq!(cover_hat(0.3, 0.1, 1e-4).unwrap(), 1.0);
        assert!(cover_hat(5.0, 0.1, 0.1).is_err());
        assert!(cover_hat(5.0, 0.1, 0.2).is_err());
    }

    #[test]
    fn transmission_limits() {
        let p = default_params();
        let max: f64 = (2..=4).map(|i| 8.0 * 8f64.powi(i - 1) * (i - 1) as f64).sum();
        assert!(close(total_transmission_est(&p, 0.0).unwrap(), max, 1e-12));
        let floor = cover_hat(1046.0, 0.1, 1e-4).unwrap();
        let at_one: f64 = (2..=4).map(|i| 8.0 * 8f64.powi(i - 1) * (i - 1) as f64 * floor).sum();
        assert!(close(total_transmission_est(&p, 1.0).unwrap(), at_one, 1e-12));
    }

    #[test]
    fn transmission_term_by_term() {
        let p = default_params();
        let a = 1e-4 * 0.9 / (0.1 - 1e-4);
        let mut want = 0.0;
        for i in 2..=4 {
            let mut inner = 0.0;
            for j in 2..=i {
                let n = 1046.0 * 0.5f64.powi(j - 1);
                inner += (1.0 + a - a * n).clamp(0.1, 1.0);
            }
            want += 8.0 * 8f64.powi(i - 1) * inner;
        }
        assert!(close(total_transmission_est(&p, 0.5).unwrap(), want, 1e-12));
    }

    #[test]
    fn storage_examples() {
        let p = default_params();
        assert_eq!(total_storage_est(&p, 0.0).unwrap(), 0.0);
        assert!(close(total_storage_est(&p, 0.5).unwrap(), 1_405_824.0, 1e-12));
        assert!(close(total_storage_est(&p, 1.0).unwrap(), 2.0 * 8.0 * 1046.0 * 584.0, 1e-12));
    }

    #[test]
    fn alpha0_examples() {
        let mut p = default_params();
        let a0 = alpha0(&p).unwrap();
        assert!(close(a0, 2.0 * 1046.0 * 584.0 / 1672.0, 1e-12));
        assert!((a0 - 730.7).abs() < 0.01);
        p.height = 2;
        assert!(close(alpha0(&p).unwrap(), 2.0 * 1046.0, 1e-12));
        p.height = 1;
        assert!(alpha0(&p).is_err());
        let mut q = default_params();
        q.cover = 0.5;
        q.selectivity = 0.01;
        assert_eq!(alpha0(&q).unwrap(), a0);
    }

    #[test]
    fn weighted_sum_linear_in_alpha() {
        let p = default_params();
        let w1 = weighted_sum_est(&p.with_alpha(3.0), 0.4).unwrap();
        let w2 = weighted_sum_est(&p.with_alpha(6.0), 0.4).unwrap();
        let t = total_transmission_est(&p, 0.4).unwrap();
        assert!(close(w2 - w1, 3.0 * t, 1e-10));
        assert!(weighted_sum_est(&p.with_alpha(0.0), 0.4).is_err());
        assert!(weighted_sum_est(&p, 1.5).is_err());
    }

    #[test]
    fn default_optimum() {
        let p = default_params();
        let p = p.with_alpha(alpha0(&p).unwrap());
        let opt = optimal_merge_rate(&p).unwrap();
        assert!((opt.merge_rate - 0.563).abs() < 0.02, "{opt:?}");
        for m in [0.3, 0.8] {
            assert!(opt.weighted_sum <= weighted_sum_est(&p, m).unwrap());
        }
    }

    #[test]
    fn tiny_alpha_hits_lower_bound() {
        let p = default_params();
        let p = p.with_alpha(alpha0(&p).unwrap() * 1e-2);
        let opt = optimal_merge_rate(&p).unwrap();
        assert_eq!(opt.merge_rate, 1.0 / 1046.0);
    }

    #[test]
    fn single_query_domain() {
        let mut p = default_params();
        p.n_queries = 1;
        assert_eq!(optimal_merge_rate(&p).unwrap().merge_rate, 1.0);
    }

    /// Uniform grid over the feasible domain plus every rate where a tier's
    /// query count reaches 1 or `c/s`. A minimum sitting on such a kink
    /// would otherwise fall between grid points.
    pub(super) fn grid_oracle(p: &CostParams, steps: usize) -> f64 {
        let lo = 1.0 / p.n_queries as f64;
        let mut pts: Vec<f64> = (0..=steps).map(|i| lo + (1.0 - lo) * i as f64 / steps as f64).collect();
        for j in 2..=p.height {
            for n in [1.0, p.cover / p.selectivity] {
                let m = (n / p.n_queries as f64).powf(1.0 / (j - 1) as f64);
                if m > lo && m < 1.0 {
                    pts.push(m);
                }
            }
        }
        pts.into_iter().map(|m| weighted_sum(p, m)).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn matches_fine_grid() {
        let p = default_params();
        let a0 = alpha0(&p).unwrap();
        for scale in [0.05, 0.3, 1.0, 3.0, 30.0] {
            let p = p.with_alpha(a0 * scale);
            let opt = optimal_merge_rate(&p).unwrap();
            let grid_min = grid_oracle(&p, 100_000);
            assert!(opt.weighted_sum <= grid_min * (1.0 + 1e-12));
            assert!(close(opt.weighted_sum, grid_min, 1e-6), "scale {scale}: {opt:?} vs {grid_min}");
        }
    }

    fn arb_params() -> impl Strategy<Value = (CostParams, f64)> {
        (
            1usize..3000,
            -4.0f64..-1.0,
            0.0f64..1.0,
            2u32..7,
            1u32..12,
            -2.0f64..2.0,
            0.01f64..0.99,
        )
            .prop_map(|(nq, log_s, cfrac, h, f, log_alpha, m)| {
                let s = 10f64.powf(log_s);
                let c = s + (1.0 - s) * (0.02 + 0.98 * cfrac);
                let mut p = CostParams {
                    n_queries: nq,
                    cover: c,
                    selectivity: s,
                    height: h,
                    fanout: f,
                    element_size: 8.0,
                    alpha: 1.0,
                };
                p.alpha = alpha0(&p).unwrap() * 10f64.powf(log_alpha);
                (p, m)
            })
    }

    proptest! {
        #[test]
        fn derivative_matches_finite_difference((p, m) in arb_params()) {
            let h = 1e-6;
            // skip points whose stencil straddles a regime boundary
            let same = (2..=p.height).all(|j| regime(&p, j, m - h) == regime(&p, j, m + h));
            prop_assume!(same);
            let fd = (weighted_sum(&p, m + h) - weighted_sum(&p, m - h)) / (2.0 * h);
            let an = derivative(&p, m);
            let scale = an.abs().max(weighted_sum(&p, m) * 1e-3);
            prop_assert!((fd - an).abs() <= 1e-4 * scale, "fd {} analytic {}", fd, an);
        }

        #[test]
        fn monotone_in_rate((p, m) in arb_params(), dm in 0.001f64..0.2) {
            let m2 = (m + dm).min(1.0);
            prop_assert!(transmission(&p, m2) <= transmission(&p, m) * (1.0 + 1e-12));
            prop_assert!(storage(&p, m2) > storage(&p, m));
        }

        #[test]
        fn cover_hat_non_increasing(n in 2usize..100_000, cfrac in 0.0f64..1.0, log_s in -5.0f64..-0.5) {
            let s = 10f64.powf(log_s);
            let c = s + (1.0 - s) * (0.01 + 0.99 * cfrac);
            prop_assert!(cover_hat(n as f64, c, s).unwrap() <= cover_hat(n as f64 - 1.0, c, s).unwrap());
        }

        #[test]
        fn optimum_beats_samples((p, m) in arb_params()) {
            let opt = optimal_merge_rate(&p).unwrap();
            let m = m.max(p.min_merge_rate());
            prop_assert!(opt.weighted_sum <= weighted_sum(&p, m) * (1.0 + 1e-12));
        }
    }
}

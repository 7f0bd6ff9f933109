//! Closed-form expected improvements for contour estimation.
//!
//! Both operate in limit-state space: the posterior `N(mean, sd^2)` of `f`
//! maps to `N(rho * mean, (|rho| sd)^2)` of `rho f`, compared against `a`.
//! The band half-width is `delta = sqrt(eta) * sd`.

use crate::mfgp::LimitState;
use crate::stats::{norm_cdf, norm_pdf};

struct Standardized {
    /// `mu - a` in limit-state space
    offset: f64,
    sd: f64,
    delta: f64,
    z_minus: f64,
    z: f64,
    z_plus: f64,
}

fn standardize(mean: f64, sd: f64, limit: &LimitState, delta: f64) -> Option<Standardized> {
    let sd = limit.rho.abs() * sd;
    if !(sd > 0.0) || !sd.is_finite() {
        return None;
    }
    let mu = limit.rho * mean;
    let k = delta / sd;
    let z = (limit.a - mu) / sd;
    Some(Standardized {
        offset: mu - limit.a,
        sd,
        delta,
        z_minus: z - k,
        z,
        z_plus: z + k,
    })
}

/// Band half-width `sqrt(eta) |rho| sd` in limit-state units.
pub fn band(sd: f64, limit: &LimitState, eta: f64) -> f64 {
    eta.sqrt() * limit.rho.abs() * sd
}

/// Expected value of `delta - min(|Y - a|, delta)` under the posterior.
pub fn ei_bichon(mean: f64, sd: f64, limit: &LimitState, eta: f64) -> f64 {
    bichon_with_band(mean, sd, limit, band(sd, limit, eta))
}

/// [`ei_bichon`] with the half-width `delta` (limit-state units) given explicitly.
pub fn bichon_with_band(mean: f64, sd: f64, limit: &LimitState, delta: f64) -> f64 {
    let Some(t) = standardize(mean, sd, limit, delta) else {
        return (delta - limit.g(mean).abs().min(delta)).max(0.0);
    };
    let (cm, c, cp) = (norm_cdf(t.z_minus), norm_cdf(t.z), norm_cdf(t.z_plus));
    let (pm, p, pp) = (norm_pdf(t.z_minus), norm_pdf(t.z), norm_pdf(t.z_plus));
    let v = t.delta * (cp - cm) - t.sd * (2.0 * p - pm - pp) + t.offset * (2.0 * c - cm - cp);
    v.max(0.0)
}

/// Expected value of `delta^2 - min((Y - a)^2, delta^2)` under the posterior.
pub fn ei_ranjan(mean: f64, sd: f64, limit: &LimitState, eta: f64) -> f64 {
    ranjan_with_band(mean, sd, limit, band(sd, limit, eta))
}

/// [`ei_ranjan`] with the half-width `delta` (limit-state units) given explicitly.
pub fn ranjan_with_band(mean: f64, sd: f64, limit: &LimitState, delta: f64) -> f64 {
    let Some(t) = standardize(mean, sd, limit, delta) else {
        let g = limit.g(mean);
        return (delta * delta - (g * g).min(delta * delta)).max(0.0);
    };
    let (cm, cp) = (norm_cdf(t.z_minus), norm_cdf(t.z_plus));
    let (pm, pp) = (norm_pdf(t.z_minus), norm_pdf(t.z_plus));
    let s2 = t.sd * t.sd;
    let v = (t.delta * t.delta - t.offset * t.offset - s2) * (cp - cm)
        + s2 * (t.z_plus * pp - t.z_minus * pm)
        + 2.0 * t.offset * t.sd * (pp - pm);
    v.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson quadrature of `h(mu + sd z) phi(z)` over `[-12, 12]`,
    /// splitting at the kinks of `h`.
    fn quadrature(h: impl Fn(f64) -> f64, mean: f64, sd: f64, kinks: &[f64]) -> f64 {
        let mut pts = vec![-12.0];
        for k in kinks {
            let z = (k - mean) / sd;
            if z > -12.0 && z < 12.0 {
                pts.push(z);
            }
        }
        pts.push(12.0);
        pts.sort_by(f64::total_cmp);
        let f = |z: f64| h(mean + sd * z) * norm_pdf(z);
        let mut total = 0.0;
        for w in pts.windows(2) {
            let n = 20_000;
            let step = (w[1] - w[0]) / n as f64;
            let mut s = f(w[0]) + f(w[1]);
            for i in 1..n {
                s += f(w[0] + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += s * step / 3.0;
        }
        total
    }

    #[test]
    fn zero_sd_gives_zero() {
        let l = LimitState::below(0.3);
        assert_eq!(ei_bichon(0.3, 0.0, &l, 4.0), 0.0);
        assert_eq!(ei_ranjan(-2.0, 0.0, &l, 4.0), 0.0);
    }

    #[test]
    fn far_from_level_set_vanishes() {
        let l = LimitState::below(0.0);
        assert!(ei_bichon(100.0, 1.0, &l, 1.0) <= 1e-10);
        assert!(ei_ranjan(-100.0, 1.0, &l, 1.0) <= 1e-10);
    }

    #[test]
    fn quadrature_oracle_at_the_level_set() {
        let l = LimitState::below(0.0);
        let qb = quadrature(|y| 1.0 - y.abs().min(1.0), 0.0, 1.0, &[-1.0, 0.0, 1.0]);
        let qr = quadrature(|y| 1.0 - (y * y).min(1.0), 0.0, 1.0, &[-1.0, 1.0]);
        // frozen oracle values
        assert!((qb - 0.368_746_6).abs() < 1e-6, "{qb}");
        assert!((qr - 0.483_941_4).abs() < 1e-6, "{qr}");
        assert!((ei_bichon(0.0, 1.0, &l, 1.0) - qb).abs() < 1e-9);
        assert!((ei_ranjan(0.0, 1.0, &l, 1.0) - qr).abs() < 1e-9);
    }

    #[test]
    fn closed_forms_match_quadrature_off_center() {
        let cases: [(f64, f64, f64, f64, f64); 4] = [
            (0.3, 0.7, 0.0, 4.0, 1.0),
            (-1.2, 2.0, 0.5, 1.0, 1.0),
            (2.0, 0.5, -1.7, 2.5, -1.0),
            (5.0, 3.0, 1.0, 0.25, 2.0),
        ];
        for (mean, sd, a, eta, rho) in cases {
            let l = LimitState { rho, a };
            let d = eta.sqrt() * rho.abs() * sd;
            let g = |y: f64| rho * y;
            let kinks: Vec<f64> = [a - d, a, a + d].iter().map(|k| k / rho).collect();
            let qb = quadrature(|y| d - (g(y) - a).abs().min(d), mean, sd, &kinks);
            let qr = quadrature(|y| d * d - (g(y) - a).powi(2).min(d * d), mean, sd, &kinks);
            assert!((ei_bichon(mean, sd, &l, eta) - qb).abs() < 1e-8);
            assert!((ei_ranjan(mean, sd, &l, eta) - qr).abs() < 1e-8);
        }
    }
}

//! Numerical quadrature of the transition integrals.
//!
//! Kernel entries are evaluated from their defining double integral
//!
//! ```text
//! ∫_{a}^{b} e^{-αx} f_X(x) [ ∫_x^∞ f_Y(y) dy ] dx
//! ```
//!
//! where `X ~ Exp(μ)` is the clock of the successor's event and `Y` is the
//! race of all other clocks. Nothing here calls the closed forms in
//! [`crate::kernel`]; the module only exists to cross-check them.

use crate::model::{Action, DecisionState, Event, Model};

/// Adaptive Simpson quadrature on a finite interval.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// ∫_a^∞ f, via the substitution x = a + u / (1 - u).
pub fn integrate_to_infinity(f: &dyn Fn(f64) -> f64, a: f64, tol: f64) -> f64 {
    let g = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - u;
        let v = f(a + u / w) / (w * w);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    adaptive_simpson(&g, 0.0, 1.0, tol)
}

/// Probability that an exponential clock of rate `rate` has not fired by `x`,
/// computed as `∫_x^∞ rate e^{-rate y} dy`.
fn survival(rate: f64, x: f64, tol: f64) -> f64 {
    if rate == 0.0 {
        return 1.0;
    }
    integrate_to_infinity(&|y| rate * (-rate * y).exp(), x, tol)
}

/// Kernel entry `(state, action) → successor` by quadrature. With
/// `discount = Some(α)` this is the discounted transform m_a(s'|s), otherwise
/// the embedded probability P_a(s'|s).
pub fn entry_by_quadrature(
    model: &Model,
    state: &DecisionState,
    action: Action,
    successor: &DecisionState,
    discount: Option<f64>,
) -> f64 {
    let (r_eff, m0) = match (state.event, action) {
        (Event::PacketArrival(n), Action::ServeSbs) => {
            (state.solar, state.battery - model.class(n).sbs_cost_units)
        }
        (Event::SolarTransition, _) => ((state.solar + 1) % model.solar_states(), state.battery),
        _ => (state.solar, state.battery),
    };
    if successor.solar != r_eff || successor.battery < m0 {
        return 0.0;
    }
    let beta = model.params().solar.wind_speed / model.params().solar.cloud_mean_diameters[r_eff];
    let lambdas: Vec<f64> = model.params().traffic.classes.iter().map(|c| c.arrival_rate).collect();
    let mu = match successor.event {
        Event::PacketArrival(n) => lambdas[n],
        Event::SolarTransition => beta,
    };
    let others = lambdas.iter().sum::<f64>() + beta - mu;
    let alpha = discount.unwrap_or(0.0);

    let solar = &model.params().solar;
    let power = solar.conversion_efficiency * solar.intensities[r_eff] * solar.panel_area;
    let top = model.max_units();
    let k = successor.battery - m0;
    // Window of next-event times that lands on the successor's battery level.
    let (lo, hi) = if power == 0.0 || m0 == top {
        if k != 0 {
            return 0.0;
        }
        (0.0, None)
    } else {
        let t = model.params().battery.unit / power;
        if successor.battery == top {
            (k as f64 * t, None)
        } else {
            (k as f64 * t, Some((k + 1) as f64 * t))
        }
    };

    let inner_tol = 1e-14;
    let integrand = |x: f64| (-alpha * x).exp() * mu * (-mu * x).exp() * survival(others, x, inner_tol);
    match hi {
        Some(hi) => adaptive_simpson(&integrand, lo, hi, 1e-13),
        None => integrate_to_infinity(&integrand, lo, 1e-13),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_and_exponential() {
        let v = adaptive_simpson(&|x| x * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
        let v = integrate_to_infinity(&|x| 3.0 * (-3.0 * x).exp(), 0.0, 1e-12);
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn discounted_race_mass() {
        // ∫ e^{-αt} γ e^{-γt} dt = γ/(γ+α)
        let (g, a) = (15.04, 0.05);
        let v = integrate_to_infinity(&|t| (-a * t).exp() * g * (-g * t).exp(), 0.0, 1e-13);
        assert!((v - g / (g + a)).abs() < 1e-10);
    }
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn bessel_i1_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = x / 2.0;
    let mut sum = term;
    for k in 1..200 {
        term *= q / (k as f64 * (k + 1) as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Modified Bessel function of the second kind, order one, for `x > 0`.
///
/// Power series up to `x = 9`, large-argument asymptotic expansion beyond.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k1 needs x > 0");
    if x <= 9.0 {
        let q = x * x / 4.0;
        // ψ(k+1) + ψ(k+2), starting from ψ(1) = -γ, ψ(2) = 1 - γ
        let mut psi1 = -EULER_GAMMA;
        let mut psi2 = 1.0 - EULER_GAMMA;
        let mut coef = 1.0; // (x²/4)^k / (k! (k+1)!)
        let mut sum = (psi1 + psi2) * coef;
        for k in 1..200 {
            let kf = k as f64;
            coef *= q / (kf * (kf + 1.0));
            psi1 += 1.0 / kf;
            psi2 += 1.0 / (kf + 1.0);
            let t = (psi1 + psi2) * coef;
            sum += t;
            if t.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        1.0 / x + (x / 2.0).ln() * bessel_i1_series(x) - x / 4.0 * sum
    } else {
        let mu = 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            let odd = (2 * k - 1) as f64;
            let next = term * (mu - odd * odd) / (k as f64 * 8.0 * x);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() * sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `K₁(x) = ∫₀^∞ exp(−x cosh t) cosh t dt`, trapezoid rule.
    fn k1_quadrature(x: f64) -> f64 {
        let h = 1e-4;
        let mut sum = 0.5 * (-x).exp();
        let mut t: f64 = h;
        loop {
            let f = (-x * t.cosh()).exp() * t.cosh();
            sum += f;
            if f < 1e-300 || t > 30.0 {
                break;
            }
            t += h;
        }
        sum * h
    }

    #[test]
    fn matches_integral_representation() {
        for &x in &[0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 8.99, 9.01, 12.0, 25.0] {
            let exact = k1_quadrature(x);
            let got = bessel_k1(x);
            assert!(
                ((got - exact) / exact).abs() < 1e-8,
                "x = {x}: series {got} vs quadrature {exact}"
            );
        }
    }
}

//! Log-density helpers shared by the prior and the sampler.

use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.8378770664093453;

pub fn ln_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Log density of the half-t (equivalently folded-t about zero) with `df`
/// degrees of freedom and scale `scale`, supported on x > 0.
pub fn ln_half_t_pdf(x: f64, df: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = x / scale;
    2f64.ln() + ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - scale.ln()
        - (df + 1.0) / 2.0 * (z * z / df).ln_1p()
}

/// d/dx of `ln_half_t_pdf` at x > 0.
pub fn ln_half_t_pdf_deriv(x: f64, df: f64, scale: f64) -> f64 {
    -(df + 1.0) * x / (df * scale * scale + x * x)
}

pub fn ln_poisson_pmf(y: f64, ln_lambda: f64) -> f64 {
    y * ln_lambda - ln_lambda.exp() - ln_gamma(y + 1.0)
}

/// Binomial log pmf parameterized by the logit of the success probability.
pub fn ln_binomial_pmf_logit(y: f64, n: f64, logit_p: f64) -> f64 {
    let ln_choose = ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
    // y*logit - n*ln(1+e^logit), stable on both tails
    let log1pe = if logit_p > 0.0 {
        logit_p + (-logit_p).exp().ln_1p()
    } else {
        logit_p.exp().ln_1p()
    };
    ln_choose + y * logit_p - n * log1pe
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

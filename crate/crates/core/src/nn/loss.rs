use super::Real;

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy `−[L ln p + (1 − L) ln(1 − p)]`.
pub fn cross_entropy<F: Real>(p: F, malicious: bool) -> F {
    let eps = F::of(PROB_CLAMP);
    let p = p.max(eps).min(F::one() - eps);
    if malicious {
        -p.ln()
    } else {
        -(F::one() - p).ln()
    }
}

/// `d loss / d logit` for `p = σ(logit)`; zero where the clamp is active.
pub fn cross_entropy_grad_logit<F: Real>(p: F, malicious: bool) -> F {
    let eps = F::of(PROB_CLAMP);
    if p < eps || p > F::one() - eps {
        return F::zero();
    }
    let target = if malicious { F::one() } else { F::zero() };
    p - target
}

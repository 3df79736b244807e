//! Straight-line reimplementations used to cross-check the library.

/// Sentence BLEU over whitespace tokens, computed by explicit enumeration:
/// clipped n-gram counts by linear scan, uniform weights over the orders the
/// reference can hold (at most four), precision floor `eps`, brevity penalty.
pub fn bleu(hyp: &str, reference: &str, eps: f64) -> f64 {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    assert!(!r.is_empty());
    if h.is_empty() {
        return 0.0;
    }
    let orders = r.len().min(4);
    let mut log_p = 0.0;
    for n in 1..=orders {
        let precision = if h.len() < n {
            0.0
        } else {
            let hyp_grams: Vec<&[&str]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
            let ref_grams: Vec<&[&str]> = (0..=r.len() - n).map(|i| &r[i..i + n]).collect();
            let mut seen: Vec<&[&str]> = Vec::new();
            let mut matched = 0usize;
            for g in &hyp_grams {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let in_hyp = hyp_grams.iter().filter(|x| *x == g).count();
                let in_ref = ref_grams.iter().filter(|x| *x == g).count();
                matched += in_hyp.min(in_ref);
            }
            matched as f64 / hyp_grams.len() as f64
        };
        let precision = if precision < eps { eps } else { precision };
        log_p += precision.ln() / orders as f64;
    }
    let c = h.len() as f64;
    let rl = r.len() as f64;
    let bp = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    let score = bp * log_p.exp();
    score.min(1.0)
}

/// `tem0 / (1 + gamma * ln(1 + iter))`.
pub fn cool(iter: usize, tem0: f64, gamma: f64) -> f64 {
    tem0 / (1.0 + gamma * (1.0 + iter as f64).ln())
}

/// Shannon entropy of the normalized losses; uniform when they sum to zero.
pub fn entropy(losses: &[f64], eps: f64) -> f64 {
    let total: f64 = losses.iter().sum();
    let b = losses.len() as f64;
    let h: f64 = losses
        .iter()
        .map(|l| if total > 0.0 { l / total } else { 1.0 / b })
        .map(|p| -p * (p + eps).ln())
        .sum();
    h.max(0.0)
}

/// `p0 + (1 - p0) * exp(best) / sum(exp(losses))`.
pub fn elite(best: f64, losses: &[f64], p0: f64) -> f64 {
    let z: f64 = losses.iter().map(|l| l.exp()).sum();
    p0 + (1.0 - p0) * best.exp() / z
}

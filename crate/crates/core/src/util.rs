/// Binomial coefficient as f64. Exact while the value fits in 53 bits.
pub(crate) fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i as u128 + 1),
            None => return binom_f64(n, k),
        }
    }
    acc as f64
}

fn binom_f64(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub(crate) fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    binom(n as u64, k as u64) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Full pmf vector of Binomial(n, p), entries computed with [`binomial_pmf`].
pub(crate) fn binomial_pmf_vec(n: usize, p: f64) -> Vec<f64> {
    (0..=n).map(|k| binomial_pmf(n, k, p)).collect()
}

/// Distribution of the number of successes among independent Bernoulli trials.
pub(crate) fn poisson_binomial(probs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut dist = vec![1.0];
    for p in probs {
        dist.push(0.0);
        for k in (1..dist.len()).rev() {
            dist[k] = dist[k] * (1.0 - p) + dist[k - 1] * p;
        }
        dist[0] *= 1.0 - p;
    }
    dist
}

pub(crate) fn tail(dist: &[f64], from: usize) -> f64 {
    dist.iter().skip(from).sum()
}

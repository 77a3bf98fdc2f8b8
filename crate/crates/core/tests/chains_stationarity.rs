use mcquad_core::chains::{generate, ChainConfig, ChainKind};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const BINS: usize = 32;

fn chi_square_uniform(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut counts = [0usize; BINS];
    let mut n = 0usize;
    for x in xs {
        counts[((x * BINS as f64) as usize).min(BINS - 1)] += 1;
        n += 1;
    }
    let expected = n as f64 / BINS as f64;
    let stat = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let crit = ChiSquared::new((BINS - 1) as f64).unwrap().inverse_cdf(0.99);
    (stat, crit)
}

/// Correlated chains inflate the chi-square statistic, so the histogram is
/// built from every `thin`-th state, with `thin` well past the mixing time.
fn assert_uniform_marginals(kind: ChainKind, d: usize, seed: u64, thin: usize) {
    let run = generate(&ChainConfig::new(kind, d).seed(seed), 1_000_000).unwrap();
    for j in 0..d {
        let xs = run.design.rows().step_by(thin).map(|r| r[j]);
        let (stat, crit) = chi_square_uniform(xs);
        assert!(stat < crit, "{kind} coordinate {j}: chi-square {stat:.1} over {crit:.1}");
    }
}

#[test]
fn mh_chain_has_uniform_marginals() {
    assert_uniform_marginals(ChainKind::MhUniformTarget, 1, 11, 100);
    assert_uniform_marginals(ChainKind::MhUniformTarget, 2, 12, 100);
}

#[test]
fn mixture_chain_has_uniform_marginals() {
    assert_uniform_marginals(ChainKind::DoeblinMixture, 1, 13, 10);
    assert_uniform_marginals(ChainKind::DoeblinMixture, 2, 14, 10);
}

#[test]
fn mh_acceptance_rate_for_small_steps() {
    for seed in 0..5 {
        let run = generate(&ChainConfig::new(ChainKind::MhUniformTarget, 1).seed(seed), 50_000).unwrap();
        let rate = run.acceptance_rate().unwrap();
        // proposals leave [0,1] only from within 0.1 of an edge, half the time
        assert!(rate > 0.85 && rate < 1.0, "seed {seed}: acceptance {rate}");
        assert!((rate - 0.9).abs() < 0.01, "seed {seed}: acceptance {rate}");
    }
}

fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let cov: f64 = (0..n - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum();
    cov / var
}

#[test]
fn autocorrelation_decays_geometrically() {
    let run = generate(&ChainConfig::new(ChainKind::DoeblinMixture, 1).seed(21), 400_000).unwrap();
    let xs = run.design.column(0);
    let acf: Vec<f64> = (1..=4).map(|k| autocorrelation(&xs, k)).collect();
    for w in acf.windows(2) {
        assert!(w[1] < w[0], "acf not decreasing: {acf:?}");
    }
    // successive ratios stay roughly constant for a geometric decay
    let ratios: Vec<f64> = acf.windows(2).map(|w| w[1] / w[0]).collect();
    for r in &ratios {
        assert!((r - ratios[0]).abs() < 0.1, "ratios {ratios:?}");
    }

    let run = generate(&ChainConfig::new(ChainKind::MhUniformTarget, 1).seed(22), 400_000).unwrap();
    let xs = run.design.column(0);
    let (a10, a20, a40) = (autocorrelation(&xs, 10), autocorrelation(&xs, 20), autocorrelation(&xs, 40));
    assert!(a10 > a20 && a20 > a40 && a40 > 0.0, "{a10} {a20} {a40}");
    // log-linear in the lag: the step from 20 to 40 halves the log twice as far
    let (s1, s2) = ((a20 / a10).ln() / 10.0, (a40 / a20).ln() / 20.0);
    assert!((s1 - s2).abs() < 0.2 * s1.abs(), "decay rates {s1} {s2}");
}

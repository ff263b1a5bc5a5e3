//! Slow, direct reference implementations for checking the pipeline's
//! algorithms. Everything here works on plain slices and recomputes from
//! definitions rather than sharing code with the library under test.

/// Binary STAPLE by plain expectation-maximization.
///
/// `masks` are rater decisions (0/1) of equal length. Every rater starts at
/// sensitivity = specificity = `init`; the prior is the mean rater
/// foreground fraction. Iteration stops when, after the second E-step, no
/// posterior moves by `tol` or more, or after `max_iter` E-steps. Returns the
/// posterior foreground probabilities and `(sensitivity, specificity)` per
/// rater.
pub fn staple_em(masks: &[Vec<u8>], init: f64, tol: f64, max_iter: usize) -> (Vec<f64>, Vec<(f64, f64)>) {
    let raters = masks.len();
    let n = masks[0].len();
    let mut fg_votes = 0usize;
    for m in masks {
        fg_votes += m.iter().filter(|&&v| v == 1).count();
    }
    let prior = fg_votes as f64 / (raters * n) as f64;
    let mut sens = vec![init; raters];
    let mut spec = vec![init; raters];
    let mut w = vec![prior; n];
    for iter in 1..=max_iter {
        let mut biggest = 0.0f64;
        for i in 0..n {
            let mut fg = prior;
            let mut bg = 1.0 - prior;
            for r in 0..raters {
                if masks[r][i] == 1 {
                    fg *= sens[r];
                    bg *= 1.0 - spec[r];
                } else {
                    fg *= 1.0 - sens[r];
                    bg *= spec[r];
                }
            }
            let post = if fg + bg > 0.0 { fg / (fg + bg) } else { prior };
            biggest = biggest.max((post - w[i]).abs());
            w[i] = post;
        }
        if iter > 1 && biggest < tol {
            break;
        }
        let sum_w: f64 = w.iter().sum();
        let sum_not: f64 = w.iter().map(|x| 1.0 - x).sum();
        for r in 0..raters {
            let hit: f64 = (0..n).filter(|&i| masks[r][i] == 1).map(|i| w[i]).sum();
            let reject: f64 = (0..n).filter(|&i| masks[r][i] == 0).map(|i| 1.0 - w[i]).sum();
            if sum_w > 0.0 {
                sens[r] = hit / sum_w;
            }
            if sum_not > 0.0 {
                spec[r] = reject / sum_not;
            }
        }
    }
    (w, sens.into_iter().zip(spec).collect())
}

fn centroid(points: &[&[f64]]) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for p in points {
        for k in 0..d {
            c[k] += p[k];
        }
    }
    for v in &mut c {
        *v /= points.len() as f64;
    }
    c
}

/// Within-cluster sum of squared deviations from the centroid.
pub fn ess(points: &[&[f64]]) -> f64 {
    let c = centroid(points);
    points
        .iter()
        .map(|p| p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

fn merge_cost(features: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let pa: Vec<&[f64]> = a.iter().map(|&i| features[i].as_slice()).collect();
    let pb: Vec<&[f64]> = b.iter().map(|&i| features[i].as_slice()).collect();
    let all: Vec<&[f64]> = pa.iter().chain(&pb).copied().collect();
    ess(&all) - ess(&pa) - ess(&pb)
}

/// Ward agglomeration recomputing every candidate merge's ESS increase from
/// the raw points. Returns the sequence of partitions from `n` clusters down
/// to one; each partition is a sorted list of sorted member lists.
pub fn ward_exhaustive(features: &[Vec<f64>]) -> Vec<Vec<Vec<usize>>> {
    let mut clusters: Vec<Vec<usize>> = (0..features.len()).map(|i| vec![i]).collect();
    let mut history = vec![clusters.clone()];
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let c = merge_cost(features, &clusters[i], &clusters[j]);
                if c < best.0 {
                    best = (c, i, j);
                }
            }
        }
        let (_, i, j) = best;
        let b = clusters.remove(j);
        clusters[i].extend(b);
        clusters[i].sort_unstable();
        clusters.sort();
        history.push(clusters.clone());
    }
    history
}

/// The pair of points whose merge increases the ESS least, and that
/// increase.
pub fn ward_first_merge(features: &[Vec<f64>]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::INFINITY);
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let c = merge_cost(features, &[i], &[j]);
            if c < best.2 {
                best = (i, j, c);
            }
        }
    }
    best
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette straight from the definition; members of singleton
/// clusters score 0.
pub fn silhouette(features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = features.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own == 1 {
            continue;
        }
        let a = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| euclid(&features[i], &features[j]))
            .sum::<f64>()
            / (own - 1) as f64;
        let mut others: Vec<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
        others.sort_unstable();
        others.dedup();
        let b = others
            .iter()
            .map(|&l| {
                let members: Vec<usize> = (0..n).filter(|&j| labels[j] == l).collect();
                members.iter().map(|&j| euclid(&features[i], &features[j])).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Calls `f` with every `k`-subset of `0..n` (as a membership vector).
fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[bool])) {
    fn rec(start: usize, left: usize, chosen: &mut Vec<bool>, f: &mut impl FnMut(&[bool])) {
        if left == 0 {
            f(chosen);
            return;
        }
        for i in start..=chosen.len() - left {
            chosen[i] = true;
            rec(i + 1, left - 1, chosen, f);
            chosen[i] = false;
        }
    }
    let mut chosen = vec![false; n];
    rec(0, k, &mut chosen, f);
}

/// `U` for the first sample by pairwise comparison (ties count one half).
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> f64 {
    let mut u = 0.0;
    for a in x {
        for b in y {
            if a > b {
                u += 1.0;
            } else if a == b {
                u += 0.5;
            }
        }
    }
    u
}

/// Exact two-sided Mann-Whitney p by enumerating every relabelling of the
/// pooled sample: `2·min(P(U ≤ u), P(U ≥ u))`, capped at 1.
pub fn mann_whitney_enumerated(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let u_obs = mann_whitney_u(x, y);
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for_each_subset(pooled.len(), x.len(), &mut |member| {
        let gx: Vec<f64> = (0..pooled.len()).filter(|&i| member[i]).map(|i| pooled[i]).collect();
        let gy: Vec<f64> = (0..pooled.len()).filter(|&i| !member[i]).map(|i| pooled[i]).collect();
        let u = mann_whitney_u(&gx, &gy);
        total += 1;
        if u <= u_obs + 1e-9 {
            le += 1;
        }
        if u >= u_obs - 1e-9 {
            ge += 1;
        }
    });
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

fn choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Two-sided Fisher exact p for `[[a, b], [c, d]]` by listing every table
/// with the same margins and summing those no more likely than the observed
/// one (relative tolerance 1e-7).
pub fn fisher_enumerated(table: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = table;
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let n = r1 + r2;
    let prob = |x: u64| choose(r1, x) * choose(r2, c1 - x) / choose(n, c1);
    let observed = prob(a);
    let mut p = 0.0;
    for x in 0..=r1.min(c1) {
        if c1 - x > r2 {
            continue;
        }
        let q = prob(x);
        if q <= observed * (1.0 + 1e-7) {
            p += q;
        }
    }
    p.min(1.0)
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Largest gap between the empirical CDF of `p` and the uniform CDF.
pub fn ks_uniform_statistic(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic 95% Kolmogorov–Smirnov critical value for `n` draws.
pub fn ks_critical_95(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

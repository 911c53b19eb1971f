//! Starting partitions for EM.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const LLOYD_MAX_ITER: usize = 100;

fn sq_dist(x: &DMatrix<f64>, i: usize, center: &[f64]) -> f64 {
    center
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let d = x[(i, j)] - c;
            d * d
        })
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations. Returns 0-based labels.
pub(crate) fn kmeans_labels(x: &DMatrix<f64>, g: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (n, p) = x.shape();
    let row = |i: usize| -> Vec<f64> { (0..p).map(|j| x[(i, j)]).collect() };
    let mut centers: Vec<Vec<f64>> = vec![row(rng.gen_range(0..n))];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = row(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for iter in 0..LLOYD_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..g)
                .map(|k| (k, sq_dist(x, i, &centers[k])))
                .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc })
                .0;
            if best != *label {
                *label = best;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; p]; g];
        let mut counts = vec![0usize; g];
        for (i, &k) in labels.iter().enumerate() {
            counts[k] += 1;
            for j in 0..p {
                sums[k][j] += x[(i, j)];
            }
        }
        for k in 0..g {
            if counts[k] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .map(|i| (i, sq_dist(x, i, &centers[labels[i]])))
                    .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc })
                    .0;
                centers[k] = row(far);
                labels[far] = k;
            } else {
                centers[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
    }
    labels
}

/// Ward agglomerative clustering (nearest-neighbour chain) cut at `g` groups.
/// Returns 0-based labels numbered by first appearance.
pub(crate) fn ward_labels(x: &DMatrix<f64>, g: usize) -> Vec<usize> {
    let (n, p) = x.shape();
    let mut size = vec![1.0f64; n];
    let mut active = vec![true; n];
    let mut dist = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = (0..p).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    let mut merges: Vec<(usize, usize)> = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap());
        }
        loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let mut best = prev.unwrap_or(usize::MAX);
            let mut best_d = prev.map(|b| dist[(a, b)]).unwrap_or(f64::INFINITY);
            for c in 0..n {
                if active[c] && c != a && dist[(a, c)] < best_d {
                    best_d = dist[(a, c)];
                    best = c;
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                let (i, j) = if a < best { (a, best) } else { (best, a) };
                // Lance-Williams update for Ward's criterion on squared distances.
                for k in 0..n {
                    if active[k] && k != i && k != j {
                        let t = size[i] + size[j] + size[k];
                        let d = ((size[i] + size[k]) * dist[(i, k)]
                            + (size[j] + size[k]) * dist[(j, k)]
                            - size[k] * dist[(i, j)])
                            / t;
                        dist[(i, k)] = d;
                        dist[(k, i)] = d;
                    }
                }
                size[i] += size[j];
                active[j] = false;
                merges.push((i, j));
                remaining -= 1;
                break;
            }
            chain.push(best);
        }
    }
    // Replay all but the last g-1 merges with union-find.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = i;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    // NN-chain emits merges out of height order; cut after sorting by height.
    let keep = n.saturating_sub(g.max(1));
    let order = merge_order_by_height(x, &merges);
    for &m in order.iter().take(keep) {
        let (i, j) = merges[m];
        let ri = find(&mut parent, i);
        let rj = find(&mut parent, j);
        parent[rj] = ri;
    }
    let mut ids = std::collections::HashMap::new();
    (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect()
}

/// Merge indices sorted by Ward merge cost, recomputed from the cluster
/// contents so the ordering is exact.
fn merge_order_by_height(x: &DMatrix<f64>, merges: &[(usize, usize)]) -> Vec<usize> {
    let (n, p) = x.shape();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut heights = Vec::with_capacity(merges.len());
    let centroid = |m: &[usize]| -> Vec<f64> {
        (0..p)
            .map(|j| m.iter().map(|&i| x[(i, j)]).sum::<f64>() / m.len() as f64)
            .collect()
    };
    for &(i, j) in merges {
        let (a, b) = (members[i].clone(), members[j].clone());
        let ca = centroid(&a);
        let cb = centroid(&b);
        let d2: f64 = ca.iter().zip(&cb).map(|(u, v)| (u - v).powi(2)).sum();
        let na = a.len() as f64;
        let nb = b.len() as f64;
        heights.push(na * nb / (na + nb) * d2);
        let mut merged = a;
        merged.extend(b);
        members[i] = merged;
        members[j].clear();
    }
    let mut order: Vec<usize> = (0..merges.len()).collect();
    order.sort_by(|&a, &b| heights[a].total_cmp(&heights[b]).then(a.cmp(&b)));
    order
}

/// Random soft responsibilities, each row drawn uniformly from the simplex.
pub(crate) fn random_responsibilities(n: usize, g: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, g);
    for i in 0..n {
        let mut total = 0.0;
        for k in 0..g {
            let e = -(1.0 - rng.gen::<f64>()).ln();
            z[(i, k)] = e;
            total += e;
        }
        for k in 0..g {
            z[(i, k)] /= total;
        }
    }
    z
}

pub(crate) fn hard_responsibilities(labels: &[usize], g: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(labels.len(), g);
    for (i, &k) in labels.iter().enumerate() {
        z[(i, k)] = 1.0;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn blobs() -> DMatrix<f64> {
        let mut v = Vec::new();
        for i in 0..10 {
            let t = i as f64 * 0.01;
            v.extend([t, -t]);
        }
        for i in 0..10 {
            let t = i as f64 * 0.01;
            v.extend([10.0 + t, 10.0 - t]);
        }
        DMatrix::from_row_slice(20, 2, &v)
    }

    #[test]
    fn kmeans_separates_blobs() {
        let x = blobs();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = kmeans_labels(&x, 2, &mut rng);
        assert!(l[..10].iter().all(|&k| k == l[0]));
        assert!(l[10..].iter().all(|&k| k == l[10]));
        assert_ne!(l[0], l[10]);
    }

    #[test]
    fn ward_separates_blobs() {
        let x = blobs();
        let l = ward_labels(&x, 2);
        assert!(l[..10].iter().all(|&k| k == 0));
        assert!(l[10..].iter().all(|&k| k == 1));
        let l3 = ward_labels(&x, 3);
        assert_eq!(l3.iter().copied().max().unwrap(), 2);
        assert!(ward_labels(&x, 1).iter().all(|&k| k == 0));
    }

    #[test]
    fn random_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_responsibilities(5, 3, &mut rng);
        for r in z.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}

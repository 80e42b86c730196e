//! Naive reference implementations used to cross-check the optimized code.
//!
//! Nothing here shares code with [`crate::graphgen`]: correlations use the
//! two-pass textbook formula and the aggregation loop follows the pseudocode
//! line by line over a full correlation matrix.

/// Two-pass Pearson coefficient, clamped to [-1, 1]. Returns 0 when either
/// series is constant.
pub fn pearson_two_pass(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "series lengths differ");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for i in 0..a.len() {
        num += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
    }
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    (num / (sa.sqrt() * sb.sqrt())).clamp(-1.0, 1.0)
}

/// Reference aggregation.
///
/// `cells[i]` is the `(row, col)` of region `i`, regions listed in visiting
/// order; `series[i]` its demand. Returns groups of region indices, each
/// sorted, ordered by first element.
pub fn aggregate_reference(cells: &[(usize, usize)], series: &[Vec<f64>], epsilon: f64) -> Vec<Vec<usize>> {
    let m = cells.len();
    let mut r = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            r[i][j] = pearson_two_pass(&series[i], &series[j]);
        }
    }
    let adjacent = |i: usize, j: usize| {
        let (a, b) = (cells[i], cells[j]);
        i != j && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1
    };
    let mut label = vec![0u8; m];
    let neighbor_set = |x: usize, label: &[u8]| -> Vec<usize> {
        (0..m)
            .filter(|&y| label[y] == 0 && adjacent(x, y) && r[x][y] > epsilon)
            .collect()
    };

    let mut groups = Vec::new();
    for i in 0..m {
        if label[i] != 0 {
            continue;
        }
        let mut n_i = neighbor_set(i, &label);
        if n_i.is_empty() {
            continue;
        }
        let snapshot = n_i.clone();
        for &j in &snapshot {
            let n_j = neighbor_set(j, &label);
            let r_j: Vec<f64> = n_j.iter().map(|&k| r[k][j]).collect();
            let max = r_j.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max > r[i][j] {
                n_i.retain(|&x| x != j);
            }
        }
        for &j in &n_i {
            label[j] = 1;
        }
        label[i] = 1;
        let mut c = vec![i];
        c.extend(n_i);
        groups.push(c);
    }
    for i in 0..m {
        if label[i] == 0 {
            groups.push(vec![i]);
        }
    }
    for g in &mut groups {
        g.sort();
    }
    groups.sort();
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_value() {
        assert!((pearson_two_pass(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]) - 0.6).abs() < 1e-15);
        assert_eq!(pearson_two_pass(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn strip_with_rival() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![2.0, 1.0, 4.0, 3.0];
        let groups = aggregate_reference(&[(0, 0), (0, 1), (0, 2)], &[a, b.clone(), b], 0.5);
        assert_eq!(groups, vec![vec![0], vec![1, 2]]);
    }
}

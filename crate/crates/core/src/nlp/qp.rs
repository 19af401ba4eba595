use crate::linalg::{dot, DMat};

/// Inequality row `aᵀd ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    IterationLimit,
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub d: Vec<f64>,
    /// `(row, multiplier ≥ 0)` for the final working set.
    pub active: Vec<(usize, f64)>,
    pub iterations: usize,
    pub status: QpStatus,
}

/// Convex QP `min ½dᵀHd + gᵀd` s.t. `aᵢᵀd ≥ bᵢ` by a primal active-set
/// method started at `d = 0`, which must be feasible (`bᵢ ≤ 0`).
///
/// `H` must be symmetric positive definite.
pub fn solve_qp(h: &DMat<f64>, g: &[f64], rows: &[Row], max_iter: usize) -> QpSolution {
    let m = g.len();
    debug_assert!(rows.iter().all(|r| r.b <= 0.0 && r.a.len() == m));
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.a.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut d = vec![0.0; m];
    let mut working: Vec<usize> = Vec::new();
    let mut in_working = vec![false; rows.len()];
    for it in 0..max_iter {
        let mut grad = h.mul_vec(&d);
        for (gr, gi) in grad.iter_mut().zip(g) {
            *gr += gi;
        }
        let Some((p, lambda)) = equality_step(h, &grad, rows, &working) else {
            return QpSolution {
                d,
                active: Vec::new(),
                iterations: it,
                status: QpStatus::Singular,
            };
        };
        let pnorm = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let dnorm = d.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if pnorm <= 1e-14 * dnorm {
            let worst = lambda.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1));
            match worst {
                Some((j, &l))
                    if l < -1e-12 * (1.0 + grad.iter().fold(0.0f64, |a, v| a.max(v.abs()))) =>
                {
                    in_working[working[j]] = false;
                    working.remove(j);
                    continue;
                }
                _ => {
                    let active = working
                        .iter()
                        .zip(&lambda)
                        .map(|(&i, &l)| (i, l.max(0.0)))
                        .collect();
                    return QpSolution {
                        d,
                        active,
                        iterations: it,
                        status: QpStatus::Optimal,
                    };
                }
            }
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for (i, row) in rows.iter().enumerate() {
            if in_working[i] {
                continue;
            }
            let ap = dot(&row.a, &p);
            if ap < -1e-13 * norms[i] * pnorm {
                let slack = (row.b - dot(&row.a, &d)).min(0.0);
                let step = slack / ap;
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
        }
        for (di, pi) in d.iter_mut().zip(&p) {
            *di += alpha * pi;
        }
        if let Some(i) = blocking {
            working.push(i);
            in_working[i] = true;
        }
    }
    QpSolution {
        d,
        active: Vec::new(),
        iterations: max_iter,
        status: QpStatus::IterationLimit,
    }
}

/// Solves `min ½pᵀHp + gradᵀp` s.t. `A_W p = 0`; returns `p` and the
/// multipliers `λ` with `Hp + grad = A_Wᵀλ`.
fn equality_step(
    h: &DMat<f64>,
    grad: &[f64],
    rows: &[Row],
    working: &[usize],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let m = grad.len();
    let w = working.len();
    let mut kkt = DMat::zeros(m + w, m + w);
    for i in 0..m {
        kkt.row_mut(i)[..m].copy_from_slice(h.row(i));
    }
    for (j, &r) in working.iter().enumerate() {
        for i in 0..m {
            kkt[(i, m + j)] = -rows[r].a[i];
            kkt[(m + j, i)] = rows[r].a[i];
        }
    }
    let mut rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
    rhs.resize(m + w, 0.0);
    kkt.lu().ok()?.solve_in_place(&mut rhs);
    if rhs.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let lambda = rhs.split_off(m);
    Some((rhs, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn boxed(lo: &[f64], hi: &[f64]) -> Vec<Row> {
        let m = lo.len();
        let mut rows = Vec::new();
        for j in 0..m {
            let mut a = vec![0.0; m];
            a[j] = 1.0;
            rows.push(Row {
                a: a.clone(),
                b: lo[j],
            });
            a[j] = -1.0;
            rows.push(Row { a, b: -hi[j] });
        }
        rows
    }

    #[test]
    fn unconstrained_minimum() {
        let h = DMat::from_row_major(2, 2, vec![2.0, 0.5, 0.5, 1.0]);
        let g = [-1.0, 2.0];
        let sol = solve_qp(&h, &g, &[], 10);
        assert_eq!(sol.status, QpStatus::Optimal);
        let r = h.mul_vec(&sol.d);
        assert!((r[0] + g[0]).abs() < 1e-14 && (r[1] + g[1]).abs() < 1e-14);
    }

    #[test]
    fn clipped_box_minimum() {
        // min (d-3)² on [-1, 2]
        let h = DMat::from_row_major(1, 1, vec![2.0]);
        let sol = solve_qp(&h, &[-6.0], &boxed(&[-1.0], &[2.0]), 10);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.d[0] - 2.0).abs() < 1e-15);
        assert_eq!(sol.active.len(), 1);
        assert_eq!(sol.active[0].0, 1);
        assert!((sol.active[0].1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn general_row_and_release() {
        // min ½|d|² - (1, 1)ᵀd s.t. d0 + d1 ≤ 1, d0 ≥ -5: solution (½, ½)
        let h = DMat::identity(2);
        let rows = vec![
            Row {
                a: vec![-1.0, -1.0],
                b: -1.0,
            },
            Row {
                a: vec![1.0, 0.0],
                b: -5.0,
            },
        ];
        let sol = solve_qp(&h, &[-1.0, -1.0], &rows, 20);
        assert!((sol.d[0] - 0.5).abs() < 1e-14 && (sol.d[1] - 0.5).abs() < 1e-14);
        assert_eq!(sol.active, vec![(0, 0.5)]);
    }

    /// Brute-force oracle over all active subsets of a small box QP.
    fn brute_force(h: &DMat<f64>, g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let m = g.len();
        let mut best = (f64::INFINITY, vec![]);
        for code in 0..3usize.pow(m as u32) {
            let mut state = vec![0; m];
            let mut c = code;
            for s in state.iter_mut() {
                *s = c % 3;
                c /= 3;
            }
            let free: Vec<usize> = (0..m).filter(|&j| state[j] == 0).collect();
            let mut d: Vec<f64> = (0..m).map(|j| [0.0, lo[j], hi[j]][state[j]]).collect();
            if !free.is_empty() {
                let hf = DMat::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
                let mut rhs: Vec<f64> = free
                    .iter()
                    .map(|&a| {
                        -g[a]
                            - (0..m)
                                .filter(|j| state[*j] != 0)
                                .map(|j| h[(a, j)] * d[j])
                                .sum::<f64>()
                    })
                    .collect();
                hf.lu().unwrap().solve_in_place(&mut rhs);
                for (k, &a) in free.iter().enumerate() {
                    d[a] = rhs[k];
                }
            }
            if (0..m).any(|j| d[j] < lo[j] - 1e-12 || d[j] > hi[j] + 1e-12) {
                continue;
            }
            let hd = h.mul_vec(&d);
            let f = 0.5 * dot(&d, &hd) + dot(g, &d);
            if f < best.0 {
                best = (f, d);
            }
        }
        best.1
    }

    proptest! {
        #[test]
        fn matches_enumeration_on_random_box_qps(
            l in prop::collection::vec(-2.0f64..2.0, 9),
            g in prop::collection::vec(-5.0f64..5.0, 3),
            lo in prop::collection::vec(-2.0f64..0.0, 3),
            width in prop::collection::vec(0.1f64..2.0, 3),
        ) {
            let lm = DMat::from_row_major(3, 3, l);
            let mut h = lm.matmul(&lm.transpose());
            for i in 0..3 {
                h[(i, i)] += 0.5;
            }
            let hi: Vec<f64> = lo.iter().zip(&width).map(|(a, w)| (a + w).max(0.0)).collect();
            let sol = solve_qp(&h, &g, &boxed(&lo, &hi), 50);
            prop_assert_eq!(sol.status, QpStatus::Optimal);
            let oracle = brute_force(&h, &g, &lo, &hi);
            for (a, b) in sol.d.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", sol.d, oracle);
            }
        }
    }
}

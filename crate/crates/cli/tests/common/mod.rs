//! Test-side oracles for the acceptance suite, independent of the library
//! paths they check.

use lwlab_core::*;

/// Exact maximum of the fractional allocation objective over a grid of
/// y-values (multiples of `step`): depth-first enumeration over per-item
/// supply splits with an admissible bound. Independent of the simplex.
pub fn llp_grid_oracle(g: &GameInstance, step: f64) -> f64 {
    let n = g.num_bidders();
    let m = g.num_items;
    let values: Vec<Vec<f64>> = g
        .bidders
        .iter()
        .map(|b| match &b.valuation {
            Valuation::Additive { values } => values.clone(),
            _ => panic!("grid oracle is additive-only"),
        })
        .collect();
    let k = (1.0 / step).round() as u32;

    fn splits(n: usize, k: u32) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; n];
        fn go(n: usize, i: usize, rem: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if i == n {
                out.push(cur.clone());
                return;
            }
            for u in 0..=rem {
                cur[i] = u;
                go(n, i + 1, rem - u, cur, out);
            }
            cur[i] = 0;
        }
        go(n, 0, k, &mut cur, &mut out);
        out
    }
    let item_splits = splits(n, k);

    // greedy incumbent on the grid
    let mut incumbent = {
        let mut used = vec![0.0f64; n];
        let mut supply = vec![k; m];
        let mut total = 0.0;
        loop {
            let mut gain = 0.0;
            let mut pick = None;
            for j in 0..m {
                if supply[j] == 0 {
                    continue;
                }
                for i in 0..n {
                    let inc = values[i][j] * step;
                    if used[i] + inc <= g.bidders[i].budget + 1e-12 && inc > gain + 1e-12 {
                        gain = inc;
                        pick = Some((i, j));
                    }
                }
            }
            match pick {
                Some((i, j)) => {
                    used[i] += gain;
                    supply[j] -= 1;
                    total += gain;
                }
                None => break,
            }
        }
        total
    };

    // admissible bound: per-item fractional greedy against current remaining
    // budgets, capped by the total remaining budget (budgets get re-used per
    // item, so this only overestimates)
    fn bound(values: &[Vec<f64>], budgets_left: &[f64], from: usize, m: usize) -> f64 {
        let total_budget: f64 = budgets_left.iter().sum();
        let mut per_item_sum = 0.0;
        for j in from..m {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[b][j].partial_cmp(&values[a][j]).unwrap());
            let mut supply = 1.0f64;
            let mut got = 0.0;
            for i in order {
                if supply <= 0.0 || values[i][j] <= 0.0 {
                    break;
                }
                let frac = (budgets_left[i] / values[i][j]).min(supply);
                got += values[i][j] * frac;
                supply -= frac;
            }
            per_item_sum += got;
        }
        per_item_sum.min(total_budget)
    }

    struct Ctx<'a> {
        values: &'a [Vec<f64>],
        splits: &'a [Vec<u32>],
        budgets: Vec<f64>,
        step: f64,
        m: usize,
        best: f64,
    }
    fn dfs(ctx: &mut Ctx<'_>, j: usize, used: &mut Vec<f64>, total: f64) {
        if j == ctx.m {
            if total > ctx.best {
                ctx.best = total;
            }
            return;
        }
        let budgets_left: Vec<f64> =
            used.iter().zip(&ctx.budgets).map(|(u, b)| (b - u).max(0.0)).collect();
        if total + bound(ctx.values, &budgets_left, j, ctx.m) <= ctx.best + 1e-12 {
            return;
        }
        'split: for split in ctx.splits {
            let mut delta = 0.0;
            for i in 0..used.len() {
                let inc = ctx.values[i][j] * split[i] as f64 * ctx.step;
                if used[i] + inc > ctx.budgets[i] + 1e-9 {
                    continue 'split;
                }
                delta += inc;
            }
            for i in 0..used.len() {
                used[i] += ctx.values[i][j] * split[i] as f64 * ctx.step;
            }
            dfs(ctx, j + 1, used, total + delta);
            for i in 0..used.len() {
                used[i] -= ctx.values[i][j] * split[i] as f64 * ctx.step;
            }
        }
    }
    let budgets: Vec<f64> = g.bidders.iter().map(|b| b.budget).collect();
    let mut ctx = Ctx { values: &values, splits: &item_splits, budgets, step, m, best: incumbent };
    let mut used = vec![0.0; n];
    dfs(&mut ctx, 0, &mut used, 0.0);
    incumbent = ctx.best;
    incumbent
}

/// Exact LP optimum by enumerating candidate basic solutions: every choice of
/// active constraints among budgets, supplies and nonnegativity. Independent
/// of the simplex pivoting path.
pub fn llp_vertex_oracle(g: &GameInstance) -> f64 {
    let n = g.num_bidders();
    let m = g.num_items;
    let vars = n * m;
    let values: Vec<Vec<f64>> = g
        .bidders
        .iter()
        .map(|b| match &b.valuation {
            Valuation::Additive { values } => values.clone(),
            _ => panic!("vertex oracle is additive-only"),
        })
        .collect();
    let rows = n + m + vars;
    let mut a = vec![vec![0.0; vars]; rows];
    let mut b = vec![0.0; rows];
    for i in 0..n {
        for j in 0..m {
            a[i][i * m + j] = values[i][j];
        }
        b[i] = g.bidders[i].budget;
    }
    for j in 0..m {
        for i in 0..n {
            a[n + j][i * m + j] = 1.0;
        }
        b[n + j] = 1.0;
    }
    for v in 0..vars {
        a[n + m + v][v] = 1.0;
    }

    fn solve(a: &[Vec<f64>], b: &[f64], rows: &[usize], vars: usize) -> Option<Vec<f64>> {
        let mut mat = vec![vec![0.0; vars + 1]; vars];
        for (r, &row) in rows.iter().enumerate() {
            mat[r][..vars].copy_from_slice(&a[row]);
            mat[r][vars] = b[row];
        }
        for col in 0..vars {
            let piv = (col..vars)
                .max_by(|&x, &y| mat[x][col].abs().partial_cmp(&mat[y][col].abs()).unwrap())?;
            if mat[piv][col].abs() < 1e-9 {
                return None;
            }
            mat.swap(col, piv);
            let d = mat[col][col];
            for v in mat[col].iter_mut() {
                *v /= d;
            }
            for r in 0..vars {
                if r != col {
                    let f = mat[r][col];
                    if f != 0.0 {
                        for c2 in 0..=vars {
                            mat[r][c2] -= f * mat[col][c2];
                        }
                    }
                }
            }
        }
        Some((0..vars).map(|r| mat[r][vars]).collect())
    }
    let feasible = |x: &[f64]| -> bool {
        if x.iter().any(|&v| v < -1e-7) {
            return false;
        }
        for (i, bidder) in g.bidders.iter().enumerate() {
            let spend: f64 = (0..m).map(|j| values[i][j] * x[i * m + j]).sum();
            if spend > bidder.budget + 1e-7 {
                return false;
            }
        }
        for j in 0..m {
            let supply: f64 = (0..n).map(|i| x[i * m + j]).sum();
            if supply > 1.0 + 1e-7 {
                return false;
            }
        }
        true
    };

    let mut best = 0.0f64;
    let mut chosen = vec![0usize; vars];
    fn combos(
        a: &[Vec<f64>],
        b: &[f64],
        vars: usize,
        start: usize,
        depth: usize,
        chosen: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if depth == vars {
            visit(chosen);
            return;
        }
        for r in start..a.len() {
            chosen[depth] = r;
            combos(a, b, vars, r + 1, depth + 1, chosen, visit);
        }
    }
    let mut visit = |rows_sel: &[usize]| {
        if let Some(x) = solve(&a, &b, rows_sel, vars) {
            if feasible(&x) {
                let obj: f64 = (0..n)
                    .map(|i| (0..m).map(|j| values[i][j] * x[i * m + j]).sum::<f64>())
                    .sum();
                if obj > best {
                    best = obj;
                }
            }
        }
    };
    combos(&a, &b, vars, 0, 0, &mut chosen, &mut visit);
    best
}

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual}, expected {expected} (tol {tol})"
    );
}

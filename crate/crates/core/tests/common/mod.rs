//! Helpers shared by the integration tests: brute-force statistics and
//! central finite differences.
#![allow(dead_code)]

pub mod gradcheck;

use graphopt::graph::Graph;
use graphopt::nn::Matrix;

/// Statistics recomputed from a dense adjacency matrix with the most
/// direct formulas available.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveStats {
    pub triangles: u64,
    pub avg_clustering: f64,
    pub largest_cc: usize,
    pub assortativity: Option<f64>,
    pub max_degree: usize,
}

pub fn dense(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let mut a = vec![vec![false; n]; n];
    for &(u, v) in g.edges() {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

pub fn naive_stats(g: &Graph) -> NaiveStats {
    let a = dense(g);
    let n = a.len();
    let deg: Vec<usize> = a.iter().map(|row| row.iter().filter(|&&x| x).count()).collect();

    let mut triangles = 0;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if a[i][j] && a[j][k] && a[i][k] {
                    triangles += 1;
                }
            }
        }
    }

    let mut clustering = 0.0;
    for v in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&u| a[v][u]).collect();
        if nb.len() < 2 {
            continue;
        }
        let mut links = 0;
        for (i, &x) in nb.iter().enumerate() {
            for &y in &nb[i + 1..] {
                if a[x][y] {
                    links += 1;
                }
            }
        }
        clustering += links as f64 / (nb.len() * (nb.len() - 1) / 2) as f64;
    }
    let avg_clustering = if n == 0 { 0.0 } else { clustering / n as f64 };

    // Flood fill from every unvisited node.
    let mut seen = vec![false; n];
    let mut largest_cc = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for u in 0..n {
                if a[v][u] && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        largest_cc = largest_cc.max(size);
    }

    // Pearson correlation of degrees at the two ends of every edge, each
    // edge counted in both directions.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if a[u][v] {
                xs.push(deg[u] as f64);
                ys.push(deg[v] as f64);
            }
        }
    }
    let assortativity = if xs.is_empty() {
        None
    } else {
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        if vx == 0.0 || vy == 0.0 {
            None
        } else {
            Some(cov / (vx * vy).sqrt())
        }
    };

    NaiveStats {
        triangles,
        avg_clustering,
        largest_cc,
        assortativity,
        max_degree: deg.iter().copied().max().unwrap_or(0),
    }
}

/// Central differences of `loss` with respect to every entry of the
/// matrices returned by `params`.
pub fn numeric_grads<A>(
    model: &mut A,
    params: fn(&mut A) -> Vec<&mut Matrix>,
    loss: impl Fn(&A) -> f64,
    h: f64,
) -> Vec<Matrix> {
    let shapes: Vec<(usize, usize)> = params(model).iter().map(|m| m.shape()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (i, &(r, c)) in shapes.iter().enumerate() {
        let mut g = Matrix::zeros(r, c);
        for j in 0..r * c {
            let orig = params(model)[i].data()[j];
            params(model)[i].data_mut()[j] = orig + h;
            let plus = loss(model);
            params(model)[i].data_mut()[j] = orig - h;
            let minus = loss(model);
            params(model)[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all entries of both gradient lists.
pub fn relative_error(analytic: &[Matrix], numeric: &[Matrix]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lists differ in length");
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (a, b) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            diff += (x - y).powi(2);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

pub fn param_count(ms: &[&Matrix]) -> usize {
    ms.iter().map(|m| m.len()).sum()
}

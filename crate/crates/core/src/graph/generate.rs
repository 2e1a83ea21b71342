//! Seeded synthetic graphs standing in for real datasets.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GraphTopology;
use crate::error::{Error, Result};

fn target_edges(n: usize, avg_degree: f64) -> Result<usize> {
    if !avg_degree.is_finite() || avg_degree < 0.0 {
        return Err(Error::InfeasibleGenerator(format!(
            "average degree must be finite and non-negative, got {avg_degree}"
        )));
    }
    if avg_degree > 0.0 && avg_degree >= n as f64 {
        return Err(Error::InfeasibleGenerator(format!(
            "average degree {avg_degree} must be below the node count {n}"
        )));
    }
    Ok((n as f64 * avg_degree).round() as usize)
}

/// Uniform random directed graph with `round(n * avg_degree)` distinct edges.
/// Self-loops are allowed.
pub fn gen_random(n: usize, avg_degree: f64, seed: u64) -> Result<GraphTopology> {
    let m = target_edges(n, avg_degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n * n;
    let picks: Vec<usize> = if m * 2 <= total {
        let mut seen = HashSet::with_capacity(m);
        let mut picks = Vec::with_capacity(m);
        while picks.len() < m {
            let p = rng.gen_range(0..total);
            if seen.insert(p) {
                picks.push(p);
            }
        }
        picks
    } else {
        index::sample(&mut rng, total, m).into_vec()
    };
    let src: Vec<usize> = picks.iter().map(|p| p % n).collect();
    let dst: Vec<usize> = picks.iter().map(|p| p / n).collect();
    GraphTopology::from_coo(n, &src, &dst)
}

/// Random graph whose node 0 has in-degree exactly `hub_degree`. The other
/// rows are filled at random up to `round(n * avg_degree)` total edges, each
/// capped at `hub_degree` so the hub stays the maximum.
pub fn gen_super_node(n: usize, avg_degree: f64, hub_degree: usize, seed: u64) -> Result<GraphTopology> {
    if n == 0 {
        return Err(Error::InfeasibleGenerator(
            "super-node graph needs at least one node".into(),
        ));
    }
    if hub_degree > n {
        return Err(Error::InfeasibleGenerator(format!(
            "hub degree {hub_degree} exceeds node count {n}"
        )));
    }
    let m = target_edges(n, avg_degree)?;
    let rest = m.saturating_sub(hub_degree);
    let cap = hub_degree.min(n);
    let capacity = (n - 1) * cap;
    if rest > capacity {
        return Err(Error::InfeasibleGenerator(format!(
            "{rest} non-hub edges do not fit under the per-row cap {cap}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src: Vec<usize> = index::sample(&mut rng, n, hub_degree).into_vec();
    let mut dst = vec![0usize; hub_degree];

    let mut row_load = vec![0usize; n];
    if rest * 2 <= capacity {
        let mut seen = HashSet::with_capacity(rest);
        let mut added = 0;
        while added < rest {
            let v = rng.gen_range(1..n);
            let u = rng.gen_range(0..n);
            if row_load[v] < cap && seen.insert((u, v)) {
                row_load[v] += 1;
                src.push(u);
                dst.push(v);
                added += 1;
            }
        }
    } else {
        let mut candidates: Vec<(usize, usize)> = (1..n).flat_map(|v| (0..n).map(move |u| (u, v))).collect();
        candidates.shuffle(&mut rng);
        let mut added = 0;
        for (u, v) in candidates {
            if added == rest {
                break;
            }
            if row_load[v] < cap {
                row_load[v] += 1;
                src.push(u);
                dst.push(v);
                added += 1;
            }
        }
    }
    GraphTopology::from_coo(n, &src, &dst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hub_graph_has_exact_hub_degree() {
        let g = gen_super_node(100, 4.0, 90, 7).unwrap();
        let s = g.degree_stats();
        assert_eq!(s.max_degree, 90);
        assert_eq!(g.in_degree(0), 90);
        assert_eq!(g.num_edges(), 400);
        g.validate().unwrap();
    }

    #[test]
    fn zero_degree_gives_no_edges() {
        assert_eq!(gen_random(50, 0.0, 3).unwrap().num_edges(), 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_random(64, 5.0, 11).unwrap();
        let b = gen_random(64, 5.0, 11).unwrap();
        let c = gen_random(64, 5.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(
            gen_super_node(64, 3.0, 40, 1).unwrap(),
            gen_super_node(64, 3.0, 40, 1).unwrap()
        );
    }

    #[test]
    fn dense_regime_uses_enumeration() {
        let g = gen_random(10, 8.0, 5).unwrap();
        assert_eq!(g.num_edges(), 80);
        g.validate().unwrap();
        let h = gen_super_node(10, 8.5, 9, 5).unwrap();
        assert_eq!(h.num_edges(), 85);
        assert_eq!(h.degree_stats().max_degree, 9);
    }

    #[test]
    fn infeasible_parameters() {
        assert!(gen_random(4, 4.0, 0).is_err());
        assert!(gen_random(4, -1.0, 0).is_err());
        assert!(gen_super_node(10, 2.0, 11, 0).is_err());
        assert!(gen_super_node(10, 5.0, 1, 0).is_err());
    }

    #[test]
    fn citeseer_shaped_average() {
        let g = gen_random(3327, 9228.0 / 3327.0, 1).unwrap();
        assert_eq!(g.num_edges(), 9228);
        assert!((g.degree_stats().avg_degree_f64() - 2.8).abs() < 0.05);
    }
}

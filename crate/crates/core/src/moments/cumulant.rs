//! Exact expectations of products of bilinear forms `a(u, v) = z_u* Σ z_v`
//! in independent innovation vectors `z_0, z_1, …`.
//!
//! Slots sharing a time index are grouped, each group is split into blocks
//! by the moment–cumulant formula, and every block becomes a vertex of a
//! small graph whose edges are the forms. The graph is then contracted
//! with matrix products, so the cost per shape is `O(p³)` whatever `p` is.
//! Shapes are cached because many index patterns share one.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::InnovationMoments;

/// Cumulant structure of the scalar innovation law.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Law {
    Real { nu3: f64, nu4: f64 },
    /// Circularly symmetric: only blocks with as many conjugated as plain
    /// slots survive.
    ProperComplex { nu4: f64 },
}

impl Law {
    pub(crate) fn from_moments(m: &InnovationMoments) -> Result<Law> {
        if m.b == 1.0 {
            let nu3 = m.nu3.ok_or(Error::InsufficientMoments("nu3"))?;
            Ok(Law::Real { nu3, nu4: m.nu4 })
        } else if m.b == 0.0 {
            Ok(Law::ProperComplex { nu4: m.nu4 })
        } else {
            Err(Error::InvalidInput("exact moments need real (b = 1) or proper complex (b = 0) innovations".into()))
        }
    }

    fn cumulant(self, conj: usize, plain: usize) -> f64 {
        match self {
            Law::Real { nu3, nu4 } => match conj + plain {
                2 => 1.0,
                3 => nu3,
                4 => nu4 - 3.0,
                n => unreachable!("block of size {n}"),
            },
            Law::ProperComplex { nu4 } => match (conj, plain) {
                (1, 1) => 1.0,
                (2, 2) => nu4 - 2.0,
                _ => 0.0,
            },
        }
    }
}

/// `a(left, right) = z_left* Σ z_right`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Form {
    pub left: usize,
    pub right: usize,
}

pub(crate) struct Evaluator<'a> {
    sigma: &'a DMatrix<f64>,
    law: Law,
    cache: HashMap<Vec<(u8, u8)>, f64>,
}

/// All ways to split `items` into blocks of size at least two.
fn partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let (first, rest) = (items[0], &items[1..]);
    let mut out = Vec::new();
    // Choose the other members of the block containing `first`.
    for mask in 1u32..(1 << rest.len()) {
        let block: Vec<usize> =
            std::iter::once(first).chain((0..rest.len()).filter(|k| mask >> k & 1 == 1).map(|k| rest[k])).collect();
        let others: Vec<usize> = (0..rest.len()).filter(|k| mask >> k & 1 == 0).map(|k| rest[k]).collect();
        if others.len() == 1 {
            continue;
        }
        for mut tail in partitions(&others) {
            tail.push(block.clone());
            out.push(tail);
        }
    }
    out
}

fn canonical(nv: usize, edges: &[(usize, usize)]) -> Vec<(u8, u8)> {
    let mut perm: Vec<usize> = (0..nv).collect();
    let mut best: Option<Vec<(u8, u8)>> = None;
    loop {
        let mut key: Vec<(u8, u8)> = edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (perm[a] as u8, perm[b] as u8);
                (x.min(y), x.max(y))
            })
            .collect();
        key.sort_unstable();
        key.insert(0, (nv as u8, 0));
        if best.as_ref().is_none_or(|b| key < *b) {
            best = Some(key);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best.unwrap_or_default()
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(sigma: &'a DMatrix<f64>, law: Law) -> Self {
        Evaluator { sigma, law, cache: HashMap::new() }
    }

    /// `E Π a(left, right)` over the given forms.
    pub(crate) fn expect(&mut self, forms: &[Form]) -> f64 {
        // Slot 2k is the conjugated side of form k, slot 2k+1 the plain side.
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (k, f) in forms.iter().enumerate() {
            for (slot, time) in [(2 * k, f.left), (2 * k + 1, f.right)] {
                match groups.iter_mut().find(|g| g.0 == time) {
                    Some(g) => g.1.push(slot),
                    None => groups.push((time, vec![slot])),
                }
            }
        }
        if groups.iter().any(|g| g.1.len() < 2) {
            return 0.0;
        }
        let choices: Vec<Vec<Vec<Vec<usize>>>> = groups.iter().map(|g| partitions(&g.1)).collect();
        let mut total = 0.0;
        let mut pick = vec![0usize; choices.len()];
        loop {
            let mut weight = 1.0;
            let mut vertex_of = vec![0usize; 2 * forms.len()];
            let mut nv = 0;
            for (g, &c) in choices.iter().zip(&pick) {
                for block in &g[c] {
                    let conj = block.iter().filter(|&&s| s % 2 == 0).count();
                    weight *= self.law.cumulant(conj, block.len() - conj);
                    for &s in block {
                        vertex_of[s] = nv;
                    }
                    nv += 1;
                }
            }
            if weight != 0.0 {
                let edges: Vec<(usize, usize)> = (0..forms.len()).map(|k| (vertex_of[2 * k], vertex_of[2 * k + 1])).collect();
                total += weight * self.contract(nv, &edges);
            }
            // Advance the mixed-radix counter over partition choices.
            let mut i = 0;
            loop {
                if i == pick.len() {
                    return total;
                }
                pick[i] += 1;
                if pick[i] < choices[i].len() {
                    break;
                }
                pick[i] = 0;
                i += 1;
            }
        }
    }

    /// `Σ_{i_v} Π_edges Σ[i_a, i_b]` for a graph on `nv` vertices.
    fn contract(&mut self, nv: usize, edges: &[(usize, usize)]) -> f64 {
        let key = canonical(nv, edges);
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let v = contract_graph(self.sigma, nv, edges);
        self.cache.insert(key, v);
        v
    }
}

/// Eliminates vertices of degree at most two by matrix products until at
/// most two remain, then sums the Hadamard product of the remaining edges.
/// With at most four edges every vertex has degree ≥ 2, so three vertices
/// of degree ≥ 3 cannot occur.
fn contract_graph(sigma: &DMatrix<f64>, nv: usize, edges: &[(usize, usize)]) -> f64 {
    let p = sigma.nrows();
    let mut w: Vec<Option<DVector<f64>>> = vec![Some(DVector::from_element(p, 1.0)); nv];
    let mut es: Vec<(usize, usize, DMatrix<f64>)> = edges.iter().map(|&(a, b)| (a, b, sigma.clone())).collect();
    let mut scalar = 1.0;
    loop {
        let mut k = 0;
        while k < es.len() {
            if es[k].0 == es[k].1 {
                let (a, _, m) = es.swap_remove(k);
                let wa = w[a].as_mut().expect("live vertex");
                wa.component_mul_assign(&m.diagonal());
            } else {
                k += 1;
            }
        }
        let alive: Vec<usize> = (0..nv).filter(|&v| w[v].is_some()).collect();
        if alive.len() <= 2 {
            break;
        }
        let degree = |v: usize, es: &[(usize, usize, DMatrix<f64>)]| es.iter().filter(|e| e.0 == v || e.1 == v).count();
        let v = *alive.iter().min_by_key(|&&v| degree(v, &es)).expect("non-empty");
        let wv = w[v].take().expect("live vertex");
        // Orient each incident edge as (v, other, M) with rows indexed by v.
        let mut incident = Vec::new();
        let mut k = 0;
        while k < es.len() {
            if es[k].0 == v || es[k].1 == v {
                let (a, b, m) = es.swap_remove(k);
                incident.push(if a == v { (b, m) } else { (a, m.transpose()) });
            } else {
                k += 1;
            }
        }
        match incident.len() {
            0 => scalar *= wv.sum(),
            1 => {
                let (u, m) = incident.pop().expect("one edge");
                let r = m.transpose() * &wv;
                w[u].as_mut().expect("live vertex").component_mul_assign(&r);
            }
            2 => {
                let (b, m2) = incident.pop().expect("two edges");
                let (a, m1) = incident.pop().expect("two edges");
                let mut scaled = m2;
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= wv[i];
                }
                es.push((a, b, m1.transpose() * scaled));
            }
            d => unreachable!("vertex of degree {d} left with three or more vertices"),
        }
    }
    let alive: Vec<usize> = (0..nv).filter(|&v| w[v].is_some()).collect();
    match alive.as_slice() {
        [] => scalar,
        [a] => scalar * w[*a].as_ref().expect("live").sum(),
        [a, b] => {
            let mut h = DMatrix::from_element(p, p, 1.0);
            for (x, _, m) in &es {
                if *x == *a {
                    h.component_mul_assign(m);
                } else {
                    h.component_mul_assign(&m.transpose());
                }
            }
            let (wa, wb) = (w[*a].as_ref().expect("live"), w[*b].as_ref().expect("live"));
            scalar * (wa.transpose() * h * wb)[(0, 0)]
        }
        _ => unreachable!(),
    }
}

/// Exact `E(G_q)` and `Var(G_q)` by summing over every index pattern that
/// links two autocovariance terms. Each term is
/// `F_τ(t, s) = a(s, t) a(t-τ, s-τ)`, and `G_q = T⁻² Σ_τ Σ_{t,s} F_τ(t, s)`.
/// By circular symmetry one index is pinned to 0 and the sum is scaled by `T`.
pub(crate) fn gq_moments(sigma: &DMatrix<f64>, law: Law, q: usize, t: usize) -> (f64, f64) {
    let mut ev = Evaluator::new(sigma, law);
    let tt = t as i64;
    let md = |x: i64| x.rem_euclid(tt) as usize;
    // Term 1 has indices near 0 and near s1. A linked term 2 keeps each of
    // its indices within 3q of one of those, so s1 itself is unrestricted.
    // Once s1 is far from 0 the two clusters cannot interact and every such
    // s1 contributes the same amount, so one representative is weighted.
    let w = 3 * q as i64;
    let near = 4 * w;
    let window = |c: i64| -> Vec<usize> {
        if 2 * w + 1 >= tt {
            (0..t).collect()
        } else {
            (-w..=w).map(|o| md(c + o)).collect()
        }
    };
    let outer: Vec<(usize, f64)> = if 2 * near + 2 > tt {
        (0..t).map(|s| (s, 1.0)).collect()
    } else {
        let mut v: Vec<(usize, f64)> = (-near..=near).map(|o| (md(o), 1.0)).collect();
        v.push((md(near + 1), (tt - 2 * near - 1) as f64));
        v
    };
    let residues = window(0);
    let term = |tau: usize, t0: usize, s0: usize| {
        let tau = tau as i64;
        [
            Form { left: s0, right: t0 },
            Form { left: md(t0 as i64 - tau), right: md(s0 as i64 - tau) },
        ]
    };
    let mut mean = 0.0;
    for tau in 1..=q {
        for &s in &residues {
            mean += ev.expect(&term(tau, 0, s));
        }
    }
    let mut acc = 0.0;
    for tau in 1..=q {
        for kappa in 1..=q {
            for &(s1, weight) in &outer {
                let f1 = term(tau, 0, s1);
                let e1 = ev.expect(&f1);
                let mut cand = window(0);
                cand.extend(window(s1 as i64));
                cand.sort_unstable();
                cand.dedup();
                let mut sum = 0.0;
                for &t2 in &cand {
                    for &s2 in &cand {
                        let f2 = term(kappa, t2, s2);
                        let linked = f1.iter().any(|a| {
                            f2.iter().any(|b| a.left == b.left || a.left == b.right || a.right == b.left || a.right == b.right)
                        });
                        if !linked {
                            continue;
                        }
                        let joint = ev.expect(&[f1[0], f1[1], f2[0], f2[1]]);
                        sum += joint - e1 * ev.expect(&f2);
                    }
                }
                acc += weight * sum;
            }
        }
    }
    let tf = t as f64;
    (mean / tf, acc / tf.powi(3))
}

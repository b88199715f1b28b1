//! Gaunt coefficients and the polynomial–spectral span.
//!
//! A degree-`d` polynomial in the entries of the degree-`L` feature vector
//! `φ_L(r̂)` is, as a function on the sphere, band-limited at `dL`. This module
//! makes that statement executable: [`product_expand`] multiplies harmonic
//! expansions through Gaunt coefficients, [`span_rank`] measures how much of
//! each `ℋ_n` the polynomial space reaches, and [`stretched_top_coefficient`]
//! exhibits the highest-weight witness that saturates the ceiling.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::linalg::numerical_rank;
use crate::sphharm::{index, n_coeffs, QuadratureGrid, SHVector, L_MAX_SUPPORTED};
use crate::{Error, Result};

/// Identifier written into on-disk Gaunt caches.
pub const CONVENTION_ID: &str = "real-sh-condon-shortley-v1";

/// Upper bound on the number of monomials any span or feature build may touch.
pub const MONOMIAL_LIMIT: usize = 200_000;

const SPAN_RTOL: f64 = 1e-8;
const SPAN_ATOL: f64 = 1e-9;
/// Computed couplings below this are treated as structural zeros.
const COUPLING_FLOOR: f64 = 1e-14;

/// Whether `∫ Y_{l1}^{m1} Y_{l2}^{m2} Y_l^m` can be nonzero.
///
/// Triangle and parity rules in `l`; in `m` the azimuthal factors
/// `cos(|m|φ)` (m ≥ 0) and `sin(|m|φ)` (m < 0) must combine to a constant,
/// which needs `|m| = |m1| + |m2|` or `||m1| − |m2||` and an even number of
/// sine factors.
pub fn selection_allowed(l1: usize, m1: i64, l2: usize, m2: i64, l: usize, m: i64) -> bool {
    if l < l1.abs_diff(l2) || l > l1 + l2 || (l1 + l2 + l) % 2 == 1 {
        return false;
    }
    let (a, b, c) = (m1.unsigned_abs(), m2.unsigned_abs(), m.unsigned_abs());
    if c != a + b && c != a.abs_diff(b) {
        return false;
    }
    let negatives = [m1, m2, m].iter().filter(|&&v| v < 0).count();
    negatives % 2 == 0
}

type Couplings = HashMap<(i8, i8), Vec<(u8, i8, f64)>>;

/// Sparse Gaunt table, built lazily one `(l1, l2)` block at a time.
///
/// Blocks are computed by exact product quadrature and cached; lookups after
/// construction are read-only, so a table can be shared across threads.
pub struct GauntTable {
    max_degree: usize,
    blocks: Vec<OnceLock<Couplings>>,
    basis: OnceLock<Vec<Vec<f64>>>,
}

impl std::fmt::Debug for GauntTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GauntTable")
            .field("max_degree", &self.max_degree)
            .field(
                "blocks_built",
                &self.blocks.iter().filter(|b| b.get().is_some()).count(),
            )
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct GauntCache {
    convention: String,
    max_degree: usize,
    /// `(l1, m1, l2, m2, l, m, value)` with `(l1, m1) <= (l2, m2)`.
    entries: Vec<(usize, i64, usize, i64, usize, i64, f64)>,
}

impl GauntTable {
    pub fn new(max_degree: usize) -> Result<Self> {
        if max_degree > L_MAX_SUPPORTED {
            return Err(Error::arg(format!(
                "Gaunt table degree {max_degree} exceeds {L_MAX_SUPPORTED}"
            )));
        }
        let n = (max_degree + 1) * (max_degree + 1);
        Ok(Self {
            max_degree,
            blocks: (0..n).map(|_| OnceLock::new()).collect(),
            basis: OnceLock::new(),
        })
    }

    /// Process-wide table at [`L_MAX_SUPPORTED`].
    pub fn shared() -> &'static GauntTable {
        static TABLE: OnceLock<GauntTable> = OnceLock::new();
        TABLE.get_or_init(|| GauntTable::new(L_MAX_SUPPORTED).expect("supported degree"))
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    fn grid_basis(&self) -> &[Vec<f64>] {
        self.basis
            .get_or_init(|| QuadratureGrid::standard().basis(self.max_degree))
    }

    fn block(&self, l1: usize, l2: usize) -> &Couplings {
        debug_assert!(l1 <= l2);
        self.blocks[l1 * (self.max_degree + 1) + l2].get_or_init(|| self.compute_block(l1, l2))
    }

    fn compute_block(&self, l1: usize, l2: usize) -> Couplings {
        let grid = QuadratureGrid::standard();
        let basis = self.grid_basis();
        let w = grid.weights();
        let l_hi = (l1 + l2).min(self.max_degree);
        let mut out: Couplings = HashMap::new();
        let mut prod = vec![0.0; w.len()];
        for m1 in -(l1 as i64)..=(l1 as i64) {
            for m2 in -(l2 as i64)..=(l2 as i64) {
                if l1 == l2 && m2 < m1 {
                    continue;
                }
                let (i1, i2) = (index(l1, m1), index(l2, m2));
                for (k, row) in basis.iter().enumerate() {
                    prod[k] = w[k] * row[i1] * row[i2];
                }
                let mut list = Vec::new();
                let mut l = l1.abs_diff(l2);
                while l <= l_hi {
                    for m in candidate_orders(m1, m2, l) {
                        if !selection_allowed(l1, m1, l2, m2, l, m) {
                            continue;
                        }
                        let i = index(l, m);
                        let v: f64 = basis.iter().zip(&prod).map(|(row, p)| p * row[i]).sum();
                        if v.abs() > COUPLING_FLOOR {
                            list.push((l as u8, m as i8, v));
                        }
                    }
                    l += 2;
                }
                if !list.is_empty() {
                    out.insert((m1 as i8, m2 as i8), list);
                }
            }
        }
        out
    }

    /// Builds every block, in parallel.
    pub fn build_all(&self) {
        use rayon::prelude::*;
        let n = self.max_degree + 1;
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a..n).map(move |b| (a, b)))
            .collect();
        self.grid_basis();
        pairs.par_iter().for_each(|&(a, b)| {
            self.block(a, b);
        });
    }

    /// Nonzero `(l, m, G)` couplings of `Y_{l1}^{m1} Y_{l2}^{m2}`.
    pub fn couplings(&self, l1: usize, m1: i64, l2: usize, m2: i64) -> &[(u8, i8, f64)] {
        let (a, ma, b, mb) = if l1 < l2 || (l1 == l2 && m1 <= m2) {
            (l1, m1, l2, m2)
        } else {
            (l2, m2, l1, m1)
        };
        self.block(a, b)
            .get(&(ma as i8, mb as i8))
            .map_or(&[], Vec::as_slice)
    }

    /// `∫ Y_{l1}^{m1} Y_{l2}^{m2} Y_l^m dΩ`.
    pub fn get(&self, l1: usize, m1: i64, l2: usize, m2: i64, l: usize, m: i64) -> Result<f64> {
        for (ll, mm) in [(l1, m1), (l2, m2), (l, m)] {
            if ll > self.max_degree || mm.unsigned_abs() as usize > ll {
                return Err(Error::arg(format!(
                    "Gaunt index ({ll}, {mm}) invalid for table degree {}",
                    self.max_degree
                )));
            }
        }
        if !selection_allowed(l1, m1, l2, m2, l, m) {
            return Ok(0.0);
        }
        Ok(self
            .couplings(l1, m1, l2, m2)
            .iter()
            .find(|&&(cl, cm, _)| cl as usize == l && cm as i64 == m)
            .map_or(0.0, |e| e.2))
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        self.build_all();
        let mut entries = Vec::new();
        for l1 in 0..=self.max_degree {
            for l2 in l1..=self.max_degree {
                let block = self.block(l1, l2);
                let mut keys: Vec<_> = block.keys().copied().collect();
                keys.sort_unstable();
                for (m1, m2) in keys {
                    for &(l, m, v) in &block[&(m1, m2)] {
                        entries.push((l1, m1 as i64, l2, m2 as i64, l as usize, m as i64, v));
                    }
                }
            }
        }
        let cache = GauntCache {
            convention: CONVENTION_ID.to_string(),
            max_degree: self.max_degree,
            entries,
        };
        serde_json::to_writer(writer, &cache).map_err(std::io::Error::from)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let cache: GauntCache = serde_json::from_reader(reader).map_err(std::io::Error::from)?;
        if cache.convention != CONVENTION_ID {
            return Err(Error::arg(format!(
                "Gaunt cache convention {:?} does not match {CONVENTION_ID:?}",
                cache.convention
            )));
        }
        let table = Self::new(cache.max_degree)?;
        let n = cache.max_degree + 1;
        let mut blocks: Vec<Couplings> = (0..n * n).map(|_| HashMap::new()).collect();
        for (l1, m1, l2, m2, l, m, v) in cache.entries {
            if l1 > l2
                || (l1 == l2 && m1 > m2)
                || l2 > cache.max_degree
                || !selection_allowed(l1, m1, l2, m2, l, m)
            {
                return Err(Error::arg(format!(
                    "invalid cached Gaunt entry ({l1},{m1},{l2},{m2},{l},{m})"
                )));
            }
            blocks[l1 * n + l2]
                .entry((m1 as i8, m2 as i8))
                .or_default()
                .push((l as u8, m as i8, v));
        }
        for (slot, block) in table.blocks.iter().zip(blocks) {
            slot.set(block).expect("fresh table");
        }
        Ok(table)
    }
}

fn candidate_orders(m1: i64, m2: i64, l: usize) -> Vec<i64> {
    let (a, b) = (m1.abs(), m2.abs());
    let mut out = Vec::with_capacity(4);
    for c in [a + b, (a - b).abs()] {
        if c as usize <= l {
            for m in [c, -c] {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
    }
    out
}

/// Gaunt coefficient from the shared table.
pub fn gaunt(l1: usize, m1: i64, l2: usize, m2: i64, l: usize, m: i64) -> Result<f64> {
    GauntTable::shared().get(l1, m1, l2, m2, l, m)
}

/// Expansion of the pointwise product of two harmonic expansions.
pub fn product_expand(a: &SHVector, b: &SHVector) -> Result<SHVector> {
    product_expand_with(GauntTable::shared(), a, b)
}

pub fn product_expand_with(table: &GauntTable, a: &SHVector, b: &SHVector) -> Result<SHVector> {
    let degree = a.degree() + b.degree();
    if degree > table.max_degree() {
        return Err(Error::arg(format!(
            "product degree {degree} exceeds table degree {}",
            table.max_degree()
        )));
    }
    let mut out = vec![0.0; n_coeffs(degree)];
    for (ia, &ca) in a.coeffs().iter().enumerate() {
        if ca == 0.0 {
            continue;
        }
        let (l1, m1) = crate::sphharm::lm_of(ia);
        for (ib, &cb) in b.coeffs().iter().enumerate() {
            if cb == 0.0 {
                continue;
            }
            let (l2, m2) = crate::sphharm::lm_of(ib);
            for &(l, m, g) in table.couplings(l1, m1, l2, m2) {
                out[index(l as usize, m as i64)] += ca * cb * g;
            }
        }
    }
    SHVector::new(degree, out)
}

/// A product `Π_k Y_{l_k}^{m_k}` of degree `d = factors.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialSpec {
    factors: Vec<(usize, i64)>,
}

impl MonomialSpec {
    pub fn new(factors: Vec<(usize, i64)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::arg("a monomial needs at least one factor"));
        }
        for &(l, m) in &factors {
            if m.unsigned_abs() as usize > l {
                return Err(Error::arg(format!("factor ({l}, {m}) is not a valid harmonic")));
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[(usize, i64)] {
        &self.factors
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    /// `Σ l_k`, the band limit of the product.
    pub fn band_limit(&self) -> usize {
        self.factors.iter().map(|f| f.0).sum()
    }
}

/// Harmonic expansion of a monomial by iterated products.
pub fn monomial_to_sh(spec: &MonomialSpec) -> Result<SHVector> {
    if spec.band_limit() > L_MAX_SUPPORTED {
        return Err(Error::arg(format!(
            "monomial band limit {} exceeds {L_MAX_SUPPORTED}",
            spec.band_limit()
        )));
    }
    let (l0, m0) = spec.factors[0];
    let mut acc = SHVector::basis(l0, m0)?;
    for &(l, m) in &spec.factors[1..] {
        acc = product_expand(&acc, &SHVector::basis(l, m)?)?;
    }
    Ok(acc)
}

/// `C(p + d, d)`: monomials of total degree ≤ d in `p` variables.
pub fn monomial_count(p: usize, d: usize) -> usize {
    let mut c: u128 = 1;
    for k in 1..=d as u128 {
        c = c * (p as u128 + k) / k;
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

/// Visits every monomial of degree ≤ `d` in `vars` (constant first, then by
/// degree, multisets in lexicographic order), passing its value.
pub fn for_each_monomial(vars: &[f64], d: usize, mut f: impl FnMut(f64)) {
    fn rec(vars: &[f64], start: usize, left: usize, acc: f64, f: &mut impl FnMut(f64)) {
        if left == 0 {
            f(acc);
            return;
        }
        for i in start..vars.len() {
            rec(vars, i, left - 1, acc * vars[i], f);
        }
    }
    for k in 0..=d {
        rec(vars, 0, k, 1.0, &mut f);
    }
}

/// Rank of the `ℋ_n` component of `𝒫_{L,d}`.
///
/// Every monomial of degree ≤ `d` in the entries of `φ_L` is sampled on the
/// standard grid and projected onto the `2n + 1` harmonics of degree `n`;
/// the result is the numerical rank of that projection matrix.
pub fn span_rank(l: usize, d: usize, n: usize) -> Result<usize> {
    if n > L_MAX_SUPPORTED || d * l > L_MAX_SUPPORTED {
        return Err(Error::arg(format!(
            "span_rank needs n ≤ {L_MAX_SUPPORTED} and dL ≤ {L_MAX_SUPPORTED} (got n={n}, dL={})",
            d * l
        )));
    }
    let p = n_coeffs(l);
    let count = monomial_count(p, d);
    if count > MONOMIAL_LIMIT {
        return Err(Error::Resource {
            what: "monomial count",
            count,
            limit: MONOMIAL_LIMIT,
        });
    }
    let grid = QuadratureGrid::standard();
    let top = l.max(n);
    let basis = grid.basis(top);
    let width = 2 * n + 1;
    let lo = n * n;
    let mut rows = vec![vec![0.0; width]; count];
    for (row_y, w) in basis.iter().zip(grid.weights()) {
        let vars = &row_y[..p];
        let target = &row_y[lo..lo + width];
        let mut r = 0;
        for_each_monomial(vars, d, |v| {
            let wv = w * v;
            for (acc, y) in rows[r].iter_mut().zip(target) {
                *acc += wv * y;
            }
            r += 1;
        });
    }
    Ok(numerical_rank(
        crate::linalg::design_matrix(&rows),
        SPAN_RTOL,
        SPAN_ATOL,
    ))
}

/// `(n, n)` coefficient of `(Y_L^L)^q · Y_r^r` with `n = qL + r`.
pub fn stretched_top_coefficient(l: usize, q: usize, r: usize) -> Result<f64> {
    if q == 0 || l == 0 || r >= l {
        return Err(Error::arg(format!(
            "stretched product needs q ≥ 1 and 0 ≤ r < L (got L={l}, q={q}, r={r})"
        )));
    }
    let n = q * l + r;
    let mut factors = vec![(l, l as i64); q];
    if r > 0 {
        factors.push((r, r as i64));
    }
    let spec = MonomialSpec::new(factors)?;
    if spec.band_limit() > L_MAX_SUPPORTED {
        return Err(Error::arg(format!("n = {n} exceeds {L_MAX_SUPPORTED}")));
    }
    let v = monomial_to_sh(&spec)?;
    Ok(v.get(n, n as i64))
}

/// Number of tuples `(m_1..m_d)` with `|m_k| ≤ L` and `Σ m_k = dL`.
pub fn weight_multiplicity(l: usize, d: usize) -> u64 {
    let l = l as i64;
    let target = d as i64 * l;
    // counts[s + d·L] for partial sums s
    let offset = target;
    let mut counts = vec![0u64; (2 * target + 1) as usize];
    counts[offset as usize] = 1;
    for _ in 0..d {
        let mut next = vec![0u64; counts.len()];
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for m in -l..=l {
                let j = i as i64 + m;
                if (0..next.len() as i64).contains(&j) {
                    next[j as usize] += c;
                }
            }
        }
        counts = next;
    }
    counts[(offset + target) as usize]
}

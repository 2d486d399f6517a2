//! Finite groups stored as validated multiplication tables.
//!
//! Element ordering is part of the contract: it fixes the column order of the
//! Fourier basis matrix and the layout of every signal. Each constructor
//! documents the ordering it produces.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest order accepted by any constructor.
pub const MAX_ORDER: usize = 1 << 16;

/// Up to this order associativity is checked on every triple.
pub const EXHAUSTIVE_ASSOC_LIMIT: usize = 256;

/// Number of random triples checked above [`EXHAUSTIVE_ASSOC_LIMIT`].
pub const SAMPLED_ASSOC_TRIPLES: usize = 100_000;

/// Building block of a group that came out of [`direct_product`].
///
/// `repr` uses the factor list to pick closed-form irreps and the
/// Kronecker-structured transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factor {
    Cyclic(usize),
    Dihedral(usize),
    Quaternion,
    /// A group supplied as raw data, of the given order.
    Table(usize),
}

impl Factor {
    pub fn order(&self) -> usize {
        match *self {
            Factor::Cyclic(n) | Factor::Dihedral(n) | Factor::Table(n) => n,
            Factor::Quaternion => 8,
        }
    }
}

/// A finite group as a multiplication table.
///
/// `table[i * order + j]` is the index of `g_i * g_j`.
#[derive(Clone)]
pub struct GroupTable {
    order: usize,
    table: Vec<u32>,
    identity: usize,
    inverses: Vec<usize>,
    labels: Vec<String>,
    is_abelian: bool,
    factors: Vec<Factor>,
    /// Shape of the top-level direct product, if any: (|A|, |B|) with
    /// element index a * |B| + b.
    split: Option<(usize, usize)>,
}

impl fmt::Debug for GroupTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupTable")
            .field("order", &self.order)
            .field("identity", &self.identity)
            .field("is_abelian", &self.is_abelian)
            .field("factors", &self.factors)
            .finish()
    }
}

impl PartialEq for GroupTable {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.table == other.table
    }
}

impl GroupTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    #[inline]
    pub fn mul(&self, i: usize, j: usize) -> usize {
        self.table[i * self.order + j] as usize
    }

    #[inline]
    pub fn inv(&self, i: usize) -> usize {
        self.inverses[i]
    }

    pub fn inverses(&self) -> &[usize] {
        &self.inverses
    }

    /// Row `i` of the table: the images of every `g_j` under left
    /// multiplication by `g_i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.table[i * self.order..(i + 1) * self.order]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn is_abelian(&self) -> bool {
        self.is_abelian
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// `Some((|A|, |B|))` when the group was built as `A × B`.
    pub fn split(&self) -> Option<(usize, usize)> {
        self.split
    }

    /// The table as nested rows, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        (0..self.order).map(|i| self.row(i).iter().map(|&x| x as usize).collect()).collect()
    }

    /// Smallest `k ≥ 1` with `g^k = e`.
    pub fn element_order(&self, g: usize) -> usize {
        let mut k = 1;
        let mut x = g;
        while x != self.identity {
            x = self.mul(x, g);
            k += 1;
        }
        k
    }

    /// Index of the element with the given label.
    pub fn find(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Conjugacy classes, each listed in ascending index order.
    pub fn conjugacy_classes(&self) -> Vec<Vec<usize>> {
        let n = self.order;
        let mut seen = vec![false; n];
        let mut classes = Vec::new();
        for g in 0..n {
            if seen[g] {
                continue;
            }
            let mut class: Vec<usize> = (0..n).map(|h| self.mul(self.mul(h, g), self.inverses[h])).collect();
            class.sort_unstable();
            class.dedup();
            for &c in &class {
                seen[c] = true;
            }
            classes.push(class);
        }
        classes
    }

    /// Checks closure, identity, inverses and associativity.
    ///
    /// Associativity is exhaustive up to [`EXHAUSTIVE_ASSOC_LIMIT`] and uses
    /// [`SAMPLED_ASSOC_TRIPLES`] seeded random triples above it.
    pub fn validate(&self) -> Result<()> {
        let n = self.order;
        if self.table.len() != n * n {
            return Err(Error::Validation(format!("table has {} entries, expected {}", self.table.len(), n * n)));
        }
        if let Some(pos) = self.table.iter().position(|&x| x as usize >= n) {
            return Err(Error::Validation(format!("closure: entry ({}, {}) = {} is out of range", pos / n, pos % n, self.table[pos])));
        }
        let e = self.identity;
        for i in 0..n {
            if self.mul(e, i) != i || self.mul(i, e) != i {
                return Err(Error::Validation(format!("identity: element {e} fails on {i}")));
            }
            let v = self.inverses[i];
            if self.mul(i, v) != e || self.mul(v, i) != e {
                return Err(Error::Validation(format!("inverse: element {i} has no inverse")));
            }
        }
        let check = |i: usize, j: usize, k: usize| -> Result<()> {
            if self.mul(self.mul(i, j), k) != self.mul(i, self.mul(j, k)) {
                Err(Error::Validation(format!("associativity fails on triple ({i}, {j}, {k})")))
            } else {
                Ok(())
            }
        };
        if n <= EXHAUSTIVE_ASSOC_LIMIT {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        check(i, j, k)?;
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x6a09_e667);
            for _ in 0..SAMPLED_ASSOC_TRIPLES {
                check(rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n))?;
            }
        }
        let abelian = (0..n).all(|i| (0..i).all(|j| self.mul(i, j) == self.mul(j, i)));
        if abelian != self.is_abelian {
            return Err(Error::Validation("is_abelian flag disagrees with the table".into()));
        }
        Ok(())
    }

    /// Serializable form `{order, table, labels}`.
    pub fn to_json(&self) -> GroupJson {
        GroupJson { order: self.order, table: self.to_rows(), labels: Some(self.labels.clone()) }
    }
}

/// JSON document for a group table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupJson {
    pub order: usize,
    pub table: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl GroupJson {
    pub fn into_group(self) -> Result<GroupTable> {
        if self.table.len() != self.order {
            return Err(Error::Validation(format!("declared order {} but table has {} rows", self.order, self.table.len())));
        }
        let mut g = group_from_table(&self.table)?;
        if let Some(labels) = self.labels {
            if labels.len() != g.order {
                return Err(Error::Validation(format!("{} labels for a group of order {}", labels.len(), g.order)));
            }
            g.labels = labels;
        }
        Ok(g)
    }
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidOrder("order must be positive".into()));
    }
    if n > MAX_ORDER {
        return Err(Error::Resource(format!("order {n} exceeds the limit {MAX_ORDER}")));
    }
    Ok(())
}

fn from_fn(n: usize, labels: Vec<String>, factors: Vec<Factor>, mul: impl Fn(usize, usize) -> usize) -> GroupTable {
    let mut table = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            table.push(mul(i, j) as u32);
        }
    }
    finish(n, table, labels, factors, None)
}

/// Derives identity, inverses and commutativity. Assumes the identity exists
/// and every row is a permutation; callers that cannot guarantee this must
/// go through [`group_from_table`].
fn finish(n: usize, table: Vec<u32>, labels: Vec<String>, factors: Vec<Factor>, split: Option<(usize, usize)>) -> GroupTable {
    let identity = (0..n).find(|&e| (0..n).all(|i| table[e * n + i] as usize == i)).unwrap_or(0);
    let mut inverses = vec![0; n];
    for i in 0..n {
        for j in 0..n {
            if table[i * n + j] as usize == identity {
                inverses[i] = j;
                break;
            }
        }
    }
    let is_abelian = (0..n).all(|i| (0..i).all(|j| table[i * n + j] == table[j * n + i]));
    GroupTable { order: n, table, identity, inverses, labels, is_abelian, factors, split }
}

/// The cyclic group `C_n`, element `i` standing for `r^i`.
pub fn cyclic_group(n: usize) -> Result<GroupTable> {
    check_order(n)?;
    let labels = (0..n).map(|i| i.to_string()).collect();
    Ok(from_fn(n, labels, vec![Factor::Cyclic(n)], |i, j| (i + j) % n))
}

/// The dihedral group of order `n` (so `D_8` has eight elements).
///
/// With `k = n / 2` the ordering is `1, r, …, r^{k-1}, a, ar, …, ar^{k-1}`,
/// under the relations `r^k = a² = 1` and `a r a = r⁻¹`.
pub fn dihedral_group(n: usize) -> Result<GroupTable> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::InvalidOrder(format!("dihedral order must be even and positive, got {n}")));
    }
    check_order(n)?;
    let k = n / 2;
    let power = |base: &str, i: usize| match i {
        0 => base.to_string(),
        1 => format!("{base}r"),
        _ => format!("{base}r{}", superscript(i)),
    };
    let labels = (0..k)
        .map(|i| if i == 0 { "1".to_string() } else { power("", i) })
        .chain((0..k).map(|i| if i == 0 { "a".to_string() } else { power("a", i) }))
        .collect();
    Ok(from_fn(n, labels, vec![Factor::Dihedral(n)], |x, y| {
        let (fx, ix) = (x / k, x % k);
        let (fy, iy) = (y / k, y % k);
        match (fx, fy) {
            (0, 0) => (ix + iy) % k,
            (0, 1) => k + (iy + k - ix) % k,
            (1, 0) => k + (ix + iy) % k,
            _ => (iy + k - ix) % k,
        }
    }))
}

fn superscript(i: usize) -> String {
    const DIGITS: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];
    i.to_string().chars().map(|c| DIGITS[c as usize - '0' as usize]).collect()
}

/// The quaternion group, ordered `1, −1, i, −i, j, −j, k, −k`.
pub fn quaternion_group() -> GroupTable {
    // Unit u ∈ {1, i, j, k} with sign s: index 2u + s.
    const UNIT: [[(usize, bool); 4]; 4] = [
        [(0, false), (1, false), (2, false), (3, false)],
        [(1, false), (0, true), (3, false), (2, true)],
        [(2, false), (3, true), (0, true), (1, false)],
        [(3, false), (2, false), (1, true), (0, true)],
    ];
    let labels = ["1", "-1", "i", "-i", "j", "-j", "k", "-k"].iter().map(|s| s.to_string()).collect();
    from_fn(8, labels, vec![Factor::Quaternion], |x, y| {
        let (u, su) = (x / 2, x % 2 == 1);
        let (v, sv) = (y / 2, y % 2 == 1);
        let (w, sw) = UNIT[u][v];
        2 * w + usize::from(su ^ sv ^ sw)
    })
}

/// `G × H` with element `(g, h)` at index `g * |H| + h`.
///
/// The result remembers both factors so transforms can be computed
/// factor-wise.
pub fn direct_product(g: &GroupTable, h: &GroupTable) -> Result<GroupTable> {
    let (a, b) = (g.order, h.order);
    let n = a
        .checked_mul(b)
        .filter(|&n| n <= MAX_ORDER)
        .ok_or_else(|| Error::Resource(format!("product order {a}·{b} exceeds the limit {MAX_ORDER}")))?;
    let mut table = Vec::with_capacity(n * n);
    for x in 0..n {
        let (xg, xh) = (x / b, x % b);
        let grow = g.row(xg);
        let hrow = h.row(xh);
        for &gy in grow {
            let base = gy * b as u32;
            for &hy in hrow {
                table.push(base + hy);
            }
        }
    }
    let labels = (0..n).map(|x| format!("({},{})", g.labels[x / b], h.labels[x % b])).collect();
    let factors = g.factors.iter().chain(h.factors.iter()).copied().collect();
    let mut out = finish(n, table, labels, factors, Some((a, b)));
    out.identity = g.identity * b + h.identity;
    out.is_abelian = g.is_abelian && h.is_abelian;
    Ok(out)
}

/// Validates an arbitrary square table and derives identity and inverses.
pub fn group_from_table(raw: &[Vec<usize>]) -> Result<GroupTable> {
    let n = raw.len();
    check_order(n)?;
    let mut table = Vec::with_capacity(n * n);
    for (i, row) in raw.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Validation(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        for (j, &x) in row.iter().enumerate() {
            if x >= n {
                return Err(Error::Validation(format!("closure: entry ({i}, {j}) = {x} is out of range")));
            }
            table.push(x as u32);
        }
    }
    let identity = (0..n)
        .find(|&e| (0..n).all(|i| table[e * n + i] as usize == i && table[i * n + e] as usize == i))
        .ok_or_else(|| Error::Validation("no two-sided identity element".into()))?;
    let mut inverses = vec![usize::MAX; n];
    for i in 0..n {
        for j in 0..n {
            if table[i * n + j] as usize == identity && table[j * n + i] as usize == identity {
                inverses[i] = j;
                break;
            }
        }
        if inverses[i] == usize::MAX {
            return Err(Error::Validation(format!("inverse: element {i} has no inverse")));
        }
    }
    let labels = (0..n).map(|i| format!("g{i}")).collect();
    let is_abelian = (0..n).all(|i| (0..i).all(|j| table[i * n + j] == table[j * n + i]));
    let g = GroupTable { order: n, table, identity, inverses, labels, is_abelian, factors: vec![Factor::Table(n)], split: None };
    g.validate()?;
    Ok(g)
}

/// Builds the group generated by composing a faithful family of
/// permutations, one per element, in the order given.
///
/// Element `i` acts on points by `perms[i]`, and `g_i · g_j` is the element
/// acting as `perms[i] ∘ perms[j]` (apply `j` first). Fails if the family is
/// not closed under composition or two elements act identically.
pub fn group_from_permutations(perms: &[Vec<usize>], labels: Option<Vec<String>>) -> Result<GroupTable> {
    let n = perms.len();
    check_order(n)?;
    let mut index: HashMap<&[usize], usize> = HashMap::with_capacity(n);
    for (i, p) in perms.iter().enumerate() {
        if index.insert(p.as_slice(), i).is_some() {
            return Err(Error::Validation(format!("action is not faithful: element {i} repeats")));
        }
    }
    let mut table = Vec::with_capacity(n * n);
    let mut buf = vec![0usize; perms[0].len()];
    for pi in perms {
        for pj in perms {
            for (q, slot) in buf.iter_mut().enumerate() {
                *slot = pi[pj[q]];
            }
            let k = *index.get(buf.as_slice()).ok_or_else(|| Error::Validation("permutation family is not closed".into()))?;
            table.push(k as u32);
        }
    }
    let labels = labels.unwrap_or_else(|| (0..n).map(|i| format!("g{i}")).collect());
    let g = finish(n, table, labels, vec![Factor::Table(n)], None);
    g.validate()?;
    Ok(g)
}

/// Parses specs such as `cyclic:7`, `dihedral:8`, `quaternion` and products
/// joined with `*` (`cyclic:7*cyclic:7*dihedral:8`), left-associated.
pub fn parse_group_spec(spec: &str) -> Result<GroupTable> {
    let mut acc: Option<GroupTable> = None;
    for part in spec.split('*') {
        let part = part.trim();
        let (family, arg) = match part.split_once(':') {
            Some((f, a)) => (f.trim(), Some(a.trim())),
            None => (part, None),
        };
        let num = || -> Result<usize> {
            arg.ok_or_else(|| Error::Config(format!("group '{part}' needs an order")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad order in group '{part}'")))
        };
        let g = match family {
            "cyclic" | "c" => cyclic_group(num()?)?,
            "dihedral" | "d" => dihedral_group(num()?)?,
            "quaternion" | "q8" => quaternion_group(),
            _ => return Err(Error::Config(format!("unknown group family '{family}'"))),
        };
        acc = Some(match acc {
            None => g,
            Some(prev) => direct_product(&prev, &g)?,
        });
    }
    acc.ok_or_else(|| Error::Config("empty group spec".into()))
}

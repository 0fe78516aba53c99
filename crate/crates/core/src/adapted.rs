//! Processes adapted to the observation filtration, stored as one value per
//! observation prefix.
//!
//! Level `t` holds the `(m+1)^t` prefixes `z_1..z_t` in lexicographic order,
//! so a prefix is addressed by its base-`(m+1)` integer with `z_1` as the
//! most significant digit. The child of node `i` under token `z` is
//! `i * (m+1) + z`. Because a value at level `t` is addressed only by
//! `z_1..z_t`, adaptedness holds by construction.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

/// `alphabet^len`, or `None` on overflow.
pub fn path_count(alphabet: usize, len: usize) -> Option<usize> {
    let mut n: usize = 1;
    for _ in 0..len {
        n = n.checked_mul(alphabet)?;
    }
    Some(n)
}

/// Index of a token string at its level.
pub fn path_index(alphabet: usize, path: &[usize]) -> usize {
    path.iter().fold(0, |acc, &z| acc * alphabet + z)
}

/// Inverse of [`path_index`].
pub fn path_of_index(alphabet: usize, len: usize, mut idx: usize) -> Vec<usize> {
    let mut out = alloc::vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = idx % alphabet;
        idx /= alphabet;
    }
    out
}

/// Calls `f` on every token string of length `len`, in index order.
pub fn for_each_path(alphabet: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut path = alloc::vec![0usize; len];
    loop {
        f(&path);
        // odometer increment, last token fastest
        let mut k = len;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < alphabet {
                break;
            }
            path[k] = 0;
        }
    }
}

/// Prefix encoded as token digits joined by `.`; the empty prefix is `""`.
pub fn prefix_key(prefix: &[usize]) -> String {
    let mut s = String::new();
    for (i, z) in prefix.iter().enumerate() {
        if i > 0 {
            s.push('.');
        }
        let _ = write!(s, "{z}");
    }
    s
}

/// One value per observation prefix, levels `0..num_levels()`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess<V> {
    alphabet: usize,
    levels: Vec<Vec<V>>,
}

impl<V> AdaptedProcess<V> {
    /// Fills levels `0..num_levels` by calling `f(t, prefix)`.
    pub fn build(alphabet: usize, num_levels: usize, mut f: impl FnMut(usize, &[usize]) -> V) -> Self {
        let levels = (0..num_levels)
            .map(|t| {
                let mut level = Vec::new();
                for_each_path(alphabet, t, |p| level.push(f(t, p)));
                level
            })
            .collect();
        AdaptedProcess { alphabet, levels }
    }

    /// Checks that level `t` has exactly `alphabet^t` entries.
    pub fn from_levels(alphabet: usize, levels: Vec<Vec<V>>) -> Result<Self> {
        for (t, level) in levels.iter().enumerate() {
            let expected = path_count(alphabet, t).ok_or_else(|| {
                Error::Config(alloc::format!("prefix tree level {t} is too large"))
            })?;
            if level.len() != expected {
                return Err(Error::Incomplete {
                    what: "adapted process level",
                    expected,
                    found: level.len(),
                });
            }
        }
        Ok(AdaptedProcess { alphabet, levels })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, t: usize) -> &[V] {
        &self.levels[t]
    }

    pub fn level_mut(&mut self, t: usize) -> &mut [V] {
        &mut self.levels[t]
    }

    pub fn levels(&self) -> &[Vec<V>] {
        &self.levels
    }

    pub fn at(&self, t: usize, idx: usize) -> &V {
        &self.levels[t][idx]
    }

    /// Value at prefix `z_1..z_t`, `t = prefix.len()`.
    pub fn get(&self, prefix: &[usize]) -> Option<&V> {
        if prefix.iter().any(|&z| z >= self.alphabet) {
            return None;
        }
        self.levels
            .get(prefix.len())
            .and_then(|l| l.get(path_index(self.alphabet, prefix)))
    }

    pub fn child(&self, idx: usize, z: usize) -> usize {
        idx * self.alphabet + z
    }

    pub fn map<W>(&self, mut f: impl FnMut(usize, usize, &V) -> W) -> AdaptedProcess<W> {
        AdaptedProcess {
            alphabet: self.alphabet,
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(t, l)| l.iter().enumerate().map(|(i, v)| f(t, i, v)).collect())
                .collect(),
        }
    }

    /// Iterates `(t, index, prefix, value)` over all nodes.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, Vec<usize>, &V)> + '_ {
        self.levels.iter().enumerate().flat_map(move |(t, l)| {
            l.iter()
                .enumerate()
                .map(move |(i, v)| (t, i, path_of_index(self.alphabet, t, i), v))
        })
    }
}

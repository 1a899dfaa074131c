//! Canonical output classes and group-restricted input classes.
//!
//! Output vectors are canonicalised by constant addition (first component
//! becomes 0) and then by sorting the remaining `L - 1` components. The classes
//! are exactly the multisets of size `L - 1` over the alphabet, so there are
//! `C(K + L - 2, L - 1)` of them and each is generated directly as a
//! nondecreasing sequence, in lexicographic order.
//!
//! Input classes for a fixed output `z` allow permutations only among the
//! positions where `z` takes the same value.

use std::io::Write;

use crate::error::{Error, Result};

/// `C(n, k)` with overflow detection.
pub fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return Err(Error::Overflow(format!("C({n}, {k})")));
        }
    }
    Ok(acc as u64)
}

/// `(sum r_i)! / prod r_i!`, the number of distinct arrangements of a multiset.
pub fn multinomial(counts: &[usize]) -> Result<u64> {
    let mut total = 0u64;
    let mut acc = 1u64;
    for &c in counts {
        total += c as u64;
        acc = acc
            .checked_mul(binomial(total, c as u64)?)
            .ok_or_else(|| Error::Overflow(format!("multinomial of {counts:?}")))?;
    }
    Ok(acc)
}

/// Step `v` to the next nondecreasing sequence over `0..alphabet` in
/// lexicographic order. Returns `false` (leaving `v` untouched) at the last one.
pub fn next_nondecreasing(v: &mut [usize], alphabet: usize) -> bool {
    let Some(pos) = v.iter().rposition(|&s| s + 1 < alphabet) else {
        return false;
    };
    let next = v[pos] + 1;
    for s in &mut v[pos..] {
        *s = next;
    }
    true
}

/// Multiplicity of a sorted sequence: number of its distinct permutations.
pub fn sorted_multiplicity(sorted: &[usize]) -> Result<u64> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        runs.push(j - i);
        i = j;
    }
    multinomial(&runs)
}

/// All nondecreasing sequences of length `len` over `0..alphabet`, lexicographically.
#[derive(Debug, Clone)]
pub struct NondecreasingSeqs {
    alphabet: usize,
    current: Option<Vec<usize>>,
}

impl NondecreasingSeqs {
    pub fn new(alphabet: usize, len: usize) -> Self {
        let current = if alphabet == 0 && len > 0 {
            None
        } else {
            Some(vec![0; len])
        };
        NondecreasingSeqs { alphabet, current }
    }
}

impl Iterator for NondecreasingSeqs {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let mut succ = out.clone();
        if next_nondecreasing(&mut succ, self.alphabet) {
            self.current = Some(succ);
        }
        Some(out)
    }
}

/// An output vector with first component 0 and the rest sorted, with the
/// number of distinct vectors it stands for once the first component is fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalOutputClass {
    pub representative: Vec<usize>,
    /// Occurrences of each symbol among positions `1..L`.
    pub counts: Vec<usize>,
    /// `(L - 1)! / prod_i counts[i]!`.
    pub multiplicity: u64,
}

/// Lazy iterator over the classes of [`enumerate_sz2`].
#[derive(Debug, Clone)]
pub struct OutputClasses {
    alphabet: usize,
    tails: NondecreasingSeqs,
}

impl Iterator for OutputClasses {
    type Item = CanonicalOutputClass;

    fn next(&mut self) -> Option<CanonicalOutputClass> {
        let tail = self.tails.next()?;
        let mut counts = vec![0; self.alphabet];
        for &s in &tail {
            counts[s] += 1;
        }
        // bounded by (L - 1)!, which enumerate_sz2 checked up front
        let multiplicity = multinomial(&counts).expect("multiplicity checked at construction");
        let mut representative = Vec::with_capacity(tail.len() + 1);
        representative.push(0);
        representative.extend(tail);
        Some(CanonicalOutputClass {
            representative,
            counts,
            multiplicity,
        })
    }
}

/// Number of canonical output classes, `C(alphabet + L - 2, L - 1)`.
pub fn sz2_cardinality(alphabet_size: usize, l: usize) -> Result<u64> {
    if alphabet_size == 0 || l == 0 {
        return Err(Error::InvalidInput("alphabet size and block length must be positive".into()));
    }
    binomial((alphabet_size + l - 2) as u64, (l - 1) as u64)
}

/// The set `S_Z2` over `0..alphabet_size` for block length `l`, lexicographic
/// in the representative.
pub fn enumerate_sz2(alphabet_size: usize, l: usize) -> Result<OutputClasses> {
    sz2_cardinality(alphabet_size, l)?;
    let mut factorial = 1u64;
    for i in 2..l as u64 {
        factorial = factorial
            .checked_mul(i)
            .ok_or_else(|| Error::Overflow(format!("({} - 1)!", l)))?;
    }
    Ok(OutputClasses {
        alphabet: alphabet_size,
        tails: NondecreasingSeqs::new(alphabet_size, l - 1),
    })
}

/// Canonical classes of output vectors over the reduced alphabet `0..a`.
pub fn enumerate_ztilde(a: usize, l: usize) -> Result<OutputClasses> {
    enumerate_sz2(a, l)
}

/// Map an output vector to its class representative (subtract `z[0]` modulo
/// `alphabet`, then sort the tail).
pub fn canonicalize_output(z: &[usize], alphabet: usize) -> Vec<usize> {
    let Some(&first) = z.first() else {
        return Vec::new();
    };
    let mut out: Vec<usize> = z.iter().map(|&v| (v + alphabet - first) % alphabet).collect();
    out[1..].sort_unstable();
    out
}

/// An input vector standing for all vectors reachable by permuting positions
/// that share the same output value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputClass {
    pub representative: Vec<usize>,
    /// `q(x) = prod_i n_i! / prod_j r_{i,j}!`.
    pub weight: u64,
    /// Size `n_i` of each group, in increasing order of the shared output value.
    pub group_sizes: Vec<usize>,
    /// `r_{i,j}`: occurrences of input symbol `j` within group `i`.
    pub group_counts: Vec<Vec<usize>>,
}

/// Lazy iterator over the classes of [`enumerate_sx`].
#[derive(Debug, Clone)]
pub struct InputClasses {
    m: usize,
    l: usize,
    positions: Vec<Vec<usize>>,
    state: Option<Vec<Vec<usize>>>,
}

impl InputClasses {
    fn advance(&mut self) {
        let Some(state) = self.state.as_mut() else {
            return;
        };
        for g in (0..state.len()).rev() {
            if next_nondecreasing(&mut state[g], self.m) {
                for later in &mut state[g + 1..] {
                    later.iter_mut().for_each(|s| *s = 0);
                }
                return;
            }
        }
        self.state = None;
    }
}

impl Iterator for InputClasses {
    type Item = InputClass;

    fn next(&mut self) -> Option<InputClass> {
        let state = self.state.as_ref()?;
        let mut representative = vec![0; self.l];
        let mut group_counts = Vec::with_capacity(state.len());
        let mut weight = 1u64;
        for (multiset, places) in state.iter().zip(&self.positions) {
            let mut counts = vec![0; self.m];
            for (&sym, &pos) in multiset.iter().zip(places) {
                representative[pos] = sym;
                counts[sym] += 1;
            }
            // each factor divides n_i! <= L!, and the product divides M^L
            weight *= multinomial(&counts).expect("weight bounded by M^L");
            group_counts.push(counts);
        }
        let out = InputClass {
            representative,
            weight,
            group_sizes: self.positions.iter().map(Vec::len).collect(),
            group_counts,
        };
        self.advance();
        Some(out)
    }
}

/// Group the positions of `z` by value (ascending).
fn groups_of(z: &[usize]) -> Vec<Vec<usize>> {
    let mut values: Vec<usize> = z.to_vec();
    values.sort_unstable();
    values.dedup();
    values
        .iter()
        .map(|&v| (0..z.len()).filter(|&p| z[p] == v).collect())
        .collect()
}

/// Number of input classes for `z`, `prod_i C(M + n_i - 1, n_i)`.
pub fn sx_cardinality(z: &[usize], m: usize) -> Result<u64> {
    groups_of(z).iter().try_fold(1u64, |acc, g| {
        let n = g.len() as u64;
        acc.checked_mul(binomial(m as u64 + n - 1, n)?)
            .ok_or_else(|| Error::Overflow("input class count".into()))
    })
}

/// The set `S_X` for output `z` and constellation size `m`.
pub fn enumerate_sx(z: &[usize], m: usize) -> Result<InputClasses> {
    if m == 0 || z.is_empty() {
        return Err(Error::InvalidInput("need M >= 1 and a nonempty output vector".into()));
    }
    // weights are bounded by M^L, which must fit
    (m as u64)
        .checked_pow(z.len() as u32)
        .ok_or_else(|| Error::Overflow(format!("{m}^{}", z.len())))?;
    let positions = groups_of(z);
    let state = positions.iter().map(|g| vec![0; g.len()]).collect();
    Ok(InputClasses {
        m,
        l: z.len(),
        positions,
        state: Some(state),
    })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// CSV with columns `representative,multiplicity`; the representative is
/// written space-separated.
pub fn write_output_classes_csv<W: Write, I: IntoIterator<Item = CanonicalOutputClass>>(
    classes: I,
    mut out: W,
) -> Result<()> {
    writeln!(out, "representative,multiplicity")?;
    for c in classes {
        writeln!(out, "{},{}", join(&c.representative), c.multiplicity)?;
    }
    Ok(())
}

/// CSV with columns `representative,weight`.
pub fn write_input_classes_csv<W: Write, I: IntoIterator<Item = InputClass>>(
    classes: I,
    mut out: W,
) -> Result<()> {
    writeln!(out, "representative,weight")?;
    for c in classes {
        writeln!(out, "{},{}", join(&c.representative), c.weight)?;
    }
    Ok(())
}

/// All `alphabet^len` vectors in lexicographic order (for brute-force checks).
pub fn all_vectors(alphabet: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = alphabet.pow(len as u32);
    (0..total).map(move |mut code| {
        let mut v = vec![0; len];
        for slot in v.iter_mut().rev() {
            *slot = code % alphabet;
            code /= alphabet;
        }
        v
    })
}

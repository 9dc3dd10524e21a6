//! Bipartition entropies, Schmidt ranks and the summed entanglement measure.
//!
//! For a pure state the reduced density operator of a part `P` has the same
//! nonzero spectrum as `M M^†`, where `M` is the coefficient matrix with rows
//! indexed by the OAM tuples observed on `P` and columns by those on the
//! complement. The smaller of `M M^†` and `M^† M` is diagonalized.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::optics::QuantumState;

/// Eigenvalues below this fraction of the largest one count as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Jacobi sweeps stop once the off-diagonal Frobenius norm drops below this.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

const NORMALIZATION_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// The seven inequivalent bipartitions of photons a, b, c, d as bit masks
/// (bit 0 = a), in the order a|bcd, b|acd, c|abd, d|abc, ab|cd, ac|bd, ad|bc.
pub const BIPARTITIONS: [u8; 7] = [0b0001, 0b0010, 0b0100, 0b1000, 0b0011, 0b0101, 0b1001];

pub const BIPARTITION_LABELS: [&str; 7] = [
    "a|bcd", "b|acd", "c|abd", "d|abc", "ab|cd", "ac|bd", "ad|bc",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EntanglementError {
    #[error("state is not normalized (sum of |amplitude|^2 = {0})")]
    NotNormalized(f64),
    #[error("party mask {mask:#b} is not a proper subset of {parties} parties")]
    InvalidPart { mask: u8, parties: usize },
    #[error("ket has {found} parties, expected {expected}")]
    RaggedKets { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementSummary {
    /// Von Neumann entropies (natural log), bipartition order as [`BIPARTITIONS`].
    pub entropies: [f64; 7],
    /// Schmidt rank vector, same order.
    pub ranks: [u32; 7],
    /// Sum of the seven entropies.
    pub total: f64,
}

impl EntanglementSummary {
    pub fn unentangled() -> Self {
        EntanglementSummary {
            entropies: [0.0; 7],
            ranks: [1; 7],
            total: 0.0,
        }
    }

    pub fn is_entangled(&self) -> bool {
        self.total > crate::ENTANGLED_THRESHOLD
    }
}

/// Eigenvalues of a Hermitian matrix (row-major, `n x n`) by cyclic complex
/// Jacobi rotations, sorted descending.
pub fn hermitian_eigenvalues(mut a: Vec<Complex64>, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n, "matrix storage does not match n x n");
    let idx = |i: usize, j: usize| i * n + j;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[idx(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off < JACOBI_TOLERANCE {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                let r = apq.norm();
                if r < f64::MIN_POSITIVE {
                    continue;
                }
                // Phase the (p, q) entry to be real, then a real rotation.
                let phase = apq / r; // e^{i phi}
                let app = a[idx(p, p)].re;
                let aqq = a[idx(q, q)].re;
                let theta = (aqq - app) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // U restricted to (p, q): [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
                let upp = Complex64::new(c, 0.0);
                let upq = Complex64::new(s, 0.0);
                let uqp = -phase.conj() * s;
                let uqq = phase.conj() * c;
                // A <- A U
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = akp * upp + akq * uqp;
                    a[idx(k, q)] = akp * upq + akq * uqq;
                }
                // A <- U^† A
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = upp.conj() * apk + uqp.conj() * aqk;
                    a[idx(q, k)] = upq.conj() * apk + uqq.conj() * aqk;
                }
                a[idx(p, q)] = Complex64::new(0.0, 0.0);
                a[idx(q, p)] = Complex64::new(0.0, 0.0);
                a[idx(p, p)].im = 0.0;
                a[idx(q, q)].im = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[idx(i, i)].re).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Reduced spectrum of the parties selected by `part_mask` for a pure state
/// given as `(oam tuple, amplitude)` terms over `parties` parties.
pub fn tuple_spectrum(
    terms: &[(Vec<i32>, Complex64)],
    parties: usize,
    part_mask: u8,
) -> Result<Vec<f64>, EntanglementError> {
    let full = (1u16 << parties) - 1;
    if part_mask == 0 || u16::from(part_mask) >= full || u16::from(part_mask) & !full != 0 {
        return Err(EntanglementError::InvalidPart {
            mask: part_mask,
            parties,
        });
    }
    let norm: f64 = terms.iter().map(|(_, a)| a.norm_sqr()).sum();
    if (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(EntanglementError::NotNormalized(norm));
    }
    let mut rows: BTreeMap<Vec<i32>, usize> = BTreeMap::new();
    let mut cols: BTreeMap<Vec<i32>, usize> = BTreeMap::new();
    let mut entries = Vec::with_capacity(terms.len());
    for (tuple, amp) in terms {
        if tuple.len() != parties {
            return Err(EntanglementError::RaggedKets {
                expected: parties,
                found: tuple.len(),
            });
        }
        let (inside, outside): (Vec<_>, Vec<_>) = tuple
            .iter()
            .enumerate()
            .partition(|(i, _)| part_mask & (1 << i) != 0);
        let key_in: Vec<i32> = inside.into_iter().map(|(_, v)| *v).collect();
        let key_out: Vec<i32> = outside.into_iter().map(|(_, v)| *v).collect();
        let n_rows = rows.len();
        let r = *rows.entry(key_in).or_insert(n_rows);
        let n_cols = cols.len();
        let c = *cols.entry(key_out).or_insert(n_cols);
        entries.push((r, c, *amp));
    }
    let (nr, nc) = (rows.len(), cols.len());
    let mut m = vec![Complex64::new(0.0, 0.0); nr * nc];
    for (r, c, a) in entries {
        m[r * nc + c] += a;
    }
    let gram = if nr <= nc {
        gram_rows(&m, nr, nc)
    } else {
        gram_cols(&m, nr, nc)
    };
    let n = nr.min(nc);
    Ok(hermitian_eigenvalues(gram, n))
}

// M M^†
fn gram_rows(m: &[Complex64], nr: usize, nc: usize) -> Vec<Complex64> {
    let mut g = vec![Complex64::new(0.0, 0.0); nr * nr];
    for i in 0..nr {
        for j in i..nr {
            let v: Complex64 = (0..nc).map(|c| m[i * nc + c] * m[j * nc + c].conj()).sum();
            g[i * nr + j] = v;
            g[j * nr + i] = v.conj();
        }
    }
    g
}

// M^† M
fn gram_cols(m: &[Complex64], nr: usize, nc: usize) -> Vec<Complex64> {
    let mut g = vec![Complex64::new(0.0, 0.0); nc * nc];
    for i in 0..nc {
        for j in i..nc {
            let v: Complex64 = (0..nr).map(|r| m[r * nc + i].conj() * m[r * nc + j]).sum();
            g[i * nc + j] = v;
            g[j * nc + i] = v.conj();
        }
    }
    g
}

fn detector_tuples(state: &QuantumState) -> Vec<(Vec<i32>, Complex64)> {
    state
        .detector_terms()
        .into_iter()
        .map(|(o, a)| (o.to_vec(), a))
        .collect()
}

/// Eigenvalues of the reduced density operator of `part_mask` (bit 0 = a).
pub fn bipartition_spectrum(
    state: &QuantumState,
    part_mask: u8,
) -> Result<Vec<f64>, EntanglementError> {
    tuple_spectrum(&detector_tuples(state), 4, part_mask)
}

fn significant(eigs: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let largest = eigs.iter().copied().fold(0.0, f64::max);
    let cut = RANK_TOLERANCE * largest;
    eigs.iter().copied().filter(move |&p| p > cut)
}

/// Von Neumann entropy `-sum p ln p` of a spectrum.
pub fn entropy(eigs: &[f64]) -> f64 {
    let s: f64 = significant(eigs).map(|p| -p * p.ln()).sum();
    s.max(0.0)
}

/// Number of eigenvalues above [`RANK_TOLERANCE`] relative to the largest.
pub fn schmidt_rank(eigs: &[f64]) -> u32 {
    significant(eigs).count().max(1) as u32
}

/// All seven bipartitions of a post-selected state.
pub fn summarize(state: &QuantumState) -> Result<EntanglementSummary, EntanglementError> {
    if state.len() <= 1 {
        return Ok(EntanglementSummary::unentangled());
    }
    summarize_terms(&detector_tuples(state))
}

/// All seven bipartitions of a normalized four-party state given as
/// `(oam quadruple, amplitude)` terms.
pub fn summarize_terms(
    terms: &[(Vec<i32>, Complex64)],
) -> Result<EntanglementSummary, EntanglementError> {
    if terms.len() <= 1 {
        return Ok(EntanglementSummary::unentangled());
    }
    let mut out = EntanglementSummary::unentangled();
    for (k, &mask) in BIPARTITIONS.iter().enumerate() {
        let eigs = tuple_spectrum(terms, 4, mask)?;
        out.entropies[k] = entropy(&eigs);
        out.ranks[k] = schmidt_rank(&eigs);
    }
    out.total = out.entropies.iter().sum();
    Ok(out)
}

//! Dense partial-trace reference for bipartition spectra.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

/// Eigenvalues of the reduced density matrix of the parties in `mask`,
/// computed by embedding the state in the full product basis and tracing out
/// the complement densely.
pub fn dense_spectrum(terms: &[([i32; 4], Complex64)], mask: u8) -> Vec<f64> {
    let mut values: [Vec<i32>; 4] = Default::default();
    for (o, _) in terms {
        for k in 0..4 {
            if !values[k].contains(&o[k]) {
                values[k].push(o[k]);
            }
        }
    }
    let dims: Vec<usize> = values.iter().map(Vec::len).collect();
    let kept: Vec<usize> = (0..4).filter(|k| mask & (1 << k) != 0).collect();
    let traced: Vec<usize> = (0..4).filter(|k| mask & (1 << k) == 0).collect();
    let size = |parts: &[usize]| parts.iter().map(|&k| dims[k]).product::<usize>();
    let index = |o: &[i32; 4], parts: &[usize]| {
        parts.iter().fold(0, |acc, &k| {
            acc * dims[k] + values[k].iter().position(|&v| v == o[k]).unwrap()
        })
    };
    let (na, nb) = (size(&kept), size(&traced));
    let mut psi = DMatrix::<Complex64>::zeros(na, nb);
    for (o, a) in terms {
        psi[(index(o, &kept), index(o, &traced))] += *a;
    }
    let rho = &psi * psi.adjoint();
    let mut eig: Vec<f64> = SymmetricEigen::new(rho).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

pub fn von_neumann(eigs: &[f64]) -> f64 {
    eigs.iter()
        .filter(|&&p| p > 1e-15)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Best fidelity against any four-photon GHZ state `(|x> + e^{i phi}|y>)/sqrt 2`
/// whose two kets differ on every photon. The optimal phase turns the
/// overlap into `(|a_x| + |a_y|)^2 / 2`.
pub fn best_ghz_fidelity(terms: &[([i32; 4], Complex64)]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, (x, ax)) in terms.iter().enumerate() {
        for (y, ay) in &terms[i + 1..] {
            if (0..4).all(|k| x[k] != y[k]) {
                best = best.max((ax.norm() + ay.norm()).powi(2) / 2.0);
            }
        }
    }
    best
}
